#include "echoface/face_model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace echoface {

namespace {

struct RodCoeffs {
  double a, b, da_ds, db_ds;
};

// R = I + a K + b K^2 with a = sin t / t, b = (1 - cos t) / t^2 as functions
// of s = t^2, series-expanded below t = 1e-6.
RodCoeffs rodrigues_coeffs(double s) {
  RodCoeffs c{};
  if (s < 1e-12) {
    c.a = 1.0 - s / 6.0 + s * s / 120.0;
    c.b = 0.5 - s / 24.0 + s * s / 720.0;
    c.da_ds = -1.0 / 6.0 + s / 60.0;
    c.db_ds = -1.0 / 24.0 + s / 360.0;
  } else {
    double t = std::sqrt(s);
    c.a = std::sin(t) / t;
    c.b = (1.0 - std::cos(t)) / s;
    c.da_ds = (t * std::cos(t) - std::sin(t)) / (2.0 * t * t * t);
    c.db_ds = (t * std::sin(t) - 2.0 + 2.0 * std::cos(t)) / (2.0 * s * s);
  }
  return c;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d k;
  k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return k;
}

Eigen::Matrix3d rotation_unchecked(const Eigen::Vector3d& jaw) {
  RodCoeffs c = rodrigues_coeffs(jaw.squaredNorm());
  Eigen::Matrix3d k = skew(jaw);
  return Eigen::Matrix3d::Identity() + c.a * k + c.b * (k * k);
}

Eigen::Vector3d rotation_backward(const Eigen::Vector3d& jaw,
                                  const Eigen::Matrix3d& g_r) {
  double s = jaw.squaredNorm();
  RodCoeffs c = rodrigues_coeffs(s);
  Eigen::Matrix3d k = skew(jaw);
  double d_a = (g_r.array() * k.array()).sum();
  double d_b = (g_r.array() * (k * k).array()).sum();
  Eigen::Matrix3d gk =
      c.a * g_r + c.b * (g_r * k.transpose() + k.transpose() * g_r);
  Eigen::Vector3d dv(gk(2, 1) - gk(1, 2), gk(0, 2) - gk(2, 0),
                     gk(1, 0) - gk(0, 1));
  dv += (d_a * c.da_ds + d_b * c.db_ds) * 2.0 * jaw;
  return dv;
}

// P = template + basis * psi as an n_v x 3 matrix.
Mat blend_positions(const FaceTemplate& tpl, const RowVec& psi) {
  Vec disp = tpl.basis * psi.transpose();
  Mat p = tpl.vertices;
  for (int i = 0; i < tpl.n_v(); ++i)
    for (int c = 0; c < 3; ++c) p(i, c) += disp(3 * i + c);
  return p;
}

Mat decode_from_parts(const FaceTemplate& tpl, const Mat& p,
                      const Eigen::Matrix3d& r) {
  Mat q = p.rowwise() - RowVec(tpl.jaw_pivot.transpose());
  Mat d = q * (r.transpose() - Eigen::Matrix3d::Identity());
  return p + (d.array().colwise() * tpl.jaw_weights.array()).matrix();
}

}  // namespace

void FaceTemplate::validate() const {
  check_arg(vertices.rows() >= 1 && vertices.cols() == 3, "template: bad vertex shape");
  check_arg(basis.rows() == 3 * vertices.rows(), "template: basis rows != 3 n_v");
  check_arg(basis.cols() >= 1, "template: empty basis");
  check_arg(jaw_weights.size() == vertices.rows(), "template: jaw weight count");
  check_arg(vertices.allFinite() && basis.allFinite() && jaw_weights.allFinite() &&
                jaw_pivot.allFinite(),
            "template: non-finite entries");
  check_arg((jaw_weights.array() >= 0.0).all() && (jaw_weights.array() <= 1.0).all(),
            "template: jaw weights outside [0,1]");
  check_arg(!mouth_idx.empty() && !lip_idx.empty() && !upper_idx.empty(),
            "template: empty vertex index set");
  std::unordered_set<int> mouth(mouth_idx.begin(), mouth_idx.end());
  for (int i : lip_idx)
    check_arg(mouth.count(i) > 0, "template: lip set must be inside mouth set");
  for (int i : upper_idx)
    check_arg(mouth.count(i) == 0, "template: upper set overlaps mouth set");
  for (int i : mouth_idx)
    check_arg(i >= 0 && i < n_v(), "template: mouth index out of range");
  for (int i : upper_idx)
    check_arg(i >= 0 && i < n_v(), "template: upper index out of range");
  check_arg(upper_lip_mid != lower_lip_mid, "template: identical lip midpoints");
  check_arg(std::count(lip_idx.begin(), lip_idx.end(), upper_lip_mid) == 1 &&
                std::count(lip_idx.begin(), lip_idx.end(), lower_lip_mid) == 1,
            "template: lip midpoints must be lip vertices");
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int c = 0; c < 3; ++c)
      check_arg(faces(f, c) >= 0 && faces(f, c) < n_v(),
                "template: face index out of range");
  check_arg(n_mouth_channels >= 1 && n_upper_channels >= 1 &&
                n_mouth_channels + n_upper_channels <= psi_dim(),
            "template: bad psi channel split");
}

Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& jaw) {
  check_arg(jaw.allFinite(), "rotation: non-finite axis-angle input");
  return rotation_unchecked(jaw);
}

Mat decode(const FaceTemplate& tpl, const RowVec& params) {
  check_arg(params.size() == tpl.param_dim(), "decode: parameter length mismatch");
  check_arg(params.allFinite(), "decode: non-finite parameters");
  Eigen::Vector3d jaw = params.tail<3>().transpose();
  check_arg(jaw.norm() < M_PI, "decode: jaw rotation magnitude must be < pi");
  Mat p = blend_positions(tpl, params.head(tpl.psi_dim()));
  return decode_from_parts(tpl, p, rotation_unchecked(jaw));
}

Mat decode_sequence(const FaceTemplate& tpl, const Mat& seq) {
  check_arg(seq.rows() >= 1, "decode_sequence: empty sequence");
  Mat out(seq.rows(), 3 * tpl.n_v());
  for (Eigen::Index t = 0; t < seq.rows(); ++t) {
    Mat v = decode(tpl, seq.row(t));
    for (int i = 0; i < tpl.n_v(); ++i)
      for (int c = 0; c < 3; ++c) out(t, 3 * i + c) = v(i, c);
  }
  return out;
}

ad::Var decode_sequence_var(ad::Tape& tape, const FaceTemplate& tpl, ad::Var seq) {
  const Mat& u = tape.val(seq);
  check_arg(u.cols() == tpl.param_dim(), "decode: parameter length mismatch");
  const int n_v = tpl.n_v();
  const int psi_dim = tpl.psi_dim();
  const Eigen::Index frames = u.rows();

  Mat out(frames, 3 * n_v);
  for (Eigen::Index t = 0; t < frames; ++t) {
    Eigen::Vector3d jaw = u.row(t).tail<3>().transpose();
    Mat p = blend_positions(tpl, u.row(t).head(psi_dim));
    Mat v = decode_from_parts(tpl, p, rotation_unchecked(jaw));
    for (int i = 0; i < n_v; ++i)
      for (int c = 0; c < 3; ++c) out(t, 3 * i + c) = v(i, c);
  }

  int seq_id = seq.id;
  const FaceTemplate* tp = &tpl;
  return tape.push(std::move(out), [seq_id, tp, n_v, psi_dim](ad::Tape& tpe, int self) {
    const Mat& g_out = tpe.grad_ref(self);
    const Mat& u2 = tpe.val(ad::Var{&tpe, seq_id});
    Mat& g_u = tpe.grad_ref(seq_id);
    for (Eigen::Index t = 0; t < u2.rows(); ++t) {
      Eigen::Vector3d jaw = u2.row(t).tail<3>().transpose();
      Eigen::Matrix3d r = rotation_unchecked(jaw);
      Mat p = blend_positions(*tp, u2.row(t).head(psi_dim));
      Mat q = p.rowwise() - RowVec(tp->jaw_pivot.transpose());

      Mat g(n_v, 3);
      for (int i = 0; i < n_v; ++i)
        for (int c = 0; c < 3; ++c) g(i, c) = g_out(t, 3 * i + c);
      Mat gw = (g.array().colwise() * tp->jaw_weights.array()).matrix();

      // V = P + w o (Q (R^T - I)): position path and rotation path.
      Mat g_p = g + gw * (r - Eigen::Matrix3d::Identity());
      Vec g_p_flat(3 * n_v);
      for (int i = 0; i < n_v; ++i)
        for (int c = 0; c < 3; ++c) g_p_flat(3 * i + c) = g_p(i, c);
      g_u.row(t).head(psi_dim) += (tp->basis.transpose() * g_p_flat).transpose();

      Eigen::Matrix3d g_r = gw.transpose() * q;
      g_u.row(t).tail<3>() += rotation_backward(jaw, g_r).transpose();
    }
  });
}

std::vector<int> flat_coord_indices(const std::vector<int>& vertex_idx) {
  std::vector<int> cols;
  cols.reserve(vertex_idx.size() * 3);
  for (int i : vertex_idx)
    for (int c = 0; c < 3; ++c) cols.push_back(3 * i + c);
  return cols;
}

FaceTemplate make_synthetic_template(std::uint64_t seed, int n_v, int psi_dim) {
  check_arg(n_v >= 50, "template: n_v must be at least 50");
  check_arg(psi_dim >= 8, "template: psi_dim must be at least 8");

  FaceTemplate tpl;
  RandomStream rng(derive_seed(seed, 0xface));

  const int n_mouth = n_v / 5;
  const int n_lip = std::max(2, n_v / 15);
  const int n_upper = 2 * n_v / 5;

  tpl.vertices = Mat(n_v, 3);
  // Lip ring around the mouth center; indices 0 and 1 are the designated
  // upper/lower midpoints.
  tpl.vertices.row(0) << 0.0, -0.38, 0.95;
  tpl.vertices.row(1) << 0.0, -0.52, 0.95;
  for (int i = 2; i < n_lip; ++i) {
    double phi = 2.0 * M_PI * (i - 1) / n_lip;
    tpl.vertices.row(i) << 0.20 * std::cos(phi), -0.45 + 0.07 * std::sin(phi),
        0.92 + 0.02 * rng.uniform();
  }
  for (int i = n_lip; i < n_mouth; ++i)
    tpl.vertices.row(i) << 0.12 * rng.normal(), -0.45 + 0.08 * rng.normal(),
        0.85 + 0.05 * rng.normal();
  for (int i = n_mouth; i < n_mouth + n_upper; ++i)
    tpl.vertices.row(i) << 0.4 * rng.normal(), rng.uniform(0.15, 0.85),
        rng.uniform(0.2, 0.95);
  for (int i = n_mouth + n_upper; i < n_v; ++i)
    tpl.vertices.row(i) << 0.5 * rng.normal(), rng.uniform(-0.95, 0.10),
        rng.uniform(-0.9, 0.9);

  for (int i = 0; i < n_lip; ++i) tpl.lip_idx.push_back(i);
  for (int i = 0; i < n_mouth; ++i) tpl.mouth_idx.push_back(i);
  for (int i = n_mouth; i < n_mouth + n_upper; ++i) tpl.upper_idx.push_back(i);
  tpl.upper_lip_mid = 0;
  tpl.lower_lip_mid = 1;

  tpl.jaw_pivot = Eigen::Vector3d(0.0, -0.15, 0.1);
  tpl.jaw_weights = Vec(n_v);
  for (int i = 0; i < n_v; ++i) {
    double y = tpl.vertices(i, 1);
    tpl.jaw_weights(i) = 1.0 / (1.0 + std::exp(-((-y) - 0.30) / 0.12));
  }

  tpl.faces.resize(n_v, 3);
  for (int i = 0; i < n_v; ++i) {
    tpl.faces(i, 0) = i;
    tpl.faces(i, 1) = (i + 1) % n_v;
    tpl.faces(i, 2) = (i + 17) % n_v;
  }

  tpl.n_mouth_channels = 4;
  tpl.n_upper_channels = std::min(6, psi_dim - tpl.n_mouth_channels);

  tpl.basis = Mat::Zero(3 * n_v, psi_dim);
  auto fill_column = [&](int k, int lo, int hi) {
    for (int i = lo; i < hi; ++i)
      for (int c = 0; c < 3; ++c) tpl.basis(3 * i + c, k) = rng.normal();
    tpl.basis.col(k) /= tpl.basis.col(k).norm();
  };
  for (int k = 0; k < psi_dim; ++k) {
    if (k < tpl.n_mouth_channels)
      fill_column(k, 0, n_mouth);
    else if (k < tpl.n_mouth_channels + tpl.n_upper_channels)
      fill_column(k, n_mouth, n_mouth + n_upper);
    else
      fill_column(k, n_mouth + n_upper, n_v);
  }

  tpl.validate();
  return tpl;
}

}  // namespace echoface
