#include <doctest.h>

#include "echoface/face_model.hpp"
#include "grad_check.hpp"

using namespace echoface;

namespace {

// Independent rotation oracle via unit quaternions.
Eigen::Matrix3d quat_rotation(const Eigen::Vector3d& v) {
  double theta = v.norm();
  double w = std::cos(theta / 2.0);
  double sinc_half =
      theta < 1e-8 ? 0.5 - theta * theta / 48.0 : std::sin(theta / 2.0) / theta;
  Eigen::Vector3d im = sinc_half * v;
  double x = im.x(), y = im.y(), z = im.z();
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

FaceTemplate desk_template() { return make_synthetic_template(11, 300, 16); }

}  // namespace

TEST_CASE("axis-angle rotation basics") {
  CHECK((rotation_from_axis_angle(Eigen::Vector3d::Zero()) -
         Eigen::Matrix3d::Identity())
            .norm() == 0.0);

  Eigen::Matrix3d quarter = rotation_from_axis_angle({0, 0, M_PI / 2});
  Eigen::Vector3d rotated = quarter * Eigen::Vector3d(1, 0, 0);
  CHECK((rotated - Eigen::Vector3d(0, 1, 0)).norm() < 1e-12);

  CHECK_THROWS_AS(
      rotation_from_axis_angle({std::numeric_limits<double>::quiet_NaN(), 0, 0}),
      InvalidArgument);
}

TEST_CASE("rotation matches the quaternion oracle, is orthonormal, traces 1+2cos") {
  RandomStream rng(5);
  for (int i = 0; i < 100; ++i) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    double theta = rng.uniform(0.0, 3.1);
    Eigen::Vector3d v = theta * axis;
    Eigen::Matrix3d r = rotation_from_axis_angle(v);
    CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-10);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(std::abs(r.trace() - (1.0 + 2.0 * std::cos(theta))) < 1e-10);
    CHECK((r - quat_rotation(v)).norm() < 1e-10);
  }
  // Series branch near zero.
  for (double theta : {1e-12, 1e-9, 1e-7, 9.9e-7}) {
    Eigen::Vector3d v = theta * Eigen::Vector3d(0.6, -0.48, 0.64).normalized();
    CHECK((rotation_from_axis_angle(v) - quat_rotation(v)).norm() < 1e-14);
  }
}

TEST_CASE("decode identity, linearity and one-hot psi") {
  FaceTemplate tpl = desk_template();
  RowVec zero = RowVec::Zero(tpl.param_dim());
  Mat v0 = decode(tpl, zero);
  CHECK(v0 == tpl.vertices);  // bitwise

  RandomStream rng(6);
  RowVec pa = RowVec::Zero(tpl.param_dim()), pb = RowVec::Zero(tpl.param_dim());
  for (int k = 0; k < tpl.psi_dim(); ++k) {
    pa(k) = rng.normal();
    pb(k) = rng.normal();
  }
  RowVec pab = pa + pb;
  Mat da = decode(tpl, pa) - tpl.vertices;
  Mat db = decode(tpl, pb) - tpl.vertices;
  Mat dab = decode(tpl, pab) - tpl.vertices;
  CHECK((dab - (da + db)).norm() < 1e-12);

  for (int k : {0, 3, 7, 15}) {
    RowVec onehot = RowVec::Zero(tpl.param_dim());
    onehot(k) = 1.0;
    Mat v = decode(tpl, onehot);
    // Matrix-slice oracle: displacement equals the k-th basis column.
    for (int i = 0; i < tpl.n_v(); ++i)
      for (int c = 0; c < 3; ++c)
        CHECK(v(i, c) - tpl.vertices(i, c) ==
              doctest::Approx(tpl.basis(3 * i + c, k)).epsilon(1e-12));
  }

  CHECK_THROWS_AS(decode(tpl, RowVec::Zero(5)), InvalidArgument);
  RowVec big_jaw = RowVec::Zero(tpl.param_dim());
  big_jaw(tpl.psi_dim()) = 3.2;
  CHECK_THROWS_AS(decode(tpl, big_jaw), InvalidArgument);
}

TEST_CASE("decode_sequence equals per-frame decode") {
  FaceTemplate tpl = desk_template();
  RandomStream rng(7);
  Mat seq(5, tpl.param_dim());
  for (int t = 0; t < 5; ++t) {
    for (int k = 0; k < tpl.psi_dim(); ++k) seq(t, k) = 0.5 * rng.normal();
    seq(t, tpl.psi_dim()) = rng.uniform(0.0, 0.3);
    seq(t, tpl.psi_dim() + 1) = 0.05 * rng.normal();
    seq(t, tpl.psi_dim() + 2) = 0.05 * rng.normal();
  }
  Mat mesh = decode_sequence(tpl, seq);
  CHECK(mesh.rows() == 5);
  CHECK(mesh.cols() == 3 * tpl.n_v());
  for (int t = 0; t < 5; ++t) {
    Mat v = decode(tpl, seq.row(t));
    for (int i = 0; i < tpl.n_v(); ++i)
      for (int c = 0; c < 3; ++c) CHECK(mesh(t, 3 * i + c) == v(i, c));
  }

  Mat constant = seq.row(2).replicate(4, 1);
  Mat cm = decode_sequence(tpl, constant);
  for (int t = 1; t < 4; ++t) CHECK((cm.row(t) - cm.row(0)).norm() == 0.0);

  Mat single = decode_sequence(tpl, Mat(seq.row(0)));
  CHECK((single.row(0) - mesh.row(0)).norm() == 0.0);
}

TEST_CASE("synthetic template determinism and structure") {
  FaceTemplate a = make_synthetic_template(42, 300, 16);
  FaceTemplate b = make_synthetic_template(42, 300, 16);
  CHECK(a.vertices == b.vertices);
  CHECK(a.basis == b.basis);
  CHECK(Vec(a.jaw_weights) == Vec(b.jaw_weights));

  FaceTemplate c = make_synthetic_template(43, 300, 16);
  CHECK(a.vertices != c.vertices);

  CHECK(a.mouth_idx.size() == 60);
  CHECK(a.lip_idx.size() == 20);
  CHECK(a.upper_idx.size() == 120);

  for (int i : a.upper_idx) CHECK(a.jaw_weights(i) < 0.05);

  for (int k = 0; k < a.n_mouth_channels; ++k) {
    double mouth_norm = 0.0, upper_norm = 0.0;
    for (int i : a.mouth_idx)
      for (int c = 0; c < 3; ++c) mouth_norm += std::pow(a.basis(3 * i + c, k), 2);
    for (int i : a.upper_idx)
      for (int c = 0; c < 3; ++c) upper_norm += std::pow(a.basis(3 * i + c, k), 2);
    CHECK(std::sqrt(upper_norm) < 0.01 * std::sqrt(mouth_norm));
  }

  CHECK_THROWS_AS(make_synthetic_template(1, 40, 16), InvalidArgument);
  CHECK_THROWS_AS(make_synthetic_template(1, 300, 4), InvalidArgument);
}

TEST_CASE("differentiable decode matches finite differences") {
  FaceTemplate tpl = make_synthetic_template(13, 60, 8);
  RandomStream rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Mat u(2, tpl.param_dim());
    for (int t = 0; t < 2; ++t) {
      for (int k = 0; k < tpl.psi_dim(); ++k) u(t, k) = 0.6 * rng.normal();
      for (int c = 0; c < 3; ++c)
        u(t, tpl.psi_dim() + c) = (trial % 3 == 0) ? 0.0 : 0.2 * rng.normal();
    }
    Mat target = rng.normal_matrix(2, 3 * tpl.n_v());
    double err = eftest::grad_check(
        {u},
        [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
          return ad::mse(decode_sequence_var(tape, tpl, v[0]), target);
        },
        1e-6);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("flat coordinate indices expand vertex indices") {
  auto cols = flat_coord_indices({0, 5});
  CHECK(cols == std::vector<int>({0, 1, 2, 15, 16, 17}));
}
