#include "echoface/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace echoface::metrics {

namespace {

void check_mesh_pair(const Mat& pred, const Mat& gt) {
  check_arg(pred.rows() == gt.rows(), "metrics: sequence length mismatch");
  check_arg(pred.cols() == gt.cols() && pred.cols() % 3 == 0,
            "metrics: flattened mesh width mismatch");
}

// Population standard deviation of a column vector.
double pop_std(const Vec& x) {
  double mean = x.mean();
  return std::sqrt((x.array() - mean).square().mean());
}

// Distance between two vertices of one flattened frame row.
double vertex_gap(const Mat& mesh, Eigen::Index t, int va, int vb) {
  double dx = mesh(t, 3 * va) - mesh(t, 3 * vb);
  double dy = mesh(t, 3 * va + 1) - mesh(t, 3 * vb + 1);
  double dz = mesh(t, 3 * va + 2) - mesh(t, 3 * vb + 2);
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double vertex_distance(const Mat& a, const Mat& b, Eigen::Index t, int v) {
  double dx = a(t, 3 * v) - b(t, 3 * v);
  double dy = a(t, 3 * v + 1) - b(t, 3 * v + 1);
  double dz = a(t, 3 * v + 2) - b(t, 3 * v + 2);
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

double lve(const Mat& pred, const Mat& gt, const std::vector<int>& lip_idx) {
  check_mesh_pair(pred, gt);
  check_arg(pred.rows() >= 1, "lve: empty sequence");
  check_arg(!lip_idx.empty(), "lve: empty vertex set");
  const int n_v = static_cast<int>(pred.cols() / 3);
  double sum = 0.0;
  for (Eigen::Index t = 0; t < pred.rows(); ++t) {
    double worst = 0.0;
    for (int v : lip_idx) {
      check_arg(v >= 0 && v < n_v, "lve: vertex index out of range");
      worst = std::max(worst, vertex_distance(pred, gt, t, v));
    }
    sum += worst;
  }
  return sum / static_cast<double>(pred.rows());
}

double dtw_series(const Vec& a, const Vec& b) {
  check_arg(a.size() >= 1 && b.size() >= 1, "dtw: empty series");
  const Eigen::Index n = a.size(), m = b.size();
  struct Cell {
    double cost;
    long cells;
  };
  auto better = [](const Cell& x, const Cell& y) {
    if (x.cost != y.cost) return x.cost < y.cost ? x : y;
    return x.cells <= y.cells ? x : y;
  };
  std::vector<Cell> prev(static_cast<std::size_t>(m)), cur(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      double local = std::abs(a[i] - b[j]);
      Cell best;
      if (i == 0 && j == 0) {
        best = {0.0, 0};
      } else if (i == 0) {
        best = cur[static_cast<std::size_t>(j - 1)];
      } else if (j == 0) {
        best = prev[static_cast<std::size_t>(j)];
      } else {
        best = better(prev[static_cast<std::size_t>(j - 1)],
                      better(prev[static_cast<std::size_t>(j)],
                             cur[static_cast<std::size_t>(j - 1)]));
      }
      cur[static_cast<std::size_t>(j)] = {best.cost + local, best.cells + 1};
    }
    std::swap(prev, cur);
  }
  const Cell& end = prev[static_cast<std::size_t>(m - 1)];
  return end.cost / static_cast<double>(end.cells);
}

double dtw_lip(const Mat& pred, const Mat& gt, const FaceTemplate& tpl) {
  check_arg(pred.rows() >= 1 && gt.rows() >= 1, "dtw: empty sequence");
  check_arg(pred.cols() == 3 * tpl.n_v() && gt.cols() == 3 * tpl.n_v(),
            "dtw: mesh width does not match the template");
  auto series = [&tpl](const Mat& mesh) {
    Vec s(mesh.rows());
    for (Eigen::Index t = 0; t < mesh.rows(); ++t)
      s[t] = vertex_gap(mesh, t, tpl.upper_lip_mid, tpl.lower_lip_mid);
    return s;
  };
  return dtw_series(series(pred), series(gt));
}

Correlation lip_correlation(const Mat& pred, const Mat& gt,
                            const std::vector<int>& mouth_idx) {
  check_mesh_pair(pred, gt);
  check_arg(pred.rows() >= 2, "lip correlation: need at least two frames");
  check_arg(!mouth_idx.empty(), "lip correlation: empty vertex set");
  const double n = static_cast<double>(pred.rows());
  Correlation acc;
  int used = 0;
  for (int col : flat_coord_indices(mouth_idx)) {
    check_arg(col < pred.cols(), "lip correlation: vertex index out of range");
    Vec x = pred.col(col);
    Vec y = gt.col(col);
    double mx = x.mean(), my = y.mean();
    double vx = (x.array() - mx).square().mean();
    double vy = (y.array() - my).square().mean();
    if (vy < 1e-12) continue;
    double cov = ((x.array() - mx) * (y.array() - my)).sum() / n;
    double pcc = vx < 1e-12 ? 0.0 : cov / std::sqrt(vx * vy);
    double ccc = 2.0 * cov / (vx + vy + (mx - my) * (mx - my));
    acc.pcc += pcc;
    acc.ccc += ccc;
    ++used;
  }
  check_arg(used > 0, "lip correlation: every ground-truth series is degenerate");
  acc.pcc /= used;
  acc.ccc /= used;
  return acc;
}

double fdd(const Mat& pred, const Mat& gt, const std::vector<int>& vertex_idx) {
  check_mesh_pair(pred, gt);
  check_arg(pred.rows() >= 2, "fdd: need at least two frames");
  check_arg(!vertex_idx.empty(), "fdd: empty vertex set");
  const int n_v = static_cast<int>(pred.cols() / 3);
  auto dyn = [](const Mat& mesh, int v) {
    Mat pos = mesh.middleCols(3 * v, 3);
    RowVec center = pos.colwise().mean();
    Vec disp = (pos.rowwise() - center).rowwise().norm();
    return pop_std(disp);
  };
  double sum = 0.0;
  for (int v : vertex_idx) {
    check_arg(v >= 0 && v < n_v, "fdd: vertex index out of range");
    sum += dyn(gt, v) - dyn(pred, v);
  }
  return sum / static_cast<double>(vertex_idx.size());
}

void DistanceTensor::validate() const {
  check_arg(!d.empty(), "distance tensor: no sequences");
  Eigen::Index n_v = -1;
  for (const auto& seq : d) {
    check_arg(!seq.empty(), "distance tensor: sequence with no samples");
    for (const Mat& m : seq) {
      check_arg(m.rows() >= 1 && m.cols() >= 1, "distance tensor: empty sample");
      if (n_v < 0) n_v = m.cols();
      check_arg(m.cols() == n_v, "distance tensor: vertex count mismatch");
      check_arg(m.rows() == seq.front().rows(),
                "distance tensor: ragged samples within one sequence");
      check_arg(m.allFinite() && (m.array() >= 0.0).all(),
                "distance tensor: distances must be finite and nonnegative");
    }
  }
}

Diversity diversity(const DistanceTensor& tensor, const std::vector<int>& upper_idx,
                    const std::vector<int>& mouth_idx) {
  tensor.validate();
  check_arg(!upper_idx.empty() && !mouth_idx.empty(), "diversity: empty vertex set");
  const Eigen::Index n_v = tensor.d.front().front().cols();
  for (int v : upper_idx)
    check_arg(v >= 0 && v < n_v, "diversity: vertex index out of range");
  for (int v : mouth_idx)
    check_arg(v >= 0 && v < n_v, "diversity: vertex index out of range");

  auto region_mean = [](const Mat& m, const std::vector<int>& set) {
    double s = 0.0;
    for (int v : set) s += m.col(v).mean();
    return s / static_cast<double>(set.size());
  };

  Diversity out;
  for (const auto& seq : tensor.d) {
    const auto n_samples = static_cast<Eigen::Index>(seq.size());
    const Eigen::Index t_len = seq.front().rows();
    check_arg(n_samples >= 2, "diversity: need at least two samples");
    check_arg(t_len >= 2, "diversity: need at least two frames");

    // Std over the sample axis at each (frame, vertex); two-pass to keep
    // identical samples at (near) zero instead of cancellation noise.
    Mat mean = Mat::Zero(t_len, n_v);
    for (const Mat& m : seq) mean += m;
    mean /= static_cast<double>(n_samples);
    Mat var = Mat::Zero(t_len, n_v);
    for (const Mat& m : seq) var += (m - mean).array().square().matrix();
    Mat s_std = (var.array() / static_cast<double>(n_samples)).sqrt().matrix();
    out.s_div_u += region_mean(s_std, upper_idx);
    out.s_div_l += region_mean(s_std, mouth_idx);

    // Std over the frame axis at each (sample, vertex).
    Mat t_std(n_samples, n_v);
    for (Eigen::Index s = 0; s < n_samples; ++s) {
      const Mat& m = seq[static_cast<std::size_t>(s)];
      RowVec mean = m.colwise().mean();
      t_std.row(s) =
          ((m.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
    }
    out.t_div_u += region_mean(t_std, upper_idx);
    out.t_div_l += region_mean(t_std, mouth_idx);
  }
  const auto n_seq = static_cast<double>(tensor.d.size());
  out.s_div_u /= n_seq;
  out.s_div_l /= n_seq;
  out.t_div_u /= n_seq;
  out.t_div_l /= n_seq;
  return out;
}

void MetricReport::validate() const {
  for (double v : {lve, dtw, l_pcc, l_ccc, fdd_u, fdd_l, s_div_u, s_div_l, t_div_u,
                   t_div_l})
    check_arg(std::isfinite(v), "metric report: non-finite value");
  check_arg(std::abs(l_pcc) <= 1.0 + 1e-9 && std::abs(l_ccc) <= 1.0 + 1e-9,
            "metric report: correlation out of range");
}

namespace {

const char* kColumns[] = {"lve",   "dtw",     "l_pcc",   "l_ccc",   "fdd_u",
                          "fdd_l", "s_div_u", "s_div_l", "t_div_u", "t_div_l"};

std::vector<double> report_values(const MetricReport& r) {
  return {r.lve,   r.dtw,     r.l_pcc,   r.l_ccc,   r.fdd_u,
          r.fdd_l, r.s_div_u, r.s_div_l, r.t_div_u, r.t_div_l};
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string report_csv(const MetricReport& r) {
  std::string head, row;
  auto vals = report_values(r);
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (i > 0) {
      head += ',';
      row += ',';
    }
    head += kColumns[i];
    row += fmt_double(vals[i]);
  }
  return head + "\n" + row + "\n";
}

std::string report_table(const MetricReport& r) {
  std::string out;
  auto vals = report_values(r);
  for (std::size_t i = 0; i < vals.size(); ++i) {
    char line[64];
    std::snprintf(line, sizeof(line), "%-8s %12.6f\n", kColumns[i], vals[i]);
    out += line;
  }
  return out;
}

SamplerFn diffusion_sampler(const diffusion::DenoiserModel& model) {
  return [&model](const corpus::SequenceRecord& rec, std::uint64_t sample_seed) {
    Mat feats = model.encoder.encode(rec.mel);
    diffusion::SampleConfig sc;
    sc.seed = sample_seed;
    return diffusion::sample(model, feats, model.schedule, sc);
  };
}

MetricReport evaluate_model(const SamplerFn& sampler, const corpus::Corpus& corpus,
                            corpus::Split split, int n_samples, std::uint64_t seed) {
  check_arg(n_samples >= 2, "evaluate: need at least two samples per sequence");
  auto idx = corpus.split_indices(split);
  check_arg(!idx.empty(), "evaluate: empty split");
  const FaceTemplate& tpl = corpus.manifest.face;
  const int n_v = tpl.n_v();

  MetricReport report;
  DistanceTensor tensor;
  tensor.d.resize(idx.size());

  for (std::size_t n = 0; n < idx.size(); ++n) {
    const auto& rec = corpus.records[static_cast<std::size_t>(idx[n])];
    Mat gt_mesh = decode_sequence(tpl, rec.expressions);
    const Eigen::Index t_len = gt_mesh.rows();
    double lve_s = 0.0, dtw_s = 0.0, pcc_s = 0.0, ccc_s = 0.0;
    double fddu_s = 0.0, fddl_s = 0.0;

    for (int s = 0; s < n_samples; ++s) {
      Mat expr;
      try {
        expr = sampler(rec, derive_seed(seed, static_cast<std::uint64_t>(n),
                                        static_cast<std::uint64_t>(s)));
      } catch (const std::exception& e) {
        throw std::runtime_error("evaluate: sampler failed on sequence " +
                                 std::to_string(n) + ": " + e.what());
      }
      check_arg(expr.rows() == t_len && expr.cols() == tpl.param_dim(),
                "evaluate: sampler output shape mismatch on sequence " +
                    std::to_string(n));
      Mat pred_mesh = decode_sequence(tpl, expr);

      lve_s += lve(pred_mesh, gt_mesh, tpl.lip_idx);
      dtw_s += dtw_lip(pred_mesh, gt_mesh, tpl);
      Correlation corr = lip_correlation(pred_mesh, gt_mesh, tpl.mouth_idx);
      pcc_s += corr.pcc;
      ccc_s += corr.ccc;
      fddu_s += fdd(pred_mesh, gt_mesh, tpl.upper_idx);
      fddl_s += fdd(pred_mesh, gt_mesh, tpl.mouth_idx);

      Mat dist(t_len, n_v);
      for (Eigen::Index t = 0; t < t_len; ++t)
        for (int v = 0; v < n_v; ++v) dist(t, v) = vertex_distance(pred_mesh, gt_mesh, t, v);
      tensor.d[n].push_back(std::move(dist));
    }

    const double inv = 1.0 / static_cast<double>(n_samples);
    report.lve += lve_s * inv;
    report.dtw += dtw_s * inv;
    report.l_pcc += pcc_s * inv;
    report.l_ccc += ccc_s * inv;
    report.fdd_u += fddu_s * inv;
    report.fdd_l += fddl_s * inv;
  }

  const double inv_n = 1.0 / static_cast<double>(idx.size());
  report.lve *= inv_n;
  report.dtw *= inv_n;
  report.l_pcc *= inv_n;
  report.l_ccc *= inv_n;
  report.fdd_u *= inv_n;
  report.fdd_l *= inv_n;

  Diversity div = diversity(tensor, tpl.upper_idx, tpl.mouth_idx);
  report.s_div_u = div.s_div_u;
  report.s_div_l = div.s_div_l;
  report.t_div_u = div.t_div_u;
  report.t_div_l = div.t_div_l;
  report.validate();
  return report;
}

}  // namespace echoface::metrics
