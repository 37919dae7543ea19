#pragma once

// Evaluation metrics over predicted vs ground-truth mesh sequences: lip
// vertex error, warped lip-distance error, mouth-region correlations, face
// dynamics deviation, and the S-sample stochastic diversity protocol.
//
// Mesh sequences are T x (3 n_v) row-flattened vertex arrays as produced by
// decode_sequence. All standard deviations are population (divide by n).
// The "-U" metric variants run on the upper-face vertex set, the "-L"
// variants on the mouth set; LVE and the warping series use the lip set.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "echoface/common.hpp"
#include "echoface/corpus.hpp"
#include "echoface/diffusion.hpp"
#include "echoface/face_model.hpp"

namespace echoface::metrics {

// Mean over frames of the maximum per-vertex L2 distance within lip_idx.
double lve(const Mat& pred, const Mat& gt, const std::vector<int>& lip_idx);

// Classic DTW between two scalar series with local cost |a_i - b_j| and unit
// steps (1,0), (0,1), (1,1); returns accumulated cost divided by the warping
// path length. Among equal-cost paths the shortest one is used, so the
// normalized value is well-defined.
double dtw_series(const Vec& a, const Vec& b);

// DTW between the upper-mid/lower-mid lip-distance series of two sequences.
// Lengths may differ; the warp absorbs the mismatch.
double dtw_lip(const Mat& pred, const Mat& gt, const FaceTemplate& tpl);

struct Correlation {
  double pcc = 0.0;
  double ccc = 0.0;
};

// Per-coordinate Pearson and concordance correlations over the mouth-region
// time series, averaged. Coordinates whose ground-truth variance is below
// 1e-12 are excluded; a constant predicted series contributes zero to both
// (no linear association). Throws when every coordinate is excluded.
Correlation lip_correlation(const Mat& pred, const Mat& gt,
                            const std::vector<int>& mouth_idx);

// Mean over the vertex set of dyn(gt) - dyn(pred), where dyn is the temporal
// standard deviation of the vertex's displacement magnitude from its own
// temporal mean. Positive when the ground truth moves more.
double fdd(const Mat& pred, const Mat& gt, const std::vector<int>& vertex_idx);

// Per-vertex L2 distances between prediction and ground truth:
// d[n][s] holds a T_n x n_v matrix for sample s of test sequence n.
struct DistanceTensor {
  std::vector<std::vector<Mat>> d;

  void validate() const;
};

struct Diversity {
  double s_div_u = 0.0;
  double s_div_l = 0.0;
  double t_div_u = 0.0;
  double t_div_l = 0.0;
};

// S-DIV: std over the sample axis, then mean over frames and the vertex set;
// T-DIV: std over the frame axis, then mean over samples and the vertex set.
// Both are averaged per sequence first, then unweighted over sequences.
Diversity diversity(const DistanceTensor& tensor, const std::vector<int>& upper_idx,
                    const std::vector<int>& mouth_idx);

struct MetricReport {
  double lve = 0.0;
  double dtw = 0.0;
  double l_pcc = 0.0;
  double l_ccc = 0.0;
  double fdd_u = 0.0;
  double fdd_l = 0.0;
  double s_div_u = 0.0;
  double s_div_l = 0.0;
  double t_div_u = 0.0;
  double t_div_l = 0.0;

  void validate() const;
};

// Header line plus one value row, columns in MetricReport field order.
std::string report_csv(const MetricReport& r);
// Aligned two-column listing for logs.
std::string report_table(const MetricReport& r);

// Produces a T x (psi_dim + 3) expression sequence for a test record from a
// per-sample seed.
using SamplerFn =
    std::function<Mat(const corpus::SequenceRecord& rec, std::uint64_t sample_seed)>;

// The production sampler: encode the record's mel with the model's audio
// encoder and run the full reverse diffusion loop. The model must outlive
// the returned handle.
SamplerFn diffusion_sampler(const diffusion::DenoiserModel& model);

// The evaluation protocol: for each sequence of the split draw n_samples
// outputs with seeds derived from (seed, sequence position, sample index),
// decode, and aggregate all metrics (per-sequence sample means, then
// unweighted sequence means; diversity from the assembled distance tensor).
// Sampler failures are rethrown with the offending sequence identified.
MetricReport evaluate_model(const SamplerFn& sampler, const corpus::Corpus& corpus,
                            corpus::Split split, int n_samples = 32,
                            std::uint64_t seed = 1);

}  // namespace echoface::metrics
