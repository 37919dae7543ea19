#pragma once

// Mesh-to-speech regressor: a conformer over 25 Hz facial-animation input
// that predicts 50 Hz log-mel frames and speech-unit logits. Fully
// differentiable with respect to its input so it can serve as a frozen
// audio cycle-consistency critic and drive analysis-by-audio-synthesis.

#include <string>
#include <vector>

#include "echoface/ad.hpp"
#include "echoface/common.hpp"
#include "echoface/corpus.hpp"
#include "echoface/face_model.hpp"

namespace echoface::m2s {

enum class InputSpace { kMouth, kFace, kExp };

const char* input_space_name(InputSpace s);
InputSpace input_space_from_name(const std::string& name);

struct M2SConfig {
  InputSpace input_space = InputSpace::kMouth;
  int hidden = 96;
  int n_blocks = 2;
  int n_heads = 4;
  int conv_kernel = 5;
  int n_units = 8;

  void validate() const;
};

// Model input width for a given face: flattened mouth-vertex coordinates,
// the full flattened mesh, or raw expression parameters.
int input_dim_for(const M2SConfig& config, const FaceTemplate& tpl);

// Expression rows -> model input rows (frame-wise, so row-slicing commutes).
Mat input_from_expressions(const M2SConfig& config, const FaceTemplate& tpl,
                           const Mat& expressions);
ad::Var input_from_expressions_var(ad::Tape& tape, const M2SConfig& config,
                                   const FaceTemplate& tpl, ad::Var expressions);

struct M2SOutput {
  Mat mel_hat;      // 2T x 80
  Mat unit_logits;  // 2T x n_units
};

struct VarOutput {
  ad::Var mel;
  ad::Var logits;
};

struct M2SModel {
  M2SConfig config;
  int input_dim = 0;

  Mat in_w1, in_b1, in_w2, in_b2;  // two-layer input MLP
  Mat spk_w, spk_b;                // speaker-embedding fusion projection
  struct Block {
    Mat ln1_g, ln1_b;          // pre-norm for self-attention
    Mat wq, wk, wv, wo, wo_b;  // attention projections
    Mat ln2_g, ln2_b;          // pre-norm for the conv module
    Mat dw_k;                  // depthwise temporal kernel, k x hidden
    Mat pw_w, pw_b;            // pointwise projection
  };
  std::vector<Block> blocks;
  Mat up_w, up_b;      // conv after frame duplication (x2 upsampler)
  Mat mel_w, mel_b;    // mel head
  Mat unit_w, unit_b;  // unit-logit head
  // Fixed output affine per mel channel (training-set statistics); not
  // touched by the optimizer.
  RowVec mel_mu, mel_sigma;

  void init(const M2SConfig& config, int input_dim, std::uint64_t seed);
  std::vector<Mat*> params();
  std::vector<const Mat*> params() const;
  std::uint64_t params_hash() const;

  // Differentiable forward. When bound is given it must follow the params()
  // order and is used in place of the stored parameters, so gradients reach
  // the caller's leaves; otherwise parameters enter the tape as fresh leaves.
  VarOutput forward(ad::Tape& tape, ad::Var input, const Vec& spk,
                    const std::vector<ad::Var>* bound = nullptr) const;
  M2SOutput forward(const Mat& input, const Vec& spk) const;
};

struct LossBreakdown {
  double mel_l1 = 0.0;
  double unit_ce = 0.0;
  double total = 0.0;  // 10 * mel_l1 + unit_ce
};

LossBreakdown m2s_loss(const M2SOutput& out, const Mat& mel,
                       const std::vector<int>& units);

// Tape-side combined loss, same weighting.
ad::Var m2s_loss_var(ad::Tape& tape, const VarOutput& out, const Mat& mel,
                     const std::vector<int>& units);

struct M2STrainOptions {
  double lr = 1e-3;
  int batch = 16;
  int max_window = 125;  // 25 fps frames
  int epochs = 30;
  std::uint64_t seed = 1;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct M2STrainResult {
  M2SModel model;  // checkpoint with the lowest validation loss
  std::vector<EpochStats> history;
};

M2STrainResult train_m2s(const corpus::Corpus& corpus, const M2SConfig& config,
                         const M2STrainOptions& opt);

struct M2SReport {
  double mel_l1 = 0.0;
  double unit_accuracy = 0.0;
};

M2SReport eval_m2s(const M2SModel& model, const corpus::Corpus& corpus,
                   corpus::Split split);

struct AbasOptions {
  double lr = 0.05;
  int steps = 500;
  double lambda = 0.1;  // squared frame-to-frame velocity weight
};

// Analysis-by-audio-synthesis: optimize an expression sequence, starting from
// zeros, so the frozen model's output matches the target mel and units.
// Returns the iterate with the lowest objective.
Mat analysis_by_audio_synthesis(const M2SModel& model, const FaceTemplate& tpl,
                                const Mat& target_mel,
                                const std::vector<int>& target_units,
                                int t_frames, const Vec& spk,
                                const AbasOptions& opt = {});

}  // namespace echoface::m2s
