#pragma once

// Diffusion over expression-parameter sequences conditioned on 25 Hz audio
// features. A transformer decoder predicts the clean sequence directly from
// its noisy version; training combines reconstruction, velocity, and the
// frozen mesh-to-speech cycle loss, with classifier-free-guidance dropout to
// a learnable null condition. Sampling re-noises the clean prediction
// through the forward marginal at each step.
//
// Expression parameters are z-normalized per channel with train-split
// statistics before noising and de-normalized after sampling; the diffusion
// process itself always runs in the normalized space.

#include <cstdint>
#include <vector>

#include "echoface/ad.hpp"
#include "echoface/audio.hpp"
#include "echoface/common.hpp"
#include "echoface/corpus.hpp"
#include "echoface/face_model.hpp"
#include "echoface/m2s.hpp"

namespace echoface::diffusion {

struct NoiseSchedule {
  int steps = 0;  // D
  Vec beta;       // length D+1, beta[0] = 0, per-step noise increments
  Vec alpha;      // length D+1, alpha[0] = 1, cumulative signal fractions

  void validate() const;
};

// Betas linear from 1e-4 to 0.02 across d_steps; alpha[d] = prod (1 - beta_i).
NoiseSchedule make_linear_schedule(int d_steps);

// sqrt(alpha[d]) * x + sqrt(1 - alpha[d]) * noise. d = 0 returns x exactly.
Mat noising(const Mat& x, int d, const NoiseSchedule& schedule, const Mat& noise);

// Forward differences along rows: out[t] = seq[t+1] - seq[t]; requires T >= 2.
Mat velocity(const Mat& seq);

// Sinusoidal timestep embedding, 1 x dim (dim even): sin half then cos half,
// frequencies log-spaced from 1 to 1/10000.
RowVec timestep_embedding(int d, int dim);

// Per-head self-attention distance penalties 2^(-8h/H), h = 1..H.
Vec alibi_slopes(int heads);

struct DenoiserConfig {
  int layers = 4;
  int heads = 4;
  int f = 64;  // transformer feature width
  double cond_dropout_prob = 0.2;
  double w_m2s = 1.0;
  bool with_m2s = true;
  audio::EncoderMode encoder_mode = audio::EncoderMode::kFrozen;

  void validate() const;
};

struct DenoiserModel {
  DenoiserConfig config;
  NoiseSchedule schedule;
  int x_dim = 0;    // psi_dim + 3
  int d_audio = 0;  // audio feature width (encoder output)

  Mat in_w, in_b;      // noisy-sequence projection
  Mat cond_w, cond_b;  // audio-feature projection
  Mat time_w, time_b;  // timestep-embedding projection
  Mat null_cond;       // learnable null condition, 1 x d_audio
  struct Layer {
    Mat ln1_g, ln1_b;  // pre-norm, self-attention (ALiBi biased)
    Mat sa_wq, sa_wk, sa_wv, sa_wo, sa_wo_b;
    Mat ln2_g, ln2_b;  // pre-norm, cross-attention (diagonal mask)
    Mat ca_wq, ca_wk, ca_wv, ca_wo, ca_wo_b;
    Mat ln3_g, ln3_b;  // pre-norm, feed-forward
    Mat ff_w1, ff_b1, ff_w2, ff_b2;
  };
  std::vector<Layer> layers;
  Mat out_w, out_b;  // back to x_dim

  // Per-channel z-normalization of expression parameters (train split,
  // sigma floored at 1e-6); not touched by the optimizer.
  RowVec x_mu, x_sigma;

  // Mel -> 25 Hz conditioning features. Stored with the model so sampling
  // from raw mel needs nothing else; trained only in TRAINABLE mode.
  audio::AudioEncoder encoder;

  void init(const DenoiserConfig& config, const NoiseSchedule& schedule,
            int x_dim, const audio::AudioEncoder& encoder, std::uint64_t seed);
  // Denoiser parameters in a fixed order; excludes the audio encoder.
  std::vector<Mat*> params();
  std::vector<const Mat*> params() const;
  std::uint64_t params_hash() const;

  // Predicted clean normalized sequence from a noisy normalized sequence.
  // cond is a T x d_audio feature variable, or null to route every audio
  // position through the learnable null vector. bound, when given, supplies
  // tape vars for params() so a trainer can receive gradients.
  ad::Var denoise_var(ad::Tape& tape, ad::Var noisy, int d, const ad::Var* cond,
                      const std::vector<ad::Var>* bound = nullptr) const;
  Mat denoise(const Mat& noisy, int d, const Mat* cond) const;

  Mat normalize(const Mat& x_raw) const;
  Mat denormalize(const Mat& x_norm) const;
};

struct ThunderTrainOptions {
  double lr = 1e-4;
  int batch = 16;
  int window = 70;  // 25 fps frames
  int epochs = 20;
  int d_s = 64;  // audio encoder output width
  std::uint64_t seed = 1;
};

struct ThunderEpochStats {
  double total = 0.0;
  double rec = 0.0;
  double vel = 0.0;
  double m2s = 0.0;  // zero when the cycle loss is disabled
};

struct ThunderTrainResult {
  DenoiserModel model;
  std::vector<ThunderEpochStats> history;
  // Classifier-free-guidance accounting over all training samples.
  long total_samples = 0;
  long null_samples = 0;
};

// Trains the denoiser on the train split with the m2s model held frozen.
// The m2s model must match the corpus template and codebook; it is only
// consulted when config.with_m2s is set.
ThunderTrainResult train_thunder(const corpus::Corpus& corpus,
                                 const m2s::M2SModel& m2s_model,
                                 const DenoiserConfig& config,
                                 const NoiseSchedule& schedule,
                                 const ThunderTrainOptions& opt);

struct SampleConfig {
  double s_a = 1.0;  // audio guidance scale; 1 skips the null branch
  std::uint64_t seed = 1;
};

// Full reverse loop from Gaussian noise, conditioned on T x d_audio features;
// returns a T x x_dim expression sequence in raw (de-normalized) units.
Mat sample(const DenoiserModel& model, const Mat& audio_feats,
           const NoiseSchedule& schedule, const SampleConfig& cfg);

}  // namespace echoface::diffusion
