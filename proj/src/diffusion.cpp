#include "echoface/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "echoface/optim.hpp"

namespace echoface::diffusion {

void NoiseSchedule::validate() const {
  check_arg(steps >= 1, "noise schedule: need at least one step");
  check_arg(beta.size() == steps + 1 && alpha.size() == steps + 1,
            "noise schedule: array lengths must be steps + 1");
  check_arg(beta[0] == 0.0 && alpha[0] == 1.0,
            "noise schedule: clean-data convention violated at index 0");
  for (int d = 1; d <= steps; ++d) {
    check_arg(beta[d] > 0.0 && beta[d] < 1.0, "noise schedule: beta out of (0, 1)");
    check_arg(alpha[d] > 0.0 && alpha[d] < alpha[d - 1],
              "noise schedule: alpha must decrease strictly into (0, 1]");
  }
}

NoiseSchedule make_linear_schedule(int d_steps) {
  check_arg(d_steps >= 1, "noise schedule: need at least one step");
  NoiseSchedule s;
  s.steps = d_steps;
  s.beta = Vec::Zero(d_steps + 1);
  s.alpha = Vec::Ones(d_steps + 1);
  const double b_lo = 1e-4, b_hi = 0.02;
  for (int d = 1; d <= d_steps; ++d) {
    s.beta[d] = d_steps == 1
                    ? b_lo
                    : b_lo + (b_hi - b_lo) * static_cast<double>(d - 1) /
                                 static_cast<double>(d_steps - 1);
    s.alpha[d] = s.alpha[d - 1] * (1.0 - s.beta[d]);
  }
  s.validate();
  return s;
}

Mat noising(const Mat& x, int d, const NoiseSchedule& schedule, const Mat& noise) {
  schedule.validate();
  check_arg(d >= 0 && d <= schedule.steps, "noising: diffusion step out of range");
  check_arg(noise.rows() == x.rows() && noise.cols() == x.cols(),
            "noising: noise shape must match the sequence");
  double a = schedule.alpha[d];
  return std::sqrt(a) * x + std::sqrt(1.0 - a) * noise;
}

Mat velocity(const Mat& seq) {
  check_arg(seq.rows() >= 2, "velocity: need at least two frames");
  return seq.bottomRows(seq.rows() - 1) - seq.topRows(seq.rows() - 1);
}

RowVec timestep_embedding(int d, int dim) {
  check_arg(dim >= 2 && dim % 2 == 0, "timestep embedding: dimension must be even");
  const int half = dim / 2;
  RowVec e(dim);
  for (int i = 0; i < half; ++i) {
    double freq = half == 1 ? 1.0
                            : std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                       static_cast<double>(half - 1));
    e(i) = std::sin(d * freq);
    e(half + i) = std::cos(d * freq);
  }
  return e;
}

Vec alibi_slopes(int heads) {
  check_arg(heads >= 1, "alibi: need at least one head");
  Vec s(heads);
  for (int h = 0; h < heads; ++h)
    s(h) = std::exp2(-8.0 * static_cast<double>(h + 1) / static_cast<double>(heads));
  return s;
}

void DenoiserConfig::validate() const {
  check_arg(layers >= 1, "denoiser: need at least one layer");
  check_arg(heads >= 1, "denoiser: need at least one head");
  check_arg(f >= 4 && f % 2 == 0, "denoiser: feature width must be even and >= 4");
  check_arg(f % heads == 0, "denoiser: feature width must be divisible by head count");
  check_arg(cond_dropout_prob >= 0.0 && cond_dropout_prob <= 1.0,
            "denoiser: condition dropout probability out of [0, 1]");
  check_arg(w_m2s >= 0.0, "denoiser: cycle-loss weight must be nonnegative");
}

void DenoiserModel::init(const DenoiserConfig& cfg, const NoiseSchedule& sched,
                         int x_width, const audio::AudioEncoder& enc,
                         std::uint64_t seed) {
  cfg.validate();
  sched.validate();
  check_arg(x_width >= 4, "denoiser: sequence width must cover psi plus jaw");
  config = cfg;
  schedule = sched;
  x_dim = x_width;
  d_audio = enc.d_s;
  encoder = enc;
  encoder.mode = cfg.encoder_mode;

  RandomStream rng(derive_seed(seed, 0xd1ff));
  auto w = [&rng](int rows, int cols) {
    return rng.normal_matrix(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)));
  };
  const int f = cfg.f;
  in_w = w(x_dim, f);
  in_b = Mat::Zero(1, f);
  cond_w = w(d_audio, f);
  cond_b = Mat::Zero(1, f);
  time_w = w(f, f);
  time_b = Mat::Zero(1, f);
  null_cond = rng.normal_matrix(1, d_audio, 1.0 / std::sqrt(static_cast<double>(d_audio)));
  layers.assign(static_cast<std::size_t>(cfg.layers), Layer{});
  for (auto& l : layers) {
    l.ln1_g = Mat::Ones(1, f);
    l.ln1_b = Mat::Zero(1, f);
    l.sa_wq = w(f, f);
    l.sa_wk = w(f, f);
    l.sa_wv = w(f, f);
    l.sa_wo = w(f, f);
    l.sa_wo_b = Mat::Zero(1, f);
    l.ln2_g = Mat::Ones(1, f);
    l.ln2_b = Mat::Zero(1, f);
    l.ca_wq = w(f, f);
    l.ca_wk = w(f, f);
    l.ca_wv = w(f, f);
    l.ca_wo = w(f, f);
    l.ca_wo_b = Mat::Zero(1, f);
    l.ln3_g = Mat::Ones(1, f);
    l.ln3_b = Mat::Zero(1, f);
    l.ff_w1 = w(f, 2 * f);
    l.ff_b1 = Mat::Zero(1, 2 * f);
    l.ff_w2 = w(2 * f, f);
    l.ff_b2 = Mat::Zero(1, f);
  }
  out_w = w(f, x_dim);
  out_b = Mat::Zero(1, x_dim);
  x_mu = RowVec::Zero(x_dim);
  x_sigma = RowVec::Ones(x_dim);
}

std::vector<Mat*> DenoiserModel::params() {
  std::vector<Mat*> ps = {&in_w, &in_b, &cond_w, &cond_b, &time_w, &time_b, &null_cond};
  for (auto& l : layers)
    for (Mat* p : {&l.ln1_g, &l.ln1_b, &l.sa_wq, &l.sa_wk, &l.sa_wv, &l.sa_wo,
                   &l.sa_wo_b, &l.ln2_g, &l.ln2_b, &l.ca_wq, &l.ca_wk, &l.ca_wv,
                   &l.ca_wo, &l.ca_wo_b, &l.ln3_g, &l.ln3_b, &l.ff_w1, &l.ff_b1,
                   &l.ff_w2, &l.ff_b2})
      ps.push_back(p);
  ps.push_back(&out_w);
  ps.push_back(&out_b);
  return ps;
}

std::vector<const Mat*> DenoiserModel::params() const {
  auto ps = const_cast<DenoiserModel*>(this)->params();
  return std::vector<const Mat*>(ps.begin(), ps.end());
}

std::uint64_t DenoiserModel::params_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::uint64_t meta[] = {static_cast<std::uint64_t>(config.layers),
                          static_cast<std::uint64_t>(config.heads),
                          static_cast<std::uint64_t>(config.f),
                          static_cast<std::uint64_t>(config.with_m2s),
                          static_cast<std::uint64_t>(config.encoder_mode),
                          static_cast<std::uint64_t>(x_dim),
                          static_cast<std::uint64_t>(d_audio),
                          static_cast<std::uint64_t>(schedule.steps)};
  h = fnv1a64(meta, sizeof(meta), h);
  double fmeta[] = {config.cond_dropout_prob, config.w_m2s};
  h = fnv1a64(fmeta, sizeof(fmeta), h);
  for (const Mat* p : params()) h = hash_matrix(*p, h);
  h = hash_matrix(x_mu, h);
  h = hash_matrix(x_sigma, h);
  std::uint64_t eh = encoder.params_hash();
  return fnv1a64(&eh, sizeof(eh), h);
}

Mat DenoiserModel::normalize(const Mat& x_raw) const {
  check_arg(x_raw.cols() == x_dim, "denoiser: sequence width mismatch");
  return ((x_raw.rowwise() - x_mu).array().rowwise() / x_sigma.array()).matrix();
}

Mat DenoiserModel::denormalize(const Mat& x_norm) const {
  check_arg(x_norm.cols() == x_dim, "denoiser: sequence width mismatch");
  return ((x_norm.array().rowwise() * x_sigma.array()).matrix().rowwise() + x_mu);
}

ad::Var DenoiserModel::denoise_var(ad::Tape& tape, ad::Var noisy, int d,
                                   const ad::Var* cond,
                                   const std::vector<ad::Var>* bound) const {
  check_arg(x_dim >= 4, "denoise: model is uninitialized");
  check_arg(tape.val(noisy).cols() == x_dim, "denoise: sequence width mismatch");
  check_arg(d >= 0, "denoise: negative diffusion step");
  const int t_len = static_cast<int>(tape.val(noisy).rows());
  if (cond != nullptr) {
    check_arg(tape.val(*cond).rows() == t_len,
              "denoise: conditioning length mismatch");
    check_arg(tape.val(*cond).cols() == d_audio,
              "denoise: conditioning width mismatch");
  }

  auto ps = params();
  std::vector<ad::Var> pv;
  if (bound != nullptr) {
    check_arg(bound->size() == ps.size(), "denoise: bound parameter count mismatch");
    pv = *bound;
  } else {
    pv.reserve(ps.size());
    for (const Mat* p : ps) pv.push_back(tape.leaf(*p));
  }
  std::size_t cursor = 0;
  auto next = [&pv, &cursor]() { return pv[cursor++]; };

  ad::Var in_wv = next(), in_bv = next(), cond_wv = next(), cond_bv = next();
  ad::Var time_wv = next(), time_bv = next(), null_v = next();

  ad::Var x = ad::add_rowvec(ad::matmul(noisy, in_wv), in_bv);

  ad::Var feats;
  if (cond != nullptr) {
    feats = *cond;
  } else {
    // Broadcast the learnable null vector to every audio position.
    ad::Var ones = tape.leaf(Mat::Ones(t_len, 1));
    feats = ad::matmul(ones, null_v);
  }
  ad::Var mem_a = ad::add_rowvec(ad::matmul(feats, cond_wv), cond_bv);
  ad::Var temb = tape.leaf(timestep_embedding(d, config.f));
  ad::Var mem_t = ad::add_rowvec(ad::matmul(temb, time_wv), time_bv);
  ad::Var mem = ad::concat_rows({mem_a, mem_t});

  const int f = config.f;
  const int dh = f / config.heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Symmetric ALiBi distance penalties, shared across layers.
  Vec slopes = alibi_slopes(config.heads);
  std::vector<Mat> sa_bias(static_cast<std::size_t>(config.heads));
  for (int h = 0; h < config.heads; ++h) {
    Mat b(t_len, t_len);
    for (int i = 0; i < t_len; ++i)
      for (int j = 0; j < t_len; ++j) b(i, j) = -slopes(h) * std::abs(i - j);
    sa_bias[static_cast<std::size_t>(h)] = std::move(b);
  }
  // Query t sees audio position t plus the timestep token.
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> allowed(t_len, t_len + 1);
  allowed.setConstant(false);
  for (int t = 0; t < t_len; ++t) {
    allowed(t, t) = true;
    allowed(t, t_len) = true;
  }

  for (int layer = 0; layer < config.layers; ++layer) {
    ad::Var ln1_g = next(), ln1_b = next();
    ad::Var sa_wq = next(), sa_wk = next(), sa_wv = next(), sa_wo = next(),
            sa_wo_b = next();
    ad::Var ln2_g = next(), ln2_b = next();
    ad::Var ca_wq = next(), ca_wk = next(), ca_wv = next(), ca_wo = next(),
            ca_wo_b = next();
    ad::Var ln3_g = next(), ln3_b = next();
    ad::Var ff_w1 = next(), ff_b1 = next(), ff_w2 = next(), ff_b2 = next();

    ad::Var a = ad::layer_norm(x, ln1_g, ln1_b);
    ad::Var q = ad::matmul(a, sa_wq);
    ad::Var k = ad::matmul(a, sa_wk);
    ad::Var v = ad::matmul(a, sa_wv);
    std::vector<ad::Var> heads;
    for (int h = 0; h < config.heads; ++h) {
      ad::Var qh = ad::slice_cols(q, h * dh, dh);
      ad::Var kh = ad::slice_cols(k, h * dh, dh);
      ad::Var vh = ad::slice_cols(v, h * dh, dh);
      ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), att_scale);
      ad::Var attn =
          ad::softmax_rows(scores, &sa_bias[static_cast<std::size_t>(h)], nullptr);
      heads.push_back(ad::matmul(attn, vh));
    }
    ad::Var o = ad::add_rowvec(ad::matmul(ad::concat_cols(heads), sa_wo), sa_wo_b);
    x = ad::add(x, o);

    ad::Var c = ad::layer_norm(x, ln2_g, ln2_b);
    q = ad::matmul(c, ca_wq);
    k = ad::matmul(mem, ca_wk);
    v = ad::matmul(mem, ca_wv);
    heads.clear();
    for (int h = 0; h < config.heads; ++h) {
      ad::Var qh = ad::slice_cols(q, h * dh, dh);
      ad::Var kh = ad::slice_cols(k, h * dh, dh);
      ad::Var vh = ad::slice_cols(v, h * dh, dh);
      ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), att_scale);
      ad::Var attn = ad::softmax_rows(scores, nullptr, &allowed);
      heads.push_back(ad::matmul(attn, vh));
    }
    o = ad::add_rowvec(ad::matmul(ad::concat_cols(heads), ca_wo), ca_wo_b);
    x = ad::add(x, o);

    ad::Var g = ad::layer_norm(x, ln3_g, ln3_b);
    g = ad::tanh(ad::add_rowvec(ad::matmul(g, ff_w1), ff_b1));
    g = ad::add_rowvec(ad::matmul(g, ff_w2), ff_b2);
    x = ad::add(x, g);
  }

  ad::Var out_wv = next(), out_bv = next();
  check_arg(cursor == pv.size(), "denoise: parameter cursor mismatch");
  return ad::add_rowvec(ad::matmul(x, out_wv), out_bv);
}

Mat DenoiserModel::denoise(const Mat& noisy, int d, const Mat* cond) const {
  ad::Tape tape;
  ad::Var nv = tape.leaf(noisy);
  if (cond != nullptr) {
    ad::Var cv = tape.leaf(*cond);
    return tape.val(denoise_var(tape, nv, d, &cv));
  }
  return tape.val(denoise_var(tape, nv, d, nullptr));
}

namespace {

// Window of one record prepared for a training step.
struct WindowSample {
  Mat x_raw;   // win x x_dim
  Mat mel;     // 2 win x 80
  std::vector<int> units;
  const Vec* spk = nullptr;
};

WindowSample take_window(const corpus::SequenceRecord& rec, const Vec& spk,
                         int window, RandomStream& rng) {
  WindowSample s;
  int t_len = rec.frames();
  int win = std::min(t_len, window);
  int start = 0;
  if (t_len > win)
    start = static_cast<int>(rng.index(static_cast<std::uint64_t>(t_len - win + 1)));
  s.x_raw = rec.expressions.middleRows(start, win);
  s.mel = rec.mel.middleRows(2 * start, 2 * win);
  s.units.assign(rec.units.begin() + 2 * start, rec.units.begin() + 2 * (start + win));
  s.spk = &spk;
  return s;
}

}  // namespace

ThunderTrainResult train_thunder(const corpus::Corpus& corpus,
                                 const m2s::M2SModel& m2s_model,
                                 const DenoiserConfig& config,
                                 const NoiseSchedule& schedule,
                                 const ThunderTrainOptions& opt) {
  config.validate();
  schedule.validate();
  check_arg(opt.epochs >= 0 && opt.batch >= 1 && opt.window >= 4 && opt.lr > 0 &&
                opt.d_s >= 1,
            "thunder train: bad options");
  const FaceTemplate& tpl = corpus.manifest.face;
  const int psi_dim = tpl.psi_dim();
  const int x_dim = tpl.param_dim();
  if (config.with_m2s) {
    check_arg(m2s_model.input_dim == m2s::input_dim_for(m2s_model.config, tpl),
              "thunder train: m2s model does not match the corpus face");
    check_arg(m2s_model.config.n_units == corpus.manifest.codebook.n_units(),
              "thunder train: m2s model does not match the corpus codebook");
  }
  auto train_idx = corpus.split_indices(corpus::Split::kTrain);
  check_arg(!train_idx.empty(), "thunder train: empty training split");

  ThunderTrainResult result;
  DenoiserModel& model = result.model;
  audio::AudioEncoder enc =
      audio::AudioEncoder::init(derive_seed(opt.seed, 0xa0d1), opt.d_s,
                                config.encoder_mode);
  model.init(config, schedule, x_dim, enc, opt.seed);

  // Per-channel normalization statistics over all train-split frames.
  Eigen::Index total_frames = 0;
  for (int i : train_idx)
    total_frames += corpus.records[static_cast<std::size_t>(i)].expressions.rows();
  RowVec mu = RowVec::Zero(x_dim);
  for (int i : train_idx)
    mu += corpus.records[static_cast<std::size_t>(i)].expressions.colwise().sum();
  mu /= static_cast<double>(total_frames);
  RowVec var = RowVec::Zero(x_dim);
  for (int i : train_idx)
    var += (corpus.records[static_cast<std::size_t>(i)].expressions.rowwise() - mu)
               .array()
               .square()
               .colwise()
               .sum()
               .matrix();
  var /= static_cast<double>(total_frames);
  model.x_mu = mu;
  model.x_sigma = var.array().sqrt().max(1e-6);

  if (opt.epochs == 0) return result;

  std::vector<Mat*> ps = model.params();
  const std::size_t n_denoiser = ps.size();
  if (config.encoder_mode == audio::EncoderMode::kTrainable)
    model.encoder.visit_params([&ps](const char*, Mat& p) { ps.push_back(&p); });
  AdamOptions aopt;
  aopt.lr = opt.lr;
  Adam adam(aopt, ps);
  RandomStream rng(derive_seed(opt.seed, 0x70a1));

  std::vector<int> order(train_idx.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = train_idx[i];
  long global_step = 0;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.index(i))]);

    ThunderEpochStats stats;
    long epoch_samples = 0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      std::size_t batch_n =
          std::min<std::size_t>(static_cast<std::size_t>(opt.batch), order.size() - pos);
      std::vector<Mat> gsum(ps.size());
      for (std::size_t i = 0; i < ps.size(); ++i)
        gsum[i] = Mat::Zero(ps[i]->rows(), ps[i]->cols());
      double batch_total = 0.0;

      for (std::size_t b = 0; b < batch_n; ++b) {
        const auto& rec = corpus.records[static_cast<std::size_t>(order[pos + b])];
        const Vec& spk =
            corpus.manifest.speakers[static_cast<std::size_t>(rec.speaker_id)].embedding;
        WindowSample s = take_window(rec, spk, opt.window, rng);
        const int win = static_cast<int>(s.x_raw.rows());

        int d = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(schedule.steps)));
        Mat noise = rng.normal_matrix(win, x_dim);
        Mat x_tilde = noising(model.normalize(s.x_raw), d, schedule, noise);
        bool drop = rng.uniform() < config.cond_dropout_prob;

        ad::Tape tape;
        std::vector<ad::Var> bound;
        bound.reserve(ps.size());
        for (Mat* p : ps) bound.push_back(tape.leaf(*p));
        std::vector<ad::Var> den_bound(bound.begin(),
                                       bound.begin() + static_cast<long>(n_denoiser));
        std::vector<ad::Var> enc_bound(bound.begin() + static_cast<long>(n_denoiser),
                                       bound.end());

        ad::Var cond_var;
        bool have_cond = !drop;
        if (have_cond) {
          if (config.encoder_mode == audio::EncoderMode::kTrainable)
            cond_var = model.encoder.encode(tape, tape.leaf(s.mel), &enc_bound);
          else
            cond_var = tape.leaf(model.encoder.encode(s.mel));
        }

        ad::Var x0n = model.denoise_var(tape, tape.leaf(x_tilde), d,
                                        have_cond ? &cond_var : nullptr, &den_bound);
        ad::Var x0 = ad::affine_cols(x0n, model.x_sigma, model.x_mu);
        ad::Var psi_hat = ad::slice_cols(x0, 0, psi_dim);
        ad::Var jaw_hat = ad::slice_cols(x0, psi_dim, 3);
        ad::Var v_hat = decode_sequence_var(tape, tpl, x0);
        Mat v_gt = decode_sequence(tpl, s.x_raw);
        Mat psi_gt = s.x_raw.leftCols(psi_dim);
        Mat jaw_gt = s.x_raw.rightCols(3);

        ad::Var l_rec = ad::wsum({{1.0, ad::mse(v_hat, v_gt)},
                                  {1.0, ad::mse(psi_hat, psi_gt)},
                                  {1.0, ad::mse(jaw_hat, jaw_gt)}});
        std::vector<std::pair<double, ad::Var>> terms = {{1.0, l_rec}};
        ad::Var l_vel;
        if (win >= 2) {
          l_vel = ad::wsum(
              {{1.0, ad::mse(ad::rows_diff(v_hat), velocity(v_gt))},
               {1.0, ad::mse(ad::rows_diff(psi_hat), velocity(psi_gt))},
               {1.0, ad::mse(ad::rows_diff(jaw_hat), velocity(jaw_gt))}});
          terms.push_back({1.0, l_vel});
        }
        ad::Var l_m2s;
        if (config.with_m2s) {
          ad::Var m2s_in;
          switch (m2s_model.config.input_space) {
            case m2s::InputSpace::kExp:
              m2s_in = x0;
              break;
            case m2s::InputSpace::kFace:
              m2s_in = v_hat;
              break;
            case m2s::InputSpace::kMouth:
              m2s_in = ad::gather_cols(v_hat, flat_coord_indices(tpl.mouth_idx));
              break;
          }
          auto m_out = m2s_model.forward(tape, m2s_in, *s.spk);
          l_m2s = m2s::m2s_loss_var(tape, m_out, s.mel, s.units);
          terms.push_back({config.w_m2s, l_m2s});
        }
        ad::Var total = ad::wsum(terms);
        tape.backward(total);

        for (std::size_t i = 0; i < ps.size(); ++i) gsum[i] += tape.grad(bound[i]);
        double tv = tape.val(total)(0, 0);
        batch_total += tv;
        stats.total += tv;
        stats.rec += tape.val(l_rec)(0, 0);
        if (win >= 2) stats.vel += tape.val(l_vel)(0, 0);
        if (config.with_m2s) stats.m2s += tape.val(l_m2s)(0, 0);
        ++epoch_samples;
        ++result.total_samples;
        if (drop) ++result.null_samples;
      }

      for (auto& g : gsum) g /= static_cast<double>(batch_n);
      adam.step(gsum);
      ++global_step;
      if (!std::isfinite(batch_total))
        throw TrainingDiverged("thunder training produced a non-finite loss at step " +
                               std::to_string(global_step));
      pos += batch_n;
    }

    stats.total /= static_cast<double>(epoch_samples);
    stats.rec /= static_cast<double>(epoch_samples);
    stats.vel /= static_cast<double>(epoch_samples);
    stats.m2s /= static_cast<double>(epoch_samples);
    result.history.push_back(stats);
  }
  return result;
}

Mat sample(const DenoiserModel& model, const Mat& audio_feats,
           const NoiseSchedule& schedule, const SampleConfig& cfg) {
  check_arg(model.x_dim >= 4, "sample: model is uninitialized");
  schedule.validate();
  check_arg(audio_feats.rows() >= 1, "sample: empty conditioning");
  check_arg(audio_feats.cols() == model.d_audio, "sample: conditioning width mismatch");
  check_arg(cfg.s_a >= 0.0, "sample: guidance scale must be nonnegative");

  const int t_len = static_cast<int>(audio_feats.rows());
  RandomStream rng(cfg.seed);
  Mat x = rng.normal_matrix(t_len, model.x_dim);
  for (int d = schedule.steps; d >= 1; --d) {
    Mat x0 = model.denoise(x, d, &audio_feats);
    if (cfg.s_a != 1.0) {
      Mat x0_null = model.denoise(x, d, nullptr);
      x0 = cfg.s_a * x0 + (1.0 - cfg.s_a) * x0_null;
    }
    if (d > 1) {
      double a = schedule.alpha[d - 1];
      x = std::sqrt(a) * x0 + std::sqrt(1.0 - a) * rng.normal_matrix(t_len, model.x_dim);
    } else {
      x = x0;
    }
  }
  return model.denormalize(x);
}

}  // namespace echoface::diffusion
