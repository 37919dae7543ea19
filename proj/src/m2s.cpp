#include "echoface/m2s.hpp"

#include <algorithm>
#include <cmath>

#include "echoface/optim.hpp"

namespace echoface::m2s {

const char* input_space_name(InputSpace s) {
  switch (s) {
    case InputSpace::kMouth: return "mouth";
    case InputSpace::kFace: return "face";
    case InputSpace::kExp: return "exp";
  }
  throw InvalidArgument("unknown input space");
}

InputSpace input_space_from_name(const std::string& name) {
  if (name == "mouth") return InputSpace::kMouth;
  if (name == "face") return InputSpace::kFace;
  if (name == "exp") return InputSpace::kExp;
  throw InvalidArgument("unknown input space: " + name);
}

void M2SConfig::validate() const {
  check_arg(hidden >= 4, "m2s: hidden width too small");
  check_arg(n_blocks >= 1, "m2s: need at least one block");
  check_arg(n_heads >= 1 && hidden % n_heads == 0,
            "m2s: hidden width must be divisible by head count");
  check_arg(conv_kernel >= 1 && conv_kernel % 2 == 1,
            "m2s: conv kernel must be odd");
  check_arg(n_units >= 2, "m2s: need at least two units");
}

int input_dim_for(const M2SConfig& config, const FaceTemplate& tpl) {
  switch (config.input_space) {
    case InputSpace::kMouth: return 3 * static_cast<int>(tpl.mouth_idx.size());
    case InputSpace::kFace: return 3 * tpl.n_v();
    case InputSpace::kExp: return tpl.param_dim();
  }
  throw InvalidArgument("unknown input space");
}

Mat input_from_expressions(const M2SConfig& config, const FaceTemplate& tpl,
                           const Mat& expressions) {
  check_arg(expressions.cols() == tpl.param_dim(),
            "m2s: expression width does not match template");
  switch (config.input_space) {
    case InputSpace::kExp:
      return expressions;
    case InputSpace::kFace:
      return decode_sequence(tpl, expressions);
    case InputSpace::kMouth: {
      Mat mesh = decode_sequence(tpl, expressions);
      auto idx = flat_coord_indices(tpl.mouth_idx);
      Mat out(mesh.rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t c = 0; c < idx.size(); ++c)
        out.col(static_cast<Eigen::Index>(c)) = mesh.col(idx[c]);
      return out;
    }
  }
  throw InvalidArgument("unknown input space");
}

ad::Var input_from_expressions_var(ad::Tape& tape, const M2SConfig& config,
                                   const FaceTemplate& tpl, ad::Var expressions) {
  check_arg(tape.val(expressions).cols() == tpl.param_dim(),
            "m2s: expression width does not match template");
  switch (config.input_space) {
    case InputSpace::kExp:
      return expressions;
    case InputSpace::kFace:
      return decode_sequence_var(tape, tpl, expressions);
    case InputSpace::kMouth:
      return ad::gather_cols(decode_sequence_var(tape, tpl, expressions),
                             flat_coord_indices(tpl.mouth_idx));
  }
  throw InvalidArgument("unknown input space");
}

void M2SModel::init(const M2SConfig& cfg, int in_dim, std::uint64_t seed) {
  cfg.validate();
  check_arg(in_dim >= 1, "m2s: input dimension must be positive");
  config = cfg;
  input_dim = in_dim;
  RandomStream rng(derive_seed(seed, 0x2b5e));
  const int h = cfg.hidden;
  auto w = [&rng](int rows, int cols) {
    return rng.normal_matrix(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)));
  };
  in_w1 = w(in_dim, h);
  in_b1 = Mat::Zero(1, h);
  in_w2 = w(h, h);
  in_b2 = Mat::Zero(1, h);
  spk_w = w(16, h);
  spk_b = Mat::Zero(1, h);
  blocks.assign(static_cast<std::size_t>(cfg.n_blocks), Block{});
  for (auto& b : blocks) {
    b.ln1_g = Mat::Ones(1, h);
    b.ln1_b = Mat::Zero(1, h);
    b.wq = w(h, h);
    b.wk = w(h, h);
    b.wv = w(h, h);
    b.wo = w(h, h);
    b.wo_b = Mat::Zero(1, h);
    b.ln2_g = Mat::Ones(1, h);
    b.ln2_b = Mat::Zero(1, h);
    b.dw_k = rng.normal_matrix(cfg.conv_kernel, h,
                               1.0 / std::sqrt(static_cast<double>(cfg.conv_kernel)));
    b.pw_w = w(h, h);
    b.pw_b = Mat::Zero(1, h);
  }
  up_w = w(cfg.conv_kernel * h, h);
  up_b = Mat::Zero(1, h);
  mel_w = w(h, audio::kMelBins);
  mel_b = Mat::Zero(1, audio::kMelBins);
  unit_w = w(h, cfg.n_units);
  unit_b = Mat::Zero(1, cfg.n_units);
  mel_mu = RowVec::Zero(audio::kMelBins);
  mel_sigma = RowVec::Ones(audio::kMelBins);
}

std::vector<Mat*> M2SModel::params() {
  std::vector<Mat*> ps = {&in_w1, &in_b1, &in_w2, &in_b2, &spk_w, &spk_b};
  for (auto& b : blocks)
    for (Mat* p : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.wo_b,
                   &b.ln2_g, &b.ln2_b, &b.dw_k, &b.pw_w, &b.pw_b})
      ps.push_back(p);
  for (Mat* p : {&up_w, &up_b, &mel_w, &mel_b, &unit_w, &unit_b}) ps.push_back(p);
  return ps;
}

std::vector<const Mat*> M2SModel::params() const {
  auto ps = const_cast<M2SModel*>(this)->params();
  return std::vector<const Mat*>(ps.begin(), ps.end());
}

std::uint64_t M2SModel::params_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::uint64_t meta[] = {static_cast<std::uint64_t>(config.input_space),
                          static_cast<std::uint64_t>(config.hidden),
                          static_cast<std::uint64_t>(config.n_blocks),
                          static_cast<std::uint64_t>(config.n_heads),
                          static_cast<std::uint64_t>(config.conv_kernel),
                          static_cast<std::uint64_t>(config.n_units),
                          static_cast<std::uint64_t>(input_dim)};
  h = fnv1a64(meta, sizeof(meta), h);
  for (const Mat* p : params()) h = hash_matrix(*p, h);
  h = hash_matrix(mel_mu, h);
  h = hash_matrix(mel_sigma, h);
  return h;
}

VarOutput M2SModel::forward(ad::Tape& tape, ad::Var input, const Vec& spk,
                            const std::vector<ad::Var>* bound) const {
  check_arg(tape.val(input).cols() == input_dim, "m2s: input width mismatch");
  check_arg(spk.size() == 16, "m2s: speaker embedding must have 16 entries");
  auto ps = params();
  std::vector<ad::Var> pv;
  if (bound != nullptr) {
    check_arg(bound->size() == ps.size(), "m2s: bound parameter count mismatch");
    pv = *bound;
  } else {
    pv.reserve(ps.size());
    for (const Mat* p : ps) pv.push_back(tape.leaf(*p));
  }
  std::size_t cursor = 0;
  auto next = [&pv, &cursor]() { return pv[cursor++]; };

  ad::Var v_in_w1 = next(), v_in_b1 = next(), v_in_w2 = next(), v_in_b2 = next();
  ad::Var v_spk_w = next(), v_spk_b = next();

  ad::Var x = ad::tanh(ad::add_rowvec(ad::matmul(input, v_in_w1), v_in_b1));
  x = ad::tanh(ad::add_rowvec(ad::matmul(x, v_in_w2), v_in_b2));
  ad::Var spk_row = tape.leaf(spk.transpose());
  ad::Var s = ad::add_rowvec(ad::matmul(spk_row, v_spk_w), v_spk_b);
  x = ad::add_rowvec(x, s);

  const int h = config.hidden;
  const int dh = h / config.n_heads;
  const int pad = (config.conv_kernel - 1) / 2;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int blk = 0; blk < config.n_blocks; ++blk) {
    ad::Var ln1_g = next(), ln1_b = next();
    ad::Var wq = next(), wk = next(), wv = next(), wo = next(), wo_b = next();
    ad::Var ln2_g = next(), ln2_b = next();
    ad::Var dw_k = next(), pw_w = next(), pw_b = next();

    ad::Var a = ad::layer_norm(x, ln1_g, ln1_b);
    ad::Var q = ad::matmul(a, wq);
    ad::Var k = ad::matmul(a, wk);
    ad::Var v = ad::matmul(a, wv);
    std::vector<ad::Var> heads;
    for (int hd = 0; hd < config.n_heads; ++hd) {
      ad::Var qh = ad::slice_cols(q, hd * dh, dh);
      ad::Var kh = ad::slice_cols(k, hd * dh, dh);
      ad::Var vh = ad::slice_cols(v, hd * dh, dh);
      ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), att_scale);
      ad::Var attn = ad::softmax_rows(scores, nullptr, nullptr);
      heads.push_back(ad::matmul(attn, vh));
    }
    ad::Var o = ad::add_rowvec(ad::matmul(ad::concat_cols(heads), wo), wo_b);
    x = ad::add(x, o);

    ad::Var c = ad::layer_norm(x, ln2_g, ln2_b);
    c = ad::tanh(ad::depthwise_conv1d(c, dw_k, pad));
    c = ad::add_rowvec(ad::matmul(c, pw_w), pw_b);
    x = ad::add(x, c);
  }

  ad::Var up_wv = next(), up_bv = next();
  ad::Var mel_wv = next(), mel_bv = next(), unit_wv = next(), unit_bv = next();
  check_arg(cursor == pv.size(), "m2s: parameter cursor mismatch");

  ad::Var u = ad::upsample_rows2(x);
  u = ad::tanh(ad::conv1d(u, up_wv, up_bv, config.conv_kernel, 1, pad));

  VarOutput out;
  out.mel = ad::affine_cols(ad::add_rowvec(ad::matmul(u, mel_wv), mel_bv),
                            mel_sigma, mel_mu);
  out.logits = ad::add_rowvec(ad::matmul(u, unit_wv), unit_bv);
  return out;
}

M2SOutput M2SModel::forward(const Mat& input, const Vec& spk) const {
  ad::Tape tape;
  auto out = forward(tape, tape.leaf(input), spk);
  return M2SOutput{tape.val(out.mel), tape.val(out.logits)};
}

LossBreakdown m2s_loss(const M2SOutput& out, const Mat& mel,
                       const std::vector<int>& units) {
  check_arg(out.mel_hat.rows() == mel.rows() && out.mel_hat.cols() == mel.cols(),
            "m2s loss: mel shape mismatch");
  check_arg(out.unit_logits.rows() == mel.rows(), "m2s loss: logit length mismatch");
  check_arg(static_cast<Eigen::Index>(units.size()) == mel.rows(),
            "m2s loss: unit length mismatch");
  LossBreakdown lb;
  lb.mel_l1 = (out.mel_hat - mel).cwiseAbs().mean();
  double ce = 0.0;
  for (Eigen::Index t = 0; t < out.unit_logits.rows(); ++t) {
    int id = units[static_cast<std::size_t>(t)];
    check_arg(id >= 0 && id < out.unit_logits.cols(), "m2s loss: unit id out of range");
    RowVec row = out.unit_logits.row(t);
    double mx = row.maxCoeff();
    double lse = mx + std::log((row.array() - mx).exp().sum());
    ce += lse - row(id);
  }
  lb.unit_ce = ce / static_cast<double>(out.unit_logits.rows());
  lb.total = 10.0 * lb.mel_l1 + lb.unit_ce;
  return lb;
}

ad::Var m2s_loss_var(ad::Tape& tape, const VarOutput& out, const Mat& mel,
                     const std::vector<int>& units) {
  check_arg(tape.val(out.mel).rows() == mel.rows(), "m2s loss: mel length mismatch");
  ad::Var l_mel = ad::mean_abs(out.mel, mel);
  ad::Var l_unit = ad::softmax_xent_mean(out.logits, units);
  return ad::wsum({{10.0, l_mel}, {1.0, l_unit}});
}

namespace {

struct PreparedSeq {
  Mat input;  // T x input_dim
  Mat mel;    // 2T x 80
  std::vector<int> units;
  Vec spk;
};

PreparedSeq prepare(const corpus::Corpus& corpus, const M2SConfig& config, int rec_idx) {
  const auto& rec = corpus.records[static_cast<std::size_t>(rec_idx)];
  PreparedSeq p;
  p.input = input_from_expressions(config, corpus.manifest.face, rec.expressions);
  p.mel = rec.mel;
  p.units = rec.units;
  p.spk = corpus.manifest.speakers[static_cast<std::size_t>(rec.speaker_id)].embedding;
  return p;
}

double split_loss(const M2SModel& model, const std::vector<PreparedSeq>& seqs) {
  double sum = 0.0;
  for (const auto& s : seqs) {
    auto out = model.forward(s.input, s.spk);
    sum += m2s_loss(out, s.mel, s.units).total;
  }
  return sum / static_cast<double>(seqs.size());
}

}  // namespace

M2STrainResult train_m2s(const corpus::Corpus& corpus, const M2SConfig& config,
                         const M2STrainOptions& opt) {
  config.validate();
  check_arg(opt.epochs >= 0 && opt.batch >= 1 && opt.max_window >= 4 && opt.lr > 0,
            "m2s train: bad options");
  auto train_idx = corpus.split_indices(corpus::Split::kTrain);
  auto val_idx = corpus.split_indices(corpus::Split::kVal);
  check_arg(!train_idx.empty(), "m2s train: empty training split");

  std::vector<PreparedSeq> train_seqs, val_seqs;
  for (int i : train_idx) train_seqs.push_back(prepare(corpus, config, i));
  for (int i : val_idx) val_seqs.push_back(prepare(corpus, config, i));

  M2STrainResult result;
  M2SModel& model = result.model;
  model.init(config, input_dim_for(config, corpus.manifest.face),
             derive_seed(opt.seed, 0xae51));

  // Output affine from training-set mel statistics.
  Eigen::Index total_frames = 0;
  for (const auto& s : train_seqs) total_frames += s.mel.rows();
  RowVec mu = RowVec::Zero(audio::kMelBins);
  for (const auto& s : train_seqs) mu += s.mel.colwise().sum();
  mu /= static_cast<double>(total_frames);
  RowVec var = RowVec::Zero(audio::kMelBins);
  for (const auto& s : train_seqs)
    var += (s.mel.rowwise() - mu).array().square().colwise().sum().matrix();
  var /= static_cast<double>(total_frames);
  model.mel_mu = mu;
  model.mel_sigma = var.array().sqrt().max(1e-6);

  if (opt.epochs == 0) return result;

  std::vector<Mat*> ps = model.params();
  AdamOptions aopt;
  aopt.lr = opt.lr;
  Adam adam(aopt, ps);
  RandomStream rng(derive_seed(opt.seed, 0x7a11));

  M2SModel best = model;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<int> order(train_seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.index(i))]);

    double epoch_loss = 0.0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      std::size_t batch_n = std::min<std::size_t>(
          static_cast<std::size_t>(opt.batch), order.size() - pos);
      std::vector<Mat> gsum(ps.size());
      for (std::size_t i = 0; i < ps.size(); ++i)
        gsum[i] = Mat::Zero(ps[i]->rows(), ps[i]->cols());
      for (std::size_t b = 0; b < batch_n; ++b) {
        const auto& s = train_seqs[static_cast<std::size_t>(order[pos + b])];
        int t_len = static_cast<int>(s.input.rows());
        int start = 0, win = t_len;
        if (t_len > opt.max_window) {
          win = opt.max_window;
          start = static_cast<int>(rng.index(static_cast<std::uint64_t>(t_len - win + 1)));
        }
        ad::Tape tape;
        std::vector<ad::Var> bound;
        bound.reserve(ps.size());
        for (Mat* p : ps) bound.push_back(tape.leaf(*p));
        ad::Var input = tape.leaf(s.input.middleRows(start, win));
        auto out = model.forward(tape, input, s.spk, &bound);
        std::vector<int> units(s.units.begin() + 2 * start,
                               s.units.begin() + 2 * (start + win));
        ad::Var loss =
            m2s_loss_var(tape, out, s.mel.middleRows(2 * start, 2 * win), units);
        tape.backward(loss);
        for (std::size_t i = 0; i < ps.size(); ++i) gsum[i] += tape.grad(bound[i]);
        epoch_loss += tape.val(loss)(0, 0);
      }
      for (auto& g : gsum) g /= static_cast<double>(batch_n);
      adam.step(gsum);
      pos += batch_n;
    }
    epoch_loss /= static_cast<double>(order.size());

    double val_loss =
        val_seqs.empty() ? epoch_loss : split_loss(model, val_seqs);
    result.history.push_back(EpochStats{epoch_loss, val_loss});
    if (val_loss < best_val) {
      best_val = val_loss;
      best = model;
    }
    if (!std::isfinite(epoch_loss) || !std::isfinite(val_loss))
      throw TrainingDiverged("m2s training produced a non-finite loss");
  }
  result.model = best;
  return result;
}

M2SReport eval_m2s(const M2SModel& model, const corpus::Corpus& corpus,
                   corpus::Split split) {
  auto idx = corpus.split_indices(split);
  check_arg(!idx.empty(), "m2s eval: empty split");
  double abs_sum = 0.0, entries = 0.0;
  long correct = 0, frames = 0;
  for (int i : idx) {
    auto p = prepare(corpus, model.config, i);
    auto out = model.forward(p.input, p.spk);
    abs_sum += (out.mel_hat - p.mel).cwiseAbs().sum();
    entries += static_cast<double>(p.mel.size());
    for (Eigen::Index t = 0; t < out.unit_logits.rows(); ++t) {
      Eigen::Index arg = 0;
      out.unit_logits.row(t).maxCoeff(&arg);
      correct += arg == p.units[static_cast<std::size_t>(t)] ? 1 : 0;
      ++frames;
    }
  }
  M2SReport r;
  r.mel_l1 = abs_sum / entries;
  r.unit_accuracy = static_cast<double>(correct) / static_cast<double>(frames);
  return r;
}

Mat analysis_by_audio_synthesis(const M2SModel& model, const FaceTemplate& tpl,
                                const Mat& target_mel,
                                const std::vector<int>& target_units,
                                int t_frames, const Vec& spk,
                                const AbasOptions& opt) {
  check_arg(t_frames >= 1, "abas: need at least one frame");
  check_arg(target_mel.rows() == 2 * t_frames &&
                target_mel.cols() == audio::kMelBins,
            "abas: target mel must have 2T frames");
  check_arg(static_cast<int>(target_units.size()) == 2 * t_frames,
            "abas: target units must have 2T frames");
  check_arg(opt.steps >= 0 && opt.lr > 0 && opt.lambda >= 0, "abas: bad options");

  Mat x = Mat::Zero(t_frames, tpl.param_dim());
  if (opt.steps == 0) return x;

  Mat best_x = x;
  double best_obj = std::numeric_limits<double>::infinity();
  AdamOptions aopt;
  aopt.lr = opt.lr;
  std::vector<Mat*> var_list = {&x};
  Adam adam(aopt, var_list);

  auto objective = [&](ad::Tape& tape, ad::Var xv) {
    ad::Var input = input_from_expressions_var(tape, model.config, tpl, xv);
    auto out = model.forward(tape, input, spk);
    std::vector<std::pair<double, ad::Var>> terms = {
        {10.0, ad::mean_abs(out.mel, target_mel)},
        {1.0, ad::softmax_xent_mean(out.logits, target_units)}};
    if (t_frames >= 2 && opt.lambda > 0)
      terms.push_back({opt.lambda, ad::mean_sq(ad::rows_diff(xv))});
    return ad::wsum(terms);
  };

  for (int step = 0; step < opt.steps; ++step) {
    ad::Tape tape;
    ad::Var xv = tape.leaf(x);
    ad::Var obj = objective(tape, xv);
    tape.backward(obj);
    double val = tape.val(obj)(0, 0);
    if (val < best_obj) {
      best_obj = val;
      best_x = x;
    }
    adam.step({tape.grad(xv)});
  }
  {
    ad::Tape tape;
    ad::Var xv = tape.leaf(x);
    double val = tape.val(objective(tape, xv))(0, 0);
    if (val < best_obj) best_x = x;
  }
  return best_x;
}

}  // namespace echoface::m2s
