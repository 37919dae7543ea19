#include "echoface/checkpoint.hpp"

#include <cstdint>
#include <vector>

#include "echoface/binio.hpp"

namespace echoface::checkpoint {

namespace {

constexpr char kMagic[4] = {'E', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kKindM2S = 1;
constexpr std::uint32_t kKindThunder = 2;

void write_header(binio::Writer& w, std::uint32_t kind, const Lineage& lineage) {
  w.magic(kMagic);
  w.pod<std::uint32_t>(kVersion);
  w.pod<std::uint32_t>(kind);
  w.pod<std::uint64_t>(lineage.corpus_id);
  w.pod<std::uint64_t>(lineage.codebook_hash);
}

Lineage read_header(binio::Reader& r, std::uint32_t kind) {
  r.expect_magic(kMagic);
  auto version = r.pod<std::uint32_t>();
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version in file: " + r.path());
  auto got = r.pod<std::uint32_t>();
  if (got != kind)
    throw FormatError("checkpoint kind mismatch in file: " + r.path());
  Lineage lineage;
  lineage.corpus_id = r.pod<std::uint64_t>();
  lineage.codebook_hash = r.pod<std::uint64_t>();
  return lineage;
}

void write_params(binio::Writer& w, const std::vector<const Mat*>& params) {
  w.pod<std::uint64_t>(static_cast<std::uint64_t>(params.size()));
  for (const Mat* p : params) w.f64_matrix(*p);
}

void read_params(binio::Reader& r, const std::vector<Mat*>& params) {
  auto count = r.pod<std::uint64_t>();
  if (count != params.size())
    throw FormatError("parameter count mismatch in file: " + r.path());
  for (Mat* p : params) {
    Mat m = r.f64_matrix();
    if (m.rows() != p->rows() || m.cols() != p->cols())
      throw FormatError("parameter shape mismatch in file: " + r.path());
    *p = std::move(m);
  }
}

RowVec read_rowvec(binio::Reader& r, Eigen::Index cols) {
  Mat m = r.f64_matrix();
  if (m.rows() != 1 || m.cols() != cols)
    throw FormatError("statistics shape mismatch in file: " + r.path());
  return m.row(0);
}

}  // namespace

Lineage corpus_lineage(const corpus::CorpusManifest& manifest) {
  Lineage lineage;
  lineage.corpus_id = manifest.corpus_id;
  lineage.codebook_hash = hash_matrix(manifest.codebook.centroids);
  return lineage;
}

void check_lineage(const Lineage& ckpt, const corpus::CorpusManifest& manifest,
                   const std::string& what) {
  Lineage want = corpus_lineage(manifest);
  check_arg(ckpt.corpus_id == want.corpus_id,
            what + ": lineage mismatch, checkpoint was trained on corpus " +
                std::to_string(ckpt.corpus_id) + " but the supplied corpus is " +
                std::to_string(want.corpus_id));
  check_arg(ckpt.codebook_hash == want.codebook_hash,
            what + ": lineage mismatch, the unit codebook differs from the one "
                   "the checkpoint was trained with");
}

void save_m2s(const std::string& path, const m2s::M2SModel& model,
              const Lineage& lineage) {
  binio::Writer w(path);
  write_header(w, kKindM2S, lineage);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(model.config.input_space));
  w.pod<std::int32_t>(model.config.hidden);
  w.pod<std::int32_t>(model.config.n_blocks);
  w.pod<std::int32_t>(model.config.n_heads);
  w.pod<std::int32_t>(model.config.conv_kernel);
  w.pod<std::int32_t>(model.config.n_units);
  w.pod<std::int32_t>(model.input_dim);
  w.f64_matrix(model.mel_mu);
  w.f64_matrix(model.mel_sigma);
  write_params(w, model.params());
  w.close();
}

M2SCheckpoint load_m2s(const std::string& path) {
  binio::Reader r(path);
  M2SCheckpoint out;
  out.lineage = read_header(r, kKindM2S);
  m2s::M2SConfig config;
  auto space = r.pod<std::uint32_t>();
  if (space > 2) throw FormatError("bad input space in file: " + path);
  config.input_space = static_cast<m2s::InputSpace>(space);
  config.hidden = r.pod<std::int32_t>();
  config.n_blocks = r.pod<std::int32_t>();
  config.n_heads = r.pod<std::int32_t>();
  config.conv_kernel = r.pod<std::int32_t>();
  config.n_units = r.pod<std::int32_t>();
  int input_dim = r.pod<std::int32_t>();
  try {
    config.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError("invalid configuration in file: " + path + ": " + e.what());
  }
  if (input_dim < 1) throw FormatError("bad input width in file: " + path);
  out.model.init(config, input_dim, 0);
  out.model.mel_mu = read_rowvec(r, out.model.mel_mu.cols());
  out.model.mel_sigma = read_rowvec(r, out.model.mel_sigma.cols());
  read_params(r, out.model.params());
  r.expect_eof();
  return out;
}

void save_thunder(const std::string& path, const diffusion::DenoiserModel& model,
                  const Lineage& lineage) {
  binio::Writer w(path);
  write_header(w, kKindThunder, lineage);
  w.pod<std::int32_t>(model.config.layers);
  w.pod<std::int32_t>(model.config.heads);
  w.pod<std::int32_t>(model.config.f);
  w.pod<double>(model.config.cond_dropout_prob);
  w.pod<double>(model.config.w_m2s);
  w.pod<std::uint8_t>(model.config.with_m2s ? 1 : 0);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(model.config.encoder_mode));
  w.pod<std::int32_t>(model.schedule.steps);
  w.f64_matrix(model.schedule.beta.transpose());
  w.f64_matrix(model.schedule.alpha.transpose());
  w.pod<std::int32_t>(model.x_dim);
  w.pod<std::int32_t>(model.d_audio);
  w.f64_matrix(model.x_mu);
  w.f64_matrix(model.x_sigma);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(model.encoder.mode));
  w.pod<std::int32_t>(model.encoder.d_s);
  const audio::AudioEncoder& enc = model.encoder;
  for (const Mat* m : {&enc.w1, &enc.b1, &enc.w2, &enc.b2, &enc.w3, &enc.b3})
    w.f64_matrix(*m);
  write_params(w, model.params());
  w.close();
}

ThunderCheckpoint load_thunder(const std::string& path) {
  binio::Reader r(path);
  ThunderCheckpoint out;
  out.lineage = read_header(r, kKindThunder);

  diffusion::DenoiserConfig config;
  config.layers = r.pod<std::int32_t>();
  config.heads = r.pod<std::int32_t>();
  config.f = r.pod<std::int32_t>();
  config.cond_dropout_prob = r.pod<double>();
  config.w_m2s = r.pod<double>();
  config.with_m2s = r.pod<std::uint8_t>() != 0;
  auto enc_mode = r.pod<std::uint32_t>();
  if (enc_mode > 1) throw FormatError("bad encoder mode in file: " + path);
  config.encoder_mode = static_cast<audio::EncoderMode>(enc_mode);
  try {
    config.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError("invalid configuration in file: " + path + ": " + e.what());
  }

  diffusion::NoiseSchedule schedule;
  schedule.steps = r.pod<std::int32_t>();
  Mat beta = r.f64_matrix();
  Mat alpha = r.f64_matrix();
  if (beta.rows() != 1 || alpha.rows() != 1 ||
      beta.cols() != schedule.steps + 1 || alpha.cols() != schedule.steps + 1)
    throw FormatError("noise schedule shape mismatch in file: " + path);
  schedule.beta = beta.row(0).transpose();
  schedule.alpha = alpha.row(0).transpose();
  try {
    schedule.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError("invalid noise schedule in file: " + path + ": " + e.what());
  }

  int x_dim = r.pod<std::int32_t>();
  int d_audio = r.pod<std::int32_t>();
  if (x_dim < 4) throw FormatError("bad sequence width in file: " + path);
  Mat x_mu = r.f64_matrix();
  Mat x_sigma = r.f64_matrix();

  audio::AudioEncoder encoder;
  auto stored_mode = r.pod<std::uint32_t>();
  if (stored_mode > 1) throw FormatError("bad encoder mode in file: " + path);
  int d_s = r.pod<std::int32_t>();
  if (d_s < 1 || d_s != d_audio)
    throw FormatError("encoder width mismatch in file: " + path);
  encoder =
      audio::AudioEncoder::init(0, d_s, static_cast<audio::EncoderMode>(stored_mode));
  for (Mat* m : {&encoder.w1, &encoder.b1, &encoder.w2, &encoder.b2, &encoder.w3,
                 &encoder.b3}) {
    Mat got = r.f64_matrix();
    if (got.rows() != m->rows() || got.cols() != m->cols())
      throw FormatError("parameter shape mismatch in file: " + path);
    *m = std::move(got);
  }

  out.model.init(config, schedule, x_dim, encoder, 0);
  if (x_mu.rows() != 1 || x_mu.cols() != x_dim || x_sigma.rows() != 1 ||
      x_sigma.cols() != x_dim)
    throw FormatError("statistics shape mismatch in file: " + path);
  out.model.x_mu = x_mu.row(0);
  out.model.x_sigma = x_sigma.row(0);
  read_params(r, out.model.params());
  r.expect_eof();
  return out;
}

}  // namespace echoface::checkpoint
