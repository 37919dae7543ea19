#include "echoface/corpus.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "echoface/binio.hpp"

namespace echoface::corpus {

namespace {

Mat round_f32(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      out(r, c) = static_cast<double>(static_cast<float>(m(r, c)));
  return out;
}

Vec gaussian_kernel(double sigma, int* radius_out) {
  int radius = static_cast<int>(std::ceil(4.0 * sigma));
  Vec k(2 * radius + 1);
  for (int j = -radius; j <= radius; ++j)
    k(j + radius) = std::exp(-0.5 * j * j / (sigma * sigma));
  *radius_out = radius;
  return k;
}

// Interior standard deviation of Gaussian-smoothed unit white noise.
double smoothed_noise_std(double sigma) {
  int radius = 0;
  Vec k = gaussian_kernel(sigma, &radius);
  return k.norm() / k.sum();
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  throw InvalidArgument("unknown split");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw FormatError("unknown split name: " + name);
}

std::vector<int> Corpus::split_indices(Split s) const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) idx.push_back(static_cast<int>(i));
  return idx;
}

Mat gaussian_smooth_rows(const Mat& x, double sigma) {
  check_arg(sigma > 0.0, "smooth: sigma must be positive");
  int radius = 0;
  Vec k = gaussian_kernel(sigma, &radius);
  const Eigen::Index t_len = x.rows();
  Mat out = Mat::Zero(t_len, x.cols());
  for (Eigen::Index t = 0; t < t_len; ++t) {
    double wsum = 0.0;
    for (int j = -radius; j <= radius; ++j) {
      Eigen::Index src = t + j;
      if (src < 0 || src >= t_len) continue;
      double w = k(j + radius);
      out.row(t) += w * x.row(src);
      wsum += w;
    }
    out.row(t) /= wsum;
  }
  return out;
}

std::vector<PhonemeSpec> make_phoneme_bank(int n_phonemes, int viseme_dim,
                                           std::uint64_t seed,
                                           double min_mel_separation) {
  check_arg(n_phonemes >= 2, "phoneme bank: need at least two phonemes");
  check_arg(viseme_dim >= 2, "phoneme bank: viseme needs mouth channels plus jaw");
  RandomStream rng(derive_seed(seed, 0x9b0e));

  std::vector<PhonemeSpec> bank;
  PhonemeSpec silence;
  silence.id = 0;
  silence.viseme = Vec::Zero(viseme_dim);
  silence.mel_template = Vec::Constant(audio::kMelBins, audio::kLogFloor);
  silence.unit_id = 0;
  bank.push_back(silence);

  auto min_dist = [](const Vec& v, const std::vector<PhonemeSpec>& b, bool mel) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : b)
      best = std::min(best, (v - (mel ? p.mel_template : p.viseme)).norm());
    return best;
  };

  for (int id = 1; id < n_phonemes; ++id) {
    PhonemeSpec p;
    p.id = id;
    p.unit_id = id;
    for (int attempt = 0;; ++attempt) {
      check_arg(attempt < 100000, "phoneme bank: viseme rejection sampling stuck");
      Vec v(viseme_dim);
      for (int c = 0; c + 1 < viseme_dim; ++c) v(c) = rng.uniform(-0.8, 0.8);
      v(viseme_dim - 1) = rng.uniform(0.08, 0.35);
      if (min_dist(v, bank, false) >= 0.5) {
        p.viseme = v;
        break;
      }
    }
    for (int attempt = 0;; ++attempt) {
      check_arg(attempt < 100000, "phoneme bank: mel rejection sampling stuck");
      Vec m(audio::kMelBins);
      for (int b = 0; b < audio::kMelBins; ++b) {
        double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        m(b) = -4.5 + 5.5 * sign + rng.uniform(-0.3, 0.3);
      }
      if (min_dist(m, bank, true) >= min_mel_separation) {
        p.mel_template = m;
        break;
      }
    }
    bank.push_back(p);
  }
  return bank;
}

Utterance make_utterance(RandomStream& rng, int n_phonemes, int t_min, int t_max) {
  check_arg(t_max >= t_min + 3 && t_min >= 4, "utterance: bad length bounds");
  Utterance utt;
  int target = t_min + static_cast<int>(rng.index(
                           static_cast<std::uint64_t>(t_max - 3 - t_min + 1)));
  int total = 0;
  while (total < target) {
    int id = static_cast<int>(rng.index(static_cast<std::uint64_t>(n_phonemes)));
    int d = 3 + static_cast<int>(rng.index(8));
    d = std::min(d, t_max - total);
    utt.phoneme_ids.push_back(id);
    utt.durations.push_back(d);
    total += d;
  }
  return utt;
}

SequenceRecord synth_sequence(const Utterance& utt, int speaker_id,
                              const CorpusManifest& manifest, std::uint64_t seed,
                              double noise_sigma_override) {
  check_arg(!utt.phoneme_ids.empty() &&
                utt.phoneme_ids.size() == utt.durations.size(),
            "synth: malformed utterance");
  if (speaker_id < 0 || speaker_id >= static_cast<int>(manifest.speakers.size()))
    throw NotFoundError("synth: unknown speaker id " + std::to_string(speaker_id));
  const auto& cfg = manifest.config;
  for (std::size_t i = 0; i < utt.phoneme_ids.size(); ++i) {
    check_arg(utt.phoneme_ids[i] >= 0 &&
                  utt.phoneme_ids[i] < static_cast<int>(manifest.bank.size()),
              "synth: phoneme id out of range");
    check_arg(utt.durations[i] >= 3 && utt.durations[i] <= 10,
              "synth: phoneme duration outside [3, 10]");
  }
  const int t_len = utt.total_frames();
  check_arg(t_len <= cfg.t_max, "synth: utterance exceeds configured max length");

  const FaceTemplate& face = manifest.face;
  const int n_mc = face.n_mouth_channels;
  const int n_uc = face.n_upper_channels;
  const int psi_dim = face.psi_dim();
  const double noise_sigma =
      noise_sigma_override >= 0.0 ? noise_sigma_override : cfg.mel_noise_sigma;

  // Per-frame phoneme index at 25 fps.
  std::vector<int> frame_phoneme(static_cast<std::size_t>(t_len));
  {
    int t = 0;
    for (std::size_t i = 0; i < utt.phoneme_ids.size(); ++i)
      for (int d = 0; d < utt.durations[i]; ++d)
        frame_phoneme[static_cast<std::size_t>(t++)] = utt.phoneme_ids[i];
  }

  // Mouth channels and jaw: smoothed piecewise-constant viseme targets.
  Mat targets(t_len, n_mc + 1);
  for (int t = 0; t < t_len; ++t)
    targets.row(t) =
        manifest.bank[static_cast<std::size_t>(frame_phoneme[static_cast<std::size_t>(t)])]
            .viseme.transpose();
  Mat smooth = gaussian_smooth_rows(targets, cfg.viseme_smooth_sigma);

  Mat expr = Mat::Zero(t_len, psi_dim + 3);
  expr.middleCols(0, n_mc) = smooth.middleCols(0, n_mc);
  expr.col(psi_dim) = smooth.col(n_mc);  // jaw rotation about x

  // Upper-face channels: smoothed white noise, utterance-independent.
  RandomStream upper_rng(derive_seed(seed, 0x0bbe));
  Mat white(t_len, n_uc);
  for (int t = 0; t < t_len; ++t)
    for (int c = 0; c < n_uc; ++c) white(t, c) = upper_rng.normal();
  double gain = cfg.upper_amplitude / smoothed_noise_std(cfg.upper_smooth_sigma);
  expr.middleCols(n_mc, n_uc) =
      gain * gaussian_smooth_rows(white, cfg.upper_smooth_sigma);

  // Mel: templates + speaker tilt (+ noise), each 25 fps frame giving two
  // 50 Hz frames; units quantize the pre-noise mel.
  const Vec& tilt = manifest.speakers[static_cast<std::size_t>(speaker_id)].tilt;
  RandomStream mel_rng(derive_seed(seed, 0x3e1));
  Mat clean(2 * t_len, audio::kMelBins), noisy(2 * t_len, audio::kMelBins);
  for (int t50 = 0; t50 < 2 * t_len; ++t50) {
    const Vec& tpl =
        manifest.bank[static_cast<std::size_t>(frame_phoneme[static_cast<std::size_t>(t50 / 2)])]
            .mel_template;
    for (int b = 0; b < audio::kMelBins; ++b) {
      double base = tpl(b) + tilt(b);
      clean(t50, b) = std::max(base, audio::kLogFloor);
      noisy(t50, b) =
          std::max(base + noise_sigma * mel_rng.normal(), audio::kLogFloor);
    }
  }

  SequenceRecord rec;
  rec.expressions = round_f32(expr);
  rec.mel = round_f32(noisy);
  rec.units = audio::quantize_units(clean, manifest.codebook);
  rec.speaker_id = speaker_id;
  rec.utterance = utt;
  return rec;
}

Corpus make_corpus(const CorpusConfig& config) {
  check_arg(config.n_speakers >= 3, "corpus: need at least 3 speakers for disjoint splits");
  check_arg(config.n_speakers <= 4, "corpus: at most 4 speakers supported");
  check_arg(config.tilt_amplitude >= 1.0, "corpus: tilt amplitude too small");
  check_arg(config.n_phonemes >= 2 && config.n_phonemes <= config.n_units,
            "corpus: need 2 <= n_phonemes <= n_units");
  check_arg(config.n_train >= 1 && config.n_val >= 1 && config.n_test >= 1,
            "corpus: each split needs at least one sequence");

  Corpus corpus;
  CorpusManifest& man = corpus.manifest;
  man.config = config;
  man.face = make_synthetic_template(derive_seed(config.seed, 1), config.n_v,
                                     config.psi_dim);

  double tilt_norm =
      config.tilt_amplitude * std::sqrt(static_cast<double>(audio::kMelBins));
  double min_sep = 2.0 * tilt_norm + 2.0;
  man.bank = make_phoneme_bank(config.n_phonemes, man.face.n_mouth_channels + 1,
                               derive_seed(config.seed, 2), min_sep);

  // Codebook centroid u is the mel template of the phoneme with unit id u;
  // surplus centroids sit far outside the data range.
  Mat centroids(config.n_units, audio::kMelBins);
  for (const auto& p : man.bank) centroids.row(p.unit_id) = p.mel_template.transpose();
  for (int u = config.n_phonemes; u < config.n_units; ++u) {
    centroids.row(u).setConstant(audio::kLogFloor);
    centroids(u, u - config.n_phonemes) = 150.0;
  }
  man.codebook = audio::UnitCodebook{centroids};
  man.codebook.validate();

  // Speaker spectral tilts: simplex-arranged combinations of three mutually
  // orthogonal +/- bit patterns. Pairwise tilt inner products are -1/3 of the
  // squared norm, which spreads the speaker embeddings further apart than
  // orthogonal tilts of the same norm would.
  static const int kSimplex[4][3] = {
      {+1, +1, +1}, {+1, -1, -1}, {-1, +1, -1}, {-1, -1, +1}};
  for (int s = 0; s < config.n_speakers; ++s) {
    SpeakerProfile prof;
    prof.tilt = Vec(audio::kMelBins);
    for (int b = 0; b < audio::kMelBins; ++b) {
      double v = 0.0;
      for (int k = 0; k < 3; ++k)
        v += kSimplex[s][k] * (((b >> k) & 1) ? -1.0 : 1.0);
      prof.tilt(b) = config.tilt_amplitude / std::sqrt(3.0) * v;
    }
    if (s < config.n_speakers - 2)
      prof.split = Split::kTrain;
    else if (s == config.n_speakers - 2)
      prof.split = Split::kVal;
    else
      prof.split = Split::kTest;
    man.speakers.push_back(prof);
  }
  for (auto& prof : man.speakers) {
    Mat calib(4 * static_cast<int>(man.bank.size()), audio::kMelBins);
    for (std::size_t p = 0; p < man.bank.size(); ++p)
      for (int rep = 0; rep < 4; ++rep)
        calib.row(4 * static_cast<Eigen::Index>(p) + rep) =
            (man.bank[p].mel_template + prof.tilt)
                .cwiseMax(audio::kLogFloor)
                .transpose();
    prof.embedding = audio::speaker_embedding(calib);
  }

  std::vector<int> train_speakers, val_speakers, test_speakers;
  for (int s = 0; s < config.n_speakers; ++s) {
    if (man.speakers[static_cast<std::size_t>(s)].split == Split::kTrain)
      train_speakers.push_back(s);
    else if (man.speakers[static_cast<std::size_t>(s)].split == Split::kVal)
      val_speakers.push_back(s);
    else
      test_speakers.push_back(s);
  }

  const int total = config.n_train + config.n_val + config.n_test;
  for (int r = 0; r < total; ++r) {
    Split split;
    int speaker;
    if (r < config.n_train) {
      split = Split::kTrain;
      speaker = train_speakers[static_cast<std::size_t>(r) % train_speakers.size()];
    } else if (r < config.n_train + config.n_val) {
      split = Split::kVal;
      speaker = val_speakers[static_cast<std::size_t>(r) % val_speakers.size()];
    } else {
      split = Split::kTest;
      speaker = test_speakers[static_cast<std::size_t>(r) % test_speakers.size()];
    }
    std::uint64_t seq_seed = derive_seed(config.seed, static_cast<std::uint64_t>(r));
    RandomStream utt_rng(derive_seed(seq_seed, 7));
    Utterance utt =
        make_utterance(utt_rng, config.n_phonemes, config.t_min, config.t_max);
    corpus.records.push_back(synth_sequence(utt, speaker, man, seq_seed));
    corpus.splits.push_back(split);
  }

  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a64(&config.seed, sizeof(config.seed), h);
  h = hash_matrix(man.face.vertices, h);
  h = hash_matrix(man.face.basis, h);
  h = hash_matrix(man.codebook.centroids, h);
  for (const auto& p : man.bank) {
    h = hash_matrix(p.viseme, h);
    h = hash_matrix(p.mel_template, h);
  }
  for (const auto& prof : man.speakers) h = hash_matrix(prof.tilt, h);
  for (const auto& rec : corpus.records) {
    h = hash_matrix(rec.expressions, h);
    h = hash_matrix(rec.mel, h);
  }
  man.corpus_id = h;
  return corpus;
}

void write_sequence(const std::string& path, const SequenceRecord& rec,
                    int psi_dim, int n_units) {
  const auto t_len = static_cast<std::uint32_t>(rec.expressions.rows());
  check_arg(rec.expressions.cols() == psi_dim + 3, "sequence: expression width");
  check_arg(rec.mel.rows() == 2 * rec.expressions.rows(), "sequence: mel must be 2T");
  check_arg(static_cast<Eigen::Index>(rec.units.size()) == rec.mel.rows(),
            "sequence: unit count must match mel frames");
  binio::Writer w(path);
  w.magic("THSQ");
  w.pod<std::uint32_t>(1);
  w.pod<std::uint32_t>(t_len);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(psi_dim));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(rec.mel.rows()));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(rec.mel.cols()));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(n_units));
  w.pod<std::uint16_t>(static_cast<std::uint16_t>(rec.speaker_id));
  w.pod<std::uint16_t>(0);
  w.f32_matrix(rec.expressions);
  w.f32_matrix(rec.mel);
  for (int u : rec.units) w.pod<std::uint16_t>(static_cast<std::uint16_t>(u));
  w.close();
}

SequenceRecord read_sequence(const std::string& path, int* n_units_out) {
  binio::Reader r(path);
  r.expect_magic("THSQ");
  auto version = r.pod<std::uint32_t>();
  if (version != 1)
    throw FormatError("unsupported sequence version in file: " + path);
  auto t_len = r.pod<std::uint32_t>();
  auto psi_dim = r.pod<std::uint32_t>();
  auto mel_frames = r.pod<std::uint32_t>();
  auto mel_bins = r.pod<std::uint32_t>();
  auto n_units = r.pod<std::uint32_t>();
  auto speaker = r.pod<std::uint16_t>();
  r.pod<std::uint16_t>();  // reserved
  if (t_len < 1 || t_len > (1u << 20) || psi_dim < 1 || psi_dim > 4096 ||
      mel_bins != audio::kMelBins || mel_frames != 2 * t_len || n_units < 1)
    throw FormatError("implausible sequence header in file: " + path);
  SequenceRecord rec;
  rec.expressions = r.f32_matrix(t_len, psi_dim + 3);
  rec.mel = r.f32_matrix(mel_frames, mel_bins);
  rec.units.resize(mel_frames);
  for (auto& u : rec.units) {
    u = r.pod<std::uint16_t>();
    if (u >= static_cast<int>(n_units))
      throw FormatError("unit id out of range in file: " + path);
  }
  r.expect_eof();
  rec.speaker_id = speaker;
  if (n_units_out != nullptr) *n_units_out = static_cast<int>(n_units);
  return rec;
}

void write_face_template(const std::string& path, const FaceTemplate& tpl) {
  binio::Writer w(path);
  w.magic("EFTP");
  w.pod<std::uint32_t>(1);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(tpl.n_v()));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(tpl.psi_dim()));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(tpl.n_mouth_channels));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(tpl.n_upper_channels));
  w.pod<std::int32_t>(tpl.upper_lip_mid);
  w.pod<std::int32_t>(tpl.lower_lip_mid);
  w.f64_matrix(tpl.vertices);
  w.f64_matrix(tpl.basis);
  w.f64_matrix(tpl.jaw_weights);
  w.f64_matrix(tpl.jaw_pivot);
  w.pod<std::uint64_t>(static_cast<std::uint64_t>(tpl.faces.rows()));
  for (Eigen::Index f = 0; f < tpl.faces.rows(); ++f)
    for (int c = 0; c < 3; ++c) w.pod<std::int32_t>(tpl.faces(f, c));
  auto write_set = [&w](const std::vector<int>& v) {
    w.pod<std::uint64_t>(v.size());
    for (int i : v) w.pod<std::int32_t>(i);
  };
  write_set(tpl.mouth_idx);
  write_set(tpl.lip_idx);
  write_set(tpl.upper_idx);
  w.close();
}

FaceTemplate read_face_template(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic("EFTP");
  if (r.pod<std::uint32_t>() != 1)
    throw FormatError("unsupported template version in file: " + path);
  FaceTemplate tpl;
  r.pod<std::uint32_t>();  // n_v, implied by matrices
  r.pod<std::uint32_t>();  // psi_dim
  tpl.n_mouth_channels = static_cast<int>(r.pod<std::uint32_t>());
  tpl.n_upper_channels = static_cast<int>(r.pod<std::uint32_t>());
  tpl.upper_lip_mid = r.pod<std::int32_t>();
  tpl.lower_lip_mid = r.pod<std::int32_t>();
  tpl.vertices = r.f64_matrix();
  tpl.basis = r.f64_matrix();
  Mat weights = r.f64_matrix();
  if (weights.cols() != 1)
    throw FormatError("bad jaw weight shape in file: " + path);
  tpl.jaw_weights = weights.col(0);
  Mat pivot = r.f64_matrix();
  if (pivot.rows() != 3 || pivot.cols() != 1)
    throw FormatError("bad jaw pivot shape in file: " + path);
  tpl.jaw_pivot = pivot.col(0);
  auto n_f = r.pod<std::uint64_t>();
  if (n_f > (1u << 24)) throw FormatError("implausible face count in file: " + path);
  tpl.faces.resize(static_cast<Eigen::Index>(n_f), 3);
  for (Eigen::Index f = 0; f < tpl.faces.rows(); ++f)
    for (int c = 0; c < 3; ++c) tpl.faces(f, c) = r.pod<std::int32_t>();
  auto read_set = [&r](std::vector<int>& v) {
    auto n = r.pod<std::uint64_t>();
    if (n > (1u << 24)) throw FormatError("implausible index set in file");
    v.resize(n);
    for (auto& i : v) i = r.pod<std::int32_t>();
  };
  read_set(tpl.mouth_idx);
  read_set(tpl.lip_idx);
  read_set(tpl.upper_idx);
  r.expect_eof();
  tpl.validate();
  return tpl;
}

void write_phoneme_bank(const std::string& path, const std::vector<PhonemeSpec>& bank) {
  binio::Writer w(path);
  w.magic("EFPB");
  w.pod<std::uint32_t>(1);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(bank.size()));
  for (const auto& p : bank) {
    w.pod<std::int32_t>(p.id);
    w.pod<std::int32_t>(p.unit_id);
    w.f64_matrix(p.viseme);
    w.f64_matrix(p.mel_template);
  }
  w.close();
}

std::vector<PhonemeSpec> read_phoneme_bank(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic("EFPB");
  if (r.pod<std::uint32_t>() != 1)
    throw FormatError("unsupported phoneme bank version in file: " + path);
  auto n = r.pod<std::uint32_t>();
  if (n < 2 || n > 4096)
    throw FormatError("implausible phoneme count in file: " + path);
  auto read_vec = [&r, &path]() {
    Mat m = r.f64_matrix();
    if (m.cols() != 1) throw FormatError("bad vector shape in file: " + path);
    return Vec(m.col(0));
  };
  std::vector<PhonemeSpec> bank(n);
  for (auto& p : bank) {
    p.id = r.pod<std::int32_t>();
    p.unit_id = r.pod<std::int32_t>();
    p.viseme = read_vec();
    p.mel_template = read_vec();
  }
  r.expect_eof();
  return bank;
}

void write_codebook(const std::string& path, const audio::UnitCodebook& cb) {
  binio::Writer w(path);
  w.magic("EFCB");
  w.pod<std::uint32_t>(1);
  w.f64_matrix(cb.centroids);
  w.close();
}

audio::UnitCodebook read_codebook(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic("EFCB");
  if (r.pod<std::uint32_t>() != 1)
    throw FormatError("unsupported codebook version in file: " + path);
  audio::UnitCodebook cb{r.f64_matrix()};
  r.expect_eof();
  cb.validate();
  return cb;
}

namespace {

void write_manifest(const std::string& path, const Corpus& corpus) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  const auto& man = corpus.manifest;
  const auto& cfg = man.config;
  f << "echoface-corpus v1\n";
  char idbuf[20];
  std::snprintf(idbuf, sizeof(idbuf), "%016" PRIx64, man.corpus_id);
  f << "corpus_id " << idbuf << "\n";
  f << "config seed " << cfg.seed << "\n";
  f << "config n_v " << cfg.n_v << "\n";
  f << "config psi_dim " << cfg.psi_dim << "\n";
  f << "config n_phonemes " << cfg.n_phonemes << "\n";
  f << "config n_units " << cfg.n_units << "\n";
  f << "config n_speakers " << cfg.n_speakers << "\n";
  f << "config n_train " << cfg.n_train << "\n";
  f << "config n_val " << cfg.n_val << "\n";
  f << "config n_test " << cfg.n_test << "\n";
  f << "config t_min " << cfg.t_min << "\n";
  f << "config t_max " << cfg.t_max << "\n";
  f << "config mel_noise_sigma " << fmt_double(cfg.mel_noise_sigma) << "\n";
  f << "config upper_amplitude " << fmt_double(cfg.upper_amplitude) << "\n";
  f << "config viseme_smooth_sigma " << fmt_double(cfg.viseme_smooth_sigma) << "\n";
  f << "config upper_smooth_sigma " << fmt_double(cfg.upper_smooth_sigma) << "\n";
  f << "config tilt_amplitude " << fmt_double(cfg.tilt_amplitude) << "\n";
  f << "template template.eftp\n";
  f << "phonemes phonemes.efpb\n";
  f << "codebook codebook.efcb\n";
  f << "speakers " << man.speakers.size() << "\n";
  for (std::size_t s = 0; s < man.speakers.size(); ++s) {
    const auto& prof = man.speakers[s];
    f << "speaker " << s << " " << split_name(prof.split) << " tilt";
    for (int b = 0; b < prof.tilt.size(); ++b) f << " " << fmt_double(prof.tilt(b));
    f << " embedding";
    for (int b = 0; b < prof.embedding.size(); ++b)
      f << " " << fmt_double(prof.embedding(b));
    f << "\n";
  }
  f << "sequences " << corpus.records.size() << "\n";
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    const auto& rec = corpus.records[i];
    char name[40];
    std::snprintf(name, sizeof(name), "seq/seq_%05zu.thsq", i);
    f << "seq " << i << " " << name << " " << rec.speaker_id << " "
      << split_name(corpus.splits[i]) << " " << rec.frames() << " utterance";
    for (std::size_t p = 0; p < rec.utterance.phoneme_ids.size(); ++p)
      f << " " << rec.utterance.phoneme_ids[p] << ":" << rec.utterance.durations[p];
    f << "\n";
  }
  f << "end\n";
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "seq", ec);
  if (ec) throw IoError("cannot create corpus directory: " + dir);
  write_face_template((fs::path(dir) / "template.eftp").string(), corpus.manifest.face);
  write_phoneme_bank((fs::path(dir) / "phonemes.efpb").string(), corpus.manifest.bank);
  write_codebook((fs::path(dir) / "codebook.efcb").string(), corpus.manifest.codebook);
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    char name[40];
    std::snprintf(name, sizeof(name), "seq_%05zu.thsq", i);
    write_sequence((fs::path(dir) / "seq" / name).string(), corpus.records[i],
                   corpus.manifest.config.psi_dim, corpus.manifest.config.n_units);
  }
  write_manifest((fs::path(dir) / "manifest.txt").string(), corpus);
}

Corpus load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  std::string man_path = (fs::path(dir) / "manifest.txt").string();
  std::ifstream f(man_path);
  if (!f) throw IoError("cannot open for reading: " + man_path);

  Corpus corpus;
  CorpusManifest& man = corpus.manifest;
  std::string line;
  if (!std::getline(f, line) || line != "echoface-corpus v1")
    throw FormatError("bad corpus manifest header: " + man_path);

  std::string tpl_file, bank_file, cb_file;
  std::vector<std::string> seq_files;
  std::vector<int> seq_speakers;
  bool saw_end = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "corpus_id") {
      std::string hex;
      ss >> hex;
      man.corpus_id = std::stoull(hex, nullptr, 16);
    } else if (key == "config") {
      std::string name;
      ss >> name;
      auto& cfg = man.config;
      if (name == "seed") ss >> cfg.seed;
      else if (name == "n_v") ss >> cfg.n_v;
      else if (name == "psi_dim") ss >> cfg.psi_dim;
      else if (name == "n_phonemes") ss >> cfg.n_phonemes;
      else if (name == "n_units") ss >> cfg.n_units;
      else if (name == "n_speakers") ss >> cfg.n_speakers;
      else if (name == "n_train") ss >> cfg.n_train;
      else if (name == "n_val") ss >> cfg.n_val;
      else if (name == "n_test") ss >> cfg.n_test;
      else if (name == "t_min") ss >> cfg.t_min;
      else if (name == "t_max") ss >> cfg.t_max;
      else if (name == "mel_noise_sigma") ss >> cfg.mel_noise_sigma;
      else if (name == "upper_amplitude") ss >> cfg.upper_amplitude;
      else if (name == "viseme_smooth_sigma") ss >> cfg.viseme_smooth_sigma;
      else if (name == "upper_smooth_sigma") ss >> cfg.upper_smooth_sigma;
      else if (name == "tilt_amplitude") ss >> cfg.tilt_amplitude;
      else throw FormatError("unknown config key in manifest: " + name);
    } else if (key == "template") {
      ss >> tpl_file;
    } else if (key == "phonemes") {
      ss >> bank_file;
    } else if (key == "codebook") {
      ss >> cb_file;
    } else if (key == "speakers") {
      std::size_t n;
      ss >> n;
      man.speakers.reserve(n);
    } else if (key == "speaker") {
      int id;
      std::string split, tag;
      ss >> id >> split >> tag;
      if (tag != "tilt") throw FormatError("malformed speaker line: " + man_path);
      SpeakerProfile prof;
      prof.split = split_from_name(split);
      prof.tilt = Vec(audio::kMelBins);
      for (int b = 0; b < audio::kMelBins; ++b) ss >> prof.tilt(b);
      ss >> tag;
      if (tag != "embedding") throw FormatError("malformed speaker line: " + man_path);
      prof.embedding = Vec(16);
      for (int b = 0; b < 16; ++b) ss >> prof.embedding(b);
      if (!ss) throw FormatError("malformed speaker line: " + man_path);
      if (id != static_cast<int>(man.speakers.size()))
        throw FormatError("speaker ids out of order in manifest: " + man_path);
      man.speakers.push_back(prof);
    } else if (key == "sequences") {
      std::size_t n;
      ss >> n;
      seq_files.reserve(n);
    } else if (key == "seq") {
      std::size_t idx;
      std::string file, split, tag;
      int speaker, frames;
      ss >> idx >> file >> speaker >> split >> frames >> tag;
      if (tag != "utterance" || !ss)
        throw FormatError("malformed sequence line: " + man_path);
      if (idx != seq_files.size())
        throw FormatError("sequence ids out of order in manifest: " + man_path);
      seq_files.push_back(file);
      seq_speakers.push_back(speaker);
      corpus.splits.push_back(split_from_name(split));
      Utterance utt;
      std::string pair;
      while (ss >> pair) {
        auto colon = pair.find(':');
        if (colon == std::string::npos)
          throw FormatError("malformed utterance entry in manifest: " + man_path);
        utt.phoneme_ids.push_back(std::stoi(pair.substr(0, colon)));
        utt.durations.push_back(std::stoi(pair.substr(colon + 1)));
      }
      corpus.records.emplace_back();
      corpus.records.back().utterance = utt;
      corpus.records.back().speaker_id = speaker;
    } else if (key == "end") {
      saw_end = true;
    } else {
      throw FormatError("unknown manifest key: " + key);
    }
  }
  if (!saw_end) throw FormatError("corpus manifest missing end marker: " + man_path);
  if (tpl_file.empty() || bank_file.empty() || cb_file.empty())
    throw FormatError("corpus manifest missing component files: " + man_path);

  man.face = read_face_template((fs::path(dir) / tpl_file).string());
  man.bank = read_phoneme_bank((fs::path(dir) / bank_file).string());
  man.codebook = read_codebook((fs::path(dir) / cb_file).string());

  for (std::size_t i = 0; i < seq_files.size(); ++i) {
    int n_units = 0;
    SequenceRecord rec =
        read_sequence((fs::path(dir) / seq_files[i]).string(), &n_units);
    if (n_units != man.config.n_units)
      throw FormatError("sequence unit dimension disagrees with manifest: " +
                        seq_files[i]);
    rec.utterance = corpus.records[i].utterance;
    if (rec.speaker_id != seq_speakers[i])
      throw FormatError("sequence speaker disagrees with manifest: " + seq_files[i]);
    corpus.records[i] = std::move(rec);
  }

  // Split hygiene: the splits recorded per sequence must agree with the
  // per-speaker assignment, which is disjoint by construction.
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    int s = corpus.records[i].speaker_id;
    if (s < 0 || s >= static_cast<int>(man.speakers.size()))
      throw FormatError("sequence references unknown speaker: " + seq_files[i]);
    if (man.speakers[static_cast<std::size_t>(s)].split != corpus.splits[i])
      throw FormatError("sequence split disagrees with speaker split: " + seq_files[i]);
  }
  return corpus;
}

}  // namespace echoface::corpus
