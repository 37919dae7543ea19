#include "echoface/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace echoface::audio {

namespace {

constexpr int kBins = kWindow / 2 + 1;  // 321 one-sided DFT bins
constexpr int kKernel = 5;

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

const Mat& dft_cos() {
  static const Mat c = [] {
    Mat m(kBins, kWindow);
    for (int k = 0; k < kBins; ++k)
      for (int n = 0; n < kWindow; ++n)
        m(k, n) = std::cos(2.0 * M_PI * k * n / kWindow);
    return m;
  }();
  return c;
}

const Mat& dft_sin() {
  static const Mat s = [] {
    Mat m(kBins, kWindow);
    for (int k = 0; k < kBins; ++k)
      for (int n = 0; n < kWindow; ++n)
        m(k, n) = -std::sin(2.0 * M_PI * k * n / kWindow);
    return m;
  }();
  return s;
}

const Vec& hann_window() {
  static const Vec w = [] {
    Vec v(kWindow);
    for (int n = 0; n < kWindow; ++n)
      v(n) = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / kWindow);
    return v;
  }();
  return w;
}

// Ordered (canonical-sum) column statistics so results are exactly invariant
// to frame permutation.
void sorted_column_stats(const Mat& mel, Vec& mean, Vec& stddev) {
  const Eigen::Index n = mel.rows();
  mean.resize(mel.cols());
  stddev.resize(mel.cols());
  std::vector<double> buf(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < mel.cols(); ++c) {
    for (Eigen::Index r = 0; r < n; ++r) buf[static_cast<std::size_t>(r)] = mel(r, c);
    std::sort(buf.begin(), buf.end());
    double s = 0.0;
    for (double v : buf) s += v;
    double mu = s / static_cast<double>(n);
    double sq = 0.0;
    for (double v : buf) sq += (v - mu) * (v - mu);
    mean(c) = mu;
    stddev(c) = std::sqrt(sq / static_cast<double>(n - 1));
  }
}

}  // namespace

void UnitCodebook::validate() const {
  check_arg(centroids.rows() >= 2, "codebook: needs at least two centroids");
  check_arg(centroids.cols() == kMelBins, "codebook: centroid width must be 80");
  check_arg(centroids.allFinite(), "codebook: non-finite centroid");
  for (Eigen::Index i = 0; i < centroids.rows(); ++i)
    for (Eigen::Index j = i + 1; j < centroids.rows(); ++j)
      check_arg((centroids.row(i) - centroids.row(j)).norm() > 0.0,
                "codebook: duplicate centroids");
}

void validate_mel(const Mat& mel) {
  check_arg(mel.cols() == kMelBins, "mel: band count must be 80");
  check_arg(mel.rows() >= 2 && mel.rows() % 2 == 0,
            "mel: frame count must be even and at least 2");
  check_arg(mel.allFinite(), "mel: non-finite values");
  check_arg((mel.array() >= kLogFloor - 1e-12).all(), "mel: values below log floor");
}

Mat mel_filterbank() {
  Mat fb = Mat::Zero(kMelBins, kBins);
  double m_hi = hz_to_mel(kFreqMax);
  Vec edges(kMelBins + 2);
  for (int i = 0; i < kMelBins + 2; ++i)
    edges(i) = mel_to_hz(m_hi * i / (kMelBins + 1));
  for (int b = 0; b < kMelBins; ++b) {
    double lo = edges(b), mid = edges(b + 1), hi = edges(b + 2);
    for (int k = 0; k < kBins; ++k) {
      double f = static_cast<double>(k) * kSampleRate / kWindow;
      double w = std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid));
      fb(b, k) = std::max(0.0, w);
    }
  }
  return fb;
}

Vec mel_center_freqs() {
  double m_hi = hz_to_mel(kFreqMax);
  Vec centers(kMelBins);
  for (int b = 0; b < kMelBins; ++b)
    centers(b) = mel_to_hz(m_hi * (b + 1) / (kMelBins + 1));
  return centers;
}

Mat stft_mel(const Waveform& wave) {
  check_arg(static_cast<int>(wave.size()) >= kWindow,
            "stft_mel: waveform shorter than one window");
  for (double s : wave) {
    check_arg(std::isfinite(s), "stft_mel: non-finite sample");
    check_arg(std::abs(s) <= 1.0 + 1e-9, "stft_mel: sample outside [-1, 1]");
  }
  Eigen::Index frames = 1 + (static_cast<Eigen::Index>(wave.size()) - kWindow) / kHop;
  frames -= frames % 2;
  check_arg(frames >= 2, "stft_mel: waveform too short for an even frame count");

  static const Mat fb = mel_filterbank();
  Mat mel(frames, kMelBins);
  Vec frame(kWindow);
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (int n = 0; n < kWindow; ++n)
      frame(n) = wave[static_cast<std::size_t>(t * kHop + n)] * hann_window()(n);
    Vec re = dft_cos() * frame;
    Vec im = dft_sin() * frame;
    Vec power = re.array().square() + im.array().square();
    Vec energy = fb * power;
    for (int b = 0; b < kMelBins; ++b)
      mel(t, b) = std::max(std::log(std::max(energy(b), 1e-300)), kLogFloor);
  }
  return mel;
}

UnitCodebook fit_unit_codebook(const std::vector<Mat>& mels, int n_units,
                               std::uint64_t seed) {
  check_arg(n_units >= 1, "fit_units: n_units must be positive");
  Eigen::Index total = 0;
  for (const Mat& m : mels) {
    check_arg(m.cols() == kMelBins, "fit_units: mel band count must be 80");
    total += m.rows();
  }
  check_arg(total >= 10 * static_cast<Eigen::Index>(n_units),
            "fit_units: need at least 10 frames per unit");
  Mat x(total, kMelBins);
  Eigen::Index off = 0;
  for (const Mat& m : mels) {
    x.middleRows(off, m.rows()) = m;
    off += m.rows();
  }
  const Eigen::Index n = x.rows();

  RandomStream rng(derive_seed(seed, 0xc0de));
  Mat centroids(n_units, kMelBins);
  centroids.row(0) = x.row(static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n))));
  Vec best_d2 = (x.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < n_units; ++j) {
    double sum = best_d2.sum();
    Eigen::Index pick = 0;
    if (sum > 0.0) {
      double u = rng.uniform() * sum, acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += best_d2(i);
        if (acc >= u) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n)));
    }
    centroids.row(j) = x.row(pick);
    best_d2 = best_d2.cwiseMin((x.rowwise() - centroids.row(j)).rowwise().squaredNorm());
  }

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < 100; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = (x.row(i) - centroids.row(0)).squaredNorm();
      for (int j = 1; j < n_units; ++j) {
        double d = (x.row(i) - centroids.row(j)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      assign[static_cast<std::size_t>(i)] = best;
    }
    Mat sums = Mat::Zero(n_units, kMelBins);
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(n_units), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += x.row(i);
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    Mat next = centroids;
    for (int j = 0; j < n_units; ++j)
      if (counts[static_cast<std::size_t>(j)] > 0)
        next.row(j) = sums.row(j) / static_cast<double>(counts[static_cast<std::size_t>(j)]);
    // Deterministic empty-cluster repair: seize the point farthest from its
    // assigned centroid.
    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    for (int j = 0; j < n_units; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) continue;
      Eigen::Index far = -1;
      double fd = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (taken[static_cast<std::size_t>(i)]) continue;
        double d = (x.row(i) - next.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
        if (d > fd) {
          fd = d;
          far = i;
        }
      }
      next.row(j) = x.row(far);
      taken[static_cast<std::size_t>(far)] = true;
    }
    double shift = (next - centroids).rowwise().norm().maxCoeff();
    centroids = next;
    if (shift < 1e-6) break;
  }
  UnitCodebook cb{centroids};
  return cb;
}

std::vector<int> quantize_units(const Mat& mel, const UnitCodebook& codebook) {
  check_arg(mel.cols() == codebook.centroids.cols(),
            "quantize: mel width does not match codebook");
  std::vector<int> ids(static_cast<std::size_t>(mel.rows()));
  for (Eigen::Index t = 0; t < mel.rows(); ++t) {
    int best = 0;
    double bd = (mel.row(t) - codebook.centroids.row(0)).squaredNorm();
    for (int j = 1; j < codebook.n_units(); ++j) {
      double d = (mel.row(t) - codebook.centroids.row(j)).squaredNorm();
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    ids[static_cast<std::size_t>(t)] = best;
  }
  return ids;
}

Vec speaker_embedding(const Mat& mel) {
  check_arg(mel.cols() == kMelBins, "speaker_embedding: mel band count must be 80");
  check_arg(mel.rows() >= 2, "speaker_embedding: needs at least two frames");
  Vec mean, stddev;
  sorted_column_stats(mel, mean, stddev);
  Vec stats(2 * kMelBins);
  stats << mean, stddev;
  static const Mat proj = [] {
    RandomStream rng(0x5eba5eedULL);
    return rng.normal_matrix(16, 2 * kMelBins, 1.0 / std::sqrt(2.0 * kMelBins));
  }();
  Vec e = proj * stats;
  return e / e.norm();
}

AudioEncoder AudioEncoder::init(std::uint64_t seed, int d_s, EncoderMode mode) {
  check_arg(d_s >= 1, "encoder: d_s must be positive");
  AudioEncoder enc;
  enc.mode = mode;
  enc.d_s = d_s;
  RandomStream rng(derive_seed(seed, 0xa0d10));
  enc.w1 = rng.normal_matrix(kKernel * kMelBins, d_s, 1.0 / std::sqrt(kKernel * kMelBins));
  enc.b1 = Mat::Zero(1, d_s);
  enc.w2 = rng.normal_matrix(kKernel * d_s, d_s, 1.0 / std::sqrt(kKernel * d_s));
  enc.b2 = Mat::Zero(1, d_s);
  enc.w3 = rng.normal_matrix(kKernel * d_s, d_s, 1.0 / std::sqrt(kKernel * d_s));
  enc.b3 = Mat::Zero(1, d_s);
  return enc;
}

ad::Var AudioEncoder::encode(ad::Tape& tape, ad::Var mel,
                             const std::vector<ad::Var>* bound) const {
  check_arg(tape.val(mel).rows() % 2 == 0 && tape.val(mel).rows() >= 2,
            "encoder: mel length must be even");
  std::vector<ad::Var> p;
  if (bound != nullptr) {
    check_arg(bound->size() == 6, "encoder: bound parameter count mismatch");
    p = *bound;
  } else {
    p = {tape.leaf(w1), tape.leaf(b1), tape.leaf(w2),
         tape.leaf(b2), tape.leaf(w3), tape.leaf(b3)};
  }
  ad::Var h1 = ad::tanh(ad::conv1d(mel, p[0], p[1], kKernel, 2, 2));
  ad::Var h2 = ad::tanh(ad::conv1d(h1, p[2], p[3], kKernel, 1, 2));
  return ad::tanh(ad::conv1d(h2, p[4], p[5], kKernel, 1, 2));
}

Mat AudioEncoder::encode(const Mat& mel) const {
  ad::Tape tape;
  return tape.val(encode(tape, tape.leaf(mel)));
}

std::uint64_t AudioEncoder::params_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const_cast<AudioEncoder*>(this)->visit_params(
      [&h](const char*, Mat& m) { h = hash_matrix(m, h); });
  return h;
}

Waveform synth_waveform(const Mat& mel, double* raw_peak) {
  validate_mel(mel);
  const Eigen::Index frames = mel.rows();
  const std::size_t total = static_cast<std::size_t>(frames) * kHop;
  static const Vec centers = mel_center_freqs();
  Waveform out(total, 0.0);
  Mat amp = mel.array().exp();
  for (int b = 0; b < kMelBins; ++b) {
    double phase = 0.0;
    double step = 2.0 * M_PI * centers(b) / kSampleRate;
    for (std::size_t n = 0; n < total; ++n) {
      Eigen::Index t = static_cast<Eigen::Index>(n / kHop);
      double frac = static_cast<double>(n % kHop) / kHop;
      Eigen::Index t1 = std::min(t + 1, frames - 1);
      double a = amp(t, b) * (1.0 - frac) + amp(t1, b) * frac;
      out[n] += a * std::sin(phase);
      phase += step;
      if (phase > 2.0 * M_PI) phase -= 2.0 * M_PI;
    }
  }
  double peak = 0.0;
  for (double s : out) peak = std::max(peak, std::abs(s));
  if (raw_peak != nullptr) *raw_peak = peak;
  if (peak > 1e-300)
    for (double& s : out) s *= 0.9 / peak;
  return out;
}

void write_wav(const std::string& path, const Waveform& wave) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("wav: cannot open for writing: " + path);
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  std::uint32_t data_bytes = static_cast<std::uint32_t>(wave.size() * 2);
  f.write("RIFF", 4);
  u32(36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  u32(16);
  u16(1);  // PCM
  u16(1);  // mono
  u32(kSampleRate);
  u32(kSampleRate * 2);
  u16(2);
  u16(16);
  f.write("data", 4);
  u32(data_bytes);
  for (double s : wave) {
    double c = std::clamp(s, -1.0, 1.0);
    auto v = static_cast<std::int16_t>(std::lround(c * 32767.0));
    f.write(reinterpret_cast<const char*>(&v), 2);
  }
  if (!f) throw IoError("wav: write failed: " + path);
}

}  // namespace echoface::audio
