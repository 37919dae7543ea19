#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "echoface/audio.hpp"

using namespace echoface;
using namespace echoface::audio;

namespace {

Waveform tone(double freq, double amp, std::size_t n) {
  Waveform w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / kSampleRate);
  return w;
}

}  // namespace

TEST_CASE("digital silence maps to the log floor") {
  Waveform w(kWindow + 5 * kHop, 0.0);
  Mat mel = stft_mel(w);
  CHECK(mel.rows() == 6);
  CHECK(mel.cols() == 80);
  CHECK((mel.array() == kLogFloor).all());
}

TEST_CASE("1 kHz tone: direct DFT oracle and band concentration") {
  Waveform w = tone(1000.0, 0.5, kWindow + 5 * kHop);
  Mat mel = stft_mel(w);

  // Independent single-window DFT of frame 0.
  Vec power(kWindow / 2 + 1);
  for (int k = 0; k <= kWindow / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (int n = 0; n < kWindow; ++n) {
      double hann = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / kWindow);
      double x = w[static_cast<std::size_t>(n)] * hann;
      re += x * std::cos(2.0 * M_PI * k * n / kWindow);
      im -= x * std::sin(2.0 * M_PI * k * n / kWindow);
    }
    power(k) = re * re + im * im;
  }
  Mat fb = mel_filterbank();
  Vec energy = fb * power;
  for (int b = 0; b < 80; ++b) {
    double want = std::max(std::log(std::max(energy(b), 1e-300)), kLogFloor);
    CHECK(mel(0, b) == doctest::Approx(want).epsilon(1e-9));
  }

  // >= 90% of linear-band energy within the 3 bands nearest 1 kHz.
  Vec centers = mel_center_freqs();
  std::vector<int> order(80);
  for (int b = 0; b < 80; ++b) order[static_cast<std::size_t>(b)] = b;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(centers(a) - 1000.0) < std::abs(centers(b) - 1000.0);
  });
  for (int t = 0; t < mel.rows(); ++t) {
    double total = 0.0, near = 0.0;
    for (int b = 0; b < 80; ++b) total += std::exp(mel(t, b));
    for (int i = 0; i < 3; ++i) near += std::exp(mel(t, order[static_cast<std::size_t>(i)]));
    CHECK(near / total >= 0.9);
  }
}

TEST_CASE("self-concatenation preserves interior frames") {
  Waveform w = tone(523.0, 0.4, kWindow + 9 * kHop);
  Waveform ww = w;
  ww.insert(ww.end(), w.begin(), w.end());
  Mat a = stft_mel(w);
  Mat b = stft_mel(ww);
  // Frames fully inside the first copy are unaffected by the seam.
  Eigen::Index interior = (static_cast<Eigen::Index>(w.size()) - kWindow) / kHop;
  for (Eigen::Index t = 0; t < std::min(interior, a.rows()); ++t)
    CHECK((a.row(t) - b.row(t)).norm() == doctest::Approx(0.0));
}

TEST_CASE("log energy is monotone in waveform scale") {
  Waveform w = tone(700.0, 0.9, kWindow + 7 * kHop);
  Waveform half = w;
  for (double& s : half) s *= 0.5;
  Mat big = stft_mel(w);
  Mat small = stft_mel(half);
  CHECK((big.array() >= small.array() - 1e-12).all());
}

TEST_CASE("short or invalid waveforms are rejected") {
  CHECK_THROWS_AS(stft_mel(Waveform(kWindow - 1, 0.0)), InvalidArgument);
  CHECK_THROWS_AS(stft_mel(Waveform(kWindow, 0.0)), InvalidArgument);  // one frame only
  Waveform bad(kWindow + 5 * kHop, 0.0);
  bad[3] = 1.5;
  CHECK_THROWS_AS(stft_mel(bad), InvalidArgument);
}

TEST_CASE("k-means recovers planted clusters") {
  RandomStream rng(77);
  const int k = 8, per = 50;
  Mat true_centers = Mat::Zero(k, 80);
  for (int j = 0; j < k; ++j) {
    true_centers(j, j * 9) = 30.0;
    true_centers(j, j * 9 + 4) = -30.0;
  }
  Mat data(k * per, 80);
  std::vector<int> labels(static_cast<std::size_t>(k * per));
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < per; ++i) {
      data.row(j * per + i) =
          true_centers.row(j) + 0.03 * rng.normal_matrix(1, 80).row(0);
      labels[static_cast<std::size_t>(j * per + i)] = j;
    }

  UnitCodebook cb = fit_unit_codebook({data}, k, 123);
  UnitCodebook cb2 = fit_unit_codebook({data}, k, 123);
  CHECK(cb.centroids == cb2.centroids);

  // Each centroid sits inside exactly one planted cluster.
  std::vector<int> owner(static_cast<std::size_t>(k), -1);
  for (int j = 0; j < k; ++j) {
    int best = 0;
    double bd = (cb.centroids.row(j) - true_centers.row(0)).norm();
    for (int c = 1; c < k; ++c) {
      double d = (cb.centroids.row(j) - true_centers.row(c)).norm();
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    CHECK(bd < 0.3);
    CHECK(owner[static_cast<std::size_t>(best)] == -1);
    owner[static_cast<std::size_t>(best)] = j;
  }

  // Quantization agrees with the planted labels through that bijection.
  std::vector<int> ids = quantize_units(data, cb);
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    CHECK(ids[static_cast<std::size_t>(i)] ==
          owner[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]);

  CHECK_THROWS_AS(fit_unit_codebook({data.topRows(50)}, 8, 1), InvalidArgument);

  UnitCodebook one = fit_unit_codebook({data}, 1, 5);
  CHECK((one.centroids.row(0) - data.colwise().mean()).norm() < 1e-9);
}

TEST_CASE("quantization argmin and tie-breaking") {
  Mat centroids = Mat::Zero(6, 80);
  for (int j = 0; j < 6; ++j) centroids(j, j) = 10.0 * (j + 1);
  UnitCodebook cb{centroids};

  Mat frame = centroids.row(3);
  CHECK(quantize_units(frame, cb)[0] == 3);

  // Equidistant between centroids 2 and 5: lower index wins.
  Mat mid = 0.5 * (centroids.row(2) + centroids.row(5));
  CHECK(quantize_units(mid, cb)[0] == 2);

  RandomStream rng(9);
  Mat frames = rng.normal_matrix(40, 80, 5.0);
  std::vector<int> got = quantize_units(frames, cb);
  for (int t = 0; t < 40; ++t) {
    int best = 0;
    double bd = (frames.row(t) - centroids.row(0)).squaredNorm();
    for (int j = 1; j < 6; ++j) {
      double d = (frames.row(t) - centroids.row(j)).squaredNorm();
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    CHECK(got[static_cast<std::size_t>(t)] == best);
  }

  CHECK_THROWS_AS(quantize_units(Mat::Zero(2, 40), cb), InvalidArgument);
}

TEST_CASE("speaker embedding invariances") {
  RandomStream rng(21);
  Mat mel = (rng.normal_matrix(12, 80, 2.0).array() - 4.0).cwiseMax(kLogFloor);
  Vec e = speaker_embedding(mel);
  CHECK(std::abs(e.norm() - 1.0) < 1e-12);

  Mat reversed = mel.colwise().reverse();
  Vec er = speaker_embedding(reversed);
  CHECK(e == er);  // exact

  CHECK(speaker_embedding(mel) == e);
  CHECK_THROWS_AS(speaker_embedding(mel.topRows(1)), InvalidArgument);
}

TEST_CASE("audio encoder shapes, determinism, and gradient flow") {
  AudioEncoder enc = AudioEncoder::init(3, 16, EncoderMode::kFrozen);
  AudioEncoder enc2 = AudioEncoder::init(3, 16, EncoderMode::kFrozen);
  CHECK(enc.params_hash() == enc2.params_hash());
  CHECK(enc.params_hash() != AudioEncoder::init(4, 16, EncoderMode::kFrozen).params_hash());

  RandomStream rng(5);
  Mat mel = rng.normal_matrix(8, 80);
  Mat f1 = enc.encode(mel);
  Mat f2 = enc.encode(mel);
  CHECK(f1 == f2);
  CHECK(f1.rows() == 4);
  CHECK(f1.cols() == 16);

  CHECK_THROWS_AS(enc.encode(rng.normal_matrix(7, 80)), InvalidArgument);

  // Bound-parameter path: gradients reach the supplied leaves.
  ad::Tape tape;
  std::vector<ad::Var> bound;
  enc.visit_params([&](const char*, Mat& m) { bound.push_back(tape.leaf(m)); });
  ad::Var out = enc.encode(tape, tape.leaf(mel), &bound);
  tape.backward(ad::mean_sq(out));
  for (ad::Var v : bound) CHECK(tape.grad(v).norm() > 0.0);
}

TEST_CASE("sinusoid-bank rendering") {
  Mat floor_mel = Mat::Constant(4, 80, kLogFloor);
  double raw_floor = 0.0;
  Waveform quiet = synth_waveform(floor_mel, &raw_floor);
  CHECK(quiet.size() == 4 * static_cast<std::size_t>(kHop));

  Mat ref_mel = Mat::Zero(4, 80);
  double raw_ref = 0.0;
  synth_waveform(ref_mel, &raw_ref);
  CHECK(raw_floor < 1e-3 * raw_ref);

  // Single active band round-trips through stft_mel.
  Mat one_band = Mat::Constant(10, 80, kLogFloor);
  one_band.col(30).setZero();
  Waveform w = synth_waveform(one_band);
  double peak = 0.0;
  for (double s : w) peak = std::max(peak, std::abs(s));
  CHECK(peak == doctest::Approx(0.9));
  Mat back = stft_mel(w);
  Eigen::Index best = 0;
  back.row(2).maxCoeff(&best);
  CHECK(best == 30);
}

TEST_CASE("wav export writes a valid RIFF header") {
  Waveform w = tone(440.0, 0.5, 1600);
  std::string path = "test_out.wav";
  write_wav(path, w);
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  char hdr[44];
  f.read(hdr, 44);
  CHECK(std::string(hdr, 4) == "RIFF");
  CHECK(std::string(hdr + 8, 4) == "WAVE");
  CHECK(std::string(hdr + 36, 4) == "data");
  std::uint32_t data_bytes = 0;
  std::memcpy(&data_bytes, hdr + 40, 4);
  CHECK(data_bytes == 3200);
  f.seekg(0, std::ios::end);
  CHECK(static_cast<std::uint32_t>(f.tellg()) == 44 + data_bytes);
  std::remove(path.c_str());
}

TEST_CASE("mel validation guards") {
  Mat ok = Mat::Constant(4, 80, -3.0);
  validate_mel(ok);
  CHECK_THROWS_AS(validate_mel(Mat::Constant(3, 80, -3.0)), InvalidArgument);
  CHECK_THROWS_AS(validate_mel(Mat::Constant(4, 40, -3.0)), InvalidArgument);
  CHECK_THROWS_AS(validate_mel(Mat::Constant(4, 80, -11.0)), InvalidArgument);
  UnitCodebook dup{Mat::Zero(2, 80)};
  CHECK_THROWS_AS(dup.validate(), InvalidArgument);
}
