#pragma once

// Self-contained audio stack: mel extraction, k-means speech units, a
// statistics-based speaker embedding, a small conv encoder producing 25 Hz
// conditioning features, and a sinusoid-bank waveform renderer.
//
// Mel spectrograms are T50 x 80 matrices of natural-log energies floored at
// -10.0, frame rate 50 Hz, even length so frames pair with 25 fps animation.

#include <string>
#include <vector>

#include "echoface/ad.hpp"
#include "echoface/common.hpp"

namespace echoface::audio {

inline constexpr int kSampleRate = 16000;
inline constexpr int kWindow = 640;
inline constexpr int kHop = 320;
inline constexpr int kMelBins = 80;
inline constexpr double kLogFloor = -10.0;
inline constexpr double kFreqMax = 8000.0;

using Waveform = std::vector<double>;

struct UnitCodebook {
  Mat centroids;  // n_U x 80
  int n_units() const { return static_cast<int>(centroids.rows()); }
  void validate() const;
};

void validate_mel(const Mat& mel);

// Triangular filterbank on HTK mel-spaced edges, rows = mel bands over the
// 321 DFT bins of a 640-point window.
Mat mel_filterbank();
// Center frequency (Hz) of each mel band.
Vec mel_center_freqs();

Mat stft_mel(const Waveform& wave);

UnitCodebook fit_unit_codebook(const std::vector<Mat>& mels, int n_units,
                               std::uint64_t seed);

std::vector<int> quantize_units(const Mat& mel, const UnitCodebook& codebook);

// concat(per-bin mean, per-bin sample std) -> fixed seeded 160->16 random
// projection -> L2 normalization. Frame-order invariant.
Vec speaker_embedding(const Mat& mel);

enum class EncoderMode { kFrozen, kTrainable };

// Three temporal conv layers (stride 2 then 1, 1; tanh) mapping 50 Hz mel to
// 25 Hz features of width d_s.
struct AudioEncoder {
  EncoderMode mode = EncoderMode::kFrozen;
  int d_s = 64;
  Mat w1, b1, w2, b2, w3, b3;  // w: (k*Cin) x Cout, b: 1 x Cout, k = 5

  static AudioEncoder init(std::uint64_t seed, int d_s, EncoderMode mode);

  template <class F>
  void visit_params(F&& f) {
    f("enc.w1", w1);
    f("enc.b1", b1);
    f("enc.w2", w2);
    f("enc.b2", b2);
    f("enc.w3", w3);
    f("enc.b3", b3);
  }

  // bound, when given, supplies tape vars for the six parameters in
  // visit_params order so a trainer can receive gradients; otherwise the
  // parameters enter the graph as fresh leaves (frozen / inference path).
  ad::Var encode(ad::Tape& tape, ad::Var mel,
                 const std::vector<ad::Var>* bound = nullptr) const;
  Mat encode(const Mat& mel) const;
  std::uint64_t params_hash() const;
};

// Sinusoid bank, one oscillator per band at its center frequency, amplitudes
// exp(log-mel) interpolated across each hop; peak-normalized to 0.9. If
// raw_peak is given it receives the pre-normalization peak.
Waveform synth_waveform(const Mat& mel, double* raw_peak = nullptr);

void write_wav(const std::string& path, const Waveform& wave);

}  // namespace echoface::audio
