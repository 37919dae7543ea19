#pragma once

// Procedural talking-face corpus with known phoneme -> viseme -> mel
// correspondences. Mouth expression channels are a deterministic function of
// the utterance (piecewise-constant viseme targets, Gaussian-smoothed); upper
// face channels are smoothed noise independent of the utterance; mel frames
// are per-phoneme templates plus a per-speaker spectral tilt plus noise, and
// speech units are the quantization of the pre-noise mel.
//
// All generated arrays are rounded to float32 precision at creation so the
// float32 sequence files round-trip bit-exactly.

#include <string>
#include <vector>

#include "echoface/audio.hpp"
#include "echoface/common.hpp"
#include "echoface/face_model.hpp"

namespace echoface::corpus {

struct PhonemeSpec {
  int id = 0;
  Vec viseme;        // mouth psi channels plus trailing jaw-opening scalar
  Vec mel_template;  // 80 log-mel values
  int unit_id = 0;
};

struct Utterance {
  std::vector<int> phoneme_ids;
  std::vector<int> durations;  // 25 fps frames, each in [3, 10]

  int total_frames() const {
    int t = 0;
    for (int d : durations) t += d;
    return t;
  }
};

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct SpeakerProfile {
  Vec tilt;       // 80, added to every mel frame of this speaker
  Vec embedding;  // 16, from speaker_embedding on calibration audio
  Split split = Split::kTrain;
};

struct SequenceRecord {
  Mat expressions;  // T x (psi_dim + 3)
  Mat mel;          // 2T x 80
  std::vector<int> units;
  int speaker_id = 0;
  Utterance utterance;

  int frames() const { return static_cast<int>(expressions.rows()); }
};

struct CorpusConfig {
  int n_v = 300;
  int psi_dim = 16;
  int n_phonemes = 8;
  int n_units = 8;
  int n_speakers = 4;
  int n_train = 200;
  int n_val = 40;
  int n_test = 40;
  int t_min = 40;
  int t_max = 70;
  double mel_noise_sigma = 0.1;
  double upper_amplitude = 0.3;
  double viseme_smooth_sigma = 1.5;
  double upper_smooth_sigma = 6.0;
  double tilt_amplitude = 3.5;
  std::uint64_t seed = 1;
};

struct CorpusManifest {
  FaceTemplate face;
  std::vector<PhonemeSpec> bank;
  audio::UnitCodebook codebook;
  std::vector<SpeakerProfile> speakers;
  CorpusConfig config;
  std::uint64_t corpus_id = 0;
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<SequenceRecord> records;
  std::vector<Split> splits;  // per record, derived from the record's speaker

  std::vector<int> split_indices(Split s) const;
};

// Gaussian smoothing along rows (frames), kernel truncated at 4 sigma and
// renormalized near the edges.
Mat gaussian_smooth_rows(const Mat& x, double sigma);

// Deterministic bank with a silence phoneme (id 0: zero viseme, floor mel);
// pairwise viseme separation >= 0.5 and mel separation >= min_mel_separation.
std::vector<PhonemeSpec> make_phoneme_bank(int n_phonemes, int viseme_dim,
                                           std::uint64_t seed,
                                           double min_mel_separation = 56.0);

Utterance make_utterance(RandomStream& rng, int n_phonemes, int t_min, int t_max);

SequenceRecord synth_sequence(const Utterance& utt, int speaker_id,
                              const CorpusManifest& manifest, std::uint64_t seed,
                              double noise_sigma_override = -1.0);

Corpus make_corpus(const CorpusConfig& config);

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

// Single-sequence container (magic "THSQ"), float32 arrays.
void write_sequence(const std::string& path, const SequenceRecord& rec,
                    int psi_dim, int n_units);
SequenceRecord read_sequence(const std::string& path, int* n_units_out = nullptr);

void write_face_template(const std::string& path, const FaceTemplate& tpl);
FaceTemplate read_face_template(const std::string& path);
void write_phoneme_bank(const std::string& path, const std::vector<PhonemeSpec>& bank);
std::vector<PhonemeSpec> read_phoneme_bank(const std::string& path);
void write_codebook(const std::string& path, const audio::UnitCodebook& cb);
audio::UnitCodebook read_codebook(const std::string& path);

}  // namespace echoface::corpus
