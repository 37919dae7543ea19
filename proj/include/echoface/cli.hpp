#pragma once

// Command-line front end. One binary with subcommands covering the full
// workflow: corpus generation, unit fitting, both training stages, sampling,
// evaluation, the ablation runner, and analysis-by-audio-synthesis. Every
// command writes its artifacts under --out together with a run manifest
// (command, artifact version, config hash, seed, lineage ids) so results can
// be traced back to their inputs. Exit codes: 0 success, 1 validation error,
// 2 runtime failure.

#include <iosfwd>
#include <string>
#include <vector>

#include "echoface/audio.hpp"
#include "echoface/config.hpp"
#include "echoface/corpus.hpp"
#include "echoface/m2s.hpp"

namespace echoface::cli {

inline constexpr const char* kArtifactVersion = "0.1.0";

struct AblationVariant {
  std::string name;
  bool with_m2s = true;
  m2s::InputSpace input_space = m2s::InputSpace::kMouth;
  double w_m2s = 1.0;
  audio::EncoderMode encoder_mode = audio::EncoderMode::kFrozen;
};

struct AblationSpec {
  std::vector<AblationVariant> variants;

  // Nonempty, names nonempty and unique.
  void validate() const;
};

// Trains one denoiser per variant (shared corpus, seed, and budget from rc),
// evaluates each on the configured split, and returns a CSV table: one row
// per variant with the descriptor columns followed by the metric columns,
// plus a with-minus-without delta row when both kinds are present. Variants
// with the cycle loss enabled need m2s_model (matching input space); when
// save_dir is nonempty each variant's checkpoint is written there. Progress
// lines go to `progress`.
std::string run_ablation(const AblationSpec& spec, const config::RunConfig& rc,
                         const corpus::Corpus& corpus,
                         const m2s::M2SModel* m2s_model,
                         const std::string& save_dir, std::ostream& progress);

// Runs one command given argv-style arguments (program name excluded).
int run_command(const std::vector<std::string>& args, std::ostream& out,
                std::ostream& err);

}  // namespace echoface::cli
