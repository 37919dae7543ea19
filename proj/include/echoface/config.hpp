#pragma once

// Run configuration: one structured-text file drives every command. The file
// has a top-level seed and [corpus], [m2s], [diffusion], [eval] sections in
// which every tunable knob appears under its module's name. Unknown sections
// or keys are rejected by name, and all values are checked against the module
// preconditions at load time, so a typo fails before any work starts.

#include <cstdint>
#include <string>

#include "echoface/corpus.hpp"
#include "echoface/diffusion.hpp"
#include "echoface/m2s.hpp"

namespace echoface::config {

struct EvalOptions {
  corpus::Split split = corpus::Split::kTest;
  int n_samples = 32;  // samples per test sequence
  double s_a = 1.0;    // audio guidance scale at sampling time
};

struct RunConfig {
  std::uint64_t seed = 1;

  corpus::CorpusConfig corpus;
  m2s::M2SConfig m2s;  // n_units mirrors [corpus] n_units
  m2s::M2STrainOptions m2s_train;
  m2s::AbasOptions abas;
  diffusion::DenoiserConfig diffusion;
  int diffusion_steps = 100;  // noise schedule length D
  diffusion::ThunderTrainOptions thunder;
  EvalOptions eval;

  // Propagate the global seed into every per-module seed field.
  void set_seed(std::uint64_t s);

  void validate() const;
};

// Parses config text. `origin` names the source in error messages.
RunConfig parse_config(const std::string& text, const std::string& origin);

RunConfig load_config(const std::string& path);

// The full default configuration, parseable back into RunConfig{}; shipped
// verbatim as configs/default.cfg.
std::string default_config_text();

}  // namespace echoface::config
