#include "echoface/config.hpp"

#include <cstddef>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace echoface::config {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long parse_ll(const std::string& value, const std::string& where) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    throw InvalidArgument(where + ": not an integer: '" + value + "'");
  }
  if (used != value.size())
    throw InvalidArgument(where + ": not an integer: '" + value + "'");
  return v;
}

int parse_int(const std::string& value, const std::string& where) {
  long long v = parse_ll(value, where);
  if (v < INT32_MIN || v > INT32_MAX)
    throw InvalidArgument(where + ": integer out of range: '" + value + "'");
  return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& value, const std::string& where) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    throw InvalidArgument(where + ": not a non-negative integer: '" + value + "'");
  }
  if (used != value.size() || value.find('-') != std::string::npos)
    throw InvalidArgument(where + ": not a non-negative integer: '" + value + "'");
  return v;
}

double parse_double(const std::string& value, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    throw InvalidArgument(where + ": not a number: '" + value + "'");
  }
  if (used != value.size())
    throw InvalidArgument(where + ": not a number: '" + value + "'");
  return v;
}

bool parse_bool(const std::string& value, const std::string& where) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw InvalidArgument(where + ": expected true or false, got '" + value + "'");
}

const char* encoder_mode_name(audio::EncoderMode m) {
  return m == audio::EncoderMode::kFrozen ? "frozen" : "trainable";
}

audio::EncoderMode encoder_mode_from_name(const std::string& value,
                                          const std::string& where) {
  if (value == "frozen") return audio::EncoderMode::kFrozen;
  if (value == "trainable") return audio::EncoderMode::kTrainable;
  throw InvalidArgument(where + ": expected frozen or trainable, got '" + value +
                        "'");
}

bool apply_top_key(RunConfig& rc, const std::string& key, const std::string& value,
                   const std::string& where) {
  if (key == "seed") {
    rc.seed = parse_u64(value, where);
    return true;
  }
  return false;
}

bool apply_corpus_key(RunConfig& rc, const std::string& key,
                      const std::string& value, const std::string& where) {
  auto& c = rc.corpus;
  if (key == "n_v") c.n_v = parse_int(value, where);
  else if (key == "psi_dim") c.psi_dim = parse_int(value, where);
  else if (key == "n_phonemes") c.n_phonemes = parse_int(value, where);
  else if (key == "n_units") c.n_units = parse_int(value, where);
  else if (key == "n_speakers") c.n_speakers = parse_int(value, where);
  else if (key == "n_train") c.n_train = parse_int(value, where);
  else if (key == "n_val") c.n_val = parse_int(value, where);
  else if (key == "n_test") c.n_test = parse_int(value, where);
  else if (key == "t_min") c.t_min = parse_int(value, where);
  else if (key == "t_max") c.t_max = parse_int(value, where);
  else if (key == "mel_noise_sigma") c.mel_noise_sigma = parse_double(value, where);
  else if (key == "upper_amplitude") c.upper_amplitude = parse_double(value, where);
  else if (key == "viseme_smooth_sigma")
    c.viseme_smooth_sigma = parse_double(value, where);
  else if (key == "upper_smooth_sigma")
    c.upper_smooth_sigma = parse_double(value, where);
  else if (key == "tilt_amplitude") c.tilt_amplitude = parse_double(value, where);
  else return false;
  return true;
}

bool apply_m2s_key(RunConfig& rc, const std::string& key, const std::string& value,
                   const std::string& where) {
  if (key == "input_space") {
    try {
      rc.m2s.input_space = m2s::input_space_from_name(value);
    } catch (const std::exception& e) {
      throw InvalidArgument(where + ": input_space: " + e.what());
    }
  }
  else if (key == "hidden") rc.m2s.hidden = parse_int(value, where);
  else if (key == "n_blocks") rc.m2s.n_blocks = parse_int(value, where);
  else if (key == "n_heads") rc.m2s.n_heads = parse_int(value, where);
  else if (key == "conv_kernel") rc.m2s.conv_kernel = parse_int(value, where);
  else if (key == "lr") rc.m2s_train.lr = parse_double(value, where);
  else if (key == "batch") rc.m2s_train.batch = parse_int(value, where);
  else if (key == "max_window") rc.m2s_train.max_window = parse_int(value, where);
  else if (key == "epochs") rc.m2s_train.epochs = parse_int(value, where);
  else if (key == "abas_lr") rc.abas.lr = parse_double(value, where);
  else if (key == "abas_steps") rc.abas.steps = parse_int(value, where);
  else if (key == "abas_lambda") rc.abas.lambda = parse_double(value, where);
  else return false;
  return true;
}

bool apply_diffusion_key(RunConfig& rc, const std::string& key,
                         const std::string& value, const std::string& where) {
  if (key == "layers") rc.diffusion.layers = parse_int(value, where);
  else if (key == "heads") rc.diffusion.heads = parse_int(value, where);
  else if (key == "f") rc.diffusion.f = parse_int(value, where);
  else if (key == "cond_dropout_prob")
    rc.diffusion.cond_dropout_prob = parse_double(value, where);
  else if (key == "w_m2s") rc.diffusion.w_m2s = parse_double(value, where);
  else if (key == "with_m2s") rc.diffusion.with_m2s = parse_bool(value, where);
  else if (key == "encoder_mode")
    rc.diffusion.encoder_mode = encoder_mode_from_name(value, where);
  else if (key == "steps") rc.diffusion_steps = parse_int(value, where);
  else if (key == "lr") rc.thunder.lr = parse_double(value, where);
  else if (key == "batch") rc.thunder.batch = parse_int(value, where);
  else if (key == "window") rc.thunder.window = parse_int(value, where);
  else if (key == "epochs") rc.thunder.epochs = parse_int(value, where);
  else if (key == "d_s") rc.thunder.d_s = parse_int(value, where);
  else return false;
  return true;
}

bool apply_eval_key(RunConfig& rc, const std::string& key, const std::string& value,
                    const std::string& where) {
  if (key == "split") {
    try {
      rc.eval.split = corpus::split_from_name(value);
    } catch (const std::exception& e) {
      throw InvalidArgument(where + ": split: " + e.what());
    }
  }
  else if (key == "n_samples") rc.eval.n_samples = parse_int(value, where);
  else if (key == "s_a") rc.eval.s_a = parse_double(value, where);
  else return false;
  return true;
}

}  // namespace

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  corpus.seed = s;
  m2s_train.seed = s;
  thunder.seed = s;
}

void RunConfig::validate() const {
  m2s.validate();
  diffusion.validate();
  check_arg(diffusion_steps >= 1, "config: diffusion steps must be at least 1");
  check_arg(m2s_train.lr > 0.0 && thunder.lr > 0.0 && abas.lr > 0.0,
            "config: learning rates must be positive");
  check_arg(m2s_train.batch >= 1 && thunder.batch >= 1,
            "config: batch sizes must be at least 1");
  check_arg(m2s_train.epochs >= 0 && thunder.epochs >= 0,
            "config: epochs must be non-negative");
  check_arg(m2s_train.max_window >= 4 && thunder.window >= 4,
            "config: training windows must cover at least 4 frames");
  check_arg(thunder.d_s >= 1, "config: audio feature width must be positive");
  check_arg(abas.steps >= 0, "config: abas steps must be non-negative");
  check_arg(abas.lambda >= 0.0, "config: abas lambda must be non-negative");
  check_arg(eval.n_samples >= 2, "config: eval needs at least 2 samples");
  check_arg(eval.s_a >= 0.0, "config: guidance scale must be non-negative");
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig rc;
  std::istringstream in(text);
  std::string line;
  std::string section;  // empty = top level
  std::set<std::string> seen;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);

    if (line.front() == '[') {
      if (line.back() != ']')
        throw InvalidArgument(where + ": malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "corpus" && section != "m2s" && section != "diffusion" &&
          section != "eval")
        throw InvalidArgument(where + ": unknown section [" + section + "]");
      continue;
    }

    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument(where + ": expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw InvalidArgument(where + ": expected 'key = value', got '" + line + "'");

    if (!seen.insert(section + "." + key).second)
      throw InvalidArgument(where + ": duplicate key '" + key + "'" +
                            (section.empty() ? "" : " in section [" + section + "]"));

    bool known;
    if (section.empty()) known = apply_top_key(rc, key, value, where);
    else if (section == "corpus") known = apply_corpus_key(rc, key, value, where);
    else if (section == "m2s") known = apply_m2s_key(rc, key, value, where);
    else if (section == "diffusion")
      known = apply_diffusion_key(rc, key, value, where);
    else known = apply_eval_key(rc, key, value, where);
    if (!known)
      throw InvalidArgument(where + ": unknown key '" + key + "'" +
                            (section.empty() ? " at top level"
                                             : " in section [" + section + "]"));
  }

  rc.set_seed(rc.seed);
  rc.m2s.n_units = rc.corpus.n_units;
  rc.validate();
  return rc;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config(buf.str(), path);
}

std::string default_config_text() {
  RunConfig d;
  std::ostringstream out;
  out << "# Default run configuration. Every knob is listed with its default;\n"
         "# command-line flags override values given here.\n"
         "\n"
         "seed = " << d.seed << "\n"
      << "\n"
         "[corpus]\n"
         "n_v = " << d.corpus.n_v << "\n"
      << "psi_dim = " << d.corpus.psi_dim << "\n"
      << "n_phonemes = " << d.corpus.n_phonemes << "\n"
      << "n_units = " << d.corpus.n_units << "\n"
      << "n_speakers = " << d.corpus.n_speakers << "\n"
      << "n_train = " << d.corpus.n_train << "\n"
      << "n_val = " << d.corpus.n_val << "\n"
      << "n_test = " << d.corpus.n_test << "\n"
      << "t_min = " << d.corpus.t_min << "\n"
      << "t_max = " << d.corpus.t_max << "\n"
      << "mel_noise_sigma = " << d.corpus.mel_noise_sigma << "\n"
      << "upper_amplitude = " << d.corpus.upper_amplitude << "\n"
      << "viseme_smooth_sigma = " << d.corpus.viseme_smooth_sigma << "\n"
      << "upper_smooth_sigma = " << d.corpus.upper_smooth_sigma << "\n"
      << "tilt_amplitude = " << d.corpus.tilt_amplitude << "\n"
      << "\n"
         "[m2s]\n"
         "input_space = " << m2s::input_space_name(d.m2s.input_space) << "\n"
      << "hidden = " << d.m2s.hidden << "\n"
      << "n_blocks = " << d.m2s.n_blocks << "\n"
      << "n_heads = " << d.m2s.n_heads << "\n"
      << "conv_kernel = " << d.m2s.conv_kernel << "\n"
      << "lr = " << d.m2s_train.lr << "\n"
      << "batch = " << d.m2s_train.batch << "\n"
      << "max_window = " << d.m2s_train.max_window << "\n"
      << "epochs = " << d.m2s_train.epochs << "\n"
      << "abas_lr = " << d.abas.lr << "\n"
      << "abas_steps = " << d.abas.steps << "\n"
      << "abas_lambda = " << d.abas.lambda << "\n"
      << "\n"
         "[diffusion]\n"
         "layers = " << d.diffusion.layers << "\n"
      << "heads = " << d.diffusion.heads << "\n"
      << "f = " << d.diffusion.f << "\n"
      << "cond_dropout_prob = " << d.diffusion.cond_dropout_prob << "\n"
      << "w_m2s = " << d.diffusion.w_m2s << "\n"
      << "with_m2s = " << (d.diffusion.with_m2s ? "true" : "false") << "\n"
      << "encoder_mode = " << encoder_mode_name(d.diffusion.encoder_mode) << "\n"
      << "steps = " << d.diffusion_steps << "\n"
      << "lr = " << d.thunder.lr << "\n"
      << "batch = " << d.thunder.batch << "\n"
      << "window = " << d.thunder.window << "\n"
      << "epochs = " << d.thunder.epochs << "\n"
      << "d_s = " << d.thunder.d_s << "\n"
      << "\n"
         "[eval]\n"
         "split = " << corpus::split_name(d.eval.split) << "\n"
      << "n_samples = " << d.eval.n_samples << "\n"
      << "s_a = " << d.eval.s_a << "\n";
  return out.str();
}

}  // namespace echoface::config
