#include "echoface/cli.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "echoface/checkpoint.hpp"
#include "echoface/diffusion.hpp"
#include "echoface/metrics.hpp"

namespace echoface::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string slurp_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << text;
  f.close();
  if (!f) throw IoError("write failed: " + path);
}

void write_matrix_csv(const std::string& path, const Mat& m) {
  std::ostringstream out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out << ',';
      out << fmt_double(m(r, c));
    }
    out << '\n';
  }
  write_text_file(path, out.str());
}

// The config hash pins the exact configuration text an artifact was produced
// from, so reruns can be audited without shipping the file alongside.
struct LoadedConfig {
  config::RunConfig rc;
  std::uint64_t hash = 0;
};

LoadedConfig load_run_config(const std::string& path, bool has_seed,
                             std::uint64_t seed) {
  std::string text = path.empty() ? config::default_config_text() : slurp_text(path);
  LoadedConfig lc;
  lc.rc = config::parse_config(text, path.empty() ? "defaults" : path);
  lc.hash = fnv1a64(text.data(), text.size());
  if (has_seed) {
    lc.rc.set_seed(seed);
    lc.rc.validate();
  }
  return lc;
}

void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const LoadedConfig& lc, const checkpoint::Lineage& lineage) {
  std::ostringstream m;
  m << "command " << command << '\n'
    << "version " << kArtifactVersion << '\n'
    << "config_hash " << hex64(lc.hash) << '\n'
    << "seed " << lc.rc.seed << '\n'
    << "corpus_id " << hex64(lineage.corpus_id) << '\n'
    << "codebook_hash " << hex64(lineage.codebook_hash) << '\n';
  write_text_file((fs::path(out_dir) / "run_manifest.txt").string(), m.str());
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir);
}

metrics::SamplerFn guided_sampler(const diffusion::DenoiserModel& model, double s_a) {
  return [&model, s_a](const corpus::SequenceRecord& rec, std::uint64_t sample_seed) {
    Mat feats = model.encoder.encode(rec.mel);
    diffusion::SampleConfig sc;
    sc.s_a = s_a;
    sc.seed = sample_seed;
    return diffusion::sample(model, feats, model.schedule, sc);
  };
}

const corpus::SequenceRecord& record_at(const corpus::Corpus& corpus, int seq_id) {
  check_arg(seq_id >= 0 && seq_id < static_cast<int>(corpus.records.size()),
            "sequence id out of range: " + std::to_string(seq_id) + " (corpus has " +
                std::to_string(corpus.records.size()) + " sequences)");
  return corpus.records[static_cast<std::size_t>(seq_id)];
}

std::string metric_fields(const metrics::MetricReport& r) {
  const double vals[] = {r.lve,   r.dtw,   r.l_pcc,   r.l_ccc,   r.fdd_u,
                         r.fdd_l, r.s_div_u, r.s_div_l, r.t_div_u, r.t_div_l};
  std::string s;
  for (double v : vals) {
    if (!s.empty()) s += ',';
    s += fmt_double(v);
  }
  return s;
}

int cmd_gen_corpus(const LoadedConfig& lc, const std::string& out_dir,
                   std::ostream& out) {
  ensure_dir(out_dir);
  corpus::Corpus c = corpus::make_corpus(lc.rc.corpus);
  corpus::save_corpus(c, (fs::path(out_dir) / "corpus").string());
  write_run_manifest(out_dir, "gen-corpus", lc, checkpoint::corpus_lineage(c.manifest));
  out << "[gen-corpus] " << c.records.size() << " sequences ("
      << c.split_indices(corpus::Split::kTrain).size() << " train, "
      << c.split_indices(corpus::Split::kVal).size() << " val, "
      << c.split_indices(corpus::Split::kTest).size() << " test) -> " << out_dir
      << "/corpus\n";
  return 0;
}

int cmd_fit_units(const LoadedConfig& lc, const std::string& corpus_dir,
                  const std::string& out_dir, std::ostream& out) {
  ensure_dir(out_dir);
  corpus::Corpus c = corpus::load_corpus(corpus_dir);
  std::vector<Mat> mels;
  for (int i : c.split_indices(corpus::Split::kTrain))
    mels.push_back(c.records[static_cast<std::size_t>(i)].mel);
  audio::UnitCodebook cb = audio::fit_unit_codebook(mels, lc.rc.corpus.n_units, lc.rc.seed);
  corpus::write_codebook((fs::path(out_dir) / "codebook.efcb").string(), cb);
  write_run_manifest(out_dir, "fit-units", lc, checkpoint::corpus_lineage(c.manifest));
  out << "[fit-units] " << cb.n_units() << " units fit on " << mels.size()
      << " training sequences -> " << out_dir << "/codebook.efcb\n";
  return 0;
}

int cmd_train_m2s(LoadedConfig lc, const std::string& corpus_dir,
                  const std::string& out_dir, std::ostream& out) {
  ensure_dir(out_dir);
  corpus::Corpus c = corpus::load_corpus(corpus_dir);
  lc.rc.m2s.n_units = c.manifest.codebook.n_units();
  m2s::M2STrainResult res = m2s::train_m2s(c, lc.rc.m2s, lc.rc.m2s_train);
  checkpoint::Lineage lineage = checkpoint::corpus_lineage(c.manifest);
  checkpoint::save_m2s((fs::path(out_dir) / "m2s.efck").string(), res.model, lineage);
  std::ostringstream hist;
  hist << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < res.history.size(); ++e)
    hist << e << ',' << fmt_double(res.history[e].train_loss) << ','
         << fmt_double(res.history[e].val_loss) << '\n';
  write_text_file((fs::path(out_dir) / "m2s_history.csv").string(), hist.str());
  write_run_manifest(out_dir, "train-m2s", lc, lineage);
  out << "[train-m2s] " << res.history.size() << " epochs";
  if (!res.history.empty())
    out << ", final val loss " << fmt_double(res.history.back().val_loss);
  out << " -> " << out_dir << "/m2s.efck\n";
  return 0;
}

int cmd_eval_m2s(const LoadedConfig& lc, const std::string& corpus_dir,
                 const std::string& m2s_path, const std::string& out_dir,
                 std::ostream& out) {
  ensure_dir(out_dir);
  corpus::Corpus c = corpus::load_corpus(corpus_dir);
  checkpoint::M2SCheckpoint ck = checkpoint::load_m2s(m2s_path);
  checkpoint::check_lineage(ck.lineage, c.manifest, "eval-m2s");
  m2s::M2SReport rep = m2s::eval_m2s(ck.model, c, lc.rc.eval.split);
  std::string csv = "mel_l1,unit_accuracy\n" + fmt_double(rep.mel_l1) + "," +
                    fmt_double(rep.unit_accuracy) + "\n";
  write_text_file((fs::path(out_dir) / "m2s_eval.csv").string(), csv);
  write_run_manifest(out_dir, "eval-m2s", lc, checkpoint::corpus_lineage(c.manifest));
  out << "[eval-m2s] split " << corpus::split_name(lc.rc.eval.split) << " mel_l1 "
      << fmt_double(rep.mel_l1) << " unit_accuracy " << fmt_double(rep.unit_accuracy)
      << '\n';
  return 0;
}

int cmd_train_thunder(const LoadedConfig& lc, const std::string& corpus_dir,
                      const std::string& m2s_path, const std::string& out_dir,
                      std::ostream& out) {
  ensure_dir(out_dir);
  corpus::Corpus c = corpus::load_corpus(corpus_dir);
  m2s::M2SModel m2s_model;
  if (lc.rc.diffusion.with_m2s) {
    check_arg(!m2s_path.empty(),
              "train-thunder: --m2s is required when the cycle loss is enabled "
              "(pass --no-m2s to train without it)");
    checkpoint::M2SCheckpoint ck = checkpoint::load_m2s(m2s_path);
    checkpoint::check_lineage(ck.lineage, c.manifest, "train-thunder");
    m2s_model = std::move(ck.model);
  }
  diffusion::NoiseSchedule schedule = diffusion::make_linear_schedule(lc.rc.diffusion_steps);
  diffusion::ThunderTrainResult res =
      diffusion::train_thunder(c, m2s_model, lc.rc.diffusion, schedule, lc.rc.thunder);
  checkpoint::Lineage lineage = checkpoint::corpus_lineage(c.manifest);
  checkpoint::save_thunder((fs::path(out_dir) / "thunder.efck").string(), res.model,
                           lineage);
  std::ostringstream hist;
  hist << "epoch,total,rec,vel,m2s\n";
  for (std::size_t e = 0; e < res.history.size(); ++e)
    hist << e << ',' << fmt_double(res.history[e].total) << ','
         << fmt_double(res.history[e].rec) << ',' << fmt_double(res.history[e].vel)
         << ',' << fmt_double(res.history[e].m2s) << '\n';
  write_text_file((fs::path(out_dir) / "thunder_history.csv").string(), hist.str());
  write_run_manifest(out_dir, "train-thunder", lc, lineage);
  out << "[train-thunder] " << res.history.size() << " epochs, cycle loss "
      << (lc.rc.diffusion.with_m2s ? "on" : "off");
  if (!res.history.empty()) out << ", final total " << fmt_double(res.history.back().total);
  out << " -> " << out_dir << "/thunder.efck\n";
  return 0;
}

int cmd_sample(const LoadedConfig& lc, const std::string& corpus_dir,
               const std::string& thunder_path, int seq_id, int n_samples,
               const std::string& out_dir, std::ostream& out, std::ostream& err) {
  check_arg(n_samples >= 1, "sample: number of samples must be at least 1");
  ensure_dir(out_dir);
  corpus::Corpus c = corpus::load_corpus(corpus_dir);
  checkpoint::ThunderCheckpoint ck = checkpoint::load_thunder(thunder_path);
  checkpoint::Lineage here = checkpoint::corpus_lineage(c.manifest);
  if (ck.lineage.corpus_id != here.corpus_id ||
      ck.lineage.codebook_hash != here.codebook_hash)
    err << "warning: sampling with a model trained on a different corpus ("
        << hex64(ck.lineage.corpus_id) << " vs " << hex64(here.corpus_id) << ")\n";
  const corpus::SequenceRecord& rec = record_at(c, seq_id);
  Mat feats = ck.model.encoder.encode(rec.mel);
  for (int k = 0; k < n_samples; ++k) {
    diffusion::SampleConfig sc;
    sc.s_a = lc.rc.eval.s_a;
    sc.seed = derive_seed(lc.rc.seed, static_cast<std::uint64_t>(seq_id),
                          static_cast<std::uint64_t>(k));
    Mat x = diffusion::sample(ck.model, feats, ck.model.schedule, sc);
    char name[48];
    std::snprintf(name, sizeof(name), "sample_%d_%d.csv", seq_id, k);
    write_matrix_csv((fs::path(out_dir) / name).string(), x);
  }
  write_run_manifest(out_dir, "sample", lc, here);
  out << "[sample] sequence " << seq_id << ": " << n_samples << " samples of "
      << rec.frames() << " frames -> " << out_dir << '\n';
  return 0;
}

int cmd_evaluate(const LoadedConfig& lc, const std::string& corpus_dir,
                 const std::string& thunder_path, const std::string& out_dir,
                 std::ostream& out) {
  ensure_dir(out_dir);
  corpus::Corpus c = corpus::load_corpus(corpus_dir);
  checkpoint::ThunderCheckpoint ck = checkpoint::load_thunder(thunder_path);
  checkpoint::check_lineage(ck.lineage, c.manifest, "evaluate");
  metrics::SamplerFn sampler = guided_sampler(ck.model, lc.rc.eval.s_a);
  metrics::MetricReport report = metrics::evaluate_model(sampler, c, lc.rc.eval.split,
                                                         lc.rc.eval.n_samples, lc.rc.seed);
  write_text_file((fs::path(out_dir) / "report.csv").string(),
                  metrics::report_csv(report));
  write_run_manifest(out_dir, "evaluate", lc, checkpoint::corpus_lineage(c.manifest));
  out << "[evaluate] split " << corpus::split_name(lc.rc.eval.split) << ", "
      << lc.rc.eval.n_samples << " samples per sequence\n"
      << metrics::report_table(report);
  return 0;
}

int cmd_ablate(const LoadedConfig& lc, const std::string& corpus_dir,
               const std::string& m2s_path, const std::string& out_dir,
               std::ostream& out) {
  ensure_dir(out_dir);
  corpus::Corpus c = corpus::load_corpus(corpus_dir);
  m2s::M2SModel m2s_model;
  bool have_m2s = false;
  if (!m2s_path.empty()) {
    checkpoint::M2SCheckpoint ck = checkpoint::load_m2s(m2s_path);
    checkpoint::check_lineage(ck.lineage, c.manifest, "ablate");
    m2s_model = std::move(ck.model);
    have_m2s = true;
  }
  AblationSpec spec;
  AblationVariant with;
  with.name = "with_m2s";
  with.with_m2s = true;
  with.input_space = have_m2s ? m2s_model.config.input_space : lc.rc.m2s.input_space;
  with.w_m2s = lc.rc.diffusion.w_m2s;
  with.encoder_mode = lc.rc.diffusion.encoder_mode;
  AblationVariant without = with;
  without.name = "no_m2s";
  without.with_m2s = false;
  spec.variants = {with, without};
  std::string csv = run_ablation(spec, lc.rc, c, have_m2s ? &m2s_model : nullptr,
                                 out_dir, out);
  write_text_file((fs::path(out_dir) / "ablation.csv").string(), csv);
  write_run_manifest(out_dir, "ablate", lc, checkpoint::corpus_lineage(c.manifest));
  out << csv;
  return 0;
}

int cmd_abas(const LoadedConfig& lc, const std::string& corpus_dir,
             const std::string& m2s_path, int seq_id, const std::string& out_dir,
             std::ostream& out) {
  ensure_dir(out_dir);
  corpus::Corpus c = corpus::load_corpus(corpus_dir);
  checkpoint::M2SCheckpoint ck = checkpoint::load_m2s(m2s_path);
  checkpoint::check_lineage(ck.lineage, c.manifest, "abas");
  const corpus::SequenceRecord& rec = record_at(c, seq_id);
  const Vec& spk =
      c.manifest.speakers[static_cast<std::size_t>(rec.speaker_id)].embedding;
  Mat x = m2s::analysis_by_audio_synthesis(ck.model, c.manifest.face, rec.mel,
                                           rec.units, rec.frames(), spk, lc.rc.abas);
  char name[48];
  std::snprintf(name, sizeof(name), "abas_%d.csv", seq_id);
  write_matrix_csv((fs::path(out_dir) / name).string(), x);
  Mat pred = decode_sequence(c.manifest.face, x);
  Mat gt = decode_sequence(c.manifest.face, rec.expressions);
  metrics::Correlation corr = metrics::lip_correlation(pred, gt, c.manifest.face.mouth_idx);
  std::string csv = "seq,l_pcc,l_ccc\n" + std::to_string(seq_id) + "," +
                    fmt_double(corr.pcc) + "," + fmt_double(corr.ccc) + "\n";
  write_text_file((fs::path(out_dir) / "abas_report.csv").string(), csv);
  write_run_manifest(out_dir, "abas", lc, checkpoint::corpus_lineage(c.manifest));
  out << "[abas] sequence " << seq_id << " lip pcc " << fmt_double(corr.pcc)
      << " lip ccc " << fmt_double(corr.ccc) << " -> " << out_dir << '\n';
  return 0;
}

}  // namespace

void AblationSpec::validate() const {
  check_arg(!variants.empty(), "ablation: need at least one variant");
  std::set<std::string> names;
  for (const AblationVariant& v : variants) {
    check_arg(!v.name.empty(), "ablation: variant names must be nonempty");
    check_arg(names.insert(v.name).second,
              "ablation: duplicate variant name '" + v.name + "'");
  }
}

std::string run_ablation(const AblationSpec& spec, const config::RunConfig& rc,
                         const corpus::Corpus& corpus, const m2s::M2SModel* m2s_model,
                         const std::string& save_dir, std::ostream& progress) {
  spec.validate();
  diffusion::NoiseSchedule schedule = diffusion::make_linear_schedule(rc.diffusion_steps);
  checkpoint::Lineage lineage = checkpoint::corpus_lineage(corpus.manifest);
  m2s::M2SModel unused;
  std::ostringstream csv;
  csv << "variant,with_m2s,input_space,w_m2s,encoder_mode," << "lve,dtw,l_pcc,l_ccc,"
      << "fdd_u,fdd_l,s_div_u,s_div_l,t_div_u,t_div_l\n";
  std::optional<metrics::MetricReport> first_with, first_without;
  for (const AblationVariant& v : spec.variants) {
    if (v.with_m2s) {
      check_arg(m2s_model != nullptr,
                "ablation: variant '" + v.name + "' needs an m2s checkpoint");
      check_arg(m2s_model->config.input_space == v.input_space,
                "ablation: variant '" + v.name + "' wants input space " +
                    m2s::input_space_name(v.input_space) +
                    " but the checkpoint was trained on " +
                    m2s::input_space_name(m2s_model->config.input_space));
    }
    diffusion::DenoiserConfig cfg = rc.diffusion;
    cfg.with_m2s = v.with_m2s;
    cfg.w_m2s = v.w_m2s;
    cfg.encoder_mode = v.encoder_mode;
    progress << "[ablate] training variant '" << v.name << "'\n";
    diffusion::ThunderTrainResult res = diffusion::train_thunder(
        corpus, v.with_m2s ? *m2s_model : unused, cfg, schedule, rc.thunder);
    if (!save_dir.empty())
      checkpoint::save_thunder(
          (fs::path(save_dir) / ("thunder_" + v.name + ".efck")).string(), res.model,
          lineage);
    progress << "[ablate] evaluating variant '" << v.name << "'\n";
    metrics::SamplerFn sampler = guided_sampler(res.model, rc.eval.s_a);
    metrics::MetricReport rep =
        metrics::evaluate_model(sampler, corpus, rc.eval.split, rc.eval.n_samples, rc.seed);
    csv << v.name << ',' << (v.with_m2s ? "true" : "false") << ','
        << m2s::input_space_name(v.input_space) << ',' << fmt_double(v.w_m2s) << ','
        << (v.encoder_mode == audio::EncoderMode::kFrozen ? "frozen" : "trainable")
        << ',' << metric_fields(rep) << '\n';
    if (v.with_m2s && !first_with) first_with = rep;
    if (!v.with_m2s && !first_without) first_without = rep;
  }
  if (first_with && first_without) {
    metrics::MetricReport d;
    d.lve = first_with->lve - first_without->lve;
    d.dtw = first_with->dtw - first_without->dtw;
    d.l_pcc = first_with->l_pcc - first_without->l_pcc;
    d.l_ccc = first_with->l_ccc - first_without->l_ccc;
    d.fdd_u = first_with->fdd_u - first_without->fdd_u;
    d.fdd_l = first_with->fdd_l - first_without->fdd_l;
    d.s_div_u = first_with->s_div_u - first_without->s_div_u;
    d.s_div_l = first_with->s_div_l - first_without->s_div_l;
    d.t_div_u = first_with->t_div_u - first_without->t_div_u;
    d.t_div_l = first_with->t_div_l - first_without->t_div_l;
    csv << "delta_with_minus_without,,,,," << metric_fields(d) << '\n';
  }
  return csv.str();
}

int run_command(const std::vector<std::string>& args, std::ostream& out,
                std::ostream& err) {
  CLI::App app{"speech-driven facial animation workbench"};
  app.name("echoface");
  app.require_subcommand(1);

  std::string config_path, out_dir, corpus_dir, m2s_path, thunder_path;
  std::uint64_t seed = 0;
  int seq_id = 0;
  int n_samples = 0;
  double m2s_weight = 1.0;

  auto add_common = [&](CLI::App* sub, bool needs_corpus) {
    sub->add_option("--config", config_path, "configuration file (defaults when absent)");
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--out", out_dir, "output directory")->required();
    if (needs_corpus)
      sub->add_option("--corpus", corpus_dir, "corpus directory")->required();
  };

  CLI::App* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  add_common(gen, false);

  CLI::App* fit = app.add_subcommand("fit-units", "fit a speech-unit codebook");
  add_common(fit, true);

  CLI::App* tm = app.add_subcommand("train-m2s", "train the mesh-to-speech regressor");
  add_common(tm, true);

  CLI::App* em = app.add_subcommand("eval-m2s", "evaluate a mesh-to-speech checkpoint");
  add_common(em, true);
  em->add_option("--m2s", m2s_path, "mesh-to-speech checkpoint")->required();

  CLI::App* tt = app.add_subcommand("train-thunder", "train the diffusion animator");
  add_common(tt, true);
  tt->add_option("--m2s", m2s_path, "mesh-to-speech checkpoint for the cycle loss");
  tt->add_flag("--with-m2s", "enable the audio cycle-consistency loss");
  tt->add_flag("--no-m2s", "disable the audio cycle-consistency loss");
  tt->add_option("--m2s-weight", m2s_weight, "cycle loss weight");
  tt->add_flag("--freeze-audio", "keep the audio encoder frozen");
  tt->add_flag("--train-audio", "train the audio encoder jointly");

  CLI::App* sm = app.add_subcommand("sample", "sample animations for one sequence");
  add_common(sm, true);
  sm->add_option("--thunder", thunder_path, "animator checkpoint")->required();
  sm->add_option("--audio", seq_id, "sequence id providing the audio")->required();
  sm->add_option("--num-samples", n_samples, "number of samples to draw");

  CLI::App* ev = app.add_subcommand("evaluate", "run the full metric suite");
  add_common(ev, true);
  ev->add_option("--thunder", thunder_path, "animator checkpoint")->required();

  CLI::App* ab = app.add_subcommand("ablate", "compare training with and without the cycle loss");
  add_common(ab, true);
  ab->add_option("--m2s", m2s_path, "mesh-to-speech checkpoint for the cycle variant");

  CLI::App* av = app.add_subcommand("abas", "recover animation from audio by optimization");
  add_common(av, true);
  av->add_option("--m2s", m2s_path, "mesh-to-speech checkpoint")->required();
  av->add_option("--audio", seq_id, "sequence id providing the target audio")->required();

  try {
    // CLI11's vector overload consumes arguments back to front.
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  CLI::App* sub = app.get_subcommands().at(0);
  const std::string name = sub->get_name();
  try {
    LoadedConfig lc = load_run_config(config_path, sub->count("--seed") > 0, seed);
    if (name == "gen-corpus") return cmd_gen_corpus(lc, out_dir, out);
    if (name == "fit-units") return cmd_fit_units(lc, corpus_dir, out_dir, out);
    if (name == "train-m2s") return cmd_train_m2s(std::move(lc), corpus_dir, out_dir, out);
    if (name == "eval-m2s") return cmd_eval_m2s(lc, corpus_dir, m2s_path, out_dir, out);
    if (name == "train-thunder") {
      check_arg(!(sub->count("--with-m2s") && sub->count("--no-m2s")),
                "train-thunder: pass at most one of --with-m2s / --no-m2s");
      check_arg(!(sub->count("--freeze-audio") && sub->count("--train-audio")),
                "train-thunder: pass at most one of --freeze-audio / --train-audio");
      if (sub->count("--with-m2s")) lc.rc.diffusion.with_m2s = true;
      if (sub->count("--no-m2s")) lc.rc.diffusion.with_m2s = false;
      if (sub->count("--m2s-weight")) lc.rc.diffusion.w_m2s = m2s_weight;
      if (sub->count("--freeze-audio"))
        lc.rc.diffusion.encoder_mode = audio::EncoderMode::kFrozen;
      if (sub->count("--train-audio"))
        lc.rc.diffusion.encoder_mode = audio::EncoderMode::kTrainable;
      lc.rc.diffusion.validate();
      return cmd_train_thunder(lc, corpus_dir, m2s_path, out_dir, out);
    }
    if (name == "sample") {
      int n = sub->count("--num-samples") ? n_samples : lc.rc.eval.n_samples;
      return cmd_sample(lc, corpus_dir, thunder_path, seq_id, n, out_dir, out, err);
    }
    if (name == "evaluate") return cmd_evaluate(lc, corpus_dir, thunder_path, out_dir, out);
    if (name == "ablate") return cmd_ablate(lc, corpus_dir, m2s_path, out_dir, out);
    if (name == "abas") return cmd_abas(lc, corpus_dir, m2s_path, seq_id, out_dir, out);
    throw InvalidArgument("unknown command: " + name);
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const NotFoundError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace echoface::cli
