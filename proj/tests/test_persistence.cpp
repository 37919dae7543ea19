#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "echoface/checkpoint.hpp"
#include "echoface/corpus.hpp"
#include "echoface/diffusion.hpp"
#include "echoface/m2s.hpp"

using namespace echoface;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / "echoface_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<char>(std::istreambuf_iterator<char>(f),
                           std::istreambuf_iterator<char>());
}

void corrupt_byte(const fs::path& p, std::size_t offset, char value) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  REQUIRE(f.good());
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(&value, 1);
}

void truncate_to(const fs::path& p, std::size_t size) {
  auto data = slurp(p);
  REQUIRE(data.size() > size);
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(data.data(), static_cast<std::streamsize>(size));
}

corpus::Corpus tiny_corpus() {
  corpus::CorpusConfig cfg;
  cfg.n_train = 3;
  cfg.n_val = 1;
  cfg.n_test = 1;
  cfg.n_v = 120;
  cfg.psi_dim = 12;
  return corpus::make_corpus(cfg);
}

}  // namespace

TEST_CASE("sequence file: pinned byte layout") {
  auto dir = temp_dir("layout");
  auto c = tiny_corpus();
  const auto& rec = c.records[0];
  auto path = (dir / "one.thsq").string();
  corpus::write_sequence(path, rec, c.manifest.config.psi_dim,
                         c.manifest.config.n_units);

  auto bytes = slurp(path);
  auto u32 = [&](std::size_t off) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
  };
  auto u16 = [&](std::size_t off) {
    std::uint16_t v;
    std::memcpy(&v, bytes.data() + off, 2);
    return v;
  };
  REQUIRE(bytes.size() >= 32);
  CHECK(std::string(bytes.data(), 4) == "THSQ");
  CHECK(u32(4) == 1);  // version
  auto t_len = static_cast<std::uint32_t>(rec.frames());
  CHECK(u32(8) == t_len);
  CHECK(u32(12) == 12);      // psi_dim
  CHECK(u32(16) == 2 * t_len);  // mel frames
  CHECK(u32(20) == 80);      // mel bins
  CHECK(u32(24) == 8);       // unit vocabulary
  CHECK(u16(28) == static_cast<std::uint16_t>(rec.speaker_id));
  CHECK(u16(30) == 0);  // reserved
  std::size_t expect = 32 + 4u * t_len * (12 + 3) + 4u * 2 * t_len * 80 + 2u * 2 * t_len;
  CHECK(bytes.size() == expect);

  // First expression value as float32, row-major.
  float f0;
  std::memcpy(&f0, bytes.data() + 32, 4);
  CHECK(static_cast<double>(f0) == rec.expressions(0, 0));

  int n_units = 0;
  auto back = corpus::read_sequence(path, &n_units);
  CHECK(n_units == 8);
  CHECK(back.expressions == rec.expressions);
  CHECK(back.mel == rec.mel);
  CHECK(back.units == rec.units);
  CHECK(back.speaker_id == rec.speaker_id);
}

TEST_CASE("corpus round-trip: save, load, save again is byte-identical") {
  auto dir_a = temp_dir("round_a");
  auto dir_b = temp_dir("round_b");
  auto c = tiny_corpus();
  corpus::save_corpus(c, dir_a.string());
  auto loaded = corpus::load_corpus(dir_a.string());

  REQUIRE(loaded.records.size() == c.records.size());
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    CHECK(loaded.records[i].expressions == c.records[i].expressions);
    CHECK(loaded.records[i].mel == c.records[i].mel);
    CHECK(loaded.records[i].units == c.records[i].units);
    CHECK(loaded.records[i].speaker_id == c.records[i].speaker_id);
    CHECK(loaded.records[i].utterance.phoneme_ids == c.records[i].utterance.phoneme_ids);
    CHECK(loaded.records[i].utterance.durations == c.records[i].utterance.durations);
    CHECK(loaded.splits[i] == c.splits[i]);
  }
  CHECK(loaded.manifest.corpus_id == c.manifest.corpus_id);
  CHECK(loaded.manifest.face.vertices == c.manifest.face.vertices);
  CHECK(loaded.manifest.face.basis == c.manifest.face.basis);
  CHECK(loaded.manifest.face.jaw_weights == c.manifest.face.jaw_weights);
  CHECK(loaded.manifest.face.jaw_pivot == c.manifest.face.jaw_pivot);
  CHECK(loaded.manifest.face.faces == c.manifest.face.faces);
  CHECK(loaded.manifest.face.mouth_idx == c.manifest.face.mouth_idx);
  CHECK(loaded.manifest.face.lip_idx == c.manifest.face.lip_idx);
  CHECK(loaded.manifest.codebook.centroids == c.manifest.codebook.centroids);
  REQUIRE(loaded.manifest.bank.size() == c.manifest.bank.size());
  for (std::size_t i = 0; i < c.manifest.bank.size(); ++i) {
    CHECK(loaded.manifest.bank[i].viseme == c.manifest.bank[i].viseme);
    CHECK(loaded.manifest.bank[i].mel_template == c.manifest.bank[i].mel_template);
    CHECK(loaded.manifest.bank[i].unit_id == c.manifest.bank[i].unit_id);
  }
  REQUIRE(loaded.manifest.speakers.size() == c.manifest.speakers.size());
  for (std::size_t s = 0; s < c.manifest.speakers.size(); ++s) {
    CHECK(loaded.manifest.speakers[s].tilt == c.manifest.speakers[s].tilt);
    CHECK(loaded.manifest.speakers[s].embedding == c.manifest.speakers[s].embedding);
    CHECK(loaded.manifest.speakers[s].split == c.manifest.speakers[s].split);
  }
  CHECK(loaded.manifest.config.seed == c.manifest.config.seed);
  CHECK(loaded.manifest.config.mel_noise_sigma == c.manifest.config.mel_noise_sigma);
  CHECK(loaded.manifest.config.tilt_amplitude == c.manifest.config.tilt_amplitude);

  // Splits remain disjoint by speaker after the round trip.
  for (std::size_t i = 0; i < loaded.records.size(); ++i)
    CHECK(loaded.manifest.speakers[static_cast<std::size_t>(
                                       loaded.records[i].speaker_id)]
              .split == loaded.splits[i]);

  corpus::save_corpus(loaded, dir_b.string());
  for (const auto& entry : fs::recursive_directory_iterator(dir_a)) {
    if (!entry.is_regular_file()) continue;
    auto rel = fs::relative(entry.path(), dir_a);
    CAPTURE(rel.string());
    CHECK(slurp(entry.path()) == slurp(dir_b / rel));
  }
}

TEST_CASE("persistence: corruption is detected and names the file") {
  auto dir = temp_dir("corrupt");
  auto c = tiny_corpus();
  corpus::save_corpus(c, dir.string());
  auto seq0 = dir / "seq" / "seq_00000.thsq";

  SUBCASE("corrupted magic") {
    corrupt_byte(seq0, 1, 'X');
    try {
      corpus::read_sequence(seq0.string());
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("seq_00000.thsq") != std::string::npos);
      CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
  }
  SUBCASE("bad version") {
    corrupt_byte(seq0, 4, 9);
    CHECK_THROWS_AS(corpus::read_sequence(seq0.string()), FormatError);
  }
  SUBCASE("truncated payload") {
    truncate_to(seq0, fs::file_size(seq0) / 2);
    try {
      corpus::read_sequence(seq0.string());
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("seq_00000.thsq") != std::string::npos);
    }
  }
  SUBCASE("trailing bytes") {
    std::ofstream f(seq0, std::ios::binary | std::ios::app);
    f.write("zz", 2);
    f.close();
    CHECK_THROWS_AS(corpus::read_sequence(seq0.string()), FormatError);
  }
  SUBCASE("out-of-range unit id") {
    // Last two bytes are the final u16 unit id.
    corrupt_byte(seq0, fs::file_size(seq0) - 1, 0x7f);
    CHECK_THROWS_AS(corpus::read_sequence(seq0.string()), FormatError);
  }
  SUBCASE("corrupted template magic") {
    corrupt_byte(dir / "template.eftp", 0, 'Z');
    try {
      corpus::load_corpus(dir.string());
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("template.eftp") != std::string::npos);
    }
  }
  SUBCASE("truncated codebook") {
    truncate_to(dir / "codebook.efcb", 10);
    CHECK_THROWS_AS(corpus::load_corpus(dir.string()), FormatError);
  }
  SUBCASE("unknown manifest key") {
    std::ofstream f(dir / "manifest.txt", std::ios::app);
    f << "mystery 42\n";
    f.close();
    CHECK_THROWS_AS(corpus::load_corpus(dir.string()), FormatError);
  }
  SUBCASE("missing directory") {
    CHECK_THROWS_AS(corpus::load_corpus((dir / "nope").string()), IoError);
  }
}

TEST_CASE("template and bank files: standalone round-trip") {
  auto dir = temp_dir("parts");
  auto tpl = make_synthetic_template(5, 150, 14);
  auto p = (dir / "t.eftp").string();
  corpus::write_face_template(p, tpl);
  auto back = corpus::read_face_template(p);
  CHECK(back.vertices == tpl.vertices);
  CHECK(back.basis == tpl.basis);
  CHECK(back.jaw_weights == tpl.jaw_weights);
  CHECK(back.jaw_pivot == tpl.jaw_pivot);
  CHECK(back.faces == tpl.faces);
  CHECK(back.mouth_idx == tpl.mouth_idx);
  CHECK(back.lip_idx == tpl.lip_idx);
  CHECK(back.upper_idx == tpl.upper_idx);
  CHECK(back.upper_lip_mid == tpl.upper_lip_mid);
  CHECK(back.lower_lip_mid == tpl.lower_lip_mid);
  CHECK(back.n_mouth_channels == tpl.n_mouth_channels);
  CHECK(back.n_upper_channels == tpl.n_upper_channels);

  auto bank = corpus::make_phoneme_bank(6, 5, 77);
  auto pb = (dir / "b.efpb").string();
  corpus::write_phoneme_bank(pb, bank);
  auto bank2 = corpus::read_phoneme_bank(pb);
  REQUIRE(bank2.size() == bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    CHECK(bank2[i].id == bank[i].id);
    CHECK(bank2[i].unit_id == bank[i].unit_id);
    CHECK(bank2[i].viseme == bank[i].viseme);
    CHECK(bank2[i].mel_template == bank[i].mel_template);
  }

  RandomStream rng(3);
  audio::UnitCodebook cb{rng.normal_matrix(8, 80)};
  auto pc = (dir / "c.efcb").string();
  corpus::write_codebook(pc, cb);
  CHECK(corpus::read_codebook(pc).centroids == cb.centroids);
}

TEST_CASE("m2s checkpoint round-trip") {
  auto dir = temp_dir("ckpt_m2s");
  auto c = tiny_corpus();
  m2s::M2STrainOptions opt;
  opt.epochs = 0;
  auto model = m2s::train_m2s(c, m2s::M2SConfig{}, opt).model;
  auto lineage = checkpoint::corpus_lineage(c.manifest);
  auto path = (dir / "m2s.efck").string();
  checkpoint::save_m2s(path, model, lineage);

  auto back = checkpoint::load_m2s(path);
  CHECK(back.lineage.corpus_id == lineage.corpus_id);
  CHECK(back.lineage.codebook_hash == lineage.codebook_hash);
  CHECK(back.model.config.input_space == model.config.input_space);
  CHECK(back.model.config.hidden == model.config.hidden);
  CHECK(back.model.config.n_blocks == model.config.n_blocks);
  CHECK(back.model.config.n_heads == model.config.n_heads);
  CHECK(back.model.config.conv_kernel == model.config.conv_kernel);
  CHECK(back.model.config.n_units == model.config.n_units);
  CHECK(back.model.input_dim == model.input_dim);
  CHECK(back.model.mel_mu == model.mel_mu);
  CHECK(back.model.mel_sigma == model.mel_sigma);
  auto a = model.params();
  auto b = back.model.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
  CHECK(back.model.params_hash() == model.params_hash());

  // The loaded model behaves identically.
  const auto& rec = c.records[0];
  Mat input = m2s::input_from_expressions(model.config, c.manifest.face,
                                          rec.expressions.topRows(6));
  const Vec& spk =
      c.manifest.speakers[static_cast<std::size_t>(rec.speaker_id)].embedding;
  auto out_a = model.forward(input, spk);
  auto out_b = back.model.forward(input, spk);
  CHECK(out_a.mel_hat == out_b.mel_hat);
  CHECK(out_a.unit_logits == out_b.unit_logits);

  // Saving the loaded model reproduces the file byte for byte.
  auto path2 = (dir / "m2s_again.efck").string();
  checkpoint::save_m2s(path2, back.model, back.lineage);
  CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("thunder checkpoint round-trip") {
  auto dir = temp_dir("ckpt_thunder");
  auto c = tiny_corpus();
  diffusion::DenoiserConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.f = 16;
  cfg.w_m2s = 0.25;
  cfg.with_m2s = false;
  cfg.encoder_mode = audio::EncoderMode::kTrainable;
  auto enc = audio::AudioEncoder::init(11, 8, audio::EncoderMode::kTrainable);
  diffusion::DenoiserModel model;
  model.init(cfg, diffusion::make_linear_schedule(10),
             c.manifest.config.psi_dim + 3, enc, 9);
  RandomStream rng(2);
  model.x_mu = rng.normal_matrix(1, model.x_dim).row(0);
  model.x_sigma = (rng.normal_matrix(1, model.x_dim).cwiseAbs().array() + 0.5)
                      .matrix()
                      .row(0);

  auto lineage = checkpoint::corpus_lineage(c.manifest);
  auto path = (dir / "thunder.efck").string();
  checkpoint::save_thunder(path, model, lineage);

  auto back = checkpoint::load_thunder(path);
  CHECK(back.lineage.corpus_id == lineage.corpus_id);
  CHECK(back.lineage.codebook_hash == lineage.codebook_hash);
  CHECK(back.model.config.layers == cfg.layers);
  CHECK(back.model.config.heads == cfg.heads);
  CHECK(back.model.config.f == cfg.f);
  CHECK(back.model.config.cond_dropout_prob == cfg.cond_dropout_prob);
  CHECK(back.model.config.w_m2s == cfg.w_m2s);
  CHECK(back.model.config.with_m2s == cfg.with_m2s);
  CHECK(back.model.config.encoder_mode == cfg.encoder_mode);
  CHECK(back.model.schedule.steps == model.schedule.steps);
  CHECK(back.model.schedule.beta == model.schedule.beta);
  CHECK(back.model.schedule.alpha == model.schedule.alpha);
  CHECK(back.model.x_dim == model.x_dim);
  CHECK(back.model.d_audio == model.d_audio);
  CHECK(back.model.x_mu == model.x_mu);
  CHECK(back.model.x_sigma == model.x_sigma);
  CHECK(back.model.encoder.mode == model.encoder.mode);
  CHECK(back.model.encoder.d_s == model.encoder.d_s);
  CHECK(back.model.encoder.params_hash() == model.encoder.params_hash());
  CHECK(back.model.params_hash() == model.params_hash());

  // The loaded model denoises identically.
  RandomStream noise_rng(7);
  Mat noisy = noise_rng.normal_matrix(5, model.x_dim);
  Mat feats = noise_rng.normal_matrix(5, model.d_audio);
  CHECK(model.denoise(noisy, 3, &feats) == back.model.denoise(noisy, 3, &feats));
  CHECK(model.denoise(noisy, 3, nullptr) == back.model.denoise(noisy, 3, nullptr));

  auto path2 = (dir / "thunder_again.efck").string();
  checkpoint::save_thunder(path2, back.model, back.lineage);
  CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("checkpoint corruption and kind confusion are rejected") {
  auto dir = temp_dir("ckpt_corrupt");
  auto c = tiny_corpus();
  m2s::M2STrainOptions opt;
  opt.epochs = 0;
  auto m2s_model = m2s::train_m2s(c, m2s::M2SConfig{}, opt).model;
  auto lineage = checkpoint::corpus_lineage(c.manifest);
  auto m2s_path = (dir / "m2s.efck").string();
  checkpoint::save_m2s(m2s_path, m2s_model, lineage);

  diffusion::DenoiserConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.f = 8;
  auto enc = audio::AudioEncoder::init(11, 8, audio::EncoderMode::kFrozen);
  diffusion::DenoiserModel den;
  den.init(cfg, diffusion::make_linear_schedule(5), c.manifest.config.psi_dim + 3,
           enc, 9);
  auto den_path = (dir / "thunder.efck").string();
  checkpoint::save_thunder(den_path, den, lineage);

  SUBCASE("corrupted magic") {
    corrupt_byte(m2s_path, 2, 'X');
    try {
      checkpoint::load_m2s(m2s_path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("m2s.efck") != std::string::npos);
      CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
  }
  SUBCASE("bad version") {
    corrupt_byte(m2s_path, 4, 9);
    CHECK_THROWS_AS(checkpoint::load_m2s(m2s_path), FormatError);
  }
  SUBCASE("kind confusion") {
    try {
      checkpoint::load_m2s(den_path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("kind") != std::string::npos);
    }
    CHECK_THROWS_AS(checkpoint::load_thunder(m2s_path), FormatError);
  }
  SUBCASE("truncation") {
    truncate_to(m2s_path, fs::file_size(m2s_path) / 3);
    CHECK_THROWS_AS(checkpoint::load_m2s(m2s_path), FormatError);
    truncate_to(den_path, 40);
    CHECK_THROWS_AS(checkpoint::load_thunder(den_path), FormatError);
  }
  SUBCASE("trailing bytes") {
    std::ofstream f(den_path, std::ios::binary | std::ios::app);
    f.write("z", 1);
    f.close();
    CHECK_THROWS_AS(checkpoint::load_thunder(den_path), FormatError);
  }
  SUBCASE("tampered schedule fails as a format error") {
    // beta[1] sits after the 28-byte header, 33 bytes of config fields
    // (4 + 4 + 4 + 8 + 8 + 1 + 4), the step count (4), the matrix shape
    // header (16), and beta[0] (8). Zeroing it makes the schedule invalid.
    std::size_t beta1 = 28 + 33 + 4 + 16 + 8;
    for (std::size_t i = 0; i < 8; ++i) corrupt_byte(den_path, beta1 + i, 0);
    try {
      checkpoint::load_thunder(den_path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("thunder.efck") != std::string::npos);
    }
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(checkpoint::load_m2s((dir / "nope.efck").string()), IoError);
  }
}

TEST_CASE("lineage checking") {
  auto c = tiny_corpus();
  auto lineage = checkpoint::corpus_lineage(c.manifest);
  CHECK(lineage.corpus_id == c.manifest.corpus_id);
  CHECK_NOTHROW(checkpoint::check_lineage(lineage, c.manifest, "evaluate"));

  SUBCASE("corpus id mismatch") {
    auto bad = lineage;
    bad.corpus_id += 1;
    try {
      checkpoint::check_lineage(bad, c.manifest, "evaluate");
      FAIL("expected InvalidArgument");
    } catch (const InvalidArgument& e) {
      std::string msg = e.what();
      CHECK(msg.find("lineage") != std::string::npos);
      CHECK(msg.find("evaluate") != std::string::npos);
    }
  }
  SUBCASE("codebook mismatch") {
    auto other = c.manifest;
    other.codebook.centroids(0, 0) += 1.0;
    try {
      checkpoint::check_lineage(lineage, other, "evaluate");
      FAIL("expected InvalidArgument");
    } catch (const InvalidArgument& e) {
      CHECK(std::string(e.what()).find("codebook") != std::string::npos);
    }
  }
}
