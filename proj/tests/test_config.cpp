#include <filesystem>
#include <fstream>

#include "ctxst/config.hpp"
#include "doctest.h"

using namespace ctxst;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("ctxst_config_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("dotted keys land in the right component") {
  ExperimentConfig e = parse_experiment_config({
      "# experiment settings",
      "",
      "generator.n_conversations = 12   # inline comment",
      "generator.vocab_size_target=48",
      "model.attention_dim = 32",
      "model.alpha1 = 0.25",
      "model.pe_restart_at_sos = true",
      "context.k = 3",
      "context.speaker_mode = same",
      "context.source_mode = hyp",
      "decode.beam_size = 5",
      "decode.length_penalty = 0.7",
      "split.train = 0.6",
      "split.dev = 0.2",
      "split.test = 0.2",
      "paths.corpus_dir = /tmp/corpus",
  });
  CHECK(e.generator.n_conversations == 12);
  CHECK(e.generator.vocab_size_target == 48);
  CHECK(e.model.attention_dim == 32);
  CHECK(e.model.alpha1 == 0.25);
  CHECK(e.model.pe_restart_at_sos == true);
  CHECK(e.context.k == 3);
  CHECK(e.context.speaker_mode == SpeakerMode::same);
  CHECK(e.context.source_mode == ContextSource::hyp);
  CHECK(e.decode.beam_size == 5);
  CHECK(e.decode.length_penalty == 0.7);
  CHECK(e.split.train == 0.6);
  CHECK(e.paths.corpus_dir == "/tmp/corpus");
  // untouched keys keep their defaults
  CHECK(e.model.attention_dim != ModelConfig{}.attention_dim);
  CHECK(e.model.ff_dim == ModelConfig{}.ff_dim);
}

TEST_CASE("the bare seed key reseeds every component in file order") {
  ExperimentConfig e = parse_experiment_config({
      "generator.seed = 1",
      "seed = 99",
      "model.seed = 7",
  });
  CHECK(e.seed == 99);
  CHECK(e.generator.seed == 99);  // overwritten by the global seed
  CHECK(e.decode.seed == 99);
  CHECK(e.model.seed == 7);  // later per-component line wins
}

TEST_CASE("unknown keys and malformed values are rejected") {
  CHECK_THROWS_WITH_AS(parse_experiment_config({"model.attention = 4"}),
                       "config: unknown key 'model.attention' on line 1", Error);
  CHECK_THROWS_AS(parse_experiment_config({"model.attention_dim"}), Error);
  CHECK_THROWS_AS(parse_experiment_config({"model.attention_dim = four"}), Error);
  CHECK_THROWS_AS(parse_experiment_config({"model.alpha1 = 0.5x"}), Error);
  CHECK_THROWS_AS(parse_experiment_config({"model.pe_restart_at_sos = yes"}), Error);
  CHECK_THROWS_AS(parse_experiment_config({"context.speaker_mode = both"}), Error);
  CHECK_THROWS_AS(parse_experiment_config({"generator.n_conversations = -3"}), Error);
  CHECK_THROWS_AS(parse_experiment_config({"= 3"}), Error);
}

TEST_CASE("validation rejects inconsistent experiments") {
  ExperimentConfig e;
  CHECK_NOTHROW(validate(e));
  e.split.test = 0.5;
  CHECK_THROWS_WITH_AS(validate(e), "config: split fractions must sum to 1", Error);
  e = ExperimentConfig{};
  e.split = {0.5, 0.6, -0.1};
  CHECK_THROWS_AS(validate(e), Error);
  e = ExperimentConfig{};
  e.model.alpha1 = 2.0;
  CHECK_THROWS_AS(validate(e), Error);
  e = ExperimentConfig{};
  e.decode.beam_size = 0;
  CHECK_THROWS_AS(validate(e), Error);
  e = ExperimentConfig{};
  e.generator.n_conversations = 0;
  CHECK_THROWS_AS(validate(e), Error);
}

TEST_CASE("config files load with validation and name the file on error") {
  TempDir tmp;
  const std::string good = (tmp.path / "good.cfg").string();
  {
    std::ofstream os(good);
    os << "seed = 4\nmodel.epochs = 2\n";
  }
  ExperimentConfig e = load_experiment_config(good);
  CHECK(e.model.seed == 4);
  CHECK(e.model.epochs == 2);

  const std::string bad = (tmp.path / "bad.cfg").string();
  {
    std::ofstream os(bad);
    os << "nonsense = 1\n";
  }
  try {
    (void)load_experiment_config(bad);
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(std::string(err.what()).find("unknown key 'nonsense'") != std::string::npos);
    CHECK(std::string(err.what()).find(bad) != std::string::npos);
  }
  CHECK_THROWS_AS((void)load_experiment_config((tmp.path / "absent.cfg").string()), Error);
}
