#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ctxst/decode.hpp"
#include "doctest.h"

// Drives the installed binary end to end through every subcommand, checking
// the exit-code contract (0 ok, 1 usage/config, 2 runtime) and that re-runs
// are byte-identical.

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct CliWorld {
  fs::path dir;

  CliWorld() {
    dir = fs::temp_directory_path() / ("ctxst_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream cfg(dir / "exp.cfg");
    cfg << "seed = 5\n"
           "generator.n_conversations = 6\n"
           "generator.utterances_per_conversation = 3\n"
           "generator.vocab_size_source = 22\n"
           "generator.vocab_size_target = 26\n"
           "generator.homophone_pairs = 1\n"
           "generator.feature_dim = 4\n"
           "generator.frames_per_token = 4\n"
           "model.asr_encoder_blocks = 1\n"
           "model.st_encoder_blocks = 1\n"
           "model.decoder_blocks = 1\n"
           "model.attention_dim = 8\n"
           "model.ff_dim = 8\n"
           "model.heads = 2\n"
           "model.epochs = 1\n"
           "model.pretrain_epochs = 1\n"
           "model.batch_size = 4\n"
           "model.warmup_steps = 4\n"
           "context.k = 1\n"
           "decode.beam_size = 2\n"
           "decode.jobs = 2\n"
           "split.train = 0.5\n"
           "split.dev = 0.25\n"
           "split.test = 0.25\n"
           "paths.corpus_dir = data\n"
           "paths.checkpoint_dir = ckpt\n"
           "paths.output_dir = out\n";
  }

  ~CliWorld() { fs::remove_all(dir); }

  RunResult run(const std::string& args) const {
    const fs::path out = dir / "stdout.txt";
    const fs::path err = dir / "stderr.txt";
    const std::string cmd = "cd '" + dir.string() + "' && '" CTXST_CLI_PATH "' " + args + " > '" +
                            out.string() + "' 2> '" + err.string() + "'";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }
};

// one world for the whole file: the pipeline steps build on each other
CliWorld& world() {
  static CliWorld w;
  return w;
}

}  // namespace

TEST_CASE("gen-data and train produce the expected artifacts") {
  CliWorld& w = world();

  RunResult gen = w.run("gen-data --config exp.cfg");
  CAPTURE(gen.err);
  REQUIRE(gen.exit_code == 0);
  CHECK(fs::exists(w.dir / "data" / "splits.tsv"));
  CHECK(fs::exists(w.dir / "data" / "lexicon.pos"));

  // second run into a fresh directory is byte-identical
  RunResult gen2 = w.run("gen-data --config exp.cfg --out data2");
  REQUIRE(gen2.exit_code == 0);
  for (const auto& entry : fs::directory_iterator(w.dir / "data")) {
    const fs::path twin = w.dir / "data2" / entry.path().filename();
    CAPTURE(entry.path().filename().string());
    CHECK(slurp(entry.path()) == slurp(twin));
  }

  RunResult tr = w.run("train --config exp.cfg --context-dropout 0.2");
  CAPTURE(tr.err);
  REQUIRE(tr.exit_code == 0);
  for (const char* name :
       {"checkpoint.bin", "checkpoint.pre.bin", "vocab.src", "vocab.tgt", "training_log.csv"})
    CHECK(fs::exists(w.dir / "ckpt" / name));

  // the log's drop-rate column reflects the override
  std::string log = slurp(w.dir / "ckpt" / "training_log.csv");
  CHECK(log.find("ctx_dropped_flag_rate") != std::string::npos);

  CHECK(w.run("train --config exp.cfg --no-context --k 2").exit_code == 1);
}

TEST_CASE("decode covers the strategies and validates flag combinations") {
  CliWorld& w = world();

  REQUIRE(w.run("decode --config exp.cfg --strategy isolated --out out/base.tsv").exit_code == 0);
  REQUIRE(w.run("decode --config exp.cfg --strategy isolated --context gold --k 1 --out out/gold.tsv")
              .exit_code == 0);
  REQUIRE(w.run("decode --config exp.cfg --strategy exact --out out/exact.tsv").exit_code == 0);
  RunResult multi =
      w.run("decode --config exp.cfg --strategy multistage --stages 2 --out out/multi.tsv");
  REQUIRE(multi.exit_code == 0);
  CHECK(fs::exists(w.dir / "out" / "multi.stage0.tsv"));
  CHECK(fs::exists(w.dir / "out" / "multi.stage2.tsv"));

  // outputs parse under the library loader and cover the whole test split
  ctxst::DecodeOutput base = ctxst::load_decode_output((w.dir / "out" / "base.tsv").string());
  CHECK(base.size() == 6);  // 2 test conversations x 3 utterances

  // stage 0 of multistage equals the isolated context-free pass
  CHECK(slurp(w.dir / "out" / "multi.stage0.tsv") == slurp(w.dir / "out" / "base.tsv"));

  // re-running a decode is byte-identical
  REQUIRE(w.run("decode --config exp.cfg --strategy isolated --context random --k 1 --out out/r1.tsv")
              .exit_code == 0);
  REQUIRE(w.run("decode --config exp.cfg --strategy isolated --context random --k 1 --out out/r2.tsv")
              .exit_code == 0);
  CHECK(slurp(w.dir / "out" / "r1.tsv") == slurp(w.dir / "out" / "r2.tsv"));

  // flag combinations ruled out by the strategy definitions
  CHECK(w.run("decode --config exp.cfg --strategy exact --context gold").exit_code == 1);
  CHECK(w.run("decode --config exp.cfg --strategy multistage --context none").exit_code == 1);
  CHECK(w.run("decode --config exp.cfg --strategy isolated --context hyp").exit_code == 1);
  CHECK(w.run("decode --config exp.cfg --strategy sideways").exit_code == 1);
  CHECK(w.run("decode --config exp.cfg --split weird").exit_code == 1);

  // isolated/none ignores --k with a warning, and still succeeds
  RunResult warned = w.run("decode --config exp.cfg --strategy isolated --k 3 --out out/w.tsv");
  CHECK(warned.exit_code == 0);
  CHECK(warned.err.find("--k has no effect") != std::string::npos);

  // a missing checkpoint is a runtime failure
  CHECK(w.run("decode --config exp.cfg --checkpoint nowhere/ckpt.bin").exit_code == 2);
}

TEST_CASE("evaluate and analyze wire the scorer to files") {
  CliWorld& w = world();

  RunResult self = w.run("evaluate --config exp.cfg --hyp out/gold.tsv --against out/gold.tsv");
  CAPTURE(self.err);
  REQUIRE(self.exit_code == 0);
  CHECK(self.out.find("p_value=1.0000") != std::string::npos);
  std::string report = slurp(w.dir / "out" / "eval.txt");
  CHECK(report.find("[bleu]") != std::string::npos);
  CHECK(report.find("[bootstrap]") != std::string::npos);
  CHECK(report.find("delta_bleu=0.0000") != std::string::npos);
  CHECK(report.find("[pos_f1]") != std::string::npos);

  // a hypothesis file equal to the references scores a perfect 100
  {
    ctxst::DecodeOutput ideal;
    ctxst::Corpus corpus = ctxst::load_corpus((w.dir / "data").string());
    auto manifest = ctxst::load_split_manifest((w.dir / "data" / "splits.tsv").string());
    ctxst::CorpusSplit split = ctxst::apply_split_manifest(corpus, manifest);
    for (const auto& conv : split.test)
      for (const auto& u : conv.utterances)
        ideal.push_back({conv.id, u.index, 0.0, u.target_tokens});
    ctxst::save_decode_output((w.dir / "out" / "ideal.tsv").string(), ideal);
  }
  RunResult perfect = w.run("evaluate --config exp.cfg --hyp out/ideal.tsv");
  REQUIRE(perfect.exit_code == 0);
  CHECK(perfect.out.find("bleu=100.0000") != std::string::npos);

  // identical evaluate runs produce byte-identical reports
  REQUIRE(w.run("evaluate --config exp.cfg --hyp out/gold.tsv --out out/e1.txt").exit_code == 0);
  REQUIRE(w.run("evaluate --config exp.cfg --hyp out/gold.tsv --out out/e2.txt").exit_code == 0);
  CHECK(slurp(w.dir / "out" / "e1.txt") == slurp(w.dir / "out" / "e2.txt"));

  // dropping an utterance from the file is an error naming it
  {
    std::string text = slurp(w.dir / "out" / "gold.tsv");
    const auto cut = text.find('\n');
    std::ofstream os(w.dir / "out" / "partial.tsv");
    os << text.substr(cut + 1);
  }
  RunResult missing = w.run("evaluate --config exp.cfg --hyp out/partial.tsv");
  CHECK(missing.exit_code == 2);
  CHECK(missing.err.find("missing 1 utterance") != std::string::npos);
  CHECK(missing.err.find("#0") != std::string::npos);

  RunResult an =
      w.run("analyze --config exp.cfg --baseline out/base.tsv --system out/gold.tsv");
  CAPTURE(an.err);
  REQUIRE(an.exit_code == 0);
  std::string analysis = slurp(w.dir / "out" / "analysis.txt");
  CHECK(analysis.find("[pos_f1.baseline]") != std::string::npos);
  CHECK(analysis.find("[pos_f1.system]") != std::string::npos);
  CHECK(analysis.find("[improvement]") != std::string::npos);

  REQUIRE(w.run("analyze --config exp.cfg --baseline out/base.tsv --system out/gold.tsv --out out/a2.txt")
              .exit_code == 0);
  CHECK(slurp(w.dir / "out" / "analysis.txt") == slurp(w.dir / "out" / "a2.txt"));

  // analyze without --system is a usage error from the parser
  CHECK(w.run("analyze --config exp.cfg --baseline out/base.tsv").exit_code == 1);
}

TEST_CASE("top-level usage errors exit with code 1") {
  CliWorld& w = world();
  CHECK(w.run("bogus-subcommand").exit_code == 1);
  CHECK(w.run("").exit_code == 1);
  CHECK(w.run("--help").exit_code == 0);
  CHECK(w.run("decode --help").exit_code == 0);
  CHECK(w.run("train --config missing.cfg").exit_code == 1);

  std::ofstream bad(w.dir / "bad.cfg");
  bad << "who.knows = 2\n";
  bad.close();
  CHECK(w.run("train --config bad.cfg").exit_code == 1);
}
