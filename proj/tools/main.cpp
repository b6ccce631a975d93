#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctxst/config.hpp"
#include "ctxst/decode.hpp"
#include "ctxst/eval.hpp"
#include "ctxst/model.hpp"

namespace fs = std::filesystem;
using namespace ctxst;

namespace {

// Exit contract: 0 success, 1 usage or configuration problem, 2 runtime
// failure. UsageError marks the first kind; plain Error the second.
struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(what) {}
};

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

LogLevel g_log = LogLevel::info;

void init_log_level() {
  const char* env = std::getenv("CTXST_LOG");
  if (env == nullptr) return;
  const std::string v = env;
  if (v == "quiet")
    g_log = LogLevel::quiet;
  else if (v == "info")
    g_log = LogLevel::info;
  else if (v == "debug")
    g_log = LogLevel::debug;
  else
    std::cerr << "warning: CTXST_LOG='" << v << "' not recognized (quiet|info|debug)\n";
}

void log_info(const std::string& msg) {
  if (g_log >= LogLevel::info) std::cerr << msg << '\n';
}

void log_debug(const std::string& msg) {
  if (g_log >= LogLevel::debug) std::cerr << msg << '\n';
}

ExperimentConfig load_config_or_defaults(const std::string& path) {
  if (path.empty()) {
    ExperimentConfig e;
    validate(e);
    return e;
  }
  try {
    return load_experiment_config(path);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail("cannot create directory '" + dir + "': " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// ---- shared data plumbing ---------------------------------------------------

struct LoadedCorpus {
  Corpus corpus;
  CorpusSplit split;
};

LoadedCorpus load_corpus_with_split(const std::string& dir) {
  LoadedCorpus lc;
  lc.corpus = load_corpus(dir);
  lc.split = apply_split_manifest(lc.corpus, load_split_manifest(join_path(dir, "splits.tsv")));
  return lc;
}

const std::vector<Conversation>& pick_split(const LoadedCorpus& lc, const std::string& name) {
  if (name == "train") return lc.split.train;
  if (name == "dev") return lc.split.dev;
  if (name == "test") return lc.split.test;
  throw UsageError("unknown split '" + name + "' (train|dev|test)");
}

// Vocabularies span the whole corpus: the generator's vocabulary is closed,
// and gold/hypothesis context from any split must stay in-vocabulary.
std::pair<Vocabulary, Vocabulary> build_vocabs(const Corpus& corpus) {
  std::vector<std::string> src_lines, tgt_lines;
  for (const Conversation& c : corpus.conversations)
    for (const Utterance& u : c.utterances) {
      std::string s, t;
      for (const auto& tok : u.source_tokens) s += (s.empty() ? "" : " ") + tok;
      for (const auto& tok : u.target_tokens) t += (t.empty() ? "" : " ") + tok;
      src_lines.push_back(std::move(s));
      tgt_lines.push_back(std::move(t));
    }
  return {Vocabulary::build(src_lines), Vocabulary::build(tgt_lines)};
}

std::size_t corpus_feature_dim(const std::vector<Conversation>& convs) {
  for (const Conversation& c : convs)
    for (const Utterance& u : c.utterances) return u.feature_dim;
  fail("corpus has no utterances");
}

// References for a split in corpus order, with the utterance keys needed to
// align a hypothesis file against them.
struct AlignedRefs {
  std::vector<TokenSeq> refs;
  std::vector<std::pair<std::string, int>> keys;
};

AlignedRefs split_references(const std::vector<Conversation>& convs) {
  AlignedRefs ar;
  for (const Conversation& c : convs)
    for (const Utterance& u : c.utterances) {
      ar.refs.push_back(u.target_tokens);
      ar.keys.emplace_back(c.id, u.index);
    }
  return ar;
}

std::vector<TokenSeq> align_hypotheses(const std::string& path, const AlignedRefs& ar) {
  DecodeOutput loaded = load_decode_output(path);
  std::map<std::pair<std::string, int>, const DecodedUtterance*> by_key;
  for (const DecodedUtterance& d : loaded) by_key[{d.conversation_id, d.index}] = &d;
  std::vector<TokenSeq> hyps;
  std::string missing;
  std::size_t n_missing = 0;
  for (const auto& key : ar.keys) {
    auto it = by_key.find(key);
    if (it == by_key.end()) {
      ++n_missing;
      if (!missing.empty()) missing += ", ";
      missing += key.first + "#" + std::to_string(key.second);
    } else {
      hyps.push_back(it->second->tokens);
    }
  }
  if (n_missing > 0)
    fail("'" + path + "' is missing " + std::to_string(n_missing) + " utterance(s): " + missing);
  return hyps;
}

// ---- subcommands --------------------------------------------------------------

int cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_override) {
  const std::string dir = out_override.empty() ? cfg.paths.corpus_dir : out_override;
  ensure_dir(dir);
  Corpus corpus = generate_synthetic(cfg.generator);
  save_corpus(dir, corpus);
  CorpusSplit split = split_corpus(corpus.conversations, cfg.split.train, cfg.split.dev,
                                   cfg.split.test, cfg.seed);
  save_split_manifest(join_path(dir, "splits.tsv"), split);
  log_info("wrote " + std::to_string(corpus.conversations.size()) + " conversations (" +
           std::to_string(split.train.size()) + " train / " + std::to_string(split.dev.size()) +
           " dev / " + std::to_string(split.test.size()) + " test) to " + dir);
  return 0;
}

struct TrainFlags {
  bool no_context = false;
  int k = -1;                  // <0: keep config value
  double context_dropout = -1;  // <0: keep config value
  std::int64_t seed = -1;      // <0: keep config value
  std::string out;
};

int cmd_train(const ExperimentConfig& cfg, const TrainFlags& flags) {
  LoadedCorpus lc = load_corpus_with_split(cfg.paths.corpus_dir);
  auto [src_vocab, tgt_vocab] = build_vocabs(lc.corpus);

  ModelConfig model_cfg = cfg.model;
  model_cfg.feature_dim = corpus_feature_dim(lc.split.train);
  ContextConfig ctx_cfg = cfg.context;
  if (flags.no_context) ctx_cfg.k = 0;
  if (flags.k >= 0) {
    if (flags.no_context) throw UsageError("--no-context and --k contradict each other");
    ctx_cfg.k = flags.k;
  }
  if (flags.context_dropout >= 0) ctx_cfg.dropout_p = flags.context_dropout;
  if (flags.seed >= 0) model_cfg.seed = static_cast<std::uint64_t>(flags.seed);
  try {
    validate(model_cfg);
    validate(ctx_cfg);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  log_info("training on " + std::to_string(lc.split.train.size()) + " conversations (k=" +
           std::to_string(ctx_cfg.k) + ", context dropout " + std::to_string(ctx_cfg.dropout_p) +
           ", seed " + std::to_string(model_cfg.seed) + ")");
  TrainResult result = train(lc.split.train, src_vocab, tgt_vocab, model_cfg, ctx_cfg);

  const std::string out_dir = flags.out.empty() ? cfg.paths.checkpoint_dir : flags.out;
  ensure_dir(out_dir);
  save_checkpoint(join_path(out_dir, "checkpoint.bin"), result.params, model_cfg,
                  src_vocab.size(), tgt_vocab.size());
  save_checkpoint(join_path(out_dir, "checkpoint.pre.bin"), result.pretrain_params, model_cfg,
                  src_vocab.size(), tgt_vocab.size());
  src_vocab.save(join_path(out_dir, "vocab.src"));
  tgt_vocab.save(join_path(out_dir, "vocab.tgt"));
  save_training_log(join_path(out_dir, "training_log.csv"), result.log);
  if (!result.log.empty()) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", result.log.back().loss.combined);
    log_info("finished " + std::to_string(result.log.size()) + " steps, final combined loss " +
             std::string(buf) + "; wrote " + out_dir);
  }
  return 0;
}

struct DecodeFlags {
  std::string strategy = "isolated";
  std::string context;  // empty: strategy-dependent default
  int k = -1;
  bool k_given = false;
  std::size_t jobs = 0;
  std::size_t stages = 0;
  std::int64_t seed = -1;
  std::string split = "test";
  std::string checkpoint;
  std::string out;
};

int cmd_decode(const ExperimentConfig& cfg, const DecodeFlags& flags) {
  const std::string ckpt_path = flags.checkpoint.empty()
                                     ? join_path(cfg.paths.checkpoint_dir, "checkpoint.bin")
                                     : flags.checkpoint;
  const std::string ckpt_dir = fs::path(ckpt_path).parent_path().string();
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Vocabulary tgt_vocab = Vocabulary::load(join_path(ckpt_dir, "vocab.tgt"));
  require(tgt_vocab.size() == ckpt.tgt_vocab_size,
          "checkpoint expects a target vocabulary of " + std::to_string(ckpt.tgt_vocab_size) +
              " but vocab.tgt holds " + std::to_string(tgt_vocab.size()));

  LoadedCorpus lc = load_corpus_with_split(cfg.paths.corpus_dir);
  const std::vector<Conversation>& convs = pick_split(lc, flags.split);
  require(!convs.empty(), "split '" + flags.split + "' holds no conversations");

  ContextConfig ctx_cfg = cfg.context;
  if (flags.k >= 0) ctx_cfg.k = flags.k;
  DecodeConfig dc = cfg.decode;
  if (flags.jobs > 0) dc.jobs = flags.jobs;
  if (flags.stages > 0) dc.stages = flags.stages;
  if (flags.seed >= 0) dc.seed = static_cast<std::uint64_t>(flags.seed);
  try {
    validate(ctx_cfg);
    validate(dc);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  const std::string out_path = flags.out.empty()
                                    ? join_path(cfg.paths.output_dir, "decode.tsv")
                                    : flags.out;
  if (!fs::path(out_path).parent_path().empty())
    ensure_dir(fs::path(out_path).parent_path().string());

  std::string context = flags.context;
  if (flags.strategy == "isolated") {
    if (context.empty()) context = "none";
    if (context == "hyp")
      throw UsageError(
          "isolated decoding has no hypothesis source; use --strategy exact or multistage");
    DecodeContextMode mode;
    if (context == "none")
      mode = DecodeContextMode::none;
    else if (context == "gold")
      mode = DecodeContextMode::gold;
    else if (context == "random")
      mode = DecodeContextMode::random;
    else
      throw UsageError("unknown --context '" + context + "' (none|gold|random|hyp)");
    if (mode == DecodeContextMode::none && flags.k_given)
      std::cerr << "warning: --k has no effect with --strategy isolated --context none\n";
    DecodeOutput out = decode_isolated(ckpt.params, ckpt.config, convs, tgt_vocab, ctx_cfg,
                                       mode, dc);
    save_decode_output(out_path, out);
    log_info("decoded " + std::to_string(out.size()) + " utterances (isolated/" + context +
             ") to " + out_path);
  } else if (flags.strategy == "exact") {
    if (context.empty()) context = "hyp";
    if (context != "hyp")
      throw UsageError("exact decoding is defined over the model's own hypotheses; --context " +
                       context + " is not available (use hyp)");
    DecodeOutput out = decode_exact(ckpt.params, ckpt.config, convs, tgt_vocab, ctx_cfg, dc);
    save_decode_output(out_path, out);
    log_info("decoded " + std::to_string(out.size()) + " utterances (exact) to " + out_path);
  } else if (flags.strategy == "multistage") {
    if (context.empty()) context = "hyp";
    if (context != "hyp")
      throw UsageError(
          "multistage decoding is defined over the model's own hypotheses; --context " + context +
          " is not available (use hyp)");
    auto stages = decode_multistage(ckpt.params, ckpt.config, convs, tgt_vocab, ctx_cfg, dc);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      fs::path p(out_path);
      const std::string stage_path =
          (p.parent_path() / (p.stem().string() + ".stage" + std::to_string(s) +
                              p.extension().string()))
              .string();
      save_decode_output(stage_path, stages[s]);
      log_debug("stage " + std::to_string(s) + " -> " + stage_path);
    }
    save_decode_output(out_path, stages.back());
    log_info("decoded " + std::to_string(stages.back().size()) + " utterances (multistage, " +
             std::to_string(stages.size()) + " passes) to " + out_path);
  } else {
    throw UsageError("unknown --strategy '" + flags.strategy + "' (isolated|exact|multistage)");
  }
  return 0;
}

struct EvaluateFlags {
  std::string hyp;
  std::string against;
  std::string split = "test";
  std::string out;
};

int cmd_evaluate(const ExperimentConfig& cfg, const EvaluateFlags& flags) {
  LoadedCorpus lc = load_corpus_with_split(cfg.paths.corpus_dir);
  AlignedRefs ar = split_references(pick_split(lc, flags.split));
  std::vector<TokenSeq> hyps = align_hypotheses(flags.hyp, ar);

  EvalReport report;
  report.bleu = corpus_bleu(hyps, ar.refs);
  if (!flags.against.empty()) {
    std::vector<TokenSeq> other = align_hypotheses(flags.against, ar);
    report.has_bootstrap = true;
    report.bootstrap = paired_bootstrap(hyps, other, ar.refs, 1000, cfg.seed);
  }
  report.tags = pos_f1(hyps, ar.refs, lc.corpus.lexicon);

  const std::string out_path =
      flags.out.empty() ? join_path(cfg.paths.output_dir, "eval.txt") : flags.out;
  if (!fs::path(out_path).parent_path().empty())
    ensure_dir(fs::path(out_path).parent_path().string());
  save_eval_report(out_path, report);

  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", report.bleu.bleu);
  std::cout << "bleu=" << buf << '\n';
  if (report.has_bootstrap) {
    std::snprintf(buf, sizeof(buf), "%.4f", report.bootstrap.p_value);
    std::cout << "p_value=" << buf << '\n';
  }
  log_info("wrote " + out_path);
  return 0;
}

struct AnalyzeFlags {
  std::string baseline;
  std::string system;
  std::string split = "test";
  std::string out;
};

int cmd_analyze(const ExperimentConfig& cfg, const AnalyzeFlags& flags) {
  LoadedCorpus lc = load_corpus_with_split(cfg.paths.corpus_dir);
  AlignedRefs ar = split_references(pick_split(lc, flags.split));
  std::vector<TokenSeq> base_hyps = align_hypotheses(flags.baseline, ar);
  std::vector<TokenSeq> sys_hyps = align_hypotheses(flags.system, ar);

  AnalyzeReport report;
  report.baseline = pos_f1(base_hyps, ar.refs, lc.corpus.lexicon);
  report.system = pos_f1(sys_hyps, ar.refs, lc.corpus.lexicon);
  report.top_gains = relative_improvement(report.system, report.baseline, 5);

  const std::string out_path =
      flags.out.empty() ? join_path(cfg.paths.output_dir, "analysis.txt") : flags.out;
  if (!fs::path(out_path).parent_path().empty())
    ensure_dir(fs::path(out_path).parent_path().string());
  save_analyze_report(out_path, report);

  for (const auto& [tag, gain] : report.top_gains) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", gain);
    std::cout << tag << ' ' << buf << '\n';
  }
  log_info("wrote " + out_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_log_level();

  CLI::App app{"contextual speech translation workbench"};
  app.require_subcommand(1);
  std::string config_path;

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dialogue corpus");
  std::string gen_out;
  gen->add_option("--config", config_path, "experiment config file");
  gen->add_option("--out", gen_out, "corpus directory (default: paths.corpus_dir)");

  CLI::App* tr = app.add_subcommand("train", "train recognition, then translation");
  TrainFlags tf;
  tr->add_option("--config", config_path, "experiment config file");
  tr->add_flag("--no-context", tf.no_context, "train the context-free baseline (k=0)");
  tr->add_option("--k", tf.k, "context window size override");
  tr->add_option("--context-dropout", tf.context_dropout, "context dropout probability override");
  tr->add_option("--seed", tf.seed, "training seed override");
  tr->add_option("--out", tf.out, "checkpoint directory (default: paths.checkpoint_dir)");

  CLI::App* de = app.add_subcommand("decode", "beam-decode a corpus split");
  DecodeFlags df;
  de->add_option("--config", config_path, "experiment config file");
  de->add_option("--strategy", df.strategy, "isolated|exact|multistage (default isolated)");
  de->add_option("--context", df.context,
                 "context source: none|gold|random (isolated) or hyp (exact/multistage)");
  de->add_option("--k", df.k, "context window size override");
  de->add_option("--jobs", df.jobs, "parallel decode workers");
  de->add_option("--stages", df.stages, "multistage refinement passes");
  de->add_option("--seed", df.seed, "random-context seed override");
  de->add_option("--split", df.split, "corpus split to decode (default test)");
  de->add_option("--checkpoint", df.checkpoint, "checkpoint file (default <checkpoint_dir>/checkpoint.bin)");
  de->add_option("--out", df.out, "decode output file (default <output_dir>/decode.tsv)");

  CLI::App* ev = app.add_subcommand("evaluate", "score a decode output against references");
  EvaluateFlags ef;
  ev->add_option("--config", config_path, "experiment config file");
  ev->add_option("--hyp", ef.hyp, "decode output file to score")->required();
  ev->add_option("--against", ef.against, "second system for paired bootstrap significance");
  ev->add_option("--split", ef.split, "corpus split the file was decoded from (default test)");
  ev->add_option("--out", ef.out, "report file (default <output_dir>/eval.txt)");

  CLI::App* an = app.add_subcommand("analyze", "per-POS-tag F1 comparison of two systems");
  AnalyzeFlags af;
  an->add_option("--config", config_path, "experiment config file");
  an->add_option("--baseline", af.baseline, "baseline decode output")->required();
  an->add_option("--system", af.system, "contextual decode output")->required();
  an->add_option("--split", af.split, "corpus split (default test)");
  an->add_option("--out", af.out, "report file (default <output_dir>/analysis.txt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  df.k_given = de->count("--k") > 0;

  try {
    const ExperimentConfig cfg = load_config_or_defaults(config_path);
    if (app.got_subcommand(gen)) return cmd_gen_data(cfg, gen_out);
    if (app.got_subcommand(tr)) return cmd_train(cfg, tf);
    if (app.got_subcommand(de)) return cmd_decode(cfg, df);
    if (app.got_subcommand(ev)) return cmd_evaluate(cfg, ef);
    if (app.got_subcommand(an)) return cmd_analyze(cfg, af);
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
