#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "ctxst/corpus.hpp"
#include "ctxst/decode.hpp"
#include "ctxst/infer.hpp"
#include "ctxst/model.hpp"
#include "doctest.h"
#include "kernels.hpp"

using namespace ctxst;

namespace {

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.asr_encoder_blocks = 1;
  cfg.st_encoder_blocks = 1;
  cfg.decoder_blocks = 1;
  cfg.attention_dim = 8;
  cfg.ff_dim = 8;
  cfg.heads = 2;
  cfg.dropout_rate = 0.0;
  cfg.feature_dim = 4;
  cfg.batch_size = 2;
  cfg.seed = 33;
  return cfg;
}

Utterance random_utterance(std::size_t frames, std::size_t dim, std::uint64_t seed) {
  Utterance u;
  u.conversation_id = "c0";
  u.index = 0;
  u.frames = frames;
  u.feature_dim = dim;
  Rng rng(seed);
  u.features.resize(frames * dim);
  for (float& f : u.features) f = static_cast<float>(rng.normal(0.0, 1.0));
  u.source_tokens = {"aa", "bb", "cc"};
  return u;
}

// Log-probability rows the tape decoder assigns to a prefix, one row per
// prefix position.
std::vector<std::vector<double>> tape_logprob_rows(const ModelParams& params,
                                                   const ModelConfig& cfg, const Utterance& u,
                                                   const std::vector<int>& prefix) {
  Tape tape;
  Tensor h_asr = encode_asr(tape, params, cfg, features_tensor(u));
  Tensor h_st = encode_st(tape, params, cfg, h_asr);
  Tensor logits = decoder_forward(tape, params, cfg, h_st, prefix, DecoderKind::st);
  const std::size_t v = logits.shape()[1];
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    std::vector<double> row(logits.values().begin() + static_cast<std::ptrdiff_t>(i * v),
                            logits.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * v));
    kernels::log_softmax_rows_inplace(row.data(), 1, v);
    rows.push_back(std::move(row));
  }
  return rows;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("ctxst_decode_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

// Reference scorer: every way to close a hypothesis within max_len steps,
// scored by replaying decoder_step from scratch.
struct OracleHyp {
  std::vector<int> ids;
  double log_prob;
  double normalized;
};

void enumerate_oracle(const ModelParams& params, const ModelConfig& cfg,
                      const EncodedFeatures& enc, const std::vector<int>& prefix,
                      std::size_t restart, const std::vector<int>& content,
                      std::size_t max_len, double penalty, std::vector<int>& ids,
                      std::vector<OracleHyp>& out) {
  // replay the whole prefix + ids to get the next distribution
  DecoderCache cache = make_decoder_cache(cfg);
  std::vector<double> lp_row;
  double lp = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    pos = i < restart ? i : i - restart;
    lp_row = decoder_step(params, cfg, enc, cache, prefix[i], pos);
  }
  for (std::size_t s = 0; s < ids.size(); ++s) {
    lp += lp_row[static_cast<std::size_t>(ids[s])];
    lp_row = decoder_step(params, cfg, enc, cache, ids[s], prefix.size() + s - restart);
  }
  if (ids.size() == max_len) {
    out.push_back({ids, lp, lp + penalty * static_cast<double>(ids.size())});
    return;
  }
  // close with eos here
  const double closed = lp + lp_row[Vocabulary::eos_id];
  out.push_back({ids, closed, closed + penalty * static_cast<double>(ids.size())});
  for (int tok : content) {
    ids.push_back(tok);
    enumerate_oracle(params, cfg, enc, prefix, restart, content, max_len, penalty, ids, out);
    ids.pop_back();
  }
}

}  // namespace

TEST_CASE("incremental decoder matches the tape decoder bitwise") {
  for (bool sos_first : {false, true}) {
    for (bool pe_restart : {false, true}) {
      ModelConfig cfg = micro_config();
      cfg.sos_before_context = sos_first;
      cfg.pe_restart_at_sos = pe_restart;
      ModelParams params = init_params(cfg, 12, 11);
      Utterance u = random_utterance(10, cfg.feature_dim, 91);

      const std::vector<int> ctx = {Vocabulary::spk_a_id, 7, 8, Vocabulary::sep_id};
      std::vector<int> prefix;
      if (sos_first) {
        prefix.push_back(Vocabulary::sos_id);
        prefix.insert(prefix.end(), ctx.begin(), ctx.end());
      } else {
        prefix = ctx;
        prefix.push_back(Vocabulary::sos_id);
      }
      for (int tok : {9, 7, 10}) prefix.push_back(tok);

      std::size_t restart = 0;
      if (pe_restart)
        for (std::size_t i = 0; i < prefix.size(); ++i)
          if (prefix[i] == Vocabulary::sos_id) {
            restart = i;
            break;
          }

      auto tape_rows = tape_logprob_rows(params, cfg, u, prefix);

      EncodedFeatures enc = encode_for_decoding(params, cfg, u);
      DecoderCache cache = make_decoder_cache(cfg);
      double worst = 0.0;
      for (std::size_t i = 0; i < prefix.size(); ++i) {
        const std::size_t pos = i < restart ? i : i - restart;
        std::vector<double> row = decoder_step(params, cfg, enc, cache, prefix[i], pos);
        worst = std::max(worst, max_abs_diff(row, tape_rows[i]));
      }
      CAPTURE(sos_first);
      CAPTURE(pe_restart);
      CHECK(worst == 0.0);
    }
  }
}

TEST_CASE("beam of one is greedy search") {
  ModelConfig cfg = micro_config();
  ModelParams params = init_params(cfg, 12, 13);
  Utterance u = random_utterance(8, cfg.feature_dim, 17);
  EncodedFeatures enc = encode_for_decoding(params, cfg, u);

  DecodeConfig dc;
  dc.beam_size = 1;
  dc.length_penalty = 0.3;
  dc.max_len = 12;

  auto hyps = beam_search(params, cfg, enc, {}, 13, u.source_tokens.size(), dc);
  REQUIRE(hyps.size() == 1);

  // hand-rolled greedy over the same steps
  std::vector<int> allowed;
  allowed.push_back(Vocabulary::eos_id);
  for (int k = Vocabulary::n_special; k < 13; ++k) allowed.push_back(k);

  DecoderCache cache = make_decoder_cache(cfg);
  std::vector<double> lp_row = decoder_step(params, cfg, enc, cache, Vocabulary::sos_id, 0);
  std::vector<int> ids;
  double lp = 0.0;
  for (std::size_t step = 0; step < dc.max_len; ++step) {
    int best = allowed.front();
    for (int tok : allowed)
      if (lp_row[static_cast<std::size_t>(tok)] > lp_row[static_cast<std::size_t>(best)]) best = tok;
    lp += lp_row[static_cast<std::size_t>(best)];
    if (best == Vocabulary::eos_id) break;
    ids.push_back(best);
    if (step + 1 == dc.max_len) break;
    lp_row = decoder_step(params, cfg, enc, cache, best, 1 + step);
  }

  CHECK(hyps[0].ids == ids);
  CHECK(hyps[0].log_prob == lp);
  CHECK(hyps[0].normalized_score == lp + dc.length_penalty * static_cast<double>(ids.size()));
}

TEST_CASE("wide beam reproduces exhaustive enumeration") {
  ModelConfig cfg = micro_config();
  const std::size_t tgt_vocab = 9;  // two content tokens: 7 and 8
  ModelParams params = init_params(cfg, 12, tgt_vocab);
  Utterance u = random_utterance(8, cfg.feature_dim, 29);
  EncodedFeatures enc = encode_for_decoding(params, cfg, u);

  const std::vector<int> prefix = {Vocabulary::sos_id};
  const std::vector<int> content = {7, 8};

  for (double penalty : {0.3, 1.7}) {
    DecodeConfig dc;
    dc.beam_size = 64;
    dc.length_penalty = penalty;
    dc.max_len = 3;

    std::vector<OracleHyp> oracle;
    std::vector<int> scratch;
    enumerate_oracle(params, cfg, enc, prefix, 0, content, dc.max_len, penalty, scratch, oracle);
    REQUIRE(oracle.size() == 15);  // 1 + 2 + 4 + 8 ways to stop
    std::sort(oracle.begin(), oracle.end(), [](const OracleHyp& a, const OracleHyp& b) {
      if (a.normalized != b.normalized) return a.normalized > b.normalized;
      return a.ids < b.ids;
    });

    auto hyps = beam_search(params, cfg, enc, {}, tgt_vocab, u.source_tokens.size(), dc);
    REQUIRE(hyps.size() == oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      CAPTURE(penalty);
      CAPTURE(i);
      CHECK(hyps[i].ids == oracle[i].ids);
      CHECK(hyps[i].log_prob == oracle[i].log_prob);
      CHECK(hyps[i].normalized_score == oracle[i].normalized);
    }

    // no narrower beam can beat the exhaustive optimum
    for (std::size_t b : {1u, 2u, 3u, 5u}) {
      DecodeConfig narrow = dc;
      narrow.beam_size = b;
      auto top = beam_search(params, cfg, enc, {}, tgt_vocab, u.source_tokens.size(), narrow);
      CHECK(top.front().normalized_score <= oracle.front().normalized + 1e-12);
    }
  }
}

TEST_CASE("uniform next-token scores exercise the documented tie-breaking") {
  ModelConfig cfg = micro_config();
  const std::size_t tgt_vocab = 9;
  ModelParams params = init_params(cfg, 12, tgt_vocab);
  // zero the output projection: every step scores every token equally
  params.tensors["st_dec.out.w"] =
      Tensor({cfg.attention_dim, tgt_vocab}, std::vector<double>(cfg.attention_dim * tgt_vocab, 0.0));
  params.tensors["st_dec.out.b"] = Tensor({tgt_vocab}, std::vector<double>(tgt_vocab, 0.0));

  Utterance u = random_utterance(8, cfg.feature_dim, 41);
  EncodedFeatures enc = encode_for_decoding(params, cfg, u);

  DecodeConfig dc;
  dc.beam_size = 2;
  dc.length_penalty = 3.0;  // long enough hypotheses win
  dc.max_len = 3;

  auto hyps = beam_search(params, cfg, enc, {}, tgt_vocab, u.source_tokens.size(), dc);
  REQUIRE(hyps.size() == 2);

  const double l = -std::log(9.0);
  const double e1 = 0.0 + l;
  const double e2 = e1 + l;
  const double e3 = e2 + l;

  // ties prefer eos, then the smallest content id, so the lone surviving
  // live path is all 7s; it hits the limit and closes without an eos term
  CHECK(hyps[0].ids == std::vector<int>{7, 7, 7});
  CHECK(hyps[0].log_prob == e3);
  CHECK(hyps[0].normalized_score == e3 + 9.0);

  // runner-up closed through eos one step earlier: same mass, shorter
  CHECK(hyps[1].ids == std::vector<int>{7, 7});
  CHECK(hyps[1].log_prob == e3);
  CHECK(hyps[1].normalized_score == e3 + 6.0);
}

namespace {

// shared fixture: a small synthetic corpus plus matching vocabularies
struct DecodeWorld {
  Corpus corpus;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
  ModelConfig cfg;
  ModelParams params;

  DecodeWorld() : params(make()) {}

  ModelParams make() {
    GeneratorConfig gc;
    gc.n_conversations = 3;
    gc.utterances_per_conversation = 3;
    gc.vocab_size_source = 22;
    gc.vocab_size_target = 26;
    gc.homophone_pairs = 1;
    gc.pronoun_fraction = 0.5;
    gc.frames_per_token = 4;
    gc.feature_dim = 4;
    gc.noise_std = 0.05;
    gc.seed = 7;
    corpus = generate_synthetic(gc);
    std::vector<std::string> src_lines, tgt_lines;
    for (const Conversation& c : corpus.conversations)
      for (const Utterance& u : c.utterances) {
        std::string s, t;
        for (const auto& tok : u.source_tokens) s += (s.empty() ? "" : " ") + tok;
        for (const auto& tok : u.target_tokens) t += (t.empty() ? "" : " ") + tok;
        src_lines.push_back(s);
        tgt_lines.push_back(t);
      }
    src_vocab = Vocabulary::build(src_lines);
    tgt_vocab = Vocabulary::build(tgt_lines);
    cfg = micro_config();
    cfg.seed = 3;
    return init_params(cfg, src_vocab.size(), tgt_vocab.size());
  }
};

bool same_output(const DecodeOutput& a, const DecodeOutput& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].conversation_id != b[i].conversation_id) return false;
    if (a[i].index != b[i].index) return false;
    if (a[i].normalized_score != b[i].normalized_score) return false;
    if (a[i].tokens != b[i].tokens) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("isolated decoding is deterministic and thread-count independent") {
  DecodeWorld w;
  ContextConfig ctx;
  ctx.k = 1;

  DecodeConfig dc;
  dc.beam_size = 3;
  dc.jobs = 1;

  for (DecodeContextMode mode :
       {DecodeContextMode::none, DecodeContextMode::gold, DecodeContextMode::random}) {
    DecodeOutput serial =
        decode_isolated(w.params, w.cfg, w.corpus.conversations, w.tgt_vocab, ctx, mode, dc);
    DecodeConfig threaded = dc;
    threaded.jobs = 4;
    DecodeOutput parallel =
        decode_isolated(w.params, w.cfg, w.corpus.conversations, w.tgt_vocab, ctx, mode, threaded);
    CHECK(same_output(serial, parallel));
    CHECK(serial.size() == 9);
  }

  // gold context actually reaches the decoder: some utterance must change
  DecodeOutput bare = decode_isolated(w.params, w.cfg, w.corpus.conversations, w.tgt_vocab, ctx,
                                      DecodeContextMode::none, dc);
  DecodeOutput gold = decode_isolated(w.params, w.cfg, w.corpus.conversations, w.tgt_vocab, ctx,
                                      DecodeContextMode::gold, dc);
  CHECK(!same_output(bare, gold));

  // with a single conversation there is nowhere to borrow random context from
  std::vector<Conversation> lone = {w.corpus.conversations[0]};
  DecodeOutput rand_lone =
      decode_isolated(w.params, w.cfg, lone, w.tgt_vocab, ctx, DecodeContextMode::random, dc);
  DecodeOutput none_lone =
      decode_isolated(w.params, w.cfg, lone, w.tgt_vocab, ctx, DecodeContextMode::none, dc);
  CHECK(same_output(rand_lone, none_lone));
}

TEST_CASE("sequential decoding feeds its own hypotheses forward") {
  DecodeWorld w;
  ContextConfig ctx;
  ctx.k = 2;

  DecodeConfig dc;
  dc.beam_size = 2;
  dc.jobs = 2;

  DecodeOutput got = decode_exact(w.params, w.cfg, w.corpus.conversations, w.tgt_vocab, ctx, dc);
  REQUIRE(got.size() == 9);

  // replay serially with an explicit hypothesis store per conversation
  ContextConfig hyp_cfg = ctx;
  hyp_cfg.source_mode = ContextSource::hyp;
  std::size_t at = 0;
  for (const Conversation& conv : w.corpus.conversations) {
    HypStore store;
    for (std::size_t i = 0; i < conv.utterances.size(); ++i, ++at) {
      ContextWindow win = assemble_context(conv, static_cast<int>(i), hyp_cfg, &store);
      std::vector<int> ctx_ids = render(win, w.tgt_vocab, hyp_cfg.truncation_limit);
      EncodedFeatures enc = encode_for_decoding(w.params, w.cfg, conv.utterances[i]);
      auto hyps = beam_search(w.params, w.cfg, enc, ctx_ids, w.tgt_vocab.size(),
                              conv.utterances[i].source_tokens.size(), dc);
      std::vector<std::string> tokens;
      for (int id : hyps.front().ids) tokens.push_back(w.tgt_vocab.token(id));
      CHECK(got[at].conversation_id == conv.id);
      CHECK(got[at].index == static_cast<int>(i));
      CHECK(got[at].normalized_score == hyps.front().normalized_score);
      CHECK(got[at].tokens == tokens);
      store.put(conv.id, static_cast<int>(i), tokens);
    }
  }
}

TEST_CASE("multistage decoding steps through hypothesis generations") {
  DecodeWorld w;
  ContextConfig ctx;
  ctx.k = 1;

  DecodeConfig dc;
  dc.beam_size = 2;
  dc.stages = 2;
  dc.jobs = 3;

  auto stages = decode_multistage(w.params, w.cfg, w.corpus.conversations, w.tgt_vocab, ctx, dc);
  REQUIRE(stages.size() == 3);

  DecodeOutput bare = decode_isolated(w.params, w.cfg, w.corpus.conversations, w.tgt_vocab, ctx,
                                      DecodeContextMode::none, dc);
  CHECK(same_output(stages[0], bare));

  // each later stage must equal an isolated pass over the previous stage's store
  ContextConfig hyp_cfg = ctx;
  hyp_cfg.source_mode = ContextSource::hyp;
  for (std::size_t s = 1; s < stages.size(); ++s) {
    HypStore store;
    for (const DecodedUtterance& d : stages[s - 1]) store.put(d.conversation_id, d.index, d.tokens);
    std::size_t at = 0;
    for (const Conversation& conv : w.corpus.conversations)
      for (std::size_t i = 0; i < conv.utterances.size(); ++i, ++at) {
        ContextWindow win = assemble_context(conv, static_cast<int>(i), hyp_cfg, &store);
        std::vector<int> ctx_ids = render(win, w.tgt_vocab, hyp_cfg.truncation_limit);
        EncodedFeatures enc = encode_for_decoding(w.params, w.cfg, conv.utterances[i]);
        auto hyps = beam_search(w.params, w.cfg, enc, ctx_ids, w.tgt_vocab.size(),
                                conv.utterances[i].source_tokens.size(), dc);
        CAPTURE(s);
        CAPTURE(at);
        CHECK(stages[s][at].normalized_score == hyps.front().normalized_score);
        std::vector<std::string> tokens;
        for (int id : hyps.front().ids) tokens.push_back(w.tgt_vocab.token(id));
        CHECK(stages[s][at].tokens == tokens);
      }
  }
}

TEST_CASE("decode output files round-trip") {
  TempDir tmp;
  DecodeOutput out;
  out.push_back({"conv-a", 0, -3.14159, {"he", "went", "home"}});
  out.push_back({"conv-a", 1, 2.0, {"one"}});
  out.push_back({"conv-b", 0, -0.00004, {}});  // empty hypothesis line

  const std::string path = (tmp.path / "decode.tsv").string();
  save_decode_output(path, out);
  DecodeOutput in = load_decode_output(path);
  REQUIRE(in.size() == out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(in[i].conversation_id == out[i].conversation_id);
    CHECK(in[i].index == out[i].index);
    CHECK(in[i].tokens == out[i].tokens);
    CHECK(std::abs(in[i].normalized_score - out[i].normalized_score) <= 5e-5);
  }

  const std::string bad = (tmp.path / "bad.tsv").string();
  {
    std::FILE* f = std::fopen(bad.c_str(), "w");
    std::fputs("conv-a\t0\tnot-enough-fields\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS((void)load_decode_output(bad), Error);
  CHECK_THROWS_AS((void)load_decode_output((tmp.path / "absent.tsv").string()), Error);
}

TEST_CASE("decode configuration validation") {
  DecodeConfig dc;
  dc.beam_size = 0;
  CHECK_THROWS_AS(validate(dc), Error);
  dc = DecodeConfig{};
  dc.stages = 0;
  CHECK_THROWS_AS(validate(dc), Error);
  dc = DecodeConfig{};
  dc.jobs = 0;
  CHECK_THROWS_AS(validate(dc), Error);
  dc = DecodeConfig{};
  dc.length_penalty = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(validate(dc), Error);
  CHECK_NOTHROW(validate(DecodeConfig{}));
}

TEST_CASE("parallel_for runs every index once and surfaces worker errors") {
  std::vector<std::atomic<int>> hits(57);
  for (auto& h : hits) h = 0;
  parallel_for(hits.size(), 5, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) CHECK(h.load() == 1);

  CHECK_THROWS_WITH_AS(parallel_for(8, 3,
                                    [](std::size_t i) {
                                      if (i == 3) fail("boom at 3");
                                    }),
                       "boom at 3", Error);
}
