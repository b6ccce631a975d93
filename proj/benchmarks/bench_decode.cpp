#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "ctxst/decode.hpp"
#include "ctxst/eval.hpp"
#include "ctxst/infer.hpp"
#include "ctxst/model.hpp"
#include "ctxst/rng.hpp"

using namespace ctxst;

namespace {

constexpr std::size_t kSrcVocab = 39;
constexpr std::size_t kTgtVocab = 43;

ModelConfig bench_config() {
  ModelConfig cfg;  // stock desk dimensions
  cfg.dropout_rate = 0.0;
  cfg.seed = 21;
  return cfg;
}

Utterance bench_utterance(std::size_t frames, std::size_t feature_dim) {
  Utterance u;
  u.frames = frames;
  u.feature_dim = feature_dim;
  Rng rng(7);
  u.features.resize(frames * feature_dim);
  for (float& f : u.features) f = static_cast<float>(rng.normal() * 0.5);
  u.source_tokens.assign(frames / 4, "w");
  return u;
}

void bm_encode_utterance(benchmark::State& state) {
  const ModelConfig cfg = bench_config();
  ModelParams params = init_params(cfg, kSrcVocab, kTgtVocab);
  Utterance u = bench_utterance(static_cast<std::size_t>(state.range(0)), cfg.feature_dim);
  for (auto _ : state) {
    EncodedFeatures enc = encode_for_decoding(params, cfg, u);
    benchmark::DoNotOptimize(enc.st_h.v.data());
  }
}

void bm_decoder_step(benchmark::State& state) {
  const ModelConfig cfg = bench_config();
  ModelParams params = init_params(cfg, kSrcVocab, kTgtVocab);
  Utterance u = bench_utterance(40, cfg.feature_dim);
  EncodedFeatures enc = encode_for_decoding(params, cfg, u);
  const std::size_t steps = 16;
  for (auto _ : state) {
    DecoderCache cache = make_decoder_cache(cfg);
    std::vector<double> lp = decoder_step(params, cfg, enc, cache, Vocabulary::sos_id, 0);
    for (std::size_t s = 1; s < steps; ++s)
      lp = decoder_step(params, cfg, enc, cache, 7 + static_cast<int>(s % 8), s);
    benchmark::DoNotOptimize(lp.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * steps);
}

void bm_beam_search(benchmark::State& state) {
  const ModelConfig cfg = bench_config();
  ModelParams params = init_params(cfg, kSrcVocab, kTgtVocab);
  Utterance u = bench_utterance(40, cfg.feature_dim);
  EncodedFeatures enc = encode_for_decoding(params, cfg, u);
  DecodeConfig dc;
  dc.beam_size = static_cast<std::size_t>(state.range(0));
  dc.max_len = 20;
  for (auto _ : state) {
    auto hyps = beam_search(params, cfg, enc, {}, kTgtVocab, u.source_tokens.size(), dc);
    benchmark::DoNotOptimize(hyps.front().normalized_score);
  }
}

void bm_corpus_bleu(benchmark::State& state) {
  Rng rng(9);
  std::vector<TokenSeq> refs, hyps;
  for (int i = 0; i < 1000; ++i) {
    TokenSeq r, h;
    const std::size_t len = 6 + rng.uniform_index(8);
    for (std::size_t j = 0; j < len; ++j) {
      std::string tok = "t" + std::to_string(rng.uniform_index(40));
      r.push_back(tok);
      h.push_back(rng.bernoulli(0.8) ? tok : "x" + std::to_string(rng.uniform_index(40)));
    }
    refs.push_back(std::move(r));
    hyps.push_back(std::move(h));
  }
  for (auto _ : state) {
    BleuReport rep = corpus_bleu(hyps, refs);
    benchmark::DoNotOptimize(rep.bleu);
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * 1000);
}

}  // namespace

BENCHMARK(bm_encode_utterance)->Arg(24)->Arg(40)->Arg(80);
BENCHMARK(bm_decoder_step);
BENCHMARK(bm_beam_search)->Arg(1)->Arg(4)->Arg(10);
BENCHMARK(bm_corpus_bleu);
