#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxst/context.hpp"
#include "ctxst/infer.hpp"
#include "ctxst/model.hpp"

namespace ctxst {

struct DecodeConfig {
  std::size_t beam_size = 10;
  double length_penalty = 0.3;  // additive per-token bonus on the final score
  std::size_t max_len = 0;      // 0 picks 2 * source length + 8
  std::size_t stages = 1;       // refinement passes for multistage decoding
  std::size_t jobs = 1;
  std::uint64_t seed = 11;      // drives random-context draws only
};

void validate(const DecodeConfig& cfg);

struct Hypothesis {
  std::vector<int> ids;           // content tokens only, no sos/eos
  double log_prob = 0.0;          // includes the eos step when closed by eos
  double normalized_score = 0.0;  // log_prob + length_penalty * ids.size()
};

/// Beam search for one utterance given its encoded features and a rendered
/// context prefix. Specials other than eos are never proposed. Candidates
/// are ranked by accumulated log-probability; ties break on smaller token
/// id, then earlier parent beam slot. Hypotheses close on eos or at the
/// length limit, and the survivors are ordered by normalized score.
std::vector<Hypothesis> beam_search(const ModelParams& params, const ModelConfig& cfg,
                                    const EncodedFeatures& enc, const std::vector<int>& context_ids,
                                    std::size_t tgt_vocab_size, std::size_t source_token_count,
                                    const DecodeConfig& dc);

struct DecodedUtterance {
  std::string conversation_id;
  int index = 0;
  double normalized_score = 0.0;
  std::vector<std::string> tokens;
};

using DecodeOutput = std::vector<DecodedUtterance>;  // corpus order

enum class DecodeContextMode { none, gold, random };

/// Every utterance decoded independently. Context per mode: none = empty,
/// gold = reference context via ctx_cfg, random = a window lifted from a
/// different conversation (seeded per utterance; degenerates to empty when
/// there is no other conversation to draw from).
DecodeOutput decode_isolated(const ModelParams& params, const ModelConfig& cfg,
                             const std::vector<Conversation>& convs, const Vocabulary& tgt_vocab,
                             const ContextConfig& ctx_cfg, DecodeContextMode mode,
                             const DecodeConfig& dc);

/// Left-to-right within each conversation, feeding the decoder's own
/// earlier hypotheses back as context. Conversations run in parallel;
/// utterances within one never do.
DecodeOutput decode_exact(const ModelParams& params, const ModelConfig& cfg,
                          const std::vector<Conversation>& convs, const Vocabulary& tgt_vocab,
                          const ContextConfig& ctx_cfg, const DecodeConfig& dc);

/// Stage 0 decodes context-free; every later stage re-decodes all
/// utterances with context taken from the previous stage's hypotheses.
/// Returns stages+1 outputs, stage 0 first.
std::vector<DecodeOutput> decode_multistage(const ModelParams& params, const ModelConfig& cfg,
                                            const std::vector<Conversation>& convs,
                                            const Vocabulary& tgt_vocab,
                                            const ContextConfig& ctx_cfg, const DecodeConfig& dc);

/// One line per utterance: conv_id, index, normalized score, then the
/// space-joined tokens, tab separated.
void save_decode_output(const std::string& path, const DecodeOutput& out);
DecodeOutput load_decode_output(const std::string& path);

/// Deterministic work distribution: fn(i) runs exactly once for each
/// i < n, on up to `jobs` threads. Worker exceptions resurface here.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace ctxst
