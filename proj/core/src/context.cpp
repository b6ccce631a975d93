#include "ctxst/context.hpp"

#include <algorithm>

#include "ctxst/error.hpp"

namespace ctxst {

void validate(const ContextConfig& cfg) {
  require(cfg.k >= 0, "context: k must be non-negative");
  require(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0, "context: dropout_p must be in [0, 1)");
  require(cfg.truncation_limit >= 1, "context: truncation_limit must be at least 1");
}

ContextWindow assemble_context(const Conversation& conv, int index, const ContextConfig& cfg,
                               const HypStore* hyp_store) {
  validate(cfg);
  require(index >= 0 && static_cast<std::size_t>(index) < conv.utterances.size(),
          "context: utterance index " + std::to_string(index) + " out of range in " + conv.id);
  require((cfg.source_mode == ContextSource::hyp) == (hyp_store != nullptr),
          "context: hyp_store must be present exactly when source_mode is hyp");

  const char current_speaker = conv.utterances[static_cast<std::size_t>(index)].speaker;
  // Walk backwards collecting qualifying utterances, newest first, then
  // reverse. The speaker filter applies before the k cut, so "same" mode
  // reaches past other-speaker turns.
  std::vector<const Utterance*> picked;
  for (int i = index - 1; i >= 0 && static_cast<int>(picked.size()) < cfg.k; --i) {
    const Utterance& u = conv.utterances[static_cast<std::size_t>(i)];
    if (cfg.speaker_mode == SpeakerMode::same && u.speaker != current_speaker) continue;
    picked.push_back(&u);
  }
  std::reverse(picked.begin(), picked.end());

  ContextWindow window;
  for (const Utterance* u : picked) {
    if (cfg.source_mode == ContextSource::hyp) {
      const std::vector<std::string>* hyp = hyp_store->find(conv.id, u->index);
      if (hyp == nullptr) continue;  // no stored hypothesis: drop, do not backfill
      window.entries.push_back({u->speaker, *hyp});
    } else {
      window.entries.push_back({u->speaker, u->target_tokens});
    }
  }
  return window;
}

std::vector<int> render(const ContextWindow& window, const Vocabulary& vocab, int limit) {
  require(limit >= 1, "context: render limit must be at least 1");
  std::vector<int> ids;
  for (std::size_t e = 0; e < window.entries.size(); ++e) {
    if (e) ids.push_back(Vocabulary::sep_id);
    const ContextEntry& entry = window.entries[e];
    ids.push_back(entry.speaker == 'A' ? Vocabulary::spk_a_id : Vocabulary::spk_b_id);
    for (const std::string& tok : entry.tokens) ids.push_back(vocab.id(tok));
  }
  if (ids.size() > static_cast<std::size_t>(limit))
    ids.erase(ids.begin(), ids.end() - limit);
  return ids;
}

ContextWindow apply_context_dropout(const ContextWindow& window, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, "context: dropout probability must be in [0, 1)");
  if (rng.bernoulli(p)) return ContextWindow{};
  return window;
}

}  // namespace ctxst
