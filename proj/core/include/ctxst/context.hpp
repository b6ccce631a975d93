#pragma once

#include <map>
#include <string>
#include <vector>

#include "ctxst/corpus.hpp"
#include "ctxst/rng.hpp"
#include "ctxst/vocab.hpp"

namespace ctxst {

enum class SpeakerMode { cross, same };
enum class ContextSource { gold, hyp };

struct ContextConfig {
  int k = 0;                      // previous sentences to include
  SpeakerMode speaker_mode = SpeakerMode::cross;
  int truncation_limit = 50;      // rendered suffix length cap
  double dropout_p = 0.2;         // training-time all-or-nothing drop
  ContextSource source_mode = ContextSource::gold;
};

void validate(const ContextConfig& cfg);

struct ContextEntry {
  char speaker = 'A';
  std::vector<std::string> tokens;  // target-language sentence
};

struct ContextWindow {
  std::vector<ContextEntry> entries;  // oldest first
  std::vector<int> rendered;          // filled by render(); empty until then
  bool empty() const { return entries.empty(); }
};

/// Model-predicted translations usable as context, keyed by conversation id
/// and utterance index.
struct HypStore {
  std::map<std::string, std::map<int, std::vector<std::string>>> by_conversation;

  void put(const std::string& conv_id, int index, std::vector<std::string> tokens) {
    by_conversation[conv_id][index] = std::move(tokens);
  }
  const std::vector<std::string>* find(const std::string& conv_id, int index) const {
    auto c = by_conversation.find(conv_id);
    if (c == by_conversation.end()) return nullptr;
    auto u = c->second.find(index);
    return u == c->second.end() ? nullptr : &u->second;
  }
};

/// The up-to-k most recent qualifying utterances before `index` in the same
/// conversation, oldest first. speaker_mode=same keeps only utterances by
/// the current speaker; cross keeps any. In hyp mode tokens come from
/// hyp_store and selected utterances without a stored hypothesis are
/// dropped (the window shrinks; nothing older is pulled in).
ContextWindow assemble_context(const Conversation& conv, int index, const ContextConfig& cfg,
                               const HypStore* hyp_store = nullptr);

/// Token ids: per entry a speaker tag then the sentence, entries joined by
/// [SEP]; if the result exceeds `limit` only the LAST limit ids survive.
std::vector<int> render(const ContextWindow& window, const Vocabulary& vocab, int limit);

/// With probability p the whole window is replaced by an empty one;
/// otherwise the input is returned unchanged. One rng draw either way.
ContextWindow apply_context_dropout(const ContextWindow& window, double p, Rng& rng);

}  // namespace ctxst
