#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ctxst {

/// One conversational turn: pseudo-acoustic frames, source-language tokens,
/// target-language tokens, and POS tags aligned 1:1 with the target tokens.
struct Utterance {
  std::string conversation_id;
  int index = 0;    // contiguous from 0 within the conversation
  char speaker = 'A';
  std::vector<std::string> source_tokens;
  std::vector<std::string> target_tokens;
  std::vector<std::string> target_pos;
  std::vector<float> features;  // frames x feature_dim, row major
  std::size_t frames = 0;
  std::size_t feature_dim = 0;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;
};

struct Corpus {
  std::vector<Conversation> conversations;
  std::map<std::string, std::string> lexicon;  // target token -> POS tag
};

struct GeneratorConfig {
  std::size_t n_conversations = 200;
  std::size_t utterances_per_conversation = 10;
  std::size_t vocab_size_source = 32;
  std::size_t vocab_size_target = 36;
  std::size_t homophone_pairs = 3;
  double pronoun_fraction = 0.6;
  std::size_t frames_per_token = 4;
  std::size_t feature_dim = 16;
  double noise_std = 0.1;
  std::uint64_t seed = 11;
};

/// Deterministic synthetic conversations with two context-dependent
/// phenomena built in:
///   - each homophone pair is a single source token (hence a single frame
///     template; the audio cannot disambiguate) whose correct translation is
///     fixed by a topic token in the immediately preceding utterance;
///   - a pronoun source token translating to "he" or "she" according to the
///     gender of the entity the other speaker introduced one turn earlier.
/// Speakers alternate strictly (A, B, A, ...) and the first utterance of a
/// conversation carries no context-dependent tokens.
Corpus generate_synthetic(const GeneratorConfig& cfg);

/// Frame templates per source token type, drawn once from the seed. Exposed
/// so tests can confirm both senses of a homophone share one template.
std::map<std::string, std::vector<float>> source_frame_templates(const GeneratorConfig& cfg);

void save_corpus(const std::string& dir, const Corpus& corpus);
Corpus load_corpus(const std::string& dir);

/// Conversation-granular split; fractions must sum to 1. Deterministic
/// shuffle by seed, then contiguous assignment train/dev/test.
struct CorpusSplit {
  std::vector<Conversation> train, dev, test;
};
CorpusSplit split_corpus(const std::vector<Conversation>& convs, double f_train, double f_dev,
                         double f_test, std::uint64_t seed);

void save_split_manifest(const std::string& path, const CorpusSplit& split);
/// conversation id -> "train" | "dev" | "test"
std::map<std::string, std::string> load_split_manifest(const std::string& path);

/// Applies a manifest to a loaded corpus (conversations absent from the
/// manifest are an error, as are manifest ids absent from the corpus).
CorpusSplit apply_split_manifest(const Corpus& corpus,
                                 const std::map<std::string, std::string>& manifest);

}  // namespace ctxst
