#include "ctxst/corpus.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ctxst/error.hpp"
#include "ctxst/io.hpp"
#include "ctxst/rng.hpp"
#include "ctxst/vocab.hpp"

namespace fs = std::filesystem;

namespace ctxst {

namespace {

constexpr std::size_t kEntityCount = 8;
constexpr std::size_t kInterjCount = 4;

const std::array<const char*, kEntityCount> kEntityNames = {"Ana", "Ben",  "Cleo", "Dan",
                                                            "Eva", "Finn", "Gia",  "Hugo"};
const std::array<char, kEntityCount> kEntityGenders = {'F', 'M', 'F', 'M', 'F', 'M', 'F', 'M'};
const std::array<const char*, kInterjCount> kInterjTargets = {"oh", "ok", "uh", "hm"};

std::string num_name(const char* prefix, std::size_t i) {
  return std::string(prefix) + std::to_string(i);
}

/// The full source-type layout derived from the config. Construction order
/// here is the canonical order in which frame templates are drawn, so it
/// must stay stable.
struct SourceLayout {
  std::vector<std::string> homophone;                    // one token per pair
  std::vector<std::array<std::string, 2>> sense_tgt;     // two translations per pair
  std::vector<std::array<std::string, 2>> topic;         // source topic tokens per pair
  std::vector<std::array<std::string, 2>> topic_tgt;
  std::string pronoun;
  std::vector<std::string> entity;
  std::vector<std::string> interj;
  std::string punct;
  std::vector<std::string> noun, noun_tgt;
  std::vector<std::string> verb, verb_tgt;

  std::vector<std::string> all_source;  // canonical template order
};

SourceLayout make_layout(const GeneratorConfig& cfg) {
  const std::size_t h = cfg.homophone_pairs;
  const std::size_t fixed = 3 * h + 2 + kEntityCount + kInterjCount + 1;
  // At least one noun and one verb filler keep sentences non-degenerate.
  require(cfg.vocab_size_source >= fixed + 2,
          "generator: source vocabulary of " + std::to_string(cfg.vocab_size_source) +
              " too small to host " + std::to_string(h) + " homophone pairs (needs at least " +
              std::to_string(fixed + 2) + ")");
  require(cfg.vocab_size_target >= cfg.vocab_size_source + h + 1,
          "generator: target vocabulary of " + std::to_string(cfg.vocab_size_target) +
              " too small (needs at least " +
              std::to_string(cfg.vocab_size_source + h + 1) + ")");

  SourceLayout lay;
  for (std::size_t p = 0; p < h; ++p) {
    lay.homophone.push_back(num_name("sh", p));
    lay.sense_tgt.push_back({num_name("th", p) + "a", num_name("th", p) + "b"});
    lay.topic.push_back({num_name("st", p) + "a", num_name("st", p) + "b"});
    lay.topic_tgt.push_back({num_name("tt", p) + "a", num_name("tt", p) + "b"});
  }
  lay.pronoun = "sp0";
  for (std::size_t e = 0; e < kEntityCount; ++e) lay.entity.push_back(num_name("se", e));
  for (std::size_t j = 0; j < kInterjCount; ++j) lay.interj.push_back(num_name("si", j));
  lay.punct = "sx0";

  const std::size_t fillers = cfg.vocab_size_source - fixed;
  const std::size_t nouns = (fillers + 1) / 2;
  for (std::size_t i = 0; i < fillers; ++i) {
    if (i < nouns) {
      lay.noun.push_back(num_name("sn", i));
      lay.noun_tgt.push_back(num_name("tn", i));
    } else {
      lay.verb.push_back(num_name("sv", i - nouns));
      lay.verb_tgt.push_back(num_name("tv", i - nouns));
    }
  }

  for (std::size_t p = 0; p < h; ++p) lay.all_source.push_back(lay.homophone[p]);
  for (std::size_t p = 0; p < h; ++p) {
    lay.all_source.push_back(lay.topic[p][0]);
    lay.all_source.push_back(lay.topic[p][1]);
  }
  lay.all_source.push_back(lay.pronoun);
  for (const auto& s : lay.entity) lay.all_source.push_back(s);
  for (const auto& s : lay.interj) lay.all_source.push_back(s);
  lay.all_source.push_back(lay.punct);
  for (const auto& s : lay.noun) lay.all_source.push_back(s);
  for (const auto& s : lay.verb) lay.all_source.push_back(s);
  return lay;
}

std::map<std::string, std::vector<double>> draw_templates(const GeneratorConfig& cfg,
                                                          const SourceLayout& lay) {
  Rng rng(derive_seed(cfg.seed, "templates"));
  std::map<std::string, std::vector<double>> tpl;
  const std::size_t n = cfg.frames_per_token * cfg.feature_dim;
  for (const std::string& tok : lay.all_source) {
    std::vector<double>& t = tpl[tok];
    t.resize(n);
    for (double& x : t) x = rng.normal();
  }
  return tpl;
}

std::map<std::string, std::string> make_lexicon(const SourceLayout& lay) {
  std::map<std::string, std::string> lex;
  for (const auto& pair : lay.sense_tgt) {
    lex[pair[0]] = "NOUN";
    lex[pair[1]] = "NOUN";
  }
  for (const auto& pair : lay.topic_tgt) {
    lex[pair[0]] = "NOUN";
    lex[pair[1]] = "NOUN";
  }
  lex["he"] = "PRON";
  lex["she"] = "PRON";
  for (const char* name : kEntityNames) lex[name] = "PROPN";
  for (const char* t : kInterjTargets) lex[t] = "INTJ";
  lex["."] = "PUNCT";
  for (const auto& t : lay.noun_tgt) lex[t] = "NOUN";
  for (const auto& t : lay.verb_tgt) lex[t] = "VERB";
  return lex;
}

std::string conversation_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "conv%04zu", index);
  return buf;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(in.good(), "corpus: cannot open " + p.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

std::map<std::string, std::vector<float>> source_frame_templates(const GeneratorConfig& cfg) {
  const SourceLayout lay = make_layout(cfg);
  std::map<std::string, std::vector<float>> out;
  for (const auto& [tok, tpl] : draw_templates(cfg, lay)) {
    std::vector<float>& f = out[tok];
    f.reserve(tpl.size());
    for (double v : tpl) f.push_back(static_cast<float>(v));
  }
  return out;
}

Corpus generate_synthetic(const GeneratorConfig& cfg) {
  require(cfg.n_conversations > 0 && cfg.utterances_per_conversation > 0,
          "generator: counts must be positive");
  require(cfg.frames_per_token > 0 && cfg.feature_dim > 0,
          "generator: frame geometry must be positive");
  require(cfg.noise_std >= 0.0, "generator: noise_std must be non-negative");
  require(cfg.pronoun_fraction >= 0.0 && cfg.pronoun_fraction <= 1.0,
          "generator: pronoun_fraction must be a probability");

  const SourceLayout lay = make_layout(cfg);
  const auto templates = draw_templates(cfg, lay);
  const std::size_t h = cfg.homophone_pairs;

  Corpus corpus;
  corpus.lexicon = make_lexicon(lay);
  corpus.conversations.resize(cfg.n_conversations);

  for (std::size_t c = 0; c < cfg.n_conversations; ++c) {
    Conversation& conv = corpus.conversations[c];
    conv.id = conversation_name(c);
    Rng rng(splitmix64(cfg.seed ^ static_cast<std::uint64_t>(c)));

    // (pair, sense) planted one utterance ago, consumable exactly once
    bool topic_pending = false;
    std::size_t topic_pair = 0, topic_sense = 0;
    // entity introduced in the previous utterance (by the other speaker,
    // since speakers alternate strictly)
    bool intro_pending = false;
    char intro_gender = 'F';

    for (std::size_t i = 0; i < cfg.utterances_per_conversation; ++i) {
      Utterance u;
      u.conversation_id = conv.id;
      u.index = static_cast<int>(i);
      u.speaker = (i % 2 == 0) ? 'A' : 'B';

      auto emit = [&](const std::string& src, const std::string& tgt) {
        u.source_tokens.push_back(src);
        u.target_tokens.push_back(tgt);
        auto it = corpus.lexicon.find(tgt);
        u.target_pos.push_back(it == corpus.lexicon.end() ? "X" : it->second);
      };

      if (rng.bernoulli(0.4)) {
        const std::size_t j = rng.uniform_index(kInterjCount);
        emit(lay.interj[j], kInterjTargets[j]);
      }
      const std::size_t n_fill = 1 + rng.uniform_index(3);
      for (std::size_t f = 0; f < n_fill; ++f) {
        if (rng.bernoulli(0.5)) {
          const std::size_t j = rng.uniform_index(lay.noun.size());
          emit(lay.noun[j], lay.noun_tgt[j]);
        } else {
          const std::size_t j = rng.uniform_index(lay.verb.size());
          emit(lay.verb[j], lay.verb_tgt[j]);
        }
      }
      // Context-dependent slots: never in the first utterance, and only
      // when last turn planted the evidence.
      if (i > 0 && topic_pending && rng.bernoulli(0.75))
        emit(lay.homophone[topic_pair], lay.sense_tgt[topic_pair][topic_sense]);
      if (i > 0 && intro_pending && rng.bernoulli(cfg.pronoun_fraction))
        emit(lay.pronoun, intro_gender == 'M' ? "he" : "she");

      topic_pending = false;
      intro_pending = false;
      if (rng.bernoulli(0.45)) {
        const std::size_t e = rng.uniform_index(kEntityCount);
        emit(lay.entity[e], kEntityNames[e]);
        intro_pending = true;
        intro_gender = kEntityGenders[e];
      }
      if (i + 1 < cfg.utterances_per_conversation && rng.bernoulli(0.65)) {
        topic_pair = rng.uniform_index(h);
        topic_sense = rng.uniform_index(2);
        emit(lay.topic[topic_pair][topic_sense], lay.topic_tgt[topic_pair][topic_sense]);
        topic_pending = true;
      }
      emit(lay.punct, ".");

      u.feature_dim = cfg.feature_dim;
      u.frames = cfg.frames_per_token * u.source_tokens.size();
      u.features.reserve(u.frames * cfg.feature_dim);
      for (const std::string& tok : u.source_tokens) {
        const std::vector<double>& tpl = templates.at(tok);
        for (double base : tpl)
          u.features.push_back(static_cast<float>(base + cfg.noise_std * rng.normal()));
      }
      conv.utterances.push_back(std::move(u));
    }
  }
  return corpus;
}

void save_corpus(const std::string& dir, const Corpus& corpus) {
  fs::create_directories(dir);
  for (const Conversation& conv : corpus.conversations) {
    const fs::path base = fs::path(dir) / conv.id;
    std::ofstream src(base.string() + ".src", std::ios::binary);
    std::ofstream tgt(base.string() + ".tgt", std::ios::binary);
    std::ofstream pos(base.string() + ".pos", std::ios::binary);
    std::ofstream spk(base.string() + ".spk", std::ios::binary);
    std::ofstream feat(base.string() + ".feat", std::ios::binary);
    require(src.good() && tgt.good() && pos.good() && spk.good() && feat.good(),
            "corpus: cannot write conversation files under " + dir);

    io::write_u32(feat, static_cast<std::uint32_t>(conv.utterances.size()));
    for (const Utterance& u : conv.utterances) {
      for (std::size_t i = 0; i < u.source_tokens.size(); ++i)
        src << (i ? " " : "") << u.source_tokens[i];
      src << '\n';
      for (std::size_t i = 0; i < u.target_tokens.size(); ++i)
        tgt << (i ? " " : "") << u.target_tokens[i];
      tgt << '\n';
      for (std::size_t i = 0; i < u.target_pos.size(); ++i)
        pos << (i ? " " : "") << u.target_pos[i];
      pos << '\n';
      spk << u.speaker << '\n';
      io::write_u32(feat, static_cast<std::uint32_t>(u.frames));
      io::write_u32(feat, static_cast<std::uint32_t>(u.feature_dim));
      for (float v : u.features) io::write_f32(feat, v);
    }
    require(src.good() && tgt.good() && pos.good() && spk.good() && feat.good(),
            "corpus: write failed under " + dir);
  }
  std::ofstream lex(fs::path(dir) / "lexicon.pos", std::ios::binary);
  require(lex.good(), "corpus: cannot write lexicon.pos under " + dir);
  for (const auto& [tok, tag] : corpus.lexicon) lex << tok << ' ' << tag << '\n';
}

Corpus load_corpus(const std::string& dir) {
  require(fs::is_directory(dir), "corpus: " + dir + " is not a directory");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".src") ids.push_back(entry.path().stem().string());
  require(!ids.empty(), "corpus: no conversations found in " + dir);
  std::sort(ids.begin(), ids.end());

  Corpus corpus;
  for (const std::string& id : ids) {
    const fs::path base = fs::path(dir) / id;
    const auto src = read_lines(base.string() + ".src");
    const auto tgt = read_lines(base.string() + ".tgt");
    const auto pos = read_lines(base.string() + ".pos");
    const auto spk = read_lines(base.string() + ".spk");
    auto check_count = [&](const std::vector<std::string>& lines, const char* ext) {
      if (lines.size() != src.size())
        fail("corpus: " + id + ext + ": line " + std::to_string(std::min(lines.size(), src.size()) + 1) +
             ": utterance count mismatch (" + id + ".src has " + std::to_string(src.size()) +
             " lines, " + id + ext + " has " + std::to_string(lines.size()) + ")");
    };
    check_count(tgt, ".tgt");
    check_count(pos, ".pos");
    check_count(spk, ".spk");

    std::ifstream feat(base.string() + ".feat", std::ios::binary);
    require(feat.good(), "corpus: cannot open " + id + ".feat");
    const std::uint32_t n_utt = io::read_u32(feat, id + ".feat utterance count");
    require(n_utt == src.size(), "corpus: " + id + ".feat declares " + std::to_string(n_utt) +
                                     " utterances but " + id + ".src has " +
                                     std::to_string(src.size()) + " lines");

    Conversation conv;
    conv.id = id;
    for (std::size_t i = 0; i < src.size(); ++i) {
      Utterance u;
      u.conversation_id = id;
      u.index = static_cast<int>(i);
      require(spk[i] == "A" || spk[i] == "B",
              "corpus: " + id + ".spk: line " + std::to_string(i + 1) + ": speaker must be A or B");
      u.speaker = spk[i][0];
      u.source_tokens = Vocabulary::split_tokens(src[i]);
      u.target_tokens = Vocabulary::split_tokens(tgt[i]);
      u.target_pos = Vocabulary::split_tokens(pos[i]);
      if (u.target_pos.size() != u.target_tokens.size())
        fail("corpus: " + id + ".pos: line " + std::to_string(i + 1) + ": " +
             std::to_string(u.target_pos.size()) + " tags for " +
             std::to_string(u.target_tokens.size()) + " target tokens");
      const std::uint32_t t = io::read_u32(feat, id + ".feat frame count");
      const std::uint32_t d = io::read_u32(feat, id + ".feat feature dim");
      require(t > 0 && d > 0 && t < (1u << 24) && d < (1u << 16),
              "corpus: " + id + ".feat: implausible record header at utterance " +
                  std::to_string(i));
      u.frames = t;
      u.feature_dim = d;
      u.features.resize(static_cast<std::size_t>(t) * d);
      for (float& v : u.features)
        v = io::read_f32(feat, id + ".feat payload at utterance " + std::to_string(i));
      conv.utterances.push_back(std::move(u));
    }
    corpus.conversations.push_back(std::move(conv));
  }

  const fs::path lex_path = fs::path(dir) / "lexicon.pos";
  require(fs::exists(lex_path), "corpus: missing lexicon.pos in " + dir);
  for (const std::string& line : read_lines(lex_path)) {
    if (line.empty()) continue;
    const auto fields = Vocabulary::split_tokens(line);
    require(fields.size() == 2, "corpus: lexicon.pos: malformed line '" + line + "'");
    corpus.lexicon[fields[0]] = fields[1];
  }
  return corpus;
}

CorpusSplit split_corpus(const std::vector<Conversation>& convs, double f_train, double f_dev,
                         double f_test, std::uint64_t seed) {
  const double sum = f_train + f_dev + f_test;
  require(std::abs(sum - 1.0) < 1e-9,
          "split fractions must sum to 1 (got " + std::to_string(sum) + ")");
  require(f_train >= 0 && f_dev >= 0 && f_test >= 0, "split fractions must be non-negative");

  const std::size_t n = convs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "corpus-split"));
  rng.shuffle(order);

  const auto n_train = static_cast<std::size_t>(f_train * static_cast<double>(n) + 1e-9);
  const auto n_dev = static_cast<std::size_t>(f_dev * static_cast<double>(n) + 1e-9);
  const std::size_t n_test = n - n_train - n_dev;
  auto check = [&](double f, std::size_t got, const char* which) {
    if (f > 0 && got == 0)
      fail(std::string("split: fewer conversations than non-zero splits (") + which +
           " received none of " + std::to_string(n) + ")");
  };
  check(f_train, n_train, "train");
  check(f_dev, n_dev, "dev");
  check(f_test, n_test, "test");

  CorpusSplit split;
  for (std::size_t i = 0; i < n; ++i) {
    const Conversation& c = convs[order[i]];
    if (i < n_train)
      split.train.push_back(c);
    else if (i < n_train + n_dev)
      split.dev.push_back(c);
    else
      split.test.push_back(c);
  }
  return split;
}

void save_split_manifest(const std::string& path, const CorpusSplit& split) {
  std::map<std::string, std::string> manifest;
  for (const auto& c : split.train) manifest[c.id] = "train";
  for (const auto& c : split.dev) manifest[c.id] = "dev";
  for (const auto& c : split.test) manifest[c.id] = "test";
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "split: cannot write manifest " + path);
  for (const auto& [id, which] : manifest) out << id << '\t' << which << '\n';
}

std::map<std::string, std::string> load_split_manifest(const std::string& path) {
  std::map<std::string, std::string> manifest;
  for (const std::string& line : read_lines(path)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos, "split: malformed manifest line '" + line + "'");
    const std::string id = line.substr(0, tab), which = line.substr(tab + 1);
    require(which == "train" || which == "dev" || which == "test",
            "split: unknown split name '" + which + "' in manifest");
    manifest[id] = which;
  }
  return manifest;
}

CorpusSplit apply_split_manifest(const Corpus& corpus,
                                 const std::map<std::string, std::string>& manifest) {
  CorpusSplit split;
  for (const Conversation& c : corpus.conversations) {
    auto it = manifest.find(c.id);
    require(it != manifest.end(), "split: conversation " + c.id + " missing from manifest");
    if (it->second == "train")
      split.train.push_back(c);
    else if (it->second == "dev")
      split.dev.push_back(c);
    else
      split.test.push_back(c);
  }
  require(manifest.size() == corpus.conversations.size(),
          "split: manifest lists conversations absent from the corpus");
  return split;
}

}  // namespace ctxst
