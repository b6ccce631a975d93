#include "ctxst/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "ctxst/error.hpp"

namespace ctxst {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& want) {
  fail("config: value '" + value + "' for key '" + key + "' is not " + want);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  if (value.empty() || value[0] == '-') bad_value(key, value, "a non-negative integer");
  errno = 0;
  char* end = nullptr;
  unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (errno != 0 || end == value.c_str() || *end != '\0')
    bad_value(key, value, "a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

int parse_int(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  long v = std::strtol(value.c_str(), &end, 10);
  if (errno != 0 || end == value.c_str() || *end != '\0') bad_value(key, value, "an integer");
  return static_cast<int>(v);
}

double parse_double(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(value.c_str(), &end);
  if (errno != 0 || end == value.c_str() || *end != '\0') bad_value(key, value, "a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "a boolean (true/false)");
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::vector<std::string>& lines) {
  ExperimentConfig e;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string line = lines[ln];
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail("config: line " + std::to_string(ln + 1) + " has no '=': '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail("config: line " + std::to_string(ln + 1) + " has an empty key");

    if (key == "seed") {
      // Global reseed: one knob for reproducing a whole experiment.
      std::uint64_t s = parse_u64(key, value);
      e.seed = s;
      e.generator.seed = s;
      e.model.seed = s;
      e.decode.seed = s;
    } else if (key == "generator.n_conversations") {
      e.generator.n_conversations = parse_size(key, value);
    } else if (key == "generator.utterances_per_conversation") {
      e.generator.utterances_per_conversation = parse_size(key, value);
    } else if (key == "generator.vocab_size_source") {
      e.generator.vocab_size_source = parse_size(key, value);
    } else if (key == "generator.vocab_size_target") {
      e.generator.vocab_size_target = parse_size(key, value);
    } else if (key == "generator.homophone_pairs") {
      e.generator.homophone_pairs = parse_size(key, value);
    } else if (key == "generator.pronoun_fraction") {
      e.generator.pronoun_fraction = parse_double(key, value);
    } else if (key == "generator.frames_per_token") {
      e.generator.frames_per_token = parse_size(key, value);
    } else if (key == "generator.feature_dim") {
      e.generator.feature_dim = parse_size(key, value);
    } else if (key == "generator.noise_std") {
      e.generator.noise_std = parse_double(key, value);
    } else if (key == "generator.seed") {
      e.generator.seed = parse_u64(key, value);
    } else if (key == "model.asr_encoder_blocks") {
      e.model.asr_encoder_blocks = parse_size(key, value);
    } else if (key == "model.st_encoder_blocks") {
      e.model.st_encoder_blocks = parse_size(key, value);
    } else if (key == "model.decoder_blocks") {
      e.model.decoder_blocks = parse_size(key, value);
    } else if (key == "model.attention_dim") {
      e.model.attention_dim = parse_size(key, value);
    } else if (key == "model.ff_dim") {
      e.model.ff_dim = parse_size(key, value);
    } else if (key == "model.heads") {
      e.model.heads = parse_size(key, value);
    } else if (key == "model.alpha1") {
      e.model.alpha1 = parse_double(key, value);
    } else if (key == "model.alpha2") {
      e.model.alpha2 = parse_double(key, value);
    } else if (key == "model.alpha3") {
      e.model.alpha3 = parse_double(key, value);
    } else if (key == "model.dropout_rate") {
      e.model.dropout_rate = parse_double(key, value);
    } else if (key == "model.learning_rate") {
      e.model.learning_rate = parse_double(key, value);
    } else if (key == "model.warmup_steps") {
      e.model.warmup_steps = parse_size(key, value);
    } else if (key == "model.epochs") {
      e.model.epochs = parse_size(key, value);
    } else if (key == "model.pretrain_epochs") {
      e.model.pretrain_epochs = parse_size(key, value);
    } else if (key == "model.batch_size") {
      e.model.batch_size = parse_size(key, value);
    } else if (key == "model.pe_restart_at_sos") {
      e.model.pe_restart_at_sos = parse_bool(key, value);
    } else if (key == "model.sos_before_context") {
      e.model.sos_before_context = parse_bool(key, value);
    } else if (key == "model.seed") {
      e.model.seed = parse_u64(key, value);
    } else if (key == "context.k") {
      e.context.k = parse_int(key, value);
    } else if (key == "context.speaker_mode") {
      if (value == "cross")
        e.context.speaker_mode = SpeakerMode::cross;
      else if (value == "same")
        e.context.speaker_mode = SpeakerMode::same;
      else
        bad_value(key, value, "one of cross|same");
    } else if (key == "context.truncation_limit") {
      e.context.truncation_limit = parse_int(key, value);
    } else if (key == "context.dropout_p") {
      e.context.dropout_p = parse_double(key, value);
    } else if (key == "context.source_mode") {
      if (value == "gold")
        e.context.source_mode = ContextSource::gold;
      else if (value == "hyp")
        e.context.source_mode = ContextSource::hyp;
      else
        bad_value(key, value, "one of gold|hyp");
    } else if (key == "decode.beam_size") {
      e.decode.beam_size = parse_size(key, value);
    } else if (key == "decode.length_penalty") {
      e.decode.length_penalty = parse_double(key, value);
    } else if (key == "decode.max_len") {
      e.decode.max_len = parse_size(key, value);
    } else if (key == "decode.stages") {
      e.decode.stages = parse_size(key, value);
    } else if (key == "decode.jobs") {
      e.decode.jobs = parse_size(key, value);
    } else if (key == "decode.seed") {
      e.decode.seed = parse_u64(key, value);
    } else if (key == "split.train") {
      e.split.train = parse_double(key, value);
    } else if (key == "split.dev") {
      e.split.dev = parse_double(key, value);
    } else if (key == "split.test") {
      e.split.test = parse_double(key, value);
    } else if (key == "paths.corpus_dir") {
      e.paths.corpus_dir = value;
    } else if (key == "paths.checkpoint_dir") {
      e.paths.checkpoint_dir = value;
    } else if (key == "paths.output_dir") {
      e.paths.output_dir = value;
    } else {
      fail("config: unknown key '" + key + "' on line " + std::to_string(ln + 1));
    }
  }
  return e;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  try {
    ExperimentConfig e = parse_experiment_config(lines);
    validate(e);
    return e;
  } catch (const Error& err) {
    fail(std::string(err.what()) + " (in '" + path + "')");
  }
}

void validate(const ExperimentConfig& cfg) {
  validate(cfg.model);
  validate(cfg.context);
  validate(cfg.decode);
  const SplitFractions& s = cfg.split;
  if (s.train < 0 || s.dev < 0 || s.test < 0)
    fail("config: split fractions must be non-negative");
  if (std::abs(s.train + s.dev + s.test - 1.0) > 1e-9)
    fail("config: split fractions must sum to 1");
  if (cfg.generator.n_conversations == 0) fail("config: generator.n_conversations must be > 0");
  if (cfg.generator.utterances_per_conversation == 0)
    fail("config: generator.utterances_per_conversation must be > 0");
  if (cfg.generator.feature_dim == 0) fail("config: generator.feature_dim must be > 0");
}

}  // namespace ctxst
