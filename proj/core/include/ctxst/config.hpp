#pragma once

#include <string>
#include <vector>

#include "ctxst/context.hpp"
#include "ctxst/corpus.hpp"
#include "ctxst/decode.hpp"
#include "ctxst/model.hpp"

namespace ctxst {

struct SplitFractions {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};

struct PathsConfig {
  std::string corpus_dir = "data/corpus";
  std::string checkpoint_dir = "runs/checkpoint";
  std::string output_dir = "runs/out";
};

struct ExperimentConfig {
  GeneratorConfig generator;
  ModelConfig model;
  ContextConfig context;
  DecodeConfig decode;
  SplitFractions split;
  PathsConfig paths;
  std::uint64_t seed = 11;
};

/// `key = value` lines with dotted keys ("model.attention_dim = 64");
/// '#' opens a comment, blank lines are skipped. The bare key "seed"
/// reseeds every component at that point; later lines may still override
/// individual component seeds. Unknown keys and malformed values are
/// errors naming the offending line.
ExperimentConfig parse_experiment_config(const std::vector<std::string>& lines);
ExperimentConfig load_experiment_config(const std::string& path);

void validate(const ExperimentConfig& cfg);

}  // namespace ctxst
