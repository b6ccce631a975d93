#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ctxst/error.hpp"

namespace ctxst {

using TokenSeq = std::vector<std::string>;

/// Clipped n-gram match/total counts (orders 1..4) plus lengths for one
/// hypothesis/reference pair. Summable across utterances, which is what the
/// bootstrap exploits to rescore resamples cheaply.
struct BleuStats {
  std::array<std::size_t, 4> match{};
  std::array<std::size_t, 4> total{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  void add(const BleuStats& other);
};

BleuStats bleu_stats(const TokenSeq& hyp, const TokenSeq& ref);

struct BleuReport {
  double bleu = 0.0;  // 0..100
  std::array<double, 4> precisions{};
  double brevity_penalty = 1.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

/// Geometric mean of the four clipped precisions times the brevity penalty,
/// with no smoothing: an order with zero matches zeroes the score, and an
/// order with no hypothesis n-grams at all counts as precision 1.
BleuReport bleu_from_stats(const BleuStats& acc);
BleuReport corpus_bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs);

struct BootstrapResult {
  double delta_bleu = 0.0;  // bleu(A) - bleu(B) on the full test set
  double p_value = 1.0;     // add-one estimate of P(A <= B)
  std::size_t n_resamples = 0;
};

/// Paired bootstrap resampling: both systems are rescored on the same
/// resampled utterance sets, and the p-value is (#{A <= B} + 1)/(n + 1).
BootstrapResult paired_bootstrap(const std::vector<TokenSeq>& hyps_a,
                                 const std::vector<TokenSeq>& hyps_b,
                                 const std::vector<TokenSeq>& refs, std::size_t n_resamples,
                                 std::uint64_t seed);

struct TagScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // reference tokens carrying the tag
};

/// Bag-of-words per-tag scores: tokens are tagged through the lexicon
/// (unknown tokens tag as "X"), matches are per-utterance clipped counts of
/// equal tokens under the same tag. Tags that never occur in the references
/// keep support 0.
std::map<std::string, TagScore> pos_f1(const std::vector<TokenSeq>& hyps,
                                       const std::vector<TokenSeq>& refs,
                                       const std::map<std::string, std::string>& lexicon);

/// Tags ranked by (f1_with - f1_without) / max(f1_without, 1e-6), largest
/// first, ties on tag name; tags with zero reference support are excluded.
std::vector<std::pair<std::string, double>> relative_improvement(
    const std::map<std::string, TagScore>& with_ctx, const std::map<std::string, TagScore>& base,
    std::size_t top_n = 5);

// ---- report files -----------------------------------------------------------

struct EvalReport {
  BleuReport bleu;
  bool has_bootstrap = false;
  BootstrapResult bootstrap;
  std::map<std::string, TagScore> tags;
};

/// Sectioned key=value text, four decimals, fixed key order.
void save_eval_report(const std::string& path, const EvalReport& report);

struct AnalyzeReport {
  std::map<std::string, TagScore> baseline;
  std::map<std::string, TagScore> system;
  std::vector<std::pair<std::string, double>> top_gains;
};

void save_analyze_report(const std::string& path, const AnalyzeReport& report);

}  // namespace ctxst
