#include "ctxst/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ctxst/rng.hpp"

namespace ctxst {

namespace {

std::map<std::string, std::size_t> ngram_counts(const TokenSeq& tokens, std::size_t n) {
  std::map<std::string, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t j = 1; j < n; ++j) {
      key += '\x1f';  // unit separator: tokens never contain control bytes
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

void BleuStats::add(const BleuStats& other) {
  for (std::size_t n = 0; n < 4; ++n) {
    match[n] += other.match[n];
    total[n] += other.total[n];
  }
  hyp_len += other.hyp_len;
  ref_len += other.ref_len;
}

BleuStats bleu_stats(const TokenSeq& hyp, const TokenSeq& ref) {
  BleuStats s;
  s.hyp_len = hyp.size();
  s.ref_len = ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto hyp_counts = ngram_counts(hyp, n);
    const auto ref_counts = ngram_counts(ref, n);
    std::size_t matched = 0;
    for (const auto& [gram, count] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    s.match[n - 1] = matched;
    s.total[n - 1] = hyp.size() >= n ? hyp.size() - n + 1 : 0;
  }
  return s;
}

BleuReport bleu_from_stats(const BleuStats& acc) {
  BleuReport r;
  r.hyp_len = acc.hyp_len;
  r.ref_len = acc.ref_len;
  if (acc.hyp_len == 0) {
    r.brevity_penalty = 0.0;
    return r;  // nothing hypothesized: score 0
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    const double p = acc.total[n] > 0
                         ? static_cast<double>(acc.match[n]) / static_cast<double>(acc.total[n])
                         : 1.0;  // no n-grams of this order to score
    r.precisions[n] = p;
    if (p == 0.0)
      zero = true;
    else
      log_sum += std::log(p);
  }
  r.brevity_penalty =
      acc.hyp_len > acc.ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(acc.ref_len) / static_cast<double>(acc.hyp_len));
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

BleuReport corpus_bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  require(hyps.size() == refs.size(), "bleu: " + std::to_string(hyps.size()) +
                                          " hypotheses against " + std::to_string(refs.size()) +
                                          " references");
  require(!hyps.empty(), "bleu: empty corpus");
  BleuStats acc;
  for (std::size_t i = 0; i < hyps.size(); ++i) acc.add(bleu_stats(hyps[i], refs[i]));
  return bleu_from_stats(acc);
}

BootstrapResult paired_bootstrap(const std::vector<TokenSeq>& hyps_a,
                                 const std::vector<TokenSeq>& hyps_b,
                                 const std::vector<TokenSeq>& refs, std::size_t n_resamples,
                                 std::uint64_t seed) {
  require(hyps_a.size() == refs.size() && hyps_b.size() == refs.size(),
          "bootstrap: systems and references must cover the same utterances");
  require(!refs.empty(), "bootstrap: empty corpus");
  require(n_resamples > 0, "bootstrap: need at least one resample");

  const std::size_t n = refs.size();
  std::vector<BleuStats> stats_a(n), stats_b(n);
  for (std::size_t i = 0; i < n; ++i) {
    stats_a[i] = bleu_stats(hyps_a[i], refs[i]);
    stats_b[i] = bleu_stats(hyps_b[i], refs[i]);
  }

  BleuStats full_a, full_b;
  for (std::size_t i = 0; i < n; ++i) {
    full_a.add(stats_a[i]);
    full_b.add(stats_b[i]);
  }

  BootstrapResult r;
  r.n_resamples = n_resamples;
  r.delta_bleu = bleu_from_stats(full_a).bleu - bleu_from_stats(full_b).bleu;

  Rng rng(derive_seed(seed, "paired-bootstrap"));
  std::size_t a_not_better = 0;
  for (std::size_t s = 0; s < n_resamples; ++s) {
    BleuStats acc_a, acc_b;
    for (std::size_t d = 0; d < n; ++d) {
      const std::size_t pick = rng.uniform_index(n);
      acc_a.add(stats_a[pick]);
      acc_b.add(stats_b[pick]);
    }
    if (bleu_from_stats(acc_a).bleu <= bleu_from_stats(acc_b).bleu) ++a_not_better;
  }
  r.p_value = static_cast<double>(a_not_better + 1) / static_cast<double>(n_resamples + 1);
  return r;
}

std::map<std::string, TagScore> pos_f1(const std::vector<TokenSeq>& hyps,
                                       const std::vector<TokenSeq>& refs,
                                       const std::map<std::string, std::string>& lexicon) {
  require(hyps.size() == refs.size(), "pos_f1: systems and references must cover the same utterances");
  auto tag_of = [&lexicon](const std::string& token) -> std::string {
    auto it = lexicon.find(token);
    return it == lexicon.end() ? "X" : it->second;
  };

  // per tag: total hyp tokens, total ref tokens, clipped matches
  std::map<std::string, std::array<std::size_t, 3>> counts;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    std::map<std::string, std::map<std::string, std::size_t>> hyp_bags, ref_bags;
    for (const std::string& tok : hyps[i]) ++hyp_bags[tag_of(tok)][tok];
    for (const std::string& tok : refs[i]) ++ref_bags[tag_of(tok)][tok];
    for (const auto& [tag, bag] : hyp_bags)
      for (const auto& [tok, c] : bag) counts[tag][0] += c;
    for (const auto& [tag, bag] : ref_bags)
      for (const auto& [tok, c] : bag) counts[tag][1] += c;
    for (const auto& [tag, bag] : hyp_bags) {
      auto rb = ref_bags.find(tag);
      if (rb == ref_bags.end()) continue;
      for (const auto& [tok, c] : bag) {
        auto rt = rb->second.find(tok);
        if (rt != rb->second.end()) counts[tag][2] += std::min(c, rt->second);
      }
    }
  }

  std::map<std::string, TagScore> out;
  for (const auto& [tag, c] : counts) {
    TagScore s;
    s.support = c[1];
    const double hyp_total = static_cast<double>(c[0]);
    const double ref_total = static_cast<double>(c[1]);
    const double matched = static_cast<double>(c[2]);
    s.precision = c[0] > 0 ? matched / hyp_total : 0.0;
    s.recall = c[1] > 0 ? matched / ref_total : 0.0;
    s.f1 = (s.precision + s.recall) > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    out[tag] = s;
  }
  return out;
}

std::vector<std::pair<std::string, double>> relative_improvement(
    const std::map<std::string, TagScore>& with_ctx, const std::map<std::string, TagScore>& base,
    std::size_t top_n) {
  std::vector<std::pair<std::string, double>> gains;
  for (const auto& [tag, ctx_score] : with_ctx) {
    if (ctx_score.support == 0) continue;  // hypothesis-only tag
    double base_f1 = 0.0;
    auto it = base.find(tag);
    if (it != base.end()) base_f1 = it->second.f1;
    gains.emplace_back(tag, (ctx_score.f1 - base_f1) / std::max(base_f1, 1e-6));
  }
  // tags the contextual system never produced but the references hold
  for (const auto& [tag, base_score] : base) {
    if (base_score.support == 0 || with_ctx.count(tag)) continue;
    gains.emplace_back(tag, (0.0 - base_score.f1) / std::max(base_score.f1, 1e-6));
  }
  std::sort(gains.begin(), gains.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (gains.size() > top_n) gains.resize(top_n);
  return gains;
}

// ---- report files -----------------------------------------------------------

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

void write_tag_section(std::ofstream& os, const std::string& header,
                       const std::map<std::string, TagScore>& tags) {
  os << '[' << header << "]\n";
  for (const auto& [tag, s] : tags) {
    os << tag << ".precision=" << fixed4(s.precision) << '\n';
    os << tag << ".recall=" << fixed4(s.recall) << '\n';
    os << tag << ".f1=" << fixed4(s.f1) << '\n';
    os << tag << ".support=" << s.support << '\n';
  }
}

}  // namespace

void save_eval_report(const std::string& path, const EvalReport& report) {
  std::ofstream os(path);
  require(os.good(), "report: cannot open '" + path + "' for writing");
  os << "[bleu]\n";
  os << "bleu=" << fixed4(report.bleu.bleu) << '\n';
  for (std::size_t n = 0; n < 4; ++n)
    os << 'p' << (n + 1) << '=' << fixed4(report.bleu.precisions[n]) << '\n';
  os << "brevity_penalty=" << fixed4(report.bleu.brevity_penalty) << '\n';
  os << "hyp_len=" << report.bleu.hyp_len << '\n';
  os << "ref_len=" << report.bleu.ref_len << '\n';
  if (report.has_bootstrap) {
    os << "\n[bootstrap]\n";
    os << "delta_bleu=" << fixed4(report.bootstrap.delta_bleu) << '\n';
    os << "p_value=" << fixed4(report.bootstrap.p_value) << '\n';
    os << "n_resamples=" << report.bootstrap.n_resamples << '\n';
  }
  if (!report.tags.empty()) {
    os << '\n';
    write_tag_section(os, "pos_f1", report.tags);
  }
  require(os.good(), "report: write to '" + path + "' failed");
}

void save_analyze_report(const std::string& path, const AnalyzeReport& report) {
  std::ofstream os(path);
  require(os.good(), "report: cannot open '" + path + "' for writing");
  write_tag_section(os, "pos_f1.baseline", report.baseline);
  os << '\n';
  write_tag_section(os, "pos_f1.system", report.system);
  os << "\n[improvement]\n";
  for (std::size_t i = 0; i < report.top_gains.size(); ++i)
    os << "top" << (i + 1) << '=' << report.top_gains[i].first << ' '
       << fixed4(report.top_gains[i].second) << '\n';
  require(os.good(), "report: write to '" + path + "' failed");
}

}  // namespace ctxst
