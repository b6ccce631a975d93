#include "ctxst/decode.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace ctxst {

void validate(const DecodeConfig& cfg) {
  require(cfg.beam_size > 0, "decode: beam_size must be positive");
  require(std::isfinite(cfg.length_penalty), "decode: length_penalty must be finite");
  require(cfg.stages > 0, "decode: stages must be positive");
  require(cfg.jobs > 0, "decode: jobs must be positive");
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w)
    workers.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  for (std::thread& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

namespace {

struct BeamItem {
  DecoderCache cache;
  std::vector<double> next_lp;  // distribution after the last fed token
  std::vector<int> ids;
  double log_prob = 0.0;
};

}  // namespace

std::vector<Hypothesis> beam_search(const ModelParams& params, const ModelConfig& cfg,
                                    const EncodedFeatures& enc, const std::vector<int>& context_ids,
                                    std::size_t tgt_vocab_size, std::size_t source_token_count,
                                    const DecodeConfig& dc) {
  validate(dc);
  const std::size_t max_len = dc.max_len > 0 ? dc.max_len : 2 * source_token_count + 8;
  require(max_len > 0, "decode: nothing to decode (max_len is zero)");

  // the same prefix the teacher-forced decoder sees, minus the target
  std::vector<int> prefix;
  if (cfg.sos_before_context) {
    prefix.push_back(Vocabulary::sos_id);
    prefix.insert(prefix.end(), context_ids.begin(), context_ids.end());
  } else {
    prefix.insert(prefix.end(), context_ids.begin(), context_ids.end());
    prefix.push_back(Vocabulary::sos_id);
  }
  std::size_t restart = 0;
  if (cfg.pe_restart_at_sos)
    for (std::size_t i = 0; i < prefix.size(); ++i)
      if (prefix[i] == Vocabulary::sos_id) {
        restart = i;
        break;
      }

  BeamItem root;
  root.cache = make_decoder_cache(cfg);
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    const std::size_t pos = i < restart ? i : i - restart;
    root.next_lp = decoder_step(params, cfg, enc, root.cache, prefix[i], pos);
  }

  std::vector<int> allowed;
  allowed.push_back(Vocabulary::eos_id);
  for (std::size_t k = Vocabulary::n_special; k < tgt_vocab_size; ++k)
    allowed.push_back(static_cast<int>(k));

  struct Candidate {
    double log_prob;
    int token;
    std::size_t parent;
  };

  std::vector<BeamItem> live;
  live.push_back(std::move(root));
  std::vector<Hypothesis> finished;

  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    cands.reserve(live.size() * allowed.size());
    for (std::size_t b = 0; b < live.size(); ++b)
      for (int tok : allowed)
        cands.push_back({live[b].log_prob + live[b].next_lp[static_cast<std::size_t>(tok)], tok, b});
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });
    if (cands.size() > dc.beam_size) cands.resize(dc.beam_size);

    std::vector<BeamItem> next_live;
    next_live.reserve(cands.size());
    for (const Candidate& c : cands) {
      if (c.token == Vocabulary::eos_id) {
        Hypothesis h;
        h.ids = live[c.parent].ids;
        h.log_prob = c.log_prob;
        h.normalized_score = c.log_prob + dc.length_penalty * static_cast<double>(h.ids.size());
        finished.push_back(std::move(h));
      } else {
        BeamItem item;
        item.cache = live[c.parent].cache;  // fork
        item.ids = live[c.parent].ids;
        item.ids.push_back(c.token);
        item.log_prob = c.log_prob;
        const std::size_t pos = prefix.size() + step - restart;
        item.next_lp = decoder_step(params, cfg, enc, item.cache, c.token, pos);
        next_live.push_back(std::move(item));
      }
    }
    live = std::move(next_live);
  }

  // anything still open at the length limit is closed as-is, without an
  // eos term in its probability
  for (BeamItem& item : live) {
    Hypothesis h;
    h.ids = std::move(item.ids);
    h.log_prob = item.log_prob;
    h.normalized_score = item.log_prob + dc.length_penalty * static_cast<double>(h.ids.size());
    finished.push_back(std::move(h));
  }

  std::sort(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
    return a.ids < b.ids;
  });
  if (finished.size() > dc.beam_size) finished.resize(dc.beam_size);
  require(!finished.empty(), "decode: beam search produced no hypotheses");
  return finished;
}

namespace {

struct Slot {
  const Conversation* conv;
  std::size_t index;
};

std::vector<Slot> flatten(const std::vector<Conversation>& convs) {
  std::vector<Slot> slots;
  for (const Conversation& c : convs)
    for (std::size_t i = 0; i < c.utterances.size(); ++i) slots.push_back({&c, i});
  return slots;
}

std::vector<std::string> ids_to_tokens(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.token(id));
  return out;
}

DecodedUtterance decode_one(const ModelParams& params, const ModelConfig& cfg, const Utterance& u,
                            const std::vector<int>& context_ids, const Vocabulary& tgt_vocab,
                            const DecodeConfig& dc) {
  EncodedFeatures enc = encode_for_decoding(params, cfg, u);
  auto hyps = beam_search(params, cfg, enc, context_ids, tgt_vocab.size(), u.source_tokens.size(), dc);
  DecodedUtterance out;
  out.conversation_id = u.conversation_id;
  out.index = static_cast<int>(u.index);
  out.normalized_score = hyps.front().normalized_score;
  out.tokens = ids_to_tokens(hyps.front().ids, tgt_vocab);
  return out;
}

std::vector<int> random_context_ids(const std::vector<Conversation>& convs, std::size_t self,
                                    const Vocabulary& tgt_vocab, const ContextConfig& ctx_cfg,
                                    std::uint64_t seed, const std::string& conv_id, int index) {
  if (convs.size() < 2) return {};
  Rng rng(derive_seed(seed, conv_id + "#" + std::to_string(index)));
  std::size_t other = rng.uniform_index(convs.size() - 1);
  if (other >= self) ++other;  // uniform over the other conversations
  const Conversation& donor = convs[other];
  const int at = static_cast<int>(rng.uniform_index(donor.utterances.size()));
  ContextConfig gold_cfg = ctx_cfg;
  gold_cfg.source_mode = ContextSource::gold;
  ContextWindow w = assemble_context(donor, at, gold_cfg);
  return render(w, tgt_vocab, gold_cfg.truncation_limit);
}

}  // namespace

DecodeOutput decode_isolated(const ModelParams& params, const ModelConfig& cfg,
                             const std::vector<Conversation>& convs, const Vocabulary& tgt_vocab,
                             const ContextConfig& ctx_cfg, DecodeContextMode mode,
                             const DecodeConfig& dc) {
  validate(dc);
  const auto slots = flatten(convs);
  DecodeOutput out(slots.size());
  parallel_for(slots.size(), dc.jobs, [&](std::size_t i) {
    const Slot& s = slots[i];
    const Utterance& u = s.conv->utterances[s.index];
    std::vector<int> ctx_ids;
    if (mode == DecodeContextMode::gold && ctx_cfg.k > 0) {
      ContextConfig gold_cfg = ctx_cfg;
      gold_cfg.source_mode = ContextSource::gold;
      ContextWindow w = assemble_context(*s.conv, static_cast<int>(s.index), gold_cfg);
      ctx_ids = render(w, tgt_vocab, gold_cfg.truncation_limit);
    } else if (mode == DecodeContextMode::random && ctx_cfg.k > 0) {
      std::size_t self = 0;
      for (std::size_t c = 0; c < convs.size(); ++c)
        if (&convs[c] == s.conv) self = c;
      ctx_ids = random_context_ids(convs, self, tgt_vocab, ctx_cfg, dc.seed, s.conv->id,
                                   static_cast<int>(s.index));
    }
    out[i] = decode_one(params, cfg, u, ctx_ids, tgt_vocab, dc);
  });
  return out;
}

DecodeOutput decode_exact(const ModelParams& params, const ModelConfig& cfg,
                          const std::vector<Conversation>& convs, const Vocabulary& tgt_vocab,
                          const ContextConfig& ctx_cfg, const DecodeConfig& dc) {
  validate(dc);
  // per-conversation output ranges, so conversations can run in parallel
  std::vector<std::size_t> first(convs.size() + 1, 0);
  for (std::size_t c = 0; c < convs.size(); ++c)
    first[c + 1] = first[c] + convs[c].utterances.size();
  DecodeOutput out(first.back());

  ContextConfig hyp_cfg = ctx_cfg;
  hyp_cfg.source_mode = ContextSource::hyp;

  parallel_for(convs.size(), dc.jobs, [&](std::size_t c) {
    const Conversation& conv = convs[c];
    HypStore store;
    for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
      std::vector<int> ctx_ids;
      if (hyp_cfg.k > 0) {
        ContextWindow w = assemble_context(conv, static_cast<int>(i), hyp_cfg, &store);
        ctx_ids = render(w, tgt_vocab, hyp_cfg.truncation_limit);
      }
      DecodedUtterance d = decode_one(params, cfg, conv.utterances[i], ctx_ids, tgt_vocab, dc);
      store.put(conv.id, static_cast<int>(i), d.tokens);
      out[first[c] + i] = std::move(d);
    }
  });
  return out;
}

std::vector<DecodeOutput> decode_multistage(const ModelParams& params, const ModelConfig& cfg,
                                            const std::vector<Conversation>& convs,
                                            const Vocabulary& tgt_vocab,
                                            const ContextConfig& ctx_cfg, const DecodeConfig& dc) {
  validate(dc);
  std::vector<DecodeOutput> stages;
  stages.push_back(decode_isolated(params, cfg, convs, tgt_vocab, ctx_cfg,
                                   DecodeContextMode::none, dc));

  ContextConfig hyp_cfg = ctx_cfg;
  hyp_cfg.source_mode = ContextSource::hyp;
  const auto slots = flatten(convs);

  for (std::size_t stage = 1; stage <= dc.stages; ++stage) {
    HypStore store;
    for (const DecodedUtterance& d : stages.back())
      store.put(d.conversation_id, d.index, d.tokens);
    DecodeOutput out(slots.size());
    parallel_for(slots.size(), dc.jobs, [&](std::size_t i) {
      const Slot& s = slots[i];
      std::vector<int> ctx_ids;
      if (hyp_cfg.k > 0) {
        ContextWindow w = assemble_context(*s.conv, static_cast<int>(s.index), hyp_cfg, &store);
        ctx_ids = render(w, tgt_vocab, hyp_cfg.truncation_limit);
      }
      out[i] = decode_one(params, cfg, s.conv->utterances[s.index], ctx_ids, tgt_vocab, dc);
    });
    stages.push_back(std::move(out));
  }
  return stages;
}

void save_decode_output(const std::string& path, const DecodeOutput& out) {
  std::ofstream os(path);
  require(os.good(), "decode output: cannot open '" + path + "' for writing");
  char score[64];
  for (const DecodedUtterance& d : out) {
    std::snprintf(score, sizeof(score), "%.4f", d.normalized_score);
    os << d.conversation_id << '\t' << d.index << '\t' << score << '\t';
    for (std::size_t i = 0; i < d.tokens.size(); ++i) {
      if (i) os << ' ';
      os << d.tokens[i];
    }
    os << '\n';
  }
  require(os.good(), "decode output: write to '" + path + "' failed");
}

DecodeOutput load_decode_output(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), "decode output: cannot open '" + path + "'");
  DecodeOutput out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == '\t') {
        cells.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    require(cells.size() == 4, "decode output: line " + std::to_string(line_no) +
                                   " has " + std::to_string(cells.size()) + " fields (want 4)");
    DecodedUtterance d;
    d.conversation_id = cells[0];
    d.index = std::atoi(cells[1].c_str());
    d.normalized_score = std::atof(cells[2].c_str());
    std::istringstream ts(cells[3]);
    std::string tok;
    while (ts >> tok) d.tokens.push_back(tok);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace ctxst
