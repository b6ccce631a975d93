#include "ctxst/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ctxst/io.hpp"
#include "kernels.hpp"

namespace ctxst {

namespace {

constexpr double kMaskValue = -1e9;
constexpr char kCheckpointMagic[8] = {'C', 'T', 'X', 'S', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  enum Kind { xavier, embed_init, ones, zeros } kind;
};

void push_linear(std::vector<ParamSpec>& out, const std::string& name, std::size_t in,
                 std::size_t n_out) {
  out.push_back({name + ".w", {in, n_out}, ParamSpec::xavier});
  out.push_back({name + ".b", {n_out}, ParamSpec::zeros});
}

void push_norm(std::vector<ParamSpec>& out, const std::string& name, std::size_t dim) {
  out.push_back({name + ".g", {dim}, ParamSpec::ones});
  out.push_back({name + ".b", {dim}, ParamSpec::zeros});
}

void push_attention(std::vector<ParamSpec>& out, const std::string& name, std::size_t dim) {
  for (const char* w : {".wq", ".wk", ".wv", ".wo"})
    out.push_back({name + w, {dim, dim}, ParamSpec::xavier});
}

void push_encoder_block(std::vector<ParamSpec>& out, const std::string& name, std::size_t dim,
                        std::size_t ff) {
  push_norm(out, name + ".ln1", dim);
  push_attention(out, name + ".self", dim);
  push_norm(out, name + ".ln2", dim);
  out.push_back({name + ".ff.w1", {dim, ff}, ParamSpec::xavier});
  out.push_back({name + ".ff.b1", {ff}, ParamSpec::zeros});
  out.push_back({name + ".ff.w2", {ff, dim}, ParamSpec::xavier});
  out.push_back({name + ".ff.b2", {dim}, ParamSpec::zeros});
}

void push_decoder_block(std::vector<ParamSpec>& out, const std::string& name, std::size_t dim,
                        std::size_t ff) {
  push_norm(out, name + ".ln1", dim);
  push_attention(out, name + ".self", dim);
  push_norm(out, name + ".ln2", dim);
  push_attention(out, name + ".cross", dim);
  push_norm(out, name + ".ln3", dim);
  out.push_back({name + ".ff.w1", {dim, ff}, ParamSpec::xavier});
  out.push_back({name + ".ff.b1", {ff}, ParamSpec::zeros});
  out.push_back({name + ".ff.w2", {ff, dim}, ParamSpec::xavier});
  out.push_back({name + ".ff.b2", {dim}, ParamSpec::zeros});
}

void push_decoder(std::vector<ParamSpec>& out, const std::string& name, std::size_t blocks,
                  std::size_t dim, std::size_t ff, std::size_t vocab) {
  out.push_back({name + ".embed", {vocab, dim}, ParamSpec::embed_init});
  for (std::size_t i = 0; i < blocks; ++i)
    push_decoder_block(out, name + "." + std::to_string(i), dim, ff);
  push_norm(out, name + ".final", dim);
  push_linear(out, name + ".out", dim, vocab);
}

/// Every learnable tensor in creation order. Shapes depend only on the
/// config and the two vocabulary sizes, which is what lets a checkpoint be
/// validated structurally before any value is trusted.
std::vector<ParamSpec> param_specs(const ModelConfig& cfg, std::size_t src_vocab_size,
                                   std::size_t tgt_vocab_size) {
  const std::size_t dim = cfg.attention_dim;
  const std::size_t ff = cfg.ff_dim;
  std::vector<ParamSpec> out;
  push_linear(out, "frontend", 2 * cfg.feature_dim, dim);
  for (std::size_t i = 0; i < cfg.asr_encoder_blocks; ++i)
    push_encoder_block(out, "asr_enc." + std::to_string(i), dim, ff);
  push_norm(out, "asr_enc.final", dim);
  for (std::size_t i = 0; i < cfg.st_encoder_blocks; ++i)
    push_encoder_block(out, "st_enc." + std::to_string(i), dim, ff);
  push_norm(out, "st_enc.final", dim);
  push_linear(out, "asr_ctc", dim, src_vocab_size + 1);  // +1 for the blank class
  push_linear(out, "st_ctc", dim, tgt_vocab_size + 1);
  push_decoder(out, "asr_dec", cfg.decoder_blocks, dim, ff, src_vocab_size);
  push_decoder(out, "st_dec", cfg.decoder_blocks, dim, ff, tgt_vocab_size);
  return out;
}

Tensor dropout(Tape& tape, const Tensor& x, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return x;
  std::vector<double> m(x.size());
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& v : m) v = rng->bernoulli(p) ? 0.0 : keep_scale;
  Tensor mask(x.shape(), std::move(m));
  return mul(tape, x, mask);
}

Tensor position_table(const std::vector<std::size_t>& positions, std::size_t dim) {
  std::vector<double> v(positions.size() * dim);
  for (std::size_t i = 0; i < positions.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j)
      v[i * dim + j] = kernels::position_value(positions[i], j, dim);
  return Tensor({positions.size(), dim}, std::move(v));
}

Tensor causal_mask(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) v[i * n + j] = kMaskValue;
  return Tensor({n, n}, std::move(v));
}

Tensor attention(Tape& tape, const ModelParams& p, const std::string& name, const Tensor& q_in,
                 const Tensor& kv_in, std::size_t heads, const Tensor* additive_mask) {
  Tensor q = matmul(tape, q_in, p.at(name + ".wq"));
  Tensor k = matmul(tape, kv_in, p.at(name + ".wk"));
  Tensor v = matmul(tape, kv_in, p.at(name + ".wv"));
  const std::size_t head_dim = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> mixed;
  mixed.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(tape, q, h * head_dim, head_dim);
    Tensor kh = slice_cols(tape, k, h * head_dim, head_dim);
    Tensor vh = slice_cols(tape, v, h * head_dim, head_dim);
    Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
    if (additive_mask != nullptr) scores = add(tape, scores, *additive_mask);
    mixed.push_back(matmul(tape, softmax_rows(tape, scores), vh));
  }
  return matmul(tape, concat_cols(tape, mixed), p.at(name + ".wo"));
}

Tensor feed_forward(Tape& tape, const ModelParams& p, const std::string& name, const Tensor& x) {
  Tensor h = relu(tape, add_row(tape, matmul(tape, x, p.at(name + ".ff.w1")), p.at(name + ".ff.b1")));
  return add_row(tape, matmul(tape, h, p.at(name + ".ff.w2")), p.at(name + ".ff.b2"));
}

// Pre-norm residual block: x += SelfAttn(LN(x)); x += FF(LN(x)).
Tensor encoder_block(Tape& tape, const ModelParams& p, const ModelConfig& cfg,
                     const std::string& name, Tensor x, Rng* rng) {
  Tensor n1 = layer_norm_rows(tape, x, p.at(name + ".ln1.g"), p.at(name + ".ln1.b"));
  Tensor a = attention(tape, p, name + ".self", n1, n1, cfg.heads, nullptr);
  x = add(tape, x, dropout(tape, a, cfg.dropout_rate, rng));
  Tensor n2 = layer_norm_rows(tape, x, p.at(name + ".ln2.g"), p.at(name + ".ln2.b"));
  Tensor f = feed_forward(tape, p, name, n2);
  return add(tape, x, dropout(tape, f, cfg.dropout_rate, rng));
}

Tensor decoder_block(Tape& tape, const ModelParams& p, const ModelConfig& cfg,
                     const std::string& name, Tensor x, const Tensor& h, const Tensor& mask,
                     Rng* rng) {
  Tensor n1 = layer_norm_rows(tape, x, p.at(name + ".ln1.g"), p.at(name + ".ln1.b"));
  Tensor a = attention(tape, p, name + ".self", n1, n1, cfg.heads, &mask);
  x = add(tape, x, dropout(tape, a, cfg.dropout_rate, rng));
  Tensor n2 = layer_norm_rows(tape, x, p.at(name + ".ln2.g"), p.at(name + ".ln2.b"));
  Tensor c = attention(tape, p, name + ".cross", n2, h, cfg.heads, nullptr);
  x = add(tape, x, dropout(tape, c, cfg.dropout_rate, rng));
  Tensor n3 = layer_norm_rows(tape, x, p.at(name + ".ln3.g"), p.at(name + ".ln3.b"));
  Tensor f = feed_forward(tape, p, name, n3);
  return add(tape, x, dropout(tape, f, cfg.dropout_rate, rng));
}

std::string decoder_name(DecoderKind which) { return which == DecoderKind::asr ? "asr_dec" : "st_dec"; }
std::string ctc_name(DecoderKind which) { return which == DecoderKind::asr ? "asr_ctc" : "st_ctc"; }

}  // namespace

void validate(const ModelConfig& cfg) {
  require(cfg.attention_dim > 0 && cfg.heads > 0, "model: attention_dim and heads must be positive");
  require(cfg.attention_dim % cfg.heads == 0, "model: attention_dim must be divisible by heads");
  require(cfg.ff_dim > 0, "model: ff_dim must be positive");
  require(cfg.asr_encoder_blocks > 0 && cfg.st_encoder_blocks > 0 && cfg.decoder_blocks > 0,
          "model: block counts must be positive");
  require(cfg.alpha1 >= 0.0 && cfg.alpha1 <= 1.0 && cfg.alpha2 >= 0.0 && cfg.alpha2 <= 1.0 &&
              cfg.alpha3 >= 0.0 && cfg.alpha3 <= 1.0,
          "model: loss weights must lie in [0, 1]");
  require(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0, "model: dropout_rate must lie in [0, 1)");
  require(cfg.learning_rate > 0.0, "model: learning_rate must be positive");
  require(cfg.warmup_steps > 0, "model: warmup_steps must be positive");
  require(cfg.batch_size > 0, "model: batch_size must be positive");
  require(cfg.feature_dim > 0, "model: feature_dim must be positive");
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail("model: unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail("model: unknown parameter '" + name + "'");
  return it->second;
}

void ModelParams::zero_grads() {
  for (auto& [name, t] : tensors) t.zero_grad();
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& [name, t] : tensors)
    out.tensors.emplace(name, Tensor(t.shape(), t.values(), true));
  return out;
}

ModelParams init_params(const ModelConfig& cfg, std::size_t src_vocab_size,
                        std::size_t tgt_vocab_size) {
  validate(cfg);
  const auto n_special = static_cast<std::size_t>(Vocabulary::n_special);
  require(src_vocab_size > n_special && tgt_vocab_size > n_special, "model: vocabulary too small");
  Rng rng(derive_seed(cfg.seed, "params"));
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(cfg.attention_dim));
  ModelParams out;
  for (const ParamSpec& spec : param_specs(cfg, src_vocab_size, tgt_vocab_size)) {
    std::size_t n = 1;
    for (std::size_t d : spec.shape) n *= d;
    std::vector<double> v(n);
    switch (spec.kind) {
      case ParamSpec::xavier: {
        const double limit =
            std::sqrt(6.0 / static_cast<double>(spec.shape[0] + spec.shape[1]));
        for (double& x : v) x = (rng.uniform() * 2.0 - 1.0) * limit;
        break;
      }
      case ParamSpec::embed_init:
        for (double& x : v) x = rng.normal(0.0, embed_std);
        break;
      case ParamSpec::ones:
        for (double& x : v) x = 1.0;
        break;
      case ParamSpec::zeros:
        break;
    }
    out.tensors.emplace(spec.name, Tensor(spec.shape, std::move(v), true));
  }
  return out;
}

Tensor encode_asr(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                  const Tensor& features, Rng* dropout_rng) {
  require(features.rank() == 2, "asr encoder: features must be a frames x dim matrix");
  const std::size_t t = features.rows();
  const std::size_t d = features.cols();
  require(d == cfg.feature_dim, "asr encoder: feature width " + std::to_string(d) +
                                    " does not match configured " + std::to_string(cfg.feature_dim));
  if (t < 4)
    fail("asr encoder: input of " + std::to_string(t) + " frames is too short (needs at least 4)");
  const std::size_t t2 = t / 2;  // an odd trailing frame is dropped

  std::vector<double> paired(t2 * 2 * d);
  const std::vector<double>& f = features.values();
  for (std::size_t i = 0; i < t2; ++i)
    for (std::size_t j = 0; j < 2 * d; ++j) paired[i * 2 * d + j] = f[2 * i * d + j];
  Tensor pairs({t2, 2 * d}, std::move(paired));

  Tensor x = add_row(tape, matmul(tape, pairs, params.at("frontend.w")), params.at("frontend.b"));
  std::vector<std::size_t> positions(t2);
  for (std::size_t i = 0; i < t2; ++i) positions[i] = i;
  x = add(tape, x, position_table(positions, cfg.attention_dim));
  x = dropout(tape, x, cfg.dropout_rate, dropout_rng);
  for (std::size_t i = 0; i < cfg.asr_encoder_blocks; ++i)
    x = encoder_block(tape, params, cfg, "asr_enc." + std::to_string(i), x, dropout_rng);
  return layer_norm_rows(tape, x, params.at("asr_enc.final.g"), params.at("asr_enc.final.b"));
}

Tensor encode_st(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                 const Tensor& h_asr, Rng* dropout_rng) {
  require(h_asr.rank() == 2 && h_asr.cols() == cfg.attention_dim,
          "st encoder: input must be frames x attention_dim");
  Tensor x = h_asr;
  for (std::size_t i = 0; i < cfg.st_encoder_blocks; ++i)
    x = encoder_block(tape, params, cfg, "st_enc." + std::to_string(i), x, dropout_rng);
  return layer_norm_rows(tape, x, params.at("st_enc.final.g"), params.at("st_enc.final.b"));
}

Tensor decoder_forward(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                       const Tensor& h, const std::vector<int>& prefix_ids, DecoderKind which,
                       Rng* dropout_rng) {
  require(!prefix_ids.empty(), "decoder: prefix must hold at least the start symbol");
  const std::string name = decoder_name(which);
  const std::size_t n = prefix_ids.size();

  Tensor x = embed(tape, params.at(name + ".embed"), prefix_ids);
  x = scale(tape, x, std::sqrt(static_cast<double>(cfg.attention_dim)));

  std::vector<std::size_t> positions(n);
  std::size_t restart = 0;
  if (cfg.pe_restart_at_sos) {
    for (std::size_t i = 0; i < n; ++i)
      if (prefix_ids[i] == Vocabulary::sos_id) {
        restart = i;
        break;
      }
  }
  for (std::size_t i = 0; i < n; ++i) positions[i] = (i < restart) ? i : i - restart;
  x = add(tape, x, position_table(positions, cfg.attention_dim));
  x = dropout(tape, x, cfg.dropout_rate, dropout_rng);

  Tensor mask = causal_mask(n);
  for (std::size_t i = 0; i < cfg.decoder_blocks; ++i)
    x = decoder_block(tape, params, cfg, name + "." + std::to_string(i), x, h, mask, dropout_rng);
  x = layer_norm_rows(tape, x, params.at(name + ".final.g"), params.at(name + ".final.b"));
  return add_row(tape, matmul(tape, x, params.at(name + ".out.w")), params.at(name + ".out.b"));
}

Tensor ctc_head(Tape& tape, const ModelParams& params, const Tensor& h, DecoderKind which) {
  const std::string name = ctc_name(which);
  return add_row(tape, matmul(tape, h, params.at(name + ".w")), params.at(name + ".b"));
}

StTeacherBatch make_st_teacher(const std::vector<int>& context_ids,
                               const std::vector<int>& target_ids, bool sos_before_context) {
  StTeacherBatch out;
  std::vector<int> full;
  full.reserve(context_ids.size() + target_ids.size() + 2);
  if (sos_before_context) {
    full.push_back(Vocabulary::sos_id);
    full.insert(full.end(), context_ids.begin(), context_ids.end());
  } else {
    full.insert(full.end(), context_ids.begin(), context_ids.end());
    full.push_back(Vocabulary::sos_id);
  }
  full.insert(full.end(), target_ids.begin(), target_ids.end());
  full.push_back(Vocabulary::eos_id);

  out.prefix.assign(full.begin(), full.end() - 1);
  out.labels.assign(full.begin() + 1, full.end());
  out.target_start = context_ids.size();  // first target label in either layout
  out.mask.assign(out.labels.size(), 0);
  for (std::size_t i = out.target_start; i < out.mask.size(); ++i) out.mask[i] = 1;
  return out;
}

Tensor features_tensor(const Utterance& u) {
  require(u.features.size() == u.frames * u.feature_dim, "features: frame buffer size mismatch");
  std::vector<double> v(u.features.begin(), u.features.end());
  return Tensor({u.frames, u.feature_dim}, std::move(v));
}

std::vector<int> source_ids(const Utterance& u, const Vocabulary& v) {
  return v.encode_tokens(u.source_tokens);
}

std::vector<int> target_ids(const Utterance& u, const Vocabulary& v) {
  return v.encode_tokens(u.target_tokens);
}

LossGraph compute_loss(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                       const std::vector<TrainExample>& batch, const Vocabulary& src_vocab,
                       const Vocabulary& tgt_vocab, bool pretrain, Rng* dropout_rng) {
  require(!batch.empty(), "compute_loss: empty batch");
  std::vector<Tensor> asr_att, asr_ctc, st_att, st_ctc;
  for (const TrainExample& ex : batch) {
    require(ex.utterance != nullptr, "compute_loss: batch entry without utterance");
    const Utterance& u = *ex.utterance;
    Tensor h_asr = encode_asr(tape, params, cfg, features_tensor(u), dropout_rng);

    std::vector<int> src = source_ids(u, src_vocab);
    std::vector<int> asr_prefix{Vocabulary::sos_id};
    asr_prefix.insert(asr_prefix.end(), src.begin(), src.end());
    std::vector<int> asr_labels = src;
    asr_labels.push_back(Vocabulary::eos_id);
    std::vector<char> asr_mask(asr_labels.size(), 1);
    Tensor asr_logits = decoder_forward(tape, params, cfg, h_asr, asr_prefix, DecoderKind::asr,
                                        dropout_rng);
    asr_att.push_back(masked_cross_entropy(tape, asr_logits, asr_labels, asr_mask));
    Tensor asr_lp = log_softmax(tape, ctc_head(tape, params, h_asr, DecoderKind::asr));
    asr_ctc.push_back(ctc_loss(tape, asr_lp, src));

    if (!pretrain) {
      Tensor h_st = encode_st(tape, params, cfg, h_asr, dropout_rng);
      std::vector<int> tgt = target_ids(u, tgt_vocab);
      StTeacherBatch teacher = make_st_teacher(ex.context_ids, tgt, cfg.sos_before_context);
      Tensor st_logits = decoder_forward(tape, params, cfg, h_st, teacher.prefix, DecoderKind::st,
                                         dropout_rng);
      st_att.push_back(masked_cross_entropy(tape, st_logits, teacher.labels, teacher.mask));
      Tensor st_lp = log_softmax(tape, ctc_head(tape, params, h_st, DecoderKind::st));
      st_ctc.push_back(ctc_loss(tape, st_lp, tgt));
    }
  }

  auto mean = [&tape](const std::vector<Tensor>& parts) {
    Tensor acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) acc = add(tape, acc, parts[i]);
    return scale(tape, acc, 1.0 / static_cast<double>(parts.size()));
  };

  Tensor m_asr_att = mean(asr_att);
  Tensor m_asr_ctc = mean(asr_ctc);
  Tensor asr_mix = add(tape, scale(tape, m_asr_att, 1.0 - cfg.alpha1),
                       scale(tape, m_asr_ctc, cfg.alpha1));

  LossGraph out;
  out.values.l_asr_att = m_asr_att.value();
  out.values.l_asr_ctc = m_asr_ctc.value();
  if (pretrain) {
    // With the ASR share at 1 the ST half of the objective vanishes exactly,
    // so the mixed ASR term IS the combined loss, bit for bit.
    out.combined = asr_mix;
  } else {
    Tensor m_st_att = mean(st_att);
    Tensor m_st_ctc = mean(st_ctc);
    Tensor st_mix = add(tape, scale(tape, m_st_att, 1.0 - cfg.alpha2),
                        scale(tape, m_st_ctc, cfg.alpha2));
    out.combined = add(tape, scale(tape, asr_mix, cfg.alpha3), scale(tape, st_mix, 1.0 - cfg.alpha3));
    out.values.l_st_att = m_st_att.value();
    out.values.l_st_ctc = m_st_ctc.value();
  }
  out.values.combined = out.combined.value();
  return out;
}

// ---- persistence ------------------------------------------------------------

namespace {

void write_config(std::ostream& os, const ModelConfig& cfg) {
  io::write_u64(os, cfg.asr_encoder_blocks);
  io::write_u64(os, cfg.st_encoder_blocks);
  io::write_u64(os, cfg.decoder_blocks);
  io::write_u64(os, cfg.attention_dim);
  io::write_u64(os, cfg.ff_dim);
  io::write_u64(os, cfg.heads);
  io::write_f64(os, cfg.alpha1);
  io::write_f64(os, cfg.alpha2);
  io::write_f64(os, cfg.alpha3);
  io::write_f64(os, cfg.dropout_rate);
  io::write_f64(os, cfg.learning_rate);
  io::write_u64(os, cfg.warmup_steps);
  io::write_u64(os, cfg.epochs);
  io::write_u64(os, cfg.pretrain_epochs);
  io::write_u64(os, cfg.batch_size);
  io::write_u64(os, cfg.feature_dim);
  os.put(cfg.pe_restart_at_sos ? 1 : 0);
  os.put(cfg.sos_before_context ? 1 : 0);
  io::write_u64(os, cfg.seed);
}

ModelConfig read_config(std::istream& is) {
  ModelConfig cfg;
  cfg.asr_encoder_blocks = io::read_u64(is, "checkpoint config");
  cfg.st_encoder_blocks = io::read_u64(is, "checkpoint config");
  cfg.decoder_blocks = io::read_u64(is, "checkpoint config");
  cfg.attention_dim = io::read_u64(is, "checkpoint config");
  cfg.ff_dim = io::read_u64(is, "checkpoint config");
  cfg.heads = io::read_u64(is, "checkpoint config");
  cfg.alpha1 = io::read_f64(is, "checkpoint config");
  cfg.alpha2 = io::read_f64(is, "checkpoint config");
  cfg.alpha3 = io::read_f64(is, "checkpoint config");
  cfg.dropout_rate = io::read_f64(is, "checkpoint config");
  cfg.learning_rate = io::read_f64(is, "checkpoint config");
  cfg.warmup_steps = io::read_u64(is, "checkpoint config");
  cfg.epochs = io::read_u64(is, "checkpoint config");
  cfg.pretrain_epochs = io::read_u64(is, "checkpoint config");
  cfg.batch_size = io::read_u64(is, "checkpoint config");
  cfg.feature_dim = io::read_u64(is, "checkpoint config");
  int pe = is.get();
  int sos = is.get();
  if (pe == EOF || sos == EOF) fail("unexpected end of file while reading checkpoint config");
  cfg.pe_restart_at_sos = pe != 0;
  cfg.sos_before_context = sos != 0;
  cfg.seed = io::read_u64(is, "checkpoint config");
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params, const ModelConfig& cfg,
                     std::size_t src_vocab_size, std::size_t tgt_vocab_size) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "checkpoint: cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  io::write_u32(os, kCheckpointVersion);
  write_config(os, cfg);
  io::write_u64(os, src_vocab_size);
  io::write_u64(os, tgt_vocab_size);
  io::write_u64(os, params.tensors.size());
  for (const auto& [name, t] : params.tensors) {
    io::write_string(os, name);
    io::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) io::write_u64(os, d);
    for (double v : t.values()) io::write_f64(os, v);
  }
  require(os.good(), "checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "checkpoint: cannot open '" + path + "'");
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    fail("checkpoint: '" + path + "' is not a checkpoint file (bad magic)");
  const std::uint32_t version = io::read_u32(is, "checkpoint version");
  if (version != kCheckpointVersion)
    fail("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint out;
  out.config = read_config(is);
  out.src_vocab_size = io::read_u64(is, "checkpoint vocab sizes");
  out.tgt_vocab_size = io::read_u64(is, "checkpoint vocab sizes");
  const std::uint64_t n_tensors = io::read_u64(is, "checkpoint tensor count");
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const std::string name = io::read_string(is, "checkpoint tensor name");
    const std::uint32_t rank = io::read_u32(is, "checkpoint tensor rank");
    require(rank >= 1 && rank <= 4, "checkpoint: tensor '" + name + "' has implausible rank");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = io::read_u64(is, "checkpoint tensor dims");
      n *= shape[d];
    }
    std::vector<double> v(n);
    for (std::size_t j = 0; j < n; ++j) v[j] = io::read_f64(is, "checkpoint tensor '" + name + "'");
    const bool inserted = out.params.tensors.emplace(name, Tensor(shape, std::move(v), true)).second;
    require(inserted, "checkpoint: duplicate tensor '" + name + "'");
  }

  // The stored structure must be exactly what the config implies.
  const auto specs = param_specs(out.config, out.src_vocab_size, out.tgt_vocab_size);
  require(specs.size() == out.params.tensors.size(),
          "checkpoint: tensor count does not match the stored config");
  for (const ParamSpec& spec : specs) {
    auto it = out.params.tensors.find(spec.name);
    if (it == out.params.tensors.end()) fail("checkpoint: missing tensor '" + spec.name + "'");
    require(it->second.shape() == spec.shape,
            "checkpoint: tensor '" + spec.name + "' has an unexpected shape");
  }
  return out;
}

void save_training_log(const std::string& path, const std::vector<TrainLogRecord>& log) {
  std::ofstream os(path);
  require(os.good(), "training log: cannot open '" + path + "' for writing");
  os << "step,l_asr_att,l_asr_ctc,l_st_att,l_st_ctc,combined,lr,ctx_dropped_flag_rate\n";
  char buf[512];
  for (const TrainLogRecord& r : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step,
                  r.loss.l_asr_att, r.loss.l_asr_ctc, r.loss.l_st_att, r.loss.l_st_ctc,
                  r.loss.combined, r.lr, r.ctx_dropped_flag_rate);
    os << buf;
  }
  require(os.good(), "training log: write to '" + path + "' failed");
}

std::vector<TrainLogRecord> load_training_log(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), "training log: cannot open '" + path + "'");
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "training log: empty file");
  require(line == "step,l_asr_att,l_asr_ctc,l_st_att,l_st_ctc,combined,lr,ctx_dropped_flag_rate",
          "training log: unexpected header '" + line + "'");
  std::vector<TrainLogRecord> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    require(cells.size() == 8, "training log: line " + std::to_string(line_no) +
                                   " has " + std::to_string(cells.size()) + " fields (want 8)");
    TrainLogRecord r;
    r.step = static_cast<std::size_t>(std::strtoull(cells[0].c_str(), nullptr, 10));
    r.loss.l_asr_att = std::strtod(cells[1].c_str(), nullptr);
    r.loss.l_asr_ctc = std::strtod(cells[2].c_str(), nullptr);
    r.loss.l_st_att = std::strtod(cells[3].c_str(), nullptr);
    r.loss.l_st_ctc = std::strtod(cells[4].c_str(), nullptr);
    r.loss.combined = std::strtod(cells[5].c_str(), nullptr);
    r.lr = std::strtod(cells[6].c_str(), nullptr);
    r.ctx_dropped_flag_rate = std::strtod(cells[7].c_str(), nullptr);
    out.push_back(r);
  }
  return out;
}

}  // namespace ctxst
