#include "ctxst/infer.hpp"

#include <cmath>
#include <string>

#include "kernels.hpp"

namespace ctxst {

namespace {

Mat matmul_mat(const Mat& a, const Tensor& w) {
  Mat out(a.rows, w.shape()[1]);
  kernels::matmul_acc(a.v.data(), w.values().data(), out.v.data(), a.rows, a.cols, out.cols);
  return out;
}

void add_bias_rows(Mat& a, const Tensor& b) {
  const std::vector<double>& bias = b.values();
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* r = a.row(i);
    for (std::size_t j = 0; j < a.cols; ++j) r[j] += bias[j];
  }
}

Mat layer_norm_mat(const Mat& x, const Tensor& g, const Tensor& b) {
  Mat out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    kernels::layer_norm_row(x.row(i), g.values().data(), b.values().data(), out.row(i), x.cols);
  return out;
}

void append_row(Mat& m, const std::vector<double>& row) {
  if (m.rows == 0) m.cols = row.size();
  m.v.insert(m.v.end(), row.begin(), row.end());
  ++m.rows;
}

std::vector<double> linear_row(const double* x, const Tensor& w, const Tensor* b) {
  const std::size_t k = w.shape()[0];
  const std::size_t n = w.shape()[1];
  std::vector<double> y(n, 0.0);
  kernels::matmul_acc(x, w.values().data(), y.data(), 1, k, n);
  if (b != nullptr)
    for (std::size_t j = 0; j < n; ++j) y[j] += b->values()[j];
  return y;
}

std::vector<double> layer_norm_row_vec(const std::vector<double>& x, const ModelParams& p,
                                       const std::string& name) {
  std::vector<double> out(x.size());
  kernels::layer_norm_row(x.data(), p.at(name + ".g").values().data(),
                          p.at(name + ".b").values().data(), out.data(), x.size());
  return out;
}

// Full-sequence self-attention for the encoders (no mask).
Mat attention_full(const ModelParams& p, const std::string& name, const Mat& x,
                   std::size_t heads) {
  Mat q = matmul_mat(x, p.at(name + ".wq"));
  Mat k = matmul_mat(x, p.at(name + ".wk"));
  Mat v = matmul_mat(x, p.at(name + ".wv"));
  const std::size_t dim = q.cols;
  const std::size_t head_dim = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const std::size_t n = x.rows;

  Mat mixed(n, dim);
  std::vector<double> scores(n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * head_dim;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        const double* qi = q.row(i) + off;
        const double* kj = k.row(j) + off;
        for (std::size_t d = 0; d < head_dim; ++d) s += qi[d] * kj[d];
        scores[j] = s * inv_sqrt;
      }
      kernels::softmax_rows_inplace(scores.data(), 1, n);
      double* out = mixed.row(i) + off;
      for (std::size_t j = 0; j < n; ++j) {
        const double w = scores[j];
        if (w == 0.0) continue;
        const double* vj = v.row(j) + off;
        for (std::size_t d = 0; d < head_dim; ++d) out[d] += w * vj[d];
      }
    }
  }
  return matmul_mat(mixed, p.at(name + ".wo"));
}

void add_mat(Mat& a, const Mat& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

Mat feed_forward_mat(const ModelParams& p, const std::string& name, const Mat& x) {
  Mat h = matmul_mat(x, p.at(name + ".ff.w1"));
  add_bias_rows(h, p.at(name + ".ff.b1"));
  for (double& v : h.v) v = v > 0.0 ? v : 0.0;
  Mat out = matmul_mat(h, p.at(name + ".ff.w2"));
  add_bias_rows(out, p.at(name + ".ff.b2"));
  return out;
}

Mat encoder_block_mat(const ModelParams& p, const ModelConfig& cfg, const std::string& name,
                      Mat x) {
  Mat n1 = layer_norm_mat(x, p.at(name + ".ln1.g"), p.at(name + ".ln1.b"));
  add_mat(x, attention_full(p, name + ".self", n1, cfg.heads));
  Mat n2 = layer_norm_mat(x, p.at(name + ".ln2.g"), p.at(name + ".ln2.b"));
  add_mat(x, feed_forward_mat(p, name, n2));
  return x;
}

// One attention read with a single query row against fixed keys/values.
// Accumulation order matches the tape path's matmul kernel exactly.
void attend_row(const std::vector<double>& q, const Mat& keys, const Mat& values,
                std::size_t heads, std::vector<double>& out) {
  const std::size_t dim = q.size();
  const std::size_t head_dim = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const std::size_t n = keys.rows;
  out.assign(dim, 0.0);
  std::vector<double> scores(n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * head_dim;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      const double* kj = keys.row(j) + off;
      for (std::size_t d = 0; d < head_dim; ++d) s += q[off + d] * kj[d];
      scores[j] = s * inv_sqrt;
    }
    kernels::softmax_rows_inplace(scores.data(), 1, n);
    for (std::size_t j = 0; j < n; ++j) {
      const double w = scores[j];
      if (w == 0.0) continue;
      const double* vj = values.row(j) + off;
      for (std::size_t d = 0; d < head_dim; ++d) out[off + d] += w * vj[d];
    }
  }
}

void add_vec(std::vector<double>& a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

EncodedFeatures encode_for_decoding(const ModelParams& params, const ModelConfig& cfg,
                                    const Utterance& u) {
  require(u.feature_dim == cfg.feature_dim,
          "asr encoder: feature width " + std::to_string(u.feature_dim) +
              " does not match configured " + std::to_string(cfg.feature_dim));
  if (u.frames < 4)
    fail("asr encoder: input of " + std::to_string(u.frames) +
         " frames is too short (needs at least 4)");
  const std::size_t d = cfg.feature_dim;
  const std::size_t t2 = u.frames / 2;

  Mat pairs(t2, 2 * d);
  for (std::size_t i = 0; i < t2 * 2 * d; ++i) pairs.v[i] = static_cast<double>(u.features[i]);

  Mat x = matmul_mat(pairs, params.at("frontend.w"));
  add_bias_rows(x, params.at("frontend.b"));
  for (std::size_t i = 0; i < x.rows; ++i) {
    double* r = x.row(i);
    for (std::size_t j = 0; j < x.cols; ++j) r[j] += kernels::position_value(i, j, x.cols);
  }
  for (std::size_t b = 0; b < cfg.asr_encoder_blocks; ++b)
    x = encoder_block_mat(params, cfg, "asr_enc." + std::to_string(b), std::move(x));
  Mat asr_h = layer_norm_mat(x, params.at("asr_enc.final.g"), params.at("asr_enc.final.b"));

  Mat st = asr_h;
  for (std::size_t b = 0; b < cfg.st_encoder_blocks; ++b)
    st = encoder_block_mat(params, cfg, "st_enc." + std::to_string(b), std::move(st));
  EncodedFeatures out;
  out.st_h = layer_norm_mat(st, params.at("st_enc.final.g"), params.at("st_enc.final.b"));

  out.cross_k.reserve(cfg.decoder_blocks);
  out.cross_v.reserve(cfg.decoder_blocks);
  for (std::size_t b = 0; b < cfg.decoder_blocks; ++b) {
    const std::string name = "st_dec." + std::to_string(b) + ".cross";
    out.cross_k.push_back(matmul_mat(out.st_h, params.at(name + ".wk")));
    out.cross_v.push_back(matmul_mat(out.st_h, params.at(name + ".wv")));
  }
  return out;
}

DecoderCache make_decoder_cache(const ModelConfig& cfg) {
  DecoderCache c;
  c.self_k.resize(cfg.decoder_blocks);
  c.self_v.resize(cfg.decoder_blocks);
  return c;
}

std::vector<double> decoder_step(const ModelParams& params, const ModelConfig& cfg,
                                 const EncodedFeatures& enc, DecoderCache& cache, int token,
                                 std::size_t position) {
  const std::size_t dim = cfg.attention_dim;
  const Tensor& table = params.at("st_dec.embed");
  require(token >= 0 && static_cast<std::size_t>(token) < table.shape()[0],
          "decoder: token id " + std::to_string(token) + " out of vocabulary");
  require(cache.self_k.size() == cfg.decoder_blocks, "decoder: cache block count mismatch");

  const double embed_scale = std::sqrt(static_cast<double>(dim));
  std::vector<double> x(dim);
  for (std::size_t j = 0; j < dim; ++j)
    x[j] = table.values()[static_cast<std::size_t>(token) * dim + j] * embed_scale +
           kernels::position_value(position, j, dim);

  std::vector<double> attn_out;
  for (std::size_t b = 0; b < cfg.decoder_blocks; ++b) {
    const std::string name = "st_dec." + std::to_string(b);
    std::vector<double> n1 = layer_norm_row_vec(x, params, name + ".ln1");
    std::vector<double> q = linear_row(n1.data(), params.at(name + ".self.wq"), nullptr);
    append_row(cache.self_k[b], linear_row(n1.data(), params.at(name + ".self.wk"), nullptr));
    append_row(cache.self_v[b], linear_row(n1.data(), params.at(name + ".self.wv"), nullptr));
    attend_row(q, cache.self_k[b], cache.self_v[b], cfg.heads, attn_out);
    add_vec(x, linear_row(attn_out.data(), params.at(name + ".self.wo"), nullptr));

    std::vector<double> n2 = layer_norm_row_vec(x, params, name + ".ln2");
    std::vector<double> cq = linear_row(n2.data(), params.at(name + ".cross.wq"), nullptr);
    attend_row(cq, enc.cross_k[b], enc.cross_v[b], cfg.heads, attn_out);
    add_vec(x, linear_row(attn_out.data(), params.at(name + ".cross.wo"), nullptr));

    std::vector<double> n3 = layer_norm_row_vec(x, params, name + ".ln3");
    std::vector<double> h = linear_row(n3.data(), params.at(name + ".ff.w1"),
                                       &params.at(name + ".ff.b1"));
    for (double& v : h) v = v > 0.0 ? v : 0.0;
    add_vec(x, linear_row(h.data(), params.at(name + ".ff.w2"), &params.at(name + ".ff.b2")));
  }
  ++cache.consumed;

  std::vector<double> fin = layer_norm_row_vec(x, params, "st_dec.final");
  std::vector<double> logits =
      linear_row(fin.data(), params.at("st_dec.out.w"), &params.at("st_dec.out.b"));
  kernels::log_softmax_rows_inplace(logits.data(), 1, logits.size());
  return logits;
}

}  // namespace ctxst
