#pragma once

#include <cstddef>
#include <vector>

#include "ctxst/model.hpp"

namespace ctxst {

/// Plain row-major matrix for the no-tape decoding path.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double* row(std::size_t i) { return v.data() + i * cols; }
  const double* row(std::size_t i) const { return v.data() + i * cols; }
};

/// Encoder work shared by every hypothesis of one utterance: the
/// translation-encoder states and their per-block cross-attention key/value
/// projections.
struct EncodedFeatures {
  Mat st_h;
  std::vector<Mat> cross_k;
  std::vector<Mat> cross_v;
};

EncodedFeatures encode_for_decoding(const ModelParams& params, const ModelConfig& cfg,
                                    const Utterance& u);

/// Per-hypothesis incremental state: self-attention keys and values of every
/// consumed prefix token, per decoder block. Copyable, so beam search can
/// fork a hypothesis by copying its cache.
struct DecoderCache {
  std::vector<Mat> self_k;
  std::vector<Mat> self_v;
  std::size_t consumed = 0;
};

DecoderCache make_decoder_cache(const ModelConfig& cfg);

/// Consumes one prefix token at `position` (which drives the sinusoidal
/// offset) and returns log-probabilities for the following token. Built from
/// the same kernels as the tape decoder, so for equal prefixes the scores
/// agree with decoder_forward to well under 1e-9.
std::vector<double> decoder_step(const ModelParams& params, const ModelConfig& cfg,
                                 const EncodedFeatures& enc, DecoderCache& cache, int token,
                                 std::size_t position);

}  // namespace ctxst
