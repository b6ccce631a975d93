#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ctxst/context.hpp"
#include "ctxst/corpus.hpp"
#include "ctxst/rng.hpp"
#include "ctxst/tensor.hpp"
#include "ctxst/vocab.hpp"

namespace ctxst {

struct ModelConfig {
  std::size_t asr_encoder_blocks = 2;
  std::size_t st_encoder_blocks = 1;
  std::size_t decoder_blocks = 2;  // per decoder
  std::size_t attention_dim = 64;
  std::size_t ff_dim = 128;
  std::size_t heads = 2;
  double alpha1 = 0.3;  // ASR CTC weight within the ASR pair
  double alpha2 = 0.3;  // ST CTC weight within the ST pair
  double alpha3 = 0.3;  // ASR share of the combined objective
  double dropout_rate = 0.1;
  double learning_rate = 1e-3;
  std::size_t warmup_steps = 500;
  std::size_t epochs = 10;           // fine-tune stage
  std::size_t pretrain_epochs = 5;   // recognition-only stage
  std::size_t batch_size = 8;
  std::size_t feature_dim = 16;  // frame width the frontend expects
  bool pe_restart_at_sos = false;    // position indices restart at sos
  bool sos_before_context = false;   // sos precedes the context prefix
  std::uint64_t seed = 11;
};

void validate(const ModelConfig& cfg);

/// All learnable tensors, addressed by stable dotted names. The map order
/// doubles as the canonical serialization and initialization order.
struct ModelParams {
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  void zero_grads();
  ModelParams clone() const;  // deep copy of values, no grads carried over
};

ModelParams init_params(const ModelConfig& cfg, std::size_t src_vocab_size,
                        std::size_t tgt_vocab_size);

enum class DecoderKind { asr, st };

/// Frame pairs concatenated and projected (time downsampled by 2), then
/// sinusoidal positions and the encoder self-attention stack. Needs at
/// least 4 frames. Pass a rng to enable dropout (training), null for none.
Tensor encode_asr(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                  const Tensor& features, Rng* dropout_rng = nullptr);

/// The translation encoder stacked on the recognition encoder's output.
Tensor encode_st(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                 const Tensor& h_asr, Rng* dropout_rng = nullptr);

/// Causal self-attention over the prefix plus cross-attention over h,
/// returning next-token logits at every prefix position.
Tensor decoder_forward(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                       const Tensor& h, const std::vector<int>& prefix_ids, DecoderKind which,
                       Rng* dropout_rng = nullptr);

/// CTC projection of encoder states for one side.
Tensor ctc_head(Tape& tape, const ModelParams& params, const Tensor& h, DecoderKind which);

struct LossBreakdown {
  double l_asr_att = 0.0;
  double l_asr_ctc = 0.0;
  double l_st_att = 0.0;
  double l_st_ctc = 0.0;
  double combined = 0.0;

  /// The one true combination expression. Training evaluates exactly this
  /// shape through graph ops, so re-evaluating it here must reproduce the
  /// stored `combined` bit for bit.
  static double recombine(double asr_att, double asr_ctc, double st_att, double st_ctc,
                          double alpha1, double alpha2, double alpha3) {
    return (asr_att * (1.0 - alpha1) + asr_ctc * alpha1) * alpha3 +
           (st_att * (1.0 - alpha2) + st_ctc * alpha2) * (1.0 - alpha3);
  }
};

/// Decoder input and training labels for the translation side. The prefix
/// is context ++ sos ++ target (or sos ++ context ++ target when
/// sos_before_context); labels are the prefix shifted left with eos
/// appended, and the mask admits only target and eos positions into the
/// loss.
struct StTeacherBatch {
  std::vector<int> prefix;
  std::vector<int> labels;
  std::vector<char> mask;
  std::size_t target_start = 0;  // first label index inside the loss
};
StTeacherBatch make_st_teacher(const std::vector<int>& context_ids,
                               const std::vector<int>& target_ids, bool sos_before_context);

struct TrainExample {
  const Utterance* utterance = nullptr;
  std::vector<int> context_ids;  // rendered, already dropout-filtered
};

/// Mean per-example losses over the batch combined into the multi-task
/// objective. Stage 1 (pretrain=true) treats alpha3 as 1 and skips the
/// translation forward entirely; its ST components are reported as zero.
struct LossGraph {
  Tensor combined;  // scalar on the tape
  LossBreakdown values;
};
LossGraph compute_loss(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                       const std::vector<TrainExample>& batch, const Vocabulary& src_vocab,
                       const Vocabulary& tgt_vocab, bool pretrain, Rng* dropout_rng = nullptr);

/// Utterance features as a tensor (f32 storage widened to f64).
Tensor features_tensor(const Utterance& u);

/// Source/target token ids for an utterance (errors on unknowns in neither;
/// unknown maps to unk, which the synthetic corpus never produces).
std::vector<int> source_ids(const Utterance& u, const Vocabulary& v);
std::vector<int> target_ids(const Utterance& u, const Vocabulary& v);

// ---- training ------------------------------------------------------------

struct TrainLogRecord {
  std::size_t step = 0;
  LossBreakdown loss;
  double lr = 0.0;
  double ctx_dropped_flag_rate = 0.0;
};

struct TrainResult {
  ModelParams pretrain_params;  // snapshot after the recognition stage
  ModelParams params;           // final parameters
  std::vector<TrainLogRecord> log;
};

/// Two-stage training: recognition pretraining, then the full multi-task
/// objective with context prefixes and context dropout. Deterministic for a
/// fixed seed. Non-finite losses abort with the failing step number.
TrainResult train(const std::vector<Conversation>& train_convs, const Vocabulary& src_vocab,
                  const Vocabulary& tgt_vocab, const ModelConfig& model_cfg,
                  const ContextConfig& ctx_cfg);

// ---- persistence ----------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;
  ModelParams params;
};

void save_checkpoint(const std::string& path, const ModelParams& params, const ModelConfig& cfg,
                     std::size_t src_vocab_size, std::size_t tgt_vocab_size);
Checkpoint load_checkpoint(const std::string& path);

void save_training_log(const std::string& path, const std::vector<TrainLogRecord>& log);
std::vector<TrainLogRecord> load_training_log(const std::string& path);

}  // namespace ctxst
