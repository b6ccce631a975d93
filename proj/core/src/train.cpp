#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctxst/model.hpp"

namespace ctxst {

namespace {

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::size_t step = 0;
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;
};

// Linear warmup into inverse-sqrt decay; the two branches meet at `warmup`.
double scheduled_lr(double base, std::size_t step, std::size_t warmup) {
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return base * std::min(s / w, std::sqrt(w / s));
}

void adam_update(ModelParams& params, AdamState& state, double lr) {
  const double bc1 = 1.0 - std::pow(AdamState::beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(AdamState::beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params.tensors) {
    std::vector<double>& m = state.m[name];
    std::vector<double>& v = state.v[name];
    if (m.empty()) {
      m.assign(t.size(), 0.0);
      v.assign(t.size(), 0.0);
    }
    const std::vector<double>& g = t.grad();
    std::vector<double>& x = t.values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = AdamState::beta1 * m[i] + (1.0 - AdamState::beta1) * g[i];
      v[i] = AdamState::beta2 * v[i] + (1.0 - AdamState::beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + AdamState::eps);
    }
  }
}

struct Slot {
  const Conversation* conv;
  std::size_t index;
};

}  // namespace

TrainResult train(const std::vector<Conversation>& train_convs, const Vocabulary& src_vocab,
                  const Vocabulary& tgt_vocab, const ModelConfig& model_cfg,
                  const ContextConfig& ctx_cfg) {
  validate(model_cfg);
  validate(ctx_cfg);
  require(!train_convs.empty(), "train: no conversations to train on");

  std::vector<Slot> slots;
  for (const Conversation& conv : train_convs)
    for (std::size_t i = 0; i < conv.utterances.size(); ++i) slots.push_back({&conv, i});
  require(!slots.empty(), "train: conversations hold no utterances");

  ModelParams params = init_params(model_cfg, src_vocab.size(), tgt_vocab.size());
  TrainResult out;
  std::size_t global_step = 0;

  auto run_stage = [&](bool pretrain, std::size_t epochs, const char* stage_tag) {
    AdamState adam;
    Rng rng(derive_seed(model_cfg.seed, stage_tag));
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      std::vector<std::size_t> order(slots.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += model_cfg.batch_size) {
        const std::size_t end = std::min(start + model_cfg.batch_size, order.size());
        std::vector<TrainExample> batch;
        batch.reserve(end - start);
        std::size_t dropped = 0;
        for (std::size_t i = start; i < end; ++i) {
          const Slot& slot = slots[order[i]];
          TrainExample ex;
          ex.utterance = &slot.conv->utterances[slot.index];
          if (!pretrain && ctx_cfg.k > 0) {
            const bool drop =
                ctx_cfg.dropout_p > 0.0 && rng.bernoulli(ctx_cfg.dropout_p);
            if (drop) {
              ++dropped;
            } else {
              ContextWindow w =
                  assemble_context(*slot.conv, static_cast<int>(slot.index), ctx_cfg);
              ex.context_ids = render(w, tgt_vocab, ctx_cfg.truncation_limit);
            }
          }
          batch.push_back(std::move(ex));
        }

        ++global_step;
        ++adam.step;
        const double lr = scheduled_lr(model_cfg.learning_rate, adam.step, model_cfg.warmup_steps);
        LossGraph loss;
        try {
          Tape tape;
          params.zero_grads();
          loss = compute_loss(tape, params, model_cfg, batch, src_vocab, tgt_vocab, pretrain, &rng);
          tape.backward(loss.combined);
          adam_update(params, adam, lr);
        } catch (const Error& e) {
          fail("training diverged at step " + std::to_string(global_step) + ": " + e.what());
        }
        if (!std::isfinite(loss.values.combined))
          fail("training diverged at step " + std::to_string(global_step) + " (non-finite loss)");
        for (const auto& [name, t] : params.tensors)
          for (double v : t.values())
            if (!std::isfinite(v))
              fail("training diverged at step " + std::to_string(global_step) +
                   " (non-finite parameter in " + name + ")");

        TrainLogRecord rec;
        rec.step = global_step;
        rec.loss = loss.values;
        rec.lr = lr;
        rec.ctx_dropped_flag_rate =
            static_cast<double>(dropped) / static_cast<double>(batch.size());
        out.log.push_back(rec);
      }
    }
  };

  run_stage(true, model_cfg.pretrain_epochs, "train-recognition");
  out.pretrain_params = params.clone();
  run_stage(false, model_cfg.epochs, "train-translation");
  out.params = std::move(params);
  return out;
}

}  // namespace ctxst
