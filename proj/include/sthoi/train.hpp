#pragma once

#include <chrono>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "sthoi/augment.hpp"
#include "sthoi/log.hpp"
#include "sthoi/model.hpp"

namespace sthoi {

struct EpochStats {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double mean_loss = 0.0;
  std::size_t samples = 0;
  double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Minibatch SGD over keyframe samples. The batch loss is the mean of the
/// per-keyframe BCE losses; samples without pairs or labels are skipped.
/// Sample order and augmentation draw from one stream seeded by cfg.seed.
inline std::vector<EpochStats> train_model(Model& model, const std::vector<KeyframeSample>& samples,
                                           const TrainConfig& cfg, const AugmentConfig& aug,
                                           const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (cfg.augment) aug.validate();
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].pairs.empty() && !samples[i].gt.empty()) usable.push_back(i);
  }
  if (usable.empty()) throw InputError("train: no labelled keyframe with a valid pair");
  std::mt19937_64 rng(cfg.seed);
  auto params = model.parameters();
  std::vector<EpochStats> history;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(usable.begin(), usable.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < usable.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(usable.size(), b + cfg.batch_size);
      const double w = 1.0 / static_cast<double>(e - b);
      for (auto* p : params) p->zero_grad();
      for (std::size_t k = b; k < e; ++k) {
        const KeyframeSample& raw = samples[usable[k]];
        const KeyframeSample s =
            filled(cfg.augment ? augment(raw, rng, aug) : inference_resize(raw, aug));
        auto loss = ag::bce_multilabel(model.forward(s).logits, s.gt);
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) throw NumericError("train: non-finite loss");
        loss_sum += lv;
        ag::backward(ag::scale(loss, w));
      }
      sgd_step(params, cfg, epoch);
    }
    EpochStats st;
    st.epoch = epoch;
    st.lr = learning_rate(cfg, epoch);
    st.samples = usable.size();
    st.mean_loss = loss_sum / static_cast<double>(usable.size());
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return history;
}

/// Inference over samples (shorter-side resize, trajectory fill, top-k per keyframe).
/// Boxes are the unresized keyframe boxes of `samples`.
inline std::vector<Detection> predict_samples(const Model& model, const std::vector<KeyframeSample>& samples,
                                              const AugmentConfig& aug, std::size_t top_k = 100) {
  std::vector<Detection> out;
  for (const auto& raw : samples) {
    if (raw.pairs.empty()) continue;
    const KeyframeSample s = filled(inference_resize(raw, aug));
    auto dets = predict_keyframe(model, s, top_k, &raw);
    out.insert(out.end(), dets.begin(), dets.end());
  }
  return out;
}

}  // namespace sthoi
