#pragma once

// Training loop: augmented view pairs, the warmup/cosine/milestone learning
// rate schedule, SGD over the trainable partition, and periodic validation
// by semi-supervised clustering accuracy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "facegcd/checkpoint.hpp"
#include "facegcd/cluster.hpp"
#include "facegcd/common.hpp"
#include "facegcd/data.hpp"
#include "facegcd/loss.hpp"
#include "facegcd/metrics.hpp"
#include "facegcd/model.hpp"
#include "facegcd/params.hpp"
#include "facegcd/tensor.hpp"

namespace facegcd {

struct AugmentConfig {
  bool crop = true;
  bool flip = true;
  bool jitter = true;
  double strength = 1.0;

  bool enabled() const { return crop || flip || jitter; }
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 2e-5;
  double base_lr = 0.1;
  double warmup_lr = 1e-5;
  int warmup_epochs = 5;
  std::vector<int> milestones = {90, 180};
  int eval_every = 10;  // 0 disables periodic validation
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(base_lr > 0.0) || !(warmup_lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
      throw ConfigError("train: warmup epochs must lie in [0, epochs)");
    if (eval_every < 0) throw ConfigError("train: eval_every must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay >= 0");
    if (augment.strength < 0.0) throw ConfigError("train: augment strength >= 0");
  }
};

// Linear warmup to base_lr, cosine decay after, one x0.1 step per milestone.
inline double learning_rate(const TrainConfig& cfg, int epoch) {
  double lr;
  if (epoch < cfg.warmup_epochs) {
    const double t = cfg.warmup_epochs > 1
                         ? static_cast<double>(epoch) / (cfg.warmup_epochs - 1)
                         : 1.0;
    lr = cfg.warmup_lr + (cfg.base_lr - cfg.warmup_lr) * t;
  } else {
    const double span = std::max(1, cfg.epochs - cfg.warmup_epochs);
    const double t = std::min(1.0, (epoch - cfg.warmup_epochs) / span);
    lr = cfg.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
  }
  for (int m : cfg.milestones)
    if (epoch >= m) lr *= 0.1;
  return lr;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

// One stochastic view: random crop-resize, horizontal flip, brightness and
// contrast jitter. With everything disabled the input comes back unchanged.
inline Tensor augment_image(const Tensor& img, const AugmentConfig& aug, Rng& rng) {
  if (img.ndim() != 3) throw ShapeError("augment_image: expected (C,S,S)");
  const int channels = img.dim(0), side = img.dim(1);
  Tensor out = img;
  auto uni = [&rng](float lo, float hi) {
    return std::uniform_real_distribution<float>(lo, hi)(rng);
  };

  if (aug.crop) {
    const float s = static_cast<float>(aug.strength);
    const float scale = uni(std::max(0.3f, 1.0f - 0.25f * s), 1.0f);
    const int crop_side = std::max(4, static_cast<int>(std::lround(scale * side)));
    std::uniform_int_distribution<int> off(0, side - crop_side);
    const int oy = off(rng), ox = off(rng);
    if (crop_side != side || oy != 0 || ox != 0) {
      Tensor resized({channels, side, side});
      const float step = side > 1 ? static_cast<float>(crop_side - 1) / (side - 1) : 0.0f;
      for (int c = 0; c < channels; ++c)
        for (int y = 0; y < side; ++y)
          for (int x = 0; x < side; ++x)
            resized.at({c, y, x}) = bilinear_at(out.data(), channels, side, c,
                                                static_cast<float>(oy) + y * step,
                                                static_cast<float>(ox) + x * step);
      out = std::move(resized);
    }
  }

  if (aug.flip && uni(0.0f, 1.0f) < 0.5f) {
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side / 2; ++x)
          std::swap(out.at({c, y, x}), out.at({c, y, side - 1 - x}));
  }

  if (aug.jitter) {
    const float s = static_cast<float>(aug.strength);
    const float brightness = uni(-0.2f * s, 0.2f * s);
    const float contrast = uni(1.0f - 0.2f * s, 1.0f + 0.2f * s);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
      const float v = (out[i] - 0.5f) * contrast + 0.5f + brightness;
      out[i] = std::min(std::max(v, 0.0f), 1.0f);
    }
  }
  return out;
}

inline std::pair<Tensor, Tensor> make_views(const Tensor& img, const AugmentConfig& aug,
                                            Rng& rng) {
  Tensor a = augment_image(img, aug, rng);
  Tensor b = augment_image(img, aug, rng);
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Embedding extraction and validation
// ---------------------------------------------------------------------------

inline Tensor embed_samples(const FaceGCDModel& model, const ImageStore& store,
                            const std::vector<const Sample*>& samples, int batch = 64) {
  if (samples.empty()) throw DataError("embed_samples: no samples");
  const int channels = store.channels(), side = store.side();
  const int n = static_cast<int>(samples.size());
  const int e = model.config().embed_out;
  const std::int64_t pix = store.image_numel();
  Tensor out({n, e});
  for (int start = 0; start < n; start += batch) {
    const int b = std::min(batch, n - start);
    Tensor images({b, channels, side, side});
    for (int i = 0; i < b; ++i)
      std::copy_n(store.raw(image_ref_index(samples[static_cast<size_t>(start + i)]->image_ref)),
                  pix, images.data() + static_cast<std::int64_t>(i) * pix);
    ag::Var z = model.embed_batch(images);
    std::copy_n(z.val().data(), static_cast<std::int64_t>(b) * e,
                out.data() + static_cast<std::int64_t>(start) * e);
  }
  return out;
}

// Fits SSK on train embeddings (labeled rows anchored), assigns test rows to
// the nearest centroid, and scores all-class clustering accuracy.
inline double validate_all_acc(const FaceGCDModel& model, const GFDSplit& split,
                               const ImageStore& store, std::uint64_t seed) {
  std::vector<const Sample*> train = split.train_view();
  if (train.empty() || split.test.empty()) throw DataError("validate: empty split");
  Tensor train_emb = embed_samples(model, store, train);
  std::vector<int> train_labels(train.size(), -1);
  for (size_t i = 0; i < train.size(); ++i)
    if (train[i]->labeled) train_labels[i] = train[i]->class_id;

  const int k = static_cast<int>(split.known_ids.size() + split.unknown_ids.size());
  ClusterConfig ccfg;
  ccfg.seed = seed;
  Assignment fitted = ssk_cluster(train_emb, train_labels, k, ccfg);

  std::vector<const Sample*> test;
  std::vector<int> truth;
  for (const auto& s : split.test) {
    test.push_back(&s);
    truth.push_back(s.class_id);
  }
  Tensor test_emb = embed_samples(model, store, test);
  return hungarian_acc_all(assign_nearest(fitted.centroids, test_emb), truth);
}

// ---------------------------------------------------------------------------
// Fit
// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss_u = 0.0;
  double loss_s = 0.0;
  double loss_total = 0.0;
  double val_acc_all = -1.0;  // -1 when this epoch had no validation pass
};

struct FitResult {
  std::vector<EpochRecord> history;
  Checkpoint best;  // best validation All-ACC; final state if never validated
  double best_acc = -1.0;
  int best_epoch = -1;
  Checkpoint final_state;
};

struct FitHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const Checkpoint&, const EpochRecord&)> on_best;
};

inline FitResult fit(FaceGCDModel& model, const GFDSplit& split, const ImageStore& store,
                     const TrainConfig& cfg, const LossConfig& loss_cfg,
                     const FitHooks& hooks = {}) {
  cfg.validate();
  loss_cfg.validate();
  std::vector<const Sample*> samples = split.train_view();
  if (samples.empty()) throw DataError("fit: empty training split");
  const int channels = store.channels(), side = store.side();
  if (side != model.config().encoder.image_side || channels != model.config().encoder.channels)
    throw ShapeError("fit: image store geometry does not match the encoder");
  const std::int64_t pix = store.image_numel();
  const int n = static_cast<int>(samples.size());

  SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  FitResult res;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    Rng shuffle_rng = make_rng(cfg.seed, "epoch-shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(samples.begin(), samples.end(), shuffle_rng);

    double sum_u = 0.0, sum_s = 0.0, sum_t = 0.0;
    int seen = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n - start);
      Tensor images({2 * b, channels, side, side});
      std::vector<int> labels(static_cast<size_t>(2 * b), -1);
      for (int i = 0; i < b; ++i) {
        const Sample* smp = samples[static_cast<size_t>(start + i)];
        Tensor img = store.image(image_ref_index(smp->image_ref));
        Rng arng = make_rng(cfg.seed, "augment", static_cast<std::uint64_t>(epoch),
                            fnv1a(smp->id));
        auto [v1, v2] = make_views(img, cfg.augment, arng);
        std::copy_n(v1.data(), pix, images.data() + static_cast<std::int64_t>(i) * pix);
        std::copy_n(v2.data(), pix, images.data() + static_cast<std::int64_t>(b + i) * pix);
        if (smp->labeled) {
          labels[static_cast<size_t>(i)] = smp->class_id;
          labels[static_cast<size_t>(b + i)] = smp->class_id;
        }
      }

      model.params().zero_grad();
      ag::Var z = model.embed_batch(images);
      LossBreakdown lb = total_loss(z, labels, loss_cfg);
      if (!std::isfinite(lb.total_value()))
        throw DivergenceError("fit: non-finite loss at epoch " + std::to_string(epoch));
      ag::backward(lb.total);
      opt.step(model.params(), lr);

      sum_u += static_cast<double>(lb.unsup_value()) * b;
      sum_s += static_cast<double>(lb.sup_value()) * b;
      sum_t += static_cast<double>(lb.total_value()) * b;
      seen += b;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss_u = sum_u / seen;
    rec.loss_s = sum_s / seen;
    rec.loss_total = sum_t / seen;
    const bool last = epoch == cfg.epochs - 1;
    if (cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      rec.val_acc_all = validate_all_acc(model, split, store, cfg.seed);
      if (rec.val_acc_all > res.best_acc) {
        res.best_acc = rec.val_acc_all;
        res.best_epoch = epoch;
        res.best = checkpoint_from(model.params(), model_meta(model.config()));
        if (hooks.on_best) hooks.on_best(res.best, rec);
      }
    }
    res.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  res.final_state = checkpoint_from(model.params(), model_meta(model.config()));
  if (res.best_epoch < 0) {
    res.best = res.final_state;
    res.best_acc = -1.0;
  }
  return res;
}

}  // namespace facegcd
