#pragma once

// Training recipe: cross-entropy, SGD with momentum and weight decay, step
// learning-rate decay, light augmentation, and best-validation checkpointing.
// Single-writer and fully seeded; identical seeds give identical loss curves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "salforge/checkpoint.hpp"
#include "salforge/dataset.hpp"
#include "salforge/errors.hpp"
#include "salforge/net.hpp"
#include "salforge/parallel.hpp"
#include "salforge/rng.hpp"

namespace salforge {

struct AugmentFlags {
  bool hflip = true;
  bool intensity_jitter = true;
  bool affine = true;
};

struct TrainConfig {
  int epochs = 15;
  int batch_size = 16;
  double lr = 0.005;
  double momentum = 0.9;  // the recipe names the optimiser but not the value
  double weight_decay = 0.0005;
  double lr_decay_factor = 10.0;
  int lr_decay_every = 5;
  AugmentFlags augment;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) {
      throw ConfigError("momentum must be in [0, 1)");
    }
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
    if (!(lr_decay_factor > 0.0)) {
      throw ConfigError("lr_decay_factor must be > 0");
    }
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"lr_decay_factor", c.lr_decay_factor},
                     {"lr_decay_every", c.lr_decay_every},
                     {"augment_hflip", c.augment.hflip},
                     {"augment_intensity_jitter", c.augment.intensity_jitter},
                     {"augment_affine", c.augment.affine},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known = {
      "epochs",          "batch_size",      "lr",
      "momentum",        "weight_decay",    "lr_decay_factor",
      "lr_decay_every",  "augment_hflip",   "augment_intensity_jitter",
      "augment_affine",  "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("train config: unknown key '" + it.key() + "'");
    }
  }
  if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("lr")) j.at("lr").get_to(c.lr);
  if (j.contains("momentum")) j.at("momentum").get_to(c.momentum);
  if (j.contains("weight_decay")) j.at("weight_decay").get_to(c.weight_decay);
  if (j.contains("lr_decay_factor")) j.at("lr_decay_factor").get_to(c.lr_decay_factor);
  if (j.contains("lr_decay_every")) j.at("lr_decay_every").get_to(c.lr_decay_every);
  if (j.contains("augment_hflip")) j.at("augment_hflip").get_to(c.augment.hflip);
  if (j.contains("augment_intensity_jitter")) {
    j.at("augment_intensity_jitter").get_to(c.augment.intensity_jitter);
  }
  if (j.contains("augment_affine")) j.at("augment_affine").get_to(c.augment.affine);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
}

struct EpochStats {
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::vector<double> step_losses;  // per-batch losses, all epochs in order
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
  std::string checkpoint_path;
};

// Mean over the batch of -log softmax(logits)[label]; gradient is
// (softmax - onehot) / B. Stabilized by max subtraction.
inline std::pair<double, Tensor> cross_entropy(const Tensor& logits,
                                               const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.extent(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + logits.shape_string() +
                         " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.extent(0);
  const std::size_t classes = logits.extent(1);
  Tensor grad(logits.shape());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw InvalidArgument("cross_entropy: label out of range");
    }
    double peak = logits(b, 0);
    for (std::size_t c = 1; c < classes; ++c) peak = std::max(peak, logits(b, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      denom += std::exp(logits(b, c) - peak);
    }
    const double log_denom = std::log(denom);
    loss += -(logits(b, static_cast<std::size_t>(labels[b])) - peak - log_denom);
    for (std::size_t c = 0; c < classes; ++c) {
      const double softmax = std::exp(logits(b, c) - peak) / denom;
      const double onehot = (static_cast<int>(c) == labels[b]) ? 1.0 : 0.0;
      grad(b, c) = (softmax - onehot) / static_cast<double>(batch);
    }
  }
  return {loss / static_cast<double>(batch), grad};
}

// v <- momentum*v + (g + wd*w); w <- w - lr*v.
inline void sgd_momentum_step(Tensor& param, const Tensor& grad,
                              Tensor& velocity, double lr, double momentum,
                              double weight_decay) {
  require_same_shape(param, grad, "sgd_momentum_step");
  require_same_shape(param, velocity, "sgd_momentum_step");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (grad[i] + weight_decay * param[i]);
    param[i] -= lr * velocity[i];
  }
}

// lr0 * decay^{-floor(epoch / every)}.
inline double lr_schedule(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw InvalidArgument("lr_schedule: epoch must be >= 0");
  const int drops = epoch / config.lr_decay_every;
  return config.lr * std::pow(1.0 / config.lr_decay_factor, drops);
}

// Train-split augmentation: horizontal flip (p = 0.5, boxes mirrored),
// multiplicative/additive intensity jitter clamped to [0,1], and small
// integer translation limited so every box stays in bounds.
inline Sample augment(const Sample& sample, const AugmentFlags& flags,
                      Rng& rng) {
  Sample out = sample;
  const int h = static_cast<int>(sample.image.extent(1));
  const int w = static_cast<int>(sample.image.extent(2));

  if (flags.hflip && rng.bernoulli(0.5)) {
    Tensor flipped(out.image.shape());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        flipped[static_cast<std::size_t>(y) * w + x] =
            out.image[static_cast<std::size_t>(y) * w + (w - 1 - x)];
      }
    }
    out.image = std::move(flipped);
    for (auto& box : out.boxes) {
      const int nx0 = w - box.x1;
      const int nx1 = w - box.x0;
      box.x0 = nx0;
      box.x1 = nx1;
    }
  }

  if (flags.affine) {
    int lo_dx = -5, hi_dx = 5, lo_dy = -5, hi_dy = 5;
    for (const auto& box : out.boxes) {
      lo_dx = std::max(lo_dx, -box.x0);
      hi_dx = std::min(hi_dx, w - box.x1);
      lo_dy = std::max(lo_dy, -box.y0);
      hi_dy = std::min(hi_dy, h - box.y1);
    }
    const int dx = lo_dx <= hi_dx ? rng.uniform_int(lo_dx, hi_dx) : 0;
    const int dy = lo_dy <= hi_dy ? rng.uniform_int(lo_dy, hi_dy) : 0;
    if (dx != 0 || dy != 0) {
      Tensor shifted(out.image.shape());
      for (int y = 0; y < h; ++y) {
        const int sy = std::clamp(y - dy, 0, h - 1);
        for (int x = 0; x < w; ++x) {
          const int sx = std::clamp(x - dx, 0, w - 1);  // edge replicate
          shifted[static_cast<std::size_t>(y) * w + x] =
              out.image[static_cast<std::size_t>(sy) * w + sx];
        }
      }
      out.image = std::move(shifted);
      for (auto& box : out.boxes) {
        box.x0 += dx;
        box.x1 += dx;
        box.y0 += dy;
        box.y1 += dy;
      }
    }
  }

  if (flags.intensity_jitter) {
    const double gain = rng.uniform(0.8, 1.2);
    const double shift = rng.uniform(-0.1, 0.1);
    for (std::size_t i = 0; i < out.image.size(); ++i) {
      out.image[i] = std::clamp(out.image[i] * gain + shift, 0.0, 1.0);
    }
  }
  return out;
}

// Mann-Whitney rank statistic over class-1 scores; ties contribute 1/2.
inline double auc_from_scores(const std::vector<double>& scores,
                              const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auc_from_scores: size mismatch");
  }
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  if (pairs == 0) {
    throw InvalidArgument("auc undefined on single-class data");
  }
  return wins / static_cast<double>(pairs);
}

// Accuracy at argmax plus Mann-Whitney AUC over class-1 softmax scores
// (ties contribute 1/2). Throws on single-class splits.
inline std::pair<double, double> evaluate_classifier(
    const Model& model, const std::vector<Sample>& samples) {
  if (samples.empty()) {
    throw InvalidArgument("evaluate_classifier: empty split");
  }
  std::vector<double> scores(samples.size());
  std::vector<int> labels(samples.size());
  std::vector<int> predicted(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const ForwardOutput out = forward(model, samples[i].image);
    const double a = out.logits[0];
    const double b = out.logits[1];
    const double peak = std::max(a, b);
    const double p1 =
        std::exp(b - peak) / (std::exp(a - peak) + std::exp(b - peak));
    scores[i] = p1;
    labels[i] = samples[i].label;
    predicted[i] = b > a ? 1 : 0;
  });
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (predicted[i] == labels[i]) ++correct;
  }
  const double accuracy =
      static_cast<double>(correct) / static_cast<double>(samples.size());

  return {accuracy, auc_from_scores(scores, labels)};
}

// Runs the full recipe on the dataset's train/val splits. Checkpoints to
// `checkpoint_path` whenever validation accuracy improves; with zero epochs
// the initial weights are checkpointed as-is.
inline TrainReport train_loop(Model& model, const Dataset& dataset,
                              const TrainConfig& config,
                              const std::string& checkpoint_path) {
  config.validate();
  if (dataset.train.empty() || dataset.val.empty()) {
    throw ConfigError("train_loop: train and val splits must be non-empty");
  }
  TrainReport report;
  report.checkpoint_path = checkpoint_path;

  CheckpointMeta meta;
  meta.seed = config.seed;
  meta.epoch = -1;
  meta.val_accuracy = 0.0;
  save_checkpoint(model, meta, checkpoint_path);  // epochs == 0 fallback

  std::map<std::string, Tensor> velocity;
  for (const auto& [name, tensor] : model.params) {
    velocity.emplace(name, Tensor(tensor.shape()));
  }

  const std::size_t n = dataset.train.size();
  const std::size_t input_size = model.input_size;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config);
    Rng epoch_rng(Rng::mix(config.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    epoch_rng.shuffle(order);

    model.train_mode = true;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n;
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t size =
          std::min<std::size_t>(config.batch_size, n - start);
      Tensor batch({size, 1, input_size, input_size});
      std::vector<int> labels(size);
      for (std::size_t b = 0; b < size; ++b) {
        const Sample augmented =
            augment(dataset.train[order[start + b]], config.augment, epoch_rng);
        detail::place_sample(batch, b, augmented.image);
        labels[b] = augmented.label;
      }
      Trace trace;
      const Tensor logits = forward_batch(model, batch, trace);
      const auto [loss, dlogits] = cross_entropy(logits, labels);
      const BackwardResult grads =
          backward_batch(model, trace, dlogits, GradMode::Standard);
      for (auto& [name, tensor] : model.params) {
        sgd_momentum_step(tensor, grads.param_grads.at(name),
                          velocity.at(name), lr, config.momentum,
                          config.weight_decay);
      }
      loss_sum += loss;
      report.step_losses.push_back(loss);
      ++batches;
    }

    model.train_mode = false;
    const auto [val_accuracy, val_auc] =
        evaluate_classifier(model, dataset.val);
    (void)val_auc;
    report.epochs.push_back(
        {batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0,
         val_accuracy});
    if (val_accuracy > report.best_val_accuracy || report.best_epoch < 0) {
      report.best_val_accuracy = val_accuracy;
      report.best_epoch = epoch;
      meta.epoch = epoch;
      meta.val_accuracy = val_accuracy;
      save_checkpoint(model, meta, checkpoint_path);
    }
  }
  model.train_mode = false;
  return report;
}

inline nlohmann::json train_report_json(const TrainReport& report) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"train_loss", e.train_loss},
                      {"val_accuracy", e.val_accuracy}});
  }
  return nlohmann::json{{"epochs", epochs},
                        {"best_epoch", report.best_epoch},
                        {"best_val_accuracy", report.best_val_accuracy},
                        {"checkpoint", report.checkpoint_path}};
}

}  // namespace salforge
