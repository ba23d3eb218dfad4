#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "nnpass/dataset.hpp"
#include "nnpass/model.hpp"
#include "nnpass/passport_gen.hpp"

namespace nnpass {

enum class LrSchedule { Constant, Step, Cosine };

inline LrSchedule schedule_from_name(const std::string& s) {
  if (s == "constant") return LrSchedule::Constant;
  if (s == "step") return LrSchedule::Step;
  if (s == "cosine") return LrSchedule::Cosine;
  throw ConfigError("unknown learning-rate schedule '" + s + "'");
}

struct OptimizerConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LrSchedule schedule = LrSchedule::Cosine;
  int step_size = 10;
  double step_gamma = 0.1;
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  OptimizerConfig opt;
  uint64_t seed = 1;
  bool telemetry = true;
};

inline double schedule_lr(const OptimizerConfig& o, int epoch, int total_epochs) {
  switch (o.schedule) {
    case LrSchedule::Constant: return o.lr;
    case LrSchedule::Step: return o.lr * std::pow(o.step_gamma, epoch / o.step_size);
    case LrSchedule::Cosine:
      return o.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * epoch / std::max(1, total_epochs)));
  }
  return o.lr;
}

struct TelemetryRow {
  int epoch = 0;
  int layer = 0;
  double update_magnitude = 0.0;
  double gamma_mean = 0.0;
  double beta_mean = 0.0;
  double test_acc = 0.0;
};

// Holds the rows plus the previous weight snapshot the update magnitudes are
// measured against.
struct TelemetryLog {
  std::vector<TelemetryRow> rows;
  std::vector<std::vector<float>> prev_conv_weights;

  void snapshot(const Model& m) {
    prev_conv_weights.clear();
    for (const auto& c : m.convs) prev_conv_weights.push_back(c.w.data());
  }
};

inline double evaluate_accuracy(Model& m, const Dataset& ds, const PassportSet* passport) {
  if (ds.n == 0) throw DataError("cannot evaluate on an empty dataset");
  NoGradGuard ng;
  const int batch = 100;
  int correct = 0;
  for (int start = 0; start < ds.n; start += batch) {
    const int b = std::min(batch, ds.n - start);
    std::vector<float> x(static_cast<size_t>(b) * ds.image_numel());
    std::copy(ds.image(start), ds.image(start) + x.size(), x.begin());
    Tensor xt({b, ds.channels, ds.height, ds.width}, std::move(x));
    ForwardOptions opt;
    opt.training = false;
    opt.passport = passport;
    Tensor logits = forward(m, xt, opt);
    const auto pred = argmax_rows(logits.data(), b, m.num_classes);
    for (int i = 0; i < b; ++i)
      if (pred[static_cast<size_t>(i)] == ds.labels[static_cast<size_t>(start + i)]) ++correct;
  }
  return 100.0 * correct / ds.n;
}

inline double dataset_loss(Model& m, const Dataset& ds, const PassportSet* passport) {
  if (ds.n == 0) throw DataError("cannot evaluate on an empty dataset");
  NoGradGuard ng;
  const int batch = 100;
  double total = 0.0;
  for (int start = 0; start < ds.n; start += batch) {
    const int b = std::min(batch, ds.n - start);
    std::vector<float> x(static_cast<size_t>(b) * ds.image_numel());
    std::copy(ds.image(start), ds.image(start) + x.size(), x.begin());
    Tensor xt({b, ds.channels, ds.height, ds.width}, std::move(x));
    std::vector<int> y(ds.labels.begin() + start, ds.labels.begin() + start + b);
    ForwardOptions opt;
    opt.training = false;
    opt.passport = passport;
    total += static_cast<double>(cross_entropy(forward(m, xt, opt), y).item()) * b;
  }
  return total / ds.n;
}

inline void record_telemetry(Model& m, int epoch, const PassportSet* passport, double test_acc,
                             TelemetryLog& log) {
  NoGradGuard ng;
  if (log.prev_conv_weights.empty()) log.snapshot(m);
  for (size_t i = 0; i < m.affines.size(); ++i) {
    const auto& a = m.affines[i];
    const auto& w = m.convs[static_cast<size_t>(a.conv_index)].w.data();
    const auto& prev = log.prev_conv_weights[static_cast<size_t>(a.conv_index)];
    double mag = 0.0;
    for (size_t j = 0; j < w.size(); ++j) mag += std::abs(static_cast<double>(w[j]) - prev[j]);
    mag /= static_cast<double>(w.size());
    HiddenParams h = derive_hidden_params(m, a, passport);
    double gm = 0.0, bm = 0.0;
    for (float v : h.gamma.data()) gm += v;
    for (float v : h.beta.data()) bm += v;
    TelemetryRow row;
    row.epoch = epoch;
    row.layer = a.conv_index;
    row.update_magnitude = mag;
    row.gamma_mean = gm / h.gamma.numel();
    row.beta_mean = bm / h.beta.numel();
    row.test_acc = test_acc;
    log.rows.push_back(row);
  }
  log.snapshot(m);
}

struct TrainResult {
  double final_accuracy = 0.0;  // valid-passport test accuracy (A_p), or plain accuracy for BN models
  TelemetryLog telemetry;
};

// SGD with momentum over an explicit parameter list; weight decay applies to
// conv/dense kernels only. Used by both regular training and the
// reverse-engineering attack (which passes the free affine params instead).
inline void run_sgd(Model& m, const Dataset& train_set, const PassportSet* passport,
                    const std::vector<std::pair<std::string, Tensor>>& params,
                    const TrainConfig& cfg, const Dataset* test_set, TelemetryLog* log,
                    const std::string& stream_tag) {
  if (train_set.n == 0) throw DataError("cannot train on an empty dataset");
  std::vector<std::vector<float>> velocity;
  for (const auto& [name, t] : params) velocity.emplace_back(t.numel(), 0.0f);
  std::vector<int> order(static_cast<size_t>(train_set.n));
  for (int i = 0; i < train_set.n; ++i) order[static_cast<size_t>(i)] = i;
  if (log) log->snapshot(m);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float lr = static_cast<float>(schedule_lr(cfg.opt, epoch, cfg.epochs));
    RngStream shuffle_rng(cfg.seed, stream_tag + "-shuffle-" + std::to_string(epoch));
    shuffle_rng.shuffle(order);
    for (int start = 0; start < train_set.n; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, train_set.n - start);
      std::vector<float> x(static_cast<size_t>(b) * train_set.image_numel());
      std::vector<int> y(static_cast<size_t>(b));
      for (int i = 0; i < b; ++i) {
        const int src = order[static_cast<size_t>(start + i)];
        std::copy(train_set.image(src), train_set.image(src) + train_set.image_numel(),
                  x.begin() + static_cast<size_t>(i) * train_set.image_numel());
        y[static_cast<size_t>(i)] = train_set.labels[static_cast<size_t>(src)];
      }
      Tensor xt({b, train_set.channels, train_set.height, train_set.width}, std::move(x));
      ForwardOptions opt;
      opt.training = true;
      opt.passport = passport;
      Tensor loss = cross_entropy(forward(m, xt, opt), y);
      const double loss_now = static_cast<double>(loss.item());
      // Normalization layers keep exploded weights producing finite losses,
      // so runaway magnitude counts as divergence too.
      if (!std::isfinite(loss_now) || loss_now > 1e6)
        throw NumericsError("training diverged at epoch " + std::to_string(epoch));
      for (const auto& [name, t] : params) {
        Tensor h = t;  // handles share storage
        h.zero_grad();
      }
      backward(loss);
      for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor t = params[pi].second;
        const bool decay = params[pi].first.size() > 2 &&
                           params[pi].first.compare(params[pi].first.size() - 2, 2, ".w") == 0;
        const float wd = decay ? static_cast<float>(cfg.opt.weight_decay) : 0.0f;
        const float mu = static_cast<float>(cfg.opt.momentum);
        auto& v = velocity[pi];
        auto& w = t.data();
        auto& g = t.grad();
        for (size_t j = 0; j < w.size(); ++j) {
          v[j] = mu * v[j] + g[j] + wd * w[j];
          w[j] -= lr * v[j];
        }
      }
    }
    if (log && test_set) {
      const double acc = evaluate_accuracy(m, *test_set, passport);
      record_telemetry(m, epoch, passport, acc, *log);
    }
  }
}

inline TrainResult train(Model& m, const SplitDataset& data, const TrainConfig& cfg,
                         const PassportSet* passport) {
  if (m.passported()) {
    if (!passport) throw PassportError("passported model cannot train without its passport");
    validate_passport_binding(m, *passport);
  }
  ParamPartition part = partition_parameters(m);
  TrainResult result;
  run_sgd(m, data.train, passport, part.trainable, cfg, &data.test,
          cfg.telemetry ? &result.telemetry : nullptr, "train");
  result.final_accuracy = evaluate_accuracy(m, data.test, passport);
  return result;
}

}  // namespace nnpass
