// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include "epsa/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace epsa {
namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) fail("train: lr must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("train: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("train: weight_decay must be non-negative");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    fail("train: label_smoothing must lie in [0, 1)");
  if (!(lr_decay_factor > 0.0)) fail("train: lr_decay_factor must be positive");
  if (lr_decay_every == 0) fail("train: lr_decay_every must be positive");
  if (batch_size == 0) fail("train: batch_size must be positive");
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  const auto drops = static_cast<double>(epoch / cfg.lr_decay_every);
  return cfg.lr * std::pow(cfg.lr_decay_factor, -drops);
}

double smoothed_target_entropy(std::size_t classes, double alpha) {
  const double k = static_cast<double>(classes);
  const double off = alpha / k;
  const double on = 1.0 - alpha + off;
  double h = -on * std::log(on);
  if (off > 0.0) h -= (k - 1.0) * off * std::log(off);
  return h;
}

LossResult label_smoothed_ce(const Tensor& logits, std::span<const std::size_t> labels,
                             double alpha) {
  const Shape& s = logits.shape();
  if (s.h != 1 || s.w != 1) fail("label_smoothed_ce: logits must be (N, K, 1, 1)");
  if (labels.size() != s.n) fail("label_smoothed_ce: label count does not match batch");
  if (!(alpha >= 0.0 && alpha < 1.0)) fail("label_smoothed_ce: alpha must lie in [0, 1)");
  const std::size_t k = s.c;
  const double off = alpha / static_cast<double>(k);
  const double on = 1.0 - alpha + off;
  LossResult r;
  r.grad = Tensor(s);
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    if (labels[n] >= k)
      fail("label_smoothed_ce: label " + std::to_string(labels[n]) + " outside [0, " +
           std::to_string(k) + ")");
    const double* z = logits.ptr() + n * k;
    const double peak = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(z[c] - peak);
    const double log_denom = std::log(denom);
    std::size_t argmax = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double log_p = z[c] - peak - log_denom;
      const double target = c == labels[n] ? on : off;
      total -= target * log_p;
      r.grad[n * k + c] = (std::exp(log_p) - target) / static_cast<double>(s.n);
      if (z[c] > z[argmax]) argmax = c;
    }
    if (argmax == labels[n]) ++r.correct;
  }
  r.loss = total / static_cast<double>(s.n);
  return r;
}

void sgd_step(std::span<const ParamRef> params, std::span<const Tensor> grads,
              SgdState& state, const TrainConfig& cfg) {
  if (params.size() != grads.size())
    fail("sgd_step: " + std::to_string(params.size()) + " params but " +
         std::to_string(grads.size()) + " gradients");
  if (state.velocity.empty())
    for (const ParamRef& p : params) state.velocity.emplace_back(p.value->shape());
  if (state.velocity.size() != params.size()) fail("sgd_step: optimizer state mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i].value;
    const Tensor& g = grads[i];
    Tensor& v = state.velocity[i];
    if (g.shape() != w.shape() || v.shape() != w.shape())
      fail("sgd_step: shape mismatch for " + params[i].name);
    const double wd = params[i].decay ? cfg.weight_decay : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = cfg.momentum * v[j] + g[j] + wd * w[j];
      w[j] -= cfg.lr * v[j];
    }
  }
}

Tensor ToyDataset::gather(std::span<const std::size_t> indices) const {
  const Shape& s = images.shape();
  Tensor out({indices.size(), s.c, s.h, s.w});
  const std::size_t len = s.c * s.h * s.w;
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(images.ptr() + indices[i] * len, len, out.ptr() + i * len);
  return out;
}

std::vector<std::size_t> ToyDataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels[i]);
  return out;
}

ToyDataset make_toy_dataset(std::uint64_t seed, std::size_t samples, std::size_t classes,
                            std::size_t size) {
  if (classes == 0 || samples < classes)
    fail("make_toy_dataset: need at least one sample per class");
  if (size == 0) fail("make_toy_dataset: zero image size");
  Rng rng(seed);
  std::vector<std::array<double, 3>> colours(classes);
  std::vector<double> angles(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    for (double& v : colours[c]) v = rng.uniform(-1.0, 1.0);
    angles[c] = std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
  }

  ToyDataset d;
  d.num_classes = classes;
  d.labels.resize(samples);
  for (std::size_t i = 0; i < samples; ++i) d.labels[i] = i % classes;
  for (std::size_t i = samples; i-- > 1;) std::swap(d.labels[i], d.labels[rng.below(i + 1)]);

  d.images = Tensor({samples, 3, size, size});
  const double extent = static_cast<double>(size);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t c = d.labels[i];
    const double freq = static_cast<double>(c + 1);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dx = std::cos(angles[c]), dy = std::sin(angles[c]);
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double u = (static_cast<double>(x) * dx + static_cast<double>(y) * dy) / extent;
          const double wave = std::sin(2.0 * std::numbers::pi * freq * u + phase);
          d.images(i, ch, y, x) =
              0.5 * colours[c][ch] + colours[c][ch] * wave + 0.3 * rng.normal();
        }
  }
  return d;
}

bool TrainResult::no_learning() const {
  if (history.size() < 2) return true;
  return std::all_of(history.begin(), history.end(),
                     [&](const HistoryEntry& e) { return e.loss == history.front().loss; });
}

double TrainResult::plain_loss_reduction() const {
  const double start = history.front().plain_loss;
  return start > 0.0 ? 1.0 - history.back().plain_loss / start : 0.0;
}

HistoryEntry evaluate(Model& model, const ToyDataset& data, double alpha) {
  GradPair out = model.forward(data.images, Mode::kBatchStats);
  const LossResult r = label_smoothed_ce(out.output, data.labels, alpha);
  HistoryEntry e;
  e.loss = r.loss;
  e.plain_loss = alpha == 0.0 ? r.loss : label_smoothed_ce(out.output, data.labels, 0.0).loss;
  e.accuracy = static_cast<double>(r.correct) / static_cast<double>(data.size());
  return e;
}

TrainResult train(Model& model, const ToyDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (model.spec().num_classes != data.num_classes)
    fail("train: model has " + std::to_string(model.spec().num_classes) +
         " outputs but the dataset has " + std::to_string(data.num_classes) + " classes");
  TrainResult result;
  HistoryEntry start = evaluate(model, data, cfg.label_smoothing);
  start.lr = lr_at(0, cfg);
  result.history.push_back(start);

  std::vector<ParamRef> params = model.parameters();
  SgdState state;
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    TrainConfig step_cfg = cfg;
    step_cfg.lr = lr_at(epoch, cfg);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.seed, epoch));
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);

    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      if (cfg.max_steps != 0 && result.steps >= cfg.max_steps) break;
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      GradPair out = model.forward(data.gather(batch), Mode::kTrain);
      const LossResult loss =
          label_smoothed_ce(out.output, data.gather_labels(batch), cfg.label_smoothing);
      ++result.steps;
      if (!std::isfinite(loss.loss)) {
        result.diverged = true;
        result.history.push_back({epoch + 1, result.steps, step_cfg.lr, loss.loss, loss.loss, 0.0});
        return result;
      }
      const Gradients grads = out.backward(loss.grad);
      sgd_step(params, grads.params, state, step_cfg);
    }

    HistoryEntry e = evaluate(model, data, cfg.label_smoothing);
    e.epoch = epoch + 1;
    e.step = result.steps;
    e.lr = step_cfg.lr;
    result.history.push_back(e);
    if (!std::isfinite(e.loss)) {
      result.diverged = true;
      return result;
    }
    if (cfg.max_steps != 0 && result.steps >= cfg.max_steps) break;
  }
  return result;
}

void save_parameters(Model& model, const std::string& path) {
  std::vector<Tensor> tensors;
  for (const ParamRef& p : model.parameters()) tensors.push_back(*p.value);
  save_t4(path, tensors);
}

void load_parameters(Model& model, const std::string& path) {
  std::vector<Tensor> tensors = load_t4(path);
  std::vector<ParamRef> params = model.parameters();
  if (tensors.size() != params.size())
    throw std::runtime_error(path + ": holds " + std::to_string(tensors.size()) +
                             " tensors, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (tensors[i].shape() != params[i].value->shape())
      throw std::runtime_error(path + ": shape mismatch for " + params[i].name);
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = std::move(tensors[i]);
}

std::string history_csv(const TrainResult& result) {
  std::ostringstream os;
  os << "epoch,step,lr,loss,accuracy\n";
  for (const HistoryEntry& e : result.history)
    os << e.epoch << ',' << e.step << ',' << exact(e.lr) << ',' << exact(e.loss) << ','
       << exact(e.accuracy) << '\n';
  return os.str();
}

std::string summary_json(const TrainResult& result, const TrainConfig& cfg,
                         const std::string& model_name, int indent) {
  nlohmann::json j{
      {"model", model_name},
      {"steps", result.steps},
      {"epochs_completed", result.history.empty() ? 0 : result.history.back().epoch},
      {"initial_loss", result.initial_loss()},
      {"final_loss", result.final_loss()},
      {"final_accuracy", result.final_accuracy()},
      {"loss_reduction", result.initial_loss() > 0.0
                             ? 1.0 - result.final_loss() / result.initial_loss()
                             : 0.0},
      {"initial_plain_loss", result.history.front().plain_loss},
      {"final_plain_loss", result.history.back().plain_loss},
      {"plain_loss_reduction", result.plain_loss_reduction()},
      {"diverged", result.diverged},
      {"no_learning", result.no_learning()},
      {"config",
       {{"lr", cfg.lr},
        {"momentum", cfg.momentum},
        {"weight_decay", cfg.weight_decay},
        {"label_smoothing", cfg.label_smoothing},
        {"lr_decay_factor", cfg.lr_decay_factor},
        {"lr_decay_every", cfg.lr_decay_every},
        {"batch_size", cfg.batch_size},
        {"epochs", cfg.epochs},
        {"max_steps", cfg.max_steps},
        {"seed", cfg.seed}}}};
  if (!std::isfinite(result.final_loss())) j["final_loss"] = fixed(result.final_loss(), 6);
  return j.dump(indent);
}

}  // namespace epsa
