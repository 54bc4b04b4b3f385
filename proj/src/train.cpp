#include <charconv>
#include <cmath>
#include <fstream>

#include "iman/experiment.hpp"

namespace iman {

void TrainConfig::validate() const {
  if (batch_size == 0 || epochs == 0) throw ParamError("batch_size and epochs must be positive");
  if (learning_rate <= 0.0) throw ParamError("learning_rate must be positive");
  if (weight_decay < 0.0) throw ParamError("weight_decay must be nonnegative");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    throw ParamError("warmup_fraction must lie in [0,1)");
}

double lr_at(std::size_t step, std::size_t total_steps, double warmup_fraction, double base_lr) {
  if (total_steps == 0) throw ParamError("lr schedule needs at least one step");
  const std::size_t warmup_steps = static_cast<std::size_t>(
      std::llround(warmup_fraction * static_cast<double>(total_steps)));
  if (step >= total_steps) return 0.0;
  if (warmup_steps > 0 && step <= warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  return base_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup_steps);
}

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, double weight_decay,
             double beta1, double beta2, double eps)
    : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  slots_.reserve(params.size());
  for (auto& [name, tensor] : params) {
    Slot slot;
    slot.param = tensor;
    slot.m.assign(tensor.numel(), 0.0);
    slot.v.assign(tensor.numel(), 0.0);
    slots_.push_back(std::move(slot));
  }
}

void AdamW::zero_grad() {
  for (auto& slot : slots_) slot.param.zero_grad();
}

void AdamW::step(double lr, double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& slot : slots_) {
    auto& values = slot.param.mutable_data();
    const bool has_grad = slot.param.has_grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has_grad ? slot.param.grad()[i] * grad_scale : 0.0;
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
      const double m_hat = slot.m[i] / bc1;
      const double v_hat = slot.v[i] / bc2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
      values[i] -= lr * weight_decay_ * values[i];  // decoupled decay
    }
  }
}

TrainResult train(ImanModel& model, const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.train_idx.empty()) throw ParamError("train: empty training split");

  const std::size_t n_train = dataset.train_idx.size();
  const std::size_t steps_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;

  AdamW optimizer(model.parameters(), config.weight_decay);
  Rng shuffle_rng = Rng(config.seed).split("shuffle");

  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = dataset.train_idx;
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      optimizer.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const PatientSample& sample = dataset.samples[order[b]];
        const Tensor logit = model.forward(sample, PresencePattern::of_sample(sample));
        const Tensor loss = bce_loss(logit, sample.label);
        const double value = loss.item();
        if (!std::isfinite(value))
          throw TrainError("non-finite loss at step " + std::to_string(step));
        loss_sum += value;
        loss.backward();
      }
      optimizer.step(lr_at(step, total_steps, config.warmup_fraction, config.learning_rate),
                     1.0 / static_cast<double>(end - start));
      ++step;
    }
    if (!model.parameters_finite())
      throw TrainError("non-finite parameter after step " + std::to_string(step));

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(n_train);
    stats.val_auc = dataset.val_idx.empty() ? std::nullopt : evaluate(model, dataset, Split::Val).auc;
    result.history.push_back(stats);
  }
  return result;
}

namespace {

std::string fmt_metric(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void save_history_csv(const std::string& path, const TrainResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,train_loss,val_auc\n";
  for (const auto& row : result.history) {
    out << row.epoch << "," << fmt_metric(row.train_loss) << ",";
    out << (row.val_auc ? fmt_metric(*row.val_auc) : "undefined");
    out << "\n";
  }
}

}  // namespace iman
