#include "dimshrink/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

namespace dimshrink {

Adam::Adam(nn::NamedTensors params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& [name, t] : params_) {
    state_.m[name].assign(static_cast<std::size_t>(t.numel()), 0.0);
    state_.v[name].assign(static_cast<std::size_t>(t.numel()), 0.0);
  }
}

void Adam::step(double lr, double grad_scale) {
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (auto& [name, p] : params_) {
    auto g = p.grad();
    if (g.empty()) continue;
    auto& m = state_.m[name];
    auto& v = state_.v[name];
    auto w = p.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * grad_scale;
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * gi;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * gi * gi;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
    }
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

void Adam::load_state(const AdamState& state) {
  for (const auto& [name, t] : params_) {
    const auto n = static_cast<std::size_t>(t.numel());
    auto m = state.m.find(name), v = state.v.find(name);
    if (m == state.m.end() || v == state.v.end() || m->second.size() != n || v->second.size() != n) {
      throw CheckpointError("optimizer state for '" + name + "' is missing or mis-sized");
    }
  }
  state_ = state;
}

PlateauScheduler::PlateauScheduler(double factor, int64_t patience, int64_t max_reductions)
    : factor_(factor), patience_(patience), max_reductions_(max_reductions) {}

PlateauScheduler::Decision PlateauScheduler::observe(double epoch_loss, double& lr) {
  Decision d;
  if (!has_best_ || epoch_loss < best_) {
    has_best_ = true;
    best_ = epoch_loss;
    bad_epochs_ = 0;
    return d;
  }
  if (++bad_epochs_ < patience_) return d;
  bad_epochs_ = 0;
  if (reductions_ >= max_reductions_) {
    d.stop = true;
    return d;
  }
  lr *= factor_;
  ++reductions_;
  d.reduced = true;
  return d;
}

void PlateauScheduler::restore(const TrainingState& s) {
  has_best_ = s.has_best;
  best_ = s.best_loss;
  bad_epochs_ = s.bad_epochs;
  reductions_ = s.reductions;
}

void PlateauScheduler::store(TrainingState& s) const {
  s.has_best = has_best_;
  s.best_loss = best_;
  s.bad_epochs = bad_epochs_;
  s.reductions = reductions_;
}

std::string epoch_log_header() { return "epoch,lr,loss_total,loss_ce,dice_wt,dice_tc,dice_et"; }

std::string format_epoch_log(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(e.epoch),
                e.lr, e.loss_total, e.loss_ce, e.dice_wt, e.dice_tc, e.dice_et);
  return buf;
}

namespace {

void check_case(const TrainConfig& cfg, const TrainingCase& c) {
  if (c.volume.dims != cfg.crop) {
    throw std::invalid_argument("case " + c.id + " has dims " + to_string(c.volume.dims) +
                                ", config crop is " + to_string(cfg.crop));
  }
  if (c.truth.dims != cfg.crop) {
    throw std::invalid_argument("case " + c.id + " labels have dims " + to_string(c.truth.dims) +
                                ", config crop is " + to_string(cfg.crop));
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg, std::span<const TrainingCase> dataset,
                  const TrainOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto& c : dataset) check_case(cfg, c);

  SegmentationNetwork net(cfg.network(), cfg.seed);
  if (!options.resume && !cfg.backbone_weights.empty()) {
    load_pretrained(net.backbone(), std::filesystem::path(cfg.backbone_weights));
  }
  nn::NamedTensors trainable;
  for (auto& [name, t] : net.parameters()) {
    const bool frozen = cfg.freeze_backbone && name.rfind("backbone.", 0) == 0;
    t.set_requires_grad(!frozen);
    if (!frozen) trainable.emplace_back(name, t);
  }
  Adam adam(trainable);
  PlateauScheduler scheduler(cfg.plateau_factor, cfg.plateau_patience, cfg.max_reductions);

  TrainingState state;
  state.lr = cfg.lr;
  if (options.resume) {
    restore_weights(net, options.resume->weights);
    adam.load_state(options.resume->adam);
    state = options.resume->state;
    scheduler.restore(state);
    spdlog::info("resuming after epoch {} at lr {}", state.epoch, state.lr);
  }

  std::ofstream log_file;
  if (options.log_csv) {
    const bool fresh = !std::filesystem::exists(*options.log_csv) || !options.resume;
    log_file.open(*options.log_csv, fresh ? std::ios::trunc : std::ios::app);
    if (!log_file) throw std::runtime_error("cannot write training log " + options.log_csv->string());
    if (fresh) log_file << epoch_log_header() << '\n';
  }

  auto snapshot = [&]() {
    Checkpoint c;
    c.config = cfg;
    c.state = state;
    scheduler.store(c.state);
    c.weights = snapshot_weights(net);
    c.adam = adam.state();
    return c;
  };

  TrainResult result;
  bool has_best = false;
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
  std::vector<std::size_t> order(dataset.size());
  bool step_limit = false;

  while (state.epoch < cfg.max_epochs && !step_limit) {
    const int64_t epoch = state.epoch + 1;
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(cfg.seed * 1000003ULL + static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog log;
    log.epoch = epoch;
    log.lr = state.lr;
    int64_t pending = 0, seen = 0;
    for (std::size_t idx : order) {
      const TrainingCase& c = dataset[idx];
      LossValue loss;
      try {
        loss = combined_loss(net.forward(SegmentationNetwork::to_tensor(c.volume)), c.truth, cfg.eps);
      } catch (const nn::NonFiniteError& e) {
        throw NonFiniteLossError("case " + c.id + " in epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(loss.total)) {
        throw NonFiniteLossError("non-finite loss " + std::to_string(loss.total) + " on case " + c.id +
                                 " in epoch " + std::to_string(epoch));
      }
      loss.graph.backward();
      log.loss_total += loss.total;
      log.loss_ce += loss.cross_entropy;
      log.dice_wt += loss.soft_dice_per_channel[0];
      log.dice_tc += loss.soft_dice_per_channel[1];
      log.dice_et += loss.soft_dice_per_channel[2];
      ++seen;
      if (++pending == cfg.batch_size) {
        adam.step(state.lr, inv_batch);
        ++state.steps;
        pending = 0;
        if (cfg.max_steps > 0 && state.steps >= cfg.max_steps) {
          step_limit = true;
          break;
        }
      }
    }
    if (pending > 0) {
      adam.step(state.lr, 1.0 / static_cast<double>(pending));
      ++state.steps;
      step_limit = cfg.max_steps > 0 && state.steps >= cfg.max_steps;
    }
    const double n = static_cast<double>(seen);
    log.loss_total /= n;
    log.loss_ce /= n;
    log.dice_wt /= n;
    log.dice_tc /= n;
    log.dice_et /= n;
    state.epoch = epoch;

    TrainingState before;
    scheduler.store(before);
    const bool improved = !before.has_best || log.loss_total < before.best_loss;
    const auto decision = scheduler.observe(log.loss_total, state.lr);
    if (improved) {
      result.best = snapshot();
      has_best = true;
    }
    result.log.push_back(log);
    if (log_file) log_file << format_epoch_log(log) << '\n' << std::flush;
    if (options.on_epoch) options.on_epoch(log);
    spdlog::debug("epoch {} loss {:.6f} lr {}", epoch, log.loss_total, log.lr);
    if (decision.reduced) spdlog::info("epoch {}: loss plateaued, lr -> {}", epoch, state.lr);
    if (decision.stop) {
      spdlog::info("epoch {}: plateau after {} reductions, stopping", epoch, cfg.max_reductions);
      result.early_stopped = true;
      break;
    }
  }
  result.last = snapshot();
  if (!has_best) result.best = result.last;
  return result;
}

}  // namespace dimshrink
