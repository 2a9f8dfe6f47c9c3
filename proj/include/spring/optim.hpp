// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace spring {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay. Each parameter tensor owns a slot of
/// moment buffers; call begin_step() once per optimizer step, then update()
/// for every slot.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  void begin_step() { ++step_; }
  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }

  void update(std::size_t slot, std::span<T> param, std::span<const T> grad, double lr) {
    if (slot >= first_.size()) {
      first_.resize(slot + 1);
      second_.resize(slot + 1);
    }
    auto& m = first_[slot];
    auto& v = second_[slot];
    if (m.size() != param.size()) {
      m.assign(param.size(), T(0));
      v.assign(param.size(), T(0));
    }
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    for (std::size_t i = 0; i < param.size(); ++i) {
      const T g = grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      const double step = mhat / (std::sqrt(vhat) + config_.eps) +
                          config_.weight_decay * static_cast<double>(param[i]);
      param[i] -= static_cast<T>(lr * step);
    }
  }

 private:
  AdamWConfig config_;
  std::int64_t step_ = 0;
  std::vector<std::vector<T>> first_;
  std::vector<std::vector<T>> second_;
};

/// Warmup steps for a run: ceil(ratio * total).
inline std::int64_t warmup_steps(std::int64_t total, double warmup_ratio) {
  return static_cast<std::int64_t>(std::ceil(warmup_ratio * static_cast<double>(total)));
}

/// Linear warmup from 0 to `peak` over the first ceil(ratio * total) steps,
/// then linear decay to 0 at `total`.
inline double linear_schedule(std::int64_t step, std::int64_t total, double warmup_ratio,
                              double peak) {
  const std::int64_t warmup = warmup_steps(total, warmup_ratio);
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total <= warmup) return peak;
  const double remaining = static_cast<double>(total - step) / static_cast<double>(total - warmup);
  return peak * std::max(0.0, remaining);
}

}  // namespace spring
