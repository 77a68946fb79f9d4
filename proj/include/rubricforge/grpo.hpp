#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rubricforge/core.hpp"
#include "rubricforge/errors.hpp"

namespace rforge {

// Pure numerical kernel for the group-relative clipped objective:
// group-normalized advantages, sequence-level importance ratios, clipped
// surrogate terms, and a per-token KL penalty estimate. Evaluation only;
// no parameter updates happen here.

inline constexpr double kLogRatioClamp = 30.0;

struct AdvantageVector {
  std::vector<double> values;
};

// A_i = (R_i - mean(R)) / (popstd(R) + eps_a). Population std divides by G.
inline AdvantageVector normalize_advantages(std::span<const double> rewards, double eps_a) {
  if (rewards.size() < 2)
    throw ContractError("advantage normalization needs >= 2 rewards, got " +
                        std::to_string(rewards.size()));
  if (!(eps_a > 0.0)) throw ContractError("advantage epsilon must be positive");

  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std_dev = std::sqrt(var / n);

  AdvantageVector out;
  out.values.reserve(rewards.size());
  for (double r : rewards) out.values.push_back((r - mean) / (std_dev + eps_a));
  return out;
}

struct ImportanceRatio {
  double value = 1.0;
  bool clamped = false;  // log-ratio hit the +-30 nat guard
};

// rho = exp(sum(current) - sum(behavior)), computed in log space.
inline ImportanceRatio importance_ratio(std::span<const double> logprobs_current,
                                        std::span<const double> logprobs_behavior) {
  if (logprobs_current.empty())
    throw ContractError("importance ratio needs at least one token");
  if (logprobs_current.size() != logprobs_behavior.size())
    throw ContractError("importance ratio logprob lists differ in length");

  double log_ratio = 0.0;
  for (std::size_t t = 0; t < logprobs_current.size(); ++t)
    log_ratio += logprobs_current[t] - logprobs_behavior[t];

  ImportanceRatio out;
  if (log_ratio > kLogRatioClamp || log_ratio < -kLogRatioClamp) {
    out.clamped = true;
    log_ratio = std::clamp(log_ratio, -kLogRatioClamp, kLogRatioClamp);
  }
  out.value = std::exp(log_ratio);
  return out;
}

// min(rho * A, clamp(rho, 1-eps, 1+eps) * A)
inline double clipped_term(double rho, double advantage, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw ContractError("clip epsilon must lie in (0,1)");
  return std::min(rho * advantage, std::clamp(rho, 1.0 - eps, 1.0 + eps) * advantage);
}

// Token-mean of k(t) = exp(ref_t - cur_t) - (ref_t - cur_t) - 1, which is
// >= 0 for any inputs and 0 iff the lists coincide.
inline double kl_penalty(std::span<const double> logprobs_current,
                         std::span<const double> logprobs_reference) {
  if (logprobs_current.empty()) throw ContractError("kl penalty needs at least one token");
  if (logprobs_current.size() != logprobs_reference.size())
    throw ContractError("kl penalty logprob lists differ in length");

  double total = 0.0;
  for (std::size_t t = 0; t < logprobs_current.size(); ++t) {
    const double u = logprobs_reference[t] - logprobs_current[t];
    total += std::exp(u) - u - 1.0;
  }
  return total / static_cast<double>(logprobs_current.size());
}

struct ResponseBreakdown {
  double rho = 1.0;
  bool rho_clamped = false;
  double advantage = 0.0;
  double clipped = 0.0;
  double kl = 0.0;
};

struct ObjectiveBreakdown {
  double surrogate_mean = 0.0;
  double kl_mean = 0.0;
  double objective = 0.0;  // surrogate_mean - beta * kl_mean
  std::vector<ResponseBreakdown> per_response;
};

inline ObjectiveBreakdown grpo_objective(const RolloutGroup& group, const GrpoConfig& config) {
  config.validate();
  group.validate();
  if (group.responses.size() != config.group_size)
    throw ContractError("group has " + std::to_string(group.responses.size()) +
                        " responses, config expects " + std::to_string(config.group_size));

  std::vector<double> rewards;
  rewards.reserve(group.responses.size());
  for (const auto& r : group.responses) rewards.push_back(r.reward);
  AdvantageVector advantages = normalize_advantages(rewards, config.advantage_epsilon);

  ObjectiveBreakdown out;
  out.per_response.reserve(group.responses.size());
  for (std::size_t i = 0; i < group.responses.size(); ++i) {
    const auto& r = group.responses[i];
    ResponseBreakdown rb;
    ImportanceRatio ratio = importance_ratio(r.logprobs_current, r.logprobs_behavior);
    rb.rho = ratio.value;
    rb.rho_clamped = ratio.clamped;
    rb.advantage = advantages.values[i];
    rb.clipped = clipped_term(rb.rho, rb.advantage, config.clip_epsilon);
    rb.kl = kl_penalty(r.logprobs_current, r.logprobs_reference);
    out.surrogate_mean += rb.clipped;
    out.kl_mean += rb.kl;
    out.per_response.push_back(rb);
  }
  const double g = static_cast<double>(group.responses.size());
  out.surrogate_mean /= g;
  out.kl_mean /= g;
  out.objective = out.surrogate_mean - config.kl_beta * out.kl_mean;
  return out;
}

// Analytic gradient of grpo_objective w.r.t. one response's current-policy
// token logprobs, treating rewards (hence advantages) as constants. Valid
// away from clip boundaries and the log-ratio clamp; at a boundary the
// objective is not differentiable and this picks the unclipped branch.
inline std::vector<double> grpo_objective_grad_current(const RolloutGroup& group,
                                                       const GrpoConfig& config,
                                                       std::size_t response_index) {
  config.validate();
  group.validate();
  if (response_index >= group.responses.size())
    throw ContractError("response index out of range");

  std::vector<double> rewards;
  rewards.reserve(group.responses.size());
  for (const auto& r : group.responses) rewards.push_back(r.reward);
  const double advantage =
      normalize_advantages(rewards, config.advantage_epsilon).values[response_index];

  const auto& r = group.responses[response_index];
  ImportanceRatio ratio = importance_ratio(r.logprobs_current, r.logprobs_behavior);

  // d(surrogate_i)/d(cur_t) = rho * A when the unclipped branch is active
  // (every token contributes identically through the sequence-level ratio);
  // 0 when the clip binds or the clamp saturates. min() keeps the unclipped
  // branch whenever it is the smaller one, so the clip only binds for
  // rho above the window with A > 0 or below it with A < 0.
  const bool clip_binds = (ratio.value > 1.0 + config.clip_epsilon && advantage > 0.0) ||
                          (ratio.value < 1.0 - config.clip_epsilon && advantage < 0.0);
  const double surrogate_grad =
      (!ratio.clamped && !clip_binds) ? ratio.value * advantage : 0.0;

  const double g = static_cast<double>(group.responses.size());
  const double t_count = static_cast<double>(r.logprobs_current.size());
  std::vector<double> grad(r.logprobs_current.size(), surrogate_grad / g);
  for (std::size_t t = 0; t < grad.size(); ++t) {
    const double u = r.logprobs_reference[t] - r.logprobs_current[t];
    grad[t] -= config.kl_beta / g * (1.0 - std::exp(u)) / t_count;
  }
  return grad;
}

}  // namespace rforge
