// SPDX-License-Identifier: Apache-2.0
//
// Advantage computation over grouped reward triples. GDPO normalizes each
// reward component within its group, takes a weighted sum, then normalizes
// across the whole batch; GRPO sums the components per rollout and
// normalizes within the group only. Also the clipped surrogate objective as
// a pure scalar function, per-token KL estimates, and advantage export.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "multisearch/reward.hpp"

namespace multisearch {

class OptimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GroupTooSmall : public OptimError {
 public:
  explicit GroupTooSmall(std::size_t size)
      : OptimError("group normalization needs at least 2 values, got " +
                   std::to_string(size)) {}
};

class EmptyBatch : public OptimError {
 public:
  EmptyBatch() : OptimError("batch contains no groups") {}
};

class LengthMismatch : public OptimError {
 public:
  LengthMismatch() : OptimError("ratios, advantages, and kl terms must share one length >= 1") {}
};

class NonPositiveRatio : public OptimError {
 public:
  explicit NonPositiveRatio(double value)
      : OptimError("probability ratio must be positive, got " + std::to_string(value)) {}
};

enum class KlEstimator { ExpDiff, Diff };

struct GdpoConfig {
  double w_ans = 1.0;
  double w_query = 1.0;
  double w_merge = 1.0;
  double std_epsilon = 1e-6;
  double clip_ratio = 0.2;
  double kl_coefficient = 0.001;
  bool sample_std = false;  // population std by default
  KlEstimator kl_estimator = KlEstimator::ExpDiff;
};

struct GroupRewards {
  std::string question_id;
  std::vector<RewardTriple> rewards;
  std::vector<std::string> trajectories;  // optional, parallel to rewards
};

struct RewardMatrix {
  std::vector<GroupRewards> groups;
};

struct AdvantageRecord {
  std::string question_id;
  std::size_t rollout_index = 0;
  double advantage = 0.0;
  RewardTriple rewards;
  std::string trajectory;
};

namespace detail {

// Shared normalization core: constant input maps to exact zeros (a constant
// reward carries no ranking signal); input that is already standardized
// within 1e-13 is returned unchanged so that renormalization is an exact
// identity; otherwise (v - mean) / max(std, eps).
inline std::vector<double> normalize_values(std::span<const double> values, double eps,
                                            bool sample_std) {
  const std::size_t n = values.size();
  const bool constant =
      std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; });
  if (constant) return std::vector<double>(n, 0.0);

  double sum = 0.0;
  double scale = 1.0;
  for (double v : values) {
    sum += v;
    scale = std::max(scale, std::fabs(v));
  }
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  const double denom = sample_std ? static_cast<double>(n - 1) : static_cast<double>(n);
  const double std_dev = std::sqrt(sq / denom);

  if (std::fabs(mean) <= 1e-13 * scale && std::fabs(std_dev - 1.0) <= 1e-13) {
    return std::vector<double>(values.begin(), values.end());
  }
  const double divisor = std::max(std_dev, eps);
  std::vector<double> out;
  out.reserve(n);
  for (double v : values) out.push_back((v - mean) / divisor);
  return out;
}

inline void validate_batch(const RewardMatrix& batch) {
  if (batch.groups.empty()) throw EmptyBatch();
  const std::size_t group_size = batch.groups.front().rewards.size();
  for (const GroupRewards& group : batch.groups) {
    if (group.rewards.size() < 2) throw GroupTooSmall(group.rewards.size());
    if (group.rewards.size() != group_size) {
      throw OptimError("all groups in one batch must share the same size");
    }
  }
}

inline std::vector<AdvantageRecord> make_records(const RewardMatrix& batch,
                                                 const std::vector<double>& advantages) {
  std::vector<AdvantageRecord> records;
  records.reserve(advantages.size());
  std::size_t flat = 0;
  for (const GroupRewards& group : batch.groups) {
    for (std::size_t i = 0; i < group.rewards.size(); ++i, ++flat) {
      AdvantageRecord record;
      record.question_id = group.question_id;
      record.rollout_index = i;
      record.advantage = advantages[flat];
      record.rewards = group.rewards[i];
      if (i < group.trajectories.size()) record.trajectory = group.trajectories[i];
      records.push_back(std::move(record));
    }
  }
  return records;
}

}  // namespace detail

/// (v - mean) / max(population std, eps); constant input yields all zeros.
inline std::vector<double> group_normalize(std::span<const double> values,
                                           double std_epsilon, bool sample_std = false) {
  if (values.size() < 2) throw GroupTooSmall(values.size());
  return detail::normalize_values(values, std_epsilon, sample_std);
}

/// Decoupled normalization: per-component group normalization, weighted sum,
/// then one normalization across every rollout in the batch.
inline std::vector<AdvantageRecord> gdpo_advantages(const RewardMatrix& batch,
                                                    const GdpoConfig& cfg = {}) {
  detail::validate_batch(batch);
  if (cfg.w_ans <= 0.0 && cfg.w_query <= 0.0 && cfg.w_merge <= 0.0) {
    throw OptimError("at least one reward weight must be positive");
  }

  std::vector<double> weighted;
  for (const GroupRewards& group : batch.groups) {
    const std::size_t g = group.rewards.size();
    std::vector<double> ans(g);
    std::vector<double> query(g);
    std::vector<double> merge(g);
    for (std::size_t i = 0; i < g; ++i) {
      ans[i] = group.rewards[i].ans;
      query[i] = group.rewards[i].query;
      merge[i] = group.rewards[i].merge;
    }
    const auto ans_norm = detail::normalize_values(ans, cfg.std_epsilon, cfg.sample_std);
    const auto query_norm =
        detail::normalize_values(query, cfg.std_epsilon, cfg.sample_std);
    const auto merge_norm =
        detail::normalize_values(merge, cfg.std_epsilon, cfg.sample_std);
    for (std::size_t i = 0; i < g; ++i) {
      weighted.push_back(cfg.w_ans * ans_norm[i] + cfg.w_query * query_norm[i] +
                         cfg.w_merge * merge_norm[i]);
    }
  }
  const auto advantages =
      detail::normalize_values(weighted, cfg.std_epsilon, cfg.sample_std);
  return detail::make_records(batch, advantages);
}

/// GRPO baseline: sum the reward components per rollout and normalize within
/// the group; no batch-level renormalization.
inline std::vector<AdvantageRecord> grpo_advantages(const RewardMatrix& batch,
                                                    const GdpoConfig& cfg = {}) {
  detail::validate_batch(batch);
  std::vector<double> advantages;
  for (const GroupRewards& group : batch.groups) {
    std::vector<double> sums;
    sums.reserve(group.rewards.size());
    for (const RewardTriple& r : group.rewards) sums.push_back(r.ans + r.query + r.merge);
    const auto normalized =
        detail::normalize_values(sums, cfg.std_epsilon, cfg.sample_std);
    advantages.insert(advantages.end(), normalized.begin(), normalized.end());
  }
  return detail::make_records(batch, advantages);
}

/// Per-token KL estimate: with d = logp_ref - logp_policy, exp(d) - d - 1.
/// Non-negative, zero iff the log-probabilities agree.
inline double kl_estimate(double logp_policy, double logp_ref) {
  const double d = logp_ref - logp_policy;
  return std::expm1(d) - d;
}

inline std::vector<double> kl_estimates(std::span<const double> logp_policy,
                                        std::span<const double> logp_ref,
                                        KlEstimator estimator = KlEstimator::ExpDiff) {
  if (logp_policy.size() != logp_ref.size()) throw LengthMismatch();
  std::vector<double> out;
  out.reserve(logp_policy.size());
  for (std::size_t i = 0; i < logp_policy.size(); ++i) {
    out.push_back(estimator == KlEstimator::ExpDiff
                      ? kl_estimate(logp_policy[i], logp_ref[i])
                      : logp_policy[i] - logp_ref[i]);
  }
  return out;
}

/// Token-averaged clipped surrogate for one rollout:
/// mean_t min(ratio*A, clip(ratio, 1-eps, 1+eps)*A) - beta * mean_t kl.
inline double surrogate_objective(std::span<const double> ratios,
                                  std::span<const double> advantages,
                                  std::span<const double> kl_terms,
                                  const GdpoConfig& cfg = {}) {
  const std::size_t n = ratios.size();
  if (n == 0 || advantages.size() != n || kl_terms.size() != n) throw LengthMismatch();
  double policy_sum = 0.0;
  double kl_sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    if (!(ratios[t] > 0.0)) throw NonPositiveRatio(ratios[t]);
    const double clipped =
        std::clamp(ratios[t], 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
    policy_sum += std::min(ratios[t] * advantages[t], clipped * advantages[t]);
    kl_sum += kl_terms[t];
  }
  return policy_sum / static_cast<double>(n) -
         cfg.kl_coefficient * (kl_sum / static_cast<double>(n));
}

/// Line-delimited export with a stable field order; doubles are written with
/// enough digits to round-trip exactly.
inline void export_advantages(std::span<const AdvantageRecord> records,
                              const std::filesystem::path& path) {
  for (const AdvantageRecord& record : records) {
    if (!std::isfinite(record.advantage)) {
      throw OptimError("non-finite advantage for question " + record.question_id);
    }
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write advantage records: " + path.string());
  for (const AdvantageRecord& record : records) {
    nlohmann::ordered_json line = {
        {"question_id", record.question_id},
        {"rollout_index", record.rollout_index},
        {"advantage", record.advantage},
        {"reward_ans", record.rewards.ans},
        {"reward_query", record.rewards.query},
        {"reward_merge", record.rewards.merge},
        {"trajectory", record.trajectory},
    };
    out << line.dump() << '\n';
  }
}

inline std::vector<AdvantageRecord> import_advantages(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read advantage records: " + path.string());
  std::vector<AdvantageRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json parsed = nlohmann::json::parse(line);
    AdvantageRecord record;
    record.question_id = parsed.at("question_id").get<std::string>();
    record.rollout_index = parsed.at("rollout_index").get<std::size_t>();
    record.advantage = parsed.at("advantage").get<double>();
    record.rewards.ans = parsed.at("reward_ans").get<double>();
    record.rewards.query = parsed.at("reward_query").get<double>();
    record.rewards.merge = parsed.at("reward_merge").get<double>();
    record.trajectory = parsed.value("trajectory", "");
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace multisearch
