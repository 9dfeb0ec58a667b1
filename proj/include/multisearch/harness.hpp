// SPDX-License-Identifier: Apache-2.0
//
// Dataset loading, the key-value run configuration, end-to-end evaluation
// producing EM/F1/CEM tables, and the batch rollout -> reward -> advantage
// export pipeline with its run manifest.

#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <ctime>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "multisearch/optim.hpp"
#include "multisearch/policy.hpp"
#include "multisearch/retrieval.hpp"
#include "multisearch/reward.hpp"
#include "multisearch/rollout.hpp"

namespace multisearch {

struct DatasetRecord {
  std::string id;
  std::string question;
  std::vector<std::string> golden_answers;
};

class DatasetError : public std::runtime_error {
 public:
  enum class Code { MalformedRecord, EmptyDataset };

  DatasetError(Code code, const std::string& message, std::size_t line = 0)
      : std::runtime_error(message), code_(code), line_(line) {}

  Code code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }

 private:
  Code code_;
  std::size_t line_;
};

/// Line-delimited records with fields id, question, golden_answers (non-empty
/// list of strings). Ids must be unique.
inline std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DatasetError(DatasetError::Code::MalformedRecord,
                       "cannot open dataset file: " + path.string());
  }
  std::vector<DatasetRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json parsed = nlohmann::json::parse(line, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object() || !parsed.contains("id") ||
        !parsed.contains("question") || !parsed.contains("golden_answers") ||
        !parsed["golden_answers"].is_array() || parsed["golden_answers"].empty()) {
      throw DatasetError(DatasetError::Code::MalformedRecord,
                         "line " + std::to_string(line_no) +
                             ": record needs id, question, non-empty golden_answers",
                         line_no);
    }
    DatasetRecord record;
    record.id = parsed["id"].is_string() ? parsed["id"].get<std::string>()
                                         : parsed["id"].dump();
    record.question = parsed["question"].get<std::string>();
    for (const auto& answer : parsed["golden_answers"]) {
      record.golden_answers.push_back(answer.get<std::string>());
    }
    if (!seen.insert(record.id).second) {
      throw DatasetError(DatasetError::Code::MalformedRecord,
                         "line " + std::to_string(line_no) + ": duplicate id \"" +
                             record.id + "\"",
                         line_no);
    }
    records.push_back(std::move(record));
  }
  if (records.empty()) {
    throw DatasetError(DatasetError::Code::EmptyDataset,
                       "dataset is empty: " + path.string());
  }
  return records;
}

enum class Algo { Gdpo, Grpo };

/// One run configuration; the key-value file mirrors these names.
struct HarnessConfig {
  RolloutConfig rollout;
  GdpoConfig gdpo;
  RewardConfig reward;
  Algo algo = Algo::Gdpo;
  std::size_t parallelism = 1;
  double eval_temperature = 0.0;
  std::uint64_t seed = 0;
};

/// Snapshot of the effective configuration under the config-file key names.
inline nlohmann::ordered_json snapshot_config(const HarnessConfig& cfg) {
  return nlohmann::ordered_json{
      {"group_size", cfg.rollout.group_size},
      {"kl_coefficient", cfg.gdpo.kl_coefficient},
      {"clip_ratio", cfg.gdpo.clip_ratio},
      {"max_search_turns", cfg.rollout.max_turns},
      {"max_response_length", cfg.rollout.generation.max_new_tokens},
      {"top_k", cfg.rollout.retriever.top_k},
      {"n_queries", cfg.rollout.n_queries_expected},
      {"weights", {cfg.gdpo.w_ans, cfg.gdpo.w_query, cfg.gdpo.w_merge}},
      {"temperature", cfg.rollout.generation.temperature},
      {"top_p", cfg.rollout.generation.top_p},
      {"std_epsilon", cfg.gdpo.std_epsilon},
      {"algo", cfg.algo == Algo::Gdpo ? "gdpo" : "grpo"},
      {"parallelism", cfg.parallelism},
      {"eval_temperature", cfg.eval_temperature},
      {"seed", cfg.seed},
  };
}

namespace detail {

inline std::vector<double> parse_weights(const std::string& value) {
  std::vector<double> weights;
  std::stringstream in(value);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (trim(part).empty()) continue;
    weights.push_back(std::stod(std::string(trim(part))));
  }
  return weights;
}

}  // namespace detail

/// Applies one `key = value` pair; unknown keys raise ConfigError.
inline void apply_config_entry(HarnessConfig& cfg, const std::string& key,
                               const std::string& value) {
  try {
    if (key == "group_size") {
      cfg.rollout.group_size = std::stoul(value);
    } else if (key == "kl_coefficient") {
      cfg.gdpo.kl_coefficient = std::stod(value);
    } else if (key == "clip_ratio") {
      cfg.gdpo.clip_ratio = std::stod(value);
    } else if (key == "max_search_turns") {
      cfg.rollout.max_turns = std::stoul(value);
    } else if (key == "max_response_length") {
      cfg.rollout.generation.max_new_tokens = std::stoul(value);
    } else if (key == "top_k") {
      cfg.rollout.retriever.top_k = std::stoul(value);
    } else if (key == "n_queries") {
      cfg.rollout.n_queries_expected = std::stoul(value);
    } else if (key == "weights") {
      const std::vector<double> weights = detail::parse_weights(value);
      if (weights.size() != 3) {
        throw ConfigError("weights needs three comma-separated values");
      }
      cfg.gdpo.w_ans = weights[0];
      cfg.gdpo.w_query = weights[1];
      cfg.gdpo.w_merge = weights[2];
    } else if (key == "temperature") {
      cfg.rollout.generation.temperature = std::stod(value);
    } else if (key == "top_p") {
      cfg.rollout.generation.top_p = std::stod(value);
    } else if (key == "std_epsilon") {
      cfg.gdpo.std_epsilon = std::stod(value);
    } else if (key == "bm25_k1") {
      cfg.rollout.retriever.bm25_k1 = std::stod(value);
    } else if (key == "bm25_b") {
      cfg.rollout.retriever.bm25_b = std::stod(value);
    } else if (key == "delimiter") {
      if (value == "newline") {
        cfg.rollout.retriever.delimiter = '\n';
      } else if (value == "comma") {
        cfg.rollout.retriever.delimiter = ',';
      } else {
        throw ConfigError("delimiter must be newline or comma");
      }
    } else if (key == "gating") {
      if (value == "conditional") {
        cfg.reward.gating = GatingMode::Conditional;
      } else if (value == "unconditional") {
        cfg.reward.gating = GatingMode::Unconditional;
      } else {
        throw ConfigError("gating must be conditional or unconditional");
      }
    } else if (key == "reward_granularity") {
      if (value == "rollout") {
        cfg.reward.granularity = RewardGranularity::Rollout;
      } else if (value == "turn") {
        cfg.reward.granularity = RewardGranularity::Turn;
      } else {
        throw ConfigError("reward_granularity must be rollout or turn");
      }
    } else if (key == "answer_reward") {
      if (value == "f1") {
        cfg.reward.answer_metric = AnswerMetric::F1;
      } else if (value == "em") {
        cfg.reward.answer_metric = AnswerMetric::ExactMatch;
      } else {
        throw ConfigError("answer_reward must be f1 or em");
      }
    } else if (key == "algo") {
      if (value == "gdpo") {
        cfg.algo = Algo::Gdpo;
      } else if (value == "grpo") {
        cfg.algo = Algo::Grpo;
      } else {
        throw ConfigError("algo must be gdpo or grpo");
      }
    } else if (key == "parallelism") {
      cfg.parallelism = std::stoul(value);
    } else if (key == "eval_temperature") {
      cfg.eval_temperature = std::stod(value);
    } else if (key == "seed") {
      cfg.seed = std::stoull(value);
    } else {
      throw ConfigError("unknown configuration key: " + key);
    }
  } catch (const std::invalid_argument&) {
    throw ConfigError("invalid value for " + key + ": " + value);
  } catch (const std::out_of_range&) {
    throw ConfigError("value out of range for " + key + ": " + value);
  }
}

/// Plain `key = value` file, one entry per line, '#' starts a comment.
inline HarnessConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  HarnessConfig cfg;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string_view trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    const std::size_t eq = trimmed.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("expected key = value, got: " + std::string(trimmed));
    }
    const std::string key{detail::trim(trimmed.substr(0, eq))};
    const std::string value{detail::trim(trimmed.substr(eq + 1))};
    apply_config_entry(cfg, key, value);
  }
  return cfg;
}

struct EvalRow {
  std::string id;
  double em = 0.0;
  double f1 = 0.0;
  double cem = 0.0;
  std::size_t turns = 0;
  std::string answer;
  std::string error;  // non-empty when the question failed and scored 0
};

struct EvalResult {
  MetricReport report;
  double mean_search_turns = 0.0;
  std::vector<EvalRow> rows;
};

struct RunManifest {
  std::string dataset_name;
  std::string index_id;
  std::string backend_name;
  std::string algo;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  nlohmann::ordered_json config;
  MetricReport metrics;
  double mean_search_turns = 0.0;
  RewardTriple mean_rewards;
  std::size_t questions = 0;

  nlohmann::ordered_json to_json() const {
    return nlohmann::ordered_json{
        {"dataset", dataset_name},
        {"index", index_id},
        {"backend", backend_name},
        {"algo", algo},
        {"seed", seed},
        {"started_at", started_at},
        {"finished_at", finished_at},
        {"config", config},
        {"metrics",
         {{"em", metrics.em},
          {"f1", metrics.f1},
          {"cem", metrics.cem},
          {"n", metrics.n},
          {"mean_search_turns", mean_search_turns}}},
        {"mean_rewards",
         {{"ans", mean_rewards.ans},
          {"query", mean_rewards.query},
          {"merge", mean_rewards.merge}}},
        {"questions", questions},
    };
  }
};

namespace detail {

inline std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Runs fn(i) for i in [0, n) on up to `parallelism` threads. Results must be
// written into pre-sized slots so aggregation stays order-independent.
inline void parallel_for(std::size_t n, std::size_t parallelism,
                         const std::function<void(std::size_t)>& fn) {
  if (parallelism <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  const std::size_t count = std::min(parallelism, n);
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (std::size_t w = 0; w < count; ++w) {
    workers.emplace_back([&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& worker : workers) worker.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

/// Creates the per-question backend; the rollout index is 0 for evaluation.
using PolicyProvider =
    std::function<std::shared_ptr<PolicyBackend>(std::size_t question_index,
                                                 std::size_t rollout_index)>;

/// One rollout per question at eval temperature; per-question failures score
/// zero with an error note and the run continues.
inline EvalResult evaluate(const PolicyProvider& provider, const InvertedIndex& index,
                           const std::vector<DatasetRecord>& dataset,
                           const HarnessConfig& cfg) {
  RolloutConfig eval_cfg = cfg.rollout;
  eval_cfg.generation.temperature = cfg.eval_temperature;

  EvalResult result;
  result.rows.resize(dataset.size());
  detail::parallel_for(dataset.size(), cfg.parallelism, [&](std::size_t qi) {
    const DatasetRecord& record = dataset[qi];
    EvalRow row;
    row.id = record.id;
    try {
      std::shared_ptr<PolicyBackend> backend = provider(qi, 0);
      const Rollout rollout = run_rollout(*backend, index, record.question, eval_cfg);
      const GoldAnswer gold{record.golden_answers};
      const Step* answer = rollout.trajectory.answer();
      row.answer = answer ? answer->text : "";
      row.em = exact_match(row.answer, gold) ? 1.0 : 0.0;
      row.f1 = answer_f1(row.answer, gold);
      row.cem = cover_exact_match(row.answer, gold) ? 1.0 : 0.0;
      row.turns = rollout.turn_count;
    } catch (const std::exception& ex) {
      row.error = ex.what();
    }
    result.rows[qi] = std::move(row);
  });

  double em = 0.0;
  double f1 = 0.0;
  double cem = 0.0;
  double turns = 0.0;
  for (const EvalRow& row : result.rows) {
    em += row.em;
    f1 += row.f1;
    cem += row.cem;
    turns += static_cast<double>(row.turns);
  }
  const double n = static_cast<double>(result.rows.size());
  result.report = MetricReport{em / n, f1 / n, cem / n, result.rows.size()};
  result.mean_search_turns = turns / n;
  return result;
}

struct BatchResult {
  std::vector<AdvantageRecord> records;
  RunManifest manifest;
};

/// For every question: sample a group, score each rollout with the gated
/// reward triple, then compute advantages over the whole batch and export.
inline BatchResult rollout_batch(const PolicyProvider& provider,
                                 const InvertedIndex& index,
                                 const std::vector<DatasetRecord>& dataset,
                                 const HarnessConfig& cfg,
                                 const std::filesystem::path& out_path) {
  RunManifest manifest;
  manifest.started_at = detail::iso8601_now();
  manifest.config = snapshot_config(cfg);
  manifest.algo = cfg.algo == Algo::Gdpo ? "gdpo" : "grpo";
  manifest.seed = cfg.seed;
  manifest.questions = dataset.size();

  RewardMatrix matrix;
  matrix.groups.resize(dataset.size());
  detail::parallel_for(dataset.size(), cfg.parallelism, [&](std::size_t qi) {
    const DatasetRecord& record = dataset[qi];
    const GoldAnswer gold{record.golden_answers};
    const RolloutGroup group = run_group(
        [&](std::size_t ri) { return provider(qi, ri); }, index, record.question,
        gold, cfg.rollout);
    GroupRewards rewards;
    rewards.question_id = record.id;
    for (const Rollout& rollout : group.rollouts) {
      rewards.rewards.push_back(gated_rewards(rollout.trajectory, gold, cfg.reward));
      rewards.trajectories.push_back(render_trajectory(rollout.trajectory));
    }
    matrix.groups[qi] = std::move(rewards);
  });

  BatchResult result;
  result.records = cfg.algo == Algo::Gdpo ? gdpo_advantages(matrix, cfg.gdpo)
                                          : grpo_advantages(matrix, cfg.gdpo);
  if (!out_path.empty()) export_advantages(result.records, out_path);

  double ans = 0.0;
  double query = 0.0;
  double merge = 0.0;
  std::size_t total = 0;
  for (const GroupRewards& group : matrix.groups) {
    for (const RewardTriple& triple : group.rewards) {
      ans += triple.ans;
      query += triple.query;
      merge += triple.merge;
      ++total;
    }
  }
  if (total > 0) {
    manifest.mean_rewards.ans = ans / static_cast<double>(total);
    manifest.mean_rewards.query = query / static_cast<double>(total);
    manifest.mean_rewards.merge = merge / static_cast<double>(total);
  }
  manifest.finished_at = detail::iso8601_now();
  result.manifest = std::move(manifest);
  return result;
}

}  // namespace multisearch
