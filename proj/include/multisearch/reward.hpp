// SPDX-License-Identifier: Apache-2.0
//
// The three-part reward system: word-level F1 answer reward, multi-query
// reward (average queries per step > 2), merging reward (gold answer
// contained in a merge block), and conditional gating that zeroes the
// process rewards when the answer earns nothing. Also the EM/F1/CEM
// evaluation metrics and the LLM-judged SNR score.

#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "multisearch/policy.hpp"
#include "multisearch/trajectory.hpp"

namespace multisearch {

struct GoldAnswer {
  std::vector<std::string> alternatives;  // scoring takes the max over these
};

/// Gated reward values for one rollout. When `gated` is true the triple
/// satisfies: ans == 0 implies query == 0 and merge == 0. The unconditional
/// reward variant returns gated == false and may violate that implication.
struct RewardTriple {
  double ans = 0.0;
  double query = 0.0;
  double merge = 0.0;
  bool gated = true;

  friend bool operator==(const RewardTriple&, const RewardTriple&) = default;
};

struct MetricReport {
  double em = 0.0;
  double f1 = 0.0;
  double cem = 0.0;
  std::size_t n = 0;
};

enum class GatingMode { Conditional, Unconditional };
enum class RewardGranularity { Rollout, Turn };
enum class AnswerMetric { F1, ExactMatch };

struct RewardConfig {
  GatingMode gating = GatingMode::Conditional;
  RewardGranularity granularity = RewardGranularity::Rollout;
  AnswerMetric answer_metric = AnswerMetric::F1;
};

inline constexpr double kProcessReward = 0.1;

/// Lowercase, strip punctuation, drop the articles a/an/the as whole words,
/// collapse whitespace.
inline std::string normalize_answer(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(c)));
  }
  std::istringstream in(cleaned);
  std::string word;
  std::string out;
  while (in >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

namespace detail {

inline std::vector<std::string> answer_words(std::string_view text) {
  std::istringstream in(normalize_answer(text));
  std::vector<std::string> words;
  std::string word;
  while (in >> word) words.push_back(word);
  return words;
}

inline double f1_overlap(const std::vector<std::string>& pred,
                         const std::vector<std::string>& truth) {
  if (pred.empty() && truth.empty()) return 1.0;
  if (pred.empty() || truth.empty()) return 0.0;
  std::map<std::string, std::size_t> counts;
  for (const std::string& w : truth) ++counts[w];
  std::size_t intersection = 0;
  for (const std::string& w : pred) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++intersection;
    }
  }
  return 2.0 * static_cast<double>(intersection) /
         static_cast<double>(pred.size() + truth.size());
}

}  // namespace detail

/// Word-level F1 on normalized word multisets, max over gold alternatives.
inline double answer_f1(std::string_view pred, const GoldAnswer& gold) {
  const std::vector<std::string> pred_words = detail::answer_words(pred);
  double best = 0.0;
  for (const std::string& alt : gold.alternatives) {
    best = std::max(best, detail::f1_overlap(pred_words, detail::answer_words(alt)));
  }
  return best;
}

/// 1 iff the normalized prediction equals some normalized gold alternative.
inline bool exact_match(std::string_view pred, const GoldAnswer& gold) {
  const std::string p = normalize_answer(pred);
  for (const std::string& alt : gold.alternatives) {
    if (p == normalize_answer(alt)) return true;
  }
  return false;
}

/// 1 iff the normalized prediction contains some normalized gold alternative.
inline bool cover_exact_match(std::string_view pred, const GoldAnswer& gold) {
  const std::string p = normalize_answer(pred);
  for (const std::string& alt : gold.alternatives) {
    if (p.find(normalize_answer(alt)) != std::string::npos) return true;
  }
  return false;
}

/// 0.1 iff the average number of queries per search step exceeds 2;
/// trajectories with no search steps earn 0.
inline double multi_query_reward(const Trajectory& t) {
  std::size_t searches = 0;
  std::size_t queries = 0;
  for (const Step& step : t.steps) {
    if (step.kind != BlockKind::Search) continue;
    ++searches;
    queries += step.queries.size();
  }
  if (searches == 0) return 0.0;
  const double n_q = static_cast<double>(queries) / static_cast<double>(searches);
  return n_q > 2.0 ? kProcessReward : 0.0;
}

namespace detail {

inline bool contains_gold(std::string_view text, const GoldAnswer& gold) {
  const std::string normalized = normalize_answer(text);
  for (const std::string& alt : gold.alternatives) {
    if (normalized.find(normalize_answer(alt)) != std::string::npos) return true;
  }
  return false;
}

}  // namespace detail

/// 0.1 iff some merge block contains a gold alternative (on normalized text).
inline double merge_reward(const Trajectory& t, const GoldAnswer& gold) {
  for (const Step& step : t.steps) {
    if (step.kind == BlockKind::Merge && detail::contains_gold(step.text, gold)) {
      return kProcessReward;
    }
  }
  return 0.0;
}

namespace detail {

// Turn-level variant: per-turn query/merge rewards averaged over turns.
// A turn spans one search step up to the next search step.
inline std::pair<double, double> turn_level_rewards(const Trajectory& t,
                                                    const GoldAnswer& gold) {
  std::vector<bool> many_queries;
  std::vector<bool> merge_hit;
  for (const Step& step : t.steps) {
    if (step.kind == BlockKind::Search) {
      many_queries.push_back(step.queries.size() > 2);
      merge_hit.push_back(false);
    } else if (step.kind == BlockKind::Merge && !merge_hit.empty()) {
      if (contains_gold(step.text, gold)) merge_hit.back() = true;
    }
  }
  if (many_queries.empty()) return {0.0, 0.0};
  double query_sum = 0.0;
  double merge_sum = 0.0;
  for (std::size_t i = 0; i < many_queries.size(); ++i) {
    if (many_queries[i]) query_sum += kProcessReward;
    if (merge_hit[i]) merge_sum += kProcessReward;
  }
  const double turns = static_cast<double>(many_queries.size());
  return {query_sum / turns, merge_sum / turns};
}

}  // namespace detail

/// Composes the answer, multi-query, and merging rewards. Under conditional
/// gating the process rewards are kept only when the answer reward is
/// positive; otherwise the whole triple is zero.
inline RewardTriple gated_rewards(const Trajectory& t, const GoldAnswer& gold,
                                  const RewardConfig& cfg = {}) {
  double r_ans = 0.0;
  if (const Step* answer = t.answer()) {
    r_ans = cfg.answer_metric == AnswerMetric::ExactMatch
                ? (exact_match(answer->text, gold) ? 1.0 : 0.0)
                : answer_f1(answer->text, gold);
  }

  double r_query = 0.0;
  double r_merge = 0.0;
  if (cfg.granularity == RewardGranularity::Turn) {
    std::tie(r_query, r_merge) = detail::turn_level_rewards(t, gold);
  } else {
    r_query = multi_query_reward(t);
    r_merge = merge_reward(t, gold);
  }

  if (cfg.gating == GatingMode::Unconditional) {
    return RewardTriple{r_ans, r_query, r_merge, /*gated=*/false};
  }
  if (r_ans > 0.0) return RewardTriple{r_ans, r_query, r_merge, /*gated=*/true};
  return RewardTriple{0.0, 0.0, 0.0, /*gated=*/true};
}

class JudgeUnparseable : public PolicyError {
 public:
  explicit JudgeUnparseable(const std::string& reply)
      : PolicyError("judge reply contains no number in [0,1]: " + reply) {}
};

inline constexpr std::string_view kSnrPromptTemplate =
    "You are an evaluator of information quality. Your task is to assess the "
    "Signal-to-Noise Ratio of a given piece of content, based on a question and "
    "supporting documents.\n"
    "Question: {question}\n"
    "Supporting Documents: {documents}\n"
    "Content to be evaluated: {content}\n"
    "\"Signal\" represents information that is directly relevant to answering the "
    "question. \"Noise\" represents information that is irrelevant to the question, "
    "redundant, contradictory to the supporting documents, or hallucinated. Read the "
    "question and the supporting documents carefully, analyze the content, and "
    "determine which parts are \"signal\" (useful, relevant, supported) and which "
    "parts are \"noise\" (useless, irrelevant, unsupported, or repetitive).\n"
    "Provide a SNR between 0 and 1.\n";

namespace detail {

inline std::string substitute_placeholder(std::string text, std::string_view key,
                                          std::string_view value) {
  const std::string token = "{" + std::string(key) + "}";
  std::size_t pos = 0;
  while ((pos = text.find(token, pos)) != std::string::npos) {
    text.replace(pos, token.size(), value);
    pos += value.size();
  }
  return text;
}

}  // namespace detail

/// Returns the first real number in [0,1] found in the reply text.
inline double parse_snr_reply(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size()) {
    const unsigned char c = static_cast<unsigned char>(reply[i]);
    if (!std::isdigit(c) && c != '.') {
      ++i;
      continue;
    }
    std::size_t end = i;
    bool seen_dot = false;
    bool seen_digit = false;
    while (end < reply.size()) {
      const unsigned char e = static_cast<unsigned char>(reply[end]);
      if (std::isdigit(e)) {
        seen_digit = true;
      } else if (e == '.' && !seen_dot) {
        seen_dot = true;
      } else {
        break;
      }
      ++end;
    }
    if (seen_digit) {
      const double value = std::stod(std::string(reply.substr(i, end - i)));
      if (value >= 0.0 && value <= 1.0) return value;
    }
    i = end > i ? end : i + 1;
  }
  throw JudgeUnparseable(std::string(reply));
}

/// Asks the judge backend for a signal-to-noise score of `content` given the
/// question and its supporting documents.
inline double snr_judge(std::string_view question, std::string_view documents,
                        std::string_view content, PolicyBackend& judge,
                        std::string_view prompt_template = kSnrPromptTemplate) {
  std::string prompt = detail::substitute_placeholder(
      std::string(prompt_template), "question", question);
  prompt = detail::substitute_placeholder(std::move(prompt), "documents", documents);
  prompt = detail::substitute_placeholder(std::move(prompt), "content", content);

  GenerationRequest request;
  request.prompt = std::move(prompt);
  request.temperature = 0.0;
  request.top_p = 1.0;
  request.max_new_tokens = 256;
  const GenerationResult result = judge.generate(request);
  return parse_snr_reply(result.text);
}

}  // namespace multisearch
