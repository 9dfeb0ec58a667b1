// SPDX-License-Identifier: Apache-2.0
//
// Drives the search -> information -> merge loop: generates until a stop
// sequence fires, injects retrieved information blocks after every closed
// search block, enforces the search-turn budget, and samples rollout groups.
// The model never produces information content itself; the orchestrator does.

#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "multisearch/policy.hpp"
#include "multisearch/retrieval.hpp"
#include "multisearch/reward.hpp"
#include "multisearch/trajectory.hpp"

namespace multisearch {

class ProtocolViolation : public std::runtime_error {
 public:
  explicit ProtocolViolation(const std::string& message)
      : std::runtime_error("protocol violation: " + message) {}
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GenerationParams {
  double temperature = 1.0;
  double top_p = 0.95;
  std::size_t max_new_tokens = 2048;
};

struct RolloutConfig {
  std::size_t max_turns = 4;          // search-turn budget
  std::size_t n_queries_expected = 3; // advisory; the reward enforces it softly
  std::size_t group_size = 5;
  RetrieverConfig retriever;
  GenerationParams generation;
  std::string prompt_template;  // empty means the built-in default
};

enum class Finish { Answered, Truncated };

struct Rollout {
  Trajectory trajectory;
  Finish finish = Finish::Truncated;
  std::size_t turn_count = 0;  // number of serviced search blocks
};

struct RolloutGroup {
  std::string question;
  GoldAnswer gold;
  std::vector<Rollout> rollouts;
};

inline constexpr std::string_view kDefaultPromptTemplate =
    "You are a helpful assistant. Answer the given question with multi-turn "
    "search engine calling. You can search as many times as necessary.\n"
    "Reason through the available information using <think> and </think>.\n"
    "Issue a search request using <search> q1, q2, ...qn </search> when missing "
    "knowledge. The retrieved documents will be placed in <information> and "
    "</information>.\n"
    "Generate three diverse search queries each time, applying one or more of "
    "these strategies: rephrasing, concept expansion, and question decomposition.\n"
    "Extract and integrate key information from the retrieved documents in "
    "<merge> and </merge> after each search.\n"
    "Return a concise final answer inside <answer> and </answer>, without "
    "detailed illustrations.\n"
    "Question: {question}\n";

inline std::string instantiate_prompt(std::string_view prompt_template,
                                      std::string_view question) {
  return detail::substitute_placeholder(std::string(prompt_template), "question",
                                        question);
}

namespace detail {

inline constexpr std::string_view kSearchClose = "</search>";
inline constexpr std::string_view kAnswerClose = "</answer>";

// Recovers the stop sequence when the endpoint stripped it: the continuation
// then ends inside an open search or answer block, so append that block's
// close tag. Anything else is left for the tail sanitizer.
inline std::string recover_stop(std::string* continuation,
                                const std::vector<std::string>& stops) {
  std::size_t best = std::string::npos;
  std::string close;
  for (const std::string& stop : stops) {
    if (stop.size() < 3 || stop.front() != '<' || stop[1] != '/') continue;
    const std::string open = "<" + stop.substr(2);
    const std::size_t open_pos = continuation->rfind(open);
    if (open_pos == std::string::npos) continue;
    if (continuation->find(stop, open_pos) != std::string::npos) continue;  // already closed
    if (best == std::string::npos || open_pos > best) {
      best = open_pos;
      close = stop;
    }
  }
  if (!close.empty()) *continuation += close;
  return close;
}

// Drops an incomplete tail so the assembled response parses: an unclosed
// block is cut at its open tag; a trailing search block that never received
// information is cut as well. Bounded retry keeps this total.
inline std::string strip_incomplete_tail(std::string text, char delimiter) {
  for (int pass = 0; pass < 16; ++pass) {
    try {
      parse_trajectory(text, delimiter);
      return text;
    } catch (const ParseError& e) {
      if (e.offset() >= text.size()) throw;
      const bool cuttable = e.code() == ParseError::Code::UnclosedTag ||
                            e.code() == ParseError::Code::EmptySearchBlock ||
                            (e.code() == ParseError::Code::MisorderedBlocks &&
                             text.compare(e.offset(), 8, "<search>") == 0);
      if (!cuttable) throw;
      text.resize(e.offset());
    }
  }
  return text;
}

inline std::string last_search_inner(const std::string& text) {
  const std::size_t close = text.rfind(kSearchClose);
  const std::size_t open = text.rfind("<search>", close);
  if (close == std::string::npos || open == std::string::npos) return {};
  const std::size_t begin = open + 8;
  return text.substr(begin, close - begin);
}

}  // namespace detail

/// Runs one episode for `question`. Each serviced search consumes one turn;
/// after max_turns searches one final generation may still answer, otherwise
/// the partial trajectory is returned as truncated.
inline Rollout run_rollout(PolicyBackend& backend, const InvertedIndex& index,
                           std::string_view question, const RolloutConfig& cfg) {
  if (cfg.max_turns < 1) throw ConfigError("max_turns must be >= 1");
  const std::string_view prompt_template =
      cfg.prompt_template.empty() ? kDefaultPromptTemplate : cfg.prompt_template;
  const std::string prompt = instantiate_prompt(prompt_template, question);
  const std::vector<std::string> stops = {std::string(detail::kSearchClose),
                                          std::string(detail::kAnswerClose)};

  std::string response;
  std::size_t turns = 0;
  Finish finish = Finish::Truncated;

  for (std::size_t generation = 0; generation <= cfg.max_turns; ++generation) {
    GenerationRequest request;
    request.prompt = prompt + response;
    request.temperature = cfg.generation.temperature;
    request.top_p = cfg.generation.top_p;
    request.max_new_tokens = cfg.generation.max_new_tokens;
    request.stop_sequences = stops;

    GenerationResult result = backend.generate(request);
    std::string continuation = std::move(result.text);
    if (continuation.find("<information>") != std::string::npos) {
      throw ProtocolViolation("model generated its own information block");
    }
    std::string matched = result.matched_stop.value_or("");
    if (result.stop_reason == StopReason::StopSequence && matched.empty()) {
      matched = detail::recover_stop(&continuation, stops);
    }

    if (matched == detail::kAnswerClose) {
      response += continuation;
      finish = Finish::Answered;
      break;
    }
    if (matched == detail::kSearchClose) {
      if (turns == cfg.max_turns) {
        // Budget spent: drop the unserviceable search block, keep the rest.
        const std::size_t open = continuation.rfind("<search>");
        if (open != std::string::npos) continuation.resize(open);
        response += continuation;
        break;
      }
      response += continuation;
      const std::vector<std::string> queries = split_queries(
          detail::last_search_inner(response), cfg.retriever.delimiter);
      const std::vector<Document> docs =
          multi_query_search(index, queries, cfg.retriever);
      response += "<information>" + render_information(docs) + "</information>";
      ++turns;
      continue;
    }
    // MaxTokens or end of stream without a closed block: stop here.
    response += continuation;
    break;
  }

  response = detail::strip_incomplete_tail(std::move(response),
                                           cfg.retriever.delimiter);
  Trajectory trajectory;
  try {
    trajectory = parse_trajectory(response, cfg.retriever.delimiter);
  } catch (const ParseError& e) {
    throw ProtocolViolation(e.what());
  }
  trajectory.question = std::string(question);
  trajectory.truncated = finish == Finish::Truncated;

  Rollout rollout;
  rollout.trajectory = std::move(trajectory);
  rollout.finish = finish;
  rollout.turn_count = turns;
  return rollout;
}

/// Samples group_size independent rollouts for one question. The factory is
/// called once per rollout index so scripted backends start fresh each time.
inline RolloutGroup run_group(const PolicyFactory& make_policy,
                              const InvertedIndex& index, std::string_view question,
                              GoldAnswer gold, const RolloutConfig& cfg) {
  if (cfg.group_size < 2) {
    throw ConfigError("group_size must be >= 2 for group normalization");
  }
  RolloutGroup group;
  group.question = std::string(question);
  group.gold = std::move(gold);
  group.rollouts.reserve(cfg.group_size);
  for (std::size_t i = 0; i < cfg.group_size; ++i) {
    std::shared_ptr<PolicyBackend> backend = make_policy(i);
    group.rollouts.push_back(run_rollout(*backend, index, question, cfg));
  }
  return group;
}

}  // namespace multisearch
