// SPDX-License-Identifier: Apache-2.0
//
// Text-generation backend contract with two implementations: a deterministic
// scripted policy for tests and a client for chat-completions-style HTTP
// endpoints. All backends honor the stop-sequence postcondition: returned
// text never contains characters past the first matched stop sequence.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "multisearch/http.hpp"

namespace multisearch {

enum class StopReason { StopSequence, MaxTokens, EndOfStream };

struct GenerationRequest {
  std::string prompt;
  double temperature = 1.0;
  double top_p = 0.95;
  std::size_t max_new_tokens = 2048;
  std::vector<std::string> stop_sequences;
};

struct GenerationResult {
  std::string text;
  StopReason stop_reason = StopReason::EndOfStream;
  // Set when stop_reason == StopSequence and the matched sequence is known;
  // in that case `text` ends exactly at (and includes) the sequence. Servers
  // that strip the stop string leave this empty and the caller recovers.
  std::optional<std::string> matched_stop;
  std::optional<std::vector<std::pair<std::string, double>>> token_logprobs;
};

class PolicyBackend {
 public:
  virtual ~PolicyBackend() = default;
  virtual GenerationResult generate(const GenerationRequest& request) = 0;
};

/// Creates a fresh backend per rollout index within a group.
using PolicyFactory = std::function<std::shared_ptr<PolicyBackend>(std::size_t)>;

class ScriptExhausted : public PolicyError {
 public:
  ScriptExhausted() : PolicyError("scripted policy has no responses left") {}
};

namespace detail {

struct StopMatch {
  std::size_t pos;
  std::string sequence;
};

inline std::optional<StopMatch> first_stop(const std::string& text,
                                           const std::vector<std::string>& stops) {
  std::optional<StopMatch> best;
  for (const std::string& stop : stops) {
    if (stop.empty()) continue;
    const std::size_t pos = text.find(stop);
    if (pos == std::string::npos) continue;
    if (!best || pos < best->pos) best = StopMatch{pos, stop};
  }
  return best;
}

}  // namespace detail

/// Deterministic backend that replays canned responses in order. Length is
/// budgeted in characters as a stand-in for tokens. Calls are serialized so
/// script order is preserved under concurrent use of one instance.
class ScriptedPolicy final : public PolicyBackend {
 public:
  explicit ScriptedPolicy(std::vector<std::string> script)
      : script_(std::move(script)) {}

  GenerationResult generate(const GenerationRequest& request) override {
    std::lock_guard<std::mutex> lock(mutex_);
    if (next_ >= script_.size()) throw ScriptExhausted();
    const std::string& full = script_[next_++];

    GenerationResult result;
    auto stop = detail::first_stop(full, request.stop_sequences);
    if (stop && stop->pos + stop->sequence.size() <= request.max_new_tokens) {
      result.text = full.substr(0, stop->pos + stop->sequence.size());
      result.stop_reason = StopReason::StopSequence;
      result.matched_stop = stop->sequence;
      return result;
    }
    if (full.size() > request.max_new_tokens) {
      result.text = full.substr(0, request.max_new_tokens);
      result.stop_reason = StopReason::MaxTokens;
      return result;
    }
    result.text = full;
    result.stop_reason = StopReason::EndOfStream;
    return result;
  }

 private:
  std::vector<std::string> script_;
  std::size_t next_ = 0;
  std::mutex mutex_;
};

struct HttpPolicyConfig {
  HttpEndpointConfig endpoint;
  std::string path = "/v1/chat/completions";
  std::string model;
  bool request_logprobs = false;
  // Asks the server to keep the matched stop string in the returned text
  // (honored by common open-source servers, ignored elsewhere).
  bool include_stop_in_output = true;
};

/// Client for any chat-completions-style endpoint. If the server strips the
/// stop string, stop_reason is still StopSequence but matched_stop is empty.
class HttpPolicy final : public PolicyBackend {
 public:
  explicit HttpPolicy(HttpPolicyConfig config) : config_(std::move(config)) {}

  GenerationResult generate(const GenerationRequest& request) override {
    nlohmann::json body = {
        {"model", config_.model},
        {"messages",
         nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})},
        {"temperature", request.temperature},
        {"top_p", request.top_p},
        {"max_tokens", request.max_new_tokens},
    };
    if (!request.stop_sequences.empty()) body["stop"] = request.stop_sequences;
    if (config_.include_stop_in_output) body["include_stop_str_in_output"] = true;
    if (config_.request_logprobs) body["logprobs"] = true;

    const nlohmann::json response = post_json(config_.endpoint, config_.path, body);

    GenerationResult result;
    std::string finish_reason;
    try {
      const nlohmann::json& choice = response.at("choices").at(0);
      result.text = choice.at("message").value("content", "");
      finish_reason = choice.value("finish_reason", "");
      if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
          choice["logprobs"].contains("content")) {
        std::vector<std::pair<std::string, double>> logprobs;
        for (const auto& item : choice["logprobs"]["content"]) {
          logprobs.emplace_back(item.value("token", ""), item.value("logprob", 0.0));
        }
        result.token_logprobs = std::move(logprobs);
      }
    } catch (const nlohmann::json::exception& ex) {
      throw EndpointError(200, "unexpected response shape: " + std::string(ex.what()));
    }

    if (auto stop = detail::first_stop(result.text, request.stop_sequences)) {
      result.text.resize(stop->pos + stop->sequence.size());
      result.stop_reason = StopReason::StopSequence;
      result.matched_stop = stop->sequence;
    } else if (finish_reason == "stop" && !request.stop_sequences.empty()) {
      result.stop_reason = StopReason::StopSequence;
    } else if (finish_reason == "length") {
      result.stop_reason = StopReason::MaxTokens;
    } else {
      result.stop_reason = StopReason::EndOfStream;
    }
    return result;
  }

 private:
  HttpPolicyConfig config_;
};

/// Factory that hands each rollout a fresh scripted policy; scripts are
/// assigned by rollout index, cycling when fewer scripts than rollouts.
inline PolicyFactory scripted_factory(std::vector<std::vector<std::string>> scripts) {
  return [scripts = std::move(scripts)](std::size_t index) -> std::shared_ptr<PolicyBackend> {
    if (scripts.empty()) return std::make_shared<ScriptedPolicy>(std::vector<std::string>{});
    return std::make_shared<ScriptedPolicy>(scripts[index % scripts.size()]);
  };
}

/// Factory that shares one stateless backend (e.g. an HTTP client) across rollouts.
inline PolicyFactory shared_backend_factory(std::shared_ptr<PolicyBackend> backend) {
  return [backend = std::move(backend)](std::size_t) { return backend; };
}

}  // namespace multisearch
