// SPDX-License-Identifier: Apache-2.0
//
// Minimal JSON-over-HTTP POST helper with retry/backoff, shared by the
// chat-completions policy backend and the embedding client.

#pragma once

#include <chrono>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace multisearch {

class PolicyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EndpointUnreachable : public PolicyError {
 public:
  explicit EndpointUnreachable(const std::string& detail)
      : PolicyError("endpoint unreachable: " + detail) {}
};

class EndpointError : public PolicyError {
 public:
  EndpointError(int status, std::string body)
      : PolicyError("endpoint returned status " + std::to_string(status)),
        status_(status),
        body_(std::move(body)) {}

  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

class TimeoutError : public PolicyError {
 public:
  explicit TimeoutError(double seconds)
      : PolicyError("request timed out after " + std::to_string(seconds) + "s"),
        seconds_(seconds) {}

  double seconds() const noexcept { return seconds_; }

 private:
  double seconds_;
};

struct HttpEndpointConfig {
  std::string base_url;                       // e.g. "http://localhost:8000"
  std::string api_key_env = "OPENAI_API_KEY"; // name of the env var holding the key
  int max_retries = 3;
  double initial_backoff_seconds = 0.5;       // doubled on every retry
  double timeout_seconds = 60.0;
};

namespace detail {

inline bool retryable_status(int status) {
  return status == 408 || status == 429 || status >= 500;
}

inline bool timeout_error(httplib::Error err) {
  return err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
         err == httplib::Error::Write;
}

}  // namespace detail

/// POSTs `body` as JSON to base_url + path and returns the parsed response.
/// Transport failures and 408/429/5xx responses are retried with exponential
/// backoff up to cfg.max_retries extra attempts; anything else throws.
inline nlohmann::json post_json(const HttpEndpointConfig& cfg, const std::string& path,
                                const nlohmann::json& body) {
  httplib::Client client(cfg.base_url);
  const auto timeout = std::chrono::milliseconds(
      static_cast<long long>(cfg.timeout_seconds * 1000.0));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers headers;
  if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  const std::string payload = body.dump();
  double backoff = cfg.initial_backoff_seconds;
  for (int attempt = 0;; ++attempt) {
    auto res = client.Post(path, headers, payload, "application/json");
    const bool last = attempt >= cfg.max_retries;
    if (!res) {
      if (!last) {
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        backoff *= 2.0;
        continue;
      }
      if (detail::timeout_error(res.error())) throw TimeoutError(cfg.timeout_seconds);
      throw EndpointUnreachable(httplib::to_string(res.error()));
    }
    if (res->status >= 200 && res->status < 300) {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& ex) {
        throw EndpointError(res->status, "unparseable response body: " + std::string(ex.what()));
      }
    }
    if (detail::retryable_status(res->status) && !last) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
      continue;
    }
    throw EndpointError(res->status, res->body);
  }
}

}  // namespace multisearch
