#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "iclcot/llm/transport.hpp"

namespace iclcot::llm {

// Behaviour of the bundled completions endpoint. Text is split into tokens
// GPT-2 style: each token is a run of non-space characters together with the
// spaces before it.
struct MockBehavior {
  std::string completion = " Because the passage points there.";
  bool supports_logprobs = true;
  double base_logprob = -2.0;
  // Exact per-token overrides (token text without leading spaces).
  std::map<std::string, double> fixture;
  // Tokens already seen earlier in the prompt get this log-prob when set.
  std::optional<double> copy_logprob;
  // Statuses returned, in order, before normal service resumes.
  std::deque<int> scripted_statuses;
};

struct MockToken {
  std::string text;
  std::size_t offset = 0;
};

std::vector<MockToken> mock_tokenize(const std::string& text);

// Handles one /v1/completions request body; pure function of behaviour + body.
HttpResponse mock_completions(const MockBehavior& behavior, const std::string& body);

// In-process transport that answers like the mock server without sockets.
class MockTransport : public Transport {
 public:
  explicit MockTransport(MockBehavior behavior) : behavior_(std::move(behavior)) {}
  HttpResponse send(const HttpRequest& request) override;
  std::size_t network_calls() const override;

 private:
  mutable std::mutex mu_;
  MockBehavior behavior_;
  std::size_t calls_ = 0;
};

// The same endpoint over real HTTP on 127.0.0.1 with an ephemeral port.
class MockServer {
 public:
  explicit MockServer(MockBehavior behavior);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  int port() const { return port_; }
  std::string base_url() const;
  std::size_t requests_served() const;
  // Last Authorization header seen.
  std::string last_authorization() const;
  void set_behavior(MockBehavior behavior);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace iclcot::llm
