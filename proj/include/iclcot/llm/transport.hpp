#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "iclcot/error.hpp"

namespace iclcot::llm {

struct HttpRequest {
  std::string method = "POST";
  std::string path;
  std::string body;
  // Sent but never recorded (the API key lives here).
  std::vector<std::pair<std::string, std::string>> headers;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

// Connection refused, timeout, or any failure before an HTTP status arrived.
class TransportError : public Error {
 public:
  using Error::Error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse send(const HttpRequest& request) = 0;
  // Number of requests that reached the network (replay never does).
  virtual std::size_t network_calls() const { return 0; }
};

// cpp-httplib client; http:// and https:// base URLs.
class HttpTransport : public Transport {
 public:
  HttpTransport(std::string base_url, double timeout_seconds);
  HttpResponse send(const HttpRequest& request) override;
  std::size_t network_calls() const override;

 private:
  std::string base_url_;
  double timeout_seconds_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

// Forwards to `inner` and appends {request, response, timestamp} lines to an
// NDJSON log. Transport errors are logged with a null response.
class RecordingTransport : public Transport {
 public:
  RecordingTransport(std::shared_ptr<Transport> inner, const std::filesystem::path& log_path);
  HttpResponse send(const HttpRequest& request) override;
  std::size_t network_calls() const override { return inner_->network_calls(); }

 private:
  std::shared_ptr<Transport> inner_;
  std::mutex mu_;
  std::ofstream log_;
};

class ReplayMismatch : public Error {
 public:
  using Error::Error;
};

// Serves recorded responses. Requests are matched on (method, path, body);
// identical requests are answered in recorded order.
class ReplayTransport : public Transport {
 public:
  explicit ReplayTransport(const std::filesystem::path& log_path);
  HttpResponse send(const HttpRequest& request) override;
  std::size_t remaining() const;

 private:
  struct Entry {
    bool transport_error = false;
    HttpResponse response;
  };
  mutable std::mutex mu_;
  std::map<std::string, std::deque<Entry>> entries_;
};

}  // namespace iclcot::llm
