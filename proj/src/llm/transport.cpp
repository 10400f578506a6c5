#include "iclcot/llm/transport.hpp"

#include <ctime>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace iclcot::llm {

namespace {

std::string replay_key(const std::string& method, const std::string& path, const std::string& body) {
  return method + ' ' + path + '\n' + body;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

HttpTransport::HttpTransport(std::string base_url, double timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

HttpResponse HttpTransport::send(const HttpRequest& request) {
  {
    std::lock_guard lock(mu_);
    ++calls_;
  }
  httplib::Client client(base_url_);
  const auto timeout = std::chrono::duration<double>(timeout_seconds_);
  const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  client.set_connection_timeout(usec);
  client.set_read_timeout(usec);
  client.set_write_timeout(usec);
  httplib::Headers headers;
  for (const auto& [k, v] : request.headers) headers.emplace(k, v);
  httplib::Result res;
  if (request.method == "POST") {
    res = client.Post(request.path, headers, request.body, "application/json");
  } else if (request.method == "GET") {
    res = client.Get(request.path, headers);
  } else {
    throw TransportError("unsupported HTTP method " + request.method);
  }
  if (!res) {
    throw TransportError("request to " + base_url_ + request.path + " failed: " +
                         httplib::to_string(res.error()));
  }
  return {res->status, res->body};
}

std::size_t HttpTransport::network_calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

RecordingTransport::RecordingTransport(std::shared_ptr<Transport> inner,
                                       const std::filesystem::path& log_path)
    : inner_(std::move(inner)), log_(log_path, std::ios::app) {
  if (!log_) throw Error("cannot open replay log " + log_path.string());
}

HttpResponse RecordingTransport::send(const HttpRequest& request) {
  nlohmann::json line = {{"request", {{"method", request.method}, {"path", request.path}, {"body", request.body}}}};
  try {
    HttpResponse response = inner_->send(request);
    line["response"] = {{"status", response.status}, {"body", response.body}};
    line["timestamp"] = utc_timestamp();
    std::lock_guard lock(mu_);
    log_ << line.dump() << '\n' << std::flush;
    return response;
  } catch (const TransportError& e) {
    line["response"] = nullptr;
    line["error"] = e.what();
    line["timestamp"] = utc_timestamp();
    std::lock_guard lock(mu_);
    log_ << line.dump() << '\n' << std::flush;
    throw;
  }
}

ReplayTransport::ReplayTransport(const std::filesystem::path& log_path) {
  std::ifstream in(log_path);
  if (!in) throw Error("cannot open replay log " + log_path.string());
  std::string text;
  std::size_t n = 0;
  while (std::getline(in, text)) {
    ++n;
    if (text.empty()) continue;
    nlohmann::json line;
    try {
      line = nlohmann::json::parse(text);
      const auto& req = line.at("request");
      Entry e;
      if (line.at("response").is_null()) {
        e.transport_error = true;
      } else {
        e.response.status = line.at("response").at("status").get<int>();
        e.response.body = line.at("response").at("body").get<std::string>();
      }
      entries_[replay_key(req.at("method").get<std::string>(), req.at("path").get<std::string>(),
                          req.at("body").get<std::string>())]
          .push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(log_path.string() + ":" + std::to_string(n) + ": bad replay entry: " + ex.what());
    }
  }
}

HttpResponse ReplayTransport::send(const HttpRequest& request) {
  std::lock_guard lock(mu_);
  auto it = entries_.find(replay_key(request.method, request.path, request.body));
  if (it == entries_.end() || it->second.empty()) {
    throw ReplayMismatch("replay log has no recorded response for " + request.method + " " +
                         request.path + " with body " + request.body.substr(0, 120));
  }
  Entry e = std::move(it->second.front());
  it->second.pop_front();
  if (e.transport_error) throw TransportError("recorded transport failure");
  return e.response;
}

std::size_t ReplayTransport::remaining() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [_, q] : entries_) n += q.size();
  return n;
}

}  // namespace iclcot::llm
