#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "iclcot/llm/mock.hpp"
#include "iclcot/llm/text_pipeline.hpp"

using namespace iclcot;
using namespace iclcot::llm;

namespace {

struct Harness {
  std::shared_ptr<MockTransport> transport;
  std::vector<double> sleeps;
  Client client;

  explicit Harness(MockBehavior b, std::size_t max_retries = 3)
      : transport(std::make_shared<MockTransport>(std::move(b))),
        client(make_cfg(max_retries), transport, [this](double s) { sleeps.push_back(s); }) {}

  static EndpointConfig make_cfg(std::size_t retries) {
    EndpointConfig c;
    c.base_url = "mock://";
    c.max_retries = retries;
    return c;
  }
};

std::vector<TextRecord> sample_records(std::size_t n) {
  std::vector<TextRecord> out;
  const char* words[] = {"river", "table", "door", "summit", "fire", "book", "lamp", "road"};
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"Sentence number " + std::to_string(i) + " ends with the word", words[i % 8], i + 1});
  }
  return out;
}

TextEvalConfig small_text_cfg() {
  TextEvalConfig cfg;
  cfg.context_lengths = {1, 2};
  cfg.validation = 2;
  cfg.queries = 3;
  cfg.pipeline.pool_size = 4;
  cfg.pipeline.batch = 2;
  cfg.pipeline.epochs = 3;
  cfg.pipeline.repeats = 2;
  cfg.seed = 5;
  return cfg;
}

std::string read_golden(const std::string& name) {
  std::ifstream in(std::string(ICLCOT_TEST_DATA_DIR) + "/golden/" + name);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("complete returns the mock text verbatim") {
  MockBehavior b;
  b.completion = " fixed answer";
  Harness h(b);
  CHECK(h.client.complete("Q:") == " fixed answer");
  CHECK(h.sleeps.empty());
}

TEST_CASE("retries: two 503s then success") {
  MockBehavior b;
  b.scripted_statuses = {503, 503};
  Harness h(b);
  CHECK(h.client.complete("x") == b.completion);
  CHECK(h.sleeps.size() == 2);
  CHECK(h.client.attempts_made() == 3);
  CHECK(h.sleeps[1] > h.sleeps[0]);
}

TEST_CASE("retries exhausted and client errors") {
  MockBehavior b;
  b.scripted_statuses = {503, 502, 500, 503, 503};
  Harness h(b, 2);
  try {
    h.client.complete("x");
    FAIL("expected ServiceError");
  } catch (const ServiceError& e) {
    CHECK(e.attempts() == 3);
    CHECK(e.last_status() == 500);
  }
  MockBehavior c;
  c.scripted_statuses = {404};
  Harness h2(c);
  CHECK_THROWS_AS(h2.client.complete("x"), RequestError);
  CHECK(h2.client.attempts_made() == 1);
  CHECK(h2.sleeps.empty());
}

TEST_CASE("NLL of a hand fixture") {
  MockBehavior b;
  b.fixture = {{"sat", -1.0}, {"down", -0.5}};
  Harness h(b);
  const auto s = h.client.score_nll("The cat", " sat down");
  CHECK(s.token_logprobs == std::vector<double>{-1.0, -0.5});
  CHECK(s.nll == 1.5);
  CHECK(h.client.score_nll("The cat", "").nll == 0.0);
}

TEST_CASE("NLL is additive over a split continuation") {
  MockBehavior b;
  b.fixture = {{"over", -0.25}, {"the", -1.5}};
  b.copy_logprob = -0.1;
  Harness h(b);
  const double whole = h.client.score_nll("Jump the fence", " over the wall").nll;
  const double a = h.client.score_nll("Jump the fence", " over").nll;
  const double rest = h.client.score_nll("Jump the fence over", " the wall").nll;
  CHECK(whole == doctest::Approx(a + rest).epsilon(1e-12));
  CHECK(whole >= 0.0);

  MockBehavior boosted = b;
  boosted.fixture["wall"] = -0.01;
  Harness h2(boosted);
  CHECK(h2.client.score_nll("Jump the fence", " over the wall").nll < whole);
}

TEST_CASE("missing log-probabilities is a typed error") {
  MockBehavior b;
  b.supports_logprobs = false;
  Harness h(b);
  CHECK_THROWS_AS(h.client.score_nll("ctx", " word"), UnsupportedFeature);
}

TEST_CASE("endpoint config validation and key handling") {
  EndpointConfig c;
  c.max_retries = 6;
  CHECK_THROWS(c.validate());
  c.max_retries = 3;
  c.max_in_flight = 0;
  CHECK_THROWS(c.validate());
  c.max_in_flight = 4;
  c.api_key = "secret";
  const nlohmann::json j = c;
  CHECK(j.dump().find("secret") == std::string::npos);
}

TEST_CASE("HTTP round trip against the bundled server") {
  MockBehavior b;
  b.fixture = {{"door", -0.75}};
  MockServer server(b);
  EndpointConfig c;
  c.base_url = server.base_url();
  c.api_key = "k-test";
  Client client(c, std::make_shared<HttpTransport>(c.base_url, 5.0));
  CHECK(client.complete("hi") == b.completion);
  CHECK(client.score_nll("Close the", " door").nll == 0.75);
  CHECK(server.requests_served() == 2);
  CHECK(server.last_authorization() == "Bearer k-test");
}

TEST_CASE("dataset parsing") {
  const auto recs = parse_text_dataset("a b c\td\n\n  \ne f\tg\n", "mem");
  REQUIRE(recs.size() == 2);
  CHECK(recs[1].line == 4);
  CHECK(recs[1].target == "g");
  try {
    parse_text_dataset("ok\tfine\nno tab here\n", "mem");
    FAIL("expected DatasetError");
  } catch (const DatasetError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_text_dataset("a\tb\tc\n", "mem"), DatasetError);
  CHECK(parse_text_dataset("", "mem").empty());
}

TEST_CASE("constant mock: Auto-CoT equals baseline") {
  MockBehavior b;
  Harness h(b);
  const auto report = text_pipeline_eval(h.client, sample_records(16), small_text_cfg());
  REQUIRE(report.rows.size() == 2);
  for (const auto& r : report.rows) {
    CHECK(r.autocot_nll == r.baseline_nll);
    CHECK(r.autocot_nll == 2.0);
  }
}

TEST_CASE("empty dataset gives an empty table and a warning") {
  Harness h(MockBehavior{});
  const auto report = text_pipeline_eval(h.client, {}, small_text_cfg());
  CHECK(report.rows.empty());
  CHECK(!report.warnings.empty());
  CHECK(text_report_markdown(report) == "| Context Length | Auto-CoT Loss | Baseline Loss |\n|---|---|---|\n");
}

TEST_CASE("recorded traffic replays offline to the same report") {
  MockBehavior b;
  b.copy_logprob = -0.3;
  b.fixture = {{"river", -0.2}, {"door", -4.0}};
  const auto log = std::filesystem::temp_directory_path() / "iclcot_replay_test.ndjson";
  std::filesystem::remove(log);
  auto mock = std::make_shared<MockTransport>(b);
  auto rec = std::make_shared<RecordingTransport>(mock, log);
  Client live(Harness::make_cfg(3), rec);
  const auto records = sample_records(16);
  const auto first = text_pipeline_eval(live, records, small_text_cfg());

  auto replay = std::make_shared<ReplayTransport>(log);
  Client offline(Harness::make_cfg(3), replay);
  const auto second = text_pipeline_eval(offline, records, small_text_cfg());
  CHECK(text_report_csv(first) == text_report_csv(second));
  CHECK(replay->network_calls() == 0);
  CHECK(replay->remaining() == 0);
  CHECK_THROWS_AS(offline.complete("never recorded"), ReplayMismatch);
  std::filesystem::remove(log);
}

TEST_CASE("reference text results render to the golden report") {
  TextReport report;
  report.rows = {{1, 0, 0, 1.9734, 4.2728}, {3, 0, 0, 2.0998, 4.1614}, {5, 0, 0, 2.2141, 4.0404}};
  CHECK(text_report_markdown(report) == read_golden("text_reference_report.md"));
}
