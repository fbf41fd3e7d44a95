#include <catch_amalgamated.hpp>

#include <atomic>
#include <future>

#include "hicogen/remote.hpp"

using namespace hicogen;

namespace {

// Local ndjson service: answers each request line via `handler`.
struct FakeService {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> calls{0};
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
  std::atomic<int> fail_first{0};
  int delay_ms = 0;
  std::function<nlohmann::json(const nlohmann::json&)> handler;

  FakeService() {
    server.Post("/v1", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++calls;
      const int now = ++active;
      for (int p = peak.load(); now > p && !peak.compare_exchange_weak(p, now);) {
      }
      if (delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      --active;
      if (n <= fail_first.load()) {
        res.status = 503;
        return;
      }
      std::istringstream is(req.body);
      std::string line, out;
      while (std::getline(is, line)) {
        if (!line.empty()) out += handler(nlohmann::json::parse(line)).dump() + "\n";
      }
      res.set_content(out, "application/x-ndjson");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeService() {
    server.stop();
    thread.join();
  }

  RemoteConfig config() const {
    RemoteConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    c.timeout_ms = 2000;
    c.backoff_ms = 1;
    return c;
  }
};

}  // namespace

TEST_CASE("endpoint parsing") {
  const auto e = parse_endpoint("http://localhost:8123/api/v1");
  CHECK(e.host == "localhost");
  CHECK(e.port == 8123);
  CHECK(e.path == "/api/v1");
  CHECK(parse_endpoint("http://example").port == 80);
  CHECK_THROWS_AS(parse_endpoint("https://example"), ConfigError);
  CHECK_THROWS_AS(parse_endpoint("http://:99"), ConfigError);
  CHECK_THROWS_AS(parse_endpoint("http://h:xx"), ConfigError);
}

TEST_CASE("templates load and fill") {
  const auto t = load_template("eval_existence");
  REQUIRE(t.find("{user_prompt}") != std::string::npos);
  const auto filled = fill_template(t, {{"user_prompt", "a red hat"}});
  CHECK(filled.find("{user_prompt}") == std::string::npos);
  CHECK(filled.find("a red hat") != std::string::npos);
  CHECK(fill_template("{a}{a}{b}", {{"a", "{a}x"}}) == "{a}x{a}x{b}");
  CHECK_THROWS_AS(load_template("no_such_template"), ConfigError);
}

TEST_CASE("client pairs responses with requests") {
  FakeService svc;
  svc.handler = [](const nlohmann::json& r) { return nlohmann::json{{"echo", r["i"]}}; };
  RemoteClient c(svc.config());
  std::vector<nlohmann::json> req;
  for (int i = 0; i < 5; ++i) req.push_back({{"i", i}});
  const auto res = c.call(req);
  REQUIRE(res.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(res[i]["echo"] == i);
}

TEST_CASE("client retries server errors then gives up") {
  FakeService svc;
  svc.handler = [](const nlohmann::json&) { return nlohmann::json{{"ok", true}}; };
  svc.fail_first = 2;
  auto cfg = svc.config();
  cfg.retries = 2;
  CHECK(RemoteClient(cfg).call(nlohmann::json::object())["ok"] == true);
  CHECK(svc.calls == 3);

  svc.calls = 0;
  svc.fail_first = 10;
  CHECK_THROWS_AS(RemoteClient(cfg).call(nlohmann::json::object()), RemoteError);
  CHECK(svc.calls == 3);
}

TEST_CASE("client surfaces error lines, short replies and timeouts") {
  FakeService svc;
  svc.handler = [](const nlohmann::json& r) {
    if (r.contains("bad")) return nlohmann::json{{"error", "nope"}};
    return nlohmann::json{{"ok", 1}};
  };
  RemoteClient c(svc.config());
  CHECK_THROWS_AS(c.call(nlohmann::json{{"bad", 1}}), RemoteError);

  svc.delay_ms = 300;
  auto cfg = svc.config();
  cfg.timeout_ms = 50;
  cfg.retries = 0;
  CHECK_THROWS_AS(RemoteClient(cfg).call(nlohmann::json::object()), RemoteError);

  auto dead = svc.config();
  dead.endpoint = "http://127.0.0.1:1/v1";
  dead.retries = 1;
  CHECK_THROWS_AS(RemoteClient(dead).call(nlohmann::json::object()), RemoteError);
}

TEST_CASE("client bounds requests in flight") {
  FakeService svc;
  svc.delay_ms = 20;
  svc.handler = [](const nlohmann::json&) { return nlohmann::json{{"ok", 1}}; };
  auto cfg = svc.config();
  cfg.max_in_flight = 3;
  RemoteClient c(cfg);
  std::vector<std::future<void>> fs;
  for (int i = 0; i < 12; ++i) {
    fs.push_back(std::async(std::launch::async, [&] { c.call(nlohmann::json::object()); }));
  }
  for (auto& f : fs) f.get();
  CHECK(c.peak_in_flight() == 3);
  CHECK(svc.peak <= 3);
  CHECK(svc.calls == 12);
}

TEST_CASE("remote judge parses replies and keeps raw text") {
  FakeService svc;
  std::string seen;
  svc.handler = [&](const nlohmann::json& r) {
    seen = r["instructions"].get<std::string>();
    if (r["object"] == "mystery") return nlohmann::json{{"reply", "I cannot tell."}};
    return nlohmann::json{{"reply", "Yes. The hat is visible."}};
  };
  RemoteJudge judge(svc.config());
  PromptTree tree;
  const Vec sample{0.0, 1.0};
  const auto v = judge.judge({QuestionFamily::Exist, 0, 0, "a red hat"}, tree, sample);
  CHECK(v.answer == Answer::Yes);
  CHECK(v.raw == "Yes. The hat is visible.");
  CHECK(seen.find("a red hat") != std::string::npos);
  CHECK_THROWS_AS(judge.judge({QuestionFamily::Exist, 0, 0, "mystery"}, tree, sample), RemoteError);
}

TEST_CASE("remote scorer maps channels into reward inputs") {
  FakeService svc;
  svc.handler = [](const nlohmann::json& r) {
    const auto ch = r["channel"].get<std::string>();
    if (ch == "clip") return nlohmann::json{{"score", 0.7}};
    if (ch == "hps") return nlohmann::json{{"score", 0.4}};
    if (ch == "dino") return nlohmann::json{{"score", 0.9}};
    if (ch == "vlm") return nlohmann::json{{"rubric", 3}, {"rationale", "close"}};
    return nlohmann::json{{"rubric", r["prompt"] == "left of" ? 4 : 2}};
  };
  ScoringTask task;
  task.prompt = "two things";
  task.dim = 4;
  task.joint_target = Vec(4, 0.0);
  task.subjects = {{"a", "a cat", 0, 2, {0, 0}, {0, 0}, 1, 1}, {"b", "a dog", 2, 2, {0, 0}, {0, 0}, 1, 1}};
  task.relations = {{0, 1, "left of", 0, 2, {1, 0}, 1, 1}};
  RemoteScorer scorer(svc.config());
  const Vec sample(4, 0.1);
  const auto in = scorer.evaluate(task, sample);
  CHECK(in.clip == Catch::Approx(0.7));
  CHECK(in.hps == Catch::Approx(0.4));
  REQUIRE(in.subjects.size() == 2);
  CHECK(in.subjects[1].dino == Catch::Approx(0.9));
  CHECK(in.subjects[1].vlm == Catch::Approx(0.75));
  REQUIRE(in.relationship.size() == 2);
  CHECK(in.relationship[0] == Catch::Approx(1.0));
  CHECK(svc.calls == 1);
}

TEST_CASE("remote backend requires an endpoint") {
  unsetenv(kRemoteEndpointEnv);
  CHECK_THROWS_AS(RemoteConfig::from_env(), ConfigError);
  setenv(kRemoteEndpointEnv, "http://127.0.0.1:9/x", 1);
  CHECK(RemoteConfig::from_env().endpoint == "http://127.0.0.1:9/x");
  unsetenv(kRemoteEndpointEnv);
}
