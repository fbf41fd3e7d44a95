#pragma once

// Client side of the external-service contract. Requests and responses are
// line-delimited JSON objects posted to one HTTP endpoint; the i-th response
// line answers the i-th request line. See docs/remote-protocol.md.

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hicogen/bench.hpp"
#include "hicogen/errors.hpp"
#include "hicogen/pools.hpp"
#include "hicogen/prompt_tree.hpp"
#include "hicogen/reward.hpp"
#include "hicogen/scene.hpp"

#include "httplib.h"
#include "json.hpp"

namespace hicogen {

inline constexpr const char* kRemoteEndpointEnv = "HICOGEN_REMOTE_ENDPOINT";
inline constexpr const char* kTemplateDirEnv = "HICOGEN_TEMPLATE_DIR";

// ---- prompt templates -----------------------------------------------------

inline std::filesystem::path template_dir() {
  if (const char* env = std::getenv(kTemplateDirEnv); env && *env) return env;
#ifdef HICOGEN_TEMPLATE_DIR
  return HICOGEN_TEMPLATE_DIR;
#else
  return "templates";
#endif
}

inline std::string load_template(std::string_view name) {
  const auto path = template_dir() / (std::string(name) + ".txt");
  std::ifstream is(path);
  if (!is) throw ConfigError("prompt template not found: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Replaces each "{key}" with its value; other braces are left alone.
inline std::string fill_template(std::string text, const std::map<std::string, std::string>& values) {
  for (const auto& [k, v] : values) {
    const std::string marker = "{" + k + "}";
    for (auto p = text.find(marker); p != std::string::npos; p = text.find(marker, p + v.size())) {
      text.replace(p, marker.size(), v);
    }
  }
  return text;
}

// ---- transport ------------------------------------------------------------

struct RemoteConfig {
  std::string endpoint;
  int timeout_ms = 10000;
  std::size_t retries = 2;
  int backoff_ms = 50;
  std::size_t max_in_flight = 4;

  static RemoteConfig from_env() {
    const char* env = std::getenv(kRemoteEndpointEnv);
    if (!env || !*env) throw ConfigError(std::string("remote backend selected but ") + kRemoteEndpointEnv + " is not set");
    RemoteConfig c;
    c.endpoint = env;
    return c;
  }
};

struct Endpoint {
  std::string host;
  int port = 80;
  std::string path = "/";
};

inline Endpoint parse_endpoint(const std::string& url) {
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) throw ConfigError("remote endpoint must start with http://: '" + url + "'");
  std::string rest = url.substr(scheme.size());
  Endpoint e;
  const auto slash = rest.find('/');
  if (slash != std::string::npos) {
    e.path = rest.substr(slash);
    rest = rest.substr(0, slash);
  }
  const auto colon = rest.rfind(':');
  if (colon != std::string::npos) {
    try {
      e.port = std::stoi(rest.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad port in remote endpoint '" + url + "'");
    }
    rest = rest.substr(0, colon);
  }
  if (rest.empty()) throw ConfigError("remote endpoint has no host: '" + url + "'");
  e.host = rest;
  return e;
}

class RemoteClient {
 public:
  explicit RemoteClient(RemoteConfig cfg) : cfg_(std::move(cfg)), ep_(parse_endpoint(cfg_.endpoint)) {
    if (cfg_.max_in_flight == 0) throw ConfigError("max_in_flight must be positive");
  }

  const RemoteConfig& config() const { return cfg_; }

  std::vector<nlohmann::json> call(const std::vector<nlohmann::json>& requests) const {
    if (requests.empty()) return {};
    std::string body;
    for (const auto& r : requests) body += r.dump() + "\n";
    Slot slot(*this);
    std::string last;
    for (std::size_t attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms * (1 << (attempt - 1))));
      httplib::Client cli(ep_.host, ep_.port);
      const auto t = std::chrono::milliseconds(cfg_.timeout_ms);
      cli.set_connection_timeout(t);
      cli.set_read_timeout(t);
      cli.set_write_timeout(t);
      auto res = cli.Post(ep_.path, body, "application/x-ndjson");
      if (!res) {
        last = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last = "server error " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) throw RemoteError("remote request rejected with status " + std::to_string(res->status));
      return parse_lines(res->body, requests.size());
    }
    throw RemoteError("remote request failed after " + std::to_string(cfg_.retries + 1) + " attempts: " + last);
  }

  nlohmann::json call(const nlohmann::json& request) const { return call(std::vector<nlohmann::json>{request}).front(); }

  std::size_t peak_in_flight() const {
    std::lock_guard lock(mu_);
    return peak_;
  }

 private:
  struct Slot {
    const RemoteClient& c;
    explicit Slot(const RemoteClient& client) : c(client) {
      std::unique_lock lock(c.mu_);
      c.cv_.wait(lock, [&] { return c.in_flight_ < c.cfg_.max_in_flight; });
      c.peak_ = std::max(c.peak_, ++c.in_flight_);
    }
    ~Slot() {
      {
        std::lock_guard lock(c.mu_);
        --c.in_flight_;
      }
      c.cv_.notify_one();
    }
  };

  static std::vector<nlohmann::json> parse_lines(const std::string& body, std::size_t expected) {
    std::vector<nlohmann::json> out;
    std::istringstream is(body);
    std::string line;
    while (std::getline(is, line)) {
      if (trim(line).empty()) continue;
      try {
        out.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw RemoteError(std::string("malformed response line: ") + e.what());
      }
      if (out.back().contains("error")) throw RemoteError("remote error: " + out.back()["error"].dump());
    }
    if (out.size() != expected) {
      throw RemoteError("expected " + std::to_string(expected) + " response lines, got " + std::to_string(out.size()));
    }
    return out;
  }

  RemoteConfig cfg_;
  Endpoint ep_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  mutable std::size_t in_flight_ = 0;
  mutable std::size_t peak_ = 0;
};

namespace detail {

template <class T>
T field(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw RemoteError(std::string("response missing '") + key + "': " + e.what());
  }
}

}  // namespace detail

// ---- backends -------------------------------------------------------------

/// Scores through the remote service. Rubric channels send the shipped
/// reward prompt text along with the payload.
class RemoteScorer final : public ScorerBackend {
 public:
  explicit RemoteScorer(RemoteConfig cfg)
      : client_(std::move(cfg)), subject_prompt_(load_template("subject_reward")),
        relation_prompt_(load_template("relation_reward")) {}

  ScorerKind kind() const override { return ScorerKind::Remote; }

  ScoreRange range(const std::string& channel) const override {
    if (channel == "dino") return {-1.0, 1.0};
    return {0.0, 1.0};
  }

  RewardInputs evaluate(const ScoringTask& task, std::span<const double> sample) const override {
    task.validate();
    const Vec z(sample.begin(), sample.end());
    std::vector<nlohmann::json> req{{{"method", "score"}, {"channel", "clip"}, {"prompt", task.prompt}, {"sample", z}},
                                    {{"method", "score"}, {"channel", "hps"}, {"prompt", task.prompt}, {"sample", z}}};
    for (const auto& s : task.subjects) {
      const auto c = crop(sample, s);
      const Vec block(c.begin(), c.end());
      req.push_back({{"method", "score"}, {"channel", "dino"}, {"prompt", s.prompt}, {"sample", block},
                     {"reference", s.reference}});
      req.push_back({{"method", "score"}, {"channel", "vlm"}, {"prompt", s.prompt}, {"sample", block},
                     {"reference", s.reference},
                     {"instructions", fill_template(subject_prompt_, {{"subject", s.prompt}})}});
    }
    for (const auto& r : task.relations) {
      req.push_back({{"method", "score"}, {"channel", "relation"}, {"prompt", r.text}, {"sample", z},
                     {"instructions", relation_prompt_}});
    }
    const auto res = client_.call(req);
    RewardInputs in;
    in.clip = detail::field<double>(res[0], "score");
    in.hps = detail::field<double>(res[1], "score");
    std::size_t k = 2;
    for (std::size_t i = 0; i < task.subjects.size(); ++i, k += 2) {
      in.subjects.push_back({detail::field<double>(res[k], "score"),
                             normalize_rubric(detail::field<int>(res[k + 1], "rubric"))});
    }
    std::vector<double> rel;
    for (std::size_t r = 0; r < task.relations.size(); ++r) {
      rel.push_back(normalize_rubric(detail::field<int>(res[k + r], "rubric")));
    }
    for (std::size_t i = 0; i < task.subjects.size(); ++i) {
      double acc = 0.0;
      int n = 0;
      for (std::size_t r = 0; r < task.relations.size(); ++r) {
        if (task.relations[r].a != i && task.relations[r].b != i) continue;
        acc += rel[r];
        ++n;
      }
      in.relationship.push_back(n == 0 ? 1.0 : acc / n);
    }
    return in;
  }

  const RemoteClient& client() const { return client_; }

 private:
  RemoteClient client_;
  std::string subject_prompt_;
  std::string relation_prompt_;
};

/// Judge through the remote service using the shipped evaluation prompts.
class RemoteJudge final : public JudgeBackend {
 public:
  explicit RemoteJudge(RemoteConfig cfg)
      : client_(std::move(cfg)), prompts_{load_template("eval_existence"), load_template("eval_attribute"),
                                          load_template("eval_relationship")} {}

  JudgeKind kind() const override { return JudgeKind::Remote; }

  Verdict judge(const Question& q, const PromptTree&, std::span<const double> sample) const override {
    const std::string text = fill_template(prompts_[static_cast<std::size_t>(q.family)], {{"user_prompt", q.text}});
    const auto res = client_.call(nlohmann::json{{"method", "judge"},
                                                 {"family", to_string(q.family)},
                                                 {"object", q.text},
                                                 {"instructions", text},
                                                 {"sample", Vec(sample.begin(), sample.end())}});
    const std::string raw = detail::field<std::string>(res, "reply");
    const auto a = parse_answer(raw);
    if (!a) throw RemoteError("judge reply has no Yes/No/Unclear answer: '" + raw.substr(0, 80) + "'");
    return {*a, raw};
  }

 private:
  RemoteClient client_;
  std::array<std::string, 3> prompts_;
};

/// LLM completion with the shipped attribute rewrite prompt; the reply's
/// "[output_asset1]:" line (or the whole reply) is the description.
class RemoteAttributeRewriter final : public AttributeRewriter {
 public:
  explicit RemoteAttributeRewriter(RemoteConfig cfg) : client_(std::move(cfg)), prompt_(load_template("attribute_rewrite")) {}

  std::string describe(const AttributeNode& attr, const SubjectNode& owner, std::uint64_t seed,
                       std::size_t attempt) const override {
    const std::string label = strip_article(attr.category);
    const std::string text = fill_template(
        prompt_, {{"subject1", label}, {"subject2", ""}, {"subject3", ""}, {"ori_prompt", render_clause(owner, false)}});
    const auto res = client_.call(nlohmann::json{{"method", "complete"}, {"prompt", text}, {"seed", seed}, {"attempt", attempt}});
    std::string reply = detail::field<std::string>(res, "text");
    if (auto p = reply.find("[output_asset1]:"); p != std::string::npos) {
      reply = reply.substr(p + 16);
      if (auto nl = reply.find('\n'); nl != std::string::npos) reply = reply.substr(0, nl);
    }
    return trim(reply);
  }

  std::size_t max_attempts() const override { return 3; }

 private:
  RemoteClient client_;
  std::string prompt_;
};

/// Generator served remotely: "embed" returns {"embedding"}, "generate"
/// returns {"latent"}.
class RemoteGenerator final : public GeneratorBackend {
 public:
  explicit RemoteGenerator(RemoteConfig cfg) : client_(std::move(cfg)) {}

  Vec embed(std::string_view text) const override {
    return detail::field<Vec>(client_.call(nlohmann::json{{"method", "embed"}, {"text", std::string(text)}}),
                              "embedding");
  }

  Generation generate(const ConditionContext& ctx, std::uint64_t seed) const override {
    const auto res = client_.call(nlohmann::json{{"method", "generate"},
                                                 {"canvas",
                                                  {{"kind", to_string(ctx.canvas.kind)},
                                                   {"slot", to_string(ctx.canvas.slot)},
                                                   {"subjects", ctx.canvas.subjects}}},
                                                 {"embedding", ctx.embedding},
                                                 {"references", ctx.references},
                                                 {"seed", seed}});
    return {detail::field<Vec>(res, "latent"), std::nullopt};
  }

 private:
  RemoteClient client_;
};

}  // namespace hicogen
