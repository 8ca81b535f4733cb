#include <httplib.h>

#include <nlohmann/json.hpp>

#include "polneuron/error.hpp"
#include "polneuron/stance.hpp"

namespace polneuron::stance {

HttpJudge::HttpJudge(HttpJudgeConfig cfg) : cfg_(std::move(cfg)) {
  const std::string scheme = "http://";
  require(cfg_.endpoint.starts_with(scheme), ErrorKind::Config,
          "judge endpoint must be an http:// URL: '" + cfg_.endpoint + "'");
  const auto slash = cfg_.endpoint.find('/', scheme.size());
  origin_ = cfg_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : cfg_.endpoint.substr(slash);
  require(cfg_.timeout_ms > 0 && cfg_.retries >= 0, ErrorKind::Config, "bad judge timeout or retry budget");
}

StanceLabel HttpJudge::classify(std::string_view topic, std::string_view response) const {
  httplib::Client client(origin_);
  const auto sec = cfg_.timeout_ms / 1000, usec = (cfg_.timeout_ms % 1000) * 1000;
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  const std::string body = nlohmann::json{{"topic", topic}, {"response", response}}.dump();
  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
    auto res = client.Post(path_, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    return parse_judge_reply(res->body);
  }
  fail(ErrorKind::Io, "judge request to " + cfg_.endpoint + " failed: " + last_error);
}

}  // namespace polneuron::stance
