#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <chrono>

#include "doctest.h"
#include "embrank/simnet.hpp"

using namespace embrank;

namespace {

double call_ms(wire::Client& client, const nlohmann::json& req) {
  const auto t0 = std::chrono::steady_clock::now();
  client.call(req);
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TEST_CASE("latency dist json round trip and sampling") {
  Rng rng(5);
  LatencyDist fixed = LatencyDist::from_json({{"dist", "fixed"}, {"ms", 12.5}});
  CHECK(fixed.sample_ms(rng) == 12.5);

  LatencyDist uniform = LatencyDist::from_json({{"dist", "uniform"}, {"a", 2.0}, {"b", 4.0}});
  for (int i = 0; i < 100; ++i) {
    const double v = uniform.sample_ms(rng);
    CHECK(v >= 2.0);
    CHECK(v < 4.0);
  }

  LatencyDist lognormal = LatencyDist::from_json({{"dist", "lognormal"}, {"mu", 1.0}, {"sigma", 0.5}});
  for (int i = 0; i < 100; ++i) CHECK(lognormal.sample_ms(rng) > 0.0);

  CHECK_THROWS_AS(LatencyDist::from_json({{"dist", "cauchy"}}), ConfigError);
  CHECK_THROWS_AS(LinkConfig::from_json({{"drop_prob", 1.5}}), ConfigError);
}

TEST_CASE("proxy forwards frames verbatim with injected delay") {
  wire::Server upstream({"127.0.0.1", 0}, [](const nlohmann::json& req) {
    nlohmann::json out = req;
    out["upstream"] = true;
    return out;
  });

  LinkConfig link;
  link.latency = {LatencyDist::Kind::FIXED, 30.0, 0.0};
  SimNetProxy proxy(upstream.addr(), link, 42);

  wire::Client client(proxy.addr(), 3000);
  const nlohmann::json resp = client.call({{"hello", "world"}});
  CHECK(resp.value("upstream", false));
  CHECK(resp["hello"] == "world");

  const double ms = call_ms(client, {{"x", 1}});
  CHECK(ms >= 29.0);
  CHECK(proxy.forwarded() == 2);
  CHECK(proxy.dropped() == 0);
}

TEST_CASE("zero-latency link adds little overhead") {
  wire::Server upstream({"127.0.0.1", 0}, [](const nlohmann::json& req) { return req; });
  SimNetProxy proxy(upstream.addr(), {}, 42);
  wire::Client client(proxy.addr(), 3000);
  client.call({{"warm", true}});
  const double ms = call_ms(client, {{"x", 1}});
  CHECK(ms < 20.0);
}

TEST_CASE("dropped requests surface as client timeouts") {
  wire::Server upstream({"127.0.0.1", 0}, [](const nlohmann::json& req) { return req; });
  LinkConfig link;
  link.drop_prob = 0.999999;  // effectively always
  SimNetProxy proxy(upstream.addr(), link, 7);
  wire::Client client(proxy.addr(), 80);
  CHECK_THROWS_AS(client.call({{"x", 1}}), wire::WireTimeout);
  CHECK(proxy.dropped() >= 1);
}

TEST_CASE("same seed gives identical latency draws per connection") {
  LatencyDist dist{LatencyDist::Kind::UNIFORM, 1.0, 9.0};
  std::vector<double> a, b;
  {
    Rng rng(derive_seed(123, 0));
    for (int i = 0; i < 50; ++i) a.push_back(dist.sample_ms(rng));
  }
  {
    Rng rng(derive_seed(123, 0));
    for (int i = 0; i < 50; ++i) b.push_back(dist.sample_ms(rng));
  }
  CHECK(a == b);
}

TEST_CASE("proxy to a dead upstream closes the client connection") {
  wire::Addr dead{"127.0.0.1", 1};  // nothing listens there
  SimNetProxy proxy(dead, {}, 9);
  wire::Client client(proxy.addr(), 500);
  CHECK_THROWS_AS(client.call({{"x", 1}}), wire::WireError);
}
