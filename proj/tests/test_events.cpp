#include <doctest.h>

#include <random>
#include <sstream>

#include "event_oracle.hpp"
#include "somnoflow/datapipe.hpp"
#include "somnoflow/events.hpp"

using namespace somnoflow;
using namespace somnoflow::events;

namespace {

Hypnogram hyp(std::vector<double> p, std::int64_t start = 0) { return {start, std::move(p)}; }

BinaryHypnogram bin(oracle::Bits b) { return {0, std::move(b)}; }

oracle::Bits segments(std::initializer_list<std::pair<std::uint8_t, std::size_t>> parts) {
  oracle::Bits b;
  for (auto [s, n] : parts) b.insert(b.end(), n, s);
  return b;
}

std::vector<double> as_probs(const oracle::Bits& b) { return {b.begin(), b.end()}; }

EventRuleConfig raw_rules() {
  EventRuleConfig c;
  c.median_width = 1;
  c.min_run = 1;
  return c;
}

}  // namespace

TEST_CASE("median smoothing") {
  CHECK(smooth_probs(hyp({0.3, 0.3, 0.3, 0.3}), 5).p == std::vector<double>{0.3, 0.3, 0.3, 0.3});
  CHECK(smooth_probs(hyp({0.9, 0.9, 0.1, 0.9, 0.9}), 5).p == std::vector<double>(5, 0.9));
  const std::vector<double> v{0.1, 0.8, 0.4, 0.6, 0.0};
  CHECK(smooth_probs(hyp(v), 1).p == v);
  // Edges shrink symmetrically: minute 1 uses minutes 0-2 only.
  CHECK(smooth_probs(hyp(v), 5).p == std::vector<double>{0.1, 0.4, 0.4, 0.4, 0.0});
  CHECK_THROWS_AS(smooth_probs(hyp(v), 4), std::invalid_argument);
  CHECK(smooth_probs(hyp({}), 5).p.empty());

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 300; ++t) {
    std::vector<double> p(1 + rng() % 40);
    for (auto& x : p) x = u(rng);
    const std::size_t w = 2 * (rng() % 6) + 1;
    const auto s = smooth_probs(hyp(p, 60), w);
    CHECK(s.p == oracle::median_smooth(p, w));
    CHECK(s.start_timestamp == 60);
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    for (double x : s.p) CHECK((x >= *lo && x <= *hi));
  }
}

TEST_CASE("binarization") {
  CHECK(binarize(hyp({0.5}), 0.5).states == oracle::Bits{1});
  CHECK(binarize(hyp({0, 0, 0}), 0.5).states == oracle::Bits{0, 0, 0});
  CHECK(binarize(hyp({0.2, 0.7, 0.5}), 0.5).states == oracle::Bits{0, 1, 1});
  CHECK(binarize(hyp({0.2, 0.7, 0.5}), 0.6).states == oracle::Bits{0, 1, 0});
}

TEST_CASE("short-run suppression") {
  CHECK(suppress_short_runs(bin({1, 1, 0, 1, 1}), 2).states == oracle::Bits{1, 1, 1, 1, 1});
  CHECK(suppress_short_runs(bin({0, 0, 0}), 3).states == oracle::Bits{0, 0, 0});
  CHECK(suppress_short_runs(bin({0, 1, 0, 1}), 1).states == oracle::Bits{0, 1, 0, 1});
  // First and last runs are exempt.
  CHECK(suppress_short_runs(bin({1, 0, 0, 0, 1}), 2).states == oracle::Bits{1, 0, 0, 0, 1});
  CHECK_THROWS_AS(suppress_short_runs(bin({1}), 0), std::invalid_argument);

  SUBCASE("matches the merge oracle on every sequence up to length 14") {
    for (std::size_t n = 0; n <= 14; ++n)
      for (std::uint32_t w = 0; w < (1u << n); ++w)
        for (std::size_t m : {2, 3, 4}) {
          const auto b = oracle::bits_of(w, n);
          const auto got = suppress_short_runs(bin(b), m).states;
          REQUIRE(got == oracle::suppress(b, m));
        }
  }
  SUBCASE("postcondition and idempotence") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 2000; ++t) {
      const auto b = oracle::bursty(200, rng);
      const std::size_t m = 1 + rng() % 6;
      const auto once = suppress_short_runs(bin(b), m).states;
      REQUIRE(once.size() == b.size());
      const auto runs = oracle::runs_of(once);
      for (std::size_t k = 1; k + 1 < runs.size(); ++k) CHECK(runs[k].length >= m);
      CHECK(suppress_short_runs(bin(once), m).states == once);
    }
  }
}

TEST_CASE("sleep onset rule") {
  const EventRuleConfig c;
  CHECK(detect_sleep_time(segments({{0, 60}, {1, 120}}), c) == 60u);
  CHECK(detect_sleep_time(segments({{0, 10}, {1, 30}, {0, 12}, {1, 200}}), c) == 52u);
  CHECK_FALSE(detect_sleep_time(segments({{0, 300}}), c));
  // Starting asleep is not a transition.
  CHECK_FALSE(detect_sleep_time(segments({{1, 300}}), c));
  // Short awake interruptions keep counting toward the same candidate.
  CHECK(detect_sleep_time(segments({{0, 5}, {1, 20}, {0, 9}, {1, 25}}), c) == 5u);
  CHECK_FALSE(detect_sleep_time(segments({{0, 5}, {1, 20}, {0, 9}, {1, 24}}), c));

  SUBCASE("trace records every decision") {
    std::vector<TraceEntry> tr;
    const auto b = segments({{0, 10}, {1, 30}, {0, 12}, {1, 200}});
    REQUIRE(detect_sleep_time(b, c, &tr) == 52u);
    REQUIRE(tr.size() == 2);
    CHECK(tr[0].minute == 10);
    CHECK(tr[0].decision == Decision::rejected);
    CHECK(tr[1].minute == 52);
    CHECK(tr[1].decision == Decision::accepted);
    tr.clear();
    CHECK_FALSE(detect_sleep_time(segments({{0, 10}, {1, 30}}), c, &tr));
    REQUIRE(tr.size() == 1);
    CHECK(tr[0].decision == Decision::pending);
  }
}

TEST_CASE("wake rule") {
  const EventRuleConfig c;
  CHECK(detect_wake_time(segments({{1, 300}, {0, 30}}), c, 0) == 300u);
  CHECK_FALSE(detect_wake_time(segments({{1, 300}, {0, 10}}), c, 0));
  CHECK_FALSE(detect_wake_time(segments({{1, 300}}), c, 0));
  // A later long sleep run disqualifies the first awakening.
  CHECK(detect_wake_time(segments({{1, 100}, {0, 20}, {1, 60}, {0, 30}}), c, 0) == 180u);
  // A short return to sleep does not.
  CHECK(detect_wake_time(segments({{1, 100}, {0, 20}, {1, 9}, {0, 30}}), c, 0) == 100u);

  SUBCASE("literal and confirm-after readings disagree") {
    const auto b = segments({{0, 10}, {1, 100}, {0, 20}, {1, 3}, {0, 5}});
    CHECK(oracle::wake_time(b, c, 10) == 110u);
    CHECK(oracle::wake_time_literal(b, c, 10) == b.size() - 1);
  }
}

TEST_CASE("exhaustive agreement with the literal rules at small scale") {
  // Every binary sequence of length 16, fed as 0/1 probabilities through the
  // full pipeline under three smoothing settings.
  const std::pair<std::size_t, std::size_t> stages[] = {{1, 1}, {3, 2}, {5, 3}};
  std::size_t onsets = 0;
  std::size_t wakes = 0;
  for (auto [mw, mr] : stages) {
    const auto cfg = oracle::scaled(mw, mr);
    for (std::uint32_t w = 0; w < (1u << 16); ++w) {
      const auto b = oracle::bits_of(w, 16);
      const auto ev = predict_events(hyp(as_probs(b)), cfg);
      const auto ref = oracle::predict(as_probs(b), cfg);
      REQUIRE(ev.binary.states == ref.binary);
      REQUIRE(ev.sleep_onset.has_value() == ref.onset.has_value());
      if (ref.onset) REQUIRE(ev.sleep_onset->minute == *ref.onset);
      REQUIRE(ev.wake_time.has_value() == ref.wake.has_value());
      if (ref.wake) REQUIRE(ev.wake_time->minute == *ref.wake);
      onsets += ref.onset.has_value();
      wakes += ref.wake.has_value();
    }
  }
  // The sweep exercises both outcomes of both rules.
  CHECK(onsets > 10000);
  CHECK(wakes > 1000);
}

TEST_CASE("fuzzed agreement at default durations") {
  std::mt19937_64 rng(7);
  const auto cfg = raw_rules();
  std::size_t onsets = 0;
  std::size_t wakes = 0;
  for (int t = 0; t < 10000; ++t) {
    const auto b = oracle::bursty(600, rng);
    const auto on = detect_sleep_time(b, cfg);
    REQUIRE(on == oracle::sleep_time(b, cfg));
    if (!on) continue;
    ++onsets;
    const auto wk = detect_wake_time(b, cfg, *on);
    REQUIRE(wk == oracle::wake_time(b, cfg, *on));
    wakes += wk.has_value();
  }
  CHECK(onsets > 1000);
  CHECK(wakes > 100);
}

TEST_CASE("predict_events") {
  SUBCASE("clean eight-hour night") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> noise(0.0, 0.15);
    std::vector<double> p(480);
    for (std::size_t m = 0; m < p.size(); ++m) p[m] = m >= 62 && m < 455 ? 1.0 - noise(rng) : noise(rng);
    const auto ev = predict_events(hyp(p, 3600), EventRuleConfig{});
    REQUIRE(ev.sleep_onset);
    REQUIRE(ev.wake_time);
    CHECK(std::llabs(static_cast<long long>(ev.sleep_onset->minute) - 62) <= 15);
    CHECK(std::llabs(static_cast<long long>(ev.wake_time->minute) - 455) <= 15);
    CHECK(ev.sleep_onset->timestamp == 3600 + 60 * static_cast<std::int64_t>(ev.sleep_onset->minute));
    CHECK(ev.sleep_onset->timestamp < ev.wake_time->timestamp);
  }
  SUBCASE("all awake") {
    const auto ev = predict_events(hyp(std::vector<double>(300, 0.0)), EventRuleConfig{});
    CHECK_FALSE(ev.sleep_onset);
    CHECK_FALSE(ev.wake_time);
    CHECK(ev.trace.empty());
  }
  SUBCASE("invalid input") {
    CHECK_THROWS_AS(predict_events(hyp({0.2, 1.2}), EventRuleConfig{}), std::invalid_argument);
    EventRuleConfig bad;
    bad.median_width = 4;
    CHECK_THROWS_AS(predict_events(hyp({0.2}), bad), std::invalid_argument);
    bad = {};
    bad.sleep_confirm = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = {};
    bad.threshold = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
  SUBCASE("accepted onsets satisfy the forward-scan condition") {
    std::mt19937_64 rng(4);
    const EventRuleConfig cfg;
    for (int t = 0; t < 500; ++t) {
      const auto b = oracle::bursty(600, rng);
      const auto ev = predict_events(hyp(as_probs(b)), cfg);
      for (const auto& e : ev.trace) {
        if (e.kind != EventKind::sleep_onset || e.decision != Decision::accepted) continue;
        const auto& s = ev.binary.states;
        REQUIRE(e.minute > 0);
        CHECK(s[e.minute - 1] == 0);
        CHECK(s[e.minute] == 1);
        std::size_t sleep = 0, awake_run = 0, k = e.minute;
        for (; k < s.size() && sleep < cfg.sleep_confirm; ++k) {
          awake_run = s[k] ? 0 : awake_run + 1;
          sleep += s[k];
          REQUIRE(awake_run < cfg.awake_break);
        }
        CHECK(sleep == cfg.sleep_confirm);
      }
    }
  }
  SUBCASE("appending sleep never removes an onset") {
    std::mt19937_64 rng(5);
    const EventRuleConfig cfg;
    for (int t = 0; t < 300; ++t) {
      auto p = as_probs(oracle::bursty(300, rng));
      const auto before = predict_events(hyp(p), cfg).sleep_onset;
      p.insert(p.end(), 1 + rng() % 120, 1.0);
      const auto after = predict_events(hyp(p), cfg).sleep_onset;
      if (before) {
        REQUIRE(after);
        CHECK(after->minute == before->minute);
      }
    }
  }
}

TEST_CASE("incremental detection equals batch") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> jitter(0.0, 0.45);
  for (int t = 0; t < 400; ++t) {
    const auto b = oracle::bursty(1 + rng() % 500, rng);
    std::vector<double> p;
    for (auto x : b) p.push_back(x ? 1.0 - jitter(rng) : jitter(rng));
    EventRuleConfig cfg;
    if (t % 2) cfg = oracle::scaled(3, 2);
    const auto batch = predict_events(hyp(p, 120), cfg);

    IncrementalEvents inc(cfg, 120);
    std::optional<std::size_t> announced_at;
    std::optional<EventTime> announced;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (auto e = inc.push(p[i])) {
        REQUIRE_FALSE(announced);
        announced = e;
        announced_at = i;
      }
    }
    const auto fin = inc.finish();
    CHECK(fin.binary.states == batch.binary.states);
    CHECK(fin.sleep_onset == batch.sleep_onset);
    CHECK(fin.wake_time == batch.wake_time);
    REQUIRE(fin.trace.size() == batch.trace.size());
    for (std::size_t i = 0; i < fin.trace.size(); ++i) {
      CHECK(fin.trace[i].minute == batch.trace[i].minute);
      CHECK(fin.trace[i].decision == batch.trace[i].decision);
    }
    // Anything announced early is final.
    if (announced) {
      CHECK(announced == batch.sleep_onset);
      CHECK(*announced_at >= announced->minute);
    }
  }
}

TEST_CASE("file formats") {
  const Hypnogram h{600, {0.1, 0.25, 0.999999999, 0.0}};
  std::stringstream io;
  write_hypnogram(io, h);
  const auto back = read_hypnogram(io);
  CHECK(back.start_timestamp == 600);
  CHECK(back.p == h.p);

  std::istringstream gap("minute,timestamp,probability\n0,0,0.5\n1,90,0.5\n");
  CHECK_THROWS_AS(read_hypnogram(gap), data::DataError);
  std::istringstream range("minute,timestamp,probability\n0,0,1.5\n");
  CHECK_THROWS_AS(read_hypnogram(range), data::DataError);

  std::vector<double> p(60, 0.0);
  p.insert(p.end(), 300, 1.0);
  p.insert(p.end(), 40, 0.0);
  const auto ev = predict_events(hyp(p), EventRuleConfig{});
  std::ostringstream events_out, trace_out;
  write_events(events_out, ev);
  write_trace(trace_out, ev);
  CHECK(events_out.str() == "kind,timestamp,confidence_trace_ref\nsleep_onset,3600,trace#0\nwake_time,21600,trace#1\n");
  CHECK(trace_out.str().starts_with("trace#0 sleep_onset minute=60 accepted"));
  CHECK(trace_out.str().find("trace#1 wake_time minute=360 accepted") != std::string::npos);
}
