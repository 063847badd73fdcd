#include "somnoflow/events.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "csv_util.hpp"

namespace somnoflow::events {

void Hypnogram::validate() const {
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) {
      throw std::invalid_argument("hypnogram minute " + std::to_string(i) + " has probability outside [0,1]");
    }
  }
}

void EventRuleConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must be in (0,1)");
  if (median_width == 0 || median_width % 2 == 0) {
    throw std::invalid_argument("median width must be odd, got " + std::to_string(median_width));
  }
  if (min_run == 0 || sleep_confirm == 0 || awake_break == 0 || wake_confirm == 0 || reentry_run == 0) {
    throw std::invalid_argument("rule durations must be >= 1 minute");
  }
}

const char* to_string(Decision d) {
  switch (d) {
    case Decision::accepted: return "accepted";
    case Decision::rejected: return "rejected";
    case Decision::pending: return "pending";
  }
  return "?";
}

namespace {

double median_at(std::span<const double> p, std::size_t i, std::size_t half_width, std::vector<double>& scratch) {
  const std::size_t r = std::min({half_width, i, p.size() - 1 - i});
  scratch.assign(p.begin() + static_cast<std::ptrdiff_t>(i - r), p.begin() + static_cast<std::ptrdiff_t>(i + r + 1));
  auto mid = scratch.begin() + static_cast<std::ptrdiff_t>(r);
  std::nth_element(scratch.begin(), mid, scratch.end());
  return *mid;
}

}  // namespace

Hypnogram smooth_probs(const Hypnogram& h, std::size_t median_width) {
  if (median_width == 0 || median_width % 2 == 0) {
    throw std::invalid_argument("median width must be odd, got " + std::to_string(median_width));
  }
  Hypnogram out{h.start_timestamp, std::vector<double>(h.p.size())};
  std::vector<double> scratch;
  for (std::size_t i = 0; i < h.p.size(); ++i) out.p[i] = median_at(h.p, i, median_width / 2, scratch);
  return out;
}

BinaryHypnogram binarize(const Hypnogram& h, double threshold) {
  BinaryHypnogram b{h.start_timestamp, std::vector<std::uint8_t>(h.p.size())};
  for (std::size_t i = 0; i < h.p.size(); ++i) b.states[i] = h.p[i] >= threshold ? 1 : 0;
  return b;
}

// Flipping an interior run merges it with both neighbours, so after the
// leftmost short run is handled everything to its left is settled; a single
// left-to-right pass therefore reaches the fixpoint.
void RunSuppressor::push(std::uint8_t x, std::vector<std::uint8_t>& out) {
  if (!started_) {
    started_ = true;
    current_ = x;
    out.push_back(x);
    return;
  }
  if (pending_ == 0) {
    if (x == current_) {
      out.push_back(x);
      return;
    }
    pending_ = 1;
  } else if (x != current_) {
    ++pending_;
  } else {
    // The pending run ended short and now has a successor: it is interior.
    out.insert(out.end(), pending_, current_);
    pending_ = 0;
    out.push_back(x);
    return;
  }
  if (pending_ >= min_run_) {
    current_ = static_cast<std::uint8_t>(1 - current_);
    out.insert(out.end(), pending_, current_);
    pending_ = 0;
  }
}

void RunSuppressor::finish(std::vector<std::uint8_t>& out) {
  if (pending_ > 0) {
    out.insert(out.end(), pending_, static_cast<std::uint8_t>(1 - current_));
    pending_ = 0;
  }
}

BinaryHypnogram suppress_short_runs(const BinaryHypnogram& b, std::size_t min_run) {
  if (min_run == 0) throw std::invalid_argument("min_run must be >= 1");
  BinaryHypnogram out{b.start_timestamp, {}};
  out.states.reserve(b.states.size());
  RunSuppressor s(min_run);
  for (auto x : b.states) s.push(x, out.states);
  s.finish(out.states);
  return out;
}

std::optional<std::size_t> OnsetTracker::push(std::uint8_t x) {
  const std::size_t i = index_++;
  const std::uint8_t prev = prev_;
  prev_ = x;
  if (accepted_) return std::nullopt;
  if (x == 1) {
    awake_run_ = 0;
    if (i > 0 && prev == 0) candidates_.push_back(i);
    if (!candidates_.empty() && ++sleep_count_ >= cfg_.sleep_confirm) {
      accepted_ = candidates_.front();
      trace_.push_back({EventKind::sleep_onset, *accepted_, Decision::accepted,
                        std::to_string(cfg_.sleep_confirm) + " sleep minutes by minute " + std::to_string(i) +
                            " without an awake run of " + std::to_string(cfg_.awake_break)});
      candidates_.clear();
      return accepted_;
    }
  } else {
    ++awake_run_;
    if (awake_run_ >= cfg_.awake_break && !candidates_.empty()) {
      // Every open candidate precedes this awake run, so all fail together.
      for (auto c : candidates_) {
        trace_.push_back({EventKind::sleep_onset, c, Decision::rejected,
                          "awake run of " + std::to_string(cfg_.awake_break) + " reached at minute " +
                              std::to_string(i)});
      }
      candidates_.clear();
      sleep_count_ = 0;
    }
  }
  return std::nullopt;
}

void OnsetTracker::finish() {
  for (auto c : candidates_) {
    trace_.push_back({EventKind::sleep_onset, c, Decision::pending, "record ended before confirmation"});
  }
  candidates_.clear();
}

std::optional<std::size_t> detect_sleep_time(std::span<const std::uint8_t> b, const EventRuleConfig& cfg,
                                             std::vector<TraceEntry>* trace) {
  OnsetTracker t(cfg);
  for (auto x : b) {
    t.push(x);
    if (t.accepted()) break;
  }
  t.finish();
  if (trace) trace->insert(trace->end(), t.trace().begin(), t.trace().end());
  return t.accepted();
}

std::optional<std::size_t> detect_wake_time(std::span<const std::uint8_t> b, const EventRuleConfig& cfg,
                                            std::size_t sleep_onset, std::vector<TraceEntry>* trace) {
  const std::size_t n = b.size();
  // Start of the last sleep run long enough to count as falling back asleep.
  std::optional<std::size_t> last_long_sleep_end;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && b[j] == b[i]) ++j;
    if (b[i] == 1 && j - i >= cfg.reentry_run) last_long_sleep_end = j;
    i = j;
  }
  for (std::size_t j = sleep_onset + 1; j < n; ++j) {
    if (!(b[j] == 0 && b[j - 1] == 1)) continue;
    std::size_t run = 0;
    while (j + run < n && b[j + run] == 0) ++run;
    if (run < cfg.wake_confirm) {
      if (trace) {
        trace->push_back({EventKind::wake_time, j, Decision::rejected,
                          "awake run of " + std::to_string(run) + " < " + std::to_string(cfg.wake_confirm)});
      }
      continue;
    }
    if (last_long_sleep_end && *last_long_sleep_end > j) {
      if (trace) {
        trace->push_back({EventKind::wake_time, j, Decision::rejected,
                          "sleep run of >= " + std::to_string(cfg.reentry_run) + " ends at minute " +
                              std::to_string(*last_long_sleep_end) + " later"});
      }
      continue;
    }
    if (trace) {
      trace->push_back({EventKind::wake_time, j, Decision::accepted,
                        "awake run of " + std::to_string(run) + " with no later sleep run of " +
                            std::to_string(cfg.reentry_run)});
    }
    return j;
  }
  return std::nullopt;
}

namespace {

BinaryHypnogram process(const Hypnogram& h, const EventRuleConfig& cfg) {
  return suppress_short_runs(binarize(smooth_probs(h, cfg.median_width), cfg.threshold), cfg.min_run);
}

void finish_events(SleepEvents& ev, std::int64_t start, const EventRuleConfig& cfg) {
  auto at = [&](std::size_t m) { return EventTime{m, start + static_cast<std::int64_t>(m) * kMinuteSeconds}; };
  if (ev.sleep_onset) {
    if (auto w = detect_wake_time(ev.binary.states, cfg, ev.sleep_onset->minute, &ev.trace)) ev.wake_time = at(*w);
  }
}

}  // namespace

SleepEvents predict_events(const Hypnogram& h, const EventRuleConfig& cfg) {
  cfg.validate();
  h.validate();
  SleepEvents ev;
  ev.binary = process(h, cfg);
  if (auto s = detect_sleep_time(ev.binary.states, cfg, &ev.trace)) {
    ev.sleep_onset = EventTime{*s, h.timestamp_at(*s)};
  }
  finish_events(ev, h.start_timestamp, cfg);
  return ev;
}

// ---------------------------------------------------------------------------

IncrementalEvents::IncrementalEvents(const EventRuleConfig& cfg, std::int64_t start_timestamp)
    : cfg_(cfg), probs_{start_timestamp, {}}, suppressor_(cfg.min_run), onset_(cfg) {
  cfg_.validate();
}

std::optional<EventTime> IncrementalEvents::push(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probability outside [0,1]");
  probs_.p.push_back(p);
  const std::size_t half = cfg_.median_width / 2;
  std::vector<double> scratch;
  std::optional<EventTime> newly;
  // A smoothed value is final once its full right half-window has arrived.
  while (smoothed_ + half < probs_.p.size()) {
    const double s = median_at(probs_.p, smoothed_, half, scratch);
    ++smoothed_;
    suppressor_.push(s >= cfg_.threshold ? 1 : 0, settled_);
  }
  while (fed_ < settled_.size()) {
    if (auto m = onset_.push(settled_[fed_++])) newly = EventTime{*m, probs_.timestamp_at(*m)};
  }
  return newly;
}

SleepEvents IncrementalEvents::finish() const {
  SleepEvents ev;
  ev.binary.start_timestamp = probs_.start_timestamp;
  ev.binary.states = settled_;
  RunSuppressor tail = suppressor_;
  std::vector<double> scratch;
  for (std::size_t i = smoothed_; i < probs_.p.size(); ++i) {
    tail.push(median_at(probs_.p, i, cfg_.median_width / 2, scratch) >= cfg_.threshold ? 1 : 0, ev.binary.states);
  }
  tail.finish(ev.binary.states);

  OnsetTracker onset = onset_;
  for (std::size_t i = fed_; i < ev.binary.states.size() && !onset.accepted(); ++i) onset.push(ev.binary.states[i]);
  onset.finish();
  ev.trace = onset.trace();
  if (auto s = onset.accepted()) ev.sleep_onset = EventTime{*s, probs_.timestamp_at(*s)};
  finish_events(ev, probs_.start_timestamp, cfg_);
  return ev;
}

// ---------------------------------------------------------------------------

void write_hypnogram(std::ostream& out, const Hypnogram& h) {
  out << "minute,timestamp,probability\n";
  char buf[32];
  for (std::size_t i = 0; i < h.p.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", h.p[i]);
    out << i << ',' << h.timestamp_at(i) << ',' << buf << '\n';
  }
}

Hypnogram read_hypnogram(std::istream& in) {
  std::string line;
  if (!csv::next_line(in, line) || line != "minute,timestamp,probability") {
    throw data::DataError(0, "hypnogram header must be 'minute,timestamp,probability'");
  }
  Hypnogram h;
  std::size_t row = 0;
  while (csv::next_line(in, line)) {
    ++row;
    const auto f = csv::split(line);
    if (f.size() != 3) throw data::DataError(row, "expected 3 fields");
    const auto minute = csv::parse_int(f[0], row, "minute");
    const auto ts = csv::parse_int(f[1], row, "timestamp");
    if (minute != static_cast<std::int64_t>(row - 1)) throw data::DataError(row, "minutes must be consecutive from 0");
    if (row == 1) h.start_timestamp = ts;
    if (ts != h.timestamp_at(row - 1)) throw data::DataError(row, "timestamps must be 60 s apart");
    const double p = csv::parse_real<double>(f[2], row, "probability");
    if (!(p >= 0.0 && p <= 1.0)) throw data::DataError(row, "probability outside [0,1]");
    h.p.push_back(p);
  }
  return h;
}

void write_events(std::ostream& out, const SleepEvents& ev) {
  out << "kind,timestamp,confidence_trace_ref\n";
  auto ref = [&](EventKind kind) {
    for (std::size_t i = 0; i < ev.trace.size(); ++i) {
      if (ev.trace[i].kind == kind && ev.trace[i].decision == Decision::accepted) return "trace#" + std::to_string(i);
    }
    return std::string("-");
  };
  if (ev.sleep_onset) out << "sleep_onset," << ev.sleep_onset->timestamp << ',' << ref(EventKind::sleep_onset) << '\n';
  if (ev.wake_time) out << "wake_time," << ev.wake_time->timestamp << ',' << ref(EventKind::wake_time) << '\n';
}

void write_trace(std::ostream& out, const SleepEvents& ev) {
  for (std::size_t i = 0; i < ev.trace.size(); ++i) {
    const auto& t = ev.trace[i];
    out << "trace#" << i << ' ' << to_string(t.kind) << " minute=" << t.minute << ' ' << to_string(t.decision)
        << ' ' << t.reason << '\n';
  }
}

}  // namespace somnoflow::events
