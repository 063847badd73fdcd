#pragma once

// Sleep-onset and wake-up detection from per-minute sleep probabilities.
//
// Pipeline: moving-median smoothing -> threshold -> short-run suppression ->
// onset rule -> wake rule. Every duration is a parameter so the rules can be
// verified exhaustively at small scale.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "somnoflow/common.hpp"

namespace somnoflow::events {

struct Hypnogram {
  std::int64_t start_timestamp{0};  // start of the first minute
  std::vector<double> p;            // sleep probability per minute

  std::int64_t timestamp_at(std::size_t minute) const {
    return start_timestamp + static_cast<std::int64_t>(minute) * kMinuteSeconds;
  }
  /// Throws std::invalid_argument when any value is outside [0,1].
  void validate() const;
};

struct BinaryHypnogram {
  std::int64_t start_timestamp{0};
  std::vector<std::uint8_t> states;  // 0 awake, 1 sleep
};

struct EventRuleConfig {
  double threshold{0.5};
  std::size_t median_width{5};   // 1 disables smoothing
  std::size_t min_run{3};        // 1 disables run suppression
  std::size_t sleep_confirm{45};
  std::size_t awake_break{10};
  std::size_t wake_confirm{15};
  std::size_t reentry_run{10};

  /// Throws nn-independent std::invalid_argument on bad values.
  void validate() const;
};

enum class Decision { accepted, rejected, pending };

const char* to_string(Decision d);

struct TraceEntry {
  EventKind kind;
  std::size_t minute;
  Decision decision;
  std::string reason;
};

struct EventTime {
  std::size_t minute;
  std::int64_t timestamp;
  bool operator==(const EventTime&) const = default;
};

struct SleepEvents {
  std::optional<EventTime> sleep_onset;
  std::optional<EventTime> wake_time;
  std::vector<TraceEntry> trace;
  BinaryHypnogram binary;  // the sequence the rules were applied to
};

/// Median over a centered window; near the edges the window shrinks
/// symmetrically. Length is preserved.
Hypnogram smooth_probs(const Hypnogram& h, std::size_t median_width);

/// state = 1 iff p >= threshold.
BinaryHypnogram binarize(const Hypnogram& h, double threshold);

/// Flips every interior run shorter than min_run to the state of its
/// neighbours (which share a state), leftmost first, until none remain. The
/// first and last runs are exempt.
BinaryHypnogram suppress_short_runs(const BinaryHypnogram& b, std::size_t min_run);

/// First awake->sleep transition from which sleep_confirm sleep minutes
/// accrue before any awake run of awake_break minutes.
std::optional<std::size_t> detect_sleep_time(std::span<const std::uint8_t> b, const EventRuleConfig& cfg,
                                             std::vector<TraceEntry>* trace = nullptr);

/// Earliest sleep->awake transition after the onset that is followed by at
/// least wake_confirm awake minutes, with no sleep run of reentry_run minutes
/// anywhere after it.
std::optional<std::size_t> detect_wake_time(std::span<const std::uint8_t> b, const EventRuleConfig& cfg,
                                            std::size_t sleep_onset, std::vector<TraceEntry>* trace = nullptr);

SleepEvents predict_events(const Hypnogram& h, const EventRuleConfig& cfg);

// ---------------------------------------------------------------------------
// incremental building blocks

/// Streaming form of suppress_short_runs: push() emits values as soon as they
/// can no longer change; finish() flushes the (exempt) last run.
class RunSuppressor {
 public:
  explicit RunSuppressor(std::size_t min_run) : min_run_(min_run) {}
  void push(std::uint8_t x, std::vector<std::uint8_t>& out);
  void finish(std::vector<std::uint8_t>& out);

 private:
  std::size_t min_run_;
  bool started_{false};
  std::uint8_t current_{0};
  std::size_t pending_{0};  // length of an unsettled run of !current_
};

/// Streaming form of the onset rule.
class OnsetTracker {
 public:
  explicit OnsetTracker(const EventRuleConfig& cfg) : cfg_(cfg) {}
  /// Returns the accepted onset minute the first time it becomes known.
  std::optional<std::size_t> push(std::uint8_t x);
  /// Marks still-undecided candidates as pending in the trace.
  void finish();

  std::optional<std::size_t> accepted() const { return accepted_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }

 private:
  EventRuleConfig cfg_;
  std::size_t index_{0};
  std::uint8_t prev_{0};
  std::vector<std::size_t> candidates_;
  std::size_t sleep_count_{0};
  std::size_t awake_run_{0};
  std::optional<std::size_t> accepted_;
  std::vector<TraceEntry> trace_;
};

/// Minute-by-minute version of predict_events. The onset is reported as
/// soon as it is confirmed on the values that can no longer change; finish()
/// returns exactly what predict_events returns on the whole sequence.
class IncrementalEvents {
 public:
  IncrementalEvents(const EventRuleConfig& cfg, std::int64_t start_timestamp);

  std::optional<EventTime> push(double p);
  SleepEvents finish() const;

  std::size_t minutes() const { return probs_.p.size(); }
  const Hypnogram& hypnogram() const { return probs_; }

 private:
  EventRuleConfig cfg_;
  Hypnogram probs_;
  std::size_t smoothed_{0};
  RunSuppressor suppressor_;
  std::vector<std::uint8_t> settled_;
  std::size_t fed_{0};
  OnsetTracker onset_;
};

// ---------------------------------------------------------------------------
// files

/// `minute,timestamp,probability`
void write_hypnogram(std::ostream& out, const Hypnogram& h);
Hypnogram read_hypnogram(std::istream& in);

/// `kind,timestamp,confidence_trace_ref` rows; the ref points into the trace dump.
void write_events(std::ostream& out, const SleepEvents& ev);
/// One line per trace entry: `trace#i kind minute decision reason`.
void write_trace(std::ostream& out, const SleepEvents& ev);

}  // namespace somnoflow::events
