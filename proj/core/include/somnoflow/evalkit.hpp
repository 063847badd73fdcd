#pragma once

// Confusion-matrix metrics (positive class = sleep), event matching with a
// relaxation tolerance, multi-run aggregation and plot data.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "somnoflow/common.hpp"
#include "somnoflow/datapipe.hpp"
#include "somnoflow/events.hpp"

namespace somnoflow::eval {

struct ConfusionCounts {
  std::uint64_t tp{0};
  std::uint64_t tn{0};
  std::uint64_t fp{0};
  std::uint64_t fn{0};

  std::uint64_t positives() const { return tp + fn; }
  std::uint64_t negatives() const { return tn + fp; }
  std::uint64_t total() const { return tp + tn + fp + fn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Percentage, or nullopt when the denominator is zero.
using Metric = std::optional<double>;

ConfusionCounts confusion(const events::BinaryHypnogram& pred, const events::BinaryHypnogram& truth);
ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

Metric accuracy(const ConfusionCounts& c);
Metric precision(const ConfusionCounts& c);
Metric specificity(const ConfusionCounts& c);
Metric sensitivity(const ConfusionCounts& c);

struct MetricReport {
  std::string run_id;
  ConfusionCounts counts;
  Metric accuracy;
  Metric precision;
  Metric specificity;
  Metric sensitivity;
};

MetricReport make_report(std::string run_id, const ConfusionCounts& c);

struct Event {
  std::string record;
  EventKind kind;
  std::int64_t timestamp;
};

struct MatchedPair {
  std::string record;
  EventKind kind;
  std::int64_t predicted;
  std::int64_t truth;
  double error_min;  // predicted - truth
};

struct KindCounts {
  std::size_t tp{0};
  std::size_t fp{0};
  std::size_t fn{0};
};

struct EventMatchResult {
  KindCounts onset;
  KindCounts wake;
  std::vector<MatchedPair> pairs;
  double tolerance_min{15.0};

  const KindCounts& of(EventKind k) const { return k == EventKind::sleep_onset ? onset : wake; }
};

/// Events of one record's prediction, for match_events.
std::vector<Event> to_events(const std::string& record, const events::SleepEvents& ev);

/// Greedy nearest-first matching within each (record, kind); |delta| <= tolerance is a TP.
EventMatchResult match_events(std::span<const Event> predicted, std::span<const Event> truth,
                              double tolerance_min = 15.0);

/// Minute-level scoring of event timing: each side is turned into a
/// sleep-period mask [onset, wake) over `minutes` minutes, and minutes within
/// the tolerance of a true event are skipped.
ConfusionCounts event_period_confusion(std::optional<std::int64_t> pred_onset, std::optional<std::int64_t> pred_wake,
                                       std::optional<std::int64_t> true_onset, std::optional<std::int64_t> true_wake,
                                       std::int64_t start_timestamp, std::size_t minutes, double tolerance_min = 15.0);

/// Reference events of a record: the first sleep onset and the last wake
/// time after it.
struct TrueEvents {
  std::optional<std::int64_t> sleep_onset;
  std::optional<std::int64_t> wake_time;
};

TrueEvents main_sleep_period(std::span<const data::Transition> transitions);

struct NightScore {
  std::string record;
  ConfusionCounts states;  // thresholded probabilities vs minute truth
  ConfusionCounts timing;  // event_period_confusion
  EventMatchResult matches;
  TrueEvents truth;
  bool onset_within{false};  // both absent, or |delta| <= tolerance
  bool wake_within{false};
};

/// Scores one record. `truth` is aligned with the hypnogram; unknown minutes
/// are skipped.
NightScore score_night(const std::string& record, const events::Hypnogram& h, const events::SleepEvents& ev,
                       std::span<const std::optional<std::uint8_t>> truth,
                       std::span<const data::Transition> transitions, double threshold = 0.5,
                       double tolerance_min = 15.0);

struct MetricSummary {
  std::optional<double> mean;
  std::optional<double> std;  // sample std; 0 with a single defined value
  std::size_t defined{0};
  std::size_t excluded{0};  // runs where this metric was undefined
};

struct AggregateReport {
  std::size_t runs{0};
  MetricSummary accuracy;
  MetricSummary precision;
  MetricSummary specificity;
  MetricSummary sensitivity;
};

AggregateReport aggregate_runs(std::span<const MetricReport> reports);

/// Structured text, one `key: value` per line; undefined metrics print as "undefined".
void print_report(std::ostream& out, const MetricReport& r);
void print_aggregate(std::ostream& out, const std::string& title, const AggregateReport& a);
/// `run_id,tp,tn,fp,fn,accuracy,precision,specificity,sensitivity`
void write_reports_csv(std::ostream& out, std::span<const MetricReport> reports);

/// Tidy per-minute CSV: `minute,timestamp,probability,binarized,truth,event`.
/// `truth` may be empty (unknown); `event` is empty except on event minutes.
void emit_plotdata(std::ostream& out, const events::Hypnogram& h, const events::SleepEvents& ev,
                   std::span<const std::optional<std::uint8_t>> truth);
void emit_plotdata(const std::string& path, const events::Hypnogram& h, const events::SleepEvents& ev,
                   std::span<const std::optional<std::uint8_t>> truth);

}  // namespace somnoflow::eval
