#include "somnoflow/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <tuple>

namespace somnoflow::eval {

ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("confusion: prediction has " + std::to_string(pred.size()) +
                                " samples, truth has " + std::to_string(truth.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool t = truth[i] != 0;
    if (p && t) ++c.tp;
    else if (!p && !t) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

ConfusionCounts confusion(const events::BinaryHypnogram& pred, const events::BinaryHypnogram& truth) {
  if (pred.start_timestamp != truth.start_timestamp) {
    throw std::invalid_argument("confusion: hypnograms start at different timestamps");
  }
  return confusion(pred.states, truth.states);
}

namespace {
Metric ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den) * 100.0;
}
}  // namespace

Metric accuracy(const ConfusionCounts& c) { return ratio(c.tp + c.tn, c.positives() + c.negatives()); }
Metric precision(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp); }
Metric specificity(const ConfusionCounts& c) { return ratio(c.tn, c.fp + c.tn); }
Metric sensitivity(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn); }

MetricReport make_report(std::string run_id, const ConfusionCounts& c) {
  return {std::move(run_id), c, accuracy(c), precision(c), specificity(c), sensitivity(c)};
}

std::vector<Event> to_events(const std::string& record, const events::SleepEvents& ev) {
  std::vector<Event> out;
  if (ev.sleep_onset) out.push_back({record, EventKind::sleep_onset, ev.sleep_onset->timestamp});
  if (ev.wake_time) out.push_back({record, EventKind::wake_time, ev.wake_time->timestamp});
  return out;
}

EventMatchResult match_events(std::span<const Event> predicted, std::span<const Event> truth, double tolerance_min) {
  EventMatchResult r;
  r.tolerance_min = tolerance_min;
  const double tol_s = tolerance_min * 60.0;

  struct Candidate {
    std::int64_t abs_delta;
    std::size_t p;
    std::size_t t;
  };
  std::vector<Candidate> candidates;
  for (std::size_t p = 0; p < predicted.size(); ++p) {
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (predicted[p].kind != truth[t].kind || predicted[p].record != truth[t].record) continue;
      const auto d = std::abs(predicted[p].timestamp - truth[t].timestamp);
      if (static_cast<double>(d) <= tol_s) candidates.push_back({d, p, t});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.abs_delta, a.p, a.t) < std::tie(b.abs_delta, b.p, b.t);
  });
  std::vector<bool> p_used(predicted.size(), false);
  std::vector<bool> t_used(truth.size(), false);
  auto counts = [&](EventKind k) -> KindCounts& { return k == EventKind::sleep_onset ? r.onset : r.wake; };
  for (const auto& c : candidates) {
    if (p_used[c.p] || t_used[c.t]) continue;
    p_used[c.p] = t_used[c.t] = true;
    const auto& pe = predicted[c.p];
    ++counts(pe.kind).tp;
    r.pairs.push_back({pe.record, pe.kind, pe.timestamp, truth[c.t].timestamp,
                       static_cast<double>(pe.timestamp - truth[c.t].timestamp) / 60.0});
  }
  for (std::size_t p = 0; p < predicted.size(); ++p)
    if (!p_used[p]) ++counts(predicted[p].kind).fp;
  for (std::size_t t = 0; t < truth.size(); ++t)
    if (!t_used[t]) ++counts(truth[t].kind).fn;
  return r;
}

ConfusionCounts event_period_confusion(std::optional<std::int64_t> pred_onset, std::optional<std::int64_t> pred_wake,
                                       std::optional<std::int64_t> true_onset, std::optional<std::int64_t> true_wake,
                                       std::int64_t start_timestamp, std::size_t minutes, double tolerance_min) {
  auto asleep = [](std::optional<std::int64_t> on, std::optional<std::int64_t> off, std::int64_t t) {
    return on && t >= *on && (!off || t < *off);
  };
  const double tol_s = tolerance_min * 60.0;
  auto near = [&](std::optional<std::int64_t> e, std::int64_t t) {
    return e && std::abs(static_cast<double>(t - *e)) < tol_s;
  };
  std::vector<std::uint8_t> pred;
  std::vector<std::uint8_t> truth;
  for (std::size_t m = 0; m < minutes; ++m) {
    const std::int64_t t = start_timestamp + static_cast<std::int64_t>(m) * kMinuteSeconds;
    if (near(true_onset, t) || near(true_wake, t)) continue;
    pred.push_back(asleep(pred_onset, pred_wake, t) ? 1 : 0);
    truth.push_back(asleep(true_onset, true_wake, t) ? 1 : 0);
  }
  return confusion(pred, truth);
}

TrueEvents main_sleep_period(std::span<const data::Transition> transitions) {
  TrueEvents t;
  for (const auto& tr : transitions) {
    if (!t.sleep_onset) {
      if (tr.kind == EventKind::sleep_onset) t.sleep_onset = tr.timestamp;
    } else if (tr.kind == EventKind::wake_time) {
      t.wake_time = tr.timestamp;
    }
  }
  return t;
}

NightScore score_night(const std::string& record, const events::Hypnogram& h, const events::SleepEvents& ev,
                       std::span<const std::optional<std::uint8_t>> truth,
                       std::span<const data::Transition> transitions, double threshold, double tolerance_min) {
  if (truth.size() != h.p.size()) {
    throw std::invalid_argument("score_night: truth has " + std::to_string(truth.size()) + " minutes, hypnogram " +
                                std::to_string(h.p.size()));
  }
  NightScore s;
  s.record = record;
  std::vector<std::uint8_t> pred;
  std::vector<std::uint8_t> ref;
  for (std::size_t i = 0; i < h.p.size(); ++i) {
    if (!truth[i]) continue;
    pred.push_back(h.p[i] >= threshold ? 1 : 0);
    ref.push_back(*truth[i]);
  }
  s.states = confusion(pred, ref);

  s.truth = main_sleep_period(transitions);
  std::optional<std::int64_t> p_on;
  std::optional<std::int64_t> p_wake;
  if (ev.sleep_onset) p_on = ev.sleep_onset->timestamp;
  if (ev.wake_time) p_wake = ev.wake_time->timestamp;
  s.timing = event_period_confusion(p_on, p_wake, s.truth.sleep_onset, s.truth.wake_time, h.start_timestamp,
                                    h.p.size(), tolerance_min);

  std::vector<Event> truth_events;
  if (s.truth.sleep_onset) truth_events.push_back({record, EventKind::sleep_onset, *s.truth.sleep_onset});
  if (s.truth.wake_time) truth_events.push_back({record, EventKind::wake_time, *s.truth.wake_time});
  const auto predicted = to_events(record, ev);
  s.matches = match_events(predicted, truth_events, tolerance_min);
  auto within = [&](std::optional<std::int64_t> p, std::optional<std::int64_t> t) {
    if (!p && !t) return true;
    return p && t && std::abs(static_cast<double>(*p - *t)) <= tolerance_min * 60.0;
  };
  s.onset_within = within(p_on, s.truth.sleep_onset);
  s.wake_within = within(p_wake, s.truth.wake_time);
  return s;
}

namespace {

MetricSummary summarize(std::span<const MetricReport> reports, Metric MetricReport::*field, const char* name) {
  MetricSummary s;
  std::vector<double> xs;
  for (const auto& r : reports) {
    if (r.*field) {
      xs.push_back(*(r.*field));
    } else {
      ++s.excluded;
      warn(std::string(name) + " undefined in run '" + r.run_id + "'; excluded from its mean");
    }
  }
  s.defined = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  s.mean = mean;
  if (xs.size() == 1) {
    s.std = 0.0;
  } else {
    double sq = 0.0;
    for (double x : xs) sq += (x - mean) * (x - mean);
    s.std = std::sqrt(sq / static_cast<double>(xs.size() - 1));
  }
  return s;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v);
  return buf;
}

}  // namespace

AggregateReport aggregate_runs(std::span<const MetricReport> reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate_runs: no reports");
  AggregateReport a;
  a.runs = reports.size();
  a.accuracy = summarize(reports, &MetricReport::accuracy, "accuracy");
  a.precision = summarize(reports, &MetricReport::precision, "precision");
  a.specificity = summarize(reports, &MetricReport::specificity, "specificity");
  a.sensitivity = summarize(reports, &MetricReport::sensitivity, "sensitivity");
  return a;
}

void print_report(std::ostream& out, const MetricReport& r) {
  out << "run: " << r.run_id << '\n'
      << "  counts: TP=" << r.counts.tp << " TN=" << r.counts.tn << " FP=" << r.counts.fp << " FN=" << r.counts.fn
      << '\n'
      << "  accuracy: " << fmt(r.accuracy) << '\n'
      << "  precision: " << fmt(r.precision) << '\n'
      << "  specificity: " << fmt(r.specificity) << '\n'
      << "  sensitivity: " << fmt(r.sensitivity) << '\n';
}

void print_aggregate(std::ostream& out, const std::string& title, const AggregateReport& a) {
  out << "aggregate: " << title << " (" << a.runs << " runs)\n";
  auto line = [&](const char* name, const MetricSummary& s) {
    out << "  " << name << ": mean=" << fmt(s.mean) << " std=" << fmt(s.std);
    if (s.excluded) out << " excluded=" << s.excluded;
    out << '\n';
  };
  line("accuracy", a.accuracy);
  line("precision", a.precision);
  line("specificity", a.specificity);
  line("sensitivity", a.sensitivity);
}

void write_reports_csv(std::ostream& out, std::span<const MetricReport> reports) {
  out << "run_id,tp,tn,fp,fn,accuracy,precision,specificity,sensitivity\n";
  auto cell = [](const Metric& m) { return m ? fmt(m) : std::string(); };
  for (const auto& r : reports) {
    out << r.run_id << ',' << r.counts.tp << ',' << r.counts.tn << ',' << r.counts.fp << ',' << r.counts.fn << ','
        << cell(r.accuracy) << ',' << cell(r.precision) << ',' << cell(r.specificity) << ','
        << cell(r.sensitivity) << '\n';
  }
}

void emit_plotdata(std::ostream& out, const events::Hypnogram& h, const events::SleepEvents& ev,
                   std::span<const std::optional<std::uint8_t>> truth) {
  if (!truth.empty() && truth.size() != h.p.size()) {
    throw std::invalid_argument("plotdata: truth length does not match the hypnogram");
  }
  if (!ev.binary.states.empty() && ev.binary.states.size() != h.p.size()) {
    throw std::invalid_argument("plotdata: binarized length does not match the hypnogram");
  }
  out << "minute,timestamp,probability,binarized,truth,event\n";
  char buf[32];
  for (std::size_t i = 0; i < h.p.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", h.p[i]);
    out << i << ',' << h.timestamp_at(i) << ',' << buf << ',';
    if (!ev.binary.states.empty()) out << static_cast<int>(ev.binary.states[i]);
    out << ',';
    if (!truth.empty() && truth[i]) out << static_cast<int>(*truth[i]);
    out << ',';
    if (ev.sleep_onset && ev.sleep_onset->minute == i) out << "sleep_onset";
    if (ev.wake_time && ev.wake_time->minute == i) out << "wake_time";
    out << '\n';
  }
}

void emit_plotdata(const std::string& path, const events::Hypnogram& h, const events::SleepEvents& ev,
                   std::span<const std::optional<std::uint8_t>> truth) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write plot data '" + path + "'");
  emit_plotdata(out, h, ev, truth);
  if (!out) throw std::ios_base::failure("write failed for '" + path + "'");
}

}  // namespace somnoflow::eval
