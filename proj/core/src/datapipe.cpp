#include "somnoflow/datapipe.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>

#include "csv_util.hpp"

namespace somnoflow {

namespace {
std::mutex g_warn_mutex;
WarningHandler g_warn_handler;
}  // namespace

WarningHandler set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(g_warn_mutex);
  std::swap(handler, g_warn_handler);
  return handler;
}

void warn(std::string_view message) {
  std::lock_guard lock(g_warn_mutex);
  if (g_warn_handler) {
    g_warn_handler(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace somnoflow

namespace somnoflow::data {

float EpochRecord::feature(Feature f) const {
  switch (f) {
    case Feature::hr: return hr;
    case Feature::br: return br;
    case Feature::hr_conf: return hr_conf;
    case Feature::movement: return movement;
    case Feature::hr_diff: return hr_diff;
  }
  return 0.0f;
}

bool EpochSeries::fully_labeled() const {
  return std::all_of(epochs.begin(), epochs.end(), [](const EpochRecord& e) { return e.label.has_value(); });
}

void derive_hr_diff(std::vector<EpochRecord>& epochs) {
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    epochs[i].hr_diff = i == 0 ? 0.0f : epochs[i].hr - epochs[i - 1].hr;
  }
}

// ---------------------------------------------------------------------------
// ingestion

namespace {

std::optional<SleepState> parse_label(std::string_view s, std::size_t row) {
  if (s.empty()) return std::nullopt;
  if (s == "1" || s == "sleep") return SleepState::sleep;
  if (s == "0" || s == "awake") return SleepState::awake;
  throw DataError(row, "label must be 0, 1, awake or sleep, got '" + std::string(s) + "'");
}

void validate_record(const EpochRecord& r, std::size_t row) {
  if (!(r.hr >= 0.0f) || !std::isfinite(r.hr)) throw DataError(row, "hr must be a non-negative number");
  if (!(r.br >= 0.0f) || !std::isfinite(r.br)) throw DataError(row, "br must be a non-negative number");
  if (!(r.hr_conf >= 0.0f && r.hr_conf <= 1.0f)) throw DataError(row, "hr_conf out of range [0,1]");
  if (!(r.movement >= 0.0f) || !std::isfinite(r.movement)) {
    throw DataError(row, "movement must be a non-negative number");
  }
  if (r.timestamp % kEpochSeconds != 0) throw DataError(row, "timestamp is not a multiple of 30 s");
}

}  // namespace

EpochSeries ingest_epochs(std::istream& in, const IngestOptions& options) {
  EpochSeries series;
  series.subject_id = options.subject_id;
  series.source = SourceTag::ingested;

  std::string line;
  if (!csv::next_line(in, line)) throw DataError(0, "missing CSV header");
  const auto header = csv::split(line);
  std::map<std::string, std::size_t, std::less<>> col;
  for (std::size_t i = 0; i < header.size(); ++i) col.emplace(std::string(header[i]), i);
  for (const char* required : {"timestamp", "hr", "br", "hr_conf", "movement"}) {
    if (!col.contains(required)) throw DataError(0, std::string("missing column '") + required + "'");
  }
  const auto label_col = col.find("label");

  std::size_t row = 0;
  while (csv::next_line(in, line)) {
    ++row;
    const auto fields = csv::split(line);
    auto field = [&](std::string_view name) -> std::string_view {
      const std::size_t idx = col.find(name)->second;
      if (idx >= fields.size()) throw DataError(row, "missing value for '" + std::string(name) + "'");
      return fields[idx];
    };
    EpochRecord r;
    r.timestamp = csv::parse_int(field("timestamp"), row, "timestamp");
    r.hr = csv::parse_float(field("hr"), row, "hr");
    r.br = csv::parse_float(field("br"), row, "br");
    r.hr_conf = csv::parse_float(field("hr_conf"), row, "hr_conf");
    r.movement = csv::parse_float(field("movement"), row, "movement");
    if (label_col != col.end() && label_col->second < fields.size()) {
      r.label = parse_label(fields[label_col->second], row);
    }
    validate_record(r, row);

    if (!series.epochs.empty()) {
      const auto& prev = series.epochs.back();
      if (r.timestamp <= prev.timestamp) {
        throw DataError(row, "timestamps not strictly increasing (" + std::to_string(r.timestamp) +
                                 " after " + std::to_string(prev.timestamp) + ")");
      }
      const std::int64_t missing = (r.timestamp - prev.timestamp) / kEpochSeconds - 1;
      if (missing > 0) {
        if (!options.fill_gaps || missing > 2) {
          throw DataError(row, "timestamp gap of " + std::to_string(missing) + " epoch(s) before " +
                                   std::to_string(r.timestamp));
        }
        for (std::int64_t k = 0; k < missing; ++k) {
          EpochRecord fill = series.epochs.back();
          fill.timestamp += kEpochSeconds;
          series.epochs.push_back(fill);
        }
      }
    }
    series.epochs.push_back(r);
  }
  derive_hr_diff(series.epochs);
  return series;
}

EpochSeries load_epochs(const std::string& path, const IngestOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open epoch file '" + path + "'");
  IngestOptions opts = options;
  if (opts.subject_id.empty()) opts.subject_id = path;
  return ingest_epochs(in, opts);
}

void write_epochs(std::ostream& out, const EpochSeries& series) {
  const bool labeled = series.fully_labeled() && !series.epochs.empty();
  out << "timestamp,hr,br,hr_conf,movement" << (labeled ? ",label" : "") << '\n';
  for (const auto& e : series.epochs) {
    out << e.timestamp << ',' << csv::format_float(e.hr) << ',' << csv::format_float(e.br) << ','
        << csv::format_float(e.hr_conf) << ',' << csv::format_float(e.movement);
    if (labeled) out << ',' << static_cast<int>(*e.label);
    out << '\n';
  }
}

void save_epochs(const std::string& path, const EpochSeries& series) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write epoch file '" + path + "'");
  write_epochs(out, series);
  if (!out) throw std::ios_base::failure("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// windows

FeatureWindow window_at(std::span<const EpochRecord> epochs, std::size_t first,
                        std::size_t window_epochs) {
  if (first + window_epochs > epochs.size()) throw nn::ShapeError("window runs past the series end");
  FeatureWindow w{nn::FeatureMap<float>(kFeatureCount, window_epochs), 0, std::nullopt, false};
  for (std::size_t j = 0; j < window_epochs; ++j) {
    const auto& e = epochs[first + j];
    for (std::size_t f = 0; f < kFeatureCount; ++f) w.features(f, j) = e.feature(static_cast<Feature>(f));
  }
  const auto& last = epochs[first + window_epochs - 1];
  w.end_timestamp = last.timestamp + kEpochSeconds;
  if (window_epochs >= 2) {
    const auto& before = epochs[first + window_epochs - 2];
    if (last.label && before.label && *last.label == *before.label) w.label = last.label;
  } else {
    w.label = last.label;
  }
  return w;
}

std::vector<FeatureWindow> make_windows(const EpochSeries& series, std::size_t window_epochs,
                                        std::size_t stride_epochs) {
  if (window_epochs == 0 || stride_epochs == 0) throw nn::ConfigError("window and stride must be >= 1");
  std::vector<FeatureWindow> out;
  if (series.size() < window_epochs) {
    warn("series '" + series.subject_id + "' has " + std::to_string(series.size()) +
         " epochs, fewer than one window of " + std::to_string(window_epochs));
    return out;
  }
  const std::size_t count = (series.size() - window_epochs) / stride_epochs + 1;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(window_at(series.epochs, i * stride_epochs, window_epochs));
  return out;
}

std::vector<std::optional<std::uint8_t>> minute_truth(const EpochSeries& series, bool per_window) {
  std::vector<std::optional<std::uint8_t>> out;
  if (series.size() < kWindowEpochs) return out;
  const std::size_t count = (series.size() - kWindowEpochs) / kStrideEpochs + 1;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t last = i * kStrideEpochs + kWindowEpochs - 1;
    const auto& a = series.epochs[last - 1].label;
    const auto& b = series.epochs[last].label;
    if (!b || (per_window && (!a || *a != *b))) {
      out.emplace_back();
    } else {
      out.emplace_back(static_cast<std::uint8_t>(*b == SleepState::sleep));
    }
  }
  return out;
}

NormStats fit_normalizer(std::span<const FeatureWindow> windows) {
  if (windows.empty()) throw DataError(0, "cannot fit normalizer on zero windows");
  NormStats stats;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& w : windows) {
      for (float v : w.features.row(f)) sum += v;
      n += w.features.length();
    }
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (const auto& w : windows)
      for (float v : w.features.row(f)) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(n));
    stats.mean[f] = static_cast<float>(mean);
    if (!(sd > 1e-12) || static_cast<float>(sd) == 0.0f) {
      warn(std::string("feature '") + kFeatureNames[f] + "' has zero variance; using std = 1");
      stats.std[f] = 1.0f;
    } else {
      stats.std[f] = static_cast<float>(sd);
    }
  }
  return stats;
}

FeatureWindow apply_normalizer(FeatureWindow window, const NormStats& stats) {
  if (window.normalized) throw DataError(0, "window is already normalized");
  if (window.features.channels() != kFeatureCount) throw nn::ShapeError("window must have 5 feature rows");
  for (std::size_t f = 0; f < kFeatureCount; ++f)
    for (auto& v : window.features.row(f)) v = normalize_value(v, stats, f);
  window.normalized = true;
  return window;
}

std::vector<FeatureWindow> apply_normalizer(std::vector<FeatureWindow> windows, const NormStats& stats) {
  for (auto& w : windows) w = apply_normalizer(std::move(w), stats);
  return windows;
}

// ---------------------------------------------------------------------------
// synthetic generation

void SynthConfig::validate() const {
  if (!(hours >= 1.0)) throw nn::ConfigError("synthetic record length must be >= 1 hour");
  if (!(mean_sleep_bout_min > 0.0) || !(mean_wake_bout_min > 0.0)) {
    throw nn::ConfigError("bout durations must be positive");
  }
  if (!(bout_spread >= 0.0)) throw nn::ConfigError("bout spread must be >= 0");
  if (!(blur_min >= 0.0)) throw nn::ConfigError("transition blur must be >= 0");
  if (start_timestamp % kEpochSeconds != 0) throw nn::ConfigError("start timestamp must be a multiple of 30 s");
  for (const auto* fe : {&hr, &br, &hr_conf, &movement}) {
    if (!(fe->awake.std >= 0.0) || !(fe->sleep.std >= 0.0)) throw nn::ConfigError("emission std must be >= 0");
  }
}

namespace {

// Bout durations in whole minutes so transitions fall on minute boundaries.
std::int64_t draw_bout_minutes(double mean, double spread, nn::Rng& rng) {
  const double mu = std::log(mean) - 0.5 * spread * spread;
  std::lognormal_distribution<double> dist(mu, spread);
  return std::max<std::int64_t>(1, std::llround(dist(rng)));
}

}  // namespace

SynthNight synth_generate(const SynthConfig& config) {
  config.validate();
  nn::Rng rng(config.seed);
  const std::int64_t total_min = std::llround(config.hours * 60.0);
  const std::size_t n_epochs = static_cast<std::size_t>(total_min * 2);

  // Per-minute state, and transition minutes.
  std::vector<SleepState> minute_state;
  std::vector<std::int64_t> change_minutes;
  minute_state.reserve(static_cast<std::size_t>(total_min));
  SleepState state = config.initial_state;
  std::size_t bouts = 0;
  while (static_cast<std::int64_t>(minute_state.size()) < total_min) {
    const double mean = state == SleepState::sleep ? config.mean_sleep_bout_min : config.mean_wake_bout_min;
    std::int64_t len = draw_bout_minutes(mean, config.bout_spread, rng);
    if (config.max_bouts != 0 && ++bouts == config.max_bouts) len = total_min;
    for (std::int64_t m = 0; m < len && static_cast<std::int64_t>(minute_state.size()) < total_min; ++m) {
      minute_state.push_back(state);
    }
    if (static_cast<std::int64_t>(minute_state.size()) < total_min) {
      change_minutes.push_back(static_cast<std::int64_t>(minute_state.size()));
    }
    state = state == SleepState::sleep ? SleepState::awake : SleepState::sleep;
  }

  SynthNight night;
  night.series.subject_id = config.subject_id;
  night.series.source = SourceTag::synthetic;
  night.series.epochs.resize(n_epochs);

  std::normal_distribution<double> unit(0.0, 1.0);
  std::size_t next_change = 0;
  for (std::size_t i = 0; i < n_epochs; ++i) {
    const double t_min = static_cast<double>(i) / 2.0;
    const SleepState s = minute_state[i / 2];

    // Fraction of the sleep emission in effect at this epoch.
    double sleep_weight = s == SleepState::sleep ? 1.0 : 0.0;
    if (config.blur_min > 0.0 && !change_minutes.empty()) {
      while (next_change + 1 < change_minutes.size() &&
             std::abs(static_cast<double>(change_minutes[next_change + 1]) - t_min) <=
                 std::abs(static_cast<double>(change_minutes[next_change]) - t_min)) {
        ++next_change;
      }
      const double c = static_cast<double>(change_minutes[next_change]);
      const double half = config.blur_min / 2.0;
      if (t_min >= c - half && t_min < c + half) {
        const std::size_t cm = static_cast<std::size_t>(change_minutes[next_change]);
        const bool to_sleep = minute_state[cm] == SleepState::sleep;
        const double frac_new = std::clamp((t_min - (c - half)) / config.blur_min, 0.0, 1.0);
        sleep_weight = to_sleep ? frac_new : 1.0 - frac_new;
      }
    }

    auto draw = [&](const FeatureEmission& fe) {
      const double mean = sleep_weight * fe.sleep.mean + (1.0 - sleep_weight) * fe.awake.mean;
      const double sd = sleep_weight * fe.sleep.std + (1.0 - sleep_weight) * fe.awake.std;
      return mean + sd * unit(rng);
    };
    auto& e = night.series.epochs[i];
    e.timestamp = config.start_timestamp + static_cast<std::int64_t>(i) * kEpochSeconds;
    e.hr = static_cast<float>(std::max(0.0, draw(config.hr)));
    e.br = static_cast<float>(std::max(0.0, draw(config.br)));
    e.hr_conf = static_cast<float>(std::clamp(draw(config.hr_conf), 0.0, 1.0));
    e.movement = static_cast<float>(std::max(0.0, draw(config.movement)));
    e.label = s;
  }
  derive_hr_diff(night.series.epochs);

  for (std::int64_t m : change_minutes) {
    const auto s = minute_state[static_cast<std::size_t>(m)];
    night.transitions.push_back({s == SleepState::sleep ? EventKind::sleep_onset : EventKind::wake_time,
                                 config.start_timestamp + m * kMinuteSeconds});
  }
  return night;
}

SynthConfig night_preset(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.subject_id = "night-" + std::to_string(seed);
  c.hours = 10.0;
  c.mean_wake_bout_min = 60.0;
  c.mean_sleep_bout_min = 420.0;
  c.bout_spread = 0.12;
  c.blur_min = 4.0;
  c.max_bouts = 3;
  return c;
}

SynthConfig multiscale_preset(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.subject_id = "multiscale-" + std::to_string(seed);
  c.hours = 8.0;
  c.mean_wake_bout_min = 14.0;
  c.mean_sleep_bout_min = 30.0;
  c.bout_spread = 0.5;
  c.blur_min = 6.0;
  c.hr = {{68.0, 10.0}, {60.0, 8.0}};
  c.br = {{16.0, 3.0}, {14.5, 2.5}};
  c.hr_conf = {{0.80, 0.12}, {0.88, 0.10}};
  c.movement = {{0.35, 0.35}, {0.12, 0.20}};
  return c;
}

SynthConfig cohort_preset(std::uint64_t seed) {
  SynthConfig c = night_preset(seed);
  c.subject_id = "cohort-" + std::to_string(seed);
  // Restless sleepers with elevated resting heart rate.
  c.hr = {{84.0, 8.0}, {74.0, 5.0}};
  c.br = {{18.0, 2.5}, {16.0, 1.5}};
  c.movement = {{0.70, 0.30}, {0.30, 0.15}};
  return c;
}

std::vector<Transition> transitions_of(const EpochSeries& series) {
  std::vector<Transition> out;
  for (std::size_t i = 1; i < series.epochs.size(); ++i) {
    const auto& a = series.epochs[i - 1].label;
    const auto& b = series.epochs[i].label;
    if (a && b && *a != *b) {
      out.push_back({*b == SleepState::sleep ? EventKind::sleep_onset : EventKind::wake_time,
                     series.epochs[i].timestamp});
    }
  }
  return out;
}

void write_truth(std::ostream& out, std::span<const Transition> transitions) {
  out << "kind,timestamp\n";
  for (const auto& t : transitions) out << to_string(t.kind) << ',' << t.timestamp << '\n';
}

std::vector<Transition> read_truth(std::istream& in) {
  std::string line;
  if (!csv::next_line(in, line)) throw DataError(0, "missing truth header");
  if (line != "kind,timestamp") throw DataError(0, "truth header must be 'kind,timestamp'");
  std::vector<Transition> out;
  std::size_t row = 0;
  while (csv::next_line(in, line)) {
    ++row;
    const auto fields = csv::split(line);
    if (fields.size() != 2) throw DataError(row, "expected 2 fields");
    const auto kind = parse_event_kind(fields[0]);
    if (!kind) throw DataError(row, "unknown event kind '" + std::string(fields[0]) + "'");
    out.push_back({*kind, csv::parse_int(fields[1], row, "timestamp")});
  }
  return out;
}

void save_truth(const std::string& path, std::span<const Transition> transitions) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write truth file '" + path + "'");
  write_truth(out, transitions);
}

std::vector<Transition> load_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open truth file '" + path + "'");
  return read_truth(in);
}

std::vector<FeatureWindow> build_training_set(std::span<const EpochSeries> series, double context_hours,
                                              std::uint64_t seed) {
  const auto context = static_cast<std::int64_t>(std::llround(context_hours * 3600.0));
  std::vector<FeatureWindow> kept;
  bool any_transition = false;
  for (const auto& s : series) {
    const auto changes = transitions_of(s);
    if (changes.empty()) continue;
    any_transition = true;
    for (auto& w : make_windows(s)) {
      if (!w.label) continue;
      const bool near = std::any_of(changes.begin(), changes.end(), [&](const Transition& t) {
        return std::abs(w.end_timestamp - t.timestamp) <= context;
      });
      if (near) kept.push_back(std::move(w));
    }
  }
  if (!any_transition) throw DataError(0, "no transitions in any series");

  std::vector<std::size_t> sleep_idx;
  std::vector<std::size_t> wake_idx;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    (*kept[i].label == SleepState::sleep ? sleep_idx : wake_idx).push_back(i);
  }
  auto& majority = sleep_idx.size() > wake_idx.size() ? sleep_idx : wake_idx;
  const std::size_t target = std::min(sleep_idx.size(), wake_idx.size());
  nn::Rng rng(seed);
  std::shuffle(majority.begin(), majority.end(), rng);
  majority.resize(target);

  std::vector<std::size_t> selected;
  selected.reserve(2 * target);
  selected.insert(selected.end(), sleep_idx.begin(), sleep_idx.end());
  selected.insert(selected.end(), wake_idx.begin(), wake_idx.end());
  std::sort(selected.begin(), selected.end());

  std::vector<FeatureWindow> out;
  out.reserve(selected.size());
  for (auto i : selected) out.push_back(std::move(kept[i]));
  return out;
}

}  // namespace somnoflow::data
