#include "workflow.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "somnoflow/stream.hpp"

namespace somnoflow::workflow {

namespace fs = std::filesystem;

namespace {

bool is_truth_file(const fs::path& p) {
  const auto name = p.filename().string();
  return name.size() >= 10 && name.ends_with(".truth.csv");
}

std::vector<data::FeatureWindow> subsample(std::vector<data::FeatureWindow> windows, std::size_t max_windows,
                                           std::uint64_t seed) {
  if (max_windows == 0 || windows.size() <= max_windows) return windows;
  std::mt19937_64 rng(seed ^ 0x5eed5eedULL);
  std::shuffle(windows.begin(), windows.end(), rng);
  windows.resize(max_windows);
  std::stable_sort(windows.begin(), windows.end(),
                   [](const auto& a, const auto& b) { return a.end_timestamp < b.end_timestamp; });
  return windows;
}

std::vector<data::FeatureWindow> training_windows(const std::vector<data::EpochSeries>& series,
                                                  double context_hours, std::uint64_t seed, std::size_t max_windows) {
  return subsample(data::build_training_set(series, context_hours, seed), max_windows, seed);
}

}  // namespace

fs::path truth_path_for(const fs::path& csv) {
  auto p = csv;
  p.replace_extension();
  p += ".truth.csv";
  return p;
}

std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".csv" && !is_truth_file(e.path())) {
          found.push_back(e.path());
        }
      }
      std::sort(found.begin(), found.end());
      if (found.empty()) throw std::ios_base::failure("no epoch files in directory '" + in + "'");
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

std::vector<Record> load_records(const std::vector<std::string>& inputs, bool fill_gaps) {
  std::vector<Record> out;
  for (const auto& path : expand_inputs(inputs)) {
    Record r;
    r.path = path;
    r.series = data::load_epochs(path.string(), {fill_gaps, path.stem().string()});
    const auto tp = truth_path_for(path);
    r.truth = fs::exists(tp) ? data::load_truth(tp.string()) : data::transitions_of(r.series);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<data::FeatureWindow> labeled_windows(const std::vector<data::EpochSeries>& series,
                                                 const data::NormStats& stats) {
  std::vector<data::FeatureWindow> out;
  for (const auto& s : series) {
    for (auto& w : data::make_windows(s)) {
      if (w.label) out.push_back(data::apply_normalizer(std::move(w), stats));
    }
  }
  return out;
}

TrainingData prepare_training(const std::vector<data::EpochSeries>& train, const std::vector<data::EpochSeries>& val,
                              double context_hours, std::uint64_t seed, std::size_t max_windows) {
  auto windows = training_windows(train, context_hours, seed, max_windows);
  TrainingData d;
  d.stats = data::fit_normalizer(windows);
  d.train = data::apply_normalizer(std::move(windows), d.stats);
  d.val = labeled_windows(val, d.stats);
  return d;
}

TrainingData prepare_with_stats(const std::vector<data::EpochSeries>& train,
                                const std::vector<data::EpochSeries>& val, const data::NormStats& stats,
                                double context_hours, std::uint64_t seed, std::size_t max_windows) {
  TrainingData d;
  d.stats = stats;
  d.train = data::apply_normalizer(training_windows(train, context_hours, seed, max_windows), stats);
  d.val = labeled_windows(val, stats);
  return d;
}

NightResult run_night(const net::SleepNet& model, const data::EpochSeries& series,
                      const std::vector<data::Transition>& truth, const events::EventRuleConfig& rules,
                      double tolerance_min, bool per_window) {
  NightResult r;
  r.hypnogram = stream::infer_hypnogram(model, series);
  if (!r.hypnogram.p.empty()) r.events = events::predict_events(r.hypnogram, rules);
  const auto minute_truth = data::minute_truth(series, per_window);
  r.score = eval::score_night(series.subject_id, r.hypnogram, r.events, minute_truth, truth, rules.threshold,
                              tolerance_min);
  return r;
}

RunSummary evaluate_model(const std::string& run_id, const net::SleepNet& model, const std::vector<Record>& records,
                          const events::EventRuleConfig& rules, double tolerance_min, bool per_window) {
  if (records.empty()) throw std::invalid_argument("no records to evaluate");
  RunSummary s;
  eval::ConfusionCounts states;
  eval::ConfusionCounts timing;
  for (const auto& rec : records) {
    auto night = run_night(model, rec.series, rec.truth, rules, tolerance_min, per_window);
    states += night.score.states;
    timing += night.score.timing;
    const auto& m = night.score.matches;
    s.onset.tp += m.onset.tp;
    s.onset.fp += m.onset.fp;
    s.onset.fn += m.onset.fn;
    s.wake.tp += m.wake.tp;
    s.wake.fp += m.wake.fp;
    s.wake.fn += m.wake.fn;
    s.onset_within += night.score.onset_within ? 1 : 0;
    s.wake_within += night.score.wake_within ? 1 : 0;
    ++s.nights;
    s.nights_detail.push_back(std::move(night));
  }
  s.states = eval::make_report(run_id, states);
  s.timing = eval::make_report(run_id, timing);
  return s;
}

}  // namespace somnoflow::workflow
