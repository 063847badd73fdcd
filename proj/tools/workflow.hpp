#pragma once

// Multi-record plumbing shared by the subcommands: locating record files,
// assembling normalized training sets, scoring a model over many nights.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "somnoflow/datapipe.hpp"
#include "somnoflow/evalkit.hpp"
#include "somnoflow/events.hpp"
#include "somnoflow/sleepnet.hpp"

namespace somnoflow::workflow {

struct Record {
  std::filesystem::path path;
  data::EpochSeries series;
  std::vector<data::Transition> truth;  // sidecar if present, else from labels
};

/// `<stem>.truth.csv` next to an epoch file.
std::filesystem::path truth_path_for(const std::filesystem::path& csv);

/// Files are taken as-is; directories contribute every `*.csv` that is not a
/// truth sidecar, in name order.
std::vector<std::filesystem::path> expand_inputs(const std::vector<std::string>& inputs);
std::vector<Record> load_records(const std::vector<std::string>& inputs, bool fill_gaps = false);

struct TrainingData {
  data::NormStats stats;
  std::vector<data::FeatureWindow> train;
  std::vector<data::FeatureWindow> val;
};

/// Balanced windows near transitions, optionally subsampled to max_windows
/// (0 keeps all), normalized with stats fitted on the training windows.
/// Validation windows are every labeled window of `val`.
TrainingData prepare_training(const std::vector<data::EpochSeries>& train, const std::vector<data::EpochSeries>& val,
                              double context_hours, std::uint64_t seed, std::size_t max_windows = 0);

/// Same, but normalized with fixed stats (transfer onto a cohort).
TrainingData prepare_with_stats(const std::vector<data::EpochSeries>& train,
                                const std::vector<data::EpochSeries>& val, const data::NormStats& stats,
                                double context_hours, std::uint64_t seed, std::size_t max_windows = 0);

/// Every labeled window of the series, normalized.
std::vector<data::FeatureWindow> labeled_windows(const std::vector<data::EpochSeries>& series,
                                                 const data::NormStats& stats);

struct NightResult {
  events::Hypnogram hypnogram;
  events::SleepEvents events;
  eval::NightScore score;
};

NightResult run_night(const net::SleepNet& model, const data::EpochSeries& series,
                      const std::vector<data::Transition>& truth, const events::EventRuleConfig& rules,
                      double tolerance_min = 15.0, bool per_window = false);

struct RunSummary {
  eval::MetricReport states;
  eval::MetricReport timing;
  eval::KindCounts onset;
  eval::KindCounts wake;
  std::size_t nights{0};
  std::size_t onset_within{0};
  std::size_t wake_within{0};
  std::vector<NightResult> nights_detail;
};

/// Scores one model over many records; counts are pooled across records.
RunSummary evaluate_model(const std::string& run_id, const net::SleepNet& model, const std::vector<Record>& records,
                          const events::EventRuleConfig& rules, double tolerance_min = 15.0,
                          bool per_window = false);

}  // namespace somnoflow::workflow
