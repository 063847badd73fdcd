#pragma once

// Epoch ingestion, feature windows, normalization and synthetic nights.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "somnoflow/common.hpp"
#include "somnoflow/neuralcore.hpp"

namespace somnoflow::data {

inline constexpr std::size_t kFeatureCount = 5;
inline constexpr std::size_t kWindowEpochs = 30;
inline constexpr std::size_t kStrideEpochs = 2;

/// Row order of a FeatureWindow.
enum class Feature : std::size_t { hr = 0, br = 1, hr_conf = 2, movement = 3, hr_diff = 4 };

inline constexpr std::array<const char*, kFeatureCount> kFeatureNames = {
    "hr", "br", "hr_conf", "movement", "hr_diff"};

/// Error tied to a 1-based data row of an input file (0 when not row specific).
class DataError : public std::runtime_error {
 public:
  DataError(std::size_t row, const std::string& what)
      : std::runtime_error(row ? "row " + std::to_string(row) + ": " + what : what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

struct EpochRecord {
  std::int64_t timestamp{0};  // seconds, multiple of 30
  float hr{0};
  float br{0};
  float hr_conf{0};
  float movement{0};
  float hr_diff{0};
  std::optional<SleepState> label;

  float feature(Feature f) const;
  bool operator==(const EpochRecord&) const = default;
};

enum class SourceTag { ingested, synthetic };

struct EpochSeries {
  std::string subject_id;
  SourceTag source{SourceTag::ingested};
  std::vector<EpochRecord> epochs;

  std::size_t size() const { return epochs.size(); }
  bool fully_labeled() const;
};

/// 5 x 30 features classified by its final minute (epochs 29-30).
struct FeatureWindow {
  nn::FeatureMap<float> features;
  std::int64_t end_timestamp{0};  // exclusive end of the last epoch
  std::optional<SleepState> label;
  bool normalized{false};

  /// Start of the minute this window classifies.
  std::int64_t minute_timestamp() const { return end_timestamp - kMinuteSeconds; }
};

struct NormStats {
  std::array<float, kFeatureCount> mean{};
  std::array<float, kFeatureCount> std{1, 1, 1, 1, 1};
  bool operator==(const NormStats&) const = default;
};

struct Transition {
  EventKind kind;  // sleep_onset: awake -> sleep, wake_time: sleep -> awake
  std::int64_t timestamp;
  bool operator==(const Transition&) const = default;
};

// ---------------------------------------------------------------------------
// ingestion

struct IngestOptions {
  /// Carry the last observation forward across gaps of at most 2 epochs.
  bool fill_gaps{false};
  std::string subject_id;
};

/// CSV with header `timestamp,hr,br,hr_conf,movement[,label]` (any column order).
EpochSeries ingest_epochs(std::istream& in, const IngestOptions& options = {});
EpochSeries load_epochs(const std::string& path, const IngestOptions& options = {});
void write_epochs(std::ostream& out, const EpochSeries& series);
void save_epochs(const std::string& path, const EpochSeries& series);

/// Recomputes hr_diff[i] = hr[i] - hr[i-1], hr_diff[0] = 0.
void derive_hr_diff(std::vector<EpochRecord>& epochs);

// ---------------------------------------------------------------------------
// windows and normalization

/// Window i covers epochs [stride*i, stride*i + window). Labeled only when the
/// final two epochs agree. Shorter series produce no windows (with a warning).
std::vector<FeatureWindow> make_windows(const EpochSeries& series,
                                        std::size_t window_epochs = kWindowEpochs,
                                        std::size_t stride_epochs = kStrideEpochs);

/// Copies epochs [first, first + window_epochs) into a window.
FeatureWindow window_at(std::span<const EpochRecord> epochs, std::size_t first,
                        std::size_t window_epochs = kWindowEpochs);

/// Truth per classified minute, aligned with make_windows(series). Per-minute
/// scoring takes the label of the minute's last epoch; per-window scoring uses
/// the window label (both epochs must agree).
std::vector<std::optional<std::uint8_t>> minute_truth(const EpochSeries& series, bool per_window = false);

NormStats fit_normalizer(std::span<const FeatureWindow> windows);
FeatureWindow apply_normalizer(FeatureWindow window, const NormStats& stats);
std::vector<FeatureWindow> apply_normalizer(std::vector<FeatureWindow> windows,
                                            const NormStats& stats);

/// z-score of one raw feature value; shared by batch and streaming paths.
inline float normalize_value(float raw, const NormStats& stats, std::size_t feature) {
  return (raw - stats.mean[feature]) / stats.std[feature];
}

// ---------------------------------------------------------------------------
// synthetic data

struct StateEmission {
  double mean;
  double std;
};

struct FeatureEmission {
  StateEmission awake;
  StateEmission sleep;
};

struct SynthConfig {
  std::uint64_t seed{1};
  std::string subject_id{"synthetic"};
  double hours{8.0};
  double mean_sleep_bout_min{240.0};
  double mean_wake_bout_min{60.0};
  double bout_spread{0.3};  // sigma of log duration
  double blur_min{0.0};
  std::size_t max_bouts{0};  // the last bout runs to the end of the record; 0 = unlimited
  SleepState initial_state{SleepState::awake};
  std::int64_t start_timestamp{0};

  FeatureEmission hr{{72.0, 8.0}, {58.0, 4.0}};
  FeatureEmission br{{17.0, 2.5}, {14.0, 1.5}};
  FeatureEmission hr_conf{{0.75, 0.10}, {0.92, 0.04}};
  FeatureEmission movement{{0.60, 0.30}, {0.05, 0.05}};

  void validate() const;
};

struct SynthNight {
  EpochSeries series;
  std::vector<Transition> transitions;
};

/// Alternating log-normal wake/sleep bouts (whole minutes) with
/// state-conditional Gaussian features, linearly blended over blur_min minutes
/// around each transition.
SynthNight synth_generate(const SynthConfig& config);

/// One main sleep period per 10 h record: wake ~60 min, sleep ~7 h, then awake to the end.
SynthConfig night_preset(std::uint64_t seed);
/// Noisier emissions and short wake bouts; fine and coarse temporal scales both matter.
SynthConfig multiscale_preset(std::uint64_t seed);
/// Night preset for a cohort whose vitals sit apart from the base population.
SynthConfig cohort_preset(std::uint64_t seed);

/// Labeled state changes of a series, timestamped at the first epoch of the new state.
std::vector<Transition> transitions_of(const EpochSeries& series);

/// Sidecar file: header `kind,timestamp`, one row per true transition.
void write_truth(std::ostream& out, std::span<const Transition> transitions);
std::vector<Transition> read_truth(std::istream& in);
void save_truth(const std::string& path, std::span<const Transition> transitions);
std::vector<Transition> load_truth(const std::string& path);

/// Labeled windows whose end lies within +-context_hours of a state change,
/// class-balanced by seeded down-sampling of the majority class.
std::vector<FeatureWindow> build_training_set(std::span<const EpochSeries> series,
                                              double context_hours = 1.0,
                                              std::uint64_t seed = 0);

}  // namespace somnoflow::data
