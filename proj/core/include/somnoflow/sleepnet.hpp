#pragma once

// Multi-head 1D CNN sleep/wake classifier.
//
// Each head looks at the 5 x 30 window at one temporal resolution:
//   conv1d(k) -> batchnorm -> relu -> maxpool -> dropout -> flatten
//   -> dense(fc_width) -> relu -> dense(1) -> sigmoid      (intermediate prediction)
// The head probabilities are concatenated and fed to a shallow dense trunk
// ending in a sigmoid.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "somnoflow/datapipe.hpp"
#include "somnoflow/neuralcore.hpp"

namespace somnoflow::net {

struct HeadConfig {
  std::size_t kernel_width{3};
  std::size_t n_filters{16};
  std::size_t pool_width{2};
  double dropout_rate{0.3};
  std::size_t fc_width{16};

  bool operator==(const HeadConfig&) const = default;
};

std::vector<HeadConfig> default_heads();

struct ModelConfig {
  std::size_t input_features{data::kFeatureCount};
  std::size_t window_epochs{data::kWindowEpochs};
  std::vector<HeadConfig> heads{default_heads()};
  std::vector<std::size_t> trunk_widths{8, 1};
  double aux_loss_weight{0.25};
  std::uint64_t seed{42};

  /// Throws nn::ConfigError.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// One convolutional head with its intermediate prediction network.
template <class T>
struct Head {
  HeadConfig config;
  nn::LayerParams<T> conv;
  nn::BatchNormState<T> bn;
  nn::LayerParams<T> fc;
  nn::LayerParams<T> pred;
  std::size_t conv_length{0};
  std::size_t pooled_length{0};
};

struct Prediction {
  double p_final{0.5};
  std::vector<double> p_heads;
};

/// Read-only view of one stored tensor, in serialization order.
template <class T>
struct TensorView {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<const T> values;
};

/// Per-head intermediates of a batch forward, indexed by sample.
template <class T>
struct HeadTrace {
  std::vector<nn::FeatureMap<T>> conv_out;
  nn::BatchNormCache<T> bn_cache;
  std::vector<nn::FeatureMap<T>> activated;
  std::vector<nn::PoolIndex> pool_index;
  std::vector<std::vector<T>> dropout_mask;
  std::vector<std::vector<T>> flat;
  std::vector<std::vector<T>> fc_act;
  std::vector<double> p;
};

/// Everything a batch forward keeps for backward.
template <class T>
struct BatchTrace {
  std::vector<nn::FeatureMap<T>> inputs;
  std::vector<HeadTrace<T>> heads;
  std::vector<std::vector<std::vector<T>>> trunk_inputs;  // [layer][sample]
  std::vector<std::vector<std::vector<T>>> trunk_outputs;  // post-activation
  std::vector<double> p_final;
  std::vector<std::vector<double>> p_heads;  // [sample][head]
};

template <class T>
class SleepNetT {
 public:
  explicit SleepNetT(ModelConfig config = {});

  const ModelConfig& config() const { return config_; }
  std::size_t head_count() const { return heads_.size(); }
  Head<T>& head(std::size_t h) { return heads_.at(h); }
  const Head<T>& head(std::size_t h) const { return heads_.at(h); }
  std::vector<nn::LayerParams<T>>& trunk() { return trunk_; }
  const std::vector<nn::LayerParams<T>>& trunk() const { return trunk_; }

  data::NormStats& norm_stats() { return norm_; }
  const data::NormStats& norm_stats() const { return norm_; }

  /// Inference-mode forward on one normalized feature map.
  Prediction predict(const nn::FeatureMap<T>& input) const;

  /// Batch forward. Train mode uses batch statistics in unfrozen batchnorm
  /// layers (updating running stats) and applies dropout ahead of trainable
  /// FC layers.
  BatchTrace<T> forward_batch(std::span<const nn::FeatureMap<T>> inputs, nn::Mode mode, nn::Rng& rng);

  /// Accumulates parameter gradients. d_final_logit[b] = dL/dz_final and
  /// d_head_logits[b][h] = direct dL/dz_h (auxiliary loss terms).
  void backward(BatchTrace<T>& trace, std::span<const double> d_final_logit,
                std::span<const std::vector<double>> d_head_logits);

  /// Raw conv output of head h (before batchnorm) for one input.
  nn::FeatureMap<T> head_conv_features(const nn::FeatureMap<T>& input, std::size_t h) const;

  /// All trainable layers: per head conv, bn, fc, pred; then the trunk.
  std::vector<nn::LayerParams<T>*> layers();
  std::vector<const nn::LayerParams<T>*> layers() const;

  /// Every stored tensor including running statistics and NormStats.
  std::vector<TensorView<T>> tensors() const;

  void set_heads_frozen(bool frozen, bool include_intermediate_fc = true);
  void set_trunk_frozen(bool frozen);
  void zero_grad();

  std::size_t parameter_count() const;

 private:
  ModelConfig config_;
  std::vector<Head<T>> heads_;
  std::vector<nn::LayerParams<T>> trunk_;
  data::NormStats norm_;
};

using SleepNet = SleepNetT<float>;

extern template class SleepNetT<float>;
extern template class SleepNetT<double>;

/// Checks shape and normalization, then runs inference.
Prediction forward(const SleepNet& model, const data::FeatureWindow& window);

/// SHA-256 over every stored tensor (little-endian float32, manifest order).
std::string digest(const SleepNet& model);
/// Digest of tensors whose name starts with `prefix` (e.g. "head0.", "trunk").
std::string digest_of(const SleepNet& model, const std::string& prefix);

// ---------------------------------------------------------------------------
// training

struct TrainingHyper {
  double lr{1e-3};
  std::size_t batch_size{32};
  std::size_t n_epochs{20};
  double aux_loss_weight{0.25};
  std::size_t early_stop_patience{5};  // 0 disables early stopping
  std::uint64_t seed{42};

  void validate() const;
};

struct EpochStats {
  double train_loss{0};
  double train_accuracy{0};
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch{0};
  double wall_seconds{0};
  std::string digest;
};

struct LossSummary {
  double loss{0};      // mean total loss including auxiliary terms
  double accuracy{0};  // p_final >= 0.5 vs label
};

LossSummary evaluate(const SleepNet& model, std::span<const data::FeatureWindow> windows,
                     double aux_loss_weight);

/// Mini-batch Adam on BCE(p_final) + aux * sum_h BCE(p_head_h). Keeps the
/// parameters of the best validation epoch (or the last epoch without a
/// validation set).
TrainReport train(SleepNet& model, std::span<const data::FeatureWindow> train_set,
                  std::span<const data::FeatureWindow> val_set, const TrainingHyper& hyper);

struct TransferOptions {
  /// Also train each head's intermediate FC and prediction layers.
  bool train_intermediate_fc{false};
};

/// Retrains only the post-concatenation trunk; every head parameter stays
/// bit-identical. Returns the fine-tuned copy.
SleepNet finetune_transfer(const SleepNet& model, std::span<const data::FeatureWindow> cohort_set,
                           const TrainingHyper& hyper, const TransferOptions& options = {},
                           TrainReport* report = nullptr);

// ---------------------------------------------------------------------------
// persistence

inline constexpr std::uint8_t kModelFormatVersion = 1;

struct ModelFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ModelVersionError : ModelFormatError {
  using ModelFormatError::ModelFormatError;
};
struct ModelDigestError : ModelFormatError {
  using ModelFormatError::ModelFormatError;
};
struct ModelTruncatedError : ModelFormatError {
  using ModelFormatError::ModelFormatError;
};

std::vector<std::byte> serialize_model(const SleepNet& model);
SleepNet deserialize_model(std::span<const std::byte> bytes);
void save_model(const SleepNet& model, const std::string& path);
SleepNet load_model(const std::string& path);

}  // namespace somnoflow::net
