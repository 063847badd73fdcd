#include "somnoflow/sleepnet.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "somnoflow/digest.hpp"

namespace somnoflow::net {

std::vector<HeadConfig> default_heads() {
  std::vector<HeadConfig> heads;
  for (std::size_t k : {3, 5, 7, 11}) {
    HeadConfig h;
    h.kernel_width = k;
    heads.push_back(h);
  }
  return heads;
}

void ModelConfig::validate() const {
  if (input_features == 0) throw nn::ConfigError("input_features must be >= 1");
  if (window_epochs == 0) throw nn::ConfigError("window_epochs must be >= 1");
  if (heads.empty()) throw nn::ConfigError("model needs at least one head");
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto& hc = heads[h];
    const std::string where = "head " + std::to_string(h) + ": ";
    if (hc.kernel_width == 0 || hc.kernel_width % 2 == 0) {
      throw nn::ConfigError(where + "kernel width must be odd, got " + std::to_string(hc.kernel_width));
    }
    if (hc.kernel_width > window_epochs) {
      throw nn::ConfigError(where + "kernel width " + std::to_string(hc.kernel_width) +
                            " is wider than the " + std::to_string(window_epochs) + "-epoch window");
    }
    if (hc.n_filters == 0 || hc.fc_width == 0) throw nn::ConfigError(where + "widths must be >= 1");
    if (hc.pool_width == 0) throw nn::ConfigError(where + "pool width must be >= 1");
    if (hc.pool_width > window_epochs - hc.kernel_width + 1) {
      throw nn::ConfigError(where + "pool width exceeds the conv output length");
    }
    if (!(hc.dropout_rate >= 0.0 && hc.dropout_rate < 1.0)) throw nn::ConfigError(where + "dropout must be in [0,1)");
  }
  if (trunk_widths.empty() || trunk_widths.back() != 1) {
    throw nn::ConfigError("trunk widths must end in a single output unit");
  }
  if (std::find(trunk_widths.begin(), trunk_widths.end(), 0u) != trunk_widths.end()) {
    throw nn::ConfigError("trunk widths must be >= 1");
  }
  if (!(aux_loss_weight >= 0.0)) throw nn::ConfigError("aux_loss_weight must be >= 0");
}

template <class T>
SleepNetT<T>::SleepNetT(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  nn::Rng rng(config_.seed);
  const std::size_t cin = config_.input_features;
  for (std::size_t h = 0; h < config_.heads.size(); ++h) {
    const auto& hc = config_.heads[h];
    const std::string prefix = "head" + std::to_string(h) + ".";
    Head<T> head;
    head.config = hc;
    head.conv_length = config_.window_epochs - hc.kernel_width + 1;
    head.pooled_length = (head.conv_length - hc.pool_width) / hc.pool_width + 1;
    head.conv = nn::make_conv1d<T>(prefix + "conv", cin, hc.n_filters, hc.kernel_width);
    nn::he_uniform_init(head.conv, cin * hc.kernel_width, rng);
    head.bn = nn::make_batchnorm<T>(prefix + "bn", hc.n_filters);
    const std::size_t flat = hc.n_filters * head.pooled_length;
    head.fc = nn::make_dense<T>(prefix + "fc", flat, hc.fc_width);
    nn::he_uniform_init(head.fc, flat, rng);
    head.pred = nn::make_dense<T>(prefix + "pred", hc.fc_width, 1);
    nn::he_uniform_init(head.pred, hc.fc_width, rng);
    heads_.push_back(std::move(head));
  }
  std::size_t in = heads_.size();
  for (std::size_t l = 0; l < config_.trunk_widths.size(); ++l) {
    auto layer = nn::make_dense<T>("trunk" + std::to_string(l), in, config_.trunk_widths[l]);
    nn::he_uniform_init(layer, in, rng);
    in = config_.trunk_widths[l];
    trunk_.push_back(std::move(layer));
  }
}

template <class T>
Prediction SleepNetT<T>::predict(const nn::FeatureMap<T>& input) const {
  if (input.channels() != config_.input_features || input.length() != config_.window_epochs) {
    std::ostringstream os;
    os << "model expects a " << config_.input_features << "x" << config_.window_epochs << " window, got "
       << input.channels() << "x" << input.length();
    throw nn::ShapeError(os.str());
  }
  Prediction out;
  std::vector<T> trunk_in(heads_.size());
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    const auto& hd = heads_[h];
    auto act = nn::batchnorm_infer(nn::conv1d_valid(input, hd.conv), hd.bn);
    nn::relu_inplace(act.values());
    const auto pooled = nn::maxpool1d(act, hd.config.pool_width);
    auto fc = nn::dense_forward<T>(pooled.values(), hd.fc);
    nn::relu_inplace<T>(fc);
    const T p = nn::sigmoid(nn::dense_forward<T>(fc, hd.pred)[0]);
    trunk_in[h] = p;
    out.p_heads.push_back(static_cast<double>(p));
  }
  std::vector<T> x = std::move(trunk_in);
  for (std::size_t l = 0; l < trunk_.size(); ++l) {
    x = nn::dense_forward<T>(x, trunk_[l]);
    if (l + 1 < trunk_.size()) nn::relu_inplace<T>(x);
  }
  out.p_final = static_cast<double>(nn::sigmoid(x[0]));
  return out;
}

template <class T>
BatchTrace<T> SleepNetT<T>::forward_batch(std::span<const nn::FeatureMap<T>> inputs, nn::Mode mode,
                                          nn::Rng& rng) {
  const std::size_t batch = inputs.size();
  if (batch == 0) throw nn::ShapeError("empty batch");
  for (const auto& x : inputs) {
    if (x.channels() != config_.input_features || x.length() != config_.window_epochs) {
      throw nn::ShapeError("batch element does not match the model's window shape");
    }
  }
  BatchTrace<T> trace;
  trace.heads.resize(heads_.size());
  trace.p_heads.assign(batch, std::vector<double>(heads_.size()));
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    auto& hd = heads_[h];
    auto& ht = trace.heads[h];
    ht.conv_out.reserve(batch);
    for (const auto& x : inputs) ht.conv_out.push_back(nn::conv1d_valid(x, hd.conv));
    const nn::Mode bn_mode = mode == nn::Mode::train && !hd.bn.params.frozen ? nn::Mode::train : nn::Mode::infer;
    ht.activated = nn::batchnorm_forward<T>(ht.conv_out, hd.bn, bn_mode, &ht.bn_cache);
    const nn::Mode drop_mode = mode == nn::Mode::train && !hd.fc.frozen ? nn::Mode::train : nn::Mode::infer;
    ht.pool_index.resize(batch);
    ht.dropout_mask.resize(batch);
    ht.flat.resize(batch);
    ht.fc_act.resize(batch);
    ht.p.resize(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      nn::relu_inplace(ht.activated[b].values());
      const auto pooled = nn::maxpool1d(ht.activated[b], hd.config.pool_width, 0, &ht.pool_index[b]);
      ht.flat[b].assign(pooled.values().begin(), pooled.values().end());
      ht.dropout_mask[b] = nn::dropout<T>(ht.flat[b], hd.config.dropout_rate, rng, drop_mode);
      ht.fc_act[b] = nn::dense_forward<T>(ht.flat[b], hd.fc);
      nn::relu_inplace<T>(ht.fc_act[b]);
      const T p = nn::sigmoid(nn::dense_forward<T>(ht.fc_act[b], hd.pred)[0]);
      ht.p[b] = static_cast<double>(p);
      trace.p_heads[b][h] = static_cast<double>(p);
    }
  }
  trace.trunk_inputs.assign(trunk_.size(), std::vector<std::vector<T>>(batch));
  trace.trunk_outputs.assign(trunk_.size(), std::vector<std::vector<T>>(batch));
  trace.p_final.resize(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<T> x(heads_.size());
    for (std::size_t h = 0; h < heads_.size(); ++h) x[h] = static_cast<T>(trace.heads[h].p[b]);
    for (std::size_t l = 0; l < trunk_.size(); ++l) {
      trace.trunk_inputs[l][b] = x;
      x = nn::dense_forward<T>(x, trunk_[l]);
      if (l + 1 < trunk_.size()) nn::relu_inplace<T>(x);
      trace.trunk_outputs[l][b] = x;
    }
    trace.p_final[b] = static_cast<double>(nn::sigmoid(x[0]));
  }
  trace.inputs.assign(inputs.begin(), inputs.end());
  return trace;
}

template <class T>
void SleepNetT<T>::backward(BatchTrace<T>& trace, std::span<const double> d_final_logit,
                            std::span<const std::vector<double>> d_head_logits) {
  const std::size_t batch = trace.p_final.size();
  if (d_final_logit.size() != batch || d_head_logits.size() != batch) {
    throw nn::ShapeError("backward: gradient batch does not match the trace");
  }
  // Trunk, yielding dL/dp_head for every sample.
  std::vector<std::vector<T>> d_p(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<T> g{static_cast<T>(d_final_logit[b])};
    for (std::size_t l = trunk_.size(); l-- > 0;) {
      if (l + 1 < trunk_.size()) nn::relu_backward_inplace<T>(trace.trunk_outputs[l][b], g);
      g = nn::dense_backward<T>(trace.trunk_inputs[l][b], trunk_[l], g);
    }
    d_p[b] = std::move(g);
  }

  for (std::size_t h = 0; h < heads_.size(); ++h) {
    auto& hd = heads_[h];
    auto& ht = trace.heads[h];
    if (hd.conv.frozen && hd.bn.params.frozen && hd.fc.frozen && hd.pred.frozen) continue;
    const bool into_conv = !(hd.conv.frozen && hd.bn.params.frozen);
    std::vector<nn::FeatureMap<T>> g_act;
    if (into_conv) g_act.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const double p = ht.p[b];
      const double dz = static_cast<double>(d_p[b][h]) * p * (1.0 - p) + d_head_logits[b].at(h);
      const std::vector<T> gz{static_cast<T>(dz)};
      auto g_fc = nn::dense_backward<T>(ht.fc_act[b], hd.pred, gz);
      nn::relu_backward_inplace<T>(ht.fc_act[b], g_fc);
      auto g_flat = nn::dense_backward<T>(ht.flat[b], hd.fc, g_fc);
      if (!into_conv) continue;
      nn::FeatureMap<T> g_pooled(hd.config.n_filters, hd.pooled_length);
      for (std::size_t i = 0; i < g_flat.size(); ++i) g_pooled.values()[i] = g_flat[i] * ht.dropout_mask[b][i];
      auto g = nn::maxpool1d_backward(g_pooled, ht.pool_index[b]);
      nn::relu_backward_inplace<T>(ht.activated[b].values(), g.values());
      g_act.push_back(std::move(g));
    }
    if (!into_conv) continue;
    const auto g_conv = nn::batchnorm_backward<T>(hd.bn, ht.bn_cache, g_act);
    for (std::size_t b = 0; b < batch; ++b) nn::conv1d_backward(trace.inputs[b], hd.conv, g_conv[b]);
  }
}

template <class T>
nn::FeatureMap<T> SleepNetT<T>::head_conv_features(const nn::FeatureMap<T>& input, std::size_t h) const {
  return nn::conv1d_valid(input, heads_.at(h).conv);
}

template <class T>
std::vector<nn::LayerParams<T>*> SleepNetT<T>::layers() {
  std::vector<nn::LayerParams<T>*> out;
  for (auto& hd : heads_) {
    out.push_back(&hd.conv);
    out.push_back(&hd.bn.params);
    out.push_back(&hd.fc);
    out.push_back(&hd.pred);
  }
  for (auto& l : trunk_) out.push_back(&l);
  return out;
}

template <class T>
std::vector<const nn::LayerParams<T>*> SleepNetT<T>::layers() const {
  std::vector<const nn::LayerParams<T>*> out;
  for (auto* l : const_cast<SleepNetT*>(this)->layers()) out.push_back(l);
  return out;
}

template <class T>
std::vector<TensorView<T>> SleepNetT<T>::tensors() const {
  std::vector<TensorView<T>> out;
  auto add_layer = [&](const nn::LayerParams<T>& p) {
    out.push_back({p.name + ".weight", p.weight_shape, p.weight});
    out.push_back({p.name + ".bias", {p.bias.size()}, p.bias});
  };
  for (const auto& hd : heads_) {
    add_layer(hd.conv);
    add_layer(hd.bn.params);
    out.push_back({hd.bn.params.name + ".running_mean", {hd.bn.running_mean.size()}, hd.bn.running_mean});
    out.push_back({hd.bn.params.name + ".running_var", {hd.bn.running_var.size()}, hd.bn.running_var});
    add_layer(hd.fc);
    add_layer(hd.pred);
  }
  for (const auto& l : trunk_) add_layer(l);
  if constexpr (std::is_same_v<T, float>) {
    out.push_back({"norm.mean", {norm_.mean.size()}, norm_.mean});
    out.push_back({"norm.std", {norm_.std.size()}, norm_.std});
  }
  return out;
}

template <class T>
void SleepNetT<T>::set_heads_frozen(bool frozen, bool include_intermediate_fc) {
  for (auto& hd : heads_) {
    hd.conv.frozen = frozen;
    hd.bn.params.frozen = frozen;
    if (include_intermediate_fc) {
      hd.fc.frozen = frozen;
      hd.pred.frozen = frozen;
    }
  }
}

template <class T>
void SleepNetT<T>::set_trunk_frozen(bool frozen) {
  for (auto& l : trunk_) l.frozen = frozen;
}

template <class T>
void SleepNetT<T>::zero_grad() {
  for (auto* l : layers()) l->zero_grad();
}

template <class T>
std::size_t SleepNetT<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* l : layers()) n += l->parameter_count();
  return n;
}

template class SleepNetT<float>;
template class SleepNetT<double>;

// ---------------------------------------------------------------------------

Prediction forward(const SleepNet& model, const data::FeatureWindow& window) {
  if (!window.normalized) throw nn::ShapeError("window must be normalized before inference");
  return model.predict(window.features);
}

namespace {

void hash_tensor(Sha256& sha, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    sha.update(values.data(), values.size_bytes());
  } else {
    for (float v : values) {
      const std::uint32_t bits = __builtin_bswap32(std::bit_cast<std::uint32_t>(v));
      sha.update(&bits, sizeof bits);
    }
  }
}

}  // namespace

std::string digest(const SleepNet& model) { return digest_of(model, ""); }

std::string digest_of(const SleepNet& model, const std::string& prefix) {
  Sha256 sha;
  for (const auto& t : model.tensors()) {
    if (t.name.starts_with(prefix)) hash_tensor(sha, t.values);
  }
  return sha.hex();
}

// ---------------------------------------------------------------------------
// training

void TrainingHyper::validate() const {
  if (batch_size == 0) throw nn::ConfigError("batch_size must be >= 1");
  if (!(aux_loss_weight >= 0.0)) throw nn::ConfigError("aux_loss_weight must be >= 0");
  if (!(lr > 0.0)) throw nn::ConfigError("learning rate must be positive");
}

namespace {

void check_windows(const SleepNet& model, std::span<const data::FeatureWindow> windows, const char* what) {
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    if (!w.label) throw data::DataError(0, std::string(what) + " window " + std::to_string(i) + " is unlabeled");
    if (!w.normalized) throw data::DataError(0, std::string(what) + " window " + std::to_string(i) + " is not normalized");
    if (w.features.channels() != model.config().input_features ||
        w.features.length() != model.config().window_epochs) {
      throw nn::ShapeError(std::string(what) + " window " + std::to_string(i) + " has the wrong shape");
    }
  }
}

int label_of(const data::FeatureWindow& w) { return *w.label == SleepState::sleep ? 1 : 0; }

}  // namespace

LossSummary evaluate(const SleepNet& model, std::span<const data::FeatureWindow> windows, double aux_loss_weight) {
  LossSummary s;
  if (windows.empty()) return s;
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& w : windows) {
    const auto p = forward(model, w);
    const int y = label_of(w);
    loss += nn::bce_loss(p.p_final, y).loss;
    for (double ph : p.p_heads) loss += aux_loss_weight * nn::bce_loss(ph, y).loss;
    if ((p.p_final >= 0.5 ? 1 : 0) == y) ++correct;
  }
  s.loss = loss / static_cast<double>(windows.size());
  s.accuracy = static_cast<double>(correct) / static_cast<double>(windows.size());
  return s;
}

TrainReport train(SleepNet& model, std::span<const data::FeatureWindow> train_set,
                  std::span<const data::FeatureWindow> val_set, const TrainingHyper& hyper) {
  hyper.validate();
  if (train_set.empty()) throw data::DataError(0, "empty training set");
  check_windows(model, train_set, "training");
  check_windows(model, val_set, "validation");
  const auto n_sleep = std::count_if(train_set.begin(), train_set.end(), [](const auto& w) { return label_of(w) == 1; });
  if (n_sleep == 0 || n_sleep == static_cast<std::ptrdiff_t>(train_set.size())) {
    throw data::DataError(0, "training set contains a single class");
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto layers = model.layers();
  std::vector<nn::AdamState<float>> adam;
  adam.reserve(layers.size());
  for (auto* l : layers) adam.emplace_back(*l, nn::AdamHyper{hyper.lr});
  model.zero_grad();

  nn::Rng rng(hyper.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  SleepNet best = model;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  const std::size_t heads = model.head_count();

  std::vector<nn::FeatureMap<float>> inputs;
  std::vector<int> labels;
  std::vector<double> d_final;
  std::vector<std::vector<double>> d_heads;
  for (std::size_t epoch = 0; epoch < hyper.n_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      const std::size_t b = end - start;
      inputs.clear();
      labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        inputs.push_back(train_set[order[i]].features);
        labels.push_back(label_of(train_set[order[i]]));
      }
      auto trace = model.forward_batch(inputs, nn::Mode::train, rng);
      d_final.assign(b, 0.0);
      d_heads.assign(b, std::vector<double>(heads, 0.0));
      const double scale = 1.0 / static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i) {
        d_final[i] = nn::bce_logit_grad(trace.p_final[i], labels[i]) * scale;
        for (std::size_t h = 0; h < heads; ++h) {
          d_heads[i][h] = hyper.aux_loss_weight * nn::bce_logit_grad(trace.p_heads[i][h], labels[i]) * scale;
        }
      }
      model.backward(trace, d_final, d_heads);
      for (std::size_t i = 0; i < layers.size(); ++i) nn::adam_step(*layers[i], adam[i]);
    }

    EpochStats stats;
    const auto tr = evaluate(model, train_set, hyper.aux_loss_weight);
    stats.train_loss = tr.loss;
    stats.train_accuracy = tr.accuracy;
    if (!val_set.empty()) {
      const auto va = evaluate(model, val_set, hyper.aux_loss_weight);
      stats.val_loss = va.loss;
      stats.val_accuracy = va.accuracy;
    }
    report.epochs.push_back(stats);

    if (stats.val_loss) {
      if (*stats.val_loss < best_loss) {
        best_loss = *stats.val_loss;
        best = model;
        report.best_epoch = epoch;
        since_best = 0;
      } else if (hyper.early_stop_patience > 0 && ++since_best >= hyper.early_stop_patience) {
        break;
      }
    } else {
      report.best_epoch = epoch;
    }
  }
  if (!val_set.empty() && !report.epochs.empty()) model = best;
  model.zero_grad();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report.digest = digest(model);
  return report;
}

SleepNet finetune_transfer(const SleepNet& model, std::span<const data::FeatureWindow> cohort_set,
                           const TrainingHyper& hyper, const TransferOptions& options, TrainReport* report) {
  if (cohort_set.empty()) throw data::DataError(0, "empty cohort set");
  SleepNet tuned = model;
  tuned.set_heads_frozen(true, true);
  if (options.train_intermediate_fc) {
    for (std::size_t h = 0; h < tuned.head_count(); ++h) {
      tuned.head(h).fc.frozen = false;
      tuned.head(h).pred.frozen = false;
    }
  }
  tuned.set_trunk_frozen(false);
  if (hyper.n_epochs == 0) return tuned;
  auto r = train(tuned, cohort_set, {}, hyper);
  if (report) *report = std::move(r);
  return tuned;
}

}  // namespace somnoflow::net
