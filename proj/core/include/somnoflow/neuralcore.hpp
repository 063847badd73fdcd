#pragma once

// Small hand-written neural network engine: valid 1D convolution, batch
// normalization, max pooling, dense layers, dropout, BCE and Adam.
//
// Everything is templated on the scalar type. Models run in float; the
// gradient checks instantiate double so that central differences are
// meaningful at h = 1e-4.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace somnoflow::nn {

enum class Mode { train, infer };

using Rng = std::mt19937_64;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Channels x length matrix, row-major (one row per channel).
template <class T>
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t channels, std::size_t length, T fill = T{0})
      : channels_(channels), length_(length), values_(channels * length, fill) {
    if (channels == 0 || length == 0) {
      throw ShapeError("FeatureMap needs at least one channel and one epoch");
    }
  }

  std::size_t channels() const { return channels_; }
  std::size_t length() const { return length_; }
  std::size_t size() const { return values_.size(); }

  T& operator()(std::size_t c, std::size_t i) { return values_[c * length_ + i]; }
  const T& operator()(std::size_t c, std::size_t i) const { return values_[c * length_ + i]; }

  std::span<T> row(std::size_t c) { return {values_.data() + c * length_, length_}; }
  std::span<const T> row(std::size_t c) const { return {values_.data() + c * length_, length_}; }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  FeatureMap<U> cast() const {
    FeatureMap<U> out(channels_, length_);
    std::transform(values_.begin(), values_.end(), out.values().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const FeatureMap&) const = default;

 private:
  std::size_t channels_{0};
  std::size_t length_{0};
  std::vector<T> values_;
};

enum class LayerKind { conv1d, batchnorm, dense };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::dense: return "dense";
  }
  return "?";
}

/// Trainable tensors of one layer plus their gradient buffers.
/// conv1d: weight is out x in x k. dense: weight is out x in.
/// batchnorm: weight is gamma, bias is beta.
template <class T>
struct LayerParams {
  LayerKind kind{LayerKind::dense};
  std::string name;
  std::vector<std::size_t> weight_shape;
  std::vector<T> weight;
  std::vector<T> bias;
  std::vector<T> weight_grad;
  std::vector<T> bias_grad;
  bool frozen{false};

  LayerParams() = default;
  LayerParams(LayerKind k, std::string n, std::vector<std::size_t> shape, std::size_t n_bias)
      : kind(k), name(std::move(n)), weight_shape(std::move(shape)) {
    std::size_t count = 1;
    for (auto d : weight_shape) count *= d;
    weight.assign(count, T{0});
    weight_grad.assign(count, T{0});
    bias.assign(n_bias, T{0});
    bias_grad.assign(n_bias, T{0});
  }

  void zero_grad() {
    std::fill(weight_grad.begin(), weight_grad.end(), T{0});
    std::fill(bias_grad.begin(), bias_grad.end(), T{0});
  }

  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

/// U(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero bias.
template <class T>
void he_uniform_init(LayerParams<T>& p, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& w : p.weight) w = static_cast<T>(dist(rng));
  std::fill(p.bias.begin(), p.bias.end(), T{0});
}

// ---------------------------------------------------------------------------
// conv1d

template <class T>
LayerParams<T> make_conv1d(std::string name, std::size_t in_channels, std::size_t out_channels,
                           std::size_t kernel_width) {
  if (kernel_width == 0) throw ConfigError(name + ": kernel width must be >= 1");
  return LayerParams<T>(LayerKind::conv1d, std::move(name),
                        {out_channels, in_channels, kernel_width}, out_channels);
}

/// Stride 1, no padding: out[o][i] = b[o] + sum_{c,j} w[o][c][j] * x[c][i+j].
template <class T>
FeatureMap<T> conv1d_valid(const FeatureMap<T>& input, const LayerParams<T>& params) {
  const std::size_t out_ch = params.weight_shape.at(0);
  const std::size_t in_ch = params.weight_shape.at(1);
  const std::size_t k = params.weight_shape.at(2);
  if (input.channels() != in_ch) {
    std::ostringstream os;
    os << params.name << ": input has " << input.channels() << " channels, weights expect " << in_ch;
    throw ShapeError(os.str());
  }
  if (k > input.length()) {
    std::ostringstream os;
    os << params.name << ": kernel width " << k << " exceeds input length " << input.length();
    throw ShapeError(os.str());
  }
  const std::size_t out_len = input.length() - k + 1;
  FeatureMap<T> out(out_ch, out_len);
  for (std::size_t o = 0; o < out_ch; ++o) {
    auto dst = out.row(o);
    std::fill(dst.begin(), dst.end(), params.bias[o]);
    for (std::size_t c = 0; c < in_ch; ++c) {
      const auto src = input.row(c);
      const T* w = params.weight.data() + (o * in_ch + c) * k;
      for (std::size_t j = 0; j < k; ++j) {
        const T wj = w[j];
        for (std::size_t i = 0; i < out_len; ++i) dst[i] += wj * src[i + j];
      }
    }
  }
  return out;
}

/// Accumulates into params' grad buffers and returns dL/dinput.
template <class T>
FeatureMap<T> conv1d_backward(const FeatureMap<T>& input, LayerParams<T>& params,
                              const FeatureMap<T>& upstream) {
  const std::size_t out_ch = params.weight_shape.at(0);
  const std::size_t in_ch = params.weight_shape.at(1);
  const std::size_t k = params.weight_shape.at(2);
  if (input.channels() != in_ch || k > input.length() || upstream.channels() != out_ch ||
      upstream.length() != input.length() - k + 1) {
    std::ostringstream os;
    os << params.name << ": upstream gradient " << upstream.channels() << "x" << upstream.length()
       << " does not match forward output " << out_ch << "x"
       << (k <= input.length() ? input.length() - k + 1 : 0);
    throw ShapeError(os.str());
  }
  const std::size_t out_len = upstream.length();
  FeatureMap<T> grad_in(in_ch, input.length());
  for (std::size_t o = 0; o < out_ch; ++o) {
    const auto g = upstream.row(o);
    T gsum{0};
    for (std::size_t i = 0; i < out_len; ++i) gsum += g[i];
    params.bias_grad[o] += gsum;
    for (std::size_t c = 0; c < in_ch; ++c) {
      const auto src = input.row(c);
      auto dst = grad_in.row(c);
      const std::size_t base = (o * in_ch + c) * k;
      for (std::size_t j = 0; j < k; ++j) {
        const T wj = params.weight[base + j];
        T acc{0};
        for (std::size_t i = 0; i < out_len; ++i) {
          acc += g[i] * src[i + j];
          dst[i + j] += wj * g[i];
        }
        params.weight_grad[base + j] += acc;
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// batch normalization over (batch, length) per channel

template <class T>
struct BatchNormState {
  LayerParams<T> params;  // weight = gamma, bias = beta
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum{0.1};
  double eps{1e-5};

  std::size_t channels() const { return params.bias.size(); }
};

template <class T>
BatchNormState<T> make_batchnorm(std::string name, std::size_t channels, double momentum = 0.1,
                                 double eps = 1e-5) {
  if (!(momentum > 0.0 && momentum < 1.0)) throw ConfigError(name + ": momentum must be in (0,1)");
  if (!(eps > 0.0)) throw ConfigError(name + ": eps must be positive");
  BatchNormState<T> s;
  s.params = LayerParams<T>(LayerKind::batchnorm, std::move(name), {channels}, channels);
  std::fill(s.params.weight.begin(), s.params.weight.end(), T{1});
  s.running_mean.assign(channels, T{0});
  s.running_var.assign(channels, T{1});
  s.momentum = momentum;
  s.eps = eps;
  return s;
}

/// Values retained by a train-mode forward for the backward pass.
template <class T>
struct BatchNormCache {
  Mode mode{Mode::infer};
  std::vector<FeatureMap<T>> normalized;
  std::vector<double> inv_std;
};

template <class T>
std::vector<FeatureMap<T>> batchnorm_forward(std::span<const FeatureMap<T>> batch,
                                             BatchNormState<T>& state, Mode mode,
                                             BatchNormCache<T>* cache = nullptr) {
  const std::size_t ch = state.channels();
  if (batch.empty()) throw ShapeError(state.params.name + ": empty batch");
  const std::size_t len = batch.front().length();
  for (const auto& x : batch) {
    if (x.channels() != ch || x.length() != len) {
      throw ShapeError(state.params.name + ": inconsistent batch shapes");
    }
  }
  const std::size_t count = batch.size() * len;
  if (mode == Mode::train && count < 2) {
    throw ShapeError(state.params.name + ": train mode needs batch*length >= 2");
  }

  std::vector<FeatureMap<T>> out(batch.size(), FeatureMap<T>(ch, len));
  std::vector<double> inv_std(ch);
  std::vector<FeatureMap<T>> normalized;
  if (cache) normalized.assign(batch.size(), FeatureMap<T>(ch, len));

  for (std::size_t c = 0; c < ch; ++c) {
    double mean;
    double var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (const auto& x : batch)
        for (T v : x.row(c)) sum += static_cast<double>(v);
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (const auto& x : batch)
        for (T v : x.row(c)) {
          const double d = static_cast<double>(v) - mean;
          sq += d * d;
        }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      state.running_mean[c] = static_cast<T>((1.0 - state.momentum) * state.running_mean[c] +
                                             state.momentum * mean);
      state.running_var[c] = static_cast<T>((1.0 - state.momentum) * state.running_var[c] +
                                            state.momentum * unbiased);
    } else {
      mean = static_cast<double>(state.running_mean[c]);
      var = static_cast<double>(state.running_var[c]);
    }
    inv_std[c] = 1.0 / std::sqrt(var + state.eps);
    const T gamma = state.params.weight[c];
    const T beta = state.params.bias[c];
    const T m = static_cast<T>(mean);
    const T is = static_cast<T>(inv_std[c]);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto src = batch[b].row(c);
      auto dst = out[b].row(c);
      for (std::size_t i = 0; i < len; ++i) {
        const T xhat = (src[i] - m) * is;
        if (cache) normalized[b](c, i) = xhat;
        dst[i] = gamma * xhat + beta;
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

/// Inference-mode normalization of a single map from running statistics.
template <class T>
FeatureMap<T> batchnorm_infer(const FeatureMap<T>& input, const BatchNormState<T>& state) {
  if (input.channels() != state.channels()) throw ShapeError(state.params.name + ": channel mismatch");
  FeatureMap<T> out(input.channels(), input.length());
  for (std::size_t c = 0; c < input.channels(); ++c) {
    const T m = state.running_mean[c];
    const T is = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + state.eps));
    const T gamma = state.params.weight[c];
    const T beta = state.params.bias[c];
    const auto src = input.row(c);
    auto dst = out.row(c);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = gamma * ((src[i] - m) * is) + beta;
  }
  return out;
}

/// Backward through batchnorm_forward given the cache it filled.
template <class T>
std::vector<FeatureMap<T>> batchnorm_backward(BatchNormState<T>& state,
                                              const BatchNormCache<T>& cache,
                                              std::span<const FeatureMap<T>> upstream) {
  const std::size_t ch = state.channels();
  if (upstream.size() != cache.normalized.size() || upstream.empty()) {
    throw ShapeError(state.params.name + ": upstream batch does not match cached forward");
  }
  const std::size_t len = upstream.front().length();
  const double n = static_cast<double>(upstream.size() * len);
  std::vector<FeatureMap<T>> grad_in(upstream.size(), FeatureMap<T>(ch, len));
  for (std::size_t c = 0; c < ch; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t b = 0; b < upstream.size(); ++b) {
      const auto g = upstream[b].row(c);
      const auto xh = cache.normalized[b].row(c);
      for (std::size_t i = 0; i < len; ++i) {
        sum_g += static_cast<double>(g[i]);
        sum_gx += static_cast<double>(g[i]) * static_cast<double>(xh[i]);
      }
    }
    state.params.bias_grad[c] += static_cast<T>(sum_g);
    state.params.weight_grad[c] += static_cast<T>(sum_gx);
    const double gamma = static_cast<double>(state.params.weight[c]);
    const double is = cache.inv_std[c];
    for (std::size_t b = 0; b < upstream.size(); ++b) {
      const auto g = upstream[b].row(c);
      const auto xh = cache.normalized[b].row(c);
      auto dst = grad_in[b].row(c);
      for (std::size_t i = 0; i < len; ++i) {
        if (cache.mode == Mode::train) {
          // d/dx of gamma * (x - mean(x)) / std(x) over the whole batch
          const double dxh = static_cast<double>(g[i]) * gamma;
          dst[i] = static_cast<T>(is / n *
                                  (n * dxh - gamma * sum_g - static_cast<double>(xh[i]) * gamma * sum_gx));
        } else {
          dst[i] = static_cast<T>(static_cast<double>(g[i]) * gamma * is);
        }
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// max pooling

struct PoolIndex {
  std::vector<std::size_t> argmax;  // channels x out_len, index into the input row
  std::size_t input_length{0};
};

/// Non-overlapping by default (stride 0 means stride = width). A trailing
/// remainder shorter than the width is dropped. Ties go to the lowest index.
template <class T>
FeatureMap<T> maxpool1d(const FeatureMap<T>& input, std::size_t width, std::size_t stride = 0,
                        PoolIndex* index = nullptr) {
  if (width == 0) throw ConfigError("maxpool1d: pool width must be >= 1");
  if (stride == 0) stride = width;
  if (width > input.length()) {
    std::ostringstream os;
    os << "maxpool1d: pool width " << width << " exceeds input length " << input.length();
    throw ShapeError(os.str());
  }
  const std::size_t out_len = (input.length() - width) / stride + 1;
  FeatureMap<T> out(input.channels(), out_len);
  if (index) {
    index->argmax.assign(input.channels() * out_len, 0);
    index->input_length = input.length();
  }
  for (std::size_t c = 0; c < input.channels(); ++c) {
    const auto src = input.row(c);
    for (std::size_t o = 0; o < out_len; ++o) {
      std::size_t best = o * stride;
      for (std::size_t j = best + 1; j < o * stride + width; ++j) {
        if (src[j] > src[best]) best = j;
      }
      out(c, o) = src[best];
      if (index) index->argmax[c * out_len + o] = best;
    }
  }
  return out;
}

template <class T>
FeatureMap<T> maxpool1d_backward(const FeatureMap<T>& upstream, const PoolIndex& index) {
  FeatureMap<T> grad_in(upstream.channels(), index.input_length);
  const std::size_t out_len = upstream.length();
  if (index.argmax.size() != upstream.channels() * out_len) {
    throw ShapeError("maxpool1d_backward: upstream does not match pool indices");
  }
  for (std::size_t c = 0; c < upstream.channels(); ++c)
    for (std::size_t o = 0; o < out_len; ++o)
      grad_in(c, index.argmax[c * out_len + o]) += upstream(c, o);
  return grad_in;
}

// ---------------------------------------------------------------------------
// dense, activations, dropout

template <class T>
LayerParams<T> make_dense(std::string name, std::size_t in, std::size_t out) {
  return LayerParams<T>(LayerKind::dense, std::move(name), {out, in}, out);
}

template <class T>
std::vector<T> dense_forward(std::span<const T> input, const LayerParams<T>& params) {
  const std::size_t out_n = params.weight_shape.at(0);
  const std::size_t in_n = params.weight_shape.at(1);
  if (input.size() != in_n) {
    std::ostringstream os;
    os << params.name << ": input size " << input.size() << ", weights expect " << in_n;
    throw ShapeError(os.str());
  }
  std::vector<T> out(params.bias.begin(), params.bias.end());
  for (std::size_t o = 0; o < out_n; ++o) {
    const T* w = params.weight.data() + o * in_n;
    T acc{0};
    for (std::size_t i = 0; i < in_n; ++i) acc += w[i] * input[i];
    out[o] += acc;
  }
  return out;
}

template <class T>
std::vector<T> dense_backward(std::span<const T> input, LayerParams<T>& params,
                              std::span<const T> upstream) {
  const std::size_t out_n = params.weight_shape.at(0);
  const std::size_t in_n = params.weight_shape.at(1);
  if (input.size() != in_n || upstream.size() != out_n) {
    throw ShapeError(params.name + ": dense backward shape mismatch");
  }
  std::vector<T> grad_in(in_n, T{0});
  for (std::size_t o = 0; o < out_n; ++o) {
    const T g = upstream[o];
    params.bias_grad[o] += g;
    const T* w = params.weight.data() + o * in_n;
    T* gw = params.weight_grad.data() + o * in_n;
    for (std::size_t i = 0; i < in_n; ++i) {
      gw[i] += g * input[i];
      grad_in[i] += g * w[i];
    }
  }
  return grad_in;
}

template <class T>
T relu(T x) {
  return x > T{0} ? x : T{0};
}

template <class T>
T sigmoid(T x) {
  if (x >= T{0}) {
    const T e = std::exp(-x);
    return T{1} / (T{1} + e);
  }
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <class T>
void relu_inplace(std::span<T> xs) {
  for (auto& x : xs) x = relu(x);
}

/// Zeroes grads where the forward output was clamped at 0.
template <class T>
void relu_backward_inplace(std::span<const T> activated, std::span<T> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(activated[i] > T{0})) grad[i] = T{0};
}

/// Inverted dropout. Returns the per-unit multiplier (0 or 1/(1-rate)) so the
/// backward pass can reuse it; in infer mode the mask is all ones.
template <class T>
std::vector<T> dropout(std::span<T> values, double rate, Rng& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
  std::vector<T> mask(values.size(), T{1});
  if (mode == Mode::infer || rate == 0.0) return mask;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  std::bernoulli_distribution keep(1.0 - rate);
  for (std::size_t i = 0; i < values.size(); ++i) {
    mask[i] = keep(rng) ? scale : T{0};
    values[i] *= mask[i];
  }
  return mask;
}

// ---------------------------------------------------------------------------
// loss

inline constexpr double kProbClamp = 1e-7;

struct LossValue {
  double loss;
  double grad;  // dL/dp
};

inline LossValue bce_loss(double p, int y) {
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  const double t = static_cast<double>(y);
  return {-(t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc)), -t / pc + (1.0 - t) / (1.0 - pc)};
}

/// dL/dz for p = sigmoid(z); the p(1-p) factor cancels analytically.
inline double bce_logit_grad(double p, int y) { return p - static_cast<double>(y); }

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double lr{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
};

template <class T>
struct AdamState {
  AdamHyper hyper;
  std::vector<double> m_weight, v_weight, m_bias, v_bias;
  std::uint64_t step{0};

  AdamState() = default;
  AdamState(const LayerParams<T>& p, AdamHyper h)
      : hyper(h),
        m_weight(p.weight.size(), 0.0),
        v_weight(p.weight.size(), 0.0),
        m_bias(p.bias.size(), 0.0),
        v_bias(p.bias.size(), 0.0) {}
};

/// One Adam update with bias correction. Frozen layers are skipped entirely
/// (grads are still cleared). Grads are zeroed afterwards.
template <class T>
void adam_step(LayerParams<T>& params, AdamState<T>& state) {
  if (params.frozen) {
    params.zero_grad();
    return;
  }
  if (state.m_weight.size() != params.weight.size() || state.m_bias.size() != params.bias.size()) {
    throw ShapeError(params.name + ": Adam moments do not match parameter shapes");
  }
  auto finite = [](const std::vector<T>& g) {
    return std::all_of(g.begin(), g.end(), [](T v) { return std::isfinite(v); });
  };
  if (!finite(params.weight_grad) || !finite(params.bias_grad)) {
    throw NumericError("non-finite gradient in layer '" + params.name + "'");
  }
  ++state.step;
  const auto& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  auto update = [&](std::vector<T>& w, const std::vector<T>& g, std::vector<double>& m,
                    std::vector<double>& v) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - h.lr * mhat / (std::sqrt(vhat) + h.eps));
    }
  };
  update(params.weight, params.weight_grad, state.m_weight, state.v_weight);
  update(params.bias, params.bias_grad, state.m_bias, state.v_bias);
  params.zero_grad();
}

}  // namespace somnoflow::nn
