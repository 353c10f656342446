/* Copyright 2026 The stgram Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef STGRAM_NN_HPP_
#define STGRAM_NN_HPP_

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "stgram/tensor.hpp"

// Minimal training-capable layer set: forward caches what backward needs,
// backward accumulates parameter gradients and returns the input gradient.
// All math is double precision; matrix products go through Eigen.

namespace stgram::nn {

enum class Phase { train, eval };

/// Deterministic RNG with fixed bit-to-double mapping, so seeded runs are
/// reproducible independently of the standard library's distributions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double uniform() {  // [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();  // Box-Muller
  uint64_t next_u64() { return gen_(); }

  /// Fisher-Yates shuffle (top-down), stable across standard libraries.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

struct ParamTensor {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;  // false for buffers such as batch-norm running stats

  ParamTensor() = default;
  ParamTensor(std::string n, std::vector<int64_t> shape, bool train = true)
      : name(std::move(n)), value(shape), grad(shape), trainable(train) {}
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Phase phase) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  /// Appends trainable parameters and, when present, buffers.
  virtual void collect_state(std::vector<ParamTensor*>& out) {}
};

class Conv1d : public Layer {
 public:
  Conv1d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad,
         bool bias, Rng& rng);
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<ParamTensor*>& out) override;

  ParamTensor weight;  // (Co, Ci, K)
  ParamTensor bias_param;

 private:
  int in_channels_, out_channels_, kernel_, stride_, pad_;
  bool has_bias_;
  int64_t in_len_ = 0;
  Tensor cached_cols_;  // (B, Ci*K, Lo), train only
};

class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel_h, int kernel_w,
         int stride, int pad, bool bias, Rng& rng);
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<ParamTensor*>& out) override;

  ParamTensor weight;  // (Co, Ci, kh, kw)
  ParamTensor bias_param;

 private:
  int in_channels_, out_channels_, kernel_h_, kernel_w_, stride_, pad_;
  bool has_bias_;
  int64_t in_h_ = 0, in_w_ = 0;
  Tensor cached_cols_;  // (B, Ci*kh*kw, Ho*Wo), train only
};

class DepthwiseConv2d : public Layer {
 public:
  DepthwiseConv2d(std::string name, int channels, int kernel_h, int kernel_w, int stride, int pad,
                  bool bias, Rng& rng);
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<ParamTensor*>& out) override;

  ParamTensor weight;  // (C, kh, kw)
  ParamTensor bias_param;

 private:
  int channels_, kernel_h_, kernel_w_, stride_, pad_;
  bool has_bias_;
  Tensor cached_input_;  // train only
};

/// Normalizes across the channel axis at every (batch, time) position of a
/// (B, C, L) tensor, with learnable per-channel gain and bias.
class ChannelLayerNorm : public Layer {
 public:
  ChannelLayerNorm(std::string name, int channels, double eps = 1e-5);
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<ParamTensor*>& out) override;

  ParamTensor gain;  // (C)
  ParamTensor bias_param;

 private:
  int channels_;
  double eps_;
  Tensor cached_norm_;     // x-hat, (B, C, L)
  Tensor cached_inv_std_;  // (B, L)
};

class BatchNorm2d : public Layer {
 public:
  BatchNorm2d(std::string name, int channels, double eps = 1e-5, double momentum = 0.1);
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<ParamTensor*>& out) override;

  ParamTensor gamma, beta;
  ParamTensor running_mean, running_var;  // buffers

 private:
  int channels_;
  double eps_, momentum_;
  Phase last_phase_ = Phase::eval;
  Tensor cached_norm_;     // x-hat, train only
  Tensor cached_inv_std_;  // (C)
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(double negative_slope) : slope_(negative_slope) {}
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  double slope_;
  Tensor cached_input_;
};

/// Per-channel parametric ReLU over (B, C, ...) tensors.
class PReLU : public Layer {
 public:
  PReLU(std::string name, int channels, double init = 0.25);
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<ParamTensor*>& out) override;

  ParamTensor slope;  // (C)

 private:
  int channels_;
  Tensor cached_input_;
};

class Linear : public Layer {
 public:
  Linear(std::string name, int in_features, int out_features, bool bias, Rng& rng);
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<ParamTensor*>& out) override;

  ParamTensor weight;  // (out, in)
  ParamTensor bias_param;

 private:
  int in_features_, out_features_;
  bool has_bias_;
  Tensor cached_input_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<ParamTensor*>& out) override;
  size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Wraps a body with an identity shortcut (y = body(x) + x).
class Residual : public Layer {
 public:
  explicit Residual(std::unique_ptr<Layer> body) : body_(std::move(body)) {}
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_state(std::vector<ParamTensor*>& out) override;

 private:
  std::unique_ptr<Layer> body_;
};

/// Mean cross-entropy over rows of `logits` (B, C); writes d(loss)/d(logits)
/// into `grad_logits` when non-null. Numerically stable log-softmax.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* grad_logits);

/// Softmax of a single logit vector.
std::vector<double> softmax(const std::vector<double>& logits);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(const std::vector<ParamTensor*>& params, double lr);
  void reset() { slots_.clear(); step_count_ = 0; }
  int64_t step_count() const { return step_count_; }

 private:
  struct Slot {
    Tensor m, v;
  };
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  int64_t step_count_ = 0;
};

/// Global L2-norm gradient clipping; no-op when max_norm <= 0.
void clip_grad_norm(const std::vector<ParamTensor*>& params, double max_norm);

void zero_grads(const std::vector<ParamTensor*>& params);

}  // namespace stgram::nn

#endif  // STGRAM_NN_HPP_
