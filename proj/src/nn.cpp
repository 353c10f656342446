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

#include "stgram/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace stgram::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

void init_uniform_fan_in(ParamTensor& p, int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int64_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-bound, bound);
}

void check_rank(const Tensor& x, int rank, const char* where) {
  if (x.rank() != rank) {
    throw std::invalid_argument(std::string(where) + ": expected rank " + std::to_string(rank) +
                                " input, got " + x.shape_str());
  }
}

}  // namespace

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * M_PI * u2);
  have_spare_ = true;
  return r * std::cos(2.0 * M_PI * u2);
}

// ---- Conv1d -----------------------------------------------------------------

Conv1d::Conv1d(std::string name, int in_channels, int out_channels, int kernel, int stride,
               int pad, bool bias, Rng& rng)
    : weight(name + ".weight", {out_channels, in_channels, kernel}),
      bias_param(name + ".bias", {bias ? out_channels : 0}),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      has_bias_(bias) {
  const int64_t fan_in = static_cast<int64_t>(in_channels) * kernel;
  init_uniform_fan_in(weight, fan_in, rng);
  if (has_bias_) init_uniform_fan_in(bias_param, fan_in, rng);
}

Tensor Conv1d::forward(const Tensor& x, Phase phase) {
  check_rank(x, 3, "Conv1d");
  if (x.dim(1) != in_channels_) {
    throw std::invalid_argument("Conv1d: expected " + std::to_string(in_channels_) +
                                " input channels, got " + x.shape_str());
  }
  const int64_t batch = x.dim(0);
  const int64_t len = x.dim(2);
  in_len_ = len;
  const int64_t padded = len + 2 * pad_;
  if (padded < kernel_) throw std::invalid_argument("Conv1d: input shorter than kernel");
  const int64_t out_len = (padded - kernel_) / stride_ + 1;
  const int64_t col_rows = static_cast<int64_t>(in_channels_) * kernel_;

  Tensor y({batch, out_channels_, out_len});
  const bool keep = phase == Phase::train;
  if (keep) {
    cached_cols_ = Tensor({batch, col_rows, out_len});
  }
  Tensor scratch;
  if (!keep) scratch = Tensor({col_rows, out_len});

  CMapMat wm(weight.value.data(), out_channels_, col_rows);
  for (int64_t b = 0; b < batch; ++b) {
    double* col = keep ? cached_cols_.data() + b * col_rows * out_len : scratch.data();
    const double* xb = x.data() + b * in_channels_ * len;
    for (int c = 0; c < in_channels_; ++c) {
      const double* xc = xb + static_cast<int64_t>(c) * len;
      for (int k = 0; k < kernel_; ++k) {
        double* row = col + (static_cast<int64_t>(c) * kernel_ + k) * out_len;
        for (int64_t t = 0; t < out_len; ++t) {
          const int64_t src = t * stride_ + k - pad_;
          row[t] = (src >= 0 && src < len) ? xc[src] : 0.0;
        }
      }
    }
    MapMat ym(y.data() + b * out_channels_ * out_len, out_channels_, out_len);
    CMapMat cm(col, col_rows, out_len);
    ym.noalias() = wm * cm;
    if (has_bias_) {
      CMapVec bv(bias_param.value.data(), out_channels_);
      ym.colwise() += bv;
    }
  }
  return y;
}

Tensor Conv1d::backward(const Tensor& grad_out) {
  check_rank(grad_out, 3, "Conv1d backward");
  const int64_t batch = grad_out.dim(0);
  const int64_t out_len = grad_out.dim(2);
  const int64_t col_rows = static_cast<int64_t>(in_channels_) * kernel_;
  if (cached_cols_.empty()) throw std::logic_error("Conv1d backward without cached forward");

  Tensor dx({batch, in_channels_, in_len_});
  CMapMat wm(weight.value.data(), out_channels_, col_rows);
  MapMat gw(weight.grad.data(), out_channels_, col_rows);
  RowMat dcol(col_rows, out_len);

  for (int64_t b = 0; b < batch; ++b) {
    CMapMat gym(grad_out.data() + b * out_channels_ * out_len, out_channels_, out_len);
    CMapMat cm(cached_cols_.data() + b * col_rows * out_len, col_rows, out_len);
    gw.noalias() += gym * cm.transpose();
    if (has_bias_) {
      MapVec gb(bias_param.grad.data(), out_channels_);
      gb.noalias() += gym.rowwise().sum();
    }
    dcol.noalias() = wm.transpose() * gym;
    double* dxb = dx.data() + b * in_channels_ * in_len_;
    for (int c = 0; c < in_channels_; ++c) {
      double* dxc = dxb + static_cast<int64_t>(c) * in_len_;
      for (int k = 0; k < kernel_; ++k) {
        const double* row = dcol.data() + (static_cast<int64_t>(c) * kernel_ + k) * out_len;
        for (int64_t t = 0; t < out_len; ++t) {
          const int64_t src = t * stride_ + k - pad_;
          if (src >= 0 && src < in_len_) dxc[src] += row[t];
        }
      }
    }
  }
  return dx;
}

void Conv1d::collect_state(std::vector<ParamTensor*>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias_param);
}

// ---- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel_h, int kernel_w,
               int stride, int pad, bool bias, Rng& rng)
    : weight(name + ".weight", {out_channels, in_channels, kernel_h, kernel_w}),
      bias_param(name + ".bias", {bias ? out_channels : 0}),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_h_(kernel_h),
      kernel_w_(kernel_w),
      stride_(stride),
      pad_(pad),
      has_bias_(bias) {
  const int64_t fan_in = static_cast<int64_t>(in_channels) * kernel_h * kernel_w;
  init_uniform_fan_in(weight, fan_in, rng);
  if (has_bias_) init_uniform_fan_in(bias_param, fan_in, rng);
}

Tensor Conv2d::forward(const Tensor& x, Phase phase) {
  check_rank(x, 4, "Conv2d");
  if (x.dim(1) != in_channels_) {
    throw std::invalid_argument("Conv2d: expected " + std::to_string(in_channels_) +
                                " input channels, got " + x.shape_str());
  }
  const int64_t batch = x.dim(0);
  in_h_ = x.dim(2);
  in_w_ = x.dim(3);
  const int64_t out_h = (in_h_ + 2 * pad_ - kernel_h_) / stride_ + 1;
  const int64_t out_w = (in_w_ + 2 * pad_ - kernel_w_) / stride_ + 1;
  if (out_h <= 0 || out_w <= 0) {
    throw std::invalid_argument("Conv2d: input " + x.shape_str() + " too small for kernel");
  }
  const int64_t col_rows = static_cast<int64_t>(in_channels_) * kernel_h_ * kernel_w_;
  const int64_t out_hw = out_h * out_w;

  Tensor y({batch, out_channels_, out_h, out_w});
  const bool keep = phase == Phase::train;
  if (keep) cached_cols_ = Tensor({batch, col_rows, out_hw});
  Tensor scratch;
  if (!keep) scratch = Tensor({col_rows, out_hw});

  CMapMat wm(weight.value.data(), out_channels_, col_rows);
  for (int64_t b = 0; b < batch; ++b) {
    double* col = keep ? cached_cols_.data() + b * col_rows * out_hw : scratch.data();
    const double* xb = x.data() + b * in_channels_ * in_h_ * in_w_;
    int64_t r = 0;
    for (int c = 0; c < in_channels_; ++c) {
      const double* xc = xb + static_cast<int64_t>(c) * in_h_ * in_w_;
      for (int ki = 0; ki < kernel_h_; ++ki) {
        for (int kj = 0; kj < kernel_w_; ++kj, ++r) {
          double* row = col + r * out_hw;
          for (int64_t oh = 0; oh < out_h; ++oh) {
            const int64_t si = oh * stride_ + ki - pad_;
            double* dst = row + oh * out_w;
            if (si < 0 || si >= in_h_) {
              std::fill(dst, dst + out_w, 0.0);
              continue;
            }
            const double* src_row = xc + si * in_w_;
            for (int64_t ow = 0; ow < out_w; ++ow) {
              const int64_t sj = ow * stride_ + kj - pad_;
              dst[ow] = (sj >= 0 && sj < in_w_) ? src_row[sj] : 0.0;
            }
          }
        }
      }
    }
    MapMat ym(y.data() + b * out_channels_ * out_hw, out_channels_, out_hw);
    CMapMat cm(col, col_rows, out_hw);
    ym.noalias() = wm * cm;
    if (has_bias_) {
      CMapVec bv(bias_param.value.data(), out_channels_);
      ym.colwise() += bv;
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  check_rank(grad_out, 4, "Conv2d backward");
  const int64_t batch = grad_out.dim(0);
  const int64_t out_h = grad_out.dim(2);
  const int64_t out_w = grad_out.dim(3);
  const int64_t out_hw = out_h * out_w;
  const int64_t col_rows = static_cast<int64_t>(in_channels_) * kernel_h_ * kernel_w_;
  if (cached_cols_.empty()) throw std::logic_error("Conv2d backward without cached forward");

  Tensor dx({batch, in_channels_, in_h_, in_w_});
  CMapMat wm(weight.value.data(), out_channels_, col_rows);
  MapMat gw(weight.grad.data(), out_channels_, col_rows);
  RowMat dcol(col_rows, out_hw);

  for (int64_t b = 0; b < batch; ++b) {
    CMapMat gym(grad_out.data() + b * out_channels_ * out_hw, out_channels_, out_hw);
    CMapMat cm(cached_cols_.data() + b * col_rows * out_hw, col_rows, out_hw);
    gw.noalias() += gym * cm.transpose();
    if (has_bias_) {
      MapVec gb(bias_param.grad.data(), out_channels_);
      gb.noalias() += gym.rowwise().sum();
    }
    dcol.noalias() = wm.transpose() * gym;
    double* dxb = dx.data() + b * in_channels_ * in_h_ * in_w_;
    int64_t r = 0;
    for (int c = 0; c < in_channels_; ++c) {
      double* dxc = dxb + static_cast<int64_t>(c) * in_h_ * in_w_;
      for (int ki = 0; ki < kernel_h_; ++ki) {
        for (int kj = 0; kj < kernel_w_; ++kj, ++r) {
          const double* row = dcol.data() + r * out_hw;
          for (int64_t oh = 0; oh < out_h; ++oh) {
            const int64_t si = oh * stride_ + ki - pad_;
            if (si < 0 || si >= in_h_) continue;
            double* dst_row = dxc + si * in_w_;
            const double* src = row + oh * out_w;
            for (int64_t ow = 0; ow < out_w; ++ow) {
              const int64_t sj = ow * stride_ + kj - pad_;
              if (sj >= 0 && sj < in_w_) dst_row[sj] += src[ow];
            }
          }
        }
      }
    }
  }
  return dx;
}

void Conv2d::collect_state(std::vector<ParamTensor*>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias_param);
}

// ---- DepthwiseConv2d --------------------------------------------------------

DepthwiseConv2d::DepthwiseConv2d(std::string name, int channels, int kernel_h, int kernel_w,
                                 int stride, int pad, bool bias, Rng& rng)
    : weight(name + ".weight", {channels, kernel_h, kernel_w}),
      bias_param(name + ".bias", {bias ? channels : 0}),
      channels_(channels),
      kernel_h_(kernel_h),
      kernel_w_(kernel_w),
      stride_(stride),
      pad_(pad),
      has_bias_(bias) {
  const int64_t fan_in = static_cast<int64_t>(kernel_h) * kernel_w;
  init_uniform_fan_in(weight, fan_in, rng);
  if (has_bias_) init_uniform_fan_in(bias_param, fan_in, rng);
}

Tensor DepthwiseConv2d::forward(const Tensor& x, Phase phase) {
  check_rank(x, 4, "DepthwiseConv2d");
  if (x.dim(1) != channels_) {
    throw std::invalid_argument("DepthwiseConv2d: expected " + std::to_string(channels_) +
                                " channels, got " + x.shape_str());
  }
  const int64_t batch = x.dim(0);
  const int64_t in_h = x.dim(2), in_w = x.dim(3);
  const int64_t out_h = (in_h + 2 * pad_ - kernel_h_) / stride_ + 1;
  const int64_t out_w = (in_w + 2 * pad_ - kernel_w_) / stride_ + 1;
  if (out_h <= 0 || out_w <= 0) {
    throw std::invalid_argument("DepthwiseConv2d: input " + x.shape_str() + " too small");
  }
  if (phase == Phase::train) cached_input_ = x;

  Tensor y({batch, channels_, out_h, out_w});
  for (int64_t b = 0; b < batch; ++b) {
    for (int c = 0; c < channels_; ++c) {
      const double* xc = x.data() + (b * channels_ + c) * in_h * in_w;
      const double* wc = weight.value.data() + static_cast<int64_t>(c) * kernel_h_ * kernel_w_;
      double* yc = y.data() + (b * channels_ + c) * out_h * out_w;
      const double bias_v = has_bias_ ? bias_param.value[c] : 0.0;
      for (int64_t oh = 0; oh < out_h; ++oh) {
        for (int64_t ow = 0; ow < out_w; ++ow) {
          double acc = bias_v;
          for (int ki = 0; ki < kernel_h_; ++ki) {
            const int64_t si = oh * stride_ + ki - pad_;
            if (si < 0 || si >= in_h) continue;
            const double* xrow = xc + si * in_w;
            const double* wrow = wc + static_cast<int64_t>(ki) * kernel_w_;
            for (int kj = 0; kj < kernel_w_; ++kj) {
              const int64_t sj = ow * stride_ + kj - pad_;
              if (sj >= 0 && sj < in_w) acc += xrow[sj] * wrow[kj];
            }
          }
          yc[oh * out_w + ow] = acc;
        }
      }
    }
  }
  return y;
}

Tensor DepthwiseConv2d::backward(const Tensor& grad_out) {
  check_rank(grad_out, 4, "DepthwiseConv2d backward");
  if (cached_input_.empty()) throw std::logic_error("DepthwiseConv2d backward without forward");
  const Tensor& x = cached_input_;
  const int64_t batch = x.dim(0);
  const int64_t in_h = x.dim(2), in_w = x.dim(3);
  const int64_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);

  Tensor dx({batch, channels_, in_h, in_w});
  for (int64_t b = 0; b < batch; ++b) {
    for (int c = 0; c < channels_; ++c) {
      const double* xc = x.data() + (b * channels_ + c) * in_h * in_w;
      const double* wc = weight.value.data() + static_cast<int64_t>(c) * kernel_h_ * kernel_w_;
      double* gwc = weight.grad.data() + static_cast<int64_t>(c) * kernel_h_ * kernel_w_;
      const double* gyc = grad_out.data() + (b * channels_ + c) * out_h * out_w;
      double* dxc = dx.data() + (b * channels_ + c) * in_h * in_w;
      for (int64_t oh = 0; oh < out_h; ++oh) {
        for (int64_t ow = 0; ow < out_w; ++ow) {
          const double g = gyc[oh * out_w + ow];
          if (has_bias_) bias_param.grad[c] += g;
          for (int ki = 0; ki < kernel_h_; ++ki) {
            const int64_t si = oh * stride_ + ki - pad_;
            if (si < 0 || si >= in_h) continue;
            for (int kj = 0; kj < kernel_w_; ++kj) {
              const int64_t sj = ow * stride_ + kj - pad_;
              if (sj < 0 || sj >= in_w) continue;
              gwc[ki * kernel_w_ + kj] += g * xc[si * in_w + sj];
              dxc[si * in_w + sj] += g * wc[ki * kernel_w_ + kj];
            }
          }
        }
      }
    }
  }
  return dx;
}

void DepthwiseConv2d::collect_state(std::vector<ParamTensor*>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias_param);
}

// ---- ChannelLayerNorm -------------------------------------------------------

ChannelLayerNorm::ChannelLayerNorm(std::string name, int channels, double eps)
    : gain(name + ".gain", {channels}),
      bias_param(name + ".bias", {channels}),
      channels_(channels),
      eps_(eps) {
  gain.value.fill(1.0);
}

Tensor ChannelLayerNorm::forward(const Tensor& x, Phase phase) {
  check_rank(x, 3, "ChannelLayerNorm");
  if (x.dim(1) != channels_) {
    throw std::invalid_argument("ChannelLayerNorm: expected " + std::to_string(channels_) +
                                " channels, got " + x.shape_str());
  }
  const int64_t batch = x.dim(0);
  const int64_t len = x.dim(2);

  Tensor y({batch, channels_, len});
  cached_norm_ = Tensor({batch, channels_, len});
  cached_inv_std_ = Tensor({batch, len});
  (void)phase;  // backward is valid after either phase; caches are cheap here

  for (int64_t b = 0; b < batch; ++b) {
    const double* xb = x.data() + b * channels_ * len;
    double* yb = y.data() + b * channels_ * len;
    double* nb = cached_norm_.data() + b * channels_ * len;
    double* ib = cached_inv_std_.data() + b * len;
    for (int64_t t = 0; t < len; ++t) {
      double mean = 0.0;
      for (int c = 0; c < channels_; ++c) mean += xb[static_cast<int64_t>(c) * len + t];
      mean /= channels_;
      double var = 0.0;
      for (int c = 0; c < channels_; ++c) {
        const double d = xb[static_cast<int64_t>(c) * len + t] - mean;
        var += d * d;
      }
      var /= channels_;
      const double inv = 1.0 / std::sqrt(var + eps_);
      ib[t] = inv;
      for (int c = 0; c < channels_; ++c) {
        const int64_t idx = static_cast<int64_t>(c) * len + t;
        const double xhat = (xb[idx] - mean) * inv;
        nb[idx] = xhat;
        yb[idx] = gain.value[c] * xhat + bias_param.value[c];
      }
    }
  }
  return y;
}

Tensor ChannelLayerNorm::backward(const Tensor& grad_out) {
  check_rank(grad_out, 3, "ChannelLayerNorm backward");
  if (cached_norm_.empty()) throw std::logic_error("ChannelLayerNorm backward without forward");
  const int64_t batch = grad_out.dim(0);
  const int64_t len = grad_out.dim(2);

  Tensor dx({batch, channels_, len});
  for (int64_t b = 0; b < batch; ++b) {
    const double* gb = grad_out.data() + b * channels_ * len;
    const double* nb = cached_norm_.data() + b * channels_ * len;
    const double* ib = cached_inv_std_.data() + b * len;
    double* db = dx.data() + b * channels_ * len;
    for (int64_t t = 0; t < len; ++t) {
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int c = 0; c < channels_; ++c) {
        const int64_t idx = static_cast<int64_t>(c) * len + t;
        const double g = gb[idx];
        const double xhat = nb[idx];
        gain.grad[c] += g * xhat;
        bias_param.grad[c] += g;
        const double dxhat = g * gain.value[c];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
      }
      const double inv = ib[t];
      const double mean_dxhat = sum_dxhat / channels_;
      const double mean_dxhat_xhat = sum_dxhat_xhat / channels_;
      for (int c = 0; c < channels_; ++c) {
        const int64_t idx = static_cast<int64_t>(c) * len + t;
        const double dxhat = gb[idx] * gain.value[c];
        db[idx] = inv * (dxhat - mean_dxhat - nb[idx] * mean_dxhat_xhat);
      }
    }
  }
  return dx;
}

void ChannelLayerNorm::collect_state(std::vector<ParamTensor*>& out) {
  out.push_back(&gain);
  out.push_back(&bias_param);
}

// ---- BatchNorm2d ------------------------------------------------------------

BatchNorm2d::BatchNorm2d(std::string name, int channels, double eps, double momentum)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean(name + ".running_mean", {channels}, /*train=*/false),
      running_var(name + ".running_var", {channels}, /*train=*/false),
      channels_(channels),
      eps_(eps),
      momentum_(momentum) {
  gamma.value.fill(1.0);
  running_var.value.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, Phase phase) {
  check_rank(x, 4, "BatchNorm2d");
  if (x.dim(1) != channels_) {
    throw std::invalid_argument("BatchNorm2d: expected " + std::to_string(channels_) +
                                " channels, got " + x.shape_str());
  }
  last_phase_ = phase;
  const int64_t batch = x.dim(0);
  const int64_t hw = x.dim(2) * x.dim(3);
  const int64_t n = batch * hw;

  Tensor y({batch, channels_, x.dim(2), x.dim(3)});
  cached_inv_std_ = Tensor({channels_});

  if (phase == Phase::train) {
    cached_norm_ = Tensor({batch, channels_, x.dim(2), x.dim(3)});
    for (int c = 0; c < channels_; ++c) {
      double mean = 0.0;
      for (int64_t b = 0; b < batch; ++b) {
        const double* xc = x.data() + (b * channels_ + c) * hw;
        for (int64_t i = 0; i < hw; ++i) mean += xc[i];
      }
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (int64_t b = 0; b < batch; ++b) {
        const double* xc = x.data() + (b * channels_ + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const double d = xc[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + eps_);
      cached_inv_std_[c] = inv;
      running_mean.value[c] = (1.0 - momentum_) * running_mean.value[c] + momentum_ * mean;
      running_var.value[c] = (1.0 - momentum_) * running_var.value[c] + momentum_ * var;
      const double g = gamma.value[c], bta = beta.value[c];
      for (int64_t b = 0; b < batch; ++b) {
        const double* xc = x.data() + (b * channels_ + c) * hw;
        double* yc = y.data() + (b * channels_ + c) * hw;
        double* nc = cached_norm_.data() + (b * channels_ + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const double xhat = (xc[i] - mean) * inv;
          nc[i] = xhat;
          yc[i] = g * xhat + bta;
        }
      }
    }
  } else {
    for (int c = 0; c < channels_; ++c) {
      const double inv = 1.0 / std::sqrt(running_var.value[c] + eps_);
      cached_inv_std_[c] = inv;
      const double mean = running_mean.value[c];
      const double g = gamma.value[c], bta = beta.value[c];
      for (int64_t b = 0; b < batch; ++b) {
        const double* xc = x.data() + (b * channels_ + c) * hw;
        double* yc = y.data() + (b * channels_ + c) * hw;
        for (int64_t i = 0; i < hw; ++i) yc[i] = g * (xc[i] - mean) * inv + bta;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  check_rank(grad_out, 4, "BatchNorm2d backward");
  const int64_t batch = grad_out.dim(0);
  const int64_t hw = grad_out.dim(2) * grad_out.dim(3);
  const int64_t n = batch * hw;
  Tensor dx({batch, channels_, grad_out.dim(2), grad_out.dim(3)});

  if (last_phase_ == Phase::eval) {
    // Running statistics are constants: straight-through scale.
    for (int c = 0; c < channels_; ++c) {
      const double scale = gamma.value[c] * cached_inv_std_[c];
      for (int64_t b = 0; b < batch; ++b) {
        const double* gc = grad_out.data() + (b * channels_ + c) * hw;
        double* dc = dx.data() + (b * channels_ + c) * hw;
        for (int64_t i = 0; i < hw; ++i) dc[i] = gc[i] * scale;
      }
    }
    return dx;
  }

  if (cached_norm_.empty()) throw std::logic_error("BatchNorm2d backward without forward");
  for (int c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_g_xhat = 0.0;
    for (int64_t b = 0; b < batch; ++b) {
      const double* gc = grad_out.data() + (b * channels_ + c) * hw;
      const double* nc = cached_norm_.data() + (b * channels_ + c) * hw;
      for (int64_t i = 0; i < hw; ++i) {
        sum_g += gc[i];
        sum_g_xhat += gc[i] * nc[i];
      }
    }
    gamma.grad[c] += sum_g_xhat;
    beta.grad[c] += sum_g;
    const double g = gamma.value[c];
    const double inv = cached_inv_std_[c];
    const double mean_g = sum_g / static_cast<double>(n);
    const double mean_g_xhat = sum_g_xhat / static_cast<double>(n);
    for (int64_t b = 0; b < batch; ++b) {
      const double* gc = grad_out.data() + (b * channels_ + c) * hw;
      const double* nc = cached_norm_.data() + (b * channels_ + c) * hw;
      double* dc = dx.data() + (b * channels_ + c) * hw;
      for (int64_t i = 0; i < hw; ++i) {
        dc[i] = g * inv * (gc[i] - mean_g - nc[i] * mean_g_xhat);
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect_state(std::vector<ParamTensor*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

// ---- Activations ------------------------------------------------------------

Tensor LeakyReLU::forward(const Tensor& x, Phase phase) {
  if (phase == Phase::train) cached_input_ = x;
  Tensor y = x;
  double* p = y.data();
  for (int64_t i = 0; i < y.size(); ++i) {
    if (p[i] < 0.0) p[i] *= slope_;
  }
  return y;
}

Tensor LeakyReLU::backward(const Tensor& grad_out) {
  if (cached_input_.empty()) throw std::logic_error("LeakyReLU backward without forward");
  Tensor dx = grad_out;
  const double* x = cached_input_.data();
  double* p = dx.data();
  for (int64_t i = 0; i < dx.size(); ++i) {
    if (x[i] < 0.0) p[i] *= slope_;
  }
  return dx;
}

PReLU::PReLU(std::string name, int channels, double init)
    : slope(name + ".slope", {channels}), channels_(channels) {
  slope.value.fill(init);
}

Tensor PReLU::forward(const Tensor& x, Phase phase) {
  if (x.rank() < 2 || x.dim(1) != channels_) {
    throw std::invalid_argument("PReLU: expected channel dim " + std::to_string(channels_) +
                                ", got " + x.shape_str());
  }
  if (phase == Phase::train) cached_input_ = x;
  const int64_t batch = x.dim(0);
  int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);

  Tensor y = x;
  for (int64_t b = 0; b < batch; ++b) {
    for (int c = 0; c < channels_; ++c) {
      const double a = slope.value[c];
      double* p = y.data() + (b * channels_ + c) * inner;
      for (int64_t i = 0; i < inner; ++i) {
        if (p[i] < 0.0) p[i] *= a;
      }
    }
  }
  return y;
}

Tensor PReLU::backward(const Tensor& grad_out) {
  if (cached_input_.empty()) throw std::logic_error("PReLU backward without forward");
  const Tensor& x = cached_input_;
  const int64_t batch = x.dim(0);
  int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);

  Tensor dx = grad_out;
  for (int64_t b = 0; b < batch; ++b) {
    for (int c = 0; c < channels_; ++c) {
      const double a = slope.value[c];
      const double* xc = x.data() + (b * channels_ + c) * inner;
      double* gc = dx.data() + (b * channels_ + c) * inner;
      double da = 0.0;
      for (int64_t i = 0; i < inner; ++i) {
        if (xc[i] < 0.0) {
          da += gc[i] * xc[i];
          gc[i] *= a;
        }
      }
      slope.grad[c] += da;
    }
  }
  return dx;
}

void PReLU::collect_state(std::vector<ParamTensor*>& out) { out.push_back(&slope); }

// ---- Linear -----------------------------------------------------------------

Linear::Linear(std::string name, int in_features, int out_features, bool bias, Rng& rng)
    : weight(name + ".weight", {out_features, in_features}),
      bias_param(name + ".bias", {bias ? out_features : 0}),
      in_features_(in_features),
      out_features_(out_features),
      has_bias_(bias) {
  init_uniform_fan_in(weight, in_features, rng);
  if (has_bias_) init_uniform_fan_in(bias_param, in_features, rng);
}

Tensor Linear::forward(const Tensor& x, Phase phase) {
  check_rank(x, 2, "Linear");
  if (x.dim(1) != in_features_) {
    throw std::invalid_argument("Linear: expected " + std::to_string(in_features_) +
                                " features, got " + x.shape_str());
  }
  if (phase == Phase::train) cached_input_ = x;
  const int64_t batch = x.dim(0);
  Tensor y({batch, out_features_});
  CMapMat xm(x.data(), batch, in_features_);
  CMapMat wm(weight.value.data(), out_features_, in_features_);
  MapMat ym(y.data(), batch, out_features_);
  ym.noalias() = xm * wm.transpose();
  if (has_bias_) {
    CMapVec bv(bias_param.value.data(), out_features_);
    ym.rowwise() += bv.transpose();
  }
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  check_rank(grad_out, 2, "Linear backward");
  if (cached_input_.empty()) throw std::logic_error("Linear backward without forward");
  const int64_t batch = grad_out.dim(0);
  CMapMat gym(grad_out.data(), batch, out_features_);
  CMapMat xm(cached_input_.data(), batch, in_features_);
  MapMat gw(weight.grad.data(), out_features_, in_features_);
  gw.noalias() += gym.transpose() * xm;
  if (has_bias_) {
    MapVec gb(bias_param.grad.data(), out_features_);
    gb.noalias() += gym.colwise().sum().transpose();
  }
  Tensor dx({batch, in_features_});
  MapMat dxm(dx.data(), batch, in_features_);
  CMapMat wm(weight.value.data(), out_features_, in_features_);
  dxm.noalias() = gym * wm;
  return dx;
}

void Linear::collect_state(std::vector<ParamTensor*>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias_param);
}

// ---- Containers -------------------------------------------------------------

Tensor Sequential::forward(const Tensor& x, Phase phase) {
  Tensor cur = x;
  for (auto& layer : layers_) cur = layer->forward(cur, phase);
  return cur;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor cur = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
  return cur;
}

void Sequential::collect_state(std::vector<ParamTensor*>& out) {
  for (auto& layer : layers_) layer->collect_state(out);
}

Tensor Residual::forward(const Tensor& x, Phase phase) {
  Tensor y = body_->forward(x, phase);
  if (!y.same_shape(x)) {
    throw std::invalid_argument("Residual: body changed shape from " + x.shape_str() + " to " +
                                y.shape_str());
  }
  y.add(x);
  return y;
}

Tensor Residual::backward(const Tensor& grad_out) {
  Tensor dx = body_->backward(grad_out);
  dx.add(grad_out);
  return dx;
}

void Residual::collect_state(std::vector<ParamTensor*>& out) { body_->collect_state(out); }

// ---- Loss -------------------------------------------------------------------

std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* grad_logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_cross_entropy expects (B, C)");
  const int64_t batch = logits.dim(0);
  const int64_t classes = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != batch) {
    throw std::invalid_argument("label count does not match batch size");
  }
  if (grad_logits != nullptr) *grad_logits = Tensor({batch, classes});

  double total = 0.0;
  for (int64_t b = 0; b < batch; ++b) {
    const int label = labels[static_cast<size_t>(b)];
    if (label < 0 || label >= classes) {
      throw std::invalid_argument("class index " + std::to_string(label) + " out of range [0, " +
                                  std::to_string(classes) + ")");
    }
    const double* row = logits.data() + b * classes;
    double mx = row[0];
    for (int64_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (int64_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double log_z = std::log(z) + mx;
    total += log_z - row[label];
    if (grad_logits != nullptr) {
      double* g = grad_logits->data() + b * classes;
      for (int64_t c = 0; c < classes; ++c) {
        g[c] = std::exp(row[c] - log_z) / static_cast<double>(batch);
      }
      g[label] -= 1.0 / static_cast<double>(batch);
    }
  }
  return total / static_cast<double>(batch);
}

// ---- Optimizer --------------------------------------------------------------

void Adam::step(const std::vector<ParamTensor*>& params, double lr) {
  if (slots_.empty()) {
    slots_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      slots_[i].m = Tensor(params[i]->value.shape());
      slots_[i].v = Tensor(params[i]->value.shape());
    }
  }
  if (slots_.size() != params.size()) {
    throw std::logic_error("Adam: parameter list changed between steps");
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (size_t i = 0; i < params.size(); ++i) {
    ParamTensor& p = *params[i];
    if (!p.trainable) continue;
    double* m = slots_[i].m.data();
    double* v = slots_[i].v.data();
    double* w = p.value.data();
    const double* g = p.grad.data();
    const int64_t n = p.value.size();
    for (int64_t j = 0; j < n; ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void clip_grad_norm(const std::vector<ParamTensor*>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double total = 0.0;
  for (const ParamTensor* p : params) {
    if (!p->trainable) continue;
    const double* g = p->grad.data();
    for (int64_t i = 0; i < p->grad.size(); ++i) total += g[i] * g[i];
  }
  total = std::sqrt(total);
  if (total <= max_norm) return;
  const double scale = max_norm / total;
  for (ParamTensor* p : params) {
    if (!p->trainable) continue;
    double* g = p->grad.data();
    for (int64_t i = 0; i < p->grad.size(); ++i) g[i] *= scale;
  }
}

void zero_grads(const std::vector<ParamTensor*>& params) {
  for (ParamTensor* p : params) p->grad.fill(0.0);
}

}  // namespace stgram::nn
