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

#include "stgram/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace stgram {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

constexpr double kCosClamp = 1.0 - 1e-7;  // keeps arccos and its gradient finite

int conv_out_size(int size, int kernel, int stride, int pad) {
  return (size + 2 * pad - kernel) / stride + 1;
}

}  // namespace

MFNConfig MFNConfig::paper_scale(int input_channels, int rows, int cols) {
  MFNConfig cfg;
  cfg.input_channels = input_channels;
  cfg.input_rows = rows;
  cfg.input_cols = cols;
  return cfg;
}

MFNConfig MFNConfig::compact_scale(int input_channels, int rows, int cols) {
  MFNConfig cfg;
  cfg.input_channels = input_channels;
  cfg.input_rows = rows;
  cfg.input_cols = cols;
  cfg.stem_channels = 16;
  cfg.bottlenecks = {{2, 16, 2, 2}, {2, 32, 2, 2}, {2, 32, 1, 1}};
  cfg.final_channels = 128;
  cfg.embedding_dim = 64;
  return cfg;
}

void MFNConfig::validate() const {
  if (input_channels != 1 && input_channels != 2) {
    throw std::invalid_argument("MFN input_channels must be 1 or 2, got " +
                                std::to_string(input_channels));
  }
  if (input_rows <= 0 || input_cols <= 0) throw std::invalid_argument("MFN input map is empty");
  if (stem_channels <= 0 || final_channels <= 0 || embedding_dim <= 0) {
    throw std::invalid_argument("MFN channel counts must be positive");
  }
  if (bottlenecks.empty()) throw std::invalid_argument("MFN needs at least one bottleneck stage");
  for (const auto& b : bottlenecks) {
    if (b.expansion < 1 || b.channels < 1 || b.repeats < 1 || (b.stride != 1 && b.stride != 2)) {
      throw std::invalid_argument("malformed MFN bottleneck spec");
    }
  }
}

MobileFaceNet::MobileFaceNet(const MFNConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Rng rng(seed);
  int h = cfg.input_rows;
  int w = cfg.input_cols;

  auto shrink = [&](int stride) {
    h = conv_out_size(h, 3, stride, 1);
    w = conv_out_size(w, 3, stride, 1);
    if (h <= 0 || w <= 0) {
      throw std::invalid_argument("MFN: input map " + std::to_string(cfg.input_rows) + "x" +
                                  std::to_string(cfg.input_cols) +
                                  " collapses before the pooling stage");
    }
  };

  net_.add(std::make_unique<nn::Conv2d>("mfn.stem.conv", cfg.input_channels, cfg.stem_channels, 3,
                                        3, 2, 1, /*bias=*/false, rng));
  net_.add(std::make_unique<nn::BatchNorm2d>("mfn.stem.bn", cfg.stem_channels));
  net_.add(std::make_unique<nn::PReLU>("mfn.stem.prelu", cfg.stem_channels));
  shrink(2);

  net_.add(std::make_unique<nn::DepthwiseConv2d>("mfn.dw.conv", cfg.stem_channels, 3, 3, 1, 1,
                                                 /*bias=*/false, rng));
  net_.add(std::make_unique<nn::BatchNorm2d>("mfn.dw.bn", cfg.stem_channels));
  net_.add(std::make_unique<nn::PReLU>("mfn.dw.prelu", cfg.stem_channels));
  shrink(1);

  int channels = cfg.stem_channels;
  int stage = 0;
  for (const auto& spec : cfg.bottlenecks) {
    for (int rep = 0; rep < spec.repeats; ++rep) {
      const int stride = rep == 0 ? spec.stride : 1;
      const int expanded = channels * spec.expansion;
      const std::string prefix =
          "mfn.block" + std::to_string(stage) + "." + std::to_string(rep);
      auto body = std::make_unique<nn::Sequential>();
      body->add(std::make_unique<nn::Conv2d>(prefix + ".expand", channels, expanded, 1, 1, 1, 0,
                                             /*bias=*/false, rng));
      body->add(std::make_unique<nn::BatchNorm2d>(prefix + ".expand_bn", expanded));
      body->add(std::make_unique<nn::PReLU>(prefix + ".expand_prelu", expanded));
      body->add(std::make_unique<nn::DepthwiseConv2d>(prefix + ".dw", expanded, 3, 3, stride, 1,
                                                      /*bias=*/false, rng));
      body->add(std::make_unique<nn::BatchNorm2d>(prefix + ".dw_bn", expanded));
      body->add(std::make_unique<nn::PReLU>(prefix + ".dw_prelu", expanded));
      body->add(std::make_unique<nn::Conv2d>(prefix + ".project", expanded, spec.channels, 1, 1, 1,
                                             0, /*bias=*/false, rng));
      body->add(std::make_unique<nn::BatchNorm2d>(prefix + ".project_bn", spec.channels));
      const bool residual = stride == 1 && channels == spec.channels;
      if (residual) {
        net_.add(std::make_unique<nn::Residual>(std::move(body)));
      } else {
        net_.add(std::move(body));
      }
      shrink(stride);
      channels = spec.channels;
    }
    ++stage;
  }

  net_.add(std::make_unique<nn::Conv2d>("mfn.head.conv", channels, cfg.final_channels, 1, 1, 1, 0,
                                        /*bias=*/false, rng));
  net_.add(std::make_unique<nn::BatchNorm2d>("mfn.head.bn", cfg.final_channels));
  net_.add(std::make_unique<nn::PReLU>("mfn.head.prelu", cfg.final_channels));

  // Global depthwise pooling sized to whatever map survives the strides.
  net_.add(std::make_unique<nn::DepthwiseConv2d>("mfn.gdconv", cfg.final_channels, h, w, 1, 0,
                                                 /*bias=*/false, rng));
  net_.add(std::make_unique<nn::BatchNorm2d>("mfn.gdconv_bn", cfg.final_channels));

  net_.add(std::make_unique<nn::Conv2d>("mfn.embed", cfg.final_channels, cfg.embedding_dim, 1, 1,
                                        1, 0, /*bias=*/false, rng));
  net_.add(std::make_unique<nn::BatchNorm2d>("mfn.embed_bn", cfg.embedding_dim));
}

Tensor MobileFaceNet::forward(const Tensor& x, nn::Phase phase) {
  if (x.rank() != 4) {
    throw std::invalid_argument("MFN: expected (B, C, rows, cols) input, got " + x.shape_str());
  }
  if (x.dim(1) != cfg_.input_channels) {
    throw std::invalid_argument("MFN: model expects " + std::to_string(cfg_.input_channels) +
                                " input channel(s) but feature has " + std::to_string(x.dim(1)) +
                                " (input " + x.shape_str() + ")");
  }
  if (x.dim(2) != cfg_.input_rows || x.dim(3) != cfg_.input_cols) {
    throw std::invalid_argument("MFN: model expects a " + std::to_string(cfg_.input_rows) + "x" +
                                std::to_string(cfg_.input_cols) + " map, got " + x.shape_str());
  }
  Tensor out = net_.forward(x, phase);  // (B, D, 1, 1)
  pre_embed_shape_ = out.shape();
  return out.reshaped({out.dim(0), out.dim(1)});
}

Tensor MobileFaceNet::backward(const Tensor& grad_embedding) {
  if (pre_embed_shape_.empty()) throw std::logic_error("MFN backward without forward");
  return net_.backward(grad_embedding.reshaped(pre_embed_shape_));
}

const char* head_kind_name(HeadKind kind) {
  return kind == HeadKind::cee ? "cee" : "arcface";
}

HeadKind head_kind_from_name(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (n == "cee" || n == "ce" || n == "softmax") return HeadKind::cee;
  if (n == "arcface") return HeadKind::arcface;
  throw std::invalid_argument("unknown head kind: " + name);
}

namespace {

class CeeHead : public ClassifierHead {
 public:
  CeeHead(const HeadConfig& cfg, uint64_t seed) : cfg_(cfg), rng_(seed),
        linear_("head.cee", cfg.embedding_dim, cfg.class_count, /*bias=*/true, rng_) {}

  Tensor logits(const Tensor& embeddings, const std::vector<int>* labels,
                nn::Phase phase) override {
    (void)labels;  // plain affine logits regardless of labels
    Tensor out = linear_.forward(embeddings, phase);
    plain_ = out;
    return out;
  }

  Tensor backward(const Tensor& grad_logits) override { return linear_.backward(grad_logits); }

  void collect_state(std::vector<nn::ParamTensor*>& out) override {
    linear_.collect_state(out);
  }

  const Tensor& plain_logits() const override { return plain_; }
  const HeadConfig& config() const override { return cfg_; }

 private:
  HeadConfig cfg_;
  nn::Rng rng_;
  nn::Linear linear_;
  Tensor plain_;
};

class ArcFaceHead : public ClassifierHead {
 public:
  ArcFaceHead(const HeadConfig& cfg, uint64_t seed)
      : cfg_(cfg), weight("head.arcface.weight", {cfg.class_count, cfg.embedding_dim}) {
    nn::Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.embedding_dim));
    for (int64_t i = 0; i < weight.value.size(); ++i) weight.value[i] = rng.uniform(-bound, bound);
    cos_m_ = std::cos(cfg.margin);
    sin_m_ = std::sin(cfg.margin);
  }

  Tensor logits(const Tensor& embeddings, const std::vector<int>* labels,
                nn::Phase phase) override {
    if (embeddings.rank() != 2 || embeddings.dim(1) != cfg_.embedding_dim) {
      throw std::invalid_argument("ArcFace: expected (B, " + std::to_string(cfg_.embedding_dim) +
                                  ") embeddings, got " + embeddings.shape_str());
    }
    const int64_t batch = embeddings.dim(0);
    const int64_t classes = cfg_.class_count;
    const int64_t dim = cfg_.embedding_dim;

    emb_norms_.assign(static_cast<size_t>(batch), 0.0);
    unit_emb_ = Tensor({batch, dim});
    for (int64_t b = 0; b < batch; ++b) {
      double norm = 0.0;
      const double* e = embeddings.data() + b * dim;
      for (int64_t d = 0; d < dim; ++d) norm += e[d] * e[d];
      norm = std::sqrt(norm);
      if (norm == 0.0) {
        throw std::invalid_argument("ArcFace: zero-norm embedding cannot be normalized");
      }
      emb_norms_[static_cast<size_t>(b)] = norm;
      double* u = unit_emb_.data() + b * dim;
      for (int64_t d = 0; d < dim; ++d) u[d] = e[d] / norm;
    }

    weight_norms_.assign(static_cast<size_t>(classes), 0.0);
    unit_weight_ = Tensor({classes, dim});
    for (int64_t c = 0; c < classes; ++c) {
      double norm = 0.0;
      const double* wr = weight.value.data() + c * dim;
      for (int64_t d = 0; d < dim; ++d) norm += wr[d] * wr[d];
      norm = std::sqrt(norm);
      if (norm == 0.0) {
        throw std::invalid_argument("ArcFace: zero-norm class weight cannot be normalized");
      }
      weight_norms_[static_cast<size_t>(c)] = norm;
      double* u = unit_weight_.data() + c * dim;
      for (int64_t d = 0; d < dim; ++d) u[d] = wr[d] / norm;
    }

    cos_ = Tensor({batch, classes});
    {
      CMapMat em(unit_emb_.data(), batch, dim);
      CMapMat wm(unit_weight_.data(), classes, dim);
      MapMat cm(cos_.data(), batch, classes);
      cm.noalias() = em * wm.transpose();
    }
    clamped_.assign(static_cast<size_t>(batch * classes), 0);
    for (int64_t i = 0; i < cos_.size(); ++i) {
      if (cos_[i] > kCosClamp) {
        cos_[i] = kCosClamp;
        clamped_[static_cast<size_t>(i)] = 1;
      } else if (cos_[i] < -kCosClamp) {
        cos_[i] = -kCosClamp;
        clamped_[static_cast<size_t>(i)] = 1;
      }
    }

    plain_ = Tensor({batch, classes});
    for (int64_t i = 0; i < cos_.size(); ++i) plain_[i] = cfg_.scale * cos_[i];

    const bool with_margin = labels != nullptr && phase == nn::Phase::train && cfg_.margin > 0.0;
    margined_ = false;
    labels_.clear();
    fallback_.assign(static_cast<size_t>(batch), 0);
    if (labels == nullptr) return plain_;
    if (static_cast<int64_t>(labels->size()) != batch) {
      throw std::invalid_argument("ArcFace: label count does not match batch");
    }
    labels_ = *labels;
    for (int b = 0; b < batch; ++b) {
      const int y = labels_[static_cast<size_t>(b)];
      if (y < 0 || y >= classes) {
        throw std::invalid_argument("ArcFace: class index out of range: " + std::to_string(y));
      }
    }
    if (!with_margin) return plain_;

    Tensor out = plain_;
    for (int64_t b = 0; b < batch; ++b) {
      const int y = labels_[static_cast<size_t>(b)];
      const double c = cos_[b * classes + y];
      // Standard guard: past theta + m = pi the margined cosine is no longer
      // monotone, so switch to the linear surrogate cos(theta) - m*sin(m).
      if (c > -cos_m_) {
        const double sin_t = std::sqrt(1.0 - c * c);
        out[b * classes + y] = cfg_.scale * (c * cos_m_ - sin_t * sin_m_);
      } else {
        fallback_[static_cast<size_t>(b)] = 1;
        out[b * classes + y] = cfg_.scale * (c - cfg_.margin * sin_m_);
      }
    }
    margined_ = true;
    return out;
  }

  Tensor backward(const Tensor& grad_logits) override {
    if (cos_.empty()) throw std::logic_error("ArcFace backward without forward");
    const int64_t batch = cos_.dim(0);
    const int64_t classes = cos_.dim(1);
    const int64_t dim = cfg_.embedding_dim;

    Tensor dcos = grad_logits;
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t c = 0; c < classes; ++c) {
        const int64_t i = b * classes + c;
        double factor = cfg_.scale;
        if (margined_ && !labels_.empty() && labels_[static_cast<size_t>(b)] == c) {
          if (fallback_[static_cast<size_t>(b)]) {
            factor = cfg_.scale;  // d/dcos of scale*(cos - m sin m)
          } else {
            const double cv = cos_[i];
            const double sin_t = std::sqrt(1.0 - cv * cv);
            factor = cfg_.scale * (cos_m_ + sin_m_ * cv / sin_t);
          }
        }
        if (clamped_[static_cast<size_t>(i)]) factor = 0.0;
        dcos[i] *= factor;
      }
    }

    // d(unit_emb) and d(unit_weight) via the cosine bilinear form, then
    // project through the normalizations.
    Tensor d_unit_emb({batch, dim});
    Tensor d_unit_weight({classes, dim});
    {
      CMapMat dcm(dcos.data(), batch, classes);
      CMapMat wm(unit_weight_.data(), classes, dim);
      CMapMat em(unit_emb_.data(), batch, dim);
      MapMat dem(d_unit_emb.data(), batch, dim);
      MapMat dwm(d_unit_weight.data(), classes, dim);
      dem.noalias() = dcm * wm;
      dwm.noalias() = dcm.transpose() * em;
    }

    Tensor d_emb({batch, dim});
    for (int64_t b = 0; b < batch; ++b) {
      const double* du = d_unit_emb.data() + b * dim;
      const double* u = unit_emb_.data() + b * dim;
      double dot = 0.0;
      for (int64_t d = 0; d < dim; ++d) dot += du[d] * u[d];
      const double inv = 1.0 / emb_norms_[static_cast<size_t>(b)];
      double* out = d_emb.data() + b * dim;
      for (int64_t d = 0; d < dim; ++d) out[d] = (du[d] - dot * u[d]) * inv;
    }
    for (int64_t c = 0; c < classes; ++c) {
      const double* du = d_unit_weight.data() + c * dim;
      const double* u = unit_weight_.data() + c * dim;
      double dot = 0.0;
      for (int64_t d = 0; d < dim; ++d) dot += du[d] * u[d];
      const double inv = 1.0 / weight_norms_[static_cast<size_t>(c)];
      double* gw = weight.grad.data() + c * dim;
      for (int64_t d = 0; d < dim; ++d) gw[d] += (du[d] - dot * u[d]) * inv;
    }
    return d_emb;
  }

  void collect_state(std::vector<nn::ParamTensor*>& out) override { out.push_back(&weight); }
  const Tensor& plain_logits() const override { return plain_; }
  const HeadConfig& config() const override { return cfg_; }

  nn::ParamTensor weight;

 private:
  HeadConfig cfg_;
  double cos_m_ = 0.0, sin_m_ = 0.0;
  Tensor unit_emb_, unit_weight_, cos_, plain_;
  std::vector<double> emb_norms_, weight_norms_;
  std::vector<int> labels_;
  std::vector<uint8_t> clamped_, fallback_;
  bool margined_ = false;
};

}  // namespace

std::unique_ptr<ClassifierHead> make_head(const HeadConfig& cfg, uint64_t seed) {
  if (cfg.class_count <= 0 || cfg.embedding_dim <= 0) {
    throw std::invalid_argument("head needs positive class_count and embedding_dim");
  }
  if (cfg.kind == HeadKind::cee) return std::make_unique<CeeHead>(cfg, seed);
  if (cfg.margin < 0.0 || cfg.scale <= 0.0) {
    throw std::invalid_argument("ArcFace needs margin >= 0 and scale > 0");
  }
  return std::make_unique<ArcFaceHead>(cfg, seed);
}

namespace {

std::vector<double> run_single(ClassifierHead& head, const std::vector<double>& embedding,
                               const std::vector<int>* labels, nn::Phase phase) {
  Tensor emb({1, static_cast<int64_t>(embedding.size())},
             std::vector<double>(embedding.begin(), embedding.end()));
  Tensor out = head.logits(emb, labels, phase);
  return std::vector<double>(out.data(), out.data() + out.size());
}

}  // namespace

std::vector<double> cee_logits(ClassifierHead& head, const std::vector<double>& embedding) {
  if (head.config().kind != HeadKind::cee) {
    throw std::invalid_argument("cee_logits requires a CEE head");
  }
  return run_single(head, embedding, nullptr, nn::Phase::eval);
}

std::vector<double> arcface_logits(ClassifierHead& head, const std::vector<double>& embedding,
                                   int true_class) {
  if (head.config().kind != HeadKind::arcface) {
    throw std::invalid_argument("arcface_logits requires an ArcFace head");
  }
  if (true_class < 0) return run_single(head, embedding, nullptr, nn::Phase::eval);
  std::vector<int> labels{true_class};
  return run_single(head, embedding, &labels, nn::Phase::train);
}

double classification_loss(const std::vector<double>& logits, int true_class) {
  if (true_class < 0 || true_class >= static_cast<int>(logits.size())) {
    throw std::invalid_argument("true_class out of range");
  }
  for (double v : logits) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite logit");
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return std::log(z) + mx - logits[static_cast<size_t>(true_class)];
}

}  // namespace stgram
