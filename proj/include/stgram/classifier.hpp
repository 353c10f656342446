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

#ifndef STGRAM_CLASSIFIER_HPP_
#define STGRAM_CLASSIFIER_HPP_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "stgram/nn.hpp"

namespace stgram {

/// MobileFaceNet-style backbone: stem convolution, depthwise stage,
/// inverted-residual bottlenecks, 1x1 expansion, global depthwise pooling
/// sized to the final map, and a linear 1x1 projection to the embedding.
struct MFNConfig {
  int input_channels = 2;
  int input_rows = 128;
  int input_cols = 313;
  int stem_channels = 64;

  struct BottleneckSpec {
    int expansion;
    int channels;
    int repeats;
    int stride;
  };
  std::vector<BottleneckSpec> bottlenecks = {
      {2, 64, 5, 2}, {4, 128, 1, 2}, {2, 128, 6, 1}, {4, 128, 1, 2}, {2, 128, 2, 1}};
  int final_channels = 512;
  int embedding_dim = 128;

  /// The full-size schedule used for real datasets.
  static MFNConfig paper_scale(int input_channels, int rows, int cols);
  /// Reduced schedule for desk-scale experiments and CI.
  static MFNConfig compact_scale(int input_channels, int rows, int cols);

  void validate() const;
};

class MobileFaceNet {
 public:
  MobileFaceNet(const MFNConfig& cfg, uint64_t seed);

  /// x: (B, input_channels, rows, cols) -> embeddings (B, D).
  Tensor forward(const Tensor& x, nn::Phase phase);
  Tensor backward(const Tensor& grad_embedding);
  void collect_state(std::vector<nn::ParamTensor*>& out) { net_.collect_state(out); }

  const MFNConfig& config() const { return cfg_; }

 private:
  MFNConfig cfg_;
  nn::Sequential net_;
  std::vector<int64_t> pre_embed_shape_;  // (B, D, 1, 1) before flattening
};

enum class HeadKind { cee, arcface };

const char* head_kind_name(HeadKind kind);
HeadKind head_kind_from_name(const std::string& name);

struct HeadConfig {
  HeadKind kind = HeadKind::arcface;
  int class_count = 0;
  int embedding_dim = 0;
  double margin = 0.7;  // radians, ArcFace only
  double scale = 30.0;  // ArcFace only
};

/// Interchangeable classification head. Training-mode ArcFace applies the
/// additive angular margin to the true class; inference logits are
/// margin-free for both heads, so the two are drop-in swappable.
class ClassifierHead {
 public:
  virtual ~ClassifierHead() = default;

  /// labels == nullptr -> inference logits. Returns (B, C).
  virtual Tensor logits(const Tensor& embeddings, const std::vector<int>* labels,
                        nn::Phase phase) = 0;
  virtual Tensor backward(const Tensor& grad_logits) = 0;
  virtual void collect_state(std::vector<nn::ParamTensor*>& out) = 0;

  /// Margin-free logits from the most recent forward (classification view of
  /// the same pass; used for training accuracy).
  virtual const Tensor& plain_logits() const = 0;

  virtual const HeadConfig& config() const = 0;
};

std::unique_ptr<ClassifierHead> make_head(const HeadConfig& cfg, uint64_t seed);

// --- Single-clip convenience forms used by tests and the scorer --------------

/// Affine logits of one embedding under a CEE head.
std::vector<double> cee_logits(ClassifierHead& head, const std::vector<double>& embedding);

/// ArcFace logits of one embedding; `true_class < 0` means inference.
std::vector<double> arcface_logits(ClassifierHead& head, const std::vector<double>& embedding,
                                   int true_class);

/// -ln softmax(logits)[true_class].
double classification_loss(const std::vector<double>& logits, int true_class);

}  // namespace stgram

#endif  // STGRAM_CLASSIFIER_HPP_
