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

#ifndef STGRAM_TGRAMNET_HPP_
#define STGRAM_TGRAMNET_HPP_

#include <cstdint>
#include <memory>
#include <vector>

#include "stgram/features.hpp"
#include "stgram/nn.hpp"

namespace stgram {

/// Learnable temporal front-end: one large-kernel 1-D convolution whose
/// channel count, kernel size and stride equal the mel bin count, window
/// size and hop length of the spectral branch, followed by three blocks of
/// (channel layer norm, leaky ReLU, 3-tap 1-D convolution). Output frame
/// count matches the centered-STFT frame count for the same clip length.
class TgramNet {
 public:
  static constexpr double kLeakySlope = 0.01;
  static constexpr int kBlockCount = 3;

  TgramNet(const SpectralConfig& cfg, int64_t clip_samples, uint64_t seed);

  /// waves: (B, 1, L) with L == clip_samples. Returns (B, M, N).
  Tensor forward(const Tensor& waves, nn::Phase phase);
  /// grad: (B, M, N). Returns the waveform gradient (B, 1, L).
  Tensor backward(const Tensor& grad_out);

  void collect_state(std::vector<nn::ParamTensor*>& out) { net_.collect_state(out); }

  int channels() const { return channels_; }
  int64_t clip_samples() const { return clip_samples_; }
  int64_t frame_count() const;

 private:
  int channels_;  // M
  int window_;    // W
  int hop_;       // H
  int64_t clip_samples_;
  nn::Sequential net_;
};

/// Single-clip convenience wrapper returning a Tgram FeatureTensor (1, M, N).
FeatureTensor tgramnet_extract(TgramNet& net, const AudioClip& clip);

}  // namespace stgram

#endif  // STGRAM_TGRAMNET_HPP_
