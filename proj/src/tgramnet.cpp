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

#include "stgram/tgramnet.hpp"

#include <stdexcept>
#include <string>

namespace stgram {

TgramNet::TgramNet(const SpectralConfig& cfg, int64_t clip_samples, uint64_t seed)
    : channels_(cfg.mel_bins),
      window_(cfg.window_size),
      hop_(cfg.hop_length),
      clip_samples_(clip_samples) {
  cfg.validate();
  if (clip_samples <= 0) throw std::invalid_argument("clip_samples must be positive");
  nn::Rng rng(seed);
  net_.add(std::make_unique<nn::Conv1d>("tgram.front", 1, channels_, window_, hop_, window_ / 2,
                                        /*bias=*/true, rng));
  for (int i = 0; i < kBlockCount; ++i) {
    const std::string prefix = "tgram.block" + std::to_string(i);
    net_.add(std::make_unique<nn::ChannelLayerNorm>(prefix + ".norm", channels_));
    net_.add(std::make_unique<nn::LeakyReLU>(kLeakySlope));
    net_.add(std::make_unique<nn::Conv1d>(prefix + ".conv", channels_, channels_, 3, 1, 1,
                                          /*bias=*/true, rng));
  }
}

int64_t TgramNet::frame_count() const { return clip_samples_ / hop_ + 1; }

Tensor TgramNet::forward(const Tensor& waves, nn::Phase phase) {
  if (waves.rank() != 3 || waves.dim(1) != 1) {
    throw std::invalid_argument("TgramNet: expected (B, 1, L) waveform batch, got " +
                                waves.shape_str());
  }
  if (waves.dim(2) != clip_samples_) {
    throw std::invalid_argument("TgramNet: clip length " + std::to_string(waves.dim(2)) +
                                " does not match configured length " +
                                std::to_string(clip_samples_));
  }
  return net_.forward(waves, phase);
}

Tensor TgramNet::backward(const Tensor& grad_out) { return net_.backward(grad_out); }

FeatureTensor tgramnet_extract(TgramNet& net, const AudioClip& clip) {
  Tensor waves({1, 1, static_cast<int64_t>(clip.samples.size())},
               std::vector<double>(clip.samples.begin(), clip.samples.end()));
  Tensor out = net.forward(waves, nn::Phase::eval);  // (1, M, N)
  FeatureTensor feature;
  feature.kind = FeatureKind::Tgram;
  feature.data = out.reshaped({1, out.dim(1), out.dim(2)});
  return feature;
}

}  // namespace stgram
