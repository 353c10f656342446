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

#ifndef STGRAM_WAV_HPP_
#define STGRAM_WAV_HPP_

#include <string>
#include <vector>

namespace stgram {

/// Decoded RIFF/WAVE audio. Integer PCM is normalized to [-1, 1) by the
/// bit-depth divisor (1 << (bits - 1)); no per-clip gain is applied.
struct WavData {
  int sample_rate = 0;
  int channels = 0;
  std::vector<double> samples;  // interleaved, frames * channels

  int64_t frame_count() const {
    return channels > 0 ? static_cast<int64_t>(samples.size()) / channels : 0;
  }
};

/// Reads PCM (8/16/24/32-bit) and IEEE float (32/64-bit) WAV files.
WavData read_wav(const std::string& path);

/// Writes mono 16-bit PCM. Samples are clipped to [-1, 1].
void write_wav_pcm16(const std::string& path, const std::vector<double>& mono_samples,
                     int sample_rate);

}  // namespace stgram

#endif  // STGRAM_WAV_HPP_
