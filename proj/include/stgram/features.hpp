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

#ifndef STGRAM_FEATURES_HPP_
#define STGRAM_FEATURES_HPP_

#include <cstdint>
#include <optional>
#include <string>

#include "stgram/dataio.hpp"
#include "stgram/tensor.hpp"

namespace stgram {

/// STFT / mel front-end parameters. Defaults give a 128 x 313 feature map
/// for a 10 s clip at 16 kHz.
struct SpectralConfig {
  int window_size = 1024;  // W, samples
  int hop_length = 512;    // H, samples
  int mel_bins = 128;      // M
  int sample_rate = 16000;
  double fmin = 0.0;
  double fmax = 0.0;          // 0 -> sample_rate / 2
  double log_floor = 1e-8;    // clamp inside the log
  std::string window_function = "hann";  // periodic taper

  int fft_bins() const { return window_size / 2 + 1; }  // B
  double effective_fmax() const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }
  void validate() const;  // throws std::invalid_argument

  /// Stable textual form used for cache keys and checkpoint headers.
  std::string cache_key() const;
};

/// Triangular mel filterbank, M x B row-major, peak height 1.
struct MelBank {
  int mel_bins = 0;
  int fft_bins = 0;
  std::vector<double> weights;

  double at(int m, int b) const { return weights[static_cast<size_t>(m) * fft_bins + b]; }
};

/// HTK mel scale: 2595 * log10(1 + f / 700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

MelBank build_mel_bank(const SpectralConfig& cfg);

enum class FeatureKind { Sgram, Tgram, Spec, STgram };

const char* feature_kind_name(FeatureKind kind);
std::optional<FeatureKind> feature_kind_from_name(const std::string& name);

/// Feature map with explicit channel axis: Sgram/Tgram/Spec are (1, rows, N),
/// STgram is (2, M, N) with channel 0 the spectral branch.
struct FeatureTensor {
  Tensor data;
  FeatureKind kind = FeatureKind::Sgram;

  int64_t channels() const { return data.dim(0); }
  int64_t rows() const { return data.dim(1); }
  int64_t frames() const { return data.dim(2); }
};

/// Frame count of centered framing: floor(L / H) + 1.
int64_t frame_count(int64_t clip_len, int hop_length);

/// Squared-magnitude STFT, shape (B, N). Frames are centered with
/// reflection padding of W/2 on each side and a periodic Hann taper.
Tensor power_spectrogram(const AudioClip& clip, const SpectralConfig& cfg);

/// log(max(mel_bank * power_spectrogram, log_floor)), natural log. (1, M, N)
FeatureTensor log_mel(const AudioClip& clip, const SpectralConfig& cfg);

/// Same but without the mel projection. (1, B, N)
FeatureTensor log_spec(const AudioClip& clip, const SpectralConfig& cfg);

/// Concatenates the spectral and temporal branches into a 2-channel map.
FeatureTensor fuse_stgram(const FeatureTensor& spectral, const FeatureTensor& temporal);

// --- Optional on-disk feature cache -----------------------------------------
//
// One file per (clip, config, kind); the config hash in the file name and
// header invalidates entries when the config changes.

uint64_t fnv1a64(const std::string& bytes);

std::string feature_cache_path(const std::string& cache_dir, const std::string& source_path,
                               const SpectralConfig& cfg, FeatureKind kind);
void store_cached_feature(const std::string& cache_dir, const std::string& source_path,
                          const SpectralConfig& cfg, const FeatureTensor& feature);
std::optional<FeatureTensor> load_cached_feature(const std::string& cache_dir,
                                                 const std::string& source_path,
                                                 const SpectralConfig& cfg, FeatureKind kind);

}  // namespace stgram

#endif  // STGRAM_FEATURES_HPP_
