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

#include "stgram/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>

#include <fftw3.h>

namespace fs = std::filesystem;

namespace stgram {

namespace {

// FFTW plan creation/destruction is not thread-safe; executing a plan on its
// own buffers is.
std::mutex g_fftw_mutex;

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = fftw_alloc_real(static_cast<size_t>(n));
    out_ = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
    std::lock_guard<std::mutex> lock(g_fftw_mutex);
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
    if (plan_ == nullptr) throw std::runtime_error("fftw plan creation failed");
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lock(g_fftw_mutex);
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  const fftw_complex* execute() {
    fftw_execute(plan_);
    return out_;
  }
  int size() const { return n_; }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

// Reflection index without repeating the edge sample, bouncing for pads
// wider than the signal.
int64_t reflect_index(int64_t i, int64_t len) {
  if (len == 1) return 0;
  int64_t period = 2 * (len - 1);
  int64_t j = i % period;
  if (j < 0) j += period;
  return j < len ? j : period - j;
}

std::vector<double> make_window(const SpectralConfig& cfg) {
  if (cfg.window_function != "hann") {
    throw std::invalid_argument("unsupported window function: " + cfg.window_function);
  }
  std::vector<double> w(static_cast<size_t>(cfg.window_size));
  for (int i = 0; i < cfg.window_size; ++i) {
    w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / cfg.window_size);
  }
  return w;
}

}  // namespace

void SpectralConfig::validate() const {
  if (window_size <= 0) throw std::invalid_argument("window_size must be positive");
  if (hop_length <= 0 || hop_length > window_size) {
    throw std::invalid_argument("hop_length must be in (0, window_size]");
  }
  if (mel_bins <= 0) throw std::invalid_argument("mel_bins must be positive");
  if (mel_bins > fft_bins()) {
    throw std::invalid_argument("mel_bins (" + std::to_string(mel_bins) +
                                ") exceeds fft_bins (" + std::to_string(fft_bins()) + ")");
  }
  if (sample_rate <= 0) throw std::invalid_argument("sample_rate must be positive");
  if (log_floor <= 0.0) throw std::invalid_argument("log_floor must be positive");
  double top = effective_fmax();
  if (!(fmin >= 0.0) || !(fmin < top) || top > sample_rate / 2.0 + 1e-9) {
    throw std::invalid_argument("need 0 <= fmin < fmax <= sample_rate/2");
  }
}

std::string SpectralConfig::cache_key() const {
  std::ostringstream os;
  os.precision(17);
  os << "w=" << window_size << ";h=" << hop_length << ";m=" << mel_bins
     << ";sr=" << sample_rate << ";fmin=" << fmin << ";fmax=" << effective_fmax()
     << ";floor=" << log_floor << ";win=" << window_function;
  return os.str();
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelBank build_mel_bank(const SpectralConfig& cfg) {
  cfg.validate();
  const int m_bins = cfg.mel_bins;
  const int b_bins = cfg.fft_bins();

  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.effective_fmax());
  std::vector<double> edges(static_cast<size_t>(m_bins) + 2);
  for (int i = 0; i < m_bins + 2; ++i) {
    edges[static_cast<size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (m_bins + 1));
  }
  // Pin the outermost edges so fmin/fmax do not drift through the mel
  // round-trip and leak weight outside [fmin, fmax].
  edges.front() = cfg.fmin;
  edges.back() = cfg.effective_fmax();

  MelBank bank;
  bank.mel_bins = m_bins;
  bank.fft_bins = b_bins;
  bank.weights.assign(static_cast<size_t>(m_bins) * b_bins, 0.0);

  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.window_size;
  for (int m = 0; m < m_bins; ++m) {
    const double left = edges[static_cast<size_t>(m)];
    const double center = edges[static_cast<size_t>(m) + 1];
    const double right = edges[static_cast<size_t>(m) + 2];
    for (int b = 0; b < b_bins; ++b) {
      const double f = b * bin_hz;
      double w = 0.0;
      if (f > left && f < right) {
        w = f <= center ? (f - left) / (center - left) : (right - f) / (right - center);
      }
      bank.weights[static_cast<size_t>(m) * b_bins + b] = w;
    }
  }
  return bank;
}

const char* feature_kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Sgram: return "Sgram";
    case FeatureKind::Tgram: return "Tgram";
    case FeatureKind::Spec: return "Spec";
    case FeatureKind::STgram: return "STgram";
  }
  return "?";
}

std::optional<FeatureKind> feature_kind_from_name(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (n == "sgram" || n == "logmel") return FeatureKind::Sgram;
  if (n == "tgram") return FeatureKind::Tgram;
  if (n == "spec") return FeatureKind::Spec;
  if (n == "stgram") return FeatureKind::STgram;
  return std::nullopt;
}

int64_t frame_count(int64_t clip_len, int hop_length) {
  return clip_len / hop_length + 1;
}

Tensor power_spectrogram(const AudioClip& clip, const SpectralConfig& cfg) {
  cfg.validate();
  const int64_t len = static_cast<int64_t>(clip.samples.size());
  if (len < 1) throw std::invalid_argument("clip is empty");
  for (double v : clip.samples) {
    if (!std::isfinite(v)) throw std::invalid_argument("clip contains non-finite samples");
  }

  const int w = cfg.window_size;
  const int pad = w / 2;
  const int64_t n_frames = frame_count(len, cfg.hop_length);
  const int b_bins = cfg.fft_bins();

  const std::vector<double> window = make_window(cfg);
  RealFft fft(w);

  Tensor power({static_cast<int64_t>(b_bins), n_frames});
  double* out = power.data();
  const double* x = clip.samples.data();

  for (int64_t frame = 0; frame < n_frames; ++frame) {
    const int64_t start = frame * cfg.hop_length - pad;  // index into the unpadded signal
    double* in = fft.input();
    for (int i = 0; i < w; ++i) {
      int64_t src = start + i;
      double v = (src >= 0 && src < len) ? x[src] : x[reflect_index(src, len)];
      in[i] = v * window[static_cast<size_t>(i)];
    }
    const fftw_complex* spec = fft.execute();
    for (int b = 0; b < b_bins; ++b) {
      const double re = spec[b][0];
      const double im = spec[b][1];
      out[static_cast<int64_t>(b) * n_frames + frame] = re * re + im * im;
    }
  }
  return power;
}

namespace {

FeatureTensor log_of_power(Tensor power, double floor, FeatureKind kind) {
  double* p = power.data();
  const int64_t n = power.size();
  for (int64_t i = 0; i < n; ++i) p[i] = std::log(std::max(p[i], floor));
  FeatureTensor out;
  out.kind = kind;
  out.data = power.reshaped({1, power.dim(0), power.dim(1)});
  return out;
}

}  // namespace

FeatureTensor log_mel(const AudioClip& clip, const SpectralConfig& cfg) {
  Tensor power = power_spectrogram(clip, cfg);
  MelBank bank = build_mel_bank(cfg);
  const int64_t n_frames = power.dim(1);
  const int b_bins = bank.fft_bins;

  Tensor mel({static_cast<int64_t>(bank.mel_bins), n_frames});
  for (int m = 0; m < bank.mel_bins; ++m) {
    const double* wrow = &bank.weights[static_cast<size_t>(m) * b_bins];
    double* mrow = mel.data() + static_cast<int64_t>(m) * n_frames;
    for (int b = 0; b < b_bins; ++b) {
      const double wmb = wrow[b];
      if (wmb == 0.0) continue;
      const double* prow = power.data() + static_cast<int64_t>(b) * n_frames;
      for (int64_t t = 0; t < n_frames; ++t) mrow[t] += wmb * prow[t];
    }
  }
  return log_of_power(std::move(mel), cfg.log_floor, FeatureKind::Sgram);
}

FeatureTensor log_spec(const AudioClip& clip, const SpectralConfig& cfg) {
  return log_of_power(power_spectrogram(clip, cfg), cfg.log_floor, FeatureKind::Spec);
}

FeatureTensor fuse_stgram(const FeatureTensor& spectral, const FeatureTensor& temporal) {
  if (spectral.data.rank() != 3 || temporal.data.rank() != 3 ||
      spectral.channels() != 1 || temporal.channels() != 1 ||
      spectral.rows() != temporal.rows() || spectral.frames() != temporal.frames()) {
    throw std::invalid_argument("cannot fuse feature shapes " + spectral.data.shape_str() +
                                " and " + temporal.data.shape_str());
  }
  FeatureTensor fused;
  fused.kind = FeatureKind::STgram;
  fused.data = Tensor({2, spectral.rows(), spectral.frames()});
  const int64_t plane = spectral.rows() * spectral.frames();
  std::memcpy(fused.data.data(), spectral.data.data(), sizeof(double) * static_cast<size_t>(plane));
  std::memcpy(fused.data.data() + plane, temporal.data.data(),
              sizeof(double) * static_cast<size_t>(plane));
  return fused;
}

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

constexpr char kCacheMagic[4] = {'S', 'T', 'F', 'C'};
constexpr uint32_t kCacheVersion = 1;

uint64_t cache_config_hash(const SpectralConfig& cfg, FeatureKind kind) {
  return fnv1a64(cfg.cache_key() + ";kind=" + feature_kind_name(kind));
}

std::string hex16(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace

std::string feature_cache_path(const std::string& cache_dir, const std::string& source_path,
                               const SpectralConfig& cfg, FeatureKind kind) {
  fs::path p(source_path);
  return (fs::path(cache_dir) /
          (p.stem().string() + "_" + hex16(fnv1a64(source_path)) + "_" +
           hex16(cache_config_hash(cfg, kind)) + ".feat"))
      .string();
}

void store_cached_feature(const std::string& cache_dir, const std::string& source_path,
                          const SpectralConfig& cfg, const FeatureTensor& feature) {
  fs::create_directories(cache_dir);
  std::string path = feature_cache_path(cache_dir, source_path, cfg, feature.kind);
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write feature cache file: " + tmp);
    out.write(kCacheMagic, 4);
    uint32_t version = kCacheVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    uint64_t hash = cache_config_hash(cfg, feature.kind);
    out.write(reinterpret_cast<const char*>(&hash), sizeof(hash));
    uint32_t kind = static_cast<uint32_t>(feature.kind);
    out.write(reinterpret_cast<const char*>(&kind), sizeof(kind));
    uint32_t rank = static_cast<uint32_t>(feature.data.rank());
    out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int i = 0; i < feature.data.rank(); ++i) {
      int64_t d = feature.data.dim(i);
      out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    }
    out.write(reinterpret_cast<const char*>(feature.data.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(feature.data.size())));
    if (!out) throw std::runtime_error("short write to feature cache file: " + tmp);
  }
  fs::rename(tmp, path);
}

std::optional<FeatureTensor> load_cached_feature(const std::string& cache_dir,
                                                 const std::string& source_path,
                                                 const SpectralConfig& cfg, FeatureKind kind) {
  std::string path = feature_cache_path(cache_dir, source_path, cfg, kind);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;

  char magic[4];
  uint32_t version = 0, stored_kind = 0, rank = 0;
  uint64_t hash = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&hash), sizeof(hash));
  in.read(reinterpret_cast<char*>(&stored_kind), sizeof(stored_kind));
  in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  if (!in || std::memcmp(magic, kCacheMagic, 4) != 0 || version != kCacheVersion ||
      hash != cache_config_hash(cfg, kind) || stored_kind != static_cast<uint32_t>(kind) ||
      rank == 0 || rank > 4) {
    return std::nullopt;
  }
  std::vector<int64_t> shape(rank);
  for (uint32_t i = 0; i < rank; ++i) in.read(reinterpret_cast<char*>(&shape[i]), sizeof(int64_t));
  if (!in) return std::nullopt;
  Tensor data(shape);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(data.size())));
  if (!in) return std::nullopt;

  FeatureTensor out;
  out.kind = kind;
  out.data = std::move(data);
  return out;
}

}  // namespace stgram
