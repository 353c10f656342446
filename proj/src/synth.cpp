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

#include "stgram/synth.hpp"

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "stgram/features.hpp"
#include "stgram/log.hpp"
#include "stgram/nn.hpp"
#include "stgram/wav.hpp"

namespace fs = std::filesystem;

namespace stgram {

namespace {

constexpr int kHarmonics = 6;

struct Signature {
  double f0;
  double harmonic_step;  // 1 = all harmonics, 2 = odd only
  double tilt;
};

Signature machine_signature(int type_index, int id_index) {
  Signature sig;
  // Sibling ids sit close in pitch (about 14% apart) so the classifier has
  // to stay sharp near the id boundary instead of saturating.
  sig.f0 = 210.0 * std::pow(1.43, type_index) * (1.0 + 0.145 * id_index);
  sig.harmonic_step = type_index % 2 == 0 ? 2.0 : 1.0;  // alternating timbres per type
  sig.tilt = 0.6 + 0.15 * id_index;
  return sig;
}

}  // namespace

std::vector<double> synth_clip(const SynthConfig& cfg, int type_index, int id_index, bool anomaly,
                               uint64_t clip_seed) {
  const auto length = static_cast<int64_t>(cfg.sample_rate * cfg.clip_seconds);
  if (length <= 0) throw std::invalid_argument("synth clip length is empty");
  nn::Rng rng(clip_seed);

  Signature sig = machine_signature(type_index, id_index);
  // Normal clips carry realistic unit-to-unit spread: pitch, tilt and noise
  // floor all jitter, so the learned class regions stay close to the data.
  double f0 = sig.f0 * (1.0 + rng.uniform(-0.02, 0.02));
  double tilt = sig.tilt + rng.uniform(-0.06, 0.06);
  double comb_stretch = 1.0;
  // Broadband background at low SNR, like a machine on a factory floor. The
  // noise bounds how confident the id classifier can get, which keeps the
  // negative-log-probability scores informative.
  double noise_amp = rng.uniform(0.10, 0.25);
  double extra_partial_freq = 0.0;
  double wobble_depth = 0.0, wobble_rate = 0.0;

  if (anomaly) {
    switch (rng.next_u64() % 3) {
      case 0:  // unstable rotation speed: frequency wobble
        wobble_depth = rng.uniform(0.05, 0.08);
        wobble_rate = rng.uniform(3.0, 7.0);
        break;
      case 1:  // loud inharmonic partial, e.g. a bearing tone
        extra_partial_freq = f0 * 2.41;
        break;
      default:  // timbre flip: inverted tilt, stretched comb, raised noise
        tilt = 1.35 - tilt;
        comb_stretch = 1.35;
        noise_amp = rng.uniform(0.3, 0.45);
        break;
    }
  }

  std::vector<double> amps(kHarmonics);
  std::vector<double> freqs(kHarmonics);
  std::vector<double> phases(kHarmonics);
  double amp_sum = 0.0;
  for (int k = 0; k < kHarmonics; ++k) {
    amps[static_cast<size_t>(k)] = std::pow(tilt, k);
    freqs[static_cast<size_t>(k)] = f0 * (1.0 + sig.harmonic_step * comb_stretch * k);
    phases[static_cast<size_t>(k)] = rng.uniform(0.0, 2.0 * M_PI);
    amp_sum += amps[static_cast<size_t>(k)];
  }
  const double extra_amp = extra_partial_freq > 0.0 ? 1.6 : 0.0;
  const double extra_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double gain = 0.5 * rng.uniform(0.9, 1.1) / (amp_sum + extra_amp);

  std::vector<double> samples(static_cast<size_t>(length));
  const double dt = 1.0 / cfg.sample_rate;
  for (int64_t i = 0; i < length; ++i) {
    const double t = static_cast<double>(i) * dt;
    // Phase integral of f(t) = f_k * (1 + depth * sin(2 pi rate t)).
    double t_eff = t;
    if (wobble_depth > 0.0) {
      t_eff += wobble_depth * (1.0 - std::cos(2.0 * M_PI * wobble_rate * t)) /
               (2.0 * M_PI * wobble_rate);
    }
    double v = 0.0;
    for (int k = 0; k < kHarmonics; ++k) {
      v += amps[static_cast<size_t>(k)] *
           std::sin(2.0 * M_PI * freqs[static_cast<size_t>(k)] * t_eff +
                    phases[static_cast<size_t>(k)]);
    }
    if (extra_amp > 0.0) {
      v += extra_amp * std::sin(2.0 * M_PI * extra_partial_freq * t_eff + extra_phase);
    }
    samples[static_cast<size_t>(i)] = gain * v + noise_amp * rng.normal();
  }
  return samples;
}

void generate_synthetic_dataset(const SynthConfig& cfg) {
  if (cfg.root.empty()) throw std::invalid_argument("synth dataset root is empty");
  if (cfg.machine_types.empty() || cfg.ids_per_type < 1) {
    throw std::invalid_argument("synth dataset needs at least one machine type and id");
  }

  uint64_t counter = 0;
  auto emit = [&](int type_index, int id_index, const char* split, const char* condition,
                  bool anomaly, int index) {
    const std::string& type = cfg.machine_types[static_cast<size_t>(type_index)];
    fs::path dir = fs::path(cfg.root) / type / split;
    fs::create_directories(dir);
    std::ostringstream name;
    name << condition << "_id_" << std::setfill('0') << std::setw(2) << id_index << "_"
         << std::setw(8) << index << ".wav";
    const uint64_t clip_seed = cfg.seed ^ (0x9E3779B97F4A7C15ull * ++counter);
    std::vector<double> samples =
        synth_clip(cfg, type_index, id_index, anomaly, clip_seed);
    write_wav_pcm16((dir / name.str()).string(), samples, cfg.sample_rate);
  };

  for (size_t ti = 0; ti < cfg.machine_types.size(); ++ti) {
    for (int ii = 0; ii < cfg.ids_per_type; ++ii) {
      for (int i = 0; i < cfg.train_per_id; ++i) {
        emit(static_cast<int>(ti), ii, "train", "normal", false, i);
      }
      for (int i = 0; i < cfg.test_normal_per_id; ++i) {
        emit(static_cast<int>(ti), ii, "test", "normal", false, i);
      }
      for (int i = 0; i < cfg.test_anomaly_per_id; ++i) {
        emit(static_cast<int>(ti), ii, "test", "anomaly", true, i);
      }
    }
  }
  log_info("synthetic dataset written to ", cfg.root, ": ", cfg.machine_types.size(), " types x ",
           cfg.ids_per_type, " ids, ", cfg.train_per_id, " train clips per id");
}

}  // namespace stgram
