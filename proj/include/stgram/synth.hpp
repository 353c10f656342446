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

#ifndef STGRAM_SYNTH_HPP_
#define STGRAM_SYNTH_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace stgram {

/// Desk-scale synthetic machine-sound dataset in the same tree layout and
/// file-name grammar as the real data. Each virtual machine id has a fixed
/// harmonic signature; anomalies perturb pitch, add an inharmonic partial,
/// or flip the harmonic tilt.
struct SynthConfig {
  std::string root;
  uint64_t seed = 1234;
  int sample_rate = 16000;
  double clip_seconds = 1.0;
  int train_per_id = 50;
  int test_normal_per_id = 20;
  int test_anomaly_per_id = 20;
  std::vector<std::string> machine_types = {"piston", "rotor"};
  int ids_per_type = 2;
};

void generate_synthetic_dataset(const SynthConfig& cfg);

/// One synthesized clip (used by the generator and by feature tests).
std::vector<double> synth_clip(const SynthConfig& cfg, int type_index, int id_index,
                               bool anomaly, uint64_t clip_seed);

}  // namespace stgram

#endif  // STGRAM_SYNTH_HPP_
