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

#include "stgram/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stgram {

namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatIeeeFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open WAV file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw std::runtime_error("not a RIFF/WAVE file: " + path);
  }

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  const uint8_t* data_ptr = nullptr;
  uint32_t data_len = 0;
  bool have_fmt = false;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    uint32_t chunk_len = read_u32(bytes.data() + pos + 4);
    size_t body = pos + 8;
    if (body + chunk_len > bytes.size()) {
      chunk_len = static_cast<uint32_t>(bytes.size() - body);  // tolerate short final chunk
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw std::runtime_error("malformed fmt chunk in " + path);
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      sample_rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      if (format == kFormatExtensible && chunk_len >= 26) {
        format = read_u16(bytes.data() + body + 24);  // first two bytes of the sub-format GUID
      }
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_ptr = bytes.data() + body;
      data_len = chunk_len;
    }
    pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }

  if (!have_fmt) throw std::runtime_error("WAV file has no fmt chunk: " + path);
  if (data_ptr == nullptr) throw std::runtime_error("WAV file has no data chunk: " + path);
  if (channels == 0) throw std::runtime_error("WAV file reports zero channels: " + path);

  WavData wav;
  wav.sample_rate = static_cast<int>(sample_rate);
  wav.channels = channels;

  if (format == kFormatPcm) {
    const int bytes_per = bits / 8;
    if (bits != 8 && bits != 16 && bits != 24 && bits != 32) {
      throw std::runtime_error("unsupported PCM bit depth " + std::to_string(bits) + ": " + path);
    }
    size_t count = data_len / static_cast<size_t>(bytes_per);
    wav.samples.resize(count);
    const double divisor = static_cast<double>(1u << (bits == 8 ? 7 : bits - 1));
    for (size_t i = 0; i < count; ++i) {
      const uint8_t* s = data_ptr + i * static_cast<size_t>(bytes_per);
      int32_t v = 0;
      switch (bits) {
        case 8:
          v = static_cast<int32_t>(s[0]) - 128;  // 8-bit WAV is unsigned
          break;
        case 16:
          v = static_cast<int16_t>(s[0] | (s[1] << 8));
          break;
        case 24:
          v = static_cast<int32_t>((s[0] << 8) | (s[1] << 16) | (s[2] << 24)) >> 8;
          break;
        case 32:
          v = static_cast<int32_t>(read_u32(s));
          break;
      }
      wav.samples[i] = static_cast<double>(v) / divisor;
    }
  } else if (format == kFormatIeeeFloat) {
    if (bits == 32) {
      size_t count = data_len / 4;
      wav.samples.resize(count);
      for (size_t i = 0; i < count; ++i) {
        uint32_t u = read_u32(data_ptr + i * 4);
        float f;
        std::memcpy(&f, &u, 4);
        wav.samples[i] = static_cast<double>(f);
      }
    } else if (bits == 64) {
      size_t count = data_len / 8;
      wav.samples.resize(count);
      for (size_t i = 0; i < count; ++i) {
        uint64_t u = static_cast<uint64_t>(read_u32(data_ptr + i * 8)) |
                     (static_cast<uint64_t>(read_u32(data_ptr + i * 8 + 4)) << 32);
        double d;
        std::memcpy(&d, &u, 8);
        wav.samples[i] = d;
      }
    } else {
      throw std::runtime_error("unsupported float bit depth " + std::to_string(bits) + ": " + path);
    }
  } else {
    throw std::runtime_error("unsupported WAV codec " + std::to_string(format) + ": " + path);
  }

  // Drop trailing partial frame, if any.
  size_t whole = (wav.samples.size() / channels) * channels;
  wav.samples.resize(whole);
  return wav;
}

void write_wav_pcm16(const std::string& path, const std::vector<double>& mono_samples,
                     int sample_rate) {
  const uint32_t data_len = static_cast<uint32_t>(mono_samples.size() * 2);
  std::vector<uint8_t> out;
  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<uint32_t>(sample_rate));
  put_u32(out, static_cast<uint32_t>(sample_rate * 2));
  put_u16(out, 2);   // block align
  put_u16(out, 16);  // bits per sample
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_len);
  for (double x : mono_samples) {
    double clipped = std::clamp(x, -1.0, 1.0);
    int v = static_cast<int>(std::lrint(clipped * 32767.0));
    put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(v)));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write WAV file: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("short write to WAV file: " + path);
}

}  // namespace stgram
