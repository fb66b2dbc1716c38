// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/wav_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "tsse/log.hpp"

namespace tsse {
namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::ostream& out, uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                 static_cast<char>((v >> 16) & 0xFF),
                                 static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}
void put_u16(std::ostream& out, uint16_t v) {
  const std::array<char, 2> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
  out.write(b.data(), 2);
}

}  // namespace

Waveform read_wav(std::istream& in, const std::string& origin) {
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) { throw Error(ErrorKind::kIo, origin + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail("not a RIFF/WAVE file");
  }

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const uint32_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(len, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) fail("truncated fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible && avail >= 26) format = read_u16(chunk + 8 + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = avail;
    }
    pos = body + len + (len & 1u);
  }
  if (channels == 0) fail("missing fmt chunk");
  if (data == nullptr) fail("missing data chunk");
  if (!((format == kFormatPcm && bits == 16) || (format == kFormatFloat && bits == 32))) {
    fail("unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
         " bits); expected 16-bit PCM or 32-bit float");
  }

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frames = data_len / (bytes_per_sample * channels);
  std::vector<double> mono(frames, 0.0);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per_sample;
      if (format == kFormatPcm) {
        acc += static_cast<int16_t>(read_u16(p)) / 32768.0;
      } else {
        const uint32_t u = read_u32(p);
        float f;
        std::memcpy(&f, &u, sizeof f);
        acc += static_cast<double>(f);
      }
    }
    mono[i] = acc / channels;
  }
  if (channels > 1) {
    log::warn() << origin << ": " << channels << " channels averaged to mono";
  }
  Waveform w(std::move(mono), static_cast<int>(rate));
  w.validate();
  return w;
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return read_wav(in, path.string());
}

void write_wav(std::ostream& out, const Waveform& wav, WavEncoding encoding) {
  require_supported_rate(wav.fs);
  const uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const uint16_t format = encoding == WavEncoding::kPcm16 ? kFormatPcm : kFormatFloat;
  const uint32_t block = bits / 8;
  const uint32_t data_len = static_cast<uint32_t>(wav.samples.size() * block);

  out.write("RIFF", 4);
  put_u32(out, 36 + data_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, format);
  put_u16(out, 1);
  put_u32(out, static_cast<uint32_t>(wav.fs));
  put_u32(out, static_cast<uint32_t>(wav.fs) * block);
  put_u16(out, static_cast<uint16_t>(block));
  put_u16(out, bits);
  out.write("data", 4);
  put_u32(out, data_len);
  for (double v : wav.samples) {
    if (encoding == WavEncoding::kPcm16) {
      const double scaled = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
      put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(scaled)));
    } else {
      const float f = static_cast<float>(v);
      uint32_t u;
      std::memcpy(&u, &f, sizeof u);
      put_u32(out, u);
    }
  }
  if (!out) throw Error(ErrorKind::kIo, "write failed");
}

void write_wav(const std::filesystem::path& path, const Waveform& wav, WavEncoding encoding) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  write_wav(out, wav, encoding);
}

}  // namespace tsse
