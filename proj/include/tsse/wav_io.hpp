// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "tsse/audio.hpp"

namespace tsse {

enum class WavEncoding { kPcm16, kFloat32 };

// RIFF/WAVE reader for 16-bit PCM and 32-bit IEEE float. Multi-channel
// files are averaged to mono (a warning is logged).
Waveform read_wav(const std::filesystem::path& path);
Waveform read_wav(std::istream& in, const std::string& origin = "<stream>");

void write_wav(const std::filesystem::path& path, const Waveform& wav,
               WavEncoding encoding = WavEncoding::kFloat32);
void write_wav(std::ostream& out, const Waveform& wav, WavEncoding encoding = WavEncoding::kFloat32);

}  // namespace tsse
