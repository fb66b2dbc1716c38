// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsse/audio.hpp"
#include "tsse/rng.hpp"

namespace tsse {

enum class DistortionKind { kReverb, kNoise, kWind, kClipping, kBandwidthLimit, kCodec, kPacketLoss };

/// Order in which sampled distortions are applied to a signal.
inline constexpr DistortionKind kApplicationOrder[] = {
    DistortionKind::kReverb,         DistortionKind::kNoise, DistortionKind::kWind,
    DistortionKind::kClipping,       DistortionKind::kBandwidthLimit,
    DistortionKind::kCodec,          DistortionKind::kPacketLoss};

std::string_view to_string(DistortionKind kind);
DistortionKind distortion_from_string(std::string_view name);

enum class Stage { kFill, kSep, kRes };
std::string_view to_string(Stage stage);
Stage stage_from_string(std::string_view name);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double sample(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
  bool operator==(const Range&) const = default;
};

// ---------------------------------------------------------------------------
// Single distortions

/// Adds `noise` (looped or trimmed to the clean length) scaled so that
/// 10*log10(P_clean / P_noise) == snr_db.
Waveform apply_noise(const Waveform& clean, const Waveform& noise, double snr_db);

/// Full convolution truncated to the input length, rescaled to the input peak.
Waveform apply_reverb(const Waveform& clean, const Waveform& rir);

/// Hard clip at clip_ratio * max|x|.
Waveform apply_clip(const Waveform& wav, double clip_ratio);

/// Resample to `cutoff_fs` and back; output length and rate are preserved.
Waveform apply_bandwidth_limit(const Waveform& wav, int cutoff_fs);

struct CodecPreset {
  enum class Type { kUniform, kMuLaw, kExternal };
  std::string name;
  Type type = Type::kMuLaw;
  int bits = 8;
  int bandwidth_fs = 0;  // optional band limit applied first (0 = none)
  std::string command;   // external adapter: reads WAV on stdin, writes WAV on stdout

  static CodecPreset named(std::string_view name);
  static CodecPreset external(std::string command);
};

/// Reconstruction levels of the b-bit mu-law quantizer (ascending).
std::vector<double> mulaw_grid(int bits);
Waveform apply_codec(const Waveform& wav, const CodecPreset& preset);

struct PacketLossMask {
  std::vector<std::pair<int64_t, int64_t>> lost_segments;  // [start, end), sorted, disjoint

  int64_t lost_samples() const;
  bool contains(int64_t sample) const;
};

struct PacketLossParams {
  double loss_rate = 0.1;           // target lost fraction, in (0, 0.5]
  Range segment_ms{20.0, 320.0};
};

std::pair<Waveform, PacketLossMask> apply_packet_loss(const Waveform& wav, Rng& rng,
                                                      const PacketLossParams& params);
Waveform apply_mask(const Waveform& wav, const PacketLossMask& mask);

/// Low-frequency noise with slow amplitude gusts; RMS proportional to intensity.
Waveform synth_wind(double duration_s, int fs, Rng& rng, double intensity);
/// Exponentially decaying Gaussian room response with a unit direct path.
Waveform synth_rir(double t60_s, int fs, Rng& rng);
/// Coloured stationary noise with a random spectral tilt.
Waveform synth_noise(std::size_t length, int fs, Rng& rng);

// ---------------------------------------------------------------------------
// Recipes and paired simulation

struct DistortionSpec {
  DistortionKind kind = DistortionKind::kNoise;
  Range snr_db{-5.0, 20.0};
  Range t60_s{0.2, 1.0};
  Range clip_ratio{0.1, 0.9};
  /// Band-limit resampling rates; effective bandwidths 4, 8, 16, 22.05, 24 kHz.
  std::vector<int> cutoff_fs{8000, 16000, 32000, 44100, 48000};
  std::vector<std::string> codec_presets{"mulaw8", "mulaw6"};
  std::string codec_command;  // when set, codec draws use the external adapter
  Range loss_rate{0.05, 0.25};
  Range segment_ms{20.0, 320.0};
  Range wind_intensity{0.5, 1.0};

  void validate() const;
};

struct OptionalDistortion {
  DistortionSpec spec;
  double probability = 0.5;
};

struct DistortionRecipe {
  Stage stage = Stage::kSep;
  std::vector<DistortionSpec> mandatory;
  std::vector<OptionalDistortion> optional;
  /// Kinds that, when applied, are also applied to the target.
  std::set<DistortionKind> target_keeps;

  /// Stage defaults: fill = packet loss + everything else optional; sep =
  /// noise + optional reverb/clip/wind/band-limit/codec; res = band limit +
  /// optional codec/packet loss.
  static DistortionRecipe defaults(Stage stage);
  void validate() const;
};

/// One realised distortion: every parameter needed to replay it.
struct DistortionDraw {
  DistortionKind kind = DistortionKind::kNoise;
  double snr_db = 0.0;
  double t60_s = 0.0;
  double clip_ratio = 1.0;
  int cutoff_fs = 0;
  std::string codec_preset;
  std::string codec_command;
  double loss_rate = 0.0;
  Range segment_ms{20.0, 320.0};
  double intensity = 0.0;
  int source_index = -1;  // index into the external noise/RIR bank, -1 = synthetic
  uint64_t seed = 0;      // seeds the synthetic source / packet placement
};

/// Optional recorded noise and RIR banks; synthetic sources are used when empty.
struct SimulationResources {
  std::vector<Waveform> noises;
  std::vector<Waveform> rirs;
};

struct SimulatedPair {
  Waveform input;
  Waveform target;
  std::optional<PacketLossMask> mask;
  std::vector<DistortionDraw> draws;
  std::set<DistortionKind> target_kinds;
};

/// Native training rate of a stage's data (16 kHz for fill/sep, 48 kHz for res).
int stage_rate(Stage stage);
/// Applies the stage's rate policy to a clean signal (throws unsupported-rate).
Waveform conform_to_stage_rate(const Waveform& clean, Stage stage);

std::vector<DistortionDraw> sample_draws(const DistortionRecipe& recipe, int fs, Rng& rng);

/// Applies the subset of `draws` whose kind is in `kinds`, in application order.
Waveform apply_draws(const Waveform& wav, const std::vector<DistortionDraw>& draws,
                     const std::set<DistortionKind>& kinds, const SimulationResources& res = {},
                     PacketLossMask* mask = nullptr);

SimulatedPair simulate_pair(const Waveform& clean, const DistortionRecipe& recipe, Rng& rng,
                            const SimulationResources& res = {});

/// Rebuilds a pair from its provenance (draws + target kinds).
SimulatedPair replay_pair(const Waveform& clean, Stage stage, const std::vector<DistortionDraw>& draws,
                          const std::set<DistortionKind>& target_kinds,
                          const SimulationResources& res = {});

// JSON forms (recipe files and provenance sidecars). Unknown keys are rejected.
nlohmann::json to_json(const DistortionSpec& spec);
DistortionSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DistortionRecipe& recipe);
DistortionRecipe recipe_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DistortionDraw& draw);
DistortionDraw draw_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PacketLossMask& mask);

}  // namespace tsse
