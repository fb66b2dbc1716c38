// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace tsse {

/// TF-GridNet hyperparameters: embedding dim D, block count B, unfold kernel
/// I and stride J, LSTM hidden units H, attention channels E and heads L.
struct GridNetConfig {
  int D = 48;
  int B = 5;
  int I = 4;
  int J = 1;
  int H = 100;
  int E = 2;
  int L = 4;

  static GridNetConfig small();  // (48, 5, 4, 1, 100, 2, 4)
  static GridNetConfig large();  // (96, 10, 4, 1, 200, 4, 8)
  void validate() const;
  bool operator==(const GridNetConfig&) const = default;
};

nlohmann::json to_json(const GridNetConfig& cfg);
GridNetConfig gridnet_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Building blocks

/// Layer norm over the channel axis of [B, C, T, F].
class ChannelNormImpl : public torch::nn::Module {
 public:
  explicit ChannelNormImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::Tensor gamma_, beta_;
};
TORCH_MODULE(ChannelNorm);

/// Per-head PReLU followed by layer norm over (channel, frequency) within
/// each head; parameters do not depend on F.
class HeadNormImpl : public torch::nn::Module {
 public:
  HeadNormImpl(int heads, int channels);
  torch::Tensor forward(const torch::Tensor& x);  // [B, heads*channels, T, F]

 private:
  int heads_, channels_;
  torch::Tensor alpha_, gamma_, beta_;
};
TORCH_MODULE(HeadNorm);

/// One direction-agnostic recurrent path: norm, unfold(I, J), BLSTM, deconv,
/// residual. Runs along the last axis of [B, D, T, F] (intra) or T (inter).
class GridPathImpl : public torch::nn::Module {
 public:
  GridPathImpl(const GridNetConfig& cfg, bool along_time);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  GridNetConfig cfg_;
  bool along_time_;
  ChannelNorm norm_{nullptr};
  torch::nn::LSTM rnn_{nullptr};
  torch::nn::ConvTranspose1d deconv_{nullptr};
};
TORCH_MODULE(GridPath);

/// Full-band self-attention across frames.
class GridAttentionImpl : public torch::nn::Module {
 public:
  explicit GridAttentionImpl(const GridNetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  GridNetConfig cfg_;
  torch::nn::Conv2d q_{nullptr}, k_{nullptr}, v_{nullptr}, proj_{nullptr};
  HeadNorm q_norm_{nullptr}, k_norm_{nullptr}, v_norm_{nullptr}, proj_norm_{nullptr};
};
TORCH_MODULE(GridAttention);

class GridBlockImpl : public torch::nn::Module {
 public:
  explicit GridBlockImpl(const GridNetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  GridPath intra_{nullptr}, inter_{nullptr};
  GridAttention attn_{nullptr};
};
TORCH_MODULE(GridBlock);

/// Real-valued [B, in_ch, T, F] -> [B, out_ch, T, F] for any T and F.
class TFGridNetImpl : public torch::nn::Module {
 public:
  TFGridNetImpl(const GridNetConfig& cfg, int in_channels, int out_channels, bool zero_init_output = false);
  torch::Tensor forward(const torch::Tensor& x);

  const GridNetConfig& config() const { return cfg_; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }

 private:
  GridNetConfig cfg_;
  int in_ch_, out_ch_;
  torch::nn::Conv2d in_conv_{nullptr};
  torch::nn::GroupNorm in_norm_{nullptr};
  torch::nn::ModuleList blocks_;
  torch::nn::ConvTranspose2d out_conv_{nullptr};
};
TORCH_MODULE(TFGridNet);

int64_t count_parameters(const torch::nn::Module& m);

/// Closed-form parameter count of TFGridNet(cfg, in, out).
int64_t gridnet_param_count(const GridNetConfig& cfg, int in_channels, int out_channels);
/// Multiply-accumulates of one forward pass over a T x F grid (LSTM gates,
/// convolutions and attention products; norms and activations excluded).
double gridnet_macs(const GridNetConfig& cfg, int in_channels, int out_channels, int64_t frames, int64_t bins);

// ---------------------------------------------------------------------------
// Stage networks operating on waveforms [B, N]

enum class StageNetKind { kFill, kSep, kRes };

/// Spectral stage network: STFT -> TF-GridNet -> iSTFT, with per-utterance RMS
/// normalisation. Fill and res add the input back (residual / skip); sep is a
/// direct regression. Res works on CWS subbands and only accepts 48 kHz.
class StageNetImpl : public torch::nn::Module {
 public:
  StageNetImpl(StageNetKind kind, const GridNetConfig& cfg, bool zero_init_output);
  torch::Tensor forward(const torch::Tensor& wav, int fs);

  StageNetKind kind() const { return kind_; }
  const GridNetConfig& config() const { return net_->config(); }
  TFGridNet& net() { return net_; }

 private:
  StageNetKind kind_;
  TFGridNet net_{nullptr};
};
TORCH_MODULE(StageNet);

StageNet build_stage_net(StageNetKind kind, const GridNetConfig& cfg);
/// Fill and res start from a zero output projection so the stage is identity.
bool default_zero_init(StageNetKind kind);

// ---------------------------------------------------------------------------
// Discriminators

struct DiscriminatorOutput {
  std::vector<torch::Tensor> scores;                 // one per sub-discriminator
  std::vector<std::vector<torch::Tensor>> features;  // per sub-discriminator, per layer
};

struct DiscriminatorConfig {
  bool use_mpd = true;
  bool use_mrd = true;
  bool use_mbd = false;
  std::vector<int> periods{2, 3, 5, 7, 11};
  std::vector<std::pair<int, int>> resolutions{{512, 128}, {1024, 256}, {2048, 512}};  // (n_fft, hop)
  int mbd_bands = 3;
  double width = 1.0;  // channel multiplier

  static DiscriminatorConfig for_stage(StageNetKind kind);
  int64_t min_length() const;
  void validate() const;
};

nlohmann::json to_json(const DiscriminatorConfig& cfg);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);

class PeriodDiscriminatorImpl : public torch::nn::Module {
 public:
  PeriodDiscriminatorImpl(int period, double width);
  std::pair<torch::Tensor, std::vector<torch::Tensor>> forward(const torch::Tensor& wav);

 private:
  int period_;
  torch::nn::ModuleList convs_;
  torch::nn::Conv2d post_{nullptr};
};
TORCH_MODULE(PeriodDiscriminator);

class ResolutionDiscriminatorImpl : public torch::nn::Module {
 public:
  ResolutionDiscriminatorImpl(int n_fft, int hop, double width);
  std::pair<torch::Tensor, std::vector<torch::Tensor>> forward(const torch::Tensor& wav);

 private:
  int n_fft_, hop_;
  torch::nn::ModuleList convs_;
  torch::nn::Conv2d post_{nullptr};
};
TORCH_MODULE(ResolutionDiscriminator);

class BandDiscriminatorImpl : public torch::nn::Module {
 public:
  BandDiscriminatorImpl(double lo_frac, double hi_frac, double width);
  std::pair<torch::Tensor, std::vector<torch::Tensor>> forward(const torch::Tensor& wav);

 private:
  torch::Tensor fir_;  // band-pass taps (buffer)
  torch::nn::ModuleList convs_;
  torch::nn::Conv1d post_{nullptr};
};
TORCH_MODULE(BandDiscriminator);

/// MPD / MRD / MBD ensemble.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const DiscriminatorConfig& cfg);
  DiscriminatorOutput forward(const torch::Tensor& wav);  // [B, N]

  DiscriminatorOutput mpd_forward(const torch::Tensor& wav);
  DiscriminatorOutput mrd_forward(const torch::Tensor& wav);
  DiscriminatorOutput mbd_forward(const torch::Tensor& wav);
  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  std::vector<PeriodDiscriminator> mpd_;
  std::vector<ResolutionDiscriminator> mrd_;
  std::vector<BandDiscriminator> mbd_;
};
TORCH_MODULE(Discriminator);

// ---------------------------------------------------------------------------
// Bundle, budget audit and checkpoints

struct BundleConfig {
  GridNetConfig fill = GridNetConfig::small();
  GridNetConfig sep = GridNetConfig::large();
  GridNetConfig res = GridNetConfig::small();
  bool with_finetuned_res = true;
};

nlohmann::json to_json(const BundleConfig& cfg);
BundleConfig bundle_config_from_json(const nlohmann::json& j);

struct ModelBundle {
  BundleConfig cfg;
  StageNet fill{nullptr};
  StageNet sep{nullptr};
  StageNet res{nullptr};
  StageNet res_finetuned{nullptr};  // null when absent

  static ModelBundle build(const BundleConfig& cfg);
  void eval();
  void to(torch::Dtype dtype);

  struct Counts {
    int64_t fill = 0, sep = 0, res = 0, res_finetuned = 0;
    int64_t total() const { return fill + sep + res + res_finetuned; }
  };
  Counts parameter_counts() const;
};

/// Closed-form per-net parameter counts for a bundle configuration.
ModelBundle::Counts bundle_param_counts(const BundleConfig& cfg);

/// Average MACs per second of audio for one pass through fill, sep and res on
/// an input of `duration_s` seconds at `fs` (fill/sep at the native rate, res
/// at 48 kHz). Attention cost grows with duration, hence the explicit length.
double bundle_macs_per_second(const BundleConfig& cfg, int fs, double duration_s);

/// Plain-text parameter / MACs breakdown.
std::string budget_report(const BundleConfig& cfg, double duration_s);

inline constexpr int kCheckpointFormat = 1;

/// Saves named modules plus a JSON metadata document into a torch archive.
using NamedModules = std::vector<std::pair<std::string, torch::nn::Module*>>;
using NamedOptimizers = std::vector<std::pair<std::string, torch::optim::Optimizer*>>;

/// Saves named modules (and optionally optimizer states) plus a JSON metadata
/// document into a torch archive.
void save_modules(const std::filesystem::path& file, const NamedModules& modules, const nlohmann::json& meta,
                  const NamedOptimizers& optimizers = {});
/// Loads parameters into the given modules; returns the metadata. Throws
/// configuration-error for a missing file, a format mismatch or missing keys.
nlohmann::json load_modules(const std::filesystem::path& file, const NamedModules& modules,
                            const NamedOptimizers& optimizers = {});
nlohmann::json read_checkpoint_meta(const std::filesystem::path& file);

void save_bundle(const std::filesystem::path& file, ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& file);

}  // namespace tsse
