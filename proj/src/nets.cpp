// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/nets.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "tsse/audio.hpp"
#include "tsse/cws.hpp"
#include "tsse/error.hpp"
#include "tsse/resample.hpp"
#include "tsse/stft.hpp"

namespace tsse {

namespace F = torch::nn::functional;

GridNetConfig GridNetConfig::small() { return {48, 5, 4, 1, 100, 2, 4}; }
GridNetConfig GridNetConfig::large() { return {96, 10, 4, 1, 200, 4, 8}; }

void GridNetConfig::validate() const {
  TSSE_CHECK(D > 0 && B > 0 && I > 0 && J > 0 && H > 0 && E > 0 && L > 0, ErrorKind::kInvalidArgument,
             "GridNet hyperparameters must be positive");
  TSSE_CHECK(I >= J, ErrorKind::kInvalidArgument, "unfold kernel I must be >= stride J");
  TSSE_CHECK(D % L == 0, ErrorKind::kInvalidArgument, "embedding dim D must be divisible by heads L");
}

nlohmann::json to_json(const GridNetConfig& c) {
  return {{"D", c.D}, {"B", c.B}, {"I", c.I}, {"J", c.J}, {"H", c.H}, {"E", c.E}, {"L", c.L}};
}

GridNetConfig gridnet_config_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "S" || name == "small") return GridNetConfig::small();
    if (name == "L" || name == "large") return GridNetConfig::large();
    throw Error(ErrorKind::kConfiguration, "unknown GridNet preset '" + name + "'");
  }
  TSSE_CHECK(j.is_object(), ErrorKind::kConfiguration, "GridNet config must be an object or preset name");
  GridNetConfig c;
  for (const auto& [key, value] : j.items()) {
    TSSE_CHECK(value.is_number_integer(), ErrorKind::kConfiguration, "GridNet." + key + " must be an integer");
    const int v = value.get<int>();
    if (key == "D") c.D = v;
    else if (key == "B") c.B = v;
    else if (key == "I") c.I = v;
    else if (key == "J") c.J = v;
    else if (key == "H") c.H = v;
    else if (key == "E") c.E = v;
    else if (key == "L") c.L = v;
    else throw Error(ErrorKind::kConfiguration, "unknown GridNet key '" + key + "'");
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfiguration, e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------

ChannelNormImpl::ChannelNormImpl(int channels) {
  gamma_ = register_parameter("gamma", torch::ones({1, channels, 1, 1}));
  beta_ = register_parameter("beta", torch::zeros({1, channels, 1, 1}));
}

torch::Tensor ChannelNormImpl::forward(const torch::Tensor& x) {
  auto mu = x.mean(1, true);
  auto var = (x - mu).pow(2).mean(1, true);
  return (x - mu) / (var + 1e-5).sqrt() * gamma_ + beta_;
}

HeadNormImpl::HeadNormImpl(int heads, int channels) : heads_(heads), channels_(channels) {
  alpha_ = register_parameter("alpha", torch::full({1, heads, 1, 1, 1}, 0.25));
  gamma_ = register_parameter("gamma", torch::ones({1, heads, channels, 1, 1}));
  beta_ = register_parameter("beta", torch::zeros({1, heads, channels, 1, 1}));
}

torch::Tensor HeadNormImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), t = x.size(2), f = x.size(3);
  auto y = x.view({b, heads_, channels_, t, f});
  y = torch::where(y >= 0, y, alpha_ * y);
  auto mu = y.mean({2, 4}, true);
  auto var = (y - mu).pow(2).mean({2, 4}, true);
  y = (y - mu) / (var + 1e-5).sqrt() * gamma_ + beta_;
  return y.view({b, heads_ * channels_, t, f});
}

namespace {

int64_t padded_length(int64_t s, int i, int j) { return s <= i ? i : i + (s - i + j - 1) / j * j; }
int64_t num_windows(int64_t s, int i, int j) { return (padded_length(s, i, j) - i) / j + 1; }

}  // namespace

GridPathImpl::GridPathImpl(const GridNetConfig& cfg, bool along_time) : cfg_(cfg), along_time_(along_time) {
  norm_ = register_module("norm", ChannelNorm(cfg.D));
  rnn_ = register_module(
      "rnn", torch::nn::LSTM(torch::nn::LSTMOptions(cfg.D * cfg.I, cfg.H).bidirectional(true).batch_first(true)));
  deconv_ = register_module(
      "deconv", torch::nn::ConvTranspose1d(torch::nn::ConvTranspose1dOptions(2 * cfg.H, cfg.D, cfg.I).stride(cfg.J)));
}

torch::Tensor GridPathImpl::forward(const torch::Tensor& x) {
  auto y = norm_(x);
  if (along_time_) y = y.transpose(2, 3);
  const auto b = y.size(0), d = y.size(1), a = y.size(2), s = y.size(3);
  y = y.permute({0, 2, 1, 3}).reshape({b * a, d, s});
  const int64_t q = padded_length(s, cfg_.I, cfg_.J);
  if (q > s) y = F::pad(y, F::PadFuncOptions({0, q - s}));
  y = y.unfold(2, cfg_.I, cfg_.J);  // [b*a, d, n, I]
  const auto n = y.size(2);
  y = y.permute({0, 2, 1, 3}).reshape({b * a, n, d * cfg_.I});
  y = std::get<0>(rnn_(y));
  y = deconv_(y.transpose(1, 2));  // [b*a, d, q]
  y = y.narrow(2, 0, s).reshape({b, a, d, s}).permute({0, 2, 1, 3});
  if (along_time_) y = y.transpose(2, 3);
  return x + y;
}

GridAttentionImpl::GridAttentionImpl(const GridNetConfig& cfg) : cfg_(cfg) {
  auto conv = [](int in, int out) { return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)); };
  q_ = register_module("q", conv(cfg.D, cfg.L * cfg.E));
  k_ = register_module("k", conv(cfg.D, cfg.L * cfg.E));
  v_ = register_module("v", conv(cfg.D, cfg.D));
  proj_ = register_module("proj", conv(cfg.D, cfg.D));
  q_norm_ = register_module("q_norm", HeadNorm(cfg.L, cfg.E));
  k_norm_ = register_module("k_norm", HeadNorm(cfg.L, cfg.E));
  v_norm_ = register_module("v_norm", HeadNorm(cfg.L, cfg.D / cfg.L));
  proj_norm_ = register_module("proj_norm", HeadNorm(1, cfg.D));
}

torch::Tensor GridAttentionImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), t = x.size(2), f = x.size(3);
  const int64_t heads = cfg_.L, e = cfg_.E, dv = cfg_.D / cfg_.L;
  auto split = [&](const torch::Tensor& y, int64_t c) {
    return y.view({b, heads, c, t, f}).permute({0, 1, 3, 2, 4}).reshape({b * heads, t, c * f});
  };
  auto q = split(q_norm_(q_(x)), e);
  auto k = split(k_norm_(k_(x)), e);
  auto v = split(v_norm_(v_(x)), dv);
  auto attn = torch::softmax(torch::bmm(q, k.transpose(1, 2)) / std::sqrt(static_cast<double>(e * f)), -1);
  auto o = torch::bmm(attn, v).view({b, heads, t, dv, f}).permute({0, 1, 3, 2, 4}).reshape({b, cfg_.D, t, f});
  return x + proj_norm_(proj_(o));
}

GridBlockImpl::GridBlockImpl(const GridNetConfig& cfg) {
  intra_ = register_module("intra", GridPath(cfg, false));
  inter_ = register_module("inter", GridPath(cfg, true));
  attn_ = register_module("attn", GridAttention(cfg));
}

torch::Tensor GridBlockImpl::forward(const torch::Tensor& x) { return attn_(inter_(intra_(x))); }

TFGridNetImpl::TFGridNetImpl(const GridNetConfig& cfg, int in_channels, int out_channels, bool zero_init_output)
    : cfg_(cfg), in_ch_(in_channels), out_ch_(out_channels) {
  cfg.validate();
  TSSE_CHECK(in_channels > 0 && out_channels > 0, ErrorKind::kInvalidArgument, "channel counts must be positive");
  in_conv_ = register_module("in_conv",
                             torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, cfg.D, 3).padding(1)));
  in_norm_ = register_module("in_norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(1, cfg.D).eps(1e-5)));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < cfg.B; ++i) blocks_->push_back(GridBlock(cfg));
  out_conv_ = register_module(
      "out_conv", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(cfg.D, out_channels, 3).padding(1)));
  if (zero_init_output) {
    torch::NoGradGuard guard;
    out_conv_->weight.zero_();
    out_conv_->bias.zero_();
  }
}

torch::Tensor TFGridNetImpl::forward(const torch::Tensor& x) {
  TSSE_CHECK(x.dim() == 4 && x.size(1) == in_ch_, ErrorKind::kShapeMismatch,
             "TFGridNet expects [B, " + std::to_string(in_ch_) + ", T, F]");
  auto y = in_norm_(in_conv_(x));
  for (auto& block : *blocks_) y = block->as<GridBlock>()->forward(y);
  return out_conv_(y);
}

int64_t count_parameters(const torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

int64_t gridnet_param_count(const GridNetConfig& c, int in_channels, int out_channels) {
  const int64_t D = c.D, I = c.I, H = c.H, E = c.E, L = c.L;
  const int64_t path = 2 * D + 2 * (4 * H * (D * I + H) + 8 * H) + 2 * H * D * I + D;
  const int64_t qk = D * L * E + L * E + L + 2 * L * E;
  const int64_t attn = 2 * qk + (D * D + D + L + 2 * D) + (D * D + D + 1 + 2 * D);
  const int64_t io = in_channels * D * 9 + D + 2 * D + D * out_channels * 9 + out_channels;
  return c.B * (2 * path + attn) + io;
}

double gridnet_macs(const GridNetConfig& c, int in_channels, int out_channels, int64_t frames, int64_t bins) {
  const double D = c.D, I = c.I, H = c.H, E = c.E, L = c.L;
  const double T = static_cast<double>(frames), Fb = static_cast<double>(bins);
  const double step = 2.0 * 4.0 * H * (D * I + H) + 2.0 * H * D * I;  // BLSTM + deconv per window
  const double intra = T * static_cast<double>(num_windows(bins, c.I, c.J)) * step;
  const double inter = Fb * static_cast<double>(num_windows(frames, c.I, c.J)) * step;
  const double attn = T * Fb * (2.0 * D * L * E + 2.0 * D * D) + T * T * Fb * (L * E + D);
  const double io = T * Fb * 9.0 * (in_channels * D + D * out_channels);
  return c.B * (intra + inter + attn) + io;
}

// ---------------------------------------------------------------------------

bool default_zero_init(StageNetKind kind) { return kind != StageNetKind::kSep; }

StageNetImpl::StageNetImpl(StageNetKind kind, const GridNetConfig& cfg, bool zero_init_output) : kind_(kind) {
  const int ch = kind == StageNetKind::kRes ? 2 * kCwsBands : 2;
  net_ = register_module("net", TFGridNet(cfg, ch, ch, zero_init_output));
}

torch::Tensor StageNetImpl::forward(const torch::Tensor& wav, int fs) {
  TSSE_CHECK(wav.dim() == 2 && wav.size(1) > 0, ErrorKind::kShapeMismatch, "stage net expects [B, N] waveforms");
  require_supported_rate(fs);
  if (kind_ == StageNetKind::kRes)
    TSSE_CHECK(fs == kCwsRate, ErrorKind::kUnsupportedRate,
               "restoration net requires 48 kHz input, got " + std::to_string(fs));
  const auto cfg = StftConfig::for_rate(fs);
  const int64_t n = wav.size(1);
  auto rms = (wav.pow(2).mean(-1, true) + 1e-8).sqrt();
  auto spec = stft(wav / rms, cfg);  // [B, T, F]

  torch::Tensor out_spec;
  if (kind_ == StageNetKind::kRes) {
    const auto stack = cws_split(spec, cfg);
    auto ch = complex_to_channels(stack.to_channels());  // [B, 3, 2, T, Fb]
    const auto b = ch.size(0), t = ch.size(3), fb = ch.size(4);
    auto y = net_(ch.reshape({b, 2 * kCwsBands, t, fb})).reshape({b, kCwsBands, 2, t, fb});
    out_spec = cws_merge_tensor(SubbandStack::from_channels(channels_to_complex(y), stack.band_edges, cfg));
  } else {
    out_spec = channels_to_complex(net_(complex_to_channels(spec)));
  }
  auto y = istft(out_spec, cfg, n) * rms;
  return kind_ == StageNetKind::kSep ? y : wav + y;
}

StageNet build_stage_net(StageNetKind kind, const GridNetConfig& cfg) {
  return StageNet(kind, cfg, default_zero_init(kind));
}

// ---------------------------------------------------------------------------
// Discriminators

namespace {

int scaled(int channels, double width) { return std::max(1, static_cast<int>(std::lround(channels * width))); }

int group_count(int in, int out, int wanted) {
  return std::max(1, std::gcd(std::gcd(in, out), wanted));
}

torch::Tensor leaky(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.1)); }

}  // namespace

DiscriminatorConfig DiscriminatorConfig::for_stage(StageNetKind kind) {
  DiscriminatorConfig c;
  if (kind == StageNetKind::kRes) {
    c.use_mpd = false;
    c.use_mbd = true;
  } else if (kind == StageNetKind::kSep) {
    c.use_mpd = c.use_mrd = c.use_mbd = false;
  }
  return c;
}

int64_t DiscriminatorConfig::min_length() const {
  int64_t m = 64;
  if (use_mpd)
    for (int p : periods) m = std::max<int64_t>(m, 2 * p);
  if (use_mrd)
    for (const auto& [n_fft, hop] : resolutions) m = std::max<int64_t>(m, n_fft);
  return m;
}

void DiscriminatorConfig::validate() const {
  TSSE_CHECK(use_mpd || use_mrd || use_mbd, ErrorKind::kInvalidArgument, "no sub-discriminator enabled");
  TSSE_CHECK(width > 0.0, ErrorKind::kInvalidArgument, "discriminator width must be positive");
  if (use_mpd) {
    TSSE_CHECK(!periods.empty(), ErrorKind::kInvalidArgument, "MPD needs at least one period");
    for (int p : periods) TSSE_CHECK(p >= 1, ErrorKind::kInvalidArgument, "MPD periods must be positive");
  }
  if (use_mrd) {
    TSSE_CHECK(!resolutions.empty(), ErrorKind::kInvalidArgument, "MRD needs at least one resolution");
    for (const auto& [n_fft, hop] : resolutions)
      TSSE_CHECK(n_fft >= 16 && hop >= 1 && hop <= n_fft / 2, ErrorKind::kInvalidArgument, "invalid MRD resolution");
  }
  if (use_mbd) TSSE_CHECK(mbd_bands >= 1, ErrorKind::kInvalidArgument, "MBD needs at least one band");
}

nlohmann::json to_json(const DiscriminatorConfig& c) {
  nlohmann::json res = nlohmann::json::array();
  for (const auto& [n, h] : c.resolutions) res.push_back({n, h});
  return {{"use_mpd", c.use_mpd}, {"use_mrd", c.use_mrd}, {"use_mbd", c.use_mbd},  {"periods", c.periods},
          {"resolutions", res},   {"mbd_bands", c.mbd_bands}, {"width", c.width}};
}

DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j) {
  TSSE_CHECK(j.is_object(), ErrorKind::kConfiguration, "discriminator config must be an object");
  DiscriminatorConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "use_mpd") c.use_mpd = v.get<bool>();
      else if (key == "use_mrd") c.use_mrd = v.get<bool>();
      else if (key == "use_mbd") c.use_mbd = v.get<bool>();
      else if (key == "periods") c.periods = v.get<std::vector<int>>();
      else if (key == "resolutions") {
        c.resolutions.clear();
        for (const auto& r : v) c.resolutions.emplace_back(r.at(0).get<int>(), r.at(1).get<int>());
      } else if (key == "mbd_bands") c.mbd_bands = v.get<int>();
      else if (key == "width") c.width = v.get<double>();
      else throw Error(ErrorKind::kConfiguration, "unknown discriminator key '" + key + "'");
    }
    c.validate();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfiguration, std::string("discriminator config: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kConfiguration) throw;
    throw Error(ErrorKind::kConfiguration, e.what());
  }
  return c;
}

PeriodDiscriminatorImpl::PeriodDiscriminatorImpl(int period, double width) : period_(period) {
  convs_ = register_module("convs", torch::nn::ModuleList());
  const int chans[] = {1, scaled(32, width), scaled(128, width), scaled(512, width), scaled(1024, width)};
  for (int i = 0; i < 4; ++i)
    convs_->push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(chans[i], chans[i + 1], {5, 1}).stride({3, 1}).padding({2, 0})));
  convs_->push_back(
      torch::nn::Conv2d(torch::nn::Conv2dOptions(chans[4], chans[4], {5, 1}).stride({1, 1}).padding({2, 0})));
  post_ = register_module("post", torch::nn::Conv2d(torch::nn::Conv2dOptions(chans[4], 1, {3, 1}).padding({1, 0})));
}

std::pair<torch::Tensor, std::vector<torch::Tensor>> PeriodDiscriminatorImpl::forward(const torch::Tensor& wav) {
  const auto b = wav.size(0), n = wav.size(1);
  auto x = wav.unsqueeze(1);
  const int64_t pad = (period_ - n % period_) % period_;
  if (pad > 0) x = F::pad(x, F::PadFuncOptions({0, pad}).mode(torch::kReflect));
  x = x.view({b, 1, (n + pad) / period_, period_});
  std::vector<torch::Tensor> feats;
  for (auto& m : *convs_) {
    x = leaky(m->as<torch::nn::Conv2d>()->forward(x));
    feats.push_back(x);
  }
  x = post_(x);
  feats.push_back(x);
  return {x.flatten(1), feats};
}

ResolutionDiscriminatorImpl::ResolutionDiscriminatorImpl(int n_fft, int hop, double width) : n_fft_(n_fft), hop_(hop) {
  const int c = scaled(32, width);
  convs_ = register_module("convs", torch::nn::ModuleList());
  convs_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(1, c, {3, 9}).padding({1, 4})));
  for (int i = 0; i < 3; ++i)
    convs_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, {3, 9}).stride({1, 2}).padding({1, 4})));
  convs_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, {3, 3}).padding({1, 1})));
  post_ = register_module("post", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, 1, {3, 3}).padding({1, 1})));
}

std::pair<torch::Tensor, std::vector<torch::Tensor>> ResolutionDiscriminatorImpl::forward(const torch::Tensor& wav) {
  auto spec = stft(wav, StftConfig::custom(n_fft_, hop_));
  auto x = (torch::view_as_real(spec).pow(2).sum(-1) + 1e-9).sqrt().unsqueeze(1);  // [B, 1, T, F]
  std::vector<torch::Tensor> feats;
  for (auto& m : *convs_) {
    x = leaky(m->as<torch::nn::Conv2d>()->forward(x));
    feats.push_back(x);
  }
  x = post_(x);
  feats.push_back(x);
  return {x.flatten(1), feats};
}

BandDiscriminatorImpl::BandDiscriminatorImpl(double lo_frac, double hi_frac, double width) {
  constexpr int kTaps = 63;
  std::vector<double> taps(kTaps, 0.0);
  if (hi_frac >= 1.0) taps[kTaps / 2] = 1.0;
  else taps = design_lowpass(hi_frac, 2.0, kTaps, 60.0);
  if (lo_frac > 0.0) {
    const auto low = design_lowpass(lo_frac, 2.0, kTaps, 60.0);
    for (int i = 0; i < kTaps; ++i) taps[i] -= low[i];
  }
  fir_ = register_buffer("fir", torch::tensor(taps, torch::kFloat32).view({1, 1, kTaps}));

  const int c1 = scaled(32, width), c2 = scaled(64, width), c3 = scaled(128, width), c4 = scaled(256, width);
  convs_ = register_module("convs", torch::nn::ModuleList());
  convs_->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(1, c1, 15).padding(7)));
  const int ins[] = {c1, c2, c3}, outs[] = {c2, c3, c4}, groups[] = {4, 16, 16};
  for (int i = 0; i < 3; ++i)
    convs_->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(ins[i], outs[i], 41)
                                            .stride(4)
                                            .padding(20)
                                            .groups(group_count(ins[i], outs[i], groups[i]))));
  convs_->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(c4, c4, 5).padding(2)));
  post_ = register_module("post", torch::nn::Conv1d(torch::nn::Conv1dOptions(c4, 1, 3).padding(1)));
}

std::pair<torch::Tensor, std::vector<torch::Tensor>> BandDiscriminatorImpl::forward(const torch::Tensor& wav) {
  auto x = F::conv1d(wav.unsqueeze(1), fir_.to(wav.scalar_type()),
                     F::Conv1dFuncOptions().padding(fir_.size(2) / 2));
  std::vector<torch::Tensor> feats;
  for (auto& m : *convs_) {
    x = leaky(m->as<torch::nn::Conv1d>()->forward(x));
    feats.push_back(x);
  }
  x = post_(x);
  feats.push_back(x);
  return {x.flatten(1), feats};
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  if (cfg.use_mpd)
    for (int p : cfg.periods)
      mpd_.push_back(register_module("mpd_" + std::to_string(p), PeriodDiscriminator(p, cfg.width)));
  if (cfg.use_mrd)
    for (const auto& [n_fft, hop] : cfg.resolutions)
      mrd_.push_back(register_module("mrd_" + std::to_string(n_fft), ResolutionDiscriminator(n_fft, hop, cfg.width)));
  if (cfg.use_mbd)
    for (int b = 0; b < cfg.mbd_bands; ++b)
      mbd_.push_back(register_module("mbd_" + std::to_string(b),
                                     BandDiscriminator(static_cast<double>(b) / cfg.mbd_bands,
                                                       static_cast<double>(b + 1) / cfg.mbd_bands, cfg.width)));
}

namespace {

template <typename Subs>
DiscriminatorOutput run_subs(Subs& subs, const torch::Tensor& wav) {
  DiscriminatorOutput out;
  for (auto& s : subs) {
    auto [score, feats] = s->forward(wav);
    out.scores.push_back(score);
    out.features.push_back(std::move(feats));
  }
  return out;
}

void append(DiscriminatorOutput& dst, DiscriminatorOutput&& src) {
  for (auto& s : src.scores) dst.scores.push_back(std::move(s));
  for (auto& f : src.features) dst.features.push_back(std::move(f));
}

}  // namespace

DiscriminatorOutput DiscriminatorImpl::mpd_forward(const torch::Tensor& wav) {
  TSSE_CHECK(wav.dim() == 2 && wav.size(1) >= cfg_.min_length(), ErrorKind::kInvalidArgument,
             "discriminator input shorter than " + std::to_string(cfg_.min_length()) + " samples");
  return run_subs(mpd_, wav);
}

DiscriminatorOutput DiscriminatorImpl::mrd_forward(const torch::Tensor& wav) {
  TSSE_CHECK(wav.dim() == 2 && wav.size(1) >= cfg_.min_length(), ErrorKind::kInvalidArgument,
             "discriminator input shorter than " + std::to_string(cfg_.min_length()) + " samples");
  return run_subs(mrd_, wav);
}

DiscriminatorOutput DiscriminatorImpl::mbd_forward(const torch::Tensor& wav) {
  TSSE_CHECK(wav.dim() == 2 && wav.size(1) >= cfg_.min_length(), ErrorKind::kInvalidArgument,
             "discriminator input shorter than " + std::to_string(cfg_.min_length()) + " samples");
  return run_subs(mbd_, wav);
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& wav) {
  DiscriminatorOutput out;
  append(out, mpd_forward(wav));
  append(out, mrd_forward(wav));
  append(out, mbd_forward(wav));
  return out;
}

// ---------------------------------------------------------------------------
// Bundle

nlohmann::json to_json(const BundleConfig& c) {
  return {{"fill", to_json(c.fill)},
          {"sep", to_json(c.sep)},
          {"res", to_json(c.res)},
          {"with_finetuned_res", c.with_finetuned_res}};
}

BundleConfig bundle_config_from_json(const nlohmann::json& j) {
  TSSE_CHECK(j.is_object(), ErrorKind::kConfiguration, "bundle config must be an object");
  BundleConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "fill") c.fill = gridnet_config_from_json(v);
    else if (key == "sep") c.sep = gridnet_config_from_json(v);
    else if (key == "res") c.res = gridnet_config_from_json(v);
    else if (key == "with_finetuned_res") {
      TSSE_CHECK(v.is_boolean(), ErrorKind::kConfiguration, "with_finetuned_res must be a boolean");
      c.with_finetuned_res = v.get<bool>();
    } else {
      throw Error(ErrorKind::kConfiguration, "unknown bundle key '" + key + "'");
    }
  }
  return c;
}

ModelBundle ModelBundle::build(const BundleConfig& cfg) {
  ModelBundle b;
  b.cfg = cfg;
  b.fill = build_stage_net(StageNetKind::kFill, cfg.fill);
  b.sep = build_stage_net(StageNetKind::kSep, cfg.sep);
  b.res = build_stage_net(StageNetKind::kRes, cfg.res);
  if (cfg.with_finetuned_res) b.res_finetuned = build_stage_net(StageNetKind::kRes, cfg.res);
  return b;
}

void ModelBundle::eval() {
  for (auto* n : {&fill, &sep, &res, &res_finetuned})
    if (*n) (*n)->eval();
}

void ModelBundle::to(torch::Dtype dtype) {
  for (auto* n : {&fill, &sep, &res, &res_finetuned})
    if (*n) (*n)->to(dtype);
}

ModelBundle::Counts ModelBundle::parameter_counts() const {
  Counts c;
  c.fill = count_parameters(*fill);
  c.sep = count_parameters(*sep);
  c.res = count_parameters(*res);
  if (res_finetuned) c.res_finetuned = count_parameters(*res_finetuned);
  return c;
}

ModelBundle::Counts bundle_param_counts(const BundleConfig& cfg) {
  ModelBundle::Counts c;
  c.fill = gridnet_param_count(cfg.fill, 2, 2);
  c.sep = gridnet_param_count(cfg.sep, 2, 2);
  c.res = gridnet_param_count(cfg.res, 2 * kCwsBands, 2 * kCwsBands);
  if (cfg.with_finetuned_res) c.res_finetuned = c.res;
  return c;
}

namespace {

struct StageMacs {
  double fill, sep, res;
};

StageMacs stage_macs(const BundleConfig& cfg, int fs, double duration_s) {
  require_supported_rate(fs);
  TSSE_CHECK(duration_s > 0.0, ErrorKind::kInvalidArgument, "duration must be positive");
  const auto native = StftConfig::for_rate(fs);
  const int64_t t = native.num_frames(std::llround(duration_s * fs));
  const int64_t f = native.num_bins();
  const auto full = StftConfig::for_rate(kCwsRate);
  const int64_t t48 = full.num_frames(std::llround(duration_s * kCwsRate));
  const auto edges = cws_band_edges(full.num_bins());
  int64_t fb = 0;
  for (int b = 0; b < kCwsBands; ++b) fb = std::max(fb, edges[b + 1] - edges[b]);
  return {gridnet_macs(cfg.fill, 2, 2, t, f), gridnet_macs(cfg.sep, 2, 2, t, f),
          gridnet_macs(cfg.res, 2 * kCwsBands, 2 * kCwsBands, t48, fb)};
}

}  // namespace

double bundle_macs_per_second(const BundleConfig& cfg, int fs, double duration_s) {
  const auto m = stage_macs(cfg, fs, duration_s);
  return (m.fill + m.sep + m.res) / duration_s;
}

std::string budget_report(const BundleConfig& cfg, double duration_s) {
  const auto counts = bundle_param_counts(cfg);
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "parameters (M)\n";
  os << "  fill           " << counts.fill / 1e6 << "\n";
  os << "  sep            " << counts.sep / 1e6 << "\n";
  os << "  res            " << counts.res / 1e6 << "\n";
  if (cfg.with_finetuned_res) os << "  res_finetuned  " << counts.res_finetuned / 1e6 << "\n";
  os << "  total          " << counts.total() / 1e6 << "\n";
  os.precision(1);
  os << "MACs per second of audio (G), " << duration_s << " s utterance\n";
  for (int fs : {16000, 48000}) {
    const auto m = stage_macs(cfg, fs, duration_s);
    os << "  " << fs << " Hz: fill " << m.fill / duration_s / 1e9 << ", sep " << m.sep / duration_s / 1e9
       << ", res " << m.res / duration_s / 1e9 << ", total " << (m.fill + m.sep + m.res) / duration_s / 1e9
       << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_modules(const std::filesystem::path& file, const NamedModules& modules, const nlohmann::json& meta,
                  const NamedOptimizers& optimizers) {
  torch::serialize::OutputArchive archive;
  archive.write("format_version", c10::IValue(static_cast<int64_t>(kCheckpointFormat)));
  archive.write("meta", c10::IValue(meta.dump()));
  for (const auto& [name, module] : modules) {
    torch::serialize::OutputArchive sub;
    module->save(sub);
    archive.write("module." + name, sub);
  }
  for (const auto& [name, optim] : optimizers) {
    torch::serialize::OutputArchive sub;
    optim->save(sub);
    archive.write("optim." + name, sub);
  }
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  // write-then-rename keeps an existing checkpoint intact if saving fails
  auto tmp = file;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  std::filesystem::rename(tmp, file);
}

namespace {

torch::serialize::InputArchive open_archive(const std::filesystem::path& file) {
  TSSE_CHECK(std::filesystem::exists(file), ErrorKind::kConfiguration, "checkpoint not found: " + file.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(file.string());
  } catch (const c10::Error& e) {
    throw Error(ErrorKind::kConfiguration, "unreadable checkpoint " + file.string());
  }
  c10::IValue version;
  TSSE_CHECK(archive.try_read("format_version", version) && version.isInt() &&
                 version.toInt() == kCheckpointFormat,
             ErrorKind::kConfiguration, "checkpoint " + file.string() + " has an unsupported format version");
  return archive;
}

nlohmann::json archive_meta(torch::serialize::InputArchive& archive) {
  c10::IValue meta;
  TSSE_CHECK(archive.try_read("meta", meta) && meta.isString(), ErrorKind::kConfiguration,
             "checkpoint has no metadata");
  return nlohmann::json::parse(meta.toStringRef());
}

}  // namespace

nlohmann::json load_modules(const std::filesystem::path& file, const NamedModules& modules,
                            const NamedOptimizers& optimizers) {
  auto archive = open_archive(file);
  for (const auto& [name, module] : modules) {
    torch::serialize::InputArchive sub;
    TSSE_CHECK(archive.try_read("module." + name, sub), ErrorKind::kConfiguration,
               "checkpoint " + file.string() + " lacks module '" + name + "'");
    try {
      module->load(sub);
    } catch (const c10::Error& e) {
      throw Error(ErrorKind::kConfiguration, "checkpoint module '" + name + "' does not match the network");
    }
  }
  for (const auto& [name, optim] : optimizers) {
    torch::serialize::InputArchive sub;
    TSSE_CHECK(archive.try_read("optim." + name, sub), ErrorKind::kConfiguration,
               "checkpoint " + file.string() + " lacks optimizer state '" + name + "'");
    optim->load(sub);
  }
  return archive_meta(archive);
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& file) {
  auto archive = open_archive(file);
  return archive_meta(archive);
}

namespace {

NamedModules bundle_modules(ModelBundle& b) {
  NamedModules m = {
      {"fill", b.fill.get()}, {"sep", b.sep.get()}, {"res", b.res.get()}};
  if (b.res_finetuned) m.emplace_back("res_finetuned", b.res_finetuned.get());
  return m;
}

}  // namespace

void save_bundle(const std::filesystem::path& file, ModelBundle& bundle) {
  save_modules(file, bundle_modules(bundle), {{"kind", "bundle"}, {"bundle", to_json(bundle.cfg)}});
}

ModelBundle load_bundle(const std::filesystem::path& file) {
  const auto meta = read_checkpoint_meta(file);
  TSSE_CHECK(meta.value("kind", "") == "bundle" && meta.contains("bundle"), ErrorKind::kConfiguration,
             file.string() + " is not a model bundle");
  auto bundle = ModelBundle::build(bundle_config_from_json(meta["bundle"]));
  load_modules(file, bundle_modules(bundle));
  bundle.eval();
  return bundle;
}

}  // namespace tsse
