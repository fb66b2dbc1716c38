// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/losses.hpp"

#include <cmath>
#include <mutex>
#include <numbers>
#include <tuple>

#include "tsse/error.hpp"
#include "tsse/rng.hpp"

namespace tsse {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  TSSE_CHECK(a.defined() && b.defined() && a.sizes() == b.sizes(), ErrorKind::kShapeMismatch,
             std::string(what) + ": operands must have equal shapes");
}

/// |z| floored at eps; the floor has zero gradient, so exact zeros stay finite.
torch::Tensor safe_mag(const torch::Tensor& z) {
  auto p = torch::real(z).pow(2) + torch::imag(z).pow(2);
  return p.clamp_min(kLossEps * kLossEps).sqrt();
}

/// sqrt with a zero gradient at 0.
torch::Tensor safe_sqrt(const torch::Tensor& x) {
  auto pos = x > 0;
  return torch::where(pos, torch::where(pos, x, torch::ones_like(x)).sqrt(), torch::zeros_like(x));
}

torch::Tensor as_batch(const torch::Tensor& x) { return x.dim() == 1 ? x.unsqueeze(0) : x; }

}  // namespace

torch::Tensor sdr_loss(const torch::Tensor& s, const torch::Tensor& s_hat) {
  require_same_shape(s, s_hat, "sdr_loss");
  auto num = s.pow(2).sum(-1);
  TSSE_CHECK((num > 0).all().item<bool>(), ErrorKind::kDegenerateReference, "sdr_loss: reference has zero power");
  auto den = (s - s_hat).pow(2).sum(-1) + kLossEps;
  return (torch::log10(den) - torch::log10(num)).mean();
}

torch::Tensor lsd_loss(const torch::Tensor& S, const torch::Tensor& S_hat) {
  require_same_shape(S, S_hat, "lsd_loss");
  auto r = torch::log10(safe_mag(S)) - torch::log10(safe_mag(S_hat));
  return safe_sqrt(r.pow(2).mean(-1)).mean();
}

torch::Tensor mag_loss(const torch::Tensor& S, const torch::Tensor& S_hat) {
  require_same_shape(S, S_hat, "mag_loss");
  return (safe_mag(S).pow(0.3) - safe_mag(S_hat).pow(0.3)).pow(2).mean();
}

torch::Tensor phase_real_loss(const torch::Tensor& S, const torch::Tensor& S_hat) {
  require_same_shape(S, S_hat, "phase_real_loss");
  return (torch::real(S) / safe_mag(S).pow(0.7) - torch::real(S_hat) / safe_mag(S_hat).pow(0.7)).pow(2).mean();
}

torch::Tensor phase_imag_loss(const torch::Tensor& S, const torch::Tensor& S_hat) {
  require_same_shape(S, S_hat, "phase_imag_loss");
  return (torch::imag(S) / safe_mag(S).pow(0.7) - torch::imag(S_hat) / safe_mag(S_hat).pow(0.7)).pow(2).mean();
}

// ---------------------------------------------------------------------------

namespace {

struct WeightField {
  const char* key;
  double LossWeights::*field;
};

constexpr WeightField kWeightFields[] = {
    {"sdr", &LossWeights::sdr},       {"lsd", &LossWeights::lsd},         {"mag", &LossWeights::mag},
    {"real", &LossWeights::real},     {"imag", &LossWeights::imag},       {"mcd", &LossWeights::mcd},
    {"pesq", &LossWeights::pesq},     {"utmos", &LossWeights::utmos},     {"dnsmos", &LossWeights::dnsmos},
    {"wavlm", &LossWeights::wavlm},   {"recon", &LossWeights::recon},     {"adv", &LossWeights::adv},
    {"feat", &LossWeights::feat},     {"jft_l2", &LossWeights::jft_l2},   {"jft_adv", &LossWeights::jft_adv},
    {"jft_feat", &LossWeights::jft_feat},
};

}  // namespace

void LossWeights::validate() const {
  for (const auto& f : kWeightFields)
    TSSE_CHECK(std::isfinite(this->*f.field) && this->*f.field >= 0.0, ErrorKind::kInvalidArgument,
               std::string("loss weight '") + f.key + "' must be finite and non-negative");
}

nlohmann::json to_json(const LossWeights& w) {
  nlohmann::json j;
  for (const auto& f : kWeightFields) j[f.key] = w.*f.field;
  return j;
}

LossWeights loss_weights_from_json(const nlohmann::json& j, LossWeights base) {
  TSSE_CHECK(j.is_object(), ErrorKind::kConfiguration, "loss weights must be an object");
  for (const auto& [key, v] : j.items()) {
    bool found = false;
    for (const auto& f : kWeightFields) {
      if (key == f.key) {
        TSSE_CHECK(v.is_number(), ErrorKind::kConfiguration, "loss weight '" + key + "' must be a number");
        base.*f.field = v.get<double>();
        found = true;
      }
    }
    TSSE_CHECK(found, ErrorKind::kConfiguration, "unknown loss weight '" + key + "'");
  }
  try {
    base.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfiguration, e.what());
  }
  return base;
}

void LossReport::add(const std::string& name, torch::Tensor value, double weight) {
  auto weighted = value * weight;
  total = total.defined() ? total + weighted : weighted;
  terms.push_back({name, std::move(value), weight});
}

bool LossReport::has(const std::string& name) const {
  for (const auto& t : terms)
    if (t.name == name) return true;
  return false;
}

double LossReport::value(const std::string& name) const {
  for (const auto& t : terms)
    if (t.name == name) return t.value.item<double>();
  auto it = details.find(name);
  TSSE_CHECK(it != details.end(), ErrorKind::kInvalidArgument, "loss report has no term '" + name + "'");
  return it->second;
}

std::map<std::string, double> LossReport::flatten() const {
  std::map<std::string, double> out = details;
  for (const auto& t : terms) out[t.name] = t.value.item<double>();
  out["total"] = total_value();
  return out;
}

LossReport l1_composite(const torch::Tensor& s, const torch::Tensor& s_hat, const StftConfig& cfg,
                        const LossWeights& w) {
  require_same_shape(s, s_hat, "l1_composite");
  const auto S = stft(s, cfg), S_hat = stft(s_hat, cfg);
  LossReport r;
  r.add("sdr", sdr_loss(s, s_hat), w.sdr);
  r.add("lsd", lsd_loss(S, S_hat), w.lsd);
  r.add("mag", mag_loss(S, S_hat), w.mag);
  r.add("real", phase_real_loss(S, S_hat), w.real);
  r.add("imag", phase_imag_loss(S, S_hat), w.imag);
  return r;
}

// ---------------------------------------------------------------------------

torch::Tensor mel_filterbank(int n_mels, int n_fft, int fs, double fmin, double fmax) {
  if (fmax <= 0.0) fmax = fs / 2.0;
  TSSE_CHECK(n_mels > 0 && n_fft > 0 && fmin >= 0.0 && fmin < fmax && fmax <= fs / 2.0,
             ErrorKind::kInvalidArgument, "invalid mel filterbank parameters");
  static std::mutex mu;
  static std::map<std::tuple<int, int, int, double, double>, torch::Tensor> cache;
  const auto key = std::make_tuple(n_mels, n_fft, fs, fmin, fmax);
  std::lock_guard lock(mu);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const int bins = n_fft / 2 + 1;
  std::vector<double> edges(n_mels + 2);
  const double m0 = hz_to_mel(fmin), m1 = hz_to_mel(fmax);
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(m0 + (m1 - m0) * i / (n_mels + 1));
  auto fb = torch::zeros({n_mels, bins}, torch::kFloat64);
  auto acc = fb.accessor<double, 2>();
  for (int m = 0; m < n_mels; ++m) {
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * fs / n_fft;
      const double up = (f - edges[m]) / (edges[m + 1] - edges[m]);
      const double down = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
      acc[m][k] = std::max(0.0, std::min(up, down));
    }
  }
  cache.emplace(key, fb);
  return fb;
}

torch::Tensor dct_matrix(int n_in, int n_out) {
  TSSE_CHECK(n_out > 0 && n_out <= n_in, ErrorKind::kInvalidArgument, "invalid DCT size");
  auto m = torch::empty({n_in, n_out}, torch::kFloat64);
  auto acc = m.accessor<double, 2>();
  for (int i = 0; i < n_in; ++i) {
    for (int k = 0; k < n_out; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / n_in) : std::sqrt(2.0 / n_in);
      acc[i][k] = scale * std::cos(std::numbers::pi * k * (i + 0.5) / n_in);
    }
  }
  return m;
}

namespace {

/// Mel power [..., T, n_mels] of a waveform.
torch::Tensor mel_power(const torch::Tensor& wav, int fs, const StftConfig& cfg, int n_mels) {
  auto S = stft(wav, cfg);
  auto p = torch::real(S).pow(2) + torch::imag(S).pow(2);
  auto fb = mel_filterbank(n_mels, cfg.n_fft, fs).to(p.scalar_type()).to(p.device());
  return torch::matmul(p, fb.t());
}

}  // namespace

torch::Tensor mfcc(const torch::Tensor& wav, int fs, const StftConfig& cfg, const MfccConfig& mc) {
  TSSE_CHECK(wav.size(-1) >= cfg.win_length, ErrorKind::kInvalidArgument,
             "MFCC input shorter than one analysis frame");
  auto logmel = torch::log(mel_power(wav, fs, cfg, mc.n_mels) + kLossEps);
  auto dct = dct_matrix(mc.n_mels, mc.n_mfcc).to(logmel.scalar_type()).to(logmel.device());
  return torch::matmul(logmel, dct);
}

torch::Tensor mcd_aware_loss(const torch::Tensor& s, const torch::Tensor& s_hat, int fs, const StftConfig& cfg,
                             const MfccConfig& mc) {
  require_same_shape(s, s_hat, "mcd_aware_loss");
  return (mfcc(s, fs, cfg, mc) - mfcc(s_hat, fs, cfg, mc)).pow(2).mean();
}

torch::Tensor wavlm_distill_loss(const torch::Tensor& R, const torch::Tensor& R_hat) {
  require_same_shape(R, R_hat, "wavlm_distill_loss");
  TSSE_CHECK(R.dim() >= 2, ErrorKind::kShapeMismatch, "features must be [..., T, D]");
  const double T = static_cast<double>(R.size(-2)), D = static_cast<double>(R.size(-1));
  auto dot = (R * R_hat).sum(-2);
  auto nr = R.pow(2).sum(-2).clamp_min(kLossEps * kLossEps).sqrt();
  auto nh = R_hat.pow(2).sum(-2).clamp_min(kLossEps * kLossEps).sqrt();
  auto cos = dot / (nr * nh);                                          // [..., D]
  auto per_item = T * torch::log_sigmoid(cos).sum(-1) / std::log(10.0);  // sum over t and d
  return (-per_item / (T * D)).mean();
}

// ---------------------------------------------------------------------------

std::string to_string(MetricTerm t) {
  switch (t) {
    case MetricTerm::kMcd: return "mcd";
    case MetricTerm::kPesq: return "pesq";
    case MetricTerm::kUtmos: return "utmos";
    case MetricTerm::kDnsmos: return "dnsmos";
    case MetricTerm::kWavlm: return "wavlm";
  }
  return "unknown";
}

MetricTerm metric_term_from_string(const std::string& name) {
  for (auto t : {MetricTerm::kMcd, MetricTerm::kPesq, MetricTerm::kUtmos, MetricTerm::kDnsmos, MetricTerm::kWavlm})
    if (to_string(t) == name) return t;
  throw Error(ErrorKind::kInvalidArgument, "unknown metric-aware term '" + name + "'");
}

std::set<MetricTerm> maft_terms(int version) {
  TSSE_CHECK(version >= 1 && version <= 5, ErrorKind::kInvalidArgument, "MAFT version must be 1..5");
  const MetricTerm order[] = {MetricTerm::kMcd, MetricTerm::kPesq, MetricTerm::kUtmos, MetricTerm::kDnsmos,
                              MetricTerm::kWavlm};
  return std::set<MetricTerm>(order, order + version);
}

namespace {

constexpr int kScorerMels = 40;

torch::Tensor seeded_normal(uint64_t seed, std::vector<int64_t> shape, double scale) {
  Rng rng(seed);
  int64_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = scale * rng.normal();
  return torch::tensor(v, torch::kFloat64).view(shape);
}

/// Per-utterance mean-removed log-mel, [B, T, M].
torch::Tensor normalized_logmel(const torch::Tensor& wav, int fs) {
  auto lm = torch::log(mel_power(as_batch(wav), fs, StftConfig::for_rate(fs), kScorerMels) + 1e-6);
  return lm - lm.mean({-2, -1}, true);
}

class PesqStandin : public MetricScorer {
 public:
  PesqStandin() : band_weights_(torch::softmax(seeded_normal(0x9e50, {kScorerMels}, 0.5), 0)) {}
  std::string name() const override { return "pesq"; }
  bool reference_free() const override { return false; }

  torch::Tensor score(const torch::Tensor& s_hat, const torch::Tensor* ref, int fs) const override {
    TSSE_CHECK(ref && ref->defined(), ErrorKind::kInvalidArgument, "pesq scorer requires a reference signal");
    require_same_shape(*ref, s_hat, "pesq scorer");
    const auto cfg = StftConfig::for_rate(fs);
    auto x = as_batch(*ref), y = as_batch(s_hat);
    auto p_ref = mel_power(x, fs, cfg, kScorerMels);
    auto diff = stft(y, cfg) - stft(x, cfg);
    auto fb = mel_filterbank(kScorerMels, cfg.n_fft, fs).to(y.scalar_type());
    auto p_err = torch::matmul(torch::real(diff).pow(2) + torch::imag(diff).pow(2), fb.t());
    auto level = p_ref + 1e-3 * p_ref.mean({-2, -1}, true) + kLossEps;
    auto d = torch::log1p(p_err / level);
    auto z = (d * band_weights_.to(y.scalar_type())).sum(-1).mean(-1);
    return 1.0 + 3.5 * torch::exp(-z);
  }

 private:
  torch::Tensor band_weights_;
};

class MlpMosStandin : public MetricScorer {
 public:
  MlpMosStandin(std::string name, uint64_t seed, int hidden)
      : name_(std::move(name)),
        w1_(seeded_normal(seed, {kScorerMels, hidden}, 1.0 / std::sqrt(kScorerMels))),
        b1_(seeded_normal(seed + 1, {hidden}, 0.1)),
        w2_(seeded_normal(seed + 2, {hidden, 1}, 1.0 / std::sqrt(hidden))) {}
  std::string name() const override { return name_; }
  bool reference_free() const override { return true; }

  torch::Tensor score(const torch::Tensor& s_hat, const torch::Tensor*, int fs) const override {
    auto x = normalized_logmel(s_hat, fs);
    const auto dt = x.scalar_type();
    auto h = torch::tanh(torch::matmul(x, w1_.to(dt)) + b1_.to(dt));
    auto z = torch::matmul(h, w2_.to(dt)).squeeze(-1).mean(-1);
    return 3.0 + 1.5 * torch::tanh(z);
  }

 private:
  std::string name_;
  torch::Tensor w1_, b1_, w2_;
};

class LogMelExtractor : public FeatureExtractor {
 public:
  LogMelExtractor()
      : w_(seeded_normal(0x3a7f, {kScorerMels, 32}, 1.0 / std::sqrt(kScorerMels))),
        b_(seeded_normal(0x3a80, {32}, 0.1)) {}
  std::string name() const override { return "wavlm-standin"; }
  torch::Tensor features(const torch::Tensor& wav, int fs) const override {
    auto x = normalized_logmel(wav, fs);
    return torch::tanh(torch::matmul(x, w_.to(x.scalar_type())) + b_.to(x.scalar_type()));
  }

 private:
  torch::Tensor w_, b_;
};

}  // namespace

std::shared_ptr<MetricScorer> make_standin_scorer(MetricTerm term) {
  switch (term) {
    case MetricTerm::kPesq: return std::make_shared<PesqStandin>();
    case MetricTerm::kUtmos: return std::make_shared<MlpMosStandin>("utmos", 0x0705, 16);
    case MetricTerm::kDnsmos: return std::make_shared<MlpMosStandin>("dnsmos", 0xd05, 24);
    default: throw Error(ErrorKind::kInvalidArgument, "no scorer for term '" + to_string(term) + "'");
  }
}

std::shared_ptr<FeatureExtractor> make_standin_extractor() { return std::make_shared<LogMelExtractor>(); }

ScorerSet ScorerSet::standins() {
  static const ScorerSet set{make_standin_scorer(MetricTerm::kPesq), make_standin_scorer(MetricTerm::kUtmos),
                             make_standin_scorer(MetricTerm::kDnsmos), make_standin_extractor()};
  return set;
}

torch::Tensor scored_metric_loss(const MetricScorer& scorer, const torch::Tensor& s_hat, const torch::Tensor* s,
                                 int fs) {
  TSSE_CHECK(scorer.reference_free() || (s && s->defined()), ErrorKind::kInvalidArgument,
             "scorer '" + scorer.name() + "' is intrusive and needs the clean reference");
  return -scorer.score(s_hat, scorer.reference_free() ? nullptr : s, fs).mean();
}

LossReport l2_metric_aware(const torch::Tensor& s, const torch::Tensor& s_hat, int fs, const StftConfig& cfg,
                           const std::set<MetricTerm>& enabled, const LossWeights& w, const ScorerSet& scorers) {
  auto l1 = l1_composite(s, s_hat, cfg, w);
  LossReport r;
  r.add("l1", l1.total, 1.0);
  for (const auto& t : l1.terms) r.details["l1." + t.name] = t.value.item<double>();
  auto need = [&](const auto& ptr, MetricTerm t) {
    TSSE_CHECK(ptr != nullptr, ErrorKind::kConfiguration, "no scorer registered for '" + to_string(t) + "'");
  };
  for (MetricTerm t : enabled) {
    switch (t) {
      case MetricTerm::kMcd: r.add("mcd", mcd_aware_loss(s, s_hat, fs, cfg), w.mcd); break;
      case MetricTerm::kPesq:
        need(scorers.pesq, t);
        r.add("pesq", scored_metric_loss(*scorers.pesq, s_hat, &s, fs), w.pesq);
        break;
      case MetricTerm::kUtmos:
        need(scorers.utmos, t);
        r.add("utmos", scored_metric_loss(*scorers.utmos, s_hat, nullptr, fs), w.utmos);
        break;
      case MetricTerm::kDnsmos:
        need(scorers.dnsmos, t);
        r.add("dnsmos", scored_metric_loss(*scorers.dnsmos, s_hat, nullptr, fs), w.dnsmos);
        break;
      case MetricTerm::kWavlm:
        need(scorers.wavlm, t);
        r.add("wavlm",
              wavlm_distill_loss(scorers.wavlm->features(s, fs).detach(), scorers.wavlm->features(s_hat, fs)),
              w.wavlm);
        break;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

GanTerms gan_losses(const DiscriminatorOutput& real, const DiscriminatorOutput& fake) {
  TSSE_CHECK(!real.scores.empty() && real.scores.size() == fake.scores.size() &&
                 real.features.size() == fake.features.size() && real.features.size() == real.scores.size(),
             ErrorKind::kShapeMismatch, "gan_losses: sub-discriminator lists differ");
  const double k = static_cast<double>(real.scores.size());
  torch::Tensor adv_g, adv_d, feat;
  auto acc = [](torch::Tensor& sum, const torch::Tensor& v) { sum = sum.defined() ? sum + v : v; };
  for (std::size_t i = 0; i < real.scores.size(); ++i) {
    acc(adv_g, (fake.scores[i] - 1).pow(2).mean());
    acc(adv_d, (real.scores[i] - 1).pow(2).mean() + fake.scores[i].pow(2).mean());
    const auto& fr = real.features[i];
    const auto& ff = fake.features[i];
    TSSE_CHECK(!fr.empty() && fr.size() == ff.size(), ErrorKind::kShapeMismatch,
               "gan_losses: feature lists differ for sub-discriminator " + std::to_string(i));
    torch::Tensor layer_sum;
    for (std::size_t l = 0; l < fr.size(); ++l) {
      require_same_shape(fr[l], ff[l], "feature matching");
      acc(layer_sum, (fr[l] - ff[l]).abs().mean());
    }
    acc(feat, layer_sum / static_cast<double>(fr.size()));
  }
  return {adv_g / k, adv_d / k, feat / k};
}

torch::Tensor mel_recon_loss(const torch::Tensor& s, const torch::Tensor& s_hat, int fs) {
  require_same_shape(s, s_hat, "mel_recon_loss");
  constexpr std::pair<int, int> kResolutions[] = {{512, 128}, {1024, 256}, {2048, 512}};
  torch::Tensor sum;
  for (const auto& [n_fft, hop] : kResolutions) {
    const auto cfg = StftConfig::custom(n_fft, hop);
    auto a = torch::log(mel_power(s, fs, cfg, 64) + 1e-5);
    auto b = torch::log(mel_power(s_hat, fs, cfg, 64) + 1e-5);
    auto l = (a - b).abs().mean();
    sum = sum.defined() ? sum + l : l;
  }
  return sum / 3.0;
}

LossReport gan_generator_loss(const torch::Tensor& s, const torch::Tensor& s_hat, int fs, const GanTerms& gan,
                              const LossWeights& w) {
  LossReport r;
  r.add("recon", mel_recon_loss(s, s_hat, fs), w.recon);
  r.add("adv", gan.adv_g, w.adv);
  r.add("feat", gan.feat, w.feat);
  return r;
}

LossReport l3_jft(const LossReport& l2, const GanTerms& gan, const LossWeights& w) {
  LossReport r;
  r.add("l2", l2.total, w.jft_l2);
  r.add("adv", gan.adv_g, w.jft_adv);
  r.add("feat", gan.feat, w.jft_feat);
  for (const auto& t : l2.terms) r.details["l2." + t.name] = t.value.item<double>();
  for (const auto& [k, v] : l2.details) r.details["l2." + k] = v;
  return r;
}

LossReport l3_jft(const torch::Tensor& s, const torch::Tensor& s_hat, int fs, const StftConfig& cfg,
                  const std::set<MetricTerm>& enabled, const GanTerms& gan, const LossWeights& w,
                  const ScorerSet& scorers) {
  return l3_jft(l2_metric_aware(s, s_hat, fs, cfg, enabled, w, scorers), gan, w);
}

}  // namespace tsse
