// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "tsse/nets.hpp"
#include "tsse/stft.hpp"

namespace tsse {

/// Floor for magnitudes, powers and norms in every loss.
inline constexpr double kLossEps = 1e-8;

// ---------------------------------------------------------------------------
// Waveform / spectrogram terms. Leading axes are batch axes; the result is the
// batch mean.

/// -log10(||s||^2 / (||s - s_hat||^2 + eps)) over the last axis.
torch::Tensor sdr_loss(const torch::Tensor& s, const torch::Tensor& s_hat);
/// Per-frame RMS over frequency of log10(|S| / |S_hat|), averaged over frames.
torch::Tensor lsd_loss(const torch::Tensor& S, const torch::Tensor& S_hat);
/// MSE of 0.3-power compressed magnitudes.
torch::Tensor mag_loss(const torch::Tensor& S, const torch::Tensor& S_hat);
/// MSE of S_r / |S|^0.7 (real) and S_i / |S|^0.7 (imag).
torch::Tensor phase_real_loss(const torch::Tensor& S, const torch::Tensor& S_hat);
torch::Tensor phase_imag_loss(const torch::Tensor& S, const torch::Tensor& S_hat);

struct LossWeights {
  double sdr = 2.0, lsd = 1.5, mag = 70.0, real = 30.0, imag = 30.0;
  double mcd = 0.004, pesq = 0.5, utmos = 0.5, dnsmos = 0.4, wavlm = 2.5;
  double recon = 20.0, adv = 1.0, feat = 1.0;
  double jft_l2 = 10.0, jft_adv = 1.0, jft_feat = 0.2;

  void validate() const;
};

nlohmann::json to_json(const LossWeights& w);
/// Overrides the defaults with the keys present in `j`; unknown keys rejected.
LossWeights loss_weights_from_json(const nlohmann::json& j, LossWeights base = {});

struct LossTerm {
  std::string name;
  torch::Tensor value;  // scalar
  double weight = 1.0;
};

/// Weighted terms and their sum. `details` carries detached sub-term values
/// of nested composites for logging.
struct LossReport {
  std::vector<LossTerm> terms;
  torch::Tensor total;
  std::map<std::string, double> details;

  void add(const std::string& name, torch::Tensor value, double weight);
  double value(const std::string& name) const;
  bool has(const std::string& name) const;
  double total_value() const { return total.item<double>(); }
  /// Flat map: "total", each term, each detail.
  std::map<std::string, double> flatten() const;
};

LossReport l1_composite(const torch::Tensor& s, const torch::Tensor& s_hat, const StftConfig& cfg,
                        const LossWeights& w = {});

// ---------------------------------------------------------------------------
// Cepstral features

/// HTK-style triangular mel filterbank, [n_mels, n_fft/2 + 1].
torch::Tensor mel_filterbank(int n_mels, int n_fft, int fs, double fmin = 0.0, double fmax = 0.0);
/// Orthonormal DCT-II basis restricted to the first n_out coefficients, [n_in, n_out].
torch::Tensor dct_matrix(int n_in, int n_out);

struct MfccConfig {
  int n_mels = 80;
  int n_mfcc = 13;
};

/// [..., N] -> [..., T, n_mfcc]: power STFT, mel, natural log (eps-floored), DCT-II.
torch::Tensor mfcc(const torch::Tensor& wav, int fs, const StftConfig& cfg, const MfccConfig& mc = {});
/// MSE between MFCC matrices of s and s_hat.
torch::Tensor mcd_aware_loss(const torch::Tensor& s, const torch::Tensor& s_hat, int fs, const StftConfig& cfg,
                             const MfccConfig& mc = {});

/// -(1/(T D)) sum_t sum_d log10(sigmoid(cos_d)), cos_d the cosine between
/// dimension d of R and R_hat across time. R, R_hat: [..., T, D].
torch::Tensor wavlm_distill_loss(const torch::Tensor& R, const torch::Tensor& R_hat);

// ---------------------------------------------------------------------------
// Metric scorers

enum class MetricTerm { kMcd, kPesq, kUtmos, kDnsmos, kWavlm };
std::string to_string(MetricTerm t);
MetricTerm metric_term_from_string(const std::string& name);
/// MAFTv1..v5: progressively adds mcd, pesq, utmos, dnsmos, wavlm.
std::set<MetricTerm> maft_terms(int version);

class MetricScorer {
 public:
  virtual ~MetricScorer() = default;
  virtual std::string name() const = 0;
  virtual bool reference_free() const = 0;
  /// Per-utterance scores [B] for s_hat [B, N]; `ref` is required iff intrusive.
  virtual torch::Tensor score(const torch::Tensor& s_hat, const torch::Tensor* ref, int fs) const = 0;
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  /// [B, N] -> [B, T, D]
  virtual torch::Tensor features(const torch::Tensor& wav, int fs) const = 0;
};

/// Deterministic offline stand-ins: an intrusive mel-band disturbance score
/// (PESQ-like range 1..4.5) and two fixed-weight non-intrusive log-mel MLPs
/// (MOS-like range 1.5..4.5).
std::shared_ptr<MetricScorer> make_standin_scorer(MetricTerm term);
std::shared_ptr<FeatureExtractor> make_standin_extractor();

struct ScorerSet {
  std::shared_ptr<MetricScorer> pesq, utmos, dnsmos;
  std::shared_ptr<FeatureExtractor> wavlm;
  static ScorerSet standins();
};

/// -mean(score).
torch::Tensor scored_metric_loss(const MetricScorer& scorer, const torch::Tensor& s_hat, const torch::Tensor* s,
                                 int fs);

/// L1 plus the enabled metric-aware terms. Report components: "l1" (weight 1)
/// and one entry per enabled term.
LossReport l2_metric_aware(const torch::Tensor& s, const torch::Tensor& s_hat, int fs, const StftConfig& cfg,
                           const std::set<MetricTerm>& enabled, const LossWeights& w = {},
                           const ScorerSet& scorers = ScorerSet::standins());

// ---------------------------------------------------------------------------
// Adversarial terms

struct GanTerms {
  torch::Tensor adv_g;  // mean_k mean (D_k(fake) - 1)^2
  torch::Tensor adv_d;  // mean_k [mean (D_k(real) - 1)^2 + mean D_k(fake)^2]
  torch::Tensor feat;   // mean_k mean_l mean |f_real - f_fake|
};

/// Least-squares GAN objectives. Pass detached fake outputs for the
/// discriminator step and detached real features for the generator step.
GanTerms gan_losses(const DiscriminatorOutput& real, const DiscriminatorOutput& fake);

/// Multi-resolution log-mel L1 used as the GAN reconstruction term.
torch::Tensor mel_recon_loss(const torch::Tensor& s, const torch::Tensor& s_hat, int fs);

/// recon * mel_recon + adv * adv_g + feat * feat_match.
LossReport gan_generator_loss(const torch::Tensor& s, const torch::Tensor& s_hat, int fs, const GanTerms& gan,
                              const LossWeights& w = {});

/// jft_l2 * L2 + jft_adv * adv_g + jft_feat * feat_match.
LossReport l3_jft(const LossReport& l2, const GanTerms& gan, const LossWeights& w = {});
LossReport l3_jft(const torch::Tensor& s, const torch::Tensor& s_hat, int fs, const StftConfig& cfg,
                  const std::set<MetricTerm>& enabled, const GanTerms& gan, const LossWeights& w = {},
                  const ScorerSet& scorers = ScorerSet::standins());

}  // namespace tsse
