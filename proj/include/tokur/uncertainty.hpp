#pragma once

/**
 * Token-level uncertainty decomposition and response-level aggregation.
 *
 * For each decoding step, M posterior samples yield M next-token
 * distributions. Total uncertainty is the entropy of their mean, aleatoric
 * uncertainty is the mean of their entropies, and epistemic uncertainty is
 * the difference — all in nats. Response-level scores are the cumulative
 * sums across the (teacher-forced) response, reported both raw and divided
 * by the response length.
 *
 * Scoring never influences generation: the response is fixed, and the
 * mean-weight pass that the internal-signal baselines read is computed
 * alongside the perturbed passes.
 */

#include <optional>
#include <vector>

#include "tokur/distribution.hpp"
#include "tokur/model.hpp"
#include "tokur/perturb.hpp"

namespace tokur::uncertainty {

struct ScoringConfig {
  int samples_m = 2;  // posterior samples per step
  perturb::SampleMode mode = perturb::SampleMode::stepwise;
  bool length_norm = false;  // which column downstream consumers read; both are computed
  double scoring_temperature = 1.0;
  int deepconf_k = 5;
  // Use every mixture component as a posterior sample instead of drawing M
  // of them. Only meaningful for models with an enumerable posterior.
  bool exact_mixture = false;

  void validate() const;
};

struct TokenUncertainty {
  double tu = 0.0;
  double au = 0.0;
  double eu = 0.0;  // tu - au, by definition
  DistributionVector mean_distribution;  // arithmetic mean of the samples
  // Log-probability of the chosen token under the mean-weight policy; filled
  // by score_response, not by token_uncertainties.
  double chosen_logprob = 0.0;
  bool ll_floored = false;
};

struct BaselineScores {
  double ll = 0.0;
  double pe = 0.0;
  double self_certainty = 0.0;
  double deepconf = 0.0;
  // Unnormalized counterparts (sums over steps).
  double ll_sum = 0.0;
  double pe_sum = 0.0;
  double self_certainty_sum = 0.0;
  double deepconf_sum = 0.0;
  std::vector<int> ll_floored_steps;
};

struct ResponseScore {
  std::vector<TokenUncertainty> tokens;
  int length = 0;  // T
  double tu_sum = 0.0, au_sum = 0.0, eu_sum = 0.0;
  double tu_norm = 0.0, au_norm = 0.0, eu_norm = 0.0;
  BaselineScores baselines;
};

// Entropy in nats with the 0*ln(0)=0 convention.
double entropy_nats(const DistributionVector& dist);

// Selfcheck mutation hook: flips entropy_nats to log base 2 so the
// cross-oracle checks must fail. Never set outside fault-injection runs.
namespace faulthook {
void set_entropy_log2(bool enabled);
bool entropy_log2();
}  // namespace faulthook

// Eq. of the decomposition: TU from the mean distribution, AU as the mean
// entropy, EU as their difference. Bitwise-identical samples short-circuit
// so EU is exactly zero in the M=1 / all-identical cases.
TokenUncertainty token_uncertainties(const std::vector<DistributionVector>& samples);

// Internal-signal baselines from the mean-weight trace. Chosen tokens with
// zero probability contribute the floor value -745 and are flagged.
BaselineScores baseline_scores(const std::vector<DistributionVector>& mean_dists,
                               const TokenSeq& chosen, int deepconf_k);

/**
 * Teacher-forced scoring of one response.
 *
 * At step t the model is conditioned on prompt + response[0..t). Posterior
 * samples are keyed by (resp, step, sample, layer); joint mode drops the
 * step label so one draw persists across the response. cache == nullptr (or
 * an empty target list) scores without perturbation, which makes EU exactly
 * zero. When `record` is non-null the per-step sample distributions are
 * captured for offline re-scoring.
 */
ResponseScore score_response(const model::PolicyModel& policy,
                             const perturb::PosteriorCache* cache,
                             const perturb::PerturbationSpec* spec, const TokenSeq& prompt,
                             const TokenSeq& response, const ScoringConfig& config,
                             std::uint64_t response_key,
                             model::RecordedTrace* record = nullptr);

// Offline counterpart: rescores a recorded trace; equal to the online scores
// that produced it.
ResponseScore score_recorded(const model::RecordedTrace& trace, const ScoringConfig& config);

struct QueryUncertainty {
  double tu = 0.0;
  double au = 0.0;
  double eu = 0.0;
};

// Exact query-level uncertainty of a tabular mixture by exhaustive prefix
// enumeration under the mean policy: sum over steps of the prefix-weighted
// token-level uncertainties. The oracle side of the unbiasedness property.
QueryUncertainty query_level_uncertainty_exact(const model::TabularMixtureModel& mixture,
                                               const TokenSeq& prompt, int horizon,
                                               double temperature = 1.0);

}  // namespace tokur::uncertainty
