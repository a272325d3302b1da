#include "tokur/uncertainty.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

namespace tokur::uncertainty {

namespace faulthook {
namespace {
std::atomic<bool> g_entropy_log2{false};
}
void set_entropy_log2(bool enabled) { g_entropy_log2.store(enabled); }
bool entropy_log2() { return g_entropy_log2.load(); }
}  // namespace faulthook

void ScoringConfig::validate() const {
  if (samples_m < 1) throw_config("ScoringConfig: M must be >= 1");
  if (scoring_temperature <= 0.0)
    throw_config("ScoringConfig: scoring temperature must be positive");
  if (deepconf_k < 1) throw_config("ScoringConfig: deepconf_k must be >= 1");
}

double entropy_nats(const DistributionVector& dist) {
  double h = 0.0;
  if (faulthook::entropy_log2()) {
    for (double p : dist.p)
      if (p > 0.0) h -= p * std::log2(p);
    return h;
  }
  for (double p : dist.p)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

TokenUncertainty token_uncertainties(const std::vector<DistributionVector>& samples) {
  if (samples.empty()) throw_invalid("token_uncertainties: empty sample list");
  const int n = samples[0].size();
  for (const auto& s : samples) {
    if (s.size() != n) throw_invalid("token_uncertainties: sample sizes disagree");
    s.validate();
  }

  TokenUncertainty out;
  const bool all_identical = std::all_of(samples.begin() + 1, samples.end(),
                                         [&](const DistributionVector& s) {
                                           return s.p == samples[0].p;
                                         });
  if (all_identical) {
    // Mean of identical distributions is the distribution itself; computing
    // it this way keeps EU at exactly zero.
    out.mean_distribution = samples[0];
    out.tu = entropy_nats(out.mean_distribution);
    out.au = out.tu;
    out.eu = 0.0;
    return out;
  }

  std::vector<double> mean(n, 0.0);
  for (const auto& s : samples)
    for (int i = 0; i < n; ++i) mean[i] += s.p[i];
  const double inv_m = 1.0 / static_cast<double>(samples.size());
  for (double& x : mean) x *= inv_m;
  out.mean_distribution = DistributionVector(std::move(mean));

  out.tu = entropy_nats(out.mean_distribution);
  double au = 0.0;
  for (const auto& s : samples) au += entropy_nats(s);
  out.au = au * inv_m;
  out.eu = out.tu - out.au;
  return out;
}

namespace {

constexpr double kLogFloor = -745.0;  // below log(min positive double)

double log_or_floor(double p, bool* floored) {
  if (p > 0.0) return std::log(p);
  if (floored) *floored = true;
  return kLogFloor;
}

double deepconf_step(const DistributionVector& dist, int k) {
  const int n = dist.size();
  const int kk = std::min(k, n);
  // Top-k by probability, lower token id first on ties.
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::partial_sort(ids.begin(), ids.begin() + kk, ids.end(), [&](int a, int b) {
    if (dist[a] != dist[b]) return dist[a] > dist[b];
    return a < b;
  });
  double s = 0.0;
  for (int i = 0; i < kk; ++i) s += log_or_floor(dist[ids[i]], nullptr);
  return s / kk;
}

}  // namespace

BaselineScores baseline_scores(const std::vector<DistributionVector>& mean_dists,
                               const TokenSeq& chosen, int deepconf_k) {
  if (mean_dists.empty()) throw_invalid("baseline_scores: empty trace");
  if (mean_dists.size() != chosen.size())
    throw_invalid("baseline_scores: trace and chosen-token lengths disagree");

  BaselineScores b;
  const int t_count = static_cast<int>(mean_dists.size());
  for (int t = 0; t < t_count; ++t) {
    const auto& dist = mean_dists[t];
    if (chosen[t] < 0 || chosen[t] >= dist.size())
      throw_invalid("baseline_scores: chosen token out of range at step " + std::to_string(t));
    bool floored = false;
    b.ll_sum += log_or_floor(dist[chosen[t]], &floored);
    if (floored) b.ll_floored_steps.push_back(t);
    const double h = entropy_nats(dist);
    b.pe_sum += h;
    b.self_certainty_sum += std::log(static_cast<double>(dist.size())) - h;
    b.deepconf_sum += deepconf_step(dist, deepconf_k);
  }
  b.ll = b.ll_sum / t_count;
  b.pe = b.pe_sum / t_count;
  b.self_certainty = b.self_certainty_sum / t_count;
  b.deepconf = b.deepconf_sum / t_count;
  return b;
}

namespace {

void finalize_response(ResponseScore& score) {
  score.length = static_cast<int>(score.tokens.size());
  for (const auto& tok : score.tokens) {
    score.tu_sum += tok.tu;
    score.au_sum += tok.au;
    score.eu_sum += tok.eu;
  }
  score.tu_norm = score.tu_sum / score.length;
  score.au_norm = score.au_sum / score.length;
  score.eu_norm = score.eu_sum / score.length;
}

}  // namespace

ResponseScore score_response(const model::PolicyModel& policy,
                             const perturb::PosteriorCache* cache,
                             const perturb::PerturbationSpec* spec, const TokenSeq& prompt,
                             const TokenSeq& response, const ScoringConfig& config,
                             std::uint64_t response_key, model::RecordedTrace* record) {
  config.validate();
  if (response.empty()) throw_invalid("score_response: response must be nonempty");
  const double tau = config.scoring_temperature;
  const int n_components = policy.posterior_components();
  const bool perturbed = cache != nullptr && spec != nullptr && !cache->targets.empty();

  const RngKey resp_key =
      (spec ? spec->base_key : RngKey()).with("resp", response_key);

  ResponseScore score;
  std::vector<DistributionVector> mean_dists;
  mean_dists.reserve(response.size());
  TokenSeq prefix = prompt;
  prefix.reserve(prompt.size() + response.size());

  for (int t = 0; t < static_cast<int>(response.size()); ++t) {
    const DistributionVector mean_weight = policy.next_distribution(prefix, nullptr, tau);

    std::vector<DistributionVector> samples;
    if (n_components > 0) {
      if (config.exact_mixture) {
        for (int k = 0; k < n_components; ++k)
          samples.push_back(policy.component_distribution(prefix, k, tau));
      } else {
        for (int m = 0; m < config.samples_m; ++m) {
          RngKey k = resp_key;
          if (config.mode == perturb::SampleMode::stepwise)
            k = k.with("step", static_cast<std::uint64_t>(t));
          KeyedStream stream(k.with("sample", static_cast<std::uint64_t>(m)));
          const int comp = static_cast<int>(stream.next_below(n_components));
          samples.push_back(policy.component_distribution(prefix, comp, tau));
        }
      }
    } else if (perturbed) {
      for (int m = 0; m < config.samples_m; ++m) {
        RngKey k = resp_key;
        if (config.mode == perturb::SampleMode::stepwise)
          k = k.with("step", static_cast<std::uint64_t>(t));
        const perturb::PerturbationDelta delta =
            perturb::sample_delta(*cache, *spec, k.with("sample", static_cast<std::uint64_t>(m)));
        samples.push_back(policy.next_distribution(prefix, &delta, tau));
      }
    } else {
      // No posterior: every sample is the mean-weight distribution, so EU
      // is exactly zero.
      samples.assign(config.samples_m, mean_weight);
    }

    TokenUncertainty tok = token_uncertainties(samples);
    const TokenId chosen = response[t];
    if (chosen < 0 || chosen >= mean_weight.size())
      throw_invalid("score_response: response token out of range at step " + std::to_string(t));
    bool floored = false;
    tok.chosen_logprob = log_or_floor(mean_weight[chosen], &floored);
    tok.ll_floored = floored;
    score.tokens.push_back(std::move(tok));
    mean_dists.push_back(mean_weight);

    if (record) {
      model::RecordedStep step;
      step.chosen = chosen;
      step.mean_dist = mean_weight;
      step.sample_dists = samples;
      record->steps.push_back(std::move(step));
    }
    prefix.push_back(chosen);
  }

  finalize_response(score);
  score.baselines = baseline_scores(mean_dists, response, config.deepconf_k);
  return score;
}

ResponseScore score_recorded(const model::RecordedTrace& trace, const ScoringConfig& config) {
  config.validate();
  if (trace.steps.empty()) throw_invalid("score_recorded: trace has no steps");

  ResponseScore score;
  std::vector<DistributionVector> mean_dists;
  TokenSeq chosen;
  for (const auto& step : trace.steps) {
    TokenUncertainty tok = token_uncertainties(step.sample_dists);
    bool floored = false;
    if (step.chosen < 0 || step.chosen >= step.mean_dist.size())
      throw_data_format("recorded step has chosen token out of range");
    tok.chosen_logprob = log_or_floor(step.mean_dist[step.chosen], &floored);
    tok.ll_floored = floored;
    score.tokens.push_back(std::move(tok));
    mean_dists.push_back(step.mean_dist);
    chosen.push_back(step.chosen);
  }
  finalize_response(score);
  score.baselines = baseline_scores(mean_dists, chosen, config.deepconf_k);
  return score;
}

QueryUncertainty query_level_uncertainty_exact(const model::TabularMixtureModel& mixture,
                                               const TokenSeq& prompt, int horizon,
                                               double temperature) {
  if (horizon < 1) throw_invalid("query_level_uncertainty_exact: horizon must be >= 1");
  const int v = mixture.vocab().size;
  double universe = 1.0;
  for (int t = 0; t < horizon; ++t) universe *= v;
  if (universe > 1e5)
    throw_capacity("prefix universe " + std::to_string(static_cast<long long>(universe)) +
                   " too large to enumerate");
  if (static_cast<int>(prompt.size()) + horizon - 1 > mixture.max_context())
    throw_capacity("prompt plus horizon exceeds table depth");

  const int k_count = mixture.posterior_components();
  QueryUncertainty q;

  // Weighted prefixes under the mean policy, extended one step at a time.
  std::vector<std::pair<TokenSeq, double>> level = {{prompt, 1.0}};
  for (int t = 0; t < horizon; ++t) {
    std::vector<std::pair<TokenSeq, double>> next;
    for (const auto& [prefix, weight] : level) {
      const DistributionVector mean = mixture.next_distribution(prefix, nullptr, temperature);
      double au = 0.0;
      for (int k = 0; k < k_count; ++k)
        au += entropy_nats(mixture.component_distribution(prefix, k, temperature));
      au /= k_count;
      const double tu = entropy_nats(mean);
      q.tu += weight * tu;
      q.au += weight * au;
      q.eu += weight * (tu - au);
      if (t + 1 < horizon)
        for (TokenId id = 0; id < v; ++id) {
          TokenSeq ext = prefix;
          ext.push_back(id);
          next.emplace_back(std::move(ext), weight * mean[id]);
        }
    }
    level = std::move(next);
  }
  return q;
}

}  // namespace tokur::uncertainty
