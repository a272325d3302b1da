#pragma once

/**
 * Low-rank Gaussian weight perturbation.
 *
 * For each targeted weight matrix W0 (m x n) the posterior cache keeps the
 * top-r' left singular vectors U'. A sampled delta is U' * eps^T with eps
 * (n x r') drawn entrywise N(0, sigma_q^2) from a keyed stream, so the
 * perturbed weight W0 + delta has mean W0 and its noise lives entirely in
 * span(U'). Deltas for distinct layers, steps, and samples come from
 * disjoint key labels and are therefore independent.
 */

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tokur/linalg.hpp"
#include "tokur/rng.hpp"

namespace tokur::perturb {

using linalg::DenseMatrix;

// Named weight collection; ordered so iteration is deterministic.
using WeightMap = std::map<std::string, DenseMatrix>;

enum class SampleMode { stepwise, joint };

struct PerturbationSpec {
  double sigma_q = 0.1;
  int r_prime = 8;
  std::vector<std::string> targets;  // layer-parameter identifiers
  SampleMode mode = SampleMode::stepwise;
  RngKey base_key;
  // When set, r' is clamped to each target's numerical rank instead of
  // erroring; clamps are reported through PosteriorCache::clamped_targets.
  bool clamp_to_rank = false;
};

struct CachedTarget {
  std::string name;
  DenseMatrix u_prime;  // m x r'_effective
  int rows = 0;
  int cols = 0;
  int r_prime_effective = 0;
};

struct PosteriorCache {
  std::vector<CachedTarget> targets;  // sorted by name
  std::vector<std::string> clamped_targets;

  const CachedTarget* find(const std::string& name) const;
};

struct DeltaEntry {
  std::string name;
  DenseMatrix delta;    // m x n, equals u_prime * eps^T
  DenseMatrix epsilon;  // n x r', retained for tests
};

struct PerturbationDelta {
  std::vector<DeltaEntry> entries;

  const DeltaEntry* find(const std::string& name) const;
  bool empty() const { return entries.empty(); }
};

// Runs the compact SVD of every target and caches U'. W0 itself is left
// untouched; decoding always uses the mean weights.
PosteriorCache prepare_posterior(const WeightMap& weights, const PerturbationSpec& spec);

// Draws one delta per cached target. Per-layer independence comes from the
// "layer" label appended to the key inside.
PerturbationDelta sample_delta(const PosteriorCache& cache, const PerturbationSpec& spec,
                               const RngKey& key);

// Read-through view of weights with the delta applied. The base map is never
// mutated; targeted matrices are materialized as W0 + delta on construction.
class PerturbedView {
 public:
  PerturbedView(const WeightMap& base, const PerturbationDelta& delta);

  const DenseMatrix& get(const std::string& name) const;

 private:
  const WeightMap* base_;
  std::map<std::string, DenseMatrix> replaced_;
};

// Convenience scope: f sees the perturbed view, the caller's weights stay
// bit-identical afterwards.
template <typename F>
auto with_delta(const WeightMap& weights, const PerturbationDelta& delta, F&& f) {
  PerturbedView view(weights, delta);
  return std::forward<F>(f)(view);
}

// Cache persistence: one TKMX matrix per target plus a JSON manifest
// {layer id -> {rows, cols, r_prime}}.
void save_cache(const PosteriorCache& cache, const std::string& dir);
PosteriorCache load_cache(const std::string& dir);

}  // namespace tokur::perturb
