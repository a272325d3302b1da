#include "tokur/perturb.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tokur/errors.hpp"

namespace tokur::perturb {

const CachedTarget* PosteriorCache::find(const std::string& name) const {
  for (const auto& t : targets)
    if (t.name == name) return &t;
  return nullptr;
}

const DeltaEntry* PerturbationDelta::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

PosteriorCache prepare_posterior(const WeightMap& weights, const PerturbationSpec& spec) {
  if (spec.r_prime <= 0) throw_config("r_prime must be positive");
  if (spec.sigma_q < 0.0) throw_config("sigma_q must be >= 0");

  std::vector<std::string> names = spec.targets;
  std::sort(names.begin(), names.end());

  PosteriorCache cache;
  for (const auto& name : names) {
    auto it = weights.find(name);
    if (it == weights.end())
      throw_config("perturbation target '" + name + "' names no weight matrix");
    const DenseMatrix& w0 = it->second;
    const linalg::SvdFactors f = linalg::compact_svd(w0);
    int r_eff = spec.r_prime;
    if (r_eff > f.rank()) {
      if (!spec.clamp_to_rank)
        throw_config("r_prime=" + std::to_string(spec.r_prime) + " exceeds rank " +
                     std::to_string(f.rank()) + " of target '" + name + "'");
      r_eff = f.rank();
      cache.clamped_targets.push_back(name);
    }

    CachedTarget t;
    t.name = name;
    t.rows = w0.rows;
    t.cols = w0.cols;
    t.r_prime_effective = r_eff;
    t.u_prime = DenseMatrix(w0.rows, r_eff);
    for (int i = 0; i < w0.rows; ++i)
      for (int k = 0; k < r_eff; ++k) t.u_prime.at(i, k) = f.u.at(i, k);
    cache.targets.push_back(std::move(t));
  }
  return cache;
}

PerturbationDelta sample_delta(const PosteriorCache& cache, const PerturbationSpec& spec,
                               const RngKey& key) {
  PerturbationDelta out;
  for (const auto& t : cache.targets) {
    DeltaEntry e;
    e.name = t.name;
    e.epsilon = linalg::sample_gaussian_matrix(t.cols, t.r_prime_effective, spec.sigma_q,
                                               key.with("layer", t.name));
    // delta = U' * eps^T, so the column space of delta lies in span(U').
    e.delta = linalg::matmul(t.u_prime, linalg::transpose(e.epsilon));
    out.entries.push_back(std::move(e));
  }
  return out;
}

PerturbedView::PerturbedView(const WeightMap& base, const PerturbationDelta& delta)
    : base_(&base) {
  for (const auto& e : delta.entries) {
    auto it = base.find(e.name);
    if (it == base.end())
      throw_invalid("delta names unknown weight matrix '" + e.name + "'");
    if (!it->second.same_shape(e.delta))
      throw_invalid("delta shape mismatch for '" + e.name + "'");
    replaced_.emplace(e.name, linalg::add(it->second, e.delta));
  }
}

const DenseMatrix& PerturbedView::get(const std::string& name) const {
  if (auto it = replaced_.find(name); it != replaced_.end()) return it->second;
  auto it = base_->find(name);
  if (it == base_->end()) throw_invalid("unknown weight matrix '" + name + "'");
  return it->second;
}

void save_cache(const PosteriorCache& cache, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  for (const auto& t : cache.targets) {
    manifest[t.name] = {{"rows", t.rows}, {"cols", t.cols}, {"r_prime", t.r_prime_effective}};
    // Layer ids contain dots; keep them as-is and index by position.
    linalg::save_matrix(t.u_prime,
                        (fs::path(dir) / ("u_prime_" + std::to_string(&t - cache.targets.data()) +
                                          ".tkmx")).string());
  }
  std::ofstream os(fs::path(dir) / "cache_manifest.json");
  os << manifest.dump(2) << "\n";
  if (!os) throw_data_format("cannot write cache manifest in " + dir);
}

PosteriorCache load_cache(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "cache_manifest.json");
  if (!is) throw_data_format("cannot open cache manifest in " + dir);
  nlohmann::ordered_json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw_data_format(std::string("cache manifest parse error: ") + e.what());
  }
  PosteriorCache cache;
  int idx = 0;
  for (auto it = manifest.begin(); it != manifest.end(); ++it, ++idx) {
    CachedTarget t;
    t.name = it.key();
    t.rows = it.value().at("rows").get<int>();
    t.cols = it.value().at("cols").get<int>();
    t.r_prime_effective = it.value().at("r_prime").get<int>();
    t.u_prime = linalg::load_matrix(
        (fs::path(dir) / ("u_prime_" + std::to_string(idx) + ".tkmx")).string());
    if (t.u_prime.rows != t.rows || t.u_prime.cols != t.r_prime_effective)
      throw_data_format("cache matrix dims disagree with manifest for '" + t.name + "'");
    cache.targets.push_back(std::move(t));
  }
  return cache;
}

}  // namespace tokur::perturb
