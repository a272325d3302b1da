#pragma once

/**
 * Policy models: the next_distribution contract plus three reference
 * implementations.
 *
 *  - TinyTransformer: a deterministic pre-norm transformer small enough to
 *    run property suites in seconds but big enough that its attention
 *    query/key matrices have rank >= 8 and can be perturbed.
 *  - TabularMixtureModel: K explicit next-token tables over a finite prefix
 *    universe. Its posterior is exactly the K components, which makes every
 *    uncertainty quantity exactly enumerable.
 *  - RecordedTrace: stored per-step distributions for offline scoring.
 *
 * Generation always uses the mean weights; perturbed forwards exist only for
 * uncertainty estimation.
 */

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tokur/distribution.hpp"
#include "tokur/perturb.hpp"
#include "tokur/rng.hpp"

namespace tokur::model {

struct Vocab {
  int size = 0;
  std::vector<std::string> tokens;
  TokenId stop_id = 0;
  std::optional<TokenId> step_delimiter_id;

  void validate() const;
  // size ids named "<stop>", "<nl>", "t2", "t3", ... with <nl> as delimiter.
  static Vocab make_default(int size);
};

class PolicyModel {
 public:
  virtual ~PolicyModel() = default;

  virtual const Vocab& vocab() const = 0;
  virtual std::string type_name() const = 0;

  // Longest prefix the model can condition on.
  virtual int max_context() const = 0;

  // Next-token distribution given the prefix. delta == nullptr (or an empty
  // delta) is the mean-weight policy; temperature scales logits for the
  // transformer and log-probabilities (then renormalizes) for table rows.
  virtual DistributionVector next_distribution(const TokenSeq& prefix,
                                               const perturb::PerturbationDelta* delta,
                                               double temperature) const = 0;

  // Finite posterior support size (tabular mixtures); 0 means the posterior
  // is realized by weight perturbation instead.
  virtual int posterior_components() const { return 0; }
  virtual DistributionVector component_distribution(const TokenSeq& prefix, int component,
                                                    double temperature) const;

  // Weight access for posterior preparation; nullptr when not applicable.
  virtual const perturb::WeightMap* weights() const { return nullptr; }
  virtual std::vector<std::string> default_perturb_targets() const { return {}; }
};

// --- decoding ---------------------------------------------------------------

struct DecodeStrategy {
  enum class Kind { greedy, sample } kind = Kind::greedy;
  double temperature = 1.0;
  RngKey key;  // used by sample only

  static DecodeStrategy greedy();
  static DecodeStrategy sample(double temperature, const RngKey& key);
};

// Extends the prompt until the stop token or max_tokens; the stop token, when
// reached, is the last element of the returned sequence. Greedy breaks ties
// toward the lowest token id.
TokenSeq decode(const PolicyModel& model, const TokenSeq& prompt,
                const DecodeStrategy& strategy, int max_tokens);

// --- tiny transformer -------------------------------------------------------

struct TinyTransformerConfig {
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 64;
  int max_seq_len = 64;
  Vocab vocab = Vocab::make_default(32);
  std::uint64_t init_seed = 1;
  double init_std = 0.08;

  void validate() const;
};

class TinyTransformer : public PolicyModel {
 public:
  // Seeded Gaussian init (layer norms start at gain 1, bias 0).
  explicit TinyTransformer(TinyTransformerConfig config);
  TinyTransformer(TinyTransformerConfig config, perturb::WeightMap weights);

  const Vocab& vocab() const override { return config_.vocab; }
  std::string type_name() const override { return "tiny_transformer"; }
  int max_context() const override { return config_.max_seq_len - 1; }
  DistributionVector next_distribution(const TokenSeq& prefix,
                                       const perturb::PerturbationDelta* delta,
                                       double temperature) const override;
  const perturb::WeightMap* weights() const override { return &weights_; }
  // All attention query and key matrices.
  std::vector<std::string> default_perturb_targets() const override;

  const TinyTransformerConfig& config() const { return config_; }

 private:
  TinyTransformerConfig config_;
  perturb::WeightMap weights_;
};

// --- tabular mixture --------------------------------------------------------

class TabularMixtureModel : public PolicyModel {
 public:
  // K components, every row initialized uniform. The prefix universe is
  // dense: all sequences of length 0..l_max over the vocabulary.
  TabularMixtureModel(Vocab vocab, int l_max, int n_components);

  void set_row(int component, const TokenSeq& prefix, std::vector<double> probs);
  const std::vector<double>& row(int component, const TokenSeq& prefix) const;

  const Vocab& vocab() const override { return vocab_; }
  std::string type_name() const override { return "tabular_mixture"; }
  int max_context() const override { return l_max_; }
  DistributionVector next_distribution(const TokenSeq& prefix,
                                       const perturb::PerturbationDelta* delta,
                                       double temperature) const override;
  int posterior_components() const override { return n_components_; }
  DistributionVector component_distribution(const TokenSeq& prefix, int component,
                                            double temperature) const override;

  int l_max() const { return l_max_; }
  int prefix_count() const { return static_cast<int>(offsets_.back()); }

 private:
  size_t prefix_index(const TokenSeq& prefix) const;

  Vocab vocab_;
  int l_max_ = 0;
  int n_components_ = 0;
  std::vector<size_t> offsets_;                         // offsets_[l] = first index of length-l prefixes
  std::vector<std::vector<std::vector<double>>> rows_;  // [component][prefix_index][token]
};

// --- recorded traces --------------------------------------------------------

struct RecordedStep {
  TokenId chosen = 0;
  DistributionVector mean_dist;                 // mean-weight distribution
  std::vector<DistributionVector> sample_dists; // one per posterior sample
};

struct RecordedTrace {
  std::vector<RecordedStep> steps;
};

// --- checkpoints ------------------------------------------------------------
// A checkpoint is a directory: manifest.json (config + layer names) plus one
// TKMX matrix per weight (transformer) or tables.json (tabular mixture).

void save_model(const PolicyModel& model, const std::string& dir);
std::unique_ptr<PolicyModel> load_model(const std::string& dir);

// Resolves "builtin:tiny", "builtin:tiny?seed=7", or a checkpoint directory.
std::unique_ptr<PolicyModel> model_from_ref(const std::string& ref);

}  // namespace tokur::model
