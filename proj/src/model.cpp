#include "tokur/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace tokur::model {

namespace fs = std::filesystem;
using linalg::DenseMatrix;

// ============================================================================
// Vocab
// ============================================================================

void Vocab::validate() const {
  if (size <= 0) throw_invalid("Vocab: size must be positive");
  if (static_cast<int>(tokens.size()) != size)
    throw_invalid("Vocab: token list length does not match size");
  if (stop_id < 0 || stop_id >= size) throw_invalid("Vocab: stop token id out of range");
  if (step_delimiter_id && (*step_delimiter_id < 0 || *step_delimiter_id >= size))
    throw_invalid("Vocab: step delimiter id out of range");
}

Vocab Vocab::make_default(int size) {
  Vocab v;
  v.size = size;
  v.tokens.reserve(size);
  for (int i = 0; i < size; ++i) {
    if (i == 0)
      v.tokens.push_back("<stop>");
    else if (i == 1 && size > 2)
      v.tokens.push_back("<nl>");
    else
      v.tokens.push_back("t" + std::to_string(i));
  }
  v.stop_id = 0;
  if (size > 2) v.step_delimiter_id = 1;
  v.validate();
  return v;
}

DistributionVector PolicyModel::component_distribution(const TokenSeq&, int, double) const {
  throw_invalid(type_name() + " has no enumerable posterior components");
}

// ============================================================================
// Decoding
// ============================================================================

DecodeStrategy DecodeStrategy::greedy() { return DecodeStrategy{}; }

DecodeStrategy DecodeStrategy::sample(double temperature, const RngKey& key) {
  DecodeStrategy s;
  s.kind = Kind::sample;
  s.temperature = temperature;
  s.key = key;
  return s;
}

namespace {

TokenId argmax_lowest(const DistributionVector& dist) {
  TokenId best = 0;
  for (int i = 1; i < dist.size(); ++i)
    if (dist[i] > dist[best]) best = i;
  return best;
}

TokenId sample_from(const DistributionVector& dist, KeyedStream& stream) {
  const double u = stream.next_unit();
  double cum = 0.0;
  for (int i = 0; i < dist.size(); ++i) {
    cum += dist[i];
    if (u < cum) return i;
  }
  return dist.size() - 1;  // guard against cum < 1 from rounding
}

}  // namespace

TokenSeq decode(const PolicyModel& model, const TokenSeq& prompt,
                const DecodeStrategy& strategy, int max_tokens) {
  if (strategy.temperature <= 0.0) throw_invalid("decode: temperature must be positive");
  TokenSeq out = prompt;
  TokenSeq response;
  KeyedStream stream(strategy.key);
  for (int t = 0; t < max_tokens; ++t) {
    const DistributionVector dist =
        model.next_distribution(out, nullptr, strategy.temperature);
    const TokenId next = strategy.kind == DecodeStrategy::Kind::greedy
                             ? argmax_lowest(dist)
                             : sample_from(dist, stream);
    out.push_back(next);
    response.push_back(next);
    if (next == model.vocab().stop_id) break;
  }
  return response;
}

// ============================================================================
// TinyTransformer
// ============================================================================

void TinyTransformerConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || max_seq_len <= 0)
    throw_config("TinyTransformerConfig: dimensions must be positive");
  if (d_model % n_heads != 0)
    throw_config("TinyTransformerConfig: d_model must be divisible by n_heads");
  vocab.validate();
}

namespace {

std::vector<std::string> transformer_matrix_names(const TinyTransformerConfig& cfg) {
  std::vector<std::string> names = {"tok_emb", "pos_emb", "ln_f.gain", "ln_f.bias"};
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    for (const char* s : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "ln1.gain", "ln1.bias",
                          "ln2.gain", "ln2.bias", "mlp.w1", "mlp.w2"})
      names.push_back(p + s);
  }
  return names;
}

std::pair<int, int> transformer_matrix_shape(const TinyTransformerConfig& cfg,
                                             const std::string& name) {
  const int d = cfg.d_model;
  if (name == "tok_emb") return {cfg.vocab.size, d};
  if (name == "pos_emb") return {cfg.max_seq_len, d};
  if (name.ends_with("gain") || name.ends_with("bias")) return {1, d};
  if (name.ends_with("attn.wq") || name.ends_with("attn.wk") || name.ends_with("attn.wv") ||
      name.ends_with("attn.wo"))
    return {d, d};
  if (name.ends_with("mlp.w1")) return {cfg.d_ff, d};
  if (name.ends_with("mlp.w2")) return {d, cfg.d_ff};
  throw_invalid("unknown transformer matrix '" + name + "'");
}

void layer_norm_row(std::vector<double>& x, const DenseMatrix& gain, const DenseMatrix& bias) {
  const int d = static_cast<int>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= d;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= d;
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  for (int i = 0; i < d; ++i) x[i] = (x[i] - mean) * inv * gain.at(0, i) + bias.at(0, i);
}

// y = W x for a row-major W (out x in).
std::vector<double> matvec(const DenseMatrix& w, const std::vector<double>& x) {
  std::vector<double> y(w.rows, 0.0);
  for (int i = 0; i < w.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < w.cols; ++j) s += w.at(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

std::vector<double> softmax_inplace(std::vector<double> z) {
  double zmax = z[0];
  for (double v : z) zmax = std::max(zmax, v);
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

}  // namespace

TinyTransformer::TinyTransformer(TinyTransformerConfig config) : config_(std::move(config)) {
  config_.validate();
  const RngKey init(config_.init_seed);
  for (const auto& name : transformer_matrix_names(config_)) {
    const auto [rows, cols] = transformer_matrix_shape(config_, name);
    if (name.ends_with("gain")) {
      DenseMatrix m(rows, cols);
      std::fill(m.data.begin(), m.data.end(), 1.0);
      weights_.emplace(name, std::move(m));
    } else if (name.ends_with("bias")) {
      weights_.emplace(name, DenseMatrix(rows, cols));
    } else {
      weights_.emplace(name, linalg::sample_gaussian_matrix(rows, cols, config_.init_std,
                                                            init.with("init", name)));
    }
  }
}

TinyTransformer::TinyTransformer(TinyTransformerConfig config, perturb::WeightMap weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  config_.validate();
  for (const auto& name : transformer_matrix_names(config_)) {
    auto it = weights_.find(name);
    if (it == weights_.end())
      throw_data_format("checkpoint missing matrix '" + name + "'");
    const auto [rows, cols] = transformer_matrix_shape(config_, name);
    if (it->second.rows != rows || it->second.cols != cols)
      throw_data_format("checkpoint matrix '" + name + "' has inconsistent dimensions");
    if (!linalg::all_finite(it->second))
      throw_data_format("checkpoint matrix '" + name + "' has non-finite entries");
  }
}

std::vector<std::string> TinyTransformer::default_perturb_targets() const {
  std::vector<std::string> targets;
  for (int l = 0; l < config_.n_layers; ++l) {
    targets.push_back("layers." + std::to_string(l) + ".attn.wq");
    targets.push_back("layers." + std::to_string(l) + ".attn.wk");
  }
  return targets;
}

DistributionVector TinyTransformer::next_distribution(const TokenSeq& prefix,
                                                      const perturb::PerturbationDelta* delta,
                                                      double temperature) const {
  if (prefix.empty()) throw_invalid("next_distribution: prefix must be nonempty");
  if (static_cast<int>(prefix.size()) > max_context())
    throw_capacity("prefix length " + std::to_string(prefix.size()) +
                   " exceeds model context " + std::to_string(max_context()));
  if (temperature <= 0.0) throw_invalid("next_distribution: temperature must be positive");
  for (TokenId id : prefix)
    if (id < 0 || id >= config_.vocab.size)
      throw_invalid("next_distribution: token id " + std::to_string(id) + " out of range");

  static const perturb::PerturbationDelta kEmptyDelta;
  const perturb::PerturbedView view(weights_, delta ? *delta : kEmptyDelta);
  auto w = [&](const std::string& name) -> const DenseMatrix& { return view.get(name); };

  const int T = static_cast<int>(prefix.size());
  const int d = config_.d_model;
  const int n_heads = config_.n_heads;
  const int d_head = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));

  const DenseMatrix& tok_emb = w("tok_emb");
  const DenseMatrix& pos_emb = w("pos_emb");
  std::vector<std::vector<double>> x(T, std::vector<double>(d));
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < d; ++i) x[t][i] = tok_emb.at(prefix[t], i) + pos_emb.at(t, i);

  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";

    // Attention block (pre-norm).
    std::vector<std::vector<double>> q(T), k(T), v(T);
    for (int t = 0; t < T; ++t) {
      std::vector<double> h = x[t];
      layer_norm_row(h, w(p + "ln1.gain"), w(p + "ln1.bias"));
      q[t] = matvec(w(p + "attn.wq"), h);
      k[t] = matvec(w(p + "attn.wk"), h);
      v[t] = matvec(w(p + "attn.wv"), h);
    }
    for (int t = 0; t < T; ++t) {
      std::vector<double> attn_out(d, 0.0);
      for (int h = 0; h < n_heads; ++h) {
        const int off = h * d_head;
        std::vector<double> scores(t + 1);
        for (int j = 0; j <= t; ++j) {
          double s = 0.0;
          for (int i = 0; i < d_head; ++i) s += q[t][off + i] * k[j][off + i];
          scores[j] = s * scale;
        }
        const std::vector<double> alpha = softmax_inplace(std::move(scores));
        for (int j = 0; j <= t; ++j)
          for (int i = 0; i < d_head; ++i) attn_out[off + i] += alpha[j] * v[j][off + i];
      }
      const std::vector<double> proj = matvec(w(p + "attn.wo"), attn_out);
      for (int i = 0; i < d; ++i) x[t][i] += proj[i];
    }

    // MLP block (pre-norm).
    for (int t = 0; t < T; ++t) {
      std::vector<double> h = x[t];
      layer_norm_row(h, w(p + "ln2.gain"), w(p + "ln2.bias"));
      std::vector<double> mid = matvec(w(p + "mlp.w1"), h);
      for (double& m : mid) m = silu(m);
      const std::vector<double> out = matvec(w(p + "mlp.w2"), mid);
      for (int i = 0; i < d; ++i) x[t][i] += out[i];
    }
  }

  std::vector<double> h = x[T - 1];
  layer_norm_row(h, w("ln_f.gain"), w("ln_f.bias"));

  // Tied unembedding: logit of token v is <h, tok_emb[v]>.
  std::vector<double> logits(config_.vocab.size);
  for (int tok = 0; tok < config_.vocab.size; ++tok) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += h[i] * tok_emb.at(tok, i);
    logits[tok] = s / temperature;
  }
  return DistributionVector(softmax_inplace(std::move(logits)));
}

// ============================================================================
// TabularMixtureModel
// ============================================================================

TabularMixtureModel::TabularMixtureModel(Vocab vocab, int l_max, int n_components)
    : vocab_(std::move(vocab)), l_max_(l_max), n_components_(n_components) {
  vocab_.validate();
  if (vocab_.size > 8) throw_config("TabularMixtureModel: vocabulary size is limited to 8");
  if (l_max_ < 0 || l_max_ > 4) throw_config("TabularMixtureModel: l_max is limited to 4");
  if (n_components_ < 1) throw_config("TabularMixtureModel: need at least one component");

  offsets_.assign(1, 0);
  size_t count = 1;  // the empty prefix
  for (int l = 0; l <= l_max_; ++l) {
    offsets_.push_back(offsets_.back() + count);
    count *= static_cast<size_t>(vocab_.size);
  }
  const size_t total = offsets_.back();
  rows_.assign(n_components_,
               std::vector<std::vector<double>>(
                   total, std::vector<double>(vocab_.size, 1.0 / vocab_.size)));
}

size_t TabularMixtureModel::prefix_index(const TokenSeq& prefix) const {
  const int len = static_cast<int>(prefix.size());
  if (len > l_max_)
    throw_capacity("prefix length " + std::to_string(len) + " exceeds table depth " +
                   std::to_string(l_max_));
  size_t idx = 0;
  for (TokenId id : prefix) {
    if (id < 0 || id >= vocab_.size)
      throw_invalid("token id " + std::to_string(id) + " out of range");
    idx = idx * vocab_.size + static_cast<size_t>(id);
  }
  return offsets_[len] + idx;
}

void TabularMixtureModel::set_row(int component, const TokenSeq& prefix,
                                  std::vector<double> probs) {
  if (component < 0 || component >= n_components_)
    throw_invalid("component index out of range");
  DistributionVector d(std::move(probs));
  if (d.size() != vocab_.size) throw_invalid("row length does not match vocabulary");
  d.validate();
  rows_[component][prefix_index(prefix)] = std::move(d.p);
}

const std::vector<double>& TabularMixtureModel::row(int component,
                                                    const TokenSeq& prefix) const {
  if (component < 0 || component >= n_components_)
    throw_invalid("component index out of range");
  return rows_[component][prefix_index(prefix)];
}

namespace {

// p_i^(1/tau), renormalized. tau == 1 returns the row untouched so exact
// table values survive bit-for-bit.
std::vector<double> temper_row(const std::vector<double>& row, double temperature) {
  if (temperature == 1.0) return row;
  std::vector<double> out(row.size());
  double sum = 0.0;
  for (size_t i = 0; i < row.size(); ++i) {
    out[i] = row[i] > 0.0 ? std::pow(row[i], 1.0 / temperature) : 0.0;
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

}  // namespace

DistributionVector TabularMixtureModel::component_distribution(const TokenSeq& prefix,
                                                               int component,
                                                               double temperature) const {
  if (temperature <= 0.0) throw_invalid("temperature must be positive");
  return DistributionVector(temper_row(row(component, prefix), temperature));
}

DistributionVector TabularMixtureModel::next_distribution(
    const TokenSeq& prefix, const perturb::PerturbationDelta* delta,
    double temperature) const {
  if (delta && !delta->empty())
    throw_invalid("tabular mixture has no perturbable weights");
  if (temperature <= 0.0) throw_invalid("temperature must be positive");
  if (n_components_ == 1) return component_distribution(prefix, 0, temperature);
  std::vector<double> mean(vocab_.size, 0.0);
  for (int k = 0; k < n_components_; ++k) {
    const std::vector<double> comp = temper_row(row(k, prefix), temperature);
    for (int i = 0; i < vocab_.size; ++i) mean[i] += comp[i];
  }
  for (double& x : mean) x /= n_components_;
  return DistributionVector(std::move(mean));
}

// ============================================================================
// Checkpoints
// ============================================================================

namespace {

constexpr int kCheckpointVersion = 1;

nlohmann::ordered_json vocab_to_json(const Vocab& v) {
  nlohmann::ordered_json j;
  j["size"] = v.size;
  j["tokens"] = v.tokens;
  j["stop_id"] = v.stop_id;
  if (v.step_delimiter_id) j["step_delimiter_id"] = *v.step_delimiter_id;
  return j;
}

Vocab vocab_from_json(const nlohmann::json& j) {
  Vocab v;
  v.size = j.at("size").get<int>();
  v.tokens = j.at("tokens").get<std::vector<std::string>>();
  v.stop_id = j.at("stop_id").get<TokenId>();
  if (j.contains("step_delimiter_id")) v.step_delimiter_id = j["step_delimiter_id"].get<TokenId>();
  v.validate();
  return v;
}

}  // namespace

void save_model(const PolicyModel& model, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "tokur-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["model_type"] = model.type_name();

  if (const auto* tt = dynamic_cast<const TinyTransformer*>(&model)) {
    const auto& cfg = tt->config();
    manifest["config"] = {{"d_model", cfg.d_model},       {"n_layers", cfg.n_layers},
                          {"n_heads", cfg.n_heads},       {"d_ff", cfg.d_ff},
                          {"max_seq_len", cfg.max_seq_len}, {"vocab", vocab_to_json(cfg.vocab)}};
    std::vector<std::string> names;
    for (const auto& [name, _] : *tt->weights()) names.push_back(name);
    manifest["matrices"] = names;
    fs::create_directories(fs::path(dir) / "weights");
    for (const auto& [name, m] : *tt->weights())
      linalg::save_matrix(m, (fs::path(dir) / "weights" / (name + ".tkmx")).string());
  } else if (const auto* tm = dynamic_cast<const TabularMixtureModel*>(&model)) {
    manifest["config"] = {{"l_max", tm->l_max()},
                          {"n_components", tm->posterior_components()},
                          {"vocab", vocab_to_json(tm->vocab())}};
    nlohmann::ordered_json tables = nlohmann::ordered_json::array();
    for (int k = 0; k < tm->posterior_components(); ++k) {
      nlohmann::ordered_json comp = nlohmann::ordered_json::array();
      // Rows in canonical prefix order: lengths 0..l_max, lexicographic ids.
      std::vector<TokenSeq> stack = {{}};
      for (int l = 0; l <= tm->l_max(); ++l) {
        std::vector<TokenSeq> next;
        for (const auto& prefix : stack) {
          comp.push_back(tm->row(k, prefix));
          if (l < tm->l_max())
            for (TokenId id = 0; id < tm->vocab().size; ++id) {
              TokenSeq ext = prefix;
              ext.push_back(id);
              next.push_back(std::move(ext));
            }
        }
        stack = std::move(next);
      }
      tables.push_back(std::move(comp));
    }
    std::ofstream os(fs::path(dir) / "tables.json");
    os << tables.dump() << "\n";
    if (!os) throw_data_format("cannot write tables.json in " + dir);
  } else {
    throw_invalid("save_model: unsupported model type " + model.type_name());
  }

  std::ofstream os(fs::path(dir) / "manifest.json");
  os << manifest.dump(2) << "\n";
  if (!os) throw_data_format("cannot write manifest.json in " + dir);
}

std::unique_ptr<PolicyModel> load_model(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw_data_format("cannot open checkpoint manifest in " + dir);
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw_data_format(std::string("checkpoint manifest parse error: ") + e.what());
  }
  if (manifest.value("format", "") != "tokur-checkpoint")
    throw_data_format("not a checkpoint manifest: bad format marker in " + dir);
  if (manifest.value("version", -1) != kCheckpointVersion)
    throw_data_format("unsupported checkpoint version in " + dir);

  const std::string type = manifest.value("model_type", "");
  if (type == "tiny_transformer") {
    const auto& jc = manifest.at("config");
    TinyTransformerConfig cfg;
    cfg.d_model = jc.at("d_model").get<int>();
    cfg.n_layers = jc.at("n_layers").get<int>();
    cfg.n_heads = jc.at("n_heads").get<int>();
    cfg.d_ff = jc.at("d_ff").get<int>();
    cfg.max_seq_len = jc.at("max_seq_len").get<int>();
    cfg.vocab = vocab_from_json(jc.at("vocab"));
    perturb::WeightMap weights;
    for (const auto& name : manifest.at("matrices").get<std::vector<std::string>>())
      weights.emplace(name,
                      linalg::load_matrix((fs::path(dir) / "weights" / (name + ".tkmx")).string()));
    return std::make_unique<TinyTransformer>(cfg, std::move(weights));
  }
  if (type == "tabular_mixture") {
    const auto& jc = manifest.at("config");
    auto m = std::make_unique<TabularMixtureModel>(vocab_from_json(jc.at("vocab")),
                                                   jc.at("l_max").get<int>(),
                                                   jc.at("n_components").get<int>());
    std::ifstream ts(fs::path(dir) / "tables.json");
    if (!ts) throw_data_format("cannot open tables.json in " + dir);
    nlohmann::json tables;
    try {
      ts >> tables;
    } catch (const nlohmann::json::exception& e) {
      throw_data_format(std::string("tables.json parse error: ") + e.what());
    }
    if (static_cast<int>(tables.size()) != m->posterior_components())
      throw_data_format("tables.json component count disagrees with manifest");
    for (int k = 0; k < m->posterior_components(); ++k) {
      const auto& comp = tables[k];
      if (static_cast<int>(comp.size()) != m->prefix_count())
        throw_data_format("tables.json row count has inconsistent dimensions");
      size_t idx = 0;
      std::vector<TokenSeq> stack = {{}};
      for (int l = 0; l <= m->l_max(); ++l) {
        std::vector<TokenSeq> next;
        for (const auto& prefix : stack) {
          m->set_row(k, prefix, comp[idx++].get<std::vector<double>>());
          if (l < m->l_max())
            for (TokenId id = 0; id < m->vocab().size; ++id) {
              TokenSeq ext = prefix;
              ext.push_back(id);
              next.push_back(std::move(ext));
            }
        }
        stack = std::move(next);
      }
    }
    return m;
  }
  throw_data_format("unknown model_type '" + type + "' in " + dir);
}

std::unique_ptr<PolicyModel> model_from_ref(const std::string& ref) {
  if (!ref.starts_with("builtin:")) return load_model(ref);

  std::string body = ref.substr(8);
  std::string name = body;
  std::string query;
  if (auto pos = body.find('?'); pos != std::string::npos) {
    name = body.substr(0, pos);
    query = body.substr(pos + 1);
  }
  std::map<std::string, std::string> params;
  size_t start = 0;
  while (start < query.size()) {
    size_t end = query.find('&', start);
    if (end == std::string::npos) end = query.size();
    const std::string kv = query.substr(start, end - start);
    if (auto eq = kv.find('='); eq != std::string::npos)
      params[kv.substr(0, eq)] = kv.substr(eq + 1);
    else if (!kv.empty())
      throw_config("malformed model parameter '" + kv + "' in " + ref);
    start = end + 1;
  }
  auto get_int = [&](const std::string& key, long long fallback) {
    auto it = params.find(key);
    if (it == params.end()) return fallback;
    try {
      return std::stoll(it->second);
    } catch (const std::exception&) {
      throw_config("model parameter '" + key + "' is not an integer in " + ref);
    }
  };

  if (name == "tiny") {
    TinyTransformerConfig cfg;
    cfg.init_seed = static_cast<std::uint64_t>(get_int("seed", 1));
    cfg.d_model = static_cast<int>(get_int("d_model", cfg.d_model));
    cfg.n_layers = static_cast<int>(get_int("n_layers", cfg.n_layers));
    cfg.n_heads = static_cast<int>(get_int("n_heads", cfg.n_heads));
    cfg.d_ff = static_cast<int>(get_int("d_ff", cfg.d_ff));
    cfg.max_seq_len = static_cast<int>(get_int("max_seq_len", cfg.max_seq_len));
    const int vocab_size = static_cast<int>(get_int("vocab", cfg.vocab.size));
    cfg.vocab = Vocab::make_default(vocab_size);
    return std::make_unique<TinyTransformer>(cfg);
  }
  throw_config("unknown builtin model '" + name + "'");
}

}  // namespace tokur::model
