#include "tokur/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tokur/errors.hpp"

namespace tokur::scaling {

std::vector<Candidate> select_top(const std::vector<Candidate>& candidates, double top_percent) {
  if (candidates.empty()) throw_invalid("select_top: empty candidate list");
  if (top_percent <= 0.0 || top_percent > 100.0)
    throw_invalid("select_top: top_percent must be in (0, 100]");
  const int n = static_cast<int>(candidates.size());
  const int keep = std::max(1, static_cast<int>(std::ceil(n * top_percent / 100.0)));

  std::vector<Candidate> sorted = candidates;
  std::sort(sorted.begin(), sorted.end(), [](const Candidate& a, const Candidate& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.index < b.index;
  });
  sorted.resize(std::min<size_t>(keep, sorted.size()));
  return sorted;
}

namespace {

struct AnswerTally {
  int count = 0;
  double weight = 0.0;
  double confidence_sum = 0.0;
};

// Shared tie rule: larger primary value wins, then higher mean confidence,
// then lexicographically smaller key.
std::string pick_answer(const std::map<std::string, AnswerTally>& tally, bool by_weight) {
  const std::string* best = nullptr;
  double best_primary = 0.0, best_mean_conf = 0.0;
  for (const auto& [key, t] : tally) {
    const double primary = by_weight ? t.weight : static_cast<double>(t.count);
    const double mean_conf = t.confidence_sum / t.count;
    bool wins = false;
    if (!best)
      wins = true;
    else if (primary != best_primary)
      wins = primary > best_primary;
    else if (mean_conf != best_mean_conf)
      wins = mean_conf > best_mean_conf;
    // Map iteration is ordered by key, so equal-on-both keeps the earlier
    // (lexicographically smaller) answer.
    if (wins) {
      best = &key;
      best_primary = primary;
      best_mean_conf = mean_conf;
    }
  }
  return *best;
}

}  // namespace

std::string majority_vote(const std::vector<Candidate>& retained) {
  if (retained.empty()) throw_invalid("majority_vote: empty candidate list");
  std::map<std::string, AnswerTally> tally;
  for (const auto& c : retained) {
    auto& t = tally[c.answer_key];
    t.count += 1;
    t.confidence_sum += c.confidence;
  }
  return pick_answer(tally, /*by_weight=*/false);
}

std::string weighted_best_of_n(const std::vector<Candidate>& retained,
                               double weight_temperature) {
  if (retained.empty()) throw_invalid("weighted_best_of_n: empty candidate list");
  if (weight_temperature <= 0.0)
    throw_invalid("weighted_best_of_n: weight temperature must be positive");

  double cmax = retained[0].confidence;
  for (const auto& c : retained) cmax = std::max(cmax, c.confidence);
  std::vector<double> w(retained.size());
  double sum = 0.0;
  for (size_t i = 0; i < retained.size(); ++i) {
    w[i] = std::exp((retained[i].confidence - cmax) / weight_temperature);
    sum += w[i];
  }

  std::map<std::string, AnswerTally> tally;
  for (size_t i = 0; i < retained.size(); ++i) {
    auto& t = tally[retained[i].answer_key];
    t.count += 1;
    t.weight += w[i] / sum;
    t.confidence_sum += retained[i].confidence;
  }
  return pick_answer(tally, /*by_weight=*/true);
}

SubsampleResult subsample_evaluate(const std::vector<Candidate>& pool,
                                   const AggregationConfig& config,
                                   const std::string& question_id) {
  if (config.n < 1) throw_invalid("subsample_evaluate: N must be >= 1");
  if (config.repeats < 1) throw_invalid("subsample_evaluate: repeats must be >= 1");
  if (static_cast<int>(pool.size()) < config.n)
    throw_capacity("question '" + question_id + "': pool size " +
                   std::to_string(pool.size()) + " smaller than N=" + std::to_string(config.n));

  // Answer correctness is a function of the key; read it off the earliest
  // pool entry carrying that key.
  std::map<std::string, bool> answer_correct;
  for (const auto& c : pool)
    answer_correct.emplace(c.answer_key, c.correct);

  std::vector<double> outcomes;
  outcomes.reserve(config.repeats);
  for (int rep = 0; rep < config.repeats; ++rep) {
    KeyedStream stream(config.key.with("question", question_id)
                           .with("repeat", static_cast<std::uint64_t>(rep)));
    // Partial Fisher-Yates for a without-replacement draw of size N.
    std::vector<int> ids(pool.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::vector<Candidate> drawn;
    drawn.reserve(config.n);
    for (int i = 0; i < config.n; ++i) {
      const auto j = i + static_cast<int>(stream.next_below(ids.size() - i));
      std::swap(ids[i], ids[j]);
      Candidate c = pool[ids[i]];
      c.index = i;  // stable index within the draw
      drawn.push_back(std::move(c));
    }

    const std::vector<Candidate> retained = select_top(drawn, config.top_percent);
    const std::string answer = config.strategy == AggregationConfig::Strategy::maj
                                   ? majority_vote(retained)
                                   : weighted_best_of_n(retained, config.weight_temperature);
    outcomes.push_back(answer_correct.at(answer) ? 1.0 : 0.0);
  }

  SubsampleResult r;
  r.n = config.n;
  r.strategy = config.strategy;
  r.repeats = config.repeats;
  r.accuracy_mean =
      std::accumulate(outcomes.begin(), outcomes.end(), 0.0) / outcomes.size();
  double ss = 0.0;
  for (double x : outcomes) ss += (x - r.accuracy_mean) * (x - r.accuracy_mean);
  r.accuracy_std = outcomes.size() > 1 ? std::sqrt(ss / (outcomes.size() - 1)) : 0.0;
  return r;
}

}  // namespace tokur::scaling
