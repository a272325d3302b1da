#pragma once

/**
 * Test-time scaling over recorded candidate pools: keep the top-P% of
 * candidates by confidence, then pick an answer by majority vote or by
 * softmax-weighted vote. subsample_evaluate repeats the whole pipeline on
 * keyed without-replacement draws of size N.
 */

#include <map>
#include <string>
#include <vector>

#include "tokur/rng.hpp"

namespace tokur::scaling {

struct Candidate {
  std::string response_id;
  std::string answer_key;  // pre-canonicalized by the data producer
  double confidence = 0.0;
  bool correct = false;  // evaluation only
  int index = 0;         // stable input index
};

struct AggregationConfig {
  int n = 16;
  double top_percent = 10.0;
  enum class Strategy { maj, wbon } strategy = Strategy::maj;
  int repeats = 10;
  double weight_temperature = 1.0;  // WBoN softmax temperature
  RngKey key;
};

// The ceil(N * P / 100) highest-confidence candidates (at least one);
// boundary ties go to the lower stable index.
std::vector<Candidate> select_top(const std::vector<Candidate>& candidates, double top_percent);

// Most frequent answer key; ties broken by higher mean confidence, then by
// lexicographically smaller key.
std::string majority_vote(const std::vector<Candidate>& retained);

// Softmax(confidence / weight_temperature) weights summed per answer key;
// ties resolved as in majority_vote.
std::string weighted_best_of_n(const std::vector<Candidate>& retained,
                               double weight_temperature = 1.0);

struct SubsampleResult {
  int n = 0;
  AggregationConfig::Strategy strategy = AggregationConfig::Strategy::maj;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;  // sample standard deviation over repeats
  int repeats = 0;
};

// One question's pool: draws config.n candidates without replacement per
// repeat (keyed by the repeat index), applies retention + strategy, and
// marks the repeat correct when the winning answer key is marked correct in
// the pool. Throws capacity when the pool is smaller than N.
SubsampleResult subsample_evaluate(const std::vector<Candidate>& pool,
                                   const AggregationConfig& config,
                                   const std::string& question_id);

}  // namespace tokur::scaling
