#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "weaklab/bagcore.hpp"
#include "weaklab/instances.hpp"
#include "weaklab/model.hpp"

namespace weaklab {

enum class StrategyKind {
  random,
  margin,
  entropy,
  least_confidence,
  grad_embedding,
  badge,
  kl_prob,
  kl_embedding,
  svm_margin,
};

// Exact lowercase tokens, as accepted in config files and CLI flags.
StrategyKind strategy_from_string(const std::string& s);
std::string to_string(StrategyKind k);
const std::vector<StrategyKind>& all_strategies();

// Normalized orientation: smaller score = more preferred. Strategies whose
// raw quantity prefers "largest" are negated before selection.
struct ScoredBag {
  std::int64_t bag_id = 0;
  double score = 0.0;
};

// |P(positive|b) - P(negative|b)|; select the k smallest.
double score_margin(const std::array<double, 2>& bag_probs);
// -sum_c p_c ln(p_c + 1e-12); select the k largest.
double score_entropy(const std::array<double, 2>& bag_probs);
// max_c p_c; select the k smallest.
double score_least_confidence(const std::array<double, 2>& bag_probs);
// ||g||_2; select the k largest.
double score_grad_norm(const GradEmbedding& g);
// sum_c dist_c * ln((dist_c+eps)/(reference_c+eps)); select the k smallest.
double score_kl(const std::array<double, 2>& dist,
                const std::array<double, 2>& reference);

// k-means++ D^2 seeding over embeddings. First center: largest L2 norm
// (ties -> lowest index). Later centers drawn with probability
// proportional to squared distance to the nearest chosen center; if every
// distance is zero, uniform among the unchosen. Returns k distinct indices.
std::vector<int> kmeanspp_select(
    const std::vector<std::vector<double>>& embeddings, int k,
    std::mt19937_64& rng);

struct SvmModel {
  std::vector<double> w;
  double b = 0.0;
  double reg_lambda = 0.0;
};

// Pegasos: projected SGD on lambda/2 ||w||^2 + mean hinge loss, step
// 1/(lambda*t), with tail averaging over the final half of the updates.
// Labels are 0/1; both classes must be present.
SvmModel fit_linear_svm(const std::vector<std::vector<double>>& embeddings,
                        const std::vector<int>& labels, double reg_lambda,
                        int epochs, std::mt19937_64& rng);

// |w.e + b| / ||w||; select the k smallest.
double score_svm_margin(const std::vector<double>& embedding,
                        const SvmModel& model);

// k smallest by (score, bag_id) ascending.
std::vector<std::int64_t> select_k(std::vector<ScoredBag> scored, int k);

// Scores the pool under a frozen snapshot and returns exactly k distinct
// bag ids from it. Pure with respect to the snapshot; rng is consumed only
// by random/badge. svm_margin fits on all positive bags (label 1) plus the
// full pool (label 0) before scoring.
std::vector<std::int64_t> sample_negatives(
    const std::vector<std::int64_t>& pool_ids, StrategyKind strategy, int k,
    const ModelParams& snapshot, AggregationMode mode, const BagDataset& ds,
    const InstanceSet& instances, std::mt19937_64& rng, int threads = 1);

} // namespace weaklab
