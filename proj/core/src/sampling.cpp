#include "weaklab/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "weaklab/errors.hpp"
#include "weaklab/parallel.hpp"
#include "weaklab/rng.hpp"

namespace weaklab {

namespace {

constexpr double kKlEps = 1e-12;
// Fixed seed for the kl_embedding random projection so scores are stable
// across processes for a given embedding width.
constexpr std::uint64_t kKlProjectionSeed = 0x6b6c5f70726f6aULL;

} // namespace

StrategyKind strategy_from_string(const std::string& s) {
  for (StrategyKind k : all_strategies())
    if (to_string(k) == s) return k;
  throw ConfigError("unknown strategy '" + s + "'");
}

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::random: return "random";
    case StrategyKind::margin: return "margin";
    case StrategyKind::entropy: return "entropy";
    case StrategyKind::least_confidence: return "least_confidence";
    case StrategyKind::grad_embedding: return "grad_embedding";
    case StrategyKind::badge: return "badge";
    case StrategyKind::kl_prob: return "kl_prob";
    case StrategyKind::kl_embedding: return "kl_embedding";
    case StrategyKind::svm_margin: return "svm_margin";
  }
  return "unknown";
}

const std::vector<StrategyKind>& all_strategies() {
  static const std::vector<StrategyKind> kAll = {
      StrategyKind::random,         StrategyKind::margin,
      StrategyKind::entropy,        StrategyKind::least_confidence,
      StrategyKind::grad_embedding, StrategyKind::badge,
      StrategyKind::kl_prob,        StrategyKind::kl_embedding,
      StrategyKind::svm_margin,
  };
  return kAll;
}

double score_margin(const std::array<double, 2>& bag_probs) {
  return std::abs(bag_probs[1] - bag_probs[0]);
}

double score_entropy(const std::array<double, 2>& bag_probs) {
  double h = 0.0;
  for (double p : bag_probs) h -= p * std::log(p + kKlEps);
  return h;
}

double score_least_confidence(const std::array<double, 2>& bag_probs) {
  return std::max(bag_probs[0], bag_probs[1]);
}

double score_grad_norm(const GradEmbedding& g) { return g.l2_norm(); }

double score_kl(const std::array<double, 2>& dist,
                const std::array<double, 2>& reference) {
  double kl = 0.0;
  for (int c = 0; c < 2; ++c)
    kl += dist[c] * std::log((dist[c] + kKlEps) / (reference[c] + kKlEps));
  return kl;
}

std::vector<int> kmeanspp_select(
    const std::vector<std::vector<double>>& embeddings, int k,
    std::mt19937_64& rng) {
  const auto n = static_cast<int>(embeddings.size());
  if (k < 1 || k > n)
    throw std::invalid_argument("kmeanspp_select: k out of range [1," +
                                std::to_string(n) + "]");
  auto dist2 = [&](int a, int b) {
    double s = 0.0;
    const auto& ea = embeddings[static_cast<std::size_t>(a)];
    const auto& eb = embeddings[static_cast<std::size_t>(b)];
    for (std::size_t i = 0; i < ea.size(); ++i) {
      const double d = ea[i] - eb[i];
      s += d * d;
    }
    return s;
  };

  // First center: largest-norm embedding, lowest index on ties.
  int first = 0;
  double best_norm = -1.0;
  for (int i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (double x : embeddings[static_cast<std::size_t>(i)]) norm2 += x * x;
    if (norm2 > best_norm) {
      best_norm = norm2;
      first = i;
    }
  }

  std::vector<int> chosen = {first};
  std::vector<char> is_chosen(static_cast<std::size_t>(n), 0);
  is_chosen[static_cast<std::size_t>(first)] = 1;
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    d2[static_cast<std::size_t>(i)] = is_chosen[static_cast<std::size_t>(i)]
                                          ? 0.0
                                          : dist2(i, first);

  while (static_cast<int>(chosen.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i)
      if (!is_chosen[static_cast<std::size_t>(i)])
        total += d2[static_cast<std::size_t>(i)];
    int pick = -1;
    if (total > 0.0) {
      std::uniform_real_distribution<double> dist(0.0, total);
      const double r = dist(rng);
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        if (is_chosen[static_cast<std::size_t>(i)]) continue;
        acc += d2[static_cast<std::size_t>(i)];
        pick = i; // keeps the last unchosen if r lands on the boundary
        if (acc >= r) break;
      }
    } else {
      // Every remaining point coincides with a center; pick uniformly.
      std::vector<int> unchosen;
      for (int i = 0; i < n; ++i)
        if (!is_chosen[static_cast<std::size_t>(i)]) unchosen.push_back(i);
      std::uniform_int_distribution<std::size_t> dist(0, unchosen.size() - 1);
      pick = unchosen[dist(rng)];
    }
    is_chosen[static_cast<std::size_t>(pick)] = 1;
    chosen.push_back(pick);
    for (int i = 0; i < n; ++i)
      if (!is_chosen[static_cast<std::size_t>(i)])
        d2[static_cast<std::size_t>(i)] =
            std::min(d2[static_cast<std::size_t>(i)], dist2(i, pick));
    d2[static_cast<std::size_t>(pick)] = 0.0;
  }
  return chosen;
}

SvmModel fit_linear_svm(const std::vector<std::vector<double>>& embeddings,
                        const std::vector<int>& labels, double reg_lambda,
                        int epochs, std::mt19937_64& rng) {
  const auto n = embeddings.size();
  if (n == 0 || labels.size() != n)
    throw std::invalid_argument("svm fit: embeddings/labels size mismatch");
  if (reg_lambda <= 0.0) throw std::invalid_argument("svm fit: lambda must be > 0");
  bool has_pos = false, has_neg = false;
  for (int l : labels) (l == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw std::invalid_argument("svm fit: single-class input");

  const auto dim = embeddings[0].size();
  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  const auto total_steps = static_cast<std::int64_t>(epochs) *
                           static_cast<std::int64_t>(n);
  const double cap = 1.0 / std::sqrt(reg_lambda);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  // Tail-average the iterates over the final half for a stable solution.
  std::vector<double> w_avg(dim, 0.0);
  double b_avg = 0.0;
  std::int64_t avg_count = 0;

  for (std::int64_t t = 1; t <= total_steps; ++t) {
    const std::size_t i = pick(rng);
    const auto& x = embeddings[i];
    const double y = labels[i] == 1 ? 1.0 : -1.0;
    const double eta = 1.0 / (reg_lambda * static_cast<double>(t));
    double margin = b;
    for (std::size_t d = 0; d < dim; ++d) margin += w[d] * x[d];
    margin *= y;

    const double shrink = 1.0 - eta * reg_lambda;
    for (auto& wd : w) wd *= shrink;
    if (margin < 1.0) {
      for (std::size_t d = 0; d < dim; ++d) w[d] += eta * y * x[d];
      b += eta * y;
    }
    double norm2 = 0.0;
    for (double wd : w) norm2 += wd * wd;
    const double norm = std::sqrt(norm2);
    if (norm > cap)
      for (auto& wd : w) wd *= cap / norm;

    if (t > total_steps / 2) {
      for (std::size_t d = 0; d < dim; ++d) w_avg[d] += w[d];
      b_avg += b;
      ++avg_count;
    }
  }

  SvmModel model;
  model.reg_lambda = reg_lambda;
  model.w.resize(dim);
  for (std::size_t d = 0; d < dim; ++d)
    model.w[d] = w_avg[d] / static_cast<double>(avg_count);
  model.b = b_avg / static_cast<double>(avg_count);
  return model;
}

double score_svm_margin(const std::vector<double>& embedding,
                        const SvmModel& model) {
  if (embedding.size() != model.w.size())
    throw std::invalid_argument("svm score: embedding width mismatch");
  double norm2 = 0.0;
  for (double wd : model.w) norm2 += wd * wd;
  if (norm2 == 0.0) throw std::runtime_error("degenerate SVM");
  double act = model.b;
  for (std::size_t d = 0; d < embedding.size(); ++d)
    act += model.w[d] * embedding[d];
  return std::abs(act) / std::sqrt(norm2);
}

std::vector<std::int64_t> select_k(std::vector<ScoredBag> scored, int k) {
  if (k < 0 || k > static_cast<int>(scored.size()))
    throw std::invalid_argument("select_k: k out of range");
  for (const auto& s : scored)
    if (!std::isfinite(s.score))
      throw std::runtime_error("non-finite sampling score for bag " +
                               std::to_string(s.bag_id));
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.bag_id < b.bag_id;
  });
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(scored[static_cast<std::size_t>(i)].bag_id);
  return out;
}

namespace {

std::vector<BagOutput> forward_pool(const ModelParams& snapshot,
                                    AggregationMode mode, const BagDataset& ds,
                                    const InstanceSet& instances,
                                    const std::vector<std::int64_t>& ids,
                                    int threads) {
  std::vector<BagOutput> outs(ids.size());
  parallel_chunks(static_cast<std::int64_t>(ids.size()), threads,
                  [&](int, std::int64_t b, std::int64_t e) {
                    for (std::int64_t i = b; i < e; ++i)
                      outs[static_cast<std::size_t>(i)] = forward_bag(
                          snapshot, ds.by_id(ids[static_cast<std::size_t>(i)]),
                          instances, mode);
                  });
  return outs;
}

// Project an embedding to two pseudo-class logits with a fixed seeded
// Gaussian matrix, then softmax.
std::array<double, 2> embedding_distribution(const std::vector<double>& emb) {
  std::mt19937_64 rng(kKlProjectionSeed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::array<double, 2> z{0.0, 0.0};
  for (int c = 0; c < 2; ++c)
    for (double e : emb) z[static_cast<std::size_t>(c)] += gauss(rng) * e;
  const double m = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

std::array<double, 2> mean_distribution(
    const std::vector<std::array<double, 2>>& dists) {
  std::array<double, 2> mean{0.0, 0.0};
  for (const auto& d : dists) {
    mean[0] += d[0];
    mean[1] += d[1];
  }
  const auto n = static_cast<double>(dists.size());
  return {mean[0] / n, mean[1] / n};
}

} // namespace

std::vector<std::int64_t> sample_negatives(
    const std::vector<std::int64_t>& pool_ids, StrategyKind strategy, int k,
    const ModelParams& snapshot, AggregationMode mode, const BagDataset& ds,
    const InstanceSet& instances, std::mt19937_64& rng, int threads) {
  if (pool_ids.empty()) throw std::invalid_argument("empty pool");
  if (k < 1 || k > static_cast<int>(pool_ids.size()))
    throw std::invalid_argument("k = " + std::to_string(k) +
                                " out of range for pool of " +
                                std::to_string(pool_ids.size()));

  if (strategy == StrategyKind::random) {
    std::vector<std::int64_t> ids = pool_ids;
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> dist(
          static_cast<std::size_t>(i), ids.size() - 1);
      std::swap(ids[static_cast<std::size_t>(i)], ids[dist(rng)]);
    }
    ids.resize(static_cast<std::size_t>(k));
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  const auto pool_outs =
      forward_pool(snapshot, mode, ds, instances, pool_ids, threads);

  if (strategy == StrategyKind::badge) {
    std::vector<std::vector<double>> embs;
    embs.reserve(pool_outs.size());
    for (const auto& out : pool_outs)
      embs.push_back(last_layer_gradient(out).g);
    const auto picked = kmeanspp_select(embs, k, rng);
    std::vector<std::int64_t> ids;
    ids.reserve(picked.size());
    for (int idx : picked) ids.push_back(pool_ids[static_cast<std::size_t>(idx)]);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  // Positive-bag statistics needed by the KL variants and the SVM fit.
  std::vector<BagOutput> pos_outs;
  if (strategy == StrategyKind::kl_prob ||
      strategy == StrategyKind::kl_embedding ||
      strategy == StrategyKind::svm_margin) {
    if (ds.positive_ids.empty())
      throw std::invalid_argument(to_string(strategy) +
                                  " requires positive training bags");
    pos_outs =
        forward_pool(snapshot, mode, ds, instances, ds.positive_ids, threads);
  }

  std::vector<ScoredBag> scored(pool_ids.size());
  switch (strategy) {
    case StrategyKind::margin:
    case StrategyKind::entropy:
    case StrategyKind::least_confidence:
    case StrategyKind::grad_embedding: {
      for (std::size_t i = 0; i < pool_ids.size(); ++i) {
        const auto& out = pool_outs[i];
        double s = 0.0;
        if (strategy == StrategyKind::margin)
          s = score_margin(out.bag_probs);
        else if (strategy == StrategyKind::entropy)
          s = -score_entropy(out.bag_probs);
        else if (strategy == StrategyKind::least_confidence)
          s = score_least_confidence(out.bag_probs);
        else
          s = -score_grad_norm(last_layer_gradient(out));
        scored[i] = {pool_ids[i], s};
      }
      break;
    }
    case StrategyKind::kl_prob: {
      std::vector<std::array<double, 2>> pos_dists;
      pos_dists.reserve(pos_outs.size());
      for (const auto& out : pos_outs) pos_dists.push_back(out.bag_probs);
      const auto ref = mean_distribution(pos_dists);
      for (std::size_t i = 0; i < pool_ids.size(); ++i)
        scored[i] = {pool_ids[i], score_kl(pool_outs[i].bag_probs, ref)};
      break;
    }
    case StrategyKind::kl_embedding: {
      std::vector<std::array<double, 2>> pos_dists;
      pos_dists.reserve(pos_outs.size());
      for (const auto& out : pos_outs)
        pos_dists.push_back(embedding_distribution(out.embedding));
      const auto ref = mean_distribution(pos_dists);
      for (std::size_t i = 0; i < pool_ids.size(); ++i)
        scored[i] = {pool_ids[i],
                     score_kl(embedding_distribution(pool_outs[i].embedding), ref)};
      break;
    }
    case StrategyKind::svm_margin: {
      std::vector<std::vector<double>> embs;
      std::vector<int> labels;
      embs.reserve(pos_outs.size() + pool_outs.size());
      for (const auto& out : pos_outs) {
        embs.push_back(out.embedding);
        labels.push_back(1);
      }
      for (const auto& out : pool_outs) {
        embs.push_back(out.embedding);
        labels.push_back(0);
      }
      const auto svm = fit_linear_svm(embs, labels, 1e-4, 10, rng);
      for (std::size_t i = 0; i < pool_ids.size(); ++i)
        scored[i] = {pool_ids[i],
                     score_svm_margin(pool_outs[i].embedding, svm)};
      break;
    }
    default:
      throw std::logic_error("unhandled strategy");
  }
  return select_k(std::move(scored), k);
}

} // namespace weaklab
