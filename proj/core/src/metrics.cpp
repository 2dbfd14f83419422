#include "weaklab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace weaklab {

namespace {

void check_records(const std::vector<EvalRecord>& records) {
  for (const auto& r : records) {
    if (!std::isfinite(r.score))
      throw std::invalid_argument("non-finite score for bag " +
                                  std::to_string(r.bag_id));
    if (r.label != 0 && r.label != 1)
      throw std::invalid_argument("label must be 0 or 1");
  }
}

} // namespace

double average_precision(const std::vector<EvalRecord>& records) {
  check_records(records);
  std::vector<EvalRecord> sorted = records;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.bag_id < b.bag_id;
  });
  double sum_prec = 0.0;
  std::int64_t positives = 0;
  for (std::size_t rank = 0; rank < sorted.size(); ++rank) {
    if (sorted[rank].label == 1) {
      ++positives;
      sum_prec += static_cast<double>(positives) / static_cast<double>(rank + 1);
    }
  }
  if (positives == 0) throw std::invalid_argument("AP undefined: no positives");
  return sum_prec / static_cast<double>(positives);
}

double roc_auc(const std::vector<EvalRecord>& records) {
  check_records(records);
  std::vector<EvalRecord> sorted = records;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.score < b.score; });
  const auto n = sorted.size();
  std::int64_t positives = 0;
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    // Average rank over each tie group (1-based ranks).
    std::size_t j = i;
    while (j < n && sorted[j].score == sorted[i].score) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j); // (i+1 + j)/2
    for (std::size_t t = i; t < j; ++t) {
      if (sorted[t].label == 1) {
        ++positives;
        pos_rank_sum += avg_rank;
      }
    }
    i = j;
  }
  const auto negatives = static_cast<std::int64_t>(n) - positives;
  if (positives == 0 || negatives == 0)
    throw std::invalid_argument("AUC undefined: single class");
  const double p = static_cast<double>(positives);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) /
         (p * static_cast<double>(negatives));
}

double zero_one_error(const std::vector<EvalRecord>& records, double threshold) {
  if (records.empty())
    throw std::invalid_argument("zero_one_error on empty records");
  check_records(records);
  std::int64_t wrong = 0;
  for (const auto& r : records) {
    const int pred = r.score >= threshold ? 1 : 0;
    if (pred != r.label) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(records.size());
}

} // namespace weaklab
