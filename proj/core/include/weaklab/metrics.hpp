#pragma once

#include <cstdint>
#include <vector>

namespace weaklab {

struct EvalRecord {
  std::int64_t bag_id = 0;
  double score = 0.0; // positive-class probability
  int label = 0;      // 0/1
};

// Mean of precision-at-rank over positives, ranks ordered by descending
// score with ties broken by ascending bag_id. Throws "AP undefined" when
// no positive label is present.
double average_precision(const std::vector<EvalRecord>& records);

// Probability that a random positive outscores a random negative, ties
// counted 0.5 (rank-statistic form). Throws "AUC undefined" unless both
// classes are present.
double roc_auc(const std::vector<EvalRecord>& records);

// Fraction of records where (score >= threshold) differs from the label.
double zero_one_error(const std::vector<EvalRecord>& records,
                      double threshold = 0.5);

} // namespace weaklab
