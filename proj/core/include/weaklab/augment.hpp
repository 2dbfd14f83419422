#pragma once

#include <array>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "weaklab/tensor.hpp"

namespace weaklab {

struct MixupConfig {
  double alpha = 10.0; // Beta(alpha, alpha) parameter
  double rate = 0.5;   // fraction of batch items mixed

  void validate() const;
};

struct MaskConfig {
  int freq_max_width = 48;  // F
  int time_max_width = 192; // T
  float fill_value = 0.0f;
};

enum class MaskAxis { time, frequency };

using SoftLabel = std::array<double, 2>;

// One draw from Beta(alpha, alpha) via the ratio of two Gamma(alpha) draws.
double sample_lambda(double alpha, std::mt19937_64& rng);

// x = lambda*xi + (1-lambda)*xj, same for the labels.
std::pair<Tensor, SoftLabel> mixup(const Tensor& xi, const SoftLabel& yi,
                                   const Tensor& xj, const SoftLabel& yj,
                                   double lambda);

// Sets one contiguous window (width ~ U{0..max_width}, start ~ U{0..len-w})
// along the given axis to fill; everything else is bit-identical to the
// input. Tensors are (time, freq): axis time masks rows, frequency masks
// columns. width 0 is a no-op.
Tensor mask(const Tensor& spec, MaskAxis axis, int max_width, float fill,
            std::mt19937_64& rng);

// Batch mixing plan: a seeded permutation of the batch against itself,
// each pair gated by Bernoulli(rate) with its own lambda draw. The caller
// applies entries to its batch items; nullopt means "leave item i alone".
struct MixupPair {
  int partner = 0;
  double lambda = 1.0;
};
std::vector<std::optional<MixupPair>> plan_mixup(int batch_size,
                                                 const MixupConfig& cfg,
                                                 std::mt19937_64& rng);

} // namespace weaklab
