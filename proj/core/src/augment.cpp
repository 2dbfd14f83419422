#include "weaklab/augment.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "weaklab/errors.hpp"

namespace weaklab {

void MixupConfig::validate() const {
  if (alpha <= 0.0) throw ConfigError("mixup.alpha must be > 0");
  if (rate < 0.0 || rate > 1.0) throw ConfigError("mixup.rate must be in [0,1]");
}

double sample_lambda(double alpha, std::mt19937_64& rng) {
  if (alpha <= 0.0) throw std::invalid_argument("alpha must be > 0");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  if (a + b == 0.0) return 0.5; // both draws underflowed
  return a / (a + b);
}

std::pair<Tensor, SoftLabel> mixup(const Tensor& xi, const SoftLabel& yi,
                                   const Tensor& xj, const SoftLabel& yj,
                                   double lambda) {
  if (!xi.same_shape(xj))
    throw std::invalid_argument("mixup shape mismatch: " +
                                shape_to_string(xi.shape) + " vs " +
                                shape_to_string(xj.shape));
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("lambda must be in [0,1]");
  Tensor out(xi.shape);
  const auto lam = static_cast<float>(lambda);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = lam * xi.data[i] + (1.0f - lam) * xj.data[i];
  SoftLabel y{lambda * yi[0] + (1.0 - lambda) * yj[0],
              lambda * yi[1] + (1.0 - lambda) * yj[1]};
  return {std::move(out), y};
}

Tensor mask(const Tensor& spec, MaskAxis axis, int max_width, float fill,
            std::mt19937_64& rng) {
  if (spec.shape.size() != 2)
    throw std::invalid_argument("mask expects a 2-D (time x freq) tensor");
  const int len = axis == MaskAxis::time ? spec.shape[0] : spec.shape[1];
  if (max_width < 0 || max_width > len)
    throw std::invalid_argument("mask width " + std::to_string(max_width) +
                                " exceeds axis length " + std::to_string(len));
  std::uniform_int_distribution<int> width_dist(0, max_width);
  const int w = width_dist(rng);
  std::uniform_int_distribution<int> start_dist(0, len - w);
  const int s = start_dist(rng);

  Tensor out = spec;
  if (w == 0) return out;
  const int rows = spec.shape[0];
  if (axis == MaskAxis::time) {
    for (int t = s; t < s + w; ++t)
      for (int f = 0; f < spec.shape[1]; ++f) out.at(t, f) = fill;
  } else {
    for (int t = 0; t < rows; ++t)
      for (int f = s; f < s + w; ++f) out.at(t, f) = fill;
  }
  return out;
}

std::vector<std::optional<MixupPair>> plan_mixup(int batch_size,
                                                 const MixupConfig& cfg,
                                                 std::mt19937_64& rng) {
  cfg.validate();
  if (batch_size < 0) throw std::invalid_argument("negative batch size");
  std::vector<int> perm(static_cast<std::size_t>(batch_size));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::optional<MixupPair>> plan(
      static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    if (unit(rng) < cfg.rate)
      plan[static_cast<std::size_t>(i)] =
          MixupPair{perm[static_cast<std::size_t>(i)],
                    sample_lambda(cfg.alpha, rng)};
  }
  return plan;
}

} // namespace weaklab
