#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "weaklab/instances.hpp"

namespace weaklab {

// Recipe for a synthetic instance set. shape is the per-instance feature
// shape: {dim} for Gaussian point clouds, {time_frames, freq_bins} for
// spectrogram-like tensors.
struct SyntheticConfig {
  int num_classes = 2;
  int per_class_count = 100;
  std::vector<int> shape = {2};
  double class_mean_separation = 6.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class CifarSplit { train, test };

// Reads standard CIFAR-10 binary batches (3073-byte records: 1 label byte
// + 3072 pixel bytes, row-major R,G,B planes). train reads data_batch_*.bin
// in name order, test reads test_batch.bin. Pixels are scaled to [0,1]
// then normalized by per-channel mean 0.5 / std 0.5. Instance ids follow
// (file, record) order.
InstanceSet load_cifar10(const std::filesystem::path& dir,
                         CifarSplit split = CifarSplit::train);

// Per class, per_class_count points from an isotropic Gaussian around a
// class mean; means are placed so every pair is >= class_mean_separation
// apart. Deterministic under cfg.seed.
InstanceSet gen_gaussian_instances(const SyntheticConfig& cfg);

// Class-dependent band-limited patterns of shape (time, freq): Gaussian
// noise everywhere plus a constant lift of class_mean_separation inside
// the class's frequency band.
InstanceSet gen_synthetic_spectrograms(const SyntheticConfig& cfg);

// Frequency band [first, last) that class c's energy lift occupies.
std::pair<int, int> spectrogram_class_band(int cls, int num_classes,
                                           int freq_bins);

} // namespace weaklab
