#include "weaklab/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "weaklab/errors.hpp"

namespace weaklab {

void SyntheticConfig::validate() const {
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (per_class_count < 1) throw ConfigError("per_class_count must be >= 1");
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  if (class_mean_separation < 0.0)
    throw ConfigError("class_mean_separation must be >= 0");
  if (shape.empty() || Tensor::numel_of(shape) < 1)
    throw ConfigError("feature shape must be non-empty");
}

namespace {

constexpr std::size_t kCifarRecordBytes = 3073; // 1 label + 3*1024 pixels
constexpr int kCifarClasses = 10;

void read_cifar_file(const std::filesystem::path& file, InstanceSet& set,
                     std::int64_t& next_id) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("missing file: " + file.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  if (bytes == 0 || bytes % kCifarRecordBytes != 0)
    throw std::runtime_error("corrupt batch: " + file.string() + " has " +
                             std::to_string(bytes) +
                             " bytes, not a multiple of 3073");
  const auto records = bytes / kCifarRecordBytes;
  std::vector<unsigned char> rec(kCifarRecordBytes);
  for (std::uint64_t r = 0; r < records; ++r) {
    if (!in.read(reinterpret_cast<char*>(rec.data()), kCifarRecordBytes))
      throw std::runtime_error("corrupt batch: short read in " + file.string());
    const int label = rec[0];
    if (label >= kCifarClasses)
      throw std::runtime_error("class out of range: label byte " +
                               std::to_string(label) + " in " + file.string());
    Instance inst;
    inst.id = next_id++;
    inst.true_class = label;
    inst.features = Tensor({3, 32, 32});
    for (std::size_t i = 0; i < 3072; ++i) {
      const float v = static_cast<float>(rec[1 + i]) / 255.0f;
      inst.features.data[i] = (v - 0.5f) / 0.5f;
    }
    set.instances.push_back(std::move(inst));
  }
}

} // namespace

InstanceSet load_cifar10(const std::filesystem::path& dir, CifarSplit split) {
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error("missing file: " + dir.string() +
                             " is not a directory");
  std::vector<std::filesystem::path> files;
  if (split == CifarSplit::train) {
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("data_batch_", 0) == 0 && name.ends_with(".bin"))
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw std::runtime_error("missing file: no data_batch_*.bin under " +
                               dir.string());
  } else {
    files.push_back(dir / "test_batch.bin");
  }

  InstanceSet set;
  set.feature_shape = {3, 32, 32};
  set.num_classes = kCifarClasses;
  set.source = SourceTag::cifar10;
  std::int64_t next_id = 0;
  for (const auto& f : files) read_cifar_file(f, set, next_id);
  set.reindex();
  set.validate();
  return set;
}

InstanceSet gen_gaussian_instances(const SyntheticConfig& cfg) {
  cfg.validate();
  if (cfg.shape.size() != 1)
    throw ConfigError("gaussian instances need a 1-D feature shape");
  const int dim = cfg.shape[0];
  const int k = cfg.num_classes;

  // Class means: on a line for dim 1, otherwise on a circle in the first
  // two coordinates with adjacent chord length = class_mean_separation.
  std::vector<std::vector<double>> means(static_cast<std::size_t>(k),
                                         std::vector<double>(dim, 0.0));
  if (dim == 1) {
    for (int c = 0; c < k; ++c) means[c][0] = c * cfg.class_mean_separation;
  } else {
    const double radius =
        k == 1 ? 0.0
               : cfg.class_mean_separation /
                     (2.0 * std::sin(std::numbers::pi / k));
    for (int c = 0; c < k; ++c) {
      const double angle = 2.0 * std::numbers::pi * c / k;
      means[c][0] = radius * std::cos(angle);
      means[c][1] = radius * std::sin(angle);
    }
  }

  InstanceSet set;
  set.feature_shape = cfg.shape;
  set.num_classes = k;
  set.source = SourceTag::gaussian;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::int64_t next_id = 0;
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < cfg.per_class_count; ++i) {
      Instance inst;
      inst.id = next_id++;
      inst.true_class = c;
      inst.features = Tensor(cfg.shape);
      for (int d = 0; d < dim; ++d)
        inst.features.data[d] =
            static_cast<float>(means[c][d] + cfg.noise_std * noise(rng));
      set.instances.push_back(std::move(inst));
    }
  }
  set.reindex();
  set.validate();
  return set;
}

std::pair<int, int> spectrogram_class_band(int cls, int num_classes,
                                           int freq_bins) {
  const int bw = std::max(1, freq_bins / num_classes);
  const int first = std::min(cls * bw, freq_bins - bw);
  return {first, first + bw};
}

InstanceSet gen_synthetic_spectrograms(const SyntheticConfig& cfg) {
  cfg.validate();
  if (cfg.shape.size() != 2)
    throw ConfigError("spectrogram shape must be 2-D (time x freq), got " +
                      shape_to_string(cfg.shape));
  const int frames = cfg.shape[0];
  const int bins = cfg.shape[1];

  InstanceSet set;
  set.feature_shape = cfg.shape;
  set.num_classes = cfg.num_classes;
  set.source = SourceTag::synth_spec;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::int64_t next_id = 0;
  for (int c = 0; c < cfg.num_classes; ++c) {
    const auto [band_lo, band_hi] =
        spectrogram_class_band(c, cfg.num_classes, bins);
    for (int i = 0; i < cfg.per_class_count; ++i) {
      Instance inst;
      inst.id = next_id++;
      inst.true_class = c;
      inst.features = Tensor(cfg.shape);
      for (int t = 0; t < frames; ++t)
        for (int f = 0; f < bins; ++f) {
          double v = cfg.noise_std * noise(rng);
          if (f >= band_lo && f < band_hi) v += cfg.class_mean_separation;
          inst.features.at(t, f) = static_cast<float>(v);
        }
      set.instances.push_back(std::move(inst));
    }
  }
  set.reindex();
  set.validate();
  return set;
}

} // namespace weaklab
