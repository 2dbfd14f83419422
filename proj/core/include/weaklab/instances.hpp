#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "weaklab/tensor.hpp"

namespace weaklab {

// One labeled data point. true_class is kept for bag construction and
// diagnostics only; it is never shown to the model.
struct Instance {
  std::int64_t id = 0;
  Tensor features;
  int true_class = 0;
};

enum class SourceTag { cifar10, gaussian, synth_spec };

std::string to_string(SourceTag tag);

// A homogeneous collection of instances. validate() is called by every
// loader/generator before the set is handed out.
struct InstanceSet {
  std::vector<Instance> instances;
  std::vector<int> feature_shape;
  int num_classes = 0;
  SourceTag source = SourceTag::gaussian;

  std::int64_t size() const { return static_cast<std::int64_t>(instances.size()); }

  const Instance& by_id(std::int64_t id) const;
  bool has_id(std::int64_t id) const { return index_.count(id) != 0; }

  // Checks: unique ids, uniform shapes, finite features, classes in range.
  void validate() const;

  // Rebuilds the id -> index lookup; loaders call it once after filling.
  void reindex();

private:
  std::unordered_map<std::int64_t, std::size_t> index_;
};

// Copy with every instance id shifted by offset.
InstanceSet with_id_offset(const InstanceSet& set, std::int64_t offset);

// Concatenation of two sets with identical shape/source; ids must not
// collide. Used to hold train and eval instances in one lookup table.
InstanceSet merge_sets(const InstanceSet& a, const InstanceSet& b);

// Seeded sample of `count` instances without replacement, original ids kept.
InstanceSet subset_instances(const InstanceSet& set, std::int64_t count,
                             std::uint64_t seed);

} // namespace weaklab
