#include "weaklab/instances.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace weaklab {

std::string to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::cifar10: return "cifar10";
    case SourceTag::gaussian: return "gaussian";
    case SourceTag::synth_spec: return "synth_spec";
  }
  return "unknown";
}

const Instance& InstanceSet::by_id(std::int64_t id) const {
  auto it = index_.find(id);
  if (it == index_.end())
    throw std::out_of_range("instance id " + std::to_string(id) + " not in set");
  return instances[it->second];
}

void InstanceSet::reindex() {
  index_.clear();
  index_.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto [_, inserted] = index_.emplace(instances[i].id, i);
    if (!inserted)
      throw std::invalid_argument("duplicate instance id " +
                                  std::to_string(instances[i].id));
  }
}

void InstanceSet::validate() const {
  if (index_.size() != instances.size())
    throw std::logic_error("instance set not indexed; call reindex()");
  for (const auto& inst : instances) {
    if (inst.features.shape != feature_shape)
      throw std::invalid_argument(
          "instance " + std::to_string(inst.id) + " shape " +
          shape_to_string(inst.features.shape) + " != set shape " +
          shape_to_string(feature_shape));
    if (inst.true_class < 0 || inst.true_class >= num_classes)
      throw std::invalid_argument("class out of range: instance " +
                                  std::to_string(inst.id) + " has class " +
                                  std::to_string(inst.true_class));
    for (float v : inst.features.data)
      if (!std::isfinite(v))
        throw std::invalid_argument("non-finite feature in instance " +
                                    std::to_string(inst.id));
  }
}

InstanceSet with_id_offset(const InstanceSet& set, std::int64_t offset) {
  InstanceSet out = set;
  for (auto& inst : out.instances) inst.id += offset;
  out.reindex();
  return out;
}

InstanceSet merge_sets(const InstanceSet& a, const InstanceSet& b) {
  if (a.feature_shape != b.feature_shape)
    throw std::invalid_argument("cannot merge sets with different shapes");
  if (a.num_classes != b.num_classes || a.source != b.source)
    throw std::invalid_argument("cannot merge sets from different sources");
  InstanceSet out = a;
  out.instances.insert(out.instances.end(), b.instances.begin(),
                       b.instances.end());
  out.reindex();
  return out;
}

InstanceSet subset_instances(const InstanceSet& set, std::int64_t count,
                             std::uint64_t seed) {
  if (count < 0 || count > set.size())
    throw std::invalid_argument("subset count out of range");
  std::vector<std::size_t> idx(set.instances.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  InstanceSet out;
  out.feature_shape = set.feature_shape;
  out.num_classes = set.num_classes;
  out.source = set.source;
  out.instances.reserve(idx.size());
  for (std::size_t i : idx) out.instances.push_back(set.instances[i]);
  out.reindex();
  return out;
}

} // namespace weaklab
