#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "weaklab/instances.hpp"

namespace weaklab {

// A fixed-size group of instances carrying one weak binary label.
// positive_count is a construction diagnostic, hidden from training.
struct Bag {
  std::int64_t id = 0;
  std::vector<std::int64_t> instance_ids;
  int weak_label = 0;
  int positive_count = 0;
};

// Labeled bag collection: S+ (positive_ids), the negative pool N
// (negative_ids), and a held-out evaluation split. Immutable after
// construction; safe to share across threads read-only.
struct BagDataset {
  std::vector<Bag> bags;
  std::vector<std::int64_t> positive_ids; // training S+
  std::vector<std::int64_t> negative_ids; // training pool N
  std::vector<std::int64_t> eval_ids;     // held-out bags
  int target_class = 0;
  int bag_size = 0;
  std::uint64_t seed = 0;

  std::int64_t num_bags() const { return static_cast<std::int64_t>(bags.size()); }
  const Bag& by_id(std::int64_t id) const;

  // Structural invariants: disjoint pools covering all training bags,
  // uniform bag size, instance-disjointness, label/id consistency.
  void validate() const;
};

// 1 iff any instance class equals target_class. Throws on an empty bag.
int weak_label(const std::vector<int>& instance_classes, int target_class);

// Partitions instances into disjoint bags of exactly bag_size (remainder
// discarded). Positive bags draw positive_count uniformly from
// {1..bag_size} subject to availability; negative bags contain no
// target-class instance. Deterministic under seed. All bags are training
// bags; see the overload and with_eval_split for evaluation splits.
BagDataset make_bags(const InstanceSet& instances, int target_class,
                     int bag_size, std::uint64_t seed);

// Same construction, with evaluation bags built from a separate instance
// split (the source's standard test split).
BagDataset make_bags(const InstanceSet& train_instances,
                     const InstanceSet& eval_instances, int target_class,
                     int bag_size, std::uint64_t seed);

// Moves a seeded, label-stratified fraction of a dataset's training bags
// into the evaluation split. Returns a new dataset.
BagDataset with_eval_split(const BagDataset& ds, double eval_fraction,
                           std::uint64_t seed);

// The S+ index set and the full negative pool N, by reference (no copies).
std::pair<const std::vector<std::int64_t>&, const std::vector<std::int64_t>&>
split_pools(const BagDataset& ds);

// Versioned JSON container: header (bag_size, target_class, seed, counts)
// plus per-bag records (id, instance ids, weak_label, positive_count).
void save_bag_dataset(const BagDataset& ds, const std::filesystem::path& path);
BagDataset load_bag_dataset(const std::filesystem::path& path);

} // namespace weaklab
