#include "weaklab/bagcore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_set>

#include <json.hpp>

#include "weaklab/errors.hpp"

namespace weaklab {

int weak_label(const std::vector<int>& instance_classes, int target_class) {
  if (instance_classes.empty()) throw std::invalid_argument("empty bag");
  for (int c : instance_classes)
    if (c == target_class) return 1;
  return 0;
}

const Bag& BagDataset::by_id(std::int64_t id) const {
  if (id < 0 || id >= num_bags())
    throw std::out_of_range("bag id " + std::to_string(id) + " out of range");
  return bags[static_cast<std::size_t>(id)];
}

void BagDataset::validate() const {
  if (bag_size < 1) throw std::invalid_argument("bag_size must be >= 1");
  std::unordered_set<std::int64_t> seen_instances;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const Bag& b = bags[i];
    if (b.id != static_cast<std::int64_t>(i))
      throw std::invalid_argument("bag ids must be contiguous from 0");
    if (static_cast<int>(b.instance_ids.size()) != bag_size)
      throw std::invalid_argument("bag " + std::to_string(b.id) +
                                  " has size " +
                                  std::to_string(b.instance_ids.size()) +
                                  ", expected " + std::to_string(bag_size));
    if (b.weak_label != 0 && b.weak_label != 1)
      throw std::invalid_argument("weak_label must be 0 or 1");
    if (b.positive_count < 0 || b.positive_count > bag_size)
      throw std::invalid_argument("positive_count out of range");
    if ((b.weak_label == 1) != (b.positive_count >= 1))
      throw std::invalid_argument("weak_label inconsistent with positive_count");
    for (std::int64_t iid : b.instance_ids)
      if (!seen_instances.insert(iid).second)
        throw std::invalid_argument("instance " + std::to_string(iid) +
                                    " occurs in more than one bag");
  }
  // The three id lists must partition all bags.
  std::vector<char> mark(bags.size(), 0);
  auto absorb = [&](const std::vector<std::int64_t>& ids, int expected_label,
                    const char* name) {
    for (std::int64_t id : ids) {
      if (id < 0 || id >= num_bags())
        throw std::invalid_argument(std::string(name) + " contains bad bag id");
      if (mark[static_cast<std::size_t>(id)]++)
        throw std::invalid_argument("bag " + std::to_string(id) +
                                    " listed in more than one pool");
      if (expected_label >= 0 &&
          bags[static_cast<std::size_t>(id)].weak_label != expected_label)
        throw std::invalid_argument(std::string(name) +
                                    " contains a bag with the wrong label");
    }
  };
  absorb(positive_ids, 1, "positive_ids");
  absorb(negative_ids, 0, "negative_ids");
  absorb(eval_ids, -1, "eval_ids");
  for (std::size_t i = 0; i < mark.size(); ++i)
    if (!mark[i])
      throw std::invalid_argument("bag " + std::to_string(i) +
                                  " missing from all pools");
}

namespace {

std::vector<Bag> build_bags(const InstanceSet& set, int target_class,
                            int bag_size, std::mt19937_64& rng) {
  std::vector<std::int64_t> targets, others;
  for (const auto& inst : set.instances)
    (inst.true_class == target_class ? targets : others).push_back(inst.id);

  if (set.size() < bag_size)
    throw ConfigError("insufficient instances: need at least " +
                      std::to_string(bag_size) + ", got " +
                      std::to_string(set.size()));
  if (targets.empty())
    throw ConfigError("insufficient instances: no instances of target class " +
                      std::to_string(target_class) +
                      ", cannot form a positive bag");

  std::shuffle(targets.begin(), targets.end(), rng);
  std::shuffle(others.begin(), others.end(), rng);

  std::vector<Bag> bags;
  std::uniform_int_distribution<int> count_dist(1, bag_size);
  std::size_t ti = 0, oi = 0;

  while (ti < targets.size()) {
    auto c = static_cast<std::int64_t>(count_dist(rng));
    c = std::min<std::int64_t>(c, static_cast<std::int64_t>(targets.size() - ti));
    std::int64_t fill = bag_size - c;
    auto avail = static_cast<std::int64_t>(others.size() - oi);
    if (avail < fill) {
      // Not enough non-target instances left; top up with extra targets
      // or stop and discard the remainder.
      std::int64_t extra = fill - avail;
      if (static_cast<std::int64_t>(targets.size() - ti) - c >= extra) {
        c += extra;
        fill -= extra;
      } else {
        break;
      }
    }
    Bag b;
    b.instance_ids.reserve(static_cast<std::size_t>(bag_size));
    for (std::int64_t j = 0; j < c; ++j) b.instance_ids.push_back(targets[ti++]);
    for (std::int64_t j = 0; j < fill; ++j) b.instance_ids.push_back(others[oi++]);
    std::shuffle(b.instance_ids.begin(), b.instance_ids.end(), rng);
    bags.push_back(std::move(b));
  }

  while (others.size() - oi >= static_cast<std::size_t>(bag_size)) {
    Bag b;
    for (int j = 0; j < bag_size; ++j) b.instance_ids.push_back(others[oi++]);
    bags.push_back(std::move(b));
  }

  std::shuffle(bags.begin(), bags.end(), rng);

  for (auto& b : bags) {
    std::vector<int> classes;
    classes.reserve(b.instance_ids.size());
    for (std::int64_t iid : b.instance_ids)
      classes.push_back(set.by_id(iid).true_class);
    b.positive_count =
        static_cast<int>(std::count(classes.begin(), classes.end(), target_class));
    b.weak_label = weak_label(classes, target_class);
  }
  return bags;
}

void assign_pools(BagDataset& ds, std::int64_t first, std::int64_t last,
                  bool as_eval) {
  for (std::int64_t i = first; i < last; ++i) {
    ds.bags[static_cast<std::size_t>(i)].id = i;
    if (as_eval)
      ds.eval_ids.push_back(i);
    else if (ds.bags[static_cast<std::size_t>(i)].weak_label == 1)
      ds.positive_ids.push_back(i);
    else
      ds.negative_ids.push_back(i);
  }
}

} // namespace

BagDataset make_bags(const InstanceSet& instances, int target_class,
                     int bag_size, std::uint64_t seed) {
  if (bag_size <= 0)
    throw ConfigError("bag_size must be >= 1, got " + std::to_string(bag_size));
  std::mt19937_64 rng(seed);
  BagDataset ds;
  ds.target_class = target_class;
  ds.bag_size = bag_size;
  ds.seed = seed;
  ds.bags = build_bags(instances, target_class, bag_size, rng);
  assign_pools(ds, 0, ds.num_bags(), /*as_eval=*/false);
  ds.validate();
  return ds;
}

BagDataset make_bags(const InstanceSet& train_instances,
                     const InstanceSet& eval_instances, int target_class,
                     int bag_size, std::uint64_t seed) {
  if (bag_size <= 0)
    throw ConfigError("bag_size must be >= 1, got " + std::to_string(bag_size));
  for (const auto& inst : eval_instances.instances)
    if (train_instances.has_id(inst.id))
      throw std::invalid_argument(
          "train and eval instance sets share instance id " +
          std::to_string(inst.id));
  std::mt19937_64 rng(seed);
  BagDataset ds;
  ds.target_class = target_class;
  ds.bag_size = bag_size;
  ds.seed = seed;
  ds.bags = build_bags(train_instances, target_class, bag_size, rng);
  const auto num_train = ds.num_bags();
  auto eval_bags = build_bags(eval_instances, target_class, bag_size, rng);
  for (auto& b : eval_bags) ds.bags.push_back(std::move(b));
  assign_pools(ds, 0, num_train, /*as_eval=*/false);
  assign_pools(ds, num_train, ds.num_bags(), /*as_eval=*/true);
  ds.validate();
  return ds;
}

BagDataset with_eval_split(const BagDataset& ds, double eval_fraction,
                           std::uint64_t seed) {
  if (eval_fraction < 0.0 || eval_fraction >= 1.0)
    throw ConfigError("eval_fraction must be in [0,1)");
  if (!ds.eval_ids.empty())
    throw std::invalid_argument("dataset already has an evaluation split");
  BagDataset out = ds;
  if (eval_fraction == 0.0) return out;
  out.positive_ids.clear();
  out.negative_ids.clear();
  out.eval_ids.clear();
  std::mt19937_64 rng(seed);
  // Stratified by weak label so eval mirrors the training label scheme.
  auto carve = [&](const std::vector<std::int64_t>& ids,
                   std::vector<std::int64_t>& keep) {
    std::vector<std::int64_t> shuffled = ids;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto n_eval = static_cast<std::size_t>(
        std::llround(eval_fraction * static_cast<double>(ids.size())));
    for (std::size_t i = 0; i < shuffled.size(); ++i)
      (i < n_eval ? out.eval_ids : keep).push_back(shuffled[i]);
  };
  carve(ds.positive_ids, out.positive_ids);
  carve(ds.negative_ids, out.negative_ids);
  std::sort(out.positive_ids.begin(), out.positive_ids.end());
  std::sort(out.negative_ids.begin(), out.negative_ids.end());
  std::sort(out.eval_ids.begin(), out.eval_ids.end());
  out.validate();
  return out;
}

std::pair<const std::vector<std::int64_t>&, const std::vector<std::int64_t>&>
split_pools(const BagDataset& ds) {
  return {ds.positive_ids, ds.negative_ids};
}

void save_bag_dataset(const BagDataset& ds, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "weaklab.bags";
  j["version"] = 1;
  j["bag_size"] = ds.bag_size;
  j["target_class"] = ds.target_class;
  j["seed"] = ds.seed;
  j["num_bags"] = ds.num_bags();
  j["num_positive"] = ds.positive_ids.size();
  j["num_negative"] = ds.negative_ids.size();
  j["num_eval"] = ds.eval_ids.size();
  nlohmann::json bags = nlohmann::json::array();
  for (const Bag& b : ds.bags)
    bags.push_back({b.id, b.weak_label, b.positive_count, b.instance_ids});
  j["bags"] = std::move(bags);
  j["positive_ids"] = ds.positive_ids;
  j["negative_ids"] = ds.negative_ids;
  j["eval_ids"] = ds.eval_ids;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump();
  out << "\n";
}

BagDataset load_bag_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != "weaklab.bags")
    throw std::runtime_error(path.string() + ": not a weaklab bag dataset");
  if (j.value("version", 0) != 1)
    throw std::runtime_error(path.string() + ": unsupported version");
  BagDataset ds;
  ds.bag_size = j.at("bag_size").get<int>();
  ds.target_class = j.at("target_class").get<int>();
  ds.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& rec : j.at("bags")) {
    Bag b;
    b.id = rec.at(0).get<std::int64_t>();
    b.weak_label = rec.at(1).get<int>();
    b.positive_count = rec.at(2).get<int>();
    b.instance_ids = rec.at(3).get<std::vector<std::int64_t>>();
    ds.bags.push_back(std::move(b));
  }
  ds.positive_ids = j.at("positive_ids").get<std::vector<std::int64_t>>();
  ds.negative_ids = j.at("negative_ids").get<std::vector<std::int64_t>>();
  ds.eval_ids = j.at("eval_ids").get<std::vector<std::int64_t>>();
  ds.validate();
  return ds;
}

} // namespace weaklab
