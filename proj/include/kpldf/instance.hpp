#pragma once

// Knapsack instances, labeled datasets and the capacity-graded generator.
//
// The generator draws item weights and values i.i.d. uniform on [0,1) and
// sets the capacity of the j-th instance (1-indexed) to
//
//   W_j = j/(S+1) * sum_i w_ij
//
// so capacities sweep the full range from near-empty to near-full knapsacks.
// Instance ids are assigned pre-shuffle (id = j-1), the id order is the file
// order, and the train/val/test split is drawn from a seeded shuffle of the
// ids so every split covers all capacity regimes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "kpldf/rng.hpp"

namespace kpldf {

struct KnapsackInstance {
  std::uint64_t id = 0;
  std::vector<double> weights;
  std::vector<double> values;
  double capacity = 0.0;

  std::size_t size() const { return weights.size(); }

  double total_weight() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }

  double total_value() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
};

// Throws std::invalid_argument naming the instance id. Loaded instances only
// need non-negative weights/values; the [0,1) range is a property of the
// generator, not an invariant.
inline void validate_instance(const KnapsackInstance& inst) {
  const std::string tag = "instance " + std::to_string(inst.id) + ": ";
  if (inst.weights.empty()) {
    throw std::invalid_argument(tag + "no items");
  }
  if (inst.weights.size() != inst.values.size()) {
    throw std::invalid_argument(tag + "weights/values length mismatch (" +
                                std::to_string(inst.weights.size()) + " vs " +
                                std::to_string(inst.values.size()) + ")");
  }
  for (double w : inst.weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument(tag + "negative or non-finite weight");
    }
  }
  for (double v : inst.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(tag + "negative or non-finite value");
    }
  }
  const double total = inst.total_weight();
  if (!(inst.capacity >= 0.0) || !std::isfinite(inst.capacity)) {
    throw std::invalid_argument(tag + "negative or non-finite capacity");
  }
  if (inst.capacity > total * (1.0 + 1e-12) + 1e-12) {
    throw std::invalid_argument(tag + "capacity exceeds total item weight");
  }
}

// Total weight of a 0/1 selection, summed in ascending item order.
inline double selection_weight(const std::vector<std::uint8_t>& x,
                               const KnapsackInstance& inst) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i]) s += inst.weights[i];
  }
  return s;
}

// Total value of a 0/1 selection, summed in ascending item order.
inline double selection_value(const std::vector<std::uint8_t>& x,
                              const KnapsackInstance& inst) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i]) s += inst.values[i];
  }
  return s;
}

// Capacity relative to total item weight, the difficulty proxy used for the
// quintile breakdown in reports.
inline double alpha(const KnapsackInstance& inst) {
  const double total = inst.total_weight();
  if (!(total > 0.0)) {
    throw std::domain_error("instance " + std::to_string(inst.id) +
                            ": zero total weight, alpha undefined");
  }
  return inst.capacity / total;
}

struct LabeledInstance {
  KnapsackInstance instance;
  std::vector<std::uint8_t> label;  // empty means unlabeled
  double optimal_value = 0.0;

  bool labeled() const { return !label.empty(); }
};

// Throws if the label is present but inconsistent with the instance.
inline void validate_label(const LabeledInstance& li) {
  if (!li.labeled()) return;
  const std::string tag =
      "instance " + std::to_string(li.instance.id) + ": ";
  if (li.label.size() != li.instance.size()) {
    throw std::invalid_argument(tag + "label length mismatch");
  }
  for (std::uint8_t b : li.label) {
    if (b > 1) throw std::invalid_argument(tag + "label entry not 0/1");
  }
  const double w = selection_weight(li.label, li.instance);
  if (w > li.instance.capacity + 1e-9) {
    throw std::invalid_argument(tag + "infeasible label");
  }
  const double v = selection_value(li.label, li.instance);
  if (std::abs(v - li.optimal_value) > 1e-9) {
    throw std::invalid_argument(tag + "optimal_value does not match label");
  }
}

struct SplitIndices {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> val;
  std::vector<std::uint64_t> test;
};

struct Dataset {
  std::uint64_t n_items = 0;
  std::uint64_t seed = 0;
  std::vector<LabeledInstance> items;  // ordered by id
  SplitIndices split;                  // disjoint id sets, stored sorted
};

namespace detail {
// Substream tags: tag 0 drives the split shuffle, tag j >= 1 drives the
// draws of instance j.
constexpr std::uint64_t kShuffleTag = 0;
}  // namespace detail

inline Dataset generate_dataset(std::size_t n_items, std::size_t n_instances,
                                std::uint64_t seed) {
  if (n_items < 1) throw std::invalid_argument("n_items must be >= 1");
  if (n_instances < 1) throw std::invalid_argument("n_instances must be >= 1");

  Dataset ds;
  ds.n_items = n_items;
  ds.seed = seed;
  ds.items.resize(n_instances);

  const double denom = static_cast<double>(n_instances) + 1.0;
  for (std::size_t j = 1; j <= n_instances; ++j) {
    Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(j));
    LabeledInstance& li = ds.items[j - 1];
    KnapsackInstance& inst = li.instance;
    inst.id = static_cast<std::uint64_t>(j - 1);
    inst.weights.resize(n_items);
    inst.values.resize(n_items);
    for (std::size_t i = 0; i < n_items; ++i) inst.weights[i] = rng.next_double();
    for (std::size_t i = 0; i < n_items; ++i) inst.values[i] = rng.next_double();
    inst.capacity = (static_cast<double>(j) / denom) * inst.total_weight();
  }

  // Shuffle ids, then carve off val/test tenths; the remainder trains.
  std::vector<std::uint64_t> ids(n_instances);
  for (std::size_t i = 0; i < n_instances; ++i) ids[i] = i;
  Rng shuf = Rng::substream(seed, detail::kShuffleTag);
  shuf.shuffle(ids);

  const std::size_t n_val = n_instances / 10;
  const std::size_t n_test = n_instances / 10;
  const std::size_t n_train = n_instances - n_val - n_test;
  ds.split.train.assign(ids.begin(), ids.begin() + n_train);
  ds.split.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  ds.split.test.assign(ids.begin() + n_train + n_val, ids.end());
  std::sort(ds.split.train.begin(), ds.split.train.end());
  std::sort(ds.split.val.begin(), ds.split.val.end());
  std::sort(ds.split.test.begin(), ds.split.test.end());
  return ds;
}

}  // namespace kpldf
