#pragma once

// Exact 0-1 knapsack solving for real-valued weights.
//
// solve_exact runs depth-first branch and bound over items sorted by
// value/weight ratio (descending, ties by original index), pruning with the
// Dantzig fractional bound: greedily fill the remaining capacity in ratio
// order and take a fractional share of the first item that does not fit.
// Real weights rule out the classic integer DP.
//
// Determinism contract: among equal-objective optima both solvers return the
// selection that is lexicographically smallest in original item order, and
// both report the objective re-summed over the selection in ascending item
// order, so the brute-force oracle and the branch-and-bound solver agree
// bit-for-bit.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "kpldf/instance.hpp"

namespace kpldf {

struct SolveResult {
  std::vector<std::uint8_t> selection;
  double objective = 0.0;
  std::uint64_t nodes_explored = 0;
};

namespace detail {

// Lexicographic order over selections in original item order, 0 < 1.
inline bool lex_less(const std::vector<std::uint8_t>& a,
                     const std::vector<std::uint8_t>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

constexpr std::uint64_t kNodeLimit = 1'000'000'000ull;

// Slack on bound comparisons so float rounding can never prune a subtree
// holding an optimal or tie-for-optimal selection.
constexpr double kBoundSlack = 1e-9;

struct BranchAndBound {
  const KnapsackInstance& inst;
  std::vector<std::size_t> order;   // branch item -> original index
  std::vector<double> w, v;         // in branch order
  std::vector<double> cum_w, cum_v; // prefix sums over branch order
  std::vector<std::uint8_t> current, best_sel;
  double best = -1.0;
  std::uint64_t nodes = 0;

  explicit BranchAndBound(const KnapsackInstance& instance) : inst(instance) {}

  // Value obtainable from branch items [depth, end) with capacity cap,
  // allowing a fractional share of the first item that does not fit.
  double dantzig_tail(std::size_t depth, double cap) const {
    const double base_w = cum_w[depth];
    // Largest t with cum_w[t] - cum_w[depth] <= cap.
    auto it = std::upper_bound(cum_w.begin() + static_cast<std::ptrdiff_t>(depth),
                               cum_w.end(), base_w + cap);
    const std::size_t t = static_cast<std::size_t>(it - cum_w.begin()) - 1;
    double bound = cum_v[t] - cum_v[depth];
    if (t < w.size()) {
      const double room = cap - (cum_w[t] - base_w);
      if (room > 0.0) bound += room / w[t] * v[t];
    }
    return bound;
  }

  void consider_leaf() {
    const double obj = selection_value(current, inst);
    if (obj > best || (obj == best && lex_less(current, best_sel))) {
      best = obj;
      best_sel = current;
    }
  }

  void search(std::size_t depth, double cap, double value_so_far) {
    if (++nodes > kNodeLimit) {
      throw std::runtime_error("instance " + std::to_string(inst.id) +
                               ": node limit exceeded in branch and bound");
    }
    if (depth == order.size()) {
      consider_leaf();
      return;
    }
    if (value_so_far + dantzig_tail(depth, cap) < best - kBoundSlack) {
      return;
    }
    if (w[depth] <= cap) {
      current[order[depth]] = 1;
      search(depth + 1, cap - w[depth], value_so_far + v[depth]);
      current[order[depth]] = 0;
    }
    search(depth + 1, cap, value_so_far);
  }
};

}  // namespace detail

// Exhaustive 2^n oracle; n is capped to keep runtime bounded.
inline SolveResult brute_force(const KnapsackInstance& inst) {
  validate_instance(inst);
  const std::size_t n = inst.size();
  if (n > 25) {
    throw std::invalid_argument("brute_force limited to n <= 25, got n=" +
                                std::to_string(n));
  }
  SolveResult res;
  res.selection.assign(n, 0);
  std::vector<std::uint8_t> x(n, 0);
  std::vector<std::uint8_t> best(n, 0);
  double best_obj = -1.0;
  const std::uint64_t count = 1ull << n;
  // Bit n-1-i of the mask is x_i, so ascending masks enumerate selections in
  // lexicographic order and the first strict improvement is the lex-min tie.
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<std::uint8_t>((mask >> (n - 1 - i)) & 1ull);
      if (x[i]) wsum += inst.weights[i];
    }
    if (wsum > inst.capacity) continue;
    const double obj = selection_value(x, inst);
    if (obj > best_obj) {
      best_obj = obj;
      best = x;
    }
  }
  res.selection = best;
  res.objective = selection_value(best, inst);
  res.nodes_explored = count;
  return res;
}

inline SolveResult solve_exact(const KnapsackInstance& inst) {
  validate_instance(inst);
  const std::size_t n = inst.size();

  SolveResult res;
  res.selection.assign(n, 0);

  // Fixed items. Zero-value items are never part of the lex-min optimum;
  // zero-weight valuable items always are; items heavier than the capacity
  // never fit.
  std::vector<std::size_t> free_items;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = inst.weights[i];
    const double v = inst.values[i];
    if (v <= 0.0 || w > inst.capacity) continue;
    if (w <= 0.0) {
      res.selection[i] = 1;
      continue;
    }
    free_items.push_back(i);
  }

  detail::BranchAndBound bb(inst);
  bb.order = std::move(free_items);
  std::stable_sort(bb.order.begin(), bb.order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return inst.values[a] * inst.weights[b] >
                            inst.values[b] * inst.weights[a];
                   });
  const std::size_t m = bb.order.size();
  bb.w.resize(m);
  bb.v.resize(m);
  for (std::size_t d = 0; d < m; ++d) {
    bb.w[d] = inst.weights[bb.order[d]];
    bb.v[d] = inst.values[bb.order[d]];
  }
  bb.cum_w.assign(m + 1, 0.0);
  bb.cum_v.assign(m + 1, 0.0);
  for (std::size_t d = 0; d < m; ++d) {
    bb.cum_w[d + 1] = bb.cum_w[d] + bb.w[d];
    bb.cum_v[d + 1] = bb.cum_v[d] + bb.v[d];
  }
  bb.current = res.selection;
  bb.best_sel = res.selection;
  // Fixed zero-weight items contribute to every leaf; seed the running value
  // with them so bound comparisons line up with the canonical objective.
  bb.search(0, inst.capacity, selection_value(res.selection, inst));

  res.selection = bb.best_sel;
  res.objective = selection_value(res.selection, inst);
  res.nodes_explored = bb.nodes;
  return res;
}

// Root fractional bound, exposed for sanity checks and diagnostics.
inline double dantzig_root_bound(const KnapsackInstance& inst) {
  validate_instance(inst);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < inst.size(); ++i) {
    if (inst.values[i] > 0.0 && inst.weights[i] > 0.0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return inst.values[a] * inst.weights[b] >
                            inst.values[b] * inst.weights[a];
                   });
  double bound = 0.0;
  for (std::size_t i = 0; i < inst.size(); ++i) {
    if (inst.values[i] > 0.0 && inst.weights[i] <= 0.0) bound += inst.values[i];
  }
  double cap = inst.capacity;
  for (std::size_t idx : order) {
    if (inst.weights[idx] <= cap) {
      cap -= inst.weights[idx];
      bound += inst.values[idx];
    } else {
      if (cap > 0.0) bound += cap / inst.weights[idx] * inst.values[idx];
      break;
    }
  }
  return bound;
}

// Fills in labels from solve_exact; already-labeled instances are left
// untouched. Runs instances on n_threads workers (0 = hardware default);
// results are slotted by position so the outcome is thread-count invariant.
inline Dataset label_dataset(Dataset ds, unsigned n_threads = 0) {
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    if (!ds.items[i].labeled()) todo.push_back(i);
  }
  if (todo.empty()) return ds;

  if (n_threads == 0) n_threads = std::max(1u, std::thread::hardware_concurrency());
  n_threads = static_cast<unsigned>(
      std::min<std::size_t>(n_threads, todo.size()));

  std::atomic<std::size_t> cursor{0};
  std::vector<std::string> errors(n_threads);
  auto worker = [&](unsigned tid) {
    for (;;) {
      const std::size_t k = cursor.fetch_add(1);
      if (k >= todo.size()) return;
      LabeledInstance& li = ds.items[todo[k]];
      try {
        SolveResult r = solve_exact(li.instance);
        li.label = std::move(r.selection);
        li.optimal_value = r.objective;
      } catch (const std::exception& e) {
        if (errors[tid].empty()) errors[tid] = e.what();
        return;
      }
    }
  };

  if (n_threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  for (const std::string& err : errors) {
    if (!err.empty()) throw std::runtime_error("label_dataset: " + err);
  }
  return ds;
}

}  // namespace kpldf
