#include "kpldf/solver.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <vector>

#include "kpldf/instance.hpp"
#include "kpldf/rng.hpp"

using kpldf::KnapsackInstance;
using kpldf::Rng;
using kpldf::SolveResult;

namespace {

KnapsackInstance make_instance(std::vector<double> w, std::vector<double> v,
                               double cap, std::uint64_t id = 0) {
  KnapsackInstance inst;
  inst.id = id;
  inst.weights = std::move(w);
  inst.values = std::move(v);
  inst.capacity = cap;
  return inst;
}

KnapsackInstance random_instance(Rng& rng, std::size_t n, double alpha,
                                 std::uint64_t id) {
  KnapsackInstance inst;
  inst.id = id;
  inst.weights.reserve(n);
  inst.values.reserve(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    inst.weights.push_back(rng.next_double());
    inst.values.push_back(rng.next_double());
    total += inst.weights.back();
  }
  inst.capacity = alpha * total;
  return inst;
}

}  // namespace

TEST_CASE("solve_exact handles single-item instances") {
  SECTION("item too heavy stays out") {
    const auto res = kpldf::solve_exact(make_instance({0.5}, {0.9}, 0.4));
    REQUIRE(res.selection == std::vector<std::uint8_t>{0});
    REQUIRE(res.objective == 0.0);
  }
  SECTION("item that fits is taken") {
    const auto res = kpldf::solve_exact(make_instance({0.1}, {0.2}, 0.1));
    REQUIRE(res.selection == std::vector<std::uint8_t>{1});
    REQUIRE(res.objective == 0.2);
  }
}

TEST_CASE("solve_exact picks the better of two mutually exclusive items") {
  // Both items fit alone but not together; the second is worth more.
  const auto res =
      kpldf::solve_exact(make_instance({0.3, 0.3}, {0.5, 0.6}, 0.3));
  REQUIRE(res.selection == std::vector<std::uint8_t>{0, 1});
  REQUIRE(res.objective == 0.6);
}

TEST_CASE("solve_exact returns all zeros when nothing fits") {
  const auto res =
      kpldf::solve_exact(make_instance({0.9, 0.8, 0.7}, {1.0, 1.0, 1.0}, 0.5));
  REQUIRE(res.selection == std::vector<std::uint8_t>{0, 0, 0});
  REQUIRE(res.objective == 0.0);
}

TEST_CASE("solve_exact breaks objective ties toward the smallest selection") {
  // Two disjoint optima worth 0.5 each; [0,1] precedes [1,0] lexicographically.
  const auto res =
      kpldf::solve_exact(make_instance({0.2, 0.2}, {0.5, 0.5}, 0.2));
  REQUIRE(res.selection == std::vector<std::uint8_t>{0, 1});
  REQUIRE(res.objective == 0.5);

  // Same tie with three items. Dyadic weights keep the sums exact: items
  // {0,2} and {1,2} both weigh 0.75 and are worth 1.5; lex-min keeps item 1.
  const auto res2 = kpldf::solve_exact(
      make_instance({0.25, 0.25, 0.5}, {0.5, 0.5, 1.0}, 0.75));
  REQUIRE(res2.selection == std::vector<std::uint8_t>{0, 1, 1});
  REQUIRE(res2.objective == 1.5);
}

TEST_CASE("brute_force enumerates tiny instances exactly") {
  const auto res = kpldf::brute_force(make_instance({0.1}, {0.2}, 0.1));
  REQUIRE(res.selection == std::vector<std::uint8_t>{1});
  REQUIRE(res.objective == 0.2);

  const auto tie = kpldf::brute_force(make_instance({0.2, 0.2}, {0.5, 0.5}, 0.2));
  REQUIRE(tie.selection == std::vector<std::uint8_t>{0, 1});
}

TEST_CASE("brute_force rejects instances beyond its size limit") {
  KnapsackInstance big;
  big.weights.assign(26, 0.5);
  big.values.assign(26, 1.0);
  big.capacity = 1.0;
  REQUIRE_THROWS_AS(kpldf::brute_force(big), std::invalid_argument);
}

TEST_CASE("negative capacity is rejected") {
  REQUIRE_THROWS_AS(kpldf::solve_exact(make_instance({0.5}, {0.5}, -0.1)),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(kpldf::brute_force(make_instance({0.5}, {0.5}, -0.1)),
                    std::invalid_argument);
}

TEST_CASE("branch-and-bound matches exhaustive enumeration on random instances") {
  Rng rng(20240517);
  const double alphas[] = {0.05, 0.15, 0.25, 0.35, 0.45,
                           0.55, 0.65, 0.75, 0.85, 0.95};
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.next_below(18);
    const double alpha = alphas[rng.next_below(10)];
    const auto inst =
        random_instance(rng, n, alpha, static_cast<std::uint64_t>(trial));
    const auto fast = kpldf::solve_exact(inst);
    const auto slow = kpldf::brute_force(inst);
    INFO("trial " << trial << " n=" << n << " alpha=" << alpha);
    REQUIRE(fast.objective == slow.objective);
    REQUIRE(fast.selection == slow.selection);
  }
}

TEST_CASE("solutions respect the capacity") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.next_below(30);
    const auto inst = random_instance(rng, n, 0.3, 1000 + trial);
    const auto res = kpldf::solve_exact(inst);
    REQUIRE(kpldf::selection_weight(res.selection, inst) <=
            inst.capacity + 1e-12);
    REQUIRE(res.selection.size() == n);
    REQUIRE(res.nodes_explored > 0);
  }
}

TEST_CASE("fractional relaxation bounds the integral optimum") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.next_below(16);
    const double alpha = 0.05 + 0.9 * rng.next_double();
    const auto inst = random_instance(rng, n, alpha, 2000 + trial);
    const auto res = kpldf::solve_exact(inst);
    REQUIRE(kpldf::dantzig_root_bound(inst) >= res.objective - 1e-9);
  }
}

TEST_CASE("solve_exact is deterministic") {
  Rng rng(31337);
  const auto inst = random_instance(rng, 24, 0.4, 5);
  const auto a = kpldf::solve_exact(inst);
  const auto b = kpldf::solve_exact(inst);
  REQUIRE(a.selection == b.selection);
  REQUIRE(a.objective == b.objective);
  REQUIRE(a.nodes_explored == b.nodes_explored);
}

TEST_CASE("zero-weight items with positive value are always taken") {
  const auto res =
      kpldf::solve_exact(make_instance({0.0, 0.6}, {0.4, 0.5}, 0.0));
  REQUIRE(res.selection == std::vector<std::uint8_t>{1, 0});
  REQUIRE(res.objective == 0.4);
}

TEST_CASE("label_dataset fills in optimal selections") {
  auto ds = kpldf::generate_dataset(15, 30, 424242);
  ds = kpldf::label_dataset(std::move(ds));
  for (const auto& li : ds.items) {
    REQUIRE(li.labeled());
    kpldf::validate_label(li);
    const auto slow = kpldf::brute_force(li.instance);
    REQUIRE(li.optimal_value == slow.objective);
    REQUIRE(li.label == slow.selection);
  }
}

TEST_CASE("label_dataset leaves existing labels untouched") {
  auto ds = kpldf::generate_dataset(10, 12, 9090);
  ds = kpldf::label_dataset(std::move(ds));

  // Overwrite one label with a feasible but deliberately poor selection and
  // check a second pass does not repair it: labeling is skip-if-present.
  ds.items.at(3).label.assign(ds.items.at(3).instance.size(), 0);
  ds.items.at(3).optimal_value = 0.0;
  ds = kpldf::label_dataset(std::move(ds));
  const auto& victim = ds.items.at(3);
  REQUIRE(victim.optimal_value == 0.0);
  REQUIRE(std::count(victim.label.begin(), victim.label.end(), 1) == 0);

  // The other instances keep their first-pass labels.
  const auto redo = kpldf::solve_exact(ds.items.at(0).instance);
  REQUIRE(ds.items.at(0).label == redo.selection);
}

TEST_CASE("label_dataset honors an explicit thread count") {
  auto seq = kpldf::generate_dataset(12, 20, 777);
  auto par = seq;
  seq = kpldf::label_dataset(std::move(seq), 1);
  par = kpldf::label_dataset(std::move(par), 4);
  for (std::size_t i = 0; i < seq.items.size(); ++i) {
    REQUIRE(seq.items[i].label == par.items[i].label);
    REQUIRE(seq.items[i].optimal_value == par.items[i].optimal_value);
  }
}
