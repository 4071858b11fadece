#include "catch_amalgamated.hpp"

#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "kpldf/instance.hpp"

using namespace kpldf;

TEST_CASE("generated capacity follows the j/(S+1) law") {
  SECTION("single instance takes half its weight sum") {
    Dataset ds = generate_dataset(1, 1, 99);
    const KnapsackInstance& inst = ds.items[0].instance;
    REQUIRE(inst.capacity == Catch::Approx(0.5 * inst.total_weight()).epsilon(1e-15));
  }

  SECTION("third of five instances takes half its weight sum") {
    Dataset ds = generate_dataset(4, 5, 7);
    const KnapsackInstance& inst = ds.items[2].instance;  // j = 3, S = 5
    REQUIRE(inst.capacity ==
            Catch::Approx((3.0 / 6.0) * inst.total_weight()).epsilon(1e-15));
  }

  SECTION("law holds to 1e-12 relative for every instance") {
    Dataset ds = generate_dataset(10, 200, 2024);
    const double denom = 201.0;
    for (std::size_t j = 1; j <= 200; ++j) {
      const KnapsackInstance& inst = ds.items[j - 1].instance;
      const double total = inst.total_weight();
      const double expect = (static_cast<double>(j) / denom) * total;
      REQUIRE(std::abs(inst.capacity - expect) <= 1e-12 * total);
    }
  }

  SECTION("capacity fraction strictly increases with id") {
    Dataset ds = generate_dataset(6, 100, 3);
    double prev = -1.0;
    for (const auto& li : ds.items) {
      const double frac = li.instance.capacity / li.instance.total_weight();
      REQUIRE(frac > prev);
      prev = frac;
    }
    REQUIRE(prev < 1.0);
  }
}

TEST_CASE("weights and values are uniform on [0,1)") {
  Dataset ds = generate_dataset(100, 100, 555);  // 10^4 items
  double wsum = 0.0, vsum = 0.0;
  std::size_t n = 0;
  for (const auto& li : ds.items) {
    for (double w : li.instance.weights) {
      REQUIRE(w >= 0.0);
      REQUIRE(w < 1.0);
      wsum += w;
    }
    for (double v : li.instance.values) {
      REQUIRE(v >= 0.0);
      REQUIRE(v < 1.0);
      vsum += v;
    }
    n += li.instance.size();
  }
  REQUIRE(n == 10000);
  REQUIRE(std::abs(wsum / static_cast<double>(n) - 0.5) < 0.01);
  REQUIRE(std::abs(vsum / static_cast<double>(n) - 0.5) < 0.01);
}

TEST_CASE("split sizes are tenths with the remainder training") {
  SECTION("full-scale proportions") {
    Dataset ds = generate_dataset(2, 30000, 17);
    REQUIRE(ds.split.train.size() == 24000);
    REQUIRE(ds.split.val.size() == 3000);
    REQUIRE(ds.split.test.size() == 3000);
  }

  SECTION("splits are disjoint and exhaustive") {
    Dataset ds = generate_dataset(3, 101, 18);
    REQUIRE(ds.split.train.size() == 101 - 10 - 10);
    REQUIRE(ds.split.val.size() == 10);
    REQUIRE(ds.split.test.size() == 10);
    std::unordered_set<std::uint64_t> seen;
    for (const auto* part : {&ds.split.train, &ds.split.val, &ds.split.test}) {
      for (std::uint64_t id : *part) {
        REQUIRE(id < 101);
        REQUIRE(seen.insert(id).second);
      }
    }
    REQUIRE(seen.size() == 101);
  }

  SECTION("every split spans low and high capacities") {
    Dataset ds = generate_dataset(2, 1000, 19);
    for (const auto* part : {&ds.split.train, &ds.split.val, &ds.split.test}) {
      double lo = 2.0, hi = -1.0;
      for (std::uint64_t id : *part) {
        const double a = alpha(ds.items[id].instance);
        lo = std::min(lo, a);
        hi = std::max(hi, a);
      }
      REQUIRE(lo < 0.2);
      REQUIRE(hi > 0.8);
    }
  }
}

TEST_CASE("generation is deterministic") {
  Dataset a = generate_dataset(5, 40, 777);
  Dataset b = generate_dataset(5, 40, 777);
  REQUIRE(a.items.size() == b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    REQUIRE(a.items[i].instance.weights == b.items[i].instance.weights);
    REQUIRE(a.items[i].instance.values == b.items[i].instance.values);
    REQUIRE(a.items[i].instance.capacity == b.items[i].instance.capacity);
  }
  REQUIRE(a.split.train == b.split.train);
  REQUIRE(a.split.val == b.split.val);
  REQUIRE(a.split.test == b.split.test);

  Dataset c = generate_dataset(5, 40, 778);
  REQUIRE(a.items[0].instance.weights != c.items[0].instance.weights);
}

TEST_CASE("alpha is capacity over total weight") {
  KnapsackInstance inst{0, {1.0, 1.0}, {0.5, 0.5}, 1.0};
  REQUIRE(alpha(inst) == 0.5);
  inst.capacity = 0.0;
  REQUIRE(alpha(inst) == 0.0);
  inst.capacity = 2.0;
  REQUIRE(alpha(inst) == 1.0);

  KnapsackInstance zero{1, {0.0, 0.0}, {0.5, 0.5}, 0.0};
  REQUIRE_THROWS_AS(alpha(zero), std::domain_error);
}

TEST_CASE("instance validation names the offender") {
  KnapsackInstance inst{42, {0.5, 0.5}, {0.1, 0.2}, 0.4};
  REQUIRE_NOTHROW(validate_instance(inst));

  SECTION("length mismatch") {
    inst.values.pop_back();
    REQUIRE_THROWS_WITH(validate_instance(inst),
                        Catch::Matchers::ContainsSubstring("instance 42") &&
                            Catch::Matchers::ContainsSubstring("mismatch"));
  }
  SECTION("negative weight") {
    inst.weights[0] = -0.1;
    REQUIRE_THROWS_AS(validate_instance(inst), std::invalid_argument);
  }
  SECTION("capacity above total weight") {
    inst.capacity = 1.5;
    REQUIRE_THROWS_WITH(validate_instance(inst),
                        Catch::Matchers::ContainsSubstring("capacity"));
  }
  SECTION("negative capacity") {
    inst.capacity = -0.1;
    REQUIRE_THROWS_AS(validate_instance(inst), std::invalid_argument);
  }
  SECTION("no items") {
    inst.weights.clear();
    inst.values.clear();
    REQUIRE_THROWS_AS(validate_instance(inst), std::invalid_argument);
  }
}

TEST_CASE("label validation enforces feasibility and the objective tie") {
  LabeledInstance li;
  li.instance = {7, {0.5, 0.5}, {0.1, 0.2}, 0.6};
  li.label = {1, 0};
  li.optimal_value = 0.1;
  REQUIRE_NOTHROW(validate_label(li));

  SECTION("unlabeled passes trivially") {
    li.label.clear();
    REQUIRE_NOTHROW(validate_label(li));
  }
  SECTION("length mismatch") {
    li.label = {1};
    REQUIRE_THROWS_AS(validate_label(li), std::invalid_argument);
  }
  SECTION("non-binary entry") {
    li.label = {2, 0};
    REQUIRE_THROWS_AS(validate_label(li), std::invalid_argument);
  }
  SECTION("infeasible label") {
    li.label = {1, 1};
    li.optimal_value = 0.3;
    REQUIRE_THROWS_WITH(validate_label(li),
                        Catch::Matchers::ContainsSubstring("infeasible label"));
  }
  SECTION("objective mismatch") {
    li.optimal_value = 0.2;
    REQUIRE_THROWS_AS(validate_label(li), std::invalid_argument);
  }
}

TEST_CASE("selection sums run over chosen items only") {
  KnapsackInstance inst{0, {0.1, 0.2, 0.3}, {1.0, 2.0, 3.0}, 1.0};
  REQUIRE(selection_weight({1, 0, 1}, inst) == Catch::Approx(0.4));
  REQUIRE(selection_value({1, 0, 1}, inst) == Catch::Approx(4.0));
  REQUIRE(selection_weight({0, 0, 0}, inst) == 0.0);
  REQUIRE(selection_value({0, 0, 0}, inst) == 0.0);
}
