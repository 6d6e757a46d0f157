#include <doctest.h>

#include <cmath>

#include "eot/rng.hpp"
#include "eot/tensor.hpp"

using eot::real;
using eot::RngStream;

TEST_CASE("identical seeds yield identical streams") {
  RngStream a(123), b(123);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("forks are independent of parent draw position and of each other") {
  RngStream parent(7);
  const RngStream f1 = parent.fork("poses");
  parent.uniform();
  parent.uniform();
  const RngStream f2 = parent.fork("poses");
  RngStream c1 = f1, c2 = f2;
  for (int i = 0; i < 100; ++i) CHECK(c1.next_u64() == c2.next_u64());

  RngStream g1 = parent.fork("poses"), g2 = parent.fork("noise");
  bool all_equal = true;
  for (int i = 0; i < 100; ++i) all_equal = all_equal && (g1.next_u64() == g2.next_u64());
  CHECK(!all_equal);
}

TEST_CASE("uniform respects half-open bounds") {
  RngStream rng(99);
  for (int i = 0; i < 10000; ++i) {
    const real v = rng.uniform(0.25, 0.75);
    CHECK(v >= 0.25);
    CHECK(v < 0.75);
  }
  CHECK(rng.uniform(0.4, 0.4) == 0.4);
}

TEST_CASE("uniform_int covers both inclusive endpoints") {
  RngStream rng(100);
  bool lo = false, hi = false;
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t v = rng.uniform_int(3, 7);
    CHECK(v >= 3);
    CHECK(v <= 7);
    lo = lo || v == 3;
    hi = hi || v == 7;
  }
  CHECK(lo);
  CHECK(hi);
}

TEST_CASE("normal has approximately standard moments") {
  RngStream rng(2718);
  const int n = 100000;
  real sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const real v = rng.normal();
    sum += v;
    sumsq += v * v;
  }
  const real mean = sum / n;
  const real var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}
