#include <cmath>
#include <set>

#include "doctest.h"
#include "ofa/rng.hpp"

using namespace ofa;

TEST_CASE("philox4x32-10 known-answer vectors") {
  using A4 = std::array<std::uint32_t, 4>;
  using A2 = std::array<std::uint32_t, 2>;
  CHECK(philox4x32(A4{0, 0, 0, 0}, A2{0, 0}) ==
        A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32(A4{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                   A2{0xffffffff, 0xffffffff}) ==
        A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32(A4{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                   A2{0xa4093822, 0x299f31d0}) ==
        A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("equal (seed, stream) gives bitwise equal draws") {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream c(42, 7), d(42, 7);
  for (int i = 0; i < 257; ++i) CHECK(c.normal() == d.normal());
}

TEST_CASE("interleaving does not change a stream") {
  RngStream solo(3, 1);
  Vec expected;
  for (int i = 0; i < 50; ++i) expected.push_back(solo.normal());

  RngStream a(3, 1), other(3, 2);
  for (int i = 0; i < 50; ++i) {
    other.normal();
    other.next_u64();
    CHECK(a.normal() == expected[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("derive is independent of consumption and path-sensitive") {
  RngStream base(9, 0);
  const RngStream early = base.derive({1, 2});
  for (int i = 0; i < 10; ++i) base.next_u64();
  RngStream late = base.derive({1, 2});
  RngStream e2 = early;
  CHECK(e2.next_u64() == late.next_u64());
  CHECK(base.derive({1, 2}).stream_id() != base.derive({2, 1}).stream_id());
  CHECK(base.derive({1}).stream_id() != base.derive({1, 0}).stream_id());
}

TEST_CASE("different seeds and streams differ") {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t s = 0; s < 20; ++s)
    for (std::uint64_t id = 0; id < 5; ++id) firsts.insert(RngStream(s, id).next_u64());
  CHECK(firsts.size() == 100);
}

TEST_CASE("uniform and normal moments") {
  RngStream rng(2024);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK_UNARY(u >= 0.0);
    CHECK_UNARY(u < 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("below is uniform over its range") {
  RngStream rng(77);
  std::array<int, 7> counts{};
  for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}
