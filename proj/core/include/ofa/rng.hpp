#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

#include "ofa/numerics.hpp"

namespace ofa {

/// Philox4x32-10 block function (Salmon et al. 2011 parameters).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Counter-based random stream.
///
/// Draw i of stream (seed, stream_id) is a pure function of (seed, stream_id,
/// i), so streams never interfere with each other and can be handed to
/// workers in any order.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Child stream whose id is a hash of this stream's id and the given path.
  /// Independent of how much of this stream has been consumed.
  RngStream derive(std::initializer_list<std::uint64_t> path) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double normal();
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);

  Vec normal_vec(std::size_t n);
  Mat normal_mat(std::size_t rows, std::size_t cols);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int block_used_ = 2;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace ofa
