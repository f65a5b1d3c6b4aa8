// Counter-based random number generation (Philox4x32-10).
//
// Streams are addressed by (seed, stream). Draw k of stream s under seed g is
// a pure function of (g, s, k), so path p always sees the same randomness no
// matter how paths are scheduled across threads. This is what makes ensemble
// output independent of the thread count.
#pragma once

#include <array>
#include <cstdint>

namespace qmkt {

/// Stateless Philox4x32-10 block function.
///
/// key   = (seed_lo32, seed_hi32)
/// ctr   = (stream_lo32, stream_hi32, block_lo32, block_hi32)
/// Ten rounds with the standard Weyl key schedule.
struct Philox4x32 {
    static std::array<uint32_t, 4> block(uint64_t seed, uint64_t stream, uint64_t block_index);
};

/// Buffered view of one Philox stream: uniforms, normals, raw 64-bit words.
/// Copyable and cheap; holds no heap state.
class RngStream {
  public:
    RngStream(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}

    /// Next raw 64-bit word of the stream.
    uint64_t next_u64();

    /// Uniform draw in [0, 1) with 53-bit resolution.
    double uniform01();

    /// Uniform draw in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller; draws are cached pairwise.
    double normal();

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }

  private:
    void refill();

    uint64_t seed_;
    uint64_t stream_;
    uint64_t block_ = 0;
    std::array<uint32_t, 4> buf_{};
    int have_words_ = 0;        // unread 32-bit words left in buf_
    bool have_normal_ = false;  // Box-Muller cache
    double cached_normal_ = 0.0;
};

}  // namespace qmkt
