#include "qmarket/rng.hpp"

#include <cmath>

namespace qmkt {

namespace {

constexpr uint32_t kWeyl0 = 0x9E3779B9u;  // golden-ratio increment
constexpr uint32_t kWeyl1 = 0xBB67AE85u;  // sqrt(3)-1 increment
constexpr uint32_t kMult0 = 0xD2511F53u;
constexpr uint32_t kMult1 = 0xCD9E8D57u;

inline void mul_hilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
    uint64_t p = static_cast<uint64_t>(a) * b;
    hi = static_cast<uint32_t>(p >> 32);
    lo = static_cast<uint32_t>(p);
}

inline std::array<uint32_t, 4> one_round(const std::array<uint32_t, 4>& ctr,
                                         const std::array<uint32_t, 2>& key) {
    uint32_t hi0, lo0, hi1, lo1;
    mul_hilo(kMult0, ctr[0], hi0, lo0);
    mul_hilo(kMult1, ctr[2], hi1, lo1);
    return {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

}  // namespace

std::array<uint32_t, 4> Philox4x32::block(uint64_t seed, uint64_t stream, uint64_t block_index) {
    std::array<uint32_t, 2> key = {static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)};
    std::array<uint32_t, 4> ctr = {
        static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32),
        static_cast<uint32_t>(block_index), static_cast<uint32_t>(block_index >> 32)};
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        ctr = one_round(ctr, key);
    }
    return ctr;
}

void RngStream::refill() {
    buf_ = Philox4x32::block(seed_, stream_, block_++);
    have_words_ = 4;
}

uint64_t RngStream::next_u64() {
    if (have_words_ < 2) refill();
    uint32_t lo = buf_[4 - have_words_];
    uint32_t hi = buf_[4 - have_words_ + 1];
    have_words_ -= 2;
    return (static_cast<uint64_t>(hi) << 32) | lo;
}

double RngStream::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
    if (have_normal_) {
        have_normal_ = false;
        return cached_normal_;
    }
    // Box-Muller; u1 is shifted into (0,1] so the log is finite.
    double u1 = 1.0 - uniform01();
    double u2 = uniform01();
    double rho = std::sqrt(-2.0 * std::log(u1));
    double ang = 6.283185307179586476925286766559 * u2;
    cached_normal_ = rho * std::sin(ang);
    have_normal_ = true;
    return rho * std::cos(ang);
}

}  // namespace qmkt
