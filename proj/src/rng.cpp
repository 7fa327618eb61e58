#include "nestmc/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace nestmc {

namespace {

constexpr std::uint64_t kPhiloxM0 = 0xD2E7470EE14C6C93ULL;
constexpr std::uint64_t kPhiloxM1 = 0xCA5A826395121157ULL;
constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

inline void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi,
                    std::uint64_t& lo) {
  const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  hi = static_cast<std::uint64_t>(p >> 64);
  lo = static_cast<std::uint64_t>(p);
}

}  // namespace

std::array<std::uint64_t, 4> philox4x64(std::array<std::uint64_t, 4> counter,
                                        std::array<std::uint64_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    std::uint64_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, counter[0], hi0, lo0);
    mulhilo(kPhiloxM1, counter[2], hi1, lo1);
    counter = {hi1 ^ counter[1] ^ key[0], lo1, hi0 ^ counter[3] ^ key[1], lo0};
  }
  return counter;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : key_{seed, stream} {}

RngStream RngStream::child(std::uint64_t index) const {
  // Key derivation uses counters with word 1 != 0 while output generation
  // uses {n, 0, 0, 0}, so no block is ever both emitted and reused as a key.
  const auto derived = philox4x64({index, kWeyl0, 0, 0}, key_);
  RngStream child_stream;
  child_stream.key_ = {derived[0], derived[1]};
  return child_stream;
}

std::uint64_t RngStream::next_u64() {
  if (buffer_pos_ == 4) {
    buffer_ = philox4x64({block_++, 0, 0, 0}, key_);
    buffer_pos_ = 0;
  }
  return buffer_[buffer_pos_++];
}

double RngStream::uniform() {
  // 52 bits, not 53: with 53 the top value (2^53 - 1) + 0.5 is not
  // representable and rounds up, making the product exactly 1.0.
  return (static_cast<double>(next_u64() >> 12) + 0.5) * 0x1.0p-52;
}

namespace {

// 256-layer ziggurat for the standard normal, tables built once at first use.
// Layer boundaries x[0]=0 < x[1] < ... < x[255]=r partition the area under
// exp(-x^2/2) into 256 equal pieces; layer 0 is the base rectangle of width
// q = v/f(r) whose overshoot past r falls back to exact tail sampling.
struct ZigguratTables {
  static constexpr int kLayers = 256;
  double w[kLayers];
  double f[kLayers];
  std::uint64_t k[kLayers];
  double r;
  double inv_r;

  ZigguratTables() {
    const double mantissa_scale = 9007199254740992.0;  // 2^53
    auto density = [](double x) { return std::exp(-0.5 * x * x); };
    auto tail_area = [](double x) {
      return std::sqrt(std::acos(-1.0) / 2.0) * std::erfc(x / std::sqrt(2.0));
    };

    double x[kLayers];
    // Bisect the rightmost boundary r so that the equal-area recurrence
    // closes exactly at the mode: f(x[1]) + v/x[1] = 1.
    double lo = 3.0, hi = 4.0;
    for (int iter = 0; iter < 128; ++iter) {
      const double mid = 0.5 * (lo + hi);
      const double v = mid * density(mid) + tail_area(mid);
      x[kLayers - 1] = mid;
      bool too_small = false;
      for (int i = kLayers - 1; i >= 2; --i) {
        const double arg = v / x[i] + density(x[i]);
        if (arg >= 1.0) {  // recurrence collapsed: r too small
          too_small = true;
          break;
        }
        x[i - 1] = std::sqrt(-2.0 * std::log(arg));
      }
      if (!too_small) too_small = (v / x[1] + density(x[1]) > 1.0);
      (too_small ? lo : hi) = mid;
    }

    r = hi;  // the non-collapsing endpoint
    inv_r = 1.0 / r;
    const double v = r * density(r) + tail_area(r);
    x[kLayers - 1] = r;
    for (int i = kLayers - 1; i >= 2; --i) {
      x[i - 1] = std::sqrt(-2.0 * std::log(v / x[i] + density(x[i])));
    }
    x[0] = 0.0;

    const double q = v / density(r);
    for (int i = 0; i < kLayers; ++i) f[i] = density(x[i]);
    f[0] = 1.0;
    w[0] = q / mantissa_scale;
    k[0] = static_cast<std::uint64_t>(mantissa_scale * (r / q));
    for (int i = 1; i < kLayers; ++i) {
      w[i] = x[i] / mantissa_scale;
      k[i] = static_cast<std::uint64_t>(mantissa_scale * (x[i - 1] / x[i]));
    }
  }
};

const ZigguratTables& ziggurat() {
  static const ZigguratTables tables;
  return tables;
}

}  // namespace

double RngStream::normal() {
  const ZigguratTables& t = ziggurat();
  for (;;) {
    const std::uint64_t u = next_u64();
    const int idx = static_cast<int>(u & 0xFF);
    const bool negative = (u >> 8) & 1;
    const std::uint64_t mantissa = u >> 11;
    const double x = static_cast<double>(mantissa) * t.w[idx];
    if (mantissa < t.k[idx]) return negative ? -x : x;
    if (idx == 0) {
      // Base layer overshoot: sample the tail beyond r exactly.
      for (;;) {
        const double xt = -std::log(uniform()) * t.inv_r;
        const double yt = -std::log(uniform());
        if (yt + yt > xt * xt) {
          const double out = t.r + xt;
          return negative ? -out : out;
        }
      }
    }
    if (t.f[idx] + uniform() * (t.f[idx - 1] - t.f[idx]) <
        std::exp(-0.5 * x * x)) {
      return negative ? -x : x;
    }
  }
}

double RngStream::exponential(double rate) {
  return -std::log(uniform()) / rate;
}

double RngStream::gamma(double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0)) {
    throw std::domain_error("gamma: requires shape > 0 and rate > 0");
  }
  const bool boosted = shape < 1.0;
  const double d = (boosted ? shape + 1.0 : shape) - 1.0 / 3.0;
  const double c = 1.0 / (3.0 * std::sqrt(d));
  for (;;) {
    double g, v;
    do {
      g = normal();
      v = 1.0 + c * g;
    } while (v <= 0.0);
    v = v * v * v;
    if (std::log(uniform()) < 0.5 * g * g + d - d * v + d * std::log(v)) {
      double y = d * v;
      if (boosted) y *= std::pow(uniform(), 1.0 / shape);
      y /= rate;
      if (y > 0.0 && std::isfinite(y)) return y;
    }
  }
}

}  // namespace nestmc
