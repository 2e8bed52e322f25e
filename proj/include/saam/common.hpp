#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace saam {

using i64 = std::int64_t;

// ---------------------------------------------------------------------------
// Error family. Every throw site names the offending shapes/fields so batch
// jobs fail with actionable messages.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error { using Error::Error; };   // dimension mismatches
struct ValueError : Error { using Error::Error; };   // bad arguments / ranges
struct ConfigError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct NanError : Error { using Error::Error; };

struct CheckpointError : Error {
    enum class Kind { BadMagic, BadVersion, BadCrc, ShapeMismatch, Malformed };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

// ---------------------------------------------------------------------------
// Shape: rank-4 (N,C,H,W), row-major with W fastest.
// ---------------------------------------------------------------------------

struct Shape {
    i64 n = 0, c = 0, h = 0, w = 0;

    Shape() = default;
    Shape(i64 n_, i64 c_, i64 h_, i64 w_) : n(n_), c(c_), h(h_), w(w_) {}

    i64 numel() const { return n * c * h * w; }
    i64 index(i64 in, i64 ic, i64 ih, i64 iw) const {
        return ((in * c + ic) * h + ih) * w + iw;
    }
    bool operator==(const Shape& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b)
        throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// ---------------------------------------------------------------------------
// ScalePair: (r_v, r_h) magnification factors. Conditions every scale-aware
// component.
// ---------------------------------------------------------------------------

struct ScalePair {
    double rv = 1.0;
    double rh = 1.0;

    ScalePair() = default;
    ScalePair(double v, double h) : rv(v), rh(h) {}
    explicit ScalePair(double r) : rv(r), rh(r) {}

    bool symmetric() const { return rv == rh; }
    std::string str() const {
        std::ostringstream os;
        os << rv << "x" << rh;
        return os.str();
    }
};

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 with hand-rolled distributions so sequences
// do not depend on the standard library version.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next_u64() {
        // xorshift* step mixed into an mt-free generator: splitmix64.
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1).
    double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n).
    i64 uniform_int(i64 n) {
        if (n <= 0) throw ValueError("Rng::uniform_int: n must be positive");
        return i64(uniform01() * double(n)) % n;
    }

    // Standard normal via Box-Muller (one value per call, deterministic).
    double normal() {
        double u1 = uniform01(), u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Thread cap. SAAM_THREADS env var caps internal parallelism; 1 forces the
// fully serial path. Work partitions are always disjoint output regions with
// fixed per-cell accumulation order, so results are bitwise identical at any
// thread count.
// ---------------------------------------------------------------------------

namespace detail {
inline int& thread_cap_storage() {
    static int cap = [] {
        const char* env = std::getenv("SAAM_THREADS");
        if (env) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc ? int(hc) : 1;
    }();
    return cap;
}
}  // namespace detail

inline int max_threads() { return detail::thread_cap_storage(); }
inline void set_max_threads(int n) { detail::thread_cap_storage() = std::max(1, n); }

// Runs body(lo, hi) over a partition of [0, n). Serial when the cap is 1 or
// the range is small.
template <class Body>
void parallel_for(i64 n, const Body& body, i64 grain = 1) {
    if (n <= 0) return;
    int nt = max_threads();
    i64 max_chunks = std::max<i64>(1, n / std::max<i64>(1, grain));
    nt = int(std::min<i64>(nt, max_chunks));
    if (nt <= 1) {
        body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nt);
    i64 chunk = (n + nt - 1) / nt;
    for (int t = 0; t < nt; ++t) {
        i64 lo = t * chunk;
        i64 hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

// ceil(a/b) and floor(a/b) for b > 0, correct for negative a.
inline i64 ceil_div(i64 a, i64 b) { return a > 0 ? (a + b - 1) / b : a / b; }
inline i64 floor_div(i64 a, i64 b) {
    i64 q = a / b, r = a % b;
    return (r != 0 && (r < 0) != (b < 0)) ? q - 1 : q;
}

inline i64 clamp_index(i64 v, i64 lo, i64 hi) { return std::max(lo, std::min(hi, v)); }

}  // namespace saam
