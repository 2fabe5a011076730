#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ps {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

#define PS_CHECK(cond, msg)                                 \
  do {                                                      \
    if (!(cond)) {                                          \
      std::ostringstream oss_;                              \
      oss_ << msg;                                          \
      ::ps::fail(oss_.str());                               \
    }                                                       \
  } while (0)

enum class DType { kF32 = 0, kF64 = 1 };

DType default_dtype();
void set_default_dtype(DType dt);

inline size_t dtype_size(DType dt) { return dt == DType::kF32 ? 4 : 8; }
inline const char* dtype_name(DType dt) { return dt == DType::kF32 ? "f32" : "f64"; }

// RAII switch used by the 64-bit gradient-check suites.
struct DtypeGuard {
  explicit DtypeGuard(DType dt) : prev_(default_dtype()) { set_default_dtype(dt); }
  ~DtypeGuard() { set_default_dtype(prev_); }
  DType prev_;
};

// When on, every forward op scans its output for NaN/Inf.
bool debug_checks();
void set_debug_checks(bool on);

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream oss;
  oss << "[";
  for (size_t i = 0; i < s.size(); ++i) oss << (i ? "," : "") << s[i];
  oss << "]";
  return oss.str();
}

// Deterministic RNG handed around explicitly; all randomness in the
// artifact flows through one of these.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }

  double normal(double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(gen_);
  }

  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi) {
    std::uniform_int_distribution<int64_t> d(lo, hi);
    return d(gen_);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

// Deterministic parallel map over [0, n): each worker owns a disjoint
// index range, so results do not depend on thread count or timing.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);

int num_threads();
void set_num_threads(int n);

}  // namespace ps
