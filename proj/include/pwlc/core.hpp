#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace pwlc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error taxonomy shared by all modules.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};
struct ConsistencyError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct UnsupportedError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};

// Axis-aligned box [lo, hi].
struct Box {
  Vec lo;
  Vec hi;

  Box() = default;
  Box(Vec l, Vec h) : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw ConfigError("box bounds differ in dimension");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!(lo[i] <= hi[i])) throw ConfigError("box has lo > hi");
  }

  static Box symmetric(const Vec& half) { return Box(-half, half); }

  int dim() const { return static_cast<int>(lo.size()); }
  Vec center() const { return 0.5 * (lo + hi); }
  Vec width() const { return hi - lo; }
  double extent() const { return dim() ? width().maxCoeff() : 0.0; }

  bool contains(const Vec& x, double tol = 0.0) const {
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
    return true;
  }

  Vec clamp(const Vec& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

  Box scaled(double factor) const {
    Vec c = center();
    Vec half = 0.5 * factor * width();
    return Box(c - half, c + half);
  }
};

// Affine vector field A x + B u + C.
struct AffineModel {
  Mat A;
  Mat B;
  Vec C;

  Vec operator()(const Vec& x, const Vec& u) const { return A * x + B * u + C; }
};

inline void warn(std::string_view msg) { std::clog << "pwlc: warning: " << msg << '\n'; }

inline Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline double sqr(double v) { return v * v; }

// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
// visited exactly once; callers merge results by index so the outcome does not
// depend on scheduling.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body,
                         unsigned threads = 0) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= count || failed.load()) return;
        try {
          body(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace pwlc
