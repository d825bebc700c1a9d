#pragma once

// Euler-Maruyama for the killed diffusion dX = dB - q(X)dt (absorbed at the
// kill level) and for the Q-process dY = dB - q̃(Y)dt (reflected at ε).
//
// Each path owns an RNG stream: mt19937_64 seeded with splitmix64 of
// (seed, path index). Paths are sharded over threads but written back by index,
// so results depend only on (seed, n_paths, dt), not on the worker count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qsd/errors.hpp"
#include "qsd/model.hpp"
#include "qsd/spectral.hpp"

namespace qsd {

struct SimConfig {
  double dt = 1e-3;
  double T = 1.0;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 1;
  std::vector<double> record_times;  // sorted, within [0, T]
  double left_kill_level = 0.0;
  unsigned threads = 0;  // 0: hardware concurrency
};

struct EmpiricalEnsemble {
  double time = 0.0;
  std::vector<double> positions;      // 0 for dead paths
  std::vector<std::uint8_t> alive;
  std::size_t n_alive = 0;
  std::size_t overflow_kills = 0;     // paths killed by a non-finite step up to this time

  bool empty() const { return n_alive == 0; }
  double survival_fraction() const {
    return positions.empty() ? 0.0 : static_cast<double>(n_alive) / static_cast<double>(positions.size());
  }
};

/// Initial law: point(x), a grid measure (node weights, sampled uniformly
/// inside the node's cell), uniform(a, b), or resampling from a finite list
/// of positions (e.g. the survivors of an earlier run).
class InitialSpec {
 public:
  static InitialSpec point(double x) {
    if (!(x > 0.0)) throw Error("InitialSpec::point: x must be positive");
    InitialSpec s;
    s.kind_ = Kind::point;
    s.a_ = x;
    return s;
  }

  static InitialSpec uniform(double a, double b) {
    if (!(a >= 0.0) || !(b > a)) throw Error("InitialSpec::uniform: need 0 <= a < b");
    InitialSpec s;
    s.kind_ = Kind::uniform;
    s.a_ = a;
    s.b_ = b;
    return s;
  }

  static InitialSpec grid_measure(const Grid& grid, std::span<const double> weights) {
    if (weights.size() != grid.size()) throw Error("InitialSpec::grid_measure: size mismatch");
    InitialSpec s;
    s.kind_ = Kind::grid;
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw Error("InitialSpec::grid_measure: negative weight");
      total += w;
    }
    if (!(total > 0.0)) throw Error("InitialSpec::grid_measure: zero total weight");
    s.cdf_.reserve(weights.size());
    double acc = 0.0;
    for (double w : weights) s.cdf_.push_back(acc += w / total);
    s.cdf_.back() = 1.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      s.lo_.push_back(grid.cell_lo(i));
      s.hi_.push_back(grid.cell_hi(i));
    }
    return s;
  }

  static InitialSpec empirical(std::vector<double> positions) {
    if (positions.empty()) throw Error("InitialSpec::empirical: no positions");
    for (double x : positions) {
      if (!(x > 0.0)) throw Error("InitialSpec::empirical: positions must be positive");
    }
    InitialSpec s;
    s.kind_ = Kind::empirical;
    s.lo_ = std::move(positions);
    return s;
  }

  template <class Rng>
  double sample(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    switch (kind_) {
      case Kind::point: return a_;
      case Kind::uniform: {
        double x = 0.0;
        do x = a_ + (b_ - a_) * u(rng);
        while (!(x > 0.0));
        return x;
      }
      case Kind::grid: {
        const double v = u(rng);
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), v);
        const auto i = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
        double x = 0.0;
        do x = lo_[i] + (hi_[i] - lo_[i]) * u(rng);
        while (!(x > 0.0));
        return x;
      }
      case Kind::empirical: {
        std::uniform_int_distribution<std::size_t> pick(0, lo_.size() - 1);
        return lo_[pick(rng)];
      }
    }
    return a_;
  }

 private:
  enum class Kind { point, uniform, grid, empirical };
  Kind kind_ = Kind::point;
  double a_ = 1.0;
  double b_ = 1.0;
  std::vector<double> cdf_, lo_, hi_;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 path_stream(std::uint64_t seed, std::uint64_t path) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(path + 0x632BE59BD9B4E019ULL)));
}

inline void validate(const SimConfig& cfg) {
  if (!(cfg.dt > 0.0) || !(cfg.T > 0.0) || !(cfg.dt < cfg.T)) throw Error("SimConfig: need 0 < dt < T");
  if (cfg.n_paths < 1) throw Error("SimConfig: n_paths must be >= 1");
  for (std::size_t i = 0; i < cfg.record_times.size(); ++i) {
    const double t = cfg.record_times[i];
    if (!(t >= 0.0) || t > cfg.T * (1.0 + 1e-12)) throw Error("SimConfig: record time outside [0, T]");
    if (i > 0 && !(t > cfg.record_times[i - 1])) throw Error("SimConfig: record times must increase");
  }
}

// Shared driver. Step(x, z) returns the next state or NaN to kill; Dead(x)
// decides post-step absorption.
template <class Step, class Dead>
std::vector<EmpiricalEnsemble> run_paths(const InitialSpec& initial, const SimConfig& cfg,
                                         Step&& step, Dead&& dead) {
  validate(cfg);
  const std::size_t n = cfg.n_paths;
  const auto n_steps = static_cast<std::size_t>(std::llround(cfg.T / cfg.dt));
  std::vector<std::size_t> rec_step;
  for (double t : cfg.record_times) {
    rec_step.push_back(std::min(n_steps, static_cast<std::size_t>(std::llround(t / cfg.dt))));
  }
  const std::size_t n_rec = rec_step.size();
  std::vector<double> pos(n_rec * n);
  std::vector<std::uint8_t> alive(n_rec * n);
  std::vector<std::uint8_t> overflow(n_rec * n);

  const double sqdt = std::sqrt(cfg.dt);
  auto work = [&](std::size_t first, std::size_t last) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t p = first; p < last; ++p) {
      auto rng = path_stream(cfg.seed, p);
      normal.reset();
      double x = initial.sample(rng);
      bool live = !dead(x);
      bool blew_up = false;
      std::size_t r = 0;
      auto record = [&](std::size_t k) {
        while (r < n_rec && rec_step[r] == k) {
          pos[r * n + p] = live ? x : 0.0;
          alive[r * n + p] = live ? 1 : 0;
          overflow[r * n + p] = blew_up ? 1 : 0;
          ++r;
        }
      };
      record(0);
      for (std::size_t k = 1; k <= n_steps && r < n_rec; ++k) {
        if (live) {
          const double next = step(x, sqdt * normal(rng));
          if (!std::isfinite(next)) {
            live = false;
            blew_up = true;
          } else {
            x = next;
            if (dead(x)) live = false;
          }
        }
        record(k);
      }
    }
  };

  unsigned threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t a = t * chunk;
      const std::size_t b = std::min(n, a + chunk);
      if (a < b) pool.emplace_back(work, a, b);
    }
    for (auto& th : pool) th.join();
  }

  std::vector<EmpiricalEnsemble> out(n_rec);
  for (std::size_t r = 0; r < n_rec; ++r) {
    auto& e = out[r];
    e.time = cfg.record_times[r];
    e.positions.assign(pos.begin() + static_cast<long>(r * n), pos.begin() + static_cast<long>((r + 1) * n));
    e.alive.assign(alive.begin() + static_cast<long>(r * n), alive.begin() + static_cast<long>((r + 1) * n));
    e.n_alive = static_cast<std::size_t>(std::count(e.alive.begin(), e.alive.end(), 1));
    e.overflow_kills = static_cast<std::size_t>(
        std::count(overflow.begin() + static_cast<long>(r * n), overflow.begin() + static_cast<long>((r + 1) * n), 1));
  }
  return out;
}

}  // namespace detail

/// Euler-Maruyama for the killed process; a path dies at the first step
/// ending at or below cfg.left_kill_level and stays at 0.
inline std::vector<EmpiricalEnsemble> simulate_killed(const DiffusionModel& model,
                                                      const InitialSpec& initial,
                                                      const SimConfig& cfg) {
  const double dt = cfg.dt;
  const double level = cfg.left_kill_level;
  return detail::run_paths(
      initial, cfg,
      [&](double x, double dw) {
        const double q = model.drift(x);
        return std::isfinite(q) ? x - q * dt + dw : std::numeric_limits<double>::quiet_NaN();
      },
      [level](double x) { return x <= level; });
}

/// q̃ on the grid: linear between nodes, constant beyond the edges. Node
/// lookup uses the grid's spacing rule, so a step costs O(1).
class TabulatedDrift {
 public:
  explicit TabulatedDrift(const SpectralData& spec)
      : x_(spec.grid.points), q_(spec.q_tilde.data(), spec.q_tilde.data() + spec.q_tilde.size()),
        spacing_(spec.grid.spacing), eps_(spec.grid.eps), R_(spec.grid.R) {
    const double n1 = static_cast<double>(spec.grid.size() + 1);
    scale_ = spacing_ == Spacing::uniform ? n1 / (R_ - eps_) : n1 / std::log(R_ / eps_);
  }

  double operator()(double x) const {
    if (x <= x_.front()) return q_.front();
    if (x >= x_.back()) return q_.back();
    // x_i = node(i+1): invert the spacing rule for a first guess.
    const double s = spacing_ == Spacing::uniform ? (x - eps_) * scale_ : std::log(x / eps_) * scale_;
    auto j = static_cast<std::size_t>(std::clamp(s, 1.0, static_cast<double>(x_.size() - 1)));
    // j indexes the right node of the bracketing cell; correct rounding drift.
    while (j > 1 && x_[j - 1] > x) --j;
    while (j + 1 < x_.size() && x_[j] < x) ++j;
    const double w = (x - x_[j - 1]) / (x_[j] - x_[j - 1]);
    return (1.0 - w) * q_[j - 1] + w * q_[j];
  }

 private:
  std::vector<double> x_, q_;
  Spacing spacing_;
  double eps_, R_, scale_ = 1.0;
};

/// Euler-Maruyama for the Q-process with drift q̃, reflected at ε.
inline std::vector<EmpiricalEnsemble> simulate_qprocess(const SpectralData& spec,
                                                        const InitialSpec& initial,
                                                        const SimConfig& cfg) {
  const TabulatedDrift qt(spec);
  const double dt = cfg.dt;
  const double eps = spec.grid.eps;
  return detail::run_paths(
      initial, cfg,
      [&](double x, double dw) {
        double y = x - qt(x) * dt + dw;
        if (y < eps) y = 2.0 * eps - y;
        return y;
      },
      [](double) { return false; });
}

/// Histogram of surviving positions over `edges`, normalized by n_alive.
/// Survivors outside [edges.front(), edges.back()] go to the end bins.
inline std::vector<double> conditional_distribution(const EmpiricalEnsemble& ens,
                                                    std::span<const double> edges) {
  if (edges.size() < 2) throw Error("conditional_distribution: need at least two edges");
  if (ens.n_alive == 0) {
    throw EmptyEnsembleError("conditional_distribution: no surviving paths at t=" + std::to_string(ens.time));
  }
  const std::size_t nb = edges.size() - 1;
  std::vector<double> h(nb, 0.0);
  for (std::size_t p = 0; p < ens.positions.size(); ++p) {
    if (!ens.alive[p]) continue;
    const double x = ens.positions[p];
    const auto it = std::upper_bound(edges.begin() + 1, edges.end() - 1, x);
    h[static_cast<std::size_t>(it - (edges.begin() + 1))] += 1.0;
  }
  for (double& v : h) v /= static_cast<double>(ens.n_alive);
  return h;
}

}  // namespace qsd
