#include "iplan/spline.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "iplan/rng.hpp"

namespace iplan {

std::vector<double> solve_tridiagonal(std::span<const double> sub, std::span<const double> diag,
                                      std::span<const double> sup, std::span<const double> rhs) {
  const std::size_t n = diag.size();
  if (sub.size() != n || sup.size() != n || rhs.size() != n)
    throw std::invalid_argument("solve_tridiagonal: band and rhs sizes differ");
  if (n == 0) return {};
  std::vector<double> c(n), d(n);
  double pivot = diag[0];
  if (pivot == 0.0) throw std::domain_error("solve_tridiagonal: zero pivot");
  c[0] = sup[0] / pivot;
  d[0] = rhs[0] / pivot;
  for (std::size_t i = 1; i < n; ++i) {
    pivot = diag[i] - sub[i] * c[i - 1];
    if (pivot == 0.0) throw std::domain_error("solve_tridiagonal: zero pivot");
    c[i] = sup[i] / pivot;
    d[i] = (rhs[i] - sub[i] * d[i - 1]) / pivot;
  }
  for (std::size_t i = n - 1; i-- > 0;) d[i] -= c[i] * d[i + 1];
  return d;
}

namespace {

// Interior system of the unit-spacing natural spline: tridiag(1, 4, 1).
std::vector<double> solve_spline_system(std::span<const double> rhs) {
  const std::size_t n = rhs.size();
  const std::vector<double> off(n, 1.0), diag(n, 4.0);
  return solve_tridiagonal(off, diag, off, rhs);
}

struct SampleWeights {
  double left, right, left_curv, right_curv;
};

SampleWeights weights_at(double s) {
  const double a = 1.0 - s, b = s;
  return {a, b, (a * a * a - a) / 6.0, (b * b * b - b) / 6.0};
}

void check_samples(std::size_t controls, std::size_t m) {
  if (m < 1) throw std::invalid_argument("spline: m must be at least 1");
  if (controls < 3) throw std::invalid_argument("spline: need at least 2 key points");
}

}  // namespace

std::vector<double> natural_second_derivatives(std::span<const double> values) {
  std::vector<double> curv(values.size(), 0.0);
  if (values.size() < 3) return curv;
  const std::size_t last = values.size() - 1;
  std::vector<double> rhs(last - 1);
  for (std::size_t j = 1; j < last; ++j)
    rhs[j - 1] = 6.0 * (values[j + 1] - 2.0 * values[j] + values[j - 1]);
  const auto inner = solve_spline_system(rhs);
  for (std::size_t j = 1; j < last; ++j) curv[j] = inner[j - 1];
  // Kept in release builds: the boundary rows are never solved for.
  if (curv.front() != 0.0 || curv.back() != 0.0)
    throw std::logic_error("natural_second_derivatives: boundary curvature is not zero");
  return curv;
}

std::vector<double> sample_natural_spline(std::span<const double> values, std::size_t m) {
  check_samples(values.size(), m);
  const std::size_t n = values.size() - 1;
  const auto curv = natural_second_derivatives(values);
  std::vector<double> out(n * m + 1);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < m; ++k) {
      const SampleWeights w = weights_at(static_cast<double>(k) / m);
      out[j * m + k] = w.left * values[j] + w.right * values[j + 1] + w.left_curv * curv[j] +
                       w.right_curv * curv[j + 1];
    }
  out[n * m] = values[n];
  return out;
}

Trajectory interpolate(const KeyPointPath& path, std::size_t m) {
  const std::size_t n = path.points.size();
  check_samples(n + 1, m);
  for (const Position& p : path.points)
    for (int a = 0; a < path.dims; ++a)
      if (!std::isfinite(p[a])) throw std::invalid_argument("interpolate: non-finite key point");
  Trajectory traj{path.dims, n, m, std::vector<Position>(n * m + 1, Position{})};
  std::vector<double> axis(n + 1);
  for (int a = 0; a < path.dims; ++a) {
    axis[0] = 0.0;
    for (std::size_t j = 0; j < n; ++j) axis[j + 1] = path.points[j][a];
    const auto samples = sample_natural_spline(axis, m);
    for (std::size_t i = 0; i < samples.size(); ++i) traj.points[i][a] = samples[i];
  }
  return traj;
}

ad::Tensor interpolate(const ad::Tensor& keypoints, std::size_t m) {
  const auto& shape = keypoints.shape();
  if (shape.size() != 2) throw ad::ShapeError("interpolate: key points must be n x d");
  const std::size_t n = shape[0], d = shape[1];
  check_samples(n + 1, m);
  const auto kv = keypoints.values();
  for (double v : kv)
    if (!std::isfinite(v)) throw std::invalid_argument("interpolate: non-finite key point");

  const std::size_t rows = n * m + 1;
  std::vector<double> out(rows * d);
  std::vector<double> axis(n + 1);
  for (std::size_t a = 0; a < d; ++a) {
    axis[0] = 0.0;
    for (std::size_t j = 0; j < n; ++j) axis[j + 1] = kv[j * d + a];
    const auto samples = sample_natural_spline(axis, m);
    for (std::size_t i = 0; i < rows; ++i) out[i * d + a] = samples[i];
  }

  const std::size_t ik = keypoints.id();
  const ad::Tensor in[] = {keypoints};
  return keypoints.tape()->record({rows, d}, std::move(out), in, [ik, n, m, d, rows](ad::Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    auto gk = t.accumulate(ik);
    std::vector<double> g_ctrl(n + 1), g_curv(n + 1), g_rhs;
    for (std::size_t a = 0; a < d; ++a) {
      std::fill(g_ctrl.begin(), g_ctrl.end(), 0.0);
      std::fill(g_curv.begin(), g_curv.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < m; ++k) {
          const double gi = g[(j * m + k) * d + a];
          const SampleWeights w = weights_at(static_cast<double>(k) / m);
          g_ctrl[j] += w.left * gi;
          g_ctrl[j + 1] += w.right * gi;
          g_curv[j] += w.left_curv * gi;
          g_curv[j + 1] += w.right_curv * gi;
        }
      g_ctrl[n] += g[(rows - 1) * d + a];
      // Through M_inner = T^-1 (6 D y); T is symmetric so its adjoint is itself.
      if (n >= 2) {
        const std::vector<double> inner(g_curv.begin() + 1, g_curv.end() - 1);
        g_rhs = solve_spline_system(inner);
        for (std::size_t j = 1; j < n; ++j) {
          const double r = 6.0 * g_rhs[j - 1];
          g_ctrl[j - 1] += r;
          g_ctrl[j] -= 2.0 * r;
          g_ctrl[j + 1] += r;
        }
      }
      for (std::size_t j = 0; j < n; ++j) gk[j * d + a] += g_ctrl[j + 1];
    }
  });
}

JacobianReport jacobian_check(const KeyPointPath& path, std::size_t m, std::uint64_t seed) {
  const std::size_t n = path.points.size();
  const std::size_t d = static_cast<std::size_t>(path.dims);
  std::vector<double> flat(n * d);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t a = 0; a < d; ++a) flat[j * d + a] = path.points[j][a];

  Rng rng(seed);
  std::vector<double> weights((n * m + 1) * d);
  for (double& c : weights) c = rng.uniform(-1.0, 1.0);

  auto objective = [&](const std::vector<double>& k) {
    ad::Tape tape;
    const auto traj = interpolate(tape.constant({n, d}, k), m);
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * traj.values()[i];
    return s;
  };

  ad::Tape tape;
  const auto keys = tape.variable({n, d}, flat);
  const auto traj = interpolate(keys, m);
  const auto root = ad::sum(ad::mul(traj, tape.constant(traj.shape(), weights)));
  tape.backward(root);
  const auto grad = tape.grad(keys);

  JacobianReport report;
  const double h = 1e-6;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    auto plus = flat, minus = flat;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (objective(plus) - objective(minus)) / (2.0 * h);
    const double dev = std::abs(grad[i] - fd);
    report.max_abs_deviation = std::max(report.max_abs_deviation, dev);
    report.max_rel_deviation = std::max(report.max_rel_deviation, dev / std::max(1.0, std::abs(fd)));
    ++report.entries;
  }
  return report;
}

void write_trajectory_csv(const Trajectory& traj, std::ostream& out) {
  out << "index,t,x,y" << (traj.dims == 3 ? ",z" : "") << ",segment\n";
  out.precision(17);
  for (std::size_t i = 0; i < traj.points.size(); ++i) {
    out << i << ',' << traj.time(i);
    for (int a = 0; a < traj.dims; ++a) out << ',' << traj.points[i][a];
    out << ',' << traj.segment(i) << '\n';
  }
}

}  // namespace iplan
