#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <Eigen/Dense>

#include "step/errors.hpp"
#include "step/gridmap.hpp"

namespace step {

/// Gaussian traversability cost R ~ N(mu, sigma^2) of one cell.
struct RiskDistribution {
  double mu = 0.0;
  double sigma = 0.0;
};

/// CVaR probability level. Values at or above kMaxAlpha are capped there,
/// since the Gaussian tail factor diverges as alpha -> 1.
class RiskLevel {
 public:
  static constexpr double kMaxAlpha = 0.999;

  explicit RiskLevel(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("risk level alpha must lie in (0, 1)");
    alpha_ = std::min(alpha, kMaxAlpha);
  }
  double value() const { return alpha_; }

  /// phi(Phi^-1(alpha)) / (1 - alpha): the sigma multiplier of Gaussian CVaR.
  double tail_factor() const {
    static const boost::math::normal_distribution<double> standard;
    const double z = boost::math::quantile(standard, alpha_);
    return boost::math::pdf(standard, z) / (1.0 - alpha_);
  }

  friend bool operator==(const RiskLevel&, const RiskLevel&) = default;

 private:
  double alpha_;
};

inline double cvar_gaussian(double mu, double sigma, double tail_factor) { return mu + sigma * tail_factor; }

inline double cvar_gaussian(const RiskDistribution& r, const RiskLevel& level) {
  if (!(r.sigma >= 0.0)) throw std::invalid_argument("risk sigma must be >= 0");
  return cvar_gaussian(r.mu, r.sigma, level.tail_factor());
}

// ─── Risk factors ───────────────────────────────────────────────────────────

enum class RiskFactorKind { collision, step, tipover, contact_loss, slippage, sensor_uncertainty };

inline std::string to_string(RiskFactorKind k) {
  switch (k) {
    case RiskFactorKind::collision: return "collision";
    case RiskFactorKind::step: return "step";
    case RiskFactorKind::tipover: return "tipover";
    case RiskFactorKind::contact_loss: return "contact_loss";
    case RiskFactorKind::slippage: return "slippage";
    case RiskFactorKind::sensor_uncertainty: return "sensor_uncertainty";
  }
  return "unknown";
}

inline RiskFactorKind risk_factor_kind_from_string(const std::string& s) {
  for (auto k : {RiskFactorKind::collision, RiskFactorKind::step, RiskFactorKind::tipover,
                 RiskFactorKind::contact_loss, RiskFactorKind::slippage, RiskFactorKind::sensor_uncertainty}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown risk factor kind '" + s + "'");
}

/// Hazard signal -> mean risk is a linear ramp from `benign` (mu = 0) to
/// `lethal` (mu = risk_cap). `lethal < benign` is allowed for signals where
/// smaller is worse (obstacle clearance).
struct RiskFactorSpec {
  RiskFactorKind kind = RiskFactorKind::step;
  double weight = 1.0;
  double benign = 0.0;
  double lethal = 1.0;
  double risk_cap = 1.0;
  double sigma_floor = 0.01;
  /// Constant sigma addend on elevation-derived factors.
  double localization_sigma = 0.0;

  double obstacle_height = 0.3;  // collision: height above local ground marking an obstacle
  double search_radius = 1.5;    // collision: clearance search radius [m]
  int window = 3;                // contact_loss / collision ground window (odd, cells)

  Eigen::Vector2d sensor_origin = Eigen::Vector2d::Zero();
  double sigma_per_meter = 0.0;  // sigma growth with sensor distance
  std::string input_layer = "slippage";
};

/// Defaults per kind. These thresholds are tuning values, not measured ones.
inline RiskFactorSpec default_factor_spec(RiskFactorKind kind) {
  RiskFactorSpec s;
  s.kind = kind;
  switch (kind) {
    case RiskFactorKind::collision:
      s.benign = 1.0;
      s.lethal = 0.3;
      break;
    case RiskFactorKind::step:
      s.benign = 0.05;
      s.lethal = 0.2;
      s.sigma_per_meter = 0.01;
      break;
    case RiskFactorKind::tipover:
      s.benign = 0.0;
      s.lethal = 45.0 * M_PI / 180.0;
      break;
    case RiskFactorKind::contact_loss:
      s.benign = 0.01;
      s.lethal = 0.1;
      break;
    case RiskFactorKind::slippage:
      s.benign = 0.0;
      s.lethal = 1.0;
      break;
    case RiskFactorKind::sensor_uncertainty:
      s.sigma_per_meter = 0.01;
      break;
  }
  return s;
}

struct RiskLayers {
  std::vector<double> mu;
  std::vector<double> sigma;
};

namespace detail {

inline double ramp(double signal, const RiskFactorSpec& spec) {
  if (spec.lethal == spec.benign) return signal >= spec.lethal ? spec.risk_cap : 0.0;
  const double t = (signal - spec.benign) / (spec.lethal - spec.benign);
  return spec.risk_cap * std::clamp(t, 0.0, 1.0);
}

inline const std::vector<double>& require_layer(const GridMap& map, std::string_view name, RiskFactorKind kind) {
  if (!map.has_layer(name))
    throw ConfigError("risk factor '" + to_string(kind) + "' requires layer '" + std::string(name) + "'");
  return map.layer(name);
}

inline double sensor_distance(const GridMap& map, std::size_t i, const RiskFactorSpec& spec) {
  return (map.world_of(map.cell_at(i)) - spec.sensor_origin).norm();
}

/// Largest absolute height difference to any present 8-neighbour.
inline std::vector<double> max_step_height(const GridMap& map, const std::vector<double>& h) {
  const auto w = std::ptrdiff_t(map.width()), ht = std::ptrdiff_t(map.height());
  std::vector<double> out(map.cell_count(), 0.0);
  for (std::ptrdiff_t r = 0; r < ht; ++r) {
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      const double hc = h[r * w + c];
      if (is_missing(hc)) continue;
      double best = 0.0;
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
          const auto rr = r + dr, cc = c + dc;
          if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= ht || cc >= w) continue;
          const double hn = h[rr * w + cc];
          if (!is_missing(hn)) best = std::max(best, std::abs(hn - hc));
        }
      }
      out[r * w + c] = best;
    }
  }
  return out;
}

/// RMS residual of a least-squares plane through the window around each cell.
inline std::vector<double> plane_fit_residual(const GridMap& map, const std::vector<double>& h, int window) {
  const auto w = std::ptrdiff_t(map.width()), ht = std::ptrdiff_t(map.height());
  const std::ptrdiff_t half = std::max(1, window / 2);
  std::vector<double> out(map.cell_count(), 0.0);
  for (std::ptrdiff_t r = 0; r < ht; ++r) {
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      if (is_missing(h[r * w + c])) continue;
      Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
      Eigen::Vector3d atb = Eigen::Vector3d::Zero();
      int n = 0;
      for (std::ptrdiff_t dr = -half; dr <= half; ++dr) {
        for (std::ptrdiff_t dc = -half; dc <= half; ++dc) {
          const auto rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= ht || cc >= w) continue;
          const double z = h[rr * w + cc];
          if (is_missing(z)) continue;
          const Eigen::Vector3d a(double(dc), double(dr), 1.0);
          ata += a * a.transpose();
          atb += a * z;
          ++n;
        }
      }
      if (n < 4) continue;
      const Eigen::Vector3d coef = ata.ldlt().solve(atb);
      double ss = 0.0;
      for (std::ptrdiff_t dr = -half; dr <= half; ++dr) {
        for (std::ptrdiff_t dc = -half; dc <= half; ++dc) {
          const auto rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= ht || cc >= w) continue;
          const double z = h[rr * w + cc];
          if (is_missing(z)) continue;
          const double e = z - (coef[0] * double(dc) + coef[1] * double(dr) + coef[2]);
          ss += e * e;
        }
      }
      out[r * w + c] = std::sqrt(ss / n);
    }
  }
  return out;
}

/// Distance from each cell center to the nearest obstacle cell center, capped
/// at `radius`. Obstacle cells stand `obstacle_height` above the lowest
/// elevation in their ground window.
inline std::vector<double> obstacle_clearance(const GridMap& map, const std::vector<double>& h,
                                              const RiskFactorSpec& spec) {
  const auto w = std::ptrdiff_t(map.width()), ht = std::ptrdiff_t(map.height());
  const std::ptrdiff_t half = std::max(1, spec.window / 2);
  std::vector<char> obstacle(map.cell_count(), 0);
  for (std::ptrdiff_t r = 0; r < ht; ++r) {
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      const double z = h[r * w + c];
      if (is_missing(z)) continue;
      double ground = z;
      for (std::ptrdiff_t dr = -half; dr <= half; ++dr)
        for (std::ptrdiff_t dc = -half; dc <= half; ++dc) {
          const auto rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= ht || cc >= w) continue;
          const double zn = h[rr * w + cc];
          if (!is_missing(zn)) ground = std::min(ground, zn);
        }
      obstacle[r * w + c] = (z - ground) >= spec.obstacle_height;
    }
  }
  const double res = map.resolution();
  const auto reach = std::ptrdiff_t(std::ceil(spec.search_radius / res));
  std::vector<double> out(map.cell_count(), spec.search_radius);
  for (std::ptrdiff_t r = 0; r < ht; ++r) {
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      double best = spec.search_radius;
      for (std::ptrdiff_t dr = -reach; dr <= reach; ++dr)
        for (std::ptrdiff_t dc = -reach; dc <= reach; ++dc) {
          const auto rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= ht || cc >= w || !obstacle[rr * w + cc]) continue;
          best = std::min(best, res * std::hypot(double(dr), double(dc)));
        }
      out[r * w + c] = best;
    }
  }
  return out;
}

}  // namespace detail

/// Per-cell (mu, sigma) of one risk factor. mu lies in [0, risk_cap].
inline RiskLayers compute_risk_factor(const GridMap& map, const RiskFactorSpec& spec) {
  const std::size_t n = map.cell_count();
  RiskLayers out{std::vector<double>(n, 0.0), std::vector<double>(n, spec.sigma_floor)};
  const double elev_sigma = spec.sigma_floor + spec.localization_sigma;

  switch (spec.kind) {
    case RiskFactorKind::collision: {
      const auto& h = detail::require_layer(map, layer::elevation, spec.kind);
      const auto clearance = detail::obstacle_clearance(map, h, spec);
      for (std::size_t i = 0; i < n; ++i) {
        out.mu[i] = detail::ramp(clearance[i], spec);
        out.sigma[i] = elev_sigma;
      }
      break;
    }
    case RiskFactorKind::step: {
      const auto& h = detail::require_layer(map, layer::elevation, spec.kind);
      const auto step_h = detail::max_step_height(map, h);
      for (std::size_t i = 0; i < n; ++i) {
        if (is_missing(h[i])) {
          // negative obstacle: no measurement in the cell
          out.mu[i] = spec.risk_cap;
          out.sigma[i] = spec.sigma_floor + spec.sigma_per_meter * detail::sensor_distance(map, i, spec);
        } else {
          out.mu[i] = detail::ramp(step_h[i], spec);
          out.sigma[i] = elev_sigma;
        }
      }
      break;
    }
    case RiskFactorKind::tipover: {
      detail::require_layer(map, layer::elevation, spec.kind);
      const auto& nz = detail::require_layer(map, layer::normal_z, spec.kind);
      for (std::size_t i = 0; i < n; ++i) {
        const double slope = std::acos(std::clamp(nz[i], -1.0, 1.0));
        out.mu[i] = detail::ramp(slope, spec);
        out.sigma[i] = elev_sigma;
      }
      break;
    }
    case RiskFactorKind::contact_loss: {
      const auto& h = detail::require_layer(map, layer::elevation, spec.kind);
      const auto residual = detail::plane_fit_residual(map, h, spec.window);
      for (std::size_t i = 0; i < n; ++i) {
        out.mu[i] = detail::ramp(residual[i], spec);
        out.sigma[i] = elev_sigma;
      }
      break;
    }
    case RiskFactorKind::slippage: {
      const auto& s = detail::require_layer(map, spec.input_layer, spec.kind);
      for (std::size_t i = 0; i < n; ++i) out.mu[i] = is_missing(s[i]) ? 0.0 : detail::ramp(s[i], spec);
      break;
    }
    case RiskFactorKind::sensor_uncertainty: {
      for (std::size_t i = 0; i < n; ++i)
        out.sigma[i] = elev_sigma + spec.sigma_per_meter * detail::sensor_distance(map, i, spec);
      break;
    }
  }
  return out;
}

struct WeightedRisk {
  std::span<const double> mu;
  std::span<const double> sigma;
  double weight;
};

/// Weighted sum of independent Gaussian factors:
/// mu = sum w_l mu_l, sigma^2 = sum w_l^2 sigma_l^2.
inline RiskLayers aggregate_risk(std::span<const WeightedRisk> factors) {
  if (factors.empty()) throw std::invalid_argument("aggregate_risk needs at least one factor");
  const std::size_t n = factors.front().mu.size();
  double wsum = 0.0;
  for (const auto& f : factors) {
    if (f.mu.size() != n || f.sigma.size() != n) throw std::invalid_argument("risk factor layer shape mismatch");
    if (!(f.weight >= 0.0)) throw std::invalid_argument("risk factor weight must be >= 0");
    wsum += f.weight;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("risk factor weights must sum to 1");

  RiskLayers out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0, var = 0.0;
    for (const auto& f : factors) {
      mu += f.weight * f.mu[i];
      var += f.weight * f.weight * f.sigma[i] * f.sigma[i];
    }
    out.mu[i] = std::max(0.0, mu);
    out.sigma[i] = std::sqrt(var);
  }
  return out;
}

/// Per-cell CVaR layer from risk_mu / risk_sigma. Missing mu stays missing.
inline std::vector<double> cvar_values(const GridMap& map, const RiskLevel& level) {
  if (!map.has_layer(layer::risk_mu) || !map.has_layer(layer::risk_sigma))
    throw ConfigError("CVaR map requires layers 'risk_mu' and 'risk_sigma'");
  const auto& mu = map.layer(layer::risk_mu);
  const auto& sigma = map.layer(layer::risk_sigma);
  const double k = level.tail_factor();
  std::vector<double> out(map.cell_count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = is_missing(sigma[i]) ? 0.0 : sigma[i];
    out[i] = is_missing(mu[i]) ? kMissing : cvar_gaussian(mu[i], s, k);
  }
  return out;
}

inline void build_cvar_layer(GridMap& map, const RiskLevel& level) {
  map.set_layer(layer::cvar, cvar_values(map, level));
}

/// Computes every factor, stores {kind}_mu / {kind}_sigma, aggregates into
/// risk_mu / risk_sigma, and builds the cvar layer.
inline void build_risk_map(GridMap& map, std::span<const RiskFactorSpec> specs, const RiskLevel& level) {
  if (specs.empty()) throw ConfigError("no risk factors configured");
  if (map.has_layer(layer::elevation) && !map.has_layer(layer::normal_z)) compute_surface_normals(map);
  std::vector<RiskLayers> computed;
  computed.reserve(specs.size());
  for (const auto& spec : specs) {
    computed.push_back(compute_risk_factor(map, spec));
    map.set_layer(to_string(spec.kind) + "_mu", computed.back().mu);
    map.set_layer(to_string(spec.kind) + "_sigma", computed.back().sigma);
  }
  std::vector<WeightedRisk> weighted;
  for (std::size_t i = 0; i < specs.size(); ++i)
    weighted.push_back({computed[i].mu, computed[i].sigma, specs[i].weight});
  auto agg = aggregate_risk(weighted);
  map.set_layer(layer::risk_mu, std::move(agg.mu));
  map.set_layer(layer::risk_sigma, std::move(agg.sigma));
  build_cvar_layer(map, level);
}

}  // namespace step
