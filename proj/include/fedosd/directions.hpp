#pragma once

// Unlearning update directions. FedOSD uses the orthogonal steepest-descent
// direction; the ablations swap in gradient ascent on CE (M1), the raw
// negative UCE gradient (M2) or a random null-space direction (M4).

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedosd/linalg.hpp"
#include "fedosd/nn.hpp"
#include "fedosd/random.hpp"

namespace fedosd {

enum class DirectionKind { FedOsd, GaCe, NegGradUce, RandomNull };

inline const char* to_string(DirectionKind k) {
  switch (k) {
    case DirectionKind::FedOsd: return "fedosd";
    case DirectionKind::GaCe: return "ga_ce";
    case DirectionKind::NegGradUce: return "neg_grad_uce";
    case DirectionKind::RandomNull: return "random_null";
  }
  return "?";
}

struct DirectionInputs {
  const GradientMatrix& remaining;
  const GradVec& target;
};

/// `direction` is empty when the round must be skipped; `flags` says why.
struct DirectionOutcome {
  std::optional<GradVec> direction;
  std::vector<std::string> flags;
};

struct ClippedDirection {
  GradVec direction;
  bool clipped = false;
  bool finite = true;
  double raw_norm = 0.0;
};

/// M1: ascend the target's CE gradient, clipped to `cap` in norm.
inline ClippedDirection ga_ce_direction(const GradVec& g_u_ce, double cap) {
  ClippedDirection out{g_u_ce};
  out.raw_norm = norm(g_u_ce.flat);
  out.finite = std::isfinite(out.raw_norm);
  if (out.finite && cap > 0.0 && out.raw_norm > cap) {
    scale(out.direction.flat, cap / out.raw_norm);
    out.clipped = true;
  }
  return out;
}

/// M2
inline GradVec neg_grad_direction(const GradVec& g_u) {
  GradVec d = g_u;
  scale(d.flat, -1.0);
  return d;
}

/// M4: a point drawn uniformly from the sphere of radius ||g_u|| inside
/// null(G), restricted to the half with d . g_u < 0. A draw landing in the
/// wrong half is reflected, which preserves uniformity on the half-sphere.
/// Returns nullopt if the null space is trivial or 50 draws are all
/// (numerically) orthogonal to g_u.
inline std::optional<GradVec> random_null_direction(const GradientMatrix& g, const GradVec& g_u, Rng& rng,
                                                    double tol_rank = kDefaultRankTol) {
  detail::check_osd_inputs(g, g_u);
  const NullSpaceProjector proj(g, tol_rank);
  if (proj.trivial()) return std::nullopt;
  const double gu_norm = norm(g_u.flat);
  std::vector<double> z(g_u.size());
  for (int attempt = 0; attempt < 50; ++attempt) {
    for (double& x : z) x = rng.normal();
    std::vector<double> d = proj.apply(z);
    const double dn = norm(d);
    if (dn == 0.0) continue;
    scale(d, gu_norm / dn);
    const double c = dot(d, g_u.flat);
    if (std::abs(c) <= 1e-12 * gu_norm * gu_norm) continue;
    if (c > 0.0) scale(d, -1.0);
    return GradVec(std::move(d));
  }
  return std::nullopt;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct DirectionOptions {
  double tol_rank = kDefaultRankTol;
  double tol_null = kDefaultNullTol;
  double ga_clip_factor = 1000.0;  // M1 cap, in multiples of the median remaining-gradient norm
};

/// A direction rule plus the loss the target client trains with.
struct DirectionStrategy {
  DirectionKind kind = DirectionKind::FedOsd;
  Loss target_loss = Loss::Unlearning;
  std::function<DirectionOutcome(const DirectionInputs&)> compute;
};

inline DirectionStrategy make_strategy(DirectionKind kind, const DirectionOptions& opts,
                                       std::uint64_t seed = 0) {
  DirectionStrategy s;
  s.kind = kind;
  s.target_loss = kind == DirectionKind::GaCe ? Loss::CrossEntropy : Loss::Unlearning;
  switch (kind) {
    case DirectionKind::FedOsd:
      s.compute = [opts](const DirectionInputs& in) {
        DirectionOutcome out;
        out.direction = osd_direction(in.remaining, in.target, opts.tol_rank, opts.tol_null);
        if (!out.direction) out.flags.push_back("degenerate");
        return out;
      };
      break;
    case DirectionKind::NegGradUce:
      s.compute = [](const DirectionInputs& in) {
        return DirectionOutcome{neg_grad_direction(in.target), {}};
      };
      break;
    case DirectionKind::RandomNull: {
      auto rng = std::make_shared<Rng>(seed);
      s.compute = [opts, rng](const DirectionInputs& in) {
        DirectionOutcome out;
        out.direction = random_null_direction(in.remaining, in.target, *rng, opts.tol_rank);
        if (!out.direction) out.flags.push_back("degenerate");
        return out;
      };
      break;
    }
    case DirectionKind::GaCe:
      s.compute = [opts](const DirectionInputs& in) {
        std::vector<double> norms;
        for (std::size_t i = 0; i < in.remaining.rows(); ++i) norms.push_back(norm(in.remaining.row(i)));
        const double cap = opts.ga_clip_factor * median(std::move(norms));
        ClippedDirection c = ga_ce_direction(in.target, cap);
        DirectionOutcome out;
        if (!c.finite) {
          out.flags.push_back("nonfinite_gradient");
          return out;
        }
        if (c.clipped) out.flags.push_back("clipped");
        out.direction = std::move(c.direction);
        return out;
      };
      break;
  }
  return s;
}

}  // namespace fedosd
