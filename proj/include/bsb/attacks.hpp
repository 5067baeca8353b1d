#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bsb/oracle.hpp"

namespace bsb {

enum class Norm { l2, linf };

std::string norm_name(Norm n);
Norm parse_norm(const std::string& name);
double distance(const Tensor& a, const Tensor& b, Norm norm);

struct Domain {
  double lo = 0.0;
  double hi = 1.0;
};

inline Domain domain_of(const Oracle& o) { return {o.options().lo, o.options().hi}; }

Tensor clip(const Tensor& x, Domain d);

struct BoundaryConfig {
  double orth_step = 0.1;    // relative size of the orthogonal perturbation
  double source_step = 0.1;  // fraction of the way toward the original
  std::size_t max_queries = 5000;
  std::size_t adapt_every = 30;
  double target_orth_success = 0.5;
  std::size_t init_trials = 200;
  std::uint64_t seed = 0;
  double distance_budget = 3.0;  // l2

  void validate() const;
};

struct HsjConfig {
  Norm norm = Norm::l2;
  double bin_search_tol = 1e-3;
  std::size_t grad_batch_init = 20;
  std::size_t max_outer_iters = 20;
  std::size_t max_queries = 5000;
  std::size_t init_trials = 200;
  std::uint64_t seed = 0;
  double distance_budget = 3.0;  // measured in `norm`

  void validate() const;
};

// Default success budgets: l2 3.0 and linf 0.1 on [0, 1] images.
double default_budget(Norm norm);

struct AttackResult {
  bool success = false;
  std::optional<Tensor> adversarial_example;
  double distance = std::numeric_limits<double>::infinity();
  std::size_t queries_used = 0;
  int original_label = -1;
  int final_label = -1;
  // Distance of the retained iterate after initialisation and after every
  // outer iteration (boundary attack: every accepted step).
  std::vector<double> distance_history;
};

// Finds a domain-valid starting point that the oracle labels differently
// from `label`: uniform random images first, then blends of x toward random
// corner images. Throws PreconditionError if x is not labelled `label` and
// Error if nothing adversarial turns up within `trials` queries.
Tensor init_adversarial(Oracle& o, const Tensor& x, int label, std::size_t trials,
                        Rng& rng);

// Gaussian step orthogonal to (x_adv - x) with l2 norm delta * |x_adv - x|,
// re-projected onto the sphere of radius |x_adv - x| around x, then clipped.
Tensor orthogonal_perturbation(const Tensor& x, const Tensor& x_adv, double delta,
                               Rng& rng, Domain domain = {});

// x_adv + eps * (x - x_adv), clipped.
Tensor source_step(const Tensor& x, const Tensor& x_adv, double eps,
                   Domain domain = {});

AttackResult boundary_attack(Oracle& o, const Tensor& x, int label,
                             const BoundaryConfig& cfg);

// Bisects the interpolation parameter between x (non-adversarial) and
// x_adv (adversarial) until the bracket is narrower than `tol`. l2 uses the
// straight segment, linf the box projections clip(x_adv, x -/+ a*|x_adv-x|_inf).
// Returns the adversarial end of the final bracket.
Tensor binary_search_to_boundary(Oracle& o, const Tensor& x, const Tensor& x_adv,
                                 int label, double tol, Norm norm = Norm::l2);

// Monte-Carlo estimate of the boundary normal at x_b from `batch` random
// unit probes of length `radius`. The returned tensor has unit l2 norm.
Tensor estimate_gradient_direction(Oracle& o, const Tensor& x_b, int label,
                                   double radius, std::size_t batch, Rng& rng,
                                   Norm norm = Norm::l2);

AttackResult hsj_attack(Oracle& o, const Tensor& x, int label, const HsjConfig& cfg);

}  // namespace bsb
