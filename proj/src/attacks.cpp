#include "bsb/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace bsb {
namespace {

// Charges every query against both the oracle's ledger and the attack's own
// cap, and answers "is this adversarial?" relative to the original label.
class QueryBudget {
 public:
  QueryBudget(Oracle& o, int label, std::size_t cap) : o_(o), label_(label), cap_(cap) {}

  void reserve(std::size_t n) {
    if (used_ + n > cap_)
      throw BudgetError("attack query cap of " + std::to_string(cap_) + " reached");
  }

  int label_of(const Tensor& z) {
    reserve(1);
    const int l = o_.query_label(z);
    ++used_;
    return l;
  }

  bool adversarial(const Tensor& z) { return label_of(z) != label_; }

  std::vector<int> labels_of(const Tensor& batch) {
    reserve(batch.batch());
    auto out = o_.query_labels(batch);
    used_ += batch.batch();
    return out;
  }

  std::size_t used() const { return used_; }
  std::size_t remaining() const { return cap_ - used_; }
  int label() const { return label_; }
  Domain domain() const { return domain_of(o_); }

 private:
  Oracle& o_;
  int label_;
  std::size_t cap_;
  std::size_t used_ = 0;
};

void require_label(QueryBudget& q, const Tensor& x) {
  if (q.label_of(x) != q.label())
    throw PreconditionError("input is not classified as its original label " +
                            std::to_string(q.label()));
}

Tensor blend(const Tensor& x, const Tensor& x_adv, double alpha, Norm norm) {
  if (norm == Norm::l2) {
    return Tensor(x.shape(), (1.0 - alpha) * x.data() + alpha * x_adv.data());
  }
  const double r = alpha * linf_distance(x, x_adv);
  return Tensor(x.shape(), x_adv.data()
                              .array()
                              .max(x.data().array() - r)
                              .min(x.data().array() + r)
                              .matrix());
}

struct Labelled {
  Tensor point;
  int label;
};

Labelled init_impl(QueryBudget& q, const Tensor& x, std::size_t trials, Rng& rng) {
  const Domain dom = q.domain();
  const std::size_t uniform_trials = trials - trials / 4;
  for (std::size_t t = 0; t < uniform_trials; ++t) {
    Tensor r = uniform<double>(x.shape(), dom.lo, dom.hi, rng);
    if (const int l = q.label_of(r); l != q.label()) return {std::move(r), l};
  }
  // Fallback: blends of x toward random corner images, strongest first.
  std::bernoulli_distribution coin(0.5);
  for (std::size_t t = uniform_trials; t < trials; ++t) {
    Tensor corner(x.shape());
    for (auto& v : corner.data()) v = coin(rng) ? dom.hi : dom.lo;
    const double alpha = 1.0 - 0.5 * static_cast<double>(t % 2);
    Tensor r = clip(blend(x, corner, alpha, Norm::l2), dom);
    if (const int l = q.label_of(r); l != q.label()) return {std::move(r), l};
  }
  throw Error("no adversarial starting point found in " + std::to_string(trials) +
              " trials");
}

Labelled bisect(QueryBudget& q, const Tensor& x, Labelled adv, double tol, Norm norm) {
  if (distance(x, adv.point, norm) <= tol) return adv;
  const Tensor far = adv.point;
  double lo = 0.0, hi = 1.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    Tensor cand = blend(x, far, mid, norm);
    const int l = q.label_of(cand);
    if (l != q.label()) {
      hi = mid;
      adv = {std::move(cand), l};
    } else {
      lo = mid;
    }
  }
  return adv;
}

Tensor gradient_impl(QueryBudget& q, const Tensor& x_b, double radius,
                     std::size_t batch, Rng& rng, Norm norm) {
  const Domain dom = q.domain();
  const std::size_t dim = x_b.sample_size();
  for (int attempt = 0; attempt < 2; ++attempt) {
    RowMatrix<double> u(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(dim));
    if (norm == Norm::l2) {
      std::normal_distribution<double> g(0.0, 1.0);
      for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = g(rng);
    } else {
      std::uniform_real_distribution<double> g(-1.0, 1.0);
      for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = g(rng);
    }
    u.rowwise().normalize();

    Shape s = x_b.shape();
    s[0] = batch;
    Tensor probes(s);
    auto pm = probes.matrix();
    pm = (u * radius).rowwise() + x_b.data().transpose();
    pm = pm.cwiseMax(dom.lo).cwiseMin(dom.hi);
    // Directions actually probed after clipping.
    u = (pm.rowwise() - x_b.data().transpose()) / radius;

    const auto labels = q.labels_of(probes);
    Eigen::VectorXd phi(static_cast<Eigen::Index>(batch));
    for (std::size_t i = 0; i < batch; ++i)
      phi[static_cast<Eigen::Index>(i)] = labels[i] != q.label() ? 1.0 : -1.0;

    Eigen::VectorXd est;
    const double mean = phi.mean();
    if (std::abs(mean) == 1.0) {
      est = mean * u.colwise().mean().transpose();
    } else {
      est = u.transpose() * (phi.array() - mean).matrix() / static_cast<double>(batch - 1);
    }
    const double nrm = est.norm();
    if (nrm > 0.0 && std::isfinite(nrm)) return Tensor(x_b.shape(), est / nrm);
  }
  throw Error("gradient direction estimate has zero norm");
}

void finalise(AttackResult& r, const Tensor* best, double dist, int final_label,
              double budget, std::size_t used) {
  r.queries_used = used;
  if (best) {
    r.adversarial_example = *best;
    r.distance = dist;
    r.final_label = final_label;
    r.success = final_label != r.original_label && dist <= budget;
  }
}

}  // namespace

std::string norm_name(Norm n) { return n == Norm::l2 ? "l2" : "linf"; }

Norm parse_norm(const std::string& name) {
  if (name == "l2") return Norm::l2;
  if (name == "linf") return Norm::linf;
  throw ValidationError("unknown norm '" + name + "'");
}

double distance(const Tensor& a, const Tensor& b, Norm norm) {
  return norm == Norm::l2 ? l2_distance(a, b) : linf_distance(a, b);
}

double default_budget(Norm norm) { return norm == Norm::l2 ? 3.0 : 0.1; }

Tensor clip(const Tensor& x, Domain d) {
  return Tensor(x.shape(), x.data().cwiseMax(d.lo).cwiseMin(d.hi));
}

void BoundaryConfig::validate() const {
  if (!(orth_step > 0.0) || !(source_step > 0.0 && source_step < 1.0))
    throw ValidationError("boundary attack needs orth_step > 0 and source_step in (0, 1)");
  if (max_queries == 0 || adapt_every == 0 || init_trials == 0)
    throw ValidationError("boundary attack counts must be positive");
  if (!(target_orth_success > 0.0 && target_orth_success < 1.0))
    throw ValidationError("target_orth_success must lie in (0, 1)");
  if (!(distance_budget > 0.0)) throw ValidationError("distance budget must be positive");
}

void HsjConfig::validate() const {
  if (!(bin_search_tol > 0.0)) throw ValidationError("bin_search_tol must be positive");
  if (grad_batch_init < 2) throw ValidationError("grad_batch_init must be at least 2");
  if (max_outer_iters == 0 || max_queries == 0 || init_trials == 0)
    throw ValidationError("hsj counts must be positive");
  if (!(distance_budget > 0.0)) throw ValidationError("distance budget must be positive");
}

Tensor init_adversarial(Oracle& o, const Tensor& x, int label, std::size_t trials,
                        Rng& rng) {
  if (trials == 0) throw ValidationError("init_adversarial: trials must be positive");
  QueryBudget q(o, label, trials + 1);
  require_label(q, x);
  return init_impl(q, x, trials, rng).point;
}

Tensor orthogonal_perturbation(const Tensor& x, const Tensor& x_adv, double delta,
                               Rng& rng, Domain domain) {
  const Eigen::VectorXd source = x_adv.data() - x.data();
  const double d = source.norm();
  if (d == 0.0) throw ValidationError("orthogonal_perturbation: x_adv equals x");
  const Eigen::VectorXd dir = source / d;

  Eigen::VectorXd eta = standard_normal(x.shape(), rng).data();
  eta -= eta.dot(dir) * dir;
  const double en = eta.norm();
  Eigen::VectorXd cand = x_adv.data();
  if (en > 0.0 && delta > 0.0) cand += eta * (delta * d / en);

  const Eigen::VectorXd offset = cand - x.data();
  cand = x.data() + offset * (d / offset.norm());
  return clip(Tensor(x.shape(), std::move(cand)), domain);
}

Tensor source_step(const Tensor& x, const Tensor& x_adv, double eps, Domain domain) {
  return clip(Tensor(x.shape(), x_adv.data() + eps * (x.data() - x_adv.data())), domain);
}

AttackResult boundary_attack(Oracle& o, const Tensor& x, int label,
                             const BoundaryConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  QueryBudget q(o, label, cfg.max_queries);
  const Domain dom = q.domain();
  AttackResult r;
  r.original_label = label;

  std::optional<Tensor> adv;
  double dist = std::numeric_limits<double>::infinity();
  int adv_label = label;
  double delta = cfg.orth_step;
  double eps = cfg.source_step;
  std::size_t orth_tries = 0, orth_hits = 0, src_tries = 0, src_hits = 0;

  auto accept = [&](Tensor z, int l) {
    dist = l2_distance(z, x);
    adv = std::move(z);
    adv_label = l;
    r.distance_history.push_back(dist);
  };

  try {
    require_label(q, x);
    Labelled start = init_impl(q, x, std::min(cfg.init_trials, q.remaining()), rng);
    accept(start.point, start.label);
    start = bisect(q, x, std::move(start), 1e-3, Norm::l2);
    accept(std::move(start.point), start.label);

    for (;;) {
      if (dist == 0.0) break;
      Tensor cand = orthogonal_perturbation(x, *adv, delta, rng, dom);
      ++orth_tries;
      const int l1 = q.label_of(cand);
      if (l1 != label) {
        ++orth_hits;
        Tensor closer = source_step(x, cand, eps, dom);
        ++src_tries;
        const int l2 = q.label_of(closer);
        if (l2 != label) {
          ++src_hits;
          accept(std::move(closer), l2);
        } else if (l2_distance(cand, x) <= dist) {
          accept(std::move(cand), l1);
        }
      }
      if (orth_tries == cfg.adapt_every) {
        const double rate = static_cast<double>(orth_hits) / static_cast<double>(orth_tries);
        delta = std::clamp(delta * (rate > cfg.target_orth_success ? 1.5 : 0.66), 1e-9, 1.0);
        if (src_tries > 0) {
          const double srate = static_cast<double>(src_hits) / static_cast<double>(src_tries);
          eps = std::clamp(eps * (srate > cfg.target_orth_success ? 1.5 : 0.66), 1e-9, 0.5);
        } else {
          eps = std::max(eps * 0.66, 1e-9);
        }
        orth_tries = orth_hits = src_tries = src_hits = 0;
      }
    }
  } catch (const BudgetError&) {
  } catch (const PreconditionError&) {
    throw;
  } catch (const Error&) {
    // Initialisation failure: reported as an unsuccessful attempt.
  }
  finalise(r, adv ? &*adv : nullptr, dist, adv_label, cfg.distance_budget, q.used());
  return r;
}

Tensor binary_search_to_boundary(Oracle& o, const Tensor& x, const Tensor& x_adv,
                                 int label, double tol, Norm norm) {
  if (!(tol > 0.0)) throw ValidationError("binary search tolerance must be positive");
  QueryBudget q(o, label, std::numeric_limits<std::size_t>::max() / 2);
  if (q.adversarial(x))
    throw PreconditionError("binary search: x is already adversarial");
  const int l = q.label_of(x_adv);
  if (l == label) throw PreconditionError("binary search: x_adv is not adversarial");
  return bisect(q, x, {x_adv, l}, tol, norm).point;
}

Tensor estimate_gradient_direction(Oracle& o, const Tensor& x_b, int label,
                                   double radius, std::size_t batch, Rng& rng,
                                   Norm norm) {
  if (batch < 2) throw ValidationError("gradient estimate needs at least two probes");
  if (!(radius > 0.0)) throw ValidationError("gradient probe radius must be positive");
  QueryBudget q(o, label, std::numeric_limits<std::size_t>::max() / 2);
  return gradient_impl(q, x_b, radius, batch, rng, norm);
}

AttackResult hsj_attack(Oracle& o, const Tensor& x, int label, const HsjConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  QueryBudget q(o, label, cfg.max_queries);
  const Domain dom = q.domain();
  const double dim = static_cast<double>(x.sample_size());
  AttackResult r;
  r.original_label = label;

  // The linf box family moves every coordinate at once, so its bisection
  // bracket is tightened by 1/sqrt(n) to keep boundary points within the
  // probe radius.
  const double tol = cfg.norm == Norm::l2 ? cfg.bin_search_tol
                                          : cfg.bin_search_tol / std::sqrt(dim);
  std::optional<Tensor> adv;
  double dist = std::numeric_limits<double>::infinity();
  int adv_label = label;

  try {
    require_label(q, x);
    Labelled cur = init_impl(q, x, std::min(cfg.init_trials, q.remaining()), rng);
    adv = cur.point;
    adv_label = cur.label;
    dist = distance(cur.point, x, cfg.norm);
    cur = bisect(q, x, std::move(cur), tol, cfg.norm);
    adv = cur.point;
    adv_label = cur.label;
    dist = distance(cur.point, x, cfg.norm);
    r.distance_history.push_back(dist);

    for (std::size_t t = 1; t <= cfg.max_outer_iters && dist > 0.0; ++t) {
      const double radius = cfg.bin_search_tol * std::sqrt(dim) * dist;
      std::size_t batch = static_cast<std::size_t>(
          std::lround(static_cast<double>(cfg.grad_batch_init) * std::sqrt(static_cast<double>(t))));
      batch = std::min(batch, q.remaining());
      if (batch < 2) break;
      Tensor grad = gradient_impl(q, *adv, radius, batch, rng, cfg.norm);
      if (cfg.norm == Norm::linf) grad.data() = grad.data().cwiseSign();

      double step = dist / std::sqrt(static_cast<double>(t));
      std::optional<Labelled> stepped;
      while (step > 1e-12 * std::max(1.0, dist)) {
        Tensor cand = clip(Tensor(x.shape(), adv->data() + step * grad.data()), dom);
        if (const int l = q.label_of(cand); l != label) {
          stepped = Labelled{std::move(cand), l};
          break;
        }
        step *= 0.5;
      }
      if (stepped) {
        Labelled next = bisect(q, x, std::move(*stepped), tol, cfg.norm);
        const double d_next = distance(next.point, x, cfg.norm);
        if (d_next < dist) {
          adv = std::move(next.point);
          adv_label = next.label;
          dist = d_next;
        }
      }
      r.distance_history.push_back(dist);
    }
  } catch (const BudgetError&) {
  } catch (const PreconditionError&) {
    throw;
  } catch (const Error&) {
    // Initialisation failure or a degenerate gradient estimate; keep the
    // best iterate found so far.
  }
  finalise(r, adv ? &*adv : nullptr, dist, adv_label, cfg.distance_budget, q.used());
  return r;
}

}  // namespace bsb
