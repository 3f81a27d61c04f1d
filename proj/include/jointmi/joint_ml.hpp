#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointmi/baseline.hpp"
#include "jointmi/cox.hpp"
#include "jointmi/design.hpp"
#include "jointmi/lmm.hpp"
#include "jointmi/numeric.hpp"
#include "jointmi/quadrature.hpp"
#include "jointmi/simulate.hpp"
#include "jointmi/types.hpp"

namespace jointmi {

struct JointDesign {
  LongitudinalDesign lng;
  SurvivalDesign surv;
  int n() const { return static_cast<int>(surv.time.size()); }
};

inline JointDesign build_joint_design(const Dataset& ds, const JointModelSpec& spec) {
  JointDesign design;
  design.lng = build_longitudinal_design(ds, spec.longitudinal);
  design.surv = build_survival_design(ds, spec.survival, spec.longitudinal.time_scale);
  return design;
}

struct JointModelParameters {
  Eigen::VectorXd beta;
  double sigma2 = 1.0;
  double D = 1.0;
  Eigen::VectorXd gamma;
  double alpha = 0.0;
  BaselineHazard baseline = WeibullBaseline{};

  static JointModelParameters from_truth(const ParameterSet& truth) {
    JointModelParameters p;
    p.beta = truth.beta;
    p.sigma2 = truth.sigma * truth.sigma;
    p.D = truth.D;
    p.gamma = truth.gamma;
    p.alpha = truth.alpha;
    p.baseline = WeibullBaseline{truth.weibull_shape, truth.weibull_scale};
    return p;
  }
};

namespace jointml_detail {

// One subject's data terms as a function of the random intercept:
//   g(b) = sum_j log N(y_j; mu_j + b, sigma^2)
//        + delta * (log h0(T) + link + alpha * m(T))  -  exp(alpha b) * A
// where A is the cumulative hazard evaluated at b = 0.
struct SubjectTerms {
  long ni = 0;
  double ssr = 0.0;      // |y - X beta|^2
  double rsum = 0.0;     // 1'(y - X beta)
  double sigma2 = 1.0;
  double event_part = 0.0;  // delta * (log h0(T) + link + alpha m(T, b=0))
  double alpha = 0.0;
  double delta = 0.0;
  double A = 0.0;  // H(T | b = 0)
  double D = 1.0;

  double data_loglik(double b) const {
    double value = -0.5 * (static_cast<double>(ni) * std::log(2.0 * M_PI * sigma2) +
                           (ssr - 2.0 * b * rsum + static_cast<double>(ni) * b * b) / sigma2);
    value += event_part + delta * alpha * b;
    value -= std::exp(alpha * b) * A;
    return value;
  }
  double full_loglik(double b) const {
    return data_loglik(b) - 0.5 * std::log(2.0 * M_PI * D) - 0.5 * b * b / D;
  }
  double dfull_db(double b) const {
    return (rsum - static_cast<double>(ni) * b) / sigma2 + delta * alpha -
           alpha * std::exp(alpha * b) * A - b / D;
  }
  double d2full_db2(double b) const {
    return -static_cast<double>(ni) / sigma2 - alpha * alpha * std::exp(alpha * b) * A - 1.0 / D;
  }

  // strictly concave in b, so damped Newton from 0 finds the mode
  void posterior_mode(double& mode, double& sd) const {
    double b = 0.0;
    for (int iter = 0; iter < 50; ++iter) {
      double g1 = dfull_db(b);
      double g2 = d2full_db2(b);
      double step = -g1 / g2;
      double f0 = full_loglik(b);
      double scale = 1.0;
      double b_new = b;
      for (int half = 0; half < 40; ++half) {
        b_new = b + scale * step;
        if (std::isfinite(b_new) && full_loglik(b_new) >= f0 - 1e-14) break;
        scale *= 0.5;
      }
      if (std::abs(b_new - b) < 1e-12 * (1.0 + std::abs(b))) {
        b = b_new;
        break;
      }
      b = b_new;
    }
    mode = b;
    sd = 1.0 / std::sqrt(-d2full_db2(b));
  }
};

}  // namespace jointml_detail

// Observed-data log-likelihood with the random intercept integrated out by
// Gauss-Hermite quadrature. The default rule recenters and rescales the nodes
// at each subject's posterior mode; `adaptive = false` uses the plain rule
// centered on the prior.
inline double joint_loglik(const JointModelParameters& params, const JointDesign& design,
                           int gh_nodes = 15, bool adaptive = true) {
  if (!(params.D > 0.0) || !(params.sigma2 > 0.0))
    throw std::domain_error("joint_loglik: D and sigma2 must be > 0");
  if (!params.beta.allFinite() || !std::isfinite(params.alpha))
    throw std::domain_error("joint_loglik: non-finite parameters");
  QuadratureRule gh = gauss_hermite(gh_nodes);
  const int tcol = design.lng.time_column;
  const double slope = params.beta(tcol);
  double total = 0.0;
  std::vector<double> terms(static_cast<std::size_t>(gh_nodes));
  for (int i = 0; i < design.n(); ++i) {
    const Eigen::MatrixXd& X = design.lng.X[static_cast<std::size_t>(i)];
    const Eigen::VectorXd& y = design.lng.y[static_cast<std::size_t>(i)];
    const double a = design.lng.x0[static_cast<std::size_t>(i)].dot(params.beta);
    const Eigen::VectorXd K = design.surv.K.row(i).transpose();
    const double link = params.gamma.size() > 0 ? params.gamma.dot(K) : 0.0;
    const double T = design.surv.time(i);
    const bool event = design.surv.event[static_cast<std::size_t>(i)] != 0;

    jointml_detail::SubjectTerms st;
    st.ni = y.size();
    const Eigen::VectorXd r = y - X * params.beta;
    st.ssr = r.squaredNorm();
    st.rsum = r.sum();
    st.sigma2 = params.sigma2;
    st.alpha = params.alpha;
    st.delta = event ? 1.0 : 0.0;
    st.D = params.D;
    AffineTrajectory traj{a, slope};
    st.A = cumulative_hazard(params.baseline, params.gamma, params.alpha, K, traj, T, 1e-10);
    st.event_part =
        event ? std::log(baseline_hazard(params.baseline, T)) + link + params.alpha * traj(T) : 0.0;

    double center = 0.0, scale = std::sqrt(params.D);
    if (adaptive) st.posterior_mode(center, scale);
    for (int k = 0; k < gh_nodes; ++k) {
      const double x = gh.nodes[static_cast<std::size_t>(k)];
      const double b = center + std::sqrt(2.0) * scale * x;
      terms[static_cast<std::size_t>(k)] = std::log(gh.weights[static_cast<std::size_t>(k)]) +
                                           x * x + 0.5 * std::log(2.0 * scale * scale) +
                                           st.full_loglik(b);
    }
    total += log_sum_exp(terms);
  }
  return total;
}

namespace jointml_detail {

struct Segment {
  double lo = 0.0;
  double hi = 0.0;
  int rate_index = 0;
};

struct SubjectContext {
  double T = 0.0;
  double log_T = 0.0;
  bool event = false;
  int event_interval = 0;
  std::vector<Segment> segments;  // pieces of [0,T] per baseline interval
  // Gauss-Legendre nodes on [0,T] for the parametric baseline
  Eigen::VectorXd gl_s, gl_w, gl_logs;
};

// Estimation context for the joint model; the baseline is either
// piecewise-constant on event-time quantiles or Weibull.
struct Context {
  const JointDesign* design = nullptr;
  bool weibull = false;
  std::vector<double> cutpoints;
  int n_rates = 1;
  QuadratureRule gh;
  bool adaptive = true;
  std::vector<SubjectContext> subjects;
  std::vector<int> event_count;  // per rate interval

  int n_tail() const { return weibull ? 2 : n_rates; }
};

struct Theta {
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;
  double alpha = 0.0;
  double sigma2 = 1.0;
  double D = 1.0;
  Eigen::VectorXd rates;    // piecewise baseline
  double wshape = 1.0;      // Weibull baseline
  double wscale = 1.0;
};

// Event-time quantile cutpoints; every interval keeps at least one distinct
// event time.
inline std::vector<double> event_quantile_cutpoints(const Eigen::VectorXd& time,
                                                    const std::vector<char>& event, int intervals) {
  std::vector<double> events;
  for (int i = 0; i < time.size(); ++i)
    if (event[static_cast<std::size_t>(i)]) events.push_back(time(i));
  std::sort(events.begin(), events.end());
  events.erase(std::unique(events.begin(), events.end()), events.end());
  const int m = static_cast<int>(events.size());
  if (m == 0) throw std::invalid_argument("joint model: no events");
  const int R = std::min(intervals, m);
  std::vector<double> cutpoints;
  int prev = 0;
  for (int j = 1; j < R; ++j) {
    int k = std::max(prev + 1, (j * m) / R);
    if (k >= m) break;
    cutpoints.push_back(events[static_cast<std::size_t>(k)]);
    prev = k;
  }
  return cutpoints;
}

inline Context build_context(const JointDesign& design, int gh_nodes, int baseline_intervals,
                             bool adaptive = true, bool weibull = false) {
  Context ctx;
  ctx.design = &design;
  ctx.weibull = weibull;
  ctx.cutpoints = event_quantile_cutpoints(design.surv.time, design.surv.event, baseline_intervals);
  if (weibull) ctx.cutpoints.clear();
  ctx.n_rates = static_cast<int>(ctx.cutpoints.size()) + 1;
  ctx.gh = gauss_hermite(gh_nodes);
  ctx.adaptive = adaptive;
  ctx.event_count.assign(static_cast<std::size_t>(ctx.n_rates), 0);
  ctx.subjects.resize(static_cast<std::size_t>(design.n()));
  QuadratureRule gl = gauss_legendre(15);
  for (int i = 0; i < design.n(); ++i) {
    SubjectContext& s = ctx.subjects[static_cast<std::size_t>(i)];
    s.T = design.surv.time(i);
    s.log_T = std::log(s.T);
    s.event = design.surv.event[static_cast<std::size_t>(i)] != 0;
    double lo = 0.0;
    s.event_interval = ctx.n_rates - 1;
    for (int r = 0; r < ctx.n_rates; ++r) {
      double hi = r < static_cast<int>(ctx.cutpoints.size())
                      ? ctx.cutpoints[static_cast<std::size_t>(r)]
                      : std::numeric_limits<double>::infinity();
      if (s.T < hi && s.T >= lo) s.event_interval = r;
      double seg_hi = std::min(hi, s.T);
      if (seg_hi > lo) s.segments.push_back({lo, seg_hi, r});
      if (hi >= s.T) break;
      lo = hi;
    }
    if (s.event) ++ctx.event_count[static_cast<std::size_t>(s.event_interval)];
    if (weibull) {
      const int m = static_cast<int>(gl.nodes.size());
      s.gl_s.resize(m);
      s.gl_w.resize(m);
      s.gl_logs.resize(m);
      double mid = 0.5 * s.T, half = 0.5 * s.T;
      for (int q = 0; q < m; ++q) {
        s.gl_s(q) = mid + half * gl.nodes[static_cast<std::size_t>(q)];
        s.gl_w(q) = half * gl.weights[static_cast<std::size_t>(q)];
        s.gl_logs(q) = std::log(s.gl_s(q));
      }
    }
  }
  return ctx;
}

// theta-dependent per-subject quantities (node independent)
struct SubjectEval {
  double a = 0.0;     // x0' beta
  double link = 0.0;  // gamma' K
  double C0 = 0.0;    // exp(link + alpha a): scales every hazard moment
  double J0 = 0.0, J1 = 0.0, J2 = 0.0;  // rate-weighted exp moments over [0,T]
  SubjectTerms terms;
  std::vector<double> seg_m0;  // per segment, for rate profiling
};

inline void eval_subject(const Context& ctx, const Theta& theta, int i, bool with_segments,
                         SubjectEval& out) {
  const JointDesign& d = *ctx.design;
  const SubjectContext& s = ctx.subjects[static_cast<std::size_t>(i)];
  out.a = d.lng.x0[static_cast<std::size_t>(i)].dot(theta.beta);
  out.link = theta.gamma.size() > 0 ? theta.gamma.dot(d.surv.K.row(i).transpose()) : 0.0;
  const Eigen::VectorXd r =
      d.lng.y[static_cast<std::size_t>(i)] - d.lng.X[static_cast<std::size_t>(i)] * theta.beta;
  out.J0 = out.J1 = out.J2 = 0.0;
  double event_h0_and_trend = 0.0;
  if (ctx.weibull) {
    // rigid baseline: the full trajectory a + b + beta_t s drives the hazard
    const double slope = theta.beta(d.lng.time_column);
    const double c = theta.alpha * slope;
    const double hlog = std::log(theta.wshape) - theta.wshape * std::log(theta.wscale);
    for (int q = 0; q < s.gl_s.size(); ++q) {
      double f = s.gl_w(q) * std::exp(hlog + (theta.wshape - 1.0) * s.gl_logs(q) + c * s.gl_s(q));
      out.J0 += f;
      out.J1 += f * s.gl_s(q);
      out.J2 += f * s.gl_s(q) * s.gl_s(q);
    }
    event_h0_and_trend = hlog + (theta.wshape - 1.0) * s.log_T + theta.alpha * slope * s.T;
  } else {
    // The shared trajectory trend exp(alpha beta_t s) is common to every
    // subject, so the unspecified baseline absorbs it exactly; the hazard
    // link carries only the subject-specific level a_i + b. This removes the
    // aliasing between beta_t and the discretized baseline.
    if (with_segments) out.seg_m0.assign(s.segments.size(), 0.0);
    for (std::size_t g = 0; g < s.segments.size(); ++g) {
      const Segment& seg = s.segments[g];
      double width = seg.hi - seg.lo;
      if (with_segments) out.seg_m0[g] = width;
      const double rate = theta.rates(seg.rate_index);
      out.J0 += rate * width;
      out.J1 += rate * 0.5 * (seg.hi * seg.hi - seg.lo * seg.lo);
    }
    event_h0_and_trend = std::log(theta.rates(s.event_interval));
  }
  out.C0 = std::exp(out.link + theta.alpha * out.a);

  SubjectTerms& st = out.terms;
  st.ni = r.size();
  st.ssr = r.squaredNorm();
  st.rsum = r.sum();
  st.sigma2 = theta.sigma2;
  st.alpha = theta.alpha;
  st.delta = s.event ? 1.0 : 0.0;
  st.D = theta.D;
  st.A = out.C0 * out.J0;
  st.event_part = s.event ? event_h0_and_trend + out.link + theta.alpha * out.a : 0.0;
}

// Quadrature atoms for one theta; fixed during the M-step.
struct NodeSet {
  Eigen::MatrixXd b;         // n x K positions
  Eigen::MatrixXd log_base;  // n x K log weight terms (prior excluded)
};

inline NodeSet make_nodes(const Context& ctx, const Theta& theta,
                          std::vector<SubjectEval>& evals) {
  const int n = ctx.design->n();
  const int K = static_cast<int>(ctx.gh.nodes.size());
  NodeSet nodes;
  nodes.b.resize(n, K);
  nodes.log_base.resize(n, K);
  evals.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    eval_subject(ctx, theta, i, true, evals[static_cast<std::size_t>(i)]);
    double center = 0.0, scale = std::sqrt(theta.D);
    if (ctx.adaptive) evals[static_cast<std::size_t>(i)].terms.posterior_mode(center, scale);
    for (int k = 0; k < K; ++k) {
      const double x = ctx.gh.nodes[static_cast<std::size_t>(k)];
      nodes.b(i, k) = center + std::sqrt(2.0) * scale * x;
      nodes.log_base(i, k) = std::log(ctx.gh.weights[static_cast<std::size_t>(k)]) + x * x +
                             0.5 * std::log(2.0 * scale * scale);
    }
  }
  return nodes;
}

struct Moments {
  double loglik = 0.0;
  Eigen::MatrixXd posterior;  // n x K atom weights
};

inline Moments estep(const Context& ctx, const Theta& theta, const NodeSet& nodes,
                     const std::vector<SubjectEval>& evals) {
  const int n = ctx.design->n();
  const int K = static_cast<int>(ctx.gh.nodes.size());
  Moments mom;
  mom.posterior.resize(n, K);
  std::vector<double> terms(static_cast<std::size_t>(K));
  for (int i = 0; i < n; ++i) {
    const SubjectTerms& st = evals[static_cast<std::size_t>(i)].terms;
    for (int k = 0; k < K; ++k)
      terms[static_cast<std::size_t>(k)] = nodes.log_base(i, k) + st.full_loglik(nodes.b(i, k));
    double lse = log_sum_exp(terms);
    mom.loglik += lse;
    for (int k = 0; k < K; ++k)
      mom.posterior(i, k) = std::exp(terms[static_cast<std::size_t>(k)] - lse);
  }
  return mom;
}

// expected complete-data log-likelihood over the fixed atoms
inline double q_value(const Context& ctx, const Theta& theta, const Eigen::MatrixXd& posterior,
                      const NodeSet& nodes) {
  const int n = ctx.design->n();
  const int K = static_cast<int>(ctx.gh.nodes.size());
  double q = 0.0;
  SubjectEval e;
  for (int i = 0; i < n; ++i) {
    eval_subject(ctx, theta, i, false, e);
    for (int k = 0; k < K; ++k) {
      double w = posterior(i, k);
      if (w <= 0.0) continue;
      q += w * e.terms.full_loglik(nodes.b(i, k));
    }
  }
  return q;
}

inline Eigen::VectorXd profile_rates(const Context& ctx, const Theta& theta,
                                     const Eigen::MatrixXd& posterior, const NodeSet& nodes) {
  const int n = ctx.design->n();
  const int K = static_cast<int>(ctx.gh.nodes.size());
  Eigen::VectorXd numer = Eigen::VectorXd::Zero(ctx.n_rates);
  Eigen::VectorXd denom = Eigen::VectorXd::Zero(ctx.n_rates);
  for (int r = 0; r < ctx.n_rates; ++r) numer(r) = ctx.event_count[static_cast<std::size_t>(r)];
  SubjectEval e;
  for (int i = 0; i < n; ++i) {
    eval_subject(ctx, theta, i, true, e);
    const SubjectContext& s = ctx.subjects[static_cast<std::size_t>(i)];
    double cexp = 0.0;  // posterior-weighted exp(link + alpha (a + b))
    for (int k = 0; k < K; ++k)
      cexp += posterior(i, k) * e.C0 * std::exp(theta.alpha * nodes.b(i, k));
    for (std::size_t g = 0; g < s.segments.size(); ++g)
      denom(s.segments[g].rate_index) += cexp * e.seg_m0[g];
  }
  Eigen::VectorXd rates(ctx.n_rates);
  for (int r = 0; r < ctx.n_rates; ++r)
    rates(r) = denom(r) > 0.0 && numer(r) > 0.0 ? numer(r) / denom(r) : 1e-12;
  return rates;
}

// gradient and Hessian of Q with respect to u = (beta, gamma[, alpha])
inline void q_block_derivatives(const Context& ctx, const Theta& theta,
                                const Eigen::MatrixXd& posterior, const NodeSet& nodes,
                                bool with_alpha, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
  const JointDesign& d = *ctx.design;
  const int n = d.n();
  const int K = static_cast<int>(ctx.gh.nodes.size());
  const int p = d.lng.n_columns();
  const int q = static_cast<int>(d.surv.column_names.size());
  const int dim = p + q + (with_alpha ? 1 : 0);
  grad = Eigen::VectorXd::Zero(dim);
  hess = Eigen::MatrixXd::Zero(dim, dim);

  SubjectEval e;
  for (int i = 0; i < n; ++i) {
    eval_subject(ctx, theta, i, false, e);
    const SubjectContext& s = ctx.subjects[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd& X = d.lng.X[static_cast<std::size_t>(i)];
    const Eigen::VectorXd& y = d.lng.y[static_cast<std::size_t>(i)];
    const Eigen::VectorXd x0 = d.lng.x0[static_cast<std::size_t>(i)];
    const Eigen::VectorXd K_i = d.surv.K.row(i).transpose();

    double b_mean = 0.0;
    for (int k = 0; k < K; ++k) b_mean += posterior(i, k) * nodes.b(i, k);
    Eigen::VectorXd resid = y - X * theta.beta;
    grad.head(p) += X.transpose() * (resid.array() - b_mean).matrix() / theta.sigma2;
    hess.topLeftCorner(p, p) -= X.transpose() * X / theta.sigma2;

    const int tcol = d.lng.time_column;
    const double s_used = ctx.weibull ? theta.beta(tcol) : 0.0;
    if (s.event) {
      Eigen::VectorXd xT = x0;
      if (ctx.weibull) xT(tcol) = s.T;
      grad.head(p) += theta.alpha * xT;
      if (q > 0) grad.segment(p, q) += K_i;
      if (with_alpha) {
        grad(p + q) += e.a + (ctx.weibull ? s_used * s.T : 0.0) + b_mean;
        hess.block(0, p + q, p, 1) += xT;
        hess.block(p + q, 0, 1, p) += xT.transpose();
      }
    }

    for (int k = 0; k < K; ++k) {
      const double w = posterior(i, k);
      if (w <= 0.0) continue;
      const double b = nodes.b(i, k);
      const double C = e.C0 * std::exp(theta.alpha * b);
      const double H0 = C * e.J0, H1 = C * e.J1, H2 = C * e.J2;

      // z0 + z1 s is the derivative profile of the log link in s; the s part
      // only exists under the parametric baseline
      Eigen::VectorXd z0 = Eigen::VectorXd::Zero(dim);
      z0.head(p) = theta.alpha * x0;
      if (q > 0) z0.segment(p, q) = K_i;
      Eigen::VectorXd z1 = Eigen::VectorXd::Zero(dim);
      if (ctx.weibull) z1(tcol) = theta.alpha;
      if (with_alpha) {
        z0(p + q) = e.a + b;
        if (ctx.weibull) z1(p + q) = s_used;
      }
      grad -= w * (z0 * H0 + z1 * H1);

      Eigen::MatrixXd d2H = z0 * z0.transpose() * H0;
      if (ctx.weibull)
        d2H += (z0 * z1.transpose() + z1 * z0.transpose()) * H1 + z1 * z1.transpose() * H2;
      if (with_alpha) {
        for (int j = 0; j < p; ++j) {
          double extra = x0(j) * H0 + (ctx.weibull && j == tcol ? H1 : 0.0);
          d2H(j, p + q) += extra;
          d2H(p + q, j) += extra;
        }
      }
      hess -= w * d2H;
    }
  }
}

inline Eigen::VectorXd pack_block(const Theta& theta, bool with_alpha) {
  const int p = static_cast<int>(theta.beta.size());
  const int q = static_cast<int>(theta.gamma.size());
  Eigen::VectorXd u(p + q + (with_alpha ? 1 : 0));
  u.head(p) = theta.beta;
  if (q > 0) u.segment(p, q) = theta.gamma;
  if (with_alpha) u(p + q) = theta.alpha;
  return u;
}

inline void unpack_block(const Eigen::VectorXd& u, bool with_alpha, Theta& theta) {
  const int p = static_cast<int>(theta.beta.size());
  const int q = static_cast<int>(theta.gamma.size());
  theta.beta = u.head(p);
  if (q > 0) theta.gamma = u.segment(p, q);
  if (with_alpha) theta.alpha = u(p + q);
}

}  // namespace jointml_detail

struct JointMlOptions {
  int gh_nodes = 15;
  int baseline_intervals = 7;
  int max_iter = 200;
  double loglik_tol = 1e-8;
  bool fix_alpha_zero = false;
  bool compute_se = true;
  bool adaptive_gh = true;
};

struct JointMlFit {
  std::vector<std::string> beta_names;
  Eigen::VectorXd beta, beta_se;
  std::vector<std::string> gamma_names;
  Eigen::VectorXd gamma, gamma_se;
  double alpha = 0.0, alpha_se = 0.0;
  double sigma = 1.0, sigma_se = 0.0;
  double D = 0.0, D_se = 0.0;
  PiecewiseBaseline baseline;
  bool baseline_is_weibull = false;
  WeibullBaseline weibull_baseline;
  double loglik = 0.0;
  double aic = 0.0;
  int n_parameters = 0;
  int iterations = 0;
  bool converged = false;
  bool se_valid = false;
  double max_loglik_decrease = 0.0;
};

// Marginal log-likelihood under the context's quadrature scheme, and its
// analytic gradient on (beta, gamma, alpha, log sigma, log D, log rates).
inline double joint_loglik_at(const jointml_detail::Context& ctx,
                              const jointml_detail::Theta& theta,
                              Eigen::VectorXd* gradient = nullptr,
                              bool tail_gradient = true) {
  using namespace jointml_detail;
  const JointDesign& d = *ctx.design;
  const int n = d.n();
  const int K = static_cast<int>(ctx.gh.nodes.size());
  const int p = d.lng.n_columns();
  const int q = static_cast<int>(d.surv.column_names.size());
  const int n_tail = ctx.n_tail();
  const int dim = p + q + 1 + 2 + n_tail;
  if (gradient) gradient->setZero(dim);

  std::vector<SubjectEval> evals;
  NodeSet nodes = make_nodes(ctx, theta, evals);
  std::vector<double> terms(static_cast<std::size_t>(K));
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const SubjectEval& e = evals[static_cast<std::size_t>(i)];
    const SubjectContext& s = ctx.subjects[static_cast<std::size_t>(i)];
    for (int k = 0; k < K; ++k)
      terms[static_cast<std::size_t>(k)] = nodes.log_base(i, k) + e.terms.full_loglik(nodes.b(i, k));
    const double lse = log_sum_exp(terms);
    total += lse;
    if (!gradient) continue;

    const Eigen::MatrixXd& X = d.lng.X[static_cast<std::size_t>(i)];
    const Eigen::VectorXd& y = d.lng.y[static_cast<std::size_t>(i)];
    const Eigen::VectorXd x0 = d.lng.x0[static_cast<std::size_t>(i)];
    const Eigen::VectorXd K_i = d.surv.K.row(i).transpose();
    const Eigen::VectorXd resid = y - X * theta.beta;

    const int tcol = d.lng.time_column;
    const double s_used = ctx.weibull ? theta.beta(tcol) : 0.0;
    for (int k = 0; k < K; ++k) {
      const double w = std::exp(terms[static_cast<std::size_t>(k)] - lse);
      if (w <= 0.0) continue;
      const double b = nodes.b(i, k);
      const double C = e.C0 * std::exp(theta.alpha * b);
      const double H0 = C * e.J0, H1 = C * e.J1;
      Eigen::VectorXd g_node = Eigen::VectorXd::Zero(dim);

      g_node.head(p) = X.transpose() * (resid.array() - b).matrix() / theta.sigma2;
      g_node.head(p) -= theta.alpha * x0 * H0;
      if (ctx.weibull) g_node(tcol) -= theta.alpha * H1;
      if (s.event) {
        Eigen::VectorXd xT = x0;
        if (ctx.weibull) xT(tcol) = s.T;
        g_node.head(p) += theta.alpha * xT;
      }
      if (q > 0) g_node.segment(p, q) = K_i * ((s.event ? 1.0 : 0.0) - H0);
      g_node(p + q) = (s.event ? e.a + s_used * s.T + b : 0.0) -
                      ((e.a + b) * H0 + (ctx.weibull ? s_used * H1 : 0.0));
      double S = e.terms.ssr - 2.0 * b * e.terms.rsum + static_cast<double>(e.terms.ni) * b * b;
      g_node(p + q + 1) = -static_cast<double>(e.terms.ni) + S / theta.sigma2;
      if (ctx.adaptive) {
        // atoms fixed; only the prior term carries the D dependence
        g_node(p + q + 2) = -0.5 + b * b / (2.0 * theta.D);
      } else {
        // atoms b = sqrt(2 D) x move with D: base +1/2, prior -1/2 + b^2/2D,
        // node motion dfull/db * b/2
        g_node(p + q + 2) = e.terms.dfull_db(b) * b * 0.5 + b * b / (2.0 * theta.D);
      }
      if (!ctx.weibull) {
        for (std::size_t g = 0; g < s.segments.size(); ++g) {
          int r = s.segments[g].rate_index;
          g_node(p + q + 3 + r) -= theta.rates(r) * C * e.seg_m0[g];
        }
        if (s.event) g_node(p + q + 3 + s.event_interval) += 1.0;
      }

      *gradient += w * g_node;
    }
  }
  if (gradient && ctx.weibull && tail_gradient) {
    // baseline shape and scale by central differences on the log scale
    auto value_at = [&](double wshape, double wscale) {
      Theta t = theta;
      t.wshape = wshape;
      t.wscale = wscale;
      std::vector<SubjectEval> ev;
      NodeSet nd = make_nodes(ctx, t, ev);
      return estep(ctx, t, nd, ev).loglik;
    };
    const double h = 1e-6;
    (*gradient)(p + q + 3) = (value_at(theta.wshape * std::exp(h), theta.wscale) -
                              value_at(theta.wshape * std::exp(-h), theta.wscale)) /
                             (2.0 * h);
    (*gradient)(p + q + 4) = (value_at(theta.wshape, theta.wscale * std::exp(h)) -
                              value_at(theta.wshape, theta.wscale * std::exp(-h))) /
                             (2.0 * h);
  }
  return total;
}

inline JointMlFit fit_joint_ml(const Dataset& ds, const JointModelSpec& spec,
                               JointMlOptions options = {}) {
  using namespace jointml_detail;
  options.gh_nodes = spec.gh_nodes > 0 ? spec.gh_nodes : options.gh_nodes;
  options.baseline_intervals = spec.baseline_intervals;
  if (spec.fix_alpha_zero) options.fix_alpha_zero = true;
  JointDesign design = build_joint_design(ds, spec);
  const bool weibull = spec.ml_baseline == MlBaselineKind::Weibull;
  Context ctx = build_context(design, options.gh_nodes, options.baseline_intervals,
                              options.adaptive_gh, weibull);
  const int p = design.lng.n_columns();
  const int q = static_cast<int>(design.surv.column_names.size());
  const int R = ctx.n_rates;
  const int n_tail = ctx.n_tail();
  const bool with_alpha = !options.fix_alpha_zero;

  // starting values: LMM for the longitudinal block, Cox for gamma,
  // person-time rates for the baseline
  Theta theta;
  {
    LmmFit lmm = fit_lmm(design.lng);
    theta.beta = lmm.beta;
    theta.sigma2 = lmm.sigma * lmm.sigma;
    theta.D = std::max(lmm.D, 1e-4);
  }
  theta.gamma = Eigen::VectorXd::Zero(q);
  if (q > 0) {
    try {
      CoxFit cox = fit_cox_raw(design.surv.time, design.surv.event, design.surv.K,
                               design.surv.column_names);
      theta.gamma = cox.gamma;
    } catch (const std::exception&) {
      // zero start is fine
    }
  }
  theta.alpha = 0.0;
  theta.rates.resize(R);
  {
    Eigen::VectorXd persontime = Eigen::VectorXd::Zero(R);
    for (const auto& s : ctx.subjects)
      for (const auto& seg : s.segments) persontime(seg.rate_index) += seg.hi - seg.lo;
    for (int r = 0; r < R; ++r) {
      double d_r = ctx.event_count[static_cast<std::size_t>(r)];
      theta.rates(r) = persontime(r) > 0.0 && d_r > 0.0 ? d_r / persontime(r) : 1e-12;
    }
  }
  if (weibull) {
    // exponential start: shape 1, scale = person-time per event
    double persontime = 0.0;
    long events = 0;
    for (const auto& s : ctx.subjects) {
      persontime += s.T;
      events += s.event ? 1 : 0;
    }
    theta.wshape = 1.0;
    theta.wscale = std::max(persontime / std::max<long>(events, 1), 1e-6);
  }

  JointMlFit fit;
  fit.beta_names = design.lng.column_names;
  fit.gamma_names = design.surv.column_names;

  // one E-step + M-step pass; every M stage must not decrease Q over the
  // pass's fixed atoms, which keeps the observed loglik nondecreasing
  auto em_pass = [&](const Theta& start) -> Theta {
    std::vector<SubjectEval> evals;
    NodeSet nodes = make_nodes(ctx, start, evals);
    Moments mom = estep(ctx, start, nodes, evals);
    double q_best = q_value(ctx, start, mom.posterior, nodes);
    Theta cand = start;

    for (int inner = 0; inner < 2; ++inner) {
      if (!weibull) {
        Eigen::VectorXd new_rates = profile_rates(ctx, cand, mom.posterior, nodes);
        Theta with_rates = cand;
        with_rates.rates = new_rates;
        double q_after_rates = q_value(ctx, with_rates, mom.posterior, nodes);
        if (q_after_rates >= q_best) {
          cand = with_rates;
          q_best = q_after_rates;
        }
      } else {
        // damped Newton on (log shape, log scale) with finite differences of Q
        auto q_at = [&](double ls, double lc) {
          Theta t = cand;
          t.wshape = std::exp(ls);
          t.wscale = std::exp(lc);
          return q_value(ctx, t, mom.posterior, nodes);
        };
        double ls = std::log(cand.wshape), lc = std::log(cand.wscale);
        const double h = 1e-5;
        double q0 = q_best;
        double qp1 = q_at(ls + h, lc), qm1 = q_at(ls - h, lc);
        double qp2 = q_at(ls, lc + h), qm2 = q_at(ls, lc - h);
        double qpp = q_at(ls + h, lc + h), qpm = q_at(ls + h, lc - h);
        double qmp = q_at(ls - h, lc + h), qmm = q_at(ls - h, lc - h);
        Eigen::Vector2d g((qp1 - qm1) / (2 * h), (qp2 - qm2) / (2 * h));
        Eigen::Matrix2d H;
        H(0, 0) = (qp1 - 2 * q0 + qm1) / (h * h);
        H(1, 1) = (qp2 - 2 * q0 + qm2) / (h * h);
        H(0, 1) = H(1, 0) = (qpp - qpm - qmp + qmm) / (4 * h * h);
        Eigen::Vector2d step = (-H).ldlt().solve(g);
        if (step.allFinite()) {
          double scale = 1.0;
          for (int half = 0; half < 20; ++half) {
            double q_trial = q_at(ls + scale * step(0), lc + scale * step(1));
            if (q_trial >= q_best) {
              cand.wshape = std::exp(ls + scale * step(0));
              cand.wscale = std::exp(lc + scale * step(1));
              q_best = q_trial;
              break;
            }
            scale *= 0.5;
          }
        }
      }

      Eigen::VectorXd grad;
      Eigen::MatrixXd hess;
      q_block_derivatives(ctx, cand, mom.posterior, nodes, with_alpha, grad, hess);
      Eigen::VectorXd step = (-hess).ldlt().solve(grad);
      if (!step.allFinite()) break;
      Eigen::VectorXd u0 = pack_block(cand, with_alpha);
      double scale = 1.0;
      Theta trial = cand;
      bool improved = false;
      for (int half = 0; half < 30; ++half) {
        unpack_block(u0 + scale * step, with_alpha, trial);
        double q_trial = q_value(ctx, trial, mom.posterior, nodes);
        if (q_trial >= q_best) {
          cand = trial;
          q_best = q_trial;
          improved = true;
          break;
        }
        scale *= 0.5;
      }
      if (!improved) break;
    }

    // D: atoms are fixed, so the posterior second moment maximizes the prior block
    {
      double second_moment = 0.0;
      for (int i = 0; i < design.n(); ++i)
        for (int k = 0; k < options.gh_nodes; ++k)
          second_moment += mom.posterior(i, k) * nodes.b(i, k) * nodes.b(i, k);
      second_moment /= static_cast<double>(design.n());
      Theta trial = cand;
      trial.D = std::max(second_moment, 1e-10);
      double q_trial = q_value(ctx, trial, mom.posterior, nodes);
      if (q_trial >= q_best) {
        cand = trial;
        q_best = q_trial;
      }
    }

    // sigma^2: exact argmax given everything else
    {
      double ss = 0.0;
      long n_rows = 0;
      SubjectEval e;
      for (int i = 0; i < design.n(); ++i) {
        eval_subject(ctx, cand, i, false, e);
        n_rows += e.terms.ni;
        for (int k = 0; k < options.gh_nodes; ++k) {
          double b = nodes.b(i, k);
          ss += mom.posterior(i, k) *
                (e.terms.ssr - 2.0 * b * e.terms.rsum + static_cast<double>(e.terms.ni) * b * b);
        }
      }
      if (n_rows > 0) {
        Theta trial = cand;
        trial.sigma2 = std::max(ss / static_cast<double>(n_rows), 1e-12);
        double q_trial = q_value(ctx, trial, mom.posterior, nodes);
        if (q_trial >= q_best) {
          cand = trial;
          q_best = q_trial;
        }
      }
    }
    return cand;
  };

  const int n_pack = p + q + 1 + 2 + n_tail;
  auto pack_full = [&](const Theta& t) {
    Eigen::VectorXd v(n_pack);
    v.head(p) = t.beta;
    if (q > 0) v.segment(p, q) = t.gamma;
    v(p + q) = t.alpha;
    v(p + q + 1) = 0.5 * std::log(t.sigma2);
    v(p + q + 2) = std::log(t.D);
    if (weibull) {
      v(p + q + 3) = std::log(t.wshape);
      v(p + q + 4) = std::log(t.wscale);
    } else {
      for (int r = 0; r < R; ++r) v(p + q + 3 + r) = std::log(t.rates(r));
    }
    return v;
  };
  auto unpack_full = [&](const Eigen::VectorXd& v) {
    Theta t = theta;
    t.beta = v.head(p);
    if (q > 0) t.gamma = v.segment(p, q);
    t.alpha = v(p + q);
    t.sigma2 = std::exp(2.0 * v(p + q + 1));
    t.D = std::exp(v(p + q + 2));
    if (weibull) {
      t.wshape = std::exp(v(p + q + 3));
      t.wscale = std::exp(v(p + q + 4));
    } else {
      t.rates.resize(R);
      for (int r = 0; r < R; ++r) t.rates(r) = std::exp(v(p + q + 3 + r));
    }
    return t;
  };
  auto loglik_of = [&](const Theta& t) {
    std::vector<SubjectEval> evals;
    NodeSet nodes = make_nodes(ctx, t, evals);
    return estep(ctx, t, nodes, evals).loglik;
  };

  auto packed_gradient = [&](const Theta& t) {
    Eigen::VectorXd g;
    joint_loglik_at(ctx, t, &g);
    if (!with_alpha) g(p + q) = 0.0;
    return g;
  };

  double loglik = loglik_of(theta);
  int iter = 0;
  bool converged = false;
  // squared extrapolation of the EM map with an ascent safeguard; the plain
  // EM rate on the alpha direction is too slow for the iteration budget
  while (iter < options.max_iter) {
    Theta t1 = em_pass(theta);
    Theta t2 = em_pass(t1);
    iter += 2;
    Theta next = t2;
    double ll_next = loglik_of(t2);
    Eigen::VectorXd p0 = pack_full(theta), p1 = pack_full(t1), p2 = pack_full(t2);
    Eigen::VectorXd r = p1 - p0;
    Eigen::VectorXd v = (p2 - p1) - r;
    double vnorm = v.norm();
    if (vnorm > 0.0 && r.norm() > 0.0) {
      double a = -std::max(1.0, r.norm() / vnorm);
      for (int attempt = 0; attempt < 2; ++attempt) {
        Eigen::VectorXd ps = p0 - 2.0 * a * r + a * a * v;
        if (!ps.allFinite() || ps.lpNorm<Eigen::Infinity>() >= 50.0) {
          a = -std::max(1.0, 0.25 * std::abs(a));
          continue;
        }
        Theta ts = unpack_full(ps);
        double ll_s = loglik_of(ts);
        if (std::isfinite(ll_s) && ll_s >= ll_next) {
          // polish the jump with one EM pass so the fixed point stays an EM one
          Theta polished = em_pass(ts);
          double ll_p = loglik_of(polished);
          if (std::isfinite(ll_p) && ll_p >= ll_s) {
            next = polished;
            ll_next = ll_p;
          } else {
            next = ts;
            ll_next = ll_s;
          }
          iter += 1;
          break;
        }
        a = -std::max(1.0, 0.5 * std::abs(a));
      }
    }
    // ascent guard: a drop in the reported loglik means the quadrature can no
    // longer certify improvement (degenerate ridges drive alpha out of the
    // resolvable range); keep the previous iterate and stop
    if (ll_next < loglik) {
      converged = (loglik - ll_next) < options.loglik_tol;
      break;
    }
    double change = ll_next - loglik;
    theta = next;
    loglik = ll_next;
    if (change < options.loglik_tol) {
      converged = true;
      break;
    }

    // near the optimum, finish with guarded quasi-Newton steps on the packed
    // parameters (frozen finite-difference Hessian of the analytic gradient)
    if (change < 1e-3 && iter < options.max_iter) {
      Eigen::VectorXd x = pack_full(theta);
      const int dim = static_cast<int>(x.size());
      Eigen::MatrixXd hessian(dim, dim);
      bool hessian_ok = true;
      for (int j = 0; j < dim && hessian_ok; ++j) {
        double h = 1e-5 * std::max(1.0, std::abs(x(j)));
        Eigen::VectorXd xp = x, xm = x;
        xp(j) += h;
        xm(j) -= h;
        Eigen::VectorXd gp = packed_gradient(unpack_full(xp));
        Eigen::VectorXd gm = packed_gradient(unpack_full(xm));
        if (!gp.allFinite() || !gm.allFinite()) hessian_ok = false;
        hessian.col(j) = (gp - gm) / (2.0 * h);
      }
      if (hessian_ok) {
        hessian = 0.5 * (hessian + hessian.transpose()).eval();
        Eigen::LDLT<Eigen::MatrixXd> solver(-hessian);
        for (int nstep = 0; nstep < 12 && iter < options.max_iter && solver.info() == Eigen::Success;
             ++nstep) {
          Eigen::VectorXd g = packed_gradient(theta);
          if (!with_alpha) g(p + q) = 0.0;
          Eigen::VectorXd step = solver.solve(g);
          if (!with_alpha) step(p + q) = 0.0;
          if (!step.allFinite()) break;
          double scale = 1.0;
          bool improved = false;
          for (int half = 0; half < 12; ++half) {
            Eigen::VectorXd xt = pack_full(theta) + scale * step;
            if (xt.allFinite() && xt.lpNorm<Eigen::Infinity>() < 50.0) {
              Theta trial = unpack_full(xt);
              double ll_t = loglik_of(trial);
              if (std::isfinite(ll_t) && ll_t > loglik) {
                double gain = ll_t - loglik;
                theta = trial;
                loglik = ll_t;
                ++iter;
                improved = true;
                if (gain < options.loglik_tol) converged = true;
                break;
              }
            }
            scale *= 0.5;
          }
          if (!improved || converged) break;
        }
      }
      if (converged) break;
    }
  }

  fit.beta = theta.beta;
  fit.gamma = theta.gamma;
  fit.alpha = theta.alpha;
  fit.sigma = std::sqrt(theta.sigma2);
  fit.D = theta.D;
  if (weibull) {
    fit.baseline_is_weibull = true;
    fit.weibull_baseline = {theta.wshape, theta.wscale};
  } else {
    fit.baseline.cutpoints = ctx.cutpoints;
    fit.baseline.rates.assign(theta.rates.data(), theta.rates.data() + theta.rates.size());
  }
  fit.loglik = loglik;
  fit.iterations = iter;
  fit.converged = converged;
  fit.n_parameters = p + q + (with_alpha ? 1 : 0) + 2 + n_tail;
  fit.aic = -2.0 * loglik + 2.0 * fit.n_parameters;

  if (options.compute_se) {
    // observed information: central differences of the analytic gradient on
    // (beta, gamma, alpha, log sigma, log D, log baseline parameters)
    const int dim = n_pack;
    Eigen::VectorXd x = pack_full(theta);
    Eigen::MatrixXd hessian(dim, dim);
    Eigen::VectorXd gp(dim), gm(dim);
    const int first_tail = p + q + 3;
    std::vector<double> step(static_cast<std::size_t>(dim));
    Eigen::VectorXd value_p(dim), value_m(dim);
    for (int j = 0; j < dim; ++j) {
      double h = 1e-4 * std::max(1.0, std::abs(x(j)));
      step[static_cast<std::size_t>(j)] = h;
      Eigen::VectorXd xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      value_p(j) = joint_loglik_at(ctx, unpack_full(xp), &gp, false);
      value_m(j) = joint_loglik_at(ctx, unpack_full(xm), &gm, false);
      hessian.col(j) = (gp - gm) / (2.0 * h);
    }
    if (weibull) {
      // tail rows from value differences: the analytic gradient skips the
      // baseline coordinates when tail_gradient is off
      double value_0 = joint_loglik_at(ctx, theta, nullptr, false);
      for (int j = first_tail; j < dim; ++j) {
        double h = step[static_cast<std::size_t>(j)];
        hessian(j, j) = (value_p(j) - 2.0 * value_0 + value_m(j)) / (h * h);
        for (int k2 = j + 1; k2 < dim; ++k2) {
          double h2 = step[static_cast<std::size_t>(k2)];
          Eigen::VectorXd xpp = x, xpm = x, xmp = x, xmm = x;
          xpp(j) += h; xpp(k2) += h2;
          xpm(j) += h; xpm(k2) -= h2;
          xmp(j) -= h; xmp(k2) += h2;
          xmm(j) -= h; xmm(k2) -= h2;
          double cross = (joint_loglik_at(ctx, unpack_full(xpp), nullptr, false) -
                          joint_loglik_at(ctx, unpack_full(xpm), nullptr, false) -
                          joint_loglik_at(ctx, unpack_full(xmp), nullptr, false) +
                          joint_loglik_at(ctx, unpack_full(xmm), nullptr, false)) /
                         (4.0 * h * h2);
          hessian(j, k2) = cross;
          hessian(k2, j) = cross;
        }
      }
      // analytic-by-tail cross entries came from the gradient columns at the
      // tail perturbations; mirror them into the tail rows
      for (int j = first_tail; j < dim; ++j)
        for (int k2 = 0; k2 < first_tail; ++k2) hessian(j, k2) = hessian(k2, j);
    }
    hessian = 0.5 * (hessian + hessian.transpose()).eval();
    std::vector<int> keep;
    for (int j = 0; j < dim; ++j)
      if (with_alpha || j != p + q) keep.push_back(j);
    Eigen::MatrixXd info(static_cast<int>(keep.size()), static_cast<int>(keep.size()));
    for (std::size_t aa = 0; aa < keep.size(); ++aa)
      for (std::size_t bb = 0; bb < keep.size(); ++bb)
        info(static_cast<int>(aa), static_cast<int>(bb)) = -hessian(keep[aa], keep[bb]);
    Eigen::MatrixXd cov = info.ldlt().solve(
        Eigen::MatrixXd::Identity(static_cast<int>(keep.size()), static_cast<int>(keep.size())));
    Eigen::VectorXd var = cov.diagonal();
    fit.se_valid = var.minCoeff() > 0.0;
    auto var_at = [&](int packed_index) {
      for (std::size_t aa = 0; aa < keep.size(); ++aa)
        if (keep[aa] == packed_index) return var(static_cast<int>(aa));
      return std::numeric_limits<double>::quiet_NaN();
    };
    fit.beta_se.resize(p);
    for (int j = 0; j < p; ++j) fit.beta_se(j) = std::sqrt(std::max(var_at(j), 0.0));
    fit.gamma_se.resize(q);
    for (int j = 0; j < q; ++j) fit.gamma_se(j) = std::sqrt(std::max(var_at(p + j), 0.0));
    fit.alpha_se = with_alpha ? std::sqrt(std::max(var_at(p + q), 0.0)) : 0.0;
    // delta method back from the log scale
    fit.sigma_se = std::sqrt(std::max(var_at(p + q + 1), 0.0)) * fit.sigma;
    fit.D_se = std::sqrt(std::max(var_at(p + q + 2), 0.0)) * fit.D;
  }
  return fit;
}

}  // namespace jointmi
