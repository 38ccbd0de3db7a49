#include "geoprev/inference.hpp"

#include "geoprev/error.hpp"
#include "geoprev/gmrf.hpp"
#include "geoprev/parallel.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace geoprev {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kMinCurvature = 1e-12;

double log1pexp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Conditioning-by-kriging data for A x = 0 given a factorized precision.
struct ConstraintGain {
  Eigen::MatrixXd w;                   // H^-1 A^T
  Eigen::LLT<Eigen::MatrixXd> s_llt;   // A H^-1 A^T
  double log_det_s = 0.0;

  ConstraintGain(const SparseCholesky& chol, const Eigen::MatrixXd& a) {
    w = chol.solve(Eigen::MatrixXd(a.transpose()));
    const Eigen::MatrixXd s = a * w;
    s_llt.compute(s);
    if (s_llt.info() != Eigen::Success) throw NumericalError("constraint covariance is not positive definite");
    log_det_s = 2.0 * s_llt.matrixLLT().diagonal().array().log().sum();
  }

  // x - W S^-1 (A x)
  Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::MatrixXd& a) const {
    return x - w * s_llt.solve(a * x);
  }

  // diag(W S^-1 W^T)
  Eigen::VectorXd variance_reduction() const {
    const Eigen::MatrixXd half = s_llt.matrixL().solve(w.transpose());  // L^-1 W^T
    return half.colwise().squaredNorm().transpose();
  }
};

struct Factorized {
  SparseCholesky chol;
  std::optional<ConstraintGain> gain;

  Factorized(const SparseMatrix& h, const Eigen::MatrixXd& constraints) : chol(h) {
    if (constraints.rows() > 0) gain.emplace(chol, constraints);
  }
};

LatentBlock make_block(const std::string& name, BlockKind kind, int size) {
  LatentBlock b;
  b.name = name;
  b.kind = kind;
  b.size = size;
  return b;
}

double log_prior_normalizer(const LatentModel& model, const Eigen::VectorXd& theta, int* prior_dim) {
  double s = 0.0;
  int dim = 0;
  for (const auto& b : model.blocks) {
    switch (b.kind) {
      case BlockKind::kFixed:
        s += 0.5 * b.size * std::log(b.fixed_precision);
        dim += b.size;
        break;
      case BlockKind::kSpde: {
        const SpdeTheta th{theta[b.theta_index], theta[b.theta_index + 1]};
        const SparseCholesky chol(assemble_precision(*b.fem, th));
        s += 0.5 * chol.log_determinant();
        dim += b.size;
        break;
      }
      case BlockKind::kIid:
        s += 0.5 * b.size * theta[b.theta_index];
        dim += b.size;
        break;
      case BlockKind::kIcar:
        // The generalized determinant of the structure matrix does not depend
        // on theta and is left out.
        s += 0.5 * b.structure_rank * theta[b.theta_index];
        dim += b.structure_rank;
        break;
    }
  }
  *prior_dim = dim;
  return s;
}

}  // namespace

ObservationStage ObservationStage::binomial(Eigen::VectorXd positives, Eigen::VectorXd trials) {
  ObservationStage s;
  s.family = Likelihood::kBinomial;
  s.y = std::move(positives);
  s.trials = std::move(trials);
  return s;
}

ObservationStage ObservationStage::gaussian(Eigen::VectorXd values, Eigen::VectorXd variances) {
  ObservationStage s;
  s.family = Likelihood::kGaussian;
  s.y = std::move(values);
  s.variance = std::move(variances);
  return s;
}

LikelihoodTerms likelihood_terms(const ObservationStage& obs, const Eigen::VectorXd& eta) {
  const Eigen::Index n = obs.size();
  LikelihoodTerms t;
  t.gradient.resize(n);
  t.curvature.resize(n);
  if (obs.family == Likelihood::kBinomial) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double y = obs.y[i];
      const double m = obs.trials[i];
      const double p = expit(eta[i]);
      t.value += y * eta[i] - m * log1pexp(eta[i]) + std::lgamma(m + 1.0) - std::lgamma(y + 1.0) -
                 std::lgamma(m - y + 1.0);
      t.gradient[i] = y - m * p;
      t.curvature[i] = std::max(m * p * (1.0 - p), m > 0.0 ? kMinCurvature : 0.0);
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = obs.variance[i];
      const double r = obs.y[i] - eta[i];
      t.value += -0.5 * (kLog2Pi + std::log(v)) - 0.5 * r * r / v;
      t.gradient[i] = r / v;
      t.curvature[i] = 1.0 / v;
    }
  }
  return t;
}

const LatentBlock& LatentModel::block(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw std::out_of_range("latent model has no block named '" + name + "'");
}

SparseMatrix LatentModel::prior_precision(const Eigen::VectorXd& theta) const {
  std::vector<Eigen::Triplet<double>> trips;
  auto append = [&](const SparseMatrix& m, int offset, double scale) {
    for (Eigen::Index k = 0; k < m.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
        trips.emplace_back(offset + static_cast<int>(it.row()), offset + static_cast<int>(it.col()),
                           scale * it.value());
      }
    }
  };
  for (const auto& b : blocks) {
    switch (b.kind) {
      case BlockKind::kFixed:
        for (int i = 0; i < b.size; ++i) trips.emplace_back(b.offset + i, b.offset + i, b.fixed_precision);
        break;
      case BlockKind::kSpde:
        append(assemble_precision(*b.fem, {theta[b.theta_index], theta[b.theta_index + 1]}), b.offset, 1.0);
        break;
      case BlockKind::kIid: {
        const double prec = std::exp(theta[b.theta_index]);
        for (int i = 0; i < b.size; ++i) trips.emplace_back(b.offset + i, b.offset + i, prec);
        break;
      }
      case BlockKind::kIcar:
        append(b.structure, b.offset, std::exp(theta[b.theta_index]));
        break;
    }
  }
  SparseMatrix q(latent_dim, latent_dim);
  q.setFromTriplets(trips.begin(), trips.end());
  return q;
}

double LatentModel::log_hyperprior(const Eigen::VectorXd& theta) const {
  double s = 0.0;
  for (int j = 0; j < theta_dim(); ++j) {
    const double z = (theta[j] - theta_prior_mean[j]) / theta_prior_sd[j];
    s += -0.5 * kLog2Pi - std::log(theta_prior_sd[j]) - 0.5 * z * z;
  }
  return s;
}

void LatentModel::validate() const {
  const Eigen::Index n = observations.size();
  if (design.rows() != n || design.cols() != latent_dim) {
    throw DataError("design matrix is " + std::to_string(design.rows()) + "x" + std::to_string(design.cols()) +
                    ", expected " + std::to_string(n) + "x" + std::to_string(latent_dim));
  }
  if (observations.family == Likelihood::kBinomial) {
    if (observations.trials.size() != n) throw DataError("binomial trials length mismatch");
    for (Eigen::Index i = 0; i < n; ++i) {
      const double y = observations.y[i];
      const double m = observations.trials[i];
      if (!(y >= 0.0 && y <= m) || y != std::floor(y) || m != std::floor(m)) {
        throw DataError("binomial observation " + std::to_string(i) + " needs integer 0 <= y <= N");
      }
    }
  } else {
    if (observations.variance.size() != n) throw DataError("gaussian variance length mismatch");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!std::isfinite(observations.y[i])) throw DataError("non-finite gaussian observation");
      if (!(observations.variance[i] > 0.0) || !std::isfinite(observations.variance[i])) {
        throw DataError("gaussian observation " + std::to_string(i) + " needs a positive finite variance");
      }
    }
  }
  if (theta_prior_mean.size() != theta_dim() || theta_prior_sd.size() != theta_dim()) {
    throw DataError("hyperprior dimension mismatch");
  }
  if ((theta_prior_sd.array() <= 0.0).any()) throw DataError("hyperprior standard deviations must be positive");
  if (constraints.rows() > 0 && constraints.cols() != latent_dim) throw DataError("constraint width mismatch");
}

LatentModelBuilder::LatentModelBuilder(ObservationStage observations) : observations_(std::move(observations)) {}

LatentModelBuilder& LatentModelBuilder::add_intercept(const std::string& name) {
  const Eigen::Index n = observations_.size();
  Pending p;
  p.block = make_block(name, BlockKind::kFixed, 1);
  p.map.resize(n, 1);
  std::vector<Eigen::Triplet<double>> t;
  for (Eigen::Index i = 0; i < n; ++i) t.emplace_back(static_cast<int>(i), 0, 1.0);
  p.map.setFromTriplets(t.begin(), t.end());
  pending_.push_back(std::move(p));
  return *this;
}

LatentModelBuilder& LatentModelBuilder::add_covariates(const std::string& name, const Eigen::MatrixXd& covariates) {
  if (covariates.rows() != observations_.size()) throw DataError("covariate rows must match observations");
  Pending p;
  p.block = make_block(name, BlockKind::kFixed, static_cast<int>(covariates.cols()));
  p.map = covariates.sparseView();
  pending_.push_back(std::move(p));
  return *this;
}

LatentModelBuilder& LatentModelBuilder::add_spde(const std::string& name, std::shared_ptr<const FemMatrices> fem,
                                                 const Projector& projector, SpdeTheta initial) {
  if (projector.weights.rows() != observations_.size()) throw DataError("projector rows must match observations");
  if (projector.weights.cols() != fem->c.rows()) throw DataError("projector columns must match mesh vertices");
  if (const auto out = projector.num_outside(); out > 0) {
    spdlog::warn("{} observation(s) fall outside the mesh; their field contribution is zero", out);
  }
  Pending p;
  p.block = make_block(name, BlockKind::kSpde, static_cast<int>(fem->c.rows()));
  p.block.fem = std::move(fem);
  p.map = SparseMatrix(projector.weights);
  p.initial = {initial.log_tau, initial.log_kappa};
  p.theta_names = {name + ".log_tau", name + ".log_kappa"};
  pending_.push_back(std::move(p));
  return *this;
}

LatentModelBuilder& LatentModelBuilder::add_iid(const std::string& name, const SparseMatrix& map,
                                                double initial_log_precision) {
  if (map.rows() != observations_.size()) throw DataError("iid map rows must match observations");
  Pending p;
  p.block = make_block(name, BlockKind::kIid, static_cast<int>(map.cols()));
  p.map = map;
  p.initial = {initial_log_precision};
  p.theta_names = {name + ".log_precision"};
  pending_.push_back(std::move(p));
  return *this;
}

LatentModelBuilder& LatentModelBuilder::add_nugget(const std::string& name, double initial_log_precision) {
  const auto n = observations_.size();
  SparseMatrix eye(n, n);
  eye.setIdentity();
  return add_iid(name, eye, initial_log_precision);
}

LatentModelBuilder& LatentModelBuilder::add_icar(const std::string& name, const SparseMatrix& structure,
                                                 const std::vector<int>& component, const SparseMatrix& map,
                                                 double initial_log_precision) {
  if (structure.rows() != structure.cols() || map.cols() != structure.rows()) {
    throw DataError("ICAR structure and map dimensions disagree");
  }
  if (map.rows() != observations_.size()) throw DataError("ICAR map rows must match observations");
  if (component.size() != static_cast<std::size_t>(structure.rows())) throw DataError("ICAR component labels size");
  Pending p;
  p.block = make_block(name, BlockKind::kIcar, static_cast<int>(structure.rows()));
  p.block.structure = structure;
  p.map = map;
  p.initial = {initial_log_precision};
  p.theta_names = {name + ".log_precision"};
  p.component = component;
  pending_.push_back(std::move(p));
  return *this;
}

LatentModel LatentModelBuilder::build(double theta_prior_sd, double fixed_precision) const {
  LatentModel m;
  m.observations = observations_;
  std::vector<double> means;
  int offset = 0;
  std::vector<Eigen::Triplet<double>> design;
  std::vector<std::vector<double>> constraint_rows;
  for (const auto& p : pending_) {
    LatentBlock b = p.block;
    b.offset = offset;
    b.fixed_precision = fixed_precision;
    if (!p.theta_names.empty()) b.theta_index = static_cast<int>(m.theta_names.size());
    for (const auto& n : p.theta_names) m.theta_names.push_back(n);
    means.insert(means.end(), p.initial.begin(), p.initial.end());
    for (Eigen::Index k = 0; k < p.map.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(p.map, k); it; ++it) {
        design.emplace_back(static_cast<int>(it.row()), offset + static_cast<int>(it.col()), it.value());
      }
    }
    if (b.kind == BlockKind::kIcar) {
      const int labels = p.component.empty() ? 0 : *std::max_element(p.component.begin(), p.component.end()) + 1;
      b.structure_rank = b.size - labels;
      for (int c = 0; c < labels; ++c) {
        std::vector<double> row(static_cast<std::size_t>(offset + b.size), 0.0);
        for (int i = 0; i < b.size; ++i) row[static_cast<std::size_t>(offset + i)] = p.component[i] == c ? 1.0 : 0.0;
        constraint_rows.push_back(std::move(row));
      }
    }
    offset += b.size;
    m.blocks.push_back(std::move(b));
  }
  m.latent_dim = offset;
  m.design.resize(observations_.size(), offset);
  m.design.setFromTriplets(design.begin(), design.end());
  m.theta_prior_mean = Eigen::Map<const Eigen::VectorXd>(means.data(), static_cast<Eigen::Index>(means.size()));
  m.theta_prior_sd = Eigen::VectorXd::Constant(m.theta_dim(), theta_prior_sd);
  m.constraints = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(constraint_rows.size()), offset);
  for (std::size_t r = 0; r < constraint_rows.size(); ++r) {
    for (std::size_t c = 0; c < constraint_rows[r].size(); ++c) {
      m.constraints(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = constraint_rows[r][c];
    }
  }
  m.validate();
  return m;
}

GaussianApprox gaussian_approx(const LatentModel& model, const Eigen::VectorXd& theta, const NewtonOptions& options,
                               const Eigen::VectorXd* start, bool marginals) {
  const int d = model.latent_dim;
  const Eigen::MatrixXd& a_c = model.constraints;
  const SparseMatrix q = model.prior_precision(theta);
  const SparseMatrix& a = model.design;
  const SparseMatrix at = a.transpose();
  const bool gaussian = model.observations.family == Likelihood::kGaussian;

  auto objective = [&](const Eigen::VectorXd& x) {
    return likelihood_terms(model.observations, a * x).value - 0.5 * x.dot(q * x);
  };
  auto curvature_precision = [&](const Eigen::VectorXd& c) {
    SparseMatrix h = q + at * c.asDiagonal() * a;
    h.makeCompressed();
    return h;
  };

  GaussianApprox out;
  out.theta = theta;
  Eigen::VectorXd x = start && start->size() == d ? *start : Eigen::VectorXd::Zero(d);
  std::optional<Factorized> fact;
  bool converged = false;
  double f = objective(x);
  out.objective_trace.push_back(f);

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    const Eigen::VectorXd eta = a * x;
    const LikelihoodTerms lt = likelihood_terms(model.observations, eta);
    const SparseMatrix h = curvature_precision(lt.curvature);
    fact.emplace(h, a_c);
    const Eigen::VectorXd rhs = at * (lt.gradient + lt.curvature.cwiseProduct(eta));
    Eigen::VectorXd target = fact->chol.solve(rhs);
    if (fact->gain) target = fact->gain->project(target, a_c);
    const Eigen::VectorXd step = target - x;
    out.iterations = iter;
    if (gaussian) {
      // Quadratic log-likelihood: one Newton step is exact.
      x = target;
      out.precision = h;
      f = objective(x);
      out.objective_trace.push_back(f);
      converged = true;
      break;
    }
    double t = 1.0;
    double f_new = objective(x + step);
    for (int k = 0; k < options.max_halvings && !(f_new >= f); ++k) {
      t *= 0.5;
      f_new = objective(x + t * step);
    }
    x += t * step;
    f = f_new;
    out.objective_trace.push_back(f);
    const double change = (t * step).lpNorm<Eigen::Infinity>();
    if (change <= options.tolerance * std::max(1.0, x.lpNorm<Eigen::Infinity>())) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "Newton iterations did not converge in " << options.max_iterations << " steps; objective trace:";
    const std::size_t n = out.objective_trace.size();
    for (std::size_t i = n > 5 ? n - 5 : 0; i < n; ++i) msg << ' ' << out.objective_trace[i];
    throw NumericalError(msg.str());
  }

  const LikelihoodTerms lt = likelihood_terms(model.observations, a * x);
  if (!gaussian) {
    out.precision = curvature_precision(lt.curvature);
    fact.emplace(out.precision, a_c);
  }
  out.mode = x;
  out.log_likelihood = lt.value;

  int prior_dim = 0;
  const double prior_norm = log_prior_normalizer(model, theta, &prior_dim);
  const double log_prior_x = prior_norm - 0.5 * prior_dim * kLog2Pi - 0.5 * x.dot(q * x);
  const Eigen::Index k = a_c.rows();
  double log_gauss_x = 0.5 * fact->chol.log_determinant() - 0.5 * static_cast<double>(d - k) * kLog2Pi;
  if (fact->gain) {
    const Eigen::MatrixXd aat = a_c * a_c.transpose();
    const Eigen::LLT<Eigen::MatrixXd> aat_llt(aat);
    const double log_det_aat = 2.0 * aat_llt.matrixLLT().diagonal().array().log().sum();
    log_gauss_x += 0.5 * fact->gain->log_det_s - 0.5 * log_det_aat;
  }
  out.log_evidence = out.log_likelihood + log_prior_x - log_gauss_x;

  if (marginals) {
    Eigen::VectorXd var = fact->chol.inverse_diagonal();
    if (fact->gain) var -= fact->gain->variance_reduction();
    out.marginal_sd = var.cwiseMax(0.0).cwiseSqrt();
  }
  return out;
}

namespace {

struct OptimizerContext {
  const LatentModel* model;
  const NewtonOptions* newton;
  Eigen::VectorXd warm;
  std::size_t evaluations = 0;
};

double negative_log_posterior(const gsl_vector* v, void* params) {
  auto* ctx = static_cast<OptimizerContext*>(params);
  const Eigen::Index n = static_cast<Eigen::Index>(v->size);
  Eigen::VectorXd theta(n);
  for (Eigen::Index i = 0; i < n; ++i) theta[i] = gsl_vector_get(v, static_cast<std::size_t>(i));
  ++ctx->evaluations;
  try {
    const GaussianApprox g = gaussian_approx(*ctx->model, theta, *ctx->newton, &ctx->warm, false);
    const double value = -(g.log_evidence + ctx->model->log_hyperprior(theta));
    if (!std::isfinite(value)) return GSL_POSINF;
    ctx->warm = g.mode;
    return value;
  } catch (const Error&) {
    return GSL_POSINF;
  }
}

// Nelder-Mead search; returns nullopt when the simplex fails to converge.
std::optional<Eigen::VectorXd> locate_mode(const LatentModel& model, const Eigen::VectorXd& start,
                                           const FitOptions& options) {
  const auto n = static_cast<std::size_t>(start.size());
  OptimizerContext ctx{&model, &options.newton, Eigen::VectorXd::Zero(model.latent_dim)};
  gsl_multimin_function fn{&negative_log_posterior, n, &ctx};
  gsl_vector* x = gsl_vector_alloc(n);
  gsl_vector* step = gsl_vector_alloc(n);
  for (std::size_t i = 0; i < n; ++i) {
    gsl_vector_set(x, i, start[static_cast<Eigen::Index>(i)]);
    gsl_vector_set(step, i, 0.5);
  }
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  std::optional<Eigen::VectorXd> result;
  if (gsl_multimin_fminimizer_set(s, &fn, x, step) == GSL_SUCCESS && std::isfinite(s->fval)) {
    int status = GSL_CONTINUE;
    for (int iter = 0; iter < options.max_optimizer_iterations && status == GSL_CONTINUE; ++iter) {
      if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
      status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), options.optimizer_tolerance);
    }
    if (status == GSL_SUCCESS && std::isfinite(s->fval)) {
      Eigen::VectorXd best(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) best[static_cast<Eigen::Index>(i)] = gsl_vector_get(s->x, i);
      result = best;
    }
  }
  spdlog::debug("hyperparameter search used {} posterior evaluations", ctx.evaluations);
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(step);
  gsl_vector_free(x);
  return result;
}

}  // namespace

FitResult hyper_grid(std::shared_ptr<const LatentModel> model, const Eigen::VectorXd& initial_center,
                     const FitOptions& options) {
  model->validate();
  const int dim = model->theta_dim();
  if (initial_center.size() != dim) throw DataError("initial hyperparameter center has the wrong dimension");
  const GridSpec& grid = options.grid;
  if (grid.offsets.empty() || grid.offsets.size() != grid.quadrature.size()) {
    throw DataError("grid offsets and quadrature weights must be non-empty and of equal length");
  }
  gsl_set_error_handler_off();

  FitResult out;
  out.model = model;
  out.center = initial_center;
  if (options.center == CenterStrategy::kMode && dim > 0) {
    if (auto mode = locate_mode(*model, initial_center, options)) {
      out.center = *mode;
      out.mode_found = true;
    } else {
      spdlog::warn("hyperparameter mode search failed; using the supplied center");
    }
  }

  // Cartesian product of per-dimension offsets.
  const std::size_t per_dim = grid.offsets.size();
  std::size_t total = 1;
  for (int j = 0; j < dim; ++j) total *= per_dim;
  std::vector<double> quad(total, 1.0);
  out.points.resize(total);
  for (std::size_t idx = 0; idx < total; ++idx) {
    Eigen::VectorXd th = out.center;
    std::size_t rem = idx;
    for (int j = dim - 1; j >= 0; --j) {
      const std::size_t o = rem % per_dim;
      rem /= per_dim;
      th[j] += grid.offsets[o];
      quad[idx] *= grid.quadrature[o];
    }
    out.points[idx].theta = th;
  }

  const GaussianApprox center_fit = gaussian_approx(*model, out.center, options.newton, nullptr, false);
  out.approximations.resize(total);
  std::vector<char> ok(total, 1);
  const int threads = options.threads > 0 ? options.threads : default_thread_count();
  parallel_for(total, threads, [&](std::size_t i) {
    try {
      out.approximations[i] = gaussian_approx(*model, out.points[i].theta, options.newton, &center_fit.mode, true);
      out.points[i].log_posterior =
          out.approximations[i].log_evidence + model->log_hyperprior(out.points[i].theta);
      if (!std::isfinite(out.points[i].log_posterior)) ok[i] = 0;
    } catch (const NumericalError& e) {
      spdlog::warn("grid point {} dropped: {}", i, e.what());
      ok[i] = 0;
    }
  });

  double max_lp = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < total; ++i) {
    if (ok[i]) max_lp = std::max(max_lp, out.points[i].log_posterior);
  }
  if (!std::isfinite(max_lp)) throw NumericalError("no hyperparameter grid point produced a finite posterior");
  double norm = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    out.points[i].weight = ok[i] ? quad[i] * std::exp(out.points[i].log_posterior - max_lp) : 0.0;
    if (!ok[i]) out.points[i].log_posterior = -std::numeric_limits<double>::infinity();
    norm += out.points[i].weight;
  }
  for (auto& p : out.points) p.weight /= norm;
  return out;
}

FitResult fit(std::shared_ptr<const LatentModel> model, const Eigen::VectorXd& initial_center,
              const FitOptions& options) {
  FitResult out = hyper_grid(std::move(model), initial_center, options);
  out.latent = marginals(out);
  return out;
}

double mixture_quantile(std::span<const double> weights, std::span<const double> means, std::span<const double> sds,
                        double p) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    lo = std::min(lo, means[i] - 10.0 * sds[i]);
    hi = std::max(hi, means[i] + 10.0 * sds[i]);
  }
  auto cdf = [&](double q) {
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      s += weights[i] * (sds[i] > 0.0 ? normal_cdf((q - means[i]) / sds[i]) : (q >= means[i] ? 1.0 : 0.0));
    }
    return s;
  };
  for (int it = 0; it < 200 && hi - lo > 1e-10 * std::max(1.0, std::abs(lo + hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

MarginalSummary mixture_summary(std::span<const double> weights, std::span<const double> means,
                                std::span<const double> sds) {
  MarginalSummary s;
  double wsum = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    wsum += weights[i];
    s.mean += weights[i] * means[i];
    m2 += weights[i] * (sds[i] * sds[i] + means[i] * means[i]);
  }
  s.mean /= wsum;
  s.sd = std::sqrt(std::max(0.0, m2 / wsum - s.mean * s.mean));
  if (weights.size() == 1) {
    s.q025 = means[0] - 1.959963984540054 * sds[0];
    s.q50 = means[0];
    s.q975 = means[0] + 1.959963984540054 * sds[0];
    return s;
  }
  s.q025 = mixture_quantile(weights, means, sds, 0.025);
  s.q50 = mixture_quantile(weights, means, sds, 0.5);
  s.q975 = mixture_quantile(weights, means, sds, 0.975);
  return s;
}

std::vector<MarginalSummary> marginals(const FitResult& fit) {
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < fit.points.size(); ++i) {
    if (fit.points[i].weight > 0.0) active.push_back(i);
  }
  const int d = fit.model->latent_dim;
  std::vector<MarginalSummary> out(static_cast<std::size_t>(d));
  std::vector<double> w(active.size()), mu(active.size()), sd(active.size());
  for (std::size_t k = 0; k < active.size(); ++k) w[k] = fit.points[active[k]].weight;
  for (int j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < active.size(); ++k) {
      mu[k] = fit.approximations[active[k]].mode[j];
      sd[k] = fit.approximations[active[k]].marginal_sd[j];
    }
    out[static_cast<std::size_t>(j)] = mixture_summary(w, mu, sd);
  }
  return out;
}

CombinationMoments linear_combination_moments(const FitResult& fit, const SparseMatrix& rows) {
  const auto np = static_cast<Eigen::Index>(fit.points.size());
  CombinationMoments out{Eigen::MatrixXd::Zero(np, rows.rows()), Eigen::MatrixXd::Zero(np, rows.rows())};
  const Eigen::MatrixXd rt = Eigen::MatrixXd(rows.transpose());
  for (Eigen::Index i = 0; i < np; ++i) {
    if (fit.points[static_cast<std::size_t>(i)].weight <= 0.0) continue;
    const GaussianApprox& g = fit.approximations[static_cast<std::size_t>(i)];
    const Factorized f(g.precision, fit.model->constraints);
    const Eigen::MatrixXd x = f.chol.solve(rt);
    Eigen::VectorXd var = (rt.array() * x.array()).colwise().sum().transpose();
    if (f.gain) {
      const Eigen::MatrixXd rw = rows * f.gain->w;  // k x c
      const Eigen::MatrixXd half = f.gain->s_llt.matrixL().solve(rw.transpose());
      var -= half.colwise().squaredNorm().transpose();
    }
    out.mean.row(i) = (rows * g.mode).transpose();
    out.sd.row(i) = var.cwiseMax(0.0).cwiseSqrt().transpose();
  }
  return out;
}

std::vector<MarginalSummary> linear_combinations(const FitResult& fit, const SparseMatrix& rows) {
  const CombinationMoments m = linear_combination_moments(fit, rows);
  std::vector<double> w;
  std::vector<Eigen::Index> active;
  for (std::size_t i = 0; i < fit.points.size(); ++i) {
    if (fit.points[i].weight > 0.0) {
      w.push_back(fit.points[i].weight);
      active.push_back(static_cast<Eigen::Index>(i));
    }
  }
  std::vector<MarginalSummary> out;
  std::vector<double> mu(active.size()), sd(active.size());
  for (Eigen::Index j = 0; j < rows.rows(); ++j) {
    for (std::size_t k = 0; k < active.size(); ++k) {
      mu[k] = m.mean(active[k], j);
      sd[k] = m.sd(active[k], j);
    }
    out.push_back(mixture_summary(w, mu, sd));
  }
  return out;
}

JointSamples sample_joint(const FitResult& fit, std::size_t num_samples, std::uint64_t seed, int threads) {
  if (num_samples == 0) throw std::invalid_argument("sample_joint: num_samples must be positive");
  constexpr std::size_t kChunk = 128;
  const std::size_t chunks = (num_samples + kChunk - 1) / kChunk;
  const int d = fit.model->latent_dim;
  if (threads <= 0) threads = default_thread_count();

  std::vector<double> weights;
  for (const auto& p : fit.points) weights.push_back(p.weight);

  JointSamples out;
  out.values.resize(static_cast<Eigen::Index>(num_samples), d);
  out.theta_index.resize(num_samples);
  // Hyperparameter indices come from their own stream so the needed
  // factorizations are known before any latent draw.
  for (std::size_t c = 0; c < chunks; ++c) {
    std::mt19937_64 rng(derive_seed(seed, 2 * c));
    std::discrete_distribution<int> pick(weights.begin(), weights.end());
    for (std::size_t s = c * kChunk; s < std::min(num_samples, (c + 1) * kChunk); ++s) out.theta_index[s] = pick(rng);
  }
  std::vector<int> needed(out.theta_index.begin(), out.theta_index.end());
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
  std::vector<std::unique_ptr<Factorized>> factors(fit.points.size());
  parallel_for(needed.size(), threads, [&](std::size_t k) {
    const int i = needed[k];
    factors[static_cast<std::size_t>(i)] =
        std::make_unique<Factorized>(fit.approximations[static_cast<std::size_t>(i)].precision, fit.model->constraints);
  });

  parallel_for(chunks, threads, [&](std::size_t c) {
    std::mt19937_64 rng(derive_seed(seed, 2 * c + 1));
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(d);
    for (std::size_t s = c * kChunk; s < std::min(num_samples, (c + 1) * kChunk); ++s) {
      const auto i = static_cast<std::size_t>(out.theta_index[s]);
      for (int j = 0; j < d; ++j) z[j] = normal(rng);
      const Factorized& f = *factors[i];
      Eigen::VectorXd x = fit.approximations[i].mode + f.chol.correlate(z);
      if (f.gain) x = f.gain->project(x, fit.model->constraints);
      out.values.row(static_cast<Eigen::Index>(s)) = x.transpose();
    }
  });
  return out;
}

}  // namespace geoprev
