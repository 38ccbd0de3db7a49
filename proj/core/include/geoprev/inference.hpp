#pragma once

#include "geoprev/geometry.hpp"
#include "geoprev/spde.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace geoprev {

enum class Likelihood { kBinomial, kGaussian };

/// First stage of the hierarchy. Binomial uses a logit link; Gaussian has a
/// known per-observation variance.
struct ObservationStage {
  Likelihood family = Likelihood::kGaussian;
  Eigen::VectorXd y;
  Eigen::VectorXd trials;    // binomial only
  Eigen::VectorXd variance;  // gaussian only

  static ObservationStage binomial(Eigen::VectorXd positives, Eigen::VectorXd trials);
  static ObservationStage gaussian(Eigen::VectorXd values, Eigen::VectorXd variances);
  Eigen::Index size() const { return y.size(); }
};

enum class BlockKind {
  kFixed,  // fixed effects with a constant Gaussian precision
  kSpde,   // Matérn SPDE field; hyperparameters (log tau, log kappa)
  kIid,    // exchangeable Gaussian effects; hyperparameter log precision
  kIcar,   // intrinsic CAR; hyperparameter log precision, sum-to-zero per component
};

/// One contiguous slice [offset, offset + size) of the latent vector.
struct LatentBlock {
  std::string name;
  BlockKind kind = BlockKind::kFixed;
  int offset = 0;
  int size = 0;
  int theta_index = -1;
  double fixed_precision = 0.001;
  std::shared_ptr<const FemMatrices> fem;  // kSpde
  SparseMatrix structure;                  // kIcar: degree minus adjacency
  int structure_rank = 0;                  // kIcar
};

/// Latent Gaussian model: eta = design * x, x ~ N(0, Q(theta)^-1), optionally
/// subject to constraints * x = 0, with independent Gaussian priors on theta.
struct LatentModel {
  ObservationStage observations;
  SparseMatrix design;  // observations x latent
  std::vector<LatentBlock> blocks;
  int latent_dim = 0;
  std::vector<std::string> theta_names;
  Eigen::VectorXd theta_prior_mean;
  Eigen::VectorXd theta_prior_sd;
  Eigen::MatrixXd constraints;  // k x latent_dim; empty when unconstrained

  int theta_dim() const { return static_cast<int>(theta_names.size()); }
  const LatentBlock& block(const std::string& name) const;
  SparseMatrix prior_precision(const Eigen::VectorXd& theta) const;
  double log_hyperprior(const Eigen::VectorXd& theta) const;
  /// Throws DataError on inconsistent dimensions or invalid observations.
  void validate() const;
};

/// Assembles a LatentModel block by block.
class LatentModelBuilder {
 public:
  explicit LatentModelBuilder(ObservationStage observations);

  /// Intercept column of ones.
  LatentModelBuilder& add_intercept(const std::string& name = "intercept");
  /// Covariate fixed effects; one latent coordinate per column.
  LatentModelBuilder& add_covariates(const std::string& name, const Eigen::MatrixXd& covariates);
  /// SPDE field evaluated at observation locations through `projector`.
  LatentModelBuilder& add_spde(const std::string& name, std::shared_ptr<const FemMatrices> fem,
                               const Projector& projector, SpdeTheta initial);
  /// Exchangeable effects mapped to observations by `map` (observations x size).
  LatentModelBuilder& add_iid(const std::string& name, const SparseMatrix& map, double initial_log_precision);
  /// Observation-level nugget: one effect per observation.
  LatentModelBuilder& add_nugget(const std::string& name, double initial_log_precision);
  /// Intrinsic CAR effects with structure matrix R and component labels.
  LatentModelBuilder& add_icar(const std::string& name, const SparseMatrix& structure,
                               const std::vector<int>& component, const SparseMatrix& map,
                               double initial_log_precision);

  LatentModel build(double theta_prior_sd = 1.5, double fixed_precision = 0.001) const;

 private:
  struct Pending {
    LatentBlock block;
    SparseMatrix map;
    std::vector<double> initial;
    std::vector<std::string> theta_names;
    std::vector<int> component;
  };
  ObservationStage observations_;
  std::vector<Pending> pending_;
};

struct NewtonOptions {
  int max_iterations = 100;
  double tolerance = 1e-8;
  int max_halvings = 30;
};

/// Gaussian approximation to pi(x | y, theta): matches mode and curvature.
struct GaussianApprox {
  Eigen::VectorXd theta;
  Eigen::VectorXd mode;
  SparseMatrix precision;  // prior precision + A^T diag(curvature) A at the mode
  Eigen::VectorXd marginal_sd;
  double log_likelihood = 0.0;  // at the mode, including normalizing constants
  double log_evidence = 0.0;    // Laplace approximation to log pi(y | theta)
  int iterations = 0;
  std::vector<double> objective_trace;
};

/// Newton iterations with step halving on the log posterior of x.
/// `start` warm-starts the iteration; throws NumericalError after
/// max_iterations without convergence.
GaussianApprox gaussian_approx(const LatentModel& model, const Eigen::VectorXd& theta,
                               const NewtonOptions& options = {},
                               const Eigen::VectorXd* start = nullptr, bool marginals = true);

/// Log-likelihood, gradient and negative Hessian (diagonal) in eta.
struct LikelihoodTerms {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::VectorXd curvature;
};
LikelihoodTerms likelihood_terms(const ObservationStage& obs, const Eigen::VectorXd& eta);

struct HyperPoint {
  Eigen::VectorXd theta;
  double log_posterior = 0.0;  // log pi(y | theta) + log pi(theta), unnormalized
  double weight = 0.0;         // normalized integration weight
};

enum class CenterStrategy {
  kMode,   // Nelder-Mead search for the theta mode, starting at the supplied center
  kFixed,  // use the supplied center as-is
};

/// Per-dimension offsets (theta units) and matching quadrature weights.
struct GridSpec {
  std::vector<double> offsets{-1.5, -0.75, 0.0, 0.75, 1.5};
  std::vector<double> quadrature{1.0, 1.0, 1.0, 1.0, 1.0};

  static GridSpec single_point() { return {{0.0}, {1.0}}; }
};

struct FitOptions {
  CenterStrategy center = CenterStrategy::kMode;
  GridSpec grid;
  NewtonOptions newton;
  int max_optimizer_iterations = 200;
  double optimizer_tolerance = 1e-3;
  int threads = 0;  // 0: default_thread_count()
};

struct MarginalSummary {
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
};

struct FitResult {
  std::shared_ptr<const LatentModel> model;
  std::vector<HyperPoint> points;
  std::vector<GaussianApprox> approximations;  // parallel to points
  Eigen::VectorXd center;
  bool mode_found = false;
  std::vector<MarginalSummary> latent;  // per latent coordinate
};

/// Evaluates the hyperparameter posterior on a grid centred at the mode (or
/// the given center) and attaches a Gaussian approximation to each point.
FitResult hyper_grid(std::shared_ptr<const LatentModel> model, const Eigen::VectorXd& initial_center,
                     const FitOptions& options = {});

/// hyper_grid followed by per-coordinate mixture marginals.
FitResult fit(std::shared_ptr<const LatentModel> model, const Eigen::VectorXd& initial_center,
              const FitOptions& options = {});

/// Weight-combined Gaussian mixture summaries for every latent coordinate.
std::vector<MarginalSummary> marginals(const FitResult& fit);

/// Mixture summary from components; quantiles by bisection on the mixture CDF.
MarginalSummary mixture_summary(std::span<const double> weights, std::span<const double> means,
                                std::span<const double> sds);
double mixture_quantile(std::span<const double> weights, std::span<const double> means,
                        std::span<const double> sds, double p);

/// Summaries of linear combinations rows * x (rows: k x latent_dim).
std::vector<MarginalSummary> linear_combinations(const FitResult& fit, const SparseMatrix& rows);
/// Mixture components (mean, sd) of rows * x per hyperparameter point.
struct CombinationMoments {
  Eigen::MatrixXd mean;  // points x k
  Eigen::MatrixXd sd;    // points x k
};
CombinationMoments linear_combination_moments(const FitResult& fit, const SparseMatrix& rows);

struct JointSamples {
  Eigen::MatrixXd values;          // samples x latent_dim
  std::vector<int> theta_index;    // per sample, index into FitResult::points
};

/// Draws theta_i with probability w_i, then x ~ N(mode_i, precision_i^-1)
/// (conditioned on the linear constraints). Deterministic for a given seed
/// irrespective of thread count.
JointSamples sample_joint(const FitResult& fit, std::size_t num_samples, std::uint64_t seed, int threads = 0);

}  // namespace geoprev
