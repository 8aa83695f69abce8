#ifndef CORRSTRESS_H
#define CORRSTRESS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_ARGUMENT = 1,
  CS_STATUS_DOMAIN = 2,
  CS_STATUS_DIMENSION = 3,
  CS_STATUS_RANK = 4,
  CS_STATUS_SINGULAR = 5,
  CS_STATUS_INSUFFICIENT_HISTORY = 6,
  CS_STATUS_NO_CONVERGENCE = 7,
  CS_STATUS_DEGENERATE = 8,
  CS_STATUS_NUMERICAL = 9,
  CS_STATUS_PARSE = 10,
  CS_STATUS_INVALID = 11,
  CS_STATUS_IO = 12,
  CS_STATUS_PANIC = 13,
} CsStatus;

/**
 * Return-distribution selector for VaR computations.
 */
typedef enum {
  CS_RISK_MEASURE_NORMAL = 0,
  CS_RISK_MEASURE_STUDENT_T = 1,
  CS_RISK_MEASURE_JOINT_STRESS = 2,
} CsRiskMeasure;

/**
 * Opaque correlation model handle: per-factor distance matrices built
 * from instrument exposures.
 */
typedef struct CsModel CsModel;

/**
 * Scalar diagnostics of a worst-case search.
 */
typedef struct {
  /**
   * Portfolio variance at the optimum.
   */
  double variance;
  /**
   * Mahalanobis distance of the optimum from the scenario origin.
   */
  double mahalanobis;
  /**
   * Relative spread of the restart optima.
   */
  double restart_spread;
  /**
   * 1 when the optimum sits on the ellipsoid boundary.
   */
  int32_t on_boundary;
  /**
   * 1 when the restarts agreed within tolerance.
   */
  int32_t converged;
  /**
   * Objective evaluations spent.
   */
  uint64_t evaluations;
} CsSearchInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of the underlying engine; static storage, do not free.
 */
const char *cs_version(void);

/**
 * Copies the last error message (NUL-terminated, possibly truncated)
 * into `buffer` and returns the full message length in bytes.
 *
 * # Safety
 * `buffer` must point to at least `capacity` writable bytes, or be null
 * (in which case only the required length is returned).
 */
size_t cs_last_error_message(char *buffer, size_t capacity);

/**
 * Inverse standard normal CDF.
 *
 * # Safety
 * `out` must be a valid pointer to a writable double.
 */
CsStatus cs_normal_quantile(double p, double *out);

/**
 * Inverse Student-t CDF.
 *
 * # Safety
 * `out` must be a valid pointer to a writable double.
 */
CsStatus cs_student_t_quantile(double p, double nu, double *out);

/**
 * Inverse chi-squared CDF.
 *
 * # Safety
 * `out` must be a valid pointer to a writable double.
 */
CsStatus cs_chi_square_quantile(double p, uint32_t dof, double *out);

/**
 * Inverse CDF of an inverse-gamma variable with the given shape/scale.
 *
 * # Safety
 * `out` must be a valid pointer to a writable double.
 */
CsStatus cs_inverse_gamma_quantile(double p, double shape, double scale, double *out);

/**
 * Principal branch of the Lambert W function.
 *
 * # Safety
 * `out` must be a valid pointer to a writable double.
 */
CsStatus cs_lambert_w0(double z, double *out);

/**
 * Flat hazard rate from the credit triangle.
 *
 * # Safety
 * `out` must be a valid pointer to a writable double.
 */
CsStatus cs_credit_triangle(double spread, double recovery, double *out);

/**
 * Risky duration of a CDS under flat hazard and rate.
 *
 * # Safety
 * `out` must be a valid pointer to a writable double.
 */
CsStatus cs_rpv01(double spread, double recovery, double maturity, double rate, double *out);

/**
 * Equivalent running spread of an (upfront, running) tranche quote.
 *
 * # Safety
 * `out` must be a valid pointer to a writable double.
 */
CsStatus cs_tranche_equivalent_spread(double upfront,
                                      double running,
                                      double recovery,
                                      double maturity,
                                      double rate,
                                      double *out);

/**
 * Tranche survival probability at maturity under the one-factor
 * Gaussian large-pool model with base correlations.
 *
 * # Safety
 * `out` must be a valid pointer to a writable double.
 */
CsStatus cs_tranche_survival(double attachment,
                             double detachment,
                             double base_corr_attach,
                             double base_corr_detach,
                             double index_spread,
                             double recovery,
                             double maturity,
                             double rate,
                             size_t pool_size,
                             double *out);

/**
 * Homogeneous-portfolio variance for a shared coefficient.
 *
 * # Safety
 * `out` must be a valid pointer to a writable double.
 */
CsStatus cs_homog_variance(size_t factor_count, double sigma, double beta, double *out);

/**
 * Average pairwise correlation of the homogeneous portfolio.
 *
 * # Safety
 * `out` must be a valid pointer to a writable double.
 */
CsStatus cs_homog_average_correlation(size_t factor_count, double beta, double *out);

/**
 * Shared coefficient hitting a target average correlation.
 *
 * # Safety
 * `out` must be a valid pointer to a writable double.
 */
CsStatus cs_homog_calibrate_beta(size_t factor_count, double target_rho, double *out);

/**
 * Closed-form worst-case coefficient within squared radius `radius_sq`.
 * `out_truncated` receives 1 when the raw solution was negative and got
 * clamped to zero.
 *
 * # Safety
 * `out_beta` and `out_truncated` must be valid writable pointers.
 */
CsStatus cs_homog_worst_case_beta(double beta_bar,
                                  size_t factor_count,
                                  double sigma_beta,
                                  double rho_beta,
                                  double radius_sq,
                                  double *out_beta,
                                  int32_t *out_truncated);

/**
 * Builds a model from a row-major `instrument_count x factor_count`
 * exposure matrix. On success `out_model` owns the handle; release it
 * with `cs_model_free`.
 *
 * # Safety
 * `exposures` must point to `instrument_count * factor_count` doubles;
 * `out_model` must be a valid writable pointer.
 */
CsStatus cs_model_new(const double *exposures,
                      size_t instrument_count,
                      size_t factor_count,
                      bool normalise,
                      CsModel **out_model);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a pointer obtained from `cs_model_new` that has
 * not been freed yet.
 */
void cs_model_free(CsModel *model);

/**
 * Number of instruments behind the handle; zero for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle from `cs_model_new`.
 */
size_t cs_model_instrument_count(const CsModel *model);

/**
 * Number of risk factors behind the handle; zero for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle from `cs_model_new`.
 */
size_t cs_model_factor_count(const CsModel *model);

/**
 * Fills `out` (row-major `n x n`) with the correlation matrix generated
 * by the coefficients.
 *
 * # Safety
 * `betas` must hold `factor_count` doubles; `out` must hold
 * `instrument_count^2` writable doubles.
 */
CsStatus cs_model_correlation(const CsModel *model, const double *betas, double *out);

/**
 * Least-squares coefficient calibration from a row-major empirical
 * correlation matrix (NaN entries are treated as unavailable).
 *
 * # Safety
 * `empirical` must hold `instrument_count^2` doubles; `out_betas` must
 * hold `factor_count` writable doubles.
 */
CsStatus cs_model_calibrate(const CsModel *model,
                            const double *empirical,
                            double clip_eps,
                            double *out_betas);

/**
 * VaR of the portfolio under the correlation scenario `betas`.
 * `nu` is read for the Student-t and joint measures, `vol_alpha` for the
 * joint measure only.
 *
 * # Safety
 * `weights`/`vols` must hold `instrument_count` doubles each, `betas`
 * `factor_count` doubles, and `out` must be writable.
 */
CsStatus cs_model_scenario_var(const CsModel *model,
                               const double *weights,
                               double portfolio_value,
                               const double *vols,
                               const double *betas,
                               CsRiskMeasure measure,
                               double alpha,
                               double nu,
                               double vol_alpha,
                               double *out);

/**
 * Worst-case coefficient search over the Mahalanobis ellipsoid (pass
 * `radius_sq = INFINITY` for the orthant-only search). The optimum is
 * written to `out_betas` and scalar diagnostics to `out_info`.
 * `restarts = 0` selects the default annealing budget.
 *
 * # Safety
 * `weights`/`vols` must hold `instrument_count` doubles, `mean`
 * `factor_count` doubles, `cov` `factor_count^2` doubles, `out_betas`
 * `factor_count` writable doubles, and `out_info` must be writable.
 */
CsStatus cs_model_worst_case(const CsModel *model,
                             const double *weights,
                             double portfolio_value,
                             const double *vols,
                             const double *mean,
                             const double *cov,
                             double radius_sq,
                             uint64_t seed,
                             uint32_t restarts,
                             double *out_betas,
                             CsSearchInfo *out_info);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORRSTRESS_H */
