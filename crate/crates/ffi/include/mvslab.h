#ifndef MVSLAB_H
#define MVSLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every call.
typedef enum MvsStatus {
  MVS_STATUS_OK = 0,
  // A required pointer argument was null.
  MVS_STATUS_NULL_POINTER = 1,
  // Bad argument, malformed JSON or invalid configuration.
  MVS_STATUS_INVALID_ARGUMENT = 2,
  // A model or functional could not be built or evaluated.
  MVS_STATUS_MODEL = 3,
  // Non-finite or out-of-domain values.
  MVS_STATUS_NUMERIC = 4,
  // Every replica of a simulation failed.
  MVS_STATUS_INTEGRATION = 5,
  // Too few points for a fit.
  MVS_STATUS_FIT = 6,
  // Dimension or shape mismatch.
  MVS_STATUS_STRUCTURAL = 7,
  MVS_STATUS_IO = 8,
  // An output buffer is shorter than required.
  MVS_STATUS_BUFFER_TOO_SMALL = 9,
  // An internal panic was caught.
  MVS_STATUS_PANIC = 10,
} MvsStatus;

// Ensemble file encodings.
typedef enum MvsFormat {
  MVS_FORMAT_CSV = 0,
  MVS_FORMAT_PACKED = 1,
} MvsFormat;

// Recorded paths of a simulation.
typedef struct MvsEnsemble MvsEnsemble;

// A Lyapunov functional.
typedef struct MvsLyapunov MvsLyapunov;

// A drift and diffusion pair.
typedef struct MvsModel MvsModel;

typedef struct MvsCertificateResult {
  bool pass;
  bool vacuous;
  // Largest generator left-hand side over the audit set.
  double worst_margin;
  // Largest `lhs - rhs` over every audited inequality.
  double worst_excess;
  size_t n_samples;
  size_t violations;
} MvsCertificateResult;

typedef struct MvsEnsembleShape {
  size_t dim;
  size_t n_particles;
  size_t n_paths;
  // Recorded times of a completed replica.
  size_t n_times;
  size_t n_failed;
} MvsEnsembleShape;

typedef struct MvsEnvelopeResult {
  bool pass;
  bool vacuous;
  // Smallest `envelope - estimate + 3 SE`.
  double worst_slack;
  double worst_time;
  double min_margin;
  size_t n_violations;
} MvsEnvelopeResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version string of the library, static storage.
const char *mvs_version(void);

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *mvs_last_error(void);

void mvs_clear_error(void);

// The example model with coupling `m` and `l` noise components.
//
// # Safety
// `out` must be a valid pointer.
enum MvsStatus mvs_model_example61(double m, size_t l, struct MvsModel **out);

// Mean-field Ornstein-Uhlenbeck: drift `-x + m E[X]`, diffusion `s I`.
//
// # Safety
// `out` must be a valid pointer.
enum MvsStatus mvs_model_meanfield_ou(double m, double s, size_t dim, struct MvsModel **out);

// Drift `-x`, diffusion `eps sin(x)` per coordinate.
//
// # Safety
// `out` must be a valid pointer.
enum MvsStatus mvs_model_contractive(double eps, size_t dim, struct MvsModel **out);

// A model from a JSON model section, e.g.
// `{"expr_drift": "-x", "expr_diffusion": "0.5"}`.
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum MvsStatus mvs_model_from_json(const char *json, struct MvsModel **out);

// State dimension of a model.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum MvsStatus mvs_model_dim(const struct MvsModel *model, size_t *out);

// Label of a model, owned by the handle.
//
// # Safety
// `model` must be a live handle or null.
const char *mvs_model_label(const struct MvsModel *model);

// # Safety
// `model` must be null or a handle not yet freed.
void mvs_model_free(struct MvsModel *model);

// `v(x, mu) = |x|^2`.
//
// # Safety
// `out` must be a valid pointer.
enum MvsStatus mvs_lyapunov_quad(size_t dim, struct MvsLyapunov **out);

// `v(x, mu) = |x - m mean(mu)|^2`.
//
// # Safety
// `out` must be a valid pointer.
enum MvsStatus mvs_lyapunov_mean_centered(double m, size_t dim, struct MvsLyapunov **out);

// A functional from a JSON section, e.g. `{"builtin": "spread", "c": 1}`.
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum MvsStatus mvs_lyapunov_from_json(const char *json, size_t dim, struct MvsLyapunov **out);

// # Safety
// `v` must be null or a handle not yet freed.
void mvs_lyapunov_free(struct MvsLyapunov *v);

// `v(x, mu)` for the uniform measure on `n_atoms` points (row-major,
// `n_atoms * dim` values).
//
// # Safety
// `x` holds `dim` values, `atoms` holds `n_atoms * dim`, `out` is valid.
enum MvsStatus mvs_lyapunov_value(const struct MvsLyapunov *v,
                                  const double *x,
                                  const double *atoms,
                                  size_t n_atoms,
                                  double *out);

// The generator `L^mu v(x, mu)` for the uniform measure on `atoms`.
//
// # Safety
// As for [`mvs_lyapunov_value`]; `model` must be a live handle.
enum MvsStatus mvs_generator(const struct MvsLyapunov *v,
                             const struct MvsModel *model,
                             const double *x,
                             const double *atoms,
                             size_t n_atoms,
                             double *out);

// Audits a certificate (JSON, `{"mode": "H22", "alpha": ..}`) on
// `n_measures` sampled measures drawn with `seed`.
//
// # Safety
// Handles must be live, `cert_json` nul-terminated, `out` valid.
enum MvsStatus mvs_check_certificate(const struct MvsLyapunov *v,
                                     const struct MvsModel *model,
                                     const char *cert_json,
                                     size_t n_measures,
                                     uint64_t seed,
                                     struct MvsCertificateResult *out);

// Simulates `model` with settings given as a JSON sim section. Replicas
// that blow up are recorded as failed; only a run in which all fail is an
// error.
//
// # Safety
// `model` must be live, `sim_json` nul-terminated, `out` valid.
enum MvsStatus mvs_simulate(const struct MvsModel *model,
                            const char *sim_json,
                            struct MvsEnsemble **out);

// # Safety
// `ens` must be live and `out` valid.
enum MvsStatus mvs_ensemble_shape(const struct MvsEnsemble *ens, struct MvsEnsembleShape *out);

// Copies the recorded times.
//
// # Safety
// `ens` must be live and `buf` hold `cap` values.
enum MvsStatus mvs_ensemble_times(const struct MvsEnsemble *ens, double *buf, size_t cap);

// Copies frame `k` of `replica`, `n_particles * dim` values row-major.
// Failed replicas have fewer frames than `n_times`.
//
// # Safety
// `ens` must be live and `buf` hold `cap` values.
enum MvsStatus mvs_ensemble_frame(const struct MvsEnsemble *ens,
                                  size_t replica,
                                  size_t k,
                                  double *buf,
                                  size_t cap);

// Writes the ensemble to `path`.
//
// # Safety
// `ens` must be live and `path` nul-terminated.
enum MvsStatus mvs_ensemble_write(const struct MvsEnsemble *ens,
                                  const char *path,
                                  enum MvsFormat format);

// Reads an ensemble file in either encoding.
//
// # Safety
// `path` must be nul-terminated and `out` valid.
enum MvsStatus mvs_ensemble_read(const char *path, struct MvsEnsemble **out);

// # Safety
// `ens` must be null or a handle not yet freed.
void mvs_ensemble_free(struct MvsEnsemble *ens);

// Estimated `E|X_t|^p` at each recorded time with standard errors across
// replicas. `se` may be null; it is filled with NaN when fewer than two
// replicas completed.
//
// # Safety
// `ens` must be live; `values` and `se` (if non-null) hold `cap` values.
enum MvsStatus mvs_moment_curve(const struct MvsEnsemble *ens,
                                uint32_t p,
                                double *values,
                                double *se,
                                size_t cap);

// Checks the estimated second moment against the certificate envelope,
// starting from the estimate at the first recorded time.
//
// # Safety
// `ens` must be live, `cert_json` nul-terminated, `out` valid.
enum MvsStatus mvs_envelope_check(const struct MvsEnsemble *ens,
                                  const char *cert_json,
                                  struct MvsEnvelopeResult *out);

// `W1` between uniform measures on `a` (`na` atoms) and `b` (`nb` atoms).
// Exact in one dimension; the sliced estimate, a lower bound, otherwise.
//
// # Safety
// `a` and `b` hold `na * dim` and `nb * dim` values, `out` is valid.
enum MvsStatus mvs_wasserstein1(size_t dim,
                                const double *a,
                                size_t na,
                                const double *b,
                                size_t nb,
                                double *out);

// Runs the command-line front end in process; returns its exit code.
// `argv[0]` is the program name.
//
// # Safety
// `argv` holds `argc` nul-terminated strings.
int mvs_run_command(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVSLAB_H */
