#ifndef LOBMM_H
#define LOBMM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LobmmStatus {
  LOBMM_STATUS_OK = 0,
  LOBMM_STATUS_NULL_ARGUMENT = 1,
  LOBMM_STATUS_INVALID_ARGUMENT = 2,
  LOBMM_STATUS_CONFIG = 3,
  LOBMM_STATUS_IO = 4,
  // The solver diverged.
  LOBMM_STATUS_NUMERICAL = 5,
  // The optimal strategy was asked for without a solution.
  LOBMM_STATUS_POLICY_MISSING = 6,
  LOBMM_STATUS_PANIC = 7,
} LobmmStatus;

typedef enum LobmmStrategy {
  LOBMM_STRATEGY_UNCONSTRAINED = 0,
  LOBMM_STRATEGY_OPTIMAL = 1,
} LobmmStrategy;

typedef struct LobmmConfig LobmmConfig;

typedef struct LobmmResults LobmmResults;

typedef struct LobmmSolution LobmmSolution;

// Inventory thresholds for one side; infinities mean "never".
typedef struct LobmmSideThresholds {
  double q_off;
  double q_imp;
  double q_action;
  double q_on;
  double anchor;
  double impulse;
} LobmmSideThresholds;

// Moments of terminal wealth. Undefined moments are NaN.
typedef struct LobmmSummary {
  size_t n;
  double mean;
  double sd;
  double skewness;
  double kurtosis;
  double ir;
} LobmmSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call on this thread.
const char *lobmm_last_error(void);

// Library version, a static string.
const char *lobmm_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library, or be null.
void lobmm_string_free(char *s);

// `name` is `base` or `base-derived`.
//
// # Safety
// `name` must be a nul-terminated string; `out` must be writable.
enum LobmmStatus lobmm_config_preset(const char *name, struct LobmmConfig **out);

// Parses a JSON run configuration; absent fields take base-case values.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum LobmmStatus lobmm_config_from_json(const char *json, struct LobmmConfig **out);

// Writes the configuration as JSON; free the result with `lobmm_string_free`.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum LobmmStatus lobmm_config_to_json(const struct LobmmConfig *cfg, char **out);

// # Safety
// `cfg` must come from this library, or be null.
void lobmm_config_free(struct LobmmConfig *cfg);

// Solves the control problem for `cfg` on `workers` threads (0 picks one
// per core).
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum LobmmStatus lobmm_solve(const struct LobmmConfig *cfg,
                             size_t workers,
                             struct LobmmSolution **out);

// # Safety
// `sol` must come from this library, or be null.
void lobmm_solution_free(struct LobmmSolution *sol);

// Thresholds at the stored time nearest `t_remaining` for spread
// `spread_ticks` (1 to the grid's largest spread).
//
// # Safety
// `sol` must be a live handle; `bid` and `ask` must be writable.
enum LobmmStatus lobmm_solution_thresholds(const struct LobmmSolution *sol,
                                           double t_remaining,
                                           uint32_t spread_ticks,
                                           struct LobmmSideThresholds *bid,
                                           struct LobmmSideThresholds *ask);

// Value function at the stored time nearest `t_remaining` and the inventory
// node nearest `q`; `regime_bid` and `regime_ask` are 0 (off) or 1 (on).
//
// # Safety
// `sol` must be a live handle; `out` must be writable.
enum LobmmStatus lobmm_solution_value(const struct LobmmSolution *sol,
                                      double t_remaining,
                                      double q,
                                      uint32_t spread_ticks,
                                      uint8_t regime_bid,
                                      uint8_t regime_ask,
                                      double *out);

// Writes `value_grid.bin`, `policy.json` and `thresholds.csv` into `dir`.
//
// # Safety
// `sol` must be a live handle; `dir` a nul-terminated existing directory.
enum LobmmStatus lobmm_solution_save(const struct LobmmSolution *sol, const char *dir);

// Runs `n` backtest sessions. `solution` may be null for the unconstrained
// strategy; `noise` is null for a consistent book or one of `lob1`, `lob2`,
// `lob3`. The optimal strategy follows the full action lookup of the solution.
//
// # Safety
// Handles must be live or null as described; `noise` null or nul-terminated;
// `out` writable.
enum LobmmStatus lobmm_backtest(const struct LobmmConfig *cfg,
                                const struct LobmmSolution *solution,
                                enum LobmmStrategy strategy,
                                const char *noise,
                                size_t n_sessions,
                                uint64_t seed,
                                size_t workers,
                                struct LobmmResults **out);

// Number of sessions in `res`, 0 for null.
//
// # Safety
// `res` must be a live handle or null.
size_t lobmm_results_len(const struct LobmmResults *res);

// # Safety
// `res` must be a live handle; `out` writable.
enum LobmmStatus lobmm_results_summary(const struct LobmmResults *res, struct LobmmSummary *out);

// Copies up to `len` terminal wealths, in session order, into `buf`.
// Returns the number copied.
//
// # Safety
// `res` must be a live handle or null; `buf` must hold `len` doubles.
size_t lobmm_results_wealth(const struct LobmmResults *res, double *buf, size_t len);

// # Safety
// `res` must come from this library, or be null.
void lobmm_results_free(struct LobmmResults *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOBMM_H */
