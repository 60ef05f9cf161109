#ifndef SMTPCPS_H
#define SMTPCPS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a fallible call. Zero is success; everything else names the
 * failure class, with detail in `smtpcps_last_error`.
 */
typedef enum SmtpcpsStatus {
  SMTPCPS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SMTPCPS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  SMTPCPS_INVALID_UTF8 = 2,
  /**
   * Malformed input text (configuration or cache).
   */
  SMTPCPS_PARSE = 3,
  /**
   * Semantically invalid configuration.
   */
  SMTPCPS_CONFIG = 4,
  /**
   * Set arithmetic could not produce a usable result for these inputs.
   */
  SMTPCPS_DOMAIN = 5,
  /**
   * A state outside the controllable region.
   */
  SMTPCPS_INFEASIBLE = 6,
  /**
   * The two protocol endpoints lost agreement.
   */
  SMTPCPS_PROTOCOL = 7,
  /**
   * An internal invariant failed; indicates a bug or corrupt data.
   */
  SMTPCPS_INTERNAL = 8,
  /**
   * Underlying I/O failure.
   */
  SMTPCPS_IO = 9,
  /**
   * A panic was caught at the boundary.
   */
  SMTPCPS_PANIC = 10,
} SmtpcpsStatus;

/**
 * Opaque run configuration.
 */
typedef struct SmtpcpsConfig SmtpcpsConfig;

/**
 * Opaque controllable-set family.
 */
typedef struct SmtpcpsFamily SmtpcpsFamily;

/**
 * Per-episode metrics. Accuracy fields are -1 when the episode
 * transmitted no bits to score.
 */
typedef struct SmtpcpsEpisodeStats {
  uint64_t steps;
  uint64_t key_events;
  uint64_t decoded_bits;
  uint64_t bit_errors;
  uint64_t desyncs;
  double rate_bps;
  double acc_random;
  double acc_reach_025;
  double acc_reach_050;
  double acc_reach_075;
} SmtpcpsEpisodeStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; never freed.
 */
const char *smtpcps_version(void);

/**
 * Detail message for the most recent failure on this thread. Valid until
 * the next failing call on the same thread; never freed by the caller.
 */
const char *smtpcps_last_error(void);

/**
 * The reference configuration (every key at its default).
 */
struct SmtpcpsConfig *smtpcps_config_default(void);

/**
 * Parse and validate a configuration document.
 *
 * # Safety
 * `text` must be nul-terminated; `out` must be a valid pointer.
 */
enum SmtpcpsStatus smtpcps_config_parse(const char *text, struct SmtpcpsConfig **out);

/**
 * Release a configuration handle.
 *
 * # Safety
 * `cfg` must be null or a pointer produced by this library, not yet freed.
 */
void smtpcps_config_free(struct SmtpcpsConfig *cfg);

/**
 * Build the controllable family described by a configuration.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be a valid pointer.
 */
enum SmtpcpsStatus smtpcps_family_build(const struct SmtpcpsConfig *cfg,
                                        struct SmtpcpsFamily **out);

/**
 * Family depth N (the family holds N + 1 nested sets); 0 for null.
 *
 * # Safety
 * `fam` must be null or a live handle.
 */
uint64_t smtpcps_family_depth(const struct SmtpcpsFamily *fam);

/**
 * Serialize a family to its checksummed cache text.
 *
 * # Safety
 * `fam` must be a live handle; `out` must be a valid pointer. The string
 * is released with [`smtpcps_string_free`].
 */
enum SmtpcpsStatus smtpcps_family_write(const struct SmtpcpsFamily *fam, char **out);

/**
 * Parse a family cache and re-verify all of its certificates against the
 * configuration's controller model.
 *
 * # Safety
 * `text` must be nul-terminated; `cfg` must be a live handle; `out` must
 * be a valid pointer.
 */
enum SmtpcpsStatus smtpcps_family_load(const char *text,
                                       const struct SmtpcpsConfig *cfg,
                                       struct SmtpcpsFamily **out);

/**
 * Release a family handle.
 *
 * # Safety
 * `fam` must be null or a pointer produced by this library, not yet freed.
 */
void smtpcps_family_free(struct SmtpcpsFamily *fam);

/**
 * Run one episode from the outermost default initial state.
 *
 * `alpha` is the eavesdropper coarseness ratio; pass 0 or less to use the
 * configured value. `base_seed` selects the episode's random streams.
 *
 * # Safety
 * `cfg` and `fam` must be live handles; `stats` must be a valid pointer.
 */
enum SmtpcpsStatus smtpcps_episode_run(const struct SmtpcpsConfig *cfg,
                                       const struct SmtpcpsFamily *fam,
                                       double alpha,
                                       uint64_t base_seed,
                                       struct SmtpcpsEpisodeStats *stats);

/**
 * Run the configured sweep; hand back the results table and the per-level
 * summary as CSV text.
 *
 * # Safety
 * `cfg` and `fam` must be live handles; `results_out` and `summary_out`
 * must be valid pointers. Both strings are released with
 * [`smtpcps_string_free`].
 */
enum SmtpcpsStatus smtpcps_sweep_csv(const struct SmtpcpsConfig *cfg,
                                     const struct SmtpcpsFamily *fam,
                                     char **results_out,
                                     char **summary_out);

/**
 * Release a string produced by this library.
 *
 * # Safety
 * `s` must be null or a string produced by this library, not yet freed.
 */
void smtpcps_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMTPCPS_H */
