#ifndef SCHOOLRD_H
#define SCHOOLRD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum SrStatus {
  SR_STATUS_OK = 0,
  SR_STATUS_NULL_POINTER = 1,
  SR_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad configuration or an argument outside the operation's domain.
   */
  SR_STATUS_CONFIG = 3,
  /**
   * Malformed input data.
   */
  SR_STATUS_DATA = 4,
  /**
   * The sample or design does not support the computation.
   */
  SR_STATUS_DEGENERATE = 5,
  /**
   * A bug inside the library.
   */
  SR_STATUS_PANIC = 6,
} SrStatus;

/**
 * A validated market.
 */
typedef struct SrMarket SrMarket;

/**
 * Deferred-acceptance assignment and its cutoffs.
 */
typedef struct SrMatch SrMatch;

/**
 * A product of intervals in score space.
 */
typedef struct SrRegion SrRegion;

/**
 * Students read from a roster, with outcomes when the roster has them.
 */
typedef struct SrRoster SrRoster;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread; do not free it.
 */
const char *sr_last_error(void);

/**
 * Library version as a static string.
 */
const char *sr_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void sr_string_free(char *s);

/**
 * Parses a market from JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum SrStatus sr_market_from_json(const char *json, struct SrMarket **out);

/**
 * The four-school worked example.
 *
 * # Safety
 * `out` must be writable.
 */
enum SrStatus sr_market_example(struct SrMarket **out);

/**
 * # Safety
 * `market` must be a live handle; `out` must be writable.
 */
enum SrStatus sr_market_num_schools(const struct SrMarket *market, size_t *out);

/**
 * # Safety
 * `market` must be null or a handle not yet freed.
 */
void sr_market_free(struct SrMarket *market);

/**
 * Reads a roster CSV file. Lottery draws missing from the file are drawn
 * from `seed` when `has_seed` is true.
 *
 * # Safety
 * `market` must be a live handle, `path` NUL-terminated, `out` writable.
 */
enum SrStatus sr_roster_from_path(const struct SrMarket *market,
                                  const char *path,
                                  bool has_seed,
                                  uint64_t seed,
                                  struct SrRoster **out);

/**
 * Parses roster CSV text.
 *
 * # Safety
 * `market` must be a live handle, `csv` NUL-terminated, `out` writable.
 */
enum SrStatus sr_roster_from_csv(const struct SrMarket *market,
                                 const char *csv,
                                 bool has_seed,
                                 uint64_t seed,
                                 struct SrRoster **out);

/**
 * # Safety
 * `roster` must be a live handle; `out` must be writable.
 */
enum SrStatus sr_roster_len(const struct SrRoster *roster, size_t *out);

/**
 * # Safety
 * `roster` must be null or a handle not yet freed.
 */
void sr_roster_free(struct SrRoster *roster);

/**
 * Runs deferred acceptance with seat counts `floor(N * capacity_share)`.
 *
 * # Safety
 * `market` and `roster` must be live handles; `out` must be writable.
 */
enum SrStatus sr_run_da(const struct SrMarket *market,
                        const struct SrRoster *roster,
                        struct SrMatch **out);

/**
 * Copies the assigned school of each student into `buf` (up to `capacity`
 * entries) and writes the number of students to `len`. Pass `capacity = 0`
 * to query the length only.
 *
 * # Safety
 * `m` must be a live handle, `buf` valid for `capacity` writes, `len` writable.
 */
enum SrStatus sr_match_assignment(const struct SrMatch *m,
                                  size_t *buf,
                                  size_t capacity,
                                  size_t *len);

/**
 * Copies the cutoff of each school into `buf`, like [`sr_match_assignment`].
 *
 * # Safety
 * `m` must be a live handle, `buf` valid for `capacity` writes, `len` writable.
 */
enum SrStatus sr_match_cutoffs(const struct SrMatch *m, double *buf, size_t capacity, size_t *len);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void sr_match_free(struct SrMatch *m);

/**
 * Eligibility set of `school` for a student type at cutoffs `c`.
 * `preferences` lists school indices best first and must end with 0;
 * `qualifiers` has one entry per school.
 *
 * # Safety
 * Arrays must hold the stated number of elements; `out` must be writable.
 */
enum SrStatus sr_eligibility_set(const struct SrMarket *market,
                                 const double *cutoffs,
                                 size_t n_cutoffs,
                                 const size_t *preferences,
                                 size_t n_preferences,
                                 const uint32_t *qualifiers,
                                 size_t n_qualifiers,
                                 size_t school,
                                 struct SrRegion **out);

/**
 * # Safety
 * `region` must be a live handle; `out` must be writable.
 */
enum SrStatus sr_region_measure(const struct SrRegion *region, double *out);

/**
 * # Safety
 * `region` must be a live handle, `point` must hold `dims` values, `out` writable.
 */
enum SrStatus sr_region_contains(const struct SrRegion *region,
                                 const double *point,
                                 size_t dims,
                                 bool *out);

/**
 * Interval notation such as `[0.333333333333, 0.666666666667)`.
 *
 * # Safety
 * `region` must be a live handle; free `*out` with [`sr_string_free`].
 */
enum SrStatus sr_region_to_string(const struct SrRegion *region, char **out);

/**
 * # Safety
 * `region` must be null or a handle not yet freed.
 */
void sr_region_free(struct SrRegion *region);

/**
 * Local-linear RD estimate of `preferred` against `other` at the roster's
 * own DA cutoffs, returned as JSON. `h <= 0` selects the default bandwidth
 * `N^-0.3`. The roster must carry outcomes.
 *
 * # Safety
 * Handles must be live; free `*json_out` with [`sr_string_free`].
 */
enum SrStatus sr_estimate_rd(const struct SrMarket *market,
                             const struct SrRoster *roster,
                             size_t preferred,
                             size_t other,
                             double h,
                             char **json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCHOOLRD_H */
