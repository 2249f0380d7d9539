/* C API for the rasopt library: retrieval-guided beam search for LLM program
 * optimization. Corpus loading, exact top-k retrieval over persisted indexes,
 * and the metric suite are exposed through opaque handles and status codes.
 *
 * Conventions:
 *   - Every fallible function returns RasoptStatus; results go through
 *     out-pointers, which are written only on RASOPT_OK.
 *   - rasopt_last_error_message() returns the most recent error on the
 *     calling thread as a caller-owned string (free with rasopt_string_free),
 *     or NULL when none is recorded.
 *   - Handles must be freed with their matching *_free function, exactly
 *     once. Borrowed const char* results live only as long as their handle.
 */

#ifndef RASOPT_H
#define RASOPT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum RasoptStatus {
  RASOPT_OK = 0,
  RASOPT_NULL_POINTER = 1,
  RASOPT_INVALID_UTF8 = 2,
  RASOPT_IO_ERROR = 3,
  RASOPT_PARSE_ERROR = 4,
  RASOPT_INVALID_ARGUMENT = 5,
  RASOPT_INTERNAL_ERROR = 6,
} RasoptStatus;

/* Opaque handles. */
typedef struct RasoptCorpus RasoptCorpus;
typedef struct RasoptIndex RasoptIndex;
typedef struct RasoptHits RasoptHits;

/* Library version; static storage, do not free. */
const char *rasopt_version(void);

/* Last error message on this thread (caller-owned), or NULL. */
char *rasopt_last_error_message(void);

/* Frees a caller-owned string returned by this library. */
void rasopt_string_free(char *s);

/* ------------------------------------------------------------------ */
/* Metrics                                                             */
/* ------------------------------------------------------------------ */

/* Character-level Levenshtein distance with unit costs. */
RasoptStatus rasopt_edit_distance(const char *a, const char *b, uint64_t *out);

/* Clamped speedup original/candidate, at least 1.0. A failed candidate
 * (candidate_failed true) scores exactly 1.0; candidate_seconds is then
 * ignored. original_seconds must be positive and finite. */
RasoptStatus rasopt_speedup(double original_seconds, bool candidate_failed,
                            double candidate_seconds, double *out);

/* Arithmetic mean of len speedups (len >= 1). */
RasoptStatus rasopt_mean_best_speedup(const double *speedups, size_t len,
                                      double *out);

/* Fraction of speedups >= threshold; threshold must exceed 1. */
RasoptStatus rasopt_pct_optimized(const double *speedups, size_t len,
                                  double threshold, double *out);

/* Pearson r and Spearman rho (midrank ties) of two series of len >= 3 with
 * nonzero variance. */
RasoptStatus rasopt_timing_correlation(const double *full, const double *subset,
                                       size_t len, double *pearson_r,
                                       double *spearman_rho);

/* ------------------------------------------------------------------ */
/* Pair corpus                                                         */
/* ------------------------------------------------------------------ */

/* Loads a line-delimited pair corpus file. Malformed records are counted
 * (rasopt_corpus_reject_len), not errors; a file with zero valid records is
 * RASOPT_PARSE_ERROR. Free the handle with rasopt_corpus_free. */
RasoptStatus rasopt_corpus_load(const char *path, RasoptCorpus **out);

size_t rasopt_corpus_len(const RasoptCorpus *corpus);
size_t rasopt_corpus_reject_len(const RasoptCorpus *corpus);

/* Keeps at most max_per_problem pairs per problem by descending recorded
 * speedup (deterministic tie-break); returns a new handle. */
RasoptStatus rasopt_corpus_select_high_quality(const RasoptCorpus *corpus,
                                               size_t max_per_problem,
                                               RasoptCorpus **out);

void rasopt_corpus_free(RasoptCorpus *corpus);

/* ------------------------------------------------------------------ */
/* Retrieval index                                                     */
/* ------------------------------------------------------------------ */

/* Opens a persisted index (pair or atomic-edit payload). Free the handle
 * with rasopt_index_free. */
RasoptStatus rasopt_index_open(const char *path, RasoptIndex **out);

size_t rasopt_index_len(const RasoptIndex *index);
size_t rasopt_index_dim(const RasoptIndex *index);

/* Exact top-k by L2 distance, ascending, ties by key order; entries whose
 * key appears in exclude_keys are skipped. exclude_keys may be NULL when
 * exclude_len is 0. Free the result with rasopt_hits_free. */
RasoptStatus rasopt_index_query(const RasoptIndex *index, const float *query,
                                size_t dim, size_t k,
                                const char *const *exclude_keys,
                                size_t exclude_len, RasoptHits **out);

size_t rasopt_hits_len(const RasoptHits *hits);

/* Borrowed key of hit i (NULL when out of range); valid until the hits
 * handle is freed. */
const char *rasopt_hits_key(const RasoptHits *hits, size_t i);

/* Distance of hit i; NaN when out of range. */
double rasopt_hits_distance(const RasoptHits *hits, size_t i);

void rasopt_hits_free(RasoptHits *hits);
void rasopt_index_free(RasoptIndex *index);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* RASOPT_H */
