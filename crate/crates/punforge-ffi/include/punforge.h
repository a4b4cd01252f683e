#ifndef PUNFORGE_H
#define PUNFORGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call in this ABI.
typedef enum PunforgeStatus {
  PunforgeStatus_Ok = 0,
  PunforgeStatus_NullArgument = 1,
  PunforgeStatus_InvalidUtf8 = 2,
  PunforgeStatus_InvalidArgument = 3,
  PunforgeStatus_IoError = 4,
  PunforgeStatus_ParseError = 5,
  PunforgeStatus_InternalError = 6,
} PunforgeStatus;

// Opaque handle over a loaded run manifest.
typedef struct PunforgeManifest PunforgeManifest;

// Opaque handle over a per-round success profile.
typedef struct PunforgeProfile PunforgeProfile;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message raised on this thread, or NULL. Caller frees with
// `punforge_string_free`.
char *punforge_last_error_message(void);

// Frees a string returned by this library. NULL is accepted.
//
// # Safety
// `s` must be a pointer returned by this library, or NULL, and must not be
// used afterwards.
void punforge_string_free(char *s);

// Canonical form of an idiom string (NFC, lowercased, punctuation stripped,
// whitespace collapsed). Returns NULL on null/invalid input; the result may
// be the empty string. Caller frees with `punforge_string_free`.
//
// # Safety
// `input` must be a valid NUL-terminated string or NULL.
char *punforge_canonicalize(const char *input);

// 1 when both strings canonicalize to the same form, 0 when not,
// -1 on null/invalid input.
//
// # Safety
// `a` and `b` must be valid NUL-terminated strings or NULL.
int punforge_exact_equivalent(const char *a, const char *b);

// 1 = STOP, 0 = CONTINUE, -1 on invalid arguments (t or max_steps zero).
int punforge_next_control_signal(bool matched, uint32_t t, uint32_t max_steps);

// Parses a judge reply into (matched, parse_ok), both written as 0/1.
//
// # Safety
// `raw` must be a valid NUL-terminated string or NULL; the out pointers
// must be valid.
enum PunforgeStatus punforge_parse_judge_verdict(const char *raw,
                                                 int *out_matched,
                                                 int *out_parse_ok);

// Display rounding used by every report: one decimal, half away from zero.
double punforge_round1(double value);

// The per-run seed derivation: global seed mixed with idiom and salt.
//
// # Safety
// `idiom` and `salt` must be valid NUL-terminated strings or NULL; `out`
// must be a valid pointer.
enum PunforgeStatus punforge_run_seed(uint64_t global_seed,
                                      const char *idiom,
                                      const char *salt,
                                      uint64_t *out);

// Builds a profile from `len` per-round probabilities in [0, 1].
//
// # Safety
// `per_round_p` must point at `len` doubles; `out` must be valid.
enum PunforgeStatus punforge_profile_new(const double *per_round_p,
                                         uintptr_t len,
                                         struct PunforgeProfile **out);

// Frees a profile handle. NULL is accepted.
//
// # Safety
// `profile` must be a pointer returned by `punforge_profile_new` or NULL.
void punforge_profile_free(struct PunforgeProfile *profile);

// Cumulative match probability within `k` rounds.
//
// # Safety
// `profile` must be a live profile handle; `out` must be valid.
enum PunforgeStatus punforge_profile_expected_accuracy(const struct PunforgeProfile *profile,
                                                       uint32_t k,
                                                       double *out);

// Accuracy gained by round `k` over `k - 1` (requires `k >= 2`).
//
// # Safety
// `profile` must be a live profile handle; `out` must be valid.
enum PunforgeStatus punforge_profile_marginal_gain(const struct PunforgeProfile *profile,
                                                   uint32_t k,
                                                   double *out);

// Samples one run under a seeded generator; writes the 1-based matching
// round, or 0 when the run never matches within `max_steps`.
//
// # Safety
// `profile` must be a live profile handle; `out_round` must be valid.
enum PunforgeStatus punforge_profile_sample_run(const struct PunforgeProfile *profile,
                                                uint32_t max_steps,
                                                uint64_t seed,
                                                uint32_t *out_round);

// Loads a JSONL run manifest from disk.
//
// # Safety
// `path` must be a valid NUL-terminated string; `out` must be valid.
enum PunforgeStatus punforge_manifest_load(const char *path, struct PunforgeManifest **out);

// Frees a manifest handle. NULL is accepted.
//
// # Safety
// `manifest` must be a pointer returned by `punforge_manifest_load` or NULL.
void punforge_manifest_free(struct PunforgeManifest *manifest);

// Number of run records in the manifest; 0 for NULL.
//
// # Safety
// `manifest` must be a live manifest handle or NULL.
uintptr_t punforge_manifest_len(const struct PunforgeManifest *manifest);

// Recognition accuracy (percent) over the manifest's records. Non-zero
// `exclude_failed` drops provider-failed runs instead of counting them as
// misses.
//
// # Safety
// `manifest` must be a live manifest handle; `out` must be valid.
enum PunforgeStatus punforge_manifest_accuracy(const struct PunforgeManifest *manifest,
                                               int exclude_failed,
                                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PUNFORGE_H */
