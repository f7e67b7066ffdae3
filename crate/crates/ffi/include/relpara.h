#ifndef RELPARA_H
#define RELPARA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RpStatus {
  RP_STATUS_OK = 0,
  RP_STATUS_NULL_POINTER = 1,
  RP_STATUS_INVALID_ARGUMENT = 2,
  RP_STATUS_UTF8 = 3,
  RP_STATUS_BACKEND = 4,
  RP_STATUS_INTERNAL = 5,
} RpStatus;

/*
 Values accepted wherever a relation is passed as `int`.
 */
typedef enum RpRelation {
  RP_RELATION_EQ = 0,
  RP_RELATION_FWD = 1,
  RP_RELATION_REV = 2,
  RP_RELATION_CONTRA = 3,
  RP_RELATION_NEUTRAL = 4,
  RP_RELATION_INVALID = 5,
} RpRelation;

typedef enum RpProjected {
  RP_PROJECTED_ENTAILS = 0,
  RP_PROJECTED_NOT_ENTAILS = 1,
  RP_PROJECTED_UNKNOWN = 2,
} RpProjected;

/*
 Values accepted wherever an NLI label is passed as `int`.
 */
typedef enum RpNliLabel {
  RP_NLI_LABEL_ENTAILMENT = 0,
  RP_NLI_LABEL_NEUTRAL = 1,
  RP_NLI_LABEL_CONTRADICTION = 2,
} RpNliLabel;

/*
 Original two-way entailment label of an augmented pair.
 */
typedef enum RpBinaryLabel {
  RP_BINARY_LABEL_ENTAILS = 0,
  RP_BINARY_LABEL_NOT_ENTAILS = 1,
} RpBinaryLabel;

/*
 Which version of a sentence one side of an augmented pair uses.
 */
typedef enum RpVariant {
  RP_VARIANT_ORIG = 0,
  RP_VARIANT_EQ_PARA = 1,
  RP_VARIANT_REV_PARA = 2,
  RP_VARIANT_FWD_PARA = 3,
} RpVariant;

/*
 Reward scorer handle. Holds its own reference to the oracle.
 */
typedef struct RpEvaluator RpEvaluator;

/*
 NLI oracle handle.
 */
typedef struct RpOracle RpOracle;

/*
 Derived relation and the likelihood of every relation, indexed by
 [`RpRelation`].
 */
typedef struct RpVerdict {
  enum RpRelation relation;
  double likelihoods[6];
} RpVerdict;

typedef struct RpRewardConfig {
  double alpha;
  double beta;
  double delta;
  size_t n_rollouts;
  double gamma;
  double sim_low;
  double sim_high;
} RpRewardConfig;

typedef struct RpScoreSet {
  double similarity;
  double diversity;
  double consistency;
  double penalty;
} RpScoreSet;

/*
 Raw scores, scores after the similarity band, and the weighted total.
 */
typedef struct RpScores {
  struct RpScoreSet raw;
  struct RpScoreSet thresholded;
  double combined;
} RpScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *rp_last_error_message(void);

/*
 Relation from forward and backward NLI labels ([`RpNliLabel`] values).

 # Safety
 `out` must be null or valid for writes.
 */
enum RpStatus rp_derive_relation(int forward, int backward, enum RpRelation *out);

/*
 Static control token for EQ, FWD or REV; NULL for any other value.
 */
const char *rp_control_token(int relation);

/*
 Rule oracle over token sets. `synonyms` may be NULL; otherwise groups
 are separated by `;` and the words of a group by whitespace.

 # Safety
 `synonyms` must be null or a valid C string; `out` valid for writes.
 */
enum RpStatus rp_oracle_new_synthetic(const char *synonyms, struct RpOracle **out);

/*
 Oracle backed by an NLI classifier service at `endpoint`.

 # Safety
 `endpoint` must be a valid C string; `out` valid for writes.
 */
enum RpStatus rp_oracle_new_http(const char *endpoint, struct RpOracle **out);

/*
 # Safety
 `oracle` must be null or a handle from an `rp_oracle_new_*` call that
 has not been freed.
 */
void rp_oracle_free(struct RpOracle *oracle);

/*
 Runs the oracle on `x` and `y` in both directions.

 # Safety
 All pointers must be valid; strings NUL-terminated.
 */
enum RpStatus rp_oracle_verdict(const struct RpOracle *oracle,
                                const char *x,
                                const char *y,
                                struct RpVerdict *out);

/*
 # Safety
 `out` must be valid for writes.
 */
enum RpStatus rp_reward_config_default(struct RpRewardConfig *out);

/*
 Scorer using `oracle` for consistency and token overlap for
 similarity. `config` may be NULL for the defaults. The oracle handle
 may be freed afterwards.

 # Safety
 `oracle` must be a live handle; `config` null or valid; `out` valid
 for writes.
 */
enum RpStatus rp_evaluator_new(const struct RpOracle *oracle,
                               const struct RpRewardConfig *config,
                               struct RpEvaluator **out);

/*
 # Safety
 `evaluator` must be null or a live handle.
 */
void rp_evaluator_free(struct RpEvaluator *evaluator);

/*
 Scores `y_hat` as a paraphrase of `x` under a control `relation`.

 # Safety
 All pointers must be valid; strings NUL-terminated.
 */
enum RpStatus rp_evaluator_score(const struct RpEvaluator *evaluator,
                                 const char *x,
                                 const char *y_hat,
                                 int relation,
                                 struct RpScores *out);

/*
 Label of an augmented pair given the original label and the variants
 used on each side.

 # Safety
 `out` must be valid for writes.
 */
enum RpStatus rp_project_label(int original, int premise, int hypothesis, enum RpProjected *out);

/*
 Corpus BLEU (0-100) of `n` hypotheses against one reference each.

 # Safety
 `hypotheses` and `references` must point to `n` valid C strings.
 */
enum RpStatus rp_corpus_bleu(const char *const *hypotheses,
                             const char *const *references,
                             size_t n,
                             double *out);

/*
 Corpus iBLEU of `n` hypotheses against one reference and one source each.

 # Safety
 The three arrays must each point to `n` valid C strings.
 */
enum RpStatus rp_ibleu(const char *const *hypotheses,
                       const char *const *references,
                       const char *const *sources,
                       size_t n,
                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELPARA_H */
