//! C ABI for the relation oracle, reward scorers, label projection and
//! corpus metrics.
//!
//! Every fallible function returns an [`RpStatus`]; on failure
//! [`rp_last_error_message`] describes the error on the calling thread.
//! Handles are opaque and must be released with their `_free` function.
//! Strings are NUL-terminated UTF-8 and are tokenized on whitespace.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use relpara::augmentation::{project_label, BinaryLabel, Projected, Variant};
use relpara::metrics::{corpus_bleu, corpus_ibleu};
use relpara::oracle::{derive_relation, oracle_verdict, HttpNliBackend, NliBackend, SyntheticWorldBackend};
use relpara::scorers::{Evaluator, Scores, TokenOverlapSimilarity};
use relpara::{tokenize, NliLabel, Relation, RewardConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Utf8 = 3,
    Backend = 4,
    Internal = 5,
}

/// Values accepted wherever a relation is passed as `int`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpRelation {
    Eq = 0,
    Fwd = 1,
    Rev = 2,
    Contra = 3,
    Neutral = 4,
    Invalid = 5,
}

/// Values accepted wherever an NLI label is passed as `int`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpNliLabel {
    Entailment = 0,
    Neutral = 1,
    Contradiction = 2,
}

/// Original two-way entailment label of an augmented pair.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpBinaryLabel {
    Entails = 0,
    NotEntails = 1,
}

/// Which version of a sentence one side of an augmented pair uses.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpVariant {
    Orig = 0,
    EqPara = 1,
    RevPara = 2,
    FwdPara = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpProjected {
    Entails = 0,
    NotEntails = 1,
    Unknown = 2,
}

/// Derived relation and the likelihood of every relation, indexed by
/// [`RpRelation`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpVerdict {
    pub relation: RpRelation,
    pub likelihoods: [f64; 6],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpRewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub n_rollouts: usize,
    pub gamma: f64,
    pub sim_low: f64,
    pub sim_high: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RpScoreSet {
    pub similarity: f64,
    pub diversity: f64,
    pub consistency: f64,
    pub penalty: f64,
}

/// Raw scores, scores after the similarity band, and the weighted total.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RpScores {
    pub raw: RpScoreSet,
    pub thresholded: RpScoreSet,
    pub combined: f64,
}

/// NLI oracle handle.
pub struct RpOracle {
    backend: Arc<dyn NliBackend>,
}

/// Reward scorer handle. Holds its own reference to the oracle.
pub struct RpEvaluator {
    oracle: Arc<dyn NliBackend>,
    similarity: TokenOverlapSimilarity,
    config: RewardConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RpStatus, String);

impl From<relpara::Error> for Failure {
    fn from(e: relpara::Error) -> Self {
        let status = if e.is_backend() {
            RpStatus::Backend
        } else {
            match e {
                relpara::Error::Tensor(_) | relpara::Error::Io(_) => RpStatus::Internal,
                _ => RpStatus::InvalidArgument,
            }
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(RpStatus::InvalidArgument, msg.into())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RpStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(RpStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| Failure(RpStatus::Utf8, format!("{name} is not UTF-8")))
}

unsafe fn texts<'a>(p: *const *const c_char, n: usize, name: &str) -> Result<Vec<&'a str>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    non_null(p, name)?;
    (0..n).map(|i| unsafe { text(*p.add(i), name) }).collect()
}

fn relation_from(v: c_int) -> Result<Relation, Failure> {
    usize::try_from(v).ok().and_then(|i| Relation::ALL.get(i).copied()).ok_or_else(|| invalid(format!("unknown relation {v}")))
}

fn relation_to(r: Relation) -> RpRelation {
    match r {
        Relation::Eq => RpRelation::Eq,
        Relation::Fwd => RpRelation::Fwd,
        Relation::Rev => RpRelation::Rev,
        Relation::Contra => RpRelation::Contra,
        Relation::Neutral => RpRelation::Neutral,
        Relation::Invalid => RpRelation::Invalid,
    }
}

fn label_from(v: c_int) -> Result<NliLabel, Failure> {
    usize::try_from(v).ok().and_then(|i| NliLabel::ALL.get(i).copied()).ok_or_else(|| invalid(format!("unknown NLI label {v}")))
}

fn variant_from(v: c_int) -> Result<Variant, Failure> {
    match v {
        0 => Ok(Variant::Orig),
        1 => Ok(Variant::EqPara),
        2 => Ok(Variant::RevPara),
        3 => Ok(Variant::FwdPara),
        _ => Err(invalid(format!("unknown variant {v}"))),
    }
}

fn score_set(s: &Scores) -> RpScoreSet {
    RpScoreSet { similarity: s.r_s, diversity: s.r_d, consistency: s.r_l, penalty: s.p_l }
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Relation from forward and backward NLI labels ([`RpNliLabel`] values).
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rp_derive_relation(forward: c_int, backward: c_int, out: *mut RpRelation) -> RpStatus {
    guard(|| {
        non_null(out, "out")?;
        let r = derive_relation(label_from(forward)?, label_from(backward)?);
        unsafe { *out = relation_to(r) };
        Ok(())
    })
}

/// Static control token for EQ, FWD or REV; NULL for any other value.
#[no_mangle]
pub extern "C" fn rp_control_token(relation: c_int) -> *const c_char {
    match relation_from(relation) {
        Ok(Relation::Eq) => c"<rel_eq>".as_ptr(),
        Ok(Relation::Fwd) => c"<rel_fwd>".as_ptr(),
        Ok(Relation::Rev) => c"<rel_rev>".as_ptr(),
        _ => ptr::null(),
    }
}

/// Rule oracle over token sets. `synonyms` may be NULL; otherwise groups
/// are separated by `;` and the words of a group by whitespace.
///
/// # Safety
/// `synonyms` must be null or a valid C string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rp_oracle_new_synthetic(synonyms: *const c_char, out: *mut *mut RpOracle) -> RpStatus {
    guard(|| {
        non_null(out, "out")?;
        let backend = if synonyms.is_null() {
            SyntheticWorldBackend::new()
        } else {
            let s = unsafe { text(synonyms, "synonyms")? };
            SyntheticWorldBackend::with_synonyms(s.split(';').map(str::split_whitespace))
        };
        unsafe { *out = Box::into_raw(Box::new(RpOracle { backend: Arc::new(backend) })) };
        Ok(())
    })
}

/// Oracle backed by an NLI classifier service at `endpoint`.
///
/// # Safety
/// `endpoint` must be a valid C string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rp_oracle_new_http(endpoint: *const c_char, out: *mut *mut RpOracle) -> RpStatus {
    guard(|| {
        non_null(out, "out")?;
        let endpoint = unsafe { text(endpoint, "endpoint")? };
        unsafe { *out = Box::into_raw(Box::new(RpOracle { backend: Arc::new(HttpNliBackend::new(endpoint)) })) };
        Ok(())
    })
}

/// # Safety
/// `oracle` must be null or a handle from an `rp_oracle_new_*` call that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn rp_oracle_free(oracle: *mut RpOracle) {
    if !oracle.is_null() {
        drop(unsafe { Box::from_raw(oracle) });
    }
}

/// Runs the oracle on `x` and `y` in both directions.
///
/// # Safety
/// All pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rp_oracle_verdict(
    oracle: *const RpOracle,
    x: *const c_char,
    y: *const c_char,
    out: *mut RpVerdict,
) -> RpStatus {
    guard(|| {
        non_null(oracle, "oracle")?;
        non_null(out, "out")?;
        let (x, y) = unsafe { (tokenize(text(x, "x")?), tokenize(text(y, "y")?)) };
        if x.is_empty() || y.is_empty() {
            return Err(invalid("empty sentence"));
        }
        let v = oracle_verdict(&x, &y, unsafe { &*(*oracle).backend })?;
        unsafe { *out = RpVerdict { relation: relation_to(v.relation), likelihoods: v.likelihoods } };
        Ok(())
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rp_reward_config_default(out: *mut RpRewardConfig) -> RpStatus {
    guard(|| {
        non_null(out, "out")?;
        let c = RewardConfig::default();
        unsafe {
            *out = RpRewardConfig {
                alpha: c.alpha,
                beta: c.beta,
                delta: c.delta,
                n_rollouts: c.n_rollouts,
                gamma: c.gamma,
                sim_low: c.sim_low,
                sim_high: c.sim_high,
            }
        };
        Ok(())
    })
}

/// Scorer using `oracle` for consistency and token overlap for
/// similarity. `config` may be NULL for the defaults. The oracle handle
/// may be freed afterwards.
///
/// # Safety
/// `oracle` must be a live handle; `config` null or valid; `out` valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn rp_evaluator_new(
    oracle: *const RpOracle,
    config: *const RpRewardConfig,
    out: *mut *mut RpEvaluator,
) -> RpStatus {
    guard(|| {
        non_null(oracle, "oracle")?;
        non_null(out, "out")?;
        let config = if config.is_null() {
            RewardConfig::default()
        } else {
            let c = unsafe { *config };
            RewardConfig {
                alpha: c.alpha,
                beta: c.beta,
                delta: c.delta,
                n_rollouts: c.n_rollouts,
                gamma: c.gamma,
                sim_low: c.sim_low,
                sim_high: c.sim_high,
            }
        };
        config.validate()?;
        let ev = RpEvaluator { oracle: unsafe { Arc::clone(&(*oracle).backend) }, similarity: TokenOverlapSimilarity::new(), config };
        unsafe { *out = Box::into_raw(Box::new(ev)) };
        Ok(())
    })
}

/// # Safety
/// `evaluator` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_evaluator_free(evaluator: *mut RpEvaluator) {
    if !evaluator.is_null() {
        drop(unsafe { Box::from_raw(evaluator) });
    }
}

/// Scores `y_hat` as a paraphrase of `x` under a control `relation`.
///
/// # Safety
/// All pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rp_evaluator_score(
    evaluator: *const RpEvaluator,
    x: *const c_char,
    y_hat: *const c_char,
    relation: c_int,
    out: *mut RpScores,
) -> RpStatus {
    guard(|| {
        non_null(evaluator, "evaluator")?;
        non_null(out, "out")?;
        let ev = unsafe { &*evaluator };
        let (x, y) = unsafe { (tokenize(text(x, "x")?), tokenize(text(y_hat, "y_hat")?)) };
        if x.is_empty() || y.is_empty() {
            return Err(invalid("empty sentence"));
        }
        let relation = relation_from(relation)?;
        let report = Evaluator::new(&*ev.oracle, &ev.similarity, ev.config).report(&x, &y, relation)?;
        unsafe {
            *out = RpScores {
                raw: score_set(&report.raw),
                thresholded: score_set(&report.thresholded),
                combined: report.f,
            }
        };
        Ok(())
    })
}

/// Label of an augmented pair given the original label and the variants
/// used on each side.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rp_project_label(original: c_int, premise: c_int, hypothesis: c_int, out: *mut RpProjected) -> RpStatus {
    guard(|| {
        non_null(out, "out")?;
        let original = match original {
            0 => BinaryLabel::E,
            1 => BinaryLabel::NE,
            v => return Err(invalid(format!("unknown binary label {v}"))),
        };
        let p = project_label(original, variant_from(premise)?, variant_from(hypothesis)?);
        unsafe {
            *out = match p {
                Projected::E => RpProjected::Entails,
                Projected::NE => RpProjected::NotEntails,
                Projected::U => RpProjected::Unknown,
            }
        };
        Ok(())
    })
}

/// Corpus BLEU (0-100) of `n` hypotheses against one reference each.
///
/// # Safety
/// `hypotheses` and `references` must point to `n` valid C strings.
#[no_mangle]
pub unsafe extern "C" fn rp_corpus_bleu(
    hypotheses: *const *const c_char,
    references: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> RpStatus {
    guard(|| {
        non_null(out, "out")?;
        let hyps = unsafe { texts(hypotheses, n, "hypotheses")? };
        let refs: Vec<Vec<&str>> = unsafe { texts(references, n, "references")? }.into_iter().map(|r| vec![r]).collect();
        let v = corpus_bleu(&hyps, &refs)?;
        unsafe { *out = v };
        Ok(())
    })
}

/// Corpus iBLEU of `n` hypotheses against one reference and one source each.
///
/// # Safety
/// The three arrays must each point to `n` valid C strings.
#[no_mangle]
pub unsafe extern "C" fn rp_ibleu(
    hypotheses: *const *const c_char,
    references: *const *const c_char,
    sources: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> RpStatus {
    guard(|| {
        non_null(out, "out")?;
        let hyps = unsafe { texts(hypotheses, n, "hypotheses")? };
        let refs: Vec<Vec<&str>> = unsafe { texts(references, n, "references")? }.into_iter().map(|r| vec![r]).collect();
        let srcs = unsafe { texts(sources, n, "sources")? };
        let v = corpus_ibleu(&hyps, &refs, &srcs)?;
        unsafe { *out = v };
        Ok(())
    })
}
