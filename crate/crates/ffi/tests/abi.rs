use std::ffi::{c_char, CStr, CString};
use std::ptr;

use relpara_ffi::*;

fn cs(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = rp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn case_table_over_the_abi() {
    let expected = [
        [RpRelation::Eq, RpRelation::Fwd, RpRelation::Invalid],
        [RpRelation::Rev, RpRelation::Neutral, RpRelation::Invalid],
        [RpRelation::Invalid, RpRelation::Invalid, RpRelation::Contra],
    ];
    for f in 0..3 {
        for b in 0..3 {
            let mut out = RpRelation::Invalid;
            assert_eq!(unsafe { rp_derive_relation(f, b, &mut out) }, RpStatus::Ok);
            assert_eq!(out, expected[f as usize][b as usize], "({f}, {b})");
        }
    }
    let mut out = RpRelation::Eq;
    assert_eq!(unsafe { rp_derive_relation(7, 0, &mut out) }, RpStatus::InvalidArgument);
    assert!(last_error().contains("7"));
    assert_eq!(unsafe { rp_derive_relation(0, 0, ptr::null_mut()) }, RpStatus::NullPointer);
}

#[test]
fn control_tokens_match_the_core_crate() {
    for (i, r) in [relpara::Relation::Eq, relpara::Relation::Fwd, relpara::Relation::Rev].into_iter().enumerate() {
        let p = rp_control_token(i as i32);
        let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap();
        assert_eq!(s, relpara::control_token(r).unwrap());
    }
    for v in [3, 4, 5, -1, 99] {
        assert!(rp_control_token(v).is_null());
    }
}

#[test]
fn oracle_and_evaluator_handles() {
    let mut oracle = ptr::null_mut();
    let syn = cs("man guy; runs jogs");
    assert_eq!(unsafe { rp_oracle_new_synthetic(syn.as_ptr(), &mut oracle) }, RpStatus::Ok);
    let mut v = RpVerdict { relation: RpRelation::Invalid, likelihoods: [0.0; 6] };
    let (x, y) = (cs("a man runs fast"), cs("a guy jogs"));
    assert_eq!(unsafe { rp_oracle_verdict(oracle, x.as_ptr(), y.as_ptr(), &mut v) }, RpStatus::Ok);
    assert_eq!(v.relation, RpRelation::Fwd);
    assert_eq!(v.likelihoods[RpRelation::Fwd as usize], 1.0);

    let mut ev = ptr::null_mut();
    assert_eq!(unsafe { rp_evaluator_new(oracle, ptr::null(), &mut ev) }, RpStatus::Ok);
    unsafe { rp_oracle_free(oracle) };
    let mut scores = RpScores::default();
    assert_eq!(unsafe { rp_evaluator_score(ev, x.as_ptr(), y.as_ptr(), RpRelation::Fwd as i32, &mut scores) }, RpStatus::Ok);
    assert_eq!(scores.raw.consistency, 1.0);
    let cfg = relpara::RewardConfig::default();
    let t = scores.thresholded;
    let f = cfg.alpha * (t.consistency - t.penalty) + cfg.beta * t.similarity + cfg.delta * t.diversity;
    assert!((scores.combined - f).abs() < 1e-12);
    assert_eq!(
        unsafe { rp_evaluator_score(ev, x.as_ptr(), y.as_ptr(), RpRelation::Contra as i32, &mut scores) },
        RpStatus::InvalidArgument
    );
    let bad = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { rp_evaluator_score(ev, bad.as_ptr() as *const c_char, y.as_ptr(), 0, &mut scores) },
        RpStatus::Utf8
    );
    unsafe { rp_evaluator_free(ev) };
    unsafe { rp_evaluator_free(ptr::null_mut()) };
}

#[test]
fn rejected_reward_config() {
    let mut oracle = ptr::null_mut();
    assert_eq!(unsafe { rp_oracle_new_synthetic(ptr::null(), &mut oracle) }, RpStatus::Ok);
    let mut cfg = RpRewardConfig { alpha: 0.0, beta: 0.0, delta: 0.0, n_rollouts: 0, gamma: 0.0, sim_low: 0.0, sim_high: 0.0 };
    assert_eq!(unsafe { rp_reward_config_default(&mut cfg) }, RpStatus::Ok);
    assert_eq!((cfg.alpha, cfg.n_rollouts, cfg.sim_high), (0.4, 2, 0.98));
    cfg.gamma = 1.5;
    let mut ev = ptr::null_mut();
    assert_eq!(unsafe { rp_evaluator_new(oracle, &cfg, &mut ev) }, RpStatus::InvalidArgument);
    assert!(ev.is_null());
    unsafe { rp_oracle_free(oracle) };
}

#[test]
fn unreachable_http_oracle_reports_backend() {
    let mut oracle = ptr::null_mut();
    let ep = cs("http://127.0.0.1:9/nli");
    assert_eq!(unsafe { rp_oracle_new_http(ep.as_ptr(), &mut oracle) }, RpStatus::Ok);
    let mut v = RpVerdict { relation: RpRelation::Invalid, likelihoods: [0.0; 6] };
    let (x, y) = (cs("a b"), cs("a"));
    assert_eq!(unsafe { rp_oracle_verdict(oracle, x.as_ptr(), y.as_ptr(), &mut v) }, RpStatus::Backend);
    unsafe { rp_oracle_free(oracle) };
}

#[test]
fn projection_and_metrics() {
    let mut p = RpProjected::Unknown;
    assert_eq!(unsafe { rp_project_label(0, RpVariant::Orig as i32, RpVariant::FwdPara as i32, &mut p) }, RpStatus::Ok);
    assert_eq!(p, RpProjected::Entails);
    assert_eq!(unsafe { rp_project_label(1, RpVariant::Orig as i32, RpVariant::FwdPara as i32, &mut p) }, RpStatus::Ok);
    assert_eq!(p, RpProjected::Unknown);
    assert_eq!(unsafe { rp_project_label(2, 0, 0, &mut p) }, RpStatus::InvalidArgument);

    let hyps = [cs("the cat sat on the mat"), cs("a dog barks loudly today")];
    let refs = [cs("the cat sat on the mat"), cs("a dog barks loudly now")];
    let srcs = [cs("a cat was on the mat"), cs("the dog is barking")];
    let hp: Vec<*const c_char> = hyps.iter().map(|c| c.as_ptr()).collect();
    let rp: Vec<*const c_char> = refs.iter().map(|c| c.as_ptr()).collect();
    let sp: Vec<*const c_char> = srcs.iter().map(|c| c.as_ptr()).collect();
    let mut bleu = 0.0;
    assert_eq!(unsafe { rp_corpus_bleu(hp.as_ptr(), rp.as_ptr(), 2, &mut bleu) }, RpStatus::Ok);
    let h: Vec<&str> = hyps.iter().map(|c| c.to_str().unwrap()).collect();
    let r: Vec<Vec<&str>> = refs.iter().map(|c| vec![c.to_str().unwrap()]).collect();
    let s: Vec<&str> = srcs.iter().map(|c| c.to_str().unwrap()).collect();
    assert_eq!(bleu, relpara::metrics::corpus_bleu(&h, &r).unwrap());
    let mut ib = 0.0;
    assert_eq!(unsafe { rp_ibleu(hp.as_ptr(), rp.as_ptr(), sp.as_ptr(), 2, &mut ib) }, RpStatus::Ok);
    assert_eq!(ib, relpara::metrics::corpus_ibleu(&h, &r, &s).unwrap());
    assert_eq!(unsafe { rp_corpus_bleu(ptr::null(), rp.as_ptr(), 2, &mut bleu) }, RpStatus::NullPointer);
}
