mod common;

use aptm::objectives::{Mode, Objective};
use common::{gradcheck, Fixture, GRAD_REL_TOL, LOSS_NAMES};

fn check(which: Option<usize>) {
    let mut fx = Fixture::new(2, 8, 3);
    let objective = Objective::default();
    let r = gradcheck(&mut fx, &objective, which, 3);
    let name = which.map_or("total", |k| LOSS_NAMES[k]);
    assert!(r.checked > 0, "{name}: no coordinate has a gradient");
    assert!(
        r.failures.is_empty(),
        "{name}: {} of {} coordinates off (max rel {:e} vs {GRAD_REL_TOL:e}): {:?}",
        r.failures.len(),
        r.checked,
        r.max_rel,
        r.failures
    );
}

#[test]
fn itc_gradients() {
    check(Some(0));
}

#[test]
fn itm_gradients() {
    check(Some(1));
}

#[test]
fn mlm_gradients() {
    check(Some(2));
}

#[test]
fn iac_gradients() {
    check(Some(3));
}

#[test]
fn iam_gradients() {
    check(Some(4));
}

#[test]
fn mam_gradients() {
    check(Some(5));
}

#[test]
fn total_gradients() {
    check(None);
}

#[test]
fn finetune_total_ignores_attribute_losses() {
    let mut fx = Fixture::new(2, 8, 3);
    let objective = Objective {
        mode: Mode::Finetune,
        ..Default::default()
    };
    let r = gradcheck(&mut fx, &objective, None, 2);
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    let plan = fx.frozen_plan(7, &objective);
    for k in 3..6 {
        assert_eq!(fx.loss(&plan, &objective, Some(k)), 0.0);
    }
}
