mod common;

use aptm::numcore::{Graph, RngStream};
use aptm::objectives::{
    combine, iac_loss, iac_score, itc_loss, masked_token_loss, match_loss, smooth_targets, smoothing_floor, Mode,
};
use common::{unit_rows, var};

fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    logits[k] - lse
}

/// Plain-loop reference for the symmetric contrastive loss.
fn itc_oracle(image: &[Vec<f64>], text: &[Vec<f64>], tau: f64) -> f64 {
    let n = image.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut i2t = 0.0;
    let mut t2i = 0.0;
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| dot(&image[i], &text[j]) / tau).collect();
        let col: Vec<f64> = (0..n).map(|j| dot(&image[j], &text[i]) / tau).collect();
        i2t -= log_softmax_at(&row, i);
        t2i -= log_softmax_at(&col, i);
    }
    0.5 * (i2t + t2i) / n as f64
}

#[test]
fn itc_matches_loop_oracle() {
    let mut rng = RngStream::new(11, 0);
    for (n, tau) in [(2, 0.07), (5, 0.3), (9, 0.01)] {
        let (a, b) = (unit_rows(&mut rng, n, 6), unit_rows(&mut rng, n, 6));
        let g = Graph::new();
        let got = itc_loss(&var(&g, &a), &var(&g, &b), &g.scalar(tau)).unwrap().item();
        assert!((got - itc_oracle(&a, &b, tau)).abs() < 1e-12);
    }
}

#[test]
fn itc_single_pair_is_zero() {
    let mut rng = RngStream::new(1, 0);
    let (a, b) = (unit_rows(&mut rng, 1, 8), unit_rows(&mut rng, 1, 8));
    let g = Graph::new();
    let got = itc_loss(&var(&g, &a), &var(&g, &b), &g.scalar(0.07)).unwrap().item();
    assert!(got.abs() < 1e-9);
}

#[test]
fn itc_identical_features_give_log_batch() {
    let mut rng = RngStream::new(2, 0);
    let row = unit_rows(&mut rng, 1, 8).remove(0);
    for n in [2usize, 4, 16] {
        let rows = vec![row.clone(); n];
        let g = Graph::new();
        let got = itc_loss(&var(&g, &rows), &var(&g, &rows), &g.scalar(0.07)).unwrap().item();
        assert!((got - (n as f64).ln()).abs() < 1e-6);
    }
}

#[test]
fn iac_score_symmetric_is_half() {
    for (s, tau) in [(0.3, 0.07), (-0.9, 0.5), (0.0, 0.001)] {
        assert_eq!(iac_score(s, s, tau).unwrap(), 0.5);
    }
    assert!(iac_score(0.2, 0.1, 0.0).is_err());
}

#[test]
fn iac_loss_matches_two_way_softmax() {
    let pos = [0.4, -0.1, 0.9];
    let neg = [0.1, 0.3, 0.9];
    let tau = 0.2;
    let g = Graph::new();
    let sp = g.constant_from(&[3, 1], pos.to_vec()).unwrap();
    let sn = g.constant_from(&[3, 1], neg.to_vec()).unwrap();
    let got = iac_loss(&sp, &sn, &g.scalar(tau)).unwrap().item();
    let want = -(0..3).map(|i| iac_score(pos[i], neg[i], tau).unwrap().ln()).sum::<f64>() / 3.0;
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn matching_at_even_odds_is_ln2() {
    let g = Graph::new();
    let logits = g.constant_from(&[4, 1], vec![0.0; 4]).unwrap();
    for targets in [[1.0, 1.0, 1.0, 1.0], [0.0, 1.0, 0.0, 1.0]] {
        let got = match_loss(&logits, &targets).unwrap().item();
        assert!((got - std::f64::consts::LN_2).abs() < 1e-6);
    }
    // Smoothed targets keep the same value at p = 0.5.
    let smoothed = smooth_targets(&[1, 0, 1, 0], 0.1);
    assert!((match_loss(&logits, &smoothed).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-6);
}

#[test]
fn matching_loss_matches_bce_formula() {
    let z = [2.0, -1.5, 0.3];
    let y = [0.95, 0.05, 1.0];
    let g = Graph::new();
    let got = match_loss(&g.constant_from(&[3, 1], z.to_vec()).unwrap(), &y).unwrap().item();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let want = -(0..3)
        .map(|i| y[i] * sig(z[i]).ln() + (1.0 - y[i]) * (1.0 - sig(z[i])).ln())
        .sum::<f64>()
        / 3.0;
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn smoothed_matching_floor() {
    // BCE against 0.95 is minimized at p = 0.95, giving H(0.95).
    let floor = smoothing_floor(0.1);
    let h = -(0.95f64 * 0.95f64.ln() + 0.05f64 * 0.05f64.ln());
    assert!((floor - h).abs() < 1e-15);
    let g = Graph::new();
    let z = (0.95f64 / 0.05).ln();
    let at_min = match_loss(&g.constant_from(&[1, 1], vec![z]).unwrap(), &[0.95]).unwrap().item();
    assert!((at_min - floor).abs() < 1e-12);
}

#[test]
fn masked_token_loss_matches_log_softmax() {
    let mut rng = RngStream::new(4, 0);
    let (k, v) = (5, 12);
    let logits: Vec<f64> = (0..k * v).map(|_| 3.0 * rng.normal()).collect();
    let targets = [4u32, 11, 7, 4, 9];
    let g = Graph::new();
    let got = masked_token_loss(&g.constant_from(&[k, v], logits.clone()).unwrap(), &targets)
        .unwrap()
        .item();
    let want = -(0..k)
        .map(|i| log_softmax_at(&logits[i * v..(i + 1) * v], targets[i] as usize))
        .sum::<f64>()
        / k as f64;
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn combination_weights() {
    let c = [1.0, 2.0, 3.0, 0.3, 0.6, 0.9];
    let (apl, total) = combine(c, 0.8, Mode::Pretrain);
    assert!((apl - 0.6).abs() < 1e-15);
    assert!((total - (6.0 + 0.8 * 0.6)).abs() < 1e-12);
    assert_eq!(combine(c, 0.8, Mode::Finetune).1, 6.0);
}
