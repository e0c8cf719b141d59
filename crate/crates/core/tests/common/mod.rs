//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use natsched::predictor::{loss_and_grad, TrainableModel};

/// Tanh-sinh quadrature of `f` over `[0, 0.5]`, resolving an integrable
/// singularity at 0. Abscissae near 0 are formed without cancellation.
pub fn tanh_sinh_half(f: impl Fn(f64) -> f64) -> f64 {
    let h = 1.0 / 64.0;
    let mut total = 0.0;
    for j in -320i32..=320 {
        let t = j as f64 * h;
        let u = 0.5 * PI * t.sinh();
        let lo = 1.0 / (1.0 + (-2.0 * u).exp());
        let hi = 1.0 / (1.0 + (2.0 * u).exp());
        let x = 0.5 * lo;
        let dx = lo * hi * 0.5 * PI * t.cosh();
        if x > 0.0 && dx > 0.0 {
            total += f(x) * dx;
        }
    }
    total * h
}

/// Two-sided Kolmogorov–Smirnov statistic of `draws` against `cdf`.
pub fn ks_statistic(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Probability that sequential sampling without replacement with weights
/// `exp(score / tau)` picks exactly the set `subset` in its first
/// `subset.len()` draws, summed over all orders.
pub fn plackett_luce_set_prob(scores: &[f64], tau: f64, subset: &[usize]) -> f64 {
    let weights: Vec<f64> = scores.iter().map(|s| (s / tau).exp()).collect();
    fn rec(weights: &[f64], remaining: &mut Vec<usize>, used: f64) -> f64 {
        if remaining.is_empty() {
            return 1.0;
        }
        let total: f64 = weights.iter().sum::<f64>() - used;
        let mut p = 0.0;
        for idx in 0..remaining.len() {
            let item = remaining.remove(idx);
            p += weights[item] / total * rec(weights, remaining, used + weights[item]);
            remaining.insert(idx, item);
        }
        p
    }
    rec(&weights, &mut subset.to_vec(), 0.0)
}

/// All subsets of `0..n` of size `k`, each sorted.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n).filter(|m| m.count_ones() as usize == k).map(|m| (0..n).filter(|&i| m >> i & 1 == 1).collect()).collect()
}

/// Largest relative error between the analytic gradient and central
/// differences over `coords`.
pub fn gradient_check(
    model: &TrainableModel,
    masked: &[Option<usize>],
    mask_set: &[usize],
    targets: &[usize],
    class: Option<usize>,
    coords: &[usize],
) -> f64 {
    let (_, grad) = loss_and_grad(model, masked, mask_set, targets, class).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &i in coords {
        let mut plus = model.clone();
        plus.params[i] += h;
        let mut minus = model.clone();
        minus.params[i] -= h;
        let lp = loss_and_grad(&plus, masked, mask_set, targets, class).unwrap().0;
        let lm = loss_and_grad(&minus, masked, mask_set, targets, class).unwrap().0;
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
