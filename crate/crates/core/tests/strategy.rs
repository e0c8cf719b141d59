use std::f64::consts::PI;

use natsched::rng::stream;
use natsched::strategy::{
    arcsine_density, beta_density, heuristic_schedule, heuristic_schedule_raw, mask_count, project_schedule,
    sample_arcsine, sample_mask_ratio, GenerationSchedule, HeuristicParams, TrainingStrategy,
};
use proptest::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF};

mod common;
use common::{ks_statistic, tanh_sinh_half};

const GRID: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

#[test]
fn beta_density_integrates_to_one() {
    for &alpha in &GRID {
        for &beta in &GRID {
            let s = TrainingStrategy { alpha, beta };
            let mirrored = TrainingStrategy { alpha: beta, beta: alpha };
            let left = tanh_sinh_half(|r| beta_density(r, s).unwrap());
            let right = tanh_sinh_half(|r| beta_density(r, mirrored).unwrap());
            let total = left + right;
            assert!((total - 1.0).abs() < 1e-6, "Beta({alpha}, {beta}) integrates to {total}");
        }
    }
}

#[test]
fn beta_density_is_mirror_symmetric() {
    for &(a, b) in &[(0.5, 2.0), (3.0, 1.5), (8.0, 0.25)] {
        for r in [0.1, 0.37, 0.5, 0.9] {
            let p = beta_density(r, TrainingStrategy { alpha: a, beta: b }).unwrap();
            let q = beta_density(1.0 - r, TrainingStrategy { alpha: b, beta: a }).unwrap();
            assert!((p - q).abs() < 1e-10 * p.max(1.0));
        }
    }
}

#[test]
fn arcsine_density_integrates_to_one() {
    // Substituting r = 1 − x moves the singularity at 1 to the origin.
    let left = tanh_sinh_half(|r| arcsine_density(r).unwrap());
    let right = tanh_sinh_half(|x| 2.0 / (PI * (x * (2.0 - x)).sqrt()));
    assert!((left + right - 1.0).abs() < 1e-6, "{}", left + right);
}

#[test]
fn beta_sampler_passes_ks() {
    for (i, &(alpha, beta)) in [(0.25, 0.25), (0.5, 2.0), (1.0, 1.0), (2.0, 5.0), (8.0, 4.0)].iter().enumerate() {
        let mut g = stream(77, &[i as u64]);
        let s = TrainingStrategy { alpha, beta };
        let draws: Vec<f64> = (0..100_000).map(|_| sample_mask_ratio(s, &mut g)).collect();
        assert!(draws.iter().all(|&r| r > 0.0 && r < 1.0));
        let dist = Beta::new(alpha, beta).unwrap();
        let d = ks_statistic(draws, |x| dist.cdf(x));
        assert!(d < 0.01, "Beta({alpha}, {beta}) KS {d}");
    }
}

#[test]
fn arcsine_sampler_passes_ks_and_mean() {
    let mut g = stream(5, &[]);
    let draws: Vec<f64> = (0..100_000).map(|_| sample_arcsine(&mut g)).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!((mean - 2.0 / PI).abs() < 0.01);
    let d = ks_statistic(draws, |x| 2.0 / PI * x.asin());
    assert!(d < 0.01, "arcsine KS {d}");
}

#[test]
fn beta_sampler_terminates_for_degenerate_parameters() {
    let mut g = stream(6, &[]);
    for (alpha, beta) in [(1e-300, 1.0), (1.0, 1e-300), (1e-12, 1e-12)] {
        for _ in 0..100 {
            let r = sample_mask_ratio(TrainingStrategy { alpha, beta }, &mut g);
            assert!(r > 0.0 && r < 1.0);
        }
    }
}

#[test]
fn heuristic_formulas() {
    let p = HeuristicParams { lambda: 4.5, k: 2.0 };
    for steps in [4usize, 8] {
        let s = heuristic_schedule_raw(steps, p);
        let t_f = steps as f64;
        for t in 1..=steps {
            let tf = t as f64;
            assert!((s.r[t - 1] - (PI * tf / (2.0 * t_f)).cos()).abs() < 1e-12);
            assert_eq!(s.tau1[t - 1], 1.0);
            assert!((s.tau2[t - 1] - 4.5 * (t_f - tf + 1.0) / t_f).abs() < 1e-12);
            assert!((s.s[t - 1] - 2.0 * tf / t_f).abs() < 1e-12);
        }
        assert!(s.r[steps - 1].abs() < 1e-12);
    }
    assert!((arcsine_density(0.0).unwrap() - 2.0 / PI).abs() < 1e-12);
    assert!((arcsine_density(0.5).unwrap() - 2.0 / (PI * 0.75f64.sqrt())).abs() < 1e-12);
}

#[test]
fn heuristic_schedule_is_already_valid_for_the_default_task() {
    let raw = heuristic_schedule_raw(4, HeuristicParams::default());
    let projected = heuristic_schedule(4, 16, HeuristicParams::default()).unwrap();
    assert_eq!(projected.mask_counts(16), vec![15, 12, 7, 0]);
    assert_eq!(projected.tau2, raw.tau2);
    for (a, b) in projected.r.iter().zip(&raw.r) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn any_value() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => -2.0..3.0f64,
        1 => prop::num::f64::ANY,
        1 => Just(f64::NAN),
        1 => Just(f64::INFINITY),
        1 => Just(0.0),
    ]
}

fn any_schedule() -> impl Strategy<Value = (usize, GenerationSchedule)> {
    (1usize..=32).prop_flat_map(|n| {
        (1usize..=n).prop_flat_map(move |steps| {
            proptest::collection::vec(any_value(), 4 * steps)
                .prop_map(move |v| (n, GenerationSchedule::from_vector(&v).unwrap()))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn projection_is_valid_and_idempotent((n, sched) in any_schedule()) {
        let p = project_schedule(&sched, n);
        prop_assert!(p.validate(Some(n)).is_ok(), "{:?}", p);
        let counts = p.mask_counts(n);
        prop_assert!(counts.windows(2).all(|w| w[0] > w[1]));
        prop_assert!(counts[0] < n && *counts.last().unwrap() == 0);
        let again = project_schedule(&p, n);
        prop_assert_eq!(&again, &p);
        for (a, b) in again.to_vector().iter().zip(p.to_vector()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn projection_keeps_valid_schedules(n in 2usize..=32, steps_frac in 0.0..1.0f64) {
        let steps = 1 + ((n - 1) as f64 * steps_frac) as usize;
        let ratios: Vec<f64> = (1..=steps).map(|t| (n - (t * n) / steps) as f64 / n as f64).collect();
        let counts: Vec<usize> = ratios.iter().map(|&r| mask_count(r, n)).collect();
        prop_assume!(counts.windows(2).all(|w| w[0] > w[1]) && counts[0] < n);
        let s = GenerationSchedule::new(ratios, vec![1.0; steps], vec![0.5; steps], vec![1.5; steps]).unwrap();
        prop_assert_eq!(project_schedule(&s, n), s);
    }
}
