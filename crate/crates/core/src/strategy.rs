//! Generation schedules and training-time mask-ratio distributions.
//!
//! A [`GenerationSchedule`] holds the four per-step hyperparameter vectors of
//! the decode loop: re-masking ratio `r`, sampling temperature `tau1`,
//! re-masking temperature `tau2` and guidance scale `s`. Concatenated they
//! form the vector searched by the schedule optimizer.
//!
//! A [`MaskRatioDist`] is the distribution of mask ratios drawn during
//! training. The searchable family is Beta(α, β) ([`TrainingStrategy`]); the
//! arcsine law and fixed ratios exist as baselines.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to sampling temperatures during projection.
pub const MIN_TAU1: f64 = 1e-4;
/// Cap applied to infinite temperatures and guidance scales during projection.
pub const MAX_SCALE: f64 = 1e6;
/// Range that joint searches clamp Beta parameters into.
pub const BETA_PARAM_RANGE: (f64, f64) = (1e-2, 1e2);

/// Number of masked positions left after a step with re-masking ratio `r`.
pub fn mask_count(r: f64, n: usize) -> usize {
    let m = (r * n as f64).ceil();
    if m <= 0.0 {
        0
    } else {
        m as usize
    }
}

/// The ratio nearest `m / n` whose mask count is exactly `m`.
pub fn ratio_for_count(m: usize, n: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let mut r = m as f64 / n as f64;
    while mask_count(r, n) > m {
        r = r.next_down();
    }
    while mask_count(r, n) < m {
        r = r.next_up();
    }
    r
}

/// One of the four hyperparameter groups of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    R,
    Tau1,
    Tau2,
    S,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [ParamGroup::R, ParamGroup::Tau1, ParamGroup::Tau2, ParamGroup::S];

    pub fn index(self) -> usize {
        match self {
            ParamGroup::R => 0,
            ParamGroup::Tau1 => 1,
            ParamGroup::Tau2 => 2,
            ParamGroup::S => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::R => "r",
            ParamGroup::Tau1 => "tau1",
            ParamGroup::Tau2 => "tau2",
            ParamGroup::S => "s",
        }
    }
}

impl std::str::FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r" => Ok(ParamGroup::R),
            "tau1" => Ok(ParamGroup::Tau1),
            "tau2" => Ok(ParamGroup::Tau2),
            "s" => Ok(ParamGroup::S),
            other => Err(Error::InvalidArgument(format!("unknown hyperparameter group '{other}'"))),
        }
    }
}

/// Per-step decoding hyperparameters for a `T`-step generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSchedule {
    #[serde(rename = "T")]
    pub steps: usize,
    pub r: Vec<f64>,
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
    pub s: Vec<f64>,
}

impl GenerationSchedule {
    pub fn new(r: Vec<f64>, tau1: Vec<f64>, tau2: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        let sched = GenerationSchedule { steps: r.len(), r, tau1, tau2, s };
        sched.check_lengths()?;
        Ok(sched)
    }

    fn check_lengths(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Schema("schedule needs at least one step".into()));
        }
        for (name, len) in [
            ("r", self.r.len()),
            ("tau1", self.tau1.len()),
            ("tau2", self.tau2.len()),
            ("s", self.s.len()),
        ] {
            if len != self.steps {
                return Err(Error::Schema(format!("|{name}| = {len} but T = {}", self.steps)));
            }
        }
        Ok(())
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        match g {
            ParamGroup::R => &self.r,
            ParamGroup::Tau1 => &self.tau1,
            ParamGroup::Tau2 => &self.tau2,
            ParamGroup::S => &self.s,
        }
    }

    /// The concatenation `[r, tau1, tau2, s]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut xi = Vec::with_capacity(4 * self.steps);
        xi.extend_from_slice(&self.r);
        xi.extend_from_slice(&self.tau1);
        xi.extend_from_slice(&self.tau2);
        xi.extend_from_slice(&self.s);
        xi
    }

    pub fn from_vector(xi: &[f64]) -> Result<Self> {
        if xi.is_empty() || !xi.len().is_multiple_of(4) {
            return Err(Error::Schema(format!("schedule vector length {} is not a positive multiple of 4", xi.len())));
        }
        let t = xi.len() / 4;
        Ok(GenerationSchedule {
            steps: t,
            r: xi[..t].to_vec(),
            tau1: xi[t..2 * t].to_vec(),
            tau2: xi[2 * t..3 * t].to_vec(),
            s: xi[3 * t..].to_vec(),
        })
    }

    /// Mask counts `⌈r[t]·N⌉` after each step.
    pub fn mask_counts(&self, n: usize) -> Vec<usize> {
        self.r.iter().map(|&r| mask_count(r, n)).collect()
    }

    /// Checks ranges and, when `n` is given, the strictly decreasing mask-count
    /// trajectory `N > m_1 > ... > m_T = 0`.
    pub fn validate(&self, n: Option<usize>) -> Result<()> {
        self.check_lengths()?;
        let all = self.r.iter().chain(&self.tau1).chain(&self.tau2).chain(&self.s);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Validation("schedule has non-finite entries".into()));
        }
        if let Some(&bad) = self.r.iter().find(|&&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::Validation(format!("r entry {bad} outside [0, 1]")));
        }
        if self.r[self.steps - 1] != 0.0 {
            return Err(Error::Validation("final r entry must be 0".into()));
        }
        if let Some(&bad) = self.tau1.iter().find(|&&v| v <= 0.0) {
            return Err(Error::Validation(format!("tau1 entry {bad} must be > 0")));
        }
        if let Some(&bad) = self.tau2.iter().chain(&self.s).find(|&&v| v < 0.0) {
            return Err(Error::Validation(format!("tau2/s entry {bad} must be >= 0")));
        }
        if let Some(n) = n {
            let mut prev = n;
            for (t, m) in self.mask_counts(n).into_iter().enumerate() {
                if m >= prev {
                    return Err(Error::ScheduleMismatch {
                        n,
                        reason: format!("mask count {m} at step {} does not decrease from {prev}", t + 1),
                    });
                }
                prev = m;
            }
        }
        Ok(())
    }
}

/// Constants of the heuristic baseline: `tau2(t) = λ(T−t+1)/T`, `s(t) = kt/T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicParams {
    pub lambda: f64,
    pub k: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        HeuristicParams { lambda: 4.5, k: 2.0 }
    }
}

impl HeuristicParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Validation(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::Validation(format!("k must be >= 0, got {}", self.k)));
        }
        Ok(())
    }
}

/// The baseline schedule before projection: cosine re-masking ratio, unit
/// sampling temperature, linearly decaying re-masking temperature and linearly
/// increasing guidance.
pub fn heuristic_schedule_raw(steps: usize, params: HeuristicParams) -> GenerationSchedule {
    let tf = steps as f64;
    let t_iter = || (1..=steps).map(|t| t as f64);
    GenerationSchedule {
        steps,
        r: t_iter().map(|t| (PI * t / (2.0 * tf)).cos()).collect(),
        tau1: vec![1.0; steps],
        tau2: t_iter().map(|t| params.lambda * (tf - t + 1.0) / tf).collect(),
        s: t_iter().map(|t| params.k * t / tf).collect(),
    }
}

pub fn heuristic_schedule(steps: usize, n: usize, params: HeuristicParams) -> Result<GenerationSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    if steps > n {
        return Err(Error::InvalidArgument(format!(
            "T = {steps} exceeds N = {n}; mask counts cannot strictly decrease every step"
        )));
    }
    params.validate()?;
    Ok(project_schedule(&heuristic_schedule_raw(steps, params), n))
}

fn clamp_entry(v: f64, lo: f64, hi: f64) -> f64 {
    if v.is_nan() {
        lo
    } else {
        v.clamp(lo, hi)
    }
}

/// Projects a schedule onto the feasible set for sequence length `n`.
///
/// `r` is clipped into `[0, 1]` with the final entry forced to 0, and the mask
/// counts are made strictly decreasing by moving only the offending entries to
/// the nearest count that keeps the rest of the trajectory feasible.
/// Temperatures and guidance scales are clipped to their lower bounds.
/// Projection is idempotent.
pub fn project_schedule(sched: &GenerationSchedule, n: usize) -> GenerationSchedule {
    let steps = sched.steps;
    let mut r: Vec<f64> = sched.r.iter().map(|&v| clamp_entry(v, 0.0, 1.0)).collect();
    if let Some(last) = r.last_mut() {
        *last = 0.0;
    }
    let mut prev = n;
    for (i, ri) in r.iter_mut().enumerate() {
        // Enough room must remain for one decrement per remaining step.
        let lo = steps - (i + 1);
        let hi = prev.saturating_sub(1);
        let m = mask_count(*ri, n);
        let target = m.min(hi).max(lo.min(hi));
        if target != m {
            *ri = ratio_for_count(target, n);
        }
        prev = target;
    }
    GenerationSchedule {
        steps,
        r,
        tau1: sched.tau1.iter().map(|&v| clamp_entry(v, MIN_TAU1, MAX_SCALE)).collect(),
        tau2: sched.tau2.iter().map(|&v| clamp_entry(v, 0.0, MAX_SCALE)).collect(),
        s: sched.s.iter().map(|&v| clamp_entry(v, 0.0, MAX_SCALE)).collect(),
    }
}

pub fn serialize_schedule(sched: &GenerationSchedule) -> Result<String> {
    Ok(serde_json::to_string_pretty(sched)?)
}

/// Parses a schedule file, rejecting length mismatches and out-of-range
/// entries. The mask-count trajectory is not checked here because it depends
/// on the sequence length.
pub fn deserialize_schedule(text: &str) -> Result<GenerationSchedule> {
    let sched: GenerationSchedule =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("malformed schedule: {e}")))?;
    sched.validate(None)?;
    Ok(sched)
}

/// Beta(α, β) parameters of the training mask-ratio distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingStrategy {
    pub alpha: f64,
    pub beta: f64,
}

impl TrainingStrategy {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let s = TrainingStrategy { alpha, beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Validation(format!(
                "Beta parameters must be positive and finite, got alpha = {}, beta = {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

fn pow_factor(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        x.powf(e)
    }
}

/// Beta density `r^{α−1}(1−r)^{β−1} / B(α, β)`.
///
/// At an endpoint whose exponent is negative the density is `+∞`.
pub fn beta_density(r: f64, strat: TrainingStrategy) -> Result<f64> {
    strat.validate()?;
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!("ratio {r} outside [0, 1]")));
    }
    let log_b = statrs::function::beta::ln_beta(strat.alpha, strat.beta);
    Ok(pow_factor(r, strat.alpha - 1.0) * pow_factor(1.0 - r, strat.beta - 1.0) * (-log_b).exp())
}

/// Draws one mask ratio from Beta(α, β), strictly inside (0, 1).
///
/// Draws that land on an endpoint are rejected. For parameters so small that
/// almost every draw underflows, the last draw is moved to the nearest
/// interior value after `MAX_ENDPOINT_REJECTIONS` attempts.
pub fn sample_mask_ratio<R: Rng + ?Sized>(strat: TrainingStrategy, rng: &mut R) -> f64 {
    const MAX_ENDPOINT_REJECTIONS: usize = 1000;
    let dist = rand_distr::Beta::new(strat.alpha, strat.beta).expect("validated Beta parameters");
    let mut r = dist.sample(rng);
    for _ in 0..MAX_ENDPOINT_REJECTIONS {
        if r > 0.0 && r < 1.0 {
            return r;
        }
        r = dist.sample(rng);
    }
    r.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Arcsine-law density `2 / (π √(1 − r²))` on `[0, 1)`.
pub fn arcsine_density(r: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!("arcsine density needs 0 <= r < 1, got {r}")));
    }
    Ok(2.0 / (PI * (1.0 - r * r).sqrt()))
}

/// Inverse-CDF draw `sin(πu/2)` from the arcsine law.
pub fn sample_arcsine<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    (PI * u / 2.0).sin()
}

/// Training-time distribution of mask ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MaskRatioDist {
    Beta { alpha: f64, beta: f64 },
    Arcsine,
    Fixed { ratio: f64 },
}

impl From<TrainingStrategy> for MaskRatioDist {
    fn from(s: TrainingStrategy) -> Self {
        MaskRatioDist::Beta { alpha: s.alpha, beta: s.beta }
    }
}

impl MaskRatioDist {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MaskRatioDist::Beta { alpha, beta } => TrainingStrategy { alpha, beta }.validate(),
            MaskRatioDist::Arcsine => Ok(()),
            MaskRatioDist::Fixed { ratio } if (0.0..=1.0).contains(&ratio) => Ok(()),
            MaskRatioDist::Fixed { ratio } => Err(Error::Validation(format!("fixed ratio {ratio} outside [0, 1]"))),
        }
    }

    pub fn as_beta(&self) -> Option<TrainingStrategy> {
        match *self {
            MaskRatioDist::Beta { alpha, beta } => Some(TrainingStrategy { alpha, beta }),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MaskRatioDist::Beta { alpha, beta } => sample_mask_ratio(TrainingStrategy { alpha, beta }, rng),
            MaskRatioDist::Arcsine => sample_arcsine(rng),
            MaskRatioDist::Fixed { ratio } => ratio,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            MaskRatioDist::Beta { alpha, beta } => format!("beta({alpha:.4},{beta:.4})"),
            MaskRatioDist::Arcsine => "arcsine".to_string(),
            MaskRatioDist::Fixed { ratio } => format!("fixed({ratio})"),
        }
    }
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::rng;

    fn sched(r: &[f64]) -> GenerationSchedule {
        let t = r.len();
        GenerationSchedule::new(r.to_vec(), vec![1.0; t], vec![1.0; t], vec![1.0; t]).unwrap()
    }

    #[test]
    fn heuristic_ratios_for_four_steps() {
        let raw = heuristic_schedule_raw(4, HeuristicParams::default());
        let expected = [0.923_879_532_511_286_7, 0.707_106_781_186_547_6, 0.382_683_432_365_089_8, 0.0];
        for (got, want) in raw.r.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert_eq!(raw.tau1, vec![1.0; 4]);
    }

    #[test]
    fn heuristic_endpoints() {
        let p = HeuristicParams { lambda: 3.0, k: 1.7 };
        for t in 1..=9 {
            let raw = heuristic_schedule_raw(t, p);
            assert!((raw.s[t - 1] - 1.7).abs() < 1e-15);
            assert!(raw.r[t - 1].abs() < 1e-15);
            assert!((raw.tau2[0] - 3.0).abs() < 1e-15);
            let projected = heuristic_schedule(t, 16, p).unwrap();
            assert_eq!(projected.r[t - 1], 0.0);
            projected.validate(Some(16)).unwrap();
        }
    }

    #[test]
    fn heuristic_rejects_more_steps_than_positions() {
        assert!(heuristic_schedule(5, 4, HeuristicParams::default()).is_err());
        assert!(heuristic_schedule(0, 4, HeuristicParams::default()).is_err());
    }

    #[test]
    fn projection_forces_final_zero() {
        let p = project_schedule(&sched(&[0.5, 0.5]), 2);
        assert_eq!(p.r, vec![0.5, 0.0]);
    }

    #[test]
    fn projection_lowers_offending_entry_minimally() {
        let p = project_schedule(&sched(&[0.2, 0.9, 0.0]), 10);
        assert_eq!(p.mask_counts(10), vec![2, 1, 0]);
        assert_eq!(p.r[0], 0.2);
        assert!((p.r[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn projection_keeps_valid_schedule() {
        let s = heuristic_schedule(4, 16, HeuristicParams::default()).unwrap();
        assert_eq!(project_schedule(&s, 16), s);
    }

    #[test]
    fn projection_reserves_room_for_remaining_steps() {
        let p = project_schedule(&sched(&[0.25, 0.1, 0.05, 0.0]), 4);
        assert_eq!(p.mask_counts(4), vec![3, 2, 1, 0]);
    }

    #[test]
    fn projection_repairs_non_finite_entries() {
        let mut s = sched(&[f64::NAN, 0.0]);
        s.tau1[0] = f64::NAN;
        s.tau2[1] = f64::INFINITY;
        s.s[0] = -3.0;
        let p = project_schedule(&s, 8);
        p.validate(Some(8)).unwrap();
        assert_eq!(p.tau1[0], MIN_TAU1);
        assert_eq!(p.s[0], 0.0);
    }

    #[test]
    fn ratio_for_count_round_trips() {
        for n in 1..40 {
            for m in 0..=n {
                let r = ratio_for_count(m, n);
                assert_eq!(mask_count(r, n), m);
                assert!((r - m as f64 / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vector_round_trip() {
        let s = heuristic_schedule(3, 9, HeuristicParams::default()).unwrap();
        assert_eq!(GenerationSchedule::from_vector(&s.to_vector()).unwrap(), s);
        assert!(GenerationSchedule::from_vector(&[0.0; 6]).is_err());
    }

    #[test]
    fn schedule_json_round_trip_and_errors() {
        let s = heuristic_schedule(4, 16, HeuristicParams::default()).unwrap();
        let text = serialize_schedule(&s).unwrap();
        assert!(text.contains("\"T\""));
        assert_eq!(deserialize_schedule(&text).unwrap(), s);

        let short = r#"{"T": 2, "r": [0.0], "tau1": [1, 1], "tau2": [1, 1], "s": [1, 1]}"#;
        assert!(matches!(deserialize_schedule(short), Err(Error::Schema(_))));
        let out_of_range = r#"{"T": 2, "r": [1.2, 0.0], "tau1": [1, 1], "tau2": [1, 1], "s": [1, 1]}"#;
        assert!(matches!(deserialize_schedule(out_of_range), Err(Error::Validation(_))));
        assert!(deserialize_schedule("not json").is_err());
    }

    #[test]
    fn beta_density_values() {
        let uniform = TrainingStrategy::new(1.0, 1.0).unwrap();
        for r in [0.0, 0.3, 1.0] {
            assert!((beta_density(r, uniform).unwrap() - 1.0).abs() < 1e-12);
        }
        let s = TrainingStrategy::new(2.0, 2.0).unwrap();
        assert!((beta_density(0.5, s).unwrap() - 1.5).abs() < 1e-12);
        assert!(beta_density(0.0, TrainingStrategy::new(0.5, 2.0).unwrap()).unwrap().is_infinite());
        assert!(beta_density(0.5, TrainingStrategy { alpha: 0.0, beta: 1.0 }).is_err());
        assert!(beta_density(1.5, s).is_err());
    }

    #[test]
    fn arcsine_values() {
        assert!((arcsine_density(0.0).unwrap() - 0.636_619_772_367_581_4).abs() < 1e-12);
        assert!((arcsine_density(0.5).unwrap() - 0.735_105_193_895_722_7).abs() < 1e-12);
        assert!(arcsine_density(1.0).is_err());
    }

    fn sample_mean(f: impl Fn(&mut rng::StreamRng) -> f64) -> f64 {
        let mut g = rng::stream(11, &[]);
        (0..100_000).map(|_| f(&mut g)).sum::<f64>() / 100_000.0
    }

    #[test]
    fn sampler_means() {
        let m = sample_mean(|g| sample_mask_ratio(TrainingStrategy::new(2.0, 2.0).unwrap(), g));
        assert!((m - 0.5).abs() < 0.01);
        let m = sample_mean(|g| sample_mask_ratio(TrainingStrategy::new(8.0, 0.25).unwrap(), g));
        assert!((m - 8.0 / 8.25).abs() < 0.01);
        let m = sample_mean(sample_arcsine);
        assert!((m - 2.0 / PI).abs() < 0.01);
    }

    #[test]
    fn extreme_beta_draws_stay_inside_open_interval() {
        let s = TrainingStrategy::new(0.25, 0.25).unwrap();
        let mut g = rng::stream(3, &[]);
        for _ in 0..50_000 {
            let r = sample_mask_ratio(s, &mut g);
            assert!(r > 0.0 && r < 1.0);
        }
    }

    #[test]
    fn mask_ratio_dist_serde() {
        let d: MaskRatioDist = serde_json::from_str(r#"{"kind": "arcsine"}"#).unwrap();
        assert_eq!(d, MaskRatioDist::Arcsine);
        let d: MaskRatioDist = serde_json::from_str(r#"{"kind": "beta", "alpha": 2.0, "beta": 0.5}"#).unwrap();
        assert_eq!(d.as_beta(), Some(TrainingStrategy { alpha: 2.0, beta: 0.5 }));
        assert!(MaskRatioDist::Fixed { ratio: 1.5 }.validate().is_err());
    }
}
