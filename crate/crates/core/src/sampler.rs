//! The T-step parallel decoding loop.
//!
//! Each step predicts every masked position (optionally twice, for
//! classifier-free guidance), samples all of them at temperature `tau1`,
//! scores each fresh token by its log-probability, and keeps a subset drawn
//! without replacement from `Softmax(C / tau2)` via Gumbel-Top-k. The rest go
//! back under the mask.
//!
//! Random draws are consumed in a fixed pattern (one uniform per masked
//! position, then one Gumbel per candidate) regardless of `tau2` or the
//! selection policy, so that nearby schedules share their sampling noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{Predictor, PredictorOutput};
use crate::rng::{gumbel, open_unit};
use crate::strategy::{mask_count, GenerationSchedule};

/// How the kept subset of freshly decoded tokens is chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPolicy {
    /// Gumbel-Top-k on confidence scores.
    Confidence,
    /// Keep candidates in the order of a fixed permutation of positions.
    FixedOrder(Vec<usize>),
}

impl SelectionPolicy {
    pub fn validate(&self, n: usize) -> Result<()> {
        if let SelectionPolicy::FixedOrder(perm) = self {
            let mut seen = vec![false; n];
            if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
                return Err(Error::Validation(format!("fixed order is not a permutation of 0..{n}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeState {
    /// Number of completed steps.
    pub step: usize,
    pub tokens: Vec<Option<usize>>,
    /// `(position, confidence)` for every position decoded in the last step,
    /// including the ones that were re-masked.
    pub confidences: Vec<(usize, f64)>,
}

impl DecodeState {
    pub fn all_masked(n: usize) -> Self {
        DecodeState { step: 0, tokens: vec![None; n], confidences: Vec::new() }
    }

    pub fn masked_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.is_none()).count()
    }
}

/// `uncond + s · (cond − uncond)`, returning the inputs verbatim at `s = 1`
/// and `s = 0`.
pub fn apply_guidance(cond: &PredictorOutput, uncond: &PredictorOutput, s: f64) -> Result<PredictorOutput> {
    if cond.n != uncond.n || cond.k != uncond.k {
        return Err(Error::ShapeMismatch(format!(
            "conditional {}x{} vs unconditional {}x{}",
            cond.n, cond.k, uncond.n, uncond.k
        )));
    }
    if s == 1.0 {
        return Ok(cond.clone());
    }
    if s == 0.0 {
        return Ok(uncond.clone());
    }
    let logits = cond.logits.iter().zip(&uncond.logits).map(|(&c, &u)| u + s * (c - u)).collect();
    Ok(PredictorOutput { n: cond.n, k: cond.k, logits })
}

/// Inverse-CDF draw from `softmax(logits / tau1)` using the uniform `u`.
/// Returns the token and its post-temperature probability.
pub fn sample_with_uniform(logits: &[f64], tau1: f64, u: f64) -> Result<(usize, f64)> {
    if tau1.is_nan() || tau1 <= 0.0 {
        return Err(Error::InvalidArgument(format!("tau1 must be > 0, got {tau1}")));
    }
    if logits.is_empty() || logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("logits row".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&l| ((l - max) / tau1).exp()).collect();
    let z: f64 = weights.iter().sum();
    let target = u * z;
    let mut acc = 0.0;
    let mut chosen = None;
    for (v, &w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            chosen = Some(v);
            break;
        }
    }
    let v = chosen.unwrap_or_else(|| weights.iter().rposition(|&w| w > 0.0).expect("max weight is 1"));
    Ok((v, weights[v] / z))
}

pub fn sample_masked<R: Rng + ?Sized>(logits: &[f64], tau1: f64, rng: &mut R) -> Result<(usize, f64)> {
    let u = open_unit(rng);
    sample_with_uniform(logits, tau1, u)
}

/// Log-probabilities of freshly sampled tokens. Only positions masked before
/// the step are scored; already decoded ones never enter the re-masking pool.
pub fn confidences(
    sampled: &[(usize, usize, f64)],
    mask_pattern: &[Option<usize>],
) -> Result<Vec<(usize, f64)>> {
    sampled
        .iter()
        .filter(|(pos, _, _)| mask_pattern.get(*pos).is_some_and(|t| t.is_none()))
        .map(|&(pos, _, p)| {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidArgument(format!("probability {p} at position {pos} is not in (0, 1]")));
            }
            Ok((pos, p.ln()))
        })
        .collect()
}

/// Chooses `keep` of the candidates. `noise` holds one Gumbel draw per
/// candidate; it is only used by the confidence policy with `tau2 > 0`.
pub fn select_kept_with_noise(
    candidates: &[(usize, f64)],
    keep: usize,
    tau2: f64,
    policy: &SelectionPolicy,
    noise: &[f64],
) -> Result<Vec<usize>> {
    if keep > candidates.len() {
        return Err(Error::InvalidArgument(format!("cannot keep {keep} of {} candidates", candidates.len())));
    }
    if tau2.is_nan() || tau2 < 0.0 {
        return Err(Error::InvalidArgument(format!("tau2 must be >= 0, got {tau2}")));
    }
    let mut kept: Vec<usize> = match policy {
        SelectionPolicy::FixedOrder(order) => order
            .iter()
            .filter(|p| candidates.iter().any(|(c, _)| c == *p))
            .take(keep)
            .copied()
            .collect(),
        SelectionPolicy::Confidence => {
            let mut scored: Vec<(usize, f64)> = candidates
                .iter()
                .zip(noise)
                .map(|(&(pos, c), &g)| (pos, if tau2 == 0.0 { c } else { c / tau2 + g }))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored.into_iter().take(keep).map(|(p, _)| p).collect()
        }
    };
    if kept.len() != keep {
        return Err(Error::InvalidArgument("fixed order does not cover the candidates".into()));
    }
    kept.sort_unstable();
    Ok(kept)
}

/// Gumbel-Top-k selection (or fixed-order selection) of `keep` candidates.
/// Returns kept positions in increasing order.
pub fn select_kept<R: Rng + ?Sized>(
    candidates: &[(usize, f64)],
    keep: usize,
    tau2: f64,
    policy: &SelectionPolicy,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let noise: Vec<f64> = candidates.iter().map(|_| gumbel(rng)).collect();
    select_kept_with_noise(candidates, keep, tau2, policy, &noise)
}

/// Runs step `t` (1-based) of the schedule.
pub fn decode_step<P: Predictor + ?Sized, R: Rng + ?Sized>(
    state: &DecodeState,
    predictor: &P,
    sched: &GenerationSchedule,
    t: usize,
    class: Option<usize>,
    policy: &SelectionPolicy,
    rng: &mut R,
) -> Result<DecodeState> {
    let n = state.tokens.len();
    if t == 0 || t > sched.steps {
        return Err(Error::InvalidArgument(format!("step {t} outside 1..={}", sched.steps)));
    }
    let masked: Vec<usize> = (0..n).filter(|&i| state.tokens[i].is_none()).collect();
    let target = mask_count(sched.r[t - 1], n);
    if target > masked.len() {
        return Err(Error::ScheduleMismatch {
            n,
            reason: format!("step {t} asks for {target} masks but only {} remain", masked.len()),
        });
    }
    let s = sched.s[t - 1];
    let logits = if s == 1.0 {
        predictor.predict_masked(&state.tokens, class)?
    } else {
        let cond = predictor.predict_masked(&state.tokens, class)?;
        let uncond = predictor.predict_masked(&state.tokens, None)?;
        apply_guidance(&cond, &uncond, s)?
    };

    let mut sampled = Vec::with_capacity(masked.len());
    for &i in &masked {
        let (token, p) = sample_masked(logits.row(i), sched.tau1[t - 1], rng)?;
        sampled.push((i, token, p));
    }
    let candidates = confidences(&sampled, &state.tokens)?;
    let kept = select_kept(&candidates, masked.len() - target, sched.tau2[t - 1], policy, rng)?;

    let mut tokens = state.tokens.clone();
    for &(i, token, _) in &sampled {
        if kept.binary_search(&i).is_ok() {
            tokens[i] = Some(token);
        }
    }
    Ok(DecodeState { step: t, tokens, confidences: candidates })
}

/// Decodes a full sequence from the all-mask canvas.
pub fn generate<P: Predictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    sched: &GenerationSchedule,
    class: Option<usize>,
    policy: &SelectionPolicy,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = predictor.seq_len();
    sched.validate(Some(n))?;
    policy.validate(n)?;
    let mut state = DecodeState::all_masked(n);
    for t in 1..=sched.steps {
        state = decode_step(&state, predictor, sched, t, class, policy, rng)?;
    }
    state.tokens.into_iter().map(|v| v.ok_or(Error::MaskedInput)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn out(rows: &[&[f64]]) -> PredictorOutput {
        PredictorOutput { n: rows.len(), k: rows[0].len(), logits: rows.iter().flat_map(|r| r.iter().copied()).collect() }
    }

    #[test]
    fn guidance_endpoints_and_arithmetic() {
        let c = out(&[&[1.0, 0.0], &[0.3, -0.7]]);
        let u = out(&[&[0.0, 0.0], &[0.1, 0.2]]);
        assert_eq!(apply_guidance(&c, &u, 1.0).unwrap(), c);
        assert_eq!(apply_guidance(&c, &u, 0.0).unwrap(), u);
        assert_eq!(apply_guidance(&c, &u, 2.0).unwrap().row(0), &[2.0, 0.0]);
        assert!(apply_guidance(&c, &out(&[&[0.0, 0.0]]), 2.0).is_err());
    }

    fn frequencies(logits: &[f64], tau1: f64, draws: usize) -> Vec<f64> {
        let mut g = rng::stream(1, &[]);
        let mut counts = vec![0usize; logits.len()];
        for _ in 0..draws {
            counts[sample_masked(logits, tau1, &mut g).unwrap().0] += 1;
        }
        counts.into_iter().map(|c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn temperature_sampling_frequencies() {
        assert!(frequencies(&[2.0, 1.0, 0.0], 1e-4, 10_000)[0] > 0.999);
        for f in frequencies(&[0.0; 4], 1.0, 100_000) {
            assert!((f - 0.25).abs() < 0.01);
        }
        let f = frequencies(&[2f64.ln(), 0.0], 1.0, 100_000);
        assert!((f[0] - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn sampled_probability_is_post_temperature() {
        let (v, p) = sample_with_uniform(&[2f64.ln(), 0.0], 0.5, 0.1).unwrap();
        assert_eq!(v, 0);
        assert!((p - 0.8).abs() < 1e-12);
        assert!(sample_with_uniform(&[f64::NAN, 0.0], 1.0, 0.5).is_err());
        assert!(sample_with_uniform(&[0.0, 0.0], 0.0, 0.5).is_err());
    }

    #[test]
    fn confidence_values_and_exclusion() {
        let pattern = vec![None, Some(1), None];
        let c = confidences(&[(0, 0, 1.0), (1, 1, 0.5), (2, 0, (-1f64).exp())], &pattern).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0], (0, 0.0));
        assert!((c[1].1 + 1.0).abs() < 1e-15);
        assert!(confidences(&[(0, 0, 0.0)], &pattern).is_err());
    }

    #[test]
    fn deterministic_top_k() {
        let mut g = rng::stream(0, &[]);
        let cands = [(0, 0.9), (1, 0.1), (2, 0.5)];
        assert_eq!(select_kept(&cands, 2, 0.0, &SelectionPolicy::Confidence, &mut g).unwrap(), vec![0, 2]);
        let ties = [(0, 0.5), (1, 0.5), (2, 0.5)];
        assert_eq!(select_kept(&ties, 1, 0.0, &SelectionPolicy::Confidence, &mut g).unwrap(), vec![0]);
        assert!(select_kept(&cands, 4, 0.0, &SelectionPolicy::Confidence, &mut g).is_err());
        let order = SelectionPolicy::FixedOrder(vec![2, 1, 0]);
        assert_eq!(select_kept(&cands, 2, 1.0, &order, &mut g).unwrap(), vec![1, 2]);
    }

    #[test]
    fn gumbel_top_one_matches_softmax() {
        let mut g = rng::stream(2, &[]);
        let cands = [(0, 2f64.ln()), (1, 0.0)];
        let draws = 200_000;
        let hits = (0..draws)
            .filter(|_| select_kept(&cands, 1, 1.0, &SelectionPolicy::Confidence, &mut g).unwrap() == vec![0])
            .count();
        assert!((hits as f64 / draws as f64 - 2.0 / 3.0).abs() < 0.005);
    }

    #[test]
    fn fixed_order_must_be_permutation() {
        assert!(SelectionPolicy::FixedOrder(vec![0, 2, 1]).validate(3).is_ok());
        assert!(SelectionPolicy::FixedOrder(vec![0, 0, 1]).validate(3).is_err());
        assert!(SelectionPolicy::FixedOrder(vec![0, 1]).validate(3).is_err());
    }
}
