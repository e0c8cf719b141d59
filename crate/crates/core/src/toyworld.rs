//! Synthetic ground truth: a class-conditional first-order Markov chain over
//! token positions.
//!
//! The chain is small enough that every conditional the sampler could ask for
//! is computable exactly by forward-backward message passing, and that the full
//! joint can be enumerated for tiny instances.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Upper bound on `K^N` for anything that enumerates the full support.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthChain {
    pub k: usize,
    pub n: usize,
    pub c: usize,
    pub seed: u64,
    /// Initial distribution per class, `c × k`.
    pub pi: Vec<Vec<f64>>,
    /// Transition matrix per class, `c × k × k`, rows sum to one.
    pub a: Vec<Vec<Vec<f64>>>,
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(Error::Validation(format!("{what} has negative or non-finite entries")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::Validation(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// Symmetric Dirichlet(0.5) draw, squared and renormalized.
fn sharpened_dirichlet<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(0.5, 1.0).expect("valid gamma");
    loop {
        let draw: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let sq: Vec<f64> = draw.iter().map(|g| g * g).collect();
        let total: f64 = sq.iter().sum();
        if total > 0.0 && total.is_finite() {
            return sq.into_iter().map(|v| v / total).collect();
        }
    }
}

/// Builds a random chain. Deterministic in `seed`; each class has its own
/// random stream so classes differ.
pub fn make_chain(k: usize, n: usize, c: usize, seed: u64) -> Result<GroundTruthChain> {
    if k < 2 || n < 2 || c < 1 {
        return Err(Error::InvalidArgument(format!("chain needs K >= 2, N >= 2, C >= 1 (got {k}, {n}, {c})")));
    }
    let mut pi = Vec::with_capacity(c);
    let mut a = Vec::with_capacity(c);
    for class in 0..c {
        let mut g = rng::stream(seed, &[rng::label::CHAIN, class as u64]);
        pi.push(sharpened_dirichlet(k, &mut g));
        a.push((0..k).map(|_| sharpened_dirichlet(k, &mut g)).collect());
    }
    Ok(GroundTruthChain { k, n, c, seed, pi, a })
}

impl GroundTruthChain {
    pub fn from_parts(n: usize, pi: Vec<Vec<f64>>, a: Vec<Vec<Vec<f64>>>, seed: u64) -> Result<Self> {
        let c = pi.len();
        let k = pi.first().map_or(0, Vec::len);
        let chain = GroundTruthChain { k, n, c, seed, pi, a };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.n < 2 || self.c < 1 {
            return Err(Error::Validation("chain needs K >= 2, N >= 2, C >= 1".into()));
        }
        if self.pi.len() != self.c || self.a.len() != self.c {
            return Err(Error::Validation("per-class tables do not match C".into()));
        }
        for (class, (pi, a)) in self.pi.iter().zip(&self.a).enumerate() {
            if pi.len() != self.k || a.len() != self.k || a.iter().any(|row| row.len() != self.k) {
                return Err(Error::Validation(format!("class {class} tables are not K-sized")));
            }
            check_distribution(pi, &format!("pi[{class}]"))?;
            for (i, row) in a.iter().enumerate() {
                check_distribution(row, &format!("A[{class}][{i}]"))?;
            }
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.c {
            return Err(Error::ClassOutOfRange { class, classes: self.c });
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::ShapeMismatch(format!("sequence length {len}, chain length {}", self.n)));
        }
        Ok(())
    }

    fn check_token(&self, token: usize) -> Result<()> {
        if token >= self.k {
            return Err(Error::TokenOutOfRange { token, k: self.k });
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let chain: GroundTruthChain = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        chain.validate()?;
        Ok(chain)
    }
}

/// Probability of a fully observed sequence under class `class`.
pub fn joint_prob(chain: &GroundTruthChain, class: usize, seq: &[Option<usize>]) -> Result<f64> {
    chain.check_class(class)?;
    chain.check_len(seq.len())?;
    let tokens: Vec<usize> = seq.iter().map(|v| v.ok_or(Error::MaskedInput)).collect::<Result<_>>()?;
    joint_prob_full(chain, class, &tokens)
}

pub fn joint_prob_full(chain: &GroundTruthChain, class: usize, seq: &[usize]) -> Result<f64> {
    chain.check_class(class)?;
    chain.check_len(seq.len())?;
    for &v in seq {
        chain.check_token(v)?;
    }
    let a = &chain.a[class];
    Ok(seq.windows(2).fold(chain.pi[class][seq[0]], |p, w| p * a[w[0]][w[1]]))
}

/// Per-position posteriors under one class together with the log-likelihood of
/// the observed tokens.
#[derive(Debug, Clone)]
pub struct Posteriors {
    pub log_likelihood: f64,
    /// `n × k`; observed positions hold a one-hot row.
    pub marginals: Vec<Vec<f64>>,
}

/// Forward-backward over the chain with observed tokens as hard evidence.
pub fn posteriors(chain: &GroundTruthChain, class: usize, partial: &[Option<usize>]) -> Result<Posteriors> {
    chain.check_class(class)?;
    chain.check_len(partial.len())?;
    for v in partial.iter().flatten() {
        chain.check_token(*v)?;
    }
    let (k, n) = (chain.k, chain.n);
    let a = &chain.a[class];
    let evidence = |i: usize, v: usize| match partial[i] {
        Some(obs) if obs != v => 0.0,
        _ => 1.0,
    };

    // Scaled forward messages; the scale factors multiply to the likelihood.
    let mut fwd = vec![vec![0.0; k]; n];
    let mut log_likelihood = 0.0;
    for i in 0..n {
        for v in 0..k {
            let prior = if i == 0 {
                chain.pi[class][v]
            } else {
                (0..k).map(|u| fwd[i - 1][u] * a[u][v]).sum()
            };
            fwd[i][v] = prior * evidence(i, v);
        }
        let z: f64 = fwd[i].iter().sum();
        if z.is_nan() || z <= 0.0 {
            return Err(Error::ZeroLikelihood);
        }
        fwd[i].iter_mut().for_each(|x| *x /= z);
        log_likelihood += z.ln();
    }

    let mut bwd = vec![vec![1.0; k]; n];
    for i in (0..n - 1).rev() {
        for u in 0..k {
            bwd[i][u] = (0..k).map(|v| a[u][v] * evidence(i + 1, v) * bwd[i + 1][v]).sum();
        }
        let z: f64 = bwd[i].iter().sum();
        if z > 0.0 {
            bwd[i].iter_mut().for_each(|x| *x /= z);
        }
    }

    let marginals = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|v| fwd[i][v] * bwd[i][v]).collect();
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= z);
            row
        })
        .collect();
    Ok(Posteriors { log_likelihood, marginals })
}

/// `p(V_i = v | observed tokens, class)` for a masked position `i`.
pub fn exact_conditional(
    chain: &GroundTruthChain,
    class: usize,
    partial: &[Option<usize>],
    i: usize,
) -> Result<Vec<f64>> {
    chain.check_len(partial.len())?;
    match partial.get(i) {
        None => Err(Error::InvalidArgument(format!("position {i} out of range"))),
        Some(Some(_)) => Err(Error::NotMasked(i)),
        Some(None) => Ok(posteriors(chain, class, partial)?.marginals.swap_remove(i)),
    }
}

/// Posteriors when the class itself is unobserved and drawn from `weights`.
pub fn mixture_marginals(chain: &GroundTruthChain, weights: &[f64], partial: &[Option<usize>]) -> Result<Vec<Vec<f64>>> {
    if weights.len() != chain.c {
        return Err(Error::ShapeMismatch(format!("{} class weights for {} classes", weights.len(), chain.c)));
    }
    let per_class: Vec<Option<Posteriors>> = (0..chain.c)
        .map(|c| {
            if weights[c] <= 0.0 {
                return Ok(None);
            }
            match posteriors(chain, c, partial) {
                Ok(p) => Ok(Some(p)),
                Err(Error::ZeroLikelihood) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let log_w: Vec<Option<f64>> = per_class
        .iter()
        .zip(weights)
        .map(|(p, &w)| p.as_ref().map(|p| w.ln() + p.log_likelihood))
        .collect();
    let max = log_w.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::ZeroLikelihood);
    }
    let post_w: Vec<f64> = log_w.iter().map(|l| l.map_or(0.0, |l| (l - max).exp())).collect();
    let z: f64 = post_w.iter().sum();
    let mut out = vec![vec![0.0; chain.k]; chain.n];
    for (p, w) in per_class.iter().zip(&post_w) {
        if let Some(p) = p {
            for (row, prow) in out.iter_mut().zip(&p.marginals) {
                for (o, &q) in row.iter_mut().zip(prow) {
                    *o += w / z * q;
                }
            }
        }
    }
    Ok(out)
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (v, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return v;
        }
    }
    // Rounding left u above the accumulated mass; take the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Ancestral sample of one sequence from class `class`.
pub fn sample_sequence<R: Rng>(chain: &GroundTruthChain, class: usize, rng: &mut R) -> Vec<usize> {
    let mut seq = Vec::with_capacity(chain.n);
    seq.push(sample_categorical(&chain.pi[class], rng));
    for i in 1..chain.n {
        let prev = seq[i - 1];
        seq.push(sample_categorical(&chain.a[class][prev], rng));
    }
    seq
}

/// Draws a class index from mixture weights.
pub fn sample_class<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (c, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return c;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<(usize, Vec<usize>)>,
    pub chain_seed: u64,
    pub sample_seed: u64,
}

/// `per_class` sequences from every class, in class order.
pub fn sample_dataset(chain: &GroundTruthChain, per_class: usize, seed: u64) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one sequence per class".into()));
    }
    let mut items = Vec::with_capacity(per_class * chain.c);
    for class in 0..chain.c {
        let mut g = rng::stream(seed, &[rng::label::DATASET, class as u64]);
        items.extend((0..per_class).map(|_| (class, sample_sequence(chain, class, &mut g))));
    }
    Ok(Dataset { items, chain_seed: chain.seed, sample_seed: seed })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Text form: a seed header followed by one `class token token ...` line per item.
    pub fn to_text(&self) -> String {
        let mut out = format!("# chain_seed={} sample_seed={}\n", self.chain_seed, self.sample_seed);
        for (class, seq) in &self.items {
            let _ = write!(out, "{class}");
            for v in seq {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut chain_seed = 0;
        let mut sample_seed = 0;
        let mut items = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(header) = line.strip_prefix('#') {
                for field in header.split_whitespace() {
                    if let Some(v) = field.strip_prefix("chain_seed=") {
                        chain_seed = v.parse().map_err(|_| Error::Schema(format!("bad chain_seed '{v}'")))?;
                    } else if let Some(v) = field.strip_prefix("sample_seed=") {
                        sample_seed = v.parse().map_err(|_| Error::Schema(format!("bad sample_seed '{v}'")))?;
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let nums: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Schema(format!("bad token '{t}'"))))
                .collect::<Result<_>>()?;
            let (class, seq) = nums.split_first().ok_or_else(|| Error::Schema("empty line".into()))?;
            items.push((*class, seq.to_vec()));
        }
        Ok(Dataset { items, chain_seed, sample_seed })
    }
}

fn support_size(n: usize, k: usize) -> Result<u64> {
    let limit_err = || Error::EnumerationGuard { k, n, limit: ENUMERATION_LIMIT };
    let mut total: u64 = 1;
    for _ in 0..n {
        total = total.checked_mul(k as u64).ok_or_else(limit_err)?;
        if total > ENUMERATION_LIMIT {
            return Err(limit_err());
        }
    }
    Ok(total)
}

/// Lexicographic position of a full sequence among all `K^N` sequences.
pub fn sequence_index(seq: &[usize], k: usize) -> usize {
    seq.iter().fold(0, |acc, &v| acc * k + v)
}

/// Every length-`n` sequence over `k` tokens, in lexicographic order.
pub fn enumerate_sequences(n: usize, k: usize) -> Result<impl Iterator<Item = Vec<usize>>> {
    let total = support_size(n, k)?;
    Ok((0..total).map(move |mut idx| {
        let mut seq = vec![0; n];
        for slot in seq.iter_mut().rev() {
            *slot = (idx % k as u64) as usize;
            idx /= k as u64;
        }
        seq
    }))
}
