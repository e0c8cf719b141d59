//! Quality functional F: exact total variation on enumerable instances and a
//! Fréchet distance between Gaussian fits of unigram and bigram count features.
//! Lower is better for both.

use std::path::Path;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::Predictor;
use crate::rng;
use crate::sampler::{generate, SelectionPolicy};
use crate::strategy::GenerationSchedule;
use crate::toyworld::{enumerate_sequences, joint_prob_full, sample_class, sample_sequence, sequence_index, GroundTruthChain};

/// Eigenvalues below this (relative to the spectrum's scale) indicate a
/// covariance that is not positive semidefinite beyond rounding noise.
const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    ExactTv,
    TokenFrechet,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::ExactTv => "exact-tv",
            MetricKind::TokenFrechet => "token-frechet",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-tv" => Ok(MetricKind::ExactTv),
            "token-frechet" => Ok(MetricKind::TokenFrechet),
            other => Err(Error::InvalidArgument(format!("unknown metric '{other}'"))),
        }
    }
}

/// Frozen description of one F evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    pub metric: MetricKind,
    pub samples: usize,
    #[serde(skip)]
    pub base_seed: u64,
    /// Class mixture for generation and for the reference; uniform when unset.
    pub class_weights: Option<Vec<f64>>,
    pub reference_size: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec { metric: MetricKind::TokenFrechet, samples: 10_000, base_seed: 0, class_weights: None, reference_size: 10_000 }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 100 {
            return Err(Error::Validation(format!("samples per evaluation must be >= 100, got {}", self.samples)));
        }
        if self.metric == MetricKind::TokenFrechet && self.reference_size < 2 {
            return Err(Error::Validation(format!("token-frechet needs a reference set of >= 2, got {}", self.reference_size)));
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|&x| !x.is_finite() || x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Validation("class weights must be nonnegative with positive sum".into()));
            }
        }
        Ok(())
    }

    pub fn weights(&self, classes: usize) -> Result<Vec<f64>> {
        match &self.class_weights {
            Some(w) if w.len() != classes => {
                Err(Error::Validation(format!("{} class weights for {classes} classes", w.len())))
            }
            Some(w) => {
                let total: f64 = w.iter().sum();
                Ok(w.iter().map(|x| x / total).collect())
            }
            None => Ok(vec![1.0 / classes as f64; classes]),
        }
    }

    /// Seed of the reference set; recorded separately from the sample seeds.
    pub fn reference_seed(&self) -> u64 {
        rng::derive_seed(self.base_seed, &[rng::label::REFERENCE])
    }

    /// Seed of the `i`-th generated sample.
    pub fn sample_seed(&self, i: usize) -> u64 {
        rng::derive_seed(self.base_seed, &[rng::label::EVAL, i as u64])
    }
}

/// `½ Σ |empirical − true|` over the full support, with the true
/// distribution marginalized over the class mixture.
pub fn exact_tv(generated: &[Vec<usize>], chain: &GroundTruthChain, class_weights: &[f64]) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::InvalidArgument("no generated sequences".into()));
    }
    if class_weights.len() != chain.c {
        return Err(Error::ShapeMismatch(format!("{} weights for {} classes", class_weights.len(), chain.c)));
    }
    let support = enumerate_sequences(chain.n, chain.k)?;
    let mut counts = vec![0usize; chain.k.pow(chain.n as u32)];
    for seq in generated {
        if seq.len() != chain.n {
            return Err(Error::ShapeMismatch(format!("sequence length {} vs {}", seq.len(), chain.n)));
        }
        if let Some(&token) = seq.iter().find(|&&v| v >= chain.k) {
            return Err(Error::TokenOutOfRange { token, k: chain.k });
        }
        counts[sequence_index(seq, chain.k)] += 1;
    }
    let total = generated.len() as f64;
    let mut tv = 0.0;
    for (idx, seq) in support.enumerate() {
        let truth: f64 = (0..chain.c)
            .map(|c| joint_prob_full(chain, c, &seq).map(|p| class_weights[c] * p))
            .sum::<Result<f64>>()?;
        tv += (counts[idx] as f64 / total - truth).abs();
    }
    Ok((0.5 * tv).clamp(0.0, 1.0))
}

/// Mean and covariance of the unigram+bigram count features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Unigram counts (`k` entries) followed by adjacent-bigram counts (`k²`).
pub fn features(seq: &[usize], k: usize) -> Vec<f64> {
    let mut f = vec![0.0; k + k * k];
    for &v in seq {
        f[v] += 1.0;
    }
    for w in seq.windows(2) {
        f[k + w[0] * k + w[1]] += 1.0;
    }
    f
}

/// Sample mean and unbiased sample covariance of the feature vectors.
pub fn fit_stats(seqs: &[Vec<usize>], k: usize) -> Result<FeatureStats> {
    if seqs.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 sequences, got {}", seqs.len())));
    }
    if let Some(&token) = seqs.iter().flatten().find(|&&v| v >= k) {
        return Err(Error::TokenOutOfRange { token, k });
    }
    let dim = k + k * k;
    let m = seqs.len() as f64;
    let feats: Vec<Vec<f64>> = seqs.iter().map(|s| features(s, k)).collect();
    let mut mean = DVector::zeros(dim);
    for f in &feats {
        for (acc, &x) in mean.iter_mut().zip(f) {
            *acc += x;
        }
    }
    mean /= m;
    let mut cov = DMatrix::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for f in &feats {
        for ((c, &x), &mu) in centered.iter_mut().zip(f).zip(mean.iter()) {
            *c = x - mu;
        }
        for a in 0..dim {
            if centered[a] == 0.0 {
                continue;
            }
            for b in a..dim {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let v = cov[(a, b)] / (m - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(FeatureStats { mean, cov })
}

/// Eigen-decomposes a symmetric matrix and clips rounding-level negative
/// eigenvalues to zero; larger negative eigenvalues are an error.
fn clipped_eigen(m: DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let mut values = eig.eigenvalues;
    for v in values.iter_mut() {
        if *v < -PSD_TOLERANCE * scale {
            return Err(Error::NotPsd(*v));
        }
        *v = v.max(0.0);
    }
    Ok((values, eig.eigenvectors))
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = clipped_eigen(m.clone())?;
    let root = DMatrix::from_diagonal(&values.map(f64::sqrt));
    Ok(&vectors * root * vectors.transpose())
}

/// Squared 2-Wasserstein distance between the Gaussian fits:
/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    let dim = a.mean.len();
    if b.mean.len() != dim || a.cov.shape() != (dim, dim) || b.cov.shape() != (dim, dim) {
        return Err(Error::ShapeMismatch(format!("feature dimensions {} and {}", dim, b.mean.len())));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let root_a = psd_sqrt(&a.cov)?;
    let inner = &root_a * &b.cov * &root_a;
    let (values, _) = clipped_eigen(inner)?;
    let cross: f64 = values.iter().map(|v| v.sqrt()).sum();
    let d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// A frozen F: fixed chain, spec, per-sample seeds and (for token-frechet) a
/// reference set drawn once from the chain.
#[derive(Debug)]
pub struct Evaluator {
    chain: GroundTruthChain,
    spec: EvalSpec,
    weights: Vec<f64>,
    reference: Option<FeatureStats>,
    seed_log: Option<Mutex<Vec<Vec<u64>>>>,
}

impl Evaluator {
    pub fn new(chain: GroundTruthChain, spec: EvalSpec) -> Result<Self> {
        spec.validate()?;
        let weights = spec.weights(chain.c)?;
        let reference = match spec.metric {
            MetricKind::ExactTv => {
                let _ = enumerate_sequences(chain.n, chain.k)?;
                None
            }
            MetricKind::TokenFrechet => {
                let seqs = reference_sequences(&chain, &weights, spec.reference_size, spec.reference_seed());
                Some(fit_stats(&seqs, chain.k)?)
            }
        };
        Ok(Evaluator { chain, spec, weights, reference, seed_log: None })
    }

    /// Records the per-sample seeds of every evaluation for inspection.
    pub fn with_seed_log(mut self) -> Self {
        self.seed_log = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn seed_log(&self) -> Vec<Vec<u64>> {
        self.seed_log.as_ref().map(|l| l.lock().expect("seed log").clone()).unwrap_or_default()
    }

    pub fn spec(&self) -> &EvalSpec {
        &self.spec
    }

    pub fn chain(&self) -> &GroundTruthChain {
        &self.chain
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.weights
    }

    /// `spec.samples` generated sequences; sample `i` draws its class and all
    /// decoding noise from its own stream, so the result is independent of
    /// worker count.
    pub fn generate_samples<P: Predictor + ?Sized>(
        &self,
        predictor: &P,
        sched: &GenerationSchedule,
        policy: &SelectionPolicy,
    ) -> Result<Vec<(usize, Vec<usize>)>> {
        let seeds: Vec<u64> = (0..self.spec.samples).map(|i| self.spec.sample_seed(i)).collect();
        if let Some(log) = &self.seed_log {
            log.lock().expect("seed log").push(seeds.clone());
        }
        seeds
            .par_iter()
            .map(|&seed| {
                let mut g = rng::StreamRng::seed_from_u64(seed);
                let class = sample_class(&self.weights, &mut g);
                let seq = generate(predictor, sched, Some(class), policy, &mut g)?;
                Ok((class, seq))
            })
            .collect()
    }

    pub fn score(&self, generated: &[Vec<usize>]) -> Result<f64> {
        match self.spec.metric {
            MetricKind::ExactTv => exact_tv(generated, &self.chain, &self.weights),
            MetricKind::TokenFrechet => {
                let stats = fit_stats(generated, self.chain.k)?;
                frechet_distance(&stats, self.reference.as_ref().expect("reference fitted"))
            }
        }
    }

    pub fn evaluate<P: Predictor + ?Sized>(
        &self,
        predictor: &P,
        sched: &GenerationSchedule,
        policy: &SelectionPolicy,
    ) -> Result<f64> {
        let samples = self.generate_samples(predictor, sched, policy)?;
        let seqs: Vec<Vec<usize>> = samples.into_iter().map(|(_, s)| s).collect();
        self.score(&seqs)
    }
}

/// Reference sequences drawn from the chain under the class mixture.
pub fn reference_sequences(chain: &GroundTruthChain, weights: &[f64], size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut g = rng::StreamRng::seed_from_u64(seed);
    (0..size)
        .map(|_| {
            let class = sample_class(weights, &mut g);
            sample_sequence(chain, class, &mut g)
        })
        .collect()
}

/// Appends one metric row (run id, metric kind, F, samples, seed), writing the
/// header when the file is new.
pub fn append_metric_row(path: &Path, run_id: &str, kind: MetricKind, value: f64, samples: usize, seed: u64) -> Result<()> {
    let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if !exists {
        w.write_record(["run_id", "metric", "f_value", "samples", "seed"])?;
    }
    w.write_record([run_id.to_string(), kind.name().to_string(), format!("{value:.12}"), samples.to_string(), seed.to_string()])?;
    w.flush()?;
    Ok(())
}
