//! Token predictors: the contract used by the sampler, the exact oracle backed
//! by the ground-truth chain, and a small windowed MLP trained by masked token
//! modeling with hand-derived gradients.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::strategy::{mask_count, MaskRatioDist};
use crate::toyworld::{mixture_marginals, posteriors, Dataset, GroundTruthChain};

/// Logits floor for zero-probability tokens in the oracle.
const MIN_PROB: f64 = 1e-300;

/// Row-major `n × k` matrix of unnormalized log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    pub n: usize,
    pub k: usize,
    pub logits: Vec<f64>,
}

impl PredictorOutput {
    pub fn zeros(n: usize, k: usize) -> Self {
        PredictorOutput { n, k, logits: vec![0.0; n * k] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.k..(i + 1) * self.k]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.logits[i * self.k..(i + 1) * self.k]
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = row.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// Anything that maps a partially masked sequence and an optional class
/// (`None` is the null class used for guidance) to per-position logits.
pub trait Predictor: Sync {
    fn seq_len(&self) -> usize;
    fn codebook_size(&self) -> usize;
    fn num_classes(&self) -> usize;

    /// Logits for every position.
    fn predict(&self, partial: &[Option<usize>], class: Option<usize>) -> Result<PredictorOutput>;

    /// Logits that are only required to be meaningful at masked positions.
    fn predict_masked(&self, partial: &[Option<usize>], class: Option<usize>) -> Result<PredictorOutput> {
        self.predict(partial, class)
    }

    fn check_input(&self, partial: &[Option<usize>], class: Option<usize>) -> Result<()> {
        if partial.len() != self.seq_len() {
            return Err(Error::ShapeMismatch(format!(
                "sequence length {} but predictor expects {}",
                partial.len(),
                self.seq_len()
            )));
        }
        let k = self.codebook_size();
        if let Some(&token) = partial.iter().flatten().find(|&&v| v >= k) {
            return Err(Error::TokenOutOfRange { token, k });
        }
        if let Some(c) = class {
            if c >= self.num_classes() {
                return Err(Error::ClassOutOfRange { class: c, classes: self.num_classes() });
            }
        }
        Ok(())
    }
}

/// Exact conditionals of the ground-truth chain, as log-probabilities.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    chain: GroundTruthChain,
    class_weights: Vec<f64>,
}

impl OraclePredictor {
    /// The null class marginalizes over classes with uniform weights.
    pub fn new(chain: GroundTruthChain) -> Self {
        let c = chain.c;
        OraclePredictor { chain, class_weights: vec![1.0 / c as f64; c] }
    }

    pub fn with_class_weights(chain: GroundTruthChain, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != chain.c || weights.iter().any(|&w| w.is_nan() || w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Validation("class weights must be nonnegative with positive sum".into()));
        }
        Ok(OraclePredictor { chain, class_weights: weights })
    }

    pub fn chain(&self) -> &GroundTruthChain {
        &self.chain
    }
}

impl Predictor for OraclePredictor {
    fn seq_len(&self) -> usize {
        self.chain.n
    }

    fn codebook_size(&self) -> usize {
        self.chain.k
    }

    fn num_classes(&self) -> usize {
        self.chain.c
    }

    fn predict(&self, partial: &[Option<usize>], class: Option<usize>) -> Result<PredictorOutput> {
        self.check_input(partial, class)?;
        let marginals = match class {
            Some(c) => posteriors(&self.chain, c, partial)?.marginals,
            None => mixture_marginals(&self.chain, &self.class_weights, partial)?,
        };
        let logits = marginals.into_iter().flatten().map(|p| p.max(MIN_PROB).ln()).collect();
        Ok(PredictorOutput { n: self.chain.n, k: self.chain.k, logits })
    }
}

/// Shape of a [`TrainableModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Codebook size.
    pub k: usize,
    /// Sequence length.
    pub n: usize,
    /// Number of real classes; the null class is row `c`.
    pub c: usize,
    /// Embedding width.
    pub d: usize,
    /// Hidden width.
    pub h: usize,
    /// Window radius.
    pub w: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.n < 1 || self.c < 1 || self.d < 1 || self.h < 1 {
            return Err(Error::Validation(format!("invalid model dimensions {self:?}")));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        (2 * self.w + 1) * self.d + 2 * self.d
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |len: usize| {
            let start = at;
            at += len;
            start
        };
        let tok = take((self.k + 1) * self.d);
        let cls = take((self.c + 1) * self.d);
        let pos = take(self.n * self.d);
        let w1 = take(self.h * self.input_width());
        let b1 = take(self.h);
        let w2 = take(self.k * self.h);
        let b2 = take(self.k);
        Layout { tok, cls, pos, w1, b1, w2, b2, total: at }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    tok: usize,
    cls: usize,
    pos: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

/// Windowed two-layer perceptron.
///
/// The input at position `i` is the concatenation of the token embeddings at
/// `i − w ..= i + w` (zero outside the sequence, row `K` for masks), the class
/// embedding (row `C` for the null class) and the position embedding. All
/// parameters live in one flat vector so gradients share its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainableModel {
    pub dims: ModelDims,
    pub params: Vec<f64>,
}

struct RowCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl TrainableModel {
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let l = dims.layout();
        let mut params = vec![0.0; l.total];
        let mut g = rng::stream(seed, &[rng::label::MODEL_INIT]);
        let mut fill = |range: std::ops::Range<usize>, std: f64| {
            let normal = Normal::new(0.0, std).expect("valid std");
            for p in &mut params[range] {
                *p = normal.sample(&mut g);
            }
        };
        fill(l.tok..l.w1, 0.5);
        fill(l.w1..l.b1, 1.0 / (dims.input_width() as f64).sqrt());
        fill(l.w2..l.b2, 1.0 / (dims.h as f64).sqrt());
        Ok(TrainableModel { dims, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn build_input(&self, l: &Layout, partial: &[Option<usize>], class: Option<usize>, i: usize) -> Vec<f64> {
        let ModelDims { k, n, c, d, w, .. } = self.dims;
        let mut x = vec![0.0; self.dims.input_width()];
        for (slot, offset) in (0..=2 * w).enumerate() {
            let j = i as isize + offset as isize - w as isize;
            if j < 0 || j >= n as isize {
                continue;
            }
            let token = partial[j as usize].unwrap_or(k);
            let src = l.tok + token * d;
            x[slot * d..(slot + 1) * d].copy_from_slice(&self.params[src..src + d]);
        }
        let base = (2 * w + 1) * d;
        let cls = l.cls + class.unwrap_or(c) * d;
        x[base..base + d].copy_from_slice(&self.params[cls..cls + d]);
        let pos = l.pos + i * d;
        x[base + d..base + 2 * d].copy_from_slice(&self.params[pos..pos + d]);
        x
    }

    fn forward_row(&self, l: &Layout, partial: &[Option<usize>], class: Option<usize>, i: usize) -> RowCache {
        let ModelDims { k, h, .. } = self.dims;
        let width = self.dims.input_width();
        let input = self.build_input(l, partial, class, i);
        let hidden: Vec<f64> = (0..h)
            .map(|j| {
                let w = &self.params[l.w1 + j * width..l.w1 + (j + 1) * width];
                let pre = self.params[l.b1 + j] + w.iter().zip(&input).map(|(a, b)| a * b).sum::<f64>();
                pre.tanh()
            })
            .collect();
        let logits = (0..k)
            .map(|v| {
                let w = &self.params[l.w2 + v * h..l.w2 + (v + 1) * h];
                self.params[l.b2 + v] + w.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        RowCache { input, hidden, logits }
    }

    fn predict_rows(&self, partial: &[Option<usize>], class: Option<usize>, only_masked: bool) -> Result<PredictorOutput> {
        self.check_input(partial, class)?;
        let l = self.dims.layout();
        let mut out = PredictorOutput::zeros(self.dims.n, self.dims.k);
        for i in 0..self.dims.n {
            if only_masked && partial[i].is_some() {
                continue;
            }
            let row = self.forward_row(&l, partial, class, i);
            out.row_mut(i).copy_from_slice(&row.logits);
        }
        Ok(out)
    }

    /// Adds `scale ·` (gradient of the summed cross-entropy over `positions`)
    /// into `grad` and returns the summed loss.
    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &self,
        l: &Layout,
        partial: &[Option<usize>],
        positions: &[usize],
        targets: &[usize],
        class: Option<usize>,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let ModelDims { k, c, d, h, w, .. } = self.dims;
        let n = self.dims.n;
        let width = self.dims.input_width();
        let mut loss = 0.0;
        let mut d_hidden = vec![0.0; h];
        let mut d_input = vec![0.0; width];
        for &i in positions {
            let row = self.forward_row(l, partial, class, i);
            let probs = softmax(&row.logits);
            let target = targets[i];
            loss -= probs[target].max(f64::MIN_POSITIVE).ln();

            d_hidden.iter_mut().for_each(|x| *x = 0.0);
            for v in 0..k {
                let dl = scale * (probs[v] - if v == target { 1.0 } else { 0.0 });
                grad[l.b2 + v] += dl;
                let w2 = l.w2 + v * h;
                for j in 0..h {
                    grad[w2 + j] += dl * row.hidden[j];
                    d_hidden[j] += dl * self.params[w2 + j];
                }
            }
            d_input.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..h {
                let dpre = d_hidden[j] * (1.0 - row.hidden[j] * row.hidden[j]);
                grad[l.b1 + j] += dpre;
                let w1 = l.w1 + j * width;
                for (q, &xq) in row.input.iter().enumerate() {
                    grad[w1 + q] += dpre * xq;
                    d_input[q] += dpre * self.params[w1 + q];
                }
            }
            for slot in 0..=2 * w {
                let jpos = i as isize + slot as isize - w as isize;
                if jpos < 0 || jpos >= n as isize {
                    continue;
                }
                let token = partial[jpos as usize].unwrap_or(k);
                let dst = l.tok + token * d;
                for q in 0..d {
                    grad[dst + q] += d_input[slot * d + q];
                }
            }
            let base = (2 * w + 1) * d;
            let cls = l.cls + class.unwrap_or(c) * d;
            let pos = l.pos + i * d;
            for q in 0..d {
                grad[cls + q] += d_input[base + q];
                grad[pos + q] += d_input[base + d + q];
            }
        }
        loss
    }

    /// Writes the versioned binary checkpoint: magic, version, the six
    /// dimensions and the parameter vector, all little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let ModelDims { k, n, c, d, h, w } = self.dims;
        for v in [k, n, c, d, h, w, self.params.len()] {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut read_u64 = || -> Result<usize> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b) as usize)
        };
        let dims = ModelDims { k: read_u64()?, n: read_u64()?, c: read_u64()?, d: read_u64()?, h: read_u64()?, w: read_u64()? };
        let count = read_u64()?;
        dims.validate()?;
        if count != dims.param_count() {
            return Err(Error::Checkpoint(format!("{count} parameters but header implies {}", dims.param_count())));
        }
        let mut params = Vec::with_capacity(count);
        let mut b = [0u8; 8];
        for _ in 0..count {
            input.read_exact(&mut b)?;
            params.push(f64::from_le_bytes(b));
        }
        Ok(TrainableModel { dims, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Loads a checkpoint and, when `expected` is given, rejects one whose
    /// header disagrees with it.
    pub fn load(path: &Path, expected: Option<ModelDims>) -> Result<Self> {
        let model = Self::read_checkpoint(std::fs::File::open(path)?)?;
        if let Some(e) = expected {
            if e != model.dims {
                return Err(Error::Checkpoint(format!("header {:?} does not match config {:?}", model.dims, e)));
            }
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"NSCHEDCK";
const CHECKPOINT_VERSION: u32 = 1;

impl Predictor for TrainableModel {
    fn seq_len(&self) -> usize {
        self.dims.n
    }

    fn codebook_size(&self) -> usize {
        self.dims.k
    }

    fn num_classes(&self) -> usize {
        self.dims.c
    }

    fn predict(&self, partial: &[Option<usize>], class: Option<usize>) -> Result<PredictorOutput> {
        self.predict_rows(partial, class, false)
    }

    fn predict_masked(&self, partial: &[Option<usize>], class: Option<usize>) -> Result<PredictorOutput> {
        self.predict_rows(partial, class, true)
    }
}

/// Masks `max(1, ⌈r·N⌉)` positions chosen uniformly without replacement.
/// Returns the masked sequence and the sorted masked positions.
pub fn mask_for_training<R: Rng + ?Sized>(seq: &[usize], r: f64, rng: &mut R) -> (Vec<Option<usize>>, Vec<usize>) {
    let n = seq.len();
    let count = mask_count(r.clamp(0.0, 1.0), n).clamp(1, n);
    let mut positions = index::sample(rng, n, count).into_vec();
    positions.sort_unstable();
    let mut masked: Vec<Option<usize>> = seq.iter().map(|&v| Some(v)).collect();
    for &i in &positions {
        masked[i] = None;
    }
    (masked, positions)
}

/// Mean cross-entropy over the masked positions and its gradient with respect
/// to every parameter.
pub fn loss_and_grad(
    model: &TrainableModel,
    masked: &[Option<usize>],
    mask_set: &[usize],
    targets: &[usize],
    class: Option<usize>,
) -> Result<(f64, Vec<f64>)> {
    if mask_set.is_empty() {
        return Err(Error::InvalidArgument("mask set is empty".into()));
    }
    model.check_input(masked, class)?;
    if targets.len() != masked.len() {
        return Err(Error::ShapeMismatch("targets and sequence differ in length".into()));
    }
    if let Some(&token) = targets.iter().find(|&&v| v >= model.dims.k) {
        return Err(Error::TokenOutOfRange { token, k: model.dims.k });
    }
    if let Some(&i) = mask_set.iter().find(|&&i| i >= masked.len() || masked[i].is_some()) {
        return Err(Error::NotMasked(i));
    }
    let l = model.dims.layout();
    let mut grad = vec![0.0; l.total];
    let scale = 1.0 / mask_set.len() as f64;
    let loss = model.accumulate(&l, masked, mask_set, targets, class, scale, &mut grad);
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of replacing the class label with the null class.
    pub null_class_prob: f64,
    /// Number of steps averaged into one loss-log entry.
    pub log_every: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 20_000, batch_size: 4, learning_rate: 0.05, null_class_prob: 0.1, log_every: 100, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 || self.batch_size < 1 || self.log_every < 1 {
            return Err(Error::Validation("steps, batch_size and log_every must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.null_class_prob) {
            return Err(Error::Validation(format!("null-class probability {} outside [0, 1]", self.null_class_prob)));
        }
        Ok(())
    }
}

/// Mean training loss over consecutive windows of steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<(usize, f64)>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "mean_loss"])?;
        for (step, loss) in &self.entries {
            w.write_record([step.to_string(), format!("{loss:.10}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Plain minibatch SGD on masked token modeling.
///
/// Each step draws, per example, a dataset index, a mask ratio from `dist`,
/// a mask pattern and a null-class coin, all from per-step random streams, so
/// runs with different mask-ratio distributions share their data order.
pub fn train(
    mut model: TrainableModel,
    dataset: &Dataset,
    dist: &MaskRatioDist,
    cfg: &TrainConfig,
) -> Result<(TrainableModel, TrainLog)> {
    cfg.validate()?;
    dist.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let l = model.dims.layout();
    let mut grad = vec![0.0; l.total];
    let mut log = TrainLog::default();
    let mut window_loss = 0.0;
    let mut window_len = 0;
    for step in 0..cfg.steps {
        let mut g = rng::stream(cfg.seed, &[rng::label::TRAIN, step as u64]);
        let mut ratio_rng = rng::stream(cfg.seed, &[rng::label::MASK_RATIO, step as u64]);
        grad.iter_mut().for_each(|x| *x = 0.0);
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let (class, seq) = &dataset.items[g.gen_range(0..dataset.len())];
            let r = dist.sample(&mut ratio_rng);
            let (masked, positions) = mask_for_training(seq, r, &mut g);
            let class = if g.gen::<f64>() < cfg.null_class_prob { None } else { Some(*class) };
            let scale = 1.0 / (positions.len() * cfg.batch_size) as f64;
            batch_loss += model.accumulate(&l, &masked, &positions, seq, class, scale, &mut grad) / positions.len() as f64;
        }
        for (p, gr) in model.params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * gr;
        }
        window_loss += batch_loss / cfg.batch_size as f64;
        window_len += 1;
        if window_len == cfg.log_every || step + 1 == cfg.steps {
            log.entries.push((step + 1, window_loss / window_len as f64));
            window_loss = 0.0;
            window_len = 0;
        }
    }
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("model parameters after training".into()));
    }
    Ok((model, log))
}
