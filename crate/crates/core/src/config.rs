//! Run configuration: one JSON document covering every component.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalSpec;
use crate::optimizer::{AutoNatConfig, GenOptConfig, LineSearchConfig, OptimizerConfigs};
use crate::predictor::{ModelDims, TrainConfig};
use crate::rng::{derive_seed, label};
use crate::sampler::SelectionPolicy;
use crate::strategy::{HeuristicParams, MaskRatioDist};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyWorldConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub chain_seed: u64,
    /// Training sequences sampled per class.
    pub per_class: usize,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        ToyWorldConfig { k: 8, n: 16, c: 4, chain_seed: 0, per_class: 2500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub w: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d: 16, h: 64, w: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub toyworld: ToyWorldConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSpec,
    /// Number of decoding steps T.
    pub steps: usize,
    pub policy: SelectionPolicy,
    pub heuristic: HeuristicParams,
    /// Mask-ratio distribution of the baseline model.
    pub baseline_dist: MaskRatioDist,
    pub gen_opt: GenOptConfig,
    pub line_search: LineSearchConfig,
    pub autonat: AutoNatConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            toyworld: ToyWorldConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSpec::default(),
            steps: 4,
            policy: SelectionPolicy::Confidence,
            heuristic: HeuristicParams::default(),
            baseline_dist: MaskRatioDist::Arcsine,
            gen_opt: GenOptConfig::default(),
            line_search: LineSearchConfig::default(),
            autonat: AutoNatConfig::default(),
            output_dir: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims { k: self.toyworld.k, n: self.toyworld.n, c: self.toyworld.c, d: self.model.d, h: self.model.h, w: self.model.w }
    }

    /// Every component invariant, reported as a configuration error.
    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>| r.map_err(|e| Error::Config(e.to_string()));
        let t = &self.toyworld;
        if t.k < 2 || t.n < 1 || t.c < 1 || t.per_class < 1 {
            return Err(Error::Config("toyworld needs K >= 2, N >= 1, C >= 1, per_class >= 1".into()));
        }
        if self.steps == 0 || self.steps > t.n {
            return Err(Error::Config(format!("steps must be in 1..={}, got {}", t.n, self.steps)));
        }
        wrap(self.dims().validate())?;
        wrap(self.train.validate())?;
        wrap(self.eval.validate())?;
        wrap(self.eval.weights(t.c).map(|_| ()))?;
        wrap(self.policy.validate(t.n))?;
        wrap(self.heuristic.validate())?;
        wrap(self.baseline_dist.validate())?;
        wrap(self.optimizer_configs().validate())?;
        Ok(())
    }

    pub fn optimizer_configs(&self) -> OptimizerConfigs {
        OptimizerConfigs { gen_opt: self.gen_opt.clone(), line_search: self.line_search.clone(), autonat: self.autonat.clone() }
    }

    pub fn seeds(&self) -> ComponentSeeds {
        ComponentSeeds {
            global: self.seed,
            chain: self.toyworld.chain_seed,
            dataset: derive_seed(self.seed, &[label::DATASET]),
            model_init: derive_seed(self.seed, &[label::MODEL_INIT]),
            train: derive_seed(self.seed, &[label::TRAIN]),
            eval: derive_seed(self.seed, &[label::EVAL]),
            generate: derive_seed(self.seed, &[label::GENERATE]),
        }
    }

    /// Training config with its seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seeds().train, ..self.train.clone() }
    }

    /// Evaluation spec with its base seed filled in.
    pub fn eval_spec(&self) -> EvalSpec {
        EvalSpec { base_seed: self.seeds().eval, ..self.eval.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSeeds {
    pub global: u64,
    pub chain: u64,
    pub dataset: u64,
    pub model_init: u64,
    pub train: u64,
    pub eval: u64,
    pub generate: u64,
}

impl ComponentSeeds {
    pub fn as_map(&self) -> BTreeMap<String, u64> {
        [
            ("global", self.global),
            ("chain", self.chain),
            ("dataset", self.dataset),
            ("model_init", self.model_init),
            ("train", self.train),
            ("eval", self.eval),
            ("generate", self.generate),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"steps": 8, "toyworld": {"K": 4}}"#).unwrap();
        assert_eq!(cfg.steps, 8);
        assert_eq!(cfg.toyworld.k, 4);
        assert_eq!(cfg.toyworld.n, 16);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            r#"{"baseline_dist": {"kind": "beta", "alpha": 0.0, "beta": 1.0}}"#,
            r#"{"steps": 17}"#,
            r#"{"eval": {"samples": 10}}"#,
            r#"{"unknown_field": 1}"#,
            r#"{"line_search": {"grid": []}}"#,
        ] {
            let err = RunConfig::from_json(text).unwrap_err();
            assert!(err.is_config_error(), "{text}: {err}");
        }
    }

    #[test]
    fn component_seeds_differ() {
        let s = RunConfig::default().seeds();
        let m = s.as_map();
        let mut derived: Vec<u64> = vec![s.dataset, s.model_init, s.train, s.eval, s.generate];
        derived.sort_unstable();
        derived.dedup();
        assert_eq!(derived.len(), 5);
        assert_eq!(m.len(), 7);
    }
}
