//! Experiment configuration: a TOML document covering every stage.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::{BonConfig, RlConfig};
use crate::diagnostics::JudgeConfig;
use crate::ensemble::{Aggregator, EnsembleKind};
use crate::env::UniverseConfig;
use crate::error::{Error, Result};
use crate::reward::{RmKind, TrainConfig, MIN_REFERENCE};
use crate::rng::SeedBundle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Labelled pairs generated per replicate before splitting.
    pub preference_pairs: usize,
    /// Fractions for (RM training, policy prompts, validation).
    pub split: [f64; 3],
    /// Independent pairs for heldout RM accuracy.
    pub heldout_pairs: usize,
    pub eval_prompts: usize,
    pub rm_kind: RmKind,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            preference_pairs: 5000,
            split: [0.45, 0.45, 0.10],
            heldout_pairs: 1000,
            eval_prompts: 200,
            rm_kind: RmKind::Pairwise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub pretrain_seeds: Vec<u64>,
    pub finetune_seeds: Vec<u64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            pretrain_seeds: vec![1, 2, 3, 4, 5],
            finetune_seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

/// An ensemble listed member by member, as (pretrain, finetune) cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomEnsemble {
    pub name: String,
    pub kind: EnsembleKind,
    pub aggregator: Aggregator,
    pub members: Vec<[u64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Standard ensembles built from the grid. The finetune ensemble uses
    /// every finetune seed at `seeds.pretrain_seed`; the pretrain ensemble
    /// uses every pretrain seed at `seeds.finetune_seed`.
    pub kinds: Vec<EnsembleKind>,
    pub bon_aggregators: Vec<Aggregator>,
    pub rl_aggregators: Vec<Aggregator>,
    pub rl: bool,
    pub custom: Vec<CustomEnsemble>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kinds: vec![EnsembleKind::Finetune, EnsembleKind::Pretrain],
            bon_aggregators: Aggregator::ALL.to_vec(),
            rl_aggregators: vec![Aggregator::Mean, Aggregator::Median, Aggregator::MeanMinusStd],
            rl: true,
            custom: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum WinRateJudge {
    Gold,
    Majority(JudgeConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Samples per prompt for the rank-correlation trace.
    pub correlation_k: usize,
    pub judge: WinRateJudge,
    pub permutations: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            correlation_k: 5,
            judge: WinRateJudge::Gold,
            permutations: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label written to the scale column of agreement tables.
    pub scale_tag: String,
    pub replicates: usize,
    pub output_dir: PathBuf,
    pub seeds: SeedBundle,
    pub grid: GridConfig,
    pub universe: UniverseConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub bon: BonConfig,
    pub rl: RlConfig,
    pub sweep: SweepConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scale_tag: "desk".into(),
            replicates: 5,
            output_dir: PathBuf::from("runs/default"),
            seeds: SeedBundle::default(),
            grid: GridConfig::default(),
            universe: UniverseConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            bon: BonConfig::default(),
            rl: RlConfig::default(),
            sweep: SweepConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Checks every nested invariant. Ensemble seed structure is checked
    /// later, when the ensembles are built.
    pub fn validate(&self) -> Result<()> {
        self.universe.validate()?;
        self.train.validate()?;
        self.bon.validate()?;
        if self.sweep.rl {
            self.rl.validate()?;
            if self.rl.lambdas.is_empty() {
                return Err(Error::config("rl.lambdas is empty while the RL sweep is enabled"));
            }
        }
        if self.replicates == 0 {
            return Err(Error::config("replicates must be >= 1"));
        }
        if self.scale_tag.is_empty() || self.scale_tag.contains([',', '"', '\n']) {
            return Err(Error::config("scale_tag must be nonempty and free of commas, quotes and newlines"));
        }
        let d = &self.data;
        if d.split.iter().any(|f| !(*f > 0.0)) || (d.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("data.split fractions must be positive and sum to 1"));
        }
        if d.preference_pairs < 10 || d.heldout_pairs == 0 || d.eval_prompts == 0 {
            return Err(Error::config("data sizes must be positive (preference_pairs >= 10)"));
        }
        if d.eval_prompts < MIN_REFERENCE {
            // Z-normalisation is fitted on one candidate per eval prompt.
            return Err(Error::config(format!("data.eval_prompts must be at least {MIN_REFERENCE}")));
        }
        for (seeds, what) in [(&self.grid.pretrain_seeds, "pretrain"), (&self.grid.finetune_seeds, "finetune")] {
            if seeds.is_empty() {
                return Err(Error::config(format!("grid.{what}_seeds is empty")));
            }
            let mut seen = HashSet::new();
            if let Some(s) = seeds.iter().find(|s| !seen.insert(**s)) {
                return Err(Error::config(format!("grid.{what}_seeds lists {s} twice")));
            }
        }
        if !self.grid.finetune_seeds.contains(&self.seeds.finetune_seed) {
            return Err(Error::config(format!(
                "seeds.finetune_seed {} is not in grid.finetune_seeds",
                self.seeds.finetune_seed
            )));
        }
        if !self.grid.pretrain_seeds.contains(&self.seeds.pretrain_seed) {
            return Err(Error::config(format!(
                "seeds.pretrain_seed {} is not in grid.pretrain_seeds",
                self.seeds.pretrain_seed
            )));
        }
        if self.sweep.bon_aggregators.is_empty() && !self.sweep.kinds.is_empty() {
            return Err(Error::config("sweep.bon_aggregators is empty"));
        }
        let mut names = HashSet::new();
        for c in &self.sweep.custom {
            if c.name.is_empty() || c.name.contains([',', '"', '\n']) || ["single", "finetune", "pretrain"].contains(&c.name.as_str()) {
                return Err(Error::config(format!("invalid custom ensemble name `{}`", c.name)));
            }
            if !names.insert(c.name.clone()) {
                return Err(Error::config(format!("custom ensemble `{}` defined twice", c.name)));
            }
            for [p, f] in &c.members {
                if !self.grid.pretrain_seeds.contains(p) || !self.grid.finetune_seeds.contains(f) {
                    return Err(Error::config(format!(
                        "custom ensemble `{}` refers to cell ({p}, {f}) outside the grid",
                        c.name
                    )));
                }
            }
        }
        if self.diagnostics.correlation_k < 2 {
            return Err(Error::config("diagnostics.correlation_k must be >= 2"));
        }
        if self.diagnostics.permutations == 0 {
            return Err(Error::config("diagnostics.permutations must be >= 1"));
        }
        if let WinRateJudge::Majority(j) = &self.diagnostics.judge {
            j.validate()?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies `name=value` to a seed: one of `universe_seed`,
    /// `pretrain_seed`, `finetune_seed`, `alignment_seed`, `eval_seed`.
    pub fn apply_seed_override(&mut self, spec: &str) -> Result<()> {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::config(format!("seed override `{spec}` is not name=value")))?;
        let value: u64 = value
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("seed override `{spec}` needs an unsigned integer")))?;
        let s = &mut self.seeds;
        let slot = match name.trim() {
            "universe_seed" => &mut s.universe_seed,
            "pretrain_seed" => &mut s.pretrain_seed,
            "finetune_seed" => &mut s.finetune_seed,
            "alignment_seed" => &mut s.alignment_seed,
            "eval_seed" => &mut s.eval_seed,
            other => return Err(Error::config(format!("unknown seed `{other}`"))),
        };
        *slot = value;
        Ok(())
    }

    /// Small configuration for smoke tests: 2×2 grid, short training, a
    /// short RL sweep and one replicate.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.replicates = 1;
        c.universe.pilot_size = 2000;
        c.grid = GridConfig {
            pretrain_seeds: vec![1, 2],
            finetune_seeds: vec![1, 2],
        };
        c.data.preference_pairs = 600;
        c.data.heldout_pairs = 200;
        c.data.eval_prompts = 120;
        c.train.steps = 300;
        c.bon.n_grid = vec![1, 2, 4, 8];
        c.rl.lambdas = vec![0.03, 0.3];
        c.rl.steps = 200;
        c.rl.eval_interval = 100;
        c.sweep.rl_aggregators = vec![Aggregator::Mean];
        c.diagnostics.permutations = 500;
        c
    }
}
