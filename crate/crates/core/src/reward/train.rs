//! Head training for pairwise (Bradley-Terry with a centering penalty) and
//! pointwise (logistic) reward models.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{PointwiseExample, PreferenceExample, Universe};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::stats::{binomial_sigma, log_sigmoid, sigmoid};
use crate::types::{Prompt, Response};

use super::features::{standardized_features, FEATURE_DIM};
use super::model::{RewardModel, RmKind, TrainMeta};
use super::representation::{RepDims, Representation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the centering penalty `E[(r+ + r−)²]`.
    pub eta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Select the returned checkpoint by validation accuracy: the latest one
    /// within one standard error of the best.
    pub validation_selection: bool,
    /// Steps between validation checkpoints.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            learning_rate: 0.05,
            batch_size: 64,
            steps: 2000,
            validation_selection: true,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::config(format!("eta must be finite and >= 0 (got {})", self.eta)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be >= 1"));
        }
        Ok(())
    }
}

/// Labelled data of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Labeled {
    Pairwise(Vec<PreferenceExample>),
    Pointwise(Vec<PointwiseExample>),
}

impl Labeled {
    pub fn kind(&self) -> RmKind {
        match self {
            Labeled::Pairwise(_) => RmKind::Pairwise,
            Labeled::Pointwise(_) => RmKind::Pointwise,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Labeled::Pairwise(v) => v.len(),
            Labeled::Pointwise(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pairs in scoring order: preferred then rejected for each preference,
    /// the single response for each pointwise example.
    fn items(&self) -> Vec<(&Prompt, &Response)> {
        match self {
            Labeled::Pairwise(v) => v
                .iter()
                .flat_map(|e| [(&e.prompt, &e.preferred), (&e.prompt, &e.rejected)])
                .collect(),
            Labeled::Pointwise(v) => v.iter().map(|e| (&e.prompt, &e.response)).collect(),
        }
    }

    fn labels(&self) -> Vec<f64> {
        match self {
            Labeled::Pairwise(v) => vec![1.0; v.len()],
            Labeled::Pointwise(v) => v.iter().map(|e| f64::from(e.label)).collect(),
        }
    }
}

/// Training and validation data for one reward-model kind.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub train: Labeled,
    pub validation: Option<Labeled>,
}

/// Standardised features of a [`TrainingSet`], computed once and shared by
/// every model trained on it.
struct Prepared {
    kind: RmKind,
    train: Vec<[f64; FEATURE_DIM]>,
    train_labels: Vec<f64>,
    val: Vec<[f64; FEATURE_DIM]>,
    val_labels: Vec<f64>,
}

impl Prepared {
    fn new(u: &Universe, set: &TrainingSet) -> Result<Self> {
        if set.train.is_empty() {
            return Err(Error::invalid("training data is empty"));
        }
        let kind = set.train.kind();
        let (val, val_labels) = match &set.validation {
            Some(v) if !v.is_empty() => {
                if v.kind() != kind {
                    return Err(Error::invalid("validation data kind differs from training data"));
                }
                (standardized_features(u, &v.items()), v.labels())
            }
            _ => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            kind,
            train: standardized_features(u, &set.train.items()),
            train_labels: set.train.labels(),
            val,
            val_labels,
        })
    }
}

/// Embedded examples: `rows` holds 2 embeddings per pairwise example
/// (preferred, rejected) or 1 per pointwise example.
struct Embedded {
    kind: RmKind,
    dim: usize,
    rows: Vec<f64>,
    labels: Vec<f64>,
}

impl Embedded {
    fn new(rep: &Representation, kind: RmKind, feats: &[[f64; FEATURE_DIM]], labels: &[f64]) -> Self {
        let dim = rep.dims().output;
        let mut rows = vec![0.0; feats.len() * dim];
        for (f, out) in feats.iter().zip(rows.chunks_mut(dim)) {
            rep.embed_into(f, out);
        }
        Self {
            kind,
            dim,
            rows,
            labels: labels.to_vec(),
        }
    }

    fn count(&self) -> usize {
        self.labels.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    fn score(&self, w: &[f64], b: f64, i: usize) -> f64 {
        w.iter().zip(self.row(i)).map(|(a, p)| a * p).sum::<f64>() + b
    }

    /// Loss and gradient over the examples in `idx`; the gradient has the
    /// head dimension plus one trailing entry for the bias.
    fn loss_grad(&self, w: &[f64], b: f64, eta: f64, idx: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.dim + 1];
        let mut loss = 0.0;
        let n = idx.len() as f64;
        match self.kind {
            RmKind::Pairwise => {
                for &i in idx {
                    let (p, q) = (2 * i, 2 * i + 1);
                    let (rp, rq) = (self.score(w, b, p), self.score(w, b, q));
                    let d = rp - rq;
                    let s = rp + rq;
                    loss += -log_sigmoid(d) + eta * s * s;
                    let gd = -(1.0 - sigmoid(d));
                    let gs = 2.0 * eta * s;
                    for (k, g) in grad[..self.dim].iter_mut().enumerate() {
                        let (a, c) = (self.row(p)[k], self.row(q)[k]);
                        *g += gd * (a - c) + gs * (a + c);
                    }
                    grad[self.dim] += 2.0 * gs;
                }
            }
            RmKind::Pointwise => {
                for &i in idx {
                    let r = self.score(w, b, i);
                    let y = self.labels[i];
                    loss += -(y * log_sigmoid(r) + (1.0 - y) * log_sigmoid(-r));
                    let g = sigmoid(r) - y;
                    for (k, gk) in grad[..self.dim].iter_mut().enumerate() {
                        *gk += g * self.row(i)[k];
                    }
                    grad[self.dim] += g;
                }
            }
        }
        for g in &mut grad {
            *g /= n;
        }
        (loss / n, grad)
    }

    /// Pairwise: fraction ranked correctly (ties 0.5). Pointwise: fraction
    /// with `σ(r) > 1/2` matching the label (ties 0.5).
    fn accuracy(&self, w: &[f64], b: f64) -> f64 {
        let n = self.count();
        let total: f64 = (0..n)
            .map(|i| match self.kind {
                RmKind::Pairwise => half_credit(self.score(w, b, 2 * i) - self.score(w, b, 2 * i + 1)),
                RmKind::Pointwise => {
                    let r = self.score(w, b, i);
                    half_credit(if self.labels[i] > 0.5 { r } else { -r })
                }
            })
            .sum();
        total / n as f64
    }
}

fn half_credit(margin: f64) -> f64 {
    if margin > 0.0 {
        1.0
    } else if margin < 0.0 {
        0.0
    } else {
        0.5
    }
}

fn check_rm_input(rm: &RewardModel) -> Result<()> {
    if rm.representation.dims().input != FEATURE_DIM {
        return Err(Error::DimensionMismatch {
            expected: FEATURE_DIM,
            actual: rm.representation.dims().input,
        });
    }
    Ok(())
}

/// Pairwise loss `−mean log σ(r+ − r−) + η·mean (r+ + r−)²` and its gradient
/// with respect to `(w, b)` (bias last).
pub fn bt_loss(rm: &RewardModel, u: &Universe, batch: &[PreferenceExample], eta: f64) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("bt_loss needs a nonempty batch"));
    }
    check_rm_input(rm)?;
    let data = Labeled::Pairwise(batch.to_vec());
    let feats = standardized_features(u, &data.items());
    let e = Embedded::new(&rm.representation, RmKind::Pairwise, &feats, &data.labels());
    let idx: Vec<usize> = (0..batch.len()).collect();
    Ok(e.loss_grad(&rm.w, rm.b, eta, &idx))
}

/// Cross-entropy with `σ(r)` as the positive-class probability.
pub fn pointwise_loss(rm: &RewardModel, u: &Universe, batch: &[PointwiseExample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("pointwise_loss needs a nonempty batch"));
    }
    check_rm_input(rm)?;
    let data = Labeled::Pointwise(batch.to_vec());
    let feats = standardized_features(u, &data.items());
    let e = Embedded::new(&rm.representation, RmKind::Pointwise, &feats, &data.labels());
    let idx: Vec<usize> = (0..batch.len()).collect();
    Ok(e.loss_grad(&rm.w, rm.b, 0.0, &idx))
}

/// The two terms of the pairwise objective computed from scores:
/// `(−mean log σ(r+ − r−), mean (r+ + r−)²)`.
pub fn bt_terms_from_scores(preferred: &[f64], rejected: &[f64]) -> (f64, f64) {
    let n = preferred.len() as f64;
    let mut nll = 0.0;
    let mut pen = 0.0;
    for (p, q) in preferred.iter().zip(rejected) {
        nll -= log_sigmoid(p - q);
        pen += (p + q) * (p + q);
    }
    (nll / n, pen / n)
}

fn init_head(dim: usize, finetune_seed: u64) -> (Vec<f64>, f64) {
    let mut rng = SeedStream::new(finetune_seed).derive("head-init").rng();
    let normal = Normal::new(0.0, 0.01).expect("valid normal");
    let w: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
    let b = normal.sample(&mut rng);
    (w, b)
}

fn train_head(
    rep: Arc<Representation>,
    train: &Embedded,
    val: Option<&Embedded>,
    finetune_seed: u64,
    cfg: &TrainConfig,
) -> Result<RewardModel> {
    cfg.validate()?;
    let n = train.count();
    if n == 0 {
        return Err(Error::invalid("training data is empty"));
    }
    let (mut w, mut b) = init_head(train.dim, finetune_seed);
    let mut order_rng = SeedStream::new(finetune_seed).derive("shuffle").rng();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;
    let batch = cfg.batch_size.min(n);
    let select = cfg.validation_selection && val.is_some_and(|v| v.count() > 0);
    let mut checkpoints: Vec<(f64, usize, Vec<f64>, f64)> = Vec::new();
    let consider = |step: usize, w: &[f64], b: f64, out: &mut Vec<(f64, usize, Vec<f64>, f64)>| {
        if let Some(v) = val.filter(|_| select) {
            out.push((v.accuracy(w, b), step, w.to_vec(), b));
        }
    };
    let mut idx = Vec::with_capacity(batch);
    let mut last_loss = f64::NAN;
    for step in 0..cfg.steps {
        if step % cfg.eval_every == 0 {
            consider(step, &w, b, &mut checkpoints);
        }
        idx.clear();
        while idx.len() < batch {
            if cursor == n {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let (loss, grad) = train.loss_grad(&w, b, cfg.eta, &idx);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        last_loss = loss;
        for (wk, g) in w.iter_mut().zip(&grad) {
            *wk -= cfg.learning_rate * g;
        }
        b -= cfg.learning_rate * grad[train.dim];
    }
    consider(cfg.steps, &w, b, &mut checkpoints);

    // Latest checkpoint whose validation accuracy is within one binomial
    // standard error of the best one.
    let (selected_step, w, b) = match val.filter(|_| select) {
        Some(v) => {
            let best = checkpoints.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
            let se = binomial_sigma(best, v.count());
            let (_, step, bw, bb) = checkpoints
                .into_iter()
                .rev()
                .find(|c| c.0 >= best - se)
                .expect("at least one checkpoint");
            (step, bw, bb)
        }
        None => (cfg.steps, w, b),
    };
    let all: Vec<usize> = (0..n).collect();
    let final_loss = if cfg.steps == 0 {
        train.loss_grad(&w, b, cfg.eta, &all).0
    } else if selected_step == cfg.steps {
        last_loss
    } else {
        train.loss_grad(&w, b, cfg.eta, &all).0
    };
    let mut rm = RewardModel::new(train.kind, rep, finetune_seed, w, b)?;
    rm.meta = TrainMeta {
        eta: if train.kind == RmKind::Pairwise { cfg.eta } else { 0.0 },
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        steps: cfg.steps,
        selected_step,
        final_loss,
    };
    Ok(rm)
}

/// Trains one reward model. The pretrain seed fixes the frozen
/// representation; the finetune seed fixes head initialisation and data
/// order.
pub fn train_rm(u: &Universe, data: &TrainingSet, pretrain_seed: u64, finetune_seed: u64, cfg: &TrainConfig) -> Result<RewardModel> {
    let p = Prepared::new(u, data)?;
    let rep = Arc::new(Representation::new(pretrain_seed, RepDims::default())?);
    let train = Embedded::new(&rep, p.kind, &p.train, &p.train_labels);
    let val = Embedded::new(&rep, p.kind, &p.val, &p.val_labels);
    train_head(rep, &train, Some(&val), finetune_seed, cfg)
}

/// Fraction of held-out pairs the model ranks correctly; exact ties count 1/2.
pub fn rm_accuracy(rm: &RewardModel, u: &Universe, heldout: &[PreferenceExample]) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::invalid("rm_accuracy needs nonempty held-out data"));
    }
    check_rm_input(rm)?;
    let data = Labeled::Pairwise(heldout.to_vec());
    let feats = standardized_features(u, &data.items());
    let e = Embedded::new(&rm.representation, RmKind::Pairwise, &feats, &data.labels());
    Ok(e.accuracy(&rm.w, rm.b))
}

/// Reward models keyed by `(pretrain_seed, finetune_seed)`, iterated in
/// ascending key order.
#[derive(Clone, Debug, Default)]
pub struct RmGrid {
    pub models: BTreeMap<(u64, u64), RewardModel>,
    pub pretrain_seeds: Vec<u64>,
    pub finetune_seeds: Vec<u64>,
}

impl RmGrid {
    pub fn get(&self, pretrain: u64, finetune: u64) -> Option<&RewardModel> {
        self.models.get(&(pretrain, finetune))
    }

    pub fn all(&self) -> Vec<&RewardModel> {
        self.models.values().collect()
    }

    /// Models in the configured seed order: pretrain-major.
    pub fn in_seed_order(&self) -> Vec<&RewardModel> {
        let mut out = Vec::new();
        for &p in &self.pretrain_seeds {
            for &f in &self.finetune_seeds {
                if let Some(m) = self.get(p, f) {
                    out.push(m);
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

fn check_distinct(seeds: &[u64], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for s in seeds {
        if !seen.insert(s) {
            return Err(Error::config(format!("duplicate {what} seed {s}")));
        }
    }
    if seeds.is_empty() {
        return Err(Error::config(format!("at least one {what} seed is required")));
    }
    Ok(())
}

/// Trains every (pretrain, finetune) cell. Cells are independent; each is
/// bit-identical to [`train_rm`] on the same seeds.
pub fn train_grid(
    u: &Universe,
    data: &TrainingSet,
    pretrain_seeds: &[u64],
    finetune_seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<RmGrid> {
    check_distinct(pretrain_seeds, "pretrain")?;
    check_distinct(finetune_seeds, "finetune")?;
    cfg.validate()?;
    let p = Prepared::new(u, data)?;
    let per_pretrain: Vec<Vec<RewardModel>> = pretrain_seeds
        .par_iter()
        .map(|&ps| -> Result<Vec<RewardModel>> {
            let rep = Arc::new(Representation::new(ps, RepDims::default())?);
            let train = Embedded::new(&rep, p.kind, &p.train, &p.train_labels);
            let val = Embedded::new(&rep, p.kind, &p.val, &p.val_labels);
            finetune_seeds
                .par_iter()
                .map(|&fs| train_head(rep.clone(), &train, Some(&val), fs, cfg))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut grid = RmGrid {
        models: BTreeMap::new(),
        pretrain_seeds: pretrain_seeds.to_vec(),
        finetune_seeds: finetune_seeds.to_vec(),
    };
    for m in per_pretrain.into_iter().flatten() {
        grid.models.insert(m.cell(), m);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{gen_pointwise_data, gen_preference_data, make_universe, UniverseConfig};

    fn universe() -> Universe {
        make_universe(
            &UniverseConfig {
                pilot_size: 1000,
                ..UniverseConfig::default()
            },
            5,
        )
        .unwrap()
    }

    fn rm_with(seed: u64, w: Vec<f64>, b: f64, kind: RmKind) -> RewardModel {
        let rep = Arc::new(Representation::new(seed, RepDims::default()).unwrap());
        RewardModel::new(kind, rep, 1, w, b).unwrap()
    }

    #[test]
    fn zero_head_losses_are_log_two() {
        let u = universe();
        let prefs = gen_preference_data(&u, 50, SeedStream::new(1)).unwrap();
        let rm = rm_with(1, vec![0.0; 32], 0.0, RmKind::Pairwise);
        let (loss, _) = bt_loss(&rm, &u, &prefs, 0.01).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let mut pts = gen_pointwise_data(&u, 40, SeedStream::new(2)).unwrap();
        for (i, e) in pts.iter_mut().enumerate() {
            e.label = (i % 2) as u8;
        }
        let (loss, _) = pointwise_loss(&rm, &u, &pts).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bt_loss(&rm, &u, &[], 0.01).is_err());
    }

    #[test]
    fn likelihood_term_ignores_prompt_constants() {
        let pos = [0.3, -1.2, 2.0, 0.1];
        let neg = [0.1, -0.4, 1.5, 0.9];
        let c = [5.0, -3.0, 0.7, 11.0];
        let shifted_pos: Vec<f64> = pos.iter().zip(&c).map(|(a, c)| a + c).collect();
        let shifted_neg: Vec<f64> = neg.iter().zip(&c).map(|(a, c)| a + c).collect();
        let (j0, p0) = bt_terms_from_scores(&pos, &neg);
        let (j1, p1) = bt_terms_from_scores(&shifted_pos, &shifted_neg);
        assert!((j0 - j1).abs() < 1e-12);
        assert!((p0 - p1).abs() > 1.0);
    }

    #[test]
    fn all_positive_labels_are_fitted() {
        let u = universe();
        let mut pts = gen_pointwise_data(&u, 100, SeedStream::new(3)).unwrap();
        for e in &mut pts {
            e.label = 1;
        }
        let set = TrainingSet {
            train: Labeled::Pointwise(pts.clone()),
            validation: None,
        };
        let cfg = TrainConfig {
            steps: 3000,
            learning_rate: 0.5,
            ..TrainConfig::default()
        };
        let rm = train_rm(&u, &set, 1, 1, &cfg).unwrap();
        let items: Vec<(&Prompt, &Response)> = pts.iter().map(|e| (&e.prompt, &e.response)).collect();
        let scores = rm.score_features(&standardized_features(&u, &items)).unwrap();
        let mean_p = scores.iter().map(|&s| sigmoid(s)).sum::<f64>() / scores.len() as f64;
        assert!(mean_p >= 0.9, "mean σ(r) = {mean_p}");
    }

    #[test]
    fn accuracy_edge_cases() {
        let u = universe();
        let held = gen_preference_data(&u, 200, SeedStream::new(4)).unwrap();
        let constant = rm_with(2, vec![0.0; 32], 1.5, RmKind::Pairwise);
        assert_eq!(rm_accuracy(&constant, &u, &held).unwrap(), 0.5);
        let w: Vec<f64> = (0..32).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let a = rm_with(2, w.clone(), 0.0, RmKind::Pairwise);
        let neg = rm_with(2, w.iter().map(|v| -v).collect(), 0.0, RmKind::Pairwise);
        let sum = rm_accuracy(&a, &u, &held).unwrap() + rm_accuracy(&neg, &u, &held).unwrap();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_keeps_the_random_init() {
        let u = universe();
        let data = gen_preference_data(&u, 300, SeedStream::new(6)).unwrap();
        let set = TrainingSet {
            train: Labeled::Pairwise(data),
            validation: None,
        };
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let rm = train_rm(&u, &set, 1, 4, &cfg).unwrap();
        let (w0, b0) = init_head(32, 4);
        assert_eq!(rm.w, w0);
        assert_eq!(rm.b, b0);
        assert_eq!(rm.meta.selected_step, 0);
    }

    #[test]
    fn grid_rejects_duplicate_seeds() {
        let u = universe();
        let data = gen_preference_data(&u, 50, SeedStream::new(6)).unwrap();
        let set = TrainingSet {
            train: Labeled::Pairwise(data),
            validation: None,
        };
        let cfg = TrainConfig::default();
        assert!(matches!(train_grid(&u, &set, &[1, 1], &[1, 2], &cfg), Err(Error::Config(_))));
        assert!(matches!(train_grid(&u, &set, &[1, 2], &[3, 3], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn negative_eta_rejected() {
        let cfg = TrainConfig {
            eta: -0.1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
