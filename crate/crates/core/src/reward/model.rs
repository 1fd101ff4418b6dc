use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::Universe;
use crate::error::{Error, Result};
use crate::types::{Prompt, Response, Score};

use super::features::{standardized_features, FEATURE_DIM};
use super::representation::{RepDims, Representation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmKind {
    Pairwise,
    Pointwise,
}

impl fmt::Display for RmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RmKind::Pairwise => "pairwise",
            RmKind::Pointwise => "pointwise",
        })
    }
}

impl FromStr for RmKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(RmKind::Pairwise),
            "pointwise" => Ok(RmKind::Pointwise),
            other => Err(Error::Parse(format!("unknown reward model kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainMeta {
    pub eta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Step of the returned checkpoint.
    pub selected_step: usize,
    pub final_loss: f64,
}

/// `r(x, y) = w · φ(ψ(x, y)) + b` over a frozen representation.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardModel {
    pub kind: RmKind,
    pub finetune_seed: u64,
    pub representation: Arc<Representation>,
    pub w: Vec<f64>,
    pub b: f64,
    pub meta: TrainMeta,
}

impl RewardModel {
    pub fn new(kind: RmKind, representation: Arc<Representation>, finetune_seed: u64, w: Vec<f64>, b: f64) -> Result<Self> {
        let out = representation.dims().output;
        if w.len() != out {
            return Err(Error::DimensionMismatch {
                expected: out,
                actual: w.len(),
            });
        }
        Ok(Self {
            kind,
            finetune_seed,
            representation,
            w,
            b,
            meta: TrainMeta::default(),
        })
    }

    pub fn pretrain_seed(&self) -> u64 {
        self.representation.pretrain_seed()
    }

    pub fn cell(&self) -> (u64, u64) {
        (self.pretrain_seed(), self.finetune_seed)
    }

    pub fn label(&self) -> String {
        format!("rm_p{}_f{}", self.pretrain_seed(), self.finetune_seed)
    }

    /// Head applied to an embedding.
    #[inline]
    pub fn head(&self, phi: &[f64]) -> f64 {
        self.w.iter().zip(phi).map(|(w, p)| w * p).sum::<f64>() + self.b
    }

    fn check_input(&self) -> Result<()> {
        let d = self.representation.dims().input;
        if d != FEATURE_DIM {
            return Err(Error::DimensionMismatch {
                expected: FEATURE_DIM,
                actual: d,
            });
        }
        Ok(())
    }

    /// Scores from standardised features.
    pub fn score_features(&self, rows: &[[f64; FEATURE_DIM]]) -> Result<Vec<f64>> {
        self.check_input()?;
        let mut phi = vec![0.0; self.representation.dims().output];
        Ok(rows
            .iter()
            .map(|r| {
                self.representation.embed_into(r, &mut phi);
                self.head(&phi)
            })
            .collect())
    }

    /// Self-describing text record; floats carry 17 significant digits so the
    /// round trip is exact.
    pub fn to_text(&self) -> String {
        let d = self.representation.dims();
        let m = &self.meta;
        let mut s = String::from("rewardsim-reward-model v1\n");
        s += &format!("kind {}\n", self.kind);
        s += &format!("pretrain_seed {}\n", self.pretrain_seed());
        s += &format!("finetune_seed {}\n", self.finetune_seed);
        s += &format!("dims {} {} {}\n", d.input, d.hidden, d.output);
        s += &format!("eta {}\n", fmt_f64(m.eta));
        s += &format!("learning_rate {}\n", fmt_f64(m.learning_rate));
        s += &format!("batch_size {}\n", m.batch_size);
        s += &format!("steps {}\n", m.steps);
        s += &format!("selected_step {}\n", m.selected_step);
        s += &format!("final_loss {}\n", fmt_f64(m.final_loss));
        s += &format!("bias {}\n", fmt_f64(self.b));
        s += &format!("head {}", self.w.len());
        for w in &self.w {
            s += " ";
            s += &fmt_f64(*w);
        }
        s += "\n";
        s
    }

    /// Parses [`RewardModel::to_text`] output; the representation is rebuilt
    /// from its seed and dimensions, or taken from `cache` when present.
    pub fn from_text(text: &str, cache: &mut RepresentationCache) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("rewardsim-reward-model v1") {
            return Err(Error::Parse("missing reward model header".into()));
        }
        let mut fields: HashMap<&str, &str> = HashMap::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("malformed line `{line}`")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| -> Result<&str> {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("reward model record lacks `{k}`")))
        };
        let num = |k: &str| -> Result<f64> { parse_f64(get(k)?) };
        let int = |k: &str| -> Result<u64> {
            get(k)?
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("{k}: {e}")))
        };
        let dims: Vec<usize> = get("dims")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| Error::Parse(format!("dims: {e}"))))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(Error::Parse("dims needs three entries".into()));
        }
        let dims = RepDims {
            input: dims[0],
            hidden: dims[1],
            output: dims[2],
        };
        let mut head = get("head")?.split_whitespace();
        let n: usize = head
            .next()
            .ok_or_else(|| Error::Parse("empty head".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("head length: {e}")))?;
        let w: Vec<f64> = head.map(parse_f64).collect::<Result<_>>()?;
        if w.len() != n {
            return Err(Error::Parse(format!("head declares {n} weights, found {}", w.len())));
        }
        let rep = cache.get(int("pretrain_seed")?, dims)?;
        let mut rm = RewardModel::new(get("kind")?.trim().parse()?, rep, int("finetune_seed")?, w, num("bias")?)?;
        rm.meta = TrainMeta {
            eta: num("eta")?,
            learning_rate: num("learning_rate")?,
            batch_size: int("batch_size")? as usize,
            steps: int("steps")? as usize,
            selected_step: int("selected_step")? as usize,
            final_loss: num("final_loss")?,
        };
        Ok(rm)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|e| Error::Parse(format!("bad float `{s}`: {e}")))
}

/// Shares one representation per (pretrain seed, dims).
#[derive(Default, Debug)]
pub struct RepresentationCache {
    reps: HashMap<(u64, RepDims), Arc<Representation>>,
}

impl RepresentationCache {
    pub fn get(&mut self, pretrain_seed: u64, dims: RepDims) -> Result<Arc<Representation>> {
        if let Some(r) = self.reps.get(&(pretrain_seed, dims)) {
            return Ok(r.clone());
        }
        let r = Arc::new(Representation::new(pretrain_seed, dims)?);
        self.reps.insert((pretrain_seed, dims), r.clone());
        Ok(r)
    }
}

pub fn rm_score(rm: &RewardModel, u: &Universe, x: &Prompt, y: &Response) -> Result<Score> {
    let s = rm.score_features(&standardized_features(u, &[(x, y)]))?[0];
    Score::new(s)
}

/// Scores of several models on shared items: features are computed once and
/// each distinct representation embeds them once. Row `m` holds model `m`.
pub fn score_matrix(models: &[&RewardModel], u: &Universe, items: &[(&Prompt, &Response)]) -> Result<Vec<Vec<f64>>> {
    let feats = standardized_features(u, items);
    score_matrix_from_features(models, &feats)
}

pub fn score_matrix_from_features(models: &[&RewardModel], feats: &[[f64; FEATURE_DIM]]) -> Result<Vec<Vec<f64>>> {
    let mut embedded: HashMap<*const Representation, Vec<Vec<f64>>> = HashMap::new();
    let mut out = Vec::with_capacity(models.len());
    for rm in models {
        rm.check_input()?;
        let key = Arc::as_ptr(&rm.representation);
        let phis = match embedded.get(&key) {
            Some(p) => p,
            None => {
                let p = rm.representation.embed_all(feats)?;
                embedded.entry(key).or_insert(p)
            }
        };
        out.push(phis.iter().map(|phi| rm.head(phi)).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_universe, UniverseConfig};

    fn universe() -> Universe {
        make_universe(
            &UniverseConfig {
                pilot_size: 300,
                ..UniverseConfig::default()
            },
            2,
        )
        .unwrap()
    }

    fn rep(seed: u64) -> Arc<Representation> {
        Arc::new(Representation::new(seed, RepDims::default()).unwrap())
    }

    #[test]
    fn zero_head_scores_zero_and_bias_shifts() {
        let u = universe();
        let x = Prompt::new(vec![7, 8, 9, 10]).unwrap();
        let y = Response::terminated(vec![11, 12, 13]).unwrap();
        let rm = RewardModel::new(RmKind::Pairwise, rep(1), 1, vec![0.0; 32], 0.0).unwrap();
        assert_eq!(rm_score(&rm, &u, &x, &y).unwrap().value(), 0.0);
        let w: Vec<f64> = (0..32).map(|i| (i as f64 - 15.0) / 10.0).collect();
        let a = RewardModel::new(RmKind::Pairwise, rep(1), 1, w.clone(), 0.3).unwrap();
        let mut b = a.clone();
        b.b += 1.25;
        let sa = rm_score(&a, &u, &x, &y).unwrap().value();
        let sb = rm_score(&b, &u, &x, &y).unwrap().value();
        assert!((sb - sa - 1.25).abs() < 1e-12);
        let c = RewardModel::new(RmKind::Pointwise, rep(1), 9, w, 0.3).unwrap();
        assert_eq!(rm_score(&c, &u, &x, &y).unwrap().value(), sa);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let u = universe();
        let x = Prompt::new(vec![7, 8, 9, 10]).unwrap();
        let y = Response::empty();
        let dims = RepDims {
            input: 5,
            ..RepDims::default()
        };
        let r = Arc::new(Representation::new(1, dims).unwrap());
        let rm = RewardModel::new(RmKind::Pairwise, r, 1, vec![0.0; 32], 0.0).unwrap();
        assert!(matches!(rm_score(&rm, &u, &x, &y), Err(Error::DimensionMismatch { .. })));
        assert!(RewardModel::new(RmKind::Pairwise, rep(1), 1, vec![0.0; 3], 0.0).is_err());
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let w: Vec<f64> = (0..32).map(|i| (i as f64).sin() / 3.0 + 1e-300 * i as f64).collect();
        let mut rm = RewardModel::new(RmKind::Pointwise, rep(3), 7, w, -0.1 / 3.0).unwrap();
        rm.meta = TrainMeta {
            eta: 0.01,
            learning_rate: 0.05,
            batch_size: 64,
            steps: 2000,
            selected_step: 1800,
            final_loss: std::f64::consts::LN_2,
        };
        let text = rm.to_text();
        let back = RewardModel::from_text(&text, &mut RepresentationCache::default()).unwrap();
        assert_eq!(back, rm);
        for (a, b) in back.w.iter().zip(&rm.w) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(RewardModel::from_text("nope", &mut RepresentationCache::default()).is_err());
    }

    #[test]
    fn score_matrix_matches_single_scoring() {
        let u = universe();
        let x = Prompt::new(vec![7, 8, 9, 10]).unwrap();
        let ys = [Response::terminated(vec![11, 12]).unwrap(), Response::empty()];
        let items: Vec<(&Prompt, &Response)> = ys.iter().map(|y| (&x, y)).collect();
        let w: Vec<f64> = (0..32).map(|i| i as f64 / 32.0).collect();
        let a = RewardModel::new(RmKind::Pairwise, rep(1), 1, w.clone(), 0.0).unwrap();
        let b = RewardModel::new(RmKind::Pairwise, rep(2), 1, w, 0.5).unwrap();
        let m = score_matrix(&[&a, &b], &u, &items).unwrap();
        for (row, rm) in m.iter().zip([&a, &b]) {
            for (s, y) in row.iter().zip(&ys) {
                assert_eq!(*s, rm_score(rm, &u, &x, y).unwrap().value());
            }
        }
    }
}
