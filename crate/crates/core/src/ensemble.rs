//! Reward-model ensembles and their aggregators.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::Universe;
use crate::error::{Error, Result};
use crate::reward::{score_matrix_from_features, standardized_features, RewardModel, Scorer};
use crate::stats::mean_and_std;
use crate::types::{AffineScoreTransform, Prompt, Response, Score};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Mean,
    Median,
    MeanMinusStd,
    Min,
}

impl Aggregator {
    pub const ALL: [Aggregator; 4] = [Aggregator::Mean, Aggregator::Median, Aggregator::MeanMinusStd, Aggregator::Min];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Mean => "mean",
            Aggregator::Median => "median",
            Aggregator::MeanMinusStd => "mean_minus_std",
            Aggregator::Min => "min",
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Aggregator::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown aggregator `{s}`")))
    }
}

/// Combines member scores. The median of an even count is the mean of the
/// two middle values; the standard deviation is the population one.
pub fn aggregate(scores: &[f64], method: Aggregator) -> Result<Score> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty score list"));
    }
    let v = match method {
        Aggregator::Mean => mean_and_std(scores)?.0,
        Aggregator::MeanMinusStd => {
            let (m, s) = mean_and_std(scores)?;
            m - s
        }
        Aggregator::Min => scores.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregator::Median => {
            let mut s = scores.to_vec();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            if n % 2 == 1 {
                s[n / 2]
            } else {
                0.5 * (s[n / 2 - 1] + s[n / 2])
            }
        }
    };
    Score::new(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Pretrain,
    Finetune,
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnsembleKind::Pretrain => "pretrain",
            EnsembleKind::Finetune => "finetune",
        })
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleSpec {
    members: Vec<RewardModel>,
    kind: EnsembleKind,
    aggregator: Aggregator,
    transforms: Option<Vec<AffineScoreTransform>>,
}

/// Validates the seed structure for `kind` and builds the ensemble.
pub fn build_ensemble(members: Vec<RewardModel>, kind: EnsembleKind, aggregator: Aggregator) -> Result<EnsembleSpec> {
    if members.is_empty() {
        return Err(Error::invariant("an ensemble needs at least one member"));
    }
    let mut cells = HashSet::new();
    for m in &members {
        if !cells.insert(m.cell()) {
            let (p, f) = m.cell();
            return Err(Error::invariant(format!(
                "ensemble lists the cell (pretrain {p}, finetune {f}) twice"
            )));
        }
    }
    match kind {
        EnsembleKind::Pretrain => {
            let mut seen = HashSet::new();
            for m in &members {
                if !seen.insert(m.pretrain_seed()) {
                    return Err(Error::invariant(format!(
                        "pretrain ensemble has two members with pretrain seed {}",
                        m.pretrain_seed()
                    )));
                }
            }
        }
        EnsembleKind::Finetune => {
            let p = members[0].pretrain_seed();
            if members.iter().any(|m| m.pretrain_seed() != p) {
                return Err(Error::invariant("finetune ensemble members must share one pretrain seed"));
            }
        }
    }
    Ok(EnsembleSpec {
        members,
        kind,
        aggregator,
        transforms: None,
    })
}

impl EnsembleSpec {
    pub fn members(&self) -> &[RewardModel] {
        &self.members
    }

    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn aggregator(&self) -> Aggregator {
        self.aggregator
    }

    pub fn with_aggregator(&self, aggregator: Aggregator) -> Self {
        Self {
            aggregator,
            ..self.clone()
        }
    }

    /// Per-member transforms applied before aggregation.
    pub fn with_transforms(mut self, transforms: Vec<AffineScoreTransform>) -> Result<Self> {
        if transforms.len() != self.members.len() {
            return Err(Error::DimensionMismatch {
                expected: self.members.len(),
                actual: transforms.len(),
            });
        }
        self.transforms = Some(transforms);
        Ok(self)
    }

    /// Member scores, one row per member, after optional transforms.
    pub fn member_scores(&self, u: &Universe, items: &[(&Prompt, &Response)]) -> Result<Vec<Vec<f64>>> {
        let feats = standardized_features(u, items);
        let refs: Vec<&RewardModel> = self.members.iter().collect();
        let mut rows = score_matrix_from_features(&refs, &feats)?;
        if let Some(ts) = &self.transforms {
            for (row, t) in rows.iter_mut().zip(ts) {
                for (s, (x, _)) in row.iter_mut().zip(items) {
                    *s = t.apply(x, *s);
                }
            }
        }
        Ok(rows)
    }

    /// Aggregates a member-by-item score matrix column by column.
    pub fn aggregate_columns(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = rows.first().map_or(0, Vec::len);
        let mut col = vec![0.0; rows.len()];
        (0..n)
            .map(|j| {
                for (c, r) in col.iter_mut().zip(rows) {
                    *c = r[j];
                }
                aggregate(&col, self.aggregator).map(Score::value)
            })
            .collect()
    }

    pub fn manifest(&self) -> EnsembleManifest {
        EnsembleManifest {
            kind: self.kind,
            aggregator: self.aggregator,
            members: self
                .members
                .iter()
                .map(|m| MemberRef {
                    pretrain_seed: m.pretrain_seed(),
                    finetune_seed: m.finetune_seed,
                    model: format!("{}.txt", m.label()),
                })
                .collect(),
            transforms: self.transforms.clone(),
        }
    }
}

impl Scorer for EnsembleSpec {
    fn score_batch(&self, u: &Universe, items: &[(&Prompt, &Response)]) -> Result<Vec<f64>> {
        self.aggregate_columns(&self.member_scores(u, items)?)
    }

    fn describe(&self) -> String {
        format!("{}_{}", self.kind, self.aggregator)
    }
}

pub fn ensemble_score(e: &EnsembleSpec, u: &Universe, x: &Prompt, y: &Response) -> Result<Score> {
    Score::new(e.score_one(u, x, y)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberRef {
    pub pretrain_seed: u64,
    pub finetune_seed: u64,
    /// Model file name relative to the run's `models/` directory.
    pub model: String,
}

/// On-disk description of an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub kind: EnsembleKind,
    pub aggregator: Aggregator,
    pub members: Vec<MemberRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transforms: Option<Vec<AffineScoreTransform>>,
}
