//! The experiment pipeline, replicate by replicate: data, reward-model grid,
//! ensembles, best-of-n and policy-gradient sweeps, diagnostics.

use std::path::Path;

use rayon::prelude::*;

use crate::align::{rl_train, RlConfig, TracePoint};
use crate::diagnostics::{
    cross_scoring_from_scores, preference_conditioned_stats, rank_correlation_trace, subset_top1_from_scores, win_rate_responses,
    AgreementRow, CandidatePool, CorrelationPoint, HackStats, Judge,
};
use crate::ensemble::{build_ensemble, Aggregator, EnsembleKind, EnsembleSpec};
use crate::env::{
    gen_pointwise_data, gen_preference_data, make_universe, read_jsonl, split_dataset, DatasetSplit,
    PointwiseExample, PreferenceExample, Universe,
};
use crate::error::{Error, Result};
use crate::reward::{
    rm_accuracy, score_matrix, train_grid, GoldReward, Labeled, RepresentationCache, RewardModel, RmGrid, RmKind,
    Scorer, TrainingSet,
};
use crate::rng::SeedBundle;
use crate::types::{Prompt, Response};

use super::config::{ExperimentConfig, WinRateJudge};
use super::record::RunDir;

/// Everything generated for one replicate universe.
#[derive(Clone, Debug)]
pub struct ReplicateData {
    pub universe: Universe,
    pub preference: DatasetSplit<PreferenceExample>,
    /// Pointwise (training, validation) examples when the RM kind is pointwise.
    pub pointwise: Option<(Vec<PointwiseExample>, Vec<PointwiseExample>)>,
    pub heldout: Vec<PreferenceExample>,
    pub eval_prompts: Vec<Prompt>,
}

fn data_dir(r: usize) -> String {
    format!("data/replicate_{r}")
}

fn model_dir(r: usize) -> String {
    format!("models/replicate_{r}")
}

impl ReplicateData {
    pub fn generate(cfg: &ExperimentConfig, seeds: &SeedBundle) -> Result<Self> {
        let universe = make_universe(&cfg.universe, seeds.universe_seed)?;
        let stream = seeds.universe().derive("data");
        let pairs = gen_preference_data(&universe, cfg.data.preference_pairs, stream.derive("pairs"))?;
        let preference = split_dataset(&pairs, cfg.data.split, stream.derive("split"))?;
        let pointwise = match cfg.data.rm_kind {
            RmKind::Pairwise => None,
            RmKind::Pointwise => {
                let points = gen_pointwise_data(&universe, cfg.data.preference_pairs, stream.derive("pointwise"))?;
                let s = split_dataset(&points, cfg.data.split, stream.derive("pointwise-split"))?;
                Some((s.rm_half, s.validation))
            }
        };
        let heldout = gen_preference_data(&universe, cfg.data.heldout_pairs, stream.derive("heldout"))?;
        let eval_prompts = universe.sample_prompts(cfg.data.eval_prompts, seeds.eval().derive("prompts"));
        Ok(Self {
            universe,
            preference,
            pointwise,
            heldout,
            eval_prompts,
        })
    }

    pub fn training_set(&self) -> TrainingSet {
        match &self.pointwise {
            None => TrainingSet {
                train: Labeled::Pairwise(self.preference.rm_half.clone()),
                validation: Some(Labeled::Pairwise(self.preference.validation.clone())),
            },
            Some((train, val)) => TrainingSet {
                train: Labeled::Pointwise(train.clone()),
                validation: Some(Labeled::Pointwise(val.clone())),
            },
        }
    }

    pub fn save(&self, dir: &mut RunDir, r: usize) -> Result<()> {
        let d = data_dir(r);
        dir.write_jsonl(&format!("{d}/preference_train.jsonl"), &self.preference.rm_half)?;
        dir.write_jsonl(&format!("{d}/preference_validation.jsonl"), &self.preference.validation)?;
        dir.write_jsonl(&format!("{d}/policy_prompts.jsonl"), &self.preference.policy_half)?;
        dir.write_jsonl(&format!("{d}/heldout.jsonl"), &self.heldout)?;
        dir.write_jsonl(&format!("{d}/eval_prompts.jsonl"), &self.eval_prompts)?;
        if let Some((train, val)) = &self.pointwise {
            dir.write_jsonl(&format!("{d}/pointwise_train.jsonl"), train)?;
            dir.write_jsonl(&format!("{d}/pointwise_validation.jsonl"), val)?;
        }
        Ok(())
    }

    /// Reads the datasets written by [`ReplicateData::save`]; the universe
    /// is rebuilt from the configuration.
    pub fn load(cfg: &ExperimentConfig, seeds: &SeedBundle, root: &Path, r: usize) -> Result<Self> {
        let d = root.join(data_dir(r));
        let read = |name: &str| -> Result<std::path::PathBuf> {
            let p = d.join(name);
            if p.exists() {
                Ok(p)
            } else {
                Err(Error::Missing(format!("{} (run `gen` first)", p.display())))
            }
        };
        let universe = make_universe(&cfg.universe, seeds.universe_seed)?;
        let pointwise = match cfg.data.rm_kind {
            RmKind::Pairwise => None,
            RmKind::Pointwise => Some((
                read_jsonl(&read("pointwise_train.jsonl")?)?,
                read_jsonl(&read("pointwise_validation.jsonl")?)?,
            )),
        };
        Ok(Self {
            preference: DatasetSplit {
                rm_half: read_jsonl(&read("preference_train.jsonl")?)?,
                policy_half: read_jsonl(&read("policy_prompts.jsonl")?)?,
                validation: read_jsonl(&read("preference_validation.jsonl")?)?,
            },
            pointwise,
            heldout: read_jsonl(&read("heldout.jsonl")?)?,
            eval_prompts: read_jsonl(&read("eval_prompts.jsonl")?)?,
            universe,
        })
    }
}

pub fn train_models(cfg: &ExperimentConfig, data: &ReplicateData) -> Result<RmGrid> {
    train_grid(
        &data.universe,
        &data.training_set(),
        &cfg.grid.pretrain_seeds,
        &cfg.grid.finetune_seeds,
        &cfg.train,
    )
}

pub fn save_models(grid: &RmGrid, dir: &mut RunDir, r: usize) -> Result<()> {
    for m in grid.in_seed_order() {
        dir.write(&format!("{}/{}.txt", model_dir(r), m.label()), m.to_text().as_bytes())?;
    }
    Ok(())
}

pub fn load_models(cfg: &ExperimentConfig, root: &Path, r: usize) -> Result<RmGrid> {
    let mut cache = RepresentationCache::default();
    let mut grid = RmGrid {
        pretrain_seeds: cfg.grid.pretrain_seeds.clone(),
        finetune_seeds: cfg.grid.finetune_seeds.clone(),
        ..RmGrid::default()
    };
    for &p in &cfg.grid.pretrain_seeds {
        for &f in &cfg.grid.finetune_seeds {
            let path = root.join(model_dir(r)).join(format!("rm_p{p}_f{f}.txt"));
            let text = std::fs::read_to_string(&path)
                .map_err(|_| Error::Missing(format!("{} (run `train-rms` first)", path.display())))?;
            let m = RewardModel::from_text(&text, &mut cache)?;
            grid.models.insert((p, f), m);
        }
    }
    Ok(grid)
}

/// A scorer under test: the `single` reward model(s) or a named ensemble.
#[derive(Clone, Debug)]
pub struct ScorerEntry {
    pub ensemble: String,
    pub method: String,
    pub spec: EnsembleSpec,
}

fn member(grid: &RmGrid, p: u64, f: u64) -> Result<RewardModel> {
    grid.get(p, f)
        .cloned()
        .ok_or_else(|| Error::invariant(format!("grid has no model for cell ({p}, {f})")))
}

/// Standard ensembles for each aggregator in `aggregators`, then the custom
/// ensembles. The finetune ensemble spans every finetune seed at
/// `seeds.pretrain_seed`; the pretrain ensemble every pretrain seed at
/// `seeds.finetune_seed`.
pub fn ensemble_entries(cfg: &ExperimentConfig, grid: &RmGrid, aggregators: &[Aggregator]) -> Result<Vec<ScorerEntry>> {
    let mut out = Vec::new();
    if let Some(&first) = aggregators.first() {
        for &kind in &cfg.sweep.kinds {
            let members = match kind {
                EnsembleKind::Finetune => cfg
                    .grid
                    .finetune_seeds
                    .iter()
                    .map(|&f| member(grid, cfg.seeds.pretrain_seed, f))
                    .collect::<Result<Vec<_>>>()?,
                EnsembleKind::Pretrain => cfg
                    .grid
                    .pretrain_seeds
                    .iter()
                    .map(|&p| member(grid, p, cfg.seeds.finetune_seed))
                    .collect::<Result<Vec<_>>>()?,
            };
            let base = build_ensemble(members, kind, first)?;
            for &a in aggregators {
                out.push(ScorerEntry {
                    ensemble: kind.to_string(),
                    method: a.name().to_string(),
                    spec: base.with_aggregator(a),
                });
            }
        }
    }
    for c in &cfg.sweep.custom {
        let members = c
            .members
            .iter()
            .map(|[p, f]| member(grid, *p, *f))
            .collect::<Result<Vec<_>>>()?;
        let spec = build_ensemble(members, c.kind, c.aggregator)
            .map_err(|e| Error::invariant(format!("custom ensemble `{}`: {e}", c.name)))?;
        out.push(ScorerEntry {
            ensemble: c.name.clone(),
            method: c.aggregator.name().to_string(),
            spec,
        });
    }
    Ok(out)
}

pub fn save_ensembles(entries: &[ScorerEntry], dir: &mut RunDir, r: usize) -> Result<()> {
    for e in entries {
        let text = serde_json::to_string_pretty(&e.spec.manifest())?;
        dir.write(&format!("{}/ensembles/{}_{}.json", model_dir(r), e.ensemble, e.method), text.as_bytes())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmRow {
    pub pretrain_seed: u64,
    pub finetune_seed: u64,
    pub heldout_accuracy: f64,
    pub selected_step: usize,
    /// `mean(r+ + r−)` over the RM training pairs.
    pub mean_score_sum: f64,
}

pub fn rm_rows(data: &ReplicateData, grid: &RmGrid) -> Result<Vec<RmRow>> {
    let u = &data.universe;
    let train = &data.preference.rm_half;
    let items: Vec<(&Prompt, &Response)> = train
        .iter()
        .flat_map(|e| [(&e.prompt, &e.preferred), (&e.prompt, &e.rejected)])
        .collect();
    let models = grid.in_seed_order();
    let scores = score_matrix(&models, u, &items)?;
    models
        .iter()
        .zip(&scores)
        .map(|(m, s)| {
            let sum = s.chunks(2).map(|c| c[0] + c[1]).sum::<f64>() / train.len() as f64;
            Ok(RmRow {
                pretrain_seed: m.pretrain_seed(),
                finetune_seed: m.finetune_seed,
                heldout_accuracy: rm_accuracy(m, u, &data.heldout)?,
                selected_step: m.meta.selected_step,
                mean_score_sum: sum,
            })
        })
        .collect()
}

/// Every grid model's scores over one shared best-of-n candidate pool.
#[derive(Clone, Debug)]
pub struct PoolScores {
    pub pool: CandidatePool,
    /// (pretrain, finetune) of each score row, pretrain-major.
    pub cells: Vec<(u64, u64)>,
    pub scores: Vec<Vec<f64>>,
    pub gold: Vec<f64>,
    /// One reference-policy response per prompt, the win-rate baseline.
    pub reference: Vec<Response>,
}

pub fn pool_scores(cfg: &ExperimentConfig, data: &ReplicateData, grid: &RmGrid, seeds: &SeedBundle) -> Result<PoolScores> {
    let u = &data.universe;
    let pool = CandidatePool::sample(u, &data.eval_prompts, cfg.bon.max_n(), seeds.eval().derive("bon-pool"))?;
    let models = grid.in_seed_order();
    let items = pool.items();
    let scores = score_matrix(&models, u, &items)?;
    let gold = GoldReward.score_batch(u, &items)?;
    let rs = seeds.eval().derive("reference");
    let reference = data
        .eval_prompts
        .iter()
        .enumerate()
        .map(|(i, x)| u.sample_sft(x, 1.0, &mut rs.index(i as u64).rng()))
        .collect();
    Ok(PoolScores {
        pool,
        cells: models.iter().map(|m| m.cell()).collect(),
        scores,
        gold,
        reference,
    })
}

impl PoolScores {
    fn row(&self, cell: (u64, u64)) -> Result<&Vec<f64>> {
        self.cells
            .iter()
            .position(|c| *c == cell)
            .map(|i| &self.scores[i])
            .ok_or_else(|| Error::invariant(format!("no pool scores for cell {cell:?}")))
    }

    /// Aggregated ensemble scores over the pool.
    pub fn ensemble(&self, spec: &EnsembleSpec) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = spec
            .members()
            .iter()
            .map(|m| self.row(m.cell()).cloned())
            .collect::<Result<_>>()?;
        spec.aggregate_columns(&rows)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BonRow {
    pub ensemble: String,
    pub method: String,
    pub n: usize,
    pub reward: f64,
    pub win_rate: f64,
    pub per_prompt_reward: Vec<f64>,
    pub per_prompt_win: Vec<f64>,
}

fn judge(cfg: &ExperimentConfig) -> Judge {
    match &cfg.diagnostics.judge {
        WinRateJudge::Gold => Judge::Gold,
        WinRateJudge::Majority(j) => Judge::Majority(j.clone()),
    }
}

/// Best-of-n true reward and win rate against the reference sample for
/// every n. `single` averages per prompt over all grid models.
pub fn bon_rows(
    cfg: &ExperimentConfig,
    data: &ReplicateData,
    ps: &PoolScores,
    entries: &[ScorerEntry],
    seeds: &SeedBundle,
) -> Result<Vec<BonRow>> {
    let u = &data.universe;
    let m = ps.pool.max_n();
    let judge = judge(cfg);
    let evaluate = |scores: &[f64], n: usize, name: &str, method: &str| -> Result<(Vec<f64>, Vec<f64>)> {
        let picks = ps.pool.select(scores, n)?;
        let reward = picks.iter().enumerate().map(|(i, &j)| ps.gold[i * m + j]).collect();
        let stream = seeds.eval().derive("judge").derive(name).derive(method).index(n as u64);
        let win = win_rate_responses(u, &ps.pool.prompts, &ps.pool.picked(&picks), &ps.reference, &judge, stream)?;
        Ok((reward, win.per_prompt))
    };
    let row = |ensemble: &str, method: &str, n: usize, reward: Vec<f64>, win: Vec<f64>| BonRow {
        ensemble: ensemble.to_string(),
        method: method.to_string(),
        n,
        reward: mean(&reward),
        win_rate: mean(&win),
        per_prompt_reward: reward,
        per_prompt_win: win,
    };
    let mut out = Vec::new();
    let prompts = ps.pool.len();
    for &n in &cfg.bon.n_grid {
        let (mut reward, mut win) = (vec![0.0; prompts], vec![0.0; prompts]);
        for (cell, scores) in ps.cells.iter().zip(&ps.scores) {
            let (r, w) = evaluate(scores, n, "single", &format!("p{}_f{}", cell.0, cell.1))?;
            for i in 0..prompts {
                reward[i] += r[i] / ps.cells.len() as f64;
                win[i] += w[i] / ps.cells.len() as f64;
            }
        }
        out.push(row("single", "n/a", n, reward, win));
    }
    for e in entries {
        let scores = ps.ensemble(&e.spec)?;
        for &n in &cfg.bon.n_grid {
            let (r, w) = evaluate(&scores, n, &e.ensemble, &e.method)?;
            out.push(row(&e.ensemble, &e.method, n, r, w));
        }
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Cross-scoring averaged over every grid model as ranker.
#[derive(Clone, Debug, PartialEq)]
pub struct AgreementSummary {
    pub rows: Vec<AgreementRow>,
    /// Per n, per prompt: (self, same-pretrain, diff-pretrain).
    pub per_prompt: Vec<Vec<(f64, Option<f64>, Option<f64>)>>,
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.filter(|v| !v.is_empty()).map(|v| mean(&v))
}

pub fn agreement(ps: &PoolScores, n_grid: &[usize]) -> Result<AgreementSummary> {
    let pretrain: Vec<u64> = ps.cells.iter().map(|c| c.0).collect();
    let reports = (0..ps.scores.len())
        .map(|r| cross_scoring_from_scores(&ps.pool, &ps.scores, &pretrain, r, n_grid))
        .collect::<Result<Vec<_>>>()?;
    let rows = (0..n_grid.len())
        .map(|k| AgreementRow {
            n: n_grid[k],
            self_score: mean(&reports.iter().map(|r| r.rows[k].self_score).collect::<Vec<_>>()),
            same_pretrain: mean_opt(reports.iter().map(|r| r.rows[k].same_pretrain)),
            diff_pretrain: mean_opt(reports.iter().map(|r| r.rows[k].diff_pretrain)),
        })
        .collect();
    let per_prompt = (0..n_grid.len())
        .map(|k| {
            (0..ps.pool.len())
                .map(|p| {
                    (
                        mean(&reports.iter().map(|r| r.per_prompt[k][p].0).collect::<Vec<_>>()),
                        mean_opt(reports.iter().map(|r| r.per_prompt[k][p].1)),
                        mean_opt(reports.iter().map(|r| r.per_prompt[k][p].2)),
                    )
                })
                .collect()
        })
        .collect();
    Ok(AgreementSummary { rows, per_prompt })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Top1Row {
    pub n: usize,
    pub same_pretrain: Option<f64>,
    pub diff_pretrain: Option<f64>,
}

/// Top-1 agreement averaged over model pairs, split by shared pretrain seed.
/// Each pair's agreement averages over every n-subset of the pool.
pub fn top1_rows(ps: &PoolScores, n_grid: &[usize]) -> Result<Vec<Top1Row>> {
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    for a in 0..ps.scores.len() {
        for b in a + 1..ps.scores.len() {
            let series = subset_top1_from_scores(&ps.pool, &ps.scores[a], &ps.scores[b], n_grid)?;
            if ps.cells[a].0 == ps.cells[b].0 {
                same.push(series);
            } else {
                diff.push(series);
            }
        }
    }
    let column = |group: &[Vec<f64>], k: usize| (!group.is_empty()).then(|| mean(&group.iter().map(|s| s[k]).collect::<Vec<_>>()));
    Ok(n_grid
        .iter()
        .enumerate()
        .map(|(k, &n)| Top1Row {
            n,
            same_pretrain: column(&same, k),
            diff_pretrain: column(&diff, k),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlRun {
    pub ensemble: String,
    pub method: String,
    pub lambda: f64,
    pub points: Vec<TracePoint>,
}

#[derive(Clone, Debug, Default)]
pub struct RlResults {
    pub runs: Vec<RlRun>,
    /// Rank-correlation trace of the single RM's run at the lowest λ; absent
    /// when the grid has a single model.
    pub correlation: Option<Vec<CorrelationPoint>>,
}

/// The λ sweep for the single RM at `(seeds.pretrain_seed,
/// seeds.finetune_seed)` and for every ensemble entry.
pub fn rl_sweep(
    cfg: &ExperimentConfig,
    data: &ReplicateData,
    grid: &RmGrid,
    entries: &[ScorerEntry],
    seeds: &SeedBundle,
) -> Result<RlResults> {
    let u = &data.universe;
    let single = member(grid, cfg.seeds.pretrain_seed, cfg.seeds.finetune_seed)?;
    let lambdas = &cfg.rl.lambdas;
    let lowest = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let mut jobs: Vec<(&str, &str, &dyn Scorer, f64)> = lambdas.iter().map(|&l| ("single", "n/a", &single as &dyn Scorer, l)).collect();
    for e in entries {
        for &l in lambdas {
            jobs.push((&e.ensemble, &e.method, &e.spec as &dyn Scorer, l));
        }
    }
    let prompts = &data.preference.policy_half;
    let outcomes = jobs
        .par_iter()
        .map(|&(name, method, scorer, lambda)| {
            let track = name == "single" && lambda == lowest;
            let rl_cfg = RlConfig {
                keep_snapshots: track,
                ..cfg.rl.clone()
            };
            let stream = seeds.alignment().derive(name).derive(method).derive(&lambda.to_string());
            let (_, trace) = rl_train(u, u.sft(), scorer, &rl_cfg, lambda, prompts, &data.eval_prompts, stream)?;
            Ok((
                RlRun {
                    ensemble: name.to_string(),
                    method: method.to_string(),
                    lambda,
                    points: trace.points,
                },
                trace.snapshots,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut results = RlResults::default();
    let mut snapshots = Vec::new();
    for (run, snaps) in outcomes {
        if !snaps.is_empty() {
            snapshots = snaps;
        }
        results.runs.push(run);
    }
    if grid.len() >= 2 {
        results.correlation = Some(rank_correlation_trace(
            &grid.in_seed_order(),
            &snapshots,
            u,
            &data.eval_prompts,
            cfg.diagnostics.correlation_k,
            seeds.eval().derive("correlation"),
        )?);
    }
    Ok(results)
}

/// All results for one replicate. Stages that did not run leave their
/// fields empty.
#[derive(Clone, Debug, Default)]
pub struct ReplicateResults {
    pub rm: Vec<RmRow>,
    /// Statistics of (preferred, rejected) responses in the RM training data.
    pub preference_stats: Option<(HackStats, HackStats)>,
    pub agreement: Option<AgreementSummary>,
    pub top1: Vec<Top1Row>,
    pub bon: Vec<BonRow>,
    pub rl: Option<RlResults>,
}

pub fn preference_stats(data: &ReplicateData) -> Result<(HackStats, HackStats)> {
    preference_conditioned_stats(&data.preference.rm_half)
}

/// Runs every stage of replicate `r` in memory.
pub fn run_replicate(cfg: &ExperimentConfig, r: usize) -> Result<(ReplicateData, RmGrid, ReplicateResults)> {
    cfg.validate()?;
    let seeds = cfg.seeds.replicate(r as u64);
    let data = ReplicateData::generate(cfg, &seeds).map_err(|e| e.in_stage("data"))?;
    let grid = train_models(cfg, &data).map_err(|e| e.in_stage("train"))?;
    let bon_entries = ensemble_entries(cfg, &grid, &cfg.sweep.bon_aggregators).map_err(|e| e.in_stage("ensembles"))?;
    let rl_entries = ensemble_entries(cfg, &grid, &cfg.sweep.rl_aggregators).map_err(|e| e.in_stage("ensembles"))?;
    let mut res = ReplicateResults {
        rm: rm_rows(&data, &grid).map_err(|e| e.in_stage("train"))?,
        ..ReplicateResults::default()
    };
    let ps = pool_scores(cfg, &data, &grid, &seeds).map_err(|e| e.in_stage("bon"))?;
    res.bon = bon_rows(cfg, &data, &ps, &bon_entries, &seeds).map_err(|e| e.in_stage("bon"))?;
    res.agreement = Some(agreement(&ps, &cfg.bon.n_grid).map_err(|e| e.in_stage("diagnostics"))?);
    res.top1 = top1_rows(&ps, &cfg.bon.n_grid).map_err(|e| e.in_stage("diagnostics"))?;
    res.preference_stats = Some(preference_stats(&data).map_err(|e| e.in_stage("diagnostics"))?);
    if cfg.sweep.rl {
        res.rl = Some(rl_sweep(cfg, &data, &grid, &rl_entries, &seeds).map_err(|e| e.in_stage("rl"))?);
    }
    Ok((data, grid, res))
}
