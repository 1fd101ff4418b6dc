//! Configuration, run directories, orchestration, export, plots and run
//! comparison.

pub mod compare;
pub mod config;
pub mod export;
pub mod pipeline;
pub mod plots;
pub mod record;
pub mod table;

use std::path::Path;

pub use compare::{compare_runs, CompareReport, CompareRow};
pub use config::{CustomEnsemble, DataConfig, DiagnosticsConfig, ExperimentConfig, GridConfig, SweepConfig, WinRateJudge};
pub use pipeline::{run_replicate, ReplicateData, ReplicateResults};
pub use plots::{emit_plots, PlotReport};
pub use record::{verify_run, RunDir, RunRecord};
pub use table::{format_sig6, Cell, RawTable, Table};

use crate::error::{Error, Result};
use export::*;
use pipeline::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Gen,
    TrainRms,
    AlignBon,
    AlignRl,
    Diagnose,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Gen,
        Stage::TrainRms,
        Stage::AlignBon,
        Stage::AlignRl,
        Stage::Diagnose,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::TrainRms => "train-rms",
            Stage::AlignBon => "align-bon",
            Stage::AlignRl => "align-rl",
            Stage::Diagnose => "diagnose",
            Stage::Report => "report",
        }
    }
}

type TableFn = fn(&ReplicateResults, &str) -> Table;

fn stage_tables(stage: Stage) -> Vec<(&'static str, TableFn)> {
    match stage {
        Stage::TrainRms => vec![(RM_ACCURACY, |r, _| rm_accuracy_table(r))],
        Stage::AlignBon => vec![
            (BON_AUTOEVAL, |r, _| bon_autoeval_table(r)),
            (BON_CURVE, |r, _| bon_curve_table(r)),
        ],
        Stage::AlignRl => vec![
            (RLHF, |r, _| rlhf_table(r)),
            (RLHF_FRONTIER, |r, _| rlhf_frontier_table(r)),
            (TRACES, |r, _| traces_table(r)),
            (CORRELATION, |r, _| correlation_table(r)),
        ],
        Stage::Diagnose => vec![
            (AGREEMENT, agreement_table),
            (TOP1, top1_table),
            (PREFERENCE_STATS, |r, _| preference_stats_table(r)),
        ],
        Stage::Gen | Stage::Report => Vec::new(),
    }
}

fn stage_of(err: &Error) -> String {
    match err {
        Error::Stage { stage, .. } => stage.clone(),
        _ => "setup".into(),
    }
}

/// Runs `stages` into the run directory `out`. Stages that consume earlier
/// artifacts read them from `out` unless the producing stage runs too.
/// `Report` emits the plots and finalizes the directory.
pub fn run_stages(cfg: &ExperimentConfig, out: &Path, stages: &[Stage]) -> Result<RunRecord> {
    cfg.validate()?;
    let mut dir = RunDir::open(out, cfg)?;
    match run_in(cfg, &mut dir, stages) {
        Ok(()) => Ok(dir.record.clone()),
        Err(e) => {
            // The partial manifest is best effort; the stage error wins.
            let _ = dir.stage_failed(&stage_of(&e), &e);
            Err(e)
        }
    }
}

/// Every stage, then plots; the directory is finalized on success.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<RunRecord> {
    run_stages(cfg, out, &Stage::ALL)
}

fn run_in(cfg: &ExperimentConfig, dir: &mut RunDir, stages: &[Stage]) -> Result<()> {
    let has = |s: Stage| stages.contains(&s);
    let analysis = [Stage::TrainRms, Stage::AlignBon, Stage::AlignRl, Stage::Diagnose]
        .iter()
        .any(|s| has(*s));
    let rl = has(Stage::AlignRl) && cfg.sweep.rl;
    if has(Stage::AlignRl) && !cfg.sweep.rl {
        dir.notice("RL sweep disabled in the configuration; no RL metrics written");
    }
    let mut results = Vec::with_capacity(cfg.replicates);
    for r in 0..cfg.replicates {
        let seeds = cfg.seeds.replicate(r as u64);
        let data = if has(Stage::Gen) {
            let d = ReplicateData::generate(cfg, &seeds).map_err(|e| e.in_stage("data"))?;
            d.save(dir, r).map_err(|e| e.in_stage("data"))?;
            d
        } else if analysis {
            ReplicateData::load(cfg, &seeds, dir.root(), r).map_err(|e| e.in_stage("data"))?
        } else {
            continue;
        };
        if !analysis {
            continue;
        }
        let grid = if has(Stage::TrainRms) {
            let g = train_models(cfg, &data).map_err(|e| e.in_stage("train"))?;
            save_models(&g, dir, r).map_err(|e| e.in_stage("train"))?;
            g
        } else {
            load_models(cfg, dir.root(), r).map_err(|e| e.in_stage("train"))?
        };
        let mut res = ReplicateResults::default();
        if has(Stage::TrainRms) {
            res.rm = rm_rows(&data, &grid).map_err(|e| e.in_stage("train"))?;
        }
        let ensembles = |aggs| ensemble_entries(cfg, &grid, aggs).map_err(|e| e.in_stage("ensembles"));
        let bon_entries = ensembles(&cfg.sweep.bon_aggregators)?;
        let rl_entries = ensembles(&cfg.sweep.rl_aggregators)?;
        if has(Stage::TrainRms) {
            let mut all = bon_entries.clone();
            for e in &rl_entries {
                if !all.iter().any(|a| a.ensemble == e.ensemble && a.method == e.method) {
                    all.push(e.clone());
                }
            }
            save_ensembles(&all, dir, r).map_err(|e| e.in_stage("ensembles"))?;
        }
        if has(Stage::AlignBon) || has(Stage::Diagnose) {
            let ps = pool_scores(cfg, &data, &grid, &seeds).map_err(|e| e.in_stage("bon"))?;
            if has(Stage::AlignBon) {
                res.bon = bon_rows(cfg, &data, &ps, &bon_entries, &seeds).map_err(|e| e.in_stage("bon"))?;
            }
            if has(Stage::Diagnose) {
                let diag = |e: Error| e.in_stage("diagnostics");
                res.agreement = Some(agreement(&ps, &cfg.bon.n_grid).map_err(diag)?);
                res.top1 = top1_rows(&ps, &cfg.bon.n_grid).map_err(diag)?;
                res.preference_stats = Some(preference_stats(&data).map_err(diag)?);
            }
        }
        if rl {
            let out = rl_sweep(cfg, &data, &grid, &rl_entries, &seeds).map_err(|e| e.in_stage("rl"))?;
            if out.correlation.is_none() {
                dir.notice("grid has one reward model; correlation trace skipped");
            }
            res.rl = Some(out);
        }
        results.push(res);
    }
    if has(Stage::Gen) {
        dir.stage_done("gen")?;
    }
    for stage in [Stage::TrainRms, Stage::AlignBon, Stage::AlignRl, Stage::Diagnose] {
        if !has(stage) || (stage == Stage::AlignRl && !rl) {
            continue;
        }
        write_tables(cfg, dir, stage, &results).map_err(|e| e.in_stage("export"))?;
        dir.stage_done(stage.name())?;
    }
    if has(Stage::Report) {
        let report = emit_plots(dir.root()).map_err(|e| e.in_stage("plots"))?;
        for f in &report.files {
            dir.register(f).map_err(|e| e.in_stage("plots"))?;
        }
        for n in report.notices {
            dir.notice(n);
        }
        dir.stage_done("report")?;
        dir.finalize()?;
    }
    Ok(())
}

fn write_tables(cfg: &ExperimentConfig, dir: &mut RunDir, stage: Stage, results: &[ReplicateResults]) -> Result<()> {
    for (name, build) in stage_tables(stage) {
        let per: Vec<Table> = results.iter().map(|r| build(r, &cfg.scale_tag)).collect();
        for (r, t) in per.iter().enumerate() {
            dir.write_table(&format!("metrics/replicate_{r}/{name}"), t)?;
        }
        dir.write_table(&format!("metrics/{name}"), &average_tables(&per)?)?;
    }
    Ok(())
}
