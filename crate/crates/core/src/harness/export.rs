//! Metric tables built from replicate results.

use crate::diagnostics::HackStats;
use crate::error::{Error, Result};

use super::pipeline::ReplicateResults;
use super::table::{Cell, Table};

pub const AGREEMENT: &str = "agreement.csv";
pub const TOP1: &str = "top1.csv";
pub const BON_AUTOEVAL: &str = "bon_autoeval.csv";
pub const BON_CURVE: &str = "bon_curve.csv";
pub const RLHF: &str = "rlhf.csv";
pub const RLHF_FRONTIER: &str = "rlhf_frontier.csv";
pub const TRACES: &str = "traces.csv";
pub const CORRELATION: &str = "correlation.csv";
pub const PREFERENCE_STATS: &str = "preference_stats.csv";
pub const RM_ACCURACY: &str = "rm_accuracy.csv";

/// Columns that identify a row rather than measure something.
pub const KEY_COLUMNS: [&str; 10] = [
    "scale_tag",
    "k",
    "ensemble",
    "method",
    "n",
    "lambda",
    "step",
    "label",
    "pretrain_seed",
    "finetune_seed",
];

pub const HACK_COLUMNS: [&str; 5] = ["mean_len", "mean_copy_lcs", "list_frac", "contains_numeric_frac", "mean_numeric_frac"];

fn hack_cells(h: &HackStats) -> Vec<Cell> {
    vec![
        h.mean_len.into(),
        h.mean_copy_lcs.into(),
        h.list_frac.into(),
        h.contains_numeric_frac.into(),
        h.mean_numeric_frac.into(),
    ]
}

/// Z-score means at n = 1 are zero up to rounding; print them as zero so the
/// three groups coincide exactly.
fn snap(x: Option<f64>) -> Option<f64> {
    x.map(|v| if v.abs() < 1e-12 { 0.0 } else { v })
}

pub fn agreement_table(res: &ReplicateResults, scale_tag: &str) -> Table {
    let mut t = Table::new(&["scale_tag", "k", "diff_pretrain", "same_pretrain", "self"]);
    if let Some(a) = &res.agreement {
        for r in &a.rows {
            t.push(vec![
                scale_tag.into(),
                r.n.into(),
                snap(r.diff_pretrain).into(),
                snap(r.same_pretrain).into(),
                snap(Some(r.self_score)).into(),
            ]);
        }
    }
    t
}

pub fn top1_table(res: &ReplicateResults, scale_tag: &str) -> Table {
    let mut t = Table::new(&["scale_tag", "k", "diff_pretrain", "same_pretrain"]);
    for r in &res.top1 {
        t.push(vec![scale_tag.into(), r.n.into(), r.diff_pretrain.into(), r.same_pretrain.into()]);
    }
    t
}

/// Best-of-n at the largest n.
pub fn bon_autoeval_table(res: &ReplicateResults) -> Table {
    let mut t = Table::new(&["ensemble", "method", "reward", "win_rate"]);
    let max_n = res.bon.iter().map(|r| r.n).max().unwrap_or(0);
    for r in res.bon.iter().filter(|r| r.n == max_n) {
        t.push(vec![r.ensemble.clone().into(), r.method.clone().into(), r.reward.into(), r.win_rate.into()]);
    }
    t
}

pub fn bon_curve_table(res: &ReplicateResults) -> Table {
    let mut t = Table::new(&["ensemble", "method", "n", "reward", "win_rate"]);
    for r in &res.bon {
        t.push(vec![
            r.ensemble.clone().into(),
            r.method.clone().into(),
            r.n.into(),
            r.reward.into(),
            r.win_rate.into(),
        ]);
    }
    t
}

pub fn rlhf_table(res: &ReplicateResults) -> Table {
    let mut t = Table::new(&["ensemble", "method", "lambda", "reward"]);
    for run in res.rl.iter().flat_map(|rl| &rl.runs) {
        if let Some(p) = run.points.last() {
            t.push(vec![run.ensemble.clone().into(), run.method.clone().into(), run.lambda.into(), p.true_reward.into()]);
        }
    }
    t
}

pub fn rlhf_frontier_table(res: &ReplicateResults) -> Table {
    let mut t = Table::new(&["ensemble", "method", "lambda", "kl", "proxy_reward", "reward"]);
    for run in res.rl.iter().flat_map(|rl| &rl.runs) {
        if let Some(p) = run.points.last() {
            t.push(vec![
                run.ensemble.clone().into(),
                run.method.clone().into(),
                run.lambda.into(),
                p.kl_nats.into(),
                p.proxy_reward.into(),
                p.true_reward.into(),
            ]);
        }
    }
    t
}

pub fn traces_table(res: &ReplicateResults) -> Table {
    let mut header = vec!["ensemble", "method", "lambda", "step", "proxy_reward", "true_reward", "kl"];
    header.extend(HACK_COLUMNS);
    let mut t = Table::new(&header);
    for run in res.rl.iter().flat_map(|rl| &rl.runs) {
        for p in &run.points {
            let mut row: Vec<Cell> = vec![
                run.ensemble.clone().into(),
                run.method.clone().into(),
                run.lambda.into(),
                p.step.into(),
                p.proxy_reward.into(),
                p.true_reward.into(),
                p.kl_nats.into(),
            ];
            row.extend(hack_cells(&p.hack));
            t.push(row);
        }
    }
    t
}

pub fn correlation_table(res: &ReplicateResults) -> Table {
    let mut t = Table::new(&["step", "same_pretrain", "diff_pretrain"]);
    for p in res.rl.iter().flat_map(|rl| rl.correlation.iter().flatten()) {
        t.push(vec![p.step.into(), p.same_pretrain.into(), p.diff_pretrain.into()]);
    }
    t
}

pub fn preference_stats_table(res: &ReplicateResults) -> Table {
    let mut header = vec!["label"];
    header.extend(HACK_COLUMNS);
    let mut t = Table::new(&header);
    if let Some((pref, rej)) = &res.preference_stats {
        for (label, h) in [("preferred", pref), ("rejected", rej)] {
            let mut row: Vec<Cell> = vec![label.into()];
            row.extend(hack_cells(h));
            t.push(row);
        }
    }
    t
}

pub fn rm_accuracy_table(res: &ReplicateResults) -> Table {
    let mut t = Table::new(&["pretrain_seed", "finetune_seed", "heldout_accuracy", "selected_step", "mean_score_sum"]);
    for r in &res.rm {
        t.push(vec![
            r.pretrain_seed.into(),
            r.finetune_seed.into(),
            r.heldout_accuracy.into(),
            r.selected_step.into(),
            r.mean_score_sum.into(),
        ]);
    }
    t
}

/// Cell-wise mean of tables with identical layout. Measurement cells are
/// averaged (empty if any replicate is empty); key cells must agree.
pub fn average_tables(tables: &[Table]) -> Result<Table> {
    let first = tables.first().ok_or_else(|| Error::invalid("no tables to average"))?;
    let mut out = first.clone();
    for t in &tables[1..] {
        if t.header != first.header || t.rows.len() != first.rows.len() {
            return Err(Error::invariant("replicate tables differ in layout"));
        }
    }
    for (i, row) in out.rows.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let column: Vec<&Cell> = tables.iter().map(|t| &t.rows[i][j]).collect();
            if KEY_COLUMNS.contains(&first.header[j].as_str()) {
                if column.iter().any(|c| *c != &*cell) {
                    return Err(Error::invariant(format!(
                        "replicate tables disagree on key column `{}`",
                        first.header[j]
                    )));
                }
                continue;
            }
            let nums: Option<Vec<f64>> = column
                .iter()
                .map(|c| match c {
                    Cell::Num(v) => Some(*v),
                    Cell::Int(v) => Some(*v as f64),
                    _ => None,
                })
                .collect();
            *cell = nums.map_or(Cell::Empty, |v| Cell::Num(v.iter().sum::<f64>() / v.len() as f64));
        }
    }
    Ok(out)
}
