//! SVG figures drawn from the exported metric CSVs.

use std::path::Path;

use plotters::coord::Shift;
use plotters::prelude::*;

use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::export::{
    AGREEMENT, BON_AUTOEVAL, CORRELATION, HACK_COLUMNS, PREFERENCE_STATS, RLHF_FRONTIER, TOP1, TRACES,
};
use super::table::RawTable;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlotReport {
    /// Written files, relative to the run directory.
    pub files: Vec<String>,
    pub notices: Vec<String>,
    /// Points drawn on the KL-reward frontier.
    pub frontier_points: usize,
}

type Series = (String, Vec<(f64, f64)>);

struct LineChart {
    file: &'static str,
    title: String,
    x_label: &'static str,
    y_label: String,
    series: Vec<Series>,
    /// Horizontal reference lines.
    bands: Vec<(String, f64)>,
}

struct BarChart {
    file: &'static str,
    title: String,
    bars: Vec<(String, f64)>,
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::invalid(format!("plot rendering failed: {e}"))
}

fn numbers(t: &RawTable, file: &str, col: &str) -> Result<Vec<Option<f64>>> {
    t.numbers(col).map_err(|e| Error::invalid(format!("{file}: {e}")))
}

fn series_by_key(t: &RawTable, file: &str, keys: &[&str], x: &str, y: &str) -> Result<Vec<Series>> {
    let xs = numbers(t, file, x)?;
    let ys = numbers(t, file, y)?;
    let key_cols: Vec<Vec<String>> = keys.iter().map(|k| t.texts(k)).collect::<Result<_>>()?;
    let mut out: Vec<Series> = Vec::new();
    for i in 0..t.rows.len() {
        let name = key_cols.iter().map(|c| c[i].as_str()).collect::<Vec<_>>().join("/");
        if let (Some(a), Some(b)) = (xs[i], ys[i]) {
            match out.iter_mut().find(|s| s.0 == name) {
                Some(s) => s.1.push((a, b)),
                None => out.push((name, vec![(a, b)])),
            }
        }
    }
    Ok(out)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

fn draw_lines(area: &DrawingArea<SVGBackend, Shift>, c: &LineChart) -> Result<()> {
    let pts = || c.series.iter().flat_map(|s| s.1.iter());
    let (x0, x1) = bounds(pts().map(|p| p.0));
    let (y0, y1) = bounds(pts().map(|p| p.1).chain(c.bands.iter().map(|b| b.1)));
    let mut chart = ChartBuilder::on(area)
        .caption(&c.title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(55)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(c.x_label)
        .y_desc(c.y_label.as_str())
        .draw()
        .map_err(plot_err)?;
    for (i, (name, points)) in c.series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 15, y)], color.stroke_width(2)));
        chart
            .draw_series(points.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    for (name, level) in &c.bands {
        let style = BLACK.mix(0.6).stroke_width(1);
        chart
            .draw_series(LineSeries::new([(x0, *level), (x1, *level)], style))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 15, y)], style));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    Ok(())
}

fn render_lines(dir: &Path, c: &LineChart) -> Result<()> {
    let path = dir.join(c.file);
    let area = SVGBackend::new(&path, (800, 500)).into_drawing_area();
    area.fill(&WHITE).map_err(plot_err)?;
    draw_lines(&area, c)?;
    area.present().map_err(plot_err)
}

fn render_panels(dir: &Path, file: &str, panels: &[LineChart]) -> Result<()> {
    let path = dir.join(file);
    let area = SVGBackend::new(&path, (800, 320 * panels.len() as u32)).into_drawing_area();
    area.fill(&WHITE).map_err(plot_err)?;
    for (sub, c) in area.split_evenly((panels.len(), 1)).iter().zip(panels) {
        draw_lines(sub, c)?;
    }
    area.present().map_err(plot_err)
}

fn render_bars(dir: &Path, c: &BarChart) -> Result<()> {
    let path = dir.join(c.file);
    let area = SVGBackend::new(&path, (900, 500)).into_drawing_area();
    area.fill(&WHITE).map_err(plot_err)?;
    let k = c.bars.len();
    let names: Vec<String> = c.bars.iter().map(|b| b.0.clone()).collect();
    let mut chart = ChartBuilder::on(&area)
        .caption(&c.title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(60)
        .y_label_area_size(55)
        .build_cartesian_2d(-0.5..k as f64 - 0.5, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(k)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 {
                names.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("win rate vs reference")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(c.bars.iter().enumerate().map(|(i, (_, v))| {
            let x = i as f64;
            Rectangle::new([(x - 0.35, 0.0), (x + 0.35, *v)], Palette99::pick(i).filled())
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new([(-0.5, 0.5), (k as f64 - 0.5, 0.5)], BLACK.mix(0.5)))
        .map_err(plot_err)?;
    area.present().map_err(plot_err)
}

/// Reads `metrics/*.csv` under `run_dir` and writes every figure into
/// `run_dir/plots`. All inputs are read and checked before anything is
/// drawn; missing or empty inputs are an error and no plot is written.
/// RL figures are skipped, with a notice, when the run had no RL sweep.
pub fn emit_plots(run_dir: &Path) -> Result<PlotReport> {
    let cfg = ExperimentConfig::load(&run_dir.join("config.toml"))?;
    let metrics = run_dir.join("metrics");
    let mut report = PlotReport::default();
    let mut required = vec![AGREEMENT, TOP1, BON_AUTOEVAL];
    if cfg.sweep.rl {
        required.extend([RLHF_FRONTIER, TRACES, CORRELATION, PREFERENCE_STATS]);
    } else {
        report
            .notices
            .push("no RL sweep in this run; frontier, correlation and hack-stat plots skipped".into());
    }
    let missing: Vec<&str> = required.iter().copied().filter(|f| !metrics.join(f).exists()).collect();
    if !missing.is_empty() {
        return Err(Error::Missing(format!("metrics CSVs absent: {}", missing.join(", "))));
    }
    let mut tables = std::collections::HashMap::new();
    for f in &required {
        let t = RawTable::read(&metrics.join(f))?;
        // A single-model grid legitimately has no correlation rows.
        if t.rows.is_empty() && *f != CORRELATION {
            return Err(Error::invalid(format!("metrics/{f} has no rows")));
        }
        tables.insert(*f, t);
    }

    let mut lines = Vec::new();
    let mut panels = Vec::new();
    let t = &tables[AGREEMENT];
    let k = numbers(t, AGREEMENT, "k")?;
    let mut groups = Vec::new();
    for col in ["self", "same_pretrain", "diff_pretrain"] {
        let ys = numbers(t, AGREEMENT, col)?;
        let pts: Vec<(f64, f64)> = k
            .iter()
            .zip(&ys)
            .filter_map(|(x, y)| Some((x.unwrap_or(f64::NAN).log2(), (*y)?)))
            .collect();
        if !pts.is_empty() {
            groups.push((col.to_string(), pts));
        }
    }
    lines.push(LineChart {
        file: "agreement.svg",
        title: "Z-scored reward of best-of-n picks by scoring group".into(),
        x_label: "log2 n",
        y_label: "mean Z-score".into(),
        series: groups,
        bands: Vec::new(),
    });

    let t = &tables[TOP1];
    let k = numbers(t, TOP1, "k")?;
    let mut groups = Vec::new();
    for col in ["same_pretrain", "diff_pretrain"] {
        let ys = numbers(t, TOP1, col)?;
        let pts: Vec<(f64, f64)> = k
            .iter()
            .zip(&ys)
            .filter_map(|(x, y)| Some((x.unwrap_or(f64::NAN).log2(), (*y)?)))
            .collect();
        if !pts.is_empty() {
            groups.push((col.to_string(), pts));
        }
    }
    lines.push(LineChart {
        file: "top1.svg",
        title: "Top-1 agreement between reward models".into(),
        x_label: "log2 n",
        y_label: "agreement".into(),
        series: groups,
        bands: Vec::new(),
    });

    let t = &tables[BON_AUTOEVAL];
    let ens = t.texts("ensemble")?;
    let methods = t.texts("method")?;
    let wins = numbers(t, BON_AUTOEVAL, "win_rate")?;
    let bars = BarChart {
        file: "win_rate.svg",
        title: "Best-of-n win rate at the largest n".into(),
        bars: ens
            .iter()
            .zip(&methods)
            .zip(&wins)
            .map(|((e, m), w)| (if m == "n/a" { e.clone() } else { format!("{e}/{m}") }, w.unwrap_or(f64::NAN)))
            .collect(),
    };

    if cfg.sweep.rl {
        let t = &tables[RLHF_FRONTIER];
        let series = series_by_key(t, RLHF_FRONTIER, &["ensemble", "method"], "kl", "reward")?;
        report.frontier_points = series.iter().map(|s| s.1.len()).sum();
        lines.push(LineChart {
            file: "frontier.svg",
            title: "KL-reward frontier (one point per lambda)".into(),
            x_label: "KL(policy || reference), nats",
            y_label: "true reward".into(),
            series,
            bands: Vec::new(),
        });

        let t = &tables[CORRELATION];
        if t.rows.is_empty() {
            report.notices.push("correlation trace is empty (single-model grid); plot skipped".into());
        } else {
            let mut series = Vec::new();
            for col in ["same_pretrain", "diff_pretrain"] {
                let s = series_by_key(t, CORRELATION, &[], "step", col)?;
                if let Some((_, pts)) = s.into_iter().next() {
                    series.push((col.to_string(), pts));
                }
            }
            lines.push(LineChart {
                file: "correlation.svg",
                title: "Rank correlation between reward models during alignment".into(),
                x_label: "step",
                y_label: "mean Spearman".into(),
                series,
                bands: Vec::new(),
            });
        }

        let traces = &tables[TRACES];
        let lambdas = numbers(traces, TRACES, "lambda")?;
        let lowest = lambdas.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let keep: Vec<usize> = (0..traces.rows.len()).filter(|&i| lambdas[i] == Some(lowest)).collect();
        let sub = super::table::RawTable {
            header: traces.header.clone(),
            rows: keep.iter().map(|&i| traces.rows[i].clone()).collect(),
        };
        let prefs = &tables[PREFERENCE_STATS];
        let labels = prefs.texts("label")?;
        for col in HACK_COLUMNS {
            let levels = numbers(prefs, PREFERENCE_STATS, col)?;
            panels.push(LineChart {
                file: "hack_stats.svg",
                title: format!("{col} at lambda = {lowest}"),
                x_label: "step",
                y_label: col.to_string(),
                series: series_by_key(&sub, TRACES, &["ensemble", "method"], "step", col)?,
                bands: labels
                    .iter()
                    .zip(&levels)
                    .filter_map(|(l, v)| Some((format!("{l} (RM data)"), (*v)?)))
                    .collect(),
            });
        }
    }

    let plot_dir = run_dir.join("plots");
    std::fs::create_dir_all(&plot_dir)?;
    let mut written = Vec::new();
    let mut draw = || -> Result<()> {
        for c in &lines {
            render_lines(&plot_dir, c)?;
            written.push(c.file.to_string());
        }
        render_bars(&plot_dir, &bars)?;
        written.push(bars.file.to_string());
        if !panels.is_empty() {
            render_panels(&plot_dir, "hack_stats.svg", &panels)?;
            written.push("hack_stats.svg".to_string());
        }
        Ok(())
    };
    if let Err(e) = draw() {
        for f in &written {
            let _ = std::fs::remove_file(plot_dir.join(f));
        }
        return Err(e);
    }
    report.files = written.iter().map(|f| format!("plots/{f}")).collect();
    Ok(report)
}
