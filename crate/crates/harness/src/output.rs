//! CSV and SVG artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use banditlab_core::trace::RegretTrace;

use crate::error::{HarnessError, Result};
use crate::experiment::{
    aggregate, dynamics_metrics, DiagnosticsRow, ExperimentResult, RegretCurvePoint, SeedInfo, SweepEntry,
};

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| HarnessError::csv(path, e))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| HarnessError::csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

pub fn write_regret_curve(path: &Path, curve: &[RegretCurvePoint]) -> Result<()> {
    write_rows(
        path,
        &["t", "mean_cum_regret", "stderr", "seeds"],
        curve
            .iter()
            .map(|p| vec![p.t.to_string(), p.mean.to_string(), p.stderr.to_string(), p.seeds.to_string()]),
    )
}

pub fn write_trace(path: &Path, trace: &RegretTrace) -> Result<()> {
    write_rows(
        path,
        &["t", "action", "reward", "instant_regret", "cumulative_regret", "explored", "agent", "q_hash"],
        trace.steps.iter().map(|s| {
            vec![
                s.t.to_string(),
                s.action.to_string(),
                s.reward.to_string(),
                s.instant_regret.to_string(),
                s.cumulative_regret.to_string(),
                u8::from(s.explored).to_string(),
                s.agent.map_or(String::new(), |a| a.to_string()),
                s.q_hash.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_dynamics(path: &Path, trace: &RegretTrace, oracle_index: usize) -> Result<()> {
    write_rows(
        path,
        &["t", "visited", "visited_fraction", "q_oracle", "oracle_rank"],
        dynamics_metrics(trace, oracle_index).into_iter().map(|d| {
            vec![
                d.t.to_string(),
                d.visited.to_string(),
                d.visited_fraction.to_string(),
                d.q_oracle.to_string(),
                d.oracle_rank.to_string(),
            ]
        }),
    )
}

pub fn write_instance(path: &Path, seeds: &[SeedInfo]) -> Result<()> {
    write_rows(
        path,
        &["seed", "oracle_index", "oracle_model", "best_action", "best_value", "census"],
        seeds.iter().map(|s| {
            let model: Vec<String> = s.oracle_model.iter().map(|k| k.to_string()).collect();
            vec![
                s.seed.to_string(),
                s.oracle_index.to_string(),
                model.join(" "),
                s.best_action.to_string(),
                s.best_value.to_string(),
                s.census.to_string(),
            ]
        }),
    )
}

pub fn write_diagnostics(path: &Path, rows: &[DiagnosticsRow]) -> Result<()> {
    write_rows(
        path,
        &["seed", "t", "s", "kappa_hat", "lambda_min_empirical", "method", "cmin_uniform"],
        rows.iter().map(|r| {
            vec![
                r.seed.to_string(),
                r.report.t.to_string(),
                r.report.s.to_string(),
                r.report.kappa_hat.to_string(),
                r.report.lambda_min_empirical.to_string(),
                r.report.method.as_str().to_string(),
                r.cmin_uniform.to_string(),
            ]
        }),
    )
}

pub fn write_sweep(path: &Path, entries: &[SweepEntry]) -> Result<()> {
    write_rows(
        path,
        &["rank", "algorithm", "params", "mean_final_regret", "stderr"],
        entries.iter().map(|e| {
            vec![
                e.rank.to_string(),
                e.spec.name().to_string(),
                e.spec.describe(),
                e.mean_regret.to_string(),
                e.stderr.to_string(),
            ]
        }),
    )
}

/// Writes every artifact of a run and returns the paths written.
pub fn emit_outputs(result: &ExperimentResult, dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if result.runs.is_empty() {
        return Ok(written);
    }
    ensure_dir(dir)?;
    let path = dir.join("instance.csv");
    write_instance(&path, &result.seeds)?;
    written.push(path);

    let mut curves = Vec::with_capacity(result.runs.len());
    for run in &result.runs {
        let name = run.spec.name();
        let curve = aggregate(&run.traces);
        let path = dir.join(format!("regret_{name}.csv"));
        write_regret_curve(&path, &curve)?;
        written.push(path);
        for (trace, info) in run.traces.iter().zip(&result.seeds) {
            let path = dir.join(format!("trace_{name}_{}.csv", trace.seed));
            write_trace(&path, trace)?;
            written.push(path);
            if run.spec.has_distribution() {
                let path = dir.join(format!("dynamics_{name}_{}.csv", trace.seed));
                write_dynamics(&path, trace, info.oracle_index)?;
                written.push(path);
            }
        }
        curves.push((name.to_string(), curve));
    }
    if svg {
        let path = dir.join("summary.svg");
        fs::write(&path, render_svg(&curves)).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_regret_curve(path: &Path) -> Result<Vec<RegretCurvePoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| HarnessError::csv(path, e))?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| HarnessError::Config(format!("{}: short row", path.display())))
        };
        let parse_err = |_| HarnessError::Config(format!("{}: malformed number", path.display()));
        out.push(RegretCurvePoint {
            t: field(0)?.parse().map_err(|_| HarnessError::Config(format!("{}: malformed t", path.display())))?,
            mean: field(1)?.parse().map_err(parse_err)?,
            stderr: field(2)?.parse().map_err(parse_err)?,
            seeds: field(3)?.parse().map_err(|_| HarnessError::Config(format!("{}: malformed seeds", path.display())))?,
        });
    }
    Ok(out)
}

/// Rebuilds `summary.svg` from the `regret_*.csv` files in `dir`.
pub fn plot_dir(dir: &Path) -> Result<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("regret_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(HarnessError::Config(format!("no regret_*.csv files in {}", dir.display())));
    }
    let mut curves = Vec::new();
    for f in &files {
        let name = f
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("regret_"))
            .unwrap_or_default()
            .to_string();
        curves.push((name, read_regret_curve(f)?));
    }
    let path = dir.join("summary.svg");
    fs::write(&path, render_svg(&curves)).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Mean regret polylines with a one-standard-error band per algorithm.
pub fn render_svg(curves: &[(String, Vec<RegretCurvePoint>)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let t_max = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|p| p.t))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let y_max = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|p| p.mean + p.stderr))
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max)
        .max(1e-12);
    let sx = |t: usize| pad + (t as f64 / t_max) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - (v / y_max).clamp(0.0, 1.0) * (h - 2.0 * pad);

    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{r}\" y=\"{lb}\" font-size=\"12\" text-anchor=\"end\">t = {t_max}</text>\n\
         <text x=\"4\" y=\"{lt}\" font-size=\"12\">R = {y_max:.3}</text>\n",
        b = h - pad,
        r = w - pad,
        lb = h - pad + 20.0,
        lt = pad - 6.0,
    );
    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let upper: Vec<String> = curve
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.t), sy(p.mean + p.stderr)))
            .collect();
        let lower: Vec<String> = curve
            .iter()
            .rev()
            .map(|p| format!("{:.2},{:.2}", sx(p.t), sy((p.mean - p.stderr).max(0.0))))
            .collect();
        let mean: Vec<String> = curve
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.t), sy(p.mean)))
            .collect();
        out.push_str(&format!(
            "<polygon points=\"{} {}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n",
            upper.join(" "),
            lower.join(" ")
        ));
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            mean.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            pad + 10.0,
            pad + 16.0 * (i as f64 + 1.0)
        ));
    }
    out.push_str("</svg>\n");
    out
}
