//! Offline reports over finished sessions: per-session CSVs, a markdown
//! comparison table and SVG best-so-far charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::evaluate::OracleResult;
use super::trace::{write_csv, SessionSummary, TuningTrace};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SessionResult {
    pub trace: TuningTrace,
    pub summary: SessionSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub env: String,
    pub sessions: usize,
    pub default_objective: f64,
    /// Median best-seen objective over sessions.
    pub best_objective: f64,
    pub gain_pct: f64,
    pub oracle: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ReportBundle {
    pub session_csvs: Vec<PathBuf>,
    pub rows: Vec<ComparisonRow>,
    pub table_path: PathBuf,
    pub charts: Vec<PathBuf>,
}

pub fn gain_pct(default: f64, best: f64) -> f64 {
    100.0 * (best - default) / default
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

/// Writes the report bundle for `sessions` into `out`. `oracles` maps an env
/// selection string to its grid optimum.
pub fn report(sessions: &[SessionResult], oracles: &BTreeMap<String, OracleResult>, out: &Path) -> Result<ReportBundle> {
    let first = sessions
        .first()
        .ok_or_else(|| Error::Definition("report needs at least one session".into()))?;
    let m0 = &first.trace.meta;
    for s in sessions {
        let m = &s.trace.meta;
        if m.param_names != m0.param_names || m.metric_names != m0.metric_names || m.weights != m0.weights {
            return Err(Error::Definition(format!(
                "session {} {} seed {} has a different parameter, metric or weight schema",
                m.method, m.env, m.seed
            )));
        }
    }

    let dir = out.join("sessions");
    let mut session_csvs = Vec::new();
    for s in sessions {
        let m = &s.trace.meta;
        let path = dir.join(format!("{}-{}-seed{}.csv", slug(&m.method), slug(&m.env), m.seed));
        write_csv(&path, &s.trace)?;
        session_csvs.push(path);
    }

    let mut groups: BTreeMap<(String, String), Vec<&SessionResult>> = BTreeMap::new();
    for s in sessions {
        groups
            .entry((s.trace.meta.env.clone(), s.trace.meta.method.clone()))
            .or_default()
            .push(s);
    }
    let rows: Vec<ComparisonRow> = groups
        .iter()
        .map(|((env, method), group)| {
            let default = median(&group.iter().map(|s| s.summary.default_objective).collect::<Vec<_>>());
            let best = median(&group.iter().map(|s| s.summary.best_objective).collect::<Vec<_>>());
            ComparisonRow {
                method: method.clone(),
                env: env.clone(),
                sessions: group.len(),
                default_objective: default,
                best_objective: best,
                gain_pct: gain_pct(default, best),
                oracle: oracles.get(env).map(|o| o.objective),
            }
        })
        .collect();

    let mut md = String::from("| env | method | sessions | default | median best | gain vs default (%) | oracle | best / oracle |\n");
    md.push_str("|---|---|---:|---:|---:|---:|---:|---:|\n");
    for r in &rows {
        let (oracle, ratio) = match r.oracle {
            Some(o) => (format!("{o:.4}"), format!("{:.3}", r.best_objective / o)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.4} | {:.4} | {:.1} | {} | {} |",
            r.env, r.method, r.sessions, r.default_objective, r.best_objective, r.gain_pct, oracle, ratio
        );
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let table_path = out.join("comparison.md");
    fs::write(&table_path, md).map_err(|e| Error::io(&table_path, e))?;

    let mut by_env: BTreeMap<&str, Vec<&SessionResult>> = BTreeMap::new();
    for s in sessions {
        by_env.entry(s.trace.meta.env.as_str()).or_default().push(s);
    }
    let chart_dir = out.join("charts");
    fs::create_dir_all(&chart_dir).map_err(|e| Error::io(&chart_dir, e))?;
    let mut charts = Vec::new();
    for (env, group) in by_env {
        let path = chart_dir.join(format!("{}.svg", slug(env)));
        let svg = best_so_far_svg(env, &group, oracles.get(env).map(|o| o.objective));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        charts.push(path);
    }

    Ok(ReportBundle {
        session_csvs,
        rows,
        table_path,
        charts,
    })
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Line chart of best-so-far objective against step, one series per session.
pub fn best_so_far_svg(title: &str, sessions: &[&SessionResult], oracle: Option<f64>) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 420.0, 60.0, 170.0, 30.0, 40.0);
    let max_step = sessions
        .iter()
        .flat_map(|s| s.trace.records.iter().map(|r| r.step))
        .max()
        .unwrap_or(1)
        .max(2) as f64;
    let values = sessions
        .iter()
        .flat_map(|s| s.trace.records.iter().map(|r| r.best_objective))
        .chain(oracle);
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |step: f64| ml + (step - 1.0) / (max_step - 1.0) * (w - ml - mr);
    let y = |v: f64| mt + (hi - v) / (hi - lo) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{ml}" y="18" font-size="13">{}: best objective so far</text>"#, escape(title));
    let (x0, x1, y0, y1) = (ml, w - mr, mt, h - mb);
    let _ = writeln!(s, r#"<path d="M{x0} {y0} V{y1} H{x1}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, ml - 6.0, y(v) + 4.0);
    }
    for i in 0..=4 {
        let step = 1.0 + (max_step - 1.0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x(step),
            h - mb + 16.0,
            step.round()
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">step</text>"#, (x0 + x1) / 2.0, h - 6.0);
    if let Some(o) = oracle {
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" x2="{x1}" y1="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
            y(o),
            y(o)
        );
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" fill="gray">grid optimum</text>"#, x1 + 6.0, y(o) + 4.0);
    }
    for (i, sess) in sessions.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = sess
            .trace
            .records
            .iter()
            .map(|r| format!("{:.1},{:.1}", x(r.step as f64), y(r.best_objective)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let label = format!("{} seed {}", sess.trace.meta.method, sess.trace.meta.seed);
        let ly = mt + 14.0 * (i as f64 + 2.0);
        let _ = writeln!(
            s,
            r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x1 + 6.0,
            x1 + 22.0,
            x1 + 26.0,
            ly + 4.0,
            escape(&label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
