//! Result files: CSV tables, Markdown tables, SVG line charts and a checksum
//! manifest. Files are assembled in memory and written together; a failed
//! write removes everything already written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{Aggregate, FrontierPoint, RunResult, Stat, StepSample, SweepResult, METRICS};
use crate::scenario::Scenario;

/// Name of the manifest written last into every output directory.
pub const MANIFEST: &str = "manifest.json";

/// Fixed-width scientific notation with 17 significant digits, so every
/// value round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Emitted directory and checksums of its files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputBundle {
    #[serde(skip)]
    pub dir: PathBuf,
    pub files: Vec<ManifestEntry>,
}

/// Collects files before writing them in one go.
#[derive(Debug, Default)]
pub struct OutputWriter {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, content: impl Into<Vec<u8>>) {
        self.files.push((name.into(), content.into()));
    }

    /// Writes every file plus the manifest into `dir`. On failure, files
    /// written so far are removed.
    pub fn finish(self, dir: &Path) -> Result<OutputBundle> {
        let io = |path: &Path, source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut entries = Vec::new();
        let mut written: Vec<PathBuf> = Vec::new();
        let outcome = (|| {
            for (name, content) in &self.files {
                let path = dir.join(name);
                fs::write(&path, content).map_err(|e| io(&path, e))?;
                written.push(path);
                entries.push(ManifestEntry {
                    file: name.clone(),
                    sha256: format!("{:x}", Sha256::digest(content)),
                    bytes: content.len(),
                });
            }
            let bundle = OutputBundle {
                dir: dir.to_path_buf(),
                files: entries.clone(),
            };
            let path = dir.join(MANIFEST);
            let manifest = serde_json::to_string_pretty(&bundle).expect("manifest serialises") + "\n";
            fs::write(&path, manifest).map_err(|e| io(&path, e))?;
            Ok(bundle)
        })();
        if outcome.is_err() {
            for path in &written {
                let _ = fs::remove_file(path);
            }
        }
        outcome
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn join_times(ts: &[f64]) -> String {
    ts.iter().map(|&t| fmt_f64(t)).collect::<Vec<_>>().join(";")
}

/// One row per run, labelled by the batch it belongs to.
pub fn runs_csv(batches: &[(String, &[RunResult])]) -> Vec<u8> {
    let header = [
        "batch",
        "seed",
        "mean_travel_time_min",
        "objective_per_vehicle_min",
        "accidents_total",
        "accidents_a",
        "accidents_b",
        "entered",
        "completed",
        "unfinished",
        "invocations",
        "switches",
        "switch_times_h",
        "conservation_violations",
    ];
    let rows = batches.iter().flat_map(|(label, runs)| {
        runs.iter().map(move |r| {
            vec![
                label.clone(),
                r.seed.to_string(),
                fmt_f64(r.mean_travel_time),
                fmt_f64(r.objective_per_vehicle),
                r.accidents_total.to_string(),
                r.accidents_by_reservoir[0].to_string(),
                r.accidents_by_reservoir[1].to_string(),
                r.entered.to_string(),
                r.completed.to_string(),
                r.unfinished.to_string(),
                r.invocations.to_string(),
                r.switch_times.len().to_string(),
                join_times(&r.switch_times),
                r.conservation_violations.to_string(),
            ]
        })
    });
    csv_bytes(&header, rows)
}

/// Mean, standard error and percent change against the baseline for every
/// metric of every batch.
pub fn aggregate_csv(rows: &[(String, &Aggregate, &Aggregate)]) -> Vec<u8> {
    let header = ["batch", "metric", "n_runs", "n_failed", "mean", "se", "pct_change_vs_baseline"];
    let out = rows.iter().flat_map(|(label, agg, base)| {
        METRICS.iter().map(move |&m| {
            let s = agg.metric(m).expect("known metric");
            let b = base.metric(m).expect("known metric");
            vec![
                label.clone(),
                m.to_string(),
                agg.n_runs.to_string(),
                agg.n_failed.to_string(),
                fmt_f64(s.mean),
                fmt_f64(s.se),
                fmt_f64(s.pct_change(&b)),
            ]
        })
    });
    csv_bytes(&header, out)
}

/// Mean B to A transfer flow per bin: baseline and each controlled batch.
pub fn flow_comparison_csv(baseline: &Aggregate, controlled: &[(String, &Aggregate)]) -> Vec<u8> {
    let mut header = vec!["t_min".to_string(), "baseline_veh_h".to_string()];
    header.extend(controlled.iter().map(|(l, _)| format!("{l}_veh_h")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = baseline.mean_flow.iter().enumerate().map(|(i, &(t, q))| {
        let mut row = vec![fmt_f64(t * 60.0), fmt_f64(q)];
        row.extend(controlled.iter().map(|(_, a)| fmt_f64(a.mean_flow[i].1)));
        row
    });
    csv_bytes(&header_refs, rows)
}

pub fn frontier_csv(points: &[FrontierPoint]) -> Vec<u8> {
    let header = ["theta", "t_star_min", "predicted_cost", "mean_accidents", "std_accidents"];
    let rows = points.iter().map(|p| {
        vec![
            fmt_f64(p.theta),
            fmt_f64(p.t_star * 60.0),
            fmt_f64(p.cost),
            fmt_f64(p.mean_accidents),
            fmt_f64(p.std_accidents),
        ]
    });
    csv_bytes(&header, rows)
}

pub fn timeseries_csv(samples: &[StepSample]) -> Vec<u8> {
    let header = [
        "t_h", "n_a", "n_b", "v_a", "v_b", "transfer_ba", "transfer_ab", "queue_ba", "queue_ab", "completions",
    ];
    let rows = samples.iter().map(|s| {
        vec![
            fmt_f64(s.t),
            s.n_a.to_string(),
            s.n_b.to_string(),
            fmt_f64(s.v_a),
            fmt_f64(s.v_b),
            s.transfer_ba.to_string(),
            s.transfer_ab.to_string(),
            s.queue_ba.to_string(),
            s.queue_ab.to_string(),
            s.completions.to_string(),
        ]
    });
    csv_bytes(&header, rows)
}

pub fn accidents_csv(run: &RunResult) -> Vec<u8> {
    let header = ["t_h", "reservoir", "lambda_per_h", "chi_after"];
    let rows = run.accidents.iter().map(|a| {
        vec![
            fmt_f64(a.t),
            a.reservoir.to_string(),
            fmt_f64(a.lambda),
            fmt_f64(a.chi_after),
        ]
    });
    csv_bytes(&header, rows)
}

fn pct(x: f64) -> String {
    format!("{x:+.1}%")
}

fn pm(s: &Stat) -> String {
    format!("{:.2} ± {:.2}", s.mean, s.se)
}

/// Rows of the Markdown tables: one per rate, one column per trade-off weight.
pub struct TableRow<'a> {
    pub label: String,
    pub baseline: &'a Aggregate,
    /// `(weight, controlled, baseline scored with the same weight)`.
    pub cells: Vec<(f64, &'a Aggregate, &'a Aggregate)>,
}

/// Delay/objective and accident tables in the layout of the published
/// results, with percent changes against the uncontrolled baseline.
pub fn tables_md(title: &str, rows: &[TableRow<'_>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {title}\n");
    let _ = writeln!(
        out,
        "Pairs are (mean travel time [min/veh], objective per vehicle [min/veh]); \
         percentages are (controlled − baseline) / baseline for both members, the baseline \
         objective being scored with the same weight. The no-control column shows the mean travel time. \
         Values are means ± standard errors over the Monte-Carlo runs.\n"
    );
    let weights: Vec<f64> = rows.first().map(|r| r.cells.iter().map(|c| c.0).collect()).unwrap_or_default();
    let head = |out: &mut String| {
        let _ = write!(out, "| scenario | no control |");
        for w in &weights {
            let _ = write!(out, " weight {w:.3} |");
        }
        let _ = writeln!(out);
        let _ = write!(out, "|---|---|");
        for _ in &weights {
            let _ = write!(out, "---|");
        }
        let _ = writeln!(out);
    };

    let _ = writeln!(out, "## Travel time and objective\n");
    head(&mut out);
    for row in rows {
        let _ = write!(out, "| {} | {:.2} |", row.label, row.baseline.mean_travel_time.mean);
        for (_, a, b) in &row.cells {
            let _ = write!(
                out,
                " ({:.2}, {:.2}) ({}, {}) |",
                a.mean_travel_time.mean,
                a.objective_per_vehicle.mean,
                pct(a.mean_travel_time.pct_change(&b.mean_travel_time)),
                pct(a.objective_per_vehicle.pct_change(&b.objective_per_vehicle)),
            );
        }
        let _ = writeln!(out);
    }

    let _ = writeln!(out, "\n## Accidents\n");
    head(&mut out);
    for row in rows {
        let b = row.baseline;
        let _ = write!(out, "| {} | {} |", row.label, pm(&b.accidents_total));
        for (_, a, _) in &row.cells {
            let _ = write!(
                out,
                " {} ({}) |",
                pm(&a.accidents_total),
                pct(a.accidents_total.pct_change(&b.accidents_total))
            );
        }
        let _ = writeln!(out);
    }

    let _ = writeln!(out, "\n## Runs\n");
    for row in rows {
        let _ = writeln!(
            out,
            "- {}: {} runs per cell ({} failed in the baseline); mean unfinished vehicles at the horizon end {:.1} (baseline)",
            row.label, row.baseline.n_runs, row.baseline.n_failed, row.baseline.unfinished.mean
        );
    }
    out
}

/// Markdown section listing the risk-aversion frontier.
pub fn frontier_md(points: &[FrontierPoint]) -> String {
    let mut out = String::from("\n## Risk-aversion frontier (predicted at t = 0)\n\n| theta | t* [min] | E[N_acc] | Std[N_acc] |\n|---|---|---|---|\n");
    for p in points {
        let _ = writeln!(
            out,
            "| {:.2} | {:.2} | {:.4} | {:.4} |",
            p.theta,
            p.t_star * 60.0,
            p.mean_accidents,
            p.std_accidents
        );
    }
    out
}

/// Table rows of a sweep, one per rate variant.
pub fn sweep_rows(result: &SweepResult) -> Vec<TableRow<'_>> {
    result
        .baselines
        .iter()
        .map(|(rate, batch)| TableRow {
            label: format!("{} accident rate", rate.name()),
            baseline: &batch.aggregate,
            cells: result
                .cells
                .iter()
                .filter(|c| c.rate == *rate)
                .map(|c| (c.lambda_tradeoff, &c.batch.aggregate, &c.baseline))
                .collect(),
        })
        .collect()
}

const SVG_W: f64 = 720.0;
const SVG_H: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Minimal SVG line chart of one or more `(x, y)` series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = series.iter().flat_map(|(_, s)| s.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x0 = 0.0;
        x1 = 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (SVG_W - 2.0 * MARGIN);
    let sy = |y: f64| SVG_H - MARGIN - (y - y0) / (y1 - y0) * (SVG_H - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, SVG_W / 2.0, escape(title));
    let (left, right, top, bottom) = (MARGIN, SVG_W - MARGIN, MARGIN, SVG_H - MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{left},{top} L{left},{bottom} L{right},{bottom}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(fx), bottom + 18.0, tick(fx));
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, sy(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, SVG_W / 2.0, SVG_H - 16.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        SVG_H / 2.0,
        SVG_H / 2.0,
        escape(y_label)
    );
    for (i, (name, s)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(out, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, right - 150.0, right - 130.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, right - 125.0, ly + 4.0, escape(name));
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Flow-comparison chart over minutes.
pub fn flow_chart(baseline: &Aggregate, controlled: &[(String, &Aggregate)]) -> String {
    let to_min = |a: &Aggregate| a.mean_flow.iter().map(|&(t, q)| (t * 60.0, q)).collect::<Vec<_>>();
    let mut series = vec![("no control".to_string(), to_min(baseline))];
    series.extend(controlled.iter().map(|(l, a)| (l.clone(), to_min(a))));
    line_chart("Mean B→A transfer flow", "time [min]", "flow [veh/h]", &series)
}

pub fn frontier_chart(points: &[FrontierPoint]) -> String {
    let s: Vec<(f64, f64)> = points.iter().map(|p| (p.std_accidents, p.mean_accidents)).collect();
    line_chart("Risk-aversion frontier", "Std[N_acc]", "E[N_acc]", &[("theta sweep".into(), s)])
}

/// Serialised scenario as used, so the bundle records its inputs.
pub fn scenario_json(scenario: &Scenario) -> String {
    scenario.to_json() + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_with_seventeen_digits() {
        for x in [0.1, 1.0 / 3.0, 123456.789, 1e-12, -2.5] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert!(mantissa.len() >= 15, "{s}");
        }
    }

    #[test]
    fn failed_write_removes_partial_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = OutputWriter::new();
        w.add("a.csv", "x\n");
        w.add("missing/b.csv", "y\n");
        assert!(w.finish(dir.path()).is_err());
        assert!(!dir.path().join("a.csv").exists());
        assert!(!dir.path().join(MANIFEST).exists());
    }

    #[test]
    fn manifest_lists_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = OutputWriter::new();
        w.add("a.csv", "x\n1\n");
        w.add("b.svg", "<svg/>");
        let bundle = w.finish(dir.path()).unwrap();
        let names: Vec<_> = bundle.files.iter().map(|e| e.file.as_str()).collect();
        assert_eq!(names, ["a.csv", "b.svg"]);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.contains(&bundle.files[0].sha256));
    }
}
