//! Aggregation of experiment output into summary tables and SVG figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::experiment::{ExperimentReport, Method, Objective, OosRow};
use super::PerturbationSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    preset: String,
    method: Method,
    objective: Objective,
    n_sub: usize,
    bandwidth_bits: u64,
}

impl Key {
    fn label(&self) -> String {
        let mut s = format!("{}-{}", self.method.name(), self.objective.name());
        if self.n_sub != 1000 {
            let _ = write!(s, " N'={}", self.n_sub);
        }
        if self.method == Method::Cso && self.bandwidth() != 1.0 {
            let _ = write!(s, " h={}", self.bandwidth());
        }
        s
    }

    fn bandwidth(&self) -> f64 {
        f64::from_bits(self.bandwidth_bits)
    }
}

/// Cross-replication averages for one (preset, model, perturbation) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OosGroup {
    pub preset: String,
    pub method: Method,
    pub objective: Objective,
    pub n_sub: usize,
    pub bandwidth: f64,
    pub perturbation: PerturbationSet,
    pub reps: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub p95_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleGroup {
    pub preset: String,
    pub method: Method,
    pub objective: Objective,
    pub n_sub: usize,
    pub bandwidth: f64,
    pub reps: usize,
    pub x_mean: Vec<f64>,
    pub in_sample_mean: f64,
    pub gap_max: f64,
    pub converged: usize,
    pub seconds_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportSummary {
    pub oos: Vec<OosGroup>,
    pub schedules: Vec<ScheduleGroup>,
    pub files: Vec<PathBuf>,
}

impl ReportSummary {
    /// Looks up an out-of-sample cell.
    pub fn oos_cell(
        &self,
        preset: &str,
        method: Method,
        objective: Objective,
        perturbation: PerturbationSet,
    ) -> Option<&OosGroup> {
        self.oos.iter().find(|g| {
            g.preset == preset && g.method == method && g.objective == objective && g.perturbation == perturbation
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Aggregates an in-memory report.
pub fn summarize_report(report: &ExperimentReport) -> ReportSummary {
    let mut oos: BTreeMap<(Key, PerturbationSet), Vec<&OosRow>> = BTreeMap::new();
    for r in &report.oos {
        let key = Key {
            preset: r.preset.clone(),
            method: r.method,
            objective: r.objective,
            n_sub: r.n_sub,
            bandwidth_bits: r.bandwidth.to_bits(),
        };
        oos.entry((key, r.perturbation)).or_default().push(r);
    }
    let oos = oos
        .into_iter()
        .map(|((k, p), rows)| {
            let col = |f: fn(&OosRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
            let p95 = col(|r| r.p95);
            OosGroup {
                preset: k.preset.clone(),
                method: k.method,
                objective: k.objective,
                n_sub: k.n_sub,
                bandwidth: k.bandwidth(),
                perturbation: p,
                reps: rows.len(),
                mean: mean(&col(|r| r.mean)),
                p50: mean(&col(|r| r.p50)),
                p90: mean(&col(|r| r.p90)),
                p95: mean(&p95),
                p99: mean(&col(|r| r.p99)),
                p95_sd: sd(&p95),
            }
        })
        .collect();

    let mut sched: BTreeMap<Key, Vec<&super::ScheduleRow>> = BTreeMap::new();
    for r in &report.schedules {
        let key = Key {
            preset: r.preset.clone(),
            method: r.method,
            objective: r.objective,
            n_sub: r.n_sub,
            bandwidth_bits: r.bandwidth.to_bits(),
        };
        sched.entry(key).or_default().push(r);
    }
    let schedules = sched
        .into_iter()
        .map(|(k, rows)| {
            let n = rows.iter().map(|r| r.x.len()).max().unwrap_or(0);
            let x_mean = (0..n).map(|j| mean(&rows.iter().filter_map(|r| r.x.get(j).copied()).collect::<Vec<_>>()));
            ScheduleGroup {
                preset: k.preset.clone(),
                method: k.method,
                objective: k.objective,
                n_sub: k.n_sub,
                bandwidth: k.bandwidth(),
                reps: rows.len(),
                x_mean: x_mean.collect(),
                in_sample_mean: mean(&rows.iter().map(|r| r.in_sample).collect::<Vec<_>>()),
                gap_max: rows.iter().map(|r| r.gap).fold(0.0, f64::max),
                converged: rows.iter().filter(|r| r.converged).count(),
                seconds_mean: mean(&rows.iter().map(|r| r.seconds).collect::<Vec<_>>()),
            }
        })
        .collect();
    ReportSummary { oos, schedules, files: Vec::new() }
}

/// Reads an experiment directory and writes `summary_oos.csv`,
/// `summary_schedules.csv` and one `schedules_<preset>.svg` and
/// `oos_<preset>.svg` per preset into `out_dir`.
pub fn write_report(in_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<ReportSummary> {
    let report = ExperimentReport::read_dir(in_dir)?;
    if report.schedules.is_empty() {
        return Err(Error::Data("experiment directory has no schedules".into()));
    }
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    let mut summary = summarize_report(&report);

    let path = out.join("summary_oos.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for g in &summary.oos {
        w.serialize(g)?;
    }
    w.flush()?;
    summary.files.push(path);

    let path = out.join("summary_schedules.csv");
    let n = summary.schedules.iter().map(|g| g.x_mean.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> =
        ["preset", "method", "objective", "n_sub", "bandwidth", "reps"].map(String::from).to_vec();
    header.extend((1..=n).map(|k| format!("x_{k}")));
    header.extend(["in_sample_mean", "gap_max", "converged", "seconds_mean"].map(String::from));
    w.write_record(&header)?;
    for g in &summary.schedules {
        let mut row = vec![
            g.preset.clone(),
            g.method.name().into(),
            g.objective.name().into(),
            g.n_sub.to_string(),
            g.bandwidth.to_string(),
            g.reps.to_string(),
        ];
        row.extend((0..n).map(|k| g.x_mean.get(k).map_or(String::new(), |v| format!("{v:.4}"))));
        row.extend([
            format!("{:.4}", g.in_sample_mean),
            format!("{:.5}", g.gap_max),
            g.converged.to_string(),
            format!("{:.3}", g.seconds_mean),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    summary.files.push(path);

    let presets: Vec<String> = {
        let mut p: Vec<String> = summary.schedules.iter().map(|g| g.preset.clone()).collect();
        p.dedup();
        p
    };
    for preset in presets {
        let series: Vec<(String, Vec<f64>)> = summary
            .schedules
            .iter()
            .filter(|g| g.preset == preset)
            .map(|g| {
                let key = Key {
                    preset: g.preset.clone(),
                    method: g.method,
                    objective: g.objective,
                    n_sub: g.n_sub,
                    bandwidth_bits: g.bandwidth.to_bits(),
                };
                (key.label(), g.x_mean.clone())
            })
            .collect();
        let path = out.join(format!("schedules_{preset}.svg"));
        std::fs::write(&path, line_chart(&format!("{preset}: mean allocation per slot"), "slot", "minutes", &series))?;
        summary.files.push(path);

        let mut boxes: Vec<(String, Vec<f64>)> = Vec::new();
        let mut cells: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
        for r in report.oos.iter().filter(|r| r.preset == preset && r.perturbation == PerturbationSet::None) {
            let key = Key {
                preset: r.preset.clone(),
                method: r.method,
                objective: r.objective,
                n_sub: r.n_sub,
                bandwidth_bits: r.bandwidth.to_bits(),
            };
            cells.entry(key).or_default().push(r.p95);
        }
        for (k, v) in cells {
            boxes.push((k.label(), v));
        }
        if !boxes.is_empty() {
            let path = out.join(format!("oos_{preset}.svg"));
            std::fs::write(&path, box_chart(&format!("{preset}: out-of-sample 95th percentile"), &boxes))?;
            summary.files.push(path);
        }
    }
    Ok(summary)
}

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    s
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.08).max(1e-6);
    ((lo - pad).max(if lo >= 0.0 { 0.0 } else { f64::NEG_INFINITY }), hi + pad)
}

fn y_axis(s: &mut String, lo: f64, hi: f64, label: &str) {
    let plot_h = H - TOP - BOTTOM;
    for k in 0..=5 {
        let v = lo + (hi - lo) * k as f64 / 5.0;
        let y = TOP + plot_h * (1.0 - k as f64 / 5.0);
        let _ = writeln!(s, r##"<line x1="{LEFT}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/>"##, W - RIGHT);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(label)
    );
}

fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<f64>)]) -> String {
    let mut s = svg_open(title);
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(1);
    let (lo, hi) = y_range(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let px = |i: usize| LEFT + if n == 1 { plot_w / 2.0 } else { plot_w * i as f64 / (n - 1) as f64 };
    let py = |v: f64| TOP + plot_h * (1.0 - (v - lo) / (hi - lo));
    y_axis(&mut s, lo, hi, y_label);
    for i in 0..n {
        let _ =
            writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(i), H - BOTTOM + 18.0, i + 1);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        H - 18.0,
        escape(x_label)
    );
    for (k, (name, v)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = v.iter().enumerate().map(|(i, y)| format!("{:.1},{:.1}", px(i), py(*y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for (i, y) in v.iter().enumerate() {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(i), py(*y));
        }
        let ly = TOP + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{:.1}" width="12" height="12" fill="{color}"/>"#, W - RIGHT + 12.0, ly);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}">{}</text>"#, W - RIGHT + 30.0, ly + 10.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn five_numbers(v: &[f64]) -> [f64; 5] {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos.fract());
        if i + 1 < v.len() {
            v[i] * (1.0 - f) + v[i + 1] * f
        } else {
            v[i]
        }
    };
    [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)]
}

fn box_chart(title: &str, boxes: &[(String, Vec<f64>)]) -> String {
    let mut s = svg_open(title);
    let (lo, hi) = y_range(boxes.iter().flat_map(|(_, v)| v.iter().copied()));
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let py = |v: f64| TOP + plot_h * (1.0 - (v - lo) / (hi - lo));
    y_axis(&mut s, lo, hi, "cost");
    let slot = plot_w / boxes.len().max(1) as f64;
    for (k, (name, v)) in boxes.iter().enumerate() {
        if v.is_empty() {
            continue;
        }
        let color = PALETTE[k % PALETTE.len()];
        let [mn, q1, med, q3, mx] = five_numbers(v);
        let cx = LEFT + slot * (k as f64 + 0.5);
        let bw = (slot * 0.5).min(40.0);
        let _ =
            writeln!(s, r#"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="{color}"/>"#, py(mx), py(q3));
        let _ =
            writeln!(s, r#"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="{color}"/>"#, py(q1), py(mn));
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="{color}" fill-opacity="0.3" stroke="{color}"/>"#,
            cx - bw / 2.0,
            py(q3),
            (py(q1) - py(q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/>"#,
            cx - bw / 2.0,
            cx + bw / 2.0,
            py(med),
            py(med)
        );
        let ly = TOP + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{:.1}" width="12" height="12" fill="{color}"/>"#, W - RIGHT + 12.0, ly);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}">{}</text>"#, W - RIGHT + 30.0, ly + 10.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}
