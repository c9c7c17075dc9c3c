//! Batch results: per-method summaries and per-episode rows, rendered as a table, CSV or JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Config;
use super::scenario::{SampledThrow, Scenario};
use super::ExperimentError;
use crate::selector::Method;
use crate::sim::{EpisodeResult, EpisodeSetup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub method: Method,
    pub throw_index: usize,
    pub seed: u64,
    pub caught: bool,
    pub diverged: bool,
    pub catch_error: Option<f64>,
    pub mean_power: f64,
    pub plans: usize,
    pub catch_x: Option<f64>,
    pub catch_y: Option<f64>,
    pub catch_z: Option<f64>,
    /// Final catch point was below the reachable foot height and got clipped.
    pub below_floor: bool,
    pub aim_x: f64,
    pub aim_y: f64,
    pub aim_z: f64,
    pub speed: f64,
}

impl EpisodeRow {
    pub fn from_result(method: Method, index: usize, seed: u64, sampled: &SampledThrow, r: &EpisodeResult) -> Self {
        let c = r.final_plan.map(|p| p.x_catch);
        Self {
            method,
            throw_index: index,
            seed,
            caught: r.caught,
            diverged: false,
            catch_error: r.catch_error,
            mean_power: r.mean_power,
            plans: r.plan_history.len(),
            catch_x: c.map(|c| c.x),
            catch_y: c.map(|c| c.y),
            catch_z: c.map(|c| c.z),
            below_floor: r.below_floor,
            aim_x: sampled.aim.x,
            aim_y: sampled.aim.y,
            aim_z: sampled.aim.z,
            speed: sampled.throw.v0.xy().norm(),
        }
    }

    /// A failed episode whose dynamics blew up.
    pub fn diverged(method: Method, index: usize, seed: u64, sampled: &SampledThrow) -> Self {
        Self {
            method,
            throw_index: index,
            seed,
            caught: false,
            diverged: true,
            catch_error: None,
            mean_power: 0.0,
            plans: 0,
            catch_x: None,
            catch_y: None,
            catch_z: None,
            below_floor: false,
            aim_x: sampled.aim.x,
            aim_y: sampled.aim.y,
            aim_z: sampled.aim.z,
            speed: sampled.throw.v0.xy().norm(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub caught: usize,
    pub n_throws: usize,
    pub success_rate: f64,
    /// Mean total power over all episodes of this method, W.
    pub mean_power: f64,
    pub diverged: usize,
}

impl MethodSummary {
    fn from_rows<'a>(method: Method, rows: impl Iterator<Item = &'a EpisodeRow>) -> Self {
        let (mut caught, mut n, mut diverged, mut power) = (0, 0, 0, 0.0);
        for r in rows.filter(|r| r.method == method) {
            n += 1;
            caught += r.caught as usize;
            diverged += r.diverged as usize;
            power += r.mean_power;
        }
        Self {
            method,
            caught,
            n_throws: n,
            success_rate: if n == 0 { 0.0 } else { 100.0 * caught as f64 / n as f64 },
            mean_power: if n == 0 { 0.0 } else { power / n as f64 },
            diverged,
        }
    }
}

/// Settings that shape the numbers, echoed with every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub capture_radius: f64,
    pub object_halfwidth: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub distance: f64,
    pub noiseless: bool,
    pub mixture_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub n_throws: usize,
    pub settings: RunSettings,
    pub summaries: Vec<MethodSummary>,
    pub rows: Vec<EpisodeRow>,
}

impl Report {
    pub fn new(s: &Scenario, setup: &EpisodeSetup, cfg: &Config, rows: Vec<EpisodeRow>) -> Self {
        let summaries = s.methods.iter().map(|m| MethodSummary::from_rows(*m, rows.iter())).collect();
        Self {
            scenario: s.name.clone(),
            seed: s.seed,
            n_throws: s.n_throws,
            settings: RunSettings {
                capture_radius: setup.sim.capture_radius,
                object_halfwidth: setup.sim.object_halfwidth,
                speed_min: cfg.throws.speed_min,
                speed_max: cfg.throws.speed_max,
                distance: cfg.throws.distance,
                noiseless: s.noiseless,
                mixture_components: setup.selector.mixture.k(),
            },
            summaries,
            rows,
        }
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &EpisodeRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Pools several reports of the same scenario (e.g. different seeds) into one.
    pub fn merge(reports: &[Report]) -> Option<Report> {
        let first = reports.first()?;
        let rows: Vec<EpisodeRow> = reports.iter().flat_map(|r| r.rows.iter().cloned()).collect();
        let methods: Vec<Method> = first.summaries.iter().map(|s| s.method).collect();
        Some(Report {
            scenario: first.scenario.clone(),
            seed: first.seed,
            n_throws: reports.iter().map(|r| r.n_throws).sum(),
            settings: first.settings.clone(),
            summaries: methods.iter().map(|m| MethodSummary::from_rows(*m, rows.iter())).collect(),
            rows,
        })
    }
}

/// Mean power of two methods over throws both caught: `(power_a, power_b, pairs)`.
pub fn paired_power(rows: &[EpisodeRow], a: Method, b: Method) -> Option<(f64, f64, usize)> {
    let key = |r: &EpisodeRow| (r.seed, r.throw_index);
    let (mut pa, mut pb, mut n) = (0.0, 0.0, 0usize);
    for ra in rows.iter().filter(|r| r.method == a && r.caught) {
        if let Some(rb) = rows.iter().find(|r| r.method == b && r.caught && key(r) == key(ra)) {
            pa += ra.mean_power;
            pb += rb.mean_power;
            n += 1;
        }
    }
    (n > 0).then(|| (pa / n as f64, pb / n as f64, n))
}

/// `caught / n` as a percentage with one decimal.
pub fn format_percent(caught: usize, n: usize) -> String {
    if n == 0 {
        return "n/a".into();
    }
    format!("{:.1}", 100.0 * caught as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(Format::Table),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format '{other}' (expected table, csv or json)")),
        }
    }
}

pub fn render_table(report: &Report) -> String {
    let s = &report.settings;
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} (seed {}, {} throws)", report.scenario, report.seed, report.n_throws);
    let _ = writeln!(
        out,
        "capture radius {:.3} m, object half-width {:.3} m, speed {:.1}-{:.1} m/s from {:.1} m{}",
        s.capture_radius,
        s.object_halfwidth,
        s.speed_min,
        s.speed_max,
        s.distance,
        if s.noiseless { ", noiseless" } else { "" }
    );
    let _ = writeln!(out, "{:<8} {:>9} {:>12} {:>15} {:>9}", "method", "caught", "success [%]", "mean power [W]", "diverged");
    for m in &report.summaries {
        let _ = writeln!(
            out,
            "{:<8} {:>9} {:>12} {:>15.3} {:>9}",
            m.method.name(),
            format!("{}/{}", m.caught, m.n_throws),
            format_percent(m.caught, m.n_throws),
            m.mean_power,
            m.diverged
        );
    }
    out
}

pub fn render_csv(report: &Report) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_json(report: &Report) -> Result<String, ExperimentError> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn render_report(report: &Report, format: Format) -> Result<String, ExperimentError> {
    match format {
        Format::Table => Ok(render_table(report)),
        Format::Csv => render_csv(report),
        Format::Json => render_json(report),
    }
}

/// Writes the rendered report to `path`.
pub fn emit_report(report: &Report, format: Format, path: &Path) -> Result<(), ExperimentError> {
    fs::write(path, render_report(report, format)?)?;
    Ok(())
}

pub fn read_csv_rows(text: &str) -> Result<Vec<EpisodeRow>, ExperimentError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    Ok(rd.deserialize().collect::<Result<_, _>>()?)
}
