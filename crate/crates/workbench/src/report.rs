// SPDX-License-Identifier: MIT OR Apache-2.0

//! Report emission: CSV tables, plots, a Markdown summary and a provenance
//! block.
//!
//! Everything outside `provenance/` is a pure function of the results, so two
//! runs from the same config produce byte-identical files there. Wall-clock
//! timings, timestamps and host details live only under `provenance/`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use steerprobe::evaluation::{GenerationTiming, ReportDirection};
use steerprobe::interpret::{EmbeddedPoint, ImportanceResult};
use steerprobe::probing::layer_group_average;
use steerprobe::{EvalReport, VInfoReport};

use crate::error::Result;
use crate::fsio::{write_atomic, write_json};
use crate::plot::{curves_svg, scatter_svg};

pub const RESULTS_FILE: &str = "results.json";
pub const PROVENANCE_DIR: &str = "provenance";
const NO_DATA: &str = "_no data_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VInfoSection {
    pub report: VInfoReport,
    pub group: usize,
    pub dataset_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRow {
    pub layer: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRow {
    pub fraction: f64,
    pub average_success_rate: Option<f64>,
    /// Per direction, in direction-matrix order.
    pub success_rates: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSample {
    pub entity: String,
    pub source: String,
    pub target: String,
    pub text: String,
    pub masking: ImportanceResult,
    pub surrogate: ImportanceResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub layer: usize,
    pub points: Vec<EmbeddedPoint>,
    pub silhouette: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterpretResults {
    pub mass_fractions: Vec<f64>,
    pub weight_mass: Vec<MassRow>,
    pub unpatched_success_rate: Option<f64>,
    pub patches: Vec<PatchRow>,
    pub importance: Vec<ImportanceSample>,
    pub embeddings: Vec<EmbeddingSet>,
}

/// Deterministic results of every stage run so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub runtime_id: Option<String>,
    pub labels: Vec<String>,
    pub vinfo: Option<VInfoSection>,
    pub directions: Option<Vec<EvalReport>>,
    pub interpret: Option<InterpretResults>,
}

/// Overhead columns: probe-training wall time, per-response generation time
/// and the steered-to-unsteered per-token ratio.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub probe_training_secs: Option<f64>,
    pub probe_records: Option<usize>,
    pub unsteered_responses: usize,
    pub steered_responses: usize,
    pub unsteered_per_response_secs: Option<f64>,
    pub steered_per_response_secs: Option<f64>,
    pub unsteered_per_token_secs: Option<f64>,
    pub steered_per_token_secs: Option<f64>,
    pub steered_to_unsteered_ratio: Option<f64>,
}

impl TimingReport {
    pub fn record_generation(&mut self, timing: &GenerationTiming, unsteered_responses: usize, steered_responses: usize) {
        self.unsteered_responses = unsteered_responses;
        self.steered_responses = steered_responses;
        let per = |d: std::time::Duration, n: usize| (n > 0).then(|| d.as_secs_f64() / n as f64);
        self.unsteered_per_response_secs = per(timing.unsteered, unsteered_responses);
        self.steered_per_response_secs = per(timing.steered, steered_responses);
        self.unsteered_per_token_secs = timing.unsteered_per_token();
        self.steered_per_token_secs = timing.steered_per_token();
        self.steered_to_unsteered_ratio = timing.ratio();
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub created_unix_secs: u64,
    pub host: Option<String>,
    pub config_file: Option<String>,
    pub timing: TimingReport,
}

impl Provenance {
    pub fn now(config_file: Option<&Path>, timing: TimingReport) -> Self {
        Self {
            tool: "steerprobe".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            created_unix_secs: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            host: std::env::var("HOSTNAME").ok(),
            config_file: config_file.map(|p| p.display().to_string()),
            timing,
        }
    }
}

pub fn load_bundle(dir: &Path) -> Result<ReportBundle> {
    let path = dir.join(RESULTS_FILE);
    if !path.exists() {
        return Ok(ReportBundle::default());
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn load_timing(dir: &Path) -> Result<TimingReport> {
    let path = dir.join(PROVENANCE_DIR).join("provenance.json");
    if !path.exists() {
        return Ok(TimingReport::default());
    }
    let p: Provenance = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(p.timing)
}

fn num(v: f64) -> String {
    // Avoid printing "-0.000000".
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    w.into_inner().map_err(|e| std::io::Error::other(e.to_string()).into())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    write_atomic(path, &csv_bytes(&header, rows)?)
}

fn direction_name(d: &ReportDirection) -> String {
    match d {
        ReportDirection::Pair { source, target } => format!("{source}->{target}"),
        ReportDirection::Average => "average".into(),
    }
}

fn group_label(group: usize, index: usize, layers: usize) -> String {
    let lo = index * group + 1;
    let hi = ((index + 1) * group).min(layers);
    if lo == hi {
        format!("L{lo}")
    } else {
        format!("L{lo}-{hi}")
    }
}

/// Write every table, plot and the summary for `bundle` into `dir`, plus the
/// provenance block.
pub fn emit_report(bundle: &ReportBundle, provenance: &Provenance, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join(RESULTS_FILE), bundle)?;
    let mut md = String::from("# steerprobe report\n\n");
    md.push_str(&format!(
        "Runtime: {}\n\nLabels: {}\n\n",
        bundle.runtime_id.as_deref().unwrap_or("unknown"),
        if bundle.labels.is_empty() { "unknown".into() } else { bundle.labels.join(", ") }
    ));
    vinfo_tables(bundle, dir, &mut md)?;
    direction_tables(bundle, dir, &mut md)?;
    interpret_tables(bundle, dir, &mut md)?;
    md.push_str("## Timing\n\nWall-clock figures are in `provenance/timing.csv`.\n");
    write_atomic(&dir.join("summary.md"), md.as_bytes())?;

    let prov = dir.join(PROVENANCE_DIR);
    write_json(&prov.join("provenance.json"), provenance)?;
    let t = &provenance.timing;
    write_csv(
        &prov.join("timing.csv"),
        &[
            "probe_training_secs",
            "probe_records",
            "unsteered_per_response_secs",
            "steered_per_response_secs",
            "unsteered_per_token_secs",
            "steered_per_token_secs",
            "steered_to_unsteered_ratio",
        ],
        &[vec![
            opt(t.probe_training_secs),
            t.probe_records.map_or_else(|| "NA".into(), |n| n.to_string()),
            opt(t.unsteered_per_response_secs),
            opt(t.steered_per_response_secs),
            opt(t.unsteered_per_token_secs),
            opt(t.steered_per_token_secs),
            opt(t.steered_to_unsteered_ratio),
        ]],
    )
}

fn vinfo_tables(bundle: &ReportBundle, dir: &Path, md: &mut String) -> Result<()> {
    md.push_str("## V-information\n\n");
    let layer_header = ["layer", "conditional_entropy", "v_information", "train_accuracy", "test_accuracy"];
    let group_header = ["group", "first_layer", "last_layer", "v_information"];
    let Some(section) = &bundle.vinfo else {
        write_csv(&dir.join("vinfo_layers.csv"), &layer_header, &[])?;
        write_csv(&dir.join("vinfo_grouped.csv"), &group_header, &[])?;
        md.push_str(NO_DATA);
        md.push_str("\n\n");
        return Ok(());
    };
    let r = &section.report;
    let rows: Vec<Vec<String>> = r
        .layers
        .iter()
        .map(|l| {
            vec![
                l.layer.to_string(),
                num(l.conditional_entropy),
                num(l.v_information),
                num(l.train_accuracy),
                num(l.test_accuracy),
            ]
        })
        .collect();
    write_csv(&dir.join("vinfo_layers.csv"), &layer_header, &rows)?;
    let values = r.values();
    let n = values.len();
    let grouped = if n == 0 { Vec::new() } else { layer_group_average(&values, section.group)? };
    let grows: Vec<Vec<String>> = grouped
        .iter()
        .enumerate()
        .map(|(i, v)| {
            vec![
                group_label(section.group, i, n),
                (i * section.group + 1).to_string(),
                ((i + 1) * section.group).min(n).to_string(),
                num(*v),
            ]
        })
        .collect();
    write_csv(&dir.join("vinfo_grouped.csv"), &group_header, &grows)?;
    if n > 0 {
        let xs: Vec<f64> = r.layers.iter().map(|l| l.layer as f64).collect();
        let svg = curves_svg("V-information by layer", &xs, &[("V-information".into(), values.clone())]);
        write_atomic(&dir.join("vinfo_curve.svg"), svg.as_bytes())?;
    }
    md.push_str(&format!(
        "Family: {}. Null entropy: {} ({:?} log). Dataset: `{}`.\n\n",
        r.family,
        num(r.null_entropy),
        r.log_base,
        section.dataset_hash
    ));
    if grouped.is_empty() {
        md.push_str(NO_DATA);
        md.push_str("\n\n");
        return Ok(());
    }
    let labels: Vec<String> = (0..grouped.len()).map(|i| group_label(section.group, i, n)).collect();
    md.push_str(&format!("| | {} |\n", labels.join(" | ")));
    md.push_str(&format!("|---|{}\n", "---|".repeat(labels.len())));
    md.push_str(&format!(
        "| V-information | {} |\n\n",
        grouped.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" | ")
    ));
    let negative: Vec<String> = r.layers.iter().filter(|l| l.v_information < 0.0).map(|l| l.layer.to_string()).collect();
    if !negative.is_empty() {
        md.push_str(&format!("Negative estimates (reported unclamped) at layers {}.\n\n", negative.join(", ")));
    }
    Ok(())
}

fn direction_tables(bundle: &ReportBundle, dir: &Path, md: &mut String) -> Result<()> {
    md.push_str("## Steering directions\n\n");
    let header = [
        "direction",
        "success_rate",
        "pae",
        "baseline_success_rate",
        "samples",
        "excluded",
        "error",
    ];
    let reports = bundle.directions.as_deref().unwrap_or_default();
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                direction_name(&r.direction),
                opt(r.success_rate),
                opt(r.pae),
                opt(r.baseline_success_rate),
                r.samples.to_string(),
                r.excluded.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&dir.join("directions.csv"), &header, &rows)?;
    if rows.is_empty() {
        md.push_str(NO_DATA);
        md.push_str("\n\n");
        return Ok(());
    }
    md.push_str("| Direction | SR | PAE | Unsteered SR | Samples | Excluded |\n|---|---|---|---|---|---|\n");
    for row in &rows {
        md.push_str(&format!("| {} |\n", row[..6].join(" | ")));
    }
    md.push('\n');
    for r in reports.iter().filter(|r| r.error.is_some()) {
        md.push_str(&format!(
            "Direction {} failed: {}\n\n",
            direction_name(&r.direction),
            r.error.as_deref().unwrap_or_default()
        ));
    }
    Ok(())
}

fn interpret_tables(bundle: &ReportBundle, dir: &Path, md: &mut String) -> Result<()> {
    md.push_str("## Interpretation\n\n");
    let empty = InterpretResults::default();
    let ir = bundle.interpret.as_ref().unwrap_or(&empty);

    let mut header = vec!["layer".to_string()];
    header.extend(ir.mass_fractions.iter().map(|f| format!("top_{f}")));
    let rows: Vec<Vec<String>> = ir
        .weight_mass
        .iter()
        .map(|r| std::iter::once(r.layer.to_string()).chain(r.values.iter().map(|v| num(*v))).collect())
        .collect();
    write_atomic(&dir.join("weight_mass.csv"), &csv_bytes(&header, &rows)?)?;
    md.push_str("### Weight-mass concentration\n\n");
    if rows.is_empty() {
        md.push_str(NO_DATA);
        md.push_str("\n\n");
    } else {
        md.push_str(&format!("| Layer | {} |\n", ir.mass_fractions.iter().map(|f| format!("top {f}")).collect::<Vec<_>>().join(" | ")));
        md.push_str(&format!("|---|{}\n", "---|".repeat(ir.mass_fractions.len())));
        for row in &rows {
            md.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        md.push('\n');
    }

    let rows: Vec<Vec<String>> = ir
        .patches
        .iter()
        .map(|p| {
            let drop = match (ir.unpatched_success_rate, p.average_success_rate) {
                (Some(u), Some(s)) if u > 0.0 => num((u - s) / u),
                _ => "NA".into(),
            };
            let mut row = vec![num(p.fraction), opt(p.average_success_rate), drop];
            row.extend(p.success_rates.iter().map(|v| opt(*v)));
            row
        })
        .collect();
    let mut header = vec!["fraction".to_string(), "average_success_rate".into(), "relative_drop".into()];
    let width = ir.patches.first().map_or(0, |p| p.success_rates.len());
    header.extend((1..=width).map(|i| format!("direction_{i}")));
    write_atomic(&dir.join("patching.csv"), &csv_bytes(&header, &rows)?)?;
    md.push_str("### Activation patching\n\n");
    if rows.is_empty() {
        md.push_str(NO_DATA);
        md.push_str("\n\n");
    } else {
        md.push_str(&format!("Unpatched average SR: {}\n\n", opt(ir.unpatched_success_rate)));
        md.push_str("| Fraction | Average SR | Relative drop |\n|---|---|---|\n");
        for row in &rows {
            md.push_str(&format!("| {} |\n", row[..3].join(" | ")));
        }
        md.push('\n');
    }

    let mut rows = Vec::new();
    md.push_str("### Token importance\n\n");
    for (i, s) in ir.importance.iter().enumerate() {
        for result in [&s.masking, &s.surrogate] {
            for (pos, (tok, score)) in result.tokens.iter().zip(&result.scores).enumerate() {
                rows.push(vec![
                    i.to_string(),
                    format!("{:?}", result.method).to_lowercase(),
                    pos.to_string(),
                    tok.clone(),
                    num(*score),
                ]);
            }
            let top: Vec<String> = result
                .ranking()
                .into_iter()
                .take(5)
                .map(|j| format!("{} ({})", result.tokens[j], num(result.scores[j])))
                .collect();
            md.push_str(&format!(
                "- {} {}->{} {:?}: {}\n",
                s.entity,
                s.source,
                s.target,
                result.method,
                top.join(", ")
            ));
        }
    }
    write_csv(&dir.join("importance.csv"), &["sample", "method", "position", "token", "score"], &rows)?;
    if ir.importance.is_empty() {
        md.push_str(NO_DATA);
    }
    md.push_str("\n\n### Embeddings\n\n");
    if ir.embeddings.is_empty() {
        md.push_str(NO_DATA);
        md.push_str("\n\n");
    }
    for set in &ir.embeddings {
        let rows: Vec<Vec<String>> = set
            .points
            .iter()
            .map(|p| vec![num(p.x), num(p.y), p.label.to_string()])
            .collect();
        let stem = format!("embed_layer_{:03}", set.layer);
        write_csv(&dir.join(format!("{stem}.csv")), &["x", "y", "label"], &rows)?;
        let svg = scatter_svg(&format!("Layer {} final-token states", set.layer), &set.points, &bundle.labels);
        write_atomic(&dir.join(format!("{stem}.svg")), svg.as_bytes())?;
        md.push_str(&format!(
            "- layer {}: {} points, 2-D silhouette {} (`{stem}.svg`)\n",
            set.layer,
            set.points.len(),
            opt(set.silhouette)
        ));
    }
    md.push('\n');
    Ok(())
}

/// Files under `dir` that reproducibility comparisons cover.
pub fn reproducible_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
