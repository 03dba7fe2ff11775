//! Metric summary tables and their text and CSV emission.
//!
//! CSV layouts are fixed; floats are written in shortest round-trip form so
//! that emitting and re-parsing reproduces the records exactly.
//!
//! Scaling records:
//!
//! ```text
//! nodes,gpus,dataset_fraction,samples,epoch_time_s,compute_s,allreduce_s,load_s,aggregate_flops,per_gpu_flops,swap_engaged
//! ```
//!
//! Cost reports use the keys of [`CostReport::KEYS`] as the header. The
//! summary table is emitted as `metric,value` rows.

use crate::cost_model::CostReport;
use crate::datagen::DatasetManifest;
use crate::scaling_sim::{speedups, ClusterConfig, ScalingRecord};
use crate::units::{flops_scaled, sig_digits};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no input for {0}")]
    EmptyInput(&'static str),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Format {
    Text,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown format {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn over(values: impl IntoIterator<Item = f64>, field: &'static str) -> Result<Self, ReportError> {
        let mut it = values.into_iter();
        let first = it.next().ok_or(ReportError::EmptyInput(field))?;
        Ok(it.fold(Self { min: first, max: first }, |r, v| Self {
            min: r.min.min(v),
            max: r.max.max(v),
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub domain: String,
    pub data_augment: String,
    pub model_augment: String,
    pub dnn_model: String,
    pub data_format: String,
    /// Bytes.
    pub dataset_size_range: Range,
    /// Training FLOPs per sample of each model.
    pub flop_range: Range,
    /// Aggregate flop rate at the largest GPU count.
    pub achieved_flops_range: Range,
    pub peak_gpus: u64,
    pub peak_flops_per_gpu: f64,
    pub single_gpu_range: Range,
    pub speedup_range: Range,
    pub intensity_range: Range,
    pub loss_range: Option<Range>,
}

impl SummaryTable {
    /// Fraction of the aggregate peak of the largest configuration.
    pub fn percent_of_peak(&self, flops: f64) -> f64 {
        flops / (self.peak_gpus as f64 * self.peak_flops_per_gpu)
    }

    pub fn achieved_text(&self) -> String {
        let r = self.achieved_flops_range;
        let (_, unit) = flops_scaled(r.max);
        let scale = |v: f64| if unit == "Tflops" { v / 1e12 } else { v / 1e9 };
        format!(
            "{} ({:.1}%) - {} {unit} ({:.1}%)",
            sig_digits(scale(r.min), 4),
            100.0 * self.percent_of_peak(r.min),
            sig_digits(scale(r.max), 4),
            100.0 * self.percent_of_peak(r.max)
        )
    }

    /// `(metric, value)` rows in display order.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        let mut rows = vec![
            ("Domain", self.domain.clone()),
            ("Data augment", self.data_augment.clone()),
            ("Model augment", self.model_augment.clone()),
            ("DNN model", self.dnn_model.clone()),
            ("Data format", self.data_format.clone()),
            ("Dataset size", si_range(self.dataset_size_range, "B")),
            ("FLOPs per sample", si_range(self.flop_range, "FLOP")),
            ("Achieved flops", self.achieved_text()),
            ("Single GPU", flops_range(self.single_gpu_range)),
            (
                "Speedup",
                format!(
                    "{}x - {}x",
                    sig_digits(self.speedup_range.min, 4),
                    sig_digits(self.speedup_range.max, 4)
                ),
            ),
            (
                "Arithmetic intensity",
                format!(
                    "{} - {}",
                    sig_digits(self.intensity_range.min, 4),
                    sig_digits(self.intensity_range.max, 4)
                ),
            ),
        ];
        if let Some(l) = self.loss_range {
            rows.push(("Loss", format!("{} - {}", sig_digits(l.min, 4), sig_digits(l.max, 4))));
        }
        rows
    }
}

fn flops_range(r: Range) -> String {
    let (_, unit) = flops_scaled(r.max);
    let scale = |v: f64| if unit == "Tflops" { v / 1e12 } else { v / 1e9 };
    format!("{} - {} {unit}", sig_digits(scale(r.min), 4), sig_digits(scale(r.max), 4))
}

fn si(value: f64, unit: &str) -> String {
    const PREFIXES: [(f64, &str); 5] = [(1e15, "P"), (1e12, "T"), (1e9, "G"), (1e6, "M"), (1e3, "k")];
    for (scale, p) in PREFIXES {
        if value.abs() >= scale {
            return format!("{} {p}{unit}", sig_digits(value / scale, 4));
        }
    }
    format!("{} {unit}", sig_digits(value, 4))
}

fn si_range(r: Range, unit: &str) -> String {
    format!("{} - {}", si(r.min, unit), si(r.max, unit))
}

/// Descriptive fields of the cosmology benchmark.
pub struct Labels {
    pub domain: &'static str,
    pub data_augment: &'static str,
    pub model_augment: &'static str,
    pub dnn_model: &'static str,
    pub data_format: &'static str,
}

pub const COSMO_LABELS: Labels = Labels {
    domain: "Cosmology",
    data_augment: "Particle simulation",
    model_augment: "Cell search with FLOP filter",
    dnn_model: "3D CNN",
    data_format: "SVOX v1 (f64 voxels)",
};

/// Ranges are exact min/max over the inputs. Each sweep contributes the
/// speedup of its last record over its first.
pub fn summarize(
    cost_reports: &[CostReport],
    manifests: &[DatasetManifest],
    sweeps: &[Vec<ScalingRecord>],
    cluster: &ClusterConfig,
    loss_trace: Option<&[f64]>,
) -> Result<SummaryTable, ReportError> {
    let records: Vec<&ScalingRecord> = sweeps.iter().flatten().collect();
    // Data-scaling sweeps hold the GPU count fixed, so they carry no speedup.
    let strong: Vec<&Vec<ScalingRecord>> = sweeps.iter().filter(|s| s.iter().any(|r| r.gpus != s[0].gpus)).collect();
    let speedup_sweeps = if strong.is_empty() { sweeps.iter().collect() } else { strong };
    let peak_gpus = records.iter().map(|r| r.gpus).max().ok_or(ReportError::EmptyInput("scaling records"))?;
    Ok(SummaryTable {
        domain: COSMO_LABELS.domain.into(),
        data_augment: COSMO_LABELS.data_augment.into(),
        model_augment: COSMO_LABELS.model_augment.into(),
        dnn_model: COSMO_LABELS.dnn_model.into(),
        data_format: COSMO_LABELS.data_format.into(),
        dataset_size_range: Range::over(manifests.iter().map(|m| m.total_bytes() as f64), "dataset manifests")?,
        flop_range: Range::over(
            cost_reports.iter().map(|c| c.training_flops as f64 / c.batch.max(1) as f64),
            "cost reports",
        )?,
        achieved_flops_range: Range::over(
            records.iter().filter(|r| r.gpus == peak_gpus).map(|r| r.aggregate_flops),
            "scaling records",
        )?,
        peak_gpus,
        peak_flops_per_gpu: cluster.peak_flops_per_gpu,
        single_gpu_range: Range::over(records.iter().map(|r| r.per_gpu_flops), "scaling records")?,
        speedup_range: Range::over(
            speedup_sweeps.iter().filter_map(|s| speedups(s).last().copied()),
            "scaling sweeps",
        )?,
        intensity_range: Range::over(cost_reports.iter().map(|c| c.intensity), "cost reports")?,
        loss_range: match loss_trace {
            Some(t) => Some(Range::over(t.iter().copied(), "loss trace")?),
            None => None,
        },
    })
}

pub fn emit_table(table: &SummaryTable, format: Format) -> String {
    let rows = table.rows();
    let mut s = String::new();
    match format {
        Format::Text => {
            let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max("Metric".len());
            let _ = writeln!(s, "{:<w$} | Value", "Metric");
            let _ = writeln!(s, "{}-+-{}", "-".repeat(w), "-".repeat(40));
            for (k, v) in rows {
                let _ = writeln!(s, "{k:<w$} | {v}");
            }
        }
        Format::Csv => {
            s.push_str("metric,value\n");
            for (k, v) in rows {
                let _ = writeln!(s, "{},{}", csv_field(k), csv_field(&v));
            }
        }
    }
    s
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

pub const SCALING_HEADER: &str = "nodes,gpus,dataset_fraction,samples,epoch_time_s,compute_s,allreduce_s,load_s,aggregate_flops,per_gpu_flops,swap_engaged";

pub fn scaling_csv(records: &[ScalingRecord]) -> String {
    let mut s = format!("{SCALING_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            r.nodes,
            r.gpus,
            r.dataset_fraction,
            r.samples,
            r.epoch_time_s,
            r.compute_s,
            r.allreduce_s,
            r.load_s,
            r.aggregate_flops,
            r.per_gpu_flops,
            r.swap_engaged
        );
    }
    s
}

fn csv_rows<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>, ReportError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return Err(ReportError::Csv { line: 1, msg: "unexpected header".into() }),
    }
    let width = header.split(',').count();
    lines
        .map(|(i, l)| {
            let fields: Vec<&str> = l.trim().split(',').collect();
            if fields.len() == width {
                Ok((i + 1, fields))
            } else {
                Err(ReportError::Csv { line: i + 1, msg: format!("{} fields, expected {width}", fields.len()) })
            }
        })
        .collect()
}

fn field<T: std::str::FromStr>(v: &str, line: usize, name: &str) -> Result<T, ReportError> {
    v.parse().map_err(|_| ReportError::Csv { line, msg: format!("bad {name}: {v:?}") })
}

pub fn parse_scaling_csv(text: &str) -> Result<Vec<ScalingRecord>, ReportError> {
    csv_rows(text, SCALING_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok(ScalingRecord {
                nodes: field(f[0], line, "nodes")?,
                gpus: field(f[1], line, "gpus")?,
                dataset_fraction: field(f[2], line, "dataset_fraction")?,
                samples: field(f[3], line, "samples")?,
                epoch_time_s: field(f[4], line, "epoch_time_s")?,
                compute_s: field(f[5], line, "compute_s")?,
                allreduce_s: field(f[6], line, "allreduce_s")?,
                load_s: field(f[7], line, "load_s")?,
                aggregate_flops: field(f[8], line, "aggregate_flops")?,
                per_gpu_flops: field(f[9], line, "per_gpu_flops")?,
                swap_engaged: field(f[10], line, "swap_engaged")?,
            })
        })
        .collect()
}

pub fn cost_csv(reports: &[CostReport]) -> String {
    let mut s = CostReport::KEYS.join(",");
    s.push('\n');
    for r in reports {
        s.push_str(&r.values().join(","));
        s.push('\n');
    }
    s
}

pub fn parse_cost_csv(text: &str) -> Result<Vec<CostReport>, ReportError> {
    csv_rows(text, &CostReport::KEYS.join(","))?
        .into_iter()
        .map(|(line, f)| {
            Ok(CostReport {
                batch: field(f[0], line, "batch")?,
                forward_addmul: field(f[1], line, "forward_addmul")?,
                training_flops: field(f[2], line, "training_flops")?,
                params: field(f[3], line, "params")?,
                mem_reads: field(f[4], line, "mem_reads")?,
                mem_writes: field(f[5], line, "mem_writes")?,
                intensity: field(f[6], line, "intensity")?,
                weight_bytes: field(f[7], line, "weight_bytes")?,
                activation_bytes: field(f[8], line, "activation_bytes")?,
            })
        })
        .collect()
}

/// Human-readable per-record breakdown of a sweep.
pub fn scaling_table(records: &[ScalingRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>5} {:>5} {:>9} {:>11} {:>8} {:>8} {:>8} {:>14} {:>14} {:>8} swap",
        "nodes", "gpus", "fraction", "epoch_s", "compute", "allred", "load", "aggregate", "per_gpu", "speedup"
    );
    for (r, sp) in records.iter().zip(speedups(records)) {
        let total = r.epoch_time_s;
        let _ = writeln!(
            s,
            "{:>5} {:>5} {:>9} {:>11} {:>7.1}% {:>7.1}% {:>7.1}% {:>14} {:>14} {:>8} {}",
            r.nodes,
            r.gpus,
            sig_digits(r.dataset_fraction, 4),
            sig_digits(total, 4),
            100.0 * r.compute_s / total,
            100.0 * r.allreduce_s / total,
            100.0 * r.load_s / total,
            crate::units::format_flops(r.aggregate_flops),
            crate::units::format_flops(r.per_gpu_flops),
            format!("{}x", sig_digits(sp, 4)),
            if r.swap_engaged { "yes" } else { "no" }
        );
    }
    s
}
