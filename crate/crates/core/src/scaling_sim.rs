//! Analytic model of data-parallel training on a GPU cluster.
//!
//! An epoch is `iterations x (compute + allreduce) + load`, with phases
//! strictly additive. Loading reads the dataset from the filesystem; the
//! part that does not fit in usable aggregate node memory pays a swap
//! penalty.

use crate::arch_ir::{build_cosmo_net, CosmoNetScale, TensorShape};
use crate::cost_model::{cost_report, CostParams};
use std::fmt::Write as _;
use thiserror::Error;

const GIB: f64 = (1u64 << 30) as f64;

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("dataset has {samples} samples, fewer than one global batch of {global_batch}")]
    InsufficientSamples { samples: u64, global_batch: u64 },
    #[error("invalid cluster: {0}")]
    InvalidCluster(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("sustained {sustained:e} flops exceeds peak {peak:e}")]
    SustainedExceedsPeak { sustained: f64, peak: f64 },
    #[error("node list must be nonempty and strictly ascending")]
    BadNodeList,
    #[error("dataset fraction {0} outside [1/64, 1]")]
    BadFraction(f64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub nodes: u64,
    pub gpus_per_node: u64,
    pub peak_flops_per_gpu: f64,
    pub mem_bw_per_gpu: f64,
    /// Bytes of host memory per node.
    pub node_memory: f64,
    pub usable_memory_fraction: f64,
    /// Filesystem read bandwidth available to each node, bytes/s.
    pub fs_read_bw: f64,
    pub swap_penalty: f64,
    /// Inter-node link bandwidth, bytes/s.
    pub net_bw: f64,
    pub net_latency: f64,
    /// Link bandwidth between GPUs of one node, bytes/s.
    pub intra_node_bw: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            nodes: 4,
            gpus_per_node: 4,
            peak_flops_per_gpu: 15.7e12,
            mem_bw_per_gpu: 9e11,
            node_memory: 256.0 * GIB,
            usable_memory_fraction: 0.7,
            fs_read_bw: 256.0 * GIB,
            swap_penalty: 30.0,
            net_bw: 1.25e9,
            net_latency: 5e-6,
            intra_node_bw: 1.5e11,
        }
    }
}

impl ClusterConfig {
    pub fn with_nodes(&self, nodes: u64) -> Self {
        Self { nodes, ..self.clone() }
    }

    pub fn total_gpus(&self) -> u64 {
        self.nodes * self.gpus_per_node
    }

    /// Zero latency, infinite bandwidth everywhere.
    pub fn ideal(&self) -> Self {
        Self {
            fs_read_bw: f64::INFINITY,
            net_bw: f64::INFINITY,
            intra_node_bw: f64::INFINITY,
            net_latency: 0.0,
            ..self.clone()
        }
    }

    pub fn check(&self) -> Result<(), ScalingError> {
        let bad = |m: &str| Err(ScalingError::InvalidCluster(m.to_string()));
        if self.nodes == 0 || self.gpus_per_node == 0 {
            return bad("nodes and gpus_per_node must be >= 1");
        }
        let positive = [
            ("peak_flops_per_gpu", self.peak_flops_per_gpu),
            ("mem_bw_per_gpu", self.mem_bw_per_gpu),
            ("node_memory", self.node_memory),
            ("fs_read_bw", self.fs_read_bw),
            ("swap_penalty", self.swap_penalty),
            ("net_bw", self.net_bw),
            ("intra_node_bw", self.intra_node_bw),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.net_latency >= 0.0) {
            return bad("net_latency must be >= 0");
        }
        if !(self.usable_memory_fraction > 0.0 && self.usable_memory_fraction <= 1.0) {
            return bad("usable_memory_fraction must be in (0, 1]");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k} = {v:?}");
        }
        s
    }

    fn fields(&self) -> [(&'static str, f64); 11] {
        [
            ("nodes", self.nodes as f64),
            ("gpus_per_node", self.gpus_per_node as f64),
            ("peak_flops_per_gpu", self.peak_flops_per_gpu),
            ("mem_bw_per_gpu", self.mem_bw_per_gpu),
            ("node_memory", self.node_memory),
            ("usable_memory_fraction", self.usable_memory_fraction),
            ("fs_read_bw", self.fs_read_bw),
            ("swap_penalty", self.swap_penalty),
            ("net_bw", self.net_bw),
            ("net_latency", self.net_latency),
            ("intra_node_bw", self.intra_node_bw),
        ]
    }

    /// `key = value` lines over defaults; values accept SI suffixes.
    pub fn parse(text: &str) -> Result<Self, ScalingError> {
        let mut c = Self::default();
        for (line, key, v) in key_values(text)? {
            match key {
                "nodes" => c.nodes = as_count(v, line)?,
                "gpus_per_node" => c.gpus_per_node = as_count(v, line)?,
                "peak_flops_per_gpu" => c.peak_flops_per_gpu = v,
                "mem_bw_per_gpu" => c.mem_bw_per_gpu = v,
                "node_memory" => c.node_memory = v,
                "usable_memory_fraction" => c.usable_memory_fraction = v,
                "fs_read_bw" => c.fs_read_bw = v,
                "swap_penalty" => c.swap_penalty = v,
                "net_bw" => c.net_bw = v,
                "net_latency" => c.net_latency = v,
                "intra_node_bw" => c.intra_node_bw = v,
                _ => return Err(ScalingError::Parse { line, msg: format!("unknown key {key}") }),
            }
        }
        c.check()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    pub name: String,
    pub params: f64,
    pub bytes_per_param: f64,
    pub per_sample_training_flops: f64,
    pub batch_per_gpu: u64,
    pub sustained_flops_per_gpu: f64,
    pub mixed_precision_speedup: f64,
}

impl ModelProfile {
    /// The pooled conv baseline, costed from its layer list.
    pub fn small() -> Self {
        let model = build_cosmo_net(&CosmoNetScale::Small).expect("small baseline is valid");
        let report = cost_report(&model, &TensorShape::cube(1, 128), 1, &CostParams::default())
            .expect("small baseline is costable");
        Self {
            name: "small".into(),
            params: report.params as f64,
            bytes_per_param: 4.0,
            per_sample_training_flops: report.training_flops as f64,
            batch_per_gpu: 10,
            sustained_flops_per_gpu: 0.8e12,
            mixed_precision_speedup: 1.0,
        }
    }

    pub fn medium() -> Self {
        Self {
            name: "medium".into(),
            params: 101.6e6,
            bytes_per_param: 4.0,
            per_sample_training_flops: 4.15e12,
            batch_per_gpu: 4,
            sustained_flops_per_gpu: 9.21e12,
            mixed_precision_speedup: 1.0,
        }
    }

    pub fn large() -> Self {
        Self {
            name: "large".into(),
            params: 374.2e6,
            bytes_per_param: 4.0,
            per_sample_training_flops: 16.2e12,
            batch_per_gpu: 1,
            sustained_flops_per_gpu: 379.2e12 / 13.45 / 4.0,
            mixed_precision_speedup: 1.0,
        }
    }

    pub fn presets() -> [Self; 3] {
        [Self::small(), Self::medium(), Self::large()]
    }

    pub fn preset(name: &str) -> Option<Self> {
        Self::presets().into_iter().find(|p| p.name == name)
    }

    /// Same profile with its calibrated mixed-precision speedup, the ratio
    /// of single- to mixed-precision epoch times clamped to at least 1.
    pub fn mixed_precision(&self) -> Self {
        let ratio: f64 = match self.name.as_str() {
            "small" => 18.71 / 19.46,
            "medium" => 364.06 / 205.38,
            "large" => 2497.2 / 1867.9,
            _ => 1.0,
        };
        Self {
            mixed_precision_speedup: ratio.max(1.0),
            ..self.clone()
        }
    }

    pub fn param_bytes(&self) -> f64 {
        self.params * self.bytes_per_param
    }

    pub fn check(&self, cluster: &ClusterConfig) -> Result<(), ScalingError> {
        let bad = |m: &str| Err(ScalingError::InvalidProfile(m.to_string()));
        if self.batch_per_gpu == 0 {
            return bad("batch_per_gpu must be >= 1");
        }
        if !(self.params >= 0.0 && self.bytes_per_param > 0.0) {
            return bad("params and bytes_per_param must be positive");
        }
        if !(self.per_sample_training_flops > 0.0 && self.sustained_flops_per_gpu > 0.0) {
            return bad("flops must be positive");
        }
        if !(self.mixed_precision_speedup >= 1.0) {
            return bad("mixed_precision_speedup must be >= 1");
        }
        if self.sustained_flops_per_gpu > cluster.peak_flops_per_gpu {
            return Err(ScalingError::SustainedExceedsPeak {
                sustained: self.sustained_flops_per_gpu,
                peak: cluster.peak_flops_per_gpu,
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "name = {}\nparams = {:?}\nbytes_per_param = {:?}\nper_sample_training_flops = {:?}\n\
             batch_per_gpu = {}\nsustained_flops_per_gpu = {:?}\nmixed_precision_speedup = {:?}\n",
            self.name,
            self.params,
            self.bytes_per_param,
            self.per_sample_training_flops,
            self.batch_per_gpu,
            self.sustained_flops_per_gpu,
            self.mixed_precision_speedup
        )
    }

    /// `key = value` lines; `preset = small|medium|large` seeds the fields.
    pub fn parse(text: &str) -> Result<Self, ScalingError> {
        let mut p = Self {
            name: "custom".into(),
            params: 0.0,
            bytes_per_param: 4.0,
            per_sample_training_flops: 0.0,
            batch_per_gpu: 1,
            sustained_flops_per_gpu: 0.0,
            mixed_precision_speedup: 1.0,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(ScalingError::Parse { line, msg: "expected key = value".into() });
            };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "name" => p.name = v.to_string(),
                "preset" => {
                    p = Self::preset(v).ok_or_else(|| ScalingError::Parse { line, msg: format!("unknown preset {v}") })?
                }
                _ => {
                    let x = crate::units::parse_si(v).map_err(|e| ScalingError::Parse { line, msg: e.to_string() })?;
                    match k {
                        "params" => p.params = x,
                        "bytes_per_param" => p.bytes_per_param = x,
                        "per_sample_training_flops" => p.per_sample_training_flops = x,
                        "batch_per_gpu" => p.batch_per_gpu = as_count(x, line)?,
                        "sustained_flops_per_gpu" => p.sustained_flops_per_gpu = x,
                        "mixed_precision_speedup" => p.mixed_precision_speedup = x,
                        _ => return Err(ScalingError::Parse { line, msg: format!("unknown key {k}") }),
                    }
                }
            }
        }
        Ok(p)
    }
}

fn key_values(text: &str) -> Result<Vec<(usize, &str, f64)>, ScalingError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(ScalingError::Parse { line, msg: "expected key = value".into() });
        };
        let x = crate::units::parse_si(v).map_err(|e| ScalingError::Parse { line, msg: e.to_string() })?;
        out.push((line, k.trim(), x));
    }
    Ok(out)
}

fn as_count(v: f64, line: usize) -> Result<u64, ScalingError> {
    if v >= 0.0 && v.fract() == 0.0 && v < u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(ScalingError::Parse { line, msg: format!("{v} is not a count") })
    }
}

/// Full dataset that fractions are taken from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullDataset {
    pub samples: u64,
    pub bytes: f64,
}

impl Default for FullDataset {
    /// 101,088 sub-volumes in 1.6 TB.
    fn default() -> Self {
        Self {
            samples: 101_088,
            bytes: 1600.0 * GIB,
        }
    }
}

impl FullDataset {
    pub fn sample_bytes(&self) -> f64 {
        self.bytes / self.samples as f64
    }

    pub fn samples_at(&self, fraction: f64) -> u64 {
        (self.samples as f64 * fraction).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRecord {
    pub nodes: u64,
    pub gpus: u64,
    pub dataset_fraction: f64,
    pub samples: u64,
    pub epoch_time_s: f64,
    pub compute_s: f64,
    pub allreduce_s: f64,
    pub load_s: f64,
    pub aggregate_flops: f64,
    pub per_gpu_flops: f64,
    pub swap_engaged: bool,
}

impl ScalingRecord {
    pub fn load_share(&self) -> f64 {
        self.load_s / self.epoch_time_s
    }

    pub fn allreduce_share(&self) -> f64 {
        self.allreduce_s / self.epoch_time_s
    }
}

/// Ring allreduce: `2(n-1) latency + 2 (n-1)/n bytes / bw`.
pub fn allreduce_time(param_bytes: f64, n_workers: u64, net_bw: f64, net_latency: f64) -> f64 {
    if n_workers <= 1 {
        return 0.0;
    }
    let n = n_workers as f64;
    2.0 * (n - 1.0) * net_latency + 2.0 * ((n - 1.0) / n) * param_bytes / net_bw
}

/// Per-iteration `(compute_s, allreduce_s)`. Rings that stay inside one
/// node use the intra-node link; larger rings are limited by the network.
pub fn iteration_time(profile: &ModelProfile, cluster: &ClusterConfig, total_gpus: u64) -> (f64, f64) {
    let compute = profile.batch_per_gpu as f64 * profile.per_sample_training_flops
        / (profile.sustained_flops_per_gpu * profile.mixed_precision_speedup);
    let bw = if total_gpus <= cluster.gpus_per_node {
        cluster.intra_node_bw
    } else {
        cluster.net_bw
    };
    (compute, allreduce_time(profile.param_bytes(), total_gpus, bw, cluster.net_latency))
}

pub fn swap_fraction(dataset_bytes: f64, cluster: &ClusterConfig) -> f64 {
    if dataset_bytes <= 0.0 {
        return 0.0;
    }
    let usable = cluster.usable_memory_fraction * cluster.nodes as f64 * cluster.node_memory;
    (1.0 - usable / dataset_bytes).max(0.0)
}

pub fn epoch_time(
    profile: &ModelProfile,
    cluster: &ClusterConfig,
    dataset_samples: u64,
    sample_bytes: f64,
) -> Result<ScalingRecord, ScalingError> {
    cluster.check()?;
    profile.check(cluster)?;
    let gpus = cluster.total_gpus();
    let global_batch = profile.batch_per_gpu * gpus;
    if dataset_samples < global_batch {
        return Err(ScalingError::InsufficientSamples {
            samples: dataset_samples,
            global_batch,
        });
    }
    let iterations = dataset_samples.div_ceil(global_batch) as f64;
    let (step_compute, step_allreduce) = iteration_time(profile, cluster, gpus);
    let dataset_bytes = dataset_samples as f64 * sample_bytes;
    let swap = swap_fraction(dataset_bytes, cluster);
    let read_bw = cluster.nodes as f64 * cluster.fs_read_bw;
    let swapped = swap * dataset_bytes;
    let load = (dataset_bytes - swapped) / read_bw + swapped * cluster.swap_penalty / read_bw;
    let compute_s = iterations * step_compute;
    let allreduce_s = iterations * step_allreduce;
    let epoch_time_s = compute_s + allreduce_s + load;
    let aggregate_flops = dataset_samples as f64 * profile.per_sample_training_flops / epoch_time_s;
    Ok(ScalingRecord {
        nodes: cluster.nodes,
        gpus,
        dataset_fraction: 1.0,
        samples: dataset_samples,
        epoch_time_s,
        compute_s,
        allreduce_s,
        load_s: load,
        aggregate_flops,
        per_gpu_flops: aggregate_flops / gpus as f64,
        swap_engaged: swap > 0.0,
    })
}

/// Fixed dataset fraction over increasing node counts.
pub fn strong_scaling(
    profile: &ModelProfile,
    template: &ClusterConfig,
    node_list: &[u64],
    dataset_fraction: f64,
    full: &FullDataset,
) -> Result<Vec<ScalingRecord>, ScalingError> {
    if node_list.is_empty() || node_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ScalingError::BadNodeList);
    }
    check_fraction(dataset_fraction)?;
    let samples = full.samples_at(dataset_fraction);
    node_list
        .iter()
        .map(|&n| {
            let mut r = epoch_time(profile, &template.with_nodes(n), samples, full.sample_bytes())?;
            r.dataset_fraction = dataset_fraction;
            Ok(r)
        })
        .collect()
}

/// Fixed cluster over dataset fractions of `full`.
pub fn data_scaling(
    profile: &ModelProfile,
    cluster: &ClusterConfig,
    fractions: &[f64],
    full: &FullDataset,
) -> Result<Vec<ScalingRecord>, ScalingError> {
    fractions
        .iter()
        .map(|&f| {
            check_fraction(f)?;
            let mut r = epoch_time(profile, cluster, full.samples_at(f), full.sample_bytes())?;
            r.dataset_fraction = f;
            Ok(r)
        })
        .collect()
}

fn check_fraction(f: f64) -> Result<(), ScalingError> {
    if (1.0 / 64.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(ScalingError::BadFraction(f))
    }
}

/// `epoch_time(first) / epoch_time(r)` for every record.
pub fn speedups(records: &[ScalingRecord]) -> Vec<f64> {
    let base = records.first().map_or(f64::NAN, |r| r.epoch_time_s);
    records.iter().map(|r| base / r.epoch_time_s).collect()
}

/// Fractions 1/64, 1/32, ..., 1/1.
pub fn power_of_two_fractions() -> Vec<f64> {
    (0..=6).rev().map(|k| 1.0 / (1u64 << k) as f64).collect()
}

pub const DEFAULT_NODE_LIST: [u64; 6] = [1, 2, 4, 8, 16, 32];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a / b - 1.0).abs()
    }

    #[test]
    fn ring_formula() {
        assert_eq!(allreduce_time(1e9, 1, 1e10, 1.0), 0.0);
        assert!(rel(allreduce_time(1e9, 4, 1e10, 0.0), 0.15) < 1e-12);
        let mut prev = 0.0;
        for n in 2..200 {
            let t = allreduce_time(1e9, n, 1e10, 1e-6);
            assert!(t > prev);
            prev = t;
        }
        assert!(rel(allreduce_time(1e9, 1_000_000, 1e10, 0.0), 0.2) < 1e-5);
    }

    #[test]
    fn medium_iteration_compute() {
        let (c, a) = iteration_time(&ModelProfile::medium(), &ClusterConfig::default(), 1);
        assert!(rel(c, 1.80) < 0.005, "{c}");
        assert_eq!(a, 0.0);
        let mut fast = ModelProfile::medium();
        fast.sustained_flops_per_gpu *= 2.0;
        assert!(rel(iteration_time(&fast, &ClusterConfig::default(), 1).0, c / 2.0) < 1e-15);
    }

    #[test]
    fn swap_fraction_examples() {
        let c = ClusterConfig::default();
        assert_eq!(swap_fraction(100.0 * GIB, &c), 0.0);
        assert!(rel(swap_fraction(800.0 * GIB, &c), 1.0 - 716.8 / 800.0) < 1e-12);
        assert!(swap_fraction(800.0 * GIB, &c) > 0.1);
        assert_eq!(swap_fraction(400.0 * GIB, &c), 0.0);
        assert!((swap_fraction(1600.0 * GIB, &c) - 0.552).abs() < 1e-9);
    }

    #[test]
    fn ideal_epoch_is_pure_compute() {
        let c = ClusterConfig::default().ideal();
        let p = ModelProfile::medium();
        let r = epoch_time(&p, &c, 1000, 1e7).unwrap();
        let (step, _) = iteration_time(&p, &c, 16);
        assert_eq!(r.load_s, 0.0);
        assert_eq!(r.allreduce_s, 0.0);
        assert_eq!(r.epoch_time_s, 1000u64.div_ceil(64) as f64 * step);
    }

    #[test]
    fn doubling_data_without_swap_is_linear() {
        let c = ClusterConfig::default();
        let p = ModelProfile::small();
        let a = epoch_time(&p, &c, 1600, 1e7).unwrap();
        let b = epoch_time(&p, &c, 3200, 1e7).unwrap();
        assert!(!b.swap_engaged);
        assert!(rel(b.compute_s, 2.0 * a.compute_s) < 1e-12);
        assert!(rel(b.load_s, 2.0 * a.load_s) < 1e-12);
    }

    #[test]
    fn insufficient_samples() {
        let c = ClusterConfig::default();
        let r = epoch_time(&ModelProfile::small(), &c, 159, 1.0);
        assert_eq!(r, Err(ScalingError::InsufficientSamples { samples: 159, global_batch: 160 }));
    }

    #[test]
    fn sustained_above_peak_rejected() {
        let mut p = ModelProfile::medium();
        p.sustained_flops_per_gpu = 20e12;
        assert!(matches!(
            epoch_time(&p, &ClusterConfig::default(), 1000, 1.0),
            Err(ScalingError::SustainedExceedsPeak { .. })
        ));
    }

    #[test]
    fn ideal_strong_scaling_is_exactly_linear() {
        let full = FullDataset { samples: 51_200, bytes: 51_200.0 * 1e7 };
        for p in ModelProfile::presets() {
            let recs = strong_scaling(&p, &ClusterConfig::default().ideal(), &DEFAULT_NODE_LIST, 1.0, &full).unwrap();
            assert_eq!(*speedups(&recs).last().unwrap(), 32.0, "{}", p.name);
        }
    }

    #[test]
    fn calibrated_strong_scaling_order() {
        let s: Vec<f64> = ModelProfile::presets()
            .iter()
            .map(|p| {
                let r = strong_scaling(p, &ClusterConfig::default(), &DEFAULT_NODE_LIST, 1.0 / 32.0, &FullDataset::default())
                    .unwrap();
                for w in r.windows(2) {
                    assert!(w[1].aggregate_flops >= w[0].aggregate_flops);
                }
                *speedups(&r).last().unwrap()
            })
            .collect();
        assert!(s[0] > s[1] && s[1] > s[2], "{s:?}");
        assert!(s.iter().all(|&x| x > 1.0 && x < 32.0), "{s:?}");
    }

    #[test]
    fn swap_boundary_and_slowdown() {
        let recs = data_scaling(
            &ModelProfile::small(),
            &ClusterConfig::default(),
            &power_of_two_fractions(),
            &FullDataset::default(),
        )
        .unwrap();
        let engaged: Vec<bool> = recs.iter().map(|r| r.swap_engaged).collect();
        assert_eq!(engaged, [false, false, false, false, false, true, true]);
        let quarter = &recs[4];
        let full = &recs[6];
        assert!(quarter.load_share() <= 0.05, "{}", quarter.load_share());
        assert!(full.load_share() >= 0.15, "{}", full.load_share());
        assert!(full.per_gpu_flops <= 0.75 * quarter.per_gpu_flops);
        let small: Vec<f64> = recs[..3].iter().map(|r| r.per_gpu_flops).collect();
        assert!(small.iter().all(|&f| rel(f, small[0]) < 0.02), "{small:?}");
    }

    #[test]
    fn bigger_batch_shrinks_allreduce_share() {
        let c = ClusterConfig::default().with_nodes(8);
        let mut a = ModelProfile::medium();
        let mut b = a.clone();
        a.batch_per_gpu = 2;
        b.batch_per_gpu = 8;
        let ra = epoch_time(&a, &c, 4096, 1e7).unwrap();
        let rb = epoch_time(&b, &c, 4096, 1e7).unwrap();
        assert!(rb.allreduce_s < ra.allreduce_s);
        assert!(rb.allreduce_share() < ra.allreduce_share());
    }

    #[test]
    fn mixed_precision_factors() {
        assert_eq!(ModelProfile::small().mixed_precision().mixed_precision_speedup, 1.0);
        assert!(rel(ModelProfile::medium().mixed_precision().mixed_precision_speedup, 1.7726) < 1e-3);
        assert!(rel(ModelProfile::large().mixed_precision().mixed_precision_speedup, 1.3369) < 1e-3);
    }

    #[test]
    fn text_round_trips() {
        let c = ClusterConfig { nodes: 8, net_latency: 1e-5, ..Default::default() };
        assert_eq!(ClusterConfig::parse(&c.to_text()).unwrap(), c);
        for p in ModelProfile::presets() {
            assert_eq!(ModelProfile::parse(&p.to_text()).unwrap(), p);
        }
        let p = ModelProfile::parse("preset = medium\nbatch_per_gpu = 8\n").unwrap();
        assert_eq!((p.batch_per_gpu, p.params), (8, 101.6e6));
        assert!(matches!(ClusterConfig::parse("nodes = 2\nbogus = 1"), Err(ScalingError::Parse { line: 2, .. })));
    }

    fn arb_profile() -> impl Strategy<Value = ModelProfile> {
        (1e6..1e9f64, 1e9..2e13f64, 1u64..16, 1e11..1.5e13f64, 1.0..2.0f64).prop_map(|(params, flops, batch, sus, mp)| {
            ModelProfile {
                name: "p".into(),
                params,
                bytes_per_param: 4.0,
                per_sample_training_flops: flops,
                batch_per_gpu: batch,
                sustained_flops_per_gpu: sus,
                mixed_precision_speedup: mp,
            }
        })
    }

    proptest! {
        #[test]
        fn records_are_additive_and_bounded(p in arb_profile(), nodes in 1u64..40, samples in 0u64..200_000, sb in 1e5..4e7f64) {
            let c = ClusterConfig::default().with_nodes(nodes);
            match epoch_time(&p, &c, samples, sb) {
                Ok(r) => {
                    prop_assert_eq!(r.epoch_time_s, r.compute_s + r.allreduce_s + r.load_s);
                    let cap = r.gpus as f64 * p.sustained_flops_per_gpu * p.mixed_precision_speedup;
                    prop_assert!(r.aggregate_flops <= cap * (1.0 + 1e-12));
                }
                Err(ScalingError::InsufficientSamples { .. }) => prop_assert!(samples < p.batch_per_gpu * c.total_gpus()),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn epoch_time_monotone(p in arb_profile(), nodes in 1u64..40, samples in 1000u64..100_000, factor in 1.01..4.0f64) {
            let c = ClusterConfig::default().with_nodes(nodes);
            let sb = 1.6e7;
            prop_assume!(samples >= p.batch_per_gpu * c.total_gpus());
            let base = epoch_time(&p, &c, samples, sb).unwrap().epoch_time_s;
            let t = |p: &ModelProfile, c: &ClusterConfig, s: u64| epoch_time(p, c, s, sb).unwrap().epoch_time_s;
            let faster = ModelProfile { sustained_flops_per_gpu: p.sustained_flops_per_gpu / factor, ..p.clone() };
            prop_assert!(t(&faster, &c, samples) >= base);
            let bigger = ModelProfile { params: p.params * factor, ..p.clone() };
            prop_assert!(t(&bigger, &c, samples) >= base);
            let wider = ClusterConfig { net_bw: c.net_bw * factor, ..c.clone() };
            prop_assert!(t(&p, &wider, samples) <= base);
            let faster_fs = ClusterConfig { fs_read_bw: c.fs_read_bw * factor, ..c.clone() };
            prop_assert!(t(&p, &faster_fs, samples) <= base);
            prop_assert!(t(&p, &c, samples * 2) >= base);
        }
    }
}
