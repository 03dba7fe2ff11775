//! Synthetic cosmology data: label sampling, a toy particle simulator,
//! voxelization into normalized density grids, octant splitting, the SVOX
//! sample container and the coordinator/worker dataset generator.

mod labels;
mod manifest;
mod pipeline;
mod sim;
mod svox;
mod voxel;

pub use labels::{sample_label, sample_labels, CosmoLabel, LabelRanges};
pub use manifest::{DatasetManifest, SampleRecord};
pub use pipeline::{generate_dataset, generate_dataset_with_faults, DatasetJob, FullScaleArithmetic};
pub use sim::{run_toy_simulation, Particles, SimConfig, DISPLACEMENT_SCALE};
pub use svox::{fnv1a64, read_sample, write_sample, CosmoSample, SVOX_HEADER_BYTES};
pub use voxel::{reassemble_octants, split_subvolumes, voxelize, DensityGrid};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("io error at {path}: {source}")]
    IoAt {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic: {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    VersionUnsupported(u16),
    #[error("unsupported element width {0}")]
    UnsupportedElementWidth(u8),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("bad label range for {name}: [{lo}, {hi}]")]
    BadRange { name: &'static str, lo: f64, hi: f64 },
    #[error("odd grid extent {0}")]
    OddExtent(usize),
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
    #[error("tasks failed after retries: {0:?}")]
    WorkerFailure(Vec<u64>),
    #[error("manifest parse error at line {line}: {msg}")]
    Manifest { line: usize, msg: String },
}
