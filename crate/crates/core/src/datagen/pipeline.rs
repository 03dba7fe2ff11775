use super::manifest::{DatasetManifest, SampleRecord};
use super::{
    run_toy_simulation, sample_label, split_subvolumes, voxelize, write_sample, CosmoSample, DatagenError,
    LabelRanges, SimConfig,
};
use crate::rng::SplitMix64;
use std::collections::VecDeque;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

const SIM_STREAM: u64 = 0x5349_4d53; // "SIMS"

#[derive(Debug, Clone)]
pub struct DatasetJob {
    pub sims: u64,
    pub workers: usize,
    /// Indices a worker claims per visit to the coordinator.
    pub per_worker_batch: u64,
    pub out_dir: PathBuf,
    pub master_seed: u64,
    pub config: SimConfig,
    pub ranges: LabelRanges,
    /// Attempts per task before it is reported as failed.
    pub max_attempts: u32,
}

impl DatasetJob {
    pub fn new(sims: u64, workers: usize, out_dir: impl Into<PathBuf>, master_seed: u64) -> Self {
        Self {
            sims,
            workers,
            per_worker_batch: 1,
            out_dir: out_dir.into(),
            master_seed,
            config: SimConfig::desk_scale(),
            ranges: LabelRanges::default(),
            max_attempts: 3,
        }
    }

    fn check(&self) -> Result<(), DatagenError> {
        if self.sims == 0 || self.workers == 0 || self.per_worker_batch == 0 || self.max_attempts == 0 {
            return Err(DatagenError::BadConfig(
                "sims, workers, per_worker_batch and max_attempts must be >= 1".into(),
            ));
        }
        self.config.check()?;
        self.ranges.check()
    }
}

pub fn sample_file_name(sim: u64, sub: usize) -> String {
    format!("sim{sim:06}_sub{sub}.svox")
}

/// Simulation seed for task `index`.
pub fn sim_seed(master_seed: u64, index: u64) -> u64 {
    SplitMix64::for_index(master_seed, SIM_STREAM, index).next_u64()
}

/// Runs task `index` end to end and writes its eight sample files.
fn run_task(job: &DatasetJob, index: u64) -> Result<Vec<SampleRecord>, DatagenError> {
    let label = sample_label(&job.ranges, job.master_seed, index);
    let particles = run_toy_simulation(&label, &job.config, sim_seed(job.master_seed, index));
    let grid = voxelize(&particles, &job.config);
    let octants = split_subvolumes(&grid)?;
    let mut records = Vec::with_capacity(8);
    for (sub, mut grid) in octants.into_iter().enumerate() {
        renormalize(&mut grid);
        let name = sample_file_name(index, sub);
        let tmp = job.out_dir.join(format!("{name}.tmp"));
        let checksum = write_sample(&CosmoSample { label, grid }, &tmp)?;
        let dst = job.out_dir.join(&name);
        fs::rename(&tmp, &dst).map_err(|source| DatagenError::IoAt { path: dst, source })?;
        records.push(SampleRecord {
            path: name,
            sim_index: index,
            subvolume_index: sub as u8,
            label,
            checksum,
        });
    }
    Ok(records)
}

/// Rescales a sub-volume so its own mean density is 1.
fn renormalize(grid: &mut super::DensityGrid) {
    let mean = grid.mean();
    if mean > 0.0 {
        grid.values.iter_mut().for_each(|v| *v /= mean);
    }
}

pub fn generate_dataset(job: &DatasetJob) -> Result<DatasetManifest, DatagenError> {
    generate_dataset_with_faults(job, |_, _| false)
}

/// Like [`generate_dataset`], but `fail(index, attempt)` returning true makes
/// that attempt fail before doing any work.
pub fn generate_dataset_with_faults<F>(job: &DatasetJob, fail: F) -> Result<DatasetManifest, DatagenError>
where
    F: Fn(u64, u32) -> bool + Sync,
{
    job.check()?;
    fs::create_dir_all(&job.out_dir).map_err(|source| DatagenError::IoAt { path: job.out_dir.clone(), source })?;

    let next = AtomicU64::new(0);
    let in_flight = AtomicUsize::new(0);
    let retry: Mutex<VecDeque<(u64, u32)>> = Mutex::new(VecDeque::new());
    let results: Mutex<Vec<Option<Vec<SampleRecord>>>> = Mutex::new(vec![None; job.sims as usize]);
    let failed: Mutex<Vec<u64>> = Mutex::new(Vec::new());

    let worker = || loop {
        let mut batch: Vec<(u64, u32)> = Vec::new();
        {
            // in_flight is raised while the queue lock is held, so an idle
            // worker never sees an empty queue and zero in-flight tasks
            // while a claimed task is still pending.
            let mut q = retry.lock().unwrap();
            if let Some(t) = q.pop_front() {
                batch.push(t);
            } else {
                let start = next.fetch_add(job.per_worker_batch, Ordering::SeqCst);
                if start < job.sims {
                    let end = (start + job.per_worker_batch).min(job.sims);
                    batch.extend((start..end).map(|i| (i, 1)));
                }
            }
            if batch.is_empty() {
                if in_flight.load(Ordering::SeqCst) == 0 {
                    return;
                }
            } else {
                in_flight.fetch_add(batch.len(), Ordering::SeqCst);
            }
        }
        if batch.is_empty() {
            std::thread::yield_now();
            continue;
        }
        for (index, attempt) in batch {
            let outcome = if fail(index, attempt) { None } else { run_task(job, index).ok() };
            match outcome {
                Some(records) => results.lock().unwrap()[index as usize] = Some(records),
                None if attempt < job.max_attempts => {
                    retry.lock().unwrap().push_back((index, attempt + 1));
                }
                None => failed.lock().unwrap().push(index),
            }
            in_flight.fetch_sub(1, Ordering::SeqCst);
        }
    };

    std::thread::scope(|s| {
        for _ in 0..job.workers {
            s.spawn(worker);
        }
    });

    let mut failed = failed.into_inner().unwrap();
    if !failed.is_empty() {
        failed.sort();
        return Err(DatagenError::WorkerFailure(failed));
    }
    let records = results
        .into_inner()
        .unwrap()
        .into_iter()
        .flat_map(|r| r.expect("every task completed"))
        .collect();
    let manifest = DatasetManifest {
        sims_count: job.sims,
        grid_d: job.config.grid_d,
        subvolume_d: job.config.grid_d / 2,
        master_seed: job.master_seed,
        box_side: job.config.box_side,
        particles_per_side: job.config.particles_per_side,
        mode_count: job.config.mode_count,
        ranges: job.ranges,
        records,
    };
    manifest.write_atomic(&job.out_dir)?;
    Ok(manifest)
}

/// Storage arithmetic for a dataset that is never materialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullScaleArithmetic {
    pub sims: u64,
    pub grid_d: usize,
    pub element_bytes: usize,
}

impl Default for FullScaleArithmetic {
    fn default() -> Self {
        Self {
            sims: 12_632,
            grid_d: 256,
            element_bytes: 8,
        }
    }
}

impl FullScaleArithmetic {
    pub fn sample_count(&self) -> u64 {
        8 * self.sims
    }

    pub fn subvolume_d(&self) -> usize {
        self.grid_d / 2
    }

    pub fn payload_bytes(&self) -> u64 {
        (self.subvolume_d().pow(3) * self.element_bytes) as u64
    }

    pub fn file_bytes(&self) -> u64 {
        CosmoSample::encoded_len(self.subvolume_d()) as u64
    }

    pub fn total_bytes(&self) -> u64 {
        self.sample_count() * self.file_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::read_sample;

    fn tiny_job(dir: &std::path::Path, sims: u64, workers: usize) -> DatasetJob {
        DatasetJob {
            config: SimConfig::with_grid(8, 8),
            ..DatasetJob::new(sims, workers, dir, 5)
        }
    }

    #[test]
    fn four_sims_give_32_samples() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&tiny_job(dir.path(), 4, 2)).unwrap();
        assert_eq!(m.sample_count(), 32);
        assert!(m.check().is_empty());
        m.verify_files(dir.path()).unwrap();
        assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn stored_grids_have_unit_mean() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&tiny_job(dir.path(), 2, 1)).unwrap();
        for r in &m.records {
            let g = read_sample(&dir.path().join(&r.path)).unwrap().grid;
            assert!((g.mean() - 1.0).abs() < 1e-6);
            assert!(g.values.iter().all(|&v| v >= 0.0));
        }
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn sigma8_recoverable_from_variance() {
        let ranges = LabelRanges { omega_m: (0.3, 0.3), n_s: (0.95, 0.95), ..LabelRanges::default() };
        let config = SimConfig::desk_scale();
        let (mut s8, mut var) = (Vec::new(), Vec::new());
        for i in 0..50 {
            let label = sample_label(&ranges, 9, i);
            let grid = voxelize(&run_toy_simulation(&label, &config, sim_seed(9, i)), &config);
            let mut oct = split_subvolumes(&grid).unwrap()[0].clone();
            renormalize(&mut oct);
            s8.push(label.sigma8);
            var.push(oct.variance());
        }
        let rho = spearman(&s8, &var);
        assert!(rho >= 0.8, "spearman {rho}");
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_dataset(&tiny_job(a.path(), 6, 1)).unwrap();
        let mut job = tiny_job(b.path(), 6, 8);
        job.per_worker_batch = 2;
        let mb = generate_dataset(&job).unwrap();
        assert_eq!(ma.to_text(), mb.to_text());
        for r in &ma.records {
            assert_eq!(fs::read(a.path().join(&r.path)).unwrap(), fs::read(b.path().join(&r.path)).unwrap());
        }
    }

    #[test]
    fn failed_tasks_are_retried() {
        let dir = tempfile::tempdir().unwrap();
        let clean = tempfile::tempdir().unwrap();
        let m = generate_dataset_with_faults(&tiny_job(dir.path(), 5, 3), |i, attempt| i % 2 == 0 && attempt < 3).unwrap();
        let reference = generate_dataset(&tiny_job(clean.path(), 5, 1)).unwrap();
        assert_eq!(m, reference);
    }

    #[test]
    fn exhausted_retries_report_indices() {
        let dir = tempfile::tempdir().unwrap();
        let r = generate_dataset_with_faults(&tiny_job(dir.path(), 4, 2), |i, _| i == 1 || i == 3);
        match r {
            Err(DatagenError::WorkerFailure(ids)) => assert_eq!(ids, vec![1, 3]),
            other => panic!("{other:?}"),
        }
        assert!(!dir.path().join("manifest.txt").exists());
    }

    #[test]
    fn zero_sims_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_dataset(&tiny_job(dir.path(), 0, 1)).is_err());
    }

    #[test]
    fn full_scale_arithmetic() {
        let f = FullScaleArithmetic::default();
        assert_eq!(f.subvolume_d(), 128);
        assert_eq!(f.payload_bytes(), 16_777_216);
        assert_eq!(f.file_bytes(), 16_777_258);
        assert_eq!(f.sample_count(), 101_056);
        let tb = f.total_bytes() as f64;
        assert!((tb / 1.6e12 - 1.0).abs() < 0.10, "{tb}");
    }
}
