//! Line-oriented dataset manifest.
//!
//! ```text
//! scalebench-manifest v1
//! format svox-v1
//! sims <count>
//! samples <count>
//! grid_d <d>
//! subvolume_d <d/2>
//! master_seed <u64>
//! box_side <f64>
//! particles_per_side <count>
//! mode_count <count>
//! range omega_m <lo> <hi>
//! range sigma8 <lo> <hi>
//! range n_s <lo> <hi>
//! columns path sim_index subvolume_index omega_m sigma8 n_s checksum
//! sample <path> <sim> <sub> <omega_m> <sigma8> <n_s> <checksum hex>
//! ...
//! ```
//!
//! Paths are relative to the manifest directory. Floats use the shortest
//! representation that round-trips.

use super::{CosmoLabel, DatagenError, LabelRanges};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.txt";
const MAGIC_LINE: &str = "scalebench-manifest v1";
const COLUMNS: &str = "path sim_index subvolume_index omega_m sigma8 n_s checksum";

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub path: String,
    pub sim_index: u64,
    pub subvolume_index: u8,
    pub label: CosmoLabel,
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub sims_count: u64,
    pub grid_d: usize,
    pub subvolume_d: usize,
    pub master_seed: u64,
    pub box_side: f64,
    pub particles_per_side: usize,
    pub mode_count: usize,
    pub ranges: LabelRanges,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn sample_count(&self) -> u64 {
        self.records.len() as u64
    }

    /// Bytes on disk of all sample files.
    pub fn total_bytes(&self) -> u64 {
        self.sample_count() * super::CosmoSample::encoded_len(self.subvolume_d) as u64
    }

    /// Violations of the 8x relation and record ordering.
    pub fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.sample_count() != 8 * self.sims_count {
            errs.push(format!(
                "sample_count {} != 8 x sims {}",
                self.sample_count(),
                self.sims_count
            ));
        }
        if self.subvolume_d * 2 != self.grid_d {
            errs.push(format!("subvolume_d {} is not grid_d / 2", self.subvolume_d));
        }
        for (i, r) in self.records.iter().enumerate() {
            let (sim, sub) = ((i / 8) as u64, (i % 8) as u8);
            if r.sim_index != sim || r.subvolume_index != sub {
                errs.push(format!("record {i} is ({}, {}), expected ({sim}, {sub})", r.sim_index, r.subvolume_index));
            }
        }
        errs
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = &self.ranges;
        let _ = writeln!(s, "{MAGIC_LINE}");
        let _ = writeln!(s, "format svox-v1");
        let _ = writeln!(s, "sims {}", self.sims_count);
        let _ = writeln!(s, "samples {}", self.sample_count());
        let _ = writeln!(s, "grid_d {}", self.grid_d);
        let _ = writeln!(s, "subvolume_d {}", self.subvolume_d);
        let _ = writeln!(s, "master_seed {}", self.master_seed);
        let _ = writeln!(s, "box_side {:?}", self.box_side);
        let _ = writeln!(s, "particles_per_side {}", self.particles_per_side);
        let _ = writeln!(s, "mode_count {}", self.mode_count);
        let _ = writeln!(s, "range omega_m {:?} {:?}", r.omega_m.0, r.omega_m.1);
        let _ = writeln!(s, "range sigma8 {:?} {:?}", r.sigma8.0, r.sigma8.1);
        let _ = writeln!(s, "range n_s {:?} {:?}", r.n_s.0, r.n_s.1);
        let _ = writeln!(s, "columns {COLUMNS}");
        for rec in &self.records {
            let l = rec.label;
            let _ = writeln!(
                s,
                "sample {} {} {} {:?} {:?} {:?} {:016x}",
                rec.path, rec.sim_index, rec.subvolume_index, l.omega_m, l.sigma8, l.n_s, rec.checksum
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, DatagenError> {
        let mut m = DatasetManifest {
            sims_count: 0,
            grid_d: 0,
            subvolume_d: 0,
            master_seed: 0,
            box_side: 0.0,
            particles_per_side: 0,
            mode_count: 0,
            ranges: LabelRanges::default(),
            records: Vec::new(),
        };
        let mut declared_samples: Option<u64> = None;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, MAGIC_LINE)) => {}
            _ => return Err(DatagenError::Manifest { line: 1, msg: "missing manifest header".into() }),
        }
        for (i, line) in lines {
            let lineno = i + 1;
            let err = |msg: String| DatagenError::Manifest { line: lineno, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let Some((&key, rest)) = fields.split_first() else { continue };
            let one = || -> Result<&str, DatagenError> {
                match rest {
                    [v] => Ok(v),
                    _ => Err(err(format!("{key} takes one value"))),
                }
            };
            macro_rules! num {
                ($s:expr) => {
                    $s.parse().map_err(|e| err(format!("{key}: {e}")))?
                };
            }
            match key {
                "format" => {
                    if one()? != "svox-v1" {
                        return Err(err(format!("unknown format {}", one()?)));
                    }
                }
                "sims" => m.sims_count = num!(one()?),
                "samples" => declared_samples = Some(num!(one()?)),
                "grid_d" => m.grid_d = num!(one()?),
                "subvolume_d" => m.subvolume_d = num!(one()?),
                "master_seed" => m.master_seed = num!(one()?),
                "box_side" => m.box_side = num!(one()?),
                "particles_per_side" => m.particles_per_side = num!(one()?),
                "mode_count" => m.mode_count = num!(one()?),
                "range" => {
                    let [name, lo, hi] = rest else {
                        return Err(err("range takes name lo hi".into()));
                    };
                    let pair = (num!(lo), num!(hi));
                    match *name {
                        "omega_m" => m.ranges.omega_m = pair,
                        "sigma8" => m.ranges.sigma8 = pair,
                        "n_s" => m.ranges.n_s = pair,
                        other => return Err(err(format!("unknown range {other}"))),
                    }
                }
                "columns" => {
                    if rest.join(" ") != COLUMNS {
                        return Err(err("unexpected column layout".into()));
                    }
                }
                "sample" => {
                    let [path, sim, sub, om, s8, ns, sum] = rest else {
                        return Err(err(format!("sample has {} fields, expected 7", rest.len())));
                    };
                    m.records.push(SampleRecord {
                        path: path.to_string(),
                        sim_index: num!(sim),
                        subvolume_index: num!(sub),
                        label: CosmoLabel { omega_m: num!(om), sigma8: num!(s8), n_s: num!(ns) },
                        checksum: u64::from_str_radix(sum, 16).map_err(|e| err(format!("checksum: {e}")))?,
                    });
                }
                other => return Err(err(format!("unknown key {other}"))),
            }
        }
        if let Some(n) = declared_samples {
            if n != m.sample_count() {
                return Err(DatagenError::Manifest {
                    line: 0,
                    msg: format!("declared {n} samples, found {}", m.sample_count()),
                });
            }
        }
        Ok(m)
    }

    /// Writes `manifest.txt` in `dir` through a temporary file and rename.
    pub fn write_atomic(&self, dir: &Path) -> Result<(), DatagenError> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let dst = dir.join(MANIFEST_FILE);
        fs::write(&tmp, self.to_text()).map_err(|source| DatagenError::IoAt { path: tmp.clone(), source })?;
        fs::rename(&tmp, &dst).map_err(|source| DatagenError::IoAt { path: dst, source })
    }

    pub fn load(dir: &Path) -> Result<Self, DatagenError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| DatagenError::IoAt { path, source })?;
        Self::parse(&text)
    }

    /// Re-reads every sample file and compares its checksum and label.
    pub fn verify_files(&self, dir: &Path) -> Result<(), DatagenError> {
        for rec in &self.records {
            let sample = super::read_sample(&dir.join(&rec.path))?;
            let computed = sample.checksum();
            if computed != rec.checksum {
                return Err(DatagenError::ChecksumMismatch { stored: rec.checksum, computed });
            }
            if sample.label != rec.label || sample.grid.d != self.subvolume_d {
                return Err(DatagenError::Manifest {
                    line: 0,
                    msg: format!("{} does not match its record", rec.path),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(sims: u64) -> DatasetManifest {
        let records = (0..sims * 8)
            .map(|i| SampleRecord {
                path: format!("sim{:06}_sub{}.svox", i / 8, i % 8),
                sim_index: i / 8,
                subvolume_index: (i % 8) as u8,
                label: CosmoLabel { omega_m: 0.3 + i as f64 * 1e-3, sigma8: 0.8, n_s: 1.0 / 3.0 },
                checksum: i.wrapping_mul(0x9e37_79b9_7f4a_7c15),
            })
            .collect();
        DatasetManifest {
            sims_count: sims,
            grid_d: 64,
            subvolume_d: 32,
            master_seed: 42,
            box_side: 512.0,
            particles_per_side: 64,
            mode_count: 32,
            ranges: LabelRanges::default(),
            records,
        }
    }

    #[test]
    fn text_round_trip() {
        let m = manifest(3);
        assert!(m.check().is_empty());
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn eightfold_relation_checked() {
        let mut m = manifest(2);
        m.records.pop();
        assert!(!m.check().is_empty());
    }

    #[test]
    fn bad_lines_report_position() {
        let text = manifest(1).to_text().replace("grid_d 64", "grid_d sixty");
        match DatasetManifest::parse(&text) {
            Err(DatagenError::Manifest { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn atomic_write_leaves_no_tmp() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(1);
        m.write_atomic(dir.path()).unwrap();
        assert!(!dir.path().join("manifest.txt.tmp").exists());
        assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
    }
}
