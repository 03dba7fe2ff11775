//! Toy structure-formation stand-in.
//!
//! Particles start on a uniform lattice and are moved along a superposition
//! of plane-wave displacement modes. Mode `m` has an integer wave vector
//! `n_m` (in units of the fundamental box frequency), a random phase, and a
//! displacement along `n_m / |n_m|` with amplitude
//!
//! ```text
//! A_m = DISPLACEMENT_SCALE * sigma8 * |n_m|^(n_s - 1) / |n_m| * omega_m^0.55 * box / (2 pi)
//! ```
//!
//! so the density contrast of each mode is proportional to
//! `sigma8 * |n|^(n_s - 1) * growth(omega_m)`.

use super::{CosmoLabel, DatagenError};
use crate::rng::SplitMix64;
use std::f64::consts::PI;

/// Density-contrast amplitude of a single mode at unit label factors.
pub const DISPLACEMENT_SCALE: f64 = 0.4;

/// Largest wave-number component drawn for a mode.
const MAX_WAVENUMBER: i64 = 8;

pub type Particles = Vec<[f64; 3]>;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub box_side: f64,
    pub grid_d: usize,
    pub particles_per_side: usize,
    pub mode_count: usize,
    pub voxel_resolution: f64,
}

impl Default for SimConfig {
    /// Full geometry: a 512-unit box binned at resolution 2 into 256^3.
    fn default() -> Self {
        Self {
            box_side: 512.0,
            grid_d: 256,
            particles_per_side: 256,
            mode_count: 32,
            voxel_resolution: 2.0,
        }
    }
}

impl SimConfig {
    /// CI-sized: 64^3 particles into a 64^3 grid (sub-volumes of 32^3).
    pub fn desk_scale() -> Self {
        Self::with_grid(64, 64)
    }

    /// Same box, `grid_d` voxels per side.
    pub fn with_grid(grid_d: usize, particles_per_side: usize) -> Self {
        let box_side = 512.0;
        Self {
            box_side,
            grid_d,
            particles_per_side,
            mode_count: 32,
            voxel_resolution: box_side / grid_d as f64,
        }
    }

    pub fn check(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::BadConfig(m));
        if self.grid_d == 0 || !self.grid_d.is_multiple_of(2) {
            return bad(format!("grid_d {} must be even and positive", self.grid_d));
        }
        if self.grid_d > u16::MAX as usize {
            return bad(format!("grid_d {} too large", self.grid_d));
        }
        if self.particles_per_side < 2 {
            return bad("particles_per_side must be >= 2".into());
        }
        if !(self.box_side > 0.0 && self.voxel_resolution > 0.0) {
            return bad("box_side and voxel_resolution must be positive".into());
        }
        let implied = self.box_side / self.voxel_resolution;
        if (implied - self.grid_d as f64).abs() > 1e-9 * implied {
            return bad(format!(
                "grid_d {} != box_side / voxel_resolution = {implied}",
                self.grid_d
            ));
        }
        Ok(())
    }
}

fn growth(omega_m: f64) -> f64 {
    omega_m.powf(0.55)
}

struct Mode {
    wave: [f64; 3],
    direction: [f64; 3],
    phase: f64,
    amplitude: f64,
}

fn draw_modes(label: &CosmoLabel, config: &SimConfig, seed: u64) -> Vec<Mode> {
    let mut rng = SplitMix64::new(seed);
    let span = (2 * MAX_WAVENUMBER + 1) as u64;
    (0..config.mode_count)
        .map(|_| {
            let n = loop {
                let n = [0; 3].map(|_: i32| rng.below(span) as i64 - MAX_WAVENUMBER);
                if n != [0, 0, 0] {
                    break n.map(|c| c as f64);
                }
            };
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            let phase = rng.uniform(0.0, 2.0 * PI);
            let amplitude = DISPLACEMENT_SCALE
                * label.sigma8
                * norm.powf(label.n_s - 1.0)
                / norm
                * growth(label.omega_m)
                * config.box_side
                / (2.0 * PI);
            Mode {
                wave: n.map(|c| 2.0 * PI * c / config.box_side),
                direction: n.map(|c| c / norm),
                phase,
                amplitude,
            }
        })
        .collect()
}

/// Particle positions in `[0, box_side)^3`, lattice order x-fastest.
pub fn run_toy_simulation(label: &CosmoLabel, config: &SimConfig, seed: u64) -> Particles {
    let modes = draw_modes(label, config, seed);
    let p = config.particles_per_side;
    let spacing = config.box_side / p as f64;
    let coord: Vec<f64> = (0..p).map(|i| (i as f64 + 0.5) * spacing).collect();
    // sin(kx x + ky y + kz z + phase) = Im(e^{i kx x} * e^{i (ky y + kz z + phase)}),
    // with the x factor tabulated once per mode.
    let x_phase: Vec<Vec<(f64, f64)>> = modes
        .iter()
        .map(|m| coord.iter().map(|&x| (m.wave[0] * x).sin_cos()).collect())
        .collect();
    let mut out = Vec::with_capacity(p * p * p);
    let mut yz = vec![(0.0, 0.0); modes.len()];
    for &z in &coord {
        for &y in &coord {
            for (slot, m) in yz.iter_mut().zip(&modes) {
                *slot = (m.wave[1] * y + m.wave[2] * z + m.phase).sin_cos();
            }
            for (i, &x) in coord.iter().enumerate() {
                let mut pos = [x, y, z];
                for ((m, &(s_yz, c_yz)), table) in modes.iter().zip(&yz).zip(&x_phase) {
                    let (s_x, c_x) = table[i];
                    let s = m.amplitude * (s_x * c_yz + c_x * s_yz);
                    for a in 0..3 {
                        pos[a] += s * m.direction[a];
                    }
                }
                out.push(pos.map(|v| wrap(v, config.box_side)));
            }
        }
    }
    out
}

fn wrap(v: f64, side: f64) -> f64 {
    let w = v.rem_euclid(side);
    if w >= side {
        0.0
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::voxelize;

    fn label(sigma8: f64) -> CosmoLabel {
        CosmoLabel { omega_m: 0.3, sigma8, n_s: 0.95 }
    }

    fn small_config() -> SimConfig {
        SimConfig::with_grid(32, 32)
    }

    #[test]
    fn zero_amplitude_keeps_lattice() {
        let c = small_config();
        let parts = run_toy_simulation(&label(0.0), &c, 3);
        let spacing = c.box_side / c.particles_per_side as f64;
        assert_eq!(parts[0], [0.5 * spacing; 3]);
        let last = parts.last().unwrap();
        assert_eq!(*last, [(c.particles_per_side as f64 - 0.5) * spacing; 3]);
        for (idx, x) in parts.iter().enumerate() {
            let i = idx % c.particles_per_side;
            assert_eq!(x[0], (i as f64 + 0.5) * spacing);
        }
    }

    #[test]
    fn bit_identical_reruns() {
        let c = small_config();
        let a = run_toy_simulation(&label(0.9), &c, 11);
        let b = run_toy_simulation(&label(0.9), &c, 11);
        assert!(a.iter().zip(&b).all(|(p, q)| p.map(f64::to_bits) == q.map(f64::to_bits)));
        assert_ne!(a, run_toy_simulation(&label(0.9), &c, 12));
    }

    #[test]
    fn positions_stay_in_box() {
        let c = small_config();
        let parts = run_toy_simulation(&label(0.95), &c, 1);
        assert!(parts.iter().flatten().all(|&v| (0.0..c.box_side).contains(&v)));
    }

    #[test]
    fn density_variance_grows_with_sigma8() {
        let c = SimConfig::desk_scale();
        for seed in [1u64, 2, 3] {
            let v: Vec<f64> = [0.78, 0.865, 0.95]
                .iter()
                .map(|&s| voxelize(&run_toy_simulation(&label(s), &c, seed), &c).variance())
                .collect();
            assert!(v[0] < v[1] && v[1] < v[2], "seed {seed}: {v:?}");
        }
    }

    #[test]
    fn config_checks() {
        assert!(SimConfig::default().check().is_ok());
        assert!(SimConfig::desk_scale().check().is_ok());
        assert_eq!(SimConfig::default().grid_d, 256);
        let odd = SimConfig { grid_d: 63, ..SimConfig::desk_scale() };
        assert!(odd.check().is_err());
        let inconsistent = SimConfig { voxel_resolution: 3.0, ..SimConfig::desk_scale() };
        assert!(inconsistent.check().is_err());
    }
}
