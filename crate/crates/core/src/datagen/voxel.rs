use super::{DatagenError, SimConfig};

/// Cube of normalized densities, x-fastest row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub d: usize,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.d * (y + self.d * z)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// 3D histogram of particle positions, divided by the mean count.
pub fn voxelize(particles: &[[f64; 3]], config: &SimConfig) -> DensityGrid {
    let d = config.grid_d;
    let mut counts = vec![0u64; d * d * d];
    let cell = |v: f64| ((v / config.voxel_resolution) as usize).min(d - 1);
    for p in particles {
        counts[cell(p[0]) + d * (cell(p[1]) + d * cell(p[2]))] += 1;
    }
    let mean = particles.len() as f64 / counts.len() as f64;
    DensityGrid {
        d,
        values: counts.into_iter().map(|c| c as f64 / mean).collect(),
    }
}

/// The eight octants of side d/2, ordered z-major, then y, then x.
pub fn split_subvolumes(grid: &DensityGrid) -> Result<[DensityGrid; 8], DatagenError> {
    if !grid.d.is_multiple_of(2) {
        return Err(DatagenError::OddExtent(grid.d));
    }
    let h = grid.d / 2;
    Ok(std::array::from_fn(|o| {
        let (oz, oy, ox) = (o / 4, (o / 2) % 2, o % 2);
        let mut values = Vec::with_capacity(h * h * h);
        for z in 0..h {
            for y in 0..h {
                let start = grid.index(ox * h, oy * h + y, oz * h + z);
                values.extend_from_slice(&grid.values[start..start + h]);
            }
        }
        DensityGrid { d: h, values }
    }))
}

/// Inverse of [`split_subvolumes`].
pub fn reassemble_octants(octants: &[DensityGrid; 8]) -> DensityGrid {
    let h = octants[0].d;
    let d = 2 * h;
    let mut out = DensityGrid {
        d,
        values: vec![0.0; d * d * d],
    };
    for (o, oct) in octants.iter().enumerate() {
        let (oz, oy, ox) = (o / 4, (o / 2) % 2, o % 2);
        for z in 0..h {
            for y in 0..h {
                let dst = out.index(ox * h, oy * h + y, oz * h + z);
                let src = oct.index(0, y, z);
                out.values[dst..dst + h].copy_from_slice(&oct.values[src..src + h]);
            }
        }
    }
    out
}
