//! A small, exactly instrumented forward/backward engine for dense and
//! plain 3D convolution networks. Every multiply-add executed inside the
//! layer loops is counted, which makes it a brute-force oracle for the
//! analytic cost model.

mod adam;
mod oracle;
mod train;

pub use adam::{adam_step, AdamState};
pub use oracle::{oracle_suite, random_conv_net, random_dense_net, OracleCheck};
pub use train::{desk_training_set, load_samples, train_tiny, tiny_conv_net, TrainConfig, TrainSample};

use crate::arch_ir::{infer_shapes, HeadInput, ModelSpec, OpKind, OpSpec, ShapeError, TensorShape, LEAKY_SLOPE};
use crate::rng::SplitMix64;
use std::ops::AddAssign;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrainerError {
    #[error("unsupported op for the oracle: {0}")]
    UnsupportedOpForOracle(String),
    #[error("backward called without a cached forward pass")]
    NoCachedForward,
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("network output width is {0}, expected 3")]
    BadOutputWidth(usize),
    #[error("training data: {0}")]
    Data(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountedOps {
    pub multiply_adds: u64,
    pub reads: u64,
    pub writes: u64,
}

impl CountedOps {
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

impl AddAssign for CountedOps {
    fn add_assign(&mut self, o: Self) {
        self.multiply_adds += o.multiply_adds;
        self.reads += o.reads;
        self.writes += o.writes;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub op: OpSpec,
    pub in_shape: TensorShape,
    pub out_shape: TensorShape,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of one layer, laid out like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Spatial extents padded to rank 3, fastest axis first.
fn dims3(shape: &TensorShape) -> [usize; 3] {
    let mut d = [1; 3];
    d[..shape.spatial.len()].copy_from_slice(&shape.spatial);
    d
}

fn taps3(op: &OpSpec, rank: usize) -> [usize; 3] {
    let mut t = [1; 3];
    t[..rank].fill(op.kernel);
    t
}

/// Geometry of a conv layer with "same" padding.
struct ConvGeom {
    cin: usize,
    cout: usize,
    ind: [usize; 3],
    outd: [usize; 3],
    taps: [usize; 3],
    stride: usize,
    dilation: usize,
    pad: [usize; 3],
}

impl ConvGeom {
    fn new(l: &Layer) -> Self {
        let rank = l.in_shape.spatial.len();
        let taps = taps3(&l.op, rank);
        let pad = taps.map(|t| l.op.dilation * (t - 1) / 2);
        Self {
            cin: l.in_shape.channels,
            cout: l.out_shape.channels,
            ind: dims3(&l.in_shape),
            outd: dims3(&l.out_shape),
            taps,
            stride: l.op.stride,
            dilation: l.op.dilation,
            pad,
        }
    }

    fn tap_volume(&self) -> usize {
        self.taps.iter().product()
    }

    /// Input coordinate along `axis` for output `o` and tap `t`, if inside.
    fn source(&self, axis: usize, o: usize, t: usize) -> Option<usize> {
        let i = (o * self.stride + t * self.dilation) as isize - self.pad[axis] as isize;
        (i >= 0 && (i as usize) < self.ind[axis]).then_some(i as usize)
    }

    /// Calls `f(out_index, weight_tap_index, input_index)` for every tap
    /// of every output voxel of one (co, ci) channel pair, in loop order.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, Option<usize>)) {
        let [ox, oy, oz] = self.outd;
        let [tx, ty, tz] = self.taps;
        let [ix, iy, _] = self.ind;
        for z in 0..oz {
            for y in 0..oy {
                for x in 0..ox {
                    let out = x + ox * (y + oy * z);
                    for c in 0..tz {
                        let sz = self.source(2, z, c);
                        for b in 0..ty {
                            let sy = self.source(1, y, b);
                            for a in 0..tx {
                                let sx = self.source(0, x, a);
                                let tap = a + tx * (b + ty * c);
                                let src = match (sx, sy, sz) {
                                    (Some(i), Some(j), Some(k)) => Some(i + ix * (j + iy * k)),
                                    _ => None,
                                };
                                f(out, tap, src);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Layer {
    fn forward(&self, x: &[f64], ops: &mut CountedOps) -> Vec<f64> {
        match self.op.kind {
            OpKind::Dense => {
                let (n_in, n_out) = (self.in_shape.channels, self.out_shape.channels);
                let mut y = vec![0.0; n_out];
                for (o, yo) in y.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    if self.op.bias {
                        acc += self.bias[o];
                        ops.multiply_adds += 1;
                        ops.reads += 1;
                    }
                    let row = &self.weights[o * n_in..(o + 1) * n_in];
                    for (w, xi) in row.iter().zip(x) {
                        acc += w * xi;
                        ops.multiply_adds += 1;
                        ops.reads += 2;
                    }
                    *yo = acc;
                    ops.writes += 1;
                }
                y
            }
            OpKind::Conv3d => {
                let g = ConvGeom::new(self);
                let (in_sp, out_sp, kv) = (g.ind.iter().product::<usize>(), g.outd.iter().product::<usize>(), g.tap_volume());
                let mut y = vec![0.0; g.cout * out_sp];
                for co in 0..g.cout {
                    let yc = &mut y[co * out_sp..(co + 1) * out_sp];
                    if self.op.bias {
                        for v in yc.iter_mut() {
                            *v += self.bias[co];
                            ops.multiply_adds += 1;
                            ops.reads += 1;
                        }
                    }
                    for ci in 0..g.cin {
                        let w = &self.weights[(co * g.cin + ci) * kv..(co * g.cin + ci + 1) * kv];
                        let xc = &x[ci * in_sp..(ci + 1) * in_sp];
                        g.for_each_tap(|out, tap, src| {
                            // padded taps multiply an implicit zero
                            let xv = src.map_or(0.0, |s| xc[s]);
                            yc[out] += w[tap] * xv;
                            ops.multiply_adds += 1;
                            ops.reads += 2;
                        });
                    }
                    ops.writes += out_sp as u64;
                }
                y
            }
            OpKind::LeakyRelu => {
                ops.reads += x.len() as u64;
                ops.writes += x.len() as u64;
                x.iter().map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v }).collect()
            }
            _ => x.to_vec(),
        }
    }

    /// Returns `(input gradient, parameter gradient)`.
    fn backward(&self, x: &[f64], g_out: &[f64], ops: &mut CountedOps) -> (Vec<f64>, LayerGrad) {
        let mut grad = LayerGrad {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        };
        let g_in = match self.op.kind {
            OpKind::Dense => {
                let (n_in, n_out) = (self.in_shape.channels, self.out_shape.channels);
                let mut g_in = vec![0.0; n_in];
                for o in 0..n_out {
                    let go = g_out[o];
                    let row = &self.weights[o * n_in..(o + 1) * n_in];
                    let grow = &mut grad.weights[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        g_in[i] += row[i] * go;
                        grow[i] += x[i] * go;
                        ops.multiply_adds += 2;
                        ops.reads += 3;
                        ops.writes += 1;
                    }
                    if self.op.bias {
                        grad.bias[o] += go;
                        ops.multiply_adds += 1;
                    }
                }
                ops.writes += n_in as u64;
                g_in
            }
            OpKind::Conv3d => {
                let g = ConvGeom::new(self);
                let (in_sp, out_sp, kv) = (g.ind.iter().product::<usize>(), g.outd.iter().product::<usize>(), g.tap_volume());
                let mut g_in = vec![0.0; g.cin * in_sp];
                for co in 0..g.cout {
                    let gc = &g_out[co * out_sp..(co + 1) * out_sp];
                    if self.op.bias {
                        for v in gc {
                            grad.bias[co] += v;
                            ops.multiply_adds += 1;
                        }
                    }
                    for ci in 0..g.cin {
                        let base = (co * g.cin + ci) * kv;
                        let w = &self.weights[base..base + kv];
                        let gw = &mut grad.weights[base..base + kv];
                        let xc = &x[ci * in_sp..(ci + 1) * in_sp];
                        let gxc = &mut g_in[ci * in_sp..(ci + 1) * in_sp];
                        g.for_each_tap(|out, tap, src| {
                            if let Some(s) = src {
                                gxc[s] += w[tap] * gc[out];
                                gw[tap] += xc[s] * gc[out];
                                ops.multiply_adds += 2;
                                ops.reads += 3;
                            }
                        });
                    }
                }
                ops.writes += (g_in.len() + grad.weights.len()) as u64;
                g_in
            }
            OpKind::LeakyRelu => {
                ops.reads += 2 * x.len() as u64;
                ops.writes += x.len() as u64;
                x.iter()
                    .zip(g_out)
                    .map(|(&v, &g)| if v > 0.0 { g } else { LEAKY_SLOPE * g })
                    .collect()
            }
            _ => g_out.to_vec(),
        };
        (g_in, grad)
    }
}

/// Layers of a supported model plus the activations of the last forward.
#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
    cache: Option<Vec<Vec<f64>>>,
}

impl Network {
    /// Builds the layer list and draws weights uniformly in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`; biases start at zero.
    pub fn new(model: &ModelSpec, input: &TensorShape, seed: u64) -> Result<Self, TrainerError> {
        let table = infer_shapes(model, input)?;
        if model.head_input == HeadInput::GlobalAvgPool && !table.head_entry.spatial.is_empty() {
            return Err(TrainerError::UnsupportedOpForOracle("global_avg_pool".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let mut layers = Vec::with_capacity(table.entries.len());
        for e in table.entries {
            let rank = e.in_shape.spatial.len();
            let (fan_in, n_weights) = match e.op.kind {
                OpKind::Dense => (e.in_shape.channels, e.in_shape.channels * e.out_shape.channels),
                OpKind::Conv3d => {
                    let kv = e.op.kernel.pow(rank as u32);
                    (kv * e.in_shape.channels, kv * e.in_shape.channels * e.out_shape.channels)
                }
                OpKind::LeakyRelu | OpKind::Identity => (1, 0),
                other => return Err(TrainerError::UnsupportedOpForOracle(other.name().into())),
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weights = (0..n_weights).map(|_| rng.uniform(-bound, bound)).collect();
            let bias = if e.op.bias && n_weights > 0 { vec![0.0; e.out_shape.channels] } else { Vec::new() };
            layers.push(Layer {
                op: e.op,
                in_shape: e.in_shape,
                out_shape: e.out_shape,
                weights,
                bias,
            });
        }
        Ok(Self { layers, cache: None })
    }

    pub fn input_len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_shape.elements() as usize)
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_shape.elements() as usize)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), TrainerError> {
        if p.len() != self.param_count() {
            return Err(TrainerError::ShapeMismatch { expected: self.param_count(), got: p.len() });
        }
        let mut at = 0;
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = p[at];
                at += 1;
            }
        }
        Ok(())
    }

    pub fn forward_counted(&mut self, input: &[f64]) -> Result<(Vec<f64>, CountedOps), TrainerError> {
        if input.len() != self.input_len() {
            return Err(TrainerError::ShapeMismatch { expected: self.input_len(), got: input.len() });
        }
        let mut ops = CountedOps::default();
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for l in &self.layers {
            let y = l.forward(acts.last().unwrap(), &mut ops);
            acts.push(y);
        }
        let out = acts.last().unwrap().clone();
        self.cache = Some(acts);
        Ok((out, ops))
    }

    /// Gradients of `sum(upstream * output)` with respect to every layer's
    /// parameters and to the input of the cached forward pass.
    pub fn backward_counted(&self, upstream: &[f64]) -> Result<(Vec<LayerGrad>, Vec<f64>, CountedOps), TrainerError> {
        let acts = self.cache.as_ref().ok_or(TrainerError::NoCachedForward)?;
        if upstream.len() != self.output_len() {
            return Err(TrainerError::ShapeMismatch { expected: self.output_len(), got: upstream.len() });
        }
        let mut ops = CountedOps::default();
        let mut g = upstream.to_vec();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, x) in self.layers.iter().zip(acts).rev() {
            let (g_in, grad) = l.backward(x, &g, &mut ops);
            grads.push(grad);
            g = g_in;
        }
        grads.reverse();
        Ok((grads, g, ops))
    }
}

/// Flattens per-layer gradients in [`Network::params`] order.
pub fn flatten_grads(grads: &[LayerGrad]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| g.weights.iter().chain(&g.bias).copied())
        .collect()
}
