//! Analytic compute and memory cost of a [`ModelSpec`].
//!
//! Training cost follows `add-multiplies x FLOPs-per-add-multiply x FB`,
//! where the add-multiply count is taken over the forward pass only and FB
//! scales it to forward plus backward.
//!
//! Memory accesses use a one-touch model: each op reads every input element
//! and every weight once and writes every output element once. It is an
//! estimate for intensity ratios, not a cache model.

use crate::arch_ir::{infer_shapes, ModelSpec, OpKind, OpSpec, ShapeError, ShapeTable, TensorShape};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("unsupported op {0} for shapes {1} -> {2}")]
    UnsupportedOp(OpKind, TensorShape, TensorShape),
    #[error("zero memory accesses")]
    ZeroAccesses,
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub flop_per_addmul: u64,
    pub fb_factor: u64,
    pub element_bytes: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            flop_per_addmul: 2,
            fb_factor: 3,
            element_bytes: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub batch: u64,
    pub forward_addmul: u64,
    pub training_flops: u64,
    pub params: u64,
    pub mem_reads: u64,
    pub mem_writes: u64,
    pub intensity: f64,
    pub weight_bytes: u64,
    pub activation_bytes: u64,
}

impl CostReport {
    pub const KEYS: [&'static str; 9] = [
        "batch",
        "forward_addmul",
        "training_flops",
        "params",
        "mem_reads",
        "mem_writes",
        "intensity",
        "weight_bytes",
        "activation_bytes",
    ];

    pub fn values(&self) -> [String; 9] {
        [
            self.batch.to_string(),
            self.forward_addmul.to_string(),
            self.training_flops.to_string(),
            self.params.to_string(),
            self.mem_reads.to_string(),
            self.mem_writes.to_string(),
            format!("{:?}", self.intensity),
            self.weight_bytes.to_string(),
            self.activation_bytes.to_string(),
        ]
    }

    /// One `key=value` pair per line.
    pub fn to_kv(&self) -> String {
        Self::KEYS
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

fn kernel_volume(op: &OpSpec, rank: usize) -> u64 {
    (op.kernel as u64).pow(rank as u32)
}

/// Add-multiplies of one op on one sample.
pub fn op_addmul(op: &OpSpec, in_shape: &TensorShape, out_shape: &TensorShape) -> Result<u64, CostError> {
    let unsupported = || CostError::UnsupportedOp(op.kind, in_shape.clone(), out_shape.clone());
    let out_sp = out_shape.spatial_elements();
    let bias = |channels: usize| if op.bias { channels as u64 * out_sp } else { 0 };
    Ok(match op.kind {
        OpKind::Conv3d => {
            if in_shape.spatial.is_empty() {
                return Err(unsupported());
            }
            let k = kernel_volume(op, in_shape.spatial.len());
            k * in_shape.channels as u64 * out_shape.channels as u64 * out_sp + bias(out_shape.channels)
        }
        OpKind::SeparableConv3d | OpKind::DilatedSeparableConv3d => {
            if in_shape.spatial.is_empty() {
                return Err(unsupported());
            }
            let k = kernel_volume(op, in_shape.spatial.len());
            let cin = in_shape.channels as u64;
            k * cin * out_sp + cin * out_shape.channels as u64 * out_sp + bias(out_shape.channels)
        }
        OpKind::Dense => {
            if !in_shape.spatial.is_empty() || !out_shape.spatial.is_empty() {
                return Err(unsupported());
            }
            let (i, o) = (in_shape.channels as u64, out_shape.channels as u64);
            i * o + if op.bias { o } else { 0 }
        }
        OpKind::BatchNorm => 2 * out_shape.elements(),
        OpKind::MaxPool3d | OpKind::AvgPool3d | OpKind::LeakyRelu | OpKind::Identity | OpKind::Zero => 0,
    })
}

/// Trainable parameters of one op.
pub fn op_params(op: &OpSpec, in_shape: &TensorShape, out_shape: &TensorShape) -> u64 {
    let rank = in_shape.spatial.len();
    let cin = in_shape.channels as u64;
    let cout = out_shape.channels as u64;
    let bias = if op.bias { cout } else { 0 };
    match op.kind {
        OpKind::Conv3d => kernel_volume(op, rank) * cin * cout + bias,
        OpKind::SeparableConv3d | OpKind::DilatedSeparableConv3d => {
            kernel_volume(op, rank) * cin + cin * cout + bias
        }
        OpKind::Dense => cin * cout + bias,
        OpKind::BatchNorm => 2 * cout,
        _ => 0,
    }
}

fn table(model: &ModelSpec, input: &TensorShape) -> Result<ShapeTable, CostError> {
    Ok(infer_shapes(model, input)?)
}

pub fn forward_addmul(model: &ModelSpec, input: &TensorShape, batch: u64) -> Result<u64, CostError> {
    let t = table(model, input)?;
    let per_sample = t
        .entries
        .iter()
        .map(|e| op_addmul(&e.op, &e.in_shape, &e.out_shape))
        .sum::<Result<u64, _>>()?;
    Ok(batch * per_sample)
}

pub fn training_flops(
    model: &ModelSpec,
    input: &TensorShape,
    batch: u64,
    params: &CostParams,
) -> Result<u64, CostError> {
    Ok(forward_addmul(model, input, batch)? * params.flop_per_addmul * params.fb_factor)
}

pub fn param_count(model: &ModelSpec, input: &TensorShape) -> Result<u64, CostError> {
    let t = table(model, input)?;
    Ok(t.entries
        .iter()
        .map(|e| op_params(&e.op, &e.in_shape, &e.out_shape))
        .sum())
}

/// `(reads, writes)` under the one-touch model.
pub fn memory_access_estimate(
    model: &ModelSpec,
    input: &TensorShape,
    batch: u64,
) -> Result<(u64, u64), CostError> {
    let t = table(model, input)?;
    Ok(t.entries.iter().fold((0, 0), |(r, w), e| {
        let weights = op_params(&e.op, &e.in_shape, &e.out_shape);
        (
            r + batch * e.in_shape.elements() + weights,
            w + batch * e.out_shape.elements(),
        )
    }))
}

pub fn arithmetic_intensity(flops: f64, reads: f64, writes: f64) -> Result<f64, CostError> {
    let accesses = reads + writes;
    if accesses <= 0.0 {
        return Err(CostError::ZeroAccesses);
    }
    Ok(flops / accesses)
}

/// `(weight_bytes, activation_bytes)`; activations count every op output.
pub fn memory_footprint(
    model: &ModelSpec,
    input: &TensorShape,
    batch: u64,
    params: &CostParams,
) -> Result<(u64, u64), CostError> {
    let t = table(model, input)?;
    let weights: u64 = t
        .entries
        .iter()
        .map(|e| op_params(&e.op, &e.in_shape, &e.out_shape))
        .sum();
    let outputs: u64 = t.entries.iter().map(|e| e.out_shape.elements()).sum();
    Ok((
        weights * params.element_bytes,
        params.element_bytes * batch * outputs,
    ))
}

/// Classic roofline: `min(peak, intensity * bandwidth / element_bytes)`,
/// with intensity in FLOPs per element access.
pub fn roofline_bound(intensity: f64, element_bytes: f64, mem_bw: f64, peak: f64) -> f64 {
    peak.min(intensity * mem_bw / element_bytes)
}

pub fn cost_report(
    model: &ModelSpec,
    input: &TensorShape,
    batch: u64,
    params: &CostParams,
) -> Result<CostReport, CostError> {
    let forward_addmul = forward_addmul(model, input, batch)?;
    let training_flops = forward_addmul * params.flop_per_addmul * params.fb_factor;
    let (mem_reads, mem_writes) = memory_access_estimate(model, input, batch)?;
    let (weight_bytes, activation_bytes) = memory_footprint(model, input, batch, params)?;
    let intensity =
        arithmetic_intensity(training_flops as f64, mem_reads as f64, mem_writes as f64).unwrap_or(0.0);
    Ok(CostReport {
        batch,
        forward_addmul,
        training_flops,
        params: param_count(model, input)?,
        mem_reads,
        mem_writes,
        intensity,
        weight_bytes,
        activation_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch_ir::{build_cosmo_net, default_cell, CosmoNetScale, HeadInput};
    use proptest::prelude::*;

    fn dense_model(bias: bool) -> ModelSpec {
        ModelSpec {
            stem: vec![],
            cells: vec![],
            reduction_positions: Default::default(),
            channel_width: 0,
            head_input: HeadInput::Flatten,
            head: vec![OpSpec::dense(10, bias)],
        }
    }

    fn flat64() -> TensorShape {
        TensorShape::new(64, vec![1])
    }

    #[test]
    fn dense_counts() {
        let op = OpSpec::dense(10, false);
        assert_eq!(op_addmul(&op, &TensorShape::flat(64), &TensorShape::flat(10)).unwrap(), 640);
        assert_eq!(forward_addmul(&dense_model(false), &flat64(), 1).unwrap(), 640);
        assert_eq!(param_count(&dense_model(true), &flat64()).unwrap(), 650);
    }

    #[test]
    fn conv_count() {
        let op = OpSpec::conv3d(3, 1, 4, false);
        let n = op_addmul(&op, &TensorShape::cube(1, 16), &TensorShape::cube(4, 16)).unwrap();
        assert_eq!(n, 27 * 4 * 4096);
        assert_eq!(n, 442_368);
    }

    #[test]
    fn separable_and_batch_norm_by_hand() {
        // depthwise 27*5*512 + pointwise 5*7*512
        let op = OpSpec { out_channels: 7, ..OpSpec::separable(3) };
        let n = op_addmul(&op, &TensorShape::cube(5, 8), &TensorShape::cube(7, 8)).unwrap();
        assert_eq!(n, 27 * 5 * 512 + 35 * 512);
        // dilation changes geometry only
        let d = OpSpec { out_channels: 7, ..OpSpec::dilated_separable(3) };
        assert_eq!(op_addmul(&d, &TensorShape::cube(5, 8), &TensorShape::cube(7, 8)).unwrap(), n);
        let bn = op_addmul(&OpSpec::batch_norm(), &TensorShape::cube(3, 4), &TensorShape::cube(3, 4));
        assert_eq!(bn.unwrap(), 2 * 3 * 64);
        assert_eq!(op_params(&op, &TensorShape::cube(5, 8), &TensorShape::cube(7, 8)), 27 * 5 + 35);
    }

    #[test]
    fn zero_and_pool_ops_are_free() {
        let s = TensorShape::cube(4, 8);
        for op in [OpSpec::zero(), OpSpec::identity(), OpSpec::max_pool(3, 1), OpSpec::leaky_relu()] {
            assert_eq!(op_addmul(&op, &s, &s).unwrap(), 0);
            assert_eq!(op_params(&op, &s, &s), 0);
        }
    }

    #[test]
    fn conv_on_flat_input_is_unsupported() {
        let r = op_addmul(&OpSpec::conv3d(3, 1, 2, false), &TensorShape::flat(4), &TensorShape::flat(2));
        assert!(matches!(r, Err(CostError::UnsupportedOp(..))));
    }

    #[test]
    fn training_flops_substitution() {
        let m = dense_model(false);
        let p = CostParams::default();
        assert_eq!(training_flops(&m, &flat64(), 1, &p).unwrap(), 640 * 6);
        let fwd_only = CostParams { fb_factor: 1, ..p };
        assert_eq!(training_flops(&m, &flat64(), 1, &fwd_only).unwrap(), 640 * 2);
    }

    #[test]
    fn identity_model_has_no_params() {
        let m = ModelSpec {
            stem: vec![OpSpec::identity()],
            head: vec![OpSpec::identity(), OpSpec::dense(1, false)],
            ..dense_model(false)
        };
        let t = infer_shapes(&m, &TensorShape::cube(2, 3)).unwrap();
        assert_eq!(op_params(&t.entries[0].op, &t.entries[0].in_shape, &t.entries[0].out_shape), 0);
        // identity contributes one read and one write per element
        let (r, w) = memory_access_estimate(
            &ModelSpec { head: vec![], ..m.clone() },
            &TensorShape::cube(2, 3),
            1,
        )
        .unwrap();
        assert_eq!((r, w), (54, 54));
    }

    #[test]
    fn one_touch_dense() {
        let m = dense_model(true);
        assert_eq!(memory_access_estimate(&m, &flat64(), 1).unwrap(), (714, 10));
        // batch doubles activations, not weights
        assert_eq!(memory_access_estimate(&m, &flat64(), 2).unwrap(), (128 + 650, 20));
        let (w, a) = memory_footprint(&m, &flat64(), 1, &CostParams::default()).unwrap();
        assert_eq!((w, a), (2600, 40));
        let (_, a3) = memory_footprint(&m, &flat64(), 3, &CostParams::default()).unwrap();
        assert_eq!(a3, 120);
    }

    #[test]
    fn intensity_table_rows() {
        let rows = [
            (6.9e10, 1e7, 7.53e7, 808.0),
            (4.64e12, 1.15e9, 7.09e8, 2500.0),
            (1.78e13, 7.13e9, 5.21e9, 1442.0),
        ];
        for (f, r, w, printed) in rows {
            let i = arithmetic_intensity(f, r, w).unwrap();
            assert!(((i - printed) / printed).abs() < 0.005, "{i} vs {printed}");
        }
        assert_eq!(arithmetic_intensity(1.0, 0.0, 0.0), Err(CostError::ZeroAccesses));
    }

    #[test]
    fn roofline() {
        assert_eq!(roofline_bound(1e9, 4.0, 1.0, 10.0), 10.0);
        assert_eq!(roofline_bound(1.0, 4.0, 4.0, 10.0), 1.0);
        let bound = roofline_bound(2500.0, 4.0, 9e11, 15.7e12);
        assert_eq!(bound, 15.7e12);
        assert!(9.21e12 < bound);
    }

    #[test]
    fn small_baseline_lands_near_table_cost() {
        let m = build_cosmo_net(&CosmoNetScale::Small).unwrap();
        let f = training_flops(&m, &TensorShape::cube(1, 128), 10, &CostParams::default()).unwrap();
        let rel = (f as f64 - 6.9e10).abs() / 6.9e10;
        assert!(rel < 0.10, "small baseline batch-10 cost {f:e}");
    }

    #[test]
    fn batch_linearity() {
        let m = build_cosmo_net(&CosmoNetScale::cells(default_cell(), 4)).unwrap();
        let x = TensorShape::cube(1, 32);
        assert_eq!(forward_addmul(&m, &x, 2).unwrap(), 2 * forward_addmul(&m, &x, 1).unwrap());
    }

    #[test]
    fn doubling_width_roughly_quadruples_params() {
        let x = TensorShape::cube(1, 128);
        let p = |c| param_count(&build_cosmo_net(&CosmoNetScale::cells(default_cell(), c)).unwrap(), &x).unwrap();
        let ratio = p(64) as f64 / p(32) as f64;
        assert!((3.5..=4.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn activations_dominate_weights() {
        let m = build_cosmo_net(&CosmoNetScale::cells(default_cell(), 32)).unwrap();
        let (w, a) = memory_footprint(&m, &TensorShape::cube(1, 128), 4, &CostParams::default()).unwrap();
        assert!(a as f64 / w as f64 > 10.0, "{a} / {w}");
    }

    #[test]
    fn report_is_consistent() {
        let m = build_cosmo_net(&CosmoNetScale::Small).unwrap();
        let r = cost_report(&m, &TensorShape::cube(1, 64), 2, &CostParams::default()).unwrap();
        assert_eq!(r.training_flops, 6 * r.forward_addmul);
        let expect = r.training_flops as f64 / (r.mem_reads + r.mem_writes) as f64;
        assert_eq!(r.intensity, expect);
        assert!(r.to_kv().contains(&format!("params={}\n", r.params)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn monotone_in_width_and_batch(c in 1usize..24, batch in 1u64..5) {
            let x = TensorShape::cube(1, 16);
            let eval = |c: usize, b: u64| {
                let m = build_cosmo_net(&CosmoNetScale::cells(default_cell(), c)).unwrap();
                (
                    forward_addmul(&m, &x, b).unwrap(),
                    param_count(&m, &x).unwrap(),
                    memory_access_estimate(&m, &x, b).unwrap(),
                )
            };
            let (f0, p0, (r0, w0)) = eval(c, batch);
            let (f1, p1, (r1, w1)) = eval(c + 1, batch);
            let (f2, _, (r2, w2)) = eval(c, batch + 1);
            prop_assert!(f1 >= f0 && p1 >= p0 && r1 >= r0 && w1 >= w0);
            prop_assert!(f2 >= f0 && r2 >= r0 && w2 >= w0);
            let p = CostParams::default();
            let m = build_cosmo_net(&CosmoNetScale::cells(default_cell(), c)).unwrap();
            prop_assert_eq!(training_flops(&m, &x, batch, &p).unwrap(), 3 * 2 * f0);
        }
    }
}
