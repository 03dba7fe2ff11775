//! Static representation of 3D-CNN architectures.
//!
//! A [`ModelSpec`] is a stem, a stack of DAG cells and a dense head. Nothing
//! here holds weights or executes; the IR exists so shapes, costs and
//! parameter counts can be derived exactly.

mod cosmo_net;
mod shape;
mod text;

pub use cosmo_net::{build_cosmo_net, default_cell, BuildError, CosmoNetScale, SMALL_BASE_WIDTH};
pub use shape::{infer_shapes, OpInstance, OpSite, ShapeError, ShapeTable};
pub use text::{parse_model, write_model, ParseModelError};

use std::collections::BTreeSet;
use std::fmt;

/// Slope used by every leaky-relu in the IR and in the micro trainer.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorShape {
    pub channels: usize,
    pub spatial: Vec<usize>,
}

impl TensorShape {
    pub fn new(channels: usize, spatial: impl Into<Vec<usize>>) -> Self {
        Self {
            channels,
            spatial: spatial.into(),
        }
    }

    /// `channels` x `side`^3.
    pub fn cube(channels: usize, side: usize) -> Self {
        Self::new(channels, vec![side; 3])
    }

    pub fn flat(features: usize) -> Self {
        Self::new(features, Vec::new())
    }

    pub fn spatial_elements(&self) -> u64 {
        self.spatial.iter().map(|&e| e as u64).product()
    }

    pub fn elements(&self) -> u64 {
        self.channels as u64 * self.spatial_elements()
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.channels)?;
        for e in &self.spatial {
            write!(f, ", {e}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Conv3d,
    SeparableConv3d,
    DilatedSeparableConv3d,
    MaxPool3d,
    AvgPool3d,
    BatchNorm,
    LeakyRelu,
    Identity,
    Zero,
    Dense,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::Conv3d,
        OpKind::SeparableConv3d,
        OpKind::DilatedSeparableConv3d,
        OpKind::MaxPool3d,
        OpKind::AvgPool3d,
        OpKind::BatchNorm,
        OpKind::LeakyRelu,
        OpKind::Identity,
        OpKind::Zero,
        OpKind::Dense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv3d => "conv3d",
            OpKind::SeparableConv3d => "separable_conv3d",
            OpKind::DilatedSeparableConv3d => "dilated_separable_conv3d",
            OpKind::MaxPool3d => "max_pool3d",
            OpKind::AvgPool3d => "avg_pool3d",
            OpKind::BatchNorm => "batch_norm",
            OpKind::LeakyRelu => "activation_leaky_relu",
            OpKind::Identity => "identity",
            OpKind::Zero => "zero",
            OpKind::Dense => "dense",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn is_conv(self) -> bool {
        matches!(
            self,
            OpKind::Conv3d | OpKind::SeparableConv3d | OpKind::DilatedSeparableConv3d
        )
    }

    pub fn is_pool(self) -> bool {
        matches!(self, OpKind::MaxPool3d | OpKind::AvgPool3d)
    }

    /// Kinds that slide a window over spatial extents.
    pub fn is_windowed(self) -> bool {
        self.is_conv() || self.is_pool()
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One operation. `out_channels` is meaningful for conv and dense kinds; a
/// value of 0 on a separable conv means "keep the input width", which is how
/// cell edges are written before a width is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OpSpec {
    pub kind: OpKind,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub out_channels: usize,
    pub bias: bool,
}

impl OpSpec {
    fn base(kind: OpKind) -> Self {
        Self {
            kind,
            kernel: 1,
            stride: 1,
            dilation: 1,
            out_channels: 0,
            bias: false,
        }
    }

    pub fn conv3d(kernel: usize, stride: usize, out_channels: usize, bias: bool) -> Self {
        Self {
            kernel,
            stride,
            out_channels,
            bias,
            ..Self::base(OpKind::Conv3d)
        }
    }

    pub fn separable(kernel: usize) -> Self {
        Self {
            kernel,
            ..Self::base(OpKind::SeparableConv3d)
        }
    }

    pub fn dilated_separable(kernel: usize) -> Self {
        Self {
            kernel,
            dilation: 2,
            ..Self::base(OpKind::DilatedSeparableConv3d)
        }
    }

    pub fn max_pool(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            ..Self::base(OpKind::MaxPool3d)
        }
    }

    pub fn avg_pool(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            ..Self::base(OpKind::AvgPool3d)
        }
    }

    pub fn batch_norm() -> Self {
        Self::base(OpKind::BatchNorm)
    }

    pub fn leaky_relu() -> Self {
        Self::base(OpKind::LeakyRelu)
    }

    pub fn identity() -> Self {
        Self::base(OpKind::Identity)
    }

    pub fn zero() -> Self {
        Self::base(OpKind::Zero)
    }

    pub fn dense(out_features: usize, bias: bool) -> Self {
        Self {
            out_channels: out_features,
            bias,
            ..Self::base(OpKind::Dense)
        }
    }

    /// The eight cell candidates: separable and dilated separable convs at
    /// kernels 3 and 5, 3-wide max and average pooling, identity and zero.
    pub fn cell_candidates() -> Vec<OpSpec> {
        vec![
            OpSpec::separable(3),
            OpSpec::separable(5),
            OpSpec::dilated_separable(3),
            OpSpec::dilated_separable(5),
            OpSpec::max_pool(3, 1),
            OpSpec::avg_pool(3, 1),
            OpSpec::identity(),
            OpSpec::zero(),
        ]
    }

    /// Local invariant violations of this op on its own.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        let k = self.kind;
        if k.is_windowed() && !matches!(self.kernel, 3 | 5) {
            out.push(format!("{k}: kernel {} not in {{3,5}}", self.kernel));
        }
        if !matches!(self.stride, 1 | 2) {
            out.push(format!("{k}: stride {} not in {{1,2}}", self.stride));
        }
        if k == OpKind::DilatedSeparableConv3d {
            if self.dilation < 1 {
                out.push(format!("{k}: dilation must be >= 1"));
            }
        } else if self.dilation != 1 {
            out.push(format!("{k}: dilation must be 1 for non-dilated kinds"));
        }
        if matches!(k, OpKind::Conv3d | OpKind::Dense) && self.out_channels == 0 {
            out.push(format!("{k}: out_channels must be positive"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellEdge {
    pub from: usize,
    pub to: usize,
    pub op: OpSpec,
}

/// A DAG cell. Node 0 is the cell input, node `node_count - 1` its output;
/// a node's value is the elementwise sum of its incoming edges.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellSpec {
    pub node_count: usize,
    pub edges: Vec<CellEdge>,
    pub is_reduction: bool,
}

impl CellSpec {
    pub const DEFAULT_NODES: usize = 7;

    pub fn new(node_count: usize, edges: Vec<CellEdge>) -> Self {
        Self {
            node_count,
            edges,
            is_reduction: false,
        }
    }

    pub fn with_reduction(mut self, is_reduction: bool) -> Self {
        self.is_reduction = is_reduction;
        self
    }

    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.node_count < 2 {
            out.push(format!("cell needs at least 2 nodes, has {}", self.node_count));
        }
        let mut has_input = vec![false; self.node_count];
        for e in &self.edges {
            if e.from >= e.to {
                out.push(format!("edge not forward: {} -> {}", e.from, e.to));
                continue;
            }
            if e.to >= self.node_count {
                out.push(format!("edge target {} beyond node count {}", e.to, self.node_count));
                continue;
            }
            has_input[e.to] = true;
            for msg in e.op.check() {
                out.push(format!("edge {} -> {}: {msg}", e.from, e.to));
            }
            if e.op.stride != 1 {
                out.push(format!("edge {} -> {}: cell edges must have stride 1", e.from, e.to));
            }
            if matches!(e.op.kind, OpKind::Dense | OpKind::BatchNorm | OpKind::LeakyRelu) {
                out.push(format!("edge {} -> {}: {} is not a cell op", e.from, e.to, e.op.kind));
            }
        }
        for (node, has) in has_input.iter().enumerate().skip(1) {
            if !has {
                out.push(format!("node {node} has no incoming edge"));
            }
        }
        out
    }
}

/// How the spatial tensor is turned into features at the head boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadInput {
    Flatten,
    GlobalAvgPool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub stem: Vec<OpSpec>,
    pub cells: Vec<CellSpec>,
    /// 1-based cell indices of stride-2 cells.
    pub reduction_positions: BTreeSet<usize>,
    pub channel_width: usize,
    pub head_input: HeadInput,
    pub head: Vec<OpSpec>,
}

impl ModelSpec {
    /// Width of cell `index` (0-based): the base width doubled once per
    /// reduction at or before it.
    pub fn cell_width(&self, index: usize) -> usize {
        let reductions = self
            .reduction_positions
            .iter()
            .filter(|&&p| p <= index + 1)
            .count();
        self.channel_width << reductions
    }
}

/// Check a model end to end without aborting on the first problem. Shape
/// inference runs against `input`.
pub fn validate_model(model: &ModelSpec, input: &TensorShape) -> Result<(), Vec<String>> {
    let mut out = Vec::new();
    for (i, op) in model.stem.iter().enumerate() {
        for msg in op.check() {
            out.push(format!("stem[{i}]: {msg}"));
        }
        if op.kind == OpKind::Dense {
            out.push(format!("stem[{i}]: dense is only allowed in the head"));
        }
    }
    for &p in &model.reduction_positions {
        if p == 0 || p > model.cells.len() {
            out.push(format!("position out of range: {p} (cells: {})", model.cells.len()));
        }
    }
    for (i, cell) in model.cells.iter().enumerate() {
        for msg in cell.check() {
            out.push(format!("cell {}: {msg}", i + 1));
        }
        if cell.is_reduction != model.reduction_positions.contains(&(i + 1)) {
            out.push(format!(
                "cell {}: reduction flag disagrees with reduction positions",
                i + 1
            ));
        }
    }
    if !model.cells.is_empty() && model.channel_width == 0 {
        out.push("channel width must be positive".into());
    }
    if !model.head.iter().any(|op| op.kind == OpKind::Dense) {
        out.push("head has no dense layer".into());
    }
    for (i, op) in model.head.iter().enumerate() {
        for msg in op.check() {
            out.push(format!("head[{i}]: {msg}"));
        }
        if !matches!(op.kind, OpKind::Dense | OpKind::LeakyRelu | OpKind::Identity) {
            out.push(format!("head[{i}]: {} not allowed after the flatten boundary", op.kind));
        }
    }
    if input.spatial.is_empty() || input.spatial.len() > 3 {
        out.push(format!("input rank {} not in 1..=3", input.spatial.len()));
    }
    if input.channels == 0 || input.spatial.contains(&0) {
        out.push(format!("input shape {input} has a zero extent"));
    }
    if out.is_empty() {
        if let Err(e) = infer_shapes(model, input) {
            out.push(e.to_string());
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cell() -> CellSpec {
        CellSpec::new(
            3,
            vec![
                CellEdge { from: 0, to: 1, op: OpSpec::identity() },
                CellEdge { from: 1, to: 2, op: OpSpec::separable(3) },
            ],
        )
    }

    #[test]
    fn backward_edge_is_reported() {
        let mut cell = tiny_cell();
        cell.edges.push(CellEdge { from: 3, to: 2, op: OpSpec::identity() });
        cell.node_count = 4;
        let v = cell.check();
        assert!(v.iter().any(|m| m.contains("edge not forward")), "{v:?}");
    }

    #[test]
    fn node_without_input_is_reported() {
        let cell = CellSpec::new(3, vec![CellEdge { from: 0, to: 2, op: OpSpec::zero() }]);
        assert!(cell.check().iter().any(|m| m.contains("node 1")));
    }

    #[test]
    fn op_kernel_rules() {
        assert!(OpSpec::separable(4).check().iter().any(|m| m.contains("kernel")));
        assert!(OpSpec::conv3d(3, 3, 4, false).check().iter().any(|m| m.contains("stride")));
        assert!(OpSpec::dense(0, true).check().iter().any(|m| m.contains("out_channels")));
        assert!(OpSpec::identity().check().is_empty());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in OpKind::ALL {
            assert_eq!(OpKind::from_name(k.name()), Some(k));
        }
    }

    #[test]
    fn cell_width_doubles_per_reduction() {
        let m = build_cosmo_net(&CosmoNetScale::Cells {
            cell: default_cell(),
            count: 16,
            reductions: [1, 5, 13].into_iter().collect(),
            channel_width: 8,
        })
        .unwrap();
        assert_eq!(m.cell_width(0), 16);
        assert_eq!(m.cell_width(3), 16);
        assert_eq!(m.cell_width(4), 32);
        assert_eq!(m.cell_width(12), 64);
        assert_eq!(m.cell_width(15), 64);
    }
}
