use super::{HeadInput, ModelSpec, OpKind, OpSpec, TensorShape};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("shape mismatch at cell {cell} node {node}: {first} vs {other}")]
    ShapeMismatch {
        cell: usize,
        node: usize,
        first: TensorShape,
        other: TensorShape,
    },
    #[error("extent would reach zero at {site:?}: {op} on {input}")]
    UnderflowedExtent {
        site: OpSite,
        op: OpKind,
        input: TensorShape,
    },
    #[error("{op} at {site:?} cannot take input {input}")]
    BadInput {
        site: OpSite,
        op: OpKind,
        input: TensorShape,
    },
}

/// Where an op instance lives in the model. Cell indices are 0-based;
/// `part` distinguishes the op from the batch-norm and activation that
/// follow every cell convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpSite {
    Stem(usize),
    CellPre { cell: usize, part: usize },
    CellEdge { cell: usize, edge: usize, part: usize },
    Head(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpInstance {
    pub site: OpSite,
    /// The op with `out_channels` resolved.
    pub op: OpSpec,
    pub in_shape: TensorShape,
    pub out_shape: TensorShape,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTable {
    pub entries: Vec<OpInstance>,
    /// Shape entering the flatten boundary.
    pub head_entry: TensorShape,
    pub output: TensorShape,
}

fn windowed_extent(
    extent: usize,
    op: &OpSpec,
    site: OpSite,
    input: &TensorShape,
) -> Result<usize, ShapeError> {
    // "same" padding: total pad dilation*(k-1), split floor/ceil.
    let reach = op.dilation * (op.kernel - 1);
    let padded = extent + reach;
    if extent == 0 || padded < reach + 1 || (op.stride > 1 && extent < op.stride) {
        return Err(ShapeError::UnderflowedExtent {
            site,
            op: op.kind,
            input: input.clone(),
        });
    }
    Ok((padded - reach - 1) / op.stride + 1)
}

/// Output shape of a single op, with `out_channels` resolved in the returned
/// op.
pub fn apply_op(
    op: &OpSpec,
    input: &TensorShape,
    site: OpSite,
) -> Result<(OpSpec, TensorShape), ShapeError> {
    let bad = || ShapeError::BadInput {
        site,
        op: op.kind,
        input: input.clone(),
    };
    let mut resolved = *op;
    let out = match op.kind {
        OpKind::Dense => {
            if !input.spatial.is_empty() {
                return Err(bad());
            }
            TensorShape::flat(op.out_channels)
        }
        k if k.is_windowed() => {
            if input.spatial.is_empty() {
                return Err(bad());
            }
            let spatial = input
                .spatial
                .iter()
                .map(|&e| windowed_extent(e, op, site, input))
                .collect::<Result<Vec<_>, _>>()?;
            let channels = match k {
                OpKind::Conv3d => op.out_channels,
                OpKind::SeparableConv3d | OpKind::DilatedSeparableConv3d => {
                    if op.out_channels == 0 {
                        resolved.out_channels = input.channels;
                    }
                    resolved.out_channels
                }
                _ => input.channels,
            };
            TensorShape::new(channels, spatial)
        }
        _ => input.clone(),
    };
    Ok((resolved, out))
}

/// Walk the model and assign in/out shapes to every op instance.
pub fn infer_shapes(model: &ModelSpec, input: &TensorShape) -> Result<ShapeTable, ShapeError> {
    let mut entries = Vec::new();
    let mut push = |site: OpSite, op: &OpSpec, x: &TensorShape| -> Result<TensorShape, ShapeError> {
        let (resolved, out) = apply_op(op, x, site)?;
        entries.push(OpInstance {
            site,
            op: resolved,
            in_shape: x.clone(),
            out_shape: out.clone(),
        });
        Ok(out)
    };

    let mut x = input.clone();
    for (i, op) in model.stem.iter().enumerate() {
        x = push(OpSite::Stem(i), op, &x)?;
    }

    for (ci, cell) in model.cells.iter().enumerate() {
        let width = model.cell_width(ci);
        if cell.is_reduction || x.channels != width {
            let stride = if cell.is_reduction { 2 } else { 1 };
            let pre = [
                OpSpec::conv3d(3, stride, width, false),
                OpSpec::batch_norm(),
                OpSpec::leaky_relu(),
            ];
            for (part, op) in pre.iter().enumerate() {
                x = push(OpSite::CellPre { cell: ci, part }, op, &x)?;
            }
        }
        let mut nodes: Vec<Option<TensorShape>> = vec![None; cell.node_count.max(1)];
        nodes[0] = Some(x.clone());
        // Edges are processed in target order so every source is ready.
        let mut order: Vec<usize> = (0..cell.edges.len()).collect();
        order.sort_by_key(|&e| (cell.edges[e].to, cell.edges[e].from));
        for ei in order {
            let edge = &cell.edges[ei];
            let Some(src) = nodes.get(edge.from).cloned().flatten() else {
                continue;
            };
            let mut y = src;
            let mut chain = vec![edge.op];
            if edge.op.kind.is_conv() {
                chain.push(OpSpec::batch_norm());
                chain.push(OpSpec::leaky_relu());
            }
            for (part, op) in chain.iter().enumerate() {
                y = push(OpSite::CellEdge { cell: ci, edge: ei, part }, op, &y)?;
            }
            match &nodes[edge.to] {
                None => nodes[edge.to] = Some(y),
                Some(first) if *first != y => {
                    return Err(ShapeError::ShapeMismatch {
                        cell: ci,
                        node: edge.to,
                        first: first.clone(),
                        other: y,
                    })
                }
                Some(_) => {}
            }
        }
        x = nodes
            .last()
            .cloned()
            .flatten()
            .unwrap_or_else(|| x.clone());
    }

    let head_entry = x.clone();
    x = match model.head_input {
        HeadInput::Flatten => TensorShape::flat(x.elements() as usize),
        HeadInput::GlobalAvgPool => TensorShape::flat(x.channels),
    };
    for (i, op) in model.head.iter().enumerate() {
        x = push(OpSite::Head(i), op, &x)?;
    }
    Ok(ShapeTable {
        entries,
        head_entry,
        output: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch_ir::{build_cosmo_net, default_cell, CosmoNetScale};

    fn single(op: OpSpec, input: TensorShape) -> TensorShape {
        apply_op(&op, &input, OpSite::Stem(0)).unwrap().1
    }

    #[test]
    fn identity_keeps_shape() {
        assert_eq!(single(OpSpec::identity(), TensorShape::cube(4, 16)), TensorShape::cube(4, 16));
    }

    #[test]
    fn stride_two_conv_halves() {
        let out = single(OpSpec::conv3d(3, 2, 8, false), TensorShape::cube(1, 128));
        assert_eq!(out, TensorShape::cube(8, 64));
    }

    #[test]
    fn same_padding_keeps_extent_for_all_windows() {
        for op in OpSpec::cell_candidates() {
            let out = single(op, TensorShape::cube(6, 9));
            assert_eq!(out, TensorShape::cube(6, 9), "{op:?}");
        }
        let out = single(OpSpec::conv3d(5, 1, 2, true), TensorShape::new(1, vec![7, 5]));
        assert_eq!(out, TensorShape::new(2, vec![7, 5]));
    }

    #[test]
    fn odd_extent_stride_two() {
        let out = single(OpSpec::avg_pool(3, 2), TensorShape::cube(2, 7));
        assert_eq!(out, TensorShape::cube(2, 4));
    }

    #[test]
    fn stride_two_on_unit_extent_underflows() {
        let err = apply_op(&OpSpec::avg_pool(3, 2), &TensorShape::cube(2, 1), OpSite::Stem(0));
        assert!(matches!(err, Err(ShapeError::UnderflowedExtent { .. })));
    }

    #[test]
    fn dense_rejects_spatial_input() {
        let err = apply_op(&OpSpec::dense(3, true), &TensorShape::cube(2, 4), OpSite::Head(0));
        assert!(matches!(err, Err(ShapeError::BadInput { .. })));
    }

    #[test]
    fn sixteen_cell_model_reaches_sixteen_cubed() {
        let m = build_cosmo_net(&CosmoNetScale::Cells {
            cell: default_cell(),
            count: 16,
            reductions: [1, 5, 13].into_iter().collect(),
            channel_width: 4,
        })
        .unwrap();
        let t = infer_shapes(&m, &TensorShape::cube(1, 128)).unwrap();
        assert_eq!(t.head_entry.spatial, vec![16, 16, 16]);
        assert_eq!(t.head_entry.channels, 32);
        assert_eq!(t.output, TensorShape::flat(3));
        // Walk the table: the spatial extent changes only at cell preprocessing
        // of reduction cells.
        let mut halvings = 0;
        for e in &t.entries {
            if e.in_shape.spatial != e.out_shape.spatial && !e.out_shape.spatial.is_empty() {
                assert!(matches!(e.site, OpSite::CellPre { part: 0, .. }), "{e:?}");
                assert_eq!(e.out_shape.spatial[0] * 2, e.in_shape.spatial[0]);
                halvings += 1;
            }
        }
        assert_eq!(halvings, 3);
    }

    #[test]
    fn mismatched_node_inputs_are_reported() {
        use crate::arch_ir::{CellEdge, CellSpec, HeadInput};
        // A conv edge with an explicit width disagrees with an identity edge.
        let mut wide = OpSpec::separable(3);
        wide.out_channels = 9;
        let cell = CellSpec::new(
            2,
            vec![
                CellEdge { from: 0, to: 1, op: OpSpec::identity() },
                CellEdge { from: 0, to: 1, op: wide },
            ],
        );
        let m = ModelSpec {
            stem: vec![OpSpec::conv3d(3, 1, 4, false)],
            cells: vec![cell],
            reduction_positions: Default::default(),
            channel_width: 4,
            head_input: HeadInput::GlobalAvgPool,
            head: vec![OpSpec::dense(1, false)],
        };
        let err = infer_shapes(&m, &TensorShape::cube(1, 8)).unwrap_err();
        assert!(matches!(err, ShapeError::ShapeMismatch { node: 1, .. }));
    }
}
