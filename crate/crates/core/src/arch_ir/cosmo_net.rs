use super::{CellEdge, CellSpec, HeadInput, ModelSpec, OpSpec};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("invalid cell: {}", .0.join("; "))]
    InvalidCell(Vec<String>),
    #[error("reduction position {0} outside 1..={1}")]
    ReductionOutOfRange(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CosmoNetScale {
    /// Hand-written baseline: strided pooling stem, four conv stages, three
    /// dense layers.
    Small,
    /// Stem, `count` copies of `cell` (reduction at the given 1-based
    /// positions), global pooling and three dense layers.
    Cells {
        cell: CellSpec,
        count: usize,
        reductions: BTreeSet<usize>,
        channel_width: usize,
    },
}

impl CosmoNetScale {
    pub fn cells(cell: CellSpec, channel_width: usize) -> Self {
        CosmoNetScale::Cells {
            cell,
            count: 16,
            reductions: [1, 5, 13].into_iter().collect(),
            channel_width,
        }
    }
}

/// Base width of the small baseline's first stage.
pub const SMALL_BASE_WIDTH: usize = 18;

fn dense_head() -> Vec<OpSpec> {
    vec![
        OpSpec::dense(128, true),
        OpSpec::leaky_relu(),
        OpSpec::dense(64, true),
        OpSpec::leaky_relu(),
        OpSpec::dense(3, true),
    ]
}

/// A fixed seven-node cell touching every candidate kind except `zero`.
pub fn default_cell() -> CellSpec {
    let e = |from, to, op| CellEdge { from, to, op };
    CellSpec::new(
        CellSpec::DEFAULT_NODES,
        vec![
            e(0, 1, OpSpec::separable(3)),
            e(0, 2, OpSpec::separable(5)),
            e(1, 2, OpSpec::identity()),
            e(1, 3, OpSpec::dilated_separable(3)),
            e(2, 3, OpSpec::max_pool(3, 1)),
            e(2, 4, OpSpec::separable(3)),
            e(3, 4, OpSpec::identity()),
            e(3, 5, OpSpec::dilated_separable(5)),
            e(4, 5, OpSpec::avg_pool(3, 1)),
            e(4, 6, OpSpec::separable(3)),
            e(5, 6, OpSpec::identity()),
        ],
    )
}

pub fn build_cosmo_net(scale: &CosmoNetScale) -> Result<ModelSpec, BuildError> {
    match scale {
        CosmoNetScale::Small => {
            let mut stem = vec![OpSpec::avg_pool(3, 2)];
            let mut width = SMALL_BASE_WIDTH;
            for _ in 0..4 {
                stem.push(OpSpec::conv3d(3, 1, width, true));
                stem.push(OpSpec::leaky_relu());
                stem.push(OpSpec::avg_pool(3, 2));
                width *= 2;
            }
            Ok(ModelSpec {
                stem,
                cells: Vec::new(),
                reduction_positions: BTreeSet::new(),
                channel_width: SMALL_BASE_WIDTH,
                head_input: HeadInput::Flatten,
                head: dense_head(),
            })
        }
        CosmoNetScale::Cells {
            cell,
            count,
            reductions,
            channel_width,
        } => {
            let problems = cell.check();
            if !problems.is_empty() {
                return Err(BuildError::InvalidCell(problems));
            }
            if let Some(&p) = reductions.iter().find(|&&p| p == 0 || p > *count) {
                return Err(BuildError::ReductionOutOfRange(p, *count));
            }
            let cells = (1..=*count)
                .map(|i| cell.clone().with_reduction(reductions.contains(&i)))
                .collect();
            Ok(ModelSpec {
                stem: vec![
                    OpSpec::conv3d(3, 1, *channel_width, false),
                    OpSpec::batch_norm(),
                    OpSpec::leaky_relu(),
                ],
                cells,
                reduction_positions: reductions.clone(),
                channel_width: *channel_width,
                head_input: HeadInput::GlobalAvgPool,
                head: dense_head(),
            })
        }
    }
}
