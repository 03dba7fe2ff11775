//! Cost-targeted architecture families.
//!
//! Cells are sampled uniformly from the search space with a seeded
//! SplitMix64 stream; the model filter keeps candidates whose per-sample
//! training cost falls in a FLOP range; the channel solver picks the base
//! width whose cost is closest to a target.

use crate::arch_ir::{
    build_cosmo_net, CellEdge, CellSpec, CosmoNetScale, ModelSpec, OpSpec, TensorShape,
};
use crate::cost_model::{cost_report, training_flops, CostParams, CostReport};
use crate::rng::SplitMix64;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("target {target:e} outside reachable [{lo:e}, {hi:e}]")]
    TargetUnreachable { target: f64, lo: f64, hi: f64 },
    #[error("targets must be sorted ascending")]
    UnsortedTargets,
    #[error("family costs are not strictly increasing: {0:?}")]
    NotIncreasing(Vec<u64>),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("cost evaluation failed: {0}")]
    Cost(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub node_count: usize,
    pub candidate_ops: Vec<OpSpec>,
    pub cell_count: usize,
    pub reduction_positions: BTreeSet<usize>,
    pub channel_range: (usize, usize),
    pub max_in_edges_per_node: usize,
    pub input: TensorShape,
    pub tolerance: f64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            node_count: CellSpec::DEFAULT_NODES,
            candidate_ops: OpSpec::cell_candidates(),
            cell_count: 16,
            reduction_positions: [1, 5, 13].into_iter().collect(),
            channel_range: (4, 512),
            max_in_edges_per_node: 2,
            input: TensorShape::cube(1, 128),
            tolerance: 0.05,
        }
    }
}

impl SearchSpace {
    pub fn check(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidSpace(m.to_string()));
        if self.candidate_ops.is_empty() {
            return bad("candidate_ops is empty");
        }
        if self.node_count < 2 {
            return bad("node_count < 2");
        }
        if self.max_in_edges_per_node == 0 {
            return bad("max_in_edges_per_node must be >= 1");
        }
        let (lo, hi) = self.channel_range;
        if lo == 0 || lo > hi {
            return bad("channel range must satisfy 1 <= C_min <= C_max");
        }
        Ok(())
    }

    /// Model for `cell` at base width `channels`.
    pub fn model(&self, cell: &CellSpec, channels: usize) -> Result<ModelSpec, SearchError> {
        build_cosmo_net(&CosmoNetScale::Cells {
            cell: cell.clone(),
            count: self.cell_count,
            reductions: self.reduction_positions.clone(),
            channel_width: channels,
        })
        .map_err(|e| SearchError::Cost(e.to_string()))
    }

    /// Per-sample training FLOPs at default cost parameters.
    pub fn cost(&self, cell: &CellSpec, channels: usize) -> Result<u64, SearchError> {
        let m = self.model(cell, channels)?;
        training_flops(&m, &self.input, 1, &CostParams::default())
            .map_err(|e| SearchError::Cost(e.to_string()))
    }
}

/// Accepted FLOP window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlopTarget {
    Relative { target: f64, tolerance: f64 },
    Range { lo: f64, hi: f64 },
}

impl FlopTarget {
    pub fn around(target: f64) -> Self {
        FlopTarget::Relative {
            target,
            tolerance: 0.05,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            FlopTarget::Relative { target, tolerance } => {
                (target * (1.0 - tolerance), target * (1.0 + tolerance))
            }
            FlopTarget::Range { lo, hi } => (lo, hi),
        }
    }

    pub fn contains(&self, flops: f64) -> bool {
        let (lo, hi) = self.bounds();
        lo <= flops && flops <= hi
    }
}

/// Sample one cell: every non-input node draws 1..=max_in predecessors and a
/// candidate op per edge, all uniformly.
pub fn sample_cell(space: &SearchSpace, seed: u64) -> CellSpec {
    let mut rng = SplitMix64::new(seed);
    let mut edges = Vec::new();
    for to in 1..space.node_count {
        let fan_in = 1 + rng.below(space.max_in_edges_per_node.min(to) as u64) as usize;
        for from in rng.choose_distinct(to, fan_in) {
            let op = space.candidate_ops[rng.below(space.candidate_ops.len() as u64) as usize];
            edges.push(CellEdge { from, to, op });
        }
    }
    CellSpec::new(space.node_count, edges)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub index: usize,
    pub report: Option<CostReport>,
    pub accepted: bool,
}

/// Cost every candidate at batch 1 and mark those inside `target`. Work is
/// spread over threads; results come back in candidate order.
pub fn evaluate_candidates(
    candidates: &[ModelSpec],
    target: &FlopTarget,
    input: &TensorShape,
) -> Vec<Evaluated> {
    let params = CostParams::default();
    let eval = |index: usize, m: &ModelSpec| {
        let report = cost_report(m, input, 1, &params).ok();
        let accepted = report
            .as_ref()
            .is_some_and(|r| target.contains(r.training_flops as f64));
        Evaluated {
            index,
            report,
            accepted,
        }
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(candidates.len().max(1));
    let chunk = candidates.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = candidates
            .chunks(chunk)
            .enumerate()
            .map(|(ci, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, m)| eval(ci * chunk + i, m))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("candidate evaluation panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredModel {
    pub index: usize,
    pub model: ModelSpec,
    pub report: CostReport,
}

/// The model filter: keep candidates whose per-sample training FLOPs lie in
/// `target`, in input order, with their cost reports.
pub fn filter_models(
    candidates: &[ModelSpec],
    target: &FlopTarget,
    input: &TensorShape,
) -> Vec<FilteredModel> {
    evaluate_candidates(candidates, target, input)
        .into_iter()
        .filter(|e| e.accepted)
        .map(|e| FilteredModel {
            index: e.index,
            model: candidates[e.index].clone(),
            report: e.report.expect("accepted candidates have reports"),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthChoice {
    pub channels: usize,
    pub cost: f64,
    pub tolerance_missed: bool,
}

/// Integer bisection over a nondecreasing cost curve. Returns the width
/// whose cost is closest to `target`, preferring the smaller width on ties.
pub fn solve_width(
    range: (usize, usize),
    target: f64,
    rel_tol: f64,
    mut cost: impl FnMut(usize) -> Result<f64, SearchError>,
) -> Result<WidthChoice, SearchError> {
    let (lo, hi) = range;
    let (c_lo, c_hi) = (cost(lo)?, cost(hi)?);
    if target < c_lo || target > c_hi {
        return Err(SearchError::TargetUnreachable {
            target,
            lo: c_lo,
            hi: c_hi,
        });
    }
    // Smallest width with cost >= target.
    let (mut a, mut b) = (lo, hi);
    while a < b {
        let mid = a + (b - a) / 2;
        if cost(mid)? >= target {
            b = mid;
        } else {
            a = mid + 1;
        }
    }
    let above = (a, cost(a)?);
    let best = if a > lo {
        let below = (a - 1, cost(a - 1)?);
        if (target - below.1) <= (above.1 - target) {
            below
        } else {
            above
        }
    } else {
        above
    };
    Ok(WidthChoice {
        channels: best.0,
        cost: best.1,
        tolerance_missed: ((best.1 - target) / target).abs() > rel_tol,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSolution {
    pub channel_width: usize,
    pub training_flops: u64,
    pub tolerance_missed: bool,
    pub model: ModelSpec,
}

pub fn solve_channels(
    cell: &CellSpec,
    space: &SearchSpace,
    target: f64,
    input: &TensorShape,
    rel_tol: f64,
) -> Result<ChannelSolution, SearchError> {
    space.check()?;
    let space = SearchSpace {
        input: input.clone(),
        ..space.clone()
    };
    let choice = solve_width(space.channel_range, target, rel_tol, |c| {
        space.cost(cell, c).map(|f| f as f64)
    })?;
    Ok(ChannelSolution {
        channel_width: choice.channels,
        training_flops: choice.cost as u64,
        tolerance_missed: choice.tolerance_missed,
        model: space.model(cell, choice.channels)?,
    })
}

/// Check `cost(C+1) >= cost(C)` over the whole channel range; returns the
/// first offending width.
pub fn check_cost_monotone(cell: &CellSpec, space: &SearchSpace) -> Result<Option<usize>, SearchError> {
    let (lo, hi) = space.channel_range;
    let mut prev = space.cost(cell, lo)?;
    for c in lo + 1..=hi {
        let next = space.cost(cell, c)?;
        if next < prev {
            return Ok(Some(c - 1));
        }
        prev = next;
    }
    Ok(None)
}

/// One sampled cell scaled to each target in turn.
pub fn generate_scaled_family(
    space: &SearchSpace,
    targets: &[f64],
    seed: u64,
) -> Result<Vec<ChannelSolution>, SearchError> {
    space.check()?;
    if targets.windows(2).any(|w| w[0] > w[1]) {
        return Err(SearchError::UnsortedTargets);
    }
    let cell = sample_cell(space, seed);
    let family = targets
        .iter()
        .map(|&t| solve_channels(&cell, space, t, &space.input, space.tolerance))
        .collect::<Result<Vec<_>, _>>()?;
    if family.windows(2).any(|w| w[0].training_flops >= w[1].training_flops) {
        return Err(SearchError::NotIncreasing(
            family.iter().map(|s| s.training_flops).collect(),
        ));
    }
    Ok(family)
}
