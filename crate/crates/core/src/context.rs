//! Context windows over the breadth-first node sequence.
//!
//! Each window holds `N` rows; each row carries `K` slots (the node itself and
//! up to `K - 1` ancestors), and each slot is an (occupancy, level, octant)
//! triple. Windows advance by `N0` positions and the last `N0` rows of a window
//! are its prediction targets.
//!
//! A target row cannot carry its own occupancy, so its slot 0 holds the
//! occupancy of the previous node in the sequence (0 at sequence start). Rows
//! that only serve as context carry their true occupancy.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::octree::{NodeSequence, OctreeNode, NO_PARENT};

pub const PAD_OCCUPANCY: u8 = 0;
pub const PAD_LEVEL: u8 = 0;
pub const PAD_OCTANT: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotFeature {
    pub occupancy: u8,
    pub level: u8,
    pub octant: u8,
}

impl SlotFeature {
    pub const PAD: Self = Self {
        occupancy: PAD_OCCUPANCY,
        level: PAD_LEVEL,
        octant: PAD_OCTANT,
    };
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeFeatureRow {
    /// Slot 0 is the node, slot `t` its `t`-th ancestor.
    pub slots: Vec<SlotFeature>,
}

impl NodeFeatureRow {
    pub fn padding(k: usize) -> Self {
        Self {
            slots: vec![SlotFeature::PAD; k],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowRole {
    /// The row predicts its own node; slot 0 occupancy is the previous node's.
    Target,
    /// The row is context for later targets; slot 0 occupancy is its own.
    Context,
}

/// Builds the feature row for `position`. For [`RowRole::Target`] the node's
/// own occupancy is never read, so `nodes[position]` may still be undecoded.
pub fn assemble_row(nodes: &[OctreeNode], position: usize, k: usize, role: RowRole) -> NodeFeatureRow {
    let node = &nodes[position];
    let occupancy = match role {
        RowRole::Context => node.occupancy,
        RowRole::Target if position == 0 => PAD_OCCUPANCY,
        RowRole::Target => nodes[position - 1].occupancy,
    };
    let mut slots = Vec::with_capacity(k);
    slots.push(SlotFeature {
        occupancy,
        level: node.level,
        octant: node.octant,
    });
    let mut parent = node.parent;
    for _ in 1..k {
        if parent == NO_PARENT {
            slots.push(SlotFeature::PAD);
        } else {
            let a = &nodes[parent as usize];
            slots.push(SlotFeature {
                occupancy: a.occupancy,
                level: a.level,
                octant: a.octant,
            });
            parent = a.parent;
        }
    }
    NodeFeatureRow { slots }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowParams {
    pub n: usize,
    pub k: usize,
    pub n0: usize,
}

impl WindowParams {
    pub fn new(n: usize, k: usize, n0: usize) -> Result<Self> {
        if n == 0 || k == 0 || n0 == 0 || n0 > n {
            return Err(Error::InvalidArgument(format!(
                "window parameters need N >= 1, K >= 1, 1 <= N0 <= N (got N={n}, K={k}, N0={n0})"
            )));
        }
        Ok(Self { n, k, n0 })
    }

    /// Mean number of visible rows per target for a full window.
    pub fn average_receptive_field(&self) -> f64 {
        (2 * self.n - self.n0 + 1) as f64 / 2.0
    }
}

/// Placement of one window in the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowPlan {
    /// Window length `N`.
    pub n: usize,
    /// Sequence positions predicted by this window.
    pub first_target: usize,
    /// Last covered sequence position (inclusive); also the last target.
    pub end: usize,
}

impl WindowPlan {
    /// Sequence position of row `r`, or `None` for a padding row.
    pub fn position_of_row(&self, r: usize) -> Option<usize> {
        (self.end + 1 + r).checked_sub(self.n)
    }

    pub fn row_of_position(&self, p: usize) -> usize {
        p + self.n - self.end - 1
    }

    pub fn first_target_row(&self) -> usize {
        self.row_of_position(self.first_target)
    }

    pub fn targets(&self) -> Range<usize> {
        self.first_target..self.end + 1
    }

    pub fn padding_rows(&self) -> usize {
        self.n.saturating_sub(self.end + 1)
    }

    /// Rows visible to each target under the causal mask.
    pub fn receptive_fields(&self) -> Vec<usize> {
        self.targets().map(|p| self.row_of_position(p) + 1).collect()
    }
}

/// Windows covering a sequence of `len` nodes, each node a target exactly once.
pub fn window_plans(len: usize, params: WindowParams) -> Vec<WindowPlan> {
    (0..len)
        .step_by(params.n0)
        .map(|start| WindowPlan {
            n: params.n,
            first_target: start,
            end: (start + params.n0).min(len) - 1,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub rows: Vec<NodeFeatureRow>,
    pub plan: WindowPlan,
    /// True occupancies of the target positions.
    pub targets: Vec<u8>,
}

impl ContextWindow {
    pub fn first_target_row(&self) -> usize {
        self.plan.first_target_row()
    }

    pub fn target_positions(&self) -> Range<usize> {
        self.plan.targets()
    }
}

pub fn assemble_window(nodes: &[OctreeNode], plan: WindowPlan, k: usize) -> ContextWindow {
    let rows = (0..plan.n)
        .map(|r| match plan.position_of_row(r) {
            None => NodeFeatureRow::padding(k),
            Some(p) if p < plan.first_target => assemble_row(nodes, p, k, RowRole::Context),
            Some(p) => assemble_row(nodes, p, k, RowRole::Target),
        })
        .collect();
    ContextWindow {
        rows,
        plan,
        targets: nodes[plan.targets()].iter().map(|n| n.occupancy).collect(),
    }
}

pub fn build_windows(ns: &NodeSequence, params: WindowParams) -> Vec<ContextWindow> {
    window_plans(ns.len(), params)
        .into_iter()
        .map(|plan| assemble_window(&ns.nodes, plan, params.k))
        .collect()
}
