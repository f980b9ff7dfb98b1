//! Octree construction and breadth-first serialization of occupancy codes.
//!
//! Child index layout: `(x_bit << 2) | (y_bit << 1) | z_bit`, where the bits are
//! taken from each coordinate at the node's level. Bit `b` of an occupancy code
//! (least significant first) flags child `b`. Children are emitted in ascending
//! child index, and levels are emitted root first.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::QuantizedCloud;

pub const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OctreeNode {
    /// 1..=255 once decoded.
    pub occupancy: u8,
    /// Root is level 1; nodes at level `depth` have leaf cells as children.
    pub level: u8,
    /// Child index within the parent; the root uses 0.
    pub octant: u8,
    /// Position of the parent in the sequence, [`NO_PARENT`] for the root.
    pub parent: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSequence {
    pub depth: u8,
    pub nodes: Vec<OctreeNode>,
}

impl NodeSequence {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn occupancies(&self) -> impl Iterator<Item = u8> + '_ {
        self.nodes.iter().map(|n| n.occupancy)
    }

    /// Checks level monotonicity and that each level holds exactly as many
    /// nodes as the previous level has occupied children.
    pub fn check_invariants(&self) -> Result<()> {
        let mut expected_next = 1usize;
        let mut i = 0;
        for level in 1..=self.depth {
            let start = i;
            while i < self.nodes.len() && self.nodes[i].level == level {
                i += 1;
            }
            if i - start != expected_next {
                return Err(Error::Structure {
                    position: start,
                    message: format!(
                        "level {level} holds {} nodes, parents imply {expected_next}",
                        i - start
                    ),
                });
            }
            expected_next = self.nodes[start..i]
                .iter()
                .map(|n| n.occupancy.count_ones() as usize)
                .sum();
        }
        if i != self.nodes.len() {
            return Err(Error::Structure {
                position: i,
                message: "levels are not non-decreasing".into(),
            });
        }
        Ok(())
    }
}

/// Child indices flagged in an occupancy code, ascending.
pub fn code_to_children(occupancy: u32) -> Result<Vec<u8>> {
    if occupancy == 0 || occupancy > 255 {
        return Err(Error::InvalidArgument(format!(
            "occupancy code must be in 1..=255, got {occupancy}"
        )));
    }
    Ok((0..8u8).filter(|b| occupancy >> b & 1 == 1).collect())
}

pub fn children_to_code(children: &[u8]) -> Result<u8> {
    if children.is_empty() {
        return Err(Error::InvalidArgument("no children".into()));
    }
    let mut code = 0u8;
    for &c in children {
        if c > 7 {
            return Err(Error::InvalidArgument(format!("child index {c} > 7")));
        }
        code |= 1 << c;
    }
    Ok(code)
}

#[inline]
fn child_index(c: &[u32; 3], bit: u8) -> u64 {
    (((c[0] >> bit) & 1) << 2 | ((c[1] >> bit) & 1) << 1 | ((c[2] >> bit) & 1)) as u64
}

/// Interleaved code whose 3-bit digits, most significant first, are the child
/// indices from the root down.
pub fn morton_code(c: &[u32; 3], depth: u8) -> u64 {
    (0..depth)
        .rev()
        .fold(0u64, |code, bit| code << 3 | child_index(c, bit))
}

pub fn build(qc: &QuantizedCloud) -> Result<NodeSequence> {
    let depth = qc.depth;
    if qc.is_empty() {
        return Err(Error::EmptyInput);
    }
    let limit = crate::geometry::grid_limit(depth);
    let mut codes = Vec::with_capacity(qc.len());
    for c in qc.coords() {
        if let Some(&bad) = c.iter().find(|&&v| v > limit) {
            return Err(Error::OutOfBounds { coord: bad, depth });
        }
        codes.push(morton_code(c, depth));
    }
    codes.sort_unstable();
    codes.dedup();

    let mut nodes: Vec<OctreeNode> = Vec::new();
    let mut prev_prefixes: Vec<u64> = Vec::new();
    let mut prev_start = 0usize;
    for level in 1..=depth {
        let child_shift = 3 * (depth - level) as u32;
        let node_shift = child_shift + 3;
        let start = nodes.len();
        let mut prefixes: Vec<u64> = Vec::new();
        let mut cursor = 0usize;
        for &code in &codes {
            let prefix = code.checked_shr(node_shift).unwrap_or(0);
            let digit = (code >> child_shift) & 7;
            if prefixes.last() == Some(&prefix) {
                nodes.last_mut().unwrap().occupancy |= 1 << digit;
                continue;
            }
            let (parent, octant) = if level == 1 {
                (NO_PARENT, 0)
            } else {
                while prev_prefixes[cursor] != prefix >> 3 {
                    cursor += 1;
                }
                ((prev_start + cursor) as u32, (prefix & 7) as u8)
            };
            prefixes.push(prefix);
            nodes.push(OctreeNode {
                occupancy: 1 << digit,
                level,
                octant,
                parent,
            });
        }
        prev_prefixes = prefixes;
        prev_start = start;
    }
    Ok(NodeSequence { depth, nodes })
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    level: u8,
    octant: u8,
    parent: u32,
    origin: [u32; 3],
}

/// Incrementally grows a breadth-first sequence from occupancy codes, exposing
/// the level, octant and parent of the next node before its code is known.
#[derive(Debug, Clone)]
pub struct SequenceBuilder {
    depth: u8,
    nodes: Vec<OctreeNode>,
    origins: Vec<[u32; 3]>,
    pending: VecDeque<Pending>,
    open: bool,
    leaves: Vec<[u32; 3]>,
}

impl SequenceBuilder {
    pub fn new(depth: u8) -> Self {
        let mut pending = VecDeque::new();
        pending.push_back(Pending {
            level: 1,
            octant: 0,
            parent: NO_PARENT,
            origin: [0; 3],
        });
        Self {
            depth,
            nodes: Vec::new(),
            origins: Vec::new(),
            pending,
            open: false,
            leaves: Vec::new(),
        }
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    /// Nodes so far; an open node is present with occupancy 0.
    pub fn nodes(&self) -> &[OctreeNode] {
        &self.nodes
    }

    pub fn is_complete(&self) -> bool {
        self.pending.is_empty() && !self.open
    }

    /// Number of nodes the structure still requires, given the codes so far.
    pub fn remaining(&self) -> usize {
        self.pending.len()
    }

    /// Appends the next node with an unknown (zero) occupancy and returns its
    /// position, or `None` when the structure is complete.
    pub fn open(&mut self) -> Option<usize> {
        assert!(!self.open, "previous node still open");
        let p = self.pending.pop_front()?;
        self.nodes.push(OctreeNode {
            occupancy: 0,
            level: p.level,
            octant: p.octant,
            parent: p.parent,
        });
        self.origins.push(p.origin);
        self.open = true;
        Some(self.nodes.len() - 1)
    }

    pub fn close(&mut self, occupancy: u8) -> Result<()> {
        assert!(self.open, "no open node");
        let pos = self.nodes.len() - 1;
        if occupancy == 0 {
            return Err(Error::Structure {
                position: pos,
                message: "occupancy 0".into(),
            });
        }
        self.open = false;
        let node = &mut self.nodes[pos];
        node.occupancy = occupancy;
        let level = node.level;
        let origin = self.origins[pos];
        for child in 0..8u8 {
            if occupancy >> child & 1 == 0 {
                continue;
            }
            let c = [
                origin[0] << 1 | (child as u32 >> 2 & 1),
                origin[1] << 1 | (child as u32 >> 1 & 1),
                origin[2] << 1 | (child as u32 & 1),
            ];
            if level == self.depth {
                self.leaves.push(c);
            } else {
                self.pending.push_back(Pending {
                    level: level + 1,
                    octant: child,
                    parent: pos as u32,
                    origin: c,
                });
            }
        }
        Ok(())
    }

    pub fn into_sequence(self) -> NodeSequence {
        NodeSequence {
            depth: self.depth,
            nodes: self.nodes,
        }
    }

    /// Leaf cells decoded so far.
    pub fn leaves(&self) -> &[[u32; 3]] {
        &self.leaves
    }
}

/// Grid origin of every node in units of its own cell size: the root is
/// `[0, 0, 0]` and a child is `2·parent + child bits`.
pub fn node_origins(ns: &NodeSequence) -> Vec<[u32; 3]> {
    let mut out: Vec<[u32; 3]> = Vec::with_capacity(ns.len());
    for n in &ns.nodes {
        let o = if n.parent == NO_PARENT {
            [0; 3]
        } else {
            let p = out[n.parent as usize];
            let c = n.octant as u32;
            [p[0] << 1 | (c >> 2 & 1), p[1] << 1 | (c >> 1 & 1), p[2] << 1 | (c & 1)]
        };
        out.push(o);
    }
    out
}

/// Inverse of [`build`]; `offset` and `qs` are attached to the result.
pub fn reconstruct(ns: &NodeSequence, offset: [f64; 3], qs: f64) -> Result<QuantizedCloud> {
    if ns.is_empty() {
        return Err(Error::Structure {
            position: 0,
            message: "empty sequence".into(),
        });
    }
    if ns.depth == 0 || ns.depth > crate::geometry::MAX_DEPTH {
        return Err(Error::InvalidArgument(format!("bad depth {}", ns.depth)));
    }
    let mut b = SequenceBuilder::new(ns.depth);
    for (i, node) in ns.nodes.iter().enumerate() {
        let pos = b.open().ok_or_else(|| Error::Structure {
            position: i,
            message: "more nodes than the occupancy codes imply".into(),
        })?;
        let expect = b.nodes()[pos];
        if (expect.level, expect.octant, expect.parent) != (node.level, node.octant, node.parent) {
            return Err(Error::Structure {
                position: i,
                message: format!(
                    "node metadata (level {}, octant {}) disagrees with structure (level {}, octant {})",
                    node.level, node.octant, expect.level, expect.octant
                ),
            });
        }
        b.close(node.occupancy)?;
    }
    if !b.is_complete() {
        return Err(Error::Structure {
            position: ns.len(),
            message: format!("truncated sequence: {} nodes missing", b.remaining()),
        });
    }
    QuantizedCloud::new(b.leaves, offset, qs, ns.depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qc(coords: &[[u32; 3]], depth: u8) -> QuantizedCloud {
        QuantizedCloud::new(coords.to_vec(), [0.0; 3], 1.0, depth).unwrap()
    }

    #[test]
    fn single_origin_point() {
        let ns = build(&qc(&[[0, 0, 0]], 1)).unwrap();
        assert_eq!(ns.nodes.len(), 1);
        assert_eq!(ns.nodes[0].occupancy, 1);
        assert_eq!(ns.nodes[0].octant, 0);
        assert_eq!(ns.nodes[0].level, 1);
    }

    #[test]
    fn far_corner_is_child_seven() {
        let ns = build(&qc(&[[1, 1, 1]], 1)).unwrap();
        assert_eq!(ns.nodes[0].occupancy, 128);
        let ns = build(&qc(&[[1, 0, 0]], 1)).unwrap();
        assert_eq!(ns.nodes[0].occupancy, 1 << 4);
    }

    #[test]
    fn full_unit_cube() {
        let all: Vec<[u32; 3]> = (0..8).map(|i| [i >> 2 & 1, i >> 1 & 1, i & 1]).collect();
        let ns = build(&qc(&all, 1)).unwrap();
        assert_eq!(ns.nodes.len(), 1);
        assert_eq!(ns.nodes[0].occupancy, 255);
        let back = reconstruct(&ns, [0.0; 3], 1.0).unwrap();
        assert_eq!(back.coords().len(), 8);
        assert_eq!(back, qc(&all, 1));
    }

    #[test]
    fn two_level_structure() {
        // (0,0,0) and (3,3,3) at depth 2: root has children 0 and 7
        let ns = build(&qc(&[[0, 0, 0], [3, 3, 3]], 2)).unwrap();
        let occ: Vec<u8> = ns.occupancies().collect();
        assert_eq!(occ, vec![0b1000_0001, 1, 128]);
        assert_eq!(ns.nodes[1].octant, 0);
        assert_eq!(ns.nodes[2].octant, 7);
        assert_eq!(ns.nodes[2].parent, 0);
        ns.check_invariants().unwrap();
    }

    #[test]
    fn code_children_examples() {
        assert_eq!(code_to_children(255).unwrap(), (0..8).collect::<Vec<u8>>());
        assert_eq!(code_to_children(1).unwrap(), vec![0]);
        assert_eq!(code_to_children(170).unwrap(), vec![1, 3, 5, 7]);
        assert!(code_to_children(0).is_err());
        assert!(code_to_children(256).is_err());
        assert_eq!(children_to_code(&[1, 3, 5, 7]).unwrap(), 170);
        assert!(children_to_code(&[8]).is_err());
    }

    #[test]
    fn structural_errors() {
        let empty = NodeSequence { depth: 2, nodes: vec![] };
        assert!(matches!(reconstruct(&empty, [0.0; 3], 1.0), Err(Error::Structure { .. })));

        let ns = build(&qc(&[[0, 0, 0], [3, 3, 3]], 2)).unwrap();
        let mut truncated = ns.clone();
        truncated.nodes.pop();
        assert!(matches!(
            reconstruct(&truncated, [0.0; 3], 1.0),
            Err(Error::Structure { position: 2, .. })
        ));

        let mut extra = ns.clone();
        extra.nodes.push(ns.nodes[2]);
        assert!(reconstruct(&extra, [0.0; 3], 1.0).is_err());

        let mut zero = ns.clone();
        zero.nodes[1].occupancy = 0;
        assert!(reconstruct(&zero, [0.0; 3], 1.0).is_err());

        let mut mismatch = ns;
        mismatch.nodes[0].occupancy = 0b1100_0001;
        assert!(reconstruct(&mismatch, [0.0; 3], 1.0).is_err());
    }

    #[test]
    fn out_of_range_coordinate() {
        // bypass QuantizedCloud validation by building at a shallower depth
        let mut cloud = qc(&[[7, 0, 0]], 3);
        cloud.depth = 2;
        assert!(matches!(build(&cloud), Err(Error::OutOfBounds { .. })));
    }

    proptest! {
        #[test]
        fn build_reconstruct_identity(
            depth in 1u8..=8,
            raw in proptest::collection::vec((0u32..256, 0u32..256, 0u32..256), 1..200),
        ) {
            let limit = crate::geometry::grid_limit(depth);
            let coords: Vec<[u32; 3]> = raw.iter().map(|&(x, y, z)| [x & limit, y & limit, z & limit]).collect();
            let cloud = qc(&coords, depth);
            let ns = build(&cloud).unwrap();
            ns.check_invariants().unwrap();
            prop_assert!(ns.nodes.iter().all(|n| n.occupancy != 0));
            // children of each internal node appear in ascending octant order
            for w in ns.nodes.windows(2) {
                if w[0].parent == w[1].parent {
                    prop_assert!(w[0].octant < w[1].octant);
                }
            }
            let back = reconstruct(&ns, [0.0; 3], 1.0).unwrap();
            prop_assert_eq!(back, cloud);
        }
    }
}
