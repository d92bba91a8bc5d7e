//! Wide BVH built by longest-axis median splits.
//!
//! Every internal node has up to `arity` child slots; each slot points either
//! to another internal node or to a single primitive (a leaf). Node indices
//! follow depth-first preorder, root at index 0.

use nalgebra::Point3;

use super::Aabb;

pub const MIN_ARITY: usize = 2;
pub const MAX_ARITY: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Child {
    Node(u32),
    Leaf(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvhNode {
    pub bounds: Aabb,
    first_slot: u32,
    slot_count: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bvh {
    arity: usize,
    nodes: Vec<BvhNode>,
    slots: Vec<Child>,
    leaf_bounds: Vec<Aabb>,
}

impl Bvh {
    /// Builds over primitives given by their bounds. Leaf `i` is primitive `i`.
    ///
    /// Panics if `leaf_bounds` is empty or `arity` is outside `2..=6`.
    pub fn build(leaf_bounds: Vec<Aabb>, arity: usize) -> Bvh {
        assert!(!leaf_bounds.is_empty(), "cannot build a BVH over zero primitives");
        assert!((MIN_ARITY..=MAX_ARITY).contains(&arity), "arity {arity} outside 2..=6");
        let centroids: Vec<Point3<f64>> = leaf_bounds.iter().map(Aabb::centroid).collect();
        let mut order: Vec<u32> = (0..leaf_bounds.len() as u32).collect();
        let mut bvh = Bvh {
            arity,
            nodes: Vec::with_capacity(leaf_bounds.len() / (arity - 1) + 1),
            slots: Vec::with_capacity(leaf_bounds.len() * 2),
            leaf_bounds,
        };
        bvh.build_node(&mut order, &centroids);
        bvh
    }

    fn build_node(&mut self, prims: &mut [u32], centroids: &[Point3<f64>]) -> u32 {
        let index = self.nodes.len() as u32;
        self.nodes.push(BvhNode {
            bounds: Aabb::empty(),
            first_slot: 0,
            slot_count: 0,
        });

        // Split the largest group at its centroid median until we have
        // `arity` groups or nothing left to split.
        let mut groups: Vec<(usize, usize)> = vec![(0, prims.len())];
        while groups.len() < self.arity {
            let Some((gi, &(start, end))) = groups
                .iter()
                .enumerate()
                .filter(|(_, (s, e))| e - s > 1)
                .max_by(|a, b| (a.1 .1 - a.1 .0).cmp(&(b.1 .1 - b.1 .0)).then(b.0.cmp(&a.0)))
            else {
                break;
            };
            let part = &mut prims[start..end];
            let cbox = Aabb::from_points(part.iter().map(|&p| &centroids[p as usize]));
            let axis = cbox.longest_axis();
            let mid = part.len() / 2;
            part.select_nth_unstable_by(mid, |&a, &b| {
                centroids[a as usize][axis]
                    .total_cmp(&centroids[b as usize][axis])
                    .then(a.cmp(&b))
            });
            groups.splice(gi..=gi, [(start, start + mid), (start + mid, end)]);
        }

        let mut children = Vec::with_capacity(groups.len());
        let mut bounds = Aabb::empty();
        for (start, end) in groups {
            let child = if end - start == 1 {
                Child::Leaf(prims[start])
            } else {
                Child::Node(self.build_node(&mut prims[start..end], centroids))
            };
            bounds = bounds.union(&self.child_bounds(child));
            children.push(child);
        }
        let node = &mut self.nodes[index as usize];
        node.bounds = bounds;
        node.first_slot = self.slots.len() as u32;
        node.slot_count = children.len() as u8;
        self.slots.extend(children);
        index
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn root_bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    pub fn node(&self, i: u32) -> Option<&BvhNode> {
        self.nodes.get(i as usize)
    }

    pub fn children(&self, node: &BvhNode) -> &[Child] {
        let s = node.first_slot as usize;
        &self.slots[s..s + node.slot_count as usize]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_bounds.len()
    }

    pub fn leaf_bounds(&self, leaf: u32) -> Option<&Aabb> {
        self.leaf_bounds.get(leaf as usize)
    }

    pub fn child_bounds(&self, child: Child) -> Aabb {
        match child {
            Child::Node(n) => self.nodes[n as usize].bounds,
            Child::Leaf(l) => self.leaf_bounds[l as usize],
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0u32, 0usize)];
        while let Some((n, depth)) = stack.pop() {
            for &c in self.children(&self.nodes[n as usize]) {
                match c {
                    Child::Node(m) => stack.push((m, depth + 1)),
                    Child::Leaf(_) => best = best.max(depth + 1),
                }
            }
        }
        best
    }
}
