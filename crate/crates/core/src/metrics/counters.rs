use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::accel::NodeRef;

/// A fetched node together with the instance it was reached through.
/// Bottom-level nodes shared by many instances are distinct per instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FetchKey {
    pub node: NodeRef,
    pub instance: u32,
}

impl FetchKey {
    pub const NO_INSTANCE: u32 = u32::MAX;
}

/// One memory access of the fetch trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub address: u64,
    pub bytes: u32,
}

/// Additive traversal statistics.
///
/// `unique_nodes` is the sum over finished rays of each ray's distinct
/// fetched nodes; the frame-wide distinct set is kept alongside.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraversalCounters {
    pub rays: u64,
    pub rounds: u64,
    pub node_fetches: u64,
    pub unique_nodes: u64,
    pub box_tests: u64,
    pub tri_tests: u64,
    pub sphere_tests: u64,
    pub proxy_false_positives: u64,
    pub blends: u64,
    pub checkpoint_seeds: u64,
    pub checkpoints: u64,
    pub evictions: u64,
    pub overflow_fallbacks: u64,
    ray_nodes: HashSet<FetchKey>,
    frame_nodes: HashSet<FetchKey>,
    trace: Option<Vec<Access>>,
}

impl TraversalCounters {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counters that also record every fetch for cache replay.
    pub fn with_trace() -> Self {
        TraversalCounters {
            trace: Some(Vec::new()),
            ..Self::default()
        }
    }

    pub fn record_fetch(&mut self, key: FetchKey, address: u64, bytes: u64) {
        self.node_fetches += 1;
        self.ray_nodes.insert(key);
        if let Some(t) = &mut self.trace {
            t.push(Access {
                address,
                bytes: bytes as u32,
            });
        }
    }

    /// Closes the current ray: folds its distinct nodes into the totals.
    pub fn end_ray(&mut self) {
        self.rays += 1;
        self.unique_nodes += self.ray_nodes.len() as u64;
        self.frame_nodes.extend(self.ray_nodes.drain());
    }

    /// Distinct nodes of the ray in progress.
    pub fn ray_unique(&self) -> usize {
        self.ray_nodes.len()
    }

    pub fn frame_unique_nodes(&self) -> u64 {
        self.frame_nodes.len() as u64
    }

    pub fn trace(&self) -> Option<&[Access]> {
        self.trace.as_deref()
    }

    /// Fieldwise sum; node sets are unioned and traces concatenated
    /// (`self` first).
    pub fn merge(&mut self, other: &TraversalCounters) {
        self.rays += other.rays;
        self.rounds += other.rounds;
        self.node_fetches += other.node_fetches;
        self.unique_nodes += other.unique_nodes;
        self.box_tests += other.box_tests;
        self.tri_tests += other.tri_tests;
        self.sphere_tests += other.sphere_tests;
        self.proxy_false_positives += other.proxy_false_positives;
        self.blends += other.blends;
        self.checkpoint_seeds += other.checkpoint_seeds;
        self.checkpoints += other.checkpoints;
        self.evictions += other.evictions;
        self.overflow_fallbacks += other.overflow_fallbacks;
        self.ray_nodes.extend(other.ray_nodes.iter().copied());
        self.frame_nodes.extend(other.frame_nodes.iter().copied());
        match (&mut self.trace, &other.trace) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            (None, Some(b)) => self.trace = Some(b.clone()),
            _ => {}
        }
    }

    pub fn merged(mut self, other: &TraversalCounters) -> Self {
        self.merge(other);
        self
    }

    pub fn summary(&self) -> CounterSummary {
        CounterSummary {
            rays: self.rays,
            rounds: self.rounds,
            node_fetches: self.node_fetches,
            unique_nodes: self.unique_nodes,
            frame_unique_nodes: self.frame_unique_nodes(),
            box_tests: self.box_tests,
            tri_tests: self.tri_tests,
            sphere_tests: self.sphere_tests,
            proxy_false_positives: self.proxy_false_positives,
            blends: self.blends,
            checkpoint_seeds: self.checkpoint_seeds,
            checkpoints: self.checkpoints,
            evictions: self.evictions,
            overflow_fallbacks: self.overflow_fallbacks,
        }
    }
}

/// The scalar part of [`TraversalCounters`], in report field order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSummary {
    pub rays: u64,
    pub rounds: u64,
    pub node_fetches: u64,
    pub unique_nodes: u64,
    pub frame_unique_nodes: u64,
    pub box_tests: u64,
    pub tri_tests: u64,
    pub sphere_tests: u64,
    pub proxy_false_positives: u64,
    pub blends: u64,
    pub checkpoint_seeds: u64,
    pub checkpoints: u64,
    pub evictions: u64,
    pub overflow_fallbacks: u64,
}
