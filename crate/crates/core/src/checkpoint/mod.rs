//! Per-ray checkpoint and eviction buffers for replayed multi-round traversal.
//!
//! Nodes that intersect the ray beyond the round's `t_max` are written to the
//! destination buffer; hits pushed out of a full k-buffer go to the eviction
//! buffer. Between rounds the two checkpoint buffers swap roles and the
//! closest evicted hits seed the next k-buffer.

use std::collections::HashSet;

use crate::accel::NodeRef;
use crate::error::{Error, Result};
use crate::traversal::{HitRecord, KBuffer};

pub const CHECKPOINT_ENTRY_BYTES: usize = 20;
pub const EVICTION_ENTRY_BYTES: usize = 8;
pub const DEFAULT_CHECKPOINT_CAPACITY: usize = 1024;
pub const DEFAULT_EVICTION_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointEntry {
    pub node: NodeRef,
    /// Instance leaf the ray entered to reach a bottom-level node, or
    /// [`NodeRef::SENTINEL`] for top-level nodes.
    pub tlas_leaf: NodeRef,
    pub t_hit: f32,
}

impl CheckpointEntry {
    /// `node u64 | tlas_leaf u64 | t_hit f32`, little-endian.
    pub fn to_bytes(&self) -> [u8; CHECKPOINT_ENTRY_BYTES] {
        let mut b = [0u8; CHECKPOINT_ENTRY_BYTES];
        b[..8].copy_from_slice(&self.node.0.to_le_bytes());
        b[8..16].copy_from_slice(&self.tlas_leaf.0.to_le_bytes());
        b[16..].copy_from_slice(&self.t_hit.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; CHECKPOINT_ENTRY_BYTES]) -> Self {
        CheckpointEntry {
            node: NodeRef(u64::from_le_bytes(b[..8].try_into().unwrap())),
            tlas_leaf: NodeRef(u64::from_le_bytes(b[8..16].try_into().unwrap())),
            t_hit: f32::from_le_bytes(b[16..].try_into().unwrap()),
        }
    }
}

/// A hit rejected from a full k-buffer. Held at full precision in memory so
/// re-seeded hits order exactly as they would if traversed again; the
/// serialized form stores `t` as f32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct EvictionEntry {
    pub hit: HitRecord,
}

impl EvictionEntry {
    pub fn prim_id(&self) -> u32 {
        self.hit.id
    }

    /// `prim_id u32 | t_hit f32`, little-endian.
    pub fn to_bytes(&self) -> [u8; EVICTION_ENTRY_BYTES] {
        let mut b = [0u8; EVICTION_ENTRY_BYTES];
        b[..4].copy_from_slice(&self.hit.id.to_le_bytes());
        b[4..].copy_from_slice(&(self.hit.t as f32).to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; EVICTION_ENTRY_BYTES]) -> Self {
        EvictionEntry {
            hit: HitRecord::new(
                f32::from_le_bytes(b[4..].try_into().unwrap()) as f64,
                u32::from_le_bytes(b[..4].try_into().unwrap()),
            ),
        }
    }
}

/// What [`prepare_round`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preparation {
    /// Seeds come from the source buffer and the eviction buffer.
    Replay { seeded: usize },
    /// Traversal starts at the root: first round or overflow fallback.
    Root { fallback: bool },
}

#[derive(Debug, Clone)]
pub struct CheckpointContext {
    src: Vec<CheckpointEntry>,
    dst: Vec<CheckpointEntry>,
    evict: Vec<EvictionEntry>,
    replay: bool,
    src_offset: usize,
    dst_offset: usize,
    checkpoint_capacity: usize,
    eviction_capacity: usize,
    overflow: bool,
    traced: bool,
    /// Gaussians already delivered to the k-buffer, evicted, consumed or
    /// found not to be hit; never delivered twice.
    seen: HashSet<u32>,
}

impl Default for CheckpointContext {
    fn default() -> Self {
        Self::new()
    }
}

impl CheckpointContext {
    pub fn new() -> Self {
        Self::with_capacities(DEFAULT_CHECKPOINT_CAPACITY, DEFAULT_EVICTION_CAPACITY)
    }

    pub fn with_capacities(checkpoint_capacity: usize, eviction_capacity: usize) -> Self {
        CheckpointContext {
            src: Vec::new(),
            dst: Vec::new(),
            evict: Vec::new(),
            replay: false,
            src_offset: 0,
            dst_offset: 0,
            checkpoint_capacity,
            eviction_capacity,
            overflow: false,
            traced: false,
            seen: HashSet::new(),
        }
    }

    pub fn replay(&self) -> bool {
        self.replay
    }

    pub fn overflowed(&self) -> bool {
        self.overflow
    }

    pub fn src(&self) -> &[CheckpointEntry] {
        &self.src
    }

    pub fn dst(&self) -> &[CheckpointEntry] {
        &self.dst
    }

    pub fn evicted(&self) -> &[EvictionEntry] {
        &self.evict
    }

    pub fn src_offset(&self) -> usize {
        self.src_offset
    }

    pub fn dst_offset(&self) -> usize {
        self.dst_offset
    }

    pub fn is_seen(&self, id: u32) -> bool {
        self.seen.contains(&id)
    }

    pub fn mark_seen(&mut self, id: u32) {
        self.seen.insert(id);
    }

    /// Marks the start of a traversal round.
    pub fn begin_round(&mut self) {
        self.traced = true;
    }

    /// Appends to the destination buffer. On overflow the entry is dropped
    /// and the ray restarts from the root next round.
    pub fn checkpoint_push(&mut self, node: NodeRef, tlas_leaf: NodeRef, t_hit: f64) -> bool {
        if self.dst.len() >= self.checkpoint_capacity {
            self.overflow = true;
            return false;
        }
        self.dst.push(CheckpointEntry {
            node,
            tlas_leaf,
            t_hit: t_hit as f32,
        });
        self.dst_offset += 1;
        true
    }

    pub fn evict_push(&mut self, rejected: HitRecord) -> bool {
        if self.evict.len() >= self.eviction_capacity {
            self.overflow = true;
            return false;
        }
        self.evict.push(EvictionEntry { hit: rejected });
        true
    }

    /// Reads the next replay seed in stored order.
    pub fn next_seed(&mut self) -> Option<CheckpointEntry> {
        let e = self.src.get(self.src_offset).copied();
        if e.is_some() {
            self.src_offset += 1;
        }
        e
    }

    /// Remaining seeds of the source buffer, in order.
    pub fn replay_seeds(&self) -> &[CheckpointEntry] {
        &self.src[self.src_offset..]
    }

    fn restart(&mut self) {
        self.src.clear();
        self.dst.clear();
        self.evict.clear();
        self.seen.clear();
        self.src_offset = 0;
        self.dst_offset = 0;
        self.replay = false;
        self.overflow = false;
    }
}

/// Runs between rounds: seeds `kbuf` with the closest evicted hits and swaps
/// the checkpoint buffers.
///
/// Evicted hits beyond the first `k` stay in the eviction buffer for later
/// rounds. After an overflow everything is cleared and the next round starts
/// from the root.
pub fn prepare_round(ctx: &mut CheckpointContext, kbuf: &mut KBuffer) -> Result<Preparation> {
    if !kbuf.is_empty() {
        return Err(Error::Invariant("k-buffer must be drained before the next round".into()));
    }
    if ctx.overflow {
        ctx.restart();
        return Ok(Preparation::Root { fallback: true });
    }
    if !ctx.traced {
        return Ok(Preparation::Root { fallback: false });
    }
    ctx.evict.sort_unstable();
    let n = ctx.evict.len().min(kbuf.capacity());
    for e in ctx.evict.drain(..n) {
        kbuf.insert(e.hit)?;
    }
    std::mem::swap(&mut ctx.src, &mut ctx.dst);
    ctx.dst.clear();
    ctx.src.sort_by(|a, b| a.t_hit.total_cmp(&b.t_hit));
    ctx.src_offset = 0;
    ctx.dst_offset = 0;
    ctx.replay = true;
    Ok(Preparation::Replay { seeded: n })
}

/// Debug dump of the source, destination and eviction buffers in their
/// serialized layouts.
pub fn dump_buffers(ctx: &CheckpointContext) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let ck = |v: &[CheckpointEntry]| v.iter().flat_map(|e| e.to_bytes()).collect();
    (ck(&ctx.src), ck(&ctx.dst), ctx.evict.iter().flat_map(|e| e.to_bytes()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accel::Level;
    use proptest::prelude::*;

    fn hit(t: f64, id: u32) -> HitRecord {
        HitRecord::new(t, id)
    }

    #[test]
    fn entry_layouts() {
        let e = CheckpointEntry {
            node: NodeRef::node(Level::Bottom, 5),
            tlas_leaf: NodeRef::leaf(Level::Top, 9),
            t_hit: 3.5,
        };
        let b = e.to_bytes();
        assert_eq!(b.len(), 20);
        assert_eq!(CheckpointEntry::from_bytes(&b), e);
        let v = EvictionEntry { hit: hit(3.2, 5) };
        let b = v.to_bytes();
        assert_eq!(b.len(), 8);
        assert_eq!(&b[..4], &5u32.to_le_bytes());
        assert_eq!(&b[4..], &3.2f32.to_le_bytes());
    }

    #[test]
    fn checkpoint_push_appends_in_order() {
        let mut ctx = CheckpointContext::new();
        let top = NodeRef::SENTINEL;
        assert!(ctx.checkpoint_push(NodeRef::node(Level::Top, 4), top, 3.5));
        assert_eq!(ctx.dst()[0].t_hit, 3.5);
        for i in 0..9 {
            ctx.checkpoint_push(NodeRef::node(Level::Top, i), top, i as f64);
        }
        assert_eq!(ctx.dst().len(), 10);
        assert_eq!(ctx.dst_offset(), 10);
        assert!(ctx.dst()[1..].iter().enumerate().all(|(i, e)| e.node.index() == i as u32));
    }

    #[test]
    fn eviction_appends_and_seeds() {
        let mut ctx = CheckpointContext::new();
        let mut kbuf = KBuffer::new(4);
        ctx.begin_round();
        ctx.evict_push(hit(3.2, 5));
        assert_eq!(ctx.evicted()[0].prim_id(), 5);
        let p = prepare_round(&mut ctx, &mut kbuf).unwrap();
        assert_eq!(p, Preparation::Replay { seeded: 1 });
        assert_eq!(kbuf.entries(), &[hit(3.2, 5)]);
        assert!(ctx.evicted().is_empty());
        assert!(ctx.replay());
    }

    #[test]
    fn first_round_is_root() {
        let mut ctx = CheckpointContext::new();
        let mut kbuf = KBuffer::new(4);
        assert_eq!(prepare_round(&mut ctx, &mut kbuf).unwrap(), Preparation::Root { fallback: false });
        assert!(!ctx.replay());
    }

    #[test]
    fn ten_evicted_k_four() {
        let mut ctx = CheckpointContext::new();
        ctx.begin_round();
        let hits: Vec<HitRecord> = (0..10).map(|i| hit(((i * 7) % 10) as f64 * 0.5 + 1.0, 100 - i)).collect();
        for &h in &hits {
            ctx.evict_push(h);
        }
        let mut kbuf = KBuffer::new(4);
        prepare_round(&mut ctx, &mut kbuf).unwrap();
        let mut sorted = hits.clone();
        sorted.sort();
        assert_eq!(kbuf.entries(), &sorted[..4]);
        // the remainder waits for later rounds
        let rest: Vec<HitRecord> = ctx.evicted().iter().map(|e| e.hit).collect();
        assert_eq!(rest, sorted[4..]);
    }

    #[test]
    fn swap_orders_seeds_and_empties_dst() {
        let mut ctx = CheckpointContext::new();
        ctx.begin_round();
        for (i, t) in [4.0, 2.0, 3.0].into_iter().enumerate() {
            ctx.checkpoint_push(NodeRef::node(Level::Top, i as u32), NodeRef::SENTINEL, t);
        }
        prepare_round(&mut ctx, &mut KBuffer::new(2)).unwrap();
        assert!(ctx.dst().is_empty());
        let ts: Vec<f32> = ctx.replay_seeds().iter().map(|e| e.t_hit).collect();
        assert_eq!(ts, vec![2.0, 3.0, 4.0]);
        assert_eq!(ctx.next_seed().unwrap().node.index(), 1);
        assert_eq!(ctx.src_offset(), 1);
        assert!(ctx.src_offset() <= ctx.src().len());
    }

    #[test]
    fn overflow_falls_back_to_root() {
        let mut ctx = CheckpointContext::with_capacities(2, 1);
        ctx.begin_round();
        ctx.mark_seen(3);
        for i in 0..3 {
            ctx.checkpoint_push(NodeRef::node(Level::Top, i), NodeRef::SENTINEL, 1.0);
        }
        assert!(ctx.overflowed());
        assert_eq!(ctx.dst().len(), 2);
        assert!(!ctx.evict_push(hit(1.0, 1)) || !ctx.evict_push(hit(2.0, 2)));
        let p = prepare_round(&mut ctx, &mut KBuffer::new(4)).unwrap();
        assert_eq!(p, Preparation::Root { fallback: true });
        assert!(!ctx.replay() && !ctx.is_seen(3) && ctx.evicted().is_empty() && ctx.src().is_empty());
    }

    #[test]
    fn undrained_buffer_is_an_error() {
        let mut ctx = CheckpointContext::new();
        let mut kbuf = KBuffer::new(2);
        kbuf.insert(hit(1.0, 1)).unwrap();
        assert!(prepare_round(&mut ctx, &mut kbuf).is_err());
    }

    proptest! {
        #[test]
        fn seeding_takes_the_k_smallest(ts in prop::collection::vec(0.0f64..100.0, 0..40), k in 1usize..10) {
            let mut ctx = CheckpointContext::new();
            ctx.begin_round();
            let hits: Vec<HitRecord> = ts.iter().enumerate().map(|(i, &t)| hit(t, i as u32)).collect();
            for &h in &hits {
                ctx.evict_push(h);
            }
            let mut kbuf = KBuffer::new(k);
            prepare_round(&mut ctx, &mut kbuf).unwrap();
            let mut sorted = hits.clone();
            sorted.sort();
            let n = k.min(sorted.len());
            prop_assert_eq!(kbuf.entries(), &sorted[..n]);
            prop_assert_eq!(ctx.evicted().len(), sorted.len() - n);
        }
    }
}
