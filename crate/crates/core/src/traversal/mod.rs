//! Stack traversal with the k-buffer any-hit protocol.
//!
//! A round gathers the `k` closest hits whose key `(t, id)` lies after the
//! round's entry key. Every Gaussian has one canonical key per ray: the
//! distance at which the ray enters its cutoff ellipsoid (or leaves it, for
//! origins inside), independent of the round interval and of the structure
//! that found it. Proxy triangles only detect candidates.

mod kernels;

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::accel::{AccelStructure, Layout, Level, NodeRef};
use crate::checkpoint::CheckpointContext;
use crate::error::{Error, Result};
use crate::metrics::{FetchKey, TraversalCounters};
use crate::scene::Ray;

pub use kernels::{classify_box, ray_aabb, ray_triangle, ray_unit_sphere, transform_ray, BoxSpan, Interval};

pub const DEFAULT_STACK_LIMIT: usize = 96;
pub const DEFAULT_HIT_CAPACITY: usize = 4096;

const NO_INSTANCE: u32 = FetchKey::NO_INSTANCE;

/// A hit, ordered lexicographically by `(t, id)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HitRecord {
    pub t: f64,
    pub id: u32,
}

/// Hit records double as interval bounds.
pub type HitKey = HitRecord;

impl HitRecord {
    /// Lower bound of the first round; precedes every hit with `t > 0`.
    pub const ORIGIN: HitRecord = HitRecord { t: 0.0, id: u32::MAX };
    pub const UNBOUNDED: HitRecord = HitRecord {
        t: f64::INFINITY,
        id: u32::MAX,
    };

    pub fn new(t: f64, id: u32) -> Self {
        HitRecord { t, id }
    }
}

impl PartialEq for HitRecord {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HitRecord {}

impl PartialOrd for HitRecord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HitRecord {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t.total_cmp(&other.t).then(self.id.cmp(&other.id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    /// Keep traversing with the current `t_max`.
    Ignore,
    /// Report the hit: `t_max` shrinks to `new_t_max`.
    Accept { new_t_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnyHitVerdict {
    pub action: Action,
    pub rejected: Option<HitRecord>,
}

/// The `k` closest hits seen so far, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct KBuffer {
    capacity: usize,
    entries: Vec<HitRecord>,
}

impl KBuffer {
    /// Panics if `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "k-buffer capacity must be >= 1");
        KBuffer {
            capacity,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn entries(&self) -> &[HitRecord] {
        &self.entries
    }

    pub fn last(&self) -> Option<&HitRecord> {
        self.entries.last()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn drain(&mut self) -> std::vec::Drain<'_, HitRecord> {
        self.entries.drain(..)
    }

    /// The any-hit step: insertion sort plus rejection of whichever record
    /// falls off a full buffer.
    pub fn insert(&mut self, hit: HitRecord) -> Result<AnyHitVerdict> {
        if self.entries.iter().any(|e| e.id == hit.id) {
            return Err(Error::Invariant(format!("primitive {} delivered twice", hit.id)));
        }
        if self.is_full() {
            let last = self.entries[self.capacity - 1];
            if hit >= last {
                return Ok(AnyHitVerdict {
                    action: Action::Accept { new_t_max: hit.t },
                    rejected: Some(hit),
                });
            }
        }
        let at = self.entries.partition_point(|e| *e < hit);
        self.entries.insert(at, hit);
        let rejected = (self.entries.len() > self.capacity).then(|| self.entries.pop().unwrap());
        Ok(AnyHitVerdict {
            action: Action::Ignore,
            rejected,
        })
    }
}

pub fn kbuffer_insert(kbuf: &mut KBuffer, hit: HitRecord) -> Result<AnyHitVerdict> {
    kbuf.insert(hit)
}

/// How a proxy hit is turned into the Gaussian's key.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum HitKeyMode {
    /// Exact cutoff-ellipsoid entry distance; proxy false positives dropped.
    #[default]
    Ellipsoid,
    /// Nearest positive hit over all faces of the proxy (sphere entry for
    /// the unit-sphere BLAS).
    ProxySurface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceOptions {
    pub hit_key: HitKeyMode,
    pub stack_limit: usize,
    pub hit_capacity: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            hit_key: HitKeyMode::Ellipsoid,
            stack_limit: DEFAULT_STACK_LIMIT,
            hit_capacity: DEFAULT_HIT_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    /// Buffer size after the round.
    pub hits: usize,
    pub nodes_fetched: u64,
    /// Keys of accepted hits in order; each became the new `t_max`.
    pub accepts: Vec<HitRecord>,
    pub t_max: HitRecord,
}

#[derive(Debug, Clone, Copy)]
struct Item {
    node: NodeRef,
    instance: u32,
    entry: f64,
}

enum Sink<'a> {
    KBuf(&'a mut KBuffer),
    List(&'a mut Vec<HitRecord>, usize),
}

struct Engine<'a> {
    accel: &'a AccelStructure,
    layout: Layout,
    ray: &'a Ray,
    opts: &'a TraceOptions,
    entry: HitRecord,
    t_max: HitRecord,
    sink: Sink<'a>,
    counters: &'a mut TraversalCounters,
    ckpt: Option<&'a mut CheckpointContext>,
    resolved: HashSet<u32>,
    accepts: Vec<HitRecord>,
    fetched: u64,
    stack: Vec<Item>,
}

impl<'a> Engine<'a> {
    fn interval(&self) -> Interval {
        Interval {
            t_min: self.entry.t,
            t_max: self.t_max.t,
        }
    }

    fn local_ray(&self, instance: u32) -> Ray {
        transform_ray(self.ray, &self.accel.instances()[instance as usize].transform.local_from_world)
    }

    fn done(&self, id: u32) -> bool {
        self.resolved.contains(&id) || self.ckpt.as_ref().is_some_and(|c| c.is_seen(id))
    }

    /// Resolved for the rest of this ray (or round, without checkpointing).
    fn settle(&mut self, id: u32) {
        self.resolved.insert(id);
        if let Some(c) = self.ckpt.as_mut() {
            c.mark_seen(id);
        }
    }

    fn fetch(&mut self, node: NodeRef, instance: u32) {
        let (address, bytes) = self.layout.address(node);
        self.counters.record_fetch(FetchKey { node, instance }, address, bytes);
        self.fetched += 1;
    }

    fn defer(&mut self, node: NodeRef, instance: u32, t: f64) {
        if let Some(c) = self.ckpt.as_mut() {
            let leaf = if instance == NO_INSTANCE {
                NodeRef::SENTINEL
            } else {
                NodeRef::leaf(Level::Top, instance)
            };
            if c.checkpoint_push(node, leaf, t) {
                self.counters.checkpoints += 1;
            }
        }
    }

    fn push(&mut self, item: Item) -> Result<()> {
        if self.stack.len() >= self.opts.stack_limit {
            return Err(Error::StackOverflow {
                limit: self.opts.stack_limit,
            });
        }
        self.stack.push(item);
        Ok(())
    }

    /// Box-tests `node` and pushes, defers or drops it.
    fn enter(&mut self, node: NodeRef, instance: u32, ray: &Ray) -> Result<bool> {
        let bounds = self.accel.bounds_of(node)?;
        self.counters.box_tests += 1;
        match classify_box(ray, &bounds, self.interval()) {
            BoxSpan::Hit(t) => {
                self.push(Item { node, instance, entry: t })?;
                Ok(true)
            }
            BoxSpan::Beyond(t) => {
                self.defer(node, instance, t);
                Ok(false)
            }
            BoxSpan::Miss => Ok(false),
        }
    }

    fn run(&mut self) -> Result<()> {
        while let Some(item) = self.stack.pop() {
            if item.node.level() == Level::Bottom && self.done(item.instance) {
                continue;
            }
            if item.entry > self.t_max.t {
                self.defer(item.node, item.instance, item.entry);
                continue;
            }
            self.visit(item)?;
        }
        Ok(())
    }

    fn visit(&mut self, item: Item) -> Result<()> {
        let level = item.node.level();
        let index = item.node.index();
        self.fetch(item.node, item.instance);
        let accel = self.accel;
        let bvh = accel.bvh(level).ok_or(Error::StructureMismatch(item.node.0))?;

        if !item.node.is_leaf() {
            let ray = match level {
                Level::Top => *self.ray,
                Level::Bottom => self.local_ray(item.instance),
            };
            let interval = self.interval();
            let node = &bvh.nodes()[index as usize];
            let mut hits: Vec<(f64, usize, NodeRef)> = Vec::with_capacity(bvh.arity());
            for (slot, &child) in bvh.children(node).iter().enumerate() {
                self.counters.box_tests += 1;
                let r = NodeRef::from_child(level, child);
                match classify_box(&ray, &bvh.child_bounds(child), interval) {
                    BoxSpan::Miss => {}
                    BoxSpan::Beyond(t) => self.defer(r, item.instance, t),
                    BoxSpan::Hit(t) => hits.push((t, slot, r)),
                }
            }
            // far first, so the nearest child is popped next
            hits.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
            for (t, _, r) in hits {
                self.push(Item {
                    node: r,
                    instance: item.instance,
                    entry: t,
                })?;
            }
            return Ok(());
        }

        match (accel, level) {
            (AccelStructure::Monolithic(m), Level::Top) => {
                let g = m.gaussian_of_leaf(index);
                if self.done(g) {
                    return Ok(());
                }
                let [a, b, c] = &m.triangles[index as usize];
                self.counters.tri_tests += 1;
                if ray_triangle(self.ray, a, b, c, Interval::FORWARD).is_some() {
                    self.resolve_proxy(g, item.node, NO_INSTANCE)?;
                }
            }
            (AccelStructure::TwoLevel(_), Level::Top) => {
                if self.done(index) {
                    return Ok(());
                }
                let local = self.local_ray(index);
                self.enter(NodeRef::node(Level::Bottom, 0), index, &local)?;
            }
            (AccelStructure::TwoLevel(t), Level::Bottom) => {
                let inst = item.instance;
                let local = self.local_ray(inst);
                match &t.blas.mesh {
                    None => {
                        self.counters.sphere_tests += 1;
                        match ray_unit_sphere(&local, Interval::FORWARD) {
                            Some(th) => self.handle_key(inst, th, item.node, inst)?,
                            None => self.settle(inst),
                        }
                    }
                    Some(mesh) => {
                        let [a, b, c] = mesh.triangle(index as usize);
                        self.counters.tri_tests += 1;
                        if ray_triangle(&local, &a, &b, &c, Interval::FORWARD).is_some() {
                            self.resolve_proxy(inst, item.node, inst)?;
                        }
                    }
                }
            }
            (AccelStructure::Monolithic(_), Level::Bottom) => return Err(Error::StructureMismatch(item.node.0)),
        }
        Ok(())
    }

    /// A proxy face of Gaussian `g` was hit: compute its key.
    fn resolve_proxy(&mut self, g: u32, node: NodeRef, instance: u32) -> Result<()> {
        let local = self.local_ray(g);
        let t = match self.opts.hit_key {
            HitKeyMode::Ellipsoid => {
                self.counters.sphere_tests += 1;
                ray_unit_sphere(&local, Interval::FORWARD)
            }
            HitKeyMode::ProxySurface => {
                let faces: Vec<[nalgebra::Point3<f64>; 3]> = match self.accel {
                    AccelStructure::Monolithic(m) => {
                        let f = m.faces_per_gaussian();
                        m.triangles[g as usize * f..(g as usize + 1) * f].to_vec()
                    }
                    AccelStructure::TwoLevel(t) => {
                        let mesh = t.blas.mesh.as_ref().expect("triangle proxy");
                        (0..mesh.face_count()).map(|f| mesh.triangle(f)).collect()
                    }
                };
                let ray = match self.accel {
                    AccelStructure::Monolithic(_) => *self.ray,
                    AccelStructure::TwoLevel(_) => local,
                };
                self.counters.tri_tests += faces.len() as u64;
                faces
                    .iter()
                    .filter_map(|[a, b, c]| ray_triangle(&ray, a, b, c, Interval::FORWARD))
                    .min_by(f64::total_cmp)
            }
        };
        match t {
            Some(t) => self.handle_key(g, t, node, instance),
            None => {
                self.counters.proxy_false_positives += 1;
                self.settle(g);
                Ok(())
            }
        }
    }

    fn handle_key(&mut self, g: u32, t: f64, node: NodeRef, instance: u32) -> Result<()> {
        let key = HitRecord::new(t, g);
        if key <= self.entry {
            self.settle(g);
            return Ok(());
        }
        if key > self.t_max {
            self.resolved.insert(g);
            self.defer(node, instance, t);
            return Ok(());
        }
        self.settle(g);
        match &mut self.sink {
            Sink::List(list, cap) => {
                if list.len() >= *cap {
                    return Err(Error::HitCapacity { capacity: *cap });
                }
                list.push(key);
            }
            Sink::KBuf(kbuf) => {
                let verdict = kbuf.insert(key)?;
                if let Action::Accept { .. } = verdict.action {
                    self.t_max = key;
                    self.accepts.push(key);
                }
                if let (Some(r), Some(c)) = (verdict.rejected, self.ckpt.as_mut()) {
                    if c.evict_push(r) {
                        self.counters.evictions += 1;
                    }
                }
            }
        }
        Ok(())
    }

    fn replay(&mut self) -> Result<()> {
        loop {
            let Some(seed) = self.ckpt.as_mut().and_then(|c| c.next_seed()) else {
                return Ok(());
            };
            if !self.accel.contains_ref(seed.node) {
                return Err(Error::StructureMismatch(seed.node.0));
            }
            let instance = match seed.node.level() {
                Level::Top if seed.tlas_leaf.is_sentinel() => NO_INSTANCE,
                Level::Bottom
                    if seed.tlas_leaf.level() == Level::Top
                        && seed.tlas_leaf.is_leaf()
                        && matches!(self.accel, AccelStructure::TwoLevel(_))
                        && self.accel.contains_ref(seed.tlas_leaf) =>
                {
                    seed.tlas_leaf.index()
                }
                _ => return Err(Error::StructureMismatch(seed.tlas_leaf.0)),
            };
            if instance != NO_INSTANCE && self.done(instance) {
                continue;
            }
            self.counters.checkpoint_seeds += 1;
            let ray = if instance == NO_INSTANCE {
                *self.ray
            } else {
                self.local_ray(instance)
            };
            if self.enter(seed.node, instance, &ray)? {
                self.run()?;
            }
        }
    }
}

/// One traversal round over `(entry, ∞)`.
///
/// Without `ckpt` the round starts at the root. With it, the first round
/// starts at the root and later rounds replay the checkpointed seeds; nodes
/// beyond `t_max` are checkpointed and rejected hits evicted.
pub fn trace_round(
    accel: &AccelStructure,
    ray: &Ray,
    entry: HitRecord,
    kbuf: &mut KBuffer,
    counters: &mut TraversalCounters,
    mut ckpt: Option<&mut CheckpointContext>,
    opts: &TraceOptions,
) -> Result<RoundResult> {
    let replay = ckpt.as_ref().is_some_and(|c| c.replay());
    if let Some(c) = ckpt.as_mut() {
        c.begin_round();
    }
    let mut engine = Engine {
        accel,
        layout: accel.layout(),
        ray,
        opts,
        entry,
        t_max: HitRecord::UNBOUNDED,
        sink: Sink::KBuf(kbuf),
        counters,
        ckpt,
        resolved: HashSet::new(),
        accepts: Vec::new(),
        fetched: 0,
        stack: Vec::with_capacity(opts.stack_limit),
    };
    if replay {
        engine.replay()?;
    } else {
        engine.enter(NodeRef::node(Level::Top, 0), NO_INSTANCE, ray)?;
        engine.run()?;
    }
    let (accepts, t_max, fetched) = (engine.accepts, engine.t_max, engine.fetched);
    let Sink::KBuf(kbuf) = engine.sink else { unreachable!() };
    Ok(RoundResult {
        hits: kbuf.len(),
        nodes_fetched: fetched,
        accepts,
        t_max,
    })
}

/// Every hit of the ray in one traversal, sorted by key.
pub fn trace_single_round(
    accel: &AccelStructure,
    ray: &Ray,
    counters: &mut TraversalCounters,
    opts: &TraceOptions,
) -> Result<Vec<HitRecord>> {
    let mut list = Vec::new();
    let mut engine = Engine {
        accel,
        layout: accel.layout(),
        ray,
        opts,
        entry: HitRecord::ORIGIN,
        t_max: HitRecord::UNBOUNDED,
        sink: Sink::List(&mut list, opts.hit_capacity),
        counters,
        ckpt: None,
        resolved: HashSet::new(),
        accepts: Vec::new(),
        fetched: 0,
        stack: Vec::with_capacity(opts.stack_limit),
    };
    engine.enter(NodeRef::node(Level::Top, 0), NO_INSTANCE, ray)?;
    engine.run()?;
    list.sort();
    Ok(list)
}
