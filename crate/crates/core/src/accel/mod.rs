//! Acceleration structures over Gaussian proxies.
//!
//! Two families are built: a monolithic BVH whose leaves are the world-space
//! triangles of one proxy mesh per Gaussian, and a two-level structure whose
//! top level holds one instance leaf per Gaussian, all referencing a single
//! shared bottom-level structure in the unit-sphere frame.
//!
//! Triangle leaves are bounded by the box of their whole proxy, not by the
//! triangle alone. Hits are ordered by the ellipsoid entry distance, which
//! lies strictly inside the proxy, so a face-tight box could be culled by the
//! round interval even though the Gaussian's hit lies inside it.

mod aabb;
mod bvh;
mod cutoff;
mod mesh;

use nalgebra::{Matrix4, Point3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene::Scene;

pub use aabb::Aabb;
pub use bvh::{Bvh, BvhNode, Child, MAX_ARITY, MIN_ARITY};
pub use cutoff::{cutoff_radius, gaussian_aabb, world_from_local, CutoffPolicy, InstanceTransform};
pub use mesh::{icosahedron_mesh, ProxyMesh};

/// Bytes per child slot of an internal node: 6×f32 box, u32 child, u32 flags.
pub const SLOT_BYTES: u64 = 32;
/// Nine f32 vertex coordinates plus a u32 primitive id.
pub const TRIANGLE_LEAF_BYTES: u64 = 40;
/// One 3×4 f32 matrix, an 8-byte BLAS reference and an 8-byte instance id.
pub const INSTANCE_LEAF_BYTES: u64 = 64;
/// f32 center and radius.
pub const SPHERE_LEAF_BYTES: u64 = 16;

const MAGIC: &[u8; 8] = b"GSRTACC\0";
const FORMAT_VERSION: u32 = 1;
const HEADER_BYTES: u64 = 64;

const SLOT_VALID: u32 = 1;
const SLOT_LEAF: u32 = 2;

/// Which level of the structure a [`NodeRef`] points into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    /// The monolithic BVH or the TLAS.
    Top,
    Bottom,
}

/// Packed reference to an internal node or a leaf.
///
/// Bit 63 selects the bottom level, bit 62 marks a leaf, the low 32 bits hold
/// the index. `u64::MAX` is reserved as a sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef(pub u64);

impl NodeRef {
    pub const SENTINEL: NodeRef = NodeRef(u64::MAX);
    const BOTTOM_BIT: u64 = 1 << 63;
    const LEAF_BIT: u64 = 1 << 62;

    pub fn node(level: Level, index: u32) -> NodeRef {
        NodeRef(Self::level_bits(level) | index as u64)
    }

    pub fn leaf(level: Level, index: u32) -> NodeRef {
        NodeRef(Self::level_bits(level) | Self::LEAF_BIT | index as u64)
    }

    pub fn from_child(level: Level, child: Child) -> NodeRef {
        match child {
            Child::Node(i) => NodeRef::node(level, i),
            Child::Leaf(i) => NodeRef::leaf(level, i),
        }
    }

    fn level_bits(level: Level) -> u64 {
        match level {
            Level::Top => 0,
            Level::Bottom => Self::BOTTOM_BIT,
        }
    }

    pub fn is_sentinel(self) -> bool {
        self == Self::SENTINEL
    }

    pub fn level(self) -> Level {
        if self.0 & Self::BOTTOM_BIT != 0 {
            Level::Bottom
        } else {
            Level::Top
        }
    }

    pub fn is_leaf(self) -> bool {
        self.0 & Self::LEAF_BIT != 0
    }

    pub fn index(self) -> u32 {
        self.0 as u32
    }

    /// Rejects the sentinel and any bits outside the encoding.
    pub fn is_well_formed(self) -> bool {
        self.0 & !(Self::BOTTOM_BIT | Self::LEAF_BIT | u32::MAX as u64) == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BlasKind {
    UnitSphere,
    /// Icosahedron (0, 20 faces) or its first subdivision (1, 80 faces).
    Icosphere(u8),
}

impl BlasKind {
    pub fn label(&self) -> String {
        match self {
            BlasKind::UnitSphere => "sphere".into(),
            BlasKind::Icosphere(s) => format!("ico{}", 20 * 4usize.pow(*s as u32)),
        }
    }
}

/// The single bottom-level structure shared by every instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Blas {
    pub kind: BlasKind,
    pub bvh: Bvh,
    /// Triangle geometry for icosphere BLASes.
    pub mesh: Option<ProxyMesh>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Gaussian id; equals the TLAS leaf index.
    pub id: u32,
    pub kappa: f64,
    pub transform: InstanceTransform,
    pub bounds: Aabb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Monolithic {
    pub mesh: ProxyMesh,
    pub bvh: Bvh,
    /// World-space triangles; leaf `i` belongs to Gaussian `i / faces`.
    pub triangles: Vec<[Point3<f64>; 3]>,
    /// Per-Gaussian cutoff frame, used to resolve proxy hits exactly.
    pub instances: Vec<Instance>,
}

impl Monolithic {
    pub fn faces_per_gaussian(&self) -> usize {
        self.mesh.face_count()
    }

    pub fn gaussian_of_leaf(&self, leaf: u32) -> u32 {
        leaf / self.mesh.face_count() as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevel {
    pub tlas: Bvh,
    pub instances: Vec<Instance>,
    pub blas: Blas,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AccelStructure {
    Monolithic(Monolithic),
    TwoLevel(TwoLevel),
}

/// Region sizes and offsets of the serialized layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub top_nodes: u64,
    pub top_leaves: u64,
    pub bottom_nodes: u64,
    pub bottom_leaves: u64,
    top_node_bytes: u64,
    top_leaf_bytes: u64,
    bottom_node_bytes: u64,
    bottom_leaf_bytes: u64,
}

impl Layout {
    pub fn size_bytes(&self) -> u64 {
        self.top_nodes + self.top_leaves + self.bottom_nodes + self.bottom_leaves
    }

    /// Offset from the start of the serialized container and fetch size.
    pub fn address(&self, r: NodeRef) -> (u64, u64) {
        let (base, stride) = match (r.level(), r.is_leaf()) {
            (Level::Top, false) => (0, self.top_node_bytes),
            (Level::Top, true) => (self.top_nodes, self.top_leaf_bytes),
            (Level::Bottom, false) => (self.top_nodes + self.top_leaves, self.bottom_node_bytes),
            (Level::Bottom, true) => (self.top_nodes + self.top_leaves + self.bottom_nodes, self.bottom_leaf_bytes),
        };
        (HEADER_BYTES + base + r.index() as u64 * stride, stride)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlasStats {
    pub kind: String,
    pub node_count: usize,
    pub leaf_count: usize,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AsStats {
    pub variant: &'static str,
    pub arity: usize,
    pub primitives: usize,
    /// Internal nodes plus leaves over both levels.
    pub node_count: usize,
    /// Edges from the root to the deepest leaf; an instance leaf's link to
    /// the BLAS root counts as one edge.
    pub height: usize,
    pub size_bytes: u64,
    pub blas: Option<BlasStats>,
}

fn check_inputs(scene: &Scene, policy: CutoffPolicy, arity: usize) -> Result<()> {
    if scene.is_empty() {
        return Err(Error::InvalidArgument("cannot build over an empty scene".into()));
    }
    if !(MIN_ARITY..=MAX_ARITY).contains(&arity) {
        return Err(Error::InvalidArgument(format!("arity {arity} outside {MIN_ARITY}..={MAX_ARITY}")));
    }
    policy.validate()
}

fn instances(scene: &Scene, policy: CutoffPolicy, mesh: Option<&ProxyMesh>) -> Result<Vec<Instance>> {
    scene
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let kappa = cutoff_radius(g, policy);
            let transform = world_from_local(g, kappa)?;
            let bounds = match mesh {
                None => gaussian_aabb(g, kappa),
                Some(m) => Aabb::from_points(&m.vertices.iter().map(|v| transform.to_world(v)).collect::<Vec<_>>()),
            };
            Ok(Instance {
                id: i as u32,
                kappa,
                transform,
                bounds,
            })
        })
        .collect()
}

/// One BVH over every proxy triangle of every Gaussian.
pub fn build_monolithic(scene: &Scene, mesh: &ProxyMesh, policy: CutoffPolicy, arity: usize) -> Result<AccelStructure> {
    check_inputs(scene, policy, arity)?;
    let instances = instances(scene, policy, Some(mesh))?;
    let faces = mesh.face_count();
    let mut triangles = Vec::with_capacity(instances.len() * faces);
    let mut leaf_bounds = Vec::with_capacity(instances.len() * faces);
    for inst in &instances {
        for f in 0..faces {
            triangles.push(mesh.triangle(f).map(|v| inst.transform.to_world(&v)));
            leaf_bounds.push(inst.bounds);
        }
    }
    Ok(AccelStructure::Monolithic(Monolithic {
        mesh: mesh.clone(),
        bvh: Bvh::build(leaf_bounds, arity),
        triangles,
        instances,
    }))
}

/// A TLAS of per-Gaussian instances over one shared BLAS.
pub fn build_two_level(scene: &Scene, kind: BlasKind, policy: CutoffPolicy, arity: usize) -> Result<AccelStructure> {
    check_inputs(scene, policy, arity)?;
    let blas = match kind {
        BlasKind::UnitSphere => Blas {
            kind,
            bvh: Bvh::build(vec![unit_box()], arity),
            mesh: None,
        },
        BlasKind::Icosphere(subdiv) => {
            let mesh = icosahedron_mesh(subdiv)?;
            let r = mesh.circumradius();
            let b = Aabb::from_points(&mesh.vertices);
            debug_assert!(b.contains(&Aabb::from_center_half_extents(Point3::origin(), Vector3::repeat(1.0))));
            debug_assert!(r > 1.0);
            Blas {
                kind,
                bvh: Bvh::build(vec![b; mesh.face_count()], arity),
                mesh: Some(mesh),
            }
        }
    };
    let instances = instances(scene, policy, blas.mesh.as_ref())?;
    let tlas = Bvh::build(instances.iter().map(|i| i.bounds).collect(), arity);
    Ok(AccelStructure::TwoLevel(TwoLevel { tlas, instances, blas }))
}

fn unit_box() -> Aabb {
    Aabb::from_center_half_extents(Point3::origin(), Vector3::repeat(1.0))
}

impl AccelStructure {
    pub fn arity(&self) -> usize {
        self.top().arity()
    }

    /// The monolithic BVH or the TLAS.
    pub fn top(&self) -> &Bvh {
        match self {
            AccelStructure::Monolithic(m) => &m.bvh,
            AccelStructure::TwoLevel(t) => &t.tlas,
        }
    }

    pub fn bottom(&self) -> Option<&Bvh> {
        match self {
            AccelStructure::Monolithic(_) => None,
            AccelStructure::TwoLevel(t) => Some(&t.blas.bvh),
        }
    }

    pub fn instances(&self) -> &[Instance] {
        match self {
            AccelStructure::Monolithic(m) => &m.instances,
            AccelStructure::TwoLevel(t) => &t.instances,
        }
    }

    pub fn primitive_count(&self) -> usize {
        self.instances().len()
    }

    pub fn bvh(&self, level: Level) -> Option<&Bvh> {
        match level {
            Level::Top => Some(self.top()),
            Level::Bottom => self.bottom(),
        }
    }

    /// True if `r` names a node or leaf that exists in this structure.
    pub fn contains_ref(&self, r: NodeRef) -> bool {
        if !r.is_well_formed() {
            return false;
        }
        match self.bvh(r.level()) {
            None => false,
            Some(b) if r.is_leaf() => (r.index() as usize) < b.leaf_count(),
            Some(b) => (r.index() as usize) < b.node_count(),
        }
    }

    /// Bounds of a node or leaf in its own level's frame.
    pub fn bounds_of(&self, r: NodeRef) -> Result<Aabb> {
        if !self.contains_ref(r) {
            return Err(Error::StructureMismatch(r.0));
        }
        let bvh = self.bvh(r.level()).expect("checked by contains_ref");
        Ok(if r.is_leaf() {
            *bvh.leaf_bounds(r.index()).expect("checked by contains_ref")
        } else {
            bvh.nodes()[r.index() as usize].bounds
        })
    }

    pub fn layout(&self) -> Layout {
        let top = self.top();
        let node_bytes = top.arity() as u64 * SLOT_BYTES;
        match self {
            AccelStructure::Monolithic(_) => Layout {
                top_nodes: top.node_count() as u64 * node_bytes,
                top_leaves: top.leaf_count() as u64 * TRIANGLE_LEAF_BYTES,
                bottom_nodes: 0,
                bottom_leaves: 0,
                top_node_bytes: node_bytes,
                top_leaf_bytes: TRIANGLE_LEAF_BYTES,
                bottom_node_bytes: 0,
                bottom_leaf_bytes: 0,
            },
            AccelStructure::TwoLevel(t) => {
                let blas_leaf = match t.blas.kind {
                    BlasKind::UnitSphere => SPHERE_LEAF_BYTES,
                    BlasKind::Icosphere(_) => TRIANGLE_LEAF_BYTES,
                };
                let blas_node = t.blas.bvh.arity() as u64 * SLOT_BYTES;
                Layout {
                    top_nodes: top.node_count() as u64 * node_bytes,
                    top_leaves: top.leaf_count() as u64 * INSTANCE_LEAF_BYTES,
                    bottom_nodes: t.blas.bvh.node_count() as u64 * blas_node,
                    bottom_leaves: t.blas.bvh.leaf_count() as u64 * blas_leaf,
                    top_node_bytes: node_bytes,
                    top_leaf_bytes: INSTANCE_LEAF_BYTES,
                    bottom_node_bytes: blas_node,
                    bottom_leaf_bytes: blas_leaf,
                }
            }
        }
    }

    pub fn stats(&self) -> AsStats {
        let top = self.top();
        let layout = self.layout();
        match self {
            AccelStructure::Monolithic(_) => AsStats {
                variant: "monolithic",
                arity: top.arity(),
                primitives: self.primitive_count(),
                node_count: top.node_count() + top.leaf_count(),
                height: top.height(),
                size_bytes: layout.size_bytes(),
                blas: None,
            },
            AccelStructure::TwoLevel(t) => {
                let b = &t.blas.bvh;
                AsStats {
                    variant: "two-level",
                    arity: top.arity(),
                    primitives: self.primitive_count(),
                    node_count: top.node_count() + top.leaf_count() + b.node_count() + b.leaf_count(),
                    height: top.height() + 1 + b.height(),
                    size_bytes: layout.size_bytes(),
                    blas: Some(BlasStats {
                        kind: t.blas.kind.label(),
                        node_count: b.node_count() + b.leaf_count(),
                        leaf_count: b.leaf_count(),
                        size_bytes: layout.bottom_nodes + layout.bottom_leaves,
                    }),
                }
            }
        }
    }

    /// Versioned little-endian container: a 64-byte header followed by the
    /// node and leaf regions in [`Layout`] order. Boxes are rounded outward
    /// to f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let layout = self.layout();
        let mut out = Vec::with_capacity((HEADER_BYTES + layout.size_bytes()) as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let (variant, blas_kind, blas_subdiv) = match self {
            AccelStructure::Monolithic(m) => (0u32, 0u32, m.mesh.face_count() as u32),
            AccelStructure::TwoLevel(t) => match t.blas.kind {
                BlasKind::UnitSphere => (1, 0, 0),
                BlasKind::Icosphere(s) => (1, 1, s as u32),
            },
        };
        for v in [variant, self.arity() as u32, blas_kind, blas_subdiv] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [layout.top_nodes, layout.top_leaves, layout.bottom_nodes, layout.bottom_leaves] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.resize(HEADER_BYTES as usize, 0);

        write_nodes(&mut out, self.top());
        match self {
            AccelStructure::Monolithic(m) => {
                for (i, tri) in m.triangles.iter().enumerate() {
                    write_triangle(&mut out, tri, m.gaussian_of_leaf(i as u32));
                }
            }
            AccelStructure::TwoLevel(t) => {
                let blas_root = layout.address(NodeRef::node(Level::Bottom, 0)).0;
                for inst in &t.instances {
                    let m = inst.transform.world_from_local;
                    for r in 0..3 {
                        for c in 0..4 {
                            out.extend_from_slice(&(m[(r, c)] as f32).to_le_bytes());
                        }
                    }
                    out.extend_from_slice(&blas_root.to_le_bytes());
                    out.extend_from_slice(&(inst.id as u64).to_le_bytes());
                }
                write_nodes(&mut out, &t.blas.bvh);
                match &t.blas.mesh {
                    None => {
                        for v in [0.0f32, 0.0, 0.0, 1.0] {
                            out.extend_from_slice(&v.to_le_bytes());
                        }
                    }
                    Some(mesh) => {
                        for f in 0..mesh.face_count() {
                            write_triangle(&mut out, &mesh.triangle(f), f as u32);
                        }
                    }
                }
            }
        }
        debug_assert_eq!(out.len() as u64, HEADER_BYTES + layout.size_bytes());
        out
    }
}

fn round_down(x: f64) -> f32 {
    let f = x as f32;
    if f as f64 > x {
        f.next_down()
    } else {
        f
    }
}

fn round_up(x: f64) -> f32 {
    let f = x as f32;
    if (f as f64) < x {
        f.next_up()
    } else {
        f
    }
}

fn write_nodes(out: &mut Vec<u8>, bvh: &Bvh) {
    for node in bvh.nodes() {
        let children = bvh.children(node);
        for slot in 0..bvh.arity() {
            let Some(&child) = children.get(slot) else {
                out.extend_from_slice(&[0u8; SLOT_BYTES as usize]);
                continue;
            };
            let b = bvh.child_bounds(child);
            for i in 0..3 {
                out.extend_from_slice(&round_down(b.min[i]).to_le_bytes());
            }
            for i in 0..3 {
                out.extend_from_slice(&round_up(b.max[i]).to_le_bytes());
            }
            let (index, flags) = match child {
                Child::Node(i) => (i, SLOT_VALID),
                Child::Leaf(i) => (i, SLOT_VALID | SLOT_LEAF),
            };
            out.extend_from_slice(&index.to_le_bytes());
            out.extend_from_slice(&flags.to_le_bytes());
        }
    }
}

fn write_triangle(out: &mut Vec<u8>, tri: &[Point3<f64>; 3], id: u32) {
    for v in tri {
        for i in 0..3 {
            out.extend_from_slice(&(v[i] as f32).to_le_bytes());
        }
    }
    out.extend_from_slice(&id.to_le_bytes());
}

/// The identity check used by tests and callers that hold raw matrices.
pub fn is_inverse_pair(a: &Matrix4<f64>, b: &Matrix4<f64>, tol: f64) -> bool {
    (a * b - Matrix4::identity()).amax() <= tol
}
