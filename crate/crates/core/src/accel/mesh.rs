//! Icosahedral proxy meshes circumscribing the unit sphere.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::Aabb;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyMesh {
    pub vertices: Vec<Point3<f64>>,
    /// Counter-clockwise seen from outside.
    pub faces: Vec<[u32; 3]>,
}

impl ProxyMesh {
    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, f: usize) -> [Point3<f64>; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    pub fn triangle_bounds(&self, f: usize) -> Aabb {
        Aabb::from_points(&self.triangle(f))
    }

    pub fn edge_count(&self) -> usize {
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// Outward unit normal and origin distance of a face's plane.
    pub fn face_plane(&self, f: usize) -> (Vector3<f64>, f64) {
        let [a, b, c] = self.triangle(f);
        let n = (b - a).cross(&(c - a)).normalize();
        (n, n.dot(&a.coords))
    }

    /// Largest vertex distance from the origin.
    pub fn circumradius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| v.coords.norm())
            .fold(0.0, f64::max)
    }

    fn inradius(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| self.face_plane(f).1)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Regular icosahedron (`subdiv = 0`, 20 faces) or its one-step 1-to-4
/// subdivision with vertices pushed onto a sphere (`subdiv = 1`, 80 faces),
/// scaled so the nearest face plane sits at distance 1 from the origin.
pub fn icosahedron_mesh(subdiv: u8) -> Result<ProxyMesh> {
    if subdiv > 1 {
        return Err(Error::InvalidArgument(format!("icosphere subdivision {subdiv} not in {{0, 1}}")));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Point3::from(Vector3::new(x, y, z).normalize()))
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    if subdiv == 1 {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Point3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = (vertices[a as usize].coords + vertices[b as usize].coords).normalize();
                vertices.push(Point3::from(m));
                (vertices.len() - 1) as u32
            })
        };
        let mut refined = Vec::with_capacity(80);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            refined.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = refined;
    }

    let mut mesh = ProxyMesh { vertices, faces };
    let r = mesh.inradius();
    for v in &mut mesh.vertices {
        *v = Point3::from(v.coords / r);
    }
    Ok(mesh)
}
