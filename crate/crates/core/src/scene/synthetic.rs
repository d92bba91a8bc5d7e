use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

use super::sh::coefficient_count;
use super::{Gaussian, Scene};
use crate::accel::Aabb;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SyntheticParams {
    pub count: usize,
    pub seed: u64,
    pub bounds: Aabb,
    /// Per-axis standard deviations are drawn uniformly from `lo..=hi`.
    pub scale_range: (f64, f64),
    pub sh_degree: usize,
}

impl SyntheticParams {
    pub fn new(count: usize, seed: u64) -> Self {
        SyntheticParams {
            count,
            seed,
            bounds: Aabb::new(Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0)),
            scale_range: (0.02, 0.08),
            sh_degree: 0,
        }
    }

    pub fn with_bounds(mut self, bounds: Aabb) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_scale_range(mut self, lo: f64, hi: f64) -> Self {
        self.scale_range = (lo, hi);
        self
    }

    pub fn with_sh_degree(mut self, degree: usize) -> Self {
        self.sh_degree = degree;
        self
    }
}

/// Seeded random scene. Each Gaussian consumes a fixed number of draws, so
/// scenes with the same seed share a prefix regardless of `count`.
pub fn generate_synthetic(params: &SyntheticParams) -> Result<Scene> {
    let (lo, hi) = params.scale_range;
    if params.count == 0 {
        return Err(Error::InvalidArgument("synthetic count must be >= 1".into()));
    }
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::InvalidArgument(format!("bad scale range ({lo}, {hi})")));
    }
    if params.sh_degree > super::sh::MAX_DEGREE {
        return Err(Error::InvalidArgument(format!("SH degree {} > 3", params.sh_degree)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (bmin, bmax) = (params.bounds.min, params.bounds.max);
    let n_sh = coefficient_count(params.sh_degree);
    let mut gaussians = Vec::with_capacity(params.count);
    for _ in 0..params.count {
        let mean = Point3::new(
            lerp(bmin.x, bmax.x, rng.gen()),
            lerp(bmin.y, bmax.y, rng.gen()),
            lerp(bmin.z, bmax.z, rng.gen()),
        );
        // Shoemake's uniform quaternion.
        let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let q = Quaternion::new(b * (TAU * u3).cos(), a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin());
        let rotation = UnitQuaternion::from_quaternion(q);
        let scale = Vector3::new(
            lerp(lo, hi, rng.gen()),
            lerp(lo, hi, rng.gen()),
            lerp(lo, hi, rng.gen()),
        );
        let opacity = lerp(0.2, 1.0, rng.gen());
        let mut sh = Vec::with_capacity(n_sh);
        sh.push([rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)]);
        for _ in 1..n_sh {
            sh.push([rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)]);
        }
        gaussians.push(Gaussian::new(mean, rotation, scale, opacity, sh)?);
    }
    Ok(Scene::new(gaussians))
}

fn lerp(a: f64, b: f64, u: f64) -> f64 {
    a + (b - a) * u
}
