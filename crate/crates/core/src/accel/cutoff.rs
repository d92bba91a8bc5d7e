//! Bounding ellipsoids of Gaussians and their instance transforms.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::Aabb;
use crate::error::{Error, Result};
use crate::scene::{Gaussian, MIN_SCALE};

const ADAPTIVE_MIN: f64 = 0.5;
const ADAPTIVE_MAX: f64 = 4.0;

/// Mahalanobis radius at which a Gaussian is truncated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CutoffPolicy {
    Fixed(f64),
    /// Radius where `o · exp(-κ²/2)` falls to the given alpha.
    Adaptive(f64),
}

impl Default for CutoffPolicy {
    fn default() -> Self {
        CutoffPolicy::Fixed(3.0)
    }
}

impl CutoffPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CutoffPolicy::Fixed(k) if !(k > 0.0 && k.is_finite()) => {
                Err(Error::InvalidArgument(format!("fixed cutoff {k} must be positive")))
            }
            CutoffPolicy::Adaptive(a) if !(a > 0.0 && a < 1.0) => {
                Err(Error::InvalidArgument(format!("adaptive alpha {a} must be in (0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

pub fn cutoff_radius(g: &Gaussian, policy: CutoffPolicy) -> f64 {
    match policy {
        CutoffPolicy::Fixed(k) => k,
        CutoffPolicy::Adaptive(alpha_min) => {
            if g.opacity <= alpha_min {
                return ADAPTIVE_MIN;
            }
            (2.0 * (g.opacity / alpha_min).ln())
                .sqrt()
                .clamp(ADAPTIVE_MIN, ADAPTIVE_MAX)
        }
    }
}

/// Affine pair mapping the unit ball onto a Gaussian's cutoff ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceTransform {
    pub world_from_local: Matrix4<f64>,
    pub local_from_world: Matrix4<f64>,
}

impl InstanceTransform {
    pub fn to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        self.world_from_local.transform_point(p)
    }

    pub fn to_local(&self, p: &Point3<f64>) -> Point3<f64> {
        self.local_from_world.transform_point(p)
    }

    pub fn vector_to_local(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.local_from_world.transform_vector(v)
    }
}

/// `Translate(μ) · Rot(q) · Scale(κ·s)` and its inverse, built from the factors.
pub fn world_from_local(g: &Gaussian, kappa: f64) -> Result<InstanceTransform> {
    let axes = g.scale * kappa;
    if axes.iter().any(|&a| !(a >= MIN_SCALE) || !a.is_finite()) {
        return Err(Error::Degenerate(format!(
            "instance axes {:?} are singular",
            axes.as_slice()
        )));
    }
    let r = g.rotation_matrix();
    let linear = r * Matrix3::from_diagonal(&axes);
    let inv_linear = Matrix3::from_diagonal(&axes.map(|a| 1.0 / a)) * r.transpose();
    let t = g.mean.coords;

    let mut fwd = linear.to_homogeneous();
    fwd.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    let mut inv = inv_linear.to_homogeneous();
    inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(inv_linear * t)));
    Ok(InstanceTransform {
        world_from_local: fwd,
        local_from_world: inv,
    })
}

/// Tight world AABB of the cutoff ellipsoid.
pub fn gaussian_aabb(g: &Gaussian, kappa: f64) -> Aabb {
    let cov = g.covariance();
    let half = Vector3::new(cov[(0, 0)], cov[(1, 1)], cov[(2, 2)]).map(|v| kappa * v.sqrt());
    Aabb::from_center_half_extents(g.mean, half)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Quaternion, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(mean: Point3<f64>, scale: Vector3<f64>, opacity: f64) -> Gaussian {
        Gaussian::new(mean, UnitQuaternion::identity(), scale, opacity, vec![[0.0; 3]]).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng) -> Gaussian {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        Gaussian::new(
            Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
            UnitQuaternion::from_quaternion(q),
            Vector3::new(rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0)),
            rng.gen_range(0.05..1.0),
            vec![[0.0; 3]],
        )
        .unwrap()
    }

    #[test]
    fn cutoff_policies() {
        let g = gaussian(Point3::origin(), Vector3::repeat(1.0), 1.0);
        assert_eq!(cutoff_radius(&g, CutoffPolicy::Fixed(3.0)), 3.0);
        let k = cutoff_radius(&g, CutoffPolicy::Adaptive(1.0 / 255.0));
        let independent = (2.0f64 * 255f64.ln()).sqrt();
        assert!((k - independent).abs() < 1e-12);
        assert!((k - 3.3290).abs() < 1e-4);

        let faint = gaussian(Point3::origin(), Vector3::repeat(1.0), 1.0 / 255.0);
        assert_eq!(cutoff_radius(&faint, CutoffPolicy::Adaptive(1.0 / 255.0)), 0.5);
        let fainter = gaussian(Point3::origin(), Vector3::repeat(1.0), 1.0 / 512.0);
        assert_eq!(cutoff_radius(&fainter, CutoffPolicy::Adaptive(1.0 / 255.0)), 0.5);

        assert!(CutoffPolicy::Fixed(0.0).validate().is_err());
        assert!(CutoffPolicy::Adaptive(1.0).validate().is_err());
        assert!(CutoffPolicy::Adaptive(0.01).validate().is_ok());
    }

    #[test]
    fn identity_and_axis_stretch() {
        let g = gaussian(Point3::origin(), Vector3::repeat(1.0), 1.0);
        let m = world_from_local(&g, 1.0).unwrap();
        assert_relative_eq!(m.world_from_local, Matrix4::identity(), epsilon = 1e-15);

        let g = gaussian(Point3::new(1.0, 2.0, 3.0), Vector3::new(2.0, 1.0, 1.0), 1.0);
        let m = world_from_local(&g, 1.0).unwrap();
        assert_relative_eq!(m.to_world(&Point3::new(1.0, 0.0, 0.0)), Point3::new(3.0, 2.0, 3.0), epsilon = 1e-15);
    }

    #[test]
    fn unit_sphere_maps_to_cutoff_ellipsoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let g = random(&mut rng);
            let kappa = rng.gen_range(0.5..4.0);
            let m = world_from_local(&g, kappa).unwrap();
            assert_relative_eq!(m.world_from_local * m.local_from_world, Matrix4::identity(), epsilon = 1e-5);
            for _ in 0..64 {
                let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if v.norm() < 1e-3 {
                    continue;
                }
                let p = m.to_world(&Point3::from(v.normalize()));
                // quadric (p-μ)ᵀ Σ⁻¹ (p-μ) via the dense inverse
                let inv = g.covariance().try_inverse().unwrap();
                let d = p - g.mean;
                let r = d.dot(&(inv * d)).sqrt();
                assert!((r - kappa).abs() < 1e-6, "{r} vs {kappa}");
            }
        }
    }

    #[test]
    fn aabb_axis_aligned_and_isotropic() {
        let g = gaussian(Point3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 1.0, 1.0), 1.0);
        let b = gaussian_aabb(&g, 3.0);
        assert_relative_eq!(b.extent() / 2.0, Vector3::new(6.0, 3.0, 3.0), epsilon = 1e-12);
        let g = gaussian(Point3::new(1.0, 2.0, 3.0), Vector3::repeat(0.5), 1.0);
        let b = gaussian_aabb(&g, 2.0);
        assert_relative_eq!(b.min, Point3::new(0.0, 1.0, 2.0), epsilon = 1e-12);
        assert_relative_eq!(b.max, Point3::new(2.0, 3.0, 4.0), epsilon = 1e-12);
    }

    #[test]
    fn aabb_is_tight_against_surface_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let g = random(&mut rng);
            let m = world_from_local(&g, 1.5).unwrap();
            let b = gaussian_aabb(&g, 1.5);
            let mut sampled = Aabb::empty();
            // Fibonacci sphere, 10k points
            let n = 10_000;
            for i in 0..n {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = i as f64 * std::f64::consts::PI * (3.0 - 5f64.sqrt());
                let p = m.to_world(&Point3::new(r * phi.cos(), r * phi.sin(), z));
                assert!(b.inflate(1e-9).contains_point(&p));
                sampled = sampled.grow(&p);
            }
            for i in 0..3 {
                assert!(sampled.min[i] - b.min[i] < 1e-3);
                assert!(b.max[i] - sampled.max[i] < 1e-3);
            }
        }
    }
}
