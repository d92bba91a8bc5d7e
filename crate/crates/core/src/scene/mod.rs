//! Gaussian scene model and the per-Gaussian math used during rendering.
//!
//! A [`Gaussian`] is stored with activated parameters: unit quaternion,
//! positive per-axis standard deviations and an opacity in `(0, 1]`.
//! Primitive ids are indices into [`Scene::gaussians`].

mod ply;
pub mod sh;
mod synthetic;

use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub use ply::{load_ply, load_ply_with, save_ply, Activation};
pub use sh::eval_sh_color;
pub use synthetic::{generate_synthetic, SyntheticParams};

/// Smallest admissible per-axis scale.
pub const MIN_SCALE: f64 = 1e-8;

/// Denominators of `max_response_t` below this are treated as degenerate.
const DEGENERATE_DENOMINATOR: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Point3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vector3<f64>,
    pub opacity: f64,
    /// Coefficient-major SH table, `(degree + 1)^2` RGB triples.
    pub sh: Vec<[f64; 3]>,
}

impl Gaussian {
    /// Builds a Gaussian, checking scale, opacity and SH length.
    pub fn new(
        mean: Point3<f64>,
        rotation: UnitQuaternion<f64>,
        scale: Vector3<f64>,
        opacity: f64,
        sh: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let g = Gaussian {
            mean,
            rotation,
            scale,
            opacity,
            sh,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean.coords.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.opacity.is_finite())
        {
            return Err(Error::InvalidArgument("non-finite gaussian parameter".into()));
        }
        if self.scale.iter().any(|&s| s < MIN_SCALE) {
            return Err(Error::Degenerate(format!(
                "scale {:?} has a component below {MIN_SCALE:e}",
                self.scale.as_slice()
            )));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "opacity {} outside (0, 1]",
                self.opacity
            )));
        }
        if sh::degree_for_len(self.sh.len()).is_none() {
            return Err(Error::Shape(format!(
                "{} SH coefficients is not (d+1)^2 for d in 0..=3",
                self.sh.len()
            )));
        }
        Ok(())
    }

    pub fn sh_degree(&self) -> usize {
        sh::degree_for_len(self.sh.len()).unwrap_or(0)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `R · S · Sᵀ · Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }

    /// `R · S⁻² · Rᵀ`, formed from the factors rather than by inversion.
    pub fn inverse_covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let inv_s2 = Matrix3::from_diagonal(&self.scale.map(|s| 1.0 / (s * s)));
        r * inv_s2 * r.transpose()
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis_sq(&self, x: &Point3<f64>) -> f64 {
        let local = self.rotation.inverse_transform_vector(&(x - self.mean));
        local.component_div(&self.scale).norm_squared()
    }
}

/// `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
pub fn gaussian_response(g: &Gaussian, x: &Point3<f64>) -> f64 {
    let d = x - g.mean;
    let q = d.dot(&(g.inverse_covariance() * d));
    (-0.5 * q).exp()
}

/// Ray parameter at which the Gaussian's response along the ray peaks.
pub fn max_response_t(g: &Gaussian, ray: &Ray) -> Result<f64> {
    let inv = g.inverse_covariance();
    let inv_d = inv * ray.direction;
    let denom = ray.direction.dot(&inv_d);
    if !(denom.abs() >= DEGENERATE_DENOMINATOR) {
        return Err(Error::Degenerate(format!(
            "ray direction gives denominator {denom:e}"
        )));
    }
    Ok((g.mean - ray.origin).dot(&inv_d) / denom)
}

/// Opacity times the peak response along the ray.
pub fn particle_alpha(g: &Gaussian, ray: &Ray) -> Result<f64> {
    let t = max_response_t(g, ray)?;
    Ok(g.opacity * gaussian_response(g, &ray.at(t)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Self {
        Ray { origin, direction }
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Scene { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Gaussian> {
        self.gaussians.get(id as usize)
    }

    /// Highest SH degree carried by any Gaussian.
    pub fn sh_degree(&self) -> usize {
        self.gaussians.iter().map(Gaussian::sh_degree).max().unwrap_or(0)
    }
}
