use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Ray;

/// Pinhole camera. Image x grows along `right`, image y grows along `-up`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub position: Point3<f64>,
    pub look_at: Point3<f64>,
    pub up: Vector3<f64>,
    pub fov_y_deg: f64,
    pub width: u32,
    pub height: u32,
    forward: Vector3<f64>,
    right: Vector3<f64>,
    true_up: Vector3<f64>,
}

impl Camera {
    pub fn look_at(
        position: Point3<f64>,
        look_at: Point3<f64>,
        up: Vector3<f64>,
        fov_y_deg: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if !(fov_y_deg > 0.0 && fov_y_deg < 180.0) {
            return Err(Error::InvalidArgument(format!("fov {fov_y_deg} outside (0, 180)")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("resolution {width}x{height}")));
        }
        let forward = (look_at - position)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("camera position equals look-at point".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("up vector parallel to view direction".into()))?;
        let true_up = right.cross(&forward);
        Ok(Camera {
            position,
            look_at,
            up,
            fov_y_deg,
            width,
            height,
            forward,
            right,
            true_up,
        })
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.forward
    }

    /// Ray through the center of pixel `(px, py)`.
    pub fn generate_ray(&self, px: u32, py: u32) -> Ray {
        self.generate_ray_at(px as f64 + 0.5, py as f64 + 0.5)
    }

    /// Ray through continuous image coordinates; `(0, 0)` is the top-left
    /// corner of the image plane.
    pub fn generate_ray_at(&self, x: f64, y: f64) -> Ray {
        let tan_half = (self.fov_y_deg.to_radians() * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let u = (2.0 * x / self.width as f64 - 1.0) * tan_half * aspect;
        let v = (1.0 - 2.0 * y / self.height as f64) * tan_half;
        let dir = (self.forward + self.right * u + self.true_up * v).normalize();
        Ray::new(self.position, dir)
    }

    /// Parses `pos=x,y,z,look=x,y,z,fov=deg,res=WxH[,up=x,y,z]`.
    pub fn parse_inline(spec: &str) -> Result<Self> {
        let mut fields: Vec<(String, Vec<String>)> = Vec::new();
        for tok in spec.split(',').map(str::trim) {
            match tok.split_once('=') {
                Some((k, v)) => fields.push((k.trim().to_string(), vec![v.trim().to_string()])),
                None => match fields.last_mut() {
                    Some((_, vals)) => vals.push(tok.to_string()),
                    None => return Err(bad_cam(spec, "expected key=value")),
                },
            }
        }
        let get = |key: &str| fields.iter().find(|(k, _)| k == key).map(|(_, v)| v);
        let vec3 = |key: &str| -> Result<Option<[f64; 3]>> {
            let Some(v) = get(key) else { return Ok(None) };
            let nums: Vec<f64> = v
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad_cam(spec, key))?;
            <[f64; 3]>::try_from(nums).map(Some).map_err(|_| bad_cam(spec, key))
        };
        for (k, _) in &fields {
            if !["pos", "look", "up", "fov", "res"].contains(&k.as_str()) {
                return Err(bad_cam(spec, &format!("unknown key {k}")));
            }
        }
        let pos = vec3("pos")?.ok_or_else(|| bad_cam(spec, "missing pos"))?;
        let look = vec3("look")?.ok_or_else(|| bad_cam(spec, "missing look"))?;
        let up = vec3("up")?.unwrap_or([0.0, 1.0, 0.0]);
        let fov = match get("fov").map(|v| v.as_slice()) {
            Some([f]) => f.parse::<f64>().map_err(|_| bad_cam(spec, "fov"))?,
            _ => return Err(bad_cam(spec, "fov")),
        };
        let (w, h) = match get("res").map(|v| v.as_slice()) {
            Some([r]) => {
                let (w, h) = r.split_once('x').ok_or_else(|| bad_cam(spec, "res"))?;
                (
                    w.parse::<u32>().map_err(|_| bad_cam(spec, "res"))?,
                    h.parse::<u32>().map_err(|_| bad_cam(spec, "res"))?,
                )
            }
            _ => return Err(bad_cam(spec, "res")),
        };
        CameraSpec {
            position: pos,
            look_at: look,
            up: Some(up),
            fov_y_deg: fov,
            width: w,
            height: h,
        }
        .build()
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        serde_json::from_str::<CameraSpec>(text)?.build()
    }

    pub fn spec(&self) -> CameraSpec {
        CameraSpec {
            position: self.position.coords.into(),
            look_at: self.look_at.coords.into(),
            up: Some(self.up.into()),
            fov_y_deg: self.fov_y_deg,
            width: self.width,
            height: self.height,
        }
    }
}

fn bad_cam(spec: &str, what: &str) -> Error {
    Error::InvalidArgument(format!("camera spec {spec:?}: {what}"))
}

/// JSON form of a camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default)]
    pub up: Option<[f64; 3]>,
    pub fov_y_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraSpec {
    pub fn build(&self) -> Result<Camera> {
        Camera::look_at(
            self.position.into(),
            self.look_at.into(),
            self.up.unwrap_or([0.0, 1.0, 0.0]).into(),
            self.fov_y_deg,
            self.width,
            self.height,
        )
    }
}
