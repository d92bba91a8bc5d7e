//! Camera rays, front-to-back alpha blending and the per-pixel round loop.

mod camera;
mod image;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use self::camera::{Camera, CameraSpec};
pub use self::image::{write_image, Image, ImageFormat};
use crate::accel::{
    build_monolithic, build_two_level, cutoff_radius, icosahedron_mesh, AccelStructure, BlasKind, CutoffPolicy,
    MAX_ARITY, MIN_ARITY,
};
use crate::checkpoint::{prepare_round, CheckpointContext, Preparation, DEFAULT_CHECKPOINT_CAPACITY, DEFAULT_EVICTION_CAPACITY};
use crate::error::{Error, Result};
use crate::metrics::TraversalCounters;
use crate::scene::sh::coefficient_count;
use crate::scene::{eval_sh_color, particle_alpha, Gaussian, Ray, Scene};
use crate::traversal::{trace_round, trace_single_round, HitRecord, KBuffer, TraceOptions};

/// Entries with alpha below this are skipped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    MonolithicBaseline,
    TwoLevelSw,
    TwoLevelSwHw,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::MonolithicBaseline, Regime::TwoLevelSw, Regime::TwoLevelSwHw];

    pub fn name(&self) -> &'static str {
        match self {
            Regime::MonolithicBaseline => "baseline",
            Regime::TwoLevelSw => "sw",
            Regime::TwoLevelSwHw => "sw+hw",
        }
    }

    pub fn checkpointing(&self) -> bool {
        matches!(self, Regime::TwoLevelSwHw)
    }

    pub fn default_proxy(&self) -> BlasKind {
        match self {
            Regime::MonolithicBaseline => BlasKind::Icosphere(0),
            _ => BlasKind::UnitSphere,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "monolithic" => Ok(Regime::MonolithicBaseline),
            "sw" | "two-level" => Ok(Regime::TwoLevelSw),
            "sw+hw" | "checkpoint" => Ok(Regime::TwoLevelSwHw),
            _ => Err(Error::InvalidArgument(format!(
                "unknown regime {s:?} (expected baseline, sw or sw+hw)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub regime: Regime,
    pub k: usize,
    /// Accumulated-alpha threshold for early termination; `None` disables it.
    pub ert: Option<f64>,
    pub cutoff: CutoffPolicy,
    /// Caps the SH degree evaluated; `None` uses each Gaussian's own.
    pub sh_degree: Option<usize>,
    pub background: [f64; 3],
    /// Proxy geometry; `None` picks the regime default.
    pub proxy: Option<BlasKind>,
    pub arity: usize,
    pub trace: TraceOptions,
    pub checkpoint_capacity: usize,
    pub eviction_capacity: usize,
    /// Record node addresses for the cache model.
    pub record_trace: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            regime: Regime::TwoLevelSwHw,
            k: 16,
            ert: Some(0.999),
            cutoff: CutoffPolicy::default(),
            sh_degree: None,
            background: [0.0; 3],
            proxy: None,
            arity: 2,
            trace: TraceOptions::default(),
            checkpoint_capacity: DEFAULT_CHECKPOINT_CAPACITY,
            eviction_capacity: DEFAULT_EVICTION_CAPACITY,
            record_trace: false,
        }
    }
}

impl RenderConfig {
    pub fn for_regime(regime: Regime) -> Self {
        RenderConfig {
            regime,
            ..Default::default()
        }
    }

    pub fn proxy(&self) -> BlasKind {
        self.proxy.unwrap_or(self.regime.default_proxy())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if let Some(t) = self.ert {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidArgument(format!("ERT threshold {t} outside (0, 1]")));
            }
        }
        if !(MIN_ARITY..=MAX_ARITY).contains(&self.arity) {
            return Err(Error::InvalidArgument(format!("arity {} outside {MIN_ARITY}..={MAX_ARITY}", self.arity)));
        }
        if self.sh_degree.is_some_and(|d| d > crate::scene::sh::MAX_DEGREE) {
            return Err(Error::InvalidArgument("SH degree above 3".into()));
        }
        if !self.background.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite background".into()));
        }
        if self.checkpoint_capacity == 0 || self.eviction_capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacities must be >= 1".into()));
        }
        if self.regime == Regime::MonolithicBaseline && self.proxy() == BlasKind::UnitSphere {
            return Err(Error::InvalidArgument("the monolithic baseline needs a triangle proxy".into()));
        }
        self.cutoff.validate()
    }
}

/// Builds the structure the configured regime traverses.
pub fn build_structure(scene: &Scene, config: &RenderConfig) -> Result<AccelStructure> {
    config.validate()?;
    match (config.regime, config.proxy()) {
        (Regime::MonolithicBaseline, BlasKind::Icosphere(s)) => {
            build_monolithic(scene, &icosahedron_mesh(s)?, config.cutoff, config.arity)
        }
        (Regime::MonolithicBaseline, BlasKind::UnitSphere) => unreachable!("rejected by validate"),
        (_, kind) => build_two_level(scene, kind, config.cutoff, config.arity),
    }
}

fn check_structure(accel: &AccelStructure, regime: Regime) -> Result<()> {
    let mono = matches!(accel, AccelStructure::Monolithic(_));
    if mono != (regime == Regime::MonolithicBaseline) {
        return Err(Error::InvalidArgument(format!("structure does not match regime {regime}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelState {
    pub color: [f64; 3],
    pub transmittance: f64,
    pub blended: u32,
    pub terminated: bool,
}

impl Default for PixelState {
    fn default() -> Self {
        PixelState {
            color: [0.0; 3],
            transmittance: 1.0,
            blended: 0,
            terminated: false,
        }
    }
}

impl PixelState {
    pub fn accumulated_alpha(&self) -> f64 {
        1.0 - self.transmittance
    }

    /// Composite over the background by the remaining transmittance.
    pub fn rgba(&self, background: [f64; 3]) -> [f64; 4] {
        let t = self.transmittance;
        [
            self.color[0] + t * background[0],
            self.color[1] + t * background[1],
            self.color[2] + t * background[2],
            1.0 - t,
        ]
    }

    /// One front-to-back step. Returns whether the entry was blended.
    pub fn blend(&mut self, alpha: f64, color: [f64; 3], ert: Option<f64>) -> bool {
        if alpha < MIN_ALPHA {
            return false;
        }
        for (c, v) in self.color.iter_mut().zip(color) {
            *c += self.transmittance * alpha * v;
        }
        self.transmittance *= 1.0 - alpha;
        self.blended += 1;
        if ert.is_some_and(|thr| self.accumulated_alpha() >= thr) {
            self.terminated = true;
        }
        true
    }
}

fn gaussian_color(g: &Gaussian, ray: &Ray, config: &RenderConfig) -> Result<[f64; 3]> {
    let own = g.sh_degree();
    let d = config.sh_degree.map_or(own, |d| d.min(own));
    eval_sh_color(&g.sh[..coefficient_count(d)], &ray.direction, d)
}

fn lookup(scene: &Scene, id: u32) -> Result<&Gaussian> {
    scene
        .get(id)
        .ok_or_else(|| Error::Invariant(format!("hit refers to gaussian {id} outside the scene")))
}

/// Blends `entries` in order and returns the key of the last entry
/// processed, blended or skipped, which is where the next round resumes.
pub fn blend_round(
    state: &mut PixelState,
    entries: &[HitRecord],
    ray: &Ray,
    scene: &Scene,
    config: &RenderConfig,
    mut log: Option<&mut Vec<HitRecord>>,
) -> Result<Option<HitRecord>> {
    let mut resume = None;
    for &h in entries {
        if state.terminated {
            break;
        }
        let g = lookup(scene, h.id)?;
        resume = Some(h);
        let alpha = particle_alpha(g, ray)?;
        if alpha < MIN_ALPHA {
            continue;
        }
        state.blend(alpha, gaussian_color(g, ray, config)?, config.ert);
        if let Some(log) = log.as_deref_mut() {
            log.push(h);
        }
    }
    Ok(resume)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelResult {
    pub rgba: [f64; 4],
    pub rounds: u32,
    pub blended: u32,
}

/// Multi-round rendering of one ray under the configured regime. `log`
/// receives every blended key in order.
pub fn render_ray(
    scene: &Scene,
    accel: &AccelStructure,
    ray: &Ray,
    config: &RenderConfig,
    counters: &mut TraversalCounters,
    mut log: Option<&mut Vec<HitRecord>>,
) -> Result<PixelResult> {
    check_structure(accel, config.regime)?;
    let mut state = PixelState::default();
    let mut kbuf = KBuffer::new(config.k);
    let mut ctx = config
        .regime
        .checkpointing()
        .then(|| CheckpointContext::with_capacities(config.checkpoint_capacity, config.eviction_capacity));
    let mut entry = HitRecord::ORIGIN;
    let mut rounds = 0;
    loop {
        if let Some(ctx) = ctx.as_mut() {
            if prepare_round(ctx, &mut kbuf)? == (Preparation::Root { fallback: true }) {
                counters.overflow_fallbacks += 1;
            }
        }
        rounds += 1;
        counters.rounds += 1;
        let r = trace_round(accel, ray, entry, &mut kbuf, counters, ctx.as_mut(), &config.trace)?;
        if let Some(last) = blend_round(&mut state, kbuf.entries(), ray, scene, config, log.as_deref_mut())? {
            entry = last;
        }
        kbuf.clear();
        if state.terminated || r.hits < config.k {
            break;
        }
    }
    counters.blends += state.blended as u64;
    counters.end_ray();
    Ok(PixelResult {
        rgba: state.rgba(config.background),
        rounds,
        blended: state.blended,
    })
}

pub fn render_pixel(
    scene: &Scene,
    accel: &AccelStructure,
    camera: &Camera,
    px: u32,
    py: u32,
    config: &RenderConfig,
    counters: &mut TraversalCounters,
) -> Result<[f64; 4]> {
    if px >= camera.width || py >= camera.height {
        return Err(Error::InvalidArgument(format!("pixel ({px}, {py}) out of bounds")));
    }
    Ok(render_ray(scene, accel, &camera.generate_ray(px, py), config, counters, None)?.rgba)
}

/// Collects every hit in one traversal, sorts, then blends.
pub fn render_ray_single_round(
    scene: &Scene,
    accel: &AccelStructure,
    ray: &Ray,
    config: &RenderConfig,
    counters: &mut TraversalCounters,
    log: Option<&mut Vec<HitRecord>>,
) -> Result<PixelResult> {
    let hits = trace_single_round(accel, ray, counters, &config.trace)?;
    counters.rounds += 1;
    let mut state = PixelState::default();
    blend_round(&mut state, &hits, ray, scene, config, log)?;
    counters.blends += state.blended as u64;
    counters.end_ray();
    Ok(PixelResult {
        rgba: state.rgba(config.background),
        rounds: 1,
        blended: state.blended,
    })
}

/// Entry distance of the ray into the cutoff ellipsoid, from the world-space
/// quadric `(o + t d - μ)ᵀ Σ⁻¹ (o + t d - μ) = κ²`.
fn ellipsoid_entry(g: &Gaussian, ray: &Ray, kappa: f64) -> Option<f64> {
    let inv = g.inverse_covariance();
    let m = ray.origin - g.mean;
    let a = ray.direction.dot(&(inv * ray.direction));
    let b = ray.direction.dot(&(inv * m));
    let c = m.dot(&(inv * m)) - kappa * kappa;
    let disc = b * b - a * c;
    if !(disc >= 0.0) || a <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    [(-b - s) / a, (-b + s) / a].into_iter().find(|&t| t > 0.0)
}

/// Brute force: every Gaussian against its analytic cutoff ellipsoid,
/// hits sorted by (t, id), then blended with the same rules.
pub fn oracle_render_pixel(scene: &Scene, ray: &Ray, config: &RenderConfig) -> Result<[f64; 4]> {
    let mut hits: Vec<HitRecord> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| ellipsoid_entry(g, ray, cutoff_radius(g, config.cutoff)).map(|t| HitRecord::new(t, i as u32)))
        .collect();
    hits.sort();
    let mut state = PixelState::default();
    for h in hits {
        let g = &scene.gaussians[h.id as usize];
        state.blend(particle_alpha(g, ray)?, gaussian_color(g, ray, config)?, config.ert);
        if state.terminated {
            break;
        }
    }
    Ok(state.rgba(config.background))
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub image: Image,
    pub counters: TraversalCounters,
}

/// Renders every pixel on `threads` workers. Rows are merged in order, so
/// the image and counters do not depend on the worker count.
pub fn render_frame(
    scene: &Scene,
    accel: &AccelStructure,
    camera: &Camera,
    config: &RenderConfig,
    threads: usize,
) -> Result<Frame> {
    config.validate()?;
    check_structure(accel, config.regime)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let rows: Vec<(Vec<[f64; 4]>, TraversalCounters)> = pool.install(|| {
        (0..camera.height)
            .into_par_iter()
            .map(|py| {
                let mut counters = if config.record_trace {
                    TraversalCounters::with_trace()
                } else {
                    TraversalCounters::new()
                };
                let row = (0..camera.width)
                    .map(|px| render_ray(scene, accel, &camera.generate_ray(px, py), config, &mut counters, None).map(|p| p.rgba))
                    .collect::<Result<Vec<_>>>()?;
                Ok((row, counters))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut counters = if config.record_trace {
        TraversalCounters::with_trace()
    } else {
        TraversalCounters::new()
    };
    let mut pixels = Vec::with_capacity((camera.width * camera.height) as usize);
    for (row, c) in rows {
        pixels.extend(row);
        counters.merge(&c);
    }
    Ok(Frame {
        image: Image {
            width: camera.width,
            height: camera.height,
            pixels,
        },
        counters,
    })
}

pub fn oracle_render_frame(scene: &Scene, camera: &Camera, config: &RenderConfig) -> Result<Image> {
    let pixels = (0..camera.height)
        .into_par_iter()
        .flat_map_iter(|py| (0..camera.width).map(move |px| (px, py)))
        .map(|(px, py)| oracle_render_pixel(scene, &camera.generate_ray(px, py), config))
        .collect::<Result<Vec<_>>>()?;
    Ok(Image {
        width: camera.width,
        height: camera.height,
        pixels,
    })
}
