//! Static convex scenes with Lambertian textures, and the ray-cast renderer
//! producing brightness and depth fields on a sphere chart grid.
//!
//! Surfaces are closed and convex so a ray from any interior point meets the
//! surface exactly once. Brightness is stored as a real in [1, 256] and only
//! quantized when frames are written to disk.

use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, SphereGrid};
use crate::kinematics::{counter_rng, CameraPose, Envelope};
use crate::sphere::UnitDir;

pub const DEPTH_FLOOR: f64 = 1e-3;

/// Closed convex surface, centered at the scene-local origin.
#[derive(Debug, Clone)]
pub enum Surface {
    /// Axis-aligned box of the given half-extents (meters).
    Box { half: Vector3<f64> },
    Sphere { radius: f64 },
    /// Surface of revolution about the local z axis. The profile lists
    /// (radius, height) pairs with strictly increasing heights and zero radius
    /// at both ends; it is convexity-checked at construction.
    Revolution { profile: Vec<(f64, f64)> },
}

/// Lambertian texture: brightness as a function of the scene-local surface
/// point, valued in [1, 256].
#[derive(Clone)]
pub enum Texture {
    Constant(f64),
    /// Per-wall sinusoid pattern for box scenes, in wall-local meters:
    /// `128.5 + amp * sin(2 pi fh u) * sin(2 pi fv v)`.
    RoomSinusoid { amplitude: f64, freq_h: f64, freq_v: f64 },
    /// Axisymmetric pattern: a function of height only (plus implicitly the
    /// distance to the axis through the surface profile).
    AxialSinusoid { base: f64, amplitude: f64, freq: f64 },
    /// Generic smooth pattern evaluated at the scene-local point.
    Solid {
        base: f64,
        amplitude: f64,
        k: Vector3<f64>,
        phase: f64,
    },
    Custom(Arc<dyn Fn(&Vector3<f64>) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Texture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Texture::Constant(c) => write!(f, "Constant({c})"),
            Texture::RoomSinusoid { amplitude, freq_h, freq_v } => {
                write!(f, "RoomSinusoid(a={amplitude}, fh={freq_h}, fv={freq_v})")
            }
            Texture::AxialSinusoid { base, amplitude, freq } => {
                write!(f, "AxialSinusoid(b={base}, a={amplitude}, f={freq})")
            }
            Texture::Solid { base, amplitude, .. } => {
                write!(f, "Solid(b={base}, a={amplitude})")
            }
            Texture::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Texture {
    /// Evaluate at a scene-local surface point. `face` carries the box face
    /// index for per-wall patterns.
    fn eval(&self, p: &Vector3<f64>, face: Option<(usize, f64, f64)>) -> f64 {
        match self {
            Texture::Constant(c) => *c,
            Texture::RoomSinusoid { amplitude, freq_h, freq_v } => {
                let (_, u, v) = face.expect("room texture needs a box face");
                128.5
                    + amplitude
                        * (std::f64::consts::TAU * freq_h * u).sin()
                        * (std::f64::consts::TAU * freq_v * v).sin()
            }
            Texture::AxialSinusoid { base, amplitude, freq } => {
                base + amplitude * (std::f64::consts::TAU * freq * p.z).sin()
            }
            Texture::Solid { base, amplitude, k, phase } => {
                base + amplitude * (k.x * p.x).sin() * (k.y * p.y).sin() * (k.z * p.z + phase).sin()
            }
            Texture::Custom(f) => f(p),
        }
    }
}

/// A static convex scene: surface, texture, an optional rigid orientation of
/// the whole scene, and the certified depth lower bound for the configured
/// trajectory envelope.
#[derive(Debug, Clone)]
pub struct Scene {
    pub surface: Surface,
    pub texture: Texture,
    pub rotation: UnitQuaternion<f64>,
    pub d_star: f64,
}

/// Result of casting one ray: scene point (reference frame), distance and
/// brightness at the hit.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceHit {
    pub point: Vector3<f64>,
    pub distance: f64,
    pub brightness: f64,
}

/// Per-frame rendering noise; a given (seed, frame, pixel) always produces
/// the same sample, so rendering is deterministic and parallel-safe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameNoise {
    pub sigma_y: f64,
    pub sigma_d: f64,
    pub seed: u64,
    pub frame: u64,
}

impl Scene {
    pub fn new(surface: Surface, texture: Texture, envelope: &Envelope) -> Result<Self> {
        if let Surface::Revolution { profile } = &surface {
            check_profile_convex(profile)?;
        }
        let d_star = surface_envelope_clearance(&surface, envelope)?;
        Ok(Self {
            surface,
            texture,
            rotation: UnitQuaternion::identity(),
            d_star,
        })
    }

    pub fn with_rotation(mut self, rotation: UnitQuaternion<f64>) -> Self {
        self.rotation = rotation;
        self
    }

    /// True when the reference-frame point lies strictly inside the scene.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.rotation.inverse() * p;
        match &self.surface {
            Surface::Box { half } => {
                local.x.abs() < half.x && local.y.abs() < half.y && local.z.abs() < half.z
            }
            Surface::Sphere { radius } => local.norm() < *radius,
            Surface::Revolution { profile } => {
                let (h0, h1) = (profile[0].1, profile[profile.len() - 1].1);
                if local.z <= h0 || local.z >= h1 {
                    return false;
                }
                let rho = (local.x * local.x + local.y * local.y).sqrt();
                rho < profile_radius_at(profile, local.z)
            }
        }
    }
}

/// Casts a ray from an interior origin along a world direction and returns
/// the unique surface intersection.
pub fn ray_cast(scene: &Scene, origin: &Vector3<f64>, dir_world: UnitDir) -> Result<SurfaceHit> {
    if !scene.contains(origin) {
        return Err(Error::OriginOutside);
    }
    let inv = scene.rotation.inverse();
    let o = inv * origin;
    let d = inv * dir_world.vec();
    let (t, face) = match &scene.surface {
        Surface::Box { half } => intersect_box_interior(half, &o, &d),
        Surface::Sphere { radius } => (intersect_sphere_interior(*radius, &o, &d), None),
        Surface::Revolution { profile } => (intersect_revolution(profile, &o, &d), None),
    };
    let p_local = o + d * t;
    let face_uv = face.map(|f| box_face_uv(f, &p_local));
    let brightness = scene.texture.eval(&p_local, face_uv);
    Ok(SurfaceHit {
        point: scene.rotation * p_local,
        distance: t,
        brightness,
    })
}

fn intersect_box_interior(half: &Vector3<f64>, o: &Vector3<f64>, d: &Vector3<f64>) -> (f64, Option<usize>) {
    let mut t_exit = f64::INFINITY;
    let mut face = None;
    for a in 0..3 {
        if d[a] == 0.0 {
            continue;
        }
        let bound = if d[a] > 0.0 { half[a] } else { -half[a] };
        let t = (bound - o[a]) / d[a];
        if t < t_exit {
            t_exit = t;
            face = Some(2 * a + usize::from(d[a] < 0.0));
        }
    }
    (t_exit, face)
}

/// Wall-local coordinates on a box face: the two in-plane point components in
/// a fixed per-face order.
fn box_face_uv(face: usize, p: &Vector3<f64>) -> (usize, f64, f64) {
    match face / 2 {
        0 => (face, p.y, p.z),
        1 => (face, p.x, p.z),
        _ => (face, p.x, p.y),
    }
}

fn intersect_sphere_interior(radius: f64, o: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    let b = o.dot(d);
    let c = o.norm_squared() - radius * radius;
    -b + (b * b - c).sqrt()
}

fn profile_radius_at(profile: &[(f64, f64)], z: f64) -> f64 {
    for win in profile.windows(2) {
        let ((r0, h0), (r1, h1)) = (win[0], win[1]);
        if z >= h0 && z <= h1 {
            let s = if h1 > h0 { (z - h0) / (h1 - h0) } else { 0.0 };
            return r0 + s * (r1 - r0);
        }
    }
    0.0
}

fn intersect_revolution(profile: &[(f64, f64)], o: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for win in profile.windows(2) {
        let ((r0, h0), (r1, h1)) = (win[0], win[1]);
        if h1 <= h0 {
            continue;
        }
        // Lateral cone-frustum surface: rho(z) = alpha + beta z.
        let beta = (r1 - r0) / (h1 - h0);
        let alpha = r0 - beta * h0;
        let qa = d.x * d.x + d.y * d.y - beta * beta * d.z * d.z;
        let rz = alpha + beta * o.z;
        let qb = 2.0 * (o.x * d.x + o.y * d.y - beta * d.z * rz);
        let qc = o.x * o.x + o.y * o.y - rz * rz;
        let mut candidates = [f64::NAN; 2];
        if qa.abs() < 1e-14 {
            if qb.abs() > 1e-14 {
                candidates[0] = -qc / qb;
            }
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let s = disc.sqrt();
                candidates[0] = (-qb - s) / (2.0 * qa);
                candidates[1] = (-qb + s) / (2.0 * qa);
            }
        }
        for t in candidates {
            if !t.is_finite() || t <= 1e-12 || t >= best {
                continue;
            }
            let z = o.z + t * d.z;
            let eps = 1e-9 * (h1 - h0).abs();
            if z >= h0 - eps && z <= h1 + eps && alpha + beta * z >= -1e-12 {
                best = t;
            }
        }
    }
    best
}

fn check_profile_convex(profile: &[(f64, f64)]) -> Result<()> {
    if profile.len() < 3 {
        return Err(Error::NonConvexProfile("need at least 3 points".into()));
    }
    let n = profile.len();
    if profile[0].0.abs() > 1e-12 || profile[n - 1].0.abs() > 1e-12 {
        return Err(Error::NonConvexProfile(
            "profile must start and end on the axis (r = 0)".into(),
        ));
    }
    for win in profile.windows(2) {
        if win[1].1 <= win[0].1 {
            return Err(Error::NonConvexProfile(
                "profile heights must be strictly increasing".into(),
            ));
        }
    }
    for &(r, _) in profile {
        if r < 0.0 {
            return Err(Error::NonConvexProfile("negative radius".into()));
        }
    }
    // The closed meridian polygon (right half plus mirrored left half) must
    // turn consistently.
    let mut poly: Vec<(f64, f64)> = profile.to_vec();
    for &(r, h) in profile.iter().rev().skip(1).take(n - 2) {
        poly.push((-r, h));
    }
    let m = poly.len();
    let mut sign = 0.0f64;
    for k in 0..m {
        let a = poly[k];
        let b = poly[(k + 1) % m];
        let c = poly[(k + 2) % m];
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        if cross.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return Err(Error::NonConvexProfile(format!(
                "meridian polygon is concave near vertex {k}"
            )));
        }
    }
    Ok(())
}

/// Distance from a point to an axis-aligned box (zero inside).
fn point_box_distance(p: &Vector3<f64>, env: &Envelope) -> f64 {
    let mut acc = 0.0;
    for a in 0..3 {
        let d = ((p[a] - env.center[a]).abs() - env.half[a]).max(0.0);
        acc += d * d;
    }
    acc.sqrt()
}

/// Lower bound on the camera-to-surface distance over the envelope.
fn surface_envelope_clearance(surface: &Surface, env: &Envelope) -> Result<f64> {
    let d = match surface {
        Surface::Box { half } => {
            let mut worst = f64::INFINITY;
            for a in 0..3 {
                worst = worst.min(half[a] - (env.center[a].abs() + env.half[a]));
            }
            worst
        }
        Surface::Sphere { radius } => {
            let corner = env.center.map(f64::abs) + env.half;
            radius - corner.norm()
        }
        Surface::Revolution { profile } => {
            // Dense sampling of the surface with a small safety factor.
            let mut worst = f64::INFINITY;
            let n_axial = 256;
            let n_azim = 64;
            let (h0, h1) = (profile[0].1, profile[profile.len() - 1].1);
            for jz in 0..=n_axial {
                let z = h0 + (h1 - h0) * jz as f64 / n_axial as f64;
                let r = profile_radius_at(profile, z);
                for ja in 0..n_azim {
                    let a = std::f64::consts::TAU * ja as f64 / n_azim as f64;
                    let p = Vector3::new(r * a.cos(), r * a.sin(), z);
                    worst = worst.min(point_box_distance(&p, env));
                }
            }
            worst * 0.98
        }
    };
    if d <= 0.0 {
        return Err(Error::BadConfig(format!(
            "trajectory envelope reaches the scene surface (clearance {d:.4} m)"
        )));
    }
    Ok(d)
}

/// Renders brightness and depth fields on a chart grid from a camera pose.
/// Per-pixel Gaussian noise is added when requested; brightness is clamped to
/// [1, 256] after noise and depth floored at `DEPTH_FLOOR`.
pub fn render<G: SphereGrid>(
    scene: &Scene,
    pose: &CameraPose,
    grid: &G,
    noise: Option<&FrameNoise>,
) -> Result<(ScalarField, ScalarField)> {
    if !scene.contains(&pose.c) {
        return Err(Error::OriginOutside);
    }
    let n = grid.len();
    let cols = grid.cols();
    let mut y = vec![0.0f64; n];
    let mut d = vec![0.0f64; n];
    let chunk = cols.max(1);
    y.par_chunks_mut(chunk)
        .zip(d.par_chunks_mut(chunk))
        .enumerate()
        .try_for_each(|(row, (yrow, drow))| -> Result<()> {
            for (col, (ys, ds)) in yrow.iter_mut().zip(drow.iter_mut()).enumerate() {
                let k = row * chunk + col;
                let dir_world = UnitDir::from_vector(pose.to_world(&grid.dir(k).vec()));
                let hit = ray_cast(scene, &pose.c, dir_world)?;
                let mut yy = hit.brightness;
                let mut dd = hit.distance;
                if let Some(ns) = noise {
                    if ns.sigma_y > 0.0 || ns.sigma_d > 0.0 {
                        let mut rng = counter_rng(ns.seed, 0x7278_6e64, ns.frame, k as u64);
                        let ey: f64 = rng.sample(StandardNormal);
                        let ed: f64 = rng.sample(StandardNormal);
                        yy += ns.sigma_y * ey;
                        dd += ns.sigma_d * ed;
                    }
                }
                *ys = yy.clamp(1.0, 256.0);
                *ds = dd.max(DEPTH_FLOOR);
            }
            Ok(())
        })?;
    Ok((
        ScalarField::from_vec(cols, grid.rows(), y),
        ScalarField::from_vec(cols, grid.rows(), d),
    ))
}

/// Configuration for the virtual-room scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomConfig {
    /// Full extents in meters along x, y, z.
    pub size: Vector3<f64>,
    pub amplitude: f64,
    pub freq_h: f64,
    pub freq_v: f64,
}

impl Default for RoomConfig {
    fn default() -> Self {
        Self {
            size: Vector3::new(4.0, 3.0, 2.5),
            amplitude: 100.0,
            freq_h: 0.5,
            freq_v: 0.5,
        }
    }
}

/// Box room whose walls, ceiling and floor carry a gray sinusoid pattern.
pub fn make_room_scene(config: &RoomConfig, envelope: &Envelope) -> Result<Scene> {
    if config.size.min() <= 0.0 {
        return Err(Error::BadConfig("room dimensions must be positive".into()));
    }
    if config.freq_h <= 0.0 || config.freq_v <= 0.0 {
        return Err(Error::BadConfig("texture frequencies must be positive".into()));
    }
    if !(0.0..=127.5).contains(&config.amplitude) {
        return Err(Error::BadConfig(
            "texture amplitude must lie in [0, 127.5] to keep brightness in [1, 256]".into(),
        ));
    }
    Scene::new(
        Surface::Box {
            half: config.size / 2.0,
        },
        Texture::RoomSinusoid {
            amplitude: config.amplitude,
            freq_h: config.freq_h,
            freq_v: config.freq_v,
        },
        envelope,
    )
}

/// A scene invariant under every rotation about `axis`: a convex surface of
/// revolution with a texture depending only on (axis distance, height).
/// A `Custom` texture is validated by sampling azimuth pairs and rejected if
/// it varies with azimuth.
pub fn make_axisymmetric_scene(
    axis: UnitDir,
    profile: Vec<(f64, f64)>,
    texture: Texture,
    envelope: &Envelope,
) -> Result<Scene> {
    match &texture {
        Texture::Constant(_) | Texture::AxialSinusoid { .. } => {}
        Texture::Custom(f) => {
            // Compare texture values at equal (radius, height), varying azimuth.
            for &(r, h) in &profile {
                if r <= 0.0 {
                    continue;
                }
                for m in 0..8 {
                    let a0 = 0.37 + m as f64;
                    let a1 = a0 + 1.1;
                    let p0 = Vector3::new(r * a0.cos(), r * a0.sin(), h);
                    let p1 = Vector3::new(r * a1.cos(), r * a1.sin(), h);
                    if (f(&p0) - f(&p1)).abs() > 1e-9 {
                        return Err(Error::BadConfig(
                            "texture varies with azimuth; not axisymmetric".into(),
                        ));
                    }
                }
            }
        }
        _ => {
            return Err(Error::BadConfig(
                "texture kind is not axisymmetric about the scene axis".into(),
            ))
        }
    }
    let rotation = UnitQuaternion::rotation_between(&Vector3::z(), &axis.vec())
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
    let scene = Scene::new(Surface::Revolution { profile }, texture, envelope)?;
    Ok(scene.with_rotation(rotation))
}

/// Spheroid meridian profile (an ellipse of half-width `r` and half-height
/// `h`), sampled at `n` points; a convenient smooth convex revolution profile.
pub fn spheroid_profile(r: f64, h: f64, n: usize) -> Vec<(f64, f64)> {
    (0..=n)
        .map(|k| {
            let tau = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * k as f64 / n as f64;
            let (s, c) = tau.sin_cos();
            // Clamp the pole samples exactly onto the axis.
            let rr = if k == 0 || k == n { 0.0 } else { r * c };
            (rr, h * s)
        })
        .collect()
}
