//! Run configuration: a flat `key = value` text format with dotted section
//! prefixes and `#` comments. Parsing starts from the defaults and applies
//! overrides; serialization emits the canonical key order so that
//! parse -> serialize -> parse is the identity on structures.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::kinematics::{Sinusoid, TrajectoryProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Room,
    Sphere,
    Revolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObserverKind {
    Cap,
    Sphere,
}

/// Complete experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scene_kind: SceneKind,
    /// Full room extents in meters (x, y, z).
    pub room_size: Vector3<f64>,
    pub sphere_radius: f64,
    pub rev_radius: f64,
    pub rev_height: f64,
    pub texture_amplitude: f64,
    pub texture_freq_h: f64,
    pub texture_freq_v: f64,
    /// Half-extent of the cubic trajectory envelope around the start pose.
    pub envelope_half: f64,

    pub camera_pos: Vector3<f64>,
    pub camera_forward: Vector3<f64>,
    pub camera_up: Vector3<f64>,

    pub grid_width: usize,
    pub grid_height: usize,
    pub fov_h_deg: f64,
    pub fov_v_deg: f64,
    pub rate_hz: f64,

    pub duration: f64,
    /// Sinusoid terms per twist component: vx, vy, vz, wx, wy, wz.
    pub trajectory: [Vec<Sinusoid>; 6],

    pub bias_pv: Vector3<f64>,
    pub bias_pw: Vector3<f64>,

    pub sigma_y: f64,
    pub sigma_d: f64,
    pub sigma_v: f64,
    pub sigma_w: f64,
    pub seed: u64,

    pub k_y: f64,
    pub k_d: f64,
    pub k_v: f64,
    pub k_w: f64,
    pub lambda_y: f64,
    pub lambda_d: f64,

    /// Window margins in pixels; 0 selects the default fraction of the frame
    /// (outer band from 8%, plateau from 16%).
    pub window_k1_margin: usize,
    pub window_k2_margin: usize,

    pub observer: ObserverKind,
    /// Observer substeps per frame; 0 selects the stability-driven automatic
    /// choice.
    pub substeps: usize,
    pub sphere_grid_w: usize,
    pub sphere_grid_h: usize,
    pub out_dir: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scene_kind: SceneKind::Room,
            room_size: Vector3::new(4.0, 3.0, 2.5),
            sphere_radius: 2.5,
            rev_radius: 1.8,
            rev_height: 2.4,
            texture_amplitude: 100.0,
            texture_freq_h: 0.5,
            texture_freq_v: 0.5,
            envelope_half: 0.6,
            camera_pos: Vector3::zeros(),
            camera_forward: Vector3::new(1.0, 0.0, 0.0),
            camera_up: Vector3::new(0.0, 0.0, 1.0),
            grid_width: 160,
            grid_height: 120,
            fov_h_deg: 50.0,
            fov_v_deg: 40.0,
            rate_hz: 42.0,
            duration: 12.0,
            trajectory: [
                vec![Sinusoid { amp: 0.15, freq_hz: 0.30, phase: 0.0 }],
                vec![Sinusoid { amp: 0.12, freq_hz: 0.23, phase: 0.9 }],
                vec![Sinusoid { amp: 0.10, freq_hz: 0.37, phase: 1.7 }],
                vec![Sinusoid { amp: 0.06, freq_hz: 0.19, phase: 0.4 }],
                vec![Sinusoid { amp: 0.05, freq_hz: 0.29, phase: 1.2 }],
                vec![Sinusoid { amp: 0.05, freq_hz: 0.41, phase: 2.1 }],
            ],
            bias_pv: Vector3::new(2.5, 0.0, 0.0),
            bias_pw: Vector3::new(0.05, 0.0, 0.0),
            sigma_y: 0.0,
            sigma_d: 0.0,
            sigma_v: 0.0,
            sigma_w: 0.0,
            seed: 1,
            k_y: 2.0,
            k_d: 2.0,
            k_v: 1e-2,
            k_w: 1e-5,
            lambda_y: 1.0,
            lambda_d: 5000.0,
            window_k1_margin: 0,
            window_k2_margin: 0,
            observer: ObserverKind::Cap,
            substeps: 0,
            sphere_grid_w: 128,
            sphere_grid_h: 64,
            out_dir: "out".into(),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::BadConfig(format!("{key}: expected a number, got '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::BadConfig(format!("{key}: expected an integer, got '{v}'")))
}

fn parse_vec3(key: &str, v: &str) -> Result<Vector3<f64>> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::BadConfig(format!(
            "{key}: expected three comma-separated numbers, got '{v}'"
        )));
    }
    Ok(Vector3::new(
        parse_f64(key, parts[0])?,
        parse_f64(key, parts[1])?,
        parse_f64(key, parts[2])?,
    ))
}

fn parse_terms(key: &str, v: &str) -> Result<Vec<Sinusoid>> {
    if v == "none" {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for term in v.split(';') {
        let parts: Vec<&str> = term.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::BadConfig(format!(
                "{key}: each term is 'amp,freq_hz,phase', got '{term}'"
            )));
        }
        out.push(Sinusoid {
            amp: parse_f64(key, parts[0])?,
            freq_hz: parse_f64(key, parts[1])?,
            phase: parse_f64(key, parts[2])?,
        });
    }
    Ok(out)
}

fn fmt_vec3(v: &Vector3<f64>) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

fn fmt_terms(terms: &[Sinusoid]) -> String {
    if terms.is_empty() {
        return "none".into();
    }
    terms
        .iter()
        .map(|s| format!("{},{},{}", s.amp, s.freq_hz, s.phase))
        .collect::<Vec<_>>()
        .join(";")
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::BadConfig(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let v = value.trim();
            match key {
                "scene.kind" => {
                    cfg.scene_kind = match v {
                        "room" => SceneKind::Room,
                        "sphere" => SceneKind::Sphere,
                        "revolution" => SceneKind::Revolution,
                        _ => {
                            return Err(Error::BadConfig(format!(
                                "scene.kind: unknown kind '{v}'"
                            )))
                        }
                    }
                }
                "scene.room.size" => cfg.room_size = parse_vec3(key, v)?,
                "scene.sphere.radius" => cfg.sphere_radius = parse_f64(key, v)?,
                "scene.rev.radius" => cfg.rev_radius = parse_f64(key, v)?,
                "scene.rev.height" => cfg.rev_height = parse_f64(key, v)?,
                "scene.texture.amplitude" => cfg.texture_amplitude = parse_f64(key, v)?,
                "scene.texture.freq_h" => cfg.texture_freq_h = parse_f64(key, v)?,
                "scene.texture.freq_v" => cfg.texture_freq_v = parse_f64(key, v)?,
                "scene.envelope.half" => cfg.envelope_half = parse_f64(key, v)?,
                "camera.pos" => cfg.camera_pos = parse_vec3(key, v)?,
                "camera.forward" => cfg.camera_forward = parse_vec3(key, v)?,
                "camera.up" => cfg.camera_up = parse_vec3(key, v)?,
                "grid.width" => cfg.grid_width = parse_usize(key, v)?,
                "grid.height" => cfg.grid_height = parse_usize(key, v)?,
                "grid.fov_h_deg" => cfg.fov_h_deg = parse_f64(key, v)?,
                "grid.fov_v_deg" => cfg.fov_v_deg = parse_f64(key, v)?,
                "grid.rate_hz" => cfg.rate_hz = parse_f64(key, v)?,
                "trajectory.duration" => cfg.duration = parse_f64(key, v)?,
                "trajectory.vx" => cfg.trajectory[0] = parse_terms(key, v)?,
                "trajectory.vy" => cfg.trajectory[1] = parse_terms(key, v)?,
                "trajectory.vz" => cfg.trajectory[2] = parse_terms(key, v)?,
                "trajectory.wx" => cfg.trajectory[3] = parse_terms(key, v)?,
                "trajectory.wy" => cfg.trajectory[4] = parse_terms(key, v)?,
                "trajectory.wz" => cfg.trajectory[5] = parse_terms(key, v)?,
                "bias.pv" => cfg.bias_pv = parse_vec3(key, v)?,
                "bias.pw" => cfg.bias_pw = parse_vec3(key, v)?,
                "noise.sigma_y" => cfg.sigma_y = parse_f64(key, v)?,
                "noise.sigma_d" => cfg.sigma_d = parse_f64(key, v)?,
                "noise.sigma_v" => cfg.sigma_v = parse_f64(key, v)?,
                "noise.sigma_w" => cfg.sigma_w = parse_f64(key, v)?,
                "noise.seed" => {
                    cfg.seed = v.parse().map_err(|_| {
                        Error::BadConfig(format!("noise.seed: expected an integer, got '{v}'"))
                    })?
                }
                "gains.k_y" => cfg.k_y = parse_f64(key, v)?,
                "gains.k_d" => cfg.k_d = parse_f64(key, v)?,
                "gains.k_v" => cfg.k_v = parse_f64(key, v)?,
                "gains.k_w" => cfg.k_w = parse_f64(key, v)?,
                "gains.lambda_y" => cfg.lambda_y = parse_f64(key, v)?,
                "gains.lambda_d" => cfg.lambda_d = parse_f64(key, v)?,
                "window.k1_margin" => cfg.window_k1_margin = parse_usize(key, v)?,
                "window.k2_margin" => cfg.window_k2_margin = parse_usize(key, v)?,
                "run.observer" => {
                    cfg.observer = match v {
                        "cap" => ObserverKind::Cap,
                        "sphere" => ObserverKind::Sphere,
                        _ => {
                            return Err(Error::BadConfig(format!(
                                "run.observer: unknown observer '{v}'"
                            )))
                        }
                    }
                }
                "run.substeps" => {
                    cfg.substeps = if v == "auto" { 0 } else { parse_usize(key, v)? }
                }
                "run.sphere_w" => cfg.sphere_grid_w = parse_usize(key, v)?,
                "run.sphere_h" => cfg.sphere_grid_h = parse_usize(key, v)?,
                "run.out" => cfg.out_dir = v.to_string(),
                _ => return Err(Error::BadConfig(format!("unknown key '{key}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rate_hz <= 0.0 || self.duration <= 0.0 {
            return Err(Error::BadConfig("rate and duration must be positive".into()));
        }
        let frames = self.rate_hz * self.duration;
        if frames > 1e6 {
            return Err(Error::BadConfig(format!(
                "rate * duration = {frames:.0} frames exceeds the 1e6 limit"
            )));
        }
        if self.envelope_half <= 0.0 {
            return Err(Error::BadConfig("envelope half-extent must be positive".into()));
        }
        if self.grid_width < 3 || self.grid_height < 3 {
            return Err(Error::BadConfig("grid must be at least 3x3".into()));
        }
        Ok(())
    }

    pub fn to_config_string(&self) -> String {
        let kind = match self.scene_kind {
            SceneKind::Room => "room",
            SceneKind::Sphere => "sphere",
            SceneKind::Revolution => "revolution",
        };
        let observer = match self.observer {
            ObserverKind::Cap => "cap",
            ObserverKind::Sphere => "sphere",
        };
        let substeps = if self.substeps == 0 {
            "auto".to_string()
        } else {
            self.substeps.to_string()
        };
        format!(
            "scene.kind = {kind}\n\
             scene.room.size = {}\n\
             scene.sphere.radius = {}\n\
             scene.rev.radius = {}\n\
             scene.rev.height = {}\n\
             scene.texture.amplitude = {}\n\
             scene.texture.freq_h = {}\n\
             scene.texture.freq_v = {}\n\
             scene.envelope.half = {}\n\
             camera.pos = {}\n\
             camera.forward = {}\n\
             camera.up = {}\n\
             grid.width = {}\n\
             grid.height = {}\n\
             grid.fov_h_deg = {}\n\
             grid.fov_v_deg = {}\n\
             grid.rate_hz = {}\n\
             trajectory.duration = {}\n\
             trajectory.vx = {}\n\
             trajectory.vy = {}\n\
             trajectory.vz = {}\n\
             trajectory.wx = {}\n\
             trajectory.wy = {}\n\
             trajectory.wz = {}\n\
             bias.pv = {}\n\
             bias.pw = {}\n\
             noise.sigma_y = {}\n\
             noise.sigma_d = {}\n\
             noise.sigma_v = {}\n\
             noise.sigma_w = {}\n\
             noise.seed = {}\n\
             gains.k_y = {}\n\
             gains.k_d = {}\n\
             gains.k_v = {}\n\
             gains.k_w = {}\n\
             gains.lambda_y = {}\n\
             gains.lambda_d = {}\n\
             window.k1_margin = {}\n\
             window.k2_margin = {}\n\
             run.observer = {observer}\n\
             run.substeps = {substeps}\n\
             run.sphere_w = {}\n\
             run.sphere_h = {}\n\
             run.out = {}\n",
            fmt_vec3(&self.room_size),
            self.sphere_radius,
            self.rev_radius,
            self.rev_height,
            self.texture_amplitude,
            self.texture_freq_h,
            self.texture_freq_v,
            self.envelope_half,
            fmt_vec3(&self.camera_pos),
            fmt_vec3(&self.camera_forward),
            fmt_vec3(&self.camera_up),
            self.grid_width,
            self.grid_height,
            self.fov_h_deg,
            self.fov_v_deg,
            self.rate_hz,
            self.duration,
            fmt_terms(&self.trajectory[0]),
            fmt_terms(&self.trajectory[1]),
            fmt_terms(&self.trajectory[2]),
            fmt_terms(&self.trajectory[3]),
            fmt_terms(&self.trajectory[4]),
            fmt_terms(&self.trajectory[5]),
            fmt_vec3(&self.bias_pv),
            fmt_vec3(&self.bias_pw),
            self.sigma_y,
            self.sigma_d,
            self.sigma_v,
            self.sigma_w,
            self.seed,
            self.k_y,
            self.k_d,
            self.k_v,
            self.k_w,
            self.lambda_y,
            self.lambda_d,
            self.window_k1_margin,
            self.window_k2_margin,
            self.sphere_grid_w,
            self.sphere_grid_h,
            self.out_dir,
        )
    }

    pub fn trajectory_profile(&self) -> TrajectoryProfile {
        TrajectoryProfile {
            duration: self.duration,
            terms: self.trajectory.clone(),
        }
    }

    pub fn n_frames(&self) -> usize {
        (self.rate_hz * self.duration).round() as usize
    }

    /// Effective window margins in pixels (defaults: outer band from 8% of
    /// the smaller frame side, plateau from 16%).
    pub fn window_margins(&self) -> (usize, usize) {
        let m = self.grid_width.min(self.grid_height) as f64;
        let k2 = if self.window_k2_margin > 0 {
            self.window_k2_margin
        } else {
            ((0.08 * m).round() as usize).max(2)
        };
        let k1 = if self.window_k1_margin > 0 {
            self.window_k1_margin
        } else {
            ((0.16 * m).round() as usize).max(k2 + 2)
        };
        (k1, k2)
    }
}
