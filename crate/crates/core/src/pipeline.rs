//! End-to-end experiment pipeline: trajectory sampling, pose integration,
//! rendering with bias/noise injection, the observer loop with
//! stability-driven substepping, and the per-step diagnostics record.
//!
//! Diagnostics CSV schema (bit-exact):
//! `t,pvh_x,pvh_y,pvh_z,pwh_x,pwh_y,pwh_z,pve_x,pve_y,pve_z,pwe_x,pwe_y,pwe_z,V,f,boundary,L,cfl`
//! with 9 significant digits, `.` decimal point and `\n` line endings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::cap::{build_window, cap_lyapunov, observer_step_cap, CapObserverState};
use crate::config::{ObserverKind, SceneKind, SimConfig};
use crate::error::{Error, Result};
use crate::grid::{LatLongGrid, PinholeGrid, ScalarField, SphereGrid};
use crate::imgio::write_pfm;
use crate::kinematics::{
    integrate_pose, measured_twist, BiasPair, BodyTwist, CameraPose, Envelope, TrajectoryProfile,
    TwistNoise,
};
use crate::observer::{
    check_gain_condition, compute_l_frame, lyapunov_value, observer_step_sphere, ObserverGains,
    ObserverState, DIV_DEPTH_FLOOR,
};
use crate::scene::{
    make_axisymmetric_scene, make_room_scene, render, spheroid_profile, FrameNoise, RoomConfig,
    Scene, Surface, Texture,
};
use crate::sphere::UnitDir;
use crate::transport::advection_field;

pub const CSV_HEADER: &str =
    "t,pvh_x,pvh_y,pvh_z,pwh_x,pwh_y,pwh_z,pve_x,pve_y,pve_z,pwe_x,pwe_y,pwe_z,V,f,boundary,L,cfl";

/// CFL target for the automatic observer substep choice.
const CFL_TARGET: f64 = 0.4;
const MAX_SUBSTEPS: usize = 400;

/// Nine significant digits, scientific, `.` decimal point.
pub fn fmt9(x: f64) -> String {
    format!("{:.8e}", x)
}

/// Run summary; every field is recomputable from the diagnostics CSV plus
/// the configuration.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub csv_path: PathBuf,
    pub rows: usize,
    /// Mean |bias error| per axis over the final quarter of the run.
    pub mean_abs_pve: [f64; 3],
    pub mean_abs_pwe: [f64; 3],
    pub v_first: f64,
    pub v_final: f64,
    pub v_max: f64,
    pub l_bound: f64,
    pub gain_ok: bool,
    pub gain_margin: f64,
    pub wall_clock_s: f64,
}

/// Options controlling artifact emission.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Dump the windowed error fields as PFM every N frames.
    pub dump_every: Option<usize>,
}

/// Builds the configured scene together with the trajectory envelope
/// (centered on the starting camera position).
pub fn build_scene(cfg: &SimConfig) -> Result<(Scene, Envelope)> {
    let envelope = Envelope {
        center: cfg.camera_pos,
        half: Vector3::new(cfg.envelope_half, cfg.envelope_half, cfg.envelope_half),
    };
    let scene = match cfg.scene_kind {
        SceneKind::Room => make_room_scene(
            &RoomConfig {
                size: cfg.room_size,
                amplitude: cfg.texture_amplitude,
                freq_h: cfg.texture_freq_h,
                freq_v: cfg.texture_freq_v,
            },
            &envelope,
        )?,
        SceneKind::Sphere => Scene::new(
            Surface::Sphere {
                radius: cfg.sphere_radius,
            },
            Texture::Solid {
                base: 128.5,
                amplitude: cfg.texture_amplitude.min(127.5),
                k: Vector3::new(
                    std::f64::consts::TAU * cfg.texture_freq_h,
                    std::f64::consts::TAU * cfg.texture_freq_v,
                    std::f64::consts::PI * (cfg.texture_freq_h + cfg.texture_freq_v),
                ),
                phase: 0.7,
            },
            &envelope,
        )?,
        SceneKind::Revolution => make_axisymmetric_scene(
            UnitDir::new(0.0, 0.0, 1.0),
            spheroid_profile(cfg.rev_radius, cfg.rev_height, 512),
            Texture::AxialSinusoid {
                base: 128.5,
                amplitude: cfg.texture_amplitude.min(127.5),
                freq: cfg.texture_freq_h,
            },
            &envelope,
        )?,
    };
    Ok((scene, envelope))
}

/// Starting pose from the configured position/forward/up triple. The camera
/// frame is (right, down, forward) = (x, y, z).
pub fn initial_pose(cfg: &SimConfig) -> Result<CameraPose> {
    let forward = cfg.camera_forward;
    if forward.norm() < 1e-9 || cfg.camera_up.norm() < 1e-9 {
        return Err(Error::BadConfig("camera.forward/up must be nonzero".into()));
    }
    let fwd = forward.normalize();
    let mut down = -cfg.camera_up;
    down -= fwd * fwd.dot(&down);
    if down.norm() < 1e-9 {
        return Err(Error::BadConfig(
            "camera.up must not be parallel to camera.forward".into(),
        ));
    }
    let down = down.normalize();
    let right = down.cross(&fwd);
    let rot = Matrix3::from_columns(&[right, down, fwd]);
    Ok(CameraPose::new(
        UnitQuaternion::from_matrix(&rot),
        cfg.camera_pos,
    ))
}

fn observer_gains(cfg: &SimConfig) -> ObserverGains {
    ObserverGains {
        k_y: cfg.k_y,
        k_d: cfg.k_d,
        k_w: cfg.k_w,
        k_v: cfg.k_v,
        lambda_y: cfg.lambda_y,
        lambda_d: cfg.lambda_d,
    }
}

fn frame_noise(cfg: &SimConfig, frame: u64) -> Option<FrameNoise> {
    if cfg.sigma_y > 0.0 || cfg.sigma_d > 0.0 {
        Some(FrameNoise {
            sigma_y: cfg.sigma_y,
            sigma_d: cfg.sigma_d,
            seed: cfg.seed,
            frame,
        })
    } else {
        None
    }
}

fn twist_noise(cfg: &SimConfig) -> Option<TwistNoise> {
    if cfg.sigma_v > 0.0 || cfg.sigma_w > 0.0 {
        Some(TwistNoise {
            sigma_v: cfg.sigma_v,
            sigma_w: cfg.sigma_w,
            seed: cfg.seed ^ 0x5a5a_5a5a,
        })
    } else {
        None
    }
}

fn substeps_for(cfg: &SimConfig, cfl_frame: f64) -> usize {
    if cfg.substeps > 0 {
        cfg.substeps
    } else {
        ((cfl_frame / CFL_TARGET).ceil() as usize).clamp(1, MAX_SUBSTEPS)
    }
}

struct CsvWriter {
    w: BufWriter<File>,
    rows: usize,
}

impl CsvWriter {
    fn create(path: &Path) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CSV_HEADER.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(Self { w, rows: 0 })
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &mut self,
        t: f64,
        pvh: &Vector3<f64>,
        pwh: &Vector3<f64>,
        pve: &Vector3<f64>,
        pwe: &Vector3<f64>,
        v: f64,
        f: f64,
        boundary: f64,
        l: f64,
        cfl: f64,
    ) -> Result<()> {
        let cols = [
            t, pvh.x, pvh.y, pvh.z, pwh.x, pwh.y, pwh.z, pve.x, pve.y, pve.z, pwe.x, pwe.y,
            pwe.z, v, f, boundary, l, cfl,
        ];
        let line = cols.map(fmt9).join(",");
        self.w.write_all(line.as_bytes())?;
        self.w.write_all(b"\n")?;
        self.rows += 1;
        Ok(())
    }

    fn finish(mut self) -> Result<usize> {
        self.w.flush()?;
        Ok(self.rows)
    }
}

/// Advances the pose over one frame interval with four RK4 substeps,
/// resampling the trajectory at substep midpoints.
fn advance_pose(
    pose: &CameraPose,
    profile: &TrajectoryProfile,
    t: f64,
    dt_frame: f64,
    envelope: &Envelope,
) -> Result<CameraPose> {
    let mut p = *pose;
    let h = dt_frame / 4.0;
    for s in 0..4 {
        let tw = profile.sample((t + (s as f64 + 0.5) * h).min(profile.duration))?;
        p = integrate_pose(&p, &tw, h, envelope)?;
    }
    Ok(p)
}

/// Runs the configured experiment and writes `diagnostics.csv` (plus any
/// requested field dumps) under `out_dir`.
pub fn run_experiment(cfg: &SimConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunReport> {
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let gains = observer_gains(cfg);
    gains.validate()?;
    let (scene, envelope) = build_scene(cfg)?;
    let profile = cfg.trajectory_profile();
    let bias = BiasPair {
        p_v: cfg.bias_pv,
        p_w: cfg.bias_pw,
    };
    let pose0 = initial_pose(cfg)?;
    let csv_path = out_dir.join("diagnostics.csv");
    let mut csv = CsvWriter::create(&csv_path)?;
    let dt_frame = 1.0 / cfg.rate_hz;
    let n_frames = cfg.n_frames();
    let tw_noise = twist_noise(cfg);

    let mut l_running = 0.0f64;

    match cfg.observer {
        ObserverKind::Cap => {
            let grid = PinholeGrid::new(
                cfg.grid_width,
                cfg.grid_height,
                cfg.fov_h_deg.to_radians(),
                cfg.fov_v_deg.to_radians(),
            )?;
            let (k1, k2) = cfg.window_margins();
            let window = build_window(&grid, k1, k2)?;
            let mut pose = pose0;
            let mut state: Option<CapObserverState> = None;
            for k in 0..=n_frames {
                let t = k as f64 * dt_frame;
                let (y, d) = render(&scene, &pose, &grid, frame_noise(cfg, k as u64).as_ref())?;
                let truth = profile.sample(t.min(profile.duration))?;
                let meas = measured_twist(&truth, &bias, tw_noise.as_ref(), k as u64);
                let st = state.get_or_insert_with(|| {
                    CapObserverState::from_measurements(&window, &y, &d)
                });
                l_running = l_running.max(compute_l_frame(&grid, &d, &truth.v)?);
                let (sample, boundary) =
                    cap_lyapunov(&grid, st, &y, &d, &window, &bias, &gains, &truth)?;
                let adv = advection_field(
                    &grid,
                    &d,
                    &(meas.w - st.p_w_hat),
                    &(meas.v - st.p_v_hat),
                    true,
                    DIV_DEPTH_FLOOR,
                )?;
                let cfl_frame = grid.max_cfl(&adv.vectors, dt_frame);
                let n_sub = substeps_for(cfg, cfl_frame);
                let cfl_exec = cfl_frame / n_sub as f64;
                if cfl_exec > 0.5 {
                    log::warn!(
                        "transport CFL {cfl_exec:.2} above 0.5 at frame {k}; \
                         expect instability (requested substeps too few)"
                    );
                }
                let pve = st.p_v_hat - bias.p_v;
                let pwe = st.p_w_hat - bias.p_w;
                csv.row(
                    t, &st.p_v_hat, &st.p_w_hat, &pve, &pwe, sample.v, sample.f, boundary,
                    l_running, cfl_exec,
                )?;
                if let Some(every) = opts.dump_every {
                    if every > 0 && k % every == 0 {
                        let mut xe = ScalarField::zeros(grid.cols(), grid.rows());
                        let mut le = ScalarField::zeros(grid.cols(), grid.rows());
                        for kk in 0..grid.len() {
                            let phi = window.phi.as_slice()[kk];
                            xe.as_mut_slice()[kk] =
                                st.x_hat.as_slice()[kk] - phi * y.as_slice()[kk];
                            le.as_mut_slice()[kk] =
                                st.l_hat.as_slice()[kk] - phi * d.as_slice()[kk];
                        }
                        write_pfm(&out_dir.join(format!("x_err_{k:06}.pfm")), &xe)?;
                        write_pfm(&out_dir.join(format!("l_err_{k:06}.pfm")), &le)?;
                    }
                }
                if k == n_frames {
                    break;
                }
                let dt_sub = dt_frame / n_sub as f64;
                let mut next = st.clone();
                for _ in 0..n_sub {
                    next = observer_step_cap(
                        &grid, &next, &y, &d, &window, &meas.w, &meas.v, &gains, dt_sub,
                    )?;
                }
                state = Some(next);
                pose = advance_pose(&pose, &profile, t, dt_frame, &envelope)?;
            }
        }
        ObserverKind::Sphere => {
            let grid = LatLongGrid::new(cfg.sphere_grid_w, cfg.sphere_grid_h)?;
            let mut pose = pose0;
            let mut state: Option<ObserverState> = None;
            for k in 0..=n_frames {
                let t = k as f64 * dt_frame;
                let (y, d) = render(&scene, &pose, &grid, frame_noise(cfg, k as u64).as_ref())?;
                let truth = profile.sample(t.min(profile.duration))?;
                let meas = measured_twist(&truth, &bias, tw_noise.as_ref(), k as u64);
                let st = state.get_or_insert_with(|| ObserverState::from_measurements(&y, &d));
                l_running = l_running.max(compute_l_frame(&grid, &d, &truth.v)?);
                let sample = lyapunov_value(&grid, st, &y, &d, &bias, &gains, l_running)?;
                let adv = advection_field(
                    &grid,
                    &d,
                    &(meas.w - st.p_w_hat),
                    &(meas.v - st.p_v_hat),
                    true,
                    DIV_DEPTH_FLOOR,
                )?;
                let cfl_frame = grid.max_cfl(&adv.vectors, dt_frame);
                let n_sub = substeps_for(cfg, cfl_frame);
                let cfl_exec = cfl_frame / n_sub as f64;
                let pve = st.p_v_hat - bias.p_v;
                let pwe = st.p_w_hat - bias.p_w;
                csv.row(
                    t, &st.p_v_hat, &st.p_w_hat, &pve, &pwe, sample.v, sample.f, 0.0,
                    l_running, cfl_exec,
                )?;
                if k == n_frames {
                    break;
                }
                let dt_sub = dt_frame / n_sub as f64;
                let mut next = st.clone();
                for _ in 0..n_sub {
                    next = observer_step_sphere(
                        &grid, &next, &y, &d, &meas.w, &meas.v, &gains, dt_sub,
                    )?;
                }
                state = Some(next);
                pose = advance_pose(&pose, &profile, t, dt_frame, &envelope)?;
            }
        }
    }

    csv.finish()?;
    // The written CSV is the source of truth for the summary.
    let mut report = report_from_csv(&csv_path, gains.k_y.min(gains.k_d))?;
    let (gain_ok, gain_margin) = check_gain_condition(&gains, report.l_bound);
    report.gain_ok = gain_ok;
    report.gain_margin = gain_margin;
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Mean absolute bias error per axis over the final quarter of the samples.
fn final_window_means(
    pve: &[Vector3<f64>],
    pwe: &[Vector3<f64>],
) -> ([f64; 3], [f64; 3]) {
    let n = pve.len();
    let start = n - (n / 4).max(1);
    let mut mv = [0.0; 3];
    let mut mw = [0.0; 3];
    let count = (n - start) as f64;
    for k in start..n {
        for a in 0..3 {
            mv[a] += pve[k][a].abs() / count;
            mw[a] += pwe[k][a].abs() / count;
        }
    }
    (mv, mw)
}

/// Parsed diagnostics rows (all 18 columns per row).
pub fn parse_csv(path: &Path) -> Result<Vec<[f64; 18]>> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::MissingCsv(path.display().to_string()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(Error::MissingCsv(format!("{}: bad header", path.display()))),
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = [0.0; 18];
        let mut count = 0;
        for (slot, tok) in row.iter_mut().zip(line.split(',')) {
            *slot = tok
                .parse()
                .map_err(|_| Error::MissingCsv(format!("bad number '{tok}'")))?;
            count += 1;
        }
        if count != 18 {
            return Err(Error::MissingCsv("short row".into()));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::MissingCsv(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(rows)
}

/// Recomputes the run summary from the diagnostics CSV; `min_field_gain` is
/// `min(k_y, k_d)` from the configuration (the CSV carries no gains).
pub fn report_from_csv(path: &Path, min_field_gain: f64) -> Result<RunReport> {
    let rows = parse_csv(path)?;
    let pve: Vec<Vector3<f64>> = rows
        .iter()
        .map(|r| Vector3::new(r[7], r[8], r[9]))
        .collect();
    let pwe: Vec<Vector3<f64>> = rows
        .iter()
        .map(|r| Vector3::new(r[10], r[11], r[12]))
        .collect();
    let (mean_abs_pve, mean_abs_pwe) = final_window_means(&pve, &pwe);
    let l_bound = rows.last().unwrap()[16];
    let margin = min_field_gain - l_bound / 2.0;
    Ok(RunReport {
        csv_path: path.to_path_buf(),
        rows: rows.len(),
        mean_abs_pve,
        mean_abs_pwe,
        v_first: rows.first().unwrap()[13],
        v_final: rows.last().unwrap()[13],
        v_max: rows.iter().map(|r| r[13]).fold(f64::NEG_INFINITY, f64::max),
        l_bound,
        gain_ok: margin > 0.0,
        gain_margin: margin,
        wall_clock_s: 0.0,
    })
}

/// Ground-truth pipeline without the observer: writes `twists.csv` with the
/// true and measured twist per frame, and reports the minimum rendered depth.
pub fn run_simulate(cfg: &SimConfig, out_dir: &Path) -> Result<(PathBuf, f64)> {
    std::fs::create_dir_all(out_dir)?;
    let (scene, envelope) = build_scene(cfg)?;
    let profile = cfg.trajectory_profile();
    let bias = BiasPair {
        p_v: cfg.bias_pv,
        p_w: cfg.bias_pw,
    };
    let grid = PinholeGrid::new(
        cfg.grid_width,
        cfg.grid_height,
        cfg.fov_h_deg.to_radians(),
        cfg.fov_v_deg.to_radians(),
    )?;
    let tw_noise = twist_noise(cfg);
    let mut pose = initial_pose(cfg)?;
    let path = out_dir.join("twists.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "t,v_x,v_y,v_z,w_x,w_y,w_z,vm_x,vm_y,vm_z,wm_x,wm_y,wm_z")?;
    let dt_frame = 1.0 / cfg.rate_hz;
    let mut min_depth = f64::INFINITY;
    for k in 0..=cfg.n_frames() {
        let t = k as f64 * dt_frame;
        let truth = profile.sample(t.min(profile.duration))?;
        let meas = measured_twist(&truth, &bias, tw_noise.as_ref(), k as u64);
        let cols = [
            t, truth.v.x, truth.v.y, truth.v.z, truth.w.x, truth.w.y, truth.w.z, meas.v.x,
            meas.v.y, meas.v.z, meas.w.x, meas.w.y, meas.w.z,
        ];
        writeln!(w, "{}", cols.map(fmt9).join(","))?;
        let (_, d) = render(&scene, &pose, &grid, frame_noise(cfg, k as u64).as_ref())?;
        min_depth = min_depth.min(d.min());
        if k < cfg.n_frames() {
            pose = advance_pose(&pose, &profile, t, dt_frame, &envelope)?;
        }
    }
    w.flush()?;
    Ok((path, min_depth))
}

/// Renders the frame sequence to PGM (brightness) and PFM (depth) files.
pub fn run_render(cfg: &SimConfig, out_dir: &Path, max_frames: Option<usize>) -> Result<usize> {
    std::fs::create_dir_all(out_dir)?;
    let (scene, envelope) = build_scene(cfg)?;
    let profile = cfg.trajectory_profile();
    let grid = PinholeGrid::new(
        cfg.grid_width,
        cfg.grid_height,
        cfg.fov_h_deg.to_radians(),
        cfg.fov_v_deg.to_radians(),
    )?;
    let mut pose = initial_pose(cfg)?;
    let dt_frame = 1.0 / cfg.rate_hz;
    let total = max_frames
        .unwrap_or(usize::MAX)
        .min(cfg.n_frames() + 1);
    for k in 0..total {
        let t = k as f64 * dt_frame;
        let (y, d) = render(&scene, &pose, &grid, frame_noise(cfg, k as u64).as_ref())?;
        crate::imgio::write_pgm(&out_dir.join(format!("y_{k:06}.pgm")), &y)?;
        write_pfm(&out_dir.join(format!("d_{k:06}.pfm")), &d)?;
        if k + 1 < total {
            pose = advance_pose(&pose, &profile, t, dt_frame, &envelope)?;
        }
    }
    Ok(total)
}

/// Per-frame measurement bundle for tests that drive observers directly.
pub struct FrameStream {
    pub y: Vec<ScalarField>,
    pub d: Vec<ScalarField>,
    pub truth: Vec<BodyTwist>,
    pub meas: Vec<BodyTwist>,
    pub dt: f64,
}

/// Renders the whole measurement stream for the configured experiment on an
/// arbitrary grid (used by oracles and the acceptance suite).
pub fn render_stream<G: SphereGrid>(
    cfg: &SimConfig,
    grid: &G,
    frames: usize,
) -> Result<FrameStream> {
    let (scene, envelope) = build_scene(cfg)?;
    let profile = cfg.trajectory_profile();
    let bias = BiasPair {
        p_v: cfg.bias_pv,
        p_w: cfg.bias_pw,
    };
    let tw_noise = twist_noise(cfg);
    let mut pose = initial_pose(cfg)?;
    let dt = 1.0 / cfg.rate_hz;
    let mut out = FrameStream {
        y: Vec::with_capacity(frames),
        d: Vec::with_capacity(frames),
        truth: Vec::with_capacity(frames),
        meas: Vec::with_capacity(frames),
        dt,
    };
    for k in 0..frames {
        let t = k as f64 * dt;
        let (y, d) = render(&scene, &pose, grid, frame_noise(cfg, k as u64).as_ref())?;
        let truth = profile.sample(t.min(profile.duration))?;
        out.meas.push(measured_twist(&truth, &bias, tw_noise.as_ref(), k as u64));
        out.truth.push(truth);
        out.y.push(y);
        out.d.push(d);
        if k + 1 < frames {
            pose = advance_pose(&pose, &profile, t, dt, &envelope)?;
        }
    }
    Ok(out)
}
