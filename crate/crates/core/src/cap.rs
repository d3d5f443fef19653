//! Windowed bias observer on a camera cap: virtual observations `X = phi y`,
//! `Lambda = phi D` built from a smooth window `phi`, transport with
//! window-compensation terms, inflow boundary handling, and the cap Lyapunov
//! diagnostic with its boundary line integral.
//!
//! The stepper is generic over the chart grid so the same update can run on
//! the pinhole cap (production) and on a full lat-long grid with a uniform
//! window, where it must coincide with the plain full-sphere observer.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{PinholeGrid, ScalarField, SphereGrid};
use crate::kinematics::{BiasPair, BodyTwist};
use crate::observer::{LyapunovSample, ObserverGains, DIV_DEPTH_FLOOR};
use crate::sphere::TangentVec;
use crate::transport::advection_field;

/// Smooth window: 1 on an inner plateau, 0 on and outside an outer band,
/// with an analytically differentiated C^2 quintic ramp between them.
#[derive(Debug, Clone)]
pub struct WindowFunction {
    pub phi: ScalarField,
    pub grad_phi: Vec<Vector3<f64>>,
    /// Samples where phi > 0 (the open interior of the outer band); estimates
    /// are supported here.
    pub support: Vec<bool>,
    pub k1_margin: usize,
    pub k2_margin: usize,
}

impl WindowFunction {
    /// Window identically 1 with zero gradient (full-domain observer).
    pub fn uniform(cols: usize, rows: usize) -> Self {
        Self {
            phi: ScalarField::from_fn(cols, rows, |_, _| 1.0),
            grad_phi: vec![Vector3::zeros(); cols * rows],
            support: vec![true; cols * rows],
            k1_margin: 0,
            k2_margin: 0,
        }
    }
}

/// Quintic smoothstep ramp from 1 at s = 0 to 0 at s = 1 with vanishing
/// first and second derivatives at both ends.
fn ramp(s: f64) -> f64 {
    1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn ramp_deriv(s: f64) -> f64 {
    -30.0 * s * s * (1.0 - s) * (1.0 - s)
}

/// Separable window profile along one chart axis: plateau half-width `a`,
/// support half-width `b`.
fn axis_profile(z: f64, a: f64, b: f64) -> (f64, f64) {
    let x = z.abs();
    if x <= a {
        (1.0, 0.0)
    } else if x >= b {
        (0.0, 0.0)
    } else {
        let s = (x - a) / (b - a);
        (ramp(s), ramp_deriv(s) * z.signum() / (b - a))
    }
}

/// Builds the window for a pinhole grid from pixel margins: the zero band
/// starts `k2_margin` pixels from the frame edge, the plateau `k1_margin`
/// pixels in. Requires `0 < k2_margin < k1_margin` with a plateau left over.
pub fn build_window(grid: &PinholeGrid, k1_margin: usize, k2_margin: usize) -> Result<WindowFunction> {
    if k2_margin == 0 || k1_margin <= k2_margin {
        return Err(Error::BadMargins(format!(
            "need 0 < k2_margin < k1_margin, got k1 = {k1_margin}, k2 = {k2_margin}"
        )));
    }
    let (dz1, dz2) = grid.spacing();
    let (fh, fv) = grid.fov();
    let t1 = (fh / 2.0).tan();
    let t2 = (fv / 2.0).tan();
    let a1 = t1 - k1_margin as f64 * dz1;
    let b1 = t1 - k2_margin as f64 * dz1;
    let a2 = t2 - k1_margin as f64 * dz2;
    let b2 = t2 - k2_margin as f64 * dz2;
    if a1 <= 0.0 || a2 <= 0.0 {
        return Err(Error::BadMargins(
            "margins leave no interior plateau".into(),
        ));
    }
    let n = grid.len();
    let mut phi = ScalarField::zeros(grid.cols(), grid.rows());
    let mut grad_phi = vec![Vector3::zeros(); n];
    let mut support = vec![false; n];
    for j in 0..grid.rows() {
        for i in 0..grid.cols() {
            let k = grid.idx(i, j);
            let (p1, d1) = axis_profile(grid.z1(i), a1, b1);
            let (p2, d2) = axis_profile(grid.z2(j), a2, b2);
            phi.as_mut_slice()[k] = p1 * p2;
            let (g1, g2) = grid.dual(k);
            grad_phi[k] = g1 * (d1 * p2) + g2 * (p1 * d2);
            support[k] = p1 * p2 > 0.0;
        }
    }
    Ok(WindowFunction {
        phi,
        grad_phi,
        support,
        k1_margin,
        k2_margin,
    })
}

/// Windowed estimates and bias estimates of the cap observer.
#[derive(Debug, Clone)]
pub struct CapObserverState {
    pub x_hat: ScalarField,
    pub l_hat: ScalarField,
    pub p_w_hat: Vector3<f64>,
    pub p_v_hat: Vector3<f64>,
    pub t: f64,
}

impl CapObserverState {
    /// Windowed initialization from the first measured frame, biases at zero.
    pub fn from_measurements(window: &WindowFunction, y: &ScalarField, d: &ScalarField) -> Self {
        let shape = y.shape();
        let x_hat = ScalarField::from_vec(
            shape.0,
            shape.1,
            y.as_slice()
                .iter()
                .zip(window.phi.as_slice())
                .map(|(v, p)| p * v)
                .collect(),
        );
        let l_hat = ScalarField::from_vec(
            shape.0,
            shape.1,
            d.as_slice()
                .iter()
                .zip(window.phi.as_slice())
                .map(|(v, p)| p * v)
                .collect(),
        );
        Self {
            x_hat,
            l_hat,
            p_w_hat: Vector3::zeros(),
            p_v_hat: Vector3::zeros(),
            t: 0.0,
        }
    }
}

/// One explicit Euler step of the windowed observer. Upwind transport with
/// the zero-normal-derivative rule on inflow edges, the window-compensation
/// terms, corrections toward the virtual observations, and the bias
/// integrals over the cap. Estimates are projected back onto the window
/// support after the update (the virtual observations vanish there).
#[allow(clippy::too_many_arguments)]
pub fn observer_step_cap<G: SphereGrid>(
    grid: &G,
    state: &CapObserverState,
    y_meas: &ScalarField,
    d_meas: &ScalarField,
    window: &WindowFunction,
    wm: &Vector3<f64>,
    vm: &Vector3<f64>,
    gains: &ObserverGains,
    dt: f64,
) -> Result<CapObserverState> {
    gains.validate()?;
    grid.check_shape(&state.x_hat)?;
    grid.check_shape(&state.l_hat)?;
    grid.check_shape(y_meas)?;
    grid.check_shape(d_meas)?;
    grid.check_shape(&window.phi)?;

    let w_eff = wm - state.p_w_hat;
    let v_eff = vm - state.p_v_hat;
    let adv = advection_field(grid, d_meas, &w_eff, &v_eff, true, DIV_DEPTH_FLOOR)?;

    let xh = state.x_hat.as_slice();
    let lh = state.l_hat.as_slice();
    let ym = y_meas.as_slice();
    let dm = d_meas.as_slice();
    let phi = window.phi.as_slice();
    let cols = grid.cols();

    let mut x_next = vec![0.0; grid.len()];
    let mut l_next = vec![0.0; grid.len()];
    x_next
        .par_chunks_mut(cols)
        .zip(l_next.par_chunks_mut(cols))
        .enumerate()
        .for_each(|(j, (xrow, lrow))| {
            for i in 0..cols {
                let k = j * cols + i;
                if !window.support[k] {
                    xrow[i] = 0.0;
                    lrow[i] = 0.0;
                    continue;
                }
                let a = &adv.vectors[k];
                let eta = grid.dir(k).vec();
                let comp = window.grad_phi[k].dot(a);
                let x_obs = phi[k] * ym[k];
                let l_obs = phi[k] * dm[k];
                let tx = -grid.advect_upwind(xh, k, a) + ym[k] * comp
                    + gains.k_y * (x_obs - xh[k]);
                let tl = -grid.advect_upwind(lh, k, a) + dm[k] * comp
                    - phi[k] * v_eff.dot(&eta)
                    + gains.k_d * (l_obs - lh[k]);
                xrow[i] = xh[k] + dt * tx;
                lrow[i] = lh[k] + dt * tl;
            }
        });

    // Bias integrals over the cap, from the pre-step estimates. The
    // window-compensated gradients (grad X_hat - y grad phi) play the role of
    // the plain estimate gradients.
    let gx = grid.gradient_field(&state.x_hat)?;
    let gl = grid.gradient_field(&state.l_hat)?;
    let mut dw = Vector3::zeros();
    let mut dv = Vector3::zeros();
    for k in 0..grid.len() {
        let eta = grid.dir(k).vec();
        let wq = grid.weight(k);
        let ex = xh[k] - phi[k] * ym[k];
        let el = lh[k] - phi[k] * dm[k];
        let inv_d = 1.0 / dm[k].max(DIV_DEPTH_FLOOR);
        let gx_eff = gx[k] - window.grad_phi[k] * ym[k];
        let gl_eff = gl[k] - window.grad_phi[k] * dm[k];
        dw += (gx_eff.cross(&eta) * (gains.lambda_y * ex)
            + gl_eff.cross(&eta) * (gains.lambda_d * el))
            * wq;
        let double_cross_x = eta.cross(&eta.cross(&gx_eff));
        let double_cross_l = eta.cross(&eta.cross(&gl_eff));
        dv += (eta * (gains.lambda_d * el)
            + double_cross_x * (gains.lambda_y * ex * inv_d)
            + double_cross_l * (gains.lambda_d * el * inv_d))
            * wq;
    }
    let p_w_hat = state.p_w_hat - dw * (gains.k_w * dt);
    let p_v_hat = state.p_v_hat - dv * (gains.k_v * dt);

    let x_hat = ScalarField::from_vec(cols, grid.rows(), x_next);
    let l_hat = ScalarField::from_vec(cols, grid.rows(), l_next);
    let step = (state.t / dt.max(1e-12)).round() as u64;
    if !x_hat.is_finite() || !l_hat.is_finite() {
        return Err(Error::NonfiniteField {
            what: "cap observer fields",
            step,
        });
    }
    if !(p_w_hat.iter().all(|v| v.is_finite()) && p_v_hat.iter().all(|v| v.is_finite())) {
        return Err(Error::NonfiniteField {
            what: "cap bias estimates",
            step,
        });
    }
    Ok(CapObserverState {
        x_hat,
        l_hat,
        p_w_hat,
        p_v_hat,
        t: state.t + dt,
    })
}

/// Cap Lyapunov diagnostic: the windowed functional, the interior
/// dissipation bound with the pointwise divergence of the true advection,
/// and the boundary line integral over the frame edges (true twist).
#[allow(clippy::too_many_arguments)]
pub fn cap_lyapunov(
    grid: &PinholeGrid,
    state: &CapObserverState,
    y_meas: &ScalarField,
    d_meas: &ScalarField,
    window: &WindowFunction,
    true_bias: &BiasPair,
    gains: &ObserverGains,
    true_twist: &BodyTwist,
) -> Result<(LyapunovSample, f64)> {
    grid.check_shape(&state.x_hat)?;
    grid.check_shape(y_meas)?;
    let xh = state.x_hat.as_slice();
    let lh = state.l_hat.as_slice();
    let ym = y_meas.as_slice();
    let dm = d_meas.as_slice();
    let phi = window.phi.as_slice();
    let grad_d = grid.gradient_field(d_meas)?;

    let mut field_term = 0.0;
    let mut f_term = 0.0;
    for k in 0..grid.len() {
        let ex = xh[k] - phi[k] * ym[k];
        let el = lh[k] - phi[k] * dm[k];
        let wq = grid.weight(k);
        field_term += (gains.lambda_y * ex * ex + gains.lambda_d * el * el) * wq;
        let eta = grid.dir(k).vec();
        let dd = dm[k].max(DIV_DEPTH_FLOOR);
        let div_w = (2.0 * eta.dot(&true_twist.v)
            - (grad_d[k] / dd).dot(&eta.cross(&eta.cross(&true_twist.v))))
            / dd;
        f_term += (gains.lambda_y * (gains.k_y - div_w / 2.0) * ex * ex
            + gains.lambda_d * (gains.k_d - div_w / 2.0) * el * el)
            * wq;
    }
    let ew = state.p_w_hat - true_bias.p_w;
    let ev = state.p_v_hat - true_bias.p_v;
    let v = 0.5 * field_term + ew.norm_squared() / (2.0 * gains.k_w)
        + ev.norm_squared() / (2.0 * gains.k_v);

    // Boundary integral over the four frame edges, trapezoid in the edge
    // coordinate, integrand (lambda_y X~^2 + lambda_d L~^2) (W . n) / 2 with
    // the full advection of the true motion.
    let w_field = advection_field(grid, d_meas, &true_twist.w, &true_twist.v, true, DIV_DEPTH_FLOOR)?;
    let (w_px, h_px) = (grid.cols(), grid.rows());
    let mut boundary = 0.0;
    let mut edge_accum = |k: usize, n_dir: Vector3<f64>, dl: f64, trap: f64| {
        let ex = xh[k] - phi[k] * ym[k];
        let el = lh[k] - phi[k] * dm[k];
        let dens = gains.lambda_y * ex * ex + gains.lambda_d * el * el;
        boundary += dens * 0.5 * w_field.vectors[k].dot(&n_dir) * dl * trap;
    };
    let (dz1, dz2) = grid.spacing();
    for j in 0..h_px {
        let trap = if j == 0 || j == h_px - 1 { 0.5 } else { 1.0 };
        for (i, sign) in [(0usize, -1.0f64), (w_px - 1, 1.0)] {
            let k = grid.idx(i, j);
            let (e1, e2) = grid.chart_basis(k);
            let t_edge = e2.normalize();
            let n_raw = e1 * sign;
            let n = (n_raw - t_edge * n_raw.dot(&t_edge)).normalize();
            edge_accum(k, n, e2.norm() * dz2, trap);
        }
    }
    for i in 0..w_px {
        let trap = if i == 0 || i == w_px - 1 { 0.5 } else { 1.0 };
        for (j, sign) in [(0usize, -1.0f64), (h_px - 1, 1.0)] {
            let k = grid.idx(i, j);
            let (e1, e2) = grid.chart_basis(k);
            let t_edge = e1.normalize();
            let n_raw = e2 * sign;
            let n = (n_raw - t_edge * n_raw.dot(&t_edge)).normalize();
            edge_accum(k, n, e1.norm() * dz1, trap);
        }
    }

    Ok((
        LyapunovSample {
            v,
            f: f_term.max(0.0),
            t: state.t,
        },
        boundary,
    ))
}

/// Consistency helper for tests: the window gradient mapped through the
/// chart at one pixel.
pub fn window_gradient_at(grid: &PinholeGrid, window: &WindowFunction, i: usize, j: usize) -> TangentVec {
    let k = grid.idx(i, j);
    TangentVec::new(grid.dir(k), window.grad_phi[k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{LatLongGrid, Stencil};
    use crate::kinematics::{CameraPose, Envelope};
    use crate::observer::{observer_step_sphere, ObserverState};
    use crate::scene::{make_room_scene, render, RoomConfig, Scene, Surface, Texture};
    use nalgebra::UnitQuaternion;

    fn test_grid() -> PinholeGrid {
        PinholeGrid::new(64, 48, 50f64.to_radians(), 40f64.to_radians()).unwrap()
    }

    fn room_fields(grid: &PinholeGrid) -> (ScalarField, ScalarField) {
        let env = Envelope {
            center: Vector3::zeros(),
            half: Vector3::new(0.4, 0.4, 0.4),
        };
        let scene = make_room_scene(&RoomConfig::default(), &env).unwrap();
        let q = UnitQuaternion::rotation_between(&Vector3::z(), &Vector3::x()).unwrap();
        render(&scene, &CameraPose::new(q, Vector3::zeros()), grid, None).unwrap()
    }

    #[test]
    fn window_margins_validated() {
        let grid = test_grid();
        assert!(matches!(
            build_window(&grid, 10, 0),
            Err(Error::BadMargins(_))
        ));
        assert!(matches!(
            build_window(&grid, 5, 5),
            Err(Error::BadMargins(_))
        ));
        // Margins that consume the whole frame leave no plateau.
        assert!(matches!(
            build_window(&grid, 40, 2),
            Err(Error::BadMargins(_))
        ));
        assert!(build_window(&grid, 10, 5).is_ok());
    }

    #[test]
    fn window_plateau_band_and_zero_zone() {
        let grid = test_grid();
        let w = build_window(&grid, 10, 5).unwrap();
        // Center pixel: plateau.
        let (ci, cj) = (32, 24);
        assert_eq!(w.phi.get(ci, cj), 1.0);
        assert_eq!(w.grad_phi[grid.idx(ci, cj)].norm(), 0.0);
        // Frame edge: zero with zero gradient.
        assert_eq!(w.phi.get(0, 0), 0.0);
        assert_eq!(w.grad_phi[grid.idx(0, 0)].norm(), 0.0);
        assert!(!w.support[grid.idx(0, 0)]);
        // Every value within [0, 1].
        assert!(w.phi.as_slice().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn window_midband_value_and_gradient_direction() {
        // A purely horizontal band position (vertical plateau): the ramp
        // midpoint gives phi = 1/2 and a gradient along the first chart
        // direction.
        let grid = PinholeGrid::new(64, 48, 0.9, 0.7).unwrap();
        let k1 = 16usize;
        let k2 = 4usize;
        let w = build_window(&grid, k1, k2).unwrap();
        let (dz1, _) = grid.spacing();
        let t1 = (0.9f64 / 2.0).tan();
        let a1 = t1 - k1 as f64 * dz1;
        let b1 = t1 - k2 as f64 * dz1;
        let mid = (a1 + b1) / 2.0;
        // Find the pixel whose center is nearest the band midpoint on row 24.
        let (mut best_i, mut best_d) = (0usize, f64::INFINITY);
        for i in 0..64 {
            let d = (grid.z1(i) - mid).abs();
            if d < best_d {
                best_d = d;
                best_i = i;
            }
        }
        let j = 24;
        let s = ((grid.z1(best_i) - a1) / (b1 - a1)).clamp(0.0, 1.0);
        let expect = ramp(s);
        assert!((w.phi.get(best_i, j) - expect).abs() < 1e-12);
        assert!((expect - 0.5).abs() < 0.1, "midpoint ramp near half");
        let g = w.grad_phi[grid.idx(best_i, j)];
        let (e1, e2) = grid.chart_basis(grid.idx(best_i, j));
        assert!(g.dot(&e1).abs() > 1e-3);
        assert!(g.dot(&e2).abs() < 1e-12);
    }

    #[test]
    fn window_gradient_consistent_with_chart_stencil() {
        let grid = PinholeGrid::new(96, 72, 0.9, 0.7).unwrap().with_stencil(Stencil::Central);
        let w = build_window(&grid, 24, 8).unwrap();
        let mut worst = 0.0f64;
        for j in 2..70 {
            for i in 2..94 {
                let num = grid.chart_gradient(&w.phi, i, j, Stencil::Central).unwrap();
                let k = grid.idx(i, j);
                worst = worst.max((num.v - w.grad_phi[k]).norm());
            }
        }
        // Second-order stencil against the analytic ramp derivative.
        assert!(worst < 0.4, "worst {worst}");
        let fine = PinholeGrid::new(192, 144, 0.9, 0.7).unwrap();
        let wf = build_window(&fine, 48, 16).unwrap();
        let mut worst_f = 0.0f64;
        for j in 2..142 {
            for i in 2..190 {
                let num = fine.chart_gradient(&wf.phi, i, j, Stencil::Central).unwrap();
                let k = fine.idx(i, j);
                worst_f = worst_f.max((num.v - wf.grad_phi[k]).norm());
            }
        }
        assert!(worst_f < worst / 3.0, "{worst} -> {worst_f}");
    }

    #[test]
    fn static_exact_init_is_stationary() {
        let grid = test_grid();
        let (y, d) = room_fields(&grid);
        let w = build_window(&grid, 10, 5).unwrap();
        let state = CapObserverState::from_measurements(&w, &y, &d);
        let gains = ObserverGains::paper();
        let zero = Vector3::zeros();
        let next = observer_step_cap(&grid, &state, &y, &d, &w, &zero, &zero, &gains, 0.02).unwrap();
        assert!(next.x_hat.linf_diff(&state.x_hat) < 1e-14);
        assert!(next.l_hat.linf_diff(&state.l_hat) < 1e-14);
        assert_eq!(next.p_w_hat, Vector3::zeros());
        assert_eq!(next.p_v_hat, Vector3::zeros());
    }

    #[test]
    fn uniform_window_reduces_to_sphere_observer() {
        // On a lat-long grid with phi = 1 the windowed update must coincide
        // with the plain full-sphere observer update.
        let grid = LatLongGrid::new(48, 24).unwrap();
        let env = Envelope {
            center: Vector3::zeros(),
            half: Vector3::new(0.4, 0.4, 0.4),
        };
        let scene = Scene::new(
            Surface::Sphere { radius: 2.0 },
            Texture::Solid {
                base: 128.5,
                amplitude: 70.0,
                k: Vector3::new(1.7, 2.3, 1.1),
                phase: 0.3,
            },
            &env,
        )
        .unwrap();
        let pose = CameraPose::new(UnitQuaternion::identity(), Vector3::new(0.1, -0.2, 0.15));
        let (y, d) = render(&scene, &pose, &grid, None).unwrap();
        let gains = ObserverGains::paper();
        let wm = Vector3::new(0.07, -0.02, 0.04);
        let vm = Vector3::new(0.4, 0.2, -0.3);

        let mut sphere_state = ObserverState::from_measurements(&y, &d);
        sphere_state.p_w_hat = Vector3::new(0.01, 0.0, -0.01);
        sphere_state.p_v_hat = Vector3::new(0.1, -0.1, 0.2);
        let window = WindowFunction::uniform(grid.cols(), grid.rows());
        let mut cap_state = CapObserverState::from_measurements(&window, &y, &d);
        cap_state.p_w_hat = sphere_state.p_w_hat;
        cap_state.p_v_hat = sphere_state.p_v_hat;

        let dt = 0.01;
        for _ in 0..5 {
            sphere_state =
                observer_step_sphere(&grid, &sphere_state, &y, &d, &wm, &vm, &gains, dt).unwrap();
            cap_state =
                observer_step_cap(&grid, &cap_state, &y, &d, &window, &wm, &vm, &gains, dt)
                    .unwrap();
        }
        assert!(cap_state.x_hat.linf_diff(&sphere_state.y_hat) < 1e-12);
        assert!(cap_state.l_hat.linf_diff(&sphere_state.d_hat) < 1e-12);
        assert!((cap_state.p_w_hat - sphere_state.p_w_hat).norm() < 1e-14);
        assert!((cap_state.p_v_hat - sphere_state.p_v_hat).norm() < 1e-14);
    }

    #[test]
    fn support_preserved_outside_outer_band() {
        let grid = test_grid();
        let (y, d) = room_fields(&grid);
        let w = build_window(&grid, 10, 5).unwrap();
        let mut state = CapObserverState::from_measurements(&w, &y, &d);
        let gains = ObserverGains::paper();
        // Biased motion so the estimates genuinely move.
        let wm = Vector3::new(0.05, 0.02, -0.04);
        let vm = Vector3::new(0.6, 0.1, -0.2);
        for _ in 0..200 {
            state = observer_step_cap(&grid, &state, &y, &d, &w, &wm, &vm, &gains, 0.005).unwrap();
        }
        for k in 0..grid.len() {
            if !w.support[k] {
                assert!(state.x_hat.as_slice()[k].abs() <= 1e-12);
                assert!(state.l_hat.as_slice()[k].abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn cap_estimator_ignores_ground_truth_bias() {
        let grid = test_grid();
        let (y, d) = room_fields(&grid);
        let w = build_window(&grid, 10, 5).unwrap();
        let gains = ObserverGains::paper();
        let wm = Vector3::new(0.03, -0.01, 0.02);
        let vm = Vector3::new(0.2, 0.1, -0.1);
        let run = || {
            let mut s = CapObserverState::from_measurements(&w, &y, &d);
            for _ in 0..30 {
                s = observer_step_cap(&grid, &s, &y, &d, &w, &wm, &vm, &gains, 0.01).unwrap();
            }
            s
        };
        let a = run();
        let b = run();
        assert_eq!(a.p_w_hat, b.p_w_hat);
        assert_eq!(a.p_v_hat, b.p_v_hat);
        assert_eq!(a.x_hat.as_slice(), b.x_hat.as_slice());
    }

    #[test]
    fn cap_lyapunov_exact_init_and_static_boundary() {
        let grid = test_grid();
        let (y, d) = room_fields(&grid);
        let w = build_window(&grid, 10, 5).unwrap();
        let state = CapObserverState::from_measurements(&w, &y, &d);
        let gains = ObserverGains::paper();
        let bias = BiasPair {
            p_v: Vector3::new(2.5, 0.0, 0.0),
            p_w: Vector3::new(0.05, 0.0, 0.0),
        };
        let (sample, boundary) = cap_lyapunov(
            &grid,
            &state,
            &y,
            &d,
            &w,
            &bias,
            &gains,
            &BodyTwist::zero(),
        )
        .unwrap();
        let expect = bias.p_w.norm_squared() / (2.0 * gains.k_w)
            + bias.p_v.norm_squared() / (2.0 * gains.k_v);
        assert!((sample.v - expect).abs() < 1e-9 * expect);
        // Static camera: the advection vanishes, so the boundary term is 0.
        assert_eq!(boundary, 0.0);
    }

    #[test]
    fn cap_error_decays_with_biased_motion() {
        // Noiseless run with moderate bias error and paper-style gains: the
        // windowed field error peaks early and decays well below its peak.
        let grid = test_grid();
        let env = Envelope {
            center: Vector3::zeros(),
            half: Vector3::new(0.5, 0.5, 0.5),
        };
        let scene = make_room_scene(&RoomConfig::default(), &env).unwrap();
        let q0 = UnitQuaternion::rotation_between(&Vector3::z(), &Vector3::x()).unwrap();
        let mut pose = CameraPose::new(q0, Vector3::zeros());
        let w = build_window(&grid, 10, 5).unwrap();
        let (y0, d0) = render(&scene, &pose, &grid, None).unwrap();
        let mut state = CapObserverState::from_measurements(&w, &y0, &d0);
        let gains = ObserverGains::paper();
        let bias = BiasPair {
            p_v: Vector3::new(0.4, 0.0, 0.0),
            p_w: Vector3::new(0.02, 0.0, 0.0),
        };
        let twist = BodyTwist {
            v: Vector3::new(0.05, 0.02, -0.03),
            w: Vector3::new(0.02, -0.03, 0.01),
        };
        let dt_frame = 1.0 / 42.0;
        let env_wide = Envelope {
            center: Vector3::zeros(),
            half: Vector3::new(0.9, 0.9, 0.9),
        };
        let mut peak = 0.0f64;
        let mut late = 0.0f64;
        let horizon = 252; // 6 s
        for frame in 0..horizon {
            let (y, d) = render(&scene, &pose, &grid, None).unwrap();
            let wm = twist.w + bias.p_w;
            let vm = twist.v + bias.p_v;
            // Substep for transport stability.
            for _ in 0..8 {
                state = observer_step_cap(
                    &grid, &state, &y, &d, &w, &wm, &vm, &gains, dt_frame / 8.0,
                )
                .unwrap();
            }
            let mut err = 0.0f64;
            for k in 0..grid.len() {
                let e = state.x_hat.as_slice()[k] - w.phi.as_slice()[k] * y.as_slice()[k];
                err = err.max(e.abs());
            }
            if frame < 42 {
                peak = peak.max(err);
            } else if frame >= horizon - 42 {
                late = late.max(err);
            }
            pose = crate::kinematics::integrate_pose(&pose, &twist, dt_frame, &env_wide).unwrap();
        }
        assert!(late < peak, "late {late} vs peak {peak}");
    }
}
