//! Ground-truth transport layer: advection fields, residuals of the
//! brightness/depth transport equations on rendered sequences, and the
//! characteristics reference solver used as an oracle for every grid scheme.
//!
//! The brightness field obeys `df/dt = -grad(f) . A` with advection
//! `A(eta) = eta x (w + (1/D) eta x v)`; depth gains the source `-v . eta`.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{LatLongGrid, PinholeGrid, ScalarField, SphereGrid};
use crate::kinematics::{BiasPair, BodyTwist};
use crate::sphere::{sphere_to_pinhole, UnitDir};

/// Per-sample advection (or dissipation-bound) tangent vectors.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub vectors: Vec<Vector3<f64>>,
}

impl FlowField {
    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Advection vectors `eta x (w + (1/D) eta x v)` per sample; with
/// `include_omega = false` this is the dissipation-bound field
/// `eta x ((1/D) eta x v)`. Depth is floored at `div_floor` before division.
pub fn advection_field<G: SphereGrid>(
    grid: &G,
    depth: &ScalarField,
    w: &Vector3<f64>,
    v: &Vector3<f64>,
    include_omega: bool,
    div_floor: f64,
) -> Result<FlowField> {
    grid.check_shape(depth)?;
    let d = depth.as_slice();
    let vectors = (0..grid.len())
        .map(|k| {
            let eta = grid.dir(k).vec();
            let inv_d = 1.0 / d[k].max(div_floor);
            let mut inner = eta.cross(v) * inv_d;
            if include_omega {
                inner += w;
            }
            eta.cross(&inner)
        })
        .collect();
    Ok(FlowField { vectors })
}

/// Which transport equation a residual refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Brightness,
    Depth,
}

/// Residual of the transport equation on a rendered sequence at `t_index`:
/// `r = df/dt + grad(f) . A [+ v . eta]` with a central time difference and
/// the grid's canonical chart gradient. True (unbiased) twists must be fed.
pub fn pde_residual<G: SphereGrid>(
    grid: &G,
    fields: &[ScalarField],
    depths: &[ScalarField],
    twists: &[BodyTwist],
    t_index: usize,
    dt: f64,
    kind: FieldKind,
) -> Result<ScalarField> {
    if t_index == 0 || t_index + 1 >= fields.len() || fields.len() != depths.len() {
        return Err(Error::InsufficientFrames {
            index: t_index,
            len: fields.len(),
        });
    }
    let f = &fields[t_index];
    grid.check_shape(f)?;
    let twist = &twists[t_index];
    let adv = advection_field(grid, &depths[t_index], &twist.w, &twist.v, true, 1e-6)?;
    let grads = grid.gradient_field(f)?;
    let prev = fields[t_index - 1].as_slice();
    let next = fields[t_index + 1].as_slice();
    let mut out = ScalarField::zeros(grid.cols(), grid.rows());
    for k in 0..grid.len() {
        let dfdt = (next[k] - prev[k]) / (2.0 * dt);
        let mut r = dfdt + grads[k].dot(&adv.vectors[k]);
        if kind == FieldKind::Depth {
            r += twist.v.dot(&grid.dir(k).vec());
        }
        out.as_mut_slice()[k] = r;
    }
    Ok(out)
}

/// Piecewise-linear time series of measured twists.
#[derive(Debug, Clone)]
pub struct TwistSeries {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<BodyTwist>,
}

impl TwistSeries {
    pub fn sample(&self, t: f64) -> BodyTwist {
        let u = ((t - self.t0) / self.dt).clamp(0.0, (self.samples.len() - 1) as f64);
        let k = (u.floor() as usize).min(self.samples.len().saturating_sub(2));
        let a = u - k as f64;
        let (s0, s1) = (&self.samples[k], &self.samples[(k + 1).min(self.samples.len() - 1)]);
        BodyTwist {
            v: s0.v * (1.0 - a) + s1.v * a,
            w: s0.w * (1.0 - a) + s1.w * a,
        }
    }
}

/// Bias-estimate trajectory fed to the reference solver: either frozen or a
/// recorded per-frame sequence (linearly interpolated).
#[derive(Debug, Clone)]
pub enum BiasSeries {
    Constant(BiasPair),
    Sampled { t0: f64, dt: f64, samples: Vec<BiasPair> },
}

impl BiasSeries {
    pub fn sample(&self, t: f64) -> BiasPair {
        match self {
            BiasSeries::Constant(b) => *b,
            BiasSeries::Sampled { t0, dt, samples } => {
                let u = ((t - t0) / dt).clamp(0.0, (samples.len() - 1) as f64);
                let k = (u.floor() as usize).min(samples.len().saturating_sub(2));
                let a = u - k as f64;
                let (b0, b1) = (&samples[k], &samples[(k + 1).min(samples.len() - 1)]);
                BiasPair {
                    p_v: b0.p_v * (1.0 - a) + b1.p_v * a,
                    p_w: b0.p_w * (1.0 - a) + b1.p_w * a,
                }
            }
        }
    }
}

/// Scalar field sequence sampled bilinearly in the chart and linearly in
/// time. Pinhole-backed sources fail with `LeftDomain` outside the chart.
pub enum FieldSeries<'a> {
    Constant(f64),
    Pinhole {
        grid: &'a PinholeGrid,
        frames: &'a [ScalarField],
        t0: f64,
        dt: f64,
    },
    LatLong {
        grid: &'a LatLongGrid,
        frames: &'a [ScalarField],
        t0: f64,
        dt: f64,
    },
}

impl<'a> FieldSeries<'a> {
    pub fn sample(&self, t: f64, eta: UnitDir) -> Result<f64> {
        match self {
            FieldSeries::Constant(c) => Ok(*c),
            FieldSeries::Pinhole { grid, frames, t0, dt } => {
                let (z1, z2) = sphere_to_pinhole(eta).ok_or(Error::LeftDomain)?;
                let u = ((t - t0) / dt).clamp(0.0, (frames.len() - 1) as f64);
                let k = (u.floor() as usize).min(frames.len().saturating_sub(2));
                let a = u - k as f64;
                let f0 = grid.sample_chart(&frames[k], z1, z2).ok_or(Error::LeftDomain)?;
                let f1 = grid
                    .sample_chart(&frames[(k + 1).min(frames.len() - 1)], z1, z2)
                    .ok_or(Error::LeftDomain)?;
                Ok(f0 * (1.0 - a) + f1 * a)
            }
            FieldSeries::LatLong { grid, frames, t0, dt } => {
                let u = ((t - t0) / dt).clamp(0.0, (frames.len() - 1) as f64);
                let k = (u.floor() as usize).min(frames.len().saturating_sub(2));
                let a = u - k as f64;
                let f0 = grid.sample_dir(&frames[k], eta);
                let f1 = grid.sample_dir(&frames[(k + 1).min(frames.len() - 1)], eta);
                Ok(f0 * (1.0 - a) + f1 * a)
            }
        }
    }
}

/// Inputs shared by the characteristic tracer and the reference solver.
pub struct CharInputs<'a> {
    pub twists: &'a TwistSeries,
    pub bias_hat: &'a BiasSeries,
    pub depth: &'a FieldSeries<'a>,
}

impl<'a> CharInputs<'a> {
    /// Right-hand side of the characteristic equation at (t, eta).
    fn rhs(&self, t: f64, eta: &Vector3<f64>) -> Result<Vector3<f64>> {
        let tw = self.twists.sample(t);
        let bh = self.bias_hat.sample(t);
        let d = self.depth.sample(t, UnitDir::from_vector(*eta))?;
        let w_eff = tw.w - bh.p_w;
        let v_eff = tw.v - bh.p_v;
        Ok(eta.cross(&(w_eff + eta.cross(&v_eff) / d.max(1e-6))))
    }
}

/// A time-sampled path on the sphere; `etas[k]` is the position at
/// `t0 + k * dt` (`dt` may be negative for backward integration).
#[derive(Debug, Clone)]
pub struct CharacteristicPath {
    pub t0: f64,
    pub dt: f64,
    pub etas: Vec<UnitDir>,
}

impl CharacteristicPath {
    pub fn end(&self) -> UnitDir {
        *self.etas.last().unwrap()
    }
}

/// Integrates the characteristic equation from `t0` to `t1` (backward when
/// `t1 < t0`) with `n_steps` RK4 steps and per-step renormalization.
pub fn characteristic_flow(
    eta0: UnitDir,
    t0: f64,
    t1: f64,
    inputs: &CharInputs,
    n_steps: usize,
) -> Result<CharacteristicPath> {
    assert!(n_steps > 0);
    let dt = (t1 - t0) / n_steps as f64;
    let mut etas = Vec::with_capacity(n_steps + 1);
    etas.push(eta0);
    let mut eta = eta0.vec();
    for k in 0..n_steps {
        let t = t0 + k as f64 * dt;
        let k1 = inputs.rhs(t, &eta)?;
        let k2 = inputs.rhs(t + dt / 2.0, &(eta + k1 * (dt / 2.0)))?;
        let k3 = inputs.rhs(t + dt / 2.0, &(eta + k2 * (dt / 2.0)))?;
        let k4 = inputs.rhs(t + dt, &(eta + k3 * dt))?;
        eta += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        eta.normalize_mut();
        etas.push(UnitDir::from_vector(eta));
    }
    Ok(CharacteristicPath { t0, dt, etas })
}

/// Reference solver output: fields plus a validity mask (pixels whose
/// backward characteristic left the chart domain are flagged invalid rather
/// than extrapolated).
pub struct ReferenceSolution {
    pub y_hat: ScalarField,
    pub d_hat: ScalarField,
    pub valid: Vec<bool>,
}

/// Explicit characteristics solution of the relaxation-transport equations
/// at time `t`, for initial estimates `yhat0`, `dhat0` given on `grid`:
/// back-trace each pixel to 0, then accumulate the exponentially weighted
/// measurement integral along the path by the trapezoid rule.
#[allow(clippy::too_many_arguments)]
pub fn characteristics_reference_solution(
    grid: &PinholeGrid,
    yhat0: &ScalarField,
    dhat0: &ScalarField,
    y_meas: &FieldSeries,
    d_meas: &FieldSeries,
    inputs: &CharInputs,
    k_y: f64,
    k_d: f64,
    t: f64,
    n_steps: usize,
) -> Result<ReferenceSolution> {
    assert!(k_y > 0.0 && k_d > 0.0);
    grid.check_shape(yhat0)?;
    grid.check_shape(dhat0)?;
    let n = grid.len();
    let results: Vec<Option<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let pixel_value = |k: usize| -> Result<(f64, f64)> {
                let path = characteristic_flow(grid.dir(k), t, 0.0, inputs, n_steps)?;
                // Path sample m sits at time t + m * path.dt, ending at 0.
                let at = |m: usize| t + m as f64 * path.dt;
                let eta_start = path.end();
                let (z1, z2) = sphere_to_pinhole(eta_start).ok_or(Error::LeftDomain)?;
                let y0 = grid.sample_chart(yhat0, z1, z2).ok_or(Error::LeftDomain)?;
                let d0 = grid.sample_chart(dhat0, z1, z2).ok_or(Error::LeftDomain)?;
                // Trapezoid over the path samples, weights e^{k (tau - t)}.
                let mut acc_y = 0.0;
                let mut acc_d = 0.0;
                let h = path.dt.abs();
                for m in 0..path.etas.len() {
                    let tau = at(m);
                    let eta = path.etas[m];
                    let wy = k_y * y_meas.sample(tau, eta)? * (k_y * (tau - t)).exp();
                    let bh = inputs.bias_hat.sample(tau);
                    let tw = inputs.twists.sample(tau);
                    let src = k_d * d_meas.sample(tau, eta)?
                        - (tw.v - bh.p_v).dot(&eta.vec());
                    let wd = src * (k_d * (tau - t)).exp();
                    let trap = if m == 0 || m + 1 == path.etas.len() { 0.5 } else { 1.0 };
                    acc_y += wy * trap * h;
                    acc_d += wd * trap * h;
                }
                Ok((
                    y0 * (-k_y * t).exp() + acc_y,
                    d0 * (-k_d * t).exp() + acc_d,
                ))
            };
            match pixel_value(k) {
                Ok(v) => Some(v),
                Err(_) => None,
            }
        })
        .collect();
    let mut y_hat = ScalarField::zeros(grid.cols(), grid.rows());
    let mut d_hat = ScalarField::zeros(grid.cols(), grid.rows());
    let mut valid = vec![false; n];
    for (k, r) in results.iter().enumerate() {
        if let Some((y, d)) = r {
            y_hat.as_mut_slice()[k] = *y;
            d_hat.as_mut_slice()[k] = *d;
            valid[k] = true;
        }
    }
    Ok(ReferenceSolution { y_hat, d_hat, valid })
}

/// One explicit Euler step of the plain (windowless) estimate transport on a
/// chart grid with frozen bias estimates: upwind transport, the depth source
/// term, and the relaxation toward the measured fields.
#[allow(clippy::too_many_arguments)]
pub fn euler_transport_step<G: SphereGrid>(
    grid: &G,
    y_hat: &ScalarField,
    d_hat: &ScalarField,
    y_meas: &ScalarField,
    d_meas: &ScalarField,
    twist_meas: &BodyTwist,
    bias_hat: &BiasPair,
    k_y: f64,
    k_d: f64,
    dt: f64,
    div_floor: f64,
) -> Result<(ScalarField, ScalarField)> {
    grid.check_shape(y_hat)?;
    grid.check_shape(d_hat)?;
    grid.check_shape(y_meas)?;
    grid.check_shape(d_meas)?;
    let w_eff = twist_meas.w - bias_hat.p_w;
    let v_eff = twist_meas.v - bias_hat.p_v;
    let adv = advection_field(grid, d_meas, &w_eff, &v_eff, true, div_floor)?;
    let yh = y_hat.as_slice();
    let dh = d_hat.as_slice();
    let ym = y_meas.as_slice();
    let dm = d_meas.as_slice();
    let mut y_next = vec![0.0; grid.len()];
    let mut d_next = vec![0.0; grid.len()];
    let cols = grid.cols();
    y_next
        .par_chunks_mut(cols)
        .zip(d_next.par_chunks_mut(cols))
        .enumerate()
        .for_each(|(j, (yrow, drow))| {
            for i in 0..cols {
                let k = j * cols + i;
                let a = &adv.vectors[k];
                let eta = grid.dir(k).vec();
                let ty = -grid.advect_upwind(yh, k, a) + k_y * (ym[k] - yh[k]);
                let td = -grid.advect_upwind(dh, k, a) - v_eff.dot(&eta) + k_d * (dm[k] - dh[k]);
                yrow[i] = yh[k] + dt * ty;
                drow[i] = (dh[k] + dt * td).max(crate::scene::DEPTH_FLOOR);
            }
        });
    Ok((
        ScalarField::from_vec(cols, grid.rows(), y_next),
        ScalarField::from_vec(cols, grid.rows(), d_next),
    ))
}
