//! Sampled scalar fields on sphere charts, quadrature weights, chart
//! gradients and upwind advection stencils.
//!
//! Two chart grids are provided:
//!
//! * [`PinholeGrid`] — a rectangular pixel grid in the pinhole chart
//!   `(z1, z2) -> (z1, z2, 1)/sqrt(1+z1^2+z2^2)`. Pixel edges span the field
//!   of view, so centers sit half a pixel in and the per-pixel solid angle
//!   `dz1 dz2 / (1+z1^2+z2^2)^{3/2}` is a midpoint rule for the exact
//!   frustum solid angle.
//! * [`LatLongGrid`] — a full-sphere latitude/longitude grid with half-cell
//!   offset (no sample sits on a pole). Cell weights are exact band areas so
//!   they sum to 4*pi to rounding. Stencils continue over the poles: the
//!   sample "above" row 0 at azimuth phi is row 0 at azimuth phi + pi.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sphere::{TangentVec, UnitDir};

/// A scalar field sampled on a chart grid, row-major with row 0 the top row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    cols: usize,
    rows: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(cols: usize, rows: usize) -> Self {
        Self {
            cols,
            rows,
            data: vec![0.0; cols * rows],
        }
    }

    pub fn from_fn(cols: usize, rows: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(cols * rows);
        for j in 0..rows {
            for i in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { cols, rows, data }
    }

    pub fn from_vec(cols: usize, rows: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), cols * rows);
        Self { cols, rows, data }
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.cols && j < self.rows);
        j * self.cols + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn linf_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Chart-partial stencil for pinhole gradients. Sobel is the default; the
/// central stencil is selectable for order-of-accuracy studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    Sobel,
    Central,
}

/// Common chart-grid interface used by the renderers, observers and the
/// transport oracle. Axis 0 runs along columns, axis 1 along rows.
pub trait SphereGrid: Sync {
    fn cols(&self) -> usize;
    fn rows(&self) -> usize;
    fn dir(&self, k: usize) -> UnitDir;
    fn weight(&self, k: usize) -> f64;
    /// Sphere gradients of the two chart coordinate functions at sample `k`.
    fn dual(&self, k: usize) -> (Vector3<f64>, Vector3<f64>);
    /// Chart-coordinate spacing along (axis 0, axis 1).
    fn spacing(&self) -> (f64, f64);
    /// Index of the sample one step along `axis`, or `None` when the step
    /// leaves the domain (pinhole frame edges). Lat-long grids wrap in
    /// azimuth and continue over the poles, so they never return `None`.
    fn neighbor(&self, k: usize, axis: usize, step: i32) -> Option<usize>;
    /// Full tangent gradient field with the grid's canonical stencil.
    fn gradient_field(&self, f: &ScalarField) -> Result<Vec<Vector3<f64>>>;

    fn len(&self) -> usize {
        self.cols() * self.rows()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_shape(&self, f: &ScalarField) -> Result<()> {
        if f.shape() != (self.cols(), self.rows()) {
            return Err(Error::GridMismatch {
                expected: (self.cols(), self.rows()),
                got: f.shape(),
            });
        }
        Ok(())
    }

    /// Chart velocity `(dz1/dt, dz2/dt)` of the advection vector `a` at
    /// sample `k` (`a` need not be tangent; only its tangent part acts).
    fn chart_velocity(&self, k: usize, a: &Vector3<f64>) -> (f64, f64) {
        let (g1, g2) = self.dual(k);
        (g1.dot(a), g2.dot(a))
    }

    /// First-order upwind chart partial along `axis` for transport speed `c`.
    /// When the upwind tap falls outside the domain the derivative is zero,
    /// which is the zero-normal-derivative inflow rule.
    fn upwind_partial(&self, f: &[f64], k: usize, axis: usize, c: f64) -> f64 {
        let h = if axis == 0 {
            self.spacing().0
        } else {
            self.spacing().1
        };
        if c > 0.0 {
            match self.neighbor(k, axis, -1) {
                Some(m) => (f[k] - f[m]) / h,
                None => 0.0,
            }
        } else if c < 0.0 {
            match self.neighbor(k, axis, 1) {
                Some(m) => (f[m] - f[k]) / h,
                None => 0.0,
            }
        } else {
            0.0
        }
    }

    /// Upwinded transport term `grad(f) . a` at sample `k`.
    fn advect_upwind(&self, f: &[f64], k: usize, a: &Vector3<f64>) -> f64 {
        let (c1, c2) = self.chart_velocity(k, a);
        c1 * self.upwind_partial(f, k, 0, c1) + c2 * self.upwind_partial(f, k, 1, c2)
    }

    /// Quadrature of a scalar field: sum of sample * weight.
    fn integrate(&self, f: &ScalarField) -> Result<f64> {
        self.check_shape(f)?;
        let mut acc = 0.0;
        for (k, v) in f.as_slice().iter().enumerate() {
            acc += v * self.weight(k);
        }
        Ok(acc)
    }

    /// Quadrature of a per-sample vector integrand.
    fn integrate_vec(&self, values: &[Vector3<f64>]) -> Vector3<f64> {
        assert_eq!(values.len(), self.len());
        let mut acc = Vector3::zeros();
        for (k, v) in values.iter().enumerate() {
            acc += v * self.weight(k);
        }
        acc
    }

    /// Largest chart CFL number `|c| dt / h` over samples and axes for the
    /// advection field `adv` (one vector per sample).
    fn max_cfl(&self, adv: &[Vector3<f64>], dt: f64) -> f64 {
        assert_eq!(adv.len(), self.len());
        let (h1, h2) = self.spacing();
        let mut worst = 0.0f64;
        for (k, a) in adv.iter().enumerate() {
            let (c1, c2) = self.chart_velocity(k, a);
            worst = worst.max((c1.abs() / h1).max(c2.abs() / h2));
        }
        worst * dt
    }
}

// ---------------------------------------------------------------------------
// Pinhole grid
// ---------------------------------------------------------------------------

/// Rectangular pixel grid in the pinhole chart. Row 0 is the top image row;
/// z2 grows downward, z1 rightward.
#[derive(Debug, Clone)]
pub struct PinholeGrid {
    width: usize,
    height: usize,
    fov_h: f64,
    fov_v: f64,
    dz1: f64,
    dz2: f64,
    z1: Vec<f64>,
    z2: Vec<f64>,
    dirs: Vec<UnitDir>,
    weights: Vec<f64>,
    /// Chart tangent basis d(eta)/dz1, d(eta)/dz2 per pixel.
    basis1: Vec<Vector3<f64>>,
    basis2: Vec<Vector3<f64>>,
    /// Dual basis: sphere gradients of the chart coordinates.
    dual1: Vec<Vector3<f64>>,
    dual2: Vec<Vector3<f64>>,
    stencil: Stencil,
}

impl PinholeGrid {
    pub fn new(width: usize, height: usize, fov_h: f64, fov_v: f64) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(Error::BadConfig(format!(
                "pinhole grid must be at least 3x3, got {width}x{height}"
            )));
        }
        if !(fov_h > 0.0 && fov_h < std::f64::consts::PI)
            || !(fov_v > 0.0 && fov_v < std::f64::consts::PI)
        {
            return Err(Error::BadConfig(format!(
                "field of view must lie in (0, pi), got ({fov_h}, {fov_v})"
            )));
        }
        let t1 = (fov_h / 2.0).tan();
        let t2 = (fov_v / 2.0).tan();
        let dz1 = 2.0 * t1 / width as f64;
        let dz2 = 2.0 * t2 / height as f64;
        let z1: Vec<f64> = (0..width).map(|i| -t1 + (i as f64 + 0.5) * dz1).collect();
        let z2: Vec<f64> = (0..height).map(|j| -t2 + (j as f64 + 0.5) * dz2).collect();

        let n = width * height;
        let mut dirs = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut basis1 = Vec::with_capacity(n);
        let mut basis2 = Vec::with_capacity(n);
        let mut dual1 = Vec::with_capacity(n);
        let mut dual2 = Vec::with_capacity(n);
        for j in 0..height {
            for i in 0..width {
                let (a, b) = (z1[i], z2[j]);
                let rho2 = 1.0 + a * a + b * b;
                let rho = rho2.sqrt();
                let eta = Vector3::new(a, b, 1.0) / rho;
                dirs.push(UnitDir::from_vector(eta));
                weights.push(dz1 * dz2 / (rho2 * rho));
                let e1 = (Vector3::x() - eta * (a / rho)) / rho;
                let e2 = (Vector3::y() - eta * (b / rho)) / rho;
                basis1.push(e1);
                basis2.push(e2);
                let (g1, g2) = solve_duals(&eta, &e1, &e2)
                    .ok_or(Error::SingularChart { i, j })?;
                dual1.push(g1);
                dual2.push(g2);
            }
        }
        Ok(Self {
            width,
            height,
            fov_h,
            fov_v,
            dz1,
            dz2,
            z1,
            z2,
            dirs,
            weights,
            basis1,
            basis2,
            dual1,
            dual2,
            stencil: Stencil::Sobel,
        })
    }

    pub fn with_stencil(mut self, stencil: Stencil) -> Self {
        self.stencil = stencil;
        self
    }

    pub fn stencil(&self) -> Stencil {
        self.stencil
    }

    pub fn fov(&self) -> (f64, f64) {
        (self.fov_h, self.fov_v)
    }

    pub fn z1(&self, i: usize) -> f64 {
        self.z1[i]
    }

    pub fn z2(&self, j: usize) -> f64 {
        self.z2[j]
    }

    pub fn chart_basis(&self, k: usize) -> (Vector3<f64>, Vector3<f64>) {
        (self.basis1[k], self.basis2[k])
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    /// Exact solid angle of the frustum whose pixel edges this grid tiles.
    pub fn exact_solid_angle(&self) -> f64 {
        let t1 = (self.fov_h / 2.0).tan();
        let t2 = (self.fov_v / 2.0).tan();
        4.0 * (t1 * t2 / (1.0 + t1 * t1 + t2 * t2).sqrt()).atan()
    }

    /// Chart partial derivatives of `f` at pixel (i, j) with the requested
    /// stencil. Boundary pixels fall back to one-sided second-order stencils
    /// (Sobel additionally needs interior rows/columns in the cross axis).
    pub fn chart_partials(&self, f: &ScalarField, i: usize, j: usize, stencil: Stencil) -> (f64, f64) {
        let w = self.width;
        let h = self.height;
        let g = |i: usize, j: usize| f.get(i, j);
        let d1 = if i == 0 {
            (-3.0 * g(0, j) + 4.0 * g(1, j) - g(2, j)) / (2.0 * self.dz1)
        } else if i == w - 1 {
            (3.0 * g(w - 1, j) - 4.0 * g(w - 2, j) + g(w - 3, j)) / (2.0 * self.dz1)
        } else if stencil == Stencil::Sobel && j > 0 && j < h - 1 {
            let s = (g(i + 1, j - 1) - g(i - 1, j - 1))
                + 2.0 * (g(i + 1, j) - g(i - 1, j))
                + (g(i + 1, j + 1) - g(i - 1, j + 1));
            s / (8.0 * self.dz1)
        } else {
            (g(i + 1, j) - g(i - 1, j)) / (2.0 * self.dz1)
        };
        let d2 = if j == 0 {
            (-3.0 * g(i, 0) + 4.0 * g(i, 1) - g(i, 2)) / (2.0 * self.dz2)
        } else if j == h - 1 {
            (3.0 * g(i, h - 1) - 4.0 * g(i, h - 2) + g(i, h - 3)) / (2.0 * self.dz2)
        } else if stencil == Stencil::Sobel && i > 0 && i < w - 1 {
            let s = (g(i - 1, j + 1) - g(i - 1, j - 1))
                + 2.0 * (g(i, j + 1) - g(i, j - 1))
                + (g(i + 1, j + 1) - g(i + 1, j - 1));
            s / (8.0 * self.dz2)
        } else {
            (g(i, j + 1) - g(i, j - 1)) / (2.0 * self.dz2)
        };
        (d1, d2)
    }

    /// Tangent gradient at pixel (i, j): solves the 3x3 identification system
    /// { g.eta = 0, g.(d eta/dz1) = df/dz1, g.(d eta/dz2) = df/dz2 }.
    pub fn chart_gradient(
        &self,
        f: &ScalarField,
        i: usize,
        j: usize,
        stencil: Stencil,
    ) -> Result<TangentVec> {
        self.check_shape(f)?;
        let (d1, d2) = self.chart_partials(f, i, j, stencil);
        let k = self.idx(i, j);
        let eta = self.dirs[k].vec();
        let m = Matrix3::from_rows(&[
            eta.transpose(),
            self.basis1[k].transpose(),
            self.basis2[k].transpose(),
        ]);
        let rhs = Vector3::new(0.0, d1, d2);
        let g = m
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularChart { i, j })?;
        Ok(TangentVec::new(self.dirs[k], g))
    }

    /// Gradient field with an explicit stencil choice.
    pub fn gradient_field_with(&self, f: &ScalarField, stencil: Stencil) -> Result<Vec<Vector3<f64>>> {
        self.check_shape(f)?;
        let w = self.width;
        let mut out = vec![Vector3::zeros(); self.len()];
        out.par_chunks_mut(w).enumerate().for_each(|(j, row)| {
            for (i, slot) in row.iter_mut().enumerate() {
                let (d1, d2) = self.chart_partials(f, i, j, stencil);
                let k = self.idx(i, j);
                *slot = self.dual1[k] * d1 + self.dual2[k] * d2;
            }
        });
        Ok(out)
    }

    /// Bilinear sample in chart coordinates. `None` outside the rectangle of
    /// pixel centers (the chart-restricted field has no data there).
    pub fn sample_chart(&self, f: &ScalarField, z1: f64, z2: f64) -> Option<f64> {
        let tol = 1e-9;
        let u = (z1 - self.z1[0]) / self.dz1;
        let v = (z2 - self.z2[0]) / self.dz2;
        if u < -tol || u > (self.width - 1) as f64 + tol || v < -tol || v > (self.height - 1) as f64 + tol {
            return None;
        }
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let i0 = (u.floor() as usize).min(self.width - 2);
        let j0 = (v.floor() as usize).min(self.height - 2);
        let a = u - i0 as f64;
        let b = v - j0 as f64;
        Some(
            f.get(i0, j0) * (1.0 - a) * (1.0 - b)
                + f.get(i0 + 1, j0) * a * (1.0 - b)
                + f.get(i0, j0 + 1) * (1.0 - a) * b
                + f.get(i0 + 1, j0 + 1) * a * b,
        )
    }
}

fn solve_duals(
    eta: &Vector3<f64>,
    e1: &Vector3<f64>,
    e2: &Vector3<f64>,
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let m = Matrix3::from_rows(&[eta.transpose(), e1.transpose(), e2.transpose()]);
    let lu = m.lu();
    let g1 = lu.solve(&Vector3::new(0.0, 1.0, 0.0))?;
    let g2 = lu.solve(&Vector3::new(0.0, 0.0, 1.0))?;
    Some((g1, g2))
}

impl SphereGrid for PinholeGrid {
    fn cols(&self) -> usize {
        self.width
    }

    fn rows(&self) -> usize {
        self.height
    }

    fn dir(&self, k: usize) -> UnitDir {
        self.dirs[k]
    }

    fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    fn dual(&self, k: usize) -> (Vector3<f64>, Vector3<f64>) {
        (self.dual1[k], self.dual2[k])
    }

    fn spacing(&self) -> (f64, f64) {
        (self.dz1, self.dz2)
    }

    fn neighbor(&self, k: usize, axis: usize, step: i32) -> Option<usize> {
        let i = (k % self.width) as i64;
        let j = (k / self.width) as i64;
        let (ni, nj) = if axis == 0 {
            (i + step as i64, j)
        } else {
            (i, j + step as i64)
        };
        if ni < 0 || nj < 0 || ni >= self.width as i64 || nj >= self.height as i64 {
            None
        } else {
            Some(nj as usize * self.width + ni as usize)
        }
    }

    fn gradient_field(&self, f: &ScalarField) -> Result<Vec<Vector3<f64>>> {
        self.gradient_field_with(f, self.stencil)
    }
}

// ---------------------------------------------------------------------------
// Lat-long grid
// ---------------------------------------------------------------------------

/// Full-sphere latitude/longitude grid. Rows follow the polar angle theta
/// (row 0 nearest the +z pole), columns the azimuth phi.
#[derive(Debug, Clone)]
pub struct LatLongGrid {
    n_phi: usize,
    n_theta: usize,
    d_phi: f64,
    d_theta: f64,
    thetas: Vec<f64>,
    phis: Vec<f64>,
    dirs: Vec<UnitDir>,
    weights: Vec<f64>,
    /// e_theta and e_phi/sin(theta) per sample.
    dual_t: Vec<Vector3<f64>>,
    dual_p: Vec<Vector3<f64>>,
}

impl LatLongGrid {
    pub fn new(n_phi: usize, n_theta: usize) -> Result<Self> {
        if n_phi < 4 || n_phi % 2 != 0 || n_theta < 2 {
            return Err(Error::BadConfig(format!(
                "lat-long grid needs even n_phi >= 4 and n_theta >= 2, got {n_phi}x{n_theta}"
            )));
        }
        let d_theta = std::f64::consts::PI / n_theta as f64;
        let d_phi = std::f64::consts::TAU / n_phi as f64;
        let thetas: Vec<f64> = (0..n_theta).map(|j| (j as f64 + 0.5) * d_theta).collect();
        let phis: Vec<f64> = (0..n_phi).map(|i| (i as f64 + 0.5) * d_phi).collect();
        let mut dirs = Vec::with_capacity(n_phi * n_theta);
        let mut weights = Vec::with_capacity(n_phi * n_theta);
        let mut dual_t = Vec::with_capacity(n_phi * n_theta);
        let mut dual_p = Vec::with_capacity(n_phi * n_theta);
        for j in 0..n_theta {
            let th = thetas[j];
            let (st, ct) = th.sin_cos();
            // Exact band area so the weights sum to 4*pi.
            let band = (j as f64 * d_theta).cos() - ((j + 1) as f64 * d_theta).cos();
            for i in 0..n_phi {
                let ph = phis[i];
                let (sp, cp) = ph.sin_cos();
                dirs.push(UnitDir::from_vector(Vector3::new(st * cp, st * sp, ct)));
                weights.push(d_phi * band);
                dual_t.push(Vector3::new(ct * cp, ct * sp, -st));
                dual_p.push(Vector3::new(-sp, cp, 0.0) / st);
            }
        }
        Ok(Self {
            n_phi,
            n_theta,
            d_phi,
            d_theta,
            thetas,
            phis,
            dirs,
            weights,
            dual_t,
            dual_p,
        })
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n_phi + i
    }

    pub fn theta(&self, j: usize) -> f64 {
        self.thetas[j]
    }

    pub fn phi(&self, i: usize) -> f64 {
        self.phis[i]
    }

    /// Unit vector e_theta at sample `k`.
    pub fn e_theta(&self, k: usize) -> Vector3<f64> {
        self.dual_t[k]
    }

    /// Unit vector e_phi at sample `k`.
    pub fn e_phi(&self, k: usize) -> Vector3<f64> {
        let th = self.thetas[k / self.n_phi];
        self.dual_p[k] * th.sin()
    }

    fn wrap_phi(&self, i: i64) -> usize {
        i.rem_euclid(self.n_phi as i64) as usize
    }

    /// Scalar sample value at (col i, row j) where the row index may step one
    /// past either pole; over the pole the azimuth shifts by half a turn.
    fn value_pole_aware(&self, f: &[f64], i: i64, j: i64) -> f64 {
        let (i, j) = self.pole_aware_index(i, j);
        f[self.idx(i, j)]
    }

    fn pole_aware_index(&self, i: i64, j: i64) -> (usize, usize) {
        let half = (self.n_phi / 2) as i64;
        if j < 0 {
            (self.wrap_phi(i + half), (-1 - j) as usize)
        } else if j >= self.n_theta as i64 {
            (
                self.wrap_phi(i + half),
                self.n_theta - 1 - (j - self.n_theta as i64) as usize,
            )
        } else {
            (self.wrap_phi(i), j as usize)
        }
    }

    /// Central-difference divergence of a tangent field (one vector per
    /// sample): `(d_theta(sin(theta) F_theta) + d_phi(F_phi)) / sin(theta)`.
    /// `sin(theta) F_theta` is even across the poles, so its over-pole ghost
    /// is the plain shifted sample.
    pub fn divergence(&self, field: &[Vector3<f64>]) -> ScalarField {
        assert_eq!(field.len(), self.len());
        // Precompute sin(theta) * F_theta and F_phi as scalar layers.
        let mut g = vec![0.0; self.len()];
        let mut fp = vec![0.0; self.len()];
        for j in 0..self.n_theta {
            let st = self.thetas[j].sin();
            for i in 0..self.n_phi {
                let k = self.idx(i, j);
                g[k] = st * field[k].dot(&self.dual_t[k]);
                fp[k] = field[k].dot(&(self.dual_p[k] * st));
            }
        }
        let mut out = ScalarField::zeros(self.n_phi, self.n_theta);
        for j in 0..self.n_theta {
            let st = self.thetas[j].sin();
            for i in 0..self.n_phi {
                let ii = i as i64;
                let jj = j as i64;
                let dg = (self.value_pole_aware(&g, ii, jj + 1)
                    - self.value_pole_aware(&g, ii, jj - 1))
                    / (2.0 * self.d_theta);
                let dfp = (fp[self.idx(self.wrap_phi(ii + 1), j)]
                    - fp[self.idx(self.wrap_phi(ii - 1), j)])
                    / (2.0 * self.d_phi);
                out.set(i, j, (dg + dfp) / st);
            }
        }
        out
    }

    /// Bilinear sample of a field at an arbitrary direction. Azimuth wraps;
    /// the polar coordinate is clamped to the sampled band (half a cell).
    pub fn sample_dir(&self, f: &ScalarField, eta: UnitDir) -> f64 {
        let v = eta.vec();
        let theta = v.z.clamp(-1.0, 1.0).acos();
        let phi = v.y.atan2(v.x).rem_euclid(std::f64::consts::TAU);
        let tv = ((theta - self.thetas[0]) / self.d_theta)
            .clamp(0.0, (self.n_theta - 1) as f64);
        let j0 = (tv.floor() as usize).min(self.n_theta.saturating_sub(2));
        let b = tv - j0 as f64;
        let u = (phi - self.phis[0]) / self.d_phi;
        let i0f = u.floor();
        let a = u - i0f;
        let i0 = self.wrap_phi(i0f as i64);
        let i1 = self.wrap_phi(i0f as i64 + 1);
        let j1 = (j0 + 1).min(self.n_theta - 1);
        f.get(i0, j0) * (1.0 - a) * (1.0 - b)
            + f.get(i1, j0) * a * (1.0 - b)
            + f.get(i0, j1) * (1.0 - a) * b
            + f.get(i1, j1) * a * b
    }

    /// Bilinear resample of a field defined on `src` onto this grid.
    pub fn resample_from(&self, src: &LatLongGrid, f: &ScalarField) -> Result<ScalarField> {
        src.check_shape(f)?;
        Ok(ScalarField::from_fn(self.n_phi, self.n_theta, |i, j| {
            src.sample_dir(f, self.dirs[self.idx(i, j)])
        }))
    }
}

impl SphereGrid for LatLongGrid {
    fn cols(&self) -> usize {
        self.n_phi
    }

    fn rows(&self) -> usize {
        self.n_theta
    }

    fn dir(&self, k: usize) -> UnitDir {
        self.dirs[k]
    }

    fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    fn dual(&self, k: usize) -> (Vector3<f64>, Vector3<f64>) {
        (self.dual_p[k], self.dual_t[k])
    }

    fn spacing(&self) -> (f64, f64) {
        (self.d_phi, self.d_theta)
    }

    fn neighbor(&self, k: usize, axis: usize, step: i32) -> Option<usize> {
        let i = (k % self.n_phi) as i64;
        let j = (k / self.n_phi) as i64;
        let (ni, nj) = if axis == 0 {
            (i + step as i64, j)
        } else {
            (i, j + step as i64)
        };
        let (pi, pj) = self.pole_aware_index(ni, nj);
        Some(self.idx(pi, pj))
    }

    fn gradient_field(&self, f: &ScalarField) -> Result<Vec<Vector3<f64>>> {
        self.check_shape(f)?;
        let data = f.as_slice();
        let mut out = vec![Vector3::zeros(); self.len()];
        out.par_chunks_mut(self.n_phi)
            .enumerate()
            .for_each(|(j, row)| {
                for (i, slot) in row.iter_mut().enumerate() {
                    let ii = i as i64;
                    let jj = j as i64;
                    let ft = (self.value_pole_aware(data, ii, jj + 1)
                        - self.value_pole_aware(data, ii, jj - 1))
                        / (2.0 * self.d_theta);
                    let fp = (data[self.idx(self.wrap_phi(ii + 1), j)]
                        - data[self.idx(self.wrap_phi(ii - 1), j)])
                        / (2.0 * self.d_phi);
                    let k = self.idx(i, j);
                    *slot = self.dual_t[k] * ft + self.dual_p[k] * fp;
                }
            });
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{grad_dot, laplacian_dot};

    #[test]
    fn latlong_weights_sum_to_sphere_area() {
        for (np, nt) in [(16, 8), (64, 32), (128, 64)] {
            let g = LatLongGrid::new(np, nt).unwrap();
            let total: f64 = (0..g.len()).map(|k| g.weight(k)).sum();
            assert!(
                (total - 4.0 * std::f64::consts::PI).abs() < 1e-6,
                "{np}x{nt}: {total}"
            );
        }
    }

    #[test]
    fn latlong_quadrature_examples() {
        let g = LatLongGrid::new(128, 64).unwrap();
        let ones = ScalarField::from_fn(g.cols(), g.rows(), |_, _| 1.0);
        assert!((g.integrate(&ones).unwrap() - 4.0 * std::f64::consts::PI).abs() < 1e-6);

        let p = Vector3::new(0.3, -0.7, 0.64).normalize();
        let odd = ScalarField::from_fn(g.cols(), g.rows(), |i, j| {
            g.dir(g.idx(i, j)).dot(&p)
        });
        assert!(g.integrate(&odd).unwrap().abs() < 1e-6);

        // Moment integral of (eta.p)^2 with |p| = 1 equals 4*pi/3. The
        // quadrature error is O(h^2) in the polar spacing, so a finer grid is
        // used for the tight tolerance.
        let gf = LatLongGrid::new(512, 256).unwrap();
        let sq = ScalarField::from_fn(gf.cols(), gf.rows(), |i, j| {
            gf.dir(gf.idx(i, j)).dot(&p).powi(2)
        });
        let val = gf.integrate(&sq).unwrap();
        assert!(
            (val - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-5,
            "moment {val}"
        );
    }

    #[test]
    fn moment_integral_monte_carlo_cross_check() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(11);
        let p = Vector3::new(0.3, -0.7, 0.64).normalize();
        let n = 400_000;
        let mut acc = 0.0;
        let mut got = 0usize;
        while got < n {
            let v: Vector3<f64> = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let r = v.norm();
            if r > 1e-6 && r < 1.0 {
                acc += (v / r).dot(&p).powi(2);
                got += 1;
            }
        }
        let mc = acc / n as f64 * 4.0 * std::f64::consts::PI;
        assert!((mc - 4.0 * std::f64::consts::PI / 3.0).abs() < 2e-2, "mc {mc}");
    }

    #[test]
    fn quadrature_shape_mismatch() {
        let g = LatLongGrid::new(16, 8).unwrap();
        let bad = ScalarField::zeros(8, 8);
        assert!(matches!(
            g.integrate(&bad),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn pinhole_weights_converge_to_exact_solid_angle() {
        let fh = 50f64.to_radians();
        let fv = 40f64.to_radians();
        let coarse = PinholeGrid::new(32, 24, fh, fv).unwrap();
        let exact = coarse.exact_solid_angle();
        let sum_c: f64 = (0..coarse.len()).map(|k| coarse.weight(k)).sum();
        assert!((sum_c - exact).abs() / exact < 0.01, "coarse {sum_c} vs {exact}");
        let fine = PinholeGrid::new(64, 48, fh, fv).unwrap();
        let sum_f: f64 = (0..fine.len()).map(|k| fine.weight(k)).sum();
        assert!((sum_f - exact).abs() < (sum_c - exact).abs() / 3.0);
    }

    #[test]
    fn pinhole_dirs_match_chart() {
        let g = PinholeGrid::new(9, 7, 0.9, 0.7).unwrap();
        for j in 0..7 {
            for i in 0..9 {
                let k = g.idx(i, j);
                let (a, b) = (g.z1(i), g.z2(j));
                let n = (1.0 + a * a + b * b).sqrt();
                let expect = Vector3::new(a / n, b / n, 1.0 / n);
                assert!((g.dir(k).vec() - expect).norm() < 1e-12);
            }
        }
        // Top row has the most negative z2.
        assert!(g.z2(0) < 0.0 && g.z2(6) > 0.0);
    }

    #[test]
    fn chart_gradient_linear_fields_exact_with_central() {
        let g = PinholeGrid::new(16, 12, 0.9, 0.7).unwrap();
        let f = ScalarField::from_fn(16, 12, |i, j| 3.0 * g.z1(i) - 2.0 * g.z2(j) + 0.5);
        for j in 0..12 {
            for i in 0..16 {
                let k = g.idx(i, j);
                let t = g.chart_gradient(&f, i, j, Stencil::Central).unwrap();
                let (e1, e2) = g.chart_basis(k);
                assert!((t.v.dot(&e1) - 3.0).abs() < 1e-10);
                assert!((t.v.dot(&e2) + 2.0).abs() < 1e-10);
                assert!(t.v.dot(&g.dir(k).vec()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn chart_gradient_coordinate_field() {
        let g = PinholeGrid::new(16, 12, 0.9, 0.7).unwrap();
        let f = ScalarField::from_fn(16, 12, |i, _| g.z1(i));
        let t = g.chart_gradient(&f, 7, 5, Stencil::Central).unwrap();
        let k = g.idx(7, 5);
        let (e1, e2) = g.chart_basis(k);
        assert!((t.v.dot(&e1) - 1.0).abs() < 1e-10);
        assert!(t.v.dot(&e2).abs() < 1e-10);
        assert!(t.v.dot(&g.dir(k).vec()).abs() < 1e-10);
    }

    #[test]
    fn chart_gradient_constant_field_zero() {
        let g = PinholeGrid::new(8, 8, 0.8, 0.8).unwrap();
        let f = ScalarField::from_fn(8, 8, |_, _| 42.0);
        for j in 0..8 {
            for i in 0..8 {
                let t = g.chart_gradient(&f, i, j, Stencil::Sobel).unwrap();
                assert!(t.v.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn chart_gradient_matches_analytic_projection() {
        // field(i,j) = dir(i,j) . p must reproduce the tangent projection of p
        // at interior pixels, at second order in the pixel size.
        let p = Vector3::new(0.4, -1.2, 0.7);
        let errs: Vec<f64> = [24usize, 48]
            .iter()
            .map(|&w| {
                let h = w * 3 / 4;
                let g = PinholeGrid::new(w, h, 0.9, 0.7).unwrap();
                let f = ScalarField::from_fn(w, h, |i, j| g.dir(g.idx(i, j)).dot(&p));
                let mut worst = 0.0f64;
                for j in 2..h - 2 {
                    for i in 2..w - 2 {
                        let t = g.chart_gradient(&f, i, j, Stencil::Central).unwrap();
                        let exact = grad_dot(g.dir(g.idx(i, j)), &p);
                        worst = worst.max((t.v - exact.v).norm());
                    }
                }
                worst
            })
            .collect();
        assert!(errs[0] / errs[1] > 3.0, "errors {errs:?}");
        assert!(errs[1] < 1e-3);
    }

    #[test]
    fn latlong_gradient_matches_analytic_projection() {
        let p = Vector3::new(0.4, -1.2, 0.7);
        let g = LatLongGrid::new(128, 64).unwrap();
        let f = ScalarField::from_fn(g.cols(), g.rows(), |i, j| g.dir(g.idx(i, j)).dot(&p));
        let grads = g.gradient_field(&f).unwrap();
        let mut worst = 0.0f64;
        for (k, gr) in grads.iter().enumerate() {
            let exact = grad_dot(g.dir(k), &p);
            worst = worst.max((gr - exact.v).norm());
        }
        assert!(worst < 2e-3, "worst {worst}");
    }

    #[test]
    fn divergence_of_gradient_converges_to_laplacian() {
        // Pointwise second-order convergence of div(grad(eta.p)) -> -2 eta.p.
        // Any fixed direction eventually lies in an interior band; the
        // one-ring stencil is only first order uniformly at the pole rows, so
        // the pointwise statement is measured on a fixed polar band.
        let p = Vector3::new(0.8, 0.3, -0.5);
        let errs: Vec<f64> = [(64usize, 32usize), (128, 64)]
            .iter()
            .map(|&(np, nt)| {
                let g = LatLongGrid::new(np, nt).unwrap();
                let field: Vec<Vector3<f64>> =
                    (0..g.len()).map(|k| grad_dot(g.dir(k), &p).v).collect();
                let div = g.divergence(&field);
                let mut worst = 0.0f64;
                for j in 0..g.rows() {
                    if g.theta(j) < 0.4 || g.theta(j) > std::f64::consts::PI - 0.4 {
                        continue;
                    }
                    for i in 0..g.cols() {
                        let k = g.idx(i, j);
                        let exact = laplacian_dot(g.dir(k), &p);
                        worst = worst.max((div.as_slice()[k] - exact).abs());
                    }
                }
                worst
            })
            .collect();
        assert!(errs[0] / errs[1] > 3.0, "errors {errs:?}");
    }

    #[test]
    fn divergence_adjoint_to_gradient() {
        // Quadrature-by-parts: <div F, s> = -<F, grad s> for a smooth scalar s
        // and smooth tangent field F; the gap shrinks under refinement.
        let p = Vector3::new(0.2, -0.5, 0.8);
        let q = Vector3::new(-0.6, 0.1, 0.4);
        let gap = |np: usize, nt: usize| {
            let g = LatLongGrid::new(np, nt).unwrap();
            let field: Vec<Vector3<f64>> =
                (0..g.len()).map(|k| grad_dot(g.dir(k), &p).v).collect();
            let s = ScalarField::from_fn(g.cols(), g.rows(), |i, j| g.dir(g.idx(i, j)).dot(&q));
            let grads = g.gradient_field(&s).unwrap();
            let div = g.divergence(&field);
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for k in 0..g.len() {
                lhs += div.as_slice()[k] * s.as_slice()[k] * g.weight(k);
                rhs -= field[k].dot(&grads[k]) * g.weight(k);
            }
            (lhs - rhs).abs()
        };
        let coarse = gap(96, 48);
        let fine = gap(192, 96);
        assert!(coarse < 1e-2, "coarse gap {coarse}");
        assert!(fine < coarse / 1.8, "gaps {coarse} -> {fine}");
    }

    #[test]
    fn upwind_inflow_edges_have_zero_normal_derivative() {
        let g = PinholeGrid::new(8, 8, 0.8, 0.8).unwrap();
        let f = ScalarField::from_fn(8, 8, |i, j| (i + 2 * j) as f64);
        // Left edge pixel, flow entering from the left (c1 > 0): the upwind
        // tap is outside, so the contribution must vanish.
        let k = g.idx(0, 4);
        assert_eq!(g.upwind_partial(f.as_slice(), k, 0, 1.0), 0.0);
        // Flow leaving through the left edge (c1 < 0) uses interior data.
        assert!(g.upwind_partial(f.as_slice(), k, 0, -1.0) != 0.0);
    }

    #[test]
    fn latlong_resample_roundtrip_smooth_field() {
        let src = LatLongGrid::new(128, 64).unwrap();
        let dst = LatLongGrid::new(96, 48).unwrap();
        let p = Vector3::new(0.3, 0.9, -0.2);
        let f = ScalarField::from_fn(src.cols(), src.rows(), |i, j| {
            src.dir(src.idx(i, j)).dot(&p)
        });
        let r = dst.resample_from(&src, &f).unwrap();
        for j in 0..dst.rows() {
            for i in 0..dst.cols() {
                let exact = dst.dir(dst.idx(i, j)).dot(&p);
                assert!((r.get(i, j) - exact).abs() < 4e-3);
            }
        }
    }
}
