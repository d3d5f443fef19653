//! Coordinate-free differential calculus on the unit sphere.
//!
//! Directions are unit vectors of R^3; tangent vectors at a direction `eta`
//! are R^3 vectors orthogonal to `eta`. The identities implemented here for a
//! constant vector `p` are
//!
//! * `grad(eta . p)  = p - (eta . p) eta = -eta x (eta x p)`
//! * `lap(eta . p)   = -2 (eta . p)`
//! * `div(eta x p)   = 0`
//!
//! together with the pinhole chart `(z1, z2) -> (z1, z2, 1)/sqrt(1+z1^2+z2^2)`.

use nalgebra::Vector3;

/// A point on the unit sphere; renormalized on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitDir {
    v: Vector3<f64>,
}

impl UnitDir {
    /// Builds a unit direction from components, normalizing them.
    ///
    /// Panics if the input has (near-)zero length, which is a programming
    /// error for every caller in this crate.
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self::from_vector(Vector3::new(x, y, z))
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        let n = v.norm();
        assert!(n > 1e-300, "cannot normalize a zero vector");
        Self { v: v / n }
    }

    #[inline]
    pub fn vec(&self) -> Vector3<f64> {
        self.v
    }

    #[inline]
    pub fn dot(&self, p: &Vector3<f64>) -> f64 {
        self.v.dot(p)
    }

    #[inline]
    pub fn cross(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.v.cross(p)
    }

    /// An orthonormal basis (t1, t2) of the tangent plane at this direction,
    /// with (t1, t2, eta) right-handed.
    pub fn tangent_basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let helper = if self.v.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let t1 = (helper - self.v * self.v.dot(&helper)).normalize();
        let t2 = self.v.cross(&t1);
        (t1, t2)
    }
}

/// A tangent vector anchored at a base direction. Construction projects out
/// any normal component so `v . base = 0` holds by construction.
#[derive(Debug, Clone, Copy)]
pub struct TangentVec {
    pub base: UnitDir,
    pub v: Vector3<f64>,
}

impl TangentVec {
    pub fn new(base: UnitDir, v: Vector3<f64>) -> Self {
        let v = v - base.vec() * base.dot(&v);
        Self { base, v }
    }
}

/// Gradient of `eta . p` on the sphere: the tangent projection of `p`.
pub fn grad_dot(eta: UnitDir, p: &Vector3<f64>) -> TangentVec {
    let e = eta.vec();
    TangentVec {
        base: eta,
        v: -e.cross(&e.cross(p)),
    }
}

/// Laplace-Beltrami of `eta . p` on the sphere.
pub fn laplacian_dot(eta: UnitDir, p: &Vector3<f64>) -> f64 {
    -2.0 * eta.dot(p)
}

/// Divergence of the rotation field `eta x p`: identically zero.
pub fn div_cross(_eta: UnitDir, _p: &Vector3<f64>) -> f64 {
    0.0
}

/// Pinhole chart: `(z1, z2) -> (z1, z2, 1)/sqrt(1+z1^2+z2^2)`.
/// The optical axis is the image of `(0, 0)`.
pub fn pinhole_to_sphere(z1: f64, z2: f64) -> UnitDir {
    UnitDir::from_vector(Vector3::new(z1, z2, 1.0))
}

/// Chart inverse on the open frustum: `eta -> (x/z, y/z)`. `None` when the
/// direction points away from the image plane.
pub fn sphere_to_pinhole(eta: UnitDir) -> Option<(f64, f64)> {
    let v = eta.vec();
    if v.z <= 0.0 {
        return None;
    }
    Some((v.x / v.z, v.y / v.z))
}
