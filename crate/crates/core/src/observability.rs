//! Observability analysis: residuals of the stationary-motion equations for
//! a candidate constant motion, a residual-minimizing search over normalized
//! candidates, and the orthogonality identity satisfied by exact stationary
//! motions.
//!
//! A constant motion `(p_w, p_v)` is stationary inside a scene when the
//! rendered fields satisfy
//!
//! * `grad(y) . (eta x (p_w + (1/D) eta x p_v)) = 0`
//! * `grad(D) . (eta x (p_w + (1/D) eta x p_v)) + eta . p_v = 0`
//!
//! Nontrivial stationary motions exist exactly for scenes with a rotation
//! axis, which is what makes the biases unobservable there.

use nalgebra::Vector3;
use rand::Rng;

use crate::error::Result;
use crate::grid::{ScalarField, SphereGrid};
use crate::kinematics::counter_rng;

/// Weights balancing the two residual channels (brightness is O(100), depth
/// O(1) m); mirrors the observer channel weights.
#[derive(Debug, Clone, Copy)]
pub struct ResidualWeights {
    pub lambda_y: f64,
    pub lambda_d: f64,
}

impl Default for ResidualWeights {
    fn default() -> Self {
        Self {
            lambda_y: 1.0,
            lambda_d: 5000.0,
        }
    }
}

/// A candidate stationary motion with its weighted residual.
#[derive(Debug, Clone, Copy)]
pub struct StationaryCandidate {
    pub p_w: Vector3<f64>,
    pub p_v: Vector3<f64>,
    pub residual_rms: f64,
    /// True when `(p_w, p_v / d_ref)` has unit norm.
    pub normalized: bool,
}

/// Per-sample residuals of the two stationary-motion equations.
pub fn stationarity_residual<G: SphereGrid>(
    grid: &G,
    y: &ScalarField,
    d: &ScalarField,
    p_w: &Vector3<f64>,
    p_v: &Vector3<f64>,
) -> Result<(ScalarField, ScalarField)> {
    grid.check_shape(y)?;
    grid.check_shape(d)?;
    let gy = grid.gradient_field(y)?;
    let gd = grid.gradient_field(d)?;
    let dm = d.as_slice();
    let mut ry = ScalarField::zeros(grid.cols(), grid.rows());
    let mut rd = ScalarField::zeros(grid.cols(), grid.rows());
    for k in 0..grid.len() {
        let eta = grid.dir(k).vec();
        let flow = eta.cross(&(p_w + eta.cross(p_v) / dm[k].max(1e-6)));
        ry.as_mut_slice()[k] = gy[k].dot(&flow);
        rd.as_mut_slice()[k] = gd[k].dot(&flow) + eta.dot(p_v);
    }
    Ok((ry, rd))
}

/// Weighted RMS of the two residual channels over the grid measure.
pub fn residual_rms<G: SphereGrid>(
    grid: &G,
    ry: &ScalarField,
    rd: &ScalarField,
    weights: &ResidualWeights,
) -> f64 {
    let mut acc = 0.0;
    let mut area = 0.0;
    for k in 0..grid.len() {
        let wq = grid.weight(k);
        acc += (weights.lambda_y * ry.as_slice()[k].powi(2)
            + weights.lambda_d * rd.as_slice()[k].powi(2))
            * wq;
        area += wq;
    }
    (acc / area).sqrt()
}

fn candidate_rms<G: SphereGrid>(
    grid: &G,
    y: &ScalarField,
    d: &ScalarField,
    gy: &[Vector3<f64>],
    gd: &[Vector3<f64>],
    p_w: &Vector3<f64>,
    p_v: &Vector3<f64>,
    weights: &ResidualWeights,
) -> f64 {
    let _ = y;
    let dm = d.as_slice();
    let mut acc = 0.0;
    let mut area = 0.0;
    for k in 0..grid.len() {
        let eta = grid.dir(k).vec();
        let flow = eta.cross(&(p_w + eta.cross(p_v) / dm[k].max(1e-6)));
        let ry = gy[k].dot(&flow);
        let rd = gd[k].dot(&flow) + eta.dot(p_v);
        let wq = grid.weight(k);
        acc += (weights.lambda_y * ry * ry + weights.lambda_d * rd * rd) * wq;
        area += wq;
    }
    (acc / area).sqrt()
}

/// Searches for the motion minimizing the weighted residual RMS over the
/// normalized candidate set `|(p_w, p_v / d_ref)| = 1`: deterministic coarse
/// seeding followed by a Nelder-Mead refinement in the tangent chart of the
/// candidate sphere.
pub fn find_stationary_motion<G: SphereGrid>(
    grid: &G,
    y: &ScalarField,
    d: &ScalarField,
    d_ref: f64,
    weights: &ResidualWeights,
) -> Result<StationaryCandidate> {
    grid.check_shape(y)?;
    grid.check_shape(d)?;
    let gy = grid.gradient_field(y)?;
    let gd = grid.gradient_field(d)?;
    let eval6 = |u: &[f64; 6]| -> f64 {
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let p_w = Vector3::new(u[0], u[1], u[2]) / n;
        let p_v = Vector3::new(u[3], u[4], u[5]) * (d_ref / n);
        candidate_rms(grid, y, d, &gy, &gd, &p_w, &p_v, weights)
    };

    // Coarse seeding: the 12 signed axes plus a deterministic random cloud.
    let mut seeds: Vec<[f64; 6]> = Vec::new();
    for a in 0..6 {
        for s in [1.0, -1.0] {
            let mut u = [0.0; 6];
            u[a] = s;
            seeds.push(u);
        }
    }
    let mut rng = counter_rng(0x6f62_7365, 0x7365_6564, 0, 0);
    for _ in 0..240 {
        let mut u = [0.0; 6];
        for slot in u.iter_mut() {
            *slot = rng.gen_range(-1.0..1.0);
        }
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            for slot in u.iter_mut() {
                *slot /= n;
            }
            seeds.push(u);
        }
    }
    let mut ranked: Vec<([f64; 6], f64)> = seeds.into_iter().map(|u| (u, eval6(&u))).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut best = ranked[0];
    for &(seed, _) in ranked.iter().take(3) {
        let refined = nelder_mead_on_sphere(&eval6, &seed, 400);
        if refined.1 < best.1 {
            best = refined;
        }
    }
    let n = best.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let p_w = Vector3::new(best.0[0], best.0[1], best.0[2]) / n;
    let p_v = Vector3::new(best.0[3], best.0[4], best.0[5]) * (d_ref / n);
    Ok(StationaryCandidate {
        p_w,
        p_v,
        residual_rms: best.1,
        normalized: true,
    })
}

/// Nelder-Mead in the 5-dimensional tangent chart of the unit sphere in R^6
/// anchored at `seed`; the objective renormalizes internally so iterates may
/// be evaluated off-sphere.
fn nelder_mead_on_sphere(
    eval: &impl Fn(&[f64; 6]) -> f64,
    seed: &[f64; 6],
    iters: usize,
) -> ([f64; 6], f64) {
    // Orthonormal tangent basis at the seed by Gram-Schmidt on the standard
    // basis.
    let mut basis: Vec<[f64; 6]> = Vec::new();
    let norm = |v: &[f64; 6]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut anchor = *seed;
    let n0 = norm(&anchor);
    for x in anchor.iter_mut() {
        *x /= n0;
    }
    for a in 0..6 {
        let mut v = [0.0; 6];
        v[a] = 1.0;
        let d = (0..6).map(|i| v[i] * anchor[i]).sum::<f64>();
        for i in 0..6 {
            v[i] -= d * anchor[i];
        }
        for prev in &basis {
            let d = (0..6).map(|i| v[i] * prev[i]).sum::<f64>();
            for i in 0..6 {
                v[i] -= d * prev[i];
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            for x in v.iter_mut() {
                *x /= nv;
            }
            basis.push(v);
            if basis.len() == 5 {
                break;
            }
        }
    }
    let to_point = |xi: &[f64; 5]| -> [f64; 6] {
        let mut p = anchor;
        for (c, b) in xi.iter().zip(&basis) {
            for i in 0..6 {
                p[i] += c * b[i];
            }
        }
        let n = norm(&p);
        let mut out = p;
        for x in out.iter_mut() {
            *x /= n;
        }
        out
    };
    let f = |xi: &[f64; 5]| eval(&to_point(xi));

    let mut simplex: Vec<([f64; 5], f64)> = Vec::with_capacity(6);
    let x0 = [0.0; 5];
    simplex.push((x0, f(&x0)));
    for a in 0..5 {
        let mut x = x0;
        x[a] = 0.35;
        simplex.push((x, f(&x)));
    }
    for _ in 0..iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let worst = simplex[5];
        let mut centroid = [0.0; 5];
        for item in simplex.iter().take(5) {
            for i in 0..5 {
                centroid[i] += item.0[i] / 5.0;
            }
        }
        let lerp = |a: &[f64; 5], b: &[f64; 5], t: f64| {
            let mut out = [0.0; 5];
            for i in 0..5 {
                out[i] = a[i] + t * (b[i] - a[i]);
            }
            out
        };
        let reflect = lerp(&worst.0, &centroid, 2.0);
        let fr = f(&reflect);
        if fr < simplex[0].1 {
            let expand = lerp(&worst.0, &centroid, 3.0);
            let fe = f(&expand);
            simplex[5] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[4].1 {
            simplex[5] = (reflect, fr);
        } else {
            let contract = lerp(&worst.0, &centroid, 0.5);
            let fc = f(&contract);
            if fc < worst.1 {
                simplex[5] = (contract, fc);
            } else {
                let best = simplex[0].0;
                for item in simplex.iter_mut().skip(1) {
                    item.0 = lerp(&item.0, &best, 0.5);
                    item.1 = f(&item.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let p = to_point(&simplex[0].0);
    (p, simplex[0].1)
}

/// Normalized orthogonality measure `|cos(angle(p_v, p_w))|`; exact
/// stationary motions with both components nonzero satisfy `p_v . p_w = 0`,
/// and degenerate candidates (either component near zero) return 0 by
/// convention.
pub fn orthogonality_identity_check(p_w: &Vector3<f64>, p_v: &Vector3<f64>) -> f64 {
    let nw = p_w.norm();
    let nv = p_v.norm();
    if nw < 1e-9 || nv < 1e-9 {
        return 0.0;
    }
    (p_v.dot(p_w) / (nw * nv)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LatLongGrid;
    use crate::kinematics::{CameraPose, Envelope};
    use crate::scene::{make_room_scene, render, RoomConfig, Scene, Surface, Texture};
    use nalgebra::UnitQuaternion;

    fn axisym_scene() -> Scene {
        let env = Envelope {
            center: Vector3::zeros(),
            half: Vector3::new(0.3, 0.3, 0.3),
        };
        Scene::new(
            Surface::Sphere { radius: 2.2 },
            Texture::AxialSinusoid {
                base: 128.5,
                amplitude: 80.0,
                freq: 0.35,
            },
            &env,
        )
        .unwrap()
    }

    #[test]
    fn null_motion_residual_zero() {
        let grid = LatLongGrid::new(64, 32).unwrap();
        let scene = axisym_scene();
        let pose = CameraPose::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 0.2));
        let (y, d) = render(&scene, &pose, &grid, None).unwrap();
        let (ry, rd) =
            stationarity_residual(&grid, &y, &d, &Vector3::zeros(), &Vector3::zeros()).unwrap();
        assert!(ry.as_slice().iter().all(|v| *v == 0.0));
        assert!(rd.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_texture_sphere_from_center_fully_degenerate() {
        let env = Envelope {
            center: Vector3::zeros(),
            half: Vector3::new(0.2, 0.2, 0.2),
        };
        let scene = Scene::new(Surface::Sphere { radius: 2.0 }, Texture::Constant(50.0), &env).unwrap();
        let grid = LatLongGrid::new(64, 32).unwrap();
        let (y, d) = render(&scene, &CameraPose::identity(), &grid, None).unwrap();
        // Any pure rotation is stationary: gradients vanish identically.
        for axis in [Vector3::x(), Vector3::new(0.3, -0.5, 0.81)] {
            let (ry, rd) =
                stationarity_residual(&grid, &y, &d, &axis, &Vector3::zeros()).unwrap();
            let rms = residual_rms(&grid, &ry, &rd, &ResidualWeights::default());
            assert!(rms < 1e-10, "rms {rms}");
        }
    }

    #[test]
    fn axis_rotation_residual_shrinks_under_refinement() {
        // The symmetry axis is tilted away from the grid pole so the residual
        // is genuine discretization error rather than a structural zero of
        // the aligned chart.
        let axis = Vector3::new(0.3, -0.2, 0.93).normalize();
        let tilt = UnitQuaternion::rotation_between(&Vector3::z(), &axis).unwrap();
        let scene = axisym_scene().with_rotation(tilt);
        let pose = CameraPose::new(UnitQuaternion::identity(), axis * 0.2);
        let rms_at = |np: usize, nt: usize| {
            let grid = LatLongGrid::new(np, nt).unwrap();
            let (y, d) = render(&scene, &pose, &grid, None).unwrap();
            let (ry, rd) =
                stationarity_residual(&grid, &y, &d, &(axis * 0.3), &Vector3::zeros()).unwrap();
            residual_rms(&grid, &ry, &rd, &ResidualWeights::default())
        };
        let coarse = rms_at(64, 32);
        let fine = rms_at(128, 64);
        assert!(fine < coarse / 1.5, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn residual_scales_linearly_in_candidate() {
        let grid = LatLongGrid::new(48, 24).unwrap();
        let env = Envelope {
            center: Vector3::zeros(),
            half: Vector3::new(0.3, 0.3, 0.3),
        };
        let scene = make_room_scene(&RoomConfig::default(), &env).unwrap();
        let (y, d) = render(&scene, &CameraPose::identity(), &grid, None).unwrap();
        let p_w = Vector3::new(0.1, -0.2, 0.3);
        let p_v = Vector3::new(0.4, 0.1, -0.2);
        let (ry1, rd1) = stationarity_residual(&grid, &y, &d, &p_w, &p_v).unwrap();
        let a = 3.7;
        let (ry2, rd2) =
            stationarity_residual(&grid, &y, &d, &(p_w * a), &(p_v * a)).unwrap();
        for k in 0..grid.len() {
            // Brightness residual is exactly linear in the candidate.
            assert!((ry2.as_slice()[k] - a * ry1.as_slice()[k]).abs() < 1e-9);
            // Depth residual is affine: both its terms scale linearly, so the
            // whole expression does too.
            assert!((rd2.as_slice()[k] - a * rd1.as_slice()[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn search_finds_axis_on_axisymmetric_scene() {
        let scene = axisym_scene();
        let pose = CameraPose::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 0.2));
        let grid = LatLongGrid::new(96, 48).unwrap();
        let (y, d) = render(&scene, &pose, &grid, None).unwrap();
        let d_ref = {
            let mut acc = 0.0;
            let mut area = 0.0;
            for k in 0..grid.len() {
                acc += d.as_slice()[k] * grid.weight(k);
                area += grid.weight(k);
            }
            acc / area
        };
        let best = find_stationary_motion(&grid, &y, &d, d_ref, &ResidualWeights::default()).unwrap();
        // The minimizer is the rotation about the symmetry axis (z), either
        // sign, with a negligible translation component.
        assert!(best.normalized);
        assert!(best.p_w.z.abs() > 0.98, "p_w {:?}", best.p_w);
        assert!(best.p_v.norm() < 0.1 * d_ref, "p_v {:?}", best.p_v);
        // And the orthogonality measure is degenerate-or-small.
        assert!(orthogonality_identity_check(&best.p_w, &best.p_v) <= 0.05);
    }

    #[test]
    fn generic_room_residual_floor_much_higher() {
        let env = Envelope {
            center: Vector3::zeros(),
            half: Vector3::new(0.3, 0.3, 0.3),
        };
        let room = make_room_scene(
            &RoomConfig {
                freq_h: 0.45,
                freq_v: 0.65,
                ..RoomConfig::default()
            },
            &env,
        )
        .unwrap();
        let pose = CameraPose::new(
            UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
            Vector3::new(0.25, -0.15, 0.1),
        );
        let grid = LatLongGrid::new(96, 48).unwrap();
        let (y, d) = render(&room, &pose, &grid, None).unwrap();
        let d_ref = 2.0;
        let weights = ResidualWeights::default();
        let room_best = find_stationary_motion(&grid, &y, &d, d_ref, &weights).unwrap();

        let scene = axisym_scene();
        let pose_axi = CameraPose::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 0.2));
        let (ya, da) = render(&scene, &pose_axi, &grid, None).unwrap();
        let axi_best = find_stationary_motion(&grid, &ya, &da, d_ref, &weights).unwrap();
        assert!(
            room_best.residual_rms > 10.0 * axi_best.residual_rms,
            "room {} axi {}",
            room_best.residual_rms,
            axi_best.residual_rms
        );
    }

    #[test]
    fn orthogonality_check_conventions() {
        assert_eq!(
            orthogonality_identity_check(&Vector3::zeros(), &Vector3::new(1.0, 0.0, 0.0)),
            0.0
        );
        assert_eq!(
            orthogonality_identity_check(&Vector3::new(0.0, 0.0, 2.0), &Vector3::zeros()),
            0.0
        );
        assert_eq!(
            orthogonality_identity_check(&Vector3::new(0.0, 0.0, 2.0), &Vector3::new(3.0, 0.0, 0.0)),
            0.0
        );
        let v = orthogonality_identity_check(&Vector3::new(1.0, 0.0, 0.0), &Vector3::new(1.0, 1.0, 0.0));
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn search_equivariant_under_camera_roll() {
        // Rolling the camera about its optical axis must rotate the found
        // axis accordingly (coordinates of the minimizer follow the frame).
        let scene = axisym_scene();
        let grid = LatLongGrid::new(96, 48).unwrap();
        let weights = ResidualWeights::default();
        // Camera on the axis, optical axis perpendicular to it so the
        // symmetry axis has a generic direction in the camera frame.
        let q0 = UnitQuaternion::rotation_between(&Vector3::z(), &Vector3::x()).unwrap();
        let pose0 = CameraPose::new(q0, Vector3::new(0.0, 0.0, 0.2));
        let roll = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.7);
        let pose1 = CameraPose::new(q0 * roll, Vector3::new(0.0, 0.0, 0.2));
        let (y0, d0) = render(&scene, &pose0, &grid, None).unwrap();
        let (y1, d1) = render(&scene, &pose1, &grid, None).unwrap();
        let b0 = find_stationary_motion(&grid, &y0, &d0, 2.0, &weights).unwrap();
        let b1 = find_stationary_motion(&grid, &y1, &d1, 2.0, &weights).unwrap();
        // Candidates live in the camera frame: b1 = roll^{-1} b0 up to sign.
        let mapped = roll.inverse() * b0.p_w;
        let aligned = mapped.dot(&b1.p_w).abs();
        assert!(aligned > 0.95, "b0 {:?} b1 {:?}", b0.p_w, b1.p_w);
    }
}
