//! Fast built-in checks of the closed-form behaviors every module exposes;
//! exercised by the `selftest` CLI subcommand and expected to complete in
//! seconds.

use nalgebra::{UnitQuaternion, Vector3};

use crate::cap::{build_window, observer_step_cap, CapObserverState};
use crate::grid::{LatLongGrid, PinholeGrid, ScalarField, SphereGrid, Stencil};
use crate::kinematics::{
    integrate_pose, measured_twist, BiasPair, BodyTwist, CameraPose, Envelope,
};
use crate::observer::ObserverGains;
use crate::scene::{make_room_scene, ray_cast, render, RoomConfig, Scene, Surface, Texture};
use crate::sphere::{div_cross, grad_dot, laplacian_dot, pinhole_to_sphere, UnitDir};
use crate::transport::{
    characteristic_flow, BiasSeries, CharInputs, FieldSeries, TwistSeries,
};

type Check = (&'static str, fn() -> Result<(), String>);

fn ok(cond: bool, msg: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn near(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    if (a - b).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: {a} vs {b} (tol {tol})"))
    }
}

fn check_grad_dot() -> Result<(), String> {
    let g = grad_dot(UnitDir::new(0.0, 0.0, 1.0), &Vector3::new(1.0, 0.0, 0.0));
    ok((g.v - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-14, "tangent projection")?;
    let g = grad_dot(UnitDir::new(0.0, 0.0, 1.0), &Vector3::new(0.0, 0.0, 5.0));
    ok(g.v.norm() < 1e-14, "normal projection vanishes")
}

fn check_laplacian_dot() -> Result<(), String> {
    near(
        laplacian_dot(UnitDir::new(0.0, 0.0, 1.0), &Vector3::new(0.0, 0.0, 3.0)),
        -6.0,
        1e-14,
        "axis case",
    )?;
    near(
        laplacian_dot(UnitDir::new(1.0, 0.0, 0.0), &Vector3::new(0.0, 1.0, 0.0)),
        0.0,
        1e-14,
        "orthogonal case",
    )
}

fn check_div_cross() -> Result<(), String> {
    near(
        div_cross(UnitDir::new(0.0, 1.0, 0.0), &Vector3::new(7.0, -2.0, 4.0)),
        0.0,
        0.0,
        "rotation field divergence",
    )
}

fn check_pinhole_chart() -> Result<(), String> {
    let d = pinhole_to_sphere(0.0, 0.0);
    ok((d.vec() - Vector3::z()).norm() < 1e-14, "optical axis")?;
    let d = pinhole_to_sphere(0.3, -0.4);
    let n = 1.25f64.sqrt();
    ok(
        (d.vec() - Vector3::new(0.3 / n, -0.4 / n, 1.0 / n)).norm() < 1e-14,
        "generic pixel",
    )
}

fn check_quadrature_total_area() -> Result<(), String> {
    let g = LatLongGrid::new(128, 64).map_err(|e| e.to_string())?;
    let ones = ScalarField::from_fn(g.cols(), g.rows(), |_, _| 1.0);
    near(
        g.integrate(&ones).map_err(|e| e.to_string())?,
        4.0 * std::f64::consts::PI,
        1e-6,
        "total solid angle",
    )
}

fn check_quadrature_odd_moment() -> Result<(), String> {
    let g = LatLongGrid::new(128, 64).map_err(|e| e.to_string())?;
    let p = Vector3::new(0.3, -0.8, 0.52);
    let f = ScalarField::from_fn(g.cols(), g.rows(), |i, j| g.dir(g.idx(i, j)).dot(&p));
    near(g.integrate(&f).map_err(|e| e.to_string())?, 0.0, 1e-6, "odd moment")
}

fn check_chart_gradient_constant() -> Result<(), String> {
    let g = PinholeGrid::new(16, 12, 0.8, 0.6).map_err(|e| e.to_string())?;
    let f = ScalarField::from_fn(16, 12, |_, _| 3.25);
    for j in 0..12 {
        for i in 0..16 {
            let t = g.chart_gradient(&f, i, j, Stencil::Sobel).map_err(|e| e.to_string())?;
            ok(t.v.norm() < 1e-12, "constant field gradient")?;
        }
    }
    Ok(())
}

fn check_chart_gradient_coordinate() -> Result<(), String> {
    let g = PinholeGrid::new(16, 12, 0.8, 0.6).map_err(|e| e.to_string())?;
    let f = ScalarField::from_fn(16, 12, |i, _| g.z1(i));
    let t = g.chart_gradient(&f, 8, 6, Stencil::Central).map_err(|e| e.to_string())?;
    let k = g.idx(8, 6);
    let (e1, e2) = g.chart_basis(k);
    near(t.v.dot(&e1), 1.0, 1e-10, "z1 response")?;
    near(t.v.dot(&e2), 0.0, 1e-10, "z2 response")?;
    near(t.v.dot(&g.dir(k).vec()), 0.0, 1e-10, "tangency")
}

fn small_env() -> Envelope {
    Envelope {
        center: Vector3::zeros(),
        half: Vector3::new(0.4, 0.4, 0.4),
    }
}

fn check_box_rays() -> Result<(), String> {
    let scene = Scene::new(
        Surface::Box {
            half: Vector3::new(2.0, 2.0, 2.0),
        },
        Texture::Constant(100.0),
        &small_env(),
    )
    .map_err(|e| e.to_string())?;
    let hit = ray_cast(&scene, &Vector3::zeros(), UnitDir::new(0.0, 0.0, 1.0))
        .map_err(|e| e.to_string())?;
    near(hit.distance, 2.0, 1e-12, "axis ray")?;
    let hit = ray_cast(&scene, &Vector3::zeros(), UnitDir::new(0.5, 0.5, 1.0))
        .map_err(|e| e.to_string())?;
    near(hit.distance, 2.0 * 1.5f64.sqrt(), 1e-12, "oblique ray")
}

fn check_sphere_rays() -> Result<(), String> {
    let scene = Scene::new(
        Surface::Sphere { radius: 3.0 },
        Texture::Constant(10.0),
        &small_env(),
    )
    .map_err(|e| e.to_string())?;
    let hit = ray_cast(&scene, &Vector3::zeros(), UnitDir::new(-0.3, 0.8, 0.5))
        .map_err(|e| e.to_string())?;
    near(hit.distance, 3.0, 1e-12, "center ray")
}

fn check_room_texture() -> Result<(), String> {
    let cfg = RoomConfig {
        size: Vector3::new(6.0, 6.0, 6.0),
        amplitude: 100.0,
        freq_h: 0.25,
        freq_v: 0.25,
    };
    let scene = make_room_scene(&cfg, &small_env()).map_err(|e| e.to_string())?;
    let hit = ray_cast(
        &scene,
        &Vector3::zeros(),
        UnitDir::from_vector(Vector3::new(1.0, 1.0, 3.0)),
    )
    .map_err(|e| e.to_string())?;
    near(hit.brightness, 228.5, 1e-9, "sinusoid wall value")
}

fn check_room_degenerate_amplitude() -> Result<(), String> {
    let cfg = RoomConfig {
        amplitude: 0.0,
        ..RoomConfig::default()
    };
    let scene = make_room_scene(&cfg, &small_env()).map_err(|e| e.to_string())?;
    let hit = ray_cast(&scene, &Vector3::zeros(), UnitDir::new(0.2, 0.1, 1.0))
        .map_err(|e| e.to_string())?;
    near(hit.brightness, 128.5, 1e-12, "flat texture")
}

fn check_render_determinism() -> Result<(), String> {
    let scene = make_room_scene(&RoomConfig::default(), &small_env()).map_err(|e| e.to_string())?;
    let grid = PinholeGrid::new(24, 18, 0.8, 0.6).map_err(|e| e.to_string())?;
    let noise = crate::scene::FrameNoise {
        sigma_y: 30.0,
        sigma_d: 0.25,
        seed: 11,
        frame: 2,
    };
    let a = render(&scene, &CameraPose::identity(), &grid, Some(&noise)).map_err(|e| e.to_string())?;
    let b = render(&scene, &CameraPose::identity(), &grid, Some(&noise)).map_err(|e| e.to_string())?;
    ok(a.0 == b.0 && a.1 == b.1, "same seed, same frame, same bits")
}

fn check_pose_translation() -> Result<(), String> {
    let env = Envelope {
        center: Vector3::zeros(),
        half: Vector3::new(10.0, 10.0, 10.0),
    };
    let twist = BodyTwist {
        v: Vector3::new(1.0, 0.0, 0.0),
        w: Vector3::zeros(),
    };
    let p = integrate_pose(&CameraPose::identity(), &twist, 0.1, &env).map_err(|e| e.to_string())?;
    ok((p.c - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-14, "pure translation")
}

fn check_pose_rotation_axis() -> Result<(), String> {
    let env = Envelope {
        center: Vector3::zeros(),
        half: Vector3::new(10.0, 10.0, 10.0),
    };
    let twist = BodyTwist {
        v: Vector3::zeros(),
        w: Vector3::new(0.0, 0.0, std::f64::consts::PI),
    };
    let mut p = CameraPose::identity();
    for _ in 0..100 {
        p = integrate_pose(&p, &twist, 0.01, &env).map_err(|e| e.to_string())?;
    }
    near((p.q.quaternion().norm() - 1.0).abs(), 0.0, 1e-12, "unit quaternion")?;
    near(p.q.angle(), std::f64::consts::PI, 1e-6, "half turn about z")
}

fn check_measured_twist_bias() -> Result<(), String> {
    let t = BodyTwist {
        v: Vector3::new(1.0, 0.0, 0.0),
        w: Vector3::zeros(),
    };
    let bias = BiasPair {
        p_v: Vector3::new(2.5, 0.0, 0.0),
        p_w: Vector3::new(0.05, 0.0, 0.0),
    };
    let m = measured_twist(&t, &bias, None, 0);
    ok(
        m.v == Vector3::new(3.5, 0.0, 0.0) && m.w == Vector3::new(0.05, 0.0, 0.0),
        "additive bias",
    )
}

fn check_trajectory_sample() -> Result<(), String> {
    let mut profile = crate::kinematics::TrajectoryProfile::still(10.0);
    profile.terms[0] = vec![crate::kinematics::Sinusoid {
        amp: 0.3,
        freq_hz: 0.2,
        phase: 0.0,
    }];
    let s = profile.sample(1.25).map_err(|e| e.to_string())?;
    near(s.v.x, 0.3, 1e-12, "quarter period peak")
}

fn check_characteristic_fixed_point() -> Result<(), String> {
    let twists = TwistSeries {
        t0: 0.0,
        dt: 0.1,
        samples: vec![BodyTwist::zero(); 20],
    };
    let bias = BiasSeries::Constant(BiasPair::zero());
    let depth = FieldSeries::Constant(2.0);
    let inputs = CharInputs {
        twists: &twists,
        bias_hat: &bias,
        depth: &depth,
    };
    let eta0 = UnitDir::new(0.1, 0.2, 0.97);
    let path = characteristic_flow(eta0, 0.0, 1.5, &inputs, 60).map_err(|e| e.to_string())?;
    ok((path.end().vec() - eta0.vec()).norm() < 1e-13, "zero twist path")
}

fn check_observer_gain_validation() -> Result<(), String> {
    let gains = ObserverGains::paper();
    gains.validate().map_err(|e| e.to_string())?;
    let bad = ObserverGains { k_v: -1.0, ..gains };
    ok(bad.validate().is_err(), "negative gain rejected")
}

fn check_window_plateau() -> Result<(), String> {
    let grid = PinholeGrid::new(64, 48, 0.9, 0.7).map_err(|e| e.to_string())?;
    let w = build_window(&grid, 10, 5).map_err(|e| e.to_string())?;
    near(w.phi.get(32, 24), 1.0, 0.0, "plateau value")?;
    near(w.grad_phi[grid.idx(32, 24)].norm(), 0.0, 0.0, "plateau gradient")?;
    ok(build_window(&grid, 10, 0).is_err(), "zero outer band rejected")
}

fn check_cap_static_fixed_point() -> Result<(), String> {
    let grid = PinholeGrid::new(32, 24, 0.8, 0.6).map_err(|e| e.to_string())?;
    let scene = make_room_scene(&RoomConfig::default(), &small_env()).map_err(|e| e.to_string())?;
    let (y, d) = render(&scene, &CameraPose::identity(), &grid, None).map_err(|e| e.to_string())?;
    let w = build_window(&grid, 6, 3).map_err(|e| e.to_string())?;
    let state = CapObserverState::from_measurements(&w, &y, &d);
    let zero = Vector3::zeros();
    let next = observer_step_cap(
        &grid,
        &state,
        &y,
        &d,
        &w,
        &zero,
        &zero,
        &ObserverGains::paper(),
        0.02,
    )
    .map_err(|e| e.to_string())?;
    ok(
        next.x_hat.linf_diff(&state.x_hat) < 1e-13 && next.p_v_hat.norm() == 0.0,
        "static exact init stationary",
    )
}

fn check_stationarity_null_motion() -> Result<(), String> {
    let grid = LatLongGrid::new(48, 24).map_err(|e| e.to_string())?;
    let scene = make_room_scene(&RoomConfig::default(), &small_env()).map_err(|e| e.to_string())?;
    let (y, d) = render(&scene, &CameraPose::identity(), &grid, None).map_err(|e| e.to_string())?;
    let (ry, rd) = crate::observability::stationarity_residual(
        &grid,
        &y,
        &d,
        &Vector3::zeros(),
        &Vector3::zeros(),
    )
    .map_err(|e| e.to_string())?;
    ok(
        ry.as_slice().iter().all(|v| *v == 0.0) && rd.as_slice().iter().all(|v| *v == 0.0),
        "null motion is stationary",
    )
}

fn check_orthogonality_conventions() -> Result<(), String> {
    use crate::observability::orthogonality_identity_check;
    near(
        orthogonality_identity_check(&Vector3::zeros(), &Vector3::x()),
        0.0,
        0.0,
        "degenerate rotation",
    )?;
    near(
        orthogonality_identity_check(&Vector3::z(), &Vector3::x()),
        0.0,
        1e-15,
        "orthogonal pair",
    )
}

fn check_config_roundtrip() -> Result<(), String> {
    let cfg = crate::config::SimConfig::default();
    let parsed = crate::config::SimConfig::parse(&cfg.to_config_string()).map_err(|e| e.to_string())?;
    ok(parsed == cfg, "config parse/serialize roundtrip")
}

fn check_scene_rotation_invariance() -> Result<(), String> {
    let scene = make_room_scene(&RoomConfig::default(), &small_env()).map_err(|e| e.to_string())?;
    let rot = UnitQuaternion::from_euler_angles(0.2, -0.4, 0.9);
    let rotated = scene.clone().with_rotation(rot);
    let grid = PinholeGrid::new(16, 12, 0.8, 0.6).map_err(|e| e.to_string())?;
    let pose = CameraPose::new(UnitQuaternion::identity(), Vector3::new(0.1, 0.0, -0.1));
    let pose_rot = CameraPose::new(rot * pose.q, rot * pose.c);
    let (y0, d0) = render(&scene, &pose, &grid, None).map_err(|e| e.to_string())?;
    let (y1, d1) = render(&rotated, &pose_rot, &grid, None).map_err(|e| e.to_string())?;
    ok(
        y0.linf_diff(&y1) < 1e-10 && d0.linf_diff(&d1) < 1e-10,
        "render rotation invariance",
    )
}

/// All built-in checks with stable names.
pub fn checks() -> Vec<Check> {
    vec![
        ("grad_dot_projection", check_grad_dot),
        ("laplacian_dot_closed_form", check_laplacian_dot),
        ("div_cross_zero", check_div_cross),
        ("pinhole_chart_map", check_pinhole_chart),
        ("quadrature_total_area", check_quadrature_total_area),
        ("quadrature_odd_moment", check_quadrature_odd_moment),
        ("chart_gradient_constant", check_chart_gradient_constant),
        ("chart_gradient_coordinate", check_chart_gradient_coordinate),
        ("box_ray_distances", check_box_rays),
        ("sphere_ray_distance", check_sphere_rays),
        ("room_texture_value", check_room_texture),
        ("room_flat_texture", check_room_degenerate_amplitude),
        ("render_noise_determinism", check_render_determinism),
        ("pose_pure_translation", check_pose_translation),
        ("pose_rotation_axis", check_pose_rotation_axis),
        ("measured_twist_bias", check_measured_twist_bias),
        ("trajectory_sample", check_trajectory_sample),
        ("characteristic_fixed_point", check_characteristic_fixed_point),
        ("observer_gain_validation", check_observer_gain_validation),
        ("window_plateau", check_window_plateau),
        ("cap_static_fixed_point", check_cap_static_fixed_point),
        ("stationarity_null_motion", check_stationarity_null_motion),
        ("orthogonality_conventions", check_orthogonality_conventions),
        ("config_roundtrip", check_config_roundtrip),
        ("scene_rotation_invariance", check_scene_rotation_invariance),
    ]
}

/// Runs every check; returns the failures as (name, message) pairs.
pub fn run_all() -> Vec<(String, String)> {
    let mut failures = Vec::new();
    for (name, f) in checks() {
        if let Err(msg) = f() {
            failures.push((name.to_string(), msg));
        }
    }
    failures
}

#[cfg(test)]
mod tests {
    #[test]
    fn selftest_suite_passes() {
        let failures = super::run_all();
        assert!(failures.is_empty(), "{failures:?}");
    }
}
