use biasobs_core::cap::{build_window, observer_step_cap, CapObserverState};
use biasobs_core::grid::{PinholeGrid, SphereGrid};
use biasobs_core::kinematics::{CameraPose, Envelope};
use biasobs_core::observer::ObserverGains;
use biasobs_core::scene::{make_room_scene, render, RoomConfig};
use biasobs_core::nalgebra::{UnitQuaternion, Vector3};

fn main() {
    let freq: f64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let env = Envelope { center: Vector3::zeros(), half: Vector3::new(0.6, 0.6, 0.6) };
    let scene = make_room_scene(&RoomConfig { freq_h: freq, freq_v: freq, ..RoomConfig::default() }, &env).unwrap();
    let grid = PinholeGrid::new(160, 120, 50f64.to_radians(), 40f64.to_radians()).unwrap();
    let q = UnitQuaternion::rotation_between(&Vector3::z(), &Vector3::x()).unwrap();
    let pose = CameraPose::new(q, Vector3::zeros());
    let (y, d) = render(&scene, &pose, &grid, None).unwrap();
    let window = build_window(&grid, 19, 10).unwrap();
    let gains = ObserverGains::paper();

    // Static camera. True biases: rotation about camera x only.
    // Measured twist = bias (v = w = 0). Estimator starts with the exact
    // translation bias and zero rotation bias -> isolates the omega_x loop.
    let p_w_true = Vector3::new(0.05, 0.0, 0.0);
    let p_v_true = Vector3::new(2.5, 0.0, 0.0);
    let wm = p_w_true;
    let vm = p_v_true;
    let mut st = CapObserverState::from_measurements(&window, &y, &d);
    st.p_v_hat = p_v_true;

    let dtf = 1.0 / 42.0;
    let nsub = 16;
    for frame in 0..=504u32 {
        if frame % 42 == 0 {
            let e = st.p_w_hat - p_w_true;
            // Also report the instantaneous rate.
            let next = observer_step_cap(&grid, &st, &y, &d, &window, &wm, &vm, &gains, dtf / nsub as f64).unwrap();
            let rate = (next.p_w_hat - st.p_w_hat) / (dtf / nsub as f64);
            println!("t={:5.1} pwe=({:+.5} {:+.5} {:+.5}) pve=({:+.4} {:+.4} {:+.4}) dpw/dt=({:+.2e} {:+.2e} {:+.2e})",
                frame as f64 * dtf, e.x, e.y, e.z,
                st.p_v_hat.x - p_v_true.x, st.p_v_hat.y - p_v_true.y, st.p_v_hat.z - p_v_true.z,
                rate.x, rate.y, rate.z);
        }
        for _ in 0..nsub {
            st = observer_step_cap(&grid, &st, &y, &d, &window, &wm, &vm, &gains, dtf / nsub as f64).unwrap();
        }
        let _ = grid.len();
    }
}
