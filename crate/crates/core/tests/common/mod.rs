use quadtune::dynamics::{step, ControlInputs, DivergenceLimits, QuadParams, QuadState};

/// Second transcription of the equations of motion, written against the
/// symbol names of the model: angles (φ, θ, ψ), their rates, positions and
/// velocities, total thrust u1 and torques u2..u4.
pub fn reference_rhs(s: &[f64; 12], u: &ControlInputs, p: &QuadParams, w: [f64; 3]) -> [f64; 12] {
    let [_x, _y, _z, phi, theta, psi, x_dot, y_dot, z_dot, phi_dot, theta_dot, psi_dot] = *s;
    let (m, g, l) = (p.mass, p.gravity, p.arm_length);
    let (jx, jy, jz) = (p.jx, p.jy, p.jz);
    let (u1, u2, u3, u4) = (u.thrust, u.roll, u.pitch, u.yaw);

    let phi_dd = theta_dot * psi_dot * ((jy - jz) / jx) + (l / jx) * u2 + w[0];
    let theta_dd = phi_dot * psi_dot * ((jz - jx) / jy) + (l / jy) * u3 + w[1];
    let psi_dd = phi_dot * theta_dot * ((jx - jy) / jz) + (1.0 / jz) * u4 + w[2];
    let z_dd = (u1 / m) * phi.cos() * theta.cos() - g;
    let x_dd = (u1 / m) * (phi.cos() * theta.sin() * psi.cos() + phi.sin() * psi.sin());
    let y_dd = (u1 / m) * (phi.cos() * theta.sin() * psi.sin() - phi.sin() * psi.cos());

    [
        x_dot, y_dot, z_dot, phi_dot, theta_dot, psi_dot, x_dd, y_dd, z_dd, phi_dd, theta_dd,
        psi_dd,
    ]
}

fn integrate(dt: f64, duration: f64) -> [f64; 12] {
    let params = QuadParams::default();
    let limits = DivergenceLimits {
        state_ceiling: 1e6,
        max_tilt: 1e9,
    };
    let mut s = QuadState {
        roll_rate: 2.0,
        pitch_rate: -1.5,
        yaw_rate: 1.0,
        vx: 1.0,
        ..QuadState::at_position(0.0, 0.0, 2.0)
    };
    let u = ControlInputs {
        thrust: 1.3 * params.mass * params.gravity,
        roll: 0.05,
        pitch: -0.03,
        yaw: 0.02,
    };
    let n = (duration / dt).round() as usize;
    for _ in 0..n {
        s = step(&s, &u, &params, [0.4, -0.2, 0.1], dt, &limits).unwrap();
    }
    s.to_array()
}

fn distance(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Richardson estimate of the integrator's order from a 2 s maneuver with
/// large body rates, at dt = 0.02, 0.01, 0.005.
pub fn rk4_observed_order() -> f64 {
    let coarse = integrate(0.02, 2.0);
    let mid = integrate(0.01, 2.0);
    let fine = integrate(0.005, 2.0);
    (distance(&coarse, &mid) / distance(&mid, &fine)).log2()
}
