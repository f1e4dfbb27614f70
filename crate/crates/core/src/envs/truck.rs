use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::rk4;
use crate::problem::OcpConfig;

/// Kinematic tractor-trailer reversing at fixed speed.
///
/// State `(x, y, ψ, φ)`: trailer axle position, trailer yaw, and hitch angle
/// (tractor yaw minus trailer yaw). The hitch sits on the tractor's rear axle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruckParams {
    pub wheelbase: f64,
    pub hitch_length: f64,
    /// Negative for reversing.
    pub speed: f64,
    pub steer_bound: f64,
    pub dt: f64,
    pub horizon: usize,
    pub steps: usize,
    pub initial_state: [f64; 4],
    pub jackknife_limit: f64,
    pub jackknife_penalty: f64,
    pub q_pos: f64,
    pub q_yaw: f64,
    pub q_hitch: f64,
    pub r: f64,
}

impl Default for TruckParams {
    fn default() -> Self {
        Self {
            wheelbase: 3.0,
            hitch_length: 4.0,
            speed: -1.0,
            steer_bound: 0.5,
            dt: 0.05,
            horizon: 40,
            steps: 200,
            initial_state: [20.0, 0.0, 0.3, 0.0],
            jackknife_limit: 1.0,
            jackknife_penalty: 1000.0,
            q_pos: 1.0,
            q_yaw: 10.0,
            q_hitch: 1.0,
            r: 0.1,
        }
    }
}

fn derivative(p: &TruckParams, s: &[f64; 4], steer: f64) -> [f64; 4] {
    let [_, _, yaw, hitch] = *s;
    let v = p.speed;
    let trailer_v = v * hitch.cos();
    let yaw_rate = v * hitch.sin() / p.hitch_length;
    [
        trailer_v * yaw.cos(),
        trailer_v * yaw.sin(),
        yaw_rate,
        v * steer.tan() / p.wheelbase - yaw_rate,
    ]
}

pub fn truck_step(p: &TruckParams, state: &[f64; 4], steer: f64, dt: f64) -> [f64; 4] {
    rk4(|s| derivative(p, s, steer), state, dt)
}

pub fn truck_cost(p: &TruckParams, s: &[f64; 4], steer: f64) -> f64 {
    let [x, y, yaw, hitch] = *s;
    let mut c = p.q_pos * (x * x + y * y)
        + p.q_yaw * yaw * yaw
        + p.q_hitch * hitch * hitch
        + p.r * steer * steer;
    let excess = hitch.abs() - p.jackknife_limit;
    if excess > 0.0 {
        c += p.jackknife_penalty * (1.0 + excess * excess);
    }
    c
}

/// Position of the tractor's rear axle.
pub fn tractor_axle(p: &TruckParams, s: &[f64; 4]) -> (f64, f64) {
    (
        s[0] + p.hitch_length * s[2].cos(),
        s[1] + p.hitch_length * s[2].sin(),
    )
}

fn as_state(x: &[f64]) -> [f64; 4] {
    [x[0], x[1], x[2], x[3]]
}

pub fn truck_ocp(p: &TruckParams) -> OcpConfig {
    let (pd, pc, pt) = (p.clone(), p.clone(), p.clone());
    let dt = p.dt;
    OcpConfig {
        horizon: p.horizon,
        control_dim: 1,
        state_dim: 4,
        control_lower: vec![-p.steer_bound],
        control_upper: vec![p.steer_bound],
        dt,
        dynamics: Arc::new(move |x, u, out| {
            out.copy_from_slice(&truck_step(&pd, &as_state(x), u[0], dt));
        }),
        stage_cost: Arc::new(move |x, u| truck_cost(&pc, &as_state(x), u[0])),
        terminal_cost: Arc::new(move |x| truck_cost(&pt, &as_state(x), 0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_backing() {
        let p = TruckParams::default();
        let mut s = [5.0, 0.0, 0.0, 0.0];
        for k in 1..=100 {
            s = truck_step(&p, &s, 0.0, p.dt);
            assert!((s[0] - (5.0 + p.speed * p.dt * k as f64)).abs() <= 1e-12);
            assert_eq!(&s[1..], &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn goal_cost_is_zero() {
        let p = TruckParams::default();
        assert_eq!(truck_cost(&p, &[0.0; 4], 0.0), 0.0);
        assert!(truck_cost(&p, &[0.0, 0.0, 0.0, 1.2], 0.0) > p.jackknife_penalty);
    }
}
