use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::rk4;
use crate::problem::OcpConfig;

/// Cart-pole with a uniform rod; state `(x, ẋ, θ, θ̇)` with `θ = 0` upright.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub gravity: f64,
    pub force_bound: f64,
    pub dt: f64,
    pub horizon: usize,
    pub steps: usize,
    pub q_theta: f64,
    pub q_x: f64,
    pub q_xdot: f64,
    pub q_thetadot: f64,
    pub r: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.81,
            force_bound: 10.0,
            dt: 0.02,
            horizon: 50,
            steps: 150,
            q_theta: 10.0,
            q_x: 1.0,
            q_xdot: 0.1,
            q_thetadot: 0.1,
            r: 0.01,
        }
    }
}

fn derivative(p: &CartPoleParams, s: &[f64; 4], force: f64) -> [f64; 4] {
    let [_, xdot, theta, thetadot] = *s;
    let total = p.cart_mass + p.pole_mass;
    let ml = p.pole_mass * p.half_length;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + ml * thetadot * thetadot * sin) / total;
    let thetaacc = (p.gravity * sin - cos * temp)
        / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total));
    let xacc = temp - ml * thetaacc * cos / total;
    [xdot, xacc, thetadot, thetaacc]
}

/// One RK4 step with the force held constant.
pub fn cartpole_step(p: &CartPoleParams, state: &[f64; 4], force: f64, dt: f64) -> [f64; 4] {
    rk4(|s| derivative(p, s, force), state, dt)
}

pub fn cartpole_cost(p: &CartPoleParams, s: &[f64; 4], force: f64) -> f64 {
    let [x, xdot, theta, thetadot] = *s;
    p.q_theta * (1.0 - theta.cos())
        + p.q_x * x * x
        + p.q_xdot * xdot * xdot
        + p.q_thetadot * thetadot * thetadot
        + p.r * force * force
}

/// Total mechanical energy of the unforced system.
pub fn cartpole_energy(p: &CartPoleParams, s: &[f64; 4]) -> f64 {
    let [_, xdot, theta, thetadot] = *s;
    let total = p.cart_mass + p.pole_mass;
    let l = p.half_length;
    0.5 * total * xdot * xdot
        + p.pole_mass * l * theta.cos() * xdot * thetadot
        + 0.5 * p.pole_mass * l * l * thetadot * thetadot * (4.0 / 3.0)
        + p.pole_mass * p.gravity * l * theta.cos()
}

fn as_state(x: &[f64]) -> [f64; 4] {
    [x[0], x[1], x[2], x[3]]
}

pub fn cartpole_ocp(p: &CartPoleParams) -> OcpConfig {
    let (pd, pc, pt) = (p.clone(), p.clone(), p.clone());
    let dt = p.dt;
    OcpConfig {
        horizon: p.horizon,
        control_dim: 1,
        state_dim: 4,
        control_lower: vec![-p.force_bound],
        control_upper: vec![p.force_bound],
        dt,
        dynamics: Arc::new(move |x, u, out| {
            out.copy_from_slice(&cartpole_step(&pd, &as_state(x), u[0], dt));
        }),
        stage_cost: Arc::new(move |x, u| cartpole_cost(&pc, &as_state(x), u[0])),
        terminal_cost: Arc::new(move |x| cartpole_cost(&pt, &as_state(x), 0.0)),
    }
}
