//! Benchmark plants: cart-pole swing-up and truck backer-upper.

mod cartpole;
mod truck;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::problem::OcpConfig;

pub use cartpole::{cartpole_cost, cartpole_energy, cartpole_ocp, cartpole_step, CartPoleParams};
pub use truck::{tractor_axle, truck_cost, truck_ocp, truck_step, TruckParams};

/// Classic fourth-order Runge–Kutta step for an autonomous vector field.
pub fn rk4<const N: usize>(f: impl Fn(&[f64; N]) -> [f64; N], x: &[f64; N], dt: f64) -> [f64; N] {
    let add = |a: &[f64; N], b: &[f64; N], h: f64| -> [f64; N] {
        let mut out = *a;
        for i in 0..N {
            out[i] += h * b[i];
        }
        out
    };
    let k1 = f(x);
    let k2 = f(&add(x, &k1, 0.5 * dt));
    let k3 = f(&add(x, &k2, 0.5 * dt));
    let k4 = f(&add(x, &k3, dt));
    let mut out = *x;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Cartpole,
    Truck,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cartpole => "cartpole",
            Self::Truck => "truck",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "cartpole" | "cart-pole" => Ok(Self::Cartpole),
            "truck" => Ok(Self::Truck),
            other => Err(Error::InvalidConfig(format!(
                "unknown environment `{other}`"
            ))),
        }
    }
}

/// A plant packaged for closed-loop episodes.
#[derive(Clone, Debug)]
pub struct Environment {
    pub kind: EnvKind,
    pub ocp: OcpConfig,
    pub initial_state: Vec<f64>,
    /// Episode length `T`.
    pub steps: usize,
    /// Initial proposal standard deviation per control channel.
    pub initial_std: Vec<f64>,
}

impl Environment {
    pub fn cartpole(p: &CartPoleParams) -> Self {
        Self {
            kind: EnvKind::Cartpole,
            ocp: cartpole_ocp(p),
            initial_state: vec![0.0, 0.0, std::f64::consts::PI, 0.0],
            steps: p.steps,
            initial_std: vec![0.5 * p.force_bound],
        }
    }

    pub fn truck(p: &TruckParams) -> Self {
        Self {
            kind: EnvKind::Truck,
            ocp: truck_ocp(p),
            initial_state: p.initial_state.to_vec(),
            steps: p.steps,
            initial_std: vec![0.5 * p.steer_bound],
        }
    }

    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Cartpole => Self::cartpole(&CartPoleParams::default()),
            EnvKind::Truck => Self::truck(&TruckParams::default()),
        }
    }
}
