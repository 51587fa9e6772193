//! Two inverted pendulums on carts coupled by a spring, each tracking its own
//! angle reference under a lower angle bound `θ_i ≥ θ̲_i`.
//!
//! Each pendulum runs a decentralized backstepping tracking controller whose
//! output is projected onto the half-line allowed by a relative-degree-two
//! barrier constraint (`ψ_{i,1}(x_i) + ψ_{i,0} u_i ≥ 0`). The coupling through
//! the other pendulum's angle is treated as an interconnection gain
//! `φ_i(s) = a k (a - wl) / (wml²) · s`, which is what the small-gain check
//! is run on.
//!
//! State layout: `x = (θ₁, θ̇₁, θ₂, θ̇₂)`; input `u = (u₁, u₂)`. Subsystem
//! indices are 0-based in this module.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier_chain::{BarrierChain, ChainError, EtaOracle};
use crate::config::ScenarioConfig;
use crate::gain_algebra::{check_small_gain, default_small_gain_grid, AlgebraError, SmallGainReport, SubsystemGains};
use crate::gains::{GainError, GainFn};
use crate::simulator::{integrate, SimError, SystemSpec, Trajectory};

/// Allowed dip below the angle bound before a run counts as unsafe.
pub const SAFETY_TOL: f64 = 1e-3;
/// Tracking is scored only from this time on.
pub const TRACKING_FROM: f64 = 3.0;
/// Tracking is scored only where the reference clears the bound by this much.
pub const TRACKING_CLEARANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("safety filter infeasible: psi0 = 0 and psi1 = {psi1} < 0")]
    Infeasible { psi1: f64 },
    #[error("invalid benchmark setup: {0}")]
    Invalid(String),
    #[error("scenario `{scenario}`: {source}")]
    Simulation {
        scenario: String,
        #[source]
        source: SimError,
    },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Physical parameters (SI units). `a` is held constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    pub g: f64,
    pub l: f64,
    pub k: f64,
    pub cart_mass: f64,
    pub pendulum_mass: f64,
    pub b: f64,
    pub a: f64,
    pub theta_min: [f64; 2],
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            g: 9.8,
            l: 1.0,
            k: 1.0,
            cart_mass: 15.0,
            pendulum_mass: 5.0,
            b: 2.0,
            a: 0.75,
            theta_min: [-0.4, -0.5],
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        let all = [self.g, self.l, self.k, self.cart_mass, self.pendulum_mass, self.b, self.a, self.theta_min[0], self.theta_min[1]];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(BenchmarkError::Invalid("pendulum parameters must be finite".into()));
        }
        if !(self.l > 0.0 && self.cart_mass > 0.0 && self.pendulum_mass > 0.0) {
            return Err(BenchmarkError::Invalid("l, cart_mass and pendulum_mass must be positive".into()));
        }
        if !(0.0..=self.l).contains(&self.a) {
            return Err(BenchmarkError::Invalid(format!("a = {} must lie in [0, l]", self.a)));
        }
        Ok(())
    }

    /// `w = m / (M + m)`.
    pub fn w(&self) -> f64 {
        self.pendulum_mass / (self.cart_mass + self.pendulum_mass)
    }

    /// `w m l²`.
    pub fn inertia(&self) -> f64 {
        self.w() * self.pendulum_mass * self.l * self.l
    }

    /// `k (a - wl) / (wml²)`.
    pub fn spring_coeff(&self) -> f64 {
        self.k * (self.a - self.w() * self.l) / self.inertia()
    }

    /// Slope of the interconnection gain, `a k (a - wl) / (wml²)`.
    pub fn coupling_gain(&self) -> f64 {
        self.a * self.spring_coeff()
    }

    fn gravity_coeff(&self) -> f64 {
        self.g / (self.w() * self.l)
    }

    fn mass_ratio(&self) -> f64 {
        self.pendulum_mass / self.cart_mass
    }

    /// `h_i(x_i) = θ_i - θ̲_i`.
    pub fn h(&self, i: usize, theta: f64) -> f64 {
        theta - self.theta_min[i]
    }
}

/// Backstepping gains `r_{i,1}, r_{i,2}` and barrier slopes `c_{i,1}, c_{i,2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerGains {
    pub r1: [f64; 2],
    pub r2: [f64; 2],
    pub c1: [f64; 2],
    pub c2: [f64; 2],
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            r1: [10.0, 10.0],
            r2: [5.0, 5.0],
            c1: [20.0, 20.0],
            c2: [10.0, 10.0],
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        let all = self.r1.iter().chain(&self.r2).chain(&self.c1).chain(&self.c2);
        if all.into_iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(BenchmarkError::Invalid("controller gains must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Analytic reference signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    Sin,
    Cos,
    Zero,
}

/// `(y, ẏ, ÿ)` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefSample {
    pub y: f64,
    pub dy: f64,
    pub ddy: f64,
}

impl Reference {
    pub fn at(self, t: f64) -> RefSample {
        let (s, c) = t.sin_cos();
        match self {
            Reference::Sin => RefSample { y: s, dy: c, ddy: -s },
            Reference::Cos => RefSample { y: c, dy: -s, ddy: -c },
            Reference::Zero => RefSample { y: 0.0, dy: 0.0, ddy: 0.0 },
        }
    }
}

/// Closed-loop vector field of both pendulums.
pub fn dynamics(p: &PendulumParams, x: &[f64], u: &[f64]) -> [f64; 4] {
    let accel = |i: usize| {
        let (th, om) = (x[2 * i], x[2 * i + 1]);
        let other = x[2 * (1 - i)];
        p.gravity_coeff() * th - p.mass_ratio() * om * om * th.sin() - p.coupling_gain() * th
            + p.b * p.spring_coeff()
            + u[i] / p.inertia()
            + p.coupling_gain() * other
    };
    [x[1], accel(0), x[3], accel(1)]
}

/// Backstepping tracking law for pendulum `i` from local state `x_i`, its
/// reference, and the value of the other pendulum's reference.
pub fn nominal_controller(
    p: &PendulumParams,
    gains: &ControllerGains,
    i: usize,
    x_i: [f64; 2],
    reference: RefSample,
    y_ref_other: f64,
) -> f64 {
    let [th, om] = x_i;
    let (r1, r2) = (gains.r1[i], gains.r2[i]);
    let z1 = th - reference.y;
    let varpi = -r1 * z1 + reference.dy;
    let z2 = om - varpi;
    let varpi_dot = -r1 * (om - reference.dy) + reference.ddy;
    let w_term = z1 - varpi_dot + p.gravity_coeff() * th - p.mass_ratio() * om * om * th.sin()
        - p.coupling_gain() * th
        + p.b * p.spring_coeff();
    p.inertia() * (-r2 * z2 - w_term - 0.5 * p.coupling_gain() * (z2 + 2.0 * y_ref_other))
}

/// `(ψ_{i,1}(x_i), ψ_{i,0})` of the barrier constraint `ψ₁ + ψ₀ u_i ≥ 0`.
pub fn psi_terms(p: &PendulumParams, gains: &ControllerGains, i: usize, x_i: [f64; 2]) -> (f64, f64) {
    let [th, om] = x_i;
    let (c1, c2) = (gains.c1[i], gains.c2[i]);
    let eta1 = om + c1 * p.h(i, th);
    let psi1 = p.gravity_coeff() * th - p.mass_ratio() * om * om * th.sin() + c1 * om + c2 * eta1
        - p.spring_coeff() * (p.a * th - p.b - p.theta_min[1 - i]);
    (psi1, 1.0 / p.inertia())
}

/// Minimal-intervention projection of `u_hat` onto `{u : ψ₁ + ψ₀ u ≥ 0}`.
pub fn qp_filter(u_hat: f64, psi1: f64, psi0: f64) -> Result<f64, BenchmarkError> {
    if psi0 > 0.0 {
        Ok(u_hat.max(-psi1 / psi0))
    } else if psi0 < 0.0 {
        Ok(u_hat.min(-psi1 / psi0))
    } else if psi1 >= 0.0 {
        Ok(u_hat)
    } else {
        Err(BenchmarkError::Infeasible { psi1 })
    }
}

/// Barrier chain `(h_i, η_{i,1}, η_{i,2})` of pendulum `i` over the full state
/// and input, with `η_{i,2} = ψ_{i,1} + ψ_{i,0} u_i + φ_i(h_{3-i})`.
pub fn pendulum_chain(p: &PendulumParams, gains: &ControllerGains, i: usize) -> Result<BarrierChain, BenchmarkError> {
    let (p0, p1, p2) = (*p, *p, *p);
    let c1 = gains.c1[i];
    let g = *gains;
    let oracles: Vec<EtaOracle> = vec![
        Arc::new(move |x: &[f64], _: &[f64]| p0.h(i, x[2 * i])),
        Arc::new(move |x: &[f64], _: &[f64]| x[2 * i + 1] + c1 * p1.h(i, x[2 * i])),
        Arc::new(move |x: &[f64], u: &[f64]| {
            let (psi1, psi0) = psi_terms(&p2, &g, i, [x[2 * i], x[2 * i + 1]]);
            let other = 1 - i;
            psi1 + psi0 * u[i] + p2.coupling_gain() * p2.h(other, x[2 * other])
        }),
    ];
    Ok(BarrierChain::new(
        oracles,
        vec![GainFn::linear(gains.c1[i])?, GainFn::linear(gains.c2[i])?],
    )?)
}

/// Nominal and filtered inputs for both pendulums at `(t, x)`.
fn control(cfg: &ScenarioConfig, t: f64, x: &[f64]) -> Result<([f64; 2], [f64; 2]), BenchmarkError> {
    let refs = [cfg.reference.y1.at(t), cfg.reference.y2.at(t)];
    let mut nominal = [0.0; 2];
    let mut filtered = [0.0; 2];
    for i in 0..2 {
        let x_i = [x[2 * i], x[2 * i + 1]];
        nominal[i] = nominal_controller(&cfg.params, &cfg.gains, i, x_i, refs[i], refs[1 - i].y);
        filtered[i] = if cfg.filter {
            let (psi1, psi0) = psi_terms(&cfg.params, &cfg.gains, i, x_i);
            qp_filter(nominal[i], psi1, psi0)?
        } else {
            nominal[i]
        };
    }
    Ok((nominal, filtered))
}

/// Subsystem gains of both pendulums for the small-gain test.
pub fn subsystem_gains(cfg: &ScenarioConfig) -> Result<[SubsystemGains; 2], BenchmarkError> {
    let sigma = cfg.sigma.build()?;
    let build = |i: usize| -> Result<SubsystemGains, BenchmarkError> {
        let phi = match cfg.interconnection.phi(i) {
            Some(spec) => spec.build()?,
            None => GainFn::linear(cfg.params.coupling_gain())?,
        };
        let gamma = cfg.interconnection.gamma(i).build()?;
        Ok(SubsystemGains::new(
            vec![GainFn::linear(cfg.gains.c1[i])?, GainFn::linear(cfg.gains.c2[i])?],
            phi,
            gamma,
            sigma.clone(),
        )?)
    };
    Ok([build(0)?, build(1)?])
}

/// Loop gain of the backstepping error subsystems, `χ₁(χ₂(s)/λ₂)/λ₁ / s`
/// with `χ_i(s) = a k (a - wl)/(2wml²) s` and `λ_i = min(r_{i,1}, r_{i,2})`.
pub fn backstepping_loop_gain(p: &PendulumParams, gains: &ControllerGains) -> f64 {
    let chi = 0.5 * p.coupling_gain().abs();
    let lambda = |i: usize| gains.r1[i].min(gains.r2[i]);
    chi * chi / (lambda(0) * lambda(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingStats {
    /// Maximal sub-intervals of `[3, t_end]` where the reference clears the bound.
    pub intervals: usize,
    pub samples: usize,
    /// Max `|θ - y_r|` over those sub-intervals (0 when there are none).
    pub max_error: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub scenario: String,
    pub trajectory: Trajectory,
    pub h: [Vec<f64>; 2],
    pub eta1: [Vec<f64>; 2],
    pub eta2: [Vec<f64>; 2],
    pub u_nominal: [Vec<f64>; 2],
    pub u_filtered: [Vec<f64>; 2],
    pub reference: [Vec<f64>; 2],
    pub min_h: [f64; 2],
    /// `min_t η_{i,2} - φ_i(h_{3-i})`.
    pub min_barrier_residual: [f64; 2],
    /// First sample from which `h_i` is non-negative and stays above `-1e-3`.
    pub entry_time: [Option<f64>; 2],
    pub tracking: [TrackingStats; 2],
    pub small_gain: SmallGainReport,
    pub backstepping_loop_gain: f64,
}

impl BenchmarkResult {
    /// Initially safe pendulums must never dip below `-SAFETY_TOL`; initially
    /// unsafe ones must enter the safe set and stay.
    pub fn is_safe(&self, i: usize) -> bool {
        if self.h[i][0] >= 0.0 {
            self.min_h[i] >= -SAFETY_TOL
        } else {
            self.entry_time[i].is_some()
        }
    }

    pub fn all_safe(&self) -> bool {
        self.is_safe(0) && self.is_safe(1)
    }

    pub fn to_csv(&self) -> String {
        self.trajectory.to_csv(&[
            ("h1", &self.h[0]),
            ("h2", &self.h[1]),
            ("eta11", &self.eta1[0]),
            ("eta21", &self.eta1[1]),
            ("u1_nom", &self.u_nominal[0]),
            ("u1_filtered", &self.u_filtered[0]),
            ("u2_nom", &self.u_nominal[1]),
            ("u2_filtered", &self.u_filtered[1]),
        ])
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        writeln!(out, "scenario: {}", self.scenario).unwrap();
        writeln!(out, "samples: {}", self.trajectory.len()).unwrap();
        writeln!(out, "dt: {:e}", self.trajectory.dt).unwrap();
        for i in 0..2 {
            let n = i + 1;
            writeln!(out, "[pendulum {n}]").unwrap();
            writeln!(out, "h{n}(0) = {:.9e}", self.h[i][0]).unwrap();
            writeln!(out, "min h{n} = {:.9e}", self.min_h[i]).unwrap();
            match self.entry_time[i] {
                Some(t) => writeln!(out, "entry time = {t:.6}").unwrap(),
                None => writeln!(out, "entry time = none").unwrap(),
            }
            writeln!(out, "min barrier residual = {:.9e}", self.min_barrier_residual[i]).unwrap();
            let tr = &self.tracking[i];
            writeln!(
                out,
                "tracking: {} intervals, {} samples, max error {:.9e}",
                tr.intervals, tr.samples, tr.max_error
            )
            .unwrap();
            writeln!(out, "safe = {}", self.is_safe(i)).unwrap();
        }
        writeln!(out, "[small-gain]").unwrap();
        writeln!(out, "max ratio = {:.9e}", self.small_gain.max_ratio).unwrap();
        if let Some(cf) = self.small_gain.closed_form_ratio {
            writeln!(out, "closed-form ratio = {cf:.9e}").unwrap();
        }
        writeln!(out, "verdict = {}", if self.small_gain.pass { "PASS" } else { "FAIL" }).unwrap();
        for c in &self.small_gain.caveats {
            writeln!(out, "caveat: {c}").unwrap();
        }
        writeln!(out, "backstepping loop gain = {:.9e}", self.backstepping_loop_gain).unwrap();
        writeln!(out, "overall safe = {}", self.all_safe()).unwrap();
        out
    }
}

/// First sample with `h ≥ 0` after which `h` never drops below `-SAFETY_TOL`.
pub fn entry_time(t: &[f64], h: &[f64]) -> Option<f64> {
    let mut suffix_min = vec![f64::INFINITY; h.len() + 1];
    for j in (0..h.len()).rev() {
        suffix_min[j] = suffix_min[j + 1].min(h[j]);
    }
    (0..h.len())
        .find(|&j| h[j] >= 0.0 && suffix_min[j] >= -SAFETY_TOL)
        .map(|j| t[j])
}

/// Tracking error on the maximal sub-intervals of `[from, t_end]` where
/// `y_ref ≥ bound`.
pub fn tracking_stats(t: &[f64], theta: &[f64], y_ref: &[f64], bound: f64, from: f64) -> TrackingStats {
    let mut stats = TrackingStats {
        intervals: 0,
        samples: 0,
        max_error: 0.0,
    };
    let mut inside = false;
    for j in 0..t.len() {
        let active = t[j] >= from && y_ref[j] >= bound;
        if active {
            if !inside {
                stats.intervals += 1;
            }
            stats.samples += 1;
            stats.max_error = stats.max_error.max((theta[j] - y_ref[j]).abs());
        }
        inside = active;
    }
    stats
}

/// Runs one closed-loop benchmark scenario end to end.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<BenchmarkResult, BenchmarkError> {
    cfg.validate().map_err(|e| BenchmarkError::Invalid(e.to_string()))?;
    let small_gain = {
        let [g1, g2] = subsystem_gains(cfg)?;
        check_small_gain(&g1, &g2, &default_small_gain_grid())
    };

    let p = cfg.params;
    let law_cfg = cfg.clone();
    let sys = SystemSpec::new(4, 2, move |_, x, u, dx| dx.copy_from_slice(&dynamics(&p, x, u)))
        .with_feedback(move |t, x| {
            control(&law_cfg, t, x)
                .map(|(_, filtered)| filtered.to_vec())
                .map_err(|e| e.to_string())
        });
    let x0 = [cfg.init.x1[0], cfg.init.x1[1], cfg.init.x2[0], cfg.init.x2[1]];
    let mut trajectory = integrate(&sys, &x0, cfg.t_end, cfg.dt).map_err(|source| BenchmarkError::Simulation {
        scenario: cfg.name.clone(),
        source,
    })?;
    trajectory.meta = cfg.name.clone();

    let chains = [pendulum_chain(&p, &cfg.gains, 0)?, pendulum_chain(&p, &cfg.gains, 1)?];
    let n = trajectory.len();
    let mut h = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut eta1 = h.clone();
    let mut eta2 = h.clone();
    let mut u_nominal = h.clone();
    let mut reference = h.clone();
    let mut residual = h.clone();
    for j in 0..n {
        let (t, x, u) = (trajectory.t[j], &trajectory.states[j], &trajectory.inputs[j]);
        let (nominal, _) = control(cfg, t, x)?;
        let refs = [cfg.reference.y1.at(t).y, cfg.reference.y2.at(t).y];
        for i in 0..2 {
            let etas = chains[i].etas(x, u);
            let other = 1 - i;
            let phi = p.coupling_gain() * p.h(other, x[2 * other]);
            h[i].push(etas[0]);
            eta1[i].push(etas[1]);
            eta2[i].push(etas[2]);
            residual[i].push(etas[2] - phi);
            u_nominal[i].push(nominal[i]);
            reference[i].push(refs[i]);
        }
    }
    let u_filtered = [trajectory.input_component(0), trajectory.input_component(1)];
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let tracking = [0, 1].map(|i| {
        tracking_stats(
            &trajectory.t,
            &trajectory.component(2 * i),
            &reference[i],
            p.theta_min[i] + TRACKING_CLEARANCE,
            TRACKING_FROM,
        )
    });

    Ok(BenchmarkResult {
        scenario: cfg.name.clone(),
        min_h: [min(&h[0]), min(&h[1])],
        min_barrier_residual: [min(&residual[0]), min(&residual[1])],
        entry_time: [entry_time(&trajectory.t, &h[0]), entry_time(&trajectory.t, &h[1])],
        tracking,
        small_gain,
        backstepping_loop_gain: backstepping_loop_gain(&p, &cfg.gains),
        trajectory,
        h,
        eta1,
        eta2,
        u_nominal,
        u_filtered,
        reference,
    })
}
