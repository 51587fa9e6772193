//! Fixed-step RK4 integration with recorded inputs, point-to-set distances
//! and trajectory-level invariance / set-ISS checks.

use std::fmt::Write as _;
use std::io;
use std::sync::Arc;

use thiserror::Error;

use crate::report::ValidationReport;

/// States whose magnitude exceeds this are treated as a finite escape.
pub const BLOWUP_BOUND: f64 = 1e9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Invalid(String),
    #[error("finite escape: state left |x| <= {BLOWUP_BOUND} or became non-finite after t = {last_time}")]
    FiniteEscape {
        last_time: f64,
        partial: Box<Trajectory>,
    },
    #[error("input evaluation failed at t = {t}: {reason}")]
    Input { t: f64, reason: String },
    #[error("general set distance needs a Lipschitz bound")]
    MissingLipschitzBound,
}

type VectorField = Box<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
type InputLaw = Box<dyn Fn(f64, &[f64]) -> Result<Vec<f64>, String> + Send + Sync>;

/// `ẋ = f(t, x, u)` with an input law `u = k(t, x)`.
///
/// Open-loop signals simply ignore the state argument of the input law;
/// state feedback (the benchmark's filtered controller) uses it.
pub struct SystemSpec {
    pub state_dim: usize,
    pub input_dim: usize,
    vector_field: VectorField,
    input: InputLaw,
}

impl SystemSpec {
    pub fn new<F>(state_dim: usize, input_dim: usize, vector_field: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            state_dim,
            input_dim,
            vector_field: Box::new(vector_field),
            input: Box::new(move |_, _| Ok(vec![0.0; input_dim])),
        }
    }

    /// Open-loop input signal `u(t)`.
    pub fn with_signal<U>(mut self, signal: U) -> Self
    where
        U: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        self.input = Box::new(move |t, _| Ok(signal(t)));
        self
    }

    /// State-feedback input law `u = k(t, x)`; errors abort the integration.
    pub fn with_feedback<K>(mut self, law: K) -> Self
    where
        K: Fn(f64, &[f64]) -> Result<Vec<f64>, String> + Send + Sync + 'static,
    {
        self.input = Box::new(law);
        self
    }

    pub fn input_at(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, SimError> {
        let u = (self.input)(t, x).map_err(|reason| SimError::Input { t, reason })?;
        if u.len() != self.input_dim {
            return Err(SimError::Invalid(format!(
                "input law returned {} components, expected {}",
                u.len(),
                self.input_dim
            )));
        }
        Ok(u)
    }

    pub fn derivative(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.vector_field)(t, x, u, out);
    }
}

/// Uniform time grid `t_j = j·dt`, `j = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    /// `floor(t_end/dt) + 1` samples; a small slack absorbs `t_end/dt` landing
    /// just below an integer.
    pub fn new(t_end: f64, dt: f64) -> Result<Self, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::Invalid("dt must be positive".into()));
        }
        if !(t_end >= dt && t_end.is_finite()) {
            return Err(SimError::Invalid(format!("t_end must be at least dt, got {t_end}")));
        }
        let steps = (t_end / dt + 1e-9).floor() as usize;
        Ok(Self { dt, len: steps + 1 })
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len).map(|j| self.time(j)).collect()
    }
}

/// Recorded solution `x(t)`, with the input applied at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub dt: f64,
    pub meta: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// One state component over time.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|x| x[i]).collect()
    }

    pub fn input_component(&self, i: usize) -> Vec<f64> {
        self.inputs.iter().map(|u| u[i]).collect()
    }

    /// CSV with header `t,x1..xn,u1..um` followed by `extra` columns.
    /// Floats are written with 17 significant digits.
    pub fn to_csv(&self, extra: &[(&str, &[f64])]) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.inputs.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 1..=n {
            write!(out, ",x{i}").unwrap();
        }
        for i in 1..=m {
            write!(out, ",u{i}").unwrap();
        }
        for (name, _) in extra {
            write!(out, ",{name}").unwrap();
        }
        out.push('\n');
        for j in 0..self.len() {
            write!(out, "{:.16e}", self.t[j]).unwrap();
            for v in self.states[j].iter().chain(&self.inputs[j]) {
                write!(out, ",{v:.16e}").unwrap();
            }
            for (_, col) in extra {
                write!(out, ",{:.16e}", col[j]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, mut w: W, extra: &[(&str, &[f64])]) -> io::Result<()> {
        w.write_all(self.to_csv(extra).as_bytes())
    }
}

fn escaped(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_BOUND)
}

/// Classical fixed-step RK4 from `x0` over `[0, t_end]`. The input law is
/// evaluated at every stage time and stage state.
pub fn integrate(sys: &SystemSpec, x0: &[f64], t_end: f64, dt: f64) -> Result<Trajectory, SimError> {
    if x0.len() != sys.state_dim {
        return Err(SimError::Invalid(format!(
            "initial state has {} components, expected {}",
            x0.len(),
            sys.state_dim
        )));
    }
    let grid = TimeGrid::new(t_end, dt)?;
    let n = sys.state_dim;
    let mut traj = Trajectory {
        t: Vec::with_capacity(grid.len),
        states: Vec::with_capacity(grid.len),
        inputs: Vec::with_capacity(grid.len),
        dt,
        meta: String::new(),
    };
    let escape = |traj: Trajectory| {
        let last_time = traj.t.last().copied().unwrap_or(0.0);
        SimError::FiniteEscape {
            last_time,
            partial: Box::new(traj),
        }
    };
    if escaped(x0) {
        return Err(escape(traj));
    }

    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut stage = vec![0.0; n];
    for j in 0..grid.len {
        let t = grid.time(j);
        let u = sys.input_at(t, &x)?;
        traj.t.push(t);
        traj.states.push(x.clone());
        traj.inputs.push(u.clone());
        if j + 1 == grid.len {
            break;
        }

        sys.derivative(t, &x, &u, &mut k1);
        for i in 0..n {
            stage[i] = x[i] + 0.5 * dt * k1[i];
        }
        let th = t + 0.5 * dt;
        let u2 = sys.input_at(th, &stage)?;
        sys.derivative(th, &stage, &u2, &mut k2);
        for i in 0..n {
            stage[i] = x[i] + 0.5 * dt * k2[i];
        }
        let u3 = sys.input_at(th, &stage)?;
        sys.derivative(th, &stage, &u3, &mut k3);
        for i in 0..n {
            stage[i] = x[i] + dt * k3[i];
        }
        let u4 = sys.input_at(t + dt, &stage)?;
        sys.derivative(t + dt, &stage, &u4, &mut k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if escaped(&x) {
            return Err(escape(traj));
        }
    }
    Ok(traj)
}

/// A set `{x : η(x) ≥ level}` for distance queries.
#[derive(Clone)]
pub enum SublevelSet {
    /// `{x : normal·x ≥ level}`; distances are exact.
    HalfSpace { normal: Vec<f64>, level: f64 },
    /// `{x : margin(x) ≥ 0}`; the distance is estimated as
    /// `max(0, -margin(x)) / lipschitz`, a lower bound on the true distance.
    General {
        margin: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        lipschitz: Option<f64>,
    },
}

/// `|x|_S = inf_{s ∈ S} |x - s|` (exact for half-spaces).
pub fn point_to_set_distance(x: &[f64], set: &SublevelSet) -> Result<f64, SimError> {
    match set {
        SublevelSet::HalfSpace { normal, level } => {
            if normal.len() != x.len() {
                return Err(SimError::Invalid("half-space normal has wrong dimension".into()));
            }
            let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(SimError::Invalid("half-space normal is zero".into()));
            }
            let value: f64 = normal.iter().zip(x).map(|(a, b)| a * b).sum();
            Ok(((level - value) / norm).max(0.0))
        }
        SublevelSet::General { margin, lipschitz } => {
            let l = lipschitz.ok_or(SimError::MissingLipschitzBound)?;
            if !(l > 0.0) {
                return Err(SimError::Invalid("Lipschitz bound must be positive".into()));
            }
            Ok((-margin(x)).max(0.0) / l)
        }
    }
}

/// Checks `margin_fn(x(t)) ≥ -tol` at every sample.
pub fn check_forward_invariance<M>(traj: &Trajectory, margin_fn: M, tol: f64) -> ValidationReport
where
    M: Fn(&[f64]) -> f64,
{
    let mut report = ValidationReport::new("forward-invariance");
    let mut worst = (f64::INFINITY, 0.0);
    for (t, x) in traj.t.iter().zip(&traj.states) {
        let m = margin_fn(x);
        report.checked += 1;
        if m < worst.0 {
            worst = (m, *t);
        }
        if m < -tol && report.violations.is_empty() {
            report.violate(*t, format!("first exit: margin {m:.3e} < -{tol:.1e}"));
        }
    }
    if report.checked > 0 {
        report.note(format!("worst margin {:.6e} at t = {:.6}", worst.0, worst.1));
    }
    if !report.passed() {
        report.violate(worst.1, format!("worst margin {:.6e}", worst.0));
    }
    report
}

/// Checks `|x(t)|_S ≤ β(|x(0)|_S, t) + gain_term + tol` at every sample.
///
/// The envelope itself is sanity-checked along the grid: it must be
/// non-increasing in `t` and not below `|x(0)|_S` at `t = 0`.
pub fn check_iss_envelope<D, B>(
    traj: &Trajectory,
    dist_fn: D,
    beta_envelope: B,
    gain_term: f64,
    tol: f64,
) -> ValidationReport
where
    D: Fn(&[f64]) -> f64,
    B: Fn(f64, f64) -> f64,
{
    let mut report = ValidationReport::new("iss-envelope");
    let Some(x0) = traj.states.first() else {
        report.note("empty trajectory");
        return report;
    };
    let d0 = dist_fn(x0);
    if beta_envelope(d0, 0.0) < d0 - tol {
        report.violate(0.0, "envelope below the initial distance at t = 0");
    }
    let mut prev_env = f64::INFINITY;
    let mut worst = (f64::NEG_INFINITY, 0.0);
    for (t, x) in traj.t.iter().zip(&traj.states) {
        let env = beta_envelope(d0, *t);
        if env > prev_env + tol {
            report.violate(*t, format!("envelope increases in t: {env} > {prev_env}"));
        }
        prev_env = env;
        let excess = dist_fn(x) - env - gain_term;
        report.checked += 1;
        if excess > worst.0 {
            worst = (excess, *t);
        }
        if excess > tol {
            report.violate(*t, format!("distance exceeds envelope by {excess:.3e}"));
        }
    }
    report.note(format!("worst excess {:.6e} at t = {:.6}", worst.0, worst.1));
    report
}
