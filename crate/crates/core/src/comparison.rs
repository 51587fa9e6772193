//! Scalar comparison lemma: if `η̇ ≥ -α(η) + w(t)` then
//! `η(t) ≥ β(η₀ - η*, t) + η*` with `η* = α⁻¹(inf w)`.
//!
//! The bound is realized as the flow of the comparison ODE
//! `ẏ = -α(y) + α(η*)`, `y(0) = η₀`, integrated with RK4. The extended class
//! KL function `β` is the flow of `ẏ = -α(y)`.

use thiserror::Error;

use crate::gains::{invert, GainError, GainExpr, GainFn, DEFAULT_INVERT_TOL};
use crate::report::ValidationReport;
use crate::simulator::TimeGrid;

/// Slack on top of the integration allowance when comparing against the bound.
pub const BOUND_TOL: f64 = 1e-6;
const MAX_HALVINGS: u32 = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComparisonError {
    #[error("inverting alpha at {w}: {source}")]
    Inversion { w: f64, source: GainError },
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error("length mismatch: {what}")]
    LengthMismatch { what: String },
    #[error("invalid comparison problem: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct ComparisonProblem {
    pub alpha: GainFn,
    pub eta0: f64,
    /// Infimum of the forcing signal over the horizon.
    pub w_inf: f64,
    pub grid: TimeGrid,
}

impl ComparisonProblem {
    /// `η* = α⁻¹(w_inf)`.
    pub fn equilibrium(&self) -> Result<f64, ComparisonError> {
        let tol = DEFAULT_INVERT_TOL * 1e-2 * self.w_inf.abs().max(1.0);
        invert(&GainExpr::leaf(self.alpha.clone()), self.w_inf, tol)
            .map_err(|source| ComparisonError::Inversion {
                w: self.w_inf,
                source,
            })
    }
}

/// One RK4 step of `ẏ = -α(y) + a_star` of length `h`, refined by step
/// halving while the state is within a few steps' drift of the equilibrium,
/// and clamped so it never crosses `y_star`.
fn comparison_step(alpha: &GainFn, y: f64, y_star: f64, a_star: f64, h: f64) -> Result<f64, GainError> {
    if y == y_star {
        return Ok(y_star);
    }
    let rhs = |v: f64| -> Result<f64, GainError> { Ok(-alpha.eval(v)? + a_star) };
    let drift = (alpha.eval(y)? - a_star).abs();
    let mut halvings = 0;
    let mut sub = h;
    while halvings < MAX_HALVINGS && (y - y_star).abs() < 10.0 * sub * drift {
        sub *= 0.5;
        halvings += 1;
    }
    let pieces = 1u32 << halvings;
    let side = if y > y_star { 1.0 } else { -1.0 };
    let mut v = y;
    for _ in 0..pieces {
        let k1 = rhs(v)?;
        let k2 = rhs(v + 0.5 * sub * k1)?;
        let k3 = rhs(v + 0.5 * sub * k2)?;
        let k4 = rhs(v + sub * k3)?;
        v += sub / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (v - y_star) * side <= 0.0 {
            return Ok(y_star);
        }
    }
    Ok(v)
}

/// Solves `ẏ = -α(y) + α(η*)`, `y(0) = η₀` on the problem's grid.
pub fn solve_comparison(prob: &ComparisonProblem) -> Result<Vec<f64>, ComparisonError> {
    let y_star = prob.equilibrium()?;
    let a_star = prob.alpha.eval(y_star)?;
    let mut out = Vec::with_capacity(prob.grid.len);
    let mut y = prob.eta0;
    out.push(y);
    for _ in 1..prob.grid.len {
        y = comparison_step(&prob.alpha, y, y_star, a_star, prob.grid.dt)?;
        out.push(y);
    }
    Ok(out)
}

/// Extended class KL function `β(s, t)`: the value at time `t` of the
/// solution of `ẏ = -α(y)`, `y(0) = s`, integrated with step `dt` (the last
/// step is shortened to land on `t`). `β(s, 0) = s` exactly.
pub fn beta(alpha: &GainFn, s: f64, t: f64, dt: f64) -> Result<f64, ComparisonError> {
    if !(t >= 0.0 && dt > 0.0) {
        return Err(ComparisonError::Invalid(format!("need t >= 0 and dt > 0, got t = {t}, dt = {dt}")));
    }
    let ratio = t / dt;
    let full = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round()
    } else {
        ratio.floor()
    };
    let rest = t - full * dt;
    let mut y = s;
    for _ in 0..full as u64 {
        y = comparison_step(alpha, y, 0.0, 0.0, dt)?;
    }
    if rest > 1e-9 * dt {
        y = comparison_step(alpha, y, 0.0, 0.0, rest)?;
    }
    Ok(y)
}

/// Checks `η(t) ≥ β(η₀ - η*, t) + η* - (1e-6 + 10·dt)` on every grid time,
/// with `η* = α⁻¹(min w)` and the bound produced by [`solve_comparison`].
pub fn check_lower_bound(
    eta_traj: &[f64],
    grid: &TimeGrid,
    alpha: &GainFn,
    w_traj: &[f64],
) -> Result<ValidationReport, ComparisonError> {
    if eta_traj.len() != grid.len || w_traj.len() != grid.len {
        return Err(ComparisonError::LengthMismatch {
            what: format!(
                "grid has {} samples, eta has {}, w has {}",
                grid.len,
                eta_traj.len(),
                w_traj.len()
            ),
        });
    }
    let w_inf = w_traj.iter().copied().fold(f64::INFINITY, f64::min);
    let prob = ComparisonProblem {
        alpha: alpha.clone(),
        eta0: eta_traj[0],
        w_inf,
        grid: *grid,
    };
    let bound = solve_comparison(&prob)?;
    let allowance = BOUND_TOL + 10.0 * grid.dt;
    let mut report = ValidationReport::new("comparison-lower-bound");
    let mut min_slack = f64::INFINITY;
    for (j, (&eta, &b)) in eta_traj.iter().zip(&bound).enumerate() {
        report.checked += 1;
        let slack = eta - b;
        min_slack = min_slack.min(slack);
        if slack < -allowance {
            report.violate(grid.time(j), format!("eta = {eta:.6e} below bound {b:.6e}"));
        }
    }
    report.note(format!("eta* = {:.6e}, min slack {min_slack:.3e}", prob.equilibrium()?));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{integrate, SystemSpec};
    use proptest::prelude::*;

    fn lin(c: f64) -> GainFn {
        GainFn::linear(c).unwrap()
    }

    fn problem(alpha: GainFn, eta0: f64, w_inf: f64, t_end: f64) -> ComparisonProblem {
        ComparisonProblem {
            alpha,
            eta0,
            w_inf,
            grid: TimeGrid::new(t_end, 1e-3).unwrap(),
        }
    }

    #[test]
    fn linear_decay_positive_branch() {
        let y = solve_comparison(&problem(lin(1.0), 1.0, 0.0, 1.0)).unwrap();
        assert!((y[1000] - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn linear_decay_negative_branch() {
        let y = solve_comparison(&problem(lin(2.0), -1.0, 0.0, 0.5)).unwrap();
        assert!((y[500] + 0.367879).abs() < 1e-6);
    }

    #[test]
    fn starting_at_equilibrium_stays() {
        // η* = α⁻¹(3) = 1.5
        let y = solve_comparison(&problem(lin(2.0), 1.5, 3.0, 1.0)).unwrap();
        assert!(y.iter().all(|&v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn stiff_alpha_never_crosses_equilibrium() {
        let y = solve_comparison(&problem(lin(5000.0), 1.0, 0.0, 0.1)).unwrap();
        assert!(y.iter().all(|&v| v >= 0.0));
        assert!(y.windows(2).all(|w| w[1] <= w[0]));
        assert!(y.last().unwrap().abs() < 1e-9);
    }

    #[test]
    fn inversion_failure_propagates() {
        let flat = GainFn::custom("flat", crate::gains::Domain::Extended, |_| 0.0);
        assert!(matches!(
            solve_comparison(&problem(flat, 1.0, 1.0, 1.0)),
            Err(ComparisonError::Inversion { .. })
        ));
    }

    #[test]
    fn beta_examples() {
        let a = lin(1.0);
        for s in [-3.0, -0.1, 0.0, 0.7, 5.0] {
            assert_eq!(beta(&a, s, 0.0, 1e-3).unwrap(), s);
        }
        assert!((beta(&a, 2.0, 1.0, 1e-3).unwrap() - 0.735759).abs() < 1e-6);
        for t in [0.0, 0.3, 4.0] {
            assert_eq!(beta(&a, 0.0, t, 1e-3).unwrap(), 0.0);
        }
        // non-grid horizon uses a shortened last step
        assert!((beta(&a, 1.0, 0.0105, 1e-3).unwrap() - (-0.0105f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_equality_case() {
        let grid = TimeGrid::new(5.0, 1e-3).unwrap();
        let eta: Vec<f64> = grid.times().iter().map(|t| (-t).exp()).collect();
        let w = vec![0.0; grid.len];
        let r = check_lower_bound(&eta, &grid, &lin(1.0), &w).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn lower_bound_sinusoidal_forcing() {
        let sys = SystemSpec::new(1, 1, |_, x, u, dx| dx[0] = -x[0] + u[0])
            .with_signal(|t| vec![1.0 + 0.5 * t.sin()]);
        let tr = integrate(&sys, &[0.0], 10.0, 1e-3).unwrap();
        let grid = TimeGrid::new(10.0, 1e-3).unwrap();
        let eta = tr.component(0);
        let w = tr.input_component(0);
        let r = check_lower_bound(&eta, &grid, &lin(1.0), &w).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.notes[0].starts_with("eta* = 5.0"));
    }

    #[test]
    fn lower_bound_negative_control() {
        let grid = TimeGrid::new(2.0, 1e-3).unwrap();
        let eta: Vec<f64> = grid.times().iter().map(|t| (-t).exp() - 0.1 * t).collect();
        let w = vec![0.0; grid.len];
        assert!(!check_lower_bound(&eta, &grid, &lin(1.0), &w).unwrap().passed());
        assert!(matches!(
            check_lower_bound(&eta[1..], &grid, &lin(1.0), &w),
            Err(ComparisonError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn relative_degree_one_issf_region() {
        // η̇ = -α(η) - γ|u| with |u| ≤ 1; the level α⁻¹(-γ(1)) is never crossed
        let (alpha, gamma) = (2.0, 0.5);
        let level = -gamma / alpha;
        for eta0 in [level, level + 0.01, 0.0, 3.0] {
            let sys = SystemSpec::new(1, 1, move |_, x, u, dx| dx[0] = -alpha * x[0] - gamma * u[0].abs())
                .with_signal(|t| vec![(3.0 * t).sin()]);
            let tr = integrate(&sys, &[eta0], 10.0, 1e-3).unwrap();
            assert!(tr.states.iter().all(|x| x[0] >= level - 1e-6));
        }
    }

    fn arb_alpha() -> impl Strategy<Value = GainFn> {
        prop::collection::vec(0.2f64..5.0, 2..6).prop_map(|slopes| {
            let mid = slopes.len() / 2;
            let mut knots = vec![(0.0, 0.0)];
            let (mut s, mut v) = (0.0, 0.0);
            for c in &slopes[mid..] {
                s += 1.0;
                v += c;
                knots.push((s, v));
            }
            let (mut s, mut v) = (0.0, 0.0);
            for c in &slopes[..mid] {
                s -= 1.0;
                v -= c;
                knots.insert(0, (s, v));
            }
            GainFn::piecewise_linear(knots).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn beta_increasing_in_s(alpha in arb_alpha(), s1 in -4f64..4.0, ds in 0.01f64..2.0, t in 0f64..3.0) {
            let b1 = beta(&alpha, s1, t, 1e-2).unwrap();
            let b2 = beta(&alpha, s1 + ds, t, 1e-2).unwrap();
            prop_assert!(b2 > b1);
        }

        #[test]
        fn beta_decays_toward_zero(alpha in arb_alpha(), s in -4f64..4.0) {
            prop_assume!(s.abs() > 1e-3);
            let mut prev = s;
            for i in 1..=20 {
                let b = beta(&alpha, s, 0.25 * i as f64, 1e-2).unwrap();
                prop_assert!(b.signum() == s.signum() || b == 0.0);
                prop_assert!(b.abs() < prev.abs());
                prev = b;
            }
        }

        #[test]
        fn beta_semigroup(alpha in arb_alpha(), s in -4f64..4.0, n1 in 1usize..200, n2 in 1usize..200) {
            let dt = 1e-2;
            let (t1, t2) = (n1 as f64 * dt, n2 as f64 * dt);
            let composed = beta(&alpha, beta(&alpha, s, t1, dt).unwrap(), t2, dt).unwrap();
            let direct = beta(&alpha, s, t1 + t2, dt).unwrap();
            prop_assert!((composed - direct).abs() <= 1e-9);
        }
    }
}
