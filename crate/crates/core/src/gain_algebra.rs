//! Derived gains of an interconnection of two barrier chains: the
//! interconnection gains `φ̂_{i,k}`, the input gains `γ̂_{i,k}`, the margin
//! levels `d_{i,k-1}`, and the sampled small-gain test `|φ̂₁,₁ ∘ φ̂₂,₁(s)| < |s|`.

use std::fmt;

use thiserror::Error;

use crate::gains::{
    check_extended_kinf, default_grid, invert, Domain, GainError, GainExpr, GainFn,
};
use crate::report::ValidationReport;

/// A small-gain pass needs `max_ratio < 1 - SMALL_GAIN_MARGIN`.
pub const SMALL_GAIN_MARGIN: f64 = 1e-9;
const WEAK_INEQ_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("chain index k = {k} outside [1, {r}]")]
    Index { k: usize, r: usize },
    #[error("subsystem index must be 1 or 2, got {0}")]
    Subsystem(usize),
    #[error("invalid subsystem gains: {0}")]
    Invalid(String),
    #[error(transparent)]
    Gain(#[from] GainError),
}

/// Gains of one subsystem: the chain's `α_{i,1..r}`, the interconnection gain
/// `φ_i`, the input gain `γ_i` and the slack `σ`.
#[derive(Debug, Clone)]
pub struct SubsystemGains {
    pub alphas: Vec<GainFn>,
    pub phi: GainFn,
    pub gamma: GainFn,
    pub sigma: GainFn,
}

impl SubsystemGains {
    /// Validates the gains on the default grid. `φ` may be the zero gain
    /// (cascade interconnection); everything else must be strictly increasing.
    pub fn new(
        alphas: Vec<GainFn>,
        phi: GainFn,
        gamma: GainFn,
        sigma: GainFn,
    ) -> Result<Self, AlgebraError> {
        if alphas.is_empty() {
            return Err(AlgebraError::Invalid("relative degree must be at least 1".into()));
        }
        let grid = default_grid();
        let require = |name: &str, g: &GainFn, domain: Domain| -> Result<(), AlgebraError> {
            let report = check_extended_kinf(&g.clone().with_domain(domain).into(), &grid);
            if report.passed() {
                Ok(())
            } else {
                Err(AlgebraError::Invalid(format!("{name} is not class K-infinity: {report}")))
            }
        };
        for (k, a) in alphas.iter().enumerate() {
            require(&format!("alpha_{}", k + 1), a, Domain::Extended)?;
        }
        if phi.linear_slope() != Some(0.0) {
            require("phi", &phi, Domain::Extended)?;
        }
        require("gamma", &gamma, Domain::NonNegative)?;
        require("sigma", &sigma, Domain::Extended)?;
        Ok(Self {
            alphas,
            phi,
            gamma,
            sigma,
        })
    }

    /// All-linear gains with the given α slopes and a linear φ (slope 0 for a
    /// cascade), γ and σ.
    pub fn linear(
        alpha_slopes: &[f64],
        phi_slope: f64,
        gamma_slope: f64,
        sigma_slope: f64,
    ) -> Result<Self, AlgebraError> {
        let alphas = alpha_slopes
            .iter()
            .map(|&c| GainFn::linear(c))
            .collect::<Result<Vec<_>, _>>()?;
        let phi = if phi_slope == 0.0 {
            GainFn::zero()
        } else {
            GainFn::linear(phi_slope)?
        };
        Self::new(alphas, phi, GainFn::linear(gamma_slope)?, GainFn::linear(sigma_slope)?)
    }

    pub fn relative_degree(&self) -> usize {
        self.alphas.len()
    }

    fn check_k(&self, k: usize) -> Result<(), AlgebraError> {
        let r = self.relative_degree();
        if k == 0 || k > r {
            return Err(AlgebraError::Index { k, r });
        }
        Ok(())
    }

    fn id_plus_sigma(&self) -> GainExpr {
        GainExpr::leaf(self.sigma.clone()).id_plus()
    }

    /// Wraps `inner` as `(Id+σ)∘α_k⁻¹∘…∘(Id+σ)∘α_r⁻¹∘inner`.
    fn inverse_chain(&self, k: usize, inner: GainExpr) -> GainExpr {
        self.alphas[k - 1..].iter().rev().fold(inner, |acc, alpha| {
            self.id_plus_sigma()
                .after(GainExpr::leaf(alpha.clone()).inverse().after(acc))
        })
    }

    /// Slope of `φ̂_{i,k}` when every gain involved is linear.
    pub fn closed_form_phi_hat_slope(&self, k: usize) -> Option<f64> {
        let sigma = self.sigma.linear_slope()?;
        let phi = self.phi.linear_slope()?;
        let mut slope = (1.0 + sigma) * phi;
        for alpha in self.alphas[k - 1..].iter().rev() {
            slope = (1.0 + sigma) * slope / alpha.linear_slope()?;
        }
        Some(slope)
    }
}

/// `φ̂_{i,k} = (Id+σ)∘α_k⁻¹∘…∘(Id+σ)∘α_r⁻¹∘(Id+σ)∘φ_i`.
pub fn build_phi_hat(gains: &SubsystemGains, k: usize) -> Result<GainExpr, AlgebraError> {
    gains.check_k(k)?;
    let base = gains.id_plus_sigma().after(GainExpr::leaf(gains.phi.clone()));
    Ok(gains.inverse_chain(k, base))
}

/// `γ̂_{i,k}(s) = -(Id+σ)∘α_k⁻¹∘…∘(Id+σ)∘α_r⁻¹∘(Id+σ⁻¹)(-γ_i(s))`.
pub fn build_gamma_hat(gains: &SubsystemGains, k: usize) -> Result<GainExpr, AlgebraError> {
    gains.check_k(k)?;
    let id_plus_sigma_inv = GainExpr::leaf(gains.sigma.clone()).inverse().id_plus();
    let chain = gains.inverse_chain(k, id_plus_sigma_inv);
    // -F(-γ(s)) is the reflection of F evaluated at γ(s)
    Ok(chain
        .negate_reflect()
        .after(GainExpr::leaf(gains.gamma.clone().with_domain(Domain::NonNegative))))
}

/// Margin level `d_{i,k-1} = min{φ̂_{i,k}(-γ̂_{3-i,1}(‖u‖)), -γ̂_{i,k}(‖u‖)}`.
/// `i` is 1 or 2; the result is never positive.
pub fn compute_margin(
    gains_1: &SubsystemGains,
    gains_2: &SubsystemGains,
    i: usize,
    k: usize,
    u_norm: f64,
) -> Result<f64, AlgebraError> {
    let (own, other) = match i {
        1 => (gains_1, gains_2),
        2 => (gains_2, gains_1),
        _ => return Err(AlgebraError::Subsystem(i)),
    };
    if !(u_norm >= 0.0) {
        return Err(AlgebraError::Invalid(format!("input norm must be non-negative, got {u_norm}")));
    }
    let gamma_other = build_gamma_hat(other, 1)?.eval(u_norm)?;
    let through_other = build_phi_hat(own, k)?.eval(-gamma_other)?;
    let own_input = -build_gamma_hat(own, k)?.eval(u_norm)?;
    Ok(through_other.min(own_input))
}

/// Default test points: `±logspace(1e-3, 1e3)`, 61 points per sign.
pub fn default_small_gain_grid() -> Vec<f64> {
    let pos: Vec<f64> = (0..61).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 60.0)).collect();
    pos.iter().rev().map(|s| -s).chain(pos.iter().copied()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallGainReport {
    pub grid: Vec<f64>,
    /// `|φ̂₁,₁∘φ̂₂,₁(s)| / |s|` per grid point; `NaN` where evaluation failed.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub pass: bool,
    /// Ratio from the closed-form slope product, when all gains are linear.
    pub closed_form_ratio: Option<f64>,
    pub caveats: Vec<String>,
}

/// Sampled small-gain test on `grid` (nonzero points).
pub fn check_small_gain(
    gains_1: &SubsystemGains,
    gains_2: &SubsystemGains,
    grid: &[f64],
) -> SmallGainReport {
    let mut caveats = Vec::new();
    let loop_gain = match (build_phi_hat(gains_1, 1), build_phi_hat(gains_2, 1)) {
        (Ok(p1), Ok(p2)) => Some(p1.after(p2)),
        (Err(e), _) | (_, Err(e)) => {
            caveats.push(format!("could not build loop gain: {e}"));
            None
        }
    };

    let mut ratios = Vec::with_capacity(grid.len());
    let mut grid_ok = !grid.is_empty();
    let mut eval_ok = loop_gain.is_some();
    for &s in grid {
        if s == 0.0 || !s.is_finite() {
            grid_ok = false;
            ratios.push(f64::NAN);
            continue;
        }
        match loop_gain.as_ref().map(|g| g.eval(s)) {
            Some(Ok(v)) => ratios.push(v.abs() / s.abs()),
            Some(Err(e)) => {
                eval_ok = false;
                caveats.push(format!("evaluation failed at s = {s}: {e}"));
                ratios.push(f64::NAN);
            }
            None => ratios.push(f64::NAN),
        }
    }
    if !grid_ok {
        caveats.push("grid must be nonempty and exclude 0".into());
    }
    let max_ratio = ratios
        .iter()
        .copied()
        .filter(|r| !r.is_nan())
        .fold(0.0_f64, f64::max);

    let closed_form_ratio = match (gains_1.closed_form_phi_hat_slope(1), gains_2.closed_form_phi_hat_slope(1)) {
        (Some(a), Some(b)) => Some((a * b).abs()),
        _ => None,
    };
    if let Some(cf) = closed_form_ratio {
        if eval_ok && (cf - max_ratio).abs() > 1e-6 * cf.max(1e-12) {
            caveats.push(format!(
                "closed-form ratio {cf:.6e} disagrees with sampled maximum {max_ratio:.6e}"
            ));
        }
    } else {
        let (lo, hi) = grid
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), s| (lo.min(s.abs()), hi.max(s.abs())));
        caveats.push(format!(
            "nonlinear gains: verdict certified only on the sampled grid, |s| in [{lo:.1e}, {hi:.1e}]"
        ));
    }

    let pass = grid_ok && eval_ok && max_ratio < 1.0 - SMALL_GAIN_MARGIN;
    SmallGainReport {
        grid: grid.to_vec(),
        ratios,
        max_ratio,
        pass,
        closed_form_ratio,
        caveats,
    }
}

impl fmt::Display for SmallGainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>16} {:>16}", "s", "|loop(s)|/|s|")?;
        for (s, r) in self.grid.iter().zip(&self.ratios) {
            writeln!(f, "{s:>16.6e} {r:>16.6e}")?;
        }
        writeln!(f, "max_ratio = {:.6e}", self.max_ratio)?;
        if let Some(cf) = self.closed_form_ratio {
            writeln!(f, "closed_form_ratio = {cf:.6e}")?;
        }
        for c in &self.caveats {
            writeln!(f, "caveat: {c}")?;
        }
        write!(f, "small-gain: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// Checks `γ(a+b) ≥ min{γ∘(Id+σ)(a), γ∘(Id+σ⁻¹)(b)}` on every sample, and
/// `γ(a+b) ≥ γ∘(Id+σ)(a) + γ∘(Id+σ⁻¹)(b)` on samples with `a, b ≤ 0`.
pub fn check_weak_inequalities(
    gamma: &GainFn,
    sigma: &GainFn,
    samples: &[(f64, f64)],
) -> ValidationReport {
    let mut report = ValidationReport::new("weak-inequalities");
    let sigma_expr = GainExpr::leaf(sigma.clone());
    let mut nonpositive = 0;
    for (idx, &(a, b)) in samples.iter().enumerate() {
        let at = idx as f64;
        let sides = (|| -> Result<(f64, f64, f64), GainError> {
            let sigma_inv_b = invert(&sigma_expr, b, 1e-13 * b.abs().max(1.0))?;
            Ok((
                gamma.eval(a + b)?,
                gamma.eval(a + sigma.eval(a)?)?,
                gamma.eval(b + sigma_inv_b)?,
            ))
        })();
        let (lhs, left, right) = match sides {
            Ok(v) => v,
            Err(e) => {
                report.violate(at, format!("evaluation failed at (a, b) = ({a}, {b}): {e}"));
                continue;
            }
        };
        report.checked += 1;
        if lhs < left.min(right) - WEAK_INEQ_TOL {
            report.violate(at, format!("min form fails at (a, b) = ({a}, {b}): {lhs} < min({left}, {right})"));
        }
        if a <= 0.0 && b <= 0.0 {
            nonpositive += 1;
            if lhs < left + right - WEAK_INEQ_TOL {
                report.violate(at, format!("sum form fails at (a, b) = ({a}, {b}): {lhs} < {left} + {right}"));
            }
        }
    }
    report.note(format!("sum form checked on {nonpositive} samples with a, b <= 0"));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pendulum() -> SubsystemGains {
        SubsystemGains::linear(&[20.0, 10.0], 0.3, 1.0, 0.1).unwrap()
    }

    #[test]
    fn phi_hat_relative_degree_one() {
        let g = SubsystemGains::linear(&[2.0], 0.3, 1.0, 0.1).unwrap();
        let v = build_phi_hat(&g, 1).unwrap().eval(1.0).unwrap();
        assert!((v - 0.1815).abs() < 1e-9, "{v}");
    }

    #[test]
    fn phi_hat_identity_chain() {
        let g = SubsystemGains::linear(&[1.0, 1.0], 1.0, 1.0, 1e-12).unwrap();
        let v = build_phi_hat(&g, 1).unwrap().eval(1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn phi_hat_pendulum_gains() {
        let v = build_phi_hat(&pendulum(), 1).unwrap().eval(1.0).unwrap();
        assert!((v - 0.0019965).abs() < 1e-8, "{v}");
    }

    #[test]
    fn index_out_of_range() {
        assert!(matches!(build_phi_hat(&pendulum(), 0), Err(AlgebraError::Index { .. })));
        assert!(matches!(build_gamma_hat(&pendulum(), 3), Err(AlgebraError::Index { .. })));
    }

    #[test]
    fn gamma_hat_vanishes_at_zero() {
        for k in 1..=2 {
            assert_eq!(build_gamma_hat(&pendulum(), k).unwrap().eval(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn gamma_hat_unit_gains() {
        // (Id+σ⁻¹)(-2) = -4, α⁻¹ = id, (Id+σ)(-4) = -8, negated: 8
        let g = SubsystemGains::linear(&[1.0], 0.3, 1.0, 1.0).unwrap();
        let v = build_gamma_hat(&g, 1).unwrap().eval(2.0).unwrap();
        assert!((v - 8.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn gamma_hat_increasing() {
        let e = build_gamma_hat(&pendulum(), 1).unwrap();
        assert!(e.eval(1.0).unwrap() < e.eval(2.0).unwrap());
    }

    #[test]
    fn gamma_hat_rejects_negative_input_norm() {
        let e = build_gamma_hat(&pendulum(), 1).unwrap();
        assert!(e.eval(-1.0).is_err());
    }

    #[test]
    fn margin_examples() {
        let g = pendulum();
        assert_eq!(compute_margin(&g, &g, 1, 1, 0.0).unwrap(), 0.0);

        // γ̂(1) = 4, φ̂(s) = 1.2 s, d = min(-4.8, -4)
        let unit = SubsystemGains::linear(&[1.0], 0.3, 1.0, 1.0).unwrap();
        let d = compute_margin(&unit, &unit, 1, 1, 1.0).unwrap();
        assert!((d + 4.8).abs() < 1e-9, "{d}");

        let d1 = compute_margin(&g, &g, 2, 1, 1.0).unwrap();
        let d2 = compute_margin(&g, &g, 2, 1, 2.0).unwrap();
        assert!(d2 <= d1 && d1 < 0.0);
        assert!(matches!(compute_margin(&g, &g, 3, 1, 1.0), Err(AlgebraError::Subsystem(3))));
    }

    #[test]
    fn small_gain_verdicts() {
        let grid = default_small_gain_grid();
        assert_eq!(grid.len(), 122);
        let p = pendulum();
        let r = check_small_gain(&p, &p, &grid);
        let expected = 0.09 * 1.1f64.powi(6) / 40000.0;
        assert!(r.pass);
        assert!((r.max_ratio - expected).abs() < 1e-6 * expected, "{}", r.max_ratio);

        let weak = SubsystemGains::linear(&[0.5, 0.5], 0.3, 1.0, 0.1).unwrap();
        let r = check_small_gain(&weak, &weak, &grid);
        assert!(!r.pass);
        assert!((r.max_ratio - 0.09 * 1.1f64.powi(6) / 0.0625).abs() < 1e-5);

        let cascade = SubsystemGains::linear(&[20.0, 10.0], 0.0, 1.0, 0.1).unwrap();
        let r = check_small_gain(&cascade, &p, &grid);
        assert!(r.pass);
        assert_eq!(r.max_ratio, 0.0);
    }

    #[test]
    fn small_gain_rejects_zero_in_grid() {
        let p = pendulum();
        assert!(!check_small_gain(&p, &p, &[0.0, 1.0]).pass);
        assert!(!check_small_gain(&p, &p, &[]).pass);
    }

    #[test]
    fn weak_inequality_examples() {
        let one = GainFn::linear(1.0).unwrap();
        let r = check_weak_inequalities(&one, &one, &[(1.0, 1.0), (-1.0, -1.0), (0.0, 0.0)]);
        assert!(r.passed(), "{r}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn weak_inequality_detects_non_monotone_gamma() {
        let bad = GainFn::custom("bad", Domain::Extended, |s| -s);
        let one = GainFn::linear(1.0).unwrap();
        let r = check_weak_inequalities(&bad, &one, &[(-1.0, -1.0)]);
        assert!(!r.passed());
    }

    #[test]
    fn rejects_invalid_gains() {
        assert!(SubsystemGains::linear(&[], 0.3, 1.0, 0.1).is_err());
        let flat = GainFn::custom("flat", Domain::Extended, |_| 0.0);
        let one = GainFn::linear(1.0).unwrap();
        assert!(SubsystemGains::new(vec![one.clone()], one.clone(), one.clone(), flat).is_err());
    }

    proptest! {
        #[test]
        fn linear_phi_hat_matches_product(
            slopes in prop::collection::vec(0.2f64..25.0, 1..4),
            phi in 0.01f64..2.0,
            sigma in 0.01f64..1.0,
            s in -100f64..100.0,
        ) {
            let g = SubsystemGains::linear(&slopes, phi, 1.0, sigma).unwrap();
            // independent closed form ∏ (1+σ₀)/c_k · (1+σ₀)·φ₀·s
            let mut expect = (1.0 + sigma) * phi * s;
            for c in &slopes {
                expect *= (1.0 + sigma) / c;
            }
            let got = build_phi_hat(&g, 1).unwrap().eval(s).unwrap();
            prop_assert!((got - expect).abs() <= 1e-9 * expect.abs().max(1.0));
        }

        #[test]
        fn phi_hat_recursion(
            slopes in prop::collection::vec(0.2f64..25.0, 2..4),
            sigma in 0.01f64..1.0,
            s in -50f64..50.0,
        ) {
            let g = SubsystemGains::linear(&slopes, 0.3, 1.0, sigma).unwrap();
            for k in 1..slopes.len() {
                let next = build_phi_hat(&g, k + 1).unwrap().eval(s).unwrap();
                let via = (1.0 + sigma) * next / slopes[k - 1];
                let direct = build_phi_hat(&g, k).unwrap().eval(s).unwrap();
                prop_assert!((direct - via).abs() <= 1e-8);
            }
        }

        #[test]
        fn gamma_hat_recursion(
            slopes in prop::collection::vec(0.2f64..25.0, 2..4),
            sigma in 0.01f64..1.0,
            s in 0f64..50.0,
        ) {
            let g = SubsystemGains::linear(&slopes, 0.3, 1.0, sigma).unwrap();
            for k in 1..slopes.len() {
                let next = build_gamma_hat(&g, k + 1).unwrap().eval(s).unwrap();
                let inner = -next / slopes[k - 1];
                let via = -(inner + sigma * inner);
                let direct = build_gamma_hat(&g, k).unwrap().eval(s).unwrap();
                prop_assert!((direct - via).abs() <= 1e-8);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn margins_are_nonpositive(
            s1 in prop::collection::vec(0.5f64..20.0, 1..4),
            s2 in prop::collection::vec(0.5f64..20.0, 1..4),
            phi in 0.0f64..1.0,
            gamma in 0.1f64..5.0,
            sigma in 0.01f64..1.0,
            u in 0f64..10.0,
        ) {
            let g1 = SubsystemGains::linear(&s1, phi, gamma, sigma).unwrap();
            let g2 = SubsystemGains::linear(&s2, phi, gamma, sigma).unwrap();
            for k in 1..=s1.len() {
                prop_assert!(compute_margin(&g1, &g2, 1, k, u).unwrap() <= 0.0);
            }
            for k in 1..=s2.len() {
                prop_assert!(compute_margin(&g1, &g2, 2, k, u).unwrap() <= 0.0);
            }
        }
    }
}
