//! Barrier chains `η₀ = h`, `η_k = η̇_{k-1} + α_k(η_{k-1})` for constraints
//! of relative degree `r`, the input-shifted coordinates `η̃`, membership in
//! the nested safe sets and the max-type safety Lyapunov function.
//!
//! The `η_k` are supplied as closed-form oracles over `(state, input)`.
//! [`finite_diff_check`] verifies numerically that the oracles actually obey
//! the recursion along a trajectory.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::gains::{GainError, GainExpr, GainFn};
use crate::report::ValidationReport;
use crate::simulator::Trajectory;

/// `η_k(x, u)`.
pub type EtaOracle = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("chain index {k} outside [{lo}, {hi}]")]
    Index { k: usize, lo: usize, hi: usize },
    #[error("invalid barrier chain: {0}")]
    Invalid(String),
    #[error("trajectory has {0} samples, need at least 3")]
    TooShort(usize),
    #[error(transparent)]
    Gain(#[from] GainError),
}

#[derive(Clone)]
pub struct BarrierChain {
    oracles: Vec<EtaOracle>,
    alphas: Vec<GainFn>,
}

impl fmt::Debug for BarrierChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BarrierChain")
            .field("r", &self.relative_degree())
            .field("alphas", &self.alphas)
            .finish()
    }
}

impl BarrierChain {
    /// `oracles[k]` evaluates `η_k`; there must be exactly one more oracle
    /// than there are gains.
    pub fn new(oracles: Vec<EtaOracle>, alphas: Vec<GainFn>) -> Result<Self, ChainError> {
        if alphas.is_empty() {
            return Err(ChainError::Invalid("relative degree must be at least 1".into()));
        }
        if oracles.len() != alphas.len() + 1 {
            return Err(ChainError::Invalid(format!(
                "{} gains need {} oracles, got {}",
                alphas.len(),
                alphas.len() + 1,
                oracles.len()
            )));
        }
        Ok(Self { oracles, alphas })
    }

    pub fn relative_degree(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[GainFn] {
        &self.alphas
    }

    pub fn eta(&self, k: usize, x: &[f64], u: &[f64]) -> Result<f64, ChainError> {
        let oracle = self.oracles.get(k).ok_or(ChainError::Index {
            k,
            lo: 0,
            hi: self.relative_degree(),
        })?;
        Ok(oracle(x, u))
    }

    /// `η₀ … η_r` at one point.
    pub fn etas(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.oracles.iter().map(|o| o(x, u)).collect()
    }

    /// `α̂_k(s) = -α_k⁻¹∘α_{k+1}⁻¹∘…∘α_r⁻¹(-s)`.
    pub fn alpha_hat(&self, k: usize) -> Result<GainExpr, ChainError> {
        let r = self.relative_degree();
        if k == 0 || k > r {
            return Err(ChainError::Index { k, lo: 1, hi: r });
        }
        let mut alphas = self.alphas[k - 1..].iter();
        let first = GainExpr::leaf(alphas.next().expect("k <= r").clone()).inverse();
        let chain = alphas.fold(first, |acc, a| acc.after(GainExpr::leaf(a.clone()).inverse()));
        Ok(chain.negate_reflect())
    }

    /// Closed-form `α̂_k` slope `1 / (c_k ⋯ c_r)` for linear chains.
    pub fn linear_alpha_hat_slope(&self, k: usize) -> Option<f64> {
        self.alphas[k.checked_sub(1)?..]
            .iter()
            .try_fold(1.0, |acc, a| Some(acc / a.linear_slope()?))
    }

    /// `η̃_k = η_k + α̂_{k+1}(γ(‖u‖))` for `k` in `[0, r-1]`.
    pub fn tilde_eta(
        &self,
        k: usize,
        x: &[f64],
        u: &[f64],
        u_norm: f64,
        gamma: &GainFn,
    ) -> Result<f64, ChainError> {
        let r = self.relative_degree();
        if k >= r {
            return Err(ChainError::Index { k, lo: 0, hi: r - 1 });
        }
        let eta = self.eta(k, x, u)?;
        let shift = self.alpha_hat(k + 1)?.eval(gamma.eval(u_norm)?)?;
        Ok(eta + shift)
    }

    /// Levels `-α̂_{k+1}(γ(‖u‖))`, `k = 0..r-1`, so that `η̃_k ≥ 0` reads
    /// `η_k ≥ level_k`. All zero when `u_norm = 0`.
    pub fn margin_levels(&self, gamma: &GainFn, u_norm: f64) -> Result<Vec<f64>, ChainError> {
        let g = gamma.eval(u_norm)?;
        (1..=self.relative_degree())
            .map(|k| Ok(-self.alpha_hat(k)?.eval(g)?))
            .collect()
    }

    fn check_levels(&self, margin_levels: &[f64]) -> Result<(), ChainError> {
        if margin_levels.len() != self.relative_degree() {
            return Err(ChainError::Invalid(format!(
                "expected {} margin levels, got {}",
                self.relative_degree(),
                margin_levels.len()
            )));
        }
        Ok(())
    }

    pub fn membership(
        &self,
        x: &[f64],
        u: &[f64],
        margin_levels: &[f64],
    ) -> Result<SetMembership, ChainError> {
        self.check_levels(margin_levels)?;
        let distances: Vec<f64> = self.oracles[..self.relative_degree()]
            .iter()
            .map(|o| o(x, u))
            .collect();
        Ok(SetMembership {
            in_s: distances.iter().map(|&e| e >= 0.0).collect(),
            in_c: distances
                .iter()
                .zip(margin_levels)
                .map(|(&e, &d)| e >= d)
                .collect(),
            distances,
        })
    }

    /// `V(x) = max_k max{0, level_k - η_k(x)}`: zero exactly on the enlarged
    /// set `C`, positive outside it.
    pub fn safety_lyapunov(
        &self,
        x: &[f64],
        u: &[f64],
        margin_levels: &[f64],
    ) -> Result<f64, ChainError> {
        self.check_levels(margin_levels)?;
        Ok(self.oracles[..self.relative_degree()]
            .iter()
            .zip(margin_levels)
            .map(|(o, &d)| (d - o(x, u)).max(0.0))
            .fold(0.0, f64::max))
    }

    /// Replaces the last oracle, keeping the others and the gains.
    pub fn with_last_oracle(&self, oracle: EtaOracle) -> Self {
        let mut oracles = self.oracles.clone();
        *oracles.last_mut().expect("non-empty") = oracle;
        Self {
            oracles,
            alphas: self.alphas.clone(),
        }
    }
}

/// Per-level membership in `S_{k-1} = {η_{k-1} ≥ 0}` and
/// `C_{k-1} = {η_{k-1} ≥ d_{k-1}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetMembership {
    pub in_s: Vec<bool>,
    pub in_c: Vec<bool>,
    /// Raw `η_{k-1}` values, i.e. signed margins to `S_{k-1}`.
    pub distances: Vec<f64>,
}

impl SetMembership {
    pub fn in_all_s(&self) -> bool {
        self.in_s.iter().all(|&b| b)
    }

    pub fn in_all_c(&self) -> bool {
        self.in_c.iter().all(|&b| b)
    }
}

/// Samples the margin form of the barrier condition:
/// wherever `|η_{r-1}| ≥ φ(|u|)`, require `η_r ≥ -1e-9`.
///
/// `|u|` is the Euclidean norm of the sampled input.
pub fn check_margin_form(
    chain: &BarrierChain,
    phi: &GainFn,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> ValidationReport {
    let mut report = ValidationReport::new("margin-form");
    let r = chain.relative_degree();
    let mut triggered = 0;
    for (idx, (x, u)) in samples.iter().enumerate() {
        let u_abs = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let threshold = match phi.eval(u_abs) {
            Ok(v) => v,
            Err(e) => {
                report.violate(idx as f64, format!("phi evaluation failed: {e}"));
                continue;
            }
        };
        report.checked += 1;
        let eta_prev = chain.oracles[r - 1](x, u);
        if eta_prev.abs() >= threshold {
            triggered += 1;
            let eta_r = chain.oracles[r](x, u);
            if eta_r < -1e-9 {
                report.violate(
                    idx as f64,
                    format!("|eta_{}| = {:.3e} >= phi(|u|) = {threshold:.3e} but eta_{r} = {eta_r:.3e}", r - 1, eta_prev.abs()),
                );
            }
        }
    }
    if triggered == 0 {
        report.note("antecedent never triggered: vacuous pass");
    } else {
        report.note(format!("antecedent triggered on {triggered} samples"));
    }
    report
}

/// Compares the central difference of `η_{k-1}` along `traj` with
/// `η_k - α_k(η_{k-1})` at interior samples, `k = 1..r`. Inputs are taken
/// from the trajectory's recorded inputs. Residuals above
/// `max(10·dt, tol)` are violations.
pub fn finite_diff_check(
    chain: &BarrierChain,
    traj: &Trajectory,
    tol: f64,
) -> Result<ValidationReport, ChainError> {
    let n = traj.len();
    if n < 3 {
        return Err(ChainError::TooShort(n));
    }
    let dt = traj.dt;
    let limit = (10.0 * dt).max(tol);
    let etas: Vec<Vec<f64>> = traj
        .states
        .iter()
        .zip(&traj.inputs)
        .map(|(x, u)| chain.etas(x, u))
        .collect();

    let mut report = ValidationReport::new("finite-difference");
    let mut worst = vec![0.0_f64; chain.relative_degree()];
    for j in 1..n - 1 {
        for k in 1..=chain.relative_degree() {
            let deriv = (etas[j + 1][k - 1] - etas[j - 1][k - 1]) / (2.0 * dt);
            let rhs = etas[j][k] - chain.alphas[k - 1].eval(etas[j][k - 1])?;
            let residual = (deriv - rhs).abs();
            report.checked += 1;
            worst[k - 1] = worst[k - 1].max(residual);
            if residual > limit {
                report.violate(traj.t[j], format!("level {k}: residual {residual:.3e} > {limit:.1e}"));
            }
        }
    }
    for (k, w) in worst.iter().enumerate() {
        report.note(format!("level {}: max residual {w:.3e}", k + 1));
    }
    Ok(report)
}

/// Linear barrier chain `h = x₁` on the chain of integrators
/// `ẋ_j = x_{j+1}`, `ẋ_r = v(x) + u`, with `α_k(s) = c_k s`.
///
/// `η_k = p_k(D) x₁` with `p_k(D) = ∏_{j≤k} (D + c_j)`; each `η_k` for `k < r`
/// is a fixed linear combination of the states. The returned coefficient
/// rows let callers build states from target `η` values and choose the
/// feedback `v`.
#[derive(Debug, Clone)]
pub struct IntegratorChain {
    pub slopes: Vec<f64>,
    /// `coeffs[k][j]`: coefficient of `x_{j+1}` in `η_k`, for `k = 0..=r`
    /// (row `r` holds the coefficients of `D^j x₁`, with `D^r x₁ = ẋ_r`).
    pub coeffs: Vec<Vec<f64>>,
}

impl IntegratorChain {
    pub fn new(slopes: &[f64]) -> Self {
        let r = slopes.len();
        let mut coeffs = vec![vec![0.0; r + 1]; r + 1];
        coeffs[0][0] = 1.0;
        for k in 1..=r {
            let c = slopes[k - 1];
            for j in 0..=r {
                let shifted = if j > 0 { coeffs[k - 1][j - 1] } else { 0.0 };
                coeffs[k][j] = shifted + c * coeffs[k - 1][j];
            }
        }
        Self {
            slopes: slopes.to_vec(),
            coeffs,
        }
    }

    pub fn relative_degree(&self) -> usize {
        self.slopes.len()
    }

    /// `η_k(x)` for `k < r`.
    pub fn eta(&self, k: usize, x: &[f64]) -> f64 {
        self.coeffs[k][..self.relative_degree()]
            .iter()
            .zip(x)
            .map(|(c, v)| c * v)
            .sum()
    }

    /// The `v(x)` that makes `η_r = u + extra(x)`: cancels every lower-order
    /// term of `p_r(D) x₁`.
    pub fn cancelling_feedback(&self, x: &[f64]) -> f64 {
        -self.eta_r_drift(x)
    }

    fn eta_r_drift(&self, x: &[f64]) -> f64 {
        let r = self.relative_degree();
        self.coeffs[r][..r].iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// State with prescribed `η_0 … η_{r-1}` (the map is unit lower triangular).
    pub fn state_from_etas(&self, etas: &[f64]) -> Vec<f64> {
        let r = self.relative_degree();
        let mut x = vec![0.0; r];
        for k in 0..r {
            let lower: f64 = (0..k).map(|j| self.coeffs[k][j] * x[j]).sum();
            x[k] = etas[k] - lower;
        }
        x
    }

    /// Barrier chain over `(x, u)` given the feedback `v` that was used; the
    /// last oracle is `η_r = v(x) + u + Σ_j coeffs[r][j] x_{j+1}`.
    pub fn barrier_chain<V>(&self, feedback: V) -> BarrierChain
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let r = self.relative_degree();
        let mut oracles: Vec<EtaOracle> = Vec::with_capacity(r + 1);
        for k in 0..r {
            let this = self.clone();
            oracles.push(Arc::new(move |x: &[f64], _u: &[f64]| this.eta(k, x)));
        }
        let this = self.clone();
        oracles.push(Arc::new(move |x: &[f64], u: &[f64]| {
            feedback(x) + u.first().copied().unwrap_or(0.0) + this.eta_r_drift(x)
        }));
        let alphas = self
            .slopes
            .iter()
            .map(|&c| GainFn::linear(c).expect("positive slope"))
            .collect();
        BarrierChain::new(oracles, alphas).expect("r + 1 oracles")
    }
}
