//! Seeded randomized verification suites. Each run is deterministic given
//! its seed.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::barrier_chain::{check_margin_form, BarrierChain, EtaOracle, IntegratorChain};
use crate::comparison::check_lower_bound;
use crate::gain_algebra::check_weak_inequalities;
use crate::gains::{invert, Domain, GainExpr, GainFn};
use crate::pendulum::qp_filter;
use crate::simulator::{integrate, SystemSpec, TimeGrid};

pub const SUITES: [&str; 5] = ["margin-form", "comparison", "invariance", "weak-ineq", "qp"];

/// Invariance tolerance on `η_k - level_k`.
pub const INVARIANCE_TOL: f64 = 1e-6;
/// Target for the safety Lyapunov function under zero input.
pub const LYAPUNOV_TARGET: f64 = 1e-3;

const MAX_RECORDED: usize = 20;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("unknown suite `{0}` (expected one of: margin-form, comparison, invariance, weak-ineq, qp)")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub name: String,
    pub seed: u64,
    pub instances: usize,
    pub failed: usize,
    /// First few failure descriptions.
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

impl SuiteOutcome {
    fn new(name: &str, seed: u64) -> Self {
        Self {
            name: name.into(),
            seed,
            instances: 0,
            failed: 0,
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.instances += 1;
        if !ok {
            self.failed += 1;
            if self.failures.len() < MAX_RECORDED {
                self.failures.push(detail());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.instances > 0 && self.failed == 0
    }
}

impl fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} (seed {}): {}/{} pass",
            self.name,
            self.seed,
            self.instances - self.failed,
            self.instances
        )?;
        for fail in &self.failures {
            writeln!(f, "  fail: {fail}")?;
        }
        for note in &self.notes {
            writeln!(f, "  note: {note}")?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

pub fn run_suite(name: &str, seed: u64) -> Result<SuiteOutcome, SuiteError> {
    Ok(match name {
        "margin-form" => margin_form_suite(seed, 20, 500),
        "comparison" => comparison_suite(seed, 500),
        "invariance" => invariance_suite(seed, 200),
        "weak-ineq" => weak_ineq_suite(seed, 100, 100),
        "qp" => qp_suite(seed, 100_000, 100),
        other => return Err(SuiteError::Unknown(other.to_string())),
    })
}

/// Random piecewise-linear extended class K∞ gain through the origin, with
/// 1 to 4 segments on each side and slopes in `[0.2, 5]`.
pub fn random_pwl(rng: &mut ChaCha8Rng) -> GainFn {
    let mut side = |sign: f64| {
        let n = rng.gen_range(1..=4);
        let (mut x, mut y) = (0.0, 0.0);
        (0..n)
            .map(|_| {
                let width = rng.gen_range(0.2..2.0);
                x += width;
                y += width * rng.gen_range(0.2..5.0);
                (sign * x, sign * y)
            })
            .collect::<Vec<_>>()
    };
    let mut knots = side(-1.0);
    knots.reverse();
    knots.push((0.0, 0.0));
    knots.extend(side(1.0));
    GainFn::piecewise_linear(knots).expect("increasing knots through the origin")
}

/// Margin-form construction: start from a chain with `η_r ≥ -γ(|u|)`, rebuild
/// the last level with `α̂_r = max{(1-c)α_r, (1+c)α_r}` and check the margin
/// form against `φ(s) = max{-α_r⁻¹(-γ(s)/c), α_r⁻¹(γ(s)/c)}`.
pub fn margin_form_suite(seed: u64, chains: usize, samples_per_chain: usize) -> SuiteOutcome {
    const C: f64 = 0.5;
    let mut out = SuiteOutcome::new("margin-form", seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = GainFn::linear(1.0).expect("positive slope");
    let mut triggered = 0usize;
    for idx in 0..chains {
        let r = rng.gen_range(2..=3);
        let slopes: Vec<f64> = (0..r).map(|_| rng.gen_range(0.5..20.0)).collect();
        let ic = IntegratorChain::new(&slopes);
        let alpha_r = GainFn::linear(slopes[r - 1]).expect("positive slope");
        let bump = rng.gen_range(0.0..2.0);

        // η_r = -γ(|u|) + bump·x₁²
        let mut oracles: Vec<EtaOracle> = (0..r)
            .map(|k| {
                let ic = ic.clone();
                Arc::new(move |x: &[f64], _: &[f64]| ic.eta(k, x)) as EtaOracle
            })
            .collect();
        let (ic_r, a_r, g) = (ic.clone(), alpha_r.clone(), gamma.clone());
        oracles.push(Arc::new(move |x: &[f64], u: &[f64]| {
            let eta_prev = ic_r.eta(r - 1, x);
            let base = -g.eval(u[0].abs()).unwrap_or(f64::NAN) + bump * x[0] * x[0];
            let a = a_r.eval(eta_prev).unwrap_or(f64::NAN);
            base - a + ((1.0 - C) * a).max((1.0 + C) * a)
        }));
        let a_hat = alpha_r.clone();
        let hat = GainFn::custom("alpha-hat", Domain::Extended, move |s| {
            let a = a_hat.eval(s).unwrap_or(f64::NAN);
            ((1.0 - C) * a).max((1.0 + C) * a)
        });
        let mut alphas: Vec<GainFn> = slopes[..r - 1]
            .iter()
            .map(|&c| GainFn::linear(c).expect("positive slope"))
            .collect();
        alphas.push(hat);
        let chain = BarrierChain::new(oracles, alphas).expect("r + 1 oracles");

        let a_expr = GainExpr::leaf(alpha_r.clone());
        let g_phi = gamma.clone();
        let phi = GainFn::custom("phi", Domain::NonNegative, move |s| {
            let y = g_phi.eval(s).unwrap_or(f64::NAN) / C;
            let lo = invert(&a_expr, -y, 1e-12).unwrap_or(f64::NAN);
            let hi = invert(&a_expr, y, 1e-12).unwrap_or(f64::NAN);
            (-lo).max(hi)
        });

        let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..samples_per_chain)
            .map(|_| {
                let x = (0..r).map(|_| rng.gen_range(-5.0..5.0)).collect();
                (x, vec![rng.gen_range(-5.0..5.0)])
            })
            .collect();
        let report = check_margin_form(&chain, &phi, &samples);
        triggered += samples
            .iter()
            .filter(|(x, u)| chain.eta(r - 1, x, u).unwrap().abs() >= phi.eval(u[0].abs()).unwrap())
            .count();
        let bad: std::collections::BTreeSet<usize> = report.violations.iter().map(|v| v.at as usize).collect();
        for (j, sample) in samples.iter().enumerate() {
            out.record(!bad.contains(&j), || format!("chain {idx}, sample {j}: {sample:?}"));
        }
    }
    out.notes.push(format!("antecedent triggered on {triggered} samples"));
    if triggered == 0 {
        out.failed += 1;
        out.failures.push("antecedent never triggered: vacuous run".into());
    }
    out
}

/// Equality-case trajectories `η̇ = -α(η) + w` against the comparison bound.
pub fn comparison_suite(seed: u64, instances: usize) -> SuiteOutcome {
    const T_END: f64 = 5.0;
    const DT: f64 = 1e-3;
    let mut out = SuiteOutcome::new("comparison", seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::new(T_END, DT).expect("valid grid");
    let mut min_slack = f64::INFINITY;
    for idx in 0..instances {
        let alpha = random_pwl(&mut rng);
        let pieces = rng.gen_range(1..=5);
        let mut breaks: Vec<usize> = (1..pieces).map(|_| rng.gen_range(1..grid.len)).collect();
        breaks.sort_unstable();
        let levels: Vec<f64> = (0..pieces).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let w: Vec<f64> = (0..grid.len)
            .map(|j| levels[breaks.iter().filter(|&&b| b <= j).count()])
            .collect();
        let eta0 = rng.gen_range(-3.0..3.0);

        // RK4 with w held constant over each step
        let f = |eta: f64, wj: f64| -alpha.eval(eta).expect("extended gain") + wj;
        let mut eta = Vec::with_capacity(grid.len);
        eta.push(eta0);
        for j in 1..grid.len {
            let (y, wj) = (eta[j - 1], w[j - 1]);
            let k1 = f(y, wj);
            let k2 = f(y + 0.5 * DT * k1, wj);
            let k3 = f(y + 0.5 * DT * k2, wj);
            let k4 = f(y + DT * k3, wj);
            eta.push(y + DT / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
        }
        match check_lower_bound(&eta, &grid, &alpha, &w) {
            Ok(report) => {
                for n in &report.notes {
                    if let Some(s) = n.split("min slack ").nth(1).and_then(|s| s.parse::<f64>().ok()) {
                        min_slack = min_slack.min(s);
                    }
                }
                out.record(report.passed(), || format!("instance {idx}: {report}"));
            }
            Err(e) => out.record(false, || format!("instance {idx}: {e}")),
        }
    }
    out.notes.push(format!("smallest slack over all instances {min_slack:.3e}"));
    out
}

/// Random linear chains on chains of integrators. Part one: bounded inputs,
/// started in `C`, must stay in `C`. Part two: zero input, started outside
/// `S`, the safety Lyapunov function must drop below the target.
pub fn invariance_suite(seed: u64, instances: usize) -> SuiteOutcome {
    let mut out = SuiteOutcome::new("invariance", seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = GainFn::linear(1.0).expect("positive slope");
    let mut worst_exit = f64::INFINITY;
    let mut non_monotone = 0usize;
    let mut worst_final = 0.0_f64;
    for idx in 0..instances {
        let r = rng.gen_range(2..=3);
        let slopes: Vec<f64> = (0..r).map(|_| rng.gen_range(0.5..20.0)).collect();
        let ic = IntegratorChain::new(&slopes);
        let feedback = {
            let ic = ic.clone();
            move |x: &[f64]| ic.cancelling_feedback(x)
        };
        let chain = ic.barrier_chain(feedback.clone());

        // part one: u(t) = a₁ sin(ω₁ t + p₁) + a₂ sin(ω₂ t + p₂), ‖u‖ ≤ a₁ + a₂
        let amps = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let freqs = [rng.gen_range(0.1..5.0), rng.gen_range(0.1..5.0)];
        let phases = [rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3)];
        let u_norm = amps[0] + amps[1];
        let levels = chain.margin_levels(&gamma, u_norm).expect("linear gains");
        let etas0: Vec<f64> = levels.iter().map(|&d| d + rng.gen_range(0.0..2.0)).collect();
        let x0 = ic.state_from_etas(&etas0);
        let fb = feedback.clone();
        let sys = SystemSpec::new(r, 1, move |_, x, u, dx| {
            dx[..r - 1].copy_from_slice(&x[1..r]);
            dx[r - 1] = fb(x) + u[0];
        })
        .with_signal(move |t| {
            vec![amps[0] * (freqs[0] * t + phases[0]).sin() + amps[1] * (freqs[1] * t + phases[1]).sin()]
        });
        match integrate(&sys, &x0, 5.0, 1e-3) {
            Ok(traj) => {
                let exit = traj
                    .states
                    .iter()
                    .map(|x| (0..r).map(|k| ic.eta(k, x) - levels[k]).fold(f64::INFINITY, f64::min))
                    .fold(f64::INFINITY, f64::min);
                worst_exit = worst_exit.min(exit);
                out.record(exit >= -INVARIANCE_TOL, || {
                    format!("instance {idx} (slopes {slopes:?}): left C by {:.3e}", -exit)
                });
            }
            Err(e) => out.record(false, || format!("instance {idx}: {e}")),
        }

        // part two: zero input, η₀ < 0
        let mut etas0: Vec<f64> = (0..r).map(|_| rng.gen_range(-3.0..1.0)).collect();
        etas0[0] = rng.gen_range(-3.0..-0.1);
        let x0 = ic.state_from_etas(&etas0);
        let zeros = vec![0.0; r];
        let fb = feedback.clone();
        let sys = SystemSpec::new(r, 1, move |_, x, u, dx| {
            dx[..r - 1].copy_from_slice(&x[1..r]);
            dx[r - 1] = fb(x) + u[0];
        });
        match integrate(&sys, &x0, 80.0, 1e-2) {
            Ok(traj) => {
                let v: Vec<f64> = traj
                    .states
                    .iter()
                    .map(|x| chain.safety_lyapunov(x, &[0.0], &zeros).expect("r levels"))
                    .collect();
                if v.windows(2).any(|w| w[1] > w[0] + 1e-12) {
                    non_monotone += 1;
                }
                let first_below = v.iter().position(|&s| s < LYAPUNOV_TARGET);
                let last = *v.last().expect("nonempty");
                worst_final = worst_final.max(last);
                out.record(first_below.is_some() && last < LYAPUNOV_TARGET, || {
                    format!("instance {idx} (slopes {slopes:?}): V ends at {last:.3e}")
                });
            }
            Err(e) => out.record(false, || format!("instance {idx}: {e}")),
        }
    }
    out.notes.push(format!("closest approach to the boundary of C: {worst_exit:.3e}"));
    out.notes.push(format!("largest final V under zero input: {worst_final:.3e}"));
    out.notes.push(format!(
        "{non_monotone} of {instances} zero-input runs had a non-monotone V (max-type V need not decrease step by step)"
    ));
    out
}

/// Weak triangle inequalities on random piecewise-linear `γ`, `σ`: the min
/// form on arbitrary `(a, b)` and the sum form on `a, b ≤ 0`.
pub fn weak_ineq_suite(seed: u64, pairs: usize, samples_per_pair: usize) -> SuiteOutcome {
    let mut out = SuiteOutcome::new("weak-ineq", seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (part, nonpositive) in [("min form", false), ("sum form", true)] {
        for idx in 0..pairs {
            let gamma = random_pwl(&mut rng);
            let sigma = random_pwl(&mut rng);
            let samples: Vec<(f64, f64)> = (0..samples_per_pair)
                .map(|_| {
                    if nonpositive {
                        (rng.gen_range(-10.0..=0.0), rng.gen_range(-10.0..=0.0))
                    } else {
                        (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0))
                    }
                })
                .collect();
            let report = check_weak_inequalities(&gamma, &sigma, &samples);
            let bad: std::collections::BTreeSet<usize> = report.violations.iter().map(|v| v.at as usize).collect();
            for (j, s) in samples.iter().enumerate() {
                out.record(!bad.contains(&j), || format!("{part}, pair {idx}: (a, b) = {s:?}"));
            }
        }
    }
    out
}

/// Projection properties of the scalar safety filter.
pub fn qp_suite(seed: u64, triples: usize, competitors: usize) -> SuiteOutcome {
    let mut out = SuiteOutcome::new("qp", seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut active = 0usize;
    for idx in 0..triples {
        let u_hat = rng.gen_range(-100.0..100.0);
        let psi1 = rng.gen_range(-100.0..100.0);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let psi0 = sign * rng.gen_range(0.01..10.0);
        let u_star = match qp_filter(u_hat, psi1, psi0) {
            Ok(v) => v,
            Err(e) => {
                out.record(false, || format!("triple {idx}: {e}"));
                continue;
            }
        };
        if u_star != u_hat {
            active += 1;
        }
        let feasible = psi1 + psi0 * u_star >= -1e-12 * psi1.abs().max(1.0);
        let idempotent = qp_filter(u_star, psi1, psi0).map(|v| v == u_star).unwrap_or(false);
        let boundary = -psi1 / psi0;
        let minimal = (0..competitors).all(|_| {
            // feasible side of the boundary is u ≥ b for ψ₀ > 0, u ≤ b otherwise
            let u = boundary + sign * rng.gen_range(0.0..200.0);
            (u_star - u_hat).abs() <= (u - u_hat).abs() + 1e-12 * u_hat.abs().max(1.0)
        });
        out.record(feasible && idempotent && minimal, || {
            format!(
                "triple {idx} (u_hat {u_hat}, psi1 {psi1}, psi0 {psi0}): feasible {feasible}, idempotent {idempotent}, minimal {minimal}"
            )
        });
    }
    out.notes.push(format!("filter active on {active} of {triples} triples"));
    out
}
