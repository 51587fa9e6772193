//! Comparison functions: class K, K∞ and extended K∞ maps.
//!
//! A [`GainFn`] is a single scalar leaf. A [`GainExpr`] is a composition tree
//! over leaves; it is how the derived gains used by the small-gain machinery
//! (compositions of inverses, `Id + σ` factors, reflections) are built and
//! evaluated. Inverse nodes are resolved numerically by bracketed bisection so
//! any strictly increasing leaf can be inverted, not just linear ones.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::ValidationReport;

/// Default absolute tolerance on `|g(s) - y|` for numeric inversion.
pub const DEFAULT_INVERT_TOL: f64 = 1e-10;
/// Cap on bracket doublings and on bisection steps.
pub const MAX_INVERT_ITERS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GainError {
    #[error("s = {s} is outside the non-negative domain of gain `{gain}`")]
    Domain { gain: String, s: f64 },
    #[error("could not bracket y = {y} after {MAX_INVERT_ITERS} doublings")]
    Bracket { y: f64 },
    #[error("gain is not increasing on bracket [{lo}, {hi}]")]
    NonMonotone { lo: f64, hi: f64 },
    #[error("invalid gain: {0}")]
    Invalid(String),
}

/// Where a gain is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// `[0, ∞)`, class K∞.
    NonNegative,
    /// All of ℝ, extended class K∞.
    Extended,
}

type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum GainKind {
    Linear { slope: f64 },
    /// Knots strictly increasing in both coordinates, one of them exactly
    /// `(0, 0)`. Outside the knot range the end segments are extended.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
    /// The zero map. Not strictly increasing; only meaningful as an
    /// interconnection gain in cascade configurations.
    Zero,
    Custom { name: String, map: ScalarMap },
}

impl fmt::Debug for GainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GainKind::Linear { slope } => write!(f, "Linear({slope})"),
            GainKind::PiecewiseLinear { knots } => write!(f, "PiecewiseLinear({knots:?})"),
            GainKind::Zero => write!(f, "Zero"),
            GainKind::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// A scalar comparison function. Immutable once built.
#[derive(Debug, Clone)]
pub struct GainFn {
    kind: GainKind,
    domain: Domain,
}

impl GainFn {
    pub fn linear(slope: f64) -> Result<Self, GainError> {
        if !(slope.is_finite() && slope > 0.0) {
            return Err(GainError::Invalid(format!(
                "linear slope must be positive and finite, got {slope}"
            )));
        }
        Ok(Self {
            kind: GainKind::Linear { slope },
            domain: Domain::Extended,
        })
    }

    pub fn piecewise_linear(knots: Vec<(f64, f64)>) -> Result<Self, GainError> {
        if knots.len() < 2 {
            return Err(GainError::Invalid("piecewise-linear gain needs at least two knots".into()));
        }
        if knots.iter().any(|(s, v)| !s.is_finite() || !v.is_finite()) {
            return Err(GainError::Invalid("knots must be finite".into()));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                return Err(GainError::Invalid(format!(
                    "knots must be strictly increasing in both coordinates: {:?} -> {:?}",
                    w[0], w[1]
                )));
            }
        }
        if !knots.iter().any(|&(s, v)| s == 0.0 && v == 0.0) {
            return Err(GainError::Invalid("knots must contain (0, 0)".into()));
        }
        Ok(Self {
            kind: GainKind::PiecewiseLinear { knots },
            domain: Domain::Extended,
        })
    }

    pub fn zero() -> Self {
        Self {
            kind: GainKind::Zero,
            domain: Domain::Extended,
        }
    }

    /// Wraps an arbitrary map. The caller promises it is strictly increasing,
    /// locally Lipschitz and zero at zero; use [`check_extended_kinf`] to
    /// sample-check that promise.
    pub fn custom<F>(name: impl Into<String>, domain: Domain, map: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind: GainKind::Custom {
                name: name.into(),
                map: Arc::new(map),
            },
            domain,
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn kind(&self) -> &GainKind {
        &self.kind
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Slope for linear (and zero) gains; `None` for anything else.
    pub fn linear_slope(&self) -> Option<f64> {
        match self.kind {
            GainKind::Linear { slope } => Some(slope),
            GainKind::Zero => Some(0.0),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        format!("{:?}", self.kind)
    }

    pub fn eval(&self, s: f64) -> Result<f64, GainError> {
        if self.domain == Domain::NonNegative && s < 0.0 {
            return Err(GainError::Domain {
                gain: self.name(),
                s,
            });
        }
        Ok(match &self.kind {
            GainKind::Linear { slope } => slope * s,
            GainKind::PiecewiseLinear { knots } => pwl_eval(knots, s),
            GainKind::Zero => 0.0,
            GainKind::Custom { map, .. } => map(s),
        })
    }
}

fn pwl_eval(knots: &[(f64, f64)], s: f64) -> f64 {
    // index of the first knot strictly right of s, clamped so (i-1, i) is a
    // valid segment; end segments extrapolate
    let i = knots.partition_point(|&(ks, _)| ks <= s).clamp(1, knots.len() - 1);
    let (s0, v0) = knots[i - 1];
    let (s1, v1) = knots[i];
    if s == s0 {
        return v0;
    }
    v0 + (v1 - v0) / (s1 - s0) * (s - s0)
}

/// Serializable description of a gain, as it appears in config files:
/// `{"kind":"linear","slope":20.0}`, `{"kind":"pwl","knots":[[0,0],[1,2]]}`
/// or `{"kind":"zero"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GainSpec {
    Linear { slope: f64 },
    Pwl { knots: Vec<[f64; 2]> },
    Zero,
}

impl GainSpec {
    pub fn build(&self) -> Result<GainFn, GainError> {
        match self {
            GainSpec::Linear { slope } => GainFn::linear(*slope),
            GainSpec::Pwl { knots } => {
                GainFn::piecewise_linear(knots.iter().map(|k| (k[0], k[1])).collect())
            }
            GainSpec::Zero => Ok(GainFn::zero()),
        }
    }
}

impl FromStr for GainSpec {
    type Err = GainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_str(s).map_err(|e| GainError::Invalid(format!("bad gain description: {e}")))
    }
}

/// Composition tree over gains.
#[derive(Debug, Clone)]
pub enum GainExpr {
    Leaf(GainFn),
    /// `Compose(f, g)` is `f ∘ g`: `g` is applied first.
    Compose(Box<GainExpr>, Box<GainExpr>),
    /// `s ↦ s + g(s)`.
    IdPlus(Box<GainExpr>),
    Inverse(Box<GainExpr>),
    /// `s ↦ -g(-s)`.
    NegateReflect(Box<GainExpr>),
}

impl From<GainFn> for GainExpr {
    fn from(g: GainFn) -> Self {
        GainExpr::Leaf(g)
    }
}

impl GainExpr {
    pub fn leaf(g: GainFn) -> Self {
        GainExpr::Leaf(g)
    }

    /// `self ∘ inner`.
    pub fn after(self, inner: GainExpr) -> Self {
        GainExpr::Compose(Box::new(self), Box::new(inner))
    }

    pub fn id_plus(self) -> Self {
        GainExpr::IdPlus(Box::new(self))
    }

    pub fn inverse(self) -> Self {
        GainExpr::Inverse(Box::new(self))
    }

    pub fn negate_reflect(self) -> Self {
        GainExpr::NegateReflect(Box::new(self))
    }

    /// Domain of the whole expression, taken from the innermost argument.
    pub fn domain(&self) -> Domain {
        match self {
            GainExpr::Leaf(g) => g.domain(),
            GainExpr::Compose(_, inner) => inner.domain(),
            GainExpr::IdPlus(g) | GainExpr::Inverse(g) | GainExpr::NegateReflect(g) => g.domain(),
        }
    }

    pub fn eval(&self, s: f64) -> Result<f64, GainError> {
        match self {
            GainExpr::Leaf(g) => g.eval(s),
            GainExpr::Compose(outer, inner) => outer.eval(inner.eval(s)?),
            GainExpr::IdPlus(g) => Ok(s + g.eval(s)?),
            GainExpr::Inverse(g) => {
                if let GainExpr::Leaf(leaf) = g.as_ref() {
                    if let Some(slope) = leaf.linear_slope().filter(|&c| c > 0.0) {
                        leaf.eval(s)?; // domain check
                        return Ok(s / slope);
                    }
                }
                // relative tolerance below |y| = 1 keeps nested inverses of
                // small arguments accurate; still within the absolute default
                let tol = DEFAULT_INVERT_TOL * s.abs().clamp(f64::MIN_POSITIVE, 1.0);
                invert_unchecked(g, s, tol)
            }
            GainExpr::NegateReflect(g) => Ok(-g.eval(-s)?),
        }
    }
}

/// Finds `s` with `|gain(s) - y| <= tol` by geometric bracket expansion from 0
/// (start width 1, factor 2) followed by bisection.
pub fn invert(gain: &GainExpr, y: f64, tol: f64) -> Result<f64, GainError> {
    if !(tol > 0.0) {
        return Err(GainError::Invalid(format!("inversion tolerance must be positive, got {tol}")));
    }
    if !y.is_finite() {
        return Err(GainError::Bracket { y });
    }
    invert_unchecked(gain, y, tol)
}

fn invert_unchecked(gain: &GainExpr, y: f64, tol: f64) -> Result<f64, GainError> {
    let f0 = gain.eval(0.0)?;
    if f0 == y {
        return Ok(0.0);
    }
    let upward = y > f0;
    if !upward && gain.domain() == Domain::NonNegative {
        return Err(GainError::Domain {
            gain: format!("{gain:?}"),
            s: y,
        });
    }
    let dir = if upward { 1.0 } else { -1.0 };

    // near end of the bracket stays at the previous probe
    let (mut near, mut f_near) = (0.0_f64, f0);
    let mut width = 1.0_f64;
    let mut far = dir * width;
    let mut f_far = gain.eval(far)?;
    let mut found = false;
    for _ in 0..MAX_INVERT_ITERS {
        if dir * (f_far - f_near) < 0.0 {
            return Err(GainError::NonMonotone {
                lo: near.min(far),
                hi: near.max(far),
            });
        }
        if dir * (f_far - y) >= 0.0 {
            found = true;
            break;
        }
        near = far;
        f_near = f_far;
        width *= 2.0;
        far = dir * width;
        f_far = gain.eval(far)?;
    }
    if !found {
        return Err(GainError::Bracket { y });
    }
    if (f_far - y).abs() <= tol {
        return Ok(far);
    }

    let (mut lo, mut hi) = if upward { (near, far) } else { (far, near) };
    let (mut f_lo, mut f_hi) = if upward { (f_near, f_far) } else { (f_far, f_near) };
    for _ in 0..MAX_INVERT_ITERS {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = gain.eval(mid)?;
        if (fm - y).abs() <= tol {
            return Ok(mid);
        }
        if fm < y {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
            f_hi = fm;
        }
    }
    Ok(if (f_lo - y).abs() <= (f_hi - y).abs() { lo } else { hi })
}

/// Default sampling grid: 257 points over `[-100, 100]`, containing 0.
pub fn default_grid() -> Vec<f64> {
    (0..257).map(|i| -100.0 + 200.0 * i as f64 / 256.0).collect()
}

/// Sample-checks class K∞ / extended K∞ membership on `grid`.
///
/// For non-negative domains the negative part of the grid is ignored.
pub fn check_extended_kinf(gain: &GainExpr, grid: &[f64]) -> ValidationReport {
    let mut report = ValidationReport::new("extended-kinf");
    let pts: Vec<f64> = match gain.domain() {
        Domain::Extended => grid.to_vec(),
        Domain::NonNegative => grid.iter().copied().filter(|&s| s >= 0.0).collect(),
    };
    let mut values = Vec::with_capacity(pts.len());
    for &s in &pts {
        match gain.eval(s) {
            Ok(v) => values.push((s, v)),
            Err(e) => report.violate(s, format!("evaluation failed: {e}")),
        }
    }
    report.checked = values.len();

    match gain.eval(0.0) {
        Ok(v) if v.abs() > 1e-12 => report.violate(0.0, format!("value at 0 is {v}")),
        Err(e) => report.violate(0.0, format!("evaluation at 0 failed: {e}")),
        _ => {}
    }
    for w in values.windows(2) {
        let ((s0, v0), (s1, v1)) = (w[0], w[1]);
        if s1 > s0 && v1 <= v0 {
            report.violate(s1, format!("not strictly increasing: g({s0}) = {v0} >= g({s1}) = {v1}"));
        }
    }

    let growth_flag = |report: &mut ValidationReport, end: f64| {
        if end == 0.0 {
            return;
        }
        if let (Ok(full), Ok(half)) = (gain.eval(end), gain.eval(end / 2.0)) {
            if full.abs() < half.abs() * 1.5 {
                report.violate(
                    end,
                    format!("bounded-growth suspicion: |g({end})| = {} < 1.5 |g({})|", full.abs(), end / 2.0),
                );
            }
        }
    };
    if let Some(&max) = pts.iter().max_by(|a, b| a.total_cmp(b)) {
        if max > 0.0 {
            growth_flag(&mut report, max);
        }
    }
    if gain.domain() == Domain::Extended {
        if let Some(&min) = pts.iter().min_by(|a, b| a.total_cmp(b)) {
            if min < 0.0 {
                growth_flag(&mut report, min);
            }
        }
    }
    report.note("monotonicity checked on sampled grid only");
    report
}
