//! Pure scalar machinery: the reaction family `f`, derived growth functions,
//! odd powers, algebraic inequality oracles and the concave supersolution
//! transform.
//!
//! Everything here is a pure function of immutable inputs and safe to call
//! concurrently.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::quad;

/// Number of log-spaced sample points used by the spot checks of analytic
/// hypotheses (monotonicity, convexity). The checks sample `[0, 10^6]`,
/// clamped to the range where the family evaluates finitely.
const SPOT_CHECK_POINTS: usize = 512;
const SPOT_CHECK_MAX: f64 = 1e6;

#[derive(Debug, Error)]
pub enum ScalarError {
    #[error("argument must be nonnegative, got {0}")]
    NegativeArgument(f64),
    #[error("exponent gamma={gamma} out of range, need gamma >= 1/(p-1) = {min}")]
    GammaOutOfRange { gamma: f64, min: f64 },
    #[error("kappa integral diverges near 0 for gamma = {0} <= 1/2")]
    KappaDivergent(f64),
    #[error("no limit: extrapolated values differ by {0:.3e} > 1e-4")]
    NoLimit(f64),
    #[error("f^(1/(p-1)) failed the convexity spot check near t = {0}")]
    NotConvex(f64),
    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
}

/// Odd power `|t|^{p-2} t`, the scalar kernel of the operator.
///
/// Computed as `sign(t) |t|^{p-1}` so the value is finite (zero) at `t = 0`
/// for every `p > 1`.
#[inline]
pub fn odd_power(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.signum() * t.abs().powf(p - 1.0)
    }
}

/// Smoothed odd power `(l + t^2)^{(p-2)/2} t` with smoothing level `l >= 0`.
///
/// For `l = 0` this reduces to [`odd_power`]; for `l > 0` it is finite and
/// differentiable through `t = 0` even when `p < 2`.
#[inline]
pub fn smoothed_odd_power(p: f64, l: f64, t: f64) -> f64 {
    debug_assert!(l >= 0.0);
    if t == 0.0 {
        return 0.0;
    }
    if l == 0.0 {
        odd_power(t, p)
    } else {
        (l + t * t).powf(0.5 * (p - 2.0)) * t
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NonlinearityKind {
    Exponential,
    Power,
    Custom,
}

/// The reaction family: nondecreasing `f` with `f(0) > 0`, together with its
/// first two derivatives.
///
/// Custom members must supply `f`, `f'` and `f''` explicitly; no numerical
/// differentiation of user functions is performed.
#[derive(Clone)]
pub struct Nonlinearity {
    kind: NonlinearityKind,
    m: Option<f64>,
    f: ScalarFn,
    df: ScalarFn,
    ddf: ScalarFn,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NonlinearityKind::Exponential => write!(fm, "Nonlinearity::Exponential"),
            NonlinearityKind::Power => write!(fm, "Nonlinearity::Power(m={})", self.m.unwrap()),
            NonlinearityKind::Custom => write!(fm, "Nonlinearity::Custom"),
        }
    }
}

impl Nonlinearity {
    /// `f(t) = e^t`.
    pub fn exponential() -> Self {
        Self {
            kind: NonlinearityKind::Exponential,
            m: None,
            f: Arc::new(f64::exp),
            df: Arc::new(f64::exp),
            ddf: Arc::new(f64::exp),
        }
    }

    /// `f(t) = (1 + t)^m` with `m > 0`.
    pub fn power(m: f64) -> Result<Self, ScalarError> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(ScalarError::InvalidNonlinearity(format!(
                "power exponent must be positive and finite, got {m}"
            )));
        }
        Ok(Self {
            kind: NonlinearityKind::Power,
            m: Some(m),
            f: Arc::new(move |t: f64| (1.0 + t).powf(m)),
            df: Arc::new(move |t: f64| m * (1.0 + t).powf(m - 1.0)),
            ddf: Arc::new(move |t: f64| m * (m - 1.0) * (1.0 + t).powf(m - 2.0)),
        })
    }

    /// A user-supplied member; the construction spot-checks that `f` is
    /// nondecreasing with `f(0) > 0` and `f' >= 0` on a log-spaced grid.
    pub fn custom<F, D, D2>(f: F, df: D, ddf: D2) -> Result<Self, ScalarError>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
        D2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let nl = Self {
            kind: NonlinearityKind::Custom,
            m: None,
            f: Arc::new(f),
            df: Arc::new(df),
            ddf: Arc::new(ddf),
        };
        nl.spot_check()?;
        Ok(nl)
    }

    pub fn kind(&self) -> NonlinearityKind {
        self.kind
    }

    /// The power exponent for the power family, `None` otherwise.
    pub fn power_exponent(&self) -> Option<f64> {
        self.m
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    #[inline]
    pub fn deriv(&self, t: f64) -> f64 {
        (self.df)(t)
    }

    #[inline]
    pub fn deriv2(&self, t: f64) -> f64 {
        (self.ddf)(t)
    }

    /// `f(t) - f(0)`, vanishing at zero.
    #[inline]
    pub fn excess(&self, t: f64) -> f64 {
        self.value(t) - self.value(0.0)
    }

    /// Antiderivative `F(t) = ∫_0^t f`, with closed forms for the built-in
    /// families and quadrature for custom members.
    pub fn antiderivative(&self, t: f64) -> f64 {
        match self.kind {
            NonlinearityKind::Exponential => t.exp() - 1.0,
            NonlinearityKind::Power => {
                let m = self.m.unwrap();
                ((1.0 + t).powf(m + 1.0) - 1.0) / (m + 1.0)
            }
            NonlinearityKind::Custom => {
                let f = self.f.clone();
                quad::integrate(move |s| f(s), 0.0, t, quad::DEFAULT_ABS_TOL)
            }
        }
    }

    /// Spot check of the structural hypotheses on a log-spaced grid,
    /// clamped to the range where the member evaluates finitely.
    fn spot_check(&self) -> Result<(), ScalarError> {
        let f0 = self.value(0.0);
        if !(f0 > 0.0) {
            return Err(ScalarError::InvalidNonlinearity(format!(
                "f(0) = {f0} must be positive"
            )));
        }
        let grid = log_grid(self.finite_range(), SPOT_CHECK_POINTS);
        let mut prev = f0;
        for &t in &grid {
            let v = self.value(t);
            let d = self.deriv(t);
            if v.is_nan() || d.is_nan() {
                return Err(ScalarError::InvalidNonlinearity(format!(
                    "f or f' is NaN at t = {t}"
                )));
            }
            if v < prev * (1.0 - 1e-12) - 1e-300 {
                return Err(ScalarError::InvalidNonlinearity(format!(
                    "f is decreasing near t = {t}"
                )));
            }
            if d < -1e-12 {
                return Err(ScalarError::InvalidNonlinearity(format!(
                    "f' = {d} < 0 at t = {t}"
                )));
            }
            if v.is_finite() {
                prev = v;
            }
        }
        Ok(())
    }

    /// Largest `t <= 10^6` at which `f`, `f'`, `f''` and `f f''/f'^2` all
    /// evaluate finitely.
    pub fn finite_range(&self) -> f64 {
        let mut t = SPOT_CHECK_MAX;
        for _ in 0..80 {
            let (v, d, dd) = (self.value(t), self.deriv(t), self.deriv2(t));
            if v.is_finite() && d.is_finite() && dd.is_finite() && (v * dd).is_finite() {
                let d2 = d * d;
                if d2.is_finite() && d2 > 0.0 {
                    return t;
                }
            }
            t *= 0.5;
        }
        t
    }
}

fn log_grid(max: f64, points: usize) -> Vec<f64> {
    // log-spaced from 1e-6 up to `max`, prefixed by 0
    let lo: f64 = 1e-6;
    let ratio = (max / lo).powf(1.0 / (points as f64 - 2.0));
    let mut g = Vec::with_capacity(points);
    g.push(0.0);
    let mut t = lo;
    for _ in 0..points - 1 {
        g.push(t.min(max));
        t *= ratio;
    }
    g
}

/// Which derived scalar [`eval_derived`] should produce.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Derived {
    /// `f(t)`
    Value,
    /// `f'(t)`
    Deriv,
    /// `f(t) - f(0)`
    Excess,
    /// `(f(t) - f(0))^{1/(p-1)}`
    ExcessRoot,
    /// `∫_0^t (f - f(0))^{2γ-2} f'^2`, the weight integral of the
    /// power-of-excess stability test functions.
    StabilityIntegral { gamma: f64 },
}

/// Evaluate one of the derived scalar functions of the family at `t >= 0`.
///
/// The stability integral uses adaptive quadrature with absolute tolerance
/// `1e-10`; its exponent must satisfy `gamma >= 1/(p-1)`.
pub fn eval_derived(
    nl: &Nonlinearity,
    p: f64,
    t: f64,
    which: Derived,
) -> Result<f64, ScalarError> {
    if t < 0.0 {
        return Err(ScalarError::NegativeArgument(t));
    }
    if !(p > 1.0) {
        return Err(ScalarError::ParameterOutOfRange(format!(
            "p must exceed 1, got {p}"
        )));
    }
    Ok(match which {
        Derived::Value => nl.value(t),
        Derived::Deriv => nl.deriv(t),
        Derived::Excess => nl.excess(t),
        Derived::ExcessRoot => nl.excess(t).powf(1.0 / (p - 1.0)),
        Derived::StabilityIntegral { gamma } => {
            let min = 1.0 / (p - 1.0);
            if gamma < min {
                return Err(ScalarError::GammaOutOfRange { gamma, min });
            }
            stability_integral(nl, gamma, t)?
        }
    })
}

/// `∫_0^t excess(σ)^{2γ-2} f'(σ)^2 dσ`.
///
/// For `γ < 1` the integrand has an integrable singularity at 0 (when
/// `f'(0) > 0`); the first `[0, δ]` piece is then evaluated from the linear
/// expansion `excess(σ) ≈ f'(0) σ`. For `γ <= 1/2` the integral diverges.
fn stability_integral(nl: &Nonlinearity, gamma: f64, t: f64) -> Result<f64, ScalarError> {
    let expo = 2.0 * gamma - 2.0;
    let nl2 = nl.clone();
    let integrand = move |s: f64| {
        let d = nl2.deriv(s);
        nl2.excess(s).powf(expo) * d * d
    };
    if expo >= 0.0 || nl.deriv(0.0) == 0.0 {
        return Ok(quad::integrate(integrand, 0.0, t, quad::DEFAULT_ABS_TOL));
    }
    if gamma <= 0.5 {
        return Err(ScalarError::KappaDivergent(gamma));
    }
    let delta = (t * 0.5).min(1e-4);
    let d0 = nl.deriv(0.0);
    // ∫_0^δ (f'(0) σ)^{2γ-2} f'(0)^2 dσ = f'(0)^{2γ} δ^{2γ-1} / (2γ-1)
    let head = d0.powf(2.0 * gamma) * delta.powf(2.0 * gamma - 1.0) / (2.0 * gamma - 1.0);
    Ok(head + quad::integrate(integrand, delta, t, quad::DEFAULT_ABS_TOL))
}

/// Result of [`tau_limit`]: the extrapolated limit of `f f''/f'^2` together
/// with the raw samples that produced it.
#[derive(Debug, Clone)]
pub struct TauEstimate {
    pub estimate: f64,
    /// `(t, f(t) f''(t) / f'(t)^2)` at the sample points.
    pub samples: Vec<(f64, f64)>,
}

/// Limit of `f(t) f''(t) / f'(t)^2` as `t -> ∞`, estimated by Richardson
/// extrapolation in `1/t` at `t = 10^k`, `k = 2..6` (clamped to the range
/// where the family evaluates finitely).
pub fn tau_limit(nl: &Nonlinearity) -> Result<TauEstimate, ScalarError> {
    let tmax = nl.finite_range();
    let mut samples = Vec::new();
    for k in 2..=6 {
        let t = 10f64.powi(k).min(tmax);
        let (v, d, dd) = (nl.value(t), nl.deriv(t), nl.deriv2(t));
        if !(d > 0.0) {
            return Err(ScalarError::InvalidNonlinearity(format!(
                "f'({t}) = {d} must be positive for the limit"
            )));
        }
        let r = (v / d) * (dd / d);
        if r.is_finite() && samples.last().map(|&(tp, _)| tp) != Some(t) {
            samples.push((t, r));
        }
    }
    if samples.is_empty() {
        return Err(ScalarError::InvalidNonlinearity(
            "no finite samples for the limit".into(),
        ));
    }
    if samples.len() == 1 {
        return Ok(TauEstimate {
            estimate: samples[0].1,
            samples,
        });
    }
    // one Richardson level assuming r(t) = tau + c/t + o(1/t)
    let mut extrapolated = Vec::new();
    for w in samples.windows(2) {
        let (t1, r1) = w[0];
        let (t2, r2) = w[1];
        extrapolated.push((r2 * t2 - r1 * t1) / (t2 - t1));
    }
    let last = *extrapolated.last().unwrap();
    if extrapolated.len() >= 2 {
        let prev = extrapolated[extrapolated.len() - 2];
        let diff = (last - prev).abs();
        if diff > 1e-4 {
            return Err(ScalarError::NoLimit(diff));
        }
    }
    Ok(TauEstimate {
        estimate: last,
        samples,
    })
}

// ---------------------------------------------------------------------------
// Inequality oracles
// ---------------------------------------------------------------------------

/// A sampled tuple for the inequality suite.
#[derive(Debug, Clone, Copy)]
pub struct InequalitySample {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Minimum normalized margin of one inequality over a sample set.
///
/// Margins are `(LHS - RHS) / max(1, |LHS|, |RHS|)` with the sign arranged so
/// that validity means `margin >= 0`.
#[derive(Debug, Clone)]
pub struct InequalityMargin {
    pub name: String,
    pub min_margin: f64,
    pub samples: usize,
}

/// Built-in convex C^1 profiles for the pair-difference inequality.
fn convex_profiles() -> Vec<(&'static str, ScalarFn, ScalarFn)> {
    let q = 3.0;
    let delta2 = 0.25; // smoothing of |t|^q at the origin
    vec![
        (
            "square",
            Arc::new(|t: f64| t * t) as ScalarFn,
            Arc::new(|t: f64| 2.0 * t) as ScalarFn,
        ),
        (
            "smooth-abs-cube",
            Arc::new(move |t: f64| (delta2 + t * t).powf(0.5 * q)),
            Arc::new(move |t: f64| q * t * (delta2 + t * t).powf(0.5 * q - 1.0)),
        ),
        (
            "exp",
            Arc::new(|t: f64| t.exp()),
            Arc::new(|t: f64| t.exp()),
        ),
    ]
}

/// Built-in increasing profiles for the root-transform inequality.
fn increasing_profiles() -> Vec<(&'static str, ScalarFn, ScalarFn)> {
    vec![
        (
            "identity",
            Arc::new(|t: f64| t) as ScalarFn,
            Arc::new(|_: f64| 1.0) as ScalarFn,
        ),
        (
            "cube",
            Arc::new(|t: f64| t * t * t),
            Arc::new(|t: f64| 3.0 * t * t),
        ),
        (
            "exp",
            Arc::new(|t: f64| t.exp()),
            Arc::new(|t: f64| t.exp()),
        ),
    ]
}

/// Margin of the pair-difference inequality
/// `J_p(a-b) [α ξ_{p,l}(h'(a)) - β ξ_{p,l}(h'(b))] >=
///  (l (a-b)^2 + (h(a)-h(b))^2)^{(p-2)/2} (h(a)-h(b)) (α-β)`
/// for a convex C^1 profile `h`.
fn pair_difference_margin(
    p: f64,
    l: f64,
    h: &ScalarFn,
    dh: &ScalarFn,
    s: &InequalitySample,
) -> f64 {
    let lhs = odd_power(s.a - s.b, p)
        * (s.alpha * smoothed_odd_power(p, l, dh(s.a)) - s.beta * smoothed_odd_power(p, l, dh(s.b)));
    let u = h(s.a) - h(s.b);
    let rhs = if u == 0.0 && l * (s.a - s.b) * (s.a - s.b) == 0.0 {
        0.0
    } else {
        (l * (s.a - s.b) * (s.a - s.b) + u * u).powf(0.5 * (p - 2.0)) * u * (s.alpha - s.beta)
    };
    (lhs - rhs) / lhs.abs().max(rhs.abs()).max(1.0)
}

/// Margin of the root-transform inequality
/// `|a-b|^{p-2} (a-b) (h(a)-h(b)) >= |H(a)-H(b)|^p` with
/// `H(t) = ∫_0^t h'(σ)^{1/p} dσ` for an increasing profile `h`.
fn root_transform_margin(p: f64, h: &ScalarFn, dh: &ScalarFn, a: f64, b: f64) -> f64 {
    let cap = |t: f64| {
        let dh = dh.clone();
        quad::integrate(move |s| dh(s).max(0.0).powf(1.0 / p), 0.0, t, 1e-11)
    };
    let lhs = odd_power(a - b, p) * (h(a) - h(b));
    let rhs = (cap(a) - cap(b)).abs().powf(p);
    (lhs - rhs) / lhs.abs().max(rhs.abs()).max(1.0)
}

/// Margin of the power-difference inequality
/// `(x^γ - y^γ)^2 <= γ^2/(2γ-1) (x-y)(x^{2γ-1} - y^{2γ-1})`, `x, y >= 0`.
fn power_difference_margin(gamma: f64, x: f64, y: f64) -> f64 {
    let lhs = gamma * gamma / (2.0 * gamma - 1.0)
        * (x - y)
        * (x.powf(2.0 * gamma - 1.0) - y.powf(2.0 * gamma - 1.0));
    let d = x.powf(gamma) - y.powf(gamma);
    let rhs = d * d;
    (lhs - rhs) / lhs.abs().max(rhs.abs()).max(1.0)
}

/// Evaluate the three algebraic inequalities that underpin the Kato-type
/// bounds and the power-trick estimates, over a finite sample set.
///
/// Returns one entry per (inequality, profile) pair with its minimum
/// normalized margin; validity means every minimum is `>= -1e-12`.
pub fn check_scalar_inequalities(
    p: f64,
    l: f64,
    gamma: f64,
    samples: &[InequalitySample],
) -> Vec<InequalityMargin> {
    let mut out = Vec::new();
    for (name, h, dh) in convex_profiles() {
        let mut min = f64::INFINITY;
        for s in samples {
            min = min.min(pair_difference_margin(p, l, &h, &dh, s));
        }
        out.push(InequalityMargin {
            name: format!("pair-difference[{name}]"),
            min_margin: min,
            samples: samples.len(),
        });
    }
    for (name, h, dh) in increasing_profiles() {
        let mut min = f64::INFINITY;
        for s in samples {
            min = min.min(root_transform_margin(p, &h, &dh, s.a, s.b));
        }
        out.push(InequalityMargin {
            name: format!("root-transform[{name}]"),
            min_margin: min,
            samples: samples.len(),
        });
    }
    if gamma > 1.0 {
        let mut min = f64::INFINITY;
        for s in samples {
            min = min.min(power_difference_margin(gamma, s.a.abs(), s.b.abs()));
        }
        out.push(InequalityMargin {
            name: "power-difference".into(),
            min_margin: min,
            samples: samples.len(),
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Supersolution transform
// ---------------------------------------------------------------------------

/// The concave rescaling `Φ_ε = h̃_ε^{-1} ∘ h` built from
/// `h(t) = ∫_0^t f(σ)^{-1/(p-1)} dσ` and `h̃_ε = h / (1-ε)^{1/(p-1)}`.
///
/// For a solution `u` of the λ-problem, `Φ_ε(u)` is a supersolution of the
/// `(1-ε)λ`-problem; the transform satisfies `0 <= Φ_ε(t) <= t`, is
/// nondecreasing, concave and has slope at most 1.
pub struct SupersolutionTransform {
    nl: Nonlinearity,
    p: f64,
    eps: f64,
    /// `(1-ε)^{1/(p-1)}`
    shrink: f64,
}

impl SupersolutionTransform {
    /// Build the transform; fails with [`ScalarError::NotConvex`] if the
    /// convexity spot check of `f^{1/(p-1)}` does not pass.
    pub fn new(nl: &Nonlinearity, p: f64, eps: f64) -> Result<Self, ScalarError> {
        if !(p > 1.0) || !(eps > 0.0 && eps < 1.0) {
            return Err(ScalarError::ParameterOutOfRange(format!(
                "need p > 1 and eps in (0,1), got p={p}, eps={eps}"
            )));
        }
        check_growth_root_convexity(nl, p)?;
        Ok(Self {
            nl: nl.clone(),
            p,
            eps,
            shrink: (1.0 - eps).powf(1.0 / (p - 1.0)),
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `h(t) = ∫_0^t f(σ)^{-1/(p-1)} dσ`.
    fn reciprocal_growth_integral(&self, t: f64) -> f64 {
        let nl = self.nl.clone();
        let inv = 1.0 / (self.p - 1.0);
        quad::integrate(
            move |s| nl.value(s).powf(inv).recip(),
            0.0,
            t,
            quad::DEFAULT_ABS_TOL,
        )
    }

    /// Evaluate `Φ_ε(t)` for `t >= 0` by monotone bisection of `h` to an
    /// absolute tolerance of `1e-12`.
    pub fn apply(&self, t: f64) -> Result<f64, ScalarError> {
        if t < 0.0 {
            return Err(ScalarError::NegativeArgument(t));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let target = self.shrink * self.reciprocal_growth_integral(t);
        // grow the bracket geometrically; Φ_ε(t) <= t so it closes fast
        let mut hi = t.min(1.0);
        while self.reciprocal_growth_integral(hi) < target {
            hi = (hi * 2.0).min(t);
            if hi == t {
                break;
            }
        }
        let mut lo = 0.0;
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if self.reciprocal_growth_integral(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Slope `Φ_ε'(t) = (1-ε)^{1/(p-1)} g(Φ_ε(t)) / g(t)` with
    /// `g = f^{1/(p-1)}`.
    pub fn slope(&self, t: f64) -> Result<f64, ScalarError> {
        let phi = self.apply(t)?;
        let inv = 1.0 / (self.p - 1.0);
        Ok(self.shrink * self.nl.value(phi).powf(inv) / self.nl.value(t).powf(inv))
    }
}

/// Spot check that `f^{1/(p-1)}` is convex, by divided second differences on
/// a log-spaced grid.
fn check_growth_root_convexity(nl: &Nonlinearity, p: f64) -> Result<(), ScalarError> {
    let inv = 1.0 / (p - 1.0);
    let g = |t: f64| nl.value(t).powf(inv);
    let grid = log_grid(nl.finite_range().min(1e6), SPOT_CHECK_POINTS);
    for w in grid.windows(3) {
        let (t0, t1, t2) = (w[0], w[1], w[2]);
        let d01 = (g(t1) - g(t0)) / (t1 - t0);
        let d12 = (g(t2) - g(t1)) / (t2 - t1);
        if !d01.is_finite() || !d12.is_finite() {
            continue;
        }
        let dd = (d12 - d01) / (t2 - t0);
        let scale = (g(t2).abs() / (t2 - t0).powi(2)).max(1.0);
        if dd < -1e-8 * scale {
            return Err(ScalarError::NotConvex(t1));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn odd_power_examples() {
        assert_eq!(odd_power(0.0, 1.5), 0.0);
        assert_eq!(odd_power(-3.5, 2.0), -3.5);
        assert_eq!(smoothed_odd_power(3.0, 0.0, 2.0), 4.0);
        assert_eq!(smoothed_odd_power(2.0, 7.3, -3.5), -3.5);
        assert_eq!(smoothed_odd_power(1.5, 0.0, 0.0), 0.0);
    }

    #[test]
    fn derived_values() {
        let exp = Nonlinearity::exponential();
        let pow2 = Nonlinearity::power(2.0).unwrap();
        assert_eq!(eval_derived(&exp, 2.0, 0.0, Derived::Excess).unwrap(), 0.0);
        assert_eq!(eval_derived(&pow2, 2.0, 1.0, Derived::Value).unwrap(), 4.0);
        // ∫_0^1 (e^σ - 1)^0 e^{2σ} dσ = (e^2 - 1)/2
        let kappa = eval_derived(
            &exp,
            2.0,
            1.0,
            Derived::StabilityIntegral { gamma: 1.0 },
        )
        .unwrap();
        let closed = (2f64.exp() - 1.0) / 2.0;
        assert!((kappa - closed).abs() <= 1e-8 * closed);
    }

    #[test]
    fn derived_domain_errors() {
        let exp = Nonlinearity::exponential();
        assert!(eval_derived(&exp, 2.0, -1.0, Derived::Value).is_err());
        assert!(matches!(
            eval_derived(&exp, 2.0, 1.0, Derived::StabilityIntegral { gamma: 0.5 }),
            Err(ScalarError::GammaOutOfRange { .. })
        ));
    }

    #[test]
    fn stability_integral_is_nondecreasing() {
        let exp = Nonlinearity::exponential();
        let mut prev = 0.0;
        for k in 1..=8 {
            let t = 0.5 * k as f64;
            let v = eval_derived(&exp, 2.0, t, Derived::StabilityIntegral { gamma: 1.5 }).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn tau_of_builtin_families() {
        let exp = tau_limit(&Nonlinearity::exponential()).unwrap();
        assert!((exp.estimate - 1.0).abs() < 1e-10);
        assert!(!exp.samples.is_empty());
        let p3 = tau_limit(&Nonlinearity::power(3.0).unwrap()).unwrap();
        assert!((p3.estimate - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn custom_requires_positive_at_zero() {
        let r = Nonlinearity::custom(|t| t, |_| 1.0, |_| 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn custom_requires_monotone() {
        let r = Nonlinearity::custom(|t| 1.0 / (1.0 + t), |t| -1.0 / (1.0 + t).powi(2), |_| 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn inequality_suite_on_random_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut samples = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            samples.push(InequalitySample {
                a: rng.gen_range(-10.0..10.0),
                b: rng.gen_range(-10.0..10.0),
                alpha: rng.gen_range(0.0..10.0),
                beta: rng.gen_range(0.0..10.0),
            });
        }
        for &(p, l) in &[(1.5, 0.3), (2.0, 0.0), (3.0, 1.0)] {
            for m in check_scalar_inequalities(p, l, 2.0, &samples) {
                assert!(
                    m.min_margin >= -1e-12,
                    "{} violated at p={p}, l={l}: {}",
                    m.name,
                    m.min_margin
                );
            }
        }
    }

    #[test]
    fn power_difference_example() {
        // a=1, b=0, γ=2: 1 <= 4/3
        let margin = power_difference_margin(2.0, 1.0, 0.0);
        let expected = (4.0 / 3.0 - 1.0) / (4.0f64 / 3.0);
        assert!((margin - expected).abs() < 1e-12);
    }

    #[test]
    fn pair_difference_zero_at_equal_arguments() {
        let (_, h, dh) = convex_profiles().remove(0);
        let s = InequalitySample {
            a: 1.3,
            b: 1.3,
            alpha: 2.0,
            beta: 5.0,
        };
        assert_eq!(pair_difference_margin(1.5, 0.0, &h, &dh, &s), 0.0);
    }

    #[test]
    fn excess_root_convexity_spot_check() {
        // ψ = excess^{1/(p-1)} convex for exponential and power at p = 2
        for nl in [Nonlinearity::exponential(), Nonlinearity::power(3.0).unwrap()] {
            let g = |t: f64| nl.excess(t);
            let n = 200;
            let hstep = 10.0 / n as f64;
            for k in 1..n - 1 {
                let t = k as f64 * hstep;
                let dd = g(t + hstep) - 2.0 * g(t) + g(t - hstep);
                assert!(dd >= -1e-10);
            }
        }
    }

    #[test]
    fn transform_matches_exponential_closed_form() {
        let exp = Nonlinearity::exponential();
        // p = 2: Φ_ε(t) = -ln(1 - (1-ε)(1 - e^{-t}))
        let tr = SupersolutionTransform::new(&exp, 2.0, 0.5).unwrap();
        let got = tr.apply(3.0).unwrap();
        let want = -(1.0 - 0.5 * (1.0 - (-3.0f64).exp())).ln();
        assert!((want - 0.644_559_828_986_203_1).abs() < 1e-14);
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
        // general p: Φ_ε(t) = -(p-1) ln(1 - (1-ε)^{1/(p-1)} (1 - e^{-t/(p-1)}))
        let p = 3.0;
        let tr = SupersolutionTransform::new(&exp, p, 0.5).unwrap();
        let got = tr.apply(3.0).unwrap();
        let c = 0.5f64.powf(1.0 / (p - 1.0));
        let want = -(p - 1.0) * (1.0 - c * (1.0 - (-3.0 / (p - 1.0)).exp())).ln();
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
    }

    #[test]
    fn transform_basic_properties() {
        let exp = Nonlinearity::exponential();
        let tr = SupersolutionTransform::new(&exp, 2.0, 0.3).unwrap();
        assert_eq!(tr.apply(0.0).unwrap(), 0.0);
        let grid: Vec<f64> = (0..=60).map(|k| 0.1 * k as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&t| tr.apply(t).unwrap()).collect();
        for (k, w) in vals.windows(2).enumerate() {
            assert!(w[1] >= w[0] - 1e-12, "not monotone at {k}");
            let fd = (w[1] - w[0]) / 0.1;
            assert!(fd <= 1.0 + 1e-8, "slope {fd} exceeds 1");
        }
        for w in vals.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] <= 1e-8, "not concave");
        }
        for (t, v) in grid.iter().zip(&vals) {
            assert!(*v <= t + 1e-12 && *v >= -1e-12);
        }
        // ε -> 0 recovers the identity
        let tiny = SupersolutionTransform::new(&exp, 2.0, 1e-12).unwrap();
        let v = tiny.apply(2.0).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn transform_power_family_closed_form() {
        // f = (1+t)^m: h(t) = (1 - (1+t)^{1-a})/(a-1), a = m/(p-1)
        let m = 3.0;
        let p = 2.0;
        let nl = Nonlinearity::power(m).unwrap();
        let tr = SupersolutionTransform::new(&nl, p, 0.25).unwrap();
        let a = m / (p - 1.0);
        let c = 0.75f64.powf(1.0 / (p - 1.0));
        let t: f64 = 2.0;
        let h = (1.0 - (1.0 + t).powf(1.0 - a)) / (a - 1.0);
        let want = (1.0 - c * (a - 1.0) * h).powf(1.0 / (1.0 - a)) - 1.0;
        let got = tr.apply(t).unwrap();
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
    }

    #[test]
    fn transform_rejects_nonconvex_growth_root() {
        // f(t) = 1 + atan(t) is nondecreasing with f(0) = 1 but
        // f^{1/(p-1)} is strictly concave for large t at p = 2.
        let nl = Nonlinearity::custom(
            |t| 1.0 + t.atan(),
            |t| 1.0 / (1.0 + t * t),
            |t| -2.0 * t / (1.0 + t * t).powi(2),
        )
        .unwrap();
        assert!(matches!(
            SupersolutionTransform::new(&nl, 2.0, 0.5),
            Err(ScalarError::NotConvex(_))
        ));
    }
}
