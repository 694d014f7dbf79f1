//! Minimal-solution branch continuation: trace λ ↦ u_λ, bracket the
//! extremal parameter λ*, and extrapolate the extremal function.

use nalgebra::DVector;
use thiserror::Error;

use crate::accum::Accumulator;
use crate::mesh::KernelWeights;
use crate::operator::{discrete_seminorm_p, DiscreteFunction};
use crate::scalar::Nonlinearity;
use crate::solve::{monotone_iteration, IterationOptions, IterationOutcome, SolveError};

#[derive(Debug, Error)]
pub enum BranchError {
    #[error("lambda grid must be strictly increasing and positive")]
    BadGrid,
    #[error("pointwise monotonicity violated between consecutive branch points ({0:.3e})")]
    MonotonicityViolated(f64),
    #[error("no diverging lambda found below the hard cap {cap:.3e}")]
    ExpansionFailed { cap: f64 },
    #[error("no converging lambda found above {floor:.3e}")]
    ShrinkFailed { floor: f64 },
    #[error("need at least {need} converged points near the bracket, have {have}")]
    InsufficientPoints { have: usize, need: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// One computed point of the minimal branch.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub lambda: f64,
    pub u: DiscreteFunction,
    pub sup_norm: f64,
    /// p-th power of the discrete Gagliardo seminorm
    pub seminorm_p: f64,
    /// semilinear energy `seminorm_p/p - λ Σ_i h F(u_i)` with `F` the
    /// antiderivative of the reaction
    pub energy: f64,
    /// filled in by the stability analysis when requested
    pub stability_ratio: Option<f64>,
    pub outer_iters: usize,
    pub converged: bool,
}

pub type Branch = Vec<BranchPoint>;

/// Semilinear energy of a state at parameter `lambda`.
pub fn semilinear_energy(
    kw: &KernelWeights,
    nl: &Nonlinearity,
    lambda: f64,
    u: &DiscreteFunction,
) -> f64 {
    let h = kw.spacing();
    let mut acc = Accumulator::new();
    for i in 0..kw.n() {
        acc.add(h * nl.antiderivative(u[i]));
    }
    discrete_seminorm_p(kw, u) / kw.p() - lambda * acc.value()
}

fn make_point(
    kw: &KernelWeights,
    nl: &Nonlinearity,
    lambda: f64,
    u: DiscreteFunction,
    outer_iters: usize,
    converged: bool,
) -> BranchPoint {
    let sup_norm = u.amax();
    let seminorm_p = discrete_seminorm_p(kw, &u);
    let energy = semilinear_energy(kw, nl, lambda, &u);
    BranchPoint {
        lambda,
        u,
        sup_norm,
        seminorm_p,
        energy,
        stability_ratio: None,
        outer_iters,
        converged,
    }
}

/// Trace the minimal branch over a strictly increasing λ grid.
///
/// Each point is computed by the monotone iteration started from the
/// previous converged solution (a subsolution at the larger λ since the
/// reaction is positive), which preserves minimality and accelerates
/// convergence; pass `warm_start = false` to restart from zero at every λ.
/// A diverged point is recorded and terminates the trace. Pointwise
/// monotonicity along consecutive converged points is enforced with slack
/// `1e-9`.
pub fn trace_branch(
    kw: &KernelWeights,
    nl: &Nonlinearity,
    lambdas: &[f64],
    warm_start: bool,
    opts: &IterationOptions,
) -> Result<Branch, BranchError> {
    if lambdas.windows(2).any(|w| w[0] >= w[1]) || lambdas.first().map(|&l| l <= 0.0) == Some(true)
    {
        return Err(BranchError::BadGrid);
    }
    let n = kw.n();
    let mut branch = Branch::new();
    let mut sub = DVector::zeros(n);
    for &lambda in lambdas {
        let start = if warm_start {
            sub.clone()
        } else {
            DVector::zeros(n)
        };
        match monotone_iteration(kw, nl, lambda, &start, None, opts)? {
            IterationOutcome::Converged { u, outer_iters, .. } => {
                if let Some(prev) = branch.iter().rev().find(|bp: &&BranchPoint| bp.converged) {
                    let mut worst = 0.0f64;
                    for i in 0..n {
                        worst = worst.max(prev.u[i] - u[i]);
                    }
                    if worst > 1e-9 {
                        return Err(BranchError::MonotonicityViolated(worst));
                    }
                }
                sub = u.clone();
                branch.push(make_point(kw, nl, lambda, u, outer_iters, true));
            }
            IterationOutcome::Diverged { iters, last, .. } => {
                branch.push(make_point(kw, nl, lambda, last, iters, false));
                break;
            }
        }
    }
    Ok(branch)
}

/// Bracket around the extremal parameter.
#[derive(Debug, Clone)]
pub struct LambdaStarBracket {
    /// largest λ with a converged minimal solution
    pub lambda_lo: f64,
    /// smallest λ with a diverged iteration
    pub lambda_hi: f64,
    /// minimal solution cached at `lambda_lo`
    pub u_lo: DiscreteFunction,
    /// every verdict computed on the way, as `(lambda, converged)`
    pub verdicts: Vec<(f64, bool)>,
}

impl LambdaStarBracket {
    pub fn width(&self) -> f64 {
        self.lambda_hi - self.lambda_lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lambda_lo + self.lambda_hi)
    }

    /// Cached verdicts must be monotone: no diverged λ below a converged λ.
    pub fn verdicts_monotone(&self) -> bool {
        let largest_conv = self
            .verdicts
            .iter()
            .filter(|(_, c)| *c)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let smallest_div = self
            .verdicts
            .iter()
            .filter(|(_, c)| !*c)
            .map(|(l, _)| *l)
            .fold(f64::INFINITY, f64::min);
        largest_conv < smallest_div
    }
}

/// Options of the λ* search.
#[derive(Debug, Clone, Copy)]
pub struct LambdaStarOptions {
    /// stop when `lambda_hi - lambda_lo <= tol_rel * lambda_lo`
    pub tol_rel: f64,
    /// first λ probed
    pub initial: f64,
    /// geometric expansion factor
    pub expansion: f64,
    /// hard cap: failing to find a diverged λ below it signals a modeling
    /// error, since the extremal parameter is finite
    pub cap: f64,
    pub iteration: IterationOptions,
}

impl Default for LambdaStarOptions {
    fn default() -> Self {
        Self {
            tol_rel: 1e-3,
            initial: 1.0,
            expansion: 2.0,
            cap: 1e6,
            iteration: IterationOptions::default(),
        }
    }
}

/// Bracket λ* by geometric expansion followed by bisection.
///
/// Converged solutions are cached and reused as warm-start subsolutions at
/// larger λ, which keeps the verdict function monotone by construction.
pub fn estimate_lambda_star(
    kw: &KernelWeights,
    nl: &Nonlinearity,
    opts: &LambdaStarOptions,
) -> Result<LambdaStarBracket, BranchError> {
    let n = kw.n();
    let mut verdicts = Vec::new();
    let zero = DVector::zeros(n);
    let mut probe = |lambda: f64,
                     sub: &DiscreteFunction,
                     verdicts: &mut Vec<(f64, bool)>|
     -> Result<Option<DiscreteFunction>, BranchError> {
        let out = monotone_iteration(kw, nl, lambda, sub, None, &opts.iteration)?;
        match out {
            IterationOutcome::Converged { u, .. } => {
                verdicts.push((lambda, true));
                Ok(Some(u))
            }
            IterationOutcome::Diverged { .. } => {
                verdicts.push((lambda, false));
                Ok(None)
            }
        }
    };

    // find a converged lambda_lo
    let mut lambda = opts.initial;
    let mut lo = None;
    let floor = 1e-12;
    while lambda > floor {
        if let Some(u) = probe(lambda, &zero, &mut verdicts)? {
            lo = Some((lambda, u));
            break;
        }
        lambda /= opts.expansion;
    }
    let (mut lambda_lo, mut u_lo) = lo.ok_or(BranchError::ShrinkFailed { floor })?;

    // expand geometrically until divergence
    let mut lambda_hi = None;
    let mut trial = lambda_lo * opts.expansion;
    while trial <= opts.cap {
        match probe(trial, &u_lo, &mut verdicts)? {
            Some(u) => {
                lambda_lo = trial;
                u_lo = u;
                trial *= opts.expansion;
            }
            None => {
                lambda_hi = Some(trial);
                break;
            }
        }
    }
    let mut lambda_hi = lambda_hi.ok_or(BranchError::ExpansionFailed { cap: opts.cap })?;

    // bisect
    while lambda_hi - lambda_lo > opts.tol_rel * lambda_lo {
        let mid = 0.5 * (lambda_lo + lambda_hi);
        match probe(mid, &u_lo, &mut verdicts)? {
            Some(u) => {
                lambda_lo = mid;
                u_lo = u;
            }
            None => lambda_hi = mid,
        }
    }
    Ok(LambdaStarBracket {
        lambda_lo,
        lambda_hi,
        u_lo,
        verdicts,
    })
}

/// Extremal-function estimate extrapolated from the last converged branch
/// points.
#[derive(Debug, Clone)]
pub struct ExtremalEstimate {
    /// last converged minimal solution
    pub u_last: DiscreteFunction,
    /// per-node extrapolation of λ ↦ u_λ(x) at the bracket's lower edge
    pub u_extrapolated: DiscreteFunction,
    /// sup norms of the trailing converged points (up to five)
    pub sup_norm_trend: Vec<f64>,
    /// seminorm powers of the trailing converged points (up to five)
    pub seminorm_trend: Vec<f64>,
    /// max/min ratio of `sup_norm_trend`
    pub sup_norm_spread: f64,
    /// max/min ratio of `seminorm_trend`
    pub seminorm_spread: f64,
}

/// Extrapolate the extremal function from a traced branch toward the λ*
/// bracket.
///
/// Requires at least three converged points with λ within 10% of the
/// bracket's lower edge. A bounded trend of the seminorm supports energy
/// regularity of the extremal function, a bounded sup-norm trend supports
/// boundedness.
pub fn extrapolate_extremal(
    branch: &Branch,
    bracket: &LambdaStarBracket,
) -> Result<ExtremalEstimate, BranchError> {
    let close: Vec<&BranchPoint> = branch
        .iter()
        .filter(|bp| bp.converged && bp.lambda >= 0.9 * bracket.lambda_lo)
        .collect();
    if close.len() < 3 {
        return Err(BranchError::InsufficientPoints {
            have: close.len(),
            need: 3,
        });
    }
    let last3 = &close[close.len() - 3..];
    let target = bracket.lambda_lo;
    let n = last3[0].u.len();
    // per-node quadratic Lagrange extrapolation in λ
    let (l0, l1, l2) = (last3[0].lambda, last3[1].lambda, last3[2].lambda);
    let w0 = (target - l1) * (target - l2) / ((l0 - l1) * (l0 - l2));
    let w1 = (target - l0) * (target - l2) / ((l1 - l0) * (l1 - l2));
    let w2 = (target - l0) * (target - l1) / ((l2 - l0) * (l2 - l1));
    let u_extrapolated = DVector::from_fn(n, |i, _| {
        w0 * last3[0].u[i] + w1 * last3[1].u[i] + w2 * last3[2].u[i]
    });
    let trailing: Vec<&&BranchPoint> = close.iter().rev().take(5).collect();
    let sup_norm_trend: Vec<f64> = trailing.iter().rev().map(|bp| bp.sup_norm).collect();
    let seminorm_trend: Vec<f64> = trailing.iter().rev().map(|bp| bp.seminorm_p).collect();
    let spread = |v: &[f64]| {
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    };
    Ok(ExtremalEstimate {
        u_last: close.last().unwrap().u.clone(),
        u_extrapolated,
        sup_norm_spread: spread(&sup_norm_trend),
        seminorm_spread: spread(&seminorm_trend),
        sup_norm_trend,
        seminorm_trend,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    fn setup(n: usize) -> (KernelWeights, Nonlinearity) {
        let kw = KernelWeights::build(Mesh::new(-1.0, 1.0, n).unwrap(), 0.5, 2.0).unwrap();
        (kw, Nonlinearity::exponential())
    }

    #[test]
    fn empty_grid_gives_empty_branch() {
        let (kw, nl) = setup(16);
        let b = trace_branch(&kw, &nl, &[], true, &IterationOptions::default()).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn bad_grid_rejected() {
        let (kw, nl) = setup(16);
        assert!(matches!(
            trace_branch(&kw, &nl, &[0.5, 0.4], true, &IterationOptions::default()),
            Err(BranchError::BadGrid)
        ));
        assert!(matches!(
            trace_branch(&kw, &nl, &[-0.5, 0.4], true, &IterationOptions::default()),
            Err(BranchError::BadGrid)
        ));
    }

    #[test]
    fn tiny_lambda_point_is_small() {
        let (kw, nl) = setup(32);
        let b = trace_branch(&kw, &nl, &[1e-4], true, &IterationOptions::default()).unwrap();
        assert_eq!(b.len(), 1);
        assert!(b[0].converged);
        assert!(b[0].sup_norm < 1e-2);
    }

    #[test]
    fn sup_norm_increases_along_branch() {
        let (kw, nl) = setup(32);
        let lambdas: Vec<f64> = (1..=8).map(|k| 0.1 * k as f64).collect();
        let b = trace_branch(&kw, &nl, &lambdas, true, &IterationOptions::default()).unwrap();
        let conv: Vec<&BranchPoint> = b.iter().filter(|bp| bp.converged).collect();
        assert!(conv.len() >= 4);
        for w in conv.windows(2) {
            assert!(w[1].sup_norm > w[0].sup_norm);
        }
    }

    #[test]
    fn minimality_spot_check() {
        // re-running from zero at a converged λ returns the same solution
        let (kw, nl) = setup(32);
        let lambdas = [0.2, 0.4, 0.6];
        let b = trace_branch(&kw, &nl, &lambdas, true, &IterationOptions::default()).unwrap();
        let cold = trace_branch(&kw, &nl, &[0.6], false, &IterationOptions::default()).unwrap();
        let d = (&b[2].u - &cold[0].u).amax();
        assert!(d <= 10.0 * IterationOptions::default().tol, "drift {d}");
    }

    #[test]
    fn bracket_for_exponential() {
        let (kw, nl) = setup(32);
        let opts = LambdaStarOptions {
            tol_rel: 1e-2,
            ..Default::default()
        };
        let br = estimate_lambda_star(&kw, &nl, &opts).unwrap();
        assert!(br.lambda_lo > 0.0 && br.lambda_lo < br.lambda_hi);
        assert!(br.width() <= 1e-2 * br.lambda_lo);
        assert!(br.verdicts_monotone());
    }

    #[test]
    fn extrapolation_needs_three_points() {
        let (kw, nl) = setup(16);
        let opts = LambdaStarOptions {
            tol_rel: 5e-2,
            ..Default::default()
        };
        let br = estimate_lambda_star(&kw, &nl, &opts).unwrap();
        let two = trace_branch(
            &kw,
            &nl,
            &[0.97 * br.lambda_lo, 0.99 * br.lambda_lo],
            true,
            &IterationOptions::default(),
        )
        .unwrap();
        assert!(matches!(
            extrapolate_extremal(&two, &br),
            Err(BranchError::InsufficientPoints { have: 2, need: 3 })
        ));
    }

    #[test]
    fn extrapolation_trend_bounded_for_power_reaction() {
        // power reaction in a regime where the extremal function stays
        // bounded: the trailing sup norms vary by well under 20%
        let kw = KernelWeights::build(Mesh::new(-1.0, 1.0, 32).unwrap(), 0.5, 2.0).unwrap();
        let nl = Nonlinearity::power(3.0).unwrap();
        let opts = LambdaStarOptions::default();
        let br = estimate_lambda_star(&kw, &nl, &opts).unwrap();
        let lambdas: Vec<f64> = (0..5)
            .map(|k| br.lambda_lo * (0.92 + 0.02 * k as f64))
            .collect();
        let b = trace_branch(&kw, &nl, &lambdas, true, &IterationOptions::default()).unwrap();
        let est = extrapolate_extremal(&b, &br).unwrap();
        assert!(est.sup_norm_spread <= 1.2, "spread {}", est.sup_norm_spread);
        assert!(est.seminorm_spread <= 1.5);
        assert!(est.u_extrapolated.amax() >= est.u_last.amax() - 1e-9);
    }
}
