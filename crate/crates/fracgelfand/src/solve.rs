//! Dirichlet solves for the discrete operator: damped Newton on the convex
//! energy for fixed right-hand sides, the monotone sub/supersolution
//! iteration for semilinear right-hand sides, and Kato-inequality margins on
//! computed solutions.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::accum::Accumulator;
use crate::mesh::KernelWeights;
use crate::operator::{
    apply_operator, assemble_linearized_form, discrete_seminorm_p, pairing, DiscreteFunction,
};
use crate::scalar::{odd_power, Nonlinearity};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no convergence after {iters} iterations (best residual {residual:.3e})")]
    NoConvergence {
        iters: usize,
        residual: f64,
        /// best iterate seen
        best: DiscreteFunction,
    },
    #[error("bad bracket: subsolution exceeds supersolution at node {index}")]
    BadBracket { index: usize },
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("linear algebra failure: {0}")]
    Factorization(String),
}

/// Options of the fixed-rhs Dirichlet solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Residual tolerance: stop when `||L u - h g||_inf <= tol * max(1, ||h g||_inf)`.
    pub tol: f64,
    /// Newton iteration cap.
    pub max_iter: usize,
    /// Jacobian smoothing for `p < 2`; `None` selects `1e-8 (1 + ||u||_inf)`.
    pub eps_reg: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            eps_reg: None,
        }
    }
}

const ARMIJO_SLOPE: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;

/// Energy of the fixed-rhs problem:
/// `E(u) = seminorm_p(u)/p - Σ_i h g_i u_i`; its unique minimizer solves
/// `L u = h g`.
pub fn linear_energy(kw: &KernelWeights, u: &DiscreteFunction, g: &DVector<f64>) -> f64 {
    let h = kw.spacing();
    let mut acc = Accumulator::new();
    for i in 0..kw.n() {
        acc.add(h * g[i] * u[i]);
    }
    discrete_seminorm_p(kw, u) / kw.p() - acc.value()
}

/// Plain weighted graph Laplacian (pair weights plus tail diagonal); equals
/// the operator matrix at `p = 2` and provides the warm-start proxy
/// otherwise.
fn graph_laplacian(kw: &KernelWeights) -> DMatrix<f64> {
    let n = kw.n();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let row = kw.pair_row(i);
        let mut diag = Accumulator::new();
        for (j, &w) in row.iter().enumerate() {
            if j != i {
                a[(i, j)] = -w;
                diag.add(w);
            }
        }
        diag.add(kw.tail(i));
        a[(i, i)] = diag.value();
    }
    a
}

fn cholesky_with_jitter(mut a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, DMatrix<f64>> {
    match Cholesky::new(a.clone()) {
        Some(c) => Ok(c),
        None => {
            let scale = (0..a.nrows())
                .map(|i| a[(i, i)].abs())
                .fold(1e-300, f64::max);
            let mu = 1e-12 * scale.max(1e-30);
            for i in 0..a.nrows() {
                a[(i, i)] += mu;
            }
            Cholesky::new(a.clone()).ok_or(a)
        }
    }
}

/// Residual of row `i` at trial value `x`:
/// `Σ_{j≠i} W_ij J(x - u_j) + T_i J(x) - (hg)_i`; strictly increasing in `x`.
fn row_residual(kw: &KernelWeights, u: &DiscreteFunction, hg: &DVector<f64>, i: usize, x: f64) -> f64 {
    let p = kw.p();
    let row = kw.pair_row(i);
    let mut acc = Accumulator::new();
    for (j, &w) in row.iter().enumerate() {
        if j != i {
            acc.add(w * odd_power(x - u[j], p));
        }
    }
    acc.add(kw.tail(i) * odd_power(x, p));
    acc.value() - hg[i]
}

/// One Gauss-Seidel sweep of exact coordinate root solves.
///
/// Each row residual is strictly increasing in its own coordinate, so a
/// safeguarded bisection drives it to roundoff. This resolves the kink
/// coordinates (equal neighboring values for `p < 2`) that a Newton step
/// can only oscillate around.
fn coordinate_sweep(kw: &KernelWeights, u: &mut DiscreteFunction, hg: &DVector<f64>) {
    let n = kw.n();
    for i in 0..n {
        let x0 = u[i];
        let r0 = row_residual(kw, u, hg, i, x0);
        if r0 == 0.0 {
            continue;
        }
        // expand a bracket in the descent direction of the residual
        let mut step = 1e-16 * (1.0 + x0.abs());
        let (mut lo, mut hi);
        if r0 > 0.0 {
            hi = x0;
            lo = x0 - step;
            let mut guard = 0;
            while row_residual(kw, u, hg, i, lo) > 0.0 {
                step *= 4.0;
                hi = lo;
                lo = x0 - step;
                guard += 1;
                if guard > 200 {
                    return;
                }
            }
        } else {
            lo = x0;
            hi = x0 + step;
            let mut guard = 0;
            while row_residual(kw, u, hg, i, hi) < 0.0 {
                step *= 4.0;
                lo = hi;
                hi = x0 + step;
                guard += 1;
                if guard > 200 {
                    return;
                }
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if row_residual(kw, u, hg, i, mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (rlo, rhi) = (
            row_residual(kw, u, hg, i, lo),
            row_residual(kw, u, hg, i, hi),
        );
        u[i] = if rlo.abs() <= rhi.abs() { lo } else { hi };
    }
}

/// Reusable solver for one set of kernel weights. At `p = 2` the operator is
/// linear and its Cholesky factor is cached; otherwise each solve runs damped
/// Newton with the linearized-form matrix and an Armijo line search on the
/// energy, polished by exact coordinate solves whenever Newton progress
/// slows near the kinks of the `p < 2` energy.
pub struct DirichletSolver<'k> {
    kw: &'k KernelWeights,
    linear: Option<Cholesky<f64, Dyn>>,
    proxy: Option<Cholesky<f64, Dyn>>,
}

impl<'k> DirichletSolver<'k> {
    pub fn new(kw: &'k KernelWeights) -> Self {
        let lap = graph_laplacian(kw);
        if kw.p() == 2.0 {
            let chol = Cholesky::new(lap).expect("graph Laplacian with tails is SPD");
            Self {
                kw,
                linear: Some(chol),
                proxy: None,
            }
        } else {
            let proxy = Cholesky::new(lap).expect("graph Laplacian with tails is SPD");
            Self {
                kw,
                linear: None,
                proxy: Some(proxy),
            }
        }
    }

    pub fn solve(
        &self,
        g: &DVector<f64>,
        opts: &SolveOptions,
        warm: Option<&DiscreteFunction>,
    ) -> Result<DiscreteFunction, SolveError> {
        let kw = self.kw;
        let n = kw.n();
        assert_eq!(g.len(), n, "shape mismatch");
        let hg = kw.spacing() * g;
        if let Some(chol) = &self.linear {
            // p = 2: one linear solve
            return Ok(chol.solve(&hg));
        }
        let p = kw.p();
        let rhs_scale = hg.amax().max(1.0);

        // warm start: energy-optimal rescaling of the graph-Laplacian proxy
        // solve, or the caller-provided iterate
        let mut u = match warm {
            Some(w) => w.clone(),
            None => {
                let v = self.proxy.as_ref().unwrap().solve(&hg);
                let s = discrete_seminorm_p(kw, &v);
                let r = pairing(&hg, &v);
                if s > 0.0 && r > 0.0 {
                    (r / s).powf(1.0 / (p - 1.0)) * v
                } else {
                    DVector::zeros(n)
                }
            }
        };

        // `eps_reg` seeds the Jacobian smoothing; the loop then continues it
        // downward with the residual. A fixed smoothing level stalls the
        // p < 2 endgame once true differences sink below it, while one that
        // collapses to zero makes the kink rows of the Hessian astronomical,
        // so the continuation is floored near the rounding scale of `u`.
        let start_eps = if p < 2.0 {
            opts.eps_reg.unwrap_or_else(|| 1e-8 * (1.0 + u.amax()))
        } else {
            0.0
        };
        let floor_eps = if p < 2.0 {
            1e-18 * (1.0 + u.amax())
        } else {
            0.0
        };
        let osc = u.max() - u.min();
        let mut eps = (1e-2 * (1.0 + osc)).max(start_eps);

        let mut best = u.clone();
        let mut best_res = f64::INFINITY;
        // once the energy can no longer resolve progress (its differences
        // sink below the floating-point noise floor) the line search hands
        // over to residual backtracking plus exact coordinate solves
        let mut endgame = false;
        for _iter in 0..opts.max_iter {
            let r = apply_operator(kw, &u) - &hg;
            let res = r.amax();
            if res < best_res {
                best_res = res;
                best = u.clone();
            }
            if res <= opts.tol * rhs_scale {
                return Ok(u);
            }
            let delta = assemble_linearized_form(kw, &u, eps)
                .ok()
                .and_then(|a| cholesky_with_jitter(a).ok())
                .map(|chol| chol.solve(&(-&r)));
            let mut progressed = false;
            if let Some(delta) = delta {
                let slope = pairing(&r, &delta);
                if slope < 0.0 {
                    if !endgame {
                        let e0 = linear_energy(kw, &u, g);
                        let noise = 1e-14 * (1.0 + e0.abs());
                        if -slope <= noise {
                            endgame = true;
                        } else {
                            let mut t = 1.0;
                            while t > 1e-18 {
                                let cand = &u + t * &delta;
                                if linear_energy(kw, &cand, g)
                                    <= e0 + ARMIJO_SLOPE * t * slope
                                {
                                    u = cand;
                                    progressed = true;
                                    break;
                                }
                                t *= ARMIJO_SHRINK;
                            }
                            if !progressed {
                                endgame = true;
                            }
                        }
                    }
                    if endgame {
                        // residual backtracking: monotone decrease of the
                        // sup-norm residual, resolvable far below the
                        // energy noise floor
                        let mut t = 1.0;
                        for _ in 0..40 {
                            let cand = &u + t * &delta;
                            let cres = (apply_operator(kw, &cand) - &hg).amax();
                            if cres <= (1.0 - ARMIJO_SLOPE * t) * res {
                                u = cand;
                                progressed = true;
                                break;
                            }
                            t *= ARMIJO_SHRINK;
                        }
                    }
                } else {
                    eps = (eps * 10.0).max(1e-14);
                }
            }
            // exact coordinate solves finish off the kink coordinates
            // (equal neighboring values for p < 2) that Newton steps can
            // only oscillate around at equal energy; they also take over
            // whenever a step bought little
            let res_after = (apply_operator(kw, &u) - &hg).amax();
            if endgame || !progressed || res_after > 0.7 * res {
                coordinate_sweep(kw, &mut u, &hg);
            }
            if eps > floor_eps {
                let res_now = (apply_operator(kw, &u) - &hg).amax();
                eps = (eps * 0.3).min(res_now.max(floor_eps)).max(floor_eps);
            }
        }
        let r = apply_operator(kw, &u) - &hg;
        if r.amax() <= opts.tol * rhs_scale {
            return Ok(u);
        }
        if r.amax() < best_res {
            best_res = r.amax();
            best = u;
        }
        Err(SolveError::NoConvergence {
            iters: opts.max_iter,
            residual: best_res,
            best,
        })
    }
}

/// Solve `L u = h g` by minimizing the strictly convex energy.
///
/// The returned solution satisfies
/// `||L u - h g||_inf <= opts.tol * max(1, ||h g||_inf)`.
pub fn solve_dirichlet(
    kw: &KernelWeights,
    g: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<DiscreteFunction, SolveError> {
    DirichletSolver::new(kw).solve(g, opts, None)
}

/// Options of the monotone semilinear iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterationOptions {
    /// Outer stopping tolerance on `||u_{j+1} - u_j||_inf`.
    pub tol: f64,
    /// Outer iteration cap.
    pub max_outer: usize,
    /// Sup-norm cap; exceeding it declares divergence.
    pub cap: f64,
    pub solver: SolveOptions,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_outer: 500,
            cap: 1e8,
            solver: SolveOptions::default(),
        }
    }
}

/// Outcome of [`monotone_iteration`].
#[derive(Debug, Clone)]
pub enum IterationOutcome {
    Converged {
        u: DiscreteFunction,
        outer_iters: usize,
        /// smallest componentwise increment observed across all steps;
        /// nonnegative up to solver accuracy
        min_increment: f64,
        /// final semilinear residual `||L u - h λ f(u)||_inf`
        residual: f64,
        /// sup norms of the iterates
        norms: Vec<f64>,
    },
    Diverged {
        iters: usize,
        norms: Vec<f64>,
        last: DiscreteFunction,
    },
}

impl IterationOutcome {
    pub fn is_converged(&self) -> bool {
        matches!(self, IterationOutcome::Converged { .. })
    }
}

/// Monotone iteration `L u_{j+1} = h λ f(u_j)` from the subsolution
/// `u_sub`, optionally bounded above by a known supersolution.
///
/// On convergence the iterates are componentwise nondecreasing (up to solver
/// accuracy) and the limit satisfies the semilinear residual test.
/// Divergence is declared when the sup norm exceeds `opts.cap` or the outer
/// cap is reached while the norms are still growing.
pub fn monotone_iteration(
    kw: &KernelWeights,
    nl: &Nonlinearity,
    lambda: f64,
    u_sub: &DiscreteFunction,
    u_super: Option<&DiscreteFunction>,
    opts: &IterationOptions,
) -> Result<IterationOutcome, SolveError> {
    let n = kw.n();
    assert_eq!(u_sub.len(), n, "shape mismatch");
    if let Some(sup) = u_super {
        for i in 0..n {
            if u_sub[i] > sup[i] {
                return Err(SolveError::BadBracket { index: i });
            }
        }
    }
    let solver = DirichletSolver::new(kw);
    let mut u = u_sub.clone();
    let mut norms = vec![u.amax()];
    let mut min_increment = f64::INFINITY;
    for j in 1..=opts.max_outer {
        let rhs = DVector::from_fn(n, |i, _| lambda * nl.value(u[i]));
        if !rhs.iter().all(|v| v.is_finite()) {
            return Ok(IterationOutcome::Diverged {
                iters: j,
                norms,
                last: u,
            });
        }
        let next = match solver.solve(&rhs, &opts.solver, Some(&u)) {
            Ok(v) => v,
            Err(SolveError::NoConvergence { best, .. }) => {
                // inner blow-up counts as divergence evidence
                return Ok(IterationOutcome::Diverged {
                    iters: j,
                    norms,
                    last: best,
                });
            }
            Err(e) => return Err(e),
        };
        let mut delta_max = 0.0f64;
        for i in 0..n {
            let d = next[i] - u[i];
            min_increment = min_increment.min(d);
            delta_max = delta_max.max(d.abs());
        }
        u = next;
        norms.push(u.amax());
        if !u.amax().is_finite() || u.amax() > opts.cap {
            return Ok(IterationOutcome::Diverged {
                iters: j,
                norms,
                last: u,
            });
        }
        if delta_max <= opts.tol {
            let rhs = DVector::from_fn(n, |i, _| lambda * nl.value(u[i]));
            let residual = (apply_operator(kw, &u) - kw.spacing() * &rhs).amax();
            return Ok(IterationOutcome::Converged {
                u,
                outer_iters: j,
                min_increment: if min_increment.is_finite() {
                    min_increment
                } else {
                    0.0
                },
                residual,
                norms,
            });
        }
    }
    Ok(IterationOutcome::Diverged {
        iters: opts.max_outer,
        norms,
        last: u,
    })
}

// ---------------------------------------------------------------------------
// Kato margins
// ---------------------------------------------------------------------------

/// A convex Lipschitz transform `Ψ` with `Ψ(0) = 0`, used to probe the
/// Kato-type inequality on computed solutions.
pub struct ConvexProbe {
    pub name: String,
    pub psi: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub dpsi: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    /// whether `Ψ''` is (essentially) bounded; probes without this flag are
    /// only admissible when the right-hand side has one sign
    pub bounded_curvature: bool,
}

/// The built-in probe family, scaled to stay Lipschitz on `[-range, range]`:
/// smoothed absolute values `√(ε² + t²) - ε`, the identity, and the clipped
/// squared positive part; plus a square-root cusp whose second derivative is
/// unbounded (admissible only for one-signed right-hand sides).
pub fn builtin_probes(range: f64) -> Vec<ConvexProbe> {
    let mut probes = Vec::new();
    for eps in [1.0, 0.1, 0.01] {
        probes.push(ConvexProbe {
            name: format!("smooth-abs[{eps}]"),
            psi: Box::new(move |t: f64| (eps * eps + t * t).sqrt() - eps),
            dpsi: Box::new(move |t: f64| t / (eps * eps + t * t).sqrt()),
            bounded_curvature: true,
        });
    }
    probes.push(ConvexProbe {
        name: "identity".into(),
        psi: Box::new(|t| t),
        dpsi: Box::new(|_| 1.0),
        bounded_curvature: true,
    });
    let m = range.max(1.0);
    probes.push(ConvexProbe {
        name: "clipped-square".into(),
        psi: Box::new(move |t: f64| {
            let t = t.max(0.0);
            if t <= m {
                t * t
            } else {
                m * m + 2.0 * m * (t - m)
            }
        }),
        dpsi: Box::new(move |t: f64| {
            if t <= 0.0 {
                0.0
            } else {
                (2.0 * t).min(2.0 * m)
            }
        }),
        bounded_curvature: true,
    });
    probes.push(ConvexProbe {
        name: "sqrt-cusp".into(),
        psi: Box::new(move |t: f64| {
            let t = t.max(0.0);
            if t <= m {
                2.0 / 3.0 * t.powf(1.5)
            } else {
                2.0 / 3.0 * m.powf(1.5) + m.sqrt() * (t - m)
            }
        }),
        dpsi: Box::new(move |t: f64| {
            if t <= 0.0 {
                0.0
            } else {
                t.min(m).sqrt()
            }
        }),
        bounded_curvature: false,
    });
    probes
}

/// Margin of one `(Ψ, ψ)` combination:
/// `Σ_i |Ψ'(u_i)|^{p-2} Ψ'(u_i) h g_i ψ_i - <L Ψ(u), ψ>`.
#[derive(Debug, Clone)]
pub struct KatoMargin {
    pub probe: String,
    pub test: String,
    pub margin: f64,
    /// characteristic size of the two compared terms
    pub scale: f64,
}

/// Nonnegative discrete test functions used by [`verify_kato`].
pub fn builtin_test_functions(n: usize) -> Vec<(String, DVector<f64>)> {
    let mut tests = Vec::new();
    tests.push(("ones".into(), DVector::from_element(n, 1.0)));
    for (label, idx) in [("hat-quarter", n / 4), ("hat-center", n / 2), ("hat-3quarter", 3 * n / 4)]
    {
        let mut e = DVector::zeros(n);
        e[idx] = 1.0;
        tests.push((label.into(), e));
    }
    let bump = DVector::from_fn(n, |i, _| {
        let x = (i as f64 + 1.0) / (n as f64 + 1.0);
        x * (1.0 - x)
    });
    tests.push(("parabola".into(), bump));
    tests
}

/// Check each convex probe against each nonnegative test function on a
/// solution `u` of `L u = h g`.
///
/// Probes are spot-checked for convexity, Lipschitz bounds and `Ψ(0) = 0`
/// on the range of `u`; test functions must be nonnegative.
pub fn verify_kato(
    kw: &KernelWeights,
    u: &DiscreteFunction,
    g: &DVector<f64>,
    probes: &[ConvexProbe],
    tests: &[(String, DVector<f64>)],
) -> Result<Vec<KatoMargin>, SolveError> {
    let n = kw.n();
    let p = kw.p();
    let h = kw.spacing();
    let signed = g.iter().any(|&v| v < 0.0) && g.iter().any(|&v| v > 0.0);
    let lo = u.min().min(0.0);
    let hi = u.max().max(0.0);
    for probe in probes {
        check_probe(probe, lo, hi)?;
    }
    for (name, psi) in tests {
        if psi.iter().any(|&v| v < 0.0) {
            return Err(SolveError::PreconditionFailed(format!(
                "test function {name} has a negative entry"
            )));
        }
    }
    let mut out = Vec::new();
    for probe in probes {
        if signed && !probe.bounded_curvature {
            continue;
        }
        let psu = DVector::from_fn(n, |i, _| (probe.psi)(u[i]));
        let lpsu = apply_operator(kw, &psu);
        for (name, psi) in tests {
            let mut lhs = Accumulator::new();
            for i in 0..n {
                lhs.add(odd_power((probe.dpsi)(u[i]), p) * h * g[i] * psi[i]);
            }
            let rhs = pairing(&lpsu, psi);
            let lhs = lhs.value();
            out.push(KatoMargin {
                probe: probe.name.clone(),
                test: name.clone(),
                margin: lhs - rhs,
                scale: lhs.abs().max(rhs.abs()).max(1.0),
            });
        }
    }
    Ok(out)
}

fn check_probe(probe: &ConvexProbe, lo: f64, hi: f64) -> Result<(), SolveError> {
    let z = (probe.psi)(0.0);
    if z.abs() > 1e-14 {
        return Err(SolveError::PreconditionFailed(format!(
            "probe {}: Ψ(0) = {z} != 0",
            probe.name
        )));
    }
    let k = 256;
    let span = (hi - lo).max(1e-6);
    let step = span / k as f64;
    let mut prev_slope = f64::NEG_INFINITY;
    for j in 0..k {
        let t0 = lo + j as f64 * step;
        let t1 = t0 + step;
        let slope = ((probe.psi)(t1) - (probe.psi)(t0)) / step;
        if !slope.is_finite() {
            return Err(SolveError::PreconditionFailed(format!(
                "probe {}: not Lipschitz near t = {t0}",
                probe.name
            )));
        }
        if slope < prev_slope - 1e-10 * slope.abs().max(1.0) {
            return Err(SolveError::PreconditionFailed(format!(
                "probe {}: not convex near t = {t0}",
                probe.name
            )));
        }
        prev_slope = slope;
    }
    Ok(())
}
