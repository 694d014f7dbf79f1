//! Stability quadratic form of computed solutions: the pencil ratio between
//! the linearized nonlocal form and the reaction weighting, and the
//! finite-difference cross-check against the cutoff energy.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::accum::Accumulator;
use crate::mesh::KernelWeights;
use crate::operator::{
    assemble_linearized_form, discrete_seminorm_p, stability_form_value, DiscreteFunction,
    OperatorError,
};
use crate::scalar::Nonlinearity;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("reaction weighting is singular: λ f'(u_i) = 0 at node {index}")]
    SingularB { index: usize },
    #[error("regularization eps_cap must be positive for p = {p} < 2")]
    NeedsRegularization { p: f64 },
    #[error("bad test function: u - γ_max φ goes negative at node {index}")]
    BadTestFunction { index: usize },
    #[error("for p < 2 the finite-difference check accepts only multiples of u")]
    NotProportional,
    #[error("eigenvalue iteration failed to converge after {0} steps")]
    EigenStalled(usize),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// The pair of matrices realizing the second-variation quadratic form: the
/// linearized nonlocal form `A` and the diagonal reaction weighting
/// `B = diag(h λ f'(u_i))`.
#[derive(Debug, Clone)]
pub struct StabilityForm {
    pub a: DMatrix<f64>,
    pub b_diag: DVector<f64>,
    pub eps_cap: f64,
    pub p: f64,
    pub lambda: f64,
}

/// Assemble the stability form at a state `u`.
///
/// `eps_cap` regularizes the kernel weighting and is required positive for
/// `p < 2`; pass 0 for `p >= 2` to get the exact form.
pub fn stability_form(
    kw: &KernelWeights,
    u: &DiscreteFunction,
    nl: &Nonlinearity,
    lambda: f64,
    eps_cap: f64,
) -> Result<StabilityForm, StabilityError> {
    let p = kw.p();
    if p < 2.0 && eps_cap <= 0.0 {
        return Err(StabilityError::NeedsRegularization { p });
    }
    let h = kw.spacing();
    let n = kw.n();
    let mut b_diag = DVector::zeros(n);
    for i in 0..n {
        let w = h * lambda * nl.deriv(u[i]);
        if !(w > 0.0) {
            return Err(StabilityError::SingularB { index: i });
        }
        b_diag[i] = w;
    }
    let a = assemble_linearized_form(kw, u, eps_cap)?;
    Ok(StabilityForm {
        a,
        b_diag,
        eps_cap,
        p,
        lambda,
    })
}

/// Smallest eigenvalue of the pencil `(A, B)` with `B` diagonal positive,
/// by a dense symmetric eigendecomposition of `B^{-1/2} A B^{-1/2}`.
///
/// This is the reference route used to validate the iterative solver.
pub fn dense_smallest_pencil_eigenvalue(
    a: &DMatrix<f64>,
    b_diag: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let n = a.nrows();
    let scale = DVector::from_fn(n, |i, _| 1.0 / b_diag[i].sqrt());
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= scale[i] * scale[j];
        }
    }
    // enforce exact symmetry against rounding
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut k_min = 0;
    for k in 1..n {
        if eig.eigenvalues[k] < eig.eigenvalues[k_min] {
            k_min = k;
        }
    }
    let phi = DVector::from_fn(n, |i, _| eig.eigenvectors[(i, k_min)] * scale[i]);
    (eig.eigenvalues[k_min], phi)
}

fn b_inner(b: &DVector<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let mut acc = Accumulator::new();
    for i in 0..x.len() {
        acc.add(b[i] * x[i] * y[i]);
    }
    acc.value()
}

/// Smallest pencil eigenvalue by inverse iteration with `B`-inner products,
/// started from the `B`-normalized all-ones vector; relative tolerance
/// `1e-8` on the Rayleigh quotient.
fn iterative_smallest_pencil_eigenvalue(
    a: &DMatrix<f64>,
    b_diag: &DVector<f64>,
) -> Result<(f64, DVector<f64>, usize), StabilityError> {
    let n = a.nrows();
    // shift by δ B to keep the factor positive definite even when A is
    // singular positive semidefinite; the pencil eigenvalue shifts by δ
    let trace_ratio = (0..n).map(|i| a[(i, i)] / b_diag[i]).sum::<f64>() / n as f64;
    let delta = (1e-12 * trace_ratio.abs()).max(1e-300);
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] += delta * b_diag[i];
    }
    let chol = Cholesky::new(shifted).ok_or(StabilityError::EigenStalled(0))?;

    let mut x = DVector::from_element(n, 1.0);
    let norm = b_inner(b_diag, &x, &x).sqrt();
    x /= norm;
    let mut rho_prev = f64::INFINITY;
    let max_iter = 20_000;
    for k in 1..=max_iter {
        let bx = DVector::from_fn(n, |i, _| b_diag[i] * x[i]);
        let y = chol.solve(&bx);
        let ynorm = b_inner(b_diag, &y, &y).sqrt();
        let y = y / ynorm;
        // Rayleigh quotient of the shifted pencil
        let ay = {
            let mut v = DVector::zeros(n);
            for i in 0..n {
                let mut acc = Accumulator::new();
                for j in 0..n {
                    acc.add(a[(i, j)] * y[j]);
                }
                v[i] = acc.value();
            }
            v
        };
        let rho = b_inner(b_diag, &y, &y).recip() * {
            let mut acc = Accumulator::new();
            for i in 0..n {
                acc.add(y[i] * ay[i]);
            }
            acc.value()
        };
        x = y;
        if k >= 3 && (rho - rho_prev).abs() <= 1e-8 * rho.abs().max(1e-300) {
            return Ok((rho, x, k));
        }
        rho_prev = rho;
    }
    Err(StabilityError::EigenStalled(max_iter))
}

/// Result of [`stability_ratio`].
#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// `min_φ (φᵀ A φ)/(φᵀ B φ)`
    pub rho: f64,
    /// minimizing test vector
    pub phi_min: DVector<f64>,
    /// ratio on the span of the built-in Lipschitz transforms of `u`,
    /// honoring the constrained test space used for `p < 2`
    pub rho_constrained: f64,
    /// iterations of the inverse iteration
    pub iterations: usize,
    /// `rho >= 1 - 1e-6`
    pub stable: bool,
}

/// Built-in 8-member Lipschitz family whose compositions with `u` span the
/// constrained test space surrogate.
fn lipschitz_basis(u: &DiscreteFunction) -> DMatrix<f64> {
    let n = u.len();
    let umax = u.amax().max(1e-12);
    let mut sorted: Vec<f64> = u.iter().cloned().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| sorted[(q * (n - 1) as f64) as usize].max(1e-12 * umax);
    let profiles: Vec<Box<dyn Fn(f64) -> f64>> = vec![
        Box::new(|t: f64| t),
        Box::new(move |t: f64| t / (1.0 + t / umax)),
        Box::new(move |t: f64| 1.0 - (-t / umax).exp()),
        Box::new(move |t: f64| t * (-t / umax).exp()),
        Box::new(move |t: f64| t * t / (umax + t)),
        Box::new({
            let c = quantile(0.25);
            move |t: f64| t.min(c)
        }),
        Box::new({
            let c = quantile(0.5);
            move |t: f64| t.min(c)
        }),
        Box::new({
            let c = quantile(0.75);
            move |t: f64| t.min(c)
        }),
    ];
    DMatrix::from_fn(n, profiles.len(), |i, k| profiles[k](u[i]))
}

/// Smallest generalized eigenvalue restricted to the column span of `v`.
fn subspace_pencil_minimum(a: &DMatrix<f64>, b_diag: &DVector<f64>, v: &DMatrix<f64>) -> f64 {
    let n = v.nrows();
    let m = v.ncols();
    let av = a * v;
    let mut bv = DMatrix::zeros(n, m);
    for i in 0..n {
        for k in 0..m {
            bv[(i, k)] = b_diag[i] * v[(i, k)];
        }
    }
    let ar = v.transpose() * av;
    let br = v.transpose() * bv;
    // generalized symmetric reduction via Cholesky of the small Gram matrix
    let chol = match Cholesky::new(br.clone()) {
        Some(c) => c,
        None => {
            // drop near-dependent columns by jittering
            let mut brj = br;
            for i in 0..m {
                brj[(i, i)] *= 1.0 + 1e-10;
            }
            match Cholesky::new(brj) {
                Some(c) => c,
                None => return f64::INFINITY,
            }
        }
    };
    let linv = chol.l().try_inverse().expect("triangular inverse");
    let mut small = &linv * ar * linv.transpose();
    for i in 0..m {
        for j in 0..i {
            let v = 0.5 * (small[(i, j)] + small[(j, i)]);
            small[(i, j)] = v;
            small[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(small);
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Stability ratio `ρ = min_φ (φᵀAφ)/(φᵀBφ)` of a solution, with the
/// constrained-subspace surrogate reported alongside.
///
/// The verdict `stable` is `ρ >= 1 - 1e-6`. For `p < 2`, `eps_cap`
/// regularizes the form and the constrained ratio honors the test-space
/// restriction `|φ(x) - φ(y)| <= C |u(x) - u(y)|`.
pub fn stability_ratio(
    kw: &KernelWeights,
    u: &DiscreteFunction,
    nl: &Nonlinearity,
    lambda: f64,
    eps_cap: f64,
) -> Result<StabilityReport, StabilityError> {
    let form = stability_form(kw, u, nl, lambda, eps_cap)?;
    let (rho, phi_min, iterations) =
        iterative_smallest_pencil_eigenvalue(&form.a, &form.b_diag)?;
    let basis = lipschitz_basis(u);
    let rho_constrained = subspace_pencil_minimum(&form.a, &form.b_diag, &basis);
    Ok(StabilityReport {
        rho,
        phi_min,
        rho_constrained,
        iterations,
        stable: rho >= 1.0 - 1e-6,
    })
}

/// Default regularization for the `p < 2` stability form:
/// `1e-6 (1 + osc(u))`.
pub fn default_eps_cap(p: f64, u: &DiscreteFunction) -> f64 {
    if p < 2.0 {
        1e-6 * (1.0 + (u.max() - u.min()))
    } else {
        0.0
    }
}

/// Report of [`second_difference_check`]: the cutoff energy along the ray
/// `γ ↦ u - γ φ` against the assembled quadratic form.
#[derive(Debug, Clone)]
pub struct SecondDifferenceReport {
    /// smallest value of `K(γ) - K(0)` over the γ grid, normalized by
    /// `max(1, |K(0)|)`; nonnegative up to `1e-10` when `u` minimizes the
    /// cutoff energy
    pub min_excess: f64,
    /// central second difference of `K` at 0
    pub second_difference: f64,
    /// `φᵀ(A - B)φ`
    pub form_value: f64,
    /// relative mismatch between the two
    pub relative_error: f64,
}

/// Energy along the ray, with the reaction antiderivative extended linearly
/// above the cutoff state so the expression stays meaningful for γ < 0.
fn ray_energy(
    kw: &KernelWeights,
    nl: &Nonlinearity,
    lambda: f64,
    u: &DiscreteFunction,
    phi: &DVector<f64>,
    gamma: f64,
) -> f64 {
    let h = kw.spacing();
    let v = DVector::from_fn(u.len(), |i, _| u[i] - gamma * phi[i]);
    let mut acc = Accumulator::new();
    for i in 0..u.len() {
        acc.add(h * nl.antiderivative(v[i]));
    }
    discrete_seminorm_p(kw, &v) / kw.p() - lambda * acc.value()
}

/// Check the second-variation machinery on a converged minimal solution:
/// (a) the cutoff energy does not drop below its value at `u` along the ray
/// `u - γ φ`, `γ ∈ [0, γ_max]`; (b) its central second difference at 0
/// matches `φᵀ(A - B)φ`.
///
/// For `p >= 2` the form uses `ε = 0`; for `p < 2` only rays `φ = c u` are
/// accepted, along which the form value is evaluated by the direct double
/// sum (the matrix would be singular on equal values).
pub fn second_difference_check(
    kw: &KernelWeights,
    u: &DiscreteFunction,
    nl: &Nonlinearity,
    lambda: f64,
    phi: &DVector<f64>,
    gamma_max: f64,
    grid_points: usize,
) -> Result<SecondDifferenceReport, StabilityError> {
    let n = kw.n();
    let p = kw.p();
    for i in 0..n {
        if phi[i] < 0.0 || u[i] - gamma_max * phi[i] < -1e-14 {
            return Err(StabilityError::BadTestFunction { index: i });
        }
    }
    if p < 2.0 {
        // accept only multiples of u
        let scale = phi.amax() / u.amax().max(1e-300);
        for i in 0..n {
            if (phi[i] - scale * u[i]).abs() > 1e-10 * phi.amax().max(1e-300) {
                return Err(StabilityError::NotProportional);
            }
        }
    }

    let k0 = ray_energy(kw, nl, lambda, u, phi, 0.0);
    let scale = k0.abs().max(1.0);
    let mut min_excess = f64::INFINITY;
    for k in 0..=grid_points {
        let gamma = gamma_max * k as f64 / grid_points as f64;
        let excess = (ray_energy(kw, nl, lambda, u, phi, gamma) - k0) / scale;
        min_excess = min_excess.min(excess);
    }

    let step = 1e-4 * gamma_max.max(1e-4);
    let kp = ray_energy(kw, nl, lambda, u, phi, step);
    let km = ray_energy(kw, nl, lambda, u, phi, -step);
    let second_difference = (kp - 2.0 * k0 + km) / (step * step);

    // φᵀAφ by direct double summation, with ε = 0 (p >= 2) or evaluated
    // along the ray limit (p < 2, φ ∝ u)
    let a_value = stability_form_value(kw, u, phi, 0.0);
    let h = kw.spacing();
    let mut b_acc = Accumulator::new();
    for i in 0..n {
        b_acc.add(h * lambda * nl.deriv(u[i]) * phi[i] * phi[i]);
    }
    let form_value = a_value - b_acc.value();
    let relative_error = if phi.amax() == 0.0 {
        second_difference.abs()
    } else {
        (second_difference - form_value).abs() / form_value.abs().max(1e-300)
    };
    Ok(SecondDifferenceReport {
        min_excess,
        second_difference,
        form_value,
        relative_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branch::trace_branch;
    use crate::mesh::Mesh;
    use crate::solve::IterationOptions;

    fn branch_point(p: f64, n: usize, lambda: f64) -> (KernelWeights, Nonlinearity, DiscreteFunction) {
        let kw = KernelWeights::build(Mesh::new(-1.0, 1.0, n).unwrap(), 0.5, p).unwrap();
        let nl = Nonlinearity::exponential();
        let b = trace_branch(&kw, &nl, &[lambda], true, &IterationOptions::default()).unwrap();
        assert!(b[0].converged, "λ={lambda} did not converge");
        let u = b[0].u.clone();
        (kw, nl, u)
    }

    #[test]
    fn iterative_matches_dense_oracle() {
        let (kw, nl, u) = branch_point(2.0, 48, 0.8);
        let form = stability_form(&kw, &u, &nl, 0.8, 0.0).unwrap();
        let (dense, _) = dense_smallest_pencil_eigenvalue(&form.a, &form.b_diag);
        let report = stability_ratio(&kw, &u, &nl, 0.8, 0.0).unwrap();
        assert!(
            (report.rho - dense).abs() <= 1e-8 * dense.abs(),
            "iterative {} vs dense {}",
            report.rho,
            dense
        );
    }

    #[test]
    fn minimal_solutions_are_stable() {
        for &(p, lambda) in &[(2.0, 0.5), (3.0, 0.5)] {
            let (kw, nl, u) = branch_point(p, 32, lambda);
            let report = stability_ratio(&kw, &u, &nl, lambda, 0.0).unwrap();
            assert!(report.stable, "p={p}: rho = {}", report.rho);
            // larger unconstrained test space gives the smaller minimum
            assert!(report.rho <= report.rho_constrained + 1e-10);
        }
    }

    #[test]
    fn rho_scales_inversely_with_lambda() {
        let (kw, nl, u) = branch_point(2.0, 32, 0.5);
        let r1 = stability_ratio(&kw, &u, &nl, 0.5, 0.0).unwrap();
        let r2 = stability_ratio(&kw, &u, &nl, 0.05, 0.0).unwrap();
        assert!(r2.rho >= 9.0 * r1.rho, "{} vs {}", r2.rho, r1.rho);
    }

    #[test]
    fn ratio_invariant_under_joint_scaling() {
        let (kw, nl, u) = branch_point(2.0, 24, 0.5);
        let form = stability_form(&kw, &u, &nl, 0.5, 0.0).unwrap();
        let (rho, _) = dense_smallest_pencil_eigenvalue(&form.a, &form.b_diag);
        let a2 = 3.0 * &form.a;
        let b2 = 3.0 * &form.b_diag;
        let (rho2, _) = dense_smallest_pencil_eigenvalue(&a2, &b2);
        assert!((rho - rho2).abs() <= 1e-12 * rho.abs());
    }

    #[test]
    fn singular_reaction_weight_detected() {
        let kw = KernelWeights::build(Mesh::new(-1.0, 1.0, 12).unwrap(), 0.5, 2.0).unwrap();
        // a reaction that is flat at zero: f = 1 + t^2/(1+t), f'(0) = 0
        let nl = Nonlinearity::custom(
            |t| 1.0 + t * t / (1.0 + t),
            |t| (t * t + 2.0 * t) / (1.0 + t) / (1.0 + t),
            |t| 2.0 / (1.0 + t).powi(3),
        )
        .unwrap();
        let u = DVector::zeros(12);
        assert!(matches!(
            stability_form(&kw, &u, &nl, 1.0, 0.0),
            Err(StabilityError::SingularB { .. })
        ));
    }

    #[test]
    fn p_below_two_needs_regularization() {
        let kw = KernelWeights::build(Mesh::new(-1.0, 1.0, 12).unwrap(), 0.5, 1.5).unwrap();
        let nl = Nonlinearity::exponential();
        let u = DVector::from_fn(12, |i, _| 0.1 + i as f64 * 0.01);
        assert!(matches!(
            stability_form(&kw, &u, &nl, 1.0, 0.0),
            Err(StabilityError::NeedsRegularization { .. })
        ));
        assert!(stability_form(&kw, &u, &nl, 1.0, default_eps_cap(1.5, &u)).is_ok());
    }

    #[test]
    fn zero_ray_is_flat() {
        let (kw, nl, u) = branch_point(2.0, 24, 0.5);
        let phi = DVector::zeros(24);
        let rep = second_difference_check(&kw, &u, &nl, 0.5, &phi, 0.5, 16).unwrap();
        assert_eq!(rep.form_value, 0.0);
        assert!(rep.second_difference.abs() <= 1e-10);
        assert!(rep.min_excess.abs() <= 1e-14);
    }

    #[test]
    fn ray_along_solution_p2() {
        let (kw, nl, u) = branch_point(2.0, 32, 0.5);
        let phi = u.clone();
        let rep = second_difference_check(&kw, &u, &nl, 0.5, &phi, 0.5, 32).unwrap();
        assert!(rep.min_excess >= -1e-10, "excess {}", rep.min_excess);
        assert!(rep.relative_error <= 1e-4, "rel {}", rep.relative_error);
    }

    #[test]
    fn ray_along_hat_p3() {
        let (kw, nl, u) = branch_point(3.0, 32, 0.5);
        let mut phi = DVector::zeros(32);
        phi[16] = 0.5 * u[16];
        let rep = second_difference_check(&kw, &u, &nl, 0.5, &phi, 1.0, 32).unwrap();
        assert!(rep.min_excess >= -1e-10);
        assert!(rep.relative_error <= 1e-4, "rel {}", rep.relative_error);
    }

    #[test]
    fn bad_ray_rejected() {
        let (kw, nl, u) = branch_point(2.0, 16, 0.5);
        let phi = DVector::from_element(16, u.amax());
        assert!(matches!(
            second_difference_check(&kw, &u, &nl, 0.5, &phi, 2.0, 8),
            Err(StabilityError::BadTestFunction { .. })
        ));
    }
}
