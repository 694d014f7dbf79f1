//! The discrete fractional p-Laplacian: operator application, Gagliardo
//! energy, pairing and the linearized weighted graph-Laplacian matrix shared
//! by the Newton solver and the stability form.
//!
//! Conventions fixed once for the whole crate: pair sums run over ordered
//! pairs `(i, j)`, `i != j`, with symmetric weights, and the energy carries
//! the factor that makes `<L u, u> = discrete_seminorm_p(u)` exact. Rows are
//! reduced in deterministic row-major order with compensated summation;
//! optional row parallelism reproduces the sequential results bit for bit
//! because each row is an independent reduction.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::accum::Accumulator;
use crate::mesh::KernelWeights;
use crate::scalar::odd_power;

/// Values of a discrete function at the interior nodes; implicitly zero at
/// the endpoints and outside the interval.
pub type DiscreteFunction = DVector<f64>;

static PARALLEL_ROWS: AtomicBool = AtomicBool::new(false);

/// Enable or disable row-parallel operator application and assembly.
///
/// Results are identical to the sequential order within bit reproduction;
/// the default is sequential.
pub fn set_parallel_rows(enabled: bool) {
    PARALLEL_ROWS.store(enabled, Ordering::Relaxed);
}

fn parallel_rows() -> bool {
    PARALLEL_ROWS.load(Ordering::Relaxed)
}

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("singular weight: eps = 0 with p = {p} < 2 and a vanishing difference at ({i}, {j})")]
    SingularWeight { p: f64, i: usize, j: usize },
}

#[inline]
fn operator_row(kw: &KernelWeights, u: &[f64], i: usize, p: f64) -> f64 {
    let row = kw.pair_row(i);
    let ui = u[i];
    let mut acc = Accumulator::new();
    for (j, &w) in row.iter().enumerate() {
        if j != i {
            acc.add(w * odd_power(ui - u[j], p));
        }
    }
    acc.add(kw.tail(i) * odd_power(ui, p));
    acc.value()
}

/// Apply the discrete operator:
/// `(L u)_i = Σ_{j≠i} W_ij J(u_i - u_j) + T_i J(u_i)` with
/// `J(t) = |t|^{p-2} t`.
///
/// The discrete pairing `<L u, v> = Σ_i (L u)_i v_i` satisfies
/// `<L u, u> = discrete_seminorm_p(u)`.
pub fn apply_operator(kw: &KernelWeights, u: &DiscreteFunction) -> DVector<f64> {
    let n = kw.n();
    assert_eq!(u.len(), n, "shape mismatch: u has {} values, mesh has {n}", u.len());
    let p = kw.p();
    let us = u.as_slice();
    let vals: Vec<f64> = if parallel_rows() && n >= 128 {
        (0..n)
            .into_par_iter()
            .map(|i| operator_row(kw, us, i, p))
            .collect()
    } else {
        (0..n).map(|i| operator_row(kw, us, i, p)).collect()
    };
    DVector::from_vec(vals)
}

/// p-th power of the discrete Gagliardo seminorm:
/// `Σ_{i<j} W_ij |u_i - u_j|^p + Σ_i T_i |u_i|^p`.
pub fn discrete_seminorm_p(kw: &KernelWeights, u: &DiscreteFunction) -> f64 {
    let n = kw.n();
    assert_eq!(u.len(), n, "shape mismatch");
    let p = kw.p();
    let mut acc = Accumulator::new();
    for i in 0..n {
        let row = kw.pair_row(i);
        for (j, &w) in row.iter().enumerate().skip(i + 1) {
            acc.add(w * (u[i] - u[j]).abs().powf(p));
        }
        acc.add(kw.tail(i) * u[i].abs().powf(p));
    }
    acc.value()
}

/// Discrete pairing `<v, w> = Σ_i v_i w_i`.
pub fn pairing(v: &DVector<f64>, w: &DVector<f64>) -> f64 {
    assert_eq!(v.len(), w.len(), "shape mismatch");
    let mut acc = Accumulator::new();
    for i in 0..v.len() {
        acc.add(v[i] * w[i]);
    }
    acc.value()
}

#[inline]
fn diff_weight(d: f64, eps: f64, p: f64) -> Option<f64> {
    if p == 2.0 {
        return Some(1.0);
    }
    if eps == 0.0 {
        if d == 0.0 {
            if p > 2.0 {
                Some(0.0)
            } else {
                None // singular
            }
        } else {
            Some(d.abs().powf(p - 2.0))
        }
    } else {
        Some((eps * eps + d * d).powf(0.5 * (p - 2.0)))
    }
}

/// Assemble the symmetric matrix of the linearized form
/// `Q_A(φ) = (p-1) [ 1/2 Σ_{i≠j} W_ij (ε²+(u_i-u_j)²)^{(p-2)/2} (φ_i-φ_j)²
///                 + Σ_i T_i (ε²+u_i²)^{(p-2)/2} φ_i² ]`.
///
/// For `ε = 0`, `p >= 2` this is exactly the first term of the stability
/// form and the exact Hessian of the convex energy. The matrix has
/// nonpositive off-diagonal entries and nonnegative row sums.
pub fn assemble_linearized_form(
    kw: &KernelWeights,
    u: &DiscreteFunction,
    eps: f64,
) -> Result<DMatrix<f64>, OperatorError> {
    let n = kw.n();
    assert_eq!(u.len(), n, "shape mismatch");
    let p = kw.p();
    if eps == 0.0 && p < 2.0 {
        // fail fast with the first vanishing difference
        for i in 0..n {
            if u[i] == 0.0 {
                return Err(OperatorError::SingularWeight { p, i, j: i });
            }
            for j in i + 1..n {
                if u[i] == u[j] {
                    return Err(OperatorError::SingularWeight { p, i, j });
                }
            }
        }
    }
    let pm1 = p - 1.0;
    let mut a = DMatrix::zeros(n, n);
    let assemble_row = |i: usize| -> Vec<f64> {
        let row = kw.pair_row(i);
        let mut out = vec![0.0; n];
        let mut diag = Accumulator::new();
        for (j, &w) in row.iter().enumerate() {
            if j != i {
                let om = diff_weight(u[i] - u[j], eps, p).expect("prechecked");
                out[j] = -pm1 * w * om;
                diag.add(w * om);
            }
        }
        diag.add(kw.tail(i) * diff_weight(u[i], eps, p).expect("prechecked"));
        out[i] = pm1 * diag.value();
        out
    };
    let rows: Vec<Vec<f64>> = if parallel_rows() && n >= 128 {
        (0..n).into_par_iter().map(assemble_row).collect()
    } else {
        (0..n).map(assemble_row).collect()
    };
    for (i, r) in rows.into_iter().enumerate() {
        for (j, v) in r.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    Ok(a)
}

/// Value of the linearized quadratic form by direct double summation, with
/// the ray-limit rule `0^{p-2} · 0² = 0` when both the function difference
/// and the test difference vanish.
///
/// Returns `+∞` when `ε = 0`, `p < 2` and some test difference sits on a
/// vanishing function difference.
pub fn stability_form_value(
    kw: &KernelWeights,
    u: &DiscreteFunction,
    phi: &DVector<f64>,
    eps: f64,
) -> f64 {
    let n = kw.n();
    assert_eq!(u.len(), n, "shape mismatch");
    assert_eq!(phi.len(), n, "shape mismatch");
    let p = kw.p();
    let mut acc = Accumulator::new();
    let mut term = |d: f64, dphi: f64, w: f64| {
        if dphi == 0.0 {
            return Some(());
        }
        match diff_weight(d, eps, p) {
            Some(om) => {
                acc.add(w * om * dphi * dphi);
                Some(())
            }
            None => None,
        }
    };
    for i in 0..n {
        let row = kw.pair_row(i);
        for (j, &w) in row.iter().enumerate().skip(i + 1) {
            if term(u[i] - u[j], phi[i] - phi[j], w).is_none() {
                return f64::INFINITY;
            }
        }
        if term(u[i], phi[i], kw.tail(i)).is_none() {
            return f64::INFINITY;
        }
    }
    (p - 1.0) * acc.value()
}
