//! Uniform interval mesh and the exact singular-kernel weights that define
//! the discrete Gagliardo energy.
//!
//! A function on the mesh lives at the interior nodes and is identically
//! zero at the endpoints and outside the interval. Pair weights integrate
//! the kernel `|x - y|^{-(1+sp)}` exactly over mesh cells (closed-form
//! antiderivatives, no quadrature); tail weights integrate it over the
//! exterior of the interval. The singular diagonal is excluded through a
//! symmetric window of width `h` centered at each node, whose
//! principal-value contribution vanishes because the function difference
//! there is zero.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("bad geometry: need a < b and n >= 3, got a={a}, b={b}, n={n}")]
    BadGeometry { a: f64, b: f64, n: usize },
    #[error("parameter out of range: need s in (0,1) and p > 1, got s={s}, p={p}")]
    ParameterOutOfRange { s: f64, p: f64 },
}

/// Uniform mesh on `(a, b)` with `n` interior nodes at `x_i = a + i h`,
/// `i = 1..n`, `h = (b - a)/(n + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh {
    a: f64,
    b: f64,
    n: usize,
    h: f64,
}

impl Mesh {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self, MeshError> {
        if !(a < b) || n < 3 || !a.is_finite() || !b.is_finite() {
            return Err(MeshError::BadGeometry { a, b, n });
        }
        let h = (b - a) / (n as f64 + 1.0);
        Ok(Self { a, b, n, h })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Number of interior nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Mesh spacing.
    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Interior node `x_i = a + (i+1) h` for zero-based `i`.
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i < self.n);
        self.a + (i as f64 + 1.0) * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }
}

/// Pair and tail weights of the discrete operator for given `s in (0,1)`,
/// `p > 1`.
///
/// `pair(i, j) = h ∫_{cell_j} |x_i - y|^{-(1+sp)} dy` for `j != i` (zero on
/// the diagonal) and `tail(i) = h ∫_{R \ (a,b)} |x_i - y|^{-(1+sp)} dy`.
/// The weights are stored dense; on a uniform mesh `pair` depends only on
/// `|i - j|`, which makes the symmetry exact.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    mesh: Mesh,
    s: f64,
    p: f64,
    /// row-major `n x n` pair weights
    pair: Vec<f64>,
    tail: Vec<f64>,
}

impl KernelWeights {
    pub fn build(mesh: Mesh, s: f64, p: f64) -> Result<Self, MeshError> {
        if !(s > 0.0 && s < 1.0) || !(p > 1.0) {
            return Err(MeshError::ParameterOutOfRange { s, p });
        }
        let n = mesh.n();
        let h = mesh.spacing();
        let sp = s * p;

        // h ∫_{d-h/2}^{d+h/2} r^{-1-sp} dr = h [ (d-h/2)^{-sp} - (d+h/2)^{-sp} ] / sp
        let mut band = vec![0.0; n];
        for (k, w) in band.iter_mut().enumerate().skip(1) {
            let d = k as f64 * h;
            *w = h * ((d - 0.5 * h).powf(-sp) - (d + 0.5 * h).powf(-sp)) / sp;
        }

        let mut pair = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    pair[i * n + j] = band[i.abs_diff(j)];
                }
            }
        }

        // h [ (x_i - a)^{-sp} + (b - x_i)^{-sp} ] / sp
        let tail = (0..n)
            .map(|i| {
                let x = mesh.node(i);
                h * ((x - mesh.a()).powf(-sp) + (mesh.b() - x).powf(-sp)) / sp
            })
            .collect();

        Ok(Self {
            mesh,
            s,
            p,
            pair,
            tail,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn n(&self) -> usize {
        self.mesh.n()
    }

    pub fn spacing(&self) -> f64 {
        self.mesh.spacing()
    }

    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.pair[i * self.mesh.n() + j]
    }

    /// Row `i` of the pair weights.
    #[inline]
    pub fn pair_row(&self, i: usize) -> &[f64] {
        let n = self.mesh.n();
        &self.pair[i * n..(i + 1) * n]
    }

    #[inline]
    pub fn tail(&self, i: usize) -> f64 {
        self.tail[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn composite_cell_integral(x: f64, lo: f64, hi: f64, sp: f64, panels: usize) -> f64 {
        // composite Simpson of r^{-1-sp} over the cell
        let f = |y: f64| (x - y).abs().powf(-1.0 - sp);
        let w = (hi - lo) / panels as f64;
        let mut acc = 0.0;
        for k in 0..panels {
            let a = lo + k as f64 * w;
            let b = a + w;
            acc += w / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
        }
        acc
    }

    #[test]
    fn mesh_examples() {
        let m = Mesh::new(-1.0, 1.0, 3).unwrap();
        assert_eq!(m.spacing(), 0.5);
        assert_eq!(m.nodes(), vec![-0.5, 0.0, 0.5]);
        let m = Mesh::new(0.0, 1.0, 9).unwrap();
        assert!((m.spacing() - 0.1).abs() < 1e-15);
        assert!(Mesh::new(1.0, 0.0, 8).is_err());
        assert!(Mesh::new(0.0, 1.0, 2).is_err());
    }

    #[test]
    fn nodes_strictly_inside() {
        let m = Mesh::new(-2.0, 3.0, 17).unwrap();
        for x in m.nodes() {
            assert!(x > m.a() && x < m.b());
        }
    }

    #[test]
    fn parameter_domain() {
        let m = Mesh::new(-1.0, 1.0, 8).unwrap();
        assert!(KernelWeights::build(m, 1.2, 2.0).is_err());
        assert!(KernelWeights::build(m, 0.5, 0.9).is_err());
    }

    #[test]
    fn tail_closed_form_at_center() {
        // sp = 1 at the center of (-1,1): ∫_{|y|>1} |y|^{-2} dy = 2
        let m = Mesh::new(-1.0, 1.0, 31).unwrap();
        let kw = KernelWeights::build(m, 0.5, 2.0).unwrap();
        let center = 15;
        assert_eq!(m.node(center), 0.0);
        assert!((kw.tail(center) / m.spacing() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn symmetry_is_exact_and_weights_positive() {
        let m = Mesh::new(-1.0, 2.0, 24).unwrap();
        let kw = KernelWeights::build(m, 0.7, 1.5).unwrap();
        for i in 0..kw.n() {
            assert!(kw.tail(i) > 0.0);
            for j in 0..kw.n() {
                assert_eq!(kw.pair(i, j), kw.pair(j, i));
                if i != j {
                    assert!(kw.pair(i, j) > 0.0);
                } else {
                    assert_eq!(kw.pair(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn tail_grows_toward_endpoints() {
        let m = Mesh::new(-1.0, 1.0, 31).unwrap();
        let kw = KernelWeights::build(m, 0.4, 2.5).unwrap();
        for i in 0..15 {
            assert!(kw.tail(i) > kw.tail(i + 1));
            assert!(kw.tail(30 - i) > kw.tail(30 - i - 1));
        }
    }

    #[test]
    fn translation_covariance() {
        let (s, p, n) = (0.6, 2.5, 19);
        let kw0 = KernelWeights::build(Mesh::new(-1.0, 1.0, n).unwrap(), s, p).unwrap();
        let kw1 = KernelWeights::build(Mesh::new(1.5, 3.5, n).unwrap(), s, p).unwrap();
        for i in 0..n {
            let rel = (kw0.tail(i) - kw1.tail(i)).abs() / kw0.tail(i);
            assert!(rel <= 1e-12);
            for j in 0..n {
                if i != j {
                    let rel = (kw0.pair(i, j) - kw1.pair(i, j)).abs() / kw0.pair(i, j);
                    assert!(rel <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn scaling_law() {
        // dilation by ρ multiplies pair and tail weights by ρ^{1-sp}
        let (s, p, n) = (0.5, 3.0, 15);
        let rho = 2.5;
        let kw0 = KernelWeights::build(Mesh::new(-1.0, 1.0, n).unwrap(), s, p).unwrap();
        let kw1 = KernelWeights::build(Mesh::new(-rho, rho, n).unwrap(), s, p).unwrap();
        let factor = rho.powf(1.0 - s * p);
        for i in 0..n {
            let rel = (kw1.tail(i) - factor * kw0.tail(i)).abs() / kw1.tail(i).abs();
            assert!(rel <= 1e-12);
            for j in 0..n {
                if i != j {
                    let rel =
                        (kw1.pair(i, j) - factor * kw0.pair(i, j)).abs() / kw1.pair(i, j).abs();
                    assert!(rel <= 1e-12, "rel error {rel} at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn cell_closed_forms_match_composite_quadrature() {
        let m = Mesh::new(-1.0, 1.0, 33).unwrap();
        let kw = KernelWeights::build(m, 0.5, 2.0).unwrap();
        let h = m.spacing();
        let i = 16; // center
        let x = m.node(i);
        // about 10^6 panels across the row
        let panels_per_cell = 1_000_000 / m.n();
        for j in 0..m.n() {
            if j == i {
                continue;
            }
            let y = m.node(j);
            let q = h * composite_cell_integral(x, y - 0.5 * h, y + 0.5 * h, 1.0, panels_per_cell);
            let rel = (kw.pair(i, j) - q).abs() / q;
            assert!(rel < 1e-9, "cell {j}: rel {rel}");
        }
    }

    #[test]
    fn center_row_sums_converge_with_order_at_least_one() {
        // s = 0.5, p = 2 on (-1,1): row sums at the center node approach a
        // finite limit as the mesh refines; the limit is taken from
        // Richardson extrapolation of quadrature-based row sums.
        let (s, p) = (0.5, 2.0);
        let sp = s * p;
        let sizes = [31usize, 63, 127, 255];
        let mut closed = Vec::new();
        let mut quad = Vec::new();
        for &n in &sizes {
            let m = Mesh::new(-1.0, 1.0, n).unwrap();
            let kw = KernelWeights::build(m, s, p).unwrap();
            let i = n / 2;
            closed.push((0..n).map(|j| kw.pair(i, j)).sum::<f64>());
            let h = m.spacing();
            let x = m.node(i);
            let panels = (1_000_000 / n).max(64);
            let mut acc = 0.0;
            for j in 0..n {
                if j != i {
                    let y = m.node(j);
                    acc += h * composite_cell_integral(x, y - 0.5 * h, y + 0.5 * h, sp, panels);
                }
            }
            quad.push(acc);
        }
        // order-1 Richardson from the two finest quadrature row sums
        let limit = 2.0 * quad[3] - quad[2];
        let errs: Vec<f64> = closed.iter().map(|r| (r - limit).abs()).collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.0 - 0.1, "observed order {order}");
        }
    }
}
