//! Legendre eigenbasis of the degenerate diffusion operator
//! `A u = -d/dx((1 - x^2) du/dx)` on (-1, 1).
//!
//! The eigenfunctions are the orthonormal Legendre polynomials
//! `e_n(x) = sqrt((2n + 1) / 2) P_n(x)` with eigenvalues `mu_n = n (n + 1)`.
//! Fields are stored as coefficient vectors in this basis; nonlinear terms are
//! evaluated at Gauss-Legendre nodes and projected back.

use std::f64::consts::PI;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `P_n(x)` by the three-term recurrence
/// `(n + 1) P_{n+1} = (2n + 1) x P_n - n P_{n-1}`.
pub fn legendre_poly(n: usize, x: f64) -> f64 {
    legendre_pair(n, x).0
}

/// Returns `(P_n(x), P_{n-1}(x))`, with `P_{-1} = 0`.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// `P_n'(x)` from `(1 - x^2) P_n' = n (P_{n-1} - x P_n)`.
///
/// At the endpoints the identity degenerates and the closed form
/// `P_n'(+-1) = (+-1)^{n+1} n (n + 1) / 2` is used.
pub fn legendre_derivative(n: usize, x: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let one_minus_x2 = 1.0 - x * x;
    if one_minus_x2 <= 0.0 {
        let sign = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        return sign * nf * (nf + 1.0) / 2.0;
    }
    let (p, p_prev) = legendre_pair(n, x);
    nf * (p_prev - x * p) / one_minus_x2
}

fn normalization(n: usize) -> f64 {
    ((2 * n + 1) as f64 / 2.0).sqrt()
}

/// Orthonormal eigenfunction `e_n(x) = sqrt((2n + 1) / 2) P_n(x)`.
pub fn basis_eval(n: usize, x: f64) -> f64 {
    normalization(n) * legendre_poly(n, x)
}

/// Gauss-Legendre nodes (ascending) and weights of the given order.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let q = order as f64;
    for i in 0..order.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_q.
        let mut x = (PI * (i as f64 + 0.75) / (q + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, p_prev) = legendre_pair(order, x);
            dp = q * (x * p - p_prev) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (p, p_prev) = legendre_pair(order, x);
                dp = q * (x * p - p_prev) / (x * x - 1.0);
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[order - 1 - i] = x;
        nodes[i] = -x;
        weights[order - 1 - i] = w;
        weights[i] = w;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    (nodes, weights)
}

/// A function on (-1, 1) as coefficients in the orthonormal Legendre basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(modes: usize) -> Self {
        Self {
            coeffs: vec![0.0; modes],
        }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// The constant function `value`, i.e. `value * sqrt(2) * e_0`.
    pub fn constant(value: f64, modes: usize) -> Self {
        let mut field = Self::zeros(modes);
        if modes > 0 {
            field.coeffs[0] = value * std::f64::consts::SQRT_2;
        }
        field
    }

    /// Unit coefficient on mode `n`.
    pub fn unit(n: usize, modes: usize) -> Self {
        let mut field = Self::zeros(modes);
        field.coeffs[n] = 1.0;
        field
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// L2(-1, 1) norm (Parseval).
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// L2 distance; fields of different length are compared on the common
    /// modes with the tail of the longer one counted in full.
    pub fn distance(&self, other: &Self) -> f64 {
        let (short, long) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        let common: f64 = short
            .coeffs
            .iter()
            .zip(&long.coeffs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let tail: f64 = long.coeffs[short.len()..].iter().map(|c| c * c).sum();
        (common + tail).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Self) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += factor * b;
        }
    }

    /// Copy truncated or zero-padded to `modes` coefficients.
    pub fn resized(&self, modes: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(modes, 0.0);
        Self { coeffs }
    }

    /// Point evaluation `sum_n c_n e_n(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(n, c)| c * basis_eval(n, x))
            .sum()
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;

    fn add(self, rhs: Self) -> SpectralField {
        SpectralField {
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;

    fn sub(self, rhs: Self) -> SpectralField {
        SpectralField {
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// Truncated Legendre eigenbasis together with the Gauss-Legendre rule used
/// for nodal evaluation and projection.
#[derive(Debug, Clone)]
pub struct LegendreBasis {
    modes: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `e_n(x_j)` stored node-major: `table[j * modes + n]`.
    table: Vec<f64>,
    /// `w_j e_n(x_j)`, same layout.
    weighted: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl LegendreBasis {
    /// Basis with `modes` eigenfunctions and a `quadrature_order`-point rule.
    pub fn new(modes: usize, quadrature_order: usize) -> Result<Self> {
        if modes == 0 {
            return Err(crate::error::invalid("modes", "need at least one mode"));
        }
        if quadrature_order < modes + 1 {
            return Err(Error::QuadratureOrderTooLow {
                modes,
                order: quadrature_order,
            });
        }
        let (nodes, weights) = gauss_legendre(quadrature_order);
        let mut table = vec![0.0; quadrature_order * modes];
        let mut weighted = vec![0.0; quadrature_order * modes];
        for (j, (&x, &w)) in nodes.iter().zip(&weights).enumerate() {
            // One recurrence sweep per node.
            let mut prev = 0.0;
            let mut cur = 1.0;
            for n in 0..modes {
                let value = normalization(n) * cur;
                table[j * modes + n] = value;
                weighted[j * modes + n] = w * value;
                let nf = n as f64;
                let next = ((2.0 * nf + 1.0) * x * cur - nf * prev) / (nf + 1.0);
                prev = cur;
                cur = next;
            }
        }
        let eigenvalues = (0..modes).map(|n| (n * (n + 1)) as f64).collect();
        Ok(Self {
            modes,
            nodes,
            weights,
            table,
            weighted,
            eigenvalues,
        })
    }

    /// Basis with the default rule `q = 2N`, exact for products of two
    /// band-limited fields.
    pub fn with_default_quadrature(modes: usize) -> Result<Self> {
        Self::new(modes, (2 * modes).max(modes + 1))
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn quadrature_order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `e_n(x_j)` from the precomputed table.
    pub fn table_value(&self, n: usize, j: usize) -> f64 {
        self.table[j * self.modes + n]
    }

    /// Quadrature of nodal values.
    pub fn integrate(&self, nodal: &[f64]) -> f64 {
        nodal.iter().zip(&self.weights).map(|(u, w)| u * w).sum()
    }

    /// Projects nodal values onto the basis: `c_n = sum_j w_j e_n(x_j) u_j`.
    pub fn to_spectral(&self, nodal: &[f64]) -> Result<SpectralField> {
        let mut coeffs = vec![0.0; self.modes];
        self.project_into(nodal, &mut coeffs)?;
        Ok(SpectralField { coeffs })
    }

    pub fn project_into(&self, nodal: &[f64], coeffs: &mut [f64]) -> Result<()> {
        self.check_nodal(nodal.len())?;
        self.check_modes(coeffs.len())?;
        coeffs.fill(0.0);
        for (row, &u) in self.weighted.chunks_exact(self.modes).zip(nodal) {
            for (c, &we) in coeffs.iter_mut().zip(row) {
                *c += we * u;
            }
        }
        Ok(())
    }

    /// Nodal values of a field at the quadrature nodes.
    pub fn to_nodal(&self, field: &SpectralField) -> Result<Vec<f64>> {
        let mut nodal = vec![0.0; self.nodes.len()];
        self.nodal_into(field.coeffs(), &mut nodal)?;
        Ok(nodal)
    }

    pub fn nodal_into(&self, coeffs: &[f64], nodal: &mut [f64]) -> Result<()> {
        self.check_modes(coeffs.len())?;
        self.check_nodal(nodal.len())?;
        for (row, u) in self.table.chunks_exact(self.modes).zip(nodal.iter_mut()) {
            *u = row.iter().zip(coeffs).map(|(e, c)| e * c).sum();
        }
        Ok(())
    }

    /// `A u`, diagonal in the eigenbasis.
    pub fn apply_operator(&self, field: &SpectralField) -> Result<SpectralField> {
        self.check_modes(field.len())?;
        Ok(SpectralField {
            coeffs: field
                .coeffs
                .iter()
                .zip(&self.eigenvalues)
                .map(|(c, mu)| mu * c)
                .collect(),
        })
    }

    /// Heat semigroup `S(t) u`, coefficients `exp(-mu_n t) c_n`.
    pub fn semigroup_apply(&self, field: &SpectralField, t: f64) -> Result<SpectralField> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::NegativeTime(t));
        }
        self.check_modes(field.len())?;
        Ok(SpectralField {
            coeffs: field
                .coeffs
                .iter()
                .zip(&self.eigenvalues)
                .map(|(c, mu)| (-mu * t).exp() * c)
                .collect(),
        })
    }

    /// Dirichlet energy `int (1 - x^2) |u'|^2 dx = <A u, u> = sum mu_n c_n^2`.
    pub fn dirichlet_energy(&self, field: &SpectralField) -> f64 {
        field
            .coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, mu)| mu * c * c)
            .sum()
    }

    /// Max entry of `|G - I|` where `G_ij` is the quadrature Gram matrix.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.modes {
            for k in 0..self.modes {
                let gram: f64 = (0..self.nodes.len())
                    .map(|j| self.weighted[j * self.modes + i] * self.table[j * self.modes + k])
                    .sum();
                let target = if i == k { 1.0 } else { 0.0 };
                worst = worst.max((gram - target).abs());
            }
        }
        worst
    }

    /// Quadrature L2 norm of `-d/dx((1 - x^2) e_n') - mu_n e_n`.
    ///
    /// The flux is `(1 - x^2) P_n' = n (P_{n-1} - x P_n)`, so its derivative
    /// is `n (P_{n-1}' - P_n - x P_n')` with the derivatives taken from the
    /// same identity.
    pub fn eigen_residual(&self, n: usize) -> f64 {
        let nf = n as f64;
        let mu = self.eigenvalues[n];
        let scale = normalization(n);
        let sq: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| {
                let p = legendre_poly(n, x);
                let flux_derivative = if n == 0 {
                    0.0
                } else {
                    nf * (legendre_derivative(n - 1, x) - p - x * legendre_derivative(n, x))
                };
                let r = scale * (-flux_derivative - mu * p);
                w * r * r
            })
            .sum();
        sq.sqrt()
    }

    fn check_modes(&self, got: usize) -> Result<()> {
        if got != self.modes {
            return Err(Error::DimensionMismatch {
                expected: self.modes,
                got,
            });
        }
        Ok(())
    }

    fn check_nodal(&self, got: usize) -> Result<()> {
        if got != self.nodes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.nodes.len(),
                got,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn low_degree_values() {
        assert_eq!(legendre_poly(0, 0.7), 1.0);
        assert!((legendre_poly(1, 0.7) - 0.7).abs() < 1e-15);
        assert!((legendre_poly(2, 0.5) + 0.125).abs() < 1e-15);
        // P_3 = x (5x^2 - 3) / 2
        let x: f64 = -0.3;
        assert!((legendre_poly(3, x) - x * (5.0 * x * x - 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn normalized_values() {
        for x in [-0.9, 0.0, 0.4] {
            assert!((basis_eval(0, x) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        }
        assert!((basis_eval(1, 1.0) - 1.5f64.sqrt()).abs() < 1e-15);
        let basis = LegendreBasis::new(4, 8).unwrap();
        let nodal: Vec<f64> = basis.nodes().iter().map(|&x| basis_eval(2, x).powi(2)).collect();
        assert!((basis.integrate(&nodal) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let h = 1e-6;
        for n in 0..8 {
            for x in [-0.95, -0.3, 0.1, 0.77] {
                let fd = (legendre_poly(n, x + h) - legendre_poly(n, x - h)) / (2.0 * h);
                assert!((legendre_derivative(n, x) - fd).abs() < 1e-6, "n={n} x={x}");
            }
        }
        assert_eq!(legendre_derivative(3, 1.0), 6.0);
        assert_eq!(legendre_derivative(2, -1.0), -3.0);
        assert_eq!(legendre_derivative(3, -1.0), 6.0);
    }

    #[test]
    fn build_basis_examples() {
        let basis = LegendreBasis::new(4, 8).unwrap();
        assert_eq!(basis.eigenvalues(), &[0.0, 2.0, 6.0, 12.0]);

        let single = LegendreBasis::new(1, 2).unwrap();
        assert_eq!(single.eigenvalues(), &[0.0]);

        let basis = LegendreBasis::new(8, 16).unwrap();
        let total: f64 = basis.weights().iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
        assert!(basis.weights().iter().all(|&w| w > 0.0));
        assert!(basis.nodes().iter().all(|&x| x.abs() < 1.0));
        assert!(basis.nodes().windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn quadrature_order_too_low() {
        assert_eq!(
            LegendreBasis::new(4, 4).unwrap_err(),
            Error::QuadratureOrderTooLow { modes: 4, order: 4 }
        );
        assert!(LegendreBasis::new(4, 5).is_ok());
    }

    #[test]
    fn odd_order_rule_integrates_polynomials() {
        let (nodes, weights) = gauss_legendre(7);
        // Exact up to degree 13: int x^12 = 2/13.
        let integral: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(12)).sum();
        assert!((integral - 2.0 / 13.0).abs() < 1e-14);
        assert_eq!(nodes[3], 0.0);
    }

    #[test]
    fn orthonormality_and_eigen_residual() {
        for modes in [1, 5, 16, 32] {
            let basis = LegendreBasis::new(modes, 2 * modes.max(1) + 1).unwrap();
            assert!(basis.orthonormality_error() < 1e-10, "modes={modes}");
            for n in 0..modes {
                assert!(basis.eigen_residual(n) < 1e-8, "n={n}");
            }
        }
    }

    #[test]
    fn transform_examples() {
        let basis = LegendreBasis::new(6, 12).unwrap();
        let nodal: Vec<f64> = basis.nodes().iter().map(|&x| basis_eval(1, x)).collect();
        let field = basis.to_spectral(&nodal).unwrap();
        for (n, c) in field.coeffs().iter().enumerate() {
            let expected = if n == 1 { 1.0 } else { 0.0 };
            assert!((c - expected).abs() < 1e-12);
        }

        let ones = vec![1.0; 12];
        let field = basis.to_spectral(&ones).unwrap();
        assert!((field.coeffs()[0] - 2f64.sqrt()).abs() < 1e-12);
        assert!(field.coeffs()[1..].iter().all(|c| c.abs() < 1e-12));

        assert_eq!(
            basis.to_spectral(&[1.0; 5]).unwrap_err(),
            Error::DimensionMismatch {
                expected: 12,
                got: 5
            }
        );
        assert!(basis.to_nodal(&SpectralField::zeros(3)).is_err());
    }

    #[test]
    fn operator_examples() {
        let basis = LegendreBasis::new(5, 10).unwrap();
        let a0 = basis.apply_operator(&SpectralField::unit(0, 5)).unwrap();
        assert_eq!(a0.norm(), 0.0);
        let a1 = basis.apply_operator(&SpectralField::unit(1, 5)).unwrap();
        assert_eq!(a1, SpectralField::unit(1, 5).scaled(2.0));
        let a3 = basis.apply_operator(&SpectralField::unit(3, 5)).unwrap();
        assert_eq!(a3, SpectralField::unit(3, 5).scaled(12.0));
    }

    #[test]
    fn semigroup_examples() {
        let basis = LegendreBasis::new(5, 10).unwrap();
        let field = SpectralField::from_coeffs(vec![1.0, -2.0, 0.5, 0.1, 3.0]);
        assert_eq!(basis.semigroup_apply(&field, 0.0).unwrap(), field);
        let e1 = basis.semigroup_apply(&SpectralField::unit(1, 5), 1.0).unwrap();
        assert!((e1.coeffs()[1] - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(
            basis.semigroup_apply(&field, -0.1).unwrap_err(),
            Error::NegativeTime(-0.1)
        );
    }

    #[test]
    fn point_evaluation_matches_nodal() {
        let basis = LegendreBasis::new(6, 12).unwrap();
        let field = SpectralField::from_coeffs(vec![0.3, -1.0, 2.0, 0.0, 0.25, -0.5]);
        let nodal = basis.to_nodal(&field).unwrap();
        for (x, u) in basis.nodes().iter().zip(nodal) {
            assert!((field.eval(*x) - u).abs() < 1e-13);
        }
        assert!((SpectralField::constant(-8.4, 6).eval(0.3) + 8.4).abs() < 1e-14);
    }

    fn field_strategy(modes: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, modes)
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(coeffs in field_strategy(12)) {
            let basis = LegendreBasis::new(12, 24).unwrap();
            let field = SpectralField::from_coeffs(coeffs);
            let back = basis.to_spectral(&basis.to_nodal(&field).unwrap()).unwrap();
            prop_assert!(field.distance(&back) < 1e-10);
            let max_err = field.coeffs().iter().zip(back.coeffs())
                .map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(max_err < 1e-10);
        }

        #[test]
        fn parseval(coeffs in field_strategy(10)) {
            let basis = LegendreBasis::new(10, 20).unwrap();
            let field = SpectralField::from_coeffs(coeffs);
            let nodal = basis.to_nodal(&field).unwrap();
            let sq: Vec<f64> = nodal.iter().map(|u| u * u).collect();
            let quad = basis.integrate(&sq);
            prop_assert!((field.norm().powi(2) - quad).abs() < 1e-10 * (1.0 + quad));
        }

        #[test]
        fn semigroup_contracts_and_composes(coeffs in field_strategy(8), s in 0.0f64..2.0, t in 0.0f64..2.0) {
            let basis = LegendreBasis::new(8, 16).unwrap();
            let field = SpectralField::from_coeffs(coeffs);
            let moved = basis.semigroup_apply(&field, 0.37).unwrap();
            prop_assert!(moved.norm() <= field.norm() + 1e-15);
            let direct = basis.semigroup_apply(&field, s + t).unwrap();
            let composed = basis
                .semigroup_apply(&basis.semigroup_apply(&field, s).unwrap(), t)
                .unwrap();
            prop_assert!(direct.distance(&composed) < 1e-12);
        }
    }
}
