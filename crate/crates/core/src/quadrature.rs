//! Two-dimensional trapezoidal quadrature over the scattering surface patch,
//! with a data-parallel node sweep behind the `parallel` feature.
//!
//! Results are bit-stable regardless of thread count: node values are
//! materialized in index order and reduced with a fixed pairwise tree, and the
//! chunked matrix accumulators in the sensing module always add node
//! contributions in index order.

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::sensing::SensingRegion;

/// How node evaluations are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Parallel when the `parallel` feature is enabled, sequential otherwise.
    #[default]
    Auto,
    Sequential,
    /// Force the rayon sweep (identical to `Sequential` without the feature).
    Parallel,
}

impl ExecMode {
    pub fn is_parallel(self) -> bool {
        match self {
            ExecMode::Sequential => false,
            ExecMode::Auto | ExecMode::Parallel => cfg!(feature = "parallel"),
        }
    }
}

/// Quadrature scheme marker (trapezoid is the only member).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuadScheme {
    #[default]
    Trapezoid,
}

/// Panels-per-axis and scheduling for the surface integrals.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureRule {
    /// Number of panels per axis (nodes per axis is `divisions + 1`).
    pub divisions: usize,
    pub scheme: QuadScheme,
    pub exec: ExecMode,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        QuadratureRule {
            divisions: 100,
            scheme: QuadScheme::Trapezoid,
            exec: ExecMode::Auto,
        }
    }
}

impl QuadratureRule {
    pub fn with_divisions(divisions: usize) -> Self {
        QuadratureRule {
            divisions,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.divisions < 2 {
            return Err(crate::Error::InvalidInput(
                "quadrature divisions must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Value types that can be accumulated by the quadrature.
pub trait QuadValue: Clone + Send {
    fn scale(&mut self, w: f64);
    fn add_assign(&mut self, other: &Self);
}

impl QuadValue for f64 {
    fn scale(&mut self, w: f64) {
        *self *= w;
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
}

impl QuadValue for Complex<f64> {
    fn scale(&mut self, w: f64) {
        *self *= w;
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
}

impl QuadValue for DMatrix<f64> {
    fn scale(&mut self, w: f64) {
        *self *= w;
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
}

impl QuadValue for DMatrix<Complex<f64>> {
    fn scale(&mut self, w: f64) {
        *self *= Complex::new(w, 0.0);
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
}

/// Quadrature nodes for one axis: positions and trapezoid weights.
pub fn axis_nodes(lo: f64, hi: f64, divisions: usize) -> (Vec<f64>, Vec<f64>) {
    let n = divisions + 1;
    let h = (hi - lo) / divisions as f64;
    let positions: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
    let mut weights = vec![h; n];
    weights[0] = h / 2.0;
    weights[n - 1] = h / 2.0;
    (positions, weights)
}

/// Flattened 2-D node grid over the integration rectangle
/// `[θ_S ± Δθ/2] × [φ_S ± Δφ/2]`, θ as the slow index.
#[derive(Debug, Clone)]
pub struct NodeGrid {
    pub thetas: Vec<f64>,
    pub phis: Vec<f64>,
    /// Per-node product weight, indexed `i_theta * n_phi + i_phi`.
    pub weights: Vec<f64>,
}

impl NodeGrid {
    pub fn over(region: &SensingRegion, rule: &QuadratureRule) -> NodeGrid {
        let (t_lo, t_hi, p_lo, p_hi) = region.integration_bounds();
        let (thetas, tw) = axis_nodes(t_lo, t_hi, rule.divisions);
        let (phis, pw) = axis_nodes(p_lo, p_hi, rule.divisions);
        let mut weights = Vec::with_capacity(thetas.len() * phis.len());
        for wi in &tw {
            for wj in &pw {
                weights.push(wi * wj);
            }
        }
        NodeGrid {
            thetas,
            phis,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Node angles by flat index.
    pub fn node(&self, idx: usize) -> (f64, f64) {
        let n_phi = self.phis.len();
        (self.thetas[idx / n_phi], self.phis[idx % n_phi])
    }
}

/// Evaluates `f` at every node of a flat index range, in parallel when
/// requested; the output order is always the index order.
pub fn map_nodes<T: Send>(
    count: usize,
    exec: ExecMode,
    f: impl Fn(usize) -> T + Sync + Send,
) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() {
            use rayon::prelude::*;
            return (0..count).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..count).map(f).collect()
}

/// Pairwise tree sum in fixed order.
pub fn pairwise_sum<T: QuadValue>(values: &mut Vec<T>) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    // Merge adjacent pairs level by level (a stable binary tree).
    let mut len = values.len();
    while len > 1 {
        let mut write = 0;
        let mut read = 0;
        while read + 1 < len {
            let b = values[read + 1].clone();
            values[read].add_assign(&b);
            values.swap(write, read);
            write += 1;
            read += 2;
        }
        if read < len {
            values.swap(write, read);
            write += 1;
        }
        len = write;
    }
    Some(values[0].clone())
}

/// 2-D trapezoidal surface integral of a scalar-, vector- or matrix-valued
/// integrand over the region's angular rectangle. Linear in the integrand;
/// values are combined elementwise.
pub fn surface_integral<T: QuadValue>(
    integrand: impl Fn(f64, f64) -> T + Sync,
    region: &SensingRegion,
    rule: &QuadratureRule,
) -> T {
    let grid = NodeGrid::over(region, rule);
    let mut values = map_nodes(grid.len(), rule.exec, |idx| {
        let (theta, phi) = grid.node(idx);
        let mut v = integrand(theta, phi);
        v.scale(grid.weights[idx]);
        v
    });
    pairwise_sum(&mut values).expect("quadrature grid is never empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Direction;
    use std::f64::consts::PI;

    fn region(delta_theta: f64, delta_phi: f64) -> SensingRegion {
        SensingRegion::new(Direction::new(0.38 * PI, 0.44 * PI), 8.0, delta_theta, delta_phi)
            .unwrap()
    }

    #[test]
    fn constant_integrand_gives_patch_area() {
        let r = region(0.2, 0.2);
        let rule = QuadratureRule::with_divisions(100);
        let got: f64 = surface_integral(|_, _| 1.0, &r, &rule);
        assert!((got - 0.04).abs() < 1e-12, "{got}");
    }

    #[test]
    fn sin_theta_band_matches_antiderivative() {
        let r = region(0.3, 0.25);
        let rule = QuadratureRule::with_divisions(100);
        let got: f64 = surface_integral(|theta, _| theta.sin(), &r, &rule);
        let (t_lo, t_hi, p_lo, p_hi) = r.integration_bounds();
        let expect = (t_lo.cos() - t_hi.cos()) * (p_hi - p_lo);
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn trapezoid_is_second_order() {
        let r = region(0.5, 0.5);
        let f = |theta: f64, phi: f64| (theta * 1.3).sin() * (phi * 0.7).cos();
        let exact = {
            let rule = QuadratureRule::with_divisions(1600);
            surface_integral(f, &r, &rule)
        };
        let coarse = surface_integral(f, &r, &QuadratureRule::with_divisions(50)) - exact;
        let fine = surface_integral(f, &r, &QuadratureRule::with_divisions(100)) - exact;
        let ratio = coarse.abs() / fine.abs();
        assert!(
            (ratio - 4.0).abs() < 0.5,
            "convergence ratio {ratio:.3} not ~4"
        );
    }

    #[test]
    fn linear_in_integrand() {
        let r = region(0.2, 0.3);
        let rule = QuadratureRule::with_divisions(40);
        let f = |t: f64, p: f64| t + p;
        let g = |t: f64, p: f64| t * p;
        let fi: f64 = surface_integral(f, &r, &rule);
        let gi: f64 = surface_integral(g, &r, &rule);
        let combo: f64 = surface_integral(|t, p| 2.0 * f(t, p) - 3.0 * g(t, p), &r, &rule);
        assert!((combo - (2.0 * fi - 3.0 * gi)).abs() < 1e-12);
    }

    #[test]
    fn matrix_integrand_is_elementwise() {
        let r = region(0.2, 0.2);
        let rule = QuadratureRule::with_divisions(30);
        let m: DMatrix<f64> = surface_integral(
            |t, p| DMatrix::from_row_slice(2, 1, &[t.sin(), p.cos()]),
            &r,
            &rule,
        );
        let s0: f64 = surface_integral(|t, _| t.sin(), &r, &rule);
        let s1: f64 = surface_integral(|_, p| p.cos(), &r, &rule);
        assert!((m[(0, 0)] - s0).abs() < 1e-13);
        assert!((m[(1, 0)] - s1).abs() < 1e-13);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let r = region(0.31, 0.17);
        let f = |t: f64, p: f64| (t * 3.1).sin() * (p * 1.7).cos() + t * p;
        let mut seq_rule = QuadratureRule::with_divisions(64);
        seq_rule.exec = ExecMode::Sequential;
        let mut par_rule = seq_rule;
        par_rule.exec = ExecMode::Parallel;
        let a: f64 = surface_integral(f, &r, &seq_rule);
        let b: f64 = surface_integral(f, &r, &par_rule);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn pairwise_sum_matches_sequential_to_roundoff() {
        let mut vals: Vec<f64> = (0..1001).map(|i| ((i * 7919) % 1000) as f64 * 1e-3).collect();
        let seq: f64 = vals.iter().sum();
        let pair = pairwise_sum(&mut vals).unwrap();
        assert!((seq - pair).abs() < 1e-9);
    }
}
