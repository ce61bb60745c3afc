//! Sensing-side operator construction: the Kronecker-structured kernel `K`
//! integrated over the scattering patch, its eigenvector factors `S_i`, the
//! trace vector `v(X) = [tr(S_1 X), …]`, and the real-valued first-order
//! surrogate matrix `Υ` that linearizes `‖v(X)‖₂` around an expansion point.
//!
//! These operators turn the quartic echo-power form in the RIS phases into
//! trace-linear material for the semidefinite subproblems.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, C64, CMat, CVec};
use crate::quadrature::{map_nodes, ExecMode};
use crate::scenario::ChannelSet;
use crate::sensing::{SensingGrid, SensingRegion};

/// Snapshot of the inputs an operator set was built from.
#[derive(Debug, Clone)]
pub struct OperatorProvenance {
    pub w_c: CVec,
    pub w_s: CVec,
    pub w_rx: CVec,
    pub region: SensingRegion,
}

/// The integral kernel `K`, its factor matrices `S_i`, and the stacked factor
/// columns used for fast trace evaluations. Dimensions are `(N+1)` for the
/// factor matrices and `(N+1)²` for the kernel.
#[derive(Debug, Clone)]
pub struct SensingOperatorSet {
    /// `N + 1`.
    pub dim: usize,
    /// `(N+1)² × (N+1)²` Hermitian PSD kernel.
    pub k_matrix: CMat,
    /// `vec⁻¹` of the columns of `U Λ^{1/2}`.
    pub s_list: Vec<CMat>,
    /// `U Λ^{1/2}` itself; column `i` is `vec(S_i)`.
    pub factor: CMat,
    pub provenance: OperatorProvenance,
}

const GRAM_COL_CHUNK: usize = 192;
const NODE_CHUNK: usize = 256;

/// `k += p p^H`, accumulated over fixed column blocks. The block schedule and
/// in-block order do not depend on the execution mode, so results are
/// reproducible across thread counts.
fn accumulate_gram(k: &mut CMat, p: &CMat, exec: ExecMode) {
    let dim = k.nrows();
    let ph = p.adjoint();
    let one = C64::new(1.0, 0.0);

    let work = |chunk: &mut [C64], block_idx: usize| {
        let ncols = chunk.len() / dim;
        let start = block_idx * GRAM_COL_CHUNK;
        let mut view = nalgebra::DMatrixViewMut::from_slice(chunk, dim, ncols);
        view.gemm(one, p, &ph.columns(start, ncols), one);
    };

    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() {
            use rayon::prelude::*;
            k.as_mut_slice()
                .par_chunks_mut(dim * GRAM_COL_CHUNK)
                .enumerate()
                .for_each(|(bi, chunk)| work(chunk, bi));
            return;
        }
    }
    let _ = exec;
    for (bi, chunk) in k.as_mut_slice().chunks_mut(dim * GRAM_COL_CHUNK).enumerate() {
        work(chunk, bi);
    }
}

/// Builds the operator set from the current beamformers and combiner.
///
/// Per quadrature node the kernel contribution is rank ≤ 2:
/// `c · (ũ ⊗ ũ_r)(ũ ⊗ ũ_r)^H` for `ũ ∈ {ũ_c, ũ_s}`, where
/// `u = a* ⊙ (H_BR w)` zero-padded to length `N+1` and
/// `c = weight · |g_in|²|g_out|² · sinθ`. The kernel is eigendecomposed,
/// negative round-off eigenvalues are clipped at zero, and the factor
/// matrices are the matricized columns of `U Λ^{1/2}`.
pub fn build_sensing_operators(
    w_c: &CVec,
    w_s: &CVec,
    w_rx: &CVec,
    grid: &SensingGrid,
    channels: &ChannelSet,
) -> Result<SensingOperatorSet> {
    let n = channels.h_br.nrows();
    let dim = n + 1;
    let dim2 = dim * dim;
    let hv_c = &channels.h_br * w_c;
    let hv_s = &channels.h_br * w_s;
    let hv_rx = &channels.h_br * w_rx;

    let mut k = CMat::zeros(dim2, dim2);
    let nodes = grid.nodes();
    let mut start = 0;
    while start < nodes {
        let len = NODE_CHUNK.min(nodes - start);
        let cols = map_nodes(len, grid.exec, |off| {
            let idx = start + off;
            let root =
                (grid.weights[idx] * grid.gain2[idx] * grid.sin_theta[idx]).max(0.0).sqrt();
            let mut col_c = CVec::zeros(dim2);
            let mut col_s = CVec::zeros(dim2);
            for i in 0..n {
                let a_conj = grid.steering[(i, idx)].conj();
                let u_c = a_conj * hv_c[i];
                let u_s = a_conj * hv_s[i];
                for j in 0..n {
                    let u_r = grid.steering[(j, idx)].conj() * hv_rx[j] * root;
                    col_c[i * dim + j] = u_c * u_r;
                    col_s[i * dim + j] = u_s * u_r;
                }
            }
            (col_c, col_s)
        });
        let mut p = CMat::zeros(dim2, 2 * len);
        for (off, (col_c, col_s)) in cols.into_iter().enumerate() {
            p.set_column(2 * off, &col_c);
            p.set_column(2 * off + 1, &col_s);
        }
        accumulate_gram(&mut k, &p, grid.exec);
        start += len;
    }
    let k = (k.adjoint() + &k).scale(0.5);

    let eig = hermitian_eig(&k)?;
    let lam_max = eig.eigenvalues[0].max(0.0);
    // Quadrature round-off can push tiny eigenvalues below zero; clip them.
    debug_assert!(
        eig.eigenvalues[eig.eigenvalues.len() - 1] >= -1e-9 * lam_max.max(1e-300),
        "kernel far from PSD"
    );
    let mut factor = CMat::zeros(dim2, dim2);
    for i in 0..dim2 {
        let lam = eig.eigenvalues[i].max(0.0);
        factor.set_column(i, &(eig.eigenvectors.column(i) * C64::new(lam.sqrt(), 0.0)));
    }
    let mut s_list = Vec::with_capacity(dim2);
    for i in 0..dim2 {
        let col = factor.column(i);
        s_list.push(CMat::from_column_slice(dim, dim, col.as_slice()));
    }

    Ok(SensingOperatorSet {
        dim,
        k_matrix: k,
        s_list,
        factor,
        provenance: OperatorProvenance {
            w_c: w_c.clone(),
            w_s: w_s.clone(),
            w_rx: w_rx.clone(),
            region: grid.region,
        },
    })
}

impl SensingOperatorSet {
    /// `v(X) = [tr(S_1 X), tr(S_2 X), …]`, linear in `X`.
    pub fn eval_v(&self, x: &CMat) -> CVec {
        debug_assert_eq!(x.nrows(), self.dim);
        // tr(S_i X) = σ_iᵀ vec(Xᵀ) with column-major vec.
        let xt = x.transpose();
        let x_vec = CVec::from_column_slice(xt.as_slice());
        self.factor.tr_mul(&x_vec)
    }

    /// `‖v(qq^H)‖²`, the trace-operator route to the echo-power integral
    /// (without its physical prefactor).
    pub fn f_of_phase_vector(&self, q: &CVec) -> f64 {
        let outer = q * q.adjoint();
        self.eval_v(&outer).norm_squared()
    }

    /// The Hermitian surrogate matrix `Υ_{X_k}` with
    /// `tr(Υ_{X_k} X) = ⟨ṽ(X_k), ṽ(X)⟩ / ‖ṽ(X_k)‖`: exact at the expansion
    /// point and a global lower bound on `‖v(X)‖₂` by convexity.
    pub fn upsilon(&self, x_k: &CMat) -> Result<CMat> {
        let t = self.eval_v(x_k);
        let norm = t.norm();
        if norm <= 1e-300 || norm <= 1e-15 * x_k.norm() * self.factor.norm() {
            return Err(Error::InvalidInput(
                "surrogate expansion point has v(X_k) = 0".into(),
            ));
        }
        let re: CVec = t.map(|z| C64::new(z.re, 0.0));
        let im: CVec = t.map(|z| C64::new(z.im, 0.0));
        let a1 = self.unvec(&(&self.factor * re));
        let a2 = self.unvec(&(&self.factor * im));
        let j = C64::new(0.0, 1.0);
        let upsilon = (&a1 + a1.adjoint() - (&a2 - a2.adjoint()) * j).scale(1.0 / (2.0 * norm));
        Ok((upsilon.adjoint() + &upsilon).scale(0.5))
    }

    fn unvec(&self, sigma: &DVector<C64>) -> CMat {
        CMat::from_column_slice(self.dim, self.dim, sigma.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::trace_product_re;
    use crate::quadrature::QuadratureRule;
    use crate::scenario::{
        sample_channels, upa_steering, ArrayConfig, ChannelParams, Direction, Geometry,
        UnitCellModel,
    };
    use crate::sensing::SensingGrid;
    use nalgebra::Vector3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    struct Setup {
        geometry: Geometry,
        arrays: ArrayConfig,
        channels: ChannelSet,
        grid: SensingGrid,
        region: SensingRegion,
    }

    fn setup(m: usize, n_x: usize, n_y: usize, divisions: usize, seed: u64) -> Setup {
        let geometry = Geometry::from_positions(
            Vector3::new(0.0, 0.0, 18.0),
            Vector3::new(2.0, 10.0, 12.0),
            Vector3::new(-30.0, 80.0, 25.0),
        )
        .unwrap();
        let arrays = ArrayConfig::new(m, n_x, n_y, 0.1199);
        let params = ChannelParams {
            kappa: 10.0,
            zeta0: 1e-3,
            alpha_br: 2.2,
            alpha_ru: 2.2,
            alpha_bu: 3.5,
            sigma_comm_sq: 1e-8,
            sigma_sense_sq: 1e-9,
            pure_los: false,
        };
        let channels = sample_channels(&geometry, &arrays, &params, seed);
        let region = SensingRegion::new(
            Direction::new(0.38 * PI, 0.44 * PI),
            8.0,
            PI / 16.0,
            PI / 16.0,
        )
        .unwrap();
        let rule = QuadratureRule::with_divisions(divisions);
        let grid = SensingGrid::build(&region, &rule, &arrays, &geometry, UnitCellModel::Constant);
        Setup {
            geometry,
            arrays,
            channels,
            grid,
            region,
        }
    }

    fn random_unit_modulus(rng: &mut ChaCha8Rng, n: usize) -> CVec {
        CVec::from_fn(n, |_, _| C64::from_polar(1.0, rng.gen::<f64>() * 2.0 * PI))
    }

    fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
        CVec::from_fn(n, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> CMat {
        let f = CMat::from_fn(n, rank, |_, _| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let m = &f * f.adjoint();
        (m.adjoint() + &m).scale(0.5)
    }

    /// Independent evaluation of the double-quadratic integral: builds the
    /// per-node auxiliary matrices with explicit loops (including the
    /// transpose on the beamformer side) and applies trapezoid weights by
    /// hand.
    fn direct_f(setup: &Setup, omega: &CVec, w_c: &CVec, w_s: &CVec, w_rx: &CVec, div: usize) -> f64 {
        let n = setup.arrays.n();
        let m = setup.arrays.m;
        let (t_lo, t_hi, p_lo, p_hi) = setup.region.integration_bounds();
        let ht = (t_hi - t_lo) / div as f64;
        let hp = (p_hi - p_lo) / div as f64;
        let mut total = 0.0;
        for it in 0..=div {
            for ip in 0..=div {
                let theta = t_lo + ht * it as f64;
                let phi = p_lo + hp * ip as f64;
                let wt = if it == 0 || it == div { ht / 2.0 } else { ht };
                let wp = if ip == 0 || ip == div { hp / 2.0 } else { hp };
                let a = upa_steering(
                    setup.arrays.n_x,
                    setup.arrays.n_y,
                    setup.arrays.d,
                    setup.arrays.lambda,
                    theta,
                    phi,
                );
                let g_in = crate::scenario::unit_cell_response(
                    UnitCellModel::Constant,
                    setup.geometry.ris_incident,
                    Direction::new(theta, phi),
                    setup.arrays.lambda,
                );
                let g_out = crate::scenario::unit_cell_response(
                    UnitCellModel::Constant,
                    Direction::new(theta, phi),
                    setup.geometry.ris_incident,
                    setup.arrays.lambda,
                );
                // A(θ,φ) = |g_in|² [diag(a^H) H (W_c+W_s) H^H diag(a)]^T
                let mut a_mat = CMat::zeros(n, n);
                for w in [w_c, w_s] {
                    let mut hv = vec![C64::new(0.0, 0.0); n];
                    for i in 0..n {
                        for j in 0..m {
                            hv[i] += setup.channels.h_br[(i, j)] * w[j];
                        }
                    }
                    for r in 0..n {
                        for c in 0..n {
                            // transposed entry: inner[c, r]
                            a_mat[(r, c)] +=
                                a[c].conj() * hv[c] * (a[r].conj() * hv[r]).conj();
                        }
                    }
                }
                a_mat *= C64::new(g_in * g_in, 0.0);
                // B(θ,φ) = |g_out|² diag(a^H) H w_rx w_rx^H H^H diag(a) sinθ
                let mut hv_rx = vec![C64::new(0.0, 0.0); n];
                for i in 0..n {
                    for j in 0..m {
                        hv_rx[i] += setup.channels.h_br[(i, j)] * w_rx[j];
                    }
                }
                let mut b_mat = CMat::zeros(n, n);
                for r in 0..n {
                    for c in 0..n {
                        b_mat[(r, c)] = a[r].conj() * hv_rx[r] * (a[c].conj() * hv_rx[c]).conj();
                    }
                }
                b_mat *= C64::new(g_out * g_out * theta.sin(), 0.0);
                let qa = (omega.adjoint() * &a_mat * omega)[(0, 0)].re;
                let qb = (omega.adjoint() * &b_mat * omega)[(0, 0)].re;
                total += wt * wp * qa * qb;
            }
        }
        total
    }

    #[test]
    fn proposition1_identity_on_random_phases() {
        let s = setup(4, 4, 2, 12, 101);
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let w_c = random_cvec(&mut rng, 4);
        let w_s = random_cvec(&mut rng, 4);
        let w_rx_raw = random_cvec(&mut rng, 4);
        let w_rx = &w_rx_raw / C64::new(w_rx_raw.norm(), 0.0);
        let ops = build_sensing_operators(&w_c, &w_s, &w_rx, &s.grid, &s.channels).unwrap();
        for trial in 0..10 {
            let omega = random_unit_modulus(&mut rng, 8);
            let mut q = CVec::zeros(9);
            for i in 0..8 {
                q[i] = omega[i];
            }
            q[8] = C64::new(1.0, 0.0);
            let via_v = ops.f_of_phase_vector(&q);
            let direct = direct_f(&s, &omega, &w_c, &w_s, &w_rx, 12);
            assert!(
                (via_v - direct).abs() <= 1e-8 * direct.abs().max(1e-300),
                "trial {trial}: {via_v:.12e} vs {direct:.12e}"
            );
        }
    }

    #[test]
    fn kernel_is_hermitian_psd_after_floor() {
        let s = setup(3, 2, 2, 10, 107);
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        let w_c = random_cvec(&mut rng, 3);
        let w_s = random_cvec(&mut rng, 3);
        let w_rx_raw = random_cvec(&mut rng, 3);
        let w_rx = &w_rx_raw / C64::new(w_rx_raw.norm(), 0.0);
        let ops = build_sensing_operators(&w_c, &w_s, &w_rx, &s.grid, &s.channels).unwrap();
        assert!((ops.k_matrix.adjoint() - &ops.k_matrix).norm() < 1e-10 * ops.k_matrix.norm());
        let eig = hermitian_eig(&ops.k_matrix).unwrap();
        assert!(eig.eigenvalues[eig.eigenvalues.len() - 1] >= -1e-9 * eig.eigenvalues[0]);
        // Reconstruction from the clipped factors matches the kernel.
        let recon = &ops.factor * ops.factor.adjoint();
        assert!((recon - &ops.k_matrix).norm() < 1e-9 * ops.k_matrix.norm().max(1e-300));
    }

    #[test]
    fn single_element_micro_case() {
        // N = 1: f(q) collapses to a scalar product computable by hand.
        let s = setup(2, 1, 1, 8, 113);
        let mut rng = ChaCha8Rng::seed_from_u64(127);
        let w_c = random_cvec(&mut rng, 2);
        let w_s = random_cvec(&mut rng, 2);
        let w_rx_raw = random_cvec(&mut rng, 2);
        let w_rx = &w_rx_raw / C64::new(w_rx_raw.norm(), 0.0);
        let ops = build_sensing_operators(&w_c, &w_s, &w_rx, &s.grid, &s.channels).unwrap();
        let omega = random_unit_modulus(&mut rng, 1);
        let mut q = CVec::zeros(2);
        q[0] = omega[0];
        q[1] = C64::new(1.0, 0.0);
        let via_v = ops.f_of_phase_vector(&q);
        let direct = direct_f(&s, &omega, &w_c, &w_s, &w_rx, 8);
        assert!((via_v - direct).abs() <= 1e-10 * direct.abs().max(1e-300));
    }

    #[test]
    fn eval_v_zero_and_linearity() {
        let s = setup(3, 2, 2, 8, 131);
        let mut rng = ChaCha8Rng::seed_from_u64(137);
        let w_c = random_cvec(&mut rng, 3);
        let w_s = random_cvec(&mut rng, 3);
        let w_rx_raw = random_cvec(&mut rng, 3);
        let w_rx = &w_rx_raw / C64::new(w_rx_raw.norm(), 0.0);
        let ops = build_sensing_operators(&w_c, &w_s, &w_rx, &s.grid, &s.channels).unwrap();
        let dim = ops.dim;
        assert!(ops.eval_v(&CMat::zeros(dim, dim)).norm() == 0.0);
        let x = random_psd(&mut rng, dim, 2);
        let y = random_psd(&mut rng, dim, 3);
        let combo = ops.eval_v(&(&x * C64::new(1.7, 0.0) + &y * C64::new(-0.4, 0.0)));
        let split = ops.eval_v(&x) * C64::new(1.7, 0.0) + ops.eval_v(&y) * C64::new(-0.4, 0.0);
        assert!((combo - split).norm() < 1e-10);
        // Against the direct trace definition.
        let v = ops.eval_v(&x);
        for i in (0..dim * dim).step_by(7) {
            let mut tr = C64::new(0.0, 0.0);
            for a in 0..dim {
                for b in 0..dim {
                    tr += ops.s_list[i][(a, b)] * x[(b, a)];
                }
            }
            assert!((v[i] - tr).norm() < 1e-10 * tr.norm().max(1e-12));
        }
    }

    #[test]
    fn upsilon_exact_at_expansion_point() {
        let s = setup(3, 2, 2, 8, 139);
        let mut rng = ChaCha8Rng::seed_from_u64(149);
        let w_c = random_cvec(&mut rng, 3);
        let w_s = random_cvec(&mut rng, 3);
        let w_rx_raw = random_cvec(&mut rng, 3);
        let w_rx = &w_rx_raw / C64::new(w_rx_raw.norm(), 0.0);
        let ops = build_sensing_operators(&w_c, &w_s, &w_rx, &s.grid, &s.channels).unwrap();
        for _ in 0..5 {
            let x_k = random_psd(&mut rng, ops.dim, 2);
            let upsilon = ops.upsilon(&x_k).unwrap();
            assert!((upsilon.adjoint() - &upsilon).norm() < 1e-12 * upsilon.norm());
            let lhs = trace_product_re(&upsilon, &x_k);
            let rhs = ops.eval_v(&x_k).norm();
            assert!(
                (lhs - rhs).abs() <= 1e-9 * rhs.max(1e-300),
                "{lhs:.12e} vs {rhs:.12e}"
            );
        }
    }

    #[test]
    fn upsilon_minorizes_the_norm() {
        let s = setup(3, 2, 2, 8, 151);
        let mut rng = ChaCha8Rng::seed_from_u64(157);
        let w_c = random_cvec(&mut rng, 3);
        let w_s = random_cvec(&mut rng, 3);
        let w_rx_raw = random_cvec(&mut rng, 3);
        let w_rx = &w_rx_raw / C64::new(w_rx_raw.norm(), 0.0);
        let ops = build_sensing_operators(&w_c, &w_s, &w_rx, &s.grid, &s.channels).unwrap();
        let x_k = random_psd(&mut rng, ops.dim, 2);
        let upsilon = ops.upsilon(&x_k).unwrap();
        for trial in 0..20 {
            let x = random_psd(&mut rng, ops.dim, 1 + trial % 3);
            let lower = trace_product_re(&upsilon, &x);
            let norm = ops.eval_v(&x).norm();
            assert!(
                lower <= norm + 1e-9 * norm.max(1.0),
                "trial {trial}: {lower:.9e} > {norm:.9e}"
            );
        }
    }

    #[test]
    fn upsilon_rejects_degenerate_expansion_point() {
        let s = setup(3, 2, 2, 8, 163);
        let mut rng = ChaCha8Rng::seed_from_u64(167);
        let w_c = random_cvec(&mut rng, 3);
        let w_s = random_cvec(&mut rng, 3);
        let w_rx_raw = random_cvec(&mut rng, 3);
        let w_rx = &w_rx_raw / C64::new(w_rx_raw.norm(), 0.0);
        let ops = build_sensing_operators(&w_c, &w_s, &w_rx, &s.grid, &s.channels).unwrap();
        assert!(ops.upsilon(&CMat::zeros(ops.dim, ops.dim)).is_err());
    }

    #[test]
    fn parallel_and_sequential_kernels_agree() {
        let mut s = setup(3, 2, 2, 12, 173);
        let mut rng = ChaCha8Rng::seed_from_u64(179);
        let w_c = random_cvec(&mut rng, 3);
        let w_s = random_cvec(&mut rng, 3);
        let w_rx_raw = random_cvec(&mut rng, 3);
        let w_rx = &w_rx_raw / C64::new(w_rx_raw.norm(), 0.0);
        s.grid.exec = ExecMode::Sequential;
        let seq = build_sensing_operators(&w_c, &w_s, &w_rx, &s.grid, &s.channels).unwrap();
        s.grid.exec = ExecMode::Parallel;
        let par = build_sensing_operators(&w_c, &w_s, &w_rx, &s.grid, &s.channels).unwrap();
        assert_eq!(seq.k_matrix, par.k_matrix);
    }
}
