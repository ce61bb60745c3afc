//! Dense complex linear algebra on Hermitian matrices: eigendecomposition,
//! numerical rank, rank-one extraction, and the real embedding used to feed
//! complex semidefinite programs to the real solver.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Relative asymmetry ‖A − A^H‖ / ‖A‖ accepted by [`hermitian_eig`].
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Eigendecomposition of a Hermitian matrix.
///
/// Eigenvalues are real and sorted in descending order; the columns of
/// `eigenvectors` are the matching orthonormal eigenvectors, so that
/// `A = V diag(λ) V^H`.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: CMat,
}

/// Decomposes a Hermitian matrix, rejecting inputs whose relative asymmetry
/// exceeds [`HERMITIAN_TOL`]. The input is symmetrized before decomposition so
/// round-off level asymmetry cannot leak into the result.
pub fn hermitian_eig(a: &CMat) -> Result<HermitianEig> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidInput(format!(
            "hermitian_eig: matrix is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    let norm = a.norm();
    if norm > 0.0 {
        let asym = (a - a.adjoint()).norm() / norm;
        if asym > HERMITIAN_TOL {
            return Err(Error::NotHermitian {
                asymmetry: asym,
                tolerance: HERMITIAN_TOL,
            });
        }
    }
    let sym = (a + a.adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    // Sort descending by eigenvalue.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Counts eigenvalues above `tol · λ_max` for a Hermitian PSD matrix.
pub fn numerical_rank(a: &CMat, tol: f64) -> Result<usize> {
    let eig = hermitian_eig(a)?;
    let lam_max = eig.eigenvalues[0];
    if lam_max <= 0.0 {
        return Ok(0);
    }
    Ok(eig.eigenvalues.iter().filter(|&&l| l > tol * lam_max).count())
}

/// Extracts `q = sqrt(λ_max) v_max` from a Hermitian PSD matrix and rotates the
/// global phase so the entry at `reference_index` is real and positive.
///
/// This is the eigenvalue-decomposition recovery step applied to relaxed
/// rank-one variables; the reference entry anchors the `q = [ω; 1]` structure.
pub fn rank_one_recovery(q_mat: &CMat, reference_index: usize) -> Result<CVec> {
    let n = q_mat.nrows();
    if reference_index >= n {
        return Err(Error::InvalidInput(format!(
            "rank_one_recovery: reference index {reference_index} out of range for dimension {n}"
        )));
    }
    let eig = hermitian_eig(q_mat)?;
    let lam_max = eig.eigenvalues[0];
    let scale = q_mat.norm();
    if lam_max <= 0.0 || lam_max <= 1e-14 * scale {
        return Err(Error::ZeroMatrix);
    }
    let mut q: CVec = eig.eigenvectors.column(0).into_owned() * C64::new(lam_max.sqrt(), 0.0);
    let anchor = q[reference_index];
    if anchor.norm() <= 1e-12 * q.norm() {
        return Err(Error::InvalidInput(format!(
            "rank_one_recovery: reference entry {reference_index} is numerically zero"
        )));
    }
    let phase = anchor / C64::new(anchor.norm(), 0.0);
    q /= phase;
    Ok(q)
}

/// Real symmetric embedding of a complex Hermitian matrix:
/// `[Re(A) −Im(A); Im(A) Re(A)]`, of doubled dimension.
pub fn lift_hermitian(a: &CMat) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = a[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

/// Inverse of [`lift_hermitian`] with structural averaging: any real symmetric
/// matrix is projected onto the embedded-Hermitian subspace. For matrices that
/// already carry the `[Re −Im; Im Re]` structure this is exact.
pub fn unlift_hermitian(x: &DMatrix<f64>) -> CMat {
    let n2 = x.nrows();
    debug_assert_eq!(n2 % 2, 0);
    let n = n2 / 2;
    let mut out = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let re = 0.5 * (x[(i, j)] + x[(i + n, j + n)]);
            let im = 0.5 * (x[(i + n, j)] - x[(i, j + n)]);
            out[(i, j)] = C64::new(re, im);
        }
    }
    // Hermitian clean-up of round-off.
    let h = (out.adjoint() + &out).scale(0.5);
    h
}

/// `Re tr(A B)` for complex matrices, the inner product used by the trace-linear
/// forms (real by construction when both are Hermitian).
pub fn trace_product_re(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            let p = a[(i, k)] * b[(k, i)];
            acc += p.re;
        }
    }
    acc
}

/// Rank reduction on the optimal face of a trace-constrained SDP solution
/// (Sturm's procedure). Given a PSD `W` and Hermitian `constraints`, returns a
/// PSD matrix with the same trace inner products against every constraint and
/// rank r satisfying r² ≤ number of constraints (when reducible).
///
/// Used to realize tight semidefinite relaxations as genuine rank-one
/// beamformers without disturbing feasibility or objective value.
pub fn reduce_rank(w: &CMat, constraints: &[CMat]) -> Result<CMat> {
    let mut current = (w + w.adjoint()).scale(0.5);
    let rank_tol = 1e-9;
    for _ in 0..w.nrows() {
        let eig = hermitian_eig(&current)?;
        let lam_max = eig.eigenvalues[0].max(0.0);
        if lam_max == 0.0 {
            return Ok(current);
        }
        let kept: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&i| eig.eigenvalues[i] > rank_tol * lam_max)
            .collect();
        let r = kept.len();
        if r * r <= constraints.len() || r <= 1 {
            return Ok(current);
        }
        // Factor W = V V^H with V n×r.
        let n = current.nrows();
        let mut v = CMat::zeros(n, r);
        for (col, &i) in kept.iter().enumerate() {
            let scaled = eig.eigenvectors.column(i) * C64::new(eig.eigenvalues[i].sqrt(), 0.0);
            v.set_column(col, &scaled);
        }
        // Restricted constraint matrices B_j = V^H A_j V, then a nonzero
        // Hermitian Δ with tr(B_j Δ) = 0 for all j. Δ is parametrized by its
        // r real diagonal entries and r(r−1)/2 complex off-diagonals.
        let dof = r * r;
        let mut sys = DMatrix::<f64>::zeros(constraints.len(), dof);
        let restricted: Vec<CMat> = constraints.iter().map(|a| v.adjoint() * a * &v).collect();
        for (row, b) in restricted.iter().enumerate() {
            for p in 0..r {
                sys[(row, p)] = b[(p, p)].re;
            }
            let mut col = r;
            for p in 0..r {
                for q in (p + 1)..r {
                    sys[(row, col)] = 2.0 * b[(p, q)].re;
                    sys[(row, col + 1)] = 2.0 * b[(p, q)].im;
                    col += 2;
                }
            }
        }
        // Null direction: project a probe vector onto ker(sys) with the normal
        // equations (sys has at most `constraints.len()` rows, far fewer than dof).
        let mut gram = &sys * sys.transpose();
        let reg = gram.trace().max(1.0) * 1e-12;
        let m_rows = gram.nrows();
        gram += DMatrix::identity(m_rows, m_rows) * reg;
        let chol = match gram.cholesky() {
            Some(c) => c,
            None => return Ok(current),
        };
        let mut params = DVector::<f64>::zeros(dof);
        let mut found = false;
        for probe_id in 0..dof {
            let mut probe = DVector::<f64>::zeros(dof);
            probe[probe_id] = 1.0;
            let y = chol.solve(&(&sys * &probe));
            let null = probe - sys.transpose() * y;
            if null.norm() > 1e-6 && (&sys * &null).norm() < 1e-7 * (1.0 + sys.norm()) {
                params = null;
                found = true;
                break;
            }
        }
        if !found {
            return Ok(current);
        }
        let mut delta = CMat::zeros(r, r);
        for p in 0..r {
            delta[(p, p)] = C64::new(params[p], 0.0);
        }
        let mut col = r;
        for p in 0..r {
            for q in (p + 1)..r {
                let z = C64::new(params[col], params[col + 1]);
                delta[(p, q)] = z;
                delta[(q, p)] = z.conj();
                col += 2;
            }
        }
        let deig = hermitian_eig(&delta)?;
        // Extreme eigenvalue by magnitude.
        let lo = deig.eigenvalues[deig.eigenvalues.len() - 1];
        let hi = deig.eigenvalues[0];
        let pivot = if hi.abs() >= lo.abs() { hi } else { lo };
        if pivot.abs() < 1e-14 {
            return Ok(current);
        }
        let mut shrink = CMat::identity(r, r);
        shrink -= delta.scale(1.0 / pivot);
        current = &v * shrink * v.adjoint();
        current = (current.adjoint() + &current).scale(0.5);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_complex_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CMat {
        CMat::from_fn(n, m, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        let a = random_complex_matrix(rng, n, n);
        (&a + a.adjoint()).scale(0.5)
    }

    fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        let a = random_complex_matrix(rng, n, n);
        let qr = a.qr();
        qr.q()
    }

    #[test]
    fn identity_eigenvalues_are_ones() {
        let eig = hermitian_eig(&CMat::identity(3, 3)).unwrap();
        for i in 0..3 {
            assert!((eig.eigenvalues[i] - 1.0).abs() < 1e-14);
        }
        let gram = eig.eigenvectors.adjoint() * &eig.eigenvectors;
        assert!((gram - CMat::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn diagonal_matrix_sorted_descending() {
        let a = CMat::from_diagonal(&CVec::from_vec(vec![
            C64::new(2.0, 0.0),
            C64::new(-1.0, 0.0),
        ]));
        let eig = hermitian_eig(&a).unwrap();
        assert!((eig.eigenvalues[0] - 2.0).abs() < 1e-14);
        assert!((eig.eigenvalues[1] + 1.0).abs() < 1e-14);
        // Eigenvectors are permuted identity columns up to phase.
        for k in 0..2 {
            let col = eig.eigenvectors.column(k);
            let mags: Vec<f64> = col.iter().map(|z| z.norm()).collect();
            assert!((mags.iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_hermitian_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_hermitian(&mut rng, 5);
        let eig = hermitian_eig(&a).unwrap();
        let mut recon = CMat::zeros(5, 5);
        for k in 0..5 {
            let col = eig.eigenvectors.column(k).into_owned();
            recon += &col * col.adjoint() * C64::new(eig.eigenvalues[k], 0.0);
        }
        assert!((&a - recon).norm() < 1e-9 * a.norm().max(1.0));
        let gram = eig.eigenvectors.adjoint() * &eig.eigenvectors;
        assert!((gram - CMat::identity(5, 5)).norm() < 1e-10);
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut a = CMat::identity(3, 3);
        a[(0, 1)] = C64::new(0.5, 0.0);
        assert!(matches!(
            hermitian_eig(&a),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn spectrum_invariant_under_unitary_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_hermitian(&mut rng, 6);
        let u = random_unitary(&mut rng, 6);
        let b = &u * &a * u.adjoint();
        let ea = hermitian_eig(&a).unwrap();
        let eb = hermitian_eig(&b).unwrap();
        for i in 0..6 {
            assert!(
                (ea.eigenvalues[i] - eb.eigenvalues[i]).abs() < 1e-9 * a.norm().max(1.0),
                "spectra differ at {i}"
            );
        }
    }

    #[test]
    fn rank_of_outer_product_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut q = random_complex_matrix(&mut rng, 4, 1);
        q /= C64::new(q.norm(), 0.0);
        let outer = &q * q.adjoint();
        assert_eq!(numerical_rank(&outer, 1e-6).unwrap(), 1);
        assert_eq!(numerical_rank(&CMat::identity(4, 4), 1e-6).unwrap(), 4);
        let perturbed = &outer + CMat::identity(4, 4) * C64::new(1e-12, 0.0);
        assert_eq!(numerical_rank(&perturbed, 1e-6).unwrap(), 1);
    }

    #[test]
    fn rank_one_recovery_returns_direction_up_to_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_complex_matrix(&mut rng, 4, 1).column(0).into_owned();
        let outer = &q * q.adjoint();
        let rec = rank_one_recovery(&outer, 3).unwrap();
        // Same rank-one matrix regardless of global phase.
        assert!((&rec * rec.adjoint() - &outer).norm() < 1e-10 * outer.norm());
        assert!(rec[3].im.abs() < 1e-12 * rec.norm());
        assert!(rec[3].re > 0.0);
    }

    #[test]
    fn rank_one_recovery_diagonal_case() {
        let q = CMat::from_diagonal(&CVec::from_vec(vec![
            C64::new(4.0, 0.0),
            C64::new(0.0, 0.0),
        ]));
        let rec = rank_one_recovery(&q, 0).unwrap();
        assert!((rec[0] - C64::new(2.0, 0.0)).norm() < 1e-12);
        assert!(rec[1].norm() < 1e-12);
    }

    #[test]
    fn rank_one_recovery_rejects_zero() {
        let z = CMat::zeros(3, 3);
        assert!(matches!(rank_one_recovery(&z, 0), Err(Error::ZeroMatrix)));
    }

    #[test]
    fn rank_one_recovery_is_best_rank_one_approximant() {
        // Eckart–Young: residual of qq^H against a rank-2 PSD matrix equals the
        // norm of the trailing spectrum.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v1 = random_complex_matrix(&mut rng, 5, 1).column(0).into_owned();
        let v2 = random_complex_matrix(&mut rng, 5, 1).column(0).into_owned();
        let q = &v1 * v1.adjoint() * C64::new(3.0, 0.0) + &v2 * v2.adjoint() * C64::new(0.5, 0.0);
        let q = (q.adjoint() + &q).scale(0.5);
        let rec = rank_one_recovery(&q, 0).unwrap();
        let resid = (&rec * rec.adjoint() - &q).norm();
        let eig = hermitian_eig(&q).unwrap();
        let best: f64 = eig.eigenvalues.iter().skip(1).map(|l| l * l).sum::<f64>().sqrt();
        assert!((resid - best).abs() < 1e-9 * q.norm());
    }

    #[test]
    fn lift_roundtrip_and_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_hermitian(&mut rng, 4);
        let b = random_hermitian(&mut rng, 4);
        let la = lift_hermitian(&a);
        let lb = lift_hermitian(&b);
        assert!((unlift_hermitian(&la) - &a).norm() < 1e-14);
        // tr(lift(A) lift(B)) = 2 tr(A B)
        let lifted_trace = (la * lb).trace();
        let complex_trace = trace_product_re(&a, &b);
        assert!((lifted_trace - 2.0 * complex_trace).abs() < 1e-12 * (1.0 + complex_trace.abs()));
    }

    #[test]
    fn lift_preserves_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_complex_matrix(&mut rng, 4, 4);
        let psd = &a * a.adjoint();
        let lifted = lift_hermitian(&psd);
        let eig = lifted.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12 * psd.norm()));
    }

    #[test]
    fn reduce_rank_preserves_traces_and_reaches_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // Rank-3 PSD W with three constraint matrices.
        let f = random_complex_matrix(&mut rng, 5, 3);
        let w = &f * f.adjoint();
        let cons: Vec<CMat> = (0..3).map(|_| random_hermitian(&mut rng, 5)).collect();
        let before: Vec<f64> = cons.iter().map(|a| trace_product_re(a, &w)).collect();
        let reduced = reduce_rank(&w, &cons).unwrap();
        let after: Vec<f64> = cons.iter().map(|a| trace_product_re(a, &reduced)).collect();
        for (b, a) in before.iter().zip(after.iter()) {
            assert!((b - a).abs() < 1e-8 * (1.0 + b.abs()), "trace drifted: {b} -> {a}");
        }
        let eig = hermitian_eig(&reduced).unwrap();
        assert!(eig.eigenvalues[eig.eigenvalues.len() - 1] > -1e-9 * eig.eigenvalues[0].max(1e-300));
        assert!(numerical_rank(&reduced, 1e-7).unwrap() <= 1);
    }
}
