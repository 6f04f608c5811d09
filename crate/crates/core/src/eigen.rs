//! Eigenvalues of small complex Hermitian matrices via cyclic Jacobi rotations.
//!
//! The 4x4 manifold Hamiltonians are diagonalized thousands of times per fit,
//! so this is a fixed-size routine rather than a general-purpose solver.

use nalgebra::Matrix4;
use num_complex::Complex64;

const MAX_SWEEPS: usize = 64;

/// Sorted (ascending) real eigenvalues of a 4x4 complex Hermitian matrix.
///
/// The input is assumed Hermitian; only the values above the diagonal are
/// read for the off-diagonal updates, with the diagonal forced real.
pub fn hermitian_eigenvalues_4(matrix: &Matrix4<Complex64>) -> [f64; 4] {
    let mut a = *matrix;
    // Scale-aware convergence threshold.
    let scale: f64 = (0..4)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .map(|(i, j)| a[(i, j)].norm())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return [0.0; 4];
    }
    let tol = 1e-15 * scale;

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..4)
            .flat_map(|p| ((p + 1)..4).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)].norm())
            .sum();
        if off < tol {
            break;
        }
        for p in 0..3 {
            for q in (p + 1)..4 {
                rotate(&mut a, p, q, tol);
            }
        }
    }

    let mut evals = [a[(0, 0)].re, a[(1, 1)].re, a[(2, 2)].re, a[(3, 3)].re];
    evals.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    evals
}

/// One Jacobi rotation zeroing the (p, q) element of the Hermitian matrix.
fn rotate(a: &mut Matrix4<Complex64>, p: usize, q: usize, tol: f64) {
    let apq = a[(p, q)];
    let abs_apq = apq.norm();
    if abs_apq <= tol * 1e-2 {
        a[(p, q)] = Complex64::new(0.0, 0.0);
        a[(q, p)] = Complex64::new(0.0, 0.0);
        return;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let phase = apq / abs_apq;

    // tan of the rotation angle: the root of t^2 - 2 mu t - 1 = 0 with
    // |t| <= 1, written in its cancellation-free form
    let mu = (aqq - app) / (2.0 * abs_apq);
    let t = if mu >= 0.0 {
        -1.0 / (mu + (1.0 + mu * mu).sqrt())
    } else {
        1.0 / (-mu + (1.0 + mu * mu).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    // Unitary U: U[p][p] = c, U[p][q] = -s*phase, U[q][p] = s*conj(phase), U[q][q] = c.
    // Apply A <- U^H A U on rows/columns p and q.
    let cs = Complex64::new(c, 0.0);
    let sp = phase * s;

    for k in 0..4 {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = akp * cs + akq * sp.conj();
        let new_kq = -akp * sp + akq * cs;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp.conj();
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq.conj();
    }

    let new_pp = app * c * c + aqq * s * s + 2.0 * abs_apq * c * s;
    let new_qq = app * s * s + aqq * c * c - 2.0 * abs_apq * c * s;
    a[(p, p)] = Complex64::new(new_pp, 0.0);
    a[(q, q)] = Complex64::new(new_qq, 0.0);
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
}
