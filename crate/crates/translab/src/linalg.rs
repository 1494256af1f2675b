//! Dense complex matrix helpers on top of `ndarray` / LAPACK.

use crate::{Error, Result, C64};
use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};

/// Hermitian eigendecomposition `m = v diag(w) v^H`.
///
/// ndarray-linalg 0.16 hands row-major storage to LAPACK as column-major,
/// so the backend sees `m^T = conj(m)`; feeding the conjugate makes the
/// returned vectors eigenvectors of `m` itself.
pub fn eigh(m: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    let (w, v) = m.mapv(|z| z.conj()).eigh(UPLO::Lower)?;
    Ok((w, v))
}

/// Hermiticity defect `max |m - m^H|`.
pub fn herm_defect(m: &Array2<C64>) -> f64 {
    let mh = adjoint(m);
    max_abs(&(m - &mh))
}

pub fn adjoint(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|v| v.conj())
}

pub fn max_abs(m: &Array2<C64>) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

pub fn fro_norm(m: &Array2<C64>) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Spectral norm estimate by power iteration on `m^H m`.
pub fn op_norm_est(m: &Array2<C64>, iters: usize) -> f64 {
    let n = m.ncols();
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(n, C64::new(1.0, 0.0));
    let mut norm = 0.0;
    for _ in 0..iters {
        let w = m.dot(&v);
        let u = adjoint(m).dot(&w);
        norm = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().sqrt();
        let s = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if s == 0.0 {
            return 0.0;
        }
        v = u.mapv(|z| z / s);
    }
    norm
}

/// `f(m)` for Hermitian `m` via the spectral theorem.
pub fn herm_fun(m: &Array2<C64>, f: impl Fn(f64) -> C64) -> Result<Array2<C64>> {
    let (w, v) = eigh(m)?;
    Ok(apply_spectral(&w, &v, f))
}

/// Assemble `v diag(f(w)) v^H` from precomputed spectral data.
pub fn apply_spectral(w: &Array1<f64>, v: &Array2<C64>, f: impl Fn(f64) -> C64) -> Array2<C64> {
    let n = w.len();
    let mut scaled = v.clone();
    for j in 0..n {
        let fj = f(w[j]);
        scaled.column_mut(j).mapv_inplace(|z| z * fj);
    }
    scaled.dot(&adjoint(v))
}

/// Least-squares polynomial fit `y ~ sum_k coef[k] s^k` of degree `deg`.
/// Returns the coefficients (complex) lowest order first.
pub fn poly_fit(s: &[f64], y: &[C64], deg: usize) -> Result<Vec<C64>> {
    assert!(s.len() == y.len() && s.len() >= deg + 1);
    let n = s.len();
    let m = deg + 1;
    let mut a = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            a[(i, j)] = s[i].powi(j as i32);
        }
    }
    // normal equations; the s-grids used here are tiny and well scaled
    let at = a.t();
    let ata = at.dot(&a);
    let cond = condition_sym(&ata)?;
    if cond > 1e8 {
        return Err(Error::FitIllConditioned(cond));
    }
    let atac = ata.mapv(|v| C64::new(v, 0.0));
    let rhs_re = at.dot(&Array1::from_iter(y.iter().map(|v| v.re)));
    let rhs_im = at.dot(&Array1::from_iter(y.iter().map(|v| v.im)));
    let rhs = Array1::from_iter(rhs_re.iter().zip(rhs_im.iter()).map(|(r, i)| C64::new(*r, *i)));
    let sol = solve(&atac, &rhs)?;
    Ok(sol.to_vec())
}

fn condition_sym(a: &Array2<f64>) -> Result<f64> {
    let ac = a.mapv(|v| C64::new(v, 0.0));
    let (w, _) = eigh(&ac)?;
    let max = w.iter().cloned().fold(f64::MIN, f64::max).abs();
    let min = w.iter().cloned().fold(f64::MAX, f64::min).abs();
    Ok(if min == 0.0 { f64::INFINITY } else { max / min })
}

/// Solve a small dense complex system by Gaussian elimination with partial
/// pivoting (sizes here are <= a dozen).
pub fn solve(a: &Array2<C64>, b: &Array1<C64>) -> Result<Array1<C64>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut rhs = b.clone();
    for col in 0..n {
        let mut piv = col;
        let mut best = m[(col, col)].norm();
        for r in col + 1..n {
            if m[(r, col)].norm() > best {
                best = m[(r, col)].norm();
                piv = r;
            }
        }
        if best == 0.0 {
            return Err(Error::Linalg("singular system in solve".into()));
        }
        if piv != col {
            for c in 0..n {
                let tmp = m[(col, c)];
                m[(col, c)] = m[(piv, c)];
                m[(piv, c)] = tmp;
            }
            rhs.swap(col, piv);
        }
        for r in col + 1..n {
            let factor = m[(r, col)] / m[(col, col)];
            for c in col..n {
                let v = m[(col, c)];
                m[(r, c)] -= factor * v;
            }
            let v = rhs[col];
            rhs[r] -= factor * v;
        }
    }
    let mut x = Array1::from_elem(n, C64::default());
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc -= m[(r, c)] * x[c];
        }
        x[r] = acc / m[(r, r)];
    }
    Ok(x)
}

/// Inverse of a small dense complex matrix (column-by-column solve).
pub fn solve_matrix(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    let mut out = Array2::zeros((n, n));
    for c in 0..n {
        let mut e = Array1::from_elem(n, C64::default());
        e[c] = C64::new(1.0, 0.0);
        let col = solve(a, &e)?;
        for r in 0..n {
            out[(r, c)] = col[r];
        }
    }
    Ok(out)
}

/// Slope of the least-squares line through `(log x, log y)`.
/// Returns `(slope, residual_rms)`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.max(1e-300).ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let e = y - (slope * x + icept);
            e * e
        })
        .sum::<f64>()
        / n;
    (slope, res.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn eigh_and_matrix_sqrt() {
        let m = array![
            [C64::new(2.0, 0.0), C64::new(0.0, -1.0)],
            [C64::new(0.0, 1.0), C64::new(3.0, 0.0)]
        ];
        let s = herm_fun(&m, |w| C64::new(w.sqrt(), 0.0)).unwrap();
        let back = s.dot(&s);
        assert_abs_diff_eq!(max_abs(&(&back - &m)), 0.0, epsilon = 1e-12);
    }


    #[test]
    fn quadratic_fit_recovers_coeffs() {
        let s = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<C64> = s
            .iter()
            .map(|s| C64::new(1.0 + 2.0 * s * s, -0.5 * s))
            .collect();
        let c = poly_fit(&s, &y, 2).unwrap();
        assert_abs_diff_eq!(c[0].re, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c[1].im, -0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(c[2].re, 2.0, epsilon = 1e-10);
    }
}
