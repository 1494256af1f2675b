//! Uniform periodic grids on `T^q` (q = 1, 2) with spectral differentiation.
//!
//! Grid data is the workhorse representation for derived geometric fields
//! (orthonormal frames, connection coefficients) whose analytic form involves
//! inverse square roots of the input trigonometric polynomials.  For smooth
//! periodic data the FFT-based derivative is exact to machine precision once
//! the grid resolves the spectrum.

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;

/// Signed Fourier mode for index `i` on an `n`-point grid.
pub fn signed_mode(i: usize, n: usize) -> i32 {
    let i = i as i32;
    let n = n as i32;
    if i <= n / 2 {
        i
    } else {
        i - n
    }
}

fn fft(vals: &[C64], inverse: bool) -> Vec<C64> {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(vals.len())
    } else {
        planner.plan_fft_forward(vals.len())
    };
    let mut buf = vals.to_vec();
    fft.process(&mut buf);
    if inverse {
        let scale = 1.0 / vals.len() as f64;
        for v in &mut buf {
            *v *= scale;
        }
    }
    buf
}

/// A scalar complex field sampled on the uniform grid `y_i = 2*pi*i/n` of
/// `T^q`.  Values are stored row-major: index = i1 * n + i2 for q = 2.
#[derive(Debug, Clone)]
pub struct GridScalar {
    pub q: usize,
    pub n: usize,
    pub vals: Vec<C64>,
}

impl GridScalar {
    pub fn from_fn(q: usize, n: usize, f: impl Fn([f64; 2]) -> C64) -> Self {
        assert!(q == 1 || q == 2);
        let len = if q == 1 { n } else { n * n };
        let mut vals = Vec::with_capacity(len);
        let h = 2.0 * std::f64::consts::PI / n as f64;
        if q == 1 {
            for i in 0..n {
                vals.push(f([i as f64 * h, 0.0]));
            }
        } else {
            for i1 in 0..n {
                for i2 in 0..n {
                    vals.push(f([i1 as f64 * h, i2 as f64 * h]));
                }
            }
        }
        GridScalar { q, n, vals }
    }

    pub fn from_real_fn(q: usize, n: usize, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self::from_fn(q, n, |y| C64::new(f(y), 0.0))
    }

    pub fn zeros(q: usize, n: usize) -> Self {
        Self::from_fn(q, n, |_| C64::new(0.0, 0.0))
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        let h = 2.0 * std::f64::consts::PI / self.n as f64;
        let mut out = Vec::with_capacity(self.vals.len());
        if self.q == 1 {
            for i in 0..self.n {
                out.push([i as f64 * h, 0.0]);
            }
        } else {
            for i1 in 0..self.n {
                for i2 in 0..self.n {
                    out.push([i1 as f64 * h, i2 as f64 * h]);
                }
            }
        }
        out
    }

    /// Forward Fourier coefficients indexed like the grid (unnormalized
    /// convention: value = sum_k coef[k] e^{i k.y}).
    pub fn modes(&self) -> Vec<C64> {
        match self.q {
            1 => {
                let mut m = fft(&self.vals, false);
                let scale = 1.0 / self.n as f64;
                for v in &mut m {
                    *v *= scale;
                }
                m
            }
            2 => {
                let n = self.n;
                let mut tmp = vec![C64::default(); n * n];
                // rows
                for i1 in 0..n {
                    let row: Vec<C64> = (0..n).map(|i2| self.vals[i1 * n + i2]).collect();
                    let tr = fft(&row, false);
                    for i2 in 0..n {
                        tmp[i1 * n + i2] = tr[i2];
                    }
                }
                // columns
                let mut out = vec![C64::default(); n * n];
                for i2 in 0..n {
                    let col: Vec<C64> = (0..n).map(|i1| tmp[i1 * n + i2]).collect();
                    let tc = fft(&col, false);
                    for i1 in 0..n {
                        out[i1 * n + i2] = tc[i1] / (n * n) as f64;
                    }
                }
                out
            }
            _ => unreachable!(),
        }
    }

    pub fn from_modes(q: usize, n: usize, modes: &[C64]) -> Self {
        match q {
            1 => {
                let scaled: Vec<C64> = modes.iter().map(|v| *v * n as f64).collect();
                let vals = fft(&scaled, true);
                GridScalar { q, n, vals }
            }
            2 => {
                let mut tmp = vec![C64::default(); n * n];
                for i2 in 0..n {
                    let col: Vec<C64> = (0..n).map(|i1| modes[i1 * n + i2] * (n * n) as f64).collect();
                    let tc = fft(&col, true);
                    for i1 in 0..n {
                        tmp[i1 * n + i2] = tc[i1];
                    }
                }
                let mut vals = vec![C64::default(); n * n];
                for i1 in 0..n {
                    let row: Vec<C64> = (0..n).map(|i2| tmp[i1 * n + i2]).collect();
                    let tr = fft(&row, true);
                    for i2 in 0..n {
                        vals[i1 * n + i2] = tr[i2];
                    }
                }
                GridScalar { q, n, vals }
            }
            _ => unreachable!(),
        }
    }

    /// Spectral partial derivative along coordinate `dir` (0-based).
    pub fn derivative(&self, dir: usize) -> Self {
        let mut modes = self.modes();
        let n = self.n;
        if self.q == 1 {
            for (i, v) in modes.iter_mut().enumerate() {
                let k = signed_mode(i, n) as f64;
                *v *= C64::new(0.0, k);
            }
        } else {
            for i1 in 0..n {
                for i2 in 0..n {
                    let k = if dir == 0 {
                        signed_mode(i1, n)
                    } else {
                        signed_mode(i2, n)
                    } as f64;
                    modes[i1 * n + i2] *= C64::new(0.0, k);
                }
            }
        }
        Self::from_modes(self.q, n, &modes)
    }

    /// Nonzero Fourier modes above `threshold` as `(mode, coefficient)`.
    pub fn mode_list(&self, threshold: f64) -> Vec<([i32; 2], C64)> {
        let modes = self.modes();
        let n = self.n;
        let mut out = Vec::new();
        if self.q == 1 {
            for (i, v) in modes.iter().enumerate() {
                if v.norm() > threshold {
                    out.push(([signed_mode(i, n), 0], *v));
                }
            }
        } else {
            for i1 in 0..n {
                for i2 in 0..n {
                    let v = modes[i1 * n + i2];
                    if v.norm() > threshold {
                        out.push(([signed_mode(i1, n), signed_mode(i2, n)], v));
                    }
                }
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        GridScalar {
            q: self.q,
            n: self.n,
            vals: self.vals.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Self {
        assert_eq!(self.vals.len(), other.vals.len());
        GridScalar {
            q: self.q,
            n: self.n,
            vals: self
                .vals
                .iter()
                .zip(&other.vals)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Spectral derivative of periodic samples on a circle grid (used for the
/// direction dependence of symbols when q = 2).
pub fn circle_derivative(vals: &[C64]) -> Vec<C64> {
    let n = vals.len();
    let mut modes = fft(vals, false);
    for (i, v) in modes.iter_mut().enumerate() {
        let k = signed_mode(i, n) as f64;
        *v *= C64::new(0.0, k / n as f64);
    }
    fft(&modes, true).iter().map(|v| *v * n as f64).collect()
}

/// Trigonometric interpolation of periodic samples at angle `theta`.
pub fn circle_interp(vals: &[C64], theta: f64) -> C64 {
    let n = vals.len();
    let modes = fft(vals, false);
    let mut acc = C64::default();
    for (i, m) in modes.iter().enumerate() {
        let k = signed_mode(i, n) as f64;
        acc += *m / n as f64 * C64::new(0.0, k * theta).exp();
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spectral_derivative_is_exact_for_bandlimited_data() {
        let f = GridScalar::from_real_fn(1, 32, |y| (2.0 * y[0]).cos() + 0.3 * y[0].sin());
        let df = f.derivative(0);
        for (i, p) in f.points().iter().enumerate() {
            let want = -2.0 * (2.0 * p[0]).sin() + 0.3 * p[0].cos();
            assert_abs_diff_eq!(df.vals[i].re, want, epsilon = 1e-12);
            assert_abs_diff_eq!(df.vals[i].im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_dim_roundtrip_and_derivative() {
        let f = GridScalar::from_real_fn(2, 16, |y| (y[0] - 2.0 * y[1]).cos());
        let back = GridScalar::from_modes(2, 16, &f.modes());
        for (a, b) in f.vals.iter().zip(&back.vals) {
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-12);
        }
        let d1 = f.derivative(1);
        for (i, p) in f.points().iter().enumerate() {
            let want = 2.0 * (p[0] - 2.0 * p[1]).sin();
            assert_abs_diff_eq!(d1.vals[i].re, want, epsilon = 1e-11);
        }
    }

    #[test]
    fn mode_list_finds_the_spectrum() {
        let f = GridScalar::from_real_fn(1, 32, |y| 1.5 + (3.0 * y[0]).cos());
        let mut modes = f.mode_list(1e-12);
        modes.sort_by_key(|(m, _)| m[0]);
        let ks: Vec<i32> = modes.iter().map(|(m, _)| m[0]).collect();
        assert_eq!(ks, vec![-3, 0, 3]);
    }
}
