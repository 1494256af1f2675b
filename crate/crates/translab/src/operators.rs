//! Truncated Fourier-basis operators.
//!
//! Basis functions are `e^{i(a.x + n.y)}` tensor bundle components, with
//! leaf modes `|a|_inf <= lam_x` and transverse modes `|n|_inf <= lam`.  A
//! [`BlockOperator`] stores one dense matrix over (transverse modes x rank)
//! per pair of leaf modes; model operators with x-independent coefficients
//! are block-diagonal over leaf modes.
//!
//! Operators of the form `sum_i f_i(y) (d/dy_k or 1)` are assembled exactly:
//! each term is a Toeplitz (mode-shift) matrix times a diagonal derivative
//! factor, which is the Galerkin matrix of the term whenever the coefficient
//! spectra are finite.

use crate::{Error, Result, C64};
use ndarray::Array2;
use std::collections::BTreeMap;

pub type Mode = [i32; 2];

pub const ZERO_MODE: Mode = [0, 0];

/// Sup-norm box of lattice modes in `dim` dimensions (dim = 1 uses the
/// first slot only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeBox {
    pub dim: usize,
    pub lam: i32,
}

impl ModeBox {
    pub fn new(dim: usize, lam: i32) -> Self {
        assert!(dim == 1 || dim == 2);
        assert!(lam >= 0);
        ModeBox { dim, lam }
    }

    pub fn span(&self) -> usize {
        (2 * self.lam + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.span().pow(self.dim as u32)
    }

    pub fn contains(&self, n: Mode) -> bool {
        let ok0 = n[0].abs() <= self.lam;
        let ok1 = if self.dim == 2 { n[1].abs() <= self.lam } else { n[1] == 0 };
        ok0 && ok1
    }

    pub fn index(&self, n: Mode) -> Option<usize> {
        if !self.contains(n) {
            return None;
        }
        let i0 = (n[0] + self.lam) as usize;
        Some(if self.dim == 1 { i0 } else { i0 * self.span() + (n[1] + self.lam) as usize })
    }

    pub fn mode_at(&self, idx: usize) -> Mode {
        if self.dim == 1 {
            [idx as i32 - self.lam, 0]
        } else {
            let s = self.span();
            [(idx / s) as i32 - self.lam, (idx % s) as i32 - self.lam]
        }
    }

    pub fn modes(&self) -> Vec<Mode> {
        (0..self.len()).map(|i| self.mode_at(i)).collect()
    }
}

pub fn mode_norm(n: Mode) -> f64 {
    ((n[0] as f64).powi(2) + (n[1] as f64).powi(2)).sqrt()
}

pub fn mode_add(a: Mode, b: Mode) -> Mode {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn mode_neg(a: Mode) -> Mode {
    [-a[0], -a[1]]
}

/// One first-order term `coef(y) * (d/dy_deriv or identity)` with a
/// matrix-valued trigonometric-polynomial coefficient.
#[derive(Debug, Clone)]
pub struct TermSpec {
    pub coef: Vec<(Mode, Array2<C64>)>,
    pub deriv: Option<usize>,
}

/// Exact Galerkin matrix of a sum of first-order terms on `bx` with bundle
/// rank `rank`.
pub fn assemble_first_order(bx: &ModeBox, rank: usize, terms: &[TermSpec]) -> Array2<C64> {
    let dim = bx.len() * rank;
    let mut out = Array2::<C64>::zeros((dim, dim));
    for term in terms {
        for (col_idx, n) in bx.modes().iter().enumerate() {
            let factor = match term.deriv {
                Some(k) => C64::new(0.0, n[k] as f64),
                None => C64::new(1.0, 0.0),
            };
            if factor == C64::default() {
                continue;
            }
            for (shift, mat) in &term.coef {
                if let Some(row_idx) = bx.index(mode_add(*n, *shift)) {
                    for r in 0..rank {
                        for c in 0..rank {
                            let v = mat[(r, c)] * factor;
                            if v != C64::default() {
                                out[(row_idx * rank + r, col_idx * rank + c)] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Dense matrix of multiplication by a matrix-valued trig polynomial.
pub fn assemble_mult(bx: &ModeBox, rank: usize, coef: &[(Mode, Array2<C64>)]) -> Array2<C64> {
    assemble_first_order(bx, rank, &[TermSpec { coef: coef.to_vec(), deriv: None }])
}

/// Operator in the truncated basis, block-structured over leaf-mode pairs.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    pub p: usize,
    pub q: usize,
    pub rank: usize,
    pub lam_x: i32,
    pub lam: i32,
    pub blocks: BTreeMap<(Mode, Mode), Array2<C64>>,
}

impl BlockOperator {
    pub fn new(p: usize, q: usize, rank: usize, lam_x: i32, lam: i32) -> Self {
        BlockOperator { p, q, rank, lam_x, lam, blocks: BTreeMap::new() }
    }

    pub fn tbox(&self) -> ModeBox {
        ModeBox::new(self.q, self.lam)
    }

    pub fn leaf_box(&self) -> ModeBox {
        ModeBox::new(self.p, self.lam_x)
    }

    pub fn block_dim(&self) -> usize {
        self.tbox().len() * self.rank
    }

    pub fn block(&self, a: Mode, b: Mode) -> Option<&Array2<C64>> {
        self.blocks.get(&(a, b))
    }

    pub fn block_mut(&mut self, a: Mode, b: Mode) -> &mut Array2<C64> {
        let dim = self.block_dim();
        self.blocks.entry((a, b)).or_insert_with(|| Array2::zeros((dim, dim)))
    }

    pub fn is_block_diagonal(&self) -> bool {
        self.blocks.keys().all(|(a, b)| a == b)
    }

    /// Entry at (row leaf a, row mode m, row component r; column leaf b,
    /// column mode n, column component c).
    pub fn entry(&self, a: Mode, m: Mode, r: usize, b: Mode, n: Mode, c: usize) -> C64 {
        let bx = self.tbox();
        match (self.block(a, b), bx.index(m), bx.index(n)) {
            (Some(blk), Some(mi), Some(ni)) => blk[(mi * self.rank + r, ni * self.rank + c)],
            _ => C64::default(),
        }
    }

    pub fn adjoint(&self) -> Self {
        let mut out = BlockOperator::new(self.p, self.q, self.rank, self.lam_x, self.lam);
        for ((a, b), m) in &self.blocks {
            out.blocks.insert((*b, *a), crate::linalg::adjoint(m));
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = self.clone();
        for (k, m) in &other.blocks {
            match out.blocks.get_mut(k) {
                Some(existing) => *existing += m,
                None => {
                    out.blocks.insert(*k, m.clone());
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = self.clone();
        for (k, m) in &other.blocks {
            match out.blocks.get_mut(k) {
                Some(existing) => *existing -= m,
                None => {
                    out.blocks.insert(*k, m.mapv(|v| -v));
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        for m in out.blocks.values_mut() {
            m.mapv_inplace(|v| v * s);
        }
        out
    }

    /// Block-wise matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = BlockOperator::new(self.p, self.q, self.rank, self.lam_x, self.lam);
        for ((a, m1), lhs) in &self.blocks {
            for ((m2, b), rhs) in &other.blocks {
                if m1 == m2 {
                    let prod = lhs.dot(rhs);
                    match out.blocks.get_mut(&(*a, *b)) {
                        Some(existing) => *existing += &prod,
                        None => {
                            out.blocks.insert((*a, *b), prod);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.p != other.p
            || self.q != other.q
            || self.rank != other.rank
            || self.lam != other.lam
            || self.lam_x != other.lam_x
        {
            return Err(Error::CutoffMismatch(format!(
                "(p,q,rank,lam_x,lam) = ({},{},{},{},{}) vs ({},{},{},{},{})",
                self.p, self.q, self.rank, self.lam_x, self.lam, other.p, other.q, other.rank,
                other.lam_x, other.lam
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.values().map(crate::linalg::max_abs).fold(0.0, f64::max)
    }

    pub fn fro_norm(&self) -> f64 {
        self.blocks
            .values()
            .map(|m| m.iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Frobenius norm over the columns whose transverse mode norm lies in
    /// `[lo, hi]` (all blocks).
    pub fn shell_col_norm(&self, lo: f64, hi: f64) -> f64 {
        let bx = self.tbox();
        let mut acc = 0.0;
        for blk in self.blocks.values() {
            for (ni, n) in bx.modes().iter().enumerate() {
                let norm = mode_norm(*n);
                if norm < lo || norm > hi {
                    continue;
                }
                for c in 0..self.rank {
                    let col = blk.column(ni * self.rank + c);
                    acc += col.iter().map(|v| v.norm_sqr()).sum::<f64>();
                }
            }
        }
        acc.sqrt()
    }

    /// Max entry over rows and columns whose transverse modes both lie in
    /// the interior box `|n|_inf <= lam - margin`.
    pub fn interior_max_abs(&self, margin: i32) -> f64 {
        let bx = self.tbox();
        let lim = self.lam - margin;
        let mut worst: f64 = 0.0;
        for blk in self.blocks.values() {
            for (mi, m) in bx.modes().iter().enumerate() {
                if m[0].abs() > lim || (self.q == 2 && m[1].abs() > lim) {
                    continue;
                }
                for (ni, n) in bx.modes().iter().enumerate() {
                    if n[0].abs() > lim || (self.q == 2 && n[1].abs() > lim) {
                        continue;
                    }
                    for r in 0..self.rank {
                        for c in 0..self.rank {
                            worst = worst.max(blk[(mi * self.rank + r, ni * self.rank + c)].norm());
                        }
                    }
                }
            }
        }
        worst
    }
}
