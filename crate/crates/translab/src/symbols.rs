//! Transverse symbol calculus on the fibration model.
//!
//! A classical transverse symbol is stored as a finite Fourier sum in the
//! two leaf coordinates and the transverse coordinate, tensored with a
//! truncated homogeneous expansion in the transverse covector:
//!
//! ```text
//!   k(x, x', y, eta) = sum_{a,b,c} sum_{j=0..J}
//!       khat_{a,b,c,j}(omega) e^{i(a.x + b.x' + c.y)} |eta|^{m-j},
//!   omega = eta / |eta|,
//! ```
//!
//! with matrix values of size `rank`.  Direction dependence is sampled on
//! `{+1, -1}` for q = 1 and on a uniform circle grid for q = 2 (derivatives
//! in the direction variable are spectral).  The formal leafwise
//! half-density factor `|dx|^{1/2} |dx'|^{1/2}` is trivialized by the flat
//! leafwise density of the model.
//!
//! Quantization follows the torus version of the defining kernel formula:
//! the operator acts on `e^{i(b.x + n.y)}` by pairing the `x'`-integral with
//! the leaf mode `-b` and evaluating the symbol at `eta = n`, with a
//! low-frequency excision `chi(n)` that removes the `n = 0` column.

use crate::grid::{circle_derivative, circle_interp};
use crate::operators::{mode_add, mode_neg, mode_norm, BlockOperator, Mode, ModeBox};
use crate::{Error, Result, C64};
use ndarray::Array2;
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Circle resolution for direction-dependent coefficients when q = 2.
pub const N_THETA: usize = 64;

pub fn n_dirs(q: usize) -> usize {
    if q == 1 {
        2
    } else {
        N_THETA
    }
}

/// Direction sample `idx` on the unit (co)sphere of R^q.
pub fn dir_at(q: usize, idx: usize) -> [f64; 2] {
    if q == 1 {
        if idx == 0 {
            [1.0, 0.0]
        } else {
            [-1.0, 0.0]
        }
    } else {
        let th = 2.0 * PI * idx as f64 / N_THETA as f64;
        [th.cos(), th.sin()]
    }
}

/// A direction-resolved r x r coefficient.
#[derive(Debug, Clone)]
pub struct DirCoef {
    pub q: usize,
    pub rank: usize,
    pub vals: Vec<Array2<C64>>,
}

impl DirCoef {
    pub fn zeros(q: usize, rank: usize) -> Self {
        DirCoef { q, rank, vals: vec![Array2::zeros((rank, rank)); n_dirs(q)] }
    }

    pub fn constant(q: usize, m: Array2<C64>) -> Self {
        let rank = m.nrows();
        DirCoef { q, rank, vals: vec![m; n_dirs(q)] }
    }

    pub fn constant_scalar(q: usize, v: C64) -> Self {
        Self::constant(q, Array2::from_elem((1, 1), v))
    }

    pub fn from_fn(q: usize, rank: usize, f: impl Fn([f64; 2]) -> Array2<C64>) -> Self {
        let vals = (0..n_dirs(q)).map(|i| f(dir_at(q, i))).collect();
        DirCoef { q, rank, vals }
    }

    /// Evaluate at an arbitrary unit direction (trigonometric interpolation
    /// for q = 2; sign selection for q = 1).
    pub fn eval(&self, omega: [f64; 2]) -> Array2<C64> {
        if self.q == 1 {
            if omega[0] >= 0.0 {
                self.vals[0].clone()
            } else {
                self.vals[1].clone()
            }
        } else {
            let theta = omega[1].atan2(omega[0]);
            let mut out = Array2::zeros((self.rank, self.rank));
            for r in 0..self.rank {
                for c in 0..self.rank {
                    let samples: Vec<C64> = self.vals.iter().map(|m| m[(r, c)]).collect();
                    out[(r, c)] = circle_interp(&samples, theta);
                }
            }
            out
        }
    }

    /// Spectral derivative in the circle angle (zero for q = 1, where
    /// 0-homogeneous data are locally constant in eta).
    pub fn theta_deriv(&self) -> Self {
        if self.q == 1 {
            return Self::zeros(self.q, self.rank);
        }
        let mut out = Self::zeros(self.q, self.rank);
        for r in 0..self.rank {
            for c in 0..self.rank {
                let samples: Vec<C64> = self.vals.iter().map(|m| m[(r, c)]).collect();
                let d = circle_derivative(&samples);
                for (i, v) in d.iter().enumerate() {
                    out.vals[i][(r, c)] = *v;
                }
            }
        }
        out
    }

    pub fn zip(&self, other: &Self, f: impl Fn(&Array2<C64>, &Array2<C64>) -> Array2<C64>) -> Self {
        DirCoef {
            q: self.q,
            rank: self.rank,
            vals: self.vals.iter().zip(&other.vals).map(|(a, b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn scale(&self, s: C64) -> Self {
        DirCoef { q: self.q, rank: self.rank, vals: self.vals.iter().map(|m| m.mapv(|v| v * s)).collect() }
    }

    /// Multiply pointwise by a scalar function of the direction.
    pub fn mul_dir_fn(&self, f: impl Fn([f64; 2]) -> C64) -> Self {
        let vals = self
            .vals
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let s = f(dir_at(self.q, i));
                m.mapv(|v| v * s)
            })
            .collect();
        DirCoef { q: self.q, rank: self.rank, vals }
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(crate::linalg::max_abs).fold(0.0, f64::max)
    }

    pub fn adjoint(&self) -> Self {
        DirCoef { q: self.q, rank: self.rank, vals: self.vals.iter().map(crate::linalg::adjoint).collect() }
    }
}

pub type SymKey = (Mode, Mode, Mode); // (a, b, c) leaf-row, leaf-col, transverse

/// Classical transverse symbol; see the module docs for the representation.
#[derive(Debug, Clone)]
pub struct TransverseSymbol {
    pub p: usize,
    pub q: usize,
    pub rank: usize,
    pub order: i32,
    pub depth: usize,
    pub terms: BTreeMap<SymKey, Vec<DirCoef>>,
}

impl TransverseSymbol {
    pub fn new(p: usize, q: usize, rank: usize, order: i32, depth: usize) -> Self {
        TransverseSymbol { p, q, rank, order, depth, terms: BTreeMap::new() }
    }

    pub fn add_term(&mut self, key: SymKey, j: usize, coef: DirCoef) {
        assert!(j <= self.depth);
        assert_eq!(coef.rank, self.rank);
        let levels = self
            .terms
            .entry(key)
            .or_insert_with(|| vec![DirCoef::zeros(self.q, self.rank); self.depth + 1]);
        levels[j] = levels[j].add(&coef);
    }

    /// Scalar convenience: constant-in-direction coefficient at level j.
    pub fn add_scalar_term(&mut self, key: SymKey, j: usize, v: C64) {
        let c = DirCoef::constant(self.q, Array2::from_elem((self.rank, self.rank), C64::default()))
            .zip(&DirCoef::zeros(self.q, self.rank), |_, _| {
                let mut m = Array2::zeros((self.rank, self.rank));
                for d in 0..self.rank {
                    m[(d, d)] = v;
                }
                m
            });
        self.add_term(key, j, c);
    }

    pub fn max_transverse_mode(&self) -> i32 {
        self.terms.keys().map(|(_, _, c)| c[0].abs().max(c[1].abs())).max().unwrap_or(0)
    }

    pub fn max_leaf_mode(&self) -> i32 {
        self.terms
            .keys()
            .map(|(a, b, _)| a[0].abs().max(a[1].abs()).max(b[0].abs()).max(b[1].abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        for levels in out.terms.values_mut() {
            for l in levels.iter_mut() {
                *l = l.scale(s);
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.order, other.order);
        let depth = self.depth.max(other.depth);
        let mut out = TransverseSymbol::new(self.p, self.q, self.rank, self.order, depth);
        for src in [self, other] {
            for (key, levels) in &src.terms {
                for (j, c) in levels.iter().enumerate() {
                    if c.max_abs() > 0.0 {
                        out.add_term(*key, j, c.clone());
                    }
                }
            }
        }
        out
    }

    /// Pointwise value at `(x, x', y)` and covector `eta`.
    pub fn eval(&self, x: [f64; 2], x2: [f64; 2], y: [f64; 2], eta: [f64; 2]) -> Array2<C64> {
        let norm = (eta[0] * eta[0] + eta[1] * eta[1]).sqrt();
        let omega = [eta[0] / norm, eta[1] / norm];
        let mut out = Array2::zeros((self.rank, self.rank));
        for ((a, b, c), levels) in &self.terms {
            let phase = a[0] as f64 * x[0]
                + a[1] as f64 * x[1]
                + b[0] as f64 * x2[0]
                + b[1] as f64 * x2[1]
                + c[0] as f64 * y[0]
                + c[1] as f64 * y[1];
            let e = C64::new(0.0, phase).exp();
            for (j, coef) in levels.iter().enumerate() {
                let mag = norm.powi(self.order - j as i32);
                let m = coef.eval(omega);
                out = out + m.mapv(|v| v * e * mag);
            }
        }
        out
    }

    /// Symbol adjoint `k*(x, x', y, eta) = k(x', x, y, eta)^H`:
    /// (a, b, c) -> (-b, -a, -c) with matrix adjoint.
    pub fn adjoint(&self) -> Self {
        let mut out = TransverseSymbol::new(self.p, self.q, self.rank, self.order, self.depth);
        for ((a, b, c), levels) in &self.terms {
            let key = (mode_neg(*b), mode_neg(*a), mode_neg(*c));
            for (j, coef) in levels.iter().enumerate() {
                out.add_term(key, j, coef.adjoint());
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.terms
            .values()
            .flat_map(|levels| levels.iter().map(DirCoef::max_abs))
            .fold(0.0, f64::max)
    }
}

/// Torus quantization of a transverse symbol on the given cutoffs.
pub fn quantize(k: &TransverseSymbol, lam_x: i32, lam: i32) -> Result<BlockOperator> {
    if lam < k.max_transverse_mode() + 2 {
        return Err(Error::CutoffTooSmall(format!(
            "lam = {lam} but the symbol has transverse modes up to {} (need +2 margin)",
            k.max_transverse_mode()
        )));
    }
    if lam_x < k.max_leaf_mode() {
        return Err(Error::CutoffTooSmall(format!(
            "lam_x = {lam_x} but the symbol has leaf modes up to {}",
            k.max_leaf_mode()
        )));
    }
    let mut op = BlockOperator::new(k.p, k.q, k.rank, lam_x, lam);
    let tbox = op.tbox();
    let scale = (2.0 * PI).powi(k.p as i32);
    for ((a, b, c), levels) in &k.terms {
        let col_leaf = mode_neg(*b);
        let row_leaf = *a;
        let block = op.block_mut(row_leaf, col_leaf);
        for (ni, n) in tbox.modes().iter().enumerate() {
            let norm = mode_norm(*n);
            if norm < 0.5 {
                continue; // chi excises the zero frequency
            }
            let m = mode_add(*n, *c);
            let Some(mi) = tbox.index(m) else { continue };
            let omega = [n[0] as f64 / norm, n[1] as f64 / norm];
            let mut val: Array2<C64> = Array2::zeros((k.rank, k.rank));
            for (j, coef) in levels.iter().enumerate() {
                let mag = norm.powi(k.order - j as i32);
                val = val + coef.eval(omega).mapv(|v| v * mag);
            }
            for r in 0..k.rank {
                for cc in 0..k.rank {
                    block[(mi * k.rank + r, ni * k.rank + cc)] += val[(r, cc)] * scale;
                }
            }
        }
    }
    Ok(op)
}

/// One extracted coefficient estimate.
#[derive(Debug, Clone)]
pub struct ProbeValue {
    pub key: SymKey,
    pub n: Mode,
    pub omega: [f64; 2],
    pub value: Array2<C64>,
}

/// Probe configuration for symbol extraction.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub lambda: i32,
    pub dirs: Vec<[f64; 2]>,
    pub keys: Vec<SymKey>,
    pub order: i32,
}

impl ProbeSet {
    pub fn q1(lambda: i32, keys: Vec<SymKey>, order: i32) -> Self {
        ProbeSet { lambda, dirs: vec![[1.0, 0.0], [-1.0, 0.0]], keys, order }
    }
}

fn probe_mode(lambda: i32, dir: [f64; 2], q: usize) -> Mode {
    if q == 1 {
        [if dir[0] >= 0.0 { lambda } else { -lambda }, 0]
    } else {
        [
            (lambda as f64 * dir[0]).round() as i32,
            (lambda as f64 * dir[1]).round() as i32,
        ]
    }
}

/// Leading-coefficient estimates from matrix elements at probe frequencies.
/// `khat_{a,b,c,0}(omega)` is read off the entry coupling the column
/// `(-b, n)` to the row `(a, n + c)` with `n ~ lambda * omega`.
pub fn extract_symbol(op: &BlockOperator, probes: &ProbeSet) -> Result<Vec<ProbeValue>> {
    if probes.lambda < (op.lam + 3) / 4 || probes.lambda > op.lam / 2 {
        return Err(Error::ProbeOutOfRange(format!(
            "lambda = {} outside [lam/4, lam/2] = [{}, {}]",
            probes.lambda,
            (op.lam + 3) / 4,
            op.lam / 2
        )));
    }
    extract_symbol_unchecked(op, probes)
}

/// Extraction without the accuracy-range guard (used by sweeps that probe
/// several scales of one operator).
pub fn extract_symbol_unchecked(op: &BlockOperator, probes: &ProbeSet) -> Result<Vec<ProbeValue>> {
    let tbox = op.tbox();
    let scale = (2.0 * PI).powi(-(op.p as i32));
    let mut out = Vec::new();
    for dir in &probes.dirs {
        let n = probe_mode(probes.lambda, *dir, op.q);
        let norm = mode_norm(n);
        if norm < 0.5 {
            return Err(Error::ProbeOutOfRange("probe hit the excised zero frequency".into()));
        }
        let omega = [n[0] as f64 / norm, n[1] as f64 / norm];
        for key in &probes.keys {
            let (a, b, c) = *key;
            let m = mode_add(n, c);
            if !tbox.contains(m) {
                return Err(Error::ProbeOutOfRange(format!(
                    "row mode {m:?} escapes the box at lambda = {}",
                    probes.lambda
                )));
            }
            let mut value = Array2::zeros((op.rank, op.rank));
            for r in 0..op.rank {
                for cc in 0..op.rank {
                    value[(r, cc)] = op.entry(a, m, r, mode_neg(b), n, cc);
                }
            }
            let mag = norm.powi(-probes.order);
            out.push(ProbeValue { key: *key, n, omega, value: value.mapv(|v| v * scale * mag) });
        }
    }
    Ok(out)
}

/// Richardson combination of estimates at scales lambda and 2 lambda,
/// canceling the leading 1/lambda contamination from the j = 1 level.
pub fn extract_richardson(
    op: &BlockOperator,
    probes: &ProbeSet,
) -> Result<Vec<ProbeValue>> {
    let coarse = extract_symbol_unchecked(op, probes)?;
    let fine_probes = ProbeSet { lambda: 2 * probes.lambda, ..probes.clone() };
    let fine = extract_symbol_unchecked(op, &fine_probes)?;
    Ok(coarse
        .into_iter()
        .zip(fine)
        .map(|(c, f)| ProbeValue {
            key: c.key,
            n: f.n,
            omega: f.omega,
            value: f.value.mapv(|v| v * 2.0) - &c.value,
        })
        .collect())
}

/// Monomial term of a scalar full symbol on the model chart.
#[derive(Debug, Clone)]
pub struct PolyTerm {
    pub x_mode: Mode,
    pub y_mode: Mode,
    pub xi_pow: [u32; 2],
    pub eta_pow: [u32; 2],
    pub coef: C64,
}

impl PolyTerm {
    pub fn momentum_degree(&self) -> u32 {
        self.xi_pow[0] + self.xi_pow[1] + self.eta_pow[0] + self.eta_pow[1]
    }
}

/// Scalar full symbol `b = b_m + b_{m-1}` with trigonometric-polynomial
/// coefficients and polynomial momentum dependence, used for the auxiliary
/// standard pseudodifferential operator in composition tests.
#[derive(Debug, Clone)]
pub struct ScalarFullSymbol {
    pub p: usize,
    pub q: usize,
    pub m2: i32,
    pub terms_m: Vec<PolyTerm>,
    pub terms_m1: Vec<PolyTerm>,
}

impl ScalarFullSymbol {
    pub fn new(p: usize, q: usize, m2: i32, terms_m: Vec<PolyTerm>, terms_m1: Vec<PolyTerm>) -> Self {
        for t in &terms_m {
            assert_eq!(t.momentum_degree() as i32, m2, "principal part must be homogeneous");
        }
        for t in &terms_m1 {
            assert_eq!(t.momentum_degree() as i32, m2 - 1, "subleading part must be homogeneous");
        }
        ScalarFullSymbol { p, q, m2, terms_m, terms_m1 }
    }

    /// Principal part must restrict to an x-independent function on the
    /// conormal bundle; returns it as eta-monomials.
    pub fn transverse_principal(&self) -> Result<Vec<PolyTerm>> {
        let mut out = Vec::new();
        for t in &self.terms_m {
            if t.xi_pow != [0, 0] {
                continue;
            }
            if t.x_mode != [0, 0] {
                return Err(Error::NotHolonomyInvariant(format!(
                    "principal symbol has x-mode {:?} on the conormal bundle",
                    t.x_mode
                )));
            }
            out.push(t.clone());
        }
        Ok(out)
    }

    /// Exact matrix of the left-quantized operator (tensored with the
    /// identity on a rank-`rank` bundle).
    pub fn quantize(&self, rank: usize, lam_x: i32, lam: i32) -> BlockOperator {
        let mut op = BlockOperator::new(self.p, self.q, rank, lam_x, lam);
        let tbox = op.tbox();
        let lbox = op.leaf_box();
        for t in self.terms_m.iter().chain(&self.terms_m1) {
            for a in lbox.modes() {
                let Some(_) = lbox.index(mode_add(a, t.x_mode)) else { continue };
                let row_leaf = mode_add(a, t.x_mode);
                for (ni, n) in tbox.modes().iter().enumerate() {
                    let m = mode_add(*n, t.y_mode);
                    let Some(mi) = tbox.index(m) else { continue };
                    let xi_fac = (a[0] as f64).powi(t.xi_pow[0] as i32)
                        * (a[1] as f64).powi(t.xi_pow[1] as i32);
                    let eta_fac = (n[0] as f64).powi(t.eta_pow[0] as i32)
                        * (n[1] as f64).powi(t.eta_pow[1] as i32);
                    let v = t.coef * xi_fac * eta_fac;
                    if v == C64::default() {
                        continue;
                    }
                    let block = op.block_mut(row_leaf, a);
                    for r in 0..rank {
                        block[(mi * rank + r, ni * rank + r)] += v;
                    }
                }
            }
        }
        op
    }
}

fn d_xi(terms: &[PolyTerm], j: usize) -> Vec<PolyTerm> {
    terms
        .iter()
        .filter(|t| t.xi_pow[j] > 0)
        .map(|t| {
            let mut out = t.clone();
            out.coef *= C64::new(out.xi_pow[j] as f64, 0.0);
            out.xi_pow[j] -= 1;
            out
        })
        .collect()
}

fn d_eta(terms: &[PolyTerm], l: usize) -> Vec<PolyTerm> {
    terms
        .iter()
        .filter(|t| t.eta_pow[l] > 0)
        .map(|t| {
            let mut out = t.clone();
            out.coef *= C64::new(out.eta_pow[l] as f64, 0.0);
            out.eta_pow[l] -= 1;
            out
        })
        .collect()
}

fn d_x(terms: &[PolyTerm], j: usize) -> Vec<PolyTerm> {
    terms
        .iter()
        .filter(|t| t.x_mode[j] != 0)
        .map(|t| {
            let mut out = t.clone();
            out.coef *= C64::new(0.0, out.x_mode[j] as f64);
            out
        })
        .collect()
}

fn d_y(terms: &[PolyTerm], l: usize) -> Vec<PolyTerm> {
    terms
        .iter()
        .filter(|t| t.y_mode[l] != 0)
        .map(|t| {
            let mut out = t.clone();
            out.coef *= C64::new(0.0, out.y_mode[l] as f64);
            out
        })
        .collect()
}

fn restrict_xi0(terms: &[PolyTerm]) -> Vec<PolyTerm> {
    terms.iter().filter(|t| t.xi_pow == [0, 0]).cloned().collect()
}

fn apply_multi<F: Fn(&[PolyTerm], usize) -> Vec<PolyTerm>>(
    terms: Vec<PolyTerm>,
    idx: [u32; 2],
    op: F,
) -> Vec<PolyTerm> {
    let mut cur = terms;
    for j in 0..2 {
        for _ in 0..idx[j] {
            cur = op(&cur, j);
        }
    }
    cur
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|v| v as f64).product::<f64>().max(1.0)
}

/// Accumulator over homogeneity degrees used while composing; converts to a
/// [`TransverseSymbol`] with the final order at the end.
struct HomogAcc {
    p: usize,
    q: usize,
    rank: usize,
    pieces: BTreeMap<(SymKey, i32), DirCoef>,
}

impl HomogAcc {
    fn new(p: usize, q: usize, rank: usize) -> Self {
        HomogAcc { p, q, rank, pieces: BTreeMap::new() }
    }

    fn add(&mut self, key: SymKey, degree: i32, coef: DirCoef) {
        if coef.max_abs() == 0.0 {
            return;
        }
        match self.pieces.get_mut(&(key, degree)) {
            Some(existing) => *existing = existing.add(&coef),
            None => {
                self.pieces.insert((key, degree), coef);
            }
        }
    }

    fn into_symbol(self, order: i32) -> TransverseSymbol {
        let min_degree = self.pieces.keys().map(|(_, d)| *d).min().unwrap_or(order);
        let depth = (order - min_degree).max(0) as usize;
        let mut out = TransverseSymbol::new(self.p, self.q, self.rank, order, depth);
        for ((key, degree), coef) in self.pieces {
            let j = (order - degree) as usize;
            out.add_term(key, j, coef);
        }
        out
    }
}

/// Iterated eta-derivative of a homogeneous piece `coef(omega) |eta|^s`.
/// Each application lowers the degree by one:
/// `d_{eta_l} [f(omega) |eta|^s] = |eta|^{s-1} (s w_l f + tau_l(theta) f')`
/// with `tau` the unit tangent of the circle (zero contribution for q = 1).
fn eta_deriv_piece(coef: &DirCoef, degree: i32, l: usize) -> (DirCoef, i32) {
    let radial = coef.mul_dir_fn(|w| C64::new(degree as f64 * w[l], 0.0));
    let out = if coef.q == 2 {
        let tangential = coef.theta_deriv().mul_dir_fn(|w| {
            let tau = [-w[1], w[0]];
            C64::new(tau[l], 0.0)
        });
        radial.add(&tangential)
    } else {
        radial
    };
    (out, degree - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComposeSide {
    /// Symbol of `quantize(k) . Op(b)` (the auxiliary operator acts first).
    Right,
    /// Symbol of `Op(b) . quantize(k)`.
    Left,
}

/// Composition expansion truncated at combined derivative order `n_order`.
///
/// For `Left` (B acting after A) the expansion is
/// `sum (1/a!b!) (d_xi^a d_eta^b b)(x, y, 0, eta) . D_x^a D_y^b k`;
/// for `Right` it is
/// `sum (1/a!b!) (-1)^|a| D_{x'}^a [ d_eta^b k . (D_y^b d_xi^a b)(x', y, 0, eta) ]`,
/// with the outer leaf derivative acting on the product.  Both forms are
/// validated against exact operator products at matrix level.
pub fn compose(
    k: &TransverseSymbol,
    b: &ScalarFullSymbol,
    side: ComposeSide,
    n_order: usize,
) -> Result<TransverseSymbol> {
    if n_order > k.depth {
        return Err(Error::TruncationDepthExceeded { requested: n_order, depth: k.depth });
    }
    let order = k.order + b.m2;
    let mut acc = HomogAcc::new(k.p, k.q, k.rank);
    let all_b: Vec<PolyTerm> = b.terms_m.iter().chain(&b.terms_m1).cloned().collect();

    let alphas = multi_indices(k.p, n_order);
    let betas = multi_indices(k.q, n_order);
    for al in &alphas {
        for be in &betas {
            let total = (al[0] + al[1] + be[0] + be[1]) as usize;
            if total > n_order {
                continue;
            }
            let w = 1.0 / (factorial(al[0]) * factorial(al[1]) * factorial(be[0]) * factorial(be[1]));
            match side {
                ComposeSide::Left => {
                    // (d_xi^al d_eta^be b)(x, y, 0, eta) . D_x^al D_y^be k
                    let bd = restrict_xi0(&apply_multi(
                        apply_multi(all_b.clone(), *al, d_xi),
                        *be,
                        d_eta,
                    ));
                    if bd.is_empty() {
                        continue;
                    }
                    for ((a, bb, c), levels) in &k.terms {
                        let kfac = (a[0] as f64).powi(al[0] as i32)
                            * (a[1] as f64).powi(al[1] as i32)
                            * (c[0] as f64).powi(be[0] as i32)
                            * (c[1] as f64).powi(be[1] as i32);
                        if kfac == 0.0 {
                            continue;
                        }
                        for (j, coef) in levels.iter().enumerate() {
                            if coef.max_abs() == 0.0 {
                                continue;
                            }
                            let kdeg = k.order - j as i32;
                            for t in &bd {
                                let gdeg = (t.eta_pow[0] + t.eta_pow[1]) as i32;
                                let scaled = coef.mul_dir_fn(|wv| {
                                    t.coef
                                        * wv[0].powi(t.eta_pow[0] as i32)
                                        * wv[1].powi(t.eta_pow[1] as i32)
                                });
                                let key =
                                    (mode_add(*a, t.x_mode), *bb, mode_add(*c, t.y_mode));
                                acc.add(key, kdeg + gdeg, scaled.scale(C64::new(w * kfac, 0.0)));
                            }
                        }
                    }
                }
                ComposeSide::Right => {
                    // (-1)^|al| D_{x'}^al [ d_eta^be k . (D_y^be d_xi^al b)(x', y, 0, eta) ]
                    let bd = restrict_xi0(&apply_multi(
                        apply_multi(all_b.clone(), *al, d_xi),
                        *be,
                        d_y,
                    ));
                    if bd.is_empty() {
                        continue;
                    }
                    let sign = if (al[0] + al[1]) % 2 == 0 { 1.0 } else { -1.0 };
                    for ((a, bb, c), levels) in &k.terms {
                        for (j, coef) in levels.iter().enumerate() {
                            if coef.max_abs() == 0.0 {
                                continue;
                            }
                            // iterated eta derivative of the level
                            let mut piece = coef.clone();
                            let mut deg = k.order - j as i32;
                            let mut dead = false;
                            for l in 0..2 {
                                for _ in 0..be[l] {
                                    let (np, nd) = eta_deriv_piece(&piece, deg, l);
                                    piece = np;
                                    deg = nd;
                                    if piece.max_abs() == 0.0 {
                                        dead = true;
                                    }
                                }
                            }
                            if dead {
                                continue;
                            }
                            for t in &bd {
                                // b's x-mode lands on the x' slot
                                let new_b = mode_add(*bb, t.x_mode);
                                // outer D_{x'}^al picks the total x' mode
                                let dfac = (new_b[0] as f64).powi(al[0] as i32)
                                    * (new_b[1] as f64).powi(al[1] as i32);
                                if dfac == 0.0 && (al[0] + al[1]) > 0 {
                                    continue;
                                }
                                let gdeg = (t.eta_pow[0] + t.eta_pow[1]) as i32;
                                let scaled = piece.mul_dir_fn(|wv| {
                                    t.coef
                                        * wv[0].powi(t.eta_pow[0] as i32)
                                        * wv[1].powi(t.eta_pow[1] as i32)
                                });
                                let key = (*a, new_b, mode_add(*c, t.y_mode));
                                acc.add(
                                    key,
                                    deg + gdeg,
                                    scaled.scale(C64::new(w * sign * dfac, 0.0)),
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(acc.into_symbol(order))
}

fn multi_indices(dim: usize, max_total: usize) -> Vec<[u32; 2]> {
    let mut out = Vec::new();
    let cap = max_total as u32;
    if dim == 1 {
        for a in 0..=cap {
            out.push([a, 0]);
        }
    } else {
        for a in 0..=cap {
            for b in 0..=(cap - a) {
                out.push([a, b]);
            }
        }
    }
    out
}

/// The transverse subprincipal symbol of a scalar full symbol:
/// eta-homogeneous polynomial of degree m2 - 1 with x and y modes,
///
/// `sigma_sub = b_{m-1}|_{xi=0} - (1/2i) sum_j d2 b_m / dx_j dxi_j |_{xi=0}
///            - (1/2i) sum_l d2 sigma_B / dy_l deta_l`.
pub fn transverse_subprincipal(b: &ScalarFullSymbol) -> Result<Vec<PolyTerm>> {
    let sigma_b = b.transverse_principal()?; // validates holonomy invariance
    let mut out = restrict_xi0(&b.terms_m1);
    let half_i_inv = C64::new(0.0, 0.5); // -(1/2i) = +i/2
    for j in 0..b.p {
        let dd = restrict_xi0(&d_x(&d_xi(&b.terms_m, j), j));
        for t in dd {
            let mut t = t;
            t.coef *= half_i_inv;
            out.push(t);
        }
    }
    for l in 0..b.q {
        let dd = d_y(&d_eta(&sigma_b, l), l);
        for t in dd {
            let mut t = t;
            t.coef *= half_i_inv;
            out.push(t);
        }
    }
    Ok(out)
}

/// Commutator symbol `sigma([B, A])` at leading order, assembled from the
/// Hamiltonian field of the principal symbol, the half-density correction
/// terms and the subprincipal conjugation:
///
/// `(1/i) { H_b k + (1/2) sum_j [D_x d_xi b](x) k - (1/2) sum_j [D_{x'} d_xi b](x') k
///        + i (k . sigma_sub(x-leg) - sigma_sub(x'-leg) . k) }`.
///
/// The auxiliary symbol is scalar, so the conjugation ordering is immaterial
/// here; the expansion agrees with `compose(k,b,Left,1) - compose(k,b,Right,1)`
/// up to two orders below the leading one.
pub fn commutator_symbol(k: &TransverseSymbol, b: &ScalarFullSymbol) -> Result<TransverseSymbol> {
    let sigma_b = b.transverse_principal()?;
    let sigma_sub = transverse_subprincipal(b)?;
    let order = k.order + b.m2 - 1;
    let mut acc = HomogAcc::new(k.p, k.q, k.rank);
    let minus_i = C64::new(0.0, -1.0);

    // leaf drift terms: (1/i) d_xi_j b_m (x or x') d/dx_j or d/dx'_j of k
    for j in 0..k.p {
        let dxi = restrict_xi0(&d_xi(&b.terms_m, j));
        for ((a, bb, c), levels) in &k.terms {
            for (jl, coef) in levels.iter().enumerate() {
                if coef.max_abs() == 0.0 {
                    continue;
                }
                let kdeg = k.order - jl as i32;
                for t in &dxi {
                    let gdeg = (t.eta_pow[0] + t.eta_pow[1]) as i32;
                    let base = coef.mul_dir_fn(|wv| {
                        t.coef * wv[0].powi(t.eta_pow[0] as i32) * wv[1].powi(t.eta_pow[1] as i32)
                    });
                    // range leg: b's x-mode shifts a; d/dx_j k = i a_j k
                    let fx = C64::new(0.0, a[j] as f64) * minus_i;
                    acc.add(
                        (mode_add(*a, t.x_mode), *bb, mode_add(*c, t.y_mode)),
                        kdeg + gdeg,
                        base.scale(fx),
                    );
                    // source leg: shifts b; d/dx'_j k = i b_j k
                    let fxp = C64::new(0.0, bb[j] as f64) * minus_i;
                    acc.add(
                        (*a, mode_add(*bb, t.x_mode), mode_add(*c, t.y_mode)),
                        kdeg + gdeg,
                        base.scale(fxp),
                    );
                }
            }
        }
    }

    // transverse Hamiltonian part: (1/i) (d_eta sigma_B . d_y k - d_y sigma_B . d_eta k)
    for l in 0..k.q {
        let de = d_eta(&sigma_b, l);
        let dy = d_y(&sigma_b, l);
        for ((a, bb, c), levels) in &k.terms {
            for (jl, coef) in levels.iter().enumerate() {
                if coef.max_abs() == 0.0 {
                    continue;
                }
                let kdeg = k.order - jl as i32;
                // d_eta sigma_B . d_y k
                for t in &de {
                    let gdeg = (t.eta_pow[0] + t.eta_pow[1]) as i32;
                    let fy = C64::new(0.0, c[l] as f64) * minus_i;
                    let base = coef.mul_dir_fn(|wv| {
                        t.coef * wv[0].powi(t.eta_pow[0] as i32) * wv[1].powi(t.eta_pow[1] as i32)
                    });
                    acc.add((*a, *bb, mode_add(*c, t.y_mode)), kdeg + gdeg, base.scale(fy));
                }
                // - d_y sigma_B . d_eta k
                let (dk, ddeg) = eta_deriv_piece(coef, kdeg, l);
                if dk.max_abs() > 0.0 {
                    for t in &dy {
                        let gdeg = (t.eta_pow[0] + t.eta_pow[1]) as i32;
                        let base = dk.mul_dir_fn(|wv| {
                            t.coef
                                * wv[0].powi(t.eta_pow[0] as i32)
                                * wv[1].powi(t.eta_pow[1] as i32)
                        });
                        acc.add(
                            (*a, *bb, mode_add(*c, t.y_mode)),
                            ddeg + gdeg,
                            base.scale(minus_i * C64::new(-1.0, 0.0)),
                        );
                    }
                }
            }
        }
    }

    // half-density corrections: (1/2i)[D_x d_xi b](x) k - (1/2i)[D_{x'} d_xi b](x') k
    // with D = -i d, so the prefactor is (1/i)(1/2)(-i) = -1/2.
    for j in 0..k.p {
        let dd = restrict_xi0(&d_x(&d_xi(&b.terms_m, j), j));
        for t in &dd {
            let gdeg = (t.eta_pow[0] + t.eta_pow[1]) as i32;
            for ((a, bb, c), levels) in &k.terms {
                for (jl, coef) in levels.iter().enumerate() {
                    if coef.max_abs() == 0.0 {
                        continue;
                    }
                    let kdeg = k.order - jl as i32;
                    let base = coef.mul_dir_fn(|wv| {
                        t.coef * wv[0].powi(t.eta_pow[0] as i32) * wv[1].powi(t.eta_pow[1] as i32)
                    });
                    acc.add(
                        (mode_add(*a, t.x_mode), *bb, mode_add(*c, t.y_mode)),
                        kdeg + gdeg,
                        base.scale(C64::new(-0.5, 0.0)),
                    );
                    acc.add(
                        (*a, mode_add(*bb, t.x_mode), mode_add(*c, t.y_mode)),
                        kdeg + gdeg,
                        base.scale(C64::new(0.5, 0.0)),
                    );
                }
            }
        }
    }

    // subprincipal conjugation: k sigma_sub(x-leg) - sigma_sub(x'-leg) k
    for t in &sigma_sub {
        let gdeg = (t.eta_pow[0] + t.eta_pow[1]) as i32;
        for ((a, bb, c), levels) in &k.terms {
            for (jl, coef) in levels.iter().enumerate() {
                if coef.max_abs() == 0.0 {
                    continue;
                }
                let kdeg = k.order - jl as i32;
                let base = coef.mul_dir_fn(|wv| {
                    t.coef * wv[0].powi(t.eta_pow[0] as i32) * wv[1].powi(t.eta_pow[1] as i32)
                });
                acc.add(
                    (mode_add(*a, t.x_mode), *bb, mode_add(*c, t.y_mode)),
                    kdeg + gdeg,
                    base.clone(),
                );
                acc.add(
                    (*a, mode_add(*bb, t.x_mode), mode_add(*c, t.y_mode)),
                    kdeg + gdeg,
                    base.scale(C64::new(-1.0, 0.0)),
                );
            }
        }
    }

    Ok(acc.into_symbol(order))
}

/// Leafwise groupoid convolution of two symbols in the fibration model:
/// a finite contraction over leaf modes at matched transverse data,
/// `(k1 . k2)_{a,b,c} = (2 pi)^p sum_{m, c1+c2=c} k1_{a,m,c1} k2_{-m,b,c2}`.
pub fn convolve(k1: &TransverseSymbol, k2: &TransverseSymbol) -> TransverseSymbol {
    assert_eq!(k1.p, k2.p);
    assert_eq!(k1.q, k2.q);
    assert_eq!(k1.rank, k2.rank);
    let order = k1.order + k2.order;
    let scale = (2.0 * PI).powi(k1.p as i32);
    let mut acc = HomogAcc::new(k1.p, k1.q, k1.rank);
    for ((a1, b1, c1), levels1) in &k1.terms {
        for ((a2, b2, c2), levels2) in &k2.terms {
            if *a2 != mode_neg(*b1) {
                continue;
            }
            let key = (*a1, *b2, mode_add(*c1, *c2));
            for (j1, c1v) in levels1.iter().enumerate() {
                for (j2, c2v) in levels2.iter().enumerate() {
                    let prod = c1v.zip(c2v, |m1, m2| m1.dot(m2));
                    if prod.max_abs() == 0.0 {
                        continue;
                    }
                    let deg = (k1.order - j1 as i32) + (k2.order - j2 as i32);
                    acc.add(key, deg, prod.scale(C64::new(scale, 0.0)));
                }
            }
        }
    }
    acc.into_symbol(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_symbol(p: usize, q: usize, entries: &[(SymKey, usize, C64)], order: i32, depth: usize) -> TransverseSymbol {
        let mut k = TransverseSymbol::new(p, q, 1, order, depth);
        for (key, j, v) in entries {
            k.add_term(*key, *j, DirCoef::constant_scalar(q, *v));
        }
        k
    }

    #[test]
    fn quantize_constant_symbol_is_leafwise_averaging() {
        // k = (2 pi)^{-p}: e^{i(bx+ny)} -> delta_{b,0} chi(n) e^{iny}
        let norm = C64::new(1.0 / (2.0 * PI), 0.0);
        let k = scalar_symbol(1, 1, &[(([0, 0], [0, 0], [0, 0]), 0, norm)], 0, 0);
        let op = quantize(&k, 2, 8).unwrap();
        assert_abs_diff_eq!(
            op.entry([0, 0], [3, 0], 0, [0, 0], [3, 0], 0).re,
            1.0,
            epsilon = 1e-14
        );
        // chi kills the zero frequency
        assert_abs_diff_eq!(
            op.entry([0, 0], [0, 0], 0, [0, 0], [0, 0], 0).re,
            0.0,
            epsilon = 1e-14
        );
        // no other leaf blocks
        assert!(op.block([1, 0], [1, 0]).is_none());
    }

    #[test]
    fn quantize_leaf_phase_shifts_leaf_modes() {
        // k = e^{i(x - x')} (2pi)^{-1}: shifts leaf mode 1 to 1 (b = -1 pairs
        // with column leaf +1) -- identity on the leaf-mode-1 sector.
        let norm = C64::new(1.0 / (2.0 * PI), 0.0);
        let k = scalar_symbol(1, 1, &[(([1, 0], [-1, 0], [0, 0]), 0, norm)], 0, 0);
        let op = quantize(&k, 2, 8).unwrap();
        assert_abs_diff_eq!(
            op.entry([1, 0], [2, 0], 0, [1, 0], [2, 0], 0).re,
            1.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn quantize_respects_adjoints_on_retained_modes() {
        // order-0, depth-0, q=1 symbols: quantize(k)^H = quantize(k^*) away
        // from the sign boundary.
        let mut k = TransverseSymbol::new(1, 1, 1, 0, 0);
        for (key, vp, vm) in [
            ((([1, 0], [0, 0], [2, 0]), C64::new(0.3, 0.4), C64::new(-0.2, 0.1))),
            ((([0, 0], [-1, 0], [-1, 0]), C64::new(0.9, -0.5), C64::new(0.7, 0.2))),
        ] {
            k.add_term(key, 0, DirCoef { q: 1, rank: 1, vals: vec![
                Array2::from_elem((1, 1), vp),
                Array2::from_elem((1, 1), vm),
            ]});
        }
        let op_adj = quantize(&k, 2, 12).unwrap().adjoint();
        let op_star = quantize(&k.adjoint(), 2, 12).unwrap();
        let diff = op_adj.sub(&op_star).unwrap();
        // compare away from the box edge and from the excised low-frequency
        // band, where the chi cutoff makes the two sides differ by design
        let bx = diff.tbox();
        let mut worst: f64 = 0.0;
        for blk in diff.blocks.values() {
            for (mi, m) in bx.modes().iter().enumerate() {
                for (ni, n) in bx.modes().iter().enumerate() {
                    if m[0].abs() < 3 || n[0].abs() < 3 || m[0].abs() > 9 || n[0].abs() > 9 {
                        continue;
                    }
                    worst = worst.max(blk[(mi, ni)].norm());
                }
            }
        }
        assert!(worst < 1e-13, "defect {worst:.2e}");
    }

    #[test]
    fn extraction_roundtrips_leading_coefficients() {
        let mut k = TransverseSymbol::new(1, 1, 1, 0, 1);
        let keys = [
            ([0, 0], [0, 0], [1, 0]),
            ([1, 0], [0, 0], [0, 0]),
            ([0, 0], [-1, 0], [2, 0]),
        ];
        for (i, key) in keys.iter().enumerate() {
            k.add_term(*key, 0, DirCoef::constant_scalar(1, C64::new(0.5 + i as f64, -0.3)));
            k.add_term(*key, 1, DirCoef::constant_scalar(1, C64::new(-0.8, 0.1 * i as f64)));
        }
        let op = quantize(&k, 2, 64).unwrap();
        let probes = ProbeSet::q1(16, keys.to_vec(), 0);
        let vals16 = extract_symbol(&op, &probes).unwrap();
        let vals32 =
            extract_symbol(&op, &ProbeSet::q1(32, keys.to_vec(), 0)).unwrap();
        for (v16, v32) in vals16.iter().zip(&vals32) {
            let want = k.terms[&v16.key][0].eval(v16.omega)[(0, 0)];
            let e16 = (v16.value[(0, 0)] - want).norm();
            let e32 = (v32.value[(0, 0)] - want).norm();
            // error is the j=1 tail ~ 1/lambda
            assert!(e16 < 0.9 / 16.0 + 1e-12, "e16 = {e16:.3e}");
            assert!(e32 < 0.9 / 32.0 + 1e-12, "e32 = {e32:.3e}");
            assert!(e32 < 0.6 * e16, "no decay: {e16:.3e} -> {e32:.3e}");
            // Richardson kills the j=1 term entirely here (no j=2 level)
        }
        let rich = extract_richardson(&op, &probes).unwrap();
        for v in rich {
            let want = k.terms[&v.key][0].eval(v.omega)[(0, 0)];
            assert!((v.value[(0, 0)] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn extraction_is_linear() {
        let k1 = scalar_symbol(1, 1, &[(([0, 0], [0, 0], [1, 0]), 0, C64::new(1.0, 0.0))], 0, 0);
        let k2 = scalar_symbol(1, 1, &[(([0, 0], [0, 0], [1, 0]), 0, C64::new(0.0, 2.0))], 0, 0);
        let o1 = quantize(&k1, 1, 32).unwrap();
        let o2 = quantize(&k2, 1, 32).unwrap();
        let probes = ProbeSet::q1(8, vec![([0, 0], [0, 0], [1, 0])], 0);
        let sum = o1.add(&o2).unwrap();
        let vs = extract_symbol(&sum, &probes).unwrap();
        let v1 = extract_symbol(&o1, &probes).unwrap();
        let v2 = extract_symbol(&o2, &probes).unwrap();
        for ((s, a), b) in vs.iter().zip(&v1).zip(&v2) {
            let diff = (s.value[(0, 0)] - a.value[(0, 0)] - b.value[(0, 0)]).norm();
            assert!(diff < 1e-14);
        }
    }

    fn b_eta1(p: usize, q: usize) -> ScalarFullSymbol {
        ScalarFullSymbol::new(
            p,
            q,
            1,
            vec![PolyTerm {
                x_mode: [0, 0],
                y_mode: [0, 0],
                xi_pow: [0, 0],
                eta_pow: [1, 0],
                coef: C64::new(1.0, 0.0),
            }],
            vec![],
        )
    }

    #[test]
    fn compose_with_identity_is_identity() {
        let k = scalar_symbol(1, 1, &[(([1, 0], [0, 0], [1, 0]), 0, C64::new(0.7, 0.2))], 0, 2);
        let b_one = ScalarFullSymbol::new(
            1,
            1,
            0,
            vec![PolyTerm { x_mode: [0, 0], y_mode: [0, 0], xi_pow: [0, 0], eta_pow: [0, 0], coef: C64::new(1.0, 0.0) }],
            vec![],
        );
        for side in [ComposeSide::Left, ComposeSide::Right] {
            let out = compose(&k, &b_one, side, 2).unwrap();
            let d = out.eval([0.3, 0.0], [0.1, 0.0], [0.9, 0.0], [2.0, 0.0])
                - k.eval([0.3, 0.0], [0.1, 0.0], [0.9, 0.0], [2.0, 0.0]);
            assert!(crate::linalg::max_abs(&d) < 1e-12);
        }
    }

    #[test]
    fn compose_matches_exact_matrix_products() {
        // k with leaf and transverse structure, b = eta_1 (exact finite
        // expansions on both sides).
        let mut k = TransverseSymbol::new(1, 1, 1, 0, 2);
        k.add_term(([1, 0], [0, 0], [1, 0]), 0, DirCoef::constant_scalar(1, C64::new(0.7, 0.2)));
        k.add_term(([0, 0], [-1, 0], [2, 0]), 1, DirCoef::constant_scalar(1, C64::new(-0.4, 0.5)));
        let b = b_eta1(1, 1);
        let lam = 16;
        let lam_x = 2;
        let kop = quantize(&k, lam_x, lam).unwrap();
        let bop = b.quantize(1, lam_x, lam);
        for (side, want) in [
            (ComposeSide::Right, kop.matmul(&bop).unwrap()),
            (ComposeSide::Left, bop.matmul(&kop).unwrap()),
        ] {
            let comp = compose(&k, &b, side, 1).unwrap();
            let comp_op = quantize(&comp, lam_x, lam).unwrap();
            let diff = comp_op.sub(&want).unwrap();
            // interior agreement is exact: the expansion terminates for
            // polynomial b of degree 1
            assert!(
                diff.interior_max_abs(4) < 1e-12,
                "side {side:?}: defect {:.3e}",
                diff.interior_max_abs(4)
            );
        }
    }

    #[test]
    fn compose_leaf_momentum_sides() {
        // b = xi_1: BA = D_x k, AB = -D_{x'}[k] checked at operator level.
        let mut k = TransverseSymbol::new(1, 1, 1, 0, 1);
        k.add_term(([1, 0], [-1, 0], [1, 0]), 0, DirCoef::constant_scalar(1, C64::new(1.0, 0.0)));
        let b = ScalarFullSymbol::new(
            1,
            1,
            1,
            vec![PolyTerm { x_mode: [0, 0], y_mode: [0, 0], xi_pow: [1, 0], eta_pow: [0, 0], coef: C64::new(1.0, 0.0) }],
            vec![],
        );
        let lam = 12;
        let lam_x = 3;
        let kop = quantize(&k, lam_x, lam).unwrap();
        let bop = b.quantize(1, lam_x, lam);
        for (side, want) in [
            (ComposeSide::Left, bop.matmul(&kop).unwrap()),
            (ComposeSide::Right, kop.matmul(&bop).unwrap()),
        ] {
            let comp = compose(&k, &b, side, 1).unwrap();
            let comp_op = quantize(&comp, lam_x, lam).unwrap();
            let diff = comp_op.sub(&want).unwrap();
            assert!(
                diff.interior_max_abs(3) < 1e-12,
                "side {side:?}: defect {:.3e}",
                diff.interior_max_abs(3)
            );
        }
    }

    #[test]
    fn subprincipal_of_flat_laplacian_vanishes() {
        // b = eta^2 (q = 1): both correction terms vanish.
        let b = ScalarFullSymbol::new(
            1,
            1,
            2,
            vec![PolyTerm { x_mode: [0, 0], y_mode: [0, 0], xi_pow: [0, 0], eta_pow: [2, 0], coef: C64::new(1.0, 0.0) }],
            vec![],
        );
        let s = transverse_subprincipal(&b).unwrap();
        assert!(s.is_empty() || s.iter().all(|t| t.coef.norm() < 1e-15));
    }

    #[test]
    fn subprincipal_with_y_dependent_subleading() {
        // b_m = eta^2, b_{m-1} = cos(y) eta: sigma_sub = cos(y) eta + (i/2) d_y d_eta (eta^2)|.. = cos(y) eta
        // (the third term needs y-dependent principal data to fire).
        let b = ScalarFullSymbol::new(
            1,
            1,
            2,
            vec![PolyTerm { x_mode: [0, 0], y_mode: [0, 0], xi_pow: [0, 0], eta_pow: [2, 0], coef: C64::new(1.0, 0.0) }],
            vec![
                PolyTerm { x_mode: [0, 0], y_mode: [1, 0], xi_pow: [0, 0], eta_pow: [1, 0], coef: C64::new(0.5, 0.0) },
                PolyTerm { x_mode: [0, 0], y_mode: [-1, 0], xi_pow: [0, 0], eta_pow: [1, 0], coef: C64::new(0.5, 0.0) },
            ],
        );
        let s = transverse_subprincipal(&b).unwrap();
        assert_eq!(s.len(), 2);
        // now a y-dependent principal part: b_m = (1 + eps cos y) eta^2.
        let eps = 0.3;
        let b2 = ScalarFullSymbol::new(
            1,
            1,
            2,
            vec![
                PolyTerm { x_mode: [0, 0], y_mode: [0, 0], xi_pow: [0, 0], eta_pow: [2, 0], coef: C64::new(1.0, 0.0) },
                PolyTerm { x_mode: [0, 0], y_mode: [1, 0], xi_pow: [0, 0], eta_pow: [2, 0], coef: C64::new(eps / 2.0, 0.0) },
                PolyTerm { x_mode: [0, 0], y_mode: [-1, 0], xi_pow: [0, 0], eta_pow: [2, 0], coef: C64::new(eps / 2.0, 0.0) },
            ],
            vec![],
        );
        // sigma_sub = -(1/2i) d_y d_eta [eps cos(y) eta^2] = (i/2)(2 eta)(-eps sin y)~
        let s2 = transverse_subprincipal(&b2).unwrap();
        // evaluate at y = 0.7, eta = 3
        let y = 0.7_f64;
        let mut acc = C64::default();
        for t in &s2 {
            let phase = C64::new(0.0, t.y_mode[0] as f64 * y).exp();
            acc += t.coef * phase * 3.0_f64.powi(t.eta_pow[0] as i32);
        }
        // analytic: (i/2) * d_y(eps cos y) * d_eta(eta^2)=2eta -> (i/2)(-eps sin y)(2*3)
        let want = C64::new(0.0, -eps * y.sin() * 3.0);
        assert_abs_diff_eq!(acc.re, want.re, epsilon = 1e-12);
        assert_abs_diff_eq!(acc.im, want.im, epsilon = 1e-12);
    }

    #[test]
    fn subprincipal_rejects_non_invariant_principal() {
        let b = ScalarFullSymbol::new(
            1,
            1,
            1,
            vec![PolyTerm { x_mode: [1, 0], y_mode: [0, 0], xi_pow: [0, 0], eta_pow: [1, 0], coef: C64::new(1.0, 0.0) }],
            vec![],
        );
        assert!(matches!(transverse_subprincipal(&b), Err(Error::NotHolonomyInvariant(_))));
    }

    #[test]
    fn commutator_symbol_examples() {
        // b = eta_1, scalar k(y, eta): sigma([B,A]) = (1/i) d_y k
        let mut k = TransverseSymbol::new(1, 1, 1, 0, 1);
        k.add_term(([0, 0], [0, 0], [1, 0]), 0, DirCoef::constant_scalar(1, C64::new(1.0, 0.0)));
        let b = b_eta1(1, 1);
        let com = commutator_symbol(&k, &b).unwrap();
        // (1/i) d_y e^{icy} = (1/i)(ic) e^{icy} = c e^{icy}: coefficient c = 1
        let v = com.eval([0.0; 2], [0.0; 2], [0.5, 0.0], [2.0, 0.0])[(0, 0)];
        let want = C64::new(0.0, 0.5).exp(); // 1 * e^{i*0.5}
        assert_abs_diff_eq!(v.re, want.re, epsilon = 1e-12);
        assert_abs_diff_eq!(v.im, want.im, epsilon = 1e-12);
        // b constant: commutator vanishes
        let b_one = ScalarFullSymbol::new(
            1,
            1,
            0,
            vec![PolyTerm { x_mode: [0, 0], y_mode: [0, 0], xi_pow: [0, 0], eta_pow: [0, 0], coef: C64::new(1.0, 0.0) }],
            vec![],
        );
        let z = commutator_symbol(&k, &b_one).unwrap();
        assert!(z.max_abs() < 1e-14);
    }

    #[test]
    fn commutator_matches_compose_difference() {
        // symbolically: commutator_symbol = compose(Left,1) - compose(Right,1)
        // up to two orders below m1 + m2.
        let mut k = TransverseSymbol::new(1, 1, 1, 0, 2);
        k.add_term(([1, 0], [0, 0], [1, 0]), 0, DirCoef::constant_scalar(1, C64::new(0.4, -0.3)));
        k.add_term(([0, 0], [-1, 0], [2, 0]), 0, DirCoef::constant_scalar(1, C64::new(0.2, 0.6)));
        // b = (1 + 0.5 cos y) eta + subleading 0.3 sin(x) (x-dependent!)
        let b = ScalarFullSymbol::new(
            1,
            1,
            1,
            vec![
                PolyTerm { x_mode: [0, 0], y_mode: [0, 0], xi_pow: [0, 0], eta_pow: [1, 0], coef: C64::new(1.0, 0.0) },
                PolyTerm { x_mode: [0, 0], y_mode: [1, 0], xi_pow: [0, 0], eta_pow: [1, 0], coef: C64::new(0.25, 0.0) },
                PolyTerm { x_mode: [0, 0], y_mode: [-1, 0], xi_pow: [0, 0], eta_pow: [1, 0], coef: C64::new(0.25, 0.0) },
            ],
            vec![
                PolyTerm { x_mode: [1, 0], y_mode: [0, 0], xi_pow: [0, 0], eta_pow: [0, 0], coef: C64::new(0.0, -0.15) },
                PolyTerm { x_mode: [-1, 0], y_mode: [0, 0], xi_pow: [0, 0], eta_pow: [0, 0], coef: C64::new(0.0, 0.15) },
            ],
        );
        let com = commutator_symbol(&k, &b).unwrap();
        let left = compose(&k, &b, ComposeSide::Left, 1).unwrap();
        let right = compose(&k, &b, ComposeSide::Right, 1).unwrap();
        // compare leading coefficients: evaluate both at a large |eta| and
        // check the difference scales like |eta|^{m-2}.
        for eta_mag in [8.0, 16.0] {
            let z = ([0.3, 0.0], [1.2, 0.0], [0.8, 0.0]);
            let cv = com.eval(z.0, z.1, z.2, [eta_mag, 0.0]);
            let dv = left.eval(z.0, z.1, z.2, [eta_mag, 0.0])
                - right.eval(z.0, z.1, z.2, [eta_mag, 0.0]);
            let err = crate::linalg::max_abs(&(&cv - &dv));
            // commutator has order 0; two orders lower is |eta|^{-2}... but
            // truncation of compose at N=1 leaves |eta|^{-1} remainders.
            assert!(err < 3.0 / eta_mag, "eta = {eta_mag}: err = {err:.3e}");
        }
    }

    #[test]
    fn convolution_matches_matrix_product_at_leading_order() {
        let mut k1 = TransverseSymbol::new(1, 1, 1, 0, 0);
        k1.add_term(([1, 0], [0, 0], [1, 0]), 0, DirCoef::constant_scalar(1, C64::new(0.5, 0.1)));
        k1.add_term(([0, 0], [-1, 0], [0, 0]), 0, DirCoef::constant_scalar(1, C64::new(-0.3, 0.2)));
        let mut k2 = TransverseSymbol::new(1, 1, 1, 0, 0);
        k2.add_term(([0, 0], [0, 0], [1, 0]), 0, DirCoef::constant_scalar(1, C64::new(0.8, -0.4)));
        k2.add_term(([1, 0], [0, 0], [2, 0]), 0, DirCoef::constant_scalar(1, C64::new(0.1, 0.9)));
        let conv = convolve(&k1, &k2);
        let lam = 32;
        let prod = quantize(&k1, 2, lam)
            .unwrap()
            .matmul(&quantize(&k2, 2, lam).unwrap())
            .unwrap();
        let keys: Vec<SymKey> = conv.terms.keys().cloned().collect();
        let probes = ProbeSet::q1(16, keys, 0);
        for v in extract_symbol(&prod, &probes).unwrap() {
            let want = conv.terms[&v.key][0].eval(v.omega)[(0, 0)];
            let err = (v.value[(0, 0)] - want).norm();
            // y-mode shifts perturb the eta-evaluation at O(1/lambda)
            assert!(err < 0.4 / 16.0 + 1e-13, "err = {err:.3e}");
        }
    }
}
