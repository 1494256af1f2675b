//! Transverse Dirac and signature operators for codimension q = 2.
//!
//! Spinors are the explicit rank-2 bundle with Clifford generators
//! `c_1 = i sigma_1`, `c_2 = i sigma_2` in the global frame trivialization;
//! the grading is `sigma_3`.  Operators act on half-densities through the
//! Riemannian volume trivialization: conjugating by `rho^{1/2}`
//! (`rho = sqrt(det g)`) turns the Fourier monomials into an orthonormal
//! basis, so matrix adjoints are operator adjoints and the adjoint identity
//! `(D')^* = D' - c(tau)` holds at matrix level exactly.  The conjugation
//! contributes `w_a = -(1/2) f_a(log rho)` to the zero-order slot
//!
//! ```text
//!   D' = sum_a c(f_a) [ f_a + spin_a + B_E(f_a) + w_a ],
//!   D  = D' - (1/2) c(tau).
//! ```
//!
//! Coefficient spectra of all slots are extracted from smooth fields and
//! pruned at machine precision, so assembly stays exact Galerkin.

use crate::field::{MatField, SmoothField};
use crate::geometry::{ConnectionData, FrameData, ModelGeometry};
use crate::linalg;
use crate::operators::{
    assemble_first_order, assemble_mult, mode_add, Mode, ModeBox, TermSpec,
};
use crate::{Error, Result, C64};
use ndarray::{Array1, Array2};

/// Clifford generators and grading for q = 2.
#[derive(Debug, Clone)]
pub struct CliffordData {
    pub c: [Array2<C64>; 2],
    pub grading: Array2<C64>,
}

impl CliffordData {
    pub fn standard() -> Self {
        let i = C64::new(0.0, 1.0);
        let zero = C64::default();
        let one = C64::new(1.0, 0.0);
        let c1 = ndarray::array![[zero, i], [i, zero]]; // i sigma_1
        let c2 = ndarray::array![[zero, one], [-one, zero]]; // i sigma_2
        let grading = ndarray::array![[one, zero], [zero, -one]]; // sigma_3
        CliffordData { c: [c1, c2], grading }
    }

    /// Max deviation from the Clifford relations, skew-adjointness of the
    /// generators and anticommutation with the grading.
    pub fn relation_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let anti = self.c[a].dot(&self.c[b]) + self.c[b].dot(&self.c[a]);
                let want = if a == b { -2.0 } else { 0.0 };
                let id = Array2::<C64>::eye(2).mapv(|v| v * want);
                worst = worst.max(linalg::max_abs(&(&anti - &id)));
            }
            worst = worst.max(linalg::max_abs(&(&linalg::adjoint(&self.c[a]) + &self.c[a])));
            let g_anti = self.grading.dot(&self.c[a]) + self.c[a].dot(&self.grading);
            worst = worst.max(linalg::max_abs(&g_anti));
        }
        worst
    }
}

/// Kronecker product with the second factor fast:
/// `out[(i*rb + k, j*rb + l)] = a[(i,j)] b[(k,l)]`.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = Array2::zeros((ra * rb, ca * cb));
    for i in 0..ra {
        for j in 0..ca {
            for k in 0..rb {
                for l in 0..cb {
                    out[(i * rb + k, j * rb + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Coefficient bundle data: rank and the connection one-form components
/// `B_k(y)` along `dy_k` (leafwise flat: no `dx` components).
#[derive(Debug, Clone)]
pub struct BundleData {
    pub rank: usize,
    pub b_forms: Vec<MatField>,
}

impl BundleData {
    pub fn trivial_line(q: usize, n: usize) -> Self {
        BundleData {
            rank: 1,
            b_forms: (0..q)
                .map(|_| MatField::from_entry_fn(q, n, 1, 1, |_, _, _| 0.0))
                .collect(),
        }
    }

    /// Max deviation of the connection coefficients from skew-adjointness.
    pub fn skew_defect(&self, probe: &SmoothField) -> f64 {
        let mut worst: f64 = 0.0;
        for b in &self.b_forms {
            for y in probe.grid.points().iter().step_by(7) {
                let m = b.eval(*y);
                worst = worst.max(linalg::max_abs(&(&linalg::adjoint(&m) + &m)));
            }
        }
        worst
    }
}

/// Spin-connection coefficients `spin_a = (1/4) sum_{b,g} Gamma^g_{ab} c_b c_g`
/// as 2x2 matrix fields.
pub fn spin_connection(
    conn: &ConnectionData,
    cliff: &CliffordData,
    n: usize,
) -> Result<Vec<MatField>> {
    if conn.q != 2 {
        return Err(Error::UnsupportedDimension {
            p: conn.p,
            q: conn.q,
            reason: "spin connection requires q = 2",
        });
    }
    let mut out = Vec::new();
    for al in 0..2 {
        let mut entries = vec![SmoothField::zero(2, n); 4];
        for be in 0..2 {
            for ga in 0..2 {
                let cc = cliff.c[be].dot(&cliff.c[ga]);
                let g = conn.gamma_at(al, be, ga);
                for r in 0..2 {
                    for c in 0..2 {
                        if cc[(r, c)] != C64::default() {
                            entries[r * 2 + c] = entries[r * 2 + c].add(&g.scale(cc[(r, c)] * 0.25));
                        }
                    }
                }
            }
        }
        out.push(MatField::from_fields(2, 2, entries));
    }
    Ok(out)
}

/// Residual of the Clifford compatibility `[spin_a, c(f_b)] = c(nabla_{f_a} f_b)`
/// over the grid.
pub fn spin_compatibility_defect(
    conn: &ConnectionData,
    cliff: &CliffordData,
    spin: &[MatField],
) -> f64 {
    let probe = &spin[0].entries[0];
    let mut worst: f64 = 0.0;
    for y in probe.grid.points().iter().step_by(5) {
        for al in 0..2 {
            let s = spin[al].eval(*y);
            for be in 0..2 {
                let lhs = s.dot(&cliff.c[be]) - cliff.c[be].dot(&s);
                let mut rhs = Array2::<C64>::zeros((2, 2));
                for ga in 0..2 {
                    let g = conn.gamma_at(al, be, ga).eval(*y);
                    rhs = rhs + cliff.c[ga].mapv(|v| v * g);
                }
                worst = worst.max(linalg::max_abs(&(&lhs - &rhs)));
            }
        }
    }
    worst
}

/// Matrix-coefficient polynomial symbol on the model chart (coefficients
/// depend on y only).
#[derive(Debug, Clone)]
pub struct MTerm {
    pub y_mode: Mode,
    pub xi_pow: [u32; 2],
    pub eta_pow: [u32; 2],
    pub coef: Array2<C64>,
}

impl MTerm {
    pub fn degree(&self) -> u32 {
        self.xi_pow[0] + self.xi_pow[1] + self.eta_pow[0] + self.eta_pow[1]
    }
}

#[derive(Debug, Clone)]
pub struct MPoly {
    pub rank: usize,
    pub terms: Vec<MTerm>,
}

impl MPoly {
    fn prune(mut self) -> Self {
        self.terms.retain(|t| linalg::max_abs(&t.coef) > 1e-14);
        self
    }

    /// Left-symbol product; exact because the momentum degree of the first
    /// factor is at most one here.
    pub fn kn_product(&self, other: &MPoly) -> MPoly {
        let mut terms = Vec::new();
        for s in &self.terms {
            for o in &other.terms {
                terms.push(MTerm {
                    y_mode: mode_add(s.y_mode, o.y_mode),
                    xi_pow: [s.xi_pow[0] + o.xi_pow[0], s.xi_pow[1] + o.xi_pow[1]],
                    eta_pow: [s.eta_pow[0] + o.eta_pow[0], s.eta_pow[1] + o.eta_pow[1]],
                    coef: s.coef.dot(&o.coef),
                });
            }
        }
        // + sum_l d_eta_l(self) . D_y_l(other); coefficients are y-only so
        // the xi/x pair contributes nothing.
        for l in 0..2 {
            for s in &self.terms {
                if s.eta_pow[l] == 0 {
                    continue;
                }
                let mut sd = s.clone();
                sd.coef = sd.coef.mapv(|v| v * sd.eta_pow[l] as f64);
                sd.eta_pow[l] -= 1;
                for o in &other.terms {
                    if o.y_mode[l] == 0 {
                        continue;
                    }
                    let fac = C64::new(0.0, -1.0) * C64::new(0.0, o.y_mode[l] as f64);
                    terms.push(MTerm {
                        y_mode: mode_add(sd.y_mode, o.y_mode),
                        xi_pow: [sd.xi_pow[0] + o.xi_pow[0], sd.xi_pow[1] + o.xi_pow[1]],
                        eta_pow: [sd.eta_pow[0] + o.eta_pow[0], sd.eta_pow[1] + o.eta_pow[1]],
                        coef: sd.coef.dot(&o.coef).mapv(|v| v * fac),
                    });
                }
            }
        }
        MPoly { rank: self.rank, terms }.prune()
    }

    pub fn graded_part(&self, degree: u32) -> MPoly {
        MPoly {
            rank: self.rank,
            terms: self.terms.iter().filter(|t| t.degree() == degree).cloned().collect(),
        }
    }

    pub fn restrict_xi0(&self) -> MPoly {
        MPoly {
            rank: self.rank,
            terms: self.terms.iter().filter(|t| t.xi_pow == [0, 0]).cloned().collect(),
        }
    }

    pub fn eval(&self, y: [f64; 2], xi: [f64; 2], eta: [f64; 2]) -> Array2<C64> {
        let mut out = Array2::zeros((self.rank, self.rank));
        for t in &self.terms {
            let phase = C64::new(0.0, t.y_mode[0] as f64 * y[0] + t.y_mode[1] as f64 * y[1]).exp();
            let mom = xi[0].powi(t.xi_pow[0] as i32)
                * xi[1].powi(t.xi_pow[1] as i32)
                * eta[0].powi(t.eta_pow[0] as i32)
                * eta[1].powi(t.eta_pow[1] as i32);
            out = out + t.coef.mapv(|v| v * phase * mom);
        }
        out
    }
}

fn mat_modes(field: &MatField) -> Vec<(Mode, Array2<C64>)> {
    let mut keys = std::collections::BTreeSet::new();
    for e in &field.entries {
        for (m, _) in e.modes() {
            keys.insert(*m);
        }
    }
    keys.into_iter()
        .map(|m| {
            let mut mat = Array2::zeros((field.rows, field.cols));
            for r in 0..field.rows {
                for c in 0..field.cols {
                    for (mm, v) in field.at(r, c).modes() {
                        if *mm == m {
                            mat[(r, c)] = *v;
                        }
                    }
                }
            }
            (m, mat)
        })
        .collect()
}

/// Assembled transverse Dirac data for one model geometry and coefficient
/// bundle.  Blocks are produced per leaf mode on demand.
pub struct DiracAssembly {
    pub geom: ModelGeometry,
    pub frames: FrameData,
    pub conn: ConnectionData,
    pub cliff: CliffordData,
    pub bundle: BundleData,
    pub rank_total: usize,
    pub lam: i32,
    /// Full zero-order slot per frame direction (spin + bundle + scalar
    /// half-density/mean-curvature parts), rank_total x rank_total.
    pub slots: Vec<MatField>,
    /// Spin part alone (2x2), kept for reporting.
    pub spin: Vec<MatField>,
    pub tau_f: Vec<SmoothField>,
    /// w_a = -(1/2) f_a(log rho).
    pub w: Vec<SmoothField>,
}

/// Build the transverse Dirac operator data on a q = 2 model.
pub fn build_dirac(
    geom: &ModelGeometry,
    frames: &FrameData,
    conn: &ConnectionData,
    bundle: &BundleData,
    lam: i32,
) -> Result<DiracAssembly> {
    if geom.q != 2 {
        return Err(Error::UnsupportedDimension {
            p: geom.p,
            q: geom.q,
            reason: "transverse Dirac requires q = 2",
        });
    }
    let n = geom.grid_n;
    let probe = SmoothField::zero(geom.q, n);
    let skew = bundle.skew_defect(&probe);
    if skew > 1e-10 {
        return Err(Error::NonHermitianConnection(skew));
    }
    let cliff = CliffordData::standard();
    let spin = spin_connection(conn, &cliff, n)?;
    let re = bundle.rank;
    let rank_total = 2 * re;
    let mut slots = Vec::new();
    let mut ws = Vec::new();
    for al in 0..2 {
        let w = frames.horizontal[al].apply(&geom.log_rho).scale(C64::new(-0.5, 0.0));
        let mut entries: Vec<SmoothField> = vec![SmoothField::zero(geom.q, n); rank_total * rank_total];
        for r in 0..rank_total {
            for c in 0..rank_total {
                let (er, sr) = (r / 2, r % 2);
                let (ec, sc) = (c / 2, c % 2);
                let mut acc = SmoothField::zero(geom.q, n);
                if er == ec {
                    acc = acc.add(spin[al].at(sr, sc));
                }
                if sr == sc {
                    for k in 0..2 {
                        acc = acc.add(&frames.horiz_coef.at(k, al).mul(bundle.b_forms[k].at(er, ec)));
                    }
                }
                if r == c {
                    acc = acc.add(&conn.tau_f[al].scale(C64::new(-0.5, 0.0))).add(&w);
                }
                entries[r * rank_total + c] = acc;
            }
        }
        slots.push(MatField::from_fields(rank_total, rank_total, entries));
        ws.push(w);
    }
    Ok(DiracAssembly {
        geom: geom.clone(),
        frames: frames.clone(),
        conn: conn.clone(),
        cliff,
        bundle: bundle.clone(),
        rank_total,
        lam,
        slots,
        spin,
        tau_f: conn.tau_f.clone(),
        w: ws,
    })
}

impl DiracAssembly {
    pub fn tbox(&self) -> ModeBox {
        ModeBox::new(2, self.lam)
    }

    fn scalar_to_coef(&self, field: &SmoothField, mat: &Array2<C64>) -> Vec<(Mode, Array2<C64>)> {
        field.modes().iter().map(|(m, v)| (*m, mat.mapv(|x| x * *v))).collect()
    }

    /// Terms of `D'` at a fixed leaf mode.
    fn d_prime_terms(&self, leaf: Mode) -> Vec<TermSpec> {
        let re = self.bundle.rank;
        let mut terms = Vec::new();
        for al in 0..2 {
            let c_al = kron(&Array2::<f64>::eye(re).mapv(C64::from), &self.cliff.c[al]);
            for k in 0..2 {
                let coef = self.scalar_to_coef(self.frames.horiz_coef.at(k, al), &c_al);
                if !coef.is_empty() {
                    terms.push(TermSpec { coef, deriv: Some(k) });
                }
            }
            // leaf contraction: -i c_a sum_k C_ka (a . A_k)(y)
            if leaf != [0, 0] {
                let mut lc = SmoothField::zero(self.geom.q, self.geom.grid_n);
                for k in 0..2 {
                    for j in 0..self.geom.p {
                        if leaf[j] != 0 {
                            lc = lc.add(
                                &self
                                    .frames
                                    .horiz_coef
                                    .at(k, al)
                                    .mul(self.geom.a.at(j, k))
                                    .scale(C64::new(leaf[j] as f64, 0.0)),
                            );
                        }
                    }
                }
                let lc = lc.scale(C64::new(0.0, -1.0));
                let coef = self.scalar_to_coef(&lc, &c_al);
                if !coef.is_empty() {
                    terms.push(TermSpec { coef, deriv: None });
                }
            }
            // zero-order slot, minus the -tau/2 part which belongs to D
            let mut slot_prime = self.slots[al].clone();
            for d in 0..self.rank_total {
                let idx = d * self.rank_total + d;
                slot_prime.entries[idx] =
                    slot_prime.entries[idx].sub(&self.conn.tau_f[al].scale(C64::new(-0.5, 0.0)));
            }
            let coef: Vec<(Mode, Array2<C64>)> = mat_modes(&slot_prime)
                .into_iter()
                .map(|(m, mat)| (m, c_al.dot(&mat)))
                .filter(|(_, mat)| linalg::max_abs(mat) > 0.0)
                .collect();
            if !coef.is_empty() {
                terms.push(TermSpec { coef, deriv: None });
            }
        }
        terms
    }

    /// `D'` block at a leaf mode.
    pub fn d_prime_block(&self, leaf: Mode) -> Array2<C64> {
        assemble_first_order(&self.tbox(), self.rank_total, &self.d_prime_terms(leaf))
    }

    /// Multiplication by `c(tau)`.
    pub fn c_tau_matrix(&self) -> Array2<C64> {
        let re = self.bundle.rank;
        let mut coef: Vec<(Mode, Array2<C64>)> = Vec::new();
        for al in 0..2 {
            let c_al = kron(&Array2::<f64>::eye(re).mapv(C64::from), &self.cliff.c[al]);
            for (m, v) in self.tau_f[al].modes() {
                coef.push((*m, c_al.mapv(|x| x * *v)));
            }
        }
        assemble_mult(&self.tbox(), self.rank_total, &coef)
    }

    /// The self-adjoint transverse Dirac block `D = D' - c(tau)/2`.
    pub fn d_block(&self, leaf: Mode) -> Array2<C64> {
        let dp = self.d_prime_block(leaf);
        let ct = self.c_tau_matrix();
        dp - ct.mapv(|v| v * 0.5)
    }

    /// Adjoint-lemma defects at a leaf mode: returns
    /// `(|D'^H - (D' - c(tau))|, | |D'^H - D'| - |c(tau)| |)` in max norm.
    pub fn adjoint_defect(&self, leaf: Mode) -> (f64, f64) {
        let dp = self.d_prime_block(leaf);
        let ct = self.c_tau_matrix();
        let adj = linalg::adjoint(&dp);
        let defect = linalg::max_abs(&(&adj - &(&dp - &ct)));
        let control = (linalg::max_abs(&(&adj - &dp)) - linalg::max_abs(&ct)).abs();
        (defect, control)
    }

    /// Full left symbol of `D` as a matrix polynomial (xi enters through the
    /// horizontal lifts; coefficients are y-only).
    pub fn full_symbol(&self) -> MPoly {
        let re = self.bundle.rank;
        let mut terms = Vec::new();
        for al in 0..2 {
            let c_al = kron(&Array2::<f64>::eye(re).mapv(C64::from), &self.cliff.c[al]);
            for k in 0..2 {
                for (m, v) in self.frames.horiz_coef.at(k, al).modes() {
                    let mut eta_pow = [0, 0];
                    eta_pow[k] = 1;
                    terms.push(MTerm {
                        y_mode: *m,
                        xi_pow: [0, 0],
                        eta_pow,
                        coef: c_al.mapv(|x| x * *v * C64::new(0.0, 1.0)),
                    });
                }
                for j in 0..self.geom.p {
                    let prod = self.frames.horiz_coef.at(k, al).mul(self.geom.a.at(j, k));
                    for (m, v) in prod.modes() {
                        let mut xi_pow = [0, 0];
                        xi_pow[j] = 1;
                        terms.push(MTerm {
                            y_mode: *m,
                            xi_pow,
                            eta_pow: [0, 0],
                            coef: c_al.mapv(|x| x * *v * C64::new(0.0, -1.0)),
                        });
                    }
                }
            }
            for (m, mat) in mat_modes(&self.slots[al]) {
                terms.push(MTerm { y_mode: m, xi_pow: [0, 0], eta_pow: [0, 0], coef: c_al.dot(&mat) });
            }
        }
        MPoly { rank: self.rank_total, terms }.prune()
    }

    /// Closed-form full subprincipal symbol of `D^2` at a full covector:
    /// `p_sub = -2i sum_a <ksi, f_a> S_a - (i/2) sum_{ab} c_a c_b <ksi, R(f_a, f_b)>`.
    pub fn p_sub_closed_form(&self, y: [f64; 2], xi: [f64; 2], eta: [f64; 2]) -> Array2<C64> {
        let re = self.bundle.rank;
        let mut out = Array2::<C64>::zeros((self.rank_total, self.rank_total));
        for al in 0..2 {
            let mut pair = 0.0;
            for k in 0..2 {
                let mut hor = eta[k];
                for j in 0..self.geom.p {
                    hor -= self.geom.a.at(j, k).eval_re(y) * xi[j];
                }
                pair += self.frames.horiz_coef.at(k, al).eval_re(y) * hor;
            }
            let slot = self.slots[al].eval(y);
            out = out + slot.mapv(|v| v * C64::new(0.0, -2.0 * pair));
        }
        for al in 0..2 {
            for be in 0..2 {
                // <ksi, R(f_a, f_b)>: R is vertical, so only xi pairs
                let mut pair = 0.0;
                for j in 0..self.geom.p {
                    pair += self.conn.r_at(al, be, j).eval_re(y) * xi[j];
                }
                if pair != 0.0 {
                    let cc = kron(
                        &Array2::<f64>::eye(re).mapv(C64::from),
                        &self.cliff.c[al].dot(&self.cliff.c[be]),
                    );
                    out = out + cc.mapv(|v| v * C64::new(0.0, -0.5 * pair));
                }
            }
        }
        out
    }

    /// Transverse subprincipal symbol of `<D>` as a partial-connection
    /// coefficient on the conormal bundle:
    /// `sigma_sub(<D>)(nu) = -i |nu|^{-1} sum_a <nu, f_a> S_a(y)`.
    pub fn subprincipal_coefficient(&self, y: [f64; 2], eta: [f64; 2]) -> Array2<C64> {
        let norm = self.geom.transverse_norm(y, eta);
        let mut out = Array2::<C64>::zeros((self.rank_total, self.rank_total));
        for al in 0..2 {
            let mut pair = 0.0;
            for k in 0..2 {
                pair += self.frames.horiz_coef.at(k, al).eval_re(y) * eta[k];
            }
            let slot = self.slots[al].eval(y);
            out = out + slot.mapv(|v| v * C64::new(0.0, -pair / norm));
        }
        out
    }

    /// Subprincipal symbol of `D^2` on the conormal bundle from the general
    /// coordinate formula applied to the symbolically squared full symbol:
    /// `p_1|_{xi=0} - (1/2i) d_x d_xi p_2 - (1/2i) d_y d_eta sigma(P)`
    /// (the middle term vanishes: coefficients are x-independent).
    pub fn sigma_sub_dsq_symbolic(&self, y: [f64; 2], eta: [f64; 2]) -> Array2<C64> {
        let d = self.full_symbol();
        let dsq = d.kn_product(&d);
        let p1 = dsq.graded_part(1).restrict_xi0();
        let mut out = p1.eval(y, [0.0, 0.0], eta);
        let p2 = dsq.graded_part(2).restrict_xi0();
        for t in &p2.terms {
            for l in 0..2 {
                if t.eta_pow[l] == 0 || t.y_mode[l] == 0 {
                    continue;
                }
                // -(1/2i) d_y_l d_eta_l of coef e^{i nu.y} eta^pow
                let fac = C64::new(0.0, t.y_mode[l] as f64)
                    * (t.eta_pow[l] as f64)
                    * C64::new(0.0, 0.5);
                let mut pow = t.eta_pow;
                pow[l] -= 1;
                let phase =
                    C64::new(0.0, t.y_mode[0] as f64 * y[0] + t.y_mode[1] as f64 * y[1]).exp();
                let mom = eta[0].powi(pow[0] as i32) * eta[1].powi(pow[1] as i32);
                out = out + t.coef.mapv(|v| v * fac * phase * mom);
            }
        }
        out
    }
}

/// Coefficient-vector section on the transverse torus (leaf mode 0).
pub type Section = Vec<(Mode, Array1<C64>)>;

/// Outcome of a conjugation expansion fit.
pub struct ConjugationFit {
    pub modes: Vec<Mode>,
    pub s2: Vec<Array1<C64>>,
    pub s1: Vec<Array1<C64>>,
    pub s0: Vec<Array1<C64>>,
    pub residual: f64,
}

/// Evaluate `e^{-is phi} T (e^{is phi} a)` with the lattice phase
/// `phi = m.x + n.y` on an integer s-grid and fit the exact quadratic.
/// `blocks` provides the operator block at each required leaf mode.
pub fn conjugation_fit(
    blocks: &dyn Fn(Mode) -> Array2<C64>,
    bx: &ModeBox,
    rank: usize,
    phase_leaf: Mode,
    phase_trans: Mode,
    section: &Section,
    keep: &[Mode],
) -> Result<ConjugationFit> {
    let s_values = [1.0, 2.0, 3.0, 4.0];
    let mut per_s: Vec<Vec<Array1<C64>>> = Vec::new();
    for s in [1i32, 2, 3, 4] {
        let leaf = [phase_leaf[0] * s, phase_leaf[1] * s];
        let t = blocks(leaf);
        let mut vec_in = Array1::<C64>::zeros(bx.len() * rank);
        for (m, comps) in section {
            let shifted = mode_add(*m, [phase_trans[0] * s, phase_trans[1] * s]);
            let idx = bx.index(shifted).ok_or_else(|| {
                Error::CutoffTooSmall(format!("section mode {shifted:?} escapes the box"))
            })?;
            for r in 0..rank {
                vec_in[idx * rank + r] = comps[r];
            }
        }
        let out = t.dot(&vec_in);
        let mut rows = Vec::new();
        for m in keep {
            let shifted = mode_add(*m, [phase_trans[0] * s, phase_trans[1] * s]);
            let idx = bx.index(shifted).ok_or_else(|| {
                Error::CutoffTooSmall(format!("readout mode {shifted:?} escapes the box"))
            })?;
            let mut comp = Array1::zeros(rank);
            for r in 0..rank {
                comp[r] = out[idx * rank + r];
            }
            rows.push(comp);
        }
        per_s.push(rows);
    }
    let mut s2 = Vec::new();
    let mut s1 = Vec::new();
    let mut s0 = Vec::new();
    let mut residual: f64 = 0.0;
    for (mi, _m) in keep.iter().enumerate() {
        let mut c2 = Array1::zeros(rank);
        let mut c1 = Array1::zeros(rank);
        let mut c0 = Array1::zeros(rank);
        for r in 0..rank {
            let samples: Vec<C64> = per_s.iter().map(|rows| rows[mi][r]).collect();
            let fit = crate::linalg::poly_fit(&s_values, &samples, 2)?;
            c0[r] = fit[0];
            c1[r] = fit[1];
            c2[r] = fit[2];
            let pred = fit[0] + fit[1] * s_values[3] + fit[2] * s_values[3] * s_values[3];
            residual = residual.max((samples[3] - pred).norm());
        }
        s2.push(c2);
        s1.push(c1);
        s0.push(c0);
    }
    Ok(ConjugationFit { modes: keep.to_vec(), s2, s1, s0, residual })
}

/// Reference data for conjugation fits of `D^2`.
pub struct ConjugationReference<'a> {
    pub assembly: &'a DiracAssembly,
}

impl ConjugationReference<'_> {
    /// `a_2(y) = |P^H (m, n)|^2` as a field.
    pub fn principal_field(&self, m: Mode, n: Mode) -> SmoothField {
        let geom = &self.assembly.geom;
        let gq = geom.q;
        let nn = geom.grid_n;
        let a = geom.a.clone();
        let gb = geom.g_b.clone();
        let p = geom.p;
        SmoothField::from_real_fn(gq, nn, move |y| {
            let am = a.eval_re(y);
            let gi = crate::geometry::inv_small(&gb.eval_re(y));
            let mut hor = [0.0; 2];
            for k in 0..gq {
                hor[k] = n[k] as f64;
                for j in 0..p {
                    hor[k] -= am[(j, k)] * m[j] as f64;
                }
            }
            let mut acc = 0.0;
            for k in 0..gq {
                for l in 0..gq {
                    acc += hor[k] * gi[(k, l)] * hor[l];
                }
            }
            acc
        })
    }

    /// Apply the reference subleading operator
    /// `p_sub(., dphi) + (1/i)(v + div(v)/2)` to a section.
    pub fn subleading_apply(&self, m: Mode, n: Mode, section: &Section) -> Section {
        let asmb = self.assembly;
        let geom = &asmb.geom;
        let nn = geom.grid_n;
        let rank = asmb.rank_total;
        let mut pair_fields = Vec::new();
        for al in 0..2 {
            let mut acc = SmoothField::zero(geom.q, nn);
            for k in 0..2 {
                let mut hor = SmoothField::constant(geom.q, nn, C64::new(n[k] as f64, 0.0));
                for j in 0..geom.p {
                    hor = hor.sub(&geom.a.at(j, k).scale(C64::new(m[j] as f64, 0.0)));
                }
                acc = acc.add(&asmb.frames.horiz_coef.at(k, al).mul(&hor));
            }
            pair_fields.push(acc);
        }
        // v = 2 sum_a <ksi, f_a> f_a; only y-components act on leaf-mode-0
        // sections, and div(v) sees only y-derivatives.
        let mut v_y = Vec::new();
        for k in 0..2 {
            let mut acc = SmoothField::zero(geom.q, nn);
            for al in 0..2 {
                acc = acc.add(
                    &pair_fields[al]
                        .mul(asmb.frames.horiz_coef.at(k, al))
                        .scale(C64::new(2.0, 0.0)),
                );
            }
            v_y.push(acc);
        }
        let mut div_v = SmoothField::zero(geom.q, nn);
        for (k, vk) in v_y.iter().enumerate() {
            div_v = div_v.add(&vk.derivative(k));
        }
        let sample = |y: [f64; 2]| -> Array1<C64> {
            let mut val = Array1::<C64>::zeros(rank);
            let mut dval = [Array1::<C64>::zeros(rank), Array1::<C64>::zeros(rank)];
            for (mm, comps) in section {
                let phase = C64::new(0.0, mm[0] as f64 * y[0] + mm[1] as f64 * y[1]).exp();
                for r in 0..rank {
                    val[r] += comps[r] * phase;
                    for k in 0..2 {
                        dval[k][r] += comps[r] * phase * C64::new(0.0, mm[k] as f64);
                    }
                }
            }
            let psub =
                asmb.p_sub_closed_form(y, [m[0] as f64, m[1] as f64], [n[0] as f64, n[1] as f64]);
            let minus_i = C64::new(0.0, -1.0);
            let mut out = Array1::<C64>::zeros(rank);
            for r in 0..rank {
                for c in 0..rank {
                    out[r] += psub[(r, c)] * val[c];
                }
            }
            for k in 0..2 {
                let vk = v_y[k].eval(y);
                for r in 0..rank {
                    out[r] += minus_i * vk * dval[k][r];
                }
            }
            let dv = div_v.eval(y) * 0.5;
            for r in 0..rank {
                out[r] += minus_i * dv * val[r];
            }
            out
        };
        let probe = SmoothField::zero(geom.q, nn);
        let pts = probe.grid.points();
        let mut comp_grids: Vec<Vec<C64>> = vec![Vec::with_capacity(pts.len()); rank];
        for y in &pts {
            let v = sample(*y);
            for r in 0..rank {
                comp_grids[r].push(v[r]);
            }
        }
        let mut mode_map: std::collections::BTreeMap<Mode, Array1<C64>> = Default::default();
        for (r, vals) in comp_grids.into_iter().enumerate() {
            let gs = crate::grid::GridScalar { q: geom.q, n: nn, vals };
            for (mm, v) in gs.mode_list(1e-11) {
                mode_map.entry(mm).or_insert_with(|| Array1::zeros(rank))[r] = v;
            }
        }
        mode_map.into_iter().collect()
    }
}

/// Exterior algebra operators on the horizontal forms (rank 4, basis
/// `{1, f*_1, f*_2, f*_1 ^ f*_2}`).
pub struct FormAlgebra {
    pub eps: [Array2<C64>; 2],
    pub iota: [Array2<C64>; 2],
}

impl FormAlgebra {
    pub fn new() -> Self {
        let one = C64::new(1.0, 0.0);
        let mut e1 = Array2::<C64>::zeros((4, 4));
        e1[(1, 0)] = one; // 1 -> f*1
        e1[(3, 2)] = one; // f*2 -> f*1^f*2
        let mut e2 = Array2::<C64>::zeros((4, 4));
        e2[(2, 0)] = one; // 1 -> f*2
        e2[(3, 1)] = -one; // f*1 -> -f*1^f*2
        let i1 = linalg::adjoint(&e1);
        let i2 = linalg::adjoint(&e2);
        FormAlgebra { eps: [e1, e2], iota: [i1, i2] }
    }
}

impl Default for FormAlgebra {
    fn default() -> Self {
        Self::new()
    }
}

/// Assembled transverse signature data at q = 2.
pub struct SignatureAssembly {
    pub geom: ModelGeometry,
    pub frames: FrameData,
    pub conn: ConnectionData,
    pub forms: FormAlgebra,
    pub lam: i32,
    pub w: Vec<SmoothField>,
}

pub fn build_signature(
    geom: &ModelGeometry,
    frames: &FrameData,
    conn: &ConnectionData,
    lam: i32,
) -> Result<SignatureAssembly> {
    if geom.q != 2 {
        return Err(Error::UnsupportedDimension {
            p: geom.p,
            q: geom.q,
            reason: "signature operator requires q = 2",
        });
    }
    let w = (0..2)
        .map(|al| frames.horizontal[al].apply(&geom.log_rho).scale(C64::new(-0.5, 0.0)))
        .collect();
    Ok(SignatureAssembly {
        geom: geom.clone(),
        frames: frames.clone(),
        conn: conn.clone(),
        forms: FormAlgebra::new(),
        lam,
        w,
    })
}

impl SignatureAssembly {
    pub fn tbox(&self) -> ModeBox {
        ModeBox::new(2, self.lam)
    }

    /// Connection action of `nabla_{f_a}` on the form basis: scalars and the
    /// top form are untouched (by antisymmetry), `nabla f*_b = -Gamma^b_{ag} f*_g`.
    fn form_connection(&self, al: usize) -> Vec<(Mode, Array2<C64>)> {
        let n = self.geom.grid_n;
        let mut entries = vec![SmoothField::zero(2, n); 16];
        for be in 0..2 {
            for ga in 0..2 {
                let g = self.conn.gamma_at(al, be, ga).scale(C64::new(-1.0, 0.0));
                entries[(1 + ga) * 4 + (1 + be)] = entries[(1 + ga) * 4 + (1 + be)].add(&g);
            }
        }
        mat_modes(&MatField::from_fields(4, 4, entries))
    }

    fn covariant_terms(&self, al: usize, leaf: Mode, twist: Option<&SmoothField>) -> Vec<TermSpec> {
        let mut terms = Vec::new();
        for k in 0..2 {
            let coef: Vec<(Mode, Array2<C64>)> = self
                .frames
                .horiz_coef
                .at(k, al)
                .modes()
                .iter()
                .map(|(m, v)| {
                    let mut mat = Array2::<C64>::zeros((4, 4));
                    for d in 0..4 {
                        mat[(d, d)] = *v;
                    }
                    (*m, mat)
                })
                .collect();
            terms.push(TermSpec { coef, deriv: Some(k) });
        }
        let n = self.geom.grid_n;
        let mut scalar = self.w[al].clone();
        match twist {
            Some(t) => scalar = scalar.add(t),
            None => {
                if leaf != [0, 0] {
                    let mut lc = SmoothField::zero(2, n);
                    for k in 0..2 {
                        for j in 0..self.geom.p {
                            if leaf[j] != 0 {
                                lc = lc.add(
                                    &self
                                        .frames
                                        .horiz_coef
                                        .at(k, al)
                                        .mul(self.geom.a.at(j, k))
                                        .scale(C64::new(leaf[j] as f64, 0.0)),
                                );
                            }
                        }
                    }
                    scalar = scalar.add(&lc.scale(C64::new(0.0, -1.0)));
                }
            }
        }
        let mut coef: Vec<(Mode, Array2<C64>)> = scalar
            .modes()
            .iter()
            .map(|(m, v)| {
                let mut mat = Array2::<C64>::zeros((4, 4));
                for d in 0..4 {
                    mat[(d, d)] = *v;
                }
                (*m, mat)
            })
            .collect();
        coef.extend(self.form_connection(al));
        terms.push(TermSpec { coef, deriv: None });
        terms
    }

    /// `d_H` block at a leaf mode: `sum_a eps_a (f_a + connection + w_a)`.
    pub fn d_h_block(&self, leaf: Mode) -> Array2<C64> {
        let dim = self.tbox().len() * 4;
        let mut out = Array2::<C64>::zeros((dim, dim));
        for al in 0..2 {
            let base = assemble_first_order(&self.tbox(), 4, &self.covariant_terms(al, leaf, None));
            let eps = assemble_mult(&self.tbox(), 4, &[([0, 0], self.forms.eps[al].clone())]);
            out = out + eps.dot(&base);
        }
        out
    }

    /// The codifferential from the frame formula
    /// `-sum_a iota_a (f_a + connection + w_a) + iota_tau`.
    pub fn d_h_star_formula_block(&self, leaf: Mode) -> Array2<C64> {
        let dim = self.tbox().len() * 4;
        let mut out = Array2::<C64>::zeros((dim, dim));
        for al in 0..2 {
            let base = assemble_first_order(&self.tbox(), 4, &self.covariant_terms(al, leaf, None));
            let iota = assemble_mult(&self.tbox(), 4, &[([0, 0], self.forms.iota[al].clone())]);
            out = out - iota.dot(&base);
        }
        out + self.iota_tau_matrix()
    }

    pub fn iota_tau_matrix(&self) -> Array2<C64> {
        let mut coef: Vec<(Mode, Array2<C64>)> = Vec::new();
        for al in 0..2 {
            for (m, v) in self.conn.tau_f[al].modes() {
                coef.push((*m, self.forms.iota[al].mapv(|x| x * *v)));
            }
        }
        assemble_mult(&self.tbox(), 4, &coef)
    }

    pub fn eps_tau_matrix(&self) -> Array2<C64> {
        let mut coef: Vec<(Mode, Array2<C64>)> = Vec::new();
        for al in 0..2 {
            for (m, v) in self.conn.tau_f[al].modes() {
                coef.push((*m, self.forms.eps[al].mapv(|x| x * *v)));
            }
        }
        assemble_mult(&self.tbox(), 4, &coef)
    }

    /// Twisted signature on the base alone, with an explicit zero-order
    /// twist: `d_E = sum eps_a (f_a + connection + w_a + twist_a)`,
    /// `D = d_E + d_E^H`.
    pub fn twisted_base_signature(&self, twist: &[SmoothField; 2]) -> Array2<C64> {
        let dim = self.tbox().len() * 4;
        let mut d = Array2::<C64>::zeros((dim, dim));
        for al in 0..2 {
            let base = assemble_first_order(
                &self.tbox(),
                4,
                &self.covariant_terms(al, [0, 0], Some(&twist[al])),
            );
            let eps = assemble_mult(&self.tbox(), 4, &[([0, 0], self.forms.eps[al].clone())]);
            d = d + eps.dot(&base);
        }
        &d + &linalg::adjoint(&d)
    }

    /// The constant identification of horizontal forms with endomorphisms of
    /// the spinor bundle: basis images `{1, c_1, c_2, c_1 c_2}` flattened
    /// with the spinor index fast.
    pub fn clifford_iso(&self, cliff: &CliffordData) -> Array2<C64> {
        let images = [
            Array2::<C64>::eye(2),
            cliff.c[0].clone(),
            cliff.c[1].clone(),
            cliff.c[0].dot(&cliff.c[1]),
        ];
        let mut phi = Array2::<C64>::zeros((4, 4));
        for (col, img) in images.iter().enumerate() {
            for s in 0..2 {
                for e in 0..2 {
                    phi[(e * 2 + s, col)] = img[(s, e)];
                }
            }
        }
        phi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::MatField;
    use crate::geometry::{build_frames, transverse_connection};
    use approx::assert_abs_diff_eq;

    fn flat_q2() -> (ModelGeometry, FrameData, ConnectionData) {
        let geom = ModelGeometry::flat(1, 2);
        let frames = build_frames(&geom).unwrap();
        let conn = transverse_connection(&geom, &frames).unwrap();
        (geom, frames, conn)
    }

    fn warped_fiber_q2(c: f64) -> (ModelGeometry, FrameData, ConnectionData) {
        let gf = MatField::from_entry_fn(2, 48, 1, 1, move |_, _, y| (2.0 * c * y[0].cos()).exp());
        let a = MatField::from_entry_fn(2, 48, 1, 2, |_, k, y| {
            if k == 0 {
                0.3 * y[1].sin()
            } else {
                0.2 * y[0].cos()
            }
        });
        let geom = ModelGeometry::new(1, 2, gf, MatField::identity(2, 48, 2), a).unwrap();
        let frames = build_frames(&geom).unwrap();
        let conn = transverse_connection(&geom, &frames).unwrap();
        (geom, frames, conn)
    }

    #[test]
    fn clifford_relations_hold_exactly() {
        assert_eq!(CliffordData::standard().relation_defect(), 0.0);
    }

    #[test]
    fn spin_connection_flat_is_zero_and_compatible_when_warped() {
        let (_, _, conn) = flat_q2();
        let cliff = CliffordData::standard();
        let spin = spin_connection(&conn, &cliff, 64).unwrap();
        for s in &spin {
            for e in &s.entries {
                assert!(e.max_abs() < 1e-12);
            }
        }
        let gb = MatField::from_entry_fn(2, 48, 2, 2, |r, c, y| {
            if r == c {
                (0.4 * (y[0] - y[1]).cos()).exp()
            } else {
                0.0
            }
        });
        let geom = ModelGeometry::new(
            1,
            2,
            MatField::identity(2, 48, 1),
            gb,
            MatField::from_entry_fn(2, 48, 1, 2, |_, _, _| 0.0),
        )
        .unwrap();
        let frames = build_frames(&geom).unwrap();
        let conn = transverse_connection(&geom, &frames).unwrap();
        let spin = spin_connection(&conn, &cliff, 48).unwrap();
        assert!(conn.max_gamma() > 0.05, "fixture should be curved");
        let defect = spin_compatibility_defect(&conn, &cliff, &spin);
        assert!(defect < 1e-10, "compatibility defect {defect:.2e}");
        for s in &spin {
            let m = s.eval([0.7, 1.1]);
            assert!(linalg::max_abs(&(&linalg::adjoint(&m) + &m)) < 1e-12);
        }
    }

    #[test]
    fn flat_dirac_eigenvalues() {
        // flat model, trivial line bundle: eigenvalues come in +-|n| pairs.
        let (geom, frames, conn) = flat_q2();
        let bundle = BundleData::trivial_line(2, 64);
        let asm = build_dirac(&geom, &frames, &conn, &bundle, 6).unwrap();
        let d = asm.d_block([0, 0]);
        assert!(linalg::herm_defect(&d) < 1e-12);
        let (w, _) = linalg::eigh(&d).unwrap();
        let mut expected: Vec<f64> = asm
            .tbox()
            .modes()
            .iter()
            .flat_map(|n| {
                let nn = crate::operators::mode_norm(*n);
                [nn, -nn]
            })
            .collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut got: Vec<f64> = w.to_vec();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (g, e) in got.iter().zip(&expected) {
            assert_abs_diff_eq!(*g, *e, epsilon = 1e-10);
        }
    }

    #[test]
    fn adjoint_lemma_at_matrix_level() {
        let (geom, frames, conn) = warped_fiber_q2(0.3);
        let bundle = BundleData::trivial_line(2, 48);
        let asm = build_dirac(&geom, &frames, &conn, &bundle, 8).unwrap();
        for leaf in [[0, 0], [1, 0]] {
            let (defect, control) = asm.adjoint_defect(leaf);
            assert!(defect < 1e-10, "adjoint defect {defect:.2e}");
            assert!(control < 1e-10, "control defect {control:.2e}");
            let ct = asm.c_tau_matrix();
            assert!(linalg::max_abs(&ct) > 0.05, "fixture should have tau != 0");
            assert!(linalg::herm_defect(&asm.d_block(leaf)) < 1e-10);
        }
        let _ = geom;
    }

    #[test]
    fn half_density_weight_cancels_mean_curvature_for_flat_base() {
        // with g_B = I and g_F = e^{2 phi}: w_a = -(1/2) f_a(p phi) and
        // tau_a = -p f_a(phi), so the scalar slot -tau/2 + w vanishes.
        let (_, _, conn) = warped_fiber_q2(0.25);
        let (geom, frames, _) = warped_fiber_q2(0.25);
        let bundle = BundleData::trivial_line(2, 48);
        let asm = build_dirac(&geom, &frames, &conn, &bundle, 6).unwrap();
        for al in 0..2 {
            let combo = conn.tau_f[al].scale(C64::new(-0.5, 0.0)).add(&asm.w[al]);
            assert!(combo.max_abs() < 1e-11, "scalar slot {:.2e}", combo.max_abs());
        }
    }

    #[test]
    fn conjugation_fit_recovers_flat_principal_and_subleading() {
        // flat, phi = n.y, trivial E: s^2 coefficient = |n|^2 a, s^1 = 0.
        let (geom, frames, conn) = flat_q2();
        let bundle = BundleData::trivial_line(2, 64);
        let asm = build_dirac(&geom, &frames, &conn, &bundle, 12).unwrap();
        let bx = asm.tbox();
        let rank = asm.rank_total;
        let sec: Section = vec![
            ([0, 0], Array1::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.3, -0.2)])),
            ([1, 1], Array1::from_vec(vec![C64::new(0.0, 0.5), C64::new(-0.1, 0.0)])),
        ];
        let n = [2, 1];
        let fit = conjugation_fit(
            &|l| {
                let d = asm.d_block(l);
                d.dot(&d)
            },
            &bx,
            rank,
            [0, 0],
            n,
            &sec,
            &[[0, 0], [1, 1]],
        )
        .unwrap();
        assert!(fit.residual < 1e-9, "quadratic model residual {:.2e}", fit.residual);
        let n2 = 5.0;
        for (mi, m) in fit.modes.iter().enumerate() {
            let want = sec.iter().find(|(mm, _)| mm == m).unwrap().1.clone();
            for r in 0..rank {
                assert_abs_diff_eq!(fit.s2[mi][r].re, n2 * want[r].re, epsilon = 1e-9);
                assert_abs_diff_eq!(fit.s2[mi][r].im, n2 * want[r].im, epsilon = 1e-9);
                assert!(fit.s1[mi][r].norm() < 1e-9);
            }
        }
        let _ = geom;
    }

    #[test]
    fn signature_codifferential_matches_matrix_adjoint() {
        let (geom, frames, conn) = warped_fiber_q2(0.3);
        let sig = build_signature(&geom, &frames, &conn, 8).unwrap();
        let dh = sig.d_h_block([1, 0]);
        let star = sig.d_h_star_formula_block([1, 0]);
        let defect = linalg::max_abs(&(&linalg::adjoint(&dh) - &star));
        assert!(defect < 1e-10, "codifferential defect {defect:.2e}");
    }

    #[test]
    fn signature_equals_dirac_with_dual_spinor_coefficients() {
        let (geom, frames, conn) = warped_fiber_q2(0.3);
        let cliff = CliffordData::standard();
        let sig = build_signature(&geom, &frames, &conn, 8).unwrap();
        // E = F(Q)^*: connection components -spin_k^T along dy_k (g_B = I,
        // so the frame equals the coordinate lift and the contraction with
        // f_a picks component k = a).
        let spin = spin_connection(&conn, &cliff, geom.grid_n).unwrap();
        let bundle_dual = BundleData {
            rank: 2,
            b_forms: (0..2)
                .map(|k| {
                    let s = &spin[k];
                    let mut entries = Vec::new();
                    for r in 0..2 {
                        for c in 0..2 {
                            entries.push(s.at(c, r).scale(C64::new(-1.0, 0.0)));
                        }
                    }
                    MatField::from_fields(2, 2, entries)
                })
                .collect(),
        };
        let asm = build_dirac(&geom, &frames, &conn, &bundle_dual, 8).unwrap();
        let leaf = [1, 0];
        let lhs = asm.d_block(leaf);
        let dh = sig.d_h_block(leaf);
        let rhs_forms = &dh + &linalg::adjoint(&dh)
            - (sig.eps_tau_matrix() + sig.iota_tau_matrix()).mapv(|v| v * 0.5);
        let phi = sig.clifford_iso(&cliff);
        let phi_big = kron(&Array2::<f64>::eye(sig.tbox().len()).mapv(C64::from), &phi);
        // phi has orthogonal columns of norm sqrt(2)
        let phi_inv = linalg::adjoint(&phi_big).mapv(|v| v * 0.5);
        let rhs = phi_big.dot(&rhs_forms).dot(&phi_inv);
        let defect = linalg::max_abs(&(&lhs - &rhs));
        assert!(defect < 1e-10, "signature-vs-dirac defect {defect:.2e}");
    }

    #[test]
    fn isotypic_blocks_match_twisted_base_operator() {
        // Kaluza-Klein: g_F = 1, g_B = I, A(y) nontrivial.
        let a = MatField::from_entry_fn(2, 48, 1, 2, |_, k, y| {
            if k == 0 {
                0.4 * y[1].sin()
            } else {
                0.25 * (y[0] + y[1]).cos()
            }
        });
        let geom = ModelGeometry::new(
            1,
            2,
            MatField::identity(2, 48, 1),
            MatField::identity(2, 48, 2),
            a,
        )
        .unwrap();
        let frames = build_frames(&geom).unwrap();
        let conn = transverse_connection(&geom, &frames).unwrap();
        let sig = build_signature(&geom, &frames, &conn, 8).unwrap();
        for leaf in [0, 1, 2] {
            let dh = sig.d_h_block([leaf, 0]);
            let dh_full = &dh + &linalg::adjoint(&dh);
            let mut twist = [SmoothField::zero(2, geom.grid_n), SmoothField::zero(2, geom.grid_n)];
            for al in 0..2 {
                for k in 0..2 {
                    twist[al] = twist[al].add(
                        &frames
                            .horiz_coef
                            .at(k, al)
                            .mul(geom.a.at(0, k))
                            .scale(C64::new(0.0, -(leaf as f64))),
                    );
                }
            }
            let base = sig.twisted_base_signature(&twist);
            let defect = linalg::max_abs(&(&dh_full - &base));
            assert!(defect < 1e-10, "leaf {leaf}: isotypic defect {defect:.2e}");
        }
        // d_H^2 vanishes on the untwisted sector and not on twisted ones
        // (the square picks up the connection curvature through the twist).
        let dh0 = sig.d_h_block([0, 0]);
        let sq0 = dh0.dot(&dh0);
        assert!(linalg::max_abs(&sq0) < 1e-10, "untwisted d_H^2 = {:.2e}", linalg::max_abs(&sq0));
        let dh1 = sig.d_h_block([1, 0]);
        let sq1 = dh1.dot(&dh1);
        assert!(linalg::max_abs(&sq1) > 1e-3, "curved twisted sector should not square to zero");
    }

    #[test]
    fn three_way_subprincipal_consistency() {
        // KK fixture: g_F = 1, g_B = I, A(y) with curvature, E line bundle
        // with a beta(y) connection.
        let a = MatField::from_entry_fn(2, 48, 1, 2, |_, k, y| {
            if k == 0 {
                0.35 * y[1].sin()
            } else {
                0.2 * y[0].cos()
            }
        });
        let geom = ModelGeometry::new(
            1,
            2,
            MatField::identity(2, 48, 1),
            MatField::identity(2, 48, 2),
            a,
        )
        .unwrap();
        let frames = build_frames(&geom).unwrap();
        let conn = transverse_connection(&geom, &frames).unwrap();
        let bundle = BundleData {
            rank: 1,
            b_forms: (0..2)
                .map(|k| {
                    MatField::from_fields(
                        1,
                        1,
                        vec![SmoothField::from_fn(2, 48, move |y| {
                            C64::new(
                                0.0,
                                if k == 0 {
                                    0.5 * y[0].sin()
                                } else {
                                    -0.3 * (y[0] + y[1]).cos()
                                },
                            )
                        })],
                    )
                })
                .collect(),
        };
        let asm = build_dirac(&geom, &frames, &conn, &bundle, 12).unwrap();
        // (i) closed form vs (iii) coordinate formula on the conormal bundle
        for (y, eta) in [([0.4, 1.7], [3.0, -1.0]), ([2.0, 0.3], [0.5, 2.5])] {
            let cf = asm.p_sub_closed_form(y, [0.0, 0.0], eta);
            let sym = asm.sigma_sub_dsq_symbolic(y, eta);
            let d = linalg::max_abs(&(&cf - &sym));
            assert!(d < 1e-6, "closed form vs symbolic: {d:.2e}");
        }
        // (ii) conjugation fit: s^1 coefficient = p_sub(dphi) a + (1/i) L_v a
        let bx = asm.tbox();
        let rank = asm.rank_total;
        let sec: Section =
            vec![([0, 0], Array1::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]))];
        let n = [2, -1];
        let fit = conjugation_fit(
            &|l| {
                let d = asm.d_block(l);
                d.dot(&d)
            },
            &bx,
            rank,
            [0, 0],
            n,
            &sec,
            &[[0, 0], [1, 0], [0, 1], [1, 1], [-1, 0], [0, -1]],
        )
        .unwrap();
        let rf = ConjugationReference { assembly: &asm };
        let want = rf.subleading_apply([0, 0], n, &sec);
        for (mi, m) in fit.modes.iter().enumerate() {
            let w = want
                .iter()
                .find(|(mm, _)| mm == m)
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| Array1::zeros(rank));
            for r in 0..rank {
                let diff = (fit.s1[mi][r] - w[r]).norm();
                assert!(diff < 1e-6, "mode {m:?} comp {r}: fit vs reference {diff:.2e}");
            }
        }
    }
}
