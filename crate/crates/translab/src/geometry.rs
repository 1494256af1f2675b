//! Model foliated manifolds: trivial torus bundles `T^p x T^q -> T^q` with
//! bundle-like metrics
//!
//! ```text
//!   g = sum g_F,ij(y) theta^i theta^j + sum g_B,kl(y) dy_k dy_l,
//!   theta^j = dx_j + sum_k A_jk(y) dy_k,
//! ```
//!
//! together with orthonormal vertical/horizontal frames, the transverse
//! Levi-Civita connection, the integrability tensor, mean curvature and the
//! divergence.  All coefficient data depend on the transverse coordinate `y`
//! only, so holonomy is trivial and the induced normal-bundle metric is
//! holonomy invariant by construction.
//!
//! Vertical frames `e_i` come from Gram-Schmidt on `{d/dx_j}` in `g_F`;
//! horizontal frames `f_a` from Gram-Schmidt on the horizontal lifts
//! `h_k = d/dy_k - sum_j A_jk(y) d/dx_j` in `g_B`.  Connection data are
//! computed with the Koszul formula on this global frame; brackets are exact
//! because frame coefficients are functions of `y` alone.

use crate::field::{MatField, SmoothField};
use crate::{Error, Result, C64};
use ndarray::{Array1, Array2};

/// Default grid resolution for derived fields.
pub const GRID_N: usize = 64;

/// The model geometry: leaf dimension `p`, codimension `q`, and the three
/// coefficient maps.  Construction validates positive definiteness on the
/// full grid.
#[derive(Debug, Clone)]
pub struct ModelGeometry {
    pub p: usize,
    pub q: usize,
    pub grid_n: usize,
    pub g_f: MatField,
    pub g_b: MatField,
    pub a: MatField,
    /// Full metric blocks in coordinates (x, y).
    pub g_xx: MatField,
    pub g_xy: MatField,
    pub g_yy: MatField,
    /// log sqrt(det g) = log sqrt(det g_F det g_B); a function of y.
    pub log_rho: SmoothField,
}

fn sym_min_eig(m: &Array2<f64>) -> f64 {
    match m.nrows() {
        1 => m[(0, 0)],
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            tr / 2.0 - disc
        }
        _ => unreachable!("p, q <= 2"),
    }
}

fn det_small(m: &Array2<f64>) -> f64 {
    match m.nrows() {
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => unreachable!(),
    }
}

pub fn inv_small(m: &Array2<f64>) -> Array2<f64> {
    match m.nrows() {
        1 => Array2::from_elem((1, 1), 1.0 / m[(0, 0)]),
        2 => {
            let det = det_small(m);
            let mut out = Array2::zeros((2, 2));
            out[(0, 0)] = m[(1, 1)] / det;
            out[(1, 1)] = m[(0, 0)] / det;
            out[(0, 1)] = -m[(0, 1)] / det;
            out[(1, 0)] = -m[(1, 0)] / det;
            out
        }
        _ => unreachable!(),
    }
}

/// Inverse of the upper Cholesky factor: for g = R^T R returns R^{-1}.
/// Column `i` holds the Gram-Schmidt coefficients of the i-th frame vector.
fn chol_inv_upper(g: &Array2<f64>) -> Array2<f64> {
    match g.nrows() {
        1 => Array2::from_elem((1, 1), 1.0 / g[(0, 0)].sqrt()),
        2 => {
            let r11 = g[(0, 0)].sqrt();
            let r12 = g[(0, 1)] / r11;
            let r22 = (g[(1, 1)] - r12 * r12).sqrt();
            let mut out = Array2::zeros((2, 2));
            out[(0, 0)] = 1.0 / r11;
            out[(0, 1)] = -r12 / (r11 * r22);
            out[(1, 1)] = 1.0 / r22;
            out
        }
        _ => unreachable!(),
    }
}

impl ModelGeometry {
    /// Build and validate a model geometry.  The grid resolution is taken
    /// from the coefficient fields, which must all share one grid.
    pub fn new(p: usize, q: usize, g_f: MatField, g_b: MatField, a: MatField) -> Result<Self> {
        if !(1..=2).contains(&p) || !(1..=2).contains(&q) {
            return Err(Error::UnsupportedDimension { p, q, reason: "model supports p, q in {1, 2}" });
        }
        assert_eq!(g_f.rows, p);
        assert_eq!(g_b.rows, q);
        assert_eq!(a.rows, p);
        assert_eq!(a.cols, q);
        let n = g_f.entries[0].n();
        for f in g_f.entries.iter().chain(&g_b.entries).chain(&a.entries) {
            assert_eq!(f.n(), n, "coefficient fields must share one grid");
        }
        // positive definiteness on the dense grid
        let probe = SmoothField::zero(q, n);
        for y in probe.grid.points() {
            for (m, tag) in [(g_f.eval_re(y), "g_F"), (g_b.eval_re(y), "g_B")] {
                let min = sym_min_eig(&m);
                if min <= 1e-10 {
                    let _ = tag;
                    return Err(Error::NonPositiveMetric(min, y));
                }
            }
        }
        // full metric blocks: g_xx = g_F, g_xy = g_F A, g_yy = g_B + A^T g_F A
        let mut gxy = Vec::new();
        for i in 0..p {
            for k in 0..q {
                let mut acc = SmoothField::zero(q, n);
                for j in 0..p {
                    acc = acc.add(&g_f.at(i, j).mul(a.at(j, k)));
                }
                gxy.push(acc);
            }
        }
        let g_xy = MatField::from_fields(p, q, gxy);
        let mut gyy = Vec::new();
        for k in 0..q {
            for l in 0..q {
                let mut acc = g_b.at(k, l).clone();
                for i in 0..p {
                    acc = acc.add(&a.at(i, k).mul(g_xy.at(i, l)));
                }
                gyy.push(acc);
            }
        }
        let g_yy = MatField::from_fields(q, q, gyy);
        let g_f2 = g_f.clone();
        let g_b2 = g_b.clone();
        let log_rho = SmoothField::from_real_fn(q, n, |y| {
            let df = det_small(&g_f2.eval_re(y));
            let db = det_small(&g_b2.eval_re(y));
            0.5 * (df * db).ln()
        });
        Ok(ModelGeometry { p, q, grid_n: n, g_xx: g_f.clone(), g_f, g_b, a, g_xy, g_yy, log_rho })
    }

    /// Flat product model: identity metrics, zero connection.
    pub fn flat(p: usize, q: usize) -> Self {
        let n = GRID_N;
        Self::new(
            p,
            q,
            MatField::identity(q, n, p),
            MatField::identity(q, n, q),
            MatField::from_entry_fn(q, n, p, q, |_, _, _| 0.0),
        )
        .expect("flat model is valid")
    }

    pub fn g_b_at(&self, y: [f64; 2]) -> Array2<f64> {
        self.g_b.eval_re(y)
    }

    pub fn g_b_inv_at(&self, y: [f64; 2]) -> Array2<f64> {
        inv_small(&self.g_b.eval_re(y))
    }

    pub fn a_at(&self, y: [f64; 2]) -> Array2<f64> {
        self.a.eval_re(y)
    }

    /// Transverse principal symbol p(y, eta) = |eta|_{g_B^{-1}(y)}.
    pub fn transverse_norm(&self, y: [f64; 2], eta: [f64; 2]) -> f64 {
        let gi = self.g_b_inv_at(y);
        let mut acc = 0.0;
        for k in 0..self.q {
            for l in 0..self.q {
                acc += eta[k] * gi[(k, l)] * eta[l];
            }
        }
        acc.sqrt()
    }
}

/// Vector field with y-only coefficients, split into coordinate components:
/// `X = sum_j x[j] d/dx_j + sum_k y[k] d/dy_k`.
#[derive(Debug, Clone)]
pub struct FrameField {
    pub x: Vec<SmoothField>,
    pub y: Vec<SmoothField>,
}

impl FrameField {
    pub fn zero(p: usize, q: usize, n: usize) -> Self {
        FrameField {
            x: (0..p).map(|_| SmoothField::zero(q, n)).collect(),
            y: (0..q).map(|_| SmoothField::zero(q, n)).collect(),
        }
    }

    /// Directional derivative of a scalar field (only the d/dy part acts on
    /// y-only functions).
    pub fn apply(&self, f: &SmoothField) -> SmoothField {
        let mut acc = SmoothField::zero(f.q(), f.n());
        for (k, coef) in self.y.iter().enumerate() {
            acc = acc.add(&coef.mul(&f.derivative(k)));
        }
        acc
    }

    /// Lie bracket; exact because all coefficients are functions of y only.
    pub fn bracket(&self, other: &Self) -> Self {
        let p = self.x.len();
        let q = self.y.len();
        let n = self.x.first().map(|f| f.n()).unwrap_or_else(|| self.y[0].n());
        let mut out = FrameField::zero(p, q, n);
        for j in 0..p {
            out.x[j] = self.apply(&other.x[j]).sub(&other.apply(&self.x[j]));
        }
        for l in 0..q {
            out.y[l] = self.apply(&other.y[l]).sub(&other.apply(&self.y[l]));
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        FrameField {
            x: self.x.iter().zip(&other.x).map(|(a, b)| a.add(b)).collect(),
            y: self.y.iter().zip(&other.y).map(|(a, b)| a.add(b)).collect(),
        }
    }

    pub fn scale_field(&self, s: &SmoothField) -> Self {
        FrameField {
            x: self.x.iter().map(|a| a.mul(s)).collect(),
            y: self.y.iter().map(|a| a.mul(s)).collect(),
        }
    }

    pub fn eval(&self, y: [f64; 2]) -> (Array1<f64>, Array1<f64>) {
        (
            Array1::from_iter(self.x.iter().map(|f| f.eval_re(y))),
            Array1::from_iter(self.y.iter().map(|f| f.eval_re(y))),
        )
    }
}

/// Pointwise inner product of two fields with respect to the full metric,
/// returned as a smooth field on T^q.
pub fn metric_pairing(geom: &ModelGeometry, u: &FrameField, v: &FrameField) -> SmoothField {
    let n = geom.grid_n;
    let q = geom.q;
    let mut acc = SmoothField::zero(q, n);
    for i in 0..geom.p {
        for j in 0..geom.p {
            acc = acc.add(&geom.g_xx.at(i, j).mul(&u.x[i]).mul(&v.x[j]));
        }
        for l in 0..q {
            acc = acc.add(&geom.g_xy.at(i, l).mul(&u.x[i].mul(&v.y[l]).add(&v.x[i].mul(&u.y[l]))));
        }
    }
    for k in 0..q {
        for l in 0..q {
            acc = acc.add(&geom.g_yy.at(k, l).mul(&u.y[k]).mul(&v.y[l]));
        }
    }
    acc
}

/// Koszul formula: returns g(nabla^L_U V, W) as a field.
pub fn koszul(geom: &ModelGeometry, u: &FrameField, v: &FrameField, w: &FrameField) -> SmoothField {
    let uv = metric_pairing(geom, v, w);
    let t1 = u.apply(&uv);
    let t2 = v.apply(&metric_pairing(geom, u, w));
    let t3 = w.apply(&metric_pairing(geom, u, v));
    let b_uv = u.bracket(v);
    let b_uw = u.bracket(w);
    let b_vw = v.bracket(w);
    let t4 = metric_pairing(geom, &b_uv, w);
    let t5 = metric_pairing(geom, &b_uw, v);
    let t6 = metric_pairing(geom, &b_vw, u);
    t1.add(&t2)
        .sub(&t3)
        .add(&t4)
        .sub(&t5)
        .sub(&t6)
        .scale(C64::new(0.5, 0.0))
}

/// Orthonormal vertical and horizontal frames.
#[derive(Debug, Clone)]
pub struct FrameData {
    /// e_i = sum_j vert_coef[j][i] d/dx_j.
    pub vert_coef: MatField,
    /// f_a = sum_k horiz_coef[k][a] h_k.
    pub horiz_coef: MatField,
    pub vertical: Vec<FrameField>,
    pub horizontal: Vec<FrameField>,
}

/// Gram-Schmidt frames: vertical from `{d/dx_j}` in `g_F`, horizontal from
/// the lifts `{h_k}` in `g_B`.
pub fn build_frames(geom: &ModelGeometry) -> Result<FrameData> {
    let (p, q, n) = (geom.p, geom.q, geom.grid_n);
    for y in SmoothField::zero(q, n).grid.points() {
        let min = sym_min_eig(&geom.g_f.eval_re(y)).min(sym_min_eig(&geom.g_b.eval_re(y)));
        if min <= 1e-10 {
            return Err(Error::NonPositiveMetric(min, y));
        }
    }
    let gf = geom.g_f.clone();
    let vert_coef = MatField::from_entry_fn(q, n, p, p, move |j, i, y| {
        chol_inv_upper(&gf.eval_re(y))[(j, i)]
    });
    let gb = geom.g_b.clone();
    let horiz_coef = MatField::from_entry_fn(q, n, q, q, move |k, al, y| {
        chol_inv_upper(&gb.eval_re(y))[(k, al)]
    });

    let mut vertical = Vec::new();
    for i in 0..p {
        let mut e = FrameField::zero(p, q, n);
        for j in 0..p {
            e.x[j] = vert_coef.at(j, i).clone();
        }
        vertical.push(e);
    }
    let mut horizontal = Vec::new();
    for al in 0..q {
        let mut f = FrameField::zero(p, q, n);
        for k in 0..q {
            f.y[k] = horiz_coef.at(k, al).clone();
            for j in 0..p {
                f.x[j] = f.x[j].sub(&geom.a.at(j, k).mul(horiz_coef.at(k, al)));
            }
        }
        horizontal.push(f);
    }
    Ok(FrameData { vert_coef, horiz_coef, vertical, horizontal })
}

impl FrameData {
    /// Max deviation from orthonormality of the combined frame.
    pub fn orthonormality_defect(&self, geom: &ModelGeometry) -> f64 {
        let mut worst: f64 = 0.0;
        let all: Vec<&FrameField> = self.vertical.iter().chain(self.horizontal.iter()).collect();
        for (i, u) in all.iter().enumerate() {
            for (j, v) in all.iter().enumerate() {
                let g = metric_pairing(geom, u, v);
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max(g.map(|z| z - C64::new(want, 0.0)).max_abs());
            }
        }
        worst
    }
}

/// Transverse Levi-Civita connection data in the orthonormal frames.
#[derive(Debug, Clone)]
pub struct ConnectionData {
    /// gamma[al][be][ga] = g(nabla_{f_al} f_be, f_ga).
    pub gamma: Vec<SmoothField>,
    /// x-components of the integrability tensor R(f_al, f_be) (vertical).
    pub r_x: Vec<SmoothField>,
    /// Mean curvature components tau_al = g(tau, f_al).
    pub tau_f: Vec<SmoothField>,
    pub q: usize,
    pub p: usize,
}

impl ConnectionData {
    pub fn gamma_at(&self, al: usize, be: usize, ga: usize) -> &SmoothField {
        &self.gamma[(al * self.q + be) * self.q + ga]
    }
    pub fn r_at(&self, al: usize, be: usize, j: usize) -> &SmoothField {
        &self.r_x[(al * self.q + be) * self.p + j]
    }

    /// Metric compatibility: gamma[al][be][ga] = -gamma[al][ga][be].
    pub fn antisymmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for al in 0..self.q {
            for be in 0..self.q {
                for ga in 0..self.q {
                    let s = self.gamma_at(al, be, ga).add(self.gamma_at(al, ga, be));
                    worst = worst.max(s.max_abs());
                }
            }
        }
        worst
    }

    pub fn max_gamma(&self) -> f64 {
        self.gamma.iter().map(|g| g.max_abs()).fold(0.0, f64::max)
    }

    pub fn max_r(&self) -> f64 {
        self.r_x.iter().map(|g| g.max_abs()).fold(0.0, f64::max)
    }

    pub fn max_tau(&self) -> f64 {
        self.tau_f.iter().map(|g| g.max_abs()).fold(0.0, f64::max)
    }
}

/// Connection coefficients, integrability tensor and mean curvature via the
/// Koszul formula on the global frame.
pub fn transverse_connection(geom: &ModelGeometry, frames: &FrameData) -> Result<ConnectionData> {
    let (p, q) = (geom.p, geom.q);
    if !(1..=2).contains(&p) || !(1..=2).contains(&q) {
        return Err(Error::UnsupportedDimension { p, q, reason: "connection requires p, q in {1, 2}" });
    }
    let n = geom.grid_n;
    let mut gamma = Vec::with_capacity(q * q * q);
    for al in 0..q {
        for be in 0..q {
            for ga in 0..q {
                gamma.push(koszul(
                    geom,
                    &frames.horizontal[al],
                    &frames.horizontal[be],
                    &frames.horizontal[ga],
                ));
            }
        }
    }
    // R(f_al, f_be) = -P_F [f_al, f_be]; vertical projection in coordinates:
    // P_F(v)^x_j = v^x_j + sum_k A_jk v^y_k.
    let mut r_x = Vec::with_capacity(q * q * p);
    for al in 0..q {
        for be in 0..q {
            let br = frames.horizontal[al].bracket(&frames.horizontal[be]);
            for j in 0..p {
                let mut vx = br.x[j].clone();
                for k in 0..q {
                    vx = vx.add(&geom.a.at(j, k).mul(&br.y[k]));
                }
                r_x.push(vx.scale(C64::new(-1.0, 0.0)));
            }
        }
    }
    // tau = sum_i P_H(nabla^L_{e_i} e_i): components g(nabla_{e_i} e_i, f_al).
    let mut tau_f = Vec::with_capacity(q);
    for al in 0..q {
        let mut acc = SmoothField::zero(q, n);
        for i in 0..p {
            acc = acc.add(&koszul(geom, &frames.vertical[i], &frames.vertical[i], &frames.horizontal[al]));
        }
        tau_f.push(acc);
    }
    Ok(ConnectionData { gamma, r_x, tau_f, q, p })
}

/// Pointwise residual of the torsion identity
/// `nabla_{f1} f2 - nabla_{f2} f1 = [f1, f2] + R(f1, f2)`.
pub fn torsion_defect(geom: &ModelGeometry, frames: &FrameData, conn: &ConnectionData) -> f64 {
    let q = geom.q;
    let mut worst: f64 = 0.0;
    for al in 0..q {
        for be in 0..q {
            let br = frames.horizontal[al].bracket(&frames.horizontal[be]);
            // frame components of P_H [f_al, f_be] are g([f_al,f_be], f_ga)
            for ga in 0..q {
                let lhs = conn.gamma_at(al, be, ga).sub(conn.gamma_at(be, al, ga));
                let rhs = metric_pairing(geom, &br, &frames.horizontal[ga]);
                worst = worst.max(lhs.sub(&rhs).max_abs());
            }
            // vertical components: R + P_F[f1,f2] = 0 by construction; check
            // the bracket decomposition is consistent.
            for j in 0..geom.p {
                let mut vx = br.x[j].clone();
                for k in 0..q {
                    vx = vx.add(&geom.a.at(j, k).mul(&br.y[k]));
                }
                let resid = conn.r_at(al, be, j).add(&vx);
                worst = worst.max(resid.max_abs());
            }
        }
    }
    worst
}

/// Mean curvature as a coordinate vector field.
pub fn tau_field(frames: &FrameData, conn: &ConnectionData) -> FrameField {
    let q = conn.q;
    let p = conn.p;
    let n = frames.horizontal[0].y[0].n();
    let mut tau = FrameField::zero(p, q, n);
    for al in 0..q {
        tau = tau.add(&frames.horizontal[al].scale_field(&conn.tau_f[al]));
    }
    tau
}

/// Divergence of a vector field with y-only coefficients:
/// `div X = sum_i g(e_i, nabla^L_{e_i} X) + sum_a g(f_a, nabla^L_{f_a} X)`.
pub fn divergence(geom: &ModelGeometry, frames: &FrameData, x: &FrameField) -> SmoothField {
    let n = geom.grid_n;
    let mut acc = SmoothField::zero(geom.q, n);
    for e in &frames.vertical {
        acc = acc.add(&koszul(geom, e, x, e));
    }
    for f in &frames.horizontal {
        acc = acc.add(&koszul(geom, f, x, f));
    }
    acc
}

/// Norm and horizontal part of a covector under the orthogonal projection
/// `P^H : T*M -> T^H M^*`.  In the model co-frame the horizontal part of
/// `(xi, eta)` is `eta - A(y)^T xi`, independent of x.
pub fn dual_norm_at(
    geom: &ModelGeometry,
    y: [f64; 2],
    xi: [f64; 2],
    eta: [f64; 2],
) -> (f64, [f64; 2]) {
    let a = geom.a_at(y);
    let mut hor = [0.0; 2];
    for k in 0..geom.q {
        hor[k] = eta[k];
        for j in 0..geom.p {
            hor[k] -= a[(j, k)] * xi[j];
        }
    }
    let gi = geom.g_b_inv_at(y);
    let mut norm2 = 0.0;
    for k in 0..geom.q {
        for l in 0..geom.q {
            norm2 += hor[k] * gi[(k, l)] * hor[l];
        }
    }
    (norm2.max(0.0).sqrt(), hor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::MatField;
    use approx::assert_abs_diff_eq;

    fn diag_gb(d: [f64; 2]) -> ModelGeometry {
        ModelGeometry::new(
            1,
            2,
            MatField::identity(2, 32, 1),
            MatField::from_entry_fn(2, 32, 2, 2, move |r, c, _| if r == c { d[r] } else { 0.0 }),
            MatField::from_entry_fn(2, 32, 1, 2, |_, _, _| 0.0),
        )
        .unwrap()
    }

    #[test]
    fn flat_frames_are_coordinate_frames() {
        let geom = ModelGeometry::flat(1, 2);
        let frames = build_frames(&geom).unwrap();
        assert!(frames.orthonormality_defect(&geom) < 1e-12);
        let (ex, _) = frames.vertical[0].eval([0.3, 1.0]);
        assert_abs_diff_eq!(ex[0], 1.0, epsilon = 1e-12);
        let (fx, fy) = frames.horizontal[1].eval([0.3, 1.0]);
        assert_abs_diff_eq!(fx[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fy[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn diag_metric_rescales_frames() {
        // g_B = diag(1,4): f_2 = (1/2) d/dy_2
        let geom = diag_gb([1.0, 4.0]);
        let frames = build_frames(&geom).unwrap();
        let (_, fy) = frames.horizontal[1].eval([0.1, 0.2]);
        assert_abs_diff_eq!(fy[1], 0.5, epsilon = 1e-12);
        assert!(frames.orthonormality_defect(&geom) < 1e-12);
    }

    #[test]
    fn connection_frames_carry_the_horizontal_lift() {
        // A != 0, g = I: f_k = h_k = d/dy_k - A_1k d/dx
        let a = MatField::from_entry_fn(2, 32, 1, 2, |_, k, y| {
            if k == 0 {
                0.4 * y[1].sin()
            } else {
                0.0
            }
        });
        let geom =
            ModelGeometry::new(1, 2, MatField::identity(2, 32, 1), MatField::identity(2, 32, 2), a)
                .unwrap();
        let frames = build_frames(&geom).unwrap();
        assert!(frames.orthonormality_defect(&geom) < 1e-12);
        let y = [0.5, 1.2];
        let (fx, fy) = frames.horizontal[0].eval(y);
        assert_abs_diff_eq!(fx[0], -0.4 * y[1].sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(fy[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn flat_connection_vanishes() {
        let geom = ModelGeometry::flat(1, 2);
        let frames = build_frames(&geom).unwrap();
        let conn = transverse_connection(&geom, &frames).unwrap();
        assert!(conn.max_gamma() < 1e-12);
        assert!(conn.max_r() < 1e-12);
        assert!(conn.max_tau() < 1e-12);
    }

    #[test]
    fn integrability_tensor_is_the_connection_curl() {
        // p = 1, q = 2, g = I, A = (A1(y), A2(y)):
        // R(f1, f2) = (d_{y1} A2 - d_{y2} A1) d/dx, from R = -P_F[.,.].
        let a = MatField::from_entry_fn(2, 48, 1, 2, |_, k, y| {
            if k == 0 {
                0.3 * y[1].sin()
            } else {
                0.2 * (y[0] + y[1]).cos()
            }
        });
        let geom =
            ModelGeometry::new(1, 2, MatField::identity(2, 48, 1), MatField::identity(2, 48, 2), a)
                .unwrap();
        let frames = build_frames(&geom).unwrap();
        let conn = transverse_connection(&geom, &frames).unwrap();
        let y: [f64; 2] = [0.7, 2.1];
        let want = -0.2 * (y[0] + y[1]).sin() - 0.3 * y[1].cos();
        assert_abs_diff_eq!(conn.r_at(0, 1, 0).eval_re(y), want, epsilon = 1e-10);
        // antisymmetry
        assert_abs_diff_eq!(
            conn.r_at(1, 0, 0).eval_re(y),
            -want,
            epsilon = 1e-10
        );
        assert!(torsion_defect(&geom, &frames, &conn) < 1e-10);
    }

    #[test]
    fn warped_fiber_mean_curvature() {
        // p = q = 1, g_F = e^{2 c cos y}: Koszul gives tau = c sin(y) d/dy,
        // and the Lie-derivative identity holds with the opposite sign.
        let c = 0.35;
        let gf = MatField::from_entry_fn(1, 64, 1, 1, move |_, _, y| (2.0 * c * y[0].cos()).exp());
        let geom = ModelGeometry::new(
            1,
            1,
            gf,
            MatField::identity(1, 64, 1),
            MatField::from_entry_fn(1, 64, 1, 1, |_, _, _| 0.0),
        )
        .unwrap();
        let frames = build_frames(&geom).unwrap();
        let conn = transverse_connection(&geom, &frames).unwrap();
        let y = [1.3, 0.0];
        // tau_f = g(tau, f) with f = d/dy; phi = c cos y, tau_f = -phi' = c sin y
        assert_abs_diff_eq!(conn.tau_f[0].eval_re(y), c * y[0].sin(), epsilon = 1e-10);
        // Lie derivative of the fiber volume along f: f(log sqrt(det g_F)) = phi'
        let phi_prime = -c * y[0].sin();
        let lie = frames.horizontal[0].apply(&geom.log_rho).eval_re(y);
        assert_abs_diff_eq!(lie, phi_prime, epsilon = 1e-10);
        // so L_f omega_F = -g(tau, f) omega_F in this convention
        assert_abs_diff_eq!(lie, -conn.tau_f[0].eval_re(y), epsilon = 1e-10);
    }

    #[test]
    fn divergence_examples() {
        // flat: div f_1 = 0; div(sin(y) d/dy) = cos(y)
        let geom = ModelGeometry::flat(1, 1);
        let frames = build_frames(&geom).unwrap();
        let div_f = divergence(&geom, &frames, &frames.horizontal[0]);
        assert!(div_f.max_abs() < 1e-12);
        let mut x = FrameField::zero(1, 1, geom.grid_n);
        x.y[0] = SmoothField::from_real_fn(1, geom.grid_n, |y| y[0].sin());
        let div_x = divergence(&geom, &frames, &x);
        assert_abs_diff_eq!(div_x.eval_re([0.8, 0.0]), 0.8_f64.cos(), epsilon = 1e-11);
    }

    #[test]
    fn warped_divergence_identity() {
        // div(f_a) = -g(tau + sum_b nabla_{f_b} f_b, f_a)
        let gf = MatField::from_entry_fn(2, 48, 1, 1, |_, _, y| (0.4 * y[0].cos()).exp());
        let gb = MatField::from_entry_fn(2, 48, 2, 2, |r, c, y| {
            if r == c {
                (1.0 + 0.3 * ((y[0] + y[1]).cos()) * if r == 0 { 1.0 } else { -0.5 }).max(0.2)
            } else {
                0.0
            }
        });
        let a = MatField::from_entry_fn(2, 48, 1, 2, |_, k, y| if k == 0 { 0.2 * y[1].sin() } else { 0.0 });
        let geom = ModelGeometry::new(1, 2, gf, gb, a).unwrap();
        let frames = build_frames(&geom).unwrap();
        let conn = transverse_connection(&geom, &frames).unwrap();
        for al in 0..2 {
            let div = divergence(&geom, &frames, &frames.horizontal[al]);
            // rhs = -(tau_al + sum_b gamma[b][b][al])
            let mut rhs = conn.tau_f[al].clone();
            for be in 0..2 {
                rhs = rhs.add(conn.gamma_at(be, be, al));
            }
            let resid = div.add(&rhs);
            assert!(resid.max_abs() < 1e-9, "al = {al}: {:.3e}", resid.max_abs());
        }
    }

    #[test]
    fn dual_norm_examples() {
        let geom = ModelGeometry::flat(1, 2);
        let (n, _) = dual_norm_at(&geom, [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]);
        assert_abs_diff_eq!(n, 1.0, epsilon = 1e-12);
        let geom2 = diag_gb([1.0, 4.0]);
        let (n2, _) = dual_norm_at(&geom2, [0.2, 0.4], [0.0, 0.0], [0.0, 1.0]);
        assert_abs_diff_eq!(n2, 0.5, epsilon = 1e-12);
        // leafwise covector is annihilated when A = 0
        let geom3 = ModelGeometry::flat(1, 1);
        let (n3, hor) = dual_norm_at(&geom3, [0.0, 0.0], [1.0, 0.0], [0.0, 0.0]);
        assert_abs_diff_eq!(n3, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hor[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_metric_is_rejected() {
        let gf = MatField::from_entry_fn(1, 32, 1, 1, |_, _, y| y[0].cos()); // changes sign
        let out = ModelGeometry::new(
            1,
            1,
            gf,
            MatField::identity(1, 32, 1),
            MatField::from_entry_fn(1, 32, 1, 1, |_, _, _| 0.0),
        );
        assert!(matches!(out, Err(Error::NonPositiveMetric(_, _))));
    }
}
