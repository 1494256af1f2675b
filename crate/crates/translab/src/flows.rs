//! Hamiltonian flows on the conormal bundle, the lifted flow on groupoid
//! points, parallel transport for partial connections, and the frame flow.
//!
//! The transverse principal symbol of the model is
//! `p(y, eta) = |eta|_{g_B^{-1}(y)}`; its Hamiltonian field is tangent to the
//! conormal bundle (`xi = 0` stays exact along trajectories) and the leaf
//! coordinates drift with `xdot = -A(y) g_B^{-1}(y) eta / p`, the
//! xi-gradient of the dual metric at `xi = 0`.  Integration is fixed-step
//! RK4; conservation of `p` is monitored rather than enforced.

use crate::field::MatField;
use crate::geometry::ModelGeometry;
use crate::{Error, Result, C64};
use ndarray::Array2;

#[derive(Debug, Clone, Copy)]
pub struct FlowConfig {
    pub step: f64,
    pub time: f64,
    pub eta_min: f64,
    pub tol: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            step: crate::tol::DEFAULT_STEP,
            time: 1.0,
            eta_min: crate::tol::DEFAULT_ETA_MIN,
            tol: 1e-8,
        }
    }
}

impl FlowConfig {
    pub fn with_time(time: f64) -> Self {
        FlowConfig { time, ..Default::default() }
    }

    pub fn steps(&self) -> usize {
        (self.time.abs() / self.step).ceil().max(1.0) as usize
    }
}

/// Point of the punctured conormal bundle in the model chart (xi = 0).
#[derive(Debug, Clone, Copy)]
pub struct ConormalPoint {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub eta: [f64; 2],
}

/// Point of the holonomy groupoid of the linearized foliation: two leaf
/// coordinates over a common transverse point.  The source projection is
/// `(x2, y, eta)`, the range projection `(x, y, eta)`.
#[derive(Debug, Clone, Copy)]
pub struct GroupoidPoint {
    pub x: [f64; 2],
    pub x2: [f64; 2],
    pub y: [f64; 2],
    pub eta: [f64; 2],
}

impl GroupoidPoint {
    pub fn source(&self) -> ConormalPoint {
        ConormalPoint { x: self.x2, y: self.y, eta: self.eta }
    }
    pub fn range(&self) -> ConormalPoint {
        ConormalPoint { x: self.x, y: self.y, eta: self.eta }
    }
}

/// Precomputed field data for the transverse geodesic flow of a model
/// geometry: evaluates the (y, eta) Hamiltonian field and the leaf drift.
pub struct TransverseFlow<'a> {
    pub geom: &'a ModelGeometry,
    dgb: Vec<MatField>,
}

impl<'a> TransverseFlow<'a> {
    pub fn new(geom: &'a ModelGeometry) -> Self {
        let dgb = (0..geom.q)
            .map(|dir| {
                MatField::from_fields(
                    geom.q,
                    geom.q,
                    geom.g_b.entries.iter().map(|f| f.derivative(dir)).collect(),
                )
            })
            .collect();
        TransverseFlow { geom, dgb }
    }

    pub fn hamiltonian(&self, y: [f64; 2], eta: [f64; 2]) -> f64 {
        self.geom.transverse_norm(y, eta)
    }

    /// (ydot, etadot) of the co-geodesic field of p = |eta|_{g_B^{-1}}.
    pub fn base_field(&self, y: [f64; 2], eta: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let q = self.geom.q;
        let gi = self.geom.g_b_inv_at(y);
        let p = self.hamiltonian(y, eta);
        let mut ydot = [0.0; 2];
        for k in 0..q {
            for l in 0..q {
                ydot[k] += gi[(k, l)] * eta[l] / p;
            }
        }
        // etadot_m = -d_{y_m} p = + (eta^T gB^{-1} dgB gB^{-1} eta) / (2p)
        let mut etadot = [0.0; 2];
        for m in 0..q {
            let dg = self.dgb[m].eval_re(y);
            let mut acc = 0.0;
            for k in 0..q {
                for l in 0..q {
                    for r in 0..q {
                        for s in 0..q {
                            acc += eta[k] * gi[(k, r)] * dg[(r, s)] * gi[(s, l)] * eta[l];
                        }
                    }
                }
            }
            etadot[m] = acc / (2.0 * p);
        }
        (ydot, etadot)
    }

    /// Leaf drift xdot_j = d p / d xi_j at xi = 0, shared by both groupoid
    /// legs because the dual metric is x-independent.
    pub fn leaf_drift(&self, y: [f64; 2], eta: [f64; 2]) -> [f64; 2] {
        let gi = self.geom.g_b_inv_at(y);
        let a = self.geom.a_at(y);
        let p = self.hamiltonian(y, eta);
        let mut xdot = [0.0; 2];
        for j in 0..self.geom.p {
            for k in 0..self.geom.q {
                for l in 0..self.geom.q {
                    xdot[j] -= a[(j, k)] * gi[(k, l)] * eta[l] / p;
                }
            }
        }
        xdot
    }
}

/// One RK4 step of the packed state (y, eta, delta) where delta accumulates
/// the leaf drift.
fn rk4_step(flow: &TransverseFlow, state: &[f64; 6], h: f64) -> [f64; 6] {
    let f = |s: &[f64; 6]| -> [f64; 6] {
        let y = [s[0], s[1]];
        let eta = [s[2], s[3]];
        let (yd, ed) = flow.base_field(y, eta);
        let xd = flow.leaf_drift(y, eta);
        [yd[0], yd[1], ed[0], ed[1], xd[0], xd[1]]
    };
    let k1 = f(state);
    let mut s2 = *state;
    for i in 0..6 {
        s2[i] += 0.5 * h * k1[i];
    }
    let k2 = f(&s2);
    let mut s3 = *state;
    for i in 0..6 {
        s3[i] += 0.5 * h * k2[i];
    }
    let k3 = f(&s3);
    let mut s4 = *state;
    for i in 0..6 {
        s4[i] += h * k3[i];
    }
    let k4 = f(&s4);
    let mut out = *state;
    for i in 0..6 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Trajectory of the transverse geodesic flow together with the accumulated
/// leaf drift delta(t) (the same for both groupoid legs).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// (y, eta, delta) per sample.
    pub states: Vec<[f64; 6]>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64; 6] {
        self.states.last().unwrap()
    }

    pub fn y_at(&self, i: usize) -> [f64; 2] {
        [self.states[i][0], self.states[i][1]]
    }

    pub fn eta_at(&self, i: usize) -> [f64; 2] {
        [self.states[i][2], self.states[i][3]]
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "t,y1,y2,eta1,eta2,delta1,delta2")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(w, "{t},{},{},{},{},{},{}", s[0], s[1], s[2], s[3], s[4], s[5])?;
        }
        Ok(())
    }
}

/// Integrate the transverse geodesic flow from `(y0, eta0)`.
/// Signed time is supported (negative `cfg.time` runs the flow backward).
pub fn integrate_flow(
    flow: &TransverseFlow,
    y0: [f64; 2],
    eta0: [f64; 2],
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    let eta_norm = (eta0[0] * eta0[0] + eta0[1] * eta0[1]).sqrt();
    if eta_norm < cfg.eta_min {
        return Err(Error::EvaluationAtZeroSection(eta_norm, cfg.eta_min));
    }
    let n = cfg.steps();
    let h = cfg.time / n as f64;
    let mut state = [y0[0], y0[1], eta0[0], eta0[1], 0.0, 0.0];
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(state);
    for i in 0..n {
        state = rk4_step(flow, &state, h);
        let en = (state[2] * state[2] + state[3] * state[3]).sqrt();
        if en < cfg.eta_min || en > 1.0 / cfg.eta_min {
            return Err(Error::StepUnstable(en, cfg.eta_min, 1.0 / cfg.eta_min));
        }
        times.push((i + 1) as f64 * h);
        states.push(state);
    }
    Ok(Trajectory { times, states })
}

/// Flow of a groupoid point under the lifted field: both legs drift with the
/// same law evaluated at their own leaf coordinate (which coincide here
/// because the drift is x-independent).
pub fn lifted_flow(
    flow: &TransverseFlow,
    z0: &GroupoidPoint,
    cfg: &FlowConfig,
) -> Result<(GroupoidPoint, Trajectory)> {
    let traj = integrate_flow(flow, z0.y, z0.eta, cfg)?;
    let s = traj.last();
    let out = GroupoidPoint {
        x: [z0.x[0] + s[4], z0.x[1] + s[5]],
        x2: [z0.x2[0] + s[4], z0.x2[1] + s[5]],
        y: [s[0], s[1]],
        eta: [s[2], s[3]],
    };
    Ok((out, traj))
}

/// Parallel transport along a stored trajectory: solves dT/dtau = -Gamma T,
/// T(0) = I, where `gamma` evaluates the connection coefficient at a
/// trajectory state.  Stage values are interpolated linearly between stored
/// samples, which keeps the overall scheme fourth order for the fixed-step
/// trajectories produced above.
pub fn parallel_transport(
    gamma: &dyn Fn([f64; 2], [f64; 2]) -> Array2<C64>,
    traj: &Trajectory,
    rank: usize,
    hermitian: bool,
) -> Result<Array2<C64>> {
    let mut t_mat = Array2::eye(rank).mapv(|v: f64| C64::new(v, 0.0));
    let n = traj.states.len() - 1;
    for i in 0..n {
        let h = traj.times[i + 1] - traj.times[i];
        let g0 = gamma(traj.y_at(i), traj.eta_at(i));
        let g1 = gamma(traj.y_at(i + 1), traj.eta_at(i + 1));
        let gh = g0.mapv(|v| v * 0.5) + g1.mapv(|v| v * 0.5);
        let rhs = |g: &Array2<C64>, m: &Array2<C64>| -> Array2<C64> { -g.dot(m) };
        let k1 = rhs(&g0, &t_mat);
        let k2 = rhs(&gh, &(&t_mat + &k1.mapv(|v| v * (0.5 * h))));
        let k3 = rhs(&gh, &(&t_mat + &k2.mapv(|v| v * (0.5 * h))));
        let k4 = rhs(&g1, &(&t_mat + &k3.mapv(|v| v * h)));
        t_mat = &t_mat
            + &(k1 + k2.mapv(|v| v * 2.0) + k3.mapv(|v| v * 2.0) + k4).mapv(|v| v * (h / 6.0));
    }
    if hermitian {
        // unitarity drift is an integration-quality check
        let defect = crate::linalg::max_abs(
            &(t_mat.dot(&crate::linalg::adjoint(&t_mat)) - Array2::<C64>::eye(rank)),
        );
        if defect > 1e-6 {
            return Err(Error::OdeTolerance(defect, 1e-6));
        }
    }
    Ok(t_mat)
}

/// State of the frame flow over a q = 2 base: a base covector and an
/// orthonormal frame (v_1, v_2), transported parallelly along the geodesic.
#[derive(Debug, Clone, Copy)]
pub struct FramePoint {
    pub y: [f64; 2],
    pub xi: [f64; 2],
    pub v: [[f64; 2]; 2],
}

impl FramePoint {
    /// First integrals I_j = xi(v_j).
    pub fn first_integrals(&self) -> [f64; 2] {
        [
            self.xi[0] * self.v[0][0] + self.xi[1] * self.v[0][1],
            self.xi[0] * self.v[1][0] + self.xi[1] * self.v[1][1],
        ]
    }

    /// Right action of a rotation matrix on the frame.
    pub fn rotate(&self, a: &Array2<f64>) -> FramePoint {
        let mut v = [[0.0; 2]; 2];
        for j in 0..2 {
            for k in 0..2 {
                for i in 0..2 {
                    v[j][k] += self.v[i][k] * a[(i, j)];
                }
            }
        }
        FramePoint { y: self.y, xi: self.xi, v }
    }
}

/// Christoffel symbols of the base metric g_B.
pub struct BaseChristoffel<'a> {
    geom: &'a ModelGeometry,
    dgb: Vec<MatField>,
}

impl<'a> BaseChristoffel<'a> {
    pub fn new(geom: &'a ModelGeometry) -> Self {
        let dgb = (0..geom.q)
            .map(|dir| {
                MatField::from_fields(
                    geom.q,
                    geom.q,
                    geom.g_b.entries.iter().map(|f| f.derivative(dir)).collect(),
                )
            })
            .collect();
        BaseChristoffel { geom, dgb }
    }

    pub fn at(&self, y: [f64; 2]) -> [[[f64; 2]; 2]; 2] {
        let gi = self.geom.g_b_inv_at(y);
        let d: Vec<Array2<f64>> = self.dgb.iter().map(|m| m.eval_re(y)).collect();
        let mut out = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            for l in 0..2 {
                for m in 0..2 {
                    let mut acc = 0.0;
                    for r in 0..2 {
                        acc += gi[(k, r)] * (d[l][(r, m)] + d[m][(r, l)] - d[r][(l, m)]);
                    }
                    out[k][l][m] = 0.5 * acc;
                }
            }
        }
        out
    }
}

/// Frame flow over a q = 2 base: the covector follows the co-geodesic flow
/// of g_B and the frame is parallel along the projected geodesic.
pub fn frame_flow(geom: &ModelGeometry, z0: &FramePoint, cfg: &FlowConfig) -> Result<FramePoint> {
    if geom.q != 2 {
        return Err(Error::UnsupportedDimension {
            p: geom.p,
            q: geom.q,
            reason: "frame flow requires a q = 2 base",
        });
    }
    let flow = TransverseFlow::new(geom);
    let christoffel = BaseChristoffel::new(geom);
    let f = |s: &[f64; 8]| -> [f64; 8] {
        let y = [s[0], s[1]];
        let xi = [s[2], s[3]];
        let (yd, xid) = flow.base_field(y, xi);
        let gamma = christoffel.at(y);
        let mut out = [yd[0], yd[1], xid[0], xid[1], 0.0, 0.0, 0.0, 0.0];
        for j in 0..2 {
            for k in 0..2 {
                let mut acc = 0.0;
                for l in 0..2 {
                    for m in 0..2 {
                        acc -= gamma[k][l][m] * yd[l] * s[4 + 2 * j + m];
                    }
                }
                out[4 + 2 * j + k] = acc;
            }
        }
        out
    };
    let n = cfg.steps();
    let h = cfg.time / n as f64;
    let mut s = [
        z0.y[0], z0.y[1], z0.xi[0], z0.xi[1], z0.v[0][0], z0.v[0][1], z0.v[1][0], z0.v[1][1],
    ];
    for _ in 0..n {
        let k1 = f(&s);
        let mut s2 = s;
        for i in 0..8 {
            s2[i] += 0.5 * h * k1[i];
        }
        let k2 = f(&s2);
        let mut s3 = s;
        for i in 0..8 {
            s3[i] += 0.5 * h * k2[i];
        }
        let k3 = f(&s3);
        let mut s4 = s;
        for i in 0..8 {
            s4[i] += h * k3[i];
        }
        let k4 = f(&s4);
        for i in 0..8 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(FramePoint {
        y: [s[0], s[1]],
        xi: [s[2], s[3]],
        v: [[s[4], s[5]], [s[6], s[7]]],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::MatField;
    use approx::assert_abs_diff_eq;

    fn warped_q1() -> ModelGeometry {
        ModelGeometry::new(
            1,
            1,
            MatField::identity(1, 64, 1),
            MatField::from_entry_fn(1, 64, 1, 1, |_, _, y| 1.0 + 0.4 * y[0].cos()),
            MatField::from_entry_fn(1, 64, 1, 1, |_, _, _| 0.0),
        )
        .unwrap()
    }

    fn warped_q2() -> ModelGeometry {
        ModelGeometry::new(
            1,
            2,
            MatField::identity(2, 32, 1),
            MatField::from_entry_fn(2, 32, 2, 2, |r, c, y| {
                if r == c {
                    (0.3 * (y[0] + y[1]).cos()).exp()
                } else {
                    0.0
                }
            }),
            MatField::from_entry_fn(2, 32, 1, 2, |_, _, _| 0.0),
        )
        .unwrap()
    }

    #[test]
    fn flat_geodesics_are_straight() {
        let geom = ModelGeometry::flat(1, 1);
        let flow = TransverseFlow::new(&geom);
        let cfg = FlowConfig::with_time(2.0);
        let traj = integrate_flow(&flow, [0.3, 0.0], [1.5, 0.0], &cfg).unwrap();
        let s = traj.last();
        assert_abs_diff_eq!(s[0], 0.3 + 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s[2], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn diag_metric_closed_form() {
        // g_B = diag(1,4): straight lines in rescaled coordinates.
        let geom = ModelGeometry::new(
            1,
            2,
            MatField::identity(2, 32, 1),
            MatField::from_entry_fn(2, 32, 2, 2, |r, c, _| {
                if r == c {
                    if r == 0 {
                        1.0
                    } else {
                        4.0
                    }
                } else {
                    0.0
                }
            }),
            MatField::from_entry_fn(2, 32, 1, 2, |_, _, _| 0.0),
        )
        .unwrap();
        let flow = TransverseFlow::new(&geom);
        let cfg = FlowConfig::with_time(1.0);
        let eta = [0.7, 1.1];
        let traj = integrate_flow(&flow, [0.2, 0.9], [eta[0], eta[1]], &cfg).unwrap();
        let p = (eta[0] * eta[0] + eta[1] * eta[1] / 4.0).sqrt();
        let s = traj.last();
        assert_abs_diff_eq!(s[0], 0.2 + eta[0] / p, epsilon = 1e-8);
        assert_abs_diff_eq!(s[1], 0.9 + eta[1] / 4.0 / p, epsilon = 1e-8);
        assert_abs_diff_eq!(s[2], eta[0], epsilon = 1e-10);
    }

    #[test]
    fn energy_is_conserved_on_warped_models() {
        let geom = warped_q1();
        let flow = TransverseFlow::new(&geom);
        let cfg = FlowConfig::with_time(10.0);
        let y0 = [0.4, 0.0];
        let eta0 = [1.3, 0.0];
        let traj = integrate_flow(&flow, y0, eta0, &cfg).unwrap();
        let p0 = flow.hamiltonian(y0, eta0);
        for i in (0..traj.states.len()).step_by(500) {
            let p = flow.hamiltonian(traj.y_at(i), traj.eta_at(i));
            assert!((p - p0).abs() < 1e-8, "drift {:.2e} at step {i}", (p - p0).abs());
        }
    }

    #[test]
    fn zero_section_and_stability_guards() {
        let geom = ModelGeometry::flat(1, 1);
        let flow = TransverseFlow::new(&geom);
        let cfg = FlowConfig::default();
        assert!(matches!(
            integrate_flow(&flow, [0.0, 0.0], [1e-9, 0.0], &cfg),
            Err(Error::EvaluationAtZeroSection(_, _))
        ));
    }

    #[test]
    fn transport_signs_and_unitarity() {
        let geom = ModelGeometry::flat(1, 1);
        let flow = TransverseFlow::new(&geom);
        let cfg = FlowConfig::with_time(1.0);
        let traj = integrate_flow(&flow, [0.0, 0.0], [1.0, 0.0], &cfg).unwrap();
        // Gamma = 0 -> identity
        let id = parallel_transport(&|_, _| Array2::zeros((2, 2)), &traj, 2, false).unwrap();
        assert_abs_diff_eq!(
            crate::linalg::max_abs(&(&id - &Array2::eye(2).mapv(|v: f64| C64::new(v, 0.0)))),
            0.0,
            epsilon = 1e-12
        );
        // constant scalar Gamma = i theta: T = e^{-i theta t}
        let theta = 0.8;
        let t = parallel_transport(
            &|_, _| Array2::from_elem((1, 1), C64::new(0.0, theta)),
            &traj,
            1,
            true,
        )
        .unwrap();
        assert_abs_diff_eq!(t[(0, 0)].re, theta.cos(), epsilon = 1e-9);
        assert_abs_diff_eq!(t[(0, 0)].im, -theta.sin(), epsilon = 1e-9);
        // Hermitian case: skew-adjoint Gamma along a warped flow is unitary
        let geom2 = warped_q1();
        let flow2 = TransverseFlow::new(&geom2);
        let traj2 = integrate_flow(&flow2, [0.7, 0.0], [1.0, 0.0], &FlowConfig::with_time(3.0)).unwrap();
        let u = parallel_transport(
            &|y, _| {
                let b = 0.5 * y[0].sin();
                let mut g = Array2::zeros((2, 2));
                g[(0, 1)] = C64::new(b, 0.2);
                g[(1, 0)] = C64::new(-b, 0.2);
                g[(0, 0)] = C64::new(0.0, 0.3 * y[0].cos());
                g[(1, 1)] = C64::new(0.0, -0.1);
                g
            },
            &traj2,
            2,
            true,
        )
        .unwrap();
        let defect = crate::linalg::max_abs(
            &(u.dot(&crate::linalg::adjoint(&u)) - Array2::<C64>::eye(2)),
        );
        assert!(defect < 1e-8, "unitarity defect {defect:.2e}");
    }

    #[test]
    fn subflow_identity_for_constant_scalar_connection() {
        // alpha_t^* s = T_t^{-1} s(f_t .) must satisfy d/dt alpha_t^* s =
        // (v + Gamma) alpha_t^* s for Gamma = i theta along the flat flow.
        let geom = ModelGeometry::flat(1, 1);
        let flow = TransverseFlow::new(&geom);
        let theta = 0.6;
        let s_fun = |y: f64| C64::new((2.0 * y).cos(), y.sin());
        let ds_fun = |y: f64| C64::new(-2.0 * (2.0 * y).sin(), y.cos());
        let y0 = 0.4;
        let t = 0.7;
        let alpha = |tt: f64| -> C64 {
            // flat flow moves y by tt (eta > 0); T_tt = e^{-i theta tt}
            C64::new(0.0, theta * tt).exp() * s_fun(y0 + tt)
        };
        let dt = 1e-5;
        let fd = (alpha(t + dt) - alpha(t - dt)) / (2.0 * dt);
        let v_term = C64::new(0.0, theta * t).exp() * ds_fun(y0 + t);
        let gamma_term = C64::new(0.0, theta) * alpha(t);
        let resid = (fd - v_term - gamma_term).norm();
        assert!(resid < 1e-8, "subflow residual {resid:.2e}");
        let _ = flow;
    }

    #[test]
    fn lifted_flow_intertwines_with_base_flow() {
        let geom = warped_q2();
        let flow = TransverseFlow::new(&geom);
        let cfg = FlowConfig::with_time(1.0);
        let z0 = GroupoidPoint { x: [0.3, 0.0], x2: [1.1, 0.0], y: [0.5, 1.7], eta: [0.9, -0.4] };
        let (z1, _) = lifted_flow(&flow, &z0, &cfg).unwrap();
        // both projections must follow the base flow
        let base = integrate_flow(&flow, z0.y, z0.eta, &cfg).unwrap();
        let s = base.last();
        for k in 0..2 {
            assert_abs_diff_eq!(z1.y[k], s[k], epsilon = 1e-10);
            assert_abs_diff_eq!(z1.eta[k], s[2 + k], epsilon = 1e-10);
        }
        // legs drift by the same amount (x-independent drift)
        assert_abs_diff_eq!(z1.x[0] - z0.x[0], z1.x2[0] - z0.x2[0], epsilon = 1e-12);
    }

    #[test]
    fn frame_flow_conserves_integrals_and_commutes_with_rotations() {
        let geom = warped_q2();
        let cfg = FlowConfig::with_time(10.0);
        // orthonormal frame for g_B at y0
        let y0 = [0.3, 1.9];
        let frames = crate::geometry::build_frames(&geom).unwrap();
        let (_, f1) = frames.horizontal[0].eval(y0);
        let (_, f2) = frames.horizontal[1].eval(y0);
        let z0 = FramePoint {
            y: y0,
            xi: [0.8, -0.6],
            v: [[f1[0], f1[1]], [f2[0], f2[1]]],
        };
        let i0 = z0.first_integrals();
        let z1 = frame_flow(&geom, &z0, &cfg).unwrap();
        let i1 = z1.first_integrals();
        assert_abs_diff_eq!(i0[0], i1[0], epsilon = 1e-8);
        assert_abs_diff_eq!(i0[1], i1[1], epsilon = 1e-8);
        // orthonormality preserved
        let gb = geom.g_b_at(z1.y);
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        acc += z1.v[a][k] * gb[(k, l)] * z1.v[b][l];
                    }
                }
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((acc - want).abs() < 1e-8, "gram defect {:.2e}", (acc - want).abs());
            }
        }
        // SO(2) equivariance: flow(A z) = A flow(z)
        let ang = 0.77_f64;
        let mut rot = Array2::zeros((2, 2));
        rot[(0, 0)] = ang.cos();
        rot[(0, 1)] = -ang.sin();
        rot[(1, 0)] = ang.sin();
        rot[(1, 1)] = ang.cos();
        let za = frame_flow(&geom, &z0.rotate(&rot), &cfg).unwrap();
        let zb = z1.rotate(&rot);
        for j in 0..2 {
            for k in 0..2 {
                assert_abs_diff_eq!(za.v[j][k], zb.v[j][k], epsilon = 1e-8);
            }
        }
        // I_j(A z) = sum_i I_i(z) a_ij
        let ia = z0.rotate(&rot).first_integrals();
        for j in 0..2 {
            let want = i0[0] * rot[(0, j)] + i0[1] * rot[(1, j)];
            assert_abs_diff_eq!(ia[j], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn flat_frame_flow_is_constant() {
        let geom = ModelGeometry::flat(1, 2);
        let z0 = FramePoint { y: [0.2, 0.5], xi: [1.0, 0.3], v: [[1.0, 0.0], [0.0, 1.0]] };
        let z1 = frame_flow(&geom, &z0, &FlowConfig::with_time(2.0)).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                assert_abs_diff_eq!(z1.v[j][k], z0.v[j][k], epsilon = 1e-12);
            }
        }
    }
}
