//! Independent certification of dispatch solutions.
//!
//! Everything here deliberately avoids the agent-dynamics code path: the
//! KKT checker works off the stacked matrices, the feasibility checker
//! re-derives every constraint per bus (telescoping the energy recursion
//! directly), and the centralized [`oracle`] solves the compact QP with an
//! operator-splitting method. Agreement between a converged distributed run
//! and the oracle therefore cross-validates both.

pub mod qp;
pub mod reference;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{SystemState, STATE_FIELDS};
use crate::linalg::{norm_inf, Mat};
use crate::math;
use crate::problem::{CompactProblem, MtsedProblem, X_PC, X_PD, X_PG, X_QG, X_THETA, X_V};

use qp::{solve_qp, QpData, QpError, QpSettings};

/// Scaled KKT residuals of a primal-dual candidate.
///
/// `eq_residual`, `ineq_violation` and `stationarity` are normalized by
/// `1 + ||D||`, `1 + ||F||` and `1 + ||g||` respectively (max-norms);
/// `complementarity` is additionally normalized by `1 + ||z||` since it is
/// bilinear in primal slack and dual scale. `box_violation` and
/// `dual_negativity` are absolute (p.u. / multiplier units).
/// `simultaneous_charge_discharge` reports the worst per-slot product
/// `p_c * p_d` (p.u.^2); it is not an optimality condition and does not
/// enter [`KktReport::certified`], but any certified optimum with a strictly
/// increasing storage cost drives it to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub eq_residual: f64,
    pub ineq_violation: f64,
    pub box_violation: f64,
    pub dual_negativity: f64,
    pub complementarity: f64,
    pub stationarity: f64,
    pub simultaneous_charge_discharge: f64,
}

impl KktReport {
    /// Worst optimality residual (exclusivity excluded).
    pub fn worst(&self) -> f64 {
        self.eq_residual
            .max(self.ineq_violation)
            .max(self.box_violation)
            .max(self.dual_negativity)
            .max(self.complementarity)
            .max(self.stationarity)
    }

    pub fn certified(&self, tol: f64) -> bool {
        self.worst() <= tol
    }
}

/// Full KKT residual computation. `z` are the inequality multipliers (the
/// projected `z+` of a dynamics run, or the oracle duals); box multipliers
/// are implicit in the variational stationarity condition
/// `P_Omega(x - g) = x` with `g = A x + B + C'y + E'z`.
pub fn check_kkt(x_tilde: &[f64], y: &[f64], z: &[f64], c: &CompactProblem) -> KktReport {
    let nt = c.nt();
    assert_eq!(x_tilde.len(), c.nx(), "primal dimension mismatch");
    assert_eq!(y.len(), 2 * nt, "equality dual dimension mismatch");
    assert_eq!(z.len(), 4 * nt, "inequality dual dimension mismatch");

    let mut cx = vec![0.0; 2 * nt];
    c.cmat.matvec(x_tilde, &mut cx);
    let mut eq = 0.0f64;
    for r in 0..2 * nt {
        eq = eq.max(math::abs(cx[r] - c.dvec[r]));
    }
    let eq_residual = eq / (1.0 + norm_inf(&c.dvec));

    let mut ex = vec![0.0; 4 * nt];
    c.emat.matvec(x_tilde, &mut ex);
    let f_norm = norm_inf(&c.fvec);
    let z_norm = norm_inf(z);
    let mut ineq = 0.0f64;
    let mut comp = 0.0f64;
    let mut dual_neg = 0.0f64;
    for r in 0..4 * nt {
        let slack = ex[r] - c.fvec[r];
        if slack > ineq {
            ineq = slack;
        }
        comp = comp.max(math::abs(z[r] * slack));
        dual_neg = dual_neg.max(-z[r]);
    }
    let ineq_violation = ineq.max(0.0) / (1.0 + f_norm);
    let complementarity = comp / ((1.0 + f_norm) * (1.0 + z_norm));
    let dual_negativity = dual_neg.max(0.0);

    let box_violation = c.omega.violation(x_tilde);

    // g = A x + B + C'y + E'z
    let mut g = vec![0.0; c.nx()];
    c.grad_into(x_tilde, &mut g);
    let mut cty = vec![0.0; c.nx()];
    c.cmat.matvec_t(y, &mut cty);
    let mut etz = vec![0.0; c.nx()];
    c.emat.matvec_t(z, &mut etz);
    for i in 0..c.nx() {
        g[i] += cty[i] + etz[i];
    }
    let mut stat = 0.0f64;
    for i in 0..c.nx() {
        let stepped = x_tilde[i] - g[i];
        let projected = c.omega.clamp_coord(i, stepped);
        stat = stat.max(math::abs(projected - x_tilde[i]));
    }
    let stationarity = stat / (1.0 + norm_inf(&g));

    let mut sim_cd = 0.0f64;
    for idx in 0..nt {
        sim_cd = sim_cd.max(x_tilde[X_PC * nt + idx] * x_tilde[X_PD * nt + idx]);
    }

    KktReport {
        eq_residual,
        ineq_violation,
        box_violation,
        dual_negativity,
        complementarity,
        stationarity,
        simultaneous_charge_discharge: sim_cd,
    }
}

/// Worst violation of each constraint family, evaluated per bus from the
/// original constraint forms (energy by telescoping the recursion), not from
/// the stacked matrices.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeasibilityReport {
    pub balance_p: f64,
    pub balance_q: f64,
    pub gen_p_box: f64,
    pub gen_q_box: f64,
    pub charge_box: f64,
    pub discharge_box: f64,
    pub voltage_box: f64,
    pub ramp: f64,
    pub energy: f64,
}

impl FeasibilityReport {
    pub fn worst(&self) -> f64 {
        self.balance_p
            .max(self.balance_q)
            .max(self.gen_p_box)
            .max(self.gen_q_box)
            .max(self.charge_box)
            .max(self.discharge_box)
            .max(self.voltage_box)
            .max(self.ramp)
            .max(self.energy)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.worst() <= tol
    }
}

pub fn check_feasibility(x_tilde: &[f64], p: &MtsedProblem) -> FeasibilityReport {
    assert_eq!(x_tilde.len(), p.nx(), "solution dimension mismatch");
    let nt = p.nt();
    let tau = p.tau;
    let at = |block: usize, i: usize, k: usize| x_tilde[block * nt + i * tau + k];
    let mut rep = FeasibilityReport::default();

    for i in 0..p.n {
        let bp = &p.buses[i];
        let mut energy = bp.c0;
        let mut prev_p = bp.p0;
        for k in 0..tau {
            let pg = at(X_PG, i, k);
            let qg = at(X_QG, i, k);
            let pc = at(X_PC, i, k);
            let pd = at(X_PD, i, k);
            let v = at(X_V, i, k);

            let mut flow_p = 0.0;
            let mut flow_q = 0.0;
            for j in 0..p.n {
                let vj = at(X_V, j, k);
                let tj = at(X_THETA, j, k);
                flow_p += p.dlpf.g[(i, j)] * vj - p.dlpf.bp[(i, j)] * tj;
                flow_q += p.dlpf.b[(i, j)] * vj + p.dlpf.g[(i, j)] * tj;
            }
            rep.balance_p = rep.balance_p.max(math::abs(pg - bp.d_p[k] - pc + pd - flow_p));
            rep.balance_q = rep.balance_q.max(math::abs(qg - bp.d_q[k] + flow_q));

            rep.gen_p_box = rep.gen_p_box.max(bp.p_lo - pg).max(pg - bp.p_hi);
            rep.gen_q_box = rep.gen_q_box.max(bp.q_lo - qg).max(qg - bp.q_hi);
            rep.charge_box = rep.charge_box.max(-pc).max(pc - bp.pc_hi);
            rep.discharge_box = rep.discharge_box.max(-pd).max(pd - bp.pd_hi);
            rep.voltage_box = rep.voltage_box.max(bp.v_lo - v).max(v - bp.v_hi);

            let delta = pg - prev_p;
            rep.ramp = rep
                .ramp
                .max(delta - bp.ramp_hi * p.slot_hours)
                .max(bp.ramp_lo * p.slot_hours - delta);
            prev_p = pg;

            energy += p.slot_hours * (bp.eta_c * pc - bp.eta_d_inv * pd);
            rep.energy = rep.energy.max(energy - bp.c_hi).max(bp.c_lo - energy);
        }
    }
    // clamp tiny negatives from the max chains
    rep.gen_p_box = rep.gen_p_box.max(0.0);
    rep.gen_q_box = rep.gen_q_box.max(0.0);
    rep.charge_box = rep.charge_box.max(0.0);
    rep.discharge_box = rep.discharge_box.max(0.0);
    rep.voltage_box = rep.voltage_box.max(0.0);
    rep.ramp = rep.ramp.max(0.0);
    rep.energy = rep.energy.max(0.0);
    rep
}

/// Energy-like function certifying convergence: quadratic distance of the
/// dual blocks to an equilibrium plus the projection gap term
/// `W(x) = 1/2 ||x - xt*||^2 - 1/2 ||x - xt||^2`, which is sandwiched by
/// `1/2 ||xt - xt*||^2 <= W <= 1/2 ||x - xt*||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovValue {
    pub v: f64,
    pub w: f64,
    pub sandwich_lo: f64,
    pub sandwich_hi: f64,
}

pub fn lyapunov(zeta: &SystemState, zeta_star: &SystemState, c: &CompactProblem) -> LyapunovValue {
    assert_eq!(zeta.dim(), zeta_star.dim(), "state dimension mismatch");
    assert_eq!(zeta.dim(), STATE_FIELDS * c.nt(), "state/problem mismatch");
    let nx = c.nx();

    let x = zeta.x();
    let x_star = zeta_star.x();
    let mut xt = vec![0.0; nx];
    c.omega.project_into(x, &mut xt);
    let mut xt_star = vec![0.0; nx];
    c.omega.project_into(x_star, &mut xt_star);

    let mut w = 0.0;
    let mut lo = 0.0;
    let mut hi = 0.0;
    for i in 0..nx {
        let a = x[i] - xt_star[i];
        let b = x[i] - xt[i];
        w += 0.5 * (a * a - b * b);
        let d = xt[i] - xt_star[i];
        lo += 0.5 * d * d;
        hi += 0.5 * a * a;
    }

    let mut dual = 0.0;
    let za = zeta.as_slice();
    let zb = zeta_star.as_slice();
    for i in nx..zeta.dim() {
        let d = za[i] - zb[i];
        dual += 0.5 * d * d;
    }

    LyapunovValue { v: w + dual, w, sandwich_lo: lo, sandwich_hi: hi }
}

/// Certified primal-dual solution of the compact QP.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// Optimal primal point (p.u.).
    pub x: Vec<f64>,
    /// Balance (equality) multipliers.
    pub y: Vec<f64>,
    /// Ramp/energy (inequality) multipliers, nonnegative.
    pub z: Vec<f64>,
    /// Total cost including constant terms, $/h.
    pub cost: f64,
    pub iterations: u64,
    pub polished: bool,
    pub kkt: KktReport,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    Infeasible(String),
    IterationLimit { pri_res: f64, dua_res: f64 },
    Numerical(String),
}

impl core::fmt::Display for OracleError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            OracleError::Infeasible(w) => write!(f, "infeasibility certificate: {w}"),
            OracleError::IterationLimit { pri_res, dua_res } => write!(
                f,
                "oracle iteration budget exhausted (primal {pri_res:.3e}, dual {dua_res:.3e})"
            ),
            OracleError::Numerical(w) => write!(f, "oracle numerical failure: {w}"),
        }
    }
}

impl core::error::Error for OracleError {}

fn qp_data(c: &CompactProblem) -> QpData {
    let nx = c.nx();
    let n_eq = c.n_eq();
    let n_in = c.n_ineq();
    // box rows only for coordinates with at least one finite bound
    let boxed: Vec<usize> = (0..nx)
        .filter(|&i| c.omega.lo()[i].is_finite() || c.omega.hi()[i].is_finite())
        .collect();
    let m_rows = n_eq + n_in + boxed.len();
    let mut m = Mat::zeros(m_rows, nx);
    let mut l = vec![0.0; m_rows];
    let mut u = vec![0.0; m_rows];
    for r in 0..n_eq {
        m.row_mut(r).copy_from_slice(c.cmat.row(r));
        l[r] = c.dvec[r];
        u[r] = c.dvec[r];
    }
    for r in 0..n_in {
        m.row_mut(n_eq + r).copy_from_slice(c.emat.row(r));
        l[n_eq + r] = f64::NEG_INFINITY;
        u[n_eq + r] = c.fvec[r];
    }
    for (k, &i) in boxed.iter().enumerate() {
        m[(n_eq + n_in + k, i)] = 1.0;
        l[n_eq + n_in + k] = c.omega.lo()[i];
        u[n_eq + n_in + k] = c.omega.hi()[i];
    }
    QpData { p_diag: c.a_diag.clone(), q: c.bvec.clone(), m, l, u }
}

fn map_qp_error(e: QpError) -> OracleError {
    match e {
        QpError::PrimalInfeasible => {
            OracleError::Infeasible(String::from("no point satisfies the constraints"))
        }
        QpError::DualInfeasible => {
            OracleError::Infeasible(String::from("objective is unbounded below"))
        }
        QpError::IterationLimit { pri_res, dua_res } => {
            OracleError::IterationLimit { pri_res, dua_res }
        }
        QpError::Numerical(w) => OracleError::Numerical(w),
    }
}

/// Centralized reference solve of the compact QP; the result is certified by
/// [`check_kkt`] at `tol` (a failed certification after the fallback rounds
/// is a numerical error). Deterministic for fixed inputs.
pub fn oracle(c: &CompactProblem, tol: f64) -> Result<OracleSolution, OracleError> {
    let data = qp_data(c);
    let rounds = [
        QpSettings { eps_abs: 1e-8, eps_rel: 1e-8, max_iter: 60_000, ..Default::default() },
        QpSettings { eps_abs: 1e-10, eps_rel: 1e-10, max_iter: 400_000, ..Default::default() },
    ];
    let mut last_err = None;
    for settings in rounds {
        let sol = match solve_qp(&data, &settings) {
            Ok(s) => s,
            Err(e @ (QpError::PrimalInfeasible | QpError::DualInfeasible)) => {
                return Err(map_qp_error(e))
            }
            Err(e) => {
                last_err = Some(map_qp_error(e));
                continue;
            }
        };
        let (mut x, y, z) = split_duals(c, sol.x, &sol.y);
        // scrub projection dust so the primal lies in the box exactly
        let raw = x.clone();
        c.omega.project_into(&raw, &mut x);
        let kkt = check_kkt(&x, &y, &z, c);
        if kkt.certified(tol) {
            return Ok(OracleSolution {
                cost: c.objective(&x),
                x,
                y,
                z,
                iterations: sol.iterations,
                polished: sol.polished,
                kkt,
            });
        }
        last_err = Some(OracleError::Numerical(alloc::format!(
            "solution not certified at tol {tol:.1e}: worst residual {:.3e}",
            kkt.worst()
        )));
    }
    Err(last_err.expect("at least one round ran"))
}

fn split_duals(c: &CompactProblem, x: Vec<f64>, y_rows: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_eq = c.n_eq();
    let n_in = c.n_ineq();
    let y = y_rows[..n_eq].to_vec();
    // inequality multipliers are upper-bound duals: nonnegative up to solver
    // tolerance, so clip the dust
    let z: Vec<f64> = y_rows[n_eq..n_eq + n_in].iter().map(|&v| v.max(0.0)).collect();
    (x, y, z)
}

/// Reconstruct the full dynamics equilibrium from an oracle solution: the
/// pre-projection primal state is `x* = xt* - g(xt*)`, multipliers carry
/// over, and the phase-lead block vanishes.
pub fn equilibrium_state(c: &CompactProblem, sol: &OracleSolution) -> SystemState {
    let nt = c.nt();
    let nx = c.nx();
    let mut g = vec![0.0; nx];
    c.grad_into(&sol.x, &mut g);
    let mut cty = vec![0.0; nx];
    c.cmat.matvec_t(&sol.y, &mut cty);
    let mut etz = vec![0.0; nx];
    c.emat.matvec_t(&sol.z, &mut etz);

    let mut zeta = SystemState::zeros(c.n, c.tau);
    let data = zeta.as_mut_slice();
    for i in 0..nx {
        data[i] = sol.x[i] - (g[i] + cty[i] + etz[i]);
    }
    data[nx..nx + 2 * nt].copy_from_slice(&sol.y);
    data[nx + 2 * nt..nx + 6 * nt].copy_from_slice(&sol.z);
    // rho* = 0
    zeta
}

/// Margin screen: maximize a uniform slack inside every device box, ramp and
/// energy constraint (and the voltage bands) subject to the balances. A
/// strictly positive optimum certifies the interior-point condition that
/// keeps the multipliers bounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlaterReport {
    pub margin: f64,
    pub satisfied: bool,
}

pub fn slater_screen(p: &MtsedProblem) -> Result<SlaterReport, OracleError> {
    let c = p.compact();
    let nx = c.nx();
    let nt = c.nt();
    let nv = nx + 1; // margin variable appended
    let mut rows: Vec<(Vec<f64>, f64, f64)> = Vec::new();

    // balances, margin-free
    for r in 0..c.n_eq() {
        let mut row = vec![0.0; nv];
        row[..nx].copy_from_slice(c.cmat.row(r));
        rows.push((row, c.dvec[r], c.dvec[r]));
    }
    // ramp/energy rows of buses that own the device
    for r in 0..c.n_ineq() {
        let bus = (r % nt) / p.tau;
        let relevant = if r < 2 * nt { p.buses[bus].has_gen } else { p.buses[bus].has_storage };
        if !relevant {
            continue;
        }
        let mut row = vec![0.0; nv];
        row[..nx].copy_from_slice(c.emat.row(r));
        row[nx] = 1.0;
        rows.push((row, f64::NEG_INFINITY, c.fvec[r]));
    }
    // boxes: device boxes and voltage bands get the margin on both sides;
    // absent-device singletons stay pinned at zero
    for i in 0..nx {
        let lo = c.omega.lo()[i];
        let hi = c.omega.hi()[i];
        if !lo.is_finite() && !hi.is_finite() {
            continue;
        }
        let block = i / nt;
        let bus = (i % nt) / p.tau;
        let devrow = match block {
            X_PG | X_QG => p.buses[bus].has_gen,
            X_PC | X_PD => p.buses[bus].has_storage,
            X_V => true,
            _ => false,
        };
        if devrow {
            let mut up = vec![0.0; nv];
            up[i] = 1.0;
            up[nx] = 1.0;
            rows.push((up, f64::NEG_INFINITY, hi));
            let mut dn = vec![0.0; nv];
            dn[i] = 1.0;
            dn[nx] = -1.0;
            rows.push((dn, lo, f64::INFINITY));
        } else {
            let mut pin = vec![0.0; nv];
            pin[i] = 1.0;
            rows.push((pin, lo, hi));
        }
    }
    // margin itself: nonnegative
    {
        let mut row = vec![0.0; nv];
        row[nx] = 1.0;
        rows.push((row, 0.0, f64::INFINITY));
    }

    let mut m = Mat::zeros(rows.len(), nv);
    let mut l = vec![0.0; rows.len()];
    let mut u = vec![0.0; rows.len()];
    for (r, (row, lo, hi)) in rows.iter().enumerate() {
        m.row_mut(r).copy_from_slice(row);
        l[r] = *lo;
        u[r] = *hi;
    }
    let mut q = vec![0.0; nv];
    q[nx] = -1.0; // maximize the margin
    let data = QpData { p_diag: vec![0.0; nv], q, m, l, u };
    let settings = QpSettings {
        eps_abs: 1e-6,
        eps_rel: 1e-6,
        max_iter: 300_000,
        ..Default::default()
    };
    let sol = solve_qp(&data, &settings).map_err(map_qp_error)?;
    let margin = sol.x[nx].max(0.0);
    Ok(SlaterReport { margin, satisfied: margin > 1e-5 })
}
