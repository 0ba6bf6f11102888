//! Dense operator-splitting QP solver used by the centralized oracle.
//!
//! Solves
//!
//! ```text
//! minimize   1/2 x' P x + q' x      (P diagonal PSD)
//! subject to l <= M x <= u
//! ```
//!
//! by the standard splitting: Ruiz equilibration of the data, a quasi-definite
//! KKT factorization reused across iterations, over-relaxed alternating
//! updates with per-row penalties, infeasibility certificates from the
//! iterate differences, and a final active-set polish that re-solves the
//! equality-constrained KKT system with iterative refinement. The method
//! shares no code path with the agent dynamics, so agreement between the two
//! is a genuine cross-check.
//!
//! Everything is deterministic: fixed iteration schedule, no randomness.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{ldlt_factor, norm_inf, Mat};

/// Problem data. Rows with `l == u` are equalities; infinite bounds encode
/// one-sided or absent constraints.
#[derive(Debug, Clone)]
pub struct QpData {
    pub p_diag: Vec<f64>,
    pub q: Vec<f64>,
    pub m: Mat,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: u64,
    pub check_every: u64,
    pub sigma: f64,
    pub alpha: f64,
    pub rho: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
    /// Attempt the active-set polish at this iteration cadence once the
    /// relative residuals fall under `polish_gate`; a polish whose worst
    /// KKT violation lands below `polish_accept * (1 + ||q||)` ends the run
    /// early. The active set usually settles long before the splitting
    /// residuals tighten.
    pub polish_every: u64,
    pub polish_gate: f64,
    pub polish_accept: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            eps_abs: 1e-9,
            eps_rel: 1e-9,
            max_iter: 50_000,
            check_every: 25,
            sigma: 1e-6,
            alpha: 1.6,
            rho: 0.1,
            adaptive_rho: true,
            polish: true,
            polish_every: 2_500,
            polish_gate: 1e-4,
            polish_accept: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Row multipliers with the sign convention `P x + q + M' y = 0`.
    pub y: Vec<f64>,
    pub iterations: u64,
    pub pri_res: f64,
    pub dua_res: f64,
    pub polished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpError {
    PrimalInfeasible,
    DualInfeasible,
    IterationLimit { pri_res: f64, dua_res: f64 },
    Numerical(String),
}

impl core::fmt::Display for QpError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            QpError::PrimalInfeasible => write!(f, "problem is primal infeasible"),
            QpError::DualInfeasible => write!(f, "problem is dual infeasible (unbounded below)"),
            QpError::IterationLimit { pri_res, dua_res } => write!(
                f,
                "iteration budget exhausted (primal residual {pri_res:.3e}, dual residual {dua_res:.3e})"
            ),
            QpError::Numerical(w) => write!(f, "numerical failure: {w}"),
        }
    }
}

impl core::error::Error for QpError {}

#[inline]
fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// Scaled copy of the data plus the diagonal scalings needed to recover
/// unscaled iterates.
struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

fn ruiz_equilibrate(data: &mut QpData) -> Scaling {
    let n = data.q.len();
    let m_rows = data.l.len();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m_rows];

    for _ in 0..10 {
        let mut cnorm = vec![0.0f64; n];
        let mut rnorm = vec![0.0f64; m_rows];
        for j in 0..n {
            cnorm[j] = data.p_diag[j].abs();
        }
        for r in 0..m_rows {
            let row = data.m.row(r);
            for j in 0..n {
                let a = row[j].abs();
                if a > rnorm[r] {
                    rnorm[r] = a;
                }
                if a > cnorm[j] {
                    cnorm[j] = a;
                }
            }
        }
        let delta = |nrm: f64| -> f64 {
            if nrm > 1e-12 {
                1.0 / crate::math::sqrt(nrm)
            } else {
                1.0
            }
        };
        let dx: Vec<f64> = cnorm.iter().map(|&v| delta(v)).collect();
        let de: Vec<f64> = rnorm.iter().map(|&v| delta(v)).collect();
        for j in 0..n {
            data.p_diag[j] *= dx[j] * dx[j];
            data.q[j] *= dx[j];
            d[j] *= dx[j];
        }
        for r in 0..m_rows {
            let row = data.m.row_mut(r);
            for j in 0..n {
                row[j] *= de[r] * dx[j];
            }
            if data.l[r].is_finite() {
                data.l[r] *= de[r];
            }
            if data.u[r].is_finite() {
                data.u[r] *= de[r];
            }
            e[r] *= de[r];
        }
    }

    // cost scaling keeps the gradient O(1)
    let gnorm = norm_inf(&data.q).max(norm_inf(&data.p_diag));
    let c = if gnorm > 1.0 { 1.0 / gnorm } else { 1.0 };
    for j in 0..n {
        data.p_diag[j] *= c;
        data.q[j] *= c;
    }
    Scaling { d, e, c }
}

fn row_penalties(data: &QpData, rho_bar: f64) -> Vec<f64> {
    data.l
        .iter()
        .zip(data.u.iter())
        .map(|(&l, &u)| {
            if l.is_finite() && u.is_finite() && l == u {
                rho_bar * 1e3
            } else if !l.is_finite() && !u.is_finite() {
                1e-6
            } else {
                rho_bar
            }
        })
        .collect()
}

fn build_kkt(data: &QpData, sigma: f64, rho: &[f64]) -> Mat {
    let n = data.q.len();
    let m_rows = data.l.len();
    let dim = n + m_rows;
    let mut k = Mat::zeros(dim, dim);
    for j in 0..n {
        k[(j, j)] = data.p_diag[j] + sigma;
    }
    for r in 0..m_rows {
        let row = data.m.row(r);
        for j in 0..n {
            k[(n + r, j)] = row[j];
            k[(j, n + r)] = row[j];
        }
        k[(n + r, n + r)] = -1.0 / rho[r];
    }
    k
}

struct Residuals {
    pri: f64,
    dua: f64,
    pri_rel: f64,
    dua_rel: f64,
}

/// Unscaled residuals of the current iterate against the original data.
fn residuals(
    orig: &QpData,
    scal: &Scaling,
    x_s: &[f64],
    y_s: &[f64],
    z_s: &[f64],
    work_n: &mut [f64],
    work_m: &mut [f64],
) -> Residuals {
    let n = orig.q.len();
    let m_rows = orig.l.len();
    // unscale
    let x: Vec<f64> = (0..n).map(|j| scal.d[j] * x_s[j]).collect();
    let y: Vec<f64> = (0..m_rows).map(|r| scal.e[r] * y_s[r] / scal.c).collect();
    let z: Vec<f64> = (0..m_rows).map(|r| z_s[r] / scal.e[r]).collect();

    orig.m.matvec(&x, work_m);
    let mut pri = 0.0f64;
    let mut mx_norm = 0.0f64;
    let mut z_norm = 0.0f64;
    for r in 0..m_rows {
        pri = pri.max((work_m[r] - z[r]).abs());
        mx_norm = mx_norm.max(work_m[r].abs());
        z_norm = z_norm.max(z[r].abs());
    }
    orig.m.matvec_t(&y, work_n);
    let mut dua = 0.0f64;
    let mut px_norm = 0.0f64;
    let mut aty_norm = 0.0f64;
    for j in 0..n {
        let px = orig.p_diag[j] * x[j];
        dua = dua.max((px + orig.q[j] + work_n[j]).abs());
        px_norm = px_norm.max(px.abs());
        aty_norm = aty_norm.max(work_n[j].abs());
    }
    let q_norm = norm_inf(&orig.q);
    Residuals {
        pri,
        dua,
        pri_rel: pri / (1e-30 + mx_norm.max(z_norm)),
        dua_rel: dua / (1e-30 + px_norm.max(aty_norm).max(q_norm)),
    }
}

fn primal_infeasibility_certificate(data: &QpData, dy: &[f64], work_n: &mut [f64]) -> bool {
    let norm = norm_inf(dy);
    if norm < 1e-14 {
        return false;
    }
    let eps = 1e-6 * norm;
    data.m.matvec_t(dy, work_n);
    if norm_inf(work_n) > eps {
        return false;
    }
    let mut support = 0.0;
    for r in 0..dy.len() {
        let pos = dy[r].max(0.0);
        let neg = dy[r].min(0.0);
        if pos > eps && !data.u[r].is_finite() {
            return false;
        }
        if neg < -eps && !data.l[r].is_finite() {
            return false;
        }
        if data.u[r].is_finite() {
            support += data.u[r] * pos;
        }
        if data.l[r].is_finite() {
            support += data.l[r] * neg;
        }
    }
    support < -eps
}

fn dual_infeasibility_certificate(data: &QpData, dx: &[f64], work_m: &mut [f64]) -> bool {
    let norm = norm_inf(dx);
    if norm < 1e-14 {
        return false;
    }
    let eps = 1e-6 * norm;
    for j in 0..dx.len() {
        if (data.p_diag[j] * dx[j]).abs() > eps {
            return false;
        }
    }
    let mut qdx = 0.0;
    for j in 0..dx.len() {
        qdx += data.q[j] * dx[j];
    }
    if qdx >= -eps {
        return false;
    }
    data.m.matvec(dx, work_m);
    for r in 0..data.l.len() {
        if data.u[r].is_finite() && work_m[r] > eps {
            return false;
        }
        if data.l[r].is_finite() && work_m[r] < -eps {
            return false;
        }
    }
    true
}

pub fn solve_qp(orig: &QpData, settings: &QpSettings) -> Result<QpSolution, QpError> {
    let n = orig.q.len();
    let m_rows = orig.l.len();
    assert_eq!(orig.p_diag.len(), n);
    assert_eq!(orig.m.rows(), m_rows);
    assert_eq!(orig.m.cols(), n);
    for r in 0..m_rows {
        if orig.l[r] > orig.u[r] {
            return Err(QpError::PrimalInfeasible);
        }
    }

    let mut data = orig.clone();
    let scal = ruiz_equilibrate(&mut data);
    let mut rho_bar = settings.rho;
    let mut rho = row_penalties(&data, rho_bar);
    let mut kkt = ldlt_factor(&build_kkt(&data, settings.sigma, &rho))
        .map_err(|e| QpError::Numerical(alloc::format!("KKT factorization failed: {e}")))?;

    let mut x = vec![0.0; n];
    let mut z = vec![0.0; m_rows];
    let mut y = vec![0.0; m_rows];
    let mut rhs = vec![0.0; n + m_rows];
    let mut work_n = vec![0.0; n];
    let mut work_m = vec![0.0; m_rows];
    let mut dy_acc = vec![0.0; m_rows];
    let mut dx_acc = vec![0.0; n];

    let mut refactor_count = 0u32;
    let mut iterations = 0u64;

    while iterations < settings.max_iter {
        iterations += 1;

        // KKT solve for the joint update
        for j in 0..n {
            rhs[j] = settings.sigma * x[j] - data.q[j];
        }
        for r in 0..m_rows {
            rhs[n + r] = z[r] - y[r] / rho[r];
        }
        kkt.solve_in_place(&mut rhs);

        let alpha = settings.alpha;
        for j in 0..n {
            let xt = rhs[j];
            dx_acc[j] = alpha * (xt - x[j]);
            x[j] += dx_acc[j];
        }
        for r in 0..m_rows {
            let nu = rhs[n + r];
            let zt = z[r] + (nu - y[r]) / rho[r];
            let w = alpha * zt + (1.0 - alpha) * z[r] + y[r] / rho[r];
            let z_new = clamp(w, data.l[r], data.u[r]);
            let y_new = rho[r] * (w - z_new);
            dy_acc[r] = y_new - y[r];
            z[r] = z_new;
            y[r] = y_new;
        }

        if iterations % settings.check_every == 0 {
            let res = residuals(orig, &scal, &x, &y, &z, &mut work_n, &mut work_m);
            let eps_pri = settings.eps_abs + settings.eps_rel * last_scale(&res, true);
            let eps_dua = settings.eps_abs + settings.eps_rel * last_scale(&res, false);
            if res.pri <= eps_pri && res.dua <= eps_dua {
                break;
            }
            if primal_infeasibility_certificate(&data, &dy_acc, &mut work_n) {
                return Err(QpError::PrimalInfeasible);
            }
            if dual_infeasibility_certificate(&data, &dx_acc, &mut work_m) {
                return Err(QpError::DualInfeasible);
            }
            if settings.polish
                && iterations % settings.polish_every == 0
                && res.pri_rel < settings.polish_gate
                && res.dua_rel < settings.polish_gate
            {
                let x_u: Vec<f64> = (0..n).map(|j| scal.d[j] * x[j]).collect();
                if let Some((xp, yp)) = polish(orig, &x_u) {
                    let finite = xp.iter().chain(yp.iter()).all(|v| v.is_finite());
                    let merit = kkt_merit(orig, &xp, &yp, &mut work_n, &mut work_m);
                    if finite && merit <= settings.polish_accept * (1.0 + norm_inf(&orig.q)) {
                        return Ok(QpSolution {
                            x: xp,
                            y: yp,
                            iterations,
                            pri_res: res.pri,
                            dua_res: res.dua,
                            polished: true,
                        });
                    }
                }
            }
            if settings.adaptive_rho && refactor_count < 6 {
                let ratio = (res.pri_rel / (res.dua_rel + 1e-30)).max(1e-12);
                if ratio > 25.0 || ratio < 0.04 {
                    rho_bar = (rho_bar * crate::math::sqrt(ratio)).clamp(1e-6, 1e6);
                    rho = row_penalties(&data, rho_bar);
                    kkt = ldlt_factor(&build_kkt(&data, settings.sigma, &rho)).map_err(|e| {
                        QpError::Numerical(alloc::format!("KKT refactorization failed: {e}"))
                    })?;
                    refactor_count += 1;
                }
            }
        }
    }

    // residuals of the returned iterate (the loop may have exited on the
    // budget between checks)
    let last = residuals(orig, &scal, &x, &y, &z, &mut work_n, &mut work_m);
    let limit_hit = iterations >= settings.max_iter
        && (last.pri > settings.eps_abs + settings.eps_rel * last_scale(&last, true)
            || last.dua > settings.eps_abs + settings.eps_rel * last_scale(&last, false));

    // unscale; polishing is attempted even from a truncated run since the
    // active set is usually identified long before the residuals tighten
    let mut x_u: Vec<f64> = (0..n).map(|j| scal.d[j] * x[j]).collect();
    let mut y_u: Vec<f64> = (0..m_rows).map(|r| scal.e[r] * y[r] / scal.c).collect();
    let mut polished = false;

    if settings.polish {
        if let Some((xp, yp)) = polish(orig, &x_u) {
            let finite = xp.iter().chain(yp.iter()).all(|v| v.is_finite());
            let before = kkt_merit(orig, &x_u, &y_u, &mut work_n, &mut work_m);
            let after = kkt_merit(orig, &xp, &yp, &mut work_n, &mut work_m);
            if finite && after < before {
                x_u = xp;
                y_u = yp;
                polished = true;
            }
        }
    }

    if limit_hit && !polished {
        return Err(QpError::IterationLimit { pri_res: last.pri, dua_res: last.dua });
    }

    Ok(QpSolution {
        x: x_u,
        y: y_u,
        iterations,
        pri_res: last.pri,
        dua_res: last.dua,
        polished,
    })
}

fn last_scale(res: &Residuals, primal: bool) -> f64 {
    // residuals() already normalized; reconstruct the scale it divided by
    if primal {
        if res.pri_rel > 0.0 {
            res.pri / res.pri_rel
        } else {
            1.0
        }
    } else if res.dua_rel > 0.0 {
        res.dua / res.dua_rel
    } else {
        1.0
    }
}

/// Worst KKT violation of a candidate: primal, dual-sign, stationarity and
/// complementarity, all unscaled. Used to decide whether polishing helped.
fn kkt_merit(
    data: &QpData,
    x: &[f64],
    y: &[f64],
    work_n: &mut [f64],
    work_m: &mut [f64],
) -> f64 {
    let mut worst = 0.0f64;
    data.m.matvec(x, work_m);
    for r in 0..data.l.len() {
        let v = work_m[r];
        worst = worst.max(data.l[r] - v).max(v - data.u[r]);
        // sign and complementarity
        if y[r] > 0.0 {
            if data.u[r].is_finite() {
                worst = worst.max(y[r].min(1.0) * (data.u[r] - v).abs());
            } else {
                worst = worst.max(y[r]);
            }
        } else if y[r] < 0.0 {
            if data.l[r].is_finite() {
                worst = worst.max((-y[r]).min(1.0) * (v - data.l[r]).abs());
            } else {
                worst = worst.max(-y[r]);
            }
        }
    }
    data.m.matvec_t(y, work_n);
    for j in 0..x.len() {
        worst = worst.max((data.p_diag[j] * x[j] + data.q[j] + work_n[j]).abs());
    }
    worst
}

/// Re-solve on the detected active set with tiny regularization and
/// iterative refinement. Activity is detected from the primal slacks (the
/// multiplier sign alone is unreliable at moderate splitting accuracy);
/// `None` when the reduced system is singular.
fn polish(data: &QpData, x: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = data.q.len();
    let m_rows = data.l.len();

    let mut mx = vec![0.0; m_rows];
    data.m.matvec(x, &mut mx);

    // +1: active at the upper bound, -1: lower, 0: inactive
    let mut side = vec![0i8; m_rows];
    let mut active: Vec<(usize, f64)> = Vec::new();
    for r in 0..m_rows {
        let eq = data.l[r].is_finite() && data.l[r] == data.u[r];
        if eq {
            side[r] = 1;
            active.push((r, data.l[r]));
            continue;
        }
        let slack_lo = if data.l[r].is_finite() { mx[r] - data.l[r] } else { f64::INFINITY };
        let slack_hi = if data.u[r].is_finite() { data.u[r] - mx[r] } else { f64::INFINITY };
        let tol_lo = 1e-5 * (1.0 + data.l[r].abs());
        let tol_hi = 1e-5 * (1.0 + data.u[r].abs());
        if data.u[r].is_finite() && slack_hi <= tol_hi && slack_hi <= slack_lo {
            side[r] = 1;
            active.push((r, data.u[r]));
        } else if data.l[r].is_finite() && slack_lo <= tol_lo {
            side[r] = -1;
            active.push((r, data.l[r]));
        }
    }

    // Active rows that duplicate or are implied by other active rows make
    // the system rank-deficient and their duals ill-defined, so thin them:
    // each coordinate gets one pinning unit row (equality rows first, since
    // their multipliers are sign-free), and rows supported entirely on
    // pinned coordinates are dropped with zero multipliers.
    let single_coord = |r: usize| -> Option<usize> {
        let row = data.m.row(r);
        let mut nz = None;
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                if nz.is_some() {
                    return None;
                }
                nz = Some(j);
            }
        }
        nz
    };
    let mut pin_owner: Vec<Option<usize>> = vec![None; n];
    for &(r, _) in &active {
        if let Some(j) = single_coord(r) {
            let eq = data.l[r].is_finite() && data.l[r] == data.u[r];
            if eq && pin_owner[j].is_none() {
                pin_owner[j] = Some(r);
            }
        }
    }
    let mut keep = vec![true; active.len()];
    for (a, &(r, _)) in active.iter().enumerate() {
        if let Some(j) = single_coord(r) {
            match pin_owner[j] {
                Some(owner) if owner != r => keep[a] = false,
                None => pin_owner[j] = Some(r),
                _ => {}
            }
        }
    }
    for (a, &(r, _)) in active.iter().enumerate() {
        if keep[a] && single_coord(r).is_none() {
            let row = data.m.row(r);
            if row.iter().enumerate().all(|(j, &v)| v == 0.0 || pin_owner[j].is_some()) {
                keep[a] = false;
            }
        }
    }
    let mut it = keep.iter();
    active.retain(|_| *it.next().expect("keep mask aligned"));

    let na = active.len();
    let dim = n + na;
    // large enough to keep the unpivoted factorization of the
    // zero-curvature block well behaved; refinement recovers the accuracy
    let delta = 1e-6;

    let mut k = Mat::zeros(dim, dim);
    for j in 0..n {
        k[(j, j)] = data.p_diag[j] + delta;
    }
    for (a, &(r, _)) in active.iter().enumerate() {
        let row = data.m.row(r);
        for j in 0..n {
            k[(n + a, j)] = row[j];
            k[(j, n + a)] = row[j];
        }
        k[(n + a, n + a)] = -delta;
    }
    let fact = ldlt_factor(&k).ok()?;

    // the regularizer is anchored at the splitting iterate: zero-curvature
    // directions of a flat optimal face keep their (box-interior) position
    // instead of collapsing toward the origin
    let mut sol = vec![0.0; dim];
    for j in 0..n {
        sol[j] = -data.q[j] + delta * x[j];
    }
    for (a, &(_, b)) in active.iter().enumerate() {
        sol[n + a] = b;
    }
    fact.solve_in_place(&mut sol);

    // refinement against the unregularized system
    let mut resid = vec![0.0; dim];
    for _round in 0..4 {
        for j in 0..n {
            let mut acc = data.p_diag[j] * sol[j] + data.q[j];
            for (a, &(r, _)) in active.iter().enumerate() {
                acc += data.m.row(r)[j] * sol[n + a];
            }
            resid[j] = -acc;
        }
        for (a, &(r, b)) in active.iter().enumerate() {
            let row = data.m.row(r);
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * sol[j];
            }
            resid[n + a] = b - acc;
        }
        let mut corr = resid.clone();
        fact.solve_in_place(&mut corr);
        for i in 0..dim {
            sol[i] += corr[i];
        }
    }

    let xp = sol[..n].to_vec();
    let mut yp = vec![0.0; m_rows];
    let dust = 1e-7 * (1.0 + norm_inf(&sol[n..]));
    for (a, &(r, _)) in active.iter().enumerate() {
        let mut v = sol[n + a];
        // clip sign dust on inequality multipliers; a large wrong-signed
        // value is left in place for the caller's certification to reject
        let eq = data.l[r].is_finite() && data.l[r] == data.u[r];
        if !eq {
            if side[r] > 0 && v < 0.0 && v > -dust {
                v = 0.0;
            } else if side[r] < 0 && v > 0.0 && v < dust {
                v = 0.0;
            }
        }
        yp[r] = v;
    }
    Some((xp, yp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_rows(n: usize) -> Mat {
        Mat::identity(n)
    }

    #[test]
    fn unconstrained_quadratic() {
        // min 1/2 (x1^2 + x2^2) + (1, -2)'x  ->  x = (-1, 2)
        let data = QpData {
            p_diag: vec![1.0, 1.0],
            q: vec![1.0, -2.0],
            m: unit_rows(2),
            l: vec![f64::NEG_INFINITY; 2],
            u: vec![f64::INFINITY; 2],
        };
        let sol = solve_qp(&data, &QpSettings::default()).unwrap();
        assert_abs_diff_eq!(sol.x[0], -1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.x[1], 2.0, epsilon = 1e-7);
    }

    #[test]
    fn box_constrained_quadratic() {
        // min 1/2 x^2 - 10 x on [0, 3]  ->  x = 3, multiplier 7 on the bound
        let data = QpData {
            p_diag: vec![1.0],
            q: vec![-10.0],
            m: unit_rows(1),
            l: vec![0.0],
            u: vec![3.0],
        };
        let sol = solve_qp(&data, &QpSettings::default()).unwrap();
        assert_abs_diff_eq!(sol.x[0], 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.y[0], 7.0, epsilon = 1e-6);
    }

    #[test]
    fn equality_constrained_quadratic() {
        // min 1/2 (x1^2 + x2^2) s.t. x1 + x2 = 2 -> (1, 1), y = -1
        let mut m = Mat::zeros(1, 2);
        m[(0, 0)] = 1.0;
        m[(0, 1)] = 1.0;
        let data = QpData {
            p_diag: vec![1.0, 1.0],
            q: vec![0.0, 0.0],
            m,
            l: vec![2.0],
            u: vec![2.0],
        };
        let sol = solve_qp(&data, &QpSettings::default()).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.y[0], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn pure_linear_program() {
        // min -x on 0 <= x <= 5 (P = 0): degenerate curvature
        let data = QpData {
            p_diag: vec![0.0],
            q: vec![-1.0],
            m: unit_rows(1),
            l: vec![0.0],
            u: vec![5.0],
        };
        let sol = solve_qp(&data, &QpSettings::default()).unwrap();
        assert_abs_diff_eq!(sol.x[0], 5.0, epsilon = 1e-7);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x >= 1 and x <= 0 simultaneously via two rows
        let mut m = Mat::zeros(2, 1);
        m[(0, 0)] = 1.0;
        m[(1, 0)] = 1.0;
        let data = QpData {
            p_diag: vec![1.0],
            q: vec![0.0],
            m,
            l: vec![1.0, f64::NEG_INFINITY],
            u: vec![f64::INFINITY, 0.0],
        };
        assert_eq!(solve_qp(&data, &QpSettings::default()).unwrap_err(), QpError::PrimalInfeasible);
    }

    #[test]
    fn detects_dual_infeasibility() {
        // min -x with x >= 0 only: unbounded below
        let data = QpData {
            p_diag: vec![0.0],
            q: vec![-1.0],
            m: unit_rows(1),
            l: vec![0.0],
            u: vec![f64::INFINITY],
        };
        assert_eq!(solve_qp(&data, &QpSettings::default()).unwrap_err(), QpError::DualInfeasible);
    }

    #[test]
    fn polish_reaches_machine_precision() {
        // active-set solution should be exact to ~1e-12, far past ADMM's tol
        let mut m = Mat::zeros(3, 2);
        m[(0, 0)] = 1.0;
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 1.0;
        m[(2, 1)] = 1.0;
        let data = QpData {
            p_diag: vec![2.0, 0.5],
            q: vec![-1.0, -0.25],
            m,
            l: vec![1.5, 0.0, 0.0],
            u: vec![1.5, 1.0, 1.0],
        };
        let sol = solve_qp(&data, &QpSettings::default()).unwrap();
        assert!(sol.polished);
        // KKT by hand: interior stationary point of the equality-restricted
        // problem: 2 x1 - 1 + y = 0, 0.5 x2 - 0.25 + y = 0, x1 + x2 = 1.5
        // -> x1 = 0.5, x2 = 1.0 (hits its cap), recheck via residuals
        let mut mx = vec![0.0; 3];
        data.m.matvec(&sol.x, &mut mx);
        assert_abs_diff_eq!(mx[0], 1.5, epsilon = 1e-10);
        assert!(sol.x[1] <= 1.0 + 1e-10);
    }
}
