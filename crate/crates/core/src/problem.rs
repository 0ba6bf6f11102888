//! Assembly of the multi-time-slot dispatch problem.
//!
//! The decision vector stacks six per-bus blocks, each of length `n * tau`
//! (bus-major, slot-minor):
//!
//! ```text
//! x = col(p_g, q_g, p_c, p_d, v, theta)
//! ```
//!
//! Generators carry a quadratic cost `a/2 p^2 + b p + c`, storages a linear
//! cost `a_s (p_c + p_d) + b_s` of both charging and discharging. Because the
//! storage cost is strictly increasing in each power, a certified optimum
//! with `a_s > 0` never charges and discharges simultaneously even though no
//! explicit complementarity constraint is imposed.
//!
//! Everything inside [`MtsedProblem`] is per-unit on `base_mva` (costs in
//! dollars against per-unit powers); case files carry MW/MVar/MWh and the
//! conversions happen in [`assemble_problem`]. Buses without a device get
//! singleton `{0}` boxes and zeroed coupling rows, which keeps every block
//! the same shape on every bus.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Mat;
use crate::network::{DlpfMatrices, NetworkCase, NetworkError};
use crate::projection::BoxSet;

/// Number of blocks in the primal vector.
pub const X_BLOCKS: usize = 6;
pub const X_PG: usize = 0;
pub const X_QG: usize = 1;
pub const X_PC: usize = 2;
pub const X_PD: usize = 3;
pub const X_V: usize = 4;
pub const X_THETA: usize = 5;

/// Prediction window: `tau` slots of `slot_hours` each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonConfig {
    pub tau: usize,
    pub slot_hours: f64,
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.tau < 1 {
            return Err(String::from("tau must be at least 1"));
        }
        if !(self.slot_hours > 0.0) || !self.slot_hours.is_finite() {
            return Err(alloc::format!("slot_hours must be positive, got {}", self.slot_hours));
        }
        Ok(())
    }
}

/// Generator data in physical units: $/MW^2h, $/MWh, $, MW, MVar, MW/h.
/// `ramp_down` is a magnitude; the lower rate bound used in constraints is
/// `-ramp_down`. `p0` is the output in the slot just before the window.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub p0: f64,
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("p_min", self.p_min),
            ("p_max", self.p_max),
            ("q_min", self.q_min),
            ("q_max", self.q_max),
            ("ramp_up", self.ramp_up),
            ("ramp_down", self.ramp_down),
            ("p0", self.p0),
        ] {
            if !v.is_finite() {
                return Err(alloc::format!("{name} is not finite"));
            }
        }
        if self.a < 0.0 {
            return Err(String::from("quadratic coefficient a must be nonnegative"));
        }
        if self.p_min > self.p_max {
            return Err(String::from("p_min exceeds p_max"));
        }
        if self.q_min > self.q_max {
            return Err(String::from("q_min exceeds q_max"));
        }
        if self.ramp_up < 0.0 || self.ramp_down < 0.0 {
            return Err(String::from("ramp limits are magnitudes and must be nonnegative"));
        }
        Ok(())
    }
}

/// Storage data in physical units: $/MWh, $/h, MW, MWh. `c0` is the energy
/// level just before the window.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageParams {
    pub a: f64,
    pub b: f64,
    pub pc_max: f64,
    pub pd_max: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub c0: f64,
}

impl StorageParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("pc_max", self.pc_max),
            ("pd_max", self.pd_max),
            ("eta_c", self.eta_c),
            ("eta_d", self.eta_d),
            ("c_min", self.c_min),
            ("c_max", self.c_max),
            ("c0", self.c0),
        ] {
            if !v.is_finite() {
                return Err(alloc::format!("{name} is not finite"));
            }
        }
        if self.a < 0.0 {
            return Err(String::from("linear coefficient a must be nonnegative"));
        }
        if self.pc_max < 0.0 || self.pd_max < 0.0 {
            return Err(String::from("power limits must be nonnegative"));
        }
        if !(self.eta_c > 0.0 && self.eta_c <= 1.0) || !(self.eta_d > 0.0 && self.eta_d <= 1.0) {
            return Err(String::from("efficiencies must lie in (0, 1]"));
        }
        if !(0.0 <= self.c_min && self.c_min <= self.c0 && self.c0 <= self.c_max) {
            return Err(String::from("energy bounds must satisfy 0 <= c_min <= c0 <= c_max"));
        }
        Ok(())
    }
}

/// Generation cost in $/h for output `p` in MW.
pub fn gen_cost(params: &GeneratorParams, p: f64) -> f64 {
    params.a / 2.0 * p * p + params.b * p + params.c
}

/// Negative charging/discharging power passed to [`storage_cost`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativePower {
    pub pc: f64,
    pub pd: f64,
}

impl core::fmt::Display for NegativePower {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "storage powers must be nonnegative, got pc = {}, pd = {}", self.pc, self.pd)
    }
}

impl core::error::Error for NegativePower {}

/// Storage operating cost in $/h for charging/discharging powers in MW.
pub fn storage_cost(params: &StorageParams, pc: f64, pd: f64) -> Result<f64, NegativePower> {
    if pc < 0.0 || pd < 0.0 {
        return Err(NegativePower { pc, pd });
    }
    Ok(params.a * (pc + pd) + params.b)
}

/// Slot-coupling matrices: `hg` shifts a horizon vector one slot earlier
/// (ones on the superdiagonal), `hs` is upper-triangular ones so that
/// `hs^T p` accumulates slot prefixes, and `hg0` selects the first slot.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonMatrices {
    pub hg: Mat,
    pub hs: Mat,
    pub hg0: Vec<f64>,
}

/// Requested a horizon of zero slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmptyHorizon;

impl core::fmt::Display for EmptyHorizon {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "horizon must contain at least one slot")
    }
}

impl core::error::Error for EmptyHorizon {}

pub fn horizon_matrices(tau: usize) -> Result<HorizonMatrices, EmptyHorizon> {
    if tau == 0 {
        return Err(EmptyHorizon);
    }
    let mut hg = Mat::zeros(tau, tau);
    for k in 0..tau.saturating_sub(1) {
        hg[(k, k + 1)] = 1.0;
    }
    let mut hs = Mat::zeros(tau, tau);
    for i in 0..tau {
        for j in i..tau {
            hs[(i, j)] = 1.0;
        }
    }
    let mut hg0 = vec![0.0; tau];
    hg0[0] = 1.0;
    Ok(HorizonMatrices { hg, hs, hg0 })
}

/// Per-bus problem data in per-unit. The per-unit system normalizes money
/// as well as power: one cost unit is `base_mva` dollars per hour, so cost
/// gradients and multipliers stay O(1)-O(10) alongside the p.u. powers.
/// Buses without a generator get `p_lo = p_hi = ramp = p0 = 0`; buses
/// without storage get zero power boxes, `eta_c = eta_d_inv = 0`, and zero
/// energy bounds, so their coupling rows vanish identically.
#[derive(Debug, Clone, PartialEq)]
pub struct BusParams {
    pub has_gen: bool,
    pub has_storage: bool,
    /// Quadratic generation cost coefficient (p.u. cost per p.u. power squared).
    pub cost_quad: f64,
    /// Linear generation cost coefficient (p.u. cost per p.u. power).
    pub cost_lin: f64,
    /// Constant generation cost per slot ($/h; constants never enter gradients).
    pub cost_const: f64,
    /// Linear storage cost coefficient (p.u. cost per p.u. power).
    pub storage_lin: f64,
    /// Constant storage cost per slot ($/h).
    pub storage_const: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub pc_hi: f64,
    pub pd_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    /// Rate bounds in p.u. per hour; `ramp_lo <= ramp_hi`, usually spanning 0.
    pub ramp_lo: f64,
    pub ramp_hi: f64,
    /// Output before the window start (p.u.).
    pub p0: f64,
    /// Stored energy before the window start (p.u. h) and its bounds.
    pub c0: f64,
    pub c_lo: f64,
    pub c_hi: f64,
    pub eta_c: f64,
    pub eta_d_inv: f64,
    /// Net demand per slot (p.u.), length `tau`.
    pub d_p: Vec<f64>,
    pub d_q: Vec<f64>,
}

/// The assembled dispatch problem: per-bus data for the agents plus the flat
/// constant vectors shared with the stacked compact form, so both evaluation
/// paths read bitwise-identical constants.
#[derive(Debug, Clone)]
pub struct MtsedProblem {
    pub n: usize,
    pub tau: usize,
    pub slot_hours: f64,
    pub base_mva: f64,
    pub bus_ids: Vec<u32>,
    pub buses: Vec<BusParams>,
    pub dlpf: DlpfMatrices,
    /// Ascending neighbor indices per bus, self excluded.
    pub adjacency: Vec<Vec<usize>>,
    pub horizon: HorizonMatrices,
    /// Product box over the primal vector; the theta block is unbounded.
    pub omega: BoxSet,
    /// Diagonal of the quadratic cost matrix (only the p_g block is nonzero).
    pub a_diag: Vec<f64>,
    /// Linear cost vector.
    pub bvec: Vec<f64>,
    /// Equality right-hand side, `col(d_p, d_q)`.
    pub dvec: Vec<f64>,
    /// Inequality right-hand side, `col(ramp-up, ramp-down, energy-up, energy-down)`.
    pub fvec: Vec<f64>,
    /// Sum of constant cost terms over buses and slots ($/h).
    pub cost_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssembleError {
    Case(NetworkError),
    Horizon(String),
    DemandTooShort { bus: u32, need: usize, got: usize },
}

impl core::fmt::Display for AssembleError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            AssembleError::Case(e) => write!(f, "invalid case: {e}"),
            AssembleError::Horizon(w) => write!(f, "invalid horizon: {w}"),
            AssembleError::DemandTooShort { bus, need, got } => write!(
                f,
                "demand at bus {bus} provides {got} slots but the horizon needs {need}"
            ),
        }
    }
}

impl core::error::Error for AssembleError {}

impl From<NetworkError> for AssembleError {
    fn from(e: NetworkError) -> Self {
        AssembleError::Case(e)
    }
}

/// Build the per-unit problem from a validated case. `horizon` may differ
/// from the case's own (a shorter override uses the leading slots of each
/// demand profile).
pub fn assemble_problem(
    case: &NetworkCase,
    dlpf: &DlpfMatrices,
    horizon: HorizonConfig,
) -> Result<MtsedProblem, AssembleError> {
    case.validate()?;
    horizon.validate().map_err(AssembleError::Horizon)?;
    let n = case.n();
    let tau = horizon.tau;
    let base = case.base_mva;
    let to_h = horizon.slot_hours;

    let mut buses = Vec::with_capacity(n);
    for bus in case.buses.iter() {
        let gen = case.generators.iter().find(|g| g.bus == bus.id);
        let sto = case.storages.iter().find(|s| s.bus == bus.id);
        let demand = case.demands.iter().find(|d| d.bus == bus.id);

        let mut d_p = vec![0.0; tau];
        let mut d_q = vec![0.0; tau];
        if let Some(d) = demand {
            if d.p_mw.len() < tau || d.q_mvar.len() < tau {
                return Err(AssembleError::DemandTooShort {
                    bus: bus.id,
                    need: tau,
                    got: d.p_mw.len().min(d.q_mvar.len()),
                });
            }
            for k in 0..tau {
                d_p[k] = d.p_mw[k] / base;
                d_q[k] = d.q_mvar[k] / base;
            }
        }

        let mut bp = BusParams {
            has_gen: gen.is_some(),
            has_storage: sto.is_some(),
            cost_quad: 0.0,
            cost_lin: 0.0,
            cost_const: 0.0,
            storage_lin: 0.0,
            storage_const: 0.0,
            p_lo: 0.0,
            p_hi: 0.0,
            q_lo: 0.0,
            q_hi: 0.0,
            pc_hi: 0.0,
            pd_hi: 0.0,
            v_lo: bus.v_min,
            v_hi: bus.v_max,
            ramp_lo: 0.0,
            ramp_hi: 0.0,
            p0: 0.0,
            c0: 0.0,
            c_lo: 0.0,
            c_hi: 0.0,
            eta_c: 0.0,
            eta_d_inv: 0.0,
            d_p,
            d_q,
        };
        if let Some(g) = gen {
            let p = &g.params;
            bp.cost_quad = p.a * base;
            bp.cost_lin = p.b;
            bp.cost_const = p.c;
            bp.p_lo = p.p_min / base;
            bp.p_hi = p.p_max / base;
            bp.q_lo = p.q_min / base;
            bp.q_hi = p.q_max / base;
            bp.ramp_hi = p.ramp_up / base;
            bp.ramp_lo = -p.ramp_down / base;
            bp.p0 = p.p0 / base;
        }
        if let Some(s) = sto {
            let p = &s.params;
            bp.storage_lin = p.a;
            bp.storage_const = p.b;
            bp.pc_hi = p.pc_max / base;
            bp.pd_hi = p.pd_max / base;
            bp.eta_c = p.eta_c;
            bp.eta_d_inv = 1.0 / p.eta_d;
            bp.c_lo = p.c_min / base;
            bp.c_hi = p.c_max / base;
            bp.c0 = p.c0 / base;
        }
        buses.push(bp);
    }

    let adjacency: Vec<Vec<usize>> = case
        .buses
        .iter()
        .map(|b| {
            let mut nbrs: Vec<usize> = case
                .neighbors(b.id)
                .expect("bus exists")
                .into_iter()
                .map(|id| case.bus_index(id).expect("neighbor exists"))
                .collect();
            nbrs.sort_unstable();
            nbrs
        })
        .collect();

    let horizon_mats = horizon_matrices(tau).expect("tau >= 1 validated above");

    let nt = n * tau;
    let mut lo = vec![0.0; X_BLOCKS * nt];
    let mut hi = vec![0.0; X_BLOCKS * nt];
    let mut a_diag = vec![0.0; X_BLOCKS * nt];
    let mut bvec = vec![0.0; X_BLOCKS * nt];
    for (i, bp) in buses.iter().enumerate() {
        for k in 0..tau {
            let idx = |block: usize| block * nt + i * tau + k;
            lo[idx(X_PG)] = bp.p_lo;
            hi[idx(X_PG)] = bp.p_hi;
            lo[idx(X_QG)] = bp.q_lo;
            hi[idx(X_QG)] = bp.q_hi;
            lo[idx(X_PC)] = 0.0;
            hi[idx(X_PC)] = bp.pc_hi;
            lo[idx(X_PD)] = 0.0;
            hi[idx(X_PD)] = bp.pd_hi;
            lo[idx(X_V)] = bp.v_lo;
            hi[idx(X_V)] = bp.v_hi;
            lo[idx(X_THETA)] = f64::NEG_INFINITY;
            hi[idx(X_THETA)] = f64::INFINITY;
            a_diag[idx(X_PG)] = bp.cost_quad;
            bvec[idx(X_PG)] = bp.cost_lin;
            bvec[idx(X_PC)] = bp.storage_lin;
            bvec[idx(X_PD)] = bp.storage_lin;
        }
    }
    let omega = BoxSet::new(lo, hi).expect("box bounds validated with the case");

    let mut dvec = vec![0.0; 2 * nt];
    for (i, bp) in buses.iter().enumerate() {
        for k in 0..tau {
            dvec[i * tau + k] = bp.d_p[k];
            dvec[nt + i * tau + k] = bp.d_q[k];
        }
    }

    let mut fvec = vec![0.0; 4 * nt];
    for (i, bp) in buses.iter().enumerate() {
        for k in 0..tau {
            let hg0 = if k == 0 { 1.0 } else { 0.0 };
            fvec[i * tau + k] = bp.p0 * hg0 + to_h * bp.ramp_hi;
            fvec[nt + i * tau + k] = -bp.p0 * hg0 - to_h * bp.ramp_lo;
            fvec[2 * nt + i * tau + k] = bp.c_hi - bp.c0;
            fvec[3 * nt + i * tau + k] = bp.c0 - bp.c_lo;
        }
    }

    let cost_offset = buses
        .iter()
        .map(|bp| tau as f64 * (bp.cost_const + bp.storage_const))
        .sum();

    Ok(MtsedProblem {
        n,
        tau,
        slot_hours: to_h,
        base_mva: base,
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        buses,
        dlpf: dlpf.clone(),
        adjacency,
        horizon: horizon_mats,
        omega,
        a_diag,
        bvec,
        dvec,
        fvec,
        cost_offset,
    })
}

impl MtsedProblem {
    pub fn nt(&self) -> usize {
        self.n * self.tau
    }

    /// Dimension of the primal vector.
    pub fn nx(&self) -> usize {
        X_BLOCKS * self.nt()
    }

    /// Flat index of block/bus/slot in the primal vector.
    #[inline]
    pub fn x_index(&self, block: usize, bus: usize, slot: usize) -> usize {
        block * self.nt() + bus * self.tau + slot
    }

    /// Total operating cost of a primal point (p.u. coordinates) in $/h,
    /// summed over all buses and slots: the direct per-device evaluation.
    pub fn total_cost(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nx(), "solution dimension mismatch");
        let nt = self.nt();
        let base = self.base_mva;
        let mut total = 0.0;
        for (i, bp) in self.buses.iter().enumerate() {
            for k in 0..self.tau {
                let p_mw = x[X_PG * nt + i * self.tau + k] * base;
                let pc_mw = x[X_PC * nt + i * self.tau + k] * base;
                let pd_mw = x[X_PD * nt + i * self.tau + k] * base;
                // zero-convention coefficients make absent devices contribute 0;
                // cost coefficients convert back from the per-unit money base
                total += bp.cost_quad / base / 2.0 * p_mw * p_mw
                    + bp.cost_lin * p_mw
                    + bp.cost_const;
                total += bp.storage_lin * (pc_mw + pd_mw) + bp.storage_const;
            }
        }
        total
    }

    /// Stack the equality/inequality matrices of the compact form.
    pub fn compact(&self) -> CompactProblem {
        let n = self.n;
        let tau = self.tau;
        let nt = self.nt();
        let nx = self.nx();
        let to_h = self.slot_hours;

        let mut cmat = Mat::zeros(2 * nt, nx);
        for i in 0..n {
            for k in 0..tau {
                let rp = i * tau + k;
                let rq = nt + i * tau + k;
                cmat[(rp, X_PG * nt + i * tau + k)] = 1.0;
                cmat[(rp, X_PC * nt + i * tau + k)] = -1.0;
                cmat[(rp, X_PD * nt + i * tau + k)] = 1.0;
                cmat[(rq, X_QG * nt + i * tau + k)] = 1.0;
                for j in 0..n {
                    cmat[(rp, X_V * nt + j * tau + k)] = -self.dlpf.g[(i, j)];
                    cmat[(rp, X_THETA * nt + j * tau + k)] = self.dlpf.bp[(i, j)];
                    cmat[(rq, X_V * nt + j * tau + k)] = self.dlpf.b[(i, j)];
                    cmat[(rq, X_THETA * nt + j * tau + k)] = self.dlpf.g[(i, j)];
                }
            }
        }

        let mut emat = Mat::zeros(4 * nt, nx);
        for (i, bp) in self.buses.iter().enumerate() {
            for k in 0..tau {
                // slot-difference rows: p[k] - p[k-1]
                let r_up = i * tau + k;
                let r_dn = nt + i * tau + k;
                emat[(r_up, X_PG * nt + i * tau + k)] = 1.0;
                emat[(r_dn, X_PG * nt + i * tau + k)] = -1.0;
                if k > 0 {
                    emat[(r_up, X_PG * nt + i * tau + k - 1)] = -1.0;
                    emat[(r_dn, X_PG * nt + i * tau + k - 1)] = 1.0;
                }
                // prefix-sum energy rows
                let r_eu = 2 * nt + i * tau + k;
                let r_ed = 3 * nt + i * tau + k;
                for l in 0..=k {
                    emat[(r_eu, X_PC * nt + i * tau + l)] = to_h * bp.eta_c;
                    emat[(r_eu, X_PD * nt + i * tau + l)] = -to_h * bp.eta_d_inv;
                    emat[(r_ed, X_PC * nt + i * tau + l)] = -to_h * bp.eta_c;
                    emat[(r_ed, X_PD * nt + i * tau + l)] = to_h * bp.eta_d_inv;
                }
            }
        }

        CompactProblem {
            n,
            tau,
            base_mva: self.base_mva,
            a_diag: self.a_diag.clone(),
            bvec: self.bvec.clone(),
            cmat,
            dvec: self.dvec.clone(),
            emat,
            fvec: self.fvec.clone(),
            omega: self.omega.clone(),
            cost_offset: self.cost_offset,
        }
    }
}

/// Stacked matrices of the dispatch QP:
///
/// ```text
/// minimize   1/2 x'Ax + B'x + offset
/// subject to C x = D,  E x <= F,  x in Omega
/// ```
///
/// `A` is diagonal (stored as its diagonal), `C` stacks the active/reactive
/// balance rows, `E` the ramp and energy rows.
#[derive(Debug, Clone)]
pub struct CompactProblem {
    pub n: usize,
    pub tau: usize,
    pub base_mva: f64,
    pub a_diag: Vec<f64>,
    pub bvec: Vec<f64>,
    pub cmat: Mat,
    pub dvec: Vec<f64>,
    pub emat: Mat,
    pub fvec: Vec<f64>,
    pub omega: BoxSet,
    pub cost_offset: f64,
}

impl CompactProblem {
    pub fn nt(&self) -> usize {
        self.n * self.tau
    }

    pub fn nx(&self) -> usize {
        X_BLOCKS * self.nt()
    }

    pub fn n_eq(&self) -> usize {
        2 * self.nt()
    }

    pub fn n_ineq(&self) -> usize {
        4 * self.nt()
    }

    /// 1/2 x'Ax + B'x in per-unit cost (no constant offset).
    pub fn quad_cost(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nx());
        let mut acc = 0.0;
        for i in 0..x.len() {
            acc += 0.5 * self.a_diag[i] * x[i] * x[i] + self.bvec[i] * x[i];
        }
        acc
    }

    /// Full objective including constant terms, converted to $/h.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.quad_cost(x) * self.base_mva + self.cost_offset
    }

    /// out = A x + B
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.nx());
        assert_eq!(out.len(), self.nx());
        for i in 0..x.len() {
            out[i] = self.a_diag[i] * x[i] + self.bvec[i];
        }
    }

    /// Matrix-market-style text dump of A, C, E and the constant vectors,
    /// for offline debugging.
    pub fn to_matrix_market_string(&self) -> String {
        use core::fmt::Write;
        let mut s = String::new();
        let coord = |s: &mut String, name: &str, m: &Mat| {
            let nnz = m.data().iter().filter(|v| **v != 0.0).count();
            let _ = writeln!(s, "%%MatrixMarket matrix coordinate real general");
            let _ = writeln!(s, "% {name}");
            let _ = writeln!(s, "{} {} {}", m.rows(), m.cols(), nnz);
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    let v = m[(r, c)];
                    if v != 0.0 {
                        let _ = writeln!(s, "{} {} {}", r + 1, c + 1, v);
                    }
                }
            }
        };
        let array = |s: &mut String, name: &str, v: &[f64]| {
            let _ = writeln!(s, "%%MatrixMarket matrix array real general");
            let _ = writeln!(s, "% {name}");
            let _ = writeln!(s, "{} 1", v.len());
            for x in v {
                let _ = writeln!(s, "{x}");
            }
        };
        let a_mat = {
            let mut m = Mat::zeros(self.nx(), self.nx());
            for i in 0..self.nx() {
                m[(i, i)] = self.a_diag[i];
            }
            m
        };
        coord(&mut s, "A (cost curvature)", &a_mat);
        array(&mut s, "B (linear cost)", &self.bvec);
        coord(&mut s, "C (equality)", &self.cmat);
        array(&mut s, "D (equality rhs)", &self.dvec);
        coord(&mut s, "E (inequality)", &self.emat);
        array(&mut s, "F (inequality rhs)", &self.fvec);
        array(&mut s, "omega lower bounds", self.omega.lo());
        array(&mut s, "omega upper bounds", self.omega.hi());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_dlpf, Branch, Bus, Generator, NetworkCase, Storage};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn table_gen() -> GeneratorParams {
        GeneratorParams {
            a: 0.014,
            b: 7.0,
            c: 240.0,
            p_min: 0.0,
            p_max: 332.0,
            q_min: 0.0,
            q_max: 10.0,
            ramp_up: 250.0,
            ramp_down: 80.0,
            p0: 50.0,
        }
    }

    fn small_storage() -> StorageParams {
        StorageParams {
            a: 10.5,
            b: 120.0,
            pc_max: 25.0,
            pd_max: 25.0,
            eta_c: 0.95,
            eta_d: 0.9,
            c_min: 1.25,
            c_max: 25.0,
            c0: 6.25,
        }
    }

    #[test]
    fn gen_cost_examples() {
        let g = table_gen();
        assert_abs_diff_eq!(gen_cost(&g, 332.0), 3335.568, epsilon = 1e-9);
        assert_eq!(gen_cost(&g, 0.0), 240.0);
        let linear = GeneratorParams { a: 0.0, b: 1.0, c: 0.0, ..table_gen() };
        assert_eq!(gen_cost(&linear, 10.0), 10.0);
    }

    #[test]
    fn storage_cost_examples() {
        let s = small_storage();
        assert_abs_diff_eq!(storage_cost(&s, 25.0, 0.0).unwrap(), 382.5, epsilon = 1e-12);
        assert_eq!(storage_cost(&s, 0.0, 0.0).unwrap(), 120.0);
        // symmetric in the two powers
        assert_eq!(storage_cost(&s, 0.0, 25.0).unwrap(), storage_cost(&s, 25.0, 0.0).unwrap());
        assert!(storage_cost(&s, -1.0, 0.0).is_err());
    }

    #[test]
    fn horizon_matrices_tau3() {
        let h = horizon_matrices(3).unwrap();
        let hg_expect = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]];
        let hs_expect = [[1.0, 1.0, 1.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]];
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(h.hg[(r, c)], hg_expect[r][c]);
                assert_eq!(h.hs[(r, c)], hs_expect[r][c]);
            }
        }
        assert_eq!(h.hg0, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn horizon_matrices_tau1_and_zero() {
        let h = horizon_matrices(1).unwrap();
        assert_eq!(h.hg[(0, 0)], 0.0);
        assert_eq!(h.hs[(0, 0)], 1.0);
        assert_eq!(h.hg0, vec![1.0]);
        assert!(horizon_matrices(0).is_err());
    }

    fn onebus_case(tau: usize) -> NetworkCase {
        NetworkCase {
            base_mva: 100.0,
            horizon: HorizonConfig { tau, slot_hours: 1.0 },
            buses: vec![Bus { id: 1, shunt_g: 0.0, shunt_b: 0.0, v_min: 0.9, v_max: 1.1 }],
            branches: vec![],
            generators: vec![Generator { bus: 1, params: table_gen() }],
            storages: vec![],
            demands: vec![crate::network::Demand {
                bus: 1,
                p_mw: vec![50.0; tau],
                q_mvar: vec![2.0; tau],
            }],
        }
    }

    fn two_bus_case(tau: usize) -> NetworkCase {
        let mut case = onebus_case(tau);
        case.buses.push(Bus { id: 2, shunt_g: 0.0, shunt_b: 0.0, v_min: 0.9, v_max: 1.1 });
        case.branches.push(Branch { from: 1, to: 2, r: 0.01, x: 0.1, b: 0.02 });
        case.storages.push(Storage { bus: 2, params: small_storage() });
        case
    }

    #[test]
    fn zero_conventions_for_absent_devices() {
        let case = two_bus_case(2);
        let dlpf = build_dlpf(&case);
        let p = assemble_problem(&case, &dlpf, case.horizon).unwrap();
        // bus 2 has no generator: singleton boxes and zero ramps
        let b2 = &p.buses[1];
        assert!(!b2.has_gen);
        assert_eq!((b2.p_lo, b2.p_hi), (0.0, 0.0));
        assert_eq!((b2.q_lo, b2.q_hi), (0.0, 0.0));
        assert_eq!((b2.ramp_lo, b2.ramp_hi), (0.0, 0.0));
        // bus 1 has no storage: zero boxes and zeroed efficiency couplings
        let b1 = &p.buses[0];
        assert!(!b1.has_storage);
        assert_eq!((b1.pc_hi, b1.pd_hi), (0.0, 0.0));
        assert_eq!((b1.eta_c, b1.eta_d_inv), (0.0, 0.0));
        assert_eq!((b1.c_lo, b1.c_hi, b1.c0), (0.0, 0.0, 0.0));
        // ramp magnitude becomes a signed lower bound
        assert_abs_diff_eq!(b1.ramp_lo, -0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(b1.ramp_hi, 2.5, epsilon = 1e-15);
    }

    #[test]
    fn compact_single_bus_rows() {
        // one bus, tau = 1, with a shunt so g11, b11 are nonzero
        let mut case = onebus_case(1);
        case.buses[0].shunt_g = 0.3;
        case.buses[0].shunt_b = -0.7;
        let dlpf = build_dlpf(&case);
        let p = assemble_problem(&case, &dlpf, case.horizon).unwrap();
        let c = p.compact();
        let g11 = dlpf.g[(0, 0)];
        let b11 = dlpf.b[(0, 0)];
        let bp11 = dlpf.bp[(0, 0)];
        assert_eq!(c.cmat.row(0), &[1.0, 0.0, -1.0, 1.0, -g11, bp11]);
        assert_eq!(c.cmat.row(1), &[0.0, 1.0, 0.0, 0.0, b11, g11]);
    }

    #[test]
    fn ramp_rows_expand_to_slot_differences() {
        let case = onebus_case(2);
        let dlpf = build_dlpf(&case);
        let p = assemble_problem(&case, &dlpf, case.horizon).unwrap();
        let c = p.compact();
        // arbitrary p_g profile, everything else zero
        let mut x = vec![0.0; c.nx()];
        x[0] = 0.9;
        x[1] = 0.4;
        let mut ex = vec![0.0; c.n_ineq()];
        c.emat.matvec(&x, &mut ex);
        let to_h = p.slot_hours;
        let bp = &p.buses[0];
        assert_abs_diff_eq!(
            ex[0] - c.fvec[0],
            x[0] - bp.p0 - bp.ramp_hi * to_h,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            ex[1] - c.fvec[1],
            x[1] - x[0] - bp.ramp_hi * to_h,
            epsilon = 1e-15
        );
        // ramp-down rows mirror with the signed lower bound
        assert_abs_diff_eq!(
            ex[2] - c.fvec[2],
            -(x[0] - bp.p0) + bp.ramp_lo * to_h,
            epsilon = 1e-15
        );
    }

    #[test]
    fn energy_rows_vanish_without_storage() {
        let case = onebus_case(2);
        let dlpf = build_dlpf(&case);
        let p = assemble_problem(&case, &dlpf, case.horizon).unwrap();
        let c = p.compact();
        let nt = c.nt();
        for r in 2 * nt..4 * nt {
            assert!(c.emat.row(r).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn cost_matches_quadratic_form() {
        let case = two_bus_case(3);
        let dlpf = build_dlpf(&case);
        let p = assemble_problem(&case, &dlpf, case.horizon).unwrap();
        let c = p.compact();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x: Vec<f64> = (0..p.nx())
                .map(|i| {
                    let lo = p.omega.lo()[i].max(-2.0);
                    let hi = p.omega.hi()[i].min(2.0);
                    if lo == hi {
                        lo
                    } else {
                        rng.random_range(lo..hi)
                    }
                })
                .collect();
            let direct = p.total_cost(&x);
            let quad = c.objective(&x);
            assert_abs_diff_eq!(direct, quad, epsilon = 1e-10 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn all_zero_solution_cost_is_the_constant_offset() {
        let case = two_bus_case(3);
        let dlpf = build_dlpf(&case);
        let p = assemble_problem(&case, &dlpf, case.horizon).unwrap();
        let x = vec![0.0; p.nx()];
        // tau * (c_g + b_s) summed over buses
        let expected = 3.0 * (240.0 + 120.0);
        assert_abs_diff_eq!(p.total_cost(&x), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(p.cost_offset, expected, epsilon = 1e-12);
    }

    #[test]
    fn balance_rows_match_per_bus_residuals() {
        let case = two_bus_case(2);
        let dlpf = build_dlpf(&case);
        let p = assemble_problem(&case, &dlpf, case.horizon).unwrap();
        let c = p.compact();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..p.nx()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut cx = vec![0.0; c.n_eq()];
        c.cmat.matvec(&x, &mut cx);
        let nt = p.nt();
        for i in 0..p.n {
            for k in 0..p.tau {
                let at = |b: usize, j: usize| x[b * nt + j * p.tau + k];
                let mut flow_p = 0.0;
                let mut flow_q = 0.0;
                for j in 0..p.n {
                    flow_p += dlpf.g[(i, j)] * at(X_V, j) - dlpf.bp[(i, j)] * at(X_THETA, j);
                    flow_q += dlpf.b[(i, j)] * at(X_V, j) + dlpf.g[(i, j)] * at(X_THETA, j);
                }
                let res_p =
                    at(X_PG, i) - p.buses[i].d_p[k] - at(X_PC, i) + at(X_PD, i) - flow_p;
                let res_q = at(X_QG, i) - p.buses[i].d_q[k] + flow_q;
                assert_abs_diff_eq!(cx[i * p.tau + k] - c.dvec[i * p.tau + k], res_p, epsilon = 1e-12);
                assert_abs_diff_eq!(
                    cx[nt + i * p.tau + k] - c.dvec[nt + i * p.tau + k],
                    res_q,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn matrix_market_dump_has_coordinate_sections() {
        let case = onebus_case(1);
        let dlpf = build_dlpf(&case);
        let p = assemble_problem(&case, &dlpf, case.horizon).unwrap();
        let s = p.compact().to_matrix_market_string();
        assert!(s.contains("%%MatrixMarket matrix coordinate real general"));
        assert!(s.contains("% C (equality)"));
        assert!(s.contains("% E (inequality)"));
    }
}
