//! Right-hand side of the multi-agent saddle-point dynamics.
//!
//! Each bus integrates fourteen horizon-length state vectors: the primal
//! blocks `p_g, q_g, p_c, p_d, v, theta`, the balance multipliers
//! `lambda_p, lambda_q`, their phase-lead companions `rho_p, rho_q` (filtered
//! copies of the balance residuals that vanish at equilibrium and supply the
//! damping that makes merely-convex costs converge), and the ramp/energy
//! multipliers `mu_up, mu_dn, gamma_up, gamma_dn`.
//!
//! A bus evaluates its derivative from its own state plus one message per
//! graph neighbor. The message carries `v, theta, lambda_p, lambda_q, rho_p,
//! rho_q`: the network terms need the neighbors' `lambda + rho`, so the
//! phase-lead values ride along with the multipliers even though they are
//! zero at equilibrium. Voltages are transmitted raw and the receiver clamps
//! them with the sender's (statically known) voltage box.
//!
//! The same vector field can be evaluated in stacked form straight from the
//! [`CompactProblem`] matrices ([`compact_rhs`]); the two paths are
//! independent implementations kept numerically in lockstep, which the test
//! suite exploits as a structural cross-check.
//!
//! Note on angles: the series-only susceptance matrix has zero row sums, so
//! the dynamics determine `theta` only up to a per-slot uniform shift.
//! Converged angles depend on the initialization; all physical quantities
//! are invariant to the shift.

use alloc::vec;
use alloc::vec::Vec;

use crate::problem::{CompactProblem, MtsedProblem};
use crate::projection::nonneg;

/// Number of horizon-length state fields per bus.
pub const STATE_FIELDS: usize = 14;

/// Field order inside the flat state vector (block-major: all buses of one
/// field are contiguous). The first six fields are the primal vector `x`,
/// then `y = (lambda_p, lambda_q)`, then `z = (mu_up, mu_dn, gamma_up,
/// gamma_dn)`, then `rho = (rho_p, rho_q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateField {
    Pg = 0,
    Qg = 1,
    Pc = 2,
    Pd = 3,
    V = 4,
    Theta = 5,
    LambdaP = 6,
    LambdaQ = 7,
    MuUp = 8,
    MuDn = 9,
    GammaUp = 10,
    GammaDn = 11,
    RhoP = 12,
    RhoQ = 13,
}

pub const ALL_FIELDS: [StateField; STATE_FIELDS] = [
    StateField::Pg,
    StateField::Qg,
    StateField::Pc,
    StateField::Pd,
    StateField::V,
    StateField::Theta,
    StateField::LambdaP,
    StateField::LambdaQ,
    StateField::MuUp,
    StateField::MuDn,
    StateField::GammaUp,
    StateField::GammaDn,
    StateField::RhoP,
    StateField::RhoQ,
];

/// The stacked state `zeta = col(x, y, z, rho)` of the whole system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    n: usize,
    tau: usize,
    data: Vec<f64>,
}

impl SystemState {
    pub fn zeros(n: usize, tau: usize) -> Self {
        SystemState { n, tau, data: vec![0.0; STATE_FIELDS * n * tau] }
    }

    pub fn from_vec(n: usize, tau: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), STATE_FIELDS * n * tau, "state length mismatch");
        SystemState { n, tau, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn nt(&self) -> usize {
        self.n * self.tau
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn field_offset(&self, field: StateField, bus: usize) -> usize {
        field as usize * self.nt() + bus * self.tau
    }

    /// One bus's slice of one field.
    pub fn field(&self, field: StateField, bus: usize) -> &[f64] {
        let o = self.field_offset(field, bus);
        &self.data[o..o + self.tau]
    }

    pub fn field_mut(&mut self, field: StateField, bus: usize) -> &mut [f64] {
        let o = self.field_offset(field, bus);
        let tau = self.tau;
        &mut self.data[o..o + tau]
    }

    /// Primal block `x` (length `6 n tau`).
    pub fn x(&self) -> &[f64] {
        &self.data[..6 * self.nt()]
    }

    /// Balance multipliers `y` (length `2 n tau`).
    pub fn y(&self) -> &[f64] {
        &self.data[6 * self.nt()..8 * self.nt()]
    }

    /// Inequality multipliers `z` (length `4 n tau`).
    pub fn z(&self) -> &[f64] {
        &self.data[8 * self.nt()..12 * self.nt()]
    }

    /// Phase-lead block `rho` (length `2 n tau`).
    pub fn rho(&self) -> &[f64] {
        &self.data[12 * self.nt()..14 * self.nt()]
    }
}

/// One bus's fourteen state vectors, each of horizon length.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
    pub p_c: Vec<f64>,
    pub p_d: Vec<f64>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub lambda_p: Vec<f64>,
    pub lambda_q: Vec<f64>,
    pub rho_p: Vec<f64>,
    pub rho_q: Vec<f64>,
    pub mu_up: Vec<f64>,
    pub mu_dn: Vec<f64>,
    pub gamma_up: Vec<f64>,
    pub gamma_dn: Vec<f64>,
}

impl AgentState {
    pub fn zeros(tau: usize) -> Self {
        AgentState {
            p_g: vec![0.0; tau],
            q_g: vec![0.0; tau],
            p_c: vec![0.0; tau],
            p_d: vec![0.0; tau],
            v: vec![0.0; tau],
            theta: vec![0.0; tau],
            lambda_p: vec![0.0; tau],
            lambda_q: vec![0.0; tau],
            rho_p: vec![0.0; tau],
            rho_q: vec![0.0; tau],
            mu_up: vec![0.0; tau],
            mu_dn: vec![0.0; tau],
            gamma_up: vec![0.0; tau],
            gamma_dn: vec![0.0; tau],
        }
    }

    pub fn tau(&self) -> usize {
        self.p_g.len()
    }

    /// Copy bus `i` out of a stacked state.
    pub fn from_system(state: &SystemState, i: usize) -> Self {
        let mut s = AgentState::zeros(state.tau());
        for (field, dst) in ALL_FIELDS.iter().zip(s.fields_mut()) {
            dst.copy_from_slice(state.field(*field, i));
        }
        s
    }

    /// Write this bus's vectors into a stacked state.
    pub fn store_into(&self, state: &mut SystemState, i: usize) {
        assert_eq!(self.tau(), state.tau(), "horizon mismatch");
        for (field, src) in ALL_FIELDS.iter().zip(self.fields()) {
            state.field_mut(*field, i).copy_from_slice(src);
        }
    }

    pub fn fields(&self) -> [&[f64]; STATE_FIELDS] {
        [
            &self.p_g,
            &self.q_g,
            &self.p_c,
            &self.p_d,
            &self.v,
            &self.theta,
            &self.lambda_p,
            &self.lambda_q,
            &self.mu_up,
            &self.mu_dn,
            &self.gamma_up,
            &self.gamma_dn,
            &self.rho_p,
            &self.rho_q,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Vec<f64>; STATE_FIELDS] {
        [
            &mut self.p_g,
            &mut self.q_g,
            &mut self.p_c,
            &mut self.p_d,
            &mut self.v,
            &mut self.theta,
            &mut self.lambda_p,
            &mut self.lambda_q,
            &mut self.mu_up,
            &mut self.mu_dn,
            &mut self.gamma_up,
            &mut self.gamma_dn,
            &mut self.rho_p,
            &mut self.rho_q,
        ]
    }
}

/// What one bus shares with its neighbors in a synchronous round: raw
/// voltage and angle trajectories plus the balance multipliers and their
/// phase-lead companions.
#[derive(Debug, Clone, Copy)]
pub struct NeighborMessage<'a> {
    /// Bus index of the sender.
    pub sender: usize,
    pub v: &'a [f64],
    pub theta: &'a [f64],
    pub lambda_p: &'a [f64],
    pub lambda_q: &'a [f64],
    pub rho_p: &'a [f64],
    pub rho_q: &'a [f64],
}

impl<'a> NeighborMessage<'a> {
    /// Publish bus `j`'s message from a snapshot.
    pub fn publish(state: &'a SystemState, j: usize) -> Self {
        NeighborMessage {
            sender: j,
            v: state.field(StateField::V, j),
            theta: state.field(StateField::Theta, j),
            lambda_p: state.field(StateField::LambdaP, j),
            lambda_q: state.field(StateField::LambdaQ, j),
            rho_p: state.field(StateField::RhoP, j),
            rho_q: state.field(StateField::RhoQ, j),
        }
    }
}

/// Messages bus `i` receives in one synchronous round (one per neighbor, in
/// ascending bus order).
pub fn gather_messages<'a>(
    state: &'a SystemState,
    problem: &MtsedProblem,
    i: usize,
) -> Vec<NeighborMessage<'a>> {
    problem.adjacency[i].iter().map(|&j| NeighborMessage::publish(state, j)).collect()
}

/// Projections and auxiliary quantities of one bus, evaluated from one
/// consistent snapshot. `p_g .. v` are the box projections of the primal
/// states; `lambda_p/lambda_q` are the local balance residuals;
/// `mu_*`/`gamma_*` are the orthant projections feeding the ramp and energy
/// multiplier flows.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedView {
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
    pub p_c: Vec<f64>,
    pub p_d: Vec<f64>,
    pub v: Vec<f64>,
    pub lambda_p: Vec<f64>,
    pub lambda_q: Vec<f64>,
    pub mu_up: Vec<f64>,
    pub mu_dn: Vec<f64>,
    pub gamma_up: Vec<f64>,
    pub gamma_dn: Vec<f64>,
}

impl ProjectedView {
    pub fn zeros(tau: usize) -> Self {
        ProjectedView {
            p_g: vec![0.0; tau],
            q_g: vec![0.0; tau],
            p_c: vec![0.0; tau],
            p_d: vec![0.0; tau],
            v: vec![0.0; tau],
            lambda_p: vec![0.0; tau],
            lambda_q: vec![0.0; tau],
            mu_up: vec![0.0; tau],
            mu_dn: vec![0.0; tau],
            gamma_up: vec![0.0; tau],
            gamma_dn: vec![0.0; tau],
        }
    }
}

/// A required neighbor message was not supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MissingNeighbor {
    pub bus: usize,
    pub neighbor: usize,
}

impl core::fmt::Display for MissingNeighbor {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "bus {} is missing the message from neighbor {}", self.bus, self.neighbor)
    }
}

impl core::error::Error for MissingNeighbor {}

// ---------------------------------------------------------------------------
// kernels
//
// Peer data is abstracted so the message-based public API and the flat
// snapshot hot path run the exact same arithmetic.

#[derive(Clone, Copy)]
struct PeerSlices<'a> {
    v: &'a [f64],
    theta: &'a [f64],
    lambda_p: &'a [f64],
    lambda_q: &'a [f64],
    rho_p: &'a [f64],
    rho_q: &'a [f64],
}

trait PeerSource {
    fn peer(&self, j: usize) -> PeerSlices<'_>;
}

struct SnapshotPeers<'a> {
    state: &'a SystemState,
}

impl<'a> PeerSource for SnapshotPeers<'a> {
    #[inline]
    fn peer(&self, j: usize) -> PeerSlices<'_> {
        PeerSlices {
            v: self.state.field(StateField::V, j),
            theta: self.state.field(StateField::Theta, j),
            lambda_p: self.state.field(StateField::LambdaP, j),
            lambda_q: self.state.field(StateField::LambdaQ, j),
            rho_p: self.state.field(StateField::RhoP, j),
            rho_q: self.state.field(StateField::RhoQ, j),
        }
    }
}

struct MessagePeers<'a, 'b> {
    msgs: &'b [NeighborMessage<'a>],
}

impl<'a, 'b> PeerSource for MessagePeers<'a, 'b> {
    fn peer(&self, j: usize) -> PeerSlices<'_> {
        let m = self
            .msgs
            .iter()
            .find(|m| m.sender == j)
            .expect("presence of all neighbor messages is checked before the kernel runs");
        PeerSlices {
            v: m.v,
            theta: m.theta,
            lambda_p: m.lambda_p,
            lambda_q: m.lambda_q,
            rho_p: m.rho_p,
            rho_q: m.rho_q,
        }
    }
}

struct OwnRefs<'a> {
    p_g: &'a [f64],
    q_g: &'a [f64],
    p_c: &'a [f64],
    p_d: &'a [f64],
    v: &'a [f64],
    theta: &'a [f64],
    lambda_p: &'a [f64],
    lambda_q: &'a [f64],
    rho_p: &'a [f64],
    rho_q: &'a [f64],
    mu_up: &'a [f64],
    mu_dn: &'a [f64],
    gamma_up: &'a [f64],
    gamma_dn: &'a [f64],
}

impl<'a> OwnRefs<'a> {
    fn from_state(state: &'a SystemState, i: usize) -> Self {
        OwnRefs {
            p_g: state.field(StateField::Pg, i),
            q_g: state.field(StateField::Qg, i),
            p_c: state.field(StateField::Pc, i),
            p_d: state.field(StateField::Pd, i),
            v: state.field(StateField::V, i),
            theta: state.field(StateField::Theta, i),
            lambda_p: state.field(StateField::LambdaP, i),
            lambda_q: state.field(StateField::LambdaQ, i),
            rho_p: state.field(StateField::RhoP, i),
            rho_q: state.field(StateField::RhoQ, i),
            mu_up: state.field(StateField::MuUp, i),
            mu_dn: state.field(StateField::MuDn, i),
            gamma_up: state.field(StateField::GammaUp, i),
            gamma_dn: state.field(StateField::GammaDn, i),
        }
    }

    fn from_agent(a: &'a AgentState) -> Self {
        OwnRefs {
            p_g: &a.p_g,
            q_g: &a.q_g,
            p_c: &a.p_c,
            p_d: &a.p_d,
            v: &a.v,
            theta: &a.theta,
            lambda_p: &a.lambda_p,
            lambda_q: &a.lambda_q,
            rho_p: &a.rho_p,
            rho_q: &a.rho_q,
            mu_up: &a.mu_up,
            mu_dn: &a.mu_dn,
            gamma_up: &a.gamma_up,
            gamma_dn: &a.gamma_dn,
        }
    }
}

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

/// Neighbor walk in ascending bus order with the bus itself inserted.
fn closed_walk(adj: &[usize], i: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(adj.len() + 1);
    let mut placed = false;
    for &j in adj {
        if !placed && i < j {
            out.push(i);
            placed = true;
        }
        out.push(j);
    }
    if !placed {
        out.push(i);
    }
    out
}

fn view_kernel<P: PeerSource>(
    p: &MtsedProblem,
    i: usize,
    own: &OwnRefs<'_>,
    peers: &P,
    closed: &[usize],
    out: &mut ProjectedView,
) {
    let bp = &p.buses[i];
    let tau = p.tau;

    for k in 0..tau {
        out.p_g[k] = clamp(own.p_g[k], bp.p_lo, bp.p_hi);
        out.q_g[k] = clamp(own.q_g[k], bp.q_lo, bp.q_hi);
        out.p_c[k] = clamp(own.p_c[k], 0.0, bp.pc_hi);
        out.p_d[k] = clamp(own.p_d[k], 0.0, bp.pd_hi);
        out.v[k] = clamp(own.v[k], bp.v_lo, bp.v_hi);
    }

    // balance residuals, accumulated neighbor-outer; each coordinate still
    // collects its terms in ascending bus order, keeping the sums in
    // numerical lockstep with the stacked matrix path
    for k in 0..tau {
        let mut acc = out.p_g[k];
        acc += -out.p_c[k];
        acc += out.p_d[k];
        out.lambda_p[k] = acc;
        out.lambda_q[k] = out.q_g[k];
    }
    for &j in closed {
        let g_ij = p.dlpf.g[(i, j)];
        let b_ij = p.dlpf.b[(i, j)];
        if j == i {
            for k in 0..tau {
                let vt = out.v[k];
                out.lambda_p[k] += -g_ij * vt;
                out.lambda_q[k] += b_ij * vt;
            }
        } else {
            let pe = peers.peer(j);
            let (lo, hi) = (p.buses[j].v_lo, p.buses[j].v_hi);
            for k in 0..tau {
                let vt = clamp(pe.v[k], lo, hi);
                out.lambda_p[k] += -g_ij * vt;
                out.lambda_q[k] += b_ij * vt;
            }
        }
    }
    for &j in closed {
        let g_ij = p.dlpf.g[(i, j)];
        let bp_ij = p.dlpf.bp[(i, j)];
        let th = if j == i { own.theta } else { peers.peer(j).theta };
        for k in 0..tau {
            out.lambda_p[k] += bp_ij * th[k];
            out.lambda_q[k] += g_ij * th[k];
        }
    }
    for k in 0..tau {
        out.lambda_p[k] -= bp.d_p[k];
        out.lambda_q[k] -= bp.d_q[k];
    }

    // ramp multiplier projections
    let nt = p.nt();
    let f_up = &p.fvec[i * tau..(i + 1) * tau];
    let f_dn = &p.fvec[nt + i * tau..nt + (i + 1) * tau];
    for k in 0..tau {
        let s_up = if k > 0 { -out.p_g[k - 1] + out.p_g[k] } else { out.p_g[0] };
        out.mu_up[k] = nonneg((s_up - f_up[k]) + own.mu_up[k]);
        let s_dn = if k > 0 { out.p_g[k - 1] + -out.p_g[k] } else { -out.p_g[0] };
        out.mu_dn[k] = nonneg((s_dn - f_dn[k]) + own.mu_dn[k]);
    }

    // energy multiplier projections (prefix sums of charge/discharge)
    let f_eu = &p.fvec[2 * nt + i * tau..2 * nt + (i + 1) * tau];
    let f_ed = &p.fvec[3 * nt + i * tau..3 * nt + (i + 1) * tau];
    let e_cu = p.slot_hours * bp.eta_c;
    let e_du = p.slot_hours * bp.eta_d_inv;
    for k in 0..tau {
        let mut s = 0.0;
        for l in 0..=k {
            s += e_cu * out.p_c[l];
        }
        for l in 0..=k {
            s += -e_du * out.p_d[l];
        }
        out.gamma_up[k] = nonneg((s - f_eu[k]) + own.gamma_up[k]);
        let mut s = 0.0;
        for l in 0..=k {
            s += -e_cu * out.p_c[l];
        }
        for l in 0..=k {
            s += e_du * out.p_d[l];
        }
        out.gamma_dn[k] = nonneg((s - f_ed[k]) + own.gamma_dn[k]);
    }
}

struct AgentOut<'a> {
    p_g: &'a mut [f64],
    q_g: &'a mut [f64],
    p_c: &'a mut [f64],
    p_d: &'a mut [f64],
    v: &'a mut [f64],
    theta: &'a mut [f64],
    lambda_p: &'a mut [f64],
    lambda_q: &'a mut [f64],
    mu_up: &'a mut [f64],
    mu_dn: &'a mut [f64],
    gamma_up: &'a mut [f64],
    gamma_dn: &'a mut [f64],
    rho_p: &'a mut [f64],
    rho_q: &'a mut [f64],
}

impl<'a> AgentOut<'a> {
    /// Split the fourteen per-bus slices out of a full derivative vector.
    /// Field offsets are strictly increasing for a fixed bus, so successive
    /// splits suffice.
    fn from_flat(out: &'a mut [f64], nt: usize, tau: usize, i: usize) -> Self {
        let mut rest = out;
        let mut consumed = 0usize;
        let mut take = |field: StateField| -> &'a mut [f64] {
            let start = field as usize * nt + i * tau;
            let (_, tail) = core::mem::take(&mut rest).split_at_mut(start - consumed);
            let (piece, tail) = tail.split_at_mut(tau);
            rest = tail;
            consumed = start + tau;
            piece
        };
        AgentOut {
            p_g: take(StateField::Pg),
            q_g: take(StateField::Qg),
            p_c: take(StateField::Pc),
            p_d: take(StateField::Pd),
            v: take(StateField::V),
            theta: take(StateField::Theta),
            lambda_p: take(StateField::LambdaP),
            lambda_q: take(StateField::LambdaQ),
            mu_up: take(StateField::MuUp),
            mu_dn: take(StateField::MuDn),
            gamma_up: take(StateField::GammaUp),
            gamma_dn: take(StateField::GammaDn),
            rho_p: take(StateField::RhoP),
            rho_q: take(StateField::RhoQ),
        }
    }

    fn from_agent(a: &'a mut AgentState) -> Self {
        AgentOut {
            p_g: &mut a.p_g,
            q_g: &mut a.q_g,
            p_c: &mut a.p_c,
            p_d: &mut a.p_d,
            v: &mut a.v,
            theta: &mut a.theta,
            lambda_p: &mut a.lambda_p,
            lambda_q: &mut a.lambda_q,
            mu_up: &mut a.mu_up,
            mu_dn: &mut a.mu_dn,
            gamma_up: &mut a.gamma_up,
            gamma_dn: &mut a.gamma_dn,
            rho_p: &mut a.rho_p,
            rho_q: &mut a.rho_q,
        }
    }
}

fn rhs_kernel<P: PeerSource>(
    p: &MtsedProblem,
    i: usize,
    own: &OwnRefs<'_>,
    view: &ProjectedView,
    peers: &P,
    closed: &[usize],
    out: &mut AgentOut<'_>,
) {
    let bp = &p.buses[i];
    let tau = p.tau;
    let e_cu = p.slot_hours * bp.eta_c;
    let e_du = p.slot_hours * bp.eta_d_inv;

    for k in 0..tau {
        // active generation: track the gradient, price, and ramp coupling
        let mut acc = view.p_g[k] - own.p_g[k];
        acc -= bp.cost_quad * view.p_g[k];
        acc -= bp.cost_lin;
        acc -= own.lambda_p[k] + own.rho_p[k];
        let mut etz = view.mu_up[k];
        if k + 1 < tau {
            etz += -view.mu_up[k + 1];
        }
        etz += -view.mu_dn[k];
        if k + 1 < tau {
            etz += view.mu_dn[k + 1];
        }
        acc -= etz;
        out.p_g[k] = acc;

        // reactive generation: costless, driven by its price alone
        out.q_g[k] = (view.q_g[k] - own.q_g[k]) - (own.lambda_q[k] + own.rho_q[k]);

        // charging: pays the linear cost, earns the balance price, and is
        // pushed by the energy multipliers over the remaining slots
        let mut acc = view.p_c[k] - own.p_c[k];
        acc -= bp.storage_lin;
        acc -= -(own.lambda_p[k] + own.rho_p[k]);
        let mut etz = 0.0;
        for l in k..tau {
            etz += e_cu * view.gamma_up[l];
        }
        for l in k..tau {
            etz += -e_cu * view.gamma_dn[l];
        }
        acc -= etz;
        out.p_c[k] = acc;

        // discharging mirrors charging with opposite couplings
        let mut acc = view.p_d[k] - own.p_d[k];
        acc -= bp.storage_lin;
        acc -= own.lambda_p[k] + own.rho_p[k];
        let mut etz = 0.0;
        for l in k..tau {
            etz += -e_du * view.gamma_up[l];
        }
        for l in k..tau {
            etz += e_du * view.gamma_dn[l];
        }
        acc -= etz;
        out.p_d[k] = acc;

        // multipliers integrate their residuals / projected slacks
        out.lambda_p[k] = view.lambda_p[k];
        out.lambda_q[k] = view.lambda_q[k];
        out.rho_p[k] = view.lambda_p[k] - own.rho_p[k];
        out.rho_q[k] = view.lambda_q[k] - own.rho_q[k];
        out.mu_up[k] = view.mu_up[k] - own.mu_up[k];
        out.mu_dn[k] = view.mu_dn[k] - own.mu_dn[k];
        out.gamma_up[k] = view.gamma_up[k] - own.gamma_up[k];
        out.gamma_dn[k] = view.gamma_dn[k] - own.gamma_dn[k];
    }

    // voltage and angle collect the neighbors' priced balance residuals,
    // accumulated neighbor-outer and group-by-group (active prices first,
    // then reactive) in the same order as the stacked transpose product
    let wv = &mut out.v[..];
    let wt = &mut out.theta[..];
    wv.fill(0.0);
    wt.fill(0.0);
    for &j in closed {
        let g_ij = p.dlpf.g[(i, j)];
        let bp_ij = p.dlpf.bp[(i, j)];
        if j == i {
            for k in 0..tau {
                let wp = own.lambda_p[k] + own.rho_p[k];
                wv[k] += -g_ij * wp;
                wt[k] += bp_ij * wp;
            }
        } else {
            let pe = peers.peer(j);
            for k in 0..tau {
                let wp = pe.lambda_p[k] + pe.rho_p[k];
                wv[k] += -g_ij * wp;
                wt[k] += bp_ij * wp;
            }
        }
    }
    for &j in closed {
        let g_ij = p.dlpf.g[(i, j)];
        let b_ij = p.dlpf.b[(i, j)];
        if j == i {
            for k in 0..tau {
                let wq = own.lambda_q[k] + own.rho_q[k];
                wv[k] += b_ij * wq;
                wt[k] += g_ij * wq;
            }
        } else {
            let pe = peers.peer(j);
            for k in 0..tau {
                let wq = pe.lambda_q[k] + pe.rho_q[k];
                wv[k] += b_ij * wq;
                wt[k] += g_ij * wq;
            }
        }
    }
    for k in 0..tau {
        out.v[k] = (view.v[k] - own.v[k]) - out.v[k];
        out.theta[k] = 0.0 - out.theta[k];
    }
}

fn check_messages(
    problem: &MtsedProblem,
    i: usize,
    msgs: &[NeighborMessage<'_>],
) -> Result<(), MissingNeighbor> {
    for &j in &problem.adjacency[i] {
        if !msgs.iter().any(|m| m.sender == j) {
            return Err(MissingNeighbor { bus: i, neighbor: j });
        }
    }
    Ok(())
}

/// Evaluate bus `i`'s projections and auxiliary quantities from its own
/// state and its neighbors' messages.
pub fn projected_view(
    problem: &MtsedProblem,
    i: usize,
    state: &AgentState,
    msgs: &[NeighborMessage<'_>],
) -> Result<ProjectedView, MissingNeighbor> {
    assert_eq!(state.tau(), problem.tau, "horizon mismatch");
    check_messages(problem, i, msgs)?;
    let mut out = ProjectedView::zeros(problem.tau);
    let closed = closed_walk(&problem.adjacency[i], i);
    let own = OwnRefs::from_agent(state);
    view_kernel(problem, i, &own, &MessagePeers { msgs }, &closed, &mut out);
    Ok(out)
}

/// Time-derivative of bus `i`'s state. `view` must come from the same
/// snapshot as `state` and `msgs`.
pub fn agent_rhs(
    problem: &MtsedProblem,
    i: usize,
    state: &AgentState,
    view: &ProjectedView,
    msgs: &[NeighborMessage<'_>],
) -> Result<AgentState, MissingNeighbor> {
    assert_eq!(state.tau(), problem.tau, "horizon mismatch");
    check_messages(problem, i, msgs)?;
    let mut out = AgentState::zeros(problem.tau);
    let closed = closed_walk(&problem.adjacency[i], i);
    let own = OwnRefs::from_agent(state);
    rhs_kernel(
        problem,
        i,
        &own,
        view,
        &MessagePeers { msgs },
        &closed,
        &mut AgentOut::from_agent(&mut out),
    );
    Ok(out)
}

/// Pure one-bus derivative straight from a snapshot; allocates its own
/// buffers, so independent calls can run concurrently.
pub fn eval_agent(problem: &MtsedProblem, state: &SystemState, i: usize) -> AgentState {
    let mut view = ProjectedView::zeros(problem.tau);
    let mut out = AgentState::zeros(problem.tau);
    let closed = closed_walk(&problem.adjacency[i], i);
    let own = OwnRefs::from_state(state, i);
    let peers = SnapshotPeers { state };
    view_kernel(problem, i, &own, &peers, &closed, &mut view);
    rhs_kernel(problem, i, &own, &view, &peers, &closed, &mut AgentOut::from_agent(&mut out));
    out
}

/// Reusable evaluator for the full stacked derivative via the per-bus path:
/// one synchronous round (publish, evaluate, commit) per call.
pub struct SystemRhs {
    views: Vec<ProjectedView>,
    closed: Vec<Vec<usize>>,
}

impl SystemRhs {
    pub fn new(problem: &MtsedProblem) -> Self {
        SystemRhs {
            views: (0..problem.n).map(|_| ProjectedView::zeros(problem.tau)).collect(),
            closed: (0..problem.n)
                .map(|i| closed_walk(&problem.adjacency[i], i))
                .collect(),
        }
    }

    /// Evaluate the derivative of every bus from one consistent snapshot.
    /// Agents only read the snapshot and write disjoint output slices, so the
    /// result is independent of evaluation order.
    pub fn eval(&mut self, problem: &MtsedProblem, state: &SystemState, out: &mut [f64]) {
        assert_eq!(out.len(), state.dim(), "derivative buffer length mismatch");
        let peers = SnapshotPeers { state };
        for i in 0..problem.n {
            let own = OwnRefs::from_state(state, i);
            view_kernel(problem, i, &own, &peers, &self.closed[i], &mut self.views[i]);
        }
        for i in 0..problem.n {
            let own = OwnRefs::from_state(state, i);
            let mut agent_out = AgentOut::from_flat(out, state.nt(), state.tau(), i);
            rhs_kernel(problem, i, &own, &self.views[i], &peers, &self.closed[i], &mut agent_out);
        }
    }

    /// The latest per-bus views (valid after `eval`).
    pub fn views(&self) -> &[ProjectedView] {
        &self.views
    }
}

/// Scratch buffers for the stacked-form evaluation.
pub struct CompactScratch {
    xt: Vec<f64>,
    w: Vec<f64>,
    ctw: Vec<f64>,
    ex: Vec<f64>,
    zplus: Vec<f64>,
    etz: Vec<f64>,
    cx: Vec<f64>,
}

impl CompactScratch {
    pub fn new(c: &CompactProblem) -> Self {
        CompactScratch {
            xt: vec![0.0; c.nx()],
            w: vec![0.0; c.n_eq()],
            ctw: vec![0.0; c.nx()],
            ex: vec![0.0; c.n_ineq()],
            zplus: vec![0.0; c.n_ineq()],
            etz: vec![0.0; c.nx()],
            cx: vec![0.0; c.n_eq()],
        }
    }

    /// Projected inequality multipliers `z+` from the latest evaluation.
    pub fn zplus(&self) -> &[f64] {
        &self.zplus
    }
}

/// Stacked vector field evaluated from the compact matrices:
///
/// ```text
/// x' = -x + xt - A xt - B - C'(y + rho) - E' z+
/// y' = C xt - D
/// z' = z+ - z
/// rho' = -rho + C xt - D
/// ```
///
/// with `xt = P_Omega(x)` and `z+ = P_+(E xt - F + z)`.
pub fn compact_rhs_into(
    c: &CompactProblem,
    zeta: &[f64],
    out: &mut [f64],
    s: &mut CompactScratch,
) {
    let nt = c.nt();
    let nx = c.nx();
    assert_eq!(zeta.len(), STATE_FIELDS * nt, "state length mismatch");
    assert_eq!(out.len(), zeta.len(), "derivative length mismatch");

    let (x, rest) = zeta.split_at(nx);
    let (y, rest) = rest.split_at(2 * nt);
    let (z, rho) = rest.split_at(4 * nt);

    c.omega.project_into(x, &mut s.xt);
    for r in 0..2 * nt {
        s.w[r] = y[r] + rho[r];
    }
    c.cmat.matvec_t(&s.w, &mut s.ctw);
    c.emat.matvec(&s.xt, &mut s.ex);
    for r in 0..4 * nt {
        s.zplus[r] = nonneg((s.ex[r] - c.fvec[r]) + z[r]);
    }
    c.emat.matvec_t(&s.zplus, &mut s.etz);
    c.cmat.matvec(&s.xt, &mut s.cx);

    let (out_x, out_rest) = out.split_at_mut(nx);
    let (out_y, out_rest) = out_rest.split_at_mut(2 * nt);
    let (out_z, out_rho) = out_rest.split_at_mut(4 * nt);

    for i in 0..nx {
        let mut acc = s.xt[i] - x[i];
        acc -= c.a_diag[i] * s.xt[i];
        acc -= c.bvec[i];
        acc -= s.ctw[i];
        acc -= s.etz[i];
        out_x[i] = acc;
    }
    for r in 0..2 * nt {
        out_y[r] = s.cx[r] - c.dvec[r];
    }
    for r in 0..4 * nt {
        out_z[r] = s.zplus[r] - z[r];
    }
    for r in 0..2 * nt {
        out_rho[r] = (s.cx[r] - c.dvec[r]) - rho[r];
    }
}

/// Allocating convenience wrapper around [`compact_rhs_into`].
pub fn compact_rhs(c: &CompactProblem, zeta: &SystemState) -> SystemState {
    let mut scratch = CompactScratch::new(c);
    let mut out = SystemState::zeros(zeta.n(), zeta.tau());
    compact_rhs_into(c, zeta.as_slice(), out.as_mut_slice(), &mut scratch);
    out
}
