//! Network case model and decoupled linearized power flow (DLPF) matrices.
//!
//! A case describes buses, branches (pi-model: series impedance plus half of
//! the total line-charging susceptance at each end), generators, storages and
//! per-bus net demand profiles. From the branch/shunt data we build three
//! dense bus matrices:
//!
//! - `G`: conductance (real part of the bus admittance matrix),
//! - `B`: susceptance (imaginary part, including line charging and shunts),
//! - `B'`: susceptance rebuilt from series elements only, a Laplacian-like
//!   matrix whose rows sum to zero.
//!
//! The linearized flow model is `P = G v - B' theta`, `Q = -(B v + G theta)`
//! with everything in per-unit on `base_mva`. Off-nominal transformer taps
//! and phase shifters are not modeled.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Mat;
use crate::problem::{GeneratorParams, HorizonConfig, StorageParams};

/// One bus: identity, shunt admittance (p.u.) and voltage band (p.u.).
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub shunt_g: f64,
    pub shunt_b: f64,
    pub v_min: f64,
    pub v_max: f64,
}

/// One branch: series impedance `r + jx` (p.u.) and total line-charging
/// susceptance `b` (p.u.), split evenly between the two ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    pub b: f64,
}

/// Generator attached to a bus (parameters in MW/MVar/MW-per-hour).
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: u32,
    pub params: GeneratorParams,
}

/// Storage device attached to a bus (parameters in MW/MWh).
#[derive(Debug, Clone, PartialEq)]
pub struct Storage {
    pub bus: u32,
    pub params: StorageParams,
}

/// Net demand profile of one bus over the horizon: MW and MVar per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Demand {
    pub bus: u32,
    pub p_mw: Vec<f64>,
    pub q_mvar: Vec<f64>,
}

/// A full case document. Buses without an entry in `demands` carry zero
/// demand; demand may be negative (renewable surplus).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub horizon: HorizonConfig,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub storages: Vec<Storage>,
    pub demands: Vec<Demand>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkError {
    BadBaseMva(f64),
    BadHorizon(String),
    DuplicateBus(u32),
    UnknownBus { referenced_by: String, id: u32 },
    SelfLoop { branch: usize },
    BadBranch { branch: usize, what: String },
    BadVoltageBand { bus: u32 },
    Disconnected { bus: u32 },
    DuplicateDevice { kind: &'static str, bus: u32 },
    DuplicateDemand { bus: u32 },
    DemandLength { bus: u32, expected: usize, got: usize },
    BadGenerator { bus: u32, what: String },
    BadStorage { bus: u32, what: String },
    NonFinite { field: String },
}

impl core::fmt::Display for NetworkError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            NetworkError::BadBaseMva(v) => write!(f, "base_mva must be positive, got {v}"),
            NetworkError::BadHorizon(w) => write!(f, "bad horizon: {w}"),
            NetworkError::DuplicateBus(id) => write!(f, "duplicate bus id {id}"),
            NetworkError::UnknownBus { referenced_by, id } => {
                write!(f, "{referenced_by} refers to unknown bus {id}")
            }
            NetworkError::SelfLoop { branch } => {
                write!(f, "branch {branch} connects a bus to itself")
            }
            NetworkError::BadBranch { branch, what } => write!(f, "branch {branch}: {what}"),
            NetworkError::BadVoltageBand { bus } => {
                write!(f, "bus {bus}: v_min must be strictly below v_max")
            }
            NetworkError::Disconnected { bus } => {
                write!(f, "branch graph is not connected: bus {bus} is unreachable")
            }
            NetworkError::DuplicateDevice { kind, bus } => {
                write!(f, "more than one {kind} record for bus {bus}")
            }
            NetworkError::DuplicateDemand { bus } => {
                write!(f, "more than one demand record for bus {bus}")
            }
            NetworkError::DemandLength { bus, expected, got } => {
                write!(f, "demand at bus {bus} has {got} entries, expected tau = {expected}")
            }
            NetworkError::BadGenerator { bus, what } => write!(f, "generator at bus {bus}: {what}"),
            NetworkError::BadStorage { bus, what } => write!(f, "storage at bus {bus}: {what}"),
            NetworkError::NonFinite { field } => {
                write!(f, "{field} is not a finite number (NaN/Inf are not permitted)")
            }
        }
    }
}

impl core::error::Error for NetworkError {}

impl NetworkCase {
    pub fn n(&self) -> usize {
        self.buses.len()
    }

    /// Position of a bus id in the case's bus ordering.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Check every structural invariant of the case. Parsers call this after
    /// deserialization; programmatic constructors should call it too.
    pub fn validate(&self) -> Result<(), NetworkError> {
        if !(self.base_mva > 0.0) || !self.base_mva.is_finite() {
            return Err(NetworkError::BadBaseMva(self.base_mva));
        }
        self.horizon.validate().map_err(NetworkError::BadHorizon)?;
        let tau = self.horizon.tau;

        let mut seen = BTreeSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.id) {
                return Err(NetworkError::DuplicateBus(bus.id));
            }
            for (name, v) in [
                ("shunt_g", bus.shunt_g),
                ("shunt_b", bus.shunt_b),
                ("v_min", bus.v_min),
                ("v_max", bus.v_max),
            ] {
                if !v.is_finite() {
                    return Err(NetworkError::NonFinite {
                        field: alloc::format!("bus {} {name}", bus.id),
                    });
                }
            }
            if !(bus.v_min < bus.v_max) {
                return Err(NetworkError::BadVoltageBand { bus: bus.id });
            }
        }

        for (k, br) in self.branches.iter().enumerate() {
            for (name, v) in [("r", br.r), ("x", br.x), ("b", br.b)] {
                if !v.is_finite() {
                    return Err(NetworkError::NonFinite {
                        field: alloc::format!("branch {k} {name}"),
                    });
                }
            }
            for end in [br.from, br.to] {
                if self.bus_index(end).is_none() {
                    return Err(NetworkError::UnknownBus {
                        referenced_by: alloc::format!("branch {k}"),
                        id: end,
                    });
                }
            }
            if br.from == br.to {
                return Err(NetworkError::SelfLoop { branch: k });
            }
            if br.r < 0.0 {
                return Err(NetworkError::BadBranch {
                    branch: k,
                    what: alloc::format!("resistance must be nonnegative, got {}", br.r),
                });
            }
            if !(br.x > 0.0) {
                return Err(NetworkError::BadBranch {
                    branch: k,
                    what: alloc::format!("reactance must be positive, got {}", br.x),
                });
            }
        }

        self.check_connected()?;

        let mut gen_buses = BTreeSet::new();
        for g in &self.generators {
            if self.bus_index(g.bus).is_none() {
                return Err(NetworkError::UnknownBus {
                    referenced_by: String::from("generator"),
                    id: g.bus,
                });
            }
            if !gen_buses.insert(g.bus) {
                return Err(NetworkError::DuplicateDevice { kind: "generator", bus: g.bus });
            }
            g.params
                .validate()
                .map_err(|what| NetworkError::BadGenerator { bus: g.bus, what })?;
        }
        let mut sto_buses = BTreeSet::new();
        for s in &self.storages {
            if self.bus_index(s.bus).is_none() {
                return Err(NetworkError::UnknownBus {
                    referenced_by: String::from("storage"),
                    id: s.bus,
                });
            }
            if !sto_buses.insert(s.bus) {
                return Err(NetworkError::DuplicateDevice { kind: "storage", bus: s.bus });
            }
            s.params
                .validate()
                .map_err(|what| NetworkError::BadStorage { bus: s.bus, what })?;
        }

        let mut dem_buses = BTreeSet::new();
        for d in &self.demands {
            if self.bus_index(d.bus).is_none() {
                return Err(NetworkError::UnknownBus {
                    referenced_by: String::from("demand"),
                    id: d.bus,
                });
            }
            if !dem_buses.insert(d.bus) {
                return Err(NetworkError::DuplicateDemand { bus: d.bus });
            }
            for (arr, name) in [(&d.p_mw, "p"), (&d.q_mvar, "q")] {
                if arr.len() != tau {
                    return Err(NetworkError::DemandLength {
                        bus: d.bus,
                        expected: tau,
                        got: arr.len(),
                    });
                }
                if arr.iter().any(|v| !v.is_finite()) {
                    return Err(NetworkError::NonFinite {
                        field: alloc::format!("demand {name} at bus {}", d.bus),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let n = self.n();
        if n == 0 {
            return Ok(());
        }
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            let i = self.bus_index(br.from).expect("validated above");
            let j = self.bus_index(br.to).expect("validated above");
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut reached = vec![false; n];
        let mut stack = vec![0usize];
        reached[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !reached[j] {
                    reached[j] = true;
                    stack.push(j);
                }
            }
        }
        match reached.iter().position(|&r| !r) {
            Some(i) => Err(NetworkError::Disconnected { bus: self.buses[i].id }),
            None => Ok(()),
        }
    }

    /// Buses sharing a branch with `id` (by id, excluding `id` itself).
    pub fn neighbors(&self, id: u32) -> Result<BTreeSet<u32>, NetworkError> {
        if self.bus_index(id).is_none() {
            return Err(NetworkError::UnknownBus {
                referenced_by: String::from("neighbors query"),
                id,
            });
        }
        let mut out = BTreeSet::new();
        for br in &self.branches {
            if br.from == id {
                out.insert(br.to);
            } else if br.to == id {
                out.insert(br.from);
            }
        }
        out.remove(&id);
        Ok(out)
    }
}

/// Dense DLPF matrices, ordered like the case's bus list.
#[derive(Debug, Clone, PartialEq)]
pub struct DlpfMatrices {
    pub g: Mat,
    pub b: Mat,
    pub bp: Mat,
}

/// Build `G`, `B` from branch pi-models plus bus shunts, and `B'` from the
/// series elements alone. The case must already be valid.
pub fn build_dlpf(case: &NetworkCase) -> DlpfMatrices {
    let n = case.n();
    let mut g = Mat::zeros(n, n);
    let mut b = Mat::zeros(n, n);
    let mut bp = Mat::zeros(n, n);

    for br in &case.branches {
        let i = case.bus_index(br.from).expect("branch endpoints must exist");
        let j = case.bus_index(br.to).expect("branch endpoints must exist");
        let den = br.r * br.r + br.x * br.x;
        let g_series = br.r / den;
        let b_series = -br.x / den;

        g[(i, i)] += g_series;
        g[(j, j)] += g_series;
        g[(i, j)] -= g_series;
        g[(j, i)] -= g_series;

        b[(i, i)] += b_series + br.b / 2.0;
        b[(j, j)] += b_series + br.b / 2.0;
        b[(i, j)] -= b_series;
        b[(j, i)] -= b_series;

        bp[(i, i)] += b_series;
        bp[(j, j)] += b_series;
        bp[(i, j)] -= b_series;
        bp[(j, i)] -= b_series;
    }

    for (i, bus) in case.buses.iter().enumerate() {
        g[(i, i)] += bus.shunt_g;
        b[(i, i)] += bus.shunt_b;
    }

    DlpfMatrices { g, b, bp }
}
