//! The case-file format: a TOML document with sections `base_mva`,
//! `horizon {tau, slot_minutes}`, `buses[]`, `branches[]`, `generators[]`,
//! `storages[]` and `demand[]`. Powers are MW/MVar, energies MWh, impedances
//! and shunts per-unit on `base_mva`. NaN and infinities are rejected.

use anyhow::{Context, Result};
use mtsed_core::network::{Branch, Bus, Demand, Generator, NetworkCase, Storage};
use mtsed_core::problem::{GeneratorParams, HorizonConfig, StorageParams};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct CaseDoc {
    base_mva: f64,
    horizon: HorizonDoc,
    #[serde(default)]
    buses: Vec<BusDoc>,
    #[serde(default)]
    branches: Vec<BranchDoc>,
    #[serde(default)]
    generators: Vec<GeneratorDoc>,
    #[serde(default)]
    storages: Vec<StorageDoc>,
    #[serde(default, rename = "demand")]
    demand: Vec<DemandDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HorizonDoc {
    tau: usize,
    slot_minutes: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BusDoc {
    id: u32,
    #[serde(default)]
    shunt_g: f64,
    #[serde(default)]
    shunt_b: f64,
    v_min: f64,
    v_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchDoc {
    from: u32,
    to: u32,
    #[serde(default)]
    r: f64,
    x: f64,
    #[serde(default)]
    b: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GeneratorDoc {
    bus: u32,
    a: f64,
    b: f64,
    c: f64,
    p_min: f64,
    p_max: f64,
    q_min: f64,
    q_max: f64,
    ramp_up: f64,
    ramp_down: f64,
    p0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct StorageDoc {
    bus: u32,
    a: f64,
    b: f64,
    pc_max: f64,
    pd_max: f64,
    eta_c: f64,
    eta_d: f64,
    c_min: f64,
    c_max: f64,
    c0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DemandDoc {
    bus: u32,
    p: Vec<f64>,
    q: Vec<f64>,
}

/// Parse a case document. Syntax errors carry the line/column from the TOML
/// parser; structural problems name the offending entity.
pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let doc: CaseDoc = toml::from_str(text).context("case file is not valid TOML")?;
    let case = NetworkCase {
        base_mva: doc.base_mva,
        horizon: HorizonConfig {
            tau: doc.horizon.tau,
            slot_hours: doc.horizon.slot_minutes / 60.0,
        },
        buses: doc
            .buses
            .into_iter()
            .map(|b| Bus {
                id: b.id,
                shunt_g: b.shunt_g,
                shunt_b: b.shunt_b,
                v_min: b.v_min,
                v_max: b.v_max,
            })
            .collect(),
        branches: doc
            .branches
            .into_iter()
            .map(|b| Branch { from: b.from, to: b.to, r: b.r, x: b.x, b: b.b })
            .collect(),
        generators: doc
            .generators
            .into_iter()
            .map(|g| Generator {
                bus: g.bus,
                params: GeneratorParams {
                    a: g.a,
                    b: g.b,
                    c: g.c,
                    p_min: g.p_min,
                    p_max: g.p_max,
                    q_min: g.q_min,
                    q_max: g.q_max,
                    ramp_up: g.ramp_up,
                    ramp_down: g.ramp_down,
                    p0: g.p0,
                },
            })
            .collect(),
        storages: doc
            .storages
            .into_iter()
            .map(|s| Storage {
                bus: s.bus,
                params: StorageParams {
                    a: s.a,
                    b: s.b,
                    pc_max: s.pc_max,
                    pd_max: s.pd_max,
                    eta_c: s.eta_c,
                    eta_d: s.eta_d,
                    c_min: s.c_min,
                    c_max: s.c_max,
                    c0: s.c0,
                },
            })
            .collect(),
        demands: doc
            .demand
            .into_iter()
            .map(|d| Demand { bus: d.bus, p_mw: d.p, q_mvar: d.q })
            .collect(),
    };
    case.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(case)
}

/// Serialize a case back into the document format (round-trips through
/// [`parse_case`] field-for-field).
pub fn serialize_case(case: &NetworkCase) -> Result<String> {
    let doc = CaseDoc {
        base_mva: case.base_mva,
        horizon: HorizonDoc {
            tau: case.horizon.tau,
            slot_minutes: case.horizon.slot_hours * 60.0,
        },
        buses: case
            .buses
            .iter()
            .map(|b| BusDoc {
                id: b.id,
                shunt_g: b.shunt_g,
                shunt_b: b.shunt_b,
                v_min: b.v_min,
                v_max: b.v_max,
            })
            .collect(),
        branches: case
            .branches
            .iter()
            .map(|b| BranchDoc { from: b.from, to: b.to, r: b.r, x: b.x, b: b.b })
            .collect(),
        generators: case
            .generators
            .iter()
            .map(|g| GeneratorDoc {
                bus: g.bus,
                a: g.params.a,
                b: g.params.b,
                c: g.params.c,
                p_min: g.params.p_min,
                p_max: g.params.p_max,
                q_min: g.params.q_min,
                q_max: g.params.q_max,
                ramp_up: g.params.ramp_up,
                ramp_down: g.params.ramp_down,
                p0: g.params.p0,
            })
            .collect(),
        storages: case
            .storages
            .iter()
            .map(|s| StorageDoc {
                bus: s.bus,
                a: s.params.a,
                b: s.params.b,
                pc_max: s.params.pc_max,
                pd_max: s.params.pd_max,
                eta_c: s.params.eta_c,
                eta_d: s.params.eta_d,
                c_min: s.params.c_min,
                c_max: s.params.c_max,
                c0: s.params.c0,
            })
            .collect(),
        demand: case
            .demands
            .iter()
            .map(|d| DemandDoc { bus: d.bus, p: d.p_mw.clone(), q: d.q_mvar.clone() })
            .collect(),
    };
    Ok(toml::to_string(&doc)?)
}

/// Read and parse a case file.
pub fn load_case(path: &Path) -> Result<NetworkCase> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read case file {}", path.display()))?;
    parse_case(&text).with_context(|| format!("invalid case file {}", path.display()))
}

/// Apply CLI horizon overrides: a shorter `tau` reuses the leading demand
/// slots; a longer one is rejected at assembly time.
pub fn horizon_override(
    case: &NetworkCase,
    tau: Option<usize>,
    slot_minutes: Option<f64>,
) -> HorizonConfig {
    HorizonConfig {
        tau: tau.unwrap_or(case.horizon.tau),
        slot_hours: slot_minutes.map(|m| m / 60.0).unwrap_or(case.horizon.slot_hours),
    }
}
