//! Run artifacts: the trace CSV (`t,residual,lambda_p_norm,lambda_q_norm,cost`)
//! and the summary document, a TOML file carrying the run configuration,
//! certification residuals, per-slot dispatch tables (content of the usual
//! dispatch/ramp/energy plots) and the multipliers. The `timestamp` line is
//! the only nondeterministic field; golden comparisons skip it.

use anyhow::{Context, Result};
use mtsed_core::problem::MtsedProblem;
use mtsed_core::simulator::{DispatchSolution, WindowResult};
use mtsed_core::verify::KktReport;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub fn write_trace(path: &Path, result: &WindowResult) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path)
            .with_context(|| format!("cannot create trace file {}", path.display()))?,
    );
    writeln!(out, "t,residual,lambda_p_norm,lambda_q_norm,cost")?;
    for s in &result.trace.samples {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.t, s.residual, s.lambda_p_norm, s.lambda_q_norm, s.cost
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    pub command: String,
    pub case: String,
    pub method: String,
    pub tau: usize,
    pub slot_minutes: f64,
    pub dt: f64,
    pub tol: f64,
    pub max_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub converged: bool,
    pub steps: u64,
    pub algo_time: f64,
    pub final_residual: f64,
    /// Total cost over the window, $/h.
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktSection {
    pub eq_residual: f64,
    pub ineq_violation: f64,
    pub box_violation: f64,
    pub dual_negativity: f64,
    pub complementarity: f64,
    pub stationarity: f64,
    pub simultaneous_charge_discharge: f64,
    pub certified: bool,
    pub tol: f64,
}

impl KktSection {
    pub fn from_report(r: &KktReport, tol: f64) -> Self {
        KktSection {
            eq_residual: r.eq_residual,
            ineq_violation: r.ineq_violation,
            box_violation: r.box_violation,
            dual_negativity: r.dual_negativity,
            complementarity: r.complementarity,
            stationarity: r.stationarity,
            simultaneous_charge_discharge: r.simultaneous_charge_discharge,
            certified: r.certified(tol),
            tol,
        }
    }
}

/// Per-slot dispatch tables in physical units, one row per bus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionSection {
    pub bus_ids: Vec<u32>,
    pub p_g_mw: Vec<Vec<f64>>,
    pub q_g_mvar: Vec<Vec<f64>>,
    pub p_c_mw: Vec<Vec<f64>>,
    pub p_d_mw: Vec<Vec<f64>>,
    pub v_pu: Vec<Vec<f64>>,
    pub theta_rad: Vec<Vec<f64>>,
    pub ramp_mw_per_h: Vec<Vec<f64>>,
    pub energy_mwh: Vec<Vec<f64>>,
}

impl SolutionSection {
    pub fn from_dispatch(d: &DispatchSolution) -> Self {
        SolutionSection {
            bus_ids: d.bus_ids.clone(),
            p_g_mw: d.p_g_mw.clone(),
            q_g_mvar: d.q_g_mvar.clone(),
            p_c_mw: d.p_c_mw.clone(),
            p_d_mw: d.p_d_mw.clone(),
            v_pu: d.v_pu.clone(),
            theta_rad: d.theta_rad.clone(),
            ramp_mw_per_h: d.ramp_mw_per_h.clone(),
            energy_mwh: d.energy_mwh.clone(),
        }
    }
}

/// Multipliers, one row per bus (p.u. cost units).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualsSection {
    pub lambda_p: Vec<Vec<f64>>,
    pub lambda_q: Vec<Vec<f64>>,
    pub mu_up: Vec<Vec<f64>>,
    pub mu_dn: Vec<Vec<f64>>,
    pub gamma_up: Vec<Vec<f64>>,
    pub gamma_dn: Vec<Vec<f64>>,
}

impl DualsSection {
    pub fn from_flat(n: usize, tau: usize, y: &[f64], z: &[f64]) -> Self {
        let nt = n * tau;
        let rows = |flat: &[f64], block: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| flat[block * nt + i * tau..block * nt + (i + 1) * tau].to_vec())
                .collect()
        };
        DualsSection {
            lambda_p: rows(y, 0),
            lambda_q: rows(y, 1),
            mu_up: rows(z, 0),
            mu_dn: rows(z, 1),
            gamma_up: rows(z, 2),
            gamma_dn: rows(z, 3),
        }
    }

    /// Flatten back into the stacked `(y, z)` ordering.
    pub fn to_flat(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.lambda_p.len();
        let tau = self.lambda_p.first().map(|r| r.len()).unwrap_or(0);
        let flat = |rows: &Vec<Vec<f64>>| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n * tau);
            for r in rows {
                if r.len() != tau {
                    anyhow::bail!("ragged dual table in summary");
                }
                out.extend_from_slice(r);
            }
            Ok(out)
        };
        let mut y = flat(&self.lambda_p)?;
        y.extend(flat(&self.lambda_q)?);
        let mut z = flat(&self.mu_up)?;
        z.extend(flat(&self.mu_dn)?);
        z.extend(flat(&self.gamma_up)?);
        z.extend(flat(&self.gamma_dn)?);
        Ok((y, z))
    }
}

/// One receding-horizon round in an `mpc` summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowSection {
    pub window: usize,
    pub converged: bool,
    pub cost: f64,
    pub applied_p_g_mw: Vec<f64>,
    pub applied_q_g_mvar: Vec<f64>,
    pub applied_p_c_mw: Vec<f64>,
    pub applied_p_d_mw: Vec<f64>,
    pub p0_next_mw: Vec<f64>,
    pub c0_next_mwh: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    /// Wall-clock stamp plus run wall time; excluded from golden comparisons.
    pub timestamp: String,
    pub run: RunSection,
    pub kkt: KktSection,
    pub solution: SolutionSection,
    pub duals: DualsSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<Vec<WindowSection>>,
}

impl Summary {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)?;
        std::fs::write(path, text)
            .with_context(|| format!("cannot write summary {}", path.display()))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Summary> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read solution file {}", path.display()))?;
        toml::from_str(&text)
            .with_context(|| format!("invalid summary document {}", path.display()))
    }

    /// Rebuild the stacked per-unit primal vector from the dispatch tables.
    pub fn primal_pu(&self, problem: &MtsedProblem) -> Result<Vec<f64>> {
        let n = problem.n;
        let tau = problem.tau;
        let nt = n * tau;
        let base = problem.base_mva;
        let s = &self.solution;
        for table in [&s.p_g_mw, &s.q_g_mvar, &s.p_c_mw, &s.p_d_mw, &s.v_pu, &s.theta_rad] {
            if table.len() != n || table.iter().any(|r| r.len() != tau) {
                anyhow::bail!(
                    "solution tables are {}x{:?}, problem needs {n}x{tau}",
                    table.len(),
                    table.first().map(|r| r.len())
                );
            }
        }
        let mut x = vec![0.0; 6 * nt];
        for i in 0..n {
            for k in 0..tau {
                x[i * tau + k] = s.p_g_mw[i][k] / base;
                x[nt + i * tau + k] = s.q_g_mvar[i][k] / base;
                x[2 * nt + i * tau + k] = s.p_c_mw[i][k] / base;
                x[3 * nt + i * tau + k] = s.p_d_mw[i][k] / base;
                x[4 * nt + i * tau + k] = s.v_pu[i][k];
                x[5 * nt + i * tau + k] = s.theta_rad[i][k];
            }
        }
        Ok(x)
    }
}

pub fn timestamp_line(wall_seconds: f64) -> String {
    let unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{unix} wall={wall_seconds:.3}s")
}
