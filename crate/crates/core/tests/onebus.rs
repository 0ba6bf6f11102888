//! End-to-end checks on the single-bus case with an analytically known
//! optimum: the balance pins the generator to the demand, so every layer
//! (oracle, dynamics, certification, Lyapunov monitor) can be verified
//! against hand-computed numbers.

use mtsed_core::dynamics::compact_rhs;
use mtsed_core::linalg::norm_inf;
use mtsed_core::network::{build_dlpf, Bus, Demand, Generator, NetworkCase};
use mtsed_core::problem::{assemble_problem, GeneratorParams, HorizonConfig, MtsedProblem};
use mtsed_core::simulator::{init_state, IntegratorConfig, Method, Simulator};
use mtsed_core::verify::{check_feasibility, equilibrium_state, lyapunov, oracle};

fn onebus() -> MtsedProblem {
    let case = NetworkCase {
        base_mva: 100.0,
        horizon: HorizonConfig { tau: 1, slot_hours: 1.0 },
        buses: vec![Bus { id: 1, shunt_g: 0.0, shunt_b: 0.0, v_min: 0.9, v_max: 1.1 }],
        branches: vec![],
        generators: vec![Generator {
            bus: 1,
            params: GeneratorParams {
                a: 0.014,
                b: 7.0,
                c: 240.0,
                p_min: 0.0,
                p_max: 332.0,
                q_min: 0.0,
                q_max: 10.0,
                ramp_up: 250.0,
                ramp_down: 250.0,
                p0: 50.0,
            },
        }],
        storages: vec![],
        demands: vec![Demand { bus: 1, p_mw: vec![50.0], q_mvar: vec![2.0] }],
    };
    let dlpf = build_dlpf(&case);
    assemble_problem(&case, &dlpf, case.horizon).unwrap()
}

#[test]
fn oracle_matches_the_analytic_solution() {
    let p = onebus();
    let c = p.compact();
    let sol = oracle(&c, 1e-6).unwrap();
    // p_g = d_p = 50 MW, cost = 0.007*2500 + 7*50 + 240 = 607.5 $/h
    assert!((sol.x[0] * 100.0 - 50.0).abs() < 1e-6);
    assert!((sol.cost - 607.5).abs() < 1e-6);
    // interior stationarity: multiplier = -(a*50 + b) = -7.7 in p.u. cost
    assert!((sol.y[0] + 7.7).abs() < 1e-7);
    assert!(sol.kkt.certified(1e-6));
}

#[test]
fn oracle_equilibrium_is_a_fixed_point_to_1e8() {
    let p = onebus();
    let c = p.compact();
    let sol = oracle(&c, 1e-6).unwrap();
    let star = equilibrium_state(&c, &sol);
    let deriv = compact_rhs(&c, &star);
    let res = norm_inf(deriv.as_slice());
    assert!(res <= 1e-8, "equilibrium residual {res}");
}

#[test]
fn dynamics_converge_to_the_analytic_optimum() {
    let p = onebus();
    let mut sim = Simulator::new(&p);
    let cfg = IntegratorConfig { tol: 1e-7, ..Default::default() };
    let res = sim.run_window(&cfg, init_state(&p, None)).unwrap();
    assert!(res.converged);
    assert!((res.solution.p_g_mw[0][0] - 50.0).abs() < 1e-3);
    assert!((res.solution.cost - 607.5).abs() < 1e-2);
    assert!(res.kkt.certified(1e-4), "kkt: {:?}", res.kkt);
    let feas = check_feasibility(&res.x_tilde, &p);
    assert!(feas.within(1e-6), "worst violation {}", feas.worst());
}

#[test]
fn lyapunov_descends_along_the_trajectory() {
    let p = onebus();
    let c = p.compact();
    let star = equilibrium_state(&c, &oracle(&c, 1e-6).unwrap());

    let mut sim = Simulator::new(&p);
    let cfg = IntegratorConfig {
        method: Method::Rk4,
        dt: 1e-3,
        max_steps: 30_000,
        ..Default::default()
    };
    let mut last_v = f64::INFINITY;
    let mut worst_rise = 0.0f64;
    let mut steps_seen = 0u64;
    sim.run_window_observed(&cfg, init_state(&p, None), |step, _t, state| {
        let val = lyapunov(state, &star, &c);
        if step > 0 {
            worst_rise = worst_rise.max(val.v - last_v);
        }
        // the sandwich bound holds everywhere on the trajectory
        assert!(val.sandwich_lo <= val.w + 1e-9 && val.w <= val.sandwich_hi + 1e-9);
        last_v = val.v;
        steps_seen = step;
    })
    .unwrap();
    assert!(steps_seen >= 30_000 || last_v.is_finite());
    assert!(worst_rise <= 1e-8, "Lyapunov function rose by {worst_rise} in one step");
}

#[test]
fn euler_also_converges_on_the_small_case() {
    let p = onebus();
    let mut sim = Simulator::new(&p);
    let cfg = IntegratorConfig {
        method: Method::Euler,
        dt: 1e-3,
        tol: 1e-6,
        ..Default::default()
    };
    let res = sim.run_window(&cfg, init_state(&p, None)).unwrap();
    assert!(res.converged);
    assert!((res.solution.p_g_mw[0][0] - 50.0).abs() < 1e-2);
}

#[test]
fn infeasible_demand_returns_unconverged_with_flagged_kkt() {
    let mut p = onebus();
    // demand beyond the generator's capacity and no storage anywhere
    p.update_demand_mw(&[vec![1000.0]], &[vec![2.0]]);
    let mut sim = Simulator::new(&p);
    let cfg = IntegratorConfig {
        max_steps: 20_000,
        tol: 1e-6,
        ..Default::default()
    };
    let res = sim.run_window(&cfg, init_state(&p, None)).unwrap();
    assert!(!res.converged);
    // the balance residual cannot close: primal infeasibility shows up in
    // the equality block of the report
    assert!(res.kkt.eq_residual > 1e-3, "eq residual {}", res.kkt.eq_residual);
}
