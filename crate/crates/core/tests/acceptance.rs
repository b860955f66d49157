//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs without the libtest harness so the lines always print.

use std::time::{Duration, Instant};

use dlr_core::affine_policy::{default_y_grid, policy_action, procure_affine_with, select_y, AffineSetup};
use dlr_core::evaluation::{
    draw_samples, operate_policy, run_scenario, summary_table, write_outcomes_csv, write_summary_csv, Approach,
    ScenarioConfig,
};
use dlr_core::network::{compute_ptdf, load_grid, GridModel};
use dlr_core::robust_dispatch::{operate_online, procure_vertex_robust, Operator};
use dlr_core::thermal::{
    ampacity, heat_terms, sensitivity_sweep, ConductorParams, LineRatingSpec, WeatherAxis, WeatherSample,
};
use dlr_core::uncertainty::{
    build_ellipsoid, build_polytope, chi2_cdf, chi2_quantile, truncated_deficit_expectation, RatingForecast,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn run(id: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let mut o = f();
    let dt = t.elapsed();
    if let Some(l) = limit {
        if dt > l {
            o.pass = false;
            o.detail = format!("{}; over time limit {:?}", o.detail, l);
        }
    }
    println!("{} criterion {id}: {} ({:.2?})", if o.pass { "PASS" } else { "FAIL" }, o.detail, dt);
    o.pass
}

fn c1_thermal() -> Outcome {
    let c = ConductorParams::drake();
    let w = WeatherSample { wind_speed: 0.61, wind_angle: 90.0, ambient_temperature: 40.0, solar_irradiance: 1000.0 };
    let i = ampacity(&w, &c).unwrap();
    // Hand evaluation at T_film = 70 °C with perpendicular wind.
    let d: f64 = 0.02814;
    let mu_f = 1.458e-6 * 343.0f64.powf(1.5) / (70.0 + 383.4);
    let rho_f = 1.293 / (1.0 + 0.00367 * 70.0);
    let k_f = 2.424e-2 + 7.477e-5 * 70.0 - 4.407e-9 * 4900.0;
    let re = d * rho_f * 0.61 / mu_f;
    let qc = ((1.01 + 1.35 * re.powf(0.52)) * k_f * 60.0).max(0.754 * re.powf(0.6) * k_f * 60.0);
    let qr = 17.8 * d * 0.8 * (3.73f64.powi(4) - 3.13f64.powi(4));
    let qs = 0.8 * 1000.0 * d;
    let r = 7.283e-5 + (8.688e-5 - 7.283e-5) * 75.0 / 50.0;
    let hand = ((qc + qr - qs) / r).sqrt();
    let q = heat_terms(&w, &c, c.max_temperature).unwrap();
    let residual = (q.convection + q.radiation - q.solar - i * i * c.resistance(c.max_temperature)).abs()
        / (q.convection + q.radiation);
    let rel = (i - hand).abs() / hand;
    check(
        rel < 0.01 && residual <= 1e-9,
        format!("ampacity {i:.2} A, hand {hand:.2} A, balance residual {residual:.1e}"),
    )
}

fn c2_sweeps() -> Outcome {
    let spec = LineRatingSpec::calibrated(ConductorParams::drake(), 230.0, WeatherSample::nominal_default()).unwrap();
    let winds: Vec<f64> = (0..=95).map(|i| 0.5 + 0.1 * i as f64).collect();
    let s = sensitivity_sweep(&spec, WeatherAxis::WindSpeed, &winds).unwrap();
    let inc = s.windows(2).all(|w| w[1].1 > w[0].1);
    let top = s.last().unwrap().1;
    let temps: Vec<f64> = (0..=50).map(|i| -10.0 + i as f64).collect();
    let t = sensitivity_sweep(&spec, WeatherAxis::AmbientTemperature, &temps).unwrap();
    let dec_t = t.windows(2).all(|w| w[1].1 < w[0].1);
    let sun: Vec<f64> = (0..=50).map(|i| 20.0 * i as f64).collect();
    let u = sensitivity_sweep(&spec, WeatherAxis::SolarIrradiance, &sun).unwrap();
    let dec_s = u.windows(2).all(|w| w[1].1 < w[0].1);
    check(
        inc && top > 2.0 && dec_t && dec_s,
        format!("wind increasing {inc}, rating at 10 m/s {top:.3} p.u., ambient decreasing {dec_t}, irradiance decreasing {dec_s}"),
    )
}

fn c3_sets() -> Outcome {
    let q = chi2_quantile(2, 0.95).unwrap();
    let q_ok = (q - 5.9915).abs() <= 1e-3 && (chi2_cdf(2, q) - (1.0 - (-q / 2.0f64).exp())).abs() < 1e-12;
    let f = RatingForecast::new(vec![1.5, 1.5], vec![vec![0.04, 0.012], vec![0.012, 0.02]], 3.0).unwrap();
    let e = build_ellipsoid(&f, 0.95).unwrap();
    let w = build_polytope(&e, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let inside_p = (0..10_000).filter(|_| w.contains_z(&e.sample_boundary_z(&mut rng))).count();
    let n = 100_000;
    let inside_e = (0..n).filter(|_| e.contains(&e.sample_normal(&mut rng))).count();
    let rate = inside_e as f64 / n as f64;
    check(
        q_ok && inside_p == 10_000 && (rate - 0.95).abs() <= 0.01,
        format!("chi2(2, 0.95) = {q:.5}, boundary points in polytope {inside_p}/10000, coverage {rate:.4}"),
    )
}

fn c4_deficit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mu = rng.random_range(1.0..2.0);
        let sd = rng.random_range(0.02..0.4);
        let y = mu + sd * rng.random_range(-2.5..2.5);
        let f = RatingForecast::independent(vec![mu], &[sd], 3.0).unwrap();
        let e = truncated_deficit_expectation(&f, &[y]).unwrap()[0];
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let v = (y - mu - sd * z).max(0.0);
            s += v;
            s2 += v * v;
        }
        let m = s / n as f64;
        let se = ((s2 / n as f64 - m * m).max(0.0) / n as f64).sqrt();
        worst = worst.max((e - m).abs() / se.max(1e-300));
    }
    check(worst <= 3.0, format!("largest deviation {worst:.2} standard errors over 20 triples"))
}

fn rts_forecast(g: &GridModel, sigma: f64) -> RatingForecast {
    RatingForecast::independent(vec![1.5; 2], &[sigma, sigma], 24.0).unwrap().with_lines(g.dlr_line_ids())
}

fn c5_approach_i() -> Outcome {
    let g = GridModel::rts96();
    let h = compute_ptdf(&g).unwrap();
    let f = rts_forecast(&g, 0.2);
    let e = build_ellipsoid(&f, 0.95).unwrap();
    let w = build_polytope(&e, 8).unwrap();
    let p = procure_vertex_robust(&g, &h, &w, 0.0).unwrap();
    let op = Operator::new(&g, &h, &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let inside: Vec<Vec<f64>> = (0..10_000).map(|_| w.sample_uniform(&mut rng)).collect();
    let ok_in = inside.iter().filter(|d| op.operate(d).is_ok()).count();
    let free = draw_samples(&e, 10_000, 56);
    let ok_free = free.iter().filter(|d| op.operate(d).is_ok()).count();
    check(
        ok_in == 10_000 && ok_free as f64 >= 0.95 * 10_000.0,
        format!("covered {ok_in}/10000 inside the polytope, {ok_free}/10000 unconstrained"),
    )
}

fn c6_approach_ii() -> Outcome {
    let g = GridModel::rts96();
    let h = compute_ptdf(&g).unwrap();
    let f = rts_forecast(&g, 0.2);
    let e = build_ellipsoid(&f, 0.95).unwrap();
    let w = build_polytope(&e, 8).unwrap();
    let setup = AffineSetup { grid: &g, ptdf: &h, forecast: &f, polytope: &w, flow_caps_mw: None };
    let grid = default_y_grid(&f, &g.dlr_base_mw(), 1.0, 7);
    let (y, pp) = select_y(&setup, &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    // The polytope contains the ellipsoid, so this also covers every point of it.
    let mut flows_ok = 0;
    let mut bounds_ok = 0;
    for _ in 0..10_000 {
        let d = w.sample_uniform(&mut rng);
        if operate_policy(&g, &h, &pp, &d).is_ok() {
            flows_ok += 1;
        }
        let a = policy_action(&pp.policy, &d);
        if a.iter().enumerate().all(|(j, &x)| x <= pp.policy.delta_up[j] + 1e-6 && x >= pp.policy.delta_dn[j] - 1e-6) {
            bounds_ok += 1;
        }
    }
    check(
        flows_ok == 10_000 && bounds_ok == 10_000,
        format!("y = {y:?} MW; flows within limits {flows_ok}/10000, activation within bounds {bounds_ok}/10000"),
    )
}

/// Reporting precision, MW or $/h.
const TIE: f64 = 1e-6;

fn c7_tendencies() -> Outcome {
    let g = GridModel::rts96();
    let h = compute_ptdf(&g).unwrap();
    let t = summary_table(&g, &h, 1.5, 0.1, 0.2, 0.95, 1000, 7).unwrap();
    let col = |name: &str| &t.columns.iter().find(|c| c.0 == name).unwrap().1;
    let (ii3, ii24) = (col("II-3h"), col("II-24h"));
    let (i3, i3a) = (col("I-3h (alpha = 0)"), col("I-3h (alpha = 0.1)"));
    let (i24, i24a) = (col("I-24h (alpha = 0)"), col("I-24h (alpha = 0.1)"));
    for (name, r) in &t.columns {
        println!(
            "    {name:<20} savings {:7.3} %  procured {:14.8} MW  total {:10.2} $/h  mean op {:8.2} $/h",
            r.savings_pct, r.procured_mw, r.total_cost, r.mean_operational_cost
        );
    }
    // Quantities are compared at the 1e-6 precision the reports carry;
    // saturated reserve caps otherwise differ by solver round-off.
    let le = |x: f64, y: f64| x <= y + TIE;
    let a = t.columns.iter().all(|c| c.1.savings_pct > 0.0);
    let b = le(ii24.savings_pct, ii3.savings_pct) && le(i24.savings_pct, i3.savings_pct);
    let c = le(i3.total_cost, ii3.total_cost) && le(i24.total_cost, ii24.total_cost);
    let d = le(i3.procured_mw, ii3.procured_mw) && le(i24.procured_mw, ii24.procured_mw);
    let e = le(ii3.procured_mw, ii24.procured_mw)
        && le(i3.procured_mw, i24.procured_mw)
        && le(i3a.procured_mw, i24a.procured_mw);
    let f = le(i3.procured_mw, i3a.procured_mw)
        && le(i3a.mean_operational_cost, i3.mean_operational_cost)
        && le(i24.procured_mw, i24a.procured_mw)
        && le(i24a.mean_operational_cost, i24.mean_operational_cost);
    let mark = |v: bool| if v { "ok" } else { "FAILED" };
    check(
        a && b && c && d && e && f,
        format!("(a) {} (b) {} (c) {} (d) {} (e) {} (f) {}", mark(a), mark(b), mark(c), mark(d), mark(e), mark(f)),
    )
}

fn micro_grid() -> GridModel {
    load_grid(
        r#"{"slack_bus": 2, "buses": [1, 2],
        "lines": [{"id": "1-2", "from_bus": 1, "to_bus": 2, "reactance": 0.1, "limit_mw": 250, "is_dlr": true}],
        "generators": [
            {"id": "cheap", "bus": 1, "p_min": 0, "p_max": 400, "cost_quadratic": 0, "cost_linear": 10,
             "reserve_down_max": -100, "reserve_up_max": 100, "proc_price_up": 1, "proc_price_down": 1,
             "op_price_up": 20, "op_price_down": 5},
            {"id": "dear", "bus": 2, "p_min": 0, "p_max": 400, "cost_quadratic": 0, "cost_linear": 50,
             "reserve_down_max": -100, "reserve_up_max": 100, "proc_price_up": 1, "proc_price_down": 1,
             "op_price_up": 60, "op_price_down": 5}
        ],
        "loads": [{"bus": 2, "mw": 300}]}"#,
    )
    .unwrap()
}

fn c8_micro_grid() -> Outcome {
    let g = micro_grid();
    let h = compute_ptdf(&g).unwrap();
    // Ratings 1.2 ± 0.1 p.u.: 275 to 325 MW on the 250 MW base.
    let f = RatingForecast::independent(vec![1.2], &[0.05], 3.0).unwrap();
    let e = build_ellipsoid(&f, chi2_cdf(1, 4.0)).unwrap();
    let w = build_polytope(&e, 8).unwrap();
    let low = [275.0 / 250.0];

    let pi = procure_vertex_robust(&g, &h, &w, 0.0).unwrap();
    let act = operate_online(&g, &h, &pi, &low).unwrap();
    let i_ok = (act.delta_minus[0] + 25.0).abs() < 1e-3 && (act.delta_plus[1] - 25.0).abs() < 1e-3;

    let setup = AffineSetup { grid: &g, ptdf: &h, forecast: &f, polytope: &w, flow_caps_mw: None };
    let pii = procure_affine_with(&setup, &[300.0]).unwrap();
    let a = policy_action(&pii.policy, &low);
    let ii_ok = (a[0] + 25.0).abs() < 1e-3 && (a[1] - 25.0).abs() < 1e-3;

    // Brute force at 1 MW: the online shift d down at `cheap`, up at `dear`.
    let shift = (0..=100)
        .map(|d| d as f64)
        .filter(|d| 300.0 - d <= 275.0)
        .map(|d| (5.0 * d + 60.0 * d, d))
        .fold((f64::INFINITY, 0.0), |m, v| if v.0 < m.0 { v } else { m });
    let shift_ok = (shift.1 - 25.0).abs() <= 1.0 && (shift.0 - act.cost).abs() <= 1.0;

    // Approach I schedule: p1 at `cheap`, with the shift to 275 MW procured both ways.
    let sched = (0..=300)
        .map(|p| p as f64)
        .map(|p1| (10.0 * p1 + 50.0 * (300.0 - p1) + 2.0 * (p1 - 275.0).max(0.0), p1))
        .fold((f64::INFINITY, 0.0), |m, v| if v.0 < m.0 { v } else { m });
    let sched_ok = (sched.1 - pi.p_gen[0]).abs() <= 1.0 && (sched.0 - pi.objective()).abs() <= 1.0;

    // Approach II: p1 at 1 MW and the slope at 0.01 MW/MW, with the
    // expected deficit below the 300 MW guarantee priced at 60 + 5 $/MWh.
    let ed = truncated_deficit_expectation(&f, &[300.0 / 250.0]).unwrap()[0] * 250.0;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for p in 0..=300 {
        let p1 = p as f64;
        for k in 0..=400 {
            let d = k as f64 * 0.01;
            if p1 - 25.0 * d > 275.0 + 1e-9 {
                continue;
            }
            let cost = 10.0 * p1 + 50.0 * (300.0 - p1) + 2.0 * 25.0 * d + 65.0 * d * ed;
            if cost < best.0 {
                best = (cost, p1, d);
            }
        }
    }
    let ii_brute_ok = (best.1 - pii.p_gen[0]).abs() <= 1.0 && (best.0 - pii.total_expected_cost()).abs() <= 1.0;

    check(
        i_ok && ii_ok && shift_ok && sched_ok && ii_brute_ok,
        format!(
            "I shift {:.3}/{:.3} MW, II shift {:.3}/{:.3} MW; brute force: shift {} MW, I schedule {} MW (${:.2} vs ${:.2}), \
             II schedule {} MW (${:.2} vs ${:.2})",
            act.delta_minus[0],
            act.delta_plus[1],
            a[0],
            a[1],
            shift.1,
            sched.1,
            sched.0,
            pi.objective(),
            best.1,
            best.0,
            pii.total_expected_cost()
        ),
    )
}

fn c9_determinism() -> Outcome {
    let g = GridModel::rts96();
    let h = compute_ptdf(&g).unwrap();
    let mut cfg = ScenarioConfig::new(rts_forecast(&g, 0.1), 0.95, 0.0, Approach::Both);
    cfg.sample_count = 300;
    cfg.seed = 99;
    let bytes = |threads: usize| -> Vec<u8> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut out = Vec::new();
            for r in run_scenario(&g, &h, &cfg).unwrap() {
                write_outcomes_csv(&r, &mut out).unwrap();
                out.extend(
                    format!("{:.6},{:.6},{:.6}\n", r.total_cost, r.procured_mw, r.mean_operational_cost).bytes(),
                );
            }
            let t = summary_table(&g, &h, 1.5, 0.1, 0.2, 0.95, 50, 3).unwrap();
            write_summary_csv(&t, &mut out).unwrap();
            out
        })
    };
    let a = bytes(1);
    let b = bytes(1);
    let c = bytes(2);
    check(
        a == b && a == c,
        format!("{} bytes; repeat identical {}, other thread count identical {}", a.len(), a == b, a == c),
    )
}

fn main() {
    println!("acceptance criteria");
    let results = [
        run("1", Some(Duration::from_secs(1)), c1_thermal),
        run("2", Some(Duration::from_secs(1)), c2_sweeps),
        run("3", None, c3_sets),
        run("4", Some(Duration::from_secs(10)), c4_deficit),
        run("5", Some(Duration::from_secs(300)), c5_approach_i),
        run("6", Some(Duration::from_secs(300)), c6_approach_ii),
        run("7", None, c7_tendencies),
        run("8", None, c8_micro_grid),
        run("9", None, c9_determinism),
    ];
    let failed = results.iter().filter(|&&p| !p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
