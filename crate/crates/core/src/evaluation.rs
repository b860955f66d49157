//! Monte Carlo evaluation of procured reserves and the parameter sweeps of
//! the case study: flow-limit contours, procured amounts and μ/σ
//! sensitivity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affine_policy::{
    default_y_grid, policy_action, procure_affine_with, select_y, AffineSetup, PolicyProcurement,
};
use crate::error::{invalid, Error, Result};
use crate::network::{GridModel, PtdfMatrices};
use crate::opf::FlowModel;
use crate::robust_dispatch::{
    procure_vertex_robust_with, realized_limits, Operator, ProcurementOptions, ProcurementResult, FLOW_TOL_MW,
};
use crate::uncertainty::{build_ellipsoid, build_polytope, EllipsoidSet, PolytopeSet, RatingForecast};

pub use crate::opf::status_quo_cost;

/// Slack on the reserve bounds when checking policy actions, MW.
const BOUND_TOL_MW: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Approach {
    /// Central re-dispatch against procured reserves.
    I,
    /// Decentralized affine policies.
    II,
    Both,
}

impl Approach {
    fn includes_i(self) -> bool {
        matches!(self, Approach::I | Approach::Both)
    }

    fn includes_ii(self) -> bool {
        matches!(self, Approach::II | Approach::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub forecast: RatingForecast,
    pub gamma: f64,
    pub alpha: f64,
    pub approach: Approach,
    /// Caps on the scheduled DLR flows, MW.
    #[serde(default)]
    pub flow_caps_mw: Option<Vec<f64>>,
    pub sample_count: usize,
    pub seed: u64,
    /// Facets per coordinate pair of the polyhedral set.
    #[serde(default = "default_facets")]
    pub facets: usize,
    /// Candidate guarantees per line when approach II searches for `y`.
    #[serde(default = "default_y_levels")]
    pub y_levels: usize,
    /// $/MW of residual overload for samples the plan cannot cover.
    #[serde(default = "default_penalty")]
    pub penalty_price: f64,
}

fn default_facets() -> usize {
    8
}

fn default_y_levels() -> usize {
    7
}

fn default_penalty() -> f64 {
    1000.0
}

impl ScenarioConfig {
    pub fn new(forecast: RatingForecast, gamma: f64, alpha: f64, approach: Approach) -> Self {
        ScenarioConfig {
            forecast,
            gamma,
            alpha,
            approach,
            flow_caps_mw: None,
            sample_count: 1000,
            seed: 1,
            facets: default_facets(),
            y_levels: default_y_levels(),
            penalty_price: default_penalty(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.forecast.validate()?;
        if self.sample_count == 0 {
            return Err(invalid("sample_count must be at least 1"));
        }
        if let Some(c) = &self.flow_caps_mw {
            if c.iter().any(|&v| !(v > 0.0)) {
                return Err(invalid("flow caps must be positive"));
            }
        }
        if !(self.alpha >= 0.0) || !(self.penalty_price >= 0.0) {
            return Err(invalid("alpha and penalty price must be nonnegative"));
        }
        Ok(())
    }

    /// Ellipsoid and polytope of the forecast.
    pub fn sets(&self) -> Result<(EllipsoidSet, PolytopeSet)> {
        let e = build_ellipsoid(&self.forecast, self.gamma)?;
        let w = build_polytope(&e, self.facets)?;
        Ok((e, w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleOutcome {
    Feasible,
    /// Limits violated after the remedial action.
    Infeasible,
    /// The solver gave up on this sample.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub approach: Approach,
    pub label: String,
    pub status_quo_cost: f64,
    pub dispatch_cost: f64,
    pub procured_mw: f64,
    pub procurement_cost: f64,
    pub mean_operational_cost: f64,
    /// Mean penalty for uncovered overloads; kept out of the total.
    pub mean_penalty: f64,
    pub total_cost: f64,
    pub savings_pct: f64,
    pub feasibility_rate: f64,
    pub outcomes: Vec<SampleOutcome>,
    /// The guarantee chosen for approach II, MW.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_mw: Option<Vec<f64>>,
}

impl EvaluationReport {
    fn assemble(
        approach: Approach,
        label: String,
        status_quo: f64,
        dispatch: f64,
        procured_mw: f64,
        procurement: f64,
        per_sample: &[(SampleOutcome, f64, f64)],
        op_over_all: bool,
    ) -> Self {
        let n = per_sample.len() as f64;
        let feasible = per_sample.iter().filter(|s| s.0 == SampleOutcome::Feasible).count();
        // Fixed-order sums keep the report independent of the thread count.
        let (mut op_sum, mut op_n, mut pen_sum) = (0.0, 0usize, 0.0);
        for &(o, op, pen) in per_sample {
            if op_over_all || o == SampleOutcome::Feasible {
                op_sum += op;
                op_n += 1;
            }
            pen_sum += pen;
        }
        let mean_op = if op_n > 0 { op_sum / op_n as f64 } else { 0.0 };
        let total = dispatch + procurement + mean_op;
        EvaluationReport {
            approach,
            label,
            status_quo_cost: status_quo,
            dispatch_cost: dispatch,
            procured_mw,
            procurement_cost: procurement,
            mean_operational_cost: mean_op,
            mean_penalty: pen_sum / n,
            total_cost: total,
            savings_pct: 100.0 * (status_quo - total) / status_quo,
            feasibility_rate: feasible as f64 / n,
            outcomes: per_sample.iter().map(|s| s.0).collect(),
            y_mw: None,
        }
    }
}

/// A procurement of either approach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Procurement {
    I(ProcurementResult),
    II(PolicyProcurement),
}

/// `n` seeded draws of `delta ~ N(mu, Sigma)`, p.u.
pub fn draw_samples(e: &EllipsoidSet, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| e.sample_normal(&mut rng)).collect()
}

/// Total overload in MW of `flows` against `limits`.
fn overload(flows: &[f64], limits: &[f64]) -> f64 {
    flows.iter().zip(limits).map(|(f, l)| (f.abs() - l).max(0.0)).sum()
}

/// Evaluates `proc` on `cfg.sample_count` seeded realizations.
///
/// Approach I averages the re-dispatch cost over the samples it covers;
/// approach II averages the policy's activation cost over every sample,
/// since the policy acts regardless. Uncovered overloads are priced at
/// `penalty_price` and reported separately.
pub fn monte_carlo_eval(
    g: &GridModel,
    ptdf: &PtdfMatrices,
    cfg: &ScenarioConfig,
    proc: &Procurement,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    let status_quo = status_quo_cost(g, ptdf)?;
    let e = build_ellipsoid(&cfg.forecast, cfg.gamma)?;
    let samples = draw_samples(&e, cfg.sample_count, cfg.seed);
    evaluate_on(g, ptdf, cfg, proc, &samples, status_quo)
}

/// As [`monte_carlo_eval`] on given realizations and baseline.
pub fn evaluate_on(
    g: &GridModel,
    ptdf: &PtdfMatrices,
    cfg: &ScenarioConfig,
    proc: &Procurement,
    samples: &[Vec<f64>],
    status_quo: f64,
) -> Result<EvaluationReport> {
    if samples.is_empty() {
        return Err(invalid("no samples to evaluate"));
    }
    let fm = FlowModel::new(g, ptdf);
    match proc {
        Procurement::I(r) => {
            let op = Operator::new(g, ptdf, r)?;
            let scheduled = fm.flows(&r.p_gen);
            let per: Vec<(SampleOutcome, f64, f64)> = samples
                .par_iter()
                .map(|d| match op.operate(d) {
                    Ok(a) => (SampleOutcome::Feasible, a.cost, 0.0),
                    Err(err) => {
                        let pen = cfg.penalty_price * overload(&scheduled, &realized_limits(g, ptdf, d));
                        let o = if err.is_numerical() { SampleOutcome::Failed } else { SampleOutcome::Infeasible };
                        (o, 0.0, pen)
                    }
                })
                .collect();
            Ok(EvaluationReport::assemble(
                Approach::I,
                format!("I (alpha = {})", r.alpha),
                status_quo,
                r.cost_dispatch,
                r.procured_mw(),
                r.cost_procurement,
                &per,
                false,
            ))
        }
        Procurement::II(pp) => {
            let pol = &pp.policy;
            let per: Vec<(SampleOutcome, f64, f64)> = samples
                .par_iter()
                .map(|d| {
                    let act = policy_action(pol, d);
                    let p: Vec<f64> = pp.p_gen.iter().zip(&act).map(|(a, b)| a + b).collect();
                    let over = overload(&fm.flows(&p), &realized_limits(g, ptdf, d));
                    let in_bounds = act
                        .iter()
                        .enumerate()
                        .all(|(j, &a)| a <= pol.delta_up[j] + BOUND_TOL_MW && a >= pol.delta_dn[j] - BOUND_TOL_MW);
                    let ok = over <= FLOW_TOL_MW * g.lines.len() as f64 && in_bounds;
                    let o = if ok { SampleOutcome::Feasible } else { SampleOutcome::Infeasible };
                    let pen = if ok { 0.0 } else { cfg.penalty_price * over };
                    (o, pol.activation_cost(g, d), pen)
                })
                .collect();
            let mut rep = EvaluationReport::assemble(
                Approach::II,
                "II".to_string(),
                status_quo,
                pp.cost_dispatch,
                pp.procured_mw(),
                pp.cost_procurement,
                &per,
                true,
            );
            rep.y_mw = Some(pol.y.clone());
            Ok(rep)
        }
    }
}

/// Applies the policy to one realization and checks every line limit.
/// Returns the per-generator adjustment in MW, or `Uncovered` naming the
/// lines still overloaded.
pub fn operate_policy(g: &GridModel, ptdf: &PtdfMatrices, pp: &PolicyProcurement, delta: &[f64]) -> Result<Vec<f64>> {
    let pol = &pp.policy;
    if delta.len() != pol.y.len() {
        return Err(invalid("realization length does not match the DLR lines"));
    }
    if delta.iter().any(|&d| !(d > 0.0)) {
        return Err(invalid("realized ratings must be positive"));
    }
    let act = policy_action(pol, delta);
    let p: Vec<f64> = pp.p_gen.iter().zip(&act).map(|(a, b)| a + b).collect();
    let flows = FlowModel::new(g, ptdf).flows(&p);
    let lim = realized_limits(g, ptdf, delta);
    let over: Vec<String> =
        (0..lim.len()).filter(|&l| flows[l].abs() > lim[l] + FLOW_TOL_MW).map(|l| g.lines[l].id.clone()).collect();
    if !over.is_empty() {
        return Err(Error::Uncovered { lines: over });
    }
    Ok(act)
}

/// Procures with the approaches selected in `cfg`. Approach II searches
/// the default guarantee grid unless `y_mw` is given.
pub fn procure(
    g: &GridModel,
    ptdf: &PtdfMatrices,
    cfg: &ScenarioConfig,
    y_mw: Option<&[f64]>,
) -> Result<Vec<Procurement>> {
    cfg.validate()?;
    let (_, w) = cfg.sets()?;
    let mut out = Vec::new();
    if cfg.approach.includes_i() {
        let opts = ProcurementOptions { alpha: cfg.alpha, flow_caps_mw: cfg.flow_caps_mw.clone() };
        out.push(Procurement::I(procure_vertex_robust_with(g, ptdf, &w, &opts)?));
    }
    if cfg.approach.includes_ii() {
        let setup = AffineSetup {
            grid: g,
            ptdf,
            forecast: &cfg.forecast,
            polytope: &w,
            flow_caps_mw: cfg.flow_caps_mw.clone(),
        };
        let pp = match y_mw {
            Some(y) => procure_affine_with(&setup, y)?,
            None => {
                let grid = default_y_grid(&cfg.forecast, &g.dlr_base_mw(), 1.0, cfg.y_levels);
                select_y(&setup, &grid)?.1
            }
        };
        out.push(Procurement::II(pp));
    }
    Ok(out)
}

/// Procures and evaluates every approach selected in `cfg`.
pub fn run_scenario(g: &GridModel, ptdf: &PtdfMatrices, cfg: &ScenarioConfig) -> Result<Vec<EvaluationReport>> {
    let procs = procure(g, ptdf, cfg, None)?;
    let status_quo = status_quo_cost(g, ptdf)?;
    let e = build_ellipsoid(&cfg.forecast, cfg.gamma)?;
    let samples = draw_samples(&e, cfg.sample_count, cfg.seed);
    procs.iter().map(|p| evaluate_on(g, ptdf, cfg, p, &samples, status_quo)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLimitRow {
    pub approach: Approach,
    pub caps_mw: Vec<f64>,
    /// `false` when no plan exists for these caps; the numbers are then NaN.
    pub feasible: bool,
    pub procured_mw: f64,
    pub total_cost: f64,
    pub savings_pct: f64,
    pub mean_operational_cost: f64,
}

/// Procured amount and savings per grid point of DLR flow caps.
///
/// Approach I caps the scheduled DLR flows. Approach II uses the cap as
/// the guarantee `y` and caps the schedule at the same level.
pub fn sweep_flow_limits(
    g: &GridModel,
    ptdf: &PtdfMatrices,
    cfg: &ScenarioConfig,
    limits_grid: &[Vec<f64>],
) -> Result<Vec<FlowLimitRow>> {
    cfg.validate()?;
    let status_quo = status_quo_cost(g, ptdf)?;
    let e = build_ellipsoid(&cfg.forecast, cfg.gamma)?;
    let samples = draw_samples(&e, cfg.sample_count, cfg.seed);
    let mut rows = Vec::new();
    for caps in limits_grid {
        let mut c = cfg.clone();
        c.flow_caps_mw = Some(caps.clone());
        c.validate()?;
        for approach in [Approach::I, Approach::II] {
            let wanted = match approach {
                Approach::I => cfg.approach.includes_i(),
                _ => cfg.approach.includes_ii(),
            };
            if !wanted {
                continue;
            }
            let mut ci = c.clone();
            ci.approach = approach;
            let y = (approach == Approach::II).then_some(caps.as_slice());
            let row = match procure(g, ptdf, &ci, y) {
                Ok(p) => {
                    let r = evaluate_on(g, ptdf, &ci, &p[0], &samples, status_quo)?;
                    FlowLimitRow {
                        approach,
                        caps_mw: caps.clone(),
                        feasible: true,
                        procured_mw: r.procured_mw,
                        total_cost: r.total_cost,
                        savings_pct: r.savings_pct,
                        mean_operational_cost: r.mean_operational_cost,
                    }
                }
                Err(err) if err.is_infeasible() || matches!(err, Error::InvalidInput(_)) => FlowLimitRow {
                    approach,
                    caps_mw: caps.clone(),
                    feasible: false,
                    procured_mw: f64::NAN,
                    total_cost: f64::NAN,
                    savings_pct: f64::NAN,
                    mean_operational_cost: f64::NAN,
                },
                Err(err) => return Err(err),
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuSigmaRow {
    pub approach: Approach,
    pub mu: f64,
    pub sigma: f64,
    pub feasible: bool,
    pub savings_pct: f64,
    pub mean_operational_cost: f64,
    pub procured_mw: f64,
}

/// Savings and operational cost per (μ, σ), the same for every DLR line.
pub fn sweep_mu_sigma(
    g: &GridModel,
    ptdf: &PtdfMatrices,
    cfg: &ScenarioConfig,
    mu_grid: &[f64],
    sigma_grid: &[f64],
) -> Result<Vec<MuSigmaRow>> {
    if mu_grid.is_empty() || sigma_grid.is_empty() {
        return Err(invalid("mu and sigma grids must be nonempty"));
    }
    let k = cfg.forecast.dim();
    let mut rows = Vec::new();
    for &mu in mu_grid {
        for &sigma in sigma_grid {
            let mut c = cfg.clone();
            c.forecast = RatingForecast::independent(vec![mu; k], &vec![sigma; k], cfg.forecast.lead_time)?
                .with_lines(cfg.forecast.lines.clone());
            let reports = match run_scenario(g, ptdf, &c) {
                Ok(r) => r,
                Err(err) if err.is_infeasible() => {
                    for approach in [Approach::I, Approach::II] {
                        let wanted = match approach {
                            Approach::I => cfg.approach.includes_i(),
                            _ => cfg.approach.includes_ii(),
                        };
                        if wanted {
                            rows.push(MuSigmaRow {
                                approach,
                                mu,
                                sigma,
                                feasible: false,
                                savings_pct: f64::NAN,
                                mean_operational_cost: f64::NAN,
                                procured_mw: f64::NAN,
                            });
                        }
                    }
                    continue;
                }
                Err(err) => return Err(err),
            };
            for r in reports {
                rows.push(MuSigmaRow {
                    approach: r.approach,
                    mu,
                    sigma,
                    feasible: true,
                    savings_pct: r.savings_pct,
                    mean_operational_cost: r.mean_operational_cost,
                    procured_mw: r.procured_mw,
                });
            }
        }
    }
    Ok(rows)
}

/// Columns of the comparison table: approach II at both lead times, then
/// approach I at both lead times for α = 0 and α = 0.1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub status_quo_cost: f64,
    pub columns: Vec<(String, EvaluationReport)>,
}

/// Runs the six scenarios of the comparison table.
#[allow(clippy::too_many_arguments)]
pub fn summary_table(
    g: &GridModel,
    ptdf: &PtdfMatrices,
    mu: f64,
    sigma_short: f64,
    sigma_long: f64,
    gamma: f64,
    sample_count: usize,
    seed: u64,
) -> Result<SummaryTable> {
    let k = ptdf.dlr_line_index.len();
    let status_quo = status_quo_cost(g, ptdf)?;
    let mut columns = Vec::new();
    let cases: [(&str, Approach, f64, f64, f64); 6] = [
        ("II-3h", Approach::II, sigma_short, 3.0, 0.0),
        ("II-24h", Approach::II, sigma_long, 24.0, 0.0),
        ("I-3h (alpha = 0)", Approach::I, sigma_short, 3.0, 0.0),
        ("I-3h (alpha = 0.1)", Approach::I, sigma_short, 3.0, 0.1),
        ("I-24h (alpha = 0)", Approach::I, sigma_long, 24.0, 0.0),
        ("I-24h (alpha = 0.1)", Approach::I, sigma_long, 24.0, 0.1),
    ];
    for (label, approach, sigma, lead, alpha) in cases {
        let f = RatingForecast::independent(vec![mu; k], &vec![sigma; k], lead)?.with_lines(g.dlr_line_ids());
        let mut cfg = ScenarioConfig::new(f, gamma, alpha, approach);
        cfg.sample_count = sample_count;
        cfg.seed = seed;
        let mut r = run_scenario(g, ptdf, &cfg)?.remove(0);
        r.label = label.to_string();
        r.status_quo_cost = status_quo;
        columns.push((label.to_string(), r));
    }
    Ok(SummaryTable { status_quo_cost: status_quo, columns })
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// Row-per-quantity layout with a status-quo column first.
pub fn write_summary_csv<W: std::io::Write>(t: &SummaryTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["quantity".to_string(), "status quo".to_string()];
    header.extend(t.columns.iter().map(|c| c.0.clone()));
    w.write_record(&header)?;
    type Getter = fn(&EvaluationReport) -> f64;
    let rows: [(&str, f64, Getter); 6] = [
        ("dispatch_cost", t.status_quo_cost, |r| r.dispatch_cost),
        ("procured_mw", 0.0, |r| r.procured_mw),
        ("procurement_cost", 0.0, |r| r.procurement_cost),
        ("mean_operational_cost", 0.0, |r| r.mean_operational_cost),
        ("total_cost", t.status_quo_cost, |r| r.total_cost),
        ("savings_pct", 0.0, |r| r.savings_pct),
    ];
    for (name, sq, get) in rows {
        let mut rec = vec![name.to_string(), fmt(sq)];
        rec.extend(t.columns.iter().map(|c| fmt(get(&c.1))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn approach_name(a: Approach) -> &'static str {
    match a {
        Approach::I => "I",
        Approach::II => "II",
        Approach::Both => "both",
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt(*x)).collect::<Vec<_>>().join(";")
}

pub fn write_flow_limit_csv<W: std::io::Write>(rows: &[FlowLimitRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "approach",
        "caps_mw",
        "feasible",
        "procured_mw",
        "total_cost",
        "savings_pct",
        "mean_operational_cost",
    ])?;
    for r in rows {
        w.write_record([
            approach_name(r.approach).to_string(),
            join(&r.caps_mw),
            r.feasible.to_string(),
            fmt(r.procured_mw),
            fmt(r.total_cost),
            fmt(r.savings_pct),
            fmt(r.mean_operational_cost),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mu_sigma_csv<W: std::io::Write>(rows: &[MuSigmaRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["approach", "mu", "sigma", "feasible", "savings_pct", "mean_operational_cost", "procured_mw"])?;
    for r in rows {
        w.write_record([
            approach_name(r.approach).to_string(),
            fmt(r.mu),
            fmt(r.sigma),
            r.feasible.to_string(),
            fmt(r.savings_pct),
            fmt(r.mean_operational_cost),
            fmt(r.procured_mw),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// (x, y, z) triples of savings over a two-line cap grid, one file per
/// approach, for contour plots.
pub fn write_contour_csv<W: std::io::Write>(rows: &[FlowLimitRow], approach: Approach, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x_cap_mw", "y_cap_mw", "savings_pct"])?;
    for r in rows.iter().filter(|r| r.approach == approach) {
        let x = r.caps_mw.first().copied().unwrap_or(f64::NAN);
        let y = r.caps_mw.get(1).copied().unwrap_or(f64::NAN);
        w.write_record([fmt(x), fmt(y), fmt(r.savings_pct)])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per sample of an evaluation.
pub fn write_outcomes_csv<W: std::io::Write>(r: &EvaluationReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample", "outcome"])?;
    for (i, o) in r.outcomes.iter().enumerate() {
        let s = match o {
            SampleOutcome::Feasible => "feasible",
            SampleOutcome::Infeasible => "infeasible",
            SampleOutcome::Failed => "failed",
        };
        w.write_record([i.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
