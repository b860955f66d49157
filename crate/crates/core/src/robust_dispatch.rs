//! Centralized corrective control: reserves are procured so that every
//! vertex of the polyhedral rating set admits a re-dispatch, and the
//! actual re-dispatch is computed online once the rating is measured.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::network::{GridModel, PtdfMatrices};
use crate::opf::{
    add_dispatch, fill_in_order, flow_cuts, identical_groups, reserve_providers, solve_lazy, Cut, FlowModel,
};
use crate::solver::{ConvexProgram, Status};
use crate::uncertainty::PolytopeSet;

/// Tolerance in MW on line limits when checking a schedule or action.
pub const FLOW_TOL_MW: f64 = 1e-6;

/// Reserve amounts below this are reported as zero.
const ZERO_MW: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexAction {
    /// Rating realization, p.u.
    pub delta: Vec<f64>,
    /// MW per generator, >= 0.
    pub plus: Vec<f64>,
    /// MW per generator, <= 0.
    pub minus: Vec<f64>,
    /// $/h at activation prices.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcurementResult {
    pub generators: Vec<String>,
    pub dlr_lines: Vec<String>,
    pub alpha: f64,
    pub p_gen: Vec<f64>,
    /// Procured upward reserve per generator, MW >= 0.
    pub delta_up: Vec<f64>,
    /// Procured downward reserve per generator, MW <= 0.
    pub delta_dn: Vec<f64>,
    pub cost_dispatch: f64,
    pub cost_procurement: f64,
    /// Largest activation cost over the vertices.
    pub cost_worst_case: f64,
    pub per_vertex_actions: Vec<VertexAction>,
    /// Caps on the scheduled DLR flows, MW, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_caps_mw: Option<Vec<f64>>,
}

impl ProcurementResult {
    /// Total procured reserve, upward plus downward, MW.
    pub fn procured_mw(&self) -> f64 {
        self.delta_up.iter().sum::<f64>() - self.delta_dn.iter().sum::<f64>()
    }

    pub fn objective(&self) -> f64 {
        self.cost_dispatch + self.cost_procurement + self.alpha * self.cost_worst_case
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProcurementOptions {
    /// Weight of the worst-case activation cost.
    pub alpha: f64,
    /// Upper bounds on |scheduled flow| of each DLR line, MW.
    pub flow_caps_mw: Option<Vec<f64>>,
}

pub fn procure_vertex_robust(
    g: &GridModel,
    ptdf: &PtdfMatrices,
    w: &PolytopeSet,
    alpha: f64,
) -> Result<ProcurementResult> {
    procure_vertex_robust_with(g, ptdf, w, &ProcurementOptions { alpha, flow_caps_mw: None })
}

/// Line limits in MW for a rating realization `delta` (p.u.).
pub fn realized_limits(g: &GridModel, ptdf: &PtdfMatrices, delta: &[f64]) -> Vec<f64> {
    let mut lim: Vec<f64> = g.lines.iter().map(|l| l.limit_mw).collect();
    for (k, &l) in ptdf.dlr_line_index.iter().enumerate() {
        lim[l] = delta[k] * g.lines[l].base_mw();
    }
    lim
}

fn activation_cost(g: &GridModel, plus: &[f64], minus: &[f64]) -> f64 {
    g.generators.iter().zip(plus.iter().zip(minus)).map(|(x, (&p, &m))| x.op_price_up * p - x.op_price_down * m).sum()
}

fn clean(v: f64) -> f64 {
    if v.abs() < ZERO_MW {
        0.0
    } else {
        v
    }
}

pub(crate) fn check_dims(ptdf: &PtdfMatrices, k: usize) -> Result<()> {
    if ptdf.dlr_line_index.len() != k {
        return Err(invalid(format!(
            "uncertainty set has dimension {k} but the grid has {} DLR lines",
            ptdf.dlr_line_index.len()
        )));
    }
    Ok(())
}

pub(crate) fn cap_cuts(ptdf: &PtdfMatrices, fm: &FlowModel, caps: Option<&[f64]>, tag_base: usize) -> Result<Vec<Cut>> {
    let Some(caps) = caps else { return Ok(Vec::new()) };
    if caps.len() != ptdf.dlr_line_index.len() || caps.iter().any(|&c| !(c > 0.0)) {
        return Err(invalid("flow caps must be positive, one per DLR line"));
    }
    let lines: Vec<(usize, f64)> = ptdf.dlr_line_index.iter().copied().zip(caps.iter().copied()).collect();
    Ok(flow_cuts(fm, &lines, 0, &[], |l| tag_base + l))
}

/// Solves the joint procurement and dispatch program over all vertices of
/// `w`. Reserve shares among interchangeable units are assigned to the
/// lowest generator index first.
pub fn procure_vertex_robust_with(
    g: &GridModel,
    ptdf: &PtdfMatrices,
    w: &PolytopeSet,
    opts: &ProcurementOptions,
) -> Result<ProcurementResult> {
    check_dims(ptdf, w.dim())?;
    if !(opts.alpha >= 0.0) {
        return Err(invalid("alpha must be nonnegative"));
    }
    let vertices = &w.vertices;
    match solve_joint(g, ptdf, vertices, opts)? {
        Ok(r) => Ok(r),
        Err(reason) => {
            // Find a vertex that cannot be covered on its own.
            for (i, v) in vertices.iter().enumerate() {
                if let Err(lines) = solve_joint(g, ptdf, std::slice::from_ref(v), opts)? {
                    return Err(Error::Infeasible {
                        reason: format!("vertex {i} at {v:?} p.u. cannot be covered; {lines}"),
                    });
                }
            }
            Err(Error::Infeasible { reason })
        }
    }
}

/// Inner result: `Err(description)` for an infeasible program.
fn solve_joint(
    g: &GridModel,
    ptdf: &PtdfMatrices,
    vertices: &[Vec<f64>],
    opts: &ProcurementOptions,
) -> Result<std::result::Result<ProcurementResult, String>> {
    let ng = g.generators.len();
    let prov = reserve_providers(g);
    let nr = prov.len();
    let nv = vertices.len();
    let fm = FlowModel::new(g, ptdf);

    let dn0 = ng;
    let up0 = ng + nr;
    let vbase = |i: usize| ng + 2 * nr + 2 * nr * i;
    let use_t = opts.alpha > 0.0;
    let t_col = ng + 2 * nr + 2 * nr * nv;
    let n = t_col + usize::from(use_t);

    let mut prog = ConvexProgram::new(n);
    add_dispatch(&mut prog, g, 0);
    for (r, &j) in prov.iter().enumerate() {
        let x = &g.generators[j];
        prog.set_bounds(dn0 + r, x.reserve_down_max, 0.0);
        prog.set_bounds(up0 + r, 0.0, x.reserve_up_max);
        prog.add_linear(dn0 + r, -x.proc_price_down);
        prog.add_linear(up0 + r, x.proc_price_up);
    }
    if use_t {
        prog.set_bounds(t_col, 0.0, f64::INFINITY);
        prog.add_linear(t_col, opts.alpha);
    }
    let mut cuts: Vec<Cut> = Vec::new();
    let nl = g.lines.len();
    for (i, delta) in vertices.iter().enumerate() {
        let ap = vbase(i);
        let am = ap + nr;
        for (r, &j) in prov.iter().enumerate() {
            let x = &g.generators[j];
            prog.set_bounds(ap + r, 0.0, x.reserve_up_max);
            prog.set_bounds(am + r, x.reserve_down_max, 0.0);
            prog.add_le([(dn0 + r, 1.0), (am + r, -1.0)], 0.0);
            prog.add_le([(ap + r, 1.0), (up0 + r, -1.0)], 0.0);
        }
        prog.add_eq((0..nr).flat_map(|r| [(ap + r, 1.0), (am + r, 1.0)]), 0.0);
        if use_t {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * nr + 1);
            for (r, &j) in prov.iter().enumerate() {
                let x = &g.generators[j];
                row.push((ap + r, x.op_price_up));
                row.push((am + r, -x.op_price_down));
            }
            row.push((t_col, -1.0));
            prog.add_le(row, 0.0);
        }
        let limits = realized_limits(g, ptdf, delta);
        let lines: Vec<(usize, f64)> = limits.into_iter().enumerate().collect();
        let shift: Vec<(usize, usize)> =
            prov.iter().enumerate().flat_map(|(r, &j)| [(ap + r, j), (am + r, j)]).collect();
        cuts.extend(flow_cuts(&fm, &lines, 0, &shift, |l| i * nl + l));
    }
    let cap_tag = nv * nl;
    cuts.extend(cap_cuts(ptdf, &fm, opts.flow_caps_mw.as_deref(), cap_tag)?);

    let dlr: Vec<usize> = ptdf.dlr_line_index.clone();
    let out = solve_lazy(&prog, &cuts, |c| dlr.contains(&(c.tag % nl)))?;
    let sol = out.solution;
    match sol.status {
        Status::Optimal => {}
        Status::Infeasible => {
            let mut lines: Vec<String> =
                out.infeasible_cuts.iter().map(|&k| g.lines[cuts[k].tag % nl].id.clone()).collect();
            lines.sort();
            lines.dedup();
            return Ok(Err(format!("binding lines {lines:?}")));
        }
        s => return Err(Error::Numerical(format!("procurement solve ended with {s:?}"))),
    }
    let x = sol.x;

    let mut p_gen = x[..ng].to_vec();
    let mut delta_up = vec![0.0; ng];
    let mut delta_dn = vec![0.0; ng];
    let mut plus = vec![vec![0.0; ng]; nv];
    let mut minus = vec![vec![0.0; ng]; nv];
    for (r, &j) in prov.iter().enumerate() {
        delta_dn[j] = clean(x[dn0 + r]);
        delta_up[j] = clean(x[up0 + r]);
        for i in 0..nv {
            plus[i][j] = clean(x[vbase(i) + r]);
            minus[i][j] = clean(x[vbase(i) + nr + r]);
        }
    }

    for grp in identical_groups(g) {
        let gens = &g.generators;
        let up_caps: Vec<f64> = grp.iter().map(|&j| gens[j].reserve_up_max).collect();
        let dn_caps: Vec<f64> = grp.iter().map(|&j| gens[j].reserve_down_max).collect();
        let reassign = |v: &mut Vec<f64>, caps: &[f64]| {
            let total: f64 = grp.iter().map(|&j| v[j]).sum();
            for (&j, val) in grp.iter().zip(fill_in_order(total, caps)) {
                v[j] = val;
            }
        };
        reassign(&mut delta_up, &up_caps);
        reassign(&mut delta_dn, &dn_caps);
        for i in 0..nv {
            reassign(&mut plus[i], &up_caps);
            reassign(&mut minus[i], &dn_caps);
        }
        if gens[grp[0]].cost_quadratic == 0.0 {
            let lo: f64 = grp.iter().map(|&j| gens[j].p_min).sum();
            let total: f64 = grp.iter().map(|&j| p_gen[j]).sum::<f64>() - lo;
            let room: Vec<f64> = grp.iter().map(|&j| gens[j].p_max - gens[j].p_min).collect();
            for (&j, extra) in grp.iter().zip(fill_in_order(total.max(0.0), &room)) {
                p_gen[j] = gens[j].p_min + extra;
            }
        }
    }

    let per_vertex_actions: Vec<VertexAction> = (0..nv)
        .map(|i| VertexAction {
            delta: vertices[i].clone(),
            cost: activation_cost(g, &plus[i], &minus[i]),
            plus: plus[i].clone(),
            minus: minus[i].clone(),
        })
        .collect();
    let cost_worst_case = per_vertex_actions.iter().map(|a| a.cost).fold(0.0, f64::max);
    let cost_procurement = g
        .generators
        .iter()
        .enumerate()
        .map(|(j, x)| x.proc_price_up * delta_up[j] - x.proc_price_down * delta_dn[j])
        .sum();
    Ok(Ok(ProcurementResult {
        generators: g.generators.iter().map(|x| x.id.clone()).collect(),
        dlr_lines: g.dlr_line_ids(),
        alpha: opts.alpha,
        cost_dispatch: g.dispatch_cost(&p_gen),
        p_gen,
        delta_up,
        delta_dn,
        cost_procurement,
        cost_worst_case,
        per_vertex_actions,
        flow_caps_mw: opts.flow_caps_mw.clone(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedispatchAction {
    /// MW per generator, >= 0.
    pub delta_plus: Vec<f64>,
    /// MW per generator, <= 0.
    pub delta_minus: Vec<f64>,
    /// $/h at activation prices.
    pub cost: f64,
}

impl RedispatchAction {
    fn zero(ng: usize) -> Self {
        RedispatchAction { delta_plus: vec![0.0; ng], delta_minus: vec![0.0; ng], cost: 0.0 }
    }

    pub fn net(&self) -> Vec<f64> {
        self.delta_plus.iter().zip(&self.delta_minus).map(|(a, b)| a + b).collect()
    }
}

/// Online re-dispatch against procured reserves; reusable across
/// realizations.
#[derive(Debug, Clone)]
pub struct Operator<'a> {
    g: &'a GridModel,
    ptdf: &'a PtdfMatrices,
    proc: &'a ProcurementResult,
    fm: FlowModel,
    scheduled: Vec<f64>,
    prov: Vec<usize>,
}

impl<'a> Operator<'a> {
    pub fn new(g: &'a GridModel, ptdf: &'a PtdfMatrices, proc: &'a ProcurementResult) -> Result<Self> {
        if proc.p_gen.len() != g.generators.len() {
            return Err(invalid("procurement does not match the grid's generators"));
        }
        check_dims(ptdf, proc.dlr_lines.len())?;
        let fm = FlowModel::new(g, ptdf);
        let scheduled = fm.flows(&proc.p_gen);
        let prov = (0..g.generators.len()).filter(|&j| proc.delta_up[j] > 0.0 || proc.delta_dn[j] < 0.0).collect();
        Ok(Operator { g, ptdf, proc, fm, scheduled, prov })
    }

    /// Lines overloaded by the schedule under `delta`.
    pub fn overloaded(&self, delta: &[f64]) -> Vec<usize> {
        let lim = realized_limits(self.g, self.ptdf, delta);
        (0..lim.len()).filter(|&l| self.scheduled[l].abs() > lim[l] + FLOW_TOL_MW).collect()
    }

    pub fn operate(&self, delta: &[f64]) -> Result<RedispatchAction> {
        if delta.len() != self.ptdf.dlr_line_index.len() {
            return Err(invalid("realization length does not match the DLR lines"));
        }
        if delta.iter().any(|&d| !(d > 0.0)) {
            return Err(invalid("realized ratings must be positive"));
        }
        let ng = self.g.generators.len();
        let over = self.overloaded(delta);
        if over.is_empty() {
            return Ok(RedispatchAction::zero(ng));
        }
        let uncovered = || Error::Uncovered { lines: over.iter().map(|&l| self.g.lines[l].id.clone()).collect() };
        let nr = self.prov.len();
        if nr == 0 {
            return Err(uncovered());
        }
        let mut prog = ConvexProgram::new(2 * nr);
        for (r, &j) in self.prov.iter().enumerate() {
            let x = &self.g.generators[j];
            prog.set_bounds(r, 0.0, self.proc.delta_up[j]);
            prog.set_bounds(nr + r, self.proc.delta_dn[j], 0.0);
            prog.add_linear(r, x.op_price_up);
            prog.add_linear(nr + r, -x.op_price_down);
        }
        prog.add_eq((0..2 * nr).map(|c| (c, 1.0)), 0.0);
        let lim = realized_limits(self.g, self.ptdf, delta);
        // The schedule is fixed, so its flow moves into the right-hand side.
        let mut cuts = Vec::with_capacity(2 * lim.len());
        for (l, &limit) in lim.iter().enumerate() {
            let row: crate::solver::SparseRow = self
                .prov
                .iter()
                .enumerate()
                .flat_map(|(r, &j)| {
                    let v = self.fm.sens[(l, j)];
                    [(r, v), (nr + r, v)]
                })
                .filter(|&(_, v)| v.abs() > 1e-10)
                .collect();
            if row.idx.is_empty() {
                continue;
            }
            let f0 = self.scheduled[l];
            cuts.push(Cut { rhs: limit + FLOW_TOL_MW - f0, row: row.clone(), tag: l });
            cuts.push(Cut { rhs: limit + FLOW_TOL_MW + f0, row: row.scaled(-1.0), tag: l });
        }
        let out = solve_lazy(&prog, &cuts, |c| over.contains(&c.tag))?;
        let sol = out.solution;
        match sol.status {
            Status::Optimal => {}
            Status::Infeasible => return Err(uncovered()),
            s => return Err(Error::Numerical(format!("online re-dispatch ended with {s:?}"))),
        }
        let mut act = RedispatchAction::zero(ng);
        for (r, &j) in self.prov.iter().enumerate() {
            act.delta_plus[j] = clean(sol.x[r].max(0.0));
            act.delta_minus[j] = clean(sol.x[nr + r].min(0.0));
        }
        act.cost = activation_cost(self.g, &act.delta_plus, &act.delta_minus);
        Ok(act)
    }

    /// Flows after applying `act`, MW.
    pub fn flows_after(&self, act: &RedispatchAction) -> Vec<f64> {
        let p: Vec<f64> = self.proc.p_gen.iter().zip(act.net()).map(|(p, d)| p + d).collect();
        self.fm.flows(&p)
    }
}

/// Re-dispatch for one measured realization `delta_realized` (p.u.).
pub fn operate_online(
    g: &GridModel,
    ptdf: &PtdfMatrices,
    proc: &ProcurementResult,
    delta_realized: &[f64],
) -> Result<RedispatchAction> {
    Operator::new(g, ptdf, proc)?.operate(delta_realized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{compute_ptdf, load_grid};
    use crate::uncertainty::{build_ellipsoid, build_polytope, chi2_cdf, RatingForecast};
    use approx::assert_abs_diff_eq;

    pub(crate) fn micro_grid() -> GridModel {
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

    /// Interval [1.1, 1.3] p.u., i.e. 275 to 325 MW.
    fn interval() -> PolytopeSet {
        let f = RatingForecast::independent(vec![1.2], &[0.05], 3.0).unwrap();
        let e = build_ellipsoid(&f, chi2_cdf(1, 4.0)).unwrap();
        build_polytope(&e, 8).unwrap()
    }

    #[test]
    fn micro_grid_procures_shift() {
        let g = micro_grid();
        let h = compute_ptdf(&g).unwrap();
        let r = procure_vertex_robust(&g, &h, &interval(), 0.0).unwrap();
        assert_abs_diff_eq!(r.p_gen[0], 300.0, epsilon = 1e-4);
        assert_abs_diff_eq!(r.delta_dn[0], -25.0, epsilon = 1e-4);
        assert_abs_diff_eq!(r.delta_up[1], 25.0, epsilon = 1e-4);
        assert_abs_diff_eq!(r.procured_mw(), 50.0, epsilon = 1e-4);

        let act = operate_online(&g, &h, &r, &[1.1]).unwrap();
        assert_abs_diff_eq!(act.delta_minus[0], -25.0, epsilon = 1e-4);
        assert_abs_diff_eq!(act.delta_plus[1], 25.0, epsilon = 1e-4);
        assert_abs_diff_eq!(act.cost, 25.0 * 60.0 + 25.0 * 5.0, epsilon = 1e-2);

        let calm = operate_online(&g, &h, &r, &[1.25]).unwrap();
        assert!(calm.net().iter().all(|&v| v.abs() < 1e-4));
        assert_eq!(operate_online(&g, &h, &r, &[1.3]).unwrap().cost, 0.0);
    }

    #[test]
    fn below_the_set_is_uncovered() {
        let g = micro_grid();
        let h = compute_ptdf(&g).unwrap();
        let r = procure_vertex_robust(&g, &h, &interval(), 0.0).unwrap();
        match operate_online(&g, &h, &r, &[1.0]) {
            Err(Error::Uncovered { lines }) => assert_eq!(lines, vec!["1-2".to_string()]),
            other => panic!("expected uncovered, got {other:?}"),
        }
    }

    #[test]
    fn unreachable_vertex_is_reported() {
        let mut g = micro_grid();
        for x in &mut g.generators {
            x.reserve_up_max = 5.0;
            x.reserve_down_max = -5.0;
        }
        // Pin the schedule so that only reserves could relieve the line.
        g.generators[1].p_max = 0.0;
        g.generators[1].p_min = 0.0;
        g.generators[0].p_min = 300.0;
        let h = compute_ptdf(&g).unwrap();
        match procure_vertex_robust(&g, &h, &interval(), 0.0) {
            Err(Error::Infeasible { reason }) => assert!(reason.contains("vertex"), "{reason}"),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_dimension_is_input_error() {
        let g = micro_grid();
        let h = compute_ptdf(&g).unwrap();
        let f = RatingForecast::independent(vec![1.2, 1.2], &[0.05, 0.05], 3.0).unwrap();
        let p = build_polytope(&build_ellipsoid(&f, 0.9).unwrap(), 8).unwrap();
        assert!(matches!(procure_vertex_robust(&g, &h, &p, 0.0), Err(Error::InvalidInput(_))));
    }
}
