//! DC optimal power flow building blocks shared by the procurement
//! programs: generator-level flow sensitivities, cost assembly and a
//! row-generation loop for the many flow-limit rows.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::network::{generator_sensitivity, load_flows, GridModel, PtdfMatrices};
use crate::solver::{self, ConvexProgram, RowRef, Solution, SparseRow, Status};

/// Sensitivities below this magnitude are dropped from constraint rows.
const SENS_DROP: f64 = 1e-10;

/// Line flows as an affine function of the generator schedule:
/// `flow = sens * p + base`.
#[derive(Debug, Clone)]
pub struct FlowModel {
    /// lines × generators
    pub sens: DMatrix<f64>,
    /// Flow caused by the loads alone, MW.
    pub base: Vec<f64>,
    pub limits: Vec<f64>,
}

impl FlowModel {
    pub fn new(g: &GridModel, ptdf: &PtdfMatrices) -> Self {
        FlowModel {
            sens: generator_sensitivity(g, ptdf),
            base: load_flows(g, ptdf),
            limits: g.lines.iter().map(|l| l.limit_mw).collect(),
        }
    }

    pub fn num_lines(&self) -> usize {
        self.base.len()
    }

    pub fn flow(&self, line: usize, p: &[f64]) -> f64 {
        self.base[line] + (0..self.sens.ncols()).map(|g| self.sens[(line, g)] * p[g]).sum::<f64>()
    }

    pub fn flows(&self, p: &[f64]) -> Vec<f64> {
        (0..self.num_lines()).map(|l| self.flow(l, p)).collect()
    }

    /// Sensitivity row of `line` over generators, mapped to program columns.
    pub fn row(&self, line: usize, columns: impl Fn(usize) -> usize) -> SparseRow {
        (0..self.sens.ncols())
            .filter_map(|g| {
                let v = self.sens[(line, g)];
                (v.abs() > SENS_DROP).then(|| (columns(g), v))
            })
            .collect()
    }
}

/// Adds generator bounds, the quadratic dispatch cost and the global power
/// balance for a schedule stored at columns `offset..offset + G`.
pub fn add_dispatch(prog: &mut ConvexProgram, g: &GridModel, offset: usize) {
    for (j, gen) in g.generators.iter().enumerate() {
        prog.set_bounds(offset + j, gen.p_min, gen.p_max);
        prog.add_linear(offset + j, gen.cost_linear);
        if gen.cost_quadratic > 0.0 {
            prog.add_square(offset + j, gen.cost_quadratic);
        }
    }
    prog.add_eq((0..g.generators.len()).map(|j| (offset + j, 1.0)), g.total_load());
}

/// A candidate `row . x <= rhs`, added to the program only once violated.
#[derive(Debug, Clone)]
pub struct Cut {
    pub row: SparseRow,
    pub rhs: f64,
    /// Caller-defined label, e.g. an encoded (vertex, line) pair.
    pub tag: usize,
}

#[derive(Debug, Clone)]
pub struct LazyOutcome {
    pub solution: Solution,
    /// Indices into the cut list that ended up in the program.
    pub active: Vec<usize>,
    /// Cuts among the phase-1 infeasible rows of an infeasible run.
    pub infeasible_cuts: Vec<usize>,
}

const MAX_ROUNDS: usize = 60;

fn cut_violation(c: &Cut, x: &[f64]) -> f64 {
    (c.row.dot(x) - c.rhs) / (1.0 + c.rhs.abs())
}

/// Solves `base` plus every cut, adding cuts only when the current optimum
/// violates them. `seed` selects cuts present from the start.
///
/// The relaxation optimum satisfies every cut on exit, so it is also the
/// optimum of the full program.
pub fn solve_lazy(base: &ConvexProgram, cuts: &[Cut], seed: impl Fn(&Cut) -> bool) -> Result<LazyOutcome> {
    let mut active: Vec<usize> = (0..cuts.len()).filter(|&k| seed(&cuts[k])).collect();
    let mut in_prog = vec![false; cuts.len()];
    for &k in &active {
        in_prog[k] = true;
    }
    let mut prog = base.clone();
    let first_cut_row = prog.num_ineq();
    for &k in &active {
        prog.add_le(cuts[k].row.iter(), cuts[k].rhs);
    }
    for _ in 0..MAX_ROUNDS {
        let sol = solver::solve(&prog)?;
        if sol.status != Status::Optimal {
            let infeasible_cuts = sol
                .infeasible_rows
                .iter()
                .filter_map(|r| match r {
                    RowRef::Ineq(i) if *i >= first_cut_row => Some(active[*i - first_cut_row]),
                    _ => None,
                })
                .collect();
            return Ok(LazyOutcome { solution: sol, active, infeasible_cuts });
        }
        let mut violated: Vec<(usize, f64)> = (0..cuts.len())
            .filter(|&k| !in_prog[k])
            .map(|k| (k, cut_violation(&cuts[k], &sol.x)))
            .filter(|&(_, v)| v > 1e-7)
            .collect();
        if violated.is_empty() {
            return Ok(LazyOutcome { solution: sol, active, infeasible_cuts: Vec::new() });
        }
        // Cuts that are nearly active tend to be needed in the next round too.
        violated.extend(
            (0..cuts.len())
                .filter(|&k| !in_prog[k])
                .map(|k| (k, cut_violation(&cuts[k], &sol.x)))
                .filter(|&(_, v)| v <= 1e-7 && v > -1e-3),
        );
        violated.sort_by_key(|&(k, _)| k);
        violated.dedup_by_key(|&mut (k, _)| k);
        for (k, _) in violated {
            in_prog[k] = true;
            active.push(k);
            prog.add_le(cuts[k].row.iter(), cuts[k].rhs);
        }
    }
    Err(Error::Numerical("row generation did not converge".into()))
}

/// Both directions of `|flow_l| <= limit` for every line in `lines`, with
/// the schedule at columns `offset..`. `shift` adds extra columns to the
/// flow (e.g. re-dispatch), given as (column, generator) pairs.
pub fn flow_cuts(
    fm: &FlowModel,
    lines: &[(usize, f64)],
    offset: usize,
    shift: &[(usize, usize)],
    tag: impl Fn(usize) -> usize,
) -> Vec<Cut> {
    let mut out = Vec::with_capacity(2 * lines.len());
    for &(l, limit) in lines {
        let mut row = fm.row(l, |g| offset + g);
        for &(col, gen) in shift {
            let v = fm.sens[(l, gen)];
            if v.abs() > SENS_DROP {
                row.push(col, v);
            }
        }
        let t = tag(l);
        out.push(Cut { row: row.clone(), rhs: limit - fm.base[l], tag: t });
        out.push(Cut { row: row.scaled(-1.0), rhs: limit + fm.base[l], tag: t });
    }
    out
}

/// Generators that offer reserve, in generator order.
pub fn reserve_providers(g: &GridModel) -> Vec<usize> {
    (0..g.generators.len()).filter(|&j| g.generators[j].offers_reserve()).collect()
}

/// Groups of two or more interchangeable generators: same bus, limits and
/// prices. Members are listed in generator order.
pub fn identical_groups(g: &GridModel) -> Vec<Vec<usize>> {
    let key = |j: usize| {
        let x = &g.generators[j];
        [
            x.p_min,
            x.p_max,
            x.cost_quadratic,
            x.cost_linear,
            x.reserve_down_max,
            x.reserve_up_max,
            x.proc_price_up,
            x.proc_price_down,
            x.op_price_up,
            x.op_price_down,
        ]
        .map(f64::to_bits)
    };
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for j in 0..g.generators.len() {
        match groups.iter_mut().find(|grp| g.generators[grp[0]].bus == g.generators[j].bus && key(grp[0]) == key(j)) {
            Some(grp) => grp.push(j),
            None => groups.push(vec![j]),
        }
    }
    groups.retain(|grp| grp.len() > 1);
    groups
}

/// Splits `total` (same sign as the caps) over units in order, each unit
/// taking as much as its cap allows before the next one gets any.
pub fn fill_in_order(total: f64, caps: &[f64]) -> Vec<f64> {
    let sign = if total < 0.0 { -1.0 } else { 1.0 };
    let mut left = total.abs();
    caps.iter()
        .map(|&c| {
            let take = left.min(c.abs());
            left -= take;
            sign * take
        })
        .collect()
}

/// Result of a plain DC-OPF.
#[derive(Debug, Clone)]
pub struct DispatchResult {
    pub p_gen: Vec<f64>,
    /// $/h including constant terms.
    pub cost: f64,
    pub flows: Vec<f64>,
}

/// DC-OPF with every line at its nominal limit, except DLR lines whose
/// limits are given in `dlr_limits_mw` (in DLR line order) when present.
pub fn dc_opf(g: &GridModel, ptdf: &PtdfMatrices, dlr_limits_mw: Option<&[f64]>) -> Result<DispatchResult> {
    let fm = FlowModel::new(g, ptdf);
    let ng = g.generators.len();
    let mut limits = fm.limits.clone();
    if let Some(d) = dlr_limits_mw {
        if d.len() != ptdf.dlr_line_index.len() {
            return Err(Error::InvalidInput("DLR limit count does not match DLR lines".into()));
        }
        for (&l, &v) in ptdf.dlr_line_index.iter().zip(d) {
            limits[l] = v;
        }
    }
    let mut prog = ConvexProgram::new(ng);
    add_dispatch(&mut prog, g, 0);
    let lines: Vec<(usize, f64)> = limits.iter().copied().enumerate().collect();
    let cuts = flow_cuts(&fm, &lines, 0, &[], |l| l);
    let out = solve_lazy(&prog, &cuts, |_| false)?;
    let sol = out.solution;
    match sol.status {
        Status::Optimal => {}
        Status::Infeasible => {
            let mut names: Vec<String> = out.infeasible_cuts.iter().map(|&k| g.lines[cuts[k].tag].id.clone()).collect();
            names.dedup();
            return Err(Error::Infeasible { reason: format!("dispatch cannot respect line limits {names:?}") });
        }
        s => return Err(Error::Numerical(format!("dispatch solve ended with {s:?}"))),
    }
    let p_gen = sol.x;
    Ok(DispatchResult { cost: g.dispatch_cost(&p_gen), flows: fm.flows(&p_gen), p_gen })
}

/// Cost of the dispatch with all lines at nominal ratings.
pub fn status_quo_cost(g: &GridModel, ptdf: &PtdfMatrices) -> Result<f64> {
    Ok(dc_opf(g, ptdf, None)?.cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{compute_ptdf, load_grid, GridModel};
    use approx::assert_abs_diff_eq;

    fn two_bus(limit: f64) -> GridModel {
        load_grid(&format!(
            r#"{{"slack_bus": 2, "buses": [1, 2],
            "lines": [{{"id": "1-2", "from_bus": 1, "to_bus": 2, "reactance": 0.1, "limit_mw": {limit}, "is_dlr": true}}],
            "generators": [
                {{"id": "g1", "bus": 1, "p_min": 0, "p_max": 400, "cost_quadratic": 0, "cost_linear": 10}},
                {{"id": "g2", "bus": 2, "p_min": 0, "p_max": 400, "cost_quadratic": 0, "cost_linear": 50}}
            ],
            "loads": [{{"bus": 2, "mw": 300}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn fill_prefers_low_index() {
        assert_eq!(fill_in_order(25.0, &[10.0, 10.0, 10.0]), vec![10.0, 10.0, 5.0]);
        assert_eq!(fill_in_order(-12.0, &[-10.0, -10.0]), vec![-10.0, -2.0]);
        assert_eq!(fill_in_order(0.0, &[5.0]), vec![0.0]);
    }

    #[test]
    fn rts96_identical_units() {
        let g = GridModel::rts96();
        let groups = identical_groups(&g);
        let u12: Vec<&String> = groups
            .iter()
            .find(|grp| g.generators[grp[0]].id == "115-U12-1")
            .unwrap()
            .iter()
            .map(|&j| &g.generators[j].id)
            .collect();
        assert_eq!(u12.len(), 5);
        assert!(groups.iter().all(|grp| grp.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn uncongested_uses_cheapest_unit() {
        let g = two_bus(500.0);
        let h = compute_ptdf(&g).unwrap();
        let r = dc_opf(&g, &h, None).unwrap();
        assert_abs_diff_eq!(r.p_gen[0], 300.0, epsilon = 1e-5);
        assert_abs_diff_eq!(r.cost, 3000.0, epsilon = 1e-3);
    }

    #[test]
    fn congested_line_pulls_in_expensive_unit() {
        let g = two_bus(250.0);
        let h = compute_ptdf(&g).unwrap();
        let r = dc_opf(&g, &h, None).unwrap();
        assert_abs_diff_eq!(r.p_gen[1], 50.0, epsilon = 1e-5);
        assert_abs_diff_eq!(status_quo_cost(&g, &h).unwrap(), 250.0 * 10.0 + 50.0 * 50.0, epsilon = 1e-3);
        let relaxed = dc_opf(&g, &h, Some(&[280.0])).unwrap();
        assert_abs_diff_eq!(relaxed.flows[0], 280.0, epsilon = 1e-5);
    }
}
