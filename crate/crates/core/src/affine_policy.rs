//! Decentralized corrective control with affine policies: each reserve
//! provider moves its setpoint by a fixed slope per MW of rating deficit
//! below a guaranteed capacity `y`.
//!
//! The robust constraints are enforced at the vertices of the polyhedral
//! rating set after splitting it along `delta_i = y_i`. On each piece the
//! deficit `max(0, y - delta)` is linear, so vertex enforcement covers the
//! whole polytope, including realizations where only some lines fall below
//! their guarantee.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::network::{GridModel, PtdfMatrices};
use crate::opf::{add_dispatch, reserve_providers, solve_lazy, Cut, FlowModel};
use crate::robust_dispatch::{cap_cuts, check_dims, realized_limits};
use crate::solver::{ConvexProgram, Status};
use crate::uncertainty::{truncated_deficit_expectation, EllipsoidSet, PolytopeSet, RatingForecast};

/// Upper bound on every policy slope, MW per MW of deficit. Keeps slopes
/// that carry no cost from drifting.
pub const MAX_SLOPE: f64 = 100.0;

/// Guarantees above `mu + Y_SIGMA_CAP * sd` are rejected.
pub const Y_SIGMA_CAP: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePolicy {
    pub generators: Vec<String>,
    pub dlr_lines: Vec<String>,
    /// generators × DLR lines, MW per MW of deficit; `d = d_up - d_dn`.
    pub d: Vec<Vec<f64>>,
    pub d_up: Vec<Vec<f64>>,
    pub d_dn: Vec<Vec<f64>>,
    /// Guaranteed capacity per DLR line, MW.
    pub y: Vec<f64>,
    /// MW per p.u. of rating, per DLR line.
    pub base_mw: Vec<f64>,
    /// Procured upward reserve per generator, MW >= 0.
    pub delta_up: Vec<f64>,
    /// Procured downward reserve per generator, MW <= 0.
    pub delta_dn: Vec<f64>,
}

impl AffinePolicy {
    /// Deficit `max(0, y - delta)` in MW for ratings in p.u.
    pub fn deficit(&self, delta: &[f64]) -> Vec<f64> {
        self.y.iter().zip(delta.iter().zip(&self.base_mw)).map(|(&y, (&d, &b))| (y - d * b).max(0.0)).collect()
    }

    /// Activation cost of the realization, using the split slopes.
    pub fn activation_cost(&self, g: &GridModel, delta: &[f64]) -> f64 {
        let def = self.deficit(delta);
        g.generators
            .iter()
            .enumerate()
            .map(|(j, x)| {
                def.iter()
                    .enumerate()
                    .map(|(i, &v)| (x.op_price_up * self.d_up[j][i] + x.op_price_down * self.d_dn[j][i]) * v)
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn procured_mw(&self) -> f64 {
        self.delta_up.iter().sum::<f64>() - self.delta_dn.iter().sum::<f64>()
    }
}

/// Setpoint changes in MW for ratings `delta_realized` in p.u.
pub fn policy_action(p: &AffinePolicy, delta_realized: &[f64]) -> Vec<f64> {
    let def = p.deficit(delta_realized);
    p.d.iter().map(|row| row.iter().zip(&def).map(|(a, b)| a * b).sum()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyProcurement {
    pub p_gen: Vec<f64>,
    pub policy: AffinePolicy,
    pub cost_dispatch: f64,
    pub cost_procurement: f64,
    pub cost_expected_operation: f64,
    /// Expected deficit per DLR line, MW.
    pub expected_deficit_mw: Vec<f64>,
}

impl PolicyProcurement {
    pub fn total_expected_cost(&self) -> f64 {
        self.cost_dispatch + self.cost_procurement + self.cost_expected_operation
    }

    pub fn procured_mw(&self) -> f64 {
        self.policy.procured_mw()
    }
}

/// Inputs shared by the candidate evaluations of one forecast.
#[derive(Debug, Clone)]
pub struct AffineSetup<'a> {
    pub grid: &'a GridModel,
    pub ptdf: &'a PtdfMatrices,
    pub forecast: &'a RatingForecast,
    pub polytope: &'a PolytopeSet,
    /// Caps on the scheduled DLR flows, MW.
    pub flow_caps_mw: Option<Vec<f64>>,
}

/// Procurement with the guarantee `y` (MW per DLR line).
///
/// `e_set` supplies the forecast moments; `polytope` must be its outer
/// approximation.
pub fn procure_affine(
    g: &GridModel,
    ptdf: &PtdfMatrices,
    e_set: &EllipsoidSet,
    polytope: &PolytopeSet,
    y: &[f64],
) -> Result<PolicyProcurement> {
    let f = forecast_of(e_set)?;
    let setup = AffineSetup { grid: g, ptdf, forecast: &f, polytope, flow_caps_mw: None };
    procure_affine_with(&setup, y)
}

/// Forecast with the moments of an ellipsoid.
pub fn forecast_of(e: &EllipsoidSet) -> Result<RatingForecast> {
    let s = &e.b * e.b.transpose();
    let k = e.dim();
    let sigma = (0..k).map(|i| (0..k).map(|j| s[(i, j)]).collect()).collect();
    RatingForecast::new(e.mu.clone(), sigma, 0.0)
}

pub fn procure_affine_with(setup: &AffineSetup<'_>, y: &[f64]) -> Result<PolicyProcurement> {
    let g = setup.grid;
    let ptdf = setup.ptdf;
    let f = setup.forecast;
    let k = f.dim();
    check_dims(ptdf, k)?;
    if setup.polytope.dim() != k || y.len() != k {
        return Err(invalid("forecast, polytope and guarantee dimensions differ"));
    }
    let base: Vec<f64> = g.dlr_base_mw();
    let sd = f.sd();
    for i in 0..k {
        let bound = (f.mu[i] + Y_SIGMA_CAP * sd[i]) * base[i];
        if !(y[i] >= 0.0) || y[i] > bound * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "guarantee {} MW on line {} must lie in [0, {bound:.3}] MW",
                y[i], ptdf.dlr_line_index[i]
            )));
        }
    }
    let y_pu: Vec<f64> = y.iter().zip(&base).map(|(a, b)| a / b).collect();
    let e_pu = truncated_deficit_expectation(f, &y_pu)?;
    let e_mw: Vec<f64> = e_pu.iter().zip(&base).map(|(a, b)| a * b).collect();

    // Realizations to enforce: every vertex of every piece, with the
    // deficit that applies there.
    let mut scenarios: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for cell in setup.polytope.cells(&y_pu)? {
        for v in cell.vertices {
            let d: Vec<f64> =
                (0..k).map(|i| if cell.deficit[i] { (y[i] - v[i] * base[i]).max(0.0) } else { 0.0 }).collect();
            let dup = scenarios.iter().any(|(dv, dd)| {
                dv.iter().zip(&v).all(|(a, b)| (a - b).abs() <= 1e-9)
                    && dd.iter().zip(&d).all(|(a, b)| (a - b).abs() <= 1e-6)
            });
            if !dup {
                scenarios.push((v, d));
            }
        }
    }

    let ng = g.generators.len();
    let prov = reserve_providers(g);
    let nr = prov.len();
    let du = |r: usize, i: usize| ng + r * k + i;
    let dd = |r: usize, i: usize| ng + nr * k + r * k + i;
    let dn0 = ng + 2 * nr * k;
    let up0 = dn0 + nr;
    let n = up0 + nr;

    let mut prog = ConvexProgram::new(n);
    add_dispatch(&mut prog, g, 0);
    for (r, &j) in prov.iter().enumerate() {
        let x = &g.generators[j];
        prog.set_bounds(dn0 + r, x.reserve_down_max, 0.0);
        prog.set_bounds(up0 + r, 0.0, x.reserve_up_max);
        prog.add_linear(dn0 + r, -x.proc_price_down);
        prog.add_linear(up0 + r, x.proc_price_up);
        for i in 0..k {
            prog.set_bounds(du(r, i), 0.0, MAX_SLOPE);
            prog.set_bounds(dd(r, i), 0.0, MAX_SLOPE);
            prog.add_linear(du(r, i), x.op_price_up * e_mw[i]);
            prog.add_linear(dd(r, i), x.op_price_down * e_mw[i]);
        }
    }
    for i in 0..k {
        prog.add_eq((0..nr).flat_map(|r| [(du(r, i), 1.0), (dd(r, i), -1.0)]), 0.0);
    }

    let fm = FlowModel::new(g, ptdf);
    let nl = g.lines.len();
    let mut cuts: Vec<Cut> = Vec::new();
    for (s, (v, d)) in scenarios.iter().enumerate() {
        let active: Vec<usize> = (0..k).filter(|&i| d[i] > 0.0).collect();
        // dn_r <= sum_i D[r,i] d_i <= up_r
        if !active.is_empty() {
            for r in 0..nr {
                let mut act: Vec<(usize, f64)> = Vec::with_capacity(2 * active.len() + 1);
                for &i in &active {
                    act.push((du(r, i), d[i]));
                    act.push((dd(r, i), -d[i]));
                }
                let mut upper = act.clone();
                upper.push((up0 + r, -1.0));
                prog.add_le(upper, 0.0);
                let mut lower: Vec<(usize, f64)> = act.iter().map(|&(c, v)| (c, -v)).collect();
                lower.push((dn0 + r, 1.0));
                prog.add_le(lower, 0.0);
            }
        }
        let lim = realized_limits(g, ptdf, v);
        for (l, &limit) in lim.iter().enumerate() {
            let mut row = fm.row(l, |j| j);
            for (r, &j) in prov.iter().enumerate() {
                let sv = fm.sens[(l, j)];
                if sv.abs() <= 1e-10 {
                    continue;
                }
                for &i in &active {
                    row.push(du(r, i), sv * d[i]);
                    row.push(dd(r, i), -sv * d[i]);
                }
            }
            let tag = s * nl + l;
            cuts.push(Cut { rhs: limit - fm.base[l], row: row.clone(), tag });
            cuts.push(Cut { rhs: limit + fm.base[l], row: row.scaled(-1.0), tag });
        }
    }
    let cap_tag = scenarios.len() * nl;
    cuts.extend(cap_cuts(ptdf, &fm, setup.flow_caps_mw.as_deref(), cap_tag)?);

    let dlr = ptdf.dlr_line_index.clone();
    let out = solve_lazy(&prog, &cuts, |c| dlr.contains(&(c.tag % nl)))?;
    let sol = out.solution;
    match sol.status {
        Status::Optimal => {}
        Status::Infeasible => {
            let mut lines: Vec<String> =
                out.infeasible_cuts.iter().map(|&c| g.lines[cuts[c].tag % nl].id.clone()).collect();
            if lines.is_empty() {
                // Only reserve rows conflict: name the lines with a deficit.
                let lower = setup.polytope.lower_corner();
                lines = (0..k)
                    .filter(|&i| y[i] > lower[i] * base[i])
                    .map(|i| g.lines[ptdf.dlr_line_index[i]].id.clone())
                    .collect();
            }
            lines.sort();
            lines.dedup();
            return Err(Error::InfeasibleGuarantee { lines });
        }
        s => return Err(Error::Numerical(format!("policy procurement ended with {s:?}"))),
    }
    let x = sol.x;
    let clean = |v: f64| if v.abs() < 1e-7 { 0.0 } else { v };
    let clean_slope = |v: f64| if v.abs() < 1e-9 { 0.0 } else { v };
    let mut d_up = vec![vec![0.0; k]; ng];
    let mut d_dn = vec![vec![0.0; k]; ng];
    let mut delta_up = vec![0.0; ng];
    let mut delta_dn = vec![0.0; ng];
    for (r, &j) in prov.iter().enumerate() {
        for i in 0..k {
            d_up[j][i] = clean_slope(x[du(r, i)]);
            d_dn[j][i] = clean_slope(x[dd(r, i)]);
        }
        delta_up[j] = clean(x[up0 + r]);
        delta_dn[j] = clean(x[dn0 + r]);
    }
    let d: Vec<Vec<f64>> = d_up.iter().zip(&d_dn).map(|(u, v)| u.iter().zip(v).map(|(a, b)| a - b).collect()).collect();
    let p_gen = x[..ng].to_vec();
    let cost_procurement = g
        .generators
        .iter()
        .enumerate()
        .map(|(j, gen)| gen.proc_price_up * delta_up[j] - gen.proc_price_down * delta_dn[j])
        .sum();
    let cost_expected_operation = g
        .generators
        .iter()
        .enumerate()
        .map(|(j, gen)| {
            (0..k).map(|i| (gen.op_price_up * d_up[j][i] + gen.op_price_down * d_dn[j][i]) * e_mw[i]).sum::<f64>()
        })
        .sum();
    Ok(PolicyProcurement {
        cost_dispatch: g.dispatch_cost(&p_gen),
        p_gen,
        policy: AffinePolicy {
            generators: g.generators.iter().map(|x| x.id.clone()).collect(),
            dlr_lines: g.dlr_line_ids(),
            d,
            d_up,
            d_dn,
            y: y.to_vec(),
            base_mw: base,
            delta_up,
            delta_dn,
        },
        cost_procurement,
        cost_expected_operation,
        expected_deficit_mw: e_mw,
    })
}

/// Evaluates every candidate guarantee and keeps the one with the lowest
/// expected total cost. Ties go to the lexicographically smallest `y`.
pub fn select_y(setup: &AffineSetup<'_>, y_grid: &[Vec<f64>]) -> Result<(Vec<f64>, PolicyProcurement)> {
    if y_grid.is_empty() {
        return Err(invalid("empty guarantee grid"));
    }
    let results: Vec<Result<PolicyProcurement>> = y_grid.par_iter().map(|y| procure_affine_with(setup, y)).collect();
    let mut best: Option<(usize, PolicyProcurement)> = None;
    let mut last_err = None;
    for (c, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => {
                let better = match &best {
                    None => true,
                    Some((b, bp)) => {
                        let (t, bt) = (p.total_expected_cost(), bp.total_expected_cost());
                        let tol = 1e-9 * (1.0 + bt.abs());
                        t < bt - tol || ((t - bt).abs() <= tol && lex_less(&y_grid[c], &y_grid[*b]))
                    }
                };
                if better {
                    best = Some((c, p));
                }
            }
            Err(e) if e.is_infeasible() => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((c, p)) => Ok((y_grid[c].clone(), p)),
        None => Err(Error::Infeasible {
            reason: format!(
                "no guarantee candidate is feasible; last error: {}",
                last_err.map_or_else(String::new, |e| e.to_string())
            ),
        }),
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Candidate guarantees: per line, `levels` evenly spaced ratings from
/// `lo_pu` to `mu + sd` (p.u.), combined over all lines.
pub fn default_y_grid(f: &RatingForecast, base_mw: &[f64], lo_pu: f64, levels: usize) -> Vec<Vec<f64>> {
    let sd = f.sd();
    let per_line: Vec<Vec<f64>> = (0..f.dim())
        .map(|i| {
            let hi = f.mu[i] + sd[i];
            if levels <= 1 || hi <= lo_pu {
                return vec![hi.min(lo_pu.max(hi)) * base_mw[i]];
            }
            (0..levels).map(|t| (lo_pu + (hi - lo_pu) * t as f64 / (levels - 1) as f64) * base_mw[i]).collect()
        })
        .collect();
    let mut grid: Vec<Vec<f64>> = vec![Vec::new()];
    for vals in &per_line {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                vals.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    grid
}

/// One row per generator and DLR line: the slope and threshold a
/// reserve provider needs to act on its own.
pub fn write_policy_csv<W: std::io::Write>(p: &AffinePolicy, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["generator", "dlr_line", "slope_mw_per_mw", "threshold_mw", "reserve_down_mw", "reserve_up_mw"])?;
    for (j, gen) in p.generators.iter().enumerate() {
        for (i, line) in p.dlr_lines.iter().enumerate() {
            if p.d[j][i] == 0.0 {
                continue;
            }
            w.write_record([
                gen.clone(),
                line.clone(),
                format!("{:.9}", p.d[j][i]),
                format!("{:.6}", p.y[i]),
                format!("{:.6}", p.delta_dn[j]),
                format!("{:.6}", p.delta_up[j]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sum of each column of `D`; zero for a balanced policy.
pub fn column_sums(p: &AffinePolicy) -> Vec<f64> {
    let k = p.y.len();
    (0..k).map(|i| p.d.iter().map(|row| row[i]).sum()).collect()
}
