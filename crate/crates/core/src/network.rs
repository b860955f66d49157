//! Grid model, DC power-flow sensitivities (PTDF) and line flows.
//!
//! Grids are read from a JSON document with the sections `buses`, `lines`,
//! `generators` and `loads`; see the README for the field list. Flows are
//! signed from `from_bus` to `to_bus`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thermal::LineRatingSpec;

const RTS96_TWO_AREA: &str = include_str!("../data/rts96_two_area.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub from_bus: u32,
    pub to_bus: u32,
    /// Series reactance in p.u.
    pub reactance: f64,
    /// Nominal flow limit in MW.
    pub limit_mw: f64,
    #[serde(default)]
    pub is_dlr: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<LineRatingSpec>,
}

impl Line {
    /// MW corresponding to a rating of 1 p.u.
    pub fn base_mw(&self) -> f64 {
        self.rating.map_or(self.limit_mw, |r| r.nominal_rating_mw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub bus: u32,
    pub p_min: f64,
    pub p_max: f64,
    /// $/MW²h
    pub cost_quadratic: f64,
    /// $/MWh
    pub cost_linear: f64,
    /// $/h, only shifts reported costs.
    #[serde(default)]
    pub cost_constant: f64,
    /// Largest downward reserve that can be procured, MW, nonpositive.
    #[serde(default)]
    pub reserve_down_max: f64,
    /// Largest upward reserve that can be procured, MW, nonnegative.
    #[serde(default)]
    pub reserve_up_max: f64,
    /// $/MW
    #[serde(default)]
    pub proc_price_up: f64,
    /// $/MW
    #[serde(default)]
    pub proc_price_down: f64,
    /// $/MWh
    #[serde(default)]
    pub op_price_up: f64,
    /// $/MWh
    #[serde(default)]
    pub op_price_down: f64,
}

impl Generator {
    pub fn offers_reserve(&self) -> bool {
        self.reserve_up_max > 0.0 || self.reserve_down_max < 0.0
    }

    pub fn dispatch_cost(&self, p: f64) -> f64 {
        self.cost_quadratic * p * p + self.cost_linear * p + self.cost_constant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: u32,
    pub mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    #[serde(default)]
    pub name: String,
    pub slack_bus: u32,
    pub buses: Vec<u32>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

/// Parses and validates a grid document.
pub fn load_grid(source: &str) -> Result<GridModel> {
    let grid: GridModel = serde_json::from_str(source).map_err(|e| Error::Schema(e.to_string()))?;
    grid.validate()?;
    Ok(grid)
}

pub fn load_grid_file(path: impl AsRef<Path>) -> Result<GridModel> {
    load_grid(&std::fs::read_to_string(path)?)
}

impl GridModel {
    /// The bundled two-area RTS-96 system at peak load, with dynamic
    /// ratings on lines 214-216 and 216-219.
    pub fn rts96() -> GridModel {
        load_grid(RTS96_TWO_AREA).expect("bundled grid is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for &b in &self.buses {
            if !seen.insert(b) {
                return Err(Error::DuplicateId(format!("bus {b}")));
            }
        }
        if !seen.contains(&self.slack_bus) {
            return Err(Error::Schema(format!("slack bus {} is not a bus", self.slack_bus)));
        }
        let known = |b: u32, what: &str| -> Result<()> {
            if seen.contains(&b) {
                Ok(())
            } else {
                Err(Error::Schema(format!("{what} refers to unknown bus {b}")))
            }
        };

        let mut ids = HashSet::new();
        for l in &self.lines {
            if !ids.insert(l.id.as_str()) {
                return Err(Error::DuplicateId(format!("line {}", l.id)));
            }
            known(l.from_bus, &format!("line {}", l.id))?;
            known(l.to_bus, &format!("line {}", l.id))?;
            if l.from_bus == l.to_bus {
                return Err(Error::Schema(format!("line {} is a self-loop", l.id)));
            }
            if !(l.reactance > 0.0) || !l.reactance.is_finite() {
                return Err(Error::Schema(format!("line {} must have positive reactance", l.id)));
            }
            if !(l.limit_mw > 0.0) {
                return Err(Error::Schema(format!("line {} must have a positive limit", l.id)));
            }
            if let Some(r) = &l.rating {
                r.validate()?;
                if (r.nominal_rating_mw - l.limit_mw).abs() > 0.005 * l.limit_mw {
                    return Err(Error::Schema(format!("line {} limit disagrees with its rating spec", l.id)));
                }
            }
        }

        let mut gen_ids = HashSet::new();
        for g in &self.generators {
            if !gen_ids.insert(g.id.as_str()) {
                return Err(Error::DuplicateId(format!("generator {}", g.id)));
            }
            known(g.bus, &format!("generator {}", g.id))?;
            if !(g.p_min <= g.p_max) {
                return Err(Error::Schema(format!("generator {} has p_min > p_max", g.id)));
            }
            let prices = [g.cost_quadratic, g.proc_price_up, g.proc_price_down, g.op_price_up, g.op_price_down];
            if prices.iter().any(|&p| !(p >= 0.0)) || !g.cost_linear.is_finite() {
                return Err(Error::Schema(format!("generator {} has a negative or invalid price", g.id)));
            }
            if !(g.reserve_down_max <= 0.0) || !(g.reserve_up_max >= 0.0) {
                return Err(Error::Schema(format!("generator {} reserve caps must satisfy down <= 0 <= up", g.id)));
            }
        }
        for d in &self.loads {
            known(d.bus, "load")?;
            if !d.mw.is_finite() {
                return Err(Error::Schema("load must be finite".into()));
            }
        }
        let capacity: f64 = self.generators.iter().map(|g| g.p_max).sum();
        if capacity < self.total_load() {
            return Err(Error::Schema(format!(
                "generation capacity {capacity} MW is below load {} MW",
                self.total_load()
            )));
        }

        // Connectivity from the slack.
        let index = self.bus_index();
        let mut adj = vec![Vec::new(); self.buses.len()];
        for l in &self.lines {
            let (a, b) = (index[&l.from_bus], index[&l.to_bus]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut reached = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([index[&self.slack_bus]]);
        reached[index[&self.slack_bus]] = true;
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !reached[u] {
                    reached[u] = true;
                    queue.push_back(u);
                }
            }
        }
        if let Some(k) = reached.iter().position(|r| !r) {
            return Err(Error::Disconnected(self.buses[k]));
        }
        Ok(())
    }

    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(k, &b)| (b, k)).collect()
    }

    pub fn total_load(&self) -> f64 {
        self.loads.iter().map(|d| d.mw).sum()
    }

    /// Load per bus in MW, in bus order.
    pub fn load_vector(&self) -> Vec<f64> {
        let index = self.bus_index();
        let mut v = vec![0.0; self.buses.len()];
        for d in &self.loads {
            v[index[&d.bus]] += d.mw;
        }
        v
    }

    /// Same grid with every load multiplied by `factor`.
    pub fn with_load_scale(&self, factor: f64) -> GridModel {
        let mut g = self.clone();
        for d in &mut g.loads {
            d.mw *= factor;
        }
        g
    }

    /// Indices of lines with dynamic ratings, in line order.
    pub fn dlr_lines(&self) -> Vec<usize> {
        (0..self.lines.len()).filter(|&l| self.lines[l].is_dlr).collect()
    }

    pub fn nlr_lines(&self) -> Vec<usize> {
        (0..self.lines.len()).filter(|&l| !self.lines[l].is_dlr).collect()
    }

    pub fn dlr_line_ids(&self) -> Vec<String> {
        self.dlr_lines().into_iter().map(|l| self.lines[l].id.clone()).collect()
    }

    /// MW per p.u. of rating for each DLR line.
    pub fn dlr_base_mw(&self) -> Vec<f64> {
        self.dlr_lines().into_iter().map(|l| self.lines[l].base_mw()).collect()
    }

    pub fn line_index(&self, id: &str) -> Option<usize> {
        self.lines.iter().position(|l| l.id == id)
    }

    /// Net injection per bus for a generator schedule.
    pub fn injections(&self, p_gen: &[f64]) -> Vec<f64> {
        let index = self.bus_index();
        let mut inj: Vec<f64> = self.load_vector().into_iter().map(|d| -d).collect();
        for (g, &p) in self.generators.iter().zip(p_gen) {
            inj[index[&g.bus]] += p;
        }
        inj
    }

    pub fn dispatch_cost(&self, p_gen: &[f64]) -> f64 {
        self.generators.iter().zip(p_gen).map(|(g, &p)| g.dispatch_cost(p)).sum()
    }
}

/// DC power-flow sensitivities of line flows to bus injections, with the
/// slack bus absorbing the balance.
#[derive(Debug, Clone, PartialEq)]
pub struct PtdfMatrices {
    /// lines × buses
    pub h_full: DMatrix<f64>,
    /// Rows of `h_full` for DLR lines, in `dlr_line_index` order.
    pub h_dlr: DMatrix<f64>,
    pub h_nlr: DMatrix<f64>,
    pub dlr_line_index: Vec<usize>,
    pub nlr_line_index: Vec<usize>,
}

pub fn compute_ptdf(g: &GridModel) -> Result<PtdfMatrices> {
    let nb = g.buses.len();
    let nl = g.lines.len();
    let index = g.bus_index();
    let slack = *index.get(&g.slack_bus).ok_or_else(|| Error::Schema("slack bus missing".into()))?;

    let mut bbus = DMatrix::<f64>::zeros(nb, nb);
    for l in &g.lines {
        let (a, b) = (index[&l.from_bus], index[&l.to_bus]);
        let y = 1.0 / l.reactance;
        bbus[(a, a)] += y;
        bbus[(b, b)] += y;
        bbus[(a, b)] -= y;
        bbus[(b, a)] -= y;
    }
    let keep: Vec<usize> = (0..nb).filter(|&k| k != slack).collect();
    let reduced = bbus.select_rows(&keep).select_columns(&keep);
    let lu = reduced.lu();
    let inv = lu.try_inverse().ok_or_else(|| Error::Numerical("singular reduced susceptance matrix".into()))?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("singular reduced susceptance matrix".into()));
    }

    // Angles per unit injection, zero at the slack.
    let mut theta = DMatrix::<f64>::zeros(nb, nb);
    for (ri, &r) in keep.iter().enumerate() {
        for (ci, &c) in keep.iter().enumerate() {
            theta[(r, c)] = inv[(ri, ci)];
        }
    }
    let mut h_full = DMatrix::<f64>::zeros(nl, nb);
    for (k, l) in g.lines.iter().enumerate() {
        let (a, b) = (index[&l.from_bus], index[&l.to_bus]);
        let y = 1.0 / l.reactance;
        for c in 0..nb {
            h_full[(k, c)] = y * (theta[(a, c)] - theta[(b, c)]);
        }
    }
    let dlr = g.dlr_lines();
    let nlr = g.nlr_lines();
    Ok(PtdfMatrices {
        h_dlr: h_full.select_rows(&dlr),
        h_nlr: h_full.select_rows(&nlr),
        h_full,
        dlr_line_index: dlr,
        nlr_line_index: nlr,
    })
}

/// Tolerance on the net injection, relative to total load.
pub const BALANCE_TOL: f64 = 1e-6;

/// Line flows in MW for bus injections in MW (bus order).
pub fn flows(g: &GridModel, ptdf: &PtdfMatrices, injections: &[f64]) -> Result<Vec<f64>> {
    if injections.len() != g.buses.len() {
        return Err(Error::InvalidInput(format!("expected {} injections, got {}", g.buses.len(), injections.len())));
    }
    let imbalance: f64 = injections.iter().sum();
    let tolerance = BALANCE_TOL * g.total_load().abs().max(1.0);
    if imbalance.abs() > tolerance {
        return Err(Error::Imbalance { imbalance, tolerance });
    }
    let h = &ptdf.h_full;
    Ok((0..h.nrows()).map(|l| (0..h.ncols()).map(|b| h[(l, b)] * injections[b]).sum()).collect())
}

/// Flow sensitivity of every line to every generator (lines × generators).
pub fn generator_sensitivity(g: &GridModel, ptdf: &PtdfMatrices) -> DMatrix<f64> {
    let index = g.bus_index();
    let cols: Vec<usize> = g.generators.iter().map(|gen| index[&gen.bus]).collect();
    ptdf.h_full.select_columns(&cols)
}

/// Flows caused by the loads alone (negative injections), MW per line.
pub fn load_flows(g: &GridModel, ptdf: &PtdfMatrices) -> Vec<f64> {
    let loads = g.load_vector();
    let h = &ptdf.h_full;
    (0..h.nrows()).map(|l| -(0..h.ncols()).map(|b| h[(l, b)] * loads[b]).sum::<f64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn two_bus() -> GridModel {
        load_grid(
            r#"{
            "slack_bus": 2,
            "buses": [1, 2],
            "lines": [{"id": "1-2", "from_bus": 1, "to_bus": 2, "reactance": 0.1, "limit_mw": 250}],
            "generators": [
                {"id": "g1", "bus": 1, "p_min": 0, "p_max": 400, "cost_quadratic": 0, "cost_linear": 10},
                {"id": "g2", "bus": 2, "p_min": 0, "p_max": 400, "cost_quadratic": 0, "cost_linear": 50}
            ],
            "loads": [{"bus": 2, "mw": 300}]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn two_bus_ptdf_and_flows() {
        let g = two_bus();
        assert_eq!(g.lines.len(), 1);
        let h = compute_ptdf(&g).unwrap();
        assert_abs_diff_eq!(h.h_full[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.h_full[(0, 1)], 0.0, epsilon = 1e-12);
        let f = flows(&g, &h, &[100.0, -100.0]).unwrap();
        assert_abs_diff_eq!(f[0], 100.0, epsilon = 1e-9);
        assert_eq!(flows(&g, &h, &[0.0, 0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn imbalance_is_rejected() {
        let g = two_bus();
        let h = compute_ptdf(&g).unwrap();
        assert!(matches!(flows(&g, &h, &[100.0, -90.0]), Err(Error::Imbalance { .. })));
    }

    #[test]
    fn three_bus_ring_split() {
        let g = load_grid(
            r#"{
            "slack_bus": 3,
            "buses": [1, 2, 3],
            "lines": [
                {"id": "1-2", "from_bus": 1, "to_bus": 2, "reactance": 0.1, "limit_mw": 100},
                {"id": "2-3", "from_bus": 2, "to_bus": 3, "reactance": 0.1, "limit_mw": 100},
                {"id": "1-3", "from_bus": 1, "to_bus": 3, "reactance": 0.1, "limit_mw": 100}
            ],
            "generators": [{"id": "g", "bus": 1, "p_min": 0, "p_max": 10, "cost_quadratic": 0, "cost_linear": 1}],
            "loads": []
        }"#,
        )
        .unwrap();
        let h = compute_ptdf(&g).unwrap();
        // Direct path carries 2/3, the two-hop path 1/3.
        assert_abs_diff_eq!(h.h_full[(2, 0)], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.h_full[(0, 0)], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.h_full[(1, 0)], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn schema_violations() {
        let zero_x = r#"{"slack_bus": 1, "buses": [1, 2],
            "lines": [{"id": "a", "from_bus": 1, "to_bus": 2, "reactance": 0.0, "limit_mw": 1}],
            "generators": [], "loads": []}"#;
        assert!(matches!(load_grid(zero_x), Err(Error::Schema(_))));

        let islanded = r#"{"slack_bus": 1, "buses": [1, 2, 3],
            "lines": [{"id": "a", "from_bus": 1, "to_bus": 2, "reactance": 0.1, "limit_mw": 1}],
            "generators": [], "loads": []}"#;
        assert!(matches!(load_grid(islanded), Err(Error::Disconnected(3))));

        let dup = r#"{"slack_bus": 1, "buses": [1, 2],
            "lines": [{"id": "a", "from_bus": 1, "to_bus": 2, "reactance": 0.1, "limit_mw": 1},
                      {"id": "a", "from_bus": 1, "to_bus": 2, "reactance": 0.1, "limit_mw": 1}],
            "generators": [], "loads": []}"#;
        assert!(matches!(load_grid(dup), Err(Error::DuplicateId(_))));

        assert!(matches!(load_grid("{\"buses\": 3}"), Err(Error::Schema(_))));
    }

    #[test]
    fn bundled_rts96() {
        let g = GridModel::rts96();
        assert_eq!(g.buses.len(), 48);
        assert_eq!(g.dlr_line_ids(), vec!["214-216".to_string(), "216-219".to_string()]);
        for l in g.dlr_lines() {
            assert_eq!(g.lines[l].limit_mw, 250.0);
            assert!(g.lines[l].rating.is_some());
        }
        assert_eq!(g.dlr_base_mw(), vec![250.0, 250.0]);
    }
}
