//! Run manifests: every input path and parameter of an `evaluate` or
//! `sweep` run, written next to the outputs so the run can be repeated.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dlr_core::evaluation::{self, Approach, Procurement, ScenarioConfig};
use dlr_core::network::{compute_ptdf, load_grid_file, GridModel, PtdfMatrices};
use dlr_core::uncertainty::RatingForecast;
use dlr_core::{affine_policy, io};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    FlowLimits,
    MuSigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: SweepKind,
    /// Candidate caps per DLR line, MW; the grid is their product.
    #[serde(default)]
    pub caps: Vec<Vec<f64>>,
    #[serde(default)]
    pub mu_grid: Vec<f64>,
    #[serde(default)]
    pub sigma_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Grid JSON; the bundled RTS-96 case when absent.
    #[serde(default)]
    pub grid: Option<PathBuf>,
    /// Forecast JSON; otherwise built from `mu`, `sigma`, `lead_time`.
    #[serde(default)]
    pub forecast: Option<PathBuf>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_lead_time")]
    pub lead_time: f64,
    /// Conductor and weather files, used by `rate`.
    #[serde(default)]
    pub conductor: Option<PathBuf>,
    #[serde(default)]
    pub weather: Option<PathBuf>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_approach")]
    pub approach: Approach,
    /// Guarantee candidates for approach II, MW per DLR line.
    #[serde(default)]
    pub y_grid: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_y_levels")]
    pub y_levels: usize,
    #[serde(default = "default_facets")]
    pub facets: usize,
    #[serde(default)]
    pub flow_caps_mw: Option<Vec<f64>>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub sample_count: usize,
    #[serde(default = "default_penalty")]
    pub penalty_price: f64,
    /// Stored procurements to evaluate instead of procuring afresh.
    #[serde(default)]
    pub procurements: Vec<PathBuf>,
    /// Also produce the six-column comparison table.
    #[serde(default)]
    pub table: bool,
    /// σ of the 24 h forecast in the table; twice `sigma` when absent.
    #[serde(default)]
    pub sigma_long: Option<f64>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub emit_plot_data: bool,
    pub output_dir: PathBuf,
}

fn default_lead_time() -> f64 {
    3.0
}
fn default_gamma() -> f64 {
    0.95
}
fn default_approach() -> Approach {
    Approach::Both
}
fn default_y_levels() -> usize {
    7
}
fn default_facets() -> usize {
    8
}
fn default_seed() -> u64 {
    1
}
fn default_samples() -> usize {
    1000
}
fn default_penalty() -> f64 {
    1000.0
}

impl RunManifest {
    pub fn new(output_dir: PathBuf) -> Self {
        RunManifest {
            grid: None,
            forecast: None,
            mu: None,
            sigma: None,
            lead_time: default_lead_time(),
            conductor: None,
            weather: None,
            gamma: default_gamma(),
            alpha: 0.0,
            approach: default_approach(),
            y_grid: None,
            y_levels: default_y_levels(),
            facets: default_facets(),
            flow_caps_mw: None,
            seed: default_seed(),
            sample_count: default_samples(),
            penalty_price: default_penalty(),
            procurements: Vec::new(),
            table: false,
            sigma_long: None,
            sweep: None,
            emit_plot_data: false,
            output_dir,
        }
    }

    /// Reads a manifest; relative paths inside it are taken relative to
    /// the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut m: RunManifest =
            serde_json::from_str(&text).map_err(|e| dlr_core::Error::Schema(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut m.grid);
        fix(&mut m.forecast);
        fix(&mut m.conductor);
        fix(&mut m.weather);
        for p in &mut m.procurements {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if m.output_dir.is_relative() {
            m.output_dir = base.join(&m.output_dir);
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let opt = [&self.grid, &self.forecast, &self.conductor, &self.weather].into_iter().flatten();
        for p in opt.chain(&self.procurements) {
            if !p.is_file() {
                return Err(dlr_core::Error::InvalidInput(format!("input file {} does not exist", p.display())).into());
            }
        }
        let bad = |m: &str| -> Result<()> { Err(dlr_core::Error::InvalidInput(m.to_string()).into()) };
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be nonnegative");
        }
        if self.sample_count == 0 {
            return bad("sample count must be at least 1");
        }
        if self.facets < 3 {
            return bad("at least 3 facets per coordinate pair are needed");
        }
        if self.y_levels == 0 {
            return bad("y_levels must be at least 1");
        }
        if self.forecast.is_none() && (self.mu.is_none() || self.sigma.is_none()) {
            return bad("give a forecast file or both mu and sigma");
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridModel> {
        Ok(match &self.grid {
            Some(p) => load_grid_file(p)?,
            None => GridModel::rts96(),
        })
    }

    pub fn forecast(&self, g: &GridModel) -> Result<RatingForecast> {
        let k = g.dlr_lines().len();
        let f = match &self.forecast {
            Some(p) => io::read_forecast(p)?,
            None => {
                let (mu, sd) = (self.mu.unwrap_or(1.5), self.sigma.unwrap_or(0.1));
                RatingForecast::independent(vec![mu; k], &vec![sd; k], self.lead_time)?.with_lines(g.dlr_line_ids())
            }
        };
        check_lines(g, &f)?;
        Ok(f)
    }

    pub fn scenario(&self, f: RatingForecast) -> ScenarioConfig {
        let mut c = ScenarioConfig::new(f, self.gamma, self.alpha, self.approach);
        c.flow_caps_mw = self.flow_caps_mw.clone();
        c.sample_count = self.sample_count;
        c.seed = self.seed;
        c.facets = self.facets;
        c.y_levels = self.y_levels;
        c.penalty_price = self.penalty_price;
        c
    }

    /// Writes the manifest with absolute input paths.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut m = self.clone();
        let opt = [&mut m.grid, &mut m.forecast, &mut m.conductor, &mut m.weather].into_iter().flatten();
        for p in opt.chain(m.procurements.iter_mut()) {
            if let Ok(abs) = std::fs::canonicalize(&*p) {
                *p = abs;
            }
        }
        m.output_dir = PathBuf::from(".");
        let mut f = BufWriter::new(File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut f, &m)?;
        writeln!(f)?;
        Ok(())
    }
}

/// The forecast must name the grid's DLR lines in order, when it names any.
pub fn check_lines(g: &GridModel, f: &RatingForecast) -> Result<()> {
    let ids = g.dlr_line_ids();
    if f.dim() != ids.len() {
        return Err(dlr_core::Error::InvalidInput(format!(
            "forecast has {} lines but the grid has {} DLR lines",
            f.dim(),
            ids.len()
        ))
        .into());
    }
    if !f.lines.is_empty() && f.lines != ids {
        return Err(dlr_core::Error::InvalidInput(format!(
            "forecast lines {:?} do not match the grid's DLR lines {:?}",
            f.lines, ids
        ))
        .into());
    }
    Ok(())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let probe = dir.join(".write-test");
    File::create(&probe).map_err(|e| {
        dlr_core::Error::InvalidInput(format!("output directory {} is not writable: {e}", dir.display()))
    })?;
    let _ = std::fs::remove_file(probe);
    Ok(())
}

pub fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let p = dir.join(name);
    Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
}

fn approach_tag(a: Approach) -> &'static str {
    match a {
        Approach::I => "I",
        Approach::II => "II",
        Approach::Both => "both",
    }
}

/// Procures and writes `procurement_<approach>.json` plus, for approach II,
/// `policy.csv`. Returns the procurements in order I, II.
pub fn run_procure(m: &RunManifest) -> Result<Vec<Procurement>> {
    m.validate()?;
    let g = m.grid()?;
    let h = compute_ptdf(&g)?;
    let f = m.forecast(&g)?;
    let cfg = m.scenario(f);
    create_dir(&m.output_dir)?;
    let procs = procure_with_grid(&g, &h, &cfg, m.y_grid.as_deref())?;
    for p in &procs {
        let (tag, json) = match p {
            Procurement::I(_) => ("I", serde_json::to_string_pretty(p)?),
            Procurement::II(pp) => {
                affine_policy::write_policy_csv(&pp.policy, create(&m.output_dir, "policy.csv")?)?;
                ("II", serde_json::to_string_pretty(p)?)
            }
        };
        let mut w = create(&m.output_dir, &format!("procurement_{tag}.json"))?;
        writeln!(w, "{json}")?;
    }
    m.write(&m.output_dir)?;
    Ok(procs)
}

fn procure_with_grid(
    g: &GridModel,
    h: &PtdfMatrices,
    cfg: &ScenarioConfig,
    y_grid: Option<&[Vec<f64>]>,
) -> Result<Vec<Procurement>> {
    let Some(grid) = y_grid else {
        return Ok(evaluation::procure(g, h, cfg, None)?);
    };
    let mut out = Vec::new();
    if matches!(cfg.approach, Approach::I | Approach::Both) {
        let mut c = cfg.clone();
        c.approach = Approach::I;
        out.extend(evaluation::procure(g, h, &c, None)?);
    }
    if matches!(cfg.approach, Approach::II | Approach::Both) {
        let (_, w) = cfg.sets()?;
        let setup = affine_policy::AffineSetup {
            grid: g,
            ptdf: h,
            forecast: &cfg.forecast,
            polytope: &w,
            flow_caps_mw: cfg.flow_caps_mw.clone(),
        };
        out.push(Procurement::II(affine_policy::select_y(&setup, grid)?.1));
    }
    Ok(out)
}

/// Reads a stored procurement and checks it belongs to `g`.
pub fn load_procurement(g: &GridModel, path: &Path) -> Result<Procurement> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let p: Procurement =
        serde_json::from_str(&text).map_err(|e| dlr_core::Error::Schema(format!("{}: {e}", path.display())))?;
    let (gens, lines) = match &p {
        Procurement::I(r) => (&r.generators, &r.dlr_lines),
        Procurement::II(pp) => (&pp.policy.generators, &pp.policy.dlr_lines),
    };
    let same_gens = g.generators.len() == gens.len() && g.generators.iter().zip(gens).all(|(a, b)| &a.id == b);
    if !same_gens || *lines != g.dlr_line_ids() {
        return Err(dlr_core::Error::InvalidInput(format!("{} was made for a different grid", path.display())).into());
    }
    Ok(p)
}

/// Procures, evaluates and writes `evaluation.csv`, per-sample outcome
/// files and, when asked, `table.csv`.
pub fn run_evaluate(m: &RunManifest) -> Result<Vec<evaluation::EvaluationReport>> {
    m.validate()?;
    let g = m.grid()?;
    let h = compute_ptdf(&g)?;
    let f = m.forecast(&g)?;
    let cfg = m.scenario(f);
    create_dir(&m.output_dir)?;
    let procs = if m.procurements.is_empty() {
        procure_with_grid(&g, &h, &cfg, m.y_grid.as_deref())?
    } else {
        m.procurements.iter().map(|p| load_procurement(&g, p)).collect::<Result<_>>()?
    };
    let status_quo = evaluation::status_quo_cost(&g, &h)?;
    let e = dlr_core::uncertainty::build_ellipsoid(&cfg.forecast, cfg.gamma)?;
    let samples = evaluation::draw_samples(&e, cfg.sample_count, cfg.seed);
    let reports: Vec<_> = procs
        .iter()
        .map(|p| evaluation::evaluate_on(&g, &h, &cfg, p, &samples, status_quo))
        .collect::<dlr_core::Result<_>>()?;
    write_reports(&reports, create(&m.output_dir, "evaluation.csv")?)?;
    for r in &reports {
        evaluation::write_outcomes_csv(
            r,
            create(&m.output_dir, &format!("outcomes_{}.csv", approach_tag(r.approach)))?,
        )?;
    }
    if m.table {
        let mu = cfg.forecast.mu[0];
        let sd = cfg.forecast.sd()[0];
        let long = m.sigma_long.unwrap_or(2.0 * sd);
        let t = evaluation::summary_table(&g, &h, mu, sd, long, cfg.gamma, cfg.sample_count, cfg.seed)?;
        evaluation::write_summary_csv(&t, create(&m.output_dir, "table.csv")?)?;
    }
    m.write(&m.output_dir)?;
    Ok(reports)
}

fn write_reports<W: Write>(reports: &[evaluation::EvaluationReport], out: W) -> Result<()> {
    let mut w = out;
    writeln!(
        w,
        "approach,status_quo_cost,dispatch_cost,procured_mw,procurement_cost,\
         mean_operational_cost,mean_penalty,total_cost,savings_pct,feasibility_rate,y_mw"
    )?;
    for r in reports {
        let y = r
            .y_mw
            .as_ref()
            .map_or(String::new(), |y| y.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(";"));
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            approach_tag(r.approach),
            r.status_quo_cost,
            r.dispatch_cost,
            r.procured_mw,
            r.procurement_cost,
            r.mean_operational_cost,
            r.mean_penalty,
            r.total_cost,
            r.savings_pct,
            r.feasibility_rate,
            y
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the sweep described in the manifest.
pub fn run_sweep(m: &RunManifest) -> Result<()> {
    m.validate()?;
    let Some(spec) = &m.sweep else { bail!(dlr_core::Error::InvalidInput("manifest has no sweep section".into())) };
    let g = m.grid()?;
    let h = compute_ptdf(&g)?;
    let f = m.forecast(&g)?;
    let cfg = m.scenario(f);
    create_dir(&m.output_dir)?;
    match spec.kind {
        SweepKind::FlowLimits => {
            if spec.caps.len() != cfg.forecast.dim() || spec.caps.iter().any(|c| c.is_empty()) {
                bail!(dlr_core::Error::InvalidInput("give one nonempty list of caps per DLR line".into()));
            }
            let grid = product(&spec.caps);
            let rows = evaluation::sweep_flow_limits(&g, &h, &cfg, &grid)?;
            evaluation::write_flow_limit_csv(&rows, create(&m.output_dir, "sweep_flow_limits.csv")?)?;
            if m.emit_plot_data {
                for a in [Approach::I, Approach::II] {
                    if rows.iter().any(|r| r.approach == a) {
                        let name = format!("contour_{}.csv", approach_tag(a));
                        evaluation::write_contour_csv(&rows, a, create(&m.output_dir, &name)?)?;
                    }
                }
            }
        }
        SweepKind::MuSigma => {
            let rows = evaluation::sweep_mu_sigma(&g, &h, &cfg, &spec.mu_grid, &spec.sigma_grid)?;
            evaluation::write_mu_sigma_csv(&rows, create(&m.output_dir, "sweep_mu_sigma.csv")?)?;
            if m.emit_plot_data {
                for a in [Approach::I, Approach::II] {
                    let sel: Vec<_> = rows.iter().filter(|r| r.approach == a).collect();
                    if sel.is_empty() {
                        continue;
                    }
                    let mut w = create(&m.output_dir, &format!("contour_mu_sigma_{}.csv", approach_tag(a)))?;
                    writeln!(w, "mu,sigma,savings_pct")?;
                    for r in sel {
                        writeln!(w, "{:.6},{:.6},{:.6}", r.mu, r.sigma, r.savings_pct)?;
                    }
                    w.flush()?;
                }
            }
        }
    }
    m.write(&m.output_dir)?;
    Ok(())
}

/// Cartesian product of per-line value lists.
pub fn product(lists: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for vals in lists {
        out = out
            .into_iter()
            .flat_map(|p| {
                vals.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}
