//! `dlr`: line ratings, reserve procurement under uncertain ratings, online
//! operation and Monte Carlo evaluation.
//!
//! Exit codes: 0 success, 2 infeasible, 3 input error, 4 numerical failure.

mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dlr_core::evaluation::{self, Approach, Procurement};
use dlr_core::network::compute_ptdf;
use dlr_core::robust_dispatch::operate_online;
use dlr_core::thermal::{ConductorParams, LineRatingSpec, WeatherSample};
use dlr_core::{io, Error};

use manifest::{RunManifest, SweepKind, SweepSpec};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "dlr", version, about = "Reserve procurement for dynamically rated lines")]
struct Cli {
    /// Worker threads for sample evaluation and candidate search.
    #[arg(long, global = true, env = "DLR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Rate a conductor under weather records.
    Rate(RateArgs),
    /// Procure reserves and write the schedule.
    Procure(ScenarioArgs),
    /// Operate a stored procurement against a realized rating.
    Operate(OperateArgs),
    /// Procure, then evaluate on seeded rating samples.
    Evaluate(EvaluateArgs),
    /// Sweep flow caps or forecast parameters.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct RateArgs {
    /// Weather records, CSV or JSON.
    #[arg(long)]
    weather: PathBuf,
    /// Conductor, CSV or JSON; Drake ACSR when absent.
    #[arg(long)]
    conductor: Option<PathBuf>,
    #[arg(long, default_value_t = 230.0)]
    voltage_kv: f64,
    /// Conservative weather defining the nominal rating.
    #[arg(long)]
    nlr_weather: Option<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A comma-separated list of numbers.
#[derive(Debug, Clone)]
struct List(Vec<f64>);

fn parse_list(s: &str) -> Result<List, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(List)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ApproachArg {
    I,
    Ii,
    Both,
}

impl From<ApproachArg> for Approach {
    fn from(a: ApproachArg) -> Self {
        match a {
            ApproachArg::I => Approach::I,
            ApproachArg::Ii => Approach::II,
            ApproachArg::Both => Approach::Both,
        }
    }
}

#[derive(Args, Debug, Default)]
struct ScenarioArgs {
    /// Run manifest; flags given alongside override its values.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Grid JSON; the bundled RTS-96 two-area case when absent.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Forecast JSON with mu, sigma, lead_time.
    #[arg(long)]
    forecast: Option<PathBuf>,
    /// Mean rating of every DLR line, p.u.
    #[arg(long)]
    mu: Option<f64>,
    /// Standard deviation of every DLR line, p.u.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lead_time: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    approach: Option<ApproachArg>,
    /// Guarantee candidate for approach II, MW per DLR line; repeatable.
    #[arg(long = "y", value_parser = parse_list)]
    y: Vec<List>,
    /// Candidates per line when searching the guarantee.
    #[arg(long)]
    y_levels: Option<usize>,
    /// Facets per coordinate pair of the polyhedral set.
    #[arg(long)]
    facets: Option<usize>,
    /// Caps on the scheduled DLR flows, MW per line.
    #[arg(long, value_parser = parse_list)]
    flow_caps: Option<List>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// $/MW of residual overload in uncovered samples.
    #[arg(long)]
    penalty_price: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OperateArgs {
    /// procurement_I.json or procurement_II.json from `procure`.
    #[arg(long)]
    procurement: PathBuf,
    /// Realized ratings, p.u. per DLR line.
    #[arg(long, value_parser = parse_list)]
    delta: List,
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Stored procurement to evaluate instead of procuring; repeatable.
    #[arg(long)]
    procurement: Vec<PathBuf>,
    /// Also run the six-column comparison table.
    #[arg(long)]
    table: bool,
    /// σ of the 24 h forecast in the table.
    #[arg(long)]
    sigma_long: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    FlowLimits,
    MuSigma,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// Cap values for one DLR line, MW; give once per line.
    #[arg(long, value_parser = parse_list)]
    caps: Vec<List>,
    #[arg(long, value_parser = parse_list)]
    mu_grid: Option<List>,
    #[arg(long, value_parser = parse_list)]
    sigma_grid: Option<List>,
    /// Write x, y, savings triples for contour plots.
    #[arg(long)]
    emit_plot_data: bool,
}

impl ScenarioArgs {
    fn manifest(&self) -> Result<RunManifest> {
        let mut m = match &self.manifest {
            Some(p) => RunManifest::load(p)?,
            None => {
                let out = self
                    .out
                    .clone()
                    .ok_or_else(|| Error::InvalidInput("--out is required without --manifest".into()))?;
                RunManifest::new(out)
            }
        };
        if let Some(v) = &self.out {
            m.output_dir = v.clone();
        }
        if let Some(v) = &self.grid {
            m.grid = Some(v.clone());
        }
        if let Some(v) = &self.forecast {
            m.forecast = Some(v.clone());
        }
        if self.mu.is_some() || self.sigma.is_some() {
            m.forecast = None;
        }
        m.mu = self.mu.or(m.mu);
        m.sigma = self.sigma.or(m.sigma);
        if let Some(v) = self.lead_time {
            m.lead_time = v;
        }
        if let Some(v) = self.gamma {
            m.gamma = v;
        }
        if let Some(v) = self.alpha {
            m.alpha = v;
        }
        if let Some(v) = self.approach {
            m.approach = v.into();
        }
        if !self.y.is_empty() {
            m.y_grid = Some(self.y.iter().map(|l| l.0.clone()).collect());
        }
        if let Some(v) = self.y_levels {
            m.y_levels = v;
        }
        if let Some(v) = self.facets {
            m.facets = v;
        }
        if let Some(v) = &self.flow_caps {
            m.flow_caps_mw = Some(v.0.clone());
        }
        if let Some(v) = self.seed {
            m.seed = v;
        }
        if let Some(v) = self.samples {
            m.sample_count = v;
        }
        if let Some(v) = self.penalty_price {
            m.penalty_price = v;
        }
        Ok(m)
    }
}

fn rate(a: &RateArgs) -> Result<()> {
    let conductor = match &a.conductor {
        Some(p) => io::read_conductor(p)?,
        None => ConductorParams::drake(),
    };
    let nlr = match &a.nlr_weather {
        Some(p) => io::read_weather_sample(p)?,
        None => WeatherSample::nominal_default(),
    };
    let spec = LineRatingSpec::calibrated(conductor, a.voltage_kv, nlr)?;
    let weather = io::read_weather(&a.weather)?;
    let rows = io::rate_rows(&weather, &spec)?;
    match &a.out {
        Some(p) => {
            let f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            io::write_ratings_csv(&rows, std::io::BufWriter::new(f))?
        }
        None => io::write_ratings_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn operate(a: &OperateArgs) -> Result<()> {
    let g = match &a.grid {
        Some(p) => dlr_core::network::load_grid_file(p)?,
        None => dlr_core::network::GridModel::rts96(),
    };
    let h = compute_ptdf(&g)?;
    let proc = manifest::load_procurement(&g, &a.procurement)?;
    let (generators, adjust, cost) = match &proc {
        Procurement::I(r) => {
            let act = operate_online(&g, &h, r, &a.delta.0)?;
            let adj: Vec<f64> = act.delta_plus.iter().zip(&act.delta_minus).map(|(u, d)| u + d).collect();
            (r.generators.clone(), adj, act.cost)
        }
        Procurement::II(pp) => {
            let adj = evaluation::operate_policy(&g, &h, pp, &a.delta.0)?;
            (pp.policy.generators.clone(), adj, pp.policy.activation_cost(&g, &a.delta.0))
        }
    };
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "generator,adjustment_mw")?;
    for (id, v) in generators.iter().zip(&adjust) {
        if v.abs() > 0.0 {
            writeln!(out, "{id},{v:.6}")?;
        }
    }
    out.flush()?;
    eprintln!("activation cost {cost:.6} $/h");
    Ok(())
}

fn procure(a: &ScenarioArgs) -> Result<()> {
    let m = a.manifest()?;
    for p in manifest::run_procure(&m)? {
        match p {
            Procurement::I(r) => println!(
                "I: dispatch {:.2} $/h, procured {:.2} MW, procurement {:.2} $/h",
                r.cost_dispatch,
                r.procured_mw(),
                r.cost_procurement
            ),
            Procurement::II(pp) => println!(
                "II: y = {:?} MW, dispatch {:.2} $/h, procured {:.2} MW, expected total {:.2} $/h",
                pp.policy.y,
                pp.cost_dispatch,
                pp.procured_mw(),
                pp.total_expected_cost()
            ),
        }
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut m = a.scenario.manifest()?;
    m.table |= a.table;
    if !a.procurement.is_empty() {
        m.procurements = a.procurement.clone();
    }
    if a.sigma_long.is_some() {
        m.sigma_long = a.sigma_long;
    }
    for r in manifest::run_evaluate(&m)? {
        println!(
            "{}: total {:.2} $/h, savings {:.3} %, procured {:.2} MW, feasible {:.1} %",
            r.label,
            r.total_cost,
            r.savings_pct,
            r.procured_mw,
            100.0 * r.feasibility_rate
        );
    }
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let mut m = a.scenario.manifest()?;
    let mut spec = m.sweep.clone().unwrap_or(SweepSpec {
        kind: SweepKind::FlowLimits,
        caps: Vec::new(),
        mu_grid: Vec::new(),
        sigma_grid: Vec::new(),
    });
    if let Some(k) = a.kind {
        spec.kind = match k {
            KindArg::FlowLimits => SweepKind::FlowLimits,
            KindArg::MuSigma => SweepKind::MuSigma,
        };
    }
    if !a.caps.is_empty() {
        spec.caps = a.caps.iter().map(|l| l.0.clone()).collect();
    }
    if let Some(v) = &a.mu_grid {
        spec.mu_grid = v.0.clone();
    }
    if let Some(v) = &a.sigma_grid {
        spec.sigma_grid = v.0.clone();
    }
    m.sweep = Some(spec);
    m.emit_plot_data |= a.emit_plot_data;
    manifest::run_sweep(&m)?;
    println!("wrote {}", m.output_dir.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_infeasible() => EXIT_INFEASIBLE,
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: thread count must be at least 1");
            return ExitCode::from(EXIT_INPUT);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let res = match &cli.cmd {
        Cmd::Rate(a) => rate(a),
        Cmd::Procure(a) => procure(a),
        Cmd::Operate(a) => operate(a),
        Cmd::Evaluate(a) => evaluate(a),
        Cmd::Sweep(a) => sweep(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
