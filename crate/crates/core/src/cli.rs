//! Command-line front end.
//!
//! Every subcommand loads a scenario (a TOML path, or `paper-case` for the
//! shipped case), calls the library, and renders the result. Text output uses
//! six significant digits; JSON files carry full precision.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::powerflow::{solve, FlowError, FlowOptions};
use crate::scenario::{ScenarioError, ScenarioFile};
use crate::sequencer::Strategy;
use crate::sim::{run_blackstart, sig6, RunEvent, RunOutput, RunSummary, SimError, SimOptions, TriggerKind};
use crate::sizing::{loss_breakdown, size, LossBreakdown, SizingError, SizingReport};

pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;
pub const EXIT_TIMEOUT: i32 = 5;
pub const EXIT_FAULT: i32 = 6;

#[derive(Debug, Parser)]
#[command(
    name = "blackstart",
    version,
    about = "Black-start sizing and sequencing for wind-to-hydrogen microgrids"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Whcc,
    Hscc,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Whcc => Strategy::Whcc,
            StrategyArg::Hscc => Strategy::Hscc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TriggerArg {
    Condition,
    Scripted,
}

impl From<TriggerArg> for TriggerKind {
    fn from(t: TriggerArg) -> Self {
        match t {
            TriggerArg::Condition => TriggerKind::Condition,
            TriggerArg::Scripted => TriggerKind::Scripted,
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub triggers: Option<TriggerArg>,
    /// Time step (s).
    #[arg(long)]
    pub dt: Option<f64>,
    /// End time (s).
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Size the black-start source from the supply-circuit power flow.
    Size {
        scenario: String,
        /// Override the rating margin.
        #[arg(long)]
        margin: Option<f64>,
        /// Also write sizing.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the scenario network and report bus voltages and branch flows.
    Flow {
        scenario: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the restoration sequence.
    Blackstart {
        scenario: String,
        #[arg(long, value_enum, default_value = "whcc")]
        strategy: StrategyArg,
        #[command(flatten)]
        run: RunArgs,
        /// Directory for timeseries.csv, events.jsonl and summary.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run both strategies on the same scenario and compare them.
    Compare {
        scenario: String,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sizing(#[from] SizingError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{side} run failed: {error}")]
    Side { side: Strategy, error: SimError },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("rejected configuration: {0}")]
    Rejected(String),
    #[error("sequence incomplete: last step {0}")]
    Incomplete(u8),
}

fn flow_code(e: &FlowError) -> i32 {
    match e {
        FlowError::NonConvergence { .. } | FlowError::SingularJacobian(_) => EXIT_NONCONVERGENCE,
        _ => EXIT_PARSE,
    }
}

fn sizing_code(e: &SizingError) -> i32 {
    match e {
        SizingError::Flow(f) => flow_code(f),
        _ => EXIT_PARSE,
    }
}

/// Process exit code for a simulation failure.
pub fn sim_code(e: &SimError) -> i32 {
    match e {
        SimError::Scenario(_) => EXIT_PARSE,
        SimError::Sizing(s) => sizing_code(s),
        SimError::Flow { error, .. } => flow_code(error),
        SimError::Timeout { .. } => EXIT_TIMEOUT,
        SimError::Blackout { .. } | SimError::Config { .. } | SimError::Device { .. } | SimError::Sequence(_) => {
            EXIT_FAULT
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(ScenarioError::Io { .. }) | CliError::Io { .. } => EXIT_IO,
            CliError::Scenario(ScenarioError::Sizing(s)) | CliError::Sizing(s) => sizing_code(s),
            CliError::Scenario(_) | CliError::Rejected(_) => EXIT_PARSE,
            CliError::Flow(f) => flow_code(f),
            CliError::Sim(e) | CliError::Side { error: e, .. } => sim_code(e),
            CliError::Incomplete(_) => EXIT_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRow {
    pub number: u32,
    pub v_pu: f64,
    pub angle_deg: f64,
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// Branch flows in MW/MVar, positive into the branch at that end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub label: String,
    pub p_from_mw: f64,
    pub q_from_mvar: f64,
    pub p_to_mw: f64,
    pub q_to_mvar: f64,
    pub loss_p_mw: f64,
    pub loss_q_mvar: f64,
    /// Shunt reactive consumption; negative is injection.
    pub shunt_q_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub s_base_mva: f64,
    pub iterations: usize,
    pub mismatch: f64,
    pub buses: Vec<BusRow>,
    pub branches: Vec<BranchRow>,
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSide {
    pub strategy: Strategy,
    pub max_freq_dev_hz: f64,
    pub max_freq_dev_pct: f64,
    pub pemfc_energy_kwh: f64,
    pub completion_time: Option<f64>,
    pub step_times: Vec<f64>,
}

impl From<&RunSummary> for CompareSide {
    fn from(s: &RunSummary) -> Self {
        Self {
            strategy: s.strategy,
            max_freq_dev_hz: s.max_freq_dev_hz,
            max_freq_dev_pct: s.max_freq_dev_pct,
            pemfc_energy_kwh: s.pemfc_energy_kwh,
            completion_time: s.completion_time,
            step_times: s.step_times.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub triggers: TriggerKind,
    pub whcc: CompareSide,
    pub hscc: CompareSide,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    write_file(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

pub fn sizing_report(scenario: &ScenarioFile, margin: Option<f64>) -> Result<SizingReport, CliError> {
    let mut s = scenario.sizing_scenario()?;
    if let Some(m) = margin {
        s.margin = m;
        s.validate()?;
    }
    Ok(size(&s)?.0)
}

pub fn flow_report(scenario: &ScenarioFile) -> Result<FlowReport, CliError> {
    let (net, labels, numbers) = scenario.flow_network()?;
    let sol = solve(&net, &FlowOptions::default())?;
    let s = net.s_base;
    let buses = sol
        .voltages
        .iter()
        .zip(&sol.bus_injections)
        .zip(&numbers)
        .map(|((v, inj), n)| BusRow {
            number: *n,
            v_pu: v.norm(),
            angle_deg: v.arg().to_degrees(),
            p_mw: inj.re * s,
            q_mvar: inj.im * s,
        })
        .collect();
    let branches = sol
        .branch_flows
        .iter()
        .zip(labels)
        .map(|(f, label)| BranchRow {
            label,
            p_from_mw: f.s_from.re * s,
            q_from_mvar: f.s_from.im * s,
            p_to_mw: f.s_to.re * s,
            q_to_mvar: f.s_to.im * s,
            loss_p_mw: f.loss.re * s,
            loss_q_mvar: f.loss.im * s,
            shunt_q_mvar: f.shunt_q * s,
        })
        .collect();
    Ok(FlowReport {
        s_base_mva: s,
        iterations: sol.iterations,
        mismatch: sol.mismatch,
        buses,
        branches,
        losses: loss_breakdown(&net, &sol),
    })
}

fn sim_options(scenario: &ScenarioFile, run: &RunArgs) -> SimOptions {
    let mut o = scenario.sim.clone();
    if let Some(t) = run.triggers {
        o.triggers = t.into();
    }
    if let Some(dt) = run.dt {
        o.dt = dt;
    }
    if let Some(t_end) = run.t_end {
        o.t_end = t_end;
    }
    o
}

pub fn blackstart_run(scenario: &ScenarioFile, strategy: Strategy, run: &RunArgs) -> Result<RunOutput, SimError> {
    let bs = scenario
        .blackstart_scenario()
        .map_err(|e| SimError::Scenario(e.to_string()))?;
    run_blackstart(&bs, strategy, &sim_options(scenario, run))
}

pub fn compare_report(scenario: &ScenarioFile, run: &RunArgs) -> Result<CompareReport, CliError> {
    if !scenario.sequence.whcc_disconnect_pemfc {
        return Err(CliError::Rejected(
            "whcc_disconnect_pemfc = false leaves the PEMFC forming under WHCC; nothing to compare".into(),
        ));
    }
    let (whcc, hscc) = std::thread::scope(|s| {
        let w = s.spawn(|| blackstart_run(scenario, Strategy::Whcc, run));
        let h = s.spawn(|| blackstart_run(scenario, Strategy::Hscc, run));
        (
            w.join().expect("whcc run panicked"),
            h.join().expect("hscc run panicked"),
        )
    });
    let whcc = whcc.map_err(|error| CliError::Side {
        side: Strategy::Whcc,
        error,
    })?;
    let hscc = hscc.map_err(|error| CliError::Side {
        side: Strategy::Hscc,
        error,
    })?;
    Ok(CompareReport {
        triggers: whcc.summary.triggers,
        whcc: (&whcc.summary).into(),
        hscc: (&hscc.summary).into(),
    })
}

pub fn write_run(dir: &Path, out: &RunOutput) -> Result<(), CliError> {
    write_file(dir, "timeseries.csv", |w| out.series.write_csv(w))?;
    write_file(dir, "events.jsonl", |w| RunEvent::write_jsonl(&out.events, w))?;
    write_json(dir, "summary.json", &out.summary)
}

pub fn render_sizing(r: &SizingReport, w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "P_min           {} MW", sig6(r.p_min_mw))?;
    writeln!(w, "Q_min           {} MVar", sig6(r.q_min_mvar))?;
    writeln!(w, "S_min           {} MVA", sig6(r.s_min_mva))?;
    writeln!(w, "margin          {}", sig6(r.margin))?;
    writeln!(w, "rating          {} MW", sig6(r.rating_mw))?;
    writeln!(
        w,
        "losses          {} MW, {} MVar",
        sig6(r.losses.total_p_mw),
        sig6(r.losses.total_q_mvar)
    )?;
    writeln!(
        w,
        "  transformer excitation  {} MVar",
        sig6(r.losses.transformer_excitation_mvar)
    )?;
    writeln!(
        w,
        "  line charging           {} MVar",
        sig6(r.losses.line_charging_mvar)
    )?;
    writeln!(w, "  series reactive         {} MVar", sig6(r.losses.series_q_mvar))?;
    writeln!(w, "LSC standby     {} MW", sig6(r.lsc_standby_flow_mw))?;
    writeln!(w, "iterations      {}", r.iterations)
}

pub fn render_flow(r: &FlowReport, w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "bus  v_pu  angle_deg  p_mw  q_mvar")?;
    for b in &r.buses {
        writeln!(
            w,
            "{}  {}  {}  {}  {}",
            b.number,
            sig6(b.v_pu),
            sig6(b.angle_deg),
            sig6(b.p_mw),
            sig6(b.q_mvar)
        )?;
    }
    writeln!(w, "branch  p_from  q_from  p_to  q_to  loss_p  loss_q  shunt_q")?;
    for b in &r.branches {
        writeln!(
            w,
            "{}  {}  {}  {}  {}  {}  {}  {}",
            b.label,
            sig6(b.p_from_mw),
            sig6(b.q_from_mvar),
            sig6(b.p_to_mw),
            sig6(b.q_to_mvar),
            sig6(b.loss_p_mw),
            sig6(b.loss_q_mvar),
            sig6(b.shunt_q_mvar)
        )?;
    }
    writeln!(
        w,
        "losses  {} MW  {} MVar  ({} iterations)",
        sig6(r.losses.total_p_mw),
        sig6(r.losses.total_q_mvar),
        r.iterations
    )
}

fn opt(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_else(|| "-".into())
}

pub fn render_summary(s: &RunSummary, w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "strategy        {}", s.strategy)?;
    writeln!(w, "complete        {}", s.complete)?;
    writeln!(w, "final step      {}", s.final_step)?;
    writeln!(w, "completion      {} s", opt(s.completion_time))?;
    let times: Vec<String> = s.step_times.iter().map(|t| sig6(*t)).collect();
    writeln!(w, "step times      {}", times.join(" "))?;
    writeln!(
        w,
        "peak PEMFC      {} MW, {} MVar",
        sig6(s.peak_pemfc_p),
        sig6(s.peak_pemfc_q)
    )?;
    writeln!(
        w,
        "max |df|        {} Hz ({} %)",
        sig6(s.max_freq_dev_hz),
        sig6(s.max_freq_dev_pct)
    )?;
    writeln!(w, "PEMFC energy    {} kWh", sig6(s.pemfc_energy_kwh))
}

pub fn render_compare(r: &CompareReport, w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "{:<18}{:>14}{:>14}", "", "WHCC", "HSCC")?;
    let rows: [(&str, String, String); 4] = [
        (
            "max |df| (Hz)",
            sig6(r.whcc.max_freq_dev_hz),
            sig6(r.hscc.max_freq_dev_hz),
        ),
        (
            "max |df| (%)",
            sig6(r.whcc.max_freq_dev_pct),
            sig6(r.hscc.max_freq_dev_pct),
        ),
        (
            "PEMFC (kWh)",
            sig6(r.whcc.pemfc_energy_kwh),
            sig6(r.hscc.pemfc_energy_kwh),
        ),
        (
            "completion (s)",
            opt(r.whcc.completion_time),
            opt(r.hscc.completion_time),
        ),
    ];
    for (name, a, b) in rows {
        writeln!(w, "{name:<18}{a:>14}{b:>14}")?;
    }
    Ok(())
}

fn stdout_err(e: std::io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

/// Runs one parsed command, writing the text rendering to `stdout`.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Size { scenario, margin, out } => {
            let report = sizing_report(&ScenarioFile::load(scenario)?, *margin)?;
            render_sizing(&report, stdout).map_err(stdout_err)?;
            if let Some(dir) = out {
                write_json(dir, "sizing.json", &report)?;
            }
        }
        Command::Flow { scenario, out } => {
            let report = flow_report(&ScenarioFile::load(scenario)?)?;
            render_flow(&report, stdout).map_err(stdout_err)?;
            if let Some(dir) = out {
                write_json(dir, "flow.json", &report)?;
            }
        }
        Command::Blackstart {
            scenario,
            strategy,
            run,
            out,
        } => {
            let file = ScenarioFile::load(scenario)?;
            match blackstart_run(&file, (*strategy).into(), run) {
                Ok(output) => {
                    write_run(out, &output)?;
                    render_summary(&output.summary, stdout).map_err(stdout_err)?;
                    if !output.summary.complete {
                        return Err(CliError::Incomplete(output.summary.final_step));
                    }
                }
                Err(e) => {
                    if let Some(partial) = e.partial() {
                        write_run(out, partial)?;
                    }
                    let fault = serde_json::json!({ "error": e.to_string(), "exit_code": sim_code(&e) });
                    write_json(out, "fault.json", &fault)?;
                    return Err(e.into());
                }
            }
        }
        Command::Compare { scenario, run, out } => {
            let report = compare_report(&ScenarioFile::load(scenario)?, run)?;
            render_compare(&report, stdout).map_err(stdout_err)?;
            if let Some(dir) = out {
                write_json(dir, "compare.json", &report)?;
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
