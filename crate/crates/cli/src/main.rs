use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use loadscope_core::analyze::{analyze_path, AnalysisConfig};
use loadscope_core::profile::{merge_all, Profile};
use loadscope_core::report::{render, ReportFormat, DEFAULT_TOP};
use loadscope_core::sampler::SamplingConfig;
use loadscope_core::temporal::DEFAULT_EPSILON;
use loadscope_core::workload::{write_binary, write_text_trace, Scenario, ScenarioName};

#[derive(Parser)]
#[command(
    name = "loadscope",
    version,
    about = "Find and attribute redundant memory loads in instruction traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace
    Gen(GenArgs),
    /// Analyze a trace into a profile
    Analyze(AnalyzeArgs),
    /// Merge profiles
    Merge(MergeArgs),
    /// Render a ranked report from a profile
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Scenario name
    #[arg(long, value_parser = parse_scenario)]
    scenario: ScenarioName,
    /// Scenario parameter as key=value; repeatable
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    #[arg(short, long)]
    output: PathBuf,
    /// Write the line-oriented text encoding instead of binary
    #[arg(long)]
    text: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    trace: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Monitor every load
    #[arg(long, conflicts_with_all = ["window_enable", "window_disable"])]
    no_sampling: bool,
    #[arg(long, value_name = "N")]
    window_enable: Option<u64>,
    #[arg(long, value_name = "N")]
    window_disable: Option<u64>,
    #[arg(long, value_name = "E", default_value_t = DEFAULT_EPSILON)]
    approx_epsilon: f64,
    #[arg(long, value_name = "K", default_value_t = 1)]
    scope_budget: u32,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(required = true)]
    profiles: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    profile: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP)]
    top: usize,
    #[arg(long, default_value = "text", value_parser = parse_format)]
    format: ReportFormat,
}

fn parse_scenario(s: &str) -> Result<ScenarioName, String> {
    s.parse().map_err(|e: loadscope_core::workload::GenError| {
        let names: Vec<_> = ScenarioName::ALL.iter().map(|n| n.as_str()).collect();
        format!("{e}; known scenarios: {}", names.join(", "))
    })
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::with_capacity(1 << 20, f))
}

fn load_profile(path: &PathBuf) -> Result<Profile> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Profile::from_json(&text).with_context(|| format!("invalid profile {}", path.display()))
}

fn write_profile(path: &PathBuf, p: &Profile) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(p.to_json().as_bytes())?;
    out.flush()
        .with_context(|| format!("cannot write {}", path.display()))
}

fn gen(a: GenArgs) -> Result<()> {
    let mut s = Scenario::parse(a.scenario.as_str(), &a.params)?;
    s.name = a.scenario;
    let mut out = create(&a.output)?;
    let n = if a.text {
        write_text_trace(&s, &mut out)?
    } else {
        write_binary(&s, &mut out)?
    };
    out.flush()?;
    eprintln!("wrote {n} events to {}", a.output.display());
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let sampling = if a.no_sampling {
        SamplingConfig::full()
    } else {
        let d = SamplingConfig::default();
        SamplingConfig::windows(
            a.window_enable.unwrap_or(d.window_enable),
            a.window_disable.unwrap_or(d.window_disable),
        )
    };
    if a.approx_epsilon.is_nan() || a.approx_epsilon < 0.0 {
        bail!("--approx-epsilon must be >= 0");
    }
    let config = AnalysisConfig {
        sampling,
        epsilon: a.approx_epsilon,
        scope_budget: a.scope_budget,
    };
    let profile =
        analyze_path(&a.trace, config).with_context(|| format!("cannot analyze {}", a.trace.display()))?;
    write_profile(&a.output, &profile)
}

fn merge(a: MergeArgs) -> Result<()> {
    let profiles = a.profiles.iter().map(load_profile).collect::<Result<Vec<_>>>()?;
    write_profile(&a.output, &merge_all(profiles))
}

fn report(a: ReportArgs) -> Result<()> {
    let p = load_profile(&a.profile)?;
    let mut out = std::io::stdout().lock();
    out.write_all(render(&p, a.top, a.format).as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Analyze(a) => analyze(a),
        Command::Merge(a) => merge(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
