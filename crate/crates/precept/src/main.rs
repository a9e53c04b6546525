use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use precept::goldens::{check_mapping, check_stats, MAPPING_TSV, STATS_FIXTURE};
use precept::harness::{run_experiment, SkMode};
use precept::oracle;
use precept::report::{emit_report, summary_markdown};
use precept::settings::{parse_domains, parse_on_off, parse_seeds, RunSettings};
use precept_core::agent::TestMode;
use precept_core::theory::{Bound, TheoryParams};

#[derive(Parser)]
#[command(name = "precept", version, about = "Rule-memory agent experiments and theory oracles")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment and write CSV + markdown reports.
    Run(RunArgs),
    /// Compare closed-form bounds with Monte Carlo estimates.
    Theory(TheoryArgs),
    /// Check the environment mapping and statistics against committed goldens.
    VerifyGoldens(GoldenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment number (1-9), name, or legacy driver name.
    #[arg(long)]
    exp: Option<String>,
    /// logistics, booking, integration, a comma list, or all.
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    beta: Option<u32>,
    /// e.g. 0-9 or 42,123,3141
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    train_salt: Option<u64>,
    #[arg(long)]
    test_salt: Option<u64>,
    /// matched or both
    #[arg(long)]
    test_mode: Option<String>,
    /// off or adversarial
    #[arg(long)]
    sk: Option<String>,
    /// on or off
    #[arg(long)]
    compass_outer: Option<String>,
    /// on or off
    #[arg(long)]
    prompt_baking: Option<String>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Sequential encounters per test key.
    #[arg(long)]
    encounters: Option<u32>,
    #[arg(long)]
    n_conditions: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file with the same keys as ExperimentConfig; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    /// coverage, B.1 … B.6, B.8, or all.
    #[arg(long, default_value = "all")]
    bound: String,
    /// Overrides of the anchor parameters, e.g. "n=10,p=0.75".
    #[arg(long, default_value = "")]
    params: String,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GoldenArgs {
    /// Mapping TSV (defaults to the copy built into the binary).
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Statistics fixture JSON (defaults to the built-in copy).
    #[arg(long)]
    stats: Option<PathBuf>,
}

fn flags(a: &RunArgs) -> Result<RunSettings> {
    let test_mode = match a.test_mode.as_deref() {
        None => None,
        Some("matched") => Some(TestMode::Matched),
        Some("both") => Some(TestMode::Both),
        Some(other) => bail!("test mode must be matched or both, got `{other}`"),
    };
    Ok(RunSettings {
        experiment: a.exp.clone(),
        domains: a.domain.as_deref().map(parse_domains).transpose()?,
        n_conditions: a.n_conditions,
        beta: a.beta,
        max_retries: a.max_retries,
        seeds: a.seeds.as_deref().map(parse_seeds).transpose()?,
        test_mode,
        train_salt: a.train_salt,
        test_salt: a.test_salt,
        sk: a.sk.as_deref().map(str::parse::<SkMode>).transpose()?,
        compass_outer: a.compass_outer.as_deref().map(parse_on_off).transpose()?,
        prompt_baking: a.prompt_baking.as_deref().map(parse_on_off).transpose()?,
        test_encounters: a.encounters,
        verbal: None,
        out: a.out.clone(),
    })
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let file = match &a.config {
        Some(p) => RunSettings::load(p)?,
        None => RunSettings::default(),
    };
    let (cfg, out) = file.under(flags(&a)?).resolve()?;
    let results = run_experiment(&cfg)?;
    let paths = emit_report(&results, &out).with_context(|| format!("writing reports to {}", out.display()))?;
    print!("{}", summary_markdown(&results));
    eprintln!("wrote {} files under {}", paths.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn theory(a: TheoryArgs) -> Result<ExitCode> {
    let params = oracle::parse_params(TheoryParams::anchors(), &a.params)?;
    let bounds: Vec<Bound> = if a.bound.eq_ignore_ascii_case("all") {
        Bound::ALL.to_vec()
    } else {
        a.bound.split(',').map(|b| b.parse()).collect::<Result<_, _>>()?
    };
    let reports = oracle::run(&bounds, &params, a.trials, a.seed)?;
    let text = oracle::oracle_csv(&reports, &params)?;
    match a.out {
        Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    let outside = reports.iter().filter(|r| !r.within_ci()).count();
    if outside > 0 {
        eprintln!("{outside} of {} estimates fall outside their 95% interval", reports.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(a: GoldenArgs) -> Result<ExitCode> {
    let mapping = match &a.mapping {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => MAPPING_TSV.to_string(),
    };
    let fixture = match &a.stats {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => STATS_FIXTURE.to_string(),
    };
    let m = check_mapping(&mapping)?;
    for x in &m.mismatches {
        println!("MISMATCH {} salt {} {}: expected {} got {}", x.row.domain, x.row.salt, x.row.key, x.row.expected, x.actual);
    }
    for x in &m.missing {
        println!("MISSING {} salt {} {}", x.domain, x.salt, x.key);
    }
    println!("mapping: {} rows, {} mismatches, {} missing", m.rows, m.mismatches.len(), m.missing.len());
    let s = check_stats(&fixture)?;
    for (name, expected, actual) in &s.values {
        println!("stats {name}: expected {expected:.12} got {actual:.12}");
    }
    let ok = m.ok() && s.ok();
    println!("{}", if ok { "goldens OK" } else { "goldens FAILED" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Theory(a) => theory(a),
        Cmd::VerifyGoldens(a) => verify(a),
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
