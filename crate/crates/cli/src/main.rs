use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hopool_core::bench::{bench_tso, fit_complexity, BenchGrid, BenchRecord, MIN_RUNS};
use hopool_core::descriptors::normalized_hotd;
use hopool_core::io::{load_features, load_tensor};
use hopool_core::shrinkage::{seeded_problem, verify_theorem1, verify_theorem2, Theorem1Options, Theorem1Report};
use hopool_core::suite::{run_suite, SuiteName, SuiteOptions};
use hopool_core::tso::extract_representation;
use hopool_core::{SplitConfig, TsoParams};

mod demo;

#[derive(Parser)]
#[command(name = "hopool", version, about = "High-order tensor pooling: checks, benchmarks and a synthetic demo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a property suite and report per-check residuals.
    RunSuite(RunSuiteArgs),
    /// Time naive vs fast tensor shrinkage.
    Bench(BenchArgs),
    /// Compare the shrinkage objective's numerical minimizer with its closed form.
    Theorems(TheoremArgs),
    /// Forward one synthetic episode and print rankings and relation norms.
    Demo(demo::DemoArgs),
    /// Pool a feature file into its HOP representation.
    Extract(ExtractArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

/// Shrinkage parameters shared by several subcommands.
#[derive(Args, Clone)]
struct ParamArgs {
    /// Shrinkage exponent for every order.
    #[arg(long, default_value_t = 7)]
    eta: u32,
    /// SigmE slope.
    #[arg(long, default_value_t = 200.0)]
    eta_prime: f64,
    /// Fail on an odd-order eta that is not a power of 3 instead of rounding it.
    #[arg(long)]
    no_round_odd_eta: bool,
}

impl ParamArgs {
    fn params(&self) -> Result<TsoParams> {
        let p = TsoParams::uniform(self.eta, self.eta_prime).with_odd_rounding(!self.no_round_odd_eta);
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct RunSuiteArgs {
    /// descriptors, tso, theorems, attention, heads, pipeline or all.
    #[arg(value_parser = parse_suite)]
    name: SuiteName,
    /// TNSR tensor to add to the tso suite.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value = "5:2:1")]
    split: SplitConfig,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Comma-separated exponents; defaults to 2, 4, ..., 1024.
    #[arg(long, value_delimiter = ',')]
    eta: Vec<u32>,
    #[arg(long, default_value_t = MIN_RUNS)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoremArgs {
    /// Comma-separated spectrum lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 8])]
    dim: Vec<usize>,
    /// Comma-separated exponents.
    #[arg(long, value_delimiter = ',', default_values_t = [2, 7, 32])]
    eta: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Features as CSV (one vector per line) or a TNSR matrix.
    #[arg(long)]
    input: PathBuf,
    /// Descriptor order.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Treat the input as a ready descriptor tensor instead of features.
    #[arg(long)]
    descriptor: bool,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_suite(s: &str) -> std::result::Result<SuiteName, String> {
    s.parse().map_err(|e: hopool_core::Error| e.to_string())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_suite_cmd(a: &RunSuiteArgs) -> Result<bool> {
    let opts = SuiteOptions {
        seed: a.seed,
        params: a.params.params()?,
        split: a.split.clone(),
        sigma: a.sigma,
        heads: a.heads,
        input: a.input.clone(),
    };
    let report = run_suite(a.name, &opts)?;
    let mut w = output(a.out.as_deref())?;
    match a.format {
        Format::Json => writeln!(w, "{}", report.to_json())?,
        Format::Text | Format::Csv => {
            for c in &report.checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                write!(w, "{status} {}/{} residual {:.3e} threshold {:.1e}", c.suite, c.name, c.residual, c.threshold)?;
                if c.detail.is_empty() {
                    writeln!(w)?;
                } else {
                    writeln!(w, " ({})", c.detail)?;
                }
            }
            let failed = report.failures().count();
            writeln!(w, "{}: {} checks, {failed} failed", report.suite, report.checks.len())?;
        }
    }
    w.flush()?;
    Ok(report.passed)
}

fn bench_cmd(a: &BenchArgs) -> Result<bool> {
    let mut grid = BenchGrid::doubling(a.order, a.dim);
    if !a.eta.is_empty() {
        grid.etas = a.eta.clone();
    }
    grid.runs = a.runs;
    grid.seed = a.seed;
    let records = bench_tso(&grid)?;
    let fit = fit_complexity(&records).ok();
    let mut w = output(a.out.as_deref())?;
    match a.format {
        Format::Json => {
            let doc = serde_json::json!({ "records": records, "fit": fit });
            writeln!(w, "{}", serde_json::to_string_pretty(&doc)?)?;
        }
        Format::Text | Format::Csv => {
            writeln!(w, "{}", BenchRecord::CSV_HEADER)?;
            for r in &records {
                writeln!(w, "{}", r.csv_row())?;
            }
        }
    }
    w.flush()?;
    if let Some(f) = fit {
        eprintln!(
            "naive slope vs eta {:.3}, fast slope vs log2 eta {:.3}, fast/naive at eta={} {:.4}",
            f.naive_slope, f.fast_slope, f.max_eta, f.ratio_at_max
        );
    }
    Ok(true)
}

fn theorems_cmd(a: &TheoremArgs) -> Result<bool> {
    let mut reports: Vec<Theorem1Report> = Vec::new();
    for (i, &d) in a.dim.iter().enumerate() {
        for (j, &eta) in a.eta.iter().enumerate() {
            let seed = a.seed.wrapping_add((i * a.eta.len() + j) as u64);
            let prob = seeded_problem(d, eta, seed)?;
            let opts = Theorem1Options { seed, ..Theorem1Options::default() };
            reports.push(verify_theorem1(&prob, &opts).with_context(|| format!("d={d}, eta={eta}"))?);
        }
    }
    let limit = verify_theorem2(a.dim.iter().copied().max().unwrap_or(2).max(2), 8, a.seed)?;
    let mut w = output(a.out.as_deref())?;
    match a.format {
        Format::Json => {
            let doc = serde_json::json!({ "theorem1": reports, "theorem2": limit });
            writeln!(w, "{}", serde_json::to_string_pretty(&doc)?)?;
        }
        Format::Csv => {
            writeln!(w, "{}", Theorem1Report::CSV_HEADER)?;
            for r in &reports {
                writeln!(w, "{}", r.csv_row())?;
            }
        }
        Format::Text => {
            for r in &reports {
                writeln!(w, "{r}")?;
            }
            writeln!(w, "theorem2 d={} final deviation {:e} monotone {}", limit.d, limit.final_deviation(), limit.monotone)?;
        }
    }
    w.flush()?;
    let ok = reports.iter().all(Theorem1Report::passed) && limit.passed();
    if !ok {
        eprintln!("theorem checks flagged a residual above its threshold");
    }
    Ok(ok)
}

fn extract_cmd(a: &ExtractArgs) -> Result<bool> {
    let params = a.params.params()?;
    let descriptor = if a.descriptor {
        load_tensor(&a.input)?
    } else {
        normalized_hotd(&load_features(&a.input)?, a.order)?
    };
    let rep = extract_representation(&descriptor, &params)?;
    let mut w = output(a.out.as_deref())?;
    match a.format {
        Format::Json => writeln!(w, "{}", serde_json::to_string(&rep)?)?,
        Format::Csv => writeln!(w, "{}", rep.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))?,
        Format::Text => {
            for v in &rep {
                writeln!(w, "{v:.12e}")?;
            }
        }
    }
    w.flush()?;
    Ok(true)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::RunSuite(a) => run_suite_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Theorems(a) => theorems_cmd(a),
        Command::Demo(a) => demo::run(a),
        Command::Extract(a) => extract_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn odd_eta_rounding_is_on_by_default() {
        let cli = Cli::try_parse_from(["hopool", "extract", "--input", "x.csv", "--eta", "7"]).unwrap();
        let Command::Extract(a) = cli.command else { panic!("expected extract") };
        let p = a.params.params().unwrap();
        assert_eq!(p.eta_for(3).unwrap().used, 9);
        assert_eq!(p.eta_for(2).unwrap().used, 7);
    }

    #[test]
    fn split_and_eta_lists_parse() {
        let cli = Cli::try_parse_from(["hopool", "bench", "--eta", "2,4,8"]).unwrap();
        let Command::Bench(a) = cli.command else { panic!("expected bench") };
        assert_eq!(a.eta, vec![2, 4, 8]);
        assert!(Cli::try_parse_from(["hopool", "demo", "--split", "5:2"]).is_ok());
        assert!(Cli::try_parse_from(["hopool", "demo", "--split", "5:x"]).is_err());
    }
}
