//! Command line front end for the combilab library.
//!
//! Every subcommand either prints one JSON report to stdout or, for the
//! study commands, writes `<study>.csv`, `<study>.json` and `<study>.svg`
//! under `--out-dir`. Exit codes: 0 success, 2 config or parameter error,
//! 3 capacity error, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use combilab_core::concentration::{self, DiscreteDist, MarkovReport};
use combilab_core::{Error, Result};
use combilab_core::experiments::{
    self, ExperimentConfig, FitResult, StudyResult,
};
use combilab_core::geometry::{clcd_estimate, ClcdParams};
use combilab_core::moments::{moment_report, OracleMode};
use combilab_core::report::{parse_config, write_outputs};
use combilab_core::sampler::{sample_matrix, SeedSpec};
use combilab_core::spectral;

#[derive(Parser)]
#[command(
    name = "combilab",
    version,
    about = "Spectral experiments on random 0/1 matrices with constant row sums"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample one matrix and print it as 0/1 text rows
    Sample(SampleArgs),
    /// Sample one square matrix and print its spectral summary as JSON
    Spectrum(SpectrumArgs),
    /// Certified arithmetic-structure brackets for vectors from a file
    Clcd(ClcdArgs),
    /// Concentration function of the row inner product with a vector
    Levy(LevyArgs),
    /// Empirical inner-product tail against the sub-Gaussian bound
    SliceCheck(SliceArgs),
    /// Rate of small image norm for a fixed direction
    DirectionRate(DirectionArgs),
    /// Averaging inequality check for independent nonnegative variables
    MarkovCheck(MarkovArgs),
    /// Closed-form residual second moment against an independent oracle
    MomentsCheck(MomentsArgs),
    /// Smallest singular value scaling across the grid
    ScalingStudy(StudyArgs),
    /// Tail probabilities of the smallest singular value
    TailStudy(StudyArgs),
    /// Condition number growth across the grid
    ConditionStudy(StudyArgs),
    /// Centered operator norm against the sqrt(d) prediction
    OpnormStudy(StudyArgs),
    /// Singularity rate across the grid
    SingularityStudy(StudyArgs),
    /// Image norms of almost-constant directions
    ConsStudy(StudyArgs),
}

#[derive(Args)]
struct SampleArgs {
    /// Number of columns
    #[arg(long)]
    n: usize,
    /// Ones per row
    #[arg(long)]
    d: usize,
    /// Number of rows (defaults to n)
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trial index within the seed stream
    #[arg(long, default_value_t = 0)]
    trial: u64,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    trial: u64,
}

#[derive(Args)]
struct ClcdArgs {
    /// File with one whitespace-separated vector per line
    #[arg(long)]
    vector_file: PathBuf,
    /// Accuracy level (default delta*rho/24 with delta = rho = 0.05)
    #[arg(long)]
    gamma: Option<f64>,
    /// Norm floor on the phase (default 0.1 n)
    #[arg(long)]
    alpha: Option<f64>,
    /// Largest phase magnitude scanned (default 4 sqrt(n))
    #[arg(long)]
    theta_max: Option<f64>,
    /// Scan grid step (default theta_max / 1000)
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Args)]
struct LevyArgs {
    /// File with one whitespace-separated vector per line; first line is used
    #[arg(long)]
    vector_file: PathBuf,
    /// Ones per row
    #[arg(long)]
    d: usize,
    /// Half-width of the concentration window
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SliceArgs {
    /// File with one whitespace-separated vector per line; first line is used
    #[arg(long)]
    vector_file: PathBuf,
    /// Ones per row
    #[arg(long)]
    d: usize,
    /// Deviation threshold
    #[arg(long)]
    t: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DirectionArgs {
    /// File with one whitespace-separated vector per line; first line is
    /// used after normalization
    #[arg(long)]
    vector_file: PathBuf,
    /// Number of rows
    #[arg(long)]
    m: usize,
    /// Ones per row
    #[arg(long)]
    d: usize,
    /// Threshold scale: the image norm is compared against c sqrt(pn)
    #[arg(long, default_value_t = 0.5)]
    c: f64,
    #[arg(long, default_value_t = 1_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MarkovArgs {
    /// JSON file: a list of distributions, each a list of [value, prob] atoms
    #[arg(long)]
    dist_file: PathBuf,
    #[arg(long)]
    eps: f64,
    /// Monte Carlo draws when the joint support exceeds the exact budget
    #[arg(long, default_value_t = 100_000)]
    mc_trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MomentsArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    /// Force full enumeration of the matrix space
    #[arg(long, conflicts_with = "mc")]
    exact: bool,
    /// Force Monte Carlo with this many draws
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StudyArgs {
    /// JSON config file (a built-in default grid is used when absent)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for <study>.csv/.json/.svg
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the configured trial count
    #[arg(long)]
    trials: Option<usize>,
    /// Override the configured master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Enumerate every matrix instead of sampling
    #[arg(long)]
    exact: bool,
}

fn read_vectors(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut v = Vec::with_capacity(8);
        for tok in line.split_whitespace() {
            let x: f64 = tok.parse().map_err(|_| {
                Error::InvalidParameter(format!(
                    "{}:{}: not a number: {tok:?}",
                    path.display(),
                    idx + 1
                ))
            })?;
            v.push(x);
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{}: no vectors found",
            path.display()
        )));
    }
    Ok(out)
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidParameter(
            "vector must be nonzero with finite entries".into(),
        ));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("report serializes")
    );
}

fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let m = args.m.unwrap_or(args.n);
    let seeds = SeedSpec::for_experiment(args.seed, "sample");
    let mat = sample_matrix(m, args.n, args.d, &seeds, args.trial)?;
    let mut line = String::with_capacity(2 * args.n);
    for i in 0..m {
        line.clear();
        let dense = mat.row(i).to_dense();
        for (j, x) in dense.iter().enumerate() {
            if j > 0 {
                line.push(' ');
            }
            line.push(if *x == 1.0 { '1' } else { '0' });
        }
        println!("{line}");
    }
    Ok(())
}

fn cmd_spectrum(args: &SpectrumArgs) -> Result<()> {
    let seeds = SeedSpec::for_experiment(args.seed, "spectrum");
    let mat = sample_matrix(args.n, args.n, args.d, &seeds, args.trial)?;
    let summary = spectral::spectrum(&mat)?;
    print_json(&summary);
    Ok(())
}

fn cmd_clcd(args: &ClcdArgs) -> Result<()> {
    let vectors = read_vectors(&args.vector_file)?;
    for v in &vectors {
        let v = normalized(v)?;
        let n = v.len() as f64;
        let theta_max = args.theta_max.unwrap_or(4.0 * n.sqrt());
        let params = ClcdParams::new(
            args.gamma.unwrap_or(0.05 * 0.05 / 24.0),
            args.alpha.unwrap_or(0.1 * n),
            theta_max,
            args.step.unwrap_or(1e-3 * theta_max),
        )?;
        let est = clcd_estimate(&v, &params)?;
        println!(
            "{}",
            serde_json::to_string(&est).expect("report serializes")
        );
    }
    Ok(())
}

fn cmd_levy(args: &LevyArgs) -> Result<()> {
    let v = &read_vectors(&args.vector_file)?[0];
    if args.trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let seeds = SeedSpec::for_experiment(args.seed, "levy");
    let mut samples = Vec::with_capacity(args.trials);
    for trial in 0..args.trials {
        let mut rng = seeds.row_rng(trial as u64, 0);
        let row = combilab_core::sampler::sample_row(v.len(), args.d, &mut rng)?;
        samples.push(row.dot(v));
    }
    let est = concentration::levy_estimate(&samples, args.eps)?;
    print_json(&est);
    Ok(())
}

fn cmd_slice_check(args: &SliceArgs) -> Result<()> {
    let v = &read_vectors(&args.vector_file)?[0];
    let seeds = SeedSpec::for_experiment(args.seed, "slice-check");
    let report =
        concentration::slice_tail_check(v, args.d, args.t, args.trials, &seeds)?;
    print_json(&report);
    Ok(())
}

fn cmd_direction_rate(args: &DirectionArgs) -> Result<()> {
    let v = normalized(&read_vectors(&args.vector_file)?[0])?;
    let seeds = SeedSpec::for_experiment(args.seed, "direction-rate");
    let report = concentration::direction_rate(
        &v, args.m, args.d, args.c, args.trials, &seeds,
    )?;
    print_json(&report);
    Ok(())
}

fn parse_dists(path: &Path) -> Result<Vec<DiscreteDist>> {
    let text = fs::read_to_string(path)?;
    let raw: Vec<Vec<(f64, f64)>> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    raw.into_iter().map(DiscreteDist::new).collect()
}

fn cmd_markov_check(args: &MarkovArgs) -> Result<MarkovReport> {
    let dists = parse_dists(&args.dist_file)?;
    let seeds = SeedSpec::for_experiment(args.seed, "markov-check");
    concentration::markov_avg_check(&dists, args.eps, args.mc_trials, &seeds)
}

fn cmd_moments_check(args: &MomentsArgs) -> Result<()> {
    let mode = if args.exact {
        OracleMode::Exact
    } else if let Some(trials) = args.mc {
        OracleMode::MonteCarlo { trials }
    } else {
        OracleMode::Auto {
            mc_trials: 100_000,
        }
    };
    let seeds = SeedSpec::for_experiment(args.seed, "moments-check");
    let report = moment_report(args.n, args.d, mode, &seeds)?;
    print_json(&report);
    Ok(())
}

struct StudyPlan {
    name: &'static str,
    run: fn(&ExperimentConfig) -> Result<StudyResult>,
    /// Statistic plotted in the SVG; None picks the first emitted stat.
    plot_stat: Option<&'static str>,
    plot_fit: bool,
    reference_label: &'static str,
}

fn study_plan(cmd: &Cmd) -> StudyPlan {
    match cmd {
        Cmd::ScalingStudy(_) => StudyPlan {
            name: "scaling",
            run: experiments::run_scaling_study,
            plot_stat: Some("sn"),
            plot_fit: true,
            reference_label: "reference slope sqrt(d)/n",
        },
        Cmd::TailStudy(_) => StudyPlan {
            name: "tail",
            run: experiments::run_tail_study,
            plot_stat: None,
            plot_fit: false,
            reference_label: "reference slope sqrt(d)/n",
        },
        Cmd::ConditionStudy(_) => StudyPlan {
            name: "condition",
            run: experiments::run_condition_study,
            plot_stat: Some("kappa_invertible"),
            plot_fit: false,
            reference_label: "reference slope sqrt(d)/n",
        },
        Cmd::OpnormStudy(_) => StudyPlan {
            name: "opnorm",
            run: experiments::run_opnorm_study,
            plot_stat: Some("opnorm_ratio"),
            plot_fit: false,
            reference_label: "reference slope sqrt(d)/n",
        },
        Cmd::SingularityStudy(_) => StudyPlan {
            name: "singularity",
            run: experiments::run_singularity_study,
            plot_stat: Some("singular_rate"),
            plot_fit: false,
            reference_label: "reference slope sqrt(d)/n",
        },
        Cmd::ConsStudy(_) => StudyPlan {
            name: "cons",
            run: experiments::run_cons_study,
            plot_stat: Some("min_ratio"),
            plot_fit: false,
            reference_label: "reference slope sqrt(d)/n",
        },
        _ => unreachable!("not a study command"),
    }
}

fn effective_config(args: &StudyArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => parse_config(&fs::read_to_string(path)?)?,
        None => experiments::default_config(),
    };
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.exact {
        cfg.exact = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_study(plan: &StudyPlan, args: &StudyArgs) -> Result<()> {
    let cfg = effective_config(args)?;
    let result = (plan.run)(&cfg)?;
    let stat = match plan.plot_stat {
        Some(s) => s.to_string(),
        None => result
            .points
            .first()
            .and_then(|p| p.stats.first())
            .map(|s| s.stat.clone())
            .ok_or_else(|| Error::InvalidParameter("empty study result".into()))?,
    };
    let fit: Option<&FitResult> = if plan.plot_fit {
        result.fit.as_ref()
    } else {
        None
    };
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let files =
        write_outputs(&result, fit, &stat, plan.reference_label, &out_dir)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(reason) = &files.svg_skipped {
        eprintln!("warning: plot skipped: {reason}");
    }
    if let Some(f) = &result.fit {
        println!(
            "{} fit: slope {:.4}, intercept {:.4}, r2 {:.4}",
            plan.name, f.slope, f.intercept, f.r_squared
        );
    }
    print!("wrote {}", files.csv.display());
    print!(", {}", files.json.display());
    if let Some(svg) = &files.svg {
        print!(", {}", svg.display());
    }
    println!();
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Sample(a) => cmd_sample(a),
        Cmd::Spectrum(a) => cmd_spectrum(a),
        Cmd::Clcd(a) => cmd_clcd(a),
        Cmd::Levy(a) => cmd_levy(a),
        Cmd::SliceCheck(a) => cmd_slice_check(a),
        Cmd::DirectionRate(a) => cmd_direction_rate(a),
        Cmd::MarkovCheck(a) => {
            let report = cmd_markov_check(a)?;
            print_json(&report);
            Ok(())
        }
        Cmd::MomentsCheck(a) => cmd_moments_check(a),
        Cmd::ScalingStudy(a)
        | Cmd::TailStudy(a)
        | Cmd::ConditionStudy(a)
        | Cmd::OpnormStudy(a)
        | Cmd::SingularityStudy(a)
        | Cmd::ConsStudy(a) => run_study(&study_plan(&cli.cmd), a),
    }
}

fn main() -> ExitCode {
    if let Ok(raw) = std::env::var("COMBILAB_THREADS") {
        match raw.trim().parse::<usize>() {
            Ok(k) if k > 0 => {
                // Ignore the error from a pool that is already built; the
                // variable must never change results, only parallelism.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global();
            }
            _ => {
                eprintln!(
                    "error: COMBILAB_THREADS must be a positive integer, got {raw:?}"
                );
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
