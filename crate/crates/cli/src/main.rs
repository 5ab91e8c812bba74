//! `brwlab` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid configuration or failed
//! run, 3 a statistical or property check failed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brwlab::appendix_props::run_suite;
use brwlab::config::{emit, parse_config, RunConfig};
use brwlab::io::{self, write_text};
use brwlab::lab::run_experiment;
use brwlab::regimes::{compute_group, linspace, snail_curves, GroupOptions};
use brwlab::simulator::{run_replicas, SimConfig};
use brwlab::{Classifier, Complex64};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "brwlab", version, about = "Monte Carlo laboratory for complex branching random walk martingales")]
struct Cli {
    /// Configuration file; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify the configured parameters and print their regimes.
    Classify {
        /// Extra parameter as `re,im`; may be repeated.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        lambda: Vec<[f64; 2]>,
    },
    /// Classify a grid of parameters; writes regime_map.csv and regime_map.svg.
    RegimeMap,
    /// Simulate replicas; writes replicas.csv for the first parameter.
    Simulate,
    /// Run the configured experiment; writes report.txt and sample CSVs.
    Experiment,
    /// Run the inequality and cancellation property suite.
    Props,
    /// Compute the weight group and its snail curves.
    Group,
    /// Print the effective configuration with every default filled in.
    ShowConfig,
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected re,im, got '{s}'"))?;
    let re = a.trim().parse::<f64>().map_err(|e| format!("{a}: {e}"))?;
    let im = b.trim().parse::<f64>().map_err(|e| format!("{b}: {e}"))?;
    Ok([re, im])
}

enum Failure {
    Invalid(String),
    Check(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn load(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let text = match path {
        Some(p) => io::read_text(p)?,
        None => String::new(),
    };
    parse_config(&text).map_err(|e| match path {
        Some(p) => Failure::Invalid(format!("{}: {e}", p.display())),
        None => Failure::Invalid(e.to_string()),
    })
}

fn out_file(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.resolved_output_dir().join(name)
}

fn write(cfg: &RunConfig, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    let path = out_file(cfg, name);
    write_text(&path, contents)?;
    Ok(path)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load(cli.config.as_deref())?;
    if cfg.threads > 0 {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let law = cfg.law()?;
    match cli.command {
        Command::ShowConfig => print!("{}", emit(&cfg)?),
        Command::Classify { lambda } => {
            let cl = Classifier::new(law);
            if let Some(b) = cl.boundary() {
                println!("theta_star: {:.16e}", b.theta_star);
            }
            for l in cfg.classify.lambda.iter().chain(&lambda) {
                let label = cl.classify_any(Complex64::new(l[0], l[1]));
                println!("{:.16e} {:.16e} {}", l[0], l[1], label.describe());
            }
        }
        Command::RegimeMap => {
            let rm = &cfg.regime_map;
            let cells = Classifier::new(law).regime_map(
                &linspace(rm.theta[0], rm.theta[1], rm.theta_points),
                &linspace(rm.eta[0], rm.eta[1], rm.eta_points),
            );
            write(&cfg, "config.toml", &emit(&cfg)?)?;
            println!("{}", write(&cfg, "regime_map.csv", &io::regime_map_csv(&cells))?.display());
            println!("{}", write(&cfg, "regime_map.svg", &io::regime_map_svg(&cells))?.display());
        }
        Command::Simulate => {
            let s = &cfg.simulate;
            let params: Vec<Complex64> = s.lambda.iter().map(|l| Complex64::new(l[0], l[1])).collect();
            let mut sim = SimConfig::new(s.n, s.extra_m, params, brwlab::rng::derive_seed(cfg.master_seed, "simulate"))
                .with_tips(s.tip_k);
            if s.boundary {
                let b = *Classifier::new(law.clone())
                    .boundary()
                    .ok_or_else(|| Failure::Invalid("simulate.boundary: the law has no boundary parameter".into()))?;
                sim = sim.with_boundary(b);
            }
            if let Some(c) = s.prune_above {
                sim = sim.with_pruning(c);
            }
            let reps = run_replicas(&law, &sim, 0..s.replicas as u64)?;
            write(&cfg, "config.toml", &emit(&cfg)?)?;
            println!("{}", write(&cfg, "replicas.csv", &io::replicas_csv(&reps, 0))?.display());
            let extinct = reps.iter().filter(|r| r.extinct).count();
            let nodes: u64 = reps.iter().map(|r| r.nodes).sum();
            println!("replicas: {}\nextinct: {extinct}\nnodes: {nodes}", reps.len());
        }
        Command::Experiment => {
            let spec = cfg.experiment_spec()?;
            let outcome = run_experiment(&spec)?;
            write(&cfg, "config.toml", &emit(&cfg)?)?;
            if cfg.experiment.dump_samples {
                for (name, set) in &outcome.samples {
                    write(&cfg, &format!("samples_{name}.csv"), &set.to_csv_string())?;
                }
            }
            let text = outcome.report.to_text();
            println!("{}", write(&cfg, "report.txt", &text)?.display());
            print!("{text}");
            if !outcome.report.all_passed() {
                return Err(Failure::Check("experiment checks failed".into()));
            }
        }
        Command::Props => {
            let report = run_suite(cfg.props.sizes(), cfg.master_seed)?;
            let mut text = String::new();
            let _ = writeln!(text, "seed: {}", report.seed);
            for (p, r) in &report.tv {
                let _ = writeln!(text, "tv.p{p}: trials {} violations {} max_ratio {:.6}", r.trials, r.violations, r.max_ratio);
            }
            for (p, r) in &report.parallelogram {
                let _ = writeln!(text, "parallelogram.p{p}: points {} violations {} max_ratio {:.15}", r.points, r.violations, r.max_ratio);
            }
            for (name, r) in &report.tail {
                let _ = writeln!(text, "tail.{name}: eps {} violations {}", r.rows.len(), r.violations);
            }
            for (name, r) in &report.cancellation {
                let _ = writeln!(text, "cancellation.{name}: slope {:.6} r2 {:.6} passed {}", r.slope, r.r2, r.passed);
            }
            let _ = writeln!(text, "violations: {}", report.violations());
            write(&cfg, "config.toml", &emit(&cfg)?)?;
            write(&cfg, "props_report.txt", &text)?;
            print!("{text}");
            if !report.passed() {
                return Err(Failure::Check("property violations found".into()));
            }
        }
        Command::Group => {
            let g = &cfg.group;
            let lambda = Complex64::new(g.lambda[0], g.lambda[1]);
            let opts = GroupOptions { denominator_cap: g.denominator_cap, tolerance: g.tolerance };
            let group = compute_group(&law, lambda, &opts)?;
            let curves = snail_curves(&group, lambda, (g.snail_x[0], g.snail_x[1]), g.snail_samples);
            write(&cfg, "config.toml", &emit(&cfg)?)?;
            write(&cfg, "snail.csv", &io::snail_csv(&curves))?;
            write(&cfg, "snail.svg", &io::snail_svg(&curves))?;
            println!("full_circle: {}", group.full_circle);
            match group.u1_order {
                Some(q) => println!("u1_order: {q}"),
                None => println!("u1_order: infinite"),
            }
            println!("w: {:.16e} {:+.16e}i", group.w.re, group.w.im);
            println!("phase: {:.16e}", group.phase);
            println!("rationality: {:?}", group.rationality);
            println!("curves: {}", curves.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}
