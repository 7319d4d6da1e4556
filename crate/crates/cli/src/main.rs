use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use reserve_caching::accounting::{audit, PotentialRecorder};
use reserve_caching::dual::{certify, summary_line};
use reserve_caching::engine::{run_trace, run_trace_observed, InvariantChecker};
use reserve_caching::instance::{load_instance, Instance};
use reserve_caching::opt::{brute_opt_with_limit, MAX_UNIVERSE};
use reserve_caching::paging::{check_fm_bound, fm_run, rm_sample_stats};
use reserve_caching::ratio::fmt_exact;
use reserve_caching::rounding::run_randomized;
use reserve_caching::suite::{format_line, run_suite, SuiteConfig};
use reserve_caching::workload::{generate, Model, WorkloadSpec};

/// Simulator, verifier and certificate generator for caching with per-agent
/// reserves. Exit status is 0 when every check passes, 1 when a check fails
/// and 2 on usage or I/O errors.
#[derive(Parser)]
#[command(name = "rcache", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TraceArg {
    /// Trace file (JSON).
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic trace.
    Gen {
        #[arg(long, value_parser = parse_model)]
        model: Model,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: usize,
        /// Comma-separated reserve per agent.
        #[arg(long, value_delimiter = ',')]
        reserves: Vec<usize>,
        /// Comma-separated page count per agent.
        #[arg(long, value_delimiter = ',')]
        pages_per_agent: Vec<usize>,
        /// Number of requests.
        #[arg(long)]
        t: usize,
        #[arg(long, default_value_t = 1.0)]
        zipf_exponent: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the fractional engine with invariant and potential checks.
    Run {
        #[command(flatten)]
        trace: TraceArg,
        /// Directory for steps.csv, phases.json and accounting.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build and check the dual certificate.
    Certify {
        #[command(flatten)]
        trace: TraceArg,
        /// Certificate JSON file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the randomized integral algorithm with per-step audits.
    Round {
        #[command(flatten)]
        trace: TraceArg,
        /// Seed for the follow index.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of ensemble states instead of k³.
        #[arg(long)]
        n_override: Option<u64>,
        /// Audit CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact offline optimum by brute force.
    Opt {
        #[command(flatten)]
        trace: TraceArg,
        #[arg(long, default_value_t = MAX_UNIVERSE)]
        oracle_max_universe: usize,
    },
    /// Classic paging: fractional marking, its bound and randomized marking.
    Paging {
        #[command(flatten)]
        trace: TraceArg,
        /// First seed of the randomized marking sample.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of randomized marking runs.
        #[arg(long, default_value_t = 10_000)]
        samples: u64,
        /// Per-step FM CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The full acceptance battery.
    Suite {
        /// Master seed of the main batch.
        #[arg(long, default_value_t = SuiteConfig::default().seed)]
        seed: u64,
        #[arg(long)]
        n_override: Option<u64>,
        #[arg(long, default_value_t = SuiteConfig::default().oracle_max_universe)]
        oracle_max_universe: usize,
        /// Directory for the report files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_model(s: &str) -> Result<Model, String> {
    s.parse()
        .map_err(|e: reserve_caching::workload::WorkloadError| e.to_string())
}

fn load(t: &TraceArg) -> Result<Instance> {
    load_instance(&t.trace).with_context(|| format!("loading {}", t.trace.display()))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every check passed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen {
            model,
            m,
            k,
            reserves,
            pages_per_agent,
            t,
            zipf_exponent,
            seed,
            out,
        } => {
            let spec = WorkloadSpec {
                model,
                m,
                k,
                reserves,
                pages_per_agent,
                t,
                zipf_exponent,
                seed,
            };
            let json = generate(&spec)?.trace().to_canonical_json();
            match out {
                Some(path) => fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?,
                None => println!("{json}"),
            }
            Ok(true)
        }
        Command::Run { trace, out } => {
            let inst = load(&trace)?;
            let mut obs = (InvariantChecker::new(), PotentialRecorder::new());
            let (log, cost) = run_trace_observed(&inst, &mut obs)?;
            let (checker, recorder) = obs;
            let report = audit(&log, &recorder, inst.k(), inst.m());
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                log.write_csv(&inst, create(&dir.join("steps.csv"))?)?;
                fs::write(
                    dir.join("phases.json"),
                    serde_json::to_string_pretty(&log.phases_json(&inst))?,
                )?;
                fs::write(dir.join("accounting.json"), serde_json::to_string_pretty(&report)?)?;
            }
            println!(
                "cost={} steps={} phases={} invariant_violations={} accounting_clean={}",
                fmt_exact(&cost),
                log.steps.len(),
                log.phases.len(),
                checker.violations.len(),
                report.is_clean()
            );
            for v in checker.violations.iter().take(10) {
                println!("  t={} {}", v.t, v.what);
            }
            Ok(checker.is_clean() && report.is_clean())
        }
        Command::Certify { trace, out } => {
            let inst = load(&trace)?;
            let (log, _) = run_trace(&inst)?;
            let cert = certify(&inst, &log);
            if let Some(path) = out {
                fs::write(&path, serde_json::to_string_pretty(&cert.to_json())?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            println!("{}", summary_line(&cert));
            Ok(cert.valid)
        }
        Command::Round {
            trace,
            seed,
            n_override,
            out,
        } => {
            let inst = load(&trace)?;
            let run = run_randomized(&inst, seed, n_override)?;
            if let Some(path) = out {
                run.write_csv(create(&path)?)?;
            }
            println!(
                "N={} follow_index={} integral_cost={} expected_cost={} fractional_cost={} failures={} warnings={}",
                run.n,
                run.follow_index,
                run.integral_cost,
                fmt_exact(&run.expected_cost),
                fmt_exact(&run.fractional_cost),
                run.failures.len(),
                run.warnings.len()
            );
            for f in run.failures.iter().chain(&run.warnings).take(10) {
                println!("  t={} {}", f.t, f.what);
            }
            Ok(run.is_clean())
        }
        Command::Opt {
            trace,
            oracle_max_universe,
        } => {
            let inst = load(&trace)?;
            let opt = brute_opt_with_limit(&inst, oracle_max_universe)?;
            println!("opt_cost={}", opt.opt_cost);
            let u = inst.universe();
            let mut stdout = io::stdout().lock();
            for (t, set) in opt.schedule.iter().enumerate() {
                let names: Vec<String> = set.iter().map(|&p| u.page_ref(p).to_string()).collect();
                writeln!(stdout, "  {}: {{{}}}", t + 1, names.join(", "))?;
            }
            Ok(true)
        }
        Command::Paging {
            trace,
            seed,
            samples,
            out,
        } => {
            let inst = load(&trace)?;
            let fm = fm_run(&inst)?;
            let bound = check_fm_bound(&fm);
            if let Some(path) = out {
                let mut f = create(&path)?;
                writeln!(f, "t,phase,cost,psi_before,psi_after")?;
                for s in &fm.steps {
                    writeln!(
                        f,
                        "{},{},{},{},{}",
                        s.t,
                        s.phase,
                        fmt_exact(&s.cost),
                        s.psi_before,
                        s.psi_after
                    )?;
                }
            }
            if samples < 2 {
                bail!("--samples must be at least 2");
            }
            let (mean, se) = rm_sample_stats(&inst, seed..seed.saturating_add(samples));
            println!(
                "fm_cost={} sum_ell={} bound={:.6} holds={} rm_mean={mean:.6} rm_std_error={se:.6}",
                bound.cost, bound.sum_ell, bound.rhs, bound.holds
            );
            Ok(bound.holds)
        }
        Command::Suite {
            seed,
            n_override,
            oracle_max_universe,
            out,
        } => {
            let cfg = SuiteConfig {
                seed,
                n_override,
                oracle_max_universe,
                ..SuiteConfig::default()
            };
            let outputs = run_suite(&cfg);
            if let Some(dir) = out {
                outputs
                    .write(&dir)
                    .with_context(|| format!("writing {}", dir.display()))?;
            }
            for c in &outputs.criteria {
                println!("{}", format_line(c));
            }
            let summary = outputs.batch.summary();
            println!("{}", serde_json::to_string(&summary)?);
            Ok(outputs.passed())
        }
    }
}
