use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sgap_core::pipeline::{
    load_study, persist_study, run_induce, run_prime, usable_primes, write_study, PrimeRecord,
    RunOptions, Stages, Study, StudyConfig,
};
use sgap_core::Exec;

/// Spectral-gap induction studies over finite quotients of matrix groups.
#[derive(Parser, Debug)]
#[command(name = "sgap", version)]
struct Cli {
    /// Study configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated primes replacing the configured range.
    #[arg(long, global = true, value_delimiter = ',')]
    primes: Option<Vec<u64>>,
    /// Group-table cache directory.
    #[arg(long, global = true, env = "SGAP_CACHE_DIR")]
    cache: Option<PathBuf>,
    /// Worker threads for the data-parallel kernels.
    #[arg(long, global = true, env = "SGAP_THREADS")]
    threads: Option<usize>,
    /// Residual tolerance for iterative eigenvalue solves.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Enumeration budget in group elements.
    #[arg(long, global = true)]
    max_elements: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Orders of both images modulo each prime.
    Enumerate,
    /// lambda for omega1 and omega2 modulo each prime.
    Spectrum,
    /// Lie lattices, conjugator certificate and saturation.
    Liegen,
    /// Greedy, fold and congruence coverage.
    Cover,
    /// Grade generation in set and grade-map form.
    Grades,
    /// The whole chain; writes a study file.
    Induce {
        /// Study file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute a stored study and compare every field.
    Verify {
        /// Study file written by `induce`.
        #[arg(long)]
        study: PathBuf,
    },
}

fn load(cli: &Cli) -> Result<Study> {
    let path = cli.config.as_ref().context("--config is required")?;
    let mut cfg = StudyConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(p) = &cli.primes {
        cfg.primes = p.clone();
    }
    Ok(Study::new(cfg)?)
}

fn opt_f(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.12}"))
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map_or("-".into(), |v| v.to_string())
}

fn list<T: ToString>(xs: &[T]) -> String {
    if xs.is_empty() {
        return "-".into();
    }
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn words(xs: &[String]) -> String {
    if xs.is_empty() {
        return "-".into();
    }
    xs.iter()
        .map(|w| if w.is_empty() { "e".to_string() } else { w.clone() })
        .collect::<Vec<_>>()
        .join(" ")
}

fn table(stages: Stages, header: &[&str], row: impl Fn(&PrimeRecord) -> Vec<String>, study: &Study, opts: &RunOptions) -> bool {
    let (primes, skipped) = usable_primes(study);
    for p in &skipped {
        log::warn!("skipping p = {p}: divides q0");
    }
    println!("{}", header.join("\t"));
    for p in primes {
        let r = run_prime(study, p, stages, opts);
        println!("{}", row(&r).join("\t"));
        for n in &r.notes {
            log::info!("p = {p}: {n}");
        }
    }
    skipped.is_empty()
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(t) = cli.threads {
        if !sgap_core::exec::configure_threads(t) {
            log::warn!("thread count {t} not applied");
        }
    }
    let study = load(&cli)?;
    let opts = RunOptions {
        exec: Exec::default(),
        cache_dir: cli.cache.clone(),
        max_elements: cli.max_elements,
        tol: cli.tol,
    };
    let ok = match &cli.command {
        Command::Enumerate => table(
            Stages { enumerate: true, ..Stages::NONE },
            &["p", "order1", "order2"],
            |r| vec![r.p.to_string(), opt(r.order1), opt(r.order2)],
            &study,
            &opts,
        ),
        Command::Spectrum => table(
            Stages { spectrum: true, ..Stages::NONE },
            &["p", "order1", "lambda1", "order2", "lambda2"],
            |r| vec![r.p.to_string(), opt(r.order1), opt_f(r.lambda1), opt(r.order2), opt_f(r.lambda2)],
            &study,
            &opts,
        ),
        Command::Liegen => table(
            Stages { lie: true, ..Stages::NONE },
            &["p", "depth", "rank2", "rank1", "saturated", "complete", "open_image_l", "conjugators"],
            |r| {
                vec![
                    r.p.to_string(),
                    opt(r.lie_depth),
                    opt(r.lie_rank2),
                    opt(r.lie_rank1),
                    opt(r.lie_saturated_rank),
                    opt(r.conjugators_complete),
                    opt(r.open_image_l),
                    words(&r.conjugator_words),
                ]
            },
            &study,
            &opts,
        ),
        Command::Cover => table(
            Stages { cover: true, congruence: true, lie: true, ..Stages::NONE },
            &["p", "covered", "copies", "fold_min", "congruence_reached", "image_sizes", "greedy_words"],
            |r| {
                vec![
                    r.p.to_string(),
                    opt(r.greedy_covered),
                    opt(r.greedy_fold),
                    opt(r.fold_min),
                    opt(r.congruence_reached),
                    list(&r.greedy_image_sizes),
                    words(&r.greedy_words),
                ]
            },
            &study,
            &opts,
        ),
        Command::Grades => table(
            Stages { grades: true, lie: true, ..Stages::NONE },
            &["p", "k", "set_form", "psi_form", "agree", "method"],
            |r| {
                vec![
                    r.p.to_string(),
                    list(&r.grade_levels),
                    list(&r.grade_set_form),
                    list(&r.grade_psi_form),
                    list(&r.grade_agree),
                    list(&r.grade_methods),
                ]
            },
            &study,
            &opts,
        ),
        Command::Induce { out } => {
            let cert = run_induce(&study, &opts);
            match out {
                Some(path) => {
                    persist_study(&cert, path)?;
                    let s = &cert.summary;
                    println!("study\t{}", s.name);
                    println!("primes\t{}", list(&s.primes));
                    println!("induced\t{}", list(&s.induced_primes));
                    println!("failed\t{}", list(&s.failed_primes));
                    println!("max_lambda1\t{}", opt_f(s.max_lambda1));
                    println!("max_lambda2\t{}", opt_f(s.max_lambda2));
                    println!("max_lambda_prime\t{}", opt_f(s.max_lambda_prime));
                }
                None => write_study(&cert, std::io::stdout().lock())?,
            }
            cert.summary.skipped_primes.is_empty() && cert.records.len() == cert.summary.primes.len()
        }
        Command::Verify { study: path } => {
            let stored = load_study(path).with_context(|| format!("reading {}", path.display()))?;
            let report = sgap_core::pipeline::verify_study(&study, &stored, &opts);
            let mut out = std::io::stdout().lock();
            for m in &report.mismatches {
                writeln!(out, "mismatch\t{}\t{}\tstored={}\trecomputed={}", opt(m.p), m.field, m.stored, m.recomputed)?;
            }
            writeln!(out, "verified\t{}\t{}", list(&report.checked_primes), if report.confirmed() { "confirmed" } else { "MISMATCH" })?;
            if !report.confirmed() {
                bail!("{} field(s) differ from the recomputation", report.mismatches.len());
            }
            true
        }
    };
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
