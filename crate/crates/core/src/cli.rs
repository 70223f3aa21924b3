//! The `sphmmd` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::batch::EmbeddingBatch;
use crate::bench::{default_sweeps, run_sweeps, Sweep, Variable, MIN_REPEATS};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::harmonics::{embedding_moment_stats, HarmonicBasis};
use crate::io::{format_f64, read_matrix_csv, write_matrix_csv};
use crate::kernels::{
    gendist_coefficients, gendist_coefficients_quadrature, rbf_coefficient_bound, rbf_coefficients,
    KernelSpec,
};
use crate::losses::{objective, LossReport, LossWeights, Regularizer};
use crate::optimizer::{generate_two_view_data, minimize, Trajectory};
use crate::presets::find_preset;
use crate::sampling::{sample_uniform_sphere, UniformReference};
use crate::verify::{run_suite, Check};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sphmmd", version, about = "Spherical kernel MMD regularizers")]
pub struct Cli {
    /// Experiment TOML.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the Legendre coefficients of a kernel as CSV.
    Expand(ExpandArgs),
    /// Run self-checks and print them as JSON.
    Verify(VerifyArgs),
    /// Optimize synthetic two-view embeddings from a config.
    Minimize,
    /// Time the regularizers and fit scaling exponents.
    Bench(BenchArgs),
    /// Loss and uniformity statistics of stored embeddings; sample and
    /// harmonic-basis exports.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    Rbf,
    Gendist,
    Truncated,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[arg(long, value_enum)]
    pub kernel: KernelKind,
    #[arg(long)]
    pub q: usize,
    #[arg(long, default_value_t = 20)]
    pub order: usize,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
    /// `l:b_l` pairs, e.g. `1:1,2:40`.
    #[arg(long)]
    pub coeffs: Option<String>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "all")]
    pub suite: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = MIN_REPEATS)]
    pub repeats: usize,
    /// Small sizes, for a smoke run.
    #[arg(long)]
    pub quick: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// First view, one embedding per row.
    #[arg(long)]
    pub z1: Option<PathBuf>,
    /// Second view; defaults to the first.
    #[arg(long)]
    pub z2: Option<PathBuf>,
    #[arg(long, default_value = "sfrik")]
    pub loss: Regularizer,
    /// Preset for weights and kernel, scaled to the data dimension.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 4096)]
    pub reference_samples: usize,
    /// Write this many uniform samples to `<out>/uniform_samples.csv`.
    #[arg(long)]
    pub export_samples: Option<usize>,
    /// Write `M_1` and `M_2` to `<out>/m1.csv`, `<out>/m2.csv`.
    #[arg(long)]
    pub export_harmonics: bool,
    /// Dimension for exports when no embeddings are given.
    #[arg(long)]
    pub q: Option<usize>,
}

/// Maps an error to its exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } | Error::Numerical(_) => EXIT_CHECK_FAILED,
        _ => EXIT_USAGE,
    }
}

/// Parses `l:b,l:b,...`.
pub fn parse_coefficients(text: &str) -> Result<Vec<(usize, f64)>> {
    text.split(',')
        .map(|pair| {
            let (l, b) = pair
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("expected l:b, got {pair:?}")))?;
            let l = l
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad order {l:?}")))?;
            Ok((l, crate::io::parse_f64(b.trim())?))
        })
        .collect()
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

/// `l,b_l,closed_form_b_l,bound` rows.
pub fn expand_csv(args: &ExpandArgs) -> Result<String> {
    let mut out = String::from("l,b_l,closed_form_b_l,bound\n");
    let mut push = |l: usize, b: f64, closed: Option<f64>, bound: Option<f64>| {
        out.push_str(&format!("{l},{},{},{}\n", format_f64(b), opt_cell(closed), opt_cell(bound)));
    };
    match args.kernel {
        KernelKind::Rbf => {
            let sigma = args
                .sigma
                .ok_or_else(|| Error::Config("--sigma is required for rbf".into()))?;
            for (l, b) in rbf_coefficients(args.q, sigma, args.order)?.into_iter().enumerate() {
                push(l, b, None, Some(rbf_coefficient_bound(args.q, sigma, l)?));
            }
        }
        KernelKind::Gendist => {
            let s = args
                .s
                .ok_or_else(|| Error::Config("--s is required for gendist".into()))?;
            let quad = gendist_coefficients_quadrature(args.q, s, args.order)?;
            let closed = gendist_coefficients(args.q, s, args.order)?;
            for (l, (b, c)) in quad.into_iter().zip(closed).enumerate() {
                push(l, b, Some(c), None);
            }
        }
        KernelKind::Truncated => {
            let text = args
                .coeffs
                .as_deref()
                .ok_or_else(|| Error::Config("--coeffs is required for truncated".into()))?;
            let spec = KernelSpec::truncated(args.q, &parse_coefficients(text)?)?;
            for &(l, b) in spec.coefficient_pairs() {
                push(l, b, None, None);
            }
        }
    }
    Ok(out)
}

/// Runs the configured experiment and writes the trajectory CSV, the summary
/// JSON and the final embeddings into `out` (or the configured directory).
pub fn cmd_minimize(config: &ExperimentConfig, seed: Option<u64>, out: Option<&Path>) -> Result<Trajectory> {
    let mut config = config.clone();
    if let Some(s) = seed {
        config.seed = s;
    }
    let resolved = config.resolve()?;
    let dir = out.map(Path::to_path_buf).unwrap_or(resolved.output.dir.clone());
    fs::create_dir_all(&dir)?;
    let data = generate_two_view_data(&resolved.data)?;
    let traj = minimize(&resolved.optim, &data)?;
    fs::write(dir.join(&resolved.output.trajectory), traj.to_csv())?;
    let summary = serde_json::to_string_pretty(&traj.summary(resolved.optim.loss))?;
    fs::write(dir.join(&resolved.output.summary), summary + "\n")?;
    let prefix = &resolved.output.embeddings_prefix;
    write_matrix_csv(&dir.join(format!("{prefix}_z1.csv")), &traj.z1)?;
    write_matrix_csv(&dir.join(format!("{prefix}_z2.csv")), &traj.z2)?;
    Ok(traj)
}

#[derive(Debug, Serialize)]
struct StatsOutput {
    loss: Regularizer,
    report: LossReport,
    mean_norm: f64,
    autocorr_dev: f64,
    mc_mmd: f64,
    mc_mmd_se: f64,
}

fn stats_setup(args: &StatsArgs, config: Option<&ExperimentConfig>, q: usize) -> Result<(LossWeights, KernelSpec)> {
    if let Some(name) = &args.preset {
        return find_preset(name)?.desk_scaled(q);
    }
    if let Some(cfg) = config {
        let r = cfg.resolve()?;
        if r.optim.kernel.q() != q {
            return Err(Error::Config(format!(
                "config is for q = {}, embeddings have q = {q}",
                r.optim.kernel.q()
            )));
        }
        return Ok((r.optim.weights, r.optim.kernel));
    }
    Ok((LossWeights::default(), KernelSpec::sfrik(q, 1.0, 40.0, 0.0)?))
}

fn cmd_stats(args: &StatsArgs, config: Option<&ExperimentConfig>, seed: u64, out: &Path) -> Result<String> {
    let mut printed = String::new();
    let mut q = args.q;
    if let Some(p1) = &args.z1 {
        let m1 = read_matrix_csv(p1)?;
        let m2 = match &args.z2 {
            Some(p) => read_matrix_csv(p)?,
            None => m1.clone(),
        };
        let dim = m1.ncols();
        q = Some(dim);
        let (weights, spec) = stats_setup(args, config, dim)?;
        let (b1, b2) = if args.loss.normalized() {
            (EmbeddingBatch::new(m1)?, EmbeddingBatch::new(m2)?)
        } else {
            (EmbeddingBatch::unnormalized(m1)?, EmbeddingBatch::unnormalized(m2)?)
        };
        let report = objective(args.loss, &weights, &spec.centered(), &b1, &b2)?;
        let pooled = EmbeddingBatch::normalizing(b1.stacked(&b2)?.into_matrix())?;
        let stats = embedding_moment_stats(&pooled);
        let reference = UniformReference::new(&spec.centered(), args.reference_samples, seed)?;
        let mmd = reference.mmd(pooled.matrix())?;
        let output = StatsOutput {
            loss: args.loss,
            report,
            mean_norm: stats.mean_norm,
            autocorr_dev: stats.autocorr_deviation,
            mc_mmd: mmd.estimate,
            mc_mmd_se: mmd.std_error,
        };
        printed = serde_json::to_string_pretty(&output)? + "\n";
    }
    if args.export_samples.is_some() || args.export_harmonics {
        let q = q.ok_or_else(|| Error::Config("--q or --z1 is required for exports".into()))?;
        fs::create_dir_all(out)?;
        if let Some(n) = args.export_samples {
            let samples = sample_uniform_sphere(q, n, seed)?;
            fs::write(out.join("uniform_samples.csv"), samples.to_csv())?;
        }
        if args.export_harmonics {
            let basis = HarmonicBasis::build(q, 1.0, 1.0)?;
            fs::write(out.join("m1.csv"), basis.matrix_csv(1)?)?;
            fs::write(out.join("m2.csv"), basis.matrix_csv(2)?)?;
        }
    }
    if printed.is_empty() && args.export_samples.is_none() && !args.export_harmonics {
        return Err(Error::Config("stats needs --z1 or an export flag".into()));
    }
    Ok(printed)
}

fn cmd_verify(suite: &str, seed: u64, out: Option<&Path>) -> Result<(String, bool)> {
    let checks: Vec<Check> = run_suite(suite, seed)?;
    let ok = checks.iter().all(Check::passed);
    let json = serde_json::to_string_pretty(&checks)? + "\n";
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("verify.json"), &json)?;
    }
    Ok((json, ok))
}

fn quick_sweeps() -> Vec<Sweep> {
    let qs = vec![64, 128, 256, 512];
    vec![
        Sweep {
            loss: Regularizer::Sfrik,
            variable: Variable::Q,
            fixed: 64,
            sizes: qs.clone(),
        },
        Sweep {
            loss: Regularizer::Vicreg,
            variable: Variable::Q,
            fixed: 64,
            sizes: qs,
        },
        Sweep {
            loss: Regularizer::Sfrik,
            variable: Variable::Batch,
            fixed: 128,
            sizes: vec![32, 64, 128, 256],
        },
    ]
}

fn cmd_bench(args: &BenchArgs, seed: u64, out: &Path) -> Result<String> {
    let sweeps = if args.quick { quick_sweeps() } else { default_sweeps() };
    let report = run_sweeps(&sweeps, args.repeats, seed)?;
    fs::create_dir_all(out)?;
    let csv = report.to_csv();
    fs::write(out.join("bench.csv"), &csv)?;
    fs::write(out.join("bench_fits.json"), report.fits_json() + "\n")?;
    Ok(csv)
}

fn execute(cli: &Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let config = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let seed = cli.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0);
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Expand(args) => {
            let csv = expand_csv(args)?;
            if let Some(dir) = &cli.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("expand.csv"), &csv)?;
            }
            print!("{csv}");
            Ok(EXIT_OK)
        }
        Command::Verify(args) => {
            let (json, ok) = cmd_verify(&args.suite, seed, cli.out.as_deref())?;
            print!("{json}");
            Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::Minimize => {
            let config = config
                .as_ref()
                .ok_or_else(|| Error::Config("minimize requires --config".into()))?;
            let traj = cmd_minimize(config, cli.seed, cli.out.as_deref())?;
            let last = traj.last();
            println!(
                "step {} total {} mean_norm {} autocorr_dev {} mc_mmd {} ± {}",
                last.step,
                format_f64(last.total),
                format_f64(last.mean_norm),
                format_f64(last.autocorr_dev),
                format_f64(last.mc_mmd),
                format_f64(last.mc_mmd_se)
            );
            Ok(EXIT_OK)
        }
        Command::Bench(args) => {
            print!("{}", cmd_bench(args, seed, &out_dir)?);
            Ok(EXIT_OK)
        }
        Command::Stats(args) => {
            print!("{}", cmd_stats(args, config.as_ref(), seed, &out_dir)?);
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_parsing() {
        assert_eq!(
            parse_coefficients("1:1, 2:40,3:4e1").unwrap(),
            vec![(1, 1.0), (2, 40.0), (3, 40.0)]
        );
        assert!(parse_coefficients("1=2").is_err());
        assert!(parse_coefficients("x:2").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["sphmmd", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["sphmmd", "expand", "--kernel", "rbf", "--q", "3"]), EXIT_USAGE);
        assert_eq!(run(["sphmmd", "verify", "--suite", "nope"]), EXIT_USAGE);
        assert_eq!(run(["sphmmd", "minimize"]), EXIT_USAGE);
        assert_eq!(
            exit_code(&Error::Diverged {
                step: 1,
                loss: 1.0,
                initial: 0.0
            }),
            EXIT_CHECK_FAILED
        );
    }
}
