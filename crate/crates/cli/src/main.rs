use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use mehler::harness::{kernel_table, run_simulate, run_verify, ExperimentConfig, KernelKind};
use mehler::Error;

#[derive(Parser)]
#[command(name = "mehler", version, about = "Generalized Mehler semigroups and Ornstein-Uhlenbeck simulation")]
struct Cli {
    /// Overrides `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides `outputs.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the verification suites and print one line per check.
    Verify { config: PathBuf },
    /// Simulate the configured ensemble and write CSV files.
    Simulate { config: PathBuf },
    /// Print a kernel table: `heat d=1 s=0.5,1 y=0,1`, `absorbing x=1 s=.. y=..`, `flux s=.. y=..`.
    Kernels { kind: String, params: Vec<String> },
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn load(path: &PathBuf, cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut c = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        c.out_dir = o.clone();
    }
    Ok(c)
}

fn floats(v: &str) -> anyhow::Result<Vec<f64>> {
    v.split(',').map(|x| x.trim().parse::<f64>().with_context(|| format!("`{x}` is not a number"))).collect()
}

fn kernels(kind: &str, params: &[String]) -> anyhow::Result<String> {
    let (mut d, mut x, mut s, mut y) = (1usize, None, None, None);
    for p in params {
        let (k, v) = p.split_once('=').ok_or_else(|| anyhow!("parameter `{p}` is not key=value"))?;
        match k {
            "d" => d = v.parse()?,
            "x" => x = Some(v.parse::<f64>()?),
            "s" => s = Some(floats(v)?),
            "y" => y = Some(floats(v)?),
            _ => bail!("unknown kernel parameter `{k}`"),
        }
    }
    let kind = match kind {
        "heat" => KernelKind::Heat { d },
        "absorbing" => KernelKind::Absorbing { x: x.ok_or_else(|| anyhow!("absorbing needs x=<start>"))? },
        "flux" => KernelKind::Flux,
        other => bail!("unknown kernel kind `{other}`"),
    };
    let s = s.ok_or_else(|| anyhow!("missing s=<times>"))?;
    let y = y.ok_or_else(|| anyhow!("missing y=<points>"))?;
    Ok(kernel_table(kind, &s, &y)?)
}

fn run(cli: &Cli) -> Result<u8, (u8, String)> {
    let config_error = |e: Error| match e {
        Error::Config { .. } => (EXIT_CONFIG, e.to_string()),
        other => (EXIT_FAIL, other.to_string()),
    };
    match &cli.command {
        Command::Verify { config } => {
            let c = load(config, cli).map_err(config_error)?;
            let report = run_verify(&c).map_err(config_error)?;
            print!("{}", report.summary());
            Ok(if report.passed() { 0 } else { EXIT_FAIL })
        }
        Command::Simulate { config } => {
            let c = load(config, cli).map_err(config_error)?;
            let out = run_simulate(&c).map_err(config_error)?;
            println!("{}\n{}\n{}", out.paths_csv.display(), out.summary_csv.display(), out.config.display());
            Ok(0)
        }
        Command::Kernels { kind, params } => {
            print!("{}", kernels(kind, params).map_err(|e| (EXIT_CONFIG, format!("{e:#}")))?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAIL);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(code) => ExitCode::from(code),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
