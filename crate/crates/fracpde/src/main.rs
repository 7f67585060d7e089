//! Thin command-line wrapper around the library's `cli` module.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fracpde::cli::{self, Command as RunCommand, RunConfig};

#[derive(Parser)]
#[command(
    name = "fracpde",
    version,
    about = "One-sided fractional diffusion on [-1,1]: generators, semigroups, jump processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Fractional order in (1, 2].
    #[arg(long, default_value_t = 1.5)]
    alpha: f64,
    /// Boundary pair: DD, DN, ND, NN, N*D (NstarD), N*N (NstarN).
    #[arg(long, default_value = "DD")]
    bc: String,
    /// Number of chain states (the interval splits into n+1 grids).
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Samples per grid for the sampled-function representation.
    #[arg(long, default_value_t = 16)]
    samples: usize,
    /// Output directory (falls back to $FRACPDE_OUT, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Export the rate matrix and one interpolation matrix.
    BuildMatrix {
        #[command(flatten)]
        common: Common,
        /// Interpolation parameter for the exported G_{n+1}(λ).
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
    },
    /// Evolve the forward or backward equation and dump snapshots.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        /// Explicit snapshot times (comma separated); default: 10 uniform.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Initial data: delta@x | uniform | poly:c0,c1,... | file:path.
        #[arg(long, default_value = "delta@0")]
        initial: String,
        /// Solve the backward (Feller) equation instead of the forward one.
        #[arg(long)]
        backward: bool,
    },
    /// Simulate the finite-state jump process.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Initial data (delta@x places the walker in grid ι(x)).
        #[arg(long, default_value = "delta@0")]
        initial: String,
        /// Histogram bins (0 = one per state).
        #[arg(long, default_value_t = 0)]
        bins: usize,
        /// Export at most this many raw paths to paths.csv.
        #[arg(long, default_value_t = 0)]
        export_paths: usize,
    },
    /// Mesh-refinement study of the evolved solution.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        /// Refinement levels (state counts), comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![32usize, 64, 128, 256])]
        levels: Vec<usize>,
        #[arg(long)]
        backward: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run identity/structure suites and emit a JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        /// all | grunwald | structure | theta | adjoint | range | resolvent.
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Monte Carlo vs forward solve on identical settings, with z-scores.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "delta@0")]
        initial: String,
        #[arg(long, default_value_t = 0)]
        bins: usize,
    },
    /// Re-run the configuration stored in a manifest.json.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        /// Redirect outputs (default: the directory stored in the manifest).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(cli::OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn to_config(cmd: Command) -> fracpde::Result<RunConfig> {
    let mut config = RunConfig {
        command: RunCommand::Verify,
        alpha: 1.5,
        bc: "DD".into(),
        n: 64,
        t_final: 0.0,
        output_times: vec![],
        initial: "delta@0".into(),
        n_paths: 0,
        seed: 0,
        output_dir: PathBuf::from("out"),
        samples: 16,
        direction_backward: false,
        bins: 0,
        lambda: 0.5,
        suite: "all".into(),
        levels: vec![],
        export_paths: 0,
    };
    let apply_common = |config: &mut RunConfig, c: &Common| {
        config.alpha = c.alpha;
        config.bc = c.bc.clone();
        config.n = c.n;
        config.samples = c.samples;
        config.output_dir = output_dir(c.out.clone());
    };
    match cmd {
        Command::BuildMatrix { common, lambda } => {
            config.command = RunCommand::BuildMatrix;
            apply_common(&mut config, &common);
            config.lambda = lambda;
        }
        Command::Solve { common, t, times, initial, backward } => {
            config.command = RunCommand::Solve;
            apply_common(&mut config, &common);
            config.t_final = t;
            config.output_times = times;
            config.initial = initial;
            config.direction_backward = backward;
        }
        Command::Simulate { common, t, paths, seed, initial, bins, export_paths } => {
            config.command = RunCommand::Simulate;
            apply_common(&mut config, &common);
            config.t_final = t;
            config.n_paths = paths;
            config.seed = seed;
            config.initial = initial;
            config.bins = bins;
            config.export_paths = export_paths;
        }
        Command::Converge { common, t, levels, backward, seed } => {
            config.command = RunCommand::Converge;
            apply_common(&mut config, &common);
            config.t_final = t;
            config.levels = levels;
            config.direction_backward = backward;
            config.seed = seed;
        }
        Command::Verify { common, suite } => {
            config.command = RunCommand::Verify;
            apply_common(&mut config, &common);
            config.suite = suite;
        }
        Command::Compare { common, t, paths, seed, initial, bins } => {
            config.command = RunCommand::Compare;
            apply_common(&mut config, &common);
            config.t_final = t;
            config.n_paths = paths;
            config.seed = seed;
            config.initial = initial;
            config.bins = bins;
        }
        Command::Rerun { manifest, out } => {
            let mut stored = cli::config_from_manifest(&manifest)?;
            if let Some(dir) = out {
                stored.output_dir = dir;
            }
            return Ok(stored);
        }
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match to_config(cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match cli::run(&config) {
        Ok(out) => {
            for f in &out.files {
                println!("{}", config.output_dir.join(f).display());
            }
            if out.failed_checks > 0 {
                eprintln!("{} check(s) failed", out.failed_checks);
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(fracpde::Error::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
