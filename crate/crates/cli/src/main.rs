mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use blockveil_core::pipeline::SearchMethod;
use blockveil_core::DataOramKind;
use clap::{Args, Parser, Subcommand};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "blockveil", version, about = "Uniform code blocks and a simulated single-stepping attacker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Profile, search a pattern and emit the block listing.
    Compile(Common),
    /// Execute the protected program once and print its final state.
    Run(RunArgs),
    /// Attack two target blocks over repeated executions.
    Attack(AttackArgs),
    /// Count cost drivers per variant.
    Bench(BenchArgs),
    /// Partition opcodes into latency classes.
    Classify(ClassifyArgs),
}

/// Flags shared by every pipeline command; each overrides the manifest.
#[derive(Args, Clone, Default)]
struct Common {
    /// Assembly file or `sample:NAME` (modexp, matmul, base64).
    program: Option<String>,
    /// TOML run manifest; command-line flags take precedence.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Variant I to V (or its name).
    #[arg(long)]
    variant: Option<String>,
    /// Protected function to start from instead of the first `@protect` one.
    #[arg(long)]
    root: Option<String>,
    /// Slots per block including the suffix.
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long, value_enum)]
    search: Option<SearchArg>,
    /// Generation cap of the genetic search.
    #[arg(long)]
    gen_cap: Option<u64>,
    /// Wall-time cap of the genetic search, in seconds.
    #[arg(long)]
    time_cap: Option<f64>,
    /// Survivors per generation of the genetic search.
    #[arg(long)]
    top_k: Option<usize>,
    /// Weight multiplier per loop nesting level.
    #[arg(long)]
    loop_weight: Option<u64>,
    /// Pattern string such as `c1-ld-c2-st-sfx`, or `@file`.
    #[arg(long)]
    pattern: Option<String>,
    #[arg(long, env = "BLOCKVEIL_SEED")]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    oram: Option<OramArg>,
    /// Forces scratchpad rotation on or off.
    #[arg(long)]
    rotation: Option<bool>,
    /// Directory for output artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SearchArg {
    Auto,
    Brute,
    Genetic,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum OramArg {
    Linear,
    Path,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Global initialiser `name=value`; value is an integer or `0x` hex bytes.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    globals: Vec<String>,
    /// Register initialiser `rN=value`.
    #[arg(long = "reg", value_name = "rN=VALUE")]
    regs: Vec<String>,
    /// Draws the input from the seed instead.
    #[arg(long)]
    random_input: bool,
    /// Writes the attacker-visible trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    common: Common,
    /// Two `function:label` targets separated by a comma.
    #[arg(long, value_delimiter = ',')]
    target_blocks: Option<Vec<String>>,
    #[arg(long)]
    executions: Option<usize>,
    /// Report path (default `<out-dir>/attack.txt`).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Latency histogram of the most separating slot, as CSV.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Variants to measure (default all).
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Metrics path (default `<out-dir>/metrics.txt`).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// TOML latency model; the built-in one otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Samples per opcode and pair.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Opcode mnemonics to classify (default: the application ISA).
    #[arg(long, value_delimiter = ',')]
    opcodes: Option<Vec<String>>,
    #[arg(long, default_value_t = blockveil_core::sidechannel::T_THRESHOLD)]
    threshold: f64,
    #[arg(long, env = "BLOCKVEIL_SEED", default_value_t = 0)]
    seed: u64,
    /// Partition path (default `blockveil-out/classes.txt`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn manifest(&self) -> anyhow::Result<RunManifest> {
        let base = match &self.manifest {
            Some(p) => RunManifest::load(p)?,
            None => RunManifest::default(),
        };
        let c = self.clone();
        Ok(base.overlay(RunManifest {
            program: c.program,
            root: c.root,
            variant: c.variant,
            pattern: c.pattern,
            slots: c.slots,
            search: c.search.map(|s| match s {
                SearchArg::Auto => SearchMethod::Auto,
                SearchArg::Brute => SearchMethod::Brute,
                SearchArg::Genetic => SearchMethod::Genetic,
            }),
            gen_cap: c.gen_cap,
            time_cap: c.time_cap,
            top_k: c.top_k,
            loop_weight: c.loop_weight,
            seed: c.seed,
            oram: c.oram.map(|o| match o {
                OramArg::Linear => DataOramKind::Linear,
                OramArg::Path => DataOramKind::Path,
            }),
            rotation: c.rotation,
            out_dir: c.out_dir,
            ..RunManifest::default()
        }))
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Compile(c) => commands::compile(&c.manifest()?),
        Command::Run(a) => {
            let m = a.common.manifest()?.overlay(RunManifest { trace: a.trace, ..RunManifest::default() });
            commands::run(&m, &a.globals, &a.regs, a.random_input)
        }
        Command::Attack(a) => {
            let m = a.common.manifest()?.overlay(RunManifest {
                targets: a.target_blocks,
                executions: a.executions,
                report: a.report,
                histogram: a.histogram,
                ..RunManifest::default()
            });
            commands::attack(&m)
        }
        Command::Bench(a) => {
            let m = a.common.manifest()?.overlay(RunManifest {
                repetitions: a.repetitions,
                report: a.report,
                ..RunManifest::default()
            });
            commands::bench(&m, a.variants.as_deref())
        }
        Command::Classify(a) => {
            commands::classify(a.model.as_deref(), a.samples, a.opcodes.as_deref(), a.threshold, a.seed, a.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
