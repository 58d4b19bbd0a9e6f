use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use grkan::bench::{
    cmd_bench, cmd_flops, cmd_verify, exit_code_for, BenchConfig, FlopsRow, OutputFormat, Scale, StrategyChoice, Suite,
    EXIT_PASS, EXIT_USAGE,
};
use grkan::layer::{fit_activation_coeffs, Activation};
use grkan::{FlopsConfig, GrkanError, Precision};

#[derive(Parser)]
#[command(name = "grkan", version, about = "Group-rational KAN backward benchmarks and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time the backward strategies.
    Bench(BenchArgs),
    /// Run a verification suite; exits 0 iff every assertion passes.
    Verify(VerifyArgs),
    /// Print parameter count and FLOPs of a layer type.
    Flops(FlopsArgs),
    /// Fit a rational to an activation and emit a coefficient preset.
    FitActivation(FitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Naive,
    Blocked,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1024)]
    batch: usize,
    #[arg(long, default_value_t = 197)]
    seqlen: usize,
    #[arg(long, default_value_t = 768)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    groups: usize,
    /// Numerator coefficient count (m + 1).
    #[arg(long, default_value_t = 6)]
    num_coeffs: usize,
    /// Denominator coefficient count (n).
    #[arg(long, default_value_t = 4)]
    den_coeffs: usize,
    #[arg(long, default_value_t = 256)]
    block_size: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Both)]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    precision: PrecisionArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads; defaults to available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Also count memory accesses and compare with the closed forms.
    #[arg(long)]
    instrument: bool,
    /// Time the forward pass together with the backward pass.
    #[arg(long)]
    forward: bool,
    /// Write the input tensor to this binary dump.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Grad,
    Oracle,
    Access,
    Rounding,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_enum)]
    suite: SuiteArg,
    #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RowArg {
    Mlp,
    Kan,
    Grkan,
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(value_enum)]
    row: RowArg,
    #[arg(long)]
    d_in: u64,
    #[arg(long)]
    d_out: u64,
    /// Per-element FLOPs of the scalar activation (mlp, kan).
    #[arg(long)]
    func_flops: Option<u64>,
    /// Spline order K (kan).
    #[arg(long = "k")]
    spline_order: Option<u64>,
    /// Grid intervals G (kan).
    #[arg(long = "g-intervals")]
    intervals: Option<u64>,
    /// Numerator degree (grkan).
    #[arg(long)]
    m: Option<u64>,
    /// Denominator degree (grkan).
    #[arg(long)]
    n: Option<u64>,
    /// Group count (grkan).
    #[arg(long = "groups")]
    groups: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    /// identity, swish (silu) or gelu.
    activation: Activation,
    /// Numerator degree.
    #[arg(long, default_value_t = 5)]
    m: usize,
    /// Denominator degree.
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn require(v: Option<u64>, name: &str) -> Result<u64, GrkanError> {
    v.ok_or_else(|| GrkanError::InvalidConfig(format!("missing --{name}")))
}

fn run_pool<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, GrkanError> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(GrkanError::InvalidConfig("workers must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|p| p.install(f))
            .map_err(|e| GrkanError::Resource(e.to_string())),
    }
}

fn run(cli: Cli) -> Result<i32, GrkanError> {
    match cli.command {
        Command::Bench(a) => {
            let cfg = BenchConfig {
                batch: a.batch,
                seqlen: a.seqlen,
                dim: a.dim,
                groups: a.groups,
                num_coeffs: a.num_coeffs,
                den_coeffs: a.den_coeffs,
                block_size: a.block_size,
                strategy: match a.strategy {
                    StrategyArg::Naive => StrategyChoice::Naive,
                    StrategyArg::Blocked => StrategyChoice::Blocked,
                    StrategyArg::Both => StrategyChoice::Both,
                },
                precision: match a.precision {
                    PrecisionArg::F32 => Precision::Single,
                    PrecisionArg::F64 => Precision::Double,
                },
                seed: a.seed,
                repeats: a.repeats,
                warmup: a.warmup,
                output_format: match a.format {
                    FormatArg::Json => OutputFormat::Json,
                    FormatArg::Csv => OutputFormat::Csv,
                },
                output_path: a.output,
                workers: a.workers,
                instrument: a.instrument,
                include_forward: a.forward,
                dump: a.dump,
            };
            let report = cmd_bench(&cfg)?;
            let mismatched = report
                .timings
                .iter()
                .filter_map(|t| t.access_report.as_ref())
                .any(|r| r.predicted_total.is_some() && !r.matches_prediction());
            Ok(if mismatched { 1 } else { EXIT_PASS })
        }
        Command::Verify(a) => {
            let suite = match a.suite {
                SuiteArg::Grad => Suite::Grad,
                SuiteArg::Oracle => Suite::Oracle,
                SuiteArg::Access => Suite::Access,
                SuiteArg::Rounding => Suite::Rounding,
            };
            let scale = match a.scale {
                ScaleArg::Desk => Scale::Desk,
                ScaleArg::Paper => Scale::Paper,
            };
            let report = run_pool(a.workers, || cmd_verify(suite, scale, a.seed, a.output.as_deref()))??;
            for x in &report.assertions {
                let tag = if x.passed { "ok  " } else { "FAIL" };
                println!("{tag} {}: {}", x.name, x.detail);
            }
            println!("{}", if report.passed { "all assertions passed" } else { "assertion failures" });
            Ok(report.exit_code())
        }
        Command::Flops(a) => {
            let (row, cfg) = match a.row {
                RowArg::Mlp => (
                    FlopsRow::Mlp,
                    FlopsConfig {
                        d_in: a.d_in,
                        d_out: a.d_out,
                        func_flops: require(a.func_flops, "func-flops")?,
                        ..Default::default()
                    },
                ),
                RowArg::Kan => (
                    FlopsRow::Kan,
                    FlopsConfig {
                        d_in: a.d_in,
                        d_out: a.d_out,
                        func_flops: require(a.func_flops, "func-flops")?,
                        spline_order: require(a.spline_order, "k")?,
                        intervals: require(a.intervals, "g-intervals")?,
                        ..Default::default()
                    },
                ),
                RowArg::Grkan => (
                    FlopsRow::Grkan,
                    FlopsConfig {
                        d_in: a.d_in,
                        d_out: a.d_out,
                        m: require(a.m, "m")?,
                        n: require(a.n, "n")?,
                        groups: require(a.groups, "groups")?,
                        ..Default::default()
                    },
                ),
            };
            let counts = cmd_flops(row, &cfg)?;
            println!("params {}", counts.params);
            println!("flops {}", counts.flops);
            Ok(EXIT_PASS)
        }
        Command::FitActivation(a) => {
            let preset = fit_activation_coeffs(a.activation, a.m, a.n)?;
            let text = preset.to_toml_string()?;
            match a.output {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
            eprintln!(
                "{}: max error {:.3e} on [{}, {}]",
                a.activation, preset.fit_error, preset.fit_domain[0], preset.fit_domain[1]
            );
            Ok(EXIT_PASS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            e.print().ok();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
