use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mmfuse_core::encoder::PyramidFeatures;
use mmfuse_core::pipeline::{encoder_forward, EncoderConfig, EncoderWeights};
use mmfuse_core::store::Params;
use mmfuse_harness::bench::{bench_scan, BenchOp};
use mmfuse_harness::stats::{tensor_stats, TensorStats};
use mmfuse_harness::{checks, fixtures, format, synth};

#[derive(Parser)]
#[command(name = "mmfuse", version, about = "RGB/IR fusion encoder kernels: checks, benchmarks, forward passes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant checks.
    Check {
        /// Only run checks whose name contains this pattern.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Time the selective scan against dense attention.
    Bench {
        #[arg(long, value_enum, default_value_t = OpArg::Both)]
        op: OpArg,
        #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096])]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        /// Print the table as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Encode one synthetic RGB/IR pair and print per-level statistics.
    Forward {
        /// Input size as HxW (square, multiple of 32).
        #[arg(long, default_value = "256x256")]
        size: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Load weights from an MMDW file instead of seeding them.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Also write the statistics JSON here.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Default)]
        preset: Preset,
        /// Seeded adapters get random expert outputs instead of zeros
        /// (always on for the small preset).
        #[arg(long)]
        active_adapters: bool,
    },
    /// Write seeded encoder weights to an MMDW file.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Preset::Default)]
        preset: Preset,
        #[arg(long)]
        active_adapters: bool,
    },
    /// Generate or verify golden fixtures.
    Fixtures {
        #[arg(value_enum)]
        mode: FixtureMode,
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    Ss1d,
    Attn,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Small,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureMode {
    Generate,
    Verify,
}

impl Preset {
    fn config(self, active_adapters: bool) -> EncoderConfig {
        let cfg = match self {
            Self::Default => EncoderConfig::default(),
            Self::Small => EncoderConfig::small(),
        };
        EncoderConfig { active_adapters: active_adapters || cfg.active_adapters, ..cfg }
    }
}

#[derive(Serialize)]
struct ForwardReport {
    size: [usize; 2],
    seed: u64,
    weights: String,
    levels: LevelStats,
}

#[derive(Serialize)]
struct LevelStats {
    p3: TensorStats,
    n4: TensorStats,
    n5: TensorStats,
}

impl LevelStats {
    fn of(out: &PyramidFeatures) -> Self {
        Self { p3: tensor_stats(&out.p3), n4: tensor_stats(&out.n4), n5: tensor_stats(&out.n5) }
    }

    fn all_finite(&self) -> bool {
        [&self.p3, &self.n4, &self.n5].iter().all(|s| s.finite == s.count)
    }
}

fn parse_size(s: &str) -> Result<usize> {
    let (h, w) = s.split_once(['x', 'X']).context("size must look like HxW")?;
    let (h, w): (usize, usize) = (h.trim().parse()?, w.trim().parse()?);
    if h != w {
        bail!("only square inputs are generated (got {h}x{w})");
    }
    Ok(h)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Check { filter } => {
            let reports = checks::run_suite(filter.as_deref())?;
            let mut failed = 0;
            for r in &reports {
                let o = &r.outcome;
                failed += usize::from(!o.passed);
                println!(
                    "{} {:<34} measured {:.3e} tol {:.1e}  {}",
                    if o.passed { "PASS" } else { "FAIL" },
                    r.name,
                    o.measured,
                    o.tolerance,
                    o.detail
                );
            }
            println!("{} checks, {} failed", reports.len(), failed);
            Ok(failed == 0)
        }
        Command::Bench { op, lengths, channels, repeats, json } => {
            let ops: &[BenchOp] = match op {
                OpArg::Ss1d => &[BenchOp::Ss1d],
                OpArg::Attn => &[BenchOp::Attn],
                OpArg::Both => &[BenchOp::Ss1d, BenchOp::Attn],
            };
            let table = bench_scan(ops, &lengths, channels, repeats)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&table)?);
            } else {
                print!("{}", table.render());
            }
            Ok(true)
        }
        Command::Forward { size, seed, weights, dump, preset, active_adapters } => {
            let s = parse_size(&size)?;
            let (rgb, ir) = synth::synth_pair(seed, s)?;
            let (out, source): (PyramidFeatures, String) = match &weights {
                Some(path) => {
                    let store = format::load_weights(path)?;
                    (encoder_forward(&rgb, &ir, &store)?, path.display().to_string())
                }
                None => {
                    let w = EncoderWeights::init(&preset.config(active_adapters), seed)?;
                    (w.forward(&rgb, &ir)?, format!("seeded:{seed}"))
                }
            };
            let report = ForwardReport {
                size: [s, s],
                seed,
                weights: source,
                levels: LevelStats::of(&out),
            };
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(path) = dump {
                std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(report.levels.all_finite())
        }
        Command::InitWeights { out, seed, preset, active_adapters } => {
            let store = EncoderWeights::init(&preset.config(active_adapters), seed)?.to_store();
            format::save_weights(&store, &out)?;
            println!("wrote {} tensors ({} values) to {}", store.len(), store.param_count(), out.display());
            Ok(true)
        }
        Command::Fixtures { mode: FixtureMode::Generate, dir } => {
            for p in fixtures::generate(&dir)? {
                println!("wrote {}", p.display());
            }
            Ok(true)
        }
        Command::Fixtures { mode: FixtureMode::Verify, dir } => {
            if !dir.is_dir() {
                bail!("fixture directory {} does not exist", dir.display());
            }
            let mut ok = true;
            for (name, status) in fixtures::verify(&dir) {
                ok &= status.passed();
                println!("{} {name}: {}", if status.passed() { "PASS" } else { "FAIL" }, status.describe());
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
