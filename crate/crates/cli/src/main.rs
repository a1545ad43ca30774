//! `relayrate`: key-rate curves, capacity bounds, heatmaps and waiting-time
//! simulations for multi-node photonic QKD, written as CSV or JSON with
//! full run provenance.

mod jobs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use relayrate::config::{OutputFormat, RunConfig};
use relayrate::export::{metadata_value, read_metadata, write_atomic};
use relayrate::optimize::Mode;
use relayrate::sim::StorageConfiguration;
use relayrate::Error;

use jobs::{body, parse_depths, Job, JobArgs};

const THREADS_ENV: &str = "RELAYRATE_THREADS";

#[derive(Parser)]
#[command(name = "relayrate", version, about = "Rate-loss calculator for multi-node photonic QKD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeaterless and repeater-assisted secret-key capacities vs distance.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        range: Range,
        /// Repeater counts, e.g. `0,1`.
        #[arg(long, value_delimiter = ',')]
        repeaters: Option<Vec<u32>>,
    },
    /// Ideal nested-relay key rates K_N (one column per depth).
    Ideal {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        range: Range,
        /// Quantum/classical speed ratio f (< 1).
        #[arg(long)]
        f: Option<f64>,
        /// Depths, e.g. `0,1,2,inf`.
        #[arg(long)]
        depths: Option<String>,
        #[arg(long, value_delimiter = ',')]
        repeaters: Option<Vec<u32>>,
    },
    /// Optimised practical key rate with capacity bounds and the single-node reference.
    Practical {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        range: Range,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Buffer attenuation, dB/km.
        #[arg(long)]
        alpha_qm: Option<f64>,
        #[arg(long)]
        no_dark_counts: bool,
    },
    /// Optimal d2/L over (buffer loss, distance) with ideal switches.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        range: Range,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Monte Carlo heralding and waiting-time histograms.
    Sim {
        #[command(flatten)]
        common: Common,
        /// Per-slot relay heralding probability.
        #[arg(long)]
        p0: f64,
        /// Central-station success probability.
        #[arg(long, default_value_t = 1.0)]
        p1: f64,
        /// Fixed-buffer depth in slots.
        #[arg(long)]
        m: u32,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Storage-time maps for the repeater or slow-light configuration.
    Storage {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        range: Range,
        #[arg(long, value_enum, default_value = "slow-light")]
        configuration: ConfigurationArg,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Critical buffer loss and minimum scaling cost for one nesting level.
    Thresholds {
        #[command(flatten)]
        common: Common,
        /// Speed ratios f.
        #[arg(long, value_delimiter = ',', default_value = "0.6666666666666666,1")]
        f: Vec<f64>,
        /// Relative buffer losses gamma = alpha_qm / alpha.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
    },
    /// Recomputes a previous output file from its embedded metadata.
    Rerun {
        file: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Fail unless the recomputed data rows match the original byte for byte.
        #[arg(long)]
        check: bool,
    },
    /// Prints a preset (or the defaults) as JSON.
    ShowConfig {
        #[arg(long)]
        preset: Option<String>,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Built-in preset: fig1c, fig2b, fig2c, heatmap-d2.
    #[arg(long)]
    preset: Option<String>,
    /// TOML or JSON config applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides in TOML syntax.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fibre attenuation, dB/km.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct Range {
    #[arg(long)]
    min_km: Option<f64>,
    #[arg(long)]
    max_km: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Analytic,
    Numeric,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigurationArg {
    Repeater,
    SlowLight,
}

/// Failure classes, mapped to exit codes 2 and 1.
enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain { .. } => Failure::Usage(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("relayrate: usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("relayrate: error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Run(e.to_string()))
}

fn base_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.preset {
        Some(name) => RunConfig::preset(name)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        cfg = cfg
            .overlay(&text)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    for kv in &common.set {
        if !kv.contains('=') {
            return Err(Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")));
        }
        cfg = cfg.overlay(kv)?;
    }
    if let Some(f) = common.format {
        cfg.format = match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        };
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(a) = common.alpha {
        cfg.alpha_db_per_km = a;
    }
    Ok(cfg)
}

fn apply_range(cfg: &mut RunConfig, range: &Range) -> Result<(), Failure> {
    if let Some(v) = range.min_km {
        cfg.l_min_km = v;
    }
    if let Some(v) = range.max_km {
        cfg.l_max_km = v;
    }
    if let Some(v) = range.points {
        cfg.l_points = v;
    }
    if !(cfg.l_min_km > 0.0 && cfg.l_max_km >= cfg.l_min_km && cfg.l_points > 0) {
        return Err(Failure::Usage(format!(
            "empty distance range {}..{} km with {} points",
            cfg.l_min_km, cfg.l_max_km, cfg.l_points
        )));
    }
    Ok(())
}

fn mode_of(m: ModeArg) -> Mode {
    match m {
        ModeArg::Analytic => Mode::Analytic,
        ModeArg::Numeric => Mode::Numeric,
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    let (args, cfg, common) = match command {
        Command::Bounds { common, range, repeaters } => {
            let mut cfg = base_config(&common)?;
            apply_range(&mut cfg, &range)?;
            if let Some(r) = repeaters {
                cfg.repeaters = r;
            }
            if cfg.repeaters.is_empty() {
                return Err(Failure::Usage("at least one repeater count is needed".into()));
            }
            (JobArgs::Bounds, cfg, common)
        }
        Command::Ideal {
            common,
            range,
            f,
            depths,
            repeaters,
        } => {
            let mut cfg = base_config(&common)?;
            apply_range(&mut cfg, &range)?;
            if let Some(f) = f {
                cfg.speed_ratio = Some(f);
            }
            if let Some(d) = depths {
                cfg.depths = parse_depths(&d)?;
            }
            if let Some(r) = repeaters {
                cfg.repeaters = r;
            }
            (JobArgs::Ideal, cfg, common)
        }
        Command::Practical {
            common,
            range,
            mode,
            alpha_qm,
            no_dark_counts,
        } => {
            let mut cfg = base_config(&common)?;
            apply_range(&mut cfg, &range)?;
            if let Some(m) = mode {
                cfg.mode = mode_of(m);
            }
            if let Some(a) = alpha_qm {
                cfg.alpha_qm_db_per_km = a;
            }
            if no_dark_counts {
                cfg.dark_rate_hz = 0.0;
            }
            (JobArgs::Practical, cfg, common)
        }
        Command::Heatmap { common, range, mode } => {
            let mut cfg = base_config(&common)?;
            apply_range(&mut cfg, &range)?;
            if let Some(m) = mode {
                cfg.mode = mode_of(m);
            }
            (JobArgs::Heatmap, cfg, common)
        }
        Command::Sim {
            common,
            p0,
            p1,
            m,
            trials,
            bins,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(b) = bins {
                cfg.histogram_bins = b;
            }
            (JobArgs::Sim { p0, p1, m }, cfg, common)
        }
        Command::Storage {
            common,
            range,
            configuration,
            trials,
        } => {
            let mut cfg = base_config(&common)?;
            apply_range(&mut cfg, &range)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            let configuration = match configuration {
                ConfigurationArg::Repeater => StorageConfiguration::Repeater,
                ConfigurationArg::SlowLight => StorageConfiguration::SlowLight,
            };
            (JobArgs::Storage { configuration }, cfg, common)
        }
        Command::Thresholds { common, f, gammas } => {
            let cfg = base_config(&common)?;
            let gammas = gammas.unwrap_or_else(|| (0..=20).map(|k| 0.05 * f64::from(k)).collect());
            if f.is_empty() || gammas.is_empty() {
                return Err(Failure::Usage("speed ratios and gammas must be nonempty".into()));
            }
            (
                JobArgs::Thresholds {
                    speed_ratios: f,
                    gammas,
                },
                cfg,
                common,
            )
        }
        Command::Rerun { file, output, check } => return rerun(&file, output.as_deref(), check),
        Command::ShowConfig { preset } => {
            let cfg = match preset {
                Some(p) => RunConfig::preset(&p)?,
                None => RunConfig::default(),
            };
            println!("{}", cfg.to_json());
            return Ok(());
        }
    };
    cfg.validate()?;
    let format = cfg.format;
    let rendered = render(&Job { args, config: cfg }, format)?;
    emit(common.output.as_deref(), &rendered)
}

fn render(job: &Job, format: OutputFormat) -> Result<String, Failure> {
    let table = job.run()?;
    Ok(match format {
        OutputFormat::Csv => table.to_csv(),
        OutputFormat::Json => table.to_json(),
    })
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => write_atomic(path, text).map_err(Failure::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn rerun(file: &Path, output: Option<&Path>, check: bool) -> Result<(), Failure> {
    let meta = read_metadata(file)?;
    let field = |key: &str| {
        metadata_value(&meta, key)
            .ok_or_else(|| Failure::Usage(format!("{}: no `{key}` metadata", file.display())))
    };
    let config = RunConfig::parse(field("config")?)?;
    let args: JobArgs = serde_json::from_str(field("args")?)
        .map_err(|e| Failure::Usage(format!("{}: bad `args` metadata: {e}", file.display())))?;
    if args.name() != field("command")? {
        return Err(Failure::Usage(format!("{}: command and args metadata disagree", file.display())));
    }
    let original = std::fs::read_to_string(file).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
    let format = if original.trim_start().starts_with('{') {
        OutputFormat::Json
    } else {
        OutputFormat::Csv
    };
    let rendered = render(&Job { args, config }, format)?;
    if check && body(&rendered) != body(&original) {
        return Err(Failure::Run(format!(
            "{}: recomputed data differ from the recorded output",
            file.display()
        )));
    }
    match output {
        Some(_) => emit(output, &rendered),
        None if check => {
            eprintln!("relayrate: {} reproduced", file.display());
            Ok(())
        }
        None => emit(None, &rendered),
    }
}
