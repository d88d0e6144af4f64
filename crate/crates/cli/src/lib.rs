//! Command-line driver: single runs, parameter sweeps, verification, fits
//! and best-configuration reports.
//!
//! Settings resolve in order: command-line flags, then a `--config` file of
//! `key = value` lines, then built-in defaults.

pub mod config;
pub mod records;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use swept_core::kernels::{Equation, Method, DEFAULT_CFL, DEFAULT_FOURIER, DEFAULT_GAMMA};
use swept_core::perf::{best_config, flattening_speedup, measure, power_law_fit, speedup, PerfError};
use swept_core::transport::write_log;
use swept_core::{
    solve, verify, write_coverage, ClockMode, ConfigError, CostModel, Decomposition, EngineError,
    FitResult, InitialCondition, LaunchConfig, RunOptions, TimingRecord,
};

pub use config::ConfigFile;
pub use records::{emit_csv, read_csv};

pub const DEFAULT_STEPS: u64 = 6000;
pub const DEFAULT_VERIFY_STEPS: u64 = 50;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error("verification failed: {0}")]
    VerificationFailed(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Engine(EngineError::Config(e))
    }
}

const PRECEDENCE: &str = "Settings resolve as: command-line flags, then the --config file \
(key = value lines using the long flag names, e.g. `unit-cost = 1e-9`), then defaults. \
Relative output paths are placed under --out-dir (env SWEPT_OUT_DIR).";

#[derive(Debug, Parser)]
#[command(name = "swept", version, about = "Swept and classic decompositions of 1-D stencil solvers", after_help = PRECEDENCE)]
pub struct Cli {
    /// Directory for relative output paths.
    #[arg(long, global = true, env = "SWEPT_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration and print its timing record.
    Solve(SolveArgs),
    /// Run every valid combination of grid size, block width and work factor.
    Sweep(SweepArgs),
    /// Compare swept, classic and the serial reference.
    Verify(VerifyArgs),
    /// Fit `time = A n^b` to the best configuration at each grid size.
    Fit(FitArgs),
    /// Tabulate best configurations and speedups.
    Report(ReportArgs),
}

/// Settings shared by every command that runs the solver.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// `key = value` file supplying any setting not given as a flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// heat | euler [default: heat]
    #[arg(long)]
    pub equation: Option<Equation>,
    /// lengthening | flattening [default: lengthening]
    #[arg(long)]
    pub method: Option<Method>,
    /// Grid points [default: 4096]
    #[arg(long)]
    pub n: Option<usize>,
    /// Block width [default: 32]
    #[arg(long)]
    pub w: Option<usize>,
    /// Work factor of rank 0; 0 gives every rank the same share [default: 0]
    #[arg(long)]
    pub wf: Option<usize>,
    /// Ranks on the ring [default: 2]
    #[arg(long)]
    pub ranks: Option<usize>,
    /// Time steps [default: 6000, verify: 50]
    #[arg(long)]
    pub steps: Option<u64>,
    /// virtual | wall [default: virtual]
    #[arg(long)]
    pub mode: Option<ClockMode>,
    /// Latency per message round, seconds [default: 5e-6]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Seconds per byte [default: 1e-10]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Seconds per point update in virtual mode [default: 1e-8]
    #[arg(long)]
    pub unit_cost: Option<f64>,
    /// Fourier number for heat [default: 0.4]
    #[arg(long)]
    pub fo: Option<f64>,
    /// Ratio of specific heats for euler [default: 1.4]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// CFL number for euler [default: 0.4]
    #[arg(long)]
    pub cfl: Option<f64>,
    /// heat-sine | euler-sod-periodic | uniform [default: per equation]
    #[arg(long)]
    pub ic: Option<InitialCondition>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// swept | classic | serial
    #[arg(long, default_value = "swept")]
    pub scheme: Decomposition,
    /// Write the final observable field as CSV.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Write the message log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write the (point, substep) coverage records.
    #[arg(long)]
    pub coverage: Option<PathBuf>,
    /// Write the timing record as a one-row CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated grid sizes [default: 1024,2048,4096,8192,16384]
    #[arg(long, value_delimiter = ',')]
    pub grid_sizes: Option<Vec<usize>>,
    /// Comma-separated block widths [default: 16,32,64,128]
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Comma-separated work factors [default: 0,2,4]
    #[arg(long, value_delimiter = ',')]
    pub wfs: Option<Vec<usize>>,
    /// Comma-separated schemes [default: classic,swept]
    #[arg(long, value_delimiter = ',')]
    pub schemes: Option<Vec<Decomposition>>,
    /// Output CSV.
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Perturb this global point by one ulp on the swept run's final substep.
    #[arg(long)]
    pub inject_ulp: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Timing CSV written by `sweep`.
    #[arg(long)]
    pub input: PathBuf,
    /// Scheme whose records are fitted.
    #[arg(long, default_value = "swept")]
    pub scheme: Decomposition,
    /// Keep only this equation [default: all]
    #[arg(long)]
    pub equation: Option<Equation>,
    /// Keep only this method [default: all]
    #[arg(long)]
    pub method: Option<Method>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Timing CSV written by `sweep`.
    #[arg(long)]
    pub input: PathBuf,
}

/// Settings after merging flags, file and defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub equation: Equation,
    pub method: Method,
    pub n: usize,
    pub w: usize,
    pub wf: usize,
    pub ranks: usize,
    pub steps: u64,
    pub mode: ClockMode,
    pub cost: CostModel,
    pub fo: f64,
    pub gamma: f64,
    pub cfl: f64,
    pub ic: Option<InitialCondition>,
}

impl RunArgs {
    pub fn file(&self) -> Result<ConfigFile, CliError> {
        match &self.config {
            Some(path) => ConfigFile::load(path),
            None => Ok(ConfigFile::default()),
        }
    }

    pub fn resolve(&self, file: &ConfigFile, default_steps: u64) -> Result<Resolved, CliError> {
        let defaults = CostModel::default();
        Ok(Resolved {
            equation: pick(self.equation, file, "equation", Equation::Heat)?,
            method: pick(self.method, file, "method", Method::Lengthening)?,
            n: pick(self.n, file, "n", 4096)?,
            w: pick(self.w, file, "w", 32)?,
            wf: pick(self.wf, file, "wf", 0)?,
            ranks: pick(self.ranks, file, "ranks", 2)?,
            steps: pick(self.steps, file, "steps", default_steps)?,
            mode: pick(self.mode, file, "mode", ClockMode::Virtual)?,
            cost: CostModel {
                latency: pick(self.alpha, file, "alpha", defaults.latency)?,
                inverse_bandwidth: pick(self.beta, file, "beta", defaults.inverse_bandwidth)?,
                compute_cost: pick(self.unit_cost, file, "unit-cost", defaults.compute_cost)?,
            },
            fo: pick(self.fo, file, "fo", DEFAULT_FOURIER)?,
            gamma: pick(self.gamma, file, "gamma", DEFAULT_GAMMA)?,
            cfl: pick(self.cfl, file, "cfl", DEFAULT_CFL)?,
            ic: match self.ic {
                Some(ic) => Some(ic),
                None => file.get("ic")?,
            },
        })
    }
}

fn pick<T>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T, CliError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    Ok(match flag {
        Some(v) => v,
        None => file.get(key)?.unwrap_or(default),
    })
}

impl Resolved {
    pub fn launch(&self) -> Result<LaunchConfig, CliError> {
        self.launch_at(self.n, self.w, self.wf)
    }

    pub fn launch_at(&self, n: usize, w: usize, wf: usize) -> Result<LaunchConfig, CliError> {
        let mut cfg = LaunchConfig::new(self.equation, self.method, n, self.ranks, w, wf, self.steps)?;
        cfg.mode = self.mode;
        cfg.cost = self.cost;
        if let Some(ic) = self.ic {
            cfg.initial = ic;
        }
        cfg.rederive_phys(self.fo, self.gamma, self.cfl)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn output_path(out_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        out_dir.join(path)
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn out_err(source: std::io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    }
}

/// Runs one configuration and returns its timing record.
pub fn run_record(cfg: &LaunchConfig, scheme: Decomposition) -> Result<TimingRecord, CliError> {
    let summary = solve(cfg, scheme, &RunOptions::default())?;
    Ok(measure(cfg, &summary))
}

/// Every valid configuration of the sweep, in config order. Invalid
/// combinations are reported through `skipped`.
pub fn sweep_records(
    base: &Resolved,
    grid_sizes: &[usize],
    widths: &[usize],
    wfs: &[usize],
    schemes: &[Decomposition],
    mut skipped: impl FnMut(usize, usize, usize, &CliError),
) -> Result<Vec<TimingRecord>, CliError> {
    let mut out = Vec::new();
    for &n in grid_sizes {
        for &w in widths {
            for &wf in wfs {
                let cfg = match base.launch_at(n, w, wf) {
                    Ok(cfg) => cfg,
                    Err(e) => {
                        skipped(n, w, wf, &e);
                        continue;
                    }
                };
                for &scheme in schemes {
                    out.push(run_record(&cfg, scheme)?);
                }
            }
        }
    }
    Ok(records::sorted(&out))
}

/// Best record per grid size for one scheme, then the power-law fit.
pub fn fit_records(
    records: &[TimingRecord],
    scheme: Decomposition,
    equation: Option<Equation>,
    method: Option<Method>,
) -> Result<(FitResult, Vec<(f64, f64)>), CliError> {
    let mut by_n: BTreeMap<usize, Vec<TimingRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| {
        r.scheme == scheme
            && equation.is_none_or(|e| r.equation == e)
            && method.is_none_or(|m| r.method == m)
    }) {
        by_n.entry(r.n).or_default().push(r.clone());
    }
    let mut points = Vec::with_capacity(by_n.len());
    for (n, group) in &by_n {
        points.push((*n as f64, best_config(group)?.avg_us_per_step));
    }
    Ok((power_law_fit(&points)?, points))
}

pub fn format_fit(fit: &FitResult, points: usize) -> String {
    format!(
        "A = {:.6e}, b = {:.6}, R^2 = {:.6} ({points} grid sizes)",
        fit.a, fit.b, fit.r_squared
    )
}

/// Best-configuration table with classic/swept and lengthening/flattening speedups.
pub fn report(records: &[TimingRecord], out: &mut dyn Write) -> std::io::Result<()> {
    type Key = (Equation, Method, usize);
    let mut groups: BTreeMap<(Key, Decomposition), Vec<TimingRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry(((r.equation, r.method, r.n), r.scheme))
            .or_default()
            .push(r.clone());
    }
    let best: BTreeMap<(Key, Decomposition), TimingRecord> = groups
        .iter()
        .filter_map(|(k, v)| best_config(v).ok().map(|b| (*k, b.clone())))
        .collect();
    writeln!(
        out,
        "{:<6} {:<12} {:>8} {:>14} {:>10} {:>14} {:>10} {:>8}",
        "eq", "method", "n", "classic_us", "(w,wf)", "swept_us", "(w,wf)", "speedup"
    )?;
    let keys: Vec<Key> = {
        let mut k: Vec<Key> = best.keys().map(|(k, _)| *k).collect();
        k.dedup();
        k
    };
    let cell = |r: Option<&TimingRecord>| match r {
        Some(r) => (
            format!("{:.4}", r.avg_us_per_step),
            format!("({},{})", r.w, r.wf),
        ),
        None => ("-".into(), "-".into()),
    };
    for key in &keys {
        let classic = best.get(&(*key, Decomposition::Classic));
        let swept = best.get(&(*key, Decomposition::Swept));
        let s = match (classic, swept) {
            (Some(c), Some(s)) => format!("{:.3}", speedup(c.avg_us_per_step, s.avg_us_per_step)),
            _ => "-".into(),
        };
        let (ct, cw) = cell(classic);
        let (st, sw) = cell(swept);
        writeln!(
            out,
            "{:<6} {:<12} {:>8} {:>14} {:>10} {:>14} {:>10} {:>8}",
            key.0.to_string(),
            key.1.to_string(),
            key.2,
            ct,
            cw,
            st,
            sw,
            s
        )?;
    }
    let mut flat_lines = Vec::new();
    for ((eq, method, n), scheme) in best.keys() {
        if *method != Method::Lengthening {
            continue;
        }
        if let (Some(l), Some(f)) = (
            best.get(&((*eq, Method::Lengthening, *n), *scheme)),
            best.get(&((*eq, Method::Flattening, *n), *scheme)),
        ) {
            flat_lines.push(format!(
                "{eq} {scheme} n={n}: flattening speedup {:.3}",
                flattening_speedup(l.avg_us_per_step, f.avg_us_per_step)
            ));
        }
    }
    for line in flat_lines {
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn write_field(path: &Path, field: &[f64], width: usize) -> Result<(), CliError> {
    let mut f = create(path)?;
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let header: Vec<String> = (0..width).map(|k| format!("v{k}")).collect();
    writeln!(f, "index,{}", header.join(",")).map_err(io)?;
    for (i, chunk) in field.chunks(width).enumerate() {
        let values: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{i},{}", values.join(",")).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Executes a parsed command line.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let out_dir = cli.out_dir;
    match cli.command {
        Command::Solve(args) => {
            let file = args.run.file()?;
            let cfg = args.run.resolve(&file, DEFAULT_STEPS)?.launch()?;
            let opts = RunOptions {
                record_coverage: args.coverage.is_some(),
                inject_ulp: None,
            };
            let summary = solve(&cfg, args.scheme, &opts)?;
            let record = measure(&cfg, &summary);
            for (k, v) in records::fields(&record) {
                writeln!(out, "{k}: {v}").map_err(out_err)?;
            }
            if let Some(p) = args.dump {
                write_field(&output_path(&out_dir, &p), &summary.field, summary.field_width)?;
            }
            if let Some(p) = args.log {
                let path = output_path(&out_dir, &p);
                let mut f = create(&path)?;
                write_log(&summary.log, &mut f)
                    .and_then(|()| f.flush())
                    .map_err(|source| CliError::Io { path, source })?;
            }
            if let (Some(p), Some(cov)) = (args.coverage, summary.coverage.as_ref()) {
                let path = output_path(&out_dir, &p);
                let mut f = create(&path)?;
                write_coverage(cov, &mut f)
                    .and_then(|()| f.flush())
                    .map_err(|source| CliError::Io { path, source })?;
            }
            if let Some(p) = args.csv {
                emit_csv(&[record], &output_path(&out_dir, &p))?;
            }
        }
        Command::Sweep(args) => {
            let file = args.run.file()?;
            let base = args.run.resolve(&file, DEFAULT_STEPS)?;
            let list = |flag: Option<Vec<usize>>, key: &str, default: &[usize]| -> Result<Vec<usize>, CliError> {
                Ok(match flag {
                    Some(v) => v,
                    None => file.get_list(key)?.unwrap_or_else(|| default.to_vec()),
                })
            };
            let grid_sizes = list(args.grid_sizes, "grid-sizes", &[1024, 2048, 4096, 8192, 16384])?;
            let widths = list(args.widths, "widths", &[16, 32, 64, 128])?;
            let wfs = list(args.wfs, "wfs", &[0, 2, 4])?;
            let schemes = match args.schemes {
                Some(s) => s,
                None => file
                    .get_list("schemes")?
                    .unwrap_or_else(|| vec![Decomposition::Classic, Decomposition::Swept]),
            };
            let rows = sweep_records(&base, &grid_sizes, &widths, &wfs, &schemes, |n, w, wf, e| {
                let _ = writeln!(err, "warning: skipping n={n} w={w} wf={wf}: {e}");
            })?;
            let path = output_path(&out_dir, &args.out);
            emit_csv(&rows, &path)?;
            writeln!(out, "wrote {} records to {}", rows.len(), path.display()).map_err(out_err)?;
        }
        Command::Verify(args) => {
            let file = args.run.file()?;
            let cfg = args.run.resolve(&file, DEFAULT_VERIFY_STEPS)?.launch()?;
            let opts = RunOptions {
                record_coverage: false,
                inject_ulp: args.inject_ulp,
            };
            let report = verify(&cfg, &opts)?;
            writeln!(out, "{report}").map_err(out_err)?;
            if !report.bitwise() {
                return Err(CliError::VerificationFailed(format!(
                    "swept vs classic {}, classic vs serial {}, max relative diff {:e}",
                    report.swept_vs_classic, report.classic_vs_serial, report.max_rel_diff
                )));
            }
        }
        Command::Fit(args) => {
            let rows = read_csv(&args.input)?;
            let (fit, points) = fit_records(&rows, args.scheme, args.equation, args.method)?;
            writeln!(out, "{}", format_fit(&fit, points.len())).map_err(out_err)?;
        }
        Command::Report(args) => {
            let rows = read_csv(&args.input)?;
            report(&rows, out).map_err(out_err)?;
        }
    }
    Ok(())
}
