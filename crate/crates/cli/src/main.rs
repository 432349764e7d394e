//! Command-line frontend: ingest load data, train the scenario generator,
//! draw error fields, and score error sources against reserve schedules.
//! Every command is batch-oriented, seeded, and writes a manifest that
//! reproduces the run byte-for-byte.

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use oascen_core::dataprep::{
    day_stats, denormalize_error, ingest_load_csv, DaySample, ErrorField, ErrorKind, Label,
    SignMode,
};
use oascen_core::evalharness::{evaluate, robust_error, EvalOptions, RobustLevel};
use oascen_core::grid::{load_grid, GridModel};
use oascen_core::oacgan::{
    generate, train, ArchConfig, Checkpoint, InfeasiblePolicy, NoiseSpec, TrainConfig, UpdateMode,
};
use oascen_core::opf::ScaleConstants;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

mod exit {
    pub const VALIDATION: u8 = 2;
    pub const SOLVER: u8 = 3;
    pub const IO: u8 = 4;
}

#[derive(Parser)]
#[command(name = "oascen", version, about = "Operation-adversarial net-load scenario tool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a load CSV, validate it against a grid, and write a dataset
    /// bundle of normalized forecast errors.
    Ingest(IngestArgs),
    /// Train the scenario generator on a dataset bundle.
    Train(TrainArgs),
    /// Draw error fields from a trained checkpoint.
    Generate(GenerateArgs),
    /// Score an error source on a dataset bundle.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Load CSV with header date,zone,hour,da_mw,rt_mw
    #[arg(long)]
    load: PathBuf,
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset bundle directory produced by `ingest`
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    grid: PathBuf,
    /// Weight of the adversarial term in [0, 1]; 1 disables the dispatch term
    #[arg(long, default_value = "0.8")]
    k: f64,
    #[arg(long, default_value = "30")]
    epochs: usize,
    #[arg(long, default_value = "100")]
    batch: usize,
    #[arg(long, default_value = "0.01")]
    alpha: f64,
    /// Learning rate of the dispatch-term step (defaults to --alpha)
    #[arg(long)]
    alpha_g2: Option<f64>,
    #[arg(long, default_value = "7")]
    seed: u64,
    #[arg(long, default_value = "32")]
    nz: usize,
    #[arg(long, default_value = "128")]
    hidden: usize,
    #[arg(long, default_value = "2.5")]
    output_range: f64,
    #[arg(long, default_value = "0.0")]
    delta_shift: f64,
    #[arg(long, default_value = "1.0")]
    delta_scale: f64,
    #[arg(long, value_parser = parse_sign, default_value = "round_trip")]
    sign: SignMode,
    #[arg(long, value_parser = parse_update_mode, default_value = "algorithm_one")]
    update_mode: UpdateMode,
    /// `skip` or `penalty:<gradient>`
    #[arg(long, default_value = "skip")]
    infeasible_policy: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    label: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "7")]
    seed: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    grid: PathBuf,
    /// `none`, `robust:<r>` or `generated:<csv>`
    #[arg(long)]
    error_source: String,
    /// Denormalization direction for generated error files
    #[arg(long, value_parser = parse_sign, default_value = "round_trip")]
    sign: SignMode,
    /// Compare required redispatch against +r_dn instead of -r_dn
    #[arg(long)]
    verbatim_downward: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_sign(s: &str) -> Result<SignMode, String> {
    match s {
        "round_trip" => Ok(SignMode::RoundTrip),
        "paper_plus" => Ok(SignMode::PaperPlus),
        other => Err(format!("unknown sign mode {other:?} (round_trip | paper_plus)")),
    }
}

fn parse_update_mode(s: &str) -> Result<UpdateMode, String> {
    match s {
        "algorithm_one" => Ok(UpdateMode::AlgorithmOne),
        "fused" => Ok(UpdateMode::Fused),
        other => Err(format!("unknown update mode {other:?} (algorithm_one | fused)")),
    }
}

/// Error kind attached near the failure point so `main` can pick the exit
/// code without string matching.
#[derive(Debug, Clone, Copy)]
enum Kind {
    Validation,
    Solver,
    Io,
}

struct CliError {
    kind: Kind,
    source: anyhow::Error,
}

type CliResult<T> = Result<T, CliError>;

trait WithKind<T> {
    fn kind(self, kind: Kind) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> WithKind<T> for Result<T, E> {
    fn kind(self, kind: Kind) -> CliResult<T> {
        self.map_err(|e| CliError {
            kind,
            source: e.into(),
        })
    }
}

fn fail(kind: Kind, msg: impl Into<String>) -> CliError {
    CliError {
        kind,
        source: anyhow!(msg.into()),
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    /// Exact argument vector (without the binary name); re-running the
    /// binary with these arguments reproduces every output byte.
    command: Vec<String>,
    outputs: Vec<String>,
}

fn write_manifest(dir: &Path, outputs: &[&str]) -> CliResult<()> {
    let manifest = Manifest {
        tool: "oascen".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: std::env::args().skip(1).collect(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), text + "\n").kind(Kind::Io)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    version: u32,
    zones: Vec<String>,
    n_days: usize,
    n_dropped: usize,
    horizon: usize,
}

fn float(v: f64) -> String {
    format!("{v}")
}

fn cmd_ingest(args: &IngestArgs) -> CliResult<()> {
    let grid = load_grid(&args.grid).kind(Kind::Validation)?;
    let ingest = ingest_load_csv(&args.load).map_err(|e| match e {
        oascen_core::dataprep::DataError::Io(_) => CliError {
            kind: Kind::Io,
            source: e.into(),
        },
        other => CliError {
            kind: Kind::Validation,
            source: other.into(),
        },
    })?;
    let mut grid_nodes: Vec<&str> = grid.nodes.iter().map(String::as_str).collect();
    grid_nodes.sort_unstable();
    let zone_refs: Vec<&str> = ingest.zones.iter().map(String::as_str).collect();
    if grid_nodes != zone_refs {
        return Err(fail(
            Kind::Validation,
            format!(
                "load zones {:?} do not match grid nodes {:?}",
                ingest.zones, grid.nodes
            ),
        ));
    }
    if ingest.days.is_empty() {
        return Err(fail(Kind::Validation, "no complete days in the load file"));
    }

    std::fs::create_dir_all(&args.out).kind(Kind::Io)?;
    let mut days_csv = String::from("date,zone,hour,da_mw,rt_mw\n");
    let mut errors_csv = String::from("date,zone,hour,eps\n");
    let mut stats_csv = String::from("date,zone,da_min,da_ave,da_max\n");
    let mut labels_csv = String::from("date,label\n");
    for day in &ingest.days {
        let stats = day_stats(day).kind(Kind::Validation)?;
        let (da_norm, rt_norm) =
            oascen_core::dataprep::normalize_day(day, &stats).kind(Kind::Validation)?;
        let eps = oascen_core::dataprep::forecast_error(&da_norm, &rt_norm);
        labels_csv.push_str(&format!("{},{}\n", day.date, day.label.0));
        for (z, zone) in ingest.zones.iter().enumerate() {
            stats_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                day.date,
                zone,
                float(stats.da_min[z]),
                float(stats.da_ave[z]),
                float(stats.da_max[z])
            ));
            for t in 0..day.horizon() {
                days_csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    day.date,
                    zone,
                    t + 1,
                    float(day.da_real[z][t]),
                    float(day.rt_real[z][t])
                ));
                errors_csv.push_str(&format!(
                    "{},{},{},{}\n",
                    day.date,
                    zone,
                    t + 1,
                    float(eps.eps[z][t])
                ));
            }
        }
    }
    let meta = BundleMeta {
        version: 1,
        zones: ingest.zones.clone(),
        n_days: ingest.days.len(),
        n_dropped: ingest.dropped.len(),
        horizon: oascen_core::dataprep::HOURS_PER_DAY,
    };
    std::fs::write(args.out.join("days.csv"), days_csv).kind(Kind::Io)?;
    std::fs::write(args.out.join("errors.csv"), errors_csv).kind(Kind::Io)?;
    std::fs::write(args.out.join("stats.csv"), stats_csv).kind(Kind::Io)?;
    std::fs::write(args.out.join("labels.csv"), labels_csv).kind(Kind::Io)?;
    std::fs::write(
        args.out.join("bundle.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n",
    )
    .kind(Kind::Io)?;
    write_manifest(
        &args.out,
        &["days.csv", "errors.csv", "stats.csv", "labels.csv", "bundle.json"],
    )?;
    println!(
        "ingested {} days ({} dropped) across {} zones",
        ingest.days.len(),
        ingest.dropped.len(),
        ingest.zones.len()
    );
    for (date, reason) in &ingest.dropped {
        eprintln!("dropped {date}: {reason}");
    }
    Ok(())
}

/// Load a bundle back into day samples aligned with the grid node order.
fn load_bundle(bundle: &Path, grid: &GridModel) -> CliResult<(BundleMeta, Vec<DaySample>)> {
    let meta_text = std::fs::read_to_string(bundle.join("bundle.json"))
        .with_context(|| format!("reading {}", bundle.join("bundle.json").display()))
        .kind(Kind::Io)?;
    let meta: BundleMeta = serde_json::from_str(&meta_text).kind(Kind::Validation)?;
    if meta.version != 1 {
        return Err(fail(
            Kind::Validation,
            format!("unsupported bundle version {}", meta.version),
        ));
    }
    let days_text = std::fs::read_to_string(bundle.join("days.csv")).kind(Kind::Io)?;
    let ingest = oascen_core::dataprep::ingest_load_str(&days_text).kind(Kind::Validation)?;
    if ingest.zones != meta.zones {
        return Err(fail(
            Kind::Validation,
            "bundle zone list does not match days.csv",
        ));
    }
    if meta.zones.len() != grid.n_nodes() {
        return Err(fail(
            Kind::Validation,
            "bundle zones do not cover the grid nodes",
        ));
    }
    // permute zone rows into grid node order
    let mut order = Vec::with_capacity(grid.n_nodes());
    for node in &grid.nodes {
        let idx = meta.zones.iter().position(|z| z == node).ok_or_else(|| {
            fail(
                Kind::Validation,
                format!("grid node {node:?} missing from bundle"),
            )
        })?;
        order.push(idx);
    }
    let days = ingest
        .days
        .into_iter()
        .map(|d| DaySample {
            date: d.date,
            da_real: order.iter().map(|&i| d.da_real[i].clone()).collect(),
            rt_real: order.iter().map(|&i| d.rt_real[i].clone()).collect(),
            label: d.label,
        })
        .collect();
    Ok((meta, days))
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let grid = load_grid(&args.grid).kind(Kind::Validation)?;
    let (_, days) = load_bundle(&args.bundle, &grid)?;
    let infeasible_policy = match args.infeasible_policy.as_str() {
        "skip" => InfeasiblePolicy::Skip,
        other => match other.strip_prefix("penalty:") {
            Some(v) => InfeasiblePolicy::Penalty {
                gradient: v
                    .parse()
                    .map_err(|_| fail(Kind::Validation, format!("bad penalty gradient {v:?}")))?,
            },
            None => {
                return Err(fail(
                    Kind::Validation,
                    format!("unknown infeasible policy {other:?} (skip | penalty:<g>)"),
                ))
            }
        },
    };
    let cfg = TrainConfig {
        k: args.k,
        alpha: args.alpha,
        alpha_g2: args.alpha_g2,
        batch_size: args.batch,
        epoch_max: args.epochs,
        noise: NoiseSpec { n_z: args.nz },
        scale: ScaleConstants::new(args.delta_shift, args.delta_scale),
        seed: args.seed,
        infeasible_policy,
        sign: args.sign,
        update_mode: args.update_mode,
        arch: ArchConfig {
            hidden: args.hidden,
            output_range: args.output_range,
        },
        n_labels: oascen_core::dataprep::QUARTER_LABELS,
    };
    let out = train(&days, &grid, &cfg).map_err(|e| match e {
        oascen_core::oacgan::TrainError::Opf(_) => CliError {
            kind: Kind::Solver,
            source: e.into(),
        },
        other => CliError {
            kind: Kind::Validation,
            source: other.into(),
        },
    })?;

    std::fs::create_dir_all(&args.out).kind(Kind::Io)?;
    let checkpoint = Checkpoint {
        version: 1,
        zones: grid.nodes.clone(),
        horizon: days[0].horizon(),
        n_labels: cfg.n_labels,
        noise: cfg.noise,
        scale: cfg.scale,
        sign: cfg.sign,
        g_spec: out.g_spec,
        theta_g: out.theta_g,
        d_spec: out.d_spec,
        theta_d: out.theta_d,
    };
    std::fs::write(args.out.join("checkpoint.json"), checkpoint.to_json() + "\n")
        .kind(Kind::Io)?;
    std::fs::write(args.out.join("trace.csv"), out.trace.to_csv()).kind(Kind::Io)?;
    write_manifest(&args.out, &["checkpoint.json", "trace.csv"])?;
    let last = out.trace.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} days: loss_d {:.4} loss_g {:.4}",
        out.trace.epochs.len(),
        days.len(),
        last.loss_d,
        last.loss_g
    );
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.checkpoint).kind(Kind::Io)?;
    let checkpoint = Checkpoint::from_json(&text).kind(Kind::Validation)?;
    if args.label >= checkpoint.n_labels {
        return Err(fail(
            Kind::Validation,
            format!(
                "label {} outside vocabulary of {}",
                args.label, checkpoint.n_labels
            ),
        ));
    }
    let fields = generate(
        &checkpoint.g_spec,
        &checkpoint.theta_g,
        Label(args.label),
        args.n,
        checkpoint.noise,
        args.seed,
        checkpoint.zones.len(),
        checkpoint.horizon,
    )
    .kind(Kind::Validation)?;
    let mut csv = String::from("sample,zone,hour,eps\n");
    for (s, field) in fields.iter().enumerate() {
        for (z, zone) in checkpoint.zones.iter().enumerate() {
            for t in 0..checkpoint.horizon {
                csv.push_str(&format!("{s},{zone},{},{}\n", t + 1, float(field.eps[z][t])));
            }
        }
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).kind(Kind::Io)?;
        }
    }
    std::fs::write(&args.out, csv).kind(Kind::Io)?;
    let manifest_dir = args.out.parent().unwrap_or(Path::new("."));
    write_manifest(
        manifest_dir,
        &[args
            .out
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("errors.csv")],
    )?;
    println!("generated {} error fields for label {}", args.n, args.label);
    Ok(())
}

/// Parse a generated-errors CSV (`sample,zone,hour,eps`) into per-sample
/// normalized fields with the zone order of `zones`.
fn read_generated_csv(path: &Path, zones: &[String], horizon: usize) -> CliResult<Vec<ErrorField>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .kind(Kind::Io)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != "sample,zone,hour,eps" {
        return Err(fail(
            Kind::Validation,
            format!("expected header sample,zone,hour,eps, got {header:?}"),
        ));
    }
    let mut fields: Vec<ErrorField> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(fail(
                Kind::Validation,
                format!("line {}: expected 4 fields", idx + 2),
            ));
        }
        let sample: usize = parts[0]
            .parse()
            .map_err(|_| fail(Kind::Validation, format!("bad sample index {:?}", parts[0])))?;
        let zone = parts[1];
        let hour: usize = parts[2]
            .parse()
            .map_err(|_| fail(Kind::Validation, format!("bad hour {:?}", parts[2])))?;
        let eps: f64 = parts[3]
            .parse()
            .map_err(|_| fail(Kind::Validation, format!("bad eps {:?}", parts[3])))?;
        let z = zones
            .iter()
            .position(|zn| zn == zone)
            .ok_or_else(|| fail(Kind::Validation, format!("unknown zone {zone:?}")))?;
        if hour == 0 || hour > horizon {
            return Err(fail(
                Kind::Validation,
                format!("hour {hour} outside 1..={horizon}"),
            ));
        }
        while fields.len() <= sample {
            fields.push(ErrorField::zeros(zones.len(), horizon, ErrorKind::Normalized));
        }
        fields[sample].eps[z][hour - 1] = eps;
    }
    if fields.is_empty() {
        return Err(fail(Kind::Validation, "no error rows in file"));
    }
    Ok(fields)
}

#[derive(Serialize)]
struct MetricsRecord {
    case_id: String,
    c_total: f64,
    i_up: f64,
    i_dn: f64,
    n_infeasible: usize,
    sign_mode: Option<String>,
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let grid = load_grid(&args.grid).kind(Kind::Validation)?;
    let (meta, days) = load_bundle(&args.bundle, &grid)?;
    let horizon = days.first().map(DaySample::horizon).unwrap_or(0);

    let (case_id, sign_mode, errors): (String, Option<SignMode>, Vec<ErrorField>) =
        if args.error_source == "none" {
            (
                "none".into(),
                None,
                days.iter()
                    .map(|d| ErrorField::zeros(grid.n_nodes(), d.horizon(), ErrorKind::PhysicalMw))
                    .collect(),
            )
        } else if let Some(r) = args.error_source.strip_prefix("robust:") {
            let level: f64 = r
                .parse()
                .map_err(|_| fail(Kind::Validation, format!("bad robust level {r:?}")))?;
            if level < 0.0 {
                return Err(fail(Kind::Validation, "robust level must be nonnegative"));
            }
            (
                format!("robust({level})"),
                None,
                days.iter()
                    .map(|d| robust_error(d, RobustLevel(level)))
                    .collect(),
            )
        } else if let Some(csv) = args.error_source.strip_prefix("generated:") {
            // normalized fields mapped by index onto the bundle days, then
            // denormalized against each day's own statistics
            let fields = read_generated_csv(Path::new(csv), &grid.nodes, horizon)?;
            if fields.len() != days.len() {
                return Err(fail(
                    Kind::Validation,
                    format!(
                        "{} generated samples but {} bundle days; indexes must align",
                        fields.len(),
                        days.len()
                    ),
                ));
            }
            let mut physical = Vec::with_capacity(days.len());
            for (field, day) in fields.iter().zip(&days) {
                let stats = day_stats(day).kind(Kind::Validation)?;
                let load =
                    denormalize_error(field, day, &stats, args.sign).kind(Kind::Validation)?;
                let eps = load
                    .iter()
                    .zip(&day.da_real)
                    .map(|(l, da)| l.iter().zip(da).map(|(v, d)| v - d).collect())
                    .collect();
                physical.push(ErrorField {
                    eps,
                    kind: ErrorKind::PhysicalMw,
                });
            }
            (format!("generated({csv})"), Some(args.sign), physical)
        } else {
            return Err(fail(
                Kind::Validation,
                format!(
                    "unknown error source {:?} (none | robust:<r> | generated:<csv>)",
                    args.error_source
                ),
            ));
        };

    let opts = EvalOptions {
        verbatim_downward: args.verbatim_downward,
        ..EvalOptions::default()
    };
    let (metrics, detail) = evaluate(&days, &errors, &grid, opts).map_err(|e| match e {
        oascen_core::evalharness::EvalError::Opf(_) => CliError {
            kind: Kind::Solver,
            source: e.into(),
        },
        other => CliError {
            kind: Kind::Validation,
            source: other.into(),
        },
    })?;

    std::fs::create_dir_all(&args.out).kind(Kind::Io)?;
    let record = MetricsRecord {
        case_id: case_id.clone(),
        c_total: metrics.c_total,
        i_up: metrics.i_up,
        i_dn: metrics.i_dn,
        n_infeasible: metrics.n_infeasible,
        sign_mode: sign_mode.map(|s| s.to_string()),
    };
    std::fs::write(
        args.out.join("metrics.json"),
        serde_json::to_string_pretty(&record).expect("record serializes") + "\n",
    )
    .kind(Kind::Io)?;
    let mut case_csv = String::from("case_id,c_total,i_up,i_dn,n_infeasible,sign_mode\n");
    case_csv.push_str(&format!(
        "{},{},{},{},{},{}\n",
        record.case_id,
        float(record.c_total),
        float(record.i_up),
        float(record.i_dn),
        record.n_infeasible,
        record.sign_mode.as_deref().unwrap_or("")
    ));
    std::fs::write(args.out.join("case.csv"), case_csv).kind(Kind::Io)?;
    let mut detail_csv = String::from("date,cost,feasible,up_covered,dn_covered\n");
    for o in &detail {
        detail_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            o.date,
            float(o.cost),
            o.feasible,
            o.up_covered,
            o.dn_covered
        ));
    }
    std::fs::write(args.out.join("detail.csv"), detail_csv).kind(Kind::Io)?;
    write_manifest(&args.out, &["metrics.json", "case.csv", "detail.csv"])?;
    println!(
        "case {case_id}: c_total {:.2} i_up {:.4} i_dn {:.4} infeasible {} of {}",
        metrics.c_total, metrics.i_up, metrics.i_dn, metrics.n_infeasible, meta.n_days
    );
    Ok(())
}

fn run() -> CliResult<()> {
    if let Ok(threads) = std::env::var("OASCEN_THREADS") {
        let n: usize = threads.parse().map_err(|_| {
            fail(
                Kind::Validation,
                format!("bad OASCEN_THREADS value {threads:?}"),
            )
        })?;
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match Cli::parse().command {
        Command::Ingest(args) => cmd_ingest(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Generate(args) => cmd_generate(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match e.kind {
                Kind::Validation => exit::VALIDATION,
                Kind::Solver => exit::SOLVER,
                Kind::Io => exit::IO,
            };
            eprintln!("error: {:#}", e.source);
            ExitCode::from(code)
        }
    }
}
