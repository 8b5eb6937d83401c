//! Command-line driver for the labeled-footprint localization pipeline.

use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use floc_core::config::{load_run_config, RunConfig};
use floc_core::detection::{oracle_detect, NoiseModel};
use floc_core::eval::{
    export_heatmap, metrics_from_csv, run_localize, save_metrics_csv, save_summary, summarize,
    HeatmapOverlay, MetricRow,
};
use floc_core::geometry::Vec2;
use floc_core::maps::{
    build_distance_field, load_footprint_map, load_occupancy_map, save_footprint_map,
    save_occupancy_map, LabeledFootprintMap, OccupancyGridMap,
};
use floc_core::mcl::{evaluate, sample_uniform, EvalInputs, Modality};
use floc_core::seeding::derive_seed;
use floc_core::simworld::{
    generate_dataset, generate_random_pose_dataset, generate_world, load_dataset, save_dataset,
    ArchetypeKind, ArchetypeSpec, ScanSimConfig, TrajectorySpec,
};
use floc_core::vlm::{vlm_detect, VlmEndpointConfig};

#[derive(Parser)]
#[command(
    name = "floc",
    about = "Global localization on labeled footprint maps",
    version
)]
struct Cli {
    /// Base random seed for all derived streams.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Run configuration file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Likelihood modality: vision, scan, or fused.
    #[arg(long, global = true, default_value = "fused")]
    modality: String,

    /// Worker threads for hypothesis evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world: footprint map plus occupancy grid.
    GenWorld(GenWorldArgs),
    /// Record a dataset of scans and oracle detections in a world.
    GenDataset(GenDatasetArgs),
    /// Run a detector over a dataset, writing label sets back.
    Detect(DetectArgs),
    /// Localize every dataset record and write metrics.
    Localize(LocalizeArgs),
    /// Recompute and print summary statistics from a metrics CSV.
    Report(ReportArgs),
    /// Export the likelihood heatmap of one record.
    Heatmap(HeatmapArgs),
}

#[derive(Args)]
struct GenWorldArgs {
    /// Archetype: UG/UA, UG/DA, DG/UA or DG/DA.
    #[arg(long)]
    archetype: String,
    /// Output directory for footprint.json, map.pgm and map.yaml.
    #[arg(long)]
    out_dir: PathBuf,
    /// World edge length in meters.
    #[arg(long, default_value_t = 20.0)]
    world_size: f64,
    /// Number of landmark objects (archetype default when omitted).
    #[arg(long)]
    objects: Option<usize>,
    /// Vocabulary size for uniform-appearance worlds (1..=3).
    #[arg(long)]
    vocab: Option<usize>,
    /// Grid resolution in meters per cell.
    #[arg(long, default_value_t = 0.05)]
    resolution: f64,
}

#[derive(Args)]
struct GenDatasetArgs {
    /// Directory produced by gen-world.
    #[arg(long)]
    map_dir: PathBuf,
    /// Output dataset (newline-delimited JSON records).
    #[arg(long)]
    out: PathBuf,
    /// Number of independent random free poses to record.
    #[arg(long, conflicts_with = "waypoints")]
    records: Option<usize>,
    /// Waypoint polyline "x,y;x,y;..." to interpolate instead.
    #[arg(long)]
    waypoints: Option<String>,
    /// Pose spacing along the polyline, meters.
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    /// Seconds between records.
    #[arg(long, default_value_t = 1.0)]
    interval: f64,
    /// Detector label drop probability.
    #[arg(long, default_value_t = 0.0)]
    drop_prob: f64,
    /// Detector false-positive probability.
    #[arg(long, default_value_t = 0.0)]
    fp_prob: f64,
    /// Label confusion entries "label=alt1|alt2", repeatable.
    #[arg(long)]
    confusion: Vec<String>,
    /// Scan range noise sigma, meters.
    #[arg(long, default_value_t = 0.01)]
    scan_sigma: f64,
    /// Scan beam count.
    #[arg(long, default_value_t = 360)]
    scan_beams: usize,
    /// Scan maximum range, meters.
    #[arg(long, default_value_t = 12.0)]
    scan_range: f64,
}

#[derive(Args)]
struct DetectArgs {
    /// Input dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory produced by gen-world.
    #[arg(long)]
    map_dir: PathBuf,
    /// Detector backend: oracle or vlm.
    #[arg(long, default_value = "oracle")]
    detector: String,
    /// Output dataset with labels rewritten.
    #[arg(long)]
    out: PathBuf,
    /// Oracle label drop probability.
    #[arg(long, default_value_t = 0.0)]
    drop_prob: f64,
    /// Oracle false-positive probability.
    #[arg(long, default_value_t = 0.0)]
    fp_prob: f64,
    /// Label confusion entries "label=alt1|alt2", repeatable (oracle).
    #[arg(long)]
    confusion: Vec<String>,
    /// Endpoint configuration file (JSON) for the vlm backend.
    #[arg(long)]
    vlm_config: Option<PathBuf>,
}

#[derive(Args)]
struct LocalizeArgs {
    /// Input dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory produced by gen-world.
    #[arg(long)]
    map_dir: PathBuf,
    /// Hypothesis count override.
    #[arg(long)]
    hypotheses: Option<usize>,
    /// Metrics CSV output path.
    #[arg(long)]
    out_csv: PathBuf,
    /// Summary JSON output path.
    #[arg(long)]
    out_summary: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics CSV produced by localize.
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Input dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Record index to visualize.
    #[arg(long, default_value_t = 0)]
    record: usize,
    /// Directory produced by gen-world.
    #[arg(long)]
    map_dir: PathBuf,
    /// Hypothesis count override.
    #[arg(long)]
    hypotheses: Option<usize>,
    /// Output PGM path.
    #[arg(long)]
    out: PathBuf,
    /// Draw the ground-truth pose marker.
    #[arg(long, default_value_t = false)]
    overlay_gt: bool,
}

/// Two-level error so usage problems are distinguishable from pipeline
/// failures in the machine-readable output.
#[derive(Debug)]
enum CliError {
    Core(floc_core::Error),
    Usage(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<floc_core::Error> for CliError {
    fn from(e: floc_core::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let kind = match &e {
            CliError::Core(err) => err.kind(),
            CliError::Usage(_) => "usage",
        };
        let doc = serde_json::json!({"error": e.to_string(), "kind": kind});
        eprintln!("{doc}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(|e| usage(format!("worker pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => load_run_config(path)?,
        None => RunConfig::default(),
    };
    let modality: Modality = cli.modality.parse()?;
    let seed = cli.seed;

    match cli.command {
        Command::GenWorld(args) => gen_world(args, seed),
        Command::GenDataset(args) => gen_dataset(args, &cfg, seed),
        Command::Detect(args) => detect(args, &cfg, seed),
        Command::Localize(args) => localize(args, &mut cfg, modality, seed),
        Command::Report(args) => report(args),
        Command::Heatmap(args) => heatmap(args, &mut cfg, modality, seed),
    }
}

fn map_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join("footprint.json"),
        dir.join("map.pgm"),
        dir.join("map.yaml"),
    )
}

fn load_world(dir: &Path) -> CliResult<(LabeledFootprintMap, OccupancyGridMap)> {
    let (footprint, pgm, meta) = map_paths(dir);
    Ok((
        load_footprint_map(footprint)?,
        load_occupancy_map(pgm, meta)?,
    ))
}

fn labels_from_observation(obs: &floc_core::detection::LabelObservation) -> Vec<Vec<String>> {
    obs.per_camera
        .iter()
        .zip(obs.off_map.iter())
        .map(|(on, off)| on.iter().chain(off.iter()).cloned().collect())
        .collect()
}

fn gen_world(args: GenWorldArgs, seed: u64) -> CliResult<()> {
    let kind: ArchetypeKind = args.archetype.parse()?;
    let mut spec = ArchetypeSpec::new(kind, seed);
    spec.world_size = (args.world_size, args.world_size);
    spec.resolution = args.resolution;
    if let Some(n) = args.objects {
        spec.object_count = n;
    }
    if let Some(v) = args.vocab {
        spec.label_vocabulary_size = v;
    }
    let (map, grid) = generate_world(&spec)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| usage(format!("create {}: {e}", args.out_dir.display())))?;
    let (footprint, pgm, meta) = map_paths(&args.out_dir);
    save_footprint_map(&map, footprint)?;
    save_occupancy_map(&grid, pgm, meta)?;
    println!(
        "wrote {} world ({} landmarks, {} labels) to {}",
        kind,
        map.landmarks().len(),
        map.label_set().len(),
        args.out_dir.display()
    );
    Ok(())
}

fn parse_confusion(entries: &[String]) -> CliResult<BTreeMap<String, Vec<String>>> {
    let mut confusion = BTreeMap::new();
    for entry in entries {
        let (from, to) = entry
            .split_once('=')
            .ok_or_else(|| usage(format!("confusion entry '{entry}' is not label=alt1|alt2")))?;
        let alts: Vec<String> = to.split('|').map(|s| s.trim().to_string()).collect();
        if alts.is_empty() || alts.iter().any(|a| a.is_empty()) {
            return Err(usage(format!(
                "confusion entry '{entry}' has empty alternatives"
            )));
        }
        confusion.insert(from.trim().to_string(), alts);
    }
    Ok(confusion)
}

fn parse_waypoints(text: &str) -> CliResult<Vec<Vec2>> {
    text.split(';')
        .map(|pair| {
            let (x, y) = pair
                .split_once(',')
                .ok_or_else(|| usage(format!("waypoint '{pair}' is not x,y")))?;
            let x: f64 = x
                .trim()
                .parse()
                .map_err(|e| usage(format!("waypoint x: {e}")))?;
            let y: f64 = y
                .trim()
                .parse()
                .map_err(|e| usage(format!("waypoint y: {e}")))?;
            Ok(Vec2::new(x, y))
        })
        .collect()
}

fn gen_dataset(args: GenDatasetArgs, cfg: &RunConfig, seed: u64) -> CliResult<()> {
    let (map, grid) = load_world(&args.map_dir)?;
    let noise = NoiseModel {
        drop_prob: args.drop_prob,
        false_positive_prob: args.fp_prob,
        confusion: parse_confusion(&args.confusion)?,
        seed: 0,
    };
    let scan_cfg = ScanSimConfig {
        beam_count: args.scan_beams,
        fov: std::f64::consts::TAU,
        max_range: args.scan_range,
        range_noise_sigma: args.scan_sigma,
    };
    let records = match (&args.waypoints, args.records) {
        (Some(text), _) => {
            let trajectory = TrajectorySpec {
                waypoints: parse_waypoints(text)?,
                spacing_m: args.spacing,
                interval_s: args.interval,
            };
            generate_dataset(&map, &grid, &trajectory, &cfg.rig, &noise, &scan_cfg, seed)?
        }
        (None, Some(count)) => generate_random_pose_dataset(
            &map,
            &grid,
            &cfg.rig,
            &noise,
            &scan_cfg,
            count,
            args.interval,
            seed,
        )?,
        (None, None) => {
            return Err(usage("gen-dataset needs --records N or --waypoints"));
        }
    };
    save_dataset(&records, &args.out)?;
    println!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

fn detect(args: DetectArgs, cfg: &RunConfig, seed: u64) -> CliResult<()> {
    let (map, _grid) = load_world(&args.map_dir)?;
    let mut records = load_dataset(&args.dataset)?;
    match args.detector.as_str() {
        "oracle" => {
            let noise = NoiseModel {
                drop_prob: args.drop_prob,
                false_positive_prob: args.fp_prob,
                confusion: parse_confusion(&args.confusion)?,
                seed: 0,
            };
            for (i, record) in records.iter_mut().enumerate() {
                let obs = oracle_detect(
                    &record.pose_gt,
                    &cfg.rig,
                    &map,
                    &noise.with_seed(derive_seed(seed, i as u64)),
                )?;
                record.labels = Some(labels_from_observation(&obs));
            }
        }
        "vlm" => {
            let vlm_cfg: VlmEndpointConfig = match &args.vlm_config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| usage(format!("read {}: {e}", path.display())))?;
                    serde_json::from_str(&text)
                        .map_err(|e| usage(format!("parse {}: {e}", path.display())))?
                }
                None => VlmEndpointConfig::default(),
            };
            let mut failures = 0usize;
            for (i, record) in records.iter_mut().enumerate() {
                let Some(images) = record.images.clone() else {
                    log::warn!("record {i}: no image references, skipping");
                    failures += 1;
                    continue;
                };
                let paths: Vec<PathBuf> = images.iter().map(PathBuf::from).collect();
                match vlm_detect(&paths, &map, &vlm_cfg) {
                    Ok(obs) => record.labels = Some(labels_from_observation(&obs)),
                    Err(e) => {
                        log::warn!("record {i}: detector unavailable ({e}); labels left empty");
                        failures += 1;
                    }
                }
            }
            if failures > 0 {
                eprintln!("{failures} record(s) left without labels");
            }
        }
        other => return Err(usage(format!("unknown detector '{other}'"))),
    }
    save_dataset(&records, &args.out)?;
    println!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

fn localize(
    args: LocalizeArgs,
    cfg: &mut RunConfig,
    modality: Modality,
    seed: u64,
) -> CliResult<()> {
    if let Some(n) = args.hypotheses {
        cfg.hypothesis_count = n;
    }
    let (map, grid) = load_world(&args.map_dir)?;
    let records = load_dataset(&args.dataset)?;
    let out = run_localize(&records, &map, &grid, cfg, modality, seed)?;
    save_metrics_csv(&out.rows, &args.out_csv)?;
    if let Some(path) = &args.out_summary {
        save_summary(&out.summary, path)?;
    }
    println!(
        "{} records | {} | e_trans {:.3} +/- {:.3} m | e_rot {:.3} +/- {:.3} rad",
        out.summary.record_count,
        out.summary.modality,
        out.summary.e_trans_mean,
        out.summary.e_trans_std,
        out.summary.e_rot_mean,
        out.summary.e_rot_std,
    );
    Ok(())
}

fn report(args: ReportArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.csv)
        .map_err(|e| usage(format!("read {}: {e}", args.csv.display())))?;
    let rows = metrics_from_csv(&text)?;
    let mut by_modality: BTreeMap<String, Vec<MetricRow>> = BTreeMap::new();
    for row in rows {
        by_modality
            .entry(row.modality.to_string())
            .or_default()
            .push(row);
    }
    println!(
        "{:<8} {:>6} {:>12} {:>12} {:>12} {:>12}",
        "modality", "count", "e_trans", "std", "e_rot", "std"
    );
    for (name, rows) in &by_modality {
        let modality: Modality = name.parse()?;
        let s = summarize(rows, modality, String::new(), 0);
        println!(
            "{:<8} {:>6} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            name, s.record_count, s.e_trans_mean, s.e_trans_std, s.e_rot_mean, s.e_rot_std
        );
    }
    Ok(())
}

fn heatmap(args: HeatmapArgs, cfg: &mut RunConfig, modality: Modality, seed: u64) -> CliResult<()> {
    if let Some(n) = args.hypotheses {
        cfg.hypothesis_count = n;
    }
    let (map, grid) = load_world(&args.map_dir)?;
    let records = load_dataset(&args.dataset)?;
    let record = records.get(args.record).ok_or_else(|| {
        usage(format!(
            "record {} out of range ({} records)",
            args.record,
            records.len()
        ))
    })?;

    let wants_vision = modality != Modality::Scan;
    let wants_scan = modality != Modality::Vision;
    let obs = if wants_vision {
        Some(record.observation(&map)?)
    } else {
        None
    };
    let scan = if wants_scan {
        Some(record.scan.to_observation()?)
    } else {
        None
    };
    let field = if wants_scan {
        Some(build_distance_field(&grid))
    } else {
        None
    };
    let mut hyps = sample_uniform(
        &grid,
        cfg.hypothesis_count,
        derive_seed(seed, args.record as u64),
    )?;
    let inputs = EvalInputs {
        map: &map,
        rig: &cfg.rig,
        occlusion: cfg.occlusion,
        grid: Some(&grid),
        distance_field: field.as_ref(),
        vision_params: cfg.vision,
        scan_params: cfg.scan,
    };
    evaluate(&mut hyps, obs.as_ref(), scan.as_ref(), &inputs)?;
    let est = floc_core::mcl::map_estimate(&hyps, modality)?;
    let overlay = HeatmapOverlay {
        estimate: Some(est.pose),
        ground_truth: args.overlay_gt.then_some(record.pose_gt),
    };
    export_heatmap(&hyps, modality, &grid, &args.out, overlay)?;
    println!(
        "wrote {} heatmap of record {} to {} (estimate at {:.2}, {:.2})",
        modality,
        args.record,
        args.out.display(),
        est.pose.x(),
        est.pose.y()
    );
    Ok(())
}
