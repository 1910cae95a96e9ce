//! Command-line front end: `enhance`, `simulate`, `evaluate` and `sweep`.
//!
//! Exit codes are 0 on success, 2 for usage or configuration problems and 3
//! when processing fails.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{read_wav, write_wav, AudioClip, BitDepth};
use crate::error::Error;
use crate::filters::{BinStatus, ChannelPartition, Method};
use crate::metrics::{evaluate, evaluate_signals, MetricsReport, ShadowPair};
use crate::pipeline::{enhance, EnhanceConfig, EnhanceResult, GroundTruth};
use crate::scenegen::{
    default_suite, grid_partition, render_scene_with_speech, SceneConfig, SceneOutput, SuiteCell,
    SUITE_ARRAY_SIZES, SUITE_SNRS_DB, SUITE_SPP_MODES,
};
use crate::spp::{SppMode, SppSource};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROCESSING: i32 = 3;

/// Environment variable capping the number of sweep worker threads.
pub const THREADS_ENV: &str = "EGOMWF_THREADS";

#[derive(Debug, Parser)]
#[command(name = "egomwf", version, about = "Ego-noise reduction for UAV-mounted microphone arrays")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enhance a multichannel recording.
    Enhance(EnhanceArgs),
    /// Render synthetic scenes with ground-truth components.
    Simulate(SimulateArgs),
    /// Score a processed signal against clean and noisy references.
    Evaluate(EvaluateArgs),
    /// Run the configuration grid end to end and tabulate the results.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// JSON pipeline configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_parser = parse_spp_mode)]
    pub spp_mode: Option<SppMode>,
    #[arg(long)]
    pub spp_channel: Option<usize>,
    /// Speech component of the input, enables oracle SPP and output SNR.
    #[arg(long, requires = "noise_image")]
    pub speech_image: Option<PathBuf>,
    /// Noise component of the input.
    #[arg(long, requires = "speech_image")]
    pub noise_image: Option<PathBuf>,
    #[arg(long, default_value = "32f", value_parser = parse_bit_depth)]
    pub bit_depth: BitDepth,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON scene configuration.
    #[arg(long, conflicts_with = "default_suite", required_unless_present = "default_suite")]
    pub scene_config: Option<PathBuf>,
    /// Render the scenes of the default configuration grid.
    #[arg(long)]
    pub default_suite: bool,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Mono speech WAV.
    #[arg(long)]
    pub speech: PathBuf,
    /// Overrides the seed of every rendered scene.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Clean speech at the reference microphone.
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub processed: PathBuf,
    /// Unprocessed mixture at the reference microphone.
    #[arg(long)]
    pub noisy: PathBuf,
    #[arg(long, requires = "shadow_noise")]
    pub shadow_speech: Option<PathBuf>,
    #[arg(long, requires = "shadow_speech")]
    pub shadow_noise: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
    /// Channel taken from multichannel clean/noisy files.
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Mono speech WAV.
    #[arg(long)]
    pub speech: PathBuf,
    /// Scene seeds; metrics are averaged over them.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snrs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_spp_mode)]
    pub spp_modes: Option<Vec<SppMode>>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
}

fn parse_spp_mode(s: &str) -> std::result::Result<SppMode, String> {
    match s {
        "internal" | "ispp" => Ok(SppMode::Internal),
        "external" | "xspp" => Ok(SppMode::External),
        "oracle" => Ok(SppMode::Oracle),
        _ => Err(format!("unknown SPP mode '{s}' (internal, external, oracle)")),
    }
}

fn parse_bit_depth(s: &str) -> std::result::Result<BitDepth, String> {
    match s {
        "16" => Ok(BitDepth::Int16),
        "32f" => Ok(BitDepth::Float32),
        _ => Err(format!("unknown bit depth '{s}' (16, 32f)")),
    }
}

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Processing(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Processing(_) => EXIT_PROCESSING,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Processing(m) => write!(f, "processing error: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Partition(_) | Error::InvalidParam(_) => Failure::Config(e.to_string()),
            _ => Failure::Processing(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Enhance(a) => cmd_enhance(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("egomwf: {f}");
            f.exit_code()
        }
    }
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Processing(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Failure::Processing(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Failure::Processing(format!("{}: {e}", path.display())))
}

/// Per-bin outcome counts of a filter bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusTally {
    pub ok: usize,
    pub no_speech_frames: usize,
    pub no_noise_frames: usize,
    pub clamped_gain: usize,
}

impl StatusTally {
    pub fn of(status: &[BinStatus]) -> Self {
        let count = |s| status.iter().filter(|&&x| x == s).count();
        Self {
            ok: count(BinStatus::Ok),
            no_speech_frames: count(BinStatus::NoSpeechFrames),
            no_noise_frames: count(BinStatus::NoNoiseFrames),
            clamped_gain: count(BinStatus::ClampedGain),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SppSummary {
    pub source: SppSource,
    pub active_fraction: f64,
}

/// JSON written by `enhance --report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceReport {
    pub method: Method,
    pub partition: ChannelPartition,
    pub spp: SppSummary,
    pub bins: usize,
    pub bin_status: StatusTally,
    pub input_channels: usize,
    pub sample_rate_hz: u32,
    pub frames: usize,
    /// Present when ground-truth components were supplied.
    pub metrics: Option<MetricsReport>,
}

impl EnhanceReport {
    pub fn new(result: &EnhanceResult, input_channels: usize, metrics: Option<MetricsReport>) -> Self {
        let fb = &result.filterbank;
        Self {
            method: fb.method,
            partition: fb.partition.clone(),
            spp: SppSummary {
                source: result.mask.source.unwrap_or(SppSource::Oracle),
                active_fraction: result.mask.active_fraction(),
            },
            bins: fb.bins(),
            bin_status: StatusTally::of(&fb.status),
            input_channels,
            sample_rate_hz: result.enhanced.sample_rate_hz(),
            frames: result.enhanced.frames(),
            metrics,
        }
    }
}

/// Pipeline config as read from the `--config` file with flag overrides applied.
pub fn resolve_enhance_config(args: &EnhanceArgs) -> CliResult<EnhanceConfig> {
    let mut cfg: EnhanceConfig = load_json(&args.config)?;
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(mode) = args.spp_mode {
        cfg.spp.mode = mode;
    }
    if let Some(c) = args.spp_channel {
        cfg.spp.channel = Some(c);
    }
    Ok(cfg)
}

fn reference_clip(clip: &AudioClip, channel: usize) -> CliResult<AudioClip> {
    Ok(clip.select_channels(&[channel])?)
}

pub fn cmd_enhance(args: &EnhanceArgs) -> CliResult<()> {
    let cfg = resolve_enhance_config(args)?;
    // config problems win over an unreadable input, and are listed together
    let input = match read_wav(&args.input) {
        Ok(clip) => clip,
        Err(e) => {
            cfg.validate(None)?;
            return Err(e.into());
        }
    };
    cfg.validate(Some(input.channels()))?;
    let truth = match (&args.speech_image, &args.noise_image) {
        (Some(s), Some(n)) => Some(GroundTruth {
            speech_image: read_wav(s)?,
            noise_image: read_wav(n)?,
        }),
        _ => None,
    };
    if cfg.spp.mode == SppMode::Oracle && truth.is_none() {
        return Err(Failure::Config(
            "oracle SPP needs --speech-image and --noise-image".into(),
        ));
    }
    let result = enhance(&input, &cfg, truth.as_ref())?;
    write_wav(&result.enhanced, &args.output, args.bit_depth)?;

    if let Some(path) = &args.report {
        let metrics = match &truth {
            Some(t) => {
                let r = cfg.partition.reference_physical();
                let clean = reference_clip(&at_output_rate(&t.speech_image, &result)?, r)?;
                let noisy = reference_clip(&at_output_rate(&input, &result)?, r)?;
                Some(evaluate(&result, &clean, &noisy)?)
            }
            None => None,
        };
        write_json(&EnhanceReport::new(&result, input.channels(), metrics), path)?;
    }
    Ok(())
}

fn at_output_rate(clip: &AudioClip, result: &EnhanceResult) -> CliResult<AudioClip> {
    Ok(crate::audio_io::resample(clip, result.enhanced.sample_rate_hz())?)
}

/// Files written for one rendered scene.
pub fn write_scene(scene: &SceneOutput, dir: &Path) -> CliResult<()> {
    create_dir(dir)?;
    write_wav(&scene.mixture, dir.join("mixture.wav"), BitDepth::Float32)?;
    write_wav(&scene.speech_image, dir.join("speech.wav"), BitDepth::Float32)?;
    write_wav(&scene.noise_image, dir.join("noise.wav"), BitDepth::Float32)?;
    if let Some(x) = scene.manifest.external_channel {
        write_wav(&scene.mixture.select_channels(&[x])?, dir.join("external.wav"), BitDepth::Float32)?;
    }
    write_json(&scene.manifest, &dir.join("manifest.json"))
}

/// Directory name of a suite scene, e.g. `snr-10_seed1`.
pub fn scene_dir_name(cfg: &SceneConfig) -> String {
    format!("snr{}_seed{}", cfg.target_snr_db, cfg.seed)
}

/// Manifest of one suite cell written by `simulate --default-suite`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellManifest {
    pub key: String,
    /// Scene directory relative to the output directory.
    pub scene_dir: String,
    #[serde(flatten)]
    pub cell: SuiteCell,
}

fn read_speech(path: &Path) -> CliResult<AudioClip> {
    let clip = read_wav(path)?;
    if clip.channels() != 1 {
        return Err(Failure::Config(format!(
            "{}: speech must be mono, got {} channels",
            path.display(),
            clip.channels()
        )));
    }
    Ok(clip)
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let speech = read_speech(&args.speech)?;
    create_dir(&args.output_dir)?;
    let with_seed = |mut c: SceneConfig| {
        if let Some(s) = args.seed {
            c.seed = s;
        }
        c.speech_path = Some(args.speech.clone());
        c
    };
    if let Some(path) = &args.scene_config {
        let cfg = with_seed(load_json::<SceneConfig>(path)?);
        cfg.validate()?;
        let mut scene = render_scene_with_speech(&cfg, &speech)?;
        scene.manifest.speech_source = Some(args.speech.display().to_string());
        return write_scene(&scene, &args.output_dir);
    }

    let cells: Vec<CellManifest> = default_suite()
        .into_iter()
        .map(|mut cell| {
            cell.scene = with_seed(cell.scene);
            CellManifest {
                key: cell.key(),
                scene_dir: format!("scenes/{}", scene_dir_name(&cell.scene)),
                cell,
            }
        })
        .collect();
    let mut rendered: Vec<&str> = Vec::new();
    for c in &cells {
        if rendered.contains(&c.scene_dir.as_str()) {
            continue;
        }
        let mut scene = render_scene_with_speech(&c.cell.scene, &speech)?;
        scene.manifest.speech_source = Some(args.speech.display().to_string());
        write_scene(&scene, &args.output_dir.join(&c.scene_dir))?;
        rendered.push(&c.scene_dir);
    }
    let cell_dir = args.output_dir.join("cells");
    create_dir(&cell_dir)?;
    for c in &cells {
        write_json(c, &cell_dir.join(format!("{}.json", c.key)))?;
    }
    write_json(&cells, &args.output_dir.join("suite.json"))
}

fn read_mono(path: &Path, channel: usize) -> CliResult<AudioClip> {
    let clip = read_wav(path)?;
    if clip.channels() == 1 {
        return Ok(clip);
    }
    Ok(clip.select_channels(&[channel])?)
}

/// Metrics exactly as `evaluate` would report them for these files.
pub fn evaluate_files(args: &EvaluateArgs) -> CliResult<MetricsReport> {
    let clean = read_mono(&args.clean, args.channel)?;
    let noisy = read_mono(&args.noisy, args.channel)?;
    let processed = read_mono(&args.processed, 0)?;
    let shadow = match (&args.shadow_speech, &args.shadow_noise) {
        (Some(s), Some(n)) => Some((read_mono(s, 0)?, read_mono(n, 0)?)),
        _ => None,
    };
    let pair = shadow.as_ref().map(|(speech, noise)| ShadowPair { speech, noise });
    Ok(evaluate_signals(&clean, &noisy, &processed, pair)?)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let report = evaluate_files(args)?;
    write_json(&report, &args.report)
}

/// Grid and seeds of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub seeds: Vec<u64>,
    pub snrs_db: Vec<f64>,
    pub array_sizes: Vec<usize>,
    pub spp_modes: Vec<SppMode>,
    pub methods: Vec<Method>,
    pub base_scene: SceneConfig,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            seeds: vec![1],
            snrs_db: SUITE_SNRS_DB.to_vec(),
            array_sizes: SUITE_ARRAY_SIZES.to_vec(),
            spp_modes: SUITE_SPP_MODES.to_vec(),
            methods: Method::ALL.to_vec(),
            base_scene: SceneConfig::default(),
        }
    }
}

impl SweepPlan {
    pub fn cell_count(&self) -> usize {
        self.snrs_db.len() * self.array_sizes.len() * self.spp_modes.len() * self.methods.len()
    }
}

/// One row of the sweep table, metrics averaged over the plan's seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub key: String,
    pub snr_db: f64,
    pub m_speech_noise: usize,
    pub m_noise: usize,
    pub spp_mode: SppMode,
    pub method: Method,
    pub seeds: usize,
    pub snr_in_db: Option<f64>,
    pub snr_out_db: Option<f64>,
    pub snr_improvement_db: Option<f64>,
    pub stoi_in: Option<f64>,
    pub stoi_out: Option<f64>,
    pub stoi_improvement: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResults {
    pub fn row(&self, snr_db: f64, m_speech_noise: usize, mode: SppMode, method: Method) -> Option<&SweepRow> {
        self.rows.iter().find(|r| {
            r.snr_db == snr_db && r.m_speech_noise == m_speech_noise && r.spp_mode == mode && r.method == method
        })
    }

    pub fn to_csv(&self) -> crate::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRow::from(r))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Metric(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

// csv cannot serialize the enum fields directly in a flat record.
#[derive(Serialize)]
struct CsvRow<'a> {
    key: &'a str,
    snr_db: f64,
    m_speech_noise: usize,
    m_noise: usize,
    spp_mode: String,
    method: &'static str,
    seeds: usize,
    snr_in_db: Option<f64>,
    snr_out_db: Option<f64>,
    snr_improvement_db: Option<f64>,
    stoi_in: Option<f64>,
    stoi_out: Option<f64>,
    stoi_improvement: Option<f64>,
    error: Option<&'a str>,
}

impl<'a> From<&'a SweepRow> for CsvRow<'a> {
    fn from(r: &'a SweepRow) -> Self {
        Self {
            key: &r.key,
            snr_db: r.snr_db,
            m_speech_noise: r.m_speech_noise,
            m_noise: r.m_noise,
            spp_mode: r.spp_mode.to_string(),
            method: r.method.as_str(),
            seeds: r.seeds,
            snr_in_db: r.snr_in_db,
            snr_out_db: r.snr_out_db,
            snr_improvement_db: r.snr_improvement_db,
            stoi_in: r.stoi_in,
            stoi_out: r.stoi_out,
            stoi_improvement: r.stoi_improvement,
            error: r.error.as_deref(),
        }
    }
}

/// Enhances and scores one cell on an already rendered scene.
pub fn run_cell(scene: &SceneOutput, cell: &SuiteCell) -> crate::Result<MetricsReport> {
    let cfg = EnhanceConfig::new(cell.partition.clone(), cell.method, cell.spp_mode);
    let truth = GroundTruth {
        speech_image: scene.speech_image.clone(),
        noise_image: scene.noise_image.clone(),
    };
    let result = enhance(&scene.mixture, &cfg, Some(&truth))?;
    let r = cell.partition.reference_physical();
    evaluate(
        &result,
        &scene.speech_image.select_channels(&[r])?,
        &scene.mixture.select_channels(&[r])?,
    )
}

fn mean(values: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = values.iter().copied().collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs every cell of the plan for every seed; scenes are rendered once per
/// (seed, SNR) and the cells on a scene run in parallel.
pub fn run_sweep(plan: &SweepPlan, speech: &AudioClip) -> crate::Result<SweepResults> {
    let mut cells = Vec::with_capacity(plan.cell_count());
    for &snr in &plan.snrs_db {
        for &m in &plan.array_sizes {
            for &spp_mode in &plan.spp_modes {
                for &method in &plan.methods {
                    cells.push(SuiteCell {
                        scene: SceneConfig {
                            target_snr_db: snr,
                            ..plan.base_scene.clone()
                        },
                        partition: grid_partition(m)?,
                        spp_mode,
                        method,
                    });
                }
            }
        }
    }

    // per[cell][seed]
    let mut per: Vec<Vec<std::result::Result<MetricsReport, String>>> = vec![Vec::new(); cells.len()];
    for &seed in &plan.seeds {
        for &snr in &plan.snrs_db {
            let scene_cfg = SceneConfig {
                target_snr_db: snr,
                seed,
                ..plan.base_scene.clone()
            };
            let scene = render_scene_with_speech(&scene_cfg, speech);
            let idx: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].scene.target_snr_db == snr).collect();
            let out: Vec<_> = idx
                .par_iter()
                .map(|&i| match &scene {
                    Ok(s) => run_cell(s, &cells[i]).map_err(|e| e.to_string()),
                    Err(e) => Err(format!("scene: {e}")),
                })
                .collect();
            for (i, r) in idx.into_iter().zip(out) {
                per[i].push(r);
            }
        }
    }

    let rows = cells
        .iter()
        .zip(per)
        .map(|(cell, results)| {
            let error = results.iter().find_map(|r| r.as_ref().err().cloned());
            let ok: Vec<&MetricsReport> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
            let avg = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
                if error.is_some() {
                    None
                } else {
                    mean(&ok.iter().map(|r| f(r)).collect::<Vec<_>>())
                }
            };
            SweepRow {
                key: cell.key(),
                snr_db: cell.scene.target_snr_db,
                m_speech_noise: cell.partition.m_speech_noise(),
                m_noise: cell.partition.m_noise(),
                spp_mode: cell.spp_mode,
                method: cell.method,
                seeds: plan.seeds.len(),
                snr_in_db: avg(&|r| r.snr_in_db),
                snr_out_db: avg(&|r| r.snr_out_db),
                snr_improvement_db: avg(&|r| r.snr_improvement_db),
                stoi_in: avg(&|r| Some(r.stoi_in)),
                stoi_out: avg(&|r| Some(r.stoi_out)),
                stoi_improvement: avg(&|r| Some(r.stoi_improvement)),
                error,
            }
        })
        .collect();
    Ok(SweepResults {
        seeds: plan.seeds.clone(),
        rows,
    })
}

/// Worker count from `EGOMWF_THREADS`, if set.
pub fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let defaults = SweepPlan::default();
    let plan = SweepPlan {
        seeds: args.seeds.clone(),
        snrs_db: args.snrs.clone().unwrap_or(defaults.snrs_db),
        array_sizes: args.sizes.clone().unwrap_or(defaults.array_sizes),
        spp_modes: args.spp_modes.clone().unwrap_or(defaults.spp_modes),
        methods: args.methods.clone().unwrap_or(defaults.methods),
        base_scene: defaults.base_scene,
    };
    if plan.seeds.is_empty() || plan.cell_count() == 0 {
        return Err(Failure::Config("sweep grid is empty".into()));
    }
    for &m in &plan.array_sizes {
        grid_partition(m)?;
    }
    let speech = read_speech(&args.speech)?;
    create_dir(&args.output_dir)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure::Processing(e.to_string()))?;
    let results = pool.install(|| run_sweep(&plan, &speech))?;

    write_json(&results, &args.output_dir.join("sweep.json"))?;
    write_file(&args.output_dir.join("sweep.csv"), results.to_csv()?.as_bytes())?;
    let failed: Vec<&str> = results.rows.iter().filter(|r| r.failed()).map(|r| r.key.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Processing(format!("{} cell(s) failed: {}", failed.len(), failed.join(", "))))
    }
}
