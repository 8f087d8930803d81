//! `ihr`: run the heart-rate pipeline, generate synthetic data, evaluate.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 invalid input or parameters,
//! 5 numerical failure, 6 no usable source in the data.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ihr_core::evaluation::{self, ErrorReport, EvalOptions};
use ihr_core::io;
use ihr_core::model::uniform_grid;
use ihr_core::pipeline::{run_pipeline, NoiseModel, PipelineConfig, PipelineOutput, StageError};
use ihr_core::reconstruction::SignMode;
use ihr_core::rpeaks::rpeaks_to_ihr;
use ihr_core::synthetic::{self, MixtureSpec, GENERATOR_ID};
use ihr_core::{ChannelMatrix, Error, ErrorClass, FacialArea, IhrSeries};

const DEFAULT_OUT_DIR: &str = "ihr-out";
const CHANNELS_FILE: &str = "channels.txt";
const TRUTH_FILE: &str = "truth_ihr.csv";
const RPEAKS_FILE: &str = "rpeaks.txt";

#[derive(Parser)]
#[command(name = "ihr", version, about = "Instantaneous heart rate from infrared face channel matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline on one channel matrix.
    Run {
        /// Channel matrix file (its sidecar is `<file>.meta`).
        channels: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Generate a synthetic dataset from a mixture spec.
    Synth {
        spec: PathBuf,
        #[arg(long, env = "IHR_OUT_DIR")]
        out: Option<PathBuf>,
        /// Skip the ground-truth heart rate (allows specs without a chirp).
        #[arg(long)]
        no_truth: bool,
    },
    /// Compare a heart-rate series with ground truth.
    Eval {
        ihr: PathBuf,
        /// Ground-truth heart-rate series.
        #[arg(long, conflicts_with = "rpeaks", required_unless_present = "rpeaks")]
        truth: Option<PathBuf>,
        /// R-peak times, one per line, instead of a heart-rate series.
        #[arg(long)]
        rpeaks: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,10,30")]
        granularities: Vec<f64>,
        #[arg(long, default_value_t = 30.0)]
        relative_granularity: f64,
        #[arg(long)]
        lag_search: bool,
        /// Label in the report's first column.
        #[arg(long, default_value = "dataset")]
        dataset: String,
        /// Report file; printed to stdout either way.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the pipeline on several dataset directories, each holding
    /// `channels.txt` and optionally `truth_ihr.csv` or `rpeaks.txt`.
    Batch {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Args, Clone, Default)]
struct RunOpts {
    /// TOML config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "IHR_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    filter_order: Option<usize>,
    #[arg(long)]
    low_cut_bpm: Option<f64>,
    #[arg(long)]
    high_cut_bpm: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    zero_phase: Option<bool>,
    #[arg(long, value_parser = parse_noise_model)]
    noise_model: Option<NoiseModel>,
    /// Pulse frequency in Hz, skipping its estimate.
    #[arg(long)]
    f_p_hz: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_shrinkage: Option<bool>,
    #[arg(long, value_parser = parse_sign_mode)]
    sign_mode: Option<SignMode>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    weight_by_sigma: Option<bool>,
    #[arg(long)]
    window_s: Option<f64>,
    #[arg(long)]
    hop_s: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    search_low_bpm: Option<f64>,
    #[arg(long)]
    search_high_bpm: Option<f64>,
    #[arg(long)]
    ihr_grid_s: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    granularities: Option<Vec<f64>>,
    #[arg(long)]
    relative_granularity: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    lag_search: Option<bool>,
    /// Restrict to one facial area of the mesh.
    #[arg(long, value_parser = parse_area)]
    area: Option<FacialArea>,
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    dump_spectrogram: Option<bool>,
}

fn parse_noise_model(s: &str) -> Result<NoiseModel, String> {
    match s {
        "white" => Ok(NoiseModel::White),
        "filtered" => Ok(NoiseModel::Filtered),
        _ => Err(format!("expected 'white' or 'filtered', got '{s}'")),
    }
}

fn parse_sign_mode(s: &str) -> Result<SignMode, String> {
    match s {
        "greedy" => Ok(SignMode::Greedy),
        "off" => Ok(SignMode::Off),
        _ => Err(format!("expected 'greedy' or 'off', got '{s}'")),
    }
}

fn parse_area(s: &str) -> Result<FacialArea, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum CliError {
    Core(Error),
    Stage(StageError),
}

impl CliError {
    fn class(&self) -> ErrorClass {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Stage(e) => e.class(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.class() {
            ErrorClass::Io => 3,
            ErrorClass::Validation => 4,
            ErrorClass::Numerical => 5,
            ErrorClass::NoSignal => 6,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Stage(e) => e.fmt(f),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<StageError> for CliError {
    fn from(e: StageError) -> Self {
        CliError::Stage(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { channels, opts } => cmd_run(&channels, &opts),
        Command::Synth { spec, out, no_truth } => cmd_synth(&spec, out, no_truth),
        Command::Eval {
            ihr,
            truth,
            rpeaks,
            granularities,
            relative_granularity,
            lag_search,
            dataset,
            report,
        } => {
            let options = EvalOptions {
                granularities_s: granularities,
                relative_granularity_s: relative_granularity,
                lag_search,
            };
            cmd_eval(&ihr, truth.as_deref(), rpeaks.as_deref(), &options, &dataset, report.as_deref())
        }
        Command::Batch { datasets, opts } => cmd_batch(&datasets, &opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Defaults, then the config file, then flags.
fn resolve_config(opts: &RunOpts) -> Result<PipelineConfig, Error> {
    let mut c = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            PipelineConfig::from_toml(&text)?
        }
        None => PipelineConfig::default(),
    };
    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(c.filter.order, opts.filter_order);
    set!(c.filter.low_cut_bpm, opts.low_cut_bpm);
    set!(c.filter.high_cut_bpm, opts.high_cut_bpm);
    set!(c.filter.zero_phase, opts.zero_phase);
    set!(c.noise_model, opts.noise_model);
    set!(c.use_shrinkage, opts.use_shrinkage);
    set!(c.sqi_sign_mode, opts.sign_mode);
    set!(c.weight_by_sigma, opts.weight_by_sigma);
    set!(c.stft_window_s, opts.window_s);
    set!(c.stft_hop_s, opts.hop_s);
    set!(c.lambda, opts.lambda);
    set!(c.search_low_bpm, opts.search_low_bpm);
    set!(c.search_high_bpm, opts.search_high_bpm);
    set!(c.ihr_grid_s, opts.ihr_grid_s);
    set!(c.granularities_s, opts.granularities);
    set!(c.relative_granularity_s, opts.relative_granularity);
    set!(c.lag_search, opts.lag_search);
    set!(c.dump_spectrogram, opts.dump_spectrogram);
    if opts.f_p_hz.is_some() {
        c.f_p_override_hz = opts.f_p_hz;
    }
    if opts.area.is_some() {
        c.area = opts.area;
    }
    if opts.mesh.is_some() {
        c.mesh_path = opts.mesh.clone();
    }
    if opts.out.is_some() {
        c.output_dir = opts.out.clone();
    }
    if c.output_dir.is_none() {
        c.output_dir = Some(PathBuf::from(DEFAULT_OUT_DIR));
    }
    c.validate()?;
    Ok(c)
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.to_owned(), source: e })?;
    }
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_owned(), source: e })
}

fn run_one(channels_path: &Path, config: &PipelineConfig, out: &Path) -> Result<PipelineOutput, CliError> {
    let channels = io::read_channel_matrix(channels_path)?;
    let mesh = config.mesh_path.as_ref().map(io::read_mesh).transpose()?;
    let output = run_pipeline(&channels, mesh.as_ref(), config)?;

    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_owned(), source: e })?;
    let mut echo = config.clone();
    echo.output_dir = Some(out.to_owned());
    write_file(&out.join("config.toml"), &echo.to_toml())?;
    io::write_waveform(out.join("ppg.csv"), output.ppg.meta.sample_rate_hz, &output.ppg.samples)?;
    io::write_ihr(out.join("ihr.csv"), &output.ihr)?;
    write_file(&out.join("sources.csv"), &output.ranked.table())?;
    write_file(&out.join("singular_values.csv"), &output.decomposition.scree_table())?;
    if let Some(denoised) = &output.denoised {
        io::write_channel_matrix(out.join("denoised.txt"), denoised)?;
    }
    if config.dump_spectrogram {
        if let Some((grid, times, freqs)) = output.spectrogram.dump(config.search_band_hz()) {
            write_file(&out.join("spectrogram.txt"), &grid)?;
            write_file(&out.join("spectrogram_times.txt"), &times)?;
            write_file(&out.join("spectrogram_freqs.txt"), &freqs)?;
        }
    }
    Ok(output)
}

fn cmd_run(channels: &Path, opts: &RunOpts) -> Result<(), CliError> {
    let config = resolve_config(opts)?;
    let out = config.output_dir.clone().expect("resolved");
    let output = run_one(channels, &config, &out)?;
    println!(
        "retained {} of {} components, pulse {:.3} Hz, {} sources summed (quality {:.3})",
        output.decomposition.retained_rank,
        output.decomposition.singular_values.len(),
        output.pulse_freq_hz,
        output.ranked.cutoff,
        output.ppg.quality
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_synth(spec_path: &Path, out: Option<PathBuf>, no_truth: bool) -> Result<(), CliError> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::Io { path: spec_path.to_owned(), source: e })?;
    let spec = MixtureSpec::from_toml(&text)?;
    let data = synthetic::generate(&spec)?;
    let truth = if no_truth { None } else { Some(data.require_truth()?) };

    let out = out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    io::write_channel_matrix_with_generator(out.join(CHANNELS_FILE), &data.channels, Some(GENERATOR_ID))?;
    write_file(&out.join("mixture.toml"), &spec.to_toml())?;
    if let Some(truth) = truth {
        io::write_ihr(out.join(TRUTH_FILE), truth)?;
    }
    if data.sources.nrows() > 0 {
        let sources = ChannelMatrix::new(data.sources.clone(), data.channels.meta().clone())?;
        io::write_channel_matrix(out.join("sources.txt"), &sources)?;
    }
    println!(
        "wrote {} ({} channels x {} frames)",
        out.display(),
        data.channels.n_regions(),
        data.channels.n_frames()
    );
    Ok(())
}

fn truth_from_rpeaks(path: &Path, estimate: &IhrSeries) -> Result<IhrSeries, Error> {
    let peaks = io::read_rpeaks(path)?;
    let (first, last) = match (peaks.first(), peaks.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::InsufficientData(format!("{}: no R-peaks", path.display()))),
    };
    let grid: Vec<f64> = estimate
        .timestamps()
        .iter()
        .copied()
        .filter(|&t| t >= first && t <= last)
        .collect();
    let grid = if grid.len() >= 2 {
        grid
    } else {
        uniform_grid(first, last, estimate.median_step().unwrap_or(1.0))
    };
    rpeaks_to_ihr(&peaks, &grid)
}

fn evaluate_against(
    dataset: &str,
    estimate: &IhrSeries,
    truth: Option<&Path>,
    rpeaks: Option<&Path>,
    options: &EvalOptions,
) -> Result<ErrorReport, Error> {
    let truth = match (truth, rpeaks) {
        (Some(t), _) => io::read_ihr(t)?,
        (None, Some(r)) => truth_from_rpeaks(r, estimate)?,
        (None, None) => return Err(Error::InvalidParameter("need a truth series or R-peaks".into())),
    };
    evaluation::evaluate(dataset, estimate, &truth, options)
}

fn cmd_eval(
    ihr: &Path,
    truth: Option<&Path>,
    rpeaks: Option<&Path>,
    options: &EvalOptions,
    dataset: &str,
    report: Option<&Path>,
) -> Result<(), CliError> {
    let estimate = io::read_ihr(ihr)?;
    let r = evaluate_against(dataset, &estimate, truth, rpeaks, options)?;
    let table = evaluation::report_table(std::slice::from_ref(&r));
    if let Some(path) = report {
        write_file(path, &table)?;
    }
    print!("{table}");
    if options.lag_search {
        println!("# lag {} s", r.lag_s);
    }
    Ok(())
}

fn cmd_batch(datasets: &[PathBuf], opts: &RunOpts) -> Result<(), CliError> {
    let config = resolve_config(opts)?;
    let out = config.output_dir.clone().expect("resolved");
    let names: Vec<String> = datasets
        .iter()
        .enumerate()
        .map(|(k, d)| {
            d.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("dataset{}", k + 1))
        })
        .collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    if unique.len() != names.len() {
        return Err(Error::InvalidParameter("dataset directory names must be distinct".into()).into());
    }

    let results: Vec<Result<Option<ErrorReport>, CliError>> = datasets
        .par_iter()
        .zip(&names)
        .map(|(dir, name)| {
            let output = run_one(&dir.join(CHANNELS_FILE), &config, &out.join(name))?;
            let truth = dir.join(TRUTH_FILE);
            let rpeaks = dir.join(RPEAKS_FILE);
            let report = if truth.exists() {
                Some(evaluate_against(name, &output.ihr, Some(&truth), None, &config.eval_options())?)
            } else if rpeaks.exists() {
                Some(evaluate_against(name, &output.ihr, None, Some(&rpeaks), &config.eval_options())?)
            } else {
                None
            };
            Ok(report)
        })
        .collect();

    let mut reports = Vec::new();
    let mut first_error = None;
    for (name, result) in names.iter().zip(results) {
        match result {
            Ok(Some(r)) => reports.push(r),
            Ok(None) => println!("{name}: no ground truth, not evaluated"),
            Err(e) => {
                eprintln!("{name}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    if !reports.is_empty() {
        let table = evaluation::report_table(&reports);
        write_file(&out.join("report.csv"), &table)?;
        print!("{table}");
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
