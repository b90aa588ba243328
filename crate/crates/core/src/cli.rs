//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 data mismatch
//! (dimensions, class counts, labels), 4 malformed file contents.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::adapt::{adapt_segment, segment_standard, AdaptConfig, TrainingPair, VarianceMode};
use crate::error::Error;
use crate::metrics::{report, volume_consistency};
use crate::phantom::{add_gaussian_noise, make_phantom, Geometry, PhantomSpec};
use crate::simulator::{simulate, soften_labels, SimulationParams};
use crate::sweep::{format_sig6, run_sweep, sweep_csv, SweepRow, SweepSpec};
use crate::volume::{export_pgm, load_probmap, load_volume, save_probmap, save_volume};
use crate::volume::{LabelImage, ProbMap, ScalarImage};

pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "contrast-seg",
    version,
    about = "Contrast-adaptive tissue segmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom with its labels and truth map.
    Phantom(PhantomArgs),
    /// Train on the given pairs and classify the input once.
    Segment(SegmentArgs),
    /// Segment with contrast adaptation.
    Adapt(AdaptArgs),
    /// Render an image from a probability map and centroids.
    Simulate(SimulateArgs),
    /// Error against center mean for ideal, fixed and adaptive training.
    Sweep(SweepArgs),
    /// Compare a predicted label image with a reference.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct PhantomFlags {
    /// Image dimensions, e.g. 128,128 or 64,64,64.
    #[arg(long, value_delimiter = ',', default_value = "128,128")]
    pub dims: Vec<usize>,
    /// Class intensities, background first.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        default_value = "0,5,10"
    )]
    pub means: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub blur_sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise_std: f64,
    /// nested_squares or nested_disks.
    #[arg(long, default_value = "nested_squares")]
    pub geometry: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl PhantomFlags {
    fn spec(&self) -> Result<PhantomSpec, Failure> {
        let geometry: Geometry = self.geometry.parse()?;
        let spec = PhantomSpec {
            dims: self.dims.clone(),
            class_means: self.means.clone(),
            blur_sigma: self.blur_sigma,
            noise_std: self.noise_std,
            geometry,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[command(flatten)]
    pub phantom: PhantomFlags,
    /// Output intensity image (CAV1).
    #[arg(long)]
    pub out_img: PathBuf,
    /// Output hard labels stored as a CAV1 scalar image.
    #[arg(long)]
    pub out_labels: Option<PathBuf>,
    /// Output truth probability map (CAP1).
    #[arg(long)]
    pub out_truth: Option<PathBuf>,
    /// Optional 16-bit PGM preview of the image (2-D only).
    #[arg(long)]
    pub out_pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainingFlags {
    /// Training intensity images (CAV1), one per pair.
    #[arg(long = "train-img", required = true)]
    pub train_img: Vec<PathBuf>,
    /// Training probability maps (CAP1), matched to --train-img by position.
    #[arg(long = "train-probs", conflicts_with = "train_labels")]
    pub train_probs: Vec<PathBuf>,
    /// Training hard labels (CAV1 scalar), softened with --soften-sigma.
    #[arg(long = "train-labels")]
    pub train_labels: Vec<PathBuf>,
    /// Class count for hard labels; inferred from the largest label if absent.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub soften_sigma: f64,
    /// Image to segment (CAV1).
    #[arg(long)]
    pub input: PathBuf,
    /// Output labels stored as a CAV1 scalar image.
    #[arg(long)]
    pub out_labels: PathBuf,
    /// Output posterior probability map (CAP1).
    #[arg(long)]
    pub out_probs: Option<PathBuf>,
}

impl TrainingFlags {
    fn load(&self) -> Result<(Vec<TrainingPair>, ScalarImage), Failure> {
        let maps = if !self.train_probs.is_empty() {
            self.same_count(self.train_probs.len())?;
            self.train_probs
                .iter()
                .map(load_probmap)
                .collect::<crate::Result<Vec<_>>>()?
        } else if !self.train_labels.is_empty() {
            self.same_count(self.train_labels.len())?;
            let labels = self
                .train_labels
                .iter()
                .map(|p| load_labels(p, self.classes))
                .collect::<Result<Vec<_>, _>>()?;
            let k = self.classes.unwrap_or_else(|| {
                labels
                    .iter()
                    .map(LabelImage::num_classes)
                    .max()
                    .unwrap_or(1)
            });
            labels
                .iter()
                .map(|l| soften_labels(l, k, self.soften_sigma))
                .collect::<crate::Result<Vec<_>>>()?
        } else {
            return Err(Failure::Usage(
                "either --train-probs or --train-labels is required".into(),
            ));
        };
        let pairs = self
            .train_img
            .iter()
            .zip(maps)
            .map(|(path, probs)| TrainingPair::new(load_volume(path)?, probs))
            .collect::<crate::Result<Vec<_>>>()?;
        Ok((pairs, load_volume(&self.input)?))
    }

    fn same_count(&self, n: usize) -> Result<(), Failure> {
        if n != self.train_img.len() {
            return Err(Failure::Usage(format!(
                "{} training images but {n} training maps",
                self.train_img.len()
            )));
        }
        Ok(())
    }

    fn write(&self, probs: &ProbMap, labels: &LabelImage) -> Result<(), Failure> {
        save_volume(&labels.to_scalar(), &self.out_labels)?;
        if let Some(path) = &self.out_probs {
            save_probmap(probs, path)?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub io: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct AdaptFlags {
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub convergence_frac: f64,
    /// simulated or residual.
    #[arg(long, default_value = "simulated")]
    pub variance_mode: String,
    /// Noise std added to simulated training images.
    #[arg(long)]
    pub add_noise_std: Option<f64>,
    #[arg(long = "adapt-seed", default_value_t = 0)]
    pub adapt_seed: u64,
}

impl AdaptFlags {
    fn config(&self, soften_sigma: f64, default_noise: f64) -> Result<AdaptConfig, Failure> {
        let variance_mode: VarianceMode = self.variance_mode.parse()?;
        let cfg = AdaptConfig {
            max_iters: self.max_iters,
            convergence_frac: self.convergence_frac,
            soften_sigma,
            variance_mode,
            add_noise_std: self.add_noise_std.unwrap_or(default_noise),
            seed: self.adapt_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub io: TrainingFlags,
    #[command(flatten)]
    pub adapt: AdaptFlags,
    /// First training map rendered with the final centroids (CAV1).
    #[arg(long)]
    pub out_sim: Option<PathBuf>,
    /// PGM preview of the same rendering (2-D only).
    #[arg(long)]
    pub out_sim_pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Probability map to render (CAP1).
    #[arg(long, conflicts_with = "labels")]
    pub probs: Option<PathBuf>,
    /// Hard labels (CAV1 scalar), softened with --soften-sigma.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub soften_sigma: f64,
    /// Class centroids, one per class.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    pub theta: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output image (CAV1).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub out_pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 2.0)]
    pub lo: f64,
    #[arg(long, default_value_t = 8.5)]
    pub hi: f64,
    #[arg(long, default_value_t = 0.25)]
    pub step: f64,
    #[arg(long, default_value_t = 5.0)]
    pub train_mean: f64,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    /// Index of the class whose mean is swept.
    #[arg(long, default_value_t = 1)]
    pub varied_class: usize,
    #[command(flatten)]
    pub phantom: PhantomFlags,
    #[command(flatten)]
    pub adapt: AdaptFlags,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Extra CSV with standard errors and iteration counts.
    #[arg(long)]
    pub out_stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Predicted labels (CAV1 scalar).
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference labels (CAV1 scalar).
    #[arg(long)]
    pub truth: PathBuf,
    /// Classes pooled for volume consistency; defaults to every class but 0.
    #[arg(long, value_delimiter = ',')]
    pub volume_classes: Vec<usize>,
}

/// A command failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Lib(e) => match e {
                Error::Io { .. } => EXIT_IO,
                Error::Invalid(_) | Error::Geometry(_) => EXIT_USAGE,
                Error::Dimension(_)
                | Error::ClassCount { .. }
                | Error::LabelRange { .. }
                | Error::EmptyClass(_)
                | Error::ZeroVolume => EXIT_DATA,
                Error::MagicMismatch { .. }
                | Error::Truncated { .. }
                | Error::PayloadMismatch { .. }
                | Error::NotNormalized { .. } => EXIT_FORMAT,
            },
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

fn load_labels(path: &Path, classes: Option<usize>) -> Result<LabelImage, Failure> {
    let img = load_volume(path)?;
    LabelImage::from_scalar(&img, classes).map_err(|e| match e {
        Error::Invalid(m) => Failure::Data(format!("{}: {m}", path.display())),
        other => other.into(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|&v| format_sig6(v))
        .collect::<Vec<_>>()
        .join(",")
}

fn cmd_phantom(args: &PhantomArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let spec = args.phantom.spec()?;
    let ph = make_phantom(&spec)?;
    save_volume(&ph.image, &args.out_img)?;
    if let Some(path) = &args.out_labels {
        save_volume(&ph.labels.to_scalar(), path)?;
    }
    if let Some(path) = &args.out_truth {
        save_probmap(&ph.truth, path)?;
    }
    if let Some(path) = &args.out_pgm {
        export_pgm(&ph.image, path)?;
    }
    let counts = ph.labels.class_counts();
    let _ = writeln!(out, "dims={:?} class_voxels={counts:?}", ph.image.dims());
    Ok(())
}

fn cmd_segment(args: &SegmentArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (pairs, input) = args.io.load()?;
    let (probs, labels) = segment_standard(&pairs, &input)?;
    args.io.write(&probs, &labels)?;
    let _ = writeln!(
        out,
        "classes={} class_voxels={:?}",
        labels.num_classes(),
        labels.class_counts()
    );
    Ok(())
}

fn cmd_adapt(args: &AdaptArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = args.adapt.config(args.io.soften_sigma, 0.0)?;
    let (pairs, input) = args.io.load()?;
    let result = adapt_segment(&pairs, &input, &cfg)?;
    for (i, (frac, theta)) in result
        .change_fractions
        .iter()
        .zip(&result.theta_history)
        .enumerate()
    {
        let _ = writeln!(
            out,
            "iter={} changed_frac={} theta={}",
            i + 1,
            format_sig6(*frac),
            join(theta.centroids())
        );
    }
    args.io.write(&result.probs, &result.labels)?;
    if args.out_sim.is_some() || args.out_sim_pgm.is_some() {
        let sim = simulate(&pairs[0].probs, &result.theta)?;
        if let Some(path) = &args.out_sim {
            save_volume(&sim, path)?;
        }
        if let Some(path) = &args.out_sim_pgm {
            export_pgm(&sim, path)?;
        }
    }
    let _ = writeln!(
        out,
        "iterations={} stop={:?} theta={} class_voxels={:?}",
        result.iterations_used,
        result.stop_reason,
        join(result.theta.centroids()),
        result.labels.class_counts()
    );
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let probs = match (&args.probs, &args.labels) {
        (Some(path), _) => load_probmap(path)?,
        (None, Some(path)) => {
            let labels = load_labels(path, args.classes)?;
            let k = args.classes.unwrap_or(labels.num_classes());
            soften_labels(&labels, k, args.soften_sigma)?
        }
        (None, None) => {
            return Err(Failure::Usage(
                "either --probs or --labels is required".into(),
            ))
        }
    };
    let theta = SimulationParams::new(args.theta.clone())?;
    let img = simulate(&probs, &theta)?;
    let img = if args.noise_std > 0.0 {
        let dims = img.dims().to_vec();
        let mut data = img.into_data();
        add_gaussian_noise(&mut data, args.noise_std, args.seed);
        ScalarImage::new(dims, data)?
    } else {
        img
    };
    save_volume(&img, &args.out)?;
    if let Some(path) = &args.out_pgm {
        export_pgm(&img, path)?;
    }
    let (lo, hi) = img.min_max();
    let _ = writeln!(
        out,
        "dims={:?} min={} max={}",
        img.dims(),
        format_sig6(lo),
        format_sig6(hi)
    );
    Ok(())
}

fn stats_csv(rows: &[SweepRow]) -> String {
    let mut s =
        String::from("mean,ideal,ideal_se,fixed,fixed_se,adaptive,adaptive_se,max_iterations\n");
    for r in rows {
        let cells = [
            r.mean,
            r.ideal.mean,
            r.ideal.std_err,
            r.fixed.mean,
            r.fixed.std_err,
            r.adaptive.mean,
            r.adaptive.std_err,
        ];
        let iters = r.iterations.iter().max().copied().unwrap_or(0);
        s.push_str(&format!("{},{iters}\n", join(&cells)));
    }
    s
}

fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let phantom = args.phantom.spec()?;
    let adapt = args.adapt.config(1.0, phantom.noise_std)?;
    let spec = SweepSpec {
        lo: args.lo,
        hi: args.hi,
        step: args.step,
        train_mean: args.train_mean,
        trials: args.trials,
        varied_class: args.varied_class,
        phantom,
        adapt,
    };
    spec.validate()?;
    let rows = run_sweep(&spec)?;
    let csv = sweep_csv(&rows);
    match &args.out {
        Some(path) => write_text(path, &csv)?,
        None => {
            let _ = out.write_all(csv.as_bytes());
        }
    }
    if let Some(path) = &args.out_stats {
        write_text(path, &stats_csv(&rows))?;
    }
    Ok(())
}

fn cmd_metrics(args: &MetricsArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let pred = load_labels(&args.pred, None)?;
    let truth = load_labels(&args.truth, None)?;
    if pred.dims() != truth.dims() {
        return Err(Failure::Data(format!(
            "{} has dims {:?} but {} has dims {:?}",
            args.pred.display(),
            pred.dims(),
            args.truth.display(),
            truth.dims()
        )));
    }
    let r = report(&pred, &truth)?;
    let k = r.dice.len();
    let classes: Vec<usize> = if args.volume_classes.is_empty() {
        (1..k.max(2)).collect()
    } else {
        args.volume_classes.clone()
    };
    let truth_counts = truth.class_counts();
    let mut lines = vec![format!("error={}", format_sig6(r.classification_error))];
    for (c, d) in r.dice.iter().enumerate() {
        lines.push(format!("dice_{c}={}", format_sig6(*d)));
    }
    for (c, v) in r.class_volumes.iter().enumerate() {
        lines.push(format!("volume_{c}={v}"));
        lines.push(format!(
            "truth_volume_{c}={}",
            truth_counts.get(c).copied().unwrap_or(0)
        ));
    }
    let vc = match volume_consistency(&pred, &truth, &classes) {
        Ok(v) => format_sig6(v),
        Err(Error::ZeroVolume) => "nan".into(),
        Err(e) => return Err(e.into()),
    };
    lines.push(format!("volume_consistency={vc}"));
    for l in lines {
        let _ = writeln!(out, "{l}");
    }
    Ok(())
}

/// Runs a parsed command, writing reports to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Phantom(a) => cmd_phantom(a, out),
        Command::Segment(a) => cmd_segment(a, out),
        Command::Adapt(a) => cmd_adapt(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Metrics(a) => cmd_metrics(a, out),
    }
}
