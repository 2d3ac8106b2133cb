use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pairmix::data::{synth_toy_dataset, DatasetManifest, SynthConfig};
use pairmix::evaluation::{evaluate, render_metric_chart, ColorMap, EvalReport, Protocol};
use pairmix::networks::{checkpoint_dtype, load_model};
use pairmix::selection::{
    select_paired_samples, EmbeddingBackbone, PrecomputedFeatures, RandomProjection, SelectionResult, Strategy,
};
use pairmix::trainer::{train, TrainingConfig};
use pairmix::{Error, Result, Scalar};

const DEVICE_VAR: &str = "PAIRMIX_DEVICE";

#[derive(Parser)]
#[command(name = "pairmix", version, about = "Image translation from a few paired and many unpaired samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural toy dataset.
    Synth(SynthArgs),
    /// Choose which samples to annotate as pairs.
    Select(SelectArgs),
    /// Train both translation directions.
    Train(TrainArgs),
    /// Score a checkpoint on the manifest's test pairs.
    Eval(EvalArgs),
    /// Draw a chart from saved evaluation reports.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    n_paired: usize,
    #[arg(long, default_value_t = 10)]
    n_unpaired: usize,
    #[arg(long, default_value_t = 10)]
    n_test: usize,
    /// Image side length in pixels (at least 16).
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Kmedoids,
    Random,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    budget: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Kmedoids)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Precomputed features, CSV rows `id,f0,f1,...`. Without it a seeded
    /// random projection of the pixels is used.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Side length images are resized to before projection.
    #[arg(long, default_value_t = 32)]
    embed_size: usize,
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Dtype {
    F32,
    F64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Selection file; its samples are trained as pairs.
    #[arg(long)]
    selection: Option<PathBuf>,
    /// TOML training configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Size defaults when no config file is given.
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    #[arg(long)]
    seed: Option<u64>,
    /// Total epochs (even).
    #[arg(long)]
    epochs: Option<usize>,
    /// Iteration budget used to derive the epoch count.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    /// Drop the cycle-consistency term.
    #[arg(long)]
    no_cycle: bool,
    /// Drop the identity term.
    #[arg(long)]
    no_idt: bool,
    /// List each paired sample once per epoch instead of matching the unpaired count.
    #[arg(long)]
    unbalanced: bool,
    /// Train on paired samples only.
    #[arg(long, conflicts_with = "unpaired_only")]
    paired_only: bool,
    /// Ignore paired samples.
    #[arg(long)]
    unpaired_only: bool,
    /// Continue from a checkpoint written by a run with the same settings.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    dtype: Dtype,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Segmentation,
    Maps,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Segmentation)]
    protocol: ProtocolArg,
    /// Colour map file (`class_id R G B name` rows) or `cityscapes`.
    /// Defaults to the manifest's own map.
    #[arg(long)]
    colormap: Option<String>,
    /// Resize inputs to this square size before translation.
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    label: Option<String>,
    /// Number of paired samples the model was trained with, for charts.
    #[arg(long)]
    paired_count: Option<usize>,
    /// Also write an SVG chart next to the report.
    #[arg(long)]
    plot: bool,
    /// Earlier reports to include in the chart.
    #[arg(long, num_args = 1..)]
    compare: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn check_device() -> Result<()> {
    match std::env::var(DEVICE_VAR) {
        Ok(v) if !v.eq_ignore_ascii_case("cpu") => Err(Error::Config(format!(
            "{DEVICE_VAR}={v}: only `cpu` is available"
        ))),
        _ => Ok(()),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_paired: a.n_paired,
        n_unpaired: a.n_unpaired,
        n_test: a.n_test,
        image_size: a.size,
        seed: a.seed,
    };
    let m = synth_toy_dataset(&cfg, &a.out)?;
    let files = 2 * (m.paired.len() + m.unpaired_x.len() + m.test.len());
    println!(
        "wrote {} paired, {} unpaired and {} test scenes ({files} PNG files) to {}",
        m.paired.len(),
        m.unpaired_x.len(),
        m.test.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let n = manifest.annotatable().len();
    if a.budget > n {
        eprintln!("warning: budget {} exceeds the {n} candidates; selecting all", a.budget);
    }
    let strategy = match a.strategy {
        StrategyArg::Kmedoids => Strategy::Kmedoids,
        StrategyArg::Random => Strategy::Random,
    };
    let backbone: Box<dyn EmbeddingBackbone<f32>> = match &a.features {
        Some(path) => Box::new(PrecomputedFeatures::load(path)?),
        None => Box::new(RandomProjection::new(a.embed_size, a.embed_dim, a.seed)?),
    };
    let sel = select_paired_samples(&manifest, a.budget, strategy, backbone.as_ref(), a.seed)?;
    sel.save(&a.out)?;
    println!("selected {}: {}", sel.selected.len(), sel.selected_ids().join(" "));
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainingConfig> {
    let mut cfg = match &a.config {
        Some(path) => TrainingConfig::load(path)?,
        None if a.profile == Profile::Paper => TrainingConfig::paper(),
        None => TrainingConfig::desk(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs_total = Some(v);
    }
    if let Some(v) = a.iterations {
        cfg.iteration_budget = v;
        if a.epochs.is_none() {
            cfg.epochs_total = None;
        }
    }
    if let Some(v) = a.lr {
        cfg.lr_base = v;
    }
    if let Some(v) = a.checkpoint_interval {
        cfg.checkpoint_interval = v;
    }
    cfg.disable_cycle |= a.no_cycle;
    cfg.disable_identity |= a.no_idt;
    cfg.balanced &= !a.unbalanced;
    cfg.validate()?;
    Ok(cfg)
}

fn run_train<T: Scalar>(a: &TrainArgs, cfg: &TrainingConfig) -> Result<()> {
    let mut manifest = DatasetManifest::load(&a.manifest)?;
    let selection = a.selection.as_deref().map(SelectionResult::load).transpose()?;
    if let Some(sel) = &selection {
        manifest = manifest.with_selection(sel)?;
    }
    if a.paired_only {
        manifest = manifest.paired_only();
    }
    if a.unpaired_only {
        manifest = manifest.unpaired_only();
    }
    let summary = train::<T>(cfg, &manifest, None, &a.out, a.resume.as_deref())?;
    if let Some(e) = &summary.last_epoch {
        println!(
            "epoch {}/{}: total {:.4} gan_g {:.4} gan_d {:.4} cycle {:.4} identity {:.4} l1 {:.4}",
            e.epoch + 1,
            summary.epochs_total,
            e.total,
            e.gan_g,
            e.gan_d,
            e.cycle,
            e.identity,
            e.l1_paired
        );
    }
    println!(
        "trained {} steps over {} epochs; checkpoint {}",
        summary.steps,
        summary.epochs_total,
        summary.final_checkpoint.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    match a.dtype {
        Dtype::F32 => run_train::<f32>(&a, &cfg),
        Dtype::F64 => run_train::<f64>(&a, &cfg),
    }
}

fn run_eval<T: Scalar>(a: &EvalArgs, manifest: &DatasetManifest, protocol: Protocol) -> Result<EvalReport> {
    let model = load_model::<T>(&a.checkpoint)?;
    let colormap = match (protocol, &a.colormap) {
        (Protocol::Maps, None) => None,
        (_, Some(c)) if c == "cityscapes" => Some(ColorMap::cityscapes()),
        (_, Some(c)) => Some(ColorMap::load(Path::new(c))?),
        (Protocol::Segmentation, None) => Some(
            manifest
                .colormap
                .clone()
                .ok_or_else(|| Error::Config("manifest has no colour map; pass --colormap".into()))?,
        ),
    };
    evaluate(&model, manifest, protocol, colormap.as_ref(), a.input_size)
}

fn write_chart(reports: &mut [EvalReport], out: &Path) -> Result<()> {
    reports.sort_by_key(|r| r.paired_count);
    let svg = render_metric_chart(reports);
    pairmix::data::write_atomic(out, svg.as_bytes())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let protocol = match a.protocol {
        ProtocolArg::Segmentation => Protocol::Segmentation,
        ProtocolArg::Maps => Protocol::Maps,
    };
    let mut report = match checkpoint_dtype(&a.checkpoint)?.as_str() {
        "f32" => run_eval::<f32>(&a, &manifest, protocol)?,
        "f64" => run_eval::<f64>(&a, &manifest, protocol)?,
        other => return Err(Error::Format(format!("unknown checkpoint dtype `{other}`"))),
    };
    report.label = a.label.clone();
    report.paired_count = a.paired_count;
    report.save(&a.out)?;
    let agg = &report.aggregate;
    match (agg.mean_class_accuracy, agg.mean_iou) {
        (Some(macc), Some(miou)) => println!(
            "{} images: pixel acc {:.4}, mean class acc {macc:.4}, mean IoU {miou:.4}",
            report.rows.len(),
            agg.pixel_accuracy
        ),
        _ => println!("{} images: pixel acc {:.4}", report.rows.len(), agg.pixel_accuracy),
    }
    if a.plot {
        let mut all = a
            .compare
            .iter()
            .map(|p| EvalReport::load(p))
            .collect::<Result<Vec<_>>>()?;
        all.push(report);
        let chart = a.out.with_extension("svg");
        write_chart(&mut all, &chart)?;
        println!("chart {}", chart.display());
    }
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let mut reports = a
        .reports
        .iter()
        .map(|p| EvalReport::load(p))
        .collect::<Result<Vec<_>>>()?;
    write_chart(&mut reports, &a.out)?;
    println!("chart {}", a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = check_device().and_then(|_| match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Select(a) => cmd_select(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plot(a) => cmd_plot(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
