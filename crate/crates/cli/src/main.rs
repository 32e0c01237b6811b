use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use omnilabel::annotation::{
    calibrate_ec, downgrade_with, simulate_ec_batch, ClassId, LabelFormat, NoiseFrame, NoiseModel, OmniLabel,
    DEFAULT_EC_SIGMA,
};
use omnilabel::budget::{
    builtin_profile, builtin_profiles, cost_per_image, enumerate_policies, DatasetStats,
};
use omnilabel::ema::{ema_step, DEFAULT_DECAY};
use omnilabel::filtering::{filter, FilterConfig, PseudoLabelSet, Strategy};
use omnilabel::geometry::BoundingBox;
use omnilabel::io::{self, Corpus, ImageSizes};
use omnilabel::loss::{eval_loss, LossConfig};
use omnilabel::matching::Matcher;
use omnilabel::prediction::TeacherPrediction;
use omnilabel::quality::{score_pseudo, QualityReport};

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "omnilabel", version, about = "Pseudo-label filtering against weak annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn teacher predictions into pseudo-labels using weak annotations.
    Filter(FilterArgs),
    /// Reduce a COCO-style full annotation file to a weak format.
    Downgrade(DowngradeArgs),
    /// Replace every box of a COCO-style file with a simulated extreme-clicking box.
    SimulateEc(SimulateEcArgs),
    /// Per-image annotation cost in seconds for each format.
    Cost(StatsArgs),
    /// Label-format mixtures that fit an annotation budget.
    Budget(BudgetArgs),
    /// Precision and recall of pseudo-labels against full annotations.
    Eval(EvalArgs),
    /// Matched-pair detection loss of predictions against full annotations.
    EvalLoss(EvalLossArgs),
    /// One teacher update from a student snapshot.
    Ema(EmaArgs),
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// Teacher predictions (JSON lines).
    #[arg(long)]
    predictions: PathBuf,
    /// Weak labels (omni-label JSON).
    #[arg(long)]
    labels: PathBuf,
    /// COCO-style file supplying image sizes and category ids for the output.
    #[arg(long)]
    coco: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "unified")]
    strategy: Strategy,
    /// Only filter images whose label has this format; others are skipped.
    #[arg(long)]
    format: Option<LabelFormat>,
    #[arg(long, default_value = "hungarian")]
    matcher: Matcher,
    #[arg(long, default_value_t = 0.7)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    lambda_iou: f64,
    #[arg(long, default_value_t = 5.0)]
    lambda_l1: f64,
    /// Drop matches on infeasible entries instead of flagging them.
    #[arg(long)]
    drop_infeasible: bool,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    /// Extreme-clicking corner noise, as a fraction of the image side.
    #[arg(long, default_value_t = DEFAULT_EC_SIGMA)]
    ec_sigma: f64,
    /// Measure the noise relative to the box side instead of the image.
    #[arg(long)]
    box_frame: bool,
}

impl NoiseArgs {
    fn frame(&self) -> NoiseFrame {
        if self.box_frame {
            NoiseFrame::BoxSide
        } else {
            NoiseFrame::Image
        }
    }
}

#[derive(Args, Debug)]
struct DowngradeArgs {
    #[arg(long)]
    coco: PathBuf,
    #[arg(long)]
    format: LabelFormat,
    /// Each image draws from `seed ^ image_id`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateEcArgs {
    #[arg(long)]
    coco: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Fit the noise scale to this mean IoU on the file's boxes first.
    #[arg(long)]
    calibrate: Option<f64>,
    /// Reference std reported next to the calibrated one.
    #[arg(long, default_value_t = 0.16)]
    target_std: f64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Built-in profile (bees, crowdhuman, voc, coco, objects365); repeatable.
    #[arg(long)]
    dataset: Vec<String>,
    /// Stats JSON `{name, C, C_avg, I_avg}`; repeatable.
    #[arg(long)]
    stats: Vec<PathBuf>,
}

impl StatsArgs {
    fn resolve(&self, all_by_default: bool) -> Result<Vec<DatasetStats>> {
        let mut out = Vec::new();
        for name in &self.dataset {
            match builtin_profile(name) {
                Some(s) => out.push(s),
                None => bail!(input(format!("unknown dataset {name:?}"))),
            }
        }
        for path in &self.stats {
            out.push(reading(io::load_stats(path), path)?);
        }
        if out.is_empty() && all_by_default {
            out = builtin_profiles();
        }
        Ok(out)
    }
}

#[derive(Args, Debug)]
struct BudgetArgs {
    #[command(flatten)]
    stats: StatsArgs,
    #[arg(long)]
    hours: f64,
    /// Formats to mix; the rest of the data stays unlabeled.
    #[arg(long, value_delimiter = ',', default_value = "fully,tags_k,boxes_ec")]
    formats: Vec<LabelFormat>,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// Number of images; defaults to the profile's training-set size.
    #[arg(long)]
    size: Option<u64>,
    /// Print at most this many policies.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pseudo: PathBuf,
    /// Full annotations (COCO-style).
    #[arg(long)]
    coco: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou_thresh: f64,
    /// Also print one report per image.
    #[arg(long)]
    per_image: bool,
}

#[derive(Args, Debug)]
struct EvalLossArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    coco: PathBuf,
}

#[derive(Args, Debug)]
struct EmaArgs {
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    student: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DECAY)]
    k: f64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

/// Marks errors caused by bad input rather than a bug.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input(msg: impl Into<String>) -> InputError {
    InputError(msg.into())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<InputError>() || cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<omnilabel::Error>() {
            return match e {
                omnilabel::Error::TooLarge(_) => EXIT_INTERNAL,
                _ => EXIT_INPUT,
            };
        }
    }
    EXIT_INTERNAL
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Filter(a) => run_filter(a),
        Command::Downgrade(a) => run_downgrade(a),
        Command::SimulateEc(a) => run_simulate_ec(a),
        Command::Cost(a) => run_cost(a),
        Command::Budget(a) => run_budget(a),
        Command::Eval(a) => run_eval(a),
        Command::EvalLoss(a) => run_eval_loss(a),
        Command::Ema(a) => run_ema(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        },
    }
}

/// Adds the path to errors that do not already name it.
fn reading<T>(r: omnilabel::Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| match e {
        omnilabel::Error::Io { .. } => anyhow::Error::new(e),
        e => anyhow::Error::new(e).context(format!("reading {}", path.display())),
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

fn run_filter(a: FilterArgs) -> Result<()> {
    let cfg = FilterConfig {
        tau: a.tau,
        gamma: a.gamma,
        lambda_iou: a.lambda_iou,
        lambda_l1: a.lambda_l1,
        strategy: a.strategy,
        drop_infeasible: a.drop_infeasible,
        matcher: a.matcher,
    };
    cfg.validate()?;
    let preds = reading(io::load_predictions(&a.predictions), &a.predictions)?;
    let labels = reading(io::load_labels(&a.labels), &a.labels)?;
    let (sizes, cats) = match &a.coco {
        Some(path) => {
            let corpus = reading(io::load_coco(path), path)?;
            (corpus.image_sizes(), Some(corpus.category_ids()))
        }
        None => (ImageSizes::new(), None),
    };

    let mut work: Vec<(&TeacherPrediction, &OmniLabel)> = Vec::new();
    for p in &preds {
        match labels.get(&p.image_id()) {
            Some(l) if a.format.is_none_or(|f| l.format() == f) => work.push((p, l)),
            Some(l) => info!("image {}: skipping {} label", p.image_id(), l.format()),
            None => warn!("image {}: no label, skipped", p.image_id()),
        }
    }
    if let Some(cats) = &cats {
        if let Some(p) = preds.iter().find(|p| p.num_classes() > cats.len()) {
            bail!(input(format!(
                "image {}: {} prediction classes but only {} categories",
                p.image_id(),
                p.num_classes(),
                cats.len()
            )));
        }
    }

    let results: Vec<(u64, PseudoLabelSet)> = pool(a.jobs)?.install(|| {
        work.par_iter()
            .map(|(p, l)| {
                let set = filter(p, l, &cfg).with_context(|| format!("image {}", p.image_id()))?;
                Ok((p.image_id(), set))
            })
            .collect::<Result<_>>()
    })?;
    let mut out = BTreeMap::new();
    for (id, set) in results {
        if out.insert(id, set).is_some() {
            bail!(input(format!("image {id} has more than one prediction")));
        }
    }
    info!("filtered {} images", out.len());
    emit(a.out.as_deref(), &io::pseudo_to_string(&out, &sizes, cats.as_deref())?)
}

fn run_downgrade(a: DowngradeArgs) -> Result<()> {
    let corpus = reading(io::load_coco(&a.coco), &a.coco)?;
    NoiseModel::new(a.noise.ec_sigma, a.seed)?;
    let mut labels = BTreeMap::new();
    for &id in corpus.images.keys() {
        let full = corpus.fully_label(id).unwrap_or(OmniLabel::Fully(Vec::new()));
        let weak = downgrade_with(&full, a.format, a.seed ^ id, a.noise.ec_sigma, a.noise.frame())?;
        labels.insert(id, weak);
    }
    emit(a.out.as_deref(), &io::labels_to_string(&labels)?)
}

fn run_simulate_ec(a: SimulateEcArgs) -> Result<()> {
    let corpus = reading(io::load_coco(&a.coco), &a.coco)?;
    let all: Vec<BoundingBox> = corpus.annotations.values().flatten().map(|x| x.bbox).collect();
    let sigma = match a.calibrate {
        Some(mean) => {
            let cal = calibrate_ec(mean, a.target_std, &all, a.seed, a.noise.frame())?;
            eprintln!("{}", serde_json::to_string(&cal)?);
            cal.noise.sigma_scale
        }
        None => a.noise.ec_sigma,
    };
    let mut labels: BTreeMap<u64, Vec<(BoundingBox, ClassId)>> = BTreeMap::new();
    for (&id, anns) in &corpus.annotations {
        let noise = NoiseModel::new(sigma, a.seed ^ id)?.with_frame(a.noise.frame());
        let boxes: Vec<BoundingBox> = anns.iter().map(|x| x.bbox).collect();
        let sim = simulate_ec_batch(&boxes, &noise);
        labels.insert(id, sim.into_iter().zip(anns.iter().map(|x| x.class_id)).collect());
    }
    let out = Corpus::from_labels(
        corpus.images.values().cloned().collect(),
        corpus.categories.clone(),
        &labels,
    )?;
    emit(a.out.as_deref(), &io::coco_to_string(&out)?)
}

/// Column order of the printed cost table.
const COST_COLUMNS: [LabelFormat; 7] = [
    LabelFormat::TagsU,
    LabelFormat::TagsK,
    LabelFormat::PointsU,
    LabelFormat::PointsK,
    LabelFormat::BoxesEc,
    LabelFormat::BoxesU,
    LabelFormat::Fully,
];

fn run_cost(a: StatsArgs) -> Result<()> {
    let stats = a.resolve(true)?;
    let mut text = format!("{:<12} {:>5} {:>6} {:>6}", "dataset", "C", "C_avg", "I_avg");
    for f in COST_COLUMNS {
        text += &format!(" {:>9}", f.as_str());
    }
    text.push('\n');
    for s in &stats {
        s.validate()?;
        text += &format!("{:<12} {:>5} {:>6} {:>6}", s.name, s.num_classes, s.avg_classes, s.avg_instances);
        for f in COST_COLUMNS {
            match cost_per_image(s, f) {
                Ok(v) => text += &format!(" {v:>9.1}"),
                Err(_) => text += &format!(" {:>9}", "-"),
            }
        }
        text.push('\n');
    }
    emit(None, &text)
}

fn run_budget(a: BudgetArgs) -> Result<()> {
    let stats = a.stats.resolve(false)?;
    let [s] = stats.as_slice() else {
        bail!(input("budget needs exactly one --dataset or --stats"));
    };
    let size = match a.size.or(s.train_images) {
        Some(n) => n,
        None => bail!(input(format!("{}: no training-set size, pass --size", s.name))),
    };
    let mut policies = enumerate_policies(s, a.hours, &a.formats, a.step, size)?;
    info!("{} policies within budget", policies.len());
    if let Some(n) = a.limit {
        policies.truncate(n);
    }
    let mut text = String::new();
    for p in &policies {
        let parts: Vec<String> = p
            .policy
            .fractions
            .iter()
            .rev()
            .map(|(f, x)| format!("{f}={:.0}%", x * 100.0))
            .collect();
        text += &format!("{:>10.2} h  {}\n", p.cost_hours, parts.join(" "));
    }
    emit(None, &text)
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let corpus = reading(io::load_coco(&a.coco), &a.coco)?;
    let cats = corpus.category_ids();
    let pseudo = reading(io::load_pseudo(&a.pseudo, Some(&cats)), &a.pseudo)?;
    let empty = PseudoLabelSet::default();
    let mut reports = Vec::new();
    let mut text = String::new();
    for &id in corpus.images.keys() {
        let gt: Vec<(BoundingBox, ClassId)> = corpus
            .annotations
            .get(&id)
            .map(|v| v.iter().map(|x| (x.bbox, x.class_id)).collect())
            .unwrap_or_default();
        let r = score_pseudo(pseudo.get(&id).unwrap_or(&empty), &gt, a.iou_thresh)?;
        if a.per_image {
            text += &format!("{{\"image_id\":{id},\"report\":{}}}\n", serde_json::to_string(&r)?);
        }
        reports.push(r);
    }
    for id in pseudo.keys().filter(|id| !corpus.images.contains_key(id)) {
        warn!("pseudo-labels for unknown image {id} ignored");
    }
    text += &serde_json::to_string_pretty(&QualityReport::merge(&reports))?;
    text.push('\n');
    emit(None, &text)
}

fn run_eval_loss(a: EvalLossArgs) -> Result<()> {
    let corpus = reading(io::load_coco(&a.coco), &a.coco)?;
    let cfg = LossConfig::default();
    let mut text = String::new();
    let (mut sum, mut n) = (0.0, 0usize);
    for p in reading(io::open_predictions(&a.predictions), &a.predictions)? {
        let p = reading(p, &a.predictions)?;
        let id = p.image_id();
        if !corpus.images.contains_key(&id) {
            warn!("image {id}: not in {}, skipped", a.coco.display());
            continue;
        }
        let labels: Vec<(BoundingBox, ClassId)> = corpus
            .annotations
            .get(&id)
            .map(|v| v.iter().map(|x| (x.bbox, x.class_id)).collect())
            .unwrap_or_default();
        let b = eval_loss(&p, &labels, &cfg).with_context(|| format!("image {id}"))?;
        sum += b.total;
        n += 1;
        text += &format!("{{\"image_id\":{id},\"loss\":{}}}\n", serde_json::to_string(&b)?);
    }
    let mean = if n > 0 { sum / n as f64 } else { 0.0 };
    text += &format!("{{\"images\":{n},\"mean_total\":{}}}\n", serde_json::to_string(&mean)?);
    emit(None, &text)
}

fn run_ema(a: EmaArgs) -> Result<()> {
    let teacher = reading(io::load_params(&a.teacher), &a.teacher)?;
    let student = reading(io::load_params(&a.student), &a.student)?;
    let next = ema_step(&teacher, &student, a.k)?;
    match &a.out {
        Some(path) => io::save_params(&next, path)?,
        None => emit(None, &(serde_json::to_string(&next)? + "\n"))?,
    }
    Ok(())
}
