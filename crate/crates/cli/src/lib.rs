//! Command-line surface for the softgroup pipeline.
//!
//! Every subcommand reads and writes files through `softgroup::io`, so a run
//! can be replayed stage by stage. [`run`] is the whole program minus process
//! exit handling, which keeps it callable from tests.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use softgroup::evaluation::{semantic_pr_sweep, EvalReport, GtInstances};
use softgroup::grouping::{GroupingConfig, GroupingMode, DEFAULT_BANDWIDTH, DEFAULT_MIN_POINTS, DEFAULT_TAU};
use softgroup::io::{self, InstanceSet, ProposalSet};
use softgroup::refinement::{heuristic_refine_all, RefinementRecord, DEFAULT_MASK_THRESHOLD};
use softgroup::synthesis::{generate, SynthConfig};
use softgroup::{evaluate, group, validate_scene, Scene};

/// Environment variable that caps the worker thread count.
pub const THREADS_ENV: &str = "SOFTGROUP_NUM_THREADS";

pub const DEFAULT_SWEEP_TAUS: [f64; 6] = [0.01, 0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Parser)]
#[command(name = "softgroup", version, about = "Soft-threshold grouping for point-cloud instance segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled scene, optionally with corrupted scores.
    Synth(SynthArgs),
    /// Group points into instance proposals.
    Group(GroupArgs),
    /// Turn proposals into scored instances.
    Refine(RefineArgs),
    /// Score instances against the scene's ground truth.
    Eval(EvalArgs),
    /// Per-class semantic recall and precision over a grid of thresholds.
    SweepTau(SweepArgs),
    /// Time the load, grouping and refinement stages.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML file with generator settings; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the corrupted point fraction from the config file.
    #[arg(long)]
    pub corruption: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct GroupingArgs {
    #[arg(long, default_value_t = GroupingMode::Soft)]
    pub mode: GroupingMode,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
    pub bandwidth: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_POINTS)]
    pub min_points: usize,
}

impl GroupingArgs {
    fn config(&self, n_classes: usize) -> Result<GroupingConfig> {
        let config = GroupingConfig {
            tau: self.tau,
            bandwidth: self.bandwidth,
            min_points: self.min_points,
            n_classes,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct GroupArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub grouping: GroupingArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub proposals: PathBuf,
    /// Refinement file with one record per proposal; replaces the heuristic.
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MASK_THRESHOLD)]
    pub mask_threshold: f64,
    /// Also write the heuristic outputs as a refinement file.
    #[arg(long)]
    pub emit_records: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub instances: PathBuf,
    /// Flat tab-separated key/value report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_TAUS)]
    pub taus: Vec<f64>,
    /// Tab-separated table with columns tau, class, recall, precision.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub repeat: usize,
    #[command(flatten)]
    pub grouping: GroupingArgs,
    /// Write the timing table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs the command, writing the
/// human-readable summary to `stdout`.
pub fn run<I, T>(argv: I, stdout: &mut dyn std::io::Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    configure_threads()?;
    execute(cli.command, stdout)
}

/// Installs the global rayon pool size from [`THREADS_ENV`] when set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV}={raw:?} is not a thread count"))?;
    if n == 0 {
        bail!("{THREADS_ENV} must be at least 1");
    }
    // A second call in the same process fails harmlessly; keep the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(command: Command, stdout: &mut dyn std::io::Write) -> Result<()> {
    let text = match command {
        Command::Synth(a) => synth(&a)?,
        Command::Group(a) => group_cmd(&a)?,
        Command::Refine(a) => refine(&a)?,
        Command::Eval(a) => eval(&a)?,
        Command::SweepTau(a) => sweep(&a)?,
        Command::Bench(a) => bench(&a)?,
    };
    stdout.write_all(text.as_bytes())?;
    Ok(())
}

fn load_scene(path: &Path) -> Result<Scene> {
    let scene = io::read_scene(path).with_context(|| format!("reading scene {}", path.display()))?;
    let violations = validate_scene(&scene);
    if let Some(v) = violations.first() {
        bail!("scene {} is invalid ({} problems), first: {v}", path.display(), violations.len());
    }
    Ok(scene)
}

fn synth(a: &SynthArgs) -> Result<String> {
    let mut config: SynthConfig = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(rho) = a.corruption {
        config.corruption_fraction = rho;
    }
    let (scene, corruptions) = generate(&config)?;
    io::write_scene(&scene, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let mut s = format!(
        "wrote {}: {} points, {} classes, {} instances, seed {}\n",
        a.out.display(),
        scene.n_points(),
        scene.n_classes(),
        scene.truth.n_instances(),
        config.seed
    );
    for c in &corruptions {
        writeln!(
            s,
            "corrupted instance {}: {} points, class {} -> {}",
            c.instance,
            c.points.len(),
            c.true_class,
            c.wrong_class
        )?;
    }
    Ok(s)
}

fn group_cmd(a: &GroupArgs) -> Result<String> {
    let scene = load_scene(&a.scene)?;
    let config = a.grouping.config(scene.n_classes())?;
    let proposals = group(&scene, &config, a.grouping.mode)?;
    let set = ProposalSet {
        n_points: scene.n_points(),
        n_classes: scene.n_classes(),
        mode: a.grouping.mode,
        tau: config.tau,
        bandwidth: config.bandwidth,
        min_points: config.min_points,
        proposals,
    };
    io::write_json(&set, &a.out)?;
    Ok(format!(
        "{} grouping: {} proposals written to {}\n",
        set.mode,
        set.proposals.len(),
        a.out.display()
    ))
}

fn load_proposals(path: &Path, scene: &Scene) -> Result<ProposalSet> {
    let set: ProposalSet = io::read_json(path)?;
    if set.n_points != scene.n_points() || set.n_classes != scene.n_classes() {
        bail!(
            "proposals {} were made for {} points / {} classes, scene has {} / {}",
            path.display(),
            set.n_points,
            set.n_classes,
            scene.n_points(),
            scene.n_classes()
        );
    }
    Ok(set)
}

fn refine(a: &RefineArgs) -> Result<String> {
    if !(a.mask_threshold >= 0.0 && a.mask_threshold < 1.0) {
        bail!("--mask-threshold {} must lie in [0, 1)", a.mask_threshold);
    }
    let scene = load_scene(&a.scene)?;
    let set = load_proposals(&a.proposals, &scene)?;
    let coords = &scene.cloud.coords;
    let instances = match &a.external {
        Some(path) => io::load_external_refinement(&set.proposals, path, coords, scene.n_classes())
            .with_context(|| format!("applying {}", path.display()))?,
        None => heuristic_refine_all(&set.proposals, &scene.semantic, coords, a.mask_threshold)?,
    };
    if let Some(path) = &a.emit_records {
        let records: Vec<RefinementRecord> = set
            .proposals
            .iter()
            .zip(&instances)
            .map(|(p, r)| RefinementRecord::from_instance(p, r))
            .collect();
        io::write_refinement(&records, path)?;
    }
    let background = instances.iter().filter(|r| r.category == scene.n_classes()).count();
    let out = InstanceSet {
        n_points: scene.n_points(),
        n_classes: scene.n_classes(),
        instances,
    };
    io::write_json(&out, &a.out)?;
    Ok(format!(
        "{} instances ({} background) written to {}\n",
        out.instances.len(),
        background,
        a.out.display()
    ))
}

/// Human-readable rendering of an evaluation report.
pub fn render_report(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "AP      {:.4}", r.ap);
    let _ = writeln!(s, "AP50    {:.4}", r.ap50);
    let _ = writeln!(s, "AP25    {:.4}", r.ap25);
    let _ = writeln!(s, "mCov    {:.4}", r.mcov);
    let _ = writeln!(s, "mWCov   {:.4}", r.mwcov);
    let _ = writeln!(s, "mPrec50 {:.4}", r.mprec50);
    let _ = writeln!(s, "mRec50  {:.4}", r.mrec50);
    let _ = writeln!(s, "boxAP50 {:.4}", r.box_ap50);
    let _ = writeln!(s, "boxAP25 {:.4}", r.box_ap25);
    if !r.per_class_ap.is_empty() {
        let _ = writeln!(s, "class       AP     AP50     AP25");
        for (c, [ap, ap50, ap25]) in &r.per_class_ap {
            let _ = writeln!(s, "{c:>5} {ap:>8.4} {ap50:>8.4} {ap25:>8.4}");
        }
    }
    for note in &r.notes {
        let _ = writeln!(s, "note: {note}");
    }
    s
}

/// Machine-readable rendering: one `key<TAB>value` line per field.
pub fn report_table(r: &EvalReport) -> String {
    r.key_values().into_iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
}

fn eval(a: &EvalArgs) -> Result<String> {
    let scene = load_scene(&a.scene)?;
    let set: InstanceSet = io::read_json(&a.instances)?;
    if set.n_points != scene.n_points() {
        bail!(
            "instances {} refer to {} points, scene has {}",
            a.instances.display(),
            set.n_points,
            scene.n_points()
        );
    }
    let gt = GtInstances::from_truth(&scene.truth, &scene.cloud.coords, scene.n_classes())?;
    let report = evaluate(&set.instances, &gt)?;
    io::write_atomic(&a.out, report_table(&report).as_bytes())?;
    Ok(render_report(&report))
}

fn sweep(a: &SweepArgs) -> Result<String> {
    let scene = load_scene(&a.scene)?;
    let sweep = semantic_pr_sweep(&scene.semantic, &scene.truth.semantic_label, &a.taus)?;
    let mut table = String::from("tau\tclass\trecall\tprecision\n");
    for row in sweep.table() {
        table.push_str(&row.join("\t"));
        table.push('\n');
    }
    io::write_atomic(&a.out, table.as_bytes())?;
    let mut s = String::from("tau      mean recall  mean precision\n");
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
    let labels = sweep.taus.iter().map(|t| t.to_string()).chain(std::iter::once("hard".to_string()));
    for (label, points) in labels.zip(sweep.thresholded.iter().chain(std::iter::once(&sweep.hard))) {
        let m = softgroup::evaluation::PrSweep::class_mean(points);
        writeln!(s, "{label:<8} {:>11}  {:>14}", fmt(m.recall), fmt(m.precision))?;
    }
    Ok(s)
}

/// Wall-clock statistics for one pipeline stage, milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

fn timing(stage: &'static str, samples: &[f64]) -> StageTiming {
    StageTiming {
        stage,
        mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
        min_ms: samples.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn bench(a: &BenchArgs) -> Result<String> {
    if a.repeat == 0 {
        bail!("--repeat must be at least 1");
    }
    let mut load = Vec::with_capacity(a.repeat);
    let mut grouping = Vec::with_capacity(a.repeat);
    let mut refinement = Vec::with_capacity(a.repeat);
    let mut counts = (0, 0);
    for _ in 0..a.repeat {
        let t = Instant::now();
        let scene = load_scene(&a.scene)?;
        load.push(t.elapsed().as_secs_f64() * 1e3);

        let config = a.grouping.config(scene.n_classes())?;
        let t = Instant::now();
        let proposals = group(&scene, &config, a.grouping.mode)?;
        grouping.push(t.elapsed().as_secs_f64() * 1e3);

        let t = Instant::now();
        let instances = heuristic_refine_all(&proposals, &scene.semantic, &scene.cloud.coords, DEFAULT_MASK_THRESHOLD)?;
        refinement.push(t.elapsed().as_secs_f64() * 1e3);
        counts = (scene.n_points(), instances.len());
    }
    let stages = [
        timing("load", &load),
        timing("grouping", &grouping),
        timing("refinement", &refinement),
    ];
    let mut s = format!(
        "{} points, {} instances, {} runs, {} threads\n",
        counts.0,
        counts.1,
        a.repeat,
        rayon::current_num_threads()
    );
    s.push_str("stage\tmean_ms\tmin_ms\tmax_ms\n");
    for st in &stages {
        writeln!(s, "{}\t{:.3}\t{:.3}\t{:.3}", st.stage, st.mean_ms, st.min_ms, st.max_ms)?;
    }
    let total: f64 = stages.iter().map(|st| st.mean_ms).sum();
    writeln!(s, "total\t{total:.3}\t\t")?;
    if let Some(path) = &a.out {
        io::write_atomic(path, s.as_bytes())?;
    }
    Ok(s)
}
