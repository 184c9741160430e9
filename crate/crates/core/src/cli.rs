//! Command-line pipeline: configuration, stage orchestration and artifacts.
//!
//! Every stage reads the artifacts of earlier stages from the output root
//! and writes its own into a fixed subdirectory, together with a copy of
//! the effective configuration.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::align::{finetune, verify_derivation_identities, DsoConfig, Objective};
use crate::datagen::{
    build_eval_prompts, build_pretrain_set, build_synthetic_prompts, build_train_prompts, label, pretrain_batch, rollout,
    Dataset, DatagenConfig, FamilyKind, PretrainRecord, PromptRecord, SamplerConfig, ShapeFamily,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    cd_tilt_points, comparison_table, correlation, decoded_shapes, evaluate, flat_cut_baseline_eval, loss_curves,
    loss_curves_csv, perturbation_csv, perturbation_eval, perturbation_table, sweep, Correlation, EvalConfig, EvalReport,
    SweepAxis, FLAT_CUT_HEIGHTS, PERTURBATION_RUNS, PERTURBATION_THETAS,
};
use crate::flow::{pretrain, PretrainConfig};
use crate::physics::SimConfig;
use crate::seed::derive_seed;
use crate::tensor::{CheckpointMeta, MlpConfig, MlpModel, ModelCheckpoint};
use crate::textio::{fmt_f64, read_records, to_line, write_atomic, write_records};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SIMTUNE_OUT";
pub const DEFAULT_OUT: &str = "simtune-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PromptSet {
    /// Prompts built from ground-truth objects.
    Train,
    /// Prompts with no ground truth.
    Synthetic,
}

impl PromptSet {
    pub fn name(self) -> &'static str {
        match self {
            PromptSet::Train => "train",
            PromptSet::Synthetic => "synthetic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    /// Samples per prompt.
    pub k: usize,
    pub sampler: SamplerConfig,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            k: 4,
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub steps: Vec<usize>,
    pub fractions: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            steps: vec![1000, 2000, 4000],
            fractions: vec![1.0 / 64.0, 1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub perturbation_thetas: Vec<f64>,
    pub perturbation_runs: usize,
    pub flat_cut_heights: Vec<f64>,
    pub curve_beta: f64,
    pub curve_margins: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            perturbation_thetas: PERTURBATION_THETAS.to_vec(),
            perturbation_runs: PERTURBATION_RUNS,
            flat_cut_heights: FLAT_CUT_HEIGHTS.to_vec(),
            curve_beta: 500.0,
            curve_margins: (-100..=100).map(|i| i as f64 * 1e-4).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub families: Vec<FamilyKind>,
    /// Prompt set used by rollout, simulate, finetune and sweep.
    pub prompts: PromptSet,
    /// Share of the preference dataset used by finetune.
    pub data_fraction: f64,
    pub datagen: DatagenConfig,
    pub sim: SimConfig,
    pub model: MlpConfig,
    pub pretrain: PretrainConfig,
    pub rollout: RolloutConfig,
    pub finetune: DsoConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub analysis: AnalysisConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            families: crate::datagen::default_families().into_iter().map(|f| f.kind).collect(),
            prompts: PromptSet::Train,
            data_fraction: 1.0,
            datagen: DatagenConfig::default(),
            sim: SimConfig::default(),
            model: MlpConfig::default(),
            pretrain: PretrainConfig::default(),
            rollout: RolloutConfig::default(),
            finetune: DsoConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let cfg: PipelineConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {}", path.display(), e.message())))?
        };
        Ok(cfg)
    }

    /// Stage seeds are always taken from the master seed.
    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.datagen.validate()?;
        self.sim.validate()?;
        self.finetune.validate()?;
        self.rollout.sampler.guidance.validate()?;
        if self.families.is_empty() {
            return Err(Error::config("at least one shape family is required"));
        }
        if self.model.latent_dim != self.datagen.vertices || self.model.cond_dim != self.datagen.vertices {
            return Err(Error::config(format!(
                "model latent and condition widths must equal datagen.vertices ({})",
                self.datagen.vertices
            )));
        }
        if self.rollout.k == 0 || self.eval.samples_per_prompt == 0 {
            return Err(Error::config("k and samples_per_prompt must be positive"));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::config("data_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn shape_families(&self) -> Vec<ShapeFamily> {
        self.families.iter().map(|&k| ShapeFamily::new(k)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Parser, Debug)]
#[command(name = "simtune", version, about = "Simulation-feedback fine-tuning of a rectified-flow shape generator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// Pipeline configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; defaults to $SIMTUNE_OUT, then `simtune-out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; never changes any output.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub objective: Option<String>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Share of the preference dataset used for fine-tuning.
    #[arg(long, global = true)]
    pub frac: Option<f64>,
    /// Samples per prompt.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Use the synthetic prompt set.
    #[arg(long, global = true)]
    pub synthetic: bool,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Draw shapes; write pretraining data and all prompt sets.
    Synth,
    /// Train the base flow model.
    Pretrain,
    /// Sample k shapes per prompt from the base model.
    Rollout,
    /// Label rollouts with the stability oracle.
    Simulate,
    /// Fine-tune a LoRA adapter with DRO, DPO or SFT.
    Finetune,
    /// Evaluate checkpoints on the held-out prompts.
    Eval {
        /// Checkpoints to evaluate; default is the base model and every
        /// fine-tuned run.
        #[arg(long)]
        ckpt: Vec<PathBuf>,
    },
    /// Fine-tune and evaluate along a steps or data-fraction axis.
    Sweep {
        #[arg(long, value_enum, default_value = "steps")]
        axis: AxisKind,
    },
    /// Stability under random initial rotations.
    Perturb {
        #[arg(long)]
        ckpt: Vec<PathBuf>,
    },
    /// Flat-cut post-processing baseline on base-model samples.
    Flatcut {
        /// Fine-tuned checkpoints to list alongside the baseline.
        #[arg(long)]
        ckpt: Vec<PathBuf>,
    },
    /// Loss and derivative curves of the linear and logistic objectives.
    Curves,
    /// Numerical checks of the objective derivations.
    VerifyDerivations,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AxisKind {
    Steps,
    Data,
}

/// Exit status for an error: 2 for configuration and usage problems,
/// 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Input(_) => 2,
        _ => 1,
    }
}

/// Effective configuration: file, then flags.
pub fn effective_config(args: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_master_seed(seed);
    if let Some(o) = &args.objective {
        cfg.finetune.objective = o.parse::<Objective>()?;
    }
    if let Some(b) = args.beta {
        cfg.finetune.beta = b;
        cfg.analysis.curve_beta = b;
    }
    if let Some(s) = args.steps {
        cfg.finetune.steps = s;
    }
    if let Some(f) = args.frac {
        cfg.data_fraction = f;
    }
    if let Some(k) = args.k {
        cfg.rollout.k = k;
    }
    if args.synthetic {
        cfg.prompts = PromptSet::Synthetic;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn out_root(args: &GlobalArgs) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Parses `argv`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("simtune: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = effective_config(&cli.global)?;
    let pipe = Pipeline {
        cfg,
        root: out_root(&cli.global),
    };
    let workers = cli.global.workers.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth => pipe.synth().map(|_| ()),
        Command::Pretrain => pipe.pretrain().map(|_| ()),
        Command::Rollout => pipe.rollout().map(|_| ()),
        Command::Simulate => pipe.simulate().map(|_| ()),
        Command::Finetune => pipe.finetune().map(|_| ()),
        Command::Eval { ckpt } => pipe.eval(ckpt).map(|_| ()),
        Command::Sweep { axis } => pipe.sweep(*axis).map(|_| ()),
        Command::Perturb { ckpt } => pipe.perturb(ckpt),
        Command::Flatcut { ckpt } => pipe.flatcut(ckpt),
        Command::Curves => pipe.curves(),
        Command::VerifyDerivations => pipe.verify_derivations(),
    })
}

/// Stage runner over one output root.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub root: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = to_line(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn missing(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e} (run the earlier stage first)", path.display())))
}

fn hash_hex(ck: &ModelCheckpoint) -> Result<String> {
    Ok(format!("{:016x}", ck.content_hash()?))
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, root: impl Into<PathBuf>) -> Self {
        Pipeline { cfg, root: root.into() }
    }

    /// Creates a stage directory and echoes the effective config into it.
    fn stage_dir(&self, rel: &str) -> Result<PathBuf> {
        let dir = self.root.join(rel);
        std::fs::create_dir_all(&dir)?;
        write_atomic(&dir.join("config.json"), self.cfg.to_json()?.as_bytes())?;
        Ok(dir)
    }

    fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn base_path(&self) -> PathBuf {
        self.root.join("pretrain").join("base.ckpt")
    }

    fn set_name(&self) -> &'static str {
        self.cfg.prompts.name()
    }

    pub fn finetune_run_name(&self) -> String {
        let mut name = format!("{}-{}", self.cfg.finetune.objective.name(), self.set_name());
        if self.cfg.data_fraction != 1.0 {
            name.push_str(&format!("-frac{}", self.cfg.data_fraction));
        }
        name
    }

    pub fn eval_prompts(&self) -> Result<Vec<PromptRecord>> {
        let p = self.synth_dir().join("eval_prompts.jsonl");
        read_records(&p).map_err(|e| match e {
            Error::Io(io) => missing(&p, io),
            other => other,
        })
    }

    fn load_ckpt(path: &Path) -> Result<ModelCheckpoint> {
        ModelCheckpoint::load(path).map_err(|e| match e {
            Error::Io(io) => missing(path, io),
            other => other,
        })
    }

    pub fn synth(&self) -> Result<PathBuf> {
        let c = &self.cfg;
        let d = &c.datagen;
        let fams = c.shape_families();
        let dir = self.stage_dir("synth")?;
        let pre = build_pretrain_set(&fams, d.pretrain_size, d.stable_fraction, c.seed, d, &c.sim)?;
        write_records(&dir.join("pretrain.jsonl"), &pre)?;
        let eval = build_eval_prompts(&fams, d.eval_objects, d.eval_prompts_per_object, c.seed, d, &c.sim)?;
        write_records(&dir.join("eval_prompts.jsonl"), &eval)?;
        let train = build_train_prompts(&fams, d.train_objects, d.train_prompts_per_object, c.seed, d, &c.sim)?;
        write_records(&dir.join("train_prompts.jsonl"), &train)?;
        let syn = build_synthetic_prompts(&fams, d.synthetic_prompts, c.seed, d, &c.sim)?;
        write_records(&dir.join("synthetic_prompts.jsonl"), &syn)?;
        println!(
            "synth: {} pretraining shapes, {} eval / {} train / {} synthetic prompts -> {}",
            pre.len(),
            eval.len(),
            train.len(),
            syn.len(),
            dir.display()
        );
        Ok(dir)
    }

    pub fn pretrain(&self) -> Result<ModelCheckpoint> {
        let c = &self.cfg;
        let records: Vec<PretrainRecord> = {
            let p = self.synth_dir().join("pretrain.jsonl");
            read_records(&p).map_err(|e| match e {
                Error::Io(io) => missing(&p, io),
                other => other,
            })?
        };
        let batch = pretrain_batch(&records)?;
        let model = MlpModel::init(c.model.clone(), derive_seed(c.seed, "model-init"));
        let (model, log) = pretrain(model, &batch, &c.pretrain)?;
        let dir = self.stage_dir("pretrain")?;
        write_records(&dir.join("log.jsonl"), &log)?;
        let ck = ModelCheckpoint::new(
            model,
            None,
            CheckpointMeta {
                seed: c.seed,
                label: "base".into(),
                train_steps: log.len() as u64,
            },
        );
        ck.save(&dir.join("base.ckpt"))?;
        println!(
            "pretrain: {} steps, final loss {} -> {}",
            log.len(),
            log.last().map(|r| fmt_f64(r.loss)).unwrap_or_default(),
            dir.display()
        );
        Ok(ck)
    }

    pub fn rollout(&self) -> Result<Dataset> {
        let c = &self.cfg;
        let base = Self::load_ckpt(&self.base_path())?;
        let file = format!("{}_prompts.jsonl", self.set_name());
        let p = self.synth_dir().join(&file);
        let prompts: Vec<PromptRecord> = read_records(&p).map_err(|e| match e {
            Error::Io(io) => missing(&p, io),
            other => other,
        })?;
        let rolls = rollout(
            &base.model,
            base.adapter.as_ref(),
            &prompts,
            c.rollout.k,
            &c.rollout.sampler,
            derive_seed(c.seed, "rollout"),
        )?;
        let ds = Dataset { prompts, rollouts: rolls };
        let dir = self.stage_dir(&format!("rollout/{}", self.set_name()))?;
        ds.save(&dir, c.datagen.hash(), c.seed)?;
        println!("rollout: {} samples -> {}", ds.rollouts.len(), dir.display());
        Ok(ds)
    }

    pub fn simulate(&self) -> Result<Dataset> {
        let c = &self.cfg;
        let src = self.root.join("rollout").join(self.set_name());
        let ds = Dataset::load(&src).map_err(|e| match e {
            Error::Io(io) => missing(&src, io),
            other => other,
        })?;
        let labeled = Dataset {
            rollouts: label(&ds.rollouts, &c.datagen, &c.sim),
            prompts: ds.prompts,
        };
        let dir = self.stage_dir(&format!("simulate/{}", self.set_name()))?;
        labeled.save(&dir, c.datagen.hash(), c.seed)?;
        let m = labeled.manifest(c.datagen.hash(), c.seed);
        println!(
            "simulate: {} stable, {} unstable, {} invalid -> {}",
            m.stable,
            m.unstable,
            m.invalid,
            dir.display()
        );
        Ok(labeled)
    }

    pub fn labeled_dataset(&self) -> Result<Dataset> {
        let src = self.root.join("simulate").join(self.set_name());
        Dataset::load(&src).map_err(|e| match e {
            Error::Io(io) => missing(&src, io),
            other => other,
        })
    }

    pub fn finetune(&self) -> Result<ModelCheckpoint> {
        let c = &self.cfg;
        let base = Self::load_ckpt(&self.base_path())?;
        let ds = self.labeled_dataset()?;
        let ds = if c.data_fraction < 1.0 {
            ds.subset_fraction(c.data_fraction, c.seed)?
        } else {
            ds
        };
        let out = finetune(&base, &ds, &c.finetune, None)?;
        let dir = self.stage_dir(&format!("finetune/{}", self.finetune_run_name()))?;
        write_records(&dir.join("log.jsonl"), &out.log)?;
        out.checkpoint.save(&dir.join("model.ckpt"))?;
        if let Some(reason) = &out.aborted {
            write_atomic(&dir.join("ABORTED"), format!("{reason}\n").as_bytes())?;
            return Err(Error::Numeric(format!("training aborted at {reason}; last good adapter saved")));
        }
        println!("finetune: {} steps of {} -> {}", out.log.len(), c.finetune.objective.name(), dir.display());
        Ok(out.checkpoint)
    }

    fn default_eval_ckpts(&self) -> Result<Vec<PathBuf>> {
        let mut v = vec![self.base_path()];
        let ft = self.root.join("finetune");
        if ft.is_dir() {
            let mut runs: Vec<PathBuf> = std::fs::read_dir(&ft)?
                .filter_map(|e| e.ok().map(|e| e.path().join("model.ckpt")))
                .filter(|p| p.is_file())
                .collect();
            runs.sort();
            v.extend(runs);
        }
        Ok(v)
    }

    fn ckpt_name(path: &Path) -> String {
        match path.file_name().and_then(|f| f.to_str()) {
            Some("base.ckpt") => "base".into(),
            Some("model.ckpt") => path
                .parent()
                .and_then(|p| p.file_name())
                .and_then(|f| f.to_str())
                .unwrap_or("model")
                .to_string(),
            _ => path.file_stem().and_then(|f| f.to_str()).unwrap_or("model").to_string(),
        }
    }

    pub fn eval_checkpoint(&self, ck: &ModelCheckpoint, prompts: &[PromptRecord]) -> Result<EvalReport> {
        let c = &self.cfg;
        evaluate(&ck.model, ck.adapter.as_ref(), hash_hex(ck)?, prompts, &c.eval, &c.datagen, &c.sim, derive_seed(c.seed, "eval"))
    }

    pub fn eval(&self, ckpts: &[PathBuf]) -> Result<Vec<(String, EvalReport)>> {
        let prompts = self.eval_prompts()?;
        let paths = if ckpts.is_empty() { self.default_eval_ckpts()? } else { ckpts.to_vec() };
        let dir = self.stage_dir("eval")?;
        let mut out = Vec::new();
        let mut corr: Vec<(String, Option<Correlation>, Option<String>)> = Vec::new();
        for p in &paths {
            let name = Self::ckpt_name(p);
            let ck = Self::load_ckpt(p)?;
            let rep = self.eval_checkpoint(&ck, &prompts)?;
            let sub = dir.join(&name);
            std::fs::create_dir_all(&sub)?;
            write_records(&sub.join("samples.jsonl"), &rep.samples)?;
            write_records(&sub.join("per_prompt.jsonl"), &rep.per_prompt)?;
            let mut summary = rep.clone();
            summary.samples.clear();
            summary.per_prompt.clear();
            write_json(&sub.join("report.json"), &summary)?;
            match correlation(&cd_tilt_points(&rep)) {
                Ok(c) => corr.push((name.clone(), Some(c), None)),
                Err(e) => corr.push((name.clone(), None, Some(e.to_string()))),
            }
            println!(
                "eval {name}: output {:.2}%  stable {}%  rot {}  cd {}  fscore {}",
                rep.pct_output,
                rep.pct_stable.map(|v| format!("{v:.2}")).unwrap_or("-".into()),
                rep.mean_rot_deg.map(|v| format!("{v:.2}")).unwrap_or("-".into()),
                rep.mean_cd.map(|v| format!("{v:.5}")).unwrap_or("-".into()),
                rep.mean_fscore.map(|v| format!("{v:.2}")).unwrap_or("-".into()),
            );
            out.push((name, rep));
        }
        let rows: Vec<(String, &EvalReport)> = out.iter().map(|(n, r)| (n.clone(), r)).collect();
        write_atomic(&dir.join("comparison.md"), comparison_table(&rows).as_bytes())?;
        write_json(&dir.join("correlation.json"), &corr)?;
        Ok(out)
    }

    pub fn sweep(&self, axis: AxisKind) -> Result<crate::evalkit::SweepResult> {
        let c = &self.cfg;
        let base = Self::load_ckpt(&self.base_path())?;
        let ds = self.labeled_dataset()?;
        let prompts = self.eval_prompts()?;
        let (ax, name) = match axis {
            AxisKind::Steps => (SweepAxis::Steps(c.sweep.steps.clone()), "steps"),
            AxisKind::Data => (SweepAxis::DataFraction(c.sweep.fractions.clone()), "data"),
        };
        let res = sweep(&ax, &base, &ds, &c.finetune, &prompts, &c.eval, &c.datagen, &c.sim, derive_seed(c.seed, "eval"))?;
        let dir = self.stage_dir(&format!("sweep/{}-{}", name, self.set_name()))?;
        let csv = res.to_csv()?;
        write_atomic(&dir.join("sweep.csv"), csv.as_bytes())?;
        print!("{csv}");
        Ok(res)
    }

    pub fn perturb(&self, ckpts: &[PathBuf]) -> Result<()> {
        let c = &self.cfg;
        let prompts = self.eval_prompts()?;
        let paths = if ckpts.is_empty() { self.default_eval_ckpts()? } else { ckpts.to_vec() };
        let dir = self.stage_dir("perturb")?;
        let mut tables = Vec::new();
        for p in &paths {
            let name = Self::ckpt_name(p);
            let ck = Self::load_ckpt(p)?;
            let rolls = rollout(
                &ck.model,
                ck.adapter.as_ref(),
                &prompts,
                c.eval.samples_per_prompt,
                &c.eval.sampler,
                derive_seed(derive_seed(c.seed, "eval"), "eval-sample"),
            )?;
            let shapes = decoded_shapes(&label(&rolls, &c.datagen, &c.sim), &c.datagen);
            let rows = perturbation_eval(
                &shapes,
                &c.analysis.perturbation_thetas,
                c.analysis.perturbation_runs,
                derive_seed(c.seed, "perturb"),
                &c.sim,
            )?;
            write_atomic(&dir.join(format!("{name}.csv")), perturbation_csv(&rows)?.as_bytes())?;
            tables.push((name, rows));
        }
        let refs: Vec<(String, &[crate::evalkit::PerturbationRow])> = tables.iter().map(|(n, r)| (n.clone(), &r[..])).collect();
        let md = perturbation_table(&refs);
        write_atomic(&dir.join("table.md"), md.as_bytes())?;
        print!("{md}");
        Ok(())
    }

    pub fn flatcut(&self, ckpts: &[PathBuf]) -> Result<()> {
        let c = &self.cfg;
        let prompts = self.eval_prompts()?;
        let base = Self::load_ckpt(&self.base_path())?;
        let eval_seed = derive_seed(c.seed, "eval");
        let rolls = rollout(
            &base.model,
            base.adapter.as_ref(),
            &prompts,
            c.eval.samples_per_prompt,
            &c.eval.sampler,
            derive_seed(eval_seed, "eval-sample"),
        )?;
        let labeled = label(&rolls, &c.datagen, &c.sim);
        let base_rep = self.eval_checkpoint(&base, &prompts)?;
        let rows = flat_cut_baseline_eval(&prompts, &labeled, &c.analysis.flat_cut_heights, &c.eval, &c.datagen, &c.sim, eval_seed)?;
        let mut others = Vec::new();
        for p in ckpts {
            let ck = Self::load_ckpt(p)?;
            others.push((Self::ckpt_name(p), self.eval_checkpoint(&ck, &prompts)?));
        }
        let dir = self.stage_dir("flatcut")?;
        let mut table: Vec<(String, &EvalReport)> = vec![("base".into(), &base_rep)];
        for r in &rows {
            table.push((format!("flat cut z={}", r.z), &r.report));
        }
        for (n, r) in &others {
            table.push((n.clone(), r));
        }
        let md = comparison_table(&table);
        let summary: Vec<(f64, usize, Option<f64>, Option<f64>)> = rows
            .iter()
            .map(|r| (r.z, r.n_cut_failures, r.report.pct_stable, r.report.mean_cd))
            .collect();
        write_json(&dir.join("flatcut.json"), &summary)?;
        write_atomic(&dir.join("table.md"), md.as_bytes())?;
        print!("{md}");
        Ok(())
    }

    pub fn curves(&self) -> Result<()> {
        let a = &self.cfg.analysis;
        let beta = a.curve_beta;
        let rows = loss_curves(beta, &a.curve_margins)?;
        let dir = self.stage_dir("curves")?;
        write_atomic(&dir.join("loss_curves.csv"), loss_curves_csv(&rows)?.as_bytes())?;
        println!("curves: {} margins at beta {beta} -> {}", rows.len(), dir.display());
        Ok(())
    }

    pub fn verify_derivations(&self) -> Result<()> {
        let rep = verify_derivation_identities(100, derive_seed(self.cfg.seed, "verify"));
        let dir = self.stage_dir("verify")?;
        write_json(&dir.join("report.json"), &rep)?;
        println!(
            "verify-derivations: {} trials, max discrepancy kl {:e} bt {:e} ln2 {:e}: {}",
            rep.trials,
            rep.kl_max_discrepancy,
            rep.bt_max_discrepancy,
            rep.ln2_discrepancy,
            if rep.passed { "pass" } else { "FAIL" }
        );
        if rep.passed {
            Ok(())
        } else {
            Err(Error::Numeric("derivation identities exceed tolerance".into()))
        }
    }
}
