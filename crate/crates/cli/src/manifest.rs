use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use eikplan_core::planner::{DEFAULT_BETA, DEFAULT_D_GOAL};
use eikplan_core::trainer::{Exhausted, LossKind, Schedule, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything a command needs to run; echoed next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    pub command: String,
    pub env_files: Vec<PathBuf>,
    pub dataset_paths: Vec<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub train: TrainConfig,
    pub hidden: usize,
    pub blocks: usize,
    pub checkpoint_every: usize,
    pub pairs: usize,
    pub beta: f64,
    pub d_goal: f64,
    pub resolution: Vec<usize>,
    pub sources: usize,
    /// Grid speeds use this α; `None` means the true speed (α = 1) or, for
    /// comparisons, the α the checkpoint was trained at.
    pub alpha: Option<f64>,
    pub start: Option<Vec<f64>>,
    pub goal: Option<Vec<f64>>,
    pub source: Option<Vec<f64>>,
    pub fmm: bool,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            command: String::new(),
            env_files: Vec::new(),
            dataset_paths: Vec::new(),
            checkpoint_path: None,
            output_dir: None,
            seed: 0,
            train: TrainConfig::default(),
            hidden: 128,
            blocks: 5,
            checkpoint_every: 100,
            pairs: 1000,
            beta: DEFAULT_BETA,
            d_goal: DEFAULT_D_GOAL,
            resolution: vec![128],
            sources: 5,
            alpha: None,
            start: None,
            goal: None,
            source: None,
            fmm: false,
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct Flags {
    /// JSON file with defaults for every flag below; flags take precedence.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Environment file; repeat for several environments.
    #[arg(long)]
    pub env: Vec<PathBuf>,
    /// Pair dataset; repeat in the same order as --env.
    #[arg(long)]
    pub dataset: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Epoch cap.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub alpha_init: Option<f64>,
    #[arg(long)]
    pub alpha_final: Option<f64>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Guard retries per epoch.
    #[arg(long)]
    pub retries: Option<usize>,
    /// Keep the last attempt once the guard runs out of retries instead of failing.
    #[arg(long)]
    pub keep_going: bool,
    /// Largest Euclidean norm allowed for a batch gradient.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub dgoal: Option<f64>,
    /// Cells per axis: one value for every axis or a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    pub resolution: Option<Vec<usize>>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub sources: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub start: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub goal: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub source: Option<Vec<f64>>,
    /// Use the grid solver instead of (field-export) or next to (eval) the network.
    #[arg(long)]
    pub fmm: bool,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ScheduleArg {
    HoldThenRamp,
    RampFromStart,
    Constant,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum LossArg {
    Isotropic,
    L1,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Manifest file (if any) overridden by the given flags.
    pub fn resolve(command: &str, f: Flags) -> Result<Self> {
        let mut m = match &f.manifest {
            Some(p) => RunManifest::load(p)?,
            None => RunManifest::default(),
        };
        m.command = command.to_string();
        if !f.env.is_empty() {
            m.env_files = f.env;
        }
        if !f.dataset.is_empty() {
            m.dataset_paths = f.dataset;
        }
        if f.checkpoint.is_some() {
            m.checkpoint_path = f.checkpoint;
        }
        if f.out.is_some() {
            m.output_dir = f.out;
        }
        set(&mut m.seed, f.seed);
        m.train.seed = m.seed;
        if f.epochs.is_some() {
            m.train.max_epochs = f.epochs;
        }
        set(&mut m.train.alpha_init, f.alpha_init);
        set(&mut m.train.alpha_final, f.alpha_final);
        set(&mut m.train.warmup_epochs, f.warmup);
        set(&mut m.train.eta, f.eta);
        set(&mut m.train.retry_cap, f.retries);
        if f.clip.is_some() {
            m.train.clip_norm = f.clip;
        }
        if f.keep_going {
            m.train.on_exhausted = Exhausted::Accept;
        }
        set(&mut m.train.epsilon, f.epsilon);
        set(&mut m.train.learning_rate, f.lr);
        set(&mut m.train.weight_decay, f.wd);
        set(&mut m.train.batch_size, f.batch);
        if let Some(s) = f.schedule {
            m.train.schedule = match s {
                ScheduleArg::HoldThenRamp => Schedule::HoldThenRamp,
                ScheduleArg::RampFromStart => Schedule::RampFromStart,
                ScheduleArg::Constant => Schedule::Constant,
            };
        }
        if let Some(l) = f.loss {
            m.train.loss = match l {
                LossArg::Isotropic => LossKind::Isotropic,
                LossArg::L1 => LossKind::L1,
            };
        }
        set(&mut m.checkpoint_every, f.checkpoint_every);
        set(&mut m.pairs, f.pairs);
        set(&mut m.beta, f.beta);
        set(&mut m.d_goal, f.dgoal);
        set(&mut m.resolution, f.resolution);
        set(&mut m.hidden, f.hidden);
        set(&mut m.blocks, f.blocks);
        set(&mut m.sources, f.sources);
        if f.alpha.is_some() {
            m.alpha = f.alpha;
        }
        if f.start.is_some() {
            m.start = f.start;
        }
        if f.goal.is_some() {
            m.goal = f.goal;
        }
        if f.source.is_some() {
            m.source = f.source;
        }
        m.fmm |= f.fmm;
        Ok(m)
    }

    pub fn require_envs(&self, exactly_one: bool) -> Result<()> {
        if self.env_files.is_empty() {
            bail!(Usage("--env is required".into()));
        }
        if exactly_one && self.env_files.len() > 1 {
            bail!(Usage("this command takes a single --env".into()));
        }
        Ok(())
    }

    pub fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint_path
            .as_deref()
            .ok_or_else(|| Usage("--checkpoint is required".into()).into())
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| Usage("--out is required".into()).into())
    }

    /// Fails before any work if a referenced input file is missing.
    pub fn check_inputs(&self) -> Result<()> {
        let inputs = self
            .env_files
            .iter()
            .chain(&self.dataset_paths)
            .chain(self.checkpoint_path.iter());
        for p in inputs {
            if !p.is_file() {
                bail!(Usage(format!("no such file: {}", p.display())));
            }
        }
        Ok(())
    }

    /// Resolution expanded to `dims` axes.
    pub fn resolution_for(&self, dims: usize) -> Result<Vec<usize>> {
        match self.resolution.len() {
            1 => Ok(vec![self.resolution[0]; dims]),
            n if n == dims => Ok(self.resolution.clone()),
            n => bail!(Usage(format!("--resolution has {n} entries for a {dims}D environment"))),
        }
    }

    /// Creates the output directory and writes `manifest.json` into it.
    pub fn echo(&self) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.output_dir else {
            return Ok(None);
        };
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(Some(dir.clone()))
    }
}

/// Bad invocation; exits with status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}
