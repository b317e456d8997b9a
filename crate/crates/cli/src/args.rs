use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dualpt_core::alignment::{AlignmentMode, DistillMode, ObjectiveConfig};
use dualpt_core::harness::TrainConfig;
use dualpt_core::transport::SinkhornConfig;
use dualpt_core::Result;

#[derive(Parser)]
#[command(
    name = "dualpt",
    version,
    about = "Prompt learning with language-model descriptions and optimal-transport alignment",
    after_help = "Exit codes: 0 success, 2 usage or input error, 3 external service error, 4 numerical failure.\n\
                  The chat endpoint token is read from DUALPT_LLM_TOKEN."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Write the description query for every class in a list.
    GenQueries(GenQueriesArgs),
    /// Ask the chat endpoint for class descriptions and cache the phrases.
    Fetch(FetchArgs),
    /// Turn cached phrases into descriptor embeddings with the mock encoder.
    Embed(EmbedArgs),
    /// Generate the synthetic few-shot benchmark.
    Synth(SynthArgs),
    /// Learn the shared context on a training split.
    Train(TrainArgs),
    /// Score a trained model on a test split.
    Eval(EvalArgs),
    /// Train and score every cell of a configuration grid.
    Ablate(AblateArgs),
    /// Solve one transport problem and print the plan with diagnostics.
    SolveOt(SolveOtArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
pub struct GenQueriesArgs {
    /// Class list, one name per line.
    #[arg(long)]
    pub classes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FetchArgs {
    /// Class list, one name per line.
    #[arg(long)]
    pub classes: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    pub endpoint: String,
    #[arg(long, default_value = "gpt-3.5-turbo")]
    pub model: String,
    #[arg(long, default_value_t = 0.7)]
    pub temperature: f64,
    /// Requests in flight at once.
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout: u64,
    /// Do not retry a failed request.
    #[arg(long)]
    pub no_retry: bool,
    /// Serve canned answers without touching the network.
    #[arg(long)]
    pub mock: bool,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Seed of the hash encoder.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub num_classes: usize,
    #[arg(long, default_value_t = 4)]
    pub parts: usize,
    /// Local tokens per image.
    #[arg(long, default_value_t = 49)]
    pub tokens: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.7)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub descriptor_noise: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub shots: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 2)]
    pub background_parts: usize,
    #[arg(long, default_value_t = 1)]
    pub descriptors_per_part: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Transport and temperature settings shared by training commands.
#[derive(Args, Clone)]
pub struct SolverArgs {
    /// Class-logit temperature.
    #[arg(long, default_value_t = 0.01)]
    pub tau: f64,
    /// Temperature of the cross-attention plan.
    #[arg(long, default_value_t = 0.1)]
    pub attention_tau: f64,
    /// Entropic regularization.
    #[arg(long = "lambda", default_value_t = 0.1)]
    pub lambda: f64,
    /// Sinkhorn sweeps per solve.
    #[arg(long, default_value_t = 100)]
    pub inner_max: usize,
    /// Re-linearizations of the fused cost.
    #[arg(long, default_value_t = 10)]
    pub outer_max: usize,
    /// Accepted marginal violation.
    #[arg(long, default_value_t = 1e-6)]
    pub marginal_tol: f64,
    /// Stop re-linearizing once plans move less than this.
    #[arg(long, default_value_t = 1e-6)]
    pub plan_tol: f64,
}

impl SolverArgs {
    pub fn sinkhorn(&self, alpha: f64) -> SinkhornConfig {
        SinkhornConfig {
            lambda: self.lambda,
            inner_max: self.inner_max,
            outer_max: self.outer_max,
            marginal_tol: self.marginal_tol,
            plan_tol: self.plan_tol,
            alpha,
        }
    }
}

#[derive(Args, Clone)]
pub struct OptimArgs {
    /// Initial learning rate, cosine-annealed to zero.
    #[arg(long, default_value_t = 0.002)]
    pub lr: f64,
    /// Overrides the per-shot schedule 1:50, 2:100, 4:100, 8:200, 16:200.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Standard deviation of the context initialization.
    #[arg(long, default_value_t = 0.02)]
    pub init_std: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    All,
    Base,
    New,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training split (JSON lines).
    #[arg(long)]
    pub train: PathBuf,
    /// Embedding store with descriptors and anchors.
    #[arg(long)]
    pub store: PathBuf,
    /// Class list giving the names of dataset labels; defaults to the store's sorted names.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Train on all classes or one half of the base-to-new split.
    #[arg(long, value_enum, default_value_t = Subset::All)]
    pub subset: Subset,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Distillation loss: cosine, wd, ce or none.
    #[arg(long, default_value = "cosine")]
    pub distill: DistillMode,
    /// Token alignment: graph, node, edge or attention.
    #[arg(long, default_value = "graph")]
    pub align: AlignmentMode,
    /// Weight of the edge cost in graph alignment.
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    /// Weight of the distillation loss.
    #[arg(long, default_value_t = 0.2)]
    pub beta: f64,
    /// Context vectors per class.
    #[arg(long = "m", default_value_t = 4)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

impl TrainArgs {
    pub fn config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr0: self.optim.lr,
            epochs: self.optim.epochs,
            prompts: self.m,
            batch_size: self.optim.batch_size,
            init_std: self.optim.init_std,
            seed: self.seed,
            objective: ObjectiveConfig {
                beta: self.beta,
                tau: self.solver.tau,
                attention_tau: self.solver.attention_tau,
                distill: self.distill,
                align: self.align,
                sinkhorn: self.solver.sinkhorn(self.alpha),
            },
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalSubset {
    All,
    Base,
    New,
    BaseToNew,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Test split (JSON lines).
    #[arg(long)]
    pub test: PathBuf,
    /// Anchors for classes the model was not trained on.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Class list giving the names of dataset labels; defaults to the store's sorted names.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EvalSubset::All)]
    pub subset: EvalSubset,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Distillation losses to compare.
    #[arg(long, value_delimiter = ',', default_value = "cosine,wd,ce,none")]
    pub distill: Vec<DistillMode>,
    /// Alignment modes to compare.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "graph,node,edge,attention"
    )]
    pub align: Vec<AlignmentMode>,
    /// Edge-cost weights (graph alignment only).
    #[arg(long, value_delimiter = ',', default_value = "0.2")]
    pub alpha: Vec<f64>,
    /// Distillation weights.
    #[arg(long, value_delimiter = ',', default_value = "0.2")]
    pub beta: Vec<f64>,
    /// Context vector counts.
    #[arg(long = "m", value_delimiter = ',', default_value = "4")]
    pub m: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seed: Vec<u64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Args)]
pub struct SolveOtArgs {
    /// JSON with either `cost` (plus optional `p`, `q`) or embeddings `z` and `w`.
    #[arg(long)]
    pub input: PathBuf,
    /// Weight of the edge cost when embeddings are given.
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long = "lambda", default_value_t = 0.1)]
    pub lambda: f64,
    /// Sinkhorn sweeps per solve.
    #[arg(long, default_value_t = 100)]
    pub inner_max: usize,
    /// Re-linearizations of the fused cost.
    #[arg(long, default_value_t = 10)]
    pub outer_max: usize,
    /// Accepted marginal violation.
    #[arg(long, default_value_t = 1e-6)]
    pub marginal_tol: f64,
    /// Stop re-linearizing once plans move less than this.
    #[arg(long, default_value_t = 1e-6)]
    pub plan_tol: f64,
}

#[derive(Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}
