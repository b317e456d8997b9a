//! The dual-alignment objective.
//!
//! Prompts are pulled toward class descriptions produced by a language model
//! (the distillation branch) and matched against local image tokens through
//! optimal transport (the image branch). The two losses are mixed with a
//! weight `beta`:
//!
//! ```text
//! total = beta * l_llm + (1 - beta) * l_img
//! ```
//!
//! Transport plans are treated as constants when differentiating; see
//! [`loss_gradient`].

mod bank;
mod gradient;
mod objective;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::SinkhornConfig;

pub use bank::{ClassDescriptors, ContextBank};
pub use gradient::{loss_and_gradient, loss_gradient, loss_gradient_with_plans};
pub use objective::{
    attention_plan, class_prompts, compute_plans, distill_loss_ce, distill_loss_cosine,
    distill_loss_wd, global_predict, image_loss, ot_predict, total_loss, total_loss_with_plans,
    PlanSet,
};
pub(crate) use objective::{predict_with, PromptSet};

/// How prompts are matched to local tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMode {
    /// Fused node and edge costs with the configured `alpha`.
    Graph,
    /// Node cost only (`alpha = 0`).
    Node,
    /// Edge cost only (`alpha = 1`).
    Edge,
    /// Row-wise softmax cross-attention; no transport solve.
    #[serde(alias = "attn")]
    Attention,
}

impl AlignmentMode {
    pub const ALL: [AlignmentMode; 4] = [Self::Graph, Self::Node, Self::Edge, Self::Attention];

    /// The fused-cost weight this mode solves with, given the configured one.
    pub fn effective_alpha(self, configured: f64) -> f64 {
        match self {
            Self::Graph | Self::Attention => configured,
            Self::Node => 0.0,
            Self::Edge => 1.0,
        }
    }

    /// Whether the configured `alpha` has any effect in this mode.
    pub fn uses_alpha(self) -> bool {
        self == Self::Graph
    }
}

/// How prompts learn from the description embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistillMode {
    Cosine,
    Wd,
    Ce,
    None,
}

impl DistillMode {
    pub const ALL: [DistillMode; 4] = [Self::Cosine, Self::Wd, Self::Ce, Self::None];

    pub fn needs_descriptors(self) -> bool {
        self != Self::None
    }
}

macro_rules! impl_mode_text {
    ($ty:ty, $($variant:ident => $name:literal $(| $alias:literal)*),+) => {
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $(Self::$variant => $name),+ })
            }
        }

        impl std::str::FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name $(| $alias)* => Ok(Self::$variant),)+
                    other => Err(Error::InvalidConfig(format!(
                        "unknown {} '{other}'", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

impl_mode_text!(AlignmentMode,
    Graph => "graph", Node => "node", Edge => "edge", Attention => "attention" | "attn");
impl_mode_text!(DistillMode,
    Cosine => "cosine", Wd => "wd", Ce => "ce", None => "none");

/// Everything the objective needs besides data and parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Weight of the distillation loss.
    pub beta: f64,
    /// Softmax temperature for class logits.
    pub tau: f64,
    /// Softmax temperature of the cross-attention plan.
    pub attention_tau: f64,
    pub distill: DistillMode,
    pub align: AlignmentMode,
    pub sinkhorn: SinkhornConfig,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            tau: 0.01,
            attention_tau: 0.1,
            distill: DistillMode::Cosine,
            align: AlignmentMode::Graph,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidWeight(self.beta));
        }
        for t in [self.tau, self.attention_tau] {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::InvalidTemperature(t));
            }
        }
        self.sinkhorn.validate()
    }
}

/// Components of the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_llm: f64,
    pub l_img: f64,
    pub total: f64,
    pub beta: f64,
}

impl LossBreakdown {
    pub fn combine(l_llm: f64, l_img: f64, beta: f64) -> Self {
        Self {
            l_llm,
            l_img,
            total: beta * l_llm + (1.0 - beta) * l_img,
            beta,
        }
    }
}
