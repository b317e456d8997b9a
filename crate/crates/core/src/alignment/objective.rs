use crate::error::{Error, Result};
use crate::numerics::{
    cosine, cosine_matrix, cosine_self, log_sum_exp, softmax, sum, EmbeddingMatrix, Matrix,
    ProbVector,
};
use crate::sample::Sample;
use crate::transport::{
    sinkhorn, solve_assignment_from_graphs, wd_cost, PlanDiagnostics, SinkhornConfig, TransportPlan,
};

use super::bank::{ClassDescriptors, ComposedPrompts, ContextBank};
use super::{AlignmentMode, DistillMode, LossBreakdown, ObjectiveConfig};

/// The `M` unit prompts of class `k`.
pub fn class_prompts(bank: &ContextBank, k: usize) -> Result<EmbeddingMatrix> {
    bank.class_prompts(k)
}

/// Prompts of every class plus their intra-domain graphs.
pub(crate) struct PromptSet {
    pub classes: Vec<ComposedPrompts>,
    pub graphs: Vec<Matrix>,
}

impl PromptSet {
    pub fn new(bank: &ContextBank) -> Result<Self> {
        let classes = (0..bank.class_count())
            .map(|k| bank.composed(k))
            .collect::<Result<Vec<_>>>()?;
        let graphs = classes
            .iter()
            .map(|c| cosine_self(&c.prompts))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { classes, graphs })
    }

    pub fn prompts(&self, k: usize) -> &EmbeddingMatrix {
        &self.classes[k].prompts
    }
}

/// Transport plans frozen at one parameter value: one per (sample, class)
/// for the image branch and, under WD distillation, one per class.
#[derive(Debug, Clone)]
pub struct PlanSet {
    pub image: Vec<Vec<TransportPlan>>,
    pub distill: Option<Vec<TransportPlan>>,
}

fn check_descriptors<'a>(
    descriptors: Option<&'a ClassDescriptors>,
    bank: &ContextBank,
) -> Result<&'a ClassDescriptors> {
    let d = descriptors.ok_or_else(|| Error::MissingDescriptors("<all>".into()))?;
    d.check_against(bank)?;
    Ok(d)
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidTemperature(tau));
    }
    Ok(())
}

/// Mean over classes of the mean pairwise cosine distance between the
/// class's prompts and its descriptors. Lies in `[0, 2]`.
pub fn distill_loss_cosine(bank: &ContextBank, descriptors: &ClassDescriptors) -> Result<f64> {
    descriptors.check_against(bank)?;
    let prompts = PromptSet::new(bank)?;
    cosine_distill_value(&prompts, descriptors)
}

pub(crate) fn cosine_distill_value(
    prompts: &PromptSet,
    descriptors: &ClassDescriptors,
) -> Result<f64> {
    let per_class = prompts
        .classes
        .iter()
        .zip(descriptors.iter())
        .map(|(c, h)| {
            let sim = cosine_matrix(&c.prompts, h)?;
            let pairs = (sim.rows() * sim.cols()) as f64;
            Ok(sum(&sim.map(|s| 1.0 - s).row_sums()) / pairs)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sum(&per_class) / per_class.len() as f64)
}

/// Mean over classes of the entropic transport cost between the class's
/// prompts and its descriptors under the node cost.
pub fn distill_loss_wd(
    bank: &ContextBank,
    descriptors: &ClassDescriptors,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    descriptors.check_against(bank)?;
    let prompts = PromptSet::new(bank)?;
    let plans = distill_plans(&prompts, descriptors, cfg)?;
    wd_distill_value(&prompts, descriptors, &plans)
}

fn distill_plans(
    prompts: &PromptSet,
    descriptors: &ClassDescriptors,
    cfg: &SinkhornConfig,
) -> Result<Vec<TransportPlan>> {
    prompts
        .classes
        .iter()
        .zip(descriptors.iter())
        .map(|(c, h)| {
            let cost = wd_cost(&c.prompts, h)?;
            sinkhorn(
                &cost,
                &ProbVector::uniform(cost.rows())?,
                &ProbVector::uniform(cost.cols())?,
                cfg,
            )
        })
        .collect()
}

pub(crate) fn wd_distill_value(
    prompts: &PromptSet,
    descriptors: &ClassDescriptors,
    plans: &[TransportPlan],
) -> Result<f64> {
    let per_class = prompts
        .classes
        .iter()
        .zip(descriptors.iter())
        .zip(plans)
        .map(|((c, h), plan)| plan.cost(&wd_cost(&c.prompts, h)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(sum(&per_class) / per_class.len() as f64)
}

/// Mean descriptor of each class, not normalized.
pub(crate) fn descriptor_centroids(descriptors: &ClassDescriptors) -> Vec<Vec<f64>> {
    descriptors
        .iter()
        .map(|h| {
            let col = h.matrix().col_sums();
            col.iter().map(|x| x / h.rows() as f64).collect()
        })
        .collect()
}

/// Instance-wise soft-label distillation: the teacher classifies each
/// sample's global feature against descriptor centroids, the student is
/// [`global_predict`] with context. Returns the batch-mean cross-entropy.
pub fn distill_loss_ce(
    batch: &[Sample],
    bank: &ContextBank,
    descriptors: &ClassDescriptors,
    tau: f64,
) -> Result<f64> {
    check_temperature(tau)?;
    descriptors.check_against(bank)?;
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let prompts = PromptSet::new(bank)?;
    let centroids = descriptor_centroids(descriptors);
    let mut total = 0.0;
    for s in batch {
        total += ce_distill_sample(s, &prompts, &centroids, tau)?.loss;
    }
    Ok(total / batch.len() as f64)
}

pub(crate) struct CeTerms {
    pub loss: f64,
    pub teacher: Vec<f64>,
    pub student: Vec<f64>,
    /// `cos(z, mean_m w_km)` per class.
    pub cosines: Vec<f64>,
    /// `mean_m w_km` per class.
    pub means: Vec<Vec<f64>>,
}

pub(crate) fn ce_distill_sample(
    sample: &Sample,
    prompts: &PromptSet,
    centroids: &[Vec<f64>],
    tau: f64,
) -> Result<CeTerms> {
    let teacher_logits = centroids
        .iter()
        .map(|c| cosine(&sample.global, c))
        .collect::<Result<Vec<_>>>()?;
    let teacher = softmax(&teacher_logits, tau)?.into_vec();
    let means: Vec<Vec<f64>> = prompts
        .classes
        .iter()
        .map(|c| prompt_mean(&c.prompts))
        .collect();
    let cosines = means
        .iter()
        .map(|m| cosine(&sample.global, m))
        .collect::<Result<Vec<_>>>()?;
    let logits: Vec<f64> = cosines.iter().map(|c| c / tau).collect();
    let lse = log_sum_exp(&logits);
    let student: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    let loss = teacher
        .iter()
        .zip(&logits)
        .fold(0.0, |acc, (t, l)| acc + t * (lse - l));
    Ok(CeTerms {
        loss,
        teacher,
        student,
        cosines,
        means,
    })
}

fn prompt_mean(prompts: &EmbeddingMatrix) -> Vec<f64> {
    prompts
        .matrix()
        .col_sums()
        .into_iter()
        .map(|x| x / prompts.rows() as f64)
        .collect()
}

/// Cross-attention plan: row `i` is `softmax_j(cos(z_i, w_j) / tau) / N`.
/// Only the row marginal is fixed; the column marginal is whatever results.
pub fn attention_plan(z: &EmbeddingMatrix, w: &EmbeddingMatrix, tau: f64) -> Result<TransportPlan> {
    attention_plan_from_similarity(&cosine_matrix(z, w)?, tau)
}

pub(crate) fn attention_plan_from_similarity(
    similarity: &Matrix,
    tau: f64,
) -> Result<TransportPlan> {
    check_temperature(tau)?;
    let (n, m) = similarity.shape();
    let mut plan = Matrix::zeros(n, m);
    for i in 0..n {
        let row = softmax(similarity.row(i), tau)?;
        for (t, w) in plan.row_mut(i).iter_mut().zip(row.as_slice()) {
            *t = w / n as f64;
        }
    }
    let p = ProbVector::uniform(n)?;
    let col_sums = plan.col_sums();
    let col_total = sum(&col_sums);
    let q = ProbVector::new(col_sums.into_iter().map(|c| c / col_total).collect())?;
    let row_residual = plan
        .row_sums()
        .iter()
        .fold(0.0f64, |acc, r| acc.max((r - 1.0 / n as f64).abs()));
    let diagnostics = PlanDiagnostics {
        inner_iterations: 0,
        outer_iterations: 0,
        row_residual,
        col_residual: 0.0,
        converged: true,
        outer_converged: true,
        columns_constrained: false,
    };
    Ok(TransportPlan::from_parts(plan, p, q, diagnostics))
}

/// Plan between a sample's tokens and class `k`'s prompts under `cfg.align`.
pub(crate) fn class_plan(
    similarity: &Matrix,
    token_graph: &Matrix,
    prompt_graph: &Matrix,
    cfg: &ObjectiveConfig,
) -> Result<TransportPlan> {
    match cfg.align {
        AlignmentMode::Attention => attention_plan_from_similarity(similarity, cfg.attention_tau),
        mode => {
            let solver = cfg
                .sinkhorn
                .with_alpha(mode.effective_alpha(cfg.sinkhorn.alpha));
            solve_assignment_from_graphs(similarity, token_graph, prompt_graph, &solver)
        }
    }
}

/// Per-sample quantities shared by the loss and its gradient.
pub(crate) struct TokenView {
    pub tokens: EmbeddingMatrix,
    /// `cos(z_i, w_kj)` for each class.
    pub similarity: Vec<Matrix>,
}

impl TokenView {
    pub fn new(tokens: &EmbeddingMatrix, prompts: &PromptSet) -> Result<Self> {
        let tokens = tokens.normalized()?;
        let similarity = prompts
            .classes
            .iter()
            .map(|c| cosine_matrix(&tokens, &c.prompts))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tokens, similarity })
    }

    pub fn plans(&self, prompts: &PromptSet, cfg: &ObjectiveConfig) -> Result<Vec<TransportPlan>> {
        let token_graph = match cfg.align {
            AlignmentMode::Attention => Matrix::zeros(0, 0),
            _ => cosine_self(&self.tokens)?,
        };
        self.similarity
            .iter()
            .zip(&prompts.graphs)
            .map(|(sim, graph)| class_plan(sim, &token_graph, graph, cfg))
            .collect()
    }

    /// Plan-weighted similarity `<T_k, cos(Z, W_k)>` per class, before the temperature.
    pub fn scores(&self, plans: &[TransportPlan]) -> Result<Vec<f64>> {
        if plans.len() != self.similarity.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} plans for {} classes",
                plans.len(),
                self.similarity.len()
            )));
        }
        self.similarity
            .iter()
            .zip(plans)
            .map(|(sim, plan)| plan.cost(sim))
            .collect()
    }
}

/// Class probabilities from transport-weighted prompt/token similarities.
pub fn ot_predict(
    tokens: &EmbeddingMatrix,
    bank: &ContextBank,
    cfg: &ObjectiveConfig,
) -> Result<ProbVector> {
    check_temperature(cfg.tau)?;
    let prompts = PromptSet::new(bank)?;
    predict_with(tokens, &prompts, cfg)
}

pub(crate) fn predict_with(
    tokens: &EmbeddingMatrix,
    prompts: &PromptSet,
    cfg: &ObjectiveConfig,
) -> Result<ProbVector> {
    if tokens.dim() != prompts.prompts(0).dim() {
        return Err(Error::ShapeMismatch(format!(
            "token dim {} vs prompt dim {}",
            tokens.dim(),
            prompts.prompts(0).dim()
        )));
    }
    let view = TokenView::new(tokens, prompts)?;
    let plans = view.plans(prompts, cfg)?;
    softmax(&view.scores(&plans)?, cfg.tau)
}

/// Zero-shot (`use_context = false`, anchors only) or context-prompt
/// (`use_context = true`, mean of the class's prompts) prediction from a
/// single global feature.
pub fn global_predict(
    z: &[f64],
    bank: &ContextBank,
    tau: f64,
    use_context: bool,
) -> Result<ProbVector> {
    check_temperature(tau)?;
    let logits = (0..bank.class_count())
        .map(|k| {
            if use_context {
                cosine(z, &prompt_mean(&bank.class_prompts(k)?))
            } else {
                cosine(z, bank.anchors().row(k))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    softmax(&logits, tau)
}

fn check_labels(batch: &[Sample], classes: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    match batch.iter().find(|s| s.label >= classes) {
        Some(s) => Err(Error::InvalidLabel {
            label: s.label,
            classes,
        }),
        None => Ok(()),
    }
}

/// Batch-mean negative log-likelihood of the labels under [`ot_predict`].
pub fn image_loss(batch: &[Sample], bank: &ContextBank, cfg: &ObjectiveConfig) -> Result<f64> {
    check_temperature(cfg.tau)?;
    check_labels(batch, bank.class_count())?;
    let prompts = PromptSet::new(bank)?;
    let mut total = 0.0;
    for s in batch {
        let view = TokenView::new(&s.tokens, &prompts)?;
        let plans = view.plans(&prompts, cfg)?;
        total += nll(&view.scores(&plans)?, s.label, cfg.tau);
    }
    Ok(total / batch.len() as f64)
}

/// `-ln softmax(scores / tau)[label]`.
pub(crate) fn nll(scores: &[f64], label: usize, tau: f64) -> f64 {
    let logits: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    log_sum_exp(&logits) - logits[label]
}

/// Solves every plan the objective needs at the bank's current parameters.
pub fn compute_plans(
    batch: &[Sample],
    bank: &ContextBank,
    descriptors: Option<&ClassDescriptors>,
    cfg: &ObjectiveConfig,
) -> Result<PlanSet> {
    cfg.validate()?;
    let prompts = PromptSet::new(bank)?;
    compute_plans_with(batch, &prompts, bank, descriptors, cfg)
}

pub(crate) fn compute_plans_with(
    batch: &[Sample],
    prompts: &PromptSet,
    bank: &ContextBank,
    descriptors: Option<&ClassDescriptors>,
    cfg: &ObjectiveConfig,
) -> Result<PlanSet> {
    let image = batch
        .iter()
        .map(|s| TokenView::new(&s.tokens, prompts)?.plans(prompts, cfg))
        .collect::<Result<Vec<_>>>()?;
    let distill = match cfg.distill {
        DistillMode::Wd => {
            let d = check_descriptors(descriptors, bank)?;
            Some(distill_plans(prompts, d, &cfg.sinkhorn)?)
        }
        _ => None,
    };
    Ok(PlanSet { image, distill })
}

/// Combined loss at the bank's current parameters.
pub fn total_loss(
    batch: &[Sample],
    bank: &ContextBank,
    descriptors: Option<&ClassDescriptors>,
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    let plans = compute_plans(batch, bank, descriptors, cfg)?;
    total_loss_with_plans(batch, bank, descriptors, cfg, &plans)
}

/// Combined loss with the given plans held fixed.
pub fn total_loss_with_plans(
    batch: &[Sample],
    bank: &ContextBank,
    descriptors: Option<&ClassDescriptors>,
    cfg: &ObjectiveConfig,
    plans: &PlanSet,
) -> Result<LossBreakdown> {
    Ok(super::gradient::evaluate(batch, bank, descriptors, cfg, plans, false)?.0)
}

pub(crate) fn validate_inputs(
    batch: &[Sample],
    bank: &ContextBank,
    descriptors: Option<&ClassDescriptors>,
    cfg: &ObjectiveConfig,
) -> Result<()> {
    cfg.validate()?;
    check_labels(batch, bank.class_count())?;
    if let Some(s) = batch.iter().find(|s| s.dim() != bank.dim()) {
        return Err(Error::ShapeMismatch(format!(
            "sample dim {} vs bank dim {}",
            s.dim(),
            bank.dim()
        )));
    }
    if cfg.distill.needs_descriptors() {
        check_descriptors(descriptors, bank)?;
    }
    Ok(())
}

pub(crate) fn distill_value(
    batch: &[Sample],
    prompts: &PromptSet,
    descriptors: Option<&ClassDescriptors>,
    cfg: &ObjectiveConfig,
    plans: &PlanSet,
) -> Result<f64> {
    let Some(d) = descriptors.filter(|_| cfg.distill.needs_descriptors()) else {
        return Ok(0.0);
    };
    match cfg.distill {
        DistillMode::Cosine => cosine_distill_value(prompts, d),
        DistillMode::Wd => {
            let plans = plans
                .distill
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("missing distillation plans".into()))?;
            wd_distill_value(prompts, d, plans)
        }
        DistillMode::Ce => {
            let centroids = descriptor_centroids(d);
            let mut total = 0.0;
            for s in batch {
                total += ce_distill_sample(s, prompts, &centroids, cfg.tau)?.loss;
            }
            Ok(total / batch.len() as f64)
        }
        DistillMode::None => Ok(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank_from(context: &[&[f64]], anchors: &[&[f64]]) -> ContextBank {
        ContextBank::new(
            Matrix::from_rows(context).unwrap(),
            Matrix::from_rows(anchors).unwrap(),
        )
        .unwrap()
    }

    fn descriptors(blocks: &[&[&[f64]]]) -> ClassDescriptors {
        ClassDescriptors::new(
            blocks
                .iter()
                .map(|b| EmbeddingMatrix::from_rows(b).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cosine_distill_fixtures() {
        // One prompt (1,0) against descriptors (1,0) and (0,1).
        let b = bank_from(&[&[0.0, 0.0]], &[&[1.0, 0.0]]);
        let d = descriptors(&[&[&[1.0, 0.0], &[0.0, 1.0]]]);
        assert!((distill_loss_cosine(&b, &d).unwrap() - 0.5).abs() < 1e-12);

        // Prompts coincide with every descriptor.
        let b = bank_from(&[&[0.0, 0.0], &[0.0, 0.0]], &[&[0.0, 1.0]]);
        let d = descriptors(&[&[&[0.0, 1.0], &[0.0, 1.0]]]);
        assert!(distill_loss_cosine(&b, &d).unwrap().abs() < 1e-12);

        // Antipodal.
        let b = bank_from(&[&[0.0, 0.0]], &[&[0.0, 1.0]]);
        let d = descriptors(&[&[&[0.0, -1.0], &[0.0, -3.0]]]);
        assert!((distill_loss_cosine(&b, &d).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_distill_needs_matching_classes() {
        let b = bank_from(&[&[0.0, 0.0]], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let d = descriptors(&[&[&[1.0, 0.0]]]);
        assert!(matches!(
            distill_loss_cosine(&b, &d),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn wd_distill_is_zero_for_matched_prompts() {
        // Context rows cancel the anchor so the two prompts are e1 and e2.
        let b = bank_from(&[&[1.0, -1.0], &[-1.0, 1.0]], &[&[1.0, 1.0]]);
        let w = b.class_prompts(0).unwrap();
        let d = ClassDescriptors::new(vec![w.permute_rows(&[1, 0]).unwrap()]).unwrap();
        let cfg = SinkhornConfig {
            lambda: 0.01,
            ..Default::default()
        };
        let loss = distill_loss_wd(&b, &d, &cfg).unwrap();
        assert!((0.0..1e-3).contains(&loss), "loss {loss}");
        // The pairwise mean does not vanish for distinct descriptors.
        assert!(distill_loss_cosine(&b, &d).unwrap() > 0.4);
    }

    #[test]
    fn wd_distill_single_pair_is_cosine_distance() {
        let b = bank_from(&[&[0.2, 0.1]], &[&[1.0, 0.3]]);
        let d = descriptors(&[&[&[0.4, 1.0]]]);
        let wd = distill_loss_wd(&b, &d, &SinkhornConfig::default()).unwrap();
        let cos = distill_loss_cosine(&b, &d).unwrap();
        assert!((wd - cos).abs() < 1e-3);
    }

    #[test]
    fn attention_plan_fixtures() {
        let z = EmbeddingMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        let w = EmbeddingMatrix::from_rows(&[[0.0, 1.0], [0.0, -1.0]]).unwrap();
        let plan = attention_plan(&z, &w, 0.5).unwrap();
        for &x in plan.matrix().as_slice() {
            assert!((x - 1.0 / 6.0).abs() < 1e-15);
        }
        assert!(!plan.diagnostics().columns_constrained);

        // cos = (1, 0) in row 0 and (0, 1) in row 1; tau = 1.
        let z = EmbeddingMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let w = EmbeddingMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let plan = attention_plan(&z, &w, 1.0).unwrap();
        let e = std::f64::consts::E;
        let hi = e / (e + 1.0) / 2.0;
        let lo = 1.0 / (e + 1.0) / 2.0;
        let expected = Matrix::from_rows(&[[hi, lo], [lo, hi]]).unwrap();
        assert!(plan.matrix().max_abs_diff(&expected).unwrap() < 1e-15);
        for r in plan.matrix().row_sums() {
            assert!((r - 0.5).abs() < 1e-15);
        }
        assert!(matches!(
            attention_plan(&z, &w, 0.0),
            Err(Error::InvalidTemperature(_))
        ));
    }

    #[test]
    fn ot_predict_single_cell_matches_scalar_softmax() {
        // K=2, N=M=1: the plan is forced to [[1]], so the logits are the
        // cosines 0.9 and 0.1.
        let s = (1.0f64 - 0.81).sqrt();
        let t = (1.0f64 - 0.01).sqrt();
        let b = bank_from(&[&[0.0, 0.0]], &[&[0.9, s], &[0.1, t]]);
        let z = EmbeddingMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let cfg = ObjectiveConfig {
            tau: 1.0,
            ..Default::default()
        };
        for align in AlignmentMode::ALL {
            let p = ot_predict(&z, &b, &ObjectiveConfig { align, ..cfg }).unwrap();
            assert!((p.as_slice()[0] - 0.6900).abs() < 1e-4, "{align}");
            assert!((p.as_slice()[1] - 0.3100).abs() < 1e-4, "{align}");
        }
    }

    #[test]
    fn ot_predict_is_uniform_for_identical_classes() {
        let b = bank_from(
            &[&[0.1, 0.0, 0.2], &[0.0, -0.3, 0.1]],
            &[&[1.0, 0.5, 0.0], &[1.0, 0.5, 0.0], &[1.0, 0.5, 0.0]],
        );
        let z = EmbeddingMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.2, 0.9, 0.1], [0.0, 0.0, 1.0]])
            .unwrap();
        let p = ot_predict(&z, &b, &ObjectiveConfig::default()).unwrap();
        assert_eq!(p.as_slice(), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn global_predict_fixtures() {
        let b = bank_from(&[&[0.0, 0.0]], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let p = global_predict(&[1.0, 0.0], &b, 1.0, false).unwrap();
        assert_eq!(p.argmax(), 0);
        // logits (1, 0) at tau = 1.
        let e = std::f64::consts::E;
        assert!((p.as_slice()[0] - e / (e + 1.0)).abs() < 1e-15);
        let q = global_predict(&[1.0, 0.0], &b, 1.0, true).unwrap();
        assert_eq!(p, q);
        assert!(global_predict(&[1.0, 0.0], &b, -1.0, true).is_err());
    }

    fn sample(tokens: &[&[f64]], label: usize) -> Sample {
        Sample::new(
            Matrix::from_rows(tokens).unwrap(),
            label,
            crate::sample::Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn image_loss_fixtures() {
        let s = (1.0f64 - 0.81).sqrt();
        let t = (1.0f64 - 0.01).sqrt();
        let b = bank_from(&[&[0.0, 0.0]], &[&[0.9, s], &[0.1, t]]);
        let batch = [sample(&[&[1.0, 0.0]], 0)];
        let cfg = ObjectiveConfig {
            tau: 1.0,
            ..Default::default()
        };
        let expected = -(0.9f64.exp() / (0.9f64.exp() + 0.1f64.exp())).ln();
        assert!((image_loss(&batch, &b, &cfg).unwrap() - expected).abs() < 1e-12);

        // Identical classes: ln K.
        let b = bank_from(&[&[0.0, 0.0]], &[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        let loss = image_loss(&batch, &b, &cfg).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);

        // Confident and correct.
        let b = bank_from(&[&[0.0, 0.0]], &[&[1.0, 0.0], &[-1.0, 0.0]]);
        let cfg = ObjectiveConfig {
            tau: 0.01,
            ..Default::default()
        };
        assert!(image_loss(&batch, &b, &cfg).unwrap() < 1e-12);

        let bad = [sample(&[&[1.0, 0.0]], 2)];
        assert!(matches!(
            image_loss(&bad, &b, &cfg),
            Err(Error::InvalidLabel {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn ce_distill_fixtures() {
        // Two classes; global feature (1,0); anchors (1,0) and (0,1); one
        // descriptor per class equal to the anchor. Teacher and student
        // logits are both (1, 0) / tau.
        let b = bank_from(&[&[0.0, 0.0]], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let d = descriptors(&[&[&[1.0, 0.0]], &[&[0.0, 1.0]]]);
        let batch = [sample(&[&[1.0, 0.0]], 0)];
        let tau = 1.0;
        let e = std::f64::consts::E;
        let p = e / (e + 1.0);
        let entropy = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        let loss = distill_loss_ce(&batch, &b, &d, tau).unwrap();
        assert!((loss - entropy).abs() < 1e-12);

        // Teacher uniform (descriptors equidistant), student not.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let d = descriptors(&[&[&[s, s]], &[&[s, -s]]]);
        let loss = distill_loss_ce(&batch, &b, &d, tau).unwrap();
        // -0.5 ln p - 0.5 ln (1 - p)
        let expected = -0.5 * p.ln() - 0.5 * (1.0 - p).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!(loss > 2f64.ln());
        assert!(distill_loss_ce(&batch, &b, &d, 0.0).is_err());
    }
}
