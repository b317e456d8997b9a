//! Analytic gradient of the combined loss with respect to the shared context.
//!
//! Transport plans are held fixed (stop-gradient through the solver), so the
//! gradient is exact for [`total_loss_with_plans`](super::total_loss_with_plans)
//! evaluated at the same plans.

use crate::error::{Error, Result};
use crate::numerics::{dot, log_sum_exp, Matrix};
use crate::sample::Sample;

use super::bank::{ClassDescriptors, ContextBank};
use super::objective::{
    ce_distill_sample, compute_plans_with, descriptor_centroids, distill_value, validate_inputs,
    PlanSet, PromptSet, TokenView,
};
use super::{DistillMode, LossBreakdown, ObjectiveConfig};

/// `d total / d context`, same shape as the context.
pub fn loss_gradient(
    batch: &[Sample],
    bank: &ContextBank,
    descriptors: Option<&ClassDescriptors>,
    cfg: &ObjectiveConfig,
) -> Result<Matrix> {
    Ok(loss_and_gradient(batch, bank, descriptors, cfg)?.1)
}

/// Loss and gradient from a single set of plan solves.
pub fn loss_and_gradient(
    batch: &[Sample],
    bank: &ContextBank,
    descriptors: Option<&ClassDescriptors>,
    cfg: &ObjectiveConfig,
) -> Result<(LossBreakdown, Matrix)> {
    validate_inputs(batch, bank, descriptors, cfg)?;
    let prompts = PromptSet::new(bank)?;
    let plans = compute_plans_with(batch, &prompts, bank, descriptors, cfg)?;
    let (loss, grad) = evaluate_with(batch, bank, &prompts, descriptors, cfg, &plans, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

/// Gradient with the given plans held fixed.
pub fn loss_gradient_with_plans(
    batch: &[Sample],
    bank: &ContextBank,
    descriptors: Option<&ClassDescriptors>,
    cfg: &ObjectiveConfig,
    plans: &PlanSet,
) -> Result<Matrix> {
    let (_, grad) = evaluate(batch, bank, descriptors, cfg, plans, true)?;
    Ok(grad.expect("gradient requested"))
}

pub(crate) fn evaluate(
    batch: &[Sample],
    bank: &ContextBank,
    descriptors: Option<&ClassDescriptors>,
    cfg: &ObjectiveConfig,
    plans: &PlanSet,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Matrix>)> {
    validate_inputs(batch, bank, descriptors, cfg)?;
    let prompts = PromptSet::new(bank)?;
    evaluate_with(batch, bank, &prompts, descriptors, cfg, plans, want_grad)
}

fn evaluate_with(
    batch: &[Sample],
    bank: &ContextBank,
    prompts: &PromptSet,
    descriptors: Option<&ClassDescriptors>,
    cfg: &ObjectiveConfig,
    plans: &PlanSet,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Matrix>)> {
    if plans.image.len() != batch.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} plan sets for {} samples",
            plans.image.len(),
            batch.len()
        )));
    }
    let classes = bank.class_count();
    let (m, d) = (bank.prompt_count(), bank.dim());
    let beta = cfg.beta;
    let batch_len = batch.len() as f64;
    // d loss / d w_km, accumulated per class before chaining through the
    // normalization of s_m + a_k.
    let mut d_prompts = vec![Matrix::zeros(m, d); if want_grad { classes } else { 0 }];

    let mut l_img = 0.0;
    for (sample, sample_plans) in batch.iter().zip(&plans.image) {
        let view = TokenView::new(&sample.tokens, prompts)?;
        let scores = view.scores(sample_plans)?;
        let logits: Vec<f64> = scores.iter().map(|s| s / cfg.tau).collect();
        let lse = log_sum_exp(&logits);
        l_img += lse - logits[sample.label];
        if !want_grad {
            continue;
        }
        for (k, plan) in sample_plans.iter().enumerate() {
            let target = if k == sample.label { 1.0 } else { 0.0 };
            let coef = (1.0 - beta) * ((logits[k] - lse).exp() - target) / (cfg.tau * batch_len);
            if coef == 0.0 {
                continue;
            }
            let t = plan.matrix();
            for (i, z) in view.tokens.row_iter().enumerate() {
                for j in 0..m {
                    let w = coef * t[(i, j)];
                    for (g, zc) in d_prompts[k].row_mut(j).iter_mut().zip(z) {
                        *g += w * zc;
                    }
                }
            }
        }
    }
    l_img /= batch_len;

    let l_llm = distill_value(batch, prompts, descriptors, cfg, plans)?;
    if want_grad && beta != 0.0 {
        if let Some(desc) = descriptors.filter(|_| cfg.distill.needs_descriptors()) {
            distill_gradient(batch, prompts, desc, cfg, plans, &mut d_prompts)?;
        }
    }

    let loss = LossBreakdown::combine(l_llm, l_img, beta);
    if !loss.total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    if !want_grad {
        return Ok((loss, None));
    }

    let mut grad = Matrix::zeros(m, d);
    for (k, dw) in d_prompts.iter().enumerate() {
        let composed = &prompts.classes[k];
        for j in 0..m {
            let w = composed.prompts.row(j);
            let g = dw.row(j);
            let radial = dot(g, w);
            let inv_norm = 1.0 / composed.norms[j];
            for ((out, gc), wc) in grad.row_mut(j).iter_mut().zip(g).zip(w) {
                *out += (gc - radial * wc) * inv_norm;
            }
        }
    }
    Ok((loss, Some(grad)))
}

fn distill_gradient(
    batch: &[Sample],
    prompts: &PromptSet,
    descriptors: &ClassDescriptors,
    cfg: &ObjectiveConfig,
    plans: &PlanSet,
    d_prompts: &mut [Matrix],
) -> Result<()> {
    let classes = prompts.classes.len() as f64;
    let beta = cfg.beta;
    match cfg.distill {
        DistillMode::Cosine => {
            for (k, h) in descriptors.iter().enumerate() {
                let m = prompts.prompts(k).rows();
                let coef = -beta / (classes * (m * h.rows()) as f64);
                let h_sum = h.matrix().col_sums();
                for j in 0..m {
                    for (g, hc) in d_prompts[k].row_mut(j).iter_mut().zip(&h_sum) {
                        *g += coef * hc;
                    }
                }
            }
        }
        DistillMode::Wd => {
            let distill_plans = plans
                .distill
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("missing distillation plans".into()))?;
            for (k, (h, plan)) in descriptors.iter().zip(distill_plans).enumerate() {
                let t = plan.matrix();
                for j in 0..t.rows() {
                    for (e, hrow) in h.row_iter().enumerate() {
                        let w = -beta * t[(j, e)] / classes;
                        for (g, hc) in d_prompts[k].row_mut(j).iter_mut().zip(hrow) {
                            *g += w * hc;
                        }
                    }
                }
            }
        }
        DistillMode::Ce => {
            let centroids = descriptor_centroids(descriptors);
            let batch_len = batch.len() as f64;
            for sample in batch {
                let terms = ce_distill_sample(sample, prompts, &centroids, cfg.tau)?;
                let z_norm = dot(&sample.global, &sample.global).sqrt();
                for (k, mean) in terms.means.iter().enumerate() {
                    let coef = beta * (terms.student[k] - terms.teacher[k]) / (cfg.tau * batch_len);
                    if coef == 0.0 {
                        continue;
                    }
                    // d cos(z, v) / d v = (z/|z| - cos * v/|v|) / |v|
                    let v_norm = dot(mean, mean).sqrt();
                    let c = terms.cosines[k];
                    let m = prompts.prompts(k).rows();
                    let direction: Vec<f64> = sample
                        .global
                        .iter()
                        .zip(mean)
                        .map(|(z, v)| (z / z_norm - c * v / v_norm) / v_norm)
                        .collect();
                    for j in 0..m {
                        for (g, dc) in d_prompts[k].row_mut(j).iter_mut().zip(&direction) {
                            *g += coef * dc / m as f64;
                        }
                    }
                }
            }
        }
        DistillMode::None => {}
    }
    Ok(())
}
