use crate::autodiff::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};

use super::model::{Group, PhyMdanModel};

/// Labeled inputs `[B, 3, l]` of one source domain.
#[derive(Debug, Clone)]
pub struct SourceBatch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

/// One minibatch per source domain plus an unlabeled target minibatch.
#[derive(Debug, Clone)]
pub struct Batches {
    pub sources: Vec<SourceBatch>,
    pub target: Option<Tensor>,
}

/// Value, per-domain terms and parameter gradients of the objective.
#[derive(Debug, Clone)]
pub struct Objective {
    /// `Σ w_i L_M^i + λ Σ w_i L_D^i`
    pub value: f64,
    pub predictor_losses: Vec<f64>,
    pub discriminator_losses: Vec<f64>,
    /// Correct discriminator decisions on this batch, per domain.
    pub discriminator_correct: Vec<usize>,
    pub discriminator_total: Vec<usize>,
    pub grads: Gradients,
}

/// Mean cross-entropy of the predictor on a labeled batch.
pub fn predictor_loss(model: &PhyMdanModel, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(inputs.clone());
    let f = model.features(&mut g, x)?;
    let loss = predictor_term(model, &mut g, f, labels)?;
    Ok(g.value(loss).data()[0])
}

/// Cross-entropy of discriminator `i` separating `source` (label 1) from
/// `target` (label 0), evaluated through a reversal layer with `lambda`.
/// The value does not depend on `lambda`.
pub fn discriminator_loss(
    model: &PhyMdanModel,
    source: &Tensor,
    target: &Tensor,
    i: usize,
    lambda: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let xs = g.input(source.clone());
    let xt = g.input(target.clone());
    let fs = model.features(&mut g, xs)?;
    let ft = model.features(&mut g, xt)?;
    let (loss, _) = discriminator_term(model, &mut g, fs, ft, i, Some(lambda))?;
    Ok(g.value(loss).data()[0])
}

/// Predictor loss node for extracted features.
pub fn predictor_term(
    model: &PhyMdanModel,
    g: &mut Graph,
    features: Var,
    labels: &[usize],
) -> Result<Var> {
    let k = model.num_classes;
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::arg(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let z = model.predictor_logits(g, features)?;
    g.softmax_cross_entropy(z, labels)
}

/// Discriminator loss node on source and target features; `reverse =
/// None` skips the reversal layer. Also returns the number of correct
/// domain decisions.
pub fn discriminator_term(
    model: &PhyMdanModel,
    g: &mut Graph,
    source_features: Var,
    target_features: Var,
    i: usize,
    reverse: Option<f64>,
) -> Result<(Var, usize)> {
    let ns = g.value(source_features).shape()[0];
    let nt = g.value(target_features).shape()[0];
    let both = g.concat_rows(&[source_features, target_features])?;
    let h = match reverse {
        Some(lambda) => g.grad_reverse(both, lambda)?,
        None => both,
    };
    let z = model.discriminator_logits(g, h, i)?;
    let labels: Vec<usize> = (0..ns + nt).map(|r| usize::from(r < ns)).collect();
    let correct = g
        .value(z)
        .data()
        .chunks(2)
        .zip(&labels)
        .filter(|(row, &y)| usize::from(row[1] > row[0]) == y)
        .count();
    Ok((g.softmax_cross_entropy(z, &labels)?, correct))
}

/// Weighted adversarial objective and its gradients.
///
/// The extractor receives `Σ w_i ∇L_M^i - λ Σ w_i ∇L_D^i` through the
/// reversal layers, the predictor only its own terms, and discriminator
/// `i` receives `λ w_i ∇L_D^i`. Discriminator terms are skipped when the
/// model has no discriminators or there is no target batch.
pub fn total_objective(
    model: &PhyMdanModel,
    batches: &Batches,
    weights: &[f64],
    lambda: f64,
) -> Result<Objective> {
    let n = batches.sources.len();
    if weights.len() != n {
        return Err(Error::dim(format!(
            "{} weights for {n} source batches",
            weights.len()
        )));
    }
    if n == 0 {
        return Err(Error::arg("no source batches"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::arg(format!("lambda must be >= 0, got {lambda}")));
    }
    let adversarial = model.num_domains > 0 && batches.target.is_some();
    if adversarial && model.num_domains != n {
        return Err(Error::dim(format!(
            "model has {} discriminators but {n} source batches",
            model.num_domains
        )));
    }
    let mut g = Graph::new();
    let target_features = match (&batches.target, adversarial) {
        (Some(t), true) => {
            let xt = g.input(t.clone());
            Some(model.features(&mut g, xt)?)
        }
        _ => None,
    };
    let mut terms = Vec::new();
    let mut predictor_losses = Vec::with_capacity(n);
    let mut discriminator_losses = Vec::new();
    let mut discriminator_correct = Vec::new();
    let mut discriminator_total = Vec::new();
    let mut value = 0.0;
    for (i, (batch, &w)) in batches.sources.iter().zip(weights).enumerate() {
        let x = g.input(batch.inputs.clone());
        let f = model.features(&mut g, x)?;
        let lm = predictor_term(model, &mut g, f, &batch.labels)?;
        let lm_val = g.value(lm).data()[0];
        predictor_losses.push(lm_val);
        value += w * lm_val;
        terms.push(g.scale(lm, w));
        if let Some(ft) = target_features {
            let (ld, correct) = discriminator_term(model, &mut g, f, ft, i, Some(lambda))?;
            let ld_val = g.value(ld).data()[0];
            discriminator_losses.push(ld_val);
            discriminator_correct.push(correct);
            discriminator_total.push(batch.labels.len() + g.value(ft).shape()[0]);
            value += lambda * w * ld_val;
            terms.push(g.scale(ld, w));
        }
    }
    let loss = g.add_all(&terms)?.expect("at least one term");
    let adj = g.backward(loss)?;
    let mut grads = g.param_grads(&adj, &model.store);
    for id in model.store.ids() {
        if let Group::Discriminator(_) = model.group_of(id) {
            grads.scale_param(id, lambda);
        }
    }
    Ok(Objective {
        value,
        predictor_losses,
        discriminator_losses,
        discriminator_correct,
        discriminator_total,
        grads,
    })
}
