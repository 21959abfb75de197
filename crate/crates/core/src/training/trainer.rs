use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::evaluate::{evaluate, EvalOptions};
use super::losses::LossBreakdown;
use super::objective::batch_objective;
use crate::autodiff::{adam_step, GradBuffer};
use crate::data::{Catalog, DifficultyTable, StudentSequence};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::Cmkt;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub train: LossBreakdown,
    pub clamped_predictions: usize,
    pub validation: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The parameters with the best validation AUC seen (the initialization counts as epoch 0).
    pub model: Cmkt,
    pub best_epoch: usize,
    pub initial_validation: MetricsReport,
    pub epochs: Vec<EpochReport>,
    pub stopped_early: bool,
}

fn ordered<'a>(windows: &[&'a StudentSequence]) -> Vec<&'a StudentSequence> {
    let mut v = windows.to_vec();
    v.sort_by(|a, b| (&a.student_id, a.window).cmp(&(&b.student_id, b.window)));
    v
}

/// Trains with Adam on shuffled batches, keeping the parameters with the
/// best validation AUC. `on_epoch` sees every epoch report as it is made.
pub fn train(
    model: Cmkt,
    train_windows: &[&StudentSequence],
    validation_windows: &[&StudentSequence],
    diff: &DifficultyTable,
    concepts: &Catalog,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let train_windows = ordered(train_windows);
    let validation_windows = ordered(validation_windows);
    let eval_opts = EvalOptions::default();
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let initial_validation = evaluate(&model, &validation_windows, diff, concepts, cfg, eval_opts)?.report;
    let mut best_auc = initial_validation.auc;
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut model = model;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let mut order = train_windows.clone();
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut clamped = 0;
        let mut batches = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = GradBuffer::for_store(&model.params);
            let value = batch_objective(&model, batch, diff, cfg, Some(&mut grads)).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} in epoch {epoch}, batch {b}")),
                other => other,
            })?;
            if !value.loss.total.is_finite() {
                return Err(Error::NonFinite(format!("loss in epoch {epoch}, batch {b}")));
            }
            model.params.accumulate(&grads);
            adam_step(&mut model.params, &adam)
                .map_err(|e| Error::NonFinite(format!("{e} in epoch {epoch}, batch {b}")))?;
            model.params.zero_grads();
            sum.bce += value.loss.bce;
            sum.cm += value.loss.cm;
            sum.theta_reg += value.loss.theta_reg;
            clamped += value.clamped;
            batches += 1;
        }
        let n = batches as f64;
        let train_loss = LossBreakdown::new(sum.bce / n, sum.cm / n, sum.theta_reg / n);
        let validation = evaluate(&model, &validation_windows, diff, concepts, cfg, eval_opts)?.report;

        let improved = match (validation.auc, best_auc) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            // no usable validation signal: follow the latest parameters
            (None, None) => true,
        };
        let report = EpochReport {
            epoch,
            train: train_loss,
            clamped_predictions: clamped,
            validation,
        };
        on_epoch(&report);
        if improved {
            best_auc = report.validation.auc;
            best_model = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        epochs.push(report);
        if since_best >= cfg.patience {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        initial_validation,
        epochs,
        stopped_early,
    })
}
