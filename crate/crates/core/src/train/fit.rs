//! Full-batch Adam training loop.

use serde::{Deserialize, Serialize};

use super::dataset::{PairConfig, Window};
use super::loss::{evaluate_windows, LossConfig, LossMode};
use crate::autodiff::{Adam, ParamStore};
use crate::error::{Error, Result};
use crate::model::HamiltonianModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub substeps: usize,
    pub lambda_g: f64,
    /// Maximum steps per training window.
    pub window: usize,
    pub loss: LossMode,
    /// Fraction of records held out for testing.
    pub test_fraction: f64,
    /// Evaluate the test loss every this many iterations (0 disables).
    pub eval_every: usize,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub pairs: PairConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 400,
            lr: 1e-3,
            substeps: crate::ode::DEFAULT_SUBSTEPS,
            lambda_g: 1e-3,
            window: 50,
            loss: LossMode::Observation,
            test_fraction: 0.25,
            eval_every: 1,
            checkpoint_every: 0,
            pairs: PairConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.substeps == 0 || self.window == 0 {
            return Err(Error::Config("substeps and window must be at least 1".into()));
        }
        if !(self.lambda_g >= 0.0) {
            return Err(Error::Config("lambda_g must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        if self.pairs.points == 0 {
            return Err(Error::Config("pairs.points must be at least 1".into()));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { mode: self.loss, lambda_g: self.lambda_g, substeps: self.substeps }
    }
}

/// Losses seen at one iteration, before that iteration's update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub history: Vec<IterationRecord>,
    /// Iteration whose parameters were kept.
    pub best_iteration: usize,
    pub best_train_loss: f64,
}

/// Trains `model` on `train` for `cfg.iterations` Adam steps and keeps the
/// parameters with the lowest training loss. `observer` sees every record.
///
/// A non-finite loss restores the best parameters so far and returns
/// [`Error::DivergedLoss`].
pub fn fit(
    model: &mut HamiltonianModel,
    train: &[Window],
    test: &[Window],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&IterationRecord, &HamiltonianModel) -> Result<()>,
) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let loss_cfg = cfg.loss_config();
    let adam = Adam { lr: cfg.lr, ..Adam::default() };
    let mut store: ParamStore = model.params().clone();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..=cfg.iterations {
        let last = it == cfg.iterations;
        let eval = evaluate_windows(model, train, &loss_cfg, !last)?;
        let train_loss = eval.total();
        let test_loss = if !test.is_empty() && cfg.eval_every > 0 && (it % cfg.eval_every == 0 || last) {
            Some(evaluate_windows(model, test, &loss_cfg, false)?.total())
        } else {
            None
        };
        if !train_loss.is_finite() || test_loss.is_some_and(|t| !t.is_finite()) {
            if let Some((_, _, p)) = &best {
                model.load_params(p)?;
            }
            return Err(Error::DivergedLoss { iteration: it });
        }
        if best.as_ref().is_none_or(|b| train_loss < b.1) {
            best = Some((it, train_loss, model.params().clone()));
        }
        store.zero_grad();
        if let Some(g) = &eval.grads {
            store.accumulate(g)?;
        }
        let record = IterationRecord { iteration: it, train_loss, test_loss, grad_norm: store.grad_norm() };
        history.push(record);
        observer(&record, model)?;
        if !last {
            store.adam_step(&adam);
            model.load_params(&store)?;
        }
    }
    let (best_iteration, best_train_loss, params) = best.expect("at least one iteration");
    model.load_params(&params)?;
    Ok(FitReport { history, best_iteration, best_train_loss })
}
