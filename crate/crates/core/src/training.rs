//! Mini-batch SGD with periodic validation and best-snapshot selection, and
//! the hyperparameter grid around it.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DatasetSplit, InteractionTriple};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_mse, Predictor};
use crate::model::{
    accumulate_data_gradients, init_parameters, Gradients, Hyperparameters, LossWeights,
    ModelParameters, Workspace, SHUFFLE_STREAM,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationPoint {
    pub epoch: usize,
    /// Mean per-triple data loss over the epoch, measured before each
    /// batch's update.
    pub train_loss: f64,
    pub validation_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun<M = ModelParameters> {
    pub best_parameters: M,
    pub best_validation_mse: f64,
    pub best_epoch: usize,
    pub history: Vec<ValidationPoint>,
    /// Mean data loss of every epoch, index 0 is epoch 1.
    pub epoch_losses: Vec<f64>,
    pub hyperparameters: Hyperparameters,
}

/// A model the SGD driver can fit.
pub(crate) trait SgdModel: Clone + Predictor {
    type Scratch;

    fn scratch(&self) -> Self::Scratch;

    /// One SGD step on `batch`; returns the batch data loss at the
    /// pre-update parameters.
    fn sgd_step(
        &mut self,
        batch: &[&InteractionTriple],
        learning_rate: f64,
        weights: LossWeights,
        scratch: &mut Self::Scratch,
    ) -> Result<f64>;
}

impl SgdModel for ModelParameters {
    type Scratch = (Gradients, Workspace);

    fn scratch(&self) -> Self::Scratch {
        (Gradients::zeros_like(self), Workspace::new(self.k()))
    }

    fn sgd_step(
        &mut self,
        batch: &[&InteractionTriple],
        learning_rate: f64,
        weights: LossWeights,
        (grads, ws): &mut Self::Scratch,
    ) -> Result<f64> {
        grads.reset();
        let loss =
            accumulate_data_gradients(self, batch.iter().copied(), weights.translation, grads, ws)?;
        if loss.is_finite() {
            self.sgd_update(grads, learning_rate, weights.regularization);
        }
        Ok(loss)
    }
}

/// Epoch/batch schedule and model selection shared by every SGD-trained
/// model.
pub(crate) fn run_sgd<M: SgdModel>(
    mut model: M,
    split: &DatasetSplit,
    hp: &Hyperparameters,
) -> Result<TrainingRun<M>> {
    hp.validate()?;
    if split.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if split.validation.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let n = split.train.len();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut scratch = model.scratch();
    let mut batch: Vec<&InteractionTriple> = Vec::with_capacity(hp.batch_size);

    let mut best: Option<(M, f64, usize)> = None;
    let mut history = Vec::new();
    let mut epoch_losses = Vec::with_capacity(hp.max_epochs);

    for epoch in 1..=hp.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(hp.batch_size).enumerate() {
            if hp.drop_last && chunk.len() < hp.batch_size && b > 0 {
                break;
            }
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &split.train[i]));
            let weights = LossWeights::for_batch(hp, chunk.len(), n);
            let loss = model.sgd_step(&batch, hp.learning_rate, weights, &mut scratch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                });
            }
            epoch_loss += loss;
            seen += chunk.len();
        }
        let train_loss = epoch_loss / seen as f64;
        epoch_losses.push(train_loss);

        if epoch % hp.validate_every == 0 {
            let validation_mse = evaluate_mse(&model, &split.validation)?.mse;
            if !validation_mse.is_finite() {
                return Err(Error::Diverged { epoch, batch: 0 });
            }
            history.push(ValidationPoint {
                epoch,
                train_loss,
                validation_mse,
            });
            if best
                .as_ref()
                .is_none_or(|(_, mse, _)| validation_mse < *mse)
            {
                best = Some((model.clone(), validation_mse, epoch));
            }
        }
    }

    let (best_parameters, best_validation_mse, best_epoch) =
        best.expect("max_epochs >= validate_every guarantees a validation point");
    Ok(TrainingRun {
        best_parameters,
        best_validation_mse,
        best_epoch,
        history,
        epoch_losses,
        hyperparameters: hp.clone(),
    })
}

/// Trains the review-translation model on `split.train`, validating on
/// `split.validation` with the review-free prediction path.
pub fn train(split: &DatasetSplit, hp: &Hyperparameters) -> Result<TrainingRun> {
    hp.validate()?;
    let params = init_parameters(
        hp,
        split.num_users,
        split.num_items,
        split.vocab_size.max(1),
    )?;
    run_sgd(params, split, hp)
}

/// Values searched for each hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub mus: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            learning_rates: alloc::vec![0.001, 0.005, 0.01, 0.05, 0.1],
            mus: alloc::vec![1e-5, 5e-5, 1e-4, 5e-4, 1e-3],
            lambdas: alloc::vec![0.1, 0.25, 0.5, 1.0],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.mus.is_empty() || self.lambdas.is_empty() {
            return Err(Error::Empty("grid value list"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.learning_rates.len() * self.mus.len() * self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination, learning rate outermost and λ innermost.
    pub fn cells(&self, base: &Hyperparameters) -> Vec<Hyperparameters> {
        let mut out = Vec::with_capacity(self.len());
        for &learning_rate in &self.learning_rates {
            for &mu in &self.mus {
                for &lambda in &self.lambdas {
                    out.push(Hyperparameters {
                        learning_rate,
                        mu,
                        lambda,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub learning_rate: f64,
    pub mu: f64,
    pub lambda: f64,
    /// Best validation MSE and its epoch, or why the cell failed.
    pub outcome: core::result::Result<(f64, usize), String>,
}

impl GridRow {
    pub fn from_run<M>(hp: &Hyperparameters, run: &Result<TrainingRun<M>>) -> Self {
        GridRow {
            learning_rate: hp.learning_rate,
            mu: hp.mu,
            lambda: hp.lambda,
            outcome: match run {
                Ok(r) => Ok((r.best_validation_mse, r.best_epoch)),
                Err(e) => Err(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome<M = ModelParameters> {
    pub best: TrainingRun<M>,
    pub best_row: usize,
    pub table: Vec<GridRow>,
}

/// Row with the lowest validation MSE; the first one wins ties.
pub fn select_best(table: &[GridRow]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in table.iter().enumerate() {
        if let Ok((mse, _)) = row.outcome {
            if best.is_none_or(|(_, b)| mse < b) {
                best = Some((i, mse));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Folds per-cell results into a [`GridOutcome`], keeping only the winning
/// run's parameters.
pub fn collect_grid<M>(
    cells: &[Hyperparameters],
    runs: Vec<Result<TrainingRun<M>>>,
) -> Result<GridOutcome<M>> {
    let table: Vec<GridRow> = cells
        .iter()
        .zip(&runs)
        .map(|(hp, r)| GridRow::from_run(hp, r))
        .collect();
    let Some(best_row) = select_best(&table) else {
        return Err(Error::AllRunsFailed(table));
    };
    let best = runs
        .into_iter()
        .nth(best_row)
        .and_then(Result::ok)
        .expect("selected row succeeded");
    Ok(GridOutcome {
        best,
        best_row,
        table,
    })
}

/// Sequential grid search; every cell starts from the same seed.
pub fn grid_search(
    split: &DatasetSplit,
    grid: &GridSpec,
    base_hp: &Hyperparameters,
) -> Result<GridOutcome> {
    grid.validate()?;
    let cells = grid.cells(base_hp);
    let mut table = Vec::with_capacity(cells.len());
    let mut best: Option<(usize, TrainingRun)> = None;
    for (i, hp) in cells.iter().enumerate() {
        let run = train(split, hp);
        table.push(GridRow::from_run(hp, &run));
        if let Ok(run) = run {
            if best
                .as_ref()
                .is_none_or(|(_, b)| run.best_validation_mse < b.best_validation_mse)
            {
                best = Some((i, run));
            }
        }
    }
    match best {
        Some((best_row, best)) => Ok(GridOutcome {
            best,
            best_row,
            table,
        }),
        None => Err(Error::AllRunsFailed(table)),
    }
}
