//! Grid search with cells trained in parallel.
//!
//! Each cell owns its parameters and RNG, so the outcome does not depend on
//! the number of threads or on scheduling order.

use std::fmt::Write as _;

use rayon::prelude::*;
use transrev_core::{
    collect_grid, fit_svd, train, DatasetSplit, GridOutcome, GridRow, GridSpec, Hyperparameters,
    SvdModel,
};

use crate::error::Result;

pub fn transrev_grid(
    split: &DatasetSplit,
    grid: &GridSpec,
    base: &Hyperparameters,
) -> Result<GridOutcome> {
    grid.validate()?;
    let cells = grid.cells(base);
    let runs: Vec<_> = cells.par_iter().map(|hp| train(split, hp)).collect();
    Ok(collect_grid(&cells, runs)?)
}

/// The SVD baseline has no λ; its grid is learning rate × μ.
pub fn svd_grid(
    split: &DatasetSplit,
    grid: &GridSpec,
    base: &Hyperparameters,
) -> Result<GridOutcome<SvdModel>> {
    let grid = GridSpec {
        lambdas: vec![base.lambda],
        ..grid.clone()
    };
    grid.validate()?;
    let cells = grid.cells(base);
    let runs: Vec<_> = cells.par_iter().map(|hp| fit_svd(split, hp)).collect();
    Ok(collect_grid(&cells, runs)?)
}

/// `learning_rate  mu  lambda  valid_mse  best_epoch  status`, one row per cell.
pub fn results_tsv(table: &[GridRow]) -> String {
    let mut out = String::from("learning_rate\tmu\tlambda\tvalid_mse\tbest_epoch\tstatus\n");
    for row in table {
        let _ = write!(out, "{}\t{}\t{}\t", row.learning_rate, row.mu, row.lambda);
        match &row.outcome {
            Ok((mse, epoch)) => {
                let _ = writeln!(out, "{mse}\t{epoch}\tok");
            }
            Err(e) => {
                let _ = writeln!(out, "NaN\t-\tfailed: {}", e.replace(['\t', '\n'], " "));
            }
        }
    }
    out
}
