//! The four-row comparison of clean and noisy 2D-DPO training.
//!
//! | row | loss | train scores | eval scores |
//! |---|---|---|---|
//! | Vanilla DPO | DPO | clean | clean |
//! | Vanilla 2D-DPO | 2D-DPO | clean | clean |
//! | Vanilla 2D-DPO under noise | 2D-DPO | clean | perturbed |
//! | Robust 2D-DPO under noise | segment-noise 2D-DPO | clean | perturbed |
//!
//! The two vanilla 2D-DPO rows share one trained model. Rows are run
//! sequentially with the same seed, so every row sees the same batches.

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::Result;
use crate::eval::win_rate;
use crate::losses::LossVariant;
use crate::noise::NoiseConfig;
use crate::policy::ReferencePolicy;
use crate::trainer::{prepare, train, TrainConfig, TrainResult};

pub const ROW_NAMES: [&str; 4] = [
    "Vanilla DPO",
    "Vanilla 2D-DPO",
    "Vanilla 2D-DPO under noise",
    "Robust 2D-DPO under noise",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub algorithm: String,
    pub train_win_rate: f64,
    pub eval_win_rate: f64,
}

/// Final win rates of a trained model.
fn final_rates(result: &TrainResult) -> (f64, f64) {
    let last = result.history.last().expect("training logs its final iteration");
    (last.train_win_rate, last.eval_win_rate)
}

/// Runs every row, calling `on_row` as soon as each finishes so callers can
/// keep partial results if a later row fails.
///
/// `base` supplies β, η, batch size, iterations, logging cadence and seed;
/// its variant and noise settings are overridden per row. `eval_noise_seed`
/// seeds the score perturbation of the noisy rows.
pub fn run_matrix(
    train_set: &Dataset,
    eval_set: &Dataset,
    reference: &ReferencePolicy,
    base: &TrainConfig,
    eval_noise_seed: u64,
    mut on_row: impl FnMut(&MatrixRow),
) -> Result<Vec<MatrixRow>> {
    let mut rows = Vec::with_capacity(ROW_NAMES.len());
    let mut push = |name: &str, (train_win_rate, eval_win_rate): (f64, f64)| {
        let row = MatrixRow {
            algorithm: name.to_string(),
            train_win_rate,
            eval_win_rate,
        };
        on_row(&row);
        rows.push(row);
    };
    let clean = |variant| TrainConfig {
        variant,
        train_noise: NoiseConfig::none(),
        eval_noise: NoiseConfig::none(),
        ..base.clone()
    };
    let noisy_eval = NoiseConfig::segment(eval_noise_seed);

    let dpo = train(train_set, eval_set, reference, &clean(LossVariant::Dpo))?;
    push(ROW_NAMES[0], final_rates(&dpo));

    let two_d_config = clean(LossVariant::Dpo2d);
    let two_d = train(train_set, eval_set, reference, &two_d_config)?;
    let (two_d_train, two_d_eval) = final_rates(&two_d);
    push(ROW_NAMES[1], (two_d_train, two_d_eval));

    let noisy_eval_set = prepare(eval_set, LossVariant::Dpo2d, &noisy_eval)?;
    let noisy = win_rate(&two_d.final_params, reference, &noisy_eval_set, LossVariant::Dpo2d, base.beta)?;
    push(ROW_NAMES[2], (two_d_train, noisy.win_rate));

    let robust_config = TrainConfig {
        eval_noise: noisy_eval,
        ..clean(LossVariant::Robust2dSegment)
    };
    let robust = train(train_set, eval_set, reference, &robust_config)?;
    push(ROW_NAMES[3], final_rates(&robust));

    Ok(rows)
}
