use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

/// Objective weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub eta_recon: f64,
    pub eta_r1: f64,
    pub eta_r2: f64,
    pub lambda_loc: f64,
    pub lambda_sst: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            eta_recon: 10.0,
            eta_r1: 1.0,
            eta_r2: 1.0,
            lambda_loc: 0.1,
            lambda_sst: 0.1,
        }
    }
}

/// Stack per-sample `[1]` scores into `[B, 1]`.
pub fn stack_scores<'t>(scores: &[Var<'t>]) -> Result<Var<'t>> {
    if scores.is_empty() {
        return Err(Error::EmptyDataset("empty batch".into()));
    }
    let cols: Vec<Var<'t>> = scores.iter().map(|s| s.reshape(&[1, 1])).collect();
    Ok(Var::concat_rows(&cols))
}

/// Mean over the batch of each sample's root-mean-square error over depth.
/// `err: [B, D]`.
pub fn recon_rmse(err: Var<'_>) -> Var<'_> {
    err.square().mean_cols().sqrt().mean()
}

/// `-mean softplus(l_fake - l_real) + eta * recon_rmse(err)`.
pub fn generator_loss<'t>(l_real: Var<'t>, l_fake: Var<'t>, err: Var<'t>, eta: f64) -> Var<'t> {
    -(l_fake - l_real).softplus().mean() + recon_rmse(err).scale(eta)
}

/// Relativistic adversarial term plus weighted penalties and auxiliary
/// regression losses. All terms after the first are scalars `[1]`.
pub fn discriminator_loss<'t>(
    l_real: Var<'t>,
    l_fake: Var<'t>,
    r1: Var<'t>,
    r2: Var<'t>,
    loc_mse: Var<'t>,
    sst_mse: Var<'t>,
    w: &LossWeights,
) -> Var<'t> {
    (l_fake - l_real).softplus().mean()
        + r1.scale(w.eta_r1)
        + r2.scale(w.eta_r2)
        + loc_mse.scale(w.lambda_loc)
        + sst_mse.scale(w.lambda_sst)
}

/// Zero-centred penalty: the squared norm of d(score_i)/d(input_i), averaged
/// over the batch. Scores of different samples must depend only on their own
/// input; the gradient is taken once through their sum. The result stays on
/// the tape so it can be differentiated again.
pub fn gradient_penalty<'t>(tape: &'t Tape, inputs: &[Var<'t>], scores: &[Var<'t>]) -> Result<Var<'t>> {
    if inputs.is_empty() || inputs.len() != scores.len() {
        return Err(Error::Contract(format!(
            "gradient penalty needs one score per input, got {} and {}",
            scores.len(),
            inputs.len()
        )));
    }
    if let Some(i) = inputs.iter().position(|v| !v.is_tracked()) {
        return Err(Error::Contract(format!("penalty input {i} is not a tracked tape input")));
    }
    let total = stack_scores(scores)?.sum();
    let grads = tape.grad(total, inputs, true)?;
    let norms: Vec<Var<'t>> = grads.into_iter().map(|g| g.square().sum()).collect();
    Ok(stack_scores(&norms)?.mean())
}
