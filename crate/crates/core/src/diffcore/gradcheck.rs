use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParameterStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Coordinates probed; all of them when the store is smaller.
    pub probes: usize,
    pub seed: u64,
    /// Denominator floor of the relative error, so that two vanishing
    /// derivatives compare as equal instead of dividing noise by noise.
    pub abs_floor: f64,
    pub exec: Execution,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            probes: 64,
            seed: 0,
            abs_floor: 1e-6,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, flat index, analytic, numeric)` for every probe.
    pub probes: Vec<(String, usize, f64, f64)>,
}

fn scalar_of<'t>(out: Var<'t>) -> Result<Var<'t>> {
    if out.len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    Ok(out)
}

fn eval<F>(f: &F, store: &ParameterStore) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape, false);
    Ok(scalar_of(f(&tape, &bound)?)?.item())
}

/// Compare reverse-mode gradients of `f` with central differences on a random
/// subset of the coordinates of `store`.
pub fn grad_check<F>(f: F, store: &ParameterStore, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>> + Sync + Send,
{
    let tape = Tape::new();
    let bound = store.bind(&tape, true);
    let out = scalar_of(f(&tape, &bound)?)?;
    let grads: Vec<Vec<f64>> = tape
        .grad(out, &bound.vars, false)?
        .iter()
        .map(|g| g.value())
        .collect();
    tape.check_finite()?;

    let coords: Vec<(usize, usize)> = store
        .entries()
        .iter()
        .enumerate()
        .flat_map(|(p, e)| (0..e.values.len()).map(move |k| (p, k)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut picked: Vec<(usize, usize)> = if coords.len() <= opts.probes {
        coords.clone()
    } else {
        sample(&mut rng, coords.len(), opts.probes)
            .into_iter()
            .map(|i| coords[i])
            .collect()
    };
    picked.sort_unstable();

    let numeric = opts.exec.map(&picked, |&(p, k)| -> Result<f64> {
        let mut plus = store.clone();
        plus.entries_mut()[p].values[k] += opts.h;
        let mut minus = store.clone();
        minus.entries_mut()[p].values[k] -= opts.h;
        Ok((eval(&f, &plus)? - eval(&f, &minus)?) / (2.0 * opts.h))
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: Vec::with_capacity(picked.len()),
    };
    for (&(p, k), n) in picked.iter().zip(numeric) {
        let n = n?;
        let a = grads[p][k];
        let denom = a.abs().max(n.abs()).max(opts.abs_floor);
        let rel = (a - n).abs() / denom;
        if !rel.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient comparison at {}[{k}]",
                store.entries()[p].name
            )));
        }
        report.max_rel_error = report.max_rel_error.max(rel);
        report.probes.push((store.entries()[p].name.clone(), k, a, n));
    }
    Ok(report)
}
