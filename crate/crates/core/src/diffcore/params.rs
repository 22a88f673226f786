use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::nn::FfnParams;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    /// Adam first and second moments.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Named parameter arrays with their gradient and optimizer buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    /// Optimizer step counter.
    pub steps: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::shape(format!(
                "parameter {name}: {} values for shape {shape:?}",
                values.len()
            )));
        }
        let n = values.len();
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            values,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        Ok(())
    }

    pub fn add_const(&mut self, name: &str, shape: &[usize], c: f64) -> Result<()> {
        self.add(name, shape, vec![c; shape.iter().product()])
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let a = 1.0 / (fan_in.max(1) as f64).sqrt();
        let values = (0..shape.iter().product()).map(|_| rng.gen_range(-a..a)).collect();
        self.add(name, shape, values)
    }

    /// `{name}.w: [fan_in, fan_out]` and `{name}.b: [fan_out]`.
    pub fn add_linear(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        self.add_uniform(&format!("{name}.w"), &[fan_in, fan_out], fan_in, rng)?;
        self.add_uniform(&format!("{name}.b"), &[fan_out], fan_in, rng)
    }

    pub fn add_linear_zero(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        self.add_const(&format!("{name}.w"), &[fan_in, fan_out], 0.0)?;
        self.add_const(&format!("{name}.b"), &[fan_out], 0.0)
    }

    pub fn add_layer_norm(&mut self, name: &str, width: usize) -> Result<()> {
        self.add_const(&format!("{name}.gamma"), &[width], 1.0)?;
        self.add_const(&format!("{name}.beta"), &[width], 0.0)
    }

    pub fn add_ffn(&mut self, name: &str, width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        self.add_layer_norm(&format!("{name}.ln"), width)?;
        self.add_linear(&format!("{name}.fc1"), width, hidden, rng)?;
        self.add_linear(&format!("{name}.fc2"), hidden, width, rng)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn n_values(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.index.get(name).map(|&i| &mut self.entries[i])
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Put every entry on `tape`, as tracked inputs or as constants.
    pub fn bind<'t>(&self, tape: &'t Tape, tracked: bool) -> Bound<'t> {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if tracked {
                    tape.input(e.values.clone(), &e.shape)
                } else {
                    tape.constant(e.values.clone(), &e.shape)
                }
            })
            .collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }

    /// Add gradients of `loss` with respect to a tracked binding into `grad`.
    pub fn accumulate_grad<'t>(&mut self, tape: &'t Tape, loss: Var<'t>, bound: &Bound<'t>) -> Result<()> {
        let grads = tape.grad(loss, &bound.vars, false)?;
        for (e, g) in self.entries.iter_mut().zip(grads) {
            g.with_value(|gv| {
                for (a, b) in e.grad.iter_mut().zip(gv) {
                    *a += b;
                }
            });
        }
        Ok(())
    }

    /// Flat copy of every value, in entry order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.values.iter().copied()).collect()
    }
}

/// A [`ParameterStore`] placed on a tape.
pub struct Bound<'t> {
    pub vars: Vec<Var<'t>>,
    index: HashMap<String, usize>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    /// `({name}.w, {name}.b)`.
    pub fn linear(&self, name: &str) -> Result<(Var<'t>, Var<'t>)> {
        Ok((self.get(&format!("{name}.w"))?, self.get(&format!("{name}.b"))?))
    }

    pub fn layer_norm(&self, name: &str) -> Result<(Var<'t>, Var<'t>)> {
        Ok((self.get(&format!("{name}.gamma"))?, self.get(&format!("{name}.beta"))?))
    }

    pub fn ffn(&self, name: &str) -> Result<FfnParams<'t>> {
        let (ln_gamma, ln_beta) = self.layer_norm(&format!("{name}.ln"))?;
        let (w1, b1) = self.linear(&format!("{name}.fc1"))?;
        let (w2, b2) = self.linear(&format!("{name}.fc2"))?;
        Ok(FfnParams {
            ln_gamma,
            ln_beta,
            w1,
            b1,
            w2,
            b2,
        })
    }
}
