//! Named parameter bundles, dense layers and the Adam optimizer.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::array::Array;
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{normal_array, SeededRng};

/// Named parameter arrays, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Params {
    tensors: BTreeMap<String, Array>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("missing parameter {:?}", name)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Params {
        let tensors = self
            .tensors
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Params { tensors }
    }

    pub fn extend(&mut self, other: Params) {
        self.tensors.extend(other.tensors);
    }

    /// Puts every array on the tape, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Like [`Params::bind`] but only names accepted by `trainable` become leaves.
    pub fn bind_selected(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable(k) {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters placed on a tape.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("missing parameter {:?}", name)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

pub fn init_linear(
    params: &mut Params,
    rng: &mut SeededRng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) {
    let std = libm::sqrt(1.0 / fan_in as f64);
    params.insert(
        format!("{}.w", name),
        normal_array(rng, &[fan_in, fan_out], std),
    );
    params.insert(format!("{}.b", name), Array::zeros([1, fan_out]));
}

/// `x W + b` for a layer created by [`init_linear`].
pub fn linear(tape: &mut Tape, bound: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = bound.var(&format!("{}.w", name))?;
    let b = bound.var(&format!("{}.b", name))?;
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Creates `name.0 .. name.{n-1}` layers with the given widths.
pub fn init_mlp(params: &mut Params, rng: &mut SeededRng, name: &str, widths: &[usize]) {
    for (i, pair) in widths.windows(2).enumerate() {
        init_linear(params, rng, &format!("{}.{}", name, i), pair[0], pair[1]);
    }
}

/// Dense layers with GELU between them (none after the last).
pub fn mlp(tape: &mut Tape, bound: &Bound, name: &str, layers: usize, x: Var) -> Result<Var> {
    let mut h = x;
    for i in 0..layers {
        h = linear(tape, bound, &format!("{}.{}", name, i), h)?;
        if i + 1 < layers {
            h = tape.gelu(h);
        }
    }
    Ok(h)
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: Some(1.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    moments: BTreeMap<String, (Array, Array)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Replaces the hyperparameters, keeping the moments (used for schedules).
    pub fn set_config(&mut self, config: AdamConfig) {
        self.config = config;
    }

    /// Applies one update to the parameters that have a gradient in `grads`.
    pub fn step(&mut self, params: &mut Params, bound: &Bound, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let mut collected: Vec<(String, Array)> = Vec::new();
        for (name, var) in bound.iter() {
            if let Some(g) = grads.get(*var) {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of {}", name)));
                }
                collected.push((name.to_string(), g.clone()));
            }
        }
        let mut scale = 1.0;
        if let Some(max_norm) = c.max_grad_norm {
            let norm = libm::sqrt(
                collected
                    .iter()
                    .map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>())
                    .sum(),
            );
            if norm > max_norm {
                scale = max_norm / norm;
            }
        }
        let bc1 = 1.0 - libm::pow(c.beta1, f64::from(self.step));
        let bc2 = 1.0 - libm::pow(c.beta2, f64::from(self.step));
        for (name, g) in collected {
            let param = params
                .tensors
                .get_mut(&name)
                .ok_or_else(|| Error::InvalidConfig(format!("missing parameter {:?}", name)))?;
            let (m, v) = self.moments.entry(name).or_insert_with(|| {
                (
                    Array::zeros(g.shape().to_vec()),
                    Array::zeros(g.shape().to_vec()),
                )
            });
            for (((p, gi), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gi = gi * scale;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let update = c.learning_rate * (*mi / bc1) / (libm::sqrt(*vi / bc2) + c.eps);
                *p -= update;
            }
        }
        Ok(())
    }
}
