//! Iterative slot attention.
//!
//! Slots compete for input tokens: at every iteration the attention logits
//! between tokens and slots are normalized across slots, the resulting
//! weights are renormalized over tokens to form weighted means of the token
//! values, and each slot is updated from its weighted mean by a GRU cell
//! followed by a residual MLP.

use alloc::format;
use alloc::vec::Vec;

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::{BinaryMask, MaskRole, MaskSet};
use crate::nn::{init_linear, init_mlp, linear, mlp, Bound, Params};
use crate::rng::{normal_array, seeded, SeededRng};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SlotConfig {
    pub k: usize,
    pub d_slot: usize,
    pub iterations: usize,
    /// Floor added to attention weights before renormalizing over tokens.
    pub epsilon: f64,
    pub init_mean: f64,
    pub init_log_sigma: f64,
    pub mlp_hidden: usize,
}

impl Default for SlotConfig {
    fn default() -> Self {
        Self {
            k: 7,
            d_slot: 32,
            iterations: 5,
            epsilon: 1e-8,
            init_mean: 0.0,
            init_log_sigma: 0.0,
            mlp_hidden: 64,
        }
    }
}

impl SlotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.iterations == 0 || self.d_slot == 0 {
            return Err(Error::InvalidConfig(format!(
                "slot attention needs k >= 1, iterations >= 1 and d_slot >= 1 (got k={}, iterations={}, d_slot={})",
                self.k, self.iterations, self.d_slot
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Encoder tokens laid out on a `rows x cols` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub tokens: Array,
    pub grid: (usize, usize),
}

impl FeatureMap {
    pub fn new(tokens: Array, grid: (usize, usize)) -> Result<Self> {
        let (n, _) = tokens.expect2("feature_map")?;
        if grid.0 * grid.1 != n {
            return Err(Error::shape(
                "feature_map",
                format!("grid {:?} does not hold {} tokens", grid, n),
            ));
        }
        Ok(Self { tokens, grid })
    }

    pub fn len(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotSet {
    /// `k x d_slot`.
    pub slots: Array,
    pub seed: u64,
}

impl SlotSet {
    pub fn k(&self) -> usize {
        self.slots.shape()[0]
    }
}

/// Attention of each slot over the tokens, one `k x n` array per iteration.
/// Every column sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps {
    pub iterations: Vec<Array>,
}

impl AttentionMaps {
    pub fn final_weights(&self) -> &Array {
        self.iterations.last().expect("at least one iteration")
    }
}

/// Vars produced by [`forward`].
#[derive(Clone, Debug)]
pub struct SlotAttentionVars {
    pub slots: Var,
    /// `n x k` attention per iteration (softmax over slots, before the floor).
    pub attention: Vec<Var>,
}

pub fn init_params(params: &mut Params, rng: &mut SeededRng, d_in: usize, config: &SlotConfig) {
    let d = config.d_slot;
    init_linear(params, rng, "sa.k", d_in, d);
    init_linear(params, rng, "sa.v", d_in, d);
    init_linear(params, rng, "sa.q", d, d);
    init_linear(params, rng, "sa.gru.x", d, 3 * d);
    init_linear(params, rng, "sa.gru.h", d, 3 * d);
    init_mlp(params, rng, "sa.mlp", &[d, config.mlp_hidden, d]);
    params.insert("sa.mu", Array::full([1, d], config.init_mean));
    params.insert("sa.log_sigma", Array::full([1, d], config.init_log_sigma));
}

/// Standard-normal noise used to draw the initial slots for `seed`.
pub fn initial_noise(config: &SlotConfig, seed: u64) -> Array {
    normal_array(&mut seeded(seed), &[config.k, config.d_slot], 1.0)
}

/// Records slot attention on `tape`. `features` is `n x d_in`, `noise` is
/// `k x d_slot`; initial slots are `mu + exp(log_sigma) * noise`.
pub fn forward(
    tape: &mut Tape,
    bound: &Bound,
    config: &SlotConfig,
    features: Var,
    noise: Var,
) -> Result<SlotAttentionVars> {
    let k = config.k;
    let d = config.d_slot;
    if tape.shape(noise) != [k, d] {
        return Err(Error::shape(
            "slot_attention",
            format!(
                "initial noise {:?}, expected [{}, {}]",
                tape.shape(noise),
                k,
                d
            ),
        ));
    }
    let (_, d_in) = tape.value(features).expect2("slot_attention")?;
    let wk = bound.var("sa.k.w")?;
    if tape.shape(wk)[0] != d_in {
        return Err(Error::shape(
            "slot_attention",
            format!(
                "feature width {} but key projection expects {}",
                d_in,
                tape.shape(wk)[0]
            ),
        ));
    }

    let inputs = tape.layer_norm(features, LN_EPS)?;
    let keys = linear(tape, bound, "sa.k", inputs)?;
    let values = linear(tape, bound, "sa.v", inputs)?;

    let mu = bound.var("sa.mu")?;
    let log_sigma = bound.var("sa.log_sigma")?;
    let sigma = tape.exp(log_sigma);
    let spread = tape.mul_row(noise, sigma)?;
    let rows: Vec<usize> = alloc::vec![0; k];
    let mu_rows = tape.gather_rows(mu, &rows)?;
    let mut slots = tape.add(mu_rows, spread)?;

    let scale = 1.0 / libm::sqrt(d as f64);
    let mut attention = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let prev = slots;
        let normed = tape.layer_norm(slots, LN_EPS)?;
        let q = linear(tape, bound, "sa.q", normed)?;
        let qt = tape.transpose(q)?;
        let logits = tape.matmul(keys, qt)?;
        let logits = tape.scale(logits, scale);
        let attn = tape.softmax(logits, 1)?;
        attention.push(attn);

        let floored = tape.add_scalar(attn, config.epsilon);
        let per_slot = tape.transpose(floored)?;
        let totals = tape.sum(per_slot, 1)?;
        let weights = tape.div_col(per_slot, totals)?;
        let updates = tape.matmul(weights, values)?;

        slots = gru(tape, bound, d, updates, prev)?;
        let normed = tape.layer_norm(slots, LN_EPS)?;
        let delta = mlp(tape, bound, "sa.mlp", 2, normed)?;
        slots = tape.add(slots, delta)?;
    }
    Ok(SlotAttentionVars { slots, attention })
}

fn gru(tape: &mut Tape, bound: &Bound, d: usize, x: Var, h: Var) -> Result<Var> {
    let gx = linear(tape, bound, "sa.gru.x", x)?;
    let gh = linear(tape, bound, "sa.gru.h", h)?;
    let xz = tape.slice(gx, 1, 0, d)?;
    let xr = tape.slice(gx, 1, d, 2 * d)?;
    let xn = tape.slice(gx, 1, 2 * d, 3 * d)?;
    let hz = tape.slice(gh, 1, 0, d)?;
    let hr = tape.slice(gh, 1, d, 2 * d)?;
    let hn = tape.slice(gh, 1, 2 * d, 3 * d)?;
    let z = tape.add(xz, hz)?;
    let z = tape.sigmoid(z);
    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r);
    let gated = tape.mul(r, hn)?;
    let n = tape.add(xn, gated)?;
    let n = tape.tanh(n);
    let diff = tape.sub(h, n)?;
    let keep = tape.mul(z, diff)?;
    tape.add(n, keep)
}

/// Runs slot attention with initial noise drawn from `seed`.
pub fn run_slot_attention(
    features: &FeatureMap,
    params: &Params,
    config: &SlotConfig,
    seed: u64,
) -> Result<(SlotSet, AttentionMaps)> {
    let (mut slots, maps) = run_with_noise(features, params, config, &initial_noise(config, seed))?;
    slots.seed = seed;
    Ok((slots, maps))
}

/// Runs slot attention from explicit initial noise (`k x d_slot`).
pub fn run_with_noise(
    features: &FeatureMap,
    params: &Params,
    config: &SlotConfig,
    noise: &Array,
) -> Result<(SlotSet, AttentionMaps)> {
    config.validate()?;
    if !features.tokens.is_finite() {
        return Err(Error::NonFinite("slot attention input features".into()));
    }
    if features.len() < config.k {
        log::warn!(
            "{} tokens for {} slots; some slots cannot own a token",
            features.len(),
            config.k
        );
    }
    let mut tape = Tape::new();
    let bound = params.with_prefix("sa.").bind(&mut tape, false);
    let x = tape.constant(features.tokens.clone());
    let z = tape.constant(noise.clone());
    let out = forward(&mut tape, &bound, config, x, z)?;
    let iterations = out
        .attention
        .iter()
        .map(|&a| tape.value(a).transpose())
        .collect::<Result<Vec<_>>>()?;
    Ok((
        SlotSet {
            slots: tape.value(out.slots).clone(),
            seed: 0,
        },
        AttentionMaps { iterations },
    ))
}

/// Assigns each grid cell to the slot with the largest attention (lowest
/// slot index on ties). The masks partition the grid.
pub fn masks_from_attention(attention: &Array, grid: (usize, usize)) -> Result<MaskSet> {
    let (k, n) = attention.expect2("masks_from_attention")?;
    if grid.0 * grid.1 != n {
        return Err(Error::shape(
            "masks_from_attention",
            format!("grid {:?} for {} attention columns", grid, n),
        ));
    }
    let mut masks: Vec<BinaryMask> = (0..k).map(|_| BinaryMask::empty(grid.0, grid.1)).collect();
    for j in 0..n {
        let mut best = 0;
        for i in 1..k {
            if attention.get2(i, j) > attention.get2(best, j) {
                best = i;
            }
        }
        masks[best].set(j / grid.1, j % grid.1, true);
    }
    MaskSet::new(masks, MaskRole::PredictedSlots)
}
