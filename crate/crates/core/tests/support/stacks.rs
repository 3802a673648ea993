//! Gradient checks of composite models at points drawn from a seed.

#![allow(dead_code)]

use oclbench_core::autodiff::{grad_check, GradCheckReport};
use oclbench_core::mfresa::{decode, loss_mfresa, DecoderFlags, MfresaConfig, MfresaModel};
use oclbench_core::nn::{init_mlp, mlp, Params};
use oclbench_core::probe::{HeadKind, Probe, ProbeConfig, Vocab};
use oclbench_core::rng::{derive_seed, normal_array, seeded, uniform_array};
use oclbench_core::slot_attention::{self, SlotConfig};
use oclbench_core::{Array, Tape, Var};

pub const STEP: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

fn rng(seed: u64, key: &str) -> oclbench_core::rng::SeededRng {
    seeded(derive_seed(seed, key))
}

/// Weighted sum of `y` with fixed random weights.
fn project(t: &mut Tape, y: Var, seed: u64) -> oclbench_core::Result<Var> {
    let w = normal_array(&mut rng(seed, "projection"), t.shape(y), 1.0);
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum_all(p))
}

pub fn gelu_mlp(seed: u64) -> GradCheckReport {
    let mut params = Params::new();
    init_mlp(&mut params, &mut rng(seed, "mlp"), "m", &[4, 8, 3]);
    let point = uniform_array(&mut rng(seed, "point"), &[5, 4], -2.0, 2.0);
    grad_check(
        |t, x| {
            let bound = params.bind(t, false);
            let y = mlp(t, &bound, "m", 2, x)?;
            project(t, y, seed)
        },
        &point,
        STEP,
        TOL,
    )
    .unwrap()
}

/// Softmax followed by picking one entry, differentiated at a random point.
pub fn softmax_pick(seed: u64) -> GradCheckReport {
    let point = uniform_array(&mut rng(seed, "point"), &[6], -2.0, 2.0);
    grad_check(
        |t, x| {
            let s = t.softmax(x, 0)?;
            t.pick(s, (seed % 6) as usize)
        },
        &point,
        STEP,
        TOL,
    )
    .unwrap()
}

/// The full slot-attention stack as a function of its input features.
pub fn slot_attention_stack(seed: u64) -> GradCheckReport {
    let config = SlotConfig {
        k: 3,
        d_slot: 4,
        iterations: 3,
        mlp_hidden: 6,
        ..SlotConfig::default()
    };
    let mut params = Params::new();
    slot_attention::init_params(&mut params, &mut rng(seed, "sa"), 3, &config);
    let noise = slot_attention::initial_noise(&config, derive_seed(seed, "noise"));
    let point = uniform_array(&mut rng(seed, "point"), &[6, 3], -2.0, 2.0);
    grad_check(
        |t, x| {
            let bound = params.bind(t, false);
            let z = t.constant(noise.clone());
            let out = slot_attention::forward(t, &bound, &config, x, z)?;
            project(t, out.slots, seed)
        },
        &point,
        STEP,
        TOL,
    )
    .unwrap()
}

/// Probe logits as a function of the slots, alternating head and depth.
pub fn probe(seed: u64) -> GradCheckReport {
    let head = if seed.is_multiple_of(2) {
        HeadKind::CrossAttention
    } else {
        HeadKind::MeanPoolLinear
    };
    let depth = 1 + (seed as usize / 2) % 2;
    let config = ProbeConfig {
        k: 4,
        d_slot: 5,
        connector_depth: depth,
        connector_hidden: 7,
        d_model: 6,
        head,
    };
    let questions = Vocab::new(["how", "many", "squares", "are", "there"]);
    let answers = Vocab::new(["1", "2", "3", "4"]);
    let p = Probe::new(config, questions, answers, seed).unwrap();
    let q = p.encode("how many squares are there").unwrap();
    let point = uniform_array(&mut rng(seed, "point"), &[4, 5], -2.0, 2.0);
    grad_check(
        |t, s| {
            let bound = p.params.bind(t, false);
            let y = p.forward(t, &bound, s, &q)?;
            project(t, y, seed)
        },
        &point,
        STEP,
        TOL,
    )
    .unwrap()
}

/// Three-term reconstruction loss as a function of the slots.
pub fn mfresa_loss(seed: u64) -> GradCheckReport {
    let config = MfresaConfig {
        rows: 8,
        cols: 8,
        patch: 4,
        d_enc: 6,
        encoder_positions: false,
        slot: SlotConfig {
            k: 3,
            d_slot: 4,
            iterations: 2,
            mlp_hidden: 6,
            ..SlotConfig::default()
        },
        teacher_hidden: 5,
        teacher_dim: 3,
        decoder_hidden: 6,
        hog_bins: 4,
        decoders: DecoderFlags::ALL,
        weights: [1.0; 3],
    };
    let model = MfresaModel::new(config.clone(), seed).unwrap();
    let image: Array = uniform_array(&mut rng(seed, "image"), &[8, 8, 3], 0.0, 1.0);
    let targets = model.targets(&image).unwrap();
    let point = uniform_array(&mut rng(seed, "point"), &[3, 4], -2.0, 2.0);
    grad_check(
        |t, s| {
            let bound = model.params.bind(t, false);
            let r = decode(t, &bound, &config, s)?;
            Ok(loss_mfresa(t, &targets, &r, config.weights)?.0)
        },
        &point,
        STEP,
        TOL,
    )
    .unwrap()
}
