//! Slot-attention autoencoder trained to reconstruct three targets at once:
//! the image, features of a frozen teacher network, and patch-level HOG.
//!
//! Images are cut into square patches. A small network turns each patch into
//! an encoder token, slot attention groups the tokens, and every enabled
//! decoder broadcasts each slot over the token grid (adding a learned map of
//! the token coordinates), predicts its target plus one alpha logit per
//! token, and mixes the slots with a softmax over the alpha logits.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::hog::{compute_hog, luma, HogConfig};
use crate::metrics::{miou_matched, BinaryMask, MaskRole, MaskSet};
use crate::nn::{init_linear, init_mlp, linear, mlp, Adam, AdamConfig, Bound, Params};
use crate::rng::{derive_seed, normal_array, seeded};
use crate::slot_attention::{self, masks_from_attention, SlotConfig};

/// Which reconstruction terms are trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecoderFlags {
    pub image: bool,
    pub feature: bool,
    pub hog: bool,
}

impl DecoderFlags {
    pub const ALL: DecoderFlags = DecoderFlags {
        image: true,
        feature: true,
        hog: true,
    };
    pub const IMAGE_ONLY: DecoderFlags = DecoderFlags {
        image: true,
        feature: false,
        hog: false,
    };

    /// Parses a comma-separated list such as `image,feature,hog`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut flags = DecoderFlags {
            image: false,
            feature: false,
            hog: false,
        };
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "image" => flags.image = true,
                "feature" => flags.feature = true,
                "hog" => flags.hog = true,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown decoder {:?} (expected image, feature or hog)",
                        other
                    )))
                }
            }
        }
        flags.check()?;
        Ok(flags)
    }

    pub fn check(self) -> Result<()> {
        if !(self.image || self.feature || self.hog) {
            return Err(Error::InvalidConfig(
                "at least one decoder must be enabled".to_string(),
            ));
        }
        Ok(())
    }

    pub fn names(self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [
            (self.image, "image"),
            (self.feature, "feature"),
            (self.hog, "hog"),
        ] {
            if on {
                parts.push(name);
            }
        }
        parts.join(",")
    }
}

/// Where evaluation masks come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MaskSource {
    /// Final-iteration slot attention.
    #[default]
    Attention,
    /// Alpha of the first enabled decoder (image, then feature, then HOG).
    DecoderAlpha,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MfresaConfig {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
    pub d_enc: usize,
    /// Add a learned per-token position vector to the encoder output. Off by
    /// default: with it, small models learn to tile the image by location.
    pub encoder_positions: bool,
    pub slot: SlotConfig,
    pub teacher_hidden: usize,
    pub teacher_dim: usize,
    pub decoder_hidden: usize,
    pub hog_bins: usize,
    pub decoders: DecoderFlags,
    /// Weights of the image, feature and HOG terms.
    pub weights: [f64; 3],
}

impl Default for MfresaConfig {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 32,
            patch: 4,
            d_enc: 32,
            encoder_positions: false,
            slot: SlotConfig {
                k: 4,
                d_slot: 32,
                iterations: 3,
                mlp_hidden: 64,
                ..SlotConfig::default()
            },
            teacher_hidden: 32,
            teacher_dim: 16,
            decoder_hidden: 64,
            hog_bins: 9,
            decoders: DecoderFlags::ALL,
            weights: [1.0, 1.0, 1.0],
        }
    }
}

impl MfresaConfig {
    pub fn validate(&self) -> Result<()> {
        self.slot.validate()?;
        self.decoders.check()?;
        if self.patch < 2
            || !self.rows.is_multiple_of(self.patch)
            || !self.cols.is_multiple_of(self.patch)
        {
            return Err(Error::InvalidConfig(format!(
                "{}x{} images cannot be cut into {}-pixel patches",
                self.rows, self.cols, self.patch
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights {:?} must be finite and >= 0",
                self.weights
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.rows / self.patch, self.cols / self.patch)
    }

    pub fn tokens(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    pub fn patch_width(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn hog_config(&self) -> HogConfig {
        HogConfig {
            cell_size: self.patch,
            bins: self.hog_bins,
            ..HogConfig::default()
        }
    }
}

/// Flattens a `rows x cols x 3` image into one row per patch (row-major
/// patches, each patch row-major with interleaved channels).
pub fn patchify(image: &Array, patch: usize) -> Result<Array> {
    let (rows, cols) = match image.shape() {
        &[r, c, 3] => (r, c),
        s => {
            return Err(Error::shape(
                "patchify",
                format!("expected rows x cols x 3, got {:?}", s),
            ))
        }
    };
    if rows % patch != 0 || cols % patch != 0 {
        return Err(Error::shape(
            "patchify",
            format!("{}x{} not divisible by {}", rows, cols, patch),
        ));
    }
    let (gr, gc) = (rows / patch, cols / patch);
    let width = patch * patch * 3;
    let d = image.data();
    let mut out = Vec::with_capacity(gr * gc * width);
    for pr in 0..gr {
        for pc in 0..gc {
            for r in 0..patch {
                let start = ((pr * patch + r) * cols + pc * patch) * 3;
                out.extend_from_slice(&d[start..start + patch * 3]);
            }
        }
    }
    Array::new([gr * gc, width], out)
}

/// Frozen, randomly initialized two-layer network over patches.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    pub params: Params,
    pub seed: u64,
}

impl Teacher {
    pub fn new(config: &MfresaConfig, seed: u64) -> Self {
        let mut params = Params::new();
        let mut rng = seeded(seed);
        init_mlp(
            &mut params,
            &mut rng,
            "teacher",
            &[
                config.patch_width(),
                config.teacher_hidden,
                config.teacher_dim,
            ],
        );
        // random biases keep the GELU out of its linear regime
        for i in 0..2 {
            let name = format!("teacher.{}.b", i);
            let width = params.get(&name).expect("just created").len();
            params.insert(name, normal_array(&mut rng, &[1, width], 0.5));
        }
        Self { params, seed }
    }

    pub fn features(&self, patches: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(patches.clone());
        let y = mlp(&mut tape, &bound, "teacher", 2, x)?;
        Ok(tape.value(y).clone())
    }
}

/// Reconstruction targets of one image, one row per token.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub patches: Array,
    pub features: Array,
    pub hog: Array,
}

pub fn targets(image: &Array, config: &MfresaConfig, teacher: &Teacher) -> Result<Targets> {
    let patches = patchify(image, config.patch)?;
    let features = teacher.features(&patches)?;
    let hog = compute_hog(&luma(image)?, &config.hog_config())?.to_tokens();
    Ok(Targets {
        patches,
        features,
        hog,
    })
}

/// Encoder, slot attention and decoders, plus the frozen teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct MfresaModel {
    pub config: MfresaConfig,
    pub params: Params,
    pub teacher: Teacher,
}

const DECODERS: [&str; 3] = ["dec.image", "dec.feature", "dec.hog"];

impl MfresaModel {
    pub fn new(config: MfresaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(derive_seed(seed, "mfresa-init"));
        let mut params = Params::new();
        let d = config.slot.d_slot;
        init_linear(
            &mut params,
            &mut rng,
            "enc.proj",
            config.patch_width(),
            config.d_enc,
        );
        if config.encoder_positions {
            params.insert("enc.pos", Array::zeros([config.tokens(), config.d_enc]));
        }
        init_linear(&mut params, &mut rng, "enc.mix", config.d_enc, config.d_enc);
        slot_attention::init_params(&mut params, &mut rng, config.d_enc, &config.slot);
        let h = config.decoder_hidden;
        let outs = [config.patch_width(), config.teacher_dim, config.hog_bins];
        for (i, name) in DECODERS.iter().enumerate() {
            init_linear(&mut params, &mut rng, &format!("{}.pos", name), 4, d);
            let widths: Vec<usize> = if i == 2 {
                vec![d, h, h, outs[i] + 1]
            } else {
                vec![d, h, outs[i] + 1]
            };
            init_mlp(&mut params, &mut rng, name, &widths);
        }
        let teacher = Teacher::new(&config, derive_seed(seed, "teacher"));
        Ok(Self {
            config,
            params,
            teacher,
        })
    }

    pub fn targets(&self, image: &Array) -> Result<Targets> {
        targets(image, &self.config, &self.teacher)
    }
}

/// Fixed `n x 4` position features `(y, x, 1 - y, 1 - x)` of a token grid,
/// each in `[0, 1]`.
pub fn grid_coords(grid: (usize, usize)) -> Array {
    let (gr, gc) = grid;
    let span = |i: usize, len: usize| {
        if len > 1 {
            i as f64 / (len - 1) as f64
        } else {
            0.5
        }
    };
    let mut data = Vec::with_capacity(gr * gc * 4);
    for r in 0..gr {
        for c in 0..gc {
            let (y, x) = (span(r, gr), span(c, gc));
            data.extend_from_slice(&[y, x, 1.0 - y, 1.0 - x]);
        }
    }
    Array::new([gr * gc, 4], data).expect("four features per token")
}

/// Patch tokens to encoder features (`n x d_enc`).
pub fn encode(tape: &mut Tape, bound: &Bound, config: &MfresaConfig, patches: Var) -> Result<Var> {
    let mut x = linear(tape, bound, "enc.proj", patches)?;
    if config.encoder_positions {
        let pos = bound.var("enc.pos")?;
        x = tape.add(x, pos)?;
    }
    let x = tape.gelu(x);
    linear(tape, bound, "enc.mix", x)
}

/// Output of one decoder: the mixture (`n x out`) and the alpha
/// distribution over slots (`n x k`).
#[derive(Clone, Copy, Debug)]
pub struct Decoded {
    pub recon: Var,
    pub alpha: Var,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Reconstructions {
    pub image: Option<Decoded>,
    pub feature: Option<Decoded>,
    pub hog: Option<Decoded>,
}

impl Reconstructions {
    pub fn first_alpha(&self) -> Option<Var> {
        self.image.or(self.feature).or(self.hog).map(|d| d.alpha)
    }
}

fn broadcast_decode(
    tape: &mut Tape,
    bound: &Bound,
    name: &str,
    layers: usize,
    slots: Var,
    grid: (usize, usize),
) -> Result<Decoded> {
    let n = grid.0 * grid.1;
    let (k, _) = tape.value(slots).expect2("decode")?;
    let rows: Vec<usize> = (0..k).flat_map(|i| core::iter::repeat_n(i, n)).collect();
    let spread = tape.gather_rows(slots, &rows)?;
    let coords = tape.constant(grid_coords(grid));
    let pos = linear(tape, bound, &format!("{}.pos", name), coords)?;
    let tiled: Vec<usize> = (0..k).flat_map(|_| 0..n).collect();
    let pos = tape.gather_rows(pos, &tiled)?;
    let x = tape.add(spread, pos)?;
    let out = mlp(tape, bound, name, layers, x)?;
    let width = tape.shape(out)[1] - 1;
    let preds = tape.slice(out, 1, 0, width)?;
    let logits = tape.slice(out, 1, width, width + 1)?;
    let columns = (0..k)
        .map(|i| tape.slice(logits, 0, i * n, (i + 1) * n))
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat(&columns, 1)?;
    let alpha = tape.softmax(stacked, 1)?;
    let mut recon: Option<Var> = None;
    for i in 0..k {
        let pred = tape.slice(preds, 0, i * n, (i + 1) * n)?;
        let weight = tape.slice(alpha, 1, i, i + 1)?;
        let part = tape.mul_col(pred, weight)?;
        recon = Some(match recon {
            Some(r) => tape.add(r, part)?,
            None => part,
        });
    }
    Ok(Decoded {
        recon: recon.expect("k >= 1"),
        alpha,
    })
}

/// Runs every enabled decoder on `slots` (`k x d_slot`).
pub fn decode(
    tape: &mut Tape,
    bound: &Bound,
    config: &MfresaConfig,
    slots: Var,
) -> Result<Reconstructions> {
    config.decoders.check()?;
    let grid = config.grid();
    let flags = [
        config.decoders.image,
        config.decoders.feature,
        config.decoders.hog,
    ];
    let mut out = [None; 3];
    for (i, name) in DECODERS.iter().enumerate() {
        if flags[i] {
            let layers = if i == 2 { 3 } else { 2 };
            out[i] = Some(broadcast_decode(tape, bound, name, layers, slots, grid)?);
        }
    }
    Ok(Reconstructions {
        image: out[0],
        feature: out[1],
        hog: out[2],
    })
}

/// Per-term values of one evaluation of the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossTerms {
    pub total: f64,
    pub image: f64,
    pub feature: f64,
    pub hog: f64,
}

/// Weighted sum of the mean squared errors of the enabled reconstructions.
pub fn loss_mfresa(
    tape: &mut Tape,
    targets: &Targets,
    recon: &Reconstructions,
    weights: [f64; 3],
) -> Result<(Var, [Option<Var>; 3])> {
    let pairs = [
        (recon.image, &targets.patches),
        (recon.feature, &targets.features),
        (recon.hog, &targets.hog),
    ];
    let mut terms = [None; 3];
    let mut total: Option<Var> = None;
    for (i, (decoded, target)) in pairs.into_iter().enumerate() {
        if let Some(d) = decoded {
            let t = tape.constant(target.clone());
            let mse = tape.squared_error(d.recon, t)?;
            terms[i] = Some(mse);
            let weighted = tape.scale(mse, weights[i]);
            total = Some(match total {
                Some(acc) => tape.add(acc, weighted)?,
                None => weighted,
            });
        }
    }
    let total = total
        .ok_or_else(|| Error::InvalidConfig("at least one decoder must be enabled".to_string()))?;
    Ok((total, terms))
}

/// Records encoder, slot attention, decoders and loss for one image.
pub struct SampleGraph {
    pub loss: Var,
    pub terms: [Option<Var>; 3],
    pub slots: Var,
    pub attention: Var,
    pub recon: Reconstructions,
}

pub fn sample_graph(
    tape: &mut Tape,
    bound: &Bound,
    model: &MfresaModel,
    targets: &Targets,
    noise: &Array,
) -> Result<SampleGraph> {
    let config = &model.config;
    let patches = tape.constant(targets.patches.clone());
    let features = encode(tape, bound, config, patches)?;
    let z = tape.constant(noise.clone());
    let sa = slot_attention::forward(tape, bound, &config.slot, features, z)?;
    let recon = decode(tape, bound, config, sa.slots)?;
    let (loss, terms) = loss_mfresa(tape, targets, &recon, config.weights)?;
    let attention = *sa.attention.last().expect("iterations >= 1");
    Ok(SampleGraph {
        loss,
        terms,
        slots: sa.slots,
        attention,
        recon,
    })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Linear learning-rate warmup length in steps.
    pub warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 8,
            seed: 0,
            adam: AdamConfig {
                learning_rate: 2e-3,
                ..AdamConfig::default()
            },
            warmup: 20,
        }
    }
}

/// Loss per step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<LossTerms>,
}

/// Trains `model` in place on precomputed targets. Deterministic per seed.
pub fn train(
    model: &mut MfresaModel,
    data: &[Targets],
    config: &TrainConfig,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if config.steps == 0 || config.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "steps and batch size must be >= 1".to_string(),
        ));
    }
    let mut rng = seeded(derive_seed(config.seed, "mfresa-batches"));
    let mut adam_config = config.adam;
    let mut adam = Adam::new(adam_config);
    let mut report = TrainReport::default();
    let inv_b = 1.0 / config.batch_size as f64;
    for step in 0..config.steps {
        let ramp = if config.warmup == 0 {
            1.0
        } else {
            ((step + 1) as f64 / config.warmup as f64).min(1.0)
        };
        adam_config.learning_rate = config.adam.learning_rate * ramp;
        adam.set_config(adam_config);

        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, true);
        let mut total: Option<Var> = None;
        let mut terms = LossTerms::default();
        for _ in 0..config.batch_size {
            let sample = &data[rng.random_range(0..data.len())];
            let noise = normal_array(
                &mut rng,
                &[model.config.slot.k, model.config.slot.d_slot],
                1.0,
            );
            let g = sample_graph(&mut tape, &bound, model, sample, &noise)?;
            for (i, t) in g.terms.iter().enumerate() {
                if let Some(t) = t {
                    let v = tape.value(*t).data()[0] * inv_b;
                    match i {
                        0 => terms.image += v,
                        1 => terms.feature += v,
                        _ => terms.hog += v,
                    }
                }
            }
            total = Some(match total {
                Some(acc) => tape.add(acc, g.loss)?,
                None => g.loss,
            });
        }
        let loss = tape.scale(total.expect("batch_size >= 1"), inv_b);
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        terms.total = value;
        let grads = tape.backward(loss)?;
        adam.step(&mut model.params, &bound, &grads)?;
        report.curve.push(terms);
    }
    Ok(report)
}

/// Slots, final attention (`k x n`) and, per enabled decoder, alpha (`k x n`)
/// for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub slots: Array,
    pub attention: Array,
    pub alpha: Option<Array>,
    pub loss: f64,
}

pub fn infer(model: &MfresaModel, targets: &Targets, seed: u64) -> Result<Inference> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, false);
    let noise = slot_attention::initial_noise(&model.config.slot, seed);
    let g = sample_graph(&mut tape, &bound, model, targets, &noise)?;
    let alpha = match g.recon.first_alpha() {
        Some(a) => Some(tape.value(a).transpose()?),
        None => None,
    };
    Ok(Inference {
        slots: tape.value(g.slots).clone(),
        attention: tape.value(g.attention).transpose()?,
        alpha,
        loss: tape.value(g.loss).data()[0],
    })
}

/// Pixel-resolution slot masks of one image.
pub fn pixel_masks(
    model: &MfresaModel,
    inference: &Inference,
    source: MaskSource,
) -> Result<MaskSet> {
    let weights = match source {
        MaskSource::Attention => &inference.attention,
        MaskSource::DecoderAlpha => inference
            .alpha
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("no decoder alpha available".to_string()))?,
    };
    Ok(masks_from_attention(weights, model.config.grid())?.upsample(model.config.patch))
}

/// Mean matched IoU between pixel slot masks and object masks over a set of
/// images, each given as targets plus its object masks.
pub fn matched_miou(
    model: &MfresaModel,
    images: &[(Targets, Vec<BinaryMask>)],
    source: MaskSource,
    seed: u64,
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Empty("evaluation images"));
    }
    let mut total = 0.0;
    for (i, (t, objects)) in images.iter().enumerate() {
        let inference = infer(model, t, derive_seed(seed, &format!("eval-{}", i)))?;
        let pred = pixel_masks(model, &inference, source)?;
        let gt = MaskSet::new(objects.clone(), MaskRole::Grounding)?;
        total += miou_matched(&pred, &gt)?;
    }
    Ok(total / images.len() as f64)
}
