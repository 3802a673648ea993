//! Question answering from slots through a connector and an answer head.
//!
//! The connector maps every slot into the probe width (one linear layer, or
//! two with GELU in between). The default head embeds the question as the
//! mean of its token embeddings, lets it attend over the projected slots and
//! classifies `[pooled, question]` into a closed answer vocabulary. The
//! `MeanPoolLinear` head ignores the question and classifies the mean
//! projected slot, which with a one-layer connector is plain linear probing.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::array::Array;
use crate::attribution::SlotModel;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{init_linear, init_mlp, linear, mlp, Adam, AdamConfig, Bound, Params};
use crate::rng::{derive_seed, normal_array, seeded};

/// Closed, ordered word list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct Vocab {
    words: Vec<String>,
}

impl Vocab {
    /// Duplicates are dropped; first occurrence keeps its index.
    pub fn new<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut out: Vec<String> = Vec::new();
        for w in words {
            let w = w.into();
            if !out.contains(&w) {
                out.push(w);
            }
        }
        Self { words: out }
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn word(&self, i: usize) -> Option<&str> {
        self.words.get(i).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuestionEncoding {
    pub ids: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum HeadKind {
    #[default]
    CrossAttention,
    MeanPoolLinear,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeConfig {
    pub k: usize,
    pub d_slot: usize,
    /// 1 or 2 layers.
    pub connector_depth: usize,
    pub connector_hidden: usize,
    pub d_model: usize,
    pub head: HeadKind,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            k: 4,
            d_slot: 32,
            connector_depth: 2,
            connector_hidden: 64,
            d_model: 32,
            head: HeadKind::CrossAttention,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.connector_depth) {
            return Err(Error::InvalidConfig(format!(
                "connector depth must be 1 or 2, got {}",
                self.connector_depth
            )));
        }
        if self.k == 0 || self.d_slot == 0 || self.d_model == 0 || self.connector_hidden == 0 {
            return Err(Error::InvalidConfig(
                "probe widths and k must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// A probe with its parameters and vocabularies.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub config: ProbeConfig,
    pub params: Params,
    pub questions: Vocab,
    pub answers: Vocab,
}

const CONNECTOR: &str = "probe.conn";

fn is_connector(name: &str) -> bool {
    name.starts_with("probe.conn.")
}

impl Probe {
    pub fn new(config: ProbeConfig, questions: Vocab, answers: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if questions.is_empty() || answers.is_empty() {
            return Err(Error::Empty("probe vocabulary"));
        }
        let mut rng = seeded(seed);
        let mut params = Params::new();
        let d = config.d_model;
        match config.connector_depth {
            1 => init_mlp(&mut params, &mut rng, CONNECTOR, &[config.d_slot, d]),
            _ => init_mlp(
                &mut params,
                &mut rng,
                CONNECTOR,
                &[config.d_slot, config.connector_hidden, d],
            ),
        }
        match config.head {
            HeadKind::CrossAttention => {
                params.insert(
                    "probe.embed",
                    normal_array(&mut rng, &[questions.len(), d], 1.0),
                );
                init_linear(&mut params, &mut rng, "probe.head.q", d, d);
                init_linear(&mut params, &mut rng, "probe.head.k", d, d);
                init_linear(
                    &mut params,
                    &mut rng,
                    "probe.head.cls",
                    2 * d,
                    answers.len(),
                );
            }
            HeadKind::MeanPoolLinear => {
                init_linear(&mut params, &mut rng, "probe.head.cls", d, answers.len());
            }
        }
        Ok(Self {
            config,
            params,
            questions,
            answers,
        })
    }

    /// Whitespace-tokenizes `text`; every token must be in the vocabulary.
    pub fn encode(&self, text: &str) -> Result<QuestionEncoding> {
        let mut ids = Vec::new();
        let mut unknown = Vec::new();
        for w in text.split_whitespace() {
            match self.questions.index(w) {
                Some(i) => ids.push(i),
                None => unknown.push(w.to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownTokens(unknown));
        }
        if ids.is_empty() {
            return Err(Error::Empty("question"));
        }
        Ok(QuestionEncoding { ids })
    }

    pub fn answer_index(&self, answer: &str) -> Result<usize> {
        self.answers
            .index(answer)
            .ok_or_else(|| Error::UnknownAnswer(answer.to_string()))
    }

    /// Records the probe on `tape`; `slots` is `k x d_slot`, output `1 x answers`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        slots: Var,
        question: &QuestionEncoding,
    ) -> Result<Var> {
        let (_, width) = tape.value(slots).expect2("probe_forward")?;
        if width != self.config.d_slot {
            return Err(Error::shape(
                "probe_forward",
                format!(
                    "slot width {} but connector expects {}",
                    width, self.config.d_slot
                ),
            ));
        }
        let projected = mlp(tape, bound, CONNECTOR, self.config.connector_depth, slots)?;
        match self.config.head {
            HeadKind::MeanPoolLinear => {
                let pooled = tape.mean(projected, 0)?;
                linear(tape, bound, "probe.head.cls", pooled)
            }
            HeadKind::CrossAttention => {
                if let Some(&bad) = question.ids.iter().find(|&&i| i >= self.questions.len()) {
                    return Err(Error::InvalidConfig(format!(
                        "question token id {} outside vocabulary",
                        bad
                    )));
                }
                let embed = bound.var("probe.embed")?;
                let tokens = tape.gather_rows(embed, &question.ids)?;
                let q_embed = tape.mean(tokens, 0)?;
                let q = linear(tape, bound, "probe.head.q", q_embed)?;
                let keys = linear(tape, bound, "probe.head.k", projected)?;
                let kt = tape.transpose(keys)?;
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scale(scores, 1.0 / libm::sqrt(self.config.d_model as f64));
                let weights = tape.softmax(scores, 1)?;
                let pooled = tape.matmul(weights, projected)?;
                let joint = tape.concat(&[pooled, q_embed], 1)?;
                linear(tape, bound, "probe.head.cls", joint)
            }
        }
    }

    /// Answer logits for concrete slots.
    pub fn logits(&self, slots: &Array, question: &QuestionEncoding) -> Result<Array> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let s = tape.constant(slots.clone());
        let y = self.forward(&mut tape, &bound, s, question)?;
        Ok(tape.value(y).clone())
    }

    /// Standard-normal stand-in slots for the blind baseline.
    pub fn blind_slots(&self, seed: u64) -> Array {
        normal_array(&mut seeded(seed), &[self.config.k, self.config.d_slot], 1.0)
    }

    /// Logits with the slots replaced by seeded noise.
    pub fn blind_logits(&self, question: &QuestionEncoding, seed: u64) -> Result<Array> {
        self.logits(&self.blind_slots(seed), question)
    }

    pub fn model<'a>(&'a self, question: &'a QuestionEncoding) -> ProbeModel<'a> {
        ProbeModel {
            probe: self,
            question,
        }
    }

    pub fn blind_model<'a>(&'a self, question: &'a QuestionEncoding, seed: u64) -> BlindProbe<'a> {
        BlindProbe {
            probe: self,
            question,
            noise: self.blind_slots(seed),
        }
    }
}

/// The probe with a fixed question, as a function of the slots.
pub struct ProbeModel<'a> {
    probe: &'a Probe,
    question: &'a QuestionEncoding,
}

impl SlotModel for ProbeModel<'_> {
    fn logits(&self, tape: &mut Tape, slots: Var) -> Result<Var> {
        let bound = self.probe.params.bind(tape, false);
        self.probe.forward(tape, &bound, slots, self.question)
    }
}

/// The blind probe as a function of the slots: the slots it is given are
/// never read, so their gradient is zero.
pub struct BlindProbe<'a> {
    probe: &'a Probe,
    question: &'a QuestionEncoding,
    noise: Array,
}

impl SlotModel for BlindProbe<'_> {
    fn logits(&self, tape: &mut Tape, _slots: Var) -> Result<Var> {
        let bound = self.probe.params.bind(tape, false);
        let noise = tape.constant(self.noise.clone());
        self.probe.forward(tape, &bound, noise, self.question)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeExample {
    pub slots: Array,
    pub question: QuestionEncoding,
    pub answer: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of the steps that update the connector alone.
    pub connector_fraction: f64,
    /// Replace the slots of every example with fresh noise.
    pub blind: bool,
    pub adam: AdamConfig,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 16,
            seed: 0,
            connector_fraction: 0.1,
            blind: false,
            adam: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
        }
    }
}

impl ProbeTrainConfig {
    pub fn connector_steps(&self) -> usize {
        libm::round(self.steps as f64 * self.connector_fraction) as usize
    }
}

/// Mean cross-entropy per step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeTrainReport {
    pub losses: Vec<f64>,
}

/// Trains `probe` in place: the first `connector_fraction` of the steps
/// update only the connector, the rest update everything.
pub fn train_probe(
    probe: &mut Probe,
    data: &[ProbeExample],
    config: &ProbeTrainConfig,
) -> Result<ProbeTrainReport> {
    if data.is_empty() {
        return Err(Error::Empty("probe training set"));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".to_string()));
    }
    let mut rng = seeded(derive_seed(config.seed, "probe-batches"));
    let split = config.connector_steps();
    let mut adam = Adam::new(config.adam);
    let mut report = ProbeTrainReport::default();
    for step in 0..config.steps {
        if step == split && split > 0 {
            // fresh moments for the joint phase
            adam = Adam::new(config.adam);
        }
        let mut tape = Tape::new();
        let bound = if step < split {
            probe.params.bind_selected(&mut tape, is_connector)
        } else {
            probe.params.bind(&mut tape, true)
        };
        let mut total: Option<Var> = None;
        for b in 0..config.batch_size {
            let ex = &data[rng.random_range(0..data.len())];
            let slots = if config.blind {
                probe.blind_slots(derive_seed(config.seed, &format!("blind-{}-{}", step, b)))
            } else {
                ex.slots.clone()
            };
            let s = tape.constant(slots);
            let logits = probe.forward(&mut tape, &bound, s, &ex.question)?;
            let flat = tape.reshape(logits, &[probe.answers.len()])?;
            let logp = tape.log_softmax(flat, 0)?;
            let term = tape.pick(logp, ex.answer)?;
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
        }
        let total = total.expect("batch_size >= 1");
        let loss = tape.scale(total, -1.0 / config.batch_size as f64);
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        let grads = tape.backward(loss)?;
        adam.step(&mut probe.params, &bound, &grads)?;
        report.losses.push(value);
    }
    Ok(report)
}

/// Index of the largest logit (lowest index on ties).
pub fn predict(logits: &Array) -> usize {
    logits.argmax().unwrap_or(0)
}
