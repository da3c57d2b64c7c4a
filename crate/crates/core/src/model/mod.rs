//! Transformer score network.

mod checkpoint;
pub mod nn;

use std::ops::Range;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{KernelVariant, NoiseSchedule};
use crate::rng;
use crate::score::{ScoreModel, ScoreTable};
use crate::seq::TokenSequence;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use nn::{Batch, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub feedforward_dim: usize,
    pub max_length: usize,
    pub alphabet_size: usize,
    pub time_conditioned: bool,
    pub variant: KernelVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            embed_dim: 128,
            heads: 4,
            feedforward_dim: 512,
            max_length: 64,
            alphabet_size: 21,
            time_conditioned: false,
            variant: KernelVariant::Mask,
        }
    }
}

impl ModelConfig {
    /// Defaults for a kernel variant: only the uniform variant sees `t`.
    pub fn for_variant(variant: KernelVariant) -> Self {
        Self {
            variant,
            time_conditioned: variant == KernelVariant::Uniform,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.layers == 0 || self.embed_dim == 0 || self.heads == 0 || self.feedforward_dim == 0 {
            return bad("layers, embed_dim, heads and feedforward_dim must be >= 1".into());
        }
        if self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.time_conditioned && self.embed_dim % 2 != 0 {
            return bad("a time-conditioned model needs an even embed_dim".into());
        }
        if self.max_length == 0 || self.alphabet_size < 2 {
            return bad("max_length must be >= 1 and alphabet_size >= 2".into());
        }
        if self.time_conditioned == self.variant.is_absorbing() {
            return bad(format!(
                "the {} variant must {}be time conditioned",
                self.variant,
                if self.variant.is_absorbing() { "not " } else { "" }
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Where each named tensor lives in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub config: ModelConfig,
    tensors: Vec<TensorSpec>,
    pub(crate) tok_emb: Range<usize>,
    pub(crate) pos_emb: Range<usize>,
    pub(crate) time_freq: Range<usize>,
    pub(crate) time_w: Range<usize>,
    pub(crate) time_b: Range<usize>,
    pub(crate) blocks: Vec<BlockLayout>,
    pub(crate) lnf_g: Range<usize>,
    pub(crate) lnf_b: Range<usize>,
    pub(crate) head_w: Range<usize>,
    pub(crate) head_b: Range<usize>,
}

impl Layout {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut tensors = Vec::new();
        let mut add = |name: String, shape: Vec<usize>| {
            let start: usize = tensors.iter().map(TensorSpec::numel).sum();
            let spec = TensorSpec { name, shape };
            let r = start..start + spec.numel();
            tensors.push(spec);
            r
        };
        let (e, f, n) = (config.embed_dim, config.feedforward_dim, config.alphabet_size);
        let tok_emb = add("tok_emb".into(), vec![n, e]);
        let pos_emb = add("pos_emb".into(), vec![config.max_length, e]);
        let (time_freq, time_w, time_b) = if config.time_conditioned {
            (
                add("time.freq".into(), vec![e / 2]),
                add("time.proj.w".into(), vec![e, e]),
                add("time.proj.b".into(), vec![e]),
            )
        } else {
            (0..0, 0..0, 0..0)
        };
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut b = |s: &str, shape: Vec<usize>| add(format!("blocks.{l}.{s}"), shape);
            blocks.push(BlockLayout {
                ln1_g: b("ln1.g", vec![e]),
                ln1_b: b("ln1.b", vec![e]),
                wq: b("attn.wq", vec![e, e]),
                bq: b("attn.bq", vec![e]),
                wk: b("attn.wk", vec![e, e]),
                bk: b("attn.bk", vec![e]),
                wv: b("attn.wv", vec![e, e]),
                bv: b("attn.bv", vec![e]),
                wo: b("attn.wo", vec![e, e]),
                bo: b("attn.bo", vec![e]),
                ln2_g: b("ln2.g", vec![e]),
                ln2_b: b("ln2.b", vec![e]),
                w1: b("ff.w1", vec![e, f]),
                b1: b("ff.b1", vec![f]),
                w2: b("ff.w2", vec![f, e]),
                b2: b("ff.b2", vec![e]),
            });
        }
        let lnf_g = add("ln_f.g".into(), vec![e]);
        let lnf_b = add("ln_f.b".into(), vec![e]);
        let head_w = add("head.w".into(), vec![e, n]);
        let head_b = add("head.b".into(), vec![n]);
        Ok(Self {
            config,
            tensors,
            tok_emb,
            pos_emb,
            time_freq,
            time_w,
            time_b,
            blocks,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
        })
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(TensorSpec::numel).sum()
    }

    /// `(name, range)` for every tensor, in storage order.
    pub fn ranges(&self) -> Vec<(String, Range<usize>)> {
        let mut start = 0;
        self.tensors
            .iter()
            .map(|t| {
                let r = start..start + t.numel();
                start = r.end;
                (t.name.clone(), r)
            })
            .collect()
    }
}

/// Deterministic initialization: scaled normal weights (`1/sqrt(fan_in)`,
/// shrunk tenfold for the output head), unit layer-norm gains, zero biases,
/// log-spaced time frequencies.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Vec<f32>> {
    let layout = Layout::new(*config)?;
    let mut r = rng::stream(seed, "model/init");
    let mut params = vec![0.0f32; layout.param_count()];
    for ((name, range), spec) in layout.ranges().into_iter().zip(layout.tensors()) {
        let slot = &mut params[range];
        let leaf = name.rsplit('.').next().unwrap_or(&name);
        if name == "time.freq" {
            let half = slot.len();
            for (k, v) in slot.iter_mut().enumerate() {
                *v = (k as f64 / half as f64 * 100f64.ln()).exp() as f32;
            }
        } else if leaf == "g" {
            slot.fill(1.0);
        } else if spec.shape.len() == 2 {
            let std = 1.0 / (spec.shape[0] as f64).sqrt();
            let std = if name.ends_with("_emb") {
                1.0 / (config.embed_dim as f64).sqrt()
            } else if name == "head.w" {
                // start close to the all-ones score table
                0.1 * std
            } else {
                std
            };
            for v in slot.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut r);
                *v = (z * std) as f32;
            }
        }
    }
    Ok(params)
}

/// Score network with a frozen parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    layout: Layout,
    params: Vec<f32>,
    schedule: NoiseSchedule,
}

impl ScoreNetwork {
    pub fn new(config: ModelConfig, params: Vec<f32>, schedule: NoiseSchedule) -> Result<Self> {
        let layout = Layout::new(config)?;
        if params.len() != layout.param_count() {
            return Err(Error::LengthMismatch {
                context: "parameter vector vs model config",
                left: params.len(),
                right: layout.param_count(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self {
            layout,
            params,
            schedule,
        })
    }

    pub fn init(config: ModelConfig, seed: u64, schedule: NoiseSchedule) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Self::new(config, params, schedule)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn time_embedding(&self, t: f64) -> Result<Vec<f32>> {
        if !self.config().time_conditioned {
            return Err(Error::InvalidArgument("time embedding on a model without time conditioning".into()));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        Ok(nn::time_embedding(&self.layout, &self.params, t))
    }

    pub(crate) fn check_inputs(config: &ModelConfig, xs: &[TokenSequence], times: Option<&[f64]>) -> Result<()> {
        match (config.time_conditioned, times) {
            (true, None) => return Err(Error::InvalidArgument("this model needs a time input".into())),
            (false, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "this model takes no time input (time enters analytically)".into(),
                ))
            }
            (true, Some(ts)) => {
                if ts.len() != xs.len() {
                    return Err(Error::LengthMismatch {
                        context: "times vs sequences",
                        left: ts.len(),
                        right: xs.len(),
                    });
                }
                if let Some(&t) = ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                    return Err(Error::TimeOutOfRange(t));
                }
            }
            (false, None) => {}
        }
        for x in xs {
            if x.is_empty() {
                return Err(Error::EmptySequence);
            }
            if x.len() > config.max_length {
                return Err(Error::InvalidArgument(format!(
                    "sequence length {} exceeds max_length {}",
                    x.len(),
                    config.max_length
                )));
            }
            if let Some(p) = x.ids().iter().position(|&t| t >= config.alphabet_size) {
                return Err(Error::TokenOutOfRange {
                    id: x.get(p),
                    position: p,
                    size: config.alphabet_size,
                });
            }
        }
        Ok(())
    }

    /// Raw network outputs, one `len x n` block per sequence.
    pub fn raw_outputs(&self, xs: &[TokenSequence], times: Option<&[f64]>) -> Result<Vec<Vec<f32>>> {
        Self::check_inputs(self.config(), xs, times)?;
        let ids: Vec<&[usize]> = xs.iter().map(|x| x.ids()).collect();
        let batch = Batch::new(&ids, times);
        let (out, _) = nn::forward(&self.layout, &self.params, &batch);
        let n = self.config().alphabet_size;
        Ok(batch.starts.iter().map(|r| out[r.start * n..r.end * n].to_vec()).collect())
    }

    /// `exp` of the raw outputs with current-token entries set to 1. For
    /// absorbing variants this is independent of time.
    pub fn score_forward(&self, x_t: &TokenSequence, t: Option<f64>) -> Result<ScoreTable> {
        let times = t.map(|t| vec![t]);
        let raw = self.raw_outputs(std::slice::from_ref(x_t), times.as_deref())?;
        table_from_raw(&raw[0], 0.0, self.config().alphabet_size, x_t)
    }
}

/// `log alpha(t)`: the analytic time factor of absorbing-variant scores.
pub fn log_time_factor(variant: KernelVariant, schedule: &NoiseSchedule, t: f64) -> Result<f64> {
    if !variant.is_absorbing() {
        return Ok(0.0);
    }
    let sigma = schedule.total_noise(t)?;
    if !(sigma > 0.0) {
        return Err(Error::TimeOutOfRange(t));
    }
    Ok(-sigma.exp_m1().ln())
}

fn table_from_raw(raw: &[f32], shift: f64, n: usize, x: &TokenSequence) -> Result<ScoreTable> {
    let values = raw.iter().map(|&r| (f64::from(r) + shift).exp()).collect();
    ScoreTable::new(values, n, x)
}

impl ScoreModel for ScoreNetwork {
    fn vocab(&self) -> usize {
        self.config().alphabet_size
    }

    fn score(&self, x_t: &TokenSequence, t: f64) -> Result<ScoreTable> {
        Ok(self.score_batch(std::slice::from_ref(x_t), &[t])?.remove(0))
    }

    fn score_batch(&self, xs: &[TokenSequence], ts: &[f64]) -> Result<Vec<ScoreTable>> {
        if ts.len() != xs.len() {
            return Err(Error::LengthMismatch {
                context: "times vs sequences",
                left: ts.len(),
                right: xs.len(),
            });
        }
        let cfg = *self.config();
        let mut out = Vec::with_capacity(xs.len());
        // bounded batches keep activation memory flat
        for (chunk, tchunk) in xs.chunks(128).zip(ts.chunks(128)) {
            let raw = self.raw_outputs(chunk, cfg.time_conditioned.then_some(tchunk))?;
            for ((r, x), &t) in raw.iter().zip(chunk).zip(tchunk) {
                let shift = log_time_factor(cfg.variant, &self.schedule, t)?;
                out.push(table_from_raw(r, shift, cfg.alphabet_size, x)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn tiny(variant: KernelVariant) -> ModelConfig {
        ModelConfig {
            layers: 2,
            embed_dim: 16,
            heads: 2,
            feedforward_dim: 24,
            max_length: 12,
            alphabet_size: 21,
            ..ModelConfig::for_variant(variant)
        }
    }

    fn random_inputs(seed: u64, count: usize) -> Vec<TokenSequence> {
        let mut r = rng::from_seed(seed);
        (0..count)
            .map(|_| {
                let len = r.gen_range(1..=12);
                TokenSequence::new((0..len).map(|_| r.gen_range(0..21)).collect(), 21).unwrap()
            })
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { heads: 3, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { time_conditioned: true, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig::for_variant(KernelVariant::Uniform).validate().is_ok());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = tiny(KernelVariant::Mask);
        let s = NoiseSchedule::default();
        let a = ScoreNetwork::init(cfg, 1, s).unwrap();
        let b = ScoreNetwork::init(cfg, 1, s).unwrap();
        let c = ScoreNetwork::init(cfg, 2, s).unwrap();
        let x = &random_inputs(0, 1)[0];
        assert_eq!(a.score_forward(x, None).unwrap(), b.score_forward(x, None).unwrap());
        assert_ne!(a.score_forward(x, None).unwrap(), c.score_forward(x, None).unwrap());
    }

    #[test]
    fn initial_scores_are_sane_and_positive() {
        let s = NoiseSchedule::default();
        for variant in [KernelVariant::Mask, KernelVariant::Uniform] {
            let cfg = ModelConfig::for_variant(variant);
            let net = ScoreNetwork::init(cfg, 3, s).unwrap();
            let t = cfg.time_conditioned.then_some(0.5);
            let mut total = 0.0;
            let mut count = 0;
            for x in random_inputs(4, 100) {
                let table = net.score_forward(&x, t).unwrap();
                assert!(table.is_strictly_positive());
                for (i, &tok) in x.ids().iter().enumerate() {
                    assert_eq!(table.get(i, tok), 1.0);
                    if variant == KernelVariant::Mask && tok == 20 {
                        // residue columns are a distribution at masked positions
                        let mass: f64 = (0..20).map(|y| table.get(i, y)).sum();
                        assert!((mass - 1.0).abs() < 1e-5, "{mass}");
                    }
                }
                total += table.values().iter().sum::<f64>();
                count += table.values().len();
            }
            let mean = total / count as f64;
            if variant == KernelVariant::Uniform {
                assert!((0.5..=2.0).contains(&mean), "mean entry {mean}");
            }
        }
    }

    #[test]
    fn time_inputs_are_checked() {
        let s = NoiseSchedule::default();
        let x = &random_inputs(5, 1)[0];
        let mask = ScoreNetwork::init(tiny(KernelVariant::Mask), 0, s).unwrap();
        assert!(mask.score_forward(x, Some(0.5)).is_err());
        assert!(mask.time_embedding(0.5).is_err());
        let uni = ScoreNetwork::init(tiny(KernelVariant::Uniform), 0, s).unwrap();
        assert!(uni.score_forward(x, None).is_err());
        assert!(uni.score_forward(x, Some(0.5)).is_ok());
    }

    #[test]
    fn time_embedding_norms_differ_at_ends() {
        let s = NoiseSchedule::default();
        let uni = ScoreNetwork::init(tiny(KernelVariant::Uniform), 0, s).unwrap();
        let norm = |v: Vec<f32>| v.iter().map(|x| x * x).sum::<f32>().sqrt();
        let (n0, n1) = (norm(uni.time_embedding(0.0).unwrap()), norm(uni.time_embedding(1.0).unwrap()));
        assert!((n0 - n1).abs() > 1e-3, "{n0} vs {n1}");
        assert_eq!(uni.time_embedding(0.3).unwrap(), uni.time_embedding(0.3).unwrap());
    }

    #[test]
    fn absorbing_scores_scale_analytically_with_time() {
        let s = NoiseSchedule::default();
        let net = ScoreNetwork::init(tiny(KernelVariant::Mask), 0, s).unwrap();
        let x = &random_inputs(6, 1)[0];
        let base = net.score_forward(x, None).unwrap();
        for t in [0.1, 0.5, 0.9] {
            let alpha = log_time_factor(KernelVariant::Mask, &s, t).unwrap().exp();
            let scored = net.score(x, t).unwrap();
            for i in 0..x.len() {
                for y in 0..21 {
                    let want = if y == x.get(i) { 1.0 } else { base.get(i, y) * alpha };
                    assert!((scored.get(i, y) - want).abs() <= 1e-12 * want.max(1.0));
                }
            }
        }
    }

    #[test]
    fn batched_and_single_forward_agree() {
        let s = NoiseSchedule::default();
        let net = ScoreNetwork::init(tiny(KernelVariant::Uniform), 9, s).unwrap();
        let xs = random_inputs(7, 6);
        let ts: Vec<f64> = (0..6).map(|k| k as f64 / 6.0 + 0.01).collect();
        let batch = net.score_batch(&xs, &ts).unwrap();
        for ((x, &t), table) in xs.iter().zip(&ts).zip(&batch) {
            let single = net.score(x, t).unwrap();
            for (a, b) in single.values().iter().zip(table.values()) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
            }
        }
    }
}
