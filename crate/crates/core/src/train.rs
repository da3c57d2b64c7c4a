//! Denoising score entropy objective and the training loop.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::entropy_constant;
use crate::files::write_atomic;
use crate::model::nn::{self, c, Batch, Real};
use crate::model::{init_params, log_time_factor, Checkpoint, Layout, ModelConfig, ScoreNetwork};
use crate::noise::{forward_sample, NoiseSchedule, TransitionKernel};
use crate::rng;
use crate::score::ScoreTable;
use crate::seq::{Alphabet, GermlinePair, TokenSequence};

/// Smallest training time; at `t = 0` the loss carries no signal.
pub const T_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub max_steps: u64,
    pub grad_clip_norm: f64,
    pub ema_decay: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub eval_every: u64,
    /// Noised validation examples drawn once and reused at every evaluation.
    pub validation_examples: usize,
    /// Cosine decay to zero over the post-warmup steps. Off by default.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 3e-4,
            warmup_steps: 500,
            max_steps: 5000,
            grad_clip_norm: 2.0,
            ema_decay: 0.999,
            weight_decay: 0.01,
            seed: 0,
            eval_every: 250,
            validation_examples: 512,
            cosine_decay: false,
        }
    }
}

impl TrainConfig {
    /// Batch 256, learning rate 2e-4, clip 2, EMA 0.9999.
    pub fn paper_preset() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 2e-4,
            ema_decay: 0.9999,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("grad_clip_norm", self.grad_clip_norm),
            ("eval_every", self.eval_every as f64),
            ("validation_examples", self.validation_examples as f64),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("learning_rate and weight_decay must be >= 0".into()));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::InvalidArgument(format!("ema_decay {} is not in (0, 1)", self.ema_decay)));
        }
        Ok(())
    }

    /// Linear warmup: `learning_rate * s / warmup_steps` for update `s`,
    /// then constant or cosine-decayed.
    pub fn learning_rate_at(&self, s: u64) -> f64 {
        if s < self.warmup_steps {
            self.learning_rate * s as f64 / self.warmup_steps as f64
        } else if self.cosine_decay && self.max_steps > self.warmup_steps {
            let frac = (s - self.warmup_steps) as f64 / (self.max_steps - self.warmup_steps) as f64;
            self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * frac.min(1.0)).cos())
        } else {
            self.learning_rate
        }
    }
}

/// Uniform time on `[0, 1]` floored at [`T_FLOOR`].
pub fn sample_time<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen::<f64>().max(T_FLOOR)
}

/// `count` times sharing one uniform offset, `(u + k / count) mod 1`. Each
/// is marginally uniform; together they cover `[0, 1]` evenly.
pub fn stratified_times<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    let u: f64 = rng.gen();
    (0..count)
        .map(|k| ((u + k as f64 / count as f64) % 1.0).max(T_FLOOR))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_position: Vec<f64>,
    /// Positions with at least one supervised entry.
    pub effective_tokens: usize,
}

/// One supervised entry: flat index `i * n + y`, rate weight `w` and
/// target ratio `a`.
#[derive(Debug, Clone, Copy)]
struct Term {
    position: usize,
    index: usize,
    weight: f64,
    target: f64,
}

fn dse_terms(
    kernel: &TransitionKernel,
    x0: &TokenSequence,
    x_t: &TokenSequence,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<Vec<Term>> {
    if x0.len() != x_t.len() {
        return Err(Error::LengthMismatch {
            context: "clean vs noised sequence",
            left: x0.len(),
            right: x_t.len(),
        });
    }
    kernel.check_length(x0.len())?;
    let sigma = schedule.total_noise(t)?;
    let rate = schedule.rate(t)?;
    let n = kernel.size();
    let mut terms = Vec::new();
    for (i, &xt) in x_t.ids().iter().enumerate() {
        let row = kernel.marginal_row(i, x0.get(i), sigma)?;
        let here = row.get(xt).copied().unwrap_or(0.0);
        if !(here > 0.0) {
            return Err(Error::ImpossibleState {
                variant: kernel.variant().name(),
                position: i,
                token: xt,
            });
        }
        for y in kernel.states() {
            let w = kernel.rate(i, y, xt);
            if y == xt || w == 0.0 {
                continue;
            }
            terms.push(Term {
                position: i,
                index: i * n + y,
                weight: rate * w,
                target: row[y] / here,
            });
        }
    }
    Ok(terms)
}

fn term_value(term: &Term, log_s: f64, include_constant: bool) -> f64 {
    let a = term.target;
    let mut v = log_s.exp() - a * log_s;
    if include_constant {
        v += entropy_constant(a);
    }
    term.weight * v
}

/// Score entropy for one noised sequence: per position `i` and candidate
/// `y != x_t^i`, `Q_t(x_t, y) (s - a log s)`.
pub fn dse_loss(
    score: &ScoreTable,
    kernel: &TransitionKernel,
    pair: &GermlinePair,
    x_t: &TokenSequence,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<LossBreakdown> {
    if score.len() != x_t.len() || score.vocab() != kernel.size() {
        return Err(Error::LengthMismatch {
            context: "score table vs noised sequence",
            left: score.values().len(),
            right: x_t.len() * kernel.size(),
        });
    }
    let terms = dse_terms(kernel, pair.observed(), x_t, t, schedule)?;
    let mut per_position = vec![0.0; x_t.len()];
    let mut supervised = vec![false; x_t.len()];
    for term in &terms {
        let s = score.values()[term.index];
        let v = if term.target == 0.0 {
            term.weight * s
        } else {
            term_value(term, s.ln(), false)
        };
        per_position[term.position] += v;
        supervised[term.position] = true;
    }
    let total: f64 = per_position.iter().sum();
    if !total.is_finite() {
        return Err(Error::NonFiniteIntegrand { t, position: 0 });
    }
    Ok(LossBreakdown {
        total,
        per_position,
        effective_tokens: supervised.iter().filter(|&&s| s).count(),
    })
}

/// Loss (optionally with `K(a)`) and its gradient with respect to
/// `log s`, for a full `d x n` table of log scores.
pub fn dse_loss_log_grad(
    log_scores: &[f64],
    kernel: &TransitionKernel,
    x0: &TokenSequence,
    x_t: &TokenSequence,
    t: f64,
    schedule: &NoiseSchedule,
    include_constant: bool,
    grad: &mut [f64],
) -> Result<f64> {
    let terms = dse_terms(kernel, x0, x_t, t, schedule)?;
    let mut total = 0.0;
    for term in &terms {
        let ls = log_scores[term.index];
        total += term_value(term, ls, include_constant);
        grad[term.index] += term.weight * (ls.exp() - term.target);
    }
    Ok(total)
}

/// A clean sequence, its kernel, a time and the noised draw.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedExample {
    pub kernel: TransitionKernel,
    pub x0: TokenSequence,
    pub t: f64,
    pub x_t: TokenSequence,
}

impl NoisedExample {
    pub fn draw<R: Rng + ?Sized>(
        kernel: TransitionKernel,
        x0: TokenSequence,
        schedule: &NoiseSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        let t = sample_time(rng);
        Self::draw_at(kernel, x0, t, schedule, rng)
    }

    pub fn draw_at<R: Rng + ?Sized>(
        kernel: TransitionKernel,
        x0: TokenSequence,
        t: f64,
        schedule: &NoiseSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        let x_t = forward_sample(&kernel, &x0, t, schedule, rng)?;
        Ok(Self { kernel, x0, t, x_t })
    }
}

/// Mean per-example loss over a batch and, if requested, its gradient with
/// respect to every network parameter.
pub fn loss_and_gradient<T: Real>(
    layout: &Layout,
    params: &[T],
    examples: &[NoisedExample],
    schedule: &NoiseSchedule,
    include_constant: bool,
    want_gradient: bool,
) -> Result<(f64, Option<Vec<T>>, f64)> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let cfg = &layout.config;
    let xs: Vec<TokenSequence> = examples.iter().map(|e| e.x_t.clone()).collect();
    let times: Vec<f64> = examples.iter().map(|e| e.t).collect();
    let time_input = cfg.time_conditioned.then_some(times.as_slice());
    ScoreNetwork::check_inputs(cfg, &xs, time_input)?;
    let ids: Vec<&[usize]> = xs.iter().map(|x| x.ids()).collect();
    let batch = Batch::new(&ids, time_input);
    let (out, cache) = nn::forward(layout, params, &batch);
    let n = cfg.alphabet_size;
    let inv_b = 1.0 / examples.len() as f64;
    let mut total = 0.0;
    let mut max_score = f64::NEG_INFINITY;
    let mut d_out = vec![T::zero(); out.len()];
    for (ex, range) in examples.iter().zip(&batch.starts) {
        let shift = log_time_factor(cfg.variant, schedule, ex.t)?;
        let block = range.start * n..range.end * n;
        let log_s: Vec<f64> = out[block.clone()]
            .iter()
            .map(|v| v.to_f64().expect("finite float") + shift)
            .collect();
        max_score = log_s.iter().copied().fold(max_score, f64::max);
        let mut g = vec![0.0; log_s.len()];
        total += dse_loss_log_grad(&log_s, &ex.kernel, &ex.x0, &ex.x_t, ex.t, schedule, include_constant, &mut g)?;
        for (d, gv) in d_out[block].iter_mut().zip(g) {
            *d = c(gv * inv_b);
        }
    }
    let loss = total * inv_b;
    let grad = want_gradient.then(|| nn::backward(layout, params, &batch, &cache, &d_out));
    Ok((loss, grad, max_score.exp()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Global norm of the gradient actually applied.
    pub applied_norm: f64,
}

/// Parameters, EMA shadow and optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    layout: Layout,
    config: TrainConfig,
    schedule: NoiseSchedule,
    alphabet: Alphabet,
    params: Vec<f32>,
    ema: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
    decay_mask: Vec<bool>,
    step: u64,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig, schedule: NoiseSchedule, alphabet: Alphabet) -> Result<Self> {
        let params = init_params(&model, config.seed)?;
        Self::from_parts(model, config, schedule, alphabet, params.clone(), params, 0)
    }

    /// Resume from a checkpoint. Optimizer moments are not stored and
    /// restart from zero.
    pub fn resume(checkpoint: &Checkpoint, config: TrainConfig, alphabet: Alphabet) -> Result<Self> {
        Self::from_parts(
            checkpoint.config,
            config,
            checkpoint.schedule,
            alphabet,
            checkpoint.params.clone(),
            checkpoint.ema.clone(),
            checkpoint.step,
        )
    }

    fn from_parts(
        model: ModelConfig,
        config: TrainConfig,
        schedule: NoiseSchedule,
        alphabet: Alphabet,
        params: Vec<f32>,
        ema: Vec<f32>,
        step: u64,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(model)?;
        if alphabet.size() != model.alphabet_size {
            return Err(Error::LengthMismatch {
                context: "alphabet vs model alphabet_size",
                left: alphabet.size(),
                right: model.alphabet_size,
            });
        }
        let mut decay_mask = vec![false; layout.param_count()];
        for ((_, range), spec) in layout.ranges().into_iter().zip(layout.tensors()) {
            if spec.shape.len() == 2 {
                decay_mask[range].fill(true);
            }
        }
        let count = params.len();
        Ok(Self {
            layout,
            config,
            schedule,
            alphabet,
            params,
            ema,
            m: vec![0.0; count],
            v: vec![0.0; count],
            decay_mask,
            step,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn ema(&self) -> &[f32] {
        &self.ema
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.layout.config,
            schedule: self.schedule,
            step: self.step,
            seed: self.config.seed,
            params: self.params.clone(),
            ema: self.ema.clone(),
        }
    }

    pub fn network(&self) -> Result<ScoreNetwork> {
        ScoreNetwork::new(self.layout.config, self.params.clone(), self.schedule)
    }

    pub fn ema_network(&self) -> Result<ScoreNetwork> {
        ScoreNetwork::new(self.layout.config, self.ema.clone(), self.schedule)
    }

    fn kernel_for(&self, pair: &GermlinePair) -> Result<TransitionKernel> {
        TransitionKernel::for_pair(self.layout.config.variant, &self.alphabet, pair)
    }

    /// Noise `pairs` at stratified times with a dedicated random stream.
    pub fn noised_examples(&self, pairs: &[&GermlinePair], label: &str) -> Result<Vec<NoisedExample>> {
        let mut r = rng::stream(self.config.seed, label);
        let times = stratified_times(pairs.len(), &mut r);
        pairs
            .iter()
            .zip(times)
            .map(|(p, t)| NoisedExample::draw_at(self.kernel_for(p)?, p.observed().clone(), t, &self.schedule, &mut r))
            .collect()
    }

    /// One optimizer update on a batch drawn (with replacement) from `data`.
    pub fn train_step(&mut self, data: &[GermlinePair]) -> Result<StepReport> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training data is empty".into()));
        }
        let next = self.step + 1;
        let mut r = rng::stream(self.config.seed, &format!("train/batch/{next}"));
        let picks: Vec<&GermlinePair> = (0..self.config.batch_size)
            .map(|_| &data[r.gen_range(0..data.len())])
            .collect();
        let examples = self.noised_examples(&picks, &format!("train/noise/{next}"))?;
        self.update(&examples)
    }

    /// One optimizer update on fixed noised examples.
    pub fn update(&mut self, examples: &[NoisedExample]) -> Result<StepReport> {
        let next = self.step + 1;
        let (loss, grad, max_score) = loss_and_gradient(&self.layout, &self.params, examples, &self.schedule, false, true)?;
        let mut grad = grad.expect("gradient requested");
        let grad_norm = grad.iter().map(|&g| f64::from(g) * f64::from(g)).sum::<f64>().sqrt();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: next,
                t_values: examples.iter().map(|e| e.t).collect(),
                max_score,
            });
        }
        let mut applied_norm = grad_norm;
        if grad_norm > self.config.grad_clip_norm {
            let k = (self.config.grad_clip_norm / grad_norm) as f32;
            grad.iter_mut().for_each(|g| *g *= k);
            applied_norm = grad.iter().map(|&g| f64::from(g) * f64::from(g)).sum::<f64>().sqrt();
        }
        let lr = self.config.learning_rate_at(next);
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let bc1 = 1.0 - b1.powf(next as f64);
        let bc2 = 1.0 - b2.powf(next as f64);
        let wd = self.config.weight_decay;
        for j in 0..self.params.len() {
            let g = f64::from(grad[j]);
            let m = b1 * f64::from(self.m[j]) + (1.0 - b1) * g;
            let v = b2 * f64::from(self.v[j]) + (1.0 - b2) * g * g;
            self.m[j] = m as f32;
            self.v[j] = v as f32;
            let mut p = f64::from(self.params[j]);
            if self.decay_mask[j] {
                p -= lr * wd * p;
            }
            p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            self.params[j] = p as f32;
        }
        let d = self.config.ema_decay;
        for (s, &p) in self.ema.iter_mut().zip(&self.params) {
            *s = (d * f64::from(*s) + (1.0 - d) * f64::from(p)) as f32;
        }
        self.step = next;
        Ok(StepReport {
            step: next,
            loss,
            lr,
            grad_norm,
            applied_norm,
        })
    }

    /// Mean loss including `K(a)` with the raw parameters.
    pub fn evaluate(&self, examples: &[NoisedExample]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in examples.chunks(128) {
            let (loss, _, _) = loss_and_gradient(&self.layout, &self.params, chunk, &self.schedule, true, false)?;
            total += loss * chunk.len() as f64;
        }
        Ok(total / examples.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    pub step: u64,
    pub split: String,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// Train until `max_steps`, logging the mean training loss and the
/// validation loss every `eval_every` updates.
pub fn train_loop(
    trainer: &mut Trainer,
    train: &[GermlinePair],
    validation: &[GermlinePair],
    mut on_record: impl FnMut(&MetricRecord),
) -> Result<Vec<MetricRecord>> {
    let cfg = *trainer.config();
    let mut log = Vec::new();
    if trainer.step() >= cfg.max_steps {
        return Ok(log);
    }
    let val_examples = if validation.is_empty() {
        Vec::new()
    } else {
        let mut r = rng::stream(cfg.seed, "train/validation-pick");
        let picks: Vec<&GermlinePair> = (0..cfg.validation_examples)
            .map(|k| {
                if cfg.validation_examples <= validation.len() {
                    &validation[k]
                } else {
                    &validation[r.gen_range(0..validation.len())]
                }
            })
            .collect();
        trainer.noised_examples(&picks, "train/validation")?
    };
    let mut emit = |rec: MetricRecord, log: &mut Vec<MetricRecord>| {
        on_record(&rec);
        log.push(rec);
    };
    let (mut sum, mut count, mut last) = (0.0, 0u64, None);
    while trainer.step() < cfg.max_steps {
        let report = trainer.train_step(train)?;
        sum += report.loss;
        count += 1;
        last = Some(report);
        if report.step % cfg.eval_every == 0 || report.step == cfg.max_steps {
            emit(
                MetricRecord {
                    step: report.step,
                    split: "train".into(),
                    loss: sum / count as f64,
                    lr: report.lr,
                    grad_norm: report.grad_norm,
                },
                &mut log,
            );
            if !val_examples.is_empty() {
                emit(
                    MetricRecord {
                        step: report.step,
                        split: "validation".into(),
                        loss: trainer.evaluate(&val_examples)?,
                        lr: report.lr,
                        grad_norm: report.grad_norm,
                    },
                    &mut log,
                );
            }
            sum = 0.0;
            count = 0;
        }
    }
    debug_assert!(last.is_some());
    Ok(log)
}

/// Metrics CSV with header `step,split,loss,lr,grad_norm`.
pub fn metrics_csv(records: &[MetricRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    if records.is_empty() {
        w.write_record(["step", "split", "loss", "lr", "grad_norm"])
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_metrics(records: &[MetricRecord], path: &Path) -> Result<()> {
    write_atomic(path, metrics_csv(records)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::KernelVariant;
    use crate::oracle::{joint_distribution_at_t, ExactScore, ToyDistribution};
    use crate::score::ScoreModel;
    use crate::seq::encode;

    fn tiny(variant: KernelVariant) -> ModelConfig {
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

    fn pairs(seed: u64, count: usize, len: usize) -> Vec<GermlinePair> {
        let a = Alphabet::protein();
        let mut r = rng::from_seed(seed);
        (0..count)
            .map(|k| {
                let g: Vec<usize> = (0..len).map(|_| r.gen_range(0..20)).collect();
                let o: Vec<usize> = g.iter().map(|&t| if r.gen_bool(0.3) { r.gen_range(0..20) } else { t }).collect();
                GermlinePair::new(
                    k.to_string(),
                    TokenSequence::new(g, 21).unwrap(),
                    TokenSequence::new(o, 21).unwrap(),
                    &a,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn unit_entry_example() {
        let term = Term { position: 0, index: 0, weight: 1.0, target: 1.0 };
        assert_eq!(term_value(&term, 0.0, false), 1.0);
    }

    #[test]
    fn entry_minimized_at_target() {
        for a in [0.1, 1.0, 7.0] {
            let term = Term { position: 0, index: 0, weight: 1.0, target: a };
            let grid: Vec<f64> = (0..=6000).map(|k| 10f64.powf(-3.0 + k as f64 / 1000.0)).collect();
            let best = grid
                .iter()
                .copied()
                .min_by(|x, y| term_value(&term, x.ln(), false).total_cmp(&term_value(&term, y.ln(), false)))
                .unwrap();
            assert!((best - a).abs() / a < 2.5e-3, "a={a}: {best}");
        }
    }

    #[test]
    fn exact_scores_minimize_population_loss() {
        // two-token alphabet, d = 1, uniform kernel
        let a = Alphabet::new("AB", None).unwrap();
        let s = NoiseSchedule::default();
        let data = ToyDistribution::from_support(&a, &[("A", 0.8), ("B", 0.2)]).unwrap();
        let kernel = data.kernel(KernelVariant::Uniform, &a).unwrap();
        let exact = ExactScore::new(data.clone(), kernel.clone(), s);
        let t = 0.4;
        let pt = joint_distribution_at_t(&data, &kernel, t, &s).unwrap();
        // population loss of a free table indexed by x_t
        let pop = |table: &dyn Fn(usize) -> f64| -> f64 {
            let mut total = 0.0;
            for (x0, p0) in data.support() {
                let row = kernel.marginal_row(0, x0.get(0), s.total_noise(t).unwrap()).unwrap();
                for xt in 0..2 {
                    let x_t = TokenSequence::new(vec![xt], 2).unwrap();
                    let mut v = vec![0.0; 2];
                    v[1 - xt] = table(xt);
                    let score = ScoreTable::new(v, 2, &x_t).unwrap();
                    let pair = GermlinePair::new("x", x0.clone(), x0.clone(), &a).unwrap();
                    total += p0 * row[xt] * dse_loss(&score, &kernel, &pair, &x_t, t, &s).unwrap().total;
                }
            }
            total
        };
        let exact_loss = pop(&|xt| {
            let x = TokenSequence::new(vec![xt], 2).unwrap();
            exact.score(&x, t).unwrap().get(0, 1 - xt)
        });
        // brute force over a grid for each of the two free entries
        let grid: Vec<f64> = (0..=4000).map(|k| 10f64.powf(-2.0 + k as f64 / 1000.0)).collect();
        let mut best = f64::INFINITY;
        for &s0 in &grid {
            let l = pop(&|xt| if xt == 0 { s0 } else { pt.probs()[0] / pt.probs()[1] });
            best = best.min(l);
        }
        for &s1 in &grid {
            let l = pop(&|xt| if xt == 0 { pt.probs()[1] / pt.probs()[0] } else { s1 });
            best = best.min(l);
        }
        assert!(exact_loss <= best + 1e-6, "{exact_loss} vs {best}");
        assert!((exact_loss - best).abs() < 1e-6);
    }

    #[test]
    fn unreachable_noised_state_is_rejected() {
        let a = Alphabet::protein();
        let pair = GermlinePair::from_strings("x", "QV", "KV", &a).unwrap();
        let kernel = TransitionKernel::germline(&a, pair.germline()).unwrap();
        // E is neither the clean residue nor the germline residue
        let x_t = encode("EV", &a).unwrap();
        let score = ScoreTable::constant(1.0, 21, &x_t).unwrap();
        let s = NoiseSchedule::default();
        assert!(matches!(
            dse_loss(&score, &kernel, &pair, &x_t, 0.5, &s),
            Err(Error::ImpossibleState { .. })
        ));
    }

    #[test]
    fn log_gradient_matches_finite_differences() {
        let a = Alphabet::protein();
        let s = NoiseSchedule::default();
        let mut r = rng::from_seed(11);
        for variant in KernelVariant::ALL {
            for pair in pairs(3, 4, 6) {
                let kernel = TransitionKernel::for_pair(variant, &a, &pair).unwrap();
                let ex = NoisedExample::draw(kernel, pair.observed().clone(), &s, &mut r).unwrap();
                let ls: Vec<f64> = (0..6 * 21).map(|_| r.gen_range(-2.0..2.0)).collect();
                let mut g = vec![0.0; ls.len()];
                dse_loss_log_grad(&ls, &ex.kernel, &ex.x0, &ex.x_t, ex.t, &s, false, &mut g).unwrap();
                for j in 0..ls.len() {
                    let h = 1e-6;
                    let (mut up, mut dn) = (ls.clone(), ls.clone());
                    up[j] += h;
                    dn[j] -= h;
                    let mut sink = vec![0.0; ls.len()];
                    let fu = dse_loss_log_grad(&up, &ex.kernel, &ex.x0, &ex.x_t, ex.t, &s, false, &mut sink).unwrap();
                    let fd = dse_loss_log_grad(&dn, &ex.kernel, &ex.x0, &ex.x_t, ex.t, &s, false, &mut sink).unwrap();
                    let num = (fu - fd) / (2.0 * h);
                    assert!((num - g[j]).abs() <= 1e-4 * num.abs().max(1e-2), "{variant} {j}: {num} vs {}", g[j]);
                }
            }
        }
    }

    #[test]
    fn time_sampling_is_uniform() {
        let mut r = rng::from_seed(12);
        let mean = (0..100_000).map(|_| sample_time(&mut r)).sum::<f64>() / 100_000.0;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn stratified_times_are_uniform_and_spread() {
        let mut r = rng::from_seed(13);
        let mut all = Vec::new();
        for _ in 0..2000 {
            let mut ts = stratified_times(50, &mut r);
            ts.sort_by(f64::total_cmp);
            assert!(ts.windows(2).all(|w| (w[1] - w[0] - 0.02).abs() < 1e-9 || w[0] == T_FLOOR));
            all.extend(ts);
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn warmup_is_linear() {
        let cfg = TrainConfig::default();
        for s in [0, 1, 250, 499] {
            assert!((cfg.learning_rate_at(s) - 3e-4 * s as f64 / 500.0).abs() < 1e-12);
        }
        assert_eq!(cfg.learning_rate_at(500), 3e-4);
    }

    #[test]
    fn cosine_decay_halves_at_midpoint_and_ends_at_zero() {
        let cfg = TrainConfig { cosine_decay: true, warmup_steps: 100, max_steps: 1100, ..Default::default() };
        assert_eq!(cfg.learning_rate_at(100), 3e-4);
        assert!((cfg.learning_rate_at(600) - 1.5e-4).abs() < 1e-12);
        assert!(cfg.learning_rate_at(1100).abs() < 1e-12);
        assert!(cfg.learning_rate_at(5000).abs() < 1e-12);
    }

    fn trainer(variant: KernelVariant, cfg: TrainConfig) -> Trainer {
        Trainer::new(tiny(variant), cfg, NoiseSchedule::default(), Alphabet::protein()).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_params_and_blends_ema() {
        let cfg = TrainConfig { learning_rate: 0.0, batch_size: 4, ema_decay: 0.5, ..Default::default() };
        let mut t = trainer(KernelVariant::Mask, cfg);
        t.ema.iter_mut().for_each(|v| *v = 0.0);
        let before = t.params().to_vec();
        t.train_step(&pairs(1, 8, 6)).unwrap();
        assert_eq!(t.params(), &before[..]);
        for (e, p) in t.ema().iter().zip(&before) {
            assert!((e - 0.5 * p).abs() <= 1e-7 * p.abs().max(1.0));
        }
    }

    #[test]
    fn ema_converges_when_params_are_frozen() {
        let cfg = TrainConfig { learning_rate: 0.0, batch_size: 2, ema_decay: 0.9, ..Default::default() };
        let mut t = trainer(KernelVariant::Mask, cfg);
        t.ema.iter_mut().for_each(|v| *v += 1.0);
        let data = pairs(1, 4, 4);
        for _ in 0..200 {
            t.train_step(&data).unwrap();
        }
        assert!(t.ema().iter().zip(t.params()).all(|(e, p)| (e - p).abs() < 1e-6));
    }

    #[test]
    fn clipping_bounds_the_applied_norm() {
        let cfg = TrainConfig { batch_size: 8, grad_clip_norm: 2.0, ..Default::default() };
        let mut t = trainer(KernelVariant::Uniform, cfg);
        let data = pairs(2, 16, 8);
        let mut saw_clip = false;
        for _ in 0..20 {
            let rep = t.train_step(&data).unwrap();
            assert!(rep.applied_norm <= 2.0 + 1e-6);
            saw_clip |= rep.grad_norm > 2.0;
        }
        assert!(saw_clip, "test never exercised clipping");
    }

    #[test]
    fn overfit_batch_loss_halves() {
        let cfg = TrainConfig::default();
        for variant in KernelVariant::ALL {
            let model = ModelConfig {
                embed_dim: 32,
                feedforward_dim: 64,
                ..tiny(variant)
            };
            let mut t = Trainer::new(model, cfg, NoiseSchedule::default(), Alphabet::protein()).unwrap();
            let data = pairs(5, cfg.batch_size, 10);
            let refs: Vec<&GermlinePair> = data.iter().collect();
            let batch = t.noised_examples(&refs, "fixed").unwrap();
            // measured with K(a) included so that the floor is zero
            let first = t.evaluate(&batch).unwrap();
            for _ in 0..500 {
                t.update(&batch).unwrap();
            }
            let last = t.evaluate(&batch).unwrap();
            assert!(last <= 0.5 * first, "{variant}: {first} -> {last}");
        }
    }

    #[test]
    fn max_steps_zero_is_a_no_op() {
        let cfg = TrainConfig { max_steps: 0, ..Default::default() };
        let mut t = trainer(KernelVariant::Mask, cfg);
        let before = t.params().to_vec();
        let log = train_loop(&mut t, &pairs(1, 4, 4), &pairs(2, 4, 4), |_| {}).unwrap();
        assert!(log.is_empty());
        assert_eq!(t.params(), &before[..]);
        assert_eq!(t.step(), 0);
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let cfg = TrainConfig { batch_size: 4, max_steps: 6, eval_every: 3, validation_examples: 8, ..Default::default() };
        let (train, val) = (pairs(1, 12, 6), pairs(2, 6, 6));
        let mut a = trainer(KernelVariant::Germline, cfg);
        let la = train_loop(&mut a, &train, &val, |_| {}).unwrap();
        let mut b = trainer(KernelVariant::Germline, cfg);
        let lb = train_loop(&mut b, &train, &val, |_| {}).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.params(), b.params());
        assert_eq!(la.len(), 4);
        // resume continues the step counter
        let more = TrainConfig { max_steps: 9, ..cfg };
        let mut c = Trainer::resume(&a.checkpoint(), more, Alphabet::protein()).unwrap();
        let lc = train_loop(&mut c, &train, &val, |_| {}).unwrap();
        assert_eq!(c.step(), 9);
        assert_eq!(lc.first().unwrap().step, 9);
        let csv = metrics_csv(&lc).unwrap();
        assert!(csv.starts_with("step,split,loss,lr,grad_norm\n"));
    }
}
