//! Evaluation metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{forward_sample, KernelVariant, NoiseSchedule, TransitionKernel};
use crate::rng;
use crate::score::{ScoreModel, ScoreTable};
use crate::seq::{non_germline_positions, sequence_identity, token_levenshtein, GermlinePair, TokenSequence};

pub use crate::oracle::tv_distance;

/// Time at which the uniform variant is queried for single-position
/// predictions (the last step of a 128-step sampler).
pub const PREDICTION_TIME: f64 = 1.0 / 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElboConfig {
    pub quadrature_steps: usize,
    pub monte_carlo_samples: usize,
    pub seed: u64,
}

impl Default for ElboConfig {
    fn default() -> Self {
        Self {
            quadrature_steps: 256,
            monte_carlo_samples: 4,
            seed: 0,
        }
    }
}

impl ElboConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quadrature_steps == 0 || self.monte_carlo_samples == 0 {
            return Err(Error::InvalidArgument(
                "quadrature_steps and monte_carlo_samples must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `K(a) = a (log a - 1)` with `K(0) = 0`.
pub fn entropy_constant(a: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * (a.ln() - 1.0)
    }
}

/// Score-entropy integrand for one `(x_0, x_t)` pair at time `t`, summed
/// over positions and candidate tokens, including `K(a)`.
pub fn dse_integrand(
    score: &ScoreTable,
    kernel: &TransitionKernel,
    x0: &TokenSequence,
    x_t: &TokenSequence,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    let sigma = schedule.total_noise(t)?;
    let rate = schedule.rate(t)?;
    let mut total = 0.0;
    for (i, &xt) in x_t.ids().iter().enumerate() {
        let row = kernel.marginal_row(i, x0.get(i), sigma)?;
        let here = row[xt];
        for y in kernel.states() {
            let w = kernel.rate(i, y, xt);
            if y == xt || w == 0.0 {
                continue;
            }
            let a = row[y] / here;
            let s = score.get(i, y);
            let log_term = if a == 0.0 { 0.0 } else { a * s.ln() };
            let term = rate * w * (s - log_term + entropy_constant(a));
            if !term.is_finite() {
                return Err(Error::NonFiniteIntegrand { t, position: i });
            }
            total += term;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboReport {
    /// Upper bound on the per-token negative log-likelihood of each sequence.
    pub per_token_nll: Vec<f64>,
    /// `exp` of the above.
    pub per_sequence: Vec<f64>,
    /// `exp` of the (weighted) mean per-token bound.
    pub aggregate: f64,
}

/// Perplexity upper bound for each `(kernel, x_0)` item.
pub fn elbo_perplexity<M: ScoreModel + ?Sized>(
    model: &M,
    items: &[(TransitionKernel, TokenSequence)],
    config: &ElboConfig,
    schedule: &NoiseSchedule,
) -> Result<ElboReport> {
    elbo_perplexity_weighted(model, items, &vec![1.0; items.len()], config, schedule)
}

/// As [`elbo_perplexity`], aggregating with per-item weights (for example
/// data probabilities on a toy).
pub fn elbo_perplexity_weighted<M: ScoreModel + ?Sized>(
    model: &M,
    items: &[(TransitionKernel, TokenSequence)],
    weights: &[f64],
    config: &ElboConfig,
    schedule: &NoiseSchedule,
) -> Result<ElboReport> {
    config.validate()?;
    if items.is_empty() {
        return Err(Error::UndefinedMetric("ELBO over an empty set".into()));
    }
    if weights.len() != items.len() {
        return Err(Error::LengthMismatch {
            context: "ELBO weights vs sequences",
            left: weights.len(),
            right: items.len(),
        });
    }
    for (kernel, x0) in items {
        kernel.check_length(x0.len())?;
        if x0.is_empty() {
            return Err(Error::EmptySequence);
        }
    }
    let steps = config.quadrature_steps;
    let draws = config.monte_carlo_samples;
    let dt = 1.0 / steps as f64;
    let mut rngs: Vec<_> = (0..items.len())
        .map(|k| rng::stream(config.seed, &format!("elbo/{k}")))
        .collect();
    let mut integral = vec![0.0; items.len()];
    for step in 0..steps {
        let t = (step as f64 + 0.5) * dt;
        let mut xs = Vec::with_capacity(items.len() * draws);
        for ((kernel, x0), r) in items.iter().zip(rngs.iter_mut()) {
            for _ in 0..draws {
                xs.push(forward_sample(kernel, x0, t, schedule, r)?);
            }
        }
        let scores = model.score_batch(&xs, &vec![t; xs.len()])?;
        for (k, (kernel, x0)) in items.iter().enumerate() {
            for m in 0..draws {
                let j = k * draws + m;
                integral[k] += dt / draws as f64 * dse_integrand(&scores[j], kernel, x0, &xs[j], t, schedule)?;
            }
        }
    }
    let per_token_nll: Vec<f64> = integral
        .iter()
        .zip(items)
        .map(|(v, (_, x0))| v / x0.len() as f64)
        .collect();
    let total_weight: f64 = weights.iter().sum();
    if !(total_weight > 0.0) {
        return Err(Error::InvalidArgument("ELBO weights must have positive sum".into()));
    }
    let mean = per_token_nll.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total_weight;
    Ok(ElboReport {
        per_sequence: per_token_nll.iter().map(|v| v.exp()).collect(),
        per_token_nll,
        aggregate: mean.exp(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub matches: usize,
    pub total: usize,
}

/// Top non-germline prediction accuracy at positions where the observed
/// sequence differs from its germline.
///
/// Each differing position is noised on its own (uniform replacement,
/// mask, or germline residue, by variant) and the score row there is
/// ranked over residues other than the germline residue.
pub fn non_germline_accuracy<M: ScoreModel + ?Sized>(
    model: &M,
    pairs: &[GermlinePair],
    variant: KernelVariant,
    alphabet: &crate::seq::Alphabet,
    seed: u64,
) -> Result<AccuracyReport> {
    let mut r = rng::stream(seed, "eval/non-germline");
    let mut inputs = Vec::new();
    let mut queries = Vec::new();
    for pair in pairs {
        for i in non_germline_positions(pair) {
            let observed = pair.observed().get(i);
            let noised = match variant {
                KernelVariant::Mask => alphabet
                    .mask_index()
                    .ok_or_else(|| Error::InvalidArgument("mask variant needs a mask symbol".into()))?,
                KernelVariant::Germline => pair.germline().get(i),
                KernelVariant::Uniform => {
                    let others: Vec<usize> = alphabet.residues().into_iter().filter(|&y| y != observed).collect();
                    others[r.gen_range(0..others.len())]
                }
            };
            inputs.push(pair.observed().with_token(i, noised));
            queries.push((i, pair.germline().get(i), observed));
        }
    }
    if inputs.is_empty() {
        return Err(Error::UndefinedMetric(
            "non-germline accuracy needs at least one position differing from the germline".into(),
        ));
    }
    let mut matches = 0;
    for (chunk_in, chunk_q) in inputs.chunks(256).zip(queries.chunks(256)) {
        let scores = model.score_batch(chunk_in, &vec![PREDICTION_TIME; chunk_in.len()])?;
        for (score, &(i, germ, observed)) in scores.iter().zip(chunk_q) {
            let best = alphabet
                .residues()
                .into_iter()
                .filter(|&y| y != germ)
                .fold((usize::MAX, f64::NEG_INFINITY), |best, y| {
                    let v = score.get(i, y);
                    if v > best.1 {
                        (y, v)
                    } else {
                        best
                    }
                })
                .0;
            if best == observed {
                matches += 1;
            }
        }
    }
    Ok(AccuracyReport {
        accuracy: matches as f64 / inputs.len() as f64,
        matches,
        total: inputs.len(),
    })
}

/// Mean over samples of the best identity against any reference.
pub fn nn_identity(samples: &[TokenSequence], references: &[TokenSequence]) -> Result<f64> {
    if samples.is_empty() || references.is_empty() {
        return Err(Error::UndefinedMetric("nn_identity needs non-empty sample and reference sets".into()));
    }
    let total: f64 = samples
        .iter()
        .map(|s| {
            references
                .iter()
                .map(|r| sequence_identity(s, r))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / samples.len() as f64)
}

/// Mean Levenshtein distance over unordered pairs.
pub fn pairwise_diversity(samples: &[TokenSequence]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::UndefinedMetric("pairwise diversity needs at least two samples".into()));
    }
    let mut total = 0usize;
    for (k, a) in samples.iter().enumerate() {
        for b in &samples[k + 1..] {
            total += token_levenshtein(a, b);
        }
    }
    let pairs = samples.len() * (samples.len() - 1) / 2;
    Ok(total as f64 / pairs as f64)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && xs[order[end + 1]] == xs[order[k]] {
            end += 1;
        }
        let rank = (k + end) as f64 / 2.0 + 1.0;
        for &o in &order[k..=end] {
            out[o] = rank;
        }
        k = end + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            context: "spearman inputs",
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 || a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::UndefinedMetric("spearman needs at least two non-NaN pairs".into()));
    }
    pearson(&ranks(a), &ranks(b)).ok_or_else(|| Error::UndefinedMetric("spearman of a constant input".into()))
}

/// Masked-language-model pseudo-perplexity: each position is masked in
/// turn and `predict(masked, i)` must return a distribution over tokens.
pub fn pseudo_perplexity<F>(sequences: &[TokenSequence], mask: usize, mut predict: F) -> Result<f64>
where
    F: FnMut(&TokenSequence, usize) -> Result<Vec<f64>>,
{
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for x in sequences {
        for i in 0..x.len() {
            let dist = predict(&x.with_token(i, mask), i)?;
            let p = dist.get(x.get(i)).copied().unwrap_or(0.0);
            nll -= p.ln();
            tokens += 1;
        }
    }
    if tokens == 0 {
        return Err(Error::UndefinedMetric("pseudo-perplexity over no tokens".into()));
    }
    let v = (nll / tokens as f64).exp();
    if !v.is_finite() {
        return Err(Error::UndefinedMetric("a held-out token received zero probability".into()));
    }
    Ok(v)
}

/// Per-position prediction from a mask-variant score model: the score row
/// at a masked position, renormalized over residues.
pub fn masked_prediction<M: ScoreModel + ?Sized>(
    model: &M,
    alphabet: &crate::seq::Alphabet,
    x: &TokenSequence,
    position: usize,
) -> Result<Vec<f64>> {
    let score = model.score(x, PREDICTION_TIME)?;
    let mut row = vec![0.0; alphabet.size()];
    for y in alphabet.residues() {
        row[y] = score.get(position, y);
    }
    let total: f64 = row.iter().sum();
    if !(total > 0.0) {
        return Err(Error::UndefinedMetric(format!("all-zero prediction at position {position}")));
    }
    row.iter_mut().for_each(|p| *p /= total);
    Ok(row)
}
