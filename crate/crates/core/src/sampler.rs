//! Reverse-time generation on a uniform time grid from `t = 1` to `t = 0`.
//!
//! Two decoders are provided. Tweedie decoding draws each position from
//!
//! ```text
//! p(y | x_t) ∝ (exp(-Δσ R)ᵀ s)_y · exp(Δσ R)[y][x_t]
//! ```
//!
//! with `Δσ = σ(t) - σ(t - Δt)` and `s` the score row at that position.
//! Euler decoding takes a first-order step of the reverse chain, jumping to
//! `y` with probability `Δt σ'(t) R[y][x_t] s_y`.
//!
//! Under the mask kernel the step that ends at `t = 0` is renormalized over
//! residues, so every returned sequence is fully unmasked.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{Classifier, Condition};
use crate::noise::{KernelVariant, NoiseSchedule, TransitionKernel};
use crate::rng::{self, sample_index};
use crate::score::{ScoreModel, ScoreTable};
use crate::seq::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Decoder {
    Euler,
    #[default]
    Tweedie,
}

impl std::str::FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "tweedie" => Ok(Self::Tweedie),
            other => Err(Error::InvalidArgument(format!(
                "unknown decoder {other:?} (expected euler or tweedie)"
            ))),
        }
    }
}

impl std::fmt::Display for Decoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Euler => "euler",
            Self::Tweedie => "tweedie",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub decoder: Decoder,
    pub guidance_strength: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 128,
            decoder: Decoder::Tweedie,
            guidance_strength: 0.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("sampler steps must be >= 1".into()));
        }
        if !(self.guidance_strength >= 0.0 && self.guidance_strength.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "guidance strength must be a finite non-negative number, got {}",
                self.guidance_strength
            )));
        }
        Ok(())
    }
}

/// What the reverse process starts from.
#[derive(Debug, Clone, PartialEq)]
pub enum NoisedInit {
    Length(usize),
    Germline(TokenSequence),
}

pub fn init_noised_state<R: Rng + ?Sized>(
    kernel: &TransitionKernel,
    init: &NoisedInit,
    rng: &mut R,
) -> Result<TokenSequence> {
    match (kernel.variant(), init) {
        (KernelVariant::Germline, NoisedInit::Germline(g)) => {
            kernel.check_length(g.len())?;
            Ok(g.clone())
        }
        (KernelVariant::Germline, NoisedInit::Length(_)) => Err(Error::InvalidArgument(
            "the germline variant starts from a germline sequence, not a length".into(),
        )),
        (_, NoisedInit::Germline(_)) => Err(Error::InvalidArgument(format!(
            "the {} variant starts from a length, not a germline",
            kernel.variant()
        ))),
        (_, NoisedInit::Length(0)) => Err(Error::EmptySequence),
        (KernelVariant::Mask, NoisedInit::Length(len)) => {
            let mask = kernel.target(0).expect("mask kernel has a target");
            Ok(TokenSequence::from_ids_unchecked(vec![mask; *len]))
        }
        (KernelVariant::Uniform, NoisedInit::Length(len)) => {
            let states: Vec<usize> = kernel.states().collect();
            let ids = (0..*len)
                .map(|_| states[rng.gen_range(0..states.len())])
                .collect();
            Ok(TokenSequence::from_ids_unchecked(ids))
        }
    }
}

/// Per-position transition distributions for one decoder step together with
/// how many weights had to be clamped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    pub rows: Vec<Vec<f64>>,
    pub clamped: u64,
}

fn check_step(score: &ScoreTable, x_t: &TokenSequence, t: f64, dt: f64) -> Result<()> {
    if score.len() != x_t.len() {
        return Err(Error::LengthMismatch {
            context: "score table vs sequence",
            left: score.len(),
            right: x_t.len(),
        });
    }
    if !(dt > 0.0 && dt <= t + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "step size must satisfy 0 < dt <= t (t = {t}, dt = {dt})"
        )));
    }
    Ok(())
}

pub fn tweedie_distribution(
    score: &ScoreTable,
    kernel: &TransitionKernel,
    x_t: &TokenSequence,
    t: f64,
    dt: f64,
    schedule: &NoiseSchedule,
) -> Result<StepDistribution> {
    check_step(score, x_t, t, dt)?;
    kernel.check_length(x_t.len())?;
    let n = kernel.size();
    let delta = schedule.total_noise(t)? - schedule.total_noise((t - dt).max(0.0))?;
    let mut clamped = 0;
    let mut rows = Vec::with_capacity(x_t.len());
    for (i, &x) in x_t.ids().iter().enumerate() {
        let back = kernel.step_transition_matrix(-delta, i)?;
        let fwd = kernel.step_transition_matrix(delta, i)?;
        let s = score.row(i);
        let mut row = vec![0.0; n];
        for y in kernel.states() {
            let staggered: f64 = kernel.states().map(|z| s[z] * back[z * n + y]).sum();
            let w = staggered * fwd[y * n + x];
            if w < 0.0 {
                clamped += 1;
            } else {
                row[y] = w;
            }
        }
        let total: f64 = row.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegeneratePosterior { position: i, t, dt });
        }
        row.iter_mut().for_each(|p| *p /= total);
        rows.push(row);
    }
    Ok(StepDistribution { rows, clamped })
}

pub fn euler_distribution(
    score: &ScoreTable,
    kernel: &TransitionKernel,
    x_t: &TokenSequence,
    t: f64,
    dt: f64,
    schedule: &NoiseSchedule,
) -> Result<StepDistribution> {
    check_step(score, x_t, t, dt)?;
    kernel.check_length(x_t.len())?;
    let n = kernel.size();
    let scale = schedule.rate(t)? * dt;
    let mut clamped = 0;
    let mut rows = Vec::with_capacity(x_t.len());
    for (i, &x) in x_t.ids().iter().enumerate() {
        let s = score.row(i);
        let mut row = vec![0.0; n];
        let mut jump = 0.0;
        for y in kernel.states() {
            if y != x {
                let p = scale * kernel.rate(i, y, x) * s[y];
                row[y] = p;
                jump += p;
            }
        }
        if jump > 1.0 {
            clamped += 1;
            row.iter_mut().for_each(|p| *p /= jump);
        } else {
            row[x] = 1.0 - jump;
        }
        rows.push(row);
    }
    Ok(StepDistribution { rows, clamped })
}

fn draw<R: Rng + ?Sized>(dist: &StepDistribution, rng: &mut R) -> TokenSequence {
    let ids = dist
        .rows
        .iter()
        .map(|row| sample_index(row, rng).expect("rows are normalized"))
        .collect();
    TokenSequence::from_ids_unchecked(ids)
}

pub fn tweedie_step<R: Rng + ?Sized>(
    score: &ScoreTable,
    kernel: &TransitionKernel,
    x_t: &TokenSequence,
    t: f64,
    dt: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<TokenSequence> {
    Ok(draw(&tweedie_distribution(score, kernel, x_t, t, dt, schedule)?, rng))
}

pub fn euler_step<R: Rng + ?Sized>(
    score: &ScoreTable,
    kernel: &TransitionKernel,
    x_t: &TokenSequence,
    t: f64,
    dt: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<TokenSequence> {
    Ok(draw(&euler_distribution(score, kernel, x_t, t, dt, schedule)?, rng))
}

pub fn step_distribution(
    decoder: Decoder,
    score: &ScoreTable,
    kernel: &TransitionKernel,
    x_t: &TokenSequence,
    t: f64,
    dt: f64,
    schedule: &NoiseSchedule,
) -> Result<StepDistribution> {
    let mut dist = match decoder {
        Decoder::Tweedie => tweedie_distribution(score, kernel, x_t, t, dt, schedule)?,
        Decoder::Euler => euler_distribution(score, kernel, x_t, t, dt, schedule)?,
    };
    // the step that reaches t = 0 must not leave mask tokens behind
    if kernel.variant() == KernelVariant::Mask && t - dt <= 1e-12 {
        let mask = kernel.target(0).expect("mask kernel has a target");
        for (i, row) in dist.rows.iter_mut().enumerate() {
            row[mask] = 0.0;
            let total: f64 = row.iter().sum();
            if !(total > 0.0) {
                return Err(Error::DegeneratePosterior { position: i, t, dt });
            }
            row.iter_mut().for_each(|p| *p /= total);
        }
    }
    Ok(dist)
}

/// Uniform grid `(t, dt)` pairs from 1 down to 0.
pub fn time_grid(steps: usize) -> impl Iterator<Item = (f64, f64)> {
    (0..steps).map(move |k| {
        let t = (steps - k) as f64 / steps as f64;
        let next = (steps - k - 1) as f64 / steps as f64;
        (t, t - next)
    })
}

/// Multiply each entry by `(f(x^{i->y}) / f(x))^gamma`, computed from logits.
pub fn guided_score(
    score: &ScoreTable,
    neighbor_logits: &[f64],
    current_logit: f64,
    gamma: f64,
) -> Result<ScoreTable> {
    if neighbor_logits.len() != score.values().len() {
        return Err(Error::LengthMismatch {
            context: "neighbor logits vs score table",
            left: neighbor_logits.len(),
            right: score.values().len(),
        });
    }
    if !current_logit.is_finite() {
        return Err(Error::NonFiniteLogit(format!("current logit {current_logit}")));
    }
    if let Some(p) = neighbor_logits.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFiniteLogit(format!(
            "neighbor logit {} at entry {p}",
            neighbor_logits[p]
        )));
    }
    let mut guided = score.clone();
    for (v, &l) in guided.values_mut().iter_mut().zip(neighbor_logits) {
        *v *= (gamma * (l - current_logit)).exp();
        if !v.is_finite() {
            return Err(Error::NonFiniteLogit(format!(
                "guided score overflowed (gamma = {gamma}, logit gap = {})",
                l - current_logit
            )));
        }
    }
    Ok(guided)
}

/// Classifier plus the condition it is asked to score.
pub struct Guidance<'a> {
    pub classifier: &'a dyn Classifier,
    pub condition: Condition,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleStats {
    /// Individual classifier logits computed (neighbors plus current sequence).
    pub classifier_evaluations: u64,
    /// Transition weights clamped at zero.
    pub clamped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub sequences: Vec<TokenSequence>,
    pub stats: SampleStats,
}

/// Generate one sequence per `(kernel, init)` job. Sample `k` uses the random
/// stream `(config.seed, "sample/k")`, so outputs do not depend on how many
/// jobs are batched together.
pub fn sample<M: ScoreModel + ?Sized>(
    model: &M,
    jobs: &[(TransitionKernel, NoisedInit)],
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    guidance: Option<&Guidance<'_>>,
) -> Result<SampleOutput> {
    sample_indexed(model, jobs, 0, config, schedule, guidance)
}

/// As [`sample`], with job `j` drawing from stream `first_index + j`.
pub fn sample_indexed<M: ScoreModel + ?Sized>(
    model: &M,
    jobs: &[(TransitionKernel, NoisedInit)],
    first_index: usize,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    guidance: Option<&Guidance<'_>>,
) -> Result<SampleOutput> {
    config.validate()?;
    let mut rngs: Vec<_> = (0..jobs.len())
        .map(|j| rng::stream(config.seed, &format!("sample/{}", first_index + j)))
        .collect();
    let mut xs = jobs
        .iter()
        .zip(rngs.iter_mut())
        .map(|((kernel, init), r)| init_noised_state(kernel, init, r))
        .collect::<Result<Vec<_>>>()?;
    let mut stats = SampleStats::default();
    for (t, dt) in time_grid(config.steps) {
        let ts = vec![t; xs.len()];
        let scores = model.score_batch(&xs, &ts)?;
        for (j, score) in scores.into_iter().enumerate() {
            let (kernel, _) = &jobs[j];
            let score = match guidance {
                Some(g) => {
                    let logits = g.classifier.neighbor_logits(&xs[j], &g.condition, kernel.alphabet())?;
                    stats.classifier_evaluations += logits.evaluations;
                    guided_score(&score, &logits.values, logits.current, config.guidance_strength)?
                }
                None => score,
            };
            let dist = step_distribution(config.decoder, &score, kernel, &xs[j], t, dt, schedule)?;
            stats.clamped += dist.clamped;
            xs[j] = draw(&dist, &mut rngs[j]);
        }
    }
    Ok(SampleOutput {
        sequences: xs,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::ConstantScore;
    use crate::seq::{encode, Alphabet};

    fn abm() -> Alphabet {
        Alphabet::new("AB#", Some(2)).unwrap()
    }

    #[test]
    fn init_examples() {
        let p = Alphabet::protein();
        let mask = TransitionKernel::mask(&p).unwrap();
        let mut r = rng::from_seed(1);
        let x = init_noised_state(&mask, &NoisedInit::Length(5), &mut r).unwrap();
        assert_eq!(x.ids(), &[20; 5]);
        let g = encode("QVQL", &p).unwrap();
        let gk = TransitionKernel::germline(&p, &g).unwrap();
        assert_eq!(init_noised_state(&gk, &NoisedInit::Germline(g.clone()), &mut r).unwrap(), g);
        assert!(init_noised_state(&gk, &NoisedInit::Length(4), &mut r).is_err());
        assert!(init_noised_state(&mask, &NoisedInit::Germline(g), &mut r).is_err());
    }

    #[test]
    fn uniform_init_is_uniform() {
        let p = Alphabet::protein();
        let k = TransitionKernel::uniform(&p);
        let mut r = rng::from_seed(2);
        let mut counts = [0usize; 21];
        let draws = 100_000;
        for _ in 0..draws / 10 {
            for &t in init_noised_state(&k, &NoisedInit::Length(10), &mut r).unwrap().ids() {
                counts[t] += 1;
            }
        }
        assert_eq!(counts[20], 0);
        for &c in &counts[..20] {
            let f = c as f64 / draws as f64;
            assert!((f - 0.05).abs() < 0.005, "{f}");
        }
    }

    #[test]
    fn grid_ends_at_zero() {
        let grid: Vec<_> = time_grid(4).collect();
        assert_eq!(grid.len(), 4);
        assert_eq!(grid[0].0, 1.0);
        let (t, dt) = grid[3];
        assert_eq!(t - dt, 0.0);
    }

    #[test]
    fn tweedie_small_step_stays_put() {
        let p = Alphabet::protein();
        let s = NoiseSchedule::default();
        let x = encode("ACDEFG", &p).unwrap();
        let g = encode("ACDWWW", &p).unwrap();
        let kernels = [
            TransitionKernel::uniform(&p),
            TransitionKernel::mask(&p).unwrap(),
            TransitionKernel::germline(&p, &g).unwrap(),
        ];
        for k in &kernels {
            let score = ScoreTable::constant(0.7, 21, &x).unwrap();
            let dist = tweedie_distribution(&score, k, &x, 0.5, 1e-6, &s).unwrap();
            for (i, row) in dist.rows.iter().enumerate() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(1.0 - row[x.get(i)] < 1e-3, "{} {i}", k.variant());
            }
        }
    }

    #[test]
    fn euler_rows_sum_to_one_without_clamping() {
        let p = Alphabet::protein();
        let s = NoiseSchedule::default();
        let x = encode("##A#", &p).unwrap();
        let k = TransitionKernel::mask(&p).unwrap();
        let score = ScoreTable::constant(0.01, 21, &x).unwrap();
        let dist = euler_distribution(&score, &k, &x, 0.5, 1e-3, &s).unwrap();
        assert_eq!(dist.clamped, 0);
        for row in &dist.rows {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= f64::EPSILON);
        }
        // the unmasked position cannot move under the mask kernel
        assert_eq!(dist.rows[2][0], 1.0);
    }

    #[test]
    fn euler_clamps_oversized_steps() {
        let k = TransitionKernel::mask(&abm()).unwrap();
        let x = TokenSequence::new(vec![2], 3).unwrap();
        let score = ScoreTable::constant(10.0, 3, &x).unwrap();
        let dist = euler_distribution(&score, &k, &x, 1.0, 0.5, &NoiseSchedule::default()).unwrap();
        assert_eq!(dist.clamped, 1);
        assert_eq!(dist.rows[0][2], 0.0);
        assert!((dist.rows[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn germline_with_zero_score_stays_germline() {
        // no reverse mass anywhere: every absorbed position stays put
        let p = Alphabet::protein();
        let s = NoiseSchedule::default();
        let g = encode("QVQLVESGGGLVQPGGSLRL", &p).unwrap();
        let k = TransitionKernel::germline(&p, &g).unwrap();
        let model = ConstantScore { value: 0.0, vocab: 21 };
        let jobs: Vec<_> = (0..20).map(|_| (k.clone(), NoisedInit::Germline(g.clone()))).collect();
        for decoder in [Decoder::Tweedie, Decoder::Euler] {
            let cfg = SamplerConfig { steps: 32, decoder, ..Default::default() };
            let out = sample(&model, &jobs, &cfg, &s, None).unwrap();
            assert!(out.sequences.iter().all(|x| x == &g));
        }
    }

    #[test]
    fn guided_score_examples() {
        let x = TokenSequence::new(vec![0, 1], 3).unwrap();
        let base = ScoreTable::constant(0.3, 3, &x).unwrap();
        // constant classifier
        let same = guided_score(&base, &[1.5; 6], 1.5, 4.0).unwrap();
        assert_eq!(same, base);
        // ratio 2 at entry (0, 2)
        let mut logits = vec![0.0; 6];
        logits[2] = 2f64.ln();
        let g1 = guided_score(&base, &logits, 0.0, 1.0).unwrap();
        assert!((g1.get(0, 2) - 0.6).abs() < 1e-12);
        let g2 = guided_score(&base, &logits, 0.0, 2.0).unwrap();
        assert!((g2.get(0, 2) - 1.2).abs() < 1e-12);
        assert_eq!(g2.get(0, 0), 1.0);
        logits[1] = f64::NAN;
        assert!(matches!(guided_score(&base, &logits, 0.0, 1.0), Err(Error::NonFiniteLogit(_))));
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = Alphabet::protein();
        let k = TransitionKernel::uniform(&p);
        let model = ConstantScore { value: 1.0, vocab: 21 };
        let jobs = vec![(k, NoisedInit::Length(12)); 3];
        let cfg = SamplerConfig { steps: 16, seed: 5, ..Default::default() };
        let s = NoiseSchedule::default();
        let a = sample(&model, &jobs, &cfg, &s, None).unwrap();
        let b = sample(&model, &jobs, &cfg, &s, None).unwrap();
        assert_eq!(a, b);
        // batching does not change individual streams
        let single = sample_indexed(&model, &jobs[..1], 2, &cfg, &s, None).unwrap();
        assert_eq!(single.sequences[0], a.sequences[2]);
    }

    #[test]
    fn mask_samples_end_unmasked() {
        let p = Alphabet::protein();
        let k = TransitionKernel::mask(&p).unwrap();
        // scores far below the exact ones would otherwise leave masks behind
        let model = ConstantScore { value: 1e-4, vocab: 21 };
        let jobs = vec![(k, NoisedInit::Length(10)); 4];
        let s = NoiseSchedule::default();
        for decoder in [Decoder::Tweedie, Decoder::Euler] {
            let cfg = SamplerConfig { steps: 8, decoder, ..Default::default() };
            let out = sample(&model, &jobs, &cfg, &s, None).unwrap();
            assert!(out.sequences.iter().all(|x| x.ids().iter().all(|&c| c < 20)), "{decoder}");
        }
    }
}
