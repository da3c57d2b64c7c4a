//! Brute-force ground truth on small joint state spaces.
//!
//! Everything here enumerates all `n^d` sequences explicitly and builds
//! transition matrices with a generic matrix exponential, so it shares no
//! closed-form code with the noise process it is used to check.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng;

use crate::error::{Error, Result};
use crate::noise::{marginal, KernelVariant, NoiseSchedule, TransitionKernel};
use crate::rng;
use crate::sampler::{step_distribution, time_grid, Decoder};
use crate::score::{ScoreModel, ScoreTable};
use crate::seq::{Alphabet, TokenSequence};

pub const STATE_SPACE_CAP: usize = 1296;

/// `exp(s A)` for a row-major `n x n` matrix by Taylor series with
/// scaling and squaring.
pub fn matrix_exponential(a: &[f64], n: usize, s: f64) -> Vec<f64> {
    assert_eq!(a.len(), n * n, "matrix must be n x n");
    let norm = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        * s.abs();
    let mut squarings = 0;
    let mut scale = s;
    let mut scaled_norm = norm;
    while scaled_norm > 0.5 {
        scale /= 2.0;
        scaled_norm /= 2.0;
        squarings += 1;
    }
    let b: Vec<f64> = a.iter().map(|v| v * scale).collect();
    let mut result = identity(n);
    let mut term = identity(n);
    // with ||B|| <= 1/2 the k-th term is below 2^-k / k!
    for k in 1..=30 {
        term = matmul(&term, &b, n);
        term.iter_mut().for_each(|v| *v /= k as f64);
        result.iter_mut().zip(&term).for_each(|(r, t)| *r += t);
        if term.iter().all(|v| v.abs() < 1e-18) {
            break;
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result, n);
    }
    result
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    (0..n).for_each(|i| m[i * n + i] = 1.0);
    m
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// Integral of `f` over `[a, b]` by adaptive Simpson quadrature.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        // stop once the refinement is at rounding level
        let floor = 4.0 * f64::EPSILON * (left.abs() + right.abs());
        if depth == 0 || delta.abs() <= 15.0 * tol.max(floor) {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 50)
}

/// Explicit law over every length-`len` sequence of a `vocab`-token
/// alphabet, position 0 most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDistribution {
    vocab: usize,
    len: usize,
    probs: Vec<f64>,
    germline: Option<TokenSequence>,
}

impl ToyDistribution {
    pub fn new(vocab: usize, len: usize, probs: Vec<f64>) -> Result<Self> {
        let states = checked_states(vocab, len)?;
        if probs.len() != states {
            return Err(Error::LengthMismatch {
                context: "toy probabilities vs n^d",
                left: probs.len(),
                right: states,
            });
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidArgument(format!("toy probability {p} is negative or non-finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("toy probabilities sum to {total}, not 1")));
        }
        Ok(Self {
            vocab,
            len,
            probs,
            germline: None,
        })
    }

    /// Build from `(sequence, probability)` pairs; unlisted sequences get 0.
    pub fn from_support(alphabet: &Alphabet, support: &[(&str, f64)]) -> Result<Self> {
        let len = support
            .first()
            .map(|(s, _)| s.chars().count())
            .ok_or(Error::EmptySequence)?;
        let n = alphabet.size();
        let mut probs = vec![0.0; checked_states(n, len)?];
        for (text, p) in support {
            let x = crate::seq::encode(text, alphabet)?;
            if x.len() != len {
                return Err(Error::LengthMismatch {
                    context: "toy support sequence",
                    left: x.len(),
                    right: len,
                });
            }
            probs[index_of(x.ids(), n)] += p;
        }
        Self::new(n, len, probs)
    }

    pub fn with_germline(mut self, germline: TokenSequence) -> Result<Self> {
        if germline.len() != self.len {
            return Err(Error::LengthMismatch {
                context: "toy germline",
                left: germline.len(),
                right: self.len,
            });
        }
        self.germline = Some(germline);
        Ok(self)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn germline(&self) -> Option<&TokenSequence> {
        self.germline.as_ref()
    }

    pub fn state_count(&self) -> usize {
        self.probs.len()
    }

    pub fn index(&self, x: &TokenSequence) -> usize {
        index_of(x.ids(), self.vocab)
    }

    pub fn sequence(&self, index: usize) -> TokenSequence {
        TokenSequence::from_ids_unchecked(sequence_at(index, self.vocab, self.len))
    }

    pub fn prob(&self, x: &TokenSequence) -> f64 {
        self.probs[self.index(x)]
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    /// Support sequences with their probabilities.
    pub fn support(&self) -> Vec<(TokenSequence, f64)> {
        (0..self.probs.len())
            .filter(|&k| self.probs[k] > 0.0)
            .map(|k| (self.sequence(k), self.probs[k]))
            .collect()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenSequence {
        self.sequence(rng::sample_index(&self.probs, rng).expect("toy distribution has mass"))
    }

    /// Kernel of the given variant; the germline variant needs a germline.
    pub fn kernel(&self, variant: KernelVariant, alphabet: &Alphabet) -> Result<TransitionKernel> {
        if alphabet.size() != self.vocab {
            return Err(Error::LengthMismatch {
                context: "alphabet vs toy vocabulary",
                left: alphabet.size(),
                right: self.vocab,
            });
        }
        match variant {
            KernelVariant::Uniform => Ok(TransitionKernel::uniform(alphabet)),
            KernelVariant::Mask => TransitionKernel::mask(alphabet),
            KernelVariant::Germline => {
                let g = self.germline.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("germline kernel on a toy without a germline".into())
                })?;
                TransitionKernel::germline(alphabet, g)
            }
        }
    }
}

fn checked_states(vocab: usize, len: usize) -> Result<usize> {
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    let mut states: usize = 1;
    for _ in 0..len {
        states = states.saturating_mul(vocab);
        if states > STATE_SPACE_CAP {
            return Err(Error::StateSpaceTooLarge {
                states: vocab.saturating_pow(len as u32),
                cap: STATE_SPACE_CAP,
            });
        }
    }
    Ok(states)
}

fn index_of(ids: &[usize], n: usize) -> usize {
    ids.iter().fold(0, |acc, &t| acc * n + t)
}

fn sequence_at(mut index: usize, n: usize, len: usize) -> Vec<usize> {
    let mut ids = vec![0; len];
    for slot in ids.iter_mut().rev() {
        *slot = index % n;
        index /= n;
    }
    ids
}

/// Per-position `exp(σ R_i)` from the generic exponential.
fn position_transitions(kernel: &TransitionKernel, len: usize, sigma: f64) -> Result<Vec<Vec<f64>>> {
    let n = kernel.size();
    (0..len)
        .map(|i| Ok(matrix_exponential(&kernel.rate_matrix(i)?, n, sigma)))
        .collect()
}

/// Push `data` through the forward process to time `t`.
pub fn joint_distribution_at_t(
    data: &ToyDistribution,
    kernel: &TransitionKernel,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<ToyDistribution> {
    if kernel.size() != data.vocab {
        return Err(Error::LengthMismatch {
            context: "kernel alphabet vs toy vocabulary",
            left: kernel.size(),
            right: data.vocab,
        });
    }
    kernel.check_length(data.len)?;
    let sigma = schedule.total_noise(t)?;
    let mats = position_transitions(kernel, data.len, sigma)?;
    let n = data.vocab;
    let mut out = vec![0.0; data.probs.len()];
    for (k0, &p0) in data.probs.iter().enumerate() {
        if p0 == 0.0 {
            continue;
        }
        let x0 = sequence_at(k0, n, data.len);
        for (k, slot) in out.iter_mut().enumerate() {
            let x = sequence_at(k, n, data.len);
            let w: f64 = (0..data.len).map(|i| mats[i][x0[i] * n + x[i]]).product();
            *slot += p0 * w;
        }
    }
    // exponentials of conservative matrices can leave ~1e-17 negatives
    out.iter_mut().for_each(|p| *p = p.max(0.0));
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(ToyDistribution {
        vocab: n,
        len: data.len,
        probs: out,
        germline: data.germline.clone(),
    })
}

fn score_from_joint(pt: &ToyDistribution, x: &TokenSequence) -> Result<ScoreTable> {
    let n = pt.vocab;
    let here = pt.prob(x);
    if !(here > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sequence {:?} has zero probability at this time",
            x.ids()
        )));
    }
    let mut values = vec![0.0; x.len() * n];
    for i in 0..x.len() {
        for y in 0..n {
            values[i * n + y] = pt.prob(&x.with_token(i, y)) / here;
        }
    }
    ScoreTable::new(values, n, x)
}

/// `p_t(x with position i set to y) / p_t(x)` for every `(i, y)`.
pub fn exact_concrete_score(
    data: &ToyDistribution,
    kernel: &TransitionKernel,
    x: &TokenSequence,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<ScoreTable> {
    if x.len() != data.len {
        return Err(Error::LengthMismatch {
            context: "sequence vs toy length",
            left: x.len(),
            right: data.len,
        });
    }
    let pt = joint_distribution_at_t(data, kernel, t, schedule)?;
    score_from_joint(&pt, x)
}

/// Score model backed by the exact joint law, caching `p_t` per time.
pub struct ExactScore {
    data: ToyDistribution,
    kernel: TransitionKernel,
    schedule: NoiseSchedule,
    cache: Mutex<HashMap<u64, ToyDistribution>>,
}

impl ExactScore {
    pub fn new(data: ToyDistribution, kernel: TransitionKernel, schedule: NoiseSchedule) -> Self {
        Self {
            data,
            kernel,
            schedule,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn data(&self) -> &ToyDistribution {
        &self.data
    }

    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    pub fn joint_at(&self, t: f64) -> Result<ToyDistribution> {
        let mut cache = self.cache.lock().expect("cache lock");
        if let Some(pt) = cache.get(&t.to_bits()) {
            return Ok(pt.clone());
        }
        let pt = joint_distribution_at_t(&self.data, &self.kernel, t, &self.schedule)?;
        cache.insert(t.to_bits(), pt.clone());
        Ok(pt)
    }
}

impl ScoreModel for ExactScore {
    fn vocab(&self) -> usize {
        self.data.vocab
    }

    fn score(&self, x_t: &TokenSequence, t: f64) -> Result<ScoreTable> {
        let pt = self.joint_at(t)?;
        score_from_joint(&pt, x_t)
    }
}

/// Law of the reverse process started where the sampler starts.
fn reverse_start(data: &ToyDistribution, kernel: &TransitionKernel) -> Result<Vec<f64>> {
    let n = data.vocab;
    let mut p = vec![0.0; data.probs.len()];
    match kernel.variant() {
        KernelVariant::Mask => {
            let m = kernel.target(0).expect("mask kernel has a target");
            p[index_of(&vec![m; data.len], n)] = 1.0;
        }
        KernelVariant::Germline => {
            let g = data
                .germline
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("germline kernel on a toy without a germline".into()))?;
            p[index_of(g.ids(), n)] = 1.0;
        }
        KernelVariant::Uniform => {
            let mass = 1.0 / (kernel.state_count() as f64).powi(data.len as i32);
            for (k, slot) in p.iter_mut().enumerate() {
                if sequence_at(k, n, data.len).iter().all(|&t| kernel.is_state(t)) {
                    *slot = mass;
                }
            }
        }
    }
    Ok(p)
}

/// Exact law of the sampler's output when driven by exact scores, by
/// enumerating every factorized transition.
pub fn exact_reverse_terminal(
    data: &ToyDistribution,
    kernel: &TransitionKernel,
    schedule: &NoiseSchedule,
    steps: usize,
    decoder: Decoder,
) -> Result<ToyDistribution> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let model = ExactScore::new(data.clone(), kernel.clone(), *schedule);
    let n = data.vocab;
    let mut p = reverse_start(data, kernel)?;
    for (t, dt) in time_grid(steps) {
        let mut next = vec![0.0; p.len()];
        for (k, &mass) in p.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let x = data.sequence(k);
            let score = model.score(&x, t)?;
            let dist = step_distribution(decoder, &score, kernel, &x, t, dt, schedule)?;
            for (j, slot) in next.iter_mut().enumerate() {
                let y = sequence_at(j, n, data.len);
                let w: f64 = y.iter().enumerate().map(|(i, &yi)| dist.rows[i][yi]).product();
                *slot += mass * w;
            }
        }
        p = next;
    }
    Ok(ToyDistribution {
        vocab: n,
        len: data.len,
        probs: p,
        germline: data.germline.clone(),
    })
}

/// Total variation distance between two laws on the same enumeration.
pub fn tv_distance(p: &ToyDistribution, q: &ToyDistribution) -> Result<f64> {
    if p.vocab != q.vocab || p.len != q.len {
        return Err(Error::InvalidArgument(format!(
            "mismatched supports: {}^{} vs {}^{}",
            p.vocab, p.len, q.vocab, q.len
        )));
    }
    Ok(0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// TV between one exact reverse Euler step from `p_t` and `p_{t-dt}`.
///
/// The reverse generator uses rates `(p_t(y)/p_t(x)) R(y -> x)` between
/// Hamming neighbors; the error should shrink like `dt^2`.
pub fn reverse_step_error(
    data: &ToyDistribution,
    kernel: &TransitionKernel,
    t: f64,
    dt: f64,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    let pt = joint_distribution_at_t(data, kernel, t, schedule)?;
    let target = joint_distribution_at_t(data, kernel, t - dt, schedule)?;
    let n = data.vocab;
    let rate = schedule.rate(t)?;
    let mut next = pt.probs.clone();
    for (k, &px) in pt.probs.iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        let x = sequence_at(k, n, data.len);
        for i in 0..data.len {
            for y in 0..n {
                if y == x[i] {
                    continue;
                }
                let mut ny = x.clone();
                ny[i] = y;
                let j = index_of(&ny, n);
                let flow = dt * rate * pt.probs[j] * kernel.rate(i, y, x[i]);
                next[j] += flow;
                next[k] -= flow;
            }
        }
    }
    let stepped = ToyDistribution {
        probs: next,
        ..pt
    };
    tv_distance(&stepped, &target)
}

/// Worst absolute difference between closed-form marginals and the
/// generic exponential over random `(variant, t, x_0)` cases.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCheck {
    pub cases: usize,
    pub max_error: f64,
}

/// `flip_sign` evaluates the closed form at `-σ(t)` to demonstrate that
/// the check catches a sign error; the reference uses `σ(t)` obtained by
/// integrating the rate numerically.
pub fn check_marginals(cases: usize, seed: u64, flip_sign: bool) -> Result<MarginalCheck> {
    let schedule = NoiseSchedule::default();
    let alphabet = Alphabet::protein();
    let n = alphabet.size();
    let mut r = rng::stream(seed, "oracle/marginals");
    let mut max_error: f64 = 0.0;
    for _ in 0..cases {
        let variant = KernelVariant::ALL[r.gen_range(0..3)];
        let t: f64 = r.gen_range(0.0..=1.0);
        let len = r.gen_range(1..=8);
        let residues = alphabet.residues();
        let pick = |r: &mut rng::Rng| residues[r.gen_range(0..residues.len())];
        let germline = TokenSequence::new((0..len).map(|_| pick(&mut r)).collect(), n)?;
        let kernel = match variant {
            KernelVariant::Uniform => TransitionKernel::uniform(&alphabet),
            KernelVariant::Mask => TransitionKernel::mask(&alphabet)?,
            KernelVariant::Germline => TransitionKernel::germline(&alphabet, &germline)?,
        };
        // mostly mutated, sometimes already at the germline
        let x0 = TokenSequence::new(
            (0..len)
                .map(|i| if r.gen_bool(0.3) { germline.get(i) } else { pick(&mut r) })
                .collect(),
            n,
        )?;
        let sigma_ref = integrate(&|u| schedule.rate(u).expect("u in [0,1]"), 0.0, t, 1e-13);
        let sigma = schedule.total_noise(t)?;
        let closed = if flip_sign {
            x0.ids()
                .iter()
                .enumerate()
                .map(|(i, &c)| kernel.marginal_row(i, c, -sigma))
                .collect::<Result<Vec<_>>>()?
        } else {
            marginal(&kernel, &x0, t, &schedule)?.rows
        };
        for (i, row) in closed.iter().enumerate() {
            let m = matrix_exponential(&kernel.rate_matrix(i)?, n, sigma_ref);
            let c = x0.get(i);
            for y in 0..n {
                max_error = max_error.max((row[y] - m[c * n + y]).abs());
            }
        }
    }
    Ok(MarginalCheck { cases, max_error })
}

/// Three fixed small problems, one per kernel variant.
#[derive(Debug, Clone)]
pub struct Toy {
    pub name: &'static str,
    pub alphabet: Alphabet,
    pub data: ToyDistribution,
    pub kernel: TransitionKernel,
}

pub fn standard_toys() -> Vec<Toy> {
    let build = || -> Result<Vec<Toy>> {
        let ab = Alphabet::new("AB#", Some(2))?;
        let mask_data =
            ToyDistribution::from_support(&ab, &[("AA", 0.5), ("AB", 0.1), ("BA", 0.15), ("BB", 0.25)])?;
        let abc = Alphabet::new("ABC", None)?;
        let uniform_data = ToyDistribution::from_support(
            &abc,
            &[
                ("AA", 0.30),
                ("AB", 0.05),
                ("AC", 0.05),
                ("BA", 0.04),
                ("BB", 0.25),
                ("BC", 0.06),
                ("CA", 0.03),
                ("CB", 0.07),
                ("CC", 0.15),
            ],
        )?;
        let abcd = Alphabet::new("ABCD", None)?;
        let germline = crate::seq::encode("AB", &abcd)?;
        let germline_data = ToyDistribution::from_support(
            &abcd,
            &[
                ("AB", 0.25),
                ("CB", 0.2),
                ("AD", 0.15),
                ("CD", 0.15),
                ("DB", 0.15),
                ("DD", 0.1),
            ],
        )?
        .with_germline(germline)?;
        let mut toys = Vec::new();
        for (name, alphabet, data, variant) in [
            ("mask", ab, mask_data, KernelVariant::Mask),
            ("uniform", abc, uniform_data, KernelVariant::Uniform),
            ("germline", abcd, germline_data, KernelVariant::Germline),
        ] {
            let kernel = data.kernel(variant, &alphabet)?;
            toys.push(Toy { name, alphabet, data, kernel });
        }
        Ok(toys)
    };
    build().expect("fixed toys are valid")
}

/// One line of the oracle report.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub tolerance: f64,
    pub observed: f64,
    pub passed: bool,
}

impl std::fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} observed {:.3e} tolerance {:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.tolerance
        )
    }
}

fn check(name: impl Into<String>, observed: f64, tolerance: f64) -> OracleCheck {
    OracleCheck {
        name: name.into(),
        tolerance,
        observed,
        passed: observed <= tolerance,
    }
}

/// Largest relative gap between scores from the exponential-based joint and
/// scores built from closed-form per-position marginals.
fn score_gap(toy: &Toy, t: f64, schedule: &NoiseSchedule, flip_sign: bool) -> Result<f64> {
    let data = &toy.data;
    let n = data.vocab;
    let mut sigma = schedule.total_noise(t)?;
    if flip_sign {
        sigma = -sigma;
    }
    let mut closed = vec![0.0; data.probs.len()];
    for (x0, p0) in data.support() {
        let rows = (0..data.len)
            .map(|i| toy.kernel.marginal_row(i, x0.get(i), sigma))
            .collect::<Result<Vec<_>>>()?;
        for (k, slot) in closed.iter_mut().enumerate() {
            let x = sequence_at(k, n, data.len);
            *slot += p0 * (0..data.len).map(|i| rows[i][x[i]]).product::<f64>();
        }
    }
    let exact = ExactScore::new(data.clone(), toy.kernel.clone(), *schedule);
    let mut worst: f64 = 0.0;
    for (k, &pk) in closed.iter().enumerate() {
        let x = data.sequence(k);
        if !(pk > 1e-12) || !x.ids().iter().all(|&t| toy.kernel.is_state(t)) {
            continue;
        }
        let Ok(table) = exact.score(&x, t) else {
            return Ok(f64::INFINITY);
        };
        for i in 0..data.len {
            for y in toy.kernel.states() {
                let want = closed[index_of(x.with_token(i, y).ids(), n)] / pk;
                let got = table.get(i, y);
                worst = worst.max((got - want).abs() / want.abs().max(1e-12));
            }
        }
    }
    Ok(worst)
}

/// Marginals, scores, reverse terminals and ELBO tightness on the standard
/// toys. `flip_sign` corrupts the closed-form noise level.
pub fn run_suite(seed: u64, flip_sign: bool) -> Result<Vec<OracleCheck>> {
    let schedule = NoiseSchedule::default();
    let mut out = Vec::new();
    let m = check_marginals(200, seed, flip_sign)?;
    out.push(check("marginals (200 cases)", m.max_error, 1e-8));
    let toys = standard_toys();
    for toy in &toys {
        let mut worst: f64 = 0.0;
        for t in [0.1, 0.5, 0.9] {
            worst = worst.max(score_gap(toy, t, &schedule, flip_sign)?);
        }
        out.push(check(format!("scores/{}", toy.name), worst, 1e-8));
    }
    for toy in &toys {
        let p = exact_reverse_terminal(&toy.data, &toy.kernel, &schedule, 256, Decoder::Tweedie)?;
        out.push(check(format!("reverse-tweedie-256/{}", toy.name), tv_distance(&toy.data, &p)?, 0.02));
    }
    for toy in &toys {
        let exact = ExactScore::new(toy.data.clone(), toy.kernel.clone(), schedule);
        let support = toy.data.support();
        let items: Vec<_> = support.iter().map(|(x, _)| (toy.kernel.clone(), x.clone())).collect();
        let weights: Vec<f64> = support.iter().map(|(_, p)| *p).collect();
        let config = crate::eval::ElboConfig {
            quadrature_steps: 1024,
            monte_carlo_samples: 16,
            seed,
        };
        let report = crate::eval::elbo_perplexity_weighted(&exact, &items, &weights, &config, &schedule)?;
        let target = (toy.data.entropy() / toy.data.len as f64).exp();
        out.push(check(
            format!("elbo-tightness/{}", toy.name),
            (report.aggregate - target).abs() / target,
            0.02,
        ));
    }
    Ok(out)
}
