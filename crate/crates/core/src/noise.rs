//! The forward continuous-time Markov chain.
//!
//! Every kernel factorizes over positions: each position evolves under the
//! same `n x n` rate matrix scaled by the schedule rate `sigma'(t)`, so the
//! marginal at time `t` is `exp(sigma(t) R)` applied to the clean token.
//!
//! Rates use the row convention `R[a][b]` = rate of jumping from `a` to `b`.
//! The uniform kernel jumps to each other state at rate `1/m` (with `m` the
//! number of states), the absorbing kernels jump into their target at rate 1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sample_index;
use crate::seq::{Alphabet, GermlinePair, TokenSequence};

/// Log-linear schedule `sigma(t) = -ln(1 - (1 - eps) t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub epsilon: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self { epsilon: 1e-3 }
    }
}

impl NoiseSchedule {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "schedule epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }

    fn check(t: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        Ok(())
    }

    /// Cumulative noise `sigma(t)`.
    pub fn total_noise(&self, t: f64) -> Result<f64> {
        Self::check(t)?;
        Ok(-(-(1.0 - self.epsilon) * t).ln_1p())
    }

    /// Instantaneous rate `sigma'(t)`.
    pub fn rate(&self, t: f64) -> Result<f64> {
        Self::check(t)?;
        Ok((1.0 - self.epsilon) / (1.0 - (1.0 - self.epsilon) * t))
    }

    /// `exp(-sigma(t))`, the probability that a token has not jumped yet.
    pub fn survival(&self, t: f64) -> Result<f64> {
        Self::check(t)?;
        Ok(1.0 - (1.0 - self.epsilon) * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelVariant {
    Uniform,
    Mask,
    Germline,
}

impl KernelVariant {
    pub const ALL: [KernelVariant; 3] = [Self::Uniform, Self::Mask, Self::Germline];

    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Mask => "mask",
            Self::Germline => "germline",
        }
    }

    pub fn is_absorbing(self) -> bool {
        !matches!(self, Self::Uniform)
    }
}

impl std::fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "mask" => Ok(Self::Mask),
            "germline" => Ok(Self::Germline),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel variant {other:?} (expected uniform, mask or germline)"
            ))),
        }
    }
}

/// Factorized forward rate structure.
///
/// The state space of the uniform and germline kernels is the set of
/// non-mask tokens; the mask kernel uses the whole alphabet. Tokens outside
/// the state space never appear in a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    variant: KernelVariant,
    alphabet: Alphabet,
    targets: Vec<usize>,
    states: Vec<bool>,
}

impl TransitionKernel {
    pub fn uniform(alphabet: &Alphabet) -> Self {
        let states = (0..alphabet.size()).map(|i| !alphabet.is_mask(i)).collect();
        Self {
            variant: KernelVariant::Uniform,
            alphabet: alphabet.clone(),
            targets: Vec::new(),
            states,
        }
    }

    pub fn mask(alphabet: &Alphabet) -> Result<Self> {
        let mask = alphabet.mask_index().ok_or_else(|| {
            Error::InvalidArgument("the mask kernel needs an alphabet with a mask symbol".into())
        })?;
        Ok(Self {
            variant: KernelVariant::Mask,
            alphabet: alphabet.clone(),
            targets: vec![mask],
            states: vec![true; alphabet.size()],
        })
    }

    pub fn germline(alphabet: &Alphabet, germline: &TokenSequence) -> Result<Self> {
        if let Some(p) = germline.ids().iter().position(|&t| t >= alphabet.size() || alphabet.is_mask(t)) {
            return Err(Error::InvalidArgument(format!(
                "germline token at position {p} is not a residue"
            )));
        }
        let states = (0..alphabet.size()).map(|i| !alphabet.is_mask(i)).collect();
        Ok(Self {
            variant: KernelVariant::Germline,
            alphabet: alphabet.clone(),
            targets: germline.ids().to_vec(),
            states,
        })
    }

    /// Kernel for one training pair; only the germline variant uses the
    /// pair's germline.
    pub fn for_pair(variant: KernelVariant, alphabet: &Alphabet, pair: &GermlinePair) -> Result<Self> {
        match variant {
            KernelVariant::Uniform => Ok(Self::uniform(alphabet)),
            KernelVariant::Mask => Self::mask(alphabet),
            KernelVariant::Germline => Self::germline(alphabet, pair.germline()),
        }
    }

    pub fn variant(&self) -> KernelVariant {
        self.variant
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn size(&self) -> usize {
        self.alphabet.size()
    }

    pub fn is_state(&self, token: usize) -> bool {
        self.states.get(token).copied().unwrap_or(false)
    }

    pub fn state_count(&self) -> usize {
        self.states.iter().filter(|&&s| s).count()
    }

    pub fn states(&self) -> impl Iterator<Item = usize> + '_ {
        self.states.iter().enumerate().filter_map(|(i, &s)| s.then_some(i))
    }

    /// Absorbing token at `position`, if the kernel has one.
    pub fn target(&self, position: usize) -> Option<usize> {
        match self.variant {
            KernelVariant::Uniform => None,
            KernelVariant::Mask => Some(self.targets[0]),
            KernelVariant::Germline => self.targets.get(position).copied(),
        }
    }

    /// Germline kernels are tied to one sequence length.
    pub fn check_length(&self, len: usize) -> Result<()> {
        if self.variant == KernelVariant::Germline && len != self.targets.len() {
            return Err(Error::LengthMismatch {
                context: "sequence vs germline kernel",
                left: len,
                right: self.targets.len(),
            });
        }
        Ok(())
    }

    fn check_position(&self, position: usize) -> Result<()> {
        if self.variant == KernelVariant::Germline && position >= self.targets.len() {
            return Err(Error::InvalidArgument(format!(
                "position {position} is beyond the germline (length {})",
                self.targets.len()
            )));
        }
        Ok(())
    }

    /// Forward rate from `from` to `to` (off-diagonal) at `position`.
    pub fn rate(&self, position: usize, from: usize, to: usize) -> f64 {
        if from == to || !self.is_state(from) || !self.is_state(to) {
            return 0.0;
        }
        match self.target(position) {
            None => 1.0 / self.state_count() as f64,
            Some(g) => {
                if to == g {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Row-major `n x n` rate matrix at `position`; rows sum to zero.
    pub fn rate_matrix(&self, position: usize) -> Result<Vec<f64>> {
        self.check_position(position)?;
        let n = self.size();
        let mut r = vec![0.0; n * n];
        for a in 0..n {
            let mut out = 0.0;
            for b in 0..n {
                let q = self.rate(position, a, b);
                r[a * n + b] = q;
                out += q;
            }
            r[a * n + a] = -out;
        }
        Ok(r)
    }

    /// Closed-form `exp(delta_sigma R)` at `position`, row-major `n x n`.
    /// Valid for negative increments too; rows are stochastic when
    /// `delta_sigma >= 0`. Tokens outside the state space map to themselves.
    pub fn step_transition_matrix(&self, delta_sigma: f64, position: usize) -> Result<Vec<f64>> {
        self.check_position(position)?;
        let n = self.size();
        let keep = (-delta_sigma).exp();
        let mut m = vec![0.0; n * n];
        for a in 0..n {
            if !self.is_state(a) {
                m[a * n + a] = 1.0;
            }
        }
        match self.target(position) {
            None => {
                let share = -(-delta_sigma).exp_m1() / self.state_count() as f64;
                for a in self.states() {
                    for b in self.states() {
                        m[a * n + b] = share;
                    }
                    m[a * n + a] += keep;
                }
            }
            Some(g) => {
                for a in self.states() {
                    if a == g {
                        m[a * n + a] = 1.0;
                    } else {
                        m[a * n + a] = keep;
                        m[a * n + g] = -(-delta_sigma).exp_m1();
                    }
                }
            }
        }
        Ok(m)
    }

    /// `p(x_t^i = . | x_0^i = clean)` at total noise `sigma`.
    pub fn marginal_row(&self, position: usize, clean: usize, sigma: f64) -> Result<Vec<f64>> {
        self.check_position(position)?;
        if !self.is_state(clean) {
            return Err(Error::ImpossibleState {
                variant: self.variant.name(),
                position,
                token: clean,
            });
        }
        let n = self.size();
        let keep = (-sigma).exp();
        let jumped = -(-sigma).exp_m1();
        let mut row = vec![0.0; n];
        match self.target(position) {
            None => {
                let share = jumped / self.state_count() as f64;
                for b in self.states() {
                    row[b] = share;
                }
                row[clean] += keep;
            }
            Some(g) if g == clean => row[g] = 1.0,
            Some(g) => {
                row[clean] = keep;
                row[g] = jumped;
            }
        }
        Ok(row)
    }

    /// Closed-form `p(y | x0) / p(xt | x0)` for one position.
    pub fn marginal_ratio(
        &self,
        clean: usize,
        noised: usize,
        candidate: usize,
        sigma: f64,
        position: usize,
    ) -> Result<f64> {
        let row = self.marginal_row(position, clean, sigma)?;
        let denom = row.get(noised).copied().unwrap_or(0.0);
        if denom <= 0.0 {
            return Err(Error::ImpossibleState {
                variant: self.variant.name(),
                position,
                token: noised,
            });
        }
        Ok(row.get(candidate).copied().unwrap_or(0.0) / denom)
    }
}

/// `d x n` table of per-position distributions of `x_t` given `x_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionMarginal {
    pub rows: Vec<Vec<f64>>,
}

impl PositionMarginal {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn marginal(
    kernel: &TransitionKernel,
    x0: &TokenSequence,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<PositionMarginal> {
    kernel.check_length(x0.len())?;
    let sigma = schedule.total_noise(t)?;
    let rows = x0
        .ids()
        .iter()
        .enumerate()
        .map(|(i, &clean)| kernel.marginal_row(i, clean, sigma))
        .collect::<Result<_>>()?;
    Ok(PositionMarginal { rows })
}

/// Draw `x_t ~ p(. | x_0)` independently per position.
pub fn forward_sample<R: Rng + ?Sized>(
    kernel: &TransitionKernel,
    x0: &TokenSequence,
    t: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<TokenSequence> {
    let m = marginal(kernel, x0, t, schedule)?;
    let ids = m
        .rows
        .iter()
        .map(|row| sample_index(row, rng).expect("marginal rows are normalized"))
        .collect();
    Ok(TokenSequence::from_ids_unchecked(ids))
}
