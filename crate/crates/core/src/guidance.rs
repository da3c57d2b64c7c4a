//! Property predictors used to steer sampling.
//!
//! A classifier maps a sequence and a condition to a log-probability-like
//! logit. Guidance only ever uses differences of logits between a sequence
//! and its single-substitution neighbors, so any additive constant cancels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::seq::{encode, Alphabet, TokenSequence};

/// What the classifier is asked to score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// Log-probability of a class label.
    Class(usize),
    /// Regression output, higher is better.
    Maximize,
    /// Negated regression output, lower is better.
    Minimize,
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maximize" | "max" => Ok(Self::Maximize),
            "minimize" | "min" => Ok(Self::Minimize),
            other => other
                .strip_prefix("class:")
                .and_then(|c| c.parse().ok())
                .map(Self::Class)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown condition {other:?} (expected minimize, maximize or class:<k>)"
                    ))
                }),
        }
    }
}

/// Logits of every single-substitution neighbor of a sequence.
///
/// `values` is `d x n` row-major. Entries that were not evaluated (the
/// current token and mask columns) hold the current logit, so they leave a
/// guided score unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborLogits {
    pub len: usize,
    pub vocab: usize,
    pub values: Vec<f64>,
    pub current: f64,
    /// Classifier logits computed: one per neighbor plus the current sequence.
    pub evaluations: u64,
}

impl NeighborLogits {
    pub fn get(&self, position: usize, token: usize) -> f64 {
        self.values[position * self.vocab + token]
    }
}

pub trait Classifier {
    fn logit(&self, x: &TokenSequence, condition: &Condition) -> Result<f64>;

    /// Batch form over all `d x (n - 1)` substitution neighbors. Mask-column
    /// neighbors are never evaluated.
    fn neighbor_logits(
        &self,
        x: &TokenSequence,
        condition: &Condition,
        alphabet: &Alphabet,
    ) -> Result<NeighborLogits> {
        let current = self.logit(x, condition)?;
        let n = alphabet.size();
        let mut values = vec![current; x.len() * n];
        let mut evaluations = 1;
        let mut neighbor = x.clone();
        for i in 0..x.len() {
            let original = x.get(i);
            for y in alphabet.residues() {
                if y == original {
                    continue;
                }
                neighbor.set(i, y);
                values[i * n + y] = self.logit(&neighbor, condition)?;
                evaluations += 1;
            }
            neighbor.set(i, original);
        }
        Ok(NeighborLogits {
            len: x.len(),
            vocab: n,
            values,
            current,
            evaluations,
        })
    }
}

pub fn neighbor_logits<C: Classifier + ?Sized>(
    classifier: &C,
    x: &TokenSequence,
    condition: &Condition,
    alphabet: &Alphabet,
) -> Result<NeighborLogits> {
    classifier.neighbor_logits(x, condition, alphabet)
}

/// Per-token hydropathy values; mask and unknown tokens have none.
#[derive(Debug, Clone, PartialEq)]
pub struct HydropathyScale {
    values: Vec<Option<f64>>,
}

impl HydropathyScale {
    pub fn new(values: Vec<Option<f64>>) -> Self {
        Self { values }
    }

    /// The Kyte-Doolittle scale shipped in `data/kyte_doolittle.tsv`.
    pub fn kyte_doolittle(alphabet: &Alphabet) -> Result<Self> {
        Self::parse(
            include_str!("../data/kyte_doolittle.tsv"),
            alphabet,
            Path::new("data/kyte_doolittle.tsv"),
        )
    }

    pub fn load(path: &Path, alphabet: &Alphabet) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, alphabet, path)
    }

    /// TSV `token<TAB>value` with a header line; lines starting with `# `
    /// are comments.
    pub fn parse(text: &str, alphabet: &Alphabet, path: &Path) -> Result<Self> {
        let bad = |message: String| Error::DataFormat {
            path: path.to_path_buf(),
            message,
        };
        let mut values = vec![None; alphabet.size()];
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with("# ") || line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                if line.trim_end() != "token\tvalue" {
                    return Err(bad(format!("line {}: expected header 'token\\tvalue'", lineno + 1)));
                }
                header_seen = true;
                continue;
            }
            let (tok, val) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("line {}: expected two tab-separated fields", lineno + 1)))?;
            let mut chars = tok.chars();
            let symbol = match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => return Err(bad(format!("line {}: token must be one symbol", lineno + 1))),
            };
            let id = alphabet
                .index_of(symbol)
                .ok_or_else(|| bad(format!("line {}: symbol {symbol:?} not in alphabet", lineno + 1)))?;
            let v: f64 = val
                .trim()
                .parse()
                .map_err(|_| bad(format!("line {}: bad value {val:?}", lineno + 1)))?;
            values[id] = Some(v);
        }
        Ok(Self { values })
    }

    pub fn value(&self, token: usize) -> Option<f64> {
        self.values.get(token).copied().flatten()
    }
}

/// Mean per-residue hydropathy.
pub fn hydropathy_score(x: &TokenSequence, scale: &HydropathyScale) -> Result<f64> {
    let mut total = 0.0;
    for (i, &tok) in x.ids().iter().enumerate() {
        total += scale.value(tok).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "no hydropathy value for token {tok} at position {i} (masked or unknown)"
            ))
        })?;
    }
    Ok(total / x.len() as f64)
}

/// Exact hydropathy as a regression "classifier".
#[derive(Debug, Clone)]
pub struct HydropathyProperty {
    pub scale: HydropathyScale,
}

impl Classifier for HydropathyProperty {
    /// Tokens without a value (the mask) count as 0, so partially
    /// unmasked sequences can be guided.
    fn logit(&self, x: &TokenSequence, condition: &Condition) -> Result<f64> {
        let h = x.ids().iter().filter_map(|&tok| self.scale.value(tok)).sum::<f64>() / x.len() as f64;
        match condition {
            Condition::Maximize => Ok(h),
            Condition::Minimize => Ok(-h),
            Condition::Class(_) => Err(Error::InvalidArgument(
                "hydropathy is a regression property; use minimize or maximize".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeTask {
    Binary,
    MultiClass(usize),
    Regression,
}

impl ProbeTask {
    fn outputs(self) -> usize {
        match self {
            Self::Binary | Self::Regression => 1,
            Self::MultiClass(k) => k,
        }
    }
}

/// How per-position contributions are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    Sum,
    #[default]
    Mean,
}

/// Linear head over one-hot sequence features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub task: ProbeTask,
    pub pooling: Pooling,
    pub max_len: usize,
    pub vocab: usize,
    /// `outputs x max_len x vocab`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearProbe {
    pub fn zeros(task: ProbeTask, pooling: Pooling, max_len: usize, vocab: usize) -> Self {
        let k = task.outputs();
        Self {
            task,
            pooling,
            max_len,
            vocab,
            weights: vec![0.0; k * max_len * vocab],
            bias: vec![0.0; k],
        }
    }

    pub fn weight(&self, output: usize, position: usize, token: usize) -> f64 {
        self.weights[(output * self.max_len + position) * self.vocab + token]
    }

    fn pool_scale(&self, len: usize) -> f64 {
        match self.pooling {
            Pooling::Sum => 1.0,
            Pooling::Mean => 1.0 / len as f64,
        }
    }

    fn check(&self, x: &TokenSequence) -> Result<()> {
        if x.len() > self.max_len {
            return Err(Error::InvalidArgument(format!(
                "sequence length {} exceeds probe max length {}",
                x.len(),
                self.max_len
            )));
        }
        if let Some(&t) = x.ids().iter().find(|&&t| t >= self.vocab) {
            return Err(Error::InvalidArgument(format!("token {t} out of probe vocabulary")));
        }
        Ok(())
    }

    /// Raw outputs (one per class, or a single value).
    pub fn outputs(&self, x: &TokenSequence) -> Result<Vec<f64>> {
        self.check(x)?;
        let scale = self.pool_scale(x.len());
        Ok((0..self.task.outputs())
            .map(|o| {
                let sum: f64 = x.ids().iter().enumerate().map(|(i, &t)| self.weight(o, i, t)).sum();
                self.bias[o] + scale * sum
            })
            .collect())
    }

    fn logit_from_outputs(&self, out: &[f64], condition: &Condition) -> Result<f64> {
        match (self.task, condition) {
            (ProbeTask::Binary, Condition::Class(c)) if *c < 2 => {
                let z = if *c == 1 { out[0] } else { -out[0] };
                Ok(-softplus(-z))
            }
            (ProbeTask::MultiClass(k), Condition::Class(c)) if *c < k => Ok(out[*c] - log_sum_exp(out)),
            (ProbeTask::Regression, Condition::Maximize) => Ok(out[0]),
            (ProbeTask::Regression, Condition::Minimize) => Ok(-out[0]),
            (task, cond) => Err(Error::InvalidArgument(format!(
                "condition {cond:?} does not apply to a {task:?} probe"
            ))),
        }
    }

    pub fn predict(&self, x: &TokenSequence) -> Result<f64> {
        let out = self.outputs(x)?;
        Ok(match self.task {
            ProbeTask::Binary => f64::from(u8::from(out[0] > 0.0)),
            ProbeTask::MultiClass(_) => argmax(&out) as f64,
            ProbeTask::Regression => out[0],
        })
    }
}

impl Classifier for LinearProbe {
    fn logit(&self, x: &TokenSequence, condition: &Condition) -> Result<f64> {
        let out = self.outputs(x)?;
        self.logit_from_outputs(&out, condition)
    }

    /// Neighbor outputs are the current outputs shifted by one weight
    /// difference, so the whole table costs `O(d n k)`.
    fn neighbor_logits(
        &self,
        x: &TokenSequence,
        condition: &Condition,
        alphabet: &Alphabet,
    ) -> Result<NeighborLogits> {
        let base = self.outputs(x)?;
        let current = self.logit_from_outputs(&base, condition)?;
        let n = alphabet.size();
        let scale = self.pool_scale(x.len());
        let mut values = vec![current; x.len() * n];
        let mut evaluations = 1;
        let mut shifted = base.clone();
        for (i, &orig) in x.ids().iter().enumerate() {
            for y in alphabet.residues() {
                if y == orig {
                    continue;
                }
                if y >= self.vocab {
                    return Err(Error::InvalidArgument(format!("token {y} out of probe vocabulary")));
                }
                for (o, s) in shifted.iter_mut().enumerate() {
                    *s = base[o] + scale * (self.weight(o, i, y) - self.weight(o, i, orig));
                }
                values[i * n + y] = self.logit_from_outputs(&shifted, condition)?;
                evaluations += 1;
            }
        }
        Ok(NeighborLogits {
            len: x.len(),
            vocab: n,
            values,
            current,
            evaluations,
        })
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub id: String,
    pub sequence: TokenSequence,
    pub label: f64,
}

/// Read a TSV with header `id<TAB>sequence<TAB>label`.
pub fn read_labeled_tsv(path: &Path, alphabet: &Alphabet) -> Result<Vec<LabeledSequence>> {
    let bad = |message: String| Error::DataFormat {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "sequence", "label"] {
        return Err(bad(format!("expected header id, sequence, label; got {headers:?}")));
    }
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let sequence = encode(&record[1], alphabet).map_err(|e| bad(format!("row {}: {e}", row + 1)))?;
        let label = record[2]
            .parse()
            .map_err(|_| bad(format!("row {}: bad label {:?}", row + 1, &record[2])))?;
        out.push(LabeledSequence {
            id: record[0].to_string(),
            sequence,
            label,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Iterations between validation evaluations.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub l2: f64,
    pub pooling: Pooling,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_iterations: 2000,
            eval_every: 50,
            patience: 3,
            l2: 1e-7,
            pooling: Pooling::Mean,
            max_len: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeLogRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedProbe {
    pub probe: LinearProbe,
    pub log: Vec<ProbeLogRecord>,
    pub best_iteration: usize,
}

fn class_index(label: f64, k: usize) -> Result<usize> {
    if label >= 0.0 && label.fract() == 0.0 && (label as usize) < k {
        Ok(label as usize)
    } else {
        Err(Error::InvalidArgument(format!("label {label} is not a class in 0..{k}")))
    }
}

/// Mean loss and, when `grad` is given, its gradient accumulated into
/// `grad = [weights..., bias...]`.
fn probe_loss(probe: &LinearProbe, data: &[LabeledSequence], mut grad: Option<&mut [f64]>) -> Result<f64> {
    let k = probe.task.outputs();
    let nw = probe.weights.len();
    let mut total = 0.0;
    let inv = 1.0 / data.len() as f64;
    for ex in data {
        let out = probe.outputs(&ex.sequence)?;
        let mut d_out = vec![0.0; k];
        match probe.task {
            ProbeTask::Binary => {
                let y = class_index(ex.label, 2)? as f64;
                let z = out[0];
                total += softplus(z) - y * z;
                d_out[0] = 1.0 / (1.0 + (-z).exp()) - y;
            }
            ProbeTask::MultiClass(kc) => {
                let c = class_index(ex.label, kc)?;
                let lse = log_sum_exp(&out);
                total += lse - out[c];
                for o in 0..kc {
                    d_out[o] = (out[o] - lse).exp() - f64::from(u8::from(o == c));
                }
            }
            ProbeTask::Regression => {
                let r = out[0] - ex.label;
                total += 0.5 * r * r;
                d_out[0] = r;
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            let scale = probe.pool_scale(ex.sequence.len());
            for o in 0..k {
                let go = d_out[o] * inv;
                g[nw + o] += go;
                for (i, &t) in ex.sequence.ids().iter().enumerate() {
                    g[(o * probe.max_len + i) * probe.vocab + t] += go * scale;
                }
            }
        }
    }
    Ok(total * inv)
}

/// Full-batch Adam on cross-entropy (classification) or squared error
/// (regression), keeping the probe with the best validation loss and
/// stopping after `patience` evaluations without improvement.
pub fn fit_linear_probe(
    train: &[LabeledSequence],
    validation: &[LabeledSequence],
    task: ProbeTask,
    vocab: usize,
    config: &ProbeConfig,
) -> Result<FittedProbe> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InvalidArgument("probe fitting needs non-empty train and validation sets".into()));
    }
    if let ProbeTask::Binary | ProbeTask::MultiClass(_) = task {
        let k = task.outputs().max(2);
        let mut seen = vec![false; k];
        for ex in train {
            seen[class_index(ex.label, k)?] = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::InvalidArgument(
                "degenerate labels: at least two classes must be represented".into(),
            ));
        }
    }
    let mut probe = LinearProbe::zeros(task, config.pooling, config.max_len, vocab);
    if task == ProbeTask::Regression {
        probe.bias[0] = train.iter().map(|e| e.label).sum::<f64>() / train.len() as f64;
    } else {
        // small deterministic jitter breaks class symmetry
        use rand::Rng;
        let mut r = rng::stream(config.seed, "probe/init");
        probe.weights.iter_mut().for_each(|w| *w = 1e-3 * (r.gen::<f64>() - 0.5));
    }
    let np = probe.weights.len() + probe.bias.len();
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut best = (probe.clone(), probe_loss(&probe, validation, None)?, 0usize);
    let mut log = Vec::new();
    let mut stale = 0;
    for it in 1..=config.max_iterations {
        let mut grad = vec![0.0; np];
        let train_loss = probe_loss(&probe, train, Some(&mut grad))?;
        let nw = probe.weights.len();
        for j in 0..np {
            let p = if j < nw { probe.weights[j] } else { probe.bias[j - nw] };
            let g = grad[j] + if j < nw { config.l2 * p } else { 0.0 };
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let mh = m[j] / (1.0 - b1.powi(it as i32));
            let vh = v[j] / (1.0 - b2.powi(it as i32));
            let step = config.learning_rate * mh / (vh.sqrt() + eps);
            if j < nw {
                probe.weights[j] -= step;
            } else {
                probe.bias[j - nw] -= step;
            }
        }
        if it % config.eval_every == 0 || it == config.max_iterations {
            let validation_loss = probe_loss(&probe, validation, None)?;
            log.push(ProbeLogRecord {
                iteration: it,
                train_loss,
                validation_loss,
            });
            if validation_loss < best.1 {
                best = (probe.clone(), validation_loss, it);
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }
    Ok(FittedProbe {
        probe: best.0,
        log,
        best_iteration: best.2,
    })
}
