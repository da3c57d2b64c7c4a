//! Synthetic antibody-like repertoires.
//!
//! Germlines are concatenations of one segment from each of three pools.
//! Observed sequences add independent substitutions, more frequent at
//! hotspot positions, with a preferred target residue per (position,
//! germline residue) so that mutations are partly predictable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::write_atomic;
use crate::guidance::{hydropathy_score, HydropathyScale};
use crate::rng;
use crate::seq::{decode, percent_identity, Alphabet, GermlinePair, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Number of segments in the V-, D- and J-like pools.
    pub segment_counts: [usize; 3],
    /// Segment length for each pool.
    pub segment_lengths: [usize; 3],
    pub hotspots: Vec<usize>,
    /// Fraction of segment positions carrying a second, equally likely
    /// allele. Each such position is resolved independently at
    /// recombination, so the germline cannot be read off its neighbours.
    pub polymorphic_fraction: f64,
    pub hotspot_rate: f64,
    pub background_rate: f64,
    /// Probability that a substitution lands on the preferred target.
    pub target_bias: f64,
    /// Rejection strength against mutations that lower hydropathy; 0
    /// disables selection.
    pub selection_strength: f64,
    pub size: usize,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub identity_threshold: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            segment_counts: [12, 6, 4],
            segment_lengths: [30, 6, 12],
            hotspots: vec![4, 8, 12, 17, 25, 28, 31, 33, 38, 41],
            polymorphic_fraction: 0.2,
            hotspot_rate: 0.3,
            background_rate: 0.02,
            target_bias: 0.6,
            selection_strength: 0.0,
            size: 12_000,
            validation_fraction: 1.0 / 12.0,
            test_fraction: 1.0 / 12.0,
            identity_threshold: 0.8,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn sequence_length(&self) -> usize {
        self.segment_lengths.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.segment_counts.contains(&0) || self.segment_lengths.contains(&0) {
            return bad("segment counts and lengths must be positive".into());
        }
        for (name, r) in [
            ("hotspot_rate", self.hotspot_rate),
            ("background_rate", self.background_rate),
            ("target_bias", self.target_bias),
            ("polymorphic_fraction", self.polymorphic_fraction),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} {r} is outside [0, 1]"));
            }
        }
        if self.hotspot_rate < self.background_rate {
            return bad("hotspot_rate must be >= background_rate".into());
        }
        if let Some(&h) = self.hotspots.iter().find(|&&h| h >= self.sequence_length()) {
            return bad(format!("hotspot {h} is beyond sequence length {}", self.sequence_length()));
        }
        if !(self.selection_strength >= 0.0) {
            return bad("selection_strength must be >= 0".into());
        }
        if !(self.identity_threshold > 0.0 && self.identity_threshold <= 1.0) {
            return bad(format!("identity_threshold {} is outside (0, 1]", self.identity_threshold));
        }
        let (v, t) = (self.validation_fraction, self.test_fraction);
        if !(v >= 0.0 && t >= 0.0 && v + t < 1.0) {
            return bad("split fractions must be >= 0 and leave room for training data".into());
        }
        if self.size == 0 {
            return bad("size must be positive".into());
        }
        Ok(())
    }

    pub fn mutation_rate(&self, position: usize) -> f64 {
        if self.hotspots.contains(&position) {
            self.hotspot_rate
        } else {
            self.background_rate
        }
    }

    /// Best achievable accuracy when guessing a substituted residue from the
    /// germline and position alone.
    pub fn bayes_ceiling(&self) -> f64 {
        self.target_bias + (1.0 - self.target_bias) / 19.0
    }
}

/// Segment pools, each a list of residue-only sequences, with a second
/// allele per segment that differs at the polymorphic positions only.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPools {
    pub segments: [Vec<TokenSequence>; 3],
    pub alternates: [Vec<TokenSequence>; 3],
}

impl SegmentPools {
    /// Pools without polymorphic positions.
    pub fn monomorphic(segments: [Vec<TokenSequence>; 3]) -> Self {
        Self {
            alternates: segments.clone(),
            segments,
        }
    }
}

pub fn gen_germline_library<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> SegmentPools {
    let pool = |count: usize, len: usize, rng: &mut R| -> Vec<TokenSequence> {
        (0..count)
            .map(|_| TokenSequence::from_ids_unchecked((0..len).map(|_| rng.gen_range(0..20)).collect()))
            .collect()
    };
    let [cv, cd, cj] = config.segment_counts;
    let [lv, ld, lj] = config.segment_lengths;
    let v = pool(cv, lv, rng);
    let d = pool(cd, ld, rng);
    let j = pool(cj, lj, rng);
    let segments = [v, d, j];
    let alternates = segments.clone().map(|pool| {
        pool.into_iter()
            .map(|seg| {
                let ids = seg
                    .ids()
                    .iter()
                    .map(|&t| {
                        if rng.gen_bool(config.polymorphic_fraction) {
                            (t + rng.gen_range(1..20)) % 20
                        } else {
                            t
                        }
                    })
                    .collect();
                TokenSequence::from_ids_unchecked(ids)
            })
            .collect()
    });
    SegmentPools { segments, alternates }
}

/// One segment index per pool and the concatenated germline.
pub fn recombine<R: Rng + ?Sized>(pools: &SegmentPools, rng: &mut R) -> Result<([usize; 3], TokenSequence)> {
    if pools.segments.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidArgument("every segment pool needs at least one segment".into()));
    }
    let mut picks = [0; 3];
    let mut ids = Vec::new();
    for (k, pool) in pools.segments.iter().enumerate() {
        picks[k] = rng.gen_range(0..pool.len());
        let alternate = pools.alternates[k][picks[k]].ids();
        for (&a, &b) in pool[picks[k]].ids().iter().zip(alternate) {
            ids.push(if a != b && rng.gen_bool(0.5) { b } else { a });
        }
    }
    Ok((picks, TokenSequence::from_ids_unchecked(ids)))
}

/// Preferred substitution target for each position and germline residue,
/// never equal to the germline residue.
pub fn substitution_targets(config: &SimConfig) -> Vec<[usize; 20]> {
    let mut r = rng::stream(config.seed, "sim/targets");
    (0..config.sequence_length())
        .map(|_| {
            let mut row = [0; 20];
            for (g, slot) in row.iter_mut().enumerate() {
                *slot = (g + r.gen_range(1..20)) % 20;
            }
            row
        })
        .collect()
}

pub fn hypermutate<R: Rng + ?Sized>(germline: &TokenSequence, config: &SimConfig, rng: &mut R) -> TokenSequence {
    hypermutate_with(germline, config, &substitution_targets(config), rng)
}

fn hypermutate_with<R: Rng + ?Sized>(
    germline: &TokenSequence,
    config: &SimConfig,
    targets: &[[usize; 20]],
    rng: &mut R,
) -> TokenSequence {
    let ids = germline
        .ids()
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let rate = config.mutation_rate(i);
            if rate == 0.0 || !rng.gen_bool(rate) {
                return g;
            }
            if rng.gen_bool(config.target_bias) {
                targets[i % targets.len()][g]
            } else {
                (g + rng.gen_range(1..20)) % 20
            }
        })
        .collect();
    TokenSequence::from_ids_unchecked(ids)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub pair: GermlinePair,
    pub v_class: usize,
    pub hydropathy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SimRecord>,
    pub validation: Vec<SimRecord>,
    pub test: Vec<SimRecord>,
    pub bayes_ceiling: f64,
}

impl Dataset {
    pub fn splits(&self) -> [(&'static str, &[SimRecord]); 3] {
        [("train", &self.train), ("validation", &self.validation), ("test", &self.test)]
    }
}

fn generate_record(
    k: usize,
    config: &SimConfig,
    pools: &SegmentPools,
    targets: &[[usize; 20]],
    alphabet: &Alphabet,
    scale: &HydropathyScale,
) -> Result<SimRecord> {
    let mut r = rng::stream(config.seed, &format!("sim/record/{k}"));
    for _ in 0..10_000 {
        let ([v, _, _], germline) = recombine(pools, &mut r)?;
        let observed = hypermutate_with(&germline, config, targets, &mut r);
        let hydropathy = hydropathy_score(&observed, scale)?;
        if config.selection_strength > 0.0 {
            // mutations that lower hydropathy relative to the germline are selected against
            let shift = hydropathy - hydropathy_score(&germline, scale)?;
            let accept = (config.selection_strength * shift.min(0.0)).exp();
            if !r.gen_bool(accept) {
                continue;
            }
        }
        let pair = GermlinePair::new(format!("seq{k:06}"), germline, observed, alphabet)?;
        return Ok(SimRecord { pair, v_class: v, hydropathy });
    }
    Err(Error::InvalidArgument(format!(
        "selection_strength {} rejected 10000 proposals in a row",
        config.selection_strength
    )))
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Group record indices so that any two germlines with identity above
/// `threshold` share a group. At threshold 1 every record is its own group.
fn identity_clusters(records: &[SimRecord], threshold: f64) -> Vec<Vec<usize>> {
    if threshold >= 1.0 {
        return (0..records.len()).map(|k| vec![k]).collect();
    }
    let mut distinct: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
    for (k, rec) in records.iter().enumerate() {
        distinct.entry(rec.pair.germline().ids()).or_default().push(k);
    }
    let keys: Vec<&[usize]> = distinct.keys().copied().collect();
    let mut parent: Vec<usize> = (0..keys.len()).collect();
    for a in 0..keys.len() {
        for b in a + 1..keys.len() {
            let same = keys[a].iter().zip(keys[b]).filter(|(x, y)| x == y).count();
            let identity = same as f64 / keys[a].len().max(keys[b].len()) as f64;
            if identity > threshold {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (a, key) in keys.iter().enumerate() {
        let root = find(&mut parent, a);
        groups.entry(root).or_default().extend(&distinct[key]);
    }
    groups.into_values().collect()
}

/// Generate records and split whole identity clusters into test,
/// validation and train, in that order.
pub fn make_dataset(config: &SimConfig) -> Result<Dataset> {
    config.validate()?;
    let alphabet = Alphabet::protein();
    let scale = HydropathyScale::kyte_doolittle(&alphabet)?;
    let pools = gen_germline_library(config, &mut rng::stream(config.seed, "sim/library"));
    let targets = substitution_targets(config);
    let records = (0..config.size)
        .map(|k| generate_record(k, config, &pools, &targets, &alphabet, &scale))
        .collect::<Result<Vec<_>>>()?;
    let mut clusters = identity_clusters(&records, config.identity_threshold);
    clusters.shuffle(&mut rng::stream(config.seed, "sim/split"));
    let want_test = (config.test_fraction * config.size as f64).round() as usize;
    let want_val = (config.validation_fraction * config.size as f64).round() as usize;
    let mut assigned: [Vec<usize>; 3] = Default::default();
    for cluster in clusters {
        let slot = if assigned[2].len() < want_test {
            2
        } else if assigned[1].len() < want_val {
            1
        } else {
            0
        };
        assigned[slot].extend(cluster);
    }
    let short = [(0, 1usize), (1, want_val), (2, want_test)]
        .into_iter()
        .find(|&(slot, want)| want > 0 && assigned[slot].is_empty());
    if let Some((slot, _)) = short {
        let name = ["train", "validation", "test"][slot];
        return Err(Error::UnsatisfiableSplit(format!(
            "identity clusters leave the {name} split empty; try a smaller test_fraction or a lower identity_threshold"
        )));
    }
    let take = |idx: &mut Vec<usize>| {
        idx.sort_unstable();
        idx.iter().map(|&k| records[k].clone()).collect::<Vec<_>>()
    };
    let [mut tr, mut va, mut te] = assigned;
    Ok(Dataset {
        train: take(&mut tr),
        validation: take(&mut va),
        test: take(&mut te),
        bayes_ceiling: config.bayes_ceiling(),
    })
}

/// Highest germline identity between records of different splits.
pub fn max_cross_split_identity(dataset: &Dataset) -> f64 {
    let splits = dataset.splits();
    let mut best: f64 = 0.0;
    for a in 0..3 {
        for b in a + 1..3 {
            for x in splits[a].1 {
                for y in splits[b].1 {
                    if let Ok(id) = percent_identity(x.pair.germline(), y.pair.germline()) {
                        best = best.max(id);
                    }
                }
            }
        }
    }
    best
}

pub const TSV_HEADER: &str = "id\tgermline\tobserved\tv_class\thydropathy";

pub fn records_tsv(records: &[SimRecord], alphabet: &Alphabet) -> Result<String> {
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\n",
            r.pair.id,
            decode(r.pair.germline(), alphabet)?,
            decode(r.pair.observed(), alphabet)?,
            r.v_class,
            r.hydropathy
        ));
    }
    Ok(out)
}

pub fn read_records_tsv(path: &Path, alphabet: &Alphabet) -> Result<Vec<SimRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records_tsv(&text, alphabet).map_err(|message| Error::DataFormat {
        path: path.to_path_buf(),
        message,
    })
}

fn parse_records_tsv(text: &str, alphabet: &Alphabet) -> std::result::Result<Vec<SimRecord>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(TSV_HEADER) {
        return Err(format!("first line must be the header {TSV_HEADER:?}"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(k, line)| {
            let at = |m: String| format!("line {}: {m}", k + 2);
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(at(format!("expected 5 columns, found {}", cols.len())));
            }
            let pair = GermlinePair::from_strings(cols[0], cols[1], cols[2], alphabet).map_err(|e| at(e.to_string()))?;
            let v_class = cols[3].parse().map_err(|e| at(format!("v_class: {e}")))?;
            let hydropathy = cols[4].parse().map_err(|e| at(format!("hydropathy: {e}")))?;
            Ok(SimRecord { pair, v_class, hydropathy })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub config: SimConfig,
    pub seed: u64,
    pub bayes_ceiling: f64,
    pub counts: BTreeMap<String, usize>,
}

pub fn metadata_path(dir: &Path) -> PathBuf {
    dir.join("metadata.json")
}

pub fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.tsv"))
}

/// Write `train.tsv`, `validation.tsv`, `test.tsv` and `metadata.json`.
pub fn write_dataset(dataset: &Dataset, config: &SimConfig, dir: &Path) -> Result<()> {
    let alphabet = Alphabet::protein();
    let mut counts = BTreeMap::new();
    for (name, records) in dataset.splits() {
        write_atomic(&split_path(dir, name), records_tsv(records, &alphabet)?.as_bytes())?;
        counts.insert(name.to_string(), records.len());
    }
    let meta = DatasetMetadata {
        config: config.clone(),
        seed: config.seed,
        bayes_ceiling: dataset.bayes_ceiling,
        counts,
    };
    let mut json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    json.push('\n');
    write_atomic(&metadata_path(dir), json.as_bytes())
}

pub fn read_metadata(dir: &Path) -> Result<DatasetMetadata> {
    let path = metadata_path(dir);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::DataFormat {
        path,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small() -> SimConfig {
        SimConfig {
            size: 600,
            ..Default::default()
        }
    }

    #[test]
    fn library_is_deterministic_and_sized() {
        let c = SimConfig::default();
        let a = gen_germline_library(&c, &mut rng::from_seed(3));
        let b = gen_germline_library(&c, &mut rng::from_seed(3));
        assert_eq!(a, b);
        for k in 0..3 {
            assert_eq!(a.segments[k].len(), c.segment_counts[k]);
            assert!(a.segments[k].iter().all(|s| s.len() == c.segment_lengths[k]));
            assert_eq!(a.alternates[k].len(), c.segment_counts[k]);
        }
    }

    #[test]
    fn library_symbols_are_uniform() {
        let c = SimConfig {
            segment_counts: [1000, 1, 1],
            segment_lengths: [100, 1, 1],
            hotspots: vec![],
            ..Default::default()
        };
        let pools = gen_germline_library(&c, &mut rng::from_seed(4));
        let mut counts = [0f64; 20];
        for s in &pools.segments[0] {
            for &t in s.ids() {
                counts[t] += 1.0;
            }
        }
        let n: f64 = counts.iter().sum();
        assert_eq!(n, 1e5);
        let e = n / 20.0;
        let chi2: f64 = counts.iter().map(|o| (o - e).powi(2) / e).sum();
        // upper 0.001 quantile of chi-square with 19 degrees of freedom
        assert!(chi2 < 43.82, "chi2 = {chi2}");
    }

    #[test]
    fn alternates_differ_at_the_polymorphic_fraction() {
        let c = SimConfig {
            segment_counts: [500, 1, 1],
            segment_lengths: [100, 1, 1],
            hotspots: vec![],
            ..Default::default()
        };
        let pools = gen_germline_library(&c, &mut rng::from_seed(8));
        let (mut differ, mut total) = (0, 0);
        for (a, b) in pools.segments[0].iter().zip(&pools.alternates[0]) {
            differ += a.ids().iter().zip(b.ids()).filter(|(x, y)| x != y).count();
            total += a.len();
        }
        let frac = differ as f64 / total as f64;
        // binomial standard error is about 0.0018
        assert!((frac - c.polymorphic_fraction).abs() < 0.01, "{frac}");
    }

    #[test]
    fn polymorphic_positions_take_both_alleles() {
        let s = |ids: Vec<usize>| vec![TokenSequence::from_ids_unchecked(ids)];
        let pools = SegmentPools {
            segments: [s(vec![1, 2]), s(vec![3]), s(vec![4])],
            alternates: [s(vec![1, 7]), s(vec![3]), s(vec![4])],
        };
        let mut r = rng::from_seed(2);
        let n = 4000;
        let sevens = (0..n).filter(|_| recombine(&pools, &mut r).unwrap().1.get(1) == 7).count();
        assert!((sevens as f64 / n as f64 - 0.5).abs() < 0.03, "{sevens}");
    }

    #[test]
    fn single_segment_pools_give_the_concatenation() {
        let s = |ids: Vec<usize>| TokenSequence::from_ids_unchecked(ids);
        let pools = SegmentPools::monomorphic([vec![s(vec![1, 2])], vec![s(vec![3])], vec![s(vec![4, 5])]]);
        let (picks, g) = recombine(&pools, &mut rng::from_seed(1)).unwrap();
        assert_eq!(picks, [0, 0, 0]);
        assert_eq!(g.ids(), &[1, 2, 3, 4, 5]);
    }

    #[test]
    fn all_recombinations_are_reached() {
        let c = SimConfig {
            segment_counts: [4, 3, 2],
            polymorphic_fraction: 0.0,
            ..Default::default()
        };
        let pools = gen_germline_library(&c, &mut rng::from_seed(5));
        let mut r = rng::from_seed(6);
        let mut seen = BTreeSet::new();
        for _ in 0..10_000 {
            let (picks, g) = recombine(&pools, &mut r).unwrap();
            assert_eq!(g.len(), c.sequence_length());
            assert!(g.ids().iter().all(|&t| t < 20));
            seen.insert(picks);
        }
        assert_eq!(seen.len(), 4 * 3 * 2);
    }

    #[test]
    fn zero_rates_keep_the_germline() {
        let c = SimConfig {
            hotspot_rate: 0.0,
            background_rate: 0.0,
            ..Default::default()
        };
        let g = TokenSequence::from_ids_unchecked(vec![3; c.sequence_length()]);
        assert_eq!(hypermutate(&g, &c, &mut rng::from_seed(1)), g);
    }

    #[test]
    fn forced_hotspot_gives_the_known_substitution() {
        let c = SimConfig {
            hotspots: vec![7],
            hotspot_rate: 1.0,
            background_rate: 0.0,
            target_bias: 1.0,
            ..Default::default()
        };
        let g = TokenSequence::from_ids_unchecked(vec![5; c.sequence_length()]);
        let want = substitution_targets(&c)[7][5];
        for seed in 0..20 {
            let o = hypermutate(&g, &c, &mut rng::from_seed(seed));
            let diff: Vec<usize> = (0..g.len()).filter(|&i| o.get(i) != g.get(i)).collect();
            assert_eq!(diff, vec![7]);
            assert_eq!(o.get(7), want);
        }
    }

    #[test]
    fn per_position_mutation_frequencies_match_rates() {
        let c = SimConfig::default();
        let targets = substitution_targets(&c);
        let g = TokenSequence::from_ids_unchecked((0..c.sequence_length()).map(|i| i % 20).collect());
        let mut r = rng::from_seed(9);
        let mut hits = vec![0usize; g.len()];
        let draws = 100_000;
        let mut total = 0usize;
        for _ in 0..draws {
            let o = hypermutate_with(&g, &c, &targets, &mut r);
            for i in 0..g.len() {
                if o.get(i) != g.get(i) {
                    hits[i] += 1;
                    total += 1;
                }
            }
        }
        for (i, &h) in hits.iter().enumerate() {
            let f = h as f64 / draws as f64;
            assert!((f - c.mutation_rate(i)).abs() < 0.005, "position {i}: {f}");
        }
        let expected: f64 = (0..g.len()).map(|i| c.mutation_rate(i)).sum();
        assert!((total as f64 / draws as f64 - expected).abs() < 0.02);
    }

    #[test]
    fn target_distribution_has_the_stated_ceiling() {
        // empirical best-guess accuracy among substitutions at one hotspot
        let c = SimConfig::default();
        let targets = substitution_targets(&c);
        let g = TokenSequence::from_ids_unchecked(vec![2; c.sequence_length()]);
        let mut r = rng::from_seed(10);
        let mut counts = [0usize; 20];
        for _ in 0..50_000 {
            let o = hypermutate_with(&g, &c, &targets, &mut r);
            if o.get(4) != 2 {
                counts[o.get(4)] += 1;
            }
        }
        let n: usize = counts.iter().sum();
        let best = *counts.iter().max().unwrap() as f64 / n as f64;
        assert!((best - c.bayes_ceiling()).abs() < 0.015, "{best} vs {}", c.bayes_ceiling());
        assert_eq!(counts[2], 0);
    }

    #[test]
    fn splits_respect_the_identity_threshold() {
        let c = small();
        let d = make_dataset(&c).unwrap();
        assert_eq!(d.train.len() + d.validation.len() + d.test.len(), c.size);
        assert!(!d.test.is_empty() && !d.validation.is_empty());
        assert!(max_cross_split_identity(&d) <= 0.8);
        let ids: BTreeSet<&str> = d.splits().iter().flat_map(|(_, r)| r.iter().map(|x| x.pair.id.as_str())).collect();
        assert_eq!(ids.len(), c.size);
        for rec in d.train.iter().take(50) {
            assert_eq!(rec.pair.len(), c.sequence_length());
            assert!(rec.v_class < c.segment_counts[0]);
        }
    }

    #[test]
    fn threshold_one_is_a_plain_partition() {
        let c = SimConfig {
            identity_threshold: 1.0,
            ..small()
        };
        let d = make_dataset(&c).unwrap();
        assert_eq!(d.test.len(), 50);
        assert_eq!(d.validation.len(), 50);
        assert_eq!(d.train.len(), 500);
    }

    #[test]
    fn one_giant_cluster_is_unsatisfiable() {
        let c = SimConfig {
            segment_counts: [1, 1, 1],
            ..small()
        };
        assert!(matches!(make_dataset(&c), Err(Error::UnsatisfiableSplit(_))));
    }

    #[test]
    fn selection_shifts_hydropathy_up() {
        let base = make_dataset(&SimConfig { size: 300, identity_threshold: 1.0, ..Default::default() }).unwrap();
        let sel = make_dataset(&SimConfig {
            size: 300,
            identity_threshold: 1.0,
            selection_strength: 20.0,
            ..Default::default()
        })
        .unwrap();
        let scale = HydropathyScale::kyte_doolittle(&Alphabet::protein()).unwrap();
        // mean hydropathy gained through mutation
        let mean_shift = |d: &Dataset| {
            let all: Vec<f64> = d
                .splits()
                .iter()
                .flat_map(|(_, r)| r.iter().map(|x| x.hydropathy - hydropathy_score(x.pair.germline(), &scale).unwrap()))
                .collect();
            all.iter().sum::<f64>() / all.len() as f64
        };
        let (b, s) = (mean_shift(&base), mean_shift(&sel));
        assert!(s > 0.0 && s > b + 0.05, "{b} vs {s}");
    }

    #[test]
    fn files_round_trip_and_are_reproducible() {
        let c = small();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_dataset(&make_dataset(&c).unwrap(), &c, a.path()).unwrap();
        write_dataset(&make_dataset(&c).unwrap(), &c, b.path()).unwrap();
        for name in ["train.tsv", "validation.tsv", "test.tsv", "metadata.json"] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap()
            );
        }
        let back = read_records_tsv(&split_path(a.path(), "test"), &Alphabet::protein()).unwrap();
        let d = make_dataset(&c).unwrap();
        assert_eq!(back.len(), d.test.len());
        assert_eq!(back[0].pair, d.test[0].pair);
        let meta = read_metadata(a.path()).unwrap();
        assert_eq!(meta.config, c);
        assert_eq!(meta.counts["test"], d.test.len());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for c in [
            SimConfig { hotspot_rate: 0.01, background_rate: 0.02, ..Default::default() },
            SimConfig { identity_threshold: 0.0, ..Default::default() },
            SimConfig { background_rate: 1.5, ..Default::default() },
            SimConfig { hotspots: vec![48], ..Default::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
