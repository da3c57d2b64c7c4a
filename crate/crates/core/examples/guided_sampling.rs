//! Hydropathy-guided sampling from exact scores on a toy, plus the
//! classifier-evaluation count of one guided run.

use gsedd::guidance::{Condition, HydropathyProperty, HydropathyScale, hydropathy_score};
use gsedd::noise::{KernelVariant, NoiseSchedule};
use gsedd::oracle::{ExactScore, ToyDistribution};
use gsedd::sampler::{sample, Guidance, NoisedInit, SamplerConfig};
use gsedd::seq::{encode, Alphabet};

fn main() -> gsedd::Result<()> {
    // residues spanning the hydropathy range: I (4.5), A (1.8), D (-3.5), R (-4.5)
    let alphabet = Alphabet::new("IADR#", Some(4))?;
    // full support, so guided trajectories never leave the data's states
    let weights = [("AD", 30.0), ("DA", 30.0), ("RD", 20.0), ("II", 2.0), ("AI", 6.0)];
    let mut support = Vec::new();
    for a in "IADR".chars() {
        for b in "IADR".chars() {
            let pair = format!("{a}{b}");
            let w = weights.iter().find(|(s, _)| *s == pair).map_or(1.0, |(_, w)| *w);
            support.push((pair, w / 100.0));
        }
    }
    let total: f64 = support.iter().map(|(_, w)| w).sum();
    let support: Vec<(&str, f64)> = support.iter().map(|(s, w)| (s.as_str(), w / total)).collect();
    let data = ToyDistribution::from_support(&alphabet, &support)?;
    let kernel = data.kernel(KernelVariant::Mask, &alphabet)?;
    let schedule = NoiseSchedule::default();
    let model = ExactScore::new(data, kernel.clone(), schedule);
    let mut kd = Vec::new();
    for c in alphabet.symbols() {
        let value = match c {
            'I' => Some(4.5),
            'A' => Some(1.8),
            'D' => Some(-3.5),
            'R' => Some(-4.5),
            _ => None,
        };
        kd.push(value);
    }
    let scale = HydropathyScale::new(kd);
    let property = HydropathyProperty { scale: scale.clone() };
    let jobs = vec![(kernel, NoisedInit::Length(2)); 400];
    for gamma in [0.0, 0.5, 2.0] {
        let guidance = Guidance { classifier: &property, condition: Condition::Maximize };
        let config = SamplerConfig { steps: 32, guidance_strength: gamma, seed: 1, ..Default::default() };
        let out = sample(&model, &jobs, &config, &schedule, Some(&guidance))?;
        let mean: f64 = out.sequences.iter().map(|x| hydropathy_score(x, &scale).unwrap()).sum::<f64>() / 400.0;
        let ii = out.sequences.iter().filter(|x| **x == encode("II", &alphabet).unwrap()).count();
        println!(
            "gamma {gamma:<4} mean hydropathy {mean:>6.3}  share of II {:.3}  classifier calls {}",
            ii as f64 / 400.0,
            out.stats.classifier_evaluations
        );
    }
    Ok(())
}
