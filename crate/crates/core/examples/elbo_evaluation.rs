//! Likelihood bound and sample metrics with exact scores on a toy.

use gsedd::eval::{elbo_perplexity_weighted, nn_identity, pairwise_diversity, ElboConfig};
use gsedd::noise::{KernelVariant, NoiseSchedule};
use gsedd::oracle::{ExactScore, ToyDistribution};
use gsedd::sampler::{sample, NoisedInit, SamplerConfig};
use gsedd::seq::Alphabet;

fn main() -> gsedd::Result<()> {
    let alphabet = Alphabet::new("ABC#", Some(3))?;
    let data = ToyDistribution::from_support(&alphabet, &[("AB", 0.4), ("BA", 0.3), ("CC", 0.2), ("AC", 0.1)])?;
    let kernel = data.kernel(KernelVariant::Mask, &alphabet)?;
    let schedule = NoiseSchedule::default();
    let model = ExactScore::new(data.clone(), kernel.clone(), schedule);
    let support = data.support();
    let items: Vec<_> = support.iter().map(|(x, _)| (kernel.clone(), x.clone())).collect();
    let weights: Vec<f64> = support.iter().map(|(_, p)| *p).collect();
    for steps in [16, 64, 256, 1024] {
        let config = ElboConfig { quadrature_steps: steps, monte_carlo_samples: 8, seed: 0 };
        let report = elbo_perplexity_weighted(&model, &items, &weights, &config, &schedule)?;
        println!("quadrature {steps:>5}: perplexity bound {:.4}", report.aggregate);
    }
    println!("exp(entropy per token)    {:.4}", (data.entropy() / 2.0).exp());
    let jobs = vec![(kernel, NoisedInit::Length(2)); 200];
    let out = sample(&model, &jobs, &SamplerConfig { steps: 64, ..Default::default() }, &schedule, None)?;
    let refs: Vec<_> = support.iter().map(|(x, _)| x.clone()).collect();
    println!("nn identity {:.3}, pairwise diversity {:.3}", nn_identity(&out.sequences, &refs)?, pairwise_diversity(&out.sequences)?);
    Ok(())
}
