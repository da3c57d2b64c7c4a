//! Memorize 100 short simulated sequences with the mask variant, then check
//! how close unconditional samples land to the training set as the number
//! of sampler steps grows.
//!
//! Args: training steps (default 4000). The acceptance run uses far more.

use gsedd::eval::nn_identity;
use gsedd::model::ModelConfig;
use gsedd::noise::{KernelVariant, NoiseSchedule, TransitionKernel};
use gsedd::sampler::{sample, NoisedInit, SamplerConfig};
use gsedd::seq::{Alphabet, GermlinePair, TokenSequence};
use gsedd::sim::{make_dataset, SimConfig};
use gsedd::train::{train_loop, TrainConfig, Trainer};

fn main() -> gsedd::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let sim = SimConfig {
        size: 100,
        segment_lengths: [8, 3, 5],
        hotspots: vec![2, 9, 14],
        identity_threshold: 1.0,
        validation_fraction: 0.0,
        test_fraction: 0.0,
        seed: 6,
        ..Default::default()
    };
    let data = make_dataset(&sim)?;
    let train: Vec<GermlinePair> = data.train.iter().map(|r| r.pair.clone()).collect();
    let references: Vec<TokenSequence> = train.iter().map(|p| p.observed().clone()).collect();
    let alphabet = Alphabet::protein();
    let model = ModelConfig {
        layers: 3,
        embed_dim: 64,
        heads: 4,
        feedforward_dim: 128,
        max_length: sim.sequence_length(),
        ..ModelConfig::for_variant(KernelVariant::Mask)
    };
    let config = TrainConfig {
        batch_size: 32,
        learning_rate: 3e-3,
        warmup_steps: 100,
        max_steps: steps,
        eval_every: steps.div_ceil(4),
        validation_examples: 100,
        ema_decay: 0.99,
        cosine_decay: true,
        seed: 6,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, config, NoiseSchedule::default(), alphabet.clone())?;
    train_loop(&mut trainer, &train, &train, |r| {
        if r.split == "validation" {
            println!("step {:>6} loss {:.3}", r.step, r.loss);
        }
    })?;
    let net = trainer.ema_network()?;
    let kernel = TransitionKernel::mask(&alphabet)?;
    let jobs = vec![(kernel, NoisedInit::Length(sim.sequence_length())); 128];
    for sampler_steps in [8, 16, 32, 64] {
        let cfg = SamplerConfig { steps: sampler_steps, seed: 1, ..Default::default() };
        let out = sample(&net, &jobs, &cfg, net.schedule(), None)?;
        println!("{sampler_steps:>3} steps: nn identity {:.4}", nn_identity(&out.sequences, &references)?);
    }
    Ok(())
}
