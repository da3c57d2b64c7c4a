//! Train germline- and mask-variant networks on the default repertoire and
//! compare how often each recovers mutated (non-germline) residues.
//!
//! About four minutes in release mode. Pass a step count to shorten it.

use gsedd::eval::non_germline_accuracy;
use gsedd::model::ModelConfig;
use gsedd::noise::{KernelVariant, NoiseSchedule};
use gsedd::seq::{Alphabet, GermlinePair};
use gsedd::sim::{make_dataset, SimConfig};
use gsedd::train::{train_loop, TrainConfig, Trainer};

fn main() -> gsedd::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let data = make_dataset(&SimConfig::default())?;
    let pairs = |records: &[gsedd::sim::SimRecord]| -> Vec<GermlinePair> {
        records.iter().map(|r| r.pair.clone()).collect()
    };
    let (train, validation, test) = (pairs(&data.train), pairs(&data.validation), pairs(&data.test));
    let alphabet = Alphabet::protein();
    println!("bayes ceiling {:.3}, uniform floor {:.3}", data.bayes_ceiling, 1.0 / 19.0);
    for variant in [KernelVariant::Germline, KernelVariant::Mask] {
        let model = ModelConfig {
            layers: 2,
            embed_dim: 32,
            heads: 2,
            feedforward_dim: 64,
            max_length: 48,
            ..ModelConfig::for_variant(variant)
        };
        let config = TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            warmup_steps: 200,
            max_steps: steps,
            eval_every: steps.div_ceil(3),
            validation_examples: 256,
            ema_decay: 0.995,
            ..Default::default()
        };
        let mut trainer = Trainer::new(model, config, NoiseSchedule::default(), alphabet.clone())?;
        train_loop(&mut trainer, &train, &validation, |r| {
            if r.split == "validation" {
                println!("  {variant} step {:>5} validation loss {:.3}", r.step, r.loss)
            }
        })?;
        let acc = non_germline_accuracy(&trainer.ema_network()?, &test, variant, &alphabet, 0)?;
        println!("{variant}: non-germline accuracy {:.3} over {} mutated positions", acc.accuracy, acc.total);
    }
    Ok(())
}
