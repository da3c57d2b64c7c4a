//! Train a small germline-variant score network, save it, and reload it.
//!
//! A few hundred steps on a 2k-record repertoire; takes well under a minute
//! in release mode.

use gsedd::model::{load_checkpoint, save_checkpoint, ModelConfig};
use gsedd::noise::{KernelVariant, NoiseSchedule};
use gsedd::seq::{Alphabet, GermlinePair};
use gsedd::sim::{make_dataset, SimConfig};
use gsedd::train::{metrics_csv, train_loop, TrainConfig, Trainer};

fn main() -> gsedd::Result<()> {
    let data = make_dataset(&SimConfig { size: 2000, ..Default::default() })?;
    let train: Vec<GermlinePair> = data.train.iter().map(|r| r.pair.clone()).collect();
    let validation: Vec<GermlinePair> = data.validation.iter().map(|r| r.pair.clone()).collect();
    let model = ModelConfig {
        layers: 2,
        embed_dim: 32,
        heads: 2,
        feedforward_dim: 64,
        max_length: 48,
        ..ModelConfig::for_variant(KernelVariant::Germline)
    };
    let config = TrainConfig {
        batch_size: 32,
        learning_rate: 1e-3,
        warmup_steps: 50,
        max_steps: 400,
        eval_every: 100,
        validation_examples: 128,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, config, NoiseSchedule::default(), Alphabet::protein())?;
    let log = train_loop(&mut trainer, &train, &validation, |r| {
        println!("step {:>4} {:<10} loss {:>10.3}  grad {:.2}", r.step, r.split, r.loss, r.grad_norm)
    })?;
    let path = std::env::temp_dir().join("gsedd-example.ckpt");
    save_checkpoint(&trainer.checkpoint(), &path)?;
    let back = load_checkpoint(&path)?;
    assert_eq!(back.params, trainer.params());
    println!("checkpoint at step {} -> {}", back.step, path.display());
    print!("{}", metrics_csv(&log)?);
    Ok(())
}
