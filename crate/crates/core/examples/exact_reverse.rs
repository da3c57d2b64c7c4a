//! Terminal error of Tweedie and Euler decoding driven by exact scores.
//!
//! The oracle enumerates every joint state, so the reported distance is the
//! exact law of the sampler's output, not a Monte Carlo estimate.

use gsedd::noise::NoiseSchedule;
use gsedd::oracle::{exact_reverse_terminal, standard_toys, tv_distance};
use gsedd::sampler::Decoder;

fn main() -> gsedd::Result<()> {
    let schedule = NoiseSchedule::default();
    println!("{:<9} {:>6} {:>10} {:>10}", "toy", "steps", "tweedie", "euler");
    for toy in standard_toys() {
        for steps in [16, 64, 256, 1024] {
            let tv = |d| -> gsedd::Result<f64> {
                let p = exact_reverse_terminal(&toy.data, &toy.kernel, &schedule, steps, d)?;
                tv_distance(&toy.data, &p)
            };
            println!(
                "{:<9} {steps:>6} {:>10.5} {:>10.5}",
                toy.name,
                tv(Decoder::Tweedie)?,
                tv(Decoder::Euler)?
            );
        }
    }
    Ok(())
}
