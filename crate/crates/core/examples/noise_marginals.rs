//! Forward marginals of the three noise kernels on a short antibody fragment.
//!
//! Run with `cargo run --example noise_marginals`.

use gsedd::noise::{marginal, forward_sample, NoiseSchedule, TransitionKernel};
use gsedd::seq::{decode, Alphabet, GermlinePair};
use gsedd::rng;

fn main() -> gsedd::Result<()> {
    let alphabet = Alphabet::protein();
    let pair = GermlinePair::from_strings("h1", "QVQLVQSGAE", "QVKLVESGAE", &alphabet)?;
    let schedule = NoiseSchedule::default();
    let kernels = [
        TransitionKernel::uniform(&alphabet),
        TransitionKernel::mask(&alphabet)?,
        TransitionKernel::germline(&alphabet, pair.germline())?,
    ];
    let mut r = rng::stream(7, "example/noise");
    for kernel in &kernels {
        println!("{} kernel", kernel.variant());
        for t in [0.1, 0.5, 0.9] {
            let m = marginal(kernel, pair.observed(), t, &schedule)?;
            // position 2 is K in the observed sequence and Q in the germline
            let row = &m.rows[2];
            let k = alphabet.index_of('K').unwrap();
            let q = alphabet.index_of('Q').unwrap();
            let x_t = forward_sample(kernel, pair.observed(), t, &schedule, &mut r)?;
            println!(
                "  t={t:.1}  P(K)={:.3} P(Q)={:.3}  draw {}",
                row[k],
                row[q],
                decode(&x_t, &alphabet)?
            );
        }
    }
    Ok(())
}
