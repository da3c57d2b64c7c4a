//! Generate a small synthetic repertoire and write it as TSV plus metadata.
//!
//! Usage: `cargo run --example simulate_repertoire -- [OUT_DIR]`

use std::path::PathBuf;

use gsedd::seq::{decode, non_germline_positions, Alphabet};
use gsedd::sim::{make_dataset, max_cross_split_identity, write_dataset, SimConfig};

fn main() -> gsedd::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("gsedd-repertoire"));
    let config = SimConfig { size: 2000, ..Default::default() };
    let data = make_dataset(&config)?;
    let alphabet = Alphabet::protein();
    for (name, records) in data.splits() {
        let muts: usize = records.iter().map(|r| non_germline_positions(&r.pair).len()).sum();
        println!("{name:<10} {:>5} records, {:.2} mutations per sequence", records.len(), muts as f64 / records.len() as f64);
    }
    println!("max cross-split germline identity {:.3}", max_cross_split_identity(&data));
    println!("bayes ceiling {:.4}", data.bayes_ceiling);
    let r = &data.train[0];
    println!("{}\n{}", decode(r.pair.germline(), &alphabet)?, decode(r.pair.observed(), &alphabet)?);
    write_dataset(&data, &config, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
