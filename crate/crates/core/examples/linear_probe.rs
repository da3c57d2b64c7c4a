//! Fit a linear hydropathy probe on simulated sequences and use it as a
//! guidance classifier.

use gsedd::eval::spearman;
use gsedd::guidance::{fit_linear_probe, Classifier, Condition, LabeledSequence, ProbeConfig, ProbeTask};
use gsedd::seq::Alphabet;
use gsedd::sim::{make_dataset, SimConfig};

fn main() -> gsedd::Result<()> {
    let data = make_dataset(&SimConfig { size: 3000, ..Default::default() })?;
    let label = |recs: &[gsedd::sim::SimRecord]| -> Vec<LabeledSequence> {
        recs.iter()
            .map(|r| LabeledSequence { id: r.pair.id.clone(), sequence: r.pair.observed().clone(), label: r.hydropathy })
            .collect()
    };
    let (train, val, test) = (label(&data.train), label(&data.validation), label(&data.test));
    let config = ProbeConfig { max_len: 48, ..Default::default() };
    let fitted = fit_linear_probe(&train, &val, ProbeTask::Regression, Alphabet::protein().size(), &config)?;
    println!("best iteration {}", fitted.best_iteration);
    let predicted: Vec<f64> = test
        .iter()
        .map(|x| fitted.probe.logit(&x.sequence, &Condition::Maximize))
        .collect::<gsedd::Result<_>>()?;
    let truth: Vec<f64> = test.iter().map(|x| x.label).collect();
    println!("test spearman {:.4}", spearman(&predicted, &truth)?);
    Ok(())
}
