//! The `gsedd` command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{elbo_perplexity, nn_identity, non_germline_accuracy, pairwise_diversity};
use crate::files::write_atomic;
use crate::guidance::{hydropathy_score, Condition, HydropathyProperty, HydropathyScale};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, ScoreNetwork};
use crate::noise::{KernelVariant, TransitionKernel};
use crate::oracle::run_suite;
use crate::sampler::{sample, Decoder, Guidance, NoisedInit};
use crate::seq::{decode, encode, Alphabet, GermlinePair, TokenSequence};
use crate::sim::{self, make_dataset, read_records_tsv, split_path, write_dataset, SimRecord};
use crate::train::{train_loop, write_metrics, Trainer};

#[derive(Debug, Parser)]
#[command(name = "gsedd", version, about = "Germline-absorbing discrete diffusion for antibody-like sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration (defaults apply when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic repertoire.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a score network on a generated repertoire.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Draw sequences from a trained model.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        decoder: Option<Decoder>,
        /// Comma-separated guidance strengths.
        #[arg(long, value_delimiter = ',')]
        gamma: Option<Vec<f64>>,
        /// `hydropathy` or a token/value scale file.
        #[arg(long)]
        classifier: Option<String>,
        /// Germline sequences (dataset TSV, FASTA or one per line).
        #[arg(long)]
        germlines: Option<PathBuf>,
        #[arg(long)]
        num: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated metric names.
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
    },
    /// Check closed forms, scores and samplers against brute force.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
}

/// What a command printed and whether it succeeded.
#[derive(Debug, Default)]
pub struct Outcome {
    pub text: String,
    pub failed: bool,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.normalize();
    Ok(config)
}

fn echo_config(config: &RunConfig, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("config.toml"), config.to_toml().as_bytes())
}

fn read_split(dir: &Path, split: &str) -> Result<Vec<SimRecord>> {
    read_records_tsv(&split_path(dir, split), &Alphabet::protein())
}

fn pairs(records: Vec<SimRecord>) -> Vec<GermlinePair> {
    records.into_iter().map(|r| r.pair).collect()
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::GenData { common } => gen_data(&common),
        Command::Train {
            common,
            resume,
            max_steps,
        } => train(&common, resume, max_steps),
        Command::Sample {
            common,
            checkpoint,
            steps,
            decoder,
            gamma,
            classifier,
            germlines,
            num,
        } => {
            let mut config = load_config(&common)?;
            // --out redirects outputs only; the checkpoint stays where train put it
            config.paths.checkpoint = checkpoint.or(Some(config.checkpoint_path()));
            if let Some(out) = &common.out {
                config.paths.out_dir = out.clone();
            }
            config.paths.classifier = classifier.or(config.paths.classifier);
            config.paths.germlines = germlines.or(config.paths.germlines);
            let s = &mut config.sampler;
            s.steps = steps.unwrap_or(s.steps);
            s.decoder = decoder.unwrap_or(s.decoder);
            s.gamma = gamma.unwrap_or(s.gamma.clone());
            s.num = num.unwrap_or(s.num);
            sample_cmd(&config)
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            metrics,
        } => {
            let mut config = load_config(&common)?;
            // --out redirects outputs only; the checkpoint stays where train put it
            config.paths.checkpoint = checkpoint.or(Some(config.checkpoint_path()));
            if let Some(out) = &common.out {
                config.paths.out_dir = out.clone();
            }
            config.paths.data_dir = data.unwrap_or(config.paths.data_dir);
            config.eval.metrics = metrics.unwrap_or(config.eval.metrics);
            eval_cmd(&config)
        }
        Command::OracleCheck {
            seed,
            out,
            inject_sign_flip,
        } => {
            let checks = run_suite(seed, inject_sign_flip)?;
            let mut text = String::new();
            for c in &checks {
                writeln!(text, "{c}").expect("write to string");
            }
            let failed = checks.iter().any(|c| !c.passed);
            let passed = checks.iter().filter(|c| c.passed).count();
            writeln!(text, "{passed}/{} checks passed", checks.len()).expect("write to string");
            if let Some(dir) = out {
                write_atomic(&dir.join("oracle_report.txt"), text.as_bytes())?;
            }
            Ok(Outcome { text, failed })
        }
    }
}

fn gen_data(common: &Common) -> Result<Outcome> {
    let mut config = load_config(common)?;
    if let Some(out) = &common.out {
        config.paths.data_dir = out.clone();
    }
    config.sim.validate()?;
    let dir = &config.paths.data_dir;
    let dataset = make_dataset(&config.sim)?;
    write_dataset(&dataset, &config.sim, dir)?;
    echo_config(&config, dir)?;
    let mut text = String::new();
    for (name, records) in dataset.splits() {
        writeln!(text, "{name}: {} records", records.len()).expect("write to string");
    }
    writeln!(text, "bayes ceiling: {:.6}", dataset.bayes_ceiling).expect("write to string");
    writeln!(text, "wrote {}", dir.display()).expect("write to string");
    Ok(Outcome { text, failed: false })
}

fn train(common: &Common, resume: Option<PathBuf>, max_steps: Option<u64>) -> Result<Outcome> {
    let mut config = load_config(common)?;
    if let Some(out) = &common.out {
        config.paths.out_dir = out.clone();
    }
    config.paths.resume = resume.or(config.paths.resume);
    config.train.max_steps = max_steps.unwrap_or(config.train.max_steps);
    config.validate()?;
    let alphabet = Alphabet::protein();
    let train_set = pairs(read_split(&config.paths.data_dir, "train")?);
    let validation = pairs(read_split(&config.paths.data_dir, "validation")?);
    let mut trainer = match &config.paths.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.config.variant != config.variant {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint {} holds a {} model but the config asks for {}",
                    path.display(),
                    ckpt.config.variant,
                    config.variant
                )));
            }
            Trainer::resume(&ckpt, config.train, alphabet)?
        }
        None => Trainer::new(config.model, config.train, Default::default(), alphabet)?,
    };
    let start = trainer.step();
    let mut text = String::new();
    let log = train_loop(&mut trainer, &train_set, &validation, |r| {
        writeln!(text, "step {:>6} {:<10} loss {:.6}", r.step, r.split, r.loss).expect("write to string");
    })?;
    let dir = &config.paths.out_dir;
    let ckpt_path = config.checkpoint_path();
    save_checkpoint(&trainer.checkpoint(), &ckpt_path)?;
    write_metrics(&log, &dir.join("metrics.csv"))?;
    echo_config(&config, dir)?;
    writeln!(
        text,
        "trained steps {start}..{} ({} variant); checkpoint {}",
        trainer.step(),
        config.variant,
        ckpt_path.display()
    )
    .expect("write to string");
    Ok(Outcome { text, failed: false })
}

/// Germlines from a dataset TSV, a FASTA file or one sequence per line.
pub fn read_germlines(path: &Path, alphabet: &Alphabet) -> Result<Vec<TokenSequence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.starts_with(sim::TSV_HEADER) {
        return Ok(read_records_tsv(path, alphabet)?
            .into_iter()
            .map(|r| r.pair.germline().clone())
            .collect());
    }
    let out = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('>'))
        .map(|l| encode(l, alphabet))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::DataFormat {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    if out.is_empty() {
        return Err(Error::DataFormat {
            path: path.to_path_buf(),
            message: "no sequences".into(),
        });
    }
    Ok(out)
}

fn load_network(config: &RunConfig) -> Result<(Checkpoint, ScoreNetwork)> {
    let ckpt = load_checkpoint(&config.checkpoint_path())?;
    let net = ckpt.ema_network()?;
    Ok((ckpt, net))
}

fn load_scale(spec: &str, alphabet: &Alphabet) -> Result<HydropathyScale> {
    if spec == "hydropathy" {
        HydropathyScale::kyte_doolittle(alphabet)
    } else {
        HydropathyScale::load(Path::new(spec), alphabet)
    }
}

fn format_gamma(g: f64) -> String {
    format!("{g}")
}

fn sample_cmd(config: &RunConfig) -> Result<Outcome> {
    config.validate()?;
    let alphabet = Alphabet::protein();
    let (ckpt, net) = load_network(config)?;
    let variant = ckpt.config.variant;
    let s = &config.sampler;
    let jobs: Vec<(TransitionKernel, NoisedInit)> = match variant {
        KernelVariant::Germline => {
            let path = config.paths.germlines.as_ref().ok_or_else(|| {
                Error::InvalidArgument("the germline variant needs --germlines PATH to start from".into())
            })?;
            let germlines = read_germlines(path, &alphabet)?;
            (0..s.num)
                .map(|k| {
                    let g = &germlines[k % germlines.len()];
                    Ok((TransitionKernel::germline(&alphabet, g)?, NoisedInit::Germline(g.clone())))
                })
                .collect::<Result<_>>()?
        }
        KernelVariant::Mask => {
            let kernel = TransitionKernel::mask(&alphabet)?;
            vec![(kernel, NoisedInit::Length(s.length)); s.num]
        }
        KernelVariant::Uniform => vec![(TransitionKernel::uniform(&alphabet), NoisedInit::Length(s.length)); s.num],
    };
    let condition: Condition = s.condition.parse()?;
    let scale = match &config.paths.classifier {
        Some(spec) => load_scale(spec, &alphabet)?,
        None => HydropathyScale::kyte_doolittle(&alphabet)?,
    };
    let property = HydropathyProperty { scale: scale.clone() };
    let guidance = config.paths.classifier.as_ref().map(|_| Guidance {
        classifier: &property,
        condition,
    });
    if guidance.is_none() && s.gamma.iter().any(|&g| g > 0.0) {
        return Err(Error::InvalidArgument("guidance strength > 0 needs --classifier".into()));
    }
    let references: Vec<TokenSequence> = read_split(&config.paths.data_dir, "train")?
        .into_iter()
        .map(|r| r.pair.observed().clone())
        .collect();
    let dir = &config.paths.out_dir;
    let mut summary = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    summary
        .write_record(["gamma", "num", "nn_identity", "pairwise_diversity", "mean_property", "classifier_evaluations"])
        .map_err(csv_err)?;
    let mut text = String::new();
    for &gamma in &s.gamma {
        let sampler = s.sampler_config(gamma, config.seed);
        let out = sample(&net, &jobs, &sampler, &ckpt.schedule, guidance.as_ref())?;
        let mut fasta = String::new();
        let mut props = Vec::with_capacity(out.sequences.len());
        for (k, x) in out.sequences.iter().enumerate() {
            writeln!(
                fasta,
                ">sample_{k} seed={} steps={} gamma={}\n{}",
                config.seed,
                s.steps,
                format_gamma(gamma),
                decode(x, &alphabet)?
            )
            .expect("write to string");
            props.push(hydropathy_score(x, &scale)?);
        }
        write_atomic(&dir.join(format!("samples_gamma{}.fasta", format_gamma(gamma))), fasta.as_bytes())?;
        let nn = nn_identity(&out.sequences, &references)?;
        let div = if out.sequences.len() > 1 {
            pairwise_diversity(&out.sequences)?
        } else {
            f64::NAN
        };
        let mean_prop = props.iter().sum::<f64>() / props.len() as f64;
        summary
            .write_record([
                format_gamma(gamma),
                out.sequences.len().to_string(),
                format!("{nn:.6}"),
                format!("{div:.6}"),
                format!("{mean_prop:.6}"),
                out.stats.classifier_evaluations.to_string(),
            ])
            .map_err(csv_err)?;
        writeln!(
            text,
            "gamma {gamma}: nn_identity {nn:.4} diversity {div:.4} mean property {mean_prop:.4}"
        )
        .expect("write to string");
    }
    let bytes = summary.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_atomic(&dir.join("summary.csv"), &bytes)?;
    echo_config(config, dir)?;
    Ok(Outcome { text, failed: false })
}

fn eval_cmd(config: &RunConfig) -> Result<Outcome> {
    config.validate()?;
    let alphabet = Alphabet::protein();
    let (ckpt, net) = load_network(config)?;
    let variant = ckpt.config.variant;
    let mut records = pairs(read_split(&config.paths.data_dir, &config.eval.split)?);
    if config.eval.limit > 0 {
        records.truncate(config.eval.limit);
    }
    let hash = config.hash();
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record(["metric", "value", "n", "config_hash"]).map_err(csv_err)?;
    let mut text = String::new();
    for metric in &config.eval.metrics {
        let (value, n) = match metric.as_str() {
            "elbo_perplexity" => {
                let items = records
                    .iter()
                    .map(|p| Ok((TransitionKernel::for_pair(variant, &alphabet, p)?, p.observed().clone())))
                    .collect::<Result<Vec<_>>>()?;
                let report = elbo_perplexity(&net, &items, &config.elbo, &ckpt.schedule)?;
                (report.aggregate, items.len())
            }
            "non_germline_accuracy" => {
                let report = non_germline_accuracy(&net, &records, variant, &alphabet, config.seed)?;
                (report.accuracy, report.total)
            }
            "bayes_ceiling" => {
                let meta = sim::read_metadata(&config.paths.data_dir)?;
                (meta.bayes_ceiling, 1)
            }
            other => return Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        };
        w.write_record([metric.clone(), format!("{value:.6}"), n.to_string(), hash.clone()])
            .map_err(csv_err)?;
        writeln!(text, "{metric}: {value:.6} (n = {n})").expect("write to string");
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let dir = &config.paths.out_dir;
    write_atomic(&dir.join("eval.csv"), &bytes)?;
    echo_config(config, dir)?;
    Ok(Outcome { text, failed: false })
}

/// Parse arguments, run, print, and return the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(outcome) => {
            print!("{}", outcome.text);
            if outcome.failed {
                2
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
