//! Command-line front end. Exit codes: 0 success, 1 data or model error,
//! 2 usage error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::builder::RangedU64ValueParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{self, SynthSpec};
use crate::error::MimlError;
use crate::evaluation::{self, check_compatible, EvalReport};
use crate::persist::{load_model, save_model};
use crate::scoring::{rank_scores, relevant_from_scores, BagEmbedding};
use crate::training::{cumulative_loss_curve, train};
use crate::types::{Dataset, Model, TrainConfig, Variant};

#[derive(Debug, Parser)]
#[command(name = "mimlfast", version, about = "Fast multi-instance multi-label learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write it with its training history.
    Train(TrainArgs),
    /// Rank labels and predict relevant sets for every bag.
    Predict(PredictArgs),
    /// Evaluate a model (or a predictions file) against labelled data.
    Eval(EvalArgs),
    /// Report key instances and sub-concepts per (bag, relevant label).
    Inspect(InspectArgs),
    /// Generate a planted-model synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    /// Shared space, sub-concepts, dummy-label threshold.
    Full,
    /// No shared space: heads act on raw features.
    V1,
    /// Full training, top-r prediction with r the mean training cardinality.
    V2,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::V1 => Variant::V1NoSharedSpace,
            VariantArg::V2 => Variant::V2TopR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Records,
}

fn positive_usize() -> RangedU64ValueParser<usize> {
    RangedU64ValueParser::<usize>::new().range(1..)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training history (JSON lines); defaults to `<out>.history.jsonl`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Shared-space dimension (typical grid: 50, 100, 200).
    #[arg(long, default_value_t = 50, value_parser = positive_usize())]
    pub m: usize,
    /// Sub-concepts per label (typical grid: 1, 5, 10, 15).
    #[arg(long = "K", default_value_t = 5, value_parser = positive_usize())]
    pub k: usize,
    /// Norm bound on heads and projection columns (typical grid: 1, 5, 10).
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    /// Initial step size (typical grid: 0.0001, 0.0005, 0.001, 0.005).
    #[arg(long, default_value_t = 0.001)]
    pub gamma0: f64,
    /// Step-size decay, gamma_t = gamma0 / (1 + eta gamma0 t) (typical grid: 1e-5, 1e-6).
    #[arg(long, default_value_t = 1e-5)]
    pub eta: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_iters: u64,
    /// Iterations between validation evaluations.
    #[arg(long, default_value_t = 1_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub eval_every: u64,
    /// Evaluations without improvement before stopping.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    pub patience: u32,
    /// Fraction of the training bags held out for early stopping.
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    pub variant: VariantArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["model", "predictions"])))]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Prediction records as written by `predict`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Add key-instance accuracy (needs instance annotations and a model).
    #[arg(long)]
    pub with_key_instances: bool,
    /// Add the sub-concept usage histogram (needs a model).
    #[arg(long)]
    pub with_sub_concepts: bool,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Records)]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of bags.
    #[arg(long, default_value_t = 2000, value_parser = positive_usize())]
    pub n: usize,
    /// Instances per bag.
    #[arg(long, default_value_t = 5, value_parser = positive_usize())]
    pub z: usize,
    /// Feature dimension (last feature is a constant 1).
    #[arg(long, default_value_t = 20, value_parser = RangedU64ValueParser::<usize>::new().range(2..))]
    pub d: usize,
    /// Number of labels.
    #[arg(long = "L", default_value_t = 5, value_parser = positive_usize())]
    pub labels: usize,
    /// Planted sub-concepts per label.
    #[arg(long = "K-true", default_value_t = 2, value_parser = positive_usize())]
    pub k_true: usize,
    /// Planted shared-space dimension.
    #[arg(long = "m-true", default_value_t = 3, value_parser = positive_usize())]
    pub m_true: usize,
    /// Feature noise standard deviation around cluster centers.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// One line of `predict` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    /// Real labels by descending score.
    pub ranking: Vec<RankedLabel>,
    pub dummy_score: f64,
    pub relevant: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub label: usize,
    pub score: f64,
}

/// One line of `inspect` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyInstanceRecord {
    pub id: String,
    pub label: usize,
    pub key_instance: usize,
    pub sub_concept: usize,
    pub score: f64,
}

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(MimlError),
}

impl From<MimlError> for Failure {
    fn from(e: MimlError) -> Self {
        Failure::Data(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Inspect(a) => cmd_inspect(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_record<W: Write + ?Sized, S: Serialize>(w: &mut W, value: &S) -> Result<(), Failure> {
    serde_json::to_writer(&mut *w, value).map_err(MimlError::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn load_pair(data: &Path, model: &Path) -> Result<(Dataset, Model), Failure> {
    let dataset = data::load(data)?;
    let model = load_model(model)?;
    check_compatible(&model, &dataset)?;
    Ok((dataset, model))
}

pub fn cmd_train(a: &TrainArgs) -> CmdResult {
    let cfg = TrainConfig {
        m: a.m,
        k: a.k,
        c: a.c,
        gamma0: a.gamma0,
        eta: a.eta,
        max_iters: a.max_iters,
        eval_every: a.eval_every,
        patience: a.patience,
        validation_fraction: a.validation_fraction,
        rng_seed: a.seed,
        variant: a.variant.into(),
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let dataset = data::load(&a.data)?;
    let (model, state) = train(&dataset, &cfg)?;
    save_model(&model, &a.out)?;

    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.jsonl");
        p.into()
    });
    let mut w = output(Some(&history_path))?;
    for (h, (_, running_mean)) in state.history.iter().zip(cumulative_loss_curve(&state)) {
        write_record(
            &mut w,
            &serde_json::json!({
                "iteration": h.iteration,
                "val_ranking_loss": h.val_ranking_loss,
                "cumulative_loss": h.cumulative_loss,
                "running_mean_loss": running_mean,
            }),
        )?;
    }
    w.flush()?;
    eprintln!(
        "trained {} iterations ({} updates), best validation ranking loss {}",
        state.t,
        state.updates,
        if state.best_val_rankloss.is_finite() {
            format!("{:.6}", state.best_val_rankloss)
        } else {
            "n/a".to_string()
        }
    );
    Ok(())
}

pub fn cmd_predict(a: &PredictArgs) -> CmdResult {
    let (dataset, model) = load_pair(&a.data, &a.model)?;
    let l = model.label_space().num_labels;
    let mut w = output(a.out.as_deref())?;
    for bag in &dataset.bags {
        let scores = BagEmbedding::new(&model, bag).all_scores(&model);
        let record = PredictionRecord {
            id: bag.id.clone(),
            ranking: rank_scores(&scores[..l])
                .into_iter()
                .map(|(label, score)| RankedLabel { label, score })
                .collect(),
            dummy_score: scores[l],
            relevant: relevant_from_scores(&model, &scores),
        };
        write_record(&mut w, &record)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-bag real-label scores and predicted relevant sets.
type Scored = (Vec<Vec<f64>>, Vec<Vec<usize>>);

fn read_predictions(path: &Path, dataset: &Dataset) -> Result<Scored, Failure> {
    let l = dataset.label_space.num_labels;
    let mut by_id: HashMap<String, PredictionRecord> = HashMap::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| MimlError::Load { line: i + 1, message: e.to_string() })?;
        if rec.ranking.iter().map(|r| r.label).chain(rec.relevant.iter().copied()).any(|x| x >= l) {
            return Err(MimlError::Load { line: i + 1, message: "label out of range".into() }.into());
        }
        by_id.insert(rec.id.clone(), rec);
    }
    let mut rankings = Vec::with_capacity(dataset.len());
    let mut predictions = Vec::with_capacity(dataset.len());
    for bag in &dataset.bags {
        let rec = by_id
            .remove(&bag.id)
            .ok_or_else(|| MimlError::Config(format!("no prediction for bag {}", bag.id)))?;
        let mut scores = vec![f64::NEG_INFINITY; l];
        for r in &rec.ranking {
            scores[r.label] = r.score;
        }
        rankings.push(scores);
        predictions.push(rec.relevant);
    }
    Ok((rankings, predictions))
}

pub fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let dataset = data::load(&a.data)?;
    let truths: Vec<Vec<usize>> = dataset.bags.iter().map(|b| b.labels.clone()).collect();
    let l = dataset.label_space.num_labels;
    let report = match (&a.model, &a.predictions) {
        (Some(model_path), _) => {
            let model = load_model(model_path)?;
            let mut report = evaluation::evaluate(&model, &dataset)?;
            if a.with_key_instances {
                report.key_instance_accuracy = Some(evaluation::key_instance_accuracy(&model, &dataset)?);
            }
            if a.with_sub_concepts {
                report.sub_concept_histogram = Some(evaluation::sub_concept_report(&model, &dataset)?);
            }
            report
        }
        (None, Some(pred_path)) => {
            if a.with_key_instances || a.with_sub_concepts {
                return Err(Failure::Usage("key-instance and sub-concept reports need --model".into()));
            }
            let (rankings, predictions) = read_predictions(pred_path, &dataset)?;
            EvalReport::from_predictions(&rankings, &predictions, &truths, l)
        }
        (None, None) => return Err(Failure::Usage("one of --model or --predictions is required".into())),
    };
    let mut w = output(a.out.as_deref())?;
    match a.format {
        ReportFormat::Text => w.write_all(report.to_text().as_bytes())?,
        ReportFormat::Records => {
            w.write_all(report.to_record().as_bytes())?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_inspect(a: &InspectArgs) -> CmdResult {
    let (dataset, model) = load_pair(&a.data, &a.model)?;
    let mut hist = vec![vec![0usize; model.sub_concepts()]; dataset.label_space.num_labels];
    let mut w = output(a.out.as_deref())?;
    for bag in &dataset.bags {
        let emb = BagEmbedding::new(&model, bag);
        for &label in &bag.labels {
            let s = emb.score(&model, label);
            hist[label][s.sub_concept] += 1;
            let rec = KeyInstanceRecord {
                id: bag.id.clone(),
                label,
                key_instance: s.key_instance,
                sub_concept: s.sub_concept,
                score: s.score,
            };
            match a.format {
                ReportFormat::Records => write_record(&mut w, &rec)?,
                ReportFormat::Text => writeln!(
                    w,
                    "{} {} {} {} {}",
                    rec.id, rec.label, rec.key_instance, rec.sub_concept, rec.score
                )?,
            }
        }
    }
    match a.format {
        ReportFormat::Records => {
            write_record(&mut w, &serde_json::json!({ "sub_concept_histogram": hist }))?
        }
        ReportFormat::Text => {
            for (l, row) in hist.iter().enumerate() {
                let counts: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                writeln!(w, "sub_concepts[{l}] {}", counts.join(" "))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> CmdResult {
    let spec = SynthSpec {
        n_bags: a.n,
        z: a.z,
        d: a.d,
        num_labels: a.labels,
        k_true: a.k_true,
        m_true: a.m_true,
        noise_sigma: a.noise,
        rng_seed: a.seed,
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (dataset, _) = data::generate_synthetic(&spec)?;
    data::save(&dataset, &a.out)?;
    Ok(())
}
