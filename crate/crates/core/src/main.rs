use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use relpara::adversary::BagOfEmbeddings;
use relpara::augmentation::{
    export_adversarial_candidates, generate_augmentations, write_candidates_csv, AugmentMode, EntailmentRow,
};
use relpara::config::{BackendConfig, NliKind, RunConfig, SimilarityKind};
use relpara::generator::{Awareness, Generator, Vocab};
use relpara::io::{read_jsonl, read_jsonl_lenient, sha256_file, sha256_hex, write_json, write_jsonl};
use relpara::metrics::{evaluate_rows, rerank, EvalRow};
use relpara::oracle::{balance_corpus, weak_label_corpus, HttpNliBackend, NliBackend, SyntheticWorldBackend};
use relpara::rl::{
    dev_metrics, finetune, pretrain, Checkpoint, FinetuneBackends, FinetuneState, ParaphraseExample,
};
use relpara::scorers::{Evaluator, HttpSimilarity, SimilarityBackend, TokenOverlapSimilarity};
use relpara::sick::{read_group_table, read_sick, recast};
use relpara::{tokenize, AnnotatedPair, DecodeStrategy, Error, GenerationRequest, Relation, Result, SentencePair};

#[derive(Parser)]
#[command(name = "relpara", version, about = "Relation-controlled paraphrase generation")]
struct Cli {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set finetune.reward.alpha=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a SICK distribution into relation-annotated pair splits.
    Recast {
        #[arg(long)]
        sick_dir: PathBuf,
        /// pair_ID to transformation group table, when the corpus lacks the column.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label `{x, y}` pairs with the oracle and balance the result.
    WeakLabel {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised training of a new generator.
    Pretrain {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reinforcement fine-tuning of a pre-trained generator.
    Finetune {
        #[arg(long, required_unless_present = "resume")]
        model: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Run directory; defaults to the parent of `--resume`.
        #[arg(long, required_unless_present = "resume")]
        out: Option<PathBuf>,
        /// Checkpoint directory (`run/epoch_k`) to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode one paraphrase per input line.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample k candidates per input and keep the best scoring one.
    Rerank {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Corpus metrics over predictions.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// One reference string or list of strings per prediction line.
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paraphrase an entailment dataset and project its labels.
    Augment {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Augmented rows whose paraphrase the oracle disputes.
    ExportAdversarial {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// All scores of one generated sequence.
    Score {
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        relation: Relation,
        /// Saved adversary; without it the penalty is 0.
        #[arg(long)]
        adversary: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Recast { .. } => "recast",
            Command::WeakLabel { .. } => "weak-label",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Generate { .. } => "generate",
            Command::Rerank { .. } => "rerank",
            Command::Evaluate { .. } => "evaluate",
            Command::Augment { .. } => "augment",
            Command::ExportAdversarial { .. } => "export-adversarial",
            Command::Score { .. } => "score",
        }
    }

    fn run_dir(&self) -> Option<PathBuf> {
        match self {
            Command::Recast { out, .. }
            | Command::WeakLabel { out, .. }
            | Command::Pretrain { out, .. }
            | Command::Generate { out, .. }
            | Command::Rerank { out, .. }
            | Command::Augment { out, .. }
            | Command::ExportAdversarial { out, .. } => Some(out.clone()),
            Command::Finetune { out, resume, .. } => {
                out.clone().or_else(|| resume.as_ref().and_then(|r| r.parent().map(Path::to_path_buf)))
            }
            Command::Evaluate { out, .. } => out.clone(),
            Command::Score { .. } => None,
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let v: Vec<Option<&PathBuf>> = match self {
            Command::Recast { sick_dir, groups, .. } => vec![Some(sick_dir), groups.as_ref()],
            Command::WeakLabel { input, .. } | Command::ExportAdversarial { input, .. } => vec![Some(input)],
            Command::Pretrain { train, dev, .. } => vec![Some(train), dev.as_ref()],
            Command::Finetune { model, train, dev, resume, .. } => vec![model.as_ref(), Some(train), dev.as_ref(), resume.as_ref()],
            Command::Generate { model, input, .. } | Command::Rerank { model, input, .. } | Command::Augment { model, input, .. } => {
                vec![Some(model), Some(input)]
            }
            Command::Evaluate { pred, refs, .. } => vec![Some(pred), refs.as_ref()],
            Command::Score { adversary, .. } => vec![adversary.as_ref()],
        };
        v.into_iter().flatten().cloned().collect()
    }
}

/// Written to every run directory before work starts and again at the end.
#[derive(Serialize)]
struct Manifest {
    command: String,
    argv: Vec<String>,
    config_hash: String,
    seeds: BTreeMap<&'static str, u64>,
    input_hashes: BTreeMap<String, String>,
    versions: BTreeMap<&'static str, &'static str>,
    complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn seeds(cfg: &RunConfig) -> BTreeMap<&'static str, u64> {
    BTreeMap::from([
        ("generator_init", cfg.generator.seed),
        ("pretrain_shuffle", cfg.pretrain.seed),
        ("finetune_shuffle", cfg.finetune.seed),
        ("adversary_init", cfg.adversary.seed),
        ("sampling", cfg.generate.seed),
        ("balancing", cfg.weak_label.seed),
    ])
}

/// Hashes a file, or every file directly inside a directory.
fn hash_inputs(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> =
                fs::read_dir(p)?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|f| f.is_file()).collect();
            files.sort();
            for f in files {
                out.insert(f.display().to_string(), sha256_file(&f)?);
            }
        } else {
            out.insert(p.display().to_string(), sha256_file(p)?);
        }
    }
    Ok(out)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::NotControlRelation(_) => 2,
        Error::MissingInput(_) => 3,
        Error::Backend(_) | Error::BackendUnavailable(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let inputs = cli.command.inputs();
    for p in &inputs {
        if !p.exists() {
            return Err(Error::MissingInput(p.clone()));
        }
    }
    let toml = cfg.to_toml()?;
    let mut manifest = Manifest {
        command: cli.command.name().to_string(),
        argv: std::env::args().collect(),
        config_hash: sha256_hex(toml.as_bytes()),
        seeds: seeds(&cfg),
        input_hashes: hash_inputs(&inputs)?,
        versions: BTreeMap::from([("relpara", env!("CARGO_PKG_VERSION"))]),
        complete: false,
        error: None,
    };
    let run_dir = cli.command.run_dir();
    if let Some(dir) = &run_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), &toml)?;
        write_json(&dir.join("manifest.json"), &manifest)?;
    }
    let result = dispatch(cli.command, &cfg);
    if let Some(dir) = &run_dir {
        match &result {
            Ok(()) => manifest.complete = true,
            Err(e) => manifest.error = Some(e.to_string()),
        }
        write_json(&dir.join("manifest.json"), &manifest)?;
    }
    result
}

fn nli_backend(cfg: &BackendConfig) -> Result<Option<Box<dyn NliBackend>>> {
    Ok(match cfg.nli {
        NliKind::None => None,
        NliKind::Http => Some(Box::new(HttpNliBackend::new(cfg.nli_endpoint.clone().unwrap_or_default()))),
        NliKind::Synthetic => Some(Box::new(match &cfg.synonyms {
            None => SyntheticWorldBackend::new(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|_| Error::MissingInput(p.clone()))?;
                SyntheticWorldBackend::with_synonyms(text.lines().map(|l| l.split_whitespace().collect::<Vec<_>>()))
            }
        })),
    })
}

fn require_oracle(cfg: &BackendConfig) -> Result<Box<dyn NliBackend>> {
    nli_backend(cfg)?.ok_or_else(|| Error::Config("this command needs an NLI backend (backends.nli)".into()))
}

fn similarity_backend(cfg: &BackendConfig) -> Box<dyn SimilarityBackend> {
    match cfg.similarity {
        SimilarityKind::Overlap => Box::new(TokenOverlapSimilarity::new()),
        SimilarityKind::Http => Box::new(HttpSimilarity::new(cfg.similarity_endpoint.clone().unwrap_or_default())),
    }
}

#[derive(Deserialize)]
struct TextPair {
    x: String,
    y: String,
}

/// A generation input; annotated pairs and evaluation rows both parse.
#[derive(Deserialize)]
struct GenerationInput {
    x: String,
    #[serde(default)]
    y: Option<String>,
    #[serde(default)]
    references: Vec<String>,
    #[serde(default)]
    relation: Option<Relation>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum References {
    One(String),
    Many(Vec<String>),
}

fn control_examples(path: &Path) -> Result<Vec<ParaphraseExample>> {
    let pairs: Vec<AnnotatedPair> = read_jsonl(path)?;
    let total = pairs.len();
    let out: Vec<ParaphraseExample> = pairs.iter().filter(|p| p.relation.is_control()).map(ParaphraseExample::from).collect();
    if out.len() < total {
        info!("{}: kept {} of {total} pairs with a control relation", path.display(), out.len());
    }
    Ok(out)
}

fn dispatch(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Recast { sick_dir, groups, out } => {
            let table = groups.as_deref().map(read_group_table).transpose()?;
            let file = ["SICK.txt", "sick.txt", "SICK.tsv"]
                .iter()
                .map(|n| sick_dir.join(n))
                .find(|p| p.exists())
                .ok_or_else(|| Error::MissingInput(sick_dir.join("SICK.txt")))?;
            let data = recast(&read_sick(&file, table.as_ref())?);
            data.write(&out)?;
            println!("{}", serde_json::to_string(&data.counts())?);
        }
        Command::WeakLabel { input, out } => {
            let oracle = require_oracle(&cfg.backends)?;
            let items = read_jsonl_lenient::<TextPair>(&input)?
                .into_iter()
                .map(|r| r.and_then(|p| SentencePair::from_text(&p.x, &p.y)));
            let (labeled, stats) = weak_label_corpus(items, oracle.as_ref())?;
            let labeled = match cfg.weak_label.balance {
                Some(mode) => {
                    let control: Vec<AnnotatedPair> = labeled.into_iter().filter(|p| p.relation.is_control()).collect();
                    balance_corpus(&control, mode, cfg.weak_label.seed)?
                }
                None => labeled,
            };
            write_jsonl(&out.join("labeled.jsonl"), &labeled)?;
            write_json(&out.join("stats.json"), &stats)?;
        }
        Command::Pretrain { train, dev, out } => {
            let train = control_examples(&train)?;
            let dev = dev.as_deref().map(control_examples).transpose()?.unwrap_or_default();
            let vocab = Vocab::build(train.iter().flat_map(|e| [e.x.clone(), e.y.clone()]));
            let generator = Generator::new(vocab, cfg.generator)?;
            let oracle = nli_backend(&cfg.backends)?;
            let report = pretrain(&generator, &train, &dev, cfg.awareness, &cfg.pretrain, oracle.as_deref())?;
            generator.save(&out.join("model"))?;
            write_json(&out.join("pretrain.json"), &report)?;
        }
        Command::Finetune { model, train, dev, out, resume } => {
            let run_dir = out.or_else(|| resume.as_ref().and_then(|r| r.parent().map(Path::to_path_buf))).unwrap();
            if cfg.awareness != Awareness::Aware {
                return Err(Error::Config("fine-tuning needs awareness = \"aware\"".into()));
            }
            let train = control_examples(&train)?;
            let dev = dev.as_deref().map(control_examples).transpose()?.unwrap_or_default();
            let (generator, mut adversary, state) = match &resume {
                Some(dir) => {
                    let c = Checkpoint::read(dir)?;
                    (c.generator, c.adversary, c.state)
                }
                None => (Generator::load(model.as_deref().unwrap())?, BagOfEmbeddings::new(cfg.adversary)?, FinetuneState::default()),
            };
            let oracle = require_oracle(&cfg.backends)?;
            let similarity = similarity_backend(&cfg.backends);
            let backends = FinetuneBackends { oracle: oracle.as_ref(), similarity: similarity.as_ref() };
            let outcome = finetune(&generator, &mut adversary, &train, &dev, &cfg.finetune, backends, Some(&run_dir), state)?;
            generator.save(&run_dir.join("best"))?;
            write_json(&run_dir.join("state.json"), &outcome.state)?;
            if !dev.is_empty() {
                let m = dev_metrics(&generator, &dev, Awareness::Aware, &cfg.finetune.decode, Some(oracle.as_ref()))?;
                write_json(&run_dir.join("metrics.json"), &m)?;
            }
            if let Some(reason) = outcome.aborted {
                return Err(Error::BackendUnavailable(reason));
            }
        }
        Command::Generate { model, input, out } => {
            let generator = Generator::load(&model)?;
            let rows: Vec<GenerationInput> = read_jsonl(&input)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.generate.seed);
            let mut preds = Vec::with_capacity(rows.len());
            for row in rows {
                let Some(req) = request(&row, cfg)? else { continue };
                let y_hat = generator.generate(&req, cfg.awareness, &cfg.generate.decode, &mut rng)?;
                preds.push(eval_row(row, &y_hat, None));
            }
            write_jsonl(&out.join("predictions.jsonl"), &preds)?;
        }
        Command::Rerank { model, input, out, k } => {
            let generator = Generator::load(&model)?;
            let k = k.unwrap_or(cfg.generate.k);
            let oracle = require_oracle(&cfg.backends)?;
            let similarity = similarity_backend(&cfg.backends);
            let evaluator = Evaluator::new(oracle.as_ref(), similarity.as_ref(), cfg.finetune.reward);
            let rows: Vec<GenerationInput> = read_jsonl(&input)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.generate.seed);
            let mut preds = Vec::with_capacity(rows.len());
            for row in rows {
                let Some(mut req) = request(&row, cfg)? else { continue };
                req.decode = DecodeStrategy::Nucleus;
                let outcome = rerank(&req.x, req.relation, k, &evaluator, |_| {
                    generator.generate(&req, cfg.awareness, &cfg.generate.decode, &mut rng)
                })?;
                preds.push(eval_row(row, &outcome.best, Some(outcome.score)));
            }
            write_jsonl(&out.join("predictions.jsonl"), &preds)?;
        }
        Command::Evaluate { pred, refs, out } => {
            let mut rows: Vec<EvalRow> = read_jsonl(&pred)?;
            if let Some(path) = refs {
                let refs: Vec<References> = read_jsonl(&path)?;
                if refs.len() != rows.len() {
                    return Err(Error::InvalidArgument(format!("{} predictions but {} references", rows.len(), refs.len())));
                }
                for (row, r) in rows.iter_mut().zip(refs) {
                    row.references = match r {
                        References::One(s) => vec![s],
                        References::Many(v) => v,
                    };
                }
            }
            let oracle = nli_backend(&cfg.backends)?;
            let report = evaluate_rows(&rows, oracle.as_deref())?;
            println!("{}", serde_json::to_string(&report)?);
            if let Some(dir) = out {
                write_json(&dir.join("metrics.json"), &report)?;
            }
        }
        Command::Augment { model, input, out } => {
            let generator = Generator::load(&model)?;
            let rows: Vec<EntailmentRow> = read_jsonl(&input)?;
            let decode = cfg.generate.decode;
            let rng = std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(cfg.generate.seed));
            let paraphraser = |s: &[String], r: Option<Relation>| {
                let req = GenerationRequest::new(s.to_vec(), r.unwrap_or(Relation::Eq), cfg.generate.strategy, decode.min_len, decode.max_len)?;
                let awareness = if r.is_some() { Awareness::Aware } else { Awareness::Unaware };
                generator.generate(&req, awareness, &decode, &mut *rng.borrow_mut())
            };
            let mode = if cfg.awareness == Awareness::Unaware { AugmentMode::Unaware } else { cfg.augment.mode };
            let (augmented, stats) = generate_augmentations(&rows, &paraphraser, &cfg.augment.relations, mode)?;
            write_jsonl(&out.join("augmented.jsonl"), &augmented)?;
            write_json(&out.join("stats.json"), &stats)?;
        }
        Command::ExportAdversarial { input, out } => {
            let oracle = require_oracle(&cfg.backends)?;
            let rows: Vec<EntailmentRow> = read_jsonl(&input)?;
            let candidates = export_adversarial_candidates(&rows, oracle.as_ref())?;
            write_candidates_csv(&out.join("candidates.csv"), &candidates)?;
            info!("{} candidates from {} rows", candidates.len(), rows.len());
        }
        Command::Score { x, y, relation, adversary } => {
            let oracle = require_oracle(&cfg.backends)?;
            let similarity = similarity_backend(&cfg.backends);
            let adversary: Option<BagOfEmbeddings> = adversary.as_deref().map(BagOfEmbeddings::load).transpose()?;
            let mut evaluator = Evaluator::new(oracle.as_ref(), similarity.as_ref(), cfg.finetune.reward);
            if let Some(a) = &adversary {
                evaluator = evaluator.with_adversary(a);
            }
            let report = evaluator.report(&tokenize(&x), &tokenize(&y), relation)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

/// The request for one input row, or `None` when an aware model is asked
/// for a non-control relation.
fn request(row: &GenerationInput, cfg: &RunConfig) -> Result<Option<GenerationRequest>> {
    let relation = match (cfg.awareness, row.relation) {
        (Awareness::Aware, Some(r)) if r.is_control() => r,
        (Awareness::Aware, Some(r)) => {
            warn!("skipping {:?}: {r} is not a control relation", row.x);
            return Ok(None);
        }
        (Awareness::Aware, None) => return Err(Error::InvalidArgument(format!("{:?} has no relation", row.x))),
        (Awareness::Unaware, _) => Relation::Eq,
    };
    let d = &cfg.generate.decode;
    GenerationRequest::new(tokenize(&row.x), relation, cfg.generate.strategy, d.min_len, d.max_len).map(Some)
}

fn eval_row(row: GenerationInput, y_hat: &[String], score: Option<f64>) -> EvalRow {
    let mut references = row.references;
    if let Some(y) = row.y {
        references.push(y);
    }
    EvalRow {
        x: row.x,
        y_hat: y_hat.join(" "),
        references,
        relation: row.relation,
        metrics: score.map(|s| BTreeMap::from([("score".to_string(), s)])).unwrap_or_default(),
    }
}

