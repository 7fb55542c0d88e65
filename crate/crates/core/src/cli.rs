//! Command-line front end: `learn-bpe`, `segment`, `train`, `decode`,
//! `score`.
//!
//! Data goes to stdout, diagnostics to stderr through `log`. Exit codes are
//! 0 on success, 1 for user errors (bad input, config, files) and 2 for
//! internal failures.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attention::format_attention;
use crate::config::RunConfig;
use crate::decode::{attention_matrix, decode_features, format_nbest, hypothesis_to_words, NBestEntry};
use crate::error::{Error, Result};
use crate::eval::wer_report;
use crate::features::{accumulate_and_normalize, load_manifest, read_manifest_rows, FbankConfig, Utterance};
use crate::hybrid::{train_loop, Example, TrainOutput};
use crate::model::{Model, ModelConfig};
use crate::numerics::Checkpoint;
use crate::tokenizer::{learn_bpe, word_counts, Alphabet, OovPolicy, SubwordVocab};

pub const MERGES_FILE: &str = "merges.txt";
pub const UNITS_FILE: &str = "units.txt";

#[derive(Debug, Parser)]
#[command(name = "subword-asr", version, about = "Hybrid CTC/attention speech recognition over BPE subword units")]
pub struct Cli {
    /// Overrides the run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output on stderr; repeat for debug detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn BPE merges from a transcript file (one sentence per line).
    LearnBpe(LearnBpeArgs),
    /// Segment text into subword units.
    Segment(SegmentArgs),
    /// Train a hybrid model.
    Train(TrainArgs),
    /// Beam-search decode a manifest into an n-best TSV.
    Decode(DecodeArgs),
    /// Word error rate of hypotheses against a reference manifest.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct LearnBpeArgs {
    #[arg(long)]
    pub transcripts: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub num_merges: usize,
    /// Characters allowed in words; defaults to A-Z and apostrophe.
    #[arg(long)]
    pub alphabet: Option<String>,
    /// Output directory for merges.txt and units.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub merges: PathBuf,
    #[arg(long)]
    pub units: PathBuf,
    /// Text to segment; reads stdin line by line when absent.
    #[arg(long)]
    pub text: Option<String>,
    /// Print unit ids instead of unit strings.
    #[arg(long)]
    pub ids: bool,
    /// Drop out-of-alphabet characters with a warning instead of failing.
    #[arg(long)]
    pub skip_oov: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest_train: Option<PathBuf>,
    #[arg(long)]
    pub manifest_dev: Option<PathBuf>,
    #[arg(long)]
    pub outdir: PathBuf,
    /// Overrides `paths.merges`.
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// Overrides `paths.units`.
    #[arg(long)]
    pub units: Option<PathBuf>,
    /// Overrides `hybrid.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides `hybrid.lambda`.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub beam: usize,
    /// Hypotheses written per utterance.
    #[arg(long, default_value_t = 1)]
    pub nbest: usize,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Vocabulary files; default to merges.txt and units.txt beside the checkpoint.
    #[arg(long)]
    pub merges: Option<PathBuf>,
    #[arg(long)]
    pub units: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Directory for per-utterance attention matrices of the best hypothesis.
    #[arg(long)]
    pub dump_attention: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub ref_manifest: PathBuf,
    /// n-best TSV (rank 1 rows are scored) or `utt_id<TAB>words` lines.
    #[arg(long)]
    pub hyp_file: PathBuf,
    /// Also write the report as TSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::LearnBpe(a) => cmd_learn_bpe(&a),
        Command::Segment(a) => cmd_segment(&a),
        Command::Train(a) => cmd_train(&a, cli.seed),
        Command::Decode(a) => cmd_decode(&a),
        Command::Score(a) => cmd_score(&a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_learn_bpe(args: &LearnBpeArgs) -> Result<()> {
    let text = read_text(&args.transcripts)?;
    let alphabet = match &args.alphabet {
        Some(chars) => Alphabet::new(chars.chars())?,
        None => Alphabet::default(),
    };
    let corpus = word_counts(text.lines());
    for word in corpus.keys() {
        if let Some(ch) = word.chars().find(|&c| !alphabet.contains(c)) {
            let line = text.lines().position(|l| l.split_whitespace().any(|w| w == word)).unwrap_or(0) + 1;
            return Err(Error::parse(
                &args.transcripts,
                line,
                format!("character {ch:?} in {word:?} is outside the alphabet"),
            ));
        }
    }
    let vocab = learn_bpe(&corpus, args.num_merges, alphabet)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    vocab.save(&args.out.join(MERGES_FILE), &args.out.join(UNITS_FILE))?;
    println!("{} units ({} merges)", vocab.num_units(), vocab.merges().len());
    Ok(())
}

pub fn cmd_segment(args: &SegmentArgs) -> Result<()> {
    let vocab = SubwordVocab::load(&args.merges, &args.units)?;
    let policy = if args.skip_oov { OovPolicy::SkipWithWarning } else { OovPolicy::Reject };
    let lines: Vec<String> = match &args.text {
        Some(t) => vec![t.clone()],
        None => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| Error::io(Path::new("<stdin>"), e))?;
            buf.lines().map(str::to_string).collect()
        }
    };
    for line in lines {
        let units = vocab.segment_sentence(&line, policy)?;
        if args.ids {
            let ids: Vec<String> = vocab.ids(&units)?.iter().map(usize::to_string).collect();
            println!("{}", ids.join(" "));
        } else {
            println!("{}", units.join(" "));
        }
    }
    Ok(())
}

fn load_features(path: &Path, config: &RunConfig) -> Result<Vec<Utterance>> {
    let fbank = FbankConfig {
        num_mel: config.features.num_mel,
        ..FbankConfig::default()
    };
    let utts = load_manifest(path, &fbank)?;
    if config.features.cmvn && !utts.is_empty() {
        Ok(accumulate_and_normalize(utts)?.0)
    } else {
        Ok(utts)
    }
}

fn to_examples(utts: &[Utterance], vocab: &SubwordVocab, policy: OovPolicy) -> Result<Vec<Example>> {
    utts.iter().map(|u| Example::from_utterance(u, vocab, policy)).collect()
}

pub fn cmd_train(args: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let manifest_train = args
        .manifest_train
        .as_deref()
        .ok_or_else(|| Error::Config("--manifest-train is required".into()))?;
    let manifest_dev = args
        .manifest_dev
        .as_deref()
        .ok_or_else(|| Error::Config("--manifest-dev is required".into()))?;
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        config.hybrid.seed = s;
    }
    if let Some(e) = args.epochs {
        config.hybrid.epochs = e;
    }
    if let Some(l) = args.lambda {
        config.hybrid.lambda = l;
    }
    if let Some(m) = &args.merges {
        config.paths.merges = Some(m.clone());
    }
    if let Some(u) = &args.units {
        config.paths.units = Some(u.clone());
    }
    config.validate()?;
    let merges = config
        .paths
        .merges
        .clone()
        .ok_or_else(|| Error::Config("paths.merges is not set (use --merges)".into()))?;
    let units = config
        .paths
        .units
        .clone()
        .ok_or_else(|| Error::Config("paths.units is not set (use --units)".into()))?;
    let vocab = SubwordVocab::load(&merges, &units)?;

    fs::create_dir_all(&args.outdir).map_err(|e| Error::io(&args.outdir, e))?;
    write_text(&args.outdir.join("config.toml"), &config.to_toml_string())?;
    vocab.save(&args.outdir.join(MERGES_FILE), &args.outdir.join(UNITS_FILE))?;

    let policy = config.tokenizer.oov_policy;
    let train = to_examples(&load_features(manifest_train, &config)?, &vocab, policy)?;
    let dev = to_examples(&load_features(manifest_dev, &config)?, &vocab, policy)?;
    log::info!("{} train / {} dev utterances, {} units", train.len(), dev.len(), vocab.num_units());

    let model_config = ModelConfig {
        input_dim: config.features.num_mel,
        num_units: vocab.num_units(),
        encoder: config.model.encoder.clone(),
        decoder: config.model.decoder.clone(),
    };
    let init_scale = config.model.init_scale.unwrap_or(0.1);
    let mut model = Model::init(model_config, config.hybrid.seed, init_scale)?;
    let mut metadata = BTreeMap::new();
    metadata.insert("cmvn".to_string(), config.features.cmvn.to_string());
    let out = TrainOutput {
        dir: args.outdir.clone(),
        metadata,
    };
    let report = train_loop(&mut model, &train, &dev, &vocab, &config.hybrid, Some(&out))?;
    match report.best() {
        Some(b) => println!("best epoch {} dev WER {:.2}% dev loss {:.4}", b.epoch, b.dev_wer, b.dev_loss),
        None => println!("no epochs run; wrote initial checkpoint"),
    }
    Ok(())
}

pub fn cmd_decode(args: &DecodeArgs) -> Result<()> {
    if args.beam == 0 || args.workers == 0 || args.nbest == 0 {
        return Err(Error::Config("--beam, --nbest and --workers must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let model = Model::from_checkpoint(&ckpt)?;
    let dir = args.checkpoint.parent().unwrap_or_else(|| Path::new("."));
    let merges = args.merges.clone().unwrap_or_else(|| dir.join(MERGES_FILE));
    let units = args.units.clone().unwrap_or_else(|| dir.join(UNITS_FILE));
    let vocab = SubwordVocab::load(&merges, &units)?;
    if vocab.num_units() != model.config.num_units {
        return Err(Error::Incompatible(format!(
            "vocabulary has {} units but the checkpoint was trained with {}",
            vocab.num_units(),
            model.config.num_units
        )));
    }
    let mut config = RunConfig::default();
    config.features.num_mel = model.config.input_dim;
    config.features.cmvn = ckpt.metadata.get("cmvn").map_or(true, |v| v == "true");
    let utts = load_features(&args.manifest, &config)?;

    let decode_one = |u: &Utterance| -> Result<(Vec<NBestEntry>, Option<String>)> {
        let hyps = decode_features(&model, &u.features, args.beam, args.max_len, 0.0)
            .map_err(|e| Error::Contract(format!("utterance {}: {e}", u.id)))?;
        let mut rows = Vec::new();
        for (rank, h) in hyps.iter().take(args.nbest).enumerate() {
            rows.push(NBestEntry {
                utt_id: u.id.clone(),
                rank: rank + 1,
                score: h.score,
                words: hypothesis_to_words(&h.tokens, &vocab)?,
            });
        }
        let dump = match (&args.dump_attention, hyps.first()) {
            (Some(_), Some(best)) => Some(format_attention(&attention_matrix(&model, &u.features, &best.tokens)?)),
            _ => None,
        };
        Ok((rows, dump))
    };
    let results: Vec<Result<(Vec<NBestEntry>, Option<String>)>> = if args.workers == 1 {
        utts.iter().map(decode_one).collect()
    } else {
        let chunk = utts.len().div_ceil(args.workers).max(1);
        std::thread::scope(|s| {
            let handles: Vec<_> = utts
                .chunks(chunk)
                .map(|part| s.spawn(|| part.iter().map(decode_one).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("decode worker panicked"))
                .collect()
        })
    };
    let mut entries = Vec::new();
    for (u, r) in utts.iter().zip(results) {
        let (rows, dump) = r?;
        entries.extend(rows);
        if let (Some(dir), Some(text)) = (&args.dump_attention, dump) {
            write_text(&dir.join(format!("{}.att", u.id)), &text)?;
        }
    }
    write_text(&args.out, &format_nbest(&entries))?;
    println!("decoded {} utterances", utts.len());
    Ok(())
}

/// Reads rank-1 hypotheses keyed by utterance id.
pub fn read_hypotheses(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read_text(path)?;
    let mut hyps = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (id, words) = match cols.as_slice() {
            [id, rank, _score, words] => {
                let rank: usize = rank
                    .parse()
                    .map_err(|_| Error::parse(path, i + 1, format!("bad rank {rank:?}")))?;
                if rank != 1 {
                    continue;
                }
                (*id, *words)
            }
            [id, words] => (*id, *words),
            [id] => (*id, ""),
            _ => return Err(Error::parse(path, i + 1, "expected 2 or 4 tab-separated columns")),
        };
        if hyps.insert(id.to_string(), words.to_string()).is_some() {
            return Err(Error::parse(path, i + 1, format!("duplicate hypothesis for {id}")));
        }
    }
    if hyps.is_empty() {
        return Err(Error::Contract(format!("{}: no hypotheses", path.display())));
    }
    Ok(hyps)
}

pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let refs = read_manifest_rows(&args.ref_manifest)?;
    let hyps = read_hypotheses(&args.hyp_file)?;
    let known: BTreeSet<&str> = refs.iter().map(|r| r.utt_id.as_str()).collect();
    let unknown: Vec<&str> = hyps.keys().map(String::as_str).filter(|id| !known.contains(id)).collect();
    if !unknown.is_empty() {
        return Err(Error::Contract(format!(
            "hypotheses for utterances missing from the reference manifest: {}",
            unknown.join(", ")
        )));
    }
    let mut missing = 0;
    let pairs: Vec<(&str, &str)> = refs
        .iter()
        .map(|r| {
            let h = hyps.get(&r.utt_id).map(String::as_str);
            missing += usize::from(h.is_none());
            (r.transcript.as_str(), h.unwrap_or(""))
        })
        .collect();
    if missing > 0 {
        log::warn!("{missing} reference utterances have no hypothesis; scored as empty");
    }
    let report = wer_report(&pairs)?;
    println!("{report}");
    if let Some(out) = &args.out {
        let mut text = report.to_tsv();
        let _ = writeln!(text, "utterances\t{}", refs.len());
        write_text(out, &text)?;
    }
    Ok(())
}
