//! `mixce` command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use mixce::data::{
    encode_pairs, generate_synonym_corpus, load_parallel, read_probes, read_sentences, write_parallel, write_probes,
    write_sentences, SynonymTask,
};
use mixce::decoding::{translate, DecodeMode, LengthNorm};
use mixce::evaluation::{
    corpus_bleu, cumulative_sequence_probability, multi_reference_eval, pairwise_bleu, synonym_mass_probe, write_curve,
    EvalReport,
};
use mixce::harness::{distill_corpus, load_bundle, train_from_config, AverageMode, RunConfig};
use mixce::transformer::ParamStore;

#[derive(Parser)]
#[command(name = "mixce", version, about = "Mixed cross-entropy seq2seq workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a `key = value` run configuration.
    Train { config: PathBuf },
    /// Decode a source file with a checkpoint.
    Translate(TranslateArgs),
    /// Score hypotheses against references.
    Evaluate(EvaluateArgs),
    /// Model analyses.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Regenerate targets with forced-length greedy decoding.
    Distill(DistillArgs),
    /// Average checkpoints.
    Average(AverageArgs),
    /// Generate a synthetic synonym task.
    GenTask(GenTaskArgs),
}

#[derive(Args)]
struct TranslateArgs {
    checkpoint: PathBuf,
    src: PathBuf,
    /// Beam size (default: greedy).
    #[arg(long, conflicts_with = "sample")]
    beam: Option<usize>,
    /// Draw N samples and keep the one with the best average log-likelihood.
    #[arg(long)]
    sample: Option<usize>,
    /// Append the average and per-position log-probabilities.
    #[arg(long)]
    scores: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Maximum output length (default: twice the source plus 10).
    #[arg(long)]
    max_len: Option<usize>,
    /// Rank beam hypotheses by total instead of average log-probability.
    #[arg(long)]
    no_length_norm: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    hyp: PathBuf,
    #[arg(required = true)]
    refs: Vec<PathBuf>,
    /// The hypothesis file holds k consecutive lines per source; report AVG
    /// and TOP BLEU against every reference file.
    #[arg(long)]
    multi_ref: bool,
    /// Pairwise-BLEU among the k hypotheses of each source.
    #[arg(long)]
    pairwise: bool,
}

#[derive(Subcommand)]
enum Analyze {
    /// Cumulative probability of the top-k beam hypotheses.
    Cumprob {
        checkpoint: PathBuf,
        src: PathBuf,
        #[arg(long, default_value_t = 200)]
        beam: usize,
        #[arg(long)]
        max_len: Option<usize>,
        /// Write the full curve as `k<TAB>p` lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean probability mass on synonym sets at probe contexts.
    Synonyms { checkpoint: PathBuf, probe: PathBuf },
}

#[derive(Args)]
struct DistillArgs {
    checkpoint: PathBuf,
    /// Corpus prefix: reads `<corpus>.src` and `<corpus>.tgt`.
    corpus: PathBuf,
    /// Output file (default `<corpus>.distill`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AverageArgs {
    #[arg(required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, default_value = "last5")]
    mode: String,
    /// Validation score per checkpoint, comma-separated. For top5 without
    /// this flag, scores are read from `train.log` next to the checkpoints.
    #[arg(long, value_delimiter = ',')]
    scores: Vec<f64>,
    /// Output file (default `average.bin` next to the first checkpoint).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenTaskArgs {
    /// `key = value` file: src_vocab, weights, min_len, max_len, agreement,
    /// noise, n_probes, seed.
    spec: PathBuf,
    #[arg(short = 'n', long)]
    n: usize,
    /// Number of clean validation pairs.
    #[arg(long, default_value_t = 200)]
    valid: usize,
    /// Output prefix.
    #[arg(long, default_value = "task")]
    out: PathBuf,
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Twice the longest source plus 10; decoding also caps this at the model's
/// position limit.
fn default_max_len(sources: &[Vec<usize>]) -> usize {
    2 * sources.iter().map(Vec::len).max().unwrap_or(0) + 10
}

fn cmd_train(config: &Path) -> Result<String> {
    let cfg = RunConfig::load(config)?;
    let summary = train_from_config(&cfg)?;
    Ok(format!(
        "trained {} epochs; single = epoch {} (bleu {:.2}); average = {} (bleu {:.2}); outputs in {}\n",
        summary.checkpoints.len(),
        summary.single + 1,
        summary.bleu_history[summary.single],
        summary.average_mode,
        summary.average_bleu,
        cfg.out_dir.display()
    ))
}

fn cmd_translate(a: &TranslateArgs) -> Result<String> {
    let b = load_bundle(&a.checkpoint)?;
    let sources: Vec<Vec<usize>> = read_sentences(&a.src)?.iter().map(|s| b.src_vocab.encode(s)).collect();
    let max_len = a.max_len.unwrap_or_else(|| default_max_len(&sources));
    let norm = if a.no_length_norm { LengthNorm::None } else { LengthNorm::Avg };
    let mode = match (a.beam, a.sample) {
        (Some(size), _) => DecodeMode::Beam { size, norm },
        (None, Some(n)) => DecodeMode::SampleBest { n, seed: a.seed },
        (None, None) => DecodeMode::Greedy,
    };
    let mut out = String::new();
    for hyps in translate(&b.model, &sources, mode, max_len)? {
        let h = &hyps[0];
        out.push_str(&b.tgt_vocab.decode(h.content()).join(" "));
        if a.scores {
            let pos: Vec<String> = h.positional_logp.iter().map(|p| format!("{p:.4}")).collect();
            let _ = write!(out, "\t{:.4}\t{}", h.avg_logp, pos.join(" "));
        }
        out.push('\n');
    }
    Ok(out)
}

fn group(lines: Vec<Vec<String>>, sources: usize) -> Result<Vec<Vec<Vec<String>>>> {
    ensure!(sources > 0, "reference file is empty");
    ensure!(
        lines.len().is_multiple_of(sources) && !lines.is_empty(),
        "{} hypothesis lines do not split evenly over {sources} sources",
        lines.len()
    );
    let k = lines.len() / sources;
    Ok(lines.chunks(k).map(<[_]>::to_vec).collect())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<String> {
    let hyps = read_sentences(&a.hyp)?;
    let refs = a.refs.iter().map(|p| read_sentences(p)).collect::<mixce::Result<Vec<_>>>()?;
    let n = refs[0].len();
    for (p, r) in a.refs.iter().zip(&refs) {
        ensure!(r.len() == n, "{} has {} lines, expected {n}", p.display(), r.len());
    }
    let mut report = EvalReport::default();
    if a.multi_ref || a.pairwise {
        let sets = group(hyps, n)?;
        if a.multi_ref {
            report.per_reference = Some(multi_reference_eval(&sets, &refs)?);
        }
        if a.pairwise {
            report.pairwise_bleu = Some(pairwise_bleu(&sets)?);
        }
    } else {
        ensure!(refs.len() == 1, "several reference files need --multi-ref");
        report.corpus_bleu = Some(corpus_bleu(&hyps, &refs[0])?);
    }
    Ok(report.to_kv())
}

fn cmd_analyze(a: &Analyze) -> Result<String> {
    match a {
        Analyze::Cumprob { checkpoint, src, beam, max_len, out } => {
            let b = load_bundle(checkpoint)?;
            let sources: Vec<Vec<usize>> = read_sentences(src)?.iter().map(|s| b.src_vocab.encode(s)).collect();
            let max_len = max_len.unwrap_or_else(|| default_max_len(&sources));
            let curve = cumulative_sequence_probability(&b.model, &sources, *beam, max_len)?;
            if let Some(path) = out {
                write_curve(path, &curve)?;
            }
            let mut s = String::new();
            for &k in &[1usize, 5, 10, 50, 100, 200] {
                if let Some((_, p)) = curve.get(k - 1) {
                    let _ = writeln!(s, "cumprob@{k} = {p:.6}");
                }
            }
            Ok(s)
        }
        Analyze::Synonyms { checkpoint, probe } => {
            let b = load_bundle(checkpoint)?;
            let probes = read_probes(probe)?;
            let mass = synonym_mass_probe(&b.model, &probes, &b.src_vocab, &b.tgt_vocab)?;
            Ok(EvalReport { synonym_mass: Some(mass), ..Default::default() }.to_kv())
        }
    }
}

fn cmd_distill(a: &DistillArgs) -> Result<String> {
    let b = load_bundle(&a.checkpoint)?;
    let pairs = load_parallel(&with_ext(&a.corpus, "src"), &with_ext(&a.corpus, "tgt"))?;
    let distilled = distill_corpus(&b.model, &encode_pairs(&pairs, &b.src_vocab, &b.tgt_vocab))?;
    let lines: Vec<Vec<String>> = distilled.iter().map(|p| b.tgt_vocab.decode(p.distilled.as_deref().unwrap_or(&[]))).collect();
    let out = a.out.clone().unwrap_or_else(|| with_ext(&a.corpus, "distill"));
    write_sentences(&out, &lines)?;
    Ok(format!("wrote {} distilled targets to {}\n", lines.len(), out.display()))
}

/// Validation BLEU per epoch from a `train.log`, keyed by epoch number.
fn scores_from_log(log: &Path) -> Result<BTreeMap<usize, f64>> {
    let text = fs::read_to_string(log).with_context(|| format!("reading {}", log.display()))?;
    let mut out = BTreeMap::new();
    for line in text.lines().filter(|l| l.starts_with("epoch\t")) {
        let f: Vec<&str> = line.split('\t').collect();
        if let (Some(e), Some(b)) = (f.get(1), f.get(5)) {
            if let (Ok(e), Ok(b)) = (e.parse(), b.parse()) {
                out.insert(e, b);
            }
        }
    }
    Ok(out)
}

fn epoch_of(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("checkpoint")?.parse().ok()
}

fn cmd_average(a: &AverageArgs) -> Result<String> {
    let mode: AverageMode = a.mode.parse()?;
    let stores = a.checkpoints.iter().map(|p| ParamStore::load(p)).collect::<mixce::Result<Vec<_>>>()?;
    let scores = if !a.scores.is_empty() {
        ensure!(a.scores.len() == stores.len(), "{} scores for {} checkpoints", a.scores.len(), stores.len());
        a.scores.clone()
    } else if mode == AverageMode::Top5 {
        let dir = a.checkpoints[0].parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let log = scores_from_log(&dir.join("train.log"))?;
        a.checkpoints
            .iter()
            .map(|p| {
                epoch_of(p)
                    .and_then(|e| log.get(&e).copied())
                    .with_context(|| format!("no validation score for {} (pass --scores)", p.display()))
            })
            .collect::<Result<_>>()?
    } else {
        vec![0.0; stores.len()]
    };
    let (avg, flagged) = mixce::harness::average_checkpoints(&stores, &scores, mode)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.checkpoints[0].parent().map_or_else(|| PathBuf::from("average.bin"), |d| d.join("average.bin")));
    avg.save(&out)?;
    let note = if flagged { " (fewer than 5 checkpoints: averaged all)" } else { "" };
    Ok(format!("wrote {} average to {}{note}\n", mode, out.display()))
}

fn parse_task(text: &str) -> Result<SynonymTask> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').with_context(|| format!("line {}: expected `key = value`", n + 1))?;
        map.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    let get = |k: &str, default: &str| map.get(k).cloned().unwrap_or_else(|| default.to_owned());
    let num = |k: &str, default: &str| -> Result<f64> { get(k, default).parse().with_context(|| format!("bad value for `{k}`")) };
    for k in map.keys() {
        if !["src_vocab", "weights", "min_len", "max_len", "agreement", "noise", "n_probes", "seed"].contains(&k.as_str()) {
            bail!("unknown task key `{k}`");
        }
    }
    let weights = get("weights", "0.34,0.33,0.33")
        .split(',')
        .map(|w| w.trim().parse::<f64>().context("bad weight"))
        .collect::<Result<Vec<_>>>()?;
    let mut task = SynonymTask::uniform_sets(
        num("src_vocab", "16")? as usize,
        &weights,
        num("min_len", "4")? as usize,
        num("max_len", "8")? as usize,
        num("seed", "1")? as u64,
    );
    task.agreement = num("agreement", "0")?;
    task.noise = num("noise", "0")?;
    task.n_probes = num("n_probes", "500")? as usize;
    task.validate()?;
    Ok(task)
}

fn cmd_gen_task(a: &GenTaskArgs) -> Result<String> {
    let text = fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let task = parse_task(&text)?;
    let corpus = generate_synonym_corpus(&task, a.n)?;
    let valid = task.sample_pairs(a.valid, task.seed.wrapping_add(1), false)?;
    let p = &a.out;
    write_parallel(&with_ext(p, "train.src"), &with_ext(p, "train.tgt"), &corpus.pairs)?;
    write_parallel(&with_ext(p, "valid.src"), &with_ext(p, "valid.tgt"), &valid)?;
    write_probes(&with_ext(p, "probes"), &corpus.probes)?;
    Ok(format!(
        "wrote {} training pairs, {} validation pairs, {} probes with prefix {}\n",
        a.n,
        a.valid,
        corpus.probes.len(),
        p.display()
    ))
}

fn run(cli: Cli) -> Result<String> {
    match &cli.command {
        Command::Train { config } => cmd_train(config),
        Command::Translate(a) => cmd_translate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Average(a) => cmd_average(a),
        Command::GenTask(a) => cmd_gen_task(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
