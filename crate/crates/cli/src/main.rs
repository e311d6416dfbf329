//! `childphone` command line: one subcommand per pipeline stage. Manifests are
//! JSON lines, tables TSV, tensors the little-endian matrix format. Every run
//! that writes files also writes a `key = value` echo of its arguments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use tracing::{info, warn};

use childphone::chat::{parse_chat_with, read_jsonl, write_jsonl, ParseNotice, PhoTierPreference, Utterance};
use childphone::ctc::{greedy_decode, PosteriorGrid};
use childphone::curator::{
    add_second_pass, apply_exclusions, apply_verdicts, corpus_stats, curate, make_qc_plan, make_split, parse_verdicts_tsv,
    CurationConfig, QcPlan, Split, SplitAssignment,
};
use childphone::devmetrics::{group_slope, is_canonical, trajectories, AgedUtterance};
use childphone::evaluator::{
    align, category_rates, category_rates_tsv, corpus_per, join_pairs, substitution_matrix, GroupBy, Hypothesis,
};
use childphone::features::{extract_logmel, read_wav, FeatureSource};
use childphone::inventory::{FeatureTable, PhoneClass, TargetInventory};
use childphone::synth::{write_synth_corpus, SynthCorpusConfig};
use childphone::tensor::{write_atomic, Matrix};
use childphone::train::{
    decode, examples_for_file, group_by_file, load_checkpoint, posteriors, save_checkpoint, train, CheckpointMeta,
    FeatureStore, TrainConfig, TrainExample,
};

#[derive(Parser, Debug)]
#[command(name = "childphone", version, about = "Phoneme recognition toolkit for child speech")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log filter for the JSON logs on stderr.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    /// Target inventory TSV (defaults to the built-in 57-phone set).
    #[arg(long, global = true)]
    inventory: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Segment an IPA string into phones with their feature vectors.
    Tokenize(IpaArgs),
    /// Map an IPA string onto the target inventory.
    Normalize(IpaArgs),
    /// Parse a tree of CHAT files (`{root}/{corpus}/...cha`) into a manifest.
    Parse(ParseArgs),
    /// Apply the utterance rules and fill target phones.
    Curate(CurateArgs),
    /// Draw the listening sample for transcript quality control.
    QcPlan(QcPlanArgs),
    /// Record listening verdicts and drop excluded files.
    QcApply(QcApplyArgs),
    /// Assign children to train/valid/test.
    Split(SplitArgs),
    /// Per-corpus summary tables.
    Stats(StatsArgs),
    /// Write normalized log-mel features per audio file.
    ExtractFeatures(ExtractArgs),
    /// Train the prediction head, one checkpoint per seed.
    Train(TrainArgs),
    /// Greedy-decode utterances from a checkpoint or from posterior grids.
    Decode(DecodeArgs),
    /// PER with insertion/deletion/substitution rates.
    Eval(EvalArgs),
    /// Substitution matrix as CSV.
    Confusion(ConfusionArgs),
    /// Substitution rates by vowel height and consonant manner.
    Categories(PairArgs),
    /// Canonical-proportion trajectories per child and for the group.
    Canonical(CanonicalArgs),
    /// Write the synthetic CHAT + audio corpus.
    SynthCorpus(SynthArgs),
}

#[derive(Args, Debug, Serialize)]
struct IpaArgs {
    /// IPA text.
    ipa: String,
}

#[derive(Args, Debug, Serialize)]
struct ParseArgs {
    /// Root with one directory per corpus.
    #[arg(long)]
    chat_root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Where to write parse notices (JSON lines).
    #[arg(long)]
    notices: Option<PathBuf>,
    /// Prefer `%xpho` over `%pho` when both are present.
    #[arg(long)]
    prefer_xpho: bool,
}

#[derive(Args, Debug, Serialize)]
struct CurateArgs {
    /// TOML curation config; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rejects: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct QcPlanArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Existing plan to extend with a second pass.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Corpus flagged by the first pass; all its files get listened to.
    #[arg(long = "flag")]
    flagged: Vec<String>,
}

#[derive(Args, Debug, Serialize)]
struct QcApplyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// TSV: corpus_id, file_id, matched, listened.
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the dropped utterances.
    #[arg(long)]
    excluded: Option<PathBuf>,
    /// Drop a whole corpus.
    #[arg(long = "exclude-corpus")]
    exclude_corpus: Vec<String>,
}

#[derive(Args, Debug, Serialize)]
struct SplitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    tsv: PathBuf,
    #[arg(long)]
    json: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(group(ArgGroup::new("source").required(true).args(["audio", "features"])))]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Child split table written by `split`.
    #[arg(long)]
    splits: PathBuf,
    #[arg(long)]
    audio: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    context_sec: f64,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    peak_lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    accum_steps: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(group(ArgGroup::new("model").required(true).args(["ckpt", "grids"])))]
struct DecodeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint directory from `train`.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Directory of per-utterance posterior grids, `{dir}/{utt_id}.bin`.
    #[arg(long)]
    grids: Option<PathBuf>,
    #[arg(long)]
    audio: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    /// Restrict to one split (needs `--splits`).
    #[arg(long, requires = "splits")]
    split: Option<String>,
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Also write the posterior grids used for decoding.
    #[arg(long)]
    write_grids: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ByArg {
    None,
    Language,
    Corpus,
    AgeBin,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long, value_enum, default_value_t = ByArg::None)]
    by: ByArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ClassArg {
    Vowel,
    Consonant,
}

#[derive(Args, Debug, Serialize)]
struct ConfusionArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long, value_enum)]
    class: Option<ClassArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct PairArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CanonicalArgs {
    #[arg(long)]
    hyp: PathBuf,
    /// Per-child trajectory TSV.
    #[arg(long)]
    out: PathBuf,
    /// Group curve TSV (defaults to `<out>.group.tsv`).
    #[arg(long)]
    group: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    children: usize,
}

/// Errors caused by the caller's inputs (exit code 1).
#[derive(Debug)]
struct InputError(String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_err(msg: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(InputError(msg.to_string()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn read_records<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    read_jsonl(BufReader::new(f)).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records)?;
    write_file(path, &buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_splits(path: &Path) -> Result<BTreeMap<String, Split>> {
    SplitAssignment::from_tsv(&read_text(path)?).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

/// Writes the run's arguments as `key = value` lines next to `out`
/// (inside it when `out` is a directory).
fn write_echo(out: &Path, name: &str, command: &Command, cli: &Cli, inv: &TargetInventory) -> Result<()> {
    let path = if out.is_dir() {
        out.join("run.toml")
    } else {
        let mut p = out.as_os_str().to_owned();
        p.push(".run.toml");
        PathBuf::from(p)
    };
    let mut text = format!(
        "subcommand = \"{name}\"\nversion = \"{}\"\ninventory = \"{}\"\ninventory_path = {}\nthreads = {}\n",
        env!("CARGO_PKG_VERSION"),
        inv.version(),
        cli.inventory.as_ref().map_or_else(|| "null".to_string(), |p| format!("{:?}", p.display().to_string())),
        cli.threads.map_or_else(|| "\"auto\"".to_string(), |t| t.to_string())
    );
    let value = serde_json::to_value(command)?;
    if let Some(args) = value.as_object().and_then(|o| o.values().next()).and_then(|v| v.as_object()) {
        for (k, v) in args {
            text.push_str(&format!("{k} = {v}\n"));
        }
    }
    write_file(&path, text.as_bytes())
}

fn store_from(audio: &Option<PathBuf>, features: &Option<PathBuf>) -> Result<FeatureStore> {
    match (audio, features) {
        (Some(a), None) => Ok(FeatureStore::Audio(a.clone())),
        (None, Some(f)) => Ok(FeatureStore::Features(f.clone())),
        _ => Err(input_err("give exactly one of --audio or --features")),
    }
}

/// Builds examples file by file in parallel, preserving manifest order.
fn load_examples_parallel(
    manifest: &[Utterance],
    splits: &BTreeMap<String, Split>,
    store: &FeatureStore,
    context_sec: f64,
    inv: &TargetInventory,
) -> Result<Vec<TrainExample>> {
    let groups = group_by_file(manifest);
    let loaded: Vec<_> = groups
        .par_iter()
        .map(|g| examples_for_file(g, splits, store, context_sec, inv))
        .collect();
    let mut out = Vec::new();
    for r in loaded {
        let (ex, skipped) = r.map_err(input_err)?;
        for (utt, why) in skipped {
            warn!(utt_id = %utt, reason = %why, "utterance skipped");
        }
        out.extend(ex);
    }
    Ok(out)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn find_cha(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            find_cha(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "cha") {
            out.push(path);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct NoticeRecord<'a> {
    corpus_id: &'a str,
    file_id: &'a str,
    notice: &'a ParseNotice,
}

fn cmd_parse(a: &ParseArgs) -> Result<()> {
    let mut files = Vec::new();
    find_cha(&a.chat_root, &mut files).map_err(|e| input_err(format!("{}: {e}", a.chat_root.display())))?;
    files.sort();
    let pref = if a.prefer_xpho {
        PhoTierPreference::Xpho
    } else {
        PhoTierPreference::Pho
    };
    let parsed: Vec<_> = files
        .par_iter()
        .map(|path| -> Result<_> {
            let rel = path.strip_prefix(&a.chat_root).expect("found under root");
            let mut parts: Vec<String> = rel.with_extension("").iter().map(|p| p.to_string_lossy().into_owned()).collect();
            if parts.len() < 2 {
                return Err(input_err(format!("{}: CHAT files must sit inside a corpus directory", path.display())));
            }
            let corpus = parts.remove(0);
            let bytes = fs::read(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
            Ok(parse_chat_with(&bytes, &corpus, &parts.join("/"), pref))
        })
        .collect::<Result<_>>()?;
    let mut utts = Vec::new();
    let mut notices = Vec::new();
    for p in &parsed {
        utts.extend(p.utterances.iter().cloned());
        for n in &p.notices {
            notices.push(NoticeRecord {
                corpus_id: &p.file.corpus_id,
                file_id: &p.file.file_id,
                notice: n,
            });
        }
    }
    write_records(&a.out, &utts)?;
    if let Some(path) = &a.notices {
        write_records(path, &notices)?;
    }
    info!(files = files.len(), utterances = utts.len(), notices = notices.len(), "parsed");
    Ok(())
}

fn cmd_curate(a: &CurateArgs, inv: &TargetInventory) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => CurationConfig::from_toml(&read_text(p)?).map_err(input_err)?,
        None => CurationConfig::default(),
    };
    let utts: Vec<Utterance> = read_records(&a.input)?;
    let (kept, rejected) = curate(utts, &cfg, inv, FeatureTable::default_table());
    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    for r in &rejected {
        *reasons.entry(format!("{:?}", r.reason)).or_default() += 1;
    }
    write_records(&a.out, &kept)?;
    write_records(&a.rejects, &rejected)?;
    info!(kept = kept.len(), rejected = rejected.len(), reasons = ?reasons, "curated");
    Ok(())
}

fn cmd_qc_plan(a: &QcPlanArgs) -> Result<()> {
    let utts: Vec<Utterance> = read_records(&a.input)?;
    let mut plan = match &a.plan {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| input_err(format!("{}: {e}", p.display())))?,
        None => make_qc_plan(&utts, a.seed).map_err(input_err)?,
    };
    if !a.flagged.is_empty() {
        let flagged: BTreeSet<String> = a.flagged.iter().cloned().collect();
        add_second_pass(&mut plan, &utts, &flagged, a.seed);
    }
    write_file(&a.out, &serde_json::to_vec_pretty(&plan)?)?;
    info!(pass1 = plan.pass1.len(), pass2 = plan.pass2.len(), "qc plan");
    Ok(())
}

fn cmd_qc_apply(a: &QcApplyArgs) -> Result<()> {
    let utts: Vec<Utterance> = read_records(&a.input)?;
    let mut plan: QcPlan =
        serde_json::from_str(&read_text(&a.plan)?).map_err(|e| input_err(format!("{}: {e}", a.plan.display())))?;
    let verdicts = parse_verdicts_tsv(&read_text(&a.verdicts)?).map_err(input_err)?;
    apply_verdicts(&mut plan, &verdicts);
    let corpora: BTreeSet<String> = a.exclude_corpus.iter().cloned().collect();
    let (kept, dropped) = apply_exclusions(utts, &plan, &corpora);
    write_records(&a.out, &kept)?;
    if let Some(p) = &a.excluded {
        write_records(p, &dropped)?;
    }
    info!(kept = kept.len(), excluded = dropped.len(), "qc applied");
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => CurationConfig::from_toml(&read_text(p)?).map_err(input_err)?,
        None => CurationConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let utts: Vec<Utterance> = read_records(&a.input)?;
    let assign = make_split(&utts, &cfg).map_err(input_err)?;
    write_file(&a.out, assign.to_tsv().as_bytes())?;
    info!(
        children = assign.children.len(),
        train = assign.realized[0],
        valid = assign.realized[1],
        test = assign.realized[2],
        "split"
    );
    Ok(())
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let utts: Vec<Utterance> = read_records(&a.input)?;
    let report = corpus_stats(&utts);
    write_file(&a.tsv, report.to_tsv().as_bytes())?;
    write_file(&a.json, &serde_json::to_vec_pretty(&report)?)?;
    info!(corpora = report.corpora.len(), hours = report.total_hours, "stats");
    Ok(())
}

fn cmd_extract(a: &ExtractArgs) -> Result<()> {
    let utts: Vec<Utterance> = read_records(&a.manifest)?;
    let files: BTreeSet<(&str, &str)> = utts.iter().map(|u| (u.corpus_id.as_str(), u.file_id.as_str())).collect();
    let files: Vec<_> = files.into_iter().collect();
    let store = FeatureStore::Audio(a.audio.clone());
    files.par_iter().try_for_each(|(corpus, file)| -> Result<()> {
        let path = store.path_for(corpus, file);
        let (samples, sr) = read_wav(&path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        let m = extract_logmel(&samples, sr).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        let out = FeatureStore::Features(a.out.clone()).path_for(corpus, file);
        m.to_matrix().write(&out).with_context(|| format!("writing {}", out.display()))?;
        Ok(())
    })?;
    info!(files = files.len(), "features written");
    Ok(())
}

fn cmd_train(a: &TrainArgs, inv: &TargetInventory) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| input_err(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    cfg.context_sec = a.context_sec;
    if let Some(v) = a.max_steps {
        cfg.max_steps = v;
    }
    if let Some(v) = a.peak_lr {
        cfg.peak_lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.accum_steps {
        cfg.accum_steps = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = a.dropout {
        cfg.dropout = v;
    }
    cfg.validate().map_err(input_err)?;
    if a.seeds == 0 {
        bail!(input_err("--seeds must be at least 1"));
    }
    let store = store_from(&a.audio, &a.features)?;
    let source = match store {
        FeatureStore::Audio(_) => FeatureSource::Logmel,
        FeatureStore::Features(_) => FeatureSource::External,
    };
    let utts: Vec<Utterance> = read_records(&a.manifest)?;
    let splits = read_splits(&a.splits)?;
    let examples = load_examples_parallel(&utts, &splits, &store, cfg.context_sec, inv)?;
    let (train_set, rest): (Vec<_>, Vec<_>) = examples.into_iter().partition(|e| e.split == Split::Train);
    let valid_set: Vec<_> = rest.into_iter().filter(|e| e.split == Split::Valid).collect();
    info!(train = train_set.len(), valid = valid_set.len(), "examples loaded");
    fs::create_dir_all(&a.out)?;
    let runs: Vec<_> = (0..a.seeds)
        .into_par_iter()
        .map(|k| {
            let cfg = TrainConfig {
                seed: a.seed + k,
                ..cfg.clone()
            };
            let out = train(&train_set, &valid_set, inv.len(), &cfg).map_err(|e| match e {
                childphone::train::TrainError::DivergedLoss { .. } => anyhow::Error::new(e),
                other => input_err(other),
            })?;
            let meta = CheckpointMeta {
                shape: out.head.shape,
                dropout: out.head.dropout,
                inventory_version: inv.version().to_string(),
                feature_source: source,
                context_sec: cfg.context_sec,
                config: cfg.clone(),
                report: out.report.clone(),
            };
            save_checkpoint(&a.out.join(format!("seed{}", cfg.seed)), &out.head, &meta)?;
            info!(seed = cfg.seed, best_valid_per = out.report.best_valid_per, best_step = out.report.best_step, "seed done");
            Ok((out, meta))
        })
        .collect::<Result<_>>()?;
    let pers: Vec<f64> = runs.iter().map(|r| r.0.report.best_valid_per).collect();
    let (mean, sd) = mean_sd(&pers);
    let best = runs
        .iter()
        .min_by(|x, y| x.0.report.best_valid_per.total_cmp(&y.0.report.best_valid_per))
        .expect("at least one seed");
    save_checkpoint(&a.out.join("best"), &best.0.head, &best.1)?;
    let mut tsv = String::from("seed\tbest_valid_per\tbest_step\tbest_epoch\n");
    for (out, _) in &runs {
        let r = &out.report;
        tsv.push_str(&format!("{}\t{:.3}\t{}\t{}\n", r.seed, r.best_valid_per, r.best_step, r.best_epoch));
    }
    tsv.push_str(&format!("mean\t{mean:.3}\t\t\nsd\t{sd:.3}\t\t\n"));
    write_file(&a.out.join("summary.tsv"), tsv.as_bytes())?;
    let epochs: Vec<_> = runs.iter().map(|r| &r.0.report).collect();
    write_file(&a.out.join("reports.json"), &serde_json::to_vec_pretty(&epochs)?)?;
    info!(valid_per_mean = mean, valid_per_sd = sd, seeds = a.seeds, "training finished");
    Ok(())
}

/// Reads a stored grid and renormalizes rows that f32 storage left slightly off.
fn read_grid(path: &Path, vocab: usize) -> Result<PosteriorGrid> {
    let m = Matrix::read(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    if m.cols != vocab + 1 {
        return Err(input_err(format!("{}: {} columns, expected {}", path.display(), m.cols, vocab + 1)));
    }
    let mut probs = Vec::with_capacity(m.data.len());
    for r in 0..m.rows {
        let row: Vec<f64> = m.row(r).iter().map(|v| *v as f64).collect();
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-4 {
            return Err(input_err(format!("{}: row {r} sums to {s}", path.display())));
        }
        probs.extend(row.into_iter().map(|v| v / s));
    }
    PosteriorGrid::new(m.rows, vocab, probs).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn grid_matrix(grid: &PosteriorGrid) -> Matrix {
    Matrix::new(grid.frames(), grid.width(), grid.values().iter().map(|v| *v as f32).collect())
}

fn hypothesis(u: &Utterance, labels: &[usize], inv: &TargetInventory) -> Hypothesis {
    Hypothesis {
        utt_id: u.utt_id.clone(),
        child_id: u.child_id.clone(),
        age_months: u.age_months,
        language: u.language,
        corpus_id: u.corpus_id.clone(),
        phones: inv.symbols(labels),
    }
}

fn cmd_decode(a: &DecodeArgs, inv: &TargetInventory) -> Result<()> {
    let mut utts: Vec<Utterance> = read_records(&a.manifest)?;
    let splits = match &a.splits {
        Some(p) => Some(read_splits(p)?),
        None => None,
    };
    if let (Some(name), Some(map)) = (&a.split, &splits) {
        let want = Split::parse(name).ok_or_else(|| input_err(format!("unknown split {name:?}")))?;
        utts.retain(|u| map.get(&u.child_id) == Some(&want));
    }
    let by_id: BTreeMap<&str, &Utterance> = utts.iter().map(|u| (u.utt_id.as_str(), u)).collect();
    let mut hyps = Vec::new();
    if let Some(dir) = &a.grids {
        for u in &utts {
            let grid = read_grid(&dir.join(format!("{}.bin", u.utt_id)), inv.len())?;
            let labels = greedy_decode(&grid, None).map_err(input_err)?;
            hyps.push(hypothesis(u, &labels.0, inv));
        }
    } else {
        let ckpt = a.ckpt.as_ref().expect("clap requires ckpt or grids");
        let (head, meta) = load_checkpoint(ckpt).map_err(|e| input_err(format!("{}: {e}", ckpt.display())))?;
        if meta.inventory_version != inv.version() || head.shape.output != inv.len() + 1 {
            return Err(input_err(format!(
                "checkpoint was trained for inventory {}, current is {}",
                meta.inventory_version,
                inv.version()
            )));
        }
        let store = store_from(&a.audio, &a.features)?;
        // every utterance gets a placeholder split; decoding ignores it
        let all: BTreeMap<String, Split> = utts.iter().map(|u| (u.child_id.clone(), Split::Test)).collect();
        let examples = load_examples_parallel(&utts, splits.as_ref().unwrap_or(&all), &store, meta.context_sec, inv)?;
        let decoded: Vec<(String, Vec<usize>, Option<PosteriorGrid>)> = examples
            .par_iter()
            .map(|ex| {
                let labels = decode(&head, &ex.features, ex.mask.clone());
                let grid = (a.write_grids.is_some() && !ex.mask.is_empty())
                    .then(|| posteriors(&head, &ex.features, ex.mask.clone()));
                (ex.utt_id.clone(), labels, grid)
            })
            .collect();
        for (utt_id, labels, grid) in decoded {
            if let (Some(dir), Some(g)) = (&a.write_grids, grid) {
                grid_matrix(&g).write(&dir.join(format!("{utt_id}.bin")))?;
            }
            hyps.push(hypothesis(by_id[utt_id.as_str()], &labels, inv));
        }
    }
    write_records(&a.out, &hyps)?;
    info!(utterances = hyps.len(), "decoded");
    Ok(())
}

fn load_pairs(reference: &Path, hyp: &Path, inv: &TargetInventory) -> Result<Vec<childphone::evaluator::ScoredPair>> {
    let refs: Vec<Utterance> = read_records(reference)?;
    let hyps: Vec<Hypothesis> = read_records(hyp)?;
    join_pairs(&refs, &hyps, inv).map_err(input_err)
}

fn cmd_eval(a: &EvalArgs, inv: &TargetInventory) -> Result<()> {
    let pairs = load_pairs(&a.reference, &a.hyp, inv)?;
    let by = match a.by {
        ByArg::None => GroupBy::None,
        ByArg::Language => GroupBy::Language,
        ByArg::Corpus => GroupBy::Corpus,
        ByArg::AgeBin => GroupBy::AgeBin,
    };
    let report = corpus_per(&pairs, by);
    write_file(&a.out, report.to_tsv().as_bytes())?;
    if let Some(p) = &a.json {
        write_file(p, &serde_json::to_vec_pretty(&report)?)?;
    }
    for r in &report.rows {
        info!(group = %r.group, per = r.per, n = r.n, "per");
    }
    Ok(())
}

fn matrix_for(pairs: &[childphone::evaluator::ScoredPair], inv: &TargetInventory) -> childphone::evaluator::SubstitutionMatrix {
    let alignments: Vec<_> = pairs.par_iter().map(|p| align(&p.reference, &p.hypothesis)).collect();
    substitution_matrix(&alignments, inv.len())
}

fn cmd_confusion(a: &ConfusionArgs, inv: &TargetInventory) -> Result<()> {
    let pairs = load_pairs(&a.reference, &a.hyp, inv)?;
    let mx = matrix_for(&pairs, inv);
    let class = a.class.map(|c| match c {
        ClassArg::Vowel => PhoneClass::Vowel,
        ClassArg::Consonant => PhoneClass::Consonant,
    });
    write_file(&a.out, mx.to_csv(inv, class).as_bytes())?;
    for i in 0..inv.len() {
        if mx.support(i) > 0 {
            info!(top = %mx.describe_row(i, inv, 3), support = mx.support(i), "substitutions");
        }
    }
    Ok(())
}

fn cmd_categories(a: &PairArgs, inv: &TargetInventory) -> Result<()> {
    let pairs = load_pairs(&a.reference, &a.hyp, inv)?;
    let rates = category_rates(&matrix_for(&pairs, inv), inv);
    write_file(&a.out, category_rates_tsv(&rates).as_bytes())?;
    Ok(())
}

fn cmd_canonical(a: &CanonicalArgs, inv: &TargetInventory) -> Result<()> {
    let hyps: Vec<Hypothesis> = read_records(&a.hyp)?;
    let mut utts = Vec::new();
    let mut no_age = 0usize;
    for h in &hyps {
        let Some(age) = h.age_months else {
            no_age += 1;
            continue;
        };
        let labels: Vec<usize> = h
            .phones
            .iter()
            .map(|s| inv.index_of(s).ok_or_else(|| input_err(format!("{}: unknown phone {s:?}", h.utt_id))))
            .collect::<Result<_>>()?;
        utts.push(AgedUtterance {
            child_id: h.child_id.clone(),
            age_months: age,
            canonical: is_canonical(&labels, inv).map_err(input_err)?,
        });
    }
    if no_age > 0 {
        warn!(skipped = no_age, "utterances without age left out");
    }
    let report = trajectories(&utts, a.replicates, a.seed);
    write_file(&a.out, report.children_tsv().as_bytes())?;
    let group_path = a.group.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".group.tsv");
        PathBuf::from(p)
    });
    write_file(&group_path, report.group_tsv().as_bytes())?;
    if let Some(s) = group_slope(&report, a.replicates, a.seed) {
        info!(slope = s.slope, ci_lo = s.slope_ci.0, ci_hi = s.slope_ci.1, "canonical slope per month");
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthCorpusConfig {
        children_per_corpus: a.children,
        ..Default::default()
    };
    let c = write_synth_corpus(&a.out, &cfg, a.seed)?;
    info!(files = c.files.len(), utterances = c.utterances, chat = %c.chat_dir.display(), audio = %c.audio_dir.display(), "synthetic corpus");
    Ok(())
}

fn cmd_tokenize(a: &IpaArgs) -> Result<()> {
    let table = FeatureTable::default_table();
    let phones = table.tokenize(&a.ipa).map_err(input_err)?;
    let mut out = BufWriter::new(io::stdout().lock());
    for p in phones {
        let rec = serde_json::json!({"symbol": p.symbol(), "base": p.base, "features": p.features.to_string()});
        writeln!(out, "{rec}")?;
    }
    Ok(())
}

fn cmd_normalize(a: &IpaArgs, inv: &TargetInventory) -> Result<()> {
    let table = FeatureTable::default_table();
    let phones = table.tokenize(&a.ipa).map_err(input_err)?;
    let mut out = BufWriter::new(io::stdout().lock());
    for p in phones {
        let (idx, dist) = inv.map_to_target(&p, table);
        let rec = serde_json::json!({"input": p.symbol(), "target": inv.symbols(&[idx])[0], "distance": dist});
        writeln!(out, "{rec}")?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let owned;
    let inv: &TargetInventory = match &cli.inventory {
        Some(p) => {
            let version = p.file_stem().map_or_else(|| "custom".into(), |s| s.to_string_lossy().into_owned());
            owned = TargetInventory::parse(&read_text(p)?, FeatureTable::default_table(), &version).map_err(input_err)?;
            &owned
        }
        None => TargetInventory::default_inventory(),
    };
    let (name, out): (&str, Option<&Path>) = match &cli.command {
        Command::Tokenize(_) => ("tokenize", None),
        Command::Normalize(_) => ("normalize", None),
        Command::Parse(a) => ("parse", Some(&a.out)),
        Command::Curate(a) => ("curate", Some(&a.out)),
        Command::QcPlan(a) => ("qc-plan", Some(&a.out)),
        Command::QcApply(a) => ("qc-apply", Some(&a.out)),
        Command::Split(a) => ("split", Some(&a.out)),
        Command::Stats(a) => ("stats", Some(&a.tsv)),
        Command::ExtractFeatures(a) => ("extract-features", Some(&a.out)),
        Command::Train(a) => ("train", Some(&a.out)),
        Command::Decode(a) => ("decode", Some(&a.out)),
        Command::Eval(a) => ("eval", Some(&a.out)),
        Command::Confusion(a) => ("confusion", Some(&a.out)),
        Command::Categories(a) => ("categories", Some(&a.out)),
        Command::Canonical(a) => ("canonical", Some(&a.out)),
        Command::SynthCorpus(a) => ("synth-corpus", Some(&a.out)),
    };
    info!(subcommand = name, "start");
    match &cli.command {
        Command::Tokenize(a) => cmd_tokenize(a)?,
        Command::Normalize(a) => cmd_normalize(a, inv)?,
        Command::Parse(a) => cmd_parse(a)?,
        Command::Curate(a) => cmd_curate(a, inv)?,
        Command::QcPlan(a) => cmd_qc_plan(a)?,
        Command::QcApply(a) => cmd_qc_apply(a)?,
        Command::Split(a) => cmd_split(a)?,
        Command::Stats(a) => cmd_stats(a)?,
        Command::ExtractFeatures(a) => cmd_extract(a)?,
        Command::Train(a) => cmd_train(a, inv)?,
        Command::Decode(a) => cmd_decode(a, inv)?,
        Command::Eval(a) => cmd_eval(a, inv)?,
        Command::Confusion(a) => cmd_confusion(a, inv)?,
        Command::Categories(a) => cmd_categories(a, inv)?,
        Command::Canonical(a) => cmd_canonical(a, inv)?,
        Command::SynthCorpus(a) => cmd_synth(a)?,
    }
    if let Some(out) = out {
        write_echo(out, name, &cli.command, cli, inv)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log_level).unwrap_or_else(|_| "info".into());
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let input = e.downcast_ref::<InputError>().is_some();
            tracing::error!(error = %format!("{e:#}"), kind = if input { "input" } else { "internal" }, "failed");
            eprintln!("error: {e:#}");
            ExitCode::from(if input { 1 } else { 2 })
        }
    }
}
