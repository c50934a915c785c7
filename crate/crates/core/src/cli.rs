//! The `sentprobe` command line.
//!
//! Every command that writes files takes `--out <dir>` and leaves a
//! `manifest.json` there. Re-running a command whose output directory
//! already holds a manifest does nothing unless `--force` is given.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embedding::{self, EmbeddingMeta, EmbeddingSet, SignalSpec};
use crate::labels::{self, ExtractConfig, ProbingExample, TaskKind};
use crate::perturb::{self, PerturbConfig, PerturbationKind, Phrase};
use crate::probe::{self, ProbeConfig, ProbeResult};
use crate::robustness::{self, Dimension, EQUAL_THRESHOLD};
use crate::seed::{sha256, sha256_hex};
use crate::ssf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

pub const MANIFEST: &str = "manifest.json";
pub const PHRASES: &str = "phrases.jsonl";
pub const RESULTS: &str = "results.csv";

#[derive(Debug, Parser)]
#[command(name = "sentprobe", version, about = "Probing datasets, perturbations, linear probes and robustness tables")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Master seed; every stage derives its own streams from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Overwrite outputs even when a manifest is already present.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check SSF files and print one JSON line per error.
    Validate(ValidateArgs),
    /// Derive probing datasets from SSF files.
    BuildDataset(BuildArgs),
    /// Apply text perturbations to a dataset directory.
    Perturb(PerturbArgs),
    /// Write synthetic `.prbemb` embeddings for datasets.
    FixtureEmbed(FixtureArgs),
    /// Train layer-wise probes over embeddings.
    Probe(ProbeArgs),
    /// Robustness tables and most-affected-layer summaries.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    /// Comma separated task names (default: all eight).
    #[arg(long)]
    pub tasks: Option<String>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    pub dataset_dir: PathBuf,
    /// Comma separated perturbation names (default: all thirteen).
    #[arg(long)]
    pub kinds: Option<String>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Dataset files or directories of them.
    #[arg(required = true)]
    pub datasets: Vec<PathBuf>,
    /// Number of layers.
    #[arg(long, default_value = "13")]
    pub layers: String,
    #[arg(long, default_value_t = 64)]
    pub dim: u16,
    #[arg(long, default_value = "fixture")]
    pub model: String,
    /// Planted signal as `STRENGTH@LAYER[,LAYER...]`, e.g. `5@7`.
    #[arg(long)]
    pub signal: Option<String>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Dataset files or directories.
    #[arg(long = "datasets", required = true, num_args = 1..)]
    pub datasets: Vec<PathBuf>,
    /// Embedding files or directories; paired with datasets by digest.
    #[arg(long = "embeddings", required = true, num_args = 1..)]
    pub embeddings: Vec<PathBuf>,
    /// Layers to probe: `all`, `3`, `0-12` or `1,4,7`.
    #[arg(long, default_value = "all")]
    pub layers: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub results: Vec<PathBuf>,
    /// Comma separated dimensions for one table; repeat for more tables.
    #[arg(long = "group-by")]
    pub group_by: Vec<String>,
    /// Layers listed per (task, language) in the layer summary.
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub top_k: Option<usize>,
    pub equal_threshold: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            top_k: None,
            equal_threshold: EQUAL_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub extract: ExtractConfig,
    pub perturb: PerturbConfig,
    pub probe: ProbeConfig,
    pub report: ReportConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e == "json");
        Config::parse(&text, json).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Parses TOML, or JSON when `json` is set.
    pub fn parse(text: &str, json: bool) -> Result<Config, String> {
        if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::internal(e.to_string())
    }
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written to every output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub seed: u64,
    pub tool_version: String,
    pub timestamp_unix: u64,
    pub outputs: Vec<String>,
    pub notes: serde_json::Value,
}

/// Runs the CLI on `args` (including the program name), writing normal
/// output to `stdout`, and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let ctx = Context { cli, config, seed };
    match &cli.command {
        Command::Validate(a) => cmd_validate(&ctx, a, stdout),
        Command::BuildDataset(a) => cmd_build_dataset(&ctx, a, stdout),
        Command::Perturb(a) => cmd_perturb(&ctx, a, stdout),
        Command::FixtureEmbed(a) => cmd_fixture_embed(&ctx, a, stdout),
        Command::Probe(a) => cmd_probe(&ctx, a, stdout),
        Command::Report(a) => cmd_report(&ctx, a, stdout),
    }
}

struct Context<'a> {
    cli: &'a Cli,
    config: Config,
    seed: u64,
}

impl Context<'_> {
    fn out_dir(&self) -> Result<&Path, CliError> {
        self.cli
            .out
            .as_deref()
            .ok_or_else(|| CliError::config("--out <dir> is required"))
    }

    /// Creates the output directory; `false` means the run is already done.
    fn prepare_out(&self, stdout: &mut dyn Write) -> Result<Option<PathBuf>, CliError> {
        let out = self.out_dir()?.to_path_buf();
        if out.join(MANIFEST).exists() && !self.cli.force {
            writeln!(stdout, "{} is up to date (use --force to rebuild)", out.display())?;
            return Ok(None);
        }
        fs::create_dir_all(&out)?;
        Ok(Some(out))
    }

    fn write_manifest(
        &self,
        out: &Path,
        command: &str,
        config: serde_json::Value,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        notes: serde_json::Value,
    ) -> Result<(), CliError> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.display().to_string(),
                    sha256: sha256_hex(&fs::read(p)?),
                })
            })
            .collect::<Result<Vec<_>, io::Error>>()?;
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            inputs,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            outputs: outputs
                .iter()
                .map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string())
                .collect(),
            notes,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::internal(e.to_string()))?;
        text.push('\n');
        fs::write(out.join(MANIFEST), text)?;
        Ok(())
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn write_json_file<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn parse_list<T: std::str::FromStr<Err = String>>(spec: Option<&str>, all: &[T]) -> Result<BTreeSet<T>, CliError>
where
    T: Ord + Copy,
{
    match spec {
        None => Ok(all.iter().copied().collect()),
        Some(s) => s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse::<T>().map_err(CliError::config))
            .collect(),
    }
}

/// Files under `root` (or `root` itself) with the given extension, sorted.
fn collect_files(root: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    if !root.is_dir() {
        return Err(CliError::config(format!("{} does not exist", root.display())));
    }
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == ext) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn dataset_files(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    Ok(collect_files(root, "jsonl")?
        .into_iter()
        .filter(|p| p.file_name().is_some_and(|n| n != PHRASES))
        .collect())
}

fn read_dataset(path: &Path) -> Result<(Vec<u8>, Vec<ProbingExample>), CliError> {
    let bytes = fs::read(path)?;
    let examples = labels::read_jsonl(&bytes[..])
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    Ok((bytes, examples))
}

fn cmd_validate(ctx: &Context<'_>, args: &ValidateArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let mut failed = false;
    let mut lines = Vec::new();
    for path in &args.paths {
        let file = path.display().to_string();
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) => {
                failed = true;
                lines.push(json!({"file": file, "sentence_id": null, "error": format!("Io: {e}"), "line": null}));
                continue;
            }
        };
        let (sentences, errors) = match std::str::from_utf8(&bytes) {
            Ok(text) => ssf::validate(text),
            Err(_) => (Vec::new(), vec![ssf::parse_bytes(&bytes).expect_err("invalid utf-8")]),
        };
        for e in &errors {
            lines.push(json!({
                "file": file,
                "sentence_id": e.sentence_id,
                "error": format!("{}: {}", e.kind.code(), e.kind),
                "line": e.line,
                "column": e.column,
            }));
        }
        failed |= !errors.is_empty();
        lines.push(json!({
            "file": file,
            "status": if errors.is_empty() { "ok" } else { "invalid" },
            "sentences": sentences.len(),
            "errors": errors.len(),
        }));
    }
    for l in &lines {
        writeln!(stdout, "{l}")?;
    }
    if let Some(out) = &ctx.cli.out {
        fs::create_dir_all(out)?;
        let report = out.join("validate.jsonl");
        let mut f = fs::File::create(&report)?;
        for l in &lines {
            writeln!(f, "{l}")?;
        }
        ctx.write_manifest(out, "validate", json!({}), &args.paths, &[report], json!({ "failed": failed }))?;
    }
    Ok(if failed { EXIT_VALIDATION } else { EXIT_OK })
}

fn cmd_build_dataset(ctx: &Context<'_>, args: &BuildArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let tasks = parse_list(args.tasks.as_deref(), &TaskKind::ALL)?;
    let Some(out) = ctx.prepare_out(stdout)? else {
        return Ok(EXIT_OK);
    };
    let cfg = &ctx.config.extract;

    let mut docs = Vec::new();
    let mut errors = Vec::new();
    for path in &args.paths {
        let bytes = fs::read(path)?;
        match ssf::parse_bytes(&bytes) {
            Ok(mut doc) => {
                doc.source_path = path.display().to_string();
                docs.push(doc);
            }
            Err(e) => errors.push(json!({
                "file": path.display().to_string(),
                "sentence_id": e.sentence_id,
                "error": format!("{}: {}", e.kind.code(), e.kind),
                "line": e.line,
            })),
        }
    }
    if !errors.is_empty() {
        for e in &errors {
            eprintln!("{e}");
        }
        return Err(CliError::validation(format!("{} input file(s) failed to parse", errors.len())));
    }

    let mut dataset = labels::Dataset::default();
    let mut phrases: Vec<Phrase> = Vec::new();
    let mut seen_keys = BTreeSet::new();
    for doc in &docs {
        for s in &doc.sentences {
            let key = labels::sentence_key(doc, s);
            if !seen_keys.insert(key.clone()) {
                return Err(CliError::validation(format!("duplicate example id `{key}` across inputs")));
            }
        }
        dataset.merge(labels::build_dataset(doc, &tasks, ctx.seed, cfg));
        phrases.extend(perturb::phrase_pool(doc));
    }

    let mut outputs = Vec::new();
    for (task, examples) in &dataset.examples {
        let path = out.join(format!("{task}.jsonl"));
        let mut w = io::BufWriter::new(fs::File::create(&path)?);
        labels::write_jsonl(&mut w, examples)?;
        w.flush()?;
        outputs.push(path);
        let stats_path = out.join(format!("{task}.stats.json"));
        write_json_file(&stats_path, &dataset.stats[task])?;
        outputs.push(stats_path);
        writeln!(stdout, "{task}: {} examples", examples.len())?;
    }
    let phrases_path = out.join(PHRASES);
    let mut w = io::BufWriter::new(fs::File::create(&phrases_path)?);
    for p in &phrases {
        serde_json::to_writer(&mut w, p).map_err(|e| CliError::internal(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    outputs.push(phrases_path);

    let tasks_json: Vec<String> = tasks.iter().map(ToString::to_string).collect();
    ctx.write_manifest(
        &out,
        "build-dataset",
        json!({ "tasks": tasks_json, "extract": to_json(cfg) }),
        &args.paths,
        &outputs,
        to_json(&dataset.stats.values().collect::<Vec<_>>()),
    )?;
    Ok(EXIT_OK)
}

fn cmd_perturb(ctx: &Context<'_>, args: &PerturbArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let kinds = parse_list(args.kinds.as_deref(), &PerturbationKind::ALL)?;
    let cfg = &ctx.config.perturb;
    perturb::PosClassifier::from_config(cfg).map_err(|e| CliError::config(e.to_string()))?;
    let Some(out) = ctx.prepare_out(stdout)? else {
        return Ok(EXIT_OK);
    };

    let phrases_path = args.dataset_dir.join(PHRASES);
    let phrases: Vec<Phrase> = match fs::read_to_string(&phrases_path) {
        Ok(text) => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::validation(format!("{}: {e}", phrases_path.display())))?,
        Err(_) => {
            warn!("{} not found; AppendR will skip every example", phrases_path.display());
            Vec::new()
        }
    };

    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut all_stats = BTreeMap::new();
    for path in dataset_files(&args.dataset_dir)? {
        let (_, examples) = read_dataset(&path)?;
        if examples.iter().all(|e| e.task == TaskKind::BShift) {
            info!("skipping {} (BShift is not perturbed)", path.display());
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        inputs.push(path.clone());
        let result = perturb::perturb_dataset(&examples, &kinds, cfg, &phrases, ctx.seed)
            .map_err(|e| CliError::config(e.to_string()))?;
        for (kind, list) in &result.by_kind {
            let dir = out.join(kind.name());
            fs::create_dir_all(&dir)?;
            let file = dir.join(format!("{stem}.jsonl"));
            let mut w = io::BufWriter::new(fs::File::create(&file)?);
            labels::write_jsonl(&mut w, list)?;
            w.flush()?;
            let stats_file = dir.join(format!("{stem}.stats.json"));
            write_json_file(&stats_file, &result.stats[kind])?;
            outputs.push(file);
            outputs.push(stats_file);
            all_stats.insert(format!("{kind}/{stem}"), result.stats[kind].clone());
            writeln!(stdout, "{kind}/{stem}: {} of {} examples", list.len(), examples.len())?;
        }
    }
    if phrases_path.exists() {
        inputs.push(phrases_path);
    }
    let kinds_json: Vec<String> = kinds.iter().map(ToString::to_string).collect();
    ctx.write_manifest(
        &out,
        "perturb",
        json!({ "kinds": kinds_json, "perturb": to_json(cfg) }),
        &inputs,
        &outputs,
        to_json(&all_stats),
    )?;
    Ok(EXIT_OK)
}

fn parse_signal(spec: &str) -> Result<SignalSpec, CliError> {
    let bad = || CliError::config(format!("invalid --signal `{spec}`, expected STRENGTH@LAYER[,LAYER...]"));
    let (strength, layers) = spec.split_once('@').ok_or_else(bad)?;
    let strength: f64 = strength.trim().parse().map_err(|_| bad())?;
    if !strength.is_finite() {
        return Err(bad());
    }
    let layers = layers
        .split(',')
        .map(|l| l.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SignalSpec { strength, layers })
}

fn cmd_fixture_embed(ctx: &Context<'_>, args: &FixtureArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let n_layers: u16 = args
        .layers
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config("--layers must be a positive layer count"))?;
    if args.dim == 0 {
        return Err(CliError::config("--dim must be positive"));
    }
    let signal = args.signal.as_deref().map(parse_signal).transpose()?;
    let Some(out) = ctx.prepare_out(stdout)? else {
        return Ok(EXIT_OK);
    };

    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for root in &args.datasets {
        let base = if root.is_dir() { root.as_path() } else { root.parent().unwrap_or(Path::new("")) };
        let prefix = if args.datasets.len() > 1 {
            root.file_name().map(PathBuf::from).unwrap_or_default()
        } else {
            PathBuf::new()
        };
        for path in dataset_files(root)? {
            let (bytes, examples) = read_dataset(&path)?;
            if examples.is_empty() {
                info!("skipping empty dataset {}", path.display());
                continue;
            }
            let rel = path.strip_prefix(base).unwrap_or(&path);
            let target = if root.is_dir() { out.join(&prefix).join(rel) } else { out.join(rel) }.with_extension("prbemb");
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent)?;
            }
            let set = embedding::generate_fixture(
                &examples,
                &args.model,
                sha256(&bytes),
                n_layers,
                args.dim,
                ctx.seed,
                signal.as_ref(),
            )
            .map_err(|e| CliError::config(e.to_string()))?;
            let mut meta = EmbeddingMeta::for_set(&set);
            meta.extra.insert("generator".into(), json!("fixture"));
            meta.extra.insert("seed".into(), json!(ctx.seed));
            meta.extra.insert("dataset_path".into(), json!(path.display().to_string()));
            if let Some(sig) = &signal {
                meta.extra.insert("signal".into(), json!({"strength": sig.strength, "layers": sig.layers}));
            }
            embedding::write(&set, &target, &meta).map_err(|e| CliError::internal(e.to_string()))?;
            writeln!(stdout, "{} -> {}", path.display(), target.display())?;
            inputs.push(path);
            outputs.push(target.clone());
            outputs.push(embedding::meta_path(&target));
        }
    }
    ctx.write_manifest(
        &out,
        "fixture-embed",
        json!({ "layers": n_layers, "dim": args.dim, "model": args.model, "signal": args.signal }),
        &inputs,
        &outputs,
        json!({}),
    )?;
    Ok(EXIT_OK)
}

fn parse_layers(spec: &str, n_layers: usize) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::config(format!("invalid --layers `{spec}`"));
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok((0..n_layers).collect());
    }
    let mut out = BTreeSet::new();
    for part in spec.split(',') {
        let part = part.trim();
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => {
                out.insert(part.parse().map_err(|_| bad())?);
            }
        }
    }
    Ok(out.into_iter().filter(|&l| l < n_layers).collect())
}

fn cmd_probe(ctx: &Context<'_>, args: &ProbeArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let mut cfg = ctx.config.probe.clone();
    if let Some(seed) = ctx.cli.seed {
        cfg.seed = seed;
    }
    cfg.check().map_err(|e| CliError::config(e.to_string()))?;
    let Some(out) = ctx.prepare_out(stdout)? else {
        return Ok(EXIT_OK);
    };

    let mut datasets: BTreeMap<[u8; 32], (PathBuf, Vec<ProbingExample>)> = BTreeMap::new();
    for root in &args.datasets {
        for path in dataset_files(root)? {
            let (bytes, examples) = read_dataset(&path)?;
            datasets.entry(sha256(&bytes)).or_insert((path, examples));
        }
    }
    let mut embedding_paths = Vec::new();
    for root in &args.embeddings {
        embedding_paths.extend(collect_files(root, "prbemb")?);
    }

    let mut sets: Vec<(PathBuf, EmbeddingSet, [u8; 32])> = Vec::new();
    for path in &embedding_paths {
        let set = embedding::read(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let digest = set.header.dataset_digest;
        if !datasets.contains_key(&digest) {
            warn!("{} matches no dataset (digest {})", path.display(), set.digest_hex());
            continue;
        }
        sets.push((path.clone(), set, digest));
    }
    if sets.is_empty() {
        return Err(CliError::validation("no embedding file matches any dataset"));
    }

    struct Job<'a> {
        set: &'a EmbeddingSet,
        examples: Vec<ProbingExample>,
        layer: usize,
    }
    let mut jobs = Vec::new();
    for (_, set, digest) in &sets {
        let (_, examples) = &datasets[digest];
        let mut groups: BTreeMap<(TaskKind, String), Vec<ProbingExample>> = BTreeMap::new();
        for e in examples {
            groups.entry((e.task, e.lang.clone())).or_default().push(e.clone());
        }
        let layers = parse_layers(&args.layers, set.n_layers())?;
        for group in groups.into_values() {
            for &layer in &layers {
                jobs.push(Job {
                    set,
                    examples: group.clone(),
                    layer,
                });
            }
        }
    }

    let outcomes: Vec<Result<ProbeResult, String>> = jobs
        .par_iter()
        .map(|job| {
            probe::run_probe(job.set, &job.examples, job.layer, &cfg).map_err(|e| {
                let ex = &job.examples[0];
                format!(
                    "{} {} {} layer {} ({}): {e}",
                    ex.task,
                    ex.lang,
                    job.set.header.model_name,
                    job.layer,
                    ex.perturbation.map_or("clean".to_string(), |k| k.to_string())
                )
            })
        })
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(msg) => {
                warn!("probe failed: {msg}");
                failures.push(msg);
            }
        }
    }
    results.sort_by(|a, b| {
        (&a.task, &a.model_name, &a.language, &a.variant, a.layer).cmp(&(
            &b.task,
            &b.model_name,
            &b.language,
            &b.variant,
            b.layer,
        ))
    });
    failures.sort();
    failures.dedup();

    let results_path = out.join(RESULTS);
    let mut w = io::BufWriter::new(fs::File::create(&results_path)?);
    probe::write_results_csv(&mut w, &results).map_err(|e| CliError::internal(e.to_string()))?;
    w.flush()?;
    writeln!(stdout, "{} probe results, {} failures -> {}", results.len(), failures.len(), results_path.display())?;

    let mut inputs: Vec<PathBuf> = sets.iter().map(|(p, _, _)| p.clone()).collect();
    inputs.extend(sets.iter().map(|(_, _, d)| datasets[d].0.clone()));
    inputs.sort();
    inputs.dedup();
    ctx.write_manifest(
        &out,
        "probe",
        json!({ "probe": to_json(&cfg), "layers": args.layers }),
        &inputs,
        &[results_path],
        json!({ "failures": failures }),
    )?;
    if results.is_empty() {
        return Err(CliError::validation("every probe failed"));
    }
    Ok(EXIT_OK)
}

/// Table layouts produced when no `--group-by` is given.
pub const DEFAULT_TABLES: [[Dimension; 2]; 6] = [
    [Dimension::Perturbation, Dimension::Model],
    [Dimension::Language, Dimension::Model],
    [Dimension::Task, Dimension::Language],
    [Dimension::Task, Dimension::Model],
    [Dimension::Perturbation, Dimension::Language],
    [Dimension::Perturbation, Dimension::Task],
];

fn cmd_report(ctx: &Context<'_>, args: &ReportArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let tables: Vec<Vec<Dimension>> = if args.group_by.is_empty() {
        DEFAULT_TABLES.iter().map(|t| t.to_vec()).collect()
    } else {
        args.group_by
            .iter()
            .map(|spec| {
                spec.split(',')
                    .map(|d| d.parse::<Dimension>().map_err(|e| CliError::config(e.to_string())))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?
    };
    let report_cfg = &ctx.config.report;
    let top_k = report_cfg.top_k.unwrap_or(args.top_k);
    let Some(out) = ctx.prepare_out(stdout)? else {
        return Ok(EXIT_OK);
    };

    let mut results = Vec::new();
    for path in &args.results {
        let f = fs::File::open(path)?;
        results.extend(
            probe::read_results_csv(BufReader::new(f))
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?,
        );
    }
    let joined = robustness::join_results(&results).map_err(|e| CliError::validation(e.to_string()))?;
    if joined.records.is_empty() {
        return Err(CliError::validation("no perturbed results could be paired with clean results"));
    }

    let mut outputs = Vec::new();
    let records_path = out.join("records.csv");
    {
        let mut w = csv::Writer::from_path(&records_path).map_err(|e| CliError::internal(e.to_string()))?;
        for r in &joined.records {
            w.serialize(r).map_err(|e| CliError::internal(e.to_string()))?;
        }
        w.flush()?;
    }
    outputs.push(records_path);

    for dims in &tables {
        let table = robustness::aggregate(&joined.records, dims).map_err(|e| CliError::validation(e.to_string()))?;
        let name: Vec<&str> = dims.iter().map(|d| d.name()).collect();
        let stem = format!("robustness_{}", name.join("_"));
        let csv_path = out.join(format!("{stem}.csv"));
        table
            .write_csv(fs::File::create(&csv_path)?)
            .map_err(|e| CliError::internal(e.to_string()))?;
        outputs.push(csv_path);
        if dims.len() == 2 {
            let png = out.join(format!("{stem}.png"));
            table.write_heatmap_png(&png).map_err(|e| CliError::internal(e.to_string()))?;
            outputs.push(png);
        }
        writeln!(stdout, "{stem}: {} cells", table.cells.len())?;
    }

    let summary_path = out.join("most_affected_layers.csv");
    {
        let mut w = csv::Writer::from_path(&summary_path).map_err(|e| CliError::internal(e.to_string()))?;
        w.write_record(["task", "language", "most_affected_layers"])
            .map_err(|e| CliError::internal(e.to_string()))?;
        for ((task, lang), ranking) in robustness::layerwise_summary(&joined.records, top_k, report_cfg.equal_threshold) {
            let cell = ranking.map_or_else(|_| "-".to_string(), |r| r.to_string());
            w.write_record([task, lang, cell]).map_err(|e| CliError::internal(e.to_string()))?;
        }
        w.flush()?;
    }
    outputs.push(summary_path);

    let dims_json: Vec<Vec<&str>> = tables.iter().map(|t| t.iter().map(|d| d.name()).collect()).collect();
    ctx.write_manifest(
        &out,
        "report",
        json!({ "group_by": dims_json, "top_k": top_k, "equal_threshold": report_cfg.equal_threshold }),
        &args.results,
        &outputs,
        json!({ "records": joined.records.len(), "undefined_zero_clean": joined.undefined, "unmatched": joined.unmatched }),
    )?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_specs() {
        assert_eq!(parse_layers("all", 3).unwrap(), [0, 1, 2]);
        assert_eq!(parse_layers("1,4-6", 13).unwrap(), [1, 4, 5, 6]);
        assert_eq!(parse_layers("10-20", 13).unwrap(), [10, 11, 12]);
        assert!(parse_layers("x", 13).is_err());
        assert!(parse_layers("5-2", 13).is_err());
    }

    #[test]
    fn signal_specs() {
        assert_eq!(
            parse_signal("5@7").unwrap(),
            SignalSpec { strength: 5.0, layers: vec![7] }
        );
        assert_eq!(parse_signal("2.5@1,2").unwrap().layers, [1, 2]);
        assert!(parse_signal("5").is_err());
        assert!(parse_signal("x@1").is_err());
    }

    #[test]
    fn config_round_trip_toml() {
        let text = toml::to_string(&Config::default()).unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, Config::default());
        let partial: Config = toml::from_str("[probe]\nc_inverse_reg = 1.0\nfolds = 3\n").unwrap();
        assert_eq!(partial.probe.folds, 3);
        assert_eq!(partial.probe.max_iterations, 1000);
        assert!(toml::from_str::<Config>("[probe]\nbogus = 1\n").is_err());
    }
}
