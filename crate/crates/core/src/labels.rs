//! Probing-task datasets derived from parsed SSF sentences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perturb::PerturbationKind;
use crate::seed;
use crate::ssf::{SsfDocument, SsfSentence, TreeError};

/// A (surface form, POS tag) pair.
pub type Token = (String, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    SentLen,
    TreeDepth,
    BShift,
    SubjNum,
    ObjNum,
    VerbGen,
    VerbNum,
    VerbPer,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::SentLen,
        TaskKind::TreeDepth,
        TaskKind::BShift,
        TaskKind::SubjNum,
        TaskKind::ObjNum,
        TaskKind::VerbGen,
        TaskKind::VerbNum,
        TaskKind::VerbPer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SentLen => "SentLen",
            TaskKind::TreeDepth => "TreeDepth",
            TaskKind::BShift => "BShift",
            TaskKind::SubjNum => "SubjNum",
            TaskKind::ObjNum => "ObjNum",
            TaskKind::VerbGen => "VerbGen",
            TaskKind::VerbNum => "VerbNum",
            TaskKind::VerbPer => "VerbPer",
        }
    }

    pub fn label_names(self) -> &'static [&'static str] {
        match self {
            TaskKind::SentLen => &[
                "(0-5)", "(6-8)", "(9-12)", "(13-16)", "(17-20)", "(21-25)", "(26-28)", "(29-32)",
            ],
            TaskKind::TreeDepth => &["(0-2)", "(3-5)", "(6-8)", "(9-11)", "(12-20)"],
            TaskKind::BShift => &["0", "1"],
            TaskKind::SubjNum | TaskKind::ObjNum => &["singular", "plural"],
            TaskKind::VerbGen => &["masculine", "feminine", "neutral", "any"],
            TaskKind::VerbNum => &["singular", "plural", "any"],
            TaskKind::VerbPer => &[
                "1st person",
                "2nd person",
                "3rd person",
                "1st person honorific",
                "2nd person honorific",
                "3rd person honorific",
                "any",
            ],
        }
    }

    pub fn class_count(self) -> usize {
        self.label_names().len()
    }

    pub fn label_index(self, name: &str) -> Option<usize> {
        self.label_names().iter().position(|&n| n == name)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

/// Inclusive integer ranges mapping a measured value to a class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinSpec {
    pub task: TaskKind,
    pub boundaries: Vec<(usize, usize)>,
}

impl BinSpec {
    pub fn sentlen() -> Self {
        BinSpec {
            task: TaskKind::SentLen,
            boundaries: vec![(0, 5), (6, 8), (9, 12), (13, 16), (17, 20), (21, 25), (26, 28), (29, 32)],
        }
    }

    pub fn treedepth() -> Self {
        BinSpec {
            task: TaskKind::TreeDepth,
            boundaries: vec![(0, 2), (3, 5), (6, 8), (9, 11), (12, 20)],
        }
    }

    pub fn domain(&self) -> (usize, usize) {
        (self.boundaries[0].0, self.boundaries[self.boundaries.len() - 1].1)
    }

    pub fn bin_of(&self, value: usize) -> Option<usize> {
        self.boundaries.iter().position(|&(lo, hi)| lo <= value && value <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbingExample {
    pub id: String,
    pub lang: String,
    pub task: TaskKind,
    pub tokens: Vec<Token>,
    pub label: usize,
    pub label_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationKind>,
}

impl ProbingExample {
    pub fn new(id: &str, lang: &str, task: TaskKind, tokens: Vec<Token>, label: usize) -> Self {
        ProbingExample {
            id: id.to_string(),
            lang: lang.to_string(),
            task,
            tokens,
            label,
            label_name: task.label_names()[label].to_string(),
            perturbation: None,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.tokens.is_empty() {
            return Err("tokens are empty".into());
        }
        match self.task.label_names().get(self.label) {
            None => Err(format!(
                "label {} out of range for {} ({} classes)",
                self.label,
                self.task,
                self.task.class_count()
            )),
            Some(&name) if name != self.label_name => {
                Err(format!("label_name `{}` does not match label {}", self.label_name, self.label))
            }
            _ => Ok(()),
        }
    }
}

/// Why a sentence produced no example for a task.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Skip {
    #[error("sentence has no words")]
    EmptySentence,
    #[error("value {0} lies outside the binning domain")]
    OutOfRange(usize),
    #[error("dependency tree: {0}")]
    Tree(#[from] TreeError),
    #[error("sentence has fewer than two words")]
    SentenceTooShort,
    #[error("no main verb chunk")]
    NoMainVerb,
    #[error("main verb chunk has no name to attach arguments to")]
    UnnamedVerbChunk,
    #[error("no argument chunk with the configured relation")]
    NoArgument,
    #[error("argument chunk head is not a noun")]
    NoNounHead,
    #[error("no number evidence on the argument head")]
    NoNumberEvidence,
    #[error("morph slot is empty")]
    EmptySlot,
    #[error("unknown feature value `{0}`")]
    UnknownFeatureValue(String),
}

impl Skip {
    pub fn code(&self) -> &'static str {
        match self {
            Skip::EmptySentence => "EmptySentence",
            Skip::OutOfRange(_) => "OutOfRange",
            Skip::Tree(TreeError::NoRoot) => "NoRoot",
            Skip::Tree(TreeError::MultipleRoots(_)) => "MultipleRoots",
            Skip::Tree(TreeError::DanglingDrel(_)) => "DanglingDrel",
            Skip::Tree(TreeError::CycleDetected) => "CycleDetected",
            Skip::SentenceTooShort => "SentenceTooShort",
            Skip::NoMainVerb => "NoMainVerb",
            Skip::UnnamedVerbChunk => "UnnamedVerbChunk",
            Skip::NoArgument => "NoArgument",
            Skip::NoNounHead => "NoNounHead",
            Skip::NoNumberEvidence => "NoNumberEvidence",
            Skip::EmptySlot => "EmptySlot",
            Skip::UnknownFeatureValue(_) => "UnknownFeatureValue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgRole {
    Subject,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerbFeature {
    Gender,
    Number,
    Person,
}

impl VerbFeature {
    fn task(self) -> TaskKind {
        match self {
            VerbFeature::Gender => TaskKind::VerbGen,
            VerbFeature::Number => TaskKind::VerbNum,
            VerbFeature::Person => TaskKind::VerbPer,
        }
    }
}

/// Raw morph value → Table label name, per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphTable {
    pub gender: BTreeMap<String, String>,
    pub number: BTreeMap<String, String>,
    pub person: BTreeMap<String, String>,
}

impl Default for MorphTable {
    fn default() -> Self {
        let table = |pairs: &[(&str, &str)]| {
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect::<BTreeMap<_, _>>()
        };
        MorphTable {
            gender: table(&[("m", "masculine"), ("f", "feminine"), ("n", "neutral"), ("any", "any")]),
            number: table(&[("sg", "singular"), ("pl", "plural"), ("any", "any")]),
            person: table(&[
                ("1", "1st person"),
                ("2", "2nd person"),
                ("3", "3rd person"),
                ("1h", "1st person honorific"),
                ("2h", "2nd person honorific"),
                ("3h", "3rd person honorific"),
                ("any", "any"),
            ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    /// Language code; inferred from the file name (`hi_*.ssf`) when unset.
    pub language: Option<String>,
    pub verb_chunk_tag: String,
    pub subject_relation: String,
    pub object_relation: String,
    pub singular_pos_tag: String,
    pub plural_pos_tag: String,
    pub noun_tags: BTreeSet<String>,
    pub singular_marker: String,
    pub plural_marker: String,
    pub bshift_probability: f64,
    pub morph: MorphTable,
    /// Per-language replacements for `morph`.
    pub language_morph: BTreeMap<String, MorphTable>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            language: None,
            verb_chunk_tag: "VGF".into(),
            subject_relation: "k1".into(),
            object_relation: "k2".into(),
            singular_pos_tag: "NN".into(),
            plural_pos_tag: "NNS".into(),
            noun_tags: ["NN", "NNS", "NNP", "NNPC", "NNC"].into_iter().map(String::from).collect(),
            singular_marker: "sg".into(),
            plural_marker: "pl".into(),
            bshift_probability: 0.2,
            morph: MorphTable::default(),
            language_morph: BTreeMap::new(),
        }
    }
}

/// Extracts examples for one language under one configuration.
#[derive(Debug, Clone)]
pub struct Extractor<'a> {
    pub config: &'a ExtractConfig,
    pub language: String,
}

pub fn tokens_of(s: &SsfSentence) -> Vec<Token> {
    s.words().map(|w| (w.surface.clone(), w.pos_tag.clone())).collect()
}

impl<'a> Extractor<'a> {
    pub fn new(config: &'a ExtractConfig, language: impl Into<String>) -> Self {
        Extractor {
            config,
            language: language.into(),
        }
    }

    fn example(&self, id: &str, task: TaskKind, s: &SsfSentence, label: usize) -> Result<ProbingExample, Skip> {
        let tokens = tokens_of(s);
        if tokens.is_empty() {
            return Err(Skip::EmptySentence);
        }
        Ok(ProbingExample::new(id, &self.language, task, tokens, label))
    }

    pub fn extract_sentlen(&self, id: &str, s: &SsfSentence) -> Result<ProbingExample, Skip> {
        let count = s.word_count();
        let label = BinSpec::sentlen().bin_of(count).ok_or(Skip::OutOfRange(count))?;
        self.example(id, TaskKind::SentLen, s, label)
    }

    pub fn extract_treedepth(&self, id: &str, s: &SsfSentence) -> Result<ProbingExample, Skip> {
        let depth = s.dependency_edges()?.depth();
        let label = BinSpec::treedepth().bin_of(depth).ok_or(Skip::OutOfRange(depth))?;
        self.example(id, TaskKind::TreeDepth, s, label)
    }

    pub fn extract_arg_number(&self, id: &str, s: &SsfSentence, role: ArgRole) -> Result<ProbingExample, Skip> {
        let cfg = self.config;
        let (task, relation) = match role {
            ArgRole::Subject => (TaskKind::SubjNum, cfg.subject_relation.as_str()),
            ArgRole::Object => (TaskKind::ObjNum, cfg.object_relation.as_str()),
        };
        let verb = s.main_verb_chunk_with(&cfg.verb_chunk_tag).ok_or(Skip::NoMainVerb)?;
        let verb_name = verb.name().ok_or(Skip::UnnamedVerbChunk)?;
        let arg = s
            .chunks
            .iter()
            .find(|c| c.features.drel() == Some((relation, verb_name)))
            .ok_or(Skip::NoArgument)?;
        let head = arg.head_word().ok_or(Skip::NoNounHead)?;

        let label = if head.pos_tag == cfg.singular_pos_tag {
            0
        } else if head.pos_tag == cfg.plural_pos_tag {
            1
        } else if cfg.noun_tags.contains(&head.pos_tag) {
            let number = head.features.number.trim();
            if number == cfg.singular_marker {
                0
            } else if number == cfg.plural_marker {
                1
            } else {
                return Err(Skip::NoNumberEvidence);
            }
        } else {
            return Err(Skip::NoNounHead);
        };
        self.example(id, task, s, label)
    }

    pub fn extract_verb_feature(&self, id: &str, s: &SsfSentence, which: VerbFeature) -> Result<ProbingExample, Skip> {
        let verb = s
            .main_verb_chunk_with(&self.config.verb_chunk_tag)
            .ok_or(Skip::NoMainVerb)?;
        let head = verb.head_word().ok_or(Skip::NoMainVerb)?;
        let fs = &head.features;
        let morph = self
            .config
            .language_morph
            .get(&self.language)
            .unwrap_or(&self.config.morph);
        let (raw, table) = match which {
            VerbFeature::Gender => (&fs.gender, &morph.gender),
            VerbFeature::Number => (&fs.number, &morph.number),
            VerbFeature::Person => (&fs.person, &morph.person),
        };
        let raw = raw.trim();
        if raw.is_empty() {
            return Err(Skip::EmptySlot);
        }
        let task = which.task();
        let label = table
            .get(&raw.to_lowercase())
            .and_then(|name| task.label_index(name))
            .ok_or_else(|| Skip::UnknownFeatureValue(raw.to_string()))?;
        self.example(id, task, s, label)
    }

    /// Label 1 examples carry one adjacent pair swapped; the stream for
    /// each sentence is keyed by its id.
    pub fn generate_bshift(&self, id: &str, s: &SsfSentence, seed: u64) -> Result<ProbingExample, Skip> {
        let mut tokens = tokens_of(s);
        if tokens.len() < 2 {
            return Err(Skip::SentenceTooShort);
        }
        let mut rng = seed::stream(seed, "bshift", id);
        let selected = seed::unit_f64(&mut rng) < self.config.bshift_probability;
        let label = if selected {
            let i = seed::index(&mut rng, tokens.len() - 1);
            tokens.swap(i, i + 1);
            1
        } else {
            0
        };
        Ok(ProbingExample::new(id, &self.language, TaskKind::BShift, tokens, label))
    }

    pub fn extract(&self, task: TaskKind, id: &str, s: &SsfSentence, seed: u64) -> Result<ProbingExample, Skip> {
        match task {
            TaskKind::SentLen => self.extract_sentlen(id, s),
            TaskKind::TreeDepth => self.extract_treedepth(id, s),
            TaskKind::BShift => self.generate_bshift(id, s, seed),
            TaskKind::SubjNum => self.extract_arg_number(id, s, ArgRole::Subject),
            TaskKind::ObjNum => self.extract_arg_number(id, s, ArgRole::Object),
            TaskKind::VerbGen => self.extract_verb_feature(id, s, VerbFeature::Gender),
            TaskKind::VerbNum => self.extract_verb_feature(id, s, VerbFeature::Number),
            TaskKind::VerbPer => self.extract_verb_feature(id, s, VerbFeature::Person),
        }
    }
}

/// BShift examples for a list of `(id, sentence)` pairs.
pub fn generate_bshift(
    corpus: &[(String, SsfSentence)],
    language: &str,
    config: &ExtractConfig,
    seed: u64,
) -> (Vec<ProbingExample>, TaskStats) {
    let ex = Extractor::new(config, language);
    let mut stats = TaskStats::new(TaskKind::BShift);
    let mut out = Vec::new();
    for (id, s) in corpus {
        stats.record(ex.generate_bshift(id, s, seed).map(|e| out.push(e)));
    }
    (out, stats)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStats {
    pub task: Option<TaskKind>,
    pub attempted: usize,
    pub produced: usize,
    pub skipped: BTreeMap<String, usize>,
    pub unknown_values: BTreeMap<String, usize>,
}

impl TaskStats {
    pub fn new(task: TaskKind) -> Self {
        TaskStats {
            task: Some(task),
            ..Default::default()
        }
    }

    fn record<T>(&mut self, outcome: Result<T, Skip>) {
        self.attempted += 1;
        match outcome {
            Ok(_) => self.produced += 1,
            Err(skip) => {
                if let Skip::UnknownFeatureValue(raw) = &skip {
                    *self.unknown_values.entry(raw.clone()).or_default() += 1;
                }
                *self.skipped.entry(skip.code().to_string()).or_default() += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &TaskStats) {
        self.attempted += other.attempted;
        self.produced += other.produced;
        for (k, v) in &other.skipped {
            *self.skipped.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.unknown_values {
            *self.unknown_values.entry(k.clone()).or_default() += v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub examples: BTreeMap<TaskKind, Vec<ProbingExample>>,
    pub stats: BTreeMap<TaskKind, TaskStats>,
}

impl Dataset {
    pub fn merge(&mut self, other: Dataset) {
        for (task, mut ex) in other.examples {
            self.examples.entry(task).or_default().append(&mut ex);
        }
        for (task, st) in other.stats {
            self.stats.entry(task).or_insert_with(|| TaskStats::new(task)).merge(&st);
        }
    }
}

/// Stable example key for a sentence: `<file stem>:<sentence id>` when the
/// document has a source path, else the bare sentence id.
pub fn sentence_key(doc: &SsfDocument, s: &SsfSentence) -> String {
    match Path::new(&doc.source_path).file_stem().and_then(|s| s.to_str()) {
        Some(stem) if !stem.is_empty() => format!("{stem}:{}", s.id),
        _ => s.id.clone(),
    }
}

/// Language code from the configuration or a `xx_` file-name prefix.
pub fn document_language(doc: &SsfDocument, config: &ExtractConfig) -> String {
    if let Some(lang) = &config.language {
        return lang.clone();
    }
    Path::new(&doc.source_path)
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|stem| stem.split(['_', '-', '.']).next())
        .filter(|p| p.len() == 2 && p.bytes().all(|b| b.is_ascii_lowercase()))
        .unwrap_or("xx")
        .to_string()
}

pub fn build_dataset(doc: &SsfDocument, tasks: &BTreeSet<TaskKind>, seed: u64, config: &ExtractConfig) -> Dataset {
    let language = document_language(doc, config);
    let ex = Extractor::new(config, language);
    let mut dataset = Dataset::default();
    for &task in tasks {
        let mut stats = TaskStats::new(task);
        let mut examples = Vec::new();
        for s in &doc.sentences {
            let id = sentence_key(doc, s);
            let outcome = ex.extract(task, &id, s, seed);
            if let Err(skip) = &outcome {
                debug!("{task} skipped {id}: {skip}");
            }
            stats.record(outcome.map(|e| examples.push(e)));
        }
        dataset.examples.insert(task, examples);
        dataset.stats.insert(task, stats);
    }
    dataset
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_jsonl<W: Write>(mut w: W, examples: &[ProbingExample]) -> std::io::Result<()> {
    for e in examples {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads and checks a JSON-lines dataset; blank lines are ignored.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<ProbingExample>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |message: String| DatasetError::Invalid { line: i + 1, message };
        let e: ProbingExample = serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?;
        e.check().map_err(invalid)?;
        out.push(e);
    }
    Ok(out)
}
