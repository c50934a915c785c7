//! Rule-based text perturbations over POS-tagged sentences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{sentence_key, ProbingExample, TaskKind, Token};
use crate::seed;
use crate::ssf::SsfDocument;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PerturbationKind {
    AppendR,
    DropNV,
    DropN,
    DropV,
    DropRN,
    DropRV,
    KeepNV,
    KeepN,
    KeepV,
    DropF,
    DropL,
    DropFL,
    Shuffle,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 13] = [
        PerturbationKind::AppendR,
        PerturbationKind::DropNV,
        PerturbationKind::DropN,
        PerturbationKind::DropV,
        PerturbationKind::DropRN,
        PerturbationKind::DropRV,
        PerturbationKind::KeepNV,
        PerturbationKind::KeepN,
        PerturbationKind::KeepV,
        PerturbationKind::DropF,
        PerturbationKind::DropL,
        PerturbationKind::DropFL,
        PerturbationKind::Shuffle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::AppendR => "AppendR",
            PerturbationKind::DropNV => "DropNV",
            PerturbationKind::DropN => "DropN",
            PerturbationKind::DropV => "DropV",
            PerturbationKind::DropRN => "DropRN",
            PerturbationKind::DropRV => "DropRV",
            PerturbationKind::KeepNV => "KeepNV",
            PerturbationKind::KeepN => "KeepN",
            PerturbationKind::KeepV => "KeepV",
            PerturbationKind::DropF => "DropF",
            PerturbationKind::DropL => "DropL",
            PerturbationKind::DropFL => "DropFL",
            PerturbationKind::Shuffle => "Shuffle",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PerturbationKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown perturbation `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPolicy {
    /// Drop the example and count it.
    #[default]
    Skip,
    /// Emit a single unknown-token placeholder.
    Placeholder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub noun_tags: BTreeSet<String>,
    pub verb_tags: BTreeSet<String>,
    pub empty_policy: EmptyPolicy,
    pub unk_token: String,
    pub unk_pos: String,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            noun_tags: ["NN", "NNS", "NNP", "NNPC", "NNC"].into_iter().map(String::from).collect(),
            verb_tags: ["VM", "VAUX"].into_iter().map(String::from).collect(),
            empty_policy: EmptyPolicy::Skip,
            unk_token: "[UNK]".into(),
            unk_pos: "UNK".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PosClassifier {
    noun_tags: BTreeSet<String>,
    verb_tags: BTreeSet<String>,
}

impl PosClassifier {
    pub fn new(noun_tags: BTreeSet<String>, verb_tags: BTreeSet<String>) -> Result<Self, PerturbError> {
        if let Some(tag) = noun_tags.intersection(&verb_tags).next() {
            return Err(PerturbError::OverlappingTags(tag.clone()));
        }
        Ok(PosClassifier { noun_tags, verb_tags })
    }

    pub fn from_config(cfg: &PerturbConfig) -> Result<Self, PerturbError> {
        Self::new(cfg.noun_tags.clone(), cfg.verb_tags.clone())
    }

    pub fn is_noun(&self, tag: &str) -> bool {
        self.noun_tags.contains(tag)
    }

    pub fn is_verb(&self, tag: &str) -> bool {
        self.verb_tags.contains(tag)
    }
}

impl Default for PosClassifier {
    fn default() -> Self {
        Self::from_config(&PerturbConfig::default()).expect("default tag sets are disjoint")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PerturbError {
    #[error("perturbation removed every token")]
    EmptyResult,
    #[error("input sentence is empty")]
    EmptyInput,
    #[error("no phrase from another sentence is available")]
    EmptyPhrasePool,
    #[error("tag `{0}` is listed as both noun and verb")]
    OverlappingTags(String),
}

impl PerturbError {
    pub fn code(&self) -> &'static str {
        match self {
            PerturbError::EmptyResult => "EmptyResult",
            PerturbError::EmptyInput => "EmptyInput",
            PerturbError::EmptyPhrasePool => "EmptyPhrasePool",
            PerturbError::OverlappingTags(_) => "OverlappingTags",
        }
    }
}

/// A span of tokens (one chunk) available to `AppendR`, tagged with the
/// key of the sentence it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phrase {
    pub source: String,
    pub tokens: Vec<Token>,
}

/// Every chunk of every sentence, in document order.
pub fn phrase_pool(doc: &SsfDocument) -> Vec<Phrase> {
    doc.sentences
        .iter()
        .flat_map(|s| {
            let source = sentence_key(doc, s);
            s.chunks.iter().map(move |c| Phrase {
                source: source.clone(),
                tokens: c.words.iter().map(|w| (w.surface.clone(), w.pos_tag.clone())).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Perturbed {
    pub tokens: Vec<Token>,
    /// Set when a random-drop variant found nothing to drop.
    pub unchanged: bool,
}

/// Context shared by all perturbations of one run.
#[derive(Debug, Clone)]
pub struct Perturber<'a> {
    pub pos: &'a PosClassifier,
    pub phrases: &'a [Phrase],
    pub unk_token: &'a str,
    pub unk_pos: &'a str,
}

impl<'a> Perturber<'a> {
    pub fn new(pos: &'a PosClassifier, phrases: &'a [Phrase]) -> Self {
        Perturber {
            pos,
            phrases,
            unk_token: "[UNK]",
            unk_pos: "UNK",
        }
    }

    /// Applies `kind` to `tokens`. `source` names the sentence the tokens
    /// came from so `AppendR` never appends a piece of the same sentence.
    pub fn perturb<R: RngCore>(
        &self,
        tokens: &[Token],
        kind: PerturbationKind,
        source: &str,
        rng: &mut R,
    ) -> Result<Perturbed, PerturbError> {
        use PerturbationKind::*;
        if tokens.is_empty() {
            return Err(PerturbError::EmptyInput);
        }
        let noun = |t: &Token| self.pos.is_noun(&t.1);
        let verb = |t: &Token| self.pos.is_verb(&t.1);
        let keep = |pred: &dyn Fn(&Token) -> bool| -> Vec<Token> {
            tokens.iter().filter(|t| pred(t)).cloned().collect()
        };

        let mut unchanged = false;
        let out = match kind {
            AppendR => {
                let candidates: Vec<&Phrase> = self
                    .phrases
                    .iter()
                    .filter(|p| p.source != source && !p.tokens.is_empty())
                    .collect();
                if candidates.is_empty() {
                    return Err(PerturbError::EmptyPhrasePool);
                }
                let phrase = candidates[seed::index(rng, candidates.len())];
                tokens.iter().chain(&phrase.tokens).cloned().collect()
            }
            DropNV => keep(&|t| !noun(t) && !verb(t)),
            DropN => keep(&|t| !noun(t)),
            DropV => keep(&|t| !verb(t)),
            KeepNV => keep(&|t| noun(t) || verb(t)),
            KeepN => keep(&noun),
            KeepV => keep(&verb),
            DropRN | DropRV => {
                let is_target = |t: &Token| if kind == DropRN { noun(t) } else { verb(t) };
                let positions: Vec<usize> = (0..tokens.len()).filter(|&i| is_target(&tokens[i])).collect();
                let mut out = tokens.to_vec();
                if positions.is_empty() {
                    unchanged = true;
                } else {
                    out.remove(positions[seed::index(rng, positions.len())]);
                }
                out
            }
            DropF | DropL | DropFL => {
                let mut out = tokens.to_vec();
                let last = out.len() - 1;
                let targets: &[usize] = match kind {
                    DropF => &[0],
                    DropL => &[last],
                    _ => &[0, last],
                };
                for &i in targets {
                    out[i] = (self.unk_token.to_string(), self.unk_pos.to_string());
                }
                out
            }
            Shuffle => {
                let mut out = tokens.to_vec();
                seed::shuffle(rng, &mut out);
                out
            }
        };
        if out.is_empty() {
            return Err(PerturbError::EmptyResult);
        }
        Ok(Perturbed { tokens: out, unchanged })
    }
}

/// Random stream for one (kind, example) pair.
pub fn example_stream(seed: u64, kind: PerturbationKind, example_id: &str) -> rand_chacha::ChaCha8Rng {
    seed::stream(seed, &format!("perturb/{kind}"), example_id)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbStats {
    pub input: usize,
    pub produced: usize,
    /// Random-drop outputs identical to the input (nothing to drop).
    pub unchanged: usize,
    /// Placeholder outputs written under the placeholder empty policy.
    pub placeholders: usize,
    pub skipped: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PerturbedDataset {
    pub by_kind: BTreeMap<PerturbationKind, Vec<ProbingExample>>,
    pub stats: BTreeMap<PerturbationKind, PerturbStats>,
}

/// Perturbs every example under every requested kind. Labels are copied
/// unchanged; BShift examples are never perturbed.
pub fn perturb_dataset(
    examples: &[ProbingExample],
    kinds: &BTreeSet<PerturbationKind>,
    config: &PerturbConfig,
    phrases: &[Phrase],
    seed: u64,
) -> Result<PerturbedDataset, PerturbError> {
    let pos = PosClassifier::from_config(config)?;
    let perturber = Perturber {
        pos: &pos,
        phrases,
        unk_token: &config.unk_token,
        unk_pos: &config.unk_pos,
    };
    let mut out = PerturbedDataset::default();
    for &kind in kinds {
        let results: Vec<Result<(ProbingExample, bool, bool), &'static str>> = examples
            .par_iter()
            .map(|ex| {
                if ex.task == TaskKind::BShift {
                    return Err("BShiftExcluded");
                }
                let mut rng = example_stream(seed, kind, &ex.id);
                let (tokens, unchanged, placeholder) = match perturber.perturb(&ex.tokens, kind, &ex.id, &mut rng) {
                    Ok(p) => (p.tokens, p.unchanged, false),
                    Err(PerturbError::EmptyResult) if config.empty_policy == EmptyPolicy::Placeholder => {
                        (vec![(config.unk_token.clone(), config.unk_pos.clone())], false, true)
                    }
                    Err(e) => return Err(e.code()),
                };
                let mut pex = ex.clone();
                pex.tokens = tokens;
                pex.perturbation = Some(kind);
                Ok((pex, unchanged, placeholder))
            })
            .collect();

        let mut stats = PerturbStats {
            input: examples.len(),
            ..Default::default()
        };
        let mut list = Vec::new();
        for r in results {
            match r {
                Ok((ex, unchanged, placeholder)) => {
                    stats.produced += 1;
                    stats.unchanged += usize::from(unchanged);
                    stats.placeholders += usize::from(placeholder);
                    list.push(ex);
                }
                Err(code) => *stats.skipped.entry(code.to_string()).or_default() += 1,
            }
        }
        out.by_kind.insert(kind, list);
        out.stats.insert(kind, stats);
    }
    Ok(out)
}
