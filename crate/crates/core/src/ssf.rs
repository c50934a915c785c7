//! Shakti Standard Format (SSF) documents.
//!
//! The grammar accepted here is line oriented and tab separated:
//!
//! ```text
//! <Sentence id='1'>
//! 1	((	NP	<fs af='raam,n,m,sg,3,d,0,0' drel='k1:VGF' name='NP'>
//! 1.1	raam	NNP	<fs af='raam,n,m,sg,3,d,0,0'>
//! 	))
//! 2	((	VGF	<fs name='VGF'>
//! 2.1	khaataa	VM	<fs af='khaa,v,m,sg,3,,taa,taa'>
//! 	))
//! </Sentence>
//! ```
//!
//! Column 1 is the address (`k` on a chunk-open line, `k.j` on a word
//! line), column 2 the token (`((`, `))` or the surface form), column 3 the
//! category (chunk tag or POS tag, empty on `))`), and column 4 an optional
//! feature structure.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

/// Target name used in a `drel` to attach a chunk to the sentence root.
pub const ROOT_MARKER: &str = "ROOT";

/// Names of the eight positional `af` slots, in order.
pub const AF_SLOTS: [&str; 8] = [
    "root",
    "category",
    "gender",
    "number",
    "person",
    "case",
    "vibhakti_or_tam",
    "suffix",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Address {
    pub chunk_index: usize,
    pub word_index: usize,
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.chunk_index, self.word_index)
    }
}

/// An SSF feature structure: the positional `af` slots plus any other
/// attributes, kept in input order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FeatureStructure {
    pub root: String,
    pub category: String,
    pub gender: String,
    pub number: String,
    pub person: String,
    pub case: String,
    pub vibhakti_or_tam: String,
    pub suffix: String,
    pub extra: IndexMap<String, String>,
}

impl FeatureStructure {
    pub fn af_slots(&self) -> [&str; 8] {
        [
            &self.root,
            &self.category,
            &self.gender,
            &self.number,
            &self.person,
            &self.case,
            &self.vibhakti_or_tam,
            &self.suffix,
        ]
    }

    fn set_af(&mut self, slots: [String; 8]) {
        let [root, category, gender, number, person, case, tam, suffix] = slots;
        self.root = root;
        self.category = category;
        self.gender = gender;
        self.number = number;
        self.person = person;
        self.case = case;
        self.vibhakti_or_tam = tam;
        self.suffix = suffix;
    }

    pub fn has_af(&self) -> bool {
        self.af_slots().iter().any(|s| !s.is_empty())
    }

    pub fn is_empty(&self) -> bool {
        !self.has_af() && self.extra.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.extra.get(name).map(String::as_str)
    }

    /// The chunk `name` attribute, if any.
    pub fn name(&self) -> Option<&str> {
        self.get("name")
    }

    /// The `drel` attribute split into `(relation, target)`.
    pub fn drel(&self) -> Option<(&str, &str)> {
        let raw = self.get("drel")?;
        Some(raw.split_once(':').unwrap_or((raw, "")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WordNode {
    pub address: Address,
    pub surface: String,
    pub pos_tag: String,
    pub features: FeatureStructure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Chunk {
    pub index: usize,
    pub chunk_tag: String,
    pub words: Vec<WordNode>,
    pub features: FeatureStructure,
}

impl Chunk {
    pub fn name(&self) -> Option<&str> {
        self.features.name()
    }

    /// Head word: the word whose `name` matches the chunk's `head`
    /// attribute, else the last word.
    pub fn head_word(&self) -> Option<&WordNode> {
        if let Some(head) = self.features.get("head") {
            if let Some(w) = self.words.iter().find(|w| w.features.name() == Some(head)) {
                return Some(w);
            }
        }
        self.words.last()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SsfSentence {
    pub id: String,
    pub chunks: Vec<Chunk>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SsfDocument {
    pub sentences: Vec<SsfSentence>,
    pub source_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", content = "detail")]
pub enum ParseErrorKind {
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("unbalanced chunk: {0}")]
    UnbalancedChunk(String),
    #[error("bad address: {0}")]
    BadAddress(String),
    #[error("bad feature structure: {0}")]
    BadFeatureStructure(String),
    #[error("drel target `{0}` does not name a chunk in the sentence")]
    DanglingDrel(String),
    #[error("chunk name `{0}` is used more than once")]
    DuplicateChunkName(String),
    #[error("sentence id `{0}` is used more than once")]
    DuplicateSentenceId(String),
}

impl ParseErrorKind {
    /// Short stable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            ParseErrorKind::InvalidUtf8 => "InvalidUtf8",
            ParseErrorKind::MalformedLine(_) => "MalformedLine",
            ParseErrorKind::UnbalancedChunk(_) => "UnbalancedChunk",
            ParseErrorKind::BadAddress(_) => "BadAddress",
            ParseErrorKind::BadFeatureStructure(_) => "BadFeatureStructure",
            ParseErrorKind::DanglingDrel(_) => "DanglingDrel",
            ParseErrorKind::DuplicateChunkName(_) => "DuplicateChunkName",
            ParseErrorKind::DuplicateSentenceId(_) => "DuplicateSentenceId",
        }
    }
}

/// A parse failure with its 1-based line and column.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
    pub sentence_id: Option<String>,
}

impl ParseError {
    fn new(kind: ParseErrorKind, line: usize, column: usize) -> Self {
        ParseError {
            kind,
            line,
            column,
            sentence_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("sentence has no root chunk")]
    NoRoot,
    #[error("sentence has more than one root chunk: {0:?}")]
    MultipleRoots(Vec<usize>),
    #[error("drel target `{0}` does not resolve")]
    DanglingDrel(String),
    #[error("dependency relations contain a cycle")]
    CycleDetected,
}

/// One `child -> parent` dependency between chunks (1-based indices).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DependencyEdge {
    pub child: usize,
    pub parent: usize,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyTree {
    pub root: usize,
    pub edges: Vec<DependencyEdge>,
}

impl DependencyTree {
    /// Number of levels reached by breadth-first traversal from the root,
    /// counting the root as level 1.
    pub fn depth(&self) -> usize {
        let mut children: HashMap<usize, Vec<usize>> = HashMap::new();
        for e in &self.edges {
            children.entry(e.parent).or_default().push(e.child);
        }
        let mut queue = VecDeque::from([(self.root, 1usize)]);
        let mut seen = HashSet::from([self.root]);
        let mut max_level = 0;
        while let Some((node, level)) = queue.pop_front() {
            max_level = max_level.max(level);
            for &child in children.get(&node).into_iter().flatten() {
                if seen.insert(child) {
                    queue.push_back((child, level + 1));
                }
            }
        }
        max_level
    }
}

impl SsfSentence {
    pub fn word_count(&self) -> usize {
        self.chunks.iter().map(|c| c.words.len()).sum()
    }

    pub fn words(&self) -> impl Iterator<Item = &WordNode> {
        self.chunks.iter().flat_map(|c| c.words.iter())
    }

    /// First chunk tagged `verb_tag` (normally `VGF`).
    pub fn main_verb_chunk_with(&self, verb_tag: &str) -> Option<&Chunk> {
        self.chunks.iter().find(|c| c.chunk_tag == verb_tag)
    }

    pub fn main_verb_chunk(&self) -> Option<&Chunk> {
        self.main_verb_chunk_with("VGF")
    }

    pub fn dependency_edges(&self) -> Result<DependencyTree, TreeError> {
        let by_name: HashMap<&str, usize> = self
            .chunks
            .iter()
            .filter_map(|c| c.name().map(|n| (n, c.index)))
            .collect();

        let mut edges = Vec::new();
        let mut roots = Vec::new();
        for chunk in &self.chunks {
            match chunk.features.drel() {
                None => roots.push(chunk.index),
                Some((_, target)) if target == ROOT_MARKER => roots.push(chunk.index),
                Some((relation, target)) => {
                    let parent = *by_name
                        .get(target)
                        .ok_or_else(|| TreeError::DanglingDrel(target.to_string()))?;
                    edges.push(DependencyEdge {
                        child: chunk.index,
                        parent,
                        relation: relation.to_string(),
                    });
                }
            }
        }

        let root = match roots.as_slice() {
            [] if self.chunks.is_empty() => return Err(TreeError::NoRoot),
            // every chunk has a parent, so the parent links must loop
            [] => return Err(TreeError::CycleDetected),
            [r] => *r,
            _ => return Err(TreeError::MultipleRoots(roots)),
        };
        let tree = DependencyTree { root, edges };

        // a single root plus a cycle elsewhere leaves chunks unreachable
        let mut reachable = HashSet::from([root]);
        let mut frontier = vec![root];
        while let Some(node) = frontier.pop() {
            for e in tree.edges.iter().filter(|e| e.parent == node) {
                if reachable.insert(e.child) {
                    frontier.push(e.child);
                }
            }
        }
        if reachable.len() != self.chunks.len() {
            return Err(TreeError::CycleDetected);
        }
        Ok(tree)
    }
}

impl SsfDocument {
    pub fn sentence(&self, id: &str) -> Option<&SsfSentence> {
        self.sentences.iter().find(|s| s.id == id)
    }
}

/// Parses a complete document, failing on the first error.
pub fn parse_document(text: &str) -> Result<SsfDocument, ParseError> {
    let mut sentences = Vec::new();
    let mut seen = HashSet::new();
    for block in split_blocks(text) {
        let block = block?;
        let sentence = parse_block(&block)?;
        if !seen.insert(sentence.id.clone()) {
            let mut err = ParseError::new(
                ParseErrorKind::DuplicateSentenceId(sentence.id.clone()),
                block.open_line,
                1,
            );
            err.sentence_id = Some(sentence.id);
            return Err(err);
        }
        sentences.push(sentence);
    }
    Ok(SsfDocument {
        sentences,
        source_path: String::new(),
    })
}

/// Parses raw bytes; anything that is not UTF-8 is rejected.
pub fn parse_bytes(bytes: &[u8]) -> Result<SsfDocument, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let prefix = &bytes[..e.valid_up_to()];
        let line = prefix.iter().filter(|&&b| b == b'\n').count() + 1;
        let line_start = prefix.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        let column = prefix.len() - line_start + 1;
        ParseError::new(ParseErrorKind::InvalidUtf8, line, column)
    })?;
    parse_document(text)
}

/// Parses every sentence independently and collects all errors, resuming
/// at the next `<Sentence` line after a failure.
pub fn validate(text: &str) -> (Vec<SsfSentence>, Vec<ParseError>) {
    let mut sentences = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for block in split_blocks(text) {
        match block.and_then(|b| parse_block(&b).map(|s| (b.open_line, s))) {
            Ok((line, s)) => {
                if seen.insert(s.id.clone()) {
                    sentences.push(s);
                } else {
                    let mut err =
                        ParseError::new(ParseErrorKind::DuplicateSentenceId(s.id.clone()), line, 1);
                    err.sentence_id = Some(s.id);
                    errors.push(err);
                }
            }
            Err(e) => errors.push(e),
        }
    }
    (sentences, errors)
}

pub fn serialize(doc: &SsfDocument) -> String {
    let mut out = String::new();
    for s in &doc.sentences {
        write_sentence(&mut out, s);
    }
    out
}

fn write_sentence(out: &mut String, s: &SsfSentence) {
    let q = quote_for(&s.id);
    out.push_str(&format!("<Sentence id={q}{}{q}>\n", s.id));
    for chunk in &s.chunks {
        out.push_str(&format!("{}\t((\t{}", chunk.index, chunk.chunk_tag));
        write_fs(out, &chunk.features);
        out.push('\n');
        for w in &chunk.words {
            out.push_str(&format!("{}\t{}\t{}", w.address, w.surface, w.pos_tag));
            write_fs(out, &w.features);
            out.push('\n');
        }
        out.push_str("\t))\n");
    }
    out.push_str("</Sentence>\n");
}

fn write_fs(out: &mut String, fs: &FeatureStructure) {
    if fs.is_empty() {
        return;
    }
    out.push_str("\t<fs");
    if fs.has_af() {
        let af = fs.af_slots().join(",");
        let q = quote_for(&af);
        out.push_str(&format!(" af={q}{af}{q}"));
    }
    for (k, v) in &fs.extra {
        let q = quote_for(v);
        out.push_str(&format!(" {k}={q}{v}{q}"));
    }
    out.push('>');
}

fn quote_for(value: &str) -> char {
    if value.contains('\'') {
        '"'
    } else {
        '\''
    }
}

struct Line<'a> {
    number: usize,
    text: &'a str,
}

struct Block<'a> {
    id: String,
    open_line: usize,
    lines: Vec<Line<'a>>,
}

fn split_blocks(text: &str) -> impl Iterator<Item = Result<Block<'_>, ParseError>> {
    let mut lines = text
        .split('\n')
        .enumerate()
        .map(|(i, l)| Line {
            number: i + 1,
            text: l.strip_suffix('\r').unwrap_or(l),
        })
        .peekable();

    std::iter::from_fn(move || loop {
        let line = lines.next()?;
        let trimmed = line.text.trim();
        if trimmed.is_empty() {
            continue;
        }
        let id = match parse_sentence_open(trimmed) {
            Some(Ok(id)) => id,
            Some(Err(msg)) => {
                skip_to_next_open(&mut lines);
                return Some(Err(ParseError::new(
                    ParseErrorKind::MalformedLine(msg),
                    line.number,
                    1,
                )));
            }
            None => {
                skip_to_next_open(&mut lines);
                return Some(Err(ParseError::new(
                    ParseErrorKind::MalformedLine(format!(
                        "expected `<Sentence id=...>`, found `{}`",
                        clip(trimmed)
                    )),
                    line.number,
                    1,
                )));
            }
        };
        let mut body = Vec::new();
        while let Some(next) = lines.peek() {
            let t = next.text.trim();
            if t == "</Sentence>" {
                lines.next();
                return Some(Ok(Block {
                    id,
                    open_line: line.number,
                    lines: body,
                }));
            }
            if t.starts_with("<Sentence") {
                break;
            }
            body.push(lines.next().expect("peeked"));
        }
        let mut err = ParseError::new(
            ParseErrorKind::MalformedLine("sentence is missing `</Sentence>`".into()),
            line.number,
            1,
        );
        err.sentence_id = Some(id);
        return Some(Err(err));
    })
}

fn skip_to_next_open<'a, I: Iterator<Item = Line<'a>>>(lines: &mut std::iter::Peekable<I>) {
    while let Some(l) = lines.peek() {
        if l.text.trim_start().starts_with("<Sentence") {
            break;
        }
        lines.next();
    }
}

fn parse_sentence_open(line: &str) -> Option<Result<String, String>> {
    let rest = line.strip_prefix("<Sentence")?;
    let inner = match rest.strip_suffix('>') {
        Some(inner) => inner,
        None => return Some(Err("sentence header is missing `>`".into())),
    };
    let attrs = match parse_attrs(inner) {
        Ok(a) => a,
        Err((msg, _)) => return Some(Err(msg)),
    };
    match attrs.into_iter().find(|(k, _)| k == "id") {
        Some((_, id)) if !id.is_empty() => Some(Ok(id)),
        _ => Some(Err("sentence header has no id".into())),
    }
}

fn parse_block(block: &Block<'_>) -> Result<SsfSentence, ParseError> {
    parse_block_inner(block).map_err(|mut e| {
        e.sentence_id = Some(block.id.clone());
        e
    })
}

fn parse_block_inner(block: &Block<'_>) -> Result<SsfSentence, ParseError> {
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut open: Option<(Chunk, usize)> = None;

    for line in &block.lines {
        if line.text.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.text.split('\t').collect();
        let col_start = |i: usize| -> usize {
            cols[..i].iter().map(|c| c.chars().count() + 1).sum::<usize>() + 1
        };
        let err = |kind, col| ParseError::new(kind, line.number, col);

        if cols.len() >= 2 && cols[1] == "))" {
            if cols.len() > 3 || !cols[0].is_empty() || cols.get(2).is_some_and(|c| !c.is_empty()) {
                return Err(err(
                    ParseErrorKind::MalformedLine("chunk close line must be `\\t))`".into()),
                    1,
                ));
            }
            let (chunk, open_line) = open.take().ok_or_else(|| {
                err(
                    ParseErrorKind::UnbalancedChunk("`))` without matching `((`".into()),
                    col_start(1),
                )
            })?;
            if chunk.words.is_empty() {
                return Err(ParseError::new(
                    ParseErrorKind::UnbalancedChunk(format!("chunk {} has no words", chunk.index)),
                    open_line,
                    1,
                ));
            }
            chunks.push(chunk);
            continue;
        }

        if cols.len() < 3 || cols.len() > 4 {
            return Err(err(
                ParseErrorKind::MalformedLine(format!("expected 3 or 4 columns, found {}", cols.len())),
                1,
            ));
        }
        let features = match cols.get(3) {
            Some(raw) => parse_fs(raw).map_err(|(msg, off)| {
                err(ParseErrorKind::BadFeatureStructure(msg), col_start(3) + off)
            })?,
            None => FeatureStructure::default(),
        };

        if cols[1] == "((" {
            if let Some((chunk, open_line)) = &open {
                return Err(ParseError::new(
                    ParseErrorKind::UnbalancedChunk(format!(
                        "chunk {} opened here is not closed before the next `((`",
                        chunk.index
                    )),
                    *open_line,
                    1,
                ));
            }
            let index = parse_index(cols[0]).ok_or_else(|| {
                err(ParseErrorKind::BadAddress(format!("`{}` is not a chunk address", clip(cols[0]))), 1)
            })?;
            let expected = chunks.len() + 1;
            if index != expected {
                return Err(err(
                    ParseErrorKind::BadAddress(format!("chunk {index} found where {expected} was expected")),
                    1,
                ));
            }
            if cols[2].is_empty() {
                return Err(err(ParseErrorKind::MalformedLine("chunk tag is empty".into()), col_start(2)));
            }
            open = Some((
                Chunk {
                    index,
                    chunk_tag: cols[2].to_string(),
                    words: Vec::new(),
                    features,
                },
                line.number,
            ));
            continue;
        }

        let (chunk, _) = open.as_mut().ok_or_else(|| {
            err(ParseErrorKind::UnbalancedChunk("word line outside of a chunk".into()), 1)
        })?;
        let address = cols[0]
            .split_once('.')
            .and_then(|(c, w)| Some((parse_index(c)?, parse_index(w)?)))
            .ok_or_else(|| {
                err(ParseErrorKind::BadAddress(format!("`{}` is not a word address", clip(cols[0]))), 1)
            })?;
        let expected = (chunk.index, chunk.words.len() + 1);
        if address != expected {
            return Err(err(
                ParseErrorKind::BadAddress(format!(
                    "word {}.{} found where {}.{} was expected",
                    address.0, address.1, expected.0, expected.1
                )),
                1,
            ));
        }
        if cols[1].is_empty() || cols[1].chars().any(char::is_whitespace) {
            return Err(err(
                ParseErrorKind::MalformedLine("surface form must be non-empty without whitespace".into()),
                col_start(1),
            ));
        }
        if cols[2].is_empty() {
            return Err(err(ParseErrorKind::MalformedLine("POS tag is empty".into()), col_start(2)));
        }
        chunk.words.push(WordNode {
            address: Address {
                chunk_index: address.0,
                word_index: address.1,
            },
            surface: cols[1].to_string(),
            pos_tag: cols[2].to_string(),
            features,
        });
    }

    if let Some((chunk, open_line)) = open {
        return Err(ParseError::new(
            ParseErrorKind::UnbalancedChunk(format!("chunk {} is never closed", chunk.index)),
            open_line,
            1,
        ));
    }

    check_drels(&chunks, block)?;
    Ok(SsfSentence {
        id: block.id.clone(),
        chunks,
    })
}

fn check_drels(chunks: &[Chunk], block: &Block<'_>) -> Result<(), ParseError> {
    // chunk lines in order of appearance, for error positions
    let chunk_lines: Vec<usize> = block
        .lines
        .iter()
        .filter(|l| l.text.split('\t').nth(1) == Some("(("))
        .map(|l| l.number)
        .collect();
    let line_of = |c: &Chunk| chunk_lines.get(c.index - 1).copied().unwrap_or(block.open_line);

    let mut names = HashSet::new();
    for c in chunks {
        if let Some(name) = c.name() {
            if !names.insert(name) {
                return Err(ParseError::new(
                    ParseErrorKind::DuplicateChunkName(name.to_string()),
                    line_of(c),
                    1,
                ));
            }
        }
    }
    for c in chunks {
        if let Some((_, target)) = c.features.drel() {
            if target != ROOT_MARKER && !names.contains(target) {
                return Err(ParseError::new(
                    ParseErrorKind::DanglingDrel(target.to_string()),
                    line_of(c),
                    1,
                ));
            }
        }
    }
    Ok(())
}

fn parse_index(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok().filter(|&n| n >= 1)
}

/// Parses `<fs a='x' b="y">`; errors carry a char offset into `raw`.
fn parse_fs(raw: &str) -> Result<FeatureStructure, (String, usize)> {
    let inner = raw
        .strip_prefix("<fs")
        .and_then(|r| r.strip_suffix('>'))
        .ok_or_else(|| ("expected `<fs ...>`".to_string(), 0))?;
    let mut fs = FeatureStructure::default();
    let mut seen_af = false;
    for (name, value) in parse_attrs(inner).map_err(|(m, o)| (m, o + 3))? {
        if name == "af" {
            if seen_af {
                return Err(("attribute `af` repeated".into(), 0));
            }
            seen_af = true;
            let parts: Vec<&str> = value.split(',').collect();
            if parts.len() > AF_SLOTS.len() {
                return Err((format!("`af` has {} slots, at most 8 allowed", parts.len()), 0));
            }
            let mut slots: [String; 8] = Default::default();
            for (slot, part) in slots.iter_mut().zip(parts) {
                *slot = part.to_string();
            }
            fs.set_af(slots);
        } else if fs.extra.contains_key(&name) {
            return Err((format!("attribute `{name}` repeated"), 0));
        } else {
            fs.extra.insert(name, value);
        }
    }
    Ok(fs)
}

/// Parses whitespace separated `name='value'` pairs.
fn parse_attrs(s: &str) -> Result<Vec<(String, String)>, (String, usize)> {
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    loop {
        let had_space = i < chars.len() && chars[i].is_whitespace();
        while i < chars.len() && chars[i].is_whitespace() {
            i += 1;
        }
        if i == chars.len() {
            return Ok(out);
        }
        if !had_space {
            return Err(("attributes must be separated by whitespace".into(), i));
        }
        let start = i;
        while i < chars.len() && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '-' | '.')) {
            i += 1;
        }
        if i == start {
            return Err((format!("unexpected `{}`", chars[i]), i));
        }
        let name: String = chars[start..i].iter().collect();
        if chars.get(i) != Some(&'=') {
            return Err((format!("attribute `{name}` is missing `=`"), i));
        }
        i += 1;
        let quote = match chars.get(i) {
            Some(&q @ ('\'' | '"')) => q,
            _ => return Err((format!("value of `{name}` must be quoted"), i)),
        };
        i += 1;
        let vstart = i;
        while i < chars.len() && chars[i] != quote {
            i += 1;
        }
        if i == chars.len() {
            return Err((format!("value of `{name}` is not terminated"), vstart));
        }
        let value: String = chars[vstart..i].iter().collect();
        if value.contains(['\t', '\n', '>']) {
            return Err((format!("value of `{name}` contains a forbidden character"), vstart));
        }
        i += 1;
        out.push((name, value));
    }
}

fn clip(s: &str) -> String {
    s.chars().take(40).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(id: &str, body: &str) -> String {
        format!("<Sentence id='{id}'>\n{body}</Sentence>\n")
    }

    const TWO_CHUNKS: &str = "1\t((\tNP\t<fs name='NP' drel='k1:VGF'>\n\
1.1\tram\tNN\t<fs af='ram,n,m,sg,3,d,0,0'>\n\
\t))\n\
2\t((\tVGF\t<fs name='VGF'>\n\
2.1\tkhata\tVM\t<fs af='khA,v,m,sg,3,,wA,wA'>\n\
\t))\n";

    #[test]
    fn minimal_sentence() {
        let doc = parse_document(&sentence("1", TWO_CHUNKS)).unwrap();
        assert_eq!(doc.sentences.len(), 1);
        let s = &doc.sentences[0];
        assert_eq!(s.chunks.len(), 2);
        assert_eq!(s.word_count(), 2);
        assert_eq!(s.chunks[0].words[0].surface, "ram");
        assert_eq!(s.chunks[0].words[0].pos_tag, "NN");
        assert_eq!(s.chunks[0].words[0].features.number, "sg");
        assert_eq!(s.chunks[1].words[0].features.vibhakti_or_tam, "wA");
        assert_eq!(s.chunks[0].features.drel(), Some(("k1", "VGF")));
    }

    #[test]
    fn empty_input() {
        assert!(parse_document("").unwrap().sentences.is_empty());
        assert!(parse_document("\n\n  \n").unwrap().sentences.is_empty());
        assert_eq!(serialize(&SsfDocument::default()), "");
    }

    #[test]
    fn short_af_is_padded() {
        let fs = parse_fs("<fs af='a,b,c'>").unwrap();
        assert_eq!(fs.af_slots(), ["a", "b", "c", "", "", "", "", ""]);
        assert!(parse_fs("<fs af='1,2,3,4,5,6,7,8,9'>").is_err());
    }

    #[test]
    fn unknown_attributes_survive() {
        let fs = parse_fs("<fs name='x' posn='10' mystery=\"it's\">").unwrap();
        assert_eq!(fs.get("posn"), Some("10"));
        assert_eq!(fs.get("mystery"), Some("it's"));
        let mut out = String::new();
        write_fs(&mut out, &fs);
        assert_eq!(parse_fs(out.trim_start()).unwrap(), fs);
    }

    #[test]
    fn single_word_serialization() {
        let text = sentence("s1", "1\t((\tNP\n1.1\tghar\tNN\n\t))\n");
        let doc = parse_document(&text).unwrap();
        assert_eq!(serialize(&doc), text);
    }

    #[test]
    fn round_trip_two_chunks() {
        let doc = parse_document(&sentence("1", TWO_CHUNKS)).unwrap();
        assert_eq!(parse_document(&serialize(&doc)).unwrap(), doc);
    }

    #[test]
    fn unbalanced_chunk() {
        let text = sentence("1", "1\t((\tNP\n1.1\tram\tNN\n");
        let err = parse_document(&text).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::UnbalancedChunk(_)));
        assert_eq!(err.line, 2);
        assert_eq!(err.sentence_id.as_deref(), Some("1"));

        let text = sentence("1", "\t))\n");
        assert!(matches!(
            parse_document(&text).unwrap_err().kind,
            ParseErrorKind::UnbalancedChunk(_)
        ));
    }

    #[test]
    fn wrong_column_count() {
        let text = sentence("1", "1\t((\tNP\n1.1\tram\n\t))\n");
        let err = parse_document(&text).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::MalformedLine(_)));
        assert_eq!(err.line, 3);
    }

    #[test]
    fn bad_addresses() {
        for body in [
            "2\t((\tNP\n2.1\tram\tNN\n\t))\n",
            "1\t((\tNP\n1.2\tram\tNN\n\t))\n",
            "1\t((\tNP\n2.1\tram\tNN\n\t))\n",
            "0\t((\tNP\n0.1\tram\tNN\n\t))\n",
            "1\t((\tNP\n1.x\tram\tNN\n\t))\n",
        ] {
            let err = parse_document(&sentence("1", body)).unwrap_err();
            assert!(matches!(err.kind, ParseErrorKind::BadAddress(_)), "{body:?}: {err}");
        }
    }

    #[test]
    fn bad_feature_structure_column() {
        let text = sentence("1", "1\t((\tNP\n1.1\tram\tNN\t<fs af='x>\n\t))\n");
        let err = parse_document(&text).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::BadFeatureStructure(_)));
        assert_eq!(err.line, 3);
        assert!(err.column > "1.1\tram\tNN\t".len());
    }

    #[test]
    fn dangling_drel() {
        let body = "1\t((\tNP\t<fs name='NP' drel='k1:VGF2'>\n1.1\tram\tNN\n\t))\n\
2\t((\tVGF\t<fs name='VGF'>\n2.1\tkhata\tVM\n\t))\n";
        let err = parse_document(&sentence("1", body)).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DanglingDrel("VGF2".into()));
        assert_eq!(err.line, 2);
    }

    #[test]
    fn non_utf8_rejected() {
        let mut bytes = sentence("1", "1\t((\tNP\n1.1\tram\tNN\n\t))\n").into_bytes();
        bytes[40] = 0xff;
        assert_eq!(parse_bytes(&bytes).unwrap_err().kind, ParseErrorKind::InvalidUtf8);
    }

    #[test]
    fn duplicate_sentence_ids() {
        let text = format!("{}{}", sentence("1", TWO_CHUNKS), sentence("1", TWO_CHUNKS));
        let err = parse_document(&text).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DuplicateSentenceId("1".into()));
    }

    #[test]
    fn validate_resumes_after_errors() {
        let text = format!(
            "{}{}{}",
            sentence("a", TWO_CHUNKS),
            sentence("b", "1\t((\tNP\n"),
            sentence("c", TWO_CHUNKS)
        );
        let (ok, errs) = validate(&text);
        assert_eq!(ok.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].sentence_id.as_deref(), Some("b"));
    }

    fn tree_sentence(drels: &[Option<&str>]) -> SsfSentence {
        let chunks = drels
            .iter()
            .enumerate()
            .map(|(i, drel)| {
                let mut features = FeatureStructure::default();
                features.extra.insert("name".into(), format!("C{}", i + 1));
                if let Some(d) = drel {
                    features.extra.insert("drel".into(), d.to_string());
                }
                Chunk {
                    index: i + 1,
                    chunk_tag: "NP".into(),
                    words: vec![WordNode {
                        address: Address { chunk_index: i + 1, word_index: 1 },
                        surface: format!("w{}", i + 1),
                        pos_tag: "NN".into(),
                        features: FeatureStructure::default(),
                    }],
                    features,
                }
            })
            .collect();
        SsfSentence { id: "t".into(), chunks }
    }

    #[test]
    fn edges_read_off_drels() {
        let s = tree_sentence(&[Some("k1:C3"), Some("k2:C3"), None]);
        let tree = s.dependency_edges().unwrap();
        assert_eq!(tree.root, 3);
        let edges: Vec<_> = tree.edges.iter().map(|e| (e.child, e.parent, e.relation.as_str())).collect();
        assert_eq!(edges, [(1, 3, "k1"), (2, 3, "k2")]);
        assert_eq!(tree.depth(), 2);
    }

    #[test]
    fn root_marker_counts_as_root() {
        let s = tree_sentence(&[Some("k1:C2"), Some("main:ROOT")]);
        assert_eq!(s.dependency_edges().unwrap().root, 2);
    }

    #[test]
    fn tree_errors() {
        let s = tree_sentence(&[Some("k1:C2"), Some("k1:C1")]);
        assert_eq!(s.dependency_edges().unwrap_err(), TreeError::CycleDetected);
        let s = tree_sentence(&[Some("k1:C2"), Some("k1:C1"), None]);
        assert_eq!(s.dependency_edges().unwrap_err(), TreeError::CycleDetected);
        let s = tree_sentence(&[None, None]);
        assert_eq!(s.dependency_edges().unwrap_err(), TreeError::MultipleRoots(vec![1, 2]));
        let s = tree_sentence(&[]);
        assert_eq!(s.dependency_edges().unwrap_err(), TreeError::NoRoot);
        let s = tree_sentence(&[Some("k1:C9")]);
        assert_eq!(s.dependency_edges().unwrap_err(), TreeError::DanglingDrel("C9".into()));
    }

    #[test]
    fn chain_depth() {
        let s = tree_sentence(&[Some("r:C2"), Some("r:C3"), Some("r:C4"), None]);
        assert_eq!(s.dependency_edges().unwrap().depth(), 4);
        let s = tree_sentence(&[None]);
        assert_eq!(s.dependency_edges().unwrap().depth(), 1);
    }

    #[test]
    fn main_verb_is_first_vgf() {
        let mut s = tree_sentence(&[None, Some("r:C1"), Some("r:C1")]);
        assert!(s.main_verb_chunk().is_none());
        s.chunks[1].chunk_tag = "VGF".into();
        s.chunks[2].chunk_tag = "VGF".into();
        assert_eq!(s.main_verb_chunk().unwrap().index, 2);
    }

    #[test]
    fn head_word_selection() {
        let text = sentence(
            "h",
            "1\t((\tNP\t<fs head='bacce'>\n1.1\tbacce\tNNS\t<fs name='bacce'>\n1.2\tne\tPSP\n\t))\n",
        );
        let doc = parse_document(&text).unwrap();
        assert_eq!(doc.sentences[0].chunks[0].head_word().unwrap().surface, "bacce");
        let text = sentence("h", "1\t((\tNP\n1.1\tacchA\tJJ\n1.2\tghar\tNN\n\t))\n");
        let doc = parse_document(&text).unwrap();
        assert_eq!(doc.sentences[0].chunks[0].head_word().unwrap().surface, "ghar");
    }
}
