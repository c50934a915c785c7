#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::RngCore;
use sentprobe::labels::{ProbingExample, TaskKind};
use sentprobe::seed;
use sentprobe::ssf::{self, SsfDocument, SsfSentence};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load_fixture(name: &str) -> SsfDocument {
    let path = fixture_path(name);
    let bytes = std::fs::read(&path).unwrap();
    let mut doc = ssf::parse_bytes(&bytes).unwrap();
    doc.source_path = path.display().to_string();
    doc
}

pub const FIXTURES: [&str; 3] = ["hi_sample.ssf", "hi_bins.ssf", "ml_sample.ssf"];

const SURFACES: [&str; 12] = [
    "राम", "किताब", "ने", "पढ़ी", "ghar", "khA", "बच्चे", "में", "a'b", "x\"y", "വീട്", "1.5",
];
const POS: [&str; 10] = ["NN", "NNS", "NNP", "VM", "VAUX", "JJ", "PSP", "RB", "CC", "QC"];
const CHUNK_TAGS: [&str; 6] = ["NP", "VGF", "JJP", "RBP", "CCP", "VGNF"];
const AF_VALUES: [&str; 9] = ["", "m", "f", "sg", "pl", "3", "2h", "any", "खा"];

fn pick<'a, R: RngCore>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items[seed::index(rng, items.len())]
}

fn random_fs<R: RngCore>(rng: &mut R, fixed: &[(&str, String)]) -> String {
    let mut attrs: Vec<String> = Vec::new();
    if seed::index(rng, 3) > 0 {
        let n = 1 + seed::index(rng, 8);
        let slots: Vec<&str> = (0..n).map(|_| pick(rng, &AF_VALUES)).collect();
        attrs.push(format!("af='{}'", slots.join(",")));
    }
    for (k, v) in fixed {
        attrs.push(format!("{k}='{v}'"));
    }
    if seed::index(rng, 4) == 0 {
        attrs.push("vpos=\"it's\"".to_string());
    }
    if attrs.is_empty() {
        String::new()
    } else {
        format!("\t<fs {}>", attrs.join(" "))
    }
}

/// A random well-formed SSF sentence: random chunking, random features and
/// a random dependency tree over the chunks.
pub fn random_sentence_text<R: RngCore>(rng: &mut R, id: &str) -> String {
    let n_chunks = 1 + seed::index(rng, 7);
    let root = seed::index(rng, n_chunks);
    let mut order: Vec<usize> = (0..n_chunks).filter(|&c| c != root).collect();
    seed::shuffle(rng, &mut order);
    let mut attached = vec![root];
    let mut parent = vec![None; n_chunks];
    for c in order {
        parent[c] = Some(attached[seed::index(rng, attached.len())]);
        attached.push(c);
    }
    let mut out = format!("<Sentence id='{id}'>\n");
    for c in 0..n_chunks {
        let mut fixed = vec![("name", format!("C{}", c + 1))];
        match parent[c] {
            Some(p) => fixed.push(("drel", format!("{}:C{}", pick(rng, &["k1", "k2", "r6", "k7t"]), p + 1))),
            None if seed::index(rng, 2) == 0 => fixed.push(("drel", "main:ROOT".to_string())),
            None => {}
        }
        out.push_str(&format!("{}\t((\t{}{}\n", c + 1, pick(rng, &CHUNK_TAGS), random_fs(rng, &fixed)));
        for w in 0..1 + seed::index(rng, 5) {
            let fs = random_fs(rng, &[]);
            out.push_str(&format!("{}.{}\t{}\t{}{}\n", c + 1, w + 1, pick(rng, &SURFACES), pick(rng, &POS), fs));
        }
        out.push_str("\t))\n");
    }
    out.push_str("</Sentence>\n");
    out
}

pub fn random_document_text(seed_value: u64, n: usize) -> String {
    let mut rng = seed::stream(seed_value, "test/ssf", "");
    (0..n).map(|i| random_sentence_text(&mut rng, &format!("s{i}"))).collect()
}

pub const TAGS: [&str; 11] = ["NN", "NNS", "NNP", "NNPC", "VM", "VAUX", "JJ", "PSP", "RB", "CC", "SYM"];

pub fn random_tokens<R: RngCore>(rng: &mut R, max_len: usize) -> Vec<(String, String)> {
    let n = 1 + seed::index(rng, max_len);
    (0..n)
        .map(|i| (format!("w{i}_{}", seed::index(rng, 1000)), pick(rng, &TAGS).to_string()))
        .collect()
}

pub fn example(id: &str, task: TaskKind, tokens: Vec<(String, String)>, label: usize) -> ProbingExample {
    ProbingExample::new(id, "hi", task, tokens, label)
}

/// Depth as one plus the longest root-to-leaf edge count, by recursion
/// over child lists built from the raw `drel` attributes.
pub fn recursive_depth(s: &SsfSentence) -> usize {
    let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let by_name: BTreeMap<&str, usize> = s
        .chunks
        .iter()
        .filter_map(|c| Some((c.features.get("name")?, c.index)))
        .collect();
    let mut root = None;
    for c in &s.chunks {
        match c.features.get("drel").and_then(|d| d.split_once(':')) {
            Some((_, t)) if t != "ROOT" => children.entry(by_name[t]).or_default().push(c.index),
            _ => root = Some(c.index),
        }
    }
    fn longest(node: usize, children: &BTreeMap<usize, Vec<usize>>) -> usize {
        children
            .get(&node)
            .map_or(0, |cs| cs.iter().map(|&c| 1 + longest(c, children)).max().unwrap_or(0))
    }
    1 + longest(root.expect("root"), &children)
}

/// Sentences that always carry a subject, an object and verb morphology,
/// with a genitive chain of random length hanging off the object.
pub fn labeled_corpus_text(seed_value: u64, n: usize) -> String {
    let mut rng = seed::stream(seed_value, "test/corpus", "");
    let mut out = String::new();
    for i in 0..n {
        let chain = seed::index(&mut rng, 7);
        let noun = |rng: &mut _| if seed::index(rng, 2) == 0 { ("किताब", "NN") } else { ("किताबें", "NNS") };
        let (subj, subj_pos) = noun(&mut rng);
        let (obj, obj_pos) = noun(&mut rng);
        let gender = pick(&mut rng, &["m", "f", "n", "any"]);
        let number = pick(&mut rng, &["sg", "pl", "any"]);
        let person = pick(&mut rng, &["1", "2", "3", "3h"]);
        let verb = chain + 3;
        out.push_str(&format!("<Sentence id='g{i}'>\n"));
        out.push_str(&format!("1\t((\tNP\t<fs name='NP' drel='k1:VGF'>\n1.1\t{subj}\t{subj_pos}\n\t))\n"));
        out.push_str(&format!("2\t((\tNP\t<fs name='NP2' drel='k2:VGF'>\n2.1\t{obj}\t{obj_pos}\n\t))\n"));
        for c in 0..chain {
            let idx = c + 3;
            let parent = if c == 0 { "NP2".to_string() } else { format!("NP{}", idx - 1) };
            let word = pick(&mut rng, &["घर", "राजा", "बाग़", "पेड़"]);
            out.push_str(&format!(
                "{idx}\t((\tNP\t<fs name='NP{idx}' drel='r6:{parent}'>\n{idx}.1\t{word}\tNN\n{idx}.2\tका\tPSP\n\t))\n"
            ));
        }
        out.push_str(&format!(
            "{verb}\t((\tVGF\t<fs name='VGF'>\n{verb}.1\tपढ़ा\tVM\t<fs af='पढ़,v,{gender},{number},{person},,या,या'>\n\t))\n"
        ));
        out.push_str("</Sentence>\n");
    }
    out
}

/// Runs the CLI in-process and returns the exit code and captured stdout.
pub fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut argv = vec!["sentprobe"];
    argv.extend_from_slice(args);
    let code = sentprobe::cli::run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

/// validate -> build-dataset -> perturb -> fixture-embed -> probe -> report
/// under `root`; panics on any non-zero exit.
pub fn run_pipeline(root: &std::path::Path, seed_value: u64) {
    let corpus = root.join("hi_generated.ssf");
    std::fs::write(&corpus, labeled_corpus_text(17, 300)).unwrap();
    let sample = fixture_path("hi_sample.ssf");
    let s = seed_value.to_string();
    let p = |name: &str| root.join(name).display().to_string();
    let inputs = [sample.display().to_string(), corpus.display().to_string()];

    let steps: Vec<Vec<String>> = vec![
        vec!["validate".into(), inputs[0].clone(), inputs[1].clone()],
        vec!["build-dataset".into(), inputs[0].clone(), inputs[1].clone(), "--tasks".into(), "BShift,TreeDepth,SubjNum,VerbGen".into(), "--seed".into(), s.clone(), "--out".into(), p("data")],
        vec!["perturb".into(), p("data"), "--kinds".into(), "Shuffle,DropN,AppendR".into(), "--seed".into(), s.clone(), "--out".into(), p("perturbed")],
        vec!["fixture-embed".into(), p("data"), p("perturbed"), "--layers".into(), "4".into(), "--dim".into(), "16".into(), "--signal".into(), "3@2".into(), "--seed".into(), s.clone(), "--out".into(), p("emb")],
        vec!["probe".into(), "--datasets".into(), p("data"), p("perturbed"), "--embeddings".into(), p("emb"), "--seed".into(), s.clone(), "--out".into(), p("probe")],
        vec!["report".into(), p("probe/results.csv"), "--out".into(), p("report")],
    ];
    for step in steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let (code, out) = cli(&args);
        assert_eq!(code, 0, "{} failed:\n{out}", step[0]);
    }
}

/// Relative path -> bytes for every file under `root` with extension `ext`.
pub fn files_with_ext(root: &std::path::Path, ext: &str) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == ext) {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
