//! Robustness scores and their weighted aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::perturb::PerturbationKind;
use crate::probe::ProbeResult;

/// Default spread below which every layer counts as equally affected.
pub const EQUAL_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobustnessError {
    #[error("robustness is undefined when clean accuracy is 0")]
    UndefinedForZeroClean,
    #[error("need records for at least two layers, found {0}")]
    TooFewLayers(usize),
    #[error("no records to aggregate")]
    Empty,
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
}

/// `1 − (clean − perturbed) / clean`. Values above 1 mean the perturbed
/// input scored better than the clean one.
pub fn robustness_score(a_clean: f64, a_perturbed: f64) -> Result<f64, RobustnessError> {
    if a_clean == 0.0 {
        return Err(RobustnessError::UndefinedForZeroClean);
    }
    Ok(1.0 - (a_clean - a_perturbed) / a_clean)
}

pub fn improves_under_perturbation(score: f64) -> bool {
    score > 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRecord {
    pub task: String,
    pub model: String,
    pub language: String,
    pub layer: usize,
    pub perturbation: PerturbationKind,
    pub a_clean: f64,
    pub a_perturbed: f64,
    pub n_examples: usize,
    pub score: f64,
}

impl RobustnessRecord {
    pub fn new(
        task: &str,
        model: &str,
        language: &str,
        layer: usize,
        perturbation: PerturbationKind,
        a_clean: f64,
        a_perturbed: f64,
        n_examples: usize,
    ) -> Result<Self, RobustnessError> {
        Ok(RobustnessRecord {
            task: task.into(),
            model: model.into(),
            language: language.into(),
            layer,
            perturbation,
            a_clean,
            a_perturbed,
            n_examples,
            score: robustness_score(a_clean, a_perturbed)?,
        })
    }

    pub fn key(&self, dim: Dimension) -> KeyPart {
        match dim {
            Dimension::Task => KeyPart::Text(self.task.clone()),
            Dimension::Model => KeyPart::Text(self.model.clone()),
            Dimension::Language => KeyPart::Text(self.language.clone()),
            Dimension::Layer => KeyPart::Index(self.layer),
            Dimension::Perturbation => KeyPart::Text(self.perturbation.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinedRecords {
    pub records: Vec<RobustnessRecord>,
    /// Perturbed results whose clean accuracy is 0.
    pub undefined: usize,
    /// Perturbed results with no clean counterpart.
    pub unmatched: usize,
}

/// Pairs each perturbed result with the clean result for the same
/// (task, model, language, layer). Weights are perturbed example counts.
pub fn join_results(results: &[ProbeResult]) -> Result<JoinedRecords, RobustnessError> {
    type Key<'a> = (&'a str, &'a str, &'a str, usize);
    let clean: BTreeMap<Key<'_>, &ProbeResult> = results
        .iter()
        .filter(|r| r.variant == "clean")
        .map(|r| ((r.task.as_str(), r.model_name.as_str(), r.language.as_str(), r.layer), r))
        .collect();
    let mut out = JoinedRecords::default();
    for r in results.iter().filter(|r| r.variant != "clean") {
        let kind: PerturbationKind = r
            .variant
            .parse()
            .map_err(|_| RobustnessError::UnknownVariant(r.variant.clone()))?;
        let Some(c) = clean.get(&(r.task.as_str(), r.model_name.as_str(), r.language.as_str(), r.layer)) else {
            out.unmatched += 1;
            continue;
        };
        match RobustnessRecord::new(
            &r.task,
            &r.model_name,
            &r.language,
            r.layer,
            kind,
            c.mean_accuracy,
            r.mean_accuracy,
            r.n_examples,
        ) {
            Ok(rec) => out.records.push(rec),
            Err(RobustnessError::UndefinedForZeroClean) => out.undefined += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Dimension {
    Task,
    Model,
    Language,
    Layer,
    Perturbation,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Task,
        Dimension::Model,
        Dimension::Language,
        Dimension::Layer,
        Dimension::Perturbation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Task => "task",
            Dimension::Model => "model",
            Dimension::Language => "language",
            Dimension::Layer => "layer",
            Dimension::Perturbation => "perturbation",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = RobustnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| RobustnessError::UnknownDimension(s.to_string()))
    }
}

/// One coordinate of a table key; layers sort numerically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyPart {
    Index(usize),
    Text(String),
}

impl fmt::Display for KeyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyPart::Index(i) => write!(f, "{i}"),
            KeyPart::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub score: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessTable {
    pub group_dims: Vec<Dimension>,
    pub cells: BTreeMap<Vec<KeyPart>, Cell>,
}

fn weighted_mean<I>(items: I) -> BTreeMap<Vec<KeyPart>, Cell>
where
    I: IntoIterator<Item = (Vec<KeyPart>, f64, f64)>,
{
    let mut sums: BTreeMap<Vec<KeyPart>, (f64, f64)> = BTreeMap::new();
    for (key, score, weight) in items {
        let e = sums.entry(key).or_default();
        e.0 += weight * score;
        e.1 += weight;
    }
    sums.into_iter()
        .filter(|(_, (_, w))| *w > 0.0)
        .map(|(k, (ws, w))| (k, Cell { score: ws / w, weight: w }))
        .collect()
}

/// Weighted mean score per group key, marginalizing every other dimension.
pub fn aggregate(records: &[RobustnessRecord], group_dims: &[Dimension]) -> Result<RobustnessTable, RobustnessError> {
    if records.is_empty() {
        return Err(RobustnessError::Empty);
    }
    let cells = weighted_mean(
        records.iter().map(|r| {
            let key = group_dims.iter().map(|&d| r.key(d)).collect();
            (key, r.score, r.n_examples as f64)
        }),
    );
    Ok(RobustnessTable {
        group_dims: group_dims.to_vec(),
        cells,
    })
}

impl RobustnessTable {
    /// Aggregates this table further onto a subset of its dimensions,
    /// weighting each cell by its total weight.
    pub fn reaggregate(&self, dims: &[Dimension]) -> Option<RobustnessTable> {
        let positions: Vec<usize> = dims
            .iter()
            .map(|d| self.group_dims.iter().position(|g| g == d))
            .collect::<Option<_>>()?;
        let cells = weighted_mean(
            self.cells.iter().map(|(key, cell)| {
                let sub = positions.iter().map(|&p| key[p].clone()).collect();
                (sub, cell.score, cell.weight)
            }),
        );
        Some(RobustnessTable {
            group_dims: dims.to_vec(),
            cells,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = self.group_dims.iter().map(|d| d.name()).collect();
        header.extend(["score", "weight"]);
        out.write_record(&header)?;
        for (key, cell) in &self.cells {
            let mut rec: Vec<String> = key.iter().map(ToString::to_string).collect();
            rec.push(cell.score.to_string());
            rec.push(cell.weight.to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Renders a two-dimensional table as a heatmap: rows are values of the
    /// first dimension, columns of the second; red is low, green high.
    pub fn write_heatmap_png(&self, path: &Path) -> Result<(), image::ImageError> {
        const CELL: u32 = 24;
        let rows: BTreeSet<&KeyPart> = self.cells.keys().filter_map(|k| k.first()).collect();
        let cols: BTreeSet<&KeyPart> = self.cells.keys().filter_map(|k| k.get(1)).collect();
        let rows: Vec<_> = rows.into_iter().collect();
        let cols: Vec<_> = if cols.is_empty() { Vec::new() } else { cols.into_iter().collect() };
        let ncols = cols.len().max(1) as u32;
        let (lo, hi) = self
            .cells
            .values()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.score), hi.max(c.score)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut img = image::RgbImage::from_pixel(ncols * CELL, rows.len().max(1) as u32 * CELL, image::Rgb([255, 255, 255]));
        for (key, cell) in &self.cells {
            let r = rows.iter().position(|k| Some(*k) == key.first()).unwrap_or(0) as u32;
            let c = cols.iter().position(|k| Some(*k) == key.get(1)).unwrap_or(0) as u32;
            let t = ((cell.score - lo) / span).clamp(0.0, 1.0);
            let color = image::Rgb([(255.0 * (1.0 - t)) as u8, (200.0 * t) as u8, 60]);
            for y in 1..CELL - 1 {
                for x in 1..CELL - 1 {
                    img.put_pixel(c * CELL + x, r * CELL + y, color);
                }
            }
        }
        img.save(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerRanking {
    /// All layers are affected to about the same degree.
    Equal,
    /// Most affected (lowest score) first.
    Ranked(Vec<usize>),
}

impl fmt::Display for LayerRanking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerRanking::Equal => f.write_str("Equal"),
            LayerRanking::Ranked(layers) => {
                let parts: Vec<String> = layers.iter().map(ToString::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

/// Ranks layers by weighted-mean robustness, lowest first, and returns the
/// first `top_k`. Returns `Equal` when the spread of layer means is below
/// `threshold`.
pub fn most_affected_layers(
    records: &[RobustnessRecord],
    top_k: usize,
    threshold: f64,
) -> Result<LayerRanking, RobustnessError> {
    let table = aggregate(records, &[Dimension::Layer])?;
    if table.cells.len() < 2 {
        return Err(RobustnessError::TooFewLayers(table.cells.len()));
    }
    let mut layers: Vec<(usize, f64)> = table
        .cells
        .iter()
        .map(|(k, c)| match k[0] {
            KeyPart::Index(l) => (l, c.score),
            KeyPart::Text(_) => unreachable!("layer keys are indices"),
        })
        .collect();
    let (lo, hi) = layers
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, s)| (lo.min(s), hi.max(s)));
    if hi - lo < threshold {
        return Ok(LayerRanking::Equal);
    }
    layers.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(LayerRanking::Ranked(layers.into_iter().take(top_k).map(|(l, _)| l).collect()))
}

/// Most affected layers for every (task, language) pair.
pub fn layerwise_summary(
    records: &[RobustnessRecord],
    top_k: usize,
    threshold: f64,
) -> BTreeMap<(String, String), Result<LayerRanking, RobustnessError>> {
    let mut groups: BTreeMap<(String, String), Vec<RobustnessRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.task.clone(), r.language.clone()))
            .or_default()
            .push(r.clone());
    }
    groups
        .into_iter()
        .map(|(k, rs)| (k, most_affected_layers(&rs, top_k, threshold)))
        .collect()
}
