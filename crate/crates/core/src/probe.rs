//! Layer-wise linear probes: L2-regularized multinomial logistic regression
//! evaluated with stratified k-fold cross-validation.
//!
//! The training objective is
//!
//! ```text
//! J(W, b) = ½‖W‖²_F + C · Σᵢ −log softmax(W·xᵢ + b)[yᵢ]
//! ```
//!
//! with the bias left unregularized. It is minimized by limited-memory
//! BFGS with a backtracking (Armijo) line search.

use std::collections::{BTreeSet, VecDeque};
use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingSet;
use crate::labels::ProbingExample;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub c_inverse_reg: f64,
    pub penalty: String,
    pub objective_mode: String,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub folds: usize,
    pub seed: u64,
    /// Standardize features with training-fold statistics.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            c_inverse_reg: 20.0,
            penalty: "l2".into(),
            objective_mode: "multinomial".into(),
            max_iterations: 1000,
            gradient_tolerance: 1e-5,
            folds: 5,
            seed: 0,
            standardize: false,
        }
    }
}

impl ProbeConfig {
    pub fn check(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::InvalidConfig(m.to_string()));
        if !(self.c_inverse_reg > 0.0 && self.c_inverse_reg.is_finite()) {
            return bad("c_inverse_reg must be a positive finite number");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.gradient_tolerance > 0.0) {
            return bad("gradient_tolerance must be positive");
        }
        if !self.penalty.eq_ignore_ascii_case("l2") {
            return bad("only the l2 penalty is supported");
        }
        if !self.objective_mode.eq_ignore_ascii_case("multinomial") {
            return bad("only the multinomial objective is supported");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("class {class} has {count} examples, fewer than {folds} folds")]
    ClassTooSmall { class: usize, count: usize, folds: usize },
    #[error("example `{0}` has no embedding row")]
    AlignmentMismatch(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("layer {layer} outside 0..{n_layers}")]
    LayerOutOfRange { layer: usize, n_layers: usize },
}

/// Features and labels checked for shape, range and finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    x: Array2<f64>,
    y: Vec<usize>,
    class_count: usize,
}

impl LabeledMatrix {
    pub fn new(x: Array2<f64>, y: Vec<usize>, class_count: usize) -> Result<Self, ProbeError> {
        let bad = |m: String| Err(ProbeError::InvalidData(m));
        if class_count < 2 {
            return bad(format!("class_count must be at least 2, got {class_count}"));
        }
        if x.nrows() != y.len() {
            return bad(format!("{} rows but {} labels", x.nrows(), y.len()));
        }
        if let Some(&l) = y.iter().find(|&&l| l >= class_count) {
            return bad(format!("label {l} out of range for {class_count} classes"));
        }
        if y.iter().collect::<BTreeSet<_>>().len() < 2 {
            return bad("labels must cover at least two classes".into());
        }
        if x.iter().any(|v| !v.is_finite()) {
            return bad("features contain non-finite values".into());
        }
        Ok(LabeledMatrix { x, y, class_count })
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ProbeModel {
    pub fn zeros(class_count: usize, dim: usize) -> Self {
        ProbeModel {
            weights: Array2::zeros((class_count, dim)),
            bias: Array1::zeros(class_count),
        }
    }

    pub fn scores(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        predict_from_scores(&self.scores(x))
    }

    /// Flat parameters: weights row-major, then bias.
    pub fn to_params(&self) -> Vec<f64> {
        self.weights.iter().chain(self.bias.iter()).copied().collect()
    }

    pub fn from_params(params: &[f64], class_count: usize, dim: usize) -> Self {
        let split = class_count * dim;
        ProbeModel {
            weights: Array2::from_shape_vec((class_count, dim), params[..split].to_vec()).expect("shape"),
            bias: Array1::from_vec(params[split..].to_vec()),
        }
    }
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict_from_scores(scores: &Array2<f64>) -> Vec<usize> {
    scores.rows().into_iter().map(|row| argmax(row)).collect()
}

fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Objective value and gradient (weights then bias, row-major).
pub fn objective_and_gradient(model: &ProbeModel, data: &LabeledMatrix, c: f64) -> (f64, Vec<f64>) {
    let x = data.x();
    let z = model.scores(x);
    let k = data.class_count;
    let mut loss = 0.0;
    let mut residual = Array2::<f64>::zeros((x.nrows(), k));
    for (i, zrow) in z.rows().into_iter().enumerate() {
        let max = zrow.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = zrow.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - zrow[data.y[i]];
        for (j, &v) in zrow.iter().enumerate() {
            residual[[i, j]] = (v - lse).exp();
        }
        residual[[i, data.y[i]]] -= 1.0;
    }
    let reg = 0.5 * model.weights.iter().map(|w| w * w).sum::<f64>();
    let grad_w = residual.t().dot(&x) * c + &model.weights;
    let grad_b = residual.sum_axis(Axis(0)) * c;
    let grad = grad_w.iter().chain(grad_b.iter()).copied().collect();
    (reg + c * loss, grad)
}

pub fn objective(model: &ProbeModel, data: &LabeledMatrix, c: f64) -> f64 {
    objective_and_gradient(model, data, c).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The line search could not reduce the objective further.
    Stalled,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::Stalled => "stalled",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Termination::Converged, Termination::MaxIterations, Termination::Stalled]
            .into_iter()
            .find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: ProbeModel,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

const LBFGS_MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn train(data: &LabeledMatrix, cfg: &ProbeConfig) -> Result<TrainReport, ProbeError> {
    cfg.check()?;
    let (k, d) = (data.class_count, data.x.ncols());
    let c = cfg.c_inverse_reg;
    let eval = |p: &[f64]| objective_and_gradient(&ProbeModel::from_params(p, k, d), data, c);

    let mut params = vec![0.0; k * d + k];
    let (mut f, mut g) = eval(&params);
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    for iteration in 0..cfg.max_iterations {
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::NonFiniteLoss { iteration });
        }
        if inf_norm(&g) < cfg.gradient_tolerance {
            return Ok(report(params, k, d, iteration, Termination::Converged, trace));
        }

        let mut dir = lbfgs_direction(&g, &history);
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        if history.is_empty() {
            // first step or restart: unit-length steepest descent
            let norm = dot(&dir, &dir).sqrt();
            dir.iter_mut().for_each(|v| *v /= norm);
            slope /= norm;
        }

        let mut step = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = params.iter().zip(&dir).map(|(p, s)| p + step * s).collect();
            let (ft, gt) = eval(&trial);
            if ft.is_finite() && ft <= f + ARMIJO * step * slope {
                break Some((trial, ft, gt));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((trial, ft, gt)) = accepted else {
            return Ok(report(params, k, d, iteration, Termination::Stalled, trace));
        };

        let s: Vec<f64> = trial.iter().zip(&params).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == LBFGS_MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let stalled = ft >= f;
        params = trial;
        f = ft;
        g = gt;
        trace.push(f);
        if stalled && inf_norm(&g) >= cfg.gradient_tolerance {
            return Ok(report(params, k, d, iteration + 1, Termination::Stalled, trace));
        }
    }
    let term = if inf_norm(&g) < cfg.gradient_tolerance {
        Termination::Converged
    } else {
        Termination::MaxIterations
    };
    Ok(report(params, k, d, cfg.max_iterations, term, trace))
}

fn report(params: Vec<f64>, k: usize, d: usize, iterations: usize, termination: Termination, trace: Vec<f64>) -> TrainReport {
    TrainReport {
        model: ProbeModel::from_params(&params, k, d),
        iterations,
        termination,
        objective_trace: trace,
    }
}

/// Two-loop recursion: approximates −H⁻¹·g from the stored pairs.
fn lbfgs_direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn evaluate(model: &ProbeModel, x: ArrayView2<'_, f64>, y: &[usize]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let hits = model.predict(x).iter().zip(y).filter(|(p, t)| p == t).count();
    hits as f64 / y.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified folds: each class is shuffled under `seed` and dealt
/// round-robin, continuing from where the previous class stopped, so both
/// per-class and total fold sizes differ by at most one.
pub fn stratified_kfold(y: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>, ProbeError> {
    if k < 2 {
        return Err(ProbeError::InvalidConfig("folds must be at least 2".into()));
    }
    let classes: BTreeSet<usize> = y.iter().copied().collect();
    let mut assignment = vec![0usize; y.len()];
    let mut offset = 0;
    for &class in &classes {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if members.len() < k {
            return Err(ProbeError::ClassTooSmall {
                class,
                count: members.len(),
                folds: k,
            });
        }
        let mut rng = seed::stream(seed, "kfold", &class.to_string());
        seed::shuffle(&mut rng, &mut members);
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok((0..k)
        .map(|f| {
            let (test, train) = (0..y.len()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}

fn select_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

fn standardize(train: &mut Array2<f64>, test: &mut Array2<f64>) {
    let n = train.nrows() as f64;
    for j in 0..train.ncols() {
        let col = train.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        train.column_mut(j).mapv_inplace(|v| (v - mean) / sd);
        test.column_mut(j).mapv_inplace(|v| (v - mean) / sd);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub accuracies: Vec<f64>,
    pub termination: Termination,
}

/// Trains and scores one model per fold.
pub fn cross_validate(
    x: &Array2<f64>,
    y: &[usize],
    class_count: usize,
    folds: &[Fold],
    cfg: &ProbeConfig,
) -> Result<FoldOutcome, ProbeError> {
    let mut accuracies = Vec::with_capacity(folds.len());
    let mut termination = Termination::Converged;
    for fold in folds {
        let mut xtr = select_rows(x, &fold.train);
        let mut xte = select_rows(x, &fold.test);
        if cfg.standardize {
            standardize(&mut xtr, &mut xte);
        }
        let ytr: Vec<usize> = fold.train.iter().map(|&i| y[i]).collect();
        let yte: Vec<usize> = fold.test.iter().map(|&i| y[i]).collect();
        let report = train(&LabeledMatrix::new(xtr, ytr, class_count)?, cfg)?;
        if report.termination != Termination::Converged {
            termination = report.termination;
        }
        accuracies.push(evaluate(&report.model, xte.view(), &yte));
    }
    Ok(FoldOutcome { accuracies, termination })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: String,
    pub model_name: String,
    pub language: String,
    pub layer: usize,
    /// `clean` or a perturbation name.
    pub variant: String,
    pub n_examples: usize,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub termination: Termination,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Rows of `embeddings` for each example, in example order.
pub fn align(embeddings: &EmbeddingSet, examples: &[ProbingExample]) -> Result<Vec<usize>, ProbeError> {
    let rows = embeddings.row_of();
    examples
        .iter()
        .map(|e| {
            rows.get(e.id.as_str())
                .copied()
                .ok_or_else(|| ProbeError::AlignmentMismatch(e.id.clone()))
        })
        .collect()
}

/// Probes one layer for one group of examples (one task, one language).
/// Folds depend only on the labels and seed, so every layer of a dataset
/// sees the same splits.
pub fn run_probe(
    embeddings: &EmbeddingSet,
    examples: &[ProbingExample],
    layer: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult, ProbeError> {
    let first = examples
        .first()
        .ok_or_else(|| ProbeError::InvalidData("no examples".into()))?;
    if layer >= embeddings.n_layers() {
        return Err(ProbeError::LayerOutOfRange {
            layer,
            n_layers: embeddings.n_layers(),
        });
    }
    let rows = align(embeddings, examples)?;
    let y: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let folds = stratified_kfold(&y, cfg.folds, cfg.seed)?;
    let x = embeddings.layer_matrix(layer, &rows);
    let outcome = cross_validate(&x, &y, first.task.class_count(), &folds, cfg)?;
    Ok(ProbeResult {
        task: first.task.to_string(),
        model_name: embeddings.header.model_name.clone(),
        language: first.lang.clone(),
        layer,
        variant: first.perturbation.map_or_else(|| "clean".to_string(), |k| k.to_string()),
        n_examples: examples.len(),
        mean_accuracy: mean(&outcome.accuracies),
        fold_accuracies: outcome.accuracies,
        termination: outcome.termination,
    })
}

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("results csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("results csv row {row}: {message}")]
    Invalid { row: usize, message: String },
}

const LEADING: [&str; 6] = ["task", "model", "language", "layer", "variant", "n_examples"];

pub fn write_results_csv<W: Write>(w: W, results: &[ProbeResult]) -> Result<(), ResultsError> {
    let folds = results.iter().map(|r| r.fold_accuracies.len()).max().unwrap_or(5);
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = LEADING.iter().map(|s| s.to_string()).collect();
    header.extend((0..folds).map(|i| format!("fold{i}")));
    header.push("mean_accuracy".into());
    header.push("termination_reason".into());
    out.write_record(&header)?;
    for r in results {
        let mut rec = vec![
            r.task.clone(),
            r.model_name.clone(),
            r.language.clone(),
            r.layer.to_string(),
            r.variant.clone(),
            r.n_examples.to_string(),
        ];
        rec.extend((0..folds).map(|i| r.fold_accuracies.get(i).map(f64::to_string).unwrap_or_default()));
        rec.push(r.mean_accuracy.to_string());
        rec.push(r.termination.as_str().to_string());
        out.write_record(&rec)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_results_csv<R: Read>(r: R) -> Result<Vec<ProbeResult>, ResultsError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let pos = |name: &str| header.iter().position(|h| h == name);
    let invalid = |row: usize, message: String| ResultsError::Invalid { row, message };
    let mut cols = Vec::new();
    for name in LEADING.iter().chain(&["mean_accuracy", "termination_reason"]) {
        cols.push(pos(name).ok_or_else(|| invalid(0, format!("missing column `{name}`")))?);
    }
    let fold_cols: Vec<usize> = (0..)
        .map_while(|i| pos(&format!("fold{i}")))
        .collect();

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize, name: &str| -> Result<f64, ResultsError> {
            let v: f64 = field(c)
                .parse()
                .map_err(|_| invalid(row, format!("`{name}` is not a number")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(row, format!("`{name}` = {v} outside [0, 1]")));
            }
            Ok(v)
        };
        let int = |c: usize, name: &str| -> Result<usize, ResultsError> {
            field(c)
                .parse()
                .map_err(|_| invalid(row, format!("`{name}` is not a non-negative integer")))
        };
        let mut fold_accuracies = Vec::new();
        for (f, &c) in fold_cols.iter().enumerate() {
            if !field(c).is_empty() {
                fold_accuracies.push(num(c, &format!("fold{f}"))?);
            }
        }
        let termination = Termination::parse(field(cols[7]))
            .ok_or_else(|| invalid(row, format!("unknown termination `{}`", field(cols[7]))))?;
        out.push(ProbeResult {
            task: field(cols[0]).to_string(),
            model_name: field(cols[1]).to_string(),
            language: field(cols[2]).to_string(),
            layer: int(cols[3], "layer")?,
            variant: field(cols[4]).to_string(),
            n_examples: int(cols[5], "n_examples")?,
            fold_accuracies,
            mean_accuracy: num(cols[6], "mean_accuracy")?,
            termination,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn kfold_divisible_case() {
        let y: Vec<usize> = (0..100).map(|i| usize::from(i >= 50)).collect();
        let folds = stratified_kfold(&y, 5, 3).unwrap();
        for f in &folds {
            assert_eq!(f.test.iter().filter(|&&i| y[i] == 0).count(), 10);
            assert_eq!(f.test.iter().filter(|&&i| y[i] == 1).count(), 10);
            assert_eq!(f.train.len(), 80);
        }
    }

    #[test]
    fn kfold_uneven_case() {
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 7)).collect();
        for f in stratified_kfold(&y, 5, 11).unwrap() {
            let zeros = f.test.iter().filter(|&&i| y[i] == 0).count();
            let ones = f.test.len() - zeros;
            assert!((1..=2).contains(&zeros), "{zeros}");
            assert!((2..=3).contains(&ones), "{ones}");
        }
    }

    #[test]
    fn kfold_small_class() {
        let y = [0, 0, 0, 1, 1, 1, 1, 1, 1];
        assert_eq!(
            stratified_kfold(&y, 5, 0).unwrap_err(),
            ProbeError::ClassTooSmall { class: 0, count: 3, folds: 5 }
        );
    }

    #[test]
    fn labeled_matrix_rejects_single_class() {
        let x = Array2::zeros((4, 2));
        assert!(LabeledMatrix::new(x.clone(), vec![1, 1, 1, 1], 2).is_err());
        assert!(LabeledMatrix::new(x.clone(), vec![0, 1, 2, 1], 2).is_err());
        assert!(LabeledMatrix::new(x, vec![0, 1, 0, 1], 1).is_err());
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let mut rng = seed::stream(1, "blobs", "");
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let center = if c == 0 { -3.0 } else { 3.0 };
            rows.push(center + 0.5 * seed::standard_normal(&mut rng));
            rows.push(center + 0.5 * seed::standard_normal(&mut rng));
            y.push(c);
        }
        let x = Array2::from_shape_vec((40, 2), rows).unwrap();
        let data = LabeledMatrix::new(x.clone(), y.clone(), 2).unwrap();
        let report = train(&data, &ProbeConfig::default()).unwrap();
        assert_eq!(report.termination, Termination::Converged);
        assert_eq!(evaluate(&report.model, x.view(), &y), 1.0);
    }

    #[test]
    fn evaluate_constant_model() {
        let model = ProbeModel::zeros(2, 1);
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        assert_eq!(evaluate(&model, x.view(), &[0, 1, 0, 1]), 0.5);
    }

    #[test]
    fn argmax_ties_take_lowest_class() {
        let scores = array![[1.0, 1.0, 0.0], [0.0, 2.0, 2.0], [3.0, 3.0, 3.0]];
        assert_eq!(predict_from_scores(&scores), [0, 1, 0]);
    }

    #[test]
    fn config_validation() {
        assert!(ProbeConfig { c_inverse_reg: 0.0, ..Default::default() }.check().is_err());
        assert!(ProbeConfig { folds: 1, ..Default::default() }.check().is_err());
        assert!(ProbeConfig { penalty: "l1".into(), ..Default::default() }.check().is_err());
        ProbeConfig::default().check().unwrap();
    }

    #[test]
    fn results_csv_round_trip() {
        let r = ProbeResult {
            task: "SentLen".into(),
            model_name: "m".into(),
            language: "hi".into(),
            layer: 3,
            variant: "clean".into(),
            n_examples: 10,
            fold_accuracies: vec![0.5, 1.0, 0.75, 0.25, 0.5],
            mean_accuracy: 0.6,
            termination: Termination::Converged,
        };
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &[r.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "task,model,language,layer,variant,n_examples,fold0,fold1,fold2,fold3,fold4,mean_accuracy,termination_reason\n"
        ));
        assert_eq!(read_results_csv(&buf[..]).unwrap(), vec![r]);
    }

    #[test]
    fn results_csv_rejects_garbage() {
        let text = "task,model,language,layer,variant,n_examples,fold0,mean_accuracy,termination_reason\n\
SentLen,m,hi,x,clean,10,0.5,0.5,converged\n";
        assert!(matches!(read_results_csv(text.as_bytes()), Err(ResultsError::Invalid { row: 1, .. })));
        let text = "task,model\n";
        assert!(read_results_csv(text.as_bytes()).is_err());
    }
}
