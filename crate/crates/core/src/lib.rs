//! Probing-task toolkit for annotated Indic-language corpora.
//!
//! The pipeline runs in stages, each with its own module:
//!
//! * [`ssf`] parses and writes Shakti Standard Format corpora.
//! * [`labels`] derives the eight probing datasets from parsed sentences.
//! * [`perturb`] applies the thirteen rule-based text perturbations.
//! * [`embedding`] reads and writes `.prbemb` layer-wise embedding files
//!   and generates synthetic fixtures.
//! * [`probe`] trains multinomial logistic-regression probes per layer
//!   under stratified k-fold cross-validation.
//! * [`robustness`] turns clean/perturbed accuracies into robustness
//!   scores and aggregate tables.

pub mod cli;
pub mod embedding;
pub mod labels;
pub mod perturb;
pub mod probe;
pub mod robustness;
pub mod seed;
pub mod ssf;
