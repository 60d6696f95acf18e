//! Classification harness and retrieval trade-off sweeps.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::Vector;
use crate::error::{Error, Result};
use crate::retrieval::{greedy_dkmips, DualSpaceItem, RetrievalConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 200,
            learning_rate: 0.5,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier<L> {
    /// Class labels in ascending order; also the tie-break order.
    pub classes: Vec<L>,
    /// `classes.len()` rows of feature weights.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl<L: Clone> LinearClassifier<L> {
    pub fn feature_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| b + crate::encoder::dot(w, x))
            .collect()
    }

    fn predict_index(&self, x: &[f64]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for (c, v) in z.iter().enumerate().skip(1) {
            if *v > z[best] {
                best = c;
            }
        }
        best
    }

    pub fn predict(&self, x: &[f64]) -> Result<L> {
        if x.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                got: x.len(),
            });
        }
        Ok(self.classes[self.predict_index(x)].clone())
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Result<Vec<L>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

fn cross_entropy<L: Clone>(model: &LinearClassifier<L>, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let total: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let mut p = model.logits(x);
            softmax_in_place(&mut p);
            -p[y].max(f64::MIN_POSITIVE).ln()
        })
        .sum();
    total / xs.len() as f64
}

/// Fits a softmax classifier by seeded mini-batch gradient descent from zero
/// weights. Returns the model and its final mean training cross-entropy.
pub fn train_classifier<L: Ord + Clone>(
    xs: &[Vec<f64>],
    ys: &[L],
    config: &ClassifierConfig,
) -> Result<(LinearClassifier<L>, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!("{} feature rows for {} labels", xs.len(), ys.len())));
    }
    if xs.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::invalid("batch size and learning rate must be positive"));
    }
    let dim = xs[0].len();
    if let Some(x) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    let classes: Vec<L> = ys.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    let targets: Vec<usize> = ys
        .iter()
        .map(|y| classes.binary_search(y).expect("label collected above"))
        .collect();

    let n_classes = classes.len();
    let mut model = LinearClassifier {
        classes,
        weights: vec![vec![0.0; dim]; n_classes],
        biases: vec![0.0; n_classes],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut grad_w = vec![vec![0.0; dim]; n_classes];
    let mut grad_b = vec![0.0; n_classes];

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad_w.iter_mut().for_each(|g| g.fill(0.0));
            grad_b.fill(0.0);
            for &i in batch {
                let x = &xs[i];
                let mut p = model.logits(x);
                softmax_in_place(&mut p);
                p[targets[i]] -= 1.0;
                for (c, &err) in p.iter().enumerate() {
                    grad_b[c] += err;
                    for (g, xv) in grad_w[c].iter_mut().zip(x) {
                        *g += err * xv;
                    }
                }
            }
            let step = config.learning_rate / batch.len() as f64;
            for c in 0..n_classes {
                model.biases[c] -= step * grad_b[c];
                for (w, g) in model.weights[c].iter_mut().zip(&grad_w[c]) {
                    *w -= step * g;
                }
            }
        }
    }
    let loss = cross_entropy(&model, xs, &targets);
    Ok((model, loss))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub classes: Vec<String>,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[gold][pred]`, classes in ascending order.
    pub confusion: Vec<Vec<usize>>,
    /// Classes never predicted; their precision was set to 0 by convention.
    pub absent_from_pred: Vec<String>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Accuracy, macro precision/recall/F1 and micro F1 over the union of labels
/// seen in `pred` and `gold`. Undefined per-class ratios (0/0) count as 0.
pub fn compute_metrics<L: Ord + Clone + Display>(pred: &[L], gold: &[L]) -> Result<ClassificationReport> {
    if pred.len() != gold.len() {
        return Err(Error::invalid(format!("{} predictions for {} gold labels", pred.len(), gold.len())));
    }
    if gold.is_empty() {
        return Err(Error::invalid("no labels to score"));
    }
    let classes: Vec<L> = pred.iter().chain(gold).cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let pos = |l: &L| classes.binary_search(l).expect("label collected above");
    let n = classes.len();
    let mut confusion = vec![vec![0usize; n]; n];
    for (p, g) in pred.iter().zip(gold) {
        confusion[pos(g)][pos(p)] += 1;
    }

    let total = gold.len();
    let trace: usize = (0..n).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(n);
    let mut absent = Vec::new();
    for (c, label) in classes.iter().enumerate() {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        if predicted == 0 {
            absent.push(label.to_string());
        }
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        per_class.push(ClassMetrics {
            class: label.to_string(),
            precision,
            recall,
            f1: f1(precision, recall),
            support,
            predicted,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n as f64;

    // pooled counts: every error is one false positive and one false negative
    let (tp, fp, fn_) = (trace, total - trace, total - trace);
    let micro_p = ratio(tp, tp + fp);
    let micro_r = ratio(tp, tp + fn_);

    Ok(ClassificationReport {
        classes: classes.iter().map(ToString::to_string).collect(),
        accuracy: ratio(trace, total),
        precision_macro: mean(|m| m.precision),
        recall_macro: mean(|m| m.recall),
        f1_macro: mean(|m| m.f1),
        f1_micro: f1(micro_p, micro_r),
        per_class,
        confusion,
        absent_from_pred: absent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontierRow {
    pub mu: f64,
    pub mean_sim: f64,
    pub mean_div: f64,
}

/// Runs greedy retrieval for every (μ, query) pair and averages Sim and Div
/// over queries. Rows follow the order of `mu_values`.
pub fn frontier_sweep(
    pool: &[DualSpaceItem],
    queries: &[Vector],
    mu_values: &[f64],
    template: &RetrievalConfig,
) -> Result<Vec<FrontierRow>> {
    if mu_values.is_empty() {
        return Err(Error::invalid("no mu values to sweep"));
    }
    if queries.is_empty() {
        return Err(Error::invalid("no queries"));
    }
    if template.k < 2 {
        return Err(Error::invalid("frontier sweep needs k >= 2 for the Div metric"));
    }
    if let Some(mu) = mu_values.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
        return Err(Error::invalid(format!("mu = {mu} outside (0, 1)")));
    }
    let jobs: Vec<(usize, usize)> = (0..mu_values.len())
        .flat_map(|m| (0..queries.len()).map(move |q| (m, q)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(m, q)| {
            let cfg = RetrievalConfig {
                mu: mu_values[m],
                ..*template
            };
            greedy_dkmips(pool, &queries[q], &cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let nq = queries.len() as f64;
    Ok(mu_values
        .iter()
        .enumerate()
        .map(|(m, &mu)| {
            let chunk = &results[m * queries.len()..(m + 1) * queries.len()];
            FrontierRow {
                mu,
                mean_sim: chunk.iter().map(|r| r.sim).sum::<f64>() / nq,
                mean_div: chunk.iter().map(|r| r.div.unwrap_or(0.0)).sum::<f64>() / nq,
            }
        })
        .collect())
}

pub fn write_frontier<W: Write>(rows: &[FrontierRow], mut out: W) -> Result<()> {
    writeln!(out, "mu\tmean_sim\tmean_div")?;
    for r in rows {
        writeln!(out, "{}\t{}\t{}", r.mu, r.mean_sim, r.mean_div)?;
    }
    Ok(())
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// series is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
