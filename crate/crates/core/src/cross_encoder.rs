//! Bias-alignment scoring.
//!
//! An [`AlignmentScorer`] maps an (article, indicator) pair to a score in the
//! open interval (0, 1). Scorers are trained on weak labels derived from
//! outlet ratings and cluster membership:
//!
//! | origin         | article class | left indicator | right indicator |
//! |----------------|---------------|----------------|-----------------|
//! | in cluster     | Left          | 1              | 0               |
//! | in cluster     | Center        | 0              | 0               |
//! | in cluster     | Right         | 0              | 1               |
//! | out of cluster | any           | 0              | 0               |
//!
//! The reference scorer is bilinear over frozen encoder vectors,
//! `σ(aᵀWb + u·a + v·b + c)`, trained with mean squared error.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BiasClass, Corpus};
use crate::encoder::{post_json, EncoderProvider, TextItem, Vector};
use crate::error::{Error, Result};
use crate::topic_index::{left_key, right_key};
use crate::topic_mining::{ControversialCluster, Topic};

pub const DEFAULT_NEGATIVES_PER_ARTICLE: usize = 2;
/// Learning rate and batch size used for large pretrained cross-encoders.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-6;
pub const DEFAULT_BATCH_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    LeftIndicator,
    RightIndicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    InCluster,
    OutOfCluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakPair {
    pub article_id: String,
    pub topic_id: usize,
    pub side: Side,
    pub label: f64,
    pub origin: Origin,
}

/// The weak label for one (class, side, origin) combination.
pub fn weak_label(class: BiasClass, side: Side, origin: Origin) -> f64 {
    match (origin, class, side) {
        (Origin::InCluster, BiasClass::Left, Side::LeftIndicator)
        | (Origin::InCluster, BiasClass::Right, Side::RightIndicator) => 1.0,
        _ => 0.0,
    }
}

/// Emits weak pairs for every article in a controversial cluster: two
/// in-cluster pairs, then two zero-labeled pairs for each of
/// `negatives_per_article` distinct out-of-cluster topics drawn without
/// replacement.
pub fn generate_weak_labels(
    corpus: &Corpus,
    clusters: &[ControversialCluster],
    topics: &[Topic],
    negatives_per_article: usize,
    seed: u64,
) -> Result<Vec<WeakPair>> {
    let mut topic_of_cluster = HashMap::new();
    for t in topics {
        if topic_of_cluster.insert(t.source_cluster, t.topic_id).is_some() {
            return Err(Error::validation(format!(
                "cluster {} has more than one topic",
                t.source_cluster
            )));
        }
    }
    for c in clusters {
        if !topic_of_cluster.contains_key(&c.cluster_index) {
            return Err(Error::validation(format!("cluster {} has no topic", c.cluster_index)));
        }
    }
    if negatives_per_article > topics.len().saturating_sub(1) {
        return Err(Error::invalid(format!(
            "{negatives_per_article} negatives requested but only {} out-of-cluster topics exist",
            topics.len().saturating_sub(1)
        )));
    }

    let index = corpus.id_index();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for cluster in clusters {
        let own = topic_of_cluster[&cluster.cluster_index];
        let others: Vec<usize> = topics.iter().map(|t| t.topic_id).filter(|&t| t != own).collect();
        for id in &cluster.member_ids {
            let article = &corpus.articles[*index.get(id.as_str()).ok_or_else(|| Error::Lookup(id.clone()))?];
            let class = corpus.class_of(article)?;
            let mut push = |topic_id, origin| {
                for side in [Side::LeftIndicator, Side::RightIndicator] {
                    pairs.push(WeakPair {
                        article_id: id.clone(),
                        topic_id,
                        side,
                        label: weak_label(class, side, origin),
                        origin,
                    });
                }
            };
            push(own, Origin::InCluster);
            for j in sample(&mut rng, others.len(), negatives_per_article) {
                push(others[j], Origin::OutOfCluster);
            }
        }
    }
    Ok(pairs)
}

pub trait AlignmentScorer: Send + Sync {
    fn name(&self) -> &str;

    /// Alignment of `article` with `indicator`, strictly inside (0, 1).
    fn score_item(&self, article: TextItem<'_>, indicator: TextItem<'_>) -> Result<f64>;

    fn score_items(&self, pairs: &[(TextItem<'_>, TextItem<'_>)]) -> Result<Vec<f64>> {
        pairs.iter().map(|(a, b)| self.score_item(*a, *b)).collect()
    }
}

/// Scores free text, using each text as its own key.
pub fn score(scorer: &dyn AlignmentScorer, article_text: &str, indicator_text: &str) -> Result<f64> {
    if article_text.trim().is_empty() || indicator_text.trim().is_empty() {
        return Err(Error::invalid("cannot score empty text"));
    }
    scorer.score_item(
        TextItem::new(article_text, article_text),
        TextItem::new(indicator_text, indicator_text),
    )
}

/// Logistic function, kept strictly inside (0, 1) even where `f64` rounding
/// would saturate it.
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Parameters of the bilinear scorer. `w` is row-major `dim × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearParams {
    pub dim: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub c: f64,
}

/// Gradient of a single pair's squared error, same layout as [`BilinearParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub c: f64,
}

/// Nonzero coordinates of a vector; mock-encoder vectors are mostly zeros.
#[derive(Debug, Clone)]
struct Sparse {
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Sparse {
    fn from_dense(v: &[f64]) -> Self {
        let (idx, val) = v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, x)| (i, *x)).unzip();
        Sparse { idx, val }
    }

    fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx.iter().copied().zip(self.val.iter().copied())
    }
}

impl BilinearParams {
    pub fn zeros(dim: usize) -> Self {
        BilinearParams {
            dim,
            w: vec![0.0; dim * dim],
            u: vec![0.0; dim],
            v: vec![0.0; dim],
            c: 0.0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.dim * self.dim + 2 * self.dim + 1
    }

    fn check(&self, a: &Vector, b: &Vector) -> Result<()> {
        for x in [a, b] {
            if x.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: x.dim(),
                });
            }
        }
        Ok(())
    }

    fn logit_sparse(&self, a: &Sparse, b: &Sparse) -> f64 {
        let mut z = self.c;
        for (i, ai) in a.iter() {
            let row = &self.w[i * self.dim..(i + 1) * self.dim];
            let wb: f64 = b.iter().map(|(j, bj)| row[j] * bj).sum();
            z += ai * (wb + self.u[i]);
        }
        z + b.iter().map(|(j, bj)| self.v[j] * bj).sum::<f64>()
    }

    pub fn logit(&self, a: &Vector, b: &Vector) -> Result<f64> {
        self.check(a, b)?;
        Ok(self.logit_sparse(&Sparse::from_dense(a.as_slice()), &Sparse::from_dense(b.as_slice())))
    }

    pub fn predict(&self, a: &Vector, b: &Vector) -> Result<f64> {
        Ok(sigmoid(self.logit(a, b)?))
    }

    /// Analytic gradient of `(σ(z) - label)^2`. Every partial shares the
    /// scalar factor `g = 2(σ - label)σ(1 - σ)`, so the W part is the outer
    /// product `g·a·bᵀ`.
    pub fn gradient(&self, a: &Vector, b: &Vector, label: f64) -> Result<Gradient> {
        let s = self.predict(a, b)?;
        let g = 2.0 * (s - label) * s * (1.0 - s);
        let (a, b) = (a.as_slice(), b.as_slice());
        let mut w = vec![0.0; self.dim * self.dim];
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                w[i * self.dim + j] = g * ai * bj;
            }
        }
        Ok(Gradient {
            w,
            u: a.iter().map(|x| g * x).collect(),
            v: b.iter().map(|x| g * x).collect(),
            c: g,
        })
    }

    fn get(&self, k: usize) -> f64 {
        let d2 = self.dim * self.dim;
        match k {
            k if k < d2 => self.w[k],
            k if k < d2 + self.dim => self.u[k - d2],
            k if k < d2 + 2 * self.dim => self.v[k - d2 - self.dim],
            _ => self.c,
        }
    }

    fn set(&mut self, k: usize, x: f64) {
        let d2 = self.dim * self.dim;
        let dim = self.dim;
        match k {
            k if k < d2 => self.w[k] = x,
            k if k < d2 + dim => self.u[k - d2] = x,
            k if k < d2 + 2 * dim => self.v[k - d2 - dim] = x,
            _ => self.c = x,
        }
    }

    /// Writes the checkpoint format: `dim=<D>`, D rows of W, then u, v, c.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "dim={}", self.dim)?;
        let line = |out: &mut W, xs: &[f64]| -> std::io::Result<()> {
            for (j, x) in xs.iter().enumerate() {
                if j > 0 {
                    out.write_all(b",")?;
                }
                write!(out, "{x}")?;
            }
            out.write_all(b"\n")
        };
        for row in self.w.chunks(self.dim) {
            line(&mut out, row)?;
        }
        line(&mut out, &self.u)?;
        line(&mut out, &self.v)?;
        writeln!(out, "{}", self.c)?;
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = reader
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty() && !l.starts_with('#')));
        let (n, header) = lines.next().ok_or_else(|| err(0, "empty checkpoint".into()))?;
        let header = header?;
        let dim = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|d| *d > 0)
            .ok_or_else(|| err(n + 1, format!("expected dim=<D>, got {header:?}")))?;
        let mut row = |expect: usize| -> Result<Vec<f64>> {
            let (n, l) = lines.next().ok_or_else(|| err(0, "truncated checkpoint".into()))?;
            let l = l?;
            let xs = l
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(n + 1, e.to_string()))?;
            if xs.len() != expect {
                return Err(err(n + 1, format!("expected {expect} values, got {}", xs.len())));
            }
            Ok(xs)
        };
        let mut w = Vec::with_capacity(dim * dim);
        for _ in 0..dim {
            w.extend(row(dim)?);
        }
        let u = row(dim)?;
        let v = row(dim)?;
        let c = row(1)?[0];
        Ok(BilinearParams { dim, w, u, v, c })
    }
}

/// Reference scorer: bilinear form over encoder vectors.
#[derive(Clone)]
pub struct BilinearScorer {
    pub params: BilinearParams,
    provider: Arc<dyn EncoderProvider>,
}

impl std::fmt::Debug for BilinearScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BilinearScorer")
            .field("dim", &self.params.dim)
            .field("provider", &self.provider.name())
            .finish()
    }
}

impl BilinearScorer {
    /// All-zero parameters: every pair scores exactly 0.5.
    pub fn new(provider: Arc<dyn EncoderProvider>) -> Self {
        BilinearScorer {
            params: BilinearParams::zeros(provider.dim()),
            provider,
        }
    }

    pub fn with_params(provider: Arc<dyn EncoderProvider>, params: BilinearParams) -> Result<Self> {
        if params.dim != provider.dim() {
            return Err(Error::DimensionMismatch {
                expected: provider.dim(),
                got: params.dim,
            });
        }
        Ok(BilinearScorer { params, provider })
    }

    pub fn provider(&self) -> &Arc<dyn EncoderProvider> {
        &self.provider
    }
}

impl AlignmentScorer for BilinearScorer {
    fn name(&self) -> &str {
        "bilinear"
    }

    fn score_item(&self, article: TextItem<'_>, indicator: TextItem<'_>) -> Result<f64> {
        let a = self.provider.encode_item(article)?;
        let b = self.provider.encode_item(indicator)?;
        self.params.predict(&a, &b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub negatives_per_article: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 1,
            seed: 0,
            negatives_per_article: DEFAULT_NEGATIVES_PER_ARTICLE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// A weak pair resolved to vectors.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub article: Vector,
    pub indicator: Vector,
    pub label: f64,
}

/// Looks up article texts and indicator texts for `pairs` and encodes them,
/// each distinct key once.
pub fn resolve_examples(
    pairs: &[WeakPair],
    corpus: &Corpus,
    topics: &[Topic],
    provider: &dyn EncoderProvider,
) -> Result<Vec<TrainingExample>> {
    let articles = corpus.id_index();
    let topic_pos: HashMap<usize, usize> = topics.iter().enumerate().map(|(i, t)| (t.topic_id, i)).collect();
    let mut cache: HashMap<String, Vector> = HashMap::new();
    let mut encode = |key: String, text: &str| -> Result<Vector> {
        if let Some(v) = cache.get(&key) {
            return Ok(v.clone());
        }
        let v = provider.encode_item(TextItem::new(&key, text))?;
        cache.insert(key, v.clone());
        Ok(v)
    };
    pairs
        .iter()
        .map(|p| {
            let a = &corpus.articles[*articles
                .get(p.article_id.as_str())
                .ok_or_else(|| Error::Lookup(p.article_id.clone()))?];
            let t = &topics[*topic_pos
                .get(&p.topic_id)
                .ok_or_else(|| Error::Lookup(format!("topic {}", p.topic_id)))?];
            let (key, text) = match p.side {
                Side::LeftIndicator => (left_key(t.topic_id), &t.left_indicator),
                Side::RightIndicator => (right_key(t.topic_id), &t.right_indicator),
            };
            Ok(TrainingExample {
                article: encode(a.id.clone(), &a.text)?,
                indicator: encode(key, text)?,
                label: p.label,
            })
        })
        .collect()
}

struct PreparedExample {
    a: Sparse,
    b: Sparse,
    label: f64,
}

fn prepare(params: &BilinearParams, examples: &[TrainingExample]) -> Result<Vec<PreparedExample>> {
    examples
        .iter()
        .map(|e| {
            params.check(&e.article, &e.indicator)?;
            Ok(PreparedExample {
                a: Sparse::from_dense(e.article.as_slice()),
                b: Sparse::from_dense(e.indicator.as_slice()),
                label: e.label,
            })
        })
        .collect()
}

fn mean_loss_prepared(params: &BilinearParams, examples: &[PreparedExample]) -> f64 {
    let total: f64 = examples
        .iter()
        .map(|e| (sigmoid(params.logit_sparse(&e.a, &e.b)) - e.label).powi(2))
        .sum();
    total / examples.len() as f64
}

/// Mean squared error of `params` over `examples`.
pub fn mean_loss(params: &BilinearParams, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples"));
    }
    Ok(mean_loss_prepared(params, &prepare(params, examples)?))
}

/// Mini-batch gradient descent on the mean squared error.
///
/// Each epoch shuffles the examples with a seeded generator, then steps once
/// per batch using the batch-mean gradient. Returns the updated parameters and
/// the full-set mean loss after every epoch.
pub fn train_examples(
    mut params: BilinearParams,
    examples: &[TrainingExample],
    config: &TrainConfig,
) -> Result<(BilinearParams, Vec<f64>)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    let prepared = prepare(&params, examples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    let mut factors = Vec::with_capacity(config.batch_size);
    let dim = params.dim;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            factors.clear();
            for &k in batch {
                let e = &prepared[k];
                let s = sigmoid(params.logit_sparse(&e.a, &e.b));
                factors.push(2.0 * (s - e.label) * s * (1.0 - s));
            }
            let scale = config.learning_rate / batch.len() as f64;
            for (&k, &g) in batch.iter().zip(&factors) {
                let e = &prepared[k];
                let step_g = scale * g;
                for (i, ai) in e.a.iter() {
                    let row = &mut params.w[i * dim..(i + 1) * dim];
                    for (j, bj) in e.b.iter() {
                        row[j] -= step_g * ai * bj;
                    }
                    params.u[i] -= step_g * ai;
                }
                for (j, bj) in e.b.iter() {
                    params.v[j] -= step_g * bj;
                }
                params.c -= step_g;
            }
            if factors.iter().any(|g| !g.is_finite()) || !params.c.is_finite() {
                return Err(Error::Training {
                    step,
                    msg: "non-finite gradient or parameter".into(),
                });
            }
            step += 1;
        }
        let loss = mean_loss_prepared(&params, &prepared);
        if !loss.is_finite() || params.w.iter().chain(&params.u).chain(&params.v).any(|x| !x.is_finite()) {
            return Err(Error::Training {
                step,
                msg: format!("non-finite loss {loss}"),
            });
        }
        history.push(loss);
    }
    Ok((params, history))
}

/// Trains `scorer` on weak `pairs`, encoding texts with the scorer's provider.
pub fn train(
    scorer: BilinearScorer,
    pairs: &[WeakPair],
    topics: &[Topic],
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<(BilinearScorer, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    config.validate()?;
    if config.epochs == 0 {
        return Ok((scorer, Vec::new()));
    }
    let examples = resolve_examples(pairs, corpus, topics, scorer.provider.as_ref())?;
    let BilinearScorer { params, provider } = scorer;
    let (params, history) = train_examples(params, &examples, config)?;
    Ok((BilinearScorer { params, provider }, history))
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences, over every parameter.
///
/// Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`;
/// the floor keeps near-zero partials from amplifying round-off.
pub fn gradient_check(params: &BilinearParams, example: &TrainingExample, epsilon: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let (a, b, y) = (&example.article, &example.indicator, example.label);
    let g = params.gradient(a, b, y)?;
    let analytic: Vec<f64> = g.w.iter().chain(&g.u).chain(&g.v).copied().chain([g.c]).collect();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (k, &an) in analytic.iter().enumerate() {
        let orig = probe.get(k);
        probe.set(k, orig + epsilon);
        let plus = (probe.predict(a, b)? - y).powi(2);
        probe.set(k, orig - epsilon);
        let minus = (probe.predict(a, b)? - y).powi(2);
        probe.set(k, orig);
        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (an - numeric).abs() / an.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: Vec<[&'a str; 2]>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Client for an external cross-encoder: `{"pairs": [[a, b]]}` in,
/// `{"scores": [..]}` out.
pub struct RemoteScorer {
    name: String,
    url: String,
    client: reqwest::blocking::Client,
}

impl RemoteScorer {
    pub fn new(url: impl Into<String>, timeout: std::time::Duration) -> Result<Self> {
        let url = url.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::provider(&url, e.to_string(), false))?;
        Ok(RemoteScorer {
            name: format!("remote:{url}"),
            url,
            client,
        })
    }
}

impl AlignmentScorer for RemoteScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_item(&self, article: TextItem<'_>, indicator: TextItem<'_>) -> Result<f64> {
        Ok(self.score_items(&[(article, indicator)])?[0])
    }

    fn score_items(&self, pairs: &[(TextItem<'_>, TextItem<'_>)]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let req = ScoreRequest {
            pairs: pairs.iter().map(|(a, b)| [a.text, b.text]).collect(),
        };
        let resp: ScoreResponse = post_json(&self.client, &self.name, &self.url, &req)?;
        if resp.scores.len() != pairs.len() {
            return Err(Error::provider(
                &self.name,
                format!("asked for {} scores, got {}", pairs.len(), resp.scores.len()),
                false,
            ));
        }
        if let Some(s) = resp.scores.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
            return Err(Error::provider(&self.name, format!("score {s} outside (0, 1)"), false));
        }
        Ok(resp.scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Article, Scale};
    use crate::encoder::mock_encoder;

    #[test]
    fn label_table() {
        use BiasClass::*;
        assert_eq!(weak_label(Left, Side::LeftIndicator, Origin::InCluster), 1.0);
        assert_eq!(weak_label(Left, Side::RightIndicator, Origin::InCluster), 0.0);
        assert_eq!(weak_label(Center, Side::LeftIndicator, Origin::InCluster), 0.0);
        assert_eq!(weak_label(Center, Side::RightIndicator, Origin::InCluster), 0.0);
        assert_eq!(weak_label(Right, Side::RightIndicator, Origin::InCluster), 1.0);
        for c in BiasClass::ALL {
            for s in [Side::LeftIndicator, Side::RightIndicator] {
                assert_eq!(weak_label(c, s, Origin::OutOfCluster), 0.0);
            }
        }
    }

    fn fixture() -> (Corpus, Vec<ControversialCluster>, Vec<Topic>) {
        let articles: Vec<Article> = (0..9)
            .map(|i| Article {
                id: format!("a{i}"),
                text: format!("article {i}"),
                rating: (i % 3) as i64 - 1,
                source: None,
            })
            .collect();
        let corpus = Corpus::new(articles, Scale::ThreePoint).unwrap();
        let clusters = (0..3)
            .map(|c| ControversialCluster {
                cluster_index: c * 10,
                member_ids: (0..3).map(|j| format!("a{}", c * 3 + j)).collect(),
                dispersion: 2.0 / 3.0,
            })
            .collect();
        let topics = (0..3)
            .map(|t| Topic {
                topic_id: t,
                summary: format!("topic{t}"),
                left_indicator: format!("topic{t} leftview"),
                right_indicator: format!("topic{t} rightview"),
                source_cluster: t * 10,
            })
            .collect();
        (corpus, clusters, topics)
    }

    #[test]
    fn pair_counts_and_labels() {
        let (corpus, clusters, topics) = fixture();
        let pairs = generate_weak_labels(&corpus, &clusters, &topics, 2, 5).unwrap();
        assert_eq!(pairs.len(), 9 * (2 + 2 * 2));
        for p in &pairs {
            let a = corpus.get(&p.article_id).unwrap();
            let class = corpus.class_of(a).unwrap();
            assert_eq!(p.label, weak_label(class, p.side, p.origin));
            let own = p.article_id[1..].parse::<usize>().unwrap() / 3;
            assert_eq!(p.origin == Origin::InCluster, p.topic_id == own);
        }
        assert_eq!(pairs, generate_weak_labels(&corpus, &clusters, &topics, 2, 5).unwrap());
        assert!(generate_weak_labels(&corpus, &clusters, &topics, 3, 5).is_err());
        assert!(generate_weak_labels(&corpus, &clusters, &topics[..2], 0, 5).is_err());
    }

    #[test]
    fn zero_scorer_is_neutral() {
        let enc: Arc<dyn EncoderProvider> = Arc::new(mock_encoder(16, 0).unwrap());
        let s = BilinearScorer::new(enc);
        assert_eq!(score(&s, "tax cuts now", "tax relief").unwrap(), 0.5);
        assert!(score(&s, "", "x").is_err());
    }

    #[test]
    fn sigmoid_stays_open() {
        assert!(sigmoid(1e4) < 1.0);
        assert!(sigmoid(-1e4) > 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (corpus, clusters, topics) = fixture();
        let pairs = generate_weak_labels(&corpus, &clusters, &topics, 1, 5).unwrap();
        let enc: Arc<dyn EncoderProvider> = Arc::new(mock_encoder(16, 0).unwrap());
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (s, hist) = train(BilinearScorer::new(enc), &pairs, &topics, &corpus, &cfg).unwrap();
        assert!(hist.is_empty());
        assert_eq!(s.params, BilinearParams::zeros(16));
    }

    #[test]
    fn frozen_bias_matches_closed_form() {
        let mut p = BilinearParams::zeros(8);
        p.c = 0.7;
        let ex: Vec<TrainingExample> = [1.0, 0.0, 0.0, 1.0, 0.0]
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let mut a = vec![0.1; 8];
                a[i] = 1.0;
                TrainingExample {
                    article: Vector::normalized(a).unwrap(),
                    indicator: Vector::normalized(vec![1.0; 8]).unwrap(),
                    label,
                }
            })
            .collect();
        let s = 1.0 / (1.0 + (-0.7f64).exp());
        let expected = (2.0 * (s - 1.0).powi(2) + 3.0 * s.powi(2)) / 5.0;
        assert!((mean_loss(&p, &ex).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn outer_product_gradient_at_zero() {
        let p = BilinearParams::zeros(8);
        let a = Vector::normalized((1..=8).map(f64::from).collect()).unwrap();
        let b = Vector::normalized((1..=8).map(|i| (i as f64).sin()).collect()).unwrap();
        let g = p.gradient(&a, &b, 1.0).unwrap();
        // σ(0) = 0.5 so g = 2(0.5 - 1)(0.25) = -0.25
        assert_eq!(g.c, -0.25);
        for i in 0..8 {
            for j in 0..8 {
                let expect = -0.25 * a.as_slice()[i] * b.as_slice()[j];
                assert!((g.w[i * 8 + j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gradient_check_epsilon_range() {
        let p = BilinearParams::zeros(8);
        let ex = TrainingExample {
            article: Vector::normalized(vec![1.0; 8]).unwrap(),
            indicator: Vector::normalized(vec![1.0; 8]).unwrap(),
            label: 1.0,
        };
        assert!(gradient_check(&p, &ex, 1e-2).is_err());
        assert!(gradient_check(&p, &ex, 1e-8).is_err());
        assert!(gradient_check(&p, &ex, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut p = BilinearParams::zeros(3);
        p.w[4] = -0.125;
        p.u[0] = 1e-300;
        p.v[2] = 0.1 + 0.2;
        p.c = -3.5;
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("dim=3\n"));
        assert_eq!(text.lines().count(), 1 + 3 + 3);
        assert_eq!(BilinearParams::read(buf.as_slice(), "mem").unwrap(), p);
        assert!(BilinearParams::read("dim=2\n1,2\n".as_bytes(), "mem").is_err());
    }
}
