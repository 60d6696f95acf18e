//! Controversial topic mining.
//!
//! Articles are clustered in embedding space, each cluster is scored by the
//! population variance of its members' bias ratings, and clusters that are
//! both large and ideologically mixed become topics. A generator then turns
//! a sample of each cluster into a neutral summary plus left and right
//! indicator texts.

mod extract;
mod kmeans;

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::encoder::Vector;
use crate::error::{Error, Result};

pub use extract::{
    build_prompt, extract_topic, extract_topics, parse_reply, IndicatorGenerator, MockGenerator,
    OfflineGenerator, PromptSample, TopicPrompt, STOPWORDS,
};
pub use kmeans::{kmeans, KMeansFit, DEFAULT_MAX_ITERS};

/// Default cluster count.
pub const DEFAULT_K: usize = 3000;
pub const DEFAULT_TAU_FIVE_POINT: f64 = 1.0;
pub const DEFAULT_TAU_THREE_POINT: f64 = 0.5;
pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 50;
pub const DEFAULT_SAMPLE_SIZE: usize = 50;

/// Cluster membership keyed by article id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vector>,
}

impl ClusterAssignment {
    pub fn new(ids: Vec<String>, fit: KMeansFit) -> Result<Self> {
        if ids.len() != fit.labels.len() {
            return Err(Error::invalid(format!(
                "{} ids for {} cluster labels",
                ids.len(),
                fit.labels.len()
            )));
        }
        Ok(ClusterAssignment {
            k: fit.centroids.len(),
            ids,
            labels: fit.labels,
            centroids: fit.centroids,
        })
    }

    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id).map(|p| self.labels[p])
    }

    /// Member ids per cluster, in assignment order.
    pub fn members(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.k];
        for (id, &l) in self.ids.iter().zip(&self.labels) {
            out[l].push(id.as_str());
        }
        out
    }
}

/// A cluster that passed the dispersion and size filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControversialCluster {
    pub cluster_index: usize,
    pub member_ids: Vec<String>,
    pub dispersion: f64,
}

impl ControversialCluster {
    pub fn size(&self) -> usize {
        self.member_ids.len()
    }
}

/// Population variance of the ratings: `(1/n) * Σ (r_i - mean)^2`.
pub fn bias_dispersion(ratings: &[i64]) -> Result<f64> {
    if ratings.is_empty() {
        return Err(Error::invalid("bias dispersion of an empty cluster"));
    }
    let n = ratings.len() as f64;
    let mean = ratings.iter().map(|&r| r as f64).sum::<f64>() / n;
    Ok(ratings.iter().map(|&r| (r as f64 - mean).powi(2)).sum::<f64>() / n)
}

/// Keeps clusters whose dispersion exceeds `tau` (strictly) and whose size is
/// at least `p`, most dispersed first, ties by cluster index.
pub fn filter_controversial(
    assignment: &ClusterAssignment,
    corpus: &Corpus,
    tau: f64,
    p: usize,
) -> Result<Vec<ControversialCluster>> {
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("tau = {tau} must be non-negative")));
    }
    if p == 0 {
        return Err(Error::invalid("minimum cluster size p must be at least 1"));
    }
    let ratings: HashMap<&str, i64> = corpus.articles.iter().map(|a| (a.id.as_str(), a.rating)).collect();

    let mut kept = Vec::new();
    for (cluster_index, members) in assignment.members().into_iter().enumerate() {
        if members.len() < p || members.is_empty() {
            continue;
        }
        let rs = members
            .iter()
            .map(|id| ratings.get(id).copied().ok_or_else(|| Error::Lookup(id.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let dispersion = bias_dispersion(&rs)?;
        if dispersion > tau {
            kept.push(ControversialCluster {
                cluster_index,
                member_ids: members.into_iter().map(str::to_string).collect(),
                dispersion,
            });
        }
    }
    kept.sort_by(|a, b| {
        b.dispersion
            .total_cmp(&a.dispersion)
            .then(a.cluster_index.cmp(&b.cluster_index))
    });
    Ok(kept)
}

/// A mined topic; its position in the topic list is its embedding dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: usize,
    pub summary: String,
    pub left_indicator: String,
    pub right_indicator: String,
    pub source_cluster: usize,
}

impl Topic {
    pub fn validate(&self) -> Result<()> {
        for (what, s) in [
            ("summary", &self.summary),
            ("left indicator", &self.left_indicator),
            ("right indicator", &self.right_indicator),
        ] {
            if s.trim().is_empty() {
                return Err(Error::validation(format!("topic {}: empty {what}", self.topic_id)));
            }
        }
        if self.summary == self.left_indicator || self.summary == self.right_indicator {
            return Err(Error::validation(format!(
                "topic {}: summary repeats an indicator",
                self.topic_id
            )));
        }
        Ok(())
    }
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads one JSON record per line, skipping blank and `#` lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(reader: R, origin: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(serde_json::from_str(t).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads a topic store and checks every topic's invariants.
pub fn read_topics<R: BufRead>(reader: R, origin: &str) -> Result<Vec<Topic>> {
    let topics: Vec<Topic> = read_jsonl(reader, origin)?;
    let mut seen = BTreeMap::new();
    for t in &topics {
        t.validate()?;
        if seen.insert(t.topic_id, ()).is_some() {
            return Err(Error::validation(format!("duplicate topic id {}", t.topic_id)));
        }
    }
    Ok(topics)
}
