//! Topic index and importance-based topic retrieval.
//!
//! For an article vector `x` the importance of topic `i` is
//!
//! ```text
//! score(i) = λ (x · t_i) + (1 - λ) |x · r_i - x · l_i|
//! ```
//!
//! where `t_i`, `l_i`, `r_i` embed the topic summary and its left and right
//! indicators. Only the top-m topics by this score receive embedding values.

use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingTable, EncoderProvider, TextItem, Vector};
use crate::error::{Error, Result};
use crate::topic_mining::Topic;

pub const DEFAULT_LAMBDA_IMPORTANCE: f64 = 0.8;
pub const DEFAULT_TOP_M: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    pub lambda_importance: f64,
    pub m: usize,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            lambda_importance: DEFAULT_LAMBDA_IMPORTANCE,
            m: DEFAULT_TOP_M,
        }
    }
}

impl ImportanceConfig {
    pub fn validate(&self, topic_count: usize) -> Result<()> {
        check_lambda(self.lambda_importance)?;
        if self.m == 0 || self.m > topic_count {
            return Err(Error::invalid(format!("m = {} must be in 1..={topic_count}", self.m)));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda = {lambda} outside [0, 1]")));
    }
    Ok(())
}

pub fn topic_key(topic_id: usize) -> String {
    format!("t:{topic_id}")
}

pub fn left_key(topic_id: usize) -> String {
    format!("l:{topic_id}")
}

pub fn right_key(topic_id: usize) -> String {
    format!("r:{topic_id}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicIndex {
    pub topics: Vec<Topic>,
    pub topic_vecs: Vec<Vector>,
    pub left_vecs: Vec<Vector>,
    pub right_vecs: Vec<Vector>,
    dim: usize,
}

impl TopicIndex {
    pub fn from_parts(
        topics: Vec<Topic>,
        topic_vecs: Vec<Vector>,
        left_vecs: Vec<Vector>,
        right_vecs: Vec<Vector>,
    ) -> Result<Self> {
        if topics.is_empty() {
            return Err(Error::invalid("topic index needs at least one topic"));
        }
        let n = topics.len();
        if topic_vecs.len() != n || left_vecs.len() != n || right_vecs.len() != n {
            return Err(Error::invalid("topic and vector lists differ in length"));
        }
        let dim = topic_vecs[0].dim();
        for v in topic_vecs.iter().chain(&left_vecs).chain(&right_vecs) {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
        }
        Ok(TopicIndex {
            topics,
            topic_vecs,
            left_vecs,
            right_vecs,
            dim,
        })
    }

    /// Number of topics, i.e. the embedding dimensionality |M|.
    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    /// Dimension of the underlying text vectors.
    pub fn vector_dim(&self) -> usize {
        self.dim
    }

    /// Vectors keyed `t:<id>`, `l:<id>`, `r:<id>`.
    pub fn to_table(&self) -> EmbeddingTable {
        let mut table = EmbeddingTable::new(self.dim);
        for (i, t) in self.topics.iter().enumerate() {
            table.rows.push((topic_key(t.topic_id), self.topic_vecs[i].clone()));
            table.rows.push((left_key(t.topic_id), self.left_vecs[i].clone()));
            table.rows.push((right_key(t.topic_id), self.right_vecs[i].clone()));
        }
        table
    }

    pub fn from_table(topics: Vec<Topic>, table: &EmbeddingTable) -> Result<Self> {
        let map = table.to_map();
        let get = |k: String| map.get(k.as_str()).map(|v| (*v).clone()).ok_or(Error::Lookup(k));
        let mut tv = Vec::with_capacity(topics.len());
        let mut lv = Vec::with_capacity(topics.len());
        let mut rv = Vec::with_capacity(topics.len());
        for t in &topics {
            tv.push(get(topic_key(t.topic_id))?);
            lv.push(get(left_key(t.topic_id))?);
            rv.push(get(right_key(t.topic_id))?);
        }
        Self::from_parts(topics, tv, lv, rv)
    }
}

/// Encodes every topic's summary and indicators. Index order is input order.
pub fn build_index(topics: &[Topic], provider: &dyn EncoderProvider) -> Result<TopicIndex> {
    if topics.is_empty() {
        return Err(Error::invalid("cannot index an empty topic list"));
    }
    let keys: Vec<[String; 3]> = topics
        .iter()
        .map(|t| [topic_key(t.topic_id), left_key(t.topic_id), right_key(t.topic_id)])
        .collect();
    let mut items = Vec::with_capacity(topics.len() * 3);
    for (t, k) in topics.iter().zip(&keys) {
        items.push(TextItem::new(&k[0], &t.summary));
        items.push(TextItem::new(&k[1], &t.left_indicator));
        items.push(TextItem::new(&k[2], &t.right_indicator));
    }
    let mut vecs = provider.encode_items(&items)?.into_iter();
    let mut tv = Vec::with_capacity(topics.len());
    let mut lv = Vec::with_capacity(topics.len());
    let mut rv = Vec::with_capacity(topics.len());
    for _ in topics {
        tv.push(vecs.next().unwrap());
        lv.push(vecs.next().unwrap());
        rv.push(vecs.next().unwrap());
    }
    TopicIndex::from_parts(topics.to_vec(), tv, lv, rv)
}

/// Importance of topic `i` for article vector `x`.
pub fn importance_score(x: &Vector, index: &TopicIndex, i: usize, lambda_importance: f64) -> Result<f64> {
    if x.dim() != index.dim {
        return Err(Error::DimensionMismatch {
            expected: index.dim,
            got: x.dim(),
        });
    }
    if i >= index.len() {
        return Err(Error::invalid(format!("topic position {i} out of range")));
    }
    Ok(score_unchecked(x, index, i, lambda_importance))
}

fn score_unchecked(x: &Vector, index: &TopicIndex, i: usize, lambda: f64) -> f64 {
    let xs = x.as_slice();
    let relevance = crate::encoder::dot(xs, index.topic_vecs[i].as_slice());
    let divergence = crate::encoder::dot(xs, index.right_vecs[i].as_slice())
        - crate::encoder::dot(xs, index.left_vecs[i].as_slice());
    lambda * relevance + (1.0 - lambda) * divergence.abs()
}

/// The `m` highest-scoring topic positions, best first; ties go to the lower position.
pub fn top_m_topics(x: &Vector, index: &TopicIndex, config: &ImportanceConfig) -> Result<Vec<usize>> {
    config.validate(index.len())?;
    if x.dim() != index.dim {
        return Err(Error::DimensionMismatch {
            expected: index.dim,
            got: x.dim(),
        });
    }
    let mut scored: Vec<(usize, f64)> = (0..index.len())
        .map(|i| (i, score_unchecked(x, index, i, config.lambda_importance)))
        .collect();
    let by_score = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if config.m < scored.len() {
        scored.select_nth_unstable_by(config.m - 1, by_score);
        scored.truncate(config.m);
    }
    scored.sort_by(by_score);
    Ok(scored.into_iter().map(|(i, _)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::mock_encoder;

    fn topic(id: usize, s: &str, l: &str, r: &str) -> Topic {
        Topic {
            topic_id: id,
            summary: s.into(),
            left_indicator: l.into(),
            right_indicator: r.into(),
            source_cluster: id,
        }
    }

    fn basis(dim: usize, i: usize) -> Vector {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Vector::new(v)
    }

    #[test]
    fn builds_unit_vectors() {
        let enc = mock_encoder(16, 1).unwrap();
        let topics = vec![topic(0, "tax", "tax fair", "tax cut"), topic(1, "tax", "guns ban", "guns rights")];
        let idx = build_index(&topics, &enc).unwrap();
        assert_eq!(idx.len(), 2);
        for v in idx.topic_vecs.iter().chain(&idx.left_vecs).chain(&idx.right_vecs) {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
        // duplicate summaries are kept as separate dimensions
        assert_eq!(idx.topic_vecs[0], idx.topic_vecs[1]);
    }

    #[test]
    fn empty_indicator_fails() {
        let enc = mock_encoder(16, 1).unwrap();
        assert!(build_index(&[topic(0, "tax", "", "cut")], &enc).is_err());
        assert!(build_index(&[], &enc).is_err());
    }

    fn manual_index(t: Vec<Vector>, l: Vec<Vector>, r: Vec<Vector>) -> TopicIndex {
        let topics = (0..t.len()).map(|i| topic(i, "s", "l", "r")).collect();
        TopicIndex::from_parts(topics, t, l, r).unwrap()
    }

    #[test]
    fn score_examples() {
        // x = e0; t = e0 gives x·t = 1; l, r constructed for the listed products
        let x = basis(4, 0);
        let idx = manual_index(
            vec![Vector::new(vec![0.5, 0.0, 0.0, 0.0]), basis(4, 0)],
            vec![Vector::new(vec![0.3, 0.0, 0.0, 0.0]), Vector::new(vec![-1.0, 0.0, 0.0, 0.0])],
            vec![Vector::new(vec![0.3, 0.0, 0.0, 0.0]), basis(4, 0)],
        );
        let s0 = importance_score(&x, &idx, 0, 0.8).unwrap();
        assert!((s0 - 0.40).abs() < 1e-12);
        let s1 = importance_score(&x, &idx, 1, 0.8).unwrap();
        assert!((s1 - 1.2).abs() < 1e-12);
        assert_eq!(importance_score(&x, &idx, 1, 1.0).unwrap(), 1.0);
        assert!(importance_score(&basis(3, 0), &idx, 0, 0.8).is_err());
        assert!(importance_score(&x, &idx, 2, 0.8).is_err());
    }

    #[test]
    fn unique_match_wins() {
        let x = basis(4, 2);
        let idx = manual_index(
            vec![basis(4, 0), basis(4, 1), basis(4, 2), basis(4, 3)],
            vec![basis(4, 0); 4],
            vec![basis(4, 0); 4],
        );
        let cfg = ImportanceConfig {
            lambda_importance: 0.8,
            m: 1,
        };
        assert_eq!(top_m_topics(&x, &idx, &cfg).unwrap(), vec![2]);
    }

    #[test]
    fn ties_go_to_lower_position() {
        let idx = manual_index(vec![basis(2, 0); 3], vec![basis(2, 1); 3], vec![basis(2, 1); 3]);
        let cfg = ImportanceConfig {
            lambda_importance: 0.5,
            m: 1,
        };
        assert_eq!(top_m_topics(&basis(2, 0), &idx, &cfg).unwrap(), vec![0]);
        let all = ImportanceConfig { m: 3, ..cfg };
        assert_eq!(top_m_topics(&basis(2, 0), &idx, &all).unwrap(), vec![0, 1, 2]);
        let too_many = ImportanceConfig { m: 4, ..cfg };
        assert!(top_m_topics(&basis(2, 0), &idx, &too_many).is_err());
    }

    #[test]
    fn table_roundtrip() {
        let enc = mock_encoder(16, 1).unwrap();
        let topics = vec![topic(3, "tax", "tax fair", "tax cut"), topic(8, "guns", "guns ban", "guns rights")];
        let idx = build_index(&topics, &enc).unwrap();
        let back = TopicIndex::from_table(topics, &idx.to_table()).unwrap();
        assert_eq!(back, idx);
    }
}
