//! Sparse political-bias embeddings.
//!
//! Dimension `i` of an article's embedding is `s_r - s_l`, the difference of
//! its alignment scores with topic `i`'s right and left indicators, and is
//! only filled for the article's top-m topics. Positive means right-leaning,
//! negative left-leaning, zero neutral or irrelevant.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::corpus::{Article, Corpus};
use crate::cross_encoder::AlignmentScorer;
use crate::encoder::{EncoderProvider, TextItem};
use crate::error::{Error, Result};
use crate::topic_index::{left_key, right_key, top_m_topics, ImportanceConfig, TopicIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct BiasEmbedding {
    pub article_id: String,
    /// Total number of topic dimensions |M|.
    pub dims: usize,
    /// Nonzero values by topic position. Absent positions are exactly 0.
    pub entries: BTreeMap<usize, f64>,
}

impl BiasEmbedding {
    pub fn new(article_id: impl Into<String>, dims: usize) -> Self {
        BiasEmbedding {
            article_id: article_id.into(),
            dims,
            entries: BTreeMap::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, pos: usize) -> f64 {
        self.entries.get(&pos).copied().unwrap_or(0.0)
    }

    /// Position with the largest absolute value, lowest position on ties.
    pub fn argmax_abs(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (&p, &v) in &self.entries {
            if best.is_none_or(|(_, b)| v.abs() > b) {
                best = Some((p, v.abs()));
            }
        }
        best.map(|(p, _)| p)
    }
}

/// Sparse inner product over shared positions.
pub fn dot(e1: &BiasEmbedding, e2: &BiasEmbedding) -> Result<f64> {
    if e1.dims != e2.dims {
        return Err(Error::DimensionMismatch {
            expected: e1.dims,
            got: e2.dims,
        });
    }
    let (small, large) = if e1.nnz() <= e2.nnz() { (e1, e2) } else { (e2, e1) };
    Ok(small
        .entries
        .iter()
        .filter_map(|(p, v)| large.entries.get(p).map(|w| v * w))
        .sum())
}

pub fn densify(e: &BiasEmbedding) -> Vec<f64> {
    let mut out = vec![0.0; e.dims];
    for (&p, &v) in &e.entries {
        out[p] = v;
    }
    out
}

/// Inverse of [`densify`]: keeps exactly the nonzero coordinates.
pub fn sparsify(article_id: impl Into<String>, dense: &[f64]) -> BiasEmbedding {
    BiasEmbedding {
        article_id: article_id.into(),
        dims: dense.len(),
        entries: dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(p, v)| (p, *v))
            .collect(),
    }
}

/// Builds one article's embedding: retrieve the top-m topics, then score the
/// article against each topic's two indicators. Differences that come out
/// exactly zero are left implicit.
pub fn embed_article(
    article: &Article,
    index: &TopicIndex,
    scorer: &dyn AlignmentScorer,
    config: &ImportanceConfig,
    provider: &dyn EncoderProvider,
) -> Result<BiasEmbedding> {
    let item = TextItem::new(&article.id, &article.text);
    let x = provider.encode_item(item)?;
    let top = top_m_topics(&x, index, config)?;
    let mut emb = BiasEmbedding::new(article.id.clone(), index.len());
    for pos in top {
        let t = &index.topics[pos];
        let (lk, rk) = (left_key(t.topic_id), right_key(t.topic_id));
        let scores = scorer
            .score_items(&[
                (item, TextItem::new(&lk, &t.left_indicator)),
                (item, TextItem::new(&rk, &t.right_indicator)),
            ])
            .map_err(|e| with_context(e, &article.id, pos))?;
        let value = scores[1] - scores[0];
        if value != 0.0 {
            emb.entries.insert(pos, value);
        }
    }
    Ok(emb)
}

fn with_context(e: Error, article: &str, pos: usize) -> Error {
    match e {
        Error::Provider {
            provider,
            msg,
            retriable,
        } => Error::Provider {
            provider,
            msg: format!("article {article:?}, topic position {pos}: {msg}"),
            retriable,
        },
        other => other,
    }
}

/// Embeds every article in parallel; output order follows the corpus.
pub fn embed_corpus(
    corpus: &Corpus,
    index: &TopicIndex,
    scorer: &dyn AlignmentScorer,
    config: &ImportanceConfig,
    provider: &dyn EncoderProvider,
) -> Result<Vec<BiasEmbedding>> {
    config.validate(index.len())?;
    corpus
        .articles
        .par_iter()
        .map(|a| embed_article(a, index, scorer, config, provider))
        .collect()
}

/// Writes `dims=<|M|> m=<m>` then `<id>\t<pos>:<value>,...` lines with six decimals.
pub fn write_embeddings<W: Write>(embeddings: &[BiasEmbedding], dims: usize, m: usize, mut out: W) -> Result<()> {
    writeln!(out, "dims={dims} m={m}")?;
    for e in embeddings {
        if e.dims != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                got: e.dims,
            });
        }
        write!(out, "{}\t", e.article_id)?;
        for (k, (p, v)) in e.entries.iter().enumerate() {
            if k > 0 {
                out.write_all(b",")?;
            }
            write!(out, "{p}:{v:.6}")?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads an embedding file; returns the embeddings and the header's `m`.
pub fn read_embeddings<R: BufRead>(reader: R, origin: &str) -> Result<(Vec<BiasEmbedding>, usize)> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut header: Option<(usize, usize)> = None;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((dims, _)) = header else {
            let mut parts = line.split_whitespace();
            let field = |p: Option<&str>, key: &str| {
                p.and_then(|s| s.strip_prefix(key)).and_then(|v| v.parse::<usize>().ok())
            };
            let dims = field(parts.next(), "dims=");
            let m = field(parts.next(), "m=");
            match (dims, m) {
                (Some(d), Some(m)) => header = Some((d, m)),
                _ => return Err(err(n, format!("expected 'dims=<M> m=<m>' header, got {line:?}"))),
            }
            continue;
        };
        let (id, rest) = line.split_once('\t').ok_or_else(|| err(n, "expected <id>\\t<entries>".into()))?;
        let mut e = BiasEmbedding::new(id, dims);
        for entry in rest.split(',').filter(|s| !s.trim().is_empty()) {
            let (p, v) = entry
                .split_once(':')
                .ok_or_else(|| err(n, format!("bad entry {entry:?}")))?;
            let p: usize = p.trim().parse().map_err(|_| err(n, format!("bad position {p:?}")))?;
            let v: f64 = v.trim().parse().map_err(|_| err(n, format!("bad value {v:?}")))?;
            if p >= dims {
                return Err(err(n, format!("position {p} >= dims {dims}")));
            }
            if v != 0.0 {
                e.entries.insert(p, v);
            }
        }
        out.push(e);
    }
    let (_, m) = header.ok_or_else(|| err(0, "missing header".into()))?;
    Ok((out, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(entries: &[(usize, f64)]) -> BiasEmbedding {
        BiasEmbedding {
            article_id: "a".into(),
            dims: 8,
            entries: entries.iter().copied().collect(),
        }
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&emb(&[(0, 1.0)]), &emb(&[(1, 1.0)])).unwrap(), 0.0);
        assert!((dot(&emb(&[(2, 0.8)]), &emb(&[(2, 0.8)])).unwrap() - 0.64).abs() < 1e-15);
        assert_eq!(dot(&emb(&[(3, 0.5)]), &emb(&[(3, -0.5)])).unwrap(), -0.25);
        let mut other = emb(&[]);
        other.dims = 9;
        assert!(dot(&emb(&[]), &other).is_err());
    }

    #[test]
    fn densify_roundtrip() {
        assert_eq!(densify(&emb(&[])), vec![0.0; 8]);
        let one = densify(&emb(&[(5, -0.3)]));
        assert_eq!(one.iter().filter(|v| **v != 0.0).count(), 1);
        let e = emb(&[(1, 0.25), (7, -0.75)]);
        assert_eq!(sparsify("a", &densify(&e)), e);
    }

    #[test]
    fn file_roundtrip() {
        let e = vec![emb(&[(1, 0.25), (7, -0.75)]), BiasEmbedding::new("b", 8)];
        let mut buf = Vec::new();
        write_embeddings(&e, 8, 3, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "dims=8 m=3\na\t1:0.250000,7:-0.750000\nb\t\n");
        let (back, m) = read_embeddings(buf.as_slice(), "mem").unwrap();
        assert_eq!(m, 3);
        assert_eq!(back, e);
    }

    #[test]
    fn argmax_abs_picks_largest_magnitude() {
        assert_eq!(emb(&[(1, 0.2), (4, -0.9), (6, 0.5)]).argmax_abs(), Some(4));
        assert_eq!(emb(&[]).argmax_abs(), None);
    }
}
