//! Topic summary and indicator extraction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ControversialCluster, Topic};
use crate::corpus::{BiasClass, Corpus};
use crate::encoder::tokenize;
use crate::error::{Error, Result};

const INSTRUCTIONS: &str = "Please summarize the following texts into a common topic, which the VAST MAJORITY of the texts debate on, and can reflect the bias of the texts, which different biases (left, center, right) hold different views on this topic. \n\nNote that there are multiple sides to the topic. Please summarize the topic in a neutral tone. Please return the topic and the bias indicators, without any other words or sentences. Please summarize the topic in fewer than 10 words. \n\nGive me the results in the following format: Topic: <Topic>\n\nLeft Indicator: <Some key points that Left or Lean Left have>\n\nRight Indicator: <Some key points that Right or Lean Right have>\n\n";

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSample {
    pub article_id: String,
    pub text: String,
    pub rating: i64,
    /// Rating name shown to the generator ("Lean Left", "Center", ...).
    pub bias_name: &'static str,
    pub class: BiasClass,
}

/// Everything a generator may look at: the rendered prompt plus the
/// structured samples it was rendered from.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicPrompt {
    pub cluster_index: usize,
    pub samples: Vec<PromptSample>,
    pub text: String,
}

pub trait IndicatorGenerator: Send + Sync {
    fn name(&self) -> &str;

    /// Returns the raw reply, expected in `Topic: / Left Indicator: / Right Indicator:` form.
    fn generate(&self, prompt: &TopicPrompt) -> Result<String>;

    /// Whether `generate` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

pub fn build_prompt(cluster_index: usize, samples: Vec<PromptSample>) -> TopicPrompt {
    let mut text = String::from(INSTRUCTIONS);
    for s in &samples {
        let _ = write!(text, "Text: {}\n\nBias: {}\n\n", s.text.trim(), s.bias_name);
    }
    TopicPrompt {
        cluster_index,
        samples,
        text,
    }
}

fn sample_members(
    cluster: &ControversialCluster,
    corpus: &Corpus,
    sample_size: usize,
    seed: u64,
) -> Result<Vec<PromptSample>> {
    let index = corpus.id_index();
    let n = cluster.size();
    let take = sample_size.min(n);
    // distinct stream per cluster under one stage seed
    let stream = seed ^ (cluster.cluster_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut picked = sample(&mut rng, n, take).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let id = &cluster.member_ids[i];
            let a = &corpus.articles[*index.get(id.as_str()).ok_or_else(|| Error::Lookup(id.clone()))?];
            Ok(PromptSample {
                article_id: a.id.clone(),
                text: a.text.clone(),
                rating: a.rating,
                bias_name: corpus.scale.rating_name(a.rating)?,
                class: corpus.class_of(a)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Topic,
    Left,
    Right,
}

fn label_of(line: &str) -> Option<(Field, &str)> {
    let lower = line.to_ascii_lowercase();
    for (prefix, field) in [
        ("topic:", Field::Topic),
        ("left indicator:", Field::Left),
        ("right indicator:", Field::Right),
    ] {
        if lower.starts_with(prefix) {
            return Some((field, &line[prefix.len()..]));
        }
    }
    None
}

fn clean_value(v: &str) -> String {
    let v = v.trim().trim_matches('*').trim();
    let v = v
        .strip_prefix('<')
        .and_then(|s| s.strip_suffix('>'))
        .unwrap_or(v);
    v.trim().to_string()
}

/// Parses a `Topic: / Left Indicator: / Right Indicator:` reply. Unlabeled
/// lines continue the preceding field; markdown emphasis and list markers on
/// labels are tolerated.
pub fn parse_reply(raw: &str) -> Result<(String, String, String)> {
    let mut fields: [Option<String>; 3] = [None, None, None];
    let mut current: Option<Field> = None;
    for line in raw.lines() {
        let stripped = line.replace("**", "");
        let stripped = stripped.trim().trim_start_matches(['-', '*', '#', ' ']);
        if stripped.is_empty() {
            continue;
        }
        if let Some((field, rest)) = label_of(stripped) {
            let slot = &mut fields[field as usize];
            if slot.is_some() {
                return Err(Error::Extraction {
                    msg: "field repeated".into(),
                    raw: raw.to_string(),
                });
            }
            *slot = Some(clean_value(rest));
            current = Some(field);
        } else if let Some(field) = current {
            let slot = fields[field as usize].get_or_insert_with(String::new);
            if !slot.is_empty() {
                slot.push(' ');
            }
            slot.push_str(&clean_value(stripped));
        }
    }
    let names = ["Topic", "Left Indicator", "Right Indicator"];
    let mut out = Vec::with_capacity(3);
    for (slot, name) in fields.into_iter().zip(names) {
        match slot {
            Some(v) if !v.is_empty() => out.push(v),
            _ => {
                return Err(Error::Extraction {
                    msg: format!("missing or empty {name:?} line"),
                    raw: raw.to_string(),
                })
            }
        }
    }
    let right = out.pop().unwrap();
    let left = out.pop().unwrap();
    let topic = out.pop().unwrap();
    Ok((topic, left, right))
}

/// Samples up to `sample_size` members of `cluster`, prompts `generator`, and
/// parses its reply into a topic.
pub fn extract_topic(
    cluster: &ControversialCluster,
    corpus: &Corpus,
    sample_size: usize,
    seed: u64,
    generator: &dyn IndicatorGenerator,
    topic_id: usize,
) -> Result<Topic> {
    if sample_size == 0 {
        return Err(Error::invalid("sample_size must be at least 1"));
    }
    let samples = sample_members(cluster, corpus, sample_size, seed)?;
    let prompt = build_prompt(cluster.cluster_index, samples);
    let reply = generator.generate(&prompt)?;
    let (summary, left_indicator, right_indicator) = parse_reply(&reply)?;
    let topic = Topic {
        topic_id,
        summary,
        left_indicator,
        right_indicator,
        source_cluster: cluster.cluster_index,
    };
    topic.validate().map_err(|e| Error::Extraction {
        msg: e.to_string(),
        raw: reply,
    })?;
    Ok(topic)
}

/// Extracts one topic per cluster; topic ids follow cluster order.
///
/// Every cluster is attempted even after a failure, so a file-based generator
/// sees all of its prompts in one pass; the first error is returned.
pub fn extract_topics(
    clusters: &[ControversialCluster],
    corpus: &Corpus,
    sample_size: usize,
    seed: u64,
    generator: &dyn IndicatorGenerator,
) -> Result<Vec<Topic>> {
    let run = |(i, c): (usize, &ControversialCluster)| extract_topic(c, corpus, sample_size, seed, generator, i);
    let results: Vec<Result<Topic>> = if generator.concurrent() {
        clusters.par_iter().enumerate().map(run).collect()
    } else {
        clusters.iter().enumerate().map(run).collect()
    };
    results.into_iter().collect()
}

pub const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "are", "as", "at", "be", "been", "but", "by",
    "can", "for", "from", "had", "has", "have", "he", "her", "his", "i", "if", "in", "into", "is",
    "it", "its", "more", "new", "not", "of", "on", "one", "or", "our", "out", "over", "said", "she",
    "so", "than", "that", "the", "their", "them", "there", "they", "this", "to", "up", "was", "we",
    "were", "what", "when", "which", "who", "will", "with", "would", "you",
];

fn content_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    tokenize(text).filter(|t| !STOPWORDS.contains(&t.as_str()))
}

fn most_frequent(counts: &BTreeMap<String, usize>) -> Option<&str> {
    // BTreeMap iterates in key order, so strict > keeps the smallest key on ties
    let mut best: Option<(&str, usize)> = None;
    for (tok, &c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((tok, c));
        }
    }
    best.map(|(t, _)| t)
}

/// Deterministic stand-in for an LLM.
///
/// The topic word is the most frequent non-stopword token across the sample.
/// Each side's opinion word is the most frequent token that occurs in that
/// side's articles and never in the opposite side's. Ties go to the
/// lexicographically smallest token.
#[derive(Debug, Clone, Default)]
pub struct MockGenerator;

impl MockGenerator {
    fn side_word(samples: &[PromptSample], side: BiasClass, other: BiasClass) -> Option<String> {
        let excluded: BTreeSet<String> = samples
            .iter()
            .filter(|s| s.class == other)
            .flat_map(|s| content_tokens(&s.text).collect::<Vec<_>>())
            .collect();
        let mut counts = BTreeMap::new();
        for s in samples.iter().filter(|s| s.class == side) {
            for t in content_tokens(&s.text) {
                if !excluded.contains(&t) {
                    *counts.entry(t).or_insert(0) += 1;
                }
            }
        }
        most_frequent(&counts).map(str::to_string)
    }
}

impl IndicatorGenerator for MockGenerator {
    fn name(&self) -> &str {
        "mock"
    }

    fn generate(&self, prompt: &TopicPrompt) -> Result<String> {
        let mut counts = BTreeMap::new();
        for s in &prompt.samples {
            for t in content_tokens(&s.text) {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
        let topic = most_frequent(&counts)
            .ok_or_else(|| Error::provider("mock", "no content tokens in sample", false))?
            .to_string();
        let left = Self::side_word(&prompt.samples, BiasClass::Left, BiasClass::Right)
            .unwrap_or_else(|| "left perspective".into());
        let right = Self::side_word(&prompt.samples, BiasClass::Right, BiasClass::Left)
            .unwrap_or_else(|| "right perspective".into());
        Ok(format!(
            "Topic: {topic}\nLeft Indicator: {topic} {left}\nRight Indicator: {topic} {right}\n"
        ))
    }
}

/// File-exchange client for running a real LLM out of band.
///
/// `generate` writes `<dir>/<cluster>.prompt` and reads `<dir>/<cluster>.reply`.
/// A missing reply is a retriable provider error: fill in the reply files and
/// run again.
#[derive(Debug, Clone)]
pub struct OfflineGenerator {
    pub dir: PathBuf,
}

impl OfflineGenerator {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        OfflineGenerator { dir: dir.into() }
    }

    pub fn prompt_path(&self, cluster: usize) -> PathBuf {
        self.dir.join(format!("{cluster}.prompt"))
    }

    pub fn reply_path(&self, cluster: usize) -> PathBuf {
        self.dir.join(format!("{cluster}.reply"))
    }
}

impl IndicatorGenerator for OfflineGenerator {
    fn name(&self) -> &str {
        "offline"
    }

    fn generate(&self, prompt: &TopicPrompt) -> Result<String> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.prompt_path(prompt.cluster_index), &prompt.text)?;
        let reply = self.reply_path(prompt.cluster_index);
        std::fs::read_to_string(&reply).map_err(|e| {
            Error::provider(
                "offline",
                format!("no reply at {}: {e}", reply.display()),
                e.kind() == std::io::ErrorKind::NotFound,
            )
        })
    }
}
