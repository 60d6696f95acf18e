//! Weakly labeled news corpora.
//!
//! Every article carries the outlet-level bias rating of its source. Corpora
//! are stored as newline-delimited JSON records:
//!
//! ```text
//! {"id":"a1","text":"...","rating":-1,"source":"outlet"}
//! ```
//!
//! Blank lines and lines starting with `#` are skipped by the reader, which
//! lets pipeline stages stamp provenance comments onto their outputs.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub text: String,
    pub rating: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// Rating scale of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Left, Lean Left, Center, Lean Right, Right as -2..=2.
    FivePoint,
    /// Left, Center, Right as -1..=1.
    ThreePoint,
}

impl Scale {
    pub fn bound(self) -> i64 {
        match self {
            Scale::FivePoint => 2,
            Scale::ThreePoint => 1,
        }
    }

    pub fn contains(self, rating: i64) -> bool {
        rating.abs() <= self.bound()
    }

    pub fn ratings(self) -> impl Iterator<Item = i64> {
        let b = self.bound();
        -b..=b
    }

    /// Human-readable name of a rating, as used in generator prompts.
    pub fn rating_name(self, rating: i64) -> Result<&'static str> {
        let name = match (self, rating) {
            (Scale::FivePoint, -2) | (Scale::ThreePoint, -1) => "Left",
            (Scale::FivePoint, -1) => "Lean Left",
            (_, 0) => "Center",
            (Scale::FivePoint, 1) => "Lean Right",
            (Scale::FivePoint, 2) | (Scale::ThreePoint, 1) => "Right",
            _ => return Err(out_of_scale(rating, self)),
        };
        Ok(name)
    }
}

/// Three-way political class. Ordered Left < Center < Right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BiasClass {
    Left,
    Center,
    Right,
}

impl BiasClass {
    pub const ALL: [BiasClass; 3] = [BiasClass::Left, BiasClass::Center, BiasClass::Right];
}

impl fmt::Display for BiasClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BiasClass::Left => "Left",
            BiasClass::Center => "Center",
            BiasClass::Right => "Right",
        };
        f.write_str(s)
    }
}

fn out_of_scale(rating: i64, scale: Scale) -> Error {
    Error::validation(format!("rating {rating} outside {scale:?} scale"))
}

/// Collapses a rating to its class. On the five-point scale Lean Left joins
/// Left and Lean Right joins Right.
pub fn rating_to_class(rating: i64, scale: Scale) -> Result<BiasClass> {
    if !scale.contains(rating) {
        return Err(out_of_scale(rating, scale));
    }
    Ok(match rating.signum() {
        -1 => BiasClass::Left,
        0 => BiasClass::Center,
        _ => BiasClass::Right,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub articles: Vec<Article>,
    pub scale: Scale,
}

impl Corpus {
    /// Builds a corpus, checking id uniqueness, non-empty text, and rating bounds.
    pub fn new(articles: Vec<Article>, scale: Scale) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut dupes = Vec::new();
        let mut bad_rating = Vec::new();
        let mut empty = Vec::new();
        for a in &articles {
            if !seen.insert(a.id.as_str()) {
                dupes.push(a.id.clone());
            }
            if !scale.contains(a.rating) {
                bad_rating.push(a.id.clone());
            }
            if a.text.trim().is_empty() {
                empty.push(a.id.clone());
            }
        }
        if !dupes.is_empty() {
            return Err(Error::validation(format!("duplicate ids: {}", dupes.join(", "))));
        }
        if !bad_rating.is_empty() {
            return Err(Error::validation(format!(
                "ratings outside {scale:?} scale for ids: {}",
                bad_rating.join(", ")
            )));
        }
        if !empty.is_empty() {
            return Err(Error::validation(format!("empty text for ids: {}", empty.join(", "))));
        }
        Ok(Corpus { articles, scale })
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Article> {
        self.articles.iter().find(|a| a.id == id)
    }

    /// Id → position lookup table.
    pub fn id_index(&self) -> std::collections::HashMap<&str, usize> {
        self.articles
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.as_str(), i))
            .collect()
    }

    pub fn class_of(&self, article: &Article) -> Result<BiasClass> {
        rating_to_class(article.rating, self.scale)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for a in &self.articles {
            serde_json::to_writer(&mut out, a).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Reads a corpus from newline-delimited JSON records.
pub fn load_corpus(path: impl AsRef<Path>, scale: Scale) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_corpus(BufReader::new(file), &path.display().to_string(), scale)
}

pub fn read_corpus<R: BufRead>(reader: R, origin: &str, scale: Scale) -> Result<Corpus> {
    let mut articles = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let article: Article = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        articles.push(article);
    }
    Corpus::new(articles, scale)
}

/// Splits a corpus into disjoint partitions after a seeded shuffle.
///
/// Partition `i` receives `floor(n * fractions[i])` articles; whatever rounding
/// leaves over goes to the first partition.
pub fn split_corpus(corpus: &Corpus, fractions: &[f64], seed: u64) -> Result<Vec<Corpus>> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot split an empty corpus"));
    }
    if fractions.is_empty() {
        return Err(Error::invalid("no split fractions given"));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0) || !f.is_finite()) {
        return Err(Error::invalid(format!("split fraction {f} must be positive")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {total}, not 1")));
    }

    let n = corpus.len();
    let mut sizes: Vec<usize> = fractions.iter().map(|f| (n as f64 * f).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    sizes[0] += n - assigned;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for size in sizes {
        let articles = order[start..start + size]
            .iter()
            .map(|&i| corpus.articles[i].clone())
            .collect();
        parts.push(Corpus {
            articles,
            scale: corpus.scale,
        });
        start += size;
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn article(id: &str, rating: i64) -> Article {
        Article {
            id: id.to_string(),
            text: format!("text of {id}"),
            rating,
            source: None,
        }
    }

    #[test]
    fn parses_three_records() {
        let data = r#"{"id":"a","text":"one","rating":-2}
{"id":"b","text":"two","rating":0,"source":"x"}
{"id":"c","text":"three","rating":2}
"#;
        let c = read_corpus(data.as_bytes(), "mem", Scale::FivePoint).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.scale, Scale::FivePoint);
        assert_eq!(c.articles[1].source.as_deref(), Some("x"));
        assert_eq!(c.articles[2].id, "c");
    }

    #[test]
    fn empty_input_is_an_empty_corpus() {
        let c = read_corpus("".as_bytes(), "mem", Scale::ThreePoint).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn out_of_scale_rating_names_the_id() {
        let data = r#"{"id":"ok","text":"t","rating":1}
{"id":"bad","text":"t","rating":3}"#;
        let err = read_corpus(data.as_bytes(), "mem", Scale::FivePoint).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("bad") && !m.contains("ok")));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Corpus::new(vec![article("a", 0), article("a", 1)], Scale::ThreePoint).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let data = "{\"id\":\"a\",\"text\":\"t\",\"rating\":0}\n\nnot json\n";
        match read_corpus(data.as_bytes(), "mem", Scale::ThreePoint) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fractional_rating_rejected() {
        let data = r#"{"id":"a","text":"t","rating":0.5}"#;
        assert!(matches!(
            read_corpus(data.as_bytes(), "mem", Scale::ThreePoint),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn blank_text_rejected() {
        let mut a = article("a", 0);
        a.text = "  \n".into();
        assert!(Corpus::new(vec![a], Scale::ThreePoint).is_err());
    }

    #[test]
    fn class_mapping() {
        use BiasClass::*;
        let five: Vec<_> = (-2..=2).map(|r| rating_to_class(r, Scale::FivePoint).unwrap()).collect();
        assert_eq!(five, vec![Left, Left, Center, Right, Right]);
        let three: Vec<_> = (-1..=1).map(|r| rating_to_class(r, Scale::ThreePoint).unwrap()).collect();
        assert_eq!(three, vec![Left, Center, Right]);
        assert!(rating_to_class(2, Scale::ThreePoint).is_err());
        assert!(rating_to_class(-3, Scale::FivePoint).is_err());
    }

    #[test]
    fn split_ninety_ten() {
        let c = Corpus::new((0..10).map(|i| article(&format!("a{i}"), 0)).collect(), Scale::ThreePoint).unwrap();
        let parts = split_corpus(&c, &[0.9, 0.1], 7).unwrap();
        assert_eq!(parts[0].len(), 9);
        assert_eq!(parts[1].len(), 1);
        let a: HashSet<_> = parts[0].articles.iter().map(|a| &a.id).collect();
        assert!(!a.contains(&parts[1].articles[0].id));

        let again = split_corpus(&c, &[0.9, 0.1], 7).unwrap();
        assert_eq!(parts, again);
    }

    #[test]
    fn split_identity_and_remainder() {
        let c = Corpus::new((0..7).map(|i| article(&format!("a{i}"), 0)).collect(), Scale::ThreePoint).unwrap();
        let whole = split_corpus(&c, &[1.0], 1).unwrap();
        let mut ids: Vec<_> = whole[0].articles.iter().map(|a| a.id.clone()).collect();
        ids.sort();
        let mut orig: Vec<_> = c.articles.iter().map(|a| a.id.clone()).collect();
        orig.sort();
        assert_eq!(ids, orig);

        // floor(7/3) = 2 each, remainder 1 to the first partition
        let thirds = split_corpus(&c, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1).unwrap();
        assert_eq!(thirds.iter().map(Corpus::len).collect::<Vec<_>>(), vec![3, 2, 2]);
    }

    #[test]
    fn split_errors() {
        let empty = Corpus::new(vec![], Scale::ThreePoint).unwrap();
        assert!(split_corpus(&empty, &[1.0], 0).is_err());
        let c = Corpus::new(vec![article("a", 0)], Scale::ThreePoint).unwrap();
        assert!(split_corpus(&c, &[1.2, -0.2], 0).is_err());
        assert!(split_corpus(&c, &[0.5, 0.4], 0).is_err());
    }
}
