//! Text encoders.
//!
//! All providers return unit-length vectors so that inner products downstream
//! are cosines. Three backends ship with the crate:
//!
//! - [`MockEncoder`]: seeded hashed bag-of-tokens projection, for tests and
//!   desk-scale runs.
//! - [`TableEncoder`]: precomputed vectors keyed by item id, loaded from an
//!   embedding table file.
//! - [`RemoteEncoder`]: a JSON-over-HTTP service, `{"texts": [..]}` in and
//!   `{"vectors": [[..]]}` out.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};

/// Dense real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Self {
        Vector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    /// Scales `values` to unit L2 norm. Fails on a zero or non-finite vector.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("cannot normalize a zero or non-finite vector"));
        }
        Ok(Vector(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(dot(&self.0, &other.0))
    }

    pub fn cosine(&self, other: &Vector) -> Result<f64> {
        Ok(self.dot(other)? / (self.norm() * other.norm()))
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A piece of text together with the stable key it is known by.
///
/// Text-based providers ignore the key; table-backed providers ignore the
/// text. Keys are article ids, or `t:<id>`, `l:<id>`, `r:<id>` for a topic's
/// summary and indicators.
#[derive(Debug, Clone, Copy)]
pub struct TextItem<'a> {
    pub key: &'a str,
    pub text: &'a str,
}

impl<'a> TextItem<'a> {
    pub fn new(key: &'a str, text: &'a str) -> Self {
        TextItem { key, text }
    }
}

pub trait EncoderProvider: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Encodes raw text into a unit vector of length [`dim`](Self::dim).
    fn encode(&self, text: &str) -> Result<Vector>;

    fn encode_item(&self, item: TextItem<'_>) -> Result<Vector> {
        self.encode(item.text)
    }

    fn encode_items(&self, items: &[TextItem<'_>]) -> Result<Vec<Vector>> {
        items.iter().map(|i| self.encode_item(*i)).collect()
    }
}

impl<P: EncoderProvider + ?Sized> EncoderProvider for Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn encode(&self, text: &str) -> Result<Vector> {
        (**self).encode(text)
    }
    fn encode_item(&self, item: TextItem<'_>) -> Result<Vector> {
        (**self).encode_item(item)
    }
    fn encode_items(&self, items: &[TextItem<'_>]) -> Result<Vec<Vector>> {
        (**self).encode_items(items)
    }
}

fn require_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::invalid("cannot encode empty text"));
    }
    Ok(())
}

/// Lowercased tokens, split on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Hashed bag-of-tokens encoder.
///
/// Each token lands in bucket `h % dim` with sign taken from the top bit of
/// the same seeded 64-bit hash; counts are accumulated then L2-normalized.
#[derive(Debug, Clone)]
pub struct MockEncoder {
    name: String,
    dim: usize,
    seed: u64,
}

pub const MIN_MOCK_DIM: usize = 8;

/// Creates a [`MockEncoder`]; `dim` must be at least [`MIN_MOCK_DIM`].
pub fn mock_encoder(dim: usize, seed: u64) -> Result<MockEncoder> {
    if dim < MIN_MOCK_DIM {
        return Err(Error::invalid(format!("mock encoder dim {dim} < {MIN_MOCK_DIM}")));
    }
    Ok(MockEncoder {
        name: format!("mock-{dim}-{seed}"),
        dim,
        seed,
    })
}

impl MockEncoder {
    /// Bucket and sign a token hashes to.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let h = xxh3_64_with_seed(token.as_bytes(), self.seed);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        (bucket, sign)
    }
}

impl EncoderProvider for MockEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vector> {
        require_text(text)?;
        let mut acc = vec![0.0; self.dim];
        for tok in tokenize(text) {
            let (bucket, sign) = self.slot(&tok);
            acc[bucket] += sign;
        }
        Vector::normalized(acc).map_err(|_| {
            Error::invalid(format!("text {:?} hashes to a zero vector", truncate(text, 40)))
        })
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Precomputed vectors keyed by id.
#[derive(Debug, Clone)]
pub struct TableEncoder {
    name: String,
    dim: usize,
    vectors: HashMap<String, Vector>,
}

/// Loads an embedding table file as a provider.
pub fn file_encoder(path: impl AsRef<Path>) -> Result<TableEncoder> {
    let table = EmbeddingTable::load(path.as_ref())?;
    TableEncoder::from_table(format!("table:{}", path.as_ref().display()), table)
}

impl TableEncoder {
    pub fn from_table(name: String, table: EmbeddingTable) -> Result<Self> {
        let dim = table.dim;
        let mut vectors = HashMap::with_capacity(table.rows.len());
        for (id, v) in table.rows {
            let v = Vector::normalized(v.into_inner())
                .map_err(|_| Error::validation(format!("zero vector stored for {id:?}")))?;
            vectors.insert(id, v);
        }
        Ok(TableEncoder { name, dim, vectors })
    }

    pub fn encode_id(&self, id: &str) -> Result<Vector> {
        self.vectors
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Lookup(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EncoderProvider for TableEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    /// Table providers only serve ids; raw text has no entry.
    fn encode(&self, text: &str) -> Result<Vector> {
        self.encode_id(text)
    }

    fn encode_item(&self, item: TextItem<'_>) -> Result<Vector> {
        self.encode_id(item.key)
    }
}

/// An in-memory embedding table: `dim=<D>` header, then `<id>\t<v1>,...,<vD>` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// Rows in file order.
    pub rows: Vec<(String, Vector)>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable { dim, rows: Vec::new() }
    }

    pub fn push(&mut self, id: impl Into<String>, v: Vector) -> Result<()> {
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.dim(),
            });
        }
        self.rows.push((id.into(), v));
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<&str, &Vector> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v)).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::read(BufReader::new(file), &path.display().to_string())
    }

    pub fn read<R: BufRead>(reader: R, origin: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut table: Option<EmbeddingTable> = None;
        let mut seen = std::collections::HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some(t) = table.as_mut() else {
                let dim = line
                    .trim()
                    .strip_prefix("dim=")
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|d| *d > 0)
                    .ok_or_else(|| parse_err(lineno, format!("expected dim=<D> header, got {line:?}")))?;
                table = Some(EmbeddingTable::new(dim));
                continue;
            };
            let (id, values) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(lineno, "expected <id>\\t<values>".into()))?;
            let values = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(lineno, format!("bad value: {e}")))?;
            if values.len() != t.dim {
                return Err(parse_err(
                    lineno,
                    format!("row {id:?} has {} values, header says {}", values.len(), t.dim),
                ));
            }
            if !seen.insert(id.to_string()) {
                return Err(parse_err(lineno, format!("duplicate id {id:?}")));
            }
            t.rows.push((id.to_string(), Vector::new(values)));
        }
        table.ok_or_else(|| parse_err(0, "missing dim=<D> header".into()))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "dim={}", self.dim)?;
        for (id, v) in &self.rows {
            write!(out, "{id}\t")?;
            for (j, x) in v.as_slice().iter().enumerate() {
                if j > 0 {
                    out.write_all(b",")?;
                }
                write!(out, "{x}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EncodeResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for an encoding service reached over HTTP POST.
///
/// The underlying client pools connections, so concurrent `encode` calls are
/// fine; each call blocks until its response arrives.
pub struct RemoteEncoder {
    name: String,
    url: String,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEncoder {
    pub fn new(url: impl Into<String>, dim: usize, timeout: std::time::Duration) -> Result<Self> {
        let url = url.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::provider(&url, e.to_string(), false))?;
        Ok(RemoteEncoder {
            name: format!("remote:{url}"),
            url,
            dim,
            client,
        })
    }

    fn request(&self, texts: Vec<&str>) -> Result<Vec<Vector>> {
        let n = texts.len();
        let resp: EncodeResponse = post_json(&self.client, &self.name, &self.url, &EncodeRequest { texts })?;
        if resp.vectors.len() != n {
            return Err(Error::provider(
                &self.name,
                format!("asked for {n} vectors, got {}", resp.vectors.len()),
                false,
            ));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                Vector::normalized(v).map_err(|e| Error::provider(&self.name, e.to_string(), false))
            })
            .collect()
    }
}

/// POSTs a JSON body and decodes a JSON reply, classifying failures as
/// retriable (connection problems, timeouts, 5xx, 429) or not.
pub(crate) fn post_json<Req: Serialize, Resp: serde::de::DeserializeOwned>(
    client: &reqwest::blocking::Client,
    name: &str,
    url: &str,
    body: &Req,
) -> Result<Resp> {
    let resp = client
        .post(url)
        .json(body)
        .send()
        .map_err(|e| Error::provider(name, e.to_string(), e.is_connect() || e.is_timeout()))?;
    let status = resp.status();
    if !status.is_success() {
        let retriable = status.is_server_error() || status.as_u16() == 429;
        return Err(Error::provider(name, format!("HTTP {status}"), retriable));
    }
    resp.json::<Resp>()
        .map_err(|e| Error::provider(name, format!("bad response body: {e}"), false))
}

impl EncoderProvider for RemoteEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vector> {
        require_text(text)?;
        Ok(self.request(vec![text])?.remove(0))
    }

    fn encode_items(&self, items: &[TextItem<'_>]) -> Result<Vec<Vector>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        for i in items {
            require_text(i.text)?;
        }
        self.request(items.iter().map(|i| i.text).collect())
    }
}

/// Memoizes another provider by item key.
pub struct CachingEncoder<P> {
    inner: P,
    cache: RwLock<HashMap<String, Vector>>,
}

impl<P: EncoderProvider> CachingEncoder<P> {
    pub fn new(inner: P) -> Self {
        CachingEncoder {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// Pre-populates the cache, e.g. from a stored embedding table.
    pub fn insert(&self, key: impl Into<String>, v: Vector) {
        self.cache.write().unwrap().insert(key.into(), v);
    }

    pub fn cached(&self) -> usize {
        self.cache.read().unwrap().len()
    }
}

impl<P: EncoderProvider> EncoderProvider for CachingEncoder<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn encode(&self, text: &str) -> Result<Vector> {
        self.encode_item(TextItem::new(text, text))
    }

    fn encode_item(&self, item: TextItem<'_>) -> Result<Vector> {
        if let Some(v) = self.cache.read().unwrap().get(item.key) {
            return Ok(v.clone());
        }
        let v = self.inner.encode_item(item)?;
        self.cache.write().unwrap().insert(item.key.to_string(), v.clone());
        Ok(v)
    }

    /// Forwards all cache misses to the inner provider in one batch.
    fn encode_items(&self, items: &[TextItem<'_>]) -> Result<Vec<Vector>> {
        let mut out: Vec<Option<Vector>> = {
            let cache = self.cache.read().unwrap();
            items.iter().map(|i| cache.get(i.key).cloned()).collect()
        };
        let misses: Vec<usize> = (0..items.len()).filter(|&i| out[i].is_none()).collect();
        if !misses.is_empty() {
            let batch: Vec<TextItem<'_>> = misses.iter().map(|&i| items[i]).collect();
            let fresh = self.inner.encode_items(&batch)?;
            if fresh.len() != batch.len() {
                return Err(Error::provider(
                    self.inner.name(),
                    format!("{} vectors for {} items", fresh.len(), batch.len()),
                    false,
                ));
            }
            let mut cache = self.cache.write().unwrap();
            for (&i, v) in misses.iter().zip(fresh) {
                cache.insert(items[i].key.to_string(), v.clone());
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}
