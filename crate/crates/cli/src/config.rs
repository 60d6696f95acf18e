//! Pipeline configuration: one TOML file, every knob with a default.

use std::path::{Path, PathBuf};

use biasmap::corpus::Scale;
use biasmap::cross_encoder::{DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE, DEFAULT_NEGATIVES_PER_ARTICLE};
use biasmap::encoder::MIN_MOCK_DIM;
use biasmap::retrieval::{RetrievalConfig, DEFAULT_LAMBDA_RETRIEVAL};
use biasmap::topic_index::{ImportanceConfig, DEFAULT_LAMBDA_IMPORTANCE, DEFAULT_TOP_M};
use biasmap::topic_mining::{
    DEFAULT_K, DEFAULT_MAX_ITERS, DEFAULT_MIN_CLUSTER_SIZE, DEFAULT_SAMPLE_SIZE, DEFAULT_TAU_FIVE_POINT,
    DEFAULT_TAU_THREE_POINT,
};
use biasmap::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub corpus: CorpusSection,
    pub encoder: EncoderSection,
    pub mining: MiningSection,
    pub index: IndexSection,
    pub labels: LabelSection,
    pub scorer: ScorerSection,
    pub retrieval: RetrievalSection,
    pub eval: EvalSection,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Input JSONL read by `ingest`.
    pub path: PathBuf,
    pub scale: Scale,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            path: PathBuf::from("corpus.jsonl"),
            scale: Scale::FivePoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Mock,
    Table,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub kind: EncoderKind,
    /// Output dimension (mock and remote).
    pub dim: usize,
    /// Hash seed of the mock encoder.
    pub hash_seed: u64,
    /// Embedding table for `kind = "table"`.
    pub table: Option<PathBuf>,
    pub url: Option<String>,
    pub timeout_secs: u64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            kind: EncoderKind::Mock,
            dim: 256,
            hash_seed: 0,
            table: None,
            url: None,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Mock,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningSection {
    pub k: usize,
    /// Dispersion threshold; defaults by corpus scale when unset.
    pub tau: Option<f64>,
    pub min_cluster_size: usize,
    pub sample_size: usize,
    pub max_iters: usize,
    pub generator: GeneratorKind,
    /// Prompt/reply exchange directory of the offline generator,
    /// relative to the output directory.
    pub prompt_dir: PathBuf,
}

impl Default for MiningSection {
    fn default() -> Self {
        MiningSection {
            k: DEFAULT_K,
            tau: None,
            min_cluster_size: DEFAULT_MIN_CLUSTER_SIZE,
            sample_size: DEFAULT_SAMPLE_SIZE,
            max_iters: DEFAULT_MAX_ITERS,
            generator: GeneratorKind::Mock,
            prompt_dir: PathBuf::from("prompts"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexSection {
    pub lambda_importance: f64,
    pub m: usize,
}

impl Default for IndexSection {
    fn default() -> Self {
        IndexSection {
            lambda_importance: DEFAULT_LAMBDA_IMPORTANCE,
            m: DEFAULT_TOP_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelSection {
    pub negatives_per_article: usize,
}

impl Default for LabelSection {
    fn default() -> Self {
        LabelSection {
            negatives_per_article: DEFAULT_NEGATIVES_PER_ARTICLE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Bilinear,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerSection {
    pub kind: ScorerKind,
    pub url: Option<String>,
    pub timeout_secs: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for ScorerSection {
    fn default() -> Self {
        ScorerSection {
            kind: ScorerKind::Bilinear,
            url: None,
            timeout_secs: 60,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub k: usize,
    pub lambda_retrieval: f64,
    pub mu: f64,
    /// μ grid of `sweep`.
    pub mu_values: Vec<f64>,
    /// Number of query articles drawn from the corpus.
    pub queries: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            k: 10,
            lambda_retrieval: DEFAULT_LAMBDA_RETRIEVAL,
            mu: 0.5,
            mu_values: (1..10).map(|i| i as f64 / 10.0).collect(),
            queries: 20,
        }
    }
}

impl RetrievalSection {
    pub fn config(&self) -> RetrievalConfig {
        RetrievalConfig {
            k: self.k,
            lambda_retrieval: self.lambda_retrieval,
            mu: self.mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Internal logistic regression.
    Logistic,
    /// Score a predictions file produced elsewhere.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Held-out share; the same split keeps test articles out of weak labels.
    pub test_fraction: f64,
    pub classifier: ClassifierKind,
    /// JSONL of `{"id": .., "rating": ..}` for `classifier = "external"`.
    pub predictions: Option<PathBuf>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let c = biasmap::eval::ClassifierConfig::default();
        EvalSection {
            test_fraction: 0.1,
            classifier: ClassifierKind::Logistic,
            predictions: None,
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
        }
    }
}

/// Per-stage seeds. Unset stages derive theirs from `base`, which `--seed`
/// overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub base: u64,
    pub kmeans: Option<u64>,
    pub sampling: Option<u64>,
    pub labels: Option<u64>,
    pub training: Option<u64>,
    pub split: Option<u64>,
    pub queries: Option<u64>,
    pub classifier: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    KMeans,
    Sampling,
    Labels,
    Training,
    Split,
    Queries,
    Classifier,
}

impl Seeds {
    pub fn get(&self, stage: Stage) -> u64 {
        let (set, offset) = match stage {
            Stage::KMeans => (self.kmeans, 1),
            Stage::Sampling => (self.sampling, 2),
            Stage::Labels => (self.labels, 3),
            Stage::Training => (self.training, 4),
            Stage::Split => (self.split, 5),
            Stage::Queries => (self.queries, 6),
            Stage::Classifier => (self.classifier, 7),
        };
        set.unwrap_or_else(|| self.base.wrapping_add(offset))
    }
}

impl PipelineConfig {
    /// Parses a config file. Paths stay as written until [`resolve_paths`](Self::resolve_paths).
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {}", path.display(), e.message())))
    }

    /// Makes relative input paths relative to `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        self.corpus.path = base.join(&self.corpus.path);
        self.encoder.table = self.encoder.table.take().map(|p| base.join(p));
        self.eval.predictions = self.eval.predictions.take().map(|p| base.join(p));
    }

    pub fn tau(&self) -> f64 {
        self.mining.tau.unwrap_or(match self.corpus.scale {
            Scale::FivePoint => DEFAULT_TAU_FIVE_POINT,
            Scale::ThreePoint => DEFAULT_TAU_THREE_POINT,
        })
    }

    pub fn importance(&self) -> ImportanceConfig {
        ImportanceConfig {
            lambda_importance: self.index.lambda_importance,
            m: self.index.m,
        }
    }

    /// Checks every field against the preconditions of the stage that uses it.
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::Validation(msg));
        let enc = &self.encoder;
        match enc.kind {
            EncoderKind::Mock if enc.dim < MIN_MOCK_DIM => {
                return bad(format!("encoder.dim = {} below the mock minimum {MIN_MOCK_DIM}", enc.dim))
            }
            EncoderKind::Table if enc.table.is_none() => return bad("encoder.kind = \"table\" needs encoder.table".into()),
            EncoderKind::Remote if enc.url.is_none() => return bad("encoder.kind = \"remote\" needs encoder.url".into()),
            EncoderKind::Remote if enc.dim == 0 => return bad("encoder.dim must be positive".into()),
            _ => {}
        }
        let mining = &self.mining;
        if mining.k == 0 {
            return bad("mining.k must be at least 1".into());
        }
        let tau = self.tau();
        if !(tau.is_finite() && tau >= 0.0) {
            return bad(format!("mining.tau = {tau} must be a non-negative number"));
        }
        if mining.min_cluster_size == 0 || mining.sample_size == 0 || mining.max_iters == 0 {
            return bad("mining.min_cluster_size, sample_size and max_iters must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.index.lambda_importance) {
            return bad(format!("index.lambda_importance = {} outside [0, 1]", self.index.lambda_importance));
        }
        if self.index.m == 0 {
            return bad("index.m must be at least 1".into());
        }
        let sc = &self.scorer;
        if sc.kind == ScorerKind::Remote && sc.url.is_none() {
            return bad("scorer.kind = \"remote\" needs scorer.url".into());
        }
        if !(sc.learning_rate.is_finite() && sc.learning_rate > 0.0) || sc.batch_size == 0 {
            return bad("scorer.learning_rate must be positive and scorer.batch_size at least 1".into());
        }
        let r = &self.retrieval;
        self.retrieval.config().validate().map_err(|e| Error::Validation(format!("retrieval: {e}")))?;
        if r.mu_values.is_empty() {
            return bad("retrieval.mu_values is empty".into());
        }
        if let Some(mu) = r.mu_values.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
            return bad(format!("retrieval.mu_values contains {mu}, outside (0, 1)"));
        }
        if r.queries == 0 {
            return bad("retrieval.queries must be at least 1".into());
        }
        let ev = &self.eval;
        if !(ev.test_fraction > 0.0 && ev.test_fraction < 1.0) {
            return bad(format!("eval.test_fraction = {} outside (0, 1)", ev.test_fraction));
        }
        if ev.classifier == ClassifierKind::External && ev.predictions.is_none() {
            return bad("eval.classifier = \"external\" needs eval.predictions".into());
        }
        if !(ev.learning_rate.is_finite() && ev.learning_rate > 0.0) || ev.batch_size == 0 {
            return bad("eval.learning_rate must be positive and eval.batch_size at least 1".into());
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&canonical)[..8])
    }
}
