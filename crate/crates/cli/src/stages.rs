//! One function per subcommand. Each reads its declared inputs from the
//! output directory and writes its outputs there.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use biasmap::corpus::{read_corpus, split_corpus, BiasClass, Corpus};
use biasmap::cross_encoder::{train, AlignmentScorer, BilinearParams, BilinearScorer, RemoteScorer, TrainConfig, WeakPair};
use biasmap::embedding::{densify, embed_corpus, read_embeddings, write_embeddings, BiasEmbedding};
use biasmap::encoder::{
    file_encoder, mock_encoder, CachingEncoder, EmbeddingTable, EncoderProvider, RemoteEncoder, TextItem, Vector,
};
use biasmap::eval::{compute_metrics, frontier_sweep, spearman, train_classifier, write_frontier, ClassificationReport, ClassifierConfig};
use biasmap::retrieval::{greedy_dkmips, DiversityVector, DualSpaceItem};
use biasmap::topic_index::{build_index, ImportanceConfig, TopicIndex};
use biasmap::topic_mining::{
    extract_topics, filter_controversial, kmeans, read_jsonl, read_topics, write_jsonl, ClusterAssignment,
    ControversialCluster, IndicatorGenerator, MockGenerator, OfflineGenerator, Topic,
};
use biasmap::{Error, Result};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self as art, read_stamp, Workspace};
use crate::config::{ClassifierKind, EncoderKind, GeneratorKind, PipelineConfig, ScorerKind, Stage};

/// Batch size for encoder requests.
const ENCODE_CHUNK: usize = 64;

pub struct Ctx {
    /// Config with input paths resolved.
    pub cfg: PipelineConfig,
    /// Config exactly as hashed; echoed into reports.
    pub echo: PipelineConfig,
    pub ws: Workspace,
}

impl Ctx {
    fn seed(&self, stage: Stage) -> u64 {
        let s = self.cfg.seeds.get(stage);
        info!("seed[{stage:?}] = {s}");
        s
    }

    fn corpus(&self) -> Result<Corpus> {
        let (r, origin) = self.ws.open(art::CORPUS)?;
        read_corpus(r, &origin, self.cfg.corpus.scale)
    }

    fn table(&self, name: &str) -> Result<EmbeddingTable> {
        let (r, origin) = self.ws.open(name)?;
        EmbeddingTable::read(r, &origin)
    }

    fn clusters(&self) -> Result<Vec<ControversialCluster>> {
        let (r, origin) = self.ws.open(art::CLUSTERS)?;
        read_jsonl(r, &origin)
    }

    fn topics(&self) -> Result<Vec<Topic>> {
        let (r, origin) = self.ws.open(art::TOPICS)?;
        read_topics(r, &origin)
    }

    fn embeddings(&self) -> Result<(Vec<BiasEmbedding>, usize)> {
        let (r, origin) = self.ws.open(art::EMBEDDINGS)?;
        read_embeddings(r, &origin)
    }

    fn encoder(&self) -> Result<Arc<dyn EncoderProvider>> {
        let e = &self.cfg.encoder;
        Ok(match e.kind {
            EncoderKind::Mock => Arc::new(mock_encoder(e.dim, e.hash_seed)?),
            EncoderKind::Table => Arc::new(file_encoder(e.table.as_ref().expect("validated"))?),
            EncoderKind::Remote => Arc::new(RemoteEncoder::new(
                e.url.as_ref().expect("validated"),
                e.dim,
                Duration::from_secs(e.timeout_secs),
            )?),
        })
    }

    /// Encoder whose cache is pre-filled from stored vector tables, so later
    /// stages reuse the vectors computed earlier instead of re-encoding.
    fn cached_encoder(&self, tables: &[&str]) -> Result<Arc<dyn EncoderProvider>> {
        let enc = CachingEncoder::new(self.encoder()?);
        for name in tables {
            let t = self.table(name)?;
            if t.dim != enc.dim() {
                return Err(Error::DimensionMismatch {
                    expected: enc.dim(),
                    got: t.dim,
                });
            }
            for (id, v) in t.rows {
                enc.insert(id, v);
            }
        }
        Ok(Arc::new(enc))
    }

    /// Train/test partitions shared by `gen-labels` and `evaluate`.
    fn split(&self, corpus: &Corpus) -> Result<(Corpus, Corpus)> {
        let f = self.cfg.eval.test_fraction;
        let mut parts = split_corpus(corpus, &[1.0 - f, f], self.seed(Stage::Split))?;
        let test = parts.pop().expect("two partitions");
        let train = parts.pop().expect("two partitions");
        Ok((train, test))
    }

    fn importance(&self, topic_count: usize) -> ImportanceConfig {
        let mut c = self.cfg.importance();
        if c.m > topic_count {
            warn!("index.m = {} exceeds the {topic_count} mined topics; using m = {topic_count}", c.m);
            c.m = topic_count;
        }
        c
    }
}

fn vectors_in_corpus_order(corpus: &Corpus, table: &EmbeddingTable) -> Result<Vec<Vector>> {
    let map = table.to_map();
    corpus
        .articles
        .iter()
        .map(|a| map.get(a.id.as_str()).map(|v| (*v).clone()).ok_or_else(|| Error::Lookup(a.id.clone())))
        .collect()
}

pub fn ingest(ctx: &Ctx) -> Result<()> {
    let path = &ctx.cfg.corpus.path;
    if !path.is_file() {
        return Err(Error::MissingInput(path.clone()));
    }
    let corpus = biasmap::corpus::load_corpus(path, ctx.cfg.corpus.scale)?;
    info!("ingested {} articles from {}", corpus.len(), path.display());
    ctx.ws.create(art::CORPUS, |w| corpus.write_jsonl(w))?;
    Ok(())
}

pub fn embed_corpus_stage(ctx: &Ctx) -> Result<()> {
    let corpus = ctx.corpus()?;
    let enc = ctx.encoder()?;
    let mut table = EmbeddingTable::new(enc.dim());
    for chunk in corpus.articles.chunks(ENCODE_CHUNK) {
        let items: Vec<TextItem<'_>> = chunk.iter().map(|a| TextItem::new(&a.id, &a.text)).collect();
        for (a, v) in chunk.iter().zip(enc.encode_items(&items)?) {
            table.push(a.id.clone(), v)?;
        }
    }
    info!("encoded {} articles with {} (dim {})", corpus.len(), enc.name(), enc.dim());
    ctx.ws.create(art::ARTICLE_VECTORS, |w| table.write(w))?;
    Ok(())
}

pub fn mine_topics(ctx: &Ctx) -> Result<()> {
    let corpus = ctx.corpus()?;
    let vectors = vectors_in_corpus_order(&corpus, &ctx.table(art::ARTICLE_VECTORS)?)?;
    let m = &ctx.cfg.mining;
    let fit = kmeans(&vectors, m.k, ctx.seed(Stage::KMeans), m.max_iters)?;
    info!(
        "k-means: k = {}, {} iterations, converged = {}, inertia = {:.6}",
        m.k,
        fit.iterations,
        fit.converged,
        fit.inertia()
    );
    if !fit.converged {
        warn!("k-means stopped at max_iters = {} before converging", m.max_iters);
    }
    let ids = corpus.articles.iter().map(|a| a.id.clone()).collect();
    let assignment = ClusterAssignment::new(ids, fit)?;
    let tau = ctx.cfg.tau();
    let clusters = filter_controversial(&assignment, &corpus, tau, m.min_cluster_size)?;
    info!(
        "{} of {} clusters pass dispersion > {tau} and size >= {}",
        clusters.len(),
        m.k,
        m.min_cluster_size
    );
    ctx.ws.create(art::CLUSTERS, |w| write_jsonl(&clusters, w))?;
    if clusters.is_empty() {
        return Err(Error::Validation("no controversial clusters; lower mining.tau or mining.min_cluster_size".into()));
    }

    let generator: Box<dyn IndicatorGenerator> = match m.generator {
        GeneratorKind::Mock => Box::new(MockGenerator),
        GeneratorKind::Offline => Box::new(OfflineGenerator::new(ctx.ws.dir.join(&m.prompt_dir))),
    };
    let topics = extract_topics(&clusters, &corpus, m.sample_size, ctx.seed(Stage::Sampling), generator.as_ref())?;
    ctx.ws.create(art::TOPICS, |w| write_jsonl(&topics, w))?;
    Ok(())
}

pub fn build_index_stage(ctx: &Ctx) -> Result<()> {
    let topics = ctx.topics()?;
    let index = build_index(&topics, ctx.encoder()?.as_ref())?;
    info!("indexed {} topics", index.len());
    ctx.ws.create(art::INDEX_VECTORS, |w| index.to_table().write(w))?;
    Ok(())
}

/// Weak labels come from training-split articles only, so evaluation never
/// sees a test article whose rating leaked into the scorer.
pub fn gen_labels(ctx: &Ctx) -> Result<()> {
    let corpus = ctx.corpus()?;
    let topics = ctx.topics()?;
    let (train_part, _) = ctx.split(&corpus)?;
    let keep: std::collections::HashSet<&str> = train_part.articles.iter().map(|a| a.id.as_str()).collect();
    let clusters: Vec<ControversialCluster> = ctx
        .clusters()?
        .into_iter()
        .map(|mut c| {
            c.member_ids.retain(|id| keep.contains(id.as_str()));
            c
        })
        .collect();
    let pairs = biasmap::cross_encoder::generate_weak_labels(
        &corpus,
        &clusters,
        &topics,
        ctx.cfg.labels.negatives_per_article,
        ctx.seed(Stage::Labels),
    )?;
    let positives = pairs.iter().filter(|p| p.label == 1.0).count();
    info!("{} weak pairs ({positives} positive)", pairs.len());
    ctx.ws.create(art::WEAK_PAIRS, |w| write_jsonl(&pairs, w))?;
    Ok(())
}

pub fn train_scorer(ctx: &Ctx) -> Result<()> {
    let s = &ctx.cfg.scorer;
    if s.kind != ScorerKind::Bilinear {
        return Err(Error::Validation("train-scorer needs scorer.kind = \"bilinear\"".into()));
    }
    let corpus = ctx.corpus()?;
    let topics = ctx.topics()?;
    let pairs: Vec<WeakPair> = {
        let (r, origin) = ctx.ws.open(art::WEAK_PAIRS)?;
        read_jsonl(r, &origin)?
    };
    let enc = ctx.cached_encoder(&[art::ARTICLE_VECTORS, art::INDEX_VECTORS])?;
    let config = TrainConfig {
        learning_rate: s.learning_rate,
        batch_size: s.batch_size,
        epochs: s.epochs,
        seed: ctx.seed(Stage::Training),
        negatives_per_article: ctx.cfg.labels.negatives_per_article,
    };
    let (scorer, history) = train(BilinearScorer::new(enc), &pairs, &topics, &corpus, &config)?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        info!("scorer loss {first:.6} -> {last:.6} over {} epochs", config.epochs);
    }
    ctx.ws.create(art::SCORER, |w| scorer.params.write(w))?;
    ctx.ws.create(art::TRAIN_LOSS, |w| {
        writeln!(w, "epoch\tloss")?;
        for (i, l) in history.iter().enumerate() {
            writeln!(w, "{}\t{l}", i + 1)?;
        }
        Ok(())
    })?;
    Ok(())
}

pub fn embed(ctx: &Ctx) -> Result<()> {
    let corpus = ctx.corpus()?;
    let index = TopicIndex::from_table(ctx.topics()?, &ctx.table(art::INDEX_VECTORS)?)?;
    let enc = ctx.cached_encoder(&[art::ARTICLE_VECTORS, art::INDEX_VECTORS])?;
    let scorer: Box<dyn AlignmentScorer> = match ctx.cfg.scorer.kind {
        ScorerKind::Bilinear => {
            let (r, origin) = ctx.ws.open(art::SCORER)?;
            Box::new(BilinearScorer::with_params(enc.clone(), BilinearParams::read(r, &origin)?)?)
        }
        ScorerKind::Remote => Box::new(RemoteScorer::new(
            ctx.cfg.scorer.url.as_ref().expect("validated"),
            Duration::from_secs(ctx.cfg.scorer.timeout_secs),
        )?),
    };
    let importance = ctx.importance(index.len());
    let embs = embed_corpus(&corpus, &index, scorer.as_ref(), &importance, enc.as_ref())?;
    let nnz: usize = embs.iter().map(|e| e.nnz()).sum();
    info!(
        "embedded {} articles over {} topics (m = {}, mean nonzeros {:.3})",
        embs.len(),
        index.len(),
        importance.m,
        nnz as f64 / embs.len().max(1) as f64
    );
    ctx.ws.create(art::EMBEDDINGS, |w| write_embeddings(&embs, index.len(), importance.m, w))?;
    Ok(())
}

/// Retrieval pool (every article: encoder vector for relevance, bias
/// embedding for diversity) plus the seeded query sample, as pool positions.
fn dual_space(ctx: &Ctx) -> Result<(Vec<DualSpaceItem>, Vec<usize>)> {
    let corpus = ctx.corpus()?;
    let vectors = vectors_in_corpus_order(&corpus, &ctx.table(art::ARTICLE_VECTORS)?)?;
    let (embs, _) = ctx.embeddings()?;
    let mut by_id: HashMap<String, BiasEmbedding> = embs.into_iter().map(|e| (e.article_id.clone(), e)).collect();
    let pool = corpus
        .articles
        .iter()
        .zip(vectors)
        .map(|(a, v)| {
            let e = by_id.remove(&a.id).ok_or_else(|| Error::Lookup(a.id.clone()))?;
            Ok(DualSpaceItem {
                id: a.id.clone(),
                rel_vec: v,
                div_vec: DiversityVector::Sparse(e),
                rating: a.rating,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = ctx.cfg.retrieval.queries.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed(Stage::Queries));
    let mut queries = rand::seq::index::sample(&mut rng, pool.len(), n).into_vec();
    queries.sort_unstable();
    Ok((pool, queries))
}

#[derive(Serialize)]
struct RetrievalRecord<'a> {
    query_id: &'a str,
    selected: &'a [String],
    sim: f64,
    div: Option<f64>,
    f: f64,
    config: biasmap::retrieval::RetrievalConfig,
}

pub fn retrieve(ctx: &Ctx) -> Result<()> {
    let (pool, queries) = dual_space(ctx)?;
    let config = ctx.cfg.retrieval.config();
    if config.k > pool.len() {
        return Err(Error::Validation(format!("retrieval.k = {} exceeds the pool of {}", config.k, pool.len())));
    }
    let mut records = Vec::with_capacity(queries.len());
    for &q in &queries {
        let r = greedy_dkmips(&pool, &pool[q].rel_vec, &config)?;
        records.push((q, r));
    }
    ctx.ws.create(art::RETRIEVAL, |w| {
        for (q, r) in &records {
            let rec = RetrievalRecord {
                query_id: &pool[*q].id,
                selected: &r.ids,
                sim: r.sim,
                div: r.div,
                f: r.objective,
                config,
            };
            serde_json::to_writer(&mut *w, &rec).map_err(std::io::Error::from)?;
            writeln!(w)?;
        }
        Ok(())
    })?;
    Ok(())
}

pub fn sweep(ctx: &Ctx) -> Result<()> {
    let (pool, queries) = dual_space(ctx)?;
    let qs: Vec<Vector> = queries.iter().map(|&q| pool[q].rel_vec.clone()).collect();
    let mus = &ctx.cfg.retrieval.mu_values;
    let rows = frontier_sweep(&pool, &qs, mus, &ctx.cfg.retrieval.config())?;
    let sims: Vec<f64> = rows.iter().map(|r| r.mean_sim).collect();
    let divs: Vec<f64> = rows.iter().map(|r| r.mean_div).collect();
    info!(
        "frontier: spearman(mu, sim) = {:?}, spearman(mu, div) = {:?}",
        spearman(mus, &sims),
        spearman(mus, &divs)
    );
    ctx.ws.create(art::FRONTIER, |w| write_frontier(&rows, w))?;
    Ok(())
}

type FeatureLookup<'a> = &'a dyn Fn(&str) -> Option<Vec<f64>>;

#[derive(Serialize)]
struct Report<'a> {
    config_hash: &'a str,
    version: &'a str,
    commit: &'a str,
    corpus: CorpusId,
    split: SplitInfo,
    runs: Vec<Run>,
    config: &'a PipelineConfig,
}

#[derive(Serialize)]
struct CorpusId {
    articles: usize,
    /// SHA-256 of the canonical JSONL form.
    sha256: String,
}

#[derive(Serialize)]
struct SplitInfo {
    train: usize,
    test: usize,
    seed: u64,
}

#[derive(Serialize)]
struct Run {
    features: String,
    labels: String,
    train_loss: Option<f64>,
    report: ClassificationReport,
}

#[derive(Deserialize)]
struct Prediction {
    id: String,
    rating: i64,
}

fn fit_and_score<L: Ord + Clone + std::fmt::Display>(
    xtr: &[Vec<f64>],
    ytr: &[L],
    xte: &[Vec<f64>],
    yte: &[L],
    cfg: &ClassifierConfig,
) -> Result<(f64, ClassificationReport)> {
    let (model, loss) = train_classifier(xtr, ytr, cfg)?;
    let report = compute_metrics(&model.predict_all(xte)?, yte)?;
    Ok((loss, report))
}

/// Checks that every input was produced under the current config.
fn check_hashes(ctx: &Ctx, names: &[&str], allow_mixed: bool) -> Result<()> {
    let mut mismatched = Vec::new();
    for name in names {
        let p = ctx.ws.require(name)?;
        let stamp = read_stamp(&p)?;
        if stamp.as_deref() != Some(ctx.ws.hash.as_str()) {
            mismatched.push(format!("{name} ({})", stamp.as_deref().unwrap_or("unstamped")));
        }
    }
    if mismatched.is_empty() {
        return Ok(());
    }
    let msg = format!(
        "inputs not produced by config {}: {}",
        ctx.ws.hash,
        mismatched.join(", ")
    );
    if allow_mixed {
        warn!("{msg}; continuing because --allow-mixed-hash was given");
        Ok(())
    } else {
        Err(Error::Validation(format!("{msg} (pass --allow-mixed-hash to override)")))
    }
}

pub fn evaluate(ctx: &Ctx, allow_mixed_hash: bool) -> Result<()> {
    check_hashes(ctx, &[art::CORPUS, art::ARTICLE_VECTORS, art::EMBEDDINGS], allow_mixed_hash)?;
    let corpus = ctx.corpus()?;
    let (train_part, test_part) = ctx.split(&corpus)?;
    let mut canonical = Vec::new();
    corpus.write_jsonl(&mut canonical)?;
    use sha2::Digest;
    let corpus_id = CorpusId {
        articles: corpus.len(),
        sha256: hex::encode(sha2::Sha256::digest(&canonical)),
    };
    let three = |c: &Corpus| -> Result<Vec<BiasClass>> { c.articles.iter().map(|a| c.class_of(a)).collect() };
    let native = |c: &Corpus| -> Vec<i64> { c.articles.iter().map(|a| a.rating).collect() };

    let mut runs = Vec::new();
    match ctx.cfg.eval.classifier {
        ClassifierKind::Logistic => {
            let vectors = ctx.table(art::ARTICLE_VECTORS)?;
            let raw = vectors.to_map();
            let (embs, _) = ctx.embeddings()?;
            let sparse: HashMap<&str, Vec<f64>> = embs.iter().map(|e| (e.article_id.as_str(), densify(e))).collect();
            let cfg = ClassifierConfig {
                epochs: ctx.cfg.eval.epochs,
                learning_rate: ctx.cfg.eval.learning_rate,
                batch_size: ctx.cfg.eval.batch_size,
                seed: ctx.seed(Stage::Classifier),
            };
            let feats = |c: &Corpus, lookup: FeatureLookup| -> Result<Vec<Vec<f64>>> {
                c.articles
                    .iter()
                    .map(|a| lookup(&a.id).ok_or_else(|| Error::Lookup(a.id.clone())))
                    .collect()
            };
            let sparse_lookup = |id: &str| sparse.get(id).cloned();
            let raw_lookup = |id: &str| raw.get(id).map(|v| v.as_slice().to_vec());
            let sources: [(&str, FeatureLookup); 2] =
                [("sparse", &sparse_lookup), ("raw", &raw_lookup)];
            for (name, lookup) in sources {
                let (xtr, xte) = (feats(&train_part, lookup)?, feats(&test_part, lookup)?);
                let (loss, report) = fit_and_score(&xtr, &native(&train_part), &xte, &native(&test_part), &cfg)?;
                runs.push(Run {
                    features: name.into(),
                    labels: "native".into(),
                    train_loss: Some(loss),
                    report,
                });
                let (loss, report) = fit_and_score(&xtr, &three(&train_part)?, &xte, &three(&test_part)?, &cfg)?;
                runs.push(Run {
                    features: name.into(),
                    labels: "three_class".into(),
                    train_loss: Some(loss),
                    report,
                });
            }
        }
        ClassifierKind::External => {
            let path = ctx.cfg.eval.predictions.as_ref().expect("validated");
            let file = std::fs::File::open(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingInput(path.clone()),
                _ => Error::Io(e),
            })?;
            let preds: Vec<Prediction> = read_jsonl(std::io::BufReader::new(file), &path.display().to_string())?;
            let scale = ctx.cfg.corpus.scale;
            let mut gold = Vec::with_capacity(preds.len());
            for p in &preds {
                let a = corpus.get(&p.id).ok_or_else(|| Error::Lookup(p.id.clone()))?;
                if !scale.contains(p.rating) {
                    return Err(Error::Validation(format!("prediction {} for {} is off the scale", p.rating, p.id)));
                }
                gold.push(a.rating);
            }
            let pred: Vec<i64> = preds.iter().map(|p| p.rating).collect();
            let to_class = |xs: &[i64]| -> Result<Vec<BiasClass>> {
                xs.iter().map(|r| biasmap::corpus::rating_to_class(*r, scale)).collect()
            };
            runs.push(Run {
                features: "external".into(),
                labels: "native".into(),
                train_loss: None,
                report: compute_metrics(&pred, &gold)?,
            });
            runs.push(Run {
                features: "external".into(),
                labels: "three_class".into(),
                train_loss: None,
                report: compute_metrics(&to_class(&pred)?, &to_class(&gold)?)?,
            });
        }
    }
    for r in &runs {
        info!(
            "{} / {}: accuracy {:.4}, macro-F1 {:.4}",
            r.features, r.labels, r.report.accuracy, r.report.f1_macro
        );
    }
    let report = Report {
        config_hash: &ctx.ws.hash,
        version: env!("CARGO_PKG_VERSION"),
        commit: option_env!("BIASMAP_COMMIT").unwrap_or("unknown"),
        corpus: corpus_id,
        split: SplitInfo {
            train: train_part.len(),
            test: test_part.len(),
            seed: ctx.cfg.seeds.get(Stage::Split),
        },
        runs,
        config: &ctx.echo,
    };
    ctx.ws.write_raw(art::REPORT, |w| {
        serde_json::to_writer_pretty(&mut *w, &report).map_err(std::io::Error::from)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(())
}
