//! Output-directory layout and hash-stamped artifact files.
//!
//! Every text artifact starts with a `# config=<hash>` line; all readers in
//! the library skip `#` lines, so stamped files stay readable as plain inputs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use biasmap::{Error, Result};

pub const CORPUS: &str = "corpus.jsonl";
pub const ARTICLE_VECTORS: &str = "article_vectors.tsv";
pub const CLUSTERS: &str = "clusters.jsonl";
pub const TOPICS: &str = "topics.jsonl";
pub const INDEX_VECTORS: &str = "index_vectors.tsv";
pub const WEAK_PAIRS: &str = "weak_pairs.jsonl";
pub const SCORER: &str = "scorer.ckpt";
pub const TRAIN_LOSS: &str = "train_loss.tsv";
pub const EMBEDDINGS: &str = "embeddings.txt";
pub const RETRIEVAL: &str = "retrieval.jsonl";
pub const REPORT: &str = "report.json";
pub const FRONTIER: &str = "frontier.tsv";

const STAMP: &str = "# config=";

pub struct Workspace {
    pub dir: PathBuf,
    pub hash: String,
}

impl Workspace {
    pub fn new(dir: PathBuf, hash: String) -> Self {
        Workspace { dir, hash }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Path of a declared input; missing files are reported by path.
    pub fn require(&self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(Error::MissingInput(p));
        }
        Ok(p)
    }

    /// Opens a declared input, warning when it was produced under another config.
    pub fn open(&self, name: &str) -> Result<(BufReader<File>, String)> {
        let p = self.require(name)?;
        if let Some(h) = read_stamp(&p)? {
            if h != self.hash {
                log::warn!("{name} was written with config {h}, current config is {}", self.hash);
            }
        }
        Ok((BufReader::new(File::open(&p)?), p.display().to_string()))
    }

    /// Writes a stamped artifact via a temporary file, so a failed stage never
    /// leaves a truncated output behind.
    pub fn create(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        self.write_raw(name, |w| {
            writeln!(w, "{STAMP}{}", self.hash)?;
            body(w)
        })
    }

    /// Like [`create`](Self::create) without the stamp line (for JSON documents,
    /// which carry the hash as a field instead).
    pub fn write_raw(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            body(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, &path)?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

/// The config hash stamped on the first line of an artifact, if any.
pub fn read_stamp(path: &Path) -> Result<Option<String>> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    Ok(first.trim_end().strip_prefix(STAMP).map(str::to_string))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamp_roundtrip_and_missing_input() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path().to_path_buf(), "abc123".into());
        match ws.require(TOPICS) {
            Err(Error::MissingInput(p)) => assert!(p.ends_with(TOPICS)),
            other => panic!("expected missing input, got {other:?}"),
        }
        let p = ws
            .create(TOPICS, |w| {
                w.write_all(b"{}\n")?;
                Ok(())
            })
            .unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "# config=abc123\n{}\n");
        assert_eq!(read_stamp(&p).unwrap().as_deref(), Some("abc123"));
        assert!(!ws.path(&format!(".{TOPICS}.tmp")).exists());
    }
}
