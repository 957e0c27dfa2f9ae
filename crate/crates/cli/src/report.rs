//! Output directory writer. Every CSV starts with a
//! `# config_hash=<hash>,seed=<seed>` line, every JSON document carries the
//! hash, the seed and the full resolved configuration, and the resolved
//! configuration itself is written as `config.toml`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use solarprob::{Error, Result};

use crate::config::RunConfig;

pub struct Reporter {
    dir: PathBuf,
    config: RunConfig,
    hash: String,
    seed: u64,
}

/// JSON envelope of every emitted document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    #[serde(flatten)]
    pub payload: T,
}

impl Reporter {
    /// Creates the directory (if needed) and writes `config.toml`.
    pub fn new(dir: &Path, config: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot create {}: {e}", dir.display()))))?;
        let rep = Self {
            dir: dir.to_path_buf(),
            config: config.clone(),
            hash: config.hash(),
            seed: config.seed()?,
        };
        let header = format!("# config_hash={}\n# seed={}\n", rep.hash, rep.seed);
        std::fs::write(dir.join("config.toml"), header + &config.to_toml()?)?;
        Ok(rep)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes a CSV produced by `body` after the stamp line.
    pub fn csv<F>(&self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = format!("# config_hash={},seed={}\n", self.hash, self.seed).into_bytes();
        body(&mut buf)?;
        let path = self.path(name);
        std::fs::write(&path, buf)?;
        Ok(path)
    }

    pub fn stamp<T>(&self, payload: T) -> Stamped<T> {
        Stamped {
            config_hash: self.hash.clone(),
            seed: self.seed,
            config: self.config.clone(),
            payload,
        }
    }

    /// Writes `payload` (which must serialize to a JSON object) inside the envelope.
    pub fn json<T: Serialize>(&self, name: &str, payload: &T) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, serde_json::to_string_pretty(&self.stamp(payload))?)?;
        Ok(path)
    }
}

/// Writes a plain `header` + rows CSV.
pub fn write_table<W: std::io::Write>(writer: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`Reporter::csv`], skipping the stamp line.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Payload {
        value: f64,
    }

    #[test]
    fn files_carry_hash_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            seed: Some(9),
            ..RunConfig::default()
        };
        let rep = Reporter::new(&dir.path().join("nested/out"), &cfg).unwrap();
        let p = rep
            .csv("t.csv", |w| write_table(w, &["a", "b"], &[vec!["1".into(), "2".into()]]))
            .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(&format!("# config_hash={},seed=9\n", cfg.hash())));
        let (h, rows) = read_table(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows, vec![vec!["1".to_string(), "2".to_string()]]);

        let j = rep.json("p.json", &Payload { value: 0.5 }).unwrap();
        let back: Stamped<Payload> = serde_json::from_str(&std::fs::read_to_string(j).unwrap()).unwrap();
        assert_eq!(back.seed, 9);
        assert_eq!(back.config, cfg);
        assert_eq!(back.payload.value, 0.5);

        let toml_text = std::fs::read_to_string(rep.path("config.toml")).unwrap();
        assert_eq!(RunConfig::from_toml(&toml_text).unwrap(), cfg);
    }

    #[test]
    fn unwritable_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, "x").unwrap();
        let cfg = RunConfig {
            seed: Some(1),
            ..RunConfig::default()
        };
        assert!(Reporter::new(&file.join("sub"), &cfg).is_err());
    }
}
