//! File writers. Every file starts with a header naming the tool version,
//! seed and config hash: a `#` comment line for CSV, a `{"header": ...}`
//! record for JSON-lines, and a `header` field for JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Header {
    pub fn new(cfg: &RunConfig, command: &str) -> Result<Self> {
        Ok(Self {
            tool: "mailbox".into(),
            version: VERSION.into(),
            command: command.into(),
            seed: cfg.seed,
            config_hash: cfg.hash()?,
        })
    }

    pub fn comment_line(&self) -> String {
        format!(
            "# {} {} command={} seed={} config_hash={}",
            self.tool, self.version, self.command, self.seed, self.config_hash
        )
    }
}

/// Writes into the configured output directory, creating it on first use.
pub struct OutputDir {
    root: PathBuf,
    header: Header,
}

impl OutputDir {
    pub fn new(cfg: &RunConfig, command: &str) -> Result<Self> {
        std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
        Ok(Self {
            root: cfg.out.clone(),
            header: Header::new(cfg, command)?,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        Ok(BufWriter::new(
            File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        ))
    }

    pub fn csv<R, I>(&self, name: &str, columns: &[&str], rows: I) -> Result<PathBuf>
    where
        R: Serialize,
        I: IntoIterator<Item = R>,
    {
        let mut file = self.create(name)?;
        writeln!(file, "{}", self.header.comment_line())?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        w.write_record(columns)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(self.path(name))
    }

    pub fn jsonl<R, I>(&self, name: &str, rows: I) -> Result<PathBuf>
    where
        R: Serialize,
        I: IntoIterator<Item = R>,
    {
        #[derive(Serialize)]
        struct HeaderRecord<'a> {
            header: &'a Header,
        }
        let mut file = self.create(name)?;
        serde_json::to_writer(&mut file, &HeaderRecord { header: &self.header })?;
        writeln!(file)?;
        for row in rows {
            serde_json::to_writer(&mut file, &row)?;
            writeln!(file)?;
        }
        file.flush()?;
        Ok(self.path(name))
    }

    pub fn json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf> {
        let mut file = self.create(name)?;
        serde_json::to_writer_pretty(&mut file, &WithHeader::new(&self.header, body))?;
        writeln!(file)?;
        file.flush()?;
        Ok(self.path(name))
    }
}

/// JSON document with the header merged in as its first field.
#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct WithHeader<H, T> {
    pub header: H,
    #[serde(flatten)]
    pub body: T,
}

impl<'a, T> WithHeader<&'a Header, &'a T> {
    pub fn new(header: &'a Header, body: &'a T) -> Self {
        Self { header, body }
    }
}
