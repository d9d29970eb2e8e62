//! Output files. Every JSON file carries a `meta` block and every CSV file
//! starts with a `#` comment line holding the same fields.

use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use serde::Serialize;

pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    meta: &'a Meta,
    result: &'a T,
}

pub struct Sink {
    pub dir: PathBuf,
    pub meta: Meta,
    pub written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: PathBuf, command: &str, config_hash: String, seed: u64) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir,
            meta: Meta {
                tool: "choicecal",
                version: env!("CARGO_PKG_VERSION"),
                schema_version: OUTPUT_SCHEMA_VERSION,
                command: command.to_string(),
                config_hash,
                seed,
            },
            written: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> anyhow::Result<(PathBuf, std::io::BufWriter<std::fs::File>)> {
        let path = self.dir.join(name);
        let f = std::fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(path.clone());
        Ok((path, std::io::BufWriter::new(f)))
    }

    pub fn comment_line(&self) -> String {
        format!(
            "# {} {} schema={} command={} config_hash={} seed={}\n",
            self.meta.tool,
            self.meta.version,
            self.meta.schema_version,
            self.meta.command,
            self.meta.config_hash,
            self.meta.seed
        )
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> anyhow::Result<()> {
        let meta = self.meta.clone();
        let (_, mut w) = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &Envelope { meta: &meta, result })?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// CSV with a metadata comment line, a header row and string cells.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
        let comment = self.comment_line();
        let (_, mut w) = self.create(name)?;
        w.write_all(comment.as_bytes())?;
        let mut c = csv::Writer::from_writer(w);
        c.write_record(header)?;
        for r in rows {
            c.write_record(r)?;
        }
        c.flush()?;
        Ok(())
    }

    /// Raw writer that already holds the comment line.
    pub fn raw(&mut self, name: &str) -> anyhow::Result<std::io::BufWriter<std::fs::File>> {
        let comment = self.comment_line();
        let (_, mut w) = self.create(name)?;
        w.write_all(comment.as_bytes())?;
        Ok(w)
    }
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
