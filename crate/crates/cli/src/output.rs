//! Run directories: `manifest.json`, `results.json` and CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::Failure;

/// Everything needed to repeat a run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: &'static str,
    pub inputs: Vec<PathBuf>,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub outputs: Vec<PathBuf>,
}

pub struct RunDir {
    dir: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    pub fn create<C: Serialize>(
        dir: &Path,
        subcommand: &'static str,
        inputs: &[&Path],
        config: &C,
        seed: Option<u64>,
    ) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                subcommand,
                inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
                config: serde_json::to_value(config).map_err(Failure::output)?,
                seed,
                version: env!("CARGO_PKG_VERSION"),
                outputs: Vec::new(),
            },
        })
    }

    /// Opens `name` in the run directory and records it as an output.
    pub fn file(&mut self, name: &str) -> Result<fs::File, Failure> {
        let path = self.dir.join(name);
        self.manifest.outputs.push(path.clone());
        fs::File::create(&path).map_err(|e| Failure::output(format!("{}: {e}", path.display())))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let f = self.file(name)?;
        serde_json::to_writer_pretty(f, value).map_err(Failure::output)
    }

    /// Plain CSV with a header row; numbers use the shortest round-trip form.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), Failure> {
        let mut w = csv::Writer::from_writer(self.file(name)?);
        w.write_record(header).map_err(Failure::output)?;
        for row in rows {
            w.write_record(row.iter().map(|x| x.to_string())).map_err(Failure::output)?;
        }
        w.flush().map_err(Failure::output)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn record(&mut self, path: PathBuf) {
        self.manifest.outputs.push(path);
    }

    pub fn finish(self) -> Result<(), Failure> {
        let path = self.dir.join("manifest.json");
        let f = fs::File::create(&path).map_err(|e| Failure::output(format!("{}: {e}", path.display())))?;
        serde_json::to_writer_pretty(f, &self.manifest).map_err(Failure::output)
    }
}
