//! Tab-separated tables with a provenance comment line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use actf_core::data::write_atomic;

use crate::config::ExperimentConfig;
use crate::CliError;

/// `# actf <command> config_hash=… seed=… …` followed by any extra fields.
pub fn header(command: &str, cfg: &ExperimentConfig, extra: &[(&str, String)]) -> String {
    let s = cfg.seeds();
    let mut line = format!(
        "# actf {command} config_hash={} seed={} train_data_seed={} test_data_seed={} sketch_seed={} init_seed={} shuffle_seed={} bench_seed={}",
        cfg.hash(),
        cfg.seed,
        s.train_data,
        s.test_data,
        s.sketch,
        s.init,
        s.shuffle,
        s.bench
    );
    for (k, v) in extra {
        let _ = write!(line, " {k}={v}");
    }
    line.push('\n');
    line
}

pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: String, columns: &[&str]) -> Self {
        let mut text = header;
        text.push_str(&columns.join("\t"));
        text.push('\n');
        Table { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join("\t"));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        "nan".into()
    }
}

pub fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", cfg.out.display())))?;
    Ok(cfg.out.clone())
}

pub fn write(dir: &Path, name: &str, content: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    write_atomic(&path, content.as_bytes())?;
    Ok(path)
}
