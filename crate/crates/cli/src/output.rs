//! Run directory layout and CSV/JSON writers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use recvisit::outcome::TrajectoryGrid;
use serde::Serialize;

/// One output directory per run: `config.txt`, `run.log` and the artifacts.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self> {
        fs::create_dir_all(path)
            .with_context(|| format!("creating output directory {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path.join(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        log::info!("wrote {name}");
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }
}

/// CSV text from a header and rows of already formatted fields.
pub fn csv_text<I, R>(header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(
        w.into_inner().map_err(|e| e.into_error())?,
    )?)
}

pub fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// `time,mean_das,label` rows for any number of labelled trajectories.
pub fn trajectory_csv(curves: &[(String, &TrajectoryGrid)]) -> Result<String> {
    csv_text(
        &["time", "mean_das", "label"],
        curves.iter().flat_map(|(label, g)| {
            g.time
                .iter()
                .zip(&g.mean)
                .map(move |(t, m)| vec![t.to_string(), m.to_string(), label.clone()])
        }),
    )
}
