use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use omics_ssl::config::RunConfig;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{CliError, OutArgs};

/// Resolves the output directory and creates it, refusing to reuse a
/// non-empty one unless forced.
pub fn out_dir(args: &OutArgs, cfg: Option<&RunConfig>) -> Result<PathBuf, CliError> {
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set output_dir in the config".into()))?;
    ensure_dir(&dir, args.force)?;
    Ok(dir)
}

pub fn ensure_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.is_file() {
        return Err(CliError::Usage(format!("{} is a file, not a directory", dir.display())));
    }
    let non_empty = fs::read_dir(dir).map(|mut it| it.next().is_some()).unwrap_or(false);
    if non_empty && !force {
        return Err(CliError::Usage(format!(
            "output directory {} is not empty (use --force to overwrite)",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(CliError::Runtime)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

/// Writes `config.json` and `metrics.json` ({metrics, config, run_id, seed}).
pub fn write_run_files(dir: &Path, cfg: &RunConfig, metrics: Value, seed: Value) -> anyhow::Result<()> {
    let config_path = dir.join("config.json");
    fs::write(&config_path, cfg.to_json_pretty()?).with_context(|| format!("writing {}", config_path.display()))?;
    let record = json!({
        "metrics": metrics,
        "config": cfg,
        "run_id": cfg.run_id()?,
        "seed": seed,
    });
    write_json(&dir.join("metrics.json"), &record)
}
