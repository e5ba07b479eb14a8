use std::path::Path;

use crate::engine::TrainConfig;
use crate::error::{Error, Result};

/// Reads a flat config object. `.toml` files are parsed as TOML, anything
/// else as JSON.
pub fn read_config_file(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "toml") {
        let v: toml::Table = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            msg: e.message().to_string(),
        })?;
        serde_json::to_value(v).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), line: e.line(), msg: e.to_string() })
    }
}

/// Defaults overlaid with the file at `path`.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let v = read_config_file(path)?;
    TrainConfig::default().merge_json(&v).map_err(|e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_config_echo(path: &Path, cfg: &TrainConfig) -> Result<()> {
    std::fs::write(path, cfg.echo_json() + "\n").map_err(|e| Error::io(path, e))
}
