//! Option resolution: command-line flag (or its `BURNSCAR_*` environment
//! variable) first, then the `--config` file, then built-in defaults.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub const EFFECTIVE_CONFIG: &str = "effective-config.json";

/// Fills every option left unset on the command line from the config file.
///
/// Both sides are the same all-`Option` struct, merged key by key through
/// their JSON form.
pub fn overlay<T: Serialize + DeserializeOwned>(flags: T, file: Option<&Path>, command: &str) -> Result<T, CliError> {
    let Some(path) = file else {
        return Ok(flags);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Domain(format!("cannot read config {}: {e}", path.display())))?;
    let mut from_file: Map<String, Value> = serde_json::from_str(&text)
        .map_err(|e| CliError::Domain(format!("config {} is not a JSON object: {e}", path.display())))?;
    match from_file.remove("command") {
        Some(Value::String(c)) if c != command => {
            return Err(CliError::Usage(format!("config {} is for `{c}`, not `{command}`", path.display())));
        }
        _ => {}
    }
    let Value::Object(mut merged) = serde_json::to_value(&flags).map_err(|e| CliError::Domain(e.to_string()))? else {
        unreachable!("option structs serialize to objects")
    };
    for (key, value) in from_file {
        match merged.get(&key) {
            None => {
                return Err(CliError::Usage(format!("config {}: unknown option `{key}` for `{command}`", path.display())));
            }
            Some(Value::Null) => {
                merged.insert(key, value);
            }
            Some(_) => {}
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Writes the fully resolved options, tagged with the command, so the run can
/// be repeated with `--config`.
pub fn write_effective<T: Serialize>(resolved: &T, command: &str, path: &Path) -> Result<(), CliError> {
    let Value::Object(fields) = serde_json::to_value(resolved).map_err(|e| CliError::Domain(e.to_string()))? else {
        unreachable!("option structs serialize to objects")
    };
    let mut out = Map::new();
    out.insert("command".into(), Value::String(command.into()));
    out.extend(fields);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Domain(format!("cannot create {}: {e}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(&Value::Object(out)).map_err(|e| CliError::Domain(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Domain(format!("cannot write {}: {e}", path.display())))
}
