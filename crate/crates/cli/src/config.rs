//! `--config <file>`: a JSON object whose keys mirror long flags. Values on
//! the command line win; keys the chosen subcommand does not accept are
//! skipped so one file can serve a whole pipeline.

use std::ffi::OsString;
use std::path::Path;

use clap::Command;
use serde_json::Value;

use crate::failure::Failure;

fn flag_present(args: &[OsString], long: &str) -> bool {
    let bare = format!("--{long}");
    let eq = format!("--{long}=");
    args.iter().any(|a| a.to_str().is_some_and(|s| s == bare || s.starts_with(&eq)))
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Returns `args` with config-file flags appended.
pub fn merge(args: Vec<OsString>, cli: &Command) -> Result<Vec<OsString>, Failure> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let Some(sub_name) = args.iter().skip(1).map(|a| a.to_string_lossy()).find(|a| !a.starts_with('-')) else {
        return Ok(args);
    };
    let Some(sub) = cli.find_subcommand(sub_name.as_ref()) else { return Ok(args) };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| Failure::data("E_CONFIG", format!("{}: {e}", path.to_string_lossy())))?;
    let Value::Object(map) = serde_json::from_str::<Value>(&text)
        .map_err(|e| Failure::data("E_CONFIG", format!("{}: {e}", path.to_string_lossy())))?
    else {
        return Err(Failure::data("E_CONFIG", "config file must hold a JSON object"));
    };
    let known_anywhere = |long: &str| {
        cli.get_subcommands().any(|s| s.get_arguments().any(|a| a.get_long() == Some(long)))
    };
    let mut out = args.clone();
    for (key, value) in map {
        let long = key.replace('_', "-");
        if !known_anywhere(&long) {
            return Err(Failure::data("E_CONFIG", format!("unknown config key `{key}`")));
        }
        if long == "config" || flag_present(&args, &long) || !sub.get_arguments().any(|a| a.get_long() == Some(&long)) {
            continue;
        }
        match &value {
            Value::Bool(true) => out.push(format!("--{long}").into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let parts: Option<Vec<String>> = items.iter().map(scalar).collect();
                let parts = parts.ok_or_else(|| Failure::data("E_CONFIG", format!("`{key}` must list scalars")))?;
                out.push(format!("--{long}").into());
                out.push(parts.join(",").into());
            }
            v => {
                let s = scalar(v).ok_or_else(|| Failure::data("E_CONFIG", format!("`{key}` must be a scalar")))?;
                out.push(format!("--{long}").into());
                out.push(s.into());
            }
        }
    }
    Ok(out)
}
