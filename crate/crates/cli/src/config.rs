//! `--config` expansion: a JSON object of flag values is spliced into the
//! argument list right after the subcommand name, so flags typed on the
//! command line come later and win.

use std::fs;

use anyhow::anyhow;
use serde_json::Value;

use crate::cli::SUBCOMMANDS;
use crate::error::{Classify, CliError, CliResult};

fn config_path(args: &[String]) -> Option<&str> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(String::as_str);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p);
        }
    }
    None
}

/// Flags for one config entry; `false` and `null` contribute nothing.
fn entry_flags(key: &str, value: &Value) -> CliResult<Vec<String>> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(CliError::Input(anyhow!(
            "config key {key:?}: expected a string, number or list of them"
        ))),
    };
    Ok(match value {
        Value::Null | Value::Bool(false) => vec![],
        Value::Bool(true) => vec![flag],
        Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<CliResult<Vec<_>>>()?;
            vec![flag, parts.join(",")]
        }
        other => vec![flag, scalar(other)?],
    })
}

pub fn expand(args: Vec<String>) -> CliResult<Vec<String>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(path).input_with(|| format!("reading config {path}"))?;
    let doc: Value = serde_json::from_str(&text).input_with(|| format!("parsing config {path}"))?;
    let Value::Object(map) = doc else {
        return Err(CliError::Input(anyhow!("config {path} must be a JSON object")));
    };
    let mut injected = Vec::new();
    for (key, value) in &map {
        if key == "config" {
            return Err(CliError::Input(anyhow!("config {path} cannot name another config")));
        }
        injected.extend(entry_flags(key, value)?);
    }
    let Some(at) = args.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let mut out = args[..=at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn config_goes_before_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(
            &cfg,
            r#"{"epochs": 3, "lr_max": 0.5, "k": [1, 10], "stats": true, "by_patient": false}"#,
        )
        .unwrap();
        let cfg = cfg.to_str().unwrap();
        let out = expand(strings(&["cardiolens", "train", "--config", cfg, "--epochs", "5"])).unwrap();
        let epochs = out.iter().position(|a| a == "--epochs").unwrap();
        assert_eq!(out[epochs + 1], "3");
        assert_eq!(
            out.iter().rposition(|a| a == "--epochs").map(|i| &out[i + 1]).unwrap(),
            "5"
        );
        assert!(out.windows(2).any(|w| w[0] == "--k" && w[1] == "1,10"));
        assert!(out.contains(&"--stats".to_string()));
        assert!(!out.contains(&"--by-patient".to_string()));
        assert_eq!(out[1], "train");
    }

    #[test]
    fn bad_configs_are_input_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, "[1, 2]").unwrap();
        let err = expand(strings(&["x", "gen", "--config", cfg.to_str().unwrap()])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = expand(strings(&["x", "gen", "--config=/no/such/file.json"])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
