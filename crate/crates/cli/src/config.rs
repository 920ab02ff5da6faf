//! Flat `key = value` experiment files. Keys are long flag names (`_` and `-`
//! are interchangeable); `#` starts a comment.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`, found {text:?}")]
    Syntax { path: String, line: usize, text: String },
    #[error("{path}:{line}: `config` cannot be set from a config file")]
    Nested { path: String, line: usize },
}

pub fn parse(path: &str, text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                path: path.into(),
                line: i + 1,
                text: raw.into(),
            });
        };
        let key = k.trim().replace('_', "-");
        let value = v.trim().trim_matches('"').to_string();
        if key.is_empty() || key.starts_with('-') {
            return Err(ConfigError::Syntax {
                path: path.into(),
                line: i + 1,
                text: raw.into(),
            });
        }
        if key == "config" {
            return Err(ConfigError::Nested {
                path: path.into(),
                line: i + 1,
            });
        }
        out.push((key, value));
    }
    Ok(out)
}

/// Location of a `--config` argument among `args` (which exclude the program
/// and subcommand names).
fn find_config(args: &[OsString]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(|v| v.to_string_lossy().into_owned());
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

#[derive(Debug, Error)]
pub enum ExpandError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Inserts the entries of the subcommand's `--config` file as flags right
/// after the subcommand name, so later command-line flags override them.
pub fn expand_args(argv: Vec<OsString>) -> Result<Vec<OsString>, ExpandError> {
    if argv.len() < 2 {
        return Ok(argv);
    }
    let Some(path) = find_config(&argv[2..]) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(Path::new(&path)).map_err(|source| ExpandError::Io {
        path: path.clone(),
        source,
    })?;
    let entries = parse(&path, &text)?;
    let mut out: Vec<OsString> = argv[..2].to_vec();
    for (k, v) in entries {
        out.push(format!("--{k}").into());
        out.push(v.into());
    }
    out.extend(argv[2..].iter().cloned());
    Ok(out)
}
