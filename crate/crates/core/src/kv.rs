//! Flat `key = value` text files.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Keys may repeat; callers decide whether that is allowed.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    /// 1-based source line.
    pub line: usize,
}

pub fn parse_kv(text: &str, source: &Path) -> Result<Vec<KvEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push(KvEntry {
            key: key.to_string(),
            value: value.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<Vec<KvEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text, path)
}

pub fn parse_value<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

/// Comma-separated list; an empty value is an empty list.
pub fn parse_list<T>(key: &str, value: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v)).collect()
}

pub fn format_list<T: Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let text = "# header\n\na = 1\nb=x, y # trailing\n";
        let kv = parse_kv(text, Path::new("t")).unwrap();
        assert_eq!(kv.len(), 2);
        assert_eq!((kv[1].key.as_str(), kv[1].value.as_str(), kv[1].line), ("b", "x, y", 4));
    }

    #[test]
    fn rejects_lines_without_equals() {
        let err = parse_kv("a=1\noops\n", Path::new("cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<usize>("k", "3, 4,5").unwrap(), vec![3, 4, 5]);
        assert!(parse_list::<usize>("k", "").unwrap().is_empty());
        assert!(parse_list::<usize>("k", "3,x").is_err());
        assert_eq!(format_list([1.5, 2.0]), "1.5,2");
    }
}
