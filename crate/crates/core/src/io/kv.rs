use crate::error::{Error, Result};

/// Flat `key=value` lines; `#` starts a comment, blank lines are skipped.
/// Repeated keys are rejected.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::config(format!("line {}: key '{k}' given twice", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn render_kv<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    pairs.iter().map(|(k, v)| format!("{}={}\n", k.as_ref(), v.as_ref())).collect()
}
