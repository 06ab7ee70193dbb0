use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEntry {
    pub id: String,
    pub truth: PathBuf,
    pub msi: PathBuf,
    pub hsi: PathBuf,
    pub split: Split,
}

/// Tab-separated scene list. Lines starting with `@` carry `key=value`
/// metadata, `#` lines are comments. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub meta: Vec<(String, String)>,
    pub scenes: Vec<SceneEntry>,
}

impl Manifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = Manifest::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::format(path, format!("line {}: {msg}", n + 1));
            if let Some(rest) = line.strip_prefix('@') {
                let (k, v) = rest.split_once('=').ok_or_else(|| bad(format!("bad metadata '{line}'")))?;
                m.meta.push((k.trim().to_string(), v.trim().to_string()));
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 tab-separated fields, got {}", f.len())));
            }
            let split = match f[4] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(bad(format!("split must be train or test, got '{other}'"))),
            };
            m.scenes.push(SceneEntry {
                id: f[0].to_string(),
                truth: f[1].into(),
                msi: f[2].into(),
                hsi: f[3].into(),
                split,
            });
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m = Self::parse(&super::read_text(path)?, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut m.scenes {
            for p in [&mut s.truth, &mut s.msi, &mut s.hsi] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(m)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            out.push_str(&format!("@{k}={v}\n"));
        }
        for s in &self.scenes {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                s.id,
                s.truth.display(),
                s.msi.display(),
                s.hsi.display(),
                s.split.as_str()
            ));
        }
        out
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SceneEntry> {
        self.scenes.iter().filter(move |s| s.split == split)
    }
}
