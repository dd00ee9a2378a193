//! Per-recording class flags.
//!
//! The signal container and report deliberately carry no diagnosis; corpora
//! that have one (normal/abnormal for clinical data, the planted class for
//! synthetic data) ship it in a `labels.tsv` sidecar:
//! `id<TAB>class_index<TAB>class_name`. Class index 0 is the negative class
//! of binary tasks.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct LabelTable {
    entries: HashMap<String, (usize, String)>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, class_index: usize, class_name: impl Into<String>) {
        self.entries.insert(id.into(), (class_index, class_name.into()));
    }

    pub fn class_index(&self, id: &str) -> Option<usize> {
        self.entries.get(id).map(|(i, _)| *i)
    }

    pub fn class_name(&self, id: &str) -> Option<&str> {
        self.entries.get(id).map(|(_, n)| n.as_str())
    }

    /// Binary flag view: class index > 0 is positive.
    pub fn flag(&self, id: &str) -> Option<bool> {
        self.class_index(id).map(|i| i > 0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<LabelTable> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = LabelTable::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: path.into(),
                    line: idx + 1,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let class_index = fields[1].trim().parse::<usize>().map_err(|e| Error::Parse {
                path: path.into(),
                line: idx + 1,
                msg: format!("bad class index: {e}"),
            })?;
            table.insert(fields[0].trim(), class_index, fields[2].trim());
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ids: Vec<&String> = self.entries.keys().collect();
        ids.sort();
        let mut out = String::new();
        for id in ids {
            let (index, name) = &self.entries[id];
            out.push_str(&format!("{}\t{}\t{}\n", id, index, name));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.tsv");
        let mut t = LabelTable::new();
        t.insert("r2", 1, "fast");
        t.insert("r1", 0, "slow");
        t.save(&path).unwrap();
        let back = LabelTable::load(&path).unwrap();
        assert_eq!(back.class_index("r1"), Some(0));
        assert_eq!(back.class_name("r2"), Some("fast"));
        assert_eq!(back.flag("r1"), Some(false));
        assert_eq!(back.flag("r2"), Some(true));
        assert_eq!(back.flag("missing"), None);
    }
}
