//! Tab-separated corpus manifest.
//!
//! One record per line: `id<TAB>signal_path<TAB>report_path<TAB>split_hint`
//! with `split_hint ∈ {train, eval, -}`. Relative paths resolve against the
//! manifest's own directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{RecordingRef, SplitHint};
use crate::{Error, Result};

/// Loads a manifest, preserving file order and rejecting duplicate ids.
pub fn load_manifest(path: &Path) -> Result<Vec<RecordingRef>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut refs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: path.into(),
                line: line_no,
                msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::Parse {
                path: path.into(),
                line: line_no,
                msg: "empty id".into(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::Parse {
                path: path.into(),
                line: line_no,
                msg: format!("duplicate id {id:?}"),
            });
        }
        let split_hint = match fields[3].trim() {
            "train" => Some(SplitHint::Train),
            "eval" => Some(SplitHint::Eval),
            "-" => None,
            other => {
                return Err(Error::Parse {
                    path: path.into(),
                    line: line_no,
                    msg: format!("bad split hint {other:?}, expected train, eval or -"),
                })
            }
        };
        refs.push(RecordingRef {
            id: id.to_string(),
            signal_path: resolve(base, fields[1].trim()),
            report_path: resolve(base, fields[2].trim()),
            split_hint,
        });
    }
    Ok(refs)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let pb = PathBuf::from(p);
    if pb.is_absolute() {
        pb
    } else {
        base.join(pb)
    }
}

/// Writes a manifest with paths relative to its own directory when possible.
pub fn write_manifest(path: &Path, refs: &[RecordingRef]) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = String::new();
    for r in refs {
        let hint = match r.split_hint {
            Some(h) => h.as_str(),
            None => "-",
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.id,
            relativize(base, &r.signal_path),
            relativize(base, &r.report_path),
            hint
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn relativize(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).display().to_string()
}
