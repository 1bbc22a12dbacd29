//! Small tab-separated side files: id pairs, search exclusions, and the
//! `id \t path-or-caption` manifests consumed by the embedding extractor.
//!
//! Blank lines and lines starting with `#` are skipped everywhere. Errors
//! carry 1-based line numbers.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use crate::error::{CirError, Result};

/// One row of a pairs file: `query_id \t image_id \t text_id`, or
/// `image_id \t text_id`, in which case the image id doubles as query id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub line: usize,
    pub query_id: String,
    pub image_id: String,
    pub text_id: String,
}

fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(CirError::from))
        .filter(|r| match r {
            Ok((_, l)) => {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('#')
            }
            Err(_) => true,
        })
}

fn malformed(line: usize, message: impl Into<String>) -> CirError {
    CirError::MalformedLine {
        line,
        message: message.into(),
    }
}

fn fields(line_no: usize, line: &str) -> Result<Vec<&str>> {
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
    if fields.iter().any(|f| f.is_empty()) {
        return Err(malformed(line_no, "empty field"));
    }
    Ok(fields)
}

pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in data_lines(reader) {
        let (line, text) = row?;
        let f = fields(line, &text)?;
        let (query_id, image_id, text_id) = match f.as_slice() {
            [img, txt] => (*img, *img, *txt),
            [q, img, txt] => (*q, *img, *txt),
            _ => {
                return Err(malformed(
                    line,
                    format!("expected 2 or 3 tab-separated fields, found {}", f.len()),
                ))
            }
        };
        if !seen.insert(query_id.to_string()) {
            return Err(CirError::AtLine {
                line,
                source: Box::new(CirError::DuplicateId(query_id.to_string())),
            });
        }
        out.push(PairRecord {
            line,
            query_id: query_id.into(),
            image_id: image_id.into(),
            text_id: text_id.into(),
        });
    }
    Ok(out)
}

/// Reads `query_id \t gallery_id` rows into a per-query exclusion map.
pub fn read_exclusions<R: BufRead>(reader: R) -> Result<HashMap<String, HashSet<String>>> {
    let mut out: HashMap<String, HashSet<String>> = HashMap::new();
    for row in data_lines(reader) {
        let (line, text) = row?;
        match fields(line, &text)?.as_slice() {
            [q, g] => {
                out.entry(q.to_string()).or_default().insert(g.to_string());
            }
            f => {
                return Err(malformed(
                    line,
                    format!("expected 2 tab-separated fields, found {}", f.len()),
                ))
            }
        }
    }
    Ok(out)
}

/// One extractor input: an image path or a caption, keyed by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub payload: String,
}

pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in data_lines(reader) {
        let (line, text) = row?;
        let (id, payload) = text
            .trim_end_matches('\r')
            .split_once('\t')
            .ok_or_else(|| malformed(line, "expected `id \\t path-or-caption`"))?;
        if id.is_empty() || payload.is_empty() {
            return Err(malformed(line, "empty field"));
        }
        if payload.contains('\t') {
            return Err(malformed(line, "payload contains a tab"));
        }
        if !seen.insert(id.to_string()) {
            return Err(CirError::AtLine {
                line,
                source: Box::new(CirError::DuplicateId(id.to_string())),
            });
        }
        out.push(ManifestEntry {
            id: id.into(),
            payload: payload.into(),
        });
    }
    Ok(out)
}

/// Writes a manifest, rejecting fields that would not read back unchanged.
pub fn write_manifest<W: Write>(entries: &[ManifestEntry], mut out: W) -> Result<()> {
    let mut seen = HashSet::new();
    for e in entries {
        let bad = |s: &str| s.is_empty() || s.contains(['\t', '\n', '\r']);
        if bad(&e.id) || bad(&e.payload) || e.id.starts_with('#') {
            return Err(CirError::BadId(e.id.clone()));
        }
        if !seen.insert(e.id.as_str()) {
            return Err(CirError::DuplicateId(e.id.clone()));
        }
        writeln!(out, "{}\t{}", e.id, e.payload)?;
    }
    Ok(())
}
