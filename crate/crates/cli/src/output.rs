//! Writing results: machine-first JSON and TSV, with provenance, plus the
//! `--pretty` renderings.

use std::io::Write;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

/// A result body with the resolved run configuration alongside its fields.
#[derive(Serialize)]
pub struct WithConfig<'a, T: Serialize> {
    pub config: &'a Value,
    #[serde(flatten)]
    pub body: &'a T,
}

pub fn json_line<T: Serialize>(config: &Value, body: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string(&WithConfig { config, body })?;
    s.push('\n');
    Ok(s)
}

/// The `#` comment line that opens every TSV output.
pub fn tsv_provenance(config: &Value) -> String {
    format!("# config {config}\n")
}

/// Writes to `path`, or to stdout when it is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

/// Pads tab-separated rows into aligned columns; `#` lines pass through.
pub fn align_tsv(tsv: &str) -> String {
    let rows: Vec<Vec<&str>> = tsv
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').collect())
        .collect();
    let n = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..n)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
