//! Id-addressed embedding banks and the CEB1 binary format.
//!
//! Layout (little-endian):
//!
//! ```text
//! 0..4    magic "CEB1"
//! 4..8    u32 dim
//! 8..16   u64 count
//! 16      modality tag (0 unspecified, 1 image, 2 text)
//! 17..32  reserved, zero
//! then `count` records: u16 id length, id bytes (UTF-8), dim x f32
//! ```
//!
//! Vectors are stored as `f32`; every read widens to `f64`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{CirError, Result};
use crate::geometry::{UnitEmbedding, UNIT_TOLERANCE};

pub const MAGIC: [u8; 4] = *b"CEB1";
pub const HEADER_LEN: usize = 32;
pub const MAX_ID_BYTES: usize = 256;
/// Entries whose norm is further than this from 1 are rejected on load.
pub const LOAD_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[default]
    Unspecified,
    Image,
    Text,
}

impl Modality {
    pub fn tag(self) -> u8 {
        match self {
            Modality::Unspecified => 0,
            Modality::Image => 1,
            Modality::Text => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Modality::Unspecified),
            1 => Some(Modality::Image),
            2 => Some(Modality::Text),
            _ => None,
        }
    }
}

/// A fixed-dimension, insertion-ordered collection of unit embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    dim: usize,
    modality: Modality,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingBank {
    pub fn new(dim: usize, modality: Modality) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            modality,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    /// Builds a bank from `(id, embedding)` pairs in order.
    pub fn from_entries<I, S>(dim: usize, modality: Modality, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, UnitEmbedding)>,
        S: Into<String>,
    {
        let mut bank = Self::new(dim, modality);
        for (id, emb) in entries {
            bank.insert(id, &emb)?;
        }
        Ok(bank)
    }

    /// Appends an entry. The vector is narrowed to `f32` for storage.
    pub fn insert(&mut self, id: impl Into<String>, embedding: &UnitEmbedding) -> Result<()> {
        if embedding.dim() != self.dim {
            return Err(CirError::DimMismatch {
                expected: self.dim,
                found: embedding.dim(),
            });
        }
        let row: Vec<f32> = embedding.as_slice().iter().map(|&x| x as f32).collect();
        self.push_row(id.into(), &row)
    }

    fn push_row(&mut self, id: String, row: &[f32]) -> Result<()> {
        debug_assert_eq!(row.len(), self.dim);
        if id.is_empty() || id.len() > MAX_ID_BYTES {
            return Err(CirError::BadId(id));
        }
        if self.index.contains_key(&id) {
            return Err(CirError::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Stored components of the entry at `idx`.
    pub fn row(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Result<UnitEmbedding> {
        let idx = self.position(id).ok_or_else(|| CirError::UnknownId(id.to_string()))?;
        Ok(self.embedding_at(idx))
    }

    pub fn embedding_at(&self, idx: usize) -> UnitEmbedding {
        let values = self.row(idx).iter().map(|&x| x as f64).collect();
        UnitEmbedding::from_unit(values).expect("bank rows satisfy the unit invariant")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), self.row(i)))
    }

    pub fn validate(&self) -> ValidationReport {
        validate_entries(self.dim, self.iter())
    }

    pub fn write_to<W: Write>(&self, mut sink: W) -> Result<()> {
        let mut header = [0u8; HEADER_LEN];
        header[0..4].copy_from_slice(&MAGIC);
        let dim =
            u32::try_from(self.dim).map_err(|_| CirError::BadHeader(format!("dimension {} exceeds u32", self.dim)))?;
        header[4..8].copy_from_slice(&dim.to_le_bytes());
        header[8..16].copy_from_slice(&(self.len() as u64).to_le_bytes());
        header[16] = self.modality.tag();
        sink.write_all(&header)?;
        let mut buf = Vec::with_capacity(2 + MAX_ID_BYTES + 4 * self.dim);
        for (id, row) in self.iter() {
            buf.clear();
            buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for x in row {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            sink.write_all(&buf)?;
        }
        sink.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (2 + 16 + 4 * self.dim));
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        self.write_to(BufWriter::new(file))
    }

    /// Reads and validates a CEB1 stream.
    ///
    /// Entries with a norm within 1e-3 of 1 are accepted; those off by more
    /// than the unit tolerance are re-normalized, everything else is kept bit
    /// for bit. Larger deviations yield [`CirError::NormDrift`].
    pub fn read_from<R: Read>(source: R) -> Result<Self> {
        RawBank::read_from(source)?.into_bank()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Structurally parsed CEB1 contents with no numeric validation applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBank {
    pub dim: usize,
    pub modality: Modality,
    pub records: Vec<(String, Vec<f32>)>,
}

impl RawBank {
    pub fn read_from<R: Read>(source: R) -> Result<Self> {
        let mut reader = CountingReader {
            inner: source,
            offset: 0,
        };
        let mut header = [0u8; HEADER_LEN];
        reader.fill(&mut header[..4], "magic")?;
        let magic: [u8; 4] = header[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(CirError::BadMagic(magic));
        }
        reader.fill(&mut header[4..], "header")?;
        let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let modality = Modality::from_tag(header[16])
            .ok_or_else(|| CirError::BadHeader(format!("unknown modality tag {}", header[16])))?;
        if dim == 0 {
            return Err(CirError::BadHeader("dimension is zero".into()));
        }
        if header[17..].iter().any(|&b| b != 0) {
            return Err(CirError::BadHeader("reserved bytes are not zero".into()));
        }

        let mut records = Vec::with_capacity(count.min(1 << 16) as usize);
        let mut len_buf = [0u8; 2];
        for _ in 0..count {
            reader.fill(&mut len_buf, "id length")?;
            let id_len = u16::from_le_bytes(len_buf) as usize;
            let mut id_bytes = vec![0u8; id_len];
            reader.fill(&mut id_bytes, "id")?;
            let id = match String::from_utf8(id_bytes) {
                Ok(id) if !id.is_empty() && id.len() <= MAX_ID_BYTES => id,
                Ok(id) => return Err(CirError::BadId(id)),
                Err(e) => return Err(CirError::BadId(String::from_utf8_lossy(e.as_bytes()).into_owned())),
            };
            let row = reader.read_f32s(dim)?;
            records.push((id, row));
        }
        let mut probe = [0u8; 1];
        loop {
            match reader.inner.read(&mut probe) {
                Ok(0) => break,
                Ok(_) => return Err(CirError::TrailingBytes),
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(Self { dim, modality, records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn validate(&self) -> ValidationReport {
        validate_entries(
            self.dim,
            self.records.iter().map(|(id, row)| (id.as_str(), row.as_slice())),
        )
    }

    pub fn into_bank(self) -> Result<EmbeddingBank> {
        let mut bank = EmbeddingBank::new(self.dim, self.modality);
        for (id, mut row) in self.records {
            if row.len() != self.dim {
                return Err(CirError::DimMismatch {
                    expected: self.dim,
                    found: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(CirError::NonFiniteEntry(id));
            }
            let norm = f32_norm(&row);
            let drift = (norm - 1.0).abs();
            if drift > LOAD_NORM_TOLERANCE {
                return Err(CirError::NormDrift { id, norm });
            }
            if drift > UNIT_TOLERANCE {
                for x in &mut row {
                    *x = (*x as f64 / norm) as f32;
                }
            }
            bank.push_row(id, &row)?;
        }
        Ok(bank)
    }
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn fill(&mut self, buf: &mut [u8], what: &'static str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => Err(CirError::TruncatedFile {
                what,
                offset: self.offset,
            }),
            Err(e) => Err(e.into()),
        }
    }

    /// Reads `n` little-endian floats in bounded chunks so a corrupt header
    /// cannot trigger a huge allocation up front.
    fn read_f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        const CHUNK: usize = 16 * 1024;
        let mut out = Vec::with_capacity(n.min(CHUNK));
        let mut buf = vec![0u8; 4 * n.min(CHUNK)];
        let mut remaining = n;
        while remaining > 0 {
            let take = remaining.min(CHUNK);
            let bytes = &mut buf[..4 * take];
            self.fill(bytes, "vector")?;
            out.extend(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
            remaining -= take;
        }
        Ok(out)
    }
}

fn f32_norm(row: &[f32]) -> f64 {
    row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    NonFinite,
    NormDrift,
    DimMismatch,
    DuplicateId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub id: String,
    pub kind: IssueKind,
    pub detail: String,
}

/// Result of checking entries against the bank invariants.
///
/// Norm deviations in `(1e-6, 1e-3]` are warnings; anything that would make
/// [`EmbeddingBank::read_from`] fail is an error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub dim: usize,
    pub count: usize,
    pub max_norm_deviation: f64,
    pub nan_count: usize,
    pub dim_mismatches: usize,
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    /// True when the bank satisfies every invariant.
    pub fn is_empty(&self) -> bool {
        self.errors.is_empty() && self.warnings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        !self.errors.is_empty()
    }
}

pub fn validate_entries<'a, I>(dim: usize, entries: I) -> ValidationReport
where
    I: IntoIterator<Item = (&'a str, &'a [f32])>,
{
    let mut report = ValidationReport {
        dim,
        count: 0,
        max_norm_deviation: 0.0,
        nan_count: 0,
        dim_mismatches: 0,
        errors: Vec::new(),
        warnings: Vec::new(),
    };
    let mut seen = std::collections::HashSet::new();
    for (id, row) in entries {
        report.count += 1;
        if !seen.insert(id) {
            report.errors.push(Issue {
                id: id.to_string(),
                kind: IssueKind::DuplicateId,
                detail: "id appears more than once".into(),
            });
        }
        if row.len() != dim {
            report.dim_mismatches += 1;
            report.errors.push(Issue {
                id: id.to_string(),
                kind: IssueKind::DimMismatch,
                detail: format!("expected {dim} components, found {}", row.len()),
            });
            continue;
        }
        let bad = row.iter().filter(|x| !x.is_finite()).count();
        if bad > 0 {
            report.nan_count += bad;
            report.errors.push(Issue {
                id: id.to_string(),
                kind: IssueKind::NonFinite,
                detail: format!("{bad} non-finite component(s)"),
            });
            continue;
        }
        let deviation = (f32_norm(row) - 1.0).abs();
        report.max_norm_deviation = report.max_norm_deviation.max(deviation);
        if deviation > LOAD_NORM_TOLERANCE {
            report.errors.push(Issue {
                id: id.to_string(),
                kind: IssueKind::NormDrift,
                detail: format!("norm deviates from 1 by {deviation:.3e}"),
            });
        } else if deviation > UNIT_TOLERANCE {
            report.warnings.push(Issue {
                id: id.to_string(),
                kind: IssueKind::NormDrift,
                detail: format!("norm deviates from 1 by {deviation:.3e}"),
            });
        }
    }
    report
}
