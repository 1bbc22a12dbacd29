//! CTA1 adapter blobs.
//!
//! Layout (little-endian): magic "CTA1", u32 d_in, u32 d_out, u32 rank,
//! f32 lora_alpha, then `lora_a` (rank × d_in) and `lora_b` (d_out × rank)
//! as row-major f32.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{CirError, Result};
use crate::tat::tower::TowerParams;

pub const MAGIC: [u8; 4] = *b"CTA1";
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterBlob {
    pub d_in: usize,
    pub d_out: usize,
    pub rank: usize,
    pub lora_alpha: f32,
    pub lora_a: DMatrix<f32>,
    pub lora_b: DMatrix<f32>,
}

impl AdapterBlob {
    pub fn from_params(params: &TowerParams) -> Self {
        Self {
            d_in: params.d_in(),
            d_out: params.d_out(),
            rank: params.rank(),
            lora_alpha: params.lora_alpha as f32,
            lora_a: params.lora_a.map(|x| x as f32),
            lora_b: params.lora_b.map(|x| x as f32),
        }
    }

    /// Installs the stored factors into a tower with a matching base.
    pub fn apply_to(&self, params: &mut TowerParams) -> Result<()> {
        if params.d_in() != self.d_in || params.d_out() != self.d_out {
            return Err(CirError::DimMismatch {
                expected: params.d_in(),
                found: self.d_in,
            });
        }
        params.lora_a = self.lora_a.map(f64::from);
        params.lora_b = self.lora_b.map(f64::from);
        params.lora_alpha = f64::from(self.lora_alpha);
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut sink: W) -> Result<()> {
        let dim = |n: usize| u32::try_from(n).map_err(|_| CirError::BadHeader(format!("dimension {n} exceeds u32")));
        let mut buf = Vec::with_capacity(HEADER_LEN + 4 * (self.lora_a.len() + self.lora_b.len()));
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&dim(self.d_in)?.to_le_bytes());
        buf.extend_from_slice(&dim(self.d_out)?.to_le_bytes());
        buf.extend_from_slice(&dim(self.rank)?.to_le_bytes());
        buf.extend_from_slice(&self.lora_alpha.to_le_bytes());
        for m in [&self.lora_a, &self.lora_b] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    buf.extend_from_slice(&m[(i, j)].to_le_bytes());
                }
            }
        }
        sink.write_all(&buf)?;
        sink.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut source: R) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |what, offset: usize| CirError::TruncatedFile {
            what,
            offset: offset as u64,
        };
        if bytes.len() < 4 {
            return Err(truncated("magic", 0));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(CirError::BadAdapterMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated("header", 4));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (d_in, d_out, rank) = (word(4), word(8), word(12));
        let lora_alpha = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
        if d_in == 0 || d_out == 0 || rank == 0 {
            return Err(CirError::BadHeader("zero dimension in adapter header".into()));
        }
        let n_a = rank.checked_mul(d_in);
        let n_b = d_out.checked_mul(rank);
        let expected = n_a
            .zip(n_b)
            .and_then(|(a, b)| a.checked_add(b))
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| CirError::BadHeader("adapter dimensions overflow".into()))?;
        if bytes.len() < expected {
            return Err(truncated("matrices", bytes.len()));
        }
        if bytes.len() > expected {
            return Err(CirError::TrailingBytes);
        }
        let f = |k: usize| {
            let o = HEADER_LEN + 4 * k;
            f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap())
        };
        let lora_a = DMatrix::from_fn(rank, d_in, |i, j| f(i * d_in + j));
        let off = rank * d_in;
        let lora_b = DMatrix::from_fn(d_out, rank, |i, j| f(off + i * rank + j));
        Ok(Self {
            d_in,
            d_out,
            rank,
            lora_alpha,
            lora_a,
            lora_b,
        })
    }
}
