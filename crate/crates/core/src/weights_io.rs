//! The `BFTW1` weight container.
//!
//! All integers and scalars are little-endian:
//!
//! ```text
//! magic    5 bytes  "BFTW1"
//! kind     u8       0 butterfly, 1 circulant, 2 low-rank, 3 fastfood
//! n        u64      channel count
//! m        u64      number of entries in the dims list
//! dims     m x u64  butterfly: radices k_0..k_{m-1}; low-rank: [r]; others: empty
//! width    u8       scalar width in bits, 32 or 64
//! count    u64      number of scalars that follow
//! payload  count x f32|f64
//! ```
//!
//! Payload order: butterfly weights layer-major, then output channel, then
//! branch; circulant first row; low-rank `U` then `V`, both row-major `n x r`;
//! fastfood `S`, `G`, `B`, then the permutation as scalars.
//!
//! A JSON sidecar (`<file>.json`) mirrors the header for inspection.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{CirculantWeights, FastfoodWeights, LowRankWeights};
use crate::butterfly::{ButterflySpec, ButterflyWeights};
use crate::tensor::DenseMatrix;
use crate::{BftError, Result};

pub const MAGIC: &[u8; 5] = b"BFTW1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarWidth {
    F32,
    F64,
}

impl ScalarWidth {
    pub fn bits(self) -> u8 {
        match self {
            ScalarWidth::F32 => 32,
            ScalarWidth::F64 => 64,
        }
    }

    fn from_bits(bits: u8) -> Result<Self> {
        match bits {
            32 => Ok(ScalarWidth::F32),
            64 => Ok(ScalarWidth::F64),
            other => Err(BftError::Format(format!("scalar width {other} is not 32 or 64"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightPayload {
    Butterfly(ButterflyWeights),
    Circulant(CirculantWeights),
    LowRank(LowRankWeights),
    Fastfood(FastfoodWeights),
}

impl WeightPayload {
    fn kind_tag(&self) -> u8 {
        match self {
            WeightPayload::Butterfly(_) => 0,
            WeightPayload::Circulant(_) => 1,
            WeightPayload::LowRank(_) => 2,
            WeightPayload::Fastfood(_) => 3,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        kind_name(self.kind_tag())
    }

    fn header(&self) -> (usize, Vec<usize>) {
        match self {
            WeightPayload::Butterfly(w) => (w.spec().n(), w.spec().radices().to_vec()),
            WeightPayload::Circulant(w) => (w.first_row.len(), Vec::new()),
            WeightPayload::LowRank(w) => (w.u.rows(), vec![w.rank()]),
            WeightPayload::Fastfood(w) => (w.s.len(), Vec::new()),
        }
    }

    fn scalars(&self) -> Vec<f64> {
        match self {
            WeightPayload::Butterfly(w) => w.values().to_vec(),
            WeightPayload::Circulant(w) => w.first_row.clone(),
            WeightPayload::LowRank(w) => [w.u.data(), w.v.data()].concat(),
            WeightPayload::Fastfood(w) => {
                let perm: Vec<f64> = w.perm.iter().map(|&p| p as f64).collect();
                [&w.s[..], &w.g, &w.b, &perm].concat()
            }
        }
    }
}

fn kind_name(tag: u8) -> &'static str {
    match tag {
        0 => "butterfly",
        1 => "circulant",
        2 => "lowrank",
        3 => "fastfood",
        _ => "unknown",
    }
}

/// Header fields as written to the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub magic: String,
    pub kind: String,
    pub n: usize,
    pub m: usize,
    pub dims: Vec<usize>,
    pub scalar_width: u8,
    pub count: usize,
}

pub fn sidecar(payload: &WeightPayload, width: ScalarWidth) -> Sidecar {
    let (n, dims) = payload.header();
    Sidecar {
        magic: String::from_utf8_lossy(MAGIC).into_owned(),
        kind: payload.kind_name().into(),
        n,
        m: dims.len(),
        dims,
        scalar_width: width.bits(),
        count: payload.scalars().len(),
    }
}

pub fn encode(payload: &WeightPayload, width: ScalarWidth) -> Vec<u8> {
    let (n, dims) = payload.header();
    let scalars = payload.scalars();
    let mut out = Vec::with_capacity(32 + 8 * dims.len() + 8 * scalars.len());
    out.extend_from_slice(MAGIC);
    out.push(payload.kind_tag());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(dims.len() as u64).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    out.push(width.bits());
    out.extend_from_slice(&(scalars.len() as u64).to_le_bytes());
    for v in scalars {
        match width {
            ScalarWidth::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            ScalarWidth::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| BftError::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let raw = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(raw).map_err(|_| BftError::Format(format!("{what} {raw} does not fit in memory")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(WeightPayload, ScalarWidth)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(BftError::Format("bad magic, expected BFTW1".into()));
    }
    let kind = r.u8("kind")?;
    let n = r.u64("n")?;
    let m = r.u64("m")?;
    if m > 64 {
        return Err(BftError::Format(format!("dims list of length {m} is implausible")));
    }
    let dims = (0..m).map(|_| r.u64("dims")).collect::<Result<Vec<_>>>()?;
    let width = ScalarWidth::from_bits(r.u8("scalar width")?)?;
    let count = r.u64("count")?;
    let size = match width {
        ScalarWidth::F32 => 4,
        ScalarWidth::F64 => 8,
    };
    let raw = r.take(count.saturating_mul(size), "payload")?;
    if r.pos != bytes.len() {
        return Err(BftError::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }
    let values: Vec<f64> = raw
        .chunks_exact(size)
        .map(|c| match width {
            ScalarWidth::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
            ScalarWidth::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
        })
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(BftError::Format(format!("non-finite scalar at payload index {i}")));
    }
    let expect_count = |want: usize| {
        if count == want {
            Ok(())
        } else {
            Err(BftError::Format(format!(
                "{} payload for n = {n} needs {want} scalars, header says {count}",
                kind_name(kind)
            )))
        }
    };
    let payload = match kind {
        0 => {
            let spec = ButterflySpec::new(n, dims).map_err(|e| BftError::Format(e.to_string()))?;
            expect_count(spec.weight_count())?;
            WeightPayload::Butterfly(ButterflyWeights::new(spec, values)?)
        }
        1 => {
            expect_count(n)?;
            WeightPayload::Circulant(CirculantWeights { first_row: values })
        }
        2 => {
            let [rank] = dims[..] else {
                return Err(BftError::Format(format!("low-rank header needs one dim, got {dims:?}")));
            };
            expect_count(2 * n * rank)?;
            let (u, v) = values.split_at(n * rank);
            WeightPayload::LowRank(LowRankWeights::new(
                DenseMatrix::new(n, rank, u.to_vec())?,
                DenseMatrix::new(n, rank, v.to_vec())?,
            )?)
        }
        3 => {
            expect_count(4 * n)?;
            let chunk = |i: usize| values[i * n..(i + 1) * n].to_vec();
            let perm = chunk(3)
                .into_iter()
                .map(|p| {
                    if p >= 0.0 && p.fract() == 0.0 {
                        Ok(p as usize)
                    } else {
                        Err(BftError::Format(format!("permutation entry {p} is not an index")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            WeightPayload::Fastfood(FastfoodWeights::new(chunk(0), chunk(1), chunk(2), perm)?)
        }
        other => return Err(BftError::Format(format!("unknown kind tag {other}"))),
    };
    Ok((payload, width))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes the binary file and its `.json` sidecar.
pub fn write_weights(path: &Path, payload: &WeightPayload, width: ScalarWidth) -> Result<()> {
    fs::write(path, encode(payload, width))?;
    let meta = serde_json::to_string_pretty(&sidecar(payload, width))?;
    fs::write(sidecar_path(path), meta)?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<(WeightPayload, ScalarWidth)> {
    decode(&fs::read(path)?)
}
