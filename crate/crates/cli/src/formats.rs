//! Little-endian binary formats for datasets (`MASCDS01`) and parameter checkpoints (`MASCCK01`).

use std::path::Path;

use masc_core::diffcore::{ParamSet, Tensor};
use masc_core::fourier::{KSpaceGrid, Layout};
use masc_core::metalsim::PairedSample;
use masc_core::Complex32;

use crate::error::{io_err, CliError, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"MASCDS01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MASCCK01";

/// Bounds-checked little-endian reader over a byte slice.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("unexpected end of file")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        let raw = self.take(n.checked_mul(4).ok_or("size overflow")?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect())
    }

    fn magic(&mut self, expected: &[u8; 8]) -> std::result::Result<(), String> {
        if self.take(8)? != expected {
            return Err(format!("bad magic, expected {}", String::from_utf8_lossy(expected)));
        }
        Ok(())
    }

    fn finish(&self) -> std::result::Result<(), String> {
        if self.pos != self.bytes.len() {
            return Err(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> std::result::Result<(), String> {
    let v = u32::try_from(v).map_err(|_| format!("{what} {v} does not fit in u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_complex(out: &mut Vec<u8>, data: &[Complex32]) {
    for c in data {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
}

/// Serializes samples that all share one image size.
pub fn encode_dataset(samples: &[PairedSample]) -> std::result::Result<Vec<u8>, String> {
    let (h, w) = samples.first().map_or((0, 0), |s| (s.height(), s.width()));
    let mut out = Vec::with_capacity(20 + samples.len() * (h * w * 17 + 4));
    out.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut out, samples.len(), "sample count")?;
    put_u32(&mut out, h, "height")?;
    put_u32(&mut out, w, "width")?;
    for s in samples {
        if s.height() != h || s.width() != w {
            return Err("samples have different image sizes".into());
        }
        if s.clean_kspace.layout() != Layout::DcCentered || s.metal_kspace.layout() != Layout::DcCentered {
            return Err("k-spaces must be DC-centered".into());
        }
        put_complex(&mut out, s.clean_kspace.data());
        put_complex(&mut out, s.metal_kspace.data());
        out.extend(s.implant_mask.iter().map(|&m| m as u8));
        out.extend_from_slice(&s.subject.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> std::result::Result<Vec<PairedSample>, String> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let (n, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let per = h.checked_mul(w).and_then(|hw| hw.checked_mul(17)).and_then(|b| b.checked_add(4)).ok_or("size overflow")?;
    if n.checked_mul(per).and_then(|b| b.checked_add(20)) != Some(bytes.len()) {
        return Err(format!("length {} does not match {n} samples of {h}x{w}", bytes.len()));
    }
    let complex = |r: &mut Reader| -> std::result::Result<Vec<Complex32>, String> {
        Ok(r.f32s(2 * h * w)?.chunks_exact(2).map(|c| Complex32::new(c[0], c[1])).collect())
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let clean = KSpaceGrid::new(h, w, complex(&mut r)?, Layout::DcCentered).map_err(|e| e.to_string())?;
        let metal = KSpaceGrid::new(h, w, complex(&mut r)?, Layout::DcCentered).map_err(|e| e.to_string())?;
        let mask = r
            .take(h * w)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(format!("mask byte {b} is not 0 or 1")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let subject = r.u32()?;
        out.push(PairedSample::from_kspaces(clean, metal, mask, subject).map_err(|e| e.to_string())?);
    }
    r.finish()?;
    Ok(out)
}

pub fn write_dataset(path: &Path, samples: &[PairedSample]) -> Result<()> {
    let bytes = encode_dataset(samples).map_err(|msg| CliError::Format { path: path.into(), msg })?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_dataset(path: &Path) -> Result<Vec<PairedSample>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_dataset(&bytes).map_err(|msg| CliError::Format { path: path.into(), msg })
}

/// Serializes named tensors in parameter order.
pub fn encode_checkpoint(params: &ParamSet) -> std::result::Result<Vec<u8>, String> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, params.tensors().len(), "tensor count")?;
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len()).map_err(|_| format!("tensor name `{name}` is too long"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len()).map_err(|_| format!("tensor `{name}` has too many dimensions"))?;
        out.push(rank);
        for &d in t.shape() {
            put_u32(&mut out, d, "dimension")?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("size overflow")?;
        let data = r.f32s(numel)?;
        out.push((name, Tensor::new(dims, data).map_err(|e| e.to_string())?));
    }
    r.finish()?;
    Ok(out)
}

pub fn save_params(path: &Path, params: &ParamSet) -> Result<()> {
    let bytes = encode_checkpoint(params).map_err(|msg| CliError::Format { path: path.into(), msg })?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Loads a checkpoint into `params`, which must have a matching layout.
pub fn load_params(path: &Path, params: &mut ParamSet) -> Result<()> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let named = decode_checkpoint(&bytes).map_err(|msg| CliError::Format { path: path.into(), msg })?;
    params.load_named(named.iter().map(|(n, t)| (n.as_str(), t))).map_err(|e| CliError::Format { path: path.into(), msg: e.to_string() })
}
