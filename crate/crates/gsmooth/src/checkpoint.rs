//! The `GSM1` tensor container.
//!
//! Layout, all integers little-endian: magic `GSM1`; version `u32`; tensor
//! count `u32`; per tensor a `u16` name length, the UTF-8 name, a `u8` rank,
//! `u32` dims and row-major `f32` data; finally the CRC32 of every preceding
//! byte.

use std::path::Path;

use gsmooth_core::classifier::CnnClassifier;
use gsmooth_core::data::{Dataset, Split};
use gsmooth_core::surrogate::Surrogate;
use gsmooth_core::{Image, Tensor};

use crate::error::{read, write, Error, Result};

pub const MAGIC: &[u8; 4] = b"GSM1";
pub const VERSION: u32 = 1;
const WHAT: &str = "checkpoint";

pub type Named = Vec<(String, Tensor)>;

pub fn encode(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Config(format!("tensor name `{name}` is longer than 65535 bytes")))?;
        let rank = u8::try_from(t.dims.len()).map_err(|_| Error::Config(format!("tensor `{name}` has rank above 255")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| Error::Config(format!("tensor `{name}` has a dimension above u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let remain = self.bytes.len() - self.pos;
        if n > remain {
            return Err(Error::format(WHAT, self.pos, format!("truncated {field}: need {n} bytes, {remain} remain")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Named> {
    if bytes.len() < 16 {
        return Err(Error::format(WHAT, bytes.len(), format!("file is {} bytes, the minimal container is 16", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(WHAT, 0, format!("bad magic: expected {:?}, found {:?}", MAGIC, &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Crc { stored, computed });
    }
    let mut c = Cursor { bytes: body, pos: 8 };
    let count = c.u32("tensor count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap()) as usize;
        let at = c.pos;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|e| Error::format(WHAT, at + e.valid_up_to(), format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32("dims")? as usize);
        }
        let at = c.pos;
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|b| (n, b)))
            .ok_or_else(|| Error::format(WHAT, at, format!("tensor `{name}` dims overflow")))?;
        let raw = c.take(numel.1, "tensor data")?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    if c.pos != body.len() {
        return Err(Error::format(WHAT, c.pos, format!("{} unexpected bytes before the CRC", body.len() - c.pos)));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    write(path, &encode(tensors)?)
}

pub fn load(path: &Path) -> Result<Named> {
    decode(&read(path)?)
}

fn refs(named: &Named) -> impl Iterator<Item = (&str, &Tensor)> {
    named.iter().map(|(n, t)| (n.as_str(), t))
}

pub fn save_surrogate(path: &Path, model: &Surrogate) -> Result<()> {
    save(path, &model.named_tensors())
}

pub fn load_surrogate(path: &Path) -> Result<Surrogate> {
    Ok(Surrogate::from_named_tensors(refs(&load(path)?))?)
}

pub fn save_classifier(path: &Path, model: &CnnClassifier) -> Result<()> {
    save(path, &model.named_tensors())
}

pub fn load_classifier(path: &Path) -> Result<CnnClassifier> {
    Ok(CnnClassifier::from_named_tensors(refs(&load(path)?))?)
}

/// Datasets are stored as `images [N, C, H, W]`, `labels [N]` and
/// `classes [1]`.
pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let refs: Vec<&Image> = data.images.iter().collect();
    let images = if refs.is_empty() { Tensor::zeros(&[0, 1, 1, 1]) } else { Image::batch(&refs)? };
    let labels = Tensor::from_vec(data.labels.iter().map(|&l| l as f32).collect());
    let classes = Tensor::from_vec(vec![data.classes as f32]);
    save(path, &[("images".into(), images), ("labels".into(), labels), ("classes".into(), classes)])
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let named = load(path)?;
    let get = |k: &str| {
        named.iter().find(|(n, _)| n == k).map(|(_, t)| t).ok_or_else(|| Error::Config(format!("{}: dataset has no `{k}` tensor", path.display())))
    };
    let images = get("images")?;
    let labels = get("labels")?.data.iter().map(|&l| l as usize).collect();
    let classes = get("classes")?.data.first().copied().unwrap_or(0.0) as usize;
    let images = if images.dims.first() == Some(&0) { vec![] } else { Image::unbatch(&images.dims, &images.data)? };
    Ok(Dataset::new(images, labels, classes, Split::All, format!("file:{}", path.display()))?)
}

