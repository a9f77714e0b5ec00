//! MNIST IDX files: big-endian header, unsigned-byte payload.

use std::path::Path;

use gsmooth_core::data::{Dataset, Split};
use gsmooth_core::Image;

use crate::error::{read, Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self, field: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::format(
                self.what,
                self.pos,
                format!("truncated header reading {field}: need 4 bytes, {} remain", self.bytes.len() - self.pos),
            )
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32("magic")?;
        if found != expected {
            return Err(Error::format(self.what, 0, format!("bad magic: expected {expected:#010x}, found {found:#010x}")));
        }
        Ok(())
    }

    fn payload(&self, len: usize) -> Result<&'a [u8]> {
        let have = self.bytes.len() - self.pos;
        if have < len {
            return Err(Error::format(self.what, self.bytes.len(), format!("truncated payload: expected {len} bytes, found {have}")));
        }
        if have > len {
            return Err(Error::format(self.what, self.pos + len, format!("{} trailing bytes after payload", have - len)));
        }
        Ok(&self.bytes[self.pos..])
    }
}

/// Parses an image file (magic `0x00000803`, dims `N×rows×cols`); pixels are
/// scaled to `[0, 1]`.
pub fn parse_images(bytes: &[u8]) -> Result<Vec<Image>> {
    let mut c = Cursor { bytes, pos: 0, what: "IDX images" };
    c.magic(IMAGE_MAGIC)?;
    let n = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    let px = rows
        .checked_mul(cols)
        .and_then(|p| p.checked_mul(n).map(|t| (p, t)))
        .ok_or_else(|| Error::format(c.what, 4, "header dimensions overflow"))?;
    let data = c.payload(px.1)?;
    if px.0 == 0 {
        return Ok(vec![]);
    }
    data.chunks_exact(px.0)
        .map(|p| Ok(Image::new(1, rows, cols, p.iter().map(|&b| b as f32 / 255.0).collect())?))
        .collect()
}

/// Parses a label file (magic `0x00000801`).
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut c = Cursor { bytes, pos: 0, what: "IDX labels" };
    c.magic(LABEL_MAGIC)?;
    let n = c.u32("label count")? as usize;
    Ok(c.payload(n)?.to_vec())
}

pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let imgs = parse_images(&read(images)?)?;
    let labs = parse_labels(&read(labels)?)?;
    if imgs.len() != labs.len() {
        return Err(Error::format(
            "IDX labels",
            4,
            format!("count mismatch: {} has {} images, {} has {} labels", images.display(), imgs.len(), labels.display(), labs.len()),
        ));
    }
    let classes = labs.iter().map(|&l| l as usize + 1).max().unwrap_or(1).max(10);
    let provenance = format!("idx:{},{}", images.display(), labels.display());
    Ok(Dataset::new(imgs, labs.into_iter().map(usize::from).collect(), classes, Split::All, provenance)?)
}

/// Encodes single-channel images as an IDX image file, quantizing to bytes.
pub fn encode_images(images: &[Image]) -> Result<Vec<u8>> {
    let (rows, cols) = images.first().map_or((0, 0), |i| (i.height, i.width));
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGE_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        if im.channels != 1 || im.height != rows || im.width != cols {
            return Err(Error::Config("IDX images must share one single-channel size".into()));
        }
        out.extend(im.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
