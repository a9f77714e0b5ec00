//! Binary PGM (`P5`, one channel) and PPM (`P6`, three channels), 8-bit.

use std::path::Path;

use gsmooth_core::Image;

use crate::error::{read, write, Error, Result};

const WHAT: &str = "PNM";

pub fn encode(image: &Image) -> Result<Vec<u8>> {
    let tag = match image.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Config(format!("PNM needs 1 or 3 channels, image has {c}"))),
    };
    let mut out = format!("{tag}\n{} {}\n255\n", image.width, image.height).into_bytes();
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for y in 0..image.height {
        for x in 0..image.width {
            for c in 0..image.channels {
                out.push(q(image.at(c, y, x)));
            }
        }
    }
    Ok(out)
}

fn token(bytes: &[u8], pos: &mut usize) -> Result<(usize, String)> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::format(WHAT, *pos, "truncated header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
}

fn number(bytes: &[u8], pos: &mut usize, field: &str) -> Result<usize> {
    let (at, t) = token(bytes, pos)?;
    t.parse().map_err(|_| Error::format(WHAT, at, format!("{field} `{t}` is not a number")))
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let (_, tag) = token(bytes, &mut pos)?;
    let channels = match tag.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(WHAT, 0, format!("unsupported magic `{other}`, expected P5 or P6"))),
    };
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let at = pos;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(WHAT, at, format!("maxval {maxval} unsupported, expected 1..=255")));
    }
    pos += 1;
    let need = width * height * channels;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() < need {
        return Err(Error::format(WHAT, bytes.len(), format!("truncated raster: expected {need} bytes, found {}", body.len())));
    }
    let mut data = vec![0.0f32; need];
    for (i, &b) in body[..need].iter().enumerate() {
        let (pix, c) = (i / channels, i % channels);
        data[c * width * height + pix] = b as f32 / maxval as f32;
    }
    Ok(Image::new(channels, height, width, data)?)
}

pub fn save(path: &Path, image: &Image) -> Result<()> {
    write(path, &encode(image)?)
}

pub fn load(path: &Path) -> Result<Image> {
    decode(&read(path)?)
}
