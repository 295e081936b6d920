//! Binary greymap (P5, maxval 255) export of label maps and masks.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::label::LabelMap;

pub fn encode(h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a P5 file with maxval 255 and single-whitespace header fields.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(format!("pgm: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header not ascii"))?);
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("magic is not P5"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("maxval must be 255"));
    }
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != w * h {
        return Err(bad(&format!("expected {} pixels, found {}", w * h, body.len())));
    }
    Ok((h, w, body.to_vec()))
}

/// Grey level of class `c` among `classes`, spread over 0..=255.
pub fn class_level(c: usize, classes: usize) -> u8 {
    if classes <= 1 {
        return 0;
    }
    ((c * 255) / (classes - 1)) as u8
}

pub fn label_pixels(label: &LabelMap, classes: usize) -> Vec<u8> {
    label.data().iter().map(|&c| class_level(c, classes)).collect()
}

/// Inverse of [`label_pixels`].
pub fn pixels_to_label(h: usize, w: usize, pixels: &[u8], classes: usize) -> Result<LabelMap> {
    let table: Vec<u8> = (0..classes).map(|c| class_level(c, classes)).collect();
    let data = pixels
        .iter()
        .map(|&p| {
            table
                .iter()
                .position(|&t| t == p)
                .ok_or_else(|| Error::Format(format!("pgm: grey level {p} is not a class level")))
        })
        .collect::<Result<Vec<usize>>>()?;
    LabelMap::new(h, w, data)
}

pub fn mask_pixels(mask: &[bool]) -> Vec<u8> {
    mask.iter().map(|&m| if m { 255 } else { 0 }).collect()
}

pub fn write(path: &Path, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    fs::write(path, encode(h, w, pixels)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_label(path: &Path, label: &LabelMap, classes: usize) -> Result<()> {
    write(path, label.height(), label.width(), &label_pixels(label, classes))
}

pub fn read_label(path: &Path, classes: usize) -> Result<LabelMap> {
    let (h, w, px) = read(path)?;
    pixels_to_label(h, w, &px, classes)
}
