use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use super::{DataError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images as `n × rows × cols` pixels scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[f64] {
        let sz = self.rows * self.cols;
        &self.pixels[i * sz..(i + 1) * sz]
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut cur = Cursor::new(bytes);
    check_magic(&mut cur, IMAGE_MAGIC)?;
    let n = read_dim(&mut cur)?;
    let rows = read_dim(&mut cur)?;
    let cols = read_dim(&mut cur)?;
    let body = read_body(&mut cur, n * rows * cols)?;
    Ok(IdxImages {
        n,
        rows,
        cols,
        pixels: body.iter().map(|&b| f64::from(b) / 255.0).collect(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor::new(bytes);
    check_magic(&mut cur, LABEL_MAGIC)?;
    let n = read_dim(&mut cur)?;
    read_body(&mut cur, n)
}

/// Read an image file and its label file, checking that the counts agree.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<(IdxImages, Vec<u8>)> {
    let img = parse_idx_images(&fs::read(images)?)?;
    let lab = parse_idx_labels(&fs::read(labels)?)?;
    if img.n != lab.len() {
        return Err(DataError::DimensionMismatch {
            images: img.n,
            labels: lab.len(),
        });
    }
    Ok((img, lab))
}

fn check_magic(cur: &mut Cursor<&[u8]>, expected: u32) -> Result<()> {
    let found = cur.read_u32::<BigEndian>().map_err(|_| DataError::Truncated {
        expected: 4,
        got: cur.get_ref().len(),
    })?;
    if found != expected {
        return Err(DataError::BadMagic { expected, found });
    }
    Ok(())
}

fn read_dim(cur: &mut Cursor<&[u8]>) -> Result<usize> {
    let pos = cur.position() as usize;
    cur.read_u32::<BigEndian>()
        .map(|d| d as usize)
        .map_err(|_| DataError::Truncated {
            expected: pos + 4,
            got: cur.get_ref().len(),
        })
}

fn read_body(cur: &mut Cursor<&[u8]>, len: usize) -> Result<Vec<u8>> {
    let start = cur.position() as usize;
    let mut body = vec![0u8; len];
    cur.read_exact(&mut body).map_err(|_| DataError::Truncated {
        expected: start + len,
        got: cur.get_ref().len(),
    })?;
    Ok(body)
}

/// Serialise images in IDX form; used for fixtures and exports.
pub fn encode_idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend(v.to_be_bytes());
    }
    out.extend(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABEL_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}
