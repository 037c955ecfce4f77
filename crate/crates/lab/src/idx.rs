//! MNIST-style IDX files (big-endian headers, unsigned byte payloads).

use std::path::Path;

use duet_core::dataset::Dataset;
use duet_core::transforms::Image;

use crate::error::{io_err, parse_err, LabError, LabResult};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Header dimensions and payload of one IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> LabResult<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err("idx", offset, "truncated header"))
}

pub fn parse_idx(bytes: &[u8], magic: u32) -> LabResult<IdxArray> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(parse_err(
            "idx",
            0,
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for k in 0..ndim {
        dims.push(read_u32(bytes, 4 + 4 * k)? as usize);
    }
    let header = 4 + 4 * ndim;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        let offset = header + payload.len().min(expected);
        return Err(parse_err(
            "idx",
            offset,
            format!("payload holds {} bytes, header declares {expected}", payload.len()),
        ));
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

pub fn images_from_idx(arr: &IdxArray) -> LabResult<Vec<Image>> {
    let (h, w) = (arr.dims[1], arr.dims[2]);
    arr.data
        .chunks(h * w)
        .map(|px| Image::new(h, w, 1, px.iter().map(|b| *b as f64 / 255.0).collect()).map_err(LabError::from))
        .collect()
}

/// Read an image file and its label file into one dataset.
pub fn load_idx(images: &Path, labels: &Path, name: &str, base_seed: u64) -> LabResult<Dataset> {
    let ib = std::fs::read(images).map_err(io_err(images))?;
    let lb = std::fs::read(labels).map_err(io_err(labels))?;
    let img = parse_idx(&ib, IMAGES_MAGIC)?;
    let lab = parse_idx(&lb, LABELS_MAGIC)?;
    if img.dims[0] != lab.dims[0] {
        return Err(LabError::CountMismatch {
            images: img.dims[0],
            labels: lab.dims[0],
        });
    }
    let labels = lab.data.iter().map(|b| *b as usize).collect();
    Ok(Dataset::new(name, images_from_idx(&img)?, Some(labels), base_seed)?)
}

/// Serialize images (single channel) into the IDX image layout.
pub fn encode_idx_images(images: &[Image]) -> Vec<u8> {
    let (h, w) = images.first().map_or((0, 0), |im| (im.height(), im.width()));
    let mut out = Vec::new();
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [images.len(), h, w] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for im in images {
        out.extend(im.pixels().iter().map(|v| (v * 255.0).round() as u8));
    }
    out
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|l| *l as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_dims_and_scaling() {
        let mut b = IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [2u32, 2, 2] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(&[0, 255, 51, 102, 1, 2, 3, 4]);
        let arr = parse_idx(&b, IMAGES_MAGIC).unwrap();
        assert_eq!(arr.dims, vec![2, 2, 2]);
        let ims = images_from_idx(&arr).unwrap();
        assert_eq!(ims.len(), 2);
        assert_eq!(ims[0].pixels(), &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn wrong_magic_names_offset_zero() {
        let b = [0u8, 0, 8, 1, 0, 0, 0, 0];
        match parse_idx(&b, IMAGES_MAGIC) {
            Err(LabError::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut b = encode_idx_labels(&[1, 2, 3]);
        b.pop();
        assert!(matches!(parse_idx(&b, LABELS_MAGIC), Err(LabError::Parse { .. })));
    }
}
