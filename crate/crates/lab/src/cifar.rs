//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes.

use std::path::Path;

use duet_core::dataset::Dataset;
use duet_core::transforms::Image;

use crate::error::{io_err, parse_err, LabResult};

pub const RECORD_BYTES: usize = 3073;
const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;

pub fn parse_cifar(bytes: &[u8]) -> LabResult<(Vec<Image>, Vec<usize>)> {
    if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
        return Err(parse_err(
            "cifar10",
            bytes.len() - bytes.len() % RECORD_BYTES,
            format!("{} bytes is not a whole number of {RECORD_BYTES}-byte records", bytes.len()),
        ));
    }
    let mut images = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    let mut labels = Vec::with_capacity(images.capacity());
    for (r, rec) in bytes.chunks(RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(parse_err("cifar10", r * RECORD_BYTES, format!("label {label} outside 0..9")));
        }
        let planes = &rec[1..];
        let mut px = Vec::with_capacity(3 * PLANE);
        for p in 0..PLANE {
            for c in 0..3 {
                px.push(planes[c * PLANE + p] as f64 / 255.0);
            }
        }
        images.push(Image::new(SIDE, SIDE, 3, px)?);
        labels.push(label);
    }
    Ok((images, labels))
}

pub fn load_cifar(path: &Path, name: &str, base_seed: u64) -> LabResult<Dataset> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let (images, labels) = parse_cifar(&bytes)?;
    Ok(Dataset::new(name, images, Some(labels), base_seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_major_to_interleaved() {
        let mut rec = vec![7u8];
        rec.extend(std::iter::repeat(255).take(PLANE));
        rec.extend(std::iter::repeat(0).take(PLANE));
        rec.extend(std::iter::repeat(51).take(PLANE));
        let (ims, labels) = parse_cifar(&rec).unwrap();
        assert_eq!(labels, vec![7]);
        assert_eq!(&ims[0].pixels()[..3], &[1.0, 0.0, 0.2]);
    }
}
