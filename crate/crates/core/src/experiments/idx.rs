//! Big-endian IDX files as used by MNIST: a 4-byte magic (`0x00000803` for
//! rank-3 unsigned-byte images, `0x00000801` for rank-1 labels), one `u32`
//! per dimension, then the raw bytes.

use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse(format!("{what}: truncated header at byte offset {offset}")))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = read_u32(bytes, 0, what)?;
    if magic != expected {
        return Err(Error::Parse(format!(
            "{what}: bad magic 0x{magic:08x} at byte offset 0 (expected 0x{expected:08x})"
        )));
    }
    Ok(())
}

/// Decoded image file: `count` images of `rows × cols` pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<u8>>,
}

/// Parses at most `limit` images.
pub fn parse_idx_images(bytes: &[u8], limit: usize) -> Result<IdxImages> {
    let what = "idx images";
    check_magic(bytes, IMAGE_MAGIC, what)?;
    let count = read_u32(bytes, 4, what)? as usize;
    let rows = read_u32(bytes, 8, what)? as usize;
    let cols = read_u32(bytes, 12, what)? as usize;
    let size = rows * cols;
    let take = count.min(limit);
    let mut pixels = Vec::with_capacity(take);
    for i in 0..take {
        let start = 16 + i * size;
        let chunk = bytes.get(start..start + size).ok_or_else(|| {
            Error::Parse(format!(
                "{what}: truncated image {i} at byte offset {start} (file has {} bytes)",
                bytes.len()
            ))
        })?;
        pixels.push(chunk.to_vec());
    }
    Ok(IdxImages { rows, cols, pixels })
}

/// Parses at most `limit` labels.
pub fn parse_idx_labels(bytes: &[u8], limit: usize) -> Result<Vec<u8>> {
    let what = "idx labels";
    check_magic(bytes, LABEL_MAGIC, what)?;
    let count = read_u32(bytes, 4, what)? as usize;
    let take = count.min(limit);
    bytes.get(8..8 + take).map(<[u8]>::to_vec).ok_or_else(|| {
        Error::Parse(format!(
            "{what}: truncated labels at byte offset {} (file has {} bytes)",
            bytes.len(),
            bytes.len()
        ))
    })
}

/// Loads the first `limit` (image, label) pairs, row-major. With
/// `normalize`, pixels are divided by 255.
pub fn load_idx_images(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: usize,
    normalize: bool,
) -> Result<Vec<(DVector<f64>, u8)>> {
    let images = parse_idx_images(&std::fs::read(images_path)?, limit)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?, limit)?;
    if labels.len() < images.pixels.len() {
        return Err(Error::Parse(format!(
            "idx labels: {} labels for {} images",
            labels.len(),
            images.pixels.len()
        )));
    }
    let scale = if normalize { 1.0 / 255.0 } else { 1.0 };
    Ok(images
        .pixels
        .iter()
        .zip(labels)
        .map(|(px, label)| (DVector::from_iterator(px.len(), px.iter().map(|&v| v as f64 * scale)), label))
        .collect())
}

/// Serializes images in the IDX layout.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len() * rows * cols);
    for v in [IMAGE_MAGIC, pixels.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for px in pixels {
        out.extend_from_slice(px);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, pixels: &[Vec<u8>], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let (ip, lp) = (dir.join("img"), dir.join("lbl"));
        std::fs::write(&ip, encode_idx_images(2, 2, pixels)).unwrap();
        std::fs::write(&lp, encode_idx_labels(labels)).unwrap();
        (ip, lp)
    }

    #[test]
    fn saturated_image_scales_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), &[vec![255; 4]], &[7]);
        let got = load_idx_images(&ip, &lp, 10, true).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, DVector::from_element(4, 1.0));
        assert_eq!(got[0].1, 7);
    }

    #[test]
    fn header_is_big_endian() {
        let bytes = encode_idx_images(28, 28, &[vec![0; 784]]);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(&bytes[8..12], &[0, 0, 0, 28]);
        let parsed = parse_idx_images(&bytes, 1).unwrap();
        assert_eq!((parsed.rows, parsed.cols), (28, 28));
    }

    #[test]
    fn wrong_magic_is_a_parse_error() {
        let mut bytes = encode_idx_images(2, 2, &[vec![1; 4]]);
        bytes[3] = 0x01;
        let err = parse_idx_images(&bytes, 1).unwrap_err().to_string();
        assert!(err.contains("magic") && err.contains("offset 0"), "{err}");
        assert!(parse_idx_labels(&encode_idx_images(2, 2, &[]), 1).is_err());
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_idx_images(2, 2, &[vec![1; 4], vec![2; 4]]);
        let err = parse_idx_images(&bytes[..22], 2).unwrap_err().to_string();
        assert!(err.contains("byte offset 20"), "{err}");
        assert!(parse_idx_images(&bytes[..6], 1).unwrap_err().to_string().contains("offset 4"));
    }

    #[test]
    fn zero_limit_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), &[vec![3; 4]], &[1]);
        assert!(load_idx_images(&ip, &lp, 0, true).unwrap().is_empty());
    }

    #[test]
    fn limit_truncates_and_raw_values_survive() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), &[vec![0, 1, 2, 3], vec![4, 5, 6, 7]], &[1, 2]);
        let got = load_idx_images(&ip, &lp, 1, false).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, DVector::from_vec(vec![0.0, 1.0, 2.0, 3.0]));
    }
}
