use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, ParseError, Result};

use super::LabeledDataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
}

fn header(bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, ParseError> {
    if bytes.is_empty() {
        return Err(ParseError::Empty);
    }
    let found = be_u32(bytes, 0).ok_or(ParseError::Truncated {
        expected: 4,
        found: bytes.len(),
    })?;
    if found != magic {
        return Err(ParseError::BadMagic { expected: magic, found });
    }
    let head = 4 + 4 * dims;
    if bytes.len() < head {
        return Err(ParseError::Truncated {
            expected: head,
            found: bytes.len(),
        });
    }
    let sizes: Vec<usize> = (0..dims).map(|d| be_u32(bytes, 4 + 4 * d).unwrap() as usize).collect();
    let payload: usize = sizes.iter().product();
    if bytes.len() - head != payload {
        return Err(ParseError::Truncated {
            expected: payload,
            found: bytes.len() - head,
        });
    }
    Ok(sizes)
}

/// Parses an IDX image file (`u8` pixels, three dimensions) into an
/// `[N, rows*cols]` matrix scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor, ParseError> {
    let sizes = header(bytes, IMAGE_MAGIC, 3)?;
    let (n, d) = (sizes[0], sizes[1] * sizes[2]);
    let data = bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Tensor::matrix(n, d, data).expect("payload length checked"))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, ParseError> {
    header(bytes, LABEL_MAGIC, 1)?;
    Ok(bytes[8..].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label IDX pair. The class count is one more than the
/// largest label present.
pub fn load_idx_images(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let read = |path: &Path| {
        fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingData {
                path: path.to_path_buf(),
                hint: "Download the IDX files (e.g. MNIST or Fashion-MNIST) and decompress them into the data directory."
                    .into(),
            },
            _ => Error::Io(e),
        })
    };
    let wrap = |path: &Path| {
        let path = path.to_path_buf();
        move |kind| Error::Parse { path, kind }
    };
    let x = parse_idx_images(&read(images)?).map_err(wrap(images))?;
    let y = parse_idx_labels(&read(labels)?).map_err(wrap(labels))?;
    if x.rows() != y.len() {
        return Err(wrap(labels)(ParseError::CountMismatch {
            images: x.rows(),
            labels: y.len(),
        }));
    }
    let n_gt = y.iter().max().map_or(0, |m| m + 1);
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(name, x, y, n_gt)
}

/// Serialises `u8` pixels as an IDX image file.
pub fn encode_idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), n * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
