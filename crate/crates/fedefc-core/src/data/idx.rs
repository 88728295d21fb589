//! IDX (MNIST binary) loader: big-endian, magic-checked, strict about length.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, IdxError, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

/// Loads an MNIST-style image/label pair: pixels scaled to [0,1], labels read
/// verbatim (must be digits 0–9). Bad magic, truncation, trailing bytes, and
/// image/label count mismatch each produce their own error.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (pixels, rows, cols) = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    let n_images = pixels.len() / (rows * cols);
    if n_images != labels.len() {
        return Err(IdxError::CountMismatch {
            images: n_images,
            labels: labels.len(),
        }
        .into());
    }
    let features = pixels.into_iter().map(|p| f64::from(p) / 255.0).collect();
    let labels = labels.into_iter().map(usize::from).collect();
    Dataset::new(features, labels, rows * cols, MNIST_CLASSES)
}

fn read_images(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let mut reader = open(path)?;
    let magic = read_u32(&mut reader, path)?;
    if magic != IMAGE_MAGIC {
        return Err(bad_magic(path, IMAGE_MAGIC, magic));
    }
    let count = read_u32(&mut reader, path)? as usize;
    let rows = read_u32(&mut reader, path)? as usize;
    let cols = read_u32(&mut reader, path)? as usize;
    if count == 0 || rows == 0 || cols == 0 {
        return Err(IdxError::Malformed {
            path: display(path),
            detail: format!("degenerate dimensions {count}×{rows}×{cols}"),
        }
        .into());
    }
    let pixels = read_payload(&mut reader, path, count * rows * cols)?;
    Ok((pixels, rows, cols))
}

fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let mut reader = open(path)?;
    let magic = read_u32(&mut reader, path)?;
    if magic != LABEL_MAGIC {
        return Err(bad_magic(path, LABEL_MAGIC, magic));
    }
    let count = read_u32(&mut reader, path)? as usize;
    let labels = read_payload(&mut reader, path, count)?;
    if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= MNIST_CLASSES) {
        return Err(IdxError::Malformed {
            path: display(path),
            detail: format!("label {bad} exceeds digit range"),
        }
        .into());
    }
    Ok(labels)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|error| {
        Error::Idx(IdxError::Io {
            path: display(path),
            error,
        })
    })
}

fn read_u32(reader: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf).map_err(|e| truncated(path, e))?;
    Ok(u32::from_be_bytes(buf))
}

/// Reads exactly `expected` bytes and insists the file ends there.
fn read_payload(reader: &mut impl Read, path: &Path, expected: usize) -> Result<Vec<u8>> {
    let mut payload = vec![0u8; expected];
    reader
        .read_exact(&mut payload)
        .map_err(|e| truncated(path, e))?;
    let mut probe = [0u8; 1];
    match reader.read(&mut probe) {
        Ok(0) => Ok(payload),
        Ok(_) => Err(IdxError::Malformed {
            path: display(path),
            detail: "trailing bytes after declared payload".into(),
        }
        .into()),
        Err(error) => Err(IdxError::Io {
            path: display(path),
            error,
        }
        .into()),
    }
}

fn truncated(path: &Path, error: std::io::Error) -> Error {
    if error.kind() == std::io::ErrorKind::UnexpectedEof {
        IdxError::Truncated {
            path: display(path),
            detail: "file ends before declared payload".into(),
        }
        .into()
    } else {
        IdxError::Io {
            path: display(path),
            error,
        }
        .into()
    }
}

fn bad_magic(path: &Path, expected: u32, found: u32) -> Error {
    IdxError::BadMagic {
        path: display(path),
        expected,
        found,
    }
    .into()
}

fn display(path: &Path) -> String {
    path.display().to_string()
}
