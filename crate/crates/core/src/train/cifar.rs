//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes, each plane row-major.

use std::path::Path;

use crate::error::{Error, Result};

use super::data::Dataset;

pub const RECORD_BYTES: usize = 3073;
pub const IMAGE_BYTES: usize = 3072;
pub const RECORDS_PER_FILE: usize = 10_000;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";
pub const CLASSES: usize = 10;

/// Parses a whole batch file already in memory. `path` is only used in errors.
pub fn parse_batch(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, Vec<usize>)> {
    let err = |msg: String| Error::Dataset {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
        return Err(err(format!(
            "size {} is not a positive multiple of {RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CLASSES {
            return Err(err(format!("record {i}: label {label} >= {CLASSES}")));
        }
        labels.push(label);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((pixels, labels))
}

fn read_files(dir: &Path, files: &[&str]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in files {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::Dataset {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        if bytes.len() != RECORDS_PER_FILE * RECORD_BYTES {
            return Err(Error::Dataset {
                path,
                msg: format!(
                    "size {} bytes, expected {} ({RECORDS_PER_FILE} records)",
                    bytes.len(),
                    RECORDS_PER_FILE * RECORD_BYTES
                ),
            });
        }
        let (p, l) = parse_batch(&bytes, &path)?;
        pixels.extend(p);
        labels.extend(l);
    }
    Dataset::from_bytes([3, 32, 32], CLASSES, pixels, labels)
}

/// Loads the 50,000 training and 10,000 test images from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    Ok((read_files(dir, &TRAIN_FILES)?, read_files(dir, &[TEST_FILE])?))
}
