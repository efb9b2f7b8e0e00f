//! CIFAR-10 binary batch format: records of 1 label byte + 3072 pixel
//! bytes (channel-major R, G, B planes of a 32x32 image).

use crate::error::{Error, Result};
use std::fs::File;
use std::io::Read;
use std::path::Path;

const RECORD: usize = 1 + 3 * 32 * 32;

/// Read one .bin batch file; returns labels and raw CHW pixel bytes.
pub fn read_cifar_batch(path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut f = File::open(path).map_err(|e| Error::DatasetFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    if buf.is_empty() || buf.len() % RECORD != 0 {
        return Err(Error::DatasetFile {
            path: path.display().to_string(),
            reason: format!("size {} is not a multiple of {RECORD}", buf.len()),
        });
    }
    let n = buf.len() / RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD - 1));
    for rec in buf.chunks_exact(RECORD) {
        if rec[0] > 9 {
            return Err(Error::DatasetFile {
                path: path.display().to_string(),
                reason: format!("label {} out of range", rec[0]),
            });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}
