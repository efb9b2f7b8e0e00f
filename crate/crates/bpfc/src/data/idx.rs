//! IDX binary format (MNIST / Fashion-MNIST image and label files).

use crate::error::{Error, Result};
use byteorder::{BigEndian, ReadBytesExt};
use std::fs::File;
use std::io::Read;
use std::path::Path;

fn file_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::DatasetFile { path: path.display().to_string(), reason: reason.into() }
}

/// Images as (count, rows, cols) with raw u8 intensities.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut f = File::open(path).map_err(|e| file_err(path, e.to_string()))?;
    let magic = f.read_u32::<BigEndian>().map_err(|e| file_err(path, e.to_string()))?;
    if magic != 2051 {
        return Err(file_err(path, format!("bad magic {magic:#x}, expected idx3 image file")));
    }
    let n = f.read_u32::<BigEndian>().map_err(|e| file_err(path, e.to_string()))? as usize;
    let rows = f.read_u32::<BigEndian>().map_err(|e| file_err(path, e.to_string()))? as usize;
    let cols = f.read_u32::<BigEndian>().map_err(|e| file_err(path, e.to_string()))? as usize;
    let mut buf = vec![0u8; n * rows * cols];
    f.read_exact(&mut buf)
        .map_err(|_| file_err(path, "truncated image data"))?;
    Ok((n, rows, cols, buf))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut f = File::open(path).map_err(|e| file_err(path, e.to_string()))?;
    let magic = f.read_u32::<BigEndian>().map_err(|e| file_err(path, e.to_string()))?;
    if magic != 2049 {
        return Err(file_err(path, format!("bad magic {magic:#x}, expected idx1 label file")));
    }
    let n = f.read_u32::<BigEndian>().map_err(|e| file_err(path, e.to_string()))? as usize;
    let mut buf = vec![0u8; n];
    f.read_exact(&mut buf)
        .map_err(|_| file_err(path, "truncated label data"))?;
    Ok(buf)
}
