use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32> {
    let slice: [u8; 4] = bytes
        .get(at..at + 4)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::Parse("truncated IDX header".into()))?;
    Ok(u32::from_be_bytes(slice))
}

/// Reads an IDX3 image file into an `N x (rows*cols)` matrix with values
/// normalized to [0,1]. `downsample > 1` average-pools by that factor.
pub fn read_idx_images(path: &Path, downsample: usize) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = read_u32_be(&bytes, 4)? as usize;
    let rows = read_u32_be(&bytes, 8)? as usize;
    let cols = read_u32_be(&bytes, 12)? as usize;
    let pixels = bytes
        .get(16..16 + n * rows * cols)
        .ok_or_else(|| Error::Parse("truncated IDX pixel data".into()))?;

    let f = downsample.max(1);
    if rows % f != 0 || cols % f != 0 {
        return Err(Error::Parse(format!(
            "downsample factor {f} does not divide {rows}x{cols}"
        )));
    }
    let (or, oc) = (rows / f, cols / f);
    let mut out = Tensor::zeros(n, or * oc);
    for img in 0..n {
        let base = img * rows * cols;
        for i in 0..or {
            for j in 0..oc {
                let mut acc = 0.0;
                for di in 0..f {
                    for dj in 0..f {
                        acc += pixels[base + (i * f + di) * cols + (j * f + dj)] as f64;
                    }
                }
                out.set(img, i * oc + j, acc / (f * f) as f64 / 255.0);
            }
        }
    }
    Ok(out)
}

/// Reads an IDX1 label file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = std::fs::read(path)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = read_u32_be(&bytes, 4)? as usize;
    bytes
        .get(8..8 + n)
        .map(|s| s.iter().map(|&b| b as u32).collect())
        .ok_or_else(|| Error::Parse("truncated IDX label data".into()))
}
