//! IDX file ingestion (the MNIST on-disk format): big-endian 32-bit magic,
//! big-endian dimension sizes, then raw unsigned bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::Image;

const MAGIC_IMAGES: u32 = 0x0000_0803;
const MAGIC_LABELS: u32 = 0x0000_0801;

/// Parsed contents of one IDX file.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxFile {
    /// 3-D unsigned-byte image stacks; pixel bytes scaled by 1/255 into [0, 1].
    Images(Vec<Image>),
    /// 1-D label bytes.
    Labels(Vec<u8>),
}

impl IdxFile {
    pub fn count(&self) -> usize {
        match self {
            IdxFile::Images(v) => v.len(),
            IdxFile::Labels(v) => v.len(),
        }
    }

    pub fn into_images(self, path: &Path) -> Result<Vec<Image>> {
        match self {
            IdxFile::Images(v) => Ok(v),
            IdxFile::Labels(_) => Err(Error::Format {
                path: path.to_path_buf(),
                detail: "expected an image file, found labels".into(),
            }),
        }
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: end as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX image or label file.
pub fn load_idx(path: &Path) -> Result<IdxFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

pub(crate) fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxFile> {
    let magic = read_u32_be(bytes, 0, path)?;
    match magic {
        MAGIC_IMAGES => {
            let count = read_u32_be(bytes, 4, path)? as usize;
            let height = read_u32_be(bytes, 8, path)? as usize;
            let width = read_u32_be(bytes, 12, path)? as usize;
            let header = 16usize;
            let expected = header as u64 + (count as u64) * (height as u64) * (width as u64);
            if bytes.len() as u64 != expected {
                return Err(Error::Truncated {
                    path: path.to_path_buf(),
                    expected,
                    actual: bytes.len() as u64,
                });
            }
            let mut images = Vec::with_capacity(count);
            let px = height * width;
            for i in 0..count {
                let start = header + i * px;
                let data: Vec<f32> = bytes[start..start + px]
                    .iter()
                    .map(|&b| b as f32 / 255.0)
                    .collect();
                images.push(Image::from_shape_vec(height, width, data)?);
            }
            Ok(IdxFile::Images(images))
        }
        MAGIC_LABELS => {
            let count = read_u32_be(bytes, 4, path)? as usize;
            let header = 8usize;
            let expected = (header + count) as u64;
            if bytes.len() as u64 != expected {
                return Err(Error::Truncated {
                    path: path.to_path_buf(),
                    expected,
                    actual: bytes.len() as u64,
                });
            }
            Ok(IdxFile::Labels(bytes[header..].to_vec()))
        }
        other => Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("bad IDX magic {other:#010x}"),
        }),
    }
}
