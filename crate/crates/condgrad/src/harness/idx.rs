//! IDX container parsing (the MNIST file format): big-endian magic plus
//! dimensions, then raw u8 payload.

use std::path::Path;

use crate::harness::HarnessError;
use crate::linalg::Matrix;
use crate::network::Batch;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn u32_be(&mut self) -> Result<u32, HarnessError> {
        if self.pos + 4 > self.bytes.len() {
            return Err(HarnessError::Truncated {
                path: self.path.to_path_buf(),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8], HarnessError> {
        if self.pos + len > self.bytes.len() {
            return Err(HarnessError::Truncated {
                path: self.path.to_path_buf(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }
}

/// Load an image/label file pair into a batch; pixels are scaled to [0,1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Batch, HarnessError> {
    let image_bytes = std::fs::read(images_path)?;
    let mut r = Reader {
        bytes: &image_bytes,
        pos: 0,
        path: images_path,
    };
    let magic = r.u32_be()?;
    if magic != IMAGES_MAGIC {
        return Err(HarnessError::BadMagic {
            path: images_path.to_path_buf(),
            expected: IMAGES_MAGIC,
            got: magic,
        });
    }
    let n = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let dim = rows * cols;
    let pixels = r.payload(n * dim)?;

    let label_bytes = std::fs::read(labels_path)?;
    let mut r = Reader {
        bytes: &label_bytes,
        pos: 0,
        path: labels_path,
    };
    let magic = r.u32_be()?;
    if magic != LABELS_MAGIC {
        return Err(HarnessError::BadMagic {
            path: labels_path.to_path_buf(),
            expected: LABELS_MAGIC,
            got: magic,
        });
    }
    let n_labels = r.u32_be()? as usize;
    if n_labels != n {
        return Err(HarnessError::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    let labels_raw = r.payload(n)?;

    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = labels_raw.iter().map(|&b| b as usize).collect();
    Ok(Batch {
        inputs: Matrix::from_vec(n, dim, data),
        labels,
    })
}

/// Write an IDX image/label pair (u8 pixels in row-major sample order).
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<(), HarnessError> {
    assert_eq!(pixels.len(), labels.len() * rows * cols, "payload mismatch");
    let n = labels.len() as u32;
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&n.to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend_from_slice(pixels);
    std::fs::write(images_path, img)?;
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend_from_slice(labels);
    std::fs::write(labels_path, lab)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("im");
        let lab = dir.path().join("lb");
        let pixels: Vec<u8> = (0..2 * 4).map(|i| (i * 17) as u8).collect();
        write_idx(&img, &lab, 2, 2, &pixels, &[3, 9]).unwrap();
        let batch = load_idx(&img, &lab).unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch.inputs.cols(), 4);
        assert_eq!(batch.labels, vec![3, 9]);
        assert!((batch.inputs[(0, 1)] - 17.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("im");
        let lab = dir.path().join("lb");
        std::fs::write(&img, b"").unwrap();
        std::fs::write(&lab, b"").unwrap();
        assert!(matches!(
            load_idx(&img, &lab),
            Err(HarnessError::Truncated { .. })
        ));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("im");
        let lab = dir.path().join("lb");
        let pixels = vec![0u8; 4];
        write_idx(&img, &lab, 2, 2, &pixels, &[1]).unwrap();
        // swap the files: labels magic where images magic is expected
        assert!(matches!(
            load_idx(&lab, &img),
            Err(HarnessError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("im");
        let lab = dir.path().join("lb");
        write_idx(&img, &lab, 2, 2, &vec![0u8; 8], &[1, 2]).unwrap();
        let bytes = std::fs::read(&img).unwrap();
        std::fs::write(&img, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_idx(&img, &lab),
            Err(HarnessError::Truncated { .. })
        ));
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let img_a = dir.path().join("im_a");
        let lab_a = dir.path().join("lb_a");
        write_idx(&img_a, &lab_a, 1, 1, &[0, 0], &[0, 1]).unwrap();
        let img_b = dir.path().join("im_b");
        let lab_b = dir.path().join("lb_b");
        write_idx(&img_b, &lab_b, 1, 1, &[0, 0, 0], &[0, 1, 2]).unwrap();
        assert!(matches!(
            load_idx(&img_a, &lab_b),
            Err(HarnessError::CountMismatch {
                images: 2,
                labels: 3
            })
        ));
    }
}
