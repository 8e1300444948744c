use std::path::Path;

use super::{Dataset, Domain};
use crate::diffcore::Array;
use crate::error::{Error, Result};
use crate::fsutil::{self, Reader};

/// Big-endian magic of an unsigned-byte, 3-D IDX image file.
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
/// Big-endian magic of an unsigned-byte, 1-D IDX label file.
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an image/label IDX pair. Pixels are scaled to `[0, 1]` and each
/// image is flattened row-major. `limit` keeps only the first items.
pub fn load_idx(
    images: &Path,
    labels: &Path,
    limit: Option<usize>,
    domain: Domain,
) -> Result<Dataset> {
    let img_bytes = fsutil::read(images)?;
    let lbl_bytes = fsutil::read(labels)?;
    parse_idx(&img_bytes, &lbl_bytes, limit, domain)
}

pub(crate) fn parse_idx(
    img_bytes: &[u8],
    lbl_bytes: &[u8],
    limit: Option<usize>,
    domain: Domain,
) -> Result<Dataset> {
    let mut img = Reader::new(img_bytes, "idx images");
    let magic = img.u32_be()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGES_MAGIC,
            actual: magic,
        });
    }
    let count = img.u32_be()? as usize;
    let rows = img.u32_be()? as usize;
    let cols = img.u32_be()? as usize;

    let mut lbl = Reader::new(lbl_bytes, "idx labels");
    let magic = lbl.u32_be()?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: LABELS_MAGIC,
            actual: magic,
        });
    }
    let label_count = lbl.u32_be()? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "idx count mismatch: {count} images, {label_count} labels"
        )));
    }

    let n = limit.map_or(count, |l| l.min(count));
    let f = rows * cols;
    let pixels = img.take(
        count
            .checked_mul(f)
            .ok_or_else(|| Error::Format("idx size overflow".into()))?,
    )?;
    let raw_labels = lbl.take(count)?;

    let features: Vec<f64> = pixels[..n * f]
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    let labels: Vec<usize> = raw_labels[..n].iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(
        Array::matrix(n, f, features)?,
        Some(labels),
        classes,
        domain,
    )
}

#[cfg(test)]
pub(crate) fn encode_idx(
    images: &[Vec<u8>],
    rows: u32,
    cols: u32,
    labels: &[u8],
) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&rows.to_be_bytes());
    img.extend_from_slice(&cols.to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lbl = Vec::new();
    lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lbl.extend_from_slice(labels);
    (img, lbl)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: usize) -> (Vec<u8>, Vec<u8>) {
        let images: Vec<Vec<u8>> = (0..n)
            .map(|i| (0..784).map(|p| ((p + i) % 256) as u8).collect())
            .collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        encode_idx(&images, 28, 28, &labels)
    }

    #[test]
    fn parses_28x28() {
        let (img, lbl) = fixture(120);
        let ds = parse_idx(&img, &lbl, None, Domain::Source).unwrap();
        assert_eq!(ds.dim(), 784);
        assert_eq!(ds.len(), 120);
        assert_eq!(ds.num_classes(), 10);
        assert_eq!(ds.features().get(0, 255), 1.0);
        assert!(ds
            .features()
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
        let ds = parse_idx(&img, &lbl, Some(100), Domain::Source).unwrap();
        assert_eq!(ds.len(), 100);
    }

    #[test]
    fn wrong_magic_reports_both_values() {
        let (mut img, lbl) = fixture(2);
        img[3] = 0x01;
        let err = parse_idx(&img, &lbl, None, Domain::Source).unwrap_err();
        match &err {
            Error::BadMagic { expected, actual } => {
                assert_eq!(*expected, 0x803);
                assert_eq!(*actual, 0x801);
            }
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("0x00000803"));
    }

    #[test]
    fn truncation_and_count_mismatch() {
        let (img, lbl) = fixture(3);
        assert!(matches!(
            parse_idx(&img[..img.len() - 1], &lbl, None, Domain::Source),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_idx(&img[..10], &lbl, None, Domain::Source),
            Err(Error::Format(_))
        ));
        let (_, lbl2) = fixture(4);
        assert!(matches!(
            parse_idx(&img, &lbl2, None, Domain::Source),
            Err(Error::Format(_))
        ));
    }
}
