use std::path::Path;

use super::DatasetShard;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn require_len(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(())
}

fn check_magic(path: &Path, bytes: &[u8], magic: u32) -> Result<()> {
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        });
    }
    Ok(())
}

/// Parse an IDX image file. Returns `(pixels scaled to [0,1], count, rows * cols)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(Vec<f64>, usize, usize)> {
    require_len(path, bytes, 16)?;
    check_magic(path, bytes, IDX_IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let pixels = rows * cols;
    if pixels == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 8,
            msg: "zero image size".into(),
        });
    }
    require_len(path, bytes, 16 + count * pixels)?;
    let data = bytes[16..16 + count * pixels]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Ok((data, count, pixels))
}

/// Parse an IDX label file.
pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    require_len(path, bytes, 8)?;
    check_magic(path, bytes, IDX_LABELS_MAGIC)?;
    let count = be_u32(bytes, 4) as usize;
    require_len(path, bytes, 8 + count)?;
    Ok(bytes[8..8 + count].iter().map(|&b| b as usize).collect())
}

/// Load an IDX image/label pair; images are flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<DatasetShard> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let (pixels, count, dim) = parse_idx_images(images_path, &read_file(images_path)?)?;
    let labels = parse_idx_labels(labels_path, &read_file(labels_path)?)?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
    DatasetShard::new(pixels, labels, dim, num_classes)
}

/// Load a headerless CSV with rows `label,f_1,...,f_n`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<DatasetShard> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |msg: String| Error::Format {
            path: path.to_path_buf(),
            offset: record.position().map_or(0, |p| p.byte()),
            msg: format!("row {row}: {msg}"),
        };
        let mut fields = record.iter();
        let label: usize = fields
            .next()
            .ok_or_else(|| bad("empty row".into()))?
            .trim()
            .parse()
            .map_err(|e| bad(format!("label: {e}")))?;
        let before = features.len();
        for f in fields {
            features.push(f.trim().parse::<f64>().map_err(|e| bad(format!("feature: {e}")))?);
        }
        let n = features.len() - before;
        match dim {
            None => dim = Some(n),
            Some(d) if d != n => return Err(bad(format!("expected {d} features, found {n}"))),
            _ => {}
        }
        labels.push(label);
    }
    let dim = dim.ok_or_else(|| Error::EmptyData(format!("{} has no rows", path.display())))?;
    let num_classes = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
    DatasetShard::new(features, labels, dim, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn image_bytes(count: u32, rows: u32, cols: u32, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        b.extend_from_slice(&count.to_be_bytes());
        b.extend_from_slice(&rows.to_be_bytes());
        b.extend_from_slice(&cols.to_be_bytes());
        b.extend((0..(count * rows * cols) as usize).map(fill));
        b
    }

    fn label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    fn write(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn three_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(&dir, "img", &image_bytes(3, 28, 28, |i| (i % 256) as u8));
        let lab = write(&dir, "lab", &label_bytes(&[7, 0, 3]));
        let shard = load_idx(&img, &lab).unwrap();
        assert_eq!(shard.len(), 3);
        assert_eq!(shard.feature_dim(), 784);
        assert_eq!(shard.labels(), &[7, 0, 3]);
        assert_eq!(shard.num_classes(), 8);
        let (x, _) = shard.sample(0);
        assert_eq!(x[0], 0.0);
        assert!((x[255] - 1.0).abs() < 1e-15);
        assert!(shard.features().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn truncated_header() {
        let bytes = image_bytes(3, 28, 28, |_| 0);
        let err = parse_idx_images(Path::new("x"), &bytes[..8]).unwrap_err();
        assert!(matches!(
            err,
            Error::Truncated {
                expected: 16,
                found: 8,
                ..
            }
        ));
    }

    #[test]
    fn truncated_body() {
        let bytes = image_bytes(3, 2, 2, |_| 0);
        let err = parse_idx_images(Path::new("x"), &bytes[..20]).unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 28, .. }));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = label_bytes(&[1]);
        bytes[3] = 0x03;
        let err = parse_idx_labels(Path::new("x"), &bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(&dir, "img", &image_bytes(3, 2, 2, |_| 1));
        let lab = write(&dir, "lab", &label_bytes(&[1, 2]));
        assert!(matches!(
            load_idx(&img, &lab),
            Err(Error::CountMismatch { images: 3, labels: 2 })
        ));
    }

    #[test]
    fn csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", b"0,0.5,1.0\n2,-1,3\n");
        let shard = load_csv(&p).unwrap();
        assert_eq!(shard.len(), 2);
        assert_eq!(shard.num_classes(), 3);
        assert_eq!(shard.sample(1).0, &[-1.0, 3.0]);
        let p = write(&dir, "bad.csv", b"0,0.5,1.0\n2,-1\n");
        assert!(load_csv(&p).is_err());
    }
}
