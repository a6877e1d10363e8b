//! CIFAR-10 binary format loader.
//!
//! Each of the six batch files holds 10,000 records of 3,073 bytes: one
//! label byte followed by 3,072 pixel bytes laid out as full red, green and
//! blue planes. Pixels are scaled to `[0, 1]` and then centered by
//! subtracting per-channel means computed on the training split.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

pub const RECORDS_PER_FILE: usize = 10_000;
pub const PIXELS_PER_IMAGE: usize = 3 * 1024;
pub const RECORD_BYTES: usize = 1 + PIXELS_PER_IMAGE;
pub const FILE_BYTES: usize = RECORDS_PER_FILE * RECORD_BYTES; // 30,730,000
pub const NUM_CLASSES: usize = 10;
pub const INPUT_DIM: usize = PIXELS_PER_IMAGE;

fn read_batch(dir: &Path, name: &str, features: &mut Vec<f64>, labels: &mut Vec<u8>) -> Result<()> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != FILE_BYTES {
        return Err(Error::InvalidData(format!(
            "{name}: expected {FILE_BYTES} bytes, found {} (truncated at byte offset {})",
            bytes.len(),
            bytes.len() - bytes.len() % RECORD_BYTES
        )));
    }
    for (rec, chunk) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = chunk[0];
        if label as usize >= NUM_CLASSES {
            return Err(Error::InvalidData(format!(
                "{name}: label byte {label} at record {rec} (byte offset {}) is not a CIFAR-10 class",
                rec * RECORD_BYTES
            )));
        }
        labels.push(label);
        features.extend(chunk[1..].iter().map(|&p| p as f64 / 255.0));
    }
    Ok(())
}

/// Per-channel means over the training split; pixels are stored as three
/// planes of 1,024 values each.
fn channel_means(features: &[f64]) -> [f64; 3] {
    let mut sums = [0.0f64; 3];
    for image in features.chunks_exact(PIXELS_PER_IMAGE) {
        for (ch, plane) in image.chunks_exact(1024).enumerate() {
            sums[ch] += plane.iter().sum::<f64>();
        }
    }
    let per_channel = (features.len() / 3) as f64;
    [
        sums[0] / per_channel,
        sums[1] / per_channel,
        sums[2] / per_channel,
    ]
}

fn center(features: &mut [f64], means: &[f64; 3]) {
    for image in features.chunks_exact_mut(PIXELS_PER_IMAGE) {
        for (ch, plane) in image.chunks_exact_mut(1024).enumerate() {
            for v in plane {
                *v -= means[ch];
            }
        }
    }
}

/// Loads the six standard binary batch files from `dir`.
/// Returns (train, test) with 50,000 and 10,000 examples.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train_features = Vec::with_capacity(5 * RECORDS_PER_FILE * PIXELS_PER_IMAGE);
    let mut train_labels = Vec::with_capacity(5 * RECORDS_PER_FILE);
    for name in TRAIN_FILES {
        read_batch(dir, name, &mut train_features, &mut train_labels)?;
    }
    let mut test_features = Vec::with_capacity(RECORDS_PER_FILE * PIXELS_PER_IMAGE);
    let mut test_labels = Vec::with_capacity(RECORDS_PER_FILE);
    read_batch(dir, TEST_FILE, &mut test_features, &mut test_labels)?;

    let means = channel_means(&train_features);
    center(&mut train_features, &means);
    center(&mut test_features, &means);

    let train = Dataset::new(
        train_features,
        train_labels,
        INPUT_DIM,
        NUM_CLASSES,
        Split::Train,
    )?;
    let test = Dataset::new(
        test_features,
        test_labels,
        INPUT_DIM,
        NUM_CLASSES,
        Split::Test,
    )?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    /// Writes a synthetic batch file whose record `i` has label
    /// `(i + label_phase) % 10` and constant pixel value `pixel`.
    fn write_batch(dir: &Path, name: &str, label_phase: usize, pixel: u8) {
        let mut record = vec![0u8; RECORD_BYTES];
        let mut out = Vec::with_capacity(FILE_BYTES);
        for i in 0..RECORDS_PER_FILE {
            record[0] = ((i + label_phase) % 10) as u8;
            for p in &mut record[1..] {
                *p = pixel;
            }
            out.extend_from_slice(&record);
        }
        let mut f = std::fs::File::create(dir.join(name)).unwrap();
        f.write_all(&out).unwrap();
    }

    #[test]
    fn loads_synthetic_batches_with_exact_class_totals() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in TRAIN_FILES.iter().enumerate() {
            write_batch(dir.path(), name, i, 51); // 51/255 = 0.2
        }
        write_batch(dir.path(), TEST_FILE, 3, 102); // 102/255 = 0.4

        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!(train.len(), 50_000);
        assert_eq!(test.len(), 10_000);
        assert_eq!(train.class_counts(), vec![5_000; 10]);
        assert_eq!(test.class_counts(), vec![1_000; 10]);

        // First record of data_batch_1 has label phase 0 -> label 0.
        assert_eq!(train.label(0), 0);
        // Record 1 -> label 1, and so on.
        assert_eq!(train.label(7), 7);

        // Every train pixel is 0.2, so the per-channel means are 0.2 and
        // centered values are 0; test pixels become 0.4 - 0.2 = 0.2.
        assert!(train.feature_row(0).iter().all(|&v| v.abs() < 1e-12));
        assert!(test.feature_row(0).iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn truncated_file_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in TRAIN_FILES.iter().enumerate() {
            write_batch(dir.path(), name, i, 0);
        }
        write_batch(dir.path(), TEST_FILE, 0, 0);
        // Truncate the third train batch.
        let victim = dir.path().join("data_batch_3.bin");
        let bytes = std::fs::read(&victim).unwrap();
        std::fs::write(&victim, &bytes[..FILE_BYTES - 100]).unwrap();

        let err = load_cifar10(dir.path()).unwrap_err().to_string();
        assert!(err.contains("data_batch_3.bin"), "{err}");
        assert!(err.contains("30730000"), "{err}");
    }

    #[test]
    fn missing_file_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar10(dir.path()).unwrap_err().to_string();
        assert!(err.contains("data_batch_1.bin"), "{err}");
    }

    #[test]
    fn first_record_label_byte_becomes_example_label() {
        let dir = tempfile::tempdir().unwrap();
        for name in TRAIN_FILES {
            write_batch(dir.path(), name, 4, 10);
        }
        write_batch(dir.path(), TEST_FILE, 9, 10);
        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!(train.label(0), 4);
        assert_eq!(test.label(0), 9);
    }
}
