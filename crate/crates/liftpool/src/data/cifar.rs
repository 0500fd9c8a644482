//! CIFAR binary records: one or two label bytes followed by 3072 image bytes
//! (3 channel planes of 32x32, R then G then B).

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{DataError, Dataset, Labels};

const FORMAT: &str = "cifar";
const IMAGE_BYTES: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CifarFormat {
    /// CIFAR-10: one label byte per record.
    Ten,
    /// CIFAR-100, keeping the coarse (first) label byte.
    HundredCoarse,
    /// CIFAR-100, keeping the fine (second) label byte.
    HundredFine,
}

impl CifarFormat {
    fn label_bytes(self) -> usize {
        match self {
            CifarFormat::Ten => 1,
            CifarFormat::HundredCoarse | CifarFormat::HundredFine => 2,
        }
    }

    fn label_offset(self) -> usize {
        match self {
            CifarFormat::Ten | CifarFormat::HundredCoarse => 0,
            CifarFormat::HundredFine => 1,
        }
    }
}

pub fn parse_cifar_binary<T: Scalar>(
    bytes: &[u8],
    format: CifarFormat,
) -> Result<Dataset<T>, DataError> {
    let record = format.label_bytes() + IMAGE_BYTES;
    if bytes.is_empty() || !bytes.len().is_multiple_of(record) {
        return Err(DataError::malformed(
            FORMAT,
            "record size",
            format!(
                "file length {} is not a positive multiple of the {record}-byte record",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / record;
    let scale = T::one() / T::from_usize_lossy(255);
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * IMAGE_BYTES);
    for rec in bytes.chunks_exact(record) {
        labels.push(rec[format.label_offset()] as usize);
        data.extend(
            rec[format.label_bytes()..]
                .iter()
                .map(|&b| T::from_usize_lossy(b as usize) * scale),
        );
    }
    let images =
        Tensor::new(vec![n, 3, 32, 32], data).map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok(Dataset {
        images,
        labels: Labels::Classes(labels),
        split: "cifar".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_record_parses() {
        let mut bytes = vec![7u8];
        bytes.extend(std::iter::repeat_n(255u8, IMAGE_BYTES));
        let data: Dataset<f32> = parse_cifar_binary(&bytes, CifarFormat::Ten).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data.images.shape(), &[1, 3, 32, 32]);
        assert!(data.images.data().iter().all(|&v| v == 1.0));
        assert_eq!(data.labels, Labels::Classes(vec![7]));
    }

    #[test]
    fn label_byte_selection_for_cifar100() {
        let mut bytes = vec![3u8, 42u8];
        bytes.extend(std::iter::repeat_n(0u8, IMAGE_BYTES));
        let coarse: Dataset<f32> = parse_cifar_binary(&bytes, CifarFormat::HundredCoarse).unwrap();
        assert_eq!(coarse.labels, Labels::Classes(vec![3]));
        let fine: Dataset<f32> = parse_cifar_binary(&bytes, CifarFormat::HundredFine).unwrap();
        assert_eq!(fine.labels, Labels::Classes(vec![42]));
    }

    #[test]
    fn wrong_length_rejected() {
        let bytes = vec![0u8; IMAGE_BYTES]; // missing the label byte
        assert!(matches!(
            parse_cifar_binary::<f32>(&bytes, CifarFormat::Ten),
            Err(DataError::Malformed { field: "record size", .. })
        ));
        assert!(parse_cifar_binary::<f32>(&[], CifarFormat::Ten).is_err());
    }

    #[test]
    fn channel_planar_layout() {
        let mut bytes = vec![0u8];
        let mut img = vec![0u8; IMAGE_BYTES];
        img[0] = 255; // R plane, pixel (0,0)
        img[1024] = 128; // G plane
        bytes.extend_from_slice(&img);
        let data: Dataset<f64> = parse_cifar_binary(&bytes, CifarFormat::Ten).unwrap();
        assert_eq!(data.images.data()[0], 1.0);
        assert!((data.images.data()[1024] - 128.0 / 255.0).abs() < 1e-12);
    }
}
