//! `EMB1` vector blobs.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `45 4D 42 31`       |
//! | 4      | 4    | version (u32) = 1         |
//! | 8      | 4    | dimension (u32)           |
//! | 12     | 8    | count (u64)               |
//! | 20     | 4·d·n| f32 values, row per vector|

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlobError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported blob version {0}")]
    Version(u32),
    #[error("blob shorter than its {0}-byte header")]
    TruncatedHeader(usize),
    #[error("blob payload is {actual} bytes, header implies {expected}")]
    PayloadSize { expected: u64, actual: u64 },
    #[error("vector {0} has length {1}, blob dimension is {2}")]
    RowLength(usize, usize, usize),
    #[error("non-finite value in vector {0}")]
    NonFinite(usize),
}

/// Header fields of a blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobHeader {
    pub dimension: u32,
    pub count: u64,
}

/// Exact size in bytes of a blob with the given shape.
pub fn blob_len(dimension: usize, count: usize) -> usize {
    HEADER_LEN + dimension * count * 4
}

pub fn encode_blob<V: AsRef<[f32]>>(dimension: usize, rows: &[V]) -> Result<Vec<u8>, BlobError> {
    let mut out = Vec::with_capacity(blob_len(dimension, rows.len()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dimension as u32).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != dimension {
            return Err(BlobError::RowLength(i, row.len(), dimension));
        }
        for &x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_header(bytes: &[u8]) -> Result<BlobHeader, BlobError> {
    if bytes.len() < HEADER_LEN {
        return Err(BlobError::TruncatedHeader(HEADER_LEN));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(BlobError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(BlobError::Version(version));
    }
    Ok(BlobHeader {
        dimension: u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")),
        count: u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")),
    })
}

/// Decodes a blob into rows. Values are returned bit-exactly.
pub fn decode_blob(bytes: &[u8]) -> Result<(BlobHeader, Vec<Vec<f32>>), BlobError> {
    let header = read_header(bytes)?;
    let expected = (header.dimension as u64)
        .checked_mul(header.count)
        .and_then(|v| v.checked_mul(4))
        .unwrap_or(u64::MAX);
    let actual = (bytes.len() - HEADER_LEN) as u64;
    if expected != actual {
        return Err(BlobError::PayloadSize { expected, actual });
    }
    let d = header.dimension as usize;
    let payload = &bytes[HEADER_LEN..];
    let mut rows = Vec::with_capacity(header.count as usize);
    if d > 0 {
        for (i, chunk) in payload.chunks_exact(d * 4).enumerate() {
            let row: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            if row.iter().any(|x| !x.is_finite()) {
                return Err(BlobError::NonFinite(i));
            }
            rows.push(row);
        }
    } else {
        rows.resize(header.count as usize, Vec::new());
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn size_formula() {
        let rows = vec![vec![0.5f32; 512]; 3];
        let bytes = encode_blob(512, &rows).unwrap();
        assert_eq!(bytes.len(), 6164);
        assert_eq!(blob_len(512, 3), 6164);
        assert_eq!(&bytes[..4], &[0x45, 0x4D, 0x42, 0x31]);
        assert_eq!(
            read_header(&bytes).unwrap(),
            BlobHeader {
                dimension: 512,
                count: 3
            }
        );
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = encode_blob(2, &[[1.0f32, 0.0]]).unwrap();
        assert_eq!(decode_blob(&bytes[..10]).unwrap_err(), BlobError::TruncatedHeader(20));
        assert!(matches!(
            decode_blob(&bytes[..bytes.len() - 1]),
            Err(BlobError::PayloadSize { expected: 8, actual: 7 })
        ));
        bytes[4] = 2;
        assert_eq!(decode_blob(&bytes).unwrap_err(), BlobError::Version(2));
        bytes[0] = b'X';
        assert!(matches!(decode_blob(&bytes), Err(BlobError::BadMagic(_))));
        let nan = encode_blob(1, &[[f32::NAN]]).unwrap();
        assert_eq!(decode_blob(&nan).unwrap_err(), BlobError::NonFinite(0));
        assert!(matches!(
            encode_blob(3, &[[1.0f32, 2.0]]),
            Err(BlobError::RowLength(0, 2, 3))
        ));
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(rows in prop::collection::vec(prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 5), 0..6)) {
            let bytes = encode_blob(5, &rows).unwrap();
            let (_, back) = decode_blob(&bytes).unwrap();
            prop_assert_eq!(back.len(), rows.len());
            for (a, b) in rows.iter().zip(&back) {
                let abits: Vec<u32> = a.iter().map(|x| x.to_bits()).collect();
                let bbits: Vec<u32> = b.iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
        }
    }
}
