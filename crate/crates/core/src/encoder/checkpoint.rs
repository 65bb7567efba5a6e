//! Checkpoint directories: `header.json` plus one `EMB1` blob per weight
//! matrix (`w_img.emb1`, `w_txt.emb1`), rows stored as f32.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DualEncoder;
use crate::store::blob::{decode_blob, encode_blob, BlobError};

pub const HEADER_FILE: &str = "header.json";
pub const W_IMG_FILE: &str = "w_img.emb1";
pub const W_TXT_FILE: &str = "w_txt.emb1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint matrix: {0}")]
    Blob(#[from] BlobError),
    #[error("{file} is {rows}x{cols}, header says {want_rows}x{want_cols}")]
    Shape {
        file: &'static str,
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("checkpoint holds non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub d_img: usize,
    pub d_txt: usize,
    pub d: usize,
    pub log_temp: f64,
    pub epoch: usize,
    pub val_mcmrr: f64,
}

/// Parameters with the epoch and validation MCMRR they were taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DualEncoder,
    pub epoch: usize,
    pub val_mcmrr: f64,
}

fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f32>> {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|&x| x as f32).collect())
        .collect()
}

fn read_matrix(dir: &Path, file: &'static str, rows: usize, cols: usize) -> Result<Array2<f64>, CheckpointError> {
    let (header, data) = decode_blob(&fs::read(dir.join(file))?)?;
    let (got_rows, got_cols) = (header.count as usize, header.dimension as usize);
    if (got_rows, got_cols) != (rows, cols) {
        return Err(CheckpointError::Shape {
            file,
            rows: got_rows,
            cols: got_cols,
            want_rows: rows,
            want_cols: cols,
        });
    }
    let flat: Vec<f64> = data.into_iter().flatten().map(f64::from).collect();
    Ok(Array2::from_shape_vec((rows, cols), flat).expect("shape checked above"))
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            d_img: self.params.d_img(),
            d_txt: self.params.d_txt(),
            d: self.params.d(),
            log_temp: self.params.log_temp,
            epoch: self.epoch,
            val_mcmrr: self.val_mcmrr,
        }
    }

    /// Writes the checkpoint into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<(), CheckpointError> {
        fs::create_dir_all(dir)?;
        let d = self.params.d();
        fs::write(dir.join(W_IMG_FILE), encode_blob(d, &matrix_rows(&self.params.w_img))?)?;
        fs::write(dir.join(W_TXT_FILE), encode_blob(d, &matrix_rows(&self.params.w_txt))?)?;
        let header = serde_json::to_string_pretty(&self.header())?;
        fs::write(dir.join(HEADER_FILE), header + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CheckpointError> {
        let header: CheckpointHeader = serde_json::from_str(&fs::read_to_string(dir.join(HEADER_FILE))?)?;
        let params = DualEncoder {
            w_img: read_matrix(dir, W_IMG_FILE, header.d_img, header.d)?,
            w_txt: read_matrix(dir, W_TXT_FILE, header.d_txt, header.d)?,
            log_temp: header.log_temp,
        };
        if !params.is_finite() {
            return Err(CheckpointError::NonFinite);
        }
        Ok(Checkpoint {
            params,
            epoch: header.epoch,
            val_mcmrr: header.val_mcmrr,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32_precision() {
        let params = DualEncoder::random(5, 7, 3, 11);
        let ck = Checkpoint {
            params,
            epoch: 4,
            val_mcmrr: 2.5,
        };
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.header(), ck.header());
        for (a, b) in back.params.w_img.iter().zip(ck.params.w_img.iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let header: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(HEADER_FILE)).unwrap()).unwrap();
        for key in ["d_img", "d_txt", "d", "log_temp", "epoch", "val_mcmrr"] {
            assert!(header.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let ck = Checkpoint {
            params: DualEncoder::random(2, 3, 2, 0),
            epoch: 0,
            val_mcmrr: 1.0,
        };
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let mut header = ck.header();
        header.d_txt = 9;
        fs::write(dir.path().join(HEADER_FILE), serde_json::to_string(&header).unwrap()).unwrap();
        assert!(matches!(
            Checkpoint::load(dir.path()),
            Err(CheckpointError::Shape { .. })
        ));
    }
}
