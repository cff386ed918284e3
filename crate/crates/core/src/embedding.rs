//! Per-scale embedding matrices and their text archive format.
//!
//! Archive layout: header line `dim L scale_id`, then L rows of `dim`
//! floats. Values are written with 9 significant digits, which round-trips
//! losslessly for the value ranges we produce (unit-norm embeddings).

use crate::{Error, Result};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Row-major L×dim embedding matrix for one temporal scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    scale_id: usize,
    dim: usize,
    rows: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(scale_id: usize, dim: usize, rows: usize) -> Self {
        Self {
            scale_id,
            dim,
            rows,
            data: vec![0.0; dim * rows],
        }
    }

    pub fn from_rows(scale_id: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmbeddingFormat("dim must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::EmbeddingFormat(format!(
                "data length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::EmbeddingFormat(format!("non-finite entry {bad}")));
        }
        let rows = data.len() / dim;
        Ok(Self {
            scale_id,
            dim,
            rows,
            data,
        })
    }

    pub fn scale_id(&self) -> usize {
        self.scale_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimMismatch(format!(
                "row has {} entries, matrix dim is {}",
                row.len(),
                self.dim
            )));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }
}

/// Read one archive file. Errors name the offending line.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let reader = BufReader::new(File::open(path)?);
    read_embeddings_from(reader)
}

pub fn read_embeddings_from<R: BufRead>(reader: R) -> Result<EmbeddingMatrix> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmbeddingFormat("empty file, expected header".into()))??;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 3 {
        return Err(Error::EmbeddingFormat(format!(
            "header must be \"dim L scale_id\", got {header:?}"
        )));
    }
    let dim: usize = head[0]
        .parse()
        .map_err(|_| Error::EmbeddingFormat(format!("bad dim {:?}", head[0])))?;
    let rows: usize = head[1]
        .parse()
        .map_err(|_| Error::EmbeddingFormat(format!("bad row count {:?}", head[1])))?;
    let scale_id: usize = head[2]
        .parse()
        .map_err(|_| Error::EmbeddingFormat(format!("bad scale id {:?}", head[2])))?;
    if dim == 0 {
        return Err(Error::EmbeddingFormat("dim must be positive".into()));
    }

    let mut data = Vec::with_capacity(dim * rows);
    let mut seen = 0usize;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        seen += 1;
        if seen > rows {
            return Err(Error::EmbeddingFormat(format!(
                "line {line_no}: more than {rows} data rows"
            )));
        }
        let mut count = 0usize;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::EmbeddingFormat(format!("line {line_no}: bad float token {tok:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::EmbeddingFormat(format!(
                    "line {line_no}: non-finite value {tok:?}"
                )));
            }
            data.push(v);
            count += 1;
        }
        if count != dim {
            return Err(Error::EmbeddingFormat(format!(
                "line {line_no}: expected {dim} values, got {count}"
            )));
        }
    }
    if seen != rows {
        return Err(Error::EmbeddingFormat(format!(
            "header declares {rows} rows, file has {seen}"
        )));
    }
    Ok(EmbeddingMatrix {
        scale_id,
        dim,
        rows,
        data,
    })
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_embeddings_to(matrix, &mut writer)?;
    writer.flush()?;
    Ok(())
}

pub fn write_embeddings_to<W: Write>(matrix: &EmbeddingMatrix, writer: &mut W) -> Result<()> {
    writeln!(writer, "{} {} {}", matrix.dim, matrix.rows, matrix.scale_id)?;
    for i in 0..matrix.rows {
        let row = matrix.row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                write!(writer, " ")?;
            }
            write!(writer, "{v:.8e}")?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn test_read_small_archive() {
        let text = "2 3 0\n1.0 2.0\n3.0 4.0\n5.0 6.0\n";
        let m = read_embeddings_from(text.as_bytes()).unwrap();
        assert_eq!((m.dim(), m.rows(), m.scale_id()), (2, 3, 0));
        assert_eq!(m.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn test_row_count_mismatch_is_error() {
        let text = "2 3 0\n1.0 2.0\n3.0 4.0\n";
        let err = read_embeddings_from(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::EmbeddingFormat(_)), "{err}");
    }

    #[test]
    fn test_dim_mismatch_is_error() {
        let text = "2 1 0\n1.0 2.0 3.0\n";
        assert!(read_embeddings_from(text.as_bytes()).is_err());
    }

    #[test]
    fn test_non_finite_token_is_error() {
        let text = "2 1 0\n1.0 NaN\n";
        let err = read_embeddings_from(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
        let text = "2 1 0\n1.0 inf\n";
        assert!(read_embeddings_from(text.as_bytes()).is_err());
    }

    #[test]
    fn test_round_trip_is_lossless_at_stated_precision() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for round in 0..20 {
            let dim = rng.random_range(1..12);
            let rows = rng.random_range(0..30);
            let data: Vec<f64> = (0..dim * rows)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let m = EmbeddingMatrix::from_rows(round % 3, dim, data).unwrap();
            let mut buf = Vec::new();
            write_embeddings_to(&m, &mut buf).unwrap();
            let back = read_embeddings_from(buf.as_slice()).unwrap();
            assert_eq!(back.scale_id(), m.scale_id());
            assert_eq!(back.dim(), m.dim());
            assert_eq!(back.rows(), m.rows());
            for i in 0..m.rows() {
                for (a, b) in m.row(i).iter().zip(back.row(i)) {
                    // 9 significant digits keep relative error below 5e-9.
                    assert!((a - b).abs() <= 5e-9 * a.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn test_write_read_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scale0.emb");
        let m = EmbeddingMatrix::from_rows(0, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]).unwrap();
        write_embeddings(&m, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back.rows(), 2);
        assert!((back.row(1)[2] - -0.6).abs() < 1e-12);
    }

    #[test]
    fn test_from_rows_rejects_bad_shapes() {
        assert!(EmbeddingMatrix::from_rows(0, 0, vec![]).is_err());
        assert!(EmbeddingMatrix::from_rows(0, 2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(EmbeddingMatrix::from_rows(0, 2, vec![1.0, f64::NAN]).is_err());
    }
}
