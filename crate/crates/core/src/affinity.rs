//! Per-scale affinity matrices and their weighted fusion.
//!
//! For every pair of base segments, each scale contributes the cosine
//! similarity between the embeddings of the coarse segments the pair maps
//! to. Each scale's matrix is min-max normalized over its off-diagonal
//! entries (per session), the diagonal is pinned at 1, and the final
//! clustering matrix is the weighted sum across scales.

use crate::embedding::EmbeddingMatrix;
use crate::matrix::SquareMatrix;
use crate::segmenter::MultiScaleSegmentSet;
use crate::{Error, Result};
use std::io::Write;

/// Nonnegative per-scale weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidInput("weight vector is empty".into()));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "weights must be finite and nonnegative, got {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "weights must sum to 1, got sum {sum}"
            )));
        }
        Ok(Self(w))
    }

    /// Uniform weights 1/S.
    pub fn equal(s: usize) -> Self {
        Self(vec![1.0 / s as f64; s])
    }

    /// All mass on one scale.
    pub fn one_hot(scale: usize, s: usize) -> Self {
        let mut w = vec![0.0; s];
        w[scale] = 1.0;
        Self(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Stack of S normalized L×L affinity matrices.
#[derive(Debug, Clone)]
pub struct AffinityTensor {
    mats: Vec<SquareMatrix>,
    /// Per scale: true when the raw off-diagonal was constant and the 0.5
    /// fallback was applied — callers should surface a warning.
    constant_fallback: Vec<bool>,
}

impl AffinityTensor {
    /// Wrap pre-normalized matrices; validates shape, symmetry, range.
    pub fn from_matrices(mats: Vec<SquareMatrix>) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::InvalidInput("no affinity matrices".into()));
        }
        let l = mats[0].n();
        for (s, m) in mats.iter().enumerate() {
            if m.n() != l {
                return Err(Error::DimMismatch(format!(
                    "matrix {s} is {}×{}, expected {l}×{l}",
                    m.n(),
                    m.n()
                )));
            }
            if !m.is_symmetric(1e-12) {
                return Err(Error::InvalidInput(format!("matrix {s} not symmetric")));
            }
            if m.data().iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return Err(Error::InvalidInput(format!(
                    "matrix {s} has entries outside [0, 1]"
                )));
            }
        }
        let n = mats.len();
        Ok(Self {
            mats,
            constant_fallback: vec![false; n],
        })
    }

    pub fn scale_count(&self) -> usize {
        self.mats.len()
    }

    pub fn num_base(&self) -> usize {
        self.mats[0].n()
    }

    pub fn matrix(&self, s: usize) -> &SquareMatrix {
        &self.mats[s]
    }

    /// Normalized affinity triple (c_1 … c_S) for one base pair.
    pub fn pair_values(&self, i: usize, j: usize) -> Vec<f64> {
        self.mats.iter().map(|m| m.get(i, j)).collect()
    }

    pub fn had_constant_fallback(&self, s: usize) -> bool {
        self.constant_fallback[s]
    }

    pub fn any_constant_fallback(&self) -> bool {
        self.constant_fallback.iter().any(|&f| f)
    }
}

/// Cosine similarity of two equal-dimension nonzero vectors.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch(format!(
            "cosine of {}-dim and {}-dim vectors",
            u.len(),
            v.len()
        )));
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Min-max normalize the off-diagonal entries of a symmetric matrix to
/// [0, 1] and pin the diagonal at 1. Returns the normalized matrix and a
/// flag that is true when the off-diagonal was constant and every entry
/// was set to the 0.5 fallback instead.
pub fn minmax_normalize(m: &SquareMatrix) -> (SquareMatrix, bool) {
    let l = m.n();
    let mut out = SquareMatrix::zeros(l);
    for i in 0..l {
        out.set(i, i, 1.0);
    }
    if l < 2 {
        return (out, false);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..l {
        for j in 0..l {
            if i != j {
                let v = m.get(i, j);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let constant = hi - lo <= 0.0;
    for i in 0..l {
        for j in 0..l {
            if i != j {
                let v = if constant {
                    0.5
                } else {
                    (m.get(i, j) - lo) / (hi - lo)
                };
                out.set(i, j, v);
            }
        }
    }
    (out, constant)
}

/// Build the normalized per-scale affinity stack for a segmented session.
///
/// `embeddings[s]` must have one row per segment of scale `s`; entry
/// (i, j) at scale s is the cosine of the rows the base pair maps to.
pub fn build_affinity_tensor(
    msset: &MultiScaleSegmentSet,
    embeddings: &[EmbeddingMatrix],
) -> Result<AffinityTensor> {
    let s_count = msset.scale_count();
    if embeddings.len() != s_count {
        return Err(Error::DimMismatch(format!(
            "{} embedding matrices for {} scales",
            embeddings.len(),
            s_count
        )));
    }
    for (s, emb) in embeddings.iter().enumerate() {
        if emb.rows() != msset.segments_at(s).len() {
            return Err(Error::DimMismatch(format!(
                "scale {s}: {} embedding rows for {} segments",
                emb.rows(),
                msset.segments_at(s).len()
            )));
        }
    }

    let l = msset.num_base();
    let mut mats = Vec::with_capacity(s_count);
    let mut flags = Vec::with_capacity(s_count);
    for (s, emb) in embeddings.iter().enumerate() {
        // Gather each base segment's mapped row once, with its norm.
        let rows: Vec<&[f64]> = (0..l).map(|b| emb.row(msset.mapped_index(b, s))).collect();
        let norms: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        if let Some(b) = norms.iter().position(|&n| n == 0.0) {
            let _ = b;
            return Err(Error::ZeroNorm);
        }
        let mut raw = SquareMatrix::zeros(l);
        for i in 0..l {
            raw.set(i, i, 1.0);
            for j in i + 1..l {
                let dot: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum();
                let c = dot / (norms[i] * norms[j]);
                raw.set(i, j, c);
                raw.set(j, i, c);
            }
        }
        let (norm, constant) = minmax_normalize(&raw);
        mats.push(norm);
        flags.push(constant);
    }
    Ok(AffinityTensor {
        mats,
        constant_fallback: flags,
    })
}

/// Weighted sum of the per-scale matrices: entry (i,j) = Σ_s w_s·C[s][i][j].
pub fn fuse(tensor: &AffinityTensor, w: &WeightVector) -> Result<SquareMatrix> {
    if w.len() != tensor.scale_count() {
        return Err(Error::DimMismatch(format!(
            "{} weights for {} scales",
            w.len(),
            tensor.scale_count()
        )));
    }
    let l = tensor.num_base();
    let mut out = SquareMatrix::zeros(l);
    for (s, ws) in w.as_slice().iter().enumerate() {
        let m = tensor.matrix(s);
        for i in 0..l {
            for j in 0..l {
                out.set(i, j, out.get(i, j) + ws * m.get(i, j));
            }
        }
    }
    Ok(out)
}

/// Split `0..l` into `blocks` contiguous ranges of near-equal size, any
/// remainder going to the earliest blocks. l = 10, blocks = 3 → sizes
/// (4, 3, 3).
pub fn split_into_blocks(l: usize, blocks: usize) -> Vec<(usize, usize)> {
    let base = l / blocks;
    let rem = l % blocks;
    let mut out = Vec::with_capacity(blocks);
    let mut start = 0;
    for b in 0..blocks {
        let size = base + usize::from(b < rem);
        out.push((start, start + size));
        start += size;
    }
    out
}

/// Index into the blockwise weight list: first the `blocks` intra weights
/// in block order, then inter weights for pairs (i, j), i < j, in
/// lexicographic order — for 3 blocks: (0,1), (0,2), (1,2).
fn block_weight_index(blocks: usize, bi: usize, bj: usize) -> usize {
    if bi == bj {
        return bi;
    }
    let (i, j) = if bi < bj { (bi, bj) } else { (bj, bi) };
    blocks + i * (2 * blocks - i - 1) / 2 + (j - i - 1)
}

/// Fuse with block-dependent weights: each (block_i, block_j) rectangle of
/// the matrix uses its own weight vector. `split` must partition `0..L`
/// into contiguous ranges; `weights` holds one vector per diagonal block
/// followed by one per unordered block pair (see `block_weight_index`).
pub fn fuse_blockwise(
    tensor: &AffinityTensor,
    weights: &[WeightVector],
    split: &[(usize, usize)],
) -> Result<SquareMatrix> {
    let l = tensor.num_base();
    let blocks = split.len();
    let expected = blocks + blocks * (blocks - 1) / 2;
    if weights.len() != expected {
        return Err(Error::InvalidInput(format!(
            "{} weight vectors for {blocks} blocks, expected {expected}",
            weights.len()
        )));
    }
    let mut cursor = 0;
    for &(s, e) in split {
        if s != cursor || e < s {
            return Err(Error::InvalidInput(format!(
                "split ranges must be contiguous from 0, got {split:?}"
            )));
        }
        cursor = e;
    }
    if cursor != l {
        return Err(Error::InvalidInput(format!(
            "split covers 0..{cursor}, matrix is {l}×{l}"
        )));
    }
    for w in weights {
        if w.len() != tensor.scale_count() {
            return Err(Error::DimMismatch(format!(
                "{} weights for {} scales",
                w.len(),
                tensor.scale_count()
            )));
        }
    }

    let block_of = |idx: usize| split.iter().position(|&(s, e)| idx >= s && idx < e).unwrap();
    let mut out = SquareMatrix::zeros(l);
    for i in 0..l {
        let bi = block_of(i);
        for j in 0..l {
            let bj = block_of(j);
            let w = &weights[block_weight_index(blocks, bi, bj)];
            let mut v = 0.0;
            for (s, ws) in w.as_slice().iter().enumerate() {
                v += ws * tensor.matrix(s).get(i, j);
            }
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Dump a square matrix as text: first line the size, then one row per
/// line with 9-significant-digit entries.
pub fn write_matrix_to<W: Write>(m: &SquareMatrix, writer: &mut W) -> Result<()> {
    writeln!(writer, "{}", m.n())?;
    for i in 0..m.n() {
        for j in 0..m.n() {
            if j > 0 {
                write!(writer, " ")?;
            }
            write!(writer, "{:.8e}", m.get(i, j))?;
        }
        writeln!(writer)?;
    }
    Ok(())
}
