//! Speaker counting and clustering via the normalized maximum eigengap.
//!
//! For each candidate neighbor count p: binarize the fused affinity by
//! keeping the top-p entries per row (self always kept), symmetrize by
//! averaging, form the unnormalized graph Laplacian, and read off the
//! eigengap structure. The ratio r(p) = (p/L) / ĝ_p — where ĝ_p is the
//! largest eigengap normalized by the largest eigenvalue — picks p*, the
//! gap position picks the cluster count, and standard spectral clustering
//! with seeded k-means produces the labels.

use crate::eigen::{symmetric_eigen, symmetric_eigenvalues};
use crate::kmeans::kmeans;
use crate::matrix::SquareMatrix;
use crate::{Error, Result};
use std::io::Write;

#[derive(Debug, Clone)]
pub struct NmescConfig {
    /// Candidate neighbor counts; `None` uses every integer in [2, L/2]
    /// (subsampled to `max_p_candidates`), or {max(1, L/2)} when that
    /// range is empty.
    pub p_grid: Option<Vec<usize>>,
    pub max_p_candidates: usize,
    pub k_max: usize,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for NmescConfig {
    fn default() -> Self {
        Self {
            p_grid: None,
            max_p_candidates: 100,
            k_max: 8,
            kmeans_restarts: 10,
            seed: 0,
        }
    }
}

/// Per-candidate diagnostics from the eigengap search.
#[derive(Debug, Clone, Copy)]
pub struct PCandidate {
    pub p: usize,
    /// Largest eigengap divided by the largest eigenvalue (0 when the
    /// graph is empty).
    pub normalized_gap: f64,
    /// NME ratio (p/L)/ĝ_p; infinite when the gap vanishes.
    pub ratio: f64,
    /// Cluster count this p proposes.
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct NmeSearchResult {
    pub best_p: usize,
    pub k: usize,
    pub candidates: Vec<PCandidate>,
}

#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub k: usize,
    pub labels: Vec<usize>,
    pub search: NmeSearchResult,
}

/// Default candidate grid: integers [2, L/2], uniformly subsampled down to
/// `cap` entries; {max(1, L/2)} when the range is empty (L < 4).
pub fn default_p_grid(l: usize, cap: usize) -> Vec<usize> {
    let hi = l / 2;
    if hi < 2 {
        return vec![hi.max(1)];
    }
    let full: Vec<usize> = (2..=hi).collect();
    if full.len() <= cap || cap < 2 {
        return full;
    }
    let mut out: Vec<usize> = (0..cap)
        .map(|i| full[(i * (full.len() - 1)) / (cap - 1)])
        .collect();
    out.dedup();
    out
}

/// Top-p row selection: for each row keep the self entry plus the p−1
/// largest others (ties by value, then lower index), then average with the
/// transpose. Entries of the result are in {0, 0.5, 1}.
pub fn binarize(a: &SquareMatrix, p: usize) -> SquareMatrix {
    let l = a.n();
    let keep = p.min(l);
    let mut b0 = vec![vec![false; l]; l];
    for i in 0..l {
        b0[i][i] = true;
        if keep > 1 {
            let mut others: Vec<usize> = (0..l).filter(|&j| j != i).collect();
            others.sort_by(|&x, &y| a.get(i, y).total_cmp(&a.get(i, x)).then(x.cmp(&y)));
            for &j in others.iter().take(keep - 1) {
                b0[i][j] = true;
            }
        }
    }
    let mut b = SquareMatrix::zeros(l);
    for i in 0..l {
        for j in 0..l {
            let v = (u8::from(b0[i][j]) + u8::from(b0[j][i])) as f64 / 2.0;
            b.set(i, j, v);
        }
    }
    b
}

/// Unnormalized graph Laplacian Λ = D − B (self-loops cancel).
pub fn laplacian(b: &SquareMatrix) -> SquareMatrix {
    let l = b.n();
    let mut out = SquareMatrix::zeros(l);
    for i in 0..l {
        let degree: f64 = (0..l).map(|j| b.get(i, j)).sum();
        for j in 0..l {
            out.set(i, j, if i == j { degree - b.get(i, j) } else { -b.get(i, j) });
        }
    }
    out
}

fn validate_affinity(a: &SquareMatrix) -> Result<()> {
    if a.n() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 items to cluster, got {}",
            a.n()
        )));
    }
    if !a.is_symmetric(1e-9) {
        return Err(Error::InvalidInput("affinity matrix not symmetric".into()));
    }
    if a.data().iter().any(|v| !v.is_finite() || *v < -1e-12 || *v > 1.0 + 1e-12) {
        return Err(Error::InvalidInput(
            "affinity entries must lie in [0, 1]".into(),
        ));
    }
    if a.data().iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidInput(
            "degenerate graph: affinity matrix is all zero".into(),
        ));
    }
    Ok(())
}

/// Eigengap statistics for one binarized graph. Returns (normalized gap,
/// ratio, k) where k already folds in the zero-eigenvalue multiplicity:
/// the graph cannot have fewer clusters than connected components.
fn evaluate_p(a: &SquareMatrix, p: usize, l: usize, k_max: usize) -> Result<PCandidate> {
    let lam = laplacian(&binarize(a, p));
    let values = symmetric_eigenvalues(&lam)?;
    debug_assert!(values[0] > -1e-9, "Laplacian must be PSD");
    let lambda_max = *values.last().expect("l >= 2");
    let zero_tol = 1e-8 * lambda_max.max(1.0);
    let components = values.iter().take_while(|v| v.abs() < zero_tol).count();

    // g_k = λ_{k+1} − λ_k (1-indexed) for k proposals up to k_max.
    let mut best_k = 1usize;
    let mut best_gap = f64::NEG_INFINITY;
    for k in 1..=k_max.min(l - 1) {
        let gap = values[k] - values[k - 1];
        if gap > best_gap {
            best_gap = gap;
            best_k = k;
        }
    }

    let (normalized_gap, ratio) = if lambda_max < zero_tol {
        (0.0, f64::INFINITY)
    } else {
        let g = best_gap / lambda_max;
        let r = if g > 0.0 {
            (p as f64 / l as f64) / g
        } else {
            f64::INFINITY
        };
        (g, r)
    };

    // A disconnected graph already exhibits its cluster count as the
    // multiplicity of the zero eigenvalue; additive gaps inside the
    // positive spectrum reflect within-component structure and would
    // overcount. Connected graphs use the largest eigengap.
    let k = if components >= 2 { components } else { best_k }
        .min(k_max)
        .min(l);
    Ok(PCandidate {
        p,
        normalized_gap,
        ratio,
        k,
    })
}

/// Search the p grid for the smallest NME ratio; ties keep the earlier
/// grid entry.
pub fn nme_search(a: &SquareMatrix, cfg: &NmescConfig) -> Result<NmeSearchResult> {
    validate_affinity(a)?;
    let l = a.n();
    let grid = match &cfg.p_grid {
        Some(g) if !g.is_empty() => g.clone(),
        _ => default_p_grid(l, cfg.max_p_candidates),
    };
    if grid.iter().any(|&p| p == 0) {
        return Err(Error::InvalidConfig("p = 0 is not a valid neighbor count".into()));
    }

    let mut candidates = Vec::with_capacity(grid.len());
    for &p in &grid {
        candidates.push(evaluate_p(a, p, l, cfg.k_max)?);
    }
    let mut best = 0usize;
    for (i, c) in candidates.iter().enumerate() {
        if c.ratio < candidates[best].ratio {
            best = i;
        }
    }
    Ok(NmeSearchResult {
        best_p: candidates[best].p,
        k: candidates[best].k,
        candidates,
    })
}

/// Spectral clustering at a fixed (p, k): rows of the k lowest-eigenvalue
/// eigenvectors of the Laplacian, row-normalized, grouped by k-means.
/// Labels are compacted to 0..k'−1 with every cluster non-empty (k' < k
/// only in degenerate cases where k-means cannot fill all clusters).
pub fn spectral_cluster(
    a: &SquareMatrix,
    p: usize,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    validate_affinity(a)?;
    let l = a.n();
    if k == 0 || k > l {
        return Err(Error::InvalidInput(format!("k must be in 1..={l}, got {k}")));
    }
    if k == 1 {
        return Ok(vec![0; l]);
    }
    let lam = laplacian(&binarize(a, p));
    let eig = symmetric_eigen(&lam)?;
    let mut points: Vec<Vec<f64>> = (0..l)
        .map(|i| (0..k).map(|c| eig.vectors.get(i, c)).collect())
        .collect();
    for row in points.iter_mut() {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    let result = kmeans(&points, k, restarts, seed)?;
    Ok(compact_labels(&result.labels))
}

/// Relabel clusters in order of first appearance so labels are dense.
fn compact_labels(labels: &[usize]) -> Vec<usize> {
    let mut remap: Vec<Option<usize>> = vec![None; labels.iter().max().map_or(0, |m| m + 1)];
    let mut next = 0usize;
    labels
        .iter()
        .map(|&l| {
            *remap[l].get_or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect()
}

/// Full pipeline: eigengap search, then clustering at (p*, k).
pub fn cluster(a: &SquareMatrix, cfg: &NmescConfig) -> Result<ClusterResult> {
    let search = nme_search(a, cfg)?;
    let labels = spectral_cluster(a, search.best_p, search.k, cfg.kmeans_restarts, cfg.seed)?;
    let k = labels.iter().max().expect("nonempty") + 1;
    Ok(ClusterResult { k, labels, search })
}

/// Diagnostics dump: per-candidate lines "p g_p r(p) k(p)".
pub fn write_diagnostics_to<W: Write>(result: &NmeSearchResult, writer: &mut W) -> Result<()> {
    for c in &result.candidates {
        writeln!(
            writer,
            "{} {:.6} {:.6} {}",
            c.p, c.normalized_gap, c.ratio, c.k
        )?;
    }
    Ok(())
}
