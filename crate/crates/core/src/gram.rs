//! Gram matrix assembly, Nyström low-rank approximation, and the
//! kernel-induced distance.

use crate::kernels::{model_inner, KernelModel, KernelParams};
use crate::model::{segment, Fiber, ModelError, SegmentedFiber};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GramError {
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error("empty fiber set")]
    EmptyFiberSet,
    #[error("fiber at index {index}: {source}")]
    Segmentation {
        index: usize,
        #[source]
        source: ModelError,
    },
    #[error("landmark count {landmarks} out of range 1..={n}")]
    InvalidLandmarkCount { landmarks: usize, n: usize },
    #[error("landmark kernel block is numerically singular")]
    SingularLandmarkBlock,
}

/// Symmetric n×n matrix of pairwise kernel inner products, tagged with the
/// model and parameters that produced it. Only the upper triangle is
/// computed; the lower is mirrored, so `values[(i, j)] == values[(j, i)]`
/// exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    model: KernelModel,
    params: KernelParams,
}

impl GramMatrix {
    /// Wraps a dense matrix, mirroring its upper triangle onto the lower.
    pub fn from_dense(mut values: DMatrix<f64>, model: KernelModel, params: KernelParams) -> Self {
        assert_eq!(values.nrows(), values.ncols(), "Gram matrix must be square");
        let n = values.nrows();
        for i in 0..n {
            for j in i + 1..n {
                values[(j, i)] = values[(i, j)];
            }
        }
        Self {
            values,
            model,
            params,
        }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn model(&self) -> KernelModel {
        self.model
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// (smallest, largest) eigenvalue of the matrix.
    pub fn eigenvalue_range(&self) -> (f64, f64) {
        let eig = self.values.clone().symmetric_eigenvalues();
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in eig.iter() {
            min = min.min(v);
            max = max.max(v);
        }
        (min, max)
    }
}

/// Computes every pairwise inner product for the chosen model. Upper-triangle
/// entries are evaluated (in parallel when the `parallel` feature is on, one
/// entry per task) and mirrored.
pub fn compute_gram(
    fibers: &[Fiber],
    model: KernelModel,
    params: &KernelParams,
) -> Result<GramMatrix, GramError> {
    params.validate().map_err(GramError::InvalidParams)?;
    if fibers.is_empty() {
        return Err(GramError::EmptyFiberSet);
    }
    let segments = segment_all(fibers)?;
    let n = fibers.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .collect();
    let entry = |&(i, j): &(usize, usize)| {
        model_inner(
            model,
            &fibers[i],
            &fibers[j],
            &segments[i],
            &segments[j],
            params,
        )
    };
    #[cfg(feature = "parallel")]
    let computed: Vec<f64> = pairs.par_iter().map(entry).collect();
    #[cfg(not(feature = "parallel"))]
    let computed: Vec<f64> = pairs.iter().map(entry).collect();

    let mut values = DMatrix::zeros(n, n);
    for (&(i, j), &v) in pairs.iter().zip(&computed) {
        values[(i, j)] = v;
        values[(j, i)] = v;
    }
    Ok(GramMatrix {
        values,
        model,
        params: *params,
    })
}

fn segment_all(fibers: &[Fiber]) -> Result<Vec<SegmentedFiber>, GramError> {
    fibers
        .iter()
        .enumerate()
        .map(|(index, f)| segment(f).map_err(|source| GramError::Segmentation { index, source }))
        .collect()
}

/// Nyström approximation `Q ≈ C · K_LL⁺ · Cᵀ` from a seeded uniform landmark
/// sample of the fiber set. The landmark block's pseudoinverse drops
/// eigenvalues below `1e-10` times the largest magnitude.
pub fn nystrom_gram(
    fibers: &[Fiber],
    model: KernelModel,
    params: &KernelParams,
    landmarks: usize,
    seed: u64,
) -> Result<GramMatrix, GramError> {
    params.validate().map_err(GramError::InvalidParams)?;
    let n = fibers.len();
    if n == 0 {
        return Err(GramError::EmptyFiberSet);
    }
    if landmarks == 0 || landmarks > n {
        return Err(GramError::InvalidLandmarkCount { landmarks, n });
    }
    let segments = segment_all(fibers)?;

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut chosen: Vec<usize> = indices[..landmarks].to_vec();
    chosen.sort_unstable();

    // Cross block C: kernel between every fiber and every landmark.
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..landmarks).map(move |j| (i, j)))
        .collect();
    let entry = |&(i, j): &(usize, usize)| {
        let l = chosen[j];
        model_inner(
            model,
            &fibers[i],
            &fibers[l],
            &segments[i],
            &segments[l],
            params,
        )
    };
    #[cfg(feature = "parallel")]
    let computed: Vec<f64> = pairs.par_iter().map(entry).collect();
    #[cfg(not(feature = "parallel"))]
    let computed: Vec<f64> = pairs.iter().map(entry).collect();
    let cross = DMatrix::from_fn(n, landmarks, |i, j| computed[i * landmarks + j]);

    let mut block = DMatrix::zeros(landmarks, landmarks);
    for (j, &l) in chosen.iter().enumerate() {
        for jj in 0..landmarks {
            block[(j, jj)] = cross[(l, jj)];
        }
    }
    // Landmark rows of C are the block itself up to assembly order; force
    // exact symmetry before the eigendecomposition.
    let block = 0.5 * (&block + block.transpose());

    let pinv = symmetric_pinv(&block, 1e-10).ok_or(GramError::SingularLandmarkBlock)?;
    let approx = &cross * pinv * cross.transpose();

    Ok(GramMatrix::from_dense(approx, model, *params))
}

/// Eigenvalue-cutoff pseudoinverse of a symmetric matrix. Returns `None` when
/// every eigenvalue falls below `rel_cutoff` times the largest magnitude.
fn symmetric_pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> Option<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max_mag = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if max_mag <= 0.0 {
        return None;
    }
    let cutoff = rel_cutoff * max_mag;
    let mut kept = 0;
    let inv_vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| {
            if v.abs() >= cutoff {
                kept += 1;
                1.0 / v
            } else {
                0.0
            }
        })
        .collect();
    if kept == 0 {
        return None;
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, &inv) in inv_vals.iter().enumerate() {
        scaled.column_mut(j).scale_mut(inv);
    }
    Some(scaled * eig.eigenvectors.transpose())
}

/// Distance induced by the inner product:
/// `sqrt(max(0, Q[i][i] + Q[j][j] - 2 Q[i][j]))`.
pub fn kernel_distance(q: &GramMatrix, i: usize, j: usize) -> f64 {
    let d2 = q.get(i, i) + q.get(j, j) - 2.0 * q.get(i, j);
    d2.max(0.0).sqrt()
}
