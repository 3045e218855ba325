//! Kernelized dictionary learning with non-negative sparse coding.
//!
//! Bundle prototypes are expressed as non-negative combinations of fibers
//! (atom matrix `A`, n×m) and every fiber as a sparse non-negative mixture of
//! prototypes (code matrix `W`, m×n, at most `s_max` non-zeros per column).
//! Fitting alternates greedy sparse coding (most positively correlated atom
//! first, non-negative least squares on the growing support) with an
//! element-wise multiplicative dictionary update, all expressed through the
//! Gram matrix so fibers are never touched directly.

use crate::gram::GramMatrix;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

/// Correlations at or below this are not considered positive by the greedy
/// atom selection.
const CORRELATION_FLOOR: f64 = 1e-12;
/// Denominator guard for the multiplicative update.
const UPDATE_EPS: f64 = 1e-12;
/// Convergence tolerance for the non-negative least-squares subproblems.
const NNLS_TOL: f64 = 1e-10;
/// Atoms whose RKHS cosine with an earlier atom exceeds this are reseeded.
const DUPLICATE_COHERENCE: f64 = 0.95;

#[derive(Debug, Error)]
pub enum DictError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{m} atoms requested for {n} fibers")]
    MoreAtomsThanFibers { m: usize, n: usize },
    #[error("invalid fit config: {0}")]
    InvalidConfig(String),
}

/// Non-negative n×m atom matrix; every column is a nontrivial combination of
/// fibers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    pub fn from_matrix(atoms: DMatrix<f64>) -> Result<Self, DictError> {
        if atoms.iter().any(|&v| v.is_nan() || v < 0.0 || !v.is_finite()) {
            return Err(DictError::DimensionMismatch(
                "atom matrix must be non-negative and finite".into(),
            ));
        }
        for j in 0..atoms.ncols() {
            if atoms.column(j).iter().all(|&v| v == 0.0) {
                return Err(DictError::DimensionMismatch(format!(
                    "atom column {j} is all zero"
                )));
            }
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    /// Atom count m.
    pub fn m(&self) -> usize {
        self.atoms.ncols()
    }

    /// Fiber count n.
    pub fn n(&self) -> usize {
        self.atoms.nrows()
    }
}

/// Non-negative m×n sparse code matrix with at most `s_max` non-zeros per
/// column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodes {
    codes: DMatrix<f64>,
    s_max: usize,
}

impl SparseCodes {
    pub fn from_matrix(codes: DMatrix<f64>, s_max: usize) -> Result<Self, DictError> {
        if codes.iter().any(|&v| v.is_nan() || v < 0.0 || !v.is_finite()) {
            return Err(DictError::DimensionMismatch(
                "code matrix must be non-negative and finite".into(),
            ));
        }
        for i in 0..codes.ncols() {
            let nnz = codes.column(i).iter().filter(|&&v| v != 0.0).count();
            if nnz > s_max {
                return Err(DictError::DimensionMismatch(format!(
                    "column {i} has {nnz} non-zeros, bound is {s_max}"
                )));
            }
        }
        Ok(Self { codes, s_max })
    }

    pub fn codes(&self) -> &DMatrix<f64> {
        &self.codes
    }

    pub fn s_max(&self) -> usize {
        self.s_max
    }

    /// Atom count m.
    pub fn m(&self) -> usize {
        self.codes.nrows()
    }

    /// Fiber count n.
    pub fn n(&self) -> usize {
        self.codes.ncols()
    }
}

/// Fit hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitConfig {
    pub m: usize,
    pub s_max: usize,
    pub max_outer_iters: usize,
    pub dict_update_iters: usize,
    pub objective_tolerance: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            m: 4,
            s_max: 1,
            max_outer_iters: 50,
            dict_update_iters: 30,
            objective_tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl FitConfig {
    fn validate(&self, n: usize) -> Result<(), DictError> {
        if self.m == 0 {
            return Err(DictError::InvalidConfig("m must be >= 1".into()));
        }
        if self.m > n {
            return Err(DictError::MoreAtomsThanFibers { m: self.m, n });
        }
        if self.s_max == 0 || self.s_max > self.m {
            return Err(DictError::InvalidConfig(format!(
                "s_max must be in 1..={}, got {}",
                self.m, self.s_max
            )));
        }
        if self.max_outer_iters == 0 || self.dict_update_iters == 0 {
            return Err(DictError::InvalidConfig(
                "iteration counts must be >= 1".into(),
            ));
        }
        if self.objective_tolerance.is_nan() || self.objective_tolerance <= 0.0 {
            return Err(DictError::InvalidConfig(
                "objective_tolerance must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub dictionary: Dictionary,
    pub codes: SparseCodes,
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
}

/// Reconstruction objective
/// `1/2 sum_i (Q[i][i] + w_iᵀ AᵀQA w_i - 2 Q(i,:) A w_i)`.
pub fn objective(q: &GramMatrix, a: &Dictionary, w: &SparseCodes) -> Result<f64, DictError> {
    let n = q.n();
    if a.n() != n || w.n() != n || w.m() != a.m() {
        return Err(DictError::DimensionMismatch(format!(
            "Q is {n}x{n}, A is {}x{}, W is {}x{}",
            a.n(),
            a.m(),
            w.m(),
            w.n()
        )));
    }
    let qa = q.values() * a.atoms(); // n×m
    let gram_atoms = a.atoms().transpose() * &qa; // m×m
    let trace_q = q.values().trace();
    // tr(QAW) = sum_{i,j} (QA)[i,j] W[j,i]
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..a.m() {
            cross += qa[(i, j)] * w.codes()[(j, i)];
        }
    }
    let gw = &gram_atoms * w.codes(); // m×n
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..a.m() {
            quad += gw[(j, i)] * w.codes()[(j, i)];
        }
    }
    Ok(0.5 * (trace_q + quad - 2.0 * cross))
}

/// Dictionary of `m` one-hot atoms at distinct seeded-random fiber indices.
pub fn init_atoms(n: usize, m: usize, seed: u64) -> Result<Dictionary, DictError> {
    if m > n {
        return Err(DictError::MoreAtomsThanFibers { m, n });
    }
    if m == 0 {
        return Err(DictError::InvalidConfig("m must be >= 1".into()));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut atoms = DMatrix::zeros(n, m);
    for (j, &i) in indices[..m].iter().enumerate() {
        atoms[(i, j)] = 1.0;
    }
    Ok(Dictionary { atoms })
}

/// Greedy sparse code for fiber `i`: repeatedly select the unselected atom
/// with the largest positive residual correlation `(Q(i,:)A - wᵀAᵀQA)_j`,
/// re-solving non-negative least squares on the support after each selection,
/// until no correlation is positive or the support reaches `s_max`.
pub fn sparse_code_one(
    q: &GramMatrix,
    a: &Dictionary,
    i: usize,
    s_max: usize,
) -> Result<DVector<f64>, DictError> {
    let n = q.n();
    if a.n() != n {
        return Err(DictError::DimensionMismatch(format!(
            "Q is {n}x{n} but A has {} rows",
            a.n()
        )));
    }
    if i >= n {
        return Err(DictError::DimensionMismatch(format!(
            "fiber index {i} out of range 0..{n}"
        )));
    }
    let qa = q.values() * a.atoms();
    let gram_atoms = a.atoms().transpose() * &qa;
    let correlations = qa.row(i).transpose();
    Ok(code_column(&gram_atoms, &correlations, s_max))
}

fn code_column(gram_atoms: &DMatrix<f64>, correlations: &DVector<f64>, s_max: usize) -> DVector<f64> {
    let m = gram_atoms.nrows();
    let mut w = DVector::zeros(m);
    let mut support: Vec<usize> = Vec::with_capacity(s_max.min(m));
    while support.len() < s_max.min(m) {
        // Residual correlation; ties broken by lowest atom index.
        let residual = correlations - gram_atoms * &w;
        let mut best = None;
        for j in 0..m {
            if support.contains(&j) {
                continue;
            }
            match best {
                None => best = Some((j, residual[j])),
                Some((_, v)) if residual[j] > v => best = Some((j, residual[j])),
                _ => {}
            }
        }
        let (j, corr) = match best {
            Some(b) => b,
            None => break,
        };
        if corr <= CORRELATION_FLOOR {
            break;
        }
        support.push(j);
        let solution = nnls_on_support(gram_atoms, correlations, &support);
        w.fill(0.0);
        for (&j, &v) in support.iter().zip(&solution) {
            w[j] = v;
        }
    }
    w
}

/// Active-set non-negative least squares for
/// `min ½ xᵀ G_SS x - c_Sᵀ x  s.t. x >= 0` on the given support.
fn nnls_on_support(
    gram_atoms: &DMatrix<f64>,
    correlations: &DVector<f64>,
    support: &[usize],
) -> Vec<f64> {
    let k = support.len();
    let g = DMatrix::from_fn(k, k, |r, c| gram_atoms[(support[r], support[c])]);
    let c = DVector::from_fn(k, |r, _| correlations[support[r]]);

    let mut x = DVector::zeros(k);
    let mut passive = vec![false; k];
    // Lawson-Hanson outer loop; k is tiny (<= s_max), so iteration caps are
    // generous safety nets rather than tuning knobs.
    for _ in 0..(4 * k + 8) {
        let gradient = &c - &g * &x;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..k {
            if !passive[j] && gradient[j] > NNLS_TOL
                && best.is_none_or(|(_, v)| gradient[j] > v) {
                    best = Some((j, gradient[j]));
                }
        }
        let Some((enter, _)) = best else { break };
        passive[enter] = true;

        loop {
            let z = solve_passive(&g, &c, &passive);
            let mut alpha = 1.0f64;
            let mut blocked = false;
            for j in 0..k {
                if passive[j] && z[j] <= 0.0 {
                    let step = x[j] / (x[j] - z[j]);
                    if step < alpha {
                        alpha = step;
                    }
                    blocked = true;
                }
            }
            if !blocked {
                x = z;
                break;
            }
            for j in 0..k {
                if passive[j] {
                    x[j] += alpha * (z[j] - x[j]);
                    if x[j] <= NNLS_TOL {
                        x[j] = 0.0;
                        passive[j] = false;
                    }
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x.iter().cloned().collect()
}

/// Unconstrained minimizer on the passive set, zeros elsewhere. Falls back to
/// an eigenvalue-cutoff pseudoinverse when the passive block is singular
/// (duplicate atoms).
fn solve_passive(g: &DMatrix<f64>, c: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let p = idx.len();
    let mut z = DVector::zeros(passive.len());
    if p == 0 {
        return z;
    }
    let gp = DMatrix::from_fn(p, p, |r, col| g[(idx[r], idx[col])]);
    let cp = DVector::from_fn(p, |r, _| c[idx[r]]);
    let sol = match gp.clone().cholesky() {
        Some(ch) => ch.solve(&cp),
        None => {
            let eig = gp.symmetric_eigen();
            let max_mag = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            let cutoff = 1e-12 * max_mag.max(f64::MIN_POSITIVE);
            let mut coeffs = eig.eigenvectors.transpose() * cp;
            for r in 0..p {
                let ev = eig.eigenvalues[r];
                coeffs[r] = if ev.abs() > cutoff { coeffs[r] / ev } else { 0.0 };
            }
            eig.eigenvectors * coeffs
        }
    };
    for (r, &j) in idx.iter().enumerate() {
        z[j] = sol[r];
    }
    z
}

/// Sparse codes for every fiber; columns are independent.
pub fn sparse_code_all(
    q: &GramMatrix,
    a: &Dictionary,
    s_max: usize,
) -> Result<SparseCodes, DictError> {
    code_all_guarded(q, a, s_max, None)
}

/// Column-wise coding with an optional monotone guard: when `previous` is
/// given, a fiber keeps its previous code if that code scores a strictly
/// better column objective under the current atoms.
fn code_all_guarded(
    q: &GramMatrix,
    a: &Dictionary,
    s_max: usize,
    previous: Option<&SparseCodes>,
) -> Result<SparseCodes, DictError> {
    let n = q.n();
    if a.n() != n {
        return Err(DictError::DimensionMismatch(format!(
            "Q is {n}x{n} but A has {} rows",
            a.n()
        )));
    }
    if let Some(prev) = previous {
        if prev.m() != a.m() || prev.n() != n {
            return Err(DictError::DimensionMismatch(
                "previous codes do not match A/Q".into(),
            ));
        }
    }
    let qa = q.values() * a.atoms();
    let gram_atoms = a.atoms().transpose() * &qa;

    // Column objective up to the constant Q[i][i]/2: -cᵀw + ½ wᵀGw.
    let col_score = |w: &DVector<f64>, c: &DVector<f64>| -> f64 {
        -c.dot(w) + 0.5 * (&gram_atoms * w).dot(w)
    };

    let code_one = |i: usize| -> DVector<f64> {
        let c = qa.row(i).transpose();
        let fresh = code_column(&gram_atoms, &c, s_max);
        if let Some(prev) = previous {
            let old: DVector<f64> = prev.codes().column(i).into();
            if col_score(&old, &c) < col_score(&fresh, &c) {
                return old;
            }
        }
        fresh
    };

    #[cfg(feature = "parallel")]
    let columns: Vec<DVector<f64>> = (0..n).into_par_iter().map(code_one).collect();
    #[cfg(not(feature = "parallel"))]
    let columns: Vec<DVector<f64>> = (0..n).map(code_one).collect();

    let mut codes = DMatrix::zeros(a.m(), n);
    for (i, col) in columns.iter().enumerate() {
        codes.set_column(i, col);
    }
    Ok(SparseCodes { codes, s_max })
}

/// `iters` element-wise multiplicative updates
/// `A_ij <- A_ij (QWᵀ)_ij / ((QAWWᵀ)_ij + eps)` with `W` fixed.
pub fn update_dictionary(
    q: &GramMatrix,
    a: &Dictionary,
    w: &SparseCodes,
    iters: usize,
) -> Result<Dictionary, DictError> {
    let n = q.n();
    if a.n() != n || w.n() != n || w.m() != a.m() {
        return Err(DictError::DimensionMismatch(format!(
            "Q is {n}x{n}, A is {}x{}, W is {}x{}",
            a.n(),
            a.m(),
            w.m(),
            w.n()
        )));
    }
    let numerator = q.values() * w.codes().transpose(); // n×m, constant in A
    let ww = w.codes() * w.codes().transpose(); // m×m
    let mut atoms = a.atoms().clone();
    for _ in 0..iters {
        let denominator = q.values() * &atoms * &ww;
        for j in 0..atoms.ncols() {
            for i in 0..atoms.nrows() {
                atoms[(i, j)] *= numerator[(i, j)] / (denominator[(i, j)] + UPDATE_EPS);
            }
        }
    }
    Ok(Dictionary { atoms })
}

/// Scales every atom to unit RKHS norm (`aᵀQa == 1`) and compensates the
/// matching row of `W`, leaving the product `A·W` unchanged. Atoms whose norm
/// underflows are reseeded to the one-hot of the largest-diagonal fiber; such
/// atoms carry no RKHS mass, so the objective is unaffected.
fn renormalize(q: &GramMatrix, atoms: &mut DMatrix<f64>, codes: &mut DMatrix<f64>) {
    let qa = q.values() * &*atoms;
    for j in 0..atoms.ncols() {
        let norm_sq = atoms.column(j).dot(&qa.column(j));
        if norm_sq > 1e-24 {
            let norm = norm_sq.sqrt();
            for v in atoms.column_mut(j).iter_mut() {
                *v /= norm;
            }
            for v in codes.row_mut(j).iter_mut() {
                *v *= norm;
            }
        } else {
            let t = max_diagonal_index(q);
            atoms.column_mut(j).fill(0.0);
            atoms[(t, j)] = 1.0 / q.get(t, t).sqrt().max(f64::MIN_POSITIVE);
            codes.row_mut(j).fill(0.0);
        }
    }
}

fn max_diagonal_index(q: &GramMatrix) -> usize {
    let mut best = 0;
    for i in 1..q.n() {
        if q.get(i, i) > q.get(best, best) {
            best = i;
        }
    }
    best
}

/// Per-fiber residual objective terms for the current factorization.
fn column_residuals(q: &GramMatrix, atoms: &DMatrix<f64>, codes: &DMatrix<f64>) -> Vec<f64> {
    let qa = q.values() * atoms;
    let gram_atoms = atoms.transpose() * &qa;
    (0..q.n())
        .map(|i| {
            let w = codes.column(i);
            let c = qa.row(i).transpose();
            q.get(i, i) - 2.0 * c.dot(&w) + (&gram_atoms * w).dot(&w)
        })
        .collect()
}

/// Reseeds atoms that stopped pulling their weight to one-hots of the
/// worst-reconstructed fibers: dead atoms (all-zero code row), near-duplicate
/// atoms (RKHS cosine above [`DUPLICATE_COHERENCE`] with an earlier surviving
/// atom), and — when some fiber is starving, i.e. its code leaves more than
/// half of its RKHS energy unexplained — the single most redundant atom.
/// Returns whether anything changed; `fit` only keeps the proposal if the
/// following alternation does not worsen the objective.
fn reseed_stale_atoms(
    q: &GramMatrix,
    atoms: &mut DMatrix<f64>,
    codes: &mut DMatrix<f64>,
) -> bool {
    let m = atoms.ncols();
    let qa = q.values() * &*atoms;
    let gram_atoms = atoms.transpose() * &qa;
    let coherence = |j: usize, k: usize| {
        let denom = (gram_atoms[(j, j)] * gram_atoms[(k, k)]).sqrt();
        if denom > 0.0 {
            gram_atoms[(j, k)] / denom
        } else {
            0.0
        }
    };

    let mut stale = vec![false; m];
    for j in 0..m {
        let row_mass = codes.row(j).iter().fold(0.0f64, |acc, &v| acc.max(v));
        if row_mass <= 1e-12 {
            stale[j] = true;
            continue;
        }
        for k in 0..j {
            if !stale[k] && coherence(j, k) > DUPLICATE_COHERENCE {
                stale[j] = true;
                break;
            }
        }
    }

    let residuals = column_residuals(q, atoms, codes);
    let starving = (0..q.n())
        .any(|i| q.get(i, i) > 0.0 && residuals[i] > 0.5 * q.get(i, i));
    if starving && !stale.iter().any(|&s| s) && m > 1 {
        // Every atom looks alive yet some fiber stays essentially
        // unexpressed; sacrifice the later member of the most mutually
        // coherent atom pair.
        let mut best: Option<(usize, f64)> = None;
        for j in 0..m {
            for k in 0..j {
                let c = coherence(j, k);
                if best.is_none_or(|(_, v)| c > v) {
                    best = Some((j, c));
                }
            }
        }
        if let Some((j, _)) = best {
            stale[j] = true;
        }
    }
    if !stale.iter().any(|&s| s) {
        return false;
    }
    let mut order: Vec<usize> = (0..q.n()).collect();
    order.sort_by(|&a, &b| residuals[b].partial_cmp(&residuals[a]).unwrap().then(a.cmp(&b)));
    let mut next_target = order.into_iter();
    for j in 0..m {
        if !stale[j] {
            continue;
        }
        let Some(t) = next_target.next() else { break };
        atoms.column_mut(j).fill(0.0);
        atoms[(t, j)] = 1.0 / q.get(t, t).sqrt().max(f64::MIN_POSITIVE);
        codes.row_mut(j).fill(0.0);
    }
    true
}

/// Alternates sparse coding and dictionary updates until the relative
/// objective decrease falls below `objective_tolerance` or
/// `max_outer_iters` is reached. Deterministic for a fixed config.
pub fn fit(q: &GramMatrix, config: &FitConfig) -> Result<FitResult, DictError> {
    let n = q.n();
    config.validate(n)?;

    let init = init_atoms(n, config.m, config.seed)?;
    let mut atoms = init.atoms().clone();
    let mut codes = DMatrix::zeros(config.m, n);
    renormalize(q, &mut atoms, &mut codes);

    let dict = Dictionary { atoms: atoms.clone() };
    let w = SparseCodes { codes: codes.clone(), s_max: config.s_max };
    let mut obj_prev = objective(q, &dict, &w)?;
    let mut trace = vec![obj_prev];
    let mut iterations_run = 0;

    for iter in 1..=config.max_outer_iters {
        // One full alternation from the given atoms.
        let alternate = |start_atoms: &DMatrix<f64>,
                         prev_codes: &DMatrix<f64>|
         -> Result<(DMatrix<f64>, DMatrix<f64>, f64), DictError> {
            let a0 = Dictionary { atoms: start_atoms.clone() };
            let prev = SparseCodes { codes: prev_codes.clone(), s_max: config.s_max };
            let w_new = code_all_guarded(q, &a0, config.s_max, Some(&prev))?;
            let a_new = update_dictionary(q, &a0, &w_new, config.dict_update_iters)?;
            let mut atoms_new = a_new.atoms().clone();
            let mut codes_new = w_new.codes().clone();
            renormalize(q, &mut atoms_new, &mut codes_new);
            let obj = objective(
                q,
                &Dictionary { atoms: atoms_new.clone() },
                &SparseCodes { codes: codes_new.clone(), s_max: config.s_max },
            )?;
            Ok((atoms_new, codes_new, obj))
        };

        let mut proposal_atoms = atoms.clone();
        let mut proposal_codes = codes.clone();
        let reseeded = if iter > 1 {
            reseed_stale_atoms(q, &mut proposal_atoms, &mut proposal_codes)
        } else {
            false
        };

        let (mut atoms_new, mut codes_new, mut obj_new) =
            alternate(&proposal_atoms, &proposal_codes)?;
        if reseeded && obj_new > obj_prev + 1e-12 * (1.0 + obj_prev.abs()) {
            // The reseed did not pay off; redo the step from the old atoms.
            (atoms_new, codes_new, obj_new) = alternate(&atoms, &codes)?;
        }

        trace.push(obj_new);
        iterations_run = iter;
        let decrease = (obj_prev - obj_new) / obj_prev.abs().max(f64::MIN_POSITIVE);
        atoms = atoms_new;
        codes = codes_new;
        obj_prev = obj_new;
        if decrease < config.objective_tolerance {
            break;
        }
    }

    Ok(FitResult {
        dictionary: Dictionary { atoms },
        codes: SparseCodes { codes, s_max: config.s_max },
        objective_trace: trace,
        iterations_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelModel, KernelParams};
    use rand::Rng;

    fn wrap(values: DMatrix<f64>) -> GramMatrix {
        GramMatrix::from_dense(values, KernelModel::FunctionalVarifold, KernelParams::default())
    }

    /// Entrywise non-negative PSD matrix Q = BᵀB with B >= 0.
    fn random_psd(n: usize, seed: u64) -> GramMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0));
        wrap(b.transpose() * b)
    }

    /// Objective oracle: embed fibers as columns of an eigenvalue square root
    /// of Q and measure the Frobenius residual directly.
    fn embedding_objective(q: &GramMatrix, a: &Dictionary, w: &SparseCodes) -> f64 {
        let eig = q.values().clone().symmetric_eigen();
        let mut root = eig.eigenvectors.clone();
        for j in 0..root.ncols() {
            let scale = eig.eigenvalues[j].max(0.0).sqrt();
            for v in root.column_mut(j).iter_mut() {
                *v *= scale;
            }
        }
        let embedded = root.transpose(); // columns are fiber vectors
        let reconstruction = &embedded * a.atoms() * w.codes();
        0.5 * (&embedded - reconstruction).norm_squared()
    }

    #[test]
    fn objective_zero_codes_is_half_trace() {
        let q = random_psd(6, 1);
        let a = init_atoms(6, 3, 0).unwrap();
        let w = SparseCodes::from_matrix(DMatrix::zeros(3, 6), 1).unwrap();
        let got = objective(&q, &a, &w).unwrap();
        assert!((got - 0.5 * q.values().trace()).abs() < 1e-12);
    }

    #[test]
    fn objective_perfect_reconstruction_is_zero() {
        let q = wrap(DMatrix::identity(4, 4));
        let a = Dictionary::from_matrix(DMatrix::identity(4, 4)).unwrap();
        let w = SparseCodes::from_matrix(DMatrix::identity(4, 4), 1).unwrap();
        assert!(objective(&q, &a, &w).unwrap().abs() < 1e-12);
    }

    #[test]
    fn objective_matches_embedding_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let n = rng.gen_range(3..12);
            let m = rng.gen_range(1..=n.min(5));
            let q = random_psd(n, 100 + trial);
            let a_raw = DMatrix::from_fn(n, m, |_, _| rng.gen_range(0.01..1.0));
            let a = Dictionary::from_matrix(a_raw).unwrap();
            let mut w_raw = DMatrix::zeros(m, n);
            for i in 0..n {
                let j = rng.gen_range(0..m);
                w_raw[(j, i)] = rng.gen_range(0.0..2.0);
            }
            let w = SparseCodes::from_matrix(w_raw, 1).unwrap();
            let fast = objective(&q, &a, &w).unwrap();
            let slow = embedding_objective(&q, &a, &w);
            assert!(
                (fast - slow).abs() <= 1e-8 * slow.abs().max(1.0),
                "trial {trial}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn objective_rejects_bad_dimensions() {
        let q = random_psd(4, 2);
        let a = init_atoms(5, 2, 0).unwrap();
        let w = SparseCodes::from_matrix(DMatrix::zeros(2, 4), 1).unwrap();
        assert!(matches!(
            objective(&q, &a, &w),
            Err(DictError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn init_atoms_permutation_when_square() {
        let a = init_atoms(5, 5, 3).unwrap();
        let sums_ok = (0..5).all(|j| (a.atoms().column(j).sum() - 1.0).abs() < 1e-15);
        assert!(sums_ok);
        let row_sums_ok = (0..5).all(|i| (a.atoms().row(i).sum() - 1.0).abs() < 1e-15);
        assert!(row_sums_ok);
    }

    #[test]
    fn init_atoms_deterministic_distinct() {
        let a = init_atoms(100, 10, 8).unwrap();
        let b = init_atoms(100, 10, 8).unwrap();
        assert_eq!(a.atoms(), b.atoms());
        let mut seen = std::collections::HashSet::new();
        for j in 0..10 {
            let col = a.atoms().column(j);
            assert_eq!(col.iter().filter(|&&v| v != 0.0).count(), 1);
            let hot = col.iter().position(|&v| v == 1.0).unwrap();
            assert!(seen.insert(hot), "index {hot} reused");
        }
        assert!(matches!(
            init_atoms(3, 4, 0),
            Err(DictError::MoreAtomsThanFibers { .. })
        ));
    }

    #[test]
    fn sparse_code_own_atom() {
        // Fiber 1 is atom 0 with unit norm; s_max = 1 must give weight 1.
        let q = wrap(DMatrix::identity(3, 3));
        let mut atoms = DMatrix::zeros(3, 2);
        atoms[(1, 0)] = 1.0;
        atoms[(2, 1)] = 1.0;
        let a = Dictionary::from_matrix(atoms).unwrap();
        let w = sparse_code_one(&q, &a, 1, 1).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert_eq!(w[1], 0.0);
    }

    #[test]
    fn sparse_code_no_positive_correlation() {
        // Q(i,:)A all zero for fiber 0 against atoms on other fibers.
        let q = wrap(DMatrix::identity(3, 3));
        let mut atoms = DMatrix::zeros(3, 2);
        atoms[(1, 0)] = 1.0;
        atoms[(2, 1)] = 1.0;
        let a = Dictionary::from_matrix(atoms).unwrap();
        let w = sparse_code_one(&q, &a, 0, 2).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sparse_code_matches_independent_greedy_oracle() {
        // Oracle: same greedy rule, separately implemented with exhaustive
        // NNLS over the sign patterns of the support.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..50 {
            let n = rng.gen_range(4..10);
            let m = rng.gen_range(2..=6);
            let s_max = rng.gen_range(1..=2usize);
            let q = random_psd(n, 500 + trial);
            let a_raw = DMatrix::from_fn(n, m, |_, _| rng.gen_range(0.0..1.0));
            let a = Dictionary::from_matrix(a_raw).unwrap();
            let i = rng.gen_range(0..n);
            let got = sparse_code_one(&q, &a, i, s_max).unwrap();

            let qa = q.values() * a.atoms();
            let g = a.atoms().transpose() * &qa;
            let c = qa.row(i).transpose();
            let want = oracle_greedy(&g, &c, s_max);
            for j in 0..m {
                assert!(
                    (got[j] - want[j]).abs() <= 1e-8 * want[j].abs().max(1.0),
                    "trial {trial} atom {j}: {} vs {}",
                    got[j],
                    want[j]
                );
            }
        }
    }

    /// Independent greedy: identical selection rule, NNLS solved by
    /// enumerating active-set sign patterns (supports are tiny).
    fn oracle_greedy(g: &DMatrix<f64>, c: &DVector<f64>, s_max: usize) -> DVector<f64> {
        let m = g.nrows();
        let mut w = DVector::zeros(m);
        let mut support: Vec<usize> = Vec::new();
        while support.len() < s_max.min(m) {
            let residual = c - g * &w;
            let mut best: Option<(usize, f64)> = None;
            for j in 0..m {
                if support.contains(&j) {
                    continue;
                }
                if best.is_none_or(|(_, v)| residual[j] > v) {
                    best = Some((j, residual[j]));
                }
            }
            let Some((j, corr)) = best else { break };
            if corr <= 1e-12 {
                break;
            }
            support.push(j);
            let sol = oracle_nnls(g, c, &support);
            w.fill(0.0);
            for (&j, &v) in support.iter().zip(&sol) {
                w[j] = v;
            }
        }
        w
    }

    /// NNLS by brute force over all subsets of the support that stay
    /// strictly positive in the unconstrained sub-solve.
    fn oracle_nnls(g: &DMatrix<f64>, c: &DVector<f64>, support: &[usize]) -> Vec<f64> {
        let k = support.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0..(1u32 << k) {
            let active: Vec<usize> = (0..k).filter(|&b| mask & (1 << b) != 0).collect();
            let p = active.len();
            let mut candidate = vec![0.0; k];
            if p > 0 {
                let gp = DMatrix::from_fn(p, p, |r, col| {
                    g[(support[active[r]], support[active[col]])]
                });
                let cp = DVector::from_fn(p, |r, _| c[support[active[r]]]);
                let Some(sol) = gp.lu().solve(&cp) else { continue };
                if sol.iter().any(|&v| v < 0.0) {
                    continue;
                }
                for (slot, &b) in active.iter().enumerate() {
                    candidate[b] = sol[slot];
                }
            }
            let x = DVector::from_vec(
                (0..k).map(|b| candidate[b]).collect::<Vec<f64>>(),
            );
            let gs = DMatrix::from_fn(k, k, |r, col| g[(support[r], support[col])]);
            let cs = DVector::from_fn(k, |r, _| c[support[r]]);
            let value = 0.5 * (&gs * &x).dot(&x) - cs.dot(&x);
            if best.as_ref().is_none_or(|(v, _)| value < *v) {
                best = Some((value, candidate));
            }
        }
        best.map(|(_, x)| x).unwrap_or_else(|| vec![0.0; k])
    }

    #[test]
    fn sparse_code_all_permutation_equivariant() {
        let q = random_psd(6, 9);
        let a = init_atoms(6, 3, 1).unwrap();
        let w = sparse_code_all(&q, &a, 2).unwrap();
        // Permute fibers: rows/cols of Q and rows of A move together.
        let perm = [4, 2, 0, 5, 1, 3];
        let qp = {
            let mut vals = DMatrix::zeros(6, 6);
            for (r, &pr) in perm.iter().enumerate() {
                for (c, &pc) in perm.iter().enumerate() {
                    vals[(r, c)] = q.get(pr, pc);
                }
            }
            wrap(vals)
        };
        let mut ap = DMatrix::zeros(6, 3);
        for (r, &pr) in perm.iter().enumerate() {
            for j in 0..3 {
                ap[(r, j)] = a.atoms()[(pr, j)];
            }
        }
        let wp = sparse_code_all(&qp, &Dictionary::from_matrix(ap).unwrap(), 2).unwrap();
        for (i, &pi) in perm.iter().enumerate() {
            for j in 0..3 {
                let x = wp.codes()[(j, i)];
                let y = w.codes()[(j, pi)];
                assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn sparse_code_never_worse_than_zero() {
        for seed in 0..5 {
            let q = random_psd(8, 200 + seed);
            let a = init_atoms(8, 4, seed).unwrap();
            let w = sparse_code_all(&q, &a, 2).unwrap();
            let zero = SparseCodes::from_matrix(DMatrix::zeros(4, 8), 2).unwrap();
            let with_codes = objective(&q, &a, &w).unwrap();
            let without = objective(&q, &a, &zero).unwrap();
            assert!(with_codes <= without + 1e-10);
        }
    }

    #[test]
    fn identical_fibers_single_atom_equal_columns() {
        let q = wrap(DMatrix::from_element(4, 4, 2.0));
        let mut atoms = DMatrix::zeros(4, 1);
        atoms[(0, 0)] = 1.0;
        let a = Dictionary::from_matrix(atoms).unwrap();
        let w = sparse_code_all(&q, &a, 1).unwrap();
        for i in 1..4 {
            assert_eq!(w.codes()[(0, i)], w.codes()[(0, 0)]);
        }
    }

    #[test]
    fn update_identity_in_one_step() {
        let q = wrap(DMatrix::identity(3, 3));
        let w = SparseCodes::from_matrix(DMatrix::identity(3, 3), 1).unwrap();
        let a0 = Dictionary::from_matrix(DMatrix::from_fn(3, 3, |_, _| 0.5)).unwrap();
        let a1 = update_dictionary(&q, &a0, &w, 1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (a1.atoms()[(i, j)] - want).abs() < 1e-9,
                    "({i},{j}) = {}",
                    a1.atoms()[(i, j)]
                );
            }
        }
    }

    #[test]
    fn update_dead_atom_column_decays() {
        let q = random_psd(4, 31);
        let mut w_raw = DMatrix::zeros(2, 4);
        for i in 0..4 {
            w_raw[(0, i)] = 1.0; // atom 1 has an all-zero row
        }
        let w = SparseCodes::from_matrix(w_raw, 1).unwrap();
        let a0 = Dictionary::from_matrix(DMatrix::from_element(4, 2, 0.7)).unwrap();
        let a1 = update_dictionary(&q, &a0, &w, 1).unwrap();
        assert!(a1.atoms().column(1).iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn update_monotone_over_twenty_steps() {
        let q = random_psd(8, 41);
        // Strictly positive start so updates can move every entry.
        let mut a = Dictionary::from_matrix(DMatrix::from_fn(8, 3, |i, j| {
            0.2 + 0.1 * ((i + 2 * j) % 5) as f64
        }))
        .unwrap();
        let w = sparse_code_all(&q, &a, 2).unwrap();
        let mut prev = objective(&q, &a, &w).unwrap();
        for _ in 0..20 {
            a = update_dictionary(&q, &a, &w, 1).unwrap();
            let next = objective(&q, &a, &w).unwrap();
            assert!(next <= prev + 1e-9 * (1.0 + prev.abs()));
            prev = next;
        }
    }

    #[test]
    fn fit_identity_reaches_zero_in_one_iteration() {
        let q = wrap(DMatrix::identity(5, 5));
        let config = FitConfig {
            m: 5,
            s_max: 1,
            ..FitConfig::default()
        };
        let result = fit(&q, &config).unwrap();
        assert!(result.objective_trace[1].abs() < 1e-12);
    }

    #[test]
    fn fit_deterministic() {
        let q = random_psd(10, 51);
        let config = FitConfig {
            m: 3,
            s_max: 2,
            seed: 4,
            ..FitConfig::default()
        };
        let r1 = fit(&q, &config).unwrap();
        let r2 = fit(&q, &config).unwrap();
        assert_eq!(r1.dictionary.atoms(), r2.dictionary.atoms());
        assert_eq!(r1.codes.codes(), r2.codes.codes());
        assert_eq!(r1.objective_trace, r2.objective_trace);
        assert_eq!(r1.iterations_run, r2.iterations_run);
    }

    #[test]
    fn fit_trace_monotone_on_random_psd() {
        for seed in 0..6 {
            let q = random_psd(12, 900 + seed);
            let config = FitConfig {
                m: 4,
                s_max: 2,
                seed,
                ..FitConfig::default()
            };
            let result = fit(&q, &config).unwrap();
            let trace = &result.objective_trace;
            for t in 1..trace.len() {
                assert!(
                    trace[t] <= trace[t - 1] + 1e-9 * (1.0 + trace[t - 1].abs()),
                    "seed {seed} step {t}: {} -> {}",
                    trace[t - 1],
                    trace[t]
                );
            }
            // Non-negativity, sparsity, and unit atom norms hold on the way
            // out.
            assert!(result.dictionary.atoms().iter().all(|&v| v >= 0.0));
            assert!(result.codes.codes().iter().all(|&v| v >= 0.0));
            let qa = q.values() * result.dictionary.atoms();
            for j in 0..result.dictionary.m() {
                let norm_sq = result.dictionary.atoms().column(j).dot(&qa.column(j));
                assert!((norm_sq - 1.0).abs() < 1e-8, "atom {j} norm^2 {norm_sq}");
            }
            for i in 0..result.codes.n() {
                let nnz = result
                    .codes
                    .codes()
                    .column(i)
                    .iter()
                    .filter(|&&v| v != 0.0)
                    .count();
                assert!(nnz <= config.s_max);
            }
        }
    }

    #[test]
    fn fit_rejects_bad_config() {
        let q = random_psd(4, 3);
        let bad_m = FitConfig { m: 5, ..FitConfig::default() };
        assert!(matches!(
            fit(&q, &bad_m),
            Err(DictError::MoreAtomsThanFibers { .. })
        ));
        let bad_s = FitConfig { m: 2, s_max: 3, ..FitConfig::default() };
        assert!(matches!(fit(&q, &bad_s), Err(DictError::InvalidConfig(_))));
    }
}
