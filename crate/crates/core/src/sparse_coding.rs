//! Real-valued sparse coding: a covariance-form coordinate-descent LASSO and
//! mini-batch online dictionary learning built on top of it.
//!
//! All objectives use the convention `‖y − D·w‖₂² + λ‖w‖₁` (no factor ½), so
//! the soft-threshold level of a coordinate update is `λ/2`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand_distr::StandardNormal;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Atoms must be unit norm to within this tolerance.
pub const UNIT_NORM_TOL: f64 = 1e-8;

/// An `n_features × L` matrix with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Array2<f64>,
}

impl Dictionary {
    /// Wraps `atoms`, checking the unit-norm invariant.
    pub fn new(atoms: Array2<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Shape("dictionary must have at least one atom".into()));
        }
        for (j, col) in atoms.columns().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidArgument(format!(
                    "atom {j} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self { atoms })
    }

    /// Normalizes every column of `atoms` to unit length.
    pub fn from_unnormalized(mut atoms: Array2<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Shape("dictionary must have at least one atom".into()));
        }
        for (j, mut col) in atoms.columns_mut().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::Degenerate(format!("atom {j} has zero norm")));
            }
            col /= norm;
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &Array2<f64> {
        &self.atoms
    }

    pub fn into_atoms(self) -> Array2<f64> {
        self.atoms
    }

    pub fn n_features(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn gram(&self) -> Array2<f64> {
        self.atoms.t().dot(&self.atoms)
    }
}

/// Sparse codes `W` (`L × n_samples`) plus solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodeMatrix {
    codes: Array2<f64>,
    unconverged: Vec<usize>,
}

impl SparseCodeMatrix {
    pub fn new(codes: Array2<f64>) -> Self {
        Self {
            codes,
            unconverged: Vec::new(),
        }
    }

    pub fn zeros(n_atoms: usize, n_samples: usize) -> Self {
        Self::new(Array2::zeros((n_atoms, n_samples)))
    }

    pub fn codes(&self) -> &Array2<f64> {
        &self.codes
    }

    pub fn into_codes(self) -> Array2<f64> {
        self.codes
    }

    /// Columns whose solve hit the sweep limit before converging.
    pub fn unconverged_columns(&self) -> &[usize] {
        &self.unconverged
    }

    pub fn is_converged(&self) -> bool {
        self.unconverged.is_empty()
    }

    pub fn support_sizes(&self) -> Vec<usize> {
        self.codes
            .columns()
            .into_iter()
            .map(|c| c.iter().filter(|&&v| v != 0.0).count())
            .collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.codes.iter().map(|v| v.abs()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoParams {
    pub lambda: f64,
    /// Stop once the largest coefficient change in a full sweep is below this.
    pub tol: f64,
    /// Sweep budget per column.
    pub max_iter: usize,
}

impl LassoParams {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            tol: 1e-7,
            max_iter: 2_000,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "lasso tolerance and sweep budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[inline]
pub fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

/// Coordinate descent on one column given the Gram matrix `G = DᵀD` and the
/// correlations `c = Dᵀy`. `w` holds the warm start on entry and the solution
/// on exit. Returns whether the sweep-change criterion was met.
///
/// Columns of `D` need not be unit norm; atoms with `G_jj = 0` stay at zero.
fn cd_column(gram: ArrayView2<f64>, dty: ArrayView1<f64>, w: &mut [f64], p: &LassoParams) -> bool {
    let l = w.len();
    let thresh = 0.5 * p.lambda;
    // residual correlation r_j = d_jᵀ(y − D w)
    let mut corr = dty.to_owned();
    for (j, &wj) in w.iter().enumerate() {
        if wj != 0.0 {
            corr.scaled_add(-wj, &gram.row(j));
        }
    }
    let corr = corr.as_slice_mut().expect("contiguous");

    let update = |j: usize, w: &mut [f64], corr: &mut [f64]| -> f64 {
        let g = gram[[j, j]];
        if g <= 0.0 {
            w[j] = 0.0;
            return 0.0;
        }
        let old = w[j];
        let new = soft_threshold(corr[j] + g * old, thresh) / g;
        let delta = new - old;
        if delta != 0.0 {
            w[j] = new;
            let row = gram.row(j);
            for (c, &gij) in corr.iter_mut().zip(row.iter()) {
                *c -= delta * gij;
            }
        }
        delta.abs()
    };

    let mut sweeps = 0;
    let mut active: Vec<usize> = Vec::with_capacity(l);
    while sweeps < p.max_iter {
        let mut max_change = 0.0f64;
        for j in 0..l {
            max_change = max_change.max(update(j, w, corr));
        }
        sweeps += 1;
        if max_change < p.tol {
            return true;
        }
        // Iterate on the current support until it settles, then re-check
        // all coordinates with a full sweep.
        active.clear();
        active.extend((0..l).filter(|&j| w[j] != 0.0));
        while sweeps < p.max_iter {
            let mut change = 0.0f64;
            for &j in &active {
                change = change.max(update(j, w, corr));
            }
            sweeps += 1;
            if change < p.tol {
                break;
            }
        }
    }
    false
}

/// Lower Cholesky factor of `G_AA` for a growing and shrinking active set.
struct ActiveCholesky {
    /// row-major, `cap × cap`, only the leading `n × n` block is used
    l: Vec<f64>,
    cap: usize,
    n: usize,
}

impl ActiveCholesky {
    fn new(cap: usize) -> Self {
        Self {
            l: vec![0.0; cap * cap],
            cap,
            n: 0,
        }
    }

    /// Appends atom `j`. Fails when `j` is numerically dependent on the set.
    fn push(&mut self, gram: ArrayView2<f64>, active: &[usize], j: usize) -> bool {
        let n = self.n;
        if n == self.cap {
            return false;
        }
        let gjj = gram[[j, j]];
        let mut sq = 0.0;
        for r in 0..n {
            let mut v = gram[[active[r], j]];
            for c in 0..r {
                v -= self.l[r * self.cap + c] * self.l[n * self.cap + c];
            }
            v /= self.l[r * self.cap + r];
            self.l[n * self.cap + r] = v;
            sq += v * v;
        }
        let d2 = gjj - sq;
        if !(d2 > 1e-10 * gjj) {
            return false;
        }
        self.l[n * self.cap + n] = d2.sqrt();
        self.n += 1;
        true
    }

    /// Drops position `k`, restoring triangular form with Givens rotations.
    fn remove(&mut self, k: usize) {
        let (n, cap) = (self.n, self.cap);
        for r in k..n - 1 {
            for c in 0..=r + 1 {
                self.l[r * cap + c] = self.l[(r + 1) * cap + c];
            }
        }
        for r in k..n - 1 {
            let a = self.l[r * cap + r];
            let b = self.l[r * cap + r + 1];
            let h = a.hypot(b);
            let (cs, sn) = (a / h, b / h);
            for i in r..n - 1 {
                let x = self.l[i * cap + r];
                let y = self.l[i * cap + r + 1];
                self.l[i * cap + r] = cs * x + sn * y;
                self.l[i * cap + r + 1] = -sn * x + cs * y;
            }
        }
        self.n -= 1;
    }

    /// Solves `L Lᵀ x = b` in place.
    fn solve(&self, b: &mut [f64]) {
        let (n, cap) = (self.n, self.cap);
        for r in 0..n {
            let mut v = b[r];
            for c in 0..r {
                v -= self.l[r * cap + c] * b[c];
            }
            b[r] = v / self.l[r * cap + r];
        }
        for r in (0..n).rev() {
            let mut v = b[r];
            for c in r + 1..n {
                v -= self.l[c * cap + r] * b[c];
            }
            b[r] = v / self.l[r * cap + r];
        }
    }
}

/// LARS homotopy for one column, from `w = 0` down to threshold `λ/2`.
///
/// Atoms that are numerically dependent on the active set are skipped, so
/// the result can miss the optimum on degenerate dictionaries; callers
/// polish it with [`cd_column`].
fn lars_column(gram: ArrayView2<f64>, dty: ArrayView1<f64>, w: &mut [f64], thresh: f64, max_steps: usize) {
    let l = w.len();
    w.iter_mut().for_each(|v| *v = 0.0);
    let mut corr: Vec<f64> = dty.to_vec();
    let mut skip = vec![false; l];
    let mut in_set = vec![false; l];
    let mut active: Vec<usize> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    let mut chol = ActiveCholesky::new(l.min(gram.nrows()).max(1));
    let mut dir = vec![0.0; l];
    let mut a = vec![0.0; l];
    let eps = 1e-12;

    let argmax = |corr: &[f64], skip: &[bool], in_set: &[bool]| {
        (0..l)
            .filter(|&j| !skip[j] && !in_set[j] && gram[[j, j]] > 0.0)
            .map(|j| (j, corr[j].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
    };
    let Some((j0, mut c_max)) = argmax(&corr, &skip, &in_set) else {
        return;
    };
    if c_max <= thresh {
        return;
    }
    let mut entering = Some(j0);
    for _ in 0..max_steps {
        if let Some(j) = entering.take() {
            if chol.push(gram, &active, j) {
                active.push(j);
                signs.push(corr[j].signum());
                in_set[j] = true;
            } else {
                skip[j] = true;
            }
        }
        if active.is_empty() {
            return;
        }
        let s = active.len();
        dir[..s].copy_from_slice(&signs);
        chol.solve(&mut dir[..s]);
        // a = G[:, A]·dir: rate at which correlations fall per unit step
        a.iter_mut().for_each(|v| *v = 0.0);
        for (&j, &u) in active.iter().zip(&dir[..s]) {
            for (av, &g) in a.iter_mut().zip(gram.row(j).iter()) {
                *av += u * g;
            }
        }
        let mut gamma = c_max - thresh;
        let mut event: Option<(bool, usize)> = None;
        for j in 0..l {
            if in_set[j] || skip[j] || gram[[j, j]] <= 0.0 {
                continue;
            }
            for (num, den) in [(c_max - corr[j], 1.0 - a[j]), (c_max + corr[j], 1.0 + a[j])] {
                if den > eps {
                    let g = num / den;
                    if g > eps && g < gamma {
                        gamma = g;
                        event = Some((true, j));
                    }
                }
            }
        }
        for (pos, &j) in active.iter().enumerate() {
            let u = dir[pos];
            if u != 0.0 {
                let g = -w[j] / u;
                if g > eps && g < gamma {
                    gamma = g;
                    event = Some((false, pos));
                }
            }
        }
        for (pos, &j) in active.iter().enumerate() {
            w[j] += gamma * dir[pos];
        }
        for (c, &av) in corr.iter_mut().zip(&a) {
            *c -= gamma * av;
        }
        c_max -= gamma;
        match event {
            None => return,
            Some((true, j)) => entering = Some(j),
            Some((false, pos)) => {
                let j = active.remove(pos);
                signs.remove(pos);
                chol.remove(pos);
                in_set[j] = false;
                w[j] = 0.0;
            }
        }
    }
}

/// LASSO solver that caches `DᵀD` for repeated solves against one matrix.
///
/// The matrix does not need unit-norm columns, which lets the same solver
/// code against a row block of a dictionary.
#[derive(Debug, Clone)]
pub struct LassoSolver {
    matrix: Array2<f64>,
    gram: Array2<f64>,
}

impl LassoSolver {
    pub fn new(matrix: Array2<f64>) -> Self {
        let gram = matrix.t().dot(&matrix);
        Self { matrix, gram }
    }

    pub fn from_dictionary(dict: &Dictionary) -> Self {
        Self::new(dict.atoms().clone())
    }

    /// Builds a solver from a precomputed Gram matrix.
    pub fn with_gram(matrix: Array2<f64>, gram: Array2<f64>) -> Result<Self> {
        let l = matrix.ncols();
        if gram.dim() != (l, l) {
            return Err(Error::Shape(format!(
                "gram is {:?}, expected {l}x{l}",
                gram.dim()
            )));
        }
        Ok(Self { matrix, gram })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn n_atoms(&self) -> usize {
        self.matrix.ncols()
    }

    /// Solves every column of `targets` from a zero start.
    pub fn solve(&self, targets: ArrayView2<f64>, params: &LassoParams) -> Result<SparseCodeMatrix> {
        self.solve_warm(targets, None, params)
    }

    /// Solves every column of `targets`, starting from `warm` when given.
    pub fn solve_warm(
        &self,
        targets: ArrayView2<f64>,
        warm: Option<&Array2<f64>>,
        params: &LassoParams,
    ) -> Result<SparseCodeMatrix> {
        if targets.nrows() != self.matrix.nrows() {
            return Err(Error::Shape(format!(
                "targets have {} rows, dictionary has {} features",
                targets.nrows(),
                self.matrix.nrows()
            )));
        }
        let dty = self.matrix.t().dot(&targets);
        self.solve_correlations(&dty, warm, params)
    }

    /// Solves from precomputed correlations `Dᵀ·Y` (`L × n_samples`).
    pub fn solve_correlations(
        &self,
        dty: &Array2<f64>,
        warm: Option<&Array2<f64>>,
        params: &LassoParams,
    ) -> Result<SparseCodeMatrix> {
        params.validate()?;
        let l = self.n_atoms();
        if dty.nrows() != l {
            return Err(Error::Shape(format!(
                "correlations have {} rows, expected {l}",
                dty.nrows()
            )));
        }
        let n = dty.ncols();
        let mut codes = match warm {
            Some(w0) if w0.dim() == (l, n) => w0.clone(),
            Some(w0) => {
                return Err(Error::Shape(format!(
                    "warm start is {:?}, expected {l}x{n}",
                    w0.dim()
                )))
            }
            None => Array2::zeros((l, n)),
        };
        let mut unconverged = Vec::new();
        let mut w = vec![0.0; l];
        for k in 0..n {
            for (dst, src) in w.iter_mut().zip(codes.column(k).iter()) {
                *dst = *src;
            }
            let cold = w.iter().all(|&v| v == 0.0);
            if cold {
                lars_column(self.gram.view(), dty.column(k), &mut w, 0.5 * params.lambda, 4 * l);
            }
            if !cd_column(self.gram.view(), dty.column(k), &mut w, params) {
                unconverged.push(k);
            }
            codes
                .column_mut(k)
                .assign(&ArrayView1::from(&w[..]));
        }
        Ok(SparseCodeMatrix { codes, unconverged })
    }

    /// Objective `‖Y − D·W‖_F² + λ‖W‖₁` summed over columns.
    pub fn objective(&self, targets: ArrayView2<f64>, codes: &Array2<f64>, lambda: f64) -> f64 {
        lasso_objective(self.matrix.view(), targets, codes.view(), lambda)
    }
}

/// `‖Y − D·W‖_F² + λ‖W‖₁`.
pub fn lasso_objective(
    matrix: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    codes: ArrayView2<f64>,
    lambda: f64,
) -> f64 {
    let resid = &targets - &matrix.dot(&codes);
    resid.iter().map(|v| v * v).sum::<f64>() + lambda * codes.iter().map(|v| v.abs()).sum::<f64>()
}

/// Column-wise LASSO `min_W ‖Y − D·W‖₂² + λ‖W‖₁` by cyclic coordinate descent.
///
/// Columns that exhaust `max_iter` sweeps keep their last iterate and are
/// listed in [`SparseCodeMatrix::unconverged_columns`].
pub fn lasso(
    dict: &Dictionary,
    targets: ArrayView2<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SparseCodeMatrix> {
    let params = LassoParams {
        lambda,
        tol,
        max_iter,
    };
    LassoSolver::from_dictionary(dict).solve(targets, &params)
}

/// Squared Frobenius norm of `samples − D·W`.
pub fn reconstruction_error(
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
    samples: ArrayView2<f64>,
) -> Result<f64> {
    reconstruction_error_matrix(dict.atoms().view(), codes.codes().view(), samples)
}

pub(crate) fn reconstruction_error_matrix(
    matrix: ArrayView2<f64>,
    codes: ArrayView2<f64>,
    samples: ArrayView2<f64>,
) -> Result<f64> {
    if matrix.ncols() != codes.nrows()
        || matrix.nrows() != samples.nrows()
        || codes.ncols() != samples.ncols()
    {
        return Err(Error::Shape(format!(
            "D is {:?}, W is {:?}, samples are {:?}",
            matrix.dim(),
            codes.dim(),
            samples.dim()
        )));
    }
    let resid = &samples - &matrix.dot(&codes);
    Ok(resid.iter().map(|v| v * v).sum())
}

/// Settings for [`odl_train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdlParams {
    pub n_atoms: usize,
    pub lambda: f64,
    pub n_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Per-batch LASSO tolerance and sweep budget.
    pub lasso_tol: f64,
    pub lasso_max_iter: usize,
}

impl OdlParams {
    pub fn new(n_atoms: usize, lambda: f64, n_iters: usize, seed: u64) -> Self {
        Self {
            n_atoms,
            lambda,
            n_iters,
            batch_size: 256,
            seed,
            lasso_tol: 1e-6,
            lasso_max_iter: 500,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }
}

/// Per-iteration record of the ODL surrogate.
///
/// `surrogate_before[t]` and `surrogate_after[t]` evaluate the accumulated
/// surrogate `(1/n_seen)·(Σ‖y_i‖² − 2·Tr(DᵀB) + Tr(DᵀD·A) + λ·Σ‖w_i‖₁)` at the
/// dictionary before and after the update of iteration `t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OdlLog {
    /// Mean LASSO objective of each fresh batch under the dictionary it
    /// meets, before that batch updates anything.
    pub batch_objective: Vec<f64>,
    pub surrogate_before: Vec<f64>,
    pub surrogate_after: Vec<f64>,
    pub replaced_atoms: usize,
}

impl OdlLog {
    /// Largest increase of the surrogate across any single dictionary update.
    pub fn max_update_increase(&self) -> f64 {
        self.surrogate_before
            .iter()
            .zip(&self.surrogate_after)
            .map(|(b, a)| a - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct OdlOutcome {
    pub dictionary: Dictionary,
    pub log: OdlLog,
}

fn column_norm(col: ArrayView1<f64>) -> f64 {
    col.dot(&col).sqrt()
}

fn initial_atoms(samples: ArrayView2<f64>, n_atoms: usize, rng: &mut impl Rng) -> Array2<f64> {
    let usable: Vec<usize> = (0..samples.ncols())
        .filter(|&k| column_norm(samples.column(k)) > 0.0)
        .collect();
    let n_feat = samples.nrows();
    let mut atoms = Array2::zeros((n_feat, n_atoms));
    let take = usable.len().min(n_atoms);
    let picks = index::sample(rng, usable.len(), take);
    for (j, pick) in picks.iter().enumerate() {
        let col = samples.column(usable[pick]);
        atoms.column_mut(j).assign(&(&col / column_norm(col)));
    }
    // Fewer usable samples than atoms: pad with random directions.
    for j in take..n_atoms {
        let mut v: Array1<f64> = Array1::from_shape_simple_fn(n_feat, || rng.sample(StandardNormal));
        let norm = column_norm(v.view());
        v /= norm;
        atoms.column_mut(j).assign(&v);
    }
    atoms
}

/// Online dictionary learning with mini-batches.
///
/// Each iteration sparse-codes one mini-batch against the current dictionary,
/// folds the codes into the sufficient statistics `A += W·Wᵀ` and
/// `B += Y·Wᵀ`, then runs one pass of block coordinate descent over the atoms
/// with renormalization to the unit sphere. Atoms that have never been used
/// are re-seeded from the worst reconstructed column of the batch.
pub fn odl_train(samples: ArrayView2<f64>, params: &OdlParams) -> Result<OdlOutcome> {
    if params.n_atoms == 0 || params.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "atom count and batch size must be positive".into(),
        ));
    }
    if samples.ncols() == 0 || samples.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("training samples are all zero".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("training samples contain non-finite values".into()));
    }
    let lasso_params = LassoParams {
        lambda: params.lambda,
        tol: params.lasso_tol,
        max_iter: params.lasso_max_iter,
    };
    lasso_params.validate()?;

    let mut rng = seeded_rng(params.seed);
    let n_feat = samples.nrows();
    let l = params.n_atoms;
    let n_samples = samples.ncols();
    let mut d = initial_atoms(samples, l, &mut rng);
    let mut log = OdlLog::default();
    if params.n_iters == 0 {
        return Ok(OdlOutcome {
            dictionary: Dictionary::new(d)?,
            log,
        });
    }

    let mut a = Array2::<f64>::zeros((l, l));
    let mut b = Array2::<f64>::zeros((n_feat, l));
    let mut energy = 0.0;
    let mut l1 = 0.0;
    let mut n_seen = 0usize;

    let batch = params.batch_size.min(n_samples);
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut gram = d.t().dot(&d);

    for _ in 0..params.n_iters {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == n_samples {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let y = samples.select(Axis(1), &idx);

        let solver = LassoSolver::with_gram(d.clone(), gram.clone())?;
        let w = solver.solve(y.view(), &lasso_params)?.into_codes();

        log.batch_objective.push(solver.objective(y.view(), &w, params.lambda) / batch as f64);
        a += &w.dot(&w.t());
        b += &y.dot(&w.t());
        energy += y.iter().map(|v| v * v).sum::<f64>();
        l1 += w.iter().map(|v| v.abs()).sum::<f64>();
        n_seen += batch;

        let surrogate = |d: &Array2<f64>, gram: &Array2<f64>| {
            let quad: f64 = (gram * &a).sum();
            let lin: f64 = (d * &b).sum();
            (energy - 2.0 * lin + quad + params.lambda * l1) / n_seen as f64
        };
        log.surrogate_before.push(surrogate(&d, &gram));

        // Candidates for re-seeding atoms that have never been used.
        let mut worst: Option<Vec<usize>> = None;
        for j in 0..l {
            let ajj = a[[j, j]];
            if ajj <= 0.0 {
                let order = worst.get_or_insert_with(|| {
                    let resid = &y - &d.dot(&w);
                    let mut errs: Vec<(usize, f64)> = resid
                        .columns()
                        .into_iter()
                        .map(|c| c.dot(&c))
                        .enumerate()
                        .collect();
                    // ascending, so pop() yields the worst column
                    errs.sort_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)));
                    errs.into_iter()
                        .filter(|(_, e)| *e > 0.0)
                        .map(|(k, _)| k)
                        .collect()
                });
                if let Some(k) = order.pop() {
                    let col = y.column(k);
                    d.column_mut(j).assign(&(&col / column_norm(col)));
                    log.replaced_atoms += 1;
                }
                continue;
            }
            // c = B_j − D·A_j + A_jj·d_j; the sphere-constrained minimizer of
            // the surrogate in d_j is c/‖c‖.
            let mut u = b.column(j).to_owned();
            u -= &d.dot(&a.column(j));
            u.scaled_add(ajj, &d.column(j));
            let norm = column_norm(u.view());
            if norm > 0.0 && norm.is_finite() {
                u /= norm;
                d.column_mut(j).assign(&u);
            }
        }
        gram = d.t().dot(&d);
        log.surrogate_after.push(surrogate(&d, &gram));
    }

    // Renormalize once more to wash out rounding drift.
    for mut col in d.axis_iter_mut(Axis(1)) {
        let norm = column_norm(col.view());
        col /= norm;
    }
    Ok(OdlOutcome {
        dictionary: Dictionary::new(d)?,
        log,
    })
}

/// Samples a `rows × cols` Gaussian matrix with unit-norm columns.
pub fn random_dictionary(rows: usize, cols: usize, seed: u64) -> Result<Dictionary> {
    let mut rng = seeded_rng(seed);
    let atoms = Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal));
    Dictionary::from_unnormalized(atoms)
}

/// Splits the rows of a dictionary at `split` (top block has `split` rows).
pub fn split_rows(atoms: &Array2<f64>, split: usize) -> (Array2<f64>, Array2<f64>) {
    (
        atoms.slice(s![..split, ..]).to_owned(),
        atoms.slice(s![split.., ..]).to_owned(),
    )
}
