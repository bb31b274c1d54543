//! Coupled dictionary pairs `(D_l, D_h)` sharing one sparse code.
//!
//! Complex snapshots become real columns of doubled length (real parts over
//! imaginary parts), so one snapshot keeps one code. Training stacks the
//! normalized low and high signals as `[Y_l; Y_h]` and learns a single
//! unit-norm dictionary `[D_l; D_h]` on them; the pair is its row blocks.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radar_model::{synth_coupled, ArrayConfig, ReceivedSignal, Snr, TargetScene};
use crate::rng::{derive_seed, seeded_rng};
use crate::sparse_coding::{
    odl_train, reconstruction_error_matrix, Dictionary, LassoParams, LassoSolver, OdlLog, OdlParams,
};

/// A closed angle interval `[lo, hi]` in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleInterval {
    lo: f64,
    hi: f64,
}

impl AngleInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi && hi <= 90.0) {
            return Err(Error::InvalidArgument(format!(
                "angle interval {lo}:{hi} must satisfy 0 <= lo < hi <= 90"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, angle: f64) -> bool {
        self.lo <= angle && angle <= self.hi
    }
}

impl fmt::Display for AngleInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

impl FromStr for AngleInterval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("expected lo:hi, got '{s}'")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad angle '{v}' in '{s}'")))
        };
        AngleInterval::new(parse(lo)?, parse(hi)?)
    }
}

impl Serialize for AngleInterval {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AngleInterval {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Real parts stacked above imaginary parts, per column.
pub fn complex_to_real(data: &Array2<Complex64>) -> Array2<f64> {
    let rows = data.nrows();
    let mut out = Array2::zeros((2 * rows, data.ncols()));
    out.slice_mut(s![..rows, ..]).assign(&data.mapv(|z| z.re));
    out.slice_mut(s![rows.., ..]).assign(&data.mapv(|z| z.im));
    out
}

/// Inverse of [`complex_to_real`].
pub fn real_to_complex(data: ArrayView2<f64>) -> Result<Array2<Complex64>> {
    if !data.nrows().is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "real stacking needs an even row count, got {}",
            data.nrows()
        )));
    }
    let rows = data.nrows() / 2;
    let re = data.slice(s![..rows, ..]);
    let im = data.slice(s![rows.., ..]);
    Ok(Array2::from_shape_fn((rows, data.ncols()), |(i, k)| {
        Complex64::new(re[[i, k]], im[[i, k]])
    }))
}

pub fn complex_to_real_samples(signal: &ReceivedSignal) -> Array2<f64> {
    complex_to_real(signal.data())
}

/// Per-column mean and scale taken from the low-array signal.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    col_means: Vec<f64>,
    col_scales: Vec<f64>,
}

impl NormalizationStats {
    /// Mean of each column, and the Euclidean norm of the column after the
    /// mean is removed.
    pub fn from_low(y_low: ArrayView2<f64>) -> Result<Self> {
        let n = y_low.nrows() as f64;
        if y_low.nrows() == 0 {
            return Err(Error::Shape("empty columns".into()));
        }
        let mut col_means = Vec::with_capacity(y_low.ncols());
        let mut col_scales = Vec::with_capacity(y_low.ncols());
        for (k, col) in y_low.columns().into_iter().enumerate() {
            let mean = col.sum() / n;
            let scale = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::Degenerate(format!(
                    "column {k} has zero norm after mean removal"
                )));
            }
            col_means.push(mean);
            col_scales.push(scale);
        }
        Ok(Self {
            col_means,
            col_scales,
        })
    }

    pub fn col_means(&self) -> &[f64] {
        &self.col_means
    }

    pub fn col_scales(&self) -> &[f64] {
        &self.col_scales
    }

    pub fn n_columns(&self) -> usize {
        self.col_means.len()
    }

    fn check(&self, m: ArrayView2<f64>) -> Result<()> {
        if m.ncols() != self.n_columns() {
            return Err(Error::Shape(format!(
                "matrix has {} columns, statistics cover {}",
                m.ncols(),
                self.n_columns()
            )));
        }
        Ok(())
    }

    /// `(y − mean) / scale`, column by column.
    pub fn normalize(&self, m: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(m)?;
        let mut out = m.to_owned();
        for ((mut col, &mean), &scale) in out
            .axis_iter_mut(Axis(1))
            .zip(&self.col_means)
            .zip(&self.col_scales)
        {
            col.mapv_inplace(|v| (v - mean) / scale);
        }
        Ok(out)
    }

    /// `y · scale + mean`, column by column.
    pub fn denormalize(&self, m: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(m)?;
        let mut out = m.to_owned();
        for ((mut col, &mean), &scale) in out
            .axis_iter_mut(Axis(1))
            .zip(&self.col_means)
            .zip(&self.col_scales)
        {
            col.mapv_inplace(|v| v * scale + mean);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub low: Array2<f64>,
    pub high: Option<Array2<f64>>,
    pub stats: NormalizationStats,
}

/// Removes the column means of `y_low` and scales its columns to unit norm;
/// `y_high`, when given, goes through the same low-derived statistics.
pub fn preprocess(y_low: ArrayView2<f64>, y_high: Option<ArrayView2<f64>>) -> Result<Preprocessed> {
    if let Some(h) = y_high {
        if h.ncols() != y_low.ncols() {
            return Err(Error::Shape(format!(
                "low has {} columns, high has {}",
                y_low.ncols(),
                h.ncols()
            )));
        }
    }
    let stats = NormalizationStats::from_low(y_low)?;
    let low = stats.normalize(y_low)?;
    let high = y_high.map(|h| stats.normalize(h)).transpose()?;
    Ok(Preprocessed { low, high, stats })
}

/// A coupled pair stored as one stacked unit-norm dictionary `[D_l; D_h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryPair {
    stacked: Dictionary,
    grid: AngleInterval,
    lambda_train: f64,
    low_config: ArrayConfig,
    high_config: ArrayConfig,
    n_iters: usize,
    training_error: f64,
    seed: u64,
}

impl DictionaryPair {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        stacked: Dictionary,
        grid: AngleInterval,
        lambda_train: f64,
        low_config: ArrayConfig,
        high_config: ArrayConfig,
        n_iters: usize,
        training_error: f64,
        seed: u64,
    ) -> Result<Self> {
        let expect = 2 * (low_config.virtual_size() + high_config.virtual_size());
        if stacked.n_features() != expect {
            return Err(Error::Shape(format!(
                "stacked dictionary has {} rows, {} -> {} needs {expect}",
                stacked.n_features(),
                low_config,
                high_config
            )));
        }
        Ok(Self {
            stacked,
            grid,
            lambda_train,
            low_config,
            high_config,
            n_iters,
            training_error,
            seed,
        })
    }

    pub fn stacked(&self) -> &Dictionary {
        &self.stacked
    }

    pub fn low_features(&self) -> usize {
        2 * self.low_config.virtual_size()
    }

    pub fn high_features(&self) -> usize {
        2 * self.high_config.virtual_size()
    }

    /// `D_l`: the top `2·M_l·N_l` rows.
    pub fn d_low(&self) -> ArrayView2<'_, f64> {
        self.stacked.atoms().slice(s![..self.low_features(), ..])
    }

    /// `D_h`: the bottom `2·M_h·N_h` rows.
    pub fn d_high(&self) -> ArrayView2<'_, f64> {
        self.stacked.atoms().slice(s![self.low_features().., ..])
    }

    pub fn n_atoms(&self) -> usize {
        self.stacked.n_atoms()
    }

    pub fn grid(&self) -> AngleInterval {
        self.grid
    }

    pub fn lambda_train(&self) -> f64 {
        self.lambda_train
    }

    pub fn low_config(&self) -> &ArrayConfig {
        &self.low_config
    }

    pub fn high_config(&self) -> &ArrayConfig {
        &self.high_config
    }

    pub fn n_iters(&self) -> usize {
        self.n_iters
    }

    /// Relative stacked reconstruction error `‖Ỹ − D·W‖_F² / ‖Ỹ‖_F²` on the
    /// training data.
    pub fn training_error(&self) -> f64 {
        self.training_error
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Knobs for [`train_coupled`] beyond the data itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledTrainParams {
    pub n_atoms: usize,
    pub lambda: f64,
    pub n_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Trained pair plus the ODL log.
#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub pair: DictionaryPair,
    pub log: OdlLog,
}

fn check_training_signals(y_low: &ReceivedSignal, y_high: &ReceivedSignal) -> Result<()> {
    if y_low.n_snapshots() != y_high.n_snapshots() {
        return Err(Error::Shape(format!(
            "low signal has {} snapshots, high has {}",
            y_low.n_snapshots(),
            y_high.n_snapshots()
        )));
    }
    Ok(())
}

/// Normalized stacked training matrix `[Y_l; Y_h]`.
fn stacked_training_matrix(y_low: &ReceivedSignal, y_high: &ReceivedSignal) -> Result<Array2<f64>> {
    check_training_signals(y_low, y_high)?;
    let low = complex_to_real_samples(y_low);
    let high = complex_to_real_samples(y_high);
    let pre = preprocess(low.view(), Some(high.view()))?;
    let high = pre.high.expect("high block requested");
    Ok(ndarray::concatenate(Axis(0), &[pre.low.view(), high.view()]).expect("equal widths"))
}

fn train_on_stacked(
    stacked: ArrayView2<f64>,
    low_config: &ArrayConfig,
    high_config: &ArrayConfig,
    grid: AngleInterval,
    params: &CoupledTrainParams,
) -> Result<TrainedPair> {
    if params.n_atoms < high_config.virtual_size() {
        return Err(Error::InvalidArgument(format!(
            "dictionary needs at least {} atoms for a {} high array, got {}",
            high_config.virtual_size(),
            high_config,
            params.n_atoms
        )));
    }
    let odl = OdlParams::new(params.n_atoms, params.lambda, params.n_iters, params.seed)
        .with_batch_size(params.batch_size);
    let outcome = odl_train(stacked, &odl)?;
    let training_error = relative_stacked_error(&outcome.dictionary, stacked, params.lambda)?;
    let pair = DictionaryPair::new(
        outcome.dictionary,
        grid,
        params.lambda,
        *low_config,
        *high_config,
        params.n_iters,
        training_error,
        params.seed,
    )?;
    Ok(TrainedPair {
        pair,
        log: outcome.log,
    })
}

/// `‖Ỹ − D·W‖_F² / ‖Ỹ‖_F²` with `W` the LASSO codes of `Ỹ` at `lambda`.
pub fn relative_stacked_error(dict: &Dictionary, stacked: ArrayView2<f64>, lambda: f64) -> Result<f64> {
    let solver = LassoSolver::from_dictionary(dict);
    let codes = solver.solve(stacked, &LassoParams::new(lambda).with_tol(1e-6))?;
    let err = reconstruction_error_matrix(dict.atoms().view(), codes.codes().view(), stacked)?;
    let energy: f64 = stacked.iter().map(|v| v * v).sum();
    Ok(err / energy)
}

/// Learns a coupled pair from coupled low/high training signals.
pub fn train_coupled(
    y_low: &ReceivedSignal,
    y_high: &ReceivedSignal,
    grid: AngleInterval,
    params: &CoupledTrainParams,
) -> Result<TrainedPair> {
    let stacked = stacked_training_matrix(y_low, y_high)?;
    train_on_stacked(stacked.view(), y_low.config(), y_high.config(), grid, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelection {
    pub best: f64,
    /// `(λ, held-out ‖Ỹ − D·W‖_F²)` in grid order.
    pub errors: Vec<(f64, f64)>,
}

/// Sweeps `lambda_grid`, training on a seeded 90% column split and scoring
/// the stacked reconstruction error on the held-out 10%. Ties go to the
/// larger λ.
pub fn select_lambda(
    y_low: &ReceivedSignal,
    y_high: &ReceivedSignal,
    grid: AngleInterval,
    lambda_grid: &[f64],
    params: &CoupledTrainParams,
) -> Result<LambdaSelection> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    let stacked = stacked_training_matrix(y_low, y_high)?;
    let n = stacked.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(derive_seed(params.seed, 0x5e1ec7)));
    let n_val = (n / 10).max(1);
    if n_val >= n {
        return Err(Error::InvalidArgument(
            "need at least two training columns to hold out a validation split".into(),
        ));
    }
    let (val_idx, train_idx) = order.split_at(n_val);
    let train = stacked.select(Axis(1), train_idx);
    let val = stacked.select(Axis(1), val_idx);

    let mut errors = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let p = CoupledTrainParams { lambda, ..*params };
        let trained = train_on_stacked(train.view(), y_low.config(), y_high.config(), grid, &p)?;
        let dict = trained.pair.stacked();
        let codes = LassoSolver::from_dictionary(dict).solve(val.view(), &LassoParams::new(lambda).with_tol(1e-6))?;
        let err = reconstruction_error_matrix(dict.atoms().view(), codes.codes().view(), val.view())?;
        errors.push((lambda, err));
    }
    let best = errors
        .iter()
        .copied()
        .reduce(|best, cand| {
            if cand.1 < best.1 || (cand.1 == best.1 && cand.0 > best.0) {
                cand
            } else {
                best
            }
        })
        .map(|(l, _)| l)
        .expect("nonempty grid");
    Ok(LambdaSelection { best, errors })
}

/// How training data is synthesized for one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataParams {
    pub low_config: ArrayConfig,
    pub high_config: ArrayConfig,
    pub k_targets: usize,
    pub n_scenes: usize,
    pub pulses_per_scene: usize,
    pub snr: Snr,
}

/// Coupled training signals for `grid`: `n_scenes` scenes of `k_targets`
/// targets drawn uniformly inside the grid, each observed for
/// `pulses_per_scene` pulses.
pub fn synth_training_data(
    grid: AngleInterval,
    data: &TrainingDataParams,
    seed: u64,
) -> Result<(ReceivedSignal, ReceivedSignal)> {
    if data.k_targets == 0 || data.n_scenes == 0 || data.pulses_per_scene == 0 {
        return Err(Error::InvalidArgument(
            "training needs positive target, scene and pulse counts".into(),
        ));
    }
    let p = data.pulses_per_scene;
    let total = data.n_scenes * p;
    let mut low = Array2::zeros((data.low_config.virtual_size(), total));
    let mut high = Array2::zeros((data.high_config.virtual_size(), total));
    for scene_idx in 0..data.n_scenes {
        let scene_seed = derive_seed(seed, scene_idx as u64);
        let mut rng = seeded_rng(scene_seed);
        let angles: Vec<f64> = (0..data.k_targets)
            .map(|_| rng.random_range(grid.lo()..=grid.hi()))
            .collect();
        let scene = TargetScene::with_random_rcs(angles, p, derive_seed(scene_seed, 1))?;
        let (yl, yh) = synth_coupled(
            &scene,
            &data.low_config,
            &data.high_config,
            data.snr,
            derive_seed(scene_seed, 2),
        )?;
        let cols = s![.., scene_idx * p..(scene_idx + 1) * p];
        low.slice_mut(cols).assign(yl.data());
        high.slice_mut(cols).assign(yh.data());
    }
    Ok((
        ReceivedSignal::new(low, data.low_config, data.snr)?,
        ReceivedSignal::new(high, data.high_config, data.snr)?,
    ))
}

/// Per-grid training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTrainingLog {
    pub grid: AngleInterval,
    pub lambda: f64,
    pub training_error: f64,
    pub lambda_errors: Vec<(f64, f64)>,
    /// Per-iteration mean objective of each fresh mini-batch.
    pub batch_objective: Vec<f64>,
    /// ODL surrogate after each dictionary update.
    pub surrogate: Vec<f64>,
}

/// Ordered dictionary pairs, one per angle grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDictionaryBank {
    pairs: Vec<DictionaryPair>,
}

impl GridDictionaryBank {
    pub fn new(pairs: Vec<DictionaryPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("dictionary bank is empty".into()));
        }
        for (i, a) in pairs.iter().enumerate() {
            for b in &pairs[i + 1..] {
                if a.grid() == b.grid() {
                    return Err(Error::InvalidArgument(format!("grid {} appears twice", a.grid())));
                }
            }
            if a.low_config() != pairs[0].low_config() || a.high_config() != pairs[0].high_config() {
                return Err(Error::InvalidArgument(
                    "all pairs in a bank must share the array configs".into(),
                ));
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[DictionaryPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn low_config(&self) -> &ArrayConfig {
        self.pairs[0].low_config()
    }

    pub fn high_config(&self) -> &ArrayConfig {
        self.pairs[0].high_config()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankTrainingParams {
    pub data: TrainingDataParams,
    pub n_atoms: usize,
    pub lambda: f64,
    /// When non-empty, λ is chosen per grid by [`select_lambda`].
    pub lambda_grid: Vec<f64>,
    pub n_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Trains one pair per grid. Grid `i` uses seeds derived from `(seed, i)`.
pub fn train_grid_bank(
    grids: &[AngleInterval],
    params: &BankTrainingParams,
) -> Result<(GridDictionaryBank, Vec<GridTrainingLog>)> {
    if grids.is_empty() {
        return Err(Error::InvalidArgument("no grids to train".into()));
    }
    let mut pairs = Vec::with_capacity(grids.len());
    let mut logs = Vec::with_capacity(grids.len());
    for (i, &grid) in grids.iter().enumerate() {
        let grid_seed = derive_seed(params.seed, i as u64);
        let (yl, yh) = synth_training_data(grid, &params.data, derive_seed(grid_seed, 0xda7a))?;
        let mut train = CoupledTrainParams {
            n_atoms: params.n_atoms,
            lambda: params.lambda,
            n_iters: params.n_iters,
            batch_size: params.batch_size,
            seed: derive_seed(grid_seed, 0x0d1),
        };
        let mut lambda_errors = Vec::new();
        if !params.lambda_grid.is_empty() {
            let sel = select_lambda(&yl, &yh, grid, &params.lambda_grid, &train)?;
            train.lambda = sel.best;
            lambda_errors = sel.errors;
        }
        let trained = train_coupled(&yl, &yh, grid, &train)?;
        logs.push(GridTrainingLog {
            grid,
            lambda: train.lambda,
            training_error: trained.pair.training_error(),
            lambda_errors,
            batch_objective: trained.log.batch_objective.clone(),
            surrogate: trained.log.surrogate_after.clone(),
        });
        pairs.push(trained.pair);
    }
    Ok((GridDictionaryBank::new(pairs)?, logs))
}
