//! High-array signal prediction from a low-array measurement.
//!
//! The low signal is mean-removed and column-normalized, coded against `D_l`,
//! and mapped through `D_h`. The code is then refined by jointly re-coding the
//! stacked target `[Y̆_l; Ŷ_h]` against `[D_l; D_h]` until the prediction
//! settles. The result is de-normalized with the low signal's statistics.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::coupled_dict::{
    complex_to_real_samples, real_to_complex, AngleInterval, DictionaryPair, GridDictionaryBank,
    NormalizationStats,
};
use crate::error::{Error, Result};
use crate::music::{music_scan, DoaEstimate};
use crate::radar_model::ReceivedSignal;
use crate::sparse_coding::{lasso_objective, LassoParams, LassoSolver, SparseCodeMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictionConfig {
    pub lambda: f64,
    pub max_refine_iters: usize,
    /// Relative Frobenius change of the prediction that ends refinement.
    pub convergence_tol: f64,
    pub lasso_tol: f64,
    pub lasso_max_iter: usize,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            max_refine_iters: 10,
            convergence_tol: 1e-4,
            lasso_tol: 1e-6,
            lasso_max_iter: 1_000,
        }
    }
}

impl PredictionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Config(format!("prediction lambda must be positive, got {}", self.lambda)));
        }
        if self.max_refine_iters == 0 {
            return Err(Error::Config("max_refine_iters must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("convergence_tol must be positive".into()));
        }
        Ok(())
    }

    fn lasso(&self) -> LassoParams {
        LassoParams {
            lambda: self.lambda,
            tol: self.lasso_tol,
            max_iter: self.lasso_max_iter,
        }
    }
}

/// What happened during one prediction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionLog {
    /// Refinement iterations run.
    pub iterations: usize,
    /// Stacked objective on entry to each refinement (previous code).
    pub objective_before: Vec<f64>,
    /// Stacked objective after each refinement solve, same stacking.
    pub objective_after: Vec<f64>,
    /// Relative change of the prediction at each refinement.
    pub relative_change: Vec<f64>,
    pub converged: bool,
    pub grid: Option<String>,
}

/// Solvers for one dictionary pair, reusable across predictions.
#[derive(Debug, Clone)]
pub struct Predictor<'a> {
    pair: &'a DictionaryPair,
    low: LassoSolver,
    stacked: LassoSolver,
    d_high: Array2<f64>,
}

impl<'a> Predictor<'a> {
    pub fn new(pair: &'a DictionaryPair) -> Self {
        let d_low = pair.d_low().to_owned();
        let d_high = pair.d_high().to_owned();
        let gram_low = d_low.t().dot(&d_low);
        let gram_high = d_high.t().dot(&d_high);
        let gram = &gram_low + &gram_high;
        Self {
            pair,
            low: LassoSolver::with_gram(d_low, gram_low).expect("square gram"),
            stacked: LassoSolver::with_gram(pair.stacked().atoms().clone(), gram).expect("square gram"),
            d_high,
        }
    }

    pub fn pair(&self) -> &DictionaryPair {
        self.pair
    }

    fn check_low(&self, y_low: &ReceivedSignal) -> Result<()> {
        if y_low.config().virtual_size() != self.pair.low_config().virtual_size() {
            return Err(Error::Shape(format!(
                "signal has {} virtual rows ({} array) but the dictionary pair expects a {} array with {}",
                y_low.config().virtual_size(),
                y_low.config(),
                self.pair.low_config(),
                self.pair.low_config().virtual_size()
            )));
        }
        Ok(())
    }

    /// One joint re-coding step on the stacked system `[Y̆_l; Ŷ_h]`, warm
    /// started from `warm`. Returns `(D_h·Ŵ, Ŵ)`.
    pub fn refine_once(
        &self,
        y_low_norm: ArrayView2<f64>,
        y_high_pred: ArrayView2<f64>,
        warm: Option<&Array2<f64>>,
        cfg: &PredictionConfig,
    ) -> Result<(Array2<f64>, SparseCodeMatrix)> {
        if y_low_norm.nrows() != self.pair.low_features()
            || y_high_pred.nrows() != self.pair.high_features()
            || y_low_norm.ncols() != y_high_pred.ncols()
        {
            return Err(Error::Shape(format!(
                "refinement inputs {:?} and {:?} do not match pair blocks of {} and {} rows",
                y_low_norm.dim(),
                y_high_pred.dim(),
                self.pair.low_features(),
                self.pair.high_features()
            )));
        }
        let dty = self.pair.d_low().t().dot(&y_low_norm) + self.d_high.t().dot(&y_high_pred);
        let codes = self.stacked.solve_correlations(&dty, warm, &cfg.lasso())?;
        let pred = self.d_high.dot(codes.codes());
        Ok((pred, codes))
    }

    /// Predicts the high-array signal for `y_low`.
    pub fn predict(&self, y_low: &ReceivedSignal, cfg: &PredictionConfig) -> Result<(ReceivedSignal, PredictionLog)> {
        cfg.validate()?;
        self.check_low(y_low)?;
        let real = complex_to_real_samples(y_low);
        let stats = NormalizationStats::from_low(real.view())?;
        let y_norm = stats.normalize(real.view())?;

        let mut codes = self.low.solve(y_norm.view(), &cfg.lasso())?.into_codes();
        let mut pred = self.d_high.dot(&codes);
        let mut log = PredictionLog::default();

        for _ in 0..cfg.max_refine_iters {
            // Objective of the incoming code on this iteration's stacking;
            // since Ŷ_h = D_h·W the high block contributes no residual.
            let before = self.low.objective(y_norm.view(), &codes, cfg.lambda);
            let (next_pred, next_codes) = self.refine_once(y_norm.view(), pred.view(), Some(&codes), cfg)?;
            let stacked_target = concatenate(Axis(0), &[y_norm.view(), pred.view()]).expect("equal widths");
            let after = lasso_objective(
                self.pair.stacked().atoms().view(),
                stacked_target.view(),
                next_codes.codes().view(),
                cfg.lambda,
            );
            let diff = frobenius(&(&next_pred - &pred));
            let base = frobenius(&pred);
            let change = if base > 0.0 { diff / base } else if diff > 0.0 { f64::INFINITY } else { 0.0 };
            log.objective_before.push(before);
            log.objective_after.push(after);
            log.relative_change.push(change);
            log.iterations += 1;
            pred = next_pred;
            codes = next_codes.into_codes();
            if change < cfg.convergence_tol {
                log.converged = true;
                break;
            }
        }

        let out = postprocess(pred.view(), &stats)?;
        if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Degenerate("prediction produced non-finite values".into()));
        }
        log.grid = Some(self.pair.grid().to_string());
        let signal = ReceivedSignal::new(out, *self.pair.high_config(), y_low.snr())?;
        Ok((signal, log))
    }
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Column-wise de-normalization with the low statistics, then back to
/// complex snapshots.
pub fn postprocess(pred: ArrayView2<f64>, stats: &NormalizationStats) -> Result<Array2<num_complex::Complex64>> {
    let denorm = stats.denormalize(pred)?;
    real_to_complex(denorm.view())
}

/// Predicts the high-array signal for `y_low_test` with `pair`.
pub fn predict_high(
    y_low_test: &ReceivedSignal,
    pair: &DictionaryPair,
    cfg: &PredictionConfig,
) -> Result<(ReceivedSignal, PredictionLog)> {
    Predictor::new(pair).predict(y_low_test, cfg)
}

/// One joint refinement step with a fresh solver.
pub fn refine_once(
    y_low_norm: ArrayView2<f64>,
    y_high_pred: ArrayView2<f64>,
    pair: &DictionaryPair,
    lambda: f64,
) -> Result<(Array2<f64>, SparseCodeMatrix)> {
    let cfg = PredictionConfig {
        lambda,
        ..PredictionConfig::default()
    };
    Predictor::new(pair).refine_once(y_low_norm, y_high_pred, None, &cfg)
}

/// Outcome of choosing a dictionary pair for a test signal.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSelection {
    pub index: usize,
    /// Median of the low-array estimates, or the strongest peak on fallback.
    pub statistic: f64,
    pub fallback: bool,
}

/// Median of a non-empty slice.
fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Index of the grid whose center is nearest `angle`; ties go to the lower
/// index.
pub fn nearest_center(grids: &[AngleInterval], angle: f64) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, g) in grids.iter().enumerate() {
        let d = (g.center() - angle).abs();
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    best
}

/// Applies the grid-selection rule to low-array MUSIC output.
///
/// `strongest` is the location of the largest spectrum value, used when the
/// estimate is degraded: the first grid containing it wins, else the nearest
/// center.
pub fn select_grid_from_estimates(grids: &[AngleInterval], est: &DoaEstimate, strongest: f64) -> GridSelection {
    if !est.degraded && !est.angles_deg.is_empty() {
        let m = median(&est.angles_deg);
        return GridSelection {
            index: nearest_center(grids, m),
            statistic: m,
            fallback: false,
        };
    }
    let index = grids
        .iter()
        .position(|g| g.contains(strongest))
        .unwrap_or_else(|| nearest_center(grids, strongest));
    GridSelection {
        index,
        statistic: strongest,
        fallback: true,
    }
}

/// Picks the bank pair for `y_low_test` from its own MUSIC estimate.
pub fn select_grid<'b>(
    y_low_test: &ReceivedSignal,
    bank: &'b GridDictionaryBank,
    k: usize,
    angle_grid: &[f64],
) -> Result<(&'b DictionaryPair, GridSelection)> {
    let grids: Vec<AngleInterval> = bank.pairs().iter().map(|p| p.grid()).collect();
    if grids.len() == 1 {
        let sel = GridSelection {
            index: 0,
            statistic: f64::NAN,
            fallback: false,
        };
        return Ok((&bank.pairs()[0], sel));
    }
    let (spectrum, est) = music_scan(y_low_test, k, angle_grid)?;
    let sel = select_grid_from_estimates(&grids, &est, spectrum.strongest().0);
    Ok((&bank.pairs()[sel.index], sel))
}
