//! Scenario configuration, Monte-Carlo trials, RMSE aggregation and result
//! persistence.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupled_dict::{train_grid_bank, AngleInterval, BankTrainingParams, GridDictionaryBank, GridTrainingLog, TrainingDataParams};
use crate::error::{Error, Result};
use crate::music::{angle_grid, music_scan, DoaEstimate};
use crate::prediction::{select_grid_from_estimates, PredictionConfig, Predictor};
use crate::radar_model::{draw_rcs, synth_coupled, ArrayConfig, Snr, TargetScene};
use crate::rng::{derive_seed, seeded_rng};

/// Spacing between adjacent test targets, degrees.
pub const TEST_GAP_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArraysSection {
    pub low: ArrayConfig,
    pub high: ArrayConfig,
}

impl Default for ArraysSection {
    fn default() -> Self {
        Self {
            low: ArrayConfig::square(10).expect("valid"),
            high: ArrayConfig::square(16).expect("valid"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub grids: Vec<AngleInterval>,
    pub k_targets: usize,
    /// Total training columns; must be a multiple of `pulses_per_scene`.
    pub n_train_samples: usize,
    pub pulses_per_scene: usize,
    pub snr_db: Snr,
    pub l_atoms: usize,
    pub n_iters: usize,
    pub batch_size: usize,
    pub lambda: f64,
    /// When non-empty, λ is picked per grid from these values.
    pub lambda_grid: Vec<f64>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            grids: ["10:35", "20:45", "30:55"]
                .iter()
                .map(|g| g.parse().expect("valid grid"))
                .collect(),
            k_targets: 4,
            n_train_samples: 10_000,
            pulses_per_scene: 100,
            snr_db: Snr::Db(10.0),
            l_atoms: 256,
            n_iters: 100,
            batch_size: 256,
            lambda: DESK_LAMBDA,
            lambda_grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestSection {
    pub snr_db: Vec<f64>,
    pub n_snapshots: usize,
    pub n_trials: usize,
    /// Grid in which test scenes are placed; the first training grid when
    /// absent.
    pub grid: Option<AngleInterval>,
    /// Fixed target angles; overrides random placement when present.
    pub angles_deg: Option<Vec<f64>>,
    pub angle_step_deg: f64,
    /// Also run MUSIC on the true high-array signal.
    pub reference_high: bool,
}

impl Default for TestSection {
    fn default() -> Self {
        Self {
            snr_db: vec![-10.0, -5.0, 0.0],
            n_snapshots: 100,
            n_trials: 200,
            grid: None,
            angles_deg: None,
            angle_step_deg: crate::music::DEFAULT_STEP_DEG,
            reference_high: true,
        }
    }
}

/// Regularization used for both training and prediction at desk scale.
pub const DESK_LAMBDA: f64 = 0.05;
/// Regularization at paper scale.
pub const PAPER_LAMBDA: f64 = 0.01;

/// Everything one experiment needs. Read from TOML with sections
/// `[arrays]`, `[training]`, `[prediction]`, `[test]` and a top-level
/// `seed`; every key is optional and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub arrays: ArraysSection,
    pub training: TrainingSection,
    pub prediction: PredictionConfig,
    pub test: TestSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            arrays: ArraysSection::default(),
            training: TrainingSection::default(),
            prediction: PredictionConfig {
                lambda: DESK_LAMBDA,
                ..PredictionConfig::default()
            },
            test: TestSection::default(),
        }
    }
}

impl ScenarioConfig {
    /// Full-size settings: 45000 training columns, 512 atoms, 300 ODL
    /// iterations, 10000 trials per SNR and λ = 0.01.
    pub fn paper_scale() -> Self {
        let mut cfg = Self::default();
        cfg.training.n_train_samples = 45_000;
        cfg.training.l_atoms = 512;
        cfg.training.n_iters = 300;
        cfg.training.lambda = PAPER_LAMBDA;
        cfg.prediction.lambda = PAPER_LAMBDA;
        cfg.test.n_trials = 10_000;
        cfg
    }

    /// Parses `text` on top of `base`: keys present in the text replace the
    /// base values, missing keys keep them.
    pub fn from_toml_over(text: &str, base: &ScenarioConfig) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        merge_tables(&mut merged, overlay);
        let cfg: ScenarioConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_over(text, &Self::default())
    }

    pub fn load(path: &Path, base: &ScenarioConfig) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_over(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.training;
        self.arrays.low.validate()?;
        self.arrays.high.validate()?;
        if !self.arrays.low.is_subarray_of(&self.arrays.high) {
            return Err(Error::Config(format!(
                "low array {} must be a sub-array of high array {}",
                self.arrays.low, self.arrays.high
            )));
        }
        if t.grids.is_empty() {
            return Err(Error::Config("training.grids must not be empty".into()));
        }
        for (name, v) in [
            ("training.k_targets", t.k_targets),
            ("training.n_train_samples", t.n_train_samples),
            ("training.pulses_per_scene", t.pulses_per_scene),
            ("training.l_atoms", t.l_atoms),
            ("training.batch_size", t.batch_size),
            ("test.n_snapshots", self.test.n_snapshots),
            ("test.n_trials", self.test.n_trials),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !t.n_train_samples.is_multiple_of(t.pulses_per_scene) {
            return Err(Error::Config(format!(
                "training.n_train_samples ({}) must be a multiple of training.pulses_per_scene ({})",
                t.n_train_samples, t.pulses_per_scene
            )));
        }
        if !(t.lambda > 0.0 && t.lambda.is_finite()) || t.lambda_grid.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("training lambdas must be positive".into()));
        }
        self.prediction.validate()?;
        if !(self.test.angle_step_deg > 0.0) {
            return Err(Error::Config("test.angle_step_deg must be positive".into()));
        }
        if self.test.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("test.snr_db entries must be finite".into()));
        }
        if self.k_test() >= self.arrays.low.virtual_size() {
            return Err(Error::Config(format!(
                "{} targets cannot be resolved by a {} array",
                self.k_test(),
                self.arrays.low
            )));
        }
        if let Some(angles) = &self.test.angles_deg {
            if angles.is_empty() || angles.iter().any(|a| !(0.0..=90.0).contains(a)) {
                return Err(Error::Config("test.angles_deg must be non-empty and within [0, 90]".into()));
            }
        } else {
            let g = self.test_grid();
            let need = TEST_GAP_DEG * (t.k_targets as f64 - 1.0);
            if g.width() < need {
                return Err(Error::Config(format!(
                    "test grid {g} is narrower than the {need} degrees {} targets need",
                    t.k_targets
                )));
            }
        }
        Ok(())
    }

    /// Grid where random test scenes are placed.
    pub fn test_grid(&self) -> AngleInterval {
        self.test.grid.unwrap_or(self.training.grids[0])
    }

    /// Number of targets in a test scene.
    pub fn k_test(&self) -> usize {
        self.test.angles_deg.as_ref().map_or(self.training.k_targets, Vec::len)
    }

    pub fn angle_grid(&self) -> Vec<f64> {
        angle_grid(0.0, 90.0, self.test.angle_step_deg)
    }

    pub fn bank_params(&self) -> BankTrainingParams {
        let t = &self.training;
        BankTrainingParams {
            data: TrainingDataParams {
                low_config: self.arrays.low,
                high_config: self.arrays.high,
                k_targets: t.k_targets,
                n_scenes: t.n_train_samples / t.pulses_per_scene,
                pulses_per_scene: t.pulses_per_scene,
                snr: t.snr_db,
            },
            n_atoms: t.l_atoms,
            lambda: t.lambda,
            lambda_grid: t.lambda_grid.clone(),
            n_iters: t.n_iters,
            batch_size: t.batch_size,
            seed: derive_seed(self.seed, 0x7261_696e),
        }
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Trains the bank described by `cfg`.
pub fn train_bank(cfg: &ScenarioConfig) -> Result<(GridDictionaryBank, Vec<GridTrainingLog>)> {
    cfg.validate()?;
    train_grid_bank(&cfg.training.grids, &cfg.bank_params())
}

/// Root mean square angle error after sorting both lists.
pub fn rmse(estimated: &[f64], actual: &[f64]) -> Result<f64> {
    if estimated.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} targets",
            estimated.len(),
            actual.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::InvalidArgument("rmse of an empty list".into()));
    }
    let mut e = estimated.to_vec();
    let mut a = actual.to_vec();
    e.sort_by(f64::total_cmp);
    a.sort_by(f64::total_cmp);
    let sum: f64 = e.iter().zip(&a).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// `k` targets spaced exactly 5° apart, the block placed uniformly inside
/// `grid`, with Swerling II reflectivities over `n_pulses` pulses.
pub fn make_test_scene(grid: AngleInterval, k: usize, n_pulses: usize, rng_seed: u64) -> Result<TargetScene> {
    if k == 0 || n_pulses == 0 {
        return Err(Error::InvalidArgument("test scene needs targets and pulses".into()));
    }
    let span = TEST_GAP_DEG * (k as f64 - 1.0);
    let slack = grid.width() - span;
    if slack < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "grid {grid} is narrower than the {span} degrees {k} targets need"
        )));
    }
    let mut rng = seeded_rng(rng_seed);
    let start = grid.lo() + slack * rng.random::<f64>();
    let angles: Vec<f64> = (0..k).map(|i| start + TEST_GAP_DEG * i as f64).collect();
    let rcs = draw_rcs(k, n_pulses, derive_seed(rng_seed, 0x0072_6373));
    TargetScene::new(angles, rcs)
}

/// Outcome of one test scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub true_angles: Vec<f64>,
    pub estimated_angles_low: Vec<f64>,
    pub estimated_angles_pred: Vec<f64>,
    pub estimated_angles_high: Option<Vec<f64>>,
    pub rmse_low: f64,
    pub rmse_pred: f64,
    pub rmse_high: Option<f64>,
    pub degraded_low: bool,
    pub degraded_pred: bool,
    pub snr_db: f64,
    pub grid_used: AngleInterval,
    pub grid_fallback: bool,
    pub seed: u64,
}

/// A bank with its solvers prepared, ready to run many trials.
pub struct Evaluator<'a> {
    cfg: &'a ScenarioConfig,
    bank: &'a GridDictionaryBank,
    predictors: Vec<Predictor<'a>>,
    angles: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(cfg: &'a ScenarioConfig, bank: &'a GridDictionaryBank) -> Result<Self> {
        cfg.validate()?;
        if bank.low_config() != &cfg.arrays.low || bank.high_config() != &cfg.arrays.high {
            return Err(Error::Config(format!(
                "bank maps {} -> {} but the scenario uses {} -> {}",
                bank.low_config(),
                bank.high_config(),
                cfg.arrays.low,
                cfg.arrays.high
            )));
        }
        Ok(Self {
            cfg,
            bank,
            predictors: bank.pairs().iter().map(Predictor::new).collect(),
            angles: cfg.angle_grid(),
        })
    }

    /// Runs one trial. With `forced_pair` the grid-selection step is skipped.
    pub fn run_trial(&self, snr_db: f64, seed: u64, forced_pair: Option<usize>) -> Result<TrialResult> {
        let cfg = self.cfg;
        let p = cfg.test.n_snapshots;
        let scene = match &cfg.test.angles_deg {
            Some(angles) => TargetScene::with_random_rcs(angles.clone(), p, seed)?,
            None => make_test_scene(cfg.test_grid(), cfg.training.k_targets, p, seed)?,
        };
        let k = scene.n_targets();
        let (y_low, y_high) = synth_coupled(
            &scene,
            &cfg.arrays.low,
            &cfg.arrays.high,
            Snr::Db(snr_db),
            derive_seed(seed, 0x6e),
        )?;

        let (spectrum, est_low) = music_scan(&y_low, k, &self.angles)?;
        let (index, fallback) = match forced_pair {
            Some(i) if i < self.predictors.len() => (i, false),
            Some(i) => {
                return Err(Error::InvalidArgument(format!(
                    "pair {i} requested from a bank of {}",
                    self.predictors.len()
                )))
            }
            None if self.predictors.len() == 1 => (0, false),
            None => {
                let grids: Vec<AngleInterval> = self.bank.pairs().iter().map(|p| p.grid()).collect();
                let sel = select_grid_from_estimates(&grids, &est_low, spectrum.strongest().0);
                (sel.index, sel.fallback)
            }
        };
        let (y_pred, _) = self.predictors[index].predict(&y_low, &cfg.prediction)?;
        let (_, est_pred) = music_scan(&y_pred, k, &self.angles)?;
        let est_high: Option<DoaEstimate> = if cfg.test.reference_high {
            Some(music_scan(&y_high, k, &self.angles)?.1)
        } else {
            None
        };

        let truth = scene.angles_deg();
        let rmse_high = match &est_high {
            Some(e) => Some(rmse(&e.angles_deg, truth)?),
            None => None,
        };
        Ok(TrialResult {
            true_angles: truth.to_vec(),
            rmse_low: rmse(&est_low.angles_deg, truth)?,
            rmse_pred: rmse(&est_pred.angles_deg, truth)?,
            rmse_high,
            degraded_low: est_low.degraded,
            degraded_pred: est_pred.degraded,
            estimated_angles_low: est_low.angles_deg,
            estimated_angles_pred: est_pred.angles_deg,
            estimated_angles_high: est_high.map(|e| e.angles_deg),
            snr_db,
            grid_used: self.bank.pairs()[index].grid(),
            grid_fallback: fallback,
            seed,
        })
    }

    /// Seed of trial `trial` at SNR position `snr_index`.
    pub fn trial_seed(&self, snr_index: usize, trial: usize) -> u64 {
        derive_seed(derive_seed(self.cfg.seed, 0x7465_7374 + snr_index as u64), trial as u64)
    }

    /// All trials at one SNR, in trial order.
    pub fn run_snr(&self, snr_index: usize, snr_db: f64, forced_pair: Option<usize>) -> Vec<Result<TrialResult>> {
        (0..self.cfg.test.n_trials)
            .map(|t| self.run_trial(snr_db, self.trial_seed(snr_index, t), forced_pair))
            .collect()
    }

    /// Sweeps every configured test SNR.
    pub fn run_monte_carlo(&self, forced_pair: Option<usize>) -> McTable {
        let rows = self
            .cfg
            .test
            .snr_db
            .iter()
            .enumerate()
            .map(|(i, &snr)| McRow::aggregate(snr, &self.run_snr(i, snr, forced_pair)))
            .collect();
        McTable::new(rows)
    }
}

pub fn run_trial(cfg: &ScenarioConfig, bank: &GridDictionaryBank, snr_db: f64, seed: u64) -> Result<TrialResult> {
    Evaluator::new(cfg, bank)?.run_trial(snr_db, seed, None)
}

pub fn run_monte_carlo(cfg: &ScenarioConfig, bank: &GridDictionaryBank) -> Result<McTable> {
    Ok(Evaluator::new(cfg, bank)?.run_monte_carlo(None))
}

/// Mean RMSEs for each training SNR, everything else as in `cfg`.
pub fn training_snr_sweep(cfg: &ScenarioConfig, train_snrs: &[Snr]) -> Result<Vec<(Snr, McTable)>> {
    let mut out = Vec::with_capacity(train_snrs.len());
    for &snr in train_snrs {
        let mut c = cfg.clone();
        c.training.snr_db = snr;
        let (bank, _) = train_bank(&c)?;
        out.push((snr, Evaluator::new(&c, &bank)?.run_monte_carlo(None)));
    }
    Ok(out)
}

/// One cell of the grid-mismatch matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchCell {
    pub test_grid: AngleInterval,
    pub dict_grid: AngleInterval,
    pub row: McRow,
}

/// Tests scenes placed in each of `test_grids` against every pair of the
/// bank trained on `cfg.training.grids`, bypassing grid selection.
pub fn grid_mismatch(cfg: &ScenarioConfig, test_grids: &[AngleInterval], snr_db: f64) -> Result<Vec<MismatchCell>> {
    let (bank, _) = train_bank(cfg)?;
    let mut cells = Vec::new();
    for (ti, &tg) in test_grids.iter().enumerate() {
        let mut c = cfg.clone();
        c.test.grid = Some(tg);
        c.test.angles_deg = None;
        c.seed = derive_seed(cfg.seed, ti as u64);
        c.validate()?;
        let ev = Evaluator::new(&c, &bank)?;
        for (pi, pair) in bank.pairs().iter().enumerate() {
            cells.push(MismatchCell {
                test_grid: tg,
                dict_grid: pair.grid(),
                row: McRow::aggregate(snr_db, &ev.run_snr(0, snr_db, Some(pi))),
            });
        }
    }
    Ok(cells)
}

/// Mean RMSEs for each low-array size (square arrays), high array fixed.
pub fn antenna_sweep(cfg: &ScenarioConfig, low_sizes: &[usize]) -> Result<Vec<(ArrayConfig, McTable)>> {
    let mut out = Vec::with_capacity(low_sizes.len());
    for &n in low_sizes {
        let mut c = cfg.clone();
        c.arrays.low = ArrayConfig::with_spacing(n, n, cfg.arrays.low.spacing)?;
        let (bank, _) = train_bank(&c)?;
        out.push((c.arrays.low, Evaluator::new(&c, &bank)?.run_monte_carlo(None)));
    }
    Ok(out)
}

/// Mean and standard error of the mean; NaN when undefined.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Aggregates at one SNR. Missing high-array references give NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub snr_db: f64,
    pub mean_rmse_low: f64,
    pub se_low: f64,
    pub mean_rmse_pred: f64,
    pub se_pred: f64,
    pub mean_rmse_high: f64,
    pub se_high: f64,
    pub n_ok: usize,
    /// Successful trials whose predicted-signal MUSIC found fewer than `k`
    /// peaks.
    pub n_degraded: usize,
}

impl McRow {
    pub fn aggregate(snr_db: f64, trials: &[Result<TrialResult>]) -> Self {
        let ok: Vec<&TrialResult> = trials.iter().filter_map(|t| t.as_ref().ok()).collect();
        let low: Vec<f64> = ok.iter().map(|t| t.rmse_low).collect();
        let pred: Vec<f64> = ok.iter().map(|t| t.rmse_pred).collect();
        let high: Vec<f64> = ok.iter().filter_map(|t| t.rmse_high).collect();
        let (mean_rmse_low, se_low) = mean_se(&low);
        let (mean_rmse_pred, se_pred) = mean_se(&pred);
        let (mean_rmse_high, se_high) = mean_se(&high);
        Self {
            snr_db,
            mean_rmse_low,
            se_low,
            mean_rmse_pred,
            se_pred,
            mean_rmse_high,
            se_high,
            n_ok: ok.len(),
            n_degraded: ok.iter().filter(|t| t.degraded_pred).count(),
        }
    }

    fn means(&self) -> [f64; 3] {
        [self.mean_rmse_low, self.mean_rmse_pred, self.mean_rmse_high]
    }
}

/// Per-SNR aggregates plus the constant that normalizes the curve set.
#[derive(Debug, Clone, PartialEq)]
pub struct McTable {
    pub rows: Vec<McRow>,
    /// Largest finite mean RMSE over all curves; 1 when there is none.
    pub normalization: f64,
}

impl McTable {
    pub fn new(rows: Vec<McRow>) -> Self {
        let normalization = normalization_constant(rows.iter().flat_map(|r| r.means()));
        Self { rows, normalization }
    }
}

/// Largest finite positive value, or 1.
pub fn normalization_constant(values: impl IntoIterator<Item = f64>) -> f64 {
    values
        .into_iter()
        .filter(|v| v.is_finite() && *v > 0.0)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .unwrap_or(1.0)
}

pub const RESULTS_HEADER: &str =
    "snr_db,mean_rmse_low,se_low,mean_rmse_pred,se_pred,mean_rmse_high,se_high,n_ok,n_degraded";

/// Sidecar written next to a results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsMetadata {
    pub config_hash: String,
    pub base_seed: u64,
    /// How trial seeds derive from the base seed.
    pub seed_scheme: String,
    pub normalization: f64,
    pub n_trials: usize,
    pub config: ScenarioConfig,
}

impl ResultsMetadata {
    pub fn new(cfg: &ScenarioConfig, table: &McTable) -> Self {
        Self {
            config_hash: cfg.hash(),
            base_seed: cfg.seed,
            seed_scheme: "trial seed = derive(derive(base, 0x74657374 + snr_index), trial_index)".into(),
            normalization: table.normalization,
            n_trials: cfg.test.n_trials,
            config: cfg.clone(),
        }
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn results_csv(table: &McTable) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.snr_db,
            r.mean_rmse_low,
            r.se_low,
            r.mean_rmse_pred,
            r.se_pred,
            r.mean_rmse_high,
            r.se_high,
            r.n_ok,
            r.n_degraded
        ));
    }
    out
}

/// Writes the CSV at `path` and the JSON sidecar next to it.
pub fn persist_results(table: &McTable, meta: &ResultsMetadata, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, results_csv(table)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::format(&side, e.to_string()))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn parse_results_csv(text: &str, path: &Path) -> Result<Vec<McRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RESULTS_HEADER) {
        return Err(Error::format(path, "missing or wrong header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |what: &str| Error::format(path, format!("line {}: bad {what}", i + 2));
        if f.len() != 9 {
            return Err(bad("field count"));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad("number"));
        let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad("count"));
        rows.push(McRow {
            snr_db: num(0)?,
            mean_rmse_low: num(1)?,
            se_low: num(2)?,
            mean_rmse_pred: num(3)?,
            se_pred: num(4)?,
            mean_rmse_high: num(5)?,
            se_high: num(6)?,
            n_ok: int(7)?,
            n_degraded: int(8)?,
        });
    }
    Ok(rows)
}

/// Reads back what [`persist_results`] wrote.
pub fn load_results(path: &Path) -> Result<(McTable, ResultsMetadata)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_results_csv(&text, path)?;
    let side = sidecar_path(path);
    let json = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: ResultsMetadata = serde_json::from_str(&json).map_err(|e| Error::format(&side, e.to_string()))?;
    Ok((
        McTable {
            rows,
            normalization: meta.normalization,
        },
        meta,
    ))
}
