//! End-to-end acceptance checks, run in sequence so timings are honest.
//! Each criterion prints one line `ACCEPT <id> PASS|FAIL <summary>`. Failed
//! criteria fail the run only when `ACCEPT_STRICT=1` is set. Runs without the
//! libtest harness so the lines always reach stdout.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{s, Array2};
use num_complex::Complex64;
use rand::Rng;

use coupled_doa::coupled_dict::{preprocess, AngleInterval, GridDictionaryBank};
use coupled_doa::evaluation::{
    antenna_sweep, grid_mismatch, make_test_scene, results_csv, train_bank, Evaluator, McRow, ScenarioConfig,
};
use coupled_doa::music::{angle_grid, covariance, estimate_doa, noise_subspace};
use coupled_doa::prediction::{postprocess, Predictor};
use coupled_doa::radar_model::{synth_coupled, synth_received, ArrayConfig, Snr, TargetScene};
use coupled_doa::rng::seeded_rng;
use coupled_doa::sparse_coding::{lasso, random_dictionary};

use common::{complex_gaussian_matrix, covariance_oracle, gaussian_matrix, kkt_residual, noise_projector_oracle};

fn report(id: &str, pass: bool, summary: &str) -> bool {
    println!("ACCEPT {id} {} {summary}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn grid(s: &str) -> AngleInterval {
    s.parse().unwrap()
}

/// Desk-scale scenario: 10x10 -> 16x16, grid 10:35, 10 dB training.
fn desk_config() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.seed = 2024;
    cfg.training.grids = vec![grid("10:35")];
    cfg.training.snr_db = Snr::Db(10.0);
    cfg.test.snr_db = vec![-10.0];
    cfg
}

fn desk_bank() -> &'static GridDictionaryBank {
    static BANK: OnceLock<GridDictionaryBank> = OnceLock::new();
    BANK.get_or_init(|| train_bank(&desk_config()).unwrap().0)
}

fn se_separated(better: &McRow, worse: &McRow) -> bool {
    better.mean_rmse_pred + better.se_pred < worse.mean_rmse_pred - worse.se_pred
}

fn four_targets_at_minus_ten_db() -> bool {
    let start = Instant::now();
    let mut cfg = desk_config();
    cfg.test.angles_deg = Some(vec![13.0, 18.0, 23.0, 28.0]);
    cfg.test.n_trials = 50;
    let bank = desk_bank();
    let ev = Evaluator::new(&cfg, bank).unwrap();
    let truth = [13.0, 18.0, 23.0, 28.0];
    let within = |est: &[f64], tol: f64| est.iter().zip(&truth).all(|(e, t)| (e - t).abs() <= tol);
    let (mut low_fail, mut pred_ok, mut high_ok) = (0, 0, 0);
    let trials = ev.run_snr(0, -10.0, None);
    for t in &trials {
        let t = t.as_ref().unwrap();
        if t.degraded_low || !within(&t.estimated_angles_low, 1.0) {
            low_fail += 1;
        }
        if !t.degraded_pred && within(&t.estimated_angles_pred, 1.5) {
            pred_ok += 1;
        }
        if within(t.estimated_angles_high.as_ref().unwrap(), 1.0) {
            high_ok += 1;
        }
    }
    let n = trials.len();
    let secs = start.elapsed().as_secs_f64();
    let pass = 2 * low_fail > n && 2 * pred_ok > n && 5 * high_ok > 4 * n && secs < 1200.0;
    report(
        "1-resolution",
        pass,
        &format!("low failed {low_fail}/{n} (need >50%), prediction within 1.5 deg {pred_ok}/{n} (need >50%), high within 1 deg {high_ok}/{n} (need >80%), {secs:.0}s incl. training"),
    )
}

/// Training-SNR trend plus the two RMSE invariants measured on the same runs.
fn cleaner_training_helps() -> Vec<bool> {
    let mut cfg = desk_config();
    cfg.test.n_trials = 200;
    let ev10 = Evaluator::new(&cfg, desk_bank()).unwrap();
    let r10 = ev10.run_monte_carlo(None).rows[0];
    let mut cfg30 = cfg.clone();
    cfg30.training.snr_db = Snr::Db(30.0);
    let (bank30, _) = train_bank(&cfg30).unwrap();
    let r30 = Evaluator::new(&cfg30, &bank30).unwrap().run_monte_carlo(None).rows[0];
    let trend = r30.mean_rmse_pred <= r10.mean_rmse_pred && se_separated(&r30, &r10);
    let trend = report(
        "2-training-snr",
        trend,
        &format!(
            "pred RMSE at -10 dB: trained 30 dB {:.3} +- {:.3}, trained 10 dB {:.3} +- {:.3} (need lower and separated)",
            r30.mean_rmse_pred, r30.se_pred, r10.mean_rmse_pred, r10.se_pred
        ),
    );
    let ordering = r10.mean_rmse_pred + r10.se_pred < r10.mean_rmse_low - r10.se_low;
    let ordering = report(
        "inv-ordering",
        ordering,
        &format!(
            "10 dB bank at -10 dB: pred {:.3} +- {:.3} vs low {:.3} +- {:.3} (need pred lower and separated)",
            r10.mean_rmse_pred, r10.se_pred, r10.mean_rmse_low, r10.se_low
        ),
    );
    let sandwich = [&r10, &r30].iter().all(|r| r.mean_rmse_high <= r.mean_rmse_pred);
    let sandwich = report(
        "inv-sandwich",
        sandwich,
        &format!(
            "high {:.3} / {:.3} vs pred {:.3} / {:.3} for the 10 dB / 30 dB banks (need high <= pred)",
            r10.mean_rmse_high, r30.mean_rmse_high, r10.mean_rmse_pred, r30.mean_rmse_pred
        ),
    );
    vec![trend, ordering, sandwich]
}

/// Noiseless-trained pair, noiseless scenes inside its grid: the predicted
/// spectrum should put every peak within one grid step of the truth.
fn noiseless_prediction_hits_the_grid() -> bool {
    let mut cfg = desk_config();
    cfg.training.snr_db = Snr::Noiseless;
    let (bank, _) = train_bank(&cfg).unwrap();
    let predictor = Predictor::new(&bank.pairs()[0]);
    let step = cfg.test.angle_step_deg;
    let angles = cfg.angle_grid();
    let mut worst = 0.0f64;
    let n = 10u64;
    let mut hits = 0u64;
    for i in 0..n {
        let scene = make_test_scene(grid("10:35"), 4, cfg.test.n_snapshots, 7000 + i).unwrap();
        let (low, _) = synth_coupled(&scene, &cfg.arrays.low, &cfg.arrays.high, Snr::Noiseless, i).unwrap();
        let (pred, _) = predictor.predict(&low, &cfg.prediction).unwrap();
        let est = estimate_doa(&pred, 4, &angles).unwrap();
        let err = est
            .angles_deg
            .iter()
            .zip(scene.angles_deg())
            .map(|(a, t)| (a - t).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        hits += (!est.degraded && err <= step + 1e-9) as u64;
    }
    report(
        "ex-noiseless",
        hits == n,
        &format!("{hits}/{n} noiseless scenes within {step} deg on prediction, worst error {worst:.2} deg"),
    )
}

fn matched_grid_is_best() -> bool {
    let mut cfg = desk_config();
    cfg.training.grids = vec![grid("10:35"), grid("20:45"), grid("30:55")];
    cfg.test.n_trials = 200;
    cfg.test.reference_high = false;
    let cells = grid_mismatch(&cfg, &[grid("10:35")], -5.0).unwrap();
    let means: Vec<f64> = cells.iter().map(|c| c.row.mean_rmse_pred).collect();
    let pass = means[0] < means[1] && means[0] < means[2];
    let detail: Vec<String> = cells
        .iter()
        .map(|c| format!("{} {:.3}+-{:.3}", c.dict_grid, c.row.mean_rmse_pred, c.row.se_pred))
        .collect();
    report(
        "3-grid-match",
        pass,
        &format!("targets in 10:35 at -5 dB, pred RMSE by dictionary grid: {} (need 10:35 strictly lowest)", detail.join(", ")),
    )
}

fn more_low_antennas_help() -> bool {
    let mut cfg = desk_config();
    cfg.test.n_trials = 100;
    cfg.test.reference_high = false;
    let sweep = antenna_sweep(&cfg, &[6, 8, 10]).unwrap();
    let means: Vec<f64> = sweep.iter().map(|(_, t)| t.rows[0].mean_rmse_pred).collect();
    let pass = means[0] >= means[1] && means[1] >= means[2];
    let detail: Vec<String> = sweep
        .iter()
        .map(|(a, t)| format!("{a} {:.3}+-{:.3}", t.rows[0].mean_rmse_pred, t.rows[0].se_pred))
        .collect();
    report(
        "4-antennas",
        pass,
        &format!("pred RMSE at -10 dB: {} (need non-increasing)", detail.join(", ")),
    )
}

fn property_suites() -> bool {
    let start = Instant::now();
    let mut failures: Vec<String> = Vec::new();
    let mut rng = seeded_rng(77);

    // LASSO optimality on random instances
    let mut worst_kkt = 0.0f64;
    for i in 0..100 {
        let rows = 6 + i % 10;
        let cols = 8 + (i * 7) % 25;
        let d = random_dictionary(rows, cols, 1000 + i as u64).unwrap();
        let y = gaussian_matrix(&mut rng, rows, 3);
        let lambda = 0.02 + 0.5 * rng.random::<f64>();
        let w = lasso(&d, y.view(), lambda, 1e-10, 20_000).unwrap();
        for k in 0..3 {
            worst_kkt = worst_kkt.max(kkt_residual(d.atoms().view(), y.column(k), w.codes().column(k), lambda));
        }
    }
    if worst_kkt > 1e-6 {
        failures.push(format!("LASSO KKT residual {worst_kkt:e}"));
    }

    // noiseless single-target MUSIC to grid resolution
    let cfg44 = ArrayConfig::square(4).unwrap();
    let step = 0.05;
    let angles = angle_grid(0.0, 90.0, step);
    let mut worst_music = 0.0f64;
    for i in 0..50 {
        let theta = 90.0 * rng.random::<f64>();
        let scene = TargetScene::with_random_rcs(vec![theta], 8, 500 + i).unwrap();
        let y = synth_received(&scene, &cfg44, Snr::Noiseless, 1).unwrap();
        let est = estimate_doa(&y, 1, &angles).unwrap();
        worst_music = worst_music.max((est.angles_deg[0] - theta).abs());
    }
    if worst_music > step {
        failures.push(format!("MUSIC single-target error {worst_music}"));
    }

    // stacked atoms stay unit norm after training
    let mut small = ScenarioConfig::default();
    small.arrays.low = ArrayConfig::square(3).unwrap();
    small.arrays.high = ArrayConfig::square(5).unwrap();
    small.training.grids = vec![grid("10:40")];
    small.training.k_targets = 2;
    small.training.n_train_samples = 2000;
    small.training.l_atoms = 64;
    small.training.n_iters = 30;
    small.test.n_trials = 8;
    small.test.snr_db = vec![0.0, 10.0];
    let (bank, _) = train_bank(&small).unwrap();
    let atoms = bank.pairs()[0].stacked().atoms();
    let worst_norm = atoms
        .columns()
        .into_iter()
        .map(|c| (c.dot(&c).sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    if worst_norm > 1e-8 {
        failures.push(format!("stacked atom norm off by {worst_norm:e}"));
    }

    // preprocess then denormalize
    let raw = gaussian_matrix(&mut rng, 40, 30) * 3.0 + 1.5;
    let pre = preprocess(raw.view(), None).unwrap();
    let z = postprocess(pre.low.view(), &pre.stats).unwrap();
    let mut back = Array2::<f64>::zeros((40, 30));
    back.slice_mut(s![..20, ..]).assign(&z.mapv(|c| c.re));
    back.slice_mut(s![20.., ..]).assign(&z.mapv(|c| c.im));
    let rel = (&back - &raw).mapv(|v| v * v).sum().sqrt() / raw.mapv(|v| v * v).sum().sqrt();
    if rel > 1e-12 {
        failures.push(format!("denormalization error {rel:e}"));
    }

    // sample covariance against direct summation
    let y = complex_gaussian_matrix(&mut rng, 6, 50);
    let diff = (&covariance(y.view()) - &covariance_oracle(&y)).mapv(|c| c.norm()).fold(0.0f64, |a, &b| a.max(b));
    if diff > 1e-12 {
        failures.push(format!("covariance error {diff:e}"));
    }

    // noise subspace against a Jacobi oracle
    let mut worst_proj = 0.0f64;
    for (n, k) in [(2, 1), (3, 1), (4, 2), (6, 1), (6, 3), (5, 4)] {
        let a = complex_gaussian_matrix(&mut rng, n, n + 2);
        let r = a.dot(&a.t().mapv(|c| c.conj())) / Complex64::new((n + 2) as f64, 0.0);
        let u = noise_subspace(&r, k).unwrap();
        let b = u.basis();
        let p = b.dot(&b.t().mapv(|c| c.conj()));
        let oracle = noise_projector_oracle(&r, k);
        let d = (&p - &oracle).mapv(|c| c.norm()).fold(0.0f64, |a, &b| a.max(b));
        worst_proj = worst_proj.max(d);
    }
    if worst_proj > 1e-6 {
        failures.push(format!("noise subspace projector differs by {worst_proj:e}"));
    }

    // an mc run is reproducible
    let a = Evaluator::new(&small, &bank).unwrap().run_monte_carlo(None);
    let (bank2, _) = train_bank(&small).unwrap();
    let b = Evaluator::new(&small, &bank2).unwrap().run_monte_carlo(None);
    if bank2 != bank || results_csv(&a) != results_csv(&b) || a != b {
        failures.push("mc run not reproducible".into());
    }

    let secs = start.elapsed().as_secs_f64();
    if secs > 120.0 {
        failures.push(format!("took {secs:.0}s"));
    }
    let pass = failures.is_empty();
    report(
        "5-properties",
        pass,
        &if pass {
            format!("KKT {worst_kkt:.1e}, MUSIC {worst_music:.3} deg, atom norm {worst_norm:.1e}, roundtrip {rel:.1e}, covariance {diff:.1e}, subspace {worst_proj:.1e}, mc deterministic, {secs:.0}s")
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results = vec![four_targets_at_minus_ten_db()];
    results.extend(cleaner_training_helps());
    results.push(noiseless_prediction_hits_the_grid());
    results.push(matched_grid_is_best());
    results.push(more_low_antennas_help());
    results.push(property_suites());
    let failed = results.iter().filter(|&&p| !p).count();
    println!("ACCEPT summary {} of {} checks passed", results.len() - failed, results.len());
    if failed > 0 && std::env::var("ACCEPT_STRICT").is_ok_and(|v| v == "1") {
        eprintln!("{failed} acceptance criteria failed, see ACCEPT lines above");
        std::process::exit(1);
    }
}
