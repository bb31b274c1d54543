use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use coupled_doa::coupled_dict::AngleInterval;
use coupled_doa::evaluation::{
    antenna_sweep, grid_mismatch, make_test_scene, normalization_constant, persist_results, results_csv,
    train_bank, training_snr_sweep, Evaluator, McTable, ResultsMetadata, ScenarioConfig,
};
use coupled_doa::io::{read_bank, read_signal, write_bank, write_signal};
use coupled_doa::music::music_scan;
use coupled_doa::prediction::{select_grid, Predictor};
use coupled_doa::radar_model::{synth_coupled, Snr, TargetScene};
use coupled_doa::rng::derive_seed;
use coupled_doa::{Error, Result};

#[derive(Parser)]
#[command(name = "coupled-doa", version, about = "Coupled dictionary array extrapolation and MUSIC DoA estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario config (TOML); defaults apply to missing keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed, overrides the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Start from full-size defaults instead of desk-scale ones
    #[arg(long)]
    paper_scale: bool,
    /// Comma-separated test SNRs in dB, overrides the config
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    /// Single angle grid lo:hi; replaces the training grids
    #[arg(long)]
    grid: Option<AngleInterval>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a coupled low/high test signal pair
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a dictionary bank
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Predict the high-array signal from a low-array signal file
    Predict {
        #[command(flatten)]
        common: Common,
        /// Bank directory or manifest
        #[arg(long)]
        bank: PathBuf,
        /// Low-array signal container
        #[arg(long)]
        input: PathBuf,
    },
    /// MUSIC spectrum and DoA estimates for a signal file
    Music {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Number of targets; the config's count by default
        #[arg(long)]
        k: Option<usize>,
    },
    /// Monte-Carlo sweep over the test SNRs
    Mc {
        #[command(flatten)]
        common: Common,
        /// Reuse a trained bank instead of training one
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Emit plot-ready CSVs for one experiment
    PlotData {
        #[command(flatten)]
        common: Common,
        /// spectra, training-snr, grid-mismatch or antennas
        #[arg(long, default_value = "spectra")]
        figure: String,
        #[arg(long)]
        bank: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<ScenarioConfig> {
    let base = if c.paper_scale {
        ScenarioConfig::paper_scale()
    } else {
        ScenarioConfig::default()
    };
    let mut cfg = match &c.config {
        Some(path) => ScenarioConfig::load(path, &base)?,
        None => base,
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(snr) = &c.snr {
        cfg.test.snr_db = snr.clone();
    }
    if let Some(grid) = c.grid {
        cfg.training.grids = vec![grid];
        cfg.test.grid = Some(grid);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<&Path> {
    fs::create_dir_all(&c.out).map_err(|e| Error::Io {
        path: c.out.clone(),
        source: e,
    })?;
    Ok(&c.out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    write_text(path, &text)
}

fn first_snr(cfg: &ScenarioConfig) -> Result<f64> {
    cfg.test
        .snr_db
        .first()
        .copied()
        .ok_or_else(|| Error::Config("test.snr_db is empty".into()))
}

fn test_scene(cfg: &ScenarioConfig, seed: u64) -> Result<TargetScene> {
    match &cfg.test.angles_deg {
        Some(a) => TargetScene::with_random_rcs(a.clone(), cfg.test.n_snapshots, seed),
        None => make_test_scene(cfg.test_grid(), cfg.training.k_targets, cfg.test.n_snapshots, seed),
    }
}

fn bank_for(cfg: &ScenarioConfig, path: Option<&PathBuf>, out: &Path) -> Result<coupled_doa::coupled_dict::GridDictionaryBank> {
    match path {
        Some(p) => read_bank(p),
        None => {
            eprintln!("training {} grid(s)", cfg.training.grids.len());
            let (bank, logs) = train_bank(cfg)?;
            write_bank(&out.join("bank"), &bank)?;
            write_json(&out.join("training_log.json"), &logs)?;
            Ok(bank)
        }
    }
}

#[derive(Serialize)]
struct SceneRecord<'a> {
    angles_deg: &'a [f64],
    snr_db: f64,
    n_snapshots: usize,
    seed: u64,
}

#[derive(Serialize)]
struct DoaRecord {
    k: usize,
    angles_deg: Vec<f64>,
    degraded: bool,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let snr = first_snr(&cfg)?;
            let scene = test_scene(&cfg, derive_seed(cfg.seed, 0x5c))?;
            let (low, high) = synth_coupled(&scene, &cfg.arrays.low, &cfg.arrays.high, Snr::Db(snr), cfg.seed)?;
            write_signal(&out.join("low.sig"), &low)?;
            write_signal(&out.join("high.sig"), &high)?;
            write_json(
                &out.join("scene.json"),
                &SceneRecord {
                    angles_deg: scene.angles_deg(),
                    snr_db: snr,
                    n_snapshots: cfg.test.n_snapshots,
                    seed: cfg.seed,
                },
            )?;
            println!("wrote {} and {}", out.join("low.sig").display(), out.join("high.sig").display());
        }
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let (bank, logs) = train_bank(&cfg)?;
            let dir = out.join("bank");
            write_bank(&dir, &bank)?;
            write_json(&out.join("training_log.json"), &logs)?;
            for log in &logs {
                println!("grid {}: lambda {} training error {:.6}", log.grid, log.lambda, log.training_error);
            }
            println!("wrote {}", dir.display());
        }
        Command::Predict { common, bank, input } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let bank = read_bank(&bank)?;
            let y_low = read_signal(&input)?;
            if y_low.config().virtual_size() != bank.low_config().virtual_size() {
                return Err(Error::Shape(format!(
                    "{} has {} virtual rows ({} array) but the bank expects a {} array with {} rows",
                    input.display(),
                    y_low.config().virtual_size(),
                    y_low.config(),
                    bank.low_config(),
                    bank.low_config().virtual_size()
                )));
            }
            let (pair, _) = select_grid(&y_low, &bank, cfg.k_test(), &cfg.angle_grid())?;
            let (pred, log) = Predictor::new(pair).predict(&y_low, &cfg.prediction)?;
            write_signal(&out.join("predicted.sig"), &pred)?;
            write_json(&out.join("predict_log.json"), &log)?;
            println!(
                "grid {} iterations {} converged {}",
                pair.grid(),
                log.iterations,
                log.converged
            );
        }
        Command::Music { common, input, k } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let y = read_signal(&input)?;
            let k = k.unwrap_or(cfg.k_test());
            let (spectrum, est) = music_scan(&y, k, &cfg.angle_grid())?;
            write_text(&out.join("spectrum.csv"), &spectrum.to_csv())?;
            write_json(
                &out.join("doa.json"),
                &DoaRecord {
                    k,
                    angles_deg: est.angles_deg.clone(),
                    degraded: est.degraded,
                },
            )?;
            println!("doa {:?}{}", est.angles_deg, if est.degraded { " (degraded)" } else { "" });
        }
        Command::Mc { common, bank } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let bank = bank_for(&cfg, bank.as_ref(), out)?;
            let table = Evaluator::new(&cfg, &bank)?.run_monte_carlo(None);
            let path = out.join("results.csv");
            persist_results(&table, &ResultsMetadata::new(&cfg, &table), &path)?;
            print!("{}", results_csv(&table));
        }
        Command::PlotData { common, figure, bank } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            plot_data(&cfg, &figure, bank.as_ref(), out)?;
        }
    }
    Ok(())
}

fn fmt_row(prefix: &str, t: &McTable, norm: f64) -> String {
    let mut s = String::new();
    for r in &t.rows {
        s.push_str(&format!(
            "{prefix}{},{},{},{},{},{},{},{},{},{}\n",
            r.snr_db,
            r.mean_rmse_low,
            r.se_low,
            r.mean_rmse_pred,
            r.se_pred,
            r.mean_rmse_high,
            r.se_high,
            r.mean_rmse_low / norm,
            r.mean_rmse_pred / norm,
            r.mean_rmse_high / norm
        ));
    }
    s
}

const CURVE_COLUMNS: &str =
    "snr_db,mean_rmse_low,se_low,mean_rmse_pred,se_pred,mean_rmse_high,se_high,norm_low,norm_pred,norm_high";

fn plot_data(cfg: &ScenarioConfig, figure: &str, bank: Option<&PathBuf>, out: &Path) -> Result<()> {
    let path = match figure {
        "spectra" => {
            let bank = bank_for(cfg, bank, out)?;
            let snr = first_snr(cfg)?;
            let scene = test_scene(cfg, derive_seed(cfg.seed, 0x5c))?;
            let (low, high) = synth_coupled(&scene, &cfg.arrays.low, &cfg.arrays.high, Snr::Db(snr), cfg.seed)?;
            let grid = cfg.angle_grid();
            let k = scene.n_targets();
            let (pair, _) = select_grid(&low, &bank, k, &grid)?;
            let (pred, _) = Predictor::new(pair).predict(&low, &cfg.prediction)?;
            let (sl, _) = music_scan(&low, k, &grid)?;
            let (sp, _) = music_scan(&pred, k, &grid)?;
            let (sh, _) = music_scan(&high, k, &grid)?;
            let mut text = String::from("angle_deg,p_low,p_pred,p_high\n");
            for i in 0..grid.len() {
                text.push_str(&format!("{},{},{},{}\n", grid[i], sl.values[i], sp.values[i], sh.values[i]));
            }
            let p = out.join("spectra.csv");
            write_text(&p, &text)?;
            p
        }
        "training-snr" => {
            let sweeps = training_snr_sweep(cfg, &[Snr::Noiseless, Snr::Db(10.0), Snr::Db(30.0)])?;
            let norm = normalization_constant(sweeps.iter().flat_map(|(_, t)| t.rows.iter().map(|r| r.mean_rmse_pred)));
            let mut text = format!("train_snr,{CURVE_COLUMNS}\n");
            for (snr, t) in &sweeps {
                text.push_str(&fmt_row(&format!("{snr},"), t, norm));
            }
            let p = out.join("training_snr.csv");
            write_text(&p, &text)?;
            p
        }
        "grid-mismatch" => {
            let snr = first_snr(cfg)?;
            let test_grids: Vec<AngleInterval> = cfg.training.grids.iter().take(2).copied().collect();
            let cells = grid_mismatch(cfg, &test_grids, snr)?;
            let norm = normalization_constant(cells.iter().map(|c| c.row.mean_rmse_pred));
            let mut text = String::from("test_grid,dict_grid,snr_db,mean_rmse_pred,se_pred,norm_pred,n_ok\n");
            for c in &cells {
                text.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    c.test_grid,
                    c.dict_grid,
                    c.row.snr_db,
                    c.row.mean_rmse_pred,
                    c.row.se_pred,
                    c.row.mean_rmse_pred / norm,
                    c.row.n_ok
                ));
            }
            let p = out.join("grid_mismatch.csv");
            write_text(&p, &text)?;
            p
        }
        "antennas" => {
            let sweeps = antenna_sweep(cfg, &[6, 8, 10])?;
            let norm = normalization_constant(sweeps.iter().flat_map(|(_, t)| t.rows.iter().map(|r| r.mean_rmse_pred)));
            let mut text = format!("low_array,{CURVE_COLUMNS}\n");
            for (a, t) in &sweeps {
                text.push_str(&fmt_row(&format!("{a},"), t, norm));
            }
            let p = out.join("antennas.csv");
            write_text(&p, &text)?;
            p
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown figure '{other}', expected spectra, training-snr, grid-mismatch or antennas"
            )))
        }
    };
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
