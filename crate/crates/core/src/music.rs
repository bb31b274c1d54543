//! MUSIC direction-of-arrival estimation on virtual-array snapshots.
//!
//! The pseudo-spectrum is `P(θ) = 1 / ‖U_nᴴ·v(θ)‖²` where `U_n` spans the
//! eigenvectors of the sample covariance belonging to its `M·N − k` smallest
//! eigenvalues and `v(θ)` is the virtual steering vector.

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::radar_model::{steering_vector, ArrayConfig, ReceivedSignal};

/// Spectrum values are clipped here near exact nulls.
pub const SPECTRUM_CAP: f64 = 1e15;

/// Default scan: 0° to 90° in 0.05° steps.
pub const DEFAULT_STEP_DEG: f64 = 0.05;

/// `lo, lo + step, …` up to and including `hi` (within rounding).
pub fn angle_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

pub fn default_angle_grid() -> Vec<f64> {
    angle_grid(0.0, 90.0, DEFAULT_STEP_DEG)
}

/// `R = Y·Yᴴ / P`.
pub fn sample_covariance(y: &ReceivedSignal) -> Array2<Complex64> {
    covariance(y.data().view())
}

pub fn covariance(data: ArrayView2<Complex64>) -> Array2<Complex64> {
    let p = data.ncols() as f64;
    let yh = data.t().mapv(|z| z.conj());
    let mut r = data.dot(&yh);
    r.mapv_inplace(|z| z / p);
    // enforce exact Hermitian symmetry
    let n = r.nrows();
    for i in 0..n {
        r[[i, i]].im = 0.0;
        for j in 0..i {
            let avg = 0.5 * (r[[i, j]] + r[[j, i]].conj());
            r[[i, j]] = avg;
            r[[j, i]] = avg.conj();
        }
    }
    r
}

/// Eigenpairs of a Hermitian matrix, eigenvalues in descending order.
pub fn hermitian_eigen(r: &Array2<Complex64>) -> Result<(Vec<f64>, Array2<Complex64>)> {
    let n = r.nrows();
    if r.ncols() != n {
        return Err(Error::Shape(format!("covariance is {:?}, not square", r.dim())));
    }
    if r.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Eigen("matrix contains non-finite entries".into()));
    }
    let m = DMatrix::from_fn(n, n, |i, j| r[[i, j]]);
    let eig = nalgebra::SymmetricEigen::try_new(m, 1e-14, 10_000)
        .ok_or_else(|| Error::Eigen("Hermitian eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(i, k)| eig.eigenvectors[(i, order[k])]);
    Ok((values, vectors))
}

/// Eigen-split of a covariance into signal and noise subspaces.
#[derive(Debug, Clone)]
pub struct NoiseSubspace {
    eigenvalues: Vec<f64>,
    eigenvectors: Array2<Complex64>,
    k: usize,
}

impl NoiseSubspace {
    /// `U_n`: eigenvectors of the `M·N − k` smallest eigenvalues.
    pub fn basis(&self) -> ArrayView2<'_, Complex64> {
        self.eigenvectors.slice(s![.., self.k..])
    }

    /// `U_s`: eigenvectors of the `k` largest eigenvalues.
    pub fn signal_basis(&self) -> ArrayView2<'_, Complex64> {
        self.eigenvectors.slice(s![.., ..self.k])
    }

    /// All eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn n_signals(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `‖U_nᴴ·v‖²` for each column of `steering`. Goes through whichever of
    /// the two complementary bases is thinner.
    fn noise_projection_energy(&self, steering: &Array2<Complex64>) -> Array1<f64> {
        let n = self.dim();
        if self.k <= n - self.k {
            let us = self.signal_basis();
            let proj = us.t().mapv(|z| z.conj()).dot(steering);
            Array1::from_iter(steering.columns().into_iter().zip(proj.columns()).map(
                |(v, p)| {
                    let total: f64 = v.iter().map(|z| z.norm_sqr()).sum();
                    let sig: f64 = p.iter().map(|z| z.norm_sqr()).sum();
                    (total - sig).max(0.0)
                },
            ))
        } else {
            noise_energy_direct(self.basis(), steering)
        }
    }
}

fn noise_energy_direct(u_n: ArrayView2<Complex64>, steering: &Array2<Complex64>) -> Array1<f64> {
    let proj = u_n.t().mapv(|z| z.conj()).dot(steering);
    Array1::from_iter(
        proj.columns()
            .into_iter()
            .map(|p| p.iter().map(|z| z.norm_sqr()).sum()),
    )
}

/// Splits the eigenvectors of `r` after the `k` largest eigenvalues.
pub fn noise_subspace(r: &Array2<Complex64>, k: usize) -> Result<NoiseSubspace> {
    let n = r.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "signal count {k} must satisfy 1 <= k < {n}"
        )));
    }
    let (eigenvalues, eigenvectors) = hermitian_eigen(r)?;
    Ok(NoiseSubspace {
        eigenvalues,
        eigenvectors,
        k,
    })
}

/// Pseudo-spectrum sampled on an angle grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicSpectrum {
    pub angles_deg: Vec<f64>,
    pub values: Vec<f64>,
    pub config: ArrayConfig,
}

/// Peak locations picked from a spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct DoaEstimate {
    /// Ascending angles in degrees.
    pub angles_deg: Vec<f64>,
    /// Fewer than `k` local maxima existed; some angles are padding.
    pub degraded: bool,
}

impl MusicSpectrum {
    /// Indices of strict local maxima; endpoints compare against their one
    /// neighbour.
    pub fn local_maxima(&self) -> Vec<usize> {
        let v = &self.values;
        let n = v.len();
        (0..n)
            .filter(|&i| {
                let left = i == 0 || v[i] > v[i - 1];
                let right = i + 1 == n || v[i] > v[i + 1];
                n > 1 && left && right
            })
            .collect()
    }

    /// The `k` largest local maxima, ascending in angle. Missing peaks are
    /// filled with the largest remaining grid values and flagged.
    pub fn peaks(&self, k: usize) -> DoaEstimate {
        let by_value = |a: &usize, b: &usize| {
            self.values[*b]
                .total_cmp(&self.values[*a])
                .then(a.cmp(b))
        };
        let mut maxima = self.local_maxima();
        maxima.sort_by(by_value);
        maxima.truncate(k);
        let degraded = maxima.len() < k;
        if degraded {
            let mut rest: Vec<usize> = (0..self.values.len())
                .filter(|i| !maxima.contains(i))
                .collect();
            rest.sort_by(by_value);
            maxima.extend(rest.into_iter().take(k - maxima.len()));
        }
        let mut angles: Vec<f64> = maxima.iter().map(|&i| self.angles_deg[i]).collect();
        angles.sort_by(f64::total_cmp);
        DoaEstimate {
            angles_deg: angles,
            degraded,
        }
    }

    /// Largest spectrum value and its angle.
    pub fn strongest(&self) -> (f64, f64) {
        let i = (0..self.values.len())
            .max_by(|&a, &b| self.values[a].total_cmp(&self.values[b]).then(b.cmp(&a)))
            .expect("non-empty spectrum");
        (self.angles_deg[i], self.values[i])
    }

    /// Two-column CSV `angle_deg,p_mu`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("angle_deg,p_mu\n");
        for (a, v) in self.angles_deg.iter().zip(&self.values) {
            out.push_str(&format!("{a},{v}\n"));
        }
        out
    }
}

/// Steering matrix over an angle grid, one column per angle.
fn grid_steering(config: &ArrayConfig, angle_grid: &[f64]) -> Array2<Complex64> {
    let mn = config.virtual_size();
    let mut v = Array2::zeros((mn, angle_grid.len()));
    for (c, &theta) in angle_grid.iter().enumerate() {
        let a_t = steering_vector(theta, config.n_tx, config.spacing);
        let a_r = steering_vector(theta, config.n_rx, config.spacing);
        for m in 0..config.n_tx {
            for n in 0..config.n_rx {
                v[[m * config.n_rx + n, c]] = a_t[m] * a_r[n];
            }
        }
    }
    v
}

fn check_grid(angle_grid: &[f64]) -> Result<()> {
    if angle_grid.is_empty() {
        return Err(Error::InvalidArgument("empty angle grid".into()));
    }
    if angle_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("angle grid must be strictly increasing".into()));
    }
    Ok(())
}

fn spectrum_from_energy(energy: Array1<f64>, config: &ArrayConfig, angle_grid: &[f64]) -> MusicSpectrum {
    let values = energy
        .iter()
        .map(|&e| if e > 1.0 / SPECTRUM_CAP { (1.0 / e).min(SPECTRUM_CAP) } else { SPECTRUM_CAP })
        .collect();
    MusicSpectrum {
        angles_deg: angle_grid.to_vec(),
        values,
        config: *config,
    }
}

/// Pseudo-spectrum from an explicit noise basis `U_n`.
pub fn music_spectrum_from_basis(
    u_n: ArrayView2<Complex64>,
    config: &ArrayConfig,
    angle_grid: &[f64],
) -> Result<MusicSpectrum> {
    check_grid(angle_grid)?;
    if u_n.nrows() != config.virtual_size() {
        return Err(Error::Shape(format!(
            "noise basis has {} rows, {} array has {} virtual elements",
            u_n.nrows(),
            config,
            config.virtual_size()
        )));
    }
    let steering = grid_steering(config, angle_grid);
    Ok(spectrum_from_energy(
        noise_energy_direct(u_n, &steering),
        config,
        angle_grid,
    ))
}

/// Pseudo-spectrum of an eigen-split covariance.
pub fn music_spectrum(u: &NoiseSubspace, config: &ArrayConfig, angle_grid: &[f64]) -> Result<MusicSpectrum> {
    check_grid(angle_grid)?;
    if u.dim() != config.virtual_size() {
        return Err(Error::Shape(format!(
            "subspace dimension {} does not match {} array ({} virtual elements)",
            u.dim(),
            config,
            config.virtual_size()
        )));
    }
    let steering = grid_steering(config, angle_grid);
    Ok(spectrum_from_energy(
        u.noise_projection_energy(&steering),
        config,
        angle_grid,
    ))
}

/// Full MUSIC pass: covariance, eigen-split, spectrum scan, peak picking.
pub fn music_scan(y: &ReceivedSignal, k: usize, angle_grid: &[f64]) -> Result<(MusicSpectrum, DoaEstimate)> {
    let r = sample_covariance(y);
    let u = noise_subspace(&r, k)?;
    let spectrum = music_spectrum(&u, y.config(), angle_grid)?;
    let est = spectrum.peaks(k);
    Ok((spectrum, est))
}

/// The `k` strongest MUSIC peaks of `y`, ascending.
pub fn estimate_doa(y: &ReceivedSignal, k: usize, angle_grid: &[f64]) -> Result<DoaEstimate> {
    music_scan(y, k, angle_grid).map(|(_, est)| est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar_model::{synth_received, virtual_steering, Snr, TargetScene};
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn grid_helpers() {
        let g = default_angle_grid();
        assert_eq!(g.len(), 1801);
        assert_eq!(g[0], 0.0);
        assert_abs_diff_eq!(*g.last().unwrap(), 90.0, epsilon = 1e-9);
        assert_eq!(angle_grid(1.0, 2.0, 0.5), vec![1.0, 1.5, 2.0]);
    }

    #[test]
    fn covariance_of_single_column() {
        let cfg = ArrayConfig::new(2, 2).unwrap();
        let v = virtual_steering(17.0, &cfg);
        let y = ReceivedSignal::new(v.clone().insert_axis(ndarray::Axis(1)), cfg, Snr::Noiseless).unwrap();
        let r = sample_covariance(&y);
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!((r[[i, j]] - v[i] * v[j].conj()).norm(), 0.0, epsilon = 1e-15);
            }
        }
        let (vals, _) = hermitian_eigen(&r).unwrap();
        assert_abs_diff_eq!(vals[0], 4.0, epsilon = 1e-12);
        assert!(vals[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn covariance_of_zero() {
        let cfg = ArrayConfig::new(2, 3).unwrap();
        let y = ReceivedSignal::new(Array2::zeros((6, 4)), cfg, Snr::Noiseless).unwrap();
        assert!(sample_covariance(&y).iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn noise_subspace_of_identity() {
        let r = Array2::<Complex64>::eye(4);
        let u = noise_subspace(&r, 1).unwrap();
        let un = u.basis();
        assert_eq!(un.dim(), (4, 3));
        let gram = un.t().mapv(|z| z.conj()).dot(&un);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!((gram[[i, j]] - c(expect, 0.0)).norm(), 0.0, epsilon = 1e-12);
            }
        }
        let cross = u.signal_basis().t().mapv(|z| z.conj()).dot(&un);
        assert!(cross.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn noise_subspace_is_orthogonal_to_rank_one_signal() {
        let cfg = ArrayConfig::new(3, 3).unwrap();
        let v = virtual_steering(40.0, &cfg);
        let sigma2 = 0.3;
        let r = Array2::from_shape_fn((9, 9), |(i, j)| {
            v[i] * v[j].conj() + if i == j { c(sigma2, 0.0) } else { c(0.0, 0.0) }
        });
        let u = noise_subspace(&r, 1).unwrap();
        let proj = u.basis().t().mapv(|z| z.conj()).dot(&v);
        assert!(proj.iter().all(|z| z.norm() < 1e-8));
        assert_abs_diff_eq!(u.eigenvalues()[0], 9.0 + sigma2, epsilon = 1e-10);
    }

    #[test]
    fn noise_subspace_rejects_bad_k() {
        let r = Array2::<Complex64>::eye(4);
        assert!(noise_subspace(&r, 4).is_err());
        assert!(noise_subspace(&r, 0).is_err());
    }

    #[test]
    fn both_spectrum_routes_agree() {
        let cfg = ArrayConfig::new(4, 3).unwrap();
        let scene = TargetScene::with_random_rcs(vec![20.0, 50.0], 60, 2).unwrap();
        let y = synth_received(&scene, &cfg, Snr::Db(5.0), 3).unwrap();
        let grid = angle_grid(0.0, 90.0, 0.5);
        let r = sample_covariance(&y);
        for k in [2, 9] {
            let u = noise_subspace(&r, k).unwrap();
            let a = music_spectrum(&u, &cfg, &grid).unwrap();
            let b = music_spectrum_from_basis(u.basis(), &cfg, &grid).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_abs_diff_eq!(x / y, 1.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn noiseless_single_target_peak() {
        let cfg = ArrayConfig::new(4, 4).unwrap();
        let v = virtual_steering(37.23, &cfg);
        let r = Array2::from_shape_fn((16, 16), |(i, j)| v[i] * v[j].conj());
        let u = noise_subspace(&r, 1).unwrap();
        let grid = angle_grid(0.0, 90.0, 0.01);
        let spec = music_spectrum(&u, &cfg, &grid).unwrap();
        let (angle, _) = spec.strongest();
        assert!((angle - 37.23).abs() <= 0.01 + 1e-9, "peak at {angle}");
        assert!(spec.values.iter().all(|&p| p > 0.0 && p.is_finite()));
    }

    #[test]
    fn two_well_separated_targets() {
        let cfg = ArrayConfig::new(16, 16).unwrap();
        let scene = TargetScene::with_random_rcs(vec![20.0, 60.0], 50, 4).unwrap();
        let y = synth_received(&scene, &cfg, Snr::Noiseless, 0).unwrap();
        let est = estimate_doa(&y, 2, &default_angle_grid()).unwrap();
        assert!(!est.degraded);
        assert!((est.angles_deg[0] - 20.0).abs() <= 0.05 + 1e-9);
        assert!((est.angles_deg[1] - 60.0).abs() <= 0.05 + 1e-9);
    }

    #[test]
    fn peak_picking_rules() {
        let spec = MusicSpectrum {
            angles_deg: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            values: vec![5.0, 1.0, 3.0, 3.0, 2.0, 4.0],
            config: ArrayConfig::new(1, 2).unwrap(),
        };
        // plateau at 2/3 is not a strict maximum; both endpoints are
        assert_eq!(spec.local_maxima(), vec![0, 5]);
        let est = spec.peaks(2);
        assert_eq!(est.angles_deg, vec![0.0, 5.0]);
        assert!(!est.degraded);
        let est = spec.peaks(3);
        assert!(est.degraded);
        assert_eq!(est.angles_deg, vec![0.0, 2.0, 5.0]);
        assert!(spec.to_csv().starts_with("angle_deg,p_mu\n0,5\n"));
    }

    #[test]
    fn scaling_does_not_move_estimates() {
        let cfg = ArrayConfig::new(5, 4).unwrap();
        let scene = TargetScene::with_random_rcs(vec![25.0, 40.0, 41.0], 80, 6).unwrap();
        let y = synth_received(&scene, &cfg, Snr::Db(0.0), 8).unwrap();
        let grid = angle_grid(0.0, 90.0, 0.1);
        let base = estimate_doa(&y, 3, &grid).unwrap();
        let scaled = ReceivedSignal::new(y.data().mapv(|z| z * c(-3.0, 7.5)), cfg, y.snr()).unwrap();
        assert_eq!(estimate_doa(&scaled, 3, &grid).unwrap(), base);
    }
}
