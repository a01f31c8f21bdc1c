//! Synthetic benchmark generator: a piecewise-constant multi-region weight
//! image, spatially smoothed Gaussian noise designs with block cross-region
//! covariance, and noisy linear targets at a fixed SNR.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{Dataset, Targets};

/// An axis-aligned rectangular predictive region with a constant weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    /// Top-left corner as (row, col), row 0 at the top.
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    /// Weight value painted over the region.
    pub value: f64,
}

impl Region {
    fn new(name: &str, row: usize, col: usize, height: usize, width: usize, value: f64) -> Self {
        Region {
            name: name.into(),
            row,
            col,
            height,
            width,
            value,
        }
    }

    /// Flat voxel ids covered by the region on an `nx`-wide grid.
    pub fn cells(&self, nx: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.height * self.width);
        for r in self.row..self.row + self.height {
            for c in self.col..self.col + self.width {
                out.push(r * nx + c);
            }
        }
        out
    }
}

fn default_regions() -> Vec<Region> {
    vec![
        Region::new("C1", 6, 6, 8, 8, 1.0),
        Region::new("C2", 26, 6, 8, 8, 1.0),
        Region::new("C3", 6, 31, 3, 3, 1.0),
    ]
}

fn default_covariances() -> Vec<(usize, usize, f64)> {
    vec![(0, 1, 0.3), (1, 2, -0.2)]
}

fn default_n() -> usize {
    300
}
fn default_dims() -> (usize, usize) {
    (40, 40)
}
fn default_sigma() -> f64 {
    2.0
}
fn default_snr() -> f64 {
    10.0
}

/// Full description of the synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    /// Number of sample images.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Grid dimensions (nx, ny).
    #[serde(default = "default_dims")]
    pub dims: (usize, usize),
    /// Gaussian smoothing standard deviation, in pixels.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Signal-to-noise ratio of the targets, in dB.
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    /// Predictive regions (disjoint).
    #[serde(default = "default_regions")]
    pub regions: Vec<Region>,
    /// Cross-region covariance entries `(region_a, region_b, value)`.
    #[serde(default = "default_covariances")]
    pub covariances: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            n: default_n(),
            dims: default_dims(),
            sigma: default_sigma(),
            snr_db: default_snr(),
            regions: default_regions(),
            covariances: default_covariances(),
            seed: 0,
        }
    }
}

impl SimulationSpec {
    pub fn p(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    fn validate(&self) -> Result<()> {
        let (nx, ny) = self.dims;
        if nx == 0 || ny == 0 {
            return Err(Error::BadSimulationSpec("grid dimensions must be positive".into()));
        }
        if self.snr_db <= 0.0 || !self.snr_db.is_finite() {
            return Err(Error::BadSimulationSpec("SNR must be positive".into()));
        }
        if self.sigma <= 0.0 || !self.sigma.is_finite() {
            return Err(Error::BadSimulationSpec("smoothing sigma must be positive".into()));
        }
        let mut covered = vec![false; self.p()];
        for region in &self.regions {
            if region.col + region.width > nx || region.row + region.height > ny {
                return Err(Error::BadSimulationSpec(format!(
                    "region {} exceeds the grid",
                    region.name
                )));
            }
            for cell in region.cells(nx) {
                if covered[cell] {
                    return Err(Error::BadSimulationSpec(format!(
                        "region {} overlaps another region",
                        region.name
                    )));
                }
                covered[cell] = true;
            }
        }
        for &(a, b, v) in &self.covariances {
            if a >= self.regions.len() || b >= self.regions.len() || a == b {
                return Err(Error::BadSimulationSpec(format!(
                    "covariance pair ({a},{b}) does not name two distinct regions"
                )));
            }
            if !v.is_finite() {
                return Err(Error::BadSimulationSpec("non-finite covariance value".into()));
            }
        }
        Ok(())
    }
}

/// The ground-truth weight image: each region's value painted over its
/// cells, zero elsewhere.
pub fn make_truth(spec: &SimulationSpec) -> Result<Array1<f64>> {
    spec.validate()?;
    let mut w = Array1::zeros(spec.p());
    for region in &spec.regions {
        for cell in region.cells(spec.dims.0) {
            w[cell] = region.value;
        }
    }
    Ok(w)
}

/// Truncated, normalized 1D Gaussian kernel (cut at 4 sigma); weights sum
/// to 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur of a row-major image. Near the border the kernel
/// is renormalized over in-bounds taps, so constant images are preserved.
pub fn blur_image(img: &[f64], nx: usize, ny: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = kernel.len() / 2;
    let mut tmp = vec![0.0; img.len()];
    // Along x.
    for r in 0..ny {
        for c in 0..nx {
            let mut acc = 0.0;
            let mut weight = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let cc = c as i64 + t as i64 - radius as i64;
                if cc >= 0 && (cc as usize) < nx {
                    acc += kv * img[r * nx + cc as usize];
                    weight += kv;
                }
            }
            tmp[r * nx + c] = acc / weight;
        }
    }
    // Along y.
    let mut out = vec![0.0; img.len()];
    for r in 0..ny {
        for c in 0..nx {
            let mut acc = 0.0;
            let mut weight = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let rr = r as i64 + t as i64 - radius as i64;
                if rr >= 0 && (rr as usize) < ny {
                    acc += kv * tmp[rr as usize * nx + c];
                    weight += kv;
                }
            }
            out[r * nx + c] = acc / weight;
        }
    }
    out
}

/// Square root of the block cross-region covariance, in factored form.
///
/// The covariance is the identity plus rank-k blocks spanned by the
/// normalized region indicators, so its eigendecomposition reduces to a
/// k x k symmetric problem. Eigenvalues are clamped at zero before the
/// square root: the literal block construction is indefinite for large
/// regions, and the projection keeps the sign pattern of the requested
/// cross-correlations.
struct SqrtCovariance {
    /// Eigenvectors over voxel space: sparse columns of (U V).
    vectors: Vec<Vec<(usize, f64)>>,
    /// `sqrt(clamped eigenvalue) - 1` per vector.
    scale_minus_one: Vec<f64>,
}

impl SqrtCovariance {
    fn build(spec: &SimulationSpec) -> Self {
        let k = spec.regions.len();
        let nx = spec.dims.0;
        let cells: Vec<Vec<usize>> = spec.regions.iter().map(|r| r.cells(nx)).collect();
        let sizes: Vec<f64> = cells.iter().map(|c| c.len() as f64).collect();
        // k x k reduced matrix of I + blocks in the normalized-indicator basis.
        let mut m = vec![vec![0.0; k]; k];
        for i in 0..k {
            m[i][i] = 1.0;
        }
        for &(a, b, v) in &spec.covariances {
            let coupling = v * (sizes[a] * sizes[b]).sqrt();
            m[a][b] += coupling;
            m[b][a] += coupling;
        }
        let (eigvals, eigvecs) = jacobi_eigen(m);
        let mut vectors = Vec::with_capacity(k);
        let mut scale_minus_one = Vec::with_capacity(k);
        for (i, lambda) in eigvals.iter().enumerate() {
            let clamped = lambda.max(0.0);
            scale_minus_one.push(clamped.sqrt() - 1.0);
            // Column i of U V: sum_r V[r][i] * indicator_r / sqrt(|r|).
            let mut col = Vec::new();
            for r in 0..k {
                let coef = eigvecs[r][i] / sizes[r].sqrt();
                if coef != 0.0 {
                    for &cell in &cells[r] {
                        col.push((cell, coef));
                    }
                }
            }
            vectors.push(col);
        }
        SqrtCovariance {
            vectors,
            scale_minus_one,
        }
    }

    /// `y = Sigma^{1/2} x`, in place.
    fn apply(&self, x: &mut [f64]) {
        for (col, &s) in self.vectors.iter().zip(&self.scale_minus_one) {
            if s == 0.0 {
                continue;
            }
            let z: f64 = col.iter().map(|&(i, c)| c * x[i]).sum();
            for &(i, c) in col {
                x[i] += s * z * c;
            }
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix;
/// returns (eigenvalues, eigenvector columns).
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = a.len();
    let mut v = vec![vec![0.0; k]; k];
    for i in 0..k {
        v[i][i] = 1.0;
    }
    for _ in 0..200 {
        let mut off = 0.0;
        for p in 0..k {
            for q in (p + 1)..k {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..k {
            for q in (p + 1)..k {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (2.0 * a[p][q]).atan2(a[p][p] - a[q][q]);
                let (c, s) = (theta.cos(), theta.sin());
                for i in 0..k {
                    let (aip, aiq) = (a[i][p], a[i][q]);
                    a[i][p] = c * aip + s * aiq;
                    a[i][q] = -s * aip + c * aiq;
                }
                for i in 0..k {
                    let (api, aqi) = (a[p][i], a[q][i]);
                    a[p][i] = c * api + s * aqi;
                    a[q][i] = -s * api + c * aqi;
                }
                for i in 0..k {
                    let (vip, viq) = (v[i][p], v[i][q]);
                    v[i][p] = c * vip + s * viq;
                    v[i][q] = -s * vip + c * viq;
                }
            }
        }
    }
    let eigvals = (0..k).map(|i| a[i][i]).collect();
    (eigvals, v)
}

/// Dense covariance matrix as constructed (before the PSD projection);
/// intended for audits and tests.
pub fn dense_covariance(spec: &SimulationSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let p = spec.p();
    let nx = spec.dims.0;
    let mut sigma = Array2::eye(p);
    for &(a, b, v) in &spec.covariances {
        for &i in &spec.regions[a].cells(nx) {
            for &j in &spec.regions[b].cells(nx) {
                sigma[[i, j]] = v;
                sigma[[j, i]] = v;
            }
        }
    }
    Ok(sigma)
}

/// Generate the synthetic dataset: each sample is i.i.d. normal noise,
/// Gaussian-blurred, then colored by the covariance square root; targets are
/// `w . x` plus white noise rescaled so the realized SNR matches the spec
/// exactly. Deterministic given the seed.
pub fn simulate(spec: &SimulationSpec) -> Result<Dataset> {
    spec.validate()?;
    let (nx, ny) = spec.dims;
    let p = spec.p();
    let truth = make_truth(spec)?;
    let kernel = gaussian_kernel(spec.sigma);
    let sqrt_cov = SqrtCovariance::build(spec);

    let mut rng = crate::rng::stream(spec.seed, "simulate-images");
    let mut x = Array2::zeros((spec.n, p));
    let mut img = vec![0.0; p];
    for i in 0..spec.n {
        for v in img.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut blurred = blur_image(&img, nx, ny, &kernel);
        sqrt_cov.apply(&mut blurred);
        for (j, &v) in blurred.iter().enumerate() {
            x[[i, j]] = v;
        }
    }

    let signal = x.dot(&truth);
    let var_signal = variance(signal.as_slice().expect("contiguous"));
    let target_noise_var = var_signal / 10f64.powf(spec.snr_db / 10.0);

    let mut noise_rng = crate::rng::stream(spec.seed, "simulate-noise");
    let eps: Vec<f64> = (0..spec.n).map(|_| noise_rng.sample(StandardNormal)).collect();
    let var_eps = variance(&eps);
    let scale = if var_eps > 0.0 {
        (target_noise_var / var_eps).sqrt()
    } else {
        0.0
    };
    let y = Array1::from_iter(
        signal
            .iter()
            .zip(&eps)
            .map(|(&s, &e)| s + e * scale),
    );

    Dataset::new(x, Targets::Real(y), None)
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}
