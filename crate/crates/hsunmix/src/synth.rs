//! Synthetic scene generation: Potts label fields, simplex-uniform
//! abundances, per-class mixing models, and SNR-calibrated noise.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::model::{
    build_interaction_matrix, AbundanceMatrix, EndmemberMatrix, InteractionDictionary,
    SpectralCube,
};

/// Default number of Gibbs sweeps for the label field.
pub const DEFAULT_POTTS_SWEEPS: usize = 100;

/// Per-pixel stream tags keeping the abundance, mixing, and noise draws
/// statistically independent of each other.
const STREAM_ABUNDANCE: u64 = 1;
const STREAM_MIX: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_POTTS: u64 = 4;
const STREAM_ENDMEMBERS: u64 = 5;

/// Mixing model attached to one spatial class.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassModel {
    /// Pure linear mixture, zero residual.
    Lmm,
    /// Interaction residual of order up to `k` with dense nonnegative
    /// coefficients from a truncated Gaussian.
    Nlk { k: u32, gamma_sigma2: f64 },
    /// Bilinear residual with uniform pair coefficients.
    Gbm { coeff_lo: f64, coeff_hi: f64 },
    /// Polynomial post-nonlinearity `b (Ma) .* (Ma)`.
    Ppnmm { b: f64 },
    /// Endmember variability: smooth Gaussian perturbations per endmember.
    Ev { eps2: f64, corr_len: f64 },
    /// Mismodelling effects: one smooth Gaussian residual per pixel.
    Me { eps2: f64, corr_len: f64 },
}

impl ClassModel {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        match *self {
            ClassModel::Lmm => Ok(()),
            ClassModel::Nlk { k, gamma_sigma2 } => {
                if k < 2 {
                    bad("interaction order must be >= 2")
                } else if !(gamma_sigma2 > 0.0) {
                    bad("gamma variance must be positive")
                } else {
                    Ok(())
                }
            }
            ClassModel::Gbm { coeff_lo, coeff_hi } => {
                if !(0.0 <= coeff_lo && coeff_lo <= coeff_hi && coeff_hi <= 1.0) {
                    bad("GBM coefficients need 0 <= lo <= hi <= 1")
                } else {
                    Ok(())
                }
            }
            ClassModel::Ppnmm { b } => {
                if b.is_finite() {
                    Ok(())
                } else {
                    bad("PPNMM coefficient must be finite")
                }
            }
            ClassModel::Ev { eps2, corr_len } | ClassModel::Me { eps2, corr_len } => {
                if !(eps2 > 0.0) {
                    bad("residual variance must be positive")
                } else if !(corr_len > 0.0) {
                    bad("correlation length must be positive")
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Full recipe for a synthetic scene.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub l: usize,
    pub r: usize,
    pub classes: Vec<ClassModel>,
    pub beta: f64,
    pub snr_db: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Four classes: linear, third-order interactions, bilinear, and
    /// polynomial post-nonlinear.
    pub fn i1(r: usize, seed: u64) -> Self {
        Self {
            rows: 100,
            cols: 100,
            l: 207,
            r,
            classes: vec![
                ClassModel::Lmm,
                ClassModel::Nlk { k: 3, gamma_sigma2: 0.1 },
                ClassModel::Gbm { coeff_lo: 0.8, coeff_hi: 1.0 },
                ClassModel::Ppnmm { b: 0.5 },
            ],
            beta: 0.8,
            snr_db: 25.0,
            seed,
        }
    }

    /// Three classes: linear, endmember variability, and smooth
    /// mismodelling residuals.
    pub fn i2(r: usize, seed: u64) -> Self {
        let corr_len = 207.0 / 20.0;
        Self {
            rows: 100,
            cols: 100,
            l: 207,
            r,
            classes: vec![
                ClassModel::Lmm,
                ClassModel::Ev { eps2: 0.001, corr_len },
                ClassModel::Me { eps2: 0.002, corr_len },
            ],
            beta: 0.8,
            snr_db: 25.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidArgument("scene must have pixels".into()));
        }
        if self.l < 8 {
            return Err(Error::InvalidArgument("need at least 8 bands".into()));
        }
        if self.r < 2 {
            return Err(Error::InvalidArgument("need at least 2 endmembers".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidArgument("class list must be non-empty".into()));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidArgument("SNR must be finite".into()));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::InvalidArgument("beta must be finite and >= 0".into()));
        }
        for c in &self.classes {
            c.validate()?;
        }
        Ok(())
    }
}

/// Scene artifacts plus everything needed to score an unmixing run.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub labels: Vec<usize>,
    pub abundances: AbundanceMatrix,
    pub clean: SpectralCube,
    pub noisy: SpectralCube,
    /// Per-pixel residual term of the clean signal, `clean - M A`.
    pub residuals: DMatrix<f64>,
    pub sigma2: f64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Counter-based per-pixel stream: the generator for a pixel depends only
/// on `(seed, stream, pixel)`, so generation order and thread count do not
/// affect the output.
pub fn pixel_rng(seed: u64, stream: u64, pixel: u64) -> ChaCha8Rng {
    let mut state = seed ^ stream.wrapping_mul(0xd1342543de82ef95) ^ pixel.rotate_left(32);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Samples a label map by Gibbs sampling a 4-neighbor Potts field with
/// checkerboard sweeps from an i.i.d. uniform start.
pub fn sample_potts_labels(
    rows: usize,
    cols: usize,
    n_classes: usize,
    beta: f64,
    sweeps: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if sweeps < 1 {
        return Err(Error::InvalidArgument("need at least one sweep".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("empty lattice".into()));
    }
    let mut rng = pixel_rng(seed, STREAM_POTTS, 0);
    let mut labels: Vec<usize> = (0..rows * cols)
        .map(|_| rng.random_range(0..n_classes))
        .collect();
    let mut weights = vec![0.0f64; n_classes];
    for _ in 0..sweeps {
        for parity in 0..2 {
            for i in 0..rows {
                for j in 0..cols {
                    if (i + j) % 2 != parity {
                        continue;
                    }
                    weights.fill(0.0);
                    if i > 0 {
                        weights[labels[(i - 1) * cols + j]] += 1.0;
                    }
                    if i + 1 < rows {
                        weights[labels[(i + 1) * cols + j]] += 1.0;
                    }
                    if j > 0 {
                        weights[labels[i * cols + j - 1]] += 1.0;
                    }
                    if j + 1 < cols {
                        weights[labels[i * cols + j + 1]] += 1.0;
                    }
                    let mut total = 0.0;
                    for w in weights.iter_mut() {
                        *w = (beta * *w).exp();
                        total += *w;
                    }
                    let mut u = rng.random_range(0.0..total);
                    let mut choice = n_classes - 1;
                    for (c, &w) in weights.iter().enumerate() {
                        if u < w {
                            choice = c;
                            break;
                        }
                        u -= w;
                    }
                    labels[i * cols + j] = choice;
                }
            }
        }
    }
    Ok(labels)
}

/// Samples abundance columns i.i.d. uniform on the simplex (symmetric
/// Dirichlet with unit parameters, via normalized unit exponentials).
pub fn sample_abundances(n: usize, r: usize, seed: u64) -> Result<AbundanceMatrix> {
    if r < 2 {
        return Err(Error::InvalidArgument("need at least 2 endmembers".into()));
    }
    let mut a = DMatrix::zeros(r, n);
    for px in 0..n {
        let mut rng = pixel_rng(seed, STREAM_ABUNDANCE, px as u64);
        let mut col = a.column_mut(px);
        let mut sum = 0.0;
        for v in col.iter_mut() {
            *v = -f64::ln(1.0 - rng.random::<f64>());
            sum += *v;
        }
        col.scale_mut(1.0 / sum);
    }
    AbundanceMatrix::new(a)
}

fn vector_angle_deg(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let cos = (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}

/// Generates synthetic endmember spectra as sums of positive Gaussian
/// bumps over a positive baseline, clipped to `[0.01, 1]`. Candidates are
/// regenerated until all pairwise spectral angles reach 5 degrees.
pub fn generate_endmembers(l: usize, r: usize, seed: u64) -> Result<EndmemberMatrix> {
    if l < 8 {
        return Err(Error::InvalidArgument("need at least 8 bands".into()));
    }
    if r < 2 {
        return Err(Error::InvalidArgument("need at least 2 endmembers".into()));
    }
    const MIN_ANGLE_DEG: f64 = 5.0;
    const MAX_ATTEMPTS: u64 = 100;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = pixel_rng(seed, STREAM_ENDMEMBERS, attempt);
        let mut m = DMatrix::zeros(l, r);
        for mut col in m.column_iter_mut() {
            let baseline = rng.random_range(0.05..0.3);
            let bumps = rng.random_range(3..=6);
            let mut params = Vec::with_capacity(bumps);
            for _ in 0..bumps {
                let center = rng.random_range(0.0..l as f64);
                // widths down to a few bands give the spectra sharp
                // features outside the span of low-order DCT terms
                let width = rng.random_range(l as f64 / 50.0..l as f64 / 10.0);
                let amp = rng.random_range(0.1..0.7);
                params.push((center, width, amp));
            }
            for (j, v) in col.iter_mut().enumerate() {
                let mut val = baseline;
                for &(center, width, amp) in &params {
                    let t = (j as f64 - center) / width;
                    val += amp * (-0.5 * t * t).exp();
                }
                *v = val.clamp(0.01, 1.0);
            }
        }
        let mut ok = true;
        'pairs: for i in 0..r {
            for j in i + 1..r {
                let angle = vector_angle_deg(
                    &m.column(i).clone_owned(),
                    &m.column(j).clone_owned(),
                );
                if angle < MIN_ANGLE_DEG {
                    ok = false;
                    break 'pairs;
                }
            }
        }
        if ok {
            return EndmemberMatrix::new(m);
        }
    }
    Err(Error::Numeric(format!(
        "no endmember set with pairwise angle >= {MIN_ANGLE_DEG} degrees after {MAX_ATTEMPTS} attempts"
    )))
}

/// Loads endmembers from a headerless CSV with one band per row and one
/// endmember per column.
pub fn load_endmembers(path: &Path) -> Result<EndmemberMatrix> {
    let m = io::read_csv(path)?;
    if m.iter().any(|&v| v < 0.0) {
        return Err(Error::Format("endmember spectra must be nonnegative".into()));
    }
    EndmemberMatrix::new(m)
}

/// Squared-exponential band covariance with a small diagonal jitter so
/// Cholesky factorization succeeds.
pub fn se_covariance(l: usize, corr_len: f64) -> Result<DMatrix<f64>> {
    if !(corr_len > 0.0) {
        return Err(Error::InvalidArgument("correlation length must be positive".into()));
    }
    let mut sigma = DMatrix::from_fn(l, l, |i, j| {
        let d = i as f64 - j as f64;
        (-d * d / (2.0 * corr_len * corr_len)).exp()
    });
    for i in 0..l {
        sigma[(i, i)] += 1e-10;
    }
    Ok(sigma)
}

/// A class model with its per-scene caches (interaction dictionary or
/// covariance factor) built once.
#[derive(Debug, Clone)]
pub enum PreparedClass {
    Lmm,
    Nlk {
        dict: InteractionDictionary,
        sigma: f64,
    },
    Gbm {
        lo: f64,
        hi: f64,
    },
    Ppnmm {
        b: f64,
    },
    Ev {
        chol: DMatrix<f64>,
        eps: f64,
    },
    Me {
        chol: DMatrix<f64>,
        eps: f64,
    },
}

/// Builds the caches for one class model against a given endmember set.
pub fn prepare_class(model: &ClassModel, m: &EndmemberMatrix) -> Result<PreparedClass> {
    model.validate()?;
    Ok(match *model {
        ClassModel::Lmm => PreparedClass::Lmm,
        ClassModel::Nlk { k, gamma_sigma2 } => PreparedClass::Nlk {
            dict: build_interaction_matrix(m, k)?,
            sigma: gamma_sigma2.sqrt(),
        },
        ClassModel::Gbm { coeff_lo, coeff_hi } => PreparedClass::Gbm {
            lo: coeff_lo,
            hi: coeff_hi,
        },
        ClassModel::Ppnmm { b } => PreparedClass::Ppnmm { b },
        ClassModel::Ev { eps2, corr_len } | ClassModel::Me { eps2, corr_len } => {
            let sigma = se_covariance(m.bands(), corr_len)?;
            let chol = nalgebra::Cholesky::new(sigma)
                .ok_or_else(|| Error::Numeric("band covariance is not positive definite".into()))?
                .l();
            match model {
                ClassModel::Ev { .. } => PreparedClass::Ev { chol, eps: eps2.sqrt() },
                _ => PreparedClass::Me { chol, eps: eps2.sqrt() },
            }
        }
    })
}

fn smooth_sample(chol: &DMatrix<f64>, eps: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_fn(chol.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    chol * z * eps
}

/// Draws one clean pixel: returns the spectrum and the residual part so
/// that `spectrum = M a + residual` exactly.
pub fn mix_pixel(
    class: &PreparedClass,
    m: &EndmemberMatrix,
    a: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if a.len() != m.count() {
        return Err(Error::InvalidArgument(format!(
            "abundance vector has {} entries for {} endmembers",
            a.len(),
            m.count()
        )));
    }
    let linear = m.data() * a;
    let residual = match class {
        PreparedClass::Lmm => DVector::zeros(m.bands()),
        PreparedClass::Nlk { dict, sigma } => {
            let gamma = DVector::from_fn(dict.num_terms(), |_, _| loop {
                let g: f64 = rng.sample::<f64, _>(StandardNormal);
                if g >= 0.0 {
                    break g * sigma;
                }
            });
            dict.matrix() * gamma
        }
        PreparedClass::Gbm { lo, hi } => {
            let mut res = DVector::zeros(m.bands());
            for i in 0..m.count() {
                for j in i + 1..m.count() {
                    let gamma = if hi > lo {
                        rng.random_range(*lo..*hi)
                    } else {
                        *lo
                    };
                    let w = gamma * a[i] * a[j];
                    for b in 0..m.bands() {
                        res[b] += w * m.data()[(b, i)] * m.data()[(b, j)];
                    }
                }
            }
            res
        }
        PreparedClass::Ppnmm { b } => linear.component_mul(&linear) * *b,
        PreparedClass::Ev { chol, eps } => {
            let mut res = DVector::zeros(m.bands());
            for r in 0..m.count() {
                res += smooth_sample(chol, *eps, rng) * a[r];
            }
            res
        }
        PreparedClass::Me { chol, eps } => smooth_sample(chol, *eps, rng),
    };
    Ok((&linear + &residual, residual))
}

/// Adds i.i.d. Gaussian noise calibrated so the cube's SNR in decibels
/// matches the request. Returns the noisy cube and the noise variance.
pub fn add_noise(clean: &SpectralCube, snr_db: f64, seed: u64) -> Result<(SpectralCube, f64)> {
    let energy = clean.data().norm_squared();
    if energy == 0.0 {
        return Err(Error::InvalidArgument("cannot calibrate noise for a zero cube".into()));
    }
    let l = clean.bands();
    let n = clean.num_pixels();
    let sigma2 = energy / ((l * n) as f64 * 10f64.powf(snr_db / 10.0));
    let sigma = sigma2.sqrt();
    let mut noisy = clean.data().clone();
    for px in 0..n {
        let mut rng = pixel_rng(seed, STREAM_NOISE, px as u64);
        for v in noisy.column_mut(px).iter_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok((SpectralCube::new(noisy, clean.rows(), clean.cols())?, sigma2))
}

/// Runs the full pipeline: labels, abundances, per-class mixing, and
/// noise. Deterministic in the spec.
pub fn build_scene(spec: &SceneSpec) -> Result<(GroundTruth, EndmemberMatrix)> {
    spec.validate()?;
    let m = generate_endmembers(spec.l, spec.r, spec.seed)?;
    let truth = build_scene_with_endmembers(spec, &m)?;
    Ok((truth, m))
}

/// As `build_scene` but against caller-provided endmember spectra.
pub fn build_scene_with_endmembers(
    spec: &SceneSpec,
    m: &EndmemberMatrix,
) -> Result<GroundTruth> {
    spec.validate()?;
    if m.bands() != spec.l || m.count() != spec.r {
        return Err(Error::InvalidArgument(format!(
            "endmembers are {}x{}, spec wants {}x{}",
            m.bands(),
            m.count(),
            spec.l,
            spec.r
        )));
    }
    let n = spec.rows * spec.cols;
    let labels = if spec.classes.len() == 1 {
        vec![0usize; n]
    } else {
        sample_potts_labels(
            spec.rows,
            spec.cols,
            spec.classes.len(),
            spec.beta,
            DEFAULT_POTTS_SWEEPS,
            spec.seed,
        )?
    };
    let abundances = sample_abundances(n, spec.r, spec.seed)?;
    let prepared: Vec<PreparedClass> = spec
        .classes
        .iter()
        .map(|c| prepare_class(c, m))
        .collect::<Result<_>>()?;

    let mut clean = DMatrix::zeros(spec.l, n);
    let mut residuals = DMatrix::zeros(spec.l, n);
    for px in 0..n {
        let mut rng = pixel_rng(spec.seed, STREAM_MIX, px as u64);
        let a = abundances.data().column(px).clone_owned();
        let (y, res) = mix_pixel(&prepared[labels[px]], m, &a, &mut rng)?;
        clean.set_column(px, &y);
        residuals.set_column(px, &res);
    }
    let clean = SpectralCube::new(clean, spec.rows, spec.cols)?;
    let (noisy, sigma2) = add_noise(&clean, spec.snr_db, spec.seed)?;
    Ok(GroundTruth {
        labels,
        abundances,
        clean,
        noisy,
        residuals,
        sigma2,
    })
}
