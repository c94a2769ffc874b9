//! Quality metrics for unmixing runs: abundance RMSE (global and per
//! class), reconstruction error, spectral angle, residual energy maps,
//! and mean interaction profiles.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{
    AbundanceMatrix, EndmemberMatrix, InteractionDictionary, ResidualCoefficients, ResidualKind,
    SpectralCube,
};

/// A bundle of scalar metrics, ready to be serialized as `key=value` lines.
/// The spectral angle is stored in radians; presentation layers convert.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub armse: Option<f64>,
    pub per_class_rmse: Option<Vec<f64>>,
    pub re: f64,
    pub sam_rad: f64,
    pub runtime_s: f64,
}

impl MetricsReport {
    /// Serializes the report as `key=value` pairs with 17 significant
    /// digits. The angle is converted to degrees here.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if let Some(v) = self.armse {
            out.push(("armse".to_string(), format!("{v:.16e}")));
        }
        if let Some(per_class) = &self.per_class_rmse {
            for (c, v) in per_class.iter().enumerate() {
                out.push((format!("class_{c}_rmse"), format!("{v:.16e}")));
            }
        }
        out.push(("re".to_string(), format!("{:.16e}", self.re)));
        out.push((
            "sam_deg".to_string(),
            format!("{:.16e}", self.sam_rad.to_degrees()),
        ));
        out.push(("runtime_s".to_string(), format!("{:.16e}", self.runtime_s)));
        out
    }
}

fn check_same_shape(name: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!(
            "{name}: shape mismatch {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Root mean squared abundance error over all endmembers and pixels:
/// `sqrt(sum_n ||a_n - ahat_n||^2 / (N R))`.
pub fn armse(truth: &AbundanceMatrix, estimate: &AbundanceMatrix) -> Result<f64> {
    let t = truth.data();
    let e = estimate.data();
    check_same_shape("armse", t.shape(), e.shape())?;
    let diff = t - e;
    Ok((diff.norm_squared() / (t.nrows() * t.ncols()) as f64).sqrt())
}

/// aRMSE restricted to the pixels carrying the given label.
pub fn per_class_rmse(
    truth: &AbundanceMatrix,
    estimate: &AbundanceMatrix,
    labels: &[usize],
    class_id: usize,
) -> Result<f64> {
    let t = truth.data();
    let e = estimate.data();
    check_same_shape("per_class_rmse", t.shape(), e.shape())?;
    if labels.len() != t.ncols() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} pixels",
            labels.len(),
            t.ncols()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (n, &c) in labels.iter().enumerate() {
        if c == class_id {
            sum += (t.column(n) - e.column(n)).norm_squared();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyClass(class_id));
    }
    Ok((sum / (t.nrows() * count) as f64).sqrt())
}

/// Per-class RMSE for every class in `0..num_classes`; errors if any
/// class has no pixels.
pub fn all_class_rmse(
    truth: &AbundanceMatrix,
    estimate: &AbundanceMatrix,
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<f64>> {
    (0..num_classes)
        .map(|c| per_class_rmse(truth, estimate, labels, c))
        .collect()
}

/// Root mean squared reconstruction error over all bands and pixels.
pub fn reconstruction_error(observed: &SpectralCube, reconstruction: &SpectralCube) -> Result<f64> {
    let y = observed.data();
    let yh = reconstruction.data();
    check_same_shape("reconstruction_error", y.shape(), yh.shape())?;
    let diff = y - yh;
    Ok((diff.norm_squared() / (y.nrows() * y.ncols()) as f64).sqrt())
}

/// Mean spectral angle in radians between matching pixel pairs. The
/// cosine is clamped to `[-1, 1]` before `acos` so near-parallel vectors
/// cannot produce NaN.
pub fn sam(observed: &SpectralCube, reconstruction: &SpectralCube) -> Result<f64> {
    let y = observed.data();
    let yh = reconstruction.data();
    check_same_shape("sam", y.shape(), yh.shape())?;
    let mut total = 0.0;
    for n in 0..y.ncols() {
        let a = y.column(n);
        let b = yh.column(n);
        let na = a.norm();
        let nb = b.norm();
        if na == 0.0 || nb == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sam: pixel {n} has a zero-norm spectrum"
            )));
        }
        let cos = (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0);
        total += cos.acos();
    }
    Ok(total / y.ncols() as f64)
}

/// Per-pixel energy of the part of the signal not explained by the linear
/// term, `||y_n - M a_n||`, returned in row-major image layout.
pub fn residual_energy_map(
    observed: &SpectralCube,
    m: &EndmemberMatrix,
    abundances: &AbundanceMatrix,
) -> Result<DMatrix<f64>> {
    if observed.bands() != m.bands() {
        return Err(Error::InvalidArgument(format!(
            "cube has {} bands, endmembers have {}",
            observed.bands(),
            m.bands()
        )));
    }
    if abundances.count() != m.count() || abundances.num_pixels() != observed.num_pixels() {
        return Err(Error::InvalidArgument(
            "abundance shape does not match cube and endmembers".into(),
        ));
    }
    let linear = m.data() * abundances.data();
    let mut map = DMatrix::zeros(observed.rows(), observed.cols());
    for n in 0..observed.num_pixels() {
        let e = (observed.data().column(n) - linear.column(n)).norm();
        map[(n / observed.cols(), n % observed.cols())] = e;
    }
    Ok(map)
}

/// Mean interaction coefficient per dictionary term, `(1/N) sum_n gamma_n`,
/// aligned with the dictionary's multi-index ordering.
pub fn mean_interaction_profile(
    gamma: &ResidualCoefficients,
    dictionary: &InteractionDictionary,
) -> Result<Vec<f64>> {
    if gamma.kind() != ResidualKind::Nl {
        return Err(Error::InvalidArgument(
            "mean interaction profile needs interaction coefficients, not smooth ones".into(),
        ));
    }
    let x = gamma.data();
    if x.nrows() != dictionary.num_terms() {
        return Err(Error::InvalidArgument(format!(
            "{} coefficient rows for a {}-term dictionary",
            x.nrows(),
            dictionary.num_terms()
        )));
    }
    let n = x.ncols() as f64;
    Ok((0..x.nrows()).map(|t| x.row(t).sum() / n).collect())
}

/// Computes the full report in one pass. Ground truth and labels are
/// optional; the corresponding fields stay `None` without them.
pub fn metrics(
    observed: &SpectralCube,
    reconstruction: &SpectralCube,
    estimate: &AbundanceMatrix,
    truth: Option<&AbundanceMatrix>,
    labels: Option<(&[usize], usize)>,
    runtime_s: f64,
) -> Result<MetricsReport> {
    let armse_v = truth.map(|t| armse(t, estimate)).transpose()?;
    let per_class = match (truth, labels) {
        (Some(t), Some((lab, k))) => Some(all_class_rmse(t, estimate, lab, k)?),
        _ => None,
    };
    Ok(MetricsReport {
        armse: armse_v,
        per_class_rmse: per_class,
        re: reconstruction_error(observed, reconstruction)?,
        sam_rad: sam(observed, reconstruction)?,
        runtime_s,
    })
}
