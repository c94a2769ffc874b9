//! Browser demo bindings: generate a small synthetic scene, unmix it in
//! the page, and read back grayscale maps for canvas rendering.

use wasm_bindgen::prelude::*;

use hsunmix::eval;
use hsunmix::model::EndmemberMatrix;
use hsunmix::synth::{self, GroundTruth, SceneSpec};
use hsunmix::unmixers::{self, UnmixResult, UnmixSpec};

fn to_gray(values: &[f64]) -> Vec<u8> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - min) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

fn err(e: hsunmix::Error) -> String {
    e.to_string()
}

/// A generated scene plus the most recent unmixing run.
#[wasm_bindgen]
pub struct Demo {
    spec: SceneSpec,
    truth: GroundTruth,
    endmembers: EndmemberMatrix,
    result: Option<UnmixResult>,
}

#[wasm_bindgen]
impl Demo {
    /// Builds a scene. `preset` is "i1" (nonlinear classes) or "i2"
    /// (variability and mismodelling classes); `size` is the image edge.
    #[wasm_bindgen(constructor)]
    pub fn new(preset: &str, size: usize, snr_db: f64, seed: u64) -> Result<Demo, String> {
        let mut spec = match preset {
            "i1" => SceneSpec::i1(3, seed),
            "i2" => SceneSpec::i2(3, seed),
            other => return Err(format!("unknown preset {other:?}")),
        };
        spec.rows = size;
        spec.cols = size;
        spec.l = 100;
        spec.snr_db = snr_db;
        if preset == "i2" {
            spec.classes = vec![
                synth::ClassModel::Lmm,
                synth::ClassModel::Ev { eps2: 0.001, corr_len: 10.0 },
                synth::ClassModel::Me { eps2: 0.002, corr_len: 10.0 },
            ];
        }
        let (truth, endmembers) = synth::build_scene(&spec).map_err(err)?;
        Ok(Demo {
            spec,
            truth,
            endmembers,
            result: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.spec.rows
    }

    pub fn cols(&self) -> usize {
        self.spec.cols
    }

    pub fn bands(&self) -> usize {
        self.spec.l
    }

    pub fn endmember_count(&self) -> usize {
        self.spec.r
    }

    pub fn class_count(&self) -> usize {
        self.spec.classes.len()
    }

    /// One noisy band of the cube as a row-major grayscale image.
    pub fn band_image(&self, band: usize) -> Result<Vec<u8>, String> {
        if band >= self.spec.l {
            return Err("band out of range".to_string());
        }
        let n = self.truth.noisy.num_pixels();
        let values: Vec<f64> = (0..n).map(|px| self.truth.noisy.data()[(band, px)]).collect();
        Ok(to_gray(&values))
    }

    /// The class label map, one gray level per class.
    pub fn label_image(&self) -> Vec<u8> {
        let values: Vec<f64> = self.truth.labels.iter().map(|&c| c as f64).collect();
        to_gray(&values)
    }

    /// Runs an unmixer ("linear", "nusal" or "rusal") and returns a short
    /// text summary with the error metrics.
    pub fn unmix(&mut self, method: &str, tau: f64, max_iter: usize) -> Result<String, String> {
        let mut spec = match method {
            "linear" => UnmixSpec::linear_baseline(),
            "nusal" => UnmixSpec::nusal(2),
            "rusal" => UnmixSpec::rusal(20),
            other => return Err(format!("unknown method {other:?}")),
        };
        if method != "linear" {
            spec.tau1 = tau;
            spec.tau2 = tau;
        }
        spec.solver.max_iter = max_iter;
        let result = unmixers::unmix(&self.truth.noisy, &self.endmembers, &spec).map_err(err)?;
        let armse = eval::armse(&self.truth.abundances, &result.abundances).map_err(err)?;
        let re = eval::reconstruction_error(&self.truth.noisy, &result.reconstruction)
            .map_err(err)?;
        let summary = format!(
            "{method}: aRMSE {armse:.4}, RE {re:.5}, {} iterations, converged: {}",
            result.report.iterations, result.report.converged
        );
        self.result = Some(result);
        Ok(summary)
    }

    /// Estimated abundance map for one endmember from the last run.
    pub fn abundance_image(&self, endmember: usize) -> Result<Vec<u8>, String> {
        let result = self.result.as_ref().ok_or_else(|| "run unmix first".to_string())?;
        if endmember >= self.spec.r {
            return Err("endmember out of range".to_string());
        }
        let a = result.abundances.data();
        let values: Vec<f64> = (0..a.ncols()).map(|px| a[(endmember, px)]).collect();
        Ok(to_gray(&values))
    }

    /// True abundance map for one endmember, for side-by-side comparison.
    pub fn true_abundance_image(&self, endmember: usize) -> Result<Vec<u8>, String> {
        if endmember >= self.spec.r {
            return Err("endmember out of range".to_string());
        }
        let a = self.truth.abundances.data();
        let values: Vec<f64> = (0..a.ncols()).map(|px| a[(endmember, px)]).collect();
        Ok(to_gray(&values))
    }

    /// Per-pixel energy unexplained by the linear term of the last run;
    /// bright pixels mark nonlinear or mismodelled areas.
    pub fn residual_image(&self) -> Result<Vec<u8>, String> {
        let result = self.result.as_ref().ok_or_else(|| "run unmix first".to_string())?;
        let map = eval::residual_energy_map(&self.truth.noisy, &self.endmembers, &result.abundances)
            .map_err(err)?;
        let values: Vec<f64> = (0..self.spec.rows)
            .flat_map(|i| (0..self.spec.cols).map(move |j| (i, j)))
            .map(|(i, j)| map[(i, j)])
            .collect();
        Ok(to_gray(&values))
    }
}
