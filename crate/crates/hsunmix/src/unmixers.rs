//! Problem assembly for the NUSAL-K, RUSAL, and linear-baseline unmixers,
//! plus the end-to-end `unmix` entry point and a regularization grid search.

use nalgebra::DMatrix;

use crate::admm::{self, Selection, SolverOptions, SolverReport, SplitProblem, SplitTerm, TermKind};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{
    build_dct_dictionary, build_interaction_matrix, AbundanceMatrix, EndmemberMatrix,
    ResidualCoefficients, ResidualKind, SpectralCube,
};

/// Highest supported interaction order.
pub const MAX_INTERACTION_ORDER: u32 = 5;

/// Regularization grids searched in the experiments.
pub const NUSAL_TAU_GRID: [f64; 3] = [0.01, 0.05, 0.1];
pub const RUSAL_TAU_GRID: [f64; 6] = [0.001, 0.003, 0.006, 0.01, 0.05, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Nonlinear unmixing with interaction orders up to K.
    Nusal { k: u32 },
    /// Robust unmixing with a D-term DCT residual expansion.
    Rusal { d: usize },
    /// Fully constrained linear unmixing (no residual term).
    LinearBaseline,
}

#[derive(Debug, Clone)]
pub struct UnmixSpec {
    pub method: Method,
    pub tau1: f64,
    pub tau2: f64,
    pub solver: SolverOptions,
}

impl UnmixSpec {
    pub fn nusal(k: u32) -> Self {
        Self {
            method: Method::Nusal { k },
            tau1: 0.05,
            tau2: 0.05,
            solver: SolverOptions::default(),
        }
    }

    pub fn rusal(d: usize) -> Self {
        Self {
            method: Method::Rusal { d },
            tau1: 0.01,
            tau2: 0.01,
            solver: SolverOptions::default(),
        }
    }

    pub fn linear_baseline() -> Self {
        Self {
            method: Method::LinearBaseline,
            tau1: 0.0,
            tau2: 0.0,
            solver: SolverOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.tau1.is_finite() || !self.tau2.is_finite() || self.tau1 < 0.0 || self.tau2 < 0.0 {
            return Err(Error::InvalidArgument("tau values must be finite and >= 0".into()));
        }
        match self.method {
            Method::Nusal { k } => {
                if !(2..=MAX_INTERACTION_ORDER).contains(&k) {
                    return Err(Error::InvalidArgument(format!(
                        "interaction order must be in 2..={MAX_INTERACTION_ORDER}, got {k}"
                    )));
                }
            }
            Method::Rusal { d } => {
                if d < 1 {
                    return Err(Error::InvalidArgument("DCT dimension must be >= 1".into()));
                }
            }
            Method::LinearBaseline => {}
        }
        Ok(())
    }
}

/// Everything a solve produces, unpacked into domain types.
#[derive(Debug, Clone)]
pub struct UnmixResult {
    pub abundances: AbundanceMatrix,
    pub residual_coeffs: Option<ResidualCoefficients>,
    pub reconstruction: SpectralCube,
    /// The per-pixel residual term `P X` (zero for the linear baseline).
    pub residual_term: DMatrix<f64>,
    pub report: SolverReport,
}

fn five_terms(
    y: &SpectralCube,
    stacked: DMatrix<f64>,
    tau1: f64,
    tau2: f64,
    nonneg_on_all: bool,
) -> Vec<SplitTerm> {
    vec![
        SplitTerm::quadratic(y.data().clone(), stacked),
        SplitTerm {
            kind: TermKind::L1 { tau: tau1 },
            h: Selection::ResidualRows,
        },
        SplitTerm {
            kind: TermKind::L21 { tau: tau2 },
            h: Selection::ResidualRows,
        },
        SplitTerm {
            kind: TermKind::NonNegIndicator,
            h: if nonneg_on_all {
                Selection::Identity
            } else {
                Selection::AbundanceRows
            },
        },
        SplitTerm {
            kind: TermKind::SumToOneIndicator,
            h: Selection::AbundanceRows,
        },
    ]
}

/// NUSAL-K splitting: quadratic on all of Z, l1 and l2,1 on the interaction
/// coefficients, nonnegativity on all of Z, sum-to-one on the abundances.
pub fn assemble_nusal(
    y: &SpectralCube,
    m: &EndmemberMatrix,
    spec: &UnmixSpec,
) -> Result<SplitProblem> {
    let k = match spec.method {
        Method::Nusal { k } => k,
        _ => return Err(Error::InvalidArgument("spec method is not NUSAL".into())),
    };
    spec.validate()?;
    check_shapes(y, m)?;
    let dict = build_interaction_matrix(m, k)?;
    let d = dict.num_terms();
    let l = y.bands();
    let r = m.count();
    let mut stacked = DMatrix::zeros(l, r + d);
    stacked.columns_mut(0, r).copy_from(m.data());
    stacked.columns_mut(r, d).copy_from(dict.matrix());
    let terms = five_terms(y, stacked, spec.tau1, spec.tau2, true);
    SplitProblem::new(terms, r, d, y.num_pixels(), l)
}

/// RUSAL splitting: as NUSAL but over a DCT dictionary and with
/// nonnegativity restricted to the abundance rows.
pub fn assemble_rusal(
    y: &SpectralCube,
    m: &EndmemberMatrix,
    spec: &UnmixSpec,
) -> Result<SplitProblem> {
    let d = match spec.method {
        Method::Rusal { d } => d,
        _ => return Err(Error::InvalidArgument("spec method is not RUSAL".into())),
    };
    spec.validate()?;
    check_shapes(y, m)?;
    let l = y.bands();
    let r = m.count();
    let dict = build_dct_dictionary(l, d)?;
    let mut stacked = DMatrix::zeros(l, r + d);
    stacked.columns_mut(0, r).copy_from(m.data());
    stacked.columns_mut(r, d).copy_from(dict.basis());
    let terms = five_terms(y, stacked, spec.tau1, spec.tau2, false);
    SplitProblem::new(terms, r, d, y.num_pixels(), l)
}

/// Fully constrained linear unmixing: data term, nonnegativity, sum-to-one.
pub fn assemble_linear_baseline(y: &SpectralCube, m: &EndmemberMatrix) -> Result<SplitProblem> {
    check_shapes(y, m)?;
    let r = m.count();
    let terms = vec![
        SplitTerm::quadratic(y.data().clone(), m.data().clone()),
        SplitTerm {
            kind: TermKind::NonNegIndicator,
            h: Selection::AbundanceRows,
        },
        SplitTerm {
            kind: TermKind::SumToOneIndicator,
            h: Selection::AbundanceRows,
        },
    ];
    SplitProblem::new(terms, r, 0, y.num_pixels(), y.bands())
}

fn check_shapes(y: &SpectralCube, m: &EndmemberMatrix) -> Result<()> {
    if y.bands() != m.bands() {
        return Err(Error::InvalidArgument(format!(
            "cube has {} bands, endmembers have {}",
            y.bands(),
            m.bands()
        )));
    }
    Ok(())
}

/// Assembles the requested problem, runs the solver, and unpacks Z into
/// abundances and residual coefficients. Small constraint violations left
/// by ADMM are cleaned up: negative abundances are clamped to zero and the
/// columns renormalized to the simplex.
pub fn unmix(y: &SpectralCube, m: &EndmemberMatrix, spec: &UnmixSpec) -> Result<UnmixResult> {
    spec.validate()?;
    let problem = match spec.method {
        Method::Nusal { .. } => assemble_nusal(y, m, spec)?,
        Method::Rusal { .. } => assemble_rusal(y, m, spec)?,
        Method::LinearBaseline => assemble_linear_baseline(y, m)?,
    };
    let (state, report) = admm::solve(&problem, &spec.solver, None)?;
    let (r, d, n, _) = problem.dims();

    let mut a = state.z.rows(0, r).clone_owned();
    for mut col in a.column_iter_mut() {
        for v in col.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let s = col.sum();
        if s > 0.0 {
            col.scale_mut(1.0 / s);
        } else {
            col.fill(1.0 / r as f64);
        }
    }
    let abundances = AbundanceMatrix::new(a)?;

    let residual_coeffs = match spec.method {
        Method::Nusal { .. } => {
            let mut x = state.z.rows(r, d).clone_owned();
            x.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v = 0.0;
                }
            });
            Some(ResidualCoefficients::new(x, ResidualKind::Nl)?)
        }
        Method::Rusal { .. } => Some(ResidualCoefficients::new(
            state.z.rows(r, d).clone_owned(),
            ResidualKind::Me,
        )?),
        Method::LinearBaseline => None,
    };

    let residual_term = match &residual_coeffs {
        Some(coeffs) => {
            let p = problem.stacked_operator().columns(r, d);
            p * coeffs.data()
        }
        None => DMatrix::zeros(y.bands(), n),
    };
    let reconstruction = m.data() * abundances.data() + &residual_term;
    let reconstruction = SpectralCube::new(reconstruction, y.rows(), y.cols())?;

    Ok(UnmixResult {
        abundances,
        residual_coeffs,
        reconstruction,
        residual_term,
        report,
    })
}

/// Outcome of one grid point.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub tau1: f64,
    pub tau2: f64,
    pub score: f64,
}

/// Searches a tau grid and keeps the run with minimum aRMSE when ground
/// truth is available, minimum reconstruction error otherwise.
pub fn grid_search(
    y: &SpectralCube,
    m: &EndmemberMatrix,
    base: &UnmixSpec,
    taus: &[f64],
    truth: Option<&AbundanceMatrix>,
) -> Result<(UnmixResult, GridPoint)> {
    let mut best: Option<(UnmixResult, GridPoint)> = None;
    for &tau1 in taus {
        for &tau2 in taus {
            let mut spec = base.clone();
            spec.tau1 = tau1;
            spec.tau2 = tau2;
            let result = unmix(y, m, &spec)?;
            let score = match truth {
                Some(a_true) => eval::armse(a_true, &result.abundances)?,
                None => eval::reconstruction_error(y, &result.reconstruction)?,
            };
            let point = GridPoint { tau1, tau2, score };
            if best.as_ref().map_or(true, |(_, b)| score < b.score) {
                best = Some((result, point));
            }
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty tau grid".into()))
}
