//! Generic ADMM engine for `min_Z sum_j g_j(H_j Z)` with selection-form
//! splitting operators, the five Moreau proximity operators used by the
//! unmixing problems, adaptive penalty, and residual-based stopping.

use std::time::Instant;

// Instant::now panics on bare wasm targets, where the report simply
// carries a zero wall time.
fn wall_clock() -> Option<Instant> {
    if cfg!(target_arch = "wasm32") {
        None
    } else {
        Some(Instant::now())
    }
}

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Selection operator `H_j`. Restricting to these three forms keeps
/// `G = sum_j H_j^T H_j` diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Identity on all R + D rows.
    Identity,
    /// The D residual rows of Z.
    ResidualRows,
    /// The R abundance rows of Z.
    AbundanceRows,
}

impl Selection {
    pub fn apply(&self, z: &DMatrix<f64>, r: usize, d: usize) -> DMatrix<f64> {
        match self {
            Selection::Identity => z.clone(),
            Selection::ResidualRows => z.rows(r, d).clone_owned(),
            Selection::AbundanceRows => z.rows(0, r).clone_owned(),
        }
    }

    /// Adds `H_j^T u` into `out` (an (R+D) x N accumulator).
    pub fn add_transpose(&self, u: &DMatrix<f64>, r: usize, d: usize, out: &mut DMatrix<f64>) {
        match self {
            Selection::Identity => *out += u,
            Selection::ResidualRows => {
                let mut block = out.rows_mut(r, d);
                block += u;
            }
            Selection::AbundanceRows => {
                let mut block = out.rows_mut(0, r);
                block += u;
            }
        }
    }

    pub fn block_rows(&self, r: usize, d: usize) -> usize {
        match self {
            Selection::Identity => r + d,
            Selection::ResidualRows => d,
            Selection::AbundanceRows => r,
        }
    }
}

/// Precomputed factorization for the quadratic proximity operator. The
/// symmetric eigendecomposition of `S^T S` (S = [M, P]) makes a change of
/// penalty a diagonal rescale instead of a refactorization.
#[derive(Debug, Clone)]
pub struct QuadraticCache {
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
    sty: DMatrix<f64>,
}

impl QuadraticCache {
    pub fn new(stacked: &DMatrix<f64>, y: &DMatrix<f64>) -> Self {
        let gram = stacked.transpose() * stacked;
        let eig = gram.symmetric_eigen();
        Self {
            eigvecs: eig.eigenvectors,
            eigvals: eig.eigenvalues,
            sty: stacked.transpose() * y,
        }
    }
}

/// One convex term g_j of the splitting.
#[derive(Debug, Clone)]
pub enum TermKind {
    /// `0.5 ||Y - S U||_F^2` with `S = [M, P]`.
    Quadratic {
        y: DMatrix<f64>,
        stacked: DMatrix<f64>,
        cache: QuadraticCache,
    },
    /// `tau ||U||_1`.
    L1 { tau: f64 },
    /// `tau ||U||_{2,1}` (sum of column norms).
    L21 { tau: f64 },
    /// Indicator of the nonnegative orthant.
    NonNegIndicator,
    /// Indicator of columns summing to one.
    SumToOneIndicator,
}

#[derive(Debug, Clone)]
pub struct SplitTerm {
    pub kind: TermKind,
    pub h: Selection,
}

impl SplitTerm {
    pub fn quadratic(y: DMatrix<f64>, stacked: DMatrix<f64>) -> Self {
        let cache = QuadraticCache::new(&stacked, &y);
        SplitTerm {
            kind: TermKind::Quadratic { y, stacked, cache },
            h: Selection::Identity,
        }
    }
}

/// The J-term convex splitting with problem dimensions and the diagonal of
/// `G = sum_j H_j^T H_j`.
#[derive(Debug, Clone)]
pub struct SplitProblem {
    terms: Vec<SplitTerm>,
    r: usize,
    d: usize,
    n: usize,
    l: usize,
    g: DVector<f64>,
}

impl SplitProblem {
    pub fn new(terms: Vec<SplitTerm>, r: usize, d: usize, n: usize, l: usize) -> Result<Self> {
        let mut g = DVector::zeros(r + d);
        for term in &terms {
            match term.h {
                Selection::Identity => g.iter_mut().for_each(|v| *v += 1.0),
                Selection::ResidualRows => g.rows_mut(r, d).iter_mut().for_each(|v| *v += 1.0),
                Selection::AbundanceRows => g.rows_mut(0, r).iter_mut().for_each(|v| *v += 1.0),
            }
            if let TermKind::L1 { tau } | TermKind::L21 { tau } = term.kind {
                if tau < 0.0 {
                    return Err(Error::InvalidArgument("tau must be nonnegative".into()));
                }
            }
        }
        if g.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidArgument(
                "G has a zero diagonal entry; the splitting is rank deficient".into(),
            ));
        }
        Ok(Self { terms, r, d, n, l, g })
    }

    pub fn terms(&self) -> &[SplitTerm] {
        &self.terms
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.r, self.d, self.n, self.l)
    }

    pub fn g_diagonal(&self) -> &DVector<f64> {
        &self.g
    }

    /// The stacked operator [M, P] of the quadratic term.
    pub fn stacked_operator(&self) -> &DMatrix<f64> {
        self.terms
            .iter()
            .find_map(|t| match &t.kind {
                TermKind::Quadratic { stacked, .. } => Some(stacked),
                _ => None,
            })
            .expect("split problem has a quadratic term")
    }

    /// Data term plus the l1/l21 penalties at Z (indicator terms excluded).
    pub fn objective(&self, z: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for term in &self.terms {
            match &term.kind {
                TermKind::Quadratic { y, stacked, .. } => {
                    let res = y - stacked * z;
                    total += 0.5 * res.norm_squared();
                }
                TermKind::L1 { tau } => {
                    let x = term.h.apply(z, self.r, self.d);
                    total += tau * x.iter().map(|v| v.abs()).sum::<f64>();
                }
                TermKind::L21 { tau } => {
                    let x = term.h.apply(z, self.r, self.d);
                    total += tau * (0..x.ncols()).map(|c| x.column(c).norm()).sum::<f64>();
                }
                TermKind::NonNegIndicator | TermKind::SumToOneIndicator => {}
            }
        }
        total
    }
}

/// Solver controls. Defaults follow the common adaptive-penalty practice:
/// factor-2 updates whenever the primal/dual residual ratio leaves [1/10, 10].
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub mu0: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub adapt_ratio: f64,
    pub adapt_factor: f64,
    pub adapt: bool,
    /// Stop only when both residuals are below threshold (default stops on
    /// either).
    pub require_both: bool,
    pub record_history: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            mu0: 0.05,
            max_iter: 1000,
            tol: 1e-4,
            adapt_ratio: 10.0,
            adapt_factor: 2.0,
            adapt: true,
            require_both: false,
            record_history: false,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if self.mu0 <= 0.0 || self.tol <= 0.0 || self.adapt_ratio <= 0.0 {
            return Err(Error::InvalidArgument(
                "mu0, tol and adapt_ratio must be positive".into(),
            ));
        }
        if self.adapt_factor <= 1.0 {
            return Err(Error::InvalidArgument("adapt_factor must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HistoryRecord {
    pub iter: usize,
    pub primal: f64,
    pub dual: f64,
    pub mu: f64,
    pub objective: f64,
}

/// Iterates of one solve.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub z: DMatrix<f64>,
    pub u: Vec<DMatrix<f64>>,
    pub d: Vec<DMatrix<f64>>,
    pub mu: f64,
    pub iter: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub history: Option<Vec<HistoryRecord>>,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub converged: bool,
    pub iterations: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub objective: f64,
    pub wall_time_s: f64,
}

/// `argmin_U (mu/2)||U - V||^2 + 0.5||Y - S U||^2`, i.e.
/// `(S^T S + mu I)^{-1} (S^T Y + mu V)` via the cached eigendecomposition.
pub fn prox_quadratic(v: &DMatrix<f64>, cache: &QuadraticCache, mu: f64) -> Result<DMatrix<f64>> {
    if mu <= 0.0 {
        return Err(Error::InvalidArgument("mu must be positive".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite input to prox_quadratic".into()));
    }
    let mut w = cache.eigvecs.transpose() * (&cache.sty + mu * v);
    for (i, lam) in cache.eigvals.iter().enumerate() {
        let scale = 1.0 / (lam + mu);
        w.row_mut(i).scale_mut(scale);
    }
    Ok(&cache.eigvecs * w)
}

/// Element-wise soft threshold.
pub fn prox_l1(v: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    v.map(|x| x.signum() * (x.abs() - threshold).max(0.0))
}

/// Column-wise vect-soft threshold; zero columns map to zero.
pub fn prox_l21(v: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let mut out = v.clone();
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        let shrunk = (norm - threshold).max(0.0);
        let scale = if shrunk + threshold > 0.0 {
            shrunk / (shrunk + threshold)
        } else {
            0.0
        };
        col.scale_mut(scale);
    }
    out
}

/// Element-wise projection onto the nonnegative orthant.
pub fn project_nonneg(v: &DMatrix<f64>) -> DMatrix<f64> {
    v.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Affine projection of each column onto `{v : 1^T v = 1}`.
pub fn project_sum_to_one(v: &DMatrix<f64>) -> DMatrix<f64> {
    let r = v.nrows();
    let mut out = v.clone();
    for mut col in out.column_iter_mut() {
        let shift = col.sum() / r as f64 - 1.0 / r as f64;
        col.add_scalar_mut(-shift);
    }
    out
}

fn apply_prox(term: &SplitTerm, v: &DMatrix<f64>, mu: f64) -> Result<DMatrix<f64>> {
    match &term.kind {
        TermKind::Quadratic { cache, .. } => prox_quadratic(v, cache, mu),
        TermKind::L1 { tau } => Ok(prox_l1(v, tau / mu)),
        TermKind::L21 { tau } => Ok(prox_l21(v, tau / mu)),
        TermKind::NonNegIndicator => Ok(project_nonneg(v)),
        TermKind::SumToOneIndicator => Ok(project_sum_to_one(v)),
    }
}

/// Primal residual `sqrt(sum_j ||H_j Z - U_j||_F^2)` and dual residual
/// `mu sqrt(sum_j ||H_j^T (U_j - U_j_prev)||_F^2)`.
pub fn compute_residuals(
    problem: &SplitProblem,
    z: &DMatrix<f64>,
    u: &[DMatrix<f64>],
    prev_u: &[DMatrix<f64>],
    mu: f64,
) -> (f64, f64) {
    let (r, d, n, _) = problem.dims();
    let mut primal_sq = 0.0;
    let mut dual_sq = 0.0;
    for (j, term) in problem.terms().iter().enumerate() {
        let hz = term.h.apply(z, r, d);
        primal_sq += (&hz - &u[j]).norm_squared();
        let mut lifted = DMatrix::zeros(r + d, n);
        term.h.add_transpose(&(&u[j] - &prev_u[j]), r, d, &mut lifted);
        // accumulate per term so overlapping selections are counted per-j
        dual_sq += lifted.norm_squared();
    }
    (primal_sq.sqrt(), mu * dual_sq.sqrt())
}

/// Factor-2 / ratio-10 penalty update. Returns the new penalty and the
/// factor to apply to the scaled multipliers.
pub fn adapt_penalty(mu: f64, primal: f64, dual: f64, opts: &SolverOptions) -> (f64, f64) {
    if primal > opts.adapt_ratio * dual {
        (mu * opts.adapt_factor, 1.0 / opts.adapt_factor)
    } else if dual > opts.adapt_ratio * primal {
        (mu / opts.adapt_factor, opts.adapt_factor)
    } else {
        (mu, 1.0)
    }
}

/// Runs the variable-splitting ADMM iteration until a residual norm drops
/// below `tol * sqrt((R+D) N)` or `max_iter` is reached.
pub fn solve(
    problem: &SplitProblem,
    opts: &SolverOptions,
    init: Option<DMatrix<f64>>,
) -> Result<(SolverState, SolverReport)> {
    opts.validate()?;
    let start = wall_clock();
    let (r, d, n, _) = problem.dims();

    let z0 = match init {
        Some(z) => {
            if z.nrows() != r + d || z.ncols() != n {
                return Err(Error::InvalidArgument(format!(
                    "initial Z is {}x{}, expected {}x{}",
                    z.nrows(),
                    z.ncols(),
                    r + d,
                    n
                )));
            }
            z
        }
        None => {
            // uniform abundances, zero residual coefficients
            let mut z = DMatrix::zeros(r + d, n);
            z.rows_mut(0, r).fill(1.0 / r as f64);
            z
        }
    };

    let mut u: Vec<DMatrix<f64>> = problem
        .terms()
        .iter()
        .map(|t| t.h.apply(&z0, r, d))
        .collect();
    let mut dual: Vec<DMatrix<f64>> = problem
        .terms()
        .iter()
        .map(|t| DMatrix::zeros(t.h.block_rows(r, d), n))
        .collect();
    let mut mu = opts.mu0;
    let mut z = z0;

    let threshold = opts.tol * (((r + d) * n) as f64).sqrt();
    let mut history = opts.record_history.then(Vec::new);
    let mut converged = false;
    let mut primal = f64::INFINITY;
    let mut dual_res = f64::INFINITY;
    let mut iter = 0;

    while iter < opts.max_iter {
        iter += 1;

        // Z <- G^{-1} sum_j H_j^T (U_j + D_j)
        let mut acc = DMatrix::zeros(r + d, n);
        for (j, term) in problem.terms().iter().enumerate() {
            term.h.add_transpose(&(&u[j] + &dual[j]), r, d, &mut acc);
        }
        for (row, ginv) in problem.g_diagonal().iter().enumerate() {
            acc.row_mut(row).scale_mut(1.0 / ginv);
        }
        z = acc;

        let prev_u = u.clone();
        for (j, term) in problem.terms().iter().enumerate() {
            let v = term.h.apply(&z, r, d) - &dual[j];
            u[j] = apply_prox(term, &v, mu)?;
            dual[j] = &u[j] - v;
        }

        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("NaN in iterates at iteration {iter}")));
        }

        let (p, q) = compute_residuals(problem, &z, &u, &prev_u, mu);
        primal = p;
        dual_res = q;

        if let Some(h) = history.as_mut() {
            h.push(HistoryRecord {
                iter,
                primal,
                dual: dual_res,
                mu,
                objective: problem.objective(&z),
            });
        }

        let done = if opts.require_both {
            primal < threshold && dual_res < threshold
        } else {
            primal < threshold || dual_res < threshold
        };
        if done {
            converged = true;
            break;
        }

        if opts.adapt {
            let (new_mu, rescale) = adapt_penalty(mu, primal, dual_res, opts);
            if rescale != 1.0 {
                mu = new_mu;
                for dj in &mut dual {
                    dj.scale_mut(rescale);
                }
            }
        }
    }

    let objective = problem.objective(&z);
    let report = SolverReport {
        converged,
        iterations: iter,
        primal_res: primal,
        dual_res,
        objective,
        wall_time_s: start.map_or(0.0, |t| t.elapsed().as_secs_f64()),
    };
    let state = SolverState {
        z,
        u,
        d: dual,
        mu,
        iter,
        primal_res: primal,
        dual_res,
        history,
    };
    Ok((state, report))
}
