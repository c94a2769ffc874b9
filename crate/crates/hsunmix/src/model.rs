//! Mixture-model data types, interaction and DCT dictionaries, and the
//! forward model `Y = [M, P] Z`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default cap on the interaction dictionary allocation (2 GiB).
pub const DEFAULT_DICTIONARY_CAP_BYTES: u64 = 2 * 1024 * 1024 * 1024;

/// An L x N matrix of pixel spectra (pixels as columns) with image geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    data: DMatrix<f64>,
    rows: usize,
    cols: usize,
}

impl SpectralCube {
    pub fn new(data: DMatrix<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "cube needs at least 2 bands, got {}",
                data.nrows()
            )));
        }
        if rows == 0 || cols == 0 || rows * cols != data.ncols() {
            return Err(Error::InvalidArgument(format!(
                "geometry {}x{} does not match {} pixels",
                rows,
                cols,
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cube contains non-finite values".into()));
        }
        Ok(Self { data, rows, cols })
    }

    /// Single-row geometry for pixel collections without spatial layout.
    pub fn from_pixels(data: DMatrix<f64>) -> Result<Self> {
        let n = data.ncols();
        Self::new(data, 1, n)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// L x R matrix of known nonnegative endmember signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    data: DMatrix<f64>,
}

impl EndmemberMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 endmembers, got {}",
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "endmember entries must be finite and nonnegative".into(),
            ));
        }
        for i in 0..data.ncols() {
            for j in (i + 1)..data.ncols() {
                if data.column(i) == data.column(j) {
                    return Err(Error::InvalidArgument(format!(
                        "endmembers {i} and {j} are identical"
                    )));
                }
            }
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn count(&self) -> usize {
        self.data.ncols()
    }
}

/// Exponent vector of one interaction term: column `d` of the dictionary is
/// `coef(k) * prod_r m_r^{k_r}` with `sum_r k_r = order`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndex {
    k: Vec<u32>,
}

impl MultiIndex {
    pub fn new(k: Vec<u32>) -> Result<Self> {
        let order: u32 = k.iter().sum();
        if order < 2 {
            return Err(Error::InvalidArgument(format!(
                "interaction order must be >= 2, got {order}"
            )));
        }
        Ok(Self { k })
    }

    pub fn exponents(&self) -> &[u32] {
        &self.k
    }

    pub fn order(&self) -> u32 {
        self.k.iter().sum()
    }

    /// Space-separated exponents, e.g. "1 1 0".
    pub fn label(&self) -> String {
        self.k
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// L x D_K interaction dictionary `Q^(K)` with per-column multi-indices.
#[derive(Debug, Clone)]
pub struct InteractionDictionary {
    q: DMatrix<f64>,
    indices: Vec<MultiIndex>,
    max_order: u32,
    endmembers: usize,
}

impl InteractionDictionary {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    pub fn endmember_count(&self) -> usize {
        self.endmembers
    }

    pub fn num_terms(&self) -> usize {
        self.q.ncols()
    }
}

/// L x D matrix whose columns are the first D orthonormal DCT-II basis
/// vectors (transposed rows of F).
#[derive(Debug, Clone)]
pub struct SmoothDictionary {
    basis: DMatrix<f64>,
}

impl SmoothDictionary {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// R x N abundance matrix satisfying the nonnegativity and sum-to-one
/// constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMatrix {
    pub(crate) data: DMatrix<f64>,
}

impl AbundanceMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.iter().any(|v| *v < -1e-9 || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "abundances must be finite and >= -1e-9".into(),
            ));
        }
        for n in 0..data.ncols() {
            let s: f64 = data.column(n).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "abundance column {n} sums to {s}, expected 1"
                )));
            }
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_pixels(&self) -> usize {
        self.data.ncols()
    }
}

/// Which residual family a coefficient matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    /// Nonlinear interaction coefficients (nonnegative).
    Nl,
    /// DCT coefficients (unconstrained).
    Me,
}

/// D x N matrix of residual coefficients (the Gamma of the NL model or the
/// B of the ME model).
#[derive(Debug, Clone)]
pub struct ResidualCoefficients {
    data: DMatrix<f64>,
    kind: ResidualKind,
}

impl ResidualCoefficients {
    pub fn new(data: DMatrix<f64>, kind: ResidualKind) -> Result<Self> {
        if kind == ResidualKind::Nl && data.iter().any(|v| *v < -1e-9) {
            return Err(Error::InvalidArgument(
                "NL coefficients must be >= -1e-9".into(),
            ));
        }
        Ok(Self { data, kind })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn kind(&self) -> ResidualKind {
        self.kind
    }
}

fn binomial_checked(n: u64, k: u64) -> Result<u64> {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for j in 1..=k {
        // acc * (n - k + j) is always divisible by j at this point
        acc = acc
            .checked_mul(n - k + j)
            .ok_or_else(|| Error::Overflow(format!("computing C({n},{k})")))?
            / j;
    }
    Ok(acc)
}

/// Number of interaction terms of orders 2..=K for R endmembers:
/// `sum_{i=2}^{K} C(R+i-1, i)`.
pub fn count_interactions(r: usize, k: u32) -> Result<u64> {
    if r < 1 || k < 2 {
        return Err(Error::InvalidArgument(format!(
            "count_interactions requires R >= 1 and K >= 2, got R={r}, K={k}"
        )));
    }
    let mut total: u64 = 0;
    for i in 2..=k as u64 {
        let b = binomial_checked(r as u64 + i - 1, i)?;
        total = total
            .checked_add(b)
            .ok_or_else(|| Error::Overflow("summing interaction counts".into()))?;
    }
    Ok(total)
}

/// All multi-indices of orders 2..=K, grouped by ascending order. Within
/// each order, cross terms come first (ordered as in the paper's K=2
/// layout: m_12, m_13, ..., m_{R-1,R}), followed by the pure powers in
/// ascending endmember index.
pub fn enumerate_multi_indices(r: usize, k: u32) -> Result<Vec<MultiIndex>> {
    let expected = count_interactions(r, k)?;
    let mut out = Vec::with_capacity(expected as usize);
    for order in 2..=k {
        let mut cross = Vec::new();
        let mut pure = Vec::new();
        let mut current = vec![0u32; r];
        collect_compositions(&mut current, 0, order, &mut |k_vec: &[u32]| {
            if k_vec.iter().any(|&v| v == order) {
                pure.push(k_vec.to_vec());
            } else {
                cross.push(k_vec.to_vec());
            }
        });
        // collect_compositions emits descending lexicographic k, which puts
        // the cross terms in m_12, m_13, ..., m_23, ... order and the pure
        // powers in ascending endmember index
        for k_vec in cross.into_iter().chain(pure) {
            out.push(MultiIndex::new(k_vec)?);
        }
    }
    debug_assert_eq!(out.len() as u64, expected);
    Ok(out)
}

fn collect_compositions(current: &mut Vec<u32>, pos: usize, remaining: u32, f: &mut impl FnMut(&[u32])) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        f(current);
        current[pos] = 0;
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v;
        collect_compositions(current, pos + 1, remaining - v, f);
        current[pos] = 0;
    }
}

/// Multinomial weight `sqrt(i! / prod_r k_r!)` of an interaction term.
pub fn interaction_coefficient(idx: &MultiIndex) -> f64 {
    let order = idx.order() as u64;
    let mut numer: u64 = (1..=order).product();
    for &e in idx.exponents() {
        let f: u64 = (1..=e as u64).product();
        numer /= f;
    }
    (numer as f64).sqrt()
}

/// Builds `Q^(K)`: column d is `coef(k_d) * (m_1^{k_1} ⊙ ... ⊙ m_R^{k_R})`.
pub fn build_interaction_matrix(m: &EndmemberMatrix, k: u32) -> Result<InteractionDictionary> {
    build_interaction_matrix_with_cap(m, k, DEFAULT_DICTIONARY_CAP_BYTES)
}

pub fn build_interaction_matrix_with_cap(
    m: &EndmemberMatrix,
    k: u32,
    cap_bytes: u64,
) -> Result<InteractionDictionary> {
    let r = m.count();
    let l = m.bands();
    let d_k = count_interactions(r, k)?;
    let required = (l as u64)
        .checked_mul(d_k)
        .and_then(|e| e.checked_mul(8))
        .ok_or_else(|| Error::Overflow("sizing the interaction dictionary".into()))?;
    if required > cap_bytes {
        return Err(Error::ResourceLimit {
            rows: l,
            cols: d_k as usize,
            required,
            cap: cap_bytes,
        });
    }
    let indices = enumerate_multi_indices(r, k)?;
    let mut q = DMatrix::zeros(l, indices.len());
    for (d, idx) in indices.iter().enumerate() {
        let coef = interaction_coefficient(idx);
        let mut col = DVector::from_element(l, coef);
        for (r_i, &e) in idx.exponents().iter().enumerate() {
            for _ in 0..e {
                col.component_mul_assign(&m.data().column(r_i));
            }
        }
        q.set_column(d, &col);
    }
    Ok(InteractionDictionary {
        q,
        indices,
        max_order: k,
        endmembers: r,
    })
}

/// First D rows of the orthonormal L-point DCT-II (DC row included),
/// returned transposed as an L x D matrix.
pub fn build_dct_dictionary(l: usize, d: usize) -> Result<SmoothDictionary> {
    if d < 1 || d > l {
        return Err(Error::InvalidArgument(format!(
            "DCT dimension must satisfy 1 <= D <= L, got D={d}, L={l}"
        )));
    }
    let mut basis = DMatrix::zeros(l, d);
    for row in 0..d {
        let scale = if row == 0 {
            (1.0 / l as f64).sqrt()
        } else {
            (2.0 / l as f64).sqrt()
        };
        for j in 0..l {
            basis[(j, row)] =
                scale * (std::f64::consts::PI * (2.0 * j as f64 + 1.0) * row as f64 / (2.0 * l as f64)).cos();
        }
    }
    Ok(SmoothDictionary { basis })
}

/// Forward model `[M, P] Z`. With an empty dictionary (D = 0) this is the
/// plain linear mixing model `M A`.
pub fn predict(m: &EndmemberMatrix, p: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = m.count();
    let d = p.ncols();
    if d > 0 && p.nrows() != m.bands() {
        return Err(Error::InvalidArgument(format!(
            "dictionary has {} bands, endmembers have {}",
            p.nrows(),
            m.bands()
        )));
    }
    if z.nrows() != r + d {
        return Err(Error::InvalidArgument(format!(
            "Z has {} rows, expected R + D = {}",
            z.nrows(),
            r + d
        )));
    }
    let mut y = m.data() * z.rows(0, r);
    if d > 0 {
        y += p * z.rows(r, d);
    }
    Ok(y)
}
