//! Gradient-norm weights `N(Ã) = Σ_j c_j Ã^j` with `j ≥ −1`.
//!
//! The pure powers `N = Ã^{2ℓ−1}` (ℓ = 0, ½, 1, ...) and the GDWGM weight
//! `(1−μ)Ã⁻¹ + 2μI` are both finite Laurent polynomials, so one code path
//! handles them. Step computations only ever need the shifted polynomial
//! `M(λ) = λ·N(λ)`, which has no negative powers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linops::{Matrix, PrecondOperator, SpectrumInfo, Vector};

/// Grid resolution for the positivity check of `N` on the spectrum.
pub const POSITIVITY_GRID: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormRepr", into = "NormRepr")]
pub struct NormSpec {
    coeffs: BTreeMap<i32, f64>,
    ell_label: Option<f64>,
}

impl NormSpec {
    /// `N = Ã^{2ℓ−1}` for ℓ ∈ {0, ½, 1, 3/2, ...}.
    pub fn from_ell(ell: f64) -> Result<Self> {
        let twice = 2.0 * ell;
        if !(ell >= 0.0) || twice.fract() != 0.0 || twice > 64.0 {
            return Err(Error::InvalidArgument(format!(
                "ell must be a non-negative multiple of 1/2, got {ell}"
            )));
        }
        let power = twice as i32 - 1;
        Ok(Self {
            coeffs: BTreeMap::from([(power, 1.0)]),
            ell_label: Some(ell),
        })
    }

    /// `N = (1−μ)Ã⁻¹ + 2μI`, μ ∈ [0, 1].
    pub fn gdwgm(mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::InvalidArgument(format!(
                "mu must lie in [0, 1], got {mu}"
            )));
        }
        Self::from_coeffs([(-1, 1.0 - mu), (0, 2.0 * mu)])
    }

    /// General Laurent weight. Zero coefficients are dropped; the lowest
    /// remaining power must be at least −1.
    pub fn from_coeffs(coeffs: impl IntoIterator<Item = (i32, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (p, c) in coeffs {
            if !c.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "coefficient of power {p} is not finite"
                )));
            }
            if c != 0.0 {
                *map.entry(p).or_insert(0.0) += c;
            }
        }
        map.retain(|_, c| *c != 0.0);
        let (Some(&lo), Some(&hi)) = (map.keys().next(), map.keys().last()) else {
            return Err(Error::InvalidArgument("norm has no nonzero coefficient".into()));
        };
        if lo < -1 {
            return Err(Error::InvalidArgument(format!("lowest power {lo} is below -1")));
        }
        if hi > 64 {
            return Err(Error::InvalidArgument(format!("power {hi} is too large")));
        }
        Ok(Self {
            coeffs: map,
            ell_label: None,
        })
    }

    pub fn coeffs(&self) -> &BTreeMap<i32, f64> {
        &self.coeffs
    }

    pub fn ell_label(&self) -> Option<f64> {
        self.ell_label
    }

    /// ℓ when `N` is a positive multiple of a single power `Ã^{2ℓ−1}`.
    pub fn pure_ell(&self) -> Option<f64> {
        match self.coeffs.iter().collect::<Vec<_>>().as_slice() {
            [(p, c)] if **c > 0.0 => Some((**p + 1) as f64 / 2.0),
            _ => None,
        }
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        self.coeffs.iter().map(|(p, c)| c * lambda.powi(*p)).sum()
    }

    /// Highest power appearing in `M(λ) = λ·N(λ)`.
    pub fn shifted_degree(&self) -> usize {
        (*self.coeffs.keys().last().unwrap() + 1) as usize
    }

    pub fn has_inverse_term(&self) -> bool {
        self.coeffs.contains_key(&-1)
    }

    /// All coefficients non-negative: `N` is positive on all of `(0, ∞)`.
    pub fn positive_everywhere(&self) -> bool {
        self.coeffs.values().all(|c| *c > 0.0)
    }

    /// Checks `N(λ) > 0` on a uniform grid over `[λ_min, λ_max]`.
    pub fn check_positive_on(&self, spectrum: &SpectrumInfo) -> Result<()> {
        let lo = spectrum.lambda_min;
        let hi = spectrum.lambda_max;
        for i in 0..POSITIVITY_GRID {
            let t = i as f64 / (POSITIVITY_GRID - 1) as f64;
            let at = lo + t * (hi - lo);
            let value = self.eval(at);
            if !(value > 0.0) {
                return Err(Error::NormNotPositive { at, value });
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NormRepr {
    Ell { ell: f64 },
    Coeffs { coeffs: BTreeMap<String, f64> },
}

impl TryFrom<NormRepr> for NormSpec {
    type Error = Error;

    fn try_from(r: NormRepr) -> Result<Self> {
        match r {
            NormRepr::Ell { ell } => Self::from_ell(ell),
            NormRepr::Coeffs { coeffs } => {
                let parsed = coeffs
                    .into_iter()
                    .map(|(k, c)| {
                        k.trim()
                            .parse::<i32>()
                            .map(|p| (p, c))
                            .map_err(|_| Error::Parse(format!("bad power `{k}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::from_coeffs(parsed)
            }
        }
    }
}

impl From<NormSpec> for NormRepr {
    fn from(n: NormSpec) -> Self {
        match n.ell_label {
            Some(ell) => NormRepr::Ell { ell },
            None => NormRepr::Coeffs {
                coeffs: n.coeffs.iter().map(|(p, c)| (p.to_string(), *c)).collect(),
            },
        }
    }
}

/// `M(Ã) v = Σ_j c_j Ã^{j+1} v`, using `shifted_degree` operator
/// applications.
pub fn shifted_poly_apply(norm: &NormSpec, op: &PrecondOperator, v: &Vector) -> Result<Vector> {
    check_dim(op.dim(), v.len())?;
    let degree = norm.shifted_degree();
    let mut acc = Vector::zeros(v.len());
    let mut power = v.clone();
    for k in 0..=degree {
        if let Some(c) = norm.coeffs.get(&(k as i32 - 1)) {
            acc.axpy(*c, &power, 1.0);
        }
        if k < degree {
            power = op.apply(&power)?;
        }
    }
    Ok(acc)
}

/// `vᵀ N(Ã) v`. The `Ã⁻¹` term goes through a dense solve.
pub fn weighted_norm_sq(norm: &NormSpec, op: &PrecondOperator, v: &Vector) -> Result<f64> {
    check_dim(op.dim(), v.len())?;
    let mut total = 0.0;
    if let Some(c) = norm.coeffs.get(&-1) {
        total += c * v.dot(&op.solve(v)?);
    }
    let top = *norm.coeffs.keys().last().unwrap();
    if top >= 0 {
        let mut power = v.clone();
        for j in 0..=top {
            if let Some(c) = norm.coeffs.get(&j) {
                total += c * v.dot(&power);
            }
            if j < top {
                power = op.apply(&power)?;
            }
        }
    }
    Ok(total.max(0.0))
}

/// `F v` for a stacked factor with `FᵀF = N(Ã)`, so that
/// `‖v‖²_N = ‖F v‖²`. Each term `c_j Ã^j` contributes a block `√c_j L_j v`:
/// `L⁻¹` for `j = −1`, `Ã^k` for `j = 2k`, and `LᵀÃ^k` for `j = 2k + 1`,
/// where `Ã = LLᵀ`.
///
/// Returns `None` when no such factor exists here: a negative coefficient,
/// or an odd or inverse power on an operator too large to factorize.
pub fn norm_factor_apply(norm: &NormSpec, op: &PrecondOperator, v: &Vector) -> Result<Option<Vector>> {
    check_dim(op.dim(), v.len())?;
    if norm.coeffs.values().any(|c| *c < 0.0) {
        return Ok(None);
    }
    let needs_l = norm.coeffs.keys().any(|j| j % 2 != 0);
    if needs_l && !op.within_dense_cap() {
        return Ok(None);
    }
    let l = if needs_l { Some(op.cholesky_lower()?) } else { None };
    let n = v.len();
    let mut blocks: Vec<Vector> = Vec::with_capacity(norm.coeffs.len());
    // powers[k] = Ã^k v, extended on demand
    let mut powers = vec![v.clone()];
    for (&j, &c) in &norm.coeffs {
        let root = c.sqrt();
        let block = match j {
            -1 => l
                .expect("odd power implies factor")
                .solve_lower_triangular(v)
                .ok_or(Error::NotPositiveDefinite)?,
            _ => {
                let k = (j / 2) as usize;
                while powers.len() <= k {
                    let next = op.apply(powers.last().unwrap())?;
                    powers.push(next);
                }
                if j % 2 == 0 {
                    powers[k].clone()
                } else {
                    l.expect("odd power implies factor").tr_mul(&powers[k])
                }
            }
        };
        blocks.push(block * root);
    }
    let mut out = Vector::zeros(n * blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        out.rows_mut(i * n, n).copy_from(b);
    }
    Ok(Some(out))
}

/// The small system whose solution gives the sub-step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSystem {
    pub gram: Matrix,
    pub rhs: Vector,
}

/// With `u_i = P⁻¹ w_i`: `gram_ij = u_iᵀ Ã N Ã u_j`, `rhs_i = u_iᵀ N Ã g̃`.
/// For `N = Ã^{2ℓ−1}` these are the `Ã^{2ℓ+1}` and `Ã^{2ℓ}` forms.
pub fn assemble_gram(
    norm: &NormSpec,
    op: &PrecondOperator,
    w: &Matrix,
    gtilde: &Vector,
) -> Result<GramSystem> {
    let n = op.dim();
    check_dim(n, w.nrows())?;
    check_dim(n, gtilde.len())?;
    let m = w.ncols();
    let mut weighted = Matrix::zeros(n, m);
    let mut applied = Matrix::zeros(n, m);
    for (i, col) in w.column_iter().enumerate() {
        let u = op.precond().apply_inv(&col.into_owned(), false)?;
        weighted.set_column(i, &shifted_poly_apply(norm, op, &u)?);
        applied.set_column(i, &op.apply(&u)?);
    }
    let gram = weighted.tr_mul(&applied);
    let gram = (&gram + gram.transpose()) * 0.5;
    let rhs = weighted.tr_mul(gtilde);
    Ok(GramSystem { gram, rhs })
}
