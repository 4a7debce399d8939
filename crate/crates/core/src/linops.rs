//! Dense linear-algebra building blocks: the quadratic problem, symmetric
//! preconditioners, the preconditioned operator `Ã = P⁻¹ A P⁻ᵀ`, random
//! problem generation and extremal eigenvalues.
//!
//! Variables follow the convention `z = P⁻ᵀ x`: `z` lives in the original
//! space of `f(z) = ½ zᵀAz − zᵀb`, `x` in the preconditioned space. The
//! preconditioned gradient is `g̃ = P⁻¹ g(z)`.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Relative asymmetry tolerated (and symmetrized away) at construction.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Largest dimension for which `Ã` is assembled densely (eigenvalues,
/// inverse-power norm terms).
pub const DEFAULT_DENSE_CAP: usize = 2000;

/// Strictly convex quadratic `f(z) = ½ zᵀAz − zᵀb` with `A` symmetric
/// positive definite.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    a: Matrix,
    b: Vector,
    known_solution: Option<Vector>,
    chol: Cholesky<f64, Dyn>,
}

impl ProblemInstance {
    /// Validates and builds a problem. Input within [`SYMMETRY_TOL`] of
    /// symmetric is replaced by `(A + Aᵀ)/2`; anything further off is
    /// rejected, as is a matrix whose Cholesky factorization fails.
    pub fn new(a: Matrix, b: Vector, known_solution: Option<Vector>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        check_dim(n, a.ncols())?;
        check_dim(n, b.len())?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entry in A or b".into()));
        }

        let scale = a.amax().max(f64::MIN_POSITIVE);
        let asym = (&a - a.transpose()).amax() / scale;
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let a = if asym > 0.0 {
            (&a + a.transpose()) * 0.5
        } else {
            a
        };

        let chol = Cholesky::new(a.clone()).ok_or(Error::NotPositiveDefinite)?;

        if let Some(z) = &known_solution {
            check_dim(n, z.len())?;
            let resid = (&a * z - &b).norm();
            if resid > 1e-10 * (1.0 + b.norm()) {
                return Err(Error::InvalidArgument(format!(
                    "known solution has residual {resid:e}"
                )));
            }
        }

        Ok(Self {
            a,
            b,
            known_solution,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn rhs(&self) -> &Vector {
        &self.b
    }

    pub fn known_solution(&self) -> Option<&Vector> {
        self.known_solution.as_ref()
    }

    /// `z* = A⁻¹b`: the stored solution if present, else a Cholesky solve.
    pub fn solution(&self) -> Vector {
        match &self.known_solution {
            Some(z) => z.clone(),
            None => self.chol.solve(&self.b),
        }
    }

    /// `A⁻¹ v` via the construction-time factorization.
    pub fn solve(&self, v: &Vector) -> Result<Vector> {
        check_dim(self.dim(), v.len())?;
        Ok(self.chol.solve(v))
    }

    /// `g(z) = Az − b`.
    pub fn gradient(&self, z: &Vector) -> Result<Vector> {
        check_dim(self.dim(), z.len())?;
        Ok(&self.a * z - &self.b)
    }

    pub fn objective(&self, z: &Vector) -> Result<f64> {
        check_dim(self.dim(), z.len())?;
        Ok(0.5 * z.dot(&(&self.a * z)) - z.dot(&self.b))
    }

    /// `f(z) − f* = ½ (z − z*)ᵀ A (z − z*)`, evaluated in the error form so
    /// tiny gaps are not lost to cancellation.
    pub fn f_gap(&self, z: &Vector, z_star: &Vector) -> Result<f64> {
        check_dim(self.dim(), z.len())?;
        let e = z - z_star;
        Ok(0.5 * e.dot(&(&self.a * &e)))
    }

    /// Bitwise equality of the defining data.
    pub fn same_data(&self, other: &Self) -> bool {
        let bits = |m: &[f64]| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        self.a.shape() == other.a.shape()
            && bits(self.a.as_slice()) == bits(other.a.as_slice())
            && bits(self.b.as_slice()) == bits(other.b.as_slice())
            && match (&self.known_solution, &other.known_solution) {
                (Some(x), Some(y)) => bits(x.as_slice()) == bits(y.as_slice()),
                (None, None) => true,
                _ => false,
            }
    }
}

/// Representation of `P⁻¹`. A `Diagonal(d)` holds the entries of `P⁻¹`
/// itself, so Jacobi scaling with `P_ii = A_ii` stores `d_i = 1/A_ii`.
#[derive(Debug, Clone, PartialEq)]
pub enum Preconditioner {
    Identity,
    Diagonal(Vector),
    DenseInverse(Matrix),
}

impl Preconditioner {
    pub fn diagonal(d: Vector) -> Result<Self> {
        if d.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::SingularPreconditioner);
        }
        Ok(Self::Diagonal(d))
    }

    pub fn dense_inverse(m: Matrix) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::InvalidArgument("P⁻¹ must be square".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularPreconditioner);
        }
        let sv = m.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if smax == 0.0 || smin <= 1e-14 * smax {
            return Err(Error::SingularPreconditioner);
        }
        Ok(Self::DenseInverse(m))
    }

    /// `P = diag(A)`, i.e. `P⁻¹ = diag(1/A_ii)`.
    pub fn jacobi(problem: &ProblemInstance) -> Self {
        Self::Diagonal(problem.a.diagonal().map(|v| 1.0 / v))
    }

    /// `P = diag(√A_ii)`, the split that gives `Ã` a unit diagonal.
    pub fn jacobi_sqrt(problem: &ProblemInstance) -> Self {
        Self::Diagonal(problem.a.diagonal().map(|v| 1.0 / v.sqrt()))
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Self::Identity => None,
            Self::Diagonal(d) => Some(d.len()),
            Self::DenseInverse(m) => Some(m.nrows()),
        }
    }

    pub fn check_compatible(&self, n: usize) -> Result<()> {
        match self.dim() {
            Some(d) => check_dim(n, d),
            None => Ok(()),
        }
    }

    /// `P⁻¹ v`, or `P⁻ᵀ v` when `transposed`.
    pub fn apply_inv(&self, v: &Vector, transposed: bool) -> Result<Vector> {
        if let Some(d) = self.dim() {
            check_dim(d, v.len())?;
        }
        Ok(match self {
            Self::Identity => v.clone(),
            Self::Diagonal(d) => d.component_mul(v),
            Self::DenseInverse(m) if transposed => m.tr_mul(v),
            Self::DenseInverse(m) => m * v,
        })
    }

    /// Dense `P⁻¹` (for assembly only).
    pub fn to_matrix(&self, n: usize) -> Matrix {
        match self {
            Self::Identity => Matrix::identity(n, n),
            Self::Diagonal(d) => Matrix::from_diagonal(d),
            Self::DenseInverse(m) => m.clone(),
        }
    }
}

/// `Ã v = P⁻¹ A P⁻ᵀ v`, as three successive applications.
pub fn apply_atilde(
    problem: &ProblemInstance,
    precond: &Preconditioner,
    v: &Vector,
) -> Result<Vector> {
    check_dim(problem.dim(), v.len())?;
    let w = precond.apply_inv(v, true)?;
    let w = &problem.a * w;
    precond.apply_inv(&w, false)
}

/// Explicit `Ã`, symmetrized. Only for desk-scale diagnostics.
pub fn assemble_atilde(
    problem: &ProblemInstance,
    precond: &Preconditioner,
    cap: usize,
) -> Result<Matrix> {
    let n = problem.dim();
    if n > cap {
        return Err(Error::UnsupportedSize { n, cap });
    }
    precond.check_compatible(n)?;
    let at = match precond {
        Preconditioner::Identity => problem.a.clone(),
        Preconditioner::Diagonal(d) => {
            Matrix::from_fn(n, n, |i, j| d[i] * problem.a[(i, j)] * d[j])
        }
        Preconditioner::DenseInverse(m) => m * &problem.a * m.transpose(),
    };
    Ok((&at + at.transpose()) * 0.5)
}

/// Problem and preconditioner bundled as the operator `Ã`, with a lazily
/// built factorization of `Ã` for the inverse-power norm terms.
#[derive(Debug)]
pub struct PrecondOperator<'a> {
    problem: &'a ProblemInstance,
    precond: &'a Preconditioner,
    dense_cap: usize,
    /// Cholesky factorization of `Ã` and its lower factor `L` (`Ã = LLᵀ`).
    factor: OnceLock<Option<(Cholesky<f64, Dyn>, Matrix)>>,
}

impl<'a> PrecondOperator<'a> {
    pub fn new(problem: &'a ProblemInstance, precond: &'a Preconditioner) -> Result<Self> {
        precond.check_compatible(problem.dim())?;
        Ok(Self {
            problem,
            precond,
            dense_cap: DEFAULT_DENSE_CAP,
            factor: OnceLock::new(),
        })
    }

    pub fn with_dense_cap(mut self, cap: usize) -> Self {
        self.dense_cap = cap;
        self
    }

    pub fn problem(&self) -> &'a ProblemInstance {
        self.problem
    }

    pub fn precond(&self) -> &'a Preconditioner {
        self.precond
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        apply_atilde(self.problem, self.precond, v)
    }

    fn factorization(&self) -> Result<&(Cholesky<f64, Dyn>, Matrix)> {
        if self.dim() > self.dense_cap {
            return Err(Error::UnsupportedSize {
                n: self.dim(),
                cap: self.dense_cap,
            });
        }
        self.factor
            .get_or_init(|| {
                assemble_atilde(self.problem, self.precond, self.dense_cap)
                    .ok()
                    .and_then(Cholesky::new)
                    .map(|c| {
                        let l = c.l();
                        (c, l)
                    })
            })
            .as_ref()
            .ok_or(Error::NotPositiveDefinite)
    }

    /// `Ã⁻¹ v` by a dense Cholesky solve.
    pub fn solve(&self, v: &Vector) -> Result<Vector> {
        check_dim(self.dim(), v.len())?;
        Ok(self.factorization()?.0.solve(v))
    }

    /// Lower Cholesky factor `L` with `Ã = LLᵀ`, built on first use.
    pub fn cholesky_lower(&self) -> Result<&Matrix> {
        Ok(&self.factorization()?.1)
    }

    /// Whether `Ã` is small enough for the dense factorization.
    pub fn within_dense_cap(&self) -> bool {
        self.dim() <= self.dense_cap
    }
}

/// Extremal eigenvalues of `Ã` and its condition number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumInfo {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub kappa: f64,
}

impl SpectrumInfo {
    pub fn new(lambda_max: f64, lambda_min: f64) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_max >= lambda_min && lambda_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid spectrum [{lambda_min:e}, {lambda_max:e}]"
            )));
        }
        Ok(Self {
            lambda_max,
            lambda_min,
            kappa: (lambda_max / lambda_min).max(1.0),
        })
    }
}

pub fn extremal_eigenvalues(
    problem: &ProblemInstance,
    precond: &Preconditioner,
) -> Result<SpectrumInfo> {
    extremal_eigenvalues_with_cap(problem, precond, DEFAULT_DENSE_CAP)
}

/// Full symmetric eigendecomposition of the assembled `Ã`.
pub fn extremal_eigenvalues_with_cap(
    problem: &ProblemInstance,
    precond: &Preconditioner,
    cap: usize,
) -> Result<SpectrumInfo> {
    let at = assemble_atilde(problem, precond, cap)?;
    let eig = SymmetricEigen::new(at).eigenvalues;
    let lambda_min = eig.min();
    if lambda_min <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    SpectrumInfo::new(eig.max(), lambda_min)
}

/// The library's random source: ChaCha8 seeded through `seed_from_u64`.
/// Independent uses of one seed are separated by stream number.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const PROBLEM_STREAM: u64 = 0;
const INITIAL_POINT_STREAM: u64 = 1;

/// Random SPD problem `A = BᵀB` with `B` (m×n) and `x*` uniform on
/// `[0, 1)`, `b = A x*`.
pub fn generate_problem(seed: u64, rows: usize, cols: usize) -> Result<ProblemInstance> {
    if cols == 0 || rows < cols {
        return Err(Error::InvalidArgument(format!(
            "need m >= n >= 1, got m = {rows}, n = {cols}"
        )));
    }
    let mut rng = rng_for(seed, PROBLEM_STREAM);
    let b_mat = Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>());
    let x_star = Vector::from_fn(cols, |_, _| rng.random::<f64>());
    let a = b_mat.tr_mul(&b_mat);
    let a = (&a + a.transpose()) * 0.5;
    let b = &a * &x_star;
    ProblemInstance::new(a, b, Some(x_star))
}

/// `A = Q diag(eigenvalues) Qᵀ` with `Q` a random orthogonal matrix, `x*`
/// uniform on `[0, 1)`, `b = A x*`. Gives exact control of the spectrum.
pub fn generate_with_spectrum(seed: u64, eigenvalues: &[f64]) -> Result<ProblemInstance> {
    let n = eigenvalues.len();
    if n == 0 || eigenvalues.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidArgument(
            "eigenvalues must be positive and non-empty".into(),
        ));
    }
    let mut rng = rng_for(seed, PROBLEM_STREAM);
    let g = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let d = Matrix::from_diagonal(&Vector::from_column_slice(eigenvalues));
    let a = &q * d * q.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let x_star = Vector::from_fn(n, |_, _| rng.random::<f64>());
    let b = &a * &x_star;
    ProblemInstance::new(a, b, Some(x_star))
}

/// Shared starting point for an experiment, uniform on `[0, 1)`.
pub fn initial_point(seed: u64, n: usize) -> Vector {
    let mut rng = rng_for(seed, INITIAL_POINT_STREAM);
    Vector::from_fn(n, |_, _| rng.random::<f64>())
}
