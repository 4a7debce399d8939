//! Sub-step sizes from the Gram system and the resulting update direction.

use nalgebra::{SymmetricEigen, SVD};

use crate::error::{check_dim, Error, Result};
use crate::linops::{Matrix, PrecondOperator, Vector};
use crate::norms::{assemble_gram, norm_factor_apply, shifted_poly_apply, GramSystem, NormSpec};

/// Relative cutoff on the spectrum of whichever matrix is decomposed: Gram
/// eigenvalues in [`solve_step`], singular values of the factor in
/// [`solve_factored`].
pub const DEFAULT_REL_CUTOFF: f64 = 1e-12;

/// Gram diagonals at or below this are treated as an all-zero direction set.
const ABS_FLOOR: f64 = 1e-300;

/// Solution of a Gram system on its numerically retained eigenspace.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSolution {
    pub a: Vector,
    pub rank: usize,
    /// Coefficient vectors (columns) spanning the retained subspace.
    pub retained: Matrix,
}

/// Pseudo-inverse solve of `gram · a = rhs`.
///
/// The system is first scaled to unit diagonal (the minimizer over a column
/// space does not depend on column lengths), then eigenvalues below
/// `rel_cutoff` times the largest are discarded.
pub fn solve_step(system: &GramSystem, rel_cutoff: f64) -> Result<GramSolution> {
    let m = system.gram.nrows();
    check_dim(m, system.gram.ncols())?;
    check_dim(m, system.rhs.len())?;
    if !(rel_cutoff > 0.0 && rel_cutoff < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rel_cutoff must lie in (0, 1), got {rel_cutoff}"
        )));
    }
    let diag = system.gram.diagonal();
    let max_diag = diag.max();
    if !(max_diag > ABS_FLOOR) || !max_diag.is_finite() {
        return Err(Error::DegenerateSystem);
    }
    let scale = diag.map(|d| {
        if d > ABS_FLOOR {
            1.0 / d.sqrt()
        } else {
            0.0
        }
    });
    let scaled = Matrix::from_fn(m, m, |i, j| scale[i] * system.gram[(i, j)] * scale[j]);
    let rhs = system.rhs.component_mul(&scale);

    let eig = SymmetricEigen::new(scaled);
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return Err(Error::DegenerateSystem);
    }
    let keep: Vec<usize> = (0..m)
        .filter(|&i| eig.eigenvalues[i] > rel_cutoff * top)
        .collect();

    let mut coeffs = Vector::zeros(m);
    let mut retained = Matrix::zeros(m, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let q = eig.eigenvectors.column(i);
        coeffs.axpy(q.dot(&rhs) / eig.eigenvalues[i], &q, 1.0);
        retained.set_column(col, &q.component_mul(&scale));
    }
    Ok(GramSolution {
        a: coeffs.component_mul(&scale),
        rank: keep.len(),
        retained,
    })
}

/// Truncated pseudo-inverse solve of the Gram system `FᵀF a = Fᵀh` from a
/// thin SVD of `F`, without forming `FᵀF` (whose condition number is the
/// square of `F`'s). Singular values below `rel_cutoff` times the largest
/// are discarded.
pub fn solve_factored(f: &Matrix, h: &Vector, rel_cutoff: f64) -> Result<GramSolution> {
    let m = f.ncols();
    check_dim(f.nrows(), h.len())?;
    if !(rel_cutoff > 0.0 && rel_cutoff < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rel_cutoff must lie in (0, 1), got {rel_cutoff}"
        )));
    }
    let norms: Vec<f64> = f.column_iter().map(|c| c.norm()).collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    if !(max_norm * max_norm > ABS_FLOOR) || !max_norm.is_finite() {
        return Err(Error::DegenerateSystem);
    }
    let scale = Vector::from_iterator(
        m,
        norms
            .iter()
            .map(|&c| if c * c > ABS_FLOOR { 1.0 / c } else { 0.0 }),
    );
    let mut scaled = f.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= scale[j];
    }
    let svd = SVD::new(scaled, true, true);
    let (Some(u), Some(vt)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
        return Err(Error::DegenerateSystem);
    };
    let top = svd.singular_values.max();
    if !(top > 0.0) {
        return Err(Error::DegenerateSystem);
    }
    let threshold = rel_cutoff * top;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > threshold)
        .collect();
    let mut coeffs = Vector::zeros(m);
    let mut retained = Matrix::zeros(m, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let v = vt.row(i).transpose();
        coeffs.axpy(u.column(i).dot(h) / svd.singular_values[i], &v, 1.0);
        retained.set_column(col, &v.component_mul(&scale));
    }
    Ok(GramSolution {
        a: coeffs.component_mul(&scale),
        rank: keep.len(),
        retained,
    })
}

/// Stacked factor `F = N^{1/2}-block · Ã P⁻¹W` and `h` for `g̃`, when the
/// norm admits one.
fn factored_system(
    norm: &NormSpec,
    op: &PrecondOperator,
    w: &Matrix,
    gtilde: &Vector,
) -> Result<Option<(Matrix, Vector)>> {
    let Some(h) = norm_factor_apply(norm, op, gtilde)? else {
        return Ok(None);
    };
    let mut f = Matrix::zeros(h.len(), w.ncols());
    for (i, col) in w.column_iter().enumerate() {
        let u = op.precond().apply_inv(&col.into_owned(), false)?;
        let fu = norm_factor_apply(norm, op, &op.apply(&u)?)?
            .expect("factor exists for the right-hand side");
        f.set_column(i, &fu);
    }
    Ok(Some((f, h)))
}

/// One unrelaxed step of the scheme. The caller applies ω.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub a: Vector,
    /// `P⁻¹ W a`, in preconditioned variables.
    pub direction: Vector,
    pub truncated_rank: usize,
    pub retained: Matrix,
}

/// Minimizes `‖g̃ − Ã P⁻¹W a‖²_N` over `a`. Norms with a stacked square-root
/// factor go through [`solve_factored`]; others through the Gram system.
pub fn flexible_step(
    op: &PrecondOperator,
    norm: &NormSpec,
    w: &Matrix,
    gtilde: &Vector,
    rel_cutoff: f64,
) -> Result<StepResult> {
    let n = op.dim();
    check_dim(n, w.nrows())?;
    check_dim(n, gtilde.len())?;
    let m = w.ncols();
    if gtilde.iter().all(|v| *v == 0.0) {
        return Ok(StepResult {
            a: Vector::zeros(m),
            direction: Vector::zeros(n),
            truncated_rank: 0,
            retained: Matrix::zeros(m, 0),
        });
    }
    let sol = match factored_system(norm, op, w, gtilde)? {
        Some((f, h)) => solve_factored(&f, &h, rel_cutoff)?,
        None => solve_step(&assemble_gram(norm, op, w, gtilde)?, rel_cutoff)?,
    };
    let direction = op.precond().apply_inv(&(w * &sol.a), false)?;
    Ok(StepResult {
        a: sol.a,
        direction,
        truncated_rank: sol.rank,
        retained: sol.retained,
    })
}

/// Single-direction step `θ = ⟨g̃, N Ã g̃⟩ / ⟨Ã g̃, N Ã g̃⟩`.
pub fn theta_step(norm: &NormSpec, op: &PrecondOperator, gtilde: &Vector) -> Result<f64> {
    let mg = shifted_poly_apply(norm, op, gtilde)?;
    let ag = op.apply(gtilde)?;
    Ok(gtilde.dot(&mg) / ag.dot(&mg))
}

/// Largest first-order optimality residual of the step at ω = 1:
/// `|⟨M(Ã) v, g̃ − Ã d⟩| / (‖M(Ã) v‖ · max(‖g̃‖, ‖Ã d‖))` over the test
/// directions `v` (the columns of `P⁻¹W`, or the retained eigen-directions
/// when the Gram system was truncated).
pub fn stationarity_residual(
    op: &PrecondOperator,
    norm: &NormSpec,
    w: &Matrix,
    gtilde: &Vector,
    step: &StepResult,
) -> Result<f64> {
    if step.truncated_rank == 0 {
        return Ok(0.0);
    }
    let moved = op.apply(&step.direction)?;
    let next = gtilde - &moved;
    let scale = gtilde.norm().max(moved.norm());
    let u = Matrix::from_columns(
        &w.column_iter()
            .map(|c| op.precond().apply_inv(&c.into_owned(), false))
            .collect::<Result<Vec<_>>>()?,
    );
    let tests = if step.truncated_rank == w.ncols() {
        u
    } else {
        &u * &step.retained
    };
    let mut worst = 0.0f64;
    for v in tests.column_iter() {
        let wv = shifted_poly_apply(norm, op, &v.into_owned())?;
        let denom = wv.norm() * scale;
        if denom > 0.0 {
            worst = worst.max(wv.dot(&next).abs() / denom);
        }
    }
    Ok(worst)
}
