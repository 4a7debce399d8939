//! Sub-search direction strategies.
//!
//! Every strategy puts the current gradient `g(z_k)` first and appends its
//! own candidate columns. Candidates nearly inside the span of the columns
//! already accepted are dropped, so the returned `W_k` keeps full column rank
//! and `m_k` may shrink (for example at `k = 0`, where no previous step
//! exists yet). Non-gradient columns are rescaled to the gradient's length;
//! the step solve only depends on their span.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{rng_for, Matrix, ProblemInstance, Vector};

/// A candidate whose angle cosine to the accepted span exceeds this is
/// dropped.
pub const DEPENDENCE_COSINE: f64 = 1.0 - 1e-12;

const DIRECTION_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    /// `[g]`: the ℓ-MGD family (steepest descent, minimal gradient, ...).
    GradientOnly,
    /// `[g, s]` with `s_k = z_k − z_{k−1}`: conjugate directions.
    GradPrevStep,
    /// `[g, Ag, ..., A^{s−1}g]`, represented by an orthogonal basis of the
    /// same Krylov space.
    Forsythe { s: usize },
    /// `[g, Ag, s]`, with `Ag` orthogonalized against `g`.
    ForsytheMomentum,
    /// `[g, r]` with `r` standard normal, redrawn each iteration.
    GradRandom,
    /// `[g, s, r]`.
    MomentumRandom,
    /// `[g, s, y]` with `y_k = g_k − g_{k−1}`.
    GradStepYdiff,
}

impl StrategySpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            Self::Forsythe { s } if s == 0 || s > n => Err(Error::InvalidArgument(format!(
                "forsythe s must lie in [1, {n}], got {s}"
            ))),
            _ => Ok(()),
        }
    }
}

/// History carried between iterations.
#[derive(Debug, Clone)]
pub struct StrategyState {
    pub prev_z: Option<Vector>,
    pub prev_g: Option<Vector>,
    pub rng: ChaCha8Rng,
    pub iteration: usize,
}

impl StrategyState {
    pub fn new(seed: u64) -> Self {
        Self {
            prev_z: None,
            prev_g: None,
            rng: rng_for(seed, DIRECTION_STREAM),
            iteration: 0,
        }
    }

    /// Records the iterate just left behind; the next call to
    /// [`make_directions`] sees `s = z_next − z` and `y = g_next − g`.
    pub fn advance(&mut self, z: &Vector, g: &Vector) {
        self.prev_z = Some(z.clone());
        self.prev_g = Some(g.clone());
        self.iteration += 1;
    }

    fn step(&self, z: &Vector) -> Option<Vector> {
        self.prev_z.as_ref().map(|p| z - p)
    }

    fn grad_diff(&self, g: &Vector) -> Option<Vector> {
        self.prev_g.as_ref().map(|p| g - p)
    }

    fn random(&mut self, n: usize) -> Vector {
        let rng = &mut self.rng;
        Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }
}

/// Anything that can propose sub-search directions. The gradient column is
/// added by the caller, so implementors return only the extra candidates.
pub trait DirectionStrategy {
    fn candidates(&mut self, problem: &ProblemInstance, z: &Vector, g: &Vector) -> Vec<Vector>;

    /// Called after every update with the iterate and gradient that were
    /// just used.
    fn advance(&mut self, z: &Vector, g: &Vector);
}

/// A built-in [`StrategySpec`] with its state.
#[derive(Debug, Clone)]
pub struct BuiltinStrategy {
    pub spec: StrategySpec,
    pub state: StrategyState,
}

impl BuiltinStrategy {
    pub fn new(spec: StrategySpec, seed: u64) -> Self {
        Self {
            spec,
            state: StrategyState::new(seed),
        }
    }
}

/// `count` further basis vectors of the Krylov space `K(A, g)`, built by
/// orthogonalizing each new `A v` against `g` and the vectors before it.
/// The span equals that of `[Ag, ..., A^count g]` together with `g`; the raw
/// powers are numerically dependent long before `count` reaches `n`.
fn krylov(problem: &ProblemInstance, g: &Vector, count: usize) -> Vec<Vector> {
    let gnorm = g.norm();
    if gnorm == 0.0 || !gnorm.is_finite() {
        return vec![];
    }
    let mut basis = vec![g / gnorm];
    for _ in 0..count {
        let mut v = problem.matrix() * basis.last().unwrap();
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        basis.push(v / norm);
    }
    basis.split_off(1)
}

impl DirectionStrategy for BuiltinStrategy {
    fn candidates(&mut self, problem: &ProblemInstance, z: &Vector, g: &Vector) -> Vec<Vector> {
        let state = &mut self.state;
        let n = g.len();
        match self.spec {
            StrategySpec::GradientOnly => vec![],
            StrategySpec::GradPrevStep => state.step(z).into_iter().collect(),
            StrategySpec::Forsythe { s } => krylov(problem, g, s.saturating_sub(1)),
            StrategySpec::ForsytheMomentum => {
                let mut c = krylov(problem, g, 1);
                c.extend(state.step(z));
                c
            }
            StrategySpec::GradRandom => vec![state.random(n)],
            StrategySpec::MomentumRandom => {
                let r = state.random(n);
                state.step(z).into_iter().chain([r]).collect()
            }
            StrategySpec::GradStepYdiff => state
                .step(z)
                .into_iter()
                .chain(state.grad_diff(g))
                .collect(),
        }
    }

    fn advance(&mut self, z: &Vector, g: &Vector) {
        self.state.advance(z, g);
    }
}

/// `W = [g, c_1, c_2, ...]` keeping only candidates that are numerically
/// independent of the columns before them.
pub fn assemble_directions(g: &Vector, candidates: impl IntoIterator<Item = Vector>) -> Matrix {
    let gnorm = g.norm();
    let mut cols = vec![g.clone()];
    if gnorm == 0.0 || !gnorm.is_finite() {
        return Matrix::from_columns(&cols);
    }
    let min_sine = (1.0 - DEPENDENCE_COSINE * DEPENDENCE_COSINE).sqrt();
    let mut basis = vec![g / gnorm];
    for c in candidates {
        let cnorm = c.norm();
        if cnorm == 0.0 || !cnorm.is_finite() {
            continue;
        }
        let c = c * (gnorm / cnorm);
        let mut r = c.clone();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&r);
                r.axpy(-proj, q, 1.0);
            }
        }
        let rnorm = r.norm();
        if rnorm < min_sine * gnorm {
            continue;
        }
        basis.push(r / rnorm);
        cols.push(c);
    }
    Matrix::from_columns(&cols)
}

/// `W_k` for a built-in strategy. `g` must be `g(z)`.
pub fn make_directions(
    strategy: &mut dyn DirectionStrategy,
    problem: &ProblemInstance,
    z: &Vector,
    g: &Vector,
) -> Matrix {
    let extra = strategy.candidates(problem, z, g);
    assemble_directions(g, extra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{generate_problem, initial_point};
    use approx::assert_relative_eq;

    fn setup() -> (ProblemInstance, Vector, Vector) {
        let p = generate_problem(7, 14, 12).unwrap();
        let z = initial_point(7, 12);
        let g = p.gradient(&z).unwrap();
        (p, z, g)
    }

    fn parallel(a: &Vector, b: &Vector) -> bool {
        (a.dot(b).abs() / (a.norm() * b.norm()) - 1.0).abs() < 1e-12
    }

    #[test]
    fn gradient_only_is_single_column() {
        let (p, z, g) = setup();
        let mut s = BuiltinStrategy::new(StrategySpec::GradientOnly, 0);
        for _ in 0..3 {
            let w = make_directions(&mut s, &p, &z, &g);
            assert_eq!(w.ncols(), 1);
            assert_eq!(w.column(0), g.column(0));
            s.advance(&z, &g);
        }
    }

    #[test]
    fn history_strategies_degrade_at_first_iteration() {
        let (p, z, g) = setup();
        for spec in [
            StrategySpec::GradPrevStep,
            StrategySpec::GradStepYdiff,
            StrategySpec::ForsytheMomentum,
            StrategySpec::MomentumRandom,
        ] {
            let mut s = BuiltinStrategy::new(spec, 0);
            let w = make_directions(&mut s, &p, &z, &g);
            let expected = match spec {
                StrategySpec::GradPrevStep | StrategySpec::GradStepYdiff => 1,
                _ => 2,
            };
            assert_eq!(w.ncols(), expected, "{spec:?}");
        }
    }

    #[test]
    fn step_and_gradient_difference_columns() {
        let (p, z0, g0) = setup();
        let z1 = &z0 - &g0 * 1e-3 + initial_point(8, 12) * 1e-2;
        let g1 = p.gradient(&z1).unwrap();
        let mut s = BuiltinStrategy::new(StrategySpec::GradStepYdiff, 0);
        s.advance(&z0, &g0);
        assert!(s.state.prev_z.is_some() && s.state.prev_g.is_some());
        let w = make_directions(&mut s, &p, &z1, &g1);
        assert_eq!(w.ncols(), 3);
        assert!(parallel(&w.column(1).into_owned(), &(&z1 - &z0)));
        assert!(parallel(&w.column(2).into_owned(), &(&g1 - &g0)));
    }

    #[test]
    fn forsythe_columns_span_the_krylov_space() {
        let (p, z, g) = setup();
        let mut s = BuiltinStrategy::new(StrategySpec::Forsythe { s: 3 }, 0);
        let w = make_directions(&mut s, &p, &z, &g);
        assert_eq!(w.ncols(), 3);
        let a = p.matrix();
        let powers = Matrix::from_columns(&[g.clone(), a * &g, a * (a * &g)]);
        // each power lies in span(W) and vice versa
        let q = w.clone().qr().q();
        for v in powers.column_iter() {
            let resid = v - &q * q.tr_mul(&v);
            assert!(resid.norm() <= 1e-10 * v.norm());
        }
        let qp = powers.qr().q();
        for v in w.column_iter() {
            let resid = v - &qp * qp.tr_mul(&v);
            assert!(resid.norm() <= 1e-10 * v.norm());
        }
        // extra columns are orthogonal to the gradient
        assert!(w.column(1).dot(&g).abs() <= 1e-12 * g.norm_squared());
        assert!(StrategySpec::Forsythe { s: 0 }.validate(12).is_err());
        assert!(StrategySpec::Forsythe { s: 13 }.validate(12).is_err());
        assert!(StrategySpec::Forsythe { s: 12 }.validate(12).is_ok());
    }

    #[test]
    fn random_directions_are_seeded() {
        let (p, z, g) = setup();
        let draw = |seed| {
            let mut s = BuiltinStrategy::new(StrategySpec::GradRandom, seed);
            let a = make_directions(&mut s, &p, &z, &g);
            s.advance(&z, &g);
            let b = make_directions(&mut s, &p, &z, &g);
            (a, b)
        };
        let (a1, b1) = draw(5);
        let (a2, b2) = draw(5);
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(a1.ncols(), 2);
        assert_ne!(a1.column(1), b1.column(1));
        assert_ne!(draw(6).0, a1);
    }

    #[test]
    fn dependent_candidates_are_dropped() {
        let g = Vector::from_column_slice(&[1.0, 2.0, 3.0]);
        let w = assemble_directions(
            &g,
            [
                &g * -4.0,
                Vector::zeros(3),
                Vector::from_column_slice(&[0.0, 0.0, 1.0]),
                Vector::from_column_slice(&[1.0, 2.0, 3.0 + 1e-9]),
            ],
        );
        assert_eq!(w.ncols(), 2);
        assert_eq!(w.column(0), g.column(0));
        assert_relative_eq!(w.column(1).norm(), g.norm(), max_relative = 1e-14);
    }

    #[test]
    fn serde_shape() {
        let s: StrategySpec = serde_json::from_str(r#"{"kind": "forsythe", "s": 3}"#).unwrap();
        assert_eq!(s, StrategySpec::Forsythe { s: 3 });
        let s: StrategySpec = serde_json::from_str(r#"{"kind": "grad_prev_step"}"#).unwrap();
        assert_eq!(s, StrategySpec::GradPrevStep);
        assert!(serde_json::from_str::<StrategySpec>(r#"{"kind": "bb"}"#).is_err());
    }
}
