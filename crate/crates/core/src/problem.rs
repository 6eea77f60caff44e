//! Problem data: quadratic follower costs, the affine resource constraint
//! `R z = c`, type-space bounds, and the geometric primitives (projection,
//! distance, social cost) shared by every mechanism.

use std::fmt;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{MechanismError, Result};
use crate::scalar::{lit, to_f64, Scalar, Tolerances};

/// Strictly convex quadratic cost `v(z) = ½ zᵀQz + bᵀz + c0`.
///
/// The triple `(Q, b, c0)` is the follower's private type.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost<T: Scalar> {
    q: DMatrix<T>,
    b: DVector<T>,
    c0: T,
}

impl<T: Scalar> QuadraticCost<T> {
    /// Builds a cost from raw coefficients. Only shapes are checked here;
    /// symmetry and strict convexity are reported by [`validate_problem`].
    pub fn new(q: DMatrix<T>, b: DVector<T>, c0: T) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(MechanismError::DimensionMismatch {
                context: "cost curvature (square)",
                expected: q.nrows(),
                actual: q.ncols(),
            });
        }
        if b.len() != q.nrows() {
            return Err(MechanismError::DimensionMismatch {
                context: "cost linear term",
                expected: q.nrows(),
                actual: b.len(),
            });
        }
        Ok(QuadraticCost { q, b, c0 })
    }

    /// One-dimensional cost `½ a z² + b z + c0`.
    pub fn scalar(a: T, b: T, c0: T) -> Self {
        QuadraticCost {
            q: DMatrix::from_element(1, 1, a),
            b: DVector::from_element(1, b),
            c0,
        }
    }

    /// `weight · ‖z − target‖²`.
    pub fn squared_distance(weight: T, target: &[T]) -> Self {
        let n = target.len();
        let t = DVector::from_column_slice(target);
        QuadraticCost {
            q: DMatrix::identity(n, n) * (weight * lit(2.0)),
            b: &t * (-weight * lit(2.0)),
            c0: weight * t.norm_squared(),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn curvature(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn linear(&self) -> &DVector<T> {
        &self.b
    }

    pub fn offset(&self) -> T {
        self.c0
    }

    pub fn evaluate(&self, z: &DVectorView<'_, T>) -> T {
        let qz = &self.q * z;
        z.dot(&qz) * lit(0.5) + self.b.dot(z) + self.c0
    }

    /// Convenience wrapper over [`QuadraticCost::evaluate`] for slices.
    pub fn eval(&self, z: &[T]) -> T {
        self.evaluate(&DVectorView::from_slice(z, z.len()))
    }

    pub fn gradient(&self, z: &DVectorView<'_, T>) -> DVector<T> {
        &self.q * z + &self.b
    }

    pub fn is_symmetric(&self, rel_tol: T) -> bool {
        let scale = self.q.amax().max(T::one());
        let asym = (&self.q - self.q.transpose()).amax();
        asym <= rel_tol * scale
    }

    /// Smallest eigenvalue of the symmetric part of `Q`.
    pub fn min_eigenvalue(&self) -> T {
        if self.dim() == 0 {
            return T::max_value().unwrap_or_else(T::one);
        }
        let sym = (&self.q + self.q.transpose()) * lit::<T>(0.5);
        sym.symmetric_eigenvalues().min()
    }

    /// Unconstrained minimizer `−Q⁻¹b`, if `Q` is invertible.
    pub fn minimizer(&self) -> Option<DVector<T>> {
        self.q.clone().cholesky().map(|ch| -ch.solve(&self.b))
    }

    /// Unconstrained minimum value. Falls back to `c0` when the cost is
    /// constant in every direction with zero slope.
    pub fn minimum_value(&self) -> Option<T> {
        match self.minimizer() {
            Some(z) => Some(self.evaluate(&z.as_view())),
            None if self.b.iter().all(|x| *x == T::zero()) && self.q.iter().all(|x| *x == T::zero()) => {
                Some(self.c0)
            }
            None => None,
        }
    }
}

/// Affine feasible set `{ z : R z = c }` with `R` of full row rank.
#[derive(Debug, Clone)]
pub struct AffineSet<T: Scalar> {
    r: DMatrix<T>,
    c: DVector<T>,
    gram: Option<nalgebra::Cholesky<T, nalgebra::Dyn>>,
}

impl<T: Scalar> AffineSet<T> {
    pub fn new(r: DMatrix<T>, c: DVector<T>) -> Result<Self> {
        if r.nrows() != c.len() {
            return Err(MechanismError::DimensionMismatch {
                context: "constraint right-hand side",
                expected: r.nrows(),
                actual: c.len(),
            });
        }
        let gram = if r.nrows() == 0 {
            None
        } else {
            let rank = numerical_rank(&r, Tolerances::<T>::default().feasibility);
            if rank < r.nrows() {
                return Err(MechanismError::RankDeficient {
                    rank,
                    rows: r.nrows(),
                });
            }
            let g = &r * r.transpose();
            Some(g.cholesky().ok_or(MechanismError::RankDeficient {
                rank,
                rows: r.nrows(),
            })?)
        };
        Ok(AffineSet { r, c, gram })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.r
    }

    pub fn rhs(&self) -> &DVector<T> {
        &self.c
    }

    fn check_dim(&self, z: &DVector<T>) -> Result<()> {
        if z.len() != self.r.ncols() {
            return Err(MechanismError::DimensionMismatch {
                context: "decision vector",
                expected: self.r.ncols(),
                actual: z.len(),
            });
        }
        Ok(())
    }

    /// `z − Rᵀ(RRᵀ)⁻¹(Rz − c)`, with one step of iterative refinement.
    pub fn project(&self, z: &DVector<T>) -> Result<DVector<T>> {
        self.check_dim(z)?;
        let Some(gram) = &self.gram else {
            return Ok(z.clone());
        };
        let mut p = z.clone();
        for _ in 0..2 {
            let residual = &self.r * &p - &self.c;
            p -= self.r.transpose() * gram.solve(&residual);
        }
        Ok(p)
    }

    pub fn distance(&self, z: &DVector<T>) -> Result<T> {
        let p = self.project(z)?;
        Ok((z - p).norm())
    }

    pub fn residual_inf(&self, z: &DVector<T>) -> Result<T> {
        self.check_dim(z)?;
        if self.r.nrows() == 0 {
            return Ok(T::zero());
        }
        Ok((&self.r * z - &self.c).amax())
    }
}

/// Projection of `z` onto `{ Rz = c }`.
pub fn affine_projection<T: Scalar>(
    r: &DMatrix<T>,
    c: &DVector<T>,
    z: &DVector<T>,
) -> Result<DVector<T>> {
    AffineSet::new(r.clone(), c.clone())?.project(z)
}

/// Euclidean distance from `z` to `{ Rz = c }`.
pub fn distance_to_feasible<T: Scalar>(
    r: &DMatrix<T>,
    c: &DVector<T>,
    z: &DVector<T>,
) -> Result<T> {
    AffineSet::new(r.clone(), c.clone())?.distance(z)
}

/// Number of singular values above `rel_tol · max(1, σ_max)`.
pub fn numerical_rank<T: Scalar>(m: &DMatrix<T>, rel_tol: T) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max().max(T::one());
    sv.iter().filter(|s| **s > rel_tol * smax).count()
}

/// Resource allocation problem `min Σ vᵢ(zᵢ)  s.t.  R z = c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem<T: Scalar> {
    costs: Vec<QuadraticCost<T>>,
    r: DMatrix<T>,
    c: DVector<T>,
    offsets: Vec<usize>,
}

impl<T: Scalar> AllocationProblem<T> {
    /// Checks only that shapes agree; see [`validate_problem`] for the
    /// mathematical invariants.
    pub fn new(costs: Vec<QuadraticCost<T>>, r: DMatrix<T>, c: DVector<T>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(costs.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for cost in &costs {
            acc += cost.dim();
            offsets.push(acc);
        }
        if r.ncols() != acc {
            return Err(MechanismError::DimensionMismatch {
                context: "constraint matrix columns",
                expected: acc,
                actual: r.ncols(),
            });
        }
        if r.nrows() != c.len() {
            return Err(MechanismError::DimensionMismatch {
                context: "constraint right-hand side",
                expected: r.nrows(),
                actual: c.len(),
            });
        }
        Ok(AllocationProblem {
            costs,
            r,
            c,
            offsets,
        })
    }

    pub fn followers(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[QuadraticCost<T>] {
        &self.costs
    }

    pub fn cost(&self, i: usize) -> &QuadraticCost<T> {
        &self.costs[i]
    }

    pub fn constraint(&self) -> &DMatrix<T> {
        &self.r
    }

    pub fn budget(&self) -> &DVector<T> {
        &self.c
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.costs.iter().map(QuadraticCost::dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn constraints(&self) -> usize {
        self.r.nrows()
    }

    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn block<'a>(&self, z: &'a DVector<T>, i: usize) -> DVectorView<'a, T> {
        let range = self.block_range(i);
        z.rows(range.start, range.len())
    }

    /// Columns of `R` belonging to follower `i`.
    pub fn r_block(&self, i: usize) -> DMatrix<T> {
        let range = self.block_range(i);
        self.r.columns(range.start, range.len()).into_owned()
    }

    pub fn feasible_set(&self) -> Result<AffineSet<T>> {
        AffineSet::new(self.r.clone(), self.c.clone())
    }

    pub fn check_follower(&self, i: usize) -> Result<()> {
        if i >= self.followers() {
            return Err(MechanismError::FollowerIndex {
                index: i,
                count: self.followers(),
            });
        }
        Ok(())
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_problem(self);
        if report.accepted() {
            Ok(())
        } else {
            Err(MechanismError::Validation(report.violations))
        }
    }

    /// Same problem with every follower's cost replaced.
    pub fn with_costs(&self, costs: Vec<QuadraticCost<T>>) -> Result<Self> {
        AllocationProblem::new(costs, self.r.clone(), self.c.clone())
    }
}

/// `Σᵢ vᵢ(zᵢ)` under the problem's true costs.
pub fn social_cost<T: Scalar>(problem: &AllocationProblem<T>, z: &DVector<T>) -> Result<T> {
    if z.len() != problem.total_dim() {
        return Err(MechanismError::DimensionMismatch {
            context: "decision vector",
            expected: problem.total_dim(),
            actual: z.len(),
        });
    }
    Ok((0..problem.followers())
        .map(|i| problem.cost(i).evaluate(&problem.block(z, i)))
        .fold(T::zero(), |a, b| a + b))
}

/// A single invariant violated by a problem.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewFollowers { count: usize },
    NotSymmetric { follower: usize },
    NotStrictlyConvex { follower: usize, min_eigenvalue: f64 },
    RankDeficient { rank: usize, rows: usize },
    Infeasible { residual: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewFollowers { count } => {
                write!(f, "need at least 2 followers, got {count}")
            }
            Violation::NotSymmetric { follower } => {
                write!(f, "follower {follower}: curvature matrix not symmetric")
            }
            Violation::NotStrictlyConvex {
                follower,
                min_eigenvalue,
            } => write!(
                f,
                "follower {follower}: cost not strictly convex (min eigenvalue {min_eigenvalue:e})"
            ),
            Violation::RankDeficient { rank, rows } => write!(
                f,
                "constraint matrix rank {rank} < {rows} rows; remove redundant constraints"
            ),
            Violation::Infeasible { residual } => {
                write!(f, "constraint system Rz = c is infeasible (residual {residual:e})")
            }
        }
    }
}

/// Outcome of [`validate_problem`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport<T> {
    pub rank: usize,
    pub rows: usize,
    pub feasible: bool,
    pub feasibility_residual: T,
    /// Smallest eigenvalue of each follower's curvature.
    pub pd_margins: Vec<T>,
    pub violations: Vec<Violation>,
}

impl<T> ValidationReport<T> {
    pub fn accepted(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_problem<T: Scalar>(problem: &AllocationProblem<T>) -> ValidationReport<T> {
    validate_problem_with(problem, &Tolerances::default())
}

pub fn validate_problem_with<T: Scalar>(
    problem: &AllocationProblem<T>,
    tol: &Tolerances<T>,
) -> ValidationReport<T> {
    let mut violations = Vec::new();
    if problem.followers() < 2 {
        violations.push(Violation::TooFewFollowers {
            count: problem.followers(),
        });
    }
    let mut pd_margins = Vec::with_capacity(problem.followers());
    for (i, cost) in problem.costs().iter().enumerate() {
        if !cost.is_symmetric(tol.exactness) {
            violations.push(Violation::NotSymmetric { follower: i });
        }
        let margin = cost.min_eigenvalue();
        // Strict convexity relative to the matrix scale.
        let scale = cost.curvature().amax().max(T::one());
        if margin <= tol.exactness * scale {
            violations.push(Violation::NotStrictlyConvex {
                follower: i,
                min_eigenvalue: to_f64(margin),
            });
        }
        pd_margins.push(margin);
    }

    let r = problem.constraint();
    let c = problem.budget();
    let rows = r.nrows();
    let rank = numerical_rank(r, tol.feasibility);
    if rank < rows {
        violations.push(Violation::RankDeficient { rank, rows });
    }

    let residual = least_squares_residual(r, c, tol.feasibility);
    let feasible = residual <= tol.feasibility * (T::one() + c.amax());
    if !feasible {
        violations.push(Violation::Infeasible {
            residual: to_f64(residual),
        });
    }

    ValidationReport {
        rank,
        rows,
        feasible,
        feasibility_residual: residual,
        pd_margins,
        violations,
    }
}

/// `‖R R⁺ c − c‖∞` via a truncated SVD pseudo-inverse.
fn least_squares_residual<T: Scalar>(r: &DMatrix<T>, c: &DVector<T>, rel_tol: T) -> T {
    if r.nrows() == 0 {
        return T::zero();
    }
    if r.ncols() == 0 {
        return c.amax();
    }
    let svd = r.clone().svd(true, true);
    let smax = svd.singular_values.max().max(T::one());
    match svd.solve(c, rel_tol * smax) {
        Ok(x) => (r * x - c).amax(),
        Err(_) => c.amax(),
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Interval<T> {
    pub fn new(lo: T, hi: T) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(MechanismError::UnboundedTypes(
                "interval endpoints must be finite".into(),
            ));
        }
        if lo > hi {
            return Err(MechanismError::UnboundedTypes(format!(
                "interval lower bound {} exceeds upper bound {}",
                to_f64(lo),
                to_f64(hi)
            )));
        }
        Ok(Interval { lo, hi })
    }

    pub fn point(x: T) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    pub fn contains(&self, x: T) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Coordinate-wise bounds on each follower's type.
///
/// A type is identified with the location of the follower's cost minimizer
/// (its "target"); curvature and minimum value are taken from the cost model.
/// For the consensus mechanism the target is the initial position `θᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeSpaceBounds<T> {
    per_follower: Vec<Vec<Interval<T>>>,
}

impl<T: Scalar> TypeSpaceBounds<T> {
    pub fn new(per_follower: Vec<Vec<Interval<T>>>) -> Result<Self> {
        for (i, f) in per_follower.iter().enumerate() {
            for iv in f {
                if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.lo > iv.hi {
                    return Err(MechanismError::UnboundedTypes(format!(
                        "follower {i} has an invalid interval"
                    )));
                }
            }
        }
        Ok(TypeSpaceBounds { per_follower })
    }

    /// One scalar interval per follower.
    pub fn scalar(intervals: Vec<Interval<T>>) -> Result<Self> {
        Self::new(intervals.into_iter().map(|iv| vec![iv]).collect())
    }

    pub fn followers(&self) -> usize {
        self.per_follower.len()
    }

    pub fn follower(&self, i: usize) -> &[Interval<T>] {
        &self.per_follower[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Interval<T>]> {
        self.per_follower.iter().map(Vec::as_slice)
    }
}
