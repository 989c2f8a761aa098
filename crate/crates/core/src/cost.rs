//! Per-agent convex costs with gradients, curvature bounds, and box-penalty
//! wrapping.
//!
//! Decision variables are scalar per agent. A [`CostModel`] pairs a base cost
//! (quadratic, CPU-workload quadratic, or a tabulated convex piecewise-linear
//! cost) with an optional [`BoxPenalty`] realizing soft box constraints
//! `m ≤ x ≤ M` through `ε·[x−M]⁺ + ε·[m−x]⁺` or one of its smooth
//! replacements.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("quadratic coefficient must be positive, got {0}")]
    NonPositiveGamma(f64),
    #[error("quadratic coefficient must be nonnegative, got {0}")]
    NegativeGamma(f64),
    #[error("curvature parameter must be positive, got {0}")]
    NonPositivePi(f64),
    #[error("cost parameter must be finite, got {0}")]
    NonFinite(f64),
    #[error("box requires lower < upper, got [{lower}, {upper}]")]
    BadBox { lower: f64, upper: f64 },
    #[error("penalty weight must be positive, got {0}")]
    BadPenaltyWeight(f64),
    #[error("softplus smoothing parameter must be positive, got {0}")]
    BadSmoothingMu(f64),
    #[error("rescaling requires upper > lower, got [{lower}, {upper}]")]
    DegenerateRange { lower: f64, upper: f64 },
    #[error("curvature interval must be non-degenerate, got [{lo}, {hi}]")]
    DegenerateInterval { lo: f64, hi: f64 },
    #[error("tabulated cost needs at least 2 strictly increasing knots")]
    BadTable,
    #[error("tabulated cost is not convex: slope decreases at knot {index}")]
    NonConvexTable { index: usize },
}

fn check_finite(v: f64) -> Result<f64, CostError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CostError::NonFinite(v))
    }
}

/// `f(x) = γx² + βx + α`, the standard generator-cost form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCost {
    gamma: f64,
    beta: f64,
    alpha: f64,
}

impl QuadraticCost {
    /// Strictly convex quadratic, `γ > 0`.
    pub fn new(gamma: f64, beta: f64, alpha: f64) -> Result<Self, CostError> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(CostError::NonPositiveGamma(gamma));
        }
        Ok(Self {
            gamma,
            beta: check_finite(beta)?,
            alpha: check_finite(alpha)?,
        })
    }

    /// Possibly degenerate quadratic, `γ ≥ 0`. A zero `γ` gives an affine
    /// cost (not strongly convex), which the reserve-stacking path needs to
    /// represent unregularized battery costs.
    pub fn convex(gamma: f64, beta: f64, alpha: f64) -> Result<Self, CostError> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(CostError::NegativeGamma(gamma));
        }
        Ok(Self {
            gamma,
            beta: check_finite(beta)?,
            alpha: check_finite(alpha)?,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_strongly_convex(&self) -> bool {
        self.gamma > 0.0
    }
}

/// CPU workload cost `f(x) = ½π(x − target)²` with curvature `π` and the
/// per-node optimum at `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpuCost {
    pi: f64,
    target: f64,
}

impl CpuCost {
    pub fn new(pi: f64, target: f64) -> Result<Self, CostError> {
        if !(pi > 0.0) || !pi.is_finite() {
            return Err(CostError::NonPositivePi(pi));
        }
        Ok(Self {
            pi,
            target: check_finite(target)?,
        })
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn target(&self) -> f64 {
        self.target
    }
}

/// Convex piecewise-linear cost through tabulated `(x, f(x))` samples,
/// extended beyond the table by the end slopes.
///
/// The gradient is the segment slope; at a knot it is the average of the two
/// adjacent slopes (a valid subgradient). Not strongly convex, so the
/// bisection oracle rejects it; the protocols run fine on it.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedCost {
    xs: Vec<f64>,
    fs: Vec<f64>,
}

impl TabulatedCost {
    pub fn new(xs: Vec<f64>, fs: Vec<f64>) -> Result<Self, CostError> {
        if xs.len() < 2 || xs.len() != fs.len() {
            return Err(CostError::BadTable);
        }
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(CostError::BadTable);
            }
        }
        for v in xs.iter().chain(fs.iter()) {
            check_finite(*v)?;
        }
        let mut prev_slope = f64::NEG_INFINITY;
        for i in 0..xs.len() - 1 {
            let slope = (fs[i + 1] - fs[i]) / (xs[i + 1] - xs[i]);
            if slope < prev_slope {
                return Err(CostError::NonConvexTable { index: i });
            }
            prev_slope = slope;
        }
        Ok(Self { xs, fs })
    }

    fn segment(&self, x: f64) -> usize {
        // index i such that the segment [xs[i], xs[i+1]] governs x
        match self.xs.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.xs.len() - 2),
        }
    }

    fn slope(&self, i: usize) -> f64 {
        (self.fs[i + 1] - self.fs[i]) / (self.xs[i + 1] - self.xs[i])
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        self.fs[i] + self.slope(i) * (x - self.xs[i])
    }

    pub fn gradient(&self, x: f64) -> f64 {
        // at an interior knot, return the mean of adjacent slopes
        if let Ok(i) = self.xs.binary_search_by(|p| p.total_cmp(&x)) {
            if i > 0 && i < self.xs.len() - 1 {
                return 0.5 * (self.slope(i - 1) + self.slope(i));
            }
        }
        self.slope(self.segment(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaseCost {
    Quadratic(QuadraticCost),
    Cpu(CpuCost),
    Tabulated(TabulatedCost),
}

impl BaseCost {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            BaseCost::Quadratic(q) => (q.gamma * x + q.beta) * x + q.alpha,
            BaseCost::Cpu(c) => 0.5 * c.pi * (x - c.target) * (x - c.target),
            BaseCost::Tabulated(t) => t.eval(x),
        }
    }

    pub fn gradient(&self, x: f64) -> f64 {
        match self {
            BaseCost::Quadratic(q) => 2.0 * q.gamma * x + q.beta,
            BaseCost::Cpu(c) => c.pi * (x - c.target),
            BaseCost::Tabulated(t) => t.gradient(x),
        }
    }

    /// Constant second derivative for the quadratic families.
    fn constant_curvature(&self) -> Option<f64> {
        match self {
            BaseCost::Quadratic(q) => Some(2.0 * q.gamma),
            BaseCost::Cpu(c) => Some(c.pi),
            BaseCost::Tabulated(_) => None,
        }
    }
}

/// How the non-smooth hinge `ε[u]⁺` is realized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltySmoothing {
    /// `ε·max(u, 0)`: exact but kinked; the gradient uses the subgradient 0
    /// at the kink (the one-sided derivative from inside the box).
    ExactHinge,
    /// `ε·(1/μ)·log(1 + exp(μu))`: smooth everywhere, approaches the hinge
    /// as `μ → ∞`. `smoothing_mu` is the sharpness `μ` of the surrogate,
    /// unrelated to the sign-power exponent.
    Softplus { smoothing_mu: f64 },
    /// `ε·(max(u, 0))²`: C¹ with piecewise-linear gradient; the default
    /// because it keeps gradients Lipschitz, which the rate bound needs.
    SquaredHinge,
}

/// Soft box constraint `lower ≤ x ≤ upper` with weight `ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxPenalty {
    lower: f64,
    upper: f64,
    weight: f64,
    smoothing: PenaltySmoothing,
}

/// Numerically stable `log(1 + exp(z))`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Logistic function `1 / (1 + exp(−z))`.
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl BoxPenalty {
    pub fn new(
        lower: f64,
        upper: f64,
        weight: f64,
        smoothing: PenaltySmoothing,
    ) -> Result<Self, CostError> {
        check_finite(lower)?;
        check_finite(upper)?;
        if !(lower < upper) {
            return Err(CostError::BadBox { lower, upper });
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(CostError::BadPenaltyWeight(weight));
        }
        if let PenaltySmoothing::Softplus { smoothing_mu } = smoothing {
            if !(smoothing_mu > 0.0) || !smoothing_mu.is_finite() {
                return Err(CostError::BadSmoothingMu(smoothing_mu));
            }
        }
        Ok(Self {
            lower,
            upper,
            weight,
            smoothing,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn smoothing(&self) -> PenaltySmoothing {
        self.smoothing
    }

    /// Penalty value: the upper-violation term plus the lower-violation term.
    pub fn eval(&self, x: f64) -> f64 {
        self.weight * (self.hinge(x - self.upper) + self.hinge(self.lower - x))
    }

    pub fn gradient(&self, x: f64) -> f64 {
        self.weight * (self.hinge_grad(x - self.upper) - self.hinge_grad(self.lower - x))
    }

    fn hinge(&self, u: f64) -> f64 {
        match self.smoothing {
            PenaltySmoothing::ExactHinge => u.max(0.0),
            PenaltySmoothing::Softplus { smoothing_mu } => softplus(smoothing_mu * u) / smoothing_mu,
            PenaltySmoothing::SquaredHinge => {
                let p = u.max(0.0);
                p * p
            }
        }
    }

    fn hinge_grad(&self, u: f64) -> f64 {
        match self.smoothing {
            PenaltySmoothing::ExactHinge => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            PenaltySmoothing::Softplus { smoothing_mu } => logistic(smoothing_mu * u),
            PenaltySmoothing::SquaredHinge => 2.0 * u.max(0.0),
        }
    }

    /// Curvature contribution bounds on `[lo, hi]`, plus whether the bounds
    /// exclude kink points (true only for the exact hinge).
    fn curvature_bounds(&self, lo: f64, hi: f64) -> (f64, f64, bool) {
        match self.smoothing {
            // f'' is 0 away from the kinks and undefined at them.
            PenaltySmoothing::ExactHinge => (0.0, 0.0, true),
            // each hinge term contributes ε·μ·σ'(·) ∈ (0, εμ/4]
            PenaltySmoothing::Softplus { smoothing_mu } => {
                (0.0, 2.0 * self.weight * smoothing_mu / 4.0, false)
            }
            PenaltySmoothing::SquaredHinge => {
                let reaches_outside = lo < self.lower || hi > self.upper;
                let max = if reaches_outside { 2.0 * self.weight } else { 0.0 };
                // Curvature is 2ε only when the whole interval sits strictly
                // beyond one bound; anywhere touching the box can sample 0.
                let strictly_outside = lo > self.upper || hi < self.lower;
                let min = if strictly_outside { 2.0 * self.weight } else { 0.0 };
                (min, max, false)
            }
        }
    }
}

/// Certified curvature range `lower ≤ f″ ≤ upper` on an interval.
///
/// `base_only` flags results where the penalty term's curvature is undefined
/// at kinks (exact hinge), so the bounds cover the base cost only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureBounds {
    pub lower: f64,
    pub upper: f64,
    pub base_only: bool,
}

/// A complete per-agent cost: base plus optional box penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    base: BaseCost,
    penalty: Option<BoxPenalty>,
}

impl CostModel {
    pub fn new(base: BaseCost, penalty: Option<BoxPenalty>) -> Self {
        Self { base, penalty }
    }

    pub fn quadratic(q: QuadraticCost) -> Self {
        Self::new(BaseCost::Quadratic(q), None)
    }

    pub fn cpu(c: CpuCost) -> Self {
        Self::new(BaseCost::Cpu(c), None)
    }

    pub fn base(&self) -> &BaseCost {
        &self.base
    }

    pub fn penalty(&self) -> Option<&BoxPenalty> {
        self.penalty.as_ref()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.base.eval(x) + self.penalty.map_or(0.0, |p| p.eval(x))
    }

    pub fn gradient(&self, x: f64) -> f64 {
        self.base.gradient(x) + self.penalty.map_or(0.0, |p| p.gradient(x))
    }

    /// Certified second-derivative bounds on `interval`.
    ///
    /// Quadratic bases have constant curvature; the tabulated base is flat
    /// within segments but has unbounded second differences at its knots, so
    /// it reports `[0, ∞)`.
    pub fn curvature_bounds(&self, interval: (f64, f64)) -> Result<CurvatureBounds, CostError> {
        let (lo, hi) = interval;
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(CostError::DegenerateInterval { lo, hi });
        }
        let (mut lower, mut upper) = match self.base.constant_curvature() {
            Some(c) => (c, c),
            None => (0.0, f64::INFINITY),
        };
        let mut base_only = false;
        if let Some(p) = &self.penalty {
            let (pl, pu, kinked) = p.curvature_bounds(lo, hi);
            if kinked {
                base_only = true;
            } else {
                lower += pl;
                upper += pu;
            }
        }
        Ok(CurvatureBounds {
            lower,
            upper,
            base_only,
        })
    }

    /// Aggregate curvature bounds across a set of agents: the loosest box
    /// containing every agent's certified range.
    pub fn aggregate_curvature(
        costs: &[CostModel],
        interval: (f64, f64),
    ) -> Result<CurvatureBounds, CostError> {
        let mut lower = f64::INFINITY;
        let mut upper: f64 = 0.0;
        let mut base_only = false;
        for c in costs {
            let b = c.curvature_bounds(interval)?;
            lower = lower.min(b.lower);
            upper = upper.max(b.upper);
            base_only |= b.base_only;
        }
        Ok(CurvatureBounds {
            lower,
            upper,
            base_only,
        })
    }
}

/// `z = (x − lower) / (upper − lower)`, mapping the box onto `[0, 1]`.
pub fn rescale_to_unit(x: f64, lower: f64, upper: f64) -> Result<f64, CostError> {
    if !(upper > lower) {
        return Err(CostError::DegenerateRange { lower, upper });
    }
    Ok((x - lower) / (upper - lower))
}

/// Inverse of [`rescale_to_unit`].
pub fn rescale_back(z: f64, lower: f64, upper: f64) -> Result<f64, CostError> {
    if !(upper > lower) {
        return Err(CostError::DegenerateRange { lower, upper });
    }
    Ok(lower + z * (upper - lower))
}

/// `F(x) = Σ f_i(x_i)`.
pub fn total_cost(costs: &[CostModel], x: &[f64]) -> f64 {
    costs.iter().zip(x).map(|(c, &xi)| c.eval(xi)).sum()
}

/// All local gradients at the current state.
pub fn gradients(costs: &[CostModel], x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(costs.iter().zip(x).map(|(c, &xi)| c.gradient(xi)));
}

/// `max_i ∂f_i − min_i ∂f_i`; zero exactly at gradient consensus.
pub fn gradient_dispersion(costs: &[CostModel], x: &[f64]) -> f64 {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (c, &xi) in costs.iter().zip(x) {
        let g = c.gradient(xi);
        min = min.min(g);
        max = max.max(g);
    }
    if min.is_finite() && max.is_finite() {
        max - min
    } else {
        f64::NAN
    }
}
