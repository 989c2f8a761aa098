//! Centralized ground-truth solvers for the constrained problem
//! `min Σ f_i(x_i)` s.t. `Σ x_i = K`.
//!
//! At the optimum every agent's marginal cost agrees: `∂f_i(x_i*) = ψ*`. The
//! closed-form solver handles unpenalized quadratic-family costs; the
//! bisection solver handles any strongly convex [`CostModel`] by searching
//! over the common marginal `ψ` and inverting each gradient. Protocol runs
//! measure their residuals against these solutions.

use crate::cost::{BaseCost, CostModel, QuadraticCost};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("closed form needs unpenalized quadratic-family costs; agent {0} is not")]
    NotClosedForm(usize),
    #[error("closed form needs strictly convex costs; agent {index} has zero curvature")]
    DegenerateCurvature { index: usize },
    #[error("no costs supplied")]
    NoCosts,
    #[error("constraint K must be finite, got {0}")]
    BadConstraint(f64),
    #[error("bracket [{lo}, {hi}] does not straddle the constraint after {expansions} expansions")]
    BracketFailed { lo: f64, hi: f64, expansions: u32 },
    #[error("gradient of agent {index} is not strictly increasing (observed {g_lo} at {lo} vs {g_hi} at {hi})")]
    NonMonotoneGradient {
        index: usize,
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
    },
    #[error("bisection failed to meet tolerance {tol} (best gap {gap})")]
    NoConvergence { tol: f64, gap: f64 },
    #[error("battery regularizer must be nonnegative and finite, got {0}")]
    BadRegularizer(f64),
    #[error("battery coefficient {index} must be finite, got {value}")]
    BadBatteryCoeff { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    ClosedForm,
    Bisection,
}

/// Optimal allocation `x*`, common marginal `ψ*`, and optimal cost `F*`.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub x_star: Vec<f64>,
    pub psi_star: f64,
    pub f_star: f64,
    pub method: SolveMethod,
    /// `max_i |∂f_i(x_i*) − ψ*|`.
    pub residual_kkt: f64,
}

impl OracleSolution {
    fn finish(costs: &[CostModel], x: Vec<f64>, psi: f64, method: SolveMethod) -> Self {
        let f_star = crate::cost::total_cost(costs, &x);
        let residual_kkt = costs
            .iter()
            .zip(&x)
            .map(|(c, &xi)| (c.gradient(xi) - psi).abs())
            .fold(0.0, f64::max);
        Self {
            x_star: x,
            psi_star: psi,
            f_star,
            method,
            residual_kkt,
        }
    }
}

/// Gradient inverse for unpenalized quadratic-family costs:
/// `x(ψ) = slope·ψ + offset`.
fn linear_gradient_inverse(cost: &CostModel, index: usize) -> Result<(f64, f64), OracleError> {
    if cost.penalty().is_some() {
        return Err(OracleError::NotClosedForm(index));
    }
    match cost.base() {
        BaseCost::Quadratic(q) => {
            if !q.is_strongly_convex() {
                return Err(OracleError::DegenerateCurvature { index });
            }
            Ok((1.0 / (2.0 * q.gamma()), -q.beta() / (2.0 * q.gamma())))
        }
        BaseCost::Cpu(c) => Ok((1.0 / c.pi(), c.target())),
        BaseCost::Tabulated(_) => Err(OracleError::NotClosedForm(index)),
    }
}

/// KKT solution for unpenalized quadratic-family costs.
///
/// With `f_i = γ_i x² + β_i x + α_i`, each `x_i(ψ) = (ψ − β_i)/(2γ_i)` and
/// the constraint fixes `ψ* = (K + Σ β_i/(2γ_i)) / Σ 1/(2γ_i)`; the CPU form
/// is analogous with `π_i` and `target_i`.
pub fn solve_closed_form(costs: &[CostModel], k: f64) -> Result<OracleSolution, OracleError> {
    if costs.is_empty() {
        return Err(OracleError::NoCosts);
    }
    if !k.is_finite() {
        return Err(OracleError::BadConstraint(k));
    }
    let mut slope_sum = 0.0;
    let mut offset_sum = 0.0;
    let lines: Vec<(f64, f64)> = costs
        .iter()
        .enumerate()
        .map(|(i, c)| linear_gradient_inverse(c, i))
        .collect::<Result<_, _>>()?;
    for &(s, c) in &lines {
        slope_sum += s;
        offset_sum += c;
    }
    let psi = (k - offset_sum) / slope_sum;
    let x: Vec<f64> = lines.iter().map(|&(s, c)| s * psi + c).collect();
    Ok(OracleSolution::finish(costs, x, psi, SolveMethod::ClosedForm))
}

/// Options for [`solve_bisection`]. Defaults: auto-expanding bracket,
/// constraint tolerance `1e-10·(1+|K|)`, ψ tolerance `1e-12·(1+|ψ|)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BisectionOptions {
    pub bracket: Option<(f64, f64)>,
    pub constraint_tol: Option<f64>,
}

const MAX_BRACKET_EXPANSIONS: u32 = 60;
const MAX_OUTER_ITERS: u32 = 400;
const MAX_INNER_ITERS: u32 = 200;

/// Invert one strictly increasing gradient: find `x` with `∂f(x) = ψ`.
fn invert_gradient(cost: &CostModel, index: usize, psi: f64) -> Result<f64, OracleError> {
    if let Ok((slope, offset)) = linear_gradient_inverse(cost, index) {
        return Ok(slope * psi + offset);
    }
    // generic inner bisection with bracket expansion
    let mut lo = -1.0;
    let mut hi = 1.0;
    let mut width = 1.0;
    for _ in 0..MAX_BRACKET_EXPANSIONS {
        let g_lo = cost.gradient(lo);
        let g_hi = cost.gradient(hi);
        if g_lo > g_hi {
            return Err(OracleError::NonMonotoneGradient {
                index,
                lo,
                hi,
                g_lo,
                g_hi,
            });
        }
        if g_lo <= psi && psi <= g_hi {
            let mut a = lo;
            let mut b = hi;
            for _ in 0..MAX_INNER_ITERS {
                let mid = 0.5 * (a + b);
                if cost.gradient(mid) < psi {
                    a = mid;
                } else {
                    b = mid;
                }
                if (b - a).abs() <= f64::EPSILON * (1.0 + a.abs().max(b.abs())) {
                    break;
                }
            }
            return Ok(0.5 * (a + b));
        }
        width *= 2.0;
        if psi < g_lo {
            lo -= width;
        } else {
            hi += width;
        }
    }
    Err(OracleError::BracketFailed {
        lo,
        hi,
        expansions: MAX_BRACKET_EXPANSIONS,
    })
}

/// Certify strictly increasing gradients before bisecting: every agent needs
/// a positive certified curvature lower bound (the exact-hinge penalty is
/// fine, since its base-only bounds still certify the base).
fn check_strict_convexity(costs: &[CostModel]) -> Result<(), OracleError> {
    for (index, cost) in costs.iter().enumerate() {
        let b = cost
            .curvature_bounds((-1e9, 1e9))
            .map_err(|_| OracleError::DegenerateCurvature { index })?;
        if !(b.lower > 0.0) {
            return Err(OracleError::DegenerateCurvature { index });
        }
    }
    Ok(())
}

/// Numerical KKT solve for arbitrary strongly convex cost models.
///
/// Bisects on the common marginal `ψ`, inverting each agent's monotone
/// gradient (closed form where available, inner bisection otherwise), until
/// `|Σ x_i(ψ) − K|` meets the constraint tolerance.
pub fn solve_bisection(
    costs: &[CostModel],
    k: f64,
    options: &BisectionOptions,
) -> Result<OracleSolution, OracleError> {
    if costs.is_empty() {
        return Err(OracleError::NoCosts);
    }
    if !k.is_finite() {
        return Err(OracleError::BadConstraint(k));
    }
    check_strict_convexity(costs)?;
    let constraint_tol = options
        .constraint_tol
        .unwrap_or(1e-10 * (1.0 + k.abs()));

    let sum_at = |psi: f64| -> Result<f64, OracleError> {
        let mut s = 0.0;
        for (i, c) in costs.iter().enumerate() {
            s += invert_gradient(c, i, psi)?;
        }
        Ok(s)
    };

    // Bracket ψ so that Σx(ψ) − K changes sign.
    let (mut lo, mut hi) = match options.bracket {
        Some((lo, hi)) => (lo, hi),
        None => {
            let center = k / costs.len() as f64;
            let grads: Vec<f64> = costs.iter().map(|c| c.gradient(center)).collect();
            let lo = grads.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
            let hi = grads.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
            (lo, hi)
        }
    };
    let mut expansions = 0;
    let (mut f_lo, mut f_hi) = (sum_at(lo)? - k, sum_at(hi)? - k);
    let mut width = (hi - lo).max(1.0);
    while f_lo > 0.0 || f_hi < 0.0 {
        expansions += 1;
        if expansions > MAX_BRACKET_EXPANSIONS || options.bracket.is_some() {
            return Err(OracleError::BracketFailed {
                lo,
                hi,
                expansions,
            });
        }
        if f_lo > 0.0 {
            lo -= width;
            f_lo = sum_at(lo)? - k;
        }
        if f_hi < 0.0 {
            hi += width;
            f_hi = sum_at(hi)? - k;
        }
        width *= 2.0;
    }

    let mut best = (f_lo.abs(), lo);
    for _ in 0..MAX_OUTER_ITERS {
        let mid = 0.5 * (lo + hi);
        let gap = sum_at(mid)? - k;
        if gap.abs() < best.0 {
            best = (gap.abs(), mid);
        }
        if gap.abs() <= constraint_tol
            && (hi - lo).abs() <= 1e-12 * (1.0 + mid.abs())
        {
            break;
        }
        if gap < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= f64::EPSILON * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    let psi = best.1;
    let final_gap = best.0;
    if final_gap > constraint_tol {
        return Err(OracleError::NoConvergence {
            tol: constraint_tol,
            gap: final_gap,
        });
    }
    let x: Vec<f64> = costs
        .iter()
        .enumerate()
        .map(|(i, c)| invert_gradient(c, i, psi))
        .collect::<Result<_, _>>()?;
    Ok(OracleSolution::finish(costs, x, psi, SolveMethod::Bisection))
}

/// The reserve-augmented dispatch problem stacked over `y = [x; −r]`.
///
/// Generators keep their quadratic costs on `y_i = x_i`; each battery `j`
/// contributes `c_j·r_j + ρ_b·r_j²`, which in `y_j = −r_j` coordinates is the
/// quadratic `ρ_b·y² − c_j·y`. The single constraint becomes `Σ y = D`.
#[derive(Debug, Clone)]
pub struct StackedProblem {
    pub costs: Vec<CostModel>,
    pub k: f64,
    pub n_generators: usize,
    pub n_batteries: usize,
    /// With `ρ_b = 0` the battery costs are affine and the stacked problem
    /// is convex but not strictly, so the oracles reject it.
    pub strictly_convex: bool,
    pub rho_b: f64,
}

impl StackedProblem {
    /// Split a stacked vector into generator allocations `x` and battery
    /// reserves `r` (`r_j = −y_{n+j}`).
    pub fn split_solution(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x = y[..self.n_generators].to_vec();
        let r = y[self.n_generators..].iter().map(|&v| -v).collect();
        (x, r)
    }
}

/// Build the `(n + n_r)`-agent stacked problem for dispatch with reserves:
/// demand `D`, battery cost coefficients `c_j`, and quadratic regularizer
/// `ρ_b` on each reserve (0 keeps the costs affine and flags the problem as
/// not strictly convex).
pub fn stack_reserve_problem(
    gen_costs: &[QuadraticCost],
    battery_coeffs: &[f64],
    demand: f64,
    rho_b: f64,
) -> Result<StackedProblem, OracleError> {
    if gen_costs.is_empty() {
        return Err(OracleError::NoCosts);
    }
    if !demand.is_finite() {
        return Err(OracleError::BadConstraint(demand));
    }
    if !rho_b.is_finite() || rho_b < 0.0 {
        return Err(OracleError::BadRegularizer(rho_b));
    }
    let mut costs: Vec<CostModel> = gen_costs
        .iter()
        .map(|q| CostModel::quadratic(*q))
        .collect();
    for (index, &c) in battery_coeffs.iter().enumerate() {
        if !c.is_finite() {
            return Err(OracleError::BadBatteryCoeff { index, value: c });
        }
        let battery = QuadraticCost::convex(rho_b, -c, 0.0)
            .map_err(|_| OracleError::BadRegularizer(rho_b))?;
        costs.push(CostModel::quadratic(battery));
    }
    let strictly_convex = battery_coeffs.is_empty() || rho_b > 0.0;
    Ok(StackedProblem {
        costs,
        k: demand,
        n_generators: gen_costs.len(),
        n_batteries: battery_coeffs.len(),
        strictly_convex,
        rho_b,
    })
}

/// Default battery regularizer: `1e-3 · min_i γ_i`.
pub fn default_battery_regularizer(gen_costs: &[QuadraticCost]) -> f64 {
    1e-3
        * gen_costs
            .iter()
            .map(|q| q.gamma())
            .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{BoxPenalty, CpuCost, PenaltySmoothing, TabulatedCost};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_two_cpu_costs() {
        // x_i* = target_i + ψ*/π_i with ψ* = (K − Σ targets)/Σ(1/π_i)
        let costs = vec![
            CostModel::cpu(CpuCost::new(1.0, 4.0).unwrap()),
            CostModel::cpu(CpuCost::new(1.0, 6.0).unwrap()),
        ];
        let sol = solve_closed_form(&costs, 12.0).unwrap();
        assert_relative_eq!(sol.psi_star, 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.x_star[0], 5.0, epsilon = 1e-12);
        assert_relative_eq!(sol.x_star[1], 7.0, epsilon = 1e-12);
        assert!(sol.residual_kkt <= 1e-8 * (1.0 + sol.psi_star.abs()));
    }

    #[test]
    fn closed_form_identical_agents_split_evenly() {
        let q = QuadraticCost::new(0.7, 1.3, 5.0).unwrap();
        let costs = vec![CostModel::quadratic(q); 7];
        let sol = solve_closed_form(&costs, 21.0).unwrap();
        for &x in &sol.x_star {
            assert_relative_eq!(x, 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_form_type_a_b_pair() {
        // Type-A (γ=0.04, β=2) and Type-B (γ=0.03, β=3) at D=100:
        // ψ* = (100 + 2/0.08 + 3/0.06) / (1/0.08 + 1/0.06)
        let costs = vec![
            CostModel::quadratic(QuadraticCost::new(0.04, 2.0, 561.0).unwrap()),
            CostModel::quadratic(QuadraticCost::new(0.03, 3.0, 310.0).unwrap()),
        ];
        let sol = solve_closed_form(&costs, 100.0).unwrap();
        let psi_expected = (100.0 + 2.0 / 0.08 + 3.0 / 0.06) / (1.0 / 0.08 + 1.0 / 0.06);
        assert_relative_eq!(sol.psi_star, psi_expected, epsilon = 1e-12);
        assert_relative_eq!(sol.x_star[0], (psi_expected - 2.0) / 0.08, epsilon = 1e-12);
        // cross-check by the numerical oracle
        let bis = solve_bisection(&costs, 100.0, &BisectionOptions::default()).unwrap();
        assert_relative_eq!(bis.psi_star, sol.psi_star, epsilon = 1e-9);
    }

    #[test]
    fn closed_form_rejects_penalties_and_degenerate_gamma() {
        let q = QuadraticCost::new(1.0, 0.0, 0.0).unwrap();
        let pen = BoxPenalty::new(0.0, 1.0, 1.0, PenaltySmoothing::SquaredHinge).unwrap();
        let costs = vec![CostModel::new(
            crate::cost::BaseCost::Quadratic(q),
            Some(pen),
        )];
        assert!(matches!(
            solve_closed_form(&costs, 1.0),
            Err(OracleError::NotClosedForm(0))
        ));

        let affine = QuadraticCost::convex(0.0, 2.0, 0.0).unwrap();
        let costs = vec![CostModel::quadratic(affine)];
        assert!(matches!(
            solve_closed_form(&costs, 1.0),
            Err(OracleError::DegenerateCurvature { index: 0 })
        ));
    }

    #[test]
    fn single_agent_takes_the_whole_constraint() {
        let costs = vec![CostModel::quadratic(
            QuadraticCost::new(0.9, -4.0, 2.0).unwrap(),
        )];
        let sol = solve_bisection(&costs, 3.5, &BisectionOptions::default()).unwrap();
        assert_relative_eq!(sol.x_star[0], 3.5, epsilon = 1e-9);
    }

    #[test]
    fn bisection_agrees_with_closed_form_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let n = rng.gen_range(2..=20);
            let costs: Vec<CostModel> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.5) {
                        CostModel::quadratic(
                            QuadraticCost::new(
                                rng.gen_range(0.01..2.0),
                                rng.gen_range(-3.0..3.0),
                                rng.gen_range(-10.0..10.0),
                            )
                            .unwrap(),
                        )
                    } else {
                        CostModel::cpu(
                            CpuCost::new(rng.gen_range(0.01..1.0), rng.gen_range(-5.0..5.0))
                                .unwrap(),
                        )
                    }
                })
                .collect();
            let k = rng.gen_range(-50.0..50.0);
            let cf = solve_closed_form(&costs, k).unwrap();
            let bi = solve_bisection(&costs, k, &BisectionOptions::default()).unwrap();
            for (a, b) in cf.x_star.iter().zip(&bi.x_star) {
                assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()), "{a} vs {b}");
            }
            assert!((cf.x_star.iter().sum::<f64>() - k).abs() <= 1e-10 * (1.0 + k.abs()));
        }
    }

    #[test]
    fn bisection_handles_penalized_costs() {
        let q = QuadraticCost::new(0.5, -6.0, 0.0).unwrap(); // unconstrained argmin at 6
        let pen = BoxPenalty::new(0.0, 1.0, 50.0, PenaltySmoothing::SquaredHinge).unwrap();
        let costs = vec![
            CostModel::new(crate::cost::BaseCost::Quadratic(q), Some(pen)),
            CostModel::quadratic(QuadraticCost::new(0.5, 0.0, 0.0).unwrap()),
        ];
        let sol = solve_bisection(&costs, 4.0, &BisectionOptions::default()).unwrap();
        assert!((sol.x_star.iter().sum::<f64>() - 4.0).abs() <= 1e-9);
        assert!(sol.residual_kkt <= 1e-7 * (1.0 + sol.psi_star.abs()));
        // the penalty pulls the first coordinate toward its box
        assert!(sol.x_star[0] < 6.0);
    }

    #[test]
    fn bisection_rejects_explicit_non_straddling_bracket() {
        let costs = vec![CostModel::quadratic(
            QuadraticCost::new(1.0, 0.0, 0.0).unwrap(),
        )];
        // x*(ψ)=ψ/2, K=10 needs ψ=20; bracket [0,1] cannot reach it
        let opts = BisectionOptions {
            bracket: Some((0.0, 1.0)),
            constraint_tol: None,
        };
        assert!(matches!(
            solve_bisection(&costs, 10.0, &opts),
            Err(OracleError::BracketFailed { .. })
        ));
    }

    #[test]
    fn bisection_rejects_piecewise_linear_costs() {
        let t = TabulatedCost::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 3.0]).unwrap();
        let costs = vec![CostModel::new(crate::cost::BaseCost::Tabulated(t), None)];
        assert!(matches!(
            solve_bisection(&costs, 1.0, &BisectionOptions::default()),
            Err(OracleError::DegenerateCurvature { index: 0 })
        ));
    }

    #[test]
    fn stacking_preserves_plain_problem_without_batteries() {
        let gens = vec![
            QuadraticCost::new(0.04, 2.0, 561.0).unwrap(),
            QuadraticCost::new(0.03, 3.0, 310.0).unwrap(),
        ];
        let stacked = stack_reserve_problem(&gens, &[], 100.0, 0.0).unwrap();
        assert_eq!(stacked.costs.len(), 2);
        assert_eq!(stacked.k, 100.0);
        assert!(stacked.strictly_convex);
    }

    #[test]
    fn stacked_reserve_solution_reaches_gradient_consensus() {
        let gens: Vec<QuadraticCost> = [
            (0.04, 2.0, 561.0),
            (0.03, 3.0, 310.0),
            (0.035, 4.0, 78.0),
            (0.03, 4.0, 561.0),
            (0.04, 2.5, 78.0),
            (0.04, 2.0, 561.0),
            (0.03, 3.0, 310.0),
            (0.035, 4.0, 78.0),
        ]
        .iter()
        .map(|&(g, b, a)| QuadraticCost::new(g, b, a).unwrap())
        .collect();
        let coeffs = [-10.8, -11.0, -11.2, -11.4];
        let rho_b = 0.02;
        let stacked = stack_reserve_problem(&gens, &coeffs, 800.0, rho_b).unwrap();
        assert_eq!(stacked.costs.len(), 12);
        assert!(stacked.strictly_convex);
        let sol = solve_closed_form(&stacked.costs, stacked.k).unwrap();
        // ∇F(y*) ∈ span{1}: every component equals ψ*
        assert!(sol.residual_kkt <= 1e-8 * (1.0 + sol.psi_star.abs()));
        let (x, r) = stacked.split_solution(&sol.x_star);
        let balance = x.iter().sum::<f64>() - r.iter().sum::<f64>();
        assert_relative_eq!(balance, 800.0, epsilon = 1e-8);
    }

    #[test]
    fn unregularized_batteries_are_flagged_and_rejected_by_oracles() {
        let gens = vec![QuadraticCost::new(0.04, 2.0, 0.0).unwrap()];
        let stacked = stack_reserve_problem(&gens, &[5.0], 100.0, 0.0).unwrap();
        assert!(!stacked.strictly_convex);
        assert!(solve_closed_form(&stacked.costs, stacked.k).is_err());
        assert!(solve_bisection(&stacked.costs, stacked.k, &BisectionOptions::default()).is_err());
    }

    #[test]
    fn default_regularizer_scales_with_smallest_gamma() {
        let gens = vec![
            QuadraticCost::new(0.04, 0.0, 0.0).unwrap(),
            QuadraticCost::new(0.03, 0.0, 0.0).unwrap(),
        ];
        assert_relative_eq!(default_battery_regularizer(&gens), 3e-5);
    }

    #[test]
    fn doubling_gammas_keeps_allocation_order_for_equal_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(3..=12);
            let gammas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..2.0)).collect();
            let k = rng.gen_range(5.0..50.0);
            let solve = |scale: f64| {
                let costs: Vec<CostModel> = gammas
                    .iter()
                    .map(|&g| {
                        CostModel::quadratic(QuadraticCost::new(scale * g, 1.0, 0.0).unwrap())
                    })
                    .collect();
                solve_closed_form(&costs, k).unwrap()
            };
            let argsort = |xs: &[f64]| {
                let mut idx: Vec<usize> = (0..xs.len()).collect();
                idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
                idx
            };
            let base = solve(1.0);
            let doubled = solve(2.0);
            assert_eq!(argsort(&base.x_star), argsort(&doubled.x_star));
        }
    }

    #[test]
    fn growing_epsilon_shrinks_distance_to_box() {
        // penalized minimizer distance to [m, M] is nonincreasing in ε
        let q = QuadraticCost::new(0.5, -8.0, 0.0).unwrap(); // argmin 8, box [0,2]
        let other = QuadraticCost::new(0.5, 0.0, 0.0).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [1.0, 10.0, 100.0] {
            let pen = BoxPenalty::new(0.0, 2.0, eps, PenaltySmoothing::SquaredHinge).unwrap();
            let costs = vec![
                CostModel::new(crate::cost::BaseCost::Quadratic(q), Some(pen)),
                CostModel::quadratic(other),
            ];
            let sol = solve_bisection(&costs, 6.0, &BisectionOptions::default()).unwrap();
            let x = sol.x_star[0];
            let dist = (x - 2.0).max(0.0 - x).max(0.0);
            assert!(dist <= prev + 1e-9, "ε={eps}: {dist} > {prev}");
            prev = dist;
        }
    }
}
