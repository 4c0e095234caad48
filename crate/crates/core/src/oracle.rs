//! Centralized ground-truth solver for the penalized dispatch problem.
//!
//! At the optimum all marginal costs agree on a common value λ*, so the
//! solver is a nested bisection: the inner solve inverts each generator's
//! strictly increasing gradient at a trial λ, and the outer solve drives the
//! resulting total allocation onto the demanded mismatch. The objective is
//! the penalty-augmented one — the same function the distributed protocols
//! descend — so the two sides are directly comparable even when a box
//! penalty is active at the optimum.

use crate::cost::{GeneratorParams, PenaltyConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("bisection failed to bracket the target")]
    BracketFailure,
    #[error("bisection did not reach tolerance {tol} in {max_iter} iterations")]
    NoConvergence { tol: f64, max_iter: u32 },
    #[error("the problem needs at least one generator")]
    Empty,
    #[error("generator {0} is invalid: {1}")]
    BadGenerator(usize, crate::cost::ParamError),
}

/// Centralized optimum: allocation, common marginal cost, and optimal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Optimal power per generator [MW].
    pub x_star: Vec<f64>,
    /// Common marginal cost at the optimum [$/MWh].
    pub lambda_star: f64,
    /// Total cost at the optimum [$/h].
    pub cost_star: f64,
    /// Outer bisection iterations used.
    pub iterations: u32,
}

const MAX_BISECTION_ITERS: u32 = 200;

/// Unique `x` with `gradient(x) = lambda`, by bisection over a bracket
/// widened until it straddles the target.
pub fn invert_gradient(
    p: &GeneratorParams,
    pen: &PenaltyConfig,
    lambda: f64,
    tol: f64,
) -> Result<f64, SolveError> {
    let mut lo = p.m_lo - 1.0;
    let mut hi = p.m_hi + 1.0;
    let mut span = hi - lo;
    for _ in 0..MAX_BISECTION_ITERS {
        if p.gradient(pen, lo) <= lambda {
            break;
        }
        lo -= span;
        span *= 2.0;
    }
    let mut span = hi - lo;
    for _ in 0..MAX_BISECTION_ITERS {
        if p.gradient(pen, hi) >= lambda {
            break;
        }
        hi += span;
        span *= 2.0;
    }
    if p.gradient(pen, lo) > lambda || p.gradient(pen, hi) < lambda {
        return Err(SolveError::BracketFailure);
    }
    for _ in 0..MAX_BISECTION_ITERS {
        if hi - lo <= tol {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        if p.gradient(pen, mid) < lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if hi - lo <= tol {
        Ok(0.5 * (lo + hi))
    } else {
        Err(SolveError::NoConvergence {
            tol,
            max_iter: MAX_BISECTION_ITERS,
        })
    }
}

/// Solve the penalized dispatch problem by bisecting the common marginal
/// cost λ over the strictly increasing map `λ ↦ Σ_i invert_gradient(λ)`.
///
/// Bisection tolerances are 1e−10 on both λ [$/MWh] and x [MW], leaving
/// headroom under the 1e−9 guarantees on the returned solution.
pub fn solve_centralized(
    params: &[GeneratorParams],
    pen: &PenaltyConfig,
    p_mis: f64,
    tol: f64,
) -> Result<OracleSolution, SolveError> {
    if params.is_empty() {
        return Err(SolveError::Empty);
    }
    for (i, p) in params.iter().enumerate() {
        p.validate().map_err(|e| SolveError::BadGenerator(i, e))?;
    }
    let x_tol = tol.min(1e-10);
    let total_at = |lambda: f64| -> Result<f64, SolveError> {
        let mut sum = 0.0;
        for p in params {
            sum += invert_gradient(p, pen, lambda, x_tol)?;
        }
        Ok(sum)
    };

    let reach = p_mis.abs().max(1.0);
    let mut lo = params
        .iter()
        .map(|p| p.gradient(pen, p.m_lo - reach))
        .fold(f64::INFINITY, f64::min);
    let mut hi = params
        .iter()
        .map(|p| p.gradient(pen, p.m_hi + reach))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut span = (hi - lo).max(1.0);
    for _ in 0..MAX_BISECTION_ITERS {
        if total_at(lo)? <= p_mis {
            break;
        }
        lo -= span;
        span *= 2.0;
    }
    let mut span = (hi - lo).max(1.0);
    for _ in 0..MAX_BISECTION_ITERS {
        if total_at(hi)? >= p_mis {
            break;
        }
        hi += span;
        span *= 2.0;
    }
    if total_at(lo)? > p_mis || total_at(hi)? < p_mis {
        return Err(SolveError::BracketFailure);
    }

    let lambda_tol = tol.min(1e-10);
    let mut iterations = 0;
    while hi - lo > lambda_tol && iterations < MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if total_at(mid)? < p_mis {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let lambda_star = 0.5 * (lo + hi);
    let x_star: Vec<f64> = params
        .iter()
        .map(|p| invert_gradient(p, pen, lambda_star, x_tol))
        .collect::<Result<_, _>>()?;
    let cost_star = params
        .iter()
        .zip(&x_star)
        .map(|(p, &x)| p.total_cost(pen, x))
        .sum();
    Ok(OracleSolution {
        x_star,
        lambda_star,
        cost_star,
        iterations,
    })
}

/// Current total cost minus the optimal cost [$/h]; nonnegative on the
/// feasible set by strict convexity.
pub fn residual_cost(
    params: &[GeneratorParams],
    pen: &PenaltyConfig,
    x: &[f64],
    sol: &OracleSolution,
) -> f64 {
    let cost: f64 = params
        .iter()
        .zip(x)
        .map(|(p, &xi)| p.total_cost(pen, xi))
        .sum();
    cost - sol.cost_star
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::TypeTag;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pen() -> PenaltyConfig {
        PenaltyConfig::default()
    }

    #[test]
    fn invert_gradient_values() {
        let a = GeneratorParams::stock(TypeTag::A);
        // 0.08x + 2 = 6 inside the box
        let x = invert_gradient(&a, &pen(), 6.0, 1e-10).unwrap();
        assert!((x - 50.0).abs() <= 1e-9);
        // penalty region: gradient(82) = 12.56
        let x = invert_gradient(&a, &pen(), 12.56, 1e-10).unwrap();
        assert!((x - 82.0).abs() <= 1e-9);
    }

    #[test]
    fn invert_gradient_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for tag in TypeTag::STOCK {
            let p = GeneratorParams::stock(tag);
            for _ in 0..20 {
                let x0 = rng.gen_range(-10.0..110.0);
                let lambda = p.gradient(&pen(), x0);
                let x = invert_gradient(&p, &pen(), lambda, 1e-12).unwrap();
                assert!((x - x0).abs() <= 1e-9, "{tag:?}: {x} vs {x0}");
            }
        }
    }

    #[test]
    fn solve_single_generator() {
        let sol = solve_centralized(&[GeneratorParams::stock(TypeTag::A)], &pen(), 700.0, 1e-10)
            .unwrap();
        assert!((sol.x_star[0] - 700.0).abs() <= 1e-7);
        assert!((sol.x_star.iter().sum::<f64>() - 700.0).abs() <= 1e-9 * 700.0);
    }

    #[test]
    fn solve_two_identical_is_symmetric() {
        let params = vec![
            GeneratorParams::stock(TypeTag::A),
            GeneratorParams::stock(TypeTag::A),
        ];
        let sol = solve_centralized(&params, &pen(), 100.0, 1e-10).unwrap();
        assert_eq!(sol.x_star[0], sol.x_star[1]);
        assert!((sol.x_star[0] - 50.0).abs() <= 1e-8);
    }

    #[test]
    fn solve_two_types_kkt_by_hand() {
        // 0.08·50 + 2 = 0.06·50 + 3 = 6 with x_A + x_B = 100
        let params = vec![
            GeneratorParams::stock(TypeTag::A),
            GeneratorParams::stock(TypeTag::B),
        ];
        let sol = solve_centralized(&params, &pen(), 100.0, 1e-10).unwrap();
        assert!((sol.x_star[0] - 50.0).abs() <= 1e-7);
        assert!((sol.x_star[1] - 50.0).abs() <= 1e-7);
        assert!((sol.lambda_star - 6.0).abs() <= 1e-8);
    }

    #[test]
    fn solution_invariants_hold() {
        let params: Vec<_> = [TypeTag::A, TypeTag::C, TypeTag::D, TypeTag::E, TypeTag::B]
            .into_iter()
            .map(GeneratorParams::stock)
            .collect();
        for p_mis in [150.0, 350.0, 700.0] {
            let sol = solve_centralized(&params, &pen(), p_mis, 1e-10).unwrap();
            let total: f64 = sol.x_star.iter().sum();
            assert!(
                (total - p_mis).abs() <= 1e-9 * p_mis.abs(),
                "p_mis {p_mis}: total {total}"
            );
            for (p, &x) in params.iter().zip(&sol.x_star) {
                assert!((p.gradient(&pen(), x) - sol.lambda_star).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn identical_generators_split_evenly() {
        for n in [2usize, 5, 9] {
            let params = vec![GeneratorParams::stock(TypeTag::C); n];
            for p_mis in [-120.0, 63.7, 900.0] {
                let sol = solve_centralized(&params, &pen(), p_mis, 1e-10).unwrap();
                for &x in &sol.x_star {
                    assert_eq!(x, sol.x_star[0]);
                    assert!((x - p_mis / n as f64).abs() <= 1e-7);
                }
            }
        }
    }

    #[test]
    fn outer_map_is_strictly_increasing() {
        let params: Vec<_> = TypeTag::STOCK.map(GeneratorParams::stock).into();
        let total = |lambda: f64| -> f64 {
            params
                .iter()
                .map(|p| invert_gradient(p, &pen(), lambda, 1e-12).unwrap())
                .sum()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let l1 = rng.gen_range(-5.0..25.0);
            let dl = rng.gen_range(0.01..5.0);
            assert!(total(l1) < total(l1 + dl));
        }
    }

    #[test]
    fn residual_cost_behaviour() {
        let params = vec![
            GeneratorParams::stock(TypeTag::A),
            GeneratorParams::stock(TypeTag::B),
        ];
        let sol = solve_centralized(&params, &pen(), 100.0, 1e-10).unwrap();
        assert!(residual_cost(&params, &pen(), &sol.x_star, &sol).abs() <= 1e-9);
        // zero-sum perturbation keeps feasibility and raises the cost
        let x = vec![sol.x_star[0] + 5.0, sol.x_star[1] - 5.0];
        assert!(residual_cost(&params, &pen(), &x, &sol) > 0.0);
    }

    #[test]
    fn empty_problem_is_rejected() {
        assert_eq!(
            solve_centralized(&[], &pen(), 100.0, 1e-10),
            Err(SolveError::Empty)
        );
    }
}
