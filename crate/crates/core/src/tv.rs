//! Worst-case expectations over total-variation balls.
//!
//! Three dual forms share one exact breakpoint sweep:
//!
//! - [`tv_worst_case_expectation`]: the general dual
//!   `max_α E[min(V, α)] - ρ (α - min_s min(V(s), α))`.
//! - [`tv_dual_fail_state`]: the simplified dual `max_α E[min(V, α)] - ρ α`,
//!   valid when some state has value 0.
//! - [`ridge_dual_sweep`]: `max_α Σ_τ c_τ min(v_τ, α) - ρ α` with signed
//!   coefficients, the form the agent sees after ridge regression.
//!
//! All three objectives are piecewise linear in `α` with breakpoints at
//! `{0, H} ∪ {v_τ}`, so the maximum is found by one sorted pass with prefix
//! sums. [`brute_force_tv_infimum`] solves the primal by greedy mass
//! transport and is kept independent of the sweep.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Values further than this outside `[0, H]` are rejected; closer ones are clamped.
pub const VALUE_SLACK: f64 = 1e-9;

/// Coefficient/value pairs `(c_τ, v_τ)` with values in `[0, cap]`, kept
/// sorted by value.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedValueList {
    pairs: Vec<(f64, f64)>,
    cap: f64,
}

impl WeightedValueList {
    pub fn new(pairs: Vec<(f64, f64)>, cap: f64) -> Result<Self> {
        if !(cap >= 0.0 && cap.is_finite()) {
            return Err(Error::InvalidInput(format!("cap {cap} must be finite and nonnegative")));
        }
        let mut pairs = pairs
            .into_iter()
            .map(|(c, v)| {
                if !c.is_finite() {
                    return Err(Error::InvalidInput(format!("coefficient {c} not finite")));
                }
                Ok((c, clamp_value(v, cap)?))
            })
            .collect::<Result<Vec<_>>>()?;
        pairs.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(Self { pairs, cap })
    }

    pub fn empty(cap: f64) -> Self {
        Self { pairs: Vec::new(), cap }
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `Σ_τ c_τ min(v_τ, α)`.
    pub fn evaluate(&self, alpha: f64) -> f64 {
        self.pairs.iter().map(|&(c, v)| c * v.min(alpha)).sum()
    }
}

/// Maximised dual objective and the truncation level attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSolution {
    pub value: f64,
    pub alpha: f64,
}

pub(crate) fn clamp_value(v: f64, cap: f64) -> Result<f64> {
    if !v.is_finite() || v < -VALUE_SLACK || v > cap + VALUE_SLACK {
        return Err(Error::ValueOutOfRange { value: v, cap });
    }
    Ok(v.clamp(0.0, cap))
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("uncertainty level {rho} outside [0, 1]")));
    }
    Ok(())
}

fn check_distribution(probs: &[f64], len: usize) -> Result<()> {
    if probs.len() != len {
        return Err(Error::DimensionMismatch { expected: len, got: probs.len() });
    }
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("empty support".into()));
    }
    if probs.iter().any(|&p| !p.is_finite() || p < -1e-12) {
        return Err(Error::InvalidDistribution("negative or non-finite mass".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("mass sums to {sum}")));
    }
    Ok(())
}

/// Exact maximiser of `α ↦ Σ c_τ min(v_τ, α) - ρ α` over `[0, cap]`, for
/// inputs already sorted by ascending value. Exact ties resolve to the
/// larger `α`.
pub(crate) fn sweep_sorted(values: &[f64], coefs: &[f64], rho: f64, cap: f64) -> DualSolution {
    debug_assert_eq!(values.len(), coefs.len());
    let n = values.len();
    // suffix[j] = Σ_{τ >= j} c_τ
    let mut suffix = vec![0.0; n + 1];
    for j in (0..n).rev() {
        suffix[j] = suffix[j + 1] + coefs[j];
    }

    // α = 0: every min(v, 0) is 0.
    let mut best = DualSolution { value: 0.0, alpha: 0.0 };
    let mut below = 0.0; // Σ_{v_τ <= α} c_τ v_τ
    let mut j = 0;
    while j < n {
        let alpha = values[j];
        while j < n && values[j] == alpha {
            below += coefs[j] * values[j];
            j += 1;
        }
        let value = below + alpha * suffix[j] - rho * alpha;
        if value >= best.value {
            best = DualSolution { value, alpha };
        }
    }
    let at_cap = below - rho * cap;
    if at_cap >= best.value {
        best = DualSolution { value: at_cap, alpha: cap };
    }
    best
}

/// `max_{α ∈ [0, H]} Σ_τ c_τ min(v_τ, α) - ρ α`, solved exactly.
pub fn ridge_dual_sweep(list: &WeightedValueList, rho: f64) -> DualSolution {
    let values: Vec<f64> = list.pairs.iter().map(|p| p.1).collect();
    let coefs: Vec<f64> = list.pairs.iter().map(|p| p.0).collect();
    sweep_sorted(&values, &coefs, rho, list.cap)
}

fn distribution_list(values: &[f64], probs: &[f64], rho: f64, cap: f64) -> Result<WeightedValueList> {
    check_rho(rho)?;
    check_distribution(probs, values.len())?;
    WeightedValueList::new(probs.iter().copied().zip(values.iter().copied()).collect(), cap)
}

/// `inf { E_μ[V] : TV(μ, probs) <= ρ }` via strong duality. The inner
/// minimum ranges over every supplied state, including zero-mass ones.
pub fn tv_worst_case_expectation(values: &[f64], probs: &[f64], rho: f64, cap: f64) -> Result<f64> {
    let list = distribution_list(values, probs, rho, cap)?;
    let vmin = list.pairs.first().map(|p| p.1).unwrap_or(0.0);
    // For α >= V_min the general objective equals the fail-state objective
    // shifted by ρ V_min; below V_min the latter is nondecreasing.
    Ok(ridge_dual_sweep(&list, rho).value + rho * vmin)
}

/// Dual of the worst-case expectation when `min_s V(s) = 0`.
pub fn tv_dual_fail_state(values: &[f64], probs: &[f64], rho: f64, cap: f64) -> Result<DualSolution> {
    let list = distribution_list(values, probs, rho, cap)?;
    let vmin = list.pairs.first().map(|p| p.1).unwrap_or(0.0);
    if vmin > VALUE_SLACK {
        return Err(Error::InvalidInput(format!(
            "fail-state dual needs a zero-value state; minimum is {vmin}"
        )));
    }
    Ok(ridge_dual_sweep(&list, rho))
}

/// Primal TV-ball minimiser by greedy transport: move up to `ρ` mass from
/// the highest-valued states onto the lowest-valued one.
pub fn brute_force_tv_infimum(values: &[f64], probs: &[f64], rho: f64, cap: f64) -> Result<f64> {
    check_rho(rho)?;
    check_distribution(probs, values.len())?;
    let values = values.iter().map(|&v| clamp_value(v, cap)).collect::<Result<Vec<_>>>()?;
    let argmin = (0..values.len())
        .min_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or(Ordering::Equal))
        .unwrap_or(0);
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| i != argmin).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));

    let mut mass = probs.to_vec();
    let mut remaining = rho;
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let moved = mass[i].max(0.0).min(remaining);
        mass[i] -= moved;
        mass[argmin] += moved;
        remaining -= moved;
    }
    Ok(mass.iter().zip(&values).map(|(p, v)| p * v).sum())
}
