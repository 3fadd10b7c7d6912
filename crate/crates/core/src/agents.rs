//! DR-LSVI-UCB and the non-robust LSVI-UCB baseline.
//!
//! Both agents keep one [`GramState`] per step and the next states of every
//! observed transition. Planning runs backward over the steps; the robust
//! agent solves one TV dual per feature coordinate on top of the ridge
//! coefficients and adds the per-coordinate bonus
//! `β Σ_i φ_i √((Λ⁻¹)_ii)`, the baseline regresses untruncated next-state
//! values and adds `β √(φᵀΛ⁻¹φ)`. Rewards are known through `θ_h`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ridge::GramState;
use crate::tv::sweep_sorted;
use crate::types::{dot, FeatureMap, FiniteMdp, Transition, UncertaintyLevels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Robust,
    Nominal,
}

impl AgentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentKind::Robust => "robust",
            AgentKind::Nominal => "nominal",
        }
    }
}

/// Bonus multiplier: a constant, or `c · d · H · √ι` with `ι = log(3dKH/p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaRecipe {
    Constant(f64),
    Theoretical { c: f64, p: f64 },
}

impl Default for BetaRecipe {
    fn default() -> Self {
        BetaRecipe::Theoretical { c: 1.0, p: 0.05 }
    }
}

impl BetaRecipe {
    pub fn resolve(&self, dim: usize, horizon: usize, episodes: usize) -> Result<f64> {
        let beta = match *self {
            BetaRecipe::Constant(b) => b,
            BetaRecipe::Theoretical { c, p } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Config(format!("confidence level p = {p} outside (0, 1)")));
                }
                let iota = (3.0 * (dim * episodes * horizon) as f64 / p).ln();
                c * (dim * horizon) as f64 * iota.sqrt()
            }
        };
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("bonus multiplier {beta} must be finite and nonnegative")));
        }
        Ok(beta)
    }

    pub fn confidence(&self) -> Option<f64> {
        match *self {
            BetaRecipe::Theoretical { p, .. } => Some(p),
            BetaRecipe::Constant(_) => None,
        }
    }
}

/// Q-value ceiling. The robust agent always clips at the number of steps
/// remaining; the baseline may instead clip at the full horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipRule {
    #[default]
    StepsRemaining,
    Horizon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub beta: f64,
    pub lambda: f64,
    /// Ignored by the nominal agent.
    pub rho: UncertaintyLevels,
    pub baseline_clip: ClipRule,
}

impl AgentConfig {
    pub fn robust(beta: f64, rho: UncertaintyLevels) -> Self {
        Self { kind: AgentKind::Robust, beta, lambda: 1.0, rho, baseline_clip: ClipRule::StepsRemaining }
    }

    pub fn nominal(beta: f64, horizon: usize, dim: usize) -> Self {
        Self {
            kind: AgentKind::Nominal,
            beta,
            lambda: 1.0,
            rho: UncertaintyLevels::zeros(horizon, dim),
            baseline_clip: ClipRule::StepsRemaining,
        }
    }
}

#[derive(Debug, Clone)]
enum Bonus {
    Diagonal(Vec<f64>),
    Quadratic(DMatrix<f64>),
}

/// Everything needed to evaluate `Q_h^k(s, a)` for one episode.
#[derive(Debug, Clone)]
pub struct QParams {
    horizon: usize,
    num_actions: usize,
    beta: f64,
    ceiling_rule: ClipRule,
    features: Arc<FeatureMap>,
    fail_state: Option<usize>,
    /// `ν_h` per step.
    nu: Vec<Vec<f64>>,
    /// `θ_h + ν_h` per step.
    weights: Vec<Vec<f64>>,
    bonus: Vec<Bonus>,
}

impl QParams {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn nu(&self, h: usize) -> &[f64] {
        &self.nu[h]
    }

    pub fn weights(&self, h: usize) -> &[f64] {
        &self.weights[h]
    }

    fn ceiling(&self, h: usize) -> f64 {
        match self.ceiling_rule {
            ClipRule::StepsRemaining => (self.horizon - h) as f64,
            ClipRule::Horizon => self.horizon as f64,
        }
    }

    pub fn bonus(&self, h: usize, s: usize, a: usize) -> f64 {
        let phi = self.features.get(s, a);
        let raw = match &self.bonus[h] {
            Bonus::Diagonal(diag) => dot(phi, diag),
            Bonus::Quadratic(inv) => {
                let mut acc = 0.0;
                for (i, &pi) in phi.iter().enumerate() {
                    if pi == 0.0 {
                        continue;
                    }
                    for (j, &pj) in phi.iter().enumerate() {
                        acc += pi * inv[(i, j)] * pj;
                    }
                }
                acc.max(0.0).sqrt()
            }
        };
        self.beta * raw
    }

    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        if self.fail_state == Some(s) {
            return 0.0;
        }
        let phi = self.features.get(s, a);
        let raw = dot(phi, &self.weights[h]) + self.bonus(h, s, a);
        raw.min(self.ceiling(h)).max(0.0)
    }

    pub fn value(&self, h: usize, s: usize) -> f64 {
        (0..self.num_actions).map(|a| self.q(h, s, a)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action; ties go to the lowest action id.
    pub fn act(&self, h: usize, s: usize) -> usize {
        let mut best = 0;
        let mut best_q = self.q(h, s, 0);
        for a in 1..self.num_actions {
            let q = self.q(h, s, a);
            if q > best_q {
                best = a;
                best_q = q;
            }
        }
        best
    }

    /// Per-step action table over every state.
    pub fn greedy_policy(&self) -> Vec<Vec<usize>> {
        (0..self.horizon)
            .map(|h| (0..self.features.num_states()).map(|s| self.act(h, s)).collect())
            .collect()
    }

    /// `Q_h(s, a)` over the whole state-action grid, `[h][s][a]`.
    pub fn q_table(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.horizon)
            .map(|h| {
                (0..self.features.num_states())
                    .map(|s| (0..self.num_actions).map(|a| self.q(h, s, a)).collect())
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    horizon: usize,
    num_actions: usize,
    features: Arc<FeatureMap>,
    theta: Vec<Vec<f64>>,
    fail_state: Option<usize>,
    grams: Vec<GramState>,
    next_states: Vec<Vec<usize>>,
}

impl Agent {
    pub fn new(config: AgentConfig, mdp: &FiniteMdp) -> Result<Self> {
        let d = mdp.dim();
        if !(config.beta >= 0.0 && config.beta.is_finite()) {
            return Err(Error::Config(format!("bonus multiplier {} must be nonnegative", config.beta)));
        }
        if config.kind == AgentKind::Robust
            && (config.rho.horizon() != mdp.horizon || config.rho.dim() != d)
        {
            return Err(Error::Config(format!(
                "uncertainty levels are {}x{}, environment needs {}x{}",
                config.rho.horizon(),
                config.rho.dim(),
                mdp.horizon,
                d
            )));
        }
        let grams = (0..mdp.horizon)
            .map(|_| GramState::new(d, config.lambda))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            horizon: mdp.horizon,
            num_actions: mdp.num_actions,
            features: mdp.features.clone(),
            theta: mdp.theta.clone(),
            fail_state: mdp.fail_state,
            grams,
            next_states: vec![Vec::new(); mdp.horizon],
        })
    }

    pub fn kind(&self) -> AgentKind {
        self.config.kind
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn gram(&self, h: usize) -> &GramState {
        &self.grams[h]
    }

    pub fn grams(&self) -> &[GramState] {
        &self.grams
    }

    pub fn history_len(&self, h: usize) -> usize {
        self.next_states[h].len()
    }

    pub fn observe(&mut self, t: &Transition) -> Result<()> {
        if t.step >= self.horizon {
            return Err(Error::InvalidInput(format!("step {} beyond horizon {}", t.step, self.horizon)));
        }
        if t.next_state >= self.features.num_states() {
            return Err(Error::InvalidInput(format!("next state {} out of range", t.next_state)));
        }
        self.grams[t.step].insert(&t.features)?;
        self.next_states[t.step].push(t.next_state);
        Ok(())
    }

    /// Backward induction over the data observed so far.
    pub fn plan(&self) -> Result<QParams> {
        let (hz, d) = (self.horizon, self.features.dim());
        let cap = hz as f64;
        let ceiling_rule = match self.config.kind {
            AgentKind::Robust => ClipRule::StepsRemaining,
            AgentKind::Nominal => self.config.baseline_clip,
        };
        let mut params = QParams {
            horizon: hz,
            num_actions: self.num_actions,
            beta: self.config.beta,
            ceiling_rule,
            features: self.features.clone(),
            fail_state: self.fail_state,
            nu: vec![vec![0.0; d]; hz],
            weights: self.theta.clone(),
            bonus: vec![Bonus::Diagonal(vec![0.0; d]); hz],
        };
        let mut value_cache = vec![f64::NAN; self.features.num_states()];

        for h in (0..hz).rev() {
            let gram = &self.grams[h];
            let nu = if h + 1 == hz || gram.is_empty() {
                vec![0.0; d]
            } else {
                value_cache.iter_mut().for_each(|v| *v = f64::NAN);
                let targets: Vec<f64> = self.next_states[h]
                    .iter()
                    .map(|&s| {
                        if value_cache[s].is_nan() {
                            value_cache[s] = params.value(h + 1, s).clamp(0.0, cap);
                        }
                        value_cache[s]
                    })
                    .collect();
                match self.config.kind {
                    AgentKind::Robust => self.robust_weights(gram, &targets, h, cap),
                    AgentKind::Nominal => gram.solve_truncated(&targets, cap)?,
                }
            };
            params.weights[h] = self.theta[h].iter().zip(&nu).map(|(t, n)| t + n).collect();
            params.nu[h] = nu;
            params.bonus[h] = match self.config.kind {
                AgentKind::Robust => Bonus::Diagonal(gram.bonus_diagonal()),
                AgentKind::Nominal => Bonus::Quadratic(gram.inverse().clone()),
            };
        }
        Ok(params)
    }

    /// `ν_{h,i} = max_α z_{h,i}(α) - ρ_{h,i} α` for every coordinate, with
    /// the samples sorted once and shared across coordinates.
    fn robust_weights(&self, gram: &GramState, targets: &[f64], h: usize, cap: f64) -> Vec<f64> {
        let coefs = gram.coefficients();
        let mut order: Vec<usize> = (0..targets.len()).collect();
        order.sort_by(|&a, &b| targets[a].total_cmp(&targets[b]));
        let values: Vec<f64> = order.iter().map(|&t| targets[t]).collect();
        let mut row = vec![0.0; order.len()];
        (0..gram.dim())
            .map(|i| {
                for (slot, &t) in row.iter_mut().zip(&order) {
                    *slot = coefs[(i, t)];
                }
                sweep_sorted(&values, &row, self.config.rho.get(h, i), cap).value
            })
            .collect()
    }
}
