//! Domain types for d-rectangular linear MDPs.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for quantities built from exact arithmetic (feature sums, factor masses).
pub const EXACT_TOL: f64 = 1e-12;
/// Tolerance for composed quantities (induced kernels, accumulated values).
pub const COMPOSED_TOL: f64 = 1e-10;

/// Dense feature table `φ(s, a) ∈ R^d` over a finite state-action grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dim: usize,
    num_states: usize,
    num_actions: usize,
    table: Vec<f64>,
    simplex_normalized: bool,
}

impl FeatureMap {
    pub fn new(
        dim: usize,
        num_states: usize,
        num_actions: usize,
        table: Vec<f64>,
        simplex_normalized: bool,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be positive".into()));
        }
        let expected = dim * num_states * num_actions;
        if table.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: table.len() });
        }
        Ok(Self { dim, num_states, num_actions, table, simplex_normalized })
    }

    pub fn from_fn<F>(
        dim: usize,
        num_states: usize,
        num_actions: usize,
        simplex_normalized: bool,
        mut f: F,
    ) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Vec<f64>,
    {
        let mut table = Vec::with_capacity(dim * num_states * num_actions);
        for s in 0..num_states {
            for a in 0..num_actions {
                let row = f(s, a);
                if row.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
                }
                table.extend(row);
            }
        }
        Self::new(dim, num_states, num_actions, table, simplex_normalized)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn is_simplex_normalized(&self) -> bool {
        self.simplex_normalized
    }

    pub fn get(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.dim;
        &self.table[start..start + self.dim]
    }

    /// Invariant violations of the map under its declared flags.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let phi = self.get(s, a);
                if phi.iter().any(|x| !x.is_finite()) {
                    out.push(format!("feature not finite at (s={s}, a={a})"));
                    continue;
                }
                if self.simplex_normalized {
                    if phi.iter().any(|&x| x < 0.0) {
                        out.push(format!("feature has negative coordinate at (s={s}, a={a})"));
                    }
                    let sum: f64 = phi.iter().sum();
                    if (sum - 1.0).abs() >= EXACT_TOL {
                        out.push(format!("feature does not sum to 1 at (s={s}, a={a}): {sum}"));
                    }
                } else {
                    let norm = l2(phi);
                    if norm > 1.0 + 1e-9 {
                        out.push(format!("feature norm exceeds 1 at (s={s}, a={a}): {norm}"));
                    }
                }
            }
        }
        out
    }

    fn rows(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| self.get(s, a).to_vec()).collect())
            .collect()
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-step, per-factor TV radii `ρ_{h,i} ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyLevels {
    levels: Vec<Vec<f64>>,
}

impl UncertaintyLevels {
    pub fn new(levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidInput("uncertainty levels need at least one step".into()));
        }
        let d = levels[0].len();
        for (h, row) in levels.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            for (i, &r) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::InvalidInput(format!(
                        "uncertainty level rho[{h}][{i}] = {r} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { levels })
    }

    pub fn homogeneous(horizon: usize, dim: usize, rho: f64) -> Result<Self> {
        Self::new(vec![vec![rho; dim]; horizon])
    }

    pub fn zeros(horizon: usize, dim: usize) -> Self {
        Self { levels: vec![vec![0.0; dim]; horizon] }
    }

    /// All zero except the listed `(step, factor, rho)` entries (0-based indices).
    pub fn sparse(horizon: usize, dim: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut levels = vec![vec![0.0; dim]; horizon];
        for &(h, i, r) in entries {
            if h >= horizon || i >= dim {
                return Err(Error::InvalidInput(format!(
                    "uncertainty entry ({h}, {i}) outside {horizon}x{dim}"
                )));
            }
            levels[h][i] = r;
        }
        Self::new(levels)
    }

    pub fn get(&self, h: usize, i: usize) -> f64 {
        self.levels[h][i]
    }

    pub fn horizon(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.levels[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.levels
    }

    /// Copy with one entry replaced.
    pub fn with(&self, h: usize, i: usize, rho: f64) -> Result<Self> {
        let mut levels = self.levels.clone();
        levels[h][i] = rho;
        Self::new(levels)
    }
}

/// One observed step `(h, s, a, φ(s, a), r, s')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub step: usize,
    pub state: usize,
    pub action: usize,
    pub features: Vec<f64>,
    pub reward: f64,
    pub next_state: usize,
}

/// Result of [`LinearMdpSpec::validate`]; violations are data, not errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        write!(f, "{}", self.violations.join("; "))
    }
}

/// A finite-support linear MDP: `r_h(s,a) = <φ(s,a), θ_h>` and
/// `P_h(·|s,a) = Σ_i φ_i(s,a) μ_{h,i}(·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMdpSpec {
    pub horizon: usize,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub features: FeatureMap,
    /// `theta[h]` is a d-vector.
    pub theta: Vec<Vec<f64>>,
    /// `mu[h][i]` is a distribution over states.
    pub mu: Vec<Vec<Vec<f64>>>,
    pub initial: Vec<f64>,
    pub fail_state: Option<usize>,
    pub reward_normalized: bool,
}

impl LinearMdpSpec {
    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        dot(self.features.get(s, a), &self.theta[h])
    }

    /// Dense induced kernel `P_h(·|s,a)`.
    pub fn transition(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        let phi = self.features.get(s, a);
        let mut out = vec![0.0; self.num_states()];
        for (i, &w) in phi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(&self.mu[h][i]) {
                *o += w * m;
            }
        }
        out
    }

    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let (hz, d, ns, na) = (self.horizon, self.dim(), self.num_states(), self.num_actions());
        if hz == 0 {
            v.push("horizon must be positive".to_string());
        }
        if self.features.num_states() != ns || self.features.num_actions() != na {
            v.push(format!(
                "feature grid {}x{} does not match {ns} states x {na} actions",
                self.features.num_states(),
                self.features.num_actions()
            ));
            return ValidationReport { violations: v };
        }
        v.extend(self.features.violations());

        if self.theta.len() != hz {
            v.push(format!("theta has {} steps, expected {hz}", self.theta.len()));
        }
        for (h, th) in self.theta.iter().enumerate() {
            if th.len() != d {
                v.push(format!("theta[{h}] has dimension {}, expected {d}", th.len()));
                continue;
            }
            let norm = l2(th);
            if norm > (d as f64).sqrt() + EXACT_TOL {
                v.push(format!("‖θ‖ exceeds √d at step {h}: {norm}"));
            }
        }

        let mut mu_shape_ok = self.mu.len() == hz;
        if !mu_shape_ok {
            v.push(format!("mu has {} steps, expected {hz}", self.mu.len()));
        }
        for (h, step) in self.mu.iter().enumerate() {
            if step.len() != d {
                v.push(format!("mu[{h}] has {} factors, expected {d}", step.len()));
                mu_shape_ok = false;
                continue;
            }
            for (i, dist) in step.iter().enumerate() {
                if dist.len() != ns {
                    v.push(format!("mu[{h}][{i}] has support {}, expected {ns}", dist.len()));
                    mu_shape_ok = false;
                    continue;
                }
                if dist.iter().any(|&m| m < 0.0 || !m.is_finite()) {
                    v.push(format!("factor distribution has negative mass at h={h}, i={i}"));
                }
                let sum: f64 = dist.iter().sum();
                if (sum - 1.0).abs() >= EXACT_TOL {
                    v.push(format!("factor distribution not normalized at h={h}, i={i}: sum {sum}"));
                }
            }
        }

        if self.initial.len() != ns {
            v.push(format!("initial distribution has length {}, expected {ns}", self.initial.len()));
        } else {
            let sum: f64 = self.initial.iter().sum();
            if self.initial.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() >= EXACT_TOL {
                v.push("initial distribution not normalized".to_string());
            }
        }

        let fail_ok = self.fail_state.is_none_or(|sf| sf < ns);
        if !fail_ok {
            v.push(format!("fail state {:?} out of range", self.fail_state));
        }

        let theta_ok = self.theta.len() == hz && self.theta.iter().all(|t| t.len() == d);
        if !(mu_shape_ok && theta_ok && fail_ok) {
            return ValidationReport { violations: v };
        }

        for h in 0..hz {
            for s in 0..ns {
                for a in 0..na {
                    if self.features.is_simplex_normalized() {
                        let p = self.transition(h, s, a);
                        let sum: f64 = p.iter().sum();
                        if (sum - 1.0).abs() >= COMPOSED_TOL || p.iter().any(|&x| x < -EXACT_TOL) {
                            v.push(format!(
                                "induced transition not a distribution at (h={h}, s={s}, a={a})"
                            ));
                        }
                    }
                    let r = self.reward(h, s, a);
                    if self.reward_normalized && !(-EXACT_TOL..=1.0 + EXACT_TOL).contains(&r) {
                        v.push(format!("reward outside [0, 1] at (h={h}, s={s}, a={a}): {r}"));
                    }
                    if self.fail_state == Some(s) {
                        if r.abs() > EXACT_TOL {
                            v.push(format!("fail state has nonzero reward at (h={h}, a={a})"));
                        }
                        let stay = self.transition(h, s, a)[s];
                        if (stay - 1.0).abs() >= COMPOSED_TOL {
                            v.push(format!("fail state not absorbing at (h={h}, a={a})"));
                        }
                    }
                }
            }
        }
        ValidationReport { violations: v }
    }

    /// Adds an absorbing zero-reward state `s_f` (appended as the last state)
    /// and a leading feature coordinate that is 1 exactly at `s_f`.
    pub fn extend_with_fail_state(&self) -> Result<LinearMdpSpec> {
        if self.fail_state.is_some() {
            return Err(Error::InvalidInput("spec already has a fail state".into()));
        }
        let (d, ns, na) = (self.dim(), self.num_states(), self.num_actions());
        let sf = ns;
        let features = FeatureMap::from_fn(d + 1, ns + 1, na, self.features.is_simplex_normalized(), |s, a| {
            let mut row = vec![0.0; d + 1];
            if s == sf {
                row[0] = 1.0;
            } else {
                row[1..].copy_from_slice(self.features.get(s, a));
            }
            row
        })?;
        let theta = self
            .theta
            .iter()
            .map(|t| std::iter::once(0.0).chain(t.iter().copied()).collect())
            .collect();
        let mu = self
            .mu
            .iter()
            .map(|step| {
                let mut point = vec![0.0; ns + 1];
                point[sf] = 1.0;
                std::iter::once(point)
                    .chain(step.iter().map(|dist| dist.iter().copied().chain(std::iter::once(0.0)).collect()))
                    .collect()
            })
            .collect();
        let mut states = self.states.clone();
        states.push("s_f".to_string());
        let mut initial = self.initial.clone();
        initial.push(0.0);
        Ok(LinearMdpSpec {
            horizon: self.horizon,
            states,
            actions: self.actions.clone(),
            features,
            theta,
            mu,
            initial,
            fail_state: Some(sf),
            reward_normalized: self.reward_normalized,
        })
    }

    /// Compiles the factored spec into explicit per-(h, s, a) kernels.
    pub fn to_finite(&self) -> FiniteMdp {
        let (hz, ns, na) = (self.horizon, self.num_states(), self.num_actions());
        let mut rewards = Vec::with_capacity(hz * ns * na);
        let mut kernel = Vec::with_capacity(hz * ns * na);
        for h in 0..hz {
            for s in 0..ns {
                for a in 0..na {
                    rewards.push(self.reward(h, s, a));
                    let row = self.transition(h, s, a);
                    kernel.push(
                        row.into_iter()
                            .enumerate()
                            .filter(|&(_, p)| p > 0.0)
                            .collect::<Vec<_>>(),
                    );
                }
            }
        }
        FiniteMdp {
            horizon: hz,
            num_states: ns,
            num_actions: na,
            features: Arc::new(self.features.clone()),
            theta: self.theta.clone(),
            rewards,
            kernel,
            initial: self.initial.iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect(),
            fail_state: self.fail_state,
            reward_normalized: self.reward_normalized,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = SpecDocument {
            d: self.dim(),
            horizon: self.horizon,
            states: self.states.clone(),
            actions: self.actions.clone(),
            theta: self.theta.clone(),
            mu: self.mu.clone(),
            features: FeaturesDocument::Table(self.features.rows()),
            builtin_params: None,
            fail_state: self.fail_state,
            initial_distribution: self.initial.clone(),
            flags: Flags {
                simplex_normalized: self.features.is_simplex_normalized(),
                reward_normalized: self.reward_normalized,
            },
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpecDocument = serde_json::from_str(text)?;
        let ns = doc.states.len();
        let na = doc.actions.len();
        let features = match doc.features {
            FeaturesDocument::Table(rows) => {
                if rows.len() != ns || rows.iter().any(|r| r.len() != na) {
                    return Err(Error::InvalidInput("feature table shape does not match states x actions".into()));
                }
                FeatureMap::from_fn(doc.d, ns, na, doc.flags.simplex_normalized, |s, a| rows[s][a].clone())?
            }
            FeaturesDocument::Builtin(name) if name == "appendix_a" => {
                let params = doc.builtin_params.ok_or_else(|| {
                    Error::InvalidInput("builtin \"appendix_a\" requires builtin_params {delta, xi}".into())
                })?;
                let fm = crate::envs::simulated_features(params.delta, params.xi)?;
                if fm.num_states() != ns || fm.num_actions() != na || fm.dim() != doc.d {
                    return Err(Error::InvalidInput("appendix_a builtin needs 5 states, 16 actions, d = 4".into()));
                }
                fm
            }
            FeaturesDocument::Builtin(name) => {
                return Err(Error::InvalidInput(format!("unknown builtin feature map {name:?}")));
            }
        };
        Ok(LinearMdpSpec {
            horizon: doc.horizon,
            states: doc.states,
            actions: doc.actions,
            features,
            theta: doc.theta,
            mu: doc.mu,
            initial: doc.initial_distribution,
            fail_state: doc.fail_state,
            reward_normalized: doc.flags.reward_normalized,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SpecDocument {
    d: usize,
    #[serde(rename = "H")]
    horizon: usize,
    states: Vec<String>,
    actions: Vec<String>,
    theta: Vec<Vec<f64>>,
    mu: Vec<Vec<Vec<f64>>>,
    features: FeaturesDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    builtin_params: Option<BuiltinParams>,
    fail_state: Option<usize>,
    initial_distribution: Vec<f64>,
    flags: Flags,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FeaturesDocument {
    Table(Vec<Vec<Vec<f64>>>),
    Builtin(String),
}

#[derive(Serialize, Deserialize)]
struct BuiltinParams {
    delta: f64,
    xi: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct Flags {
    simplex_normalized: bool,
    reward_normalized: bool,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// An episodic MDP with explicit sparse kernels, plus the feature map and
/// reward weights handed to the agents. Every environment compiles to this.
#[derive(Debug, Clone)]
pub struct FiniteMdp {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub features: Arc<FeatureMap>,
    /// Reward weights known to the agent; `<φ, θ_h>` may only approximate
    /// the true reward table when the features are not exact.
    pub theta: Vec<Vec<f64>>,
    /// True rewards, indexed `(h * S + s) * A + a`.
    pub rewards: Vec<f64>,
    /// Sparse next-state distributions, same indexing as `rewards`.
    pub kernel: Vec<Vec<(usize, f64)>>,
    pub initial: Vec<(usize, f64)>,
    pub fail_state: Option<usize>,
    pub reward_normalized: bool,
}

impl FiniteMdp {
    fn index(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[self.index(h, s, a)]
    }

    pub fn next(&self, h: usize, s: usize, a: usize) -> &[(usize, f64)] {
        &self.kernel[self.index(h, s, a)]
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// Whether the regret-bound tracker may certify runs on this MDP.
    pub fn certifiable(&self) -> bool {
        self.features.is_simplex_normalized() && self.reward_normalized
    }

    /// Largest attainable episodic return, used as the value cap in oracles.
    pub fn value_cap(&self) -> f64 {
        let rmax = self.rewards.iter().copied().fold(0.0_f64, f64::max);
        (self.horizon as f64) * rmax.max(1.0)
    }
}
