//! Benchmark environments: the five-state simulated linear MDP with its
//! perturbed targets, the American put option on a finite price lattice,
//! and random tabular MDPs with one-hot features.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::types::{FeatureMap, FiniteMdp, LinearMdpSpec};

pub const SIM_STATES: usize = 5;
pub const SIM_ACTIONS: usize = 16;
pub const SIM_HORIZON: usize = 3;
pub const SIM_DIM: usize = 4;
/// State ids of the simulated MDP: x1..x5 map to 0..4.
pub const X1: usize = 0;
pub const X2: usize = 1;
pub const X3: usize = 2;
pub const X4: usize = 3;
pub const X5: usize = 4;
/// (-1, -1, -1, -1) and (1, 1, 1, 1) in the lexicographic action order.
pub const ALL_MINUS: usize = 0;
pub const ALL_PLUS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedMdpParams {
    pub delta: f64,
    pub xi: [f64; 4],
    pub p: f64,
}

impl SimulatedMdpParams {
    /// `ξ` with equal coordinates summing to `xi_norm`.
    pub fn with_xi_norm(delta: f64, xi_norm: f64, p: f64) -> Self {
        Self { delta, xi: [xi_norm / 4.0; 4], p }
    }

    pub fn xi_norm(&self) -> f64 {
        self.xi.iter().map(|x| x.abs()).sum()
    }

    pub fn check(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta = {} outside (0, 1)", self.delta)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config(format!("p = {} outside (0, 1)", self.p)));
        }
        if self.xi.iter().any(|x| !x.is_finite()) || self.delta + self.xi_norm() >= 1.0 {
            return Err(Error::Config(format!(
                "delta + ‖xi‖₁ = {} must be below 1",
                self.delta + self.xi_norm()
            )));
        }
        Ok(())
    }
}

/// Action `a ∈ {-1, 1}⁴` for an id; the first coordinate is the most significant bit.
pub fn simulated_action(id: usize) -> [f64; 4] {
    let mut a = [-1.0; 4];
    for (j, slot) in a.iter_mut().enumerate() {
        if id >> (3 - j) & 1 == 1 {
            *slot = 1.0;
        }
    }
    a
}

pub fn simulated_action_label(id: usize) -> String {
    let a = simulated_action(id);
    format!("({},{},{},{})", a[0], a[1], a[2], a[3])
}

/// Feature map of the simulated MDP over 5 states and 16 actions.
pub fn simulated_features(delta: f64, xi: [f64; 4]) -> Result<FeatureMap> {
    FeatureMap::from_fn(SIM_DIM, SIM_STATES, SIM_ACTIONS, true, |s, a| {
        let act = simulated_action(a);
        let mut m = delta + xi.iter().zip(&act).map(|(x, y)| x * y).sum::<f64>();
        // ‖ξ‖₁ = δ leaves rounding residue around 0 for the all-minus action
        if m.abs() < 1e-12 {
            m = 0.0;
        }
        match s {
            X1 => vec![1.0 - m, 0.0, 0.0, m],
            X2 => vec![0.0, 1.0 - m, 0.0, m],
            X3 => vec![0.0, 0.0, 1.0 - m, m],
            X4 => vec![0.0, 0.0, 1.0, 0.0],
            _ => vec![0.0, 0.0, 0.0, 1.0],
        }
    })
}

fn dirac(s: usize) -> Vec<f64> {
    let mut v = vec![0.0; SIM_STATES];
    v[s] = 1.0;
    v
}

fn mixture(a: usize, b: usize, wb: f64) -> Vec<f64> {
    let mut v = vec![0.0; SIM_STATES];
    v[a] += 1.0 - wb;
    v[b] += wb;
    v
}

/// Source domain. The third step's factors never affect returns and are
/// set equal to the second step's.
pub fn build_simulated_mdp(params: &SimulatedMdpParams) -> Result<LinearMdpSpec> {
    params.check()?;
    let factors = vec![mixture(X2, X4, params.p), mixture(X3, X4, params.p), dirac(X4), dirac(X5)];
    Ok(LinearMdpSpec {
        horizon: SIM_HORIZON,
        states: (1..=SIM_STATES).map(|i| format!("x{i}")).collect(),
        actions: (0..SIM_ACTIONS).map(simulated_action_label).collect(),
        features: simulated_features(params.delta, params.xi)?,
        theta: vec![vec![0.0; 4], vec![0.0, 0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0, 1.0]],
        mu: vec![factors; SIM_HORIZON],
        initial: dirac(X1),
        fail_state: Some(X4),
        reward_normalized: true,
    })
}

/// Target domain: the first step's factors become
/// `(δ_{x2}, δ_{x3}, δ_{x4}, (1-q) δ_{x5} + q δ_{x4})`.
pub fn perturb_target(spec: &LinearMdpSpec, q: f64) -> Result<LinearMdpSpec> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("perturbation level q = {q} outside [0, 1]")));
    }
    if spec.num_states() != SIM_STATES || spec.dim() != SIM_DIM || spec.horizon != SIM_HORIZON {
        return Err(Error::InvalidInput("perturb_target expects the simulated source MDP".into()));
    }
    let mut out = spec.clone();
    out.mu[0] = vec![dirac(X2), dirac(X3), dirac(X4), mixture(X5, X4, q)];
    Ok(out)
}

/// Threshold on `q` above which the first action should switch, as the
/// closed form `(4 - 2m(3 - m)) / (4 - 2m)` with `m = δ + ‖ξ‖₁`.
pub fn critical_q(delta: f64, xi_norm: f64) -> f64 {
    let m = delta + xi_norm;
    (4.0 - 2.0 * m * (3.0 - m)) / (4.0 - 2.0 * m)
}

/// One sampled step: `(r_h(s, a), s')`.
pub fn env_step(mdp: &FiniteMdp, h: usize, s: usize, a: usize, rng: &mut CounterRng) -> (f64, usize) {
    (mdp.reward(h, s, a), rng.sample_sparse(mdp.next(h, s, a)))
}

/// One-hot features `e_{s·A + a}` of dimension `S·A`.
pub fn tabular_feature_encoding(num_states: usize, num_actions: usize) -> Result<FeatureMap> {
    let d = num_states * num_actions;
    FeatureMap::from_fn(d, num_states, num_actions, true, |s, a| {
        let mut v = vec![0.0; d];
        v[s * num_actions + a] = 1.0;
        v
    })
}

fn random_distribution(n: usize, rng: &mut CounterRng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.next_f64() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Random tabular MDP with rewards in `[0, 1]` and a uniform initial state.
pub fn random_tabular_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    rng: &mut CounterRng,
) -> Result<LinearMdpSpec> {
    if num_states == 0 || num_actions == 0 || horizon == 0 {
        return Err(Error::Config("tabular MDP needs positive sizes".into()));
    }
    let d = num_states * num_actions;
    let theta = (0..horizon).map(|_| (0..d).map(|_| rng.next_f64()).collect()).collect();
    let mu = (0..horizon)
        .map(|_| (0..d).map(|_| random_distribution(num_states, rng)).collect())
        .collect();
    Ok(LinearMdpSpec {
        horizon,
        states: (0..num_states).map(|s| format!("s{s}")).collect(),
        actions: (0..num_actions).map(|a| format!("a{a}")).collect(),
        features: tabular_feature_encoding(num_states, num_actions)?,
        theta,
        mu,
        initial: vec![1.0 / num_states as f64; num_states],
        fail_state: None,
        reward_normalized: true,
    })
}

pub const PUT_EXERCISE: usize = 0;
pub const PUT_HOLD: usize = 1;
const GRID_POINTS: usize = 41;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PutOptionParams {
    pub p_up: f64,
    pub horizon: usize,
    pub anchors: usize,
    pub strike: f64,
    pub up: f64,
    pub down: f64,
    pub initial_low: f64,
    pub initial_high: f64,
    pub first_anchor: f64,
    pub anchor_span: f64,
    /// Gives the tent features to holding and the payoff coordinate to
    /// exercising, instead of the printed assignment.
    pub swap_put_actions: bool,
    /// Multiplies the reward weights handed to the agent; the environment's
    /// rewards stay in price units.
    pub agent_reward_scale: f64,
}

impl Default for PutOptionParams {
    fn default() -> Self {
        Self {
            p_up: 0.5,
            horizon: 10,
            anchors: 20,
            strike: 100.0,
            up: 1.02,
            down: 0.98,
            initial_low: 95.0,
            initial_high: 105.0,
            first_anchor: 80.0,
            anchor_span: 60.0,
            swap_put_actions: false,
            agent_reward_scale: 1.0,
        }
    }
}

impl PutOptionParams {
    pub fn check(&self) -> Result<()> {
        if !(self.p_up > 0.0 && self.p_up < 1.0) {
            return Err(Error::Config(format!("p_up = {} outside (0, 1)", self.p_up)));
        }
        if self.horizon == 0 || self.anchors < 2 {
            return Err(Error::Config("put option needs H >= 1 and d >= 2".into()));
        }
        if !(self.up > 0.0 && self.down > 0.0 && self.initial_low <= self.initial_high && self.anchor_span > 0.0) {
            return Err(Error::Config("invalid put option price parameters".into()));
        }
        if !(self.agent_reward_scale > 0.0 && self.agent_reward_scale.is_finite()) {
            return Err(Error::Config("agent_reward_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.anchor_span / self.anchors as f64
    }

    pub fn anchor(&self, i: usize) -> f64 {
        self.first_anchor + i as f64 * self.spacing()
    }

    pub fn payoff(&self, price: f64) -> f64 {
        (self.strike - price).max(0.0)
    }

    /// `φ_i(s) = max(0, 1 - |s - s_i| / Δ)`.
    pub fn tent(&self, i: usize, price: f64) -> f64 {
        (1.0 - (price - self.anchor(i)).abs() / self.spacing()).max(0.0)
    }
}

/// The put option compiled onto its price lattice. States are
/// `(initial grid point, ups, downs)` with `ups + downs <= H`, followed by
/// the absorbing exit state.
#[derive(Debug, Clone)]
pub struct PutOption {
    pub params: PutOptionParams,
    pub mdp: FiniteMdp,
    prices: Vec<f64>,
    /// Largest payoff over the lattice, used to keep the payoff feature in [0, 1].
    pub payoff_scale: f64,
}

impl PutOption {
    pub fn exit_state(&self) -> usize {
        self.prices.len()
    }

    /// Price of a lattice state; `None` for the exit state.
    pub fn price(&self, s: usize) -> Option<f64> {
        self.prices.get(s).copied()
    }

    pub fn initial_prices(&self) -> Vec<f64> {
        self.mdp.initial.iter().map(|&(s, _)| self.prices[s]).collect()
    }
}

fn lattice_index(g: usize, u: usize, v: usize, horizon: usize) -> usize {
    let per_grid = (horizon + 1) * (horizon + 2) / 2;
    let depth = u + v;
    // states of depth < depth come first: depth (depth+1) / 2 of them
    g * per_grid + depth * (depth + 1) / 2 + u
}

pub fn build_put_option(params: &PutOptionParams) -> Result<PutOption> {
    params.check()?;
    let hz = params.horizon;
    let per_grid = (hz + 1) * (hz + 2) / 2;
    let lattice = GRID_POINTS * per_grid;
    let exit = lattice;
    let num_states = lattice + 1;
    let step = (params.initial_high - params.initial_low) / (GRID_POINTS - 1) as f64;

    let mut prices = vec![0.0; lattice];
    let mut coords = vec![(0, 0, 0); lattice];
    for g in 0..GRID_POINTS {
        let s0 = params.initial_low + g as f64 * step;
        for depth in 0..=hz {
            for u in 0..=depth {
                let v = depth - u;
                let idx = lattice_index(g, u, v, hz);
                prices[idx] = s0 * params.up.powi(u as i32) * params.down.powi(v as i32);
                coords[idx] = (g, u, v);
            }
        }
    }
    let payoff_scale = prices.iter().map(|&p| params.payoff(p)).fold(0.0, f64::max).max(1e-12);

    let d = params.anchors;
    let features = FeatureMap::from_fn(d + 1, num_states, 2, false, |s, a| {
        let mut row = vec![0.0; d + 1];
        if s == exit {
            return row;
        }
        let price = prices[s];
        let tents_on = (a == PUT_EXERCISE) != params.swap_put_actions;
        if tents_on {
            for (i, slot) in row.iter_mut().take(d).enumerate() {
                *slot = params.tent(i, price);
            }
        } else {
            row[d] = params.payoff(price) / payoff_scale;
        }
        row
    })?;

    let scale = params.agent_reward_scale;
    let theta_row: Vec<f64> = if params.swap_put_actions {
        let mut t = vec![0.0; d + 1];
        t[d] = payoff_scale * scale;
        t
    } else {
        (0..d).map(|i| params.payoff(params.anchor(i)) * scale).chain(std::iter::once(0.0)).collect()
    };

    let mut rewards = Vec::with_capacity(hz * num_states * 2);
    let mut kernel = Vec::with_capacity(hz * num_states * 2);
    for _h in 0..hz {
        for s in 0..num_states {
            for a in 0..2 {
                if s == exit {
                    rewards.push(0.0);
                    kernel.push(vec![(exit, 1.0)]);
                } else if a == PUT_EXERCISE {
                    rewards.push(params.payoff(prices[s]));
                    kernel.push(vec![(exit, 1.0)]);
                } else {
                    rewards.push(0.0);
                    let (g, u, v) = coords[s];
                    if u + v == hz {
                        kernel.push(vec![(s, 1.0)]);
                    } else {
                        kernel.push(vec![
                            (lattice_index(g, u + 1, v, hz), params.p_up),
                            (lattice_index(g, u, v + 1, hz), 1.0 - params.p_up),
                        ]);
                    }
                }
            }
        }
    }
    let initial = (0..GRID_POINTS)
        .map(|g| (lattice_index(g, 0, 0, hz), 1.0 / GRID_POINTS as f64))
        .collect();

    Ok(PutOption {
        params: *params,
        mdp: FiniteMdp {
            horizon: hz,
            num_states,
            num_actions: 2,
            features: Arc::new(features),
            theta: vec![theta_row; hz],
            rewards,
            kernel,
            initial,
            fail_state: Some(exit),
            reward_normalized: false,
        },
        prices,
        payoff_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::dot;

    fn source(xi_norm: f64) -> LinearMdpSpec {
        build_simulated_mdp(&SimulatedMdpParams::with_xi_norm(0.3, xi_norm, 0.001)).unwrap()
    }

    #[test]
    fn action_enumeration() {
        assert_eq!(simulated_action(ALL_MINUS), [-1.0; 4]);
        assert_eq!(simulated_action(ALL_PLUS), [1.0; 4]);
        assert_eq!(simulated_action(8), [1.0, -1.0, -1.0, -1.0]);
        assert_eq!(simulated_action_label(1), "(-1,-1,-1,1)");
    }

    #[test]
    fn simulated_source_is_valid_and_matches_figure() {
        let spec = source(0.1);
        assert!(spec.validate().is_ok(), "{}", spec.validate());
        let p = spec.transition(0, X1, ALL_PLUS);
        assert!((p[X5] - 0.4).abs() < 1e-12);
        for h in 1..3 {
            for a in 0..SIM_ACTIONS {
                assert_eq!(spec.reward(h, X5, a), 1.0);
            }
        }
        for h in 0..3 {
            for a in 0..SIM_ACTIONS {
                assert_eq!(spec.reward(h, X4, a), 0.0);
            }
        }
        // δ = 0.1 appears in the features; the fail-state extension keeps validity
        assert!(spec.fail_state == Some(X4));
    }

    #[test]
    fn validation_over_parameter_grid() {
        for di in 1..=5 {
            let delta = di as f64 / 10.0;
            for xi in 1..=8 {
                let xi_norm = xi as f64 * 0.05;
                if delta + xi_norm >= 1.0 {
                    continue;
                }
                let spec = build_simulated_mdp(&SimulatedMdpParams::with_xi_norm(delta, xi_norm, 0.001)).unwrap();
                let report = spec.validate();
                // nonnegative features need ‖ξ‖₁ <= δ
                if xi_norm <= delta + 1e-12 {
                    assert!(report.is_ok(), "delta {delta} xi {xi_norm}: {report}");
                } else {
                    assert!(report.mentions("negative coordinate"), "delta {delta} xi {xi_norm}");
                }
            }
        }
    }

    #[test]
    fn parameter_contracts() {
        assert!(SimulatedMdpParams::with_xi_norm(0.7, 0.3, 0.001).check().is_err());
        assert!(SimulatedMdpParams::with_xi_norm(0.3, 0.1, 0.0).check().is_err());
        assert!(perturb_target(&source(0.1), 1.5).is_err());
    }

    #[test]
    fn perturbation_endpoints_and_tv() {
        let spec = source(0.1);
        let t0 = perturb_target(&spec, 0.0).unwrap();
        assert_eq!(t0.mu[0], vec![dirac(X2), dirac(X3), dirac(X4), dirac(X5)]);
        assert_eq!(t0.mu[1], spec.mu[1]);
        let t1 = perturb_target(&spec, 1.0).unwrap();
        assert_eq!(t1.mu[0][3], dirac(X4));
        for k in 0..=10 {
            let q = k as f64 / 10.0;
            let t = perturb_target(&spec, q).unwrap();
            assert!(t.validate().is_ok());
            let tv: f64 =
                0.5 * t.mu[0][3].iter().zip(&spec.mu[0][3]).map(|(a, b)| (a - b).abs()).sum::<f64>();
            assert!((tv - q).abs() < 1e-12);
            // factors 1 and 2 move by p, factor 3 not at all
            for i in 0..3 {
                let tv: f64 = 0.5 * t.mu[0][i].iter().zip(&spec.mu[0][i]).map(|(a, b)| (a - b).abs()).sum::<f64>();
                assert!(tv <= q.max(0.001) + 1e-12);
            }
        }
        // induced kernel at x1 under the target
        let t = perturb_target(&spec, 0.5).unwrap();
        let p = t.transition(0, X1, ALL_PLUS);
        assert!((p[X2] - 0.6).abs() < 1e-12);
        assert!((p[X4] - 0.2).abs() < 1e-12);
        assert!((p[X5] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn critical_q_closed_form() {
        assert!((critical_q(0.3, 0.1) - 0.6).abs() < 1e-12);
        assert!((critical_q(0.3, 0.3) - 0.4).abs() < 1e-12);
        for di in 1..10 {
            for xi in 0..10 {
                let (delta, xi_norm) = (di as f64 / 10.0, xi as f64 / 20.0);
                if delta + xi_norm < 1.0 {
                    let q = critical_q(delta, xi_norm);
                    assert!(q > 0.0 && q < 1.0);
                    // the expression reduces to 1 - m
                    assert!((q - (1.0 - delta - xi_norm)).abs() < 1e-12);
                }
            }
        }
    }

    fn binomial_check(hits: usize, n: usize, p: f64, sigmas: f64) {
        let sd = (p * (1.0 - p) * n as f64).sqrt();
        let dev = (hits as f64 - p * n as f64).abs();
        assert!(dev <= sigmas * sd + 1e-9, "hits {hits} of {n}, p {p}");
    }

    #[test]
    fn sampling_matches_kernels() {
        let mdp = source(0.1).to_finite();
        let mut rng = CounterRng::from_stream_id(2024);
        let n = 100_000;
        for s in 0..SIM_STATES {
            for a in 0..SIM_ACTIONS {
                let mut counts = [0usize; SIM_STATES];
                for _ in 0..n {
                    counts[env_step(&mdp, 0, s, a, &mut rng).1] += 1;
                }
                let mut exact = [0.0; SIM_STATES];
                for &(t, p) in mdp.next(0, s, a) {
                    exact[t] += p;
                }
                for t in 0..SIM_STATES {
                    binomial_check(counts[t], n, exact[t], 4.0);
                }
            }
        }
        // x3 reaches x5 with probability δ + <ξ, a>
        let mut hits = 0;
        for _ in 0..n {
            if env_step(&mdp, 1, X3, ALL_PLUS, &mut rng).1 == X5 {
                hits += 1;
            }
        }
        binomial_check(hits, n, 0.4, 3.0);
    }

    #[test]
    fn fail_state_step() {
        let mdp = source(0.1).to_finite();
        let mut rng = CounterRng::from_stream_id(1);
        for a in 0..SIM_ACTIONS {
            assert_eq!(env_step(&mdp, 1, X4, a, &mut rng), (0.0, X4));
        }
    }

    #[test]
    fn tabular_encoding() {
        let fm = tabular_feature_encoding(3, 2).unwrap();
        assert_eq!(fm.dim(), 6);
        for s in 0..3 {
            for a in 0..2 {
                let phi = fm.get(s, a);
                assert_eq!(phi[s * 2 + a], 1.0);
                assert_eq!(phi.iter().sum::<f64>(), 1.0);
                for (t, b) in [(0, 0), (1, 1), (2, 0)] {
                    if (t, b) != (s, a) {
                        assert_eq!(dot(phi, fm.get(t, b)), 0.0);
                    }
                }
            }
        }
        let mut rng = CounterRng::from_stream_id(3);
        let spec = random_tabular_mdp(4, 3, 3, &mut rng).unwrap();
        assert!(spec.validate().is_ok(), "{}", spec.validate());
    }

    #[test]
    fn put_option_lattice() {
        let put = build_put_option(&PutOptionParams::default()).unwrap();
        let mdp = &put.mdp;
        assert_eq!(mdp.num_states, 41 * 66 + 1);
        assert_eq!(mdp.dim(), 21);
        assert!(mdp.features.violations().is_empty());
        let exit = put.exit_state();
        let prices: Vec<f64> = (0..exit).map(|s| put.price(s).unwrap()).collect();
        let lo = prices.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = prices.iter().copied().fold(0.0, f64::max);
        assert!((lo - 95.0 * 0.98f64.powi(10)).abs() < 1e-9, "{lo}");
        // states visited within the horizon have depth at most H - 1
        let playable = (0..exit)
            .filter(|&s| mdp.next(0, s, PUT_HOLD).len() == 2)
            .map(|s| put.price(s).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(playable > 79.0 && playable < 80.0, "{playable}");
        assert!((hi - 105.0 * 1.02f64.powi(10)).abs() < 1e-9);
        assert_eq!(put.price(exit), None);
        let init = put.initial_prices();
        assert_eq!(init.len(), 41);
        assert_eq!(init[0], 95.0);
        assert_eq!(init[40], 105.0);
        for h in 0..10 {
            for s in 0..mdp.num_states {
                let total: f64 = mdp.next(h, s, PUT_HOLD).iter().map(|p| p.1).sum();
                assert!((total - 1.0).abs() < 1e-12);
                assert_eq!(mdp.next(h, s, PUT_EXERCISE), &[(exit, 1.0)]);
            }
        }
        assert_eq!(mdp.reward(0, exit, PUT_EXERCISE), 0.0);
        assert_eq!(mdp.next(3, exit, PUT_HOLD), &[(exit, 1.0)]);
    }

    #[test]
    fn put_option_rewards_and_features() {
        let params = PutOptionParams { horizon: 3, ..Default::default() };
        let put = build_put_option(&params).unwrap();
        let find = |price: f64| (0..put.exit_state()).find(|&s| (put.price(s).unwrap() - price).abs() < 1e-9);
        // 95 * 0.98 and 105 * 1.02 are on the lattice
        let low = find(95.0 * 0.98).unwrap();
        assert!((put.mdp.reward(0, low, PUT_EXERCISE) - (100.0 - 93.1)).abs() < 1e-9);
        let high = find(105.0 * 1.02).unwrap();
        assert_eq!(put.mdp.reward(0, high, PUT_EXERCISE), 0.0);
        assert_eq!(put.mdp.reward(0, low, PUT_HOLD), 0.0);
        // tent peak: 95 is not an anchor (Δ = 3, anchors 80, 83, ...) but 98 is
        let s98 = find(98.0).unwrap();
        let phi = put.mdp.features.get(s98, PUT_EXERCISE);
        assert_eq!(phi[6], 1.0);
        assert_eq!(phi.iter().filter(|&&x| x != 0.0).count(), 1);
        let hold = put.mdp.features.get(s98, PUT_HOLD);
        assert!((hold[20] - 2.0 / put.payoff_scale).abs() < 1e-12);
        // printed assignment: the agent's exercise reward interpolates the payoff
        let r_agent = dot(phi, &put.mdp.theta[0]);
        assert!((r_agent - 2.0).abs() < 1e-12);
        // swapped assignment reproduces the payoff exactly
        let swapped = build_put_option(&PutOptionParams { swap_put_actions: true, ..params }).unwrap();
        let phi = swapped.mdp.features.get(low, PUT_EXERCISE);
        assert!((dot(phi, &swapped.mdp.theta[0]) - 6.9).abs() < 1e-9);
        assert_eq!(swapped.mdp.features.get(s98, PUT_HOLD)[6], 1.0);
    }

    #[test]
    fn put_option_targets_share_the_lattice() {
        let a = build_put_option(&PutOptionParams { p_up: 0.15, ..Default::default() }).unwrap();
        let b = build_put_option(&PutOptionParams { p_up: 0.85, ..Default::default() }).unwrap();
        assert_eq!(a.mdp.num_states, b.mdp.num_states);
        for s in 0..a.exit_state() {
            assert_eq!(a.price(s), b.price(s));
        }
        assert!(build_put_option(&PutOptionParams { p_up: 1.0, ..Default::default() }).is_err());
    }
}
