//! Exact robust and nominal dynamic programming, run logs and the metrics
//! computed from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ridge::GramState;
use crate::rng::CounterRng;
use crate::tv::tv_worst_case_expectation;
use crate::types::{dot, FiniteMdp, LinearMdpSpec, Transition, UncertaintyLevels};

/// `V[h][s]`, `Q[h][s][a]` and the greedy policy of a finite MDP, robust
/// when `rho` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustValueTable {
    pub v: Vec<Vec<f64>>,
    pub q: Vec<Vec<Vec<f64>>>,
    pub policy: Vec<Vec<usize>>,
    pub rho: Option<UncertaintyLevels>,
}

impl RobustValueTable {
    /// `E_{s ~ initial}[V_1(s)]`.
    pub fn initial_value(&self, initial: &[(usize, f64)]) -> f64 {
        initial.iter().map(|&(s, p)| p * self.v[0][s]).sum()
    }
}

fn argmax_low(row: &[f64]) -> usize {
    let mut best = 0;
    for a in 1..row.len() {
        if row[a] > row[best] {
            best = a;
        }
    }
    best
}

fn spec_cap(spec: &LinearMdpSpec) -> f64 {
    let mut rmax: f64 = 1.0;
    for h in 0..spec.horizon {
        for s in 0..spec.num_states() {
            for a in 0..spec.num_actions() {
                rmax = rmax.max(spec.reward(h, s, a));
            }
        }
    }
    spec.horizon as f64 * rmax
}

fn check_levels(spec: &LinearMdpSpec, rho: &UncertaintyLevels) -> Result<()> {
    if rho.horizon() != spec.horizon || rho.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.horizon * spec.dim(), got: rho.horizon() * rho.dim() });
    }
    let finite = spec.theta.iter().flatten().chain(spec.mu.iter().flatten().flatten()).all(|x| x.is_finite());
    if !finite {
        return Err(Error::Numerical("spec contains non-finite entries".into()));
    }
    Ok(())
}

/// Worst-case expected next value per factor, `inf_{TV(μ, μ_{h,i}) <= ρ_{h,i}} E_μ[V]`.
fn factor_worst_cases(spec: &LinearMdpSpec, rho: &UncertaintyLevels, h: usize, next: &[f64], cap: f64) -> Result<Vec<f64>> {
    (0..spec.dim())
        .map(|i| tv_worst_case_expectation(next, &spec.mu[h][i], rho.get(h, i), cap))
        .collect()
}

/// Robust Bellman optimality recursion with the per-factor adversary.
pub fn robust_value_iteration(spec: &LinearMdpSpec, rho: &UncertaintyLevels) -> Result<RobustValueTable> {
    check_levels(spec, rho)?;
    let (hz, ns, na) = (spec.horizon, spec.num_states(), spec.num_actions());
    let cap = spec_cap(spec);
    let mut v = vec![vec![0.0; ns]; hz + 1];
    let mut q = vec![vec![vec![0.0; na]; ns]; hz];
    let mut policy = vec![vec![0; ns]; hz];
    for h in (0..hz).rev() {
        let worst = factor_worst_cases(spec, rho, h, &v[h + 1], cap)?;
        for s in 0..ns {
            for a in 0..na {
                q[h][s][a] = spec.reward(h, s, a) + dot(spec.features.get(s, a), &worst);
            }
            policy[h][s] = argmax_low(&q[h][s]);
            v[h][s] = q[h][s][policy[h][s]];
        }
    }
    v.truncate(hz);
    Ok(RobustValueTable { v, q, policy, rho: Some(rho.clone()) })
}

/// `V^{π,ρ}[h][s]` for a deterministic policy.
pub fn robust_policy_evaluation(
    spec: &LinearMdpSpec,
    policy: &[Vec<usize>],
    rho: &UncertaintyLevels,
) -> Result<Vec<Vec<f64>>> {
    check_levels(spec, rho)?;
    check_policy(policy, spec.horizon, spec.num_states(), spec.num_actions())?;
    let (hz, ns) = (spec.horizon, spec.num_states());
    let cap = spec_cap(spec);
    let mut v = vec![vec![0.0; ns]; hz + 1];
    for h in (0..hz).rev() {
        let worst = factor_worst_cases(spec, rho, h, &v[h + 1], cap)?;
        for s in 0..ns {
            let a = policy[h][s];
            v[h][s] = spec.reward(h, s, a) + dot(spec.features.get(s, a), &worst);
        }
    }
    v.truncate(hz);
    Ok(v)
}

fn check_policy(policy: &[Vec<usize>], hz: usize, ns: usize, na: usize) -> Result<()> {
    if policy.len() != hz || policy.iter().any(|row| row.len() != ns) {
        return Err(Error::Coverage(format!("policy must cover {hz} steps x {ns} states")));
    }
    if policy.iter().flatten().any(|&a| a >= na) {
        return Err(Error::Coverage(format!("policy uses an action id >= {na}")));
    }
    Ok(())
}

/// Standard finite-horizon value iteration on explicit kernels.
pub fn value_iteration(mdp: &FiniteMdp) -> RobustValueTable {
    let (hz, ns, na) = (mdp.horizon, mdp.num_states, mdp.num_actions);
    let mut v = vec![vec![0.0; ns]; hz + 1];
    let mut q = vec![vec![vec![0.0; na]; ns]; hz];
    let mut policy = vec![vec![0; ns]; hz];
    for h in (0..hz).rev() {
        for s in 0..ns {
            for a in 0..na {
                let cont: f64 = mdp.next(h, s, a).iter().map(|&(t, p)| p * v[h + 1][t]).sum();
                q[h][s][a] = mdp.reward(h, s, a) + cont;
            }
            policy[h][s] = argmax_low(&q[h][s]);
            v[h][s] = q[h][s][policy[h][s]];
        }
    }
    v.truncate(hz);
    RobustValueTable { v, q, policy, rho: None }
}

/// Exact `V^π[h][s]` on explicit kernels.
pub fn evaluate_policy(mdp: &FiniteMdp, policy: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    check_policy(policy, mdp.horizon, mdp.num_states, mdp.num_actions)?;
    let (hz, ns) = (mdp.horizon, mdp.num_states);
    let mut v = vec![vec![0.0; ns]; hz + 1];
    for h in (0..hz).rev() {
        for s in 0..ns {
            let a = policy[h][s];
            let cont: f64 = mdp.next(h, s, a).iter().map(|&(t, p)| p * v[h + 1][t]).sum();
            v[h][s] = mdp.reward(h, s, a) + cont;
        }
    }
    v.truncate(hz);
    Ok(v)
}

/// One episode of interaction. The initial state comes from `stream(0)`
/// and the transition after step `h` from `stream(h + 1)`.
pub fn rollout<A, R>(mdp: &FiniteMdp, mut act: A, mut stream: R) -> Vec<Transition>
where
    A: FnMut(usize, usize) -> usize,
    R: FnMut(usize) -> CounterRng,
{
    let mut s = stream(0).sample_sparse(&mdp.initial);
    let mut out = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        let a = act(h, s);
        let next = stream(h + 1).sample_sparse(mdp.next(h, s, a));
        out.push(Transition {
            step: h,
            state: s,
            action: a,
            features: mdp.features.get(s, a).to_vec(),
            reward: mdp.reward(h, s, a),
            next_state: next,
        });
        s = next;
    }
    out
}

/// Sample mean and sample standard deviation of the episodic return over
/// `episodes` rollouts; `stream(e, step)` supplies the generator for
/// episode `e`.
pub fn monte_carlo_return<R>(mdp: &FiniteMdp, policy: &[Vec<usize>], episodes: usize, stream: R) -> Result<(f64, f64)>
where
    R: Fn(u64, u64) -> CounterRng,
{
    check_policy(policy, mdp.horizon, mdp.num_states, mdp.num_actions)?;
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let returns: Vec<f64> = (0..episodes as u64)
        .map(|e| {
            rollout(mdp, |h, s| policy[h][s], |step| stream(e, step as u64)).iter().map(|t| t.reward).sum()
        })
        .collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = if returns.len() > 1 {
        (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((mean, std))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub initial_state: usize,
    pub trajectory: Vec<StepRecord>,
    pub realized_return: f64,
    /// `Σ_h Σ_i φ_{h,i} √((Λ_h⁻¹)_ii)` with the pre-episode Gram matrices.
    pub bonus_sum: f64,
    /// `V_1^{π_k,ρ}(s_1^k)` when a robust oracle is available.
    pub robust_value: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub episodes: Vec<EpisodeRecord>,
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// The tracked d-rectangular estimation error accumulated so far.
    pub fn estimation_error(&self) -> f64 {
        self.episodes.iter().map(|e| e.bonus_sum).sum()
    }
}

/// One episode's contribution to the estimation error, evaluated on the
/// Gram states in force before the episode's data is inserted.
pub fn estimation_error_increment(grams: &[GramState], episode: &[Transition]) -> f64 {
    episode
        .iter()
        .map(|t| {
            let inv = grams[t.step].inverse();
            t.features.iter().enumerate().map(|(i, &p)| p * inv[(i, i)].max(0.0).sqrt()).sum::<f64>()
        })
        .sum()
}

/// `(1/K) Σ_k [V_1^{⋆,ρ}(s_1^k) - V_1^{π_k,ρ}(s_1^k)]`.
pub fn average_suboptimality(log: &RunLog, oracle: &RobustValueTable) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::MissingOracle("run log has no episodes".into()));
    }
    let mut total = 0.0;
    for e in &log.episodes {
        let value = e
            .robust_value
            .ok_or_else(|| Error::MissingOracle(format!("episode {} has no robust value", e.episode)))?;
        total += oracle.v[0][e.initial_state] - value;
    }
    Ok(total / log.len() as f64)
}

/// `√(2H³ log(3/p) / K) + (2β / K) · error`.
pub fn regret_bound_rhs(episodes: usize, horizon: usize, p: f64, beta: f64, error: f64) -> f64 {
    let k = episodes as f64;
    let h = horizon as f64;
    (2.0 * h.powi(3) * (3.0 / p).ln() / k).sqrt() + 2.0 * beta / k * error
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{
        build_simulated_mdp, perturb_target, random_tabular_mdp, SimulatedMdpParams, ALL_PLUS, X1,
    };
    use crate::tv::brute_force_tv_infimum;
    use crate::types::FeatureMap;

    fn toy() -> LinearMdpSpec {
        // One action, two states, state 1 pays 1 at every step.
        let features = FeatureMap::from_fn(2, 2, 1, true, |s, _| if s == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
            .unwrap();
        LinearMdpSpec {
            horizon: 2,
            states: vec!["a".into(), "b".into()],
            actions: vec!["go".into()],
            features,
            theta: vec![vec![0.0, 1.0]; 2],
            mu: vec![vec![vec![0.5, 0.5], vec![0.0, 1.0]]; 2],
            initial: vec![1.0, 0.0],
            fail_state: None,
            reward_normalized: true,
        }
    }

    #[test]
    fn toy_matches_hand_dp() {
        let spec = toy();
        let rho = UncertaintyLevels::homogeneous(2, 2, 0.25).unwrap();
        let t = robust_value_iteration(&spec, &rho).unwrap();
        // Step 2: V = (0, 1). Step 1: factor a = (0.5, 0.5) shifts 0.25 to a,
        // worst 0.25; factor b = (0, 1) shifts 0.25 to a, worst 0.75.
        assert_eq!(t.v[1], vec![0.0, 1.0]);
        assert!((t.v[0][0] - 0.25).abs() < 1e-12);
        assert!((t.v[0][1] - 1.75).abs() < 1e-12);
    }

    #[test]
    fn zero_radius_is_nominal() {
        let spec = build_simulated_mdp(&SimulatedMdpParams::with_xi_norm(0.3, 0.1, 0.001)).unwrap();
        let robust = robust_value_iteration(&spec, &UncertaintyLevels::zeros(3, 4)).unwrap();
        let nominal = value_iteration(&spec.to_finite());
        for h in 0..3 {
            for s in 0..5 {
                assert!((robust.v[h][s] - nominal.v[h][s]).abs() < 1e-12);
            }
        }
        assert_eq!(robust.policy, nominal.policy);
        assert_eq!(nominal.policy[0][X1], ALL_PLUS);
    }

    #[test]
    fn simulated_source_hand_dp() {
        let (delta, xi, p) = (0.3, 0.1, 0.001);
        let spec = build_simulated_mdp(&SimulatedMdpParams::with_xi_norm(delta, xi, p)).unwrap();
        let t = value_iteration(&spec.to_finite());
        let m = delta + xi;
        // x5 collects 1 at steps 2 and 3
        let v2_x5 = 2.0;
        let v3_x3 = m;
        let v2_x2 = m + (1.0 - m) * (1.0 - p) * v3_x3 + m * 1.0;
        let v1_x1 = (1.0 - m) * (1.0 - p) * v2_x2 + m * v2_x5;
        assert!((t.v[0][X1] - v1_x1).abs() < 1e-12);
    }

    #[test]
    fn greedy_policy_attains_optimum() {
        let mut rng = CounterRng::from_stream_id(8);
        let spec = random_tabular_mdp(3, 2, 3, &mut rng).unwrap();
        let rho = UncertaintyLevels::homogeneous(3, 6, 0.3).unwrap();
        let t = robust_value_iteration(&spec, &rho).unwrap();
        let v = robust_policy_evaluation(&spec, &t.policy, &rho).unwrap();
        for h in 0..3 {
            for s in 0..3 {
                assert!((v[h][s] - t.v[h][s]).abs() < 1e-10);
            }
        }
        // every other policy is pointwise worse
        for code in 0..(1usize << 9) {
            let policy: Vec<Vec<usize>> =
                (0..3).map(|h| (0..3).map(|s| code >> (h * 3 + s) & 1).collect()).collect();
            let v = robust_policy_evaluation(&spec, &policy, &rho).unwrap();
            for h in 0..3 {
                for s in 0..3 {
                    assert!(v[h][s] <= t.v[h][s] + 1e-10);
                }
            }
        }
    }

    #[test]
    fn matches_primal_recursion_and_is_monotone() {
        let mut rng = CounterRng::from_stream_id(17);
        for _ in 0..20 {
            let spec = random_tabular_mdp(3, 2, 2, &mut rng).unwrap();
            let r = (rng.next_f64() * 10.0).round() / 10.0;
            let rho = UncertaintyLevels::homogeneous(2, 6, r).unwrap();
            let t = robust_value_iteration(&spec, &rho).unwrap();
            let mut v = vec![0.0; 3];
            for h in (0..2).rev() {
                let worst: Vec<f64> =
                    (0..6).map(|i| brute_force_tv_infimum(&v, &spec.mu[h][i], r, 2.0).unwrap()).collect();
                let next: Vec<f64> = (0..3)
                    .map(|s| {
                        (0..2)
                            .map(|a| spec.reward(h, s, a) + dot(spec.features.get(s, a), &worst))
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect();
                v = next;
                for s in 0..3 {
                    assert!((v[s] - t.v[h][s]).abs() < 1e-10);
                }
            }
            let bigger = UncertaintyLevels::homogeneous(2, 6, (r + 0.2).min(1.0)).unwrap();
            let tb = robust_value_iteration(&spec, &bigger).unwrap();
            for s in 0..3 {
                assert!(tb.v[0][s] <= t.v[0][s] + 1e-12);
            }
        }
    }

    #[test]
    fn policy_evaluation_contracts() {
        let spec = toy();
        let rho = UncertaintyLevels::zeros(2, 2);
        assert!(robust_policy_evaluation(&spec, &[vec![0, 0]], &rho).is_err());
        assert!(robust_policy_evaluation(&spec, &[vec![0, 1], vec![0, 0]], &rho).is_err());
        assert!(robust_value_iteration(&spec, &UncertaintyLevels::zeros(3, 2)).is_err());
    }

    #[test]
    fn metrics() {
        assert!((regret_bound_rhs(100, 3, 0.05, 0.0, 0.0) - (54.0 * 60f64.ln() / 100.0).sqrt()).abs() < 1e-12);
        assert!((regret_bound_rhs(100, 3, 0.05, 0.0, 0.0) - 1.487).abs() < 1e-3);
        assert!(regret_bound_rhs(100, 3, 0.05, 1.0, 5.0) > regret_bound_rhs(100, 3, 0.05, 1.0, 4.0));

        let oracle = RobustValueTable { v: vec![vec![2.0]], q: vec![vec![vec![2.0]]], policy: vec![vec![0]], rho: None };
        let mut log = RunLog::default();
        log.episodes.push(EpisodeRecord {
            episode: 1,
            initial_state: 0,
            trajectory: vec![],
            realized_return: 1.0,
            bonus_sum: 3.0,
            robust_value: Some(1.5),
        });
        assert!((average_suboptimality(&log, &oracle).unwrap() - 0.5).abs() < 1e-15);
        log.episodes[0].robust_value = None;
        assert!(average_suboptimality(&log, &oracle).is_err());
        assert_eq!(log.estimation_error(), 3.0);
    }

    #[test]
    fn first_episode_error_is_horizon() {
        let spec = build_simulated_mdp(&SimulatedMdpParams::with_xi_norm(0.3, 0.1, 0.001)).unwrap();
        let mdp = spec.to_finite();
        let grams: Vec<GramState> = (0..3).map(|_| GramState::new(4, 1.0).unwrap()).collect();
        let ep = rollout(&mdp, |_, _| ALL_PLUS, |step| CounterRng::from_stream_id(step as u64));
        assert!((estimation_error_increment(&grams, &ep) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn tabular_error_is_visit_count_sum() {
        let mut rng = CounterRng::from_stream_id(4);
        let spec = random_tabular_mdp(2, 2, 2, &mut rng).unwrap();
        let mdp = spec.to_finite();
        let mut grams: Vec<GramState> = (0..2).map(|_| GramState::new(4, 1.0).unwrap()).collect();
        let mut counts = vec![vec![0usize; 4]; 2];
        let mut total = 0.0;
        for k in 0..30u64 {
            let ep = rollout(&mdp, |h, s| (s + h + k as usize) % 2, |step| CounterRng::from_stream_id(k * 10 + step as u64));
            let expected: f64 =
                ep.iter().map(|t| 1.0 / ((counts[t.step][t.state * 2 + t.action] + 1) as f64).sqrt()).sum();
            let inc = estimation_error_increment(&grams, &ep);
            assert!((inc - expected).abs() < 1e-10);
            assert!(inc >= 0.0);
            total += inc;
            for t in &ep {
                grams[t.step].insert(&t.features).unwrap();
                counts[t.step][t.state * 2 + t.action] += 1;
            }
        }
        assert!(total > 0.0);
    }

    #[test]
    fn monte_carlo_agrees_with_exact_evaluation() {
        let spec = build_simulated_mdp(&SimulatedMdpParams::with_xi_norm(0.3, 0.1, 0.001)).unwrap();
        let target = perturb_target(&spec, 1.0).unwrap().to_finite();
        let policy = vec![vec![ALL_PLUS; 5]; 3];
        let exact = evaluate_policy(&target, &policy).unwrap()[0][X1];
        let n = 20_000;
        let stream = |e: u64, step: u64| CounterRng::from_stream_id(e.wrapping_mul(31).wrapping_add(step) ^ 0xABCD);
        let (mean, std) = monte_carlo_return(&target, &policy, n, stream).unwrap();
        assert!((mean - exact).abs() <= 3.0 * std / (n as f64).sqrt() + 1e-12, "{mean} vs {exact}");
        assert_eq!(monte_carlo_return(&target, &policy, n, stream).unwrap(), (mean, std));
    }

    #[test]
    fn deterministic_env_has_zero_spread() {
        let spec = toy();
        let mut det = spec.clone();
        det.mu = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2];
        let mdp = det.to_finite();
        let (mean, std) = monte_carlo_return(&mdp, &[vec![0, 0], vec![0, 0]], 50, |e, s| {
            CounterRng::from_stream_id(e * 7 + s)
        })
        .unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(std, 0.0);
    }
}
