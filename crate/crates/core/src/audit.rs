//! Net-cost accounting and the ε-incentive-compatibility auditor.
//!
//! A game fixes the problem, the mechanism and an environment profile for
//! the other followers. A deviation gain compares follower `i`'s true net
//! cost when it plays faithfully against the same profile with `i`
//! deviating. Positive gain means the deviation pays.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::consensus::{run_consensus, ConsensusConfig, ConsensusProblem, ConsensusRule, ConsensusRun};
use crate::dual::{check_strategy_count, exact_kkt_solve, DualIterationConfig};
use crate::error::{MechanismError, Result};
use crate::problem::{social_cost, AllocationProblem};
use crate::scalar::Scalar;
use crate::strategy::Strategy;
use crate::tax::{run_mechanism, MechanismRun, TaxRule};

/// A completed run with per-follower settlement.
pub trait Settlement<T: Scalar> {
    fn decision(&self) -> &DVector<T>;
    /// `vᵢ(zᵢ; θᵢ)` with the true type.
    fn true_costs(&self) -> &[T];
    fn taxes(&self) -> &[T];
    fn net_costs(&self) -> &[T];
}

impl<T: Scalar> Settlement<T> for MechanismRun<T> {
    fn decision(&self) -> &DVector<T> {
        &self.decision
    }
    fn true_costs(&self) -> &[T] {
        &self.true_costs
    }
    fn taxes(&self) -> &[T] {
        &self.taxes
    }
    fn net_costs(&self) -> &[T] {
        &self.net_costs
    }
}

impl<T: Scalar> Settlement<T> for ConsensusRun<T> {
    fn decision(&self) -> &DVector<T> {
        &self.decision
    }
    fn true_costs(&self) -> &[T] {
        &self.true_costs
    }
    fn taxes(&self) -> &[T] {
        &self.taxes
    }
    fn net_costs(&self) -> &[T] {
        &self.net_costs
    }
}

/// `vᵢ(zᵢ; θᵢ) + πᵢ`.
pub fn net_cost<T: Scalar, R: Settlement<T>>(run: &R, i: usize) -> T {
    run.true_costs()[i] + run.taxes()[i]
}

/// A mechanism bound to a problem and an environment profile.
pub trait Game<T: Scalar>: Sync {
    type Run: Settlement<T> + Send;

    fn followers(&self) -> usize;
    fn mechanism(&self) -> &'static str;
    /// Strategies of everyone when nobody is being audited.
    fn baseline(&self) -> &[Strategy<T>];
    fn play(&self, strategies: &[Strategy<T>], n: usize) -> Result<Self::Run>;
    /// `Σ vᵢ(ζⁿ) − Σ vᵢ(z*)` with true types.
    fn efficiency_gap(&self, run: &Self::Run) -> Result<T>;
}

/// Dual decomposition under a tax rule.
#[derive(Debug, Clone)]
pub struct AllocationGame<T: Scalar> {
    pub problem: AllocationProblem<T>,
    pub rule: TaxRule<T>,
    pub gamma: Option<T>,
    pub lambda0: Option<DVector<T>>,
    pub baseline: Vec<Strategy<T>>,
    optimum: T,
}

impl<T: Scalar> AllocationGame<T> {
    pub fn new(problem: AllocationProblem<T>, rule: TaxRule<T>) -> Result<Self> {
        let baseline = vec![Strategy::Faithful; problem.followers()];
        Self::with_baseline(problem, rule, baseline)
    }

    pub fn with_baseline(problem: AllocationProblem<T>, rule: TaxRule<T>, baseline: Vec<Strategy<T>>) -> Result<Self> {
        problem.ensure_valid()?;
        check_strategy_count(&problem, &baseline)?;
        let optimum = social_cost(&problem, &exact_kkt_solve(&problem)?.z)?;
        Ok(AllocationGame {
            problem,
            rule,
            gamma: None,
            lambda0: None,
            baseline,
            optimum,
        })
    }

    pub fn with_gamma(mut self, gamma: T) -> Self {
        self.gamma = Some(gamma);
        self
    }

    fn config(&self, n: usize) -> DualIterationConfig<T> {
        let mut c = DualIterationConfig::new(n);
        c.gamma = self.gamma;
        c.lambda0 = self.lambda0.clone();
        c
    }
}

impl<T: Scalar> Game<T> for AllocationGame<T> {
    type Run = MechanismRun<T>;

    fn followers(&self) -> usize {
        self.problem.followers()
    }
    fn mechanism(&self) -> &'static str {
        self.rule.name()
    }
    fn baseline(&self) -> &[Strategy<T>] {
        &self.baseline
    }
    fn play(&self, strategies: &[Strategy<T>], n: usize) -> Result<MechanismRun<T>> {
        run_mechanism(&self.problem, strategies, &self.config(n), &self.rule)
    }
    fn efficiency_gap(&self, run: &MechanismRun<T>) -> Result<T> {
        Ok(run.social_cost() - self.optimum)
    }
}

/// Average consensus on a tree.
#[derive(Debug, Clone)]
pub struct ConsensusGame<T: Scalar> {
    pub problem: ConsensusProblem<T>,
    pub rule: ConsensusRule,
    pub alpha: Option<T>,
    pub baseline: Vec<Strategy<T>>,
}

impl<T: Scalar> ConsensusGame<T> {
    pub fn new(problem: ConsensusProblem<T>, rule: ConsensusRule) -> Self {
        let baseline = vec![Strategy::Faithful; problem.nodes()];
        ConsensusGame {
            problem,
            rule,
            alpha: None,
            baseline,
        }
    }
}

impl<T: Scalar> Game<T> for ConsensusGame<T> {
    type Run = ConsensusRun<T>;

    fn followers(&self) -> usize {
        self.problem.nodes()
    }
    fn mechanism(&self) -> &'static str {
        self.rule.name()
    }
    fn baseline(&self) -> &[Strategy<T>] {
        &self.baseline
    }
    fn play(&self, strategies: &[Strategy<T>], n: usize) -> Result<ConsensusRun<T>> {
        let config = ConsensusConfig {
            n,
            alpha: self.alpha,
            rule: self.rule,
        };
        run_consensus(&self.problem, strategies, &config)
    }
    fn efficiency_gap(&self, run: &ConsensusRun<T>) -> Result<T> {
        Ok(self.problem.efficiency_gap(&run.decision))
    }
}

fn profile<T: Scalar>(game: &impl Game<T>, i: usize, s: &Strategy<T>) -> Result<Vec<Strategy<T>>> {
    if i >= game.followers() {
        return Err(MechanismError::FollowerIndex {
            index: i,
            count: game.followers(),
        });
    }
    let mut p = game.baseline().to_vec();
    p[i] = s.clone();
    Ok(p)
}

/// `net(i faithful) − net(i deviating)`, others held at the baseline.
pub fn deviation_gain<T: Scalar, G: Game<T>>(game: &G, i: usize, deviation: &Strategy<T>, n: usize) -> Result<T> {
    let faithful = game.play(&profile(game, i, &Strategy::Faithful)?, n)?;
    let deviating = game.play(&profile(game, i, deviation)?, n)?;
    Ok(net_cost(&faithful, i) - net_cost(&deviating, i))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow<T> {
    pub follower: usize,
    pub deviation: String,
    pub n: usize,
    pub faithful_net: T,
    pub deviating_net: T,
    pub gain: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport<T> {
    pub scenario: String,
    pub mechanism: String,
    /// Ordered by `(n, follower, deviation index)`.
    pub rows: Vec<AuditRow<T>>,
    /// `(n, max gain over followers and deviations)`, ascending in `n`.
    pub worst_gain: Vec<(usize, T)>,
    /// `(n, efficiency gap of the baseline run)`.
    pub efficiency_gap: Vec<(usize, T)>,
    /// Smallest `ε ≥ 0` covering every gain at the largest horizon.
    pub epsilon: T,
}

/// Tabulates gains for every `(follower, deviation, n)`.
pub fn audit_epsilon_ic<T: Scalar, G: Game<T>>(
    game: &G,
    scenario: &str,
    library: &[Strategy<T>],
    horizons: &[usize],
) -> Result<AuditReport<T>> {
    if library.is_empty() || horizons.is_empty() {
        return Err(MechanismError::InvalidConfig(
            "audit needs a nonempty deviation library and horizon list".into(),
        ));
    }
    let mut ns = horizons.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let followers = game.followers();

    let faithful_keys: Vec<(usize, usize)> = ns.iter().flat_map(|&n| (0..followers).map(move |i| (n, i))).collect();
    let faithful: BTreeMap<(usize, usize), T> = faithful_keys
        .par_iter()
        .map(|&(n, i)| {
            let run = game.play(&profile(game, i, &Strategy::Faithful)?, n)?;
            Ok(((n, i), net_cost(&run, i)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    let keys: Vec<(usize, usize, usize)> = ns
        .iter()
        .flat_map(|&n| (0..followers).flat_map(move |i| (0..library.len()).map(move |d| (n, i, d))))
        .collect();
    let rows = keys
        .par_iter()
        .map(|&(n, i, d)| {
            let run = game.play(&profile(game, i, &library[d])?, n)?;
            let deviating_net = net_cost(&run, i);
            let faithful_net = faithful[&(n, i)];
            Ok(AuditRow {
                follower: i,
                deviation: library[d].to_string(),
                n,
                faithful_net,
                deviating_net,
                gain: faithful_net - deviating_net,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let efficiency_gap = ns
        .par_iter()
        .map(|&n| {
            let run = game.play(game.baseline(), n)?;
            Ok((n, game.efficiency_gap(&run)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let worst_gain: Vec<(usize, T)> = ns
        .iter()
        .map(|&n| {
            let w = rows
                .iter()
                .filter(|r| r.n == n)
                .map(|r| r.gain)
                .fold(None, |acc: Option<T>, g| Some(acc.map_or(g, |a| a.max(g))));
            (n, w.unwrap_or_else(T::zero))
        })
        .collect();
    let epsilon = worst_gain.last().map_or_else(T::zero, |(_, g)| g.max(T::zero()));

    Ok(AuditReport {
        scenario: scenario.to_string(),
        mechanism: game.mechanism().to_string(),
        rows,
        worst_gain,
        efficiency_gap,
        epsilon,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport<T> {
    /// `Σ πᵢ`.
    pub revenue: T,
    pub net_costs: Vec<T>,
    /// `netᵢ ≤ 0`.
    pub individually_rational: Vec<bool>,
}

pub fn budget_and_rationality_report<T: Scalar, R: Settlement<T>>(run: &R) -> BudgetReport<T> {
    let net_costs = run.net_costs().to_vec();
    BudgetReport {
        revenue: run.taxes().iter().fold(T::zero(), |a, b| a + *b),
        individually_rational: net_costs.iter().map(|c| *c <= T::zero()).collect(),
        net_costs,
    }
}
