//! Scenario files: TOML documents describing a problem, the followers'
//! strategies, mechanism parameters and an audit library.
//!
//! Numbers may be written as TOML integers or floats, or as strings holding
//! a decimal or a fraction `"p/q"`.

use std::fmt;
use std::path::Path;

use faithful_mech::{
    penalty_constant, validate_problem, AllocationProblem, ConsensusProblem, GeometricThreshold, Interval,
    MechanismError, QuadraticCost, Strategy, TaxRule, TreeGraph, TypeSpaceBounds,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

/// A real number that also accepts `"p/q"` strings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

pub fn parse_number(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let parsed = match t.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| format!("bad numerator in {t:?}"))?;
            let q: f64 = q.trim().parse().map_err(|_| format!("bad denominator in {t:?}"))?;
            if q == 0.0 {
                return Err(format!("zero denominator in {t:?}"));
            }
            p / q
        }
        None => t.parse().map_err(|_| format!("not a number: {t:?}"))?,
    };
    if parsed.is_finite() {
        Ok(parsed)
    } else {
        Err(format!("not finite: {t:?}"))
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Num;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a string such as \"1/3\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Num, E> {
                Ok(Num(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Num, E> {
                parse_number(v).map(Num).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

fn nums(v: &[Num]) -> Vec<f64> {
    v.iter().map(|n| n.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Allocation,
    Consensus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RuleName {
    GrovesZero,
    Vcg,
    ClearingPrice,
    Penalty,
}

impl RuleName {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleName::GrovesZero => "groves-zero",
            RuleName::Vcg => "vcg",
            RuleName::ClearingPrice => "clearing-price",
            RuleName::Penalty => "penalty",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StrategySpec {
    Faithful,
    FixedBid { bid: Vec<Num> },
    MisreportedType {
        q: Vec<Vec<Num>>,
        b: Vec<Num>,
        #[serde(default = "zero")]
        c0: Num,
    },
    Stationary,
    MisreportValue { offset: Num },
}

fn zero() -> Num {
    Num(0.0)
}

impl Default for StrategySpec {
    fn default() -> Self {
        StrategySpec::Faithful
    }
}

impl StrategySpec {
    pub fn build(&self) -> Result<Strategy<f64>, CliError> {
        Ok(match self {
            StrategySpec::Faithful => Strategy::Faithful,
            StrategySpec::FixedBid { bid } => Strategy::FixedBid(DVector::from_vec(nums(bid))),
            StrategySpec::MisreportedType { q, b, c0 } => Strategy::MisreportedType(cost(q, b, *c0, "misreported type")?),
            StrategySpec::Stationary => Strategy::Stationary,
            StrategySpec::MisreportValue { offset } => Strategy::MisreportValue(offset.0),
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StrategySpec::Faithful => "faithful",
            StrategySpec::FixedBid { .. } => "fixed-bid",
            StrategySpec::MisreportedType { .. } => "misreported-type",
            StrategySpec::Stationary => "stationary",
            StrategySpec::MisreportValue { .. } => "misreport-value",
        }
    }
}

fn matrix(rows: &[Vec<Num>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(CliError::Validation(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j].0))
}

fn cost(q: &[Vec<Num>], b: &[Num], c0: Num, what: &str) -> Result<QuadraticCost<f64>, CliError> {
    QuadraticCost::new(matrix(q, what)?, DVector::from_vec(nums(b)), c0.0)
        .map_err(|e| CliError::Validation(format!("{what}: {e}")))
}

fn intervals(pairs: &[[Num; 2]], what: &str) -> Result<Vec<Interval<f64>>, CliError> {
    pairs
        .iter()
        .map(|[lo, hi]| Interval::new(lo.0, hi.0).map_err(|e| CliError::Validation(format!("{what}: {e}"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    #[serde(default = "default_inner")]
    pub inner: RuleName,
    pub scale: Num,
    pub rate: Num,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<Vec<Num>>,
}

fn default_inner() -> RuleName {
    RuleName::Vcg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleName>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Num>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Num>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_partition: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltySpec>,
}

fn default_horizons() -> Vec<usize> {
    vec![100]
}

impl Default for MechanismSpec {
    fn default() -> Self {
        MechanismSpec {
            rule: None,
            horizons: default_horizons(),
            gamma: None,
            alpha: None,
            k_partition: None,
            penalty: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerSpec {
    pub q: Vec<Vec<Num>>,
    pub b: Vec<Num>,
    #[serde(default = "zero")]
    pub c0: Num,
    #[serde(default)]
    pub strategy: StrategySpec,
    /// Box for the follower's cost minimizer, one interval per coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_bounds: Option<Vec<[Num; 2]>>,
}

/// Seeded random problem in place of explicit followers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    pub followers: usize,
    pub max_dim: usize,
    pub constraints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<Num>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<Num>>,
    /// Box enclosing every decision the mechanism can announce.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reachable: Option<Vec<[Num; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub followers: Vec<FollowerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusSpec {
    pub nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub theta: Vec<Num>,
    pub bounds: Vec<[Num; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<StrategySpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    pub deviations: Vec<StrategySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mechanism: MechanismSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus: Option<ConsensusSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditSpec>,
}

pub fn parse_scenario(text: &str) -> Result<Scenario, CliError> {
    let s: Scenario = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    match s.kind {
        Kind::Allocation if s.allocation.is_none() => {
            Err(CliError::Validation("allocation scenario without an [allocation] table".into()))
        }
        Kind::Consensus if s.consensus.is_none() => {
            Err(CliError::Validation("consensus scenario without a [consensus] table".into()))
        }
        _ => Ok(s),
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let s = parse_scenario(&text).map_err(|e| match e {
        CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })?;
    s.build(None)?;
    Ok(s)
}

pub fn write_scenario(s: &Scenario) -> Result<String, CliError> {
    toml::to_string(s).map_err(|e| CliError::Runtime(e.to_string()))
}

/// A scenario turned into library objects.
#[derive(Debug, Clone)]
pub enum Setup {
    Allocation(AllocationSetup),
    Consensus(ConsensusSetup),
}

#[derive(Debug, Clone)]
pub struct AllocationSetup {
    pub problem: AllocationProblem<f64>,
    pub strategies: Vec<Strategy<f64>>,
    pub bounds: Option<TypeSpaceBounds<f64>>,
    pub reachable: Option<Vec<Interval<f64>>>,
}

#[derive(Debug, Clone)]
pub struct ConsensusSetup {
    pub problem: ConsensusProblem<f64>,
    pub strategies: Vec<Strategy<f64>>,
}

fn validation(e: MechanismError) -> CliError {
    CliError::Validation(e.to_string())
}

impl Scenario {
    /// Builds and validates the problem. `seed` overrides the file's seed.
    pub fn build(&self, seed: Option<u64>) -> Result<Setup, CliError> {
        match self.kind {
            Kind::Allocation => {
                let spec = self.allocation.as_ref().expect("checked at parse");
                let setup = match &spec.random {
                    Some(r) => random_setup(r, seed.or(self.seed).unwrap_or(0))?,
                    None => explicit_setup(spec)?,
                };
                let report = validate_problem(&setup.problem);
                if !report.accepted() {
                    let msgs: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
                    return Err(CliError::Validation(msgs.join("; ")));
                }
                for (i, s) in setup.strategies.iter().enumerate() {
                    s.check(i, setup.problem.cost(i).dim()).map_err(validation)?;
                }
                if let Some(a) = &self.audit {
                    for d in &a.deviations {
                        let s = d.build()?;
                        for i in 0..setup.problem.followers() {
                            s.check(i, setup.problem.cost(i).dim()).map_err(validation)?;
                        }
                    }
                }
                Ok(Setup::Allocation(setup))
            }
            Kind::Consensus => {
                let spec = self.consensus.as_ref().expect("checked at parse");
                let graph = TreeGraph::new(spec.nodes, spec.edges.iter().map(|e| (e[0], e[1])).collect())
                    .map_err(validation)?;
                let bounds =
                    TypeSpaceBounds::scalar(intervals(&spec.bounds, "consensus bounds")?).map_err(validation)?;
                let problem = ConsensusProblem::new(graph, nums(&spec.theta), bounds).map_err(validation)?;
                let strategies = match &spec.strategies {
                    Some(list) => list.iter().map(StrategySpec::build).collect::<Result<Vec<_>, _>>()?,
                    None => vec![Strategy::Faithful; spec.nodes],
                };
                if strategies.len() != spec.nodes {
                    return Err(CliError::Validation(format!(
                        "{} strategies for {} nodes",
                        strategies.len(),
                        spec.nodes
                    )));
                }
                for (i, s) in strategies.iter().enumerate() {
                    s.check(i, 1).map_err(validation)?;
                }
                Ok(Setup::Consensus(ConsensusSetup { problem, strategies }))
            }
        }
    }

    /// Tax rule for allocation runs; `flag` overrides the file.
    pub fn tax_rule(&self, setup: &AllocationSetup, flag: Option<RuleName>) -> Result<TaxRule<f64>, CliError> {
        let name = flag.or(self.mechanism.rule).unwrap_or(RuleName::Vcg);
        Ok(match name {
            RuleName::GrovesZero => TaxRule::GrovesZero,
            RuleName::Vcg => TaxRule::Vcg,
            RuleName::ClearingPrice => TaxRule::ClearingPrice,
            RuleName::Penalty => {
                let p = self.mechanism.penalty.as_ref().ok_or_else(|| {
                    CliError::Validation("penalty rule needs a [mechanism.penalty] table".into())
                })?;
                let inner = match p.inner {
                    RuleName::GrovesZero => TaxRule::GrovesZero,
                    RuleName::Vcg => TaxRule::Vcg,
                    RuleName::ClearingPrice => TaxRule::ClearingPrice,
                    RuleName::Penalty => {
                        return Err(CliError::Validation("penalty cannot wrap itself".into()))
                    }
                };
                let constants = match &p.constants {
                    Some(c) => nums(c),
                    None => {
                        let (Some(bounds), Some(reachable)) = (&setup.bounds, &setup.reachable) else {
                            return Err(CliError::Validation(
                                "penalty constants need explicit values or type bounds and a reachable box".into(),
                            ));
                        };
                        penalty_constant(&setup.problem, bounds, reachable).map_err(validation)?
                    }
                };
                TaxRule::penalty(
                    inner,
                    GeometricThreshold {
                        scale: p.scale.0,
                        rate: p.rate.0,
                    },
                    constants,
                )
                .map_err(validation)?
            }
        })
    }

    /// Deviation library for audits; defaults to the stationary deviation.
    pub fn library(&self) -> Result<Vec<Strategy<f64>>, CliError> {
        match &self.audit {
            Some(a) if !a.deviations.is_empty() => a.deviations.iter().map(StrategySpec::build).collect(),
            _ => Ok(vec![Strategy::Stationary]),
        }
    }

    /// Every strategy mentioned anywhere in the file.
    pub fn strategy_specs(&self) -> Vec<&StrategySpec> {
        let mut out = Vec::new();
        if let Some(a) = &self.allocation {
            out.extend(a.followers.iter().map(|f| &f.strategy));
        }
        if let Some(c) = &self.consensus {
            if let Some(list) = &c.strategies {
                out.extend(list.iter());
            }
        }
        if let Some(a) = &self.audit {
            out.extend(a.deviations.iter());
        }
        out
    }
}

fn explicit_setup(spec: &AllocationSpec) -> Result<AllocationSetup, CliError> {
    let (Some(r), Some(c)) = (&spec.r, &spec.c) else {
        return Err(CliError::Validation(
            "allocation needs `r` and `c`, or a [allocation.random] table".into(),
        ));
    };
    if spec.followers.is_empty() {
        return Err(CliError::Validation("allocation has no followers".into()));
    }
    let costs = spec
        .followers
        .iter()
        .enumerate()
        .map(|(i, f)| cost(&f.q, &f.b, f.c0, &format!("follower {i}")))
        .collect::<Result<Vec<_>, _>>()?;
    let problem = AllocationProblem::new(costs, matrix(r, "r")?, DVector::from_vec(nums(c))).map_err(validation)?;
    let strategies = spec
        .followers
        .iter()
        .map(|f| f.strategy.build())
        .collect::<Result<Vec<_>, _>>()?;
    let bounds = if spec.followers.iter().all(|f| f.type_bounds.is_some()) {
        let per = spec
            .followers
            .iter()
            .enumerate()
            .map(|(i, f)| intervals(f.type_bounds.as_ref().expect("checked"), &format!("follower {i} type bounds")))
            .collect::<Result<Vec<_>, _>>()?;
        Some(TypeSpaceBounds::new(per).map_err(validation)?)
    } else {
        None
    };
    let reachable = spec
        .reachable
        .as_ref()
        .map(|r| intervals(r, "reachable box"))
        .transpose()?;
    Ok(AllocationSetup {
        problem,
        strategies,
        bounds,
        reachable,
    })
}

/// Seeded instance: curvature spectra in `[0.5, 2]`, entries of `b`, `R`
/// and `c` uniform in `[−1, 1]`, redrawn until `R` is well conditioned.
fn random_setup(spec: &RandomSpec, seed: u64) -> Result<AllocationSetup, CliError> {
    if spec.followers == 0 || spec.max_dim == 0 || spec.constraints == 0 {
        return Err(CliError::Validation("random generator needs positive sizes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims: Vec<usize> = (0..spec.followers).map(|_| rng.random_range(1..=spec.max_dim)).collect();
    let total: usize = dims.iter().sum();
    if spec.constraints > total {
        return Err(CliError::Validation(format!(
            "{} constraints exceed {total} decision variables",
            spec.constraints
        )));
    }
    fn draw(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }
    let r = loop {
        let r = draw(&mut rng, spec.constraints, total);
        let s = r.singular_values();
        if s.min() > 0.0 && s.max() / s.min() <= 5.0 {
            break r;
        }
    };
    let costs = dims
        .iter()
        .map(|&d| {
            let u = draw(&mut rng, d, d).qr().q();
            let e = DVector::from_fn(d, |_, _| rng.random_range(0.5..2.0));
            let q = &u * DMatrix::from_diagonal(&e) * u.transpose();
            let q = (&q + q.transpose()) * 0.5;
            let b = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            QuadraticCost::new(q, b, 0.0).map_err(validation)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let c = DVector::from_fn(spec.constraints, |_, _| rng.random_range(-1.0..1.0));
    let problem = AllocationProblem::new(costs, r, c).map_err(validation)?;
    Ok(AllocationSetup {
        strategies: vec![Strategy::Faithful; spec.followers],
        problem,
        bounds: None,
        reachable: None,
    })
}
