//! One function per verb. Each returns the summary and trace tables.

use faithful_mech::{
    audit_epsilon_ic, beta_bound, budget_and_rationality_report, clearing_price_curve, exact_kkt_solve,
    integrate_vcg, run_consensus, run_mechanism, run_primal_dual, solve_marginal, AllocationGame, AllocationProblem,
    AuditReport, ConsensusConfig, ConsensusGame, ConsensusRule, DualIterationConfig, IterationTrace, MarginalMode,
    MechanismError, Quadrature,
};
use serde_json::Value;

use crate::report::{fmt_num, num, nums, vector, Artifacts, Obj, Table};
use crate::scenario::{load_scenario, AllocationSetup, ConsensusSetup, RuleName, Scenario, Setup};
use crate::{CliError, Command, RunArgs};

pub const DEFAULT_PARTITION: usize = 64;

fn runtime(e: MechanismError) -> CliError {
    CliError::Runtime(e.to_string())
}

struct Context {
    scenario: Scenario,
    setup: Setup,
    args: RunArgs,
}

impl Context {
    fn horizons(&self) -> Result<Vec<usize>, CliError> {
        let h = if self.args.n.is_empty() {
            self.scenario.mechanism.horizons.clone()
        } else {
            self.args.n.clone()
        };
        if h.is_empty() {
            return Err(CliError::Validation("no horizons given".into()));
        }
        Ok(h)
    }

    fn gamma(&self) -> Option<f64> {
        self.args.gamma.or(self.scenario.mechanism.gamma.map(|g| g.0))
    }

    fn alpha(&self) -> Option<f64> {
        self.args.alpha.or(self.scenario.mechanism.alpha.map(|a| a.0))
    }

    fn allocation(&self, verb: &str) -> Result<&AllocationSetup, CliError> {
        match &self.setup {
            Setup::Allocation(a) => Ok(a),
            Setup::Consensus(_) => Err(CliError::Validation(format!("{verb} needs an allocation scenario"))),
        }
    }

    fn consensus(&self, verb: &str) -> Result<&ConsensusSetup, CliError> {
        match &self.setup {
            Setup::Consensus(c) => Ok(c),
            Setup::Allocation(_) => Err(CliError::Validation(format!("{verb} needs a consensus scenario"))),
        }
    }

    fn consensus_rule(&self) -> Result<ConsensusRule, CliError> {
        match self.args.mechanism.or(self.scenario.mechanism.rule) {
            None | Some(RuleName::Penalty) => Ok(ConsensusRule::Penalty),
            Some(RuleName::GrovesZero) => Ok(ConsensusRule::GrovesZero),
            Some(other) => Err(CliError::Validation(format!(
                "consensus supports groves-zero and penalty, not {}",
                other.as_str()
            ))),
        }
    }

    fn dual_config(&self, n: usize) -> DualIterationConfig<f64> {
        let c = DualIterationConfig::new(n);
        match self.gamma() {
            Some(g) => c.with_gamma(g),
            None => c,
        }
    }

    fn header(&self, verb: &str) -> Obj {
        Obj::new()
            .set("command", verb)
            .set("scenario", self.scenario.name.as_str())
    }
}

pub fn dispatch(command: &Command) -> Result<Artifacts, CliError> {
    let args = command.args().clone();
    let scenario = load_scenario(&args.scenario)?;
    let setup = scenario.build(args.seed)?;
    let ctx = Context { scenario, setup, args };
    match command {
        Command::RunDd(_) => run_dd(&ctx),
        Command::RunVcg(_) => run_vcg(&ctx),
        Command::RunConsensus(_) => run_consensus_cmd(&ctx),
        Command::IntegratePrice(_) => integrate_price(&ctx),
        Command::Audit(_) => audit(&ctx),
    }
}

fn trace_table(name: String, problem: &AllocationProblem<f64>, trace: &IterationTrace<f64>) -> Table {
    let m = problem.constraints();
    let mut header = vec!["k".to_string()];
    header.extend((0..m).map(|r| format!("price_before_{r}")));
    header.extend((0..trace.raw_decision.len()).map(|d| format!("bid_{d}")));
    header.extend((0..m).map(|r| format!("price_after_{r}")));
    header.push("residual".into());
    let mut t = Table::new(name, header);
    let r = trace_matrix(problem, trace);
    for s in &trace.steps {
        let mut row = vec![s.k.to_string()];
        row.extend(s.price_before.iter().map(|x| fmt_num(*x)));
        row.extend(s.bids.iter().map(|x| fmt_num(*x)));
        row.extend(s.price_after.iter().map(|x| fmt_num(*x)));
        let rhs = &r.1;
        row.push(fmt_num((&r.0 * &s.bids - rhs).norm()));
        t.push(row);
    }
    t
}

/// Constraint matrix and right-hand side of the society a trace ran on.
fn trace_matrix(
    problem: &AllocationProblem<f64>,
    trace: &IterationTrace<f64>,
) -> (nalgebra::DMatrix<f64>, nalgebra::DVector<f64>) {
    let cols: Vec<usize> = trace
        .members
        .iter()
        .flat_map(|&i| problem.block_range(i))
        .collect();
    let r = problem.constraint().select_columns(&cols);
    // Absent followers are pinned at zero, so the budget is unchanged.
    (r, problem.budget().clone())
}

fn run_dd(ctx: &Context) -> Result<Artifacts, CliError> {
    let a = ctx.allocation("run-dd")?;
    let mut runs = Vec::new();
    let mut tables = Vec::new();
    for n in ctx.horizons()? {
        let trace = run_primal_dual(&a.problem, &a.strategies, &ctx.dual_config(n)).map_err(runtime)?;
        let costs: Vec<f64> = (0..a.problem.followers())
            .map(|i| a.problem.cost(i).evaluate(&a.problem.block(&trace.decision, i)))
            .collect();
        let residual = (a.problem.constraint() * &trace.raw_decision - a.problem.budget()).amax();
        runs.push(
            Obj::new()
                .set("n", n)
                .set("gamma", num(trace.gamma))
                .set("decision", vector(&trace.decision))
                .set("raw_decision", vector(&trace.raw_decision))
                .set("price", vector(trace.final_price()))
                .set("raw_residual_inf", num(residual))
                .set("true_costs", nums(&costs))
                .build(),
        );
        tables.push(trace_table(format!("run-dd_n{n}.csv"), &a.problem, &trace));
    }
    Ok(Artifacts {
        summary: ctx.header("run-dd").set("runs", Value::Array(runs)).build(),
        tables,
    })
}

fn run_vcg(ctx: &Context) -> Result<Artifacts, CliError> {
    let a = ctx.allocation("run-vcg")?;
    let rule = ctx.scenario.tax_rule(a, ctx.args.mechanism)?;
    let mut runs = Vec::new();
    let mut tables = Vec::new();
    for n in ctx.horizons()? {
        let run = run_mechanism(&a.problem, &a.strategies, &ctx.dual_config(n), &rule).map_err(runtime)?;
        let budget = budget_and_rationality_report(&run);
        runs.push(
            Obj::new()
                .set("n", n)
                .set("rule", run.rule)
                .set("gamma", num(run.main.gamma))
                .set("decision", vector(&run.decision))
                .set("price", vector(run.main.final_price()))
                .set("reported", nums(&run.reported))
                .set("k_terms", run.k_terms.as_ref().map_or(Value::Null, |k| nums(k)))
                .set("taxes", nums(&run.taxes))
                .set("true_costs", nums(&run.true_costs))
                .set("net_costs", nums(&run.net_costs))
                .set("revenue", num(budget.revenue))
                .set("individually_rational", budget.individually_rational.clone())
                .set("raw_distance", num(run.raw_distance))
                .set("penalty_threshold", run.penalty_threshold.map_or(Value::Null, num))
                .set("penalty_triggered", run.penalty_triggered)
                .build(),
        );
        tables.push(trace_table(format!("run-vcg_n{n}.csv"), &a.problem, &run.main));
        for (j, m) in run.marginals.iter().enumerate() {
            tables.push(trace_table(format!("run-vcg_n{n}_without_{j}.csv"), &a.problem, m));
        }
    }
    Ok(Artifacts {
        summary: ctx.header("run-vcg").set("runs", Value::Array(runs)).build(),
        tables,
    })
}

fn run_consensus_cmd(ctx: &Context) -> Result<Artifacts, CliError> {
    let c = ctx.consensus("run-consensus")?;
    let rule = ctx.consensus_rule()?;
    let mut runs = Vec::new();
    let mut tables = Vec::new();
    for n in ctx.horizons()? {
        let config = ConsensusConfig {
            n,
            alpha: ctx.alpha(),
            rule,
        };
        let run = run_consensus(&c.problem, &c.strategies, &config).map_err(runtime)?;
        let budget = budget_and_rationality_report(&run);
        runs.push(
            Obj::new()
                .set("n", n)
                .set("rule", run.rule)
                .set("alpha", num(run.alpha))
                .set("rho", num(run.rho))
                .set("decision", vector(&run.decision))
                .set("distance", num(run.distance))
                .set("beta", num(run.beta))
                .set("penalty_triggered", run.penalty_triggered)
                .set("reported", nums(&run.reported))
                .set("taxes", nums(&run.taxes))
                .set("true_costs", nums(&run.true_costs))
                .set("net_costs", nums(&run.net_costs))
                .set("revenue", num(budget.revenue))
                .set("individually_rational", budget.individually_rational.clone())
                .build(),
        );
        let mut header = vec!["k".to_string(), "distance".into(), "beta".into()];
        header.extend((0..c.problem.nodes()).map(|i| format!("z_{i}")));
        let mut t = Table::new(format!("run-consensus_n{n}.csv"), header);
        for (k, z) in run.trajectory.iter().enumerate() {
            let beta = beta_bound(c.problem.graph(), c.problem.bounds(), k).map_err(runtime)?;
            let mut row = vec![k.to_string(), fmt_num(faithful_mech::consensus_distance(z)), fmt_num(beta)];
            row.extend(z.iter().map(|x| fmt_num(*x)));
            t.push(row);
        }
        tables.push(t);
    }
    Ok(Artifacts {
        summary: ctx.header("run-consensus").set("runs", Value::Array(runs)).build(),
        tables,
    })
}

fn integrate_price(ctx: &Context) -> Result<Artifacts, CliError> {
    let a = ctx.allocation("integrate-price")?;
    let k = ctx
        .args
        .k_partition
        .or(ctx.scenario.mechanism.k_partition)
        .unwrap_or(DEFAULT_PARTITION);
    if k == 0 {
        return Err(CliError::Validation("--k-partition must be positive".into()));
    }
    let p = &a.problem;
    let exact = exact_kkt_solve(p).map_err(runtime)?;
    let mut followers = Vec::new();
    let mut header = vec!["follower".to_string(), "k".into(), "t".into(), "integrand".into()];
    header.extend((0..p.constraints()).map(|r| format!("price_{r}")));
    let mut table = Table::new("integrate-price.csv", header);
    for i in 0..p.followers() {
        let path = clearing_price_curve(p, i, k, &MarginalMode::Exact).map_err(runtime)?;
        let left = integrate_vcg(&path, Quadrature::LeftEndpoint);
        let trapezoid = integrate_vcg(&path, Quadrature::Trapezoid);
        let others_at_optimum: f64 = (0..p.followers())
            .filter(|&j| j != i)
            .map(|j| p.cost(j).evaluate(&p.block(&exact.z, j)))
            .sum();
        let absent = solve_marginal(p, i, &nalgebra::DVector::zeros(p.cost(i).dim()), &MarginalMode::Exact)
            .map_err(runtime)?;
        let pivot = others_at_optimum - absent.value;
        followers.push(
            Obj::new()
                .set("follower", i)
                .set("target", vector(&path.target))
                .set("left_sum", num(left))
                .set("trapezoid", num(trapezoid))
                .set("pivot_tax", num(pivot))
                .set("left_error", num(left - pivot))
                .build(),
        );
        for (idx, s) in path.samples.iter().enumerate() {
            let mut row = vec![i.to_string(), (idx + 1).to_string(), fmt_num(s.t), fmt_num(s.integrand)];
            row.extend(s.price.iter().map(|x| fmt_num(*x)));
            table.push(row);
        }
    }
    Ok(Artifacts {
        summary: ctx
            .header("integrate-price")
            .set("k_partition", k)
            .set("followers", Value::Array(followers))
            .build(),
        tables: vec![table],
    })
}

fn audit_artifacts(ctx: &Context, report: &AuditReport<f64>, horizons: &[usize]) -> Artifacts {
    let mut table = Table::new(
        "audit.csv",
        ["follower", "deviation", "n", "faithful_net", "deviating_net", "gain"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    let rows: Vec<Value> = report
        .rows
        .iter()
        .map(|r| {
            table.push(vec![
                r.follower.to_string(),
                r.deviation.clone(),
                r.n.to_string(),
                fmt_num(r.faithful_net),
                fmt_num(r.deviating_net),
                fmt_num(r.gain),
            ]);
            Obj::new()
                .set("follower", r.follower)
                .set("deviation", r.deviation.as_str())
                .set("n", r.n)
                .set("faithful_net", num(r.faithful_net))
                .set("deviating_net", num(r.deviating_net))
                .set("gain", num(r.gain))
                .build()
        })
        .collect();
    let worst: Vec<Value> = report
        .worst_gain
        .iter()
        .map(|(n, g)| Obj::new().set("n", *n).set("gain", num(*g)).build())
        .collect();
    let gaps: Vec<Value> = report
        .efficiency_gap
        .iter()
        .map(|(n, g)| Obj::new().set("n", *n).set("gap", num(*g)).build())
        .collect();
    let summary = ctx
        .header("audit")
        .set("mechanism", report.mechanism.as_str())
        .set("horizons", horizons.to_vec())
        .set("epsilon", num(report.epsilon))
        .set("worst_gain", Value::Array(worst))
        .set("efficiency_gap", Value::Array(gaps))
        .set("rows", Value::Array(rows))
        .build();
    Artifacts {
        summary,
        tables: vec![table],
    }
}

fn audit(ctx: &Context) -> Result<Artifacts, CliError> {
    let horizons = ctx.horizons()?;
    let library = ctx.scenario.library()?;
    let name = ctx.scenario.name.as_str();
    let report = match &ctx.setup {
        Setup::Allocation(a) => {
            let rule = ctx.scenario.tax_rule(a, ctx.args.mechanism)?;
            let mut game = AllocationGame::with_baseline(a.problem.clone(), rule, a.strategies.clone())
                .map_err(|e| CliError::Validation(e.to_string()))?;
            game.gamma = ctx.gamma();
            audit_epsilon_ic(&game, name, &library, &horizons).map_err(runtime)?
        }
        Setup::Consensus(c) => {
            let mut game = ConsensusGame::new(c.problem.clone(), ctx.consensus_rule()?);
            game.alpha = ctx.alpha();
            game.baseline = c.strategies.clone();
            audit_epsilon_ic(&game, name, &library, &horizons).map_err(runtime)?
        }
    };
    Ok(audit_artifacts(ctx, &report, &horizons))
}
