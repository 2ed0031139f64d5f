//! The subcommands. Each produces a [`Table`], an exit code and, for
//! `simulate` with tracing on, a JSON trace of trial 0.

use std::fmt;
use std::str::FromStr;

use airfunc::applications::{
    loss_deviation_monte_carlo, loss_deviation_probability, maxconsensus_report, model_to_fmon, MaxConsensusParams,
};
use airfunc::bounds::{comm_cost, error_bound, BoundReport, CostReport};
use airfunc::concentration::{
    builtin_distributions, mgf_domination_check, standard_lambda_grid, subexponential_norm, DistributionSpec,
};
use airfunc::fmon::FmonSpec;
use airfunc::montecarlo::{bernstein_selfcheck, estimate_tail, sweep, EmpiricalTail, SweepGrid, TrialMode, TrialPlan};
use airfunc::rng::TrialStreams;
use airfunc::scheme::estimate_once;

use crate::config::ConfigBundle;
use crate::report::{Cell, Table};
use crate::CliError;

/// Status for a completed run whose empirical tail exceeded its bound, or
/// whose self-check failed.
pub const EXIT_CHECK_FAILED: i32 = 3;

const BOUND_COLUMNS: [&str; 14] = [
    "K",
    "M",
    "P",
    "sigma_F",
    "sigma_N",
    "eps",
    "delta",
    "eta",
    "L",
    "gamma1",
    "gamma2",
    "total_raw",
    "total_clamped",
    "M_required",
];

const TAIL_COLUMNS: [&str; 6] = ["exceed_count", "trials", "point_estimate", "upper_confidence", "seed", "s_strategy"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Bound,
    Cost,
    Simulate,
    Sweep,
    CheckConcentration,
    MlCost,
    MaxconReport,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Bound,
        Command::Cost,
        Command::Simulate,
        Command::Sweep,
        Command::CheckConcentration,
        Command::MlCost,
        Command::MaxconReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Bound => "bound",
            Command::Cost => "cost",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::CheckConcentration => "check-concentration",
            Command::MlCost => "ml-cost",
            Command::MaxconReport => "maxcon-report",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Validation(format!("unknown command {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: Table,
    pub exit_code: i32,
    pub trace: Option<String>,
}

impl Outcome {
    fn ok(table: Table) -> Self {
        Self { table, exit_code: 0, trace: None }
    }
}

pub fn run_command(cmd: Command, bundle: &ConfigBundle, dump_trace: bool) -> Result<Outcome, CliError> {
    bundle.validate()?;
    match cmd {
        Command::Bound => bound(bundle, false),
        Command::Cost => bound(bundle, true),
        Command::Simulate => simulate(bundle, dump_trace),
        Command::Sweep => run_sweep(bundle),
        Command::CheckConcentration => check_concentration(bundle),
        Command::MlCost => ml_cost(bundle),
        Command::MaxconReport => maxcon(bundle),
    }
}

fn bound_cells(bundle: &ConfigBundle, k: usize, m: usize, eps: f64, b: &BoundReport<f64>, c: &CostReport<f64>) -> Vec<Cell> {
    let ch = &bundle.channel;
    vec![
        k.into(),
        m.into(),
        ch.p.into(),
        ch.sigma_f.into(),
        ch.sigma_n.into(),
        eps.into(),
        bundle.run.delta.into(),
        b.eta.into(),
        b.l_const.into(),
        b.gamma1.into(),
        b.gamma2.into(),
        b.total_raw.into(),
        b.total_clamped.into(),
        c.m_required.into(),
    ]
}

fn tail_cells(t: &EmpiricalTail, seed: u64, strategy: &str) -> Vec<Cell> {
    vec![
        t.exceed_count.into(),
        t.trials.into(),
        t.point_estimate.into(),
        t.upper_confidence.into(),
        seed.into(),
        strategy.into(),
    ]
}

fn columns(extra: &[&'static str]) -> Vec<&'static str> {
    BOUND_COLUMNS.iter().chain(extra).copied().collect()
}

fn reports(
    bundle: &ConfigBundle,
    spec: &FmonSpec<f64>,
    k: usize,
    m: usize,
    eps: f64,
) -> Result<(BoundReport<f64>, CostReport<f64>), CliError> {
    let params = bundle.channel_config()?.with_k(k)?.with_m(m)?.bound_params();
    Ok((error_bound(spec, &params, eps)?, comm_cost(spec, &params, eps, bundle.run.delta)?))
}

fn bound(bundle: &ConfigBundle, with_cost: bool) -> Result<Outcome, CliError> {
    let spec = bundle.spec()?;
    let (k, m, eps) = (bundle.channel.k, bundle.channel.m, bundle.run.eps);
    let (b, c) = reports(bundle, &spec, k, m, eps)?;
    let mut row = bound_cells(bundle, k, m, eps, &b, &c);
    let mut table = if with_cost {
        row.extend([c.gamma1_cost.into(), c.gamma2_cost.into(), c.m_real.into()]);
        Table::new(columns(&["gamma1_cost", "gamma2_cost", "M_real"]))
    } else {
        Table::new(columns(&[]))
    };
    table.push(row);
    Ok(Outcome::ok(table))
}

fn plan(bundle: &ConfigBundle, spec: FmonSpec<f64>) -> Result<TrialPlan<f64>, CliError> {
    let run = &bundle.run;
    Ok(TrialPlan {
        spec,
        config: bundle.channel_config()?,
        input: bundle.input_strategy()?,
        eps: run.eps,
        trials: run.trials,
        master_seed: run.master_seed,
        confidence_level: run.confidence_level,
        execution: bundle.execution()?,
        mode: TrialMode::Pipeline,
    })
}

fn simulate(bundle: &ConfigBundle, dump_trace: bool) -> Result<Outcome, CliError> {
    let spec = bundle.spec()?;
    let (k, m, eps) = (bundle.channel.k, bundle.channel.m, bundle.run.eps);
    let (b, c) = reports(bundle, &spec, k, m, eps)?;
    let plan = plan(bundle, spec)?;
    let tail = estimate_tail(&plan)?;
    let trace = if dump_trace {
        let s = plan.input.resolve(&plan.spec, plan.master_seed)?;
        let t = estimate_once(&plan.spec, &plan.config, &s, &TrialStreams::new(plan.master_seed, 0))?;
        Some(serde_json::to_string(&t).map_err(|e| CliError::Runtime(format!("trace: {e}")))?)
    } else {
        None
    };
    let mut table = Table::new(columns(&TAIL_COLUMNS));
    let mut row = bound_cells(bundle, k, m, eps, &b, &c);
    row.extend(tail_cells(&tail, plan.master_seed, plan.input.label()));
    table.push(row);
    let exit_code = if tail.upper_confidence > tail.theory_bound_clamped { EXIT_CHECK_FAILED } else { 0 };
    Ok(Outcome { table, exit_code, trace })
}

fn run_sweep(bundle: &ConfigBundle) -> Result<Outcome, CliError> {
    let base = plan(bundle, bundle.spec()?)?;
    let inputs = bundle
        .sweep
        .s_strategy
        .iter()
        .map(|s| s.parse().map_err(|e| CliError::Validation(format!("sweep.s_strategy: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let grid = SweepGrid { m: bundle.sweep.m.clone(), k: bundle.sweep.k.clone(), eps: bundle.sweep.eps.clone(), inputs };
    if grid.m.is_empty() && grid.k.is_empty() && grid.eps.is_empty() && grid.inputs.is_empty() {
        return Err(CliError::Validation("sweep needs at least one of sweep.M, sweep.K, sweep.eps, sweep.s_strategy".into()));
    }
    let factory = |k: usize| bundle.spec_for_k(k).map_err(|e| airfunc::Error::InvalidConfig(e.to_string()));
    let rows = sweep(&base, &grid, Some(&factory))?;
    let mut table = Table::new(columns(&TAIL_COLUMNS));
    for r in rows {
        let spec = bundle.spec_for_k(r.k)?;
        let (_, c) = reports(bundle, &spec, r.k, r.m, r.eps)?;
        let mut row = bound_cells(bundle, r.k, r.m, r.eps, &r.bound, &c);
        row.extend(tail_cells(&r.tail, r.seed, &r.s_strategy));
        table.push(row);
    }
    Ok(Outcome::ok(table))
}

const SUBEXP_K_MAX: u32 = 40;

fn check_concentration(bundle: &ConfigBundle) -> Result<Outcome, CliError> {
    let mut table = Table::new(vec!["check", "distribution", "parameter", "estimate", "lower_confidence", "bound", "pass"]);
    let config = bundle.channel_config()?;
    let mut dists: Vec<DistributionSpec<f64>> = builtin_distributions();
    for d in [config.fading.clone(), config.noise.clone()] {
        if !dists.iter().any(|x| x.label() == d.label()) {
            dists.push(d);
        }
    }
    let mut all_pass = true;
    for d in &dists {
        let tau = d.subgauss_tau().ok_or_else(|| {
            CliError::Validation(format!("{} has no declared sub-gaussian bound", d.label()))
        })?;
        let check = mgf_domination_check(d, tau, &standard_lambda_grid(tau))?;
        all_pass &= check.pass;
        table.push(vec![
            "mgf-domination".into(),
            d.label().into(),
            tau.into(),
            check.worst_ratio.into(),
            check.worst_ratio.into(),
            1.0.into(),
            check.pass.into(),
        ]);
        let norm = subexponential_norm(d, SUBEXP_K_MAX)?;
        table.push(vec![
            "subexp-norm".into(),
            d.label().into(),
            (norm.k_at_max as u64).into(),
            norm.value.into(),
            norm.value.into(),
            "".into(),
            true.into(),
        ]);
    }
    let c = &bundle.concentration;
    let exp = DistributionSpec::centered_exponential(1.0)?;
    for row in bernstein_selfcheck(&exp, 1.0, c.m, &c.t, c.samples, bundle.run.master_seed)? {
        all_pass &= row.pass;
        table.push(vec![
            "bernstein".into(),
            exp.label().into(),
            row.t.into(),
            row.empirical.into(),
            row.lower_confidence.into(),
            row.bound.into(),
            row.pass.into(),
        ]);
    }
    let exit_code = if all_pass { 0 } else { EXIT_CHECK_FAILED };
    Ok(Outcome { table, exit_code, trace: None })
}

fn ml_cost(bundle: &ConfigBundle) -> Result<Outcome, CliError> {
    let model = bundle.model()?;
    let loss = bundle.loss()?;
    let config = bundle.channel_config()?;
    let (eps, delta) = (bundle.run.eps, bundle.run.delta);
    let report =
        loss_deviation_probability(&model, &loss, &config.bound_params(), eps, delta, bundle.function.grid)?;
    let mut table = Table::new(vec![
        "K",
        "eps",
        "delta",
        "loss",
        "lipschitz_B",
        "loss_threshold",
        "probability_bound",
        "M_required",
        "loss_exceed_count",
        "trials",
        "point_estimate",
        "upper_confidence",
    ]);
    let mut row: Vec<Cell> = vec![
        model.k().into(),
        eps.into(),
        delta.into(),
        loss.name.clone().into(),
        report.lipschitz_b.into(),
        report.loss_threshold.into(),
        report.probability_bound.into(),
        report.m_required.into(),
    ];
    let l = &bundle.loss;
    if l.trials > 0 {
        let x = if l.x.is_empty() { model.domains.iter().map(|d| (d.lo + d.hi) / 2.0).collect() } else { l.x.clone() };
        let m = usize::try_from(report.m_required)
            .map_err(|_| CliError::Validation(format!("M_required = {} is too large to simulate", report.m_required)))?;
        let spec = model_to_fmon(&model, bundle.function.grid)?;
        let run = loss_deviation_monte_carlo(
            &spec,
            &loss,
            &config.with_m(m)?,
            &x,
            l.y,
            eps,
            l.trials,
            bundle.run.master_seed,
        )?;
        row.extend([
            run.loss_exceed_count.into(),
            run.trials.into(),
            run.point_estimate.into(),
            run.upper_confidence.into(),
        ]);
    } else {
        row.extend(std::iter::repeat_n(Cell::from(""), 4));
    }
    table.push(row);
    Ok(Outcome::ok(table))
}

fn maxcon(bundle: &ConfigBundle) -> Result<Outcome, CliError> {
    if bundle.function.name != "sum" {
        return Err(CliError::Validation(format!(
            "maxcon-report needs function.name = \"sum\", got {:?}",
            bundle.function.name
        )));
    }
    let ch = &bundle.channel;
    let params = MaxConsensusParams::new(bundle.maxcon.m, bundle.maxcon.d, ch.m as u64)?;
    let r = maxconsensus_report(&params, ch.k, ch.p, ch.sigma_f, ch.sigma_n)?;
    let mut table = Table::new(vec![
        "K",
        "M",
        "m",
        "d",
        "eps",
        "gamma_raw",
        "gamma",
        "success_probability_bound",
        "mac_channel_uses",
        "multicast_count",
    ]);
    table.push(vec![
        ch.k.into(),
        ch.m.into(),
        params.m.into(),
        params.d.into(),
        r.eps.into(),
        r.gamma_raw.into(),
        r.gamma.into(),
        r.success_probability_bound.into(),
        r.mac_channel_uses.into(),
        r.multicast_count.into(),
    ]);
    Ok(Outcome::ok(table))
}
