use rayon::prelude::*;
use srcinv_core::algorithms::{analytic_cost, run_algorithm, Algorithm, AlgorithmConfig, CostDims, RunReport, Setup};
use srcinv_core::control::{SegmentLayout, Source, Subdivision};
use srcinv_core::localization::{zeta_curves, SectionPartition};
use srcinv_core::mesh::Edge;
use srcinv_core::model::ForwardModel;

use crate::config::{ExperimentConfig, MeshSpec, ThresholdPair};
use crate::data::{fmt, generate_for, model_on, oscillation_indicator};
use crate::output::{Outcome, Table};
use crate::suite::test_case;
use crate::HarnessError;

/// Every requested algorithm run on one test of the suite.
#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub test: usize,
    pub reports: Vec<RunReport>,
}

impl SuiteRun {
    pub fn get(&self, alg: Algorithm) -> Option<&RunReport> {
        self.reports.iter().find(|r| r.algorithm == alg)
    }
}

fn truth_for(test: usize) -> Result<Vec<Source>, HarnessError> {
    test_case(test).ok_or_else(|| HarnessError::Config { path: "experiment.tests".into(), msg: format!("no test {test}") })
}

fn run_one(
    cfg: &ExperimentConfig,
    mesh: &MeshSpec,
    truth: &[Source],
    alg: Algorithm,
    acfg: &AlgorithmConfig,
) -> Result<RunReport, HarnessError> {
    let local = ExperimentConfig { mesh: *mesh, ..cfg.clone() };
    let data = generate_for(&local, truth)?.noisy;
    let mut model = model_on(&local, mesh)?;
    let coarse = cfg.coarse()?;
    let setup = Setup { coarse: &coarse, data: &data, c_up: cfg.coefficients.c_up, truth: Some(truth) };
    Ok(run_algorithm(alg, &mut model, &setup, acfg)?)
}

/// Runs every (test, algorithm) pair in parallel on the configured mesh.
pub fn run_suite(cfg: &ExperimentConfig, tests: &[usize], algorithms: &[Algorithm]) -> Result<Vec<SuiteRun>, HarnessError> {
    let jobs: Vec<(usize, Algorithm)> = tests.iter().flat_map(|&t| algorithms.iter().map(move |&a| (t, a))).collect();
    let reports: Vec<(usize, RunReport)> = jobs
        .par_iter()
        .map(|&(t, a)| Ok((t, run_one(cfg, &cfg.mesh, &truth_for(t)?, a, &cfg.algorithm)?)))
        .collect::<Result<_, HarnessError>>()?;
    Ok(tests
        .iter()
        .map(|&test| SuiteRun {
            test,
            reports: reports.iter().filter(|(t, _)| *t == test).map(|(_, r)| r.clone()).collect(),
        })
        .collect())
}

fn breakpoints(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";")
}

fn opt_string<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn suite_tables(runs: &[SuiteRun], steps_per_solve: usize, dims: CostDims) -> Vec<Table> {
    let mut results = Table::new(
        "results",
        &[
            "test",
            "algorithm",
            "l1_top",
            "l1_bottom",
            "distance_top",
            "distance_bottom",
            "iterations",
            "outer_iterations",
            "cost",
            "forward_solves",
            "full_step_equivalents",
            "mean_cond",
            "max_cond",
            "analytic_cost",
        ],
    );
    let mut subs = Table::new("subdivisions", &["test", "algorithm", "top", "bottom"]);
    let mut estimates = Table::new("estimates", &["test", "algorithm", "theta"]);
    let mut conds = Table::new("cond_trace", &["test", "algorithm", "step", "cond"]);
    for run in runs {
        for r in &run.reports {
            let (t, a) = (run.test.to_string(), r.algorithm.name().to_string());
            results.push(vec![
                t.clone(),
                a.clone(),
                opt_string(r.l1.map(|l| fmt(l.0))),
                opt_string(r.l1.map(|l| fmt(l.1))),
                opt_string(r.distance.map(|d| d.0)),
                opt_string(r.distance.map(|d| d.1)),
                r.iterations.to_string(),
                r.outer_iterations.to_string(),
                fmt(r.cost),
                r.forward_solves.to_string(),
                fmt(r.stats.full_steps as f64 / steps_per_solve as f64),
                fmt(r.mean_cond()),
                fmt(r.max_cond()),
                fmt(analytic_cost(&r.shapes, dims)),
            ]);
            subs.push(vec![t.clone(), a.clone(), breakpoints(&r.top_breakpoints), breakpoints(&r.bottom_breakpoints)]);
            estimates.push(vec![t.clone(), a.clone(), r.theta.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(";")]);
            for (k, c) in r.cond_trace.iter().enumerate() {
                conds.push(vec![t.clone(), a.clone(), k.to_string(), fmt(*c)]);
            }
        }
    }
    vec![results, subs, estimates, conds]
}

fn exponent(x: f64) -> i32 {
    x.log10().floor() as i32
}

/// Relational comparison of the four algorithms over the suite.
pub fn suite_checks(outcome: &mut Outcome, runs: &[SuiteRun], dims: CostDims, expected: [i32; 4]) {
    let complete: Vec<&SuiteRun> = runs.iter().filter(|r| Algorithm::ALL.iter().all(|&a| r.get(a).is_some())).collect();
    let n = complete.len();
    fn r(run: &SuiteRun, a: Algorithm) -> &RunReport {
        run.get(a).expect("complete run")
    }

    let better: Vec<usize> = complete
        .iter()
        .filter(|run| {
            let c4 = r(run, Algorithm::AdaptiveTime).cost;
            c4 <= r(run, Algorithm::Adaptive).cost && c4 <= r(run, Algorithm::FinestTime).cost
        })
        .map(|run| run.test)
        .collect();
    let need = n.saturating_sub(2);
    outcome.check(
        9,
        "adaptive with localization has the lowest cost",
        n > 0 && better.len() >= need,
        format!("{} of {n} tests (need {need}): {better:?}", better.len()),
    );

    let far: Vec<String> = complete
        .iter()
        .filter_map(|run| {
            let d = r(run, Algorithm::AdaptiveTime).distance?;
            (d.0 > 3 || d.1 > 3).then(|| format!("test {} ({:+}, {:+})", run.test, d.0, d.1))
        })
        .collect();
    outcome.check(
        9,
        "distance from optimal subdivision",
        n > 0 && far.is_empty(),
        if far.is_empty() { "within +3 per edge on every test".to_string() } else { format!("above +3: {}", far.join(", ")) },
    );

    let misordered: Vec<String> = complete
        .iter()
        .filter_map(|run| {
            let s = Algorithm::ALL.map(|a| r(run, a).forward_solves);
            let ok = s[3] < s[2] && s[2] < s[0] && s[1] < s[0];
            (!ok).then(|| format!("test {} {:?}", run.test, s))
        })
        .collect();
    outcome.check(
        9,
        "forward-solve ordering",
        n > 0 && misordered.is_empty(),
        if misordered.is_empty() {
            "4 < 3 < 1 and 2 < 1 on every test".to_string()
        } else {
            format!("violated (solves for algorithms 1..4): {}", misordered.join(", "))
        },
    );

    let mean = Algorithm::ALL.map(|a| {
        let v: Vec<f64> = complete.iter().map(|run| analytic_cost(&r(run, a).shapes, dims)).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    });
    let got = mean.map(exponent);
    outcome.check(
        9,
        "operation-count exponents",
        n > 0 && got == expected,
        format!(
            "mean costs {} give exponents {got:?}, expected {expected:?}",
            mean.iter().map(|c| format!("{c:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    );
}

pub fn cost_dims(cfg: &ExperimentConfig, n_h: f64, n_y: f64) -> Result<CostDims, HarnessError> {
    Ok(CostDims { n_h, n_y, n_levels: cfg.time.grid()?.n as f64 })
}

pub fn tests_suite(
    cfg: &ExperimentConfig,
    tests: &[usize],
    algorithms: &[Algorithm],
    dims: CostDims,
    expected: [i32; 4],
) -> Result<Outcome, HarnessError> {
    let mut outcome = Outcome::new("tests1-9");
    let runs = run_suite(cfg, tests, algorithms)?;
    let levels = cfg.time.grid()?.n - 1;
    outcome.tables.extend(suite_tables(&runs, levels, dims));
    suite_checks(&mut outcome, &runs, dims, expected);
    Ok(outcome)
}

/// Localized against unlocalized maximal condition numbers. A test qualifies
/// when every available pair (2 vs 1, 4 vs 3) satisfies the bound.
pub fn cond_checks(outcome: &mut Outcome, runs: &[SuiteRun]) -> Table {
    let mut table = Table::new("cond_pairs", &["test", "localized", "unlocalized", "max_cond_localized", "max_cond_unlocalized"]);
    let (mut qualifying, mut strict) = (Vec::new(), Vec::new());
    for run in runs {
        let mut compared = 0;
        let (mut ok, mut any_strict) = (true, false);
        for (loc, plain) in [(Algorithm::FinestTime, Algorithm::Finest), (Algorithm::AdaptiveTime, Algorithm::Adaptive)] {
            let (Some(a), Some(b)) = (run.get(loc), run.get(plain)) else { continue };
            let (ca, cb) = (a.max_cond(), b.max_cond());
            table.push(vec![run.test.to_string(), loc.name().into(), plain.name().into(), fmt(ca), fmt(cb)]);
            compared += 1;
            ok &= ca <= cb;
            any_strict |= ca < cb;
        }
        if compared > 0 && ok {
            qualifying.push(run.test);
            if any_strict {
                strict.push(run.test);
            }
        }
    }
    outcome.check(
        8,
        "localization lowers the condition number",
        qualifying.len() >= 2 && !strict.is_empty(),
        format!("bound holds on tests {qualifying:?}, strictly on {strict:?} (need two tests, one strict)"),
    );
    table
}

pub fn cond_time_localization(cfg: &ExperimentConfig, tests: &[usize]) -> Result<Outcome, HarnessError> {
    let mut outcome = Outcome::new("cond-time-localization");
    let runs = run_suite(cfg, tests, &Algorithm::ALL)?;
    let pairs = cond_checks(&mut outcome, &runs);

    let model = model_on(cfg, &cfg.mesh)?;
    let coarse = cfg.coarse()?;
    let finest = Subdivision::finest(coarse.x_range(), cfg.n_fine())?;
    let zeta = zeta_curves(&model, &SectionPartition::from_subdivision(&coarse), &finest, Edge::Top)?;
    let mut header = vec!["t".to_string()];
    for i in 0..zeta.zeta.len() {
        header.extend([format!("zeta_{i}"), format!("dzeta_{i}")]);
    }
    let rows = (0..zeta.times.len())
        .map(|j| {
            let mut row = vec![fmt(zeta.times[j])];
            for (z, dz) in zeta.zeta.iter().zip(&zeta.dzeta) {
                row.extend([fmt(z[j]), fmt(dz[j])]);
            }
            row
        })
        .collect();
    let curves = Table { name: "zeta".into(), header, rows };

    let levels = cfg.time.grid()?.n - 1;
    let mut tables = suite_tables(&runs, levels, cost_dims(cfg, model.n_nodes() as f64, model.n_obs() as f64)?);
    tables.retain(|t| t.name == "cond_trace" || t.name == "results");
    outcome.tables.extend(tables);
    outcome.tables.extend([pairs, curves]);
    Ok(outcome)
}

fn total_distance(r: &RunReport) -> i64 {
    r.distance.map(|d| d.0 + d.1).unwrap_or(i64::MAX)
}

fn rel_change(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

/// Alg. 4 on one test for each pair of refinement and activity thresholds.
pub fn thresholds(cfg: &ExperimentConfig, test: usize, pairs: &[ThresholdPair]) -> Result<Outcome, HarnessError> {
    let mut outcome = Outcome::new("thresholds-table4");
    let truth = truth_for(test)?;
    let reports: Vec<RunReport> = pairs
        .par_iter()
        .map(|p| {
            let acfg = AlgorithmConfig { eps1: p.eps1, eps2: p.eps2, ..cfg.algorithm };
            run_one(cfg, &cfg.mesh, &truth, Algorithm::AdaptiveTime, &acfg)
        })
        .collect::<Result<_, _>>()?;

    let mut table = Table::new("thresholds", &["eps1", "eps2", "distance_top", "distance_bottom", "iterations", "mean_cond", "cost"]);
    for (p, r) in pairs.iter().zip(&reports) {
        table.push(vec![
            fmt(p.eps1),
            fmt(p.eps2),
            opt_string(r.distance.map(|d| d.0)),
            opt_string(r.distance.map(|d| d.1)),
            r.iterations.to_string(),
            fmt(r.mean_cond()),
            fmt(r.cost),
        ]);
    }

    // Sequences along which one threshold is lowered while the other is held.
    let sequence = |fixed: fn(&ThresholdPair) -> f64, varied: fn(&ThresholdPair) -> f64| {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, p) in pairs.iter().enumerate() {
            match groups.iter_mut().find(|g| fixed(&pairs[g[0]]) == fixed(p)) {
                Some(g) => g.push(i),
                None => groups.push(vec![i]),
            }
        }
        groups.retain(|g| g.len() >= 2);
        for g in groups.iter_mut() {
            g.sort_by(|&a, &b| varied(&pairs[b]).total_cmp(&varied(&pairs[a])));
        }
        groups
    };

    let lower_eps1 = sequence(|p| p.eps2, |p| p.eps1);
    let mut refine_ok = !lower_eps1.is_empty();
    let mut cond_same = !lower_eps1.is_empty();
    let mut notes = Vec::new();
    for g in &lower_eps1 {
        for w in g.windows(2) {
            let (a, b) = (&reports[w[0]], &reports[w[1]]);
            refine_ok &= total_distance(b) > total_distance(a);
            cond_same &= rel_change(a.mean_cond(), b.mean_cond()) <= 1e-6;
        }
        notes.push(
            g.iter()
                .map(|&i| format!("eps1={}: dist {} cond {:.4e}", pairs[i].eps1, total_distance(&reports[i]), reports[i].mean_cond()))
                .collect::<Vec<_>>()
                .join("; "),
        );
    }
    outcome.check(10, "lower eps1 refines more", refine_ok, notes.join(" | "));
    outcome.check(10, "lower eps1 keeps mean cond", cond_same, "mean cond unchanged to 1e-6 relative along each eps1 sequence");

    let lower_eps2 = sequence(|p| p.eps1, |p| p.eps2);
    let mut more_work = !lower_eps2.is_empty();
    let mut notes = Vec::new();
    for g in &lower_eps2 {
        for w in g.windows(2) {
            let (a, b) = (&reports[w[0]], &reports[w[1]]);
            more_work &= b.iterations > a.iterations && b.mean_cond() > a.mean_cond();
        }
        notes.push(
            g.iter()
                .map(|&i| format!("eps2={}: {} its cond {:.4e}", pairs[i].eps2, reports[i].iterations, reports[i].mean_cond()))
                .collect::<Vec<_>>()
                .join("; "),
        );
    }
    outcome.check(10, "lower eps2 iterates more with worse cond", more_work, notes.join(" | "));

    match pairs.iter().position(|p| p.eps1 == 0.4 && p.eps2 == 0.4) {
        Some(i) => {
            let r = &reports[i];
            let c = r.mean_cond();
            let ok = (c / 79.9513).log10().abs() <= 1.0 && (4..=10).contains(&r.iterations);
            outcome.check(
                10,
                "baseline thresholds",
                ok,
                format!("mean cond {c:.4e} (need within 10x of 79.95), {} iterations (need 7 +- 3)", r.iterations),
            );
        }
        None => outcome.check(10, "baseline thresholds", false, "no pair with eps1 = eps2 = 0.4"),
    }
    outcome.tables.push(table);
    Ok(outcome)
}

/// Forward oscillations and inverse convergence of the configured truth on a
/// sequence of meshes, coarsest first.
pub fn stabilization(cfg: &ExperimentConfig, meshes: &[[usize; 2]]) -> Result<Outcome, HarnessError> {
    let mut outcome = Outcome::new("appendixA-stabilization");
    let mut table = Table::new("meshes", &["nx", "ny", "peclet_cell", "oscillation", "cost", "l1_top", "l1_bottom"]);
    let rows: Vec<(f64, f64)> = meshes
        .par_iter()
        .map(|&[nx, ny]| {
            let mesh = MeshSpec { nx, ny, ..cfg.mesh };
            let model = model_on(cfg, &mesh)?;
            let segs: Vec<_> = cfg.truth.iter().map(|s| s.segment()).collect();
            let theta: Vec<f64> = cfg.truth.iter().map(|s| s.value).collect();
            let g = SegmentLayout::new(model.mesh(), &segs)?.dirichlet_vector(&theta, cfg.coefficients.c_up);
            let states = model.states(&g, model.grid().n - 1)?;
            let report = run_one(cfg, &mesh, &cfg.truth, Algorithm::AdaptiveTime, &cfg.algorithm)?;
            Ok((oscillation_indicator(&states), report.cost, report.l1))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?
        .into_iter()
        .zip(meshes)
        .map(|((osc, cost, l1), &[nx, ny])| {
            let hx = (cfg.mesh.x_range[1] - cfg.mesh.x_range[0]) / (nx - 1) as f64;
            let cell_pe = cfg.coefficients.nu * hx / (2.0 * cfg.coefficients.mu);
            table.push(vec![
                nx.to_string(),
                ny.to_string(),
                fmt(cell_pe),
                fmt(osc),
                fmt(cost),
                opt_string(l1.map(|l| fmt(l.0))),
                opt_string(l1.map(|l| fmt(l.1))),
            ]);
            (osc, cost)
        })
        .collect();

    let (first, last) = (rows[0], rows[rows.len() - 1]);
    outcome.check(
        11,
        "coarse mesh oscillates",
        first.0 >= 10.0 * last.0 && first.0 > 0.0,
        format!("indicator {:.3e} on the coarsest mesh vs {:.3e} on the finest (need >= 10x)", first.0, last.0),
    );
    let converged: Vec<bool> = rows.iter().map(|r| r.1 <= 1e-4).collect();
    let only_last = converged[..converged.len() - 1].iter().all(|c| !c) && converged[converged.len() - 1];
    outcome.check(
        11,
        "inversion converges only on the finest mesh",
        only_last,
        format!("final costs {}", rows.iter().map(|r| format!("{:.3e}", r.1)).collect::<Vec<_>>().join(", ")),
    );
    outcome.tables.push(table);
    Ok(outcome)
}
