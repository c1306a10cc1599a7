use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use srcinv_core::control::{l1_error, SegmentLayout};
use srcinv_core::mesh::Edge;
use srcinv_core::model::ForwardModel;
use srcinv_core::optimizer::{evaluate_cost, run, Method, Truth};
use srcinv_core::pod::{collect_snapshots, PodBasis, PodConfig, PodModel, SnapshotMatrix, Truncation};
use srcinv_core::sensitivity::Window;

use crate::config::{ExperimentConfig, PodRow};
use crate::data::{fmt, generate_measurements, inversion_model};
use crate::experiments::known::known_problem;
use crate::output::{Outcome, Table};
use crate::HarnessError;

struct PodRun {
    row: PodRow,
    dim: usize,
    cost: f64,
    l1: (f64, f64),
    iterations: usize,
    basis_updates: usize,
}

/// Known-location inversion of the configured truth on a POD model that is
/// rebuilt from snapshots on `[0, t_m]`. The cost is evaluated on the
/// unreduced model.
fn pod_run(cfg: &ExperimentConfig, row: PodRow, data: &DMatrix<f64>) -> Result<PodRun, HarnessError> {
    let full = inversion_model(cfg)?;
    let x_range = (cfg.mesh.x_range[0], cfg.mesh.x_range[1]);
    let problem = known_problem(&full, &cfg.truth, cfg.coefficients.c_up, data.clone())?;
    let pod = PodConfig { t_m: row.t_m, truncation: Truncation::SingularFloor { tau: row.tau }, ..cfg.pod };
    let mut model = PodModel::new(full, pod)?;
    let truth = Truth { sources: cfg.truth.clone(), x_range };
    let n = cfg.truth.len();
    let all: Vec<usize> = (0..n).collect();
    let window = Window::full(model.grid());
    let out = run(&mut model, &problem, &vec![0.0; n], &all, window, Method::Pdgn, &cfg.algorithm.gn, Some(&truth))?;
    let cost = evaluate_cost(model.full(), &problem, &out.theta, window)?;
    let segs = problem.segments();
    let l1 = (
        l1_error(segs, &out.theta, &cfg.truth, Edge::Top, x_range),
        l1_error(segs, &out.theta, &cfg.truth, Edge::Bottom, x_range),
    );
    Ok(PodRun {
        row,
        dim: model.dim().unwrap_or(0),
        cost,
        l1,
        iterations: out.iterations,
        basis_updates: model.stats().basis_updates,
    })
}

pub fn pod_table1(cfg: &ExperimentConfig, rows: &[PodRow]) -> Result<Outcome, HarnessError> {
    let mut outcome = Outcome::new("pod-table1");
    let meas = generate_measurements(cfg)?;
    let runs = rows.iter().map(|&r| pod_run(cfg, r, &meas.clean)).collect::<Result<Vec<_>, _>>()?;
    let n_h = inversion_model(cfg)?.n_nodes();

    let mut table = Table::new("pod", &["t_m", "tau", "dim", "cost", "l1_top", "l1_bottom", "iterations", "basis_updates"]);
    for r in &runs {
        table.push(vec![
            fmt(r.row.t_m),
            fmt(r.row.tau),
            r.dim.to_string(),
            fmt(r.cost),
            fmt(r.l1.0),
            fmt(r.l1.1),
            r.iterations.to_string(),
            r.basis_updates.to_string(),
        ]);
    }

    let mut sweep: Vec<&PodRun> = runs.iter().filter(|r| r.row.tau == 0.01).collect();
    sweep.sort_by(|a, b| a.row.t_m.total_cmp(&b.row.t_m));
    let decreasing = sweep.len() >= 2 && sweep.windows(2).all(|w| w[1].cost < w[0].cost);
    let costs = sweep.iter().map(|r| format!("t_m={}: {:.3e}", r.row.t_m, r.cost)).collect::<Vec<_>>().join(", ");
    outcome.check(3, "cost decreases with t_m", decreasing, costs);

    let max_dim = runs.iter().map(|r| r.dim).max().unwrap_or(0);
    outcome.check(3, "reduced dimension", max_dim <= 45, format!("largest dimension {max_dim} of {n_h} (need <= 45)"));

    match sweep.iter().find(|r| r.row.t_m == 5.0) {
        Some(r) => outcome.check(
            3,
            "t_m = 5 inversion",
            r.cost <= 1e-4 && r.l1.0 <= 0.1 && r.l1.1 <= 0.1,
            format!("cost {:.3e}, L1 errors ({:.3e}, {:.3e}) (need <= 1e-4 and <= 0.1)", r.cost, r.l1.0, r.l1.1),
        ),
        None => outcome.check(3, "t_m = 5 inversion", false, "no row with t_m = 5 and tau = 0.01"),
    }
    outcome.tables.push(table);
    Ok(outcome)
}

fn tail_energy(s: &[f64], k: usize) -> f64 {
    s[k..].iter().map(|v| v * v).sum()
}

fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

fn coordinate_basis(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n, k);
    for (c, r) in sample(rng, n, k).into_iter().enumerate() {
        b[(r, c)] = 1.0;
    }
    b
}

fn identity_error(snaps: &SnapshotMatrix, basis: &PodBasis) -> f64 {
    let tail = tail_energy(&basis.singular_values, basis.k);
    let err = basis.projection_error(&snaps.columns);
    (err - tail).abs() / snaps.columns.norm_squared()
}

/// Random snapshot sets with at most eight rows: the POD projection error
/// must equal the discarded singular energy, and no random orthonormal or
/// coordinate basis of the same size may project better.
pub fn pod_optimality(cfg: &ExperimentConfig, instances: usize, trials: usize) -> Result<Outcome, HarnessError> {
    let mut outcome = Outcome::new("pod-optimality");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
    let mut table = Table::new("instances", &["instance", "n_h", "snapshots", "k", "identity_error", "pod_error", "best_competitor"]);
    let (mut worst_identity, mut beaten) = (0.0f64, 0usize);
    for i in 0..instances {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(2..=12);
        let x = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let snaps = SnapshotMatrix { columns: x.clone(), dtau: 1.0, t_m: m as f64 };
        let k = rng.random_range(1..n);
        let basis = PodBasis::truncate(&snaps, Truncation::SingularFloor { tau: 0.0 })?;
        let basis = PodBasis { modes: basis.modes.columns(0, k).into_owned(), singular_values: basis.singular_values, k };
        let id = identity_error(&snaps, &basis);
        worst_identity = worst_identity.max(id);
        let pod_err = basis.projection_error(&x);
        let mut best = f64::INFINITY;
        for t in 0..trials {
            let q = if t % 2 == 0 { random_orthonormal(&mut rng, n, k) } else { coordinate_basis(&mut rng, n, k) };
            let e = PodBasis::from_modes(q).projection_error(&x);
            best = best.min(e);
            beaten += usize::from(e < pod_err - 1e-12 * x.norm_squared());
        }
        table.push(vec![i.to_string(), n.to_string(), m.to_string(), k.to_string(), fmt(id), fmt(pod_err), fmt(best)]);
    }

    let model = inversion_model(cfg)?;
    let segs: Vec<_> = cfg.truth.iter().map(|s| s.segment()).collect();
    let theta: Vec<f64> = cfg.truth.iter().map(|s| s.value).collect();
    let g = SegmentLayout::new(model.mesh(), &segs)?.dirichlet_vector(&theta, cfg.coefficients.c_up);
    let snaps = collect_snapshots(&model, &g, cfg.pod.t_m, cfg.pod.dtau.unwrap_or(model.grid().dt))?;
    let basis = PodBasis::truncate(&snaps, cfg.pod.truncation)?;
    let river = identity_error(&snaps, &basis);
    table.push(vec![
        "river".into(),
        model.n_nodes().to_string(),
        snaps.columns.ncols().to_string(),
        basis.k.to_string(),
        fmt(river),
        fmt(basis.projection_error(&snaps.columns)),
        String::new(),
    ]);
    worst_identity = worst_identity.max(river);

    outcome.check(
        12,
        "projection error identity",
        worst_identity <= 1e-8,
        format!("largest relative deviation {worst_identity:.3e} (need <= 1e-8)"),
    );
    outcome.check(
        12,
        "brute-force bases never win",
        beaten == 0,
        format!("{beaten} of {} competitor bases beat the POD basis", instances * trials),
    );
    outcome.tables.push(table);
    Ok(outcome)
}
