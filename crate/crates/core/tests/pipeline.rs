use nalgebra::DMatrix;
use srcinv_core::algorithms::{run_algorithm, Algorithm, AlgorithmConfig, Setup};
use srcinv_core::control::{SegmentLayout, Source, Subdivision};
use srcinv_core::fem::PhysicalCoefficients;
use srcinv_core::forward::TimeGrid;
use srcinv_core::mesh::{Edge, StructuredMesh};
use srcinv_core::model::{ForwardModel, FullModel};

fn model() -> FullModel {
    let mesh = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 33, 9).unwrap();
    FullModel::new(mesh, &PhysicalCoefficients::river(), TimeGrid::new(0.0, 0.6, 0.01).unwrap()).unwrap()
}

fn outflow(m: &FullModel, truth: &[Source]) -> DMatrix<f64> {
    let segs: Vec<_> = truth.iter().map(|s| s.segment()).collect();
    let theta: Vec<f64> = truth.iter().map(|s| s.value).collect();
    let g = SegmentLayout::new(m.mesh(), &segs).unwrap().dirichlet_vector(&theta, 0.1);
    m.predict(&g, m.grid().n - 1).unwrap()
}

#[test]
fn every_algorithm_is_deterministic_and_stays_on_the_finest_grid() {
    let truth = [
        Source { edge: Edge::Top, a: 5.0, b: 6.0, value: 80.0 },
        Source { edge: Edge::Bottom, a: 2.0, b: 3.0, value: 40.0 },
    ];
    let m = model();
    let data = outflow(&m, &truth);
    let coarse = Subdivision::uniform((0.0, 8.0), 8, 2).unwrap();
    let finest = Subdivision::finest((0.0, 8.0), 8).unwrap();
    let setup = Setup { coarse: &coarse, data: &data, c_up: 0.1, truth: Some(&truth) };
    let cfg = AlgorithmConfig::default();
    for alg in Algorithm::ALL {
        let Ok(first) = run_algorithm(alg, &mut model(), &setup, &cfg) else {
            // window selection may legitimately fail on this short horizon
            assert!(matches!(alg, Algorithm::FinestTime | Algorithm::AdaptiveTime), "{alg:?}");
            continue;
        };
        let again = run_algorithm(alg, &mut model(), &setup, &cfg).unwrap();
        assert_eq!(format!("{first:?}"), format!("{again:?}"), "{alg:?}");
        assert!(first.theta.iter().all(|&v| v >= 0.0), "{alg:?}");
        assert!(first.subdivision.refines(&coarse) && finest.refines(&first.subdivision), "{alg:?}");
        assert!(first.cost < 1e-2 * data.norm_squared() / data.ncols() as f64, "{alg:?} cost {}", first.cost);
    }
}
