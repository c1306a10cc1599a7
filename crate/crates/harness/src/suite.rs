use srcinv_core::control::Source;
use srcinv_core::mesh::Edge;

pub const N_TESTS: usize = 9;

fn top(a: f64, b: f64, value: f64) -> Source {
    Source { edge: Edge::Top, a, b, value }
}

fn bottom(a: f64, b: f64, value: f64) -> Source {
    Source { edge: Edge::Bottom, a, b, value }
}

/// True sources of the nine localization tests. Tests 1 and 2 mirror each
/// other across the channel; the rest grow from one upstream source to four
/// sources spread over both edges and both sections.
pub fn test_case(k: usize) -> Option<Vec<Source>> {
    let t = match k {
        1 => vec![top(4.0, 4.5, 100.0)],
        2 => vec![bottom(4.0, 4.5, 100.0)],
        3 => vec![top(1.0, 1.5, 100.0)],
        4 => vec![top(0.5, 1.5, 60.0)],
        5 => vec![top(2.5, 3.5, 80.0)],
        6 => vec![top(1.0, 1.5, 100.0), top(6.0, 6.5, 50.0)],
        7 => vec![top(4.5, 5.0, 80.0), top(7.0, 7.5, 40.0), bottom(5.0, 5.5, 60.0), bottom(6.5, 7.0, 50.0)],
        8 => vec![top(3.0, 4.0, 70.0), top(5.0, 5.5, 90.0), bottom(1.0, 2.0, 50.0), bottom(6.5, 7.0, 100.0)],
        9 => vec![top(0.5, 1.0, 100.0), top(3.0, 3.5, 60.0), top(6.0, 7.0, 80.0)],
        _ => return None,
    };
    Some(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use srcinv_core::control::{optimal_subdivision, Subdivision};

    #[test]
    fn every_test_is_reachable_by_bisection() {
        let coarse = Subdivision::uniform((0.0, 8.0), 16, 2).unwrap();
        for k in 1..=N_TESTS {
            let truth = test_case(k).unwrap();
            let opt = optimal_subdivision(&coarse, &truth).unwrap();
            assert!(opt.refines(&coarse));
        }
        assert!(test_case(0).is_none() && test_case(10).is_none());
    }
}
