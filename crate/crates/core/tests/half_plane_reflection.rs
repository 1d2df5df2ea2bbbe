//! The mirror scheme near a flat boundary against the running-minimum
//! reflection driven by the same increments.

use hotspots::geometry::{Point2, PolygonalDomain};
use hotspots::reflected_motion::{skorokhod_reflect, step_rbm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn wide_triangle() -> PolygonalDomain {
    PolygonalDomain::new(vec![Point2::new(-60.0, 0.0), Point2::new(60.0, 0.0), Point2::new(0.0, 60.0)]).unwrap()
}

/// Mean over paths of the sup-distance between the two reflected heights.
fn mean_sup_gap(dt: f64, paths: u64) -> f64 {
    let domain = wide_triangle();
    let steps = (1.0 / dt).round() as usize;
    let mut total = 0.0;
    for seed in 0..paths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = Point2::new(0.0, 0.05);
        let mut raw = vec![start.x2];
        let mut pos = start;
        let mut gap = 0.0f64;
        let mut mirrored = vec![start.x2];
        for _ in 0..steps {
            let inc = Point2::new(
                dt.sqrt() * rng.sample::<f64, _>(StandardNormal),
                dt.sqrt() * rng.sample::<f64, _>(StandardNormal),
            );
            let x1_before = pos.x1;
            pos = step_rbm(&domain, pos, inc).unwrap().0;
            // reflection in the flat bottom leaves the tangential coordinate untouched
            assert_eq!(pos.x1, x1_before + inc.x1);
            raw.push(raw.last().unwrap() + inc.x2);
            mirrored.push(pos.x2);
        }
        let reflected = skorokhod_reflect(&raw).unwrap();
        for (m, r) in mirrored.iter().zip(&reflected) {
            gap = gap.max((m - r).abs());
        }
        total += gap;
    }
    total / paths as f64
}

#[test]
fn mirror_converges_to_running_minimum() {
    let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4].iter().map(|&dt| mean_sup_gap(dt, 20)).collect();
    assert!(gaps[1] < gaps[0] && gaps[2] < gaps[1], "{gaps:?}");
    assert!(gaps[2] < 0.05, "{gaps:?}");
}
