use edgelab::evaluation::{evaluate_dataset, match_boundaries, pr_at_thresholds, EvalConfig};
use edgelab::imaging::Raster;
use edgelab::rng;
use rand::Rng as _;

fn sparse(r: &mut rng::Rng, n: usize, density: f64) -> Raster<f64> {
    Raster::from_fn(n, n, |_, _| if r.random::<f64>() < density { 1.0 } else { 0.0 })
}

/// Maximum-cardinality matching by augmenting paths (optimal, unlike greedy).
fn optimal_matches(pred: &Raster<f64>, gt: &Raster<f64>, radius: f64) -> usize {
    let w = pred.width();
    let on = |m: &Raster<f64>| -> Vec<(usize, usize)> {
        (0..m.len()).filter(|&i| m.pixels()[i] >= 0.5).map(|i| (i / w, i % w)).collect()
    };
    let (ps, gs) = (on(pred), on(gt));
    let adj: Vec<Vec<usize>> = ps
        .iter()
        .map(|&(py, px)| {
            (0..gs.len())
                .filter(|&j| {
                    let (gy, gx) = gs[j];
                    let d2 = (py as f64 - gy as f64).powi(2) + (px as f64 - gx as f64).powi(2);
                    d2 <= radius * radius
                })
                .collect()
        })
        .collect();
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                if owner[v].is_none() || augment(owner[v].unwrap(), adj, seen, owner) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; gs.len()];
    (0..ps.len()).filter(|&u| augment(u, &adj, &mut vec![false; gs.len()], &mut owner)).count()
}

#[test]
fn matching_is_optimal_on_random_sparse_maps() {
    for seed in 0..200 {
        let mut r = rng::stream(seed, 40);
        let pred = sparse(&mut r, 12, 0.15);
        let gt = sparse(&mut r, 12, 0.15);
        for max_dist in [0.0075, 0.06, 0.12, 0.2] {
            let (tp, fp, fn_) = match_boundaries(&pred, &gt, max_dist).unwrap();
            assert_eq!(tp, optimal_matches(&pred, &gt, max_dist * 288f64.sqrt()), "seed {seed} dist {max_dist}");
            assert_eq!(tp + fp, pred.count_nonzero());
            assert_eq!(tp + fn_, gt.count_nonzero());
        }
    }
}

/// A few random 1-px strokes.
fn strokes(r: &mut rng::Rng, n: usize, count: usize) -> Raster<f64> {
    let mut m = Raster::zeros(n, n);
    for _ in 0..count {
        let (mut y, mut x) = (r.random_range(0..n) as isize, r.random_range(0..n) as isize);
        let (dy, dx) = [(0, 1), (1, 0), (1, 1), (1, -1)][r.random_range(0..4)];
        for _ in 0..r.random_range(3..n) {
            if y < 0 || x < 0 || y >= n as isize || x >= n as isize {
                break;
            }
            m.set(y as usize, x as usize, 1.0);
            y += dy;
            x += dx;
        }
    }
    m
}

#[test]
fn matching_is_optimal_on_thin_strokes() {
    // the regime the evaluator is used in: thinned strokes, radius of a pixel or two
    for seed in 0..300 {
        let mut r = rng::stream(seed, 44);
        let gt = strokes(&mut r, 12, 2);
        let pred = edgelab::imaging::thin(&strokes(&mut r, 12, 2));
        for max_dist in [0.06, 0.09, 0.2] {
            let (tp, _, _) = match_boundaries(&pred, &gt, max_dist).unwrap();
            let best = optimal_matches(&pred, &gt, max_dist * 288f64.sqrt());
            assert_eq!(tp, best, "seed {seed} dist {max_dist}");
        }
    }
}

#[test]
fn matching_a_map_with_itself_is_perfect() {
    for seed in 0..20 {
        let mut r = rng::stream(seed, 41);
        let m = sparse(&mut r, 16, 0.3);
        let n = m.count_nonzero();
        assert_eq!(match_boundaries(&m, &m, 0.0075).unwrap(), (n, 0, 0));
    }
}

#[test]
fn detections_shrink_with_the_threshold() {
    // support on one colour of a checkerboard: no two pixels are 4-adjacent, so
    // every binarisation is already thin and thresholds nest exactly
    let mut r = rng::stream(3, 42);
    let pred = Raster::<f64>::from_fn(24, 24, |y, x| if (x + y) % 2 == 0 { r.random::<f64>() } else { 0.0 });
    let gt = sparse(&mut r, 24, 0.1);
    let ts: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();
    let pts = pr_at_thresholds(&pred, &gt, &ts, 0.02).unwrap();
    for pair in pts.windows(2) {
        assert!(pair[1].tp + pair[1].fp <= pair[0].tp + pair[0].fp);
    }
}

#[test]
fn three_image_hand_audit() {
    let mut a_pred = Raster::<f64>::zeros(4, 4);
    a_pred.set(0, 0, 0.9);
    a_pred.set(1, 1, 0.6);
    a_pred.set(2, 2, 0.2);
    a_pred.set(3, 0, 0.4);
    let a_gt = Raster::from_fn(4, 4, |y, x| if y == x && y < 3 { 1.0 } else { 0.0 });
    let b_pred = Raster::zeros(4, 4);
    let mut b_gt = Raster::zeros(4, 4);
    b_gt.set(0, 3, 1.0);
    let mut c_pred = Raster::zeros(4, 4);
    c_pred.set(3, 3, 0.5);
    let c_gt = Raster::zeros(4, 4);

    let cfg = EvalConfig {
        n_thresholds: 5,
        tolerance: 0.0075,
    };
    let report = evaluate_dataset(&[a_pred, b_pred, c_pred], &[a_gt, b_gt, c_gt], &cfg).unwrap();
    let counts: Vec<_> = report.per_threshold.iter().map(|p| (p.tp, p.fp, p.fn_)).collect();
    assert_eq!(counts, vec![(3, 2, 1), (2, 2, 2), (2, 1, 2), (1, 0, 3), (1, 0, 3)]);
    assert!((report.ods - 2.0 / 3.0).abs() < 1e-12);
    assert!((report.ois - 13.0 / 21.0).abs() < 1e-12);
    assert!((report.ap - 73.0 / 120.0).abs() < 1e-12);
    // OIS averages per-image F while ODS pools counts; images without ground
    // truth or without detections can push the average below the pooled optimum
    assert!(report.ois < report.ods);
}

#[test]
fn report_is_invariant_to_image_order() {
    let mut r = rng::stream(7, 43);
    let preds: Vec<_> = (0..5).map(|_| Raster::<f64>::from_fn(16, 16, |_, _| r.random::<f64>().powi(3))).collect();
    let gts: Vec<_> = (0..5).map(|_| sparse(&mut r, 16, 0.1)).collect();
    let cfg = EvalConfig {
        n_thresholds: 9,
        tolerance: 0.05,
    };
    let a = evaluate_dataset(&preds, &gts, &cfg).unwrap();
    let order = [3, 0, 4, 1, 2];
    let p2: Vec<_> = order.iter().map(|&i| preds[i].clone()).collect();
    let g2: Vec<_> = order.iter().map(|&i| gts[i].clone()).collect();
    let b = evaluate_dataset(&p2, &g2, &cfg).unwrap();
    assert_eq!((a.ods, a.ois, a.ap), (b.ods, b.ois, b.ap));
    assert!(a.ois >= a.ods);
    for m in [a.ods, a.ois, a.ap] {
        assert!((0.0..=1.0).contains(&m));
    }
}

#[test]
fn report_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let gt = Raster::<f64>::from_fn(8, 8, |y, x| if y == x { 1.0 } else { 0.0 });
    let report = evaluate_dataset(&[gt.clone()], &[gt], &EvalConfig::default()).unwrap();
    report.write_report(dir.path().join("report.txt")).unwrap();
    report.write_pr_curve(dir.path().join("pr_curve.tsv")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(text.contains("ods = 1.000000") && text.contains("ap = 1.000000"));
    let tsv = std::fs::read_to_string(dir.path().join("pr_curve.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 100);
    assert_eq!(tsv.lines().nth(1).unwrap().split('\t').count(), 4);
}
