use blastoseg::clustering::{arch_centroid, piecewise_linear_approx, trace_curves};
use blastoseg::evaluation::{dice, optimal_assignment, region_metrics, RegionMask};
use blastoseg::geometry::{fit_ellipse_direct, point_segment_distance};
use blastoseg::hypothesis::{admissible_region, correlate_fft, correlate_spatial, RegionConstants};
use blastoseg::scalar::{orientation_gap, wrap_pi};
use blastoseg::vesselness::thin_edges;
use blastoseg::{generate_embryo, EdgeMap, Ellipse, Image, PipelineConfig, Point, SynthSpec, Zona};
use proptest::prelude::*;

fn mask_strategy() -> impl Strategy<Value = (usize, usize, Vec<bool>, Vec<bool>)> {
    (2usize..24, 2usize..24).prop_flat_map(|(w, h)| {
        (Just(w), Just(h), proptest::collection::vec(any::<bool>(), w * h), proptest::collection::vec(any::<bool>(), w * h))
    })
}

proptest! {
    #[test]
    fn angles_wrap_into_range(t in -100.0f64..100.0, u in -100.0f64..100.0) {
        let w = wrap_pi(t);
        prop_assert!((0.0..std::f64::consts::PI).contains(&w));
        let g = orientation_gap(t, u);
        prop_assert!((0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&g));
        prop_assert!((g - orientation_gap(u, t)).abs() < 1e-12);
        prop_assert!(orientation_gap(t, t + std::f64::consts::PI) < 1e-9);
    }

    #[test]
    fn ellipse_axes_are_ordered(a in 1.0f64..100.0, b in 1.0f64..100.0, phi in -10.0f64..10.0) {
        let e = Ellipse::new(Point::new(0.0, 0.0), a, b, phi).unwrap();
        prop_assert!(e.a >= e.b);
        prop_assert!((0.0..std::f64::consts::PI).contains(&e.phi));
        for p in e.polygon(24) {
            prop_assert!(e.implicit(p).abs() < 1e-9);
        }
    }

    #[test]
    fn region_metrics_are_ordered((w, h, a, b) in mask_strategy()) {
        let ma = RegionMask::from_fn(w, h, |x, y| a[y * w + x]);
        let mb = RegionMask::from_fn(w, h, |x, y| b[y * w + x]);
        let m = region_metrics(&ma, &mb).unwrap();
        for v in [m.precision, m.sensitivity, m.oq, m.dice] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.oq <= m.precision.min(m.sensitivity) + 1e-12);
        let d = dice(&ma, &mb).unwrap();
        prop_assert!(d + 1e-12 >= m.oq);
        prop_assert_eq!(d, dice(&mb, &ma).unwrap());
        prop_assert!((d - m.dice).abs() < 1e-12);
    }

    #[test]
    fn assignment_is_one_to_one(scores in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 5), 0..7)) {
        let m = optimal_assignment(&scores);
        let mut cols: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
        let mut rows: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
        cols.dedup();
        rows.dedup();
        prop_assert_eq!(cols.len(), m.pairs.len());
        cols.sort();
        cols.dedup();
        prop_assert_eq!(cols.len(), m.pairs.len());
        prop_assert_eq!(rows.len(), m.pairs.len());
        let sum: f64 = m.pairs.iter().map(|&(i, j)| scores[i][j]).sum();
        prop_assert!((sum - m.total).abs() < 1e-12);
        // never worse than the diagonal
        let diag: f64 = (0..scores.len().min(5)).map(|i| scores[i][i]).sum();
        prop_assert!(m.total + 1e-12 >= diag);
    }

    #[test]
    fn polyline_stays_within_epsilon(steps in proptest::collection::vec((-1i32..=1, -1i32..=1), 2..200), eps in 0.5f64..4.0) {
        let mut p = Point::new(0.0, 0.0);
        let mut pts = vec![p];
        for (dx, dy) in steps {
            if dx == 0 && dy == 0 {
                continue;
            }
            p = Point::new(p.x + dx as f64, p.y + dy as f64);
            pts.push(p);
        }
        prop_assume!(pts.len() >= 2);
        let v = piecewise_linear_approx(&pts, eps).unwrap();
        prop_assert_eq!(v[0], 0);
        prop_assert_eq!(*v.last().unwrap(), pts.len() - 1);
        for w in v.windows(2) {
            prop_assert!(w[0] < w[1]);
            for q in &pts[w[0]..=w[1]] {
                prop_assert!(point_segment_distance(*q, pts[w[0]], pts[w[1]]) <= eps + 1e-9);
            }
        }
    }

    #[test]
    fn arch_centroid_of_exact_arc(cx in -50.0f64..50.0, cy in -50.0f64..50.0, r in 5.0f64..100.0, t0 in 0.0f64..6.3, span in 0.8f64..5.0, n in 3usize..12) {
        let verts: Vec<Point> = (0..n)
            .map(|k| {
                let t = t0 + span * k as f64 / (n - 1) as f64;
                Point::new(cx + r * t.cos(), cy + r * t.sin())
            })
            .collect();
        let (c, residual) = arch_centroid(&verts).unwrap();
        prop_assert!(c.distance(Point::new(cx, cy)) < 1e-6 * r.max(1.0));
        prop_assert!(residual < 1e-6);
    }

    #[test]
    fn direct_fit_recovers_ellipse(a in 10.0f64..80.0, ratio in 0.3f64..1.0, phi in 0.0f64..3.1, cx in 0.0f64..200.0) {
        let e = Ellipse::new(Point::new(cx, 50.0), a, a * ratio, phi).unwrap();
        let fit = fit_ellipse_direct(&e.polygon(40)).unwrap();
        prop_assert!(fit.center.distance(e.center) < 1e-6 * a);
        prop_assert!((fit.a - e.a).abs() < 1e-6 * a && (fit.b - e.b).abs() < 1e-6 * a);
        if e.a - e.b > 1e-3 {
            prop_assert!(orientation_gap(fit.phi, e.phi) < 1e-5);
        }
    }

    #[test]
    fn ellipse_mask_area_close_to_analytic(a in 5.0f64..40.0, ratio in 0.4f64..1.0, phi in 0.0f64..3.1) {
        let e = Ellipse::new(Point::new(50.3, 49.7), a, a * ratio, phi).unwrap();
        let count = RegionMask::from_ellipse(&e, 100, 100).count() as f64;
        prop_assert!((count - e.area()).abs() <= e.perimeter());
    }

    #[test]
    fn fft_correlation_equals_spatial(bits in proptest::collection::vec(any::<bool>(), 24 * 20), tpl in proptest::collection::vec(any::<bool>(), 35), ox in 0usize..7, oy in 0usize..5) {
        let img = Image::from_fn(24, 20, |x, y| if bits[y * 24 + x] { 1.0 } else { 0.0 });
        let t = Image::from_fn(7, 5, |x, y| if tpl[y * 7 + x] { 1.0 } else { 0.0 });
        let fast = correlate_fft(&img, &t, (ox, oy));
        let slow = correlate_spatial(&img, &t, (ox, oy));
        for (f, s) in fast.data().iter().zip(slow.data()) {
            prop_assert!((f - s).abs() < 1e-9);
        }
    }

    #[test]
    fn thinning_and_tracing_keep_support(bits in proptest::collection::vec(any::<bool>(), 30 * 30)) {
        let edges = EdgeMap::from_fn(30, 30, |x, y| bits[y * 30 + x]);
        let thin = thin_edges(&edges);
        for (x, y) in thin.pixels() {
            prop_assert!(edges.get(x, y));
        }
        let chains = trace_curves(&thin);
        let mut seen = std::collections::HashSet::new();
        for c in &chains {
            for &(x, y) in &c.points {
                prop_assert!(thin.get(x, y));
                seen.insert((x, y));
            }
        }
        prop_assert_eq!(seen.len(), thin.pixels().count());
    }

    #[test]
    fn config_text_round_trips(eps in 0.5f64..5.0, low in 0.01f64..0.1, span in 0.01f64..0.5, steps in 1usize..20, margin in proptest::option::of(0.0f64..50.0), gate in 0.01f64..1.5) {
        let mut cfg = PipelineConfig::default();
        cfg.clustering.epsilon = eps;
        cfg.edges.low = low;
        cfg.edges.high = low + span;
        cfg.edges.border_margin = margin;
        cfg.hypothesis.axis_steps = steps;
        cfg.detector.angle_gate = gate;
        let back = PipelineConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_cells_lie_in_admissible_band(n in 1usize..=8, seed in 0u64..10_000) {
        let spec = SynthSpec { n_cells: n, seed, ..SynthSpec::default() };
        let e = generate_embryo::<f32>(&spec).unwrap();
        let region = admissible_region(&Zona::from_ellipse(e.zp), n, &RegionConstants::default()).unwrap();
        prop_assert_eq!(e.cells.len(), n);
        prop_assert_eq!(e.truth.blastomeres.len(), n);
        for c in &e.cells {
            prop_assert!(region.admits(c.a, c.b));
        }
        prop_assert!(e.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
