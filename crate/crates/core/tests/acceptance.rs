//! Acceptance criteria. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

use std::time::Instant;

use blastoseg::clustering::{arch_centroid, concavity_coefficient, piecewise_linear_approx};
use blastoseg::evaluation::{best_fit_ellipse, dice, optimal_assignment, region_metrics, BatchReport, EvalOptions, RegionMask};
use blastoseg::geometry::point_segment_distance;
use blastoseg::hypothesis::{correlate_fft, correlate_spatial};
use blastoseg::{detect_blastomeres, embryo_report, generate_embryo, DetectionReport, Ellipse, Image, PipelineConfig, Point, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const FFT_MAX_REL_ERR: f64 = 1e-6;
const FFT_MAX_SECONDS: f64 = 5.0;
const EPSILON: f64 = 2.0;
const CENTROID_TOL: f64 = 2.0;
const IDENTITY_TOL: f64 = 1e-12;
const FIDELITY_MIN_DICE: f64 = 0.95;
const HIT_OQ: f64 = 0.7;
const HIT_RATE_1_2: f64 = 0.90;
const HIT_RATE_4: f64 = 0.70;
const HIT_RATE_8: f64 = 0.55;
const MIN_PRECISION: f64 = 0.85;
const PERF_MAX_SECONDS: f64 = 60.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fft_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let density = rng.gen_range(0.05..0.5);
        let img = Image::from_fn(64, 64, |_, _| if rng.gen_bool(density) { 1.0 } else { 0.0 });
        let (tw, th) = (rng.gen_range(3..=21), rng.gen_range(3..=21));
        let tpl = Image::from_fn(tw, th, |_, _| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
        let origin = (rng.gen_range(0..tw), rng.gen_range(0..th));
        let fast = correlate_fft(&img, &tpl, origin);
        let slow = correlate_spatial(&img, &tpl, origin);
        let scale = slow.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let err = fast.data().iter().zip(slow.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < FFT_MAX_REL_ERR && secs < FFT_MAX_SECONDS,
        format!("max relative error {worst:.2e} (< {FFT_MAX_REL_ERR:e}), {secs:.2} s (< {FFT_MAX_SECONDS} s)"),
    )
}

/// Pixel chain of a rasterized circular arc.
fn raster_arc(c: Point, r: f64, t0: f64, span: f64) -> Vec<Point> {
    let steps = (r * span * 4.0).ceil() as usize;
    let mut out: Vec<Point> = Vec::new();
    for k in 0..=steps {
        let t = t0 + span * k as f64 / steps as f64;
        let p = Point::new((c.x + r * t.cos()).round(), (c.y + r * t.sin()).round());
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}

fn geometry_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut max_dev = 0.0f64;
    for _ in 0..200 {
        let c = Point::new(rng.gen_range(100.0..200.0), rng.gen_range(100.0..200.0));
        let arc = raster_arc(c, rng.gen_range(10.0..90.0), rng.gen_range(0.0..6.3), rng.gen_range(0.5..5.5));
        let v = piecewise_linear_approx(&arc, EPSILON).expect("arc approximates");
        for w in v.windows(2) {
            for p in &arc[w[0]..=w[1]] {
                max_dev = max_dev.max(point_segment_distance(*p, arc[w[0]], arc[w[1]]));
            }
        }
    }

    let noise = Normal::new(0.0, 0.5).unwrap();
    let noisy_centre_err = |seed: u64, whole_circle: bool| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Point::new(rng.gen_range(50.0..250.0), rng.gen_range(50.0..250.0));
        let r = rng.gen_range(20.0..80.0);
        let t0 = rng.gen_range(0.0..6.3);
        let n = rng.gen_range(6..=12);
        let span = if whole_circle { std::f64::consts::TAU * (n - 1) as f64 / n as f64 } else { rng.gen_range(1.5..4.5) };
        let verts: Vec<Point> = (0..n)
            .map(|k| {
                let t = t0 + span * k as f64 / (n - 1) as f64;
                Point::new(c.x + r * t.cos() + noise.sample(&mut rng), c.y + r * t.sin() + noise.sample(&mut rng))
            })
            .collect();
        arch_centroid(&verts).expect("centroid defined").0.distance(c)
    };
    let max_centre_err = (0..100u64).map(|s| noisy_centre_err(s, true)).fold(0.0f64, f64::max);
    // partial arcs, reported only
    let max_arc_err = (0..100u64).map(|s| noisy_centre_err(s, false)).fold(0.0f64, f64::max);

    let mut sign_mismatch = 0;
    for _ in 0..1000 {
        let mut a: f64 = rng.gen_range(-2.0..2.0);
        if a.abs() < 1e-3 {
            a = 1e-3_f64.copysign(a);
        }
        let (b, c) = (rng.gen_range(-5.0..5.0), rng.gen_range(-50.0..50.0));
        let mut xs = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
        xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
        if xs[1] - xs[0] < 0.5 || xs[2] - xs[1] < 0.5 {
            xs = [xs[0], xs[0] + 1.0, xs[0] + 2.0];
        }
        let pt = |x: f64| Point::new(x, a * x * x + b * x + c);
        let k = concavity_coefficient(pt(xs[0]), pt(xs[1]), pt(xs[2])).expect("distinct abscissae");
        if k.signum() != (2.0 * a).signum() {
            sign_mismatch += 1;
        }
    }
    outcome(
        max_dev <= EPSILON && max_centre_err <= CENTROID_TOL && sign_mismatch == 0,
        format!(
            "epsilon bound max {max_dev:.3} px (<= {EPSILON}), centroid error max {max_centre_err:.3} px (<= {CENTROID_TOL}; partial arcs {max_arc_err:.3} px), concavity sign mismatches {sign_mismatch}/1000"
        ),
    )
}

/// Best total over all one-to-one partial assignments, by brute force.
fn exhaustive(scores: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
    if row == scores.len() {
        return 0.0;
    }
    let mut best = exhaustive(scores, row + 1, used);
    for j in 0..used.len() {
        if !used[j] {
            used[j] = true;
            best = best.max(scores[row][j] + exhaustive(scores, row + 1, used));
            used[j] = false;
        }
    }
    best
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut oq_err, mut sym_err, mut order_viol) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..1000 {
        let (w, h) = (rng.gen_range(4..40), rng.gen_range(4..40));
        let (da, db) = (rng.gen_range(0.05..0.9), rng.gen_range(0.05..0.9));
        let bits_a: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(da)).collect();
        let bits_b: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(db)).collect();
        let a = RegionMask::from_fn(w, h, |x, y| bits_a[y * w + x]);
        let b = RegionMask::from_fn(w, h, |x, y| bits_b[y * w + x]);
        let m = region_metrics(&a, &b).unwrap();
        if m.precision > 0.0 && m.sensitivity > 0.0 {
            oq_err = oq_err.max((m.oq - 1.0 / (1.0 / m.precision + 1.0 / m.sensitivity - 1.0)).abs());
        }
        let (dab, dba) = (dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        sym_err = sym_err.max((dab - dba).abs());
        if dab < m.oq - IDENTITY_TOL {
            order_viol += 1;
        }
    }
    let mut match_err = 0.0f64;
    for _ in 0..200 {
        let (r, c) = (rng.gen_range(0..=8), rng.gen_range(1..=8));
        let scores: Vec<Vec<f64>> =
            (0..r).map(|_| (0..c).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0) }).collect()).collect();
        let got = optimal_assignment(&scores).total;
        let want = exhaustive(&scores, 0, &mut vec![false; c]);
        match_err = match_err.max((got - want).abs());
    }
    outcome(
        oq_err <= IDENTITY_TOL && sym_err <= IDENTITY_TOL && order_viol == 0 && match_err <= IDENTITY_TOL,
        format!("oq identity {oq_err:.1e}, dice symmetry {sym_err:.1e}, dice<oq {order_viol}, matching vs exhaustive {match_err:.1e} (tol {IDENTITY_TOL:e})"),
    )
}

fn fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut total = 0.0;
    for _ in 0..100 {
        let e = Ellipse::new(
            Point::new(rng.gen_range(120.0..136.0), rng.gen_range(120.0..136.0)),
            rng.gen_range(30.0..90.0),
            rng.gen_range(25.0..60.0),
            rng.gen_range(0.0..std::f64::consts::PI),
        )
        .unwrap();
        // smooth radial perturbation bounded by 5 %
        let harmonics: Vec<(f64, f64, f64)> =
            (0..3).map(|_| (rng.gen_range(2..8) as f64, rng.gen_range(0.0..6.3), rng.gen_range(-1.0..1.0))).collect();
        let norm: f64 = harmonics.iter().map(|h| h.2.abs()).sum::<f64>().max(1e-9);
        let poly: Vec<Point> = (0..360)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 360.0;
                let wobble: f64 = harmonics.iter().map(|&(f, ph, amp)| amp * (f * t + ph).sin()).sum::<f64>() / norm;
                let p = e.point_at(t);
                e.center + (p - e.center) * (1.0 + 0.05 * wobble)
            })
            .collect();
        let fit = best_fit_ellipse(&poly).unwrap();
        let truth = RegionMask::from_polygon(&poly, 256, 256);
        total += dice(&RegionMask::from_ellipse(&fit, 256, 256), &truth).unwrap();
    }
    let mean = total / 100.0;
    outcome(mean >= FIDELITY_MIN_DICE, format!("mean dice {mean:.4} (>= {FIDELITY_MIN_DICE})"))
}

/// Runs the fixed 160-embryo corpus; returns per-image reports and the
/// concatenated detection files.
fn run_benchmark() -> (BatchReport, String) {
    let cfg = PipelineConfig::default();
    let mut reports = Vec::new();
    let mut json = String::new();
    for n in 1..=8usize {
        for i in 0..20u64 {
            let spec = SynthSpec { n_cells: n, overlap_max: 0.2, fragmentation: 0.1, seed: 1000 * n as u64 + i, ..SynthSpec::default() };
            let embryo = generate_embryo::<f64>(&spec).expect("benchmark embryo generates");
            let result = detect_blastomeres(&embryo.image, n, &cfg).expect("pipeline runs");
            json.push_str(&DetectionReport::new(&embryo.truth.image, &result).to_json());
            let ellipses: Vec<Ellipse> = result.detections.iter().map(|d| d.ellipse).collect();
            let opts = EvalOptions { oq_threshold: HIT_OQ, union_dice: false };
            reports.push(embryo_report(&ellipses, &embryo.truth, embryo.image.dims(), &opts).unwrap());
        }
    }
    (BatchReport::new(reports), json)
}

fn hit_rate(b: &BatchReport, counts: &[usize]) -> f64 {
    let (hit, all) = b
        .images
        .iter()
        .filter(|r| counts.contains(&r.n_cells))
        .fold((0, 0), |(h, a), r| (h + r.detected, a + r.n_cells));
    hit as f64 / all as f64
}

fn benchmark(b: &BatchReport) -> Outcome {
    let (r12, r4, r8) = (hit_rate(b, &[1, 2]), hit_rate(b, &[4]), hit_rate(b, &[8]));
    let per_n: Vec<String> = (1..=8).map(|n| format!("{n}:{:.2}", hit_rate(b, &[n]))).collect();
    outcome(
        r12 >= HIT_RATE_1_2 && r4 >= HIT_RATE_4 && r8 >= HIT_RATE_8 && b.mean_precision >= MIN_PRECISION,
        format!(
            "hit rate n=1-2 {r12:.3} (>= {HIT_RATE_1_2}), n=4 {r4:.3} (>= {HIT_RATE_4}), n=8 {r8:.3} (>= {HIT_RATE_8}), precision {:.3} (>= {MIN_PRECISION}); sensitivity {:.3}, OQ {:.3}; per n [{}]",
            b.mean_precision,
            b.mean_sensitivity,
            b.mean_oq,
            per_n.join(" ")
        ),
    )
}

fn performance() -> Outcome {
    let spec = SynthSpec { n_cells: 4, zp_radius: 200.0, image_size: (720, 479), seed: 77, ..SynthSpec::default() };
    let embryo = generate_embryo::<f64>(&spec).expect("large embryo generates");
    let start = Instant::now();
    let result = detect_blastomeres(&embryo.image, 4, &PipelineConfig::default());
    let secs = start.elapsed().as_secs_f64();
    let found = result.as_ref().map_or(0, |r| r.detections.len());
    outcome(result.is_ok() && secs < PERF_MAX_SECONDS, format!("720x479, n=4: {secs:.2} s (< {PERF_MAX_SECONDS} s), {found} cells found"))
}

fn report(failures: &mut usize, name: &str, o: Outcome) {
    println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    if !o.pass {
        *failures += 1;
    }
}

fn main() {
    let mut failures = 0;
    report(&mut failures, "fft-vs-spatial correlation", fft_equivalence());
    report(&mut failures, "geometry suite", geometry_suite());
    report(&mut failures, "metric identities and matching", metric_identities());
    report(&mut failures, "ellipse fidelity", fidelity());
    let start = Instant::now();
    let (first, json_a) = run_benchmark();
    let bench_secs = start.elapsed().as_secs_f64();
    let mut b = benchmark(&first);
    b.detail.push_str(&format!("; {bench_secs:.0} s"));
    report(&mut failures, "synthetic benchmark", b);
    let (_, json_b) = run_benchmark();
    report(
        &mut failures,
        "determinism",
        outcome(json_a == json_b, format!("{} bytes of detection JSON, identical: {}", json_a.len(), json_a == json_b)),
    );
    report(&mut failures, "performance", performance());
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
