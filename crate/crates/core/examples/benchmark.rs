//! Detection quality on generated embryos.
//!
//! `cargo run --release -p blastoseg --example benchmark -- [per_n] [n_min] [n_max]`

use std::time::Instant;

use blastoseg::{detect_blastomeres, embryo_report, generate_embryo, BatchReport, EvalOptions, PipelineConfig, SynthSpec};

fn main() -> blastoseg::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let per_n = args.first().copied().unwrap_or(20);
    let n_min = args.get(1).copied().unwrap_or(1);
    let n_max = args.get(2).copied().unwrap_or(8);
    let cfg = PipelineConfig::default();
    let mut reports = Vec::new();
    for n in n_min..=n_max {
        for i in 0..per_n {
            let spec = SynthSpec { n_cells: n, seed: 1000 * n as u64 + i as u64, ..SynthSpec::default() };
            let embryo = generate_embryo::<f64>(&spec)?;
            let t = Instant::now();
            let res = detect_blastomeres(&embryo.image, n, &cfg)?;
            let ellipses: Vec<_> = res.detections.iter().map(|d| d.ellipse).collect();
            let r = embryo_report(&ellipses, &embryo.truth, embryo.image.dims(), &EvalOptions::default())?;
            println!(
                "n={n} seed={} found={} detected={} P={:.3} S={:.3} OQ={:.3} {:.2}s",
                spec.seed,
                ellipses.len(),
                r.detected,
                r.mean_precision,
                r.mean_sensitivity,
                r.mean_oq,
                t.elapsed().as_secs_f64()
            );
            reports.push(r);
        }
    }
    print!("{}", BatchReport::new(reports).to_table());
    Ok(())
}
