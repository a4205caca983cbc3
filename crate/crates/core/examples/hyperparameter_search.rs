//! The Parzen-estimator sampler on a toy objective over mixed integer,
//! log-scaled and categorical dimensions.

use hetsched::dssp::{Dim, Tpe};

fn objective(x: &[f64]) -> f64 {
    let layers = x[0];
    let lr = x[1];
    let width: f64 = [16.0, 32.0, 64.0][x[2] as usize];
    -((lr.log10() + 3.3).powi(2) + (layers - 2.0).abs() + (width - 32.0).abs() / 32.0)
}

fn main() {
    let dims = vec![
        Dim::Int { lo: 1, hi: 3 },
        Dim::Float {
            lo: 1e-4,
            hi: 1e-2,
            log: true,
        },
        Dim::Cat { n: 3 },
    ];
    let mut tpe = Tpe::new(dims, 42);
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for i in 0..40 {
        let x = tpe.propose();
        let y = objective(&x);
        if y > best.0 {
            best = (y, x.clone());
            println!("trial {i:>2}: new best {y:.4} at {x:?}");
        }
        tpe.observe(x, y);
    }
}
