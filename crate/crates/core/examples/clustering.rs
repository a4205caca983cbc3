//! Groups policies by their validation gap vectors and picks the member
//! nearest each centroid.

use hetsched::dssp::kmeans;

fn main() {
    let gaps = vec![
        vec![0.00, 0.10, 0.20, 0.05],
        vec![0.01, 0.12, 0.18, 0.06],
        vec![0.20, 0.00, 0.02, 0.15],
        vec![0.22, 0.01, 0.00, 0.14],
        vec![0.10, 0.10, 0.10, 0.00],
    ];
    for k in 1..=gaps.len() {
        let c = kmeans(&gaps, k, 50, 0);
        println!(
            "k={k}: assignment {:?}, representatives {:?}, inertia {:.5}",
            c.assignment, c.representatives, c.inertia
        );
    }
}
