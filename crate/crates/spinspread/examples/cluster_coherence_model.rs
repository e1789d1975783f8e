//! Joint cluster-size/coherence-order master equation.
//!
//! Evolves the distribution over (K, n) — cluster size and coherence order —
//! for an all-to-all system of N spins. In continuous time the second moment
//! of the coherence spectrum grows exponentially before saturating; the
//! stationary spectrum (from the embedded jump chain) is symmetric, supported
//! on even orders, and peaked at n = 0.
//!
//! Run with: cargo run --release --example cluster_coherence_model

use spinspread::kn;

fn main() -> spinspread::Result<()> {
    // Continuous-time growth of the coherence second moment, N = 200.
    let n_total = 200;
    let times: Vec<f64> = (0..=24).map(|i| 0.5 * i as f64).collect();
    let history = kn::evolve_master_ct(n_total, &times)?;
    println!("N = {n_total}, continuous time:");
    println!("{:>6}  {:>12}  {:>12}", "t", "<K>", "sum n^2 g_n");
    for (t, dist) in times.iter().zip(&history) {
        println!(
            "{:6.1}  {:12.2}  {:12.2}",
            t,
            dist.mean_cluster_size(),
            dist.second_moment()
        );
    }

    // Stationary coherence spectrum for a small system. The jump chain
    // alternates parity, so average two consecutive steps.
    let steps = 400;
    let hist = kn::evolve_master(21, steps)?;
    let a = hist[steps - 1].mqc();
    let b = hist[steps].mqc();
    println!("\nstationary g_n, N = 21:");
    println!("{:>4}  {:>10}", "n", "g_n");
    for (i, &n) in a.n_values.iter().enumerate() {
        let g = 0.5 * (a.g[i] + b.g[i]);
        if g > 1e-6 {
            println!("{:4}  {:10.6}", n, g);
        }
    }
    Ok(())
}
