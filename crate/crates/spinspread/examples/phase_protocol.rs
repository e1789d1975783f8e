//! Interferometric measurement of the commutator norm.
//!
//! Evolve forward, rotate every spin about X by a small angle phi, evolve
//! backward, and measure the total Z overlap with the initial state. The
//! second derivative of this signal at phi = 0 picks out the squared
//! commutator [X_total, Z_total(-t)], the same object that drives the global
//! out-of-time-order correlator. This example compares the finite-difference
//! estimate against the closed-form value on a small chain.
//!
//! Run with: cargo run --release --example phase_protocol

use spinspread::oracle::{
    chain_couplings, phase_protocol_pure, phase_protocol_reference, Evolution, Hamiltonian,
    StateVector,
};

fn main() -> spinspread::Result<()> {
    let l = 8;
    let h = Hamiltonian::generic_random(&chain_couplings(l, 3.0, 1.0), 5)?;
    let ev = Evolution::dense(&h)?;

    println!("{:>5}  {:>14}  {:>14}  {:>10}", "t", "measured F''", "closed form", "residual");
    for t in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let est = phase_protocol_pure(&ev, t, 0.02)?;
        let exact = phase_protocol_reference(&ev, &StateVector::all_up(l), t)?;
        println!(
            "{t:5.1}  {:14.6}  {exact:14.6}  {:10.2e}",
            est.second_derivative,
            (est.second_derivative - exact).abs()
        );
    }
    Ok(())
}
