//! Cluster growth on a dilute simple-cubic lattice.
//!
//! Molecules occupy a fraction p of lattice sites; spreading rates fall off
//! as 1/r^6 of the actual inter-molecule distance, so the growth rate is a
//! steep function of p. Prints the mean cluster size after ten units of
//! evolution for a range of filling fractions.
//!
//! Run with: cargo run --release --example dilute_lattice

use spinspread::lattice::{
    build_lattice, dilute_sites, Boundary, CouplingKernel, LatticeKind, LatticeSpec,
};
use spinspread::seeding::derive_seed;
use spinspread::spread::{run_ensemble, Integrator, SpreadNetwork, SpreadParams};

fn main() -> spinspread::Result<()> {
    let spec = LatticeSpec {
        kind: LatticeKind::SimpleCubic,
        linear_size: 40,
        spins_per_site: 1,
        lattice_constant_nm: 1.0,
        occupancy: 1.0,
        boundary: Boundary::Open,
    };
    let full = build_lattice(&spec)?;
    let kernel = CouplingKernel::isotropic_unit_nn(3.0, 1.0, 1.0);

    println!("{:>6}  {:>12}  {:>10}", "p", "N_op(t=10)", "stderr");
    for (i, p) in [0.15, 0.20, 0.25, 0.30].into_iter().enumerate() {
        let mut sites = dilute_sites(&full, p, derive_seed(7, i as u64))?;
        // Keep the seed molecule present regardless of the dilution draw.
        let central = sites.central_site();
        sites.occupied_molecule_mask[central] = true;
        let net = SpreadNetwork::from_lattice(&sites, &kernel, 1.0)?;
        let params = SpreadParams {
            death_ratio: 1.0 / 3.0,
            t_max: 10.0,
            seed_spin: central,
            integrator: Integrator::Gillespie,
            tau: None,
        };
        let series = run_ensemble(&net, &params, 40, &[10.0], derive_seed(8, i as u64))?;
        println!(
            "{:6.2}  {:12.1}  {:10.1}",
            p, series.n_op_mean[0], series.n_op_stderr[0]
        );
    }
    Ok(())
}
