//! Two-parameter fit of a simulated growth curve to experimental data, plus
//! the growth-regime table for a range of interaction exponents.
//!
//! The fit rescales simulation time by J and shifts the experimental time
//! origin, minimizing the log-space misfit. Here the "experiment" is
//! synthesized from the simulation with known parameters, so the fit should
//! recover them.
//!
//! Run with: cargo run --release --example fit_and_regimes

use spinspread::mqc::{ExperimentSeries, HamiltonianTag};
use spinspread::scaling::{classify_regime, fit_experiment, predicted_global_otoc};
use spinspread::spread::TimeSeries;

fn main() -> spinspread::Result<()> {
    let times: Vec<f64> = (0..=400).map(|i| i as f64 * 0.1).collect();
    let sim = TimeSeries {
        n_op_mean: times.iter().map(|&t| (1.0 + t).powf(2.3) * (0.12 * t).exp()).collect(),
        n_op_stderr: vec![0.0; times.len()],
        trials: 1,
        times,
    };
    let (j_true, shift_true) = (1.76, -0.87);
    let t_pts: Vec<f64> = (0..12).map(|i| 2.0 + 0.9 * i as f64).collect();
    let exp = ExperimentSeries {
        cluster_size: t_pts
            .iter()
            .map(|&t| {
                let x = j_true * (t - shift_true);
                (1.0 + x).powf(2.3) * (0.12 * x).exp()
            })
            .collect(),
        err: vec![None; t_pts.len()],
        t_ms: t_pts,
        source: "synthetic".into(),
        hamiltonian: HamiltonianTag::Other,
        time_unit_ms: 1.0,
    };
    let fit = fit_experiment(&sim, &exp)?;
    println!("true J = {j_true}, shift = {shift_true}");
    println!(
        "fit  J = {:.4} +- {:.4}, shift = {:.4} +- {:.4}, residual = {:.2e}\n",
        fit.j,
        fit.covariance[0][0].sqrt(),
        fit.shift,
        fit.covariance[1][1].sqrt(),
        fit.residual
    );

    println!("growth regimes in three dimensions:");
    println!("{:>6}  {:<28} {:>14}", "alpha", "regime", "N_op(t=8) law");
    for alpha in [1.7, 2.5, 3.0, 3.3, 3.5, 3.7, 4.0, 5.0] {
        let regime = classify_regime(alpha, 3)?;
        let n = predicted_global_otoc(&regime, 8.0)?;
        println!("{:6.1}  {:<28} {:14.3e}", alpha, format!("{:?}", regime.id), n);
    }
    Ok(())
}
