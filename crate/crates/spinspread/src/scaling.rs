//! Growth-regime taxonomy for power-law interactions and the two-parameter
//! fit of simulated cluster-size curves to experimental series.
//!
//! The interaction exponent `alpha` against the spatial dimension `d`
//! determines how the operator front spreads, from stretched-exponential
//! light cones down to plain ballistic growth. `fit_experiment` matches a
//! simulated curve to measured cluster sizes by rescaling time (`j`) and
//! shifting the origin (`shift`), minimizing log-space least squares.

use serde::Serialize;

use crate::mqc::ExperimentSeries;
use crate::spread::TimeSeries;
use crate::{Error, Result};

const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeId {
    /// alpha in [d/2, d): front radius exp(B t^eta).
    StretchedExponential,
    /// alpha = d: front radius exp((ln t)^2 / (4 d ln 2)).
    LogSquaredExponential,
    /// alpha in (d, d+1/2): power-law cone t^{1/(2 alpha - 2 d)}.
    PowerLawCone,
    /// alpha = d + 1/2: marginal t ln t cone.
    MarginalLogCone,
    /// alpha in (d+1/2, d+1): linear cone, power-law front broadening.
    BallisticPowerTail,
    /// alpha = d + 1: linear cone, (t ln t)^{1/2} broadening.
    BallisticLogBroadening,
    /// alpha > d + 1: linear cone, diffusive t^{1/2} broadening.
    BallisticDiffusive,
}

/// Classified growth regime with its derived parameters.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingRegime {
    pub id: RegimeId,
    pub alpha: f64,
    pub dimension: usize,
    /// Stretching rate B = d ln 2 / (2 (alpha - d)^2) where applicable.
    pub b: Option<f64>,
    /// Stretching exponent eta = log2(d / alpha) where applicable.
    pub eta: Option<f64>,
    /// Human-readable front-radius form.
    pub light_cone: String,
    /// Front broadening form for ballistic regimes.
    pub broadening: Option<String>,
    /// The power-law tail forms have numerical support in one dimension
    /// only; flagged when d > 1.
    pub tail_caveat: bool,
}

/// Map (alpha, d) to its growth regime. Errors for alpha < d/2, where the
/// taxonomy does not apply.
pub fn classify_regime(alpha: f64, dimension: usize) -> Result<ScalingRegime> {
    if dimension == 0 {
        return Err(Error::Fit("dimension must be at least 1".into()));
    }
    let d = dimension as f64;
    if alpha < d / 2.0 - BOUNDARY_TOL {
        return Err(Error::Fit(format!(
            "alpha = {alpha} below d/2 = {}; no front taxonomy applies",
            d / 2.0
        )));
    }
    let tail_caveat = dimension > 1;
    let near = |x: f64| (alpha - x).abs() <= BOUNDARY_TOL;
    let mut regime = ScalingRegime {
        id: RegimeId::BallisticDiffusive,
        alpha,
        dimension,
        b: None,
        eta: None,
        light_cone: String::new(),
        broadening: None,
        tail_caveat,
    };
    if near(d) {
        regime.id = RegimeId::LogSquaredExponential;
        regime.light_cone = format!("exp((ln t)^2 / {:.6})", 4.0 * d * std::f64::consts::LN_2);
    } else if near(d + 0.5) {
        regime.id = RegimeId::MarginalLogCone;
        regime.light_cone = "t ln t".into();
    } else if near(d + 1.0) {
        regime.id = RegimeId::BallisticLogBroadening;
        regime.light_cone = "v_B t".into();
        regime.broadening = Some("(t ln t)^(1/2)".into());
    } else if alpha < d {
        regime.id = RegimeId::StretchedExponential;
        let b = d * std::f64::consts::LN_2 / (2.0 * (alpha - d).powi(2));
        let eta = (d / alpha).log2();
        regime.b = Some(b);
        regime.eta = Some(eta);
        regime.light_cone = format!("exp({b:.6} t^{eta:.6})");
    } else if alpha < d + 0.5 {
        regime.id = RegimeId::PowerLawCone;
        regime.light_cone = format!("t^{:.6}", 1.0 / (2.0 * alpha - 2.0 * d));
    } else if alpha < d + 1.0 {
        regime.id = RegimeId::BallisticPowerTail;
        regime.light_cone = "v_B t".into();
        regime.broadening = Some(format!("t^{:.6}", 1.0 / (2.0 * alpha - 2.0 * d)));
    } else {
        regime.light_cone = "v_B t".into();
        regime.broadening = Some("t^(1/2)".into());
    }
    Ok(regime)
}

/// Leading time dependence of the global OTOC in the given regime, up to an
/// overall constant. Asymptotic forms; requires t > 1.
pub fn predicted_global_otoc(regime: &ScalingRegime, t: f64) -> Result<f64> {
    if t <= 1.0 {
        return Err(Error::Fit("asymptotic forms require t > 1".into()));
    }
    let d = regime.dimension as f64;
    let a = regime.alpha;
    Ok(match regime.id {
        // Tail-integral forms below the marginal cone: front radius to the
        // power 2 alpha.
        RegimeId::StretchedExponential => {
            let (b, eta) = (regime.b.unwrap(), regime.eta.unwrap());
            (2.0 * a * b * t.powf(eta)).exp()
        }
        RegimeId::LogSquaredExponential => t.powf(0.5 * t.log2()),
        RegimeId::PowerLawCone => t.powf(a / (a - d)),
        // Cone-volume forms at and above the marginal point.
        RegimeId::MarginalLogCone => (t * t.ln()).powf(d),
        RegimeId::BallisticPowerTail
        | RegimeId::BallisticLogBroadening
        | RegimeId::BallisticDiffusive => t.powf(d),
    })
}

/// Monotone piecewise-cubic interpolant (Fritsch-Carlson slopes).
struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Pchip {
    fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 {
            return Err(Error::Fit("interpolation needs at least 2 points".into()));
        }
        if x.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Fit("interpolation abscissae must be strictly ascending".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut m = vec![0.0; n];
        m[0] = delta[0];
        m[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                m[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        // Clamp endpoint slopes to keep monotonicity.
        for (i, di) in [(0usize, 0usize), (n - 1, n - 2)] {
            if m[i] * delta[di] <= 0.0 {
                m[i] = 0.0;
            } else if m[i].abs() > 3.0 * delta[di].abs() {
                m[i] = 3.0 * delta[di];
            }
        }
        Ok(Pchip { x: x.to_vec(), y: y.to_vec(), m })
    }

    fn range(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    fn eval(&self, xq: f64) -> Option<f64> {
        let (lo, hi) = self.range();
        if xq < lo - 1e-12 || xq > hi + 1e-12 {
            return None;
        }
        let xq = xq.clamp(lo, hi);
        let i = match self.x.partition_point(|&v| v <= xq) {
            0 => 0,
            p => (p - 1).min(self.x.len() - 2),
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (xq - self.x[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        Some(h00 * self.y[i] + h10 * h * self.m[i] + h01 * self.y[i + 1] + h11 * h * self.m[i + 1])
    }
}

/// Result of the two-parameter curve fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    /// Time-rescaling factor applied to the simulated curve.
    pub j: f64,
    /// Time-origin shift of the experimental series, in simulation units.
    pub shift: f64,
    /// Minimized log-space sum of squared residuals.
    pub residual: f64,
    /// Parameter covariance [[var_j, cov], [cov, var_shift]] from the local
    /// quadratic model.
    pub covariance: [[f64; 2]; 2],
}

/// Fit `n_exp(t) ~ n_sim(j * (t - shift))` in log space by a deterministic
/// coarse grid followed by local refinement.
pub fn fit_experiment(sim: &TimeSeries, exp: &ExperimentSeries) -> Result<FitResult> {
    if exp.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 experimental points, got {}", exp.len())));
    }
    let log_sim: Vec<f64> = sim
        .n_op_mean
        .iter()
        .map(|&v| {
            if v > 0.0 {
                Ok(v.ln())
            } else {
                Err(Error::Fit("simulated curve must be positive for log-space fitting".into()))
            }
        })
        .collect::<Result<_>>()?;
    let curve = Pchip::new(&sim.times, &log_sim)?;
    let t_exp = exp.t_units();
    let log_exp: Vec<f64> = exp.cluster_size.iter().map(|&v| v.ln()).collect();

    let objective = |j: f64, shift: f64| -> Option<f64> {
        if j <= 0.0 {
            return None;
        }
        let mut acc = 0.0;
        for (&t, &le) in t_exp.iter().zip(&log_exp) {
            let v = curve.eval(j * (t - shift))?;
            acc += (v - le).powi(2);
        }
        Some(acc)
    };

    // Coarse grid: j log-spaced, shift linear around the data window.
    let t_lo = t_exp[0];
    let t_hi = *t_exp.last().unwrap();
    let span = (t_hi - t_lo).max(1.0);
    let mut best: Option<(f64, f64, f64)> = None;
    for ij in 0..=80 {
        let j = 0.2 * (50.0f64).powf(ij as f64 / 80.0);
        for is in 0..=120 {
            let shift = t_lo - span + (2.0 * span) * is as f64 / 120.0;
            if let Some(v) = objective(j, shift) {
                if best.map_or(true, |(bv, _, _)| v < bv) {
                    best = Some((v, j, shift));
                }
            }
        }
    }
    let (_, mut j, mut shift) =
        best.ok_or_else(|| Error::Fit("no (j, shift) maps the experimental window into the simulated curve".into()))?;

    // Local refinement: shrinking grids around the incumbent.
    let mut dj = 0.5 * j;
    let mut ds = 0.25 * span;
    for _ in 0..30 {
        let mut improved = (objective(j, shift).unwrap_or(f64::INFINITY), j, shift);
        for ij in -4i32..=4 {
            for is in -4i32..=4 {
                let cj = j + dj * ij as f64 / 4.0;
                let cs = shift + ds * is as f64 / 4.0;
                if let Some(v) = objective(cj, cs) {
                    if v < improved.0 {
                        improved = (v, cj, cs);
                    }
                }
            }
        }
        j = improved.1;
        shift = improved.2;
        dj *= 0.45;
        ds *= 0.45;
    }
    let residual = objective(j, shift)
        .ok_or_else(|| Error::Fit("refined optimum left the feasible window".into()))?;

    // Local quadratic model for the covariance.
    let hj = (1e-4 * j).max(1e-8);
    let hs = 1e-4 * (1.0 + shift.abs());
    let f = |a: f64, b: f64| objective(a, b).unwrap_or(residual);
    let f0 = residual;
    let fjj = (f(j + hj, shift) - 2.0 * f0 + f(j - hj, shift)) / (hj * hj);
    let fss = (f(j, shift + hs) - 2.0 * f0 + f(j, shift - hs)) / (hs * hs);
    let fjs = (f(j + hj, shift + hs) - f(j + hj, shift - hs) - f(j - hj, shift + hs)
        + f(j - hj, shift - hs))
        / (4.0 * hj * hs);
    let n = t_exp.len() as f64;
    let sigma2 = residual / (n - 2.0).max(1.0);
    let det = fjj * fss - fjs * fjs;
    let covariance = if det.abs() > 1e-300 && fjj > 0.0 && fss > 0.0 {
        let s = 2.0 * sigma2 / det;
        [[s * fss, -s * fjs], [-s * fjs, s * fjj]]
    } else {
        [[f64::NAN, f64::NAN], [f64::NAN, f64::NAN]]
    };
    Ok(FitResult { j, shift, residual, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mqc::HamiltonianTag;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn synthetic_sim() -> TimeSeries {
        // Smooth, strictly increasing cluster-size curve over [0, 40].
        let times: Vec<f64> = (0..=400).map(|i| i as f64 * 0.1).collect();
        let n_op: Vec<f64> = times.iter().map(|&t| (1.0 + t).powf(2.3) * (0.12 * t).exp()).collect();
        TimeSeries {
            n_op_stderr: vec![0.0; times.len()],
            trials: 1,
            n_op_mean: n_op,
            times,
        }
    }

    fn synthetic_exp(sim: &TimeSeries, j: f64, shift: f64, t_pts: &[f64]) -> ExperimentSeries {
        let log_sim: Vec<f64> = sim.n_op_mean.iter().map(|v| v.ln()).collect();
        let curve = Pchip::new(&sim.times, &log_sim).unwrap();
        ExperimentSeries {
            t_ms: t_pts.to_vec(),
            cluster_size: t_pts.iter().map(|&t| curve.eval(j * (t - shift)).unwrap().exp()).collect(),
            err: vec![None; t_pts.len()],
            source: "synthetic".into(),
            hamiltonian: HamiltonianTag::Other,
            time_unit_ms: 1.0,
        }
    }

    #[test]
    fn classification_examples() {
        let r = classify_regime(3.0, 3).unwrap();
        assert_eq!(r.id, RegimeId::LogSquaredExponential);
        let r = classify_regime(4.0, 3).unwrap();
        assert_eq!(r.id, RegimeId::BallisticLogBroadening);
        assert_eq!(r.broadening.as_deref(), Some("(t ln t)^(1/2)"));
        let r = classify_regime(2.0, 1).unwrap();
        assert_eq!(r.id, RegimeId::BallisticLogBroadening);
        let r = classify_regime(5.0, 3).unwrap();
        assert_eq!(r.id, RegimeId::BallisticDiffusive);
        let r = classify_regime(1.7, 3).unwrap();
        assert_eq!(r.id, RegimeId::StretchedExponential);
        assert_relative_eq!(
            r.b.unwrap(),
            3.0 * std::f64::consts::LN_2 / (2.0 * 1.3 * 1.3),
            epsilon = 1e-12
        );
        assert_relative_eq!(r.eta.unwrap(), (3.0f64 / 1.7).log2(), epsilon = 1e-12);
        assert_eq!(classify_regime(3.3, 3).unwrap().id, RegimeId::PowerLawCone);
        assert_eq!(classify_regime(3.5, 3).unwrap().id, RegimeId::MarginalLogCone);
        assert_eq!(classify_regime(3.7, 3).unwrap().id, RegimeId::BallisticPowerTail);
    }

    #[test]
    fn classification_rejects_small_alpha() {
        assert!(classify_regime(1.4, 3).is_err());
        assert!(classify_regime(1.5, 3).is_ok());
    }

    #[test]
    fn tail_caveat_flags_higher_dimensions() {
        assert!(!classify_regime(1.2, 1).unwrap().tail_caveat);
        assert!(classify_regime(3.2, 3).unwrap().tail_caveat);
    }

    #[test]
    fn predicted_forms_match_stated_exponents() {
        let r = classify_regime(3.2, 3).unwrap();
        let ratio = predicted_global_otoc(&r, 4.0).unwrap() / predicted_global_otoc(&r, 2.0).unwrap();
        assert_relative_eq!(ratio.ln() / (2.0f64).ln(), 16.0, epsilon = 1e-9);
        let r = classify_regime(5.0, 3).unwrap();
        let ratio = predicted_global_otoc(&r, 6.0).unwrap() / predicted_global_otoc(&r, 2.0).unwrap();
        assert_relative_eq!(ratio, 27.0, epsilon = 1e-9);
        let r = classify_regime(3.0, 3).unwrap();
        let v = predicted_global_otoc(&r, 8.0).unwrap();
        assert_relative_eq!(v, 8.0f64.powf(0.5 * 3.0), epsilon = 1e-9);
        assert!(predicted_global_otoc(&r, 0.9).is_err());
    }

    #[test]
    fn regime_map_is_total_above_half_dimension() {
        for d in 1..=3usize {
            let lo = d as f64 / 2.0;
            for i in 0..400 {
                let alpha = lo + i as f64 * 0.02;
                classify_regime(alpha, d).unwrap();
            }
        }
    }

    #[test]
    fn boundaries_select_their_marginal_rows() {
        for d in 1..=3usize {
            let df = d as f64;
            assert_eq!(classify_regime(df, d).unwrap().id, RegimeId::LogSquaredExponential);
            assert_eq!(classify_regime(df + 0.5, d).unwrap().id, RegimeId::MarginalLogCone);
            assert_eq!(classify_regime(df + 1.0, d).unwrap().id, RegimeId::BallisticLogBroadening);
            // Just inside each boundary the open-interval rows take over.
            assert_eq!(classify_regime(df - 1e-6, d).unwrap().id, RegimeId::StretchedExponential);
            assert_eq!(classify_regime(df + 1e-6, d).unwrap().id, RegimeId::PowerLawCone);
            assert_eq!(classify_regime(df + 0.5 - 1e-6, d).unwrap().id, RegimeId::PowerLawCone);
            assert_eq!(classify_regime(df + 0.5 + 1e-6, d).unwrap().id, RegimeId::BallisticPowerTail);
            assert_eq!(classify_regime(df + 1.0 - 1e-6, d).unwrap().id, RegimeId::BallisticPowerTail);
            assert_eq!(classify_regime(df + 1.0 + 1e-6, d).unwrap().id, RegimeId::BallisticDiffusive);
        }
    }

    #[test]
    fn self_fit_recovers_parameters() {
        let sim = synthetic_sim();
        for (j, shift) in [(1.76, -0.87), (0.7, 1.4), (3.4, -2.1)] {
            // Choose experimental times whose rescaled images stay inside
            // the simulated range for every parameter pair.
            let t_pts: Vec<f64> = (0..12).map(|i| shift + (1.0 + i as f64 * 3.0) / j).collect();
            let exp = synthetic_exp(&sim, j, shift, &t_pts);
            let fit = fit_experiment(&sim, &exp).unwrap();
            assert!((fit.j - j).abs() / j < 0.05, "j {} -> {}", j, fit.j);
            assert!((fit.shift - shift).abs() / shift.abs().max(1.0) < 0.05, "shift {} -> {}", shift, fit.shift);
            assert!(fit.residual < 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn self_fit_recovers_over_the_parameter_box(
            j in 0.5f64..5.0,
            shift in -3.0f64..3.0,
        ) {
            let sim = synthetic_sim();
            let t_pts: Vec<f64> = (0..10).map(|i| shift + (2.0 + i as f64 * 3.5) / j).collect();
            let exp = synthetic_exp(&sim, j, shift, &t_pts);
            let fit = fit_experiment(&sim, &exp).unwrap();
            prop_assert!((fit.j - j).abs() / j < 0.05, "j {} -> {}", j, fit.j);
            prop_assert!((fit.shift - shift).abs() / shift.abs().max(1.0) < 0.05,
                "shift {} -> {}", shift, fit.shift);
        }
    }

    #[test]
    fn objective_is_invariant_under_time_origin_shifts() {
        let sim = synthetic_sim();
        let t_pts: Vec<f64> = (0..10).map(|i| 2.5 + i as f64 * 0.8).collect();
        let exp = synthetic_exp(&sim, 1.4, -0.5, &t_pts);
        let fit = fit_experiment(&sim, &exp).unwrap();
        let c = 1.7;
        let mut moved = exp.clone();
        moved.t_ms.iter_mut().for_each(|t| *t += c);
        let fit2 = fit_experiment(&sim, &moved).unwrap();
        assert!((fit2.residual - fit.residual).abs() < 1e-8);
        assert!((fit2.j - fit.j).abs() / fit.j < 1e-3);
        assert!((fit2.shift - (fit.shift + c)).abs() < 1e-3);
    }

    #[test]
    fn fit_rejects_short_or_uncoverable_series() {
        let sim = synthetic_sim();
        let short = synthetic_exp(&sim, 1.0, 0.0, &[1.0, 2.0]);
        assert!(fit_experiment(&sim, &short).is_err());
        // Simulated curve spanning one unit cannot cover a 100-unit window.
        let tiny = TimeSeries {
            times: vec![0.0, 0.5, 1.0],
            n_op_mean: vec![1.0, 2.0, 4.0],
            n_op_stderr: vec![0.0; 3],
            trials: 1,
        };
        let wide = ExperimentSeries {
            t_ms: vec![0.0, 50.0, 100.0],
            cluster_size: vec![1.0, 10.0, 100.0],
            err: vec![None; 3],
            source: "synthetic".into(),
            hamiltonian: HamiltonianTag::Other,
            time_unit_ms: 1.0,
        };
        assert!(fit_experiment(&tiny, &wide).is_err());
    }

    #[test]
    fn pchip_is_monotone_between_monotone_data() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| (v * 0.6).exp()).collect();
        let p = Pchip::new(&x, &y).unwrap();
        let mut prev = p.eval(0.0).unwrap();
        for i in 1..400 {
            let v = p.eval(19.0 * i as f64 / 400.0).unwrap();
            assert!(v >= prev - 1e-12);
            prev = v;
        }
        assert!(p.eval(-0.1).is_none());
        assert!(p.eval(19.1).is_none());
    }
}
