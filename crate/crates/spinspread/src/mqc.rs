//! Multiple quantum coherence spectra: Fourier inversion of phase sweeps,
//! second moments, Gaussian cluster-size extraction and experimental data
//! ingestion.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cluster sizes beyond this invalidate the weakly-polarized expansion that
/// identifies the measured signal with the global OTOC.
pub const WEAK_POLARIZATION_BOUND: f64 = 1e5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Raw,
    UnitSum,
}

/// Coherence intensities `g_n` over integer orders `n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MQCSpectrum {
    pub n_values: Vec<i64>,
    pub g: Vec<f64>,
    pub normalization: Normalization,
}

impl MQCSpectrum {
    pub fn new(n_values: Vec<i64>, g: Vec<f64>) -> Self {
        assert_eq!(n_values.len(), g.len());
        MQCSpectrum { n_values, g, normalization: Normalization::Raw }
    }

    pub fn value(&self, n: i64) -> f64 {
        self.n_values.iter().position(|&m| m == n).map_or(0.0, |i| self.g[i])
    }

    /// Replace `g_n` by `(g_n + g_{-n}) / 2`.
    pub fn symmetrize(&mut self) {
        let old = self.clone();
        for (i, &n) in self.n_values.iter().enumerate() {
            self.g[i] = 0.5 * (old.value(n) + old.value(-n));
        }
    }

    /// Scale to unit total mass.
    pub fn normalized(mut self) -> Result<Self> {
        let s: f64 = self.g.iter().sum();
        if s <= 0.0 {
            return Err(Error::Mqc("cannot normalize empty spectrum".into()));
        }
        for v in self.g.iter_mut() {
            *v /= s;
        }
        self.normalization = Normalization::UnitSum;
        Ok(self)
    }

    /// Second moment `sum n^2 g_n` of the spectrum as stored.
    pub fn second_moment(&self) -> f64 {
        self.n_values.iter().zip(&self.g).map(|(&n, &g)| (n * n) as f64 * g).sum()
    }

    /// Evaluate the phase signal `I(phi) = sum_n g_n exp(i n phi)`.
    pub fn phase_signal(&self, phi: f64) -> Complex64 {
        self.n_values
            .iter()
            .zip(&self.g)
            .map(|(&n, &g)| g * Complex64::new(0.0, n as f64 * phi).exp())
            .sum()
    }
}

/// Inverse DFT of phase-sweep samples on a uniform grid over `[0, 2 pi)`.
///
/// Fails on aliasing (appreciable mass in the edge coherence bins) or when
/// the recovered intensities have a large imaginary residue.
pub fn gn_from_phase_sweep(i_samples: &[Complex64]) -> Result<MQCSpectrum> {
    let p = i_samples.len();
    if p < 3 {
        return Err(Error::Mqc("phase sweep needs at least 3 samples".into()));
    }
    let half = (p as i64 - 1) / 2;
    let n_values: Vec<i64> = (-half..=(p as i64 - 1 - half)).collect();
    let mut g = Vec::with_capacity(p);
    let mut max_imag: f64 = 0.0;
    for &n in &n_values {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &s) in i_samples.iter().enumerate() {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / p as f64;
            acc += s * Complex64::new(0.0, -(n as f64) * phi).exp();
        }
        acc /= p as f64;
        max_imag = max_imag.max(acc.im.abs());
        g.push(acc.re);
    }
    let total: f64 = g.iter().map(|v| v.abs()).sum();
    if max_imag > 1e-8 * total.max(1.0) {
        return Err(Error::Mqc(format!("imaginary residue {max_imag:.3e} in recovered spectrum")));
    }
    // Aliasing: the extreme bins should be empty for a well-resolved sweep.
    let edge = g[0].abs().max(g[p - 1].abs());
    if edge > 1e-6 * total.max(1e-300) {
        return Err(Error::Mqc(format!("aliasing detected: edge-bin mass {edge:.3e}")));
    }
    Ok(MQCSpectrum::new(n_values, g))
}

/// Gaussian cluster-size fit result, `g_n ~ exp(-n^2 / K)`.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterSizeFit {
    pub k: f64,
    pub k_err: f64,
    /// Weighted residual sum of squares in log space.
    pub residual: f64,
    pub second_moment: f64,
    /// Set when the cluster size exceeds the weakly-polarized validity bound.
    pub exceeds_polarization_bound: bool,
}

/// Weighted least-squares fit of `log g_n` against `n^2`.
///
/// Weights proportional to `g_n` emphasize the dominant low-`n` region.
pub fn cluster_size_fit(spec: &MQCSpectrum) -> Result<ClusterSizeFit> {
    let pts: Vec<(f64, f64, f64)> = spec
        .n_values
        .iter()
        .zip(&spec.g)
        .filter(|&(_, &g)| g > 0.0)
        .map(|(&n, &g)| ((n * n) as f64, g.ln(), g))
        .collect();
    let distinct: std::collections::BTreeSet<i64> = spec
        .n_values
        .iter()
        .zip(&spec.g)
        .filter(|&(_, &g)| g > 0.0)
        .map(|(&n, _)| n.abs())
        .collect();
    if distinct.len() < 3 {
        return Err(Error::Mqc(format!(
            "cluster size fit needs >= 3 distinct |n| with mass, found {}",
            distinct.len()
        )));
    }
    let w_sum: f64 = pts.iter().map(|p| p.2).sum();
    let xm: f64 = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / w_sum;
    let ym: f64 = pts.iter().map(|p| p.1 * p.2).sum::<f64>() / w_sum;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - xm) * (p.1 - ym)).sum();
    if sxx <= 0.0 {
        return Err(Error::Mqc("degenerate support: no spread in n^2".into()));
    }
    let slope = sxy / sxx;
    if slope >= 0.0 {
        return Err(Error::Mqc("spectrum is not Gaussian-decaying (non-negative slope)".into()));
    }
    let k = -1.0 / slope;
    let residual: f64 = pts
        .iter()
        .map(|p| p.2 * (p.1 - (ym + slope * (p.0 - xm))).powi(2))
        .sum();
    // Effective dof from the weighted point count.
    let n_eff = (w_sum * w_sum) / pts.iter().map(|p| p.2 * p.2).sum::<f64>();
    let var_slope = if n_eff > 2.0 { residual / ((n_eff - 2.0) * sxx) } else { residual / sxx };
    let k_err = var_slope.sqrt() / (slope * slope);
    let m2 = spec.second_moment();
    Ok(ClusterSizeFit {
        k,
        k_err,
        residual,
        second_moment: m2,
        exceeds_polarization_bound: k > WEAK_POLARIZATION_BOUND,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HamiltonianTag {
    DQ,
    YY,
    Other,
}

/// One experimental global-OTOC series: cluster size against time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSeries {
    /// Times in milliseconds, strictly ascending.
    pub t_ms: Vec<f64>,
    pub cluster_size: Vec<f64>,
    pub err: Vec<Option<f64>>,
    pub source: String,
    pub hamiltonian: HamiltonianTag,
    /// Conversion: one simulation time unit in ms (0.4 for adamantane).
    pub time_unit_ms: f64,
}

impl ExperimentSeries {
    /// Times in simulation units.
    pub fn t_units(&self) -> Vec<f64> {
        self.t_ms.iter().map(|t| t / self.time_unit_ms).collect()
    }

    pub fn len(&self) -> usize {
        self.t_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_ms.is_empty()
    }
}

/// Parse a `t_ms,cluster_size[,err]` CSV into an [`ExperimentSeries`].
pub fn load_experiment<R: std::io::Read>(
    reader: R,
    source: &str,
    hamiltonian: HamiltonianTag,
    time_unit_ms: f64,
) -> Result<ExperimentSeries> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || headers.get(0) != Some("t_ms") || headers.get(1) != Some("cluster_size")
    {
        return Err(Error::Mqc("expected CSV header `t_ms,cluster_size[,err]`".into()));
    }
    let mut series = ExperimentSeries {
        t_ms: Vec::new(),
        cluster_size: Vec::new(),
        err: Vec::new(),
        source: source.to_string(),
        hamiltonian,
        time_unit_ms,
    };
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |field: Option<&str>, name: &str| -> Result<f64> {
            field
                .ok_or_else(|| Error::Mqc(format!("row {}: missing {name}", row_idx + 1)))?
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Mqc(format!("row {}: malformed {name}", row_idx + 1)))
        };
        let t = parse(record.get(0), "t_ms")?;
        let size = parse(record.get(1), "cluster_size")?;
        if size <= 0.0 {
            return Err(Error::Mqc(format!("row {}: nonpositive cluster size {size}", row_idx + 1)));
        }
        if let Some(&last) = series.t_ms.last() {
            if t <= last {
                return Err(Error::Mqc(format!(
                    "row {}: times not strictly ascending ({t} after {last})",
                    row_idx + 1
                )));
            }
        }
        let err = match record.get(2) {
            Some(s) if !s.trim().is_empty() => Some(parse(record.get(2), "err")?),
            _ => None,
        };
        series.t_ms.push(t);
        series.cluster_size.push(size);
        series.err.push(err);
    }
    if series.is_empty() {
        return Err(Error::Mqc("experiment file contains no data rows".into()));
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sweep(f: impl Fn(f64) -> Complex64, p: usize) -> Vec<Complex64> {
        (0..p).map(|k| f(2.0 * std::f64::consts::PI * k as f64 / p as f64)).collect()
    }

    #[test]
    fn constant_signal_is_zero_quantum() {
        let g = gn_from_phase_sweep(&sweep(|_| Complex64::new(1.0, 0.0), 9)).unwrap();
        assert_relative_eq!(g.value(0), 1.0, epsilon = 1e-12);
        assert!(g.n_values.iter().all(|&n| n == 0 || g.value(n).abs() < 1e-12));
    }

    #[test]
    fn cosine_signal_splits_into_two_quanta() {
        let g =
            gn_from_phase_sweep(&sweep(|phi| Complex64::new((2.0 * phi).cos(), 0.0), 11)).unwrap();
        assert_relative_eq!(g.value(2), 0.5, epsilon = 1e-12);
        assert_relative_eq!(g.value(-2), 0.5, epsilon = 1e-12);
        assert_relative_eq!(g.second_moment(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn round_trip_is_exact() {
        let mut spec = MQCSpectrum::new((-4..=4).collect(), vec![0.0; 9]);
        for (i, &n) in spec.n_values.clone().iter().enumerate() {
            spec.g[i] = (-(n * n) as f64 / 5.0).exp();
        }
        let spec = spec.normalized().unwrap();
        let p = 11;
        let samples = sweep(|phi| spec.phase_signal(phi), p);
        let back = gn_from_phase_sweep(&samples).unwrap();
        for &n in &spec.n_values {
            assert!((spec.value(n) - back.value(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn aliasing_detected() {
        // n = +/-3 coherence sampled on a 5-point grid wraps into the edges.
        let res = gn_from_phase_sweep(&sweep(|phi| Complex64::new((3.0 * phi).cos(), 0.0), 5));
        assert!(res.is_err());
    }

    #[test]
    fn second_moment_examples() {
        let delta = MQCSpectrum::new(vec![0], vec![1.0]);
        assert_eq!(delta.second_moment(), 0.0);
        let two = MQCSpectrum::new(vec![-2, 2], vec![0.5, 0.5]);
        assert_eq!(two.second_moment(), 4.0);
    }

    #[test]
    fn gaussian_second_moment_is_half_k() {
        let k = 100.0;
        let n_values: Vec<i64> = (-50..=50).collect();
        let g: Vec<f64> = n_values.iter().map(|&n| (-(n * n) as f64 / k).exp()).collect();
        let spec = MQCSpectrum::new(n_values, g).normalized().unwrap();
        assert_relative_eq!(spec.second_moment(), k / 2.0, max_relative = 0.01);
    }

    #[test]
    fn second_moment_invariant_under_symmetrization() {
        let mut spec = MQCSpectrum::new(vec![-2, -1, 0, 1, 2], vec![0.1, 0.3, 0.2, 0.1, 0.3]);
        let before = spec.second_moment();
        spec.symmetrize();
        assert_relative_eq!(spec.second_moment(), before, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_fit_recovers_k() {
        let k = 64.0;
        let n_values: Vec<i64> = (-40..=40).collect();
        let g: Vec<f64> = n_values.iter().map(|&n| 0.7 * (-(n * n) as f64 / k).exp()).collect();
        let spec = MQCSpectrum::new(n_values, g);
        let fit = cluster_size_fit(&spec).unwrap();
        assert_relative_eq!(fit.k, k, epsilon = 1e-6);
        assert!(!fit.exceeds_polarization_bound);
    }

    #[test]
    fn delta_spectrum_has_no_fit() {
        let spec = MQCSpectrum::new(vec![-1, 0, 1], vec![0.0, 1.0, 0.0]);
        assert!(cluster_size_fit(&spec).is_err());
    }

    #[test]
    fn polarization_bound_flagged() {
        let k = 2e5;
        let n_values: Vec<i64> = (-600..=600).collect();
        let g: Vec<f64> = n_values.iter().map(|&n| (-(n * n) as f64 / k).exp()).collect();
        let fit = cluster_size_fit(&MQCSpectrum::new(n_values, g)).unwrap();
        assert!(fit.exceeds_polarization_bound);
    }

    #[test]
    fn experiment_loading() {
        let csv = "t_ms,cluster_size\n0.4,136\n0.8,900\n";
        let s = load_experiment(csv.as_bytes(), "test", HamiltonianTag::DQ, 0.4).unwrap();
        assert_eq!(s.len(), 2);
        assert_relative_eq!(s.t_units()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.cluster_size[0], 136.0);

        let empty = load_experiment("t_ms,cluster_size\n".as_bytes(), "e", HamiltonianTag::DQ, 0.4);
        assert!(matches!(empty, Err(Error::Mqc(ref m)) if m.contains("no data rows")));

        let unsorted = "t_ms,cluster_size\n0.8,10\n0.4,20\n";
        let err = load_experiment(unsorted.as_bytes(), "u", HamiltonianTag::DQ, 0.4);
        assert!(matches!(err, Err(Error::Mqc(ref m)) if m.contains("row 2")));

        let negative = "t_ms,cluster_size\n0.4,-3\n";
        assert!(load_experiment(negative.as_bytes(), "n", HamiltonianTag::DQ, 0.4).is_err());

        let malformed = "t_ms,cluster_size\n0.4,abc\n";
        assert!(load_experiment(malformed.as_bytes(), "m", HamiltonianTag::DQ, 0.4).is_err());
    }
}
