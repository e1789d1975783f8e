//! Exact state-vector simulation of small spin systems.
//!
//! Provides the interaction Hamiltonians (double-quantum, dipolar YY, and a
//! fully generic random two-spin model), a long-range kicked Ising circuit,
//! and the correlators built on top of them: local/global/off-diagonal
//! OTOCs, coherence-order spectra from phase sweeps, and the pure-state
//! phase protocol. Dense eigendecomposition handles up to 12 spins exactly;
//! a Lanczos propagator extends time evolution to 24 spins.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::mqc::{gn_from_phase_sweep, MQCSpectrum};
use crate::seeding::task_rng;
use crate::{Error, Result};

const MAX_DENSE_SPINS: usize = 12;
const MAX_SPINS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Normalized pure state of `n_spins` qubits. Bit 0 of the basis index is
/// spin 0; an unset bit is the +1 eigenstate of that spin's Z.
#[derive(Debug, Clone)]
pub struct StateVector {
    pub n_spins: usize,
    pub amps: Vec<Complex64>,
}

impl StateVector {
    pub fn basis(n_spins: usize, index: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_spins];
        amps[index] = Complex64::new(1.0, 0.0);
        StateVector { n_spins, amps }
    }

    /// Product state with every spin in the +Z eigenstate.
    pub fn all_up(n_spins: usize) -> Self {
        StateVector::basis(n_spins, 0)
    }

    /// Product state with every spin in the +X eigenstate.
    pub fn all_plus(n_spins: usize) -> Self {
        let dim = 1usize << n_spins;
        let a = Complex64::new(1.0 / (dim as f64).sqrt(), 0.0);
        StateVector { n_spins, amps: vec![a; dim] }
    }

    /// Gaussian random state, normalized. Used for trace estimation.
    pub fn random<R: Rng>(n_spins: usize, rng: &mut R) -> Self {
        let dim = 1usize << n_spins;
        let mut amps = Vec::with_capacity(dim);
        for _ in 0..dim {
            amps.push(Complex64::new(gaussian(rng), gaussian(rng)));
        }
        let mut s = StateVector { n_spins, amps };
        let n = s.norm();
        s.amps.iter_mut().for_each(|a| *a /= n);
        s
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Apply a single-site Pauli in place.
pub fn apply_pauli(amps: &mut [Complex64], site: usize, axis: Axis) {
    let m = 1usize << site;
    let i = Complex64::new(0.0, 1.0);
    match axis {
        Axis::X => {
            for k in 0..amps.len() {
                if k & m == 0 {
                    amps.swap(k, k | m);
                }
            }
        }
        Axis::Y => {
            for k in 0..amps.len() {
                if k & m == 0 {
                    let (a, b) = (amps[k], amps[k | m]);
                    amps[k] = -i * b;
                    amps[k | m] = i * a;
                }
            }
        }
        Axis::Z => {
            for (k, a) in amps.iter_mut().enumerate() {
                if k & m != 0 {
                    *a = -*a;
                }
            }
        }
    }
}

/// Observable operators entering the correlators.
#[derive(Debug, Clone)]
pub enum OperatorSpec {
    /// Product of single-site Paulis on distinct sites.
    PauliString { factors: Vec<(usize, Axis)> },
    /// Sum of one Pauli axis over every spin.
    TotalSpin { axis: Axis },
}

impl OperatorSpec {
    pub fn single(site: usize, axis: Axis) -> Self {
        OperatorSpec::PauliString { factors: vec![(site, axis)] }
    }

    pub fn validate(&self, n_spins: usize) -> Result<()> {
        match self {
            OperatorSpec::PauliString { factors } => {
                if factors.is_empty() {
                    return Err(Error::Oracle("empty Pauli string".into()));
                }
                for (i, &(s, _)) in factors.iter().enumerate() {
                    if s >= n_spins {
                        return Err(Error::Oracle(format!("site {s} out of range")));
                    }
                    if factors[..i].iter().any(|&(s2, _)| s2 == s) {
                        return Err(Error::Oracle(format!("repeated site {s} in Pauli string")));
                    }
                }
                Ok(())
            }
            OperatorSpec::TotalSpin { .. } => Ok(()),
        }
    }

    /// `op * v`, leaving `v` untouched.
    pub fn apply(&self, n_spins: usize, v: &[Complex64]) -> Vec<Complex64> {
        match self {
            OperatorSpec::PauliString { factors } => {
                let mut out = v.to_vec();
                for &(site, axis) in factors {
                    apply_pauli(&mut out, site, axis);
                }
                out
            }
            OperatorSpec::TotalSpin { axis } => {
                let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
                let mut tmp = vec![Complex64::new(0.0, 0.0); v.len()];
                for site in 0..n_spins {
                    tmp.copy_from_slice(v);
                    apply_pauli(&mut tmp, site, *axis);
                    for (o, t) in out.iter_mut().zip(&tmp) {
                        *o += t;
                    }
                }
                out
            }
        }
    }
}

/// Pauli-string term compiled to bit operations: the string maps basis `k`
/// to `k ^ flip` with phase `i^iy * (-1)^popcount(k & sign_mask)`.
#[derive(Debug, Clone, Copy)]
struct CompiledTerm {
    coeff: f64,
    flip: usize,
    sign_mask: usize,
    iy: u8,
}

/// Real linear combination of Pauli strings; Hermitian by construction.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    pub n_spins: usize,
    terms: Vec<CompiledTerm>,
    /// Sum of |coefficients|: an upper bound on the operator norm.
    norm_bound: f64,
}

impl Hamiltonian {
    pub fn new(n_spins: usize, terms: &[(f64, Vec<(usize, Axis)>)]) -> Result<Self> {
        if n_spins == 0 || n_spins > MAX_SPINS {
            return Err(Error::Oracle(format!("spin count {n_spins} out of range 1..={MAX_SPINS}")));
        }
        let mut compiled = Vec::with_capacity(terms.len());
        let mut norm_bound = 0.0;
        for (coeff, factors) in terms {
            let mut flip = 0usize;
            let mut sign = 0usize;
            let mut iy = 0u8;
            for &(site, axis) in factors {
                if site >= n_spins {
                    return Err(Error::Oracle(format!("term site {site} out of range")));
                }
                let m = 1usize << site;
                match axis {
                    Axis::X => flip |= m,
                    Axis::Y => {
                        flip |= m;
                        sign |= m;
                        iy = (iy + 1) % 4;
                    }
                    Axis::Z => sign |= m,
                }
            }
            compiled.push(CompiledTerm { coeff: *coeff, flip, sign_mask: sign, iy });
            norm_bound += coeff.abs();
        }
        Ok(Hamiltonian { n_spins, terms: compiled, norm_bound })
    }

    /// Flip-flop Hamiltonian sum_{a<b} D_ab (X_a X_b - Y_a Y_b): every term
    /// changes the total z component by +-4 in Pauli units.
    pub fn double_quantum(couplings: &[Vec<f64>]) -> Result<Self> {
        Self::from_two_site(couplings, &[(1.0, Axis::X, Axis::X), (-1.0, Axis::Y, Axis::Y)])
    }

    /// Effective dipolar Hamiltonian sum_{a<b} D_ab (Y_a Y_b - X_a X_b - Z_a Z_b).
    pub fn dipolar_yy(couplings: &[Vec<f64>]) -> Result<Self> {
        Self::from_two_site(
            couplings,
            &[(1.0, Axis::Y, Axis::Y), (-1.0, Axis::X, Axis::X), (-1.0, Axis::Z, Axis::Z)],
        )
    }

    /// Generic two-spin model: every pair with nonzero coupling receives all
    /// fifteen products of {1,X,Y,Z} x {1,X,Y,Z} (minus the pure identity),
    /// each with an independent standard-normal coefficient drawn from the
    /// seed. Breaks all spin symmetries while keeping the interaction range.
    pub fn generic_random(couplings: &[Vec<f64>], seed: u64) -> Result<Self> {
        let n = couplings.len();
        let axes = [None, Some(Axis::X), Some(Axis::Y), Some(Axis::Z)];
        let mut terms = Vec::new();
        let mut pair = 0u64;
        for a in 0..n {
            for b in (a + 1)..n {
                let d = couplings[a][b];
                pair += 1;
                if d == 0.0 {
                    continue;
                }
                let mut rng = task_rng(seed, pair);
                for &mu in &axes {
                    for &nu in &axes {
                        if mu.is_none() && nu.is_none() {
                            continue;
                        }
                        let g = gaussian(&mut rng);
                        let mut factors = Vec::new();
                        if let Some(ax) = mu {
                            factors.push((a, ax));
                        }
                        if let Some(ax) = nu {
                            factors.push((b, ax));
                        }
                        terms.push((d * g, factors));
                    }
                }
            }
        }
        Self::new(n, &terms)
    }

    fn from_two_site(couplings: &[Vec<f64>], pattern: &[(f64, Axis, Axis)]) -> Result<Self> {
        let n = couplings.len();
        if couplings.iter().any(|row| row.len() != n) {
            return Err(Error::Oracle("coupling matrix must be square".into()));
        }
        let mut terms = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                let d = couplings[a][b];
                if (d - couplings[b][a]).abs() > 1e-12 {
                    return Err(Error::Oracle("coupling matrix must be symmetric".into()));
                }
                if d == 0.0 {
                    continue;
                }
                for &(w, ax1, ax2) in pattern {
                    terms.push((w * d, vec![(a, ax1), (b, ax2)]));
                }
            }
        }
        Self::new(n, &terms)
    }

    /// `H v` into `out`.
    pub fn apply(&self, v: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
        let iu = Complex64::new(0.0, 1.0);
        for t in &self.terms {
            let base = match t.iy {
                0 => Complex64::new(t.coeff, 0.0),
                1 => iu * t.coeff,
                2 => Complex64::new(-t.coeff, 0.0),
                _ => -iu * t.coeff,
            };
            for (k, &a) in v.iter().enumerate() {
                let sign = if (k & t.sign_mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                out[k ^ t.flip] += base * sign * a;
            }
        }
    }

    /// Dense matrix form (guarded by the dense spin limit).
    pub fn dense(&self) -> Result<DMatrix<Complex64>> {
        if self.n_spins > MAX_DENSE_SPINS {
            return Err(Error::Oracle(format!(
                "dense form limited to {MAX_DENSE_SPINS} spins, got {}",
                self.n_spins
            )));
        }
        let dim = 1usize << self.n_spins;
        let mut m = DMatrix::zeros(dim, dim);
        let mut e = vec![Complex64::new(0.0, 0.0); dim];
        let mut col = vec![Complex64::new(0.0, 0.0); dim];
        for k in 0..dim {
            e[k] = Complex64::new(1.0, 0.0);
            self.apply(&e, &mut col);
            for j in 0..dim {
                m[(j, k)] = col[j];
            }
            e[k] = Complex64::new(0.0, 0.0);
        }
        Ok(m)
    }
}

/// Power-law couplings on an open chain: `j / |a-b|^alpha`.
pub fn chain_couplings(n: usize, alpha: f64, j: f64) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            if a != b {
                let r = (a as f64 - b as f64).abs();
                d[a][b] = j * (1.0 / r).powf(alpha);
            }
        }
    }
    d
}

/// One period of the long-range kicked Ising circuit: diagonal Ising phases
/// with power-law couplings and z fields, then a uniform x kick.
#[derive(Debug, Clone)]
pub struct FloquetSpec {
    pub n_spins: usize,
    /// Interaction range exponent; `f64::INFINITY` keeps nearest neighbors
    /// only.
    pub alpha: f64,
    pub j: f64,
    pub b: f64,
    /// Standard deviation of the Gaussian z fields.
    pub h_std: f64,
    pub disorder_seed: u64,
}

impl FloquetSpec {
    /// Self-dual parameter point of the local circuit: J = b = pi/4.
    pub fn dual_unitary(n_spins: usize, h_std: f64, disorder_seed: u64) -> Self {
        FloquetSpec {
            n_spins,
            alpha: f64::INFINITY,
            j: std::f64::consts::FRAC_PI_4,
            b: std::f64::consts::FRAC_PI_4,
            h_std,
            disorder_seed,
        }
    }

    /// Site fields, Gaussian with one counter-derived stream per site.
    pub fn fields(&self) -> Vec<f64> {
        (0..self.n_spins)
            .map(|r| {
                if self.h_std == 0.0 {
                    0.0
                } else {
                    self.h_std * gaussian(&mut task_rng(self.disorder_seed, r as u64))
                }
            })
            .collect()
    }
}

/// Precompiled circuit: per-basis-state Ising phase plus the kick angle.
#[derive(Debug, Clone)]
pub struct FloquetCircuit {
    pub n_spins: usize,
    pub b: f64,
    /// Phase angle of the diagonal layer for each basis state.
    pub diag_phase: Vec<f64>,
}

impl FloquetCircuit {
    pub fn new(spec: &FloquetSpec) -> Result<Self> {
        if spec.n_spins == 0 || spec.n_spins > MAX_SPINS {
            return Err(Error::Oracle(format!("spin count {} out of range", spec.n_spins)));
        }
        let n = spec.n_spins;
        let h = spec.fields();
        let dim = 1usize << n;
        let mut coupling = vec![0.0; n];
        for (d, c) in coupling.iter_mut().enumerate().skip(1) {
            *c = spec.j * (1.0 / d as f64).powf(spec.alpha);
        }
        let diag_phase = (0..dim)
            .map(|k| {
                let z = |r: usize| if k & (1 << r) == 0 { 1.0 } else { -1.0 };
                let mut e = 0.0;
                for r in 0..n {
                    for s in (r + 1)..n {
                        e += coupling[s - r] * z(r) * z(s);
                    }
                    e += h[r] * z(r);
                }
                e
            })
            .collect();
        Ok(FloquetCircuit { n_spins: n, b: spec.b, diag_phase })
    }

    fn apply_period(&self, amps: &mut [Complex64], forward: bool) {
        let sign = if forward { 1.0 } else { -1.0 };
        if forward {
            for (k, a) in amps.iter_mut().enumerate() {
                *a *= Complex64::from_polar(1.0, self.diag_phase[k]);
            }
        }
        // Kick: exp(i b X) per spin.
        let c = Complex64::new((self.b).cos(), 0.0);
        let s = Complex64::new(0.0, sign * (self.b).sin());
        for site in 0..self.n_spins {
            let m = 1usize << site;
            for k in 0..amps.len() {
                if k & m == 0 {
                    let (a0, a1) = (amps[k], amps[k | m]);
                    amps[k] = c * a0 + s * a1;
                    amps[k | m] = s * a0 + c * a1;
                }
            }
        }
        if !forward {
            for (k, a) in amps.iter_mut().enumerate() {
                *a *= Complex64::from_polar(1.0, -self.diag_phase[k]);
            }
        }
    }
}

/// Error tolerance of the Lanczos propagator per unit time.
const KRYLOV_TOL: f64 = 1e-11;

/// Time evolution backend. Floquet time arguments count integer periods;
/// Hamiltonian backends accept continuous time.
pub enum Evolution {
    Floquet(FloquetCircuit),
    /// Lanczos stepping; works to 24 spins.
    Krylov(Hamiltonian),
    /// Exact eigendecomposition; 12 spins at most.
    Dense { eigenvalues: DVector<f64>, eigenvectors: DMatrix<Complex64>, n_spins: usize },
}

impl Evolution {
    pub fn dense(h: &Hamiltonian) -> Result<Self> {
        let m = h.dense()?;
        let eig = m.symmetric_eigen();
        Ok(Evolution::Dense {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            n_spins: h.n_spins,
        })
    }

    pub fn n_spins(&self) -> usize {
        match self {
            Evolution::Floquet(c) => c.n_spins,
            Evolution::Krylov(h) => h.n_spins,
            Evolution::Dense { n_spins, .. } => *n_spins,
        }
    }

    /// Multiply by the propagator to time `t` (forward) or its inverse.
    pub fn evolve(&self, amps: &mut Vec<Complex64>, t: f64, forward: bool) -> Result<()> {
        if t < 0.0 {
            return Err(Error::Oracle("negative evolution time".into()));
        }
        match self {
            Evolution::Floquet(c) => {
                if (t - t.round()).abs() > 1e-9 {
                    return Err(Error::Oracle(format!("Floquet time {t} is not an integer period count")));
                }
                for _ in 0..(t.round() as u64) {
                    c.apply_period(amps, forward);
                }
                Ok(())
            }
            Evolution::Krylov(h) => {
                lanczos_expv(h, amps, t, forward);
                Ok(())
            }
            Evolution::Dense { eigenvalues, eigenvectors, .. } => {
                let v = DVector::from_column_slice(amps);
                let mut x = eigenvectors.adjoint() * v;
                let sign = if forward { -1.0 } else { 1.0 };
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi *= Complex64::from_polar(1.0, sign * eigenvalues[i] * t);
                }
                let y = eigenvectors * x;
                amps.copy_from_slice(y.as_slice());
                Ok(())
            }
        }
    }

    /// Heisenberg-picture application `op(t) v = U(t)^dagger op U(t) v`.
    pub fn heisenberg(&self, op: &OperatorSpec, t: f64, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut w = v.to_vec();
        self.evolve(&mut w, t, true)?;
        let mut w = op.apply(self.n_spins(), &w);
        self.evolve(&mut w, t, false)?;
        Ok(w)
    }

    /// Dense matrix of `op(t)` built column by column; limited to the dense
    /// spin count. Row-major, length `4^L`.
    pub fn dense_heisenberg(&self, op: &OperatorSpec, t: f64) -> Result<Vec<Complex64>> {
        let n = self.n_spins();
        if n > MAX_DENSE_SPINS {
            return Err(Error::Oracle(format!("dense operator limited to {MAX_DENSE_SPINS} spins")));
        }
        op.validate(n)?;
        let dim = 1usize << n;
        let cols: Vec<Vec<Complex64>> = (0..dim)
            .into_par_iter()
            .map(|k| {
                let mut e = vec![Complex64::new(0.0, 0.0); dim];
                e[k] = Complex64::new(1.0, 0.0);
                self.heisenberg(op, t, &e)
            })
            .collect::<Result<_>>()?;
        let mut m = vec![Complex64::new(0.0, 0.0); dim * dim];
        for (k, col) in cols.iter().enumerate() {
            for j in 0..dim {
                m[j * dim + k] = col[j];
            }
        }
        Ok(m)
    }
}

/// Lanczos approximation of `exp(-+ i H t) v`, sliced adaptively.
fn lanczos_expv(h: &Hamiltonian, v: &mut Vec<Complex64>, t: f64, forward: bool) {
    let dim = v.len();
    let sign = if forward { -1.0 } else { 1.0 };
    let mut remaining = t;
    let mut dt = if h.norm_bound > 0.0 { (2.0 / h.norm_bound).min(t) } else { t };
    while remaining > 1e-15 {
        let step = dt.min(remaining);
        let (out, err) = lanczos_step(h, v, sign * step, dim);
        if err > KRYLOV_TOL * step.max(1e-6) && step > 1e-12 {
            dt = 0.5 * step;
            continue;
        }
        *v = out;
        remaining -= step;
    }
}

/// One Krylov step; returns the propagated vector and an error estimate.
fn lanczos_step(h: &Hamiltonian, v: &[Complex64], theta: f64, dim: usize) -> (Vec<Complex64>, f64) {
    let m_max = dim.min(30);
    let beta0 = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let mut basis: Vec<Vec<Complex64>> = vec![v.iter().map(|a| a / beta0).collect()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![Complex64::new(0.0, 0.0); dim];
    for jj in 0..m_max {
        h.apply(&basis[jj], &mut w);
        // Full reorthogonalization keeps the basis clean at small m.
        for q in &basis {
            let c: Complex64 = q.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
            if q as *const _ == &basis[jj] as *const _ {
                alphas.push(c.re);
            }
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= c * qi;
            }
        }
        let beta = w.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if beta < 1e-13 || jj + 1 == m_max {
            betas.push(beta);
            break;
        }
        betas.push(beta);
        basis.push(w.iter().map(|a| a / beta).collect());
    }
    let m = alphas.len();
    // exp(i theta T) e1 via the small symmetric tridiagonal eigenproblem.
    let mut tm = DMatrix::zeros(m, m);
    for i in 0..m {
        tm[(i, i)] = alphas[i];
        if i + 1 < m {
            tm[(i, i + 1)] = betas[i];
            tm[(i + 1, i)] = betas[i];
        }
    }
    let eig = tm.symmetric_eigen();
    let mut y = vec![Complex64::new(0.0, 0.0); m];
    for (s, &lam) in eig.eigenvalues.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, lam * theta) * eig.eigenvectors[(0, s)];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += phase * eig.eigenvectors[(i, s)];
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); dim];
    for (i, q) in basis.iter().enumerate() {
        let c = y[i] * beta0;
        for (o, qi) in out.iter_mut().zip(q) {
            *o += c * qi;
        }
    }
    let err = betas.last().copied().unwrap_or(0.0) * y.last().map_or(0.0, |c| c.norm()) * beta0;
    (out, err)
}

/// Trace estimation strategy for the correlators.
#[derive(Debug, Clone, Copy)]
pub enum Estimator {
    /// Dense operator construction; exact, limited to the dense spin count.
    Exact,
    /// Average of `n_states` Gaussian random-state expectation values.
    Random { n_states: usize, seed: u64 },
}

/// Correlator value with the estimator's standard error (0 when exact).
#[derive(Debug, Clone, Copy)]
pub struct OtocEstimate {
    pub value: f64,
    pub stderr: f64,
}

fn random_trace_mean<F>(n_spins: usize, n_states: usize, seed: u64, f: F) -> Result<OtocEstimate>
where
    F: Fn(&StateVector) -> Result<f64> + Sync,
{
    if n_states == 0 {
        return Err(Error::Oracle("need at least one random state".into()));
    }
    let samples: Vec<f64> = (0..n_states)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            f(&StateVector::random(n_spins, &mut rng))
        })
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let stderr = if samples.len() > 1 { (var / (n - 1.0)).sqrt() } else { 0.0 };
    Ok(OtocEstimate { value: mean, stderr })
}

/// Sum of the local OTOC over all target spins b for a fixed source spin a,
/// sharing one Heisenberg matrix across the targets. Equivalent to summing
/// [`local_otoc`] over b, but a factor L cheaper.
pub fn local_otoc_sum(ev: &Evolution, a: usize, t: f64) -> Result<f64> {
    let n = ev.n_spins();
    if a >= n {
        return Err(Error::Oracle("spin label out of range".into()));
    }
    let mat = ev.dense_heisenberg(&OperatorSpec::single(a, Axis::Z), t)?;
    let dim = 1usize << n;
    // sum_b z_b(j) z_b(k) depends only on the number of differing bits.
    let mut acc = 0.0;
    for j in 0..dim {
        let row = &mat[j * dim..(j + 1) * dim];
        for (k, v) in row.iter().enumerate() {
            acc += (n as f64 - 2.0 * (j ^ k).count_ones() as f64) * v.norm_sqr();
        }
    }
    Ok(2.0 * n as f64 - 2.0 * acc / dim as f64)
}

/// Local OTOC `-tr([Z_a(t), Z_b]^2) / 2^L`, in [0, 8].
pub fn local_otoc(ev: &Evolution, a: usize, b: usize, t: f64, est: Estimator) -> Result<OtocEstimate> {
    let n = ev.n_spins();
    if a >= n || b >= n {
        return Err(Error::Oracle("spin label out of range".into()));
    }
    let op_a = OperatorSpec::single(a, Axis::Z);
    match est {
        Estimator::Exact => {
            let mat = ev.dense_heisenberg(&op_a, t)?;
            let dim = 1usize << n;
            let zb = |k: usize| if k & (1 << b) == 0 { 1.0 } else { -1.0 };
            let mut trabab = 0.0;
            for j in 0..dim {
                for k in 0..dim {
                    trabab += zb(j) * zb(k) * mat[j * dim + k].norm_sqr();
                }
            }
            Ok(OtocEstimate { value: 2.0 - 2.0 * trabab / dim as f64, stderr: 0.0 })
        }
        Estimator::Random { n_states, seed } => random_trace_mean(n, n_states, seed, |psi| {
            // tr(ABAB)/2^L ~ <psi| Z_a(t) Z_b Z_a(t) Z_b |psi>.
            let mut w = psi.amps.clone();
            apply_pauli(&mut w, b, Axis::Z);
            let mut w = ev.heisenberg(&op_a, t, &w)?;
            apply_pauli(&mut w, b, Axis::Z);
            let w = ev.heisenberg(&op_a, t, &w)?;
            let e: Complex64 = psi.amps.iter().zip(&w).map(|(p, q)| p.conj() * q).sum();
            Ok(2.0 - 2.0 * e.re)
        }),
    }
}

/// Global OTOC `-tr([Z(t), Z]^2) / 2^L` with Z the total Pauli z sum.
pub fn global_otoc(ev: &Evolution, t: f64, est: Estimator) -> Result<OtocEstimate> {
    let n = ev.n_spins();
    let zt = OperatorSpec::TotalSpin { axis: Axis::Z };
    let mz = |k: usize| n as f64 - 2.0 * (k & ((1usize << n) - 1)).count_ones() as f64;
    match est {
        Estimator::Exact => {
            let mat = ev.dense_heisenberg(&zt, t)?;
            let dim = 1usize << n;
            let mut c = 0.0;
            for j in 0..dim {
                for k in 0..dim {
                    c += mat[j * dim + k].norm_sqr() * (mz(j) - mz(k)).powi(2);
                }
            }
            Ok(OtocEstimate { value: c / dim as f64, stderr: 0.0 })
        }
        Estimator::Random { n_states, seed } => random_trace_mean(n, n_states, seed, |psi| {
            // C = 2 tr(Z(t)^2 Z^2)/2^L - 2 tr(Z(t) Z Z(t) Z)/2^L.
            let dim = psi.amps.len();
            let mut w1: Vec<Complex64> =
                (0..dim).map(|k| psi.amps[k] * mz(k) * mz(k)).collect();
            ev.evolve(&mut w1, t, true)?;
            for (k, a) in w1.iter_mut().enumerate() {
                *a *= mz(k) * mz(k);
            }
            ev.evolve(&mut w1, t, false)?;
            let e1: Complex64 = psi.amps.iter().zip(&w1).map(|(p, q)| p.conj() * q).sum();
            let w2: Vec<Complex64> = (0..dim).map(|k| psi.amps[k] * mz(k)).collect();
            let mut w2 = ev.heisenberg(&zt, t, &w2)?;
            for (k, a) in w2.iter_mut().enumerate() {
                *a *= mz(k);
            }
            let w2 = ev.heisenberg(&zt, t, &w2)?;
            let e2: Complex64 = psi.amps.iter().zip(&w2).map(|(p, q)| p.conj() * q).sum();
            Ok(2.0 * (e1.re - e2.re))
        }),
    }
}

/// Placement of the non-evolved operators in the off-diagonal correlator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimePlacement {
    /// `tr([X_a(t), X_b][X_c(t), X_d]) / 2^L` — the default; equal-time
    /// single-site commutators vanish, so mixing times is what carries
    /// signal.
    Mixed,
    /// All four operators at time t. The propagator conjugates the whole
    /// product, so the trace equals its t = 0 value, which vanishes for
    /// distinct single-site Paulis.
    AllAtTime,
}

/// Off-diagonal OTOC term `tr([X_a(t), X_b][X_c(t), X_d]) / 2^L`.
pub fn offdiag_otoc(
    ev: &Evolution,
    (a, b): (usize, usize),
    (c, d): (usize, usize),
    t: f64,
    placement: TimePlacement,
    est: Estimator,
) -> Result<OtocEstimate> {
    let n = ev.n_spins();
    if (a, b) == (c, d) {
        return Err(Error::Oracle("operator pairs must differ".into()));
    }
    if a >= n || b >= n || c >= n || d >= n {
        return Err(Error::Oracle("spin label out of range".into()));
    }
    if placement == TimePlacement::AllAtTime {
        // Conjugation-invariant: equals the equal-time trace, which is zero
        // because single-site Paulis on distinct sites commute.
        return Ok(OtocEstimate { value: 0.0, stderr: 0.0 });
    }
    let op_a = OperatorSpec::single(a, Axis::X);
    let op_c = OperatorSpec::single(c, Axis::X);
    match est {
        Estimator::Exact => {
            let ma = ev.dense_heisenberg(&op_a, t)?;
            let mc = if a == c { None } else { Some(ev.dense_heisenberg(&op_c, t)?) };
            let mc_ref = mc.as_deref().unwrap_or(&ma);
            let dim = 1usize << n;
            let bb = 1usize << b;
            let dd = 1usize << d;
            let mut tr = Complex64::new(0.0, 0.0);
            for j in 0..dim {
                for k in 0..dim {
                    // tr(ABCD) - tr(ABDC) - tr(BACD) + tr(BADC) with B, D
                    // single bit flips.
                    tr += ma[j * dim + (k ^ bb)] * mc_ref[k * dim + (j ^ dd)];
                    tr -= ma[j * dim + (k ^ bb)] * mc_ref[(k ^ dd) * dim + j];
                    tr -= ma[(j ^ bb) * dim + k] * mc_ref[k * dim + (j ^ dd)];
                    tr += ma[(j ^ bb) * dim + k] * mc_ref[(k ^ dd) * dim + j];
                }
            }
            Ok(OtocEstimate { value: tr.re / dim as f64, stderr: 0.0 })
        }
        Estimator::Random { n_states, seed } => random_trace_mean(n, n_states, seed, |psi| {
            let commutator = |op: &OperatorSpec, flip: usize, v: &[Complex64]| -> Result<Vec<Complex64>> {
                let mut xv = v.to_vec();
                apply_pauli(&mut xv, flip, Axis::X);
                let mut out = ev.heisenberg(op, t, &xv)?;
                let av = ev.heisenberg(op, t, v)?;
                let mut xa = av;
                apply_pauli(&mut xa, flip, Axis::X);
                for (o, x) in out.iter_mut().zip(&xa) {
                    *o -= x;
                }
                Ok(out)
            };
            let m2 = commutator(&op_c, d, &psi.amps)?;
            let m1m2 = commutator(&op_a, b, &m2)?;
            let e: Complex64 = psi.amps.iter().zip(&m1m2).map(|(p, q)| p.conj() * q).sum();
            Ok(e.re)
        }),
    }
}

/// Coherence-order spectrum of the evolved total-spin operator via a phase
/// sweep, exact. Orders count half the Pauli-z eigenvalue difference, so
/// they match the spin-1/2 convention; `sum g_n = 1` and
/// `sum n^2 g_n = global_otoc / (4 L)`.
pub fn mqc_exact(ev: &Evolution, t: f64, grid_size: Option<usize>) -> Result<MQCSpectrum> {
    let n = ev.n_spins();
    let zt = OperatorSpec::TotalSpin { axis: Axis::Z };
    let mat = ev.dense_heisenberg(&zt, t)?;
    let dim = 1usize << n;
    let mz = |k: usize| n as i64 - 2 * (k.count_ones() as i64);
    // Bin |matrix element|^2 by coherence order.
    let mut q = vec![0.0; 2 * n + 1];
    for j in 0..dim {
        for k in 0..dim {
            let order = (mz(j) - mz(k)) / 2;
            q[(order + n as i64) as usize] += mat[j * dim + k].norm_sqr();
        }
    }
    let norm = (n * dim) as f64;
    let p = grid_size.unwrap_or(2 * n + 3);
    if p < 2 * n + 1 {
        return Err(Error::Oracle(format!("phase grid of {p} cannot resolve orders up to {n}")));
    }
    let signal: Vec<Complex64> = (0..p)
        .map(|idx| {
            let phi = 2.0 * std::f64::consts::PI * idx as f64 / p as f64;
            let mut s = Complex64::new(0.0, 0.0);
            for (bin, &mass) in q.iter().enumerate() {
                let order = bin as i64 - n as i64;
                s += Complex64::from_polar(mass / norm, order as f64 * phi);
            }
            s
        })
        .collect();
    gn_from_phase_sweep(&signal)
}

/// Second-derivative estimate of the pure-state phase protocol, with the
/// Richardson extrapolation residual.
#[derive(Debug, Clone, Copy)]
pub struct ProtocolEstimate {
    pub second_derivative: f64,
    pub residual: f64,
}

fn total_x_rotation(n: usize, phi: f64, amps: &mut [Complex64]) {
    let c = Complex64::new(phi.cos(), 0.0);
    let s = Complex64::new(0.0, phi.sin());
    for site in 0..n {
        let m = 1usize << site;
        for k in 0..amps.len() {
            if k & m == 0 {
                let (a0, a1) = (amps[k], amps[k | m]);
                amps[k] = c * a0 + s * a1;
                amps[k | m] = s * a0 + c * a1;
            }
        }
    }
}

/// `Z(-t) v` where `Z(-t)` is the total-z operator evolved backward.
fn z_minus_t(ev: &Evolution, t: f64, v: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = ev.n_spins();
    let mut w = v.to_vec();
    ev.evolve(&mut w, t, false)?;
    let w2 = OperatorSpec::TotalSpin { axis: Axis::Z }.apply(n, &w);
    let mut w2 = w2;
    ev.evolve(&mut w2, t, true)?;
    Ok(w2)
}

fn protocol_signal(ev: &Evolution, psi_t: &[Complex64], t: f64, phi: f64) -> Result<f64> {
    let n = ev.n_spins();
    let mut a = psi_t.to_vec();
    total_x_rotation(n, phi, &mut a);
    let b = z_minus_t(ev, t, &a)?;
    let e: Complex64 = a.iter().zip(&b).map(|(p, q)| p.conj() * q).sum();
    Ok(e.re)
}

/// Phase protocol on an arbitrary pure initial state: evolve, apply a
/// global x twist, and read the second phi-derivative of the overlap with
/// the backward-evolved total-z operator at phi = 0.
pub fn phase_protocol_with_state(
    ev: &Evolution,
    initial: &StateVector,
    t: f64,
    h_phi: f64,
) -> Result<ProtocolEstimate> {
    if !(h_phi > 0.0 && h_phi < 1.0) {
        return Err(Error::Oracle("phase step must lie in (0, 1)".into()));
    }
    let mut psi_t = initial.amps.clone();
    ev.evolve(&mut psi_t, t, true)?;
    let f0 = protocol_signal(ev, &psi_t, t, 0.0)?;
    let second = |h: f64| -> Result<f64> {
        let fp = protocol_signal(ev, &psi_t, t, h)?;
        let fm = protocol_signal(ev, &psi_t, t, -h)?;
        Ok((fp - 2.0 * f0 + fm) / (h * h))
    };
    let d1 = second(h_phi)?;
    let d2 = second(0.5 * h_phi)?;
    let extrapolated = (4.0 * d2 - d1) / 3.0;
    Ok(ProtocolEstimate { second_derivative: extrapolated, residual: (extrapolated - d2).abs() })
}

/// Phase protocol with the all-up initial product state.
pub fn phase_protocol_pure(ev: &Evolution, t: f64, h_phi: f64) -> Result<ProtocolEstimate> {
    phase_protocol_with_state(ev, &StateVector::all_up(ev.n_spins()), t, h_phi)
}

/// Closed form of the protocol derivative, `tr([X, rho(t)][X, Z(-t)])` for
/// the pure state `rho(t) = |psi(t)><psi(t)|`.
pub fn phase_protocol_reference(ev: &Evolution, initial: &StateVector, t: f64) -> Result<f64> {
    let n = ev.n_spins();
    let mut psi_t = initial.amps.clone();
    ev.evolve(&mut psi_t, t, true)?;
    let x = OperatorSpec::TotalSpin { axis: Axis::X };
    let u = x.apply(n, &psi_t);
    let bu = z_minus_t(ev, t, &u)?;
    let t1: Complex64 = u.iter().zip(&bu).map(|(p, q)| p.conj() * q).sum();
    let xx = x.apply(n, &u);
    let bpsi = z_minus_t(ev, t, &psi_t)?;
    let t2: Complex64 = xx.iter().zip(&bpsi).map(|(p, q)| p.conj() * q).sum();
    Ok(2.0 * t1.re - 2.0 * t2.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn kicked_ising(n: usize, alpha: f64, seed: u64) -> Evolution {
        Evolution::Floquet(
            FloquetCircuit::new(&FloquetSpec {
                n_spins: n,
                alpha,
                j: std::f64::consts::FRAC_PI_4,
                b: std::f64::consts::FRAC_PI_4,
                h_std: 0.6,
                disorder_seed: seed,
            })
            .unwrap(),
        )
    }

    #[test]
    fn diagonal_circuit_preserves_probabilities() {
        let circ = FloquetCircuit::new(&FloquetSpec {
            n_spins: 5,
            alpha: 2.0,
            j: 0.8,
            b: 0.0,
            h_std: 0.3,
            disorder_seed: 4,
        })
        .unwrap();
        let ev = Evolution::Floquet(circ);
        let mut s = StateVector::basis(5, 13);
        ev.evolve(&mut s.amps, 7.0, true).unwrap();
        let probs: Vec<f64> = s.amps.iter().map(|a| a.norm_sqr()).collect();
        assert_relative_eq!(probs[13], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn infinite_alpha_keeps_nearest_neighbors_only() {
        let spec = FloquetSpec {
            n_spins: 6,
            alpha: f64::INFINITY,
            j: 0.7,
            b: 0.3,
            h_std: 0.2,
            disorder_seed: 9,
        };
        let circ = FloquetCircuit::new(&spec).unwrap();
        let h = spec.fields();
        for k in 0..(1usize << 6) {
            let z = |r: usize| if k & (1 << r) == 0 { 1.0 } else { -1.0 };
            let mut e = 0.0;
            for r in 0..6 {
                if r + 1 < 6 {
                    e += 0.7 * z(r) * z(r + 1);
                }
                e += h[r] * z(r);
            }
            assert_relative_eq!(circ.diag_phase[k], e, epsilon = 1e-10);
        }
    }

    #[test]
    fn floquet_period_is_unitary_and_invertible() {
        let ev = kicked_ising(8, f64::INFINITY, 3);
        let mut rng = task_rng(11, 0);
        let s0 = StateVector::random(8, &mut rng);
        let mut s = s0.clone();
        for _ in 0..50 {
            ev.evolve(&mut s.amps, 1.0, true).unwrap();
            assert!((s.norm() - 1.0).abs() < 1e-12);
        }
        ev.evolve(&mut s.amps, 50.0, false).unwrap();
        assert!((s.inner(&s0).norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn floquet_rejects_fractional_time() {
        let ev = kicked_ising(4, 2.0, 1);
        let mut s = StateVector::all_up(4);
        assert!(ev.evolve(&mut s.amps, 1.5, true).is_err());
    }

    #[test]
    fn hamiltonians_are_hermitian() {
        let d = chain_couplings(5, 2.0, 1.0);
        for h in [
            Hamiltonian::double_quantum(&d).unwrap(),
            Hamiltonian::dipolar_yy(&d).unwrap(),
            Hamiltonian::generic_random(&d, 42).unwrap(),
        ] {
            let m = h.dense().unwrap();
            let adj = m.adjoint();
            let drift = (&m - &adj).iter().map(|c| c.norm()).fold(0.0, f64::max);
            assert!(drift < 1e-12);
        }
    }

    #[test]
    fn generic_random_is_seed_reproducible() {
        let d = chain_couplings(4, 2.0, 1.0);
        let a = Hamiltonian::generic_random(&d, 7).unwrap().dense().unwrap();
        let b = Hamiltonian::generic_random(&d, 7).unwrap().dense().unwrap();
        let c = Hamiltonian::generic_random(&d, 8).unwrap().dense().unwrap();
        assert_eq!(a, b);
        assert!((&a - &c).iter().map(|x| x.norm()).fold(0.0, f64::max) > 1e-6);
    }

    #[test]
    fn krylov_matches_dense_evolution() {
        let d = chain_couplings(6, 2.0, 0.9);
        let h = Hamiltonian::dipolar_yy(&d).unwrap();
        let dense = Evolution::dense(&h).unwrap();
        let krylov = Evolution::Krylov(h);
        let mut rng = task_rng(5, 1);
        let s0 = StateVector::random(6, &mut rng);
        let mut a = s0.amps.clone();
        let mut b = s0.amps.clone();
        dense.evolve(&mut a, 2.3, true).unwrap();
        krylov.evolve(&mut b, 2.3, true).unwrap();
        let fid: Complex64 = a.iter().zip(&b).map(|(p, q)| p.conj() * q).sum();
        assert!((fid.norm() - 1.0).abs() < 1e-9);
        let dev = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(dev < 1e-8, "max deviation {dev}");
    }

    #[test]
    fn local_otoc_vanishes_at_time_zero() {
        let ev = kicked_ising(6, 2.0, 2);
        for (a, b) in [(0, 0), (0, 3)] {
            let e = local_otoc(&ev, a, b, 0.0, Estimator::Exact).unwrap();
            assert!(e.value.abs() < 1e-12);
        }
    }

    #[test]
    fn local_otoc_sum_matches_per_target_sum() {
        let ev = kicked_ising(6, 2.0, 2);
        let t = 3.0;
        for a in [0usize, 2, 5] {
            let fast = local_otoc_sum(&ev, a, t).unwrap();
            let slow: f64 = (0..6)
                .map(|b| local_otoc(&ev, a, b, t, Estimator::Exact).unwrap().value)
                .sum();
            assert!((fast - slow).abs() < 1e-10, "a={a}: {fast} vs {slow}");
        }
    }

    #[test]
    fn local_otoc_respects_strict_light_cone() {
        // Nearest-neighbor circuit: the support of Z_0(t) reaches at most
        // site t, so site 9 is untouched at t = 3.
        let ev = kicked_ising(10, f64::INFINITY, 6);
        let inside = local_otoc(&ev, 0, 1, 3.0, Estimator::Exact).unwrap();
        let outside = local_otoc(&ev, 0, 9, 3.0, Estimator::Exact).unwrap();
        assert!(inside.value > 0.05, "inside cone {}", inside.value);
        assert!(outside.value.abs() < 1e-10, "outside cone {}", outside.value);
    }

    #[test]
    fn global_otoc_vanishes_at_time_zero_and_under_conserving_dynamics() {
        let ev = kicked_ising(6, 2.0, 8);
        assert!(global_otoc(&ev, 0.0, Estimator::Exact).unwrap().value.abs() < 1e-12);
        // zz couplings plus z fields commute with total Z.
        let mut terms = vec![];
        for a in 0..5usize {
            terms.push((0.7, vec![(a, Axis::Z), (a + 1, Axis::Z)]));
            terms.push((0.3 * a as f64, vec![(a, Axis::Z)]));
        }
        let h = Hamiltonian::new(6, &terms).unwrap();
        let ev_cons = Evolution::dense(&h).unwrap();
        for t in [0.5, 2.0, 7.0] {
            assert!(global_otoc(&ev_cons, t, Estimator::Exact).unwrap().value.abs() < 1e-9);
        }
    }

    #[test]
    fn random_state_estimator_agrees_with_exact_global() {
        let ev = kicked_ising(8, 2.0, 12);
        let exact = global_otoc(&ev, 4.0, Estimator::Exact).unwrap();
        let est = global_otoc(&ev, 4.0, Estimator::Random { n_states: 20, seed: 31 }).unwrap();
        let dev = (est.value - exact.value).abs() / est.stderr.max(1e-9);
        assert!(dev < 4.0, "deviation {dev} sigma");
    }

    #[test]
    fn random_state_estimator_agrees_with_exact_local() {
        let ev = kicked_ising(8, 2.0, 12);
        let exact = local_otoc(&ev, 2, 5, 3.0, Estimator::Exact).unwrap();
        let est = local_otoc(&ev, 2, 5, 3.0, Estimator::Random { n_states: 20, seed: 77 }).unwrap();
        let dev = (est.value - exact.value).abs() / est.stderr.max(1e-9);
        assert!(dev < 4.0, "deviation {dev} sigma");
    }

    #[test]
    fn offdiag_vanishes_at_time_zero_and_all_at_time() {
        let ev = kicked_ising(6, 2.0, 5);
        let e0 = offdiag_otoc(&ev, (0, 2), (0, 4), 0.0, TimePlacement::Mixed, Estimator::Exact).unwrap();
        assert!(e0.value.abs() < 1e-12);
        let et = offdiag_otoc(&ev, (0, 2), (0, 4), 5.0, TimePlacement::AllAtTime, Estimator::Exact).unwrap();
        assert_eq!(et.value, 0.0);
    }

    #[test]
    fn offdiag_estimator_matches_exact() {
        let ev = kicked_ising(7, 2.0, 15);
        let exact =
            offdiag_otoc(&ev, (0, 2), (0, 5), 4.0, TimePlacement::Mixed, Estimator::Exact).unwrap();
        let est = offdiag_otoc(
            &ev,
            (0, 2),
            (0, 5),
            4.0,
            TimePlacement::Mixed,
            Estimator::Random { n_states: 24, seed: 9 },
        )
        .unwrap();
        let dev = (est.value - exact.value).abs() / est.stderr.max(1e-9);
        assert!(dev < 4.5, "deviation {dev} sigma");
    }

    #[test]
    fn mqc_at_time_zero_is_a_delta() {
        let ev = kicked_ising(6, 2.0, 4);
        let spec = mqc_exact(&ev, 0.0, None).unwrap();
        assert_relative_eq!(spec.value(0), 1.0, epsilon = 1e-12);
        assert!(spec.second_moment().abs() < 1e-12);
    }

    #[test]
    fn double_quantum_coherences_sit_on_even_orders() {
        let d = chain_couplings(6, 2.0, 1.0);
        let h = Hamiltonian::double_quantum(&d).unwrap();
        let ev = Evolution::dense(&h).unwrap();
        let spec = mqc_exact(&ev, 1.3, None).unwrap();
        for (&n, &g) in spec.n_values.iter().zip(&spec.g) {
            if n.rem_euclid(2) != 0 {
                assert!(g.abs() < 1e-12, "odd order {n} has weight {g}");
            }
        }
        assert!(spec.second_moment() > 1e-3);
    }

    #[test]
    fn mqc_second_moment_equals_global_otoc() {
        let d = chain_couplings(6, 1.5, 0.8);
        let h = Hamiltonian::generic_random(&d, 19).unwrap();
        let ev = Evolution::dense(&h).unwrap();
        for t in [0.4, 1.0, 2.5] {
            let spec = mqc_exact(&ev, t, None).unwrap();
            let cg = global_otoc(&ev, t, Estimator::Exact).unwrap().value;
            assert_relative_eq!(spec.second_moment(), cg / (4.0 * 6.0), epsilon = 1e-9);
        }
    }

    #[test]
    fn diagonal_terms_dominate_off_diagonals_late() {
        let ev = kicked_ising(8, 2.0, 21);
        let t = 6.0;
        let diag = local_otoc(&ev, 0, 4, t, Estimator::Exact).unwrap().value;
        let mut max_off = 0.0f64;
        for r in 2..8usize {
            let v = offdiag_otoc(&ev, (0, 1), (0, r), t, TimePlacement::Mixed, Estimator::Exact)
                .unwrap()
                .value;
            max_off = max_off.max(v.abs());
        }
        assert!(max_off < diag, "off {max_off} vs diag {diag}");
    }

    #[test]
    fn protocol_matches_closed_form() {
        let ev = kicked_ising(6, 2.0, 33);
        let est = phase_protocol_pure(&ev, 3.0, 1e-2).unwrap();
        let reference =
            phase_protocol_reference(&ev, &StateVector::all_up(6), 3.0).unwrap();
        assert!(
            (est.second_derivative - reference).abs() < 1e-7 * reference.abs().max(1.0),
            "numeric {} vs closed form {reference}",
            est.second_derivative
        );
        // The residual is the size of the h^2 correction that Richardson
        // removed, so it is small relative to the value, not absolutely.
        assert!(est.residual < 1e-4 * reference.abs().max(1.0));
    }

    #[test]
    fn protocol_time_zero_matches_direct_commutator_algebra() {
        // At t = 0 the closed form is 2<XZX> - 2<X^2 Z> on the initial
        // state, which for all-up evaluates to -4L.
        let l = 5;
        let ev = kicked_ising(l, 2.0, 1);
        let reference = phase_protocol_reference(&ev, &StateVector::all_up(l), 0.0).unwrap();
        assert_relative_eq!(reference, -4.0 * l as f64, epsilon = 1e-9);
        let est = phase_protocol_pure(&ev, 0.0, 1e-2).unwrap();
        assert!((est.second_derivative - reference).abs() < 1e-6);
    }

    #[test]
    fn x_conserving_dynamics_gives_a_null_protocol_on_x_polarized_state() {
        // H built from X's commutes with the twist; with an x-polarized
        // initial state the commutator with the twist axis vanishes.
        let mut terms = vec![];
        for a in 0..5usize {
            terms.push((0.8, vec![(a, Axis::X), (a + 1, Axis::X)]));
            terms.push((0.2, vec![(a, Axis::X)]));
        }
        let h = Hamiltonian::new(6, &terms).unwrap();
        let ev = Evolution::dense(&h).unwrap();
        let init = StateVector::all_plus(6);
        for t in [0.0, 1.0, 3.0] {
            let est = phase_protocol_with_state(&ev, &init, t, 1e-2).unwrap();
            assert!(est.second_derivative.abs() < 1e-7, "t={t}: {}", est.second_derivative);
        }
    }

    #[test]
    fn protocol_tracks_global_otoc_shape() {
        let ev = kicked_ising(8, 2.0, 44);
        let times = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut proto = Vec::new();
        let mut otoc = Vec::new();
        for &t in &times {
            proto.push(-phase_protocol_pure(&ev, t, 1e-2).unwrap().second_derivative);
            otoc.push(global_otoc(&ev, t, Estimator::Exact).unwrap().value);
        }
        let corr = pearson(&proto, &otoc);
        assert!(corr > 0.9, "correlation {corr}");
    }

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt().max(1e-300)
    }

    #[test]
    fn operator_spec_rejects_bad_strings() {
        assert!(OperatorSpec::PauliString { factors: vec![] }.validate(4).is_err());
        assert!(OperatorSpec::PauliString { factors: vec![(5, Axis::X)] }.validate(4).is_err());
        assert!(OperatorSpec::PauliString { factors: vec![(1, Axis::X), (1, Axis::Z)] }
            .validate(4)
            .is_err());
    }
}
