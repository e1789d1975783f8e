//! Stochastic model on the cluster-size / coherence-order grid.
//!
//! States are labeled by the Pauli-string weight `K` (number of non-identity
//! factors) and the coherence order `n`. Transition rates are proportional
//! to the number of double-quantum interaction terms connecting the states,
//! expressed through the combinatorial counts `Q(K, n)`. Two evolution
//! conventions are provided: a discrete jump chain (per-step normalized
//! outflow) and continuous time with the unnormalized rates.

use statrs::function::gamma::ln_gamma;

use crate::mqc::MQCSpectrum;
use crate::{Error, Result};

fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `ln Q(K, n)`: the log of the number of weight-`K` Pauli strings with
/// coherence order `n`. Negative `n` by symmetry; `-inf` when the count is
/// zero.
pub fn q_ln(k: u64, n: i64) -> f64 {
    let n = n.unsigned_abs();
    if n > k {
        return f64::NEG_INFINITY;
    }
    // Streaming log-sum-exp over c_plus.
    let mut max = f64::NEG_INFINITY;
    let mut terms = Vec::new();
    let c_hi = (k + n) / 2;
    for c in n..=c_hi {
        let t = ln_choose(k, c) + ln_choose(k - c, c - n);
        if t > max {
            max = t;
        }
        terms.push(t);
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Exact integer `Q(K, n)` for cross-checking the log-space evaluation.
/// Overflows u128 well above the `K <= 30` range it is used for.
pub fn q_exact(k: u64, n: i64) -> u128 {
    let n = n.unsigned_abs();
    if n > k {
        return 0;
    }
    fn choose(n: u64, k: u64) -> u128 {
        if k > n {
            return 0;
        }
        let k = k.min(n - k);
        let mut acc: u128 = 1;
        for i in 0..k {
            acc = acc * (n - i) as u128 / (i + 1) as u128;
        }
        acc
    }
    (n..=k)
        .map(|c| choose(k, c) * choose(k - c, c.wrapping_sub(n)))
        .sum()
}

/// The four outgoing channels from a `(K, n)` state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionRates {
    /// to (K+1, n+2)
    pub grow_raise: f64,
    /// to (K+1, n-2)
    pub grow_lower: f64,
    /// to (K-1, n+2)
    pub shrink_raise: f64,
    /// to (K-1, n-2)
    pub shrink_lower: f64,
}

impl TransitionRates {
    pub fn total(&self) -> f64 {
        self.grow_raise + self.grow_lower + self.shrink_raise + self.shrink_lower
    }
}

/// Double-quantum transition rates out of `(K, n)` in an `N`-spin system.
pub fn transition_rates(k: u64, n: i64, n_total: u64) -> Result<TransitionRates> {
    if n_total < 2 {
        return Err(Error::Kn("N must be >= 2".into()));
    }
    if k < 1 || k > n_total || n.unsigned_abs() > k {
        return Err(Error::Kn(format!("state (K={k}, n={n}) out of range for N={n_total}")));
    }
    let ln_q_kn = q_ln(k, n);
    if ln_q_kn == f64::NEG_INFINITY {
        return Err(Error::Kn(format!("state (K={k}, n={n}) unreachable: Q = 0")));
    }
    let nf = n_total as f64;
    let kf = k as f64;
    let grow_factor = kf * (nf - kf) / (nf - 1.0);
    let shrink_factor = kf * (kf - 1.0) / (nf - 1.0);
    let q_ratio = |ln_a: f64, ln_b: f64| -> f64 {
        let m = ln_a.max(ln_b);
        if m == f64::NEG_INFINITY {
            0.0
        } else {
            (m - ln_q_kn).exp() * ((ln_a - m).exp() + (ln_b - m).exp())
        }
    };
    let grow = |dn: i64| q_ratio(q_ln(k - 1, n), q_ln(k - 1, n + dn / 2));
    let shrink = |dn: i64| {
        if k < 2 {
            0.0
        } else {
            q_ratio(q_ln(k - 2, n + dn), q_ln(k - 2, n + dn / 2))
        }
    };
    Ok(TransitionRates {
        grow_raise: grow_factor * grow(2),
        grow_lower: grow_factor * grow(-2),
        shrink_raise: shrink_factor * shrink(2),
        shrink_lower: shrink_factor * shrink(-2),
    })
}

/// Probability mass over the `(K, n)` grid.
#[derive(Debug, Clone)]
pub struct KnDistribution {
    pub n_total: u64,
    pub step_index: usize,
    /// Time in rate units; `None` in the jump-chain convention.
    pub time: Option<f64>,
    /// Row-major storage: row K-1 holds entries for n in [-K, K].
    mass: Vec<Vec<f64>>,
}

impl KnDistribution {
    /// Delta distribution at (K=1, n=0).
    pub fn initial(n_total: u64) -> Self {
        let mut mass: Vec<Vec<f64>> = (1..=n_total).map(|k| vec![0.0; 2 * k as usize + 1]).collect();
        mass[0][1] = 1.0;
        KnDistribution { n_total, step_index: 0, time: None, mass }
    }

    pub fn get(&self, k: u64, n: i64) -> f64 {
        if k < 1 || k > self.n_total || n.unsigned_abs() > k {
            return 0.0;
        }
        self.mass[(k - 1) as usize][(n + k as i64) as usize]
    }

    fn set(&mut self, k: u64, n: i64, v: f64) {
        self.mass[(k - 1) as usize][(n + k as i64) as usize] = v;
    }

    fn add(&mut self, k: u64, n: i64, v: f64) {
        self.mass[(k - 1) as usize][(n + k as i64) as usize] += v;
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().map(|row| row.iter().sum::<f64>()).sum()
    }

    pub fn iter_support(&self) -> impl Iterator<Item = (u64, i64, f64)> + '_ {
        self.mass.iter().enumerate().flat_map(|(ki, row)| {
            let k = ki as u64 + 1;
            row.iter().enumerate().filter_map(move |(idx, &m)| {
                (m > 0.0).then(|| (k, idx as i64 - k as i64, m))
            })
        })
    }

    pub fn mean_cluster_size(&self) -> f64 {
        self.iter_support().map(|(k, _, m)| k as f64 * m).sum()
    }

    /// Marginal over K: the MQC spectrum `g_n`.
    pub fn mqc(&self) -> MQCSpectrum {
        let nmax = self.n_total as i64;
        let mut g = vec![0.0; (2 * nmax + 1) as usize];
        for (_, n, m) in self.iter_support() {
            g[(n + nmax) as usize] += m;
        }
        let n_values = (-nmax..=nmax).collect();
        MQCSpectrum::new(n_values, g)
    }

    /// Second moment of the coherence order.
    pub fn second_moment(&self) -> f64 {
        self.iter_support().map(|(_, n, m)| (n * n) as f64 * m).sum()
    }
}

/// Marginal `g_n` of a distribution. Convenience wrapper around
/// [`KnDistribution::mqc`].
pub fn mqc_from_kn(dist: &KnDistribution) -> MQCSpectrum {
    dist.mqc()
}

/// Precomputed outgoing channels for every state of an `N`-spin grid.
struct RateTable {
    n_total: u64,
    rates: Vec<Vec<TransitionRates>>,
}

impl RateTable {
    fn new(n_total: u64) -> Self {
        let rates = (1..=n_total)
            .map(|k| {
                (-(k as i64)..=k as i64)
                    .map(|n| {
                        transition_rates(k, n, n_total).unwrap_or(TransitionRates {
                            grow_raise: 0.0,
                            grow_lower: 0.0,
                            shrink_raise: 0.0,
                            shrink_lower: 0.0,
                        })
                    })
                    .collect()
            })
            .collect();
        RateTable { n_total, rates }
    }

    fn get(&self, k: u64, n: i64) -> &TransitionRates {
        &self.rates[(k - 1) as usize][(n + k as i64) as usize]
    }

    /// Route mass out of each state along the four channels. `normalize`
    /// selects the jump-chain convention; otherwise mass flows as
    /// `rate * dt`.
    fn flow(&self, dist: &KnDistribution, out: &mut KnDistribution, normalize: bool, dt: f64) {
        for (k, n, m) in dist.iter_support() {
            let r = self.get(k, n);
            let total = r.total();
            if total <= 0.0 {
                out.add(k, n, m);
                continue;
            }
            let scale = if normalize { m / total } else { m * dt };
            if !normalize {
                out.add(k, n, m - m * dt * total);
            }
            let clip = |kk: u64, nn: i64| kk >= 1 && kk <= self.n_total && nn.unsigned_abs() <= kk;
            let mut route = |kk: u64, nn: i64, rate: f64| {
                if rate > 0.0 {
                    debug_assert!(clip(kk, nn));
                    out.add(kk, nn, scale * rate);
                }
            };
            route(k + 1, n + 2, r.grow_raise);
            route(k + 1, n - 2, r.grow_lower);
            route(k - 1, n + 2, r.shrink_raise);
            route(k - 1, n - 2, r.shrink_lower);
        }
    }

    fn max_outflow(&self, dist: &KnDistribution, threshold: f64) -> f64 {
        dist.iter_support()
            .filter(|&(_, _, m)| m > threshold)
            .map(|(k, n, _)| self.get(k, n).total())
            .fold(0.0, f64::max)
    }
}

/// Discrete jump-chain evolution from the delta at (K=1, n=0). Returns the
/// distribution after every step, including step 0.
pub fn evolve_master(n_total: u64, n_steps: usize) -> Result<Vec<KnDistribution>> {
    if n_total < 2 {
        return Err(Error::Kn("N must be >= 2".into()));
    }
    let table = RateTable::new(n_total);
    let mut seq = Vec::with_capacity(n_steps + 1);
    seq.push(KnDistribution::initial(n_total));
    for step in 1..=n_steps {
        let prev = seq.last().unwrap();
        let mut next = KnDistribution::initial(n_total);
        next.set(1, 0, 0.0);
        next.step_index = step;
        table.flow(prev, &mut next, true, 0.0);
        seq.push(next);
    }
    Ok(seq)
}

/// Continuous-time evolution with unnormalized rates, sampled at
/// `sample_times` (ascending). Forward-Euler stepping with a
/// positivity-preserving step chosen from the largest active outflow.
pub fn evolve_master_ct(n_total: u64, sample_times: &[f64]) -> Result<Vec<KnDistribution>> {
    if n_total < 2 {
        return Err(Error::Kn("N must be >= 2".into()));
    }
    if sample_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Kn("sample times must be strictly ascending".into()));
    }
    let table = RateTable::new(n_total);
    let mut dist = KnDistribution::initial(n_total);
    dist.time = Some(0.0);
    let mut t = 0.0;
    let mut out = Vec::with_capacity(sample_times.len());
    for (i, &ts) in sample_times.iter().enumerate() {
        while t < ts {
            let max_rate = table.max_outflow(&dist, 1e-15).max(1e-12);
            let dt = (0.2 / max_rate).min(ts - t);
            let mut next = KnDistribution::initial(n_total);
            next.set(1, 0, 0.0);
            table.flow(&dist, &mut next, false, dt);
            next.time = Some(t + dt);
            dist = next;
            t += dt;
        }
        dist.step_index = i;
        out.push(dist.clone());
    }
    Ok(out)
}

/// Second moment of `g_n` after each jump-chain step.
pub fn otoc_series_kn(n_total: u64, n_steps: usize) -> Result<Vec<f64>> {
    Ok(evolve_master(n_total, n_steps)?.iter().map(|d| d.second_moment()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn q_small_values() {
        assert_eq!(q_exact(1, 0), 1);
        assert_eq!(q_exact(2, 2), 1);
        assert_eq!(q_exact(3, 4), 0);
        assert_eq!(q_exact(0, 0), 1);
        assert_relative_eq!(q_ln(1, 0).exp(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(q_ln(2, 2).exp(), 1.0, epsilon = 1e-12);
        assert_eq!(q_ln(5, 6), f64::NEG_INFINITY);
    }

    #[test]
    fn q_log_matches_exact_up_to_k30() {
        for k in 0..=30u64 {
            for n in -(k as i64)..=k as i64 {
                let exact = q_exact(k, n);
                if exact == 0 {
                    assert_eq!(q_ln(k, n), f64::NEG_INFINITY, "K={k} n={n}");
                } else {
                    let rel = (q_ln(k, n) - (exact as f64).ln()).abs();
                    assert!(rel < 1e-10, "K={k} n={n} rel log err {rel}");
                }
            }
        }
    }

    #[test]
    fn q_symmetric_in_n() {
        for k in 0..=20u64 {
            for n in 0..=k as i64 {
                assert_eq!(q_exact(k, n), q_exact(k, -n));
            }
        }
    }

    #[test]
    fn vandermonde_identity() {
        // sum_x C(K,x) C(K,n+x) = C(2K, K+n), exact integers.
        fn choose(n: u64, k: u64) -> u128 {
            if k > n {
                return 0;
            }
            let k = k.min(n - k);
            let mut acc: u128 = 1;
            for i in 0..k {
                acc = acc * (n - i) as u128 / (i + 1) as u128;
            }
            acc
        }
        for k in 1..=30u64 {
            for n in 0..=k {
                let lhs: u128 = (0..=k).map(|x| choose(k, x) * choose(k, n + x)).sum();
                assert_eq!(lhs, choose(2 * k, k + n), "K={k} n={n}");
            }
        }
    }

    #[test]
    fn rates_at_boundaries() {
        let r = transition_rates(1, 0, 6).unwrap();
        assert_eq!(r.shrink_raise, 0.0);
        assert_eq!(r.shrink_lower, 0.0);
        // K=1, n=0, N=6: growth rate (1*5/5) * [Q(0,0)+Q(0,1)]/Q(1,0) = 1.
        assert_relative_eq!(r.grow_raise, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.grow_lower, 1.0, epsilon = 1e-12);

        let r = transition_rates(6, 0, 6).unwrap();
        assert_eq!(r.grow_raise, 0.0);
        assert_eq!(r.grow_lower, 0.0);
    }

    #[test]
    fn unreachable_state_errors() {
        // Q(2, 1) = 0: a weight-2 double-quantum string cannot have odd n...
        assert_eq!(q_exact(2, 1), 2); // C(2,1) C(1,0) = 2, actually reachable
        // |n| > K is out of range.
        assert!(transition_rates(2, 3, 6).is_err());
    }

    #[test]
    fn jump_chain_conserves_mass_and_even_support() {
        let seq = evolve_master(6, 40).unwrap();
        assert_eq!(seq[0].get(1, 0), 1.0);
        for d in &seq {
            assert_relative_eq!(d.total_mass(), 1.0, epsilon = 1e-12);
            for (_, n, m) in d.iter_support() {
                assert!(n % 2 == 0 || m == 0.0, "odd-n mass {m} at n={n}");
            }
        }
    }

    #[test]
    fn stationary_spectrum_matches_brute_force_eigenvector() {
        // Brute-force stationary distribution of the lazy jump chain for
        // N <= 8, compared against the long-run (two-step averaged) evolution.
        let n_total = 8u64;
        let mut states = Vec::new();
        for k in 1..=n_total {
            for n in (-(k as i64)..=k as i64).filter(|n| n % 2 == 0) {
                if q_exact(k, n) > 0 {
                    states.push((k, n));
                }
            }
        }
        let idx = |k: u64, n: i64| states.iter().position(|&s| s == (k, n));
        let m = states.len();
        // Lazy transition matrix P' = (P + I) / 2 to kill the period-2 cycle.
        let mut p = vec![vec![0.0f64; m]; m];
        for (i, &(k, n)) in states.iter().enumerate() {
            let r = transition_rates(k, n, n_total).unwrap();
            let tot = r.total();
            p[i][i] += 0.5;
            let mut add = |kk: u64, nn: i64, rate: f64| {
                if rate > 0.0 {
                    if let Some(j) = idx(kk, nn) {
                        p[i][j] += 0.5 * rate / tot;
                    }
                }
            };
            add(k + 1, n + 2, r.grow_raise);
            add(k + 1, n - 2, r.grow_lower);
            add(k - 1, n + 2, r.shrink_raise);
            add(k - 1, n - 2, r.shrink_lower);
        }
        let mut pi = vec![1.0 / m as f64; m];
        for _ in 0..20_000 {
            let mut next = vec![0.0; m];
            for i in 0..m {
                for j in 0..m {
                    next[j] += pi[i] * p[i][j];
                }
            }
            pi = next;
        }
        let stat_m2: f64 = states.iter().zip(&pi).map(|(&(_, n), &w)| (n * n) as f64 * w).sum();

        let seq = evolve_master(n_total, 4000).unwrap();
        let evolved_m2 =
            0.5 * (seq[seq.len() - 1].second_moment() + seq[seq.len() - 2].second_moment());
        assert_relative_eq!(evolved_m2, stat_m2, max_relative = 1e-6);
    }

    #[test]
    fn mqc_marginal_is_symmetric_and_normalized() {
        let seq = evolve_master(21, 200).unwrap();
        let g = mqc_from_kn(&seq[150]);
        let sum: f64 = g.g.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-10);
        for (i, &n) in g.n_values.iter().enumerate() {
            let j = g.n_values.iter().position(|&x| x == -n).unwrap();
            assert!((g.g[i] - g.g[j]).abs() < 1e-9, "asymmetry at n={n}");
        }
        // Peaked at n = 0.
        let i0 = g.n_values.iter().position(|&x| x == 0).unwrap();
        assert!(g.g.iter().enumerate().all(|(i, &v)| v <= g.g[i0] + 1e-12 || i == i0));
    }

    #[test]
    fn second_moment_bounded_and_monotone_in_n() {
        let mut last = 0.0;
        for &n_total in &[50u64, 100, 200, 400] {
            let seq = evolve_master(n_total, 3 * n_total as usize).unwrap();
            let m2 = seq.last().unwrap().second_moment();
            assert!(m2 <= (n_total * n_total) as f64);
            assert!(m2 > last, "saturation not monotone in N: {m2} after {last}");
            last = m2;
        }
    }

    #[test]
    fn ct_mode_conserves_mass() {
        let seq = evolve_master_ct(30, &[0.5, 1.0, 2.0]).unwrap();
        for d in &seq {
            assert_relative_eq!(d.total_mass(), 1.0, epsilon = 1e-9);
        }
        assert!(seq[2].second_moment() > seq[0].second_moment());
    }
}
