//! Continuous-time stochastic spreading of operator occupation.
//!
//! Spins sit on molecules; an empty spin becomes occupied at the summed
//! incident rate from occupied spins on *other* molecules (intra-molecular
//! rates vanish under the tumbling average), and an occupied spin empties at
//! `death_ratio` times the same incident pressure. The mean occupied count
//! `N_op(t)` is the global-OTOC proxy.
//!
//! Event selection uses per-molecule cached incident-rate sums in a Fenwick
//! tree, so each flip costs `O(neighbors x log n_molecules)`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::lattice::{pairwise_rate, CouplingKernel, SiteSet};
use crate::seeding::task_rng;
use crate::{Error, Result};

/// Fenwick tree over per-molecule event weights.
struct Fenwick {
    tree: Vec<f64>,
    values: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0.0; n + 1], values: vec![0.0; n] }
    }

    fn set(&mut self, i: usize, v: f64) {
        let delta = v - self.values[i];
        self.values[i] = v;
        let mut idx = i + 1;
        while idx < self.tree.len() {
            self.tree[idx] += delta;
            idx += idx & idx.wrapping_neg();
        }
    }

    fn prefix_total(&self) -> f64 {
        // Cheap running total from the tree root path.
        let mut acc = 0.0;
        let mut idx = self.values.len();
        while idx > 0 {
            acc += self.tree[idx];
            idx -= idx & idx.wrapping_neg();
        }
        acc
    }

    /// Largest index whose prefix sum is <= target.
    fn find(&self, mut target: f64) -> usize {
        let n = self.values.len();
        let mut pos = 0usize;
        let mut mask = n.next_power_of_two();
        while mask > 0 {
            let next = pos + mask;
            if next <= n && self.tree[next] < target {
                target -= self.tree[next];
                pos = next;
            }
            mask >>= 1;
        }
        pos.min(n - 1)
    }
}

/// Interaction network for the spreading model: molecules with `M` spins
/// each and pairwise rates between molecules. Immutable and shared across
/// parallel trials.
#[derive(Debug, Clone)]
pub struct SpreadNetwork {
    pub spins_per_molecule: usize,
    /// Per molecule: (other molecule, per-spin-pair rate).
    neighbors: Vec<Vec<(u32, f64)>>,
    /// Compact molecule id -> original site id.
    pub site_ids: Vec<usize>,
    /// Original site id -> compact molecule id.
    site_to_molecule: Vec<Option<u32>>,
    /// Positions of the compact molecules (nm), for radial profiles.
    pub positions: Vec<[f64; 3]>,
}

impl SpreadNetwork {
    /// Build from a (possibly diluted) site set and kernel. `rate_scale`
    /// multiplies every pairwise rate (the model rescaling factor).
    pub fn from_lattice(sites: &SiteSet, kernel: &CouplingKernel, rate_scale: f64) -> Result<Self> {
        kernel.validate()?;
        if sites.is_degenerate() {
            return Err(Error::Spread("site set has no occupied molecules".into()));
        }
        let mut site_to_molecule = vec![None; sites.n_sites()];
        let mut site_ids = Vec::new();
        let mut positions = Vec::new();
        for i in 0..sites.n_sites() {
            if sites.occupied_molecule_mask[i] {
                site_to_molecule[i] = Some(site_ids.len() as u32);
                site_ids.push(i);
                positions.push(sites.positions[i]);
            }
        }
        let n = site_ids.len();
        let mut neighbors: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for a in 0..n {
            for b in (a + 1)..n {
                let rate = rate_scale * pairwise_rate(sites, site_ids[a], site_ids[b], kernel)?;
                if rate > 0.0 {
                    neighbors[a].push((b as u32, rate));
                    neighbors[b].push((a as u32, rate));
                }
            }
        }
        Ok(SpreadNetwork {
            spins_per_molecule: sites.spins_per_site,
            neighbors,
            site_ids,
            site_to_molecule,
            positions,
        })
    }

    /// Fully connected cluster of `n_spins` single-spin molecules with a
    /// uniform rate. Used for equilibrium checks against the all-to-all
    /// limit.
    pub fn all_to_all(n_spins: usize, rate: f64) -> Self {
        let neighbors = (0..n_spins)
            .map(|a| {
                (0..n_spins)
                    .filter(|&b| b != a)
                    .map(|b| (b as u32, rate))
                    .collect()
            })
            .collect();
        SpreadNetwork {
            spins_per_molecule: 1,
            neighbors,
            site_ids: (0..n_spins).collect(),
            site_to_molecule: (0..n_spins).map(|i| Some(i as u32)).collect(),
            positions: (0..n_spins).map(|i| [i as f64, 0.0, 0.0]).collect(),
        }
    }

    pub fn n_molecules(&self) -> usize {
        self.site_ids.len()
    }

    pub fn total_spins(&self) -> usize {
        self.n_molecules() * self.spins_per_molecule
    }

    /// Resolve a site-level spin index `site_id * M + a` to
    /// (molecule, spin-in-molecule).
    fn resolve_seed(&self, seed_spin: usize) -> Result<(u32, usize)> {
        let m = self.spins_per_molecule;
        let site = seed_spin / m;
        if site >= self.site_to_molecule.len() {
            return Err(Error::Spread(format!("seed spin {seed_spin} out of range")));
        }
        match self.site_to_molecule[site] {
            Some(mol) => Ok((mol, seed_spin % m)),
            None => Err(Error::Spread(format!("seed spin {seed_spin} lies on a diluted molecule"))),
        }
    }

    /// Spin-level rate matrix, for the exact oracle. Errors above 12 spins.
    fn spin_rates(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.total_spins();
        if n > 12 {
            return Err(Error::Spread(format!("oracle limited to 12 spins, got {n}")));
        }
        let m = self.spins_per_molecule;
        let mut lam = vec![vec![0.0; n]; n];
        for (a, nbrs) in self.neighbors.iter().enumerate() {
            for &(b, rate) in nbrs {
                for sa in 0..m {
                    for sb in 0..m {
                        lam[a * m + sa][b as usize * m + sb] = rate;
                    }
                }
            }
        }
        Ok(lam)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    Gillespie,
    TauLeap,
}

/// Parameters of one spreading run.
#[derive(Debug, Clone, Serialize)]
pub struct SpreadParams {
    /// Ratio of the emptying rate to the filling rate (1/3 for the
    /// symmetric Pauli equilibrium).
    pub death_ratio: f64,
    /// Horizon in units of the nearest-neighbor rate.
    pub t_max: f64,
    /// Site-level spin index `site_id * M + spin`.
    pub seed_spin: usize,
    pub integrator: Integrator,
    /// Tau-leap step; `None` picks a step targeting 0.1 events per occupied
    /// spin.
    pub tau: Option<f64>,
}

impl SpreadParams {
    pub fn validate(&self) -> Result<()> {
        if self.death_ratio < 0.0 {
            return Err(Error::Spread("death_ratio must be >= 0".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::Spread("t_max must be > 0".into()));
        }
        if self.integrator == Integrator::TauLeap {
            if let Some(tau) = self.tau {
                if !(tau > 0.0) {
                    return Err(Error::Spread("tau must be > 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// Piecewise-constant occupied-count record of one trial.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub n_op: Vec<u64>,
}

impl Trajectory {
    /// Occupied count at time `t` (left-continuous step function).
    pub fn value_at(&self, t: f64) -> u64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => self.n_op[0],
            i => self.n_op[i - 1],
        }
    }

    /// Time-average of the occupied count over `[t0, t1]`.
    pub fn time_average(&self, t0: f64, t1: f64) -> f64 {
        assert!(t1 > t0);
        let mut acc = 0.0;
        let mut prev_t = t0;
        let mut prev_v = self.value_at(t0) as f64;
        for (&t, &v) in self.times.iter().zip(&self.n_op) {
            if t <= t0 {
                continue;
            }
            if t >= t1 {
                break;
            }
            acc += prev_v * (t - prev_t);
            prev_t = t;
            prev_v = v as f64;
        }
        acc += prev_v * (t1 - prev_t);
        acc / (t1 - t0)
    }
}

struct SimState<'a> {
    net: &'a SpreadNetwork,
    death_ratio: f64,
    /// Occupancy bitmask per molecule (spins_per_molecule <= 64).
    occ_mask: Vec<u64>,
    occ_count: Vec<u32>,
    /// Incident rate per molecule: sum over occupied spins elsewhere.
    incident: Vec<f64>,
    weights: Fenwick,
    n_occupied: u64,
    t: f64,
}

impl<'a> SimState<'a> {
    fn new(net: &'a SpreadNetwork, death_ratio: f64, seed: (u32, usize)) -> Self {
        assert!(net.spins_per_molecule <= 64, "bitmask limited to 64 spins per molecule");
        let n = net.n_molecules();
        let mut st = SimState {
            net,
            death_ratio,
            occ_mask: vec![0; n],
            occ_count: vec![0; n],
            incident: vec![0.0; n],
            weights: Fenwick::new(n),
            n_occupied: 0,
            t: 0.0,
        };
        st.flip(seed.0 as usize, seed.1, true);
        st
    }

    fn weight_of(&self, m: usize) -> f64 {
        let occ = self.occ_count[m] as f64;
        let empty = (self.net.spins_per_molecule as f64) - occ;
        self.incident[m].max(0.0) * (empty + self.death_ratio * occ)
    }

    fn flip(&mut self, mol: usize, spin: usize, occupy: bool) {
        let bit = 1u64 << spin;
        debug_assert_eq!(self.occ_mask[mol] & bit != 0, !occupy);
        if occupy {
            self.occ_mask[mol] |= bit;
            self.occ_count[mol] += 1;
            self.n_occupied += 1;
        } else {
            self.occ_mask[mol] &= !bit;
            self.occ_count[mol] -= 1;
            self.n_occupied -= 1;
        }
        let delta = if occupy { 1.0 } else { -1.0 };
        // Borrow dance: collect neighbor updates first.
        for idx in 0..self.net.neighbors[mol].len() {
            let (nbr, rate) = self.net.neighbors[mol][idx];
            let nbr = nbr as usize;
            self.incident[nbr] += delta * rate;
            let w = self.weight_of(nbr);
            self.weights.set(nbr, w);
        }
        let w = self.weight_of(mol);
        self.weights.set(mol, w);
    }

    /// Draw the next Gillespie event and advance the clock, without applying
    /// the flip. Returns `None` when the system is frozen.
    fn gillespie_advance<R: Rng>(&mut self, rng: &mut R) -> Option<(usize, usize, bool)> {
        let total = self.weights.prefix_total();
        if total <= 1e-300 {
            return None;
        }
        self.t += -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln() / total;
        let mol = self.weights.find(rng.gen::<f64>() * total);
        let occ = self.occ_count[mol] as f64;
        let empty = self.net.spins_per_molecule as f64 - occ;
        let infect_w = empty;
        let death_w = self.death_ratio * occ;
        let infect = rng.gen::<f64>() * (infect_w + death_w) < infect_w;
        let spin = if infect {
            pick_bit(rng, !self.occ_mask[mol] & mask_lo(self.net.spins_per_molecule))
        } else {
            pick_bit(rng, self.occ_mask[mol])
        };
        Some((mol, spin, infect))
    }

    /// Draw one tau-leap step of length `tau` and advance the clock, without
    /// applying the flips. Counts are Poisson with capped outcomes; the
    /// caller commits all flips simultaneously. Returns `None` when frozen.
    fn tau_leap_advance<R: Rng>(
        &mut self,
        rng: &mut R,
        tau: f64,
    ) -> Option<Vec<(usize, usize, bool)>> {
        let total = self.weights.prefix_total();
        if total <= 1e-300 {
            return None;
        }
        let m_spins = self.net.spins_per_molecule;
        let mut flips: Vec<(usize, usize, bool)> = Vec::new();
        for mol in 0..self.net.n_molecules() {
            let inc = self.incident[mol].max(0.0);
            if inc <= 0.0 {
                continue;
            }
            let occ = self.occ_count[mol];
            let empty = m_spins as u32 - occ;
            let n_inf =
                sample_poisson(rng, inc * empty as f64 * tau).min(empty as u64) as usize;
            let n_death = sample_poisson(rng, self.death_ratio * inc * occ as f64 * tau)
                .min(occ as u64) as usize;
            let free = !self.occ_mask[mol] & mask_lo(m_spins);
            for spin in choose_bits(rng, free, n_inf) {
                flips.push((mol, spin, true));
            }
            for spin in choose_bits(rng, self.occ_mask[mol], n_death) {
                flips.push((mol, spin, false));
            }
        }
        self.t += tau;
        Some(flips)
    }
}

fn mask_lo(bits: usize) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Uniformly random set bit of a nonzero mask.
fn pick_bit<R: Rng>(rng: &mut R, mask: u64) -> usize {
    let count = mask.count_ones();
    debug_assert!(count > 0);
    let mut k = rng.gen_range(0..count);
    let mut m = mask;
    loop {
        let b = m.trailing_zeros() as usize;
        if k == 0 {
            return b;
        }
        k -= 1;
        m &= m - 1;
    }
}

/// `n` distinct uniformly random set bits of `mask`.
fn choose_bits<R: Rng>(rng: &mut R, mut mask: u64, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if mask == 0 {
            break;
        }
        let b = pick_bit(rng, mask);
        mask &= !(1u64 << b);
        out.push(b);
    }
    out
}

/// Knuth sampling for small means, normal approximation above 30.
fn sample_poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean > 30.0 {
        let g: f64 = {
            // Box-Muller
            let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        return (mean + mean.sqrt() * g).round().max(0.0) as u64;
    }
    let limit = (-mean).exp();
    let mut prod = 1.0;
    let mut count = 0u64;
    loop {
        prod *= rng.gen::<f64>();
        if prod <= limit {
            return count;
        }
        count += 1;
    }
}

fn run_core(
    net: &SpreadNetwork,
    params: &SpreadParams,
    rng_seed: u64,
    mut snapshot_times: &[f64],
    snapshots: &mut Vec<Vec<u64>>,
) -> Result<Trajectory> {
    params.validate()?;
    let seed = net.resolve_seed(params.seed_spin)?;
    let mut rng = task_rng(rng_seed, 0);
    let mut st = SimState::new(net, params.death_ratio, seed);
    let mut traj = Trajectory { times: vec![0.0], n_op: vec![1] };
    loop {
        let prev_t = st.t;
        // Draw the next event (advancing the clock) before applying it, so
        // snapshots in (prev event, this event) see the pre-event state.
        let pending: Option<Vec<(usize, usize, bool)>> = match params.integrator {
            Integrator::Gillespie => st.gillespie_advance(&mut rng).map(|f| vec![f]),
            Integrator::TauLeap => {
                let total = st.weights.prefix_total();
                let tau = params
                    .tau
                    .unwrap_or_else(|| 0.1 * st.n_occupied.max(1) as f64 / total.max(1e-12));
                st.tau_leap_advance(&mut rng, tau.min(params.t_max * 0.05))
            }
        };
        let event_t = if pending.is_some() { st.t } else { f64::INFINITY };
        while let Some((&ts, rest)) = snapshot_times.split_first() {
            if ts >= prev_t && ts < event_t {
                snapshots.push(st.occ_mask.clone());
                snapshot_times = rest;
            } else {
                break;
            }
        }
        let Some(flips) = pending else { break };
        if st.t > params.t_max {
            break;
        }
        for (mol, spin, occupy) in flips {
            st.flip(mol, spin, occupy);
        }
        traj.times.push(st.t);
        traj.n_op.push(st.n_occupied);
    }
    // Frozen system: remaining snapshots all see the final state.
    for _ in snapshot_times {
        snapshots.push(st.occ_mask.clone());
    }
    Ok(traj)
}

/// Simulate one trial; deterministic for a fixed seed.
pub fn run_trial(net: &SpreadNetwork, params: &SpreadParams, rng_seed: u64) -> Result<Trajectory> {
    run_core(net, params, rng_seed, &[], &mut Vec::new())
}

/// One trial plus per-molecule occupancy snapshots at the given times.
pub fn run_trial_with_snapshots(
    net: &SpreadNetwork,
    params: &SpreadParams,
    rng_seed: u64,
    sample_times: &[f64],
) -> Result<(Trajectory, Vec<Vec<u64>>)> {
    let mut snaps = Vec::with_capacity(sample_times.len());
    let traj = run_core(net, params, rng_seed, sample_times, &mut snaps)?;
    Ok((traj, snaps))
}

/// Ensemble mean and standard error of `N_op` at fixed sample times.
#[derive(Debug, Clone, Serialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub n_op_mean: Vec<f64>,
    pub n_op_stderr: Vec<f64>,
    pub trials: usize,
}

impl TimeSeries {
    /// CSV: `t,n_op_mean,n_op_stderr,trials`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "n_op_mean", "n_op_stderr", "trials"])?;
        for i in 0..self.times.len() {
            wtr.write_record(&[
                format!("{:.9}", self.times[i]),
                format!("{:.9}", self.n_op_mean[i]),
                format!("{:.9}", self.n_op_stderr[i]),
                self.trials.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn value_at_time(&self, t: f64) -> Option<f64> {
        self.times
            .iter()
            .position(|&x| (x - t).abs() < 1e-9)
            .map(|i| self.n_op_mean[i])
    }
}

/// Run `n_trials` independent trials on parallel workers and reduce by trial
/// index, so the result does not depend on scheduling.
pub fn run_ensemble(
    net: &SpreadNetwork,
    params: &SpreadParams,
    n_trials: usize,
    sample_times: &[f64],
    base_seed: u64,
) -> Result<TimeSeries> {
    if n_trials < 1 {
        return Err(Error::Spread("n_trials must be >= 1".into()));
    }
    if sample_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Spread("sample times must be strictly ascending".into()));
    }
    let per_trial: Vec<Vec<f64>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let seed = crate::seeding::derive_seed(base_seed, trial as u64);
            let traj = run_trial(net, params, seed)?;
            Ok(sample_times.iter().map(|&t| traj.value_at(t) as f64).collect())
        })
        .collect::<Result<_>>()?;
    let k = sample_times.len();
    let mut mean = vec![0.0; k];
    let mut m2 = vec![0.0; k];
    for row in &per_trial {
        for i in 0..k {
            mean[i] += row[i];
            m2[i] += row[i] * row[i];
        }
    }
    let n = n_trials as f64;
    let mut stderr = vec![0.0; k];
    for i in 0..k {
        mean[i] /= n;
        let var = (m2[i] / n - mean[i] * mean[i]).max(0.0);
        stderr[i] = if n_trials > 1 { (var / (n - 1.0)).sqrt() } else { 0.0 };
    }
    Ok(TimeSeries { times: sample_times.to_vec(), n_op_mean: mean, n_op_stderr: stderr, trials: n_trials })
}

/// One distance bin of the occupation profile around the seed.
#[derive(Debug, Clone, Serialize)]
pub struct RadialBin {
    pub r_lo: f64,
    pub r_hi: f64,
    /// Mean per-spin occupation probability in the bin.
    pub occupation_prob: f64,
    /// Number of spins in the bin.
    pub spins: usize,
}

/// Occupation probability against distance from the seed molecule at one
/// sample time, averaged over `n_trials` trials.
pub fn radial_profile(
    net: &SpreadNetwork,
    params: &SpreadParams,
    n_trials: usize,
    sample_time: f64,
    base_seed: u64,
    n_bins: usize,
) -> Result<Vec<RadialBin>> {
    if n_trials < 1 || n_bins < 1 {
        return Err(Error::Spread("need at least one trial and one bin".into()));
    }
    let (seed_mol, _) = net.resolve_seed(params.seed_spin)?;
    let seed_pos = net.positions[seed_mol as usize];
    let dist: Vec<f64> = net
        .positions
        .iter()
        .map(|p| (0..3).map(|k| (p[k] - seed_pos[k]).powi(2)).sum::<f64>().sqrt())
        .collect();
    let r_max = dist.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let bin_of = |r: f64| ((r / r_max * n_bins as f64) as usize).min(n_bins - 1);

    let counts: Vec<Vec<u64>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let seed = crate::seeding::derive_seed(base_seed, trial as u64);
            let (_, snaps) = run_trial_with_snapshots(net, params, seed, &[sample_time])?;
            let mut occ = vec![0u64; n_bins];
            for (mol, &mask) in snaps[0].iter().enumerate() {
                occ[bin_of(dist[mol])] += mask.count_ones() as u64;
            }
            Ok(occ)
        })
        .collect::<Result<_>>()?;
    let mut spins_per_bin = vec![0usize; n_bins];
    for &d in &dist {
        spins_per_bin[bin_of(d)] += net.spins_per_molecule;
    }
    let mut bins = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let occupied: u64 = counts.iter().map(|c| c[b]).sum();
        let prob = if spins_per_bin[b] > 0 {
            occupied as f64 / (n_trials * spins_per_bin[b]) as f64
        } else {
            0.0
        };
        bins.push(RadialBin {
            r_lo: r_max * b as f64 / n_bins as f64,
            r_hi: r_max * (b + 1) as f64 / n_bins as f64,
            occupation_prob: prob,
            spins: spins_per_bin[b],
        });
    }
    Ok(bins)
}

/// CSV: `t,r_bin_lo,r_bin_hi,occupation_prob`.
pub fn write_radial_csv<W: std::io::Write>(w: W, t: f64, bins: &[RadialBin]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "r_bin_lo", "r_bin_hi", "occupation_prob"])?;
    for b in bins {
        wtr.write_record(&[
            format!("{t:.9}"),
            format!("{:.9}", b.r_lo),
            format!("{:.9}", b.r_hi),
            format!("{:.9}", b.occupation_prob),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Exact master-equation solution of the spreading CTMC.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub times: Vec<f64>,
    /// Expected occupied count at each time.
    pub e_n_op: Vec<f64>,
    /// Per-spin occupation probability at each time.
    pub spin_probs: Vec<Vec<f64>>,
}

/// Solve the full `2^n` master equation (n <= 12 spins) with adaptive RK4
/// stepping, local error below 1e-8 per unit time.
pub fn ctmc_oracle(
    net: &SpreadNetwork,
    params: &SpreadParams,
    sample_times: &[f64],
) -> Result<OracleSolution> {
    params.validate()?;
    let lam = net.spin_rates()?;
    let n = net.total_spins();
    let (seed_mol, seed_spin) = net.resolve_seed(params.seed_spin)?;
    let seed_global = seed_mol as usize * net.spins_per_molecule + seed_spin;
    let dim = 1usize << n;
    let dr = params.death_ratio;

    let deriv = |p: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (cfg, &mass) in p.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for j in 0..n {
                let occupied = cfg & (1 << j) != 0;
                let mut incident = 0.0;
                for i in 0..n {
                    if i != j && cfg & (1 << i) != 0 {
                        incident += lam[i][j];
                    }
                }
                let rate = if occupied { dr * incident } else { incident };
                if rate > 0.0 {
                    out[cfg] -= rate * mass;
                    out[cfg ^ (1 << j)] += rate * mass;
                }
            }
        }
    };

    let rk4 = |p: &[f64], h: f64| -> Vec<f64> {
        let mut k1 = vec![0.0; dim];
        let mut k2 = vec![0.0; dim];
        let mut k3 = vec![0.0; dim];
        let mut k4 = vec![0.0; dim];
        let mut tmp = vec![0.0; dim];
        deriv(p, &mut k1);
        for i in 0..dim {
            tmp[i] = p[i] + 0.5 * h * k1[i];
        }
        deriv(&tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = p[i] + 0.5 * h * k2[i];
        }
        deriv(&tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = p[i] + h * k3[i];
        }
        deriv(&tmp, &mut k4);
        (0..dim)
            .map(|i| p[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    };

    let mut p = vec![0.0; dim];
    p[1usize << seed_global] = 1.0;
    let mut t = 0.0;
    let mut h: f64 = 1e-3;
    let mut out = OracleSolution { times: sample_times.to_vec(), e_n_op: Vec::new(), spin_probs: Vec::new() };
    for &ts in sample_times {
        if ts < t {
            return Err(Error::Spread("sample times must be ascending".into()));
        }
        while t < ts {
            let step = h.min(ts - t);
            // Step doubling error control.
            let full = rk4(&p, step);
            let half = rk4(&rk4(&p, 0.5 * step), 0.5 * step);
            let err = full
                .iter()
                .zip(&half)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / 15.0;
            let tol = 1e-9 * step.max(1e-12);
            if err > tol && step > 1e-9 {
                h = 0.5 * step;
                continue;
            }
            p = half;
            t += step;
            if err < 0.03 * tol {
                h = (step * 2.0).min(0.25);
            }
        }
        let mut e = 0.0;
        let mut probs = vec![0.0; n];
        for (cfg, &mass) in p.iter().enumerate() {
            e += (cfg.count_ones() as f64) * mass;
            for (j, pj) in probs.iter_mut().enumerate() {
                if cfg & (1 << j) != 0 {
                    *pj += mass;
                }
            }
        }
        out.e_n_op.push(e);
        out.spin_probs.push(probs);
    }
    Ok(out)
}
