//! Lattice geometry, dilution and pairwise coupling kernels.
//!
//! Builds the site sets used by the stochastic spreading engine: fcc and
//! simple-cubic crystals and 1d chains, each site holding `M` spins.
//! The fcc lattice is generated from the conventional cubic cell with its
//! 4-point basis, so the nearest-neighbor distance is `a / sqrt(2)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeding::task_rng;
use crate::{Error, Result};

pub const FCC_NN_FACTOR: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeKind {
    Fcc,
    SimpleCubic,
    Chain,
}

impl LatticeKind {
    pub fn dimension(self) -> usize {
        match self {
            LatticeKind::Chain => 1,
            _ => 3,
        }
    }

    /// Number of lattice points per conventional cell.
    pub fn basis_multiplicity(self) -> usize {
        match self {
            LatticeKind::Fcc => 4,
            _ => 1,
        }
    }

    /// Nearest-neighbor distance in units of the lattice constant.
    pub fn nn_distance_factor(self) -> f64 {
        match self {
            LatticeKind::Fcc => FCC_NN_FACTOR,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Geometry of a molecular lattice with `spins_per_site` spins on each site.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub kind: LatticeKind,
    /// Conventional cells per edge.
    pub linear_size: usize,
    /// Spins per molecule (M).
    pub spins_per_site: usize,
    /// Conventional-cell lattice constant in nm.
    pub lattice_constant_nm: f64,
    /// Probability that a site actually holds a molecule.
    pub occupancy: f64,
    pub boundary: Boundary,
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.linear_size < 1 {
            return Err(Error::Lattice("linear_size must be >= 1".into()));
        }
        if self.spins_per_site < 1 {
            return Err(Error::Lattice("spins_per_site must be >= 1".into()));
        }
        if !(self.lattice_constant_nm > 0.0) {
            return Err(Error::Lattice("lattice_constant_nm must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.occupancy) {
            return Err(Error::Lattice("occupancy must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Total number of sites: `linear_size^d * basis`.
    pub fn total_sites(&self) -> usize {
        let d = self.kind.dimension();
        self.linear_size.pow(d as u32) * self.kind.basis_multiplicity()
    }

    /// Nearest-neighbor distance in nm.
    pub fn nn_distance_nm(&self) -> f64 {
        self.lattice_constant_nm * self.kind.nn_distance_factor()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngularMode {
    /// Tumbling-averaged: no angular factor.
    Isotropic,
    /// Includes the dipolar angular factor squared.
    Dipolar,
}

/// Power-law rate kernel between two molecules.
///
/// The stochastic-model rate is the coupling squared, so the rate decays as
/// `1 / r^(2 alpha)` and the dipolar angular factor enters squared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingKernel {
    /// Power-law exponent of the coupling (3 for dipoles).
    pub alpha: f64,
    /// Rate at unit distance; `prefactor / r^(2 alpha)` overall.
    pub prefactor: f64,
    pub angular_mode: AngularMode,
    /// Quantization axis for the dipolar angular factor.
    pub field_axis: [f64; 3],
    /// Rates are zero beyond this radius; `None` keeps the full sum.
    pub cutoff_radius_nm: Option<f64>,
}

impl CouplingKernel {
    /// Isotropic kernel normalized so the rate at distance `r_nn` is `scale`.
    pub fn isotropic_unit_nn(alpha: f64, r_nn_nm: f64, scale: f64) -> Self {
        CouplingKernel {
            alpha,
            prefactor: scale * r_nn_nm.powf(2.0 * alpha),
            angular_mode: AngularMode::Isotropic,
            field_axis: [0.0, 0.0, 1.0],
            cutoff_radius_nm: Some(3.0 * r_nn_nm),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Lattice("alpha must be > 0".into()));
        }
        if !(self.prefactor > 0.0) {
            return Err(Error::Lattice("prefactor must be > 0".into()));
        }
        let n = (self.field_axis.iter().map(|x| x * x).sum::<f64>()).sqrt();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::Lattice("field_axis must be a unit vector".into()));
        }
        Ok(())
    }
}

/// Immutable set of molecule positions plus the dilution outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteSet {
    pub positions: Vec<[f64; 3]>,
    pub molecule_index: Vec<usize>,
    /// True where the site actually holds a molecule.
    pub occupied_molecule_mask: Vec<bool>,
    pub spins_per_site: usize,
    pub boundary: Boundary,
    /// Box edge lengths in nm, used for minimum-image distances.
    pub box_lengths_nm: [f64; 3],
}

impl SiteSet {
    pub fn n_sites(&self) -> usize {
        self.positions.len()
    }

    pub fn n_occupied(&self) -> usize {
        self.occupied_molecule_mask.iter().filter(|&&m| m).count()
    }

    /// No molecule present at all; nothing can seed a simulation.
    pub fn is_degenerate(&self) -> bool {
        self.n_occupied() == 0
    }

    /// Distance between sites `i` and `j`, minimum-image under periodic
    /// boundaries.
    pub fn distance_nm(&self, i: usize, j: usize) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let mut d = self.positions[i][k] - self.positions[j][k];
            if self.boundary == Boundary::Periodic && self.box_lengths_nm[k] > 0.0 {
                let l = self.box_lengths_nm[k];
                d -= l * (d / l).round();
            }
            d2 += d * d;
        }
        d2.sqrt()
    }

    /// Displacement j - i (no minimum-image wrap for the angular factor under
    /// open boundaries; wrapped component-wise when periodic).
    fn displacement(&self, i: usize, j: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for k in 0..3 {
            let mut d = self.positions[j][k] - self.positions[i][k];
            if self.boundary == Boundary::Periodic && self.box_lengths_nm[k] > 0.0 {
                let l = self.box_lengths_nm[k];
                d -= l * (d / l).round();
            }
            out[k] = d;
        }
        out
    }

    /// Site index nearest to the geometric center of the box.
    pub fn central_site(&self) -> usize {
        let mut c = [0.0; 3];
        for p in &self.positions {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        for ck in c.iter_mut() {
            *ck /= self.positions.len() as f64;
        }
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (i, p) in self.positions.iter().enumerate() {
            let d2: f64 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum();
            if d2 < best_d2 && self.occupied_molecule_mask[i] {
                best_d2 = d2;
                best = i;
            }
        }
        best
    }

    /// Write the set as CSV: `site_id,x_nm,y_nm,z_nm,occupied`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["site_id", "x_nm", "y_nm", "z_nm", "occupied"])?;
        for i in 0..self.n_sites() {
            let p = self.positions[i];
            wtr.write_record(&[
                i.to_string(),
                format!("{:.12}", p[0]),
                format!("{:.12}", p[1]),
                format!("{:.12}", p[2]),
                (self.occupied_molecule_mask[i] as u8).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Enumerate all molecule positions for the given lattice.
pub fn build_lattice(spec: &LatticeSpec) -> Result<SiteSet> {
    spec.validate()?;
    let a = spec.lattice_constant_nm;
    let l = spec.linear_size;
    let mut positions = Vec::with_capacity(spec.total_sites());
    match spec.kind {
        LatticeKind::Chain => {
            for i in 0..l {
                positions.push([i as f64 * a, 0.0, 0.0]);
            }
        }
        LatticeKind::SimpleCubic => {
            for x in 0..l {
                for y in 0..l {
                    for z in 0..l {
                        positions.push([x as f64 * a, y as f64 * a, z as f64 * a]);
                    }
                }
            }
        }
        LatticeKind::Fcc => {
            const BASIS: [[f64; 3]; 4] = [
                [0.0, 0.0, 0.0],
                [0.5, 0.5, 0.0],
                [0.5, 0.0, 0.5],
                [0.0, 0.5, 0.5],
            ];
            for x in 0..l {
                for y in 0..l {
                    for z in 0..l {
                        for b in BASIS {
                            positions.push([
                                (x as f64 + b[0]) * a,
                                (y as f64 + b[1]) * a,
                                (z as f64 + b[2]) * a,
                            ]);
                        }
                    }
                }
            }
        }
    }
    let n = positions.len();
    let box_lengths = match spec.kind {
        LatticeKind::Chain => [l as f64 * a, 0.0, 0.0],
        _ => [l as f64 * a; 3],
    };
    Ok(SiteSet {
        positions,
        molecule_index: (0..n).collect(),
        occupied_molecule_mask: vec![true; n],
        spins_per_site: spec.spins_per_site,
        boundary: spec.boundary,
        box_lengths_nm: box_lengths,
    })
}

/// Rate between two distinct sites under the kernel. Zero beyond the cutoff.
pub fn pairwise_rate(sites: &SiteSet, i: usize, j: usize, kernel: &CouplingKernel) -> Result<f64> {
    if i == j {
        return Err(Error::Lattice("pairwise_rate requires i != j".into()));
    }
    let r = sites.distance_nm(i, j);
    if r <= 0.0 {
        return Err(Error::Lattice(format!("coincident sites {i} and {j}")));
    }
    if let Some(rc) = kernel.cutoff_radius_nm {
        if r > rc {
            return Ok(0.0);
        }
    }
    let mut rate = kernel.prefactor / r.powf(2.0 * kernel.alpha);
    if kernel.angular_mode == AngularMode::Dipolar {
        let d = sites.displacement(i, j);
        let dot = d[0] * kernel.field_axis[0] + d[1] * kernel.field_axis[1] + d[2] * kernel.field_axis[2];
        let cos2 = (dot / r).powi(2);
        let ang = (3.0 * cos2 - 1.0) / 2.0;
        rate *= ang * ang;
    }
    Ok(rate)
}

/// Keep each molecule independently with probability `p`. Deterministic for
/// a fixed seed. Sites already diluted stay diluted.
pub fn dilute_sites(sites: &SiteSet, p: f64, rng_seed: u64) -> Result<SiteSet> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Lattice("dilution probability must be in [0, 1]".into()));
    }
    let mut rng = task_rng(rng_seed, 0);
    let mut out = sites.clone();
    for m in out.occupied_molecule_mask.iter_mut() {
        if *m {
            *m = rng.gen::<f64>() < p;
        }
    }
    Ok(out)
}
