//! Configuration, presets, and artifact emission for the command-line
//! front end.
//!
//! A run is a subcommand plus a TOML config (or a named preset), a master
//! seed, and an output directory. Every run writes `manifest.json` echoing
//! the fully resolved configuration; re-running a manifest with the same
//! seed reproduces all CSV outputs byte for byte.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::kn;
use crate::lattice::{
    build_lattice, dilute_sites, AngularMode, Boundary, CouplingKernel, LatticeKind, LatticeSpec,
};
use crate::mqc::{cluster_size_fit, load_experiment, HamiltonianTag, MQCSpectrum};
use crate::oracle::{
    chain_couplings, global_otoc, local_otoc, mqc_exact, Estimator, Evolution, FloquetCircuit,
    FloquetSpec, Hamiltonian,
};
use crate::scaling::{classify_regime, fit_experiment};
use crate::spread::{
    radial_profile, run_ensemble, write_radial_csv, Integrator, SpreadNetwork, SpreadParams,
    TimeSeries,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Spread,
    Kn,
    Oracle,
    Analyze,
    Fit,
    Regimes,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// "chain", "sc", or "fcc".
    pub kind: String,
    pub linear_size: usize,
    pub spins_per_site: usize,
    pub lattice_constant_nm: f64,
    /// Fraction of sites occupied; molecules are removed at random below 1.
    pub occupancy: f64,
    /// "open" or "periodic".
    pub boundary: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Coupling exponent; pairwise rates decay as 1 / r^(2 alpha).
    pub alpha: f64,
    /// Rate at nearest-neighbor distance, in inverse time units.
    pub rate_scale: f64,
    /// "isotropic" or "dipolar".
    pub angular: String,
    /// Rates are truncated beyond this multiple of the nearest-neighbor
    /// distance; omitted means 3.
    pub cutoff_nn: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpreadConfig {
    pub death_ratio: f64,
    pub t_max_units: f64,
    pub trials: usize,
    pub sample_times_units: Vec<f64>,
    /// Site-level spin index; omitted means the central site's first spin.
    pub seed_spin: Option<usize>,
    /// "gillespie" or "tau-leap".
    pub integrator: String,
    pub tau_units: Option<f64>,
    pub radial_bins: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnConfig {
    pub n_total: u64,
    /// Jump-chain steps ("jump" mode) or sample count ("continuous").
    pub steps: usize,
    pub mode: String,
    /// Horizon for continuous mode, in inverse-rate units.
    pub t_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// "kicked-ising", "dq", "yy", or "generic".
    pub model: String,
    pub n_spins: usize,
    pub alpha: f64,
    /// Ising phase (kicked-ising) or coupling prefactor (Hamiltonians).
    pub j: f64,
    /// Kick angle; kicked-ising only.
    pub b: f64,
    pub h_std: f64,
    pub times_units: Vec<f64>,
    /// "exact" or "random".
    pub estimator: String,
    pub n_states: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// CSV with header `n,g_n`.
    pub gn_csv: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Simulated curve, `t,n_op_mean,n_op_stderr,trials`.
    pub sim_csv: PathBuf,
    /// Experimental series, `t_ms,cluster_size[,err]`.
    pub experiment_csv: PathBuf,
    /// "dq", "yy", or "other".
    pub hamiltonian: String,
    pub time_unit_ms: f64,
    /// Regime annotation for the report.
    pub alpha: f64,
    pub dimension: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimesConfig {
    pub dimension: usize,
    pub alphas: Vec<f64>,
}

/// Full run configuration; each subcommand reads its own section.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: Option<LatticeConfig>,
    pub kernel: Option<KernelConfig>,
    pub spread: Option<SpreadConfig>,
    pub kn: Option<KnConfig>,
    pub oracle: Option<OracleConfig>,
    pub analyze: Option<AnalyzeConfig>,
    pub fit: Option<FitConfig>,
    pub regimes: Option<RegimesConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

fn spread_defaults(t_max: f64, trials: usize) -> SpreadConfig {
    let sample_times_units = (0..=((t_max * 4.0).round() as usize))
        .map(|i| i as f64 * 0.25)
        .take_while(|&t| t <= t_max + 1e-9)
        .collect();
    SpreadConfig {
        death_ratio: 1.0 / 3.0,
        t_max_units: t_max,
        trials,
        sample_times_units,
        seed_spin: None,
        integrator: "gillespie".into(),
        tau_units: None,
        radial_bins: 24,
    }
}

/// Built-in parameter sets for the two adamantane experiments and the
/// polar-molecule lattice.
pub fn preset(name: &str) -> Result<RunConfig> {
    // fcc cube constant giving a 0.67 nm nearest-neighbor distance.
    let fcc_a = 0.67 * std::f64::consts::SQRT_2;
    let adamantane = |tag: &str| RunConfig {
        lattice: Some(LatticeConfig {
            kind: "fcc".into(),
            linear_size: 12,
            spins_per_site: 16,
            lattice_constant_nm: fcc_a,
            occupancy: 1.0,
            boundary: "open".into(),
        }),
        kernel: Some(KernelConfig {
            alpha: 3.0,
            // Nearest-neighbor spin-pair rate calibrated so one unit of
            // simulated time (one 0.4 ms dipolar cycle) grows a cluster of
            // order 10^2 spins, matching the measured magnitudes; the
            // molecular-equilibration estimate fixes the order, not the
            // exact prefactor.
            rate_scale: 0.0178,
            angular: "isotropic".into(),
            // Rates at twice the molecular spacing are down by 2^6; the
            // truncated tail carries ~1% of the incident sum.
            cutoff_nn: Some(2.0),
        }),
        spread: Some(spread_defaults(3.0, 200)),
        fit: Some(FitConfig {
            sim_csv: "n_op.csv".into(),
            experiment_csv: format!("experiment_{tag}.csv").into(),
            hamiltonian: tag.into(),
            time_unit_ms: 0.4,
            alpha: 3.0,
            dimension: 3,
        }),
        ..Default::default()
    };
    match name {
        "adamantane-DQ" => Ok(adamantane("dq")),
        "adamantane-YY" => Ok(adamantane("yy")),
        "krb" => Ok(RunConfig {
            lattice: Some(LatticeConfig {
                kind: "sc".into(),
                linear_size: 40,
                spins_per_site: 1,
                lattice_constant_nm: 1.0,
                occupancy: 0.30,
                boundary: "open".into(),
            }),
            kernel: Some(KernelConfig {
                alpha: 3.0,
                rate_scale: 1.0,
                angular: "isotropic".into(),
                cutoff_nn: None,
            }),
            spread: Some(spread_defaults(10.0, 50)),
            ..Default::default()
        }),
        other => Err(Error::Config(format!("unknown preset `{other}`"))),
    }
}

fn parse_lattice(cfg: &LatticeConfig) -> Result<LatticeSpec> {
    let kind = match cfg.kind.as_str() {
        "chain" => LatticeKind::Chain,
        "sc" => LatticeKind::SimpleCubic,
        "fcc" => LatticeKind::Fcc,
        k => return Err(Error::Config(format!("unknown lattice kind `{k}`"))),
    };
    let boundary = match cfg.boundary.as_str() {
        "open" => Boundary::Open,
        "periodic" => Boundary::Periodic,
        b => return Err(Error::Config(format!("unknown boundary `{b}`"))),
    };
    let spec = LatticeSpec {
        kind,
        linear_size: cfg.linear_size,
        spins_per_site: cfg.spins_per_site,
        lattice_constant_nm: cfg.lattice_constant_nm,
        occupancy: cfg.occupancy,
        boundary,
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

fn parse_kernel(cfg: &KernelConfig, spec: &LatticeSpec) -> Result<CouplingKernel> {
    let mut kernel =
        CouplingKernel::isotropic_unit_nn(cfg.alpha, spec.nn_distance_nm(), cfg.rate_scale);
    if let Some(c) = cfg.cutoff_nn {
        if !(c > 1.0) {
            return Err(Error::Config("cutoff_nn must exceed 1".into()));
        }
        kernel.cutoff_radius_nm = Some(c * spec.nn_distance_nm());
    }
    kernel.angular_mode = match cfg.angular.as_str() {
        "isotropic" => AngularMode::Isotropic,
        "dipolar" => AngularMode::Dipolar,
        a => return Err(Error::Config(format!("unknown angular mode `{a}`"))),
    };
    kernel.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(kernel)
}

fn parse_spread_params(cfg: &SpreadConfig, seed_spin: usize) -> Result<SpreadParams> {
    let integrator = match cfg.integrator.as_str() {
        "gillespie" => Integrator::Gillespie,
        "tau-leap" => Integrator::TauLeap,
        i => return Err(Error::Config(format!("unknown integrator `{i}`"))),
    };
    let params = SpreadParams {
        death_ratio: cfg.death_ratio,
        t_max: cfg.t_max_units,
        seed_spin,
        integrator,
        tau: cfg.tau_units,
    };
    params.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(params)
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: Subcommand,
    seed: u64,
    version: &'static str,
    config: &'a RunConfig,
}

fn write_manifest(out: &Path, sub: Subcommand, seed: u64, config: &RunConfig) -> Result<()> {
    let manifest = Manifest { subcommand: sub, seed, version: env!("CARGO_PKG_VERSION"), config };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(out.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn section<'a, T>(opt: &'a Option<T>, name: &str) -> Result<&'a T> {
    opt.as_ref()
        .ok_or_else(|| Error::Config(format!("config is missing the [{name}] section")))
}

/// Execute a subcommand, writing artifacts into `out_dir`.
pub fn run(sub: Subcommand, config: &RunConfig, seed: u64, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_manifest(out_dir, sub, seed, config)?;
    match sub {
        Subcommand::Spread => run_spread(config, seed, out_dir),
        Subcommand::Kn => run_kn(config, out_dir),
        Subcommand::Oracle => run_oracle(config, seed, out_dir),
        Subcommand::Analyze => run_analyze(config, out_dir),
        Subcommand::Fit => run_fit(config, out_dir),
        Subcommand::Regimes => run_regimes(config, out_dir),
    }
}

fn run_spread(config: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let lat = parse_lattice(section(&config.lattice, "lattice")?)?;
    let kernel = parse_kernel(section(&config.kernel, "kernel")?, &lat)?;
    let scfg = section(&config.spread, "spread")?;
    let mut sites = build_lattice(&lat)?;
    if lat.occupancy < 1.0 {
        sites = dilute_sites(&sites, lat.occupancy, crate::seeding::derive_seed(seed, u64::MAX))?;
        // Keep the seed molecule present.
        let central = sites.central_site();
        sites.occupied_molecule_mask[central] = true;
    }
    let net = SpreadNetwork::from_lattice(&sites, &kernel, 1.0)?;
    let seed_spin = scfg
        .seed_spin
        .unwrap_or(sites.central_site() * lat.spins_per_site);
    let params = parse_spread_params(scfg, seed_spin)?;
    let series = run_ensemble(&net, &params, scfg.trials, &scfg.sample_times_units, seed)?;
    series.write_csv(fs::File::create(out.join("n_op.csv"))?)?;
    let t_last = *scfg.sample_times_units.last().ok_or_else(|| {
        Error::Config("spread.sample_times_units must not be empty".into())
    })?;
    let bins = radial_profile(&net, &params, scfg.trials, t_last, seed, scfg.radial_bins)?;
    write_radial_csv(fs::File::create(out.join("radial_profile.csv"))?, t_last, &bins)?;
    sites.write_csv(fs::File::create(out.join("sites.csv"))?)?;
    Ok(())
}

fn run_kn(config: &RunConfig, out: &Path) -> Result<()> {
    let kcfg = section(&config.kn, "kn")?;
    let history = match kcfg.mode.as_str() {
        "jump" => kn::evolve_master(kcfg.n_total, kcfg.steps)?,
        "continuous" => {
            let times: Vec<f64> = (0..=kcfg.steps)
                .map(|i| kcfg.t_max * i as f64 / kcfg.steps.max(1) as f64)
                .collect();
            kn::evolve_master_ct(kcfg.n_total, &times)?
        }
        m => return Err(Error::Config(format!("unknown kn mode `{m}`"))),
    };
    let mut w = csv::Writer::from_writer(fs::File::create(out.join("kn_moments.csv"))?);
    w.write_record(["step", "K_mean", "second_moment"])?;
    for (i, dist) in history.iter().enumerate() {
        w.write_record(&[
            i.to_string(),
            format!("{:.9}", dist.mean_cluster_size()),
            format!("{:.9}", dist.second_moment()),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(fs::File::create(out.join("kn_mqc.csv"))?);
    w.write_record(["step", "n", "g_n"])?;
    let last = history.len() - 1;
    let spec = history[last].mqc();
    for (&n, &g) in spec.n_values.iter().zip(&spec.g) {
        w.write_record(&[last.to_string(), n.to_string(), format!("{g:.12e}")])?;
    }
    w.flush()?;
    Ok(())
}

fn run_oracle(config: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let ocfg = section(&config.oracle, "oracle")?;
    let n = ocfg.n_spins;
    let ev = match ocfg.model.as_str() {
        "kicked-ising" => Evolution::Floquet(FloquetCircuit::new(&FloquetSpec {
            n_spins: n,
            alpha: ocfg.alpha,
            j: ocfg.j,
            b: ocfg.b,
            h_std: ocfg.h_std,
            disorder_seed: seed,
        })?),
        "dq" => Evolution::dense(&Hamiltonian::double_quantum(&chain_couplings(n, ocfg.alpha, ocfg.j))?)?,
        "yy" => Evolution::dense(&Hamiltonian::dipolar_yy(&chain_couplings(n, ocfg.alpha, ocfg.j))?)?,
        "generic" => Evolution::dense(&Hamiltonian::generic_random(
            &chain_couplings(n, ocfg.alpha, ocfg.j),
            seed,
        )?)?,
        m => return Err(Error::Config(format!("unknown oracle model `{m}`"))),
    };
    let est = match ocfg.estimator.as_str() {
        "exact" => Estimator::Exact,
        "random" => Estimator::Random { n_states: ocfg.n_states, seed },
        e => return Err(Error::Config(format!("unknown estimator `{e}`"))),
    };
    let mut wg = csv::Writer::from_writer(fs::File::create(out.join("global_otoc.csv"))?);
    wg.write_record(["t", "global_otoc", "estimator_err"])?;
    let mut wl = csv::Writer::from_writer(fs::File::create(out.join("local_otoc.csv"))?);
    wl.write_record(["t", "r", "local_otoc"])?;
    let mut wm = csv::Writer::from_writer(fs::File::create(out.join("mqc.csv"))?);
    wm.write_record(["t", "n", "g_n"])?;
    for &t in &ocfg.times_units {
        let g = global_otoc(&ev, t, est)?;
        wg.write_record(&[
            format!("{t:.9}"),
            format!("{:.9}", g.value),
            format!("{:.9}", g.stderr),
        ])?;
        for r in 1..n {
            let l = local_otoc(&ev, 0, r, t, est)?;
            wl.write_record(&[format!("{t:.9}"), r.to_string(), format!("{:.9}", l.value)])?;
        }
        if n <= 12 {
            let spec = mqc_exact(&ev, t, None)?;
            for (&order, &gn) in spec.n_values.iter().zip(&spec.g) {
                wm.write_record(&[format!("{t:.9}"), order.to_string(), format!("{gn:.12e}")])?;
            }
        }
    }
    wg.flush()?;
    wl.flush()?;
    wm.flush()?;
    Ok(())
}

fn run_analyze(config: &RunConfig, out: &Path) -> Result<()> {
    let acfg = section(&config.analyze, "analyze")?;
    let mut rdr = csv::Reader::from_path(&acfg.gn_csv)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", acfg.gn_csv.display())))?;
    let headers = rdr.headers()?.clone();
    let (ncol, gcol) = match (headers.iter().position(|h| h == "n"), headers.iter().position(|h| h == "g_n")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Config("expected CSV columns `n` and `g_n`".into())),
    };
    let mut n_values = Vec::new();
    let mut g = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let n: i64 = rec
            .get(ncol)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Config("bad `n` value in spectrum CSV".into()))?;
        let gv: f64 = rec
            .get(gcol)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Config("bad `g_n` value in spectrum CSV".into()))?;
        n_values.push(n);
        g.push(gv);
    }
    let spec = MQCSpectrum::new(n_values, g);
    let fit = cluster_size_fit(&spec)?;
    let report = serde_json::json!({
        "second_moment": spec.second_moment(),
        "cluster_size": fit.k,
        "cluster_size_err": fit.k_err,
        "fit_residual": fit.residual,
        "exceeds_polarization_bound": fit.exceeds_polarization_bound,
    });
    let mut f = fs::File::create(out.join("mqc_analysis.json"))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn read_timeseries_csv(path: &Path) -> Result<TimeSeries> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let h = rdr.headers()?.clone();
    if h.get(0) != Some("t") || h.get(1) != Some("n_op_mean") {
        return Err(Error::Config("expected CSV header `t,n_op_mean,n_op_stderr,trials`".into()));
    }
    let mut ts = TimeSeries { times: vec![], n_op_mean: vec![], n_op_stderr: vec![], trials: 0 };
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad numeric field in {}", path.display())))
        };
        ts.times.push(parse(0)?);
        ts.n_op_mean.push(parse(1)?);
        ts.n_op_stderr.push(parse(2).unwrap_or(0.0));
        ts.trials = rec.get(3).and_then(|s| s.parse().ok()).unwrap_or(ts.trials);
    }
    Ok(ts)
}

fn run_fit(config: &RunConfig, out: &Path) -> Result<()> {
    let fcfg = section(&config.fit, "fit")?;
    let sim = read_timeseries_csv(&fcfg.sim_csv)?;
    let tag = match fcfg.hamiltonian.as_str() {
        "dq" => HamiltonianTag::DQ,
        "yy" => HamiltonianTag::YY,
        "other" => HamiltonianTag::Other,
        h => return Err(Error::Config(format!("unknown hamiltonian tag `{h}`"))),
    };
    let file = fs::File::open(&fcfg.experiment_csv)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", fcfg.experiment_csv.display())))?;
    let exp = load_experiment(
        file,
        &fcfg.experiment_csv.display().to_string(),
        tag,
        fcfg.time_unit_ms,
    )?;
    let fit = fit_experiment(&sim, &exp)?;
    let regime = classify_regime(fcfg.alpha, fcfg.dimension)?;
    let mut caveats: Vec<String> = Vec::new();
    if regime.tail_caveat {
        caveats.push("front-tail scaling has numerical support in one dimension only".into());
    }
    let report = serde_json::json!({
        "J": fit.j,
        "shift": fit.shift,
        "residual": fit.residual,
        "covariance": fit.covariance,
        "regime": regime,
        "caveats": caveats,
    });
    let mut f = fs::File::create(out.join("fit.json"))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn run_regimes(config: &RunConfig, out: &Path) -> Result<()> {
    let rcfg = section(&config.regimes, "regimes")?;
    let mut w = csv::Writer::from_writer(fs::File::create(out.join("regimes.csv"))?);
    w.write_record(["alpha", "dimension", "regime", "light_cone", "broadening", "B", "eta", "tail_caveat"])?;
    for &alpha in &rcfg.alphas {
        let r = classify_regime(alpha, rcfg.dimension)?;
        w.write_record(&[
            format!("{alpha}"),
            rcfg.dimension.to_string(),
            format!("{:?}", r.id),
            r.light_cone.clone(),
            r.broadening.clone().unwrap_or_default(),
            r.b.map_or(String::new(), |b| format!("{b:.9}")),
            r.eta.map_or(String::new(), |e| format!("{e:.9}")),
            r.tail_caveat.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
