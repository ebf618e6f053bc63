//! Command line driver: scenario plumbing, pipeline orchestration, and
//! machine-readable artifacts (JSON with a schema tag plus CSV time series).
//!
//! Exit codes: 0 success, 2 validation failure, 3 certification failure,
//! 4 numerical failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brake_core::chords;
use brake_core::flow;
use brake_core::homogenize;
use brake_core::legendre;
use brake_core::model::{self, Family, HamiltonianModel, PhasePoint, Polynomial, PotentialWell, TangentPoint};
use brake_core::psi;
use brake_core::scenario;
use brake_core::Error as CoreError;
use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "brake", version, about = "Brake-orbit pipeline driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// key=value configuration file with dotted sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory for JSON/CSV artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// random seed for all sampling
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// worker cap for fan-out stages (the current pipeline is serial)
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// built-in scenario, or `custom` to build the model from --config
    #[arg(long, global = true, default_value = "s1")]
    scenario: String,
}

#[derive(Subcommand)]
enum Command {
    /// Model-level checks
    Scenario {
        #[command(subcommand)]
        action: ScenarioCmd,
    },
    /// Metric construction checks
    Metric {
        #[command(subcommand)]
        action: MetricCmd,
    },
    /// Boundary flow demonstrations and audits
    Flow {
        #[command(subcommand)]
        action: FlowCmd,
    },
    /// Distance-field computation and region certification
    Psi {
        #[command(subcommand)]
        action: PsiCmd,
    },
    /// Orthogonal geodesic chords
    Chords {
        #[command(subcommand)]
        action: ChordsCmd,
    },
    /// Brake orbits: full pipeline and independent verification
    Brake {
        #[command(subcommand)]
        action: BrakeCmd,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Check model invariants (convexity, well regularity)
    Validate,
}

#[derive(Subcommand)]
enum MetricCmd {
    /// Oracle agreement, homogeneity, and round-trip suites
    Verify,
}

#[derive(Subcommand)]
enum FlowCmd {
    /// Boundary-launched trajectories plus rim and expansion audits
    Demo,
}

#[derive(Subcommand)]
enum PsiCmd {
    /// Sample the distance field on a grid, with gradient spot checks
    Field,
    /// Select delta-hat and emit the certified region
    Certify,
}

#[derive(Subcommand)]
enum ChordsCmd {
    /// Multistart search for orthogonal chords of the certified region
    Find,
}

#[derive(Subcommand)]
enum BrakeCmd {
    /// Region, chords, and verified brake orbits in one run
    Solve,
    /// Recompute every certificate of a previous solve from raw states
    Verify,
}

/// Flat key=value configuration with dotted sections.
#[derive(Default)]
struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(format!("line {}: expected key=value", lineno + 1))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Config { map })
    }

    fn f64(&self, key: &str, default: f64) -> Result<f64, String> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| format!("{key}: not a number: {v}")),
        }
    }

    fn usize(&self, key: &str, default: usize) -> Result<usize, String> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| format!("{key}: not an integer: {v}")),
        }
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }
}

/// Tolerances and budgets shared by the commands.
struct Settings {
    tol_integration: f64,
    tol_newton: f64,
    grid: usize,
    starts: usize,
    budget: usize,
}

impl Settings {
    fn from(cfg: &Config) -> Result<Self, String> {
        let s = Settings {
            tol_integration: cfg.f64("tol.integration", 1e-11)?,
            tol_newton: cfg.f64("tol.newton", 1e-8)?,
            grid: cfg.usize("grid.resolution", 25)?,
            starts: cfg.usize("multistart.count", 16)?,
            budget: cfg.usize("cert.budget", 50)?,
        };
        if s.tol_integration <= 0.0 || s.tol_newton <= 0.0 {
            return Err("tolerances must be positive".into());
        }
        Ok(s)
    }
}

fn build_custom(cfg: &Config) -> Result<scenario::Scenario, String> {
    let energy = cfg.f64("model.energy", 0.5)?;
    let family = match cfg.str("model.family").unwrap_or("natural") {
        "natural" => {
            let diag = cfg.str("model.mass_diag").unwrap_or("1,1");
            let vals: Result<Vec<f64>, _> = diag.split(',').map(|x| x.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|_| format!("model.mass_diag: bad list: {diag}"))?;
            if vals.iter().any(|&m| m <= 0.0) {
                return Err("model.mass_diag: inverse-mass entries must be positive".into());
            }
            Family::Natural { mass_inv: DMatrix::from_diagonal(&DVector::from_vec(vals)) }
        }
        "quartic" => {
            let beta = cfg.f64("model.beta", 0.1)?;
            if beta < 0.0 {
                return Err("model.beta: quartic coefficient must be nonnegative".into());
            }
            Family::P4Perturbed { beta }
        }
        other => return Err(format!("model.family: unknown family '{other}'")),
    };
    // terms like `0.5:2,0; 0.5:0,2` meaning coef:exponents
    let term_list = cfg.str("potential.terms").unwrap_or("0.5:2,0; 0.5:0,2");
    let mut terms = Vec::new();
    let mut dim = 0usize;
    for piece in term_list.split(';') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let (c, exps) = piece
            .split_once(':')
            .ok_or(format!("potential.terms: expected coef:exponents in '{piece}'"))?;
        let coef: f64 = c.trim().parse().map_err(|_| format!("potential.terms: bad coefficient '{c}'"))?;
        let exps: Result<Vec<u32>, _> = exps.split(',').map(|x| x.trim().parse::<u32>()).collect();
        let exps = exps.map_err(|_| format!("potential.terms: bad exponents in '{piece}'"))?;
        dim = dim.max(exps.len());
        terms.push((coef, exps));
    }
    let potential = Polynomial::new(dim, terms).map_err(|e| e.to_string())?;
    let model = HamiltonianModel::new(energy, family, potential).map_err(|e| e.to_string())?;
    let seed_q = DVector::zeros(model.n);
    let well = PotentialWell::new(&model, seed_q).map_err(|e| e.to_string())?;
    Ok(scenario::Scenario { name: "custom", model, well })
}

/// Numerical-vs-certification split for the exit code.
fn code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::InvalidInput(_)
        | CoreError::DimensionMismatch { .. }
        | CoreError::NonFiniteInput
        | CoreError::UnsupportedDimension(_)
        | CoreError::WrongFamily
        | CoreError::EmptySamples => 2,
        CoreError::CertificationFailure(_)
        | CoreError::BoundViolation { .. }
        | CoreError::NoValidEpsilon
        | CoreError::EmptyRegion => 3,
        _ => 4,
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    fs::write(&path, text + "\n").map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn write_csv(dir: &Path, name: &str, header: &str, rows: &[Vec<f64>]) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|x| format!("{x:.17e}")).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

#[derive(Serialize)]
struct ValidateOut {
    schema: u32,
    scenario: String,
    family: String,
    energy: f64,
    nu1: f64,
    nu2: f64,
    nu3: f64,
    circumradius: f64,
    epsilon_bar: f64,
}

fn cmd_validate(s: &scenario::Scenario, out: &Path) -> Result<u8, String> {
    let run = || -> Result<ValidateOut, CoreError> {
        let bounds = model::convexity_constants(&s.model, &s.well, 256)?;
        let report = homogenize::audit_bounds(&s.model, &s.well, &bounds, 256)?;
        let worst = report
            .lower_u_margin
            .min(report.upper_u_margin)
            .min(report.uprime_margin);
        if worst < -1e-3 {
            return Err(CoreError::BoundViolation { margin: worst });
        }
        Ok(ValidateOut {
            schema: 1,
            scenario: s.name.to_string(),
            family: s.model.family.tag().to_string(),
            energy: s.model.energy,
            nu1: bounds.nu1,
            nu2: bounds.nu2,
            nu3: bounds.nu3,
            circumradius: model::well_circumradius(&s.model, &s.well)?,
            epsilon_bar: flow::estimate_epsilon_bar(&s.model, &s.well, 512)?,
        })
    };
    match run() {
        Ok(v) => {
            write_json(out, "validate.json", &v)?;
            println!("scenario {} validated", s.name);
            Ok(0)
        }
        Err(e) => {
            eprintln!("validation failed: {e}");
            Ok(2)
        }
    }
}

#[derive(Serialize)]
struct MetricOut {
    schema: u32,
    scenario: String,
    samples: usize,
    oracle_max_rel_error: Option<f64>,
    roundtrip_max_error: f64,
    euler_identity_max_error: f64,
    homogeneity_max_error: f64,
}

fn cmd_metric(s: &scenario::Scenario, out: &Path, seed: u64) -> Result<u8, String> {
    let run = || -> Result<MetricOut, CoreError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nsamples = 500;
        let riemannian = matches!(s.model.family, Family::Natural { .. });
        let mut oracle: f64 = 0.0;
        let mut roundtrip: f64 = 0.0;
        let mut euler: f64 = 0.0;
        let mut homog: f64 = 0.0;
        for _ in 0..nsamples {
            let q = model::sample_interior(&s.model, &s.well, &mut rng)?;
            let v = model::random_unit(s.model.n, &mut rng) * rng.gen_range(0.1..3.0);
            let x = TangentPoint::new(q.clone(), v)?;
            let e = legendre::eval_g(&s.model, &x)?;
            if riemannian {
                let g0 = legendre::riemannian_oracle_g(&s.model, &x)?;
                oracle = oracle.max((e.g - g0).abs() / g0.abs().max(1e-300));
            }
            let z = legendre::to_momentum(&s.model, &x)?;
            let back = legendre::to_velocity(&s.model, &z)?;
            roundtrip = roundtrip.max((&back.v - &x.v).norm() / x.v.norm().max(1.0));
            let all = homogenize::eval_all(&s.model, &q, &z.p)?;
            euler = euler.max((all.dudp.dot(&z.p) - 2.0 * all.u).abs());
            let doubled = legendre::eval_g(&s.model, &TangentPoint::new(q, &x.v * 2.0)?)?.g;
            homog = homog.max((doubled - 4.0 * e.g).abs() / (1.0 + doubled.abs()));
        }
        Ok(MetricOut {
            schema: 1,
            scenario: s.name.to_string(),
            samples: nsamples,
            oracle_max_rel_error: riemannian.then_some(oracle),
            roundtrip_max_error: roundtrip,
            euler_identity_max_error: euler,
            homogeneity_max_error: homog,
        })
    };
    match run() {
        Ok(v) => {
            let ok = v.oracle_max_rel_error.map_or(true, |x| x <= 1e-6)
                && v.roundtrip_max_error <= 1e-9
                && v.euler_identity_max_error <= 1e-10
                && v.homogeneity_max_error <= 1e-8;
            write_json(out, "metric.json", &v)?;
            if ok {
                println!("metric checks passed on {}", s.name);
                Ok(0)
            } else {
                eprintln!("metric residuals above tolerance; see metric.json");
                Ok(4)
            }
        }
        Err(e) => {
            eprintln!("metric verification failed: {e}");
            Ok(code_for(&e))
        }
    }
}

#[derive(Serialize)]
struct FlowOut {
    schema: u32,
    scenario: String,
    launch_point: Vec<f64>,
    t_span: f64,
    energy_drift: f64,
    epsilon_bar: f64,
    rim_bound: f64,
    rim_intervals: Vec<(f64, f64, bool)>,
    expansion_slope: f64,
}

fn cmd_flow(s: &scenario::Scenario, out: &Path, settings: &Settings) -> Result<u8, String> {
    let run = || -> Result<(FlowOut, Vec<Vec<f64>>), CoreError> {
        let dir = DVector::from_vec(vec![1.0, 0.0]);
        let r = model::boundary_radius(&s.model, &s.well, &dir)?;
        let q0 = flow::project_to_boundary(&s.model, &(&s.well.seed + dir * r))?;
        let t_span = 4.0;
        let traj = flow::launch_from_boundary(&s.model, &s.well, &q0, t_span, settings.tol_integration)?;
        let eps = flow::estimate_epsilon_bar(&s.model, &s.well, 512)?;
        let rim = flow::rim_time_audit(&s.model, &traj, eps)?;
        let t_grid: Vec<f64> = (0..10).map(|k| 0.2 * 0.75_f64.powi(k)).collect();
        let expansion = flow::boundary_expansion_check(&s.model, &s.well, &q0, &t_grid)?;
        let m = 400;
        let t_end = traj.t_end();
        let mut rows = Vec::with_capacity(m);
        for i in 0..m {
            let t = t_end * i as f64 / (m - 1) as f64;
            let z = traj.state(t);
            rows.push(vec![t, z.q[0], z.q[1], z.p[0], z.p[1]]);
        }
        Ok((
            FlowOut {
                schema: 1,
                scenario: s.name.to_string(),
                launch_point: q0.iter().cloned().collect(),
                t_span: t_end,
                energy_drift: traj.drift,
                epsilon_bar: eps,
                rim_bound: rim.bound,
                rim_intervals: rim
                    .intervals
                    .iter()
                    .map(|i| (i.t_enter, i.t_exit, i.exceeds_bound))
                    .collect(),
                expansion_slope: expansion.slope,
            },
            rows,
        ))
    };
    match run() {
        Ok((v, rows)) => {
            write_json(out, "flow.json", &v)?;
            write_csv(out, "trajectory.csv", "t,q1,q2,p1,p2", &rows)?;
            println!("flow demo written for {}", s.name);
            Ok(0)
        }
        Err(e) => {
            eprintln!("flow demo failed: {e}");
            Ok(code_for(&e))
        }
    }
}

#[derive(Serialize)]
struct PsiFieldOut {
    schema: u32,
    scenario: String,
    grid: usize,
    psi_min: f64,
    psi_max: f64,
    gradient_max_rel_error: f64,
}

fn cmd_psi_field(s: &scenario::Scenario, out: &Path, settings: &Settings, seed: u64) -> Result<u8, String> {
    let run = || -> Result<(PsiFieldOut, Vec<Vec<f64>>), CoreError> {
        let radius = model::well_circumradius(&s.model, &s.well)?;
        let n = settings.grid;
        let mut rows = Vec::new();
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = s.well.seed[0] - radius + 2.0 * radius * i as f64 / (n - 1) as f64;
                let y = s.well.seed[1] - radius + 2.0 * radius * j as f64 / (n - 1) as f64;
                let q = DVector::from_vec(vec![x, y]);
                let value = if s.model.potential_value(&q) >= s.model.energy {
                    0.0
                } else {
                    psi::eval_psi(&s.model, &s.well, &q)?.psi
                };
                lo = lo.min(value);
                hi = hi.max(value);
                rows.push(vec![x, y, value]);
            }
        }
        // spot-check the collar gradient formula against finite differences
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let dir = model::random_unit(s.model.n, &mut rng);
            let r = model::boundary_radius(&s.model, &s.well, &dir)?;
            let y = &s.well.seed + dir * (r * rng.gen_range(0.82..0.93));
            let grad = psi::grad_psi(&s.model, &s.well, &y)?;
            let h = 1e-5;
            let mut fd = DVector::zeros(s.model.n);
            for k in 0..s.model.n {
                let mut e = DVector::zeros(s.model.n);
                e[k] = h;
                fd[k] = (psi::eval_psi(&s.model, &s.well, &(&y + &e))?.psi
                    - psi::eval_psi(&s.model, &s.well, &(&y - &e))?.psi)
                    / (2.0 * h);
            }
            worst = worst.max((&grad - &fd).norm() / fd.norm().max(1e-12));
        }
        Ok((
            PsiFieldOut {
                schema: 1,
                scenario: s.name.to_string(),
                grid: n,
                psi_min: lo,
                psi_max: hi,
                gradient_max_rel_error: worst,
            },
            rows,
        ))
    };
    match run() {
        Ok((v, rows)) => {
            let ok = v.gradient_max_rel_error <= 1e-4;
            write_json(out, "psi.json", &v)?;
            write_csv(out, "psi_field.csv", "q1,q2,psi", &rows)?;
            if ok {
                println!("field written for {}", s.name);
                Ok(0)
            } else {
                eprintln!("gradient check above tolerance; see psi.json");
                Ok(4)
            }
        }
        Err(e) => {
            eprintln!("field sampling failed: {e}");
            Ok(code_for(&e))
        }
    }
}

#[derive(Serialize)]
struct CertEntryOut {
    point: Vec<f64>,
    tangent: Vec<f64>,
    value: f64,
    step: f64,
    consistency: f64,
    pass: bool,
}

#[derive(Serialize)]
struct RegionOut {
    schema: u32,
    scenario: String,
    delta_hat: f64,
    margin: f64,
    single_loop: bool,
    pass: bool,
    boundary: Vec<Vec<f64>>,
    certificate: Vec<CertEntryOut>,
}

fn region_out(s: &scenario::Scenario, region: &psi::OmegaRegion) -> RegionOut {
    RegionOut {
        schema: 1,
        scenario: s.name.to_string(),
        delta_hat: region.delta_hat,
        margin: region.concavity_certificate.margin,
        single_loop: region.homeomorphism_check,
        pass: region.concavity_certificate.pass,
        boundary: region
            .boundary_samples
            .iter()
            .map(|q| q.iter().cloned().collect())
            .collect(),
        certificate: region
            .concavity_certificate
            .entries
            .iter()
            .map(|e| CertEntryOut {
                point: e.point.iter().cloned().collect(),
                tangent: e.tangent.iter().cloned().collect(),
                value: e.h_value,
                step: e.h_used,
                consistency: e.consistency,
                pass: e.pass,
            })
            .collect(),
    }
}

fn cmd_psi_certify(s: &scenario::Scenario, out: &Path, settings: &Settings) -> Result<u8, String> {
    match psi::select_delta_hat(&s.model, &s.well, settings.budget) {
        Ok(region) => {
            write_json(out, "region.json", &region_out(s, &region))?;
            println!("region certified at delta = {:.6e}", region.delta_hat);
            Ok(0)
        }
        Err(e) => {
            eprintln!("certification failed: {e}");
            Ok(code_for(&e))
        }
    }
}

#[derive(Serialize)]
struct ChordOut {
    a: Vec<f64>,
    b: Vec<f64>,
    length: f64,
    orthogonality_residuals: Vec<f64>,
    first_variation: f64,
    nodes: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ChordsOut {
    schema: u32,
    scenario: String,
    delta_hat: f64,
    starts: usize,
    chords: Vec<ChordOut>,
}

fn chords_out(
    s: &scenario::Scenario,
    delta_hat: f64,
    starts: usize,
    list: &[chords::GeodesicChord],
) -> Result<ChordsOut, CoreError> {
    let mut items = Vec::with_capacity(list.len());
    for c in list {
        let fv = brake_core::geodesy::first_variation_residual(&s.model, &s.well, &c.curve)?;
        items.push(ChordOut {
            a: c.a.iter().cloned().collect(),
            b: c.b.iter().cloned().collect(),
            length: c.length,
            orthogonality_residuals: c.orthogonality_residuals.to_vec(),
            first_variation: fv,
            nodes: c.curve.nodes.iter().map(|q| q.iter().cloned().collect()).collect(),
        });
    }
    Ok(ChordsOut {
        schema: 1,
        scenario: s.name.to_string(),
        delta_hat,
        starts,
        chords: items,
    })
}

fn cmd_chords(s: &scenario::Scenario, out: &Path, settings: &Settings) -> Result<u8, String> {
    let run = || -> Result<ChordsOut, CoreError> {
        let region = psi::select_delta_hat(&s.model, &s.well, settings.budget)?;
        let list = chords::find_chords(&s.model, &s.well, &region, settings.starts, settings.tol_newton)?;
        chords_out(s, region.delta_hat, settings.starts, &list)
    };
    match run() {
        Ok(v) => {
            write_json(out, "chords.json", &v)?;
            println!("{} chord(s) found on {}", v.chords.len(), s.name);
            Ok(0)
        }
        Err(e) => {
            eprintln!("chord search failed: {e}");
            Ok(code_for(&e))
        }
    }
}

#[derive(Serialize)]
struct CertificateOut {
    energy_residual: f64,
    hamilton_residual: f64,
    endpoint_momentum_norms: Vec<f64>,
    endpoint_boundary_defects: Vec<f64>,
    interior: bool,
    pass: bool,
}

#[derive(Serialize)]
struct OrbitOut {
    period_half: f64,
    certificate: CertificateOut,
    time_grid: Vec<f64>,
    states: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct SolveOut {
    schema: u32,
    scenario: String,
    region: RegionOut,
    chords: ChordsOut,
    orbits: Vec<OrbitOut>,
}

fn certificate_out(c: &chords::OrbitCertificate) -> CertificateOut {
    CertificateOut {
        energy_residual: c.energy_residual,
        hamilton_residual: c.hamilton_residual,
        endpoint_momentum_norms: c.endpoint_momentum_norms.to_vec(),
        endpoint_boundary_defects: c.endpoint_boundary_defects.to_vec(),
        interior: c.interior,
        pass: c.pass,
    }
}

fn orbit_out(o: &chords::BrakeOrbit) -> OrbitOut {
    OrbitOut {
        period_half: o.period_half,
        certificate: certificate_out(&o.certificate),
        time_grid: o.time_grid.clone(),
        states: o
            .states
            .iter()
            .map(|z| z.q.iter().chain(z.p.iter()).cloned().collect())
            .collect(),
    }
}

fn cmd_solve(s: &scenario::Scenario, out: &Path, settings: &Settings) -> Result<u8, String> {
    match chords::solve(&s.model, &s.well, settings.budget, settings.starts, settings.tol_newton) {
        Ok((region, list, orbits)) => {
            let v = SolveOut {
                schema: 1,
                scenario: s.name.to_string(),
                region: region_out(s, &region),
                chords: chords_out(s, region.delta_hat, settings.starts, &list)
                    .map_err(|e| e.to_string())?,
                orbits: orbits.iter().map(orbit_out).collect(),
            };
            write_json(out, "solve.json", &v)?;
            for (k, o) in orbits.iter().enumerate() {
                let rows: Vec<Vec<f64>> = o
                    .time_grid
                    .iter()
                    .zip(&o.states)
                    .map(|(&t, z)| vec![t, z.q[0], z.q[1], z.p[0], z.p[1]])
                    .collect();
                write_csv(out, &format!("orbit_{k}.csv"), "t,q1,q2,p1,p2", &rows)?;
            }
            let all_pass = orbits.iter().all(|o| o.certificate.pass);
            if all_pass && !orbits.is_empty() {
                println!(
                    "{} brake orbit(s); half-periods: {}",
                    orbits.len(),
                    orbits
                        .iter()
                        .map(|o| format!("{:.6}", o.period_half))
                        .collect::<Vec<_>>()
                        .join(", ")
                );
                Ok(0)
            } else {
                eprintln!("solve produced unverified orbits; see solve.json");
                Ok(3)
            }
        }
        Err(e) => {
            eprintln!("solve failed: {e}");
            Ok(code_for(&e))
        }
    }
}

fn cmd_verify(s: &scenario::Scenario, out: &Path) -> Result<u8, String> {
    let path = out.join("solve.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| format!("cannot read {} (run `brake solve` first): {e}", path.display()))?;
    let parsed: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    if parsed.get("schema").and_then(|v| v.as_u64()) != Some(1) {
        return Err("solve.json: unsupported schema".into());
    }
    let orbits = parsed
        .get("orbits")
        .and_then(|v| v.as_array())
        .ok_or("solve.json: missing orbits")?;
    let mut verified = Vec::new();
    let mut all_pass = true;
    for o in orbits {
        let grid: Vec<f64> = o["time_grid"]
            .as_array()
            .ok_or("orbit: missing time_grid")?
            .iter()
            .filter_map(|v| v.as_f64())
            .collect();
        let states_raw = o["states"].as_array().ok_or("orbit: missing states")?;
        let mut states = Vec::with_capacity(states_raw.len());
        for row in states_raw {
            let vals: Vec<f64> = row
                .as_array()
                .ok_or("orbit: bad state row")?
                .iter()
                .filter_map(|v| v.as_f64())
                .collect();
            let n = vals.len() / 2;
            states.push(
                PhasePoint::new(
                    DVector::from_vec(vals[..n].to_vec()),
                    DVector::from_vec(vals[n..].to_vec()),
                )
                .map_err(|e| e.to_string())?,
            );
        }
        let orbit = chords::BrakeOrbit {
            period_half: *grid.last().ok_or("orbit: empty grid")?,
            time_grid: grid,
            states,
            certificate: chords::OrbitCertificate {
                energy_residual: 0.0,
                hamilton_residual: 0.0,
                endpoint_momentum_norms: [0.0; 2],
                endpoint_boundary_defects: [0.0; 2],
                interior: false,
                pass: false,
            },
        };
        let cert = chords::verify_brake_orbit(&s.model, &s.well, &orbit).map_err(|e| e.to_string())?;
        all_pass &= cert.pass;
        verified.push(certificate_out(&cert));
    }
    #[derive(Serialize)]
    struct VerifyOut {
        schema: u32,
        scenario: String,
        orbits: usize,
        certificates: Vec<CertificateOut>,
        pass: bool,
    }
    let v = VerifyOut {
        schema: 1,
        scenario: s.name.to_string(),
        orbits: verified.len(),
        certificates: verified,
        pass: all_pass,
    };
    write_json(out, "verify.json", &v)?;
    if all_pass {
        println!("all {} orbit(s) verified", v.orbits);
        Ok(0)
    } else {
        eprintln!("verification failed for at least one orbit; see verify.json");
        Ok(3)
    }
}

fn run() -> Result<u8, String> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let settings = Settings::from(&cfg)?;
    let s = match cli.scenario.as_str() {
        "custom" => build_custom(&cfg)?,
        name => scenario::by_name(name).map_err(|e| e.to_string())?,
    };
    let _ = cli.threads;
    match &cli.command {
        Command::Scenario { action: ScenarioCmd::Validate } => cmd_validate(&s, &cli.out),
        Command::Metric { action: MetricCmd::Verify } => cmd_metric(&s, &cli.out, cli.seed),
        Command::Flow { action: FlowCmd::Demo } => cmd_flow(&s, &cli.out, &settings),
        Command::Psi { action: PsiCmd::Field } => cmd_psi_field(&s, &cli.out, &settings, cli.seed),
        Command::Psi { action: PsiCmd::Certify } => cmd_psi_certify(&s, &cli.out, &settings),
        Command::Chords { action: ChordsCmd::Find } => cmd_chords(&s, &cli.out, &settings),
        Command::Brake { action: BrakeCmd::Solve } => cmd_solve(&s, &cli.out, &settings),
        Command::Brake { action: BrakeCmd::Verify } => cmd_verify(&s, &cli.out),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
