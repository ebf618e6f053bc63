//! Hamiltonian flows: an adaptive Dormand-Prince 5(4) integrator with dense
//! output, boundary-launched trajectories, the near-boundary collar chart,
//! and the boundary diagnostics used by the certification pipeline.

use crate::error::{Error, Result};
use crate::homogenize;
use crate::model::{HamiltonianModel, PhasePoint, PotentialWell, WellRegion};
use nalgebra::{DMatrix, DVector};

/// Which quantity the trajectory conserves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conserved {
    /// Hamilton's equations for H; H = E along the flow.
    Energy,
    /// Hamilton's equations for the homogenized U; U = 1 along the flow.
    UnitU,
}

/// Dense-output segment of one accepted step (quartic Hermite-type
/// interpolant of the 5(4) pair).
#[derive(Clone, Debug)]
struct DenseSeg {
    t0: f64,
    h: f64,
    r1: DVector<f64>,
    r2: DVector<f64>,
    r3: DVector<f64>,
    r4: DVector<f64>,
    r5: DVector<f64>,
}

impl DenseSeg {
    fn eval(&self, t: f64) -> DVector<f64> {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        &self.r1
            + (&self.r2 + (&self.r3 + (&self.r4 + &self.r5 * theta1) * theta) * theta1) * theta
    }
}

/// An integrated trajectory with interpolation between the accepted nodes.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub conserved: Conserved,
    pub grid: Vec<f64>,
    pub states: Vec<PhasePoint>,
    /// worst deviation of the conserved quantity over the accepted nodes
    pub drift: f64,
    /// time at which the trajectory left the closed well, if it did
    pub escaped: Option<f64>,
    segs: Vec<DenseSeg>,
    n: usize,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn t_end(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn t_start(&self) -> f64 {
        self.grid[0]
    }

    /// Interpolated full state (q, p) at time t inside the integrated span.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        if self.segs.is_empty() {
            return flatten(&self.states[0]);
        }
        let t = t.clamp(self.t_start(), self.t_end());
        // locate the segment containing t
        let mut lo = 0;
        let mut hi = self.segs.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.segs[mid].t0 + self.segs[mid].h < t {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        self.segs[lo].eval(t)
    }

    pub fn state(&self, t: f64) -> PhasePoint {
        unflatten(&self.eval(t), self.n)
    }

    /// Position component at time t.
    pub fn position(&self, t: f64) -> DVector<f64> {
        let y = self.eval(t);
        y.rows(0, self.n).into_owned()
    }
}

fn flatten(z: &PhasePoint) -> DVector<f64> {
    let n = z.q.len();
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(&z.q);
    y.rows_mut(n, n).copy_from(&z.p);
    y
}

fn unflatten(y: &DVector<f64>, n: usize) -> PhasePoint {
    PhasePoint {
        q: y.rows(0, n).into_owned(),
        p: y.rows(n, n).into_owned(),
    }
}

// Dormand-Prince 5(4) coefficients.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense-output weights
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// Stage abscissae are not needed: every right-hand side here is autonomous.

struct StepOutput {
    grid: Vec<f64>,
    ys: Vec<DVector<f64>>,
    segs: Vec<DenseSeg>,
    escaped: Option<f64>,
}

/// Core adaptive integrator. `post_step` may adjust the accepted state
/// (renormalization); `escape` stops integration when it reports true.
fn dopri5<F, P, S>(
    mut rhs: F,
    y0: DVector<f64>,
    t0: f64,
    t1: f64,
    tol: f64,
    mut post_step: P,
    escape: S,
) -> Result<StepOutput>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    P: FnMut(&mut DVector<f64>) -> Result<()>,
    S: Fn(&DVector<f64>) -> bool,
{
    let span = t1 - t0;
    let mut grid = vec![t0];
    let mut ys = vec![y0.clone()];
    let mut segs = Vec::new();
    if span == 0.0 {
        return Ok(StepOutput { grid, ys, segs, escaped: None });
    }
    if span < 0.0 {
        return Err(Error::InvalidInput("integration span must be forward".into()));
    }
    let dim = y0.len();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(&y)?;
    let mut h = (0.01 * span).min(1e-2_f64.max(tol.sqrt())).max(1e-8);
    let mut nsteps = 0usize;
    let mut escaped = None;
    while t < t1 {
        nsteps += 1;
        if nsteps > 2_000_000 {
            return Err(Error::StepFailure { t });
        }
        if h < 1e-14 * span {
            return Err(Error::StepFailure { t });
        }
        if t + h > t1 {
            h = t1 - t;
        }
        let k2 = rhs(&(&y + &k1 * (h * A21)))?;
        let k3 = rhs(&(&y + &k1 * (h * A31) + &k2 * (h * A32)))?;
        let k4 = rhs(&(&y + &k1 * (h * A41) + &k2 * (h * A42) + &k3 * (h * A43)))?;
        let k5 = rhs(&(&y + &k1 * (h * A51) + &k2 * (h * A52) + &k3 * (h * A53) + &k4 * (h * A54)))?;
        let k6 = rhs(
            &(&y + &k1 * (h * A61) + &k2 * (h * A62) + &k3 * (h * A63) + &k4 * (h * A64)
                + &k5 * (h * A65)),
        )?;
        let y_new = &y + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * h;
        let k7 = rhs(&y_new)?;
        let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
        let mut err = 0.0;
        for i in 0..dim {
            let sc = tol + tol * y[i].abs().max(y_new[i].abs());
            let r = err_vec[i] / sc;
            err += r * r;
        }
        err = (err / dim as f64).sqrt();
        if err <= 1.0 {
            // accept; build dense segment before any renormalization
            let ydiff = &y_new - &y;
            let bspl = &k1 * h - &ydiff;
            let r4 = &ydiff - &k7 * h - &bspl;
            let r5 = (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
            segs.push(DenseSeg {
                t0: t,
                h,
                r1: y.clone(),
                r2: ydiff,
                r3: bspl,
                r4,
                r5,
            });
            t += h;
            y = y_new;
            post_step(&mut y)?;
            grid.push(t);
            ys.push(y.clone());
            if escape(&y) {
                escaped = Some(t);
                break;
            }
            k1 = rhs(&y)?;
        }
        let fac = (0.9 * (1.0 / err.max(1e-10)).powf(0.2)).clamp(0.2, 5.0);
        h *= fac;
    }
    Ok(StepOutput { grid, ys, segs, escaped })
}

/// Right-hand side of Hamilton's equations for H.
fn h_rhs(model: &HamiltonianModel, y: &DVector<f64>) -> Result<DVector<f64>> {
    let n = model.n;
    let z = unflatten(y, n);
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&model.dk_dp(&z.p));
    out.rows_mut(n, n).copy_from(&(-model.grad_v(&z.q)));
    Ok(out)
}

/// Right-hand side of Hamilton's equations for the homogenized U.
fn u_rhs(model: &HamiltonianModel, y: &DVector<f64>) -> Result<DVector<f64>> {
    let n = model.n;
    let z = unflatten(y, n);
    let (dudq, dudp) = homogenize::grad_u(model, &z.q, &z.p)?;
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&dudp);
    out.rows_mut(n, n).copy_from(&(-dudq));
    Ok(out)
}

/// Integrate Hamilton's equations for H from `z0` over `[t0, t1]`.
pub fn integrate_h(
    model: &HamiltonianModel,
    z0: &PhasePoint,
    t_span: (f64, f64),
    tol: f64,
) -> Result<Trajectory> {
    if tol <= 0.0 {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let n = model.n;
    let e0 = model.eval_hamiltonian(z0)?;
    let escape_margin = 1e-6 * (1.0 + model.energy.abs());
    let out = dopri5(
        |y| h_rhs(model, y),
        flatten(z0),
        t_span.0,
        t_span.1,
        tol,
        |_| Ok(()),
        |y| {
            let z = unflatten(y, n);
            model.potential_value(&z.q) > model.energy + escape_margin
        },
    )?;
    let mut drift: f64 = 0.0;
    let states: Vec<PhasePoint> = out.ys.iter().map(|y| unflatten(y, n)).collect();
    for z in &states {
        drift = drift.max((model.eval_hamiltonian(z)? - e0).abs());
    }
    Ok(Trajectory {
        conserved: Conserved::Energy,
        grid: out.grid,
        states,
        drift,
        escaped: out.escaped,
        segs: out.segs,
        n,
    })
}

/// Integrate the U-flow from a shell point, renormalizing p <- p / sqrt(U)
/// after each accepted step so that U = 1 is maintained to round-off.
pub fn integrate_u(
    model: &HamiltonianModel,
    z0: &PhasePoint,
    s_span: (f64, f64),
    tol: f64,
) -> Result<Trajectory> {
    let gap_floor = 1e-9 * (1.0 + model.energy.abs());
    integrate_u_with_floor(model, z0, s_span, tol, gap_floor)
}

/// Same as `integrate_u`, but stops once E - V drops below `gap_floor`.
/// The U-flow right-hand side is singular on the well boundary, so callers
/// that only need the interior part of the geodesic should pass a generous
/// floor instead of letting the stepper grind into the singularity.
pub fn integrate_u_with_floor(
    model: &HamiltonianModel,
    z0: &PhasePoint,
    s_span: (f64, f64),
    tol: f64,
    gap_floor: f64,
) -> Result<Trajectory> {
    if tol <= 0.0 {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let n = model.n;
    let u0 = homogenize::eval_u(model, &z0.q, &z0.p)?;
    if (u0 - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "initial point is off the unit-U shell (U = {u0:.6e})"
        )));
    }
    let out = dopri5(
        |y| u_rhs(model, y),
        flatten(z0),
        s_span.0,
        s_span.1,
        tol,
        |y| {
            let z = unflatten(y, n);
            let u = homogenize::eval_u(model, &z.q, &z.p)?;
            let scale = 1.0 / u.sqrt();
            for i in n..2 * n {
                y[i] *= scale;
            }
            Ok(())
        },
        |y| {
            let z = unflatten(y, n);
            model.energy - model.potential_value(&z.q) < gap_floor
        },
    )?;
    let mut drift: f64 = 0.0;
    let states: Vec<PhasePoint> = out.ys.iter().map(|y| unflatten(y, n)).collect();
    for z in &states {
        drift = drift.max((homogenize::eval_u(model, &z.q, &z.p)? - 1.0).abs());
    }
    Ok(Trajectory {
        conserved: Conserved::UnitU,
        grid: out.grid,
        states,
        drift,
        escaped: out.escaped,
        segs: out.segs,
        n,
    })
}

/// Energy-E trajectory launched at rest from a boundary point.
pub fn launch_from_boundary(
    model: &HamiltonianModel,
    well: &PotentialWell,
    q_boundary: &DVector<f64>,
    t_max: f64,
    tol: f64,
) -> Result<Trajectory> {
    if crate::model::well_classify(model, well, q_boundary) != WellRegion::Boundary {
        return Err(Error::InvalidInput("launch point is not on the well boundary".into()));
    }
    let z0 = PhasePoint::new(q_boundary.clone(), DVector::zeros(model.n))?;
    let traj = integrate_h(model, &z0, (0.0, t_max), tol)?;
    if let Some(te) = traj.escaped {
        if te < 1e-6 * t_max.max(1.0) {
            return Err(Error::ImmediateEscape);
        }
    }
    Ok(traj)
}

/// Near-boundary coordinates of an interior point: the unique (t, Q) with
/// the boundary-launched solution from Q passing through y at time t.
#[derive(Clone, Debug)]
pub struct CollarCoords {
    pub t_y: f64,
    pub q_y: DVector<f64>,
    pub jacobian_condition: f64,
}

/// Project a point onto {V = E} by 1-d Newton along grad V.
pub fn project_to_boundary(model: &HamiltonianModel, q: &DVector<f64>) -> Result<DVector<f64>> {
    let mut x = q.clone();
    for _ in 0..80 {
        let r = model.potential_value(&x) - model.energy;
        if r.abs() <= 1e-13 * (1.0 + model.energy.abs()) {
            return Ok(x);
        }
        let g = model.grad_v(&x);
        let gg = g.norm_squared();
        if gg < 1e-18 {
            return Err(Error::DegenerateBoundary { norm: gg.sqrt() });
        }
        x -= g * (r / gg);
    }
    Err(Error::NewtonDivergence("boundary projection stalled".into()))
}

/// Orthonormal basis of the hyperplane orthogonal to `normal` (unit), via a
/// Householder reflection mapping e1 to the normal.
pub fn tangent_basis(normal: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = normal.len();
    let mut w = normal.clone();
    w[0] += if normal[0] >= 0.0 { 1.0 } else { -1.0 };
    let wn2 = w.norm_squared();
    let mut basis = Vec::with_capacity(n - 1);
    for k in 1..n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        let coef = 2.0 * w[k] / wn2;
        let col = e - &w * coef;
        // sign flip keeps the frame consistent with the reflection of e1
        basis.push(if normal[0] >= 0.0 { -col } else { col });
    }
    basis
}

/// Solve q(t, Q) = y for (t, Q) by damped Newton with a finite-difference
/// Jacobian over (t, tangential boundary offsets).
pub fn collar_chart(
    model: &HamiltonianModel,
    well: &PotentialWell,
    y: &DVector<f64>,
) -> Result<CollarCoords> {
    let n = model.n;
    match crate::model::well_classify(model, well, y) {
        WellRegion::Exterior => return Err(Error::InvalidInput("point outside the well".into())),
        WellRegion::Boundary => {
            return Ok(CollarCoords { t_y: 0.0, q_y: y.clone(), jacobian_condition: 1.0 })
        }
        WellRegion::Interior => {}
    }
    // initial boundary guess: radial projection through y from the seed
    let dir = y - &well.seed;
    let dn = dir.norm();
    let q0 = if dn < 1e-12 {
        return Err(Error::OutsideCollar);
    } else {
        let dir = dir / dn;
        let r = crate::model::boundary_radius(model, well, &dir)?;
        project_to_boundary(model, &(&well.seed + dir * r))?
    };
    // initial time guess from the leading expansion q(t) ~ Q - t^2/2 A grad V
    let a_gv = model.d2k_dp2(&DVector::zeros(n)) * model.grad_v(&q0);
    let dist = (y - &q0).norm();
    let mut t = (2.0 * dist / a_gv.norm().max(1e-12)).sqrt();

    let mut q_b = q0;
    let tol_pos = 1e-10;
    let residual = |t: f64, q_b: &DVector<f64>| -> Result<DVector<f64>> {
        let traj = launch_from_boundary(model, well, q_b, t.max(1e-12), 1e-11)?;
        Ok(traj.position(t) - y)
    };
    let mut cond = 1.0;
    let mut r = residual(t, &q_b)?;
    for _ in 0..60 {
        if r.norm() <= tol_pos {
            return Ok(CollarCoords { t_y: t, q_y: q_b, jacobian_condition: cond });
        }
        // finite-difference Jacobian in (t, tangent offsets)
        let conormal = crate::model::boundary_conormal(model, well, &q_b)?;
        let basis = tangent_basis(&conormal);
        let mut jac = DMatrix::zeros(n, n);
        let ht = 1e-6 * (1.0 + t);
        let r_t = residual(t + ht, &q_b)?;
        jac.set_column(0, &((r_t - &r) / ht));
        for (k, e) in basis.iter().enumerate() {
            let hu = 1e-6;
            let q_shift = project_to_boundary(model, &(&q_b + e * hu))?;
            let r_u = residual(t, &q_shift)?;
            jac.set_column(k + 1, &((r_u - &r) / hu));
        }
        let svd = jac.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !cond.is_finite() || cond > 1e6 {
            return Err(Error::OutsideCollar);
        }
        let step = jac
            .lu()
            .solve(&r)
            .ok_or(Error::OutsideCollar)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..25 {
            let t_c = t - lambda * step[0];
            if t_c > 0.0 {
                let mut q_c = q_b.clone();
                for (k, e) in basis.iter().enumerate() {
                    q_c += e * (-lambda * step[k + 1]);
                }
                if let Ok(q_c) = project_to_boundary(model, &q_c) {
                    if let Ok(rc) = residual(t_c, &q_c) {
                        if rc.norm() < r.norm() {
                            t = t_c;
                            q_b = q_c;
                            r = rc;
                            accepted = true;
                            break;
                        }
                    }
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::OutsideCollar);
        }
    }
    if r.norm() <= 1e-8 {
        Ok(CollarCoords { t_y: t, q_y: q_b, jacobian_condition: cond })
    } else {
        Err(Error::OutsideCollar)
    }
}

/// Second time derivative of V along the H-flow at a shell state.
/// With a p-independent potential this is grad2V[q_dot, q_dot] - gradV^T
/// (d2K/dp2) gradV.
pub fn d2v_dt2(model: &HamiltonianModel, z: &PhasePoint) -> f64 {
    let qdot = model.dk_dp(&z.p);
    let hess = model.hess_v(&z.q);
    let gv = model.grad_v(&z.q);
    let term1 = (qdot.transpose() * hess * &qdot)[(0, 0)];
    let term2 = (gv.transpose() * model.d2k_dp2(&z.p) * &gv)[(0, 0)];
    term1 - term2
}

/// Largest eps in a geometric grid such that d2V/dt2 <= -eps holds on all
/// sampled shell states with V >= E - eps.
pub fn estimate_epsilon_bar(
    model: &HamiltonianModel,
    well: &PotentialWell,
    nsamples: usize,
) -> Result<f64> {
    if nsamples < 100 {
        return Err(Error::InvalidInput("epsilon estimate needs nsamples >= 100".into()));
    }
    let mut rng = crate::model::deterministic_rng(0xeb41);
    // pre-sample shell states across the well once
    let mut states = Vec::with_capacity(nsamples);
    for _ in 0..nsamples {
        let q = crate::model::sample_interior(model, well, &mut rng)?;
        let theta = crate::model::random_unit(model.n, &mut rng);
        let w = homogenize::omega(model, &q, &theta)?;
        let v = model.potential_value(&q);
        states.push((v, PhasePoint::new(q, theta * w)?));
    }
    let v_min = states.iter().map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
    let eps_max = model.energy - v_min;
    let mut eps = eps_max;
    for _ in 0..60 {
        let ok = states
            .iter()
            .filter(|(v, _)| *v >= model.energy - eps)
            .all(|(_, z)| d2v_dt2(model, z) <= -eps);
        if ok {
            return Ok(eps);
        }
        eps *= 0.8;
    }
    Err(Error::NoValidEpsilon)
}

/// One maximal rim-residence interval of a trajectory.
#[derive(Clone, Debug)]
pub struct RimInterval {
    pub t_enter: f64,
    pub t_exit: f64,
    pub exceeds_bound: bool,
}

/// Rim audit report: residence intervals in {V >= E - eps/2} and the
/// documented residence bound 2 sqrt(2/eps).
#[derive(Clone, Debug)]
pub struct RimReport {
    pub eps_bar: f64,
    pub bound: f64,
    pub intervals: Vec<RimInterval>,
}

/// Locate a sign change of `f` on dense output by bisection to 1e-12 in t.
fn bisect_crossing<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if (b - a).abs() < 1e-12 {
            return mid;
        }
        if (f(mid) > 0.0) == (fa > 0.0) {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Detect maximal intervals with V(q(t)) >= E - eps/2 and compare their
/// lengths against the documented bound (flagged, not failed).
pub fn rim_time_audit(model: &HamiltonianModel, traj: &Trajectory, eps_bar: f64) -> Result<RimReport> {
    if traj.conserved != Conserved::Energy {
        return Err(Error::InvalidInput("rim audit requires an energy-conserving trajectory".into()));
    }
    let threshold = model.energy - 0.5 * eps_bar;
    let indicator = |t: f64| {
        let q = traj.position(t);
        model.potential_value(&q) - threshold
    };
    let bound = 2.0 * (2.0 / eps_bar).sqrt();
    // scan on a fine grid, refine crossings on dense output
    let (t0, t1) = (traj.t_start(), traj.t_end());
    let m = 4000;
    let mut intervals = Vec::new();
    let mut inside = indicator(t0) >= 0.0;
    let mut enter = if inside { Some(t0) } else { None };
    for i in 1..=m {
        let t = t0 + (t1 - t0) * i as f64 / m as f64;
        let now = indicator(t) >= 0.0;
        if now != inside {
            let prev = t0 + (t1 - t0) * (i - 1) as f64 / m as f64;
            let tc = bisect_crossing(&indicator, prev, t);
            if now {
                enter = Some(tc);
            } else if let Some(te) = enter.take() {
                intervals.push(RimInterval {
                    t_enter: te,
                    t_exit: tc,
                    exceeds_bound: tc - te > bound,
                });
            }
            inside = now;
        }
    }
    if let Some(te) = enter {
        intervals.push(RimInterval { t_enter: te, t_exit: t1, exceeds_bound: t1 - te > bound });
    }
    Ok(RimReport { eps_bar, bound, intervals })
}

/// Remainder size and log-log slope of the leading velocity expansion
/// q_dot(t, Q0) = -t (d2K/dp2)(Q0, 0) grad V(Q0) + o(t) near the boundary.
#[derive(Clone, Debug)]
pub struct ExpansionReport {
    pub t_values: Vec<f64>,
    pub remainders: Vec<f64>,
    pub slope: f64,
    pub pass: bool,
}

pub fn boundary_expansion_check(
    model: &HamiltonianModel,
    well: &PotentialWell,
    q0: &DVector<f64>,
    t_grid: &[f64],
) -> Result<ExpansionReport> {
    if t_grid.is_empty() || t_grid.iter().any(|&t| t <= 0.0 || t > 0.2) {
        return Err(Error::InvalidInput("expansion grid must lie in (0, 0.2]".into()));
    }
    let t_max = t_grid.iter().cloned().fold(0.0, f64::max);
    let traj = launch_from_boundary(model, well, q0, t_max, 1e-12)?;
    let lead = model.d2k_dp2(&DVector::zeros(model.n)) * model.grad_v(q0);
    let mut remainders = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let z = traj.state(t);
        let qdot = model.dk_dp(&z.p);
        remainders.push((qdot + &lead * t).norm());
    }
    // least-squares slope of log r against log t
    let m = t_grid.len() as f64;
    let lx: Vec<f64> = t_grid.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = remainders.iter().map(|r| r.max(1e-300).ln()).collect();
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    Ok(ExpansionReport { t_values: t_grid.to_vec(), remainders, slope, pass: slope >= 1.9 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legendre;
    use crate::model::TangentPoint;
    use crate::scenario;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn harmonic_half_period_closed_form() {
        let s = scenario::s1();
        let z0 = PhasePoint::new(v2(1.0, 0.0), v2(0.0, 0.0)).unwrap();
        let traj = integrate_h(&s.model, &z0, (0.0, PI), 1e-12).unwrap();
        let z = traj.state(PI);
        assert_abs_diff_eq!(z.q[0], -1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(z.q[1], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(z.p.norm(), 0.0, epsilon = 1e-8);
        // dense output against cos t on a fine sweep
        for i in 1..50 {
            let t = PI * i as f64 / 50.0;
            assert_abs_diff_eq!(traj.position(t)[0], t.cos(), epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_span_returns_initial_state() {
        let s = scenario::s2();
        let z0 = PhasePoint::new(v2(0.3, 0.1), v2(0.2, -0.1)).unwrap();
        let traj = integrate_h(&s.model, &z0, (0.0, 0.0), 1e-10).unwrap();
        assert_eq!(traj.grid.len(), 1);
        assert_eq!(traj.states[0], z0);
    }

    #[test]
    fn energy_drift_stays_below_budget() {
        for s in [scenario::s1(), scenario::s2(), scenario::s3()] {
            let z0 = PhasePoint::new(v2(0.4, -0.2), v2(0.3, 0.25)).unwrap();
            let traj = integrate_h(&s.model, &z0, (0.0, 10.0), 1e-10).unwrap();
            assert!(traj.drift <= 1e-8, "drift {} on {}", traj.drift, s.name);
        }
    }

    #[test]
    fn time_reversal_symmetry() {
        let s = scenario::s3();
        let z0 = PhasePoint::new(v2(0.2, 0.1), v2(0.4, -0.3)).unwrap();
        let fwd = integrate_h(&s.model, &z0, (0.0, 2.0), 1e-12).unwrap();
        let z_end = fwd.state(2.0);
        let rev0 = PhasePoint::new(z_end.q.clone(), -&z_end.p).unwrap();
        let bwd = integrate_h(&s.model, &rev0, (0.0, 2.0), 1e-12).unwrap();
        let back = bwd.state(2.0);
        assert!((back.q - z0.q).norm() < 1e-8);
        assert!((back.p + z0.p).norm() < 1e-8);
    }

    #[test]
    fn unit_u_flow_keeps_shell_and_traces_harmonic_ellipse() {
        let s = scenario::s1();
        // F-unit tangent vector at (0.5, 0)
        let q = v2(0.5, 0.0);
        let g = legendre::eval_g(&s.model, &TangentPoint::new(q.clone(), v2(0.0, 1.0)).unwrap())
            .unwrap();
        let x = TangentPoint::new(q.clone(), v2(0.0, 1.0 / g.f)).unwrap();
        let z0 = legendre::to_momentum(&s.model, &x).unwrap();
        let traj = integrate_u(&s.model, &z0, (0.0, 0.6), 1e-11).unwrap();
        assert!(traj.drift <= 1e-10, "U drift {}", traj.drift);
        // the geodesic trace must stay on the projected harmonic ellipse
        // through (0.5, 0) with tangential launch: x^2/0.25 + y^2/0.75 = 1
        for i in 0..=30 {
            let t = 0.6 * i as f64 / 30.0;
            let qq = traj.position(t);
            let r = qq[0] * qq[0] / 0.25 + qq[1] * qq[1] / 0.75;
            assert_abs_diff_eq!(r, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn boundary_launch_matches_cosine_flow() {
        let s1 = scenario::s1();
        let traj = launch_from_boundary(&s1.model, &s1.well, &v2(1.0, 0.0), 2.0, 1e-12).unwrap();
        for i in 0..=20 {
            let t = 2.0 * i as f64 / 20.0;
            let q = traj.position(t);
            assert_abs_diff_eq!(q[0], t.cos(), epsilon = 1e-8);
            assert_abs_diff_eq!(q[1], 0.0, epsilon = 1e-10);
        }
        let s2 = scenario::s2();
        let traj = launch_from_boundary(&s2.model, &s2.well, &v2(1.0, 0.0), 2.0, 1e-12).unwrap();
        for i in 0..=20 {
            let t = 2.0 * i as f64 / 20.0;
            let q = traj.position(t);
            assert_abs_diff_eq!(q[0], t.cos(), epsilon = 1e-8);
            assert_abs_diff_eq!(q[1], 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn collar_chart_recovers_launch_data() {
        let s = scenario::s1();
        let c = collar_chart(&s.model, &s.well, &v2(0.8, 0.0)).unwrap();
        assert_abs_diff_eq!(c.t_y, 0.8_f64.acos(), epsilon = 1e-7);
        assert_abs_diff_eq!(c.q_y[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(c.q_y[1], 0.0, epsilon = 1e-7);

        let c = collar_chart(&s.model, &s.well, &v2(0.0, 0.9)).unwrap();
        assert_abs_diff_eq!(c.t_y, 0.9_f64.acos(), epsilon = 1e-7);
        assert_abs_diff_eq!(c.q_y[0], 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(c.q_y[1], 1.0, epsilon = 1e-7);

        // boundary point maps to itself at time zero
        let c = collar_chart(&s.model, &s.well, &v2(1.0, 0.0)).unwrap();
        assert_eq!(c.t_y, 0.0);

        // round trip: launching from (t_y, Q_y) reproduces y
        let y = v2(0.55, 0.55);
        let c = collar_chart(&s.model, &s.well, &y).unwrap();
        let traj = launch_from_boundary(&s.model, &s.well, &c.q_y, c.t_y, 1e-12).unwrap();
        assert!((traj.position(c.t_y) - y).norm() <= 1e-8);
    }

    #[test]
    fn epsilon_estimate_is_positive_and_respects_s1_cap() {
        let s1 = scenario::s1();
        let eps = estimate_epsilon_bar(&s1.model, &s1.well, 400).unwrap();
        // closed form: d2V/dt2 = 1 - 4V on the shell, so the condition
        // d2V/dt2 <= -eps on {V >= 1/2 - eps} forces eps <= 0.2
        assert!(eps > 0.05 && eps <= 0.2 + 1e-9, "eps = {eps}");
        let s3 = scenario::s3();
        let eps3 = estimate_epsilon_bar(&s3.model, &s3.well, 400).unwrap();
        assert!(eps3 > 0.0);
        assert!(matches!(
            estimate_epsilon_bar(&s1.model, &s1.well, 0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn rim_residence_of_the_diameter_orbit() {
        let s = scenario::s1();
        let z0 = PhasePoint::new(v2(1.0, 0.0), v2(0.0, 0.0)).unwrap();
        let traj = integrate_h(&s.model, &z0, (0.0, 2.0 * PI), 1e-12).unwrap();
        let report = rim_time_audit(&s.model, &traj, 0.5).unwrap();
        // {cos^2 t >= 1/2} on [0, 2pi]: [0, pi/4], [3pi/4, 5pi/4], [7pi/4, 2pi]
        assert_eq!(report.intervals.len(), 3);
        let mid = &report.intervals[1];
        assert_abs_diff_eq!(mid.t_exit - mid.t_enter, PI / 2.0, epsilon = 1e-6);
        assert!(!mid.exceeds_bound); // pi/2 < 2 sqrt(2/0.5) = 4
    }

    #[test]
    fn velocity_expansion_remainder_is_cubic() {
        let s = scenario::s1();
        let grid: Vec<f64> = (1..=10).map(|i| 0.02 * i as f64).collect();
        let report = boundary_expansion_check(&s.model, &s.well, &v2(1.0, 0.0), &grid).unwrap();
        // closed form remainder |t - sin t| ~ t^3/6
        assert_abs_diff_eq!(report.remainders[4], (0.1_f64 - 0.1_f64.sin()).abs(), epsilon = 1e-9);
        assert!(report.slope > 2.9 && report.slope < 3.1, "slope {}", report.slope);
        assert!(report.pass);
    }
}
