//! Geodesic initial-value problems, the curve energy functional, and the
//! minimizing curve from an interior point to the well boundary.

use crate::error::{Error, Result};
use crate::flow;
use crate::homogenize;
use crate::legendre;
use crate::model::{HamiltonianModel, PotentialWell, TangentPoint};
use crate::reparam;
use crate::spline::CurveSpline;
use nalgebra::DVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parametrization {
    /// nodes at uniform Finsler arclength; G(gamma, gamma') constant = speed
    FinslerArclength,
    /// arbitrary parametrization on a uniform [0,1] grid
    General,
}

/// Polyline surrogate of a curve on [0,1].
#[derive(Clone, Debug)]
pub struct DiscreteCurve {
    pub nodes: Vec<DVector<f64>>,
    pub parametrization: Parametrization,
    /// constant G-speed c = (Finsler length)^2 when tagged FinslerArclength
    pub speed: f64,
}

impl DiscreteCurve {
    pub fn reversed(&self) -> Self {
        let mut nodes = self.nodes.clone();
        nodes.reverse();
        Self { nodes, parametrization: self.parametrization, speed: self.speed }
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.nodes[0]
    }

    pub fn end(&self) -> &DVector<f64> {
        self.nodes.last().unwrap()
    }
}

/// Result of `geodesic_ivp`: the traced curve and, if the geodesic reached
/// the boundary early, the arclength at which it escaped.
#[derive(Clone, Debug)]
pub struct GeodesicTrace {
    pub curve: DiscreteCurve,
    pub escaped_at: Option<f64>,
}

/// Trace the unit-speed Finsler geodesic from x0 (F-normalized internally)
/// for the requested arclength.
pub fn geodesic_ivp(
    model: &HamiltonianModel,
    x0: &TangentPoint,
    length: f64,
    tol: f64,
) -> Result<GeodesicTrace> {
    if length < 0.0 {
        return Err(Error::InvalidInput("arclength must be nonnegative".into()));
    }
    if length == 0.0 {
        return Ok(GeodesicTrace {
            curve: DiscreteCurve {
                nodes: vec![x0.q.clone()],
                parametrization: Parametrization::FinslerArclength,
                speed: 0.0,
            },
            escaped_at: None,
        });
    }
    let m = legendre::eval_g(model, x0)?;
    if m.f == 0.0 {
        return Err(Error::InvalidInput("zero initial velocity".into()));
    }
    let unit = TangentPoint::new(x0.q.clone(), &x0.v / m.f)?;
    let z0 = legendre::to_momentum(model, &unit)?;
    let traj = flow::integrate_u(model, &z0, (0.0, length), tol)?;
    let reached = traj.t_end();
    let nnodes = ((reached / 0.005).ceil() as usize).clamp(2, 2000);
    let nodes: Vec<DVector<f64>> = (0..=nnodes)
        .map(|i| traj.position(reached * i as f64 / nnodes as f64))
        .collect();
    Ok(GeodesicTrace {
        curve: DiscreteCurve {
            nodes,
            parametrization: Parametrization::FinslerArclength,
            speed: reached * reached,
        },
        escaped_at: traj.escaped.map(|_| reached),
    })
}

/// The curve energy J(gamma) = int_0^1 G(gamma, gamma') ds by composite
/// panel quadrature of a spline through the nodes. G degenerates to 0 at
/// boundary endpoints; panel nodes never touch the interval ends.
pub fn energy_functional(model: &HamiltonianModel, gamma: &DiscreteCurve) -> Result<f64> {
    let m = gamma.nodes.len();
    if m < 2 {
        return Ok(0.0);
    }
    let s: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let spline = CurveSpline::new(&s, &gamma.nodes)?;
    let mut total = 0.0;
    for i in 1..m {
        let f = |t: f64| -> f64 {
            let q = spline.eval(t);
            let v = spline.deriv(t);
            match legendre::eval_g(model, &TangentPoint { q, v }) {
                Ok(me) => me.g,
                Err(_) => f64::NAN,
            }
        };
        let (val, _) = crate::quad::gk15(&mut { f }, s[i - 1], s[i]);
        if !val.is_finite() {
            return Err(Error::NonConvergentQuadrature(
                "energy integrand not finite on a segment".into(),
            ));
        }
        total += val;
    }
    Ok(total)
}

/// Max discrete Euler-Lagrange defect d/ds(dG/dv) - dG/dq over interior
/// nodes, normalized by the configuration-gradient scale, using a
/// fourth-order stencil for the s-derivative.
///
/// Near a boundary-contact endpoint the arclength parametrization carries a
/// fractional-power singularity, so a quarter of the nodes at such an end
/// are excluded from the measurement; smooth ends skip only the stencil
/// margin.
pub fn first_variation_residual(
    model: &HamiltonianModel,
    well: &PotentialWell,
    gamma: &DiscreteCurve,
) -> Result<f64> {
    let m = gamma.nodes.len();
    if m < 9 {
        return Ok(0.0);
    }
    let ds = 1.0 / (m - 1) as f64;
    let contact = |q: &DVector<f64>| {
        (model.energy - model.potential_value(q)).abs() <= 1e-6 * (1.0 + model.energy.abs())
    };
    // measurement window: stay clear of the endpoints by a fixed fraction of
    // the curve, not a fixed node count, because the metric's higher
    // derivatives grow towards the well boundary and the stencil error there
    // is a property of the instrument, not of the curve being checked
    let skip_lo = if contact(&gamma.nodes[0]) { m / 4 } else { m / 12 };
    let skip_hi = if contact(&gamma.nodes[m - 1]) { m / 4 } else { m / 12 };
    let _ = well;
    // node velocities by the same fourth-order stencil (spline derivatives
    // at nodes are only third-order accurate, which dominates the defect)
    let stencil = |data: &dyn Fn(usize) -> DVector<f64>, i: usize| {
        (-data(i + 2) + data(i + 1) * 8.0 - data(i - 1) * 8.0 + data(i - 2)) / (12.0 * ds)
    };
    // dG/dv = p* and dG/dq = -dU/dq(q, p*) at the interior nodes
    let mut pstar = vec![DVector::zeros(gamma.nodes[0].len()); m];
    let mut dgdq = vec![DVector::zeros(gamma.nodes[0].len()); m];
    for i in 2..m - 2 {
        let q = gamma.nodes[i].clone();
        let v = stencil(&|k: usize| gamma.nodes[k].clone(), i);
        let z = legendre::to_momentum(model, &TangentPoint { q: q.clone(), v })?;
        let (dudq, _) = homogenize::grad_u(model, &q, &z.p)?;
        pstar[i] = z.p;
        dgdq[i] = -dudq;
    }
    let scale = dgdq.iter().map(|g| g.norm()).fold(1.0_f64, f64::max);
    let mut worst: f64 = 0.0;
    for i in skip_lo.max(6)..(m - skip_hi.max(6)) {
        let dpds = stencil(&|k: usize| pstar[k].clone(), i);
        worst = worst.max((dpds - &dgdq[i]).norm());
    }
    Ok(worst / scale)
}

/// How the boundary minimizer was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MinimizerMethod {
    Collar,
    DiscreteMinimization,
}

#[derive(Clone, Debug)]
pub struct MinimizerResult {
    pub curve: DiscreteCurve,
    pub j_value: f64,
    pub first_variation_residual: f64,
    pub method: MinimizerMethod,
    pub multiplicity_hint: usize,
}

/// Finsler length of the boundary-launched trajectory restricted to [0, t]:
/// on shell F(q, q_dot) = <dH/dp, p> / 2.
fn flow_length(model: &HamiltonianModel, traj: &flow::Trajectory, t: f64) -> Result<f64> {
    crate::quad::adaptive(
        |tau: f64| {
            let z = traj.state(tau);
            0.5 * model.dk_dp(&z.p).dot(&z.p)
        },
        0.0,
        t,
        1e-12,
    )
}

/// Build the minimizer curve from collar data (t_y, Q_y): the trajectory
/// trace reversed and resampled at constant G-speed.
fn collar_minimizer(
    model: &HamiltonianModel,
    well: &PotentialWell,
    y: &DVector<f64>,
    t_y: f64,
    q_y: &DVector<f64>,
    multiplicity: usize,
    method: MinimizerMethod,
) -> Result<MinimizerResult> {
    let traj = flow::launch_from_boundary(model, well, q_y, t_y, 1e-12)?;
    let length = flow_length(model, &traj, t_y)?;
    let j = length * length;
    // orientation: from y back to the boundary
    let sub = flow::integrate_h(model, &traj.state(0.0), (0.0, t_y), 1e-12)?;
    let curve = reparam::orbit_to_geodesic(model, &sub, 129)?.reversed();
    let residual = first_variation_residual(model, well, &curve)?;
    let _ = y;
    Ok(MinimizerResult {
        curve,
        j_value: j,
        first_variation_residual: residual,
        method,
        multiplicity_hint: multiplicity,
    })
}

/// Levenberg-Marquardt polish of the shooting problem q(t, Q) = y, tolerant
/// of the rotationally degenerate Jacobian at symmetric interior points.
fn flow_polish(
    model: &HamiltonianModel,
    well: &PotentialWell,
    y: &DVector<f64>,
    q_guess: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let n = model.n;
    let mut q_b = flow::project_to_boundary(model, q_guess)?;
    let a_gv = model.d2k_dp2(&DVector::zeros(n)) * model.grad_v(&q_b);
    let dist = (y - &q_b).norm();
    let mut t = (2.0 * dist / a_gv.norm().max(1e-12)).sqrt().max(1e-3);
    let residual = |t: f64, q_b: &DVector<f64>| -> Result<DVector<f64>> {
        let traj = flow::launch_from_boundary(model, well, q_b, t, 1e-11)?;
        Ok(traj.position(t) - y)
    };
    let mut r = residual(t, &q_b)?;
    let mut lambda = 1e-3;
    for _ in 0..80 {
        if r.norm() <= 1e-10 {
            return Ok((t, q_b));
        }
        let conormal = crate::model::boundary_conormal(model, well, &q_b)?;
        let basis = flow::tangent_basis(&conormal);
        let mut jac = nalgebra::DMatrix::zeros(n, n);
        let ht = 1e-6 * (1.0 + t);
        jac.set_column(0, &((residual(t + ht, &q_b)? - &r) / ht));
        for (k, e) in basis.iter().enumerate() {
            let hu = 1e-6;
            let q_shift = flow::project_to_boundary(model, &(&q_b + e * hu))?;
            jac.set_column(k + 1, &((residual(t, &q_shift)? - &r) / hu));
        }
        // normal equations with Levenberg damping
        let jt = jac.transpose();
        let mut a = &jt * &jac;
        let g = &jt * &r;
        for i in 0..n {
            a[(i, i)] += lambda * a[(i, i)].max(1e-12);
        }
        let step = match a.lu().solve(&g) {
            Some(s) => s,
            None => {
                lambda *= 10.0;
                continue;
            }
        };
        let t_c = (t - step[0]).max(1e-6);
        let mut q_c = q_b.clone();
        for (k, e) in basis.iter().enumerate() {
            q_c += e * (-step[k + 1]);
        }
        match flow::project_to_boundary(model, &q_c).and_then(|qc| Ok((residual(t_c, &qc)?, qc))) {
            Ok((rc, qc)) if rc.norm() < r.norm() => {
                t = t_c;
                q_b = qc;
                r = rc;
                lambda = (lambda * 0.3).max(1e-12);
            }
            _ => {
                lambda *= 10.0;
                if lambda > 1e10 {
                    break;
                }
            }
        }
    }
    if r.norm() <= 1e-8 {
        Ok((t, q_b))
    } else {
        Err(Error::NewtonDivergence(format!(
            "shooting polish stalled at |q - y| = {:.3e}",
            r.norm()
        )))
    }
}

/// One stage of projected Barzilai-Borwein descent for the discrete energy
/// with the last node sliding on {V = E - 1/k}.
fn discrete_stage(
    model: &HamiltonianModel,
    y: &DVector<f64>,
    mut nodes: Vec<DVector<f64>>,
    level: f64,
    iters: usize,
) -> Result<Vec<DVector<f64>>> {
    let m = nodes.len();
    let n = model.n;
    let ds = 1.0 / (m - 1) as f64;
    let project_level = |q: &DVector<f64>| -> DVector<f64> {
        let mut x = q.clone();
        for _ in 0..60 {
            let r = model.potential_value(&x) - level;
            if r.abs() < 1e-13 {
                break;
            }
            let g = model.grad_v(&x);
            let gg = g.norm_squared().max(1e-18);
            x -= g * (r / gg);
        }
        x
    };
    nodes[0] = y.clone();
    let last = project_level(&nodes[m - 1]);
    nodes[m - 1] = last;

    // midpoint-rule energy and its analytic gradient
    let eval = |nodes: &[DVector<f64>]| -> Result<(f64, Vec<DVector<f64>>)> {
        let mut j = 0.0;
        let mut grad = vec![DVector::zeros(n); m];
        for i in 0..m - 1 {
            let mid = (&nodes[i] + &nodes[i + 1]) * 0.5;
            let v = (&nodes[i + 1] - &nodes[i]) / ds;
            let z = legendre::to_momentum(model, &TangentPoint { q: mid.clone(), v: v.clone() })?;
            let u = homogenize::eval_u(model, &z.q, &z.p)?;
            let g_val = v.dot(&z.p) - u;
            j += ds * g_val;
            let (dudq, _) = homogenize::grad_u(model, &mid, &z.p)?;
            let dgdq = -dudq; // envelope: dG/dq = -dU/dq at the maximizer
            let dgdv = &z.p;
            grad[i] += &dgdq * (0.5 * ds) - dgdv;
            grad[i + 1] += &dgdq * (0.5 * ds) + dgdv;
        }
        Ok((j, grad))
    };

    let (mut j_prev, mut g_prev) = eval(&nodes)?;
    let mut step = 1e-3;
    let mut x_prev: Option<(Vec<DVector<f64>>, Vec<DVector<f64>>)> = None;
    for _ in 0..iters {
        let mut cand: Vec<DVector<f64>> = nodes
            .iter()
            .zip(&g_prev)
            .map(|(x, g)| x - g * step)
            .collect();
        cand[0] = y.clone();
        let lastc = project_level(&cand[m - 1]);
        cand[m - 1] = lastc;
        match eval(&cand) {
            Ok((j_new, g_new)) if j_new.is_finite() && j_new < j_prev + 1e-14 => {
                // Barzilai-Borwein step from consecutive iterates
                if let Some((xo, go)) = &x_prev {
                    let mut sy = 0.0;
                    let mut yy = 0.0;
                    for i in 0..m {
                        let dx = &cand[i] - &xo[i];
                        let dg = &g_new[i] - &go[i];
                        sy += dx.dot(&dg);
                        yy += dg.dot(&dg);
                    }
                    if yy > 1e-18 && sy > 0.0 {
                        step = (sy / yy).clamp(1e-6, 0.5);
                    }
                }
                x_prev = Some((nodes.clone(), g_prev.clone()));
                nodes = cand;
                j_prev = j_new;
                g_prev = g_new;
            }
            _ => {
                step *= 0.5;
                if step < 1e-12 {
                    break;
                }
            }
        }
    }
    Ok(nodes)
}

/// Discrete-minimization seed for the boundary point hit by the minimizer
/// from y starting toward `dir`, with continuation through shrunken levels.
fn discrete_seed(
    model: &HamiltonianModel,
    well: &PotentialWell,
    y: &DVector<f64>,
    dir: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = 32;
    let r = crate::model::boundary_radius(model, well, dir)?;
    let target = &well.seed + dir * r;
    let mut nodes: Vec<DVector<f64>> = (0..m)
        .map(|i| {
            let a = i as f64 / (m - 1) as f64;
            y * (1.0 - a) + &target * a
        })
        .collect();
    let mut k = 8.0;
    while 1.0 / k > 1e-4 {
        let level = model.energy - 1.0 / k;
        nodes = discrete_stage(model, y, nodes, level, 60)?;
        k *= 4.0;
    }
    Ok(nodes.last().unwrap().clone())
}

/// Minimizing curve from y to the well boundary: collar chart when valid,
/// multistart discrete minimization plus shooting polish otherwise.
pub fn minimizer_to_boundary(
    model: &HamiltonianModel,
    well: &PotentialWell,
    y: &DVector<f64>,
    _tol: f64,
) -> Result<MinimizerResult> {
    match flow::collar_chart(model, well, y) {
        Ok(c) => {
            if c.t_y == 0.0 {
                // y already on the boundary: zero-length minimizer
                return Ok(MinimizerResult {
                    curve: DiscreteCurve {
                        nodes: vec![y.clone(), y.clone()],
                        parametrization: Parametrization::FinslerArclength,
                        speed: 0.0,
                    },
                    j_value: 0.0,
                    first_variation_residual: 0.0,
                    method: MinimizerMethod::Collar,
                    multiplicity_hint: 1,
                });
            }
            collar_minimizer(model, well, y, c.t_y, &c.q_y, 1, MinimizerMethod::Collar)
        }
        Err(Error::OutsideCollar) => {
            // multistart: nearest-boundary direction plus rotations (n = 2)
            if model.n != 2 {
                return Err(Error::UnsupportedDimension(model.n));
            }
            let base = {
                let d = y - &well.seed;
                if d.norm() > 1e-9 {
                    d.normalize()
                } else {
                    DVector::from_vec(vec![1.0, 0.0])
                }
            };
            let base_angle = base[1].atan2(base[0]);
            let mut hits: Vec<(f64, f64, DVector<f64>)> = Vec::new();
            for k in 0..8 {
                let a = base_angle + 2.0 * std::f64::consts::PI * k as f64 / 8.0;
                let dir = DVector::from_vec(vec![a.cos(), a.sin()]);
                let seed_q = match discrete_seed(model, well, y, &dir) {
                    Ok(q) => q,
                    Err(_) => continue,
                };
                let (t, q_b) = match flow_polish(model, well, y, &seed_q) {
                    Ok(v) => v,
                    Err(_) => continue,
                };
                let traj = flow::launch_from_boundary(model, well, &q_b, t, 1e-12)?;
                let len = flow_length(model, &traj, t)?;
                hits.push((len * len, t, q_b));
            }
            if hits.is_empty() {
                return Err(Error::MinimizationStall { best: f64::NAN });
            }
            let j_best = hits.iter().map(|(j, _, _)| *j).fold(f64::INFINITY, f64::min);
            // distinct boundary endpoints achieving (nearly) the best value
            let mut winners: Vec<&(f64, f64, DVector<f64>)> = hits
                .iter()
                .filter(|(j, _, _)| *j <= j_best * (1.0 + 1e-6) + 1e-12)
                .collect();
            let mut distinct: Vec<DVector<f64>> = Vec::new();
            for (_, _, q) in winners.iter() {
                if distinct.iter().all(|d| (d - q).norm() > 1e-4) {
                    distinct.push(q.clone());
                }
            }
            // deterministic representative: lexicographically smallest endpoint
            winners.sort_by(|a, b| {
                (a.2[0], a.2[1])
                    .partial_cmp(&(b.2[0], b.2[1]))
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let (_, t, q_b) = winners[0];
            collar_minimizer(
                model,
                well,
                y,
                *t,
                q_b,
                distinct.len(),
                MinimizerMethod::DiscreteMinimization,
            )
        }
        Err(e) => Err(e),
    }
}
