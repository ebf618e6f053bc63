//! Orthogonal geodesic chords of the certified region Omega and their
//! extension to verified brake orbits of the original system.

use crate::error::{Error, Result};
use crate::flow;
use crate::geodesy::{self, DiscreteCurve, Parametrization};
use crate::legendre;
use crate::model::{HamiltonianModel, PhasePoint, PotentialWell};
use crate::psi::{self, OmegaRegion};
use crate::reparam;
use crate::spline::CurveSpline;
use nalgebra::DVector;

/// A geodesic meeting the region boundary orthogonally at both ends.
#[derive(Clone, Debug)]
pub struct GeodesicChord {
    pub curve: DiscreteCurve,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    /// tangential momentum defect at each endpoint
    pub orthogonality_residuals: [f64; 2],
    pub length: f64,
}

#[derive(Clone, Debug)]
pub struct OrbitCertificate {
    pub energy_residual: f64,
    pub hamilton_residual: f64,
    pub endpoint_momentum_norms: [f64; 2],
    pub endpoint_boundary_defects: [f64; 2],
    pub interior: bool,
    pub pass: bool,
}

/// Half-period solution arc with zero momentum at both ends.
#[derive(Clone, Debug)]
pub struct BrakeOrbit {
    pub time_grid: Vec<f64>,
    pub states: Vec<PhasePoint>,
    pub period_half: f64,
    pub certificate: OrbitCertificate,
}

/// Even-odd inside test against the region contour polyline.
fn inside_polygon(poly: &[DVector<f64>], q: &DVector<f64>) -> bool {
    let m = poly.len();
    let mut inside = false;
    for i in 0..m {
        let (p1, p2) = (&poly[i], &poly[(i + 1) % m]);
        if (p1[1] > q[1]) != (p2[1] > q[1]) {
            let x = p1[0] + (q[1] - p1[1]) / (p2[1] - p1[1]) * (p2[0] - p1[0]);
            if q[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Total polyline length of the closed contour.
fn polygon_perimeter(poly: &[DVector<f64>]) -> f64 {
    let m = poly.len();
    (0..m).map(|i| (&poly[(i + 1) % m] - &poly[i]).norm()).sum()
}

/// Point at arclength sigma (mod perimeter) along the closed contour,
/// refined onto the exact level set.
fn boundary_point(
    model: &HamiltonianModel,
    well: &PotentialWell,
    omega: &OmegaRegion,
    sigma: f64,
) -> Result<DVector<f64>> {
    let poly = &omega.boundary_samples;
    let m = poly.len();
    let per = polygon_perimeter(poly);
    let mut s = sigma.rem_euclid(per);
    for i in 0..m {
        let (p1, p2) = (&poly[i], &poly[(i + 1) % m]);
        let d = (p2 - p1).norm();
        if s <= d {
            let t = if d > 0.0 { s / d } else { 0.0 };
            let q = p1 * (1.0 - t) + p2 * t;
            return psi::refine_to_level(model, well, &q, omega.delta_hat);
        }
        s -= d;
    }
    psi::refine_to_level(model, well, &poly[0].clone(), omega.delta_hat)
}

/// Shoot the inward orthogonal geodesic from a boundary point of Omega and
/// locate the opposite boundary crossing. Returns the hit point, the
/// tangential momentum defect there, and the traced chord curve.
pub fn shoot_orthogonal(
    model: &HamiltonianModel,
    well: &PotentialWell,
    omega: &OmegaRegion,
    a: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, DiscreteCurve)> {
    let sample = psi::eval_psi(model, well, a)?;
    if (sample.psi - omega.delta_hat).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "start is off the level set: psi - delta = {:.3e}",
            sample.psi - omega.delta_hat
        )));
    }
    let g = psi::grad_psi(model, well, a)?;
    let x0 = legendre::normal_velocity(model, a, &g.normalize(), &g)?;
    let z0 = legendre::to_momentum(model, &x0)?;
    // generous arclength budget: several region diameters; stop well before
    // the singular well boundary, at half the smallest gap on the contour
    let budget = 6.0 * psi::psi_upper_bound(model, well)?.sqrt();
    let gap_min = omega
        .boundary_samples
        .iter()
        .map(|q| model.energy - model.potential_value(q))
        .fold(f64::INFINITY, f64::min);
    let floor = (0.5 * gap_min).max(1e-9 * (1.0 + model.energy.abs()));
    // tight tolerance: dense-output jitter is amplified by the stencils of
    // the first-variation check on the resampled nodes
    let traj = flow::integrate_u_with_floor(model, &z0, (0.0, budget), 1e-13, floor)?;
    let reached = traj.t_end();

    // coarse scan against the contour polyline, then bisect the re-exit
    let poly = &omega.boundary_samples;
    let nscan = 800;
    let mut was_inside = false;
    let mut bracket = None;
    for k in 1..=nscan {
        let s = reached * k as f64 / nscan as f64;
        let inside = inside_polygon(poly, &traj.position(s));
        if inside {
            was_inside = true;
        } else if was_inside {
            bracket = Some((reached * (k - 1) as f64 / nscan as f64, s));
            break;
        }
    }
    let (mut lo, mut hi) = bracket.ok_or(Error::NoExit)?;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside_polygon(poly, &traj.position(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // refine the exit arclength on the true field: psi(gamma(s)) = delta
    let mut s_exit = 0.5 * (lo + hi);
    for _ in 0..30 {
        let z = traj.state(s_exit);
        let ps = psi::eval_psi(model, well, &z.q)?;
        let r = ps.psi - omega.delta_hat;
        if r.abs() <= 1e-9 {
            break;
        }
        let gq = psi::grad_psi(model, well, &z.q)?;
        let v = legendre::to_velocity(model, &z)?;
        let slope = gq.dot(&v.v);
        if slope.abs() < 1e-14 {
            return Err(Error::NoExit);
        }
        s_exit -= r / slope;
        if !(s_exit > 0.0 && s_exit < reached) {
            return Err(Error::NoExit);
        }
    }
    let zb = traj.state(s_exit);
    let b = psi::refine_to_level(model, well, &zb.q, omega.delta_hat)?;

    // orthogonality defect: tangential components of the exit momentum
    let gb = psi::grad_psi(model, well, &b)?;
    let frame = flow::tangent_basis(&gb.normalize());
    let residual = DVector::from_iterator(frame.len(), frame.iter().map(|t| zb.p.dot(t)));

    // resampled chord trace at constant speed; dense enough that the
    // fourth-order first-variation check resolves below 1e-6
    let nnodes = 385;
    let nodes: Vec<DVector<f64>> = (0..nnodes)
        .map(|i| traj.position(s_exit * i as f64 / (nnodes - 1) as f64))
        .collect();
    let mut nodes = nodes;
    *nodes.first_mut().unwrap() = a.clone();
    *nodes.last_mut().unwrap() = b.clone();
    let curve = DiscreteCurve {
        nodes,
        parametrization: Parametrization::FinslerArclength,
        speed: s_exit * s_exit,
    };
    Ok((b, residual, curve))
}

/// Multistart damped Newton on the boundary coordinate of the launch point,
/// driving the orthogonality defect at the far endpoint to zero.
pub fn find_chords(
    model: &HamiltonianModel,
    well: &PotentialWell,
    omega: &OmegaRegion,
    nstarts: usize,
    tol: f64,
) -> Result<Vec<GeodesicChord>> {
    if nstarts < 8 {
        return Err(Error::InvalidInput("chord search needs at least 8 starts".into()));
    }
    if model.n != 2 {
        return Err(Error::UnsupportedDimension(model.n));
    }
    let per = polygon_perimeter(&omega.boundary_samples);
    let fd_step = 1e-4 * per;
    let mut found: Vec<GeodesicChord> = Vec::new();

    for start in 0..nstarts {
        let mut sigma = per * start as f64 / nstarts as f64;
        let shot = |sig: f64| -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, DiscreteCurve)> {
            let a = boundary_point(model, well, omega, sig)?;
            let (b, r, c) = shoot_orthogonal(model, well, omega, &a)?;
            Ok((a, b, r, c))
        };
        let mut state = match shot(sigma) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let mut converged = state.2.norm() <= tol;
        for _ in 0..40 {
            if converged {
                break;
            }
            let r0 = state.2[0];
            let rp = match shot(sigma + fd_step) {
                Ok(s) => s.2[0],
                Err(_) => break,
            };
            let slope = (rp - r0) / fd_step;
            if slope.abs() < 1e-14 {
                break;
            }
            let mut step = -r0 / slope;
            // damping: halve until the residual actually decreases
            let mut accepted = false;
            for _ in 0..12 {
                match shot(sigma + step) {
                    Ok(s) if s.2.norm() < state.2.norm() => {
                        sigma += step;
                        state = s;
                        accepted = true;
                        break;
                    }
                    _ => step *= 0.5,
                }
            }
            if !accepted {
                break;
            }
            converged = state.2.norm() <= tol;
        }
        if !converged {
            continue;
        }
        let (a, b, r, curve) = state;
        // defect at the launch end: the start momentum is normal by
        // construction; report its tangential part for completeness
        let ga = psi::grad_psi(model, well, &a)?;
        let x0 = legendre::normal_velocity(model, &a, &ga.normalize(), &ga)?;
        let p0 = legendre::to_momentum(model, &x0)?.p;
        let frame = flow::tangent_basis(&ga.normalize());
        let res_a = frame.iter().map(|t| p0.dot(t).abs()).fold(0.0_f64, f64::max);
        let chord = GeodesicChord {
            length: curve.speed.sqrt(),
            curve,
            a,
            b,
            orthogonality_residuals: [res_a, r.norm()],
        };
        // unoriented deduplication by endpoint pairs
        let dup = found.iter().any(|c| {
            let fwd = (&c.a - &chord.a).norm().max((&c.b - &chord.b).norm());
            let rev = (&c.a - &chord.b).norm().max((&c.b - &chord.a).norm());
            fwd.min(rev) <= 1e-4
        });
        if !dup {
            found.push(chord);
        }
    }
    found.sort_by(|x, y| {
        x.length
            .partial_cmp(&y.length)
            .unwrap()
            .then(x.a[0].partial_cmp(&y.a[0]).unwrap())
            .then(x.a[1].partial_cmp(&y.a[1]).unwrap())
    });
    Ok(found)
}

/// Resample a sequence of constant-speed pieces into one constant-speed
/// curve over [0,1].
fn glue_curves(pieces: &[&DiscreteCurve], nnodes: usize) -> Result<DiscreteCurve> {
    let lengths: Vec<f64> = pieces.iter().map(|p| p.speed.sqrt()).collect();
    let total: f64 = lengths.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroLength);
    }
    let mut splines = Vec::with_capacity(pieces.len());
    for (p, &l) in pieces.iter().zip(&lengths) {
        let m = p.nodes.len();
        let s: Vec<f64> = (0..m).map(|i| l * i as f64 / (m - 1) as f64).collect();
        splines.push(CurveSpline::new(&s, &p.nodes)?);
    }
    let mut nodes = Vec::with_capacity(nnodes);
    for k in 0..nnodes {
        let mut s = total * k as f64 / (nnodes - 1) as f64;
        let mut idx = 0;
        while idx + 1 < pieces.len() && s > lengths[idx] {
            s -= lengths[idx];
            idx += 1;
        }
        nodes.push(splines[idx].eval(s.min(lengths[idx])));
    }
    Ok(DiscreteCurve { nodes, parametrization: Parametrization::FinslerArclength, speed: total * total })
}

/// Locate the momentum turning time of the flow from `z0` in the given
/// direction: the first zero of p . grad V along the trajectory.
fn turning_time(
    model: &HamiltonianModel,
    z0: &PhasePoint,
    span: f64,
    backward: bool,
) -> Result<(f64, flow::Trajectory)> {
    let start = if backward {
        PhasePoint::new(z0.q.clone(), -&z0.p)?
    } else {
        z0.clone()
    };
    let traj = flow::integrate_h(model, &start, (0.0, span), 1e-12)?;
    let g = |t: f64| -> f64 {
        let z = traj.state(t);
        z.p.dot(&model.grad_v(&z.q))
    };
    let nscan = 2000;
    // p . grad V also vanishes when the orbit crosses a critical point of V
    // with full speed; only a crossing with nearly exhausted kinetic energy
    // is a brake point
    let k_cap = 0.2 * model.kinetic(&start.p).max(1e-12);
    let mut prev = g(0.0);
    for k in 1..=nscan {
        let t = traj.t_end() * k as f64 / nscan as f64;
        let cur = g(t);
        if prev != 0.0 && cur.signum() != prev.signum() {
            let (mut lo, mut hi) = (traj.t_end() * (k - 1) as f64 / nscan as f64, t);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if g(mid).signum() == prev.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t_star = 0.5 * (lo + hi);
            if model.kinetic(&traj.state(t_star).p) <= k_cap {
                return Ok((t_star, traj));
            }
        }
        prev = cur;
    }
    Err(Error::NoRoot)
}

/// Extend a chord of Omega to a brake orbit of H: glue the boundary
/// minimizers at both ends, convert to physical time, and anchor the final
/// arc at the exact momentum turning points.
pub fn extend_to_brake_orbit(
    model: &HamiltonianModel,
    well: &PotentialWell,
    chord: &GeodesicChord,
) -> Result<BrakeOrbit> {
    let min_a = geodesy::minimizer_to_boundary(model, well, &chord.a, 1e-9)?;
    let min_b = geodesy::minimizer_to_boundary(model, well, &chord.b, 1e-9)?;
    for (m, q, v_in) in [
        (&min_a, &chord.a, chord_end_velocity(model, chord, true)?),
        (&min_b, &chord.b, chord_end_velocity(model, chord, false)?),
    ] {
        if m.method != geodesy::MinimizerMethod::Collar {
            return Err(Error::OutsideCollar);
        }
        // the minimizer must leave the endpoint exactly opposite the chord
        let c = flow::collar_chart(model, well, q)?;
        let traj = flow::launch_from_boundary(model, well, &c.q_y, c.t_y, 1e-12)?;
        let qdot = model.dk_dp(&traj.state(c.t_y).p);
        let cosang = (qdot.dot(&v_in) / (qdot.norm() * v_in.norm())).clamp(-1.0, 1.0);
        let angle = cosang.acos();
        if angle > 1e-6 {
            return Err(Error::ParallelismFailure { angle });
        }
    }
    let rev_a = min_a.curve.reversed();
    let glued = glue_curves(&[&rev_a, &chord.curve, &min_b.curve], 385)?;
    let (traj, map) = reparam::geodesic_to_orbit(model, &glued, 1e-6)?;
    let t_total = *map.t_values.last().unwrap();

    // anchor at the true turning points around the estimated span
    let z_mid = traj.state(0.5 * t_total);
    let (t_minus, _) = turning_time(model, &z_mid, 0.75 * t_total, true)?;
    let (t_plus, _) = turning_time(model, &z_mid, 0.75 * t_total, false)?;
    let period_half = t_minus + t_plus;
    // final integration from the backward turning point, momentum flipped
    let back = flow::integrate_h(
        model,
        &PhasePoint::new(z_mid.q.clone(), -&z_mid.p)?,
        (0.0, t_minus),
        1e-12,
    )?;
    let z_turn = back.state(t_minus);
    let z_start = PhasePoint::new(z_turn.q, -z_turn.p)?;
    let full = flow::integrate_h(model, &z_start, (0.0, period_half), 1e-12)?;

    let m = 513;
    let time_grid: Vec<f64> = (0..m).map(|i| period_half * i as f64 / (m - 1) as f64).collect();
    let states: Vec<PhasePoint> = time_grid.iter().map(|&t| full.state(t)).collect();
    let mut orbit = BrakeOrbit {
        time_grid,
        states,
        period_half,
        certificate: OrbitCertificate {
            energy_residual: 0.0,
            hamilton_residual: 0.0,
            endpoint_momentum_norms: [0.0; 2],
            endpoint_boundary_defects: [0.0; 2],
            interior: true,
            pass: false,
        },
    };
    orbit.certificate = verify_brake_orbit(model, well, &orbit)?;
    Ok(orbit)
}

/// F-unit chord velocity at an endpoint, oriented into the region.
fn chord_end_velocity(
    model: &HamiltonianModel,
    chord: &GeodesicChord,
    at_a: bool,
) -> Result<DVector<f64>> {
    let nodes = &chord.curve.nodes;
    let d = if at_a {
        &nodes[1] - &nodes[0]
    } else {
        &nodes[nodes.len() - 2] - nodes.last().unwrap()
    };
    let q = if at_a { &chord.a } else { &chord.b };
    let f = legendre::eval_g(model, &crate::model::TangentPoint::new(q.clone(), d.clone())?)?.f;
    if f == 0.0 {
        return Err(Error::ZeroLength);
    }
    Ok(d / f)
}

/// Independent recomputation of every certificate entry.
pub fn verify_brake_orbit(
    model: &HamiltonianModel,
    well: &PotentialWell,
    orbit: &BrakeOrbit,
) -> Result<OrbitCertificate> {
    let m = orbit.states.len();
    if m < 5 || orbit.time_grid.len() != m {
        return Err(Error::InvalidInput("orbit needs a consistent state grid".into()));
    }
    let mut energy_residual: f64 = 0.0;
    for z in &orbit.states {
        energy_residual = energy_residual.max((model.eval_hamiltonian(z)? - model.energy).abs());
    }
    // Hamilton residual by five-point differences on the uniform grid
    let h = orbit.time_grid[1] - orbit.time_grid[0];
    let mut hamilton_residual: f64 = 0.0;
    let n = model.n;
    for i in 2..m - 2 {
        let der = model.eval_derivatives(&orbit.states[i])?;
        for k in 0..n {
            let stencil = |f: &dyn Fn(&PhasePoint) -> f64| {
                (-f(&orbit.states[i + 2]) + 8.0 * f(&orbit.states[i + 1])
                    - 8.0 * f(&orbit.states[i - 1])
                    + f(&orbit.states[i - 2]))
                    / (12.0 * h)
            };
            let qd = stencil(&|z: &PhasePoint| z.q[k]);
            let pd = stencil(&|z: &PhasePoint| z.p[k]);
            hamilton_residual = hamilton_residual.max((qd - der.dhdp[k]).abs());
            hamilton_residual = hamilton_residual.max((pd + der.dhdq[k]).abs());
        }
    }
    let endpoint_momentum_norms = [orbit.states[0].p.norm(), orbit.states[m - 1].p.norm()];
    let defect = |z: &PhasePoint| (model.energy - model.potential_value(&z.q)).abs();
    let endpoint_boundary_defects = [defect(&orbit.states[0]), defect(&orbit.states[m - 1])];
    let mut interior = true;
    for z in &orbit.states[1..m - 1] {
        if model.potential_value(&z.q) >= model.energy {
            interior = false;
        }
    }
    let _ = well;
    let pass = energy_residual <= 1e-8
        && hamilton_residual <= 1e-4
        && endpoint_momentum_norms.iter().all(|&x| x <= 1e-6)
        && endpoint_boundary_defects.iter().all(|&x| x <= 1e-8)
        && interior;
    Ok(OrbitCertificate {
        energy_residual,
        hamilton_residual,
        endpoint_momentum_norms,
        endpoint_boundary_defects,
        interior,
        pass,
    })
}

/// Full pipeline: certify Omega, find chords, extend each to a brake orbit.
/// If a chord endpoint falls outside the boundary collar, the level is
/// halved and the pipeline re-run once.
pub fn solve(
    model: &HamiltonianModel,
    well: &PotentialWell,
    budget: usize,
    nstarts: usize,
    tol: f64,
) -> Result<(OmegaRegion, Vec<GeodesicChord>, Vec<BrakeOrbit>)> {
    let mut omega = psi::select_delta_hat(model, well, budget)?;
    for retry in 0..2 {
        let chords = find_chords(model, well, &omega, nstarts, tol)?;
        let mut orbits = Vec::with_capacity(chords.len());
        let mut collar_miss = false;
        for c in &chords {
            match extend_to_brake_orbit(model, well, c) {
                Ok(o) => orbits.push(o),
                Err(Error::OutsideCollar) if retry == 0 => {
                    collar_miss = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !collar_miss {
            return Ok((omega, chords, orbits));
        }
        omega = psi::omega_region_at_level(model, well, 0.5 * omega.delta_hat, budget)?;
    }
    Err(Error::CertificationFailure(
        "chord endpoints remained outside the boundary collar".into(),
    ))
}
