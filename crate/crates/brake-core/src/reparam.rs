//! Conversion between Finsler-geodesic parametrization and physical time.
//!
//! A constant-G-speed curve gamma on [0,1] with speed c corresponds to a
//! physical solution through t(s) = sqrt(c) int_0^s phi(gamma, gamma'/sqrt(c)),
//! where phi = |U'|/|H'| evaluated at the momentum lift. At a boundary
//! endpoint phi blows up like an inverse power and the quadrature uses a
//! square-root substitution in the chordal parameter, where the trace is
//! smooth.

use crate::error::{Error, Result};
use crate::flow::{self, Trajectory};
use crate::geodesy::{DiscreteCurve, Parametrization};
use crate::homogenize;
use crate::legendre;
use crate::model::{HamiltonianModel, PhasePoint, TangentPoint, WellRegion};
use crate::quad;
use crate::spline::{CubicSpline, CurveSpline};
use nalgebra::DVector;

/// Monotone map between normalized curve parameter and physical time.
#[derive(Clone, Debug)]
pub struct ReparamMap {
    pub s_grid: Vec<f64>,
    pub t_values: Vec<f64>,
    pub c_gamma: f64,
}

/// phi = |U'| / |H'| at the momentum lift of (q, v); by the on-shell
/// collinearity U' = mu H' this is 2 / <dH/dp, p> at the shell momentum.
pub fn eval_phi(model: &HamiltonianModel, x: &TangentPoint) -> Result<f64> {
    let z = legendre::to_momentum(model, x)?;
    let u = homogenize::eval_u(model, &z.q, &z.p)?;
    if (u - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "phi requires an F-unit velocity (got U = {u:.6e} at the lift)"
        )));
    }
    phi_at_shell_momentum(model, &z)
}

fn phi_at_shell_momentum(model: &HamiltonianModel, z: &PhasePoint) -> Result<f64> {
    let denom = model.dk_dp(&z.p).dot(&z.p);
    if denom <= 0.0 {
        return Err(Error::DegenerateMomentum { value: denom });
    }
    Ok(2.0 / denom)
}

/// phi computed as the literal norm ratio |U'| / |H'|; used as an
/// independent cross-check of `eval_phi`.
pub fn eval_phi_norm_ratio(model: &HamiltonianModel, x: &TangentPoint) -> Result<f64> {
    let z = legendre::to_momentum(model, x)?;
    let (dudq, dudp) = homogenize::grad_u(model, &z.q, &z.p)?;
    let uprime = (dudq.norm_squared() + dudp.norm_squared()).sqrt();
    let hprime = model.h_prime(&z).norm();
    if hprime == 0.0 {
        return Err(Error::DegenerateMomentum { value: 0.0 });
    }
    Ok(uprime / hprime)
}

/// Combined local data along a curve: Finsler speed, shell momentum and phi,
/// from a single momentum solve at an arbitrary (q, w) with w != 0.
fn chord_local(
    model: &HamiltonianModel,
    q: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<(f64, PhasePoint, f64)> {
    let x = TangentPoint::new(q.clone(), w.clone())?;
    let z = legendre::to_momentum(model, &x)?;
    let u = homogenize::eval_u(model, &z.q, &z.p)?;
    let g = w.dot(&z.p) - u;
    let f = g.max(0.0).sqrt();
    let p_shell = &z.p / u.sqrt();
    let zs = PhasePoint::new(q.clone(), p_shell)?;
    let phi = phi_at_shell_momentum(model, &zs)?;
    Ok((f, zs, phi))
}

/// dt/dtau = phi * F at parameter velocity w, computed without the Legendre
/// solve where a closed form exists. For a kinetic energy p^T A p / 2 the
/// product collapses to sqrt(w^T A^-1 w / (2 (E - V))) exactly; the quartic
/// family degenerates to the same expression as V -> E (the momentum
/// vanishes there), so the closed form takes over near the boundary where
/// the generic momentum solve loses all its accuracy.
fn time_speed(
    model: &HamiltonianModel,
    mass: &nalgebra::DMatrix<f64>,
    q: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    let gap = model.energy - model.potential_value(q);
    if gap <= 0.0 {
        return Err(Error::EscapedDomain);
    }
    let closed_form = matches!(model.family, crate::model::Family::Natural { .. })
        || gap <= 1e-5 * (1.0 + model.energy.abs());
    if closed_form {
        let quad_form = (w.transpose() * mass * w)[(0, 0)];
        Ok((quad_form / (2.0 * gap)).sqrt())
    } else {
        let (f, _, phi) = chord_local(model, q, w)?;
        Ok(phi * f)
    }
}

/// Convert a constant-G-speed geodesic into a physical-time trajectory and
/// the monotone reparametrization map.
///
/// The times come from quadrature of phi against the Finsler arclength in
/// the chordal (cumulative Euclidean) parameter, where the trace stays
/// smooth through boundary endpoints; the trajectory itself is produced by
/// integrating Hamilton's equations from the physical state at an interior
/// node, which keeps the pointwise Hamilton residual at integrator accuracy.
pub fn geodesic_to_orbit(
    model: &HamiltonianModel,
    gamma: &DiscreteCurve,
    tol: f64,
) -> Result<(Trajectory, ReparamMap)> {
    if gamma.parametrization != Parametrization::FinslerArclength || gamma.speed <= 0.0 {
        return Err(Error::InvalidInput(
            "conversion requires a constant-G-speed curve with positive speed".into(),
        ));
    }
    let m = gamma.nodes.len();
    if m < 2 {
        return Err(Error::ZeroLength);
    }
    // chordal parameter of the node polyline
    let mut tau = vec![0.0; m];
    for i in 1..m {
        let d = (&gamma.nodes[i] - &gamma.nodes[i - 1]).norm();
        if d == 0.0 {
            return Err(Error::InvalidInput("consecutive curve nodes coincide".into()));
        }
        tau[i] = tau[i - 1] + d;
    }
    let curve = CurveSpline::new(&tau, &gamma.nodes)?;
    let boundary_tol = 1e-7 * (1.0 + model.energy.abs());
    let sing_start =
        (model.energy - model.potential_value(&gamma.nodes[0])).abs() <= boundary_tol;
    let sing_end =
        (model.energy - model.potential_value(&gamma.nodes[m - 1])).abs() <= boundary_tol;

    // dt/dtau = phi(q, w_hat) * F(q, dq/dtau)
    let mass = model
        .d2k_dp2(&DVector::zeros(model.n))
        .try_inverse()
        .ok_or(Error::SampledNonConvex { min_eig: 0.0 })?;
    let integrand = |t: f64| -> f64 {
        let q = curve.eval(t);
        let w = curve.deriv(t);
        match time_speed(model, &mass, &q, &w) {
            Ok(v) => v,
            Err(_) => f64::NAN,
        }
    };
    // cumulative times at the curve nodes
    let mut t_values = vec![0.0; m];
    for i in 1..m {
        let piece = quad::adaptive_sqrt_endpoints(
            integrand,
            tau[i - 1],
            tau[i],
            sing_start && i == 1,
            sing_end && i == m - 1,
            (tol * 1e-3).max(1e-12),
        )?;
        if !piece.is_finite() || piece <= 0.0 {
            return Err(Error::NonConvergentQuadrature(format!(
                "non-monotone time increment {piece:.3e} on curve segment {i}"
            )));
        }
        t_values[i] = t_values[i - 1] + piece;
    }
    let t_total = t_values[m - 1];

    // physical state at the interior node nearest the middle
    let mid = m / 2;
    let q_mid = gamma.nodes[mid].clone();
    let w_mid = curve.deriv(tau[mid]);
    let (_, z_mid, _) = chord_local(model, &q_mid, &w_mid)?;
    // on-shell momentum lift of the F-unit tangent is the physical momentum
    let t_mid = t_values[mid];

    // integrate backward to the start, then forward across the full span
    let z_rev = PhasePoint::new(z_mid.q.clone(), -&z_mid.p)?;
    let back = flow::integrate_h(model, &z_rev, (0.0, t_mid), (tol * 1e-3).max(1e-12))?;
    let z_back = back.state(t_mid);
    let z_start = PhasePoint::new(z_back.q, -z_back.p)?;
    let traj = flow::integrate_h(model, &z_start, (0.0, t_total), (tol * 1e-3).max(1e-12))?;

    let s_grid: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    Ok((traj, ReparamMap { s_grid, t_values, c_gamma: gamma.speed }))
}

/// Convert a physical trajectory with H = E into a constant-G-speed curve on
/// [0,1]. On shell F(q, q_dot) = 1/phi = <dH/dp, p>/2, so the arclength is a
/// plain time quadrature.
pub fn orbit_to_geodesic(
    model: &HamiltonianModel,
    traj: &Trajectory,
    nnodes: usize,
) -> Result<DiscreteCurve> {
    if traj.conserved != flow::Conserved::Energy {
        return Err(Error::InvalidInput("curve extraction requires an H-flow trajectory".into()));
    }
    let nnodes = nnodes.max(2);
    let (t0, t1) = (traj.t_start(), traj.t_end());
    if t1 <= t0 {
        return Err(Error::ZeroLength);
    }
    let speed = |t: f64| -> f64 {
        let z = traj.state(t);
        0.5 * model.dk_dp(&z.p).dot(&z.p)
    };
    // cumulative arclength on a fine grid (composite Simpson), then spline
    let fine = 4096;
    let h = (t1 - t0) / fine as f64;
    let mut ts = Vec::with_capacity(fine + 1);
    let mut ell = Vec::with_capacity(fine + 1);
    ts.push(t0);
    ell.push(0.0);
    let mut acc = 0.0;
    let mut f_prev = speed(t0);
    for i in 0..fine {
        let ta = t0 + i as f64 * h;
        let fm = speed(ta + 0.5 * h);
        let fb = speed(ta + h);
        acc += h / 6.0 * (f_prev + 4.0 * fm + fb);
        f_prev = fb;
        ts.push(ta + h);
        ell.push(acc);
    }
    let total = acc;
    if total < 1e-12 {
        return Err(Error::ZeroLength);
    }
    let ell_spline = CubicSpline::new(ts.clone(), ell.clone())?;
    // invert ell(t) at uniform arclength targets
    let mut nodes = Vec::with_capacity(nnodes);
    for i in 0..nnodes {
        let target = total * i as f64 / (nnodes - 1) as f64;
        let mut lo = t0;
        let mut hi = t1;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if ell_spline.eval(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        nodes.push(traj.position(0.5 * (lo + hi)));
    }
    Ok(DiscreteCurve {
        nodes,
        parametrization: Parametrization::FinslerArclength,
        speed: total * total,
    })
}

/// Pointwise Hamilton residual |(q_dot, p_dot) - J H'| of a trajectory at
/// the given times, with time derivatives taken from dense output.
pub fn hamilton_residual(model: &HamiltonianModel, traj: &Trajectory, times: &[f64]) -> Result<f64> {
    let n = model.n;
    let mut worst: f64 = 0.0;
    let span = traj.t_end() - traj.t_start();
    let h = (1e-5 * span.max(1.0)).max(1e-7);
    for &t in times {
        if t - h < traj.t_start() || t + h > traj.t_end() {
            continue;
        }
        let yp = traj.eval(t + h);
        let ym = traj.eval(t - h);
        let deriv = (yp - ym) / (2.0 * h);
        let z = traj.state(t);
        let der = model.eval_derivatives(&z)?;
        let mut res: f64 = 0.0;
        for k in 0..n {
            res = res.max((deriv[k] - der.dhdp[k]).abs());
            res = res.max((deriv[n + k] + der.dhdq[k]).abs());
        }
        worst = worst.max(res);
    }
    Ok(worst)
}

/// Classify which ends of a curve touch the well boundary.
pub fn endpoint_contacts(
    model: &HamiltonianModel,
    well: &crate::model::PotentialWell,
    gamma: &DiscreteCurve,
) -> (bool, bool) {
    let m = gamma.nodes.len();
    let at = |q: &DVector<f64>| {
        crate::model::well_classify(model, well, q) == WellRegion::Boundary
    };
    (at(&gamma.nodes[0]), at(&gamma.nodes[m - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn phi_closed_form_on_s1() {
        let s = scenario::s1();
        // F-unit velocity at q = (0.6, 0): F(q, (0,1)) = sqrt((1-0.36)/4) = 0.4
        let x = TangentPoint::new(v2(0.6, 0.0), v2(0.0, 2.5)).unwrap();
        assert_abs_diff_eq!(eval_phi(&s.model, &x).unwrap(), 3.125, epsilon = 1e-10);
        // at the center F(0, (1,0)) = 1/2, so (2, 0) is F-unit
        let x0 = TangentPoint::new(v2(0.0, 0.0), v2(2.0, 0.0)).unwrap();
        assert_abs_diff_eq!(eval_phi(&s.model, &x0).unwrap(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn phi_identity_matches_norm_ratio() {
        let s = scenario::s3();
        let mut rng = crate::model::deterministic_rng(23);
        for _ in 0..100 {
            let q = crate::model::sample_interior(&s.model, &s.well, &mut rng).unwrap();
            let dir = crate::model::random_unit(2, &mut rng);
            let g = legendre::eval_g(
                &s.model,
                &TangentPoint::new(q.clone(), dir.clone()).unwrap(),
            )
            .unwrap();
            let x = TangentPoint::new(q, dir / g.f).unwrap();
            let a = eval_phi(&s.model, &x).unwrap();
            let b = eval_phi_norm_ratio(&s.model, &x).unwrap();
            assert!((a - b).abs() <= 1e-8 * a, "phi disagreement {a} vs {b}");
        }
    }

    #[test]
    fn diameter_orbit_has_finsler_length_quarter_pi() {
        let s = scenario::s1();
        let traj = flow::launch_from_boundary(&s.model, &s.well, &v2(1.0, 0.0), PI, 1e-12).unwrap();
        let curve = orbit_to_geodesic(&s.model, &traj, 257).unwrap();
        assert_abs_diff_eq!(curve.speed.sqrt(), PI / 4.0, epsilon = 1e-8);
        // endpoints are the two boundary touch points
        assert!((curve.nodes[0][0] - 1.0).abs() < 1e-8);
        assert!((curve.nodes.last().unwrap()[0] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn diameter_geodesic_converts_to_half_period_orbit() {
        let s = scenario::s1();
        let traj = flow::launch_from_boundary(&s.model, &s.well, &v2(1.0, 0.0), PI, 1e-12).unwrap();
        let curve = orbit_to_geodesic(&s.model, &traj, 257).unwrap();
        let (orbit, map) = geodesic_to_orbit(&s.model, &curve, 1e-6).unwrap();
        let t_total = *map.t_values.last().unwrap();
        assert_abs_diff_eq!(t_total, PI, epsilon = 1e-4);
        // map is strictly increasing
        for w in map.t_values.windows(2) {
            assert!(w[1] > w[0]);
        }
        // pointwise Hamilton residual at interior probe times
        let times: Vec<f64> = (1..40).map(|i| t_total * i as f64 / 40.0).collect();
        let res = hamilton_residual(&s.model, &orbit, &times).unwrap();
        assert!(res <= 1e-6, "hamilton residual {res}");
        // the produced orbit is the cosine flow
        for i in 0..=20 {
            let t = orbit.t_end() * i as f64 / 20.0;
            assert_abs_diff_eq!(orbit.position(t)[0], t.cos(), epsilon = 2e-4);
        }
    }

    #[test]
    fn interior_arc_round_trip() {
        let s = scenario::s1();
        // interior energy-E arc starting at (0.5, 0) moving tangentially
        let p1 = (2.0_f64 * (0.5 - 0.125)).sqrt();
        let z0 = PhasePoint::new(v2(0.5, 0.0), v2(0.0, p1)).unwrap();
        let traj = flow::integrate_h(&s.model, &z0, (0.0, 1.2), 1e-12).unwrap();
        let curve = orbit_to_geodesic(&s.model, &traj, 129).unwrap();
        let (orbit2, map) = geodesic_to_orbit(&s.model, &curve, 1e-8).unwrap();
        assert_abs_diff_eq!(*map.t_values.last().unwrap(), 1.2, epsilon = 1e-6);
        // traces agree pointwise in time
        for i in 0..=24 {
            let t = 1.2 * i as f64 / 24.0;
            assert!((orbit2.position(t) - traj.position(t)).norm() < 1e-6);
        }
    }

    #[test]
    fn degenerate_curves_are_rejected() {
        let s = scenario::s1();
        let c = DiscreteCurve {
            nodes: vec![v2(0.1, 0.0), v2(0.2, 0.0)],
            parametrization: Parametrization::FinslerArclength,
            speed: 0.0,
        };
        assert!(geodesic_to_orbit(&s.model, &c, 1e-8).is_err());
        let single = DiscreteCurve {
            nodes: vec![v2(0.1, 0.0)],
            parametrization: Parametrization::FinslerArclength,
            speed: 1.0,
        };
        assert!(matches!(geodesic_to_orbit(&s.model, &single, 1e-8), Err(Error::ZeroLength)));
        // stationary trajectory has zero length
        let z = PhasePoint::new(v2(0.0, 0.0), v2(0.0, 0.0)).unwrap();
        let traj = flow::integrate_h(&s.model, &z, (0.0, 1.0), 1e-10).unwrap();
        assert!(matches!(orbit_to_geodesic(&s.model, &traj, 64), Err(Error::ZeroLength)));
    }

    #[test]
    fn s2_axis_orbit_length_matches_quadrature_oracle() {
        let s = scenario::s2();
        let traj = flow::launch_from_boundary(&s.model, &s.well, &v2(1.0, 0.0), PI, 1e-12).unwrap();
        let curve = orbit_to_geodesic(&s.model, &traj, 257).unwrap();
        // oracle: length = int_{-1}^{1} sqrt(G(q, e1)) dq1 with
        // G = (E - V) q1'^2 / 2 on the q1 axis (mass entry a11 = 1)
        let oracle = crate::quad::adaptive_sqrt_endpoints(
            |x: f64| (0.5 * (0.5 - 0.5 * x * x)).sqrt(),
            -1.0,
            1.0,
            true,
            true,
            1e-12,
        )
        .unwrap();
        assert_abs_diff_eq!(curve.speed.sqrt(), oracle, epsilon = 1e-8);
    }
}
