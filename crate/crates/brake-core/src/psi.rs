//! The boundary-distance field psi(y) = inf J over curves from y to the
//! well boundary, its collar differential, directional second differences
//! along geodesics, and selection of a level delta-hat whose superlevel set
//! Omega is certifiably concave for the metric.

use crate::error::{Error, Result};
use crate::flow;
use crate::geodesy::{self, MinimizerMethod};
use crate::legendre;
use crate::model::{self, HamiltonianModel, PotentialWell, TangentPoint, WellRegion};
use crate::quad;
use nalgebra::DVector;

/// One evaluation of the field.
#[derive(Clone, Debug)]
pub struct PsiSample {
    pub y: DVector<f64>,
    pub psi: f64,
    /// differential, available only where the collar chart is valid
    pub grad: Option<DVector<f64>>,
    pub method: MinimizerMethod,
}

/// Finsler length of the boundary-launched trajectory on [0, t]; on shell
/// F(q, q_dot) = <dK/dp, p>/2.
fn trajectory_length(model: &HamiltonianModel, traj: &flow::Trajectory, t: f64) -> Result<f64> {
    quad::adaptive(
        |tau: f64| {
            let z = traj.state(tau);
            0.5 * model.dk_dp(&z.p).dot(&z.p)
        },
        0.0,
        t,
        1e-12,
    )
}

/// psi together with the collar data it came from, when the chart is valid.
/// Falls back to the full minimizer search outside the collar.
fn eval_psi_inner(
    model: &HamiltonianModel,
    well: &PotentialWell,
    y: &DVector<f64>,
    want_grad: bool,
) -> Result<PsiSample> {
    match flow::collar_chart(model, well, y) {
        Ok(c) => {
            if c.t_y == 0.0 {
                return Ok(PsiSample {
                    y: y.clone(),
                    psi: 0.0,
                    grad: None,
                    method: MinimizerMethod::Collar,
                });
            }
            let traj = flow::launch_from_boundary(model, well, &c.q_y, c.t_y, 1e-12)?;
            let length = trajectory_length(model, &traj, c.t_y)?;
            let psi = length * length;
            let grad = if want_grad {
                Some(collar_gradient(model, &traj, c.t_y, psi)?)
            } else {
                None
            };
            Ok(PsiSample { y: y.clone(), psi, grad, method: MinimizerMethod::Collar })
        }
        Err(Error::OutsideCollar) => {
            let r = geodesy::minimizer_to_boundary(model, well, y, 1e-9)?;
            Ok(PsiSample { y: y.clone(), psi: r.j_value, grad: None, method: r.method })
        }
        Err(e) => Err(e),
    }
}

/// Differential of psi from collar data: the minimizer leaves y with
/// velocity -sqrt(psi) * phi * q_dot(t_y), and d psi = -dG/dv at that
/// velocity, i.e. minus its momentum.
fn collar_gradient(
    model: &HamiltonianModel,
    traj: &flow::Trajectory,
    t_y: f64,
    psi: f64,
) -> Result<DVector<f64>> {
    let z = traj.state(t_y);
    let qdot = model.dk_dp(&z.p);
    let denom = qdot.dot(&z.p);
    if denom <= 0.0 {
        return Err(Error::DegenerateMomentum { value: denom });
    }
    let phi = 2.0 / denom;
    let v0 = -qdot * (psi.sqrt() * phi);
    let p_star = legendre::to_momentum(model, &TangentPoint::new(z.q.clone(), v0)?)?;
    Ok(-p_star.p)
}

/// psi(y) = J-value of the minimizing curve from y to the boundary.
pub fn eval_psi(model: &HamiltonianModel, well: &PotentialWell, y: &DVector<f64>) -> Result<PsiSample> {
    eval_psi_inner(model, well, y, false)
}

/// Differential of psi at a collar point.
pub fn grad_psi(
    model: &HamiltonianModel,
    well: &PotentialWell,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let s = eval_psi_inner(model, well, y, true)?;
    s.grad.ok_or(Error::OutsideCollar)
}

/// Sampled upper bound on psi: J of any curve is at most
/// diam^2 * sup G / |v|^2, with the metric bounded through the smallest
/// kinetic eigenvalue and the sampled potential minimum.
pub fn psi_upper_bound(model: &HamiltonianModel, well: &PotentialWell) -> Result<f64> {
    let diam = 2.0 * model::well_circumradius(model, well)?;
    let bounds = model::convexity_constants(model, well, 256)?;
    let v_min = model::sampled_v_min(model, well, 512)?;
    Ok(1.1 * diam * diam * (model.energy - v_min) / (2.0 * bounds.nu1))
}

/// Directional second difference of psi along the geodesic through (y, xi).
#[derive(Clone, Copy, Debug)]
pub struct HessianSample {
    pub value: f64,
    /// base parameter step actually used
    pub h: f64,
    /// relative spread between the h and h/2 estimates
    pub consistency: f64,
}

/// Second central difference of psi along the geodesic eta with eta(0) = y,
/// eta'(0) = xi, Richardson-extrapolated over steps {h, h/2}. Requires xi
/// tangent to the level set (d psi [xi] = 0 within 1e-6 relative).
pub fn hessian_along(
    model: &HamiltonianModel,
    well: &PotentialWell,
    y: &DVector<f64>,
    xi: &DVector<f64>,
    h: f64,
) -> Result<HessianSample> {
    if xi.norm() == 0.0 {
        return Err(Error::InvalidInput("tangent direction must be nonzero".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidInput("step must be positive".into()));
    }
    let base = eval_psi_inner(model, well, y, true)?;
    let grad = base.grad.ok_or(Error::OutsideCollar)?;
    let dpsi = grad.dot(xi);
    if dpsi.abs() > 1e-6 * (grad.norm() * xi.norm()).max(1e-12) {
        return Err(Error::InvalidInput(format!(
            "direction is not tangent to the level set (d psi [xi] = {dpsi:.3e})"
        )));
    }
    let f0 = legendre::eval_g(model, &TangentPoint::new(y.clone(), xi.clone())?)?.f;
    if f0 == 0.0 {
        return Err(Error::InvalidInput("tangent direction must be nonzero".into()));
    }
    // second difference at parameter step a: endpoints are the geodesic
    // points at arclength a * F(y, xi) on either side
    let second_diff = |a: f64| -> Result<f64> {
        let mut ends = [0.0; 2];
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let x0 = TangentPoint::new(y.clone(), xi * sign)?;
            let trace = geodesy::geodesic_ivp(model, &x0, a * f0, 1e-11)?;
            if trace.escaped_at.is_some() {
                return Err(Error::EscapedDomain);
            }
            ends[k] = eval_psi(model, well, trace.curve.end())?.psi;
        }
        Ok((ends[0] - 2.0 * base.psi + ends[1]) / (a * a))
    };
    let d_full = second_diff(h)?;
    let d_half = second_diff(0.5 * h)?;
    let value = (4.0 * d_half - d_full) / 3.0;
    let consistency = (d_half - d_full).abs() / value.abs().max(1e-12);
    Ok(HessianSample { value, h, consistency })
}

/// One certified (point, tangent) pair on a level set.
#[derive(Clone, Debug)]
pub struct CertificateEntry {
    pub point: DVector<f64>,
    pub tangent: DVector<f64>,
    pub h_value: f64,
    pub h_used: f64,
    /// relative change of the second difference under step halving
    pub consistency: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct ConcavityCertificate {
    pub level: f64,
    pub margin: f64,
    pub entries: Vec<CertificateEntry>,
    pub pass: bool,
}

/// Check H_psi > margin at every sampled (point, tangent) on {psi = level}.
/// Failure is recorded in the certificate, not raised as an error.
pub fn certify_concavity(
    model: &HamiltonianModel,
    well: &PotentialWell,
    level: f64,
    samples: &[(DVector<f64>, DVector<f64>)],
) -> Result<ConcavityCertificate> {
    certify_inner(model, well, level, samples, false)
}

fn certify_inner(
    model: &HamiltonianModel,
    well: &PotentialWell,
    level: f64,
    samples: &[(DVector<f64>, DVector<f64>)],
    stop_on_failure: bool,
) -> Result<ConcavityCertificate> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let margin = 1e-6 * level;
    // step a fraction of the level's own length scale; shrink on escape
    let mut entries = Vec::with_capacity(samples.len());
    let mut pass = true;
    for (point, tangent) in samples {
        if tangent.norm() == 0.0 {
            return Err(Error::InvalidInput("tangent direction must be nonzero".into()));
        }
        let mut h = 0.2 * level.sqrt();
        let mut done = None;
        for _ in 0..6 {
            match hessian_along(model, well, point, tangent, h) {
                Ok(s) => {
                    done = Some(s);
                    break;
                }
                Err(Error::EscapedDomain) => h *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let s = done.ok_or(Error::EscapedDomain)?;
        let ok = s.value > margin;
        pass &= ok;
        entries.push(CertificateEntry {
            point: point.clone(),
            tangent: tangent.clone(),
            h_value: s.value,
            h_used: s.h,
            consistency: s.consistency,
            pass: ok,
        });
        if !ok && stop_on_failure {
            break;
        }
    }
    Ok(ConcavityCertificate { level, margin, entries, pass })
}

/// The certified region Omega = {psi > delta_hat}.
#[derive(Clone, Debug)]
pub struct OmegaRegion {
    pub delta_hat: f64,
    /// ordered polyline on {psi = delta_hat} (n = 2)
    pub boundary_samples: Vec<DVector<f64>>,
    pub concavity_certificate: ConcavityCertificate,
    /// contour forms a single closed loop
    pub homeomorphism_check: bool,
}

/// psi on a grid point for contouring: 0 outside the well, the collar value
/// inside. Deep points where the chart degenerates sit far above the traced
/// levels and are treated as above-level.
fn psi_for_grid(model: &HamiltonianModel, well: &PotentialWell, q: &DVector<f64>) -> f64 {
    if model::well_classify(model, well, q) != WellRegion::Interior {
        return 0.0;
    }
    match eval_psi_inner(model, well, q, false) {
        Ok(s) => s.psi,
        Err(_) => f64::INFINITY,
    }
}

/// Newton refinement of a contour point along the gradient until
/// |psi - level| <= 1e-8.
pub fn refine_to_level(
    model: &HamiltonianModel,
    well: &PotentialWell,
    q0: &DVector<f64>,
    level: f64,
) -> Result<DVector<f64>> {
    let mut q = q0.clone();
    for _ in 0..40 {
        let s = eval_psi_inner(model, well, &q, true)?;
        let r = s.psi - level;
        if r.abs() <= 1e-8 {
            return Ok(q);
        }
        let g = s.grad.ok_or(Error::OutsideCollar)?;
        let gg = g.norm_squared();
        if gg < 1e-18 {
            return Err(Error::DegenerateConormal);
        }
        q -= g * (r / gg);
    }
    Err(Error::NewtonDivergence("level-set refinement stalled".into()))
}

/// Marching-squares extraction of the closed contour {psi = level} (n = 2).
/// Returns the ordered, Newton-refined polyline and whether it closes into a
/// single loop.
pub fn extract_level_set(
    model: &HamiltonianModel,
    well: &PotentialWell,
    level: f64,
    budget: usize,
) -> Result<(Vec<DVector<f64>>, bool)> {
    if model.n != 2 {
        return Err(Error::UnsupportedDimension(model.n));
    }
    let r = model::well_circumradius(model, well)? * 1.05;
    let c = &well.seed;
    let mut ngrid = 20usize;
    for _attempt in 0..4 {
        let h = 2.0 * r / ngrid as f64;
        let at = |i: usize, j: usize| {
            DVector::from_vec(vec![c[0] - r + i as f64 * h, c[1] - r + j as f64 * h])
        };
        let mut field = vec![vec![0.0_f64; ngrid + 1]; ngrid + 1];
        for i in 0..=ngrid {
            for j in 0..=ngrid {
                field[i][j] = psi_for_grid(model, well, &at(i, j));
            }
        }
        // crossing points on cell edges, linear interpolation
        let mut segs: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
        let cross = |qa: DVector<f64>, qb: DVector<f64>, fa: f64, fb: f64| {
            let t = if fa.is_infinite() || fb.is_infinite() {
                0.5
            } else {
                ((level - fa) / (fb - fa)).clamp(0.0, 1.0)
            };
            &qa * (1.0 - t) + &qb * t
        };
        for i in 0..ngrid {
            for j in 0..ngrid {
                let f = [field[i][j], field[i + 1][j], field[i + 1][j + 1], field[i][j + 1]];
                let q = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
                let mut pts = Vec::new();
                for e in 0..4 {
                    let (a, b) = (e, (e + 1) % 4);
                    if (f[a] > level) != (f[b] > level) {
                        pts.push(cross(q[a].clone(), q[b].clone(), f[a], f[b]));
                    }
                }
                // saddle cells (4 crossings) are split arbitrarily; the
                // refinement step fixes the geometry
                if pts.len() >= 2 {
                    for pair in pts.chunks(2) {
                        if pair.len() == 2 {
                            segs.push((pair[0].clone(), pair[1].clone()));
                        }
                    }
                }
            }
        }
        if segs.is_empty() {
            return Err(Error::EmptyRegion);
        }
        if segs.len() < budget && ngrid < 200 {
            ngrid = ngrid * 3 / 2;
            continue;
        }
        // chain segments into loops by endpoint matching
        let tol = h * 1e-6;
        let mut used = vec![false; segs.len()];
        let mut loop_nodes: Vec<DVector<f64>> = vec![segs[0].0.clone(), segs[0].1.clone()];
        used[0] = true;
        let mut remaining = segs.len() - 1;
        loop {
            let tail = loop_nodes.last().unwrap().clone();
            let mut hit = None;
            for (k, seg) in segs.iter().enumerate() {
                if used[k] {
                    continue;
                }
                if (&seg.0 - &tail).norm() < tol {
                    hit = Some((k, seg.1.clone()));
                    break;
                }
                if (&seg.1 - &tail).norm() < tol {
                    hit = Some((k, seg.0.clone()));
                    break;
                }
            }
            match hit {
                Some((k, next)) => {
                    used[k] = true;
                    remaining -= 1;
                    loop_nodes.push(next);
                }
                None => break,
            }
        }
        let closed = (loop_nodes.last().unwrap() - &loop_nodes[0]).norm() < tol;
        let single_loop = closed && remaining == 0;
        if closed {
            loop_nodes.pop();
        }
        // refine every node onto the level set
        let mut refined = Vec::with_capacity(loop_nodes.len());
        for q in &loop_nodes {
            refined.push(refine_to_level(model, well, q, level)?);
        }
        return Ok((refined, single_loop));
    }
    Err(Error::EmptyRegion)
}

/// Tangent frames on the level-set samples: the kernel of the gradient.
fn tangent_frames(
    model: &HamiltonianModel,
    well: &PotentialWell,
    samples: &[DVector<f64>],
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let mut out = Vec::new();
    for q in samples {
        let g = grad_psi(model, well, q)?;
        let gn = g.norm();
        if gn < 1e-14 {
            return Err(Error::DegenerateConormal);
        }
        for t in flow::tangent_basis(&(g / gn)) {
            out.push((q.clone(), t));
        }
    }
    Ok(out)
}

/// Build and certify the region at one fixed level.
pub fn omega_region_at_level(
    model: &HamiltonianModel,
    well: &PotentialWell,
    level: f64,
    budget: usize,
) -> Result<OmegaRegion> {
    region_at_level_inner(model, well, level, budget, false)
}

fn region_at_level_inner(
    model: &HamiltonianModel,
    well: &PotentialWell,
    level: f64,
    budget: usize,
    stop_on_failure: bool,
) -> Result<OmegaRegion> {
    let (samples, single_loop) = extract_level_set(model, well, level, budget)?;
    // certify on a budget-sized subset; the polyline keeps full resolution
    let stride = (samples.len() / budget.max(1)).max(1);
    let subset: Vec<DVector<f64>> = samples.iter().step_by(stride).cloned().collect();
    let pairs = tangent_frames(model, well, &subset)?;
    let cert = certify_inner(model, well, level, &pairs, stop_on_failure)?;
    Ok(OmegaRegion {
        delta_hat: level,
        boundary_samples: samples,
        concavity_certificate: cert,
        homeomorphism_check: single_loop,
    })
}

/// Descend delta-hat geometrically from a quarter of the field range until
/// the concavity certificate passes.
pub fn select_delta_hat(
    model: &HamiltonianModel,
    well: &PotentialWell,
    budget: usize,
) -> Result<OmegaRegion> {
    if budget < 50 {
        return Err(Error::InvalidInput("certification budget must be at least 50".into()));
    }
    let top = eval_psi(model, well, &well.seed)?.psi;
    if !(top > 0.0) {
        return Err(Error::EmptyRegion);
    }
    let mut level = top / 4.0;
    let mut last_failure = String::new();
    for _ in 0..20 {
        match region_at_level_inner(model, well, level, budget, true) {
            Ok(region) => {
                if region.concavity_certificate.pass && region.homeomorphism_check {
                    return Ok(region);
                }
                let bad = region
                    .concavity_certificate
                    .entries
                    .iter()
                    .find(|e| !e.pass);
                last_failure = match bad {
                    Some(e) => format!(
                        "level {level:.6e}: H_psi = {:.3e} at ({:.4}, {:.4})",
                        e.h_value, e.point[0], e.point[1]
                    ),
                    None => format!("level {level:.6e}: contour is not a single loop"),
                };
            }
            Err(Error::EmptyRegion) => {
                last_failure = format!("level {level:.6e}: empty region");
            }
            Err(e) => return Err(e),
        }
        level *= 0.5;
    }
    Err(Error::CertificationFailure(format!(
        "no passing level within budget; last failure: {last_failure}"
    )))
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

    /// closed-form radial field of s1: psi(r) = l(r)^2 with
    /// l(r) = (pi/2 - r sqrt(1-r^2) - asin r)/4
    fn s1_psi(r: f64) -> f64 {
        let l = 0.25 * (PI / 2.0 - r * (1.0 - r * r).sqrt() - r.asin());
        l * l
    }

    #[test]
    fn field_matches_the_radial_oracle_in_the_collar() {
        let s = scenario::s1();
        let sample = eval_psi(&s.model, &s.well, &v2(0.8, 0.0)).unwrap();
        assert_eq!(sample.method, MinimizerMethod::Collar);
        assert_abs_diff_eq!(sample.psi, s1_psi(0.8), epsilon = 1e-9);
        assert_abs_diff_eq!(sample.psi, 1.671e-3, epsilon = 1e-6);
        // rotational symmetry: same value off-axis
        let rot = eval_psi(&s.model, &s.well, &v2(0.8 / 2.0_f64.sqrt(), 0.8 / 2.0_f64.sqrt()))
            .unwrap();
        assert_abs_diff_eq!(rot.psi, sample.psi, epsilon = 1e-6);
    }

    #[test]
    fn field_decays_to_zero_toward_the_boundary() {
        let s = scenario::s1();
        let cap = psi_upper_bound(&s.model, &s.well).unwrap();
        let mut prev = f64::INFINITY;
        for r in [0.7, 0.85, 0.95, 0.99] {
            let p = eval_psi(&s.model, &s.well, &v2(r, 0.0)).unwrap().psi;
            assert!(p < prev, "psi not decreasing along the ray at r = {r}");
            assert!(p <= cap, "psi = {p} exceeds the sampled bound {cap}");
            prev = p;
        }
        assert!(prev < 2e-6);
    }

    #[test]
    fn gradient_matches_the_oracle_and_finite_differences() {
        let s = scenario::s1();
        let g = grad_psi(&s.model, &s.well, &v2(0.8, 0.0)).unwrap();
        assert_abs_diff_eq!(g[0], -0.024525, epsilon = 1e-6);
        assert!(g[1].abs() < 1e-9, "axial symmetry violated: {}", g[1]);
        // central differences of the field itself
        let h = 1e-4;
        for k in 0..2 {
            let mut yp = v2(0.8, 0.0);
            let mut ym = v2(0.8, 0.0);
            yp[k] += h;
            ym[k] -= h;
            let fd = (eval_psi(&s.model, &s.well, &yp).unwrap().psi
                - eval_psi(&s.model, &s.well, &ym).unwrap().psi)
                / (2.0 * h);
            assert!(
                (fd - g[k]).abs() <= 1e-4 * g.norm(),
                "component {k}: fd {fd} vs grad {}",
                g[k]
            );
        }
    }

    #[test]
    fn finite_difference_hessian_is_symmetric() {
        let s = scenario::s1();
        let y = v2(0.55, 0.35);
        let h = 1e-4;
        let mut hess = [[0.0_f64; 2]; 2];
        for k in 0..2 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += h;
            ym[k] -= h;
            let gp = grad_psi(&s.model, &s.well, &yp).unwrap();
            let gm = grad_psi(&s.model, &s.well, &ym).unwrap();
            for j in 0..2 {
                hess[j][k] = (gp[j] - gm[j]) / (2.0 * h);
            }
        }
        let scale = hess.iter().flatten().fold(0.0_f64, |a, &b| a.max(b.abs()));
        assert!(
            (hess[0][1] - hess[1][0]).abs() <= 1e-4 * scale,
            "asymmetric mixed partials: {} vs {}",
            hess[0][1],
            hess[1][0]
        );
    }

    #[test]
    fn center_value_comes_from_the_degenerate_path() {
        let s = scenario::s1();
        let sample = eval_psi(&s.model, &s.well, &v2(0.0, 0.0)).unwrap();
        assert_eq!(sample.method, MinimizerMethod::DiscreteMinimization);
        assert_abs_diff_eq!(sample.psi, (PI / 8.0) * (PI / 8.0), epsilon = 1e-5);
        assert!(sample.grad.is_none());
    }

    #[test]
    fn tangential_second_difference_is_positive_and_homogeneous() {
        let s = scenario::s1();
        let y = v2(0.8, 0.0);
        let xi = v2(0.0, 1.0);
        let a = hessian_along(&s.model, &s.well, &y, &xi, 0.1).unwrap();
        assert!(a.value > 0.0, "expected positive curvature, got {}", a.value);
        assert!(a.consistency < 0.05, "step halving inconsistent: {}", a.consistency);
        // quadratic homogeneity in the direction
        let b = hessian_along(&s.model, &s.well, &y, &v2(0.0, 2.0), 0.05).unwrap();
        assert_abs_diff_eq!(b.value / a.value, 4.0, epsilon = 0.08);
        // a non-tangent direction is rejected
        assert!(hessian_along(&s.model, &s.well, &y, &v2(1.0, 0.0), 0.1).is_err());
        // degenerate inputs
        assert!(hessian_along(&s.model, &s.well, &y, &v2(0.0, 0.0), 0.1).is_err());
        assert!(certify_concavity(&s.model, &s.well, 0.01, &[]).is_err());
        assert!(certify_concavity(
            &s.model,
            &s.well,
            0.01,
            &[(y.clone(), v2(0.0, 0.0))]
        )
        .is_err());
    }

    #[test]
    fn fixed_level_region_is_certified_on_s1() {
        let s = scenario::s1();
        let level = 0.004;
        let region = omega_region_at_level(&s.model, &s.well, level, 12).unwrap();
        assert!(region.homeomorphism_check, "contour did not close into one loop");
        assert!(region.concavity_certificate.pass);
        assert!(region.boundary_samples.len() >= 12);
        // radial symmetry: the contour is the circle psi(r) = level
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if s1_psi(mid) > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r_star = 0.5 * (lo + hi);
        for q in &region.boundary_samples {
            assert!((q.norm() - r_star).abs() < 1e-6, "contour point off the circle: {q}");
            assert!((s1_psi(q.norm()) - level).abs() <= 2e-8);
        }
    }

    /// For the round well the curvature threshold is exact: the orbit tangent
    /// to the circle r = r* at a radial extremum bulges outward when
    /// r* < 1/sqrt(2), so levels above psi(1/sqrt(2)) = ((pi-2)/16)^2 must be
    /// rejected by the certificate.
    #[test]
    fn levels_beyond_the_curvature_threshold_fail_on_s1() {
        let s = scenario::s1();
        let threshold = ((std::f64::consts::PI - 2.0) / 16.0).powi(2);
        assert!(0.01 > threshold && 0.004 < threshold);
        let region = omega_region_at_level(&s.model, &s.well, 0.01, 12).unwrap();
        assert!(!region.concavity_certificate.pass);
        assert!(region
            .concavity_certificate
            .entries
            .iter()
            .any(|e| e.h_value < 0.0));
    }

    #[test]
    fn too_high_level_yields_an_empty_region() {
        let s = scenario::s1();
        assert!(matches!(
            omega_region_at_level(&s.model, &s.well, 1.0, 12),
            Err(Error::EmptyRegion)
        ));
    }

    /// Negative control for the second-difference machinery: tangential
    /// second differences of the EUCLIDEAN boundary distance are negative
    /// (straight tangent lines leave a round region), so a region certified
    /// with straight lines in place of metric geodesics must fail.
    #[test]
    fn euclidean_distance_control_fails_certification() {
        let c1 = v2(-0.6, 0.0);
        let c2 = v2(0.6, 0.0);
        let radius = 1.0;
        let dist = |q: &DVector<f64>| -> f64 {
            let d1 = radius - (q - &c1).norm();
            let d2 = radius - (q - &c2).norm();
            d1.max(d2)
        };
        // level point on the left lobe, tangent along the level circle
        let level = 0.2;
        let y = &c1 + v2(0.0, radius - level);
        let xi = v2(1.0, 0.0);
        let h = 0.05;
        let second = (dist(&(&y + &xi * h)) - 2.0 * dist(&y) + dist(&(&y - &xi * h))) / (h * h);
        // exact tangential curvature of the distance field: -1/(R - level)
        assert!(second < -1.0, "violation not detected: {second}");
        assert_abs_diff_eq!(second, -1.0 / (radius - level), epsilon = 1e-2);
    }
}
