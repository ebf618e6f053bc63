//! The velocity <-> momentum dictionary for the homogenized Hamiltonian,
//! and the Finsler metric G obtained as its fiberwise Legendre transform.

use crate::error::{Error, Result};
use crate::homogenize;
use crate::model::{Family, HamiltonianModel, PhasePoint, TangentPoint};
use nalgebra::{DMatrix, DVector};

/// Metric data at a single (q, v).
#[derive(Clone, Debug)]
pub struct MetricEval {
    pub g: f64,
    pub f: f64,
    pub dgdv: DVector<f64>,
}

/// (q, p) -> (q, dU/dp). p = 0 maps to v = 0 by continuity.
pub fn to_velocity(model: &HamiltonianModel, z: &PhasePoint) -> Result<TangentPoint> {
    if z.p.norm() == 0.0 {
        return TangentPoint::new(z.q.clone(), DVector::zeros(model.n));
    }
    let (_, dudp) = homogenize::grad_u(model, &z.q, &z.p)?;
    TangentPoint::new(z.q.clone(), dudp)
}

/// Central-difference Hessian of U in p, from the analytic gradient.
fn d2u_dp2(model: &HamiltonianModel, q: &DVector<f64>, p: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = model.n;
    let mut j = DMatrix::zeros(n, n);
    let scale = p.norm();
    for k in 0..n {
        let h = 1e-6 * (scale + p[k].abs()).max(1e-6);
        let mut pp = p.clone();
        let mut pm = p.clone();
        pp[k] += h;
        pm[k] -= h;
        let (_, gp) = homogenize::grad_u(model, q, &pp)?;
        let (_, gm) = homogenize::grad_u(model, q, &pm)?;
        j.set_column(k, &((gp - gm) / (2.0 * h)));
    }
    // symmetrize the finite-difference result
    let jt = j.transpose();
    Ok((j + jt) * 0.5)
}

/// Inverse Legendre map: solve dU/dp(q, p) = v for p by damped Newton.
///
/// The starting guess p0 = s (d2H/dp2(q,0))^{-1} v, with s the least-squares
/// scale making dU/dp(q, p0) closest to v, is exact for the natural family.
pub fn to_momentum(model: &HamiltonianModel, x: &TangentPoint) -> Result<PhasePoint> {
    let vnorm = x.v.norm();
    if vnorm == 0.0 {
        return PhasePoint::new(x.q.clone(), DVector::zeros(model.n));
    }
    let mass = model
        .d2k_dp2(&DVector::zeros(model.n))
        .try_inverse()
        .ok_or(Error::SampledNonConvex { min_eig: 0.0 })?;
    let p_dir = &mass * &x.v;
    let (_, w) = homogenize::grad_u(model, &x.q, &p_dir)?;
    let ww = w.norm_squared();
    if ww == 0.0 {
        return Err(Error::DegenerateMomentum { value: 0.0 });
    }
    let mut p = &p_dir * (w.dot(&x.v) / ww);

    let tol = 1e-12 * vnorm.max(1.0);
    let mut r = residual(model, &x.q, &p, &x.v)?;
    for _ in 0..60 {
        let rnorm = r.norm();
        if rnorm <= tol {
            return PhasePoint::new(x.q.clone(), p);
        }
        let jac = d2u_dp2(model, &x.q, &p)?;
        let step = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::NewtonDivergence("singular velocity Jacobian".into()))?;
        // damped update: halve until the residual actually decreases
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &p - &step * lambda;
            if let Ok(rc) = residual(model, &x.q, &cand, &x.v) {
                if rc.norm() < rnorm {
                    p = cand;
                    r = rc;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDivergence(format!(
                "momentum solve stalled at residual {rnorm:.3e}"
            )));
        }
    }
    if r.norm() <= 1e-9 * vnorm.max(1.0) {
        PhasePoint::new(x.q.clone(), p)
    } else {
        Err(Error::NewtonDivergence(format!(
            "momentum solve did not reach tolerance (residual {:.3e})",
            r.norm()
        )))
    }
}

fn residual(
    model: &HamiltonianModel,
    q: &DVector<f64>,
    p: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (_, dudp) = homogenize::grad_u(model, q, p)?;
    Ok(dudp - v)
}

/// G(q, v) = max_p (<v, p> - U(q, p)) and its velocity gradient dG/dv = p*.
pub fn eval_g(model: &HamiltonianModel, x: &TangentPoint) -> Result<MetricEval> {
    if x.v.norm() == 0.0 {
        return Ok(MetricEval { g: 0.0, f: 0.0, dgdv: DVector::zeros(model.n) });
    }
    let z = to_momentum(model, x)?;
    let u = homogenize::eval_u(model, &z.q, &z.p)?;
    let g = x.v.dot(&z.p) - u;
    Ok(MetricEval { g, f: g.max(0.0).sqrt(), dgdv: z.p })
}

/// Closed-form G for the natural family: G = (E - V) v^T M v / 2 with M the
/// mass matrix (inverse of the kinetic coefficient matrix a^{ij}).
pub fn riemannian_oracle_g(model: &HamiltonianModel, x: &TangentPoint) -> Result<f64> {
    let mass_inv = match &model.family {
        Family::Natural { mass_inv } => mass_inv,
        Family::P4Perturbed { .. } => return Err(Error::WrongFamily),
    };
    let mass = mass_inv
        .clone()
        .try_inverse()
        .ok_or(Error::SampledNonConvex { min_eig: 0.0 })?;
    let gap = model.energy - model.potential_value(&x.q);
    Ok(0.5 * gap * (x.v.transpose() * mass * &x.v)[(0, 0)])
}

/// F-unit velocity at Q whose momentum lies on the Euclidean conormal line,
/// i.e. the direction Finsler-orthogonal to the hypersurface with the given
/// conormal. The sign is chosen so that <v, inward> > 0.
pub fn normal_velocity(
    model: &HamiltonianModel,
    q: &DVector<f64>,
    conormal: &DVector<f64>,
    inward: &DVector<f64>,
) -> Result<TangentPoint> {
    let cn = conormal.norm();
    if cn < 1e-14 {
        return Err(Error::DegenerateConormal);
    }
    let u = homogenize::eval_u(model, q, conormal)?;
    let p_star = conormal / u.sqrt(); // U(q, p*) = 1 by homogeneity
    let (_, v) = homogenize::grad_u(model, q, &p_star)?;
    if v.dot(inward) > 0.0 {
        TangentPoint::new(q.clone(), v)
    } else {
        TangentPoint::new(q.clone(), -v)
    }
}
