//! Browser bindings for the interactive demo page. Each export returns a
//! JSON string so the page needs no generated glue types.

use brake_core::flow;
use brake_core::legendre;
use brake_core::model::{self, TangentPoint};
use brake_core::psi;
use brake_core::scenario::{self, Scenario};
use nalgebra::DVector;
use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

fn pick(name: &str) -> Result<Scenario, String> {
    scenario::by_name(name).map_err(|e| e.to_string())
}

fn respond<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(msg) => error_json(&msg),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[derive(Serialize)]
struct Indicatrix {
    q: Vec<f64>,
    /// F-unit velocities around the fiber, one per angle
    vectors: Vec<[f64; 2]>,
    /// shell momenta lifting each velocity
    momenta: Vec<[f64; 2]>,
}

/// Unit ball of the metric at a configuration point.
#[wasm_bindgen]
pub fn indicatrix(name: &str, qx: f64, qy: f64, count: usize) -> String {
    respond((|| {
        let s = pick(name)?;
        let q = DVector::from_vec(vec![qx, qy]);
        if s.model.potential_value(&q) >= s.model.energy {
            return Err("point is outside the well".to_string());
        }
        let count = count.clamp(8, 720);
        let mut vectors = Vec::with_capacity(count);
        let mut momenta = Vec::with_capacity(count);
        for k in 0..count {
            let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            let theta = DVector::from_vec(vec![a.cos(), a.sin()]);
            let e = legendre::eval_g(&s.model, &TangentPoint::new(q.clone(), theta.clone()).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let v = &theta / e.f;
            let z = legendre::to_momentum(&s.model, &TangentPoint::new(q.clone(), v.clone()).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            vectors.push([v[0], v[1]]);
            momenta.push([z.p[0], z.p[1]]);
        }
        Ok(Indicatrix { q: vec![qx, qy], vectors, momenta })
    })())
}

#[derive(Serialize)]
struct WellShape {
    boundary: Vec<[f64; 2]>,
}

/// Polyline of the well boundary, for drawing.
#[wasm_bindgen]
pub fn well_boundary(name: &str, count: usize) -> String {
    respond((|| {
        let s = pick(name)?;
        let count = count.clamp(16, 2000);
        let mut boundary = Vec::with_capacity(count);
        for k in 0..count {
            let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            let dir = DVector::from_vec(vec![a.cos(), a.sin()]);
            let r = model::boundary_radius(&s.model, &s.well, &dir).map_err(|e| e.to_string())?;
            boundary.push([s.well.seed[0] + r * a.cos(), s.well.seed[1] + r * a.sin()]);
        }
        Ok(WellShape { boundary })
    })())
}

#[derive(Serialize)]
struct OrbitTrace {
    launch: Vec<f64>,
    t_end: f64,
    energy_drift: f64,
    points: Vec<[f64; 2]>,
    momenta: Vec<[f64; 2]>,
}

/// Energy-E trajectory released at rest from the boundary point at the given
/// polar angle, traced for `t_max` time units.
#[wasm_bindgen]
pub fn boundary_release(name: &str, angle: f64, t_max: f64, count: usize) -> String {
    respond((|| {
        let s = pick(name)?;
        if !(t_max > 0.0 && t_max <= 50.0) {
            return Err("t_max must lie in (0, 50]".to_string());
        }
        let dir = DVector::from_vec(vec![angle.cos(), angle.sin()]);
        let r = model::boundary_radius(&s.model, &s.well, &dir).map_err(|e| e.to_string())?;
        let q0 = flow::project_to_boundary(&s.model, &(&s.well.seed + dir * r)).map_err(|e| e.to_string())?;
        let traj = flow::launch_from_boundary(&s.model, &s.well, &q0, t_max, 1e-10).map_err(|e| e.to_string())?;
        let count = count.clamp(16, 4000);
        let t_end = traj.t_end();
        let mut points = Vec::with_capacity(count);
        let mut momenta = Vec::with_capacity(count);
        for k in 0..count {
            let t = t_end * k as f64 / (count - 1) as f64;
            let z = traj.state(t);
            points.push([z.q[0], z.q[1]]);
            momenta.push([z.p[0], z.p[1]]);
        }
        Ok(OrbitTrace {
            launch: q0.iter().cloned().collect(),
            t_end,
            energy_drift: traj.drift,
            points,
            momenta,
        })
    })())
}

#[derive(Serialize)]
struct PsiProfile {
    /// radii as fractions of the boundary distance along the ray
    fractions: Vec<f64>,
    values: Vec<f64>,
    gradient_norms: Vec<f64>,
}

/// Distance-field profile along the ray from the seed toward the boundary
/// point at the given polar angle.
#[wasm_bindgen]
pub fn psi_profile(name: &str, angle: f64, count: usize) -> String {
    respond((|| {
        let s = pick(name)?;
        let dir = DVector::from_vec(vec![angle.cos(), angle.sin()]);
        let r = model::boundary_radius(&s.model, &s.well, &dir).map_err(|e| e.to_string())?;
        let count = count.clamp(4, 200);
        let mut fractions = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count);
        let mut gradient_norms = Vec::with_capacity(count);
        for k in 0..count {
            let f = 0.2 + 0.7995 * k as f64 / (count - 1) as f64;
            let y = &s.well.seed + &dir * (f * r);
            let sample = psi::eval_psi(&s.model, &s.well, &y).map_err(|e| e.to_string())?;
            let gn = psi::grad_psi(&s.model, &s.well, &y).map(|g| g.norm()).unwrap_or(f64::NAN);
            fractions.push(f);
            values.push(sample.psi);
            gradient_norms.push(gn);
        }
        Ok(PsiProfile { fractions, values, gradient_norms })
    })())
}
