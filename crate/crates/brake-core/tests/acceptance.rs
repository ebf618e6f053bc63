//! End-to-end acceptance gate for the pipeline. Each test checks one numbered
//! criterion at its stated tolerance and prints a single pass line; a failure
//! panics with the measured value.

use std::sync::OnceLock;

use brake_core::chords::{self, BrakeOrbit, GeodesicChord};
use brake_core::flow;
use brake_core::geodesy::{DiscreteCurve, Parametrization};
use brake_core::homogenize;
use brake_core::legendre;
use brake_core::model::{self, TangentPoint};
use brake_core::psi::{self, OmegaRegion};
use brake_core::reparam;
use brake_core::scenario::{self, Scenario};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PI: f64 = std::f64::consts::PI;

fn v2(a: f64, b: f64) -> DVector<f64> {
    DVector::from_vec(vec![a, b])
}

/// Region selection is the most expensive step; share it across criteria.
fn region(s: &Scenario) -> &'static OmegaRegion {
    static CELLS: OnceLock<[OnceLock<OmegaRegion>; 3]> = OnceLock::new();
    let cells = CELLS.get_or_init(|| [OnceLock::new(), OnceLock::new(), OnceLock::new()]);
    let idx = match s.name {
        "s1" => 0,
        "s2" => 1,
        _ => 2,
    };
    cells[idx].get_or_init(|| psi::select_delta_hat(&s.model, &s.well, 50).unwrap())
}

fn s1_chords() -> &'static Vec<GeodesicChord> {
    static CELL: OnceLock<Vec<GeodesicChord>> = OnceLock::new();
    CELL.get_or_init(|| {
        let s = scenario::s1();
        chords::find_chords(&s.model, &s.well, region(&s), 16, 1e-8).unwrap()
    })
}

fn s2_chords() -> &'static Vec<GeodesicChord> {
    static CELL: OnceLock<Vec<GeodesicChord>> = OnceLock::new();
    CELL.get_or_init(|| {
        let s = scenario::s2();
        chords::find_chords(&s.model, &s.well, region(&s), 16, 1e-8).unwrap()
    })
}

fn s1_orbit() -> &'static BrakeOrbit {
    static CELL: OnceLock<BrakeOrbit> = OnceLock::new();
    CELL.get_or_init(|| {
        let s = scenario::s1();
        chords::extend_to_brake_orbit(&s.model, &s.well, &s1_chords()[0]).unwrap()
    })
}

/// Uniform-arclength points on the region contour, refined onto the level.
fn contour_points(s: &Scenario, omega: &OmegaRegion, count: usize) -> Vec<DVector<f64>> {
    let poly = &omega.boundary_samples;
    let m = poly.len();
    let seg: Vec<f64> = (0..m).map(|i| (&poly[(i + 1) % m] - &poly[i]).norm()).collect();
    let per: f64 = seg.iter().sum();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut target = per * k as f64 / count as f64;
        let mut i = 0;
        while i < m - 1 && target > seg[i] {
            target -= seg[i];
            i += 1;
        }
        let t = if seg[i] > 0.0 { target / seg[i] } else { 0.0 };
        let q = &poly[i] * (1.0 - t) + &poly[(i + 1) % m] * t;
        out.push(psi::refine_to_level(&s.model, &s.well, &q, omega.delta_hat).unwrap());
    }
    out
}

/// Constant-speed diameter of the round well as a discrete geodesic.
fn s1_diameter_curve(nnodes: usize) -> DiscreteCurve {
    // arclength primitive along the axis: L(x) = (x sqrt(1-x^2) + asin x) / 4
    let prim = |x: f64| 0.25 * (x * (1.0 - x * x).sqrt() + x.asin());
    let edge = 1.0 - 1e-12;
    let total = prim(edge) - prim(-edge);
    let nodes: Vec<DVector<f64>> = (0..nnodes)
        .map(|i| {
            let target = prim(-edge) + total * i as f64 / (nnodes - 1) as f64;
            let (mut lo, mut hi) = (-edge, edge);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if prim(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            v2(0.5 * (lo + hi), 0.0)
        })
        .collect();
    DiscreteCurve {
        nodes,
        parametrization: Parametrization::FinslerArclength,
        speed: total * total,
    }
}

#[test]
fn c01_riemannian_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for s in [scenario::s1(), scenario::s2()] {
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let q = model::sample_interior(&s.model, &s.well, &mut rng).unwrap();
            let v = model::random_unit(2, &mut rng) * rng.gen_range(0.1..3.0);
            let x = TangentPoint::new(q, v).unwrap();
            let g = legendre::eval_g(&s.model, &x).unwrap().g;
            let oracle = legendre::riemannian_oracle_g(&s.model, &x).unwrap();
            worst = worst.max((g - oracle).abs() / oracle.abs().max(1e-300));
        }
        assert!(worst <= 1e-6, "{}: relative error {worst:.3e}", s.name);
    }
    println!("criterion 01 riemannian oracle equivalence: pass");
}

#[test]
fn c02_homogenization_exactness() {
    let s = scenario::s1();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..200 {
        let q = model::sample_interior(&s.model, &s.well, &mut rng).unwrap();
        let theta = model::random_unit(2, &mut rng);
        let w = homogenize::omega(&s.model, &q, &theta).unwrap();
        let exact = (1.0 - q.norm_squared()).sqrt();
        assert!((w - exact).abs() <= 1e-10, "omega defect {:.3e}", (w - exact).abs());
    }
    let s3 = scenario::s3();
    let w = homogenize::omega(&s3.model, &DVector::zeros(2), &v2(1.0, 0.0)).unwrap();
    assert!((w - 0.9241764).abs() <= 1e-7, "quartic root {w:.8}");
    println!("criterion 02 homogenization exactness: pass");
}

#[test]
fn c03_legendre_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for s in [scenario::s1(), scenario::s2(), scenario::s3()] {
        for _ in 0..200 {
            let q = model::sample_interior(&s.model, &s.well, &mut rng).unwrap();
            let v = model::random_unit(2, &mut rng) * rng.gen_range(0.1..3.0);
            let x = TangentPoint::new(q.clone(), v).unwrap();
            let z = legendre::to_momentum(&s.model, &x).unwrap();
            let back = legendre::to_velocity(&s.model, &z).unwrap();
            assert!(
                (&back.v - &x.v).norm() <= 1e-9 * x.v.norm().max(1.0),
                "{}: round trip {:.3e}",
                s.name,
                (&back.v - &x.v).norm()
            );
            let all = homogenize::eval_all(&s.model, &q, &z.p).unwrap();
            let euler = (all.dudp.dot(&z.p) - 2.0 * all.u).abs();
            assert!(euler <= 1e-10 * (1.0 + all.u), "{}: euler {euler:.3e}", s.name);
            let g = legendre::eval_g(
                &s.model,
                &TangentPoint::new(q.clone(), all.dudp.clone()).unwrap(),
            )
            .unwrap()
            .g;
            assert!((g - all.u).abs() <= 1e-8 * (1.0 + all.u), "{}: G(U_p) {:.3e}", s.name, (g - all.u).abs());
        }
    }
    println!("criterion 03 legendre structure: pass");
}

#[test]
fn c04_reparametrization_fidelity() {
    let s = scenario::s1();
    let gamma = s1_diameter_curve(257);
    let (traj, map) = reparam::geodesic_to_orbit(&s.model, &gamma, 1e-6).unwrap();
    let t_total = *map.t_values.last().unwrap();
    assert!((t_total - PI).abs() <= 1e-4, "period {t_total:.8}");
    let times: Vec<f64> = (0..200).map(|k| t_total * (k as f64 + 0.5) / 200.0).collect();
    let res = reparam::hamilton_residual(&s.model, &traj, &times).unwrap();
    assert!(res <= 1e-6, "hamilton residual {res:.3e}");
    println!("criterion 04 reparametrization fidelity: pass");
}

#[test]
fn c05_distance_field_oracle() {
    let s = scenario::s1();
    let center = psi::eval_psi(&s.model, &s.well, &DVector::zeros(2)).unwrap().psi;
    let expected = (PI / 8.0) * (PI / 8.0);
    assert!((center - expected).abs() <= 1e-5, "center {center:.8} vs {expected:.8}");
    let collar = psi::eval_psi(&s.model, &s.well, &v2(0.8, 0.0)).unwrap().psi;
    // radial oracle: quarter of (pi/2 - r sqrt(1-r^2) - asin r), squared
    let r: f64 = 0.8;
    let oracle = (0.25 * (PI / 2.0 - r * (1.0 - r * r).sqrt() - r.asin())).powi(2);
    assert!((collar - oracle).abs() <= 1e-6, "collar {collar:.8} vs {oracle:.8}");
    assert!((oracle - 1.671e-3).abs() < 5e-7);
    println!("criterion 05 distance field oracle: pass");
}

#[test]
fn c06_distance_field_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for s in [scenario::s1(), scenario::s2(), scenario::s3()] {
        for _ in 0..50 {
            let dir = model::random_unit(2, &mut rng);
            let r = model::boundary_radius(&s.model, &s.well, &dir).unwrap();
            let y = &s.well.seed + dir * (r * rng.gen_range(0.82..0.93));
            let grad = psi::grad_psi(&s.model, &s.well, &y).unwrap();
            let h = 1e-5;
            let mut fd = DVector::zeros(2);
            for k in 0..2 {
                let mut e = DVector::zeros(2);
                e[k] = h;
                let plus = psi::eval_psi(&s.model, &s.well, &(&y + &e)).unwrap().psi;
                let minus = psi::eval_psi(&s.model, &s.well, &(&y - &e)).unwrap().psi;
                fd[k] = (plus - minus) / (2.0 * h);
            }
            let rel = (&grad - &fd).norm() / fd.norm().max(1e-12);
            assert!(rel <= 1e-4, "{}: gradient mismatch {rel:.3e} at {y}", s.name);
        }
    }
    println!("criterion 06 distance field gradient: pass");
}

#[test]
fn c07_concavity_certification() {
    for s in [scenario::s1(), scenario::s2(), scenario::s3()] {
        let omega = region(&s);
        assert!(omega.delta_hat > 0.0);
        assert!(omega.concavity_certificate.pass);
        assert!(omega.homeomorphism_check);
        // an independent 100-sample certificate at the selected level
        let points = contour_points(&s, omega, 100);
        let pairs: Vec<(DVector<f64>, DVector<f64>)> = points
            .iter()
            .map(|q| {
                let g = psi::grad_psi(&s.model, &s.well, q).unwrap();
                let frame = flow::tangent_basis(&g.normalize());
                (q.clone(), frame[0].clone())
            })
            .collect();
        let cert = psi::certify_concavity(&s.model, &s.well, omega.delta_hat, &pairs).unwrap();
        assert!(cert.pass, "{}: certificate failed at level {:.4e}", s.name, omega.delta_hat);
        for e in &cert.entries {
            assert!(e.h_value > 0.0);
            assert!(
                e.consistency <= 0.05,
                "{}: step-halving consistency {:.3e} at {}",
                s.name,
                e.consistency,
                e.point
            );
        }
    }
    println!("criterion 07 concavity certification: pass");
}

#[test]
fn c08_chord_correctness() {
    let s1 = scenario::s1();
    let cs1 = s1_chords();
    assert!(!cs1.is_empty());
    for c in cs1 {
        assert!(c.orthogonality_residuals.iter().all(|&r| r <= 1e-8));
        let res = brake_core::geodesy::first_variation_residual(&s1.model, &s1.well, &c.curve).unwrap();
        assert!(res <= 1e-6, "first variation {res:.3e}");
        let mid = &c.curve.nodes[c.curve.nodes.len() / 2];
        assert!(mid.norm() <= 1e-4, "chord misses the origin: {mid}");
    }
    let s2 = scenario::s2();
    let cs2 = s2_chords();
    assert_eq!(cs2.len(), 2, "expected exactly 2 chords, got {}", cs2.len());
    for c in cs2 {
        assert!(c.orthogonality_residuals.iter().all(|&r| r <= 1e-8));
        let res = brake_core::geodesy::first_variation_residual(&s2.model, &s2.well, &c.curve).unwrap();
        assert!(res <= 1e-6, "first variation {res:.3e}");
    }
    println!("criterion 08 chord correctness: pass");
}

#[test]
fn c09_brake_orbit_certificates() {
    let s1 = scenario::s1();
    let orbit = s1_orbit();
    let cert = chords::verify_brake_orbit(&s1.model, &s1.well, orbit).unwrap();
    assert!(cert.pass, "{cert:?}");
    assert!(cert.energy_residual <= 1e-8);
    assert!(cert.endpoint_momentum_norms.iter().all(|&x| x <= 1e-6));
    assert!(cert.endpoint_boundary_defects.iter().all(|&x| x <= 1e-8));
    assert!((orbit.period_half - PI).abs() <= 1e-4, "period {}", orbit.period_half);

    let s2 = scenario::s2();
    let mut periods = Vec::new();
    for c in s2_chords() {
        let o = chords::extend_to_brake_orbit(&s2.model, &s2.well, c).unwrap();
        let cert = chords::verify_brake_orbit(&s2.model, &s2.well, &o).unwrap();
        assert!(cert.pass, "{cert:?}");
        assert!(cert.energy_residual <= 1e-8);
        assert!(cert.endpoint_momentum_norms.iter().all(|&x| x <= 1e-6));
        periods.push(o.period_half);
    }
    periods.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!((periods[0] - PI / 2.0_f64.sqrt()).abs() <= 1e-4, "fast mode {}", periods[0]);
    assert!((periods[1] - PI).abs() <= 1e-4, "slow mode {}", periods[1]);
    println!("criterion 09 brake orbit certificates: pass");
}

#[test]
fn c10_boundary_flow_diagnostics() {
    let s = scenario::s1();
    let t_grid: Vec<f64> = (0..12).map(|k| 0.2 * 0.7_f64.powi(k)).collect();
    let report = flow::boundary_expansion_check(&s.model, &s.well, &v2(1.0, 0.0), &t_grid).unwrap();
    assert!(report.slope >= 2.9, "expansion slope {:.4}", report.slope);

    let traj = flow::launch_from_boundary(&s.model, &s.well, &v2(1.0, 0.0), PI, 1e-12).unwrap();
    let rim = flow::rim_time_audit(&s.model, &traj, 0.5).unwrap();
    let residence: f64 = rim.intervals.iter().map(|i| i.t_exit - i.t_enter).sum();
    assert!(
        (residence - PI / 2.0).abs() <= 1e-6,
        "rim residence {residence:.8} vs {:.8}",
        PI / 2.0
    );
    println!("criterion 10 boundary flow diagnostics: pass");
}

#[test]
fn c11_negative_controls() {
    let s = scenario::s1();
    // off-shell momenta must fail the energy entry
    let mut tampered = s1_orbit().clone();
    for z in &mut tampered.states {
        z.p *= 1.01;
    }
    let cert = chords::verify_brake_orbit(&s.model, &s.well, &tampered).unwrap();
    assert!(cert.energy_residual > 1e-8);
    assert!(!cert.pass);

    // a straight off-axis segment is not a metric geodesic
    let a = v2(0.3, 0.6);
    let b = v2(0.3, -0.6);
    let nodes: Vec<DVector<f64>> = (0..129)
        .map(|i| {
            let t = i as f64 / 128.0;
            &a * (1.0 - t) + &b * t
        })
        .collect();
    let straight = DiscreteCurve {
        nodes,
        parametrization: Parametrization::FinslerArclength,
        speed: 1.0,
    };
    let res = brake_core::geodesy::first_variation_residual(&s.model, &s.well, &straight).unwrap();
    assert!(res > 1e-6, "straight chord looked geodesic: {res:.3e}");

    // a level too far from the boundary is genuinely not concave
    let wide = psi::omega_region_at_level(&s.model, &s.well, 0.01, 12).unwrap();
    assert!(!wide.concavity_certificate.pass);
    println!("criterion 11 negative controls: pass");
}
