//! Classical-type Hamiltonians, potential wells and their sampled
//! convexity constants.

use crate::error::{Error, Result};
use crate::homogenize;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Momentum-side point (q, p) of phase space.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhasePoint {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        if q.len() != p.len() || q.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: p.len(),
            });
        }
        if q.iter().chain(p.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self { q, p })
    }
}

/// Velocity-side point (q, v), conjugate to `PhasePoint` via the
/// Legendre map of the homogenized Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentPoint {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl TangentPoint {
    pub fn new(q: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        if q.len() != v.len() || q.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: v.len(),
            });
        }
        if q.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self { q, v })
    }
}

/// Polynomial in q, stored as a sum of monomial terms
/// `coeff * prod_k q_k^{exps_k}`.
#[derive(Clone, Debug)]
pub struct Polynomial {
    pub n: usize,
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn new(n: usize, terms: Vec<(f64, Vec<u32>)>) -> Result<Self> {
        if terms.iter().any(|(_, e)| e.len() != n) {
            return Err(Error::InvalidInput("monomial exponent arity mismatch".into()));
        }
        Ok(Self { n, terms })
    }

    pub fn eval(&self, q: &DVector<f64>) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| c * e.iter().enumerate().map(|(k, &ek)| q[k].powi(ek as i32)).product::<f64>())
            .sum()
    }

    pub fn gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.n);
        for (c, e) in &self.terms {
            for j in 0..self.n {
                if e[j] == 0 {
                    continue;
                }
                let mut term = c * e[j] as f64;
                for k in 0..self.n {
                    let ek = if k == j { e[k] - 1 } else { e[k] };
                    term *= q[k].powi(ek as i32);
                }
                g[j] += term;
            }
        }
        g
    }

    pub fn hessian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n, self.n);
        for (c, e) in &self.terms {
            for j in 0..self.n {
                for l in 0..self.n {
                    let fj = e[j];
                    let fl = if l == j { e[j].saturating_sub(1) } else { e[l] };
                    if fj == 0 || (l == j && e[j] < 2) || (l != j && e[l] == 0) {
                        continue;
                    }
                    let mut term = c * fj as f64 * fl as f64;
                    for k in 0..self.n {
                        let mut ek = e[k];
                        if k == j {
                            ek -= 1;
                        }
                        if k == l {
                            ek -= 1;
                        }
                        term *= q[k].powi(ek as i32);
                    }
                    h[(j, l)] += term;
                }
            }
        }
        h
    }
}

/// Kinetic-term family. Both families have a p-independent mass structure,
/// so the mixed Hessian d2H/dqdp vanishes identically.
#[derive(Clone, Debug)]
pub enum Family {
    /// K = 1/2 p^T A p with a constant positive definite matrix A = (a^{ij}).
    Natural { mass_inv: DMatrix<f64> },
    /// K = 1/2 |p|^2 + beta * sum_i p_i^4 with beta >= 0.
    P4Perturbed { beta: f64 },
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::Natural { .. } => "natural",
            Family::P4Perturbed { .. } => "p4-perturbed",
        }
    }
}

/// Evaluator bundle for a classical-type Hamiltonian H(q,p) = K(q,p) + V(q).
#[derive(Clone, Debug)]
pub struct HamiltonianModel {
    pub n: usize,
    pub energy: f64,
    pub family: Family,
    pub potential: Polynomial,
}

/// Analytic derivative bundle at a phase point.
#[derive(Clone, Debug)]
pub struct Derivatives {
    pub dhdq: DVector<f64>,
    pub dhdp: DVector<f64>,
    pub d2hdp2: DMatrix<f64>,
    pub d2hdqdp: DMatrix<f64>,
}

impl HamiltonianModel {
    pub fn new(energy: f64, family: Family, potential: Polynomial) -> Result<Self> {
        let n = potential.n;
        if let Family::Natural { mass_inv } = &family {
            if mass_inv.nrows() != n || mass_inv.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: mass_inv.nrows(),
                });
            }
        }
        if let Family::P4Perturbed { beta } = &family {
            if *beta < 0.0 {
                return Err(Error::InvalidInput("quartic coefficient beta must be >= 0".into()));
            }
        }
        Ok(Self { n, energy, family, potential })
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: len });
        }
        Ok(())
    }

    pub fn potential_value(&self, q: &DVector<f64>) -> f64 {
        self.potential.eval(q)
    }

    pub fn grad_v(&self, q: &DVector<f64>) -> DVector<f64> {
        self.potential.gradient(q)
    }

    pub fn hess_v(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.potential.hessian(q)
    }

    pub fn kinetic(&self, p: &DVector<f64>) -> f64 {
        match &self.family {
            Family::Natural { mass_inv } => 0.5 * (p.transpose() * mass_inv * p)[(0, 0)],
            Family::P4Perturbed { beta } => {
                0.5 * p.norm_squared() + beta * p.iter().map(|x| x.powi(4)).sum::<f64>()
            }
        }
    }

    pub fn dk_dp(&self, p: &DVector<f64>) -> DVector<f64> {
        match &self.family {
            Family::Natural { mass_inv } => mass_inv * p,
            Family::P4Perturbed { beta } => {
                DVector::from_iterator(p.len(), p.iter().map(|&x| x + 4.0 * beta * x.powi(3)))
            }
        }
    }

    pub fn d2k_dp2(&self, p: &DVector<f64>) -> DMatrix<f64> {
        match &self.family {
            Family::Natural { mass_inv } => mass_inv.clone(),
            Family::P4Perturbed { beta } => {
                let mut m = DMatrix::identity(p.len(), p.len());
                for i in 0..p.len() {
                    m[(i, i)] += 12.0 * beta * p[i] * p[i];
                }
                m
            }
        }
    }

    /// H(q, p). For p = 0 this equals V(q).
    pub fn eval_hamiltonian(&self, z: &PhasePoint) -> Result<f64> {
        self.check_dim(z.q.len())?;
        Ok(self.kinetic(&z.p) + self.potential_value(&z.q))
    }

    /// Analytic first and second derivatives of H at `z`.
    pub fn eval_derivatives(&self, z: &PhasePoint) -> Result<Derivatives> {
        self.check_dim(z.q.len())?;
        Ok(Derivatives {
            dhdq: self.grad_v(&z.q),
            dhdp: self.dk_dp(&z.p),
            d2hdp2: self.d2k_dp2(&z.p),
            d2hdqdp: DMatrix::zeros(self.n, self.n),
        })
    }

    /// Full differential H' = (dH/dq, dH/dp) as a single 2n-vector.
    pub fn h_prime(&self, z: &PhasePoint) -> DVector<f64> {
        let mut out = DVector::zeros(2 * self.n);
        out.rows_mut(0, self.n).copy_from(&self.grad_v(&z.q));
        out.rows_mut(self.n, self.n).copy_from(&self.dk_dp(&z.p));
        out
    }
}

/// Classification of a configuration point against the well boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WellRegion {
    Interior,
    Boundary,
    Exterior,
}

/// Bounded potential well D = {V < E} around an interior seed point.
#[derive(Clone, Debug)]
pub struct PotentialWell {
    pub seed: DVector<f64>,
    pub boundary_tol: f64,
}

impl PotentialWell {
    pub fn new(model: &HamiltonianModel, seed: DVector<f64>) -> Result<Self> {
        let tol = 1e-10 * (1.0 + model.energy.abs());
        Self::with_tol(model, seed, tol)
    }

    pub fn with_tol(model: &HamiltonianModel, seed: DVector<f64>, boundary_tol: f64) -> Result<Self> {
        if seed.len() != model.n {
            return Err(Error::DimensionMismatch { expected: model.n, got: seed.len() });
        }
        if model.potential_value(&seed) >= model.energy {
            return Err(Error::InvalidInput("seed point is not interior to the well".into()));
        }
        Ok(Self { seed, boundary_tol })
    }
}

/// Sampled convexity constants of the kinetic Hessian and shell gradients.
#[derive(Clone, Copy, Debug)]
pub struct ConvexityBounds {
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    pub h1: f64,
    pub h2: f64,
    pub p_max: f64,
}

pub fn well_classify(model: &HamiltonianModel, well: &PotentialWell, q: &DVector<f64>) -> WellRegion {
    let gap = model.energy - model.potential_value(q);
    if gap.abs() <= well.boundary_tol {
        WellRegion::Boundary
    } else if gap > 0.0 {
        WellRegion::Interior
    } else {
        WellRegion::Exterior
    }
}

/// Outward Euclidean unit conormal grad V / |grad V| at a boundary point.
pub fn boundary_conormal(
    model: &HamiltonianModel,
    well: &PotentialWell,
    q_boundary: &DVector<f64>,
) -> Result<DVector<f64>> {
    if well_classify(model, well, q_boundary) != WellRegion::Boundary {
        return Err(Error::InvalidInput("point is not on the well boundary".into()));
    }
    let g = model.grad_v(q_boundary);
    let norm = g.norm();
    if norm < 1e-12 * (1.0 + model.energy.abs()) {
        return Err(Error::DegenerateBoundary { norm });
    }
    Ok(g / norm)
}

/// Distance from the seed to the boundary {V = E} along the unit ray `dir`,
/// found by bracketing and bisection. Assumes the well is star shaped with
/// respect to the seed, which holds for the built-in scenarios.
pub fn boundary_radius(
    model: &HamiltonianModel,
    well: &PotentialWell,
    dir: &DVector<f64>,
) -> Result<f64> {
    let g = |r: f64| model.potential_value(&(&well.seed + dir * r)) - model.energy;
    let mut hi = 1.0;
    let mut tries = 0;
    while g(hi) < 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::NoRoot);
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * (1.0 + hi) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Random unit vector.
pub fn random_unit<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(-1.0..1.0)));
        let norm = v.norm();
        if norm > 1e-3 {
            return v / norm;
        }
    }
}

/// Rejection-sample a configuration point of the closed well.
pub fn sample_interior<R: Rng>(
    model: &HamiltonianModel,
    well: &PotentialWell,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let radius = well_circumradius(model, well)?;
    for _ in 0..10_000 {
        let q = DVector::from_iterator(
            model.n,
            (0..model.n).map(|k| well.seed[k] + rng.gen_range(-radius..radius)),
        );
        if model.potential_value(&q) < model.energy {
            return Ok(q);
        }
    }
    Err(Error::NoRoot)
}

/// Upper bound on the well radius around the seed, from sampled rays.
pub fn well_circumradius(model: &HamiltonianModel, well: &PotentialWell) -> Result<f64> {
    let mut rng = deterministic_rng(0x5eed);
    let mut r_max: f64 = 0.0;
    let tries = if model.n == 2 { 64 } else { 256 };
    for k in 0..tries {
        let dir = if model.n == 2 {
            let a = 2.0 * std::f64::consts::PI * k as f64 / tries as f64;
            DVector::from_vec(vec![a.cos(), a.sin()])
        } else {
            random_unit(model.n, &mut rng)
        };
        r_max = r_max.max(boundary_radius(model, well, &dir)?);
    }
    Ok(1.05 * r_max)
}

pub(crate) fn deterministic_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Minimum of V over the sampled well (used for momentum caps).
pub fn sampled_v_min(model: &HamiltonianModel, well: &PotentialWell, nsamples: usize) -> Result<f64> {
    let mut rng = deterministic_rng(0x51a5);
    let mut v_min = model.potential_value(&well.seed);
    for _ in 0..nsamples {
        let q = sample_interior(model, well, &mut rng)?;
        v_min = v_min.min(model.potential_value(&q));
    }
    Ok(v_min)
}

/// Sampled estimates of the constants nu1, nu2, nu3, h1, h2.
pub fn convexity_constants(
    model: &HamiltonianModel,
    well: &PotentialWell,
    nsamples: usize,
) -> Result<ConvexityBounds> {
    if nsamples < 100 {
        return Err(Error::InvalidInput("convexity sampling needs nsamples >= 100".into()));
    }
    let mut rng = deterministic_rng(0xc0fe);
    let v_min = sampled_v_min(model, well, nsamples.min(512))?;
    // first pass: eigenvalue range at p = 0 fixes a provisional momentum cap
    let mut nu1_zero = f64::INFINITY;
    for _ in 0..nsamples.min(256) {
        let q = sample_interior(model, well, &mut rng)?;
        let h = model.d2k_dp2(&DVector::zeros(model.n));
        let eig = sym_eig_range(&h)?;
        nu1_zero = nu1_zero.min(eig.0);
        let _ = q;
    }
    let p_max = (2.0 * (model.energy - v_min) / nu1_zero).sqrt();

    let mut nu1 = f64::INFINITY;
    let mut nu2: f64 = 0.0;
    for _ in 0..nsamples {
        let q = sample_interior(model, well, &mut rng)?;
        let dir = random_unit(model.n, &mut rng);
        let radius: f64 = rng.gen_range(0.0..1.0);
        let p = dir * (radius * p_max);
        let h = model.d2k_dp2(&p);
        let (lo, hi) = sym_eig_range(&h)?;
        if lo <= 0.0 {
            return Err(Error::SampledNonConvex { min_eig: lo });
        }
        nu1 = nu1.min(lo);
        nu2 = nu2.max(hi);
        let _ = q;
    }

    // shell samples for h1, h2 and nu3
    let mut h1 = f64::INFINITY;
    let mut h2: f64 = 0.0;
    let mut nu3 = f64::INFINITY;
    for _ in 0..nsamples {
        let q = sample_interior(model, well, &mut rng)?;
        let theta = random_unit(model.n, &mut rng);
        let omega = homogenize::omega(model, &q, &theta)?;
        let p = &theta * omega;
        let z = PhasePoint::new(q.clone(), p.clone())?;
        let hp = model.h_prime(&z).norm();
        h1 = h1.min(hp);
        h2 = h2.max(hp);
        let (dudq, dudp) = homogenize::grad_u(model, &q, &p)?;
        let uprime = (dudq.norm_squared() + dudp.norm_squared()).sqrt();
        nu3 = nu3.min((model.energy - model.potential_value(&q)) * uprime);
    }

    Ok(ConvexityBounds { nu1, nu2, nu3, h1, h2, p_max })
}

fn sym_eig_range(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &ev in sym.eigenvalues.iter() {
        lo = lo.min(ev);
        hi = hi.max(ev);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    Ok((lo, hi))
}

/// Central finite differences of H, used to cross-check the analytic
/// derivative bundle.
pub fn finite_difference_derivatives(model: &HamiltonianModel, z: &PhasePoint) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = model.n;
    let mut dq = DVector::zeros(n);
    let mut dp = DVector::zeros(n);
    for k in 0..n {
        let hq = f64::EPSILON.powf(1.0 / 3.0) * (1.0 + z.q[k].abs());
        let mut qp = z.q.clone();
        let mut qm = z.q.clone();
        qp[k] += hq;
        qm[k] -= hq;
        dq[k] = (model.eval_hamiltonian(&PhasePoint::new(qp, z.p.clone())?)?
            - model.eval_hamiltonian(&PhasePoint::new(qm, z.p.clone())?)?)
            / (2.0 * hq);
        let hp = f64::EPSILON.powf(1.0 / 3.0) * (1.0 + z.p[k].abs());
        let mut pp = z.p.clone();
        let mut pm = z.p.clone();
        pp[k] += hp;
        pm[k] -= hp;
        dp[k] = (model.eval_hamiltonian(&PhasePoint::new(z.q.clone(), pp)?)?
            - model.eval_hamiltonian(&PhasePoint::new(z.q.clone(), pm)?)?)
            / (2.0 * hp);
    }
    Ok((dq, dp))
}
