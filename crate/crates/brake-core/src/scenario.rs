//! Built-in test scenarios.

use crate::error::{Error, Result};
use crate::model::{Family, HamiltonianModel, Polynomial, PotentialWell};
use nalgebra::{DMatrix, DVector};

/// A model together with its well seed.
pub struct Scenario {
    pub name: &'static str,
    pub model: HamiltonianModel,
    pub well: PotentialWell,
}

/// Isotropic oscillator: H = |p|^2/2 + |q|^2/2 at E = 1/2. The well is the
/// open unit disk and every solution is 2*pi periodic.
pub fn s1() -> Scenario {
    let potential = Polynomial::new(
        2,
        vec![(0.5, vec![2, 0]), (0.5, vec![0, 2])],
    )
    .unwrap();
    let model = HamiltonianModel::new(
        0.5,
        Family::Natural { mass_inv: DMatrix::identity(2, 2) },
        potential,
    )
    .unwrap();
    let well = PotentialWell::new(&model, DVector::zeros(2)).unwrap();
    Scenario { name: "s1", model, well }
}

/// Anisotropic oscillator with a non-trivial mass matrix:
/// H = p1^2/2 + p2^2/4 + q1^2/2 + 2 q2^2 at E = 1/2.
/// The well is the ellipse q1^2 + 4 q2^2 < 1.
pub fn s2() -> Scenario {
    let potential = Polynomial::new(
        2,
        vec![(0.5, vec![2, 0]), (2.0, vec![0, 2])],
    )
    .unwrap();
    let mass_inv = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
    let model = HamiltonianModel::new(0.5, Family::Natural { mass_inv }, potential).unwrap();
    let well = PotentialWell::new(&model, DVector::zeros(2)).unwrap();
    Scenario { name: "s2", model, well }
}

/// Quartic momentum perturbation of s1:
/// H = |p|^2/2 + 0.1 (p1^4 + p2^4) + |q|^2/2 at E = 1/2.
/// Same well as s1, but the metric is Finsler and not Riemannian.
pub fn s3() -> Scenario {
    let potential = Polynomial::new(
        2,
        vec![(0.5, vec![2, 0]), (0.5, vec![0, 2])],
    )
    .unwrap();
    let model =
        HamiltonianModel::new(0.5, Family::P4Perturbed { beta: 0.1 }, potential).unwrap();
    let well = PotentialWell::new(&model, DVector::zeros(2)).unwrap();
    Scenario { name: "s3", model, well }
}

pub fn by_name(name: &str) -> Result<Scenario> {
    match name {
        "s1" => Ok(s1()),
        "s2" => Ok(s2()),
        "s3" => Ok(s3()),
        other => Err(Error::InvalidInput(format!("unknown scenario '{other}'"))),
    }
}
