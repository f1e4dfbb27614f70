use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// A proper rotation: orthogonal with determinant `+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationMatrix(DMatrix<f64>);

impl RotationMatrix {
    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Haar-distributed draw from SO(d).
///
/// QR of a standard-normal matrix, column signs fixed by the diagonal of R,
/// then one column negated if the determinant came out `-1`.
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> RotationMatrix {
    assert!(dim >= 1, "rotation dimension must be positive");
    let a = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    RotationMatrix(q)
}
