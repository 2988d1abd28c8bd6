use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::imaging::{ImageTensor, LinearOperator};

/// How `prox_{γg}` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxMethod {
    /// Diagonalized solve (Fourier domain for circulant blurs).
    #[default]
    Exact,
    /// Conjugate gradient on `(I + γAᵀA) x = z + γAᵀy`.
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 1000,
        }
    }
}

/// `g(x) = ½‖y − Ax‖²`
#[derive(Debug, Clone)]
pub struct QuadraticDataTerm {
    op: LinearOperator,
    y: ImageTensor,
    aty: ImageTensor,
}

impl QuadraticDataTerm {
    pub fn new(op: LinearOperator, y: ImageTensor) -> Result<Self, SolverError> {
        let aty = op.adjoint(&y)?;
        Ok(Self { op, y, aty })
    }

    pub fn operator(&self) -> &LinearOperator {
        &self.op
    }

    pub fn y(&self) -> &ImageTensor {
        &self.y
    }

    /// `Aᵀy`
    pub fn adjoint_y(&self) -> &ImageTensor {
        &self.aty
    }

    pub fn value(&self, x: &ImageTensor) -> Result<f64, SolverError> {
        let r = self.op.forward(x)?.sub(&self.y)?;
        Ok(0.5 * r.dot(&r)?)
    }

    /// `Aᵀ(Ax − y)`
    pub fn grad(&self, x: &ImageTensor) -> Result<ImageTensor, SolverError> {
        Ok(self.op.normal(x)?.sub(&self.aty)?)
    }

    /// `argmin_x ½‖x − z‖² + γ·g(x)`
    pub fn prox(&self, z: &ImageTensor, gamma: f64) -> Result<ImageTensor, SolverError> {
        self.prox_with(z, gamma, ProxMethod::Exact, CgOptions::default())
    }

    pub fn prox_with(
        &self,
        z: &ImageTensor,
        gamma: f64,
        method: ProxMethod,
        cg: CgOptions,
    ) -> Result<ImageTensor, SolverError> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(SolverError::Config(format!("prox weight must be positive, got {gamma}")));
        }
        let mut rhs = z.clone();
        rhs.axpy(gamma, &self.aty)?;
        match method {
            ProxMethod::Exact => Ok(self.op.solve_normal(&rhs, gamma)?),
            ProxMethod::Cg => self.cg_solve(&rhs, gamma, z, cg),
        }
    }

    fn cg_solve(
        &self,
        rhs: &ImageTensor,
        gamma: f64,
        start: &ImageTensor,
        opts: CgOptions,
    ) -> Result<ImageTensor, SolverError> {
        let apply = |v: &ImageTensor| -> Result<ImageTensor, SolverError> {
            let mut out = v.clone();
            out.axpy(gamma, &self.op.normal(v)?)?;
            Ok(out)
        };
        let mut x = start.clone();
        let mut r = rhs.sub(&apply(&x)?)?;
        let mut p = r.clone();
        let mut rr = r.dot(&r)?;
        let target = opts.tolerance * rhs.norm().max(f64::MIN_POSITIVE);
        for _ in 0..opts.max_iterations {
            if rr.sqrt() <= target {
                return Ok(x);
            }
            let ap = apply(&p)?;
            let alpha = rr / p.dot(&ap)?;
            x.axpy(alpha, &p)?;
            r.axpy(-alpha, &ap)?;
            let rr_next = r.dot(&r)?;
            p = r.zip_map(&p, |ri, pi| ri + (rr_next / rr) * pi)?;
            rr = rr_next;
        }
        if rr.sqrt() <= target {
            return Ok(x);
        }
        Err(SolverError::Cg {
            iterations: opts.max_iterations,
            residual: rr.sqrt() / rhs.norm().max(f64::MIN_POSITIVE),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{BlurKernel, Shape};
    use crate::rng::GaussianStream;
    use nalgebra::{DMatrix, DVector};

    fn scalar(v: f64) -> ImageTensor {
        ImageTensor::new(Shape::new(1, 1, 1), vec![v]).unwrap()
    }

    fn random_image(shape: Shape, rng: &mut GaussianStream) -> ImageTensor {
        ImageTensor::new(shape, rng.normal_vec(shape.len())).unwrap()
    }

    fn blur_problem(seed: u64) -> (QuadraticDataTerm, Shape) {
        let s = Shape::new(8, 8, 1);
        let mut rng = GaussianStream::new(seed);
        let k = BlurKernel::new(3, 3, (0..9).map(|_| rng.uniform()).collect()).unwrap().normalized();
        let op = LinearOperator::circulant_blur(s, k).unwrap();
        let y = random_image(s, &mut rng);
        (QuadraticDataTerm::new(op, y).unwrap(), s)
    }

    fn dense(op: &LinearOperator) -> DMatrix<f64> {
        let s = op.shape();
        let n = s.len();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = op.forward(&ImageTensor::new(s, e).unwrap()).unwrap();
            for i in 0..n {
                m[(i, j)] = col.as_slice()[i];
            }
        }
        m
    }

    #[test]
    fn scalar_identities() {
        let dt = QuadraticDataTerm::new(LinearOperator::identity(Shape::new(1, 1, 1)), scalar(1.0)).unwrap();
        assert_eq!(dt.prox(&scalar(0.0), 1.0).unwrap().as_slice(), &[0.5]);
        assert_eq!(dt.grad(&scalar(2.0)).unwrap().as_slice(), &[1.0]);
        let z = scalar(0.3);
        assert!((dt.prox(&z, 1e-12).unwrap().as_slice()[0] - 0.3).abs() < 1e-9);
        assert!(dt.prox(&z, 0.0).is_err());
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let (dt, s) = blur_problem(1);
        let mut rng = GaussianStream::new(9);
        let x = random_image(s, &mut rng);
        let y = dt.operator().forward(&x).unwrap();
        let dt = QuadraticDataTerm::new(dt.operator().clone(), y).unwrap();
        assert!(dt.grad(&x).unwrap().norm() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (dt, s) = blur_problem(2);
        let mut rng = GaussianStream::new(3);
        let x = random_image(s, &mut rng);
        let g = dt.grad(&x).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..s.len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a.as_mut_slice()[i] += h;
            b.as_mut_slice()[i] -= h;
            let fd = (dt.value(&a).unwrap() - dt.value(&b).unwrap()) / (2.0 * h);
            worst = worst.max((fd - g.as_slice()[i]).abs());
        }
        assert!(worst / g.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())) <= 1e-6);
    }

    #[test]
    fn prox_matches_dense_solve() {
        for seed in 0..5 {
            let (dt, s) = blur_problem(10 + seed);
            let mut rng = GaussianStream::new(seed);
            let z = random_image(s, &mut rng);
            let gamma = 0.1 + 3.0 * rng.uniform();
            let a = dense(dt.operator());
            let lhs = DMatrix::identity(64, 64) + gamma * a.transpose() * &a;
            let rhs = DVector::from_column_slice(z.as_slice())
                + gamma * a.transpose() * DVector::from_column_slice(dt.y().as_slice());
            let want = lhs.lu().solve(&rhs).unwrap();
            for method in [ProxMethod::Exact, ProxMethod::Cg] {
                let got = dt.prox_with(&z, gamma, method, CgOptions::default()).unwrap();
                let err = got.as_slice().iter().zip(want.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                assert!(err <= 1e-8, "{method:?}: {err}");
            }
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let (dt, s) = blur_problem(4);
        let z = ImageTensor::filled(s, 0.3);
        let opts = CgOptions {
            tolerance: 1e-14,
            max_iterations: 1,
        };
        match dt.prox_with(&z, 5.0, ProxMethod::Cg, opts) {
            Err(SolverError::Cg { iterations: 1, residual }) => assert!(residual > 1e-14),
            other => panic!("expected a CG error, got {other:?}"),
        }
    }
}
