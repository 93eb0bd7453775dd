use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Diagonal Gaussian given by its mean and per-dimension variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() || mean.is_empty() {
            return Err(Error::Dimension {
                op: "diag_gaussian",
                left: vec![mean.len()],
                right: vec![variance.len()],
            });
        }
        if let Some(v) = variance.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::contract(format!("variance {v} is not positive")));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.mean
            .iter()
            .zip(&self.variance)
            .zip(z)
            .map(|((m, v), x)| -0.5 * (ln_2pi + v.ln() + (x - m) * (x - m) / v))
            .sum()
    }
}

/// `KL(q || p)` between diagonal Gaussians, in nats.
pub fn gaussian_kl(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::Dimension {
            op: "gaussian_kl",
            left: vec![q.dim()],
            right: vec![p.dim()],
        });
    }
    let nonpositive = q.variance.iter().chain(&p.variance).any(|v| !(*v > 0.0));
    if nonpositive {
        return Err(Error::contract("gaussian_kl needs positive variances"));
    }
    Ok(q.mean
        .iter()
        .zip(&q.variance)
        .zip(p.mean.iter().zip(&p.variance))
        .map(|((qm, qv), (pm, pv))| {
            let d = qm - pm;
            0.5 * ((pv / qv).ln() + (qv + d * d) / pv - 1.0)
        })
        .sum())
}

/// `mean + sqrt(variance) * noise`.
pub fn reparam_sample(g: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        return Err(Error::Dimension {
            op: "reparam_sample",
            left: vec![g.dim()],
            right: vec![noise.len()],
        });
    }
    Ok(g.mean
        .iter()
        .zip(&g.variance)
        .zip(noise)
        .map(|((m, v), e)| m + v.sqrt() * e)
        .collect())
}

/// A diagonal Gaussian whose parameters live on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mean: Var,
    pub variance: Var,
}

impl GaussianVars {
    pub fn value(&self, tape: &Tape) -> DiagGaussian {
        DiagGaussian {
            mean: tape.value(self.mean),
            variance: tape.value(self.variance),
        }
    }

    /// Differentiable reparameterized draw with `noise` held fixed.
    pub fn sample(&self, tape: &Tape, noise: &[f64]) -> Result<Var> {
        let eps = tape.vector(noise.to_vec());
        tape.add(self.mean, tape.mul(tape.sqrt(self.variance), eps)?)
    }

    /// Differentiable `KL(self || p)`.
    pub fn kl(&self, tape: &Tape, p: &GaussianVars) -> Result<Var> {
        let log_ratio = tape.sub(tape.log(p.variance), tape.log(self.variance))?;
        let diff = tape.sub(self.mean, p.mean)?;
        let quad = tape.div(tape.add(self.variance, tape.square(diff))?, p.variance)?;
        let terms = tape.offset(tape.add(log_ratio, quad)?, -1.0);
        Ok(tape.scale(tape.sum(terms), 0.5))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(mean: &[f64], var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), var.to_vec()).unwrap()
    }

    #[test]
    fn closed_form_cases() {
        let p = g(&[0.3, -1.0], &[0.5, 2.0]);
        assert_eq!(gaussian_kl(&p, &p).unwrap(), 0.0);
        assert_eq!(gaussian_kl(&g(&[1.0], &[1.0]), &g(&[0.0], &[1.0])).unwrap(), 0.5);
    }

    #[test]
    fn rejects_bad_variances() {
        assert!(DiagGaussian::new(vec![0.0], vec![0.0]).is_err());
        let q = DiagGaussian {
            mean: vec![0.0],
            variance: vec![-1.0],
        };
        assert!(matches!(
            gaussian_kl(&q, &DiagGaussian::standard(1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn reparam_edge_cases() {
        let p = g(&[0.5, -2.0], &[4.0, 0.25]);
        assert_eq!(reparam_sample(&p, &[0.0, 0.0]).unwrap(), p.mean);
        let unit = DiagGaussian::standard(3);
        assert_eq!(reparam_sample(&unit, &[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(reparam_sample(&unit, &[1.0]).is_err());
    }

    #[test]
    fn tape_kl_matches_plain_kl() {
        let q = g(&[0.3, -0.2, 1.0], &[0.4, 1.3, 0.07]);
        let p = g(&[-0.1, 0.5, 0.9], &[1.1, 0.2, 0.5]);
        let tape = Tape::new();
        let qv = GaussianVars {
            mean: tape.vector(q.mean.clone()),
            variance: tape.vector(q.variance.clone()),
        };
        let pv = GaussianVars {
            mean: tape.vector(p.mean.clone()),
            variance: tape.vector(p.variance.clone()),
        };
        let kl = tape.scalar(qv.kl(&tape, &pv).unwrap());
        assert!((kl - gaussian_kl(&q, &p).unwrap()).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_zero_only_at_equality(
            qm in prop::collection::vec(-3.0..3.0f64, 4),
            pm in prop::collection::vec(-3.0..3.0f64, 4),
            qv in prop::collection::vec(0.01..5.0f64, 4),
            pv in prop::collection::vec(0.01..5.0f64, 4),
        ) {
            let q = g(&qm, &qv);
            let p = g(&pm, &pv);
            let kl = gaussian_kl(&q, &p).unwrap();
            prop_assert!(kl >= 0.0);
            if q != p {
                prop_assert!(kl > 0.0);
            }
            prop_assert_eq!(gaussian_kl(&q, &q).unwrap(), 0.0);
        }
    }
}
