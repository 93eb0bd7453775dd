use rand::Rng;

use super::gaussian::{DiagGaussian, GaussianVars};
use crate::error::{Error, Result};
use crate::init;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Feed-forward net mapping a conditioning vector to a diagonal Gaussian:
///
/// ```text
/// h   = tanh(W2 tanh(W1 x + b1) + b2)      (or tanh(W1 x + b1) with one layer)
/// mu  = Wmu h + bmu
/// var = scale * softplus(Wsig h + bsig)
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentNet {
    pub l1_w: ParamId,
    pub l1_b: ParamId,
    pub l2: Option<(ParamId, ParamId)>,
    pub mu_w: ParamId,
    pub mu_b: ParamId,
    pub sigma_w: ParamId,
    pub sigma_b: ParamId,
    pub input: usize,
    pub latent: usize,
    pub covariance_scale: f64,
}

impl LatentNet {
    /// Weights drawn from `N(0, 0.01)`, biases zero.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        latent: usize,
        layers: usize,
        covariance_scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = 0.1;
        let mut weight = |store: &mut ParamStore, name: &str, cols: usize| {
            store.insert(format!("{prefix}.{name}.w"), init::normal(latent, cols, std, rng)?)
        };
        let l1_w = weight(store, "l1", input)?;
        let l2_w = if layers == 2 {
            Some(weight(store, "l2", latent)?)
        } else {
            None
        };
        let mu_w = weight(store, "mu", latent)?;
        let sigma_w = weight(store, "sigma", latent)?;
        let mut bias = |name: &str| store.insert(format!("{prefix}.{name}.b"), init::zeros(latent)?);
        let l1_b = bias("l1")?;
        let l2 = match l2_w {
            Some(w) => Some((w, bias("l2")?)),
            None => None,
        };
        Ok(Self {
            l1_w,
            l1_b,
            l2,
            mu_w,
            mu_b: bias("mu")?,
            sigma_w,
            sigma_b: bias("sigma")?,
            input,
            latent,
            covariance_scale,
        })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, input: Var) -> Result<GaussianVars> {
        let width = tape.shape(input);
        if width != [self.input] {
            return Err(Error::Dimension {
                op: "latent net input",
                left: width,
                right: vec![self.input],
            });
        }
        let p = |id| tape.param(store, id);
        let mut h = tape.tanh(tape.add(tape.matvec(p(self.l1_w), input)?, p(self.l1_b))?);
        if let Some((w, b)) = self.l2 {
            h = tape.tanh(tape.add(tape.matvec(p(w), h)?, p(b))?);
        }
        let mean = tape.add(tape.matvec(p(self.mu_w), h)?, p(self.mu_b))?;
        let raw = tape.add(tape.matvec(p(self.sigma_w), h)?, p(self.sigma_b))?;
        let variance = tape.scale(tape.softplus(raw), self.covariance_scale);
        Ok(GaussianVars { mean, variance })
    }

    /// Evaluates the net on a plain vector.
    pub fn distribution(&self, store: &ParamStore, input: &[f64]) -> Result<DiagGaussian> {
        let tape = Tape::no_grad();
        let x = tape.vector(input.to_vec());
        Ok(self.forward(&tape, store, x)?.value(&tape))
    }
}
