//! Parameter bundles shared by every block: linear maps, layer norms and
//! position-wise feed-forward networks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Result};
use crate::tensor::{Element, ParamId, ParamStore, Tape, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

pub fn xavier_uniform<T: Element>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| T::lit(rng.random_range(-bound..bound)))
}

pub fn uniform<T: Element>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
}

/// Builder handed to every parameter constructor.
pub struct Init<'a, T: Element> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Element> Init<'_, T> {
    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let w = xavier_uniform(self.rng, fan_in, fan_out);
        self.store.add(name, w)
    }

    pub fn filled(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.store.add(name, Tensor::filled(shape, T::lit(value)))
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let t = uniform(self.rng, shape, bound);
        self.store.add(name, t)
    }
}

/// `x · W + b` over the rows of `x`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Element>(init: &mut Init<'_, T>, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let weight = init.xavier(&format!("{name}.weight"), in_dim, out_dim)?;
        let bias = if bias {
            Some(init.filled(&format!("{name}.bias"), &[out_dim], 0.0)?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let cols = tape.shape(x).last().copied().unwrap_or(0);
        if cols != self.in_dim {
            return Err(dim_err!("linear expects width {}, got {cols}", self.in_dim));
        }
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new<T: Element>(init: &mut Init<'_, T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Norm {
            gamma: init.filled(&format!("{name}.gamma"), &[dim], 1.0)?,
            beta: init.filled(&format!("{name}.beta"), &[dim], 0.0)?,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b, T::lit(NORM_EPS))
    }
}

/// Position-wise `d → 2d → d` network with a ReLU in between.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<T: Element>(init: &mut Init<'_, T>, name: &str, dim: usize) -> Result<Self> {
        Ok(FeedForward {
            inner: Linear::new(init, &format!("{name}.inner"), dim, 2 * dim, true)?,
            outer: Linear::new(init, &format!("{name}.outer"), 2 * dim, dim, true)?,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = self.inner.forward(tape, x)?;
        let h = tape.relu(h)?;
        self.outer.forward(tape, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn xavier_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Tensor<f64> = xavier_uniform(&mut rng, 10, 6);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn linear_applies_bias() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut Init { store: &mut store, rng: &mut rng }, "l", 3, 2, true).unwrap();
        store.assign("l.bias", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()).unwrap();
        let mut tape = Tape::with_params(&store);
        let x = tape.constant(Tensor::zeros(&[4, 3]));
        let y = lin.forward(&mut tape, x).unwrap();
        assert_eq!(tape.shape(y), &[4, 2]);
        assert_eq!(tape.value(y).row(3), &[1.0, -1.0]);
        let bad = tape.constant(Tensor::zeros(&[4, 5]));
        assert!(lin.forward(&mut tape, bad).is_err());
    }
}
