//! Parameter initialization and name-scoped lookup shared by the network
//! modules.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tensorgrad::{Graph, ParamStore, Scalar, Tensor, Var, Vars};

use crate::error::Result;

pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore<f64>,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, shape: Vec<usize>, bound: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        Tensor::new(shape, data).expect("positive extents")
    }

    /// `name.w [cin, cout]` with `U(-gain/sqrt(cin), gain/sqrt(cin))`, and
    /// a zero `name.b` when `bias`.
    pub fn linear(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        bias: bool,
        gain: f64,
    ) -> Result<()> {
        let w = if gain == 0.0 {
            Tensor::zeros(vec![cin, cout])
        } else {
            self.uniform(vec![cin, cout], gain / (cin as f64).sqrt())
        };
        self.store.insert(format!("{name}.w"), w)?;
        if bias {
            self.store
                .insert(format!("{name}.b"), Tensor::zeros(vec![cout]))?;
        }
        Ok(())
    }

    pub fn layernorm(&mut self, name: &str, c: usize) -> Result<()> {
        self.store
            .insert(format!("{name}.g"), Tensor::full(vec![c], 1.0))?;
        self.store
            .insert(format!("{name}.b"), Tensor::zeros(vec![c]))?;
        Ok(())
    }

    pub fn tensor(&mut self, name: &str, t: Tensor<f64>) -> Result<()> {
        self.store.insert(name.to_string(), t)?;
        Ok(())
    }
}

/// Parameter lookup under a name prefix.
#[derive(Clone, Copy)]
pub struct Scope<'a> {
    pub vars: &'a Vars,
    pub prefix: &'a str,
}

impl<'a> Scope<'a> {
    pub fn new(vars: &'a Vars, prefix: &'a str) -> Self {
        Scope { vars, prefix }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        Ok(self.vars.get(&format!("{}{name}", self.prefix))?)
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains(&format!("{}{name}", self.prefix))
    }

    pub fn linear<T: Scalar>(&self, g: &mut Graph<T>, name: &str, x: Var) -> Result<Var> {
        let w = self.get(&format!("{name}.w"))?;
        let b = if self.has(&format!("{name}.b")) {
            Some(self.get(&format!("{name}.b"))?)
        } else {
            None
        };
        Ok(g.conv1x1(x, w, b)?)
    }

    pub fn layernorm<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        name: &str,
        x: Var,
        eps: f64,
    ) -> Result<Var> {
        let gamma = self.get(&format!("{name}.g"))?;
        let beta = self.get(&format!("{name}.b"))?;
        Ok(g.layernorm(x, Some(gamma), Some(beta), eps)?)
    }
}
