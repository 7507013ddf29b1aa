//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] on a scalar output fills the gradient of every node
//! that requires one; [`Graph::accumulate_into`] copies those gradients back
//! onto long-lived parameter tensors, and [`sgd_step`] applies them.
//!
//! ```
//! use nmil::gradcore::{Graph, Tensor};
//!
//! let w = Tensor::vector(vec![0.5, -1.0]).unwrap().with_requires_grad(true);
//! let mut g = Graph::new();
//! let wv = g.leaf(&w);
//! let s = g.sum(wv, 0).unwrap();
//! g.backward(s).unwrap();
//! assert_eq!(g.grad(wv), Some(&[1.0, 1.0][..]));
//! ```

mod graph;
mod tensor;

pub use graph::{BinaryOp, Graph, Reduction, UnaryOp, Var, BCE_EPSILON};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Plain gradient descent: `p <- p - lr * grad`, then zeroes the gradients.
pub fn sgd_step(params: &mut [&mut Tensor], lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate {lr} must be finite and >= 0")));
    }
    if params.iter().any(|p| p.grad().is_none()) {
        return Err(Error::State("sgd_step on a parameter without gradient".into()));
    }
    for p in params.iter_mut() {
        let grad = p.grad().map(<[f64]>::to_vec).unwrap_or_default();
        p.values_mut()
            .iter_mut()
            .zip(&grad)
            .for_each(|(v, g)| *v -= lr * g);
        p.zero_grad();
    }
    Ok(())
}
