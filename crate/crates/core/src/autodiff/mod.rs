//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! Operations record onto a [`Tape`]; [`Tape::gradients`] runs a numeric
//! reverse sweep and [`Tape::grad_graph`] records the sweep itself so the
//! resulting gradients can be differentiated again.

mod params;
mod tape;
mod tensor;

use std::rc::Rc;

pub use params::{Adam, ParamStore, CHECKPOINT_MAGIC};
pub use tape::{SparseMap, Tape, Var};
pub use tensor::Tensor;

/// `hat` of a `[1, 3]` variable as a `[3, 3]` variable.
pub fn hat_var(x: Var<'_>) -> Var<'_> {
    thread_local! {
        static MAP: Rc<SparseMap> = SparseMap::new(
            [1, 3],
            [3, 3],
            vec![(1, 2, -1.0), (2, 1, 1.0), (3, 2, 1.0), (5, 0, -1.0), (6, 1, -1.0), (7, 0, 1.0)],
        );
    }
    MAP.with(|m| x.linear(m))
}

/// Matrix exponential of a square variable by scaling and squaring with a
/// truncated Taylor series. Accurate to rounding for the small matrices used here.
pub fn expm_var(a: Var<'_>) -> Var<'_> {
    let n = a.shape()[0];
    let norm = a.value().data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a.scale(0.5f64.powi(squarings));
    let tape = a.tape();
    let eye = tape.leaf(Tensor::identity(n));
    let mut term = eye;
    let mut sum = eye;
    for k in 1..=14 {
        term = term.matmul(scaled).scale(1.0 / k as f64);
        sum = sum + term;
    }
    for _ in 0..squarings {
        sum = sum.matmul(sum);
    }
    sum
}
