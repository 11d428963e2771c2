use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative errors are taken against `max(|analytic|, |numeric|, floor)` so
/// that entries with vanishing gradients are judged on absolute error.
const DENOMINATOR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error per input tensor.
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.iter().all(|e| *e <= self.tol)
    }

    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of `f` against central finite differences.
///
/// Non-scalar outputs are reduced with a fixed pseudo-random projection so
/// that every output entry contributes.
pub fn grad_check<F>(f: F, inputs: &[Tensor], tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor], backward: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone().with_grad())).collect();
        let out = f(&mut tape, &vars)?;
        let n = tape.value(out).len();
        let loss = if n == 1 {
            out
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let weights = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
            let weighted = tape.mul_const(out, weights)?;
            tape.sum(weighted)
        };
        let value = tape.value(loss)[0];
        let mut grads = Vec::new();
        if backward {
            tape.backward(loss)?;
            for (v, t) in vars.iter().zip(inputs) {
                grads.push(tape.grad(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec));
            }
        }
        Ok((value, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut work = inputs.to_vec();
    let mut max_rel_error = Vec::with_capacity(inputs.len());
    for (t, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        #[allow(clippy::needless_range_loop)]
        for k in 0..work[t].numel() {
            let orig = work[t].values[k];
            work[t].values[k] = orig + FD_STEP;
            let (plus, _) = eval(&work, false)?;
            work[t].values[k] = orig - FD_STEP;
            let (minus, _) = eval(&work, false)?;
            work[t].values[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad[k];
            let denom = a.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
        max_rel_error.push(worst);
    }
    Ok(GradCheckReport { max_rel_error, tol })
}
