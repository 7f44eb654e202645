use crate::error::{shape_err, Result};
use crate::numerics::{Conv1dSpec, PadMode, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Weights of the gated cross-attention block, shared by both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    /// `[C/r, C, 1]`
    pub w_q: Tensor<T>,
    /// `[C/r, C, 1]`
    pub w_k: Tensor<T>,
    /// `[C, C, 1]`
    pub w_v: Tensor<T>,
    pub gamma: T,
}

fn pointwise() -> Conv1dSpec {
    Conv1dSpec::new(1, 0, PadMode::Zero)
}

/// `softmax(Q_x K_y / sqrt(d))` with `Q_x: [B,L,d]`, `K_y: [B,d,L]`; row `i`
/// holds the weights of query position `i` of `x` over positions of `y`.
fn affinity_var<'t, T: Scalar>(x: Var<'t, T>, y: Var<'t, T>, w_q: Var<'t, T>, w_k: Var<'t, T>) -> Result<Var<'t, T>> {
    let (xs, ys) = (x.shape(), y.shape());
    if xs.len() != 3 || xs != ys {
        return Err(shape_err!("mutual attention needs equal [B,C,L] inputs, got {xs:?} and {ys:?}"));
    }
    let d = w_q.shape()[0];
    let q = x.conv1d(w_q, None, pointwise())?.transpose_last()?;
    let k = y.conv1d(w_k, None, pointwise())?;
    let inv_sqrt_d = T::one() / T::from_usize(d).unwrap().sqrt();
    q.matmul(k)?.scale(inv_sqrt_d)?.softmax_rows()
}

/// `x + γ · (V_y · Aᵀ)` where `A` is the affinity of `x` against `y`.
pub fn mutual_attention_var<'t, T: Scalar>(
    x: Var<'t, T>,
    y: Var<'t, T>,
    w_q: Var<'t, T>,
    w_k: Var<'t, T>,
    w_v: Var<'t, T>,
    gamma: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let a = affinity_var(x, y, w_q, w_k)?;
    let v = y.conv1d(w_v, None, pointwise())?;
    let gate = v.matmul(a.transpose_last()?)?;
    x.add(gate.mul_scalar(gamma)?)
}

fn constants<'t, T: Scalar>(tape: &'t Tape<T>, p: &AttentionParams<T>) -> Result<[Var<'t, T>; 4]> {
    Ok([
        tape.constant(p.w_q.clone())?,
        tape.constant(p.w_k.clone())?,
        tape.constant(p.w_v.clone())?,
        tape.constant(Tensor::scalar(p.gamma))?,
    ])
}

pub fn mutual_attention<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, p: &AttentionParams<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let [q, k, v, g] = constants(&tape, p)?;
    let out = mutual_attention_var(tape.constant(x.clone())?, tape.constant(y.clone())?, q, k, v, g)?;
    let value = out.value().clone();
    Ok(value)
}

/// The `[B, L, L]` attention weights.
pub fn affinity<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, p: &AttentionParams<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let [q, k, _, _] = constants(&tape, p)?;
    let a = affinity_var(tape.constant(x.clone())?, tape.constant(y.clone())?, q, k)?;
    let value = a.value().clone();
    Ok(value)
}
