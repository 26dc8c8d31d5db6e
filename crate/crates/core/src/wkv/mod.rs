//! Token-mixing attention kernels over `(T, C)` sequences.
//!
//! [`biwkv_reference`] evaluates the bidirectional WKV sum directly in O(T²C)
//! and serves as the oracle. [`biwkv_scan`] computes the same quantity in
//! O(TC) with one forward and one backward decayed accumulator per channel.
//!
//! For token `t` of a length-`T` sequence:
//!
//! ```text
//! wkv_t = (Σ_{i≠t} e^{-(|t-i|-1)·w/T + k_i} v_i + e^{u+k_t} v_t)
//!       / (Σ_{i≠t} e^{-(|t-i|-1)·w/T + k_i}     + e^{u+k_t})
//! ```

mod backward;
mod opcount;

pub use backward::{biwkv_backward, WkvGrads};
pub use opcount::{op_count, Mechanism};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Per-channel decay `w` and current-token bonus `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<F = f32> {
    pub decay: Vec<F>,
    pub bonus: Vec<F>,
}

impl<F: Real> AttentionParams<F> {
    pub fn new(decay: Vec<F>, bonus: Vec<F>) -> Result<Self> {
        if decay.len() != bonus.len() {
            return Err(Error::shape(
                "attention_params",
                format!("decay length {} != bonus length {}", decay.len(), bonus.len()),
            ));
        }
        if decay.iter().chain(&bonus).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite attention parameter".into()));
        }
        Ok(AttentionParams { decay, bonus })
    }

    pub fn zeros(channels: usize) -> Self {
        AttentionParams {
            decay: vec![F::zero(); channels],
            bonus: vec![F::zero(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.decay.len()
    }
}

fn check_kv<F: Real>(
    k: &Tensor<F>,
    v: &Tensor<F>,
    op: &'static str,
) -> Result<(usize, usize)> {
    let (t, c) = k.dims2(op)?;
    if v.shape() != k.shape() {
        return Err(Error::shape(
            op,
            format!("key shape {:?} != value shape {:?}", k.shape(), v.shape()),
        ));
    }
    if t == 0 {
        return Err(Error::shape(op, "empty sequence"));
    }
    Ok((t, c))
}

fn check_params<F: Real>(p: &AttentionParams<F>, c: usize, op: &'static str) -> Result<()> {
    if p.decay.len() != c || p.bonus.len() != c {
        return Err(Error::shape(
            op,
            format!(
                "attention params have {}/{} channels, sequence has {c}",
                p.decay.len(),
                p.bonus.len()
            ),
        ));
    }
    Ok(())
}

pub(crate) fn column<F: Real>(x: &Tensor<F>, c: usize, channels: usize) -> Vec<F> {
    x.data().iter().skip(c).step_by(channels).copied().collect()
}

pub(crate) fn set_column<F: Real>(x: &mut [F], c: usize, channels: usize, col: &[F]) {
    for (slot, &v) in x.iter_mut().skip(c).step_by(channels).zip(col) {
        *slot = v;
    }
}

/// AFT-simple: a softmax-over-keys weighted mean of values, identical for every token.
pub fn aft_reference<F: Real>(k: &Tensor<F>, v: &Tensor<F>) -> Result<Tensor<F>> {
    let (t, c) = check_kv(k, v, "aft")?;
    let kd = k.data();
    let vd = v.data();
    let mut out = vec![F::zero(); t * c];
    for ch in 0..c {
        let max = (0..t).map(|i| kd[i * c + ch]).fold(F::neg_infinity(), F::max);
        let (mut num, mut den) = (F::zero(), F::zero());
        for i in 0..t {
            let e = (kd[i * c + ch] - max).exp();
            num = num + e * vd[i * c + ch];
            den = den + e;
        }
        let mean = num / den;
        for i in 0..t {
            out[i * c + ch] = mean;
        }
    }
    Tensor::from_vec(&[t, c], out)
}

/// Exponent of the weight token `t` gives token `i`; `per_step` is `w / T`.
#[inline]
fn pair_exponent<F: Real>(t: usize, i: usize, k_i: F, bonus: F, per_step: F) -> F {
    if i == t {
        bonus + k_i
    } else {
        let dist = t.abs_diff(i) - 1;
        k_i - F::from_usize(dist).unwrap() * per_step
    }
}

/// Direct O(T²) evaluation, shifted by the per-token maximum exponent.
pub fn biwkv_reference<F: Real>(
    k: &Tensor<F>,
    v: &Tensor<F>,
    p: &AttentionParams<F>,
) -> Result<Tensor<F>> {
    let (t_len, c) = check_kv(k, v, "biwkv_reference")?;
    check_params(p, c, "biwkv_reference")?;
    let tf = F::from_usize(t_len).unwrap();
    let mut out = vec![F::zero(); t_len * c];
    let mut exps = vec![F::zero(); t_len];
    for ch in 0..c {
        let kc = column(k, ch, c);
        let vc = column(v, ch, c);
        let per_step = p.decay[ch] / tf;
        for t in 0..t_len {
            for (i, e) in exps.iter_mut().enumerate() {
                *e = pair_exponent(t, i, kc[i], p.bonus[ch], per_step);
            }
            let max = exps.iter().copied().fold(F::neg_infinity(), F::max);
            let (mut num, mut den) = (F::zero(), F::zero());
            for (e, &vi) in exps.iter().zip(&vc) {
                let a = (*e - max).exp();
                num = num + a * vi;
                den = den + a;
            }
            out[t * c + ch] = num / den;
        }
    }
    Tensor::from_vec(&[t_len, c], out)
}

/// Log-domain frame of a one-directional decayed accumulator.
///
/// The stored sums are scaled by `e^{-m}` with `m = anchor - steps * per_step`,
/// the largest exponent among the accumulated terms. `m` is re-derived from
/// the anchor on every step so rounding does not accumulate along the sequence.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Frame<F> {
    anchor: F,
    steps: usize,
    live: bool,
}

impl<F: Real> Frame<F> {
    pub(crate) fn new() -> Self {
        Frame {
            anchor: F::zero(),
            steps: 0,
            live: false,
        }
    }

    /// Current exponent `m`, or `-inf` for an empty accumulator.
    #[inline]
    pub(crate) fn exponent(&self, per_step: F) -> F {
        if self.live {
            self.anchor - F::from_usize(self.steps).unwrap() * per_step
        } else {
            F::neg_infinity()
        }
    }

    /// Advance one position and admit a term with exponent `key`.
    ///
    /// Returns `(old, new)`: scale existing sums by `old`, then add the new
    /// term's value times `new`.
    #[inline]
    pub(crate) fn push(&mut self, key: F, per_step: F) -> (F, F) {
        if !self.live {
            *self = Frame {
                anchor: key,
                steps: 0,
                live: true,
            };
            return (F::zero(), F::one());
        }
        let decayed = self.anchor - F::from_usize(self.steps + 1).unwrap() * per_step;
        if key > decayed {
            let old = (decayed - key).exp();
            *self = Frame {
                anchor: key,
                steps: 0,
                live: true,
            };
            (old, F::one())
        } else {
            self.steps += 1;
            (F::one(), (key - decayed).exp())
        }
    }
}

/// Per-token state of one scan direction: frame exponent and scaled sums.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SideState<F> {
    pub m: F,
    pub num: F,
    pub den: F,
}

/// One direction of the decayed accumulation over a single channel.
///
/// `states[t]` summarises tokens strictly before `t` in scan order.
pub(crate) fn directional_scan<F: Real>(
    keys: &[F],
    values: &[F],
    per_step: F,
    reverse: bool,
    states: &mut [SideState<F>],
) {
    let n = keys.len();
    let mut frame = Frame::new();
    let (mut num, mut den) = (F::zero(), F::zero());
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        states[t] = SideState {
            m: frame.exponent(per_step),
            num,
            den,
        };
        let (old, new) = frame.push(keys[t], per_step);
        num = num * old + values[t] * new;
        den = den * old + new;
    }
}

#[inline]
pub(crate) fn combine<F: Real>(fwd: SideState<F>, bwd: SideState<F>, cur: F, v: F) -> (F, F, F) {
    let m = cur.max(fwd.m).max(bwd.m);
    let sf = (fwd.m - m).exp();
    let sb = (bwd.m - m).exp();
    let sc = (cur - m).exp();
    let num = fwd.num * sf + bwd.num * sb + v * sc;
    let den = fwd.den * sf + bwd.den * sb + sc;
    (num / den, m, den)
}

/// Linear-time bidirectional WKV.
pub fn biwkv_scan<F: Real>(
    k: &Tensor<F>,
    v: &Tensor<F>,
    p: &AttentionParams<F>,
) -> Result<Tensor<F>> {
    let (t_len, c) = check_kv(k, v, "biwkv_scan")?;
    check_params(p, c, "biwkv_scan")?;
    let tf = F::from_usize(t_len).unwrap();
    let empty = SideState {
        m: F::neg_infinity(),
        num: F::zero(),
        den: F::zero(),
    };
    let mut fwd = vec![empty; t_len];
    let mut bwd = vec![empty; t_len];
    let mut out = vec![F::zero(); t_len * c];
    let mut col = vec![F::zero(); t_len];
    for ch in 0..c {
        let kc = column(k, ch, c);
        let vc = column(v, ch, c);
        let per_step = p.decay[ch] / tf;
        directional_scan(&kc, &vc, per_step, false, &mut fwd);
        directional_scan(&kc, &vc, per_step, true, &mut bwd);
        for t in 0..t_len {
            col[t] = combine(fwd[t], bwd[t], p.bonus[ch] + kc[t], vc[t]).0;
        }
        set_column(&mut out, ch, c, &col);
    }
    Tensor::from_vec(&[t_len, c], out)
}
