use super::{check_kv, check_params, column, combine, directional_scan, set_column};
use super::{AttentionParams, Frame, SideState};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Gradients of `Σ grad_out ⊙ wkv`.
#[derive(Clone, Debug)]
pub struct WkvGrads<F = f32> {
    pub keys: Tensor<F>,
    pub values: Tensor<F>,
    pub decay: Vec<F>,
    pub bonus: Vec<F>,
}

/// Directional state that additionally carries distance-weighted sums
/// `Σ (dist) · e^{k_i - dist·w/T} (v_i, 1)` in the same frame.
#[derive(Clone, Copy, Debug)]
struct DistState<F> {
    side: SideState<F>,
    gnum: F,
    gden: F,
}

fn distance_scan<F: Real>(
    keys: &[F],
    values: &[F],
    per_step: F,
    reverse: bool,
    states: &mut [DistState<F>],
) {
    let n = keys.len();
    let mut frame = Frame::new();
    let (mut num, mut den, mut gnum, mut gden) = (F::zero(), F::zero(), F::zero(), F::zero());
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        states[t] = DistState {
            side: SideState {
                m: frame.exponent(per_step),
                num,
                den,
            },
            gnum,
            gden,
        };
        let (old, new) = frame.push(keys[t], per_step);
        // Every accumulated term moves one step further away; the new term sits at distance 0.
        gnum = (gnum + num) * old;
        gden = (gden + den) * old;
        num = num * old + values[t] * new;
        den = den * old + new;
    }
}

/// Analytic backward pass of [`super::biwkv_scan`], linear in `T`.
pub fn biwkv_backward<F: Real>(
    k: &Tensor<F>,
    v: &Tensor<F>,
    p: &AttentionParams<F>,
    grad_out: &Tensor<F>,
) -> Result<WkvGrads<F>> {
    let (t_len, c) = check_kv(k, v, "biwkv_backward")?;
    check_params(p, c, "biwkv_backward")?;
    check_kv(k, grad_out, "biwkv_backward")?;

    let tf = F::from_usize(t_len).unwrap();
    let empty_side = SideState {
        m: F::neg_infinity(),
        num: F::zero(),
        den: F::zero(),
    };
    let empty = DistState {
        side: empty_side,
        gnum: F::zero(),
        gden: F::zero(),
    };
    let mut fwd = vec![empty; t_len];
    let mut bwd = vec![empty; t_len];
    let mut tf_q = vec![empty_side; t_len];
    let mut tb_q = vec![empty_side; t_len];
    let mut tf_qy = vec![empty_side; t_len];
    let mut tb_qy = vec![empty_side; t_len];

    let mut dk = vec![F::zero(); t_len * c];
    let mut dv = vec![F::zero(); t_len * c];
    let mut dw = vec![F::zero(); c];
    let mut du = vec![F::zero(); c];

    let mut y = vec![F::zero(); t_len];
    let mut row_max = vec![F::zero(); t_len];
    let mut q = vec![F::zero(); t_len];
    let mut qy = vec![F::zero(); t_len];
    let mut neg_max = vec![F::zero(); t_len];
    let mut dk_col = vec![F::zero(); t_len];
    let mut dv_col = vec![F::zero(); t_len];

    for ch in 0..c {
        let kc = column(k, ch, c);
        let vc = column(v, ch, c);
        let gc = column(grad_out, ch, c);
        let per_step = p.decay[ch] / tf;
        let bonus = p.bonus[ch];

        distance_scan(&kc, &vc, per_step, false, &mut fwd);
        distance_scan(&kc, &vc, per_step, true, &mut bwd);

        let (mut dw_c, mut du_c) = (F::zero(), F::zero());
        for t in 0..t_len {
            let (yt, m, den) = combine(fwd[t].side, bwd[t].side, bonus + kc[t], vc[t]);
            // q_t = g_t / D_t = q̃_t e^{-m}
            let qt = gc[t] / den;
            y[t] = yt;
            row_max[t] = m;
            q[t] = qt;
            qy[t] = qt * yt;
            neg_max[t] = -m;

            du_c = du_c + qt * (bonus + kc[t] - m).exp() * (vc[t] - yt);
            let (f, b) = (fwd[t], bwd[t]);
            let dist = (f.side.m - m).exp() * (f.gnum - yt * f.gden)
                + (b.side.m - m).exp() * (b.gnum - yt * b.gden);
            dw_c = dw_c - qt * dist;
        }
        dw[ch] = dw_c / tf;
        du[ch] = du_c;

        // Σ_{t≠i} q_t e^{-(|t-i|-1)·w/T}, shifted by each row's own maximum.
        directional_scan(&neg_max, &q, per_step, false, &mut tf_q);
        directional_scan(&neg_max, &q, per_step, true, &mut tb_q);
        directional_scan(&neg_max, &qy, per_step, false, &mut tf_qy);
        directional_scan(&neg_max, &qy, per_step, true, &mut tb_qy);

        for i in 0..t_len {
            let own = (bonus + kc[i] - row_max[i]).exp();
            let ef = (kc[i] + tf_q[i].m).exp();
            let eb = (kc[i] + tb_q[i].m).exp();
            let through_v = q[i] * own + ef * tf_q[i].num + eb * tb_q[i].num;
            let through_y = qy[i] * own + ef * tf_qy[i].num + eb * tb_qy[i].num;
            dv_col[i] = through_v;
            dk_col[i] = vc[i] * through_v - through_y;
        }
        set_column(&mut dk, ch, c, &dk_col);
        set_column(&mut dv, ch, c, &dv_col);
    }

    Ok(WkvGrads {
        keys: Tensor::from_vec(&[t_len, c], dk)?,
        values: Tensor::from_vec(&[t_len, c], dv)?,
        decay: dw,
        bonus: du,
    })
}

#[cfg(test)]
mod tests {
    use super::super::biwkv_reference;
    use super::*;

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let k = Tensor::<f64>::from_fn(&[6, 2], |i| (i as f64).sin());
        let v = Tensor::<f64>::from_fn(&[6, 2], |i| (i as f64).cos());
        let p = AttentionParams::new(vec![0.3, -1.0], vec![0.5, 0.0]).unwrap();
        let g = biwkv_backward(&k, &v, &p, &Tensor::zeros(&[6, 2])).unwrap();
        assert!(g.keys.data().iter().chain(g.values.data()).all(|&x| x == 0.0));
        assert!(g.decay.iter().chain(&g.bonus).all(|&x| x == 0.0));
    }

    #[test]
    fn single_token() {
        let k = Tensor::<f64>::from_vec(&[1, 2], vec![0.7, -3.0]).unwrap();
        let v = Tensor::<f64>::from_vec(&[1, 2], vec![2.0, -1.0]).unwrap();
        let g_out = Tensor::<f64>::from_vec(&[1, 2], vec![1.5, -0.25]).unwrap();
        let p = AttentionParams::new(vec![1.0, 2.0], vec![-1.0, 4.0]).unwrap();
        let g = biwkv_backward(&k, &v, &p, &g_out).unwrap();
        assert_eq!(g.values.data(), g_out.data());
        assert!(g.keys.data().iter().all(|&x| x.abs() < 1e-15));
        assert!(g.decay.iter().chain(&g.bonus).all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn matches_central_differences() {
        let (t, c) = (7, 3);
        let k = Tensor::<f64>::from_fn(&[t, c], |i| ((i * 7 + 3) % 11) as f64 * 0.3 - 1.5);
        let v = Tensor::<f64>::from_fn(&[t, c], |i| ((i * 5 + 1) % 13) as f64 * 0.2 - 1.2);
        let g_out = Tensor::<f64>::from_fn(&[t, c], |i| ((i * 3) % 7) as f64 * 0.4 - 1.0);
        let p = AttentionParams::new(vec![1.3, -0.7, 4.0], vec![0.2, -0.9, 1.1]).unwrap();
        let loss = |k: &Tensor<f64>, v: &Tensor<f64>, p: &AttentionParams<f64>| -> f64 {
            let y = biwkv_reference(k, v, p).unwrap();
            y.data().iter().zip(g_out.data()).map(|(a, b)| a * b).sum()
        };
        let g = biwkv_backward(&k, &v, &p, &g_out).unwrap();
        let h = 1e-5;
        for idx in 0..t * c {
            let mut kp = k.clone();
            let mut km = k.clone();
            kp.data_mut()[idx] += h;
            km.data_mut()[idx] -= h;
            let fd = (loss(&kp, &v, &p) - loss(&km, &v, &p)) / (2.0 * h);
            assert!((fd - g.keys.data()[idx]).abs() < 1e-8, "dk[{idx}]");
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp.data_mut()[idx] += h;
            vm.data_mut()[idx] -= h;
            let fd = (loss(&k, &vp, &p) - loss(&k, &vm, &p)) / (2.0 * h);
            assert!((fd - g.values.data()[idx]).abs() < 1e-8, "dv[{idx}]");
        }
        for ch in 0..c {
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp.decay[ch] += h;
            pm.decay[ch] -= h;
            let fd = (loss(&k, &v, &pp) - loss(&k, &v, &pm)) / (2.0 * h);
            assert!((fd - g.decay[ch]).abs() < 1e-8, "dw[{ch}] {fd} vs {}", g.decay[ch]);
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp.bonus[ch] += h;
            pm.bonus[ch] -= h;
            let fd = (loss(&k, &v, &pp) - loss(&k, &v, &pm)) / (2.0 * h);
            assert!((fd - g.bonus[ch]).abs() < 1e-8, "du[{ch}]");
        }
    }
}
