use super::Real;

/// `out[m][n] = sum_k a[m][k] * b[k][n]` for row-major `a (M x K)`, `b (K x N)`,
/// `out (M x N)`. `out` is overwritten.
///
/// Every output element accumulates over `k` in ascending order from zero,
/// independent of the blocking below.
pub(crate) fn gemm<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|v| *v = F::zero());
    if n == 0 {
        return;
    }
    let mut rows = out.chunks_exact_mut(n);
    let mut row = 0;
    while row + 4 <= m {
        let (o0, o1, o2, o3) = (
            rows.next().unwrap(),
            rows.next().unwrap(),
            rows.next().unwrap(),
            rows.next().unwrap(),
        );
        let a0 = &a[row * k..(row + 1) * k];
        let a1 = &a[(row + 1) * k..(row + 2) * k];
        let a2 = &a[(row + 2) * k..(row + 3) * k];
        let a3 = &a[(row + 3) * k..(row + 4) * k];
        for j in 0..k {
            let bj = &b[j * n..(j + 1) * n];
            let (c0, c1, c2, c3) = (a0[j], a1[j], a2[j], a3[j]);
            for ((((x, y0), y1), y2), y3) in bj
                .iter()
                .zip(o0.iter_mut())
                .zip(o1.iter_mut())
                .zip(o2.iter_mut())
                .zip(o3.iter_mut())
            {
                *y0 = *y0 + c0 * *x;
                *y1 = *y1 + c1 * *x;
                *y2 = *y2 + c2 * *x;
                *y3 = *y3 + c3 * *x;
            }
        }
        row += 4;
    }
    for o in rows {
        let ar = &a[row * k..(row + 1) * k];
        for j in 0..k {
            let c = ar[j];
            for (y, x) in o.iter_mut().zip(&b[j * n..(j + 1) * n]) {
                *y = *y + c * *x;
            }
        }
        row += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_triple_loop() {
        let (m, k, n) = (7, 5, 9);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut out = vec![0.0; m * n];
        gemm(&a, &b, &mut out, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    s += a[i * k + l] * b[l * n + j];
                }
                assert_eq!(out[i * n + j], s);
            }
        }
    }
}
