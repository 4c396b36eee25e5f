//! Axis contractions of dense row-major tensors.

/// Contract axis `axis` of `data` (shape `shape`) with `table`, an `m x n`
/// row-major matrix where `n = shape[axis]`. Returns the new tensor whose
/// `axis` has length `m`.
pub(crate) fn contract(data: &[f64], shape: &[usize], axis: usize, table: &[f64], m: usize) -> Vec<f64> {
    let n = shape[axis];
    debug_assert_eq!(table.len(), m * n);
    let pre: usize = shape[..axis].iter().product();
    let post: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; pre * m * post];
    if n == 0 || m == 0 || post == 0 {
        return out;
    }
    for p in 0..pre {
        let src = &data[p * n * post..(p + 1) * n * post];
        let dst = &mut out[p * m * post..(p + 1) * m * post];
        // SAFETY: src is n x post, table is m x n, dst is m x post, all row-major.
        unsafe {
            matrixmultiply::dgemm(
                m,
                n,
                post,
                1.0,
                table.as_ptr(),
                n as isize,
                1,
                src.as_ptr(),
                post as isize,
                1,
                0.0,
                dst.as_mut_ptr(),
                post as isize,
                1,
            );
        }
    }
    out
}

/// Complex contraction: (re + i im) contracted with (tre + i tim).
pub(crate) fn contract_complex(
    re: &[f64],
    im: &[f64],
    shape: &[usize],
    axis: usize,
    tre: &[f64],
    tim: &[f64],
    m: usize,
) -> (Vec<f64>, Vec<f64>) {
    let rr = contract(re, shape, axis, tre, m);
    let ii = contract(im, shape, axis, tim, m);
    let ri = contract(re, shape, axis, tim, m);
    let ir = contract(im, shape, axis, tre, m);
    let out_re = rr.iter().zip(&ii).map(|(a, b)| a - b).collect();
    let out_im = ri.iter().zip(&ir).map(|(a, b)| a + b).collect();
    (out_re, out_im)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contract_matches_naive_loops() {
        let shape = [2, 3, 4];
        let data: Vec<f64> = (0..24).map(|v| v as f64 * 0.5 - 3.0).collect();
        let m = 5;
        let table: Vec<f64> = (0..m * 3).map(|v| (v as f64).sin()).collect();
        let out = contract(&data, &shape, 1, &table, m);
        for a in 0..2 {
            for j in 0..m {
                for c in 0..4 {
                    let want: f64 = (0..3).map(|b| table[j * 3 + b] * data[a * 12 + b * 4 + c]).sum();
                    assert!((out[a * m * 4 + j * 4 + c] - want).abs() < 1e-12);
                }
            }
        }
    }
}
