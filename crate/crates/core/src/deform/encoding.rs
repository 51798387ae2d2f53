use crate::real::Real;

/// Encoded length of a `dims`-dimensional input at `levels` frequencies.
pub const fn encoded_dim(dims: usize, levels: usize) -> usize {
    2 * dims * levels
}

/// `γ(p) = (sin(2^k π p), cos(2^k π p))_{k < levels}`, applied to every
/// component of `p`.
///
/// Layout is frequency-major: for each `k`, the sines of all components
/// followed by their cosines. `out.len()` must be `2 · p.len() · levels`.
pub fn positional_encoding<T: Real>(p: &[T], levels: usize, out: &mut [T]) {
    assert!(levels >= 1, "positional encoding needs at least one frequency");
    let d = p.len();
    assert_eq!(out.len(), encoded_dim(d, levels));
    let mut freq = T::pi();
    for k in 0..levels {
        let base = 2 * d * k;
        for (j, &v) in p.iter().enumerate() {
            let (s, c) = (freq * v).sin_cos();
            out[base + j] = s;
            out[base + d + j] = c;
        }
        freq *= T::lit(2.0);
    }
}

/// Element-wise `∂γ/∂p_j`, same layout as [`positional_encoding`]. Entry
/// `i` depends on exactly one component of `p`.
pub fn positional_encoding_derivative<T: Real>(p: &[T], levels: usize, out: &mut [T]) {
    let d = p.len();
    assert_eq!(out.len(), encoded_dim(d, levels));
    let mut freq = T::pi();
    for k in 0..levels {
        let base = 2 * d * k;
        for (j, &v) in p.iter().enumerate() {
            let (s, c) = (freq * v).sin_cos();
            out[base + j] = freq * c;
            out[base + d + j] = -freq * s;
        }
        freq *= T::lit(2.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(p: &[f64], l: usize) -> Vec<f64> {
        let mut out = vec![0.0; encoded_dim(p.len(), l)];
        positional_encoding(p, l, &mut out);
        out
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(enc(&[0.0], 4), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let e = enc(&[0.5], 1);
        assert!((e[0] - 1.0).abs() < 1e-15 && e[1].abs() < 1e-15);
        let e = enc(&[1.0], 2);
        let expect = [0.0, -1.0, 0.0, 1.0];
        for (a, b) in e.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn vector_layout_is_frequency_major() {
        let e = enc(&[0.1, 0.2, 0.3], 2);
        let pi = std::f64::consts::PI;
        assert!((e[1] - (pi * 0.2).sin()).abs() < 1e-15);
        assert!((e[3] - (pi * 0.1).cos()).abs() < 1e-15);
        assert!((e[8] - (2.0 * pi * 0.3).sin()).abs() < 1e-15);
        assert!((e[11] - (2.0 * pi * 0.3).cos()).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let p = [0.37];
        let mut d = vec![0.0; 12];
        positional_encoding_derivative(&p, 6, &mut d);
        let h = 1e-7;
        let (a, b) = (enc(&[p[0] + h], 6), enc(&[p[0] - h], 6));
        for i in 0..12 {
            let fd = (a[i] - b[i]) / (2.0 * h);
            assert!((fd - d[i]).abs() < 1e-5 * d[i].abs().max(1.0));
        }
    }
}
