//! In-place iterative radix-2 FFT.

use std::f64::consts::PI;

/// Forward transform of `re + i·im`. Length must be a power of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert_eq!(n, im.len());
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = -2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (s, c) = (step * k as f64).sin_cos();
                let a = start + k;
                let b = a + half;
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// |X_k|² for k = 0..=n/2 of the zero-padded real frame.
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    let mut re = vec![0.0; n_fft];
    let mut im = vec![0.0; n_fft];
    re[..frame.len()].copy_from_slice(frame);
    fft_in_place(&mut re, &mut im);
    (0..=n_fft / 2).map(|k| re[k] * re[k] + im[k] * im[k]).collect()
}
