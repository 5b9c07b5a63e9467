//! The GEMM convolution against a direct six-loop implementation.

use fitnets_core::ops::conv2d_forward;
use fitnets_core::ops::conv::{output_extent, padding_for};
use fitnets_core::Tensor;
use proptest::prelude::*;

/// out[b,o,y,x] = bias[o] + sum_{c,i,j} w[o,c,i,j] * in[b,c,y+i-p,x+j-p]
fn six_loop(input: &Tensor, w: &Tensor, bias: &Tensor, padded: bool) -> Vec<f64> {
    let [b, c, h, wd] = input.shape().try_into().unwrap();
    let [o, _, kh, kw] = w.shape().try_into().unwrap();
    let (ph, pw) = (padding_for(kh, padded) as isize, padding_for(kw, padded) as isize);
    let oh = h + 2 * ph as usize - kh + 1;
    let ow = wd + 2 * pw as usize - kw + 1;
    let x = input.data();
    let k = w.data();
    let mut out = vec![0.0; b * o * oh * ow];
    for n in 0..b {
        for m in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.data()[m];
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = y as isize + i as isize - ph;
                                let ix = xx as isize + j as isize - pw;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += k[((m * c + ch) * kh + i) * kw + j]
                                    * x[((n * c + ch) * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    out[((n * o + m) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Case {
    input: Tensor,
    weights: Tensor,
    bias: Tensor,
    padded: bool,
}

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0..2.0f64, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

fn case() -> impl Strategy<Value = Case> {
    (1..=3usize, 1..=4usize, 1..=9usize, 1..=9usize, 1..=4usize, any::<bool>())
        .prop_flat_map(|(b, c, h, w, o, padded)| {
            // Padded kernels may exceed the input as long as the padded span fits.
            let (mh, mw) = if padded { (5, 5) } else { (h.min(5), w.min(5)) };
            (1..=mh, 1..=mw)
                .prop_filter("kernel must fit", move |&(kh, kw)| {
                    output_extent(h, kh, padded).is_some() && output_extent(w, kw, padded).is_some()
                })
                .prop_flat_map(move |(kh, kw)| {
                (
                    tensor(vec![b, c, h, w]),
                    tensor(vec![o, c, kh, kw]),
                    tensor(vec![o]),
                    Just(padded),
                )
            })
        })
        .prop_map(|(input, weights, bias, padded)| Case { input, weights, bias, padded })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gemm_conv_matches_six_loops(c in case()) {
        let got = conv2d_forward(&c.input, &c.weights, &c.bias, c.padded).unwrap();
        let want = six_loop(&c.input, &c.weights, &c.bias, c.padded);
        prop_assert_eq!(got.data().len(), want.len());
        for (g, w) in got.data().iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-12, "{} vs {}", g, w);
        }
    }
}

#[test]
fn padded_even_kernel_shrinks_by_one() {
    // A padded even kernel pads (k-1)/2 per side and shrinks the output by one.
    let input = Tensor::full(&[1, 1, 4, 4], 1.0).unwrap();
    let w = Tensor::full(&[1, 1, 2, 2], 1.0).unwrap();
    let b = Tensor::zeros(&[1]).unwrap();
    let out = conv2d_forward(&input, &w, &b, true).unwrap();
    assert_eq!(out.shape(), &[1, 1, 3, 3]);
    assert_eq!(out.data(), six_loop(&input, &w, &b, true).as_slice());
}
