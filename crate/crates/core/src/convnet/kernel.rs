//! Multi-channel 2D convolutions on lattice images.
//!
//! Images are channels-first `(c, n, n)` arrays with zero padding. A tap at
//! kernel position `d` reads the input at `i + d - origin` (cross-correlation).

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvMode {
    /// Same-size output.
    Plain,
    /// Output on every other node: `out[c] = sum W[d] in[2c + d - origin]`.
    Strided2,
    /// Zero-dilated adjoint of [`ConvMode::Strided2`]: `out[2c + d - origin] += W[d] in[c]`.
    Transpose2,
    /// Plain convolution evaluated only where the mask is set.
    Submanifold,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    /// `(out, in, height, width)`.
    pub weights: Array4<f64>,
    pub bias: Option<Vec<f64>>,
    pub mode: ConvMode,
    pub origin: (usize, usize),
}

impl ConvKernel {
    pub fn new(weights: Array4<f64>, mode: ConvMode, origin: (usize, usize)) -> Self {
        Self { weights, bias: None, mode, origin }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }

    /// Weights plus biases.
    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// The same weights in another mode.
    pub fn with_mode(&self, mode: ConvMode) -> Self {
        Self { mode, ..self.clone() }
    }

    /// Identity `1x1` kernel on `channels` channels.
    pub fn identity(channels: usize) -> Self {
        let mut w = Array4::zeros((channels, channels, 1, 1));
        for c in 0..channels {
            w[[c, c, 0, 0]] = 1.0;
        }
        Self::new(w, ConvMode::Plain, (0, 0))
    }
}

fn output_size(kernel: &ConvKernel, n: usize) -> Result<usize> {
    match kernel.mode {
        ConvMode::Plain | ConvMode::Submanifold => Ok(n),
        ConvMode::Strided2 => {
            if n % 2 == 0 || n < 3 {
                return Err(Error::Shape(format!("strided convolution needs an odd refined size, got {n}")));
            }
            Ok((n + 1) / 2)
        }
        ConvMode::Transpose2 => Ok(2 * n - 1),
    }
}

/// Applies `kernel` to `input`. `mask` restricts the output support; it is
/// required for submanifold mode and optional (a final multiplication) for
/// the others.
pub fn conv_apply(kernel: &ConvKernel, input: &Array3<f64>, mask: Option<&Mask>) -> Result<Array3<f64>> {
    let (cin, n, n2) = input.dim();
    if n != n2 {
        return Err(Error::Shape(format!("images must be square, got {n}x{n2}")));
    }
    if cin != kernel.in_channels() {
        return Err(Error::Shape(format!("kernel expects {} channels, input has {cin}", kernel.in_channels())));
    }
    let (kh, kw) = kernel.size();
    if kernel.origin.0 >= kh.max(1) || kernel.origin.1 >= kw.max(1) {
        return Err(Error::Shape(format!("origin {:?} outside a {kh}x{kw} kernel", kernel.origin)));
    }
    let nout = output_size(kernel, n)?;
    if let Some(m) = mask {
        if m.dim() != (nout, nout) {
            return Err(Error::Shape(format!("mask {:?} does not match output size {nout}", m.dim())));
        }
    } else if kernel.mode == ConvMode::Submanifold {
        return Err(Error::Shape("submanifold convolution requires a mask".into()));
    }
    let cout = kernel.out_channels();
    let w = &kernel.weights;
    let (oa, ob) = (kernel.origin.0 as isize, kernel.origin.1 as isize);
    let mut out = Array3::zeros((cout, nout, nout));
    match kernel.mode {
        ConvMode::Plain | ConvMode::Submanifold | ConvMode::Strided2 => {
            let stride = if kernel.mode == ConvMode::Strided2 { 2 } else { 1 };
            for a in 0..nout {
                for b in 0..nout {
                    if mask.is_some_and(|m| !m[[a, b]]) {
                        continue;
                    }
                    for o in 0..cout {
                        let mut acc = 0.0;
                        for c in 0..cin {
                            for da in 0..kh {
                                let x = (stride * a) as isize + da as isize - oa;
                                if x < 0 || x >= n as isize {
                                    continue;
                                }
                                for db in 0..kw {
                                    let y = (stride * b) as isize + db as isize - ob;
                                    if y < 0 || y >= n as isize {
                                        continue;
                                    }
                                    acc += w[[o, c, da, db]] * input[[c, x as usize, y as usize]];
                                }
                            }
                        }
                        out[[o, a, b]] = acc;
                    }
                }
            }
        }
        ConvMode::Transpose2 => {
            for c in 0..cin {
                for a in 0..n {
                    for b in 0..n {
                        let v = input[[c, a, b]];
                        if v == 0.0 {
                            continue;
                        }
                        for da in 0..kh {
                            let x = (2 * a) as isize + da as isize - oa;
                            if x < 0 || x >= nout as isize {
                                continue;
                            }
                            for db in 0..kw {
                                let y = (2 * b) as isize + db as isize - ob;
                                if y < 0 || y >= nout as isize {
                                    continue;
                                }
                                for o in 0..cout {
                                    out[[o, x as usize, y as usize]] += w[[o, c, da, db]] * v;
                                }
                            }
                        }
                    }
                }
            }
            if let Some(m) = mask {
                zero_outside(&mut out, m);
            }
        }
    }
    if let Some(bias) = &kernel.bias {
        for (o, &bo) in bias.iter().enumerate() {
            for a in 0..nout {
                for b in 0..nout {
                    if mask.map_or(true, |m| m[[a, b]]) {
                        out[[o, a, b]] += bo;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Zeroes every channel where `mask` is unset.
pub fn zero_outside(img: &mut Array3<f64>, mask: &Mask) {
    for mut ch in img.outer_iter_mut() {
        ch.zip_mut_with(mask, |v, &on| {
            if !on {
                *v = 0.0
            }
        });
    }
}

/// `1` where `x > 0`, else `0`.
pub fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn random_kernel(rng: &mut ChaCha8Rng, o: usize, i: usize, s: usize, mode: ConvMode) -> ConvKernel {
        ConvKernel::new(Array4::from_shape_fn((o, i, s, s), |_| rng.gen_range(-1.0..1.0)), mode, (s / 2, s / 2))
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, (3, 6, 6));
        assert_eq!(conv_apply(&ConvKernel::identity(3), &x, None).unwrap(), x);
    }

    #[test]
    fn strided_and_transpose_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let k = random_kernel(&mut rng, 2, 3, 3, ConvMode::Strided2);
            let v = random(&mut rng, (3, 9, 9));
            let w = random(&mut rng, (2, 5, 5));
            let kv = conv_apply(&k, &v, None).unwrap();
            // transpose kernel maps 2 -> 3 channels with swapped weights
            let kt = ConvKernel::new(
                k.weights.clone().permuted_axes([1, 0, 2, 3]).to_owned(),
                ConvMode::Transpose2,
                k.origin,
            );
            let ktw = conv_apply(&kt, &w, None).unwrap();
            let lhs = (&kv * &w).sum();
            let rhs = (&v * &ktw).sum();
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0), "{lhs} {rhs}");
        }
    }

    #[test]
    fn submanifold_matches_plain_on_checkerboard() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = random_kernel(&mut rng, 2, 2, 3, ConvMode::Plain);
        let x = random(&mut rng, (2, 7, 7));
        let mask = Mask::from_shape_fn((7, 7), |(a, b)| (a + b) % 2 == 0);
        let plain = conv_apply(&k, &x, None).unwrap();
        let sub = conv_apply(&k.with_mode(ConvMode::Submanifold), &x, Some(&mask)).unwrap();
        // direct loop oracle
        for o in 0..2 {
            for a in 0..7 {
                for b in 0..7 {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for da in 0..3isize {
                            for db in 0..3isize {
                                let (x0, y0) = (a as isize + da - 1, b as isize + db - 1);
                                if (0..7).contains(&x0) && (0..7).contains(&y0) {
                                    acc +=
                                        k.weights[[o, c, da as usize, db as usize]] * x[[c, x0 as usize, y0 as usize]];
                                }
                            }
                        }
                    }
                    assert!((plain[[o, a, b]] - acc).abs() < 1e-14);
                    if mask[[a, b]] {
                        assert_eq!(sub[[o, a, b]], plain[[o, a, b]]);
                    } else {
                        assert_eq!(sub[[o, a, b]], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn submanifold_requires_mask_and_shapes_are_checked() {
        let k = ConvKernel::identity(1).with_mode(ConvMode::Submanifold);
        let x = Array3::zeros((1, 5, 5));
        assert!(conv_apply(&k, &x, None).is_err());
        assert!(conv_apply(&ConvKernel::identity(2), &x, None).is_err());
        assert!(conv_apply(&ConvKernel::identity(1).with_mode(ConvMode::Strided2), &Array3::zeros((1, 4, 4)), None)
            .is_err());
    }
}
