use super::Volume3D;

/// Normalized 1D Gaussian taps over `[-radius, radius]`, `radius = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Mirror an out-of-range index back into `[0, n)` without repeating the edge
/// sample (`d c b | a b c d | c b a`).
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Separable 3D Gaussian smoothing with reflect padding. `sigma` is in voxels;
/// zero returns a copy of the input.
pub fn gaussian_smooth(vol: &Volume3D, sigma: f64) -> Volume3D {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be finite and non-negative");
    if sigma == 0.0 {
        return vol.clone();
    }
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as isize;
    let dims = vol.dims();
    let mut buf: Vec<f64> = vol.data().iter().map(|&v| v as f64).collect();
    let mut line = Vec::new();
    let strides = [1, dims.0, dims.0 * dims.1];
    let extents = [dims.0, dims.1, dims.2];
    for axis in 0..3 {
        let n = extents[axis];
        let stride = strides[axis];
        let (o1, o2) = match axis {
            0 => ((dims.1, dims.0), (dims.2, dims.0 * dims.1)),
            1 => ((dims.0, 1), (dims.2, dims.0 * dims.1)),
            _ => ((dims.0, 1), (dims.1, dims.0)),
        };
        for b in 0..o2.0 {
            for a in 0..o1.0 {
                let base = a * o1.1 + b * o2.1;
                line.clear();
                line.extend((0..n).map(|i| buf[base + i * stride]));
                for i in 0..n {
                    let mut acc = 0.0;
                    for (k, &t) in taps.iter().enumerate() {
                        let j = reflect_index(i as isize + k as isize - radius, n);
                        acc += t * line[j];
                    }
                    buf[base + i * stride] = acc;
                }
            }
        }
    }
    Volume3D::new(dims, buf.into_iter().map(|v| v as f32).collect())
        .expect("smoothing preserves shape and finiteness")
        .with_spacing(vol.spacing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Non-separable dense convolution with the outer-product kernel.
    fn dense_smooth(vol: &Volume3D, sigma: f64) -> Vec<f64> {
        let g = gaussian_kernel(sigma);
        let r = (g.len() / 2) as isize;
        let (nx, ny, nz) = vol.dims();
        let mut out = Vec::new();
        for z in 0..nz as isize {
            for y in 0..ny as isize {
                for x in 0..nx as isize {
                    let mut acc = 0.0;
                    for kz in -r..=r {
                        for ky in -r..=r {
                            for kx in -r..=r {
                                let w = g[(kx + r) as usize] * g[(ky + r) as usize] * g[(kz + r) as usize];
                                let sx = reflect_index(x + kx, nx);
                                let sy = reflect_index(y + ky, ny);
                                let sz = reflect_index(z + kz, nz);
                                acc += w * vol.get(sx, sy, sz) as f64;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn reflect_folds_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let v = Volume3D::from_fn((3, 4, 5), |x, y, z| (x * y + z) as f32);
        assert_eq!(gaussian_smooth(&v, 0.0), v);
    }

    #[test]
    fn constant_is_preserved() {
        let v = Volume3D::filled((5, 6, 7), 0.37);
        let s = gaussian_smooth(&v, 1.3);
        assert!(s.data().iter().all(|&x| (x - 0.37).abs() < 1e-6));
    }

    #[test]
    fn impulse_mass_is_one() {
        let mut v = Volume3D::zeros((9, 9, 9));
        v.set(4, 4, 4, 1.0);
        let s = gaussian_smooth(&v, 1.0);
        let mass: f64 = s.data().iter().map(|&x| x as f64).sum();
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }

    #[test]
    fn matches_dense_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Volume3D::from_fn((7, 7, 7), |_, _, _| rng.gen::<f32>());
        let fast = gaussian_smooth(&v, 1.0);
        let slow = dense_smooth(&v, 1.0);
        for (a, b) in fast.data().iter().zip(&slow) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    fn permute(v: &Volume3D) -> Volume3D {
        // (x, y, z) -> (y, z, x)
        let (nx, ny, nz) = v.dims();
        let dims: Dims = (ny, nz, nx);
        Volume3D::from_fn(dims, |a, b, c| v.get(c, a, b))
    }

    proptest! {
        #[test]
        fn commutes_with_axis_permutation(seed in any::<u64>(), nx in 2usize..7, ny in 2usize..7, nz in 2usize..7, sigma in 0.3f64..1.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = Volume3D::from_fn((nx, ny, nz), |_, _, _| rng.gen::<f32>());
            let a = permute(&gaussian_smooth(&v, sigma));
            let b = gaussian_smooth(&permute(&v), sigma);
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }

        #[test]
        fn interior_impulse_mass_preserved(seed in any::<u64>(), sigma in 0.2f64..1.3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = Volume3D::zeros((11, 11, 11));
            let amp = rng.gen_range(0.1f32..2.0);
            v.set(5, 5, 5, amp);
            let s = gaussian_smooth(&v, sigma);
            prop_assert!((s.mean() - v.mean()).abs() < 1e-5);
        }
    }
}
