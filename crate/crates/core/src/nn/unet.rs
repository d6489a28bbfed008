use super::{Layer, Mode, NnError, Param, Real, Sequential, Tensor};
use std::ops::Range;

/// Encoder/decoder with skip connections.
///
/// The output of encoder block `i` is concatenated (after the running
/// decoder activation) onto the input of decoder block `depth - 1 - i`. All
/// layers live in one flat [`Sequential`] so checkpoints see a plain chain.
pub struct UNet<T: Real> {
    net: Sequential<T>,
    /// Encoder blocks, then the middle block, then decoder blocks.
    blocks: Vec<Range<usize>>,
    depth: usize,
    /// Channels of the decoder activation at each concatenation.
    splits: Vec<usize>,
}

fn run<T: Real>(net: &mut Sequential<T>, r: &Range<usize>, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
    net.layers_mut()[r.clone()].iter_mut().try_fold(x, |h, l| l.forward(&h, mode))
}

fn run_infer<T: Real>(net: &Sequential<T>, r: &Range<usize>, x: Tensor<T>) -> Result<Tensor<T>, NnError> {
    net.layers()[r.clone()].iter().try_fold(x, |h, l| l.infer(&h))
}

fn run_back<T: Real>(net: &mut Sequential<T>, r: &Range<usize>, g: Tensor<T>) -> Result<Tensor<T>, NnError> {
    net.layers_mut()[r.clone()].iter_mut().rev().try_fold(g, |g, l| l.backward(&g))
}

impl<T: Real> UNet<T> {
    /// `encoder` and `decoder` must have the same length; decoder block `j`
    /// sees the channels of its predecessor plus those of the matching
    /// encoder output.
    pub fn new(encoder: Vec<Sequential<T>>, middle: Sequential<T>, decoder: Vec<Sequential<T>>) -> Self {
        assert_eq!(encoder.len(), decoder.len(), "encoder and decoder depth differ");
        let depth = encoder.len();
        let mut net = Sequential::new();
        let mut blocks = Vec::with_capacity(2 * depth + 1);
        for block in encoder.into_iter().chain(std::iter::once(middle)).chain(decoder) {
            let start = net.len();
            for layer in block.into_layers() {
                net.push_boxed(layer);
            }
            blocks.push(start..net.len());
        }
        UNet { net, blocks, depth, splits: Vec::new() }
    }

    pub fn as_sequential(&self) -> &Sequential<T> {
        &self.net
    }

    pub fn as_sequential_mut(&mut self) -> &mut Sequential<T> {
        &mut self.net
    }

    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }

    pub fn zero_grad(&mut self) {
        self.net.zero_grad();
    }
}

impl<T: Real> Layer<T> for UNet<T> {
    fn kind(&self) -> String {
        format!("unet{}", self.depth)
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let d = self.depth;
        let mut skips = Vec::with_capacity(d);
        let mut h = x.clone();
        for b in 0..d {
            h = run(&mut self.net, &self.blocks[b], h, mode)?;
            skips.push(h.clone());
        }
        h = run(&mut self.net, &self.blocks[d], h, mode)?;
        self.splits.clear();
        for j in 0..d {
            self.splits.push(h.shape()[1]);
            h = Tensor::concat_channels(&h, &skips[d - 1 - j])?;
            h = run(&mut self.net, &self.blocks[d + 1 + j], h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let d = self.depth;
        if self.splits.len() != d {
            return Err(NnError::NoForwardCache("unet"));
        }
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; d];
        let mut g = grad.clone();
        for j in (0..d).rev() {
            g = run_back(&mut self.net, &self.blocks[d + 1 + j], g)?;
            let (main, skip) = g.split_channels(self.splits[j])?;
            skip_grads[d - 1 - j] = Some(skip);
            g = main;
        }
        g = run_back(&mut self.net, &self.blocks[d], g)?;
        for b in (0..d).rev() {
            g.add_assign(skip_grads[b].as_ref().expect("filled above"))?;
            g = run_back(&mut self.net, &self.blocks[b], g)?;
        }
        Ok(g)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let d = self.depth;
        let mut skips = Vec::with_capacity(d);
        let mut h = x.clone();
        for b in 0..d {
            h = run_infer(&self.net, &self.blocks[b], h)?;
            skips.push(h.clone());
        }
        h = run_infer(&self.net, &self.blocks[d], h)?;
        for j in 0..d {
            h = Tensor::concat_channels(&h, &skips[d - 1 - j])?;
            h = run_infer(&self.net, &self.blocks[d + 1 + j], h)?;
        }
        Ok(h)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.net.params_mut()
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        self.net.buffers()
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        self.net.buffers_mut()
    }
}
