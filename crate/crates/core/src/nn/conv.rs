use mutabnet_autodiff::Tensor;

use super::layers::LN_EPS;
use super::params::{ParamId, ParamInit, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kernels: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        init: &mut ParamInit<'_>,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let fan_in = (input * kernel * kernel) as f64;
        Conv2d {
            kernels: init.normal("kernels", &[output, input, kernel, kernel], (2.0 / fan_in).sqrt()),
            bias: bias.then(|| init.constant("bias", &[output], 0.0)),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let bias = self.bias.map(|b| p.get(b));
        Ok(x.conv2d(p.get(self.kernels), bias, self.stride, self.pad)?)
    }
}

/// `relu(shortcut(x) + conv(relu(conv(x))))`, with a strided 1x1 projection on
/// the shortcut whenever the shape changes.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub first: Conv2d,
    pub second: Conv2d,
    pub shortcut: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn new(init: &mut ParamInit<'_>, input: usize, output: usize, stride: usize) -> Self {
        let shortcut = (input != output || stride != 1)
            .then(|| Conv2d::new(&mut init.sub("shortcut"), input, output, 1, stride, false));
        ResidualBlock {
            first: Conv2d::new(&mut init.sub("conv1"), input, output, 3, stride, true),
            second: Conv2d::new(&mut init.sub("conv2"), output, output, 3, 1, true),
            shortcut,
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let h = self.first.forward(p, x)?.relu();
        let h = self.second.forward(p, &h)?;
        let skip = match &self.shortcut {
            Some(c) => c.forward(p, x)?,
            None => x.clone(),
        };
        Ok(h.add(&skip)?.relu())
    }
}

/// Global context attention over a `[C,H,W]` feature map.
///
/// A softmax over all pixels of `W1 x` weights the pixel features into one
/// context vector; `W3 relu(LN(W2 context))` is then added to every pixel.
#[derive(Debug, Clone)]
pub struct GcaBlock {
    pub channels: usize,
    pub bottleneck: usize,
    /// `[1, C]`
    pub attend: ParamId,
    /// `[B, C]`
    pub squeeze: ParamId,
    /// `[C, B]`
    pub expand: ParamId,
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
}

impl GcaBlock {
    pub fn new(init: &mut ParamInit<'_>, channels: usize, bottleneck: usize) -> Self {
        let c = channels as f64;
        GcaBlock {
            channels,
            bottleneck,
            attend: init.normal("attend", &[1, channels], (1.0 / c).sqrt()),
            squeeze: init.normal("squeeze", &[bottleneck, channels], (1.0 / c).sqrt()),
            expand: init.normal("expand", &[channels, bottleneck], (1.0 / bottleneck as f64).sqrt()),
            norm_gain: init.constant("norm_gain", &[bottleneck], 1.0),
            norm_bias: init.constant("norm_bias", &[bottleneck], 0.0),
        }
    }

    /// The term added to every pixel, shape `[C, 1]`.
    pub fn context_term(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || x.dim(0) != self.channels {
            return Err(Error::Config(format!(
                "GCA block expects [{}, H, W], got {:?}",
                self.channels,
                x.shape()
            )));
        }
        let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        let flat = x.reshape(&[c, h * w])?;
        let weights = p.get(self.attend).matmul(&flat)?.softmax(1)?;
        let context = flat.matmul(&weights.transpose()?)?;
        let squeezed = p.get(self.squeeze).matmul(&context)?.reshape(&[1, self.bottleneck])?;
        let normed = squeezed
            .layer_norm(p.get(self.norm_gain), p.get(self.norm_bias), LN_EPS)?
            .relu()
            .reshape(&[self.bottleneck, 1])?;
        Ok(p.get(self.expand).matmul(&normed)?)
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let term = self.context_term(p, x)?;
        let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        let y = x.reshape(&[c, h * w])?.add_col_broadcast(&term)?;
        Ok(y.reshape(&[c, h, w])?)
    }
}
