use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

/// Serializable description of one layer, recorded in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Channels-last `height x width x in_channels` input, square kernel.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Activation {
        function: Activation,
        width: usize,
    },
}

impl LayerSpec {
    pub fn input_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                in_channels,
                height,
                width,
                ..
            } => in_channels * height * width,
            LayerSpec::Activation { width, .. } => width,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv2d { out_channels, .. } => {
                let (ho, wo) = self.conv_output_hw().expect("conv spec");
                ho * wo * out_channels
            }
            LayerSpec::Activation { width, .. } => width,
        }
    }

    fn conv_output_hw(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                height,
                width,
                kernel,
                stride,
                padding,
                ..
            } => {
                let h = height + 2 * padding;
                let w = width + 2 * padding;
                if kernel == 0 || stride == 0 || h < kernel || w < kernel {
                    return None;
                }
                Some(((h - kernel) / stride + 1, (w - kernel) / stride + 1))
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let ok = match *self {
            LayerSpec::Dense { outputs, .. } => outputs > 0,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                ..
            } => in_channels > 0 && out_channels > 0 && self.conv_output_hw().is_some(),
            LayerSpec::Activation { width, .. } => width > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(NnError::Spec(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `inputs x outputs`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform `+-gain * sqrt(6 / (fan_in + fan_out))` weights, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain * (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((inputs, outputs), |_| T::cast(rng.random_range(-bound..=bound))),
            bias: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        x.dot(&self.weight) + &self.bias
    }

    fn backward(&self, input: &Array2<T>, grad_out: &Array2<T>, gw: &mut [T], gb: &mut [T]) -> Array2<T> {
        let dw = input.t().dot(grad_out);
        for (g, d) in gw.iter_mut().zip(dw.iter()) {
            *g += *d;
        }
        for (g, d) in gb.iter_mut().zip(grad_out.sum_axis(Axis(0)).iter()) {
            *g += *d;
        }
        grad_out.dot(&self.weight.t())
    }
}

/// 2-D convolution over channels-last images, lowered to a matrix product (im2col).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(kernel * kernel * in_channels) x out_channels`, rows ordered `(ky, kx, channel)`.
    pub kernel: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn from_spec<R: Rng + ?Sized>(spec: LayerSpec, gain: f64, rng: &mut R) -> Result<Self, NnError> {
        spec.validate()?;
        let LayerSpec::Conv2d {
            in_channels,
            out_channels,
            height,
            width,
            kernel,
            stride,
            padding,
        } = spec
        else {
            return Err(NnError::Spec("expected a conv2d spec".into()));
        };
        let fan_in = kernel * kernel * in_channels;
        let fan_out = kernel * kernel * out_channels;
        let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        Ok(Self {
            in_channels,
            out_channels,
            height,
            width,
            kernel_size: kernel,
            stride,
            padding,
            kernel: Array2::from_shape_fn((fan_in, out_channels), |_| T::cast(rng.random_range(-bound..=bound))),
            bias: Array1::zeros(out_channels),
        })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Conv2d {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            height: self.height,
            width: self.width,
            kernel: self.kernel_size,
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn output_hw(&self) -> (usize, usize) {
        self.spec().conv_output_hw().expect("validated at construction")
    }

    /// Lowers a batch to a `(batch * out_h * out_w) x (k * k * in_channels)` patch matrix.
    fn im2col(&self, x: ArrayView2<T>) -> Array2<T> {
        let (ho, wo) = self.output_hw();
        let (k, c, s, p) = (self.kernel_size, self.in_channels, self.stride, self.padding);
        let batch = x.nrows();
        let mut cols = Array2::zeros((batch * ho * wo, k * k * c));
        for (b, sample) in x.outer_iter().enumerate() {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut row = cols.row_mut((b * ho + oy) * wo + ox);
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            let src = (iy as usize * self.width + ix as usize) * c;
                            let dst = (ky * k + kx) * c;
                            for ch in 0..c {
                                row[dst + ch] = sample[src + ch];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<T>, batch: usize) -> Array2<T> {
        let (ho, wo) = self.output_hw();
        let (k, c, s, p) = (self.kernel_size, self.in_channels, self.stride, self.padding);
        let mut dx = Array2::zeros((batch, self.height * self.width * c));
        for b in 0..batch {
            let mut sample = dx.row_mut(b);
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = dcols.row((b * ho + oy) * wo + ox);
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            let dst = (iy as usize * self.width + ix as usize) * c;
                            let src = (ky * k + kx) * c;
                            for ch in 0..c {
                                sample[dst + ch] += row[src + ch];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn forward_cols(&self, cols: &Array2<T>, batch: usize) -> Array2<T> {
        let out = cols.dot(&self.kernel) + &self.bias;
        let per_sample = out.len() / batch.max(1);
        out.into_shape_with_order((batch, per_sample)).expect("contiguous conv output")
    }

    fn backward(&self, cols: &Array2<T>, grad_out: &Array2<T>, gk: &mut [T], gb: &mut [T]) -> Array2<T> {
        let batch = grad_out.nrows();
        let g = grad_out
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((cols.nrows(), self.out_channels))
            .expect("conv grad reshape");
        let dk = cols.t().dot(&g);
        for (acc, d) in gk.iter_mut().zip(dk.iter()) {
            *acc += *d;
        }
        for (acc, d) in gb.iter_mut().zip(g.sum_axis(Axis(0)).iter()) {
            *acc += *d;
        }
        let dcols = g.dot(&self.kernel.t());
        self.col2im(&dcols, batch)
    }
}

/// A layer plus whatever it needs to run.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    Activation { function: Activation, width: usize },
}

/// Saved forward-pass quantities needed by backward.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache<T> {
    Input(Array2<T>),
    Cols(Array2<T>),
    Output(Array2<T>),
    None,
}

impl<T: Real> Layer<T> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.weight.nrows(),
                outputs: d.weight.ncols(),
            },
            Layer::Conv2d(c) => c.spec(),
            Layer::Activation { function, width } => LayerSpec::Activation {
                function: *function,
                width: *width,
            },
        }
    }

    pub fn n_blocks(&self) -> usize {
        match self {
            Layer::Dense(_) | Layer::Conv2d(_) => 2,
            Layer::Activation { .. } => 0,
        }
    }

    pub(crate) fn blocks(&self) -> Vec<&[T]> {
        match self {
            Layer::Dense(d) => vec![d.weight.as_slice().unwrap(), d.bias.as_slice().unwrap()],
            Layer::Conv2d(c) => vec![c.kernel.as_slice().unwrap(), c.bias.as_slice().unwrap()],
            Layer::Activation { .. } => vec![],
        }
    }

    pub(crate) fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Layer::Dense(d) => vec![d.weight.as_slice_mut().unwrap(), d.bias.as_slice_mut().unwrap()],
            Layer::Conv2d(c) => vec![c.kernel.as_slice_mut().unwrap(), c.bias.as_slice_mut().unwrap()],
            Layer::Activation { .. } => vec![],
        }
    }

    pub(crate) fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv2d(c) => c.forward_cols(&c.im2col(x), x.nrows()),
            Layer::Activation { function, .. } => activate(*function, x),
        }
    }

    pub(crate) fn forward_cached(&self, x: ArrayView2<T>) -> (Array2<T>, LayerCache<T>) {
        match self {
            Layer::Dense(d) => (d.forward(x), LayerCache::Input(x.to_owned())),
            Layer::Conv2d(c) => {
                let cols = c.im2col(x);
                (c.forward_cols(&cols, x.nrows()), LayerCache::Cols(cols))
            }
            Layer::Activation {
                function: Activation::Identity,
                ..
            } => (x.to_owned(), LayerCache::None),
            Layer::Activation { function, .. } => {
                let y = activate(*function, x);
                (y.clone(), LayerCache::Output(y))
            }
        }
    }

    /// Returns the input gradient and adds parameter gradients into `grads`.
    pub(crate) fn backward(&self, cache: &LayerCache<T>, grad_out: &Array2<T>, grads: &mut [Vec<T>]) -> Array2<T> {
        match (self, cache) {
            (Layer::Dense(d), LayerCache::Input(x)) => {
                let (gw, gb) = grads.split_at_mut(1);
                d.backward(x, grad_out, &mut gw[0], &mut gb[0])
            }
            (Layer::Conv2d(c), LayerCache::Cols(cols)) => {
                let (gk, gb) = grads.split_at_mut(1);
                c.backward(cols, grad_out, &mut gk[0], &mut gb[0])
            }
            (Layer::Activation { function: Activation::Identity, .. }, _) => grad_out.clone(),
            (Layer::Activation { function: Activation::Relu, .. }, LayerCache::Output(y)) => {
                let mut g = grad_out.clone();
                g.zip_mut_with(y, |g, &y| {
                    if y <= T::zero() {
                        *g = T::zero();
                    }
                });
                g
            }
            (Layer::Activation { function: Activation::Tanh, .. }, LayerCache::Output(y)) => {
                let mut g = grad_out.clone();
                g.zip_mut_with(y, |g, &y| *g *= T::one() - y * y);
                g
            }
            _ => unreachable!("cache variant does not match layer"),
        }
    }
}

fn activate<T: Real>(function: Activation, x: ArrayView2<T>) -> Array2<T> {
    match function {
        Activation::Identity => x.to_owned(),
        Activation::Relu => x.mapv(|v| v.max(T::zero())),
        Activation::Tanh => x.mapv(T::tanh),
    }
}
