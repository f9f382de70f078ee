use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::layers::{Activation, Conv2d, Dense, Layer, LayerCache, LayerSpec};
use super::{NnError, Real};

/// Anything exposing an ordered list of flat parameter blocks.
///
/// Gradient vectors handed to optimizers and Polyak updates follow the same order.
pub trait Parameterized<T: Real> {
    fn blocks(&self) -> Vec<&[T]>;
    fn blocks_mut(&mut self) -> Vec<&mut [T]>;
    fn block_names(&self) -> Vec<String>;

    fn zero_grads(&self) -> Vec<Vec<T>> {
        self.blocks().iter().map(|b| vec![T::zero(); b.len()]).collect()
    }

    fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// A feed-forward stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    name: String,
    layers: Vec<Layer<T>>,
}

#[derive(Debug, Clone)]
pub struct NetworkCache<T> {
    entries: Vec<LayerCache<T>>,
}

impl<T: Real> Network<T> {
    pub fn new(name: impl Into<String>, layers: Vec<Layer<T>>) -> Result<Self, NnError> {
        let name = name.into();
        for pair in layers.windows(2) {
            let (out, inp) = (pair[0].spec().output_len(), pair[1].spec().input_len());
            if out != inp {
                return Err(NnError::shape(format!("{name} layer chaining"), out, inp));
            }
        }
        if layers.is_empty() {
            return Err(NnError::Spec(format!("{name}: network needs at least one layer")));
        }
        Ok(Self { name, layers })
    }

    /// Builds freshly initialized layers from specs. Layers feeding a ReLU use He-style
    /// scaling; the final parametric layer uses `final_gain`.
    pub fn from_specs<R: Rng + ?Sized>(
        name: impl Into<String>,
        specs: &[LayerSpec],
        final_gain: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let last_param = specs
            .iter()
            .rposition(|s| !matches!(s, LayerSpec::Activation { .. }))
            .ok_or_else(|| NnError::Spec("no parametric layer".into()))?;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            spec.validate()?;
            let gain = if i == last_param {
                final_gain
            } else if matches!(
                specs.get(i + 1),
                Some(LayerSpec::Activation {
                    function: Activation::Relu,
                    ..
                })
            ) {
                std::f64::consts::SQRT_2
            } else {
                1.0
            };
            layers.push(match *spec {
                LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense::init(inputs, outputs, gain, rng)),
                LayerSpec::Conv2d { .. } => Layer::Conv2d(Conv2d::from_spec(*spec, gain, rng)?),
                LayerSpec::Activation { function, width } => Layer::Activation { function, width },
            });
        }
        Self::new(name, layers)
    }

    /// Dense layers of the given widths with `hidden` activations in between.
    pub fn mlp<R: Rng + ?Sized>(
        name: impl Into<String>,
        widths: &[usize],
        hidden: Activation,
        final_gain: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Self::from_specs(name, &mlp_specs(widths, hidden), final_gain, rng)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].spec().input_len()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("non-empty").spec().output_len()
    }

    /// The final dense layer, which PopArt rescales.
    pub fn last_dense_mut(&mut self) -> Option<&mut Dense<T>> {
        self.layers.iter_mut().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d),
            _ => None,
        })
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<(), NnError> {
        if x.ncols() != self.input_len() {
            return Err(NnError::shape(format!("{} input", self.name), self.input_len(), x.ncols()));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>, NnError> {
        self.check_input(&x)?;
        let mut h = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            h = layer.forward(h.view());
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<T>) -> Result<(Array2<T>, NetworkCache<T>), NnError> {
        self.check_input(&x)?;
        let mut entries = Vec::with_capacity(self.layers.len());
        let (mut h, c) = self.layers[0].forward_cached(x);
        entries.push(c);
        for layer in &self.layers[1..] {
            let (next, c) = layer.forward_cached(h.view());
            entries.push(c);
            h = next;
        }
        Ok((h, NetworkCache { entries }))
    }

    /// Backpropagates `grad_out`, adding parameter gradients into `grads` (one entry per
    /// block, in [`Parameterized::blocks`] order) and returning the input gradient.
    pub fn backward(&self, cache: &NetworkCache<T>, grad_out: &Array2<T>, grads: &mut [Vec<T>]) -> Result<Array2<T>, NnError> {
        if grad_out.ncols() != self.output_len() {
            return Err(NnError::shape(format!("{} output grad", self.name), self.output_len(), grad_out.ncols()));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.n_blocks();
        }
        if grads.len() != acc {
            return Err(NnError::shape(format!("{} gradient blocks", self.name), acc, grads.len()));
        }
        let mut g = grad_out.clone();
        for ((layer, entry), off) in self.layers.iter().zip(&cache.entries).zip(offsets).rev() {
            g = layer.backward(entry, &g, &mut grads[off..off + layer.n_blocks()]);
        }
        Ok(g)
    }
}

impl<T: Real> Parameterized<T> for Network<T> {
    fn blocks(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.blocks()).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| l.blocks_mut()).collect()
    }

    fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(_) | Layer::Conv2d(_) => {
                    names.push(format!("{}.{i}.weight", self.name));
                    names.push(format!("{}.{i}.bias", self.name));
                }
                Layer::Activation { .. } => {}
            }
        }
        names
    }
}

pub fn mlp_specs(widths: &[usize], hidden: Activation) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        specs.push(LayerSpec::Dense {
            inputs: pair[0],
            outputs: pair[1],
        });
        if i + 2 < widths.len() {
            specs.push(LayerSpec::Activation {
                function: hidden,
                width: pair[1],
            });
        }
    }
    specs
}

/// `target <- (1 - tau) * target + tau * online`, elementwise over all blocks.
pub fn polyak_update<T: Real, P: Parameterized<T> + ?Sized>(target: &mut P, online: &P, tau: f64) -> Result<(), NnError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(NnError::Tau(tau));
    }
    let src = online.blocks();
    let mut dst = target.blocks_mut();
    if src.len() != dst.len() {
        return Err(NnError::shape("polyak block count", src.len(), dst.len()));
    }
    for (i, (d, s)) in dst.iter_mut().zip(&src).enumerate() {
        if d.len() != s.len() {
            return Err(NnError::shape(format!("polyak block {i}"), s.len(), d.len()));
        }
    }
    let tau_t = T::cast(tau);
    let keep = T::cast(1.0 - tau);
    for (d, s) in dst.into_iter().zip(src) {
        if tau == 1.0 {
            d.copy_from_slice(s);
        } else {
            for (t, o) in d.iter_mut().zip(s) {
                *t = keep * *t + tau_t * *o;
            }
        }
    }
    Ok(())
}
