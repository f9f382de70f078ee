use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, LayerSpec};
use super::network::{mlp_specs, Network, NetworkCache, Parameterized};
use super::{NnError, Real};

/// Shape of the state encoder: a conv stack over the resource image and a dense branch over
/// the job array, concatenated and merged into a `d`-dimensional state vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub image_rows: usize,
    pub image_cols: usize,
    pub jobs_len: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub job_hidden: usize,
    /// Widths after the concatenation; the last one is the state dimension.
    pub merge: Vec<usize>,
}

impl EncoderSpec {
    /// Default architecture for an image of `rows x cols` and a flattened job array.
    /// Images too small for two unpadded 3x3 convolutions get one cell of zero padding.
    pub fn standard(image_rows: usize, image_cols: usize, jobs_len: usize) -> Self {
        let padding = if image_rows.min(image_cols) < 5 { 1 } else { 0 };
        Self {
            image_rows,
            image_cols,
            jobs_len,
            conv_channels: vec![8, 16],
            kernel: 3,
            stride: 1,
            padding,
            job_hidden: 64,
            merge: vec![128, 64],
        }
    }

    pub fn state_dim(&self) -> usize {
        *self.merge.last().expect("validated")
    }

    pub fn conv_specs(&self) -> Result<Vec<LayerSpec>, NnError> {
        let mut specs = Vec::new();
        let (mut h, mut w, mut c) = (self.image_rows, self.image_cols, 1);
        for &out in &self.conv_channels {
            let conv = LayerSpec::Conv2d {
                in_channels: c,
                out_channels: out,
                height: h,
                width: w,
                kernel: self.kernel,
                stride: self.stride,
                padding: self.padding,
            };
            conv.validate()?;
            let width = conv.output_len();
            h = (h + 2 * self.padding - self.kernel) / self.stride + 1;
            w = (w + 2 * self.padding - self.kernel) / self.stride + 1;
            c = out;
            specs.push(conv);
            specs.push(LayerSpec::Activation {
                function: Activation::Relu,
                width,
            });
        }
        if specs.is_empty() {
            return Err(NnError::Spec("encoder needs at least one conv layer".into()));
        }
        Ok(specs)
    }

    fn conv_output_len(&self) -> Result<usize, NnError> {
        Ok(self.conv_specs()?.last().expect("non-empty").output_len())
    }

    fn job_specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dense {
                inputs: self.jobs_len,
                outputs: self.job_hidden,
            },
            LayerSpec::Activation {
                function: Activation::Relu,
                width: self.job_hidden,
            },
        ]
    }

    fn merge_specs(&self) -> Result<Vec<LayerSpec>, NnError> {
        if self.merge.is_empty() {
            return Err(NnError::Spec("encoder needs at least one merge layer".into()));
        }
        let mut widths = vec![self.conv_output_len()? + self.job_hidden];
        widths.extend(&self.merge);
        let mut specs = mlp_specs(&widths, Activation::Relu);
        specs.push(LayerSpec::Activation {
            function: Activation::Relu,
            width: self.state_dim(),
        });
        Ok(specs)
    }
}

/// State encoder network.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    spec: EncoderSpec,
    conv: Network<T>,
    jobs: Network<T>,
    merge: Network<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    conv: NetworkCache<T>,
    jobs: NetworkCache<T>,
    merge: NetworkCache<T>,
    conv_width: usize,
}

impl<T: Real> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(spec: EncoderSpec, rng: &mut R) -> Result<Self, NnError> {
        let conv = Network::from_specs("encoder.conv", &spec.conv_specs()?, std::f64::consts::SQRT_2, rng)?;
        let jobs = Network::from_specs("encoder.jobs", &spec.job_specs(), std::f64::consts::SQRT_2, rng)?;
        let merge = Network::from_specs("encoder.merge", &spec.merge_specs()?, std::f64::consts::SQRT_2, rng)?;
        Ok(Self { spec, conv, jobs, merge })
    }

    /// Reassembles an encoder from stored sub-networks, checking they fit together.
    pub fn from_parts(spec: EncoderSpec, conv: Network<T>, jobs: Network<T>, merge: Network<T>) -> Result<Self, NnError> {
        if conv.specs() != spec.conv_specs()? || jobs.specs() != spec.job_specs() || merge.specs() != spec.merge_specs()? {
            return Err(NnError::Spec("encoder parts do not match the encoder spec".into()));
        }
        Ok(Self { spec, conv, jobs, merge })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn parts(&self) -> [&Network<T>; 3] {
        [&self.conv, &self.jobs, &self.merge]
    }

    pub fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    pub fn forward(&self, image: ArrayView2<T>, jobs: ArrayView2<T>) -> Result<Array2<T>, NnError> {
        let a = self.conv.forward(image)?;
        let b = self.jobs.forward(jobs)?;
        check_batch(&a, &b)?;
        let h = concatenate(Axis(1), &[a.view(), b.view()]).expect("same batch");
        self.merge.forward(h.view())
    }

    pub fn forward_cached(&self, image: ArrayView2<T>, jobs: ArrayView2<T>) -> Result<(Array2<T>, EncoderCache<T>), NnError> {
        let (a, conv) = self.conv.forward_cached(image)?;
        let (b, jobs) = self.jobs.forward_cached(jobs)?;
        check_batch(&a, &b)?;
        let h = concatenate(Axis(1), &[a.view(), b.view()]).expect("same batch");
        let (z, merge) = self.merge.forward_cached(h.view())?;
        Ok((
            z,
            EncoderCache {
                conv,
                jobs,
                merge,
                conv_width: a.ncols(),
            },
        ))
    }

    /// Backpropagates a state-vector gradient into `grads` (conv, jobs, merge block order).
    pub fn backward(&self, cache: &EncoderCache<T>, dz: &Array2<T>, grads: &mut [Vec<T>]) -> Result<(), NnError> {
        let nc = self.conv.blocks().len();
        let nj = self.jobs.blocks().len();
        if grads.len() != nc + nj + self.merge.blocks().len() {
            return Err(NnError::shape("encoder gradient blocks", nc + nj + self.merge.blocks().len(), grads.len()));
        }
        let (gc, rest) = grads.split_at_mut(nc);
        let (gj, gm) = rest.split_at_mut(nj);
        let dh = self.merge.backward(&cache.merge, dz, gm)?;
        let da = dh.slice(s![.., ..cache.conv_width]).to_owned();
        let db = dh.slice(s![.., cache.conv_width..]).to_owned();
        self.conv.backward(&cache.conv, &da, gc)?;
        self.jobs.backward(&cache.jobs, &db, gj)?;
        Ok(())
    }
}

fn check_batch<T>(a: &Array2<T>, b: &Array2<T>) -> Result<(), NnError> {
    if a.nrows() != b.nrows() {
        return Err(NnError::shape("encoder batch", a.nrows(), b.nrows()));
    }
    Ok(())
}

impl<T: Real> Parameterized<T> for Encoder<T> {
    fn blocks(&self) -> Vec<&[T]> {
        self.parts().into_iter().flat_map(|n| n.blocks()).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.conv.blocks_mut();
        v.extend(self.jobs.blocks_mut());
        v.extend(self.merge.blocks_mut());
        v
    }

    fn block_names(&self) -> Vec<String> {
        self.parts().into_iter().flat_map(|n| n.block_names()).collect()
    }
}
