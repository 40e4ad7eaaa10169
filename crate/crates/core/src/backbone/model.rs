use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::accounting::{conv_layers, ConvLayer, LEVEL_DIVISORS, POOL_KERNELS};
use super::{ModelConfig, INPUT_MULTIPLE};
use crate::error::{Error, Result};
use crate::maps::{DescriptorMap, ScoreMap};
use crate::tensorgraph::{read_checkpoint, write_checkpoint, Graph, Scalar, Tensor, Var};

const CONFIG_TENSOR: &str = "config";

/// Network weights together with the configuration they instantiate.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    layers: Vec<ConvLayer>,
    params: Vec<(String, Tensor<T>)>,
}

/// Graph handles of the two network outputs.
#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    /// `[1, 1, H, W]`, sigmoid scores.
    pub score: Var,
    /// `[1, dim, H, W]`, unit descriptors along the channel axis.
    pub desc: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub score_map: ScoreMap,
    pub descriptor_map: DescriptorMap,
}

impl<T: Scalar> Model<T> {
    /// He-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases, drawn
    /// layer by layer from one seeded stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, |shape| {
            let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
            let bound = (6.0 / fan_in).sqrt();
            Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
        })
    }

    /// Every weight and bias zero.
    pub fn zeros(config: &ModelConfig) -> Self {
        Self::build(config, |shape| Tensor::zeros(shape))
    }

    fn build(config: &ModelConfig, mut weight: impl FnMut(&[usize]) -> Tensor<T>) -> Self {
        let layers = conv_layers(config);
        let mut params = Vec::with_capacity(2 * layers.len());
        for l in &layers {
            params.push((format!("{}.weight", l.name), weight(&l.weight_shape())));
            params.push((format!("{}.bias", l.name), Tensor::zeros(&[l.out_channels])));
        }
        Self {
            config: config.clone(),
            layers,
            params,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Named weights in forward order, each weight followed by its bias.
    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Inserts the weights into `g`, gradient-tracked iff `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    /// Builds the forward pass of `image [1,3,H,W]` on `g` with weights
    /// previously inserted by [`Model::bind`].
    pub fn forward_graph(&self, g: &mut Graph<T>, image: Var, params: &[Var]) -> Result<ModelVars> {
        let s = g.shape(image).to_vec();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 {
            return Err(Error::Input(format!("expected an image tensor [1,3,H,W], got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        check_input_size(w, h)?;
        if params.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "{} weight handles bound, model has {}",
                params.len(),
                self.params.len()
            )));
        }
        let layer = |name: &str| {
            let i = self
                .layers
                .iter()
                .position(|l| l.name == name)
                .expect("layer table covers every name used by the forward pass");
            (params[2 * i], params[2 * i + 1], self.layers[i].kernel / 2)
        };
        let conv = |g: &mut Graph<T>, x: Var, name: &str| -> Result<Var> {
            let (wt, b, pad) = layer(name);
            g.conv2d(x, wt, Some(b), 1, pad)
        };

        let x = conv(g, image, "block1.conv1")?;
        let x = g.relu(x);
        let x = conv(g, x, "block1.conv2")?;
        let mut level = g.relu(x);
        let mut features = vec![level];
        for (i, &k) in POOL_KERNELS.iter().enumerate() {
            let block = format!("block{}", i + 2);
            let pooled = g.maxpool2d(level, k)?;
            let y = conv(g, pooled, &format!("{block}.conv1"))?;
            let y = g.relu(y);
            let y = conv(g, y, &format!("{block}.conv2"))?;
            let shortcut = format!("{block}.shortcut");
            let skip = if self.layers.iter().any(|l| l.name == shortcut) {
                conv(g, pooled, &shortcut)?
            } else {
                pooled
            };
            let sum = g.add(y, skip)?;
            level = g.relu(sum);
            features.push(level);
        }

        let mut aggregated = Vec::with_capacity(4);
        for (i, &f) in features.iter().enumerate() {
            let y = conv(g, f, &format!("agg{}", i + 1))?;
            aggregated.push(if LEVEL_DIVISORS[i] == 1 {
                y
            } else {
                g.upsample_bilinear(y, h, w)?
            });
        }
        let mut x = g.concat(&aggregated, 1)?;
        if self.config.n_head == 2 {
            let y = conv(g, x, "head1")?;
            x = g.relu(y);
        }
        let out = conv(g, x, "head_out")?;
        let dim = self.config.dim;
        let raw_desc = g.slice(out, 1, 0, dim)?;
        let desc = g.l2_normalize(raw_desc, 1)?;
        let logit = g.slice(out, 1, dim, 1)?;
        let score = g.sigmoid(logit);
        Ok(ModelVars { score, desc })
    }

    /// Inference on an image tensor `[1,3,H,W]`.
    pub fn forward(&self, image: &Tensor<T>) -> Result<ModelOutput> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let x = g.constant(image.clone());
        let vars = self.forward_graph(&mut g, x, &params)?;
        Ok(output_from(&g, vars))
    }

    pub fn write_to<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let c = &self.config;
        let values = [c.c1, c.c2, c.c3, c.c4, c.dim, c.n_head];
        let cfg: Tensor<T> = Tensor::from_fn(&[6], |i| T::lit(values[i] as f64));
        let mut records: Vec<(&str, &Tensor<T>)> = vec![(CONFIG_TENSOR, &cfg)];
        records.extend(self.params.iter().map(|(n, t)| (n.as_str(), t)));
        write_checkpoint(writer, &records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a checkpoint; `path` only labels error messages.
    pub fn read_from<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let records = read_checkpoint(reader, path)?;
        let bad = |msg: String| Error::Input(format!("{}: {msg}", path.display()));
        let cfg = records
            .iter()
            .find(|(n, _)| n == CONFIG_TENSOR)
            .ok_or_else(|| bad("checkpoint has no config record".into()))?;
        let v: Vec<usize> = cfg.1.data().iter().map(|&x| x as usize).collect();
        if v.len() != 6 {
            return Err(bad(format!("config record has {} values, expected 6", v.len())));
        }
        let config = ModelConfig::new("custom", [v[0], v[1], v[2], v[3]], v[4], v[5])?.with_preset_name();
        let mut model = Self::zeros(&config);
        for (name, slot) in model.params.iter_mut() {
            let (_, t) = records
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(bad(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.cast();
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }
}

/// Input error unless both sides are multiples of 32.
pub(crate) fn check_input_size(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || !width.is_multiple_of(INPUT_MULTIPLE) || !height.is_multiple_of(INPUT_MULTIPLE) {
        let up = |v: usize| v.max(1).div_ceil(INPUT_MULTIPLE) * INPUT_MULTIPLE;
        return Err(Error::Input(format!(
            "image size {width}×{height} is not a multiple of {INPUT_MULTIPLE}; pad to {}×{}",
            up(width),
            up(height)
        )));
    }
    Ok(())
}

/// Copies graph outputs into f64 maps.
pub fn output_from<T: Scalar>(g: &Graph<T>, vars: ModelVars) -> ModelOutput {
    let s = g.shape(vars.desc);
    let (dim, h, w) = (s[1], s[2], s[3]);
    let f = |v: &T| v.to_f64_lossy();
    let score = g.data(vars.score).iter().map(f).collect();
    let desc = g.data(vars.desc).iter().map(f).collect();
    ModelOutput {
        score_map: ScoreMap::new(w, h, score).expect("shape from graph"),
        descriptor_map: DescriptorMap::new(w, h, dim, desc).expect("shape from graph"),
    }
}
