use std::collections::HashMap;

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::blob::{self, Blob};
use crate::network::NetworkConfig;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn matrix(name: String, rows: usize, cols: usize) -> Spec {
    Spec {
        name,
        shape: vec![rows, cols],
        init: Init::Glorot {
            fan_in: rows,
            fan_out: cols,
        },
    }
}

fn conv(name: String, k: usize, cin: usize, cout: usize) -> Spec {
    Spec {
        name,
        shape: vec![k, cin, cout],
        init: Init::Glorot {
            fan_in: k * cin,
            fan_out: k * cout,
        },
    }
}

fn vector(name: String, n: usize, init: Init) -> Spec {
    Spec {
        name,
        shape: vec![n],
        init,
    }
}

fn layer_norm(specs: &mut Vec<Spec>, p: &str, n: usize) {
    specs.push(vector(format!("{p}.gamma"), n, Init::Ones));
    specs.push(vector(format!("{p}.beta"), n, Init::Zeros));
}

fn block_specs(specs: &mut Vec<Spec>, p: &str, c: &NetworkConfig) {
    let h = c.hidden;
    for m in ["q", "k", "v", "o"] {
        specs.push(matrix(format!("{p}.attn.w{m}"), h, h));
        if m != "k" {
            specs.push(vector(format!("{p}.attn.b{m}"), h, Init::Zeros));
        }
    }
    layer_norm(specs, &format!("{p}.ln1"), h);
    specs.push(conv(format!("{p}.ffn.w1"), c.ffn_kernel, h, c.ffn_inner));
    specs.push(vector(format!("{p}.ffn.b1"), c.ffn_inner, Init::Zeros));
    specs.push(conv(format!("{p}.ffn.w2"), c.ffn_kernel_out, c.ffn_inner, h));
    specs.push(vector(format!("{p}.ffn.b2"), h, Init::Zeros));
    layer_norm(specs, &format!("{p}.ln2"), h);
}

fn specs(c: &NetworkConfig) -> Vec<Spec> {
    let h = c.hidden;
    let mut s = vec![matrix("embedding".into(), c.vocab_size, h)];
    if c.needs_speaker_projection() {
        s.push(matrix("spk_proj".into(), c.speaker_dim(), h));
    }
    for b in 0..c.encoder_blocks {
        block_specs(&mut s, &format!("encoder.{b}"), c);
    }
    let f = c.dp_filter;
    s.push(conv("dp.conv1.w".into(), c.dp_kernel, h, f));
    s.push(vector("dp.conv1.b".into(), f, Init::Zeros));
    layer_norm(&mut s, "dp.ln1", f);
    s.push(conv("dp.conv2.w".into(), c.dp_kernel, f, f));
    s.push(vector("dp.conv2.b".into(), f, Init::Zeros));
    layer_norm(&mut s, "dp.ln2", f);
    s.push(matrix("dp.linear.w".into(), f, 1));
    s.push(vector("dp.linear.b".into(), 1, Init::Zeros));
    for b in 0..c.refine_blocks {
        block_specs(&mut s, &format!("refine.{b}"), c);
    }
    s.push(conv("sub.conv1.w".into(), 3, h, h));
    s.push(vector("sub.conv1.b".into(), h, Init::Zeros));
    s.push(conv("sub.conv2.w".into(), 3, h, c.latent_dim));
    s.push(vector("sub.conv2.b".into(), c.latent_dim, Init::Zeros));
    s
}

/// Named, ordered parameter tensors for one network configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TaemParams<T> {
    config: NetworkConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

fn index_of(names: &[String]) -> HashMap<String, usize> {
    names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect()
}

impl<T: Real> TaemParams<T> {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains. Each tensor
    /// draws from its own stream keyed by `(seed, "init:<name>")`.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for spec in specs(config) {
            let numel: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let mut r = rng::stream(seed, &format!("init:{}", spec.name));
                    (0..numel).map(|_| T::of(limit * rng::symmetric(&mut r))).collect()
                }
                Init::Zeros => vec![T::zero(); numel],
                Init::Ones => vec![T::one(); numel],
            };
            tensors.push(Tensor::new(spec.shape, data)?);
            names.push(spec.name);
        }
        Ok(Self {
            config: config.clone(),
            index: index_of(&names),
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Same names and shapes with every value replaced.
    pub fn with_tensors(&self, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != self.tensors.len()
            || tensors.iter().zip(&self.tensors).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::InvalidArgument("replacement tensors do not match parameter shapes".into()));
        }
        Ok(Self {
            tensors,
            ..self.clone()
        })
    }

    pub fn cast<U: Real>(&self) -> TaemParams<U> {
        TaemParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Records every tensor as a trainable leaf, in order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<Vec<Var>> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    pub(crate) fn index(&self) -> &HashMap<String, usize> {
        &self.index
    }

    /// One blob per tensor, named `<prefix><param name>`.
    pub fn to_blobs(&self, prefix: &str) -> Vec<Blob> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| Blob::from_tensor(format!("{prefix}{n}"), t))
            .collect()
    }

    /// Inverse of [`to_blobs`](Self::to_blobs). Every parameter of `config`
    /// must be present with the expected shape and dtype.
    pub fn from_blobs(config: &NetworkConfig, blobs: &[Blob], prefix: &str) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for spec in specs(config) {
            let b = blob::find(blobs, &format!("{prefix}{}", spec.name))?;
            let t = b.to_tensor::<T>()?;
            if t.shape() != spec.shape {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            tensors.push(t);
            names.push(spec.name);
        }
        Ok(Self {
            config: config.clone(),
            index: index_of(&names),
            names,
            tensors,
        })
    }
}
