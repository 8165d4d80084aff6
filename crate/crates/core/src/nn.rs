//! Minimal layer toolkit on top of candle: a named, seeded parameter store,
//! the few layers the three networks need, and self-describing checkpoints.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::RgbImage;

pub const CHECKPOINT_FORMAT: &str = "inkwash";
pub const CHECKPOINT_SCHEMA: u32 = 1;

pub fn device() -> Device {
    Device::Cpu
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// He-uniform weights, zero bias.
    He,
    /// N(0, std) weights, zero bias.
    Normal(f64),
}

/// Ordered collection of trainable variables.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    vars: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn add(&mut self, name: String, shape: &[usize], values: Vec<f32>) -> Result<Var> {
        if self.vars.iter().any(|(n, _)| *n == name) {
            return Err(Error::ArchitectureMismatch(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&Tensor::from_vec(values, shape, &device())?)?;
        self.vars.push((name, var.clone()));
        Ok(var)
    }

    pub fn weight(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values = match init {
            Init::He => {
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()
            }
            Init::Normal(std) => (0..n)
                .map(|_| {
                    // Box-Muller
                    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.random();
                    (std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
                })
                .collect(),
        };
        self.add(name.to_string(), shape, values)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Var> {
        let n = shape.iter().product();
        self.add(name.to_string(), shape, vec![0.0; n])
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.vars
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect()
    }

    /// Deep copy of the current values.
    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        Ok(self
            .vars
            .iter()
            .map(|(_, v)| v.as_tensor().copy())
            .collect::<candle_core::Result<_>>()?)
    }

    pub fn restore(&self, snapshot: &[Tensor]) -> Result<()> {
        for ((_, v), t) in self.vars.iter().zip(snapshot) {
            v.set(t)?;
        }
        Ok(())
    }

    /// Overwrites every parameter from `tensors`, keyed by `prefix + name`.
    pub fn load(&self, tensors: &HashMap<String, Tensor>, prefix: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let key = format!("{prefix}{name}");
            let t = tensors
                .get(&key)
                .ok_or_else(|| Error::ArchitectureMismatch(format!("checkpoint lacks {key}")))?;
            if t.dims() != var.dims() {
                return Err(Error::ArchitectureMismatch(format!(
                    "{key}: checkpoint shape {:?}, model shape {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(DType::F32)?)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.weight(
            &format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            in_ch * kernel * kernel,
            init,
            rng,
        )?;
        let bias = store.zeros(&format!("{name}.bias"), &[out_ch])?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, (), 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.weight(&format!("{name}.weight"), &[outputs, inputs], inputs, init, rng)?;
        let bias = store.zeros(&format!("{name}.bias"), &[outputs])?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?
            .broadcast_add(self.bias.as_tensor())?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Per-sample, per-channel normalization over the spatial dimensions.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
    let centred = x.broadcast_sub(&mean)?;
    let var = centred.sqr()?.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
    Ok(centred.broadcast_div(&(var + 1e-5)?.sqrt()?)?)
}

/// Stacks RGB images into an `(N, 3, H, W)` tensor scaled to `[lo, hi]`.
pub fn images_to_tensor(images: &[&RgbImage], lo: f32, hi: f32) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
    let (w, h) = first.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![0f32; images.len() * 3 * plane];
    let scale = (hi - lo) / 255.0;
    for (n, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(Error::InvalidInput("images in a batch must share dimensions".into()));
        }
        let base = n * 3 * plane;
        for (i, p) in img.pixels().enumerate() {
            for c in 0..3 {
                data[base + c * plane + i] = lo + p[c] as f32 * scale;
            }
        }
    }
    Ok(Tensor::from_vec(
        data,
        (images.len(), 3, h as usize, w as usize),
        &device(),
    )?)
}

/// Converts one `(3, H, W)` tensor in `[lo, hi]` into interleaved 0..=255
/// floats (unrounded).
pub fn tensor_to_rgb_f32(t: &Tensor, lo: f32, hi: f32) -> Result<(Vec<f32>, usize, usize)> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::InvalidInput(format!("expected 3 channels, got {c}")));
    }
    let planar: Vec<f32> = t.flatten_all()?.to_vec1()?;
    let plane = h * w;
    let scale = 255.0 / (hi - lo);
    let mut out = vec![0f32; plane * 3];
    for i in 0..plane {
        for ch in 0..3 {
            out[i * 3 + ch] = ((planar[ch * plane + i] - lo) * scale).clamp(0.0, 255.0);
        }
    }
    Ok((out, w, h))
}

/// Deterministic generator for a training run.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A loaded weight bundle plus its string metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub metadata: BTreeMap<String, String>,
    pub tensors: HashMap<String, Tensor>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str, path: &Path) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("missing metadata field {key:?}"),
            })
    }
}

pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    tensors: Vec<(String, Tensor)>,
    metadata: BTreeMap<String, String>,
) -> Result<()> {
    let mut info: HashMap<String, String> = metadata.into_iter().collect();
    info.insert("format".into(), CHECKPOINT_FORMAT.into());
    info.insert("schema".into(), CHECKPOINT_SCHEMA.to_string());
    info.insert("kind".into(), kind.into());
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut sorted = tensors;
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    safetensors::serialize_to_file(sorted, Some(info), path).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads a checkpoint and checks format, schema and `expected_kind`.
pub fn load_checkpoint(path: &Path, expected_kind: &str) -> Result<Checkpoint> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let metadata: BTreeMap<String, String> = header.metadata().clone().unwrap_or_default().into_iter().collect();
    if metadata.get("format").map(String::as_str) != Some(CHECKPOINT_FORMAT) {
        return Err(bad("not an inkwash checkpoint".into()));
    }
    let schema = metadata.get("schema").and_then(|s| s.parse::<u32>().ok());
    if schema != Some(CHECKPOINT_SCHEMA) {
        return Err(bad(format!("unsupported schema {schema:?}")));
    }
    let kind = metadata.get("kind").cloned().unwrap_or_default();
    if kind != expected_kind {
        return Err(bad(format!("expected a {expected_kind} checkpoint, found {kind:?}")));
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, &device()).map_err(|e| bad(e.to_string()))?;
    Ok(Checkpoint {
        kind,
        metadata,
        tensors,
    })
}
