use std::collections::BTreeMap;
use std::path::Path;

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Density, DomainData};
use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, Init, ParamStore};
use crate::raster::{self, RgbImage};

pub const CHECKPOINT_KIND: &str = "restorer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorerConfig {
    /// Side of the square working resolution.
    pub input_size: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub lambda_cycle: f64,
    /// Identity-loss weight, relative to `lambda_cycle`.
    pub lambda_identity: f64,
    pub base_channels: usize,
    pub residual_blocks: usize,
    pub seed: u64,
}

impl Default for RestorerConfig {
    fn default() -> Self {
        Self {
            input_size: 256,
            epochs: 50,
            batch_size: 4,
            learning_rate: 2e-4,
            beta1: 0.5,
            lambda_cycle: 10.0,
            lambda_identity: 0.5,
            base_channels: 16,
            residual_blocks: 3,
            seed: 0,
        }
    }
}

impl RestorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size < 16 || !self.input_size.is_multiple_of(4) {
            return Err(Error::InvalidConfig(format!(
                "restorer input size {} must be a multiple of 4 and at least 16",
                self.input_size
            )));
        }
        if self.epochs == 0
            || self.batch_size == 0
            || self.base_channels == 0
            || !(self.learning_rate.is_finite() && self.learning_rate > 0.0)
        {
            return Err(Error::InvalidConfig(
                "epochs, batch size, channels and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Residual translator: `out = x + f(x)` in `[-1, 1]` space, so the network
/// only has to learn the correction.
#[derive(Debug, Clone)]
struct Generator {
    stem: Conv2d,
    down: Conv2d,
    blocks: Vec<(Conv2d, Conv2d)>,
    up: Conv2d,
    out: Conv2d,
}

impl Generator {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &RestorerConfig,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Self> {
        let c = cfg.base_channels;
        let mut conv =
            |n: &str, i, o, k, s, p, init| Conv2d::new(store, &format!("{name}.{n}"), i, o, k, s, p, init, rng);
        let stem = conv("stem", 3, c, 3, 1, 1, Init::He)?;
        let down = conv("down", c, 2 * c, 3, 2, 1, Init::He)?;
        let mut blocks = Vec::new();
        for i in 0..cfg.residual_blocks {
            let a = conv(&format!("res{i}.a"), 2 * c, 2 * c, 3, 1, 1, Init::He)?;
            let b = conv(&format!("res{i}.b"), 2 * c, 2 * c, 3, 1, 1, Init::He)?;
            blocks.push((a, b));
        }
        let up = conv("up", 2 * c, c, 3, 1, 1, Init::He)?;
        let out = conv("out", c, 3, 3, 1, 1, Init::Normal(0.02))?;
        Ok(Self {
            stem,
            down,
            blocks,
            up,
            out,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = nn::instance_norm(&self.stem.forward(x)?)?.relu()?;
        h = nn::instance_norm(&self.down.forward(&h)?)?.relu()?;
        for (a, b) in &self.blocks {
            let r = nn::instance_norm(&a.forward(&h)?)?.relu()?;
            let r = nn::instance_norm(&b.forward(&r)?)?;
            h = (h + r)?;
        }
        let (_, _, gh, gw) = h.dims4()?;
        h = h.upsample_nearest2d(gh * 2, gw * 2)?;
        h = nn::instance_norm(&self.up.forward(&h)?)?.relu()?;
        Ok((x + self.out.forward(&h)?)?)
    }
}

/// Patch discriminator: one real/fake score per receptive field.
#[derive(Debug, Clone)]
struct Discriminator {
    convs: Vec<Conv2d>,
}

impl Discriminator {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &RestorerConfig,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Self> {
        let c = cfg.base_channels;
        let convs = vec![
            Conv2d::new(store, &format!("{name}.c1"), 3, c, 4, 2, 1, Init::Normal(0.02), rng)?,
            Conv2d::new(store, &format!("{name}.c2"), c, 2 * c, 4, 2, 1, Init::Normal(0.02), rng)?,
            Conv2d::new(store, &format!("{name}.c3"), 2 * c, 1, 3, 1, 1, Init::Normal(0.02), rng)?,
        ];
        Ok(Self { convs })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = nn::leaky_relu(&self.convs[0].forward(x)?, 0.2)?;
        let h = nn::leaky_relu(&nn::instance_norm(&self.convs[1].forward(&h)?)?, 0.2)?;
        self.convs[2].forward(&h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub generator: f64,
    pub discriminator: f64,
    /// Mean absolute reconstruction error of both cycles, in `[-1, 1]` units.
    pub cycle: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RestorerLog {
    pub epochs: Vec<EpochLoss>,
}

impl RestorerLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,generator_loss,discriminator_loss,cycle_loss\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                e.epoch, e.generator, e.discriminator, e.cycle
            ));
        }
        out
    }
}

/// Both generators and both discriminators of one density domain.
#[derive(Debug, Clone)]
pub struct RestorerWeights {
    cfg: RestorerConfig,
    density: Density,
    gen_store: ParamStore,
    disc_store: ParamStore,
    g_ab: Generator,
    g_ba: Generator,
    d_a: Discriminator,
    d_b: Discriminator,
    trained: bool,
    train_samples: usize,
}

impl RestorerWeights {
    pub fn new(cfg: &RestorerConfig, density: Density) -> Result<Self> {
        cfg.validate()?;
        let mut rng = nn::seeded_rng(cfg.seed);
        let mut gen_store = ParamStore::new();
        let mut disc_store = ParamStore::new();
        let g_ab = Generator::new(&mut gen_store, "g_ab", cfg, &mut rng)?;
        let g_ba = Generator::new(&mut gen_store, "g_ba", cfg, &mut rng)?;
        let d_a = Discriminator::new(&mut disc_store, "d_a", cfg, &mut rng)?;
        let d_b = Discriminator::new(&mut disc_store, "d_b", cfg, &mut rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            density,
            gen_store,
            disc_store,
            g_ab,
            g_ba,
            d_a,
            d_b,
            trained: false,
            train_samples: 0,
        })
    }

    pub fn config(&self) -> &RestorerConfig {
        &self.cfg
    }

    pub fn density(&self) -> Density {
        self.density
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn param_count(&self) -> usize {
        self.gen_store.param_count() + self.disc_store.param_count()
    }

    pub(super) fn ready(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::ModelNotReady(format!(
                "{} restorer has not been trained",
                self.density
            )))
        }
    }

    /// Inked to clean, on a `(N, 3, S, S)` batch in `[-1, 1]`.
    pub fn ink_to_clean(&self, x: &Tensor) -> Result<Tensor> {
        self.g_ab.forward(x)
    }

    pub fn clean_to_ink(&self, x: &Tensor) -> Result<Tensor> {
        self.g_ba.forward(x)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.ready()?;
        let mut tensors = self.gen_store.named_tensors();
        tensors.extend(self.disc_store.named_tensors());
        let meta = BTreeMap::from([
            ("config".to_string(), serde_json::to_string(&self.cfg)?),
            ("density".to_string(), self.density.name().to_string()),
            ("train_samples".to_string(), self.train_samples.to_string()),
        ]);
        nn::save_checkpoint(path, CHECKPOINT_KIND, tensors, meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = nn::load_checkpoint(path, CHECKPOINT_KIND)?;
        let cfg: RestorerConfig = serde_json::from_str(ck.meta("config", path)?)?;
        let density: Density = ck.meta("density", path)?.parse()?;
        let mut w = Self::new(&cfg, density)?;
        w.gen_store.load(&ck.tensors, "")?;
        w.disc_store.load(&ck.tensors, "")?;
        w.train_samples = ck.meta("train_samples", path)?.parse().unwrap_or(0);
        w.trained = true;
        Ok(w)
    }
}

fn mse_to(x: &Tensor, target: f64) -> Result<Tensor> {
    Ok((x - target)?.sqr()?.mean_all()?)
}

fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}

fn to_batch(imgs: &[RgbImage], idx: &[usize]) -> Result<Tensor> {
    let refs: Vec<&RgbImage> = idx.iter().map(|&i| &imgs[i]).collect();
    nn::images_to_tensor(&refs, -1.0, 1.0)
}

/// Adversarial training of both translators with least-squares GAN losses,
/// cycle consistency and identity regularization. An epoch visits every
/// crop of the larger domain once.
pub fn train_restorer(
    data: &DomainData,
    density: Density,
    cfg: &RestorerConfig,
) -> Result<(RestorerWeights, RestorerLog)> {
    data.check()?;
    let mut w = RestorerWeights::new(cfg, density)?;
    let s = cfg.input_size;
    let prep = |imgs: &[RgbImage]| -> Vec<RgbImage> { imgs.iter().map(|i| raster::resize_bilinear(i, s, s)).collect() };
    let (dom_a, dom_b) = (prep(&data.inked), prep(&data.clean));
    let params = ParamsAdamW {
        lr: cfg.learning_rate,
        beta1: cfg.beta1,
        beta2: 0.999,
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut opt_g = AdamW::new(w.gen_store.vars(), params.clone())?;
    let mut opt_d = AdamW::new(w.disc_store.vars(), params)?;
    let mut rng = nn::seeded_rng(cfg.seed ^ 0xc1c1e);
    let n = dom_a.len().max(dom_b.len());
    let mut log = RestorerLog::default();
    let (lc, li) = (cfg.lambda_cycle, cfg.lambda_cycle * cfg.lambda_identity);
    for epoch in 1..=cfg.epochs {
        let mut ia: Vec<usize> = (0..n).map(|i| i % dom_a.len()).collect();
        let mut ib: Vec<usize> = (0..n).map(|i| i % dom_b.len()).collect();
        ia.shuffle(&mut rng);
        ib.shuffle(&mut rng);
        let (mut sum_g, mut sum_d, mut sum_c, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for (ca, cb) in ia.chunks(cfg.batch_size).zip(ib.chunks(cfg.batch_size)) {
            let real_a = to_batch(&dom_a, ca)?;
            let real_b = to_batch(&dom_b, cb)?;

            let fake_b = w.g_ab.forward(&real_a)?;
            let fake_a = w.g_ba.forward(&real_b)?;
            let cycle = (l1(&w.g_ba.forward(&fake_b)?, &real_a)? + l1(&w.g_ab.forward(&fake_a)?, &real_b)?)?;
            let identity = (l1(&w.g_ab.forward(&real_b)?, &real_b)? + l1(&w.g_ba.forward(&real_a)?, &real_a)?)?;
            let adv = (mse_to(&w.d_b.forward(&fake_b)?, 1.0)? + mse_to(&w.d_a.forward(&fake_a)?, 1.0)?)?;
            let loss_g = ((adv + (&cycle * lc)?)? + (identity * li)?)?;
            opt_g.backward_step(&loss_g)?;

            let (fake_a, fake_b) = (fake_a.detach(), fake_b.detach());
            let d_b = (mse_to(&w.d_b.forward(&real_b)?, 1.0)? + mse_to(&w.d_b.forward(&fake_b)?, 0.0)?)?;
            let d_a = (mse_to(&w.d_a.forward(&real_a)?, 1.0)? + mse_to(&w.d_a.forward(&fake_a)?, 0.0)?)?;
            let loss_d = ((d_a + d_b)? * 0.5)?;
            opt_d.backward_step(&loss_d)?;

            sum_g += loss_g.to_scalar::<f32>()? as f64;
            sum_d += loss_d.to_scalar::<f32>()? as f64;
            sum_c += cycle.to_scalar::<f32>()? as f64 / 2.0;
            steps += 1;
        }
        let rec = EpochLoss {
            epoch,
            generator: sum_g / steps as f64,
            discriminator: sum_d / steps as f64,
            cycle: sum_c / steps as f64,
        };
        log::debug!(
            "{density} restorer epoch {epoch}: G {:.4} D {:.4} cycle {:.4}",
            rec.generator,
            rec.discriminator,
            rec.cycle
        );
        log.epochs.push(rec);
    }
    w.trained = true;
    w.train_samples = n;
    Ok((w, log))
}
