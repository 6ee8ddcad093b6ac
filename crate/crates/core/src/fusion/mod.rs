//! FusionNet: merges the source-image descriptor with the descriptors of its
//! N pose-transferred renderings into one re-ID feature.
//!
//! ```text
//! [src, gen_1 .. gen_N] -> fc_1 (4D) -> BN -> LeakyReLU -> dropout
//!                       -> fc_2 (D) -> BN -> (+ src) -> output (D) [-> class head]
//! ```

mod pipeline;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::pipeline::{
    compute_fusion_inputs, Describer, FusionInputs, PipelineParts, ReidPipeline, SourceBackbone,
};
use crate::error::{Error, Result};
use crate::nn::{self, dropout, leaky_relu, BatchNorm1d, Checkpoint, Linear, ParamStore, LEAKY_SLOPE};
use crate::ptgan::{holdout_indices, losses::classification_loss, Reduction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSpec {
    /// Number of generated views.
    pub n: usize,
    /// Descriptor dimension.
    pub d: usize,
    /// Size of the training-time classification head (0: no head).
    pub num_classes: usize,
    pub dropout: f64,
    /// Start with a silent residual branch (zero BN-2 gain and shift) and an
    /// identity output layer, so the untrained network returns the source
    /// descriptor.
    pub identity_init: bool,
}

impl Default for FusionSpec {
    fn default() -> Self {
        Self {
            n: 12,
            d: 2048,
            num_classes: 0,
            dropout: 0.6,
            identity_init: true,
        }
    }
}

/// Parameter counts of the three dense layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionParamCounts {
    pub fc_1: usize,
    pub fc_2: usize,
    pub output: usize,
}

pub enum Mode<'a> {
    Train {
        rng: &'a mut ChaCha8Rng,
        update_stats: bool,
    },
    Eval,
}

pub struct FusionOutput {
    /// `fc_2 -> BN` activation, before the skip connection.
    pub pre_skip: Tensor,
    /// Output-layer activation, the re-ID feature.
    pub fused: Tensor,
    pub logits: Option<Tensor>,
}

pub struct FusionNet {
    pub spec: FusionSpec,
    store: ParamStore,
    fc_1: Linear,
    bn_1: BatchNorm1d,
    fc_2: Linear,
    bn_2: BatchNorm1d,
    output: Linear,
    head: Option<Linear>,
}

const CHECKPOINT_KIND: &str = "fusion";

impl FusionNet {
    /// `(name, in, out)` of the dense layers for `n` views of dimension `d`.
    pub fn layer_shapes(n: usize, d: usize) -> [(&'static str, usize, usize); 3] {
        [("fc_1", (n + 1) * d, 4 * d), ("fc_2", 4 * d, d), ("output", d, d)]
    }

    pub fn param_counts(n: usize, d: usize) -> FusionParamCounts {
        let [a, b, c] = Self::layer_shapes(n, d).map(|(_, i, o)| Linear::param_count(i, o));
        FusionParamCounts {
            fc_1: a,
            fc_2: b,
            output: c,
        }
    }

    pub fn new(spec: FusionSpec, seed: u64, dtype: DType) -> Result<Self> {
        if spec.n == 0 || spec.d == 0 {
            return Err(Error::Config("fusion needs n >= 1 and d >= 1".into()));
        }
        if !(0.0..1.0).contains(&spec.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(dtype);
        let [s1, s2, s3] = Self::layer_shapes(spec.n, spec.d);
        let fc_1 = Linear::new(&mut store, s1.0, s1.1, s1.2, &mut rng)?;
        let bn_1 = BatchNorm1d::new(&mut store, "bn_1", s1.2)?;
        let fc_2 = Linear::new(&mut store, s2.0, s2.1, s2.2, &mut rng)?;
        let bn_2 = BatchNorm1d::new(&mut store, "bn_2", s2.2)?;
        let output = Linear::new(&mut store, s3.0, s3.1, s3.2, &mut rng)?;
        let head = if spec.num_classes > 0 {
            Some(Linear::new(&mut store, "head", spec.d, spec.num_classes, &mut rng)?)
        } else {
            None
        };
        let net = Self {
            spec,
            store,
            fc_1,
            bn_1,
            fc_2,
            bn_2,
            output,
            head,
        };
        if net.spec.identity_init {
            let dev = Device::Cpu;
            let dt = net.dtype();
            for v in [&net.bn_2.gamma, &net.bn_2.beta, &net.output.bias] {
                v.set(&Tensor::zeros(v.shape(), dt, &dev)?)?;
            }
            net.output.weight.set(&Tensor::eye(net.spec.d, dt, &dev)?)?;
        }
        Ok(net)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Zeroes the residual branch and makes the output layer the identity, so
    /// the fused descriptor equals the source descriptor.
    pub fn zero_branch(&self) -> Result<()> {
        let d = self.spec.d;
        let dt = self.dtype();
        let dev = Device::Cpu;
        for v in [&self.fc_2.weight, &self.fc_2.bias, &self.bn_2.gamma, &self.bn_2.beta, &self.output.bias] {
            v.set(&Tensor::zeros(v.shape(), dt, &dev)?)?;
        }
        self.output.weight.set(&Tensor::eye(d, dt, &dev)?)?;
        Ok(())
    }

    /// `x` is the concatenation `[source, generated_1 .. generated_N]`,
    /// shape `[B, (N + 1) D]`.
    pub fn forward(&self, x: &Tensor, mode: Mode<'_>) -> Result<FusionOutput> {
        let (_, width) = x.dims2()?;
        let d = self.spec.d;
        if width != (self.spec.n + 1) * d {
            return Err(Error::shape((self.spec.n + 1) * d, width));
        }
        let source = x.narrow(1, 0, d)?;
        let h = self.fc_1.forward(x)?;
        let (h, pre_skip) = match mode {
            Mode::Train { rng, update_stats } => {
                let h = leaky_relu(&self.bn_1.forward_train(&h, update_stats)?, LEAKY_SLOPE)?;
                let h = dropout(&h, self.spec.dropout, rng)?;
                let pre = self.bn_2.forward_train(&self.fc_2.forward(&h)?, update_stats)?;
                (h, pre)
            }
            Mode::Eval => {
                let h = leaky_relu(&self.bn_1.forward_eval(&h)?, LEAKY_SLOPE)?;
                let pre = self.bn_2.forward_eval(&self.fc_2.forward(&h)?)?;
                (h, pre)
            }
        };
        drop(h);
        let fused = self.output.forward(&(&pre_skip + &source)?)?;
        let logits = match &self.head {
            Some(head) => Some(head.forward(&fused)?),
            None => None,
        };
        Ok(FusionOutput {
            pre_skip,
            fused,
            logits,
        })
    }

    fn concat_rows(&self, source: &[Vec<f32>], generated: &[Vec<Vec<f32>>]) -> Result<Tensor> {
        let d = self.spec.d;
        if source.len() != generated.len() {
            return Err(Error::shape(source.len(), generated.len()));
        }
        let mut rows = Vec::with_capacity(source.len());
        for (s, g) in source.iter().zip(generated) {
            if g.len() != self.spec.n {
                return Err(Error::shape(self.spec.n, g.len()));
            }
            if s.len() != d || g.iter().any(|v| v.len() != d) {
                return Err(Error::InvalidInput(format!("fusion descriptors must have length {d}")));
            }
            let mut row = Vec::with_capacity((self.spec.n + 1) * d);
            row.extend_from_slice(s);
            for v in g {
                row.extend_from_slice(v);
            }
            rows.push(row);
        }
        nn::rows_to_tensor(&rows, self.dtype())
    }

    /// Inference-mode fusion of one source descriptor with its `N`
    /// generated-view descriptors (in pose-set order).
    pub fn fuse(&self, source: &[f32], generated: &[Vec<f32>]) -> Result<Vec<f32>> {
        Ok(self
            .fuse_batch(&[source.to_vec()], &[generated.to_vec()])?
            .remove(0))
    }

    pub fn fuse_batch(&self, source: &[Vec<f32>], generated: &[Vec<Vec<f32>>]) -> Result<Vec<Vec<f32>>> {
        if source.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.concat_rows(source, generated)?;
        nn::tensor_rows(&self.forward(&x, Mode::Eval)?.fused)
    }

    /// Pre-skip activations in inference mode.
    pub fn pre_skip(&self, source: &[f32], generated: &[Vec<f32>]) -> Result<Vec<f32>> {
        let x = self.concat_rows(&[source.to_vec()], &[generated.to_vec()])?;
        Ok(nn::tensor_rows(&self.forward(&x, Mode::Eval)?.pre_skip)?.remove(0))
    }

    /// Sum of squared dense-layer weights (biases and batch-norm excluded).
    pub fn weight_penalty(&self) -> Result<Tensor> {
        let mut total = self.fc_1.weight.as_tensor().sqr()?.sum_all()?;
        for w in [&self.fc_2.weight, &self.output.weight] {
            total = (total + w.as_tensor().sqr()?.sum_all()?)?;
        }
        if let Some(h) = &self.head {
            total = (total + h.weight.as_tensor().sqr()?.sum_all()?)?;
        }
        Ok(total)
    }

    pub fn to_checkpoint(&self, epoch: usize) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            config: serde_json::to_value(&self.spec)?,
            epoch,
            rng: None,
            tensors: self.store.export()?,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let spec: FusionSpec = serde_json::from_value(ck.config.clone())?;
        let net = Self::new(spec, 0, DType::F32)?;
        net.store.import(&ck.tensors)?;
        Ok(net)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation-accuracy gain.
    pub patience: usize,
    /// Coefficient of the squared-weight penalty.
    pub weight_decay: f64,
    /// Fraction of every identity's images held out for early stopping.
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 60,
            patience: 10,
            weight_decay: 5e-4,
            val_frac: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FusionHistory {
    pub train_loss: Vec<f64>,
    /// Inference-mode accuracy on the training images after every epoch.
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains a FusionNet on precomputed descriptors with identity
/// classification. `identities` are raw identity labels, one per row.
pub fn train_fusion(
    inputs: &FusionInputs,
    identities: &[u32],
    spec: FusionSpec,
    cfg: &FusionTrainConfig,
) -> Result<(FusionNet, FusionHistory)> {
    let m = inputs.source.len();
    if m < 2 || identities.len() != m || inputs.generated.len() != m {
        return Err(Error::InsufficientData(format!(
            "fusion training needs aligned descriptors for at least two images, got {m}"
        )));
    }
    let classes: std::collections::BTreeMap<u32, usize> = identities
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    let spec = FusionSpec {
        num_classes: classes.len(),
        ..spec
    };
    let net = FusionNet::new(spec, cfg.seed, DType::F32)?;
    let x_all = net.concat_rows(&inputs.source, &inputs.generated)?;
    let labels: Vec<u32> = identities.iter().map(|id| classes[id] as u32).collect();
    let (train_idx, val_idx) = holdout_indices(identities, cfg.val_frac, cfg.seed);

    let mut opt = AdamW::new(
        net.store.trainable(),
        ParamsAdamW {
            lr: cfg.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = FusionHistory::default();
    let mut best = (f64::NEG_INFINITY, net.store.export()?);
    let mut stale = 0;
    let mut order = train_idx.clone();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0;
        for batch in order.chunks(cfg.batch_size.max(2)) {
            if batch.len() < 2 {
                continue;
            }
            let idx = Tensor::new(batch.iter().map(|&i| i as u32).collect::<Vec<_>>().as_slice(), &Device::Cpu)?;
            let x = x_all.index_select(&idx, 0)?;
            let y = Tensor::new(batch.iter().map(|&i| labels[i]).collect::<Vec<_>>().as_slice(), &Device::Cpu)?;
            let out = net.forward(
                &x,
                Mode::Train {
                    rng: &mut rng,
                    update_stats: true,
                },
            )?;
            let logits = out.logits.expect("training net has a head");
            let ce = classification_loss(&logits, &y, Reduction::Mean)?;
            let loss = (ce + net.weight_penalty()?.affine(cfg.weight_decay, 0.0)?)?;
            let value = nn::scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Divergence(format!("fusion loss became {value} in epoch {epoch}")));
            }
            opt.backward_step(&loss)?;
            total += value * batch.len() as f64;
            seen += batch.len();
        }
        history.train_loss.push(total / seen.max(1) as f64);
        history.train_accuracy.push(accuracy(&net, &x_all, &labels, &train_idx)?);
        let val = if val_idx.is_empty() {
            *history.train_accuracy.last().unwrap()
        } else {
            accuracy(&net, &x_all, &labels, &val_idx)?
        };
        history.val_accuracy.push(val);
        log::info!(
            "fusion epoch {epoch}: loss {:.4} train acc {:.3} val acc {:.3}",
            history.train_loss[epoch],
            history.train_accuracy[epoch],
            val
        );
        if val > best.0 {
            best = (val, net.store.export()?);
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    net.store.import(&best.1)?;
    Ok((net, history))
}

fn accuracy(net: &FusionNet, x_all: &Tensor, labels: &[u32], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let t = Tensor::new(idx.iter().map(|&i| i as u32).collect::<Vec<_>>().as_slice(), &Device::Cpu)?;
    let out = net.forward(&x_all.index_select(&t, 0)?, Mode::Eval)?;
    let pred = out.logits.expect("head").argmax(1)?.to_vec1::<u32>()?;
    let correct = pred.iter().zip(idx).filter(|(p, &i)| **p == labels[i]).count();
    Ok(correct as f64 / idx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_desc(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn parameter_counts_match_formulas() {
        for n in [4, 8, 12, 16, 24] {
            for d in [16, 64, 2048] {
                let c = FusionNet::param_counts(n, d);
                assert_eq!(c.fc_1, (n + 1) * d * 4 * d + 4 * d);
                assert_eq!(c.fc_2, 4 * d * d + d);
                assert_eq!(c.output, d * d + d);
            }
        }
    }

    #[test]
    fn constructed_net_matches_counts() {
        let spec = FusionSpec {
            n: 4,
            d: 16,
            num_classes: 0,
            dropout: 0.6,
            identity_init: false,
        };
        let net = FusionNet::new(spec, 0, DType::F32).unwrap();
        let c = FusionNet::param_counts(4, 16);
        let bn = BatchNorm1d::param_count(64) + BatchNorm1d::param_count(16);
        assert_eq!(net.store().num_parameters(), c.fc_1 + c.fc_2 + c.output + bn);
    }

    #[test]
    fn zeroed_branch_is_identity_on_source() {
        let spec = FusionSpec {
            n: 3,
            d: 8,
            num_classes: 0,
            dropout: 0.6,
            identity_init: false,
        };
        let net = FusionNet::new(spec, 1, DType::F32).unwrap();
        net.zero_branch().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = random_desc(&mut rng, 8);
        let gen: Vec<Vec<f32>> = (0..3).map(|_| random_desc(&mut rng, 8)).collect();
        assert_eq!(net.fuse(&src, &gen).unwrap(), src);
    }

    #[test]
    fn identity_init_returns_source_but_keeps_branch_trainable() {
        let spec = FusionSpec {
            n: 2,
            d: 8,
            num_classes: 0,
            dropout: 0.6,
            identity_init: true,
        };
        let net = FusionNet::new(spec, 3, DType::F32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src = random_desc(&mut rng, 8);
        let gen: Vec<Vec<f32>> = (0..2).map(|_| random_desc(&mut rng, 8)).collect();
        assert_eq!(net.fuse(&src, &gen).unwrap(), src);
        let fc_2 = net.store().param("fc_2.weight").unwrap();
        assert!(fc_2.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn inference_is_deterministic_and_order_sensitive() {
        let spec = FusionSpec {
            n: 3,
            d: 8,
            num_classes: 0,
            dropout: 0.6,
            identity_init: false,
        };
        let net = FusionNet::new(spec, 4, DType::F32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = random_desc(&mut rng, 8);
        let gen: Vec<Vec<f32>> = (0..3).map(|_| random_desc(&mut rng, 8)).collect();
        assert_eq!(net.fuse(&src, &gen).unwrap(), net.fuse(&src, &gen).unwrap());
        let mut perm = gen.clone();
        perm.rotate_left(1);
        assert_ne!(net.pre_skip(&src, &gen).unwrap(), net.pre_skip(&src, &perm).unwrap());
    }

    #[test]
    fn wrong_view_count_is_rejected() {
        let net = FusionNet::new(
            FusionSpec {
                n: 2,
                d: 4,
                num_classes: 0,
                dropout: 0.0,
                identity_init: false,
            },
            0,
            DType::F32,
        )
        .unwrap();
        assert!(net.fuse(&[0.0; 4], &[vec![0.0; 4]]).is_err());
        assert!(net.fuse(&[0.0; 3], &[vec![0.0; 4], vec![0.0; 4]]).is_err());
    }

    fn separable_inputs(n_ids: u32, per_id: usize, d: usize, n: usize) -> (FusionInputs, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let centres: Vec<Vec<f32>> = (0..n_ids).map(|_| random_desc(&mut rng, d)).collect();
        let mut inputs = FusionInputs::default();
        let mut ids = Vec::new();
        for (id, c) in centres.iter().enumerate() {
            for _ in 0..per_id {
                let jitter = |rng: &mut ChaCha8Rng| -> Vec<f32> {
                    c.iter().map(|v| v + rng.random_range(-0.8..0.8)).collect()
                };
                inputs.source.push(jitter(&mut rng));
                inputs.generated.push((0..n).map(|_| jitter(&mut rng)).collect());
                ids.push(id as u32 * 2);
            }
        }
        (inputs, ids)
    }

    #[test]
    fn training_improves_accuracy() {
        let (inputs, ids) = separable_inputs(5, 8, 16, 2);
        let spec = FusionSpec {
            n: 2,
            d: 16,
            num_classes: 0,
            dropout: 0.6,
            identity_init: false,
        };
        let cfg = FusionTrainConfig {
            max_epochs: 20,
            patience: 100,
            lr: 1e-3,
            ..FusionTrainConfig::default()
        };
        let (_, hist) = train_fusion(&inputs, &ids, spec, &cfg).unwrap();
        assert_eq!(hist.train_accuracy.len(), 20);
        assert!(hist.train_accuracy[19] > hist.train_accuracy[0]);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (inputs, ids) = separable_inputs(3, 6, 8, 2);
        let spec = FusionSpec {
            n: 2,
            d: 8,
            num_classes: 0,
            dropout: 0.6,
            identity_init: false,
        };
        let cfg = FusionTrainConfig {
            max_epochs: 200,
            patience: 3,
            ..FusionTrainConfig::default()
        };
        let (_, hist) = train_fusion(&inputs, &ids, spec, &cfg).unwrap();
        assert!(hist.stopped_early);
        assert_eq!(hist.val_accuracy.len(), hist.best_epoch + 1 + 3);
        let best = hist.val_accuracy[hist.best_epoch];
        assert!(hist.val_accuracy[hist.best_epoch + 1..].iter().all(|&v| v <= best));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (inputs, ids) = separable_inputs(3, 4, 8, 2);
        let spec = FusionSpec {
            n: 2,
            d: 8,
            num_classes: 0,
            dropout: 0.6,
            identity_init: false,
        };
        let cfg = FusionTrainConfig {
            max_epochs: 3,
            ..FusionTrainConfig::default()
        };
        let (net, _) = train_fusion(&inputs, &ids, spec, &cfg).unwrap();
        let back = FusionNet::from_checkpoint(&net.to_checkpoint(3).unwrap()).unwrap();
        let a = net.fuse(&inputs.source[0], &inputs.generated[0]).unwrap();
        let b = back.fuse(&inputs.source[0], &inputs.generated[0]).unwrap();
        assert_eq!(a, b);
    }
}
