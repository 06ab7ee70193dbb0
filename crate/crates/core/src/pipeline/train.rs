use crate::error::{Error, Result};
use crate::io::{Checkpoint, Record, Values};
use crate::metrics::{evaluate, MetricsReport};
use crate::net::{initial_estimate, to_scalars, FusionConfig, FusionNet};
use crate::observation::HsiCube;
use crate::rng::{SeededRng, Stream};
use crate::tensor::{Adam, AdamConfig, Bound, ParamId, Precision, Scalar, Tape, Var};

/// One supervised example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub msi: HsiCube,
    pub hsi: HsiCube,
    pub truth: HsiCube,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub net: FusionNet<T>,
    pub adam: Adam<T>,
    pub step: u64,
    pub best_score: Option<f64>,
}

/// Batch indices for `step`. Drawn with replacement from a stream keyed by
/// the step, so no sampler state has to be saved.
pub fn batch_indices(seed: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    let mut rng = SeededRng::new(seed, Stream::Batch, step);
    (0..batch).map(|_| rng.below(n)).collect()
}

impl<T: Scalar> TrainState<T> {
    pub fn new(config: FusionConfig, adam: AdamConfig) -> Result<Self> {
        let net = FusionNet::new(config)?;
        let adam = Adam::new(adam, &net.params);
        Ok(TrainState { net, adam, step: 0, best_score: None })
    }

    /// Mean L1 over `batch` without touching parameters.
    pub fn loss(&self, samples: &[&Sample]) -> Result<f64> {
        let tape = Tape::new();
        let p = self.net.params.bind(&tape);
        Ok(self.batch_loss(&tape, &p, samples)?.item().to_f64())
    }

    fn batch_loss<'t>(
        &self,
        tape: &'t Tape<T>,
        p: &Bound<'t, T>,
        samples: &[&Sample],
    ) -> Result<Var<'t, T>> {
        if samples.is_empty() {
            return Err(Error::config("empty training batch"));
        }
        let mut total = None;
        for s in samples {
            let out = self.net.forward_cubes(tape, p, &s.msi, &s.hsi)?;
            let truth = tape.constant(s.truth.tensor_shape(), to_scalars(s.truth.data()))?;
            let l = out.sub(truth)?.l1()?;
            total = Some(match total {
                None => l,
                Some(t) => l.add(t)?,
            });
        }
        total.expect("non-empty").scale(T::from_f64(1.0 / samples.len() as f64))
    }

    /// One Adam update on the given batch; returns the loss before the update.
    pub fn step_on(&mut self, samples: &[&Sample]) -> Result<f64> {
        let tape = Tape::new();
        let p = self.net.params.bind(&tape);
        let loss = self.batch_loss(&tape, &p, samples)?;
        let value = loss.item().to_f64();
        if !value.is_finite() {
            return Err(Error::numerics(format!("loss is not finite at step {}", self.step + 1)));
        }
        let grads = tape.backward(loss)?;
        self.net.params.zero_grads();
        self.net.params.absorb_grads(&p, &grads);
        self.adam.step(&mut self.net.params)?;
        self.step += 1;
        Ok(value)
    }

    /// Trains until `self.step == until`, sampling batches of `batch` from
    /// `samples`. `on_step(step, loss)` sees every step after it finishes.
    pub fn train_until(
        &mut self,
        samples: &[Sample],
        batch: usize,
        until: u64,
        mut on_step: impl FnMut(&Self, u64, f64) -> Result<()>,
    ) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::config("no training samples"));
        }
        while self.step < until {
            let idx = batch_indices(self.net.config.seed, self.step, batch.max(1), samples.len());
            let picked: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let loss = self.step_on(&picked).map_err(|e| match e {
                Error::Numerics(m) => Error::Numerics(format!("step {}: {m}", self.step + 1)),
                other => other,
            })?;
            on_step(self, self.step, loss)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta: Vec<(String, String)> =
            self.net.config.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let a = self.adam.config;
        meta.extend([
            ("lr".to_string(), format!("{:?}", a.lr)),
            ("beta1".to_string(), format!("{:?}", a.beta1)),
            ("beta2".to_string(), format!("{:?}", a.beta2)),
            ("eps".to_string(), format!("{:?}", a.eps)),
            ("step".to_string(), self.step.to_string()),
            ("adam_step".to_string(), self.adam.step.to_string()),
            ("best_score".to_string(), self.best_score.map_or("none".to_string(), |s| format!("{s:?}"))),
        ]);
        let values = |v: &[T]| match T::PRECISION {
            Precision::Single => Values::F32(v.iter().map(|x| x.to_f64() as f32).collect()),
            Precision::Double => Values::F64(v.iter().map(|x| x.to_f64()).collect()),
        };
        let mut records = Vec::new();
        for (_, name, t) in self.net.params.iter() {
            records.push(Record { name: name.to_string(), shape: t.shape().to_vec(), data: values(t.data()) });
        }
        for (tag, moments) in [("adam.m", &self.adam.m), ("adam.v", &self.adam.v)] {
            for ((_, name, t), m) in self.net.params.iter().zip(moments) {
                records.push(Record { name: format!("{tag}/{name}"), shape: t.shape().to_vec(), data: values(m) });
            }
        }
        Checkpoint { meta, records }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut config = FusionConfig::default();
        let mut adam_cfg = AdamConfig::default();
        let (mut step, mut adam_step, mut best) = (0u64, 0u64, None);
        let num = |k: &str, v: &str| -> Result<f64> {
            v.parse().map_err(|_| Error::config(format!("checkpoint key {k}: bad value '{v}'")))
        };
        for (k, v) in &ck.meta {
            if config.set(k, v)? {
                continue;
            }
            match k.as_str() {
                "lr" => adam_cfg.lr = num(k, v)?,
                "beta1" => adam_cfg.beta1 = num(k, v)?,
                "beta2" => adam_cfg.beta2 = num(k, v)?,
                "eps" => adam_cfg.eps = num(k, v)?,
                "step" => step = num(k, v)? as u64,
                "adam_step" => adam_step = num(k, v)? as u64,
                "best_score" => best = if v == "none" { None } else { Some(num(k, v)?) },
                _ => return Err(Error::config(format!("unknown checkpoint key '{k}'"))),
            }
        }
        let mut state = TrainState::<T>::new(config, adam_cfg)?;
        state.step = step;
        state.adam.step = adam_step;
        state.best_score = best;
        let n = state.net.params.len();
        if ck.records.len() != 3 * n {
            return Err(Error::config(format!(
                "checkpoint holds {} tensors, network layout needs {}",
                ck.records.len(),
                3 * n
            )));
        }
        let names: Vec<String> = state.net.params.iter().map(|(_, n, _)| n.to_string()).collect();
        for (i, rec) in ck.records.iter().enumerate() {
            let (slot, base) = (i / n, &names[i % n]);
            let expect = match slot {
                0 => base.clone(),
                1 => format!("adam.m/{base}"),
                _ => format!("adam.v/{base}"),
            };
            let id = ParamId(i % n);
            let shape = state.net.params.get(id).shape().to_vec();
            if rec.name != expect || rec.shape != shape {
                return Err(Error::config(format!(
                    "checkpoint tensor {i} is {} {:?}, expected {expect} {shape:?}",
                    rec.name, rec.shape
                )));
            }
            let data: Vec<T> = rec.data.to_f64().into_iter().map(T::from_f64).collect();
            match slot {
                0 => state.net.params.set_data(id, data)?,
                1 => state.adam.m[i % n] = data,
                _ => state.adam.v[i % n] = data,
            }
        }
        Ok(state)
    }
}

/// Network and bicubic metrics for one scene.
#[derive(Debug, Clone)]
pub struct SceneScore {
    pub id: String,
    pub net: MetricsReport,
    pub bicubic: MetricsReport,
}

pub fn score_scenes<T: Scalar>(net: &FusionNet<T>, samples: &[Sample]) -> Result<Vec<SceneScore>> {
    samples
        .iter()
        .map(|s| {
            let fused = net.fuse(&s.msi, &s.hsi)?;
            let d = net.config.scale as f64;
            let bic = initial_estimate(&s.hsi, net.config.scale)?;
            Ok(SceneScore { id: s.id.clone(), net: evaluate(&fused, &s.truth, d)?, bicubic: evaluate(&bic, &s.truth, d)? })
        })
        .collect()
}
