//! Mini-batch ADAM training, checkpointing and checkpoint evaluation.
//!
//! Iteration `t` (0-based) belongs to epoch `t / ceil(N / batch)`; each
//! epoch visits the pairs in the permutation drawn from
//! `derive_seed(seed, epoch)`, so a run is a pure function of its config,
//! initial parameters and dataset. The optimizer step counter doubles as the
//! global iteration counter, which is what makes resuming exact.

mod adam;
mod config;

pub use adam::{adam_step, AdamState, ADAM_MAGIC};
pub use config::TrainConfig;

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{images_to_tensor, load_any, Image};
use crate::losses::{total_loss, LossWeights};
use crate::metrics::{psnr, MetricReport};
use crate::network::{load_params, save_params, Mode, NetworkParams};
use crate::rng::{derive_seed, Rng};
use crate::speckle::Manifest;

pub const FINAL_PARAMS: &str = "final.idcnn";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const VALIDATION_LOG: &str = "validation.csv";

/// A clean/noisy training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub name: String,
    pub clean: Image,
    pub noisy: Image,
}

/// In-memory pairs sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pairs: Vec<Pair>,
}

impl Dataset {
    pub fn new(pairs: Vec<Pair>) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::EmptyDataset("no training pairs".into()))?;
        for p in &pairs {
            p.clean.ensure_same_shape(&p.noisy, &p.name)?;
            first.clean.ensure_same_shape(&p.clean, "dataset")?;
        }
        Ok(Self { pairs })
    }

    /// Loads every manifest pair, center-cropping to `crop × crop` if given.
    pub fn from_manifest(path: impl AsRef<Path>, crop: Option<usize>) -> Result<Self> {
        let manifest = Manifest::read(path.as_ref())?;
        let pairs = manifest_pairs(&manifest)?
            .into_iter()
            .map(|mut p| {
                if let Some(c) = crop {
                    p.clean = p.clean.center_crop(c, c)?;
                    p.noisy = p.noisy.center_crop(c, c)?;
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    /// `(noisy, clean)` tensors for the given pair indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(crate::Tensor4<f32>, crate::Tensor4<f32>)> {
        let noisy: Vec<&Image> = indices.iter().map(|&i| &self.pairs[i].noisy).collect();
        let clean: Vec<&Image> = indices.iter().map(|&i| &self.pairs[i].clean).collect();
        Ok((images_to_tensor(&noisy)?, images_to_tensor(&clean)?))
    }
}

fn pair_name(noisy_path: &str) -> String {
    Path::new(noisy_path)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(noisy_path)
        .to_string()
}

/// Decodes all pairs of a manifest in parallel, keeping manifest order.
pub fn manifest_pairs(manifest: &Manifest) -> Result<Vec<Pair>> {
    manifest
        .rows
        .par_iter()
        .map(|row| {
            let clean = load_any(manifest.resolve(&row.clean_path))?;
            let noisy = load_any(manifest.resolve(&row.noisy_path))?;
            clean.ensure_same_shape(&noisy, &row.noisy_path)?;
            Ok(Pair {
                name: pair_name(&row.noisy_path),
                clean,
                noisy,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLoss {
    /// 1-based iteration number.
    pub iter: usize,
    pub euclidean: f64,
    pub tv: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub iterations: Vec<IterationLoss>,
    /// `(epoch, mean PSNR)` on the validation set, epochs 1-based.
    pub validation: Vec<(usize, f64)>,
}

impl TrainLog {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "iter,l_e,l_tv,total")?;
        for r in &self.iterations {
            writeln!(out, "{},{:e},{:e},{:e}", r.iter, r.euclidean, r.tv, r.total)?;
        }
        Ok(())
    }

    pub fn write_validation_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,psnr_db")?;
        for (e, p) in &self.validation {
            writeln!(out, "{e},{p:.6}")?;
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<IterationLoss>> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for rec in reader.deserialize::<(usize, f64, f64, f64)>() {
            let (iter, euclidean, tv, total) = rec.map_err(|e| Error::io(path, e))?;
            out.push(IterationLoss {
                iter,
                euclidean,
                tv,
                total,
            });
        }
        Ok(out)
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut std::fs::File) -> std::io::Result<()>) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f(&mut file).map_err(|e| Error::io(path, e))
}

/// Stateful training loop over an in-memory dataset.
pub struct Trainer {
    config: TrainConfig,
    weights: LossWeights,
    dataset: Dataset,
    validation: Option<Dataset>,
    params: NetworkParams<f32>,
    adam: AdamState<f32>,
    log: TrainLog,
    order: Option<(usize, Vec<usize>)>,
}

/// Every step allocates and frees the same multi-megabyte activation and
/// patch buffers. glibc would hand them back to the kernel each time and
/// fault them in again, so keep them on the heap instead.
fn keep_large_buffers() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| {
            // glibc refuses mmap thresholds above 32 MiB.
            // SAFETY: mallopt only adjusts allocator tunables.
            unsafe {
                libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
                libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
            }
        });
    }
}

impl Trainer {
    pub fn new(config: TrainConfig, params: NetworkParams<f32>, dataset: Dataset) -> Result<Self> {
        let adam = AdamState::new(&params.tensors());
        Self::with_state(config, params, adam, dataset)
    }

    fn with_state(
        config: TrainConfig,
        params: NetworkParams<f32>,
        adam: AdamState<f32>,
        dataset: Dataset,
    ) -> Result<Self> {
        keep_large_buffers();
        config.validate()?;
        let weights = LossWeights::new(config.lambda_tv)?;
        let validation = config
            .validation_manifest
            .as_ref()
            .map(|m| Dataset::from_manifest(m, config.crop))
            .transpose()?;
        if let Some(dir) = &config.output_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(Self {
            config,
            weights,
            dataset,
            validation,
            params,
            adam,
            log: TrainLog::default(),
            order: None,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::save_checkpoint`].
    /// `checkpoint` is the `.idcnn` file; the optimizer blob sits beside it
    /// with the `.adam` extension.
    pub fn resume(config: TrainConfig, dataset: Dataset, checkpoint: impl AsRef<Path>) -> Result<Self> {
        let checkpoint = checkpoint.as_ref();
        let params: NetworkParams<f32> = load_params(checkpoint)?;
        let adam = AdamState::load(checkpoint.with_extension("adam"))?;
        if adam.m.len() != params.tensors().len() {
            return Err(Error::VersionMismatch(
                "optimizer state does not match the parameter layout".into(),
            ));
        }
        let mut trainer = Self::with_state(config, params, adam, dataset)?;
        if let Some(dir) = &trainer.config.output_dir {
            let log = dir.join(TRAIN_LOG);
            if log.exists() {
                let t = trainer.iteration();
                trainer.log.iterations = TrainLog::read_csv(&log)?
                    .into_iter()
                    .filter(|r| r.iter <= t)
                    .collect();
            }
        }
        Ok(trainer)
    }

    pub fn params(&self) -> &NetworkParams<f32> {
        &self.params
    }

    pub fn adam(&self) -> &AdamState<f32> {
        &self.adam
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// Updates applied so far.
    pub fn iteration(&self) -> usize {
        self.adam.t as usize
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.dataset.len().div_ceil(self.config.batch_size)
    }

    pub fn total_iterations(&self) -> usize {
        self.config
            .iterations
            .unwrap_or(self.config.epochs * self.iterations_per_epoch())
    }

    fn batch_indices(&mut self, t: usize) -> Vec<usize> {
        let per_epoch = self.iterations_per_epoch();
        let epoch = t / per_epoch;
        if self.order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let perm = Rng::new(derive_seed(self.config.seed, epoch as u64)).permutation(self.dataset.len());
            self.order = Some((epoch, perm));
        }
        let order = &self.order.as_ref().unwrap().1;
        let b = t % per_epoch;
        let bs = self.config.batch_size;
        order[b * bs..((b + 1) * bs).min(order.len())].to_vec()
    }

    /// One forward/backward/update on the next mini-batch.
    pub fn step(&mut self) -> Result<IterationLoss> {
        let t = self.iteration();
        let indices = self.batch_indices(t);
        let (y, x) = self.dataset.batch(&indices)?;
        let mut candidate = self.params.clone();
        let fwd = candidate.forward(&y, Mode::Train, true)?;
        let loss = total_loss(&fwd.despeckled, &x, self.weights)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: t + 1,
                euclidean: loss.euclidean,
                tv: loss.tv,
            });
        }
        let trace = fwd.trace.expect("recorded forward has a trace");
        let grads = candidate.backward(&trace, &loss.grad)?;
        let g = grads.tensors();
        adam_step(&mut candidate.tensors_mut(), &g, &mut self.adam, self.config.learning_rate)?;
        self.params = candidate;
        let record = IterationLoss {
            iter: t + 1,
            euclidean: loss.euclidean,
            tv: loss.tv,
            total: loss.total,
        };
        self.log.iterations.push(record);
        Ok(record)
    }

    /// Writes `checkpoint_{t}.idcnn` and `checkpoint_{t}.adam` into `dir`.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let path = dir.join(format!("checkpoint_{:06}.idcnn", self.iteration()));
        save_params(&self.params, &path)?;
        self.adam.save(path.with_extension("adam"))?;
        Ok(path)
    }

    fn validate_epoch(&mut self) -> Result<()> {
        let Some(val) = &self.validation else {
            return Ok(());
        };
        let scores = val
            .pairs()
            .par_iter()
            .map(|p| {
                let (xhat, _) = self.params.despeckle_image(&p.noisy)?;
                psnr(&p.clean, &xhat, 1.0)
            })
            .collect::<Result<Vec<f64>>>()?;
        let epoch = self.iteration() / self.iterations_per_epoch();
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        self.log.validation.push((epoch, mean));
        Ok(())
    }

    fn write_logs(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(TRAIN_LOG), |f| self.log.write_csv(f))?;
        if self.validation.is_some() {
            write_file(&dir.join(VALIDATION_LOG), |f| self.log.write_validation_csv(f))?;
        }
        Ok(())
    }

    /// Trains until the configured iteration count. With an output directory
    /// the log is rewritten at every checkpoint and at the end, next to
    /// `final.idcnn`.
    pub fn run(mut self) -> Result<(NetworkParams<f32>, TrainLog)> {
        let total = self.total_iterations();
        let per_epoch = self.iterations_per_epoch();
        let out_dir = self.config.output_dir.clone();
        let result = (|| {
            while self.iteration() < total {
                self.step()?;
                let t = self.iteration();
                if t % per_epoch == 0 {
                    self.validate_epoch()?;
                }
                if let Some(dir) = &out_dir {
                    if self.config.checkpoint_every > 0 && t % self.config.checkpoint_every == 0 {
                        self.save_checkpoint(dir)?;
                        self.write_logs(dir)?;
                    }
                }
            }
            Ok(())
        })();
        if let Some(dir) = &out_dir {
            // Keep the log of a failed run for diagnosis.
            self.write_logs(dir)?;
            result?;
            save_params(&self.params, dir.join(FINAL_PARAMS))?;
        } else {
            result?;
        }
        Ok((self.params, self.log))
    }
}

/// Loads the configured manifest and trains `params` from scratch.
pub fn train(config: TrainConfig, params: NetworkParams<f32>) -> Result<(NetworkParams<f32>, TrainLog)> {
    let dataset = Dataset::from_manifest(&config.manifest, config.crop)?;
    Trainer::new(config, params, dataset)?.run()
}

/// Loads the configured manifest and resumes from `checkpoint`.
pub fn resume(config: TrainConfig, checkpoint: impl AsRef<Path>) -> Result<(NetworkParams<f32>, TrainLog)> {
    let dataset = Dataset::from_manifest(&config.manifest, config.crop)?;
    Trainer::resume(config, dataset, checkpoint)?.run()
}

/// Scores `method(noisy)` against the clean image for every manifest pair.
pub fn evaluate_manifest(
    manifest: &Manifest,
    peak: f64,
    method: impl Fn(&Image) -> Result<Image> + Sync,
) -> Result<MetricReport> {
    let pairs = manifest_pairs(manifest)?;
    let outputs = pairs
        .par_iter()
        .map(|p| method(&p.noisy))
        .collect::<Result<Vec<Image>>>()?;
    let mut report = MetricReport::new(peak);
    for (p, out) in pairs.iter().zip(&outputs) {
        report.add_pair(&p.name, &p.clean, out)?;
    }
    Ok(report)
}

/// PSNR/SSIM/UQI of the network output against the clean images.
pub fn evaluate_checkpoint(
    params: &NetworkParams<f32>,
    manifest: impl AsRef<Path>,
    peak: f64,
) -> Result<MetricReport> {
    let manifest = Manifest::read(manifest.as_ref())?;
    evaluate_manifest(&manifest, peak, |y| Ok(params.despeckle_image(y)?.0))
}
