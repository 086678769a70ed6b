//! The subcommands as library functions; `main` only parses arguments and
//! prints.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use segmicro::augment::transform;
use segmicro::checkpoint::load_checkpoint;
use segmicro::dataio::{
    generate_dataset, load_manifest, pad_to_multiple, preprocess, read_image_png, read_mask_png, read_raw, split_train_val,
    write_dataset, write_image_png, write_mask_png, write_paletted_png, Dataset, Sample,
};
use segmicro::gradcheck::{gradcheck, jitter_biases, GradcheckOptions, GradcheckReport};
use segmicro::net::{build, config_param_count};
use segmicro::synthetic::{blob_dataset, BlobOptions};
use segmicro::train::{evaluate, train_with, History};
use segmicro::{make_optimizer, Graph, LabelMap, MetricsReport, ModelConfig, Shape4, Tensor4};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Builds `target` in a temporary sibling directory and renames it into
/// place only if `build` succeeds, so a failure leaves nothing behind. An
/// existing `target` is replaced.
pub fn publish_dir<T>(target: &Path, build: impl FnOnce(&Path) -> CliResult<T>) -> CliResult<T> {
    let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    let name = target
        .file_name()
        .ok_or_else(|| CliError::Config(format!("{} is not a directory name", target.display())))?;
    let tmp = parent.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    }
    fs::create_dir(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    let value = match build(&tmp) {
        Ok(v) => v,
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
    };
    if target.exists() {
        fs::remove_dir_all(target).map_err(|e| CliError::io(target, e))?;
    }
    fs::rename(&tmp, target).map_err(|e| CliError::io(target, e))?;
    Ok(value)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// The data a training run works on.
pub struct RunData {
    /// Pool that is split into training and validation sets.
    pub pool: Dataset,
    pub test: Option<Dataset>,
}

pub fn load_run_data(config: &ExperimentConfig) -> CliResult<RunData> {
    let data = &config.data;
    if let Some(s) = &data.synthetic {
        let opts = BlobOptions::new(s.height, s.width);
        return Ok(RunData {
            pool: blob_dataset(s.train_count, &opts, config.seed)?,
            test: Some(blob_dataset(s.test_count, &opts, config.seed.wrapping_add(1 << 32))?),
        });
    }
    let train = data
        .train
        .as_ref()
        .ok_or_else(|| CliError::Config("training needs data.train or data.synthetic".into()))?;
    Ok(RunData {
        pool: load_manifest(train)?,
        test: data.test.as_deref().map(load_manifest).transpose()?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub param_count: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    /// `test` or, without a test set, `validation`.
    pub evaluated_on: String,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub stop_reason: segmicro::train::StopReason,
    pub final_lr: f64,
}

pub struct TrainArtifacts {
    pub dir: PathBuf,
    pub history: History,
    pub metrics: MetricsReport,
    pub summary: RunSummary,
}

pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const METRICS_FILE: &str = "metrics.json";

/// Splits the pool, trains, evaluates, and writes `config.json`,
/// `history.csv`, `best.ckpt`, `metrics.json` and `summary.json` into
/// `out_root/run-<config hash>`. Per-epoch progress goes to `log`.
pub fn cmd_train(config: &ExperimentConfig, out_root: &Path, log: &mut dyn Write) -> CliResult<TrainArtifacts> {
    config.validate()?;
    let data = load_run_data(config)?;
    let (train_set, val_set) = split_train_val(&data.pool, config.training.validation_fraction, config.seed)?;
    let mut graph: Graph<f32> = build(&config.model, config.seed)?;
    for (role, set) in [("training", Some(&train_set)), ("test", data.test.as_ref())] {
        if let Some(set) = set {
            graph
                .check_input(set.samples[0].image.shape())
                .map_err(|e| CliError::Config(format!("{role} data does not fit the model: {e}")))?;
        }
    }
    let mut optimizer = make_optimizer::<f32>(config.optimizer.kind, &config.optimizer.overrides)?;
    let hash = config.content_hash();
    let dir = out_root.join(format!("run-{hash}"));
    let param_count = graph.param_count();

    let (history, metrics, summary) = publish_dir(&dir, |tmp| {
        write_file(&tmp.join("config.json"), serde_json::to_string_pretty(config).expect("config serializes") + "\n")?;
        let train_config = config.train_config(Some(tmp.join(CHECKPOINT_FILE)));
        let outcome = train_with(&mut graph, &mut optimizer, &train_set, &val_set, &train_config, |r| {
            let _ = writeln!(
                log,
                "epoch {:>3}  loss {:.5}  acc {:.4}  val_loss {:.5}  val_acc {:.4}  lr {:e}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
            );
        })?;
        write_file(&tmp.join(HISTORY_FILE), outcome.history.to_csv())?;
        let (eval_set, evaluated_on) = match &data.test {
            Some(t) => (t, "test"),
            None => (&val_set, "validation"),
        };
        let metrics = evaluate(&mut graph, eval_set)?;
        write_file(&tmp.join(METRICS_FILE), metrics.to_json() + "\n")?;
        let summary = RunSummary {
            config_hash: hash.clone(),
            param_count,
            train_samples: train_set.len(),
            val_samples: val_set.len(),
            test_samples: data.test.as_ref().map_or(0, Dataset::len),
            evaluated_on: evaluated_on.into(),
            epochs: outcome.history.epochs(),
            best_epoch: outcome.history.best_epoch,
            stop_reason: outcome.history.stop_reason,
            final_lr: optimizer.current_lr(),
        };
        write_file(&tmp.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
        Ok((outcome.history, metrics, summary))
    })?;
    Ok(TrainArtifacts {
        dir,
        history,
        metrics,
        summary,
    })
}

/// Expands the originals into a generated dataset under `out_dir`.
pub fn cmd_gen_data(config: &ExperimentConfig, originals: Option<&Path>, out_dir: &Path) -> CliResult<(PathBuf, usize)> {
    config.validate()?;
    let source = originals
        .map(Path::to_path_buf)
        .or_else(|| config.data.originals.clone())
        .ok_or_else(|| CliError::Config("gen-data needs --originals or data.originals".into()))?;
    let originals = load_manifest(&source)?;
    let generated = generate_dataset(&originals, &config.data.augment, config.data.multiplier, config.seed)?;
    let count = generated.len();
    let manifest = publish_dir(out_dir, |tmp| Ok(write_dataset(&generated, tmp)?))?;
    Ok((out_dir.join(manifest.file_name().expect("manifest has a file name")), count))
}

/// Writes `count` synthetic blob samples as a dataset directory.
pub fn cmd_gen_synthetic(count: usize, size: (usize, usize), seed: u64, out_dir: &Path) -> CliResult<PathBuf> {
    let ds = blob_dataset(count, &BlobOptions::new(size.0, size.1), seed)?;
    let manifest = publish_dir(out_dir, |tmp| Ok(write_dataset(&ds, tmp)?))?;
    Ok(out_dir.join(manifest.file_name().expect("manifest has a file name")))
}

/// Writes the preprocessed pair plus `count` random transforms of it.
pub fn cmd_augment(config: &ExperimentConfig, image: &Path, mask: &Path, count: usize, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    config.data.augment.validate()?;
    let sample = Sample::new(read_image_png(image)?, read_mask_png(mask)?, "input")?;
    let pre = preprocess(&sample, &config.data.augment)?;
    publish_dir(out_dir, |tmp| {
        let mut written = Vec::new();
        for k in 0..=count {
            let (img, m) = if k == 0 {
                (pre.image.clone(), pre.mask.clone())
            } else {
                transform(&pre.image, &pre.mask, &config.data.augment, config.seed.wrapping_add(k as u64))?
            };
            let (ip, mp) = (format!("aug_{k:03}.png"), format!("aug_{k:03}_mask.png"));
            write_image_png(&tmp.join(&ip), &img)?;
            write_mask_png(&tmp.join(&mp), &m)?;
            written.push(out_dir.join(ip));
        }
        Ok(written)
    })
}

pub fn cmd_evaluate(checkpoint: &Path, manifest: &Path) -> CliResult<MetricsReport> {
    let (mut graph, _) = load_checkpoint(checkpoint)?;
    let test = load_manifest(manifest)?;
    Ok(evaluate(&mut graph, &test)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionSummary {
    pub height: usize,
    pub width: usize,
    /// Pixel count per class index (every model class listed).
    pub class_pixels: BTreeMap<usize, usize>,
}

fn read_any_image(path: &Path) -> CliResult<Tensor4<f32>> {
    if path.extension().is_some_and(|e| e == "raw") {
        Ok(read_raw(path)?.1)
    } else {
        Ok(read_image_png(path)?)
    }
}

/// Predicts a label map and writes it as a paletted PNG plus a JSON sidecar
/// (`<out>.json`). Inputs whose size the architecture cannot take are
/// zero-padded and the prediction cropped back.
pub fn cmd_predict(checkpoint: &Path, image: &Path, out_png: &Path) -> CliResult<PredictionSummary> {
    let (mut graph, _) = load_checkpoint(checkpoint)?;
    let img = read_any_image(image)?;
    let s = img.shape();
    let (padded, _) = pad_to_multiple(&img, None, graph.config().spatial_divisor());
    let full = graph.predict(&padded)?;
    let labels = (0..s.height)
        .flat_map(|y| full.labels[y * full.width..y * full.width + s.width].iter().copied())
        .collect();
    let pred = LabelMap::new(s.height, s.width, labels)?;
    let mut class_pixels: BTreeMap<usize, usize> = (0..graph.config().num_classes).map(|c| (c, 0)).collect();
    for &l in &pred.labels {
        *class_pixels.entry(l as usize).or_default() += 1;
    }
    write_paletted_png(out_png, &pred)?;
    let summary = PredictionSummary {
        height: s.height,
        width: s.width,
        class_pixels,
    };
    let mut sidecar = out_png.as_os_str().to_owned();
    sidecar.push(".json");
    write_file(Path::new(&sidecar), serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    Ok(summary)
}

pub fn cmd_params(model: &ModelConfig) -> CliResult<usize> {
    Ok(config_param_count(model)?)
}

/// The two small networks checked by default, with their input side length.
pub fn default_gradcheck_models() -> Vec<(String, ModelConfig, usize)> {
    vec![
        ("fcn 8/16/32/16/8".into(), ModelConfig::fcn(&[8, 16, 32, 16, 8], 3, 1, 1, 3), 8),
        ("unet 2/4/8/16/32".into(), ModelConfig::unet(&[2, 4, 8, 16, 32], 3, 2, 1, 1, 3), 16),
    ]
}

/// Finite-difference check of a freshly initialized model on a random input
/// and random one-hot targets derived from `seed`.
pub fn gradcheck_model(model: &ModelConfig, side: usize, seed: u64, options: &GradcheckOptions) -> CliResult<GradcheckReport> {
    let mut graph: Graph<f64> = build(model, seed)?;
    jitter_biases(&mut graph, 0.05, seed);
    let mut state = seed ^ 0x9E37_79B9_7F4A_7C15;
    let mut next = move || {
        // splitmix64
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    let shape = Shape4::new(1, side, side, model.num_channels);
    let input = Tensor4::from_fn(shape, |_, _, _, _| (next() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0);
    let labels = (0..side * side).map(|_| (next() % model.num_classes as u64) as u8).collect();
    let targets = LabelMap::new(side, side, labels)?.one_hot(model.num_classes)?;
    Ok(gradcheck(&mut graph, &input, &targets, options)?)
}
