//! The `duet-lab` subcommands. Each writes its outputs under the run's
//! output directory and removes whatever it wrote if it fails.

use std::path::{Path, PathBuf};

use duet_core::dataset::{images_to_batch, Dataset};
use duet_core::decoder::{train_decoder_epoch, train_decoder_epoch_shifted, Decoder};
use duet_core::equivariance::{
    aggregate_group_marginals, equivariance_bound_report, equivariance_heatmap, param_distance,
    recover_parameter, recover_transformed, transform_features, FeatureTransformContext,
};
use duet_core::model::{train_epoch, ModelState, Representer, TrainConfig};
use duet_core::probe::fit_probe;
use duet_core::rng::rng_from;
use duet_core::transforms::Image;
use duet_core::Tensor;
use rand::Rng;
use serde::Serialize;

use crate::checkpoint::{load_decoder, load_model, save_decoder, save_model};
use crate::config::RunConfig;
use crate::error::{io_err, LabError, LabResult};
use crate::export::{export_matrix, image_strip, write_metrics, write_text, MatrixSidecar, MetricsRow};

/// Files written so far; deleted on drop unless the command finished.
struct Outputs {
    files: Vec<PathBuf>,
    created_dir: Option<PathBuf>,
    done: bool,
}

impl Outputs {
    fn in_dir(dir: &Path) -> LabResult<Self> {
        let created_dir = if dir.exists() {
            None
        } else {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            Some(dir.to_path_buf())
        };
        Ok(Self {
            files: Vec::new(),
            created_dir,
            done: false,
        })
    }

    fn add(&mut self, path: PathBuf) -> PathBuf {
        self.files.push(path.clone());
        path
    }

    fn finish(mut self) -> Vec<PathBuf> {
        self.done = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        if let Some(d) = &self.created_dir {
            let _ = std::fs::remove_dir(d);
        }
    }
}

/// What a command printed and wrote.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn features(model: &ModelState, ds: &Dataset) -> LabResult<Tensor> {
    Ok(model.encode(&images_to_batch(&ds.images)?)?)
}

fn labels(ds: &Dataset) -> LabResult<&[usize]> {
    ds.labels
        .as_deref()
        .ok_or_else(|| LabError::Config(format!("dataset '{}' has no labels", ds.name)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeResult {
    pub train_acc: f64,
    pub test_acc: f64,
    pub dim: usize,
}

pub fn probe_model(model: &ModelState, train: &Dataset, test: &Dataset, cfg: &RunConfig) -> LabResult<ProbeResult> {
    let (ytr, yte) = (labels(train)?, labels(test)?);
    let classes = train.num_classes().max(test.num_classes());
    let ftr = features(model, train)?;
    let fte = features(model, test)?;
    let probe = fit_probe(&ftr, ytr, classes, &cfg.probe_config())?;
    Ok(ProbeResult {
        train_acc: probe.accuracy(&ftr, ytr)?,
        test_acc: probe.accuracy(&fte, yte)?,
        dim: ftr.cols(),
    })
}

fn eval_images(test: &Dataset, n: usize) -> LabResult<&[Image]> {
    if test.is_empty() {
        return Err(LabError::Config("held-out set is empty".into()));
    }
    Ok(&test.images[..n.clamp(1, test.len())])
}

pub fn cmd_train(cfg: &RunConfig) -> LabResult<Report> {
    let (train, test) = cfg.datasets()?;
    let spec = cfg.group_spec()?;
    let stack = cfg.stack_items()?;
    let tc = cfg.train_config();
    if cfg.epochs > 0 && !(cfg.warmup_epochs < cfg.epochs as f64) {
        return Err(LabError::Config("warmup_epochs must be shorter than epochs".into()));
    }
    let enc = cfg.encoder_config(train.input_dim());
    let mut state = ModelState::new(cfg.duet_config()?, &enc, cfg.adam_config(), cfg.seed)?;
    let run = cfg.to_map();
    let mut out = Outputs::in_dir(&cfg.out)?;
    write_text(&out.add(cfg.out.join("config.txt")), &cfg.to_text())?;

    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut seen = String::from("epoch,index,g\n");
    let mut lines = Vec::new();
    for epoch in 0..cfg.epochs {
        let m = train_epoch(&mut state, &train, &stack, &spec, &tc, epoch)?;
        for (i, g) in &m.seen {
            seen.push_str(&format!("{epoch},{i},{g}\n"));
        }
        lines.push(format!(
            "epoch {epoch}: loss {} content {} group {} lr {}",
            m.loss_total, m.loss_content, m.loss_group, m.lr
        ));
        rows.push(MetricsRow {
            epoch,
            loss_total: m.loss_total,
            loss_content: m.loss_content,
            loss_group: m.loss_group,
            lr: m.lr,
            probe_acc: None,
        });
        let done = epoch + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.epochs {
            let p = out.add(cfg.out.join(format!("model_epoch{done}.duet")));
            save_model(&state, cfg.seed, &run, &p)?;
        }
    }
    if let Some(last) = rows.last_mut() {
        if train.labels.is_some() && test.labels.is_some() {
            let r = probe_model(&state, &train, &test, cfg)?;
            last.probe_acc = Some(r.test_acc);
            lines.push(format!("probe test accuracy {}", r.test_acc));
        }
    }
    save_model(&state, cfg.seed, &run, &out.add(cfg.checkpoint_path()))?;
    write_metrics(&rows, &out.add(cfg.out.join("metrics.csv")))?;
    write_text(&out.add(cfg.out.join("seen_g.csv")), &seen)?;

    if cfg.decoder_epochs > 0 {
        let dims = train
            .image_dims()
            .ok_or_else(|| LabError::Config("empty training set".into()))?;
        let mut dec = Decoder::new(state.duet.dim(), cfg.decoder_hidden, dims, cfg.seed)?;
        let dtc = TrainConfig {
            epochs: cfg.decoder_epochs,
            warmup_epochs: 0.0,
            ..tc.clone()
        };
        let ctx = FeatureTransformContext::from_model(&state)?;
        for epoch in 0..cfg.decoder_epochs {
            let l = if cfg.decoder_shift > 0.0 {
                train_decoder_epoch_shifted(&mut dec, &state, &train, &spec, &ctx, cfg.decoder_shift, &dtc, epoch)?
            } else {
                train_decoder_epoch(&mut dec, &state, &train, &stack, &spec, &dtc, epoch)?
            };
            lines.push(format!("decoder epoch {epoch}: reconstruction {l}"));
        }
        save_decoder(&dec, &run, &out.add(cfg.decoder_path()))?;
    }
    Ok(Report {
        lines,
        files: out.finish(),
    })
}

pub fn cmd_probe(cfg: &RunConfig) -> LabResult<Report> {
    let (model, _) = load_model(&cfg.checkpoint_path())?;
    let (train, test) = cfg.datasets()?;
    let r = probe_model(&model, &train, &test, cfg)?;
    let mut out = Outputs::in_dir(&cfg.out)?;
    write_text(&out.add(cfg.out.join("probe.json")), &serde_json::to_string_pretty(&r)?)?;
    Ok(Report {
        lines: vec![format!("train_acc {} test_acc {} dim {}", r.train_acc, r.test_acc, r.dim)],
        files: out.finish(),
    })
}

#[derive(Debug, Serialize)]
struct HeatmapSummary {
    spec: String,
    resolution: usize,
    n_images: usize,
    hit_rate: f64,
    colsum_hit_rate: f64,
    grid: Vec<f64>,
    recovery_error: Vec<f64>,
}

pub fn cmd_heatmap(cfg: &RunConfig) -> LabResult<Report> {
    let (model, _) = load_model(&cfg.checkpoint_path())?;
    let (_, test) = cfg.datasets()?;
    let spec = cfg.group_spec()?;
    let images = eval_images(&test, cfg.eval_n)?;
    let r = equivariance_heatmap(&model, images, &spec, cfg.resolution, cfg.seed)?;
    let sidecar = MatrixSidecar {
        spec: spec.name().to_string(),
        resolution: cfg.resolution,
        n_images: r.n_images,
    };
    let mut out = Outputs::in_dir(&cfg.out)?;
    for stem in ["heatmap", "heatmap_colsum"] {
        for ext in ["csv", "json", "pgm"] {
            out.add(cfg.out.join(format!("{stem}.{ext}")));
        }
    }
    export_matrix(&r.heatmap, &sidecar, &cfg.out, "heatmap")?;
    export_matrix(&r.colsum_heatmap, &sidecar, &cfg.out, "heatmap_colsum")?;
    let summary = HeatmapSummary {
        spec: sidecar.spec.clone(),
        resolution: cfg.resolution,
        n_images: r.n_images,
        hit_rate: r.hit_rate,
        colsum_hit_rate: r.colsum_hit_rate,
        grid: r.grid.clone(),
        recovery_error: r.recovery_error.clone(),
    };
    write_text(
        &out.add(cfg.out.join("heatmap_summary.json")),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(Report {
        lines: vec![format!(
            "hit_rate {} colsum_hit_rate {} over {} images",
            r.hit_rate, r.colsum_hit_rate, r.n_images
        )],
        files: out.finish(),
    })
}

/// Uniform parameters for the held-out images, or a fixed `g` when given.
fn recovery_params(cfg: &RunConfig, n: usize) -> Vec<f64> {
    let mut rng = rng_from(cfg.seed, &[0x2EC0]);
    (0..n).map(|_| cfg.g.unwrap_or_else(|| rng.gen::<f64>())).collect()
}

pub fn cmd_recover(cfg: &RunConfig) -> LabResult<Report> {
    let (model, _) = load_model(&cfg.checkpoint_path())?;
    let (_, test) = cfg.datasets()?;
    let spec = cfg.group_spec()?;
    let images = eval_images(&test, cfg.eval_n)?;
    let gs = recovery_params(cfg, images.len());
    let rec = recover_transformed(&model, images, &gs, &spec, cfg.seed)?;
    let cyclic = model.target_shape()?.is_cyclic();
    let mut csv = String::from("index,g,recovered,error\n");
    let mut total = 0.0;
    for (i, (g, r)) in gs.iter().zip(&rec).enumerate() {
        let e = param_distance(*g, *r, cyclic);
        total += e;
        csv.push_str(&format!("{i},{g},{r},{e}\n"));
    }
    let mae = total / rec.len() as f64;
    let mut out = Outputs::in_dir(&cfg.out)?;
    write_text(&out.add(cfg.out.join("recover.csv")), &csv)?;
    Ok(Report {
        lines: vec![format!("recovery MAE {mae} over {} images", rec.len())],
        files: out.finish(),
    })
}

pub fn cmd_ambiguity(cfg: &RunConfig) -> LabResult<Report> {
    let (model, _) = load_model(&cfg.checkpoint_path())?;
    let (_, test) = cfg.datasets()?;
    let images = eval_images(&test, cfg.eval_n)?;
    let p = aggregate_group_marginals(&model, images)?;
    let part = model.partition()?;
    let mut csv = String::from("bin,center,mass\n");
    for (j, m) in p.iter().enumerate() {
        csv.push_str(&format!("{j},{},{m}\n", part.center(j)));
    }
    let mut out = Outputs::in_dir(&cfg.out)?;
    write_text(&out.add(cfg.out.join("ambiguity.csv")), &csv)?;
    let shown: Vec<String> = p.iter().map(|v| format!("{v:.4}")).collect();
    Ok(Report {
        lines: vec![format!("aggregated P(g|x): [{}]", shown.join(", "))],
        files: out.finish(),
    })
}

fn read_seen(path: &Path) -> LabResult<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .skip(1)
        .map(|l| {
            l.rsplit(',')
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| LabError::Config(format!("{}: bad row '{l}'", path.display())))
        })
        .collect()
}

pub fn cmd_bound(cfg: &RunConfig) -> LabResult<Report> {
    let ckpt = cfg.checkpoint_path();
    let (model, _) = load_model(&ckpt)?;
    let seen_path = ckpt.with_file_name("seen_g.csv");
    let seen = read_seen(&seen_path)?;
    let (_, test) = cfg.datasets()?;
    let spec = cfg.group_spec()?;
    let image = test
        .images
        .get(cfg.image_index)
        .ok_or_else(|| LabError::Config(format!("image_index {} out of range", cfg.image_index)))?;
    let res = cfg.resolution.max(2);
    let probes: Vec<f64> = (0..res).map(|k| k as f64 / (res - 1) as f64).collect();
    let rows = equivariance_bound_report(&model, image, &spec, &seen, &probes, cfg.seed)?;
    let mut csv = String::from("g,observed,observed_colsum,min_distance,l_tg,lf_ltau_lower,bound\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.g, r.observed, r.observed_colsum, r.min_distance, r.l_tg, r.lf_ltau_lower, r.bound
        ));
    }
    let mut out = Outputs::in_dir(&cfg.out)?;
    write_text(&out.add(cfg.out.join("bound.csv")), &csv)?;
    let l_tg = rows.first().map_or(0.0, |r| r.l_tg);
    Ok(Report {
        lines: vec![format!("{} probes, {} seen parameters, L_Tg {l_tg}", rows.len(), seen.len())],
        files: out.finish(),
    })
}

/// Decoded frames of `T_g(f(x))` for `g = k / steps`, plus the parameter
/// recovered from each re-encoded frame. The `g = 0` frame decodes `f(x)`
/// itself.
pub fn generation_frames(model: &ModelState, dec: &Decoder, image: &Image, steps: usize) -> LabResult<(Vec<Image>, Vec<f64>)> {
    let d = model.duet.dim();
    if dec.input_dim() != d {
        return Err(LabError::Core(duet_core::Error::Shape {
            op: "generate",
            expected: vec![d],
            got: vec![dec.input_dim()],
        }));
    }
    if steps == 0 {
        return Err(LabError::Config("steps must be positive".into()));
    }
    let z = model.encode(&images_to_batch(std::slice::from_ref(image))?)?;
    let ctx = FeatureTransformContext::from_model(model)?;
    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        let g = k as f64 / steps as f64;
        rows.push(if k == 0 {
            z.row(0).to_vec()
        } else {
            transform_features(z.row(0), model.duet.content, g, &ctx)?
        });
    }
    let frames = dec.decode(&Tensor::from_rows(&rows)?)?;
    let re = model.encode(&images_to_batch(&frames)?)?;
    let shape = model.target_shape()?;
    let part = model.partition()?;
    let rec = (0..re.rows())
        .map(|r| {
            let rep = model.representation(re.row(r))?;
            recover_parameter(&rep.group_marginal, shape, part)
        })
        .collect::<duet_core::Result<Vec<_>>>()?;
    Ok((frames, rec))
}

/// Number of consecutive frames whose recovered parameter moves forward.
/// For cyclic parameters the step from the last frame back to the first
/// counts too, and moves are taken modulo 1.
pub fn forward_steps(rec: &[f64], cyclic: bool) -> usize {
    let mut pairs: Vec<(f64, f64)> = rec.windows(2).map(|w| (w[0], w[1])).collect();
    if cyclic && rec.len() > 1 {
        pairs.push((rec[rec.len() - 1], rec[0]));
    }
    pairs
        .into_iter()
        .filter(|(a, b)| {
            let d = b - a;
            if cyclic {
                let m = d.rem_euclid(1.0);
                m > 0.0 && m < 0.5
            } else {
                d > 0.0
            }
        })
        .count()
}

pub fn cmd_generate(cfg: &RunConfig) -> LabResult<Report> {
    let (model, _) = load_model(&cfg.checkpoint_path())?;
    let dec = load_decoder(&cfg.decoder_path())?;
    let (_, test) = cfg.datasets()?;
    let image = test
        .images
        .get(cfg.image_index)
        .ok_or_else(|| LabError::Config(format!("image_index {} out of range", cfg.image_index)))?;
    let (frames, rec) = generation_frames(&model, &dec, image, cfg.steps)?;
    let strip = image_strip(&frames)?;
    let ext = if image.channels() == 1 { "pgm" } else { "ppm" };
    let mut out = Outputs::in_dir(&cfg.out)?;
    let strip_path = out.add(cfg.out.join(format!("generate.{ext}")));
    std::fs::write(&strip_path, strip).map_err(io_err(&strip_path))?;
    let mut csv = String::from("step,g,recovered\n");
    for (k, r) in rec.iter().enumerate() {
        csv.push_str(&format!("{k},{},{r}\n", k as f64 / cfg.steps as f64));
    }
    write_text(&out.add(cfg.out.join("generate.csv")), &csv)?;
    let cyclic = model.target_shape()?.is_cyclic();
    let fwd = forward_steps(&rec, cyclic);
    let total = if cyclic { frames.len() } else { frames.len().saturating_sub(1) };
    Ok(Report {
        lines: vec![format!(
            "{} frames; recovered parameter advances on {fwd} of {total} steps",
            frames.len()
        )],
        files: out.finish(),
    })
}
