//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use duet_core::dataset::Dataset;
use duet_core::duet::{DuetConfig, DuetMode};
use duet_core::nn::{Activation, EncoderConfig};
use duet_core::optim::AdamConfig;
use duet_core::model::TrainConfig;
use duet_core::probe::ProbeConfig;
use duet_core::transforms::{GroupSpec, StackItem, StackPreset, TransformKind};

use crate::checkpoint::family_from_name;
use crate::error::{io_err, LabError, LabResult};
use crate::synth::{synthesize, with_mirrors, SynthKind};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `oriented_bars`, `two_class_blobs`, `idx` or `cifar10bin`.
    pub dataset: String,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Synthetic training set size.
    pub n: usize,
    /// Synthetic held-out size, or the held-out count split off file data.
    pub test_n: usize,
    /// Append the horizontal mirror of every image.
    pub mirror: bool,
    pub structured: String,
    /// `auto` follows the structured transformation.
    pub target_family: String,
    pub stack: String,
    /// For `stack = custom`: `name:prob` items separated by commas.
    pub stack_items: String,
    pub lambda: f64,
    pub sigma: f64,
    pub groups: usize,
    pub content: usize,
    pub temperature: f64,
    pub proj_hidden: usize,
    pub proj_out: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mode: String,
    pub out: PathBuf,
    /// Save an extra checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub decoder_epochs: usize,
    pub decoder_hidden: usize,
    /// Share of decoder samples trained on shifted features.
    pub decoder_shift: f64,
    pub checkpoint: Option<PathBuf>,
    pub decoder: Option<PathBuf>,
    pub resolution: usize,
    pub eval_n: usize,
    pub steps: usize,
    pub image_index: usize,
    pub g: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "oriented_bars".into(),
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
            n: 2048,
            test_n: 256,
            mirror: false,
            structured: "rot360".into(),
            target_family: "auto".into(),
            stack: "rrc_plus_one".into(),
            stack_items: String::new(),
            lambda: 10.0,
            sigma: 0.2,
            groups: 8,
            content: 16,
            temperature: 0.5,
            proj_hidden: 16,
            proj_out: 64,
            hidden: vec![256, 128],
            epochs: 30,
            batch: 256,
            base_lr: 1e-3,
            warmup_epochs: 2.0,
            weight_decay: 1e-4,
            seed: 0,
            mode: "duet".into(),
            out: PathBuf::from("runs/default"),
            checkpoint_every: 10,
            probe_epochs: 200,
            probe_lr: 0.1,
            decoder_epochs: 0,
            decoder_hidden: 256,
            decoder_shift: 0.5,
            checkpoint: None,
            decoder: None,
            resolution: 20,
            eval_n: 64,
            steps: 8,
            image_index: 0,
            g: None,
        }
    }
}

fn bad(key: &str, value: &str) -> LabError {
    LabError::Config(format!("invalid value '{value}' for '{key}'"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> LabResult<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> LabResult<()> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = v.into(),
            "images" => self.images = opt_path(v),
            "labels" => self.labels = opt_path(v),
            "test_images" => self.test_images = opt_path(v),
            "test_labels" => self.test_labels = opt_path(v),
            "n" => self.n = num(key, v)?,
            "test_n" => self.test_n = num(key, v)?,
            "mirror" => self.mirror = num(key, v)?,
            "structured" => self.structured = v.into(),
            "target_family" => self.target_family = v.into(),
            "stack" => self.stack = v.into(),
            "stack_items" => self.stack_items = v.into(),
            "lambda" => self.lambda = num(key, v)?,
            "sigma" => self.sigma = num(key, v)?,
            "groups" => self.groups = num(key, v)?,
            "content" => self.content = num(key, v)?,
            "temperature" => self.temperature = num(key, v)?,
            "proj_hidden" => self.proj_hidden = num(key, v)?,
            "proj_out" => self.proj_out = num(key, v)?,
            "hidden" => {
                self.hidden = v
                    .split(',')
                    .map(|p| num(key, p.trim()))
                    .collect::<LabResult<_>>()?
            }
            "epochs" => self.epochs = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "base_lr" => self.base_lr = num(key, v)?,
            "warmup_epochs" => self.warmup_epochs = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "mode" => self.mode = v.into(),
            "out" => self.out = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "probe_epochs" => self.probe_epochs = num(key, v)?,
            "probe_lr" => self.probe_lr = num(key, v)?,
            "decoder_epochs" => self.decoder_epochs = num(key, v)?,
            "decoder_hidden" => self.decoder_hidden = num(key, v)?,
            "decoder_shift" => self.decoder_shift = num(key, v)?,
            "checkpoint" => self.checkpoint = opt_path(v),
            "decoder" => self.decoder = opt_path(v),
            "resolution" => self.resolution = num(key, v)?,
            "eval_n" => self.eval_n = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "image_index" => self.image_index = num(key, v)?,
            "g" => self.g = if v.is_empty() { None } else { Some(num(key, v)?) },
            _ => return Err(LabError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dataset", self.dataset.clone()),
            ("images", show_path(&self.images)),
            ("labels", show_path(&self.labels)),
            ("test_images", show_path(&self.test_images)),
            ("test_labels", show_path(&self.test_labels)),
            ("n", self.n.to_string()),
            ("test_n", self.test_n.to_string()),
            ("mirror", self.mirror.to_string()),
            ("structured", self.structured.clone()),
            ("target_family", self.target_family.clone()),
            ("stack", self.stack.clone()),
            ("stack_items", self.stack_items.clone()),
            ("lambda", self.lambda.to_string()),
            ("sigma", self.sigma.to_string()),
            ("groups", self.groups.to_string()),
            ("content", self.content.to_string()),
            ("temperature", self.temperature.to_string()),
            ("proj_hidden", self.proj_hidden.to_string()),
            ("proj_out", self.proj_out.to_string()),
            (
                "hidden",
                self.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            ),
            ("epochs", self.epochs.to_string()),
            ("batch", self.batch.to_string()),
            ("base_lr", self.base_lr.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("seed", self.seed.to_string()),
            ("mode", self.mode.clone()),
            ("out", self.out.display().to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("probe_epochs", self.probe_epochs.to_string()),
            ("probe_lr", self.probe_lr.to_string()),
            ("decoder_epochs", self.decoder_epochs.to_string()),
            ("decoder_hidden", self.decoder_hidden.to_string()),
            ("decoder_shift", self.decoder_shift.to_string()),
            ("checkpoint", show_path(&self.checkpoint)),
            ("decoder", show_path(&self.decoder)),
            ("resolution", self.resolution.to_string()),
            ("eval_n", self.eval_n.to_string()),
            ("steps", self.steps.to_string()),
            ("image_index", self.image_index.to_string()),
            ("g", self.g.map(|g| g.to_string()).unwrap_or_default()),
        ]
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> LabResult<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LabError::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> LabResult<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> LabResult<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// `--key value` or `--key=value` pairs.
    pub fn apply_overrides(&mut self, args: &[String]) -> LabResult<()> {
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let key = a
                .strip_prefix("--")
                .ok_or_else(|| LabError::Config(format!("expected --key, found '{a}'")))?;
            match key.split_once('=') {
                Some((k, v)) => self.set(k, v)?,
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| LabError::Config(format!("--{key} needs a value")))?;
                    self.set(key, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn group_spec(&self) -> LabResult<GroupSpec> {
        let spec = GroupSpec::new(TransformKind::from_name(&self.structured)?);
        Ok(match self.target_family.as_str() {
            "auto" => spec,
            other => {
                let f = family_from_name(other).ok_or_else(|| bad("target_family", other))?;
                spec.with_target_family(f)
            }
        })
    }

    pub fn stack_items(&self) -> LabResult<Vec<StackItem>> {
        if self.stack != "custom" {
            return Ok(StackPreset::from_name(&self.stack)?.items());
        }
        let mut items = Vec::new();
        for part in self.stack_items.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, prob) = part.split_once(':').unwrap_or((part, "1"));
            let prob: f64 = num("stack_items", prob)?;
            items.push(match name {
                "identity" => StackItem::Identity,
                "color_jitter" => StackItem::ColorJitter { prob },
                "blur" => StackItem::GaussianBlur {
                    sigma_lo: 0.1,
                    sigma_hi: 2.0,
                    prob,
                },
                other => StackItem::Transform {
                    spec: GroupSpec::new(TransformKind::from_name(other)?),
                    prob,
                },
            });
        }
        if items.is_empty() {
            return Err(LabError::Config("custom stack has no items".into()));
        }
        Ok(items)
    }

    pub fn duet_config(&self) -> LabResult<DuetConfig> {
        let cfg = DuetConfig {
            content: self.content,
            groups: self.groups,
            lambda: self.lambda,
            sigma: self.sigma,
            target_family: self.group_spec()?.target_family,
            temperature: self.temperature,
            proj_hidden: self.proj_hidden,
            proj_out: self.proj_out,
            mode: DuetMode::from_name(&self.mode)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            hidden_dims: self.hidden.clone(),
            output_dim: self.content * self.groups,
            activation: Activation::Relu,
            final_bn: true,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            base_lr: self.base_lr,
            warmup_epochs: self.warmup_epochs,
            seed: self.seed,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            epochs: self.probe_epochs,
            lr: self.probe_lr,
        }
    }

    /// `(train, held-out)` datasets.
    pub fn datasets(&self) -> LabResult<(Dataset, Dataset)> {
        let (train, test) = match self.dataset.as_str() {
            "idx" | "cifar10bin" => {
                let load = |images: &Option<PathBuf>, labels: &Option<PathBuf>, tag: &str| -> LabResult<Dataset> {
                    let images = images
                        .as_ref()
                        .ok_or_else(|| LabError::Config(format!("'{tag}images' is required for {}", self.dataset)))?;
                    if self.dataset == "idx" {
                        let labels = labels
                            .as_ref()
                            .ok_or_else(|| LabError::Config(format!("'{tag}labels' is required for idx")))?;
                        crate::idx::load_idx(images, labels, &self.dataset, self.seed)
                    } else {
                        crate::cifar::load_cifar(images, &self.dataset, self.seed)
                    }
                };
                let all = load(&self.images, &self.labels, "")?;
                if self.test_images.is_some() {
                    (all, load(&self.test_images, &self.test_labels, "test_")?)
                } else {
                    if self.test_n >= all.len() {
                        return Err(LabError::Config("test_n must leave training data".into()));
                    }
                    all.split_at(all.len() - self.test_n)
                }
            }
            name => {
                let kind = SynthKind::from_name(name)?;
                (
                    synthesize(kind, self.n, self.seed)?,
                    synthesize(kind, self.test_n.max(1), self.seed ^ 0x7E57_0000)?,
                )
            }
        };
        if self.mirror {
            Ok((with_mirrors(&train)?, with_mirrors(&test)?))
        } else {
            Ok((train, test))
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.duet"))
    }

    /// Explicit path, else `decoder.duet` beside the checkpoint.
    pub fn decoder_path(&self) -> PathBuf {
        self.decoder
            .clone()
            .unwrap_or_else(|| self.checkpoint_path().with_file_name("decoder.duet"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("g", "0.3").unwrap();
        c.set("hidden", "64, 32").unwrap();
        c.set("images", "/tmp/x.idx").unwrap();
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_unknown_keys() {
        let c = RunConfig::from_text("# sweep\nsigma = 0.5  # wide\n\n").unwrap();
        assert_eq!(c.sigma, 0.5);
        assert!(RunConfig::from_text("sigmaa = 1").is_err());
        assert!(RunConfig::from_text("sigma 1").is_err());
    }

    #[test]
    fn overrides_in_both_forms() {
        let mut c = RunConfig::default();
        let args: Vec<String> = ["--lambda", "1000", "--seed=7"].iter().map(|s| s.to_string()).collect();
        c.apply_overrides(&args).unwrap();
        assert_eq!((c.lambda, c.seed), (1000.0, 7));
        assert!(c.apply_overrides(&["--epochs".to_string()]).is_err());
    }

    #[test]
    fn custom_stack_parses() {
        let mut c = RunConfig::default();
        c.set("stack", "custom").unwrap();
        c.set("stack_items", "rrc:1.0, hflip:0.5, color_jitter:0.8").unwrap();
        assert_eq!(c.stack_items().unwrap().len(), 3);
    }
}
