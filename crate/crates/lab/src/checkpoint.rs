//! Binary checkpoints: `"DUET"`, u32 version, u64 manifest length, JSON
//! manifest, then every tensor as little-endian f32 in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use duet_core::decoder::Decoder;
use duet_core::duet::{DuetConfig, DuetMode};
use duet_core::model::ModelState;
use duet_core::nn::{Activation, EncoderConfig, Module};
use duet_core::optim::AdamConfig;
use duet_core::targets::TargetFamily;
use duet_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, LabError, LabResult};

pub const MAGIC: &[u8; 4] = b"DUET";
pub const VERSION: u32 = 1;
const HEADER: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// First epoch whose sample stream has not been consumed.
    pub next_epoch: usize,
    pub optimizer_step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub tensors: Vec<TensorEntry>,
    /// Architecture and loss settings needed to rebuild the model.
    pub model: BTreeMap<String, String>,
    /// Snapshot of the run configuration that produced the checkpoint.
    pub run: BTreeMap<String, String>,
    pub epoch: usize,
    pub rng: RngState,
}

fn blob_len(entries: &[TensorEntry]) -> usize {
    entries.iter().map(|e| 4 * e.shape.iter().product::<usize>()).sum()
}

pub fn encode(manifest: &Manifest, tensors: &[&Tensor]) -> LabResult<Vec<u8>> {
    let json = serde_json::to_vec(manifest)?;
    let mut out = Vec::with_capacity(HEADER + json.len() + blob_len(&manifest.tensors));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse and validate; tensors are returned in manifest order.
pub fn decode(bytes: &[u8]) -> LabResult<(Manifest, Vec<Tensor>)> {
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(LabError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(LabError::Checkpoint(format!("unsupported version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(HEADER..HEADER.saturating_add(mlen))
        .ok_or_else(|| LabError::Checkpoint("manifest runs past end of file".into()))?;
    let manifest: Manifest = serde_json::from_slice(json)?;
    let blobs = &bytes[HEADER + mlen..];
    let expected = blob_len(&manifest.tensors);
    if blobs.len() != expected {
        return Err(LabError::LengthMismatch {
            expected,
            found: blobs.len(),
        });
    }
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        if e.offset != offset {
            return Err(LabError::Checkpoint(format!("tensor '{}' has offset {}, expected {offset}", e.name, e.offset)));
        }
        let n: usize = e.shape.iter().product();
        let data = blobs[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        tensors.push(Tensor::new(e.shape.clone(), data)?);
        offset += 4 * n;
    }
    Ok((manifest, tensors))
}

fn entries(named: &[(String, &Tensor)]) -> Vec<TensorEntry> {
    let mut offset = 0;
    named
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 4 * t.len();
            e
        })
        .collect()
}

fn fill(slots: Vec<(String, &mut Tensor)>, manifest: &Manifest, tensors: Vec<Tensor>) -> LabResult<()> {
    if slots.len() != tensors.len() {
        return Err(LabError::Checkpoint(format!(
            "checkpoint holds {} tensors, model expects {}",
            tensors.len(),
            slots.len()
        )));
    }
    let mut by_name: BTreeMap<&str, Tensor> = manifest
        .tensors
        .iter()
        .map(|e| e.name.as_str())
        .zip(tensors)
        .collect();
    for (name, slot) in slots {
        let t = by_name
            .remove(name.as_str())
            .ok_or_else(|| LabError::Checkpoint(format!("missing tensor '{name}'")))?;
        if t.shape() != slot.shape() {
            return Err(LabError::Checkpoint(format!(
                "tensor '{name}' has shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(())
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> LabResult<T> {
    map.get(key)
        .ok_or_else(|| LabError::Checkpoint(format!("manifest lacks '{key}'")))?
        .parse()
        .map_err(|_| LabError::Checkpoint(format!("manifest value for '{key}' is malformed")))
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn split(s: &str) -> LabResult<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| LabError::Checkpoint(format!("bad dimension list '{s}'"))))
        .collect()
}

pub fn family_name(f: TargetFamily) -> &'static str {
    match f {
        TargetFamily::Gaussian => "gaussian",
        TargetFamily::VonMises => "von_mises",
    }
}

pub fn family_from_name(s: &str) -> Option<TargetFamily> {
    match s {
        "gaussian" => Some(TargetFamily::Gaussian),
        "von_mises" => Some(TargetFamily::VonMises),
        _ => None,
    }
}

fn model_map(state: &ModelState) -> BTreeMap<String, String> {
    let d = &state.duet;
    let enc = &state.encoder;
    let hidden: Vec<usize> = enc.layers[..enc.layers.len() - 1].iter().map(|l| l.output_dim()).collect();
    let a = &state.optimizer.config;
    [
        ("content", d.content.to_string()),
        ("groups", d.groups.to_string()),
        ("lambda", d.lambda.to_string()),
        ("sigma", d.sigma.to_string()),
        ("target_family", family_name(d.target_family).to_string()),
        ("temperature", d.temperature.to_string()),
        ("proj_hidden", d.proj_hidden.to_string()),
        ("proj_out", d.proj_out.to_string()),
        ("mode", d.mode.name().to_string()),
        ("input_dim", enc.input_dim().to_string()),
        ("hidden", join(&hidden)),
        ("final_bn", enc.bn.is_some().to_string()),
        ("adam_beta1", a.beta1.to_string()),
        ("adam_beta2", a.beta2.to_string()),
        ("adam_eps", a.eps.to_string()),
        ("weight_decay", a.weight_decay.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn model_named(state: &ModelState) -> Vec<(String, &Tensor)> {
    let mut named = state.encoder.named_tensors("enc");
    named.extend(state.head.named_tensors("head"));
    for (k, (m, v)) in state.optimizer.m.iter().zip(&state.optimizer.v).enumerate() {
        named.push((format!("opt.m.{k}"), m));
        named.push((format!("opt.v.{k}"), v));
    }
    named
}

pub fn encode_model(state: &ModelState, seed: u64, run: &BTreeMap<String, String>) -> LabResult<Vec<u8>> {
    let named = model_named(state);
    let manifest = Manifest {
        kind: "model".into(),
        tensors: entries(&named),
        model: model_map(state),
        run: run.clone(),
        epoch: state.epoch,
        rng: RngState {
            seed,
            next_epoch: state.epoch,
            optimizer_step: state.optimizer.step,
        },
    };
    let tensors: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
    encode(&manifest, &tensors)
}

pub fn decode_model(bytes: &[u8]) -> LabResult<(ModelState, Manifest)> {
    let (manifest, tensors) = decode(bytes)?;
    if manifest.kind != "model" {
        return Err(LabError::Checkpoint(format!("expected a model checkpoint, found '{}'", manifest.kind)));
    }
    let m = &manifest.model;
    let family: String = get(m, "target_family")?;
    let mode: String = get(m, "mode")?;
    let duet = DuetConfig {
        content: get(m, "content")?,
        groups: get(m, "groups")?,
        lambda: get(m, "lambda")?,
        sigma: get(m, "sigma")?,
        target_family: family_from_name(&family)
            .ok_or_else(|| LabError::Checkpoint(format!("unknown target family '{family}'")))?,
        temperature: get(m, "temperature")?,
        proj_hidden: get(m, "proj_hidden")?,
        proj_out: get(m, "proj_out")?,
        mode: DuetMode::from_name(&mode)?,
    };
    let enc = EncoderConfig {
        input_dim: get(m, "input_dim")?,
        hidden_dims: split(&get::<String>(m, "hidden")?)?,
        output_dim: duet.dim(),
        activation: Activation::Relu,
        final_bn: get(m, "final_bn")?,
    };
    let adam = AdamConfig {
        beta1: get(m, "adam_beta1")?,
        beta2: get(m, "adam_beta2")?,
        eps: get(m, "adam_eps")?,
        weight_decay: get(m, "weight_decay")?,
    };
    let mut state = ModelState::new(duet, &enc, adam, manifest.rng.seed)?;
    state.epoch = manifest.epoch;
    state.optimizer.step = manifest.rng.optimizer_step;
    {
        let ModelState {
            encoder,
            head,
            optimizer,
            ..
        } = &mut state;
        let mut slots = encoder.named_tensors_mut("enc");
        slots.extend(head.named_tensors_mut("head"));
        for (k, (mm, vv)) in optimizer.m.iter_mut().zip(optimizer.v.iter_mut()).enumerate() {
            slots.push((format!("opt.m.{k}"), mm));
            slots.push((format!("opt.v.{k}"), vv));
        }
        fill(slots, &manifest, tensors)?;
    }
    Ok((state, manifest))
}

pub fn encode_decoder(dec: &Decoder, run: &BTreeMap<String, String>) -> LabResult<Vec<u8>> {
    let mut named = dec.net.named_tensors("dec");
    for (k, (m, v)) in dec.optimizer.m.iter().zip(&dec.optimizer.v).enumerate() {
        named.push((format!("opt.m.{k}"), m));
        named.push((format!("opt.v.{k}"), v));
    }
    let (h, w, c) = dec.image_dims;
    let hidden = dec.net.layers[0].output_dim();
    let model = [
        ("input_dim", dec.input_dim()),
        ("hidden", hidden),
        ("height", h),
        ("width", w),
        ("channels", c),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let manifest = Manifest {
        kind: "decoder".into(),
        tensors: entries(&named),
        model,
        run: run.clone(),
        epoch: 0,
        rng: RngState {
            seed: 0,
            next_epoch: 0,
            optimizer_step: dec.optimizer.step,
        },
    };
    let tensors: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
    encode(&manifest, &tensors)
}

pub fn decode_decoder(bytes: &[u8]) -> LabResult<Decoder> {
    let (manifest, tensors) = decode(bytes)?;
    if manifest.kind != "decoder" {
        return Err(LabError::Checkpoint(format!("expected a decoder checkpoint, found '{}'", manifest.kind)));
    }
    let m = &manifest.model;
    let dims = (get(m, "height")?, get(m, "width")?, get(m, "channels")?);
    let mut dec = Decoder::new(get(m, "input_dim")?, get(m, "hidden")?, dims, 0)?;
    dec.optimizer.step = manifest.rng.optimizer_step;
    {
        let Decoder { net, optimizer, .. } = &mut dec;
        let mut slots = net.named_tensors_mut("dec");
        for (k, (mm, vv)) in optimizer.m.iter_mut().zip(optimizer.v.iter_mut()).enumerate() {
            slots.push((format!("opt.m.{k}"), mm));
            slots.push((format!("opt.v.{k}"), vv));
        }
        fill(slots, &manifest, tensors)?;
    }
    Ok(dec)
}

pub fn save_model(state: &ModelState, seed: u64, run: &BTreeMap<String, String>, path: &Path) -> LabResult<()> {
    std::fs::write(path, encode_model(state, seed, run)?).map_err(io_err(path))
}

pub fn load_model(path: &Path) -> LabResult<(ModelState, Manifest)> {
    decode_model(&std::fs::read(path).map_err(io_err(path))?)
}

pub fn save_decoder(dec: &Decoder, run: &BTreeMap<String, String>, path: &Path) -> LabResult<()> {
    std::fs::write(path, encode_decoder(dec, run)?).map_err(io_err(path))
}

pub fn load_decoder(path: &Path) -> LabResult<Decoder> {
    decode_decoder(&std::fs::read(path).map_err(io_err(path))?)
}
