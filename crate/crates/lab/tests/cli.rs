use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use duet_core::dataset::images_to_batch;
use duet_core::model::Representer;
use duet_core::probe::{fit_probe, ProbeConfig};
use duet_core::rng::rng_from;
use duet_core::Tensor;
use duet_lab::checkpoint::{load_decoder, load_model};
use duet_lab::commands::{forward_steps, generation_frames, probe_model};
use duet_lab::export::parse_metrics_csv;
use duet_lab::RunConfig;
use rand::Rng;

const SMALL: &[&str] = &[
    "--n", "64", "--test_n", "32", "--epochs", "2", "--batch", "32", "--hidden", "32,16", "--content", "4",
    "--groups", "4", "--proj_hidden", "8", "--proj_out", "8", "--warmup_epochs", "0.5", "--stack", "identity",
    "--eval_n", "8", "--probe_epochs", "50",
];

fn lab(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let o = Command::new(env!("CARGO_BIN_EXE_duet-lab"))
        .arg(cmd)
        .args(SMALL)
        .args(["--out", out.to_str().unwrap()])
        .args(extra)
        .output()
        .unwrap();
    o
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn small_config(out: &Path, extra: &[&str]) -> RunConfig {
    let mut args: Vec<String> = SMALL.iter().map(|s| s.to_string()).collect();
    args.extend(["--out".to_string(), out.display().to_string()]);
    args.extend(extra.iter().map(|s| s.to_string()));
    let mut c = RunConfig::default();
    c.apply_overrides(&args).unwrap();
    c
}

fn pnm_dims(bytes: &[u8]) -> (String, usize, usize) {
    let text = String::from_utf8_lossy(&bytes[..20.min(bytes.len())]).to_string();
    let mut it = text.split_whitespace();
    let magic = it.next().unwrap().to_string();
    let w = it.next().unwrap().parse().unwrap();
    let h = it.next().unwrap().parse().unwrap();
    (magic, w, h)
}

#[test]
fn zero_epochs_writes_init_checkpoint_and_header_only_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = lab("train", &out, &["--epochs", "0"]);
    ok(&o);
    assert!(out.join("model.duet").exists());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics, "epoch,loss_total,loss_content,loss_group,lr,probe_acc\n");
    let (model, manifest) = load_model(&out.join("model.duet")).unwrap();
    assert_eq!(manifest.epoch, 0);
    assert_eq!(model.duet.dim(), 16);
}

#[test]
fn identical_configs_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&lab("train", &a, &["--seed", "4"]));
    ok(&lab("train", &b, &["--seed", "4"]));
    let ma = std::fs::read(a.join("metrics.csv")).unwrap();
    let mb = std::fs::read(b.join("metrics.csv")).unwrap();
    assert_eq!(ma, mb);
    let rows = parse_metrics_csv(&String::from_utf8(ma).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].probe_acc.is_some());
    assert_eq!(
        std::fs::read(a.join("seen_g.csv")).unwrap(),
        std::fs::read(b.join("seen_g.csv")).unwrap()
    );
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "# bars\nlambda = 3\nseed = 11\n").unwrap();
    let out = dir.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_duet-lab"))
        .args(["train", "--config", conf.to_str().unwrap()])
        .args(SMALL)
        .args(["--epochs", "0", "--seed=12", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    ok(&o);
    let saved = RunConfig::from_file(&out.join("config.txt")).unwrap();
    assert_eq!(saved.lambda, 3.0);
    assert_eq!(saved.seed, 12);
}

#[test]
fn failures_exit_non_zero_and_leave_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = lab("train", &out, &["--no_such_key", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
    assert!(!out.exists());

    // bad warmup is caught before anything is written
    let o = lab("train", &out, &["--warmup_epochs", "5"]);
    assert!(!o.status.success());
    assert!(!out.exists());

    // a run that fails after creating its directory removes it again
    ok(&lab("train", &out, &["--epochs", "0"]));
    let gen_out = dir.path().join("gen");
    let o = lab(
        "generate",
        &gen_out,
        &["--checkpoint", out.join("model.duet").to_str().unwrap(), "--decoder", out.join("missing.duet").to_str().unwrap()],
    );
    assert!(!o.status.success());
    assert!(!gen_out.exists());

    let o = lab("heatmap", &gen_out, &["--checkpoint", out.join("model.duet").to_str().unwrap(), "--resolution", "1"]);
    assert!(!o.status.success());
    assert!(!gen_out.exists());
}

#[test]
fn heatmap_ambiguity_recover_and_bound_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&lab("train", &run, &[]));
    let ckpt = run.join("model.duet");
    let ck = ckpt.to_str().unwrap();

    let hm = dir.path().join("hm");
    ok(&lab("heatmap", &hm, &["--checkpoint", ck, "--resolution", "10"]));
    let csv = std::fs::read_to_string(hm.join("heatmap.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.split(',').count() == 10));
    let pgm = std::fs::read(hm.join("heatmap.pgm")).unwrap();
    assert_eq!(pnm_dims(&pgm), ("P5".to_string(), 10, 10));
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(hm.join("heatmap.json")).unwrap()).unwrap();
    assert_eq!(side["resolution"], 10);
    assert_eq!(side["spec"], "rot360");

    let amb = dir.path().join("amb");
    ok(&lab("ambiguity", &amb, &["--checkpoint", ck]));
    let text = std::fs::read_to_string(amb.join("ambiguity.csv")).unwrap();
    let mass: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(mass.len(), 4);
    assert!((mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let rec = dir.path().join("rec");
    ok(&lab("recover", &rec, &["--checkpoint", ck]));
    let text = std::fs::read_to_string(rec.join("recover.csv")).unwrap();
    assert_eq!(text.lines().count(), 9);

    let bound = dir.path().join("bound");
    ok(&lab("bound", &bound, &["--checkpoint", ck, "--resolution", "5"]));
    let text = std::fs::read_to_string(bound.join("bound.csv")).unwrap();
    assert_eq!(text.lines().count(), 6);
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(v[4] > 0.0);
    }
}

#[test]
fn generate_strip_and_identity_frame() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&lab("train", &run, &["--decoder_epochs", "2", "--decoder_hidden", "32"]));
    let gen = dir.path().join("gen");
    let ck = run.join("model.duet");
    ok(&lab("generate", &gen, &["--checkpoint", ck.to_str().unwrap(), "--steps", "8"]));
    let pgm = std::fs::read(gen.join("generate.pgm")).unwrap();
    assert_eq!(pnm_dims(&pgm), ("P5".to_string(), 8 * 28, 28));
    let csv = std::fs::read_to_string(gen.join("generate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);

    let cfg = small_config(&run, &[]);
    let (model, _) = load_model(&ck).unwrap();
    let dec = load_decoder(&run.join("decoder.duet")).unwrap();
    let (_, test) = cfg.datasets().unwrap();
    let image = &test.images[0];
    let (frames, rec) = generation_frames(&model, &dec, image, 8).unwrap();
    assert_eq!(frames.len(), 8);
    assert_eq!(rec.len(), 8);
    let z = model.encode(&images_to_batch(std::slice::from_ref(image)).unwrap()).unwrap();
    let direct = dec.decode(&z).unwrap();
    let bits = |im: &duet_core::transforms::Image| im.pixels().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&frames[0]), bits(&direct[0]));
}

#[test]
fn forward_step_counting() {
    let rec = [0.0, 0.1, 0.2, 0.35, 0.5, 0.6, 0.8, 0.9];
    assert_eq!(forward_steps(&rec, true), 8);
    assert_eq!(forward_steps(&rec, false), 7);
    assert_eq!(forward_steps(&[0.5, 0.4, 0.6], false), 1);
}

#[test]
fn probe_separates_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small_config(&out, &["--dataset", "two_class_blobs", "--probe_epochs", "200"]);
    ok(&lab("train", &out, &["--dataset", "two_class_blobs"]));
    let (model, _) = load_model(&out.join("model.duet")).unwrap();
    let (train, test) = cfg.datasets().unwrap();
    let r = probe_model(&model, &train, &test, &cfg).unwrap();
    assert_eq!(r.test_acc, 1.0);
    assert_eq!(r.dim, 16);

    let pr = dir.path().join("probe");
    ok(&lab("probe", &pr, &["--dataset", "two_class_blobs", "--checkpoint", out.join("model.duet").to_str().unwrap()]));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(pr.join("probe.json")).unwrap()).unwrap();
    assert_eq!(json["test_acc"], 1.0);
}

#[test]
fn probe_on_random_labels_is_at_chance() {
    let mut rng = rng_from(21, &[]);
    let (n, d, k) = (1000, 16, 10);
    let mut feats = |rows: usize| Tensor::from_fn(&[rows, d], |_| rng.gen::<f64>() * 2.0 - 1.0);
    let (ftr, fte) = (feats(n), feats(n));
    let mut lr = rng_from(22, &[]);
    let ytr: Vec<usize> = (0..n).map(|_| lr.gen_range(0..k)).collect();
    let yte: Vec<usize> = (0..n).map(|_| lr.gen_range(0..k)).collect();
    let p = fit_probe(&ftr, &ytr, k, &ProbeConfig::default()).unwrap();
    let acc = p.accuracy(&fte, &yte).unwrap();
    assert!((acc - 0.1).abs() <= 0.05, "accuracy {acc}");
}

fn recipe_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes")
}

#[test]
fn recipes_parse_and_cover_the_sweeps() {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(recipe_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().and_then(|e| e.to_str()) != Some("conf") {
            continue;
        }
        let c = RunConfig::from_file(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        c.duet_config().unwrap();
        c.group_spec().unwrap();
        c.stack_items().unwrap();
        names.push(p.file_stem().unwrap().to_string_lossy().to_string());
    }
    for s in ["0.05", "0.1", "0.2", "0.5", "1", "10"] {
        let c = RunConfig::from_file(&recipe_dir().join(format!("sigma_{s}.conf"))).unwrap();
        assert_eq!(c.sigma, s.parse::<f64>().unwrap());
    }
    for l in [0, 1, 10, 100, 1000] {
        let c = RunConfig::from_file(&recipe_dir().join(format!("lambda_{l}.conf"))).unwrap();
        assert_eq!(c.lambda, l as f64);
    }
    for g in [2, 4, 8, 16] {
        let c = RunConfig::from_file(&recipe_dir().join(format!("groups_{g}.conf"))).unwrap();
        assert_eq!(c.groups, g);
    }
    assert!(names.len() >= 15);
}
