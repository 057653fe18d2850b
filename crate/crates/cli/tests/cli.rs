use std::path::Path;
use std::process::Command;

use spikeseg::conversion::BalanceMode;
use spikeseg::network::Norm;
use spikeseg::training::OptimState;
use spikeseg::Mode;
use spikeseg_cli::checkpoint::{Checkpoint, MAGIC};
use spikeseg_cli::commands::{self, build_model};
use spikeseg_cli::pnm::Image;
use spikeseg_cli::{extract_overrides, CliError, ExperimentConfig};

fn pairs(kv: &[(&str, &str)]) -> Vec<(String, String)> {
    kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn tiny(dir: &Path, extra: &[(&str, &str)]) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.apply(&pairs(&[
        ("input.height", "16"),
        ("input.width", "16"),
        ("model.width_divisor", "16"),
        ("neuron.timesteps", "4"),
        ("train.epochs", "2"),
        ("train.batch_size", "4"),
        ("synth.train", "8"),
        ("synth.eval", "4"),
        ("synth.min_area", "6"),
        ("output.dir", dir.to_str().unwrap()),
    ]))
    .unwrap();
    c.apply(&pairs(extra)).unwrap();
    c
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spikeseg"))
}

fn trained(dir: &Path, extra: &[(&str, &str)]) -> (ExperimentConfig, String) {
    let cfg = tiny(dir, extra);
    let mut out = Vec::new();
    commands::cmd_train(&cfg, &mut out).unwrap();
    (cfg, String::from_utf8(out).unwrap())
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &[]);
    let (spec, mut params) = build_model(&cfg).unwrap();
    // awkward bit patterns survive
    let w = params.layers[0].as_mut().unwrap().weight.data_mut();
    w[0] = f32::MIN_POSITIVE / 2.0;
    w[1] = -0.0;
    w[2] = f32::MAX;
    let mut optim = OptimState::new(&params, 3e-3).unwrap();
    optim.step = 17;
    optim.m[0][0] = 1e-30;
    let ck = Checkpoint { spec, params, optim: Some(optim) };
    let path = dir.path().join("x.sseg");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes(), ck.to_bytes());
    assert_eq!(back.spec, ck.spec);
    let bits = |c: &Checkpoint| c.params.to_named().iter().flat_map(|t| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&ck));
    assert_eq!(back.optim, ck.optim);
}

#[test]
fn checkpoint_refuses_other_versions_and_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &[]);
    let (spec, params) = build_model(&cfg).unwrap();
    let bytes = Checkpoint { spec, params, optim: None }.to_bytes();
    let p = Path::new("mem");
    let mut v2 = bytes.clone();
    v2[4..8].copy_from_slice(&2u32.to_le_bytes());
    let err = Checkpoint::from_bytes(&v2, p).unwrap_err().to_string();
    assert!(err.contains("version 2"), "{err}");
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], p).is_err());
    assert!(Checkpoint::from_bytes(b"PK\x03\x04", p).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra, p).is_err());
    assert_eq!(&bytes[..4], MAGIC);
}

#[test]
fn train_is_reproducible_and_echoes_its_config() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (cfg, out) = trained(a.path(), &[("seed", "7")]);
    trained(b.path(), &[("seed", "7")]);
    let log = |d: &Path| std::fs::read(d.join("train_log.csv")).unwrap();
    assert_eq!(log(a.path()), log(b.path()));
    assert_eq!(
        std::fs::read(a.path().join("final.sseg")).unwrap(),
        std::fs::read(b.path().join("final.sseg")).unwrap()
    );
    let echoed = out.split("# resolved config\n").nth(1).unwrap().split("# end config").next().unwrap();
    assert_eq!(ExperimentConfig::parse(echoed).unwrap(), cfg);
    assert!(a.path().join("best.sseg").exists());
    assert_eq!(out.lines().filter(|l| l.starts_with("epoch")).count(), 2);
    assert!(Checkpoint::load(&a.path().join("final.sseg")).unwrap().optim.is_some());
}

#[test]
fn eval_writes_one_overlay_per_sample_and_checks_classes() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = trained(dir.path(), &[("train.epochs", "1")]);
    let ov = dir.path().join("ov");
    let mut out = Vec::new();
    let ck = dir.path().join("best.sseg");
    let r = commands::cmd_eval(&cfg, &ck, "eval", Some(&ov), &mut out).unwrap();
    assert_eq!(std::fs::read_dir(&ov).unwrap().count(), 4);
    let img = Image::read(&ov.join("0000.ppm")).unwrap();
    assert_eq!((img.width, img.height, img.channels), (48, 16, 3));
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains(&format!("mean   {:.4}", r.miou())));
    let mut four = cfg.clone();
    four.apply(&pairs(&[("classes", "4")])).unwrap();
    let err = commands::cmd_eval(&four, &ck, "eval", None, &mut Vec::new()).unwrap_err();
    assert!(matches!(err, CliError::Core(spikeseg::Error::Validation(_))), "{err}");
}

#[test]
fn missing_checkpoint_exits_2_and_runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin().args(["eval", "/nonexistent/ck.sseg"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    let st = bin().args(["train", "--model.depth", "3"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    let st = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    let junk = dir.path().join("junk.sseg");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let st = bin().args(["eval", junk.to_str().unwrap()]).output().unwrap();
    assert_eq!(st.status.code(), Some(1));
}

#[test]
fn zero_weight_model_profiles_to_zero_snn_energy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &[]);
    let (spec, mut params) = build_model(&cfg).unwrap();
    for l in params.layers.iter_mut().flatten() {
        l.weight.data_mut().fill(0.0);
    }
    let ck = dir.path().join("zero.sseg");
    Checkpoint { spec, params, optim: None }.save(&ck).unwrap();
    let report = commands::cmd_profile(&cfg, &ck, "eval", None, &mut Vec::new()).unwrap();
    assert!(report.rows.iter().all(|r| r.spike_rate.is_none_or(|s| s == 0.0)));
    assert_eq!(report.e_snn_pj, Some(0.0));
}

#[test]
fn profile_totals_match_rows_and_ann_gets_a_notice() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path(), &[("train.epochs", "1")]);
    let cfg = tiny(dir.path(), &[]);
    let csv = dir.path().join("energy.csv");
    let r = commands::cmd_profile(&cfg, &dir.path().join("best.sseg"), "eval", Some(&csv), &mut Vec::new()).unwrap();
    let snn: f64 = r.rows.iter().filter_map(|x| x.flops_snn).sum();
    assert!((r.e_snn_pj.unwrap() - snn * 0.9).abs() <= 1e-9 * snn.max(1.0));
    let ann: u64 = r.rows.iter().map(|x| x.flops_ann).sum();
    assert_eq!(r.e_ann_pj, ann as f64 * 4.6);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("layer,flops_ann,spike_rate,flops_snn\n"));

    let acfg = tiny(dir.path(), &[("mode", "ann")]);
    let (spec, params) = build_model(&acfg).unwrap();
    let ack = dir.path().join("ann.sseg");
    Checkpoint { spec, params, optim: None }.save(&ack).unwrap();
    let mut out = Vec::new();
    let r = commands::cmd_profile(&acfg, &ack, "eval", None, &mut out).unwrap();
    assert!(String::from_utf8(out).unwrap().starts_with("notice:"));
    assert_eq!(r.e_snn_pj, None);
}

#[test]
fn convert_rejects_spiking_and_balancing_modes_differ_on_skew() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &[("mode", "ann")]);
    let (spec, mut params) = build_model(&cfg).unwrap();
    // per-channel activation skew in the first layer
    let l = params.layers[0].as_mut().unwrap();
    let per = l.weight.len() / l.weight.shape().n;
    for (i, w) in l.weight.data_mut().iter_mut().enumerate() {
        *w = if i / per == 0 { 0.5 } else { 0.01 * (i / per) as f32 };
    }
    assert!(matches!(l.norm, Norm::Batch(_)));
    let ann = dir.path().join("ann.sseg");
    Checkpoint { spec: spec.clone(), params, optim: None }.save(&ann).unwrap();

    let lw = commands::cmd_convert(&cfg, &ann, &dir.path().join("lw.sseg"), &mut Vec::new()).unwrap();
    let mut ccfg = cfg.clone();
    ccfg.apply(&pairs(&[("balance", "channelwise")])).unwrap();
    let cw = commands::cmd_convert(&ccfg, &ann, &dir.path().join("cw.sseg"), &mut Vec::new()).unwrap();
    assert_eq!((lw.mode, cw.mode), (BalanceMode::Layerwise, BalanceMode::Channelwise));
    assert_ne!(lw.scales, cw.scales);
    let first = cw.scales[0].as_ref().unwrap();
    assert!(first[0] > first[1]);

    let conv = Checkpoint::load(&dir.path().join("lw.sseg")).unwrap();
    assert_eq!(conv.params.mode, Mode::Spiking);
    let err = commands::cmd_convert(&cfg, &dir.path().join("lw.sseg"), &dir.path().join("x.sseg"), &mut Vec::new())
        .unwrap_err();
    assert!(matches!(err, CliError::Core(spikeseg::Error::Mode(_))), "{err}");

    let mut scfg = cfg.clone();
    scfg.apply(&pairs(&[("sweep.timesteps", "1,3,5")])).unwrap();
    let csv = dir.path().join("sweep.csv");
    let rows = commands::cmd_sweep(&scfg, &dir.path().join("lw.sseg"), Some(&csv), &mut Vec::new()).unwrap();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), [1, 3, 5]);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);

    let models = vec![("conv".to_string(), dir.path().join("lw.sseg")), ("ann".to_string(), ann)];
    let rows = commands::cmd_robustness(&scfg, &models, None, &mut Vec::new()).unwrap();
    assert_eq!(rows.len(), 2 * 5);
}

#[test]
fn synth_is_byte_identical_and_labels_stay_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &[("classes", "4"), ("synth.train", "100"), ("synth.eval", "0")]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    commands::cmd_synth(&cfg, &a, &mut Vec::new()).unwrap();
    commands::cmd_synth(&cfg, &b, &mut Vec::new()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.join("labels")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 100);
    assert_eq!(std::fs::read_dir(a.join("images")).unwrap().count(), 100);
    let mut seen = [false; 4];
    for n in &names {
        for sub in ["labels", "images"] {
            assert_eq!(std::fs::read(a.join(sub).join(n)).unwrap(), std::fs::read(b.join(sub).join(n)).unwrap());
        }
        for &c in &Image::read(&a.join("labels").join(n)).unwrap().data {
            assert!(c < 4);
            seen[c as usize] = true;
        }
    }
    assert_eq!(seen, [true; 4]);
    assert_eq!(std::fs::read(a.join("manifest.txt")).unwrap(), std::fs::read(b.join("manifest.txt")).unwrap());

    // the written directory loads back to the in-memory data
    let mut dcfg = cfg.clone();
    dcfg.apply(&pairs(&[("data.source", "dir"), ("data", a.to_str().unwrap())])).unwrap();
    let from_disk = spikeseg_cli::dataset::load_split(&dcfg, "train").unwrap();
    let in_memory = spikeseg_cli::dataset::load_split(&cfg, "train").unwrap();
    assert_eq!(from_disk, in_memory);
}

#[test]
fn encode_dumps_one_frame_per_step_or_window() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), &[("timesteps", "6"), ("data.window_us", "10")]);
    let img = dir.path().join("in.pgm");
    let mut im = Image::new(4, 4, 1);
    im.data.fill(255);
    im.write(&img).unwrap();
    let n = commands::cmd_encode(&cfg, &img, &dir.path().join("p"), &mut Vec::new()).unwrap();
    assert_eq!(n, 6);
    assert!(Image::read(&dir.path().join("p/0005.pgm")).unwrap().data.iter().all(|&v| v == 255));
    let ev = dir.path().join("in.events");
    std::fs::write(&ev, "2 2\n0 0 0 1\n9 1 1 -1\n10 0 1 1\n35 1 0 1\n").unwrap();
    let n = commands::cmd_encode(&cfg, &ev, &dir.path().join("e"), &mut Vec::new()).unwrap();
    assert_eq!(n, 4);
}

#[test]
fn event_datasets_pad_to_the_configured_steps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("a.events"), "8 8\n0 0 0 1\n2500 3 3 -1\n").unwrap();
    Image { width: 8, height: 8, channels: 1, data: vec![1; 64] }.write(&d.join("a.pgm")).unwrap();
    std::fs::write(d.join("manifest.txt"), "classes 2\ninput 2 8 8\ntrain a.events a.pgm\n").unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.apply(&pairs(&[
        ("data.source", "dir"),
        ("data", d.to_str().unwrap()),
        ("encoder", "dvs"),
        ("input.channels", "2"),
        ("input.height", "8"),
        ("input.width", "8"),
        ("classes", "2"),
        ("timesteps", "5"),
    ]))
    .unwrap();
    let data = spikeseg_cli::dataset::load_split(&cfg, "train").unwrap();
    assert_eq!(data.frame_count(), Some(5));
    let spikeseg::training::SampleInput::Frames(f) = &data.samples[0].input else { panic!() };
    assert_eq!(f.iter().map(|t| t.sum()).sum::<f32>(), 2.0);
    assert_eq!(f[2].at(0, 1, 3, 3), 1.0);
}

#[test]
fn overrides_are_split_from_other_flags() {
    let args: Vec<String> = ["eval", "ck.sseg", "--seed", "7", "--split", "train", "--neuron.leak=0.5"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let (rest, ov) = extract_overrides(&args).unwrap();
    assert_eq!(rest, ["eval", "ck.sseg", "--split", "train"]);
    assert_eq!(ov, pairs(&[("seed", "7"), ("neuron.leak", "0.5")]));
    assert!(extract_overrides(&["--seed".to_string()]).is_err());
}
