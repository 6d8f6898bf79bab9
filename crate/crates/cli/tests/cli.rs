use std::path::Path;
use std::process::{Command, Output};

use voxcorr::metrics::EvalReport;
use voxcorr::volume::vvol;
use voxcorr::{Dims, DisplacementField, ScalarVolume, VoxelSize};
use voxcorr_cli::runlog;

fn voxcorr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxcorr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run(args: &[&str]) -> u8 {
    voxcorr_cli::run(std::iter::once("voxcorr").chain(args.iter().copied()))
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let out = voxcorr(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for sub in [
        "generate",
        "preprocess",
        "train",
        "register",
        "baseline",
        "evaluate",
        "info",
    ] {
        assert!(text.contains(sub), "missing {sub} in\n{text}");
    }
    let out = voxcorr(&["train", "--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for flag in [
        "--epochs",
        "--lr",
        "--batch-size",
        "--checkpoint",
        "--seed",
        "--threads",
        "--config",
    ] {
        assert!(text.contains(flag), "missing {flag} in\n{text}");
    }
    assert!(text.contains("default: 80"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&voxcorr(&["generate", "--bogus"])), 2);
    assert_eq!(code(&voxcorr(&["frobnicate"])), 2);
    assert_eq!(code(&voxcorr(&[])), 2);
    assert_eq!(code(&voxcorr(&["train", "--epochs", "many"])), 2);
}

#[test]
fn register_without_checkpoint_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().to_str().unwrap();
    let out = voxcorr(&["register", "--workspace", ws]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
    let log = runlog::read(dir.path()).unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].stage, "register");
    assert_eq!(log[0].status, "error");
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().to_str().unwrap();
    assert_eq!(run(&["preprocess", "--workspace", ws]), 2);
    assert_eq!(run(&["train", "--workspace", ws]), 2);
    assert_eq!(run(&["baseline", "--workspace", ws]), 2);
    assert_eq!(run(&["info", &format!("{ws}/nothing.vvol")]), 2);
    assert_eq!(run(&["generate", "--workspace", ws, "--c-values", "2.0"]), 2);
    assert_eq!(run(&["generate", "--workspace", ws, "--threads", "0"]), 2);
}

fn write_scalar(path: &Path, v: &ScalarVolume) {
    vvol::write_scalar(path, v, "{}").unwrap();
}

#[test]
fn evaluate_files_on_a_perfect_registration() {
    let dir = tempfile::tempdir().unwrap();
    let d = Dims::cube(12);
    let vs = VoxelSize::iso(40.0);
    let cad = ScalarVolume::from_fn(d, vs, |x, y, z| {
        if (3..9).contains(&x) && (2..10).contains(&y) && z < 7 {
            1.0
        } else {
            0.0
        }
    });
    let xct = voxcorr::volume::translate(&cad, [1, 0, 0], 0.0);
    let zero = DisplacementField::zeros(d, vs);
    let p = |n: &str| dir.path().join(n);
    write_scalar(&p("fixed.vvol"), &cad);
    write_scalar(&p("moving.vvol"), &xct);
    write_scalar(&p("moved.vvol"), &cad);
    vvol::write_field(p("disp.vvol"), &zero, "{}").unwrap();
    vvol::write_field(p("gt.vvol"), &zero, "{}").unwrap();
    let s = |n: &str| p(n).to_str().unwrap().to_string();
    let code = run(&[
        "evaluate",
        "--workspace",
        &s(""),
        "--fixed",
        &s("fixed.vvol"),
        "--moving",
        &s("moving.vvol"),
        "--moved",
        &s("moved.vvol"),
        "--disp",
        &s("disp.vvol"),
        "--gt",
        &s("gt.vvol"),
        "--out",
        &s("r.json"),
    ]);
    assert_eq!(code, 0);
    let r = EvalReport::read_json(p("r.json")).unwrap();
    assert_eq!(r.dice_after, 100.0);
    assert!(r.dice_before < 100.0);
    assert_eq!(r.bdm_after.zero, 100.0);
    assert_eq!(r.mean_epe, Some(0.0));
    assert!(std::fs::read_dir(dir.path())
        .unwrap()
        .any(|e| e.unwrap().path().is_dir()));
}

#[test]
fn evaluate_rejects_mismatched_grids() {
    let dir = tempfile::tempdir().unwrap();
    let vs = VoxelSize::iso(1.0);
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    write_scalar(Path::new(&p("a.vvol")), &ScalarVolume::zeros(Dims::cube(6), vs));
    write_scalar(Path::new(&p("b.vvol")), &ScalarVolume::zeros(Dims::cube(7), vs));
    vvol::write_field(p("u.vvol"), &DisplacementField::zeros(Dims::cube(6), vs), "{}").unwrap();
    let code = run(&[
        "evaluate",
        "--workspace",
        &p(""),
        "--fixed",
        &p("a.vvol"),
        "--moving",
        &p("b.vvol"),
        "--moved",
        &p("a.vvol"),
        "--disp",
        &p("u.vvol"),
        "--no-images",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let config = dir.path().join("config.json");
    let cfg = serde_json::json!({
        "paths": {"workspace": ws},
        "c_values": [0.0, -0.1, -0.6],
        "phantom": {"grid": 48, "voxel_size_um": 110.0, "plate_voxels": 2},
        "model": {"patch_size": 16},
        "train": {"epochs": 1, "steps_per_epoch": 1, "batch_size": 1, "val_batch_size": 1},
        "infer": {"stride": 16},
        "dvc": {"node_spacing": 12, "window_halfsize": 5, "search_radius": 3},
        "seed": 11
    });
    std::fs::write(&config, cfg.to_string()).unwrap();
    let c = config.to_str().unwrap();
    assert_eq!(run(&["generate", "--config", c]), 0);
    assert!(ws.join("raw/samples.json").exists());
    assert_eq!(run(&["preprocess", "--config", c]), 0);
    assert_eq!(run(&["train", "--config", c]), 0);
    let ckpt = ws.join("model/model.vmck");
    assert!(ckpt.exists());
    assert_eq!(
        run(&["register", "--config", c, "--checkpoint", ckpt.to_str().unwrap()]),
        0
    );
    assert_eq!(run(&["baseline", "--config", c]), 0);
    assert_eq!(run(&["evaluate", "--config", c, "--no-images"]), 0);
    let id = voxcorr_cli::sample_id(-0.6);
    for method in ["learned", "baseline"] {
        let r = EvalReport::read_json(ws.join(format!("reports/{id}_{method}.json"))).unwrap();
        assert_eq!(r.sample_id, id);
        assert!(r.mean_epe.is_some());
    }
    assert_eq!(run(&["info", ckpt.to_str().unwrap()]), 0);
    let stages: Vec<String> = runlog::read(&ws).unwrap().into_iter().map(|e| e.stage).collect();
    assert_eq!(
        stages,
        ["generate", "preprocess", "train", "register", "baseline", "evaluate"]
    );
}

#[test]
fn single_c_value_generates_one_sample() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().to_str().unwrap();
    let code = run(&[
        "generate",
        "--workspace",
        ws,
        "--c-values",
        "0",
        "--grid",
        "32",
        "--voxel-size-um",
        "160",
    ]);
    assert_eq!(code, 0);
    let listing: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("raw/samples.json")).unwrap()).unwrap();
    assert_eq!(listing.len(), 1);
    assert_eq!(listing[0]["id"], "gyroid_c0.00");
    let dims = voxcorr::volume::vvol::read_header(dir.path().join("raw/gyroid_c0.00_xct.vvol"))
        .unwrap()
        .dims;
    assert_eq!(dims, Dims::cube(32));
}
