use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn palmscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_palmscan")).args(args).output().expect("spawn palmscan")
}

fn synth(dir: &Path) {
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        r#"{"grid": {"epsg": 32648, "origin_x": 512000.0, "origin_y": 307200.0,
                     "px_size_x": 30.0, "px_size_y": -30.0, "width": 96, "height": 80},
            "seed": 5, "optical_start_year": 2014,
            "run": {"cell_side": 1440.0, "vote_threshold": 5, "samples_per_cell": 1000, "validate_n_total": 100}}"#,
    )
    .unwrap();
    let out = palmscan(&["synth", "--spec", spec.to_str().unwrap(), "--out", dir.join("scene").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_run_writes_every_stage() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let cfg = tmp.path().join("scene/config.json");
    let check = palmscan(&["check-config", "--config", cfg.to_str().unwrap()]);
    assert!(check.status.success(), "{}", String::from_utf8_lossy(&check.stdout));

    let run = palmscan(&["--workers", "2", "run", "--config", cfg.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let out = tmp.path().join("scene/run");
    for f in [
        "composite/composite_2017.tif",
        "texture/textures.tif",
        "indices/series.json",
        "classify/voted.tif",
        "postproc/final_extent.tif",
        "age/closure_year.tif",
        "validate/accuracy.csv",
        "report/regional_stats.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
        assert!(out.join(format!("{f}.prov.json")).exists(), "missing sidecar of {f}");
    }
    let acc = fs::read_to_string(out.join("validate/accuracy.csv")).unwrap();
    assert!(acc.starts_with("region_id,n_samples,undecided,tp,fp,fn,tn,balanced_accuracy"));
}

#[test]
fn missing_inputs_name_the_producing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let scene = tmp.path().join("scene");
    let run = palmscan(&["run", "--config", scene.join("config.json").to_str().unwrap(), "--stages", "age"]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("run the `postproc` stage first"));

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let age = palmscan(&[
        "age",
        "--extent",
        scene.join("aux/dem.tif").to_str().unwrap(),
        "--series",
        empty.to_str().unwrap(),
        "--out",
        tmp.path().join("age").to_str().unwrap(),
    ]);
    assert!(!age.status.success());
    assert!(String::from_utf8_lossy(&age.stderr).contains("run the `indices` stage first"));
}

#[test]
fn check_config_reports_problems() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"manifest": "nowhere.json", "out": "run", "year": 2017, "classify": {"vote_threshold": 0}}"#).unwrap();
    let out = palmscan(&["check-config", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
}
