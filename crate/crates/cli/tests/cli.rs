use std::path::Path;
use std::process::{Command, Output};

fn nsh(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsh"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn nsh")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_circle(dir: &Path) {
    let text: String = (0..60)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / 60.0;
            format!("{} {} 0\n", 0.5 * t.cos(), 0.5 * t.sin())
        })
        .collect();
    std::fs::write(dir.join("c.xyz"), text).unwrap();
}

fn quick_fit(dir: &Path) {
    write_circle(dir);
    let o = nsh(
        &["fit", "c.xyz", "--hidden-layers", "1", "--width", "16", "--iters", "5", "--batch-size", "200", "--out", "m.nsh"],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("model m.nsh"));
    assert!(dir.join("m.nsh").exists());
    assert!(dir.join("m.nsh.json").exists());
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsh(&["fit", "nowhere.xyz", "--iters", "1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere.xyz"), "{}", stderr(&o));
}

#[test]
fn bad_flags_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    quick_fit(dir.path());
    let o = nsh(&["analyze", "m.nsh", "--shell", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = nsh(&["fit", "c.xyz", "--dim", "4"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = nsh(&["fit", "c.xyz", "--threads", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "[train]\nnot_a_key = 1\n").unwrap();
    let o = nsh(&["fit", "c.xyz", "--config", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn extract_on_a_coarse_grid_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    quick_fit(dir.path());
    let o = nsh(&["extract", "m.nsh", "--res", "4", "--out", "m.obj"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("m.obj").exists());
}

#[test]
fn analyze_builtin_sphere_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsh(
        &["analyze", "--builtin", "sphere", "--grid", "16", "--shell-samples", "500", "--out", "r.json"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r["dim"], 3);
    assert!(r["shell"]["max_abs_det"].as_f64().unwrap() < 1e-12);
}

#[test]
fn eval_of_a_mesh_against_itself_is_close() {
    let dir = tempfile::tempdir().unwrap();
    // unit cube
    let obj = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
               f 1 3 2\nf 1 4 3\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5\n\
               f 2 3 7\nf 2 7 6\nf 3 4 8\nf 3 8 7\nf 4 1 5\nf 4 5 8\n";
    std::fs::write(dir.path().join("cube.obj"), obj).unwrap();
    let o = nsh(&["eval", "cube.obj", "cube.obj", "--samples", "2000", "--fscore-thresh", "0.1", "--out", "e.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    // both sides are sampled independently, so only sampling noise remains
    // (chamfer is reported x1e3; point spacing is about 0.05)
    assert!(r["chamfer"].as_f64().unwrap() < 40.0, "{r}");
    assert!(r["fscore"].as_f64().unwrap() > 99.0, "{r}");
}

#[test]
fn help_lists_config_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsh(&["fit", "--help"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("[train]"));
}
