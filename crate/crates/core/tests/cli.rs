use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gsrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsrt")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CAM: &str = "pos=0,0,-3,look=0,0,0,fov=45,res=24x16";

fn render(dir: &Path, name: &str, extra: &[&str]) -> (Output, Vec<u8>, Value) {
    let img = dir.join(format!("{name}.ppm"));
    let stats = dir.join(format!("{name}.json"));
    let mut args = vec![
        "render",
        "--synthetic",
        "300",
        "--cam",
        CAM,
        "--out",
        img.to_str().unwrap(),
        "--stats-out",
        stats.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = gsrt(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let json = serde_json::from_str(&std::fs::read_to_string(stats).unwrap()).unwrap();
    (o, std::fs::read(img).unwrap(), json)
}

#[test]
fn render_writes_image_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ppm, stats) = render(dir.path(), "a", &["--regime", "sw+hw", "--k", "4"]);
    assert!(ppm.starts_with(b"P6\n24 16\n255\n"));
    assert_eq!(ppm.len(), 13 + 24 * 16 * 3);
    assert_eq!(stats["schema"], "grtx-stats/1");
    let row = &stats["rows"][0];
    assert_eq!(row["regime"], "sw+hw");
    assert_eq!(row["rays"], 24 * 16);
    assert!(row["node_fetches"].as_u64().unwrap() >= row["unique_nodes"].as_u64().unwrap());
    assert_eq!(row["buffer_bytes"], 24 * 16 * 28_672);
}

#[test]
fn repeated_runs_and_thread_counts_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a, sa) = render(dir.path(), "a", &["--threads", "1"]);
    let (_, b, sb) = render(dir.path(), "b", &["--threads", "8"]);
    let (_, c, sc) = render(dir.path(), "c", &["--threads", "8"]);
    assert_eq!(a, b);
    assert_eq!(b, c);
    assert_eq!(sa, sb);
    assert_eq!(sb, sc);
}

#[test]
fn png_output() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("x.png");
    let o = gsrt(&["render", "--synthetic", "50", "--cam", CAM, "--out", png.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(std::fs::read(&png).unwrap().starts_with(b"\x89PNG"));
    // stats went to stdout
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.ppm");
    let out = out.to_str().unwrap();
    let o = gsrt(&["render", "--synthetic", "10", "--out", out, "--regime", "fast"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--regime"));
    // validated before the (missing) scene is touched
    let o = gsrt(&["render", "--scene", "/does/not/exist.ply", "--out", out, "--k", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--k"));
    for bad in [
        vec!["render", "--synthetic", "10", "--out", out, "--ert", "2"],
        vec!["render", "--synthetic", "10", "--out", out, "--kappa", "-1"],
        vec!["render", "--synthetic", "10", "--out", out, "--arity", "7"],
        vec!["render", "--synthetic", "10", "--out", out, "--blas", "ico40"],
        vec!["render", "--synthetic", "10", "--out", out, "--regime", "baseline", "--blas", "sphere"],
        vec!["render", "--synthetic", "10", "--out", out, "--cam", "pos=0,0,0"],
        vec!["render", "--synthetic", "10", "--out", "x.bmp"],
        vec!["compare", "--synthetic", "10", "--regimes", "sw"],
        vec!["bench", "--synthetic", "10"],
        vec!["bench", "--synthetic", "10", "--k-sweep", ""],
        vec!["render", "--out", out],
        vec![],
    ] {
        let o = gsrt(&bad);
        assert_eq!(code(&o), 2, "{bad:?}: {}", stderr(&o));
    }
}

#[test]
fn runtime_errors_exit_1() {
    let o = gsrt(&["render", "--scene", "/does/not/exist.ply", "--out", "/tmp/never.ppm"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("/does/not/exist.ply"));
}

#[test]
fn compare_reports_diffs_and_ratios() {
    let o = gsrt(&["compare", "--synthetic", "400", "--cam", "pos=0,0,-3,look=0,0,0,fov=45,res=32x32", "--k", "4", "--regimes", "baseline,sw+hw"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    let pair = &v["pairs"][0];
    assert!(pair["max_abs_diff"].as_f64().unwrap() <= 1e-4);
    assert!(pair["fetch_ratio"].as_f64().unwrap() > 1.0);

    let o = gsrt(&["compare", "--synthetic", "100", "--cam", CAM, "--regimes", "sw,sw", "--stats-format", "csv"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn compare_fails_above_tolerance() {
    let o = gsrt(&[
        "compare", "--synthetic", "300", "--cam", CAM, "--regimes", "sw,sw+hw", "--hit-key", "proxy", "--blas", "ico20",
        "--tolerance", "0",
    ]);
    // proxy keys are shared by both regimes, so even a zero tolerance holds
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = gsrt(&["compare", "--synthetic", "300", "--cam", CAM, "--regimes", "sw,sw", "--background", "1,1,1", "--tolerance", "-1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bench_sweep_rows() {
    let o = gsrt(&["bench", "--synthetic", "400", "--cam", CAM, "--k-sweep", "4,8,16", "--stats-format", "csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let col = |name: &str| lines[0].split(',').position(|c| c == name).unwrap();
    let rounds: Vec<u64> = lines[1..].iter().map(|l| l.split(',').nth(col("rounds")).unwrap().parse().unwrap()).collect();
    assert!(rounds.windows(2).all(|w| w[1] <= w[0]), "{rounds:?}");
    assert!(lines[1..].iter().all(|l| l.split(',').nth(col("evictions")).unwrap().parse::<u64>().is_ok()));

    // k above any hit count: exactly one round per ray
    let o = gsrt(&["bench", "--synthetic", "20", "--cam", CAM, "--k-sweep", "4096"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rows"][0]["rounds"], v["rows"][0]["rays"]);
}

#[test]
fn as_stats_and_gen_scene() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("s.ply");
    let o = gsrt(&["gen-scene", "--count", "100", "--seed", "3", "--sh-degree", "1", "--out", ply.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = gsrt(&["as-stats", "--scene", ply.to_str().unwrap(), "--regime", "baseline"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mono: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(mono["primitives"], 100);
    let o = gsrt(&["as-stats", "--scene", ply.to_str().unwrap(), "--blas", "ico20"]);
    let two: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(two["blas"]["kind"], "ico20");
    assert!(two["size_bytes"].as_u64().unwrap() * 5 < mono["size_bytes"].as_u64().unwrap());
}

#[test]
fn json_camera_file() {
    let dir = tempfile::tempdir().unwrap();
    let cam = dir.path().join("cam.json");
    std::fs::write(&cam, r#"{"position":[0,0,-3],"look_at":[0,0,0],"fov_y_deg":45,"width":24,"height":16}"#).unwrap();
    let (_, inline, _) = render(dir.path(), "inline", &[]);
    let img = dir.path().join("file.ppm");
    let o = gsrt(&["render", "--synthetic", "300", "--cam", cam.to_str().unwrap(), "--out", img.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(img).unwrap(), inline);
}
