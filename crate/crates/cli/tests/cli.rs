use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use terrain_embed::geo::GeoCoordinate;
use terrain_embed::labels::write_coord_csv;
use terrain_embed::raster::ElevationRaster;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_terrain-embed"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(code(&out), 0, "{args:?}\nstderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(path: &Path) -> serde_json::Value {
    let mut s = path.as_os_str().to_owned();
    s.push(".run.json");
    serde_json::from_str(&std::fs::read_to_string(PathBuf::from(s)).unwrap()).unwrap()
}

/// A 257 px, 10 m/px synthetic raster in `dir`.
fn dtm(dir: &Path) -> PathBuf {
    let out = dir.join("t.tif");
    ok(&["synth", "--seed", "1", "--side", "257", "--out", p(&out)]);
    out
}

/// `n` coordinates on a lattice well inside the raster, every other one
/// labeled 1 when `labeled`.
fn coords(raster: &Path, n: usize) -> Vec<GeoCoordinate> {
    let r = ElevationRaster::read_geotiff(raster).unwrap();
    (0..n).map(|i| r.pixel_center(40 + 7 * (i / 12), 40 + 15 * (i % 12))).collect()
}

fn write_csv(path: &Path, cs: &[GeoCoordinate], labeled: bool) {
    write_coord_csv(path, cs.iter().enumerate().map(|(i, c)| (*c, labeled.then_some((i % 2) as u8)))).unwrap();
}

#[test]
fn synth_is_byte_identical_and_checks_side() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.tif"), dir.path().join("b.tif"));
    ok(&["synth", "--seed", "1", "--side", "257", "--out", p(&a)]);
    ok(&["synth", "--seed", "1", "--side", "257", "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let m = manifest(&a);
    assert_eq!(m["subcommand"], "synth");
    assert_eq!(m["seed"], 1);
    assert_eq!(m["config"]["side"], 257);
    assert!(ElevationRaster::read_geotiff(&a).unwrap().rows() == 257);

    let bad = run(&["synth", "--side", "100", "--out", p(&dir.path().join("c.tif"))]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("100"));
}

#[test]
fn train_records_objective_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let t = dtm(dir.path());
    let common = ["--dtm", p(&t), "--scales", "10", "--steps", "2", "--locations", "16", "--batch-size", "4"];

    let adv = dir.path().join("adv.ckpt");
    ok(&[&["train", "--k", "4", "--adv", "--out", p(&adv)][..], &common].concat());
    let m = manifest(&adv);
    assert_eq!(m["config"]["lambda_rec"], 100.0);
    assert_eq!(m["config"]["lambda_adv"], 1.0);
    assert!(adv.exists() && dir.path().join("adv.ckpt.json").exists());
    let log = std::fs::read_to_string(dir.path().join("adv.ckpt.train.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "header plus one row per step:\n{log}");

    let rec = dir.path().join("rec.ckpt");
    ok(&[&["train", "--k", "1", "--out", p(&rec)][..], &common].concat());
    let m = manifest(&rec);
    assert_eq!(m["config"]["lambda_rec"], 1.0);
    assert_eq!(m["config"]["lambda_adv"], 0.0);
    assert!(m["inputs"][p(&t)].is_string());

    let bad = run(&[&["train", "--k", "1", "--adv", "--out", p(&dir.path().join("x.ckpt"))][..], &common].concat());
    assert_eq!(code(&bad), 2);
    assert!(!dir.path().join("x.ckpt").exists());
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let t = dtm(dir.path());
    let config = dir.path().join("train.toml");
    std::fs::write(
        &config,
        format!("dtm = \"{}\"\nscales = [10]\nsteps = 3\nlocations = 16\nbatch_size = 4\nk = 1\n", p(&t)),
    )
    .unwrap();
    let out = dir.path().join("m.ckpt");
    ok(&["--config-file", p(&config), "train", "--steps", "1", "--out", p(&out)]);
    let m = manifest(&out);
    assert_eq!(m["config"]["steps"], 1);
    assert_eq!(m["config"]["k"], 1);
    assert_eq!(m["config"]["scales"], serde_json::json!([10.0]));
}

#[test]
fn eval_and_scan_report_and_fail_with_the_right_codes() {
    let dir = tempfile::tempdir().unwrap();
    let t = dtm(dir.path());
    let positives = dir.path().join("bump.csv");
    write_csv(&positives, &coords(&t, 40), false);

    let missing = run(&["scale-scan", "--class-csv", "nope.csv", "--dtm", p(&t), "--out", "s.csv"]);
    assert_eq!(code(&missing), 2);

    let scan_args = |out: &Path| {
        vec![
            "scale-scan".to_string(),
            "--class-csv".into(),
            p(&positives).into(),
            "--dtm".into(),
            p(&t).into(),
            "--radii".into(),
            "160".into(),
            "--n".into(),
            "40".into(),
            "--seeds".into(),
            "3,4".into(),
            "--epochs".into(),
            "2".into(),
            "--out".into(),
            p(out).into(),
        ]
    };
    let (s1, s2) = (dir.path().join("s1.csv"), dir.path().join("s2.csv"));
    let stdout = ok(&scan_args(&s1).iter().map(String::as_str).collect::<Vec<_>>());
    assert!(stdout.contains("best resolution 20 m/px (radius 160 m)"), "{stdout}");
    ok(&scan_args(&s2).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());
    assert_eq!(manifest(&s1)["config"]["seeds"], serde_json::json!([3, 4]));

    let probe = dir.path().join("probe.csv");
    let stdout = ok(&[
        "eval", "--model", "id", "--class-csv", p(&positives), "--dtm", p(&t), "--scale", "10", "--n-train", "20",
        "--n-test", "10", "--seeds", "2", "--out", p(&probe),
    ]);
    assert!(stdout.lines().any(|l| l.starts_with("| id |")), "{stdout}");
    assert_eq!(std::fs::read_to_string(&probe).unwrap().lines().count(), 2);
    let serial = dir.path().join("serial.csv");
    ok(&[
        "--jobs", "1", "eval", "--model", "id", "--class-csv", p(&positives), "--dtm", p(&t), "--scale", "10",
        "--n-train", "20", "--n-test", "10", "--seeds", "2", "--out", p(&serial),
    ]);
    assert_eq!(std::fs::read(&probe).unwrap(), std::fs::read(&serial).unwrap());

    let short = run(&[
        "eval", "--model", "id", "--class-csv", p(&positives), "--dtm", p(&t), "--scale", "10", "--out",
        p(&dir.path().join("p2.csv")),
    ]);
    assert_eq!(code(&short), 3);
    assert!(String::from_utf8_lossy(&short.stderr).contains("short by"));
}

#[test]
fn index_and_retrieve() {
    let dir = tempfile::tempdir().unwrap();
    let t = dtm(dir.path());
    let cs = coords(&t, 30);
    let csv = dir.path().join("coords.csv");
    write_csv(&csv, &cs, false);
    let index = dir.path().join("index");
    ok(&["index", "--model", "id", "--coords-csv", p(&csv), "--dtm", p(&t), "--scale", "10", "--out", p(&index)]);
    assert!(index.join("run.json").exists());

    let point = format!("{},{}", cs[7].lon, cs[7].lat);
    let out = ok(&["retrieve", "--index", p(&index), "--points", &point, "--k", "3"]);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows[0], "lon,lat,distance");
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1], format!("{},{},0", cs[7].lon, cs[7].lat));

    assert_eq!(ok(&["retrieve", "--index", p(&index), "--points", &point, "--k", "0"]), "");
    assert_eq!(code(&run(&["retrieve", "--index", p(&index), "--points", &point, "--k", "31"])), 2);
}

#[test]
fn grid_classify_layers_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let t = dtm(dir.path());
    let labeled = dir.path().join("bump.csv");
    write_csv(&labeled, &coords(&t, 40), true);
    let probes = dir.path().join("probes.json");
    ok(&["fit-probes", "--model", "id", "--dtm", p(&t), "--class-csv", &format!("bump={}", p(&labeled)), "--scale", "10", "--out", p(&probes)]);

    let r = ElevationRaster::read_geotiff(&t).unwrap();
    let c = r.center_bounds().center();
    let bbox = format!("{},{},{},{}", c.lon - 0.002, c.lat - 0.002, c.lon + 0.002, c.lat + 0.002);
    let out = dir.path().join("grid.geojson");
    ok(&["grid-classify", "--model", "id", "--probes", p(&probes), "--dtm", p(&t), "--bbox", &bbox, "--scales", "10,20", "--out", p(&out)]);
    let geo: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(geo["type"], "FeatureCollection");
    assert_eq!(geo["layers"].as_array().unwrap().len(), 2);

    let outside = format!("{},{},{},{}", c.lon + 1.0, c.lat, c.lon + 1.01, c.lat + 0.01);
    let res = run(&["grid-classify", "--model", "id", "--probes", p(&probes), "--dtm", p(&t), "--bbox", &outside, "--scales", "10", "--out", p(&out)]);
    assert_eq!(code(&res), 3);
}

fn http_get(addr: &str, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(addr).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").ok()?;
    let mut body = String::new();
    s.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_answers_health() {
    let dir = tempfile::tempdir().unwrap();
    let t = dtm(dir.path());
    let csv = dir.path().join("coords.csv");
    write_csv(&csv, &coords(&t, 12), false);
    let index = dir.path().join("index");
    ok(&["index", "--model", "id", "--coords-csv", p(&csv), "--dtm", p(&t), "--scale", "10", "--out", p(&index)]);
    let config = dir.path().join("service.toml");
    std::fs::write(&config, "checkpoint = \"id\"\nindex = \"index\"\nraster = \"t.tif\"\nbind = \"127.0.0.1:0\"\n").unwrap();

    let mut child = bin().args(["serve", "--config", p(&config)]).stderr(Stdio::piped()).spawn().unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    // Keep draining so later status lines never block the server.
    std::thread::spawn(move || std::io::copy(&mut stderr, &mut std::io::sink()));
    let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected: {line}")).to_string();
    let started = Instant::now();
    let body = loop {
        match http_get(&addr, "/health") {
            Some(r) if r.starts_with("HTTP/1.1 200") => break r,
            _ if started.elapsed() > Duration::from_secs(30) => {
                child.kill().ok();
                panic!("service never became healthy");
            }
            _ => std::thread::sleep(Duration::from_millis(100)),
        }
    };
    child.kill().ok();
    child.wait().ok();
    let json: serde_json::Value = serde_json::from_str(body.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(json["status"], "ok");
    assert_eq!(json["index_size"], 12);
}

#[test]
fn bad_service_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("service.toml");
    std::fs::write(&config, "checkpoint = \"id\"\nindex = \"missing\"\nraster = \"missing.tif\"\n").unwrap();
    assert_eq!(code(&run(&["serve", "--config", p(&config)])), 2);
}

#[test]
fn repro_desk_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("desk");
    let stdout = ok(&[
        "repro-desk", "--out", p(&out), "--steps", "2", "--locations", "64", "--seeds", "1", "--scan-n", "40",
        "--scan-epochs", "1", "--n-train", "20", "--n-test", "10", "--queries", "2",
    ]);
    let report = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert_eq!(stdout, report);
    for section in ["## Scale scan", "## Linear probes", "## Retrieval", "autoencoder-1", "autoencoder-4"] {
        assert!(report.contains(section), "missing {section}:\n{report}");
    }
    assert!(out.join("run.json").exists() && out.join("index/run.json").exists());
}
