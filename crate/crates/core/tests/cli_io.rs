use std::path::Path;
use std::process::{Command, Output};

use georope::attention::{Encoder, Model, ModelConfig};
use georope::geo::{make_position, Geotoken};
use georope::io::{
    load_checkpoint, load_geojson_points, load_geotokens_csv, read_geojson_points, read_geotokens_csv,
    save_checkpoint, write_geotokens_csv,
};
use proptest::prelude::*;

fn georope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_georope")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_tokens(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    path_str(&p).to_string()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(rows in prop::collection::vec(
        (-90.0f64..=90.0, -180.0f64..180.0, prop::collection::vec(-1e6f64..1e6, 4)), 0..20)
    ) {
        let tokens: Vec<Geotoken> = rows.iter().enumerate()
            .map(|(i, (lat, lon, f))| Geotoken::new(format!("id{i}"), make_position(*lat, *lon).unwrap(), f.clone()).unwrap())
            .collect();
        let feats: Vec<Vec<f64>> = tokens.iter().map(|t| t.features().to_vec()).collect();
        let mut buf = Vec::new();
        write_geotokens_csv(&mut buf, &tokens, &feats).unwrap();
        let back = read_geotokens_csv(&buf[..]).unwrap();
        prop_assert_eq!(back.len(), tokens.len());
        for (a, b) in tokens.iter().zip(&back) {
            prop_assert_eq!(a.id(), b.id());
            prop_assert!((a.position().lat() - b.position().lat()).abs() < 1e-12);
            prop_assert!((a.position().lon() - b.position().lon()).abs() < 1e-12);
            for (x, y) in a.features().iter().zip(b.features()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}

#[test]
fn csv_errors_carry_location() {
    let arity = read_geotokens_csv("id,lat_deg,lon_deg,f0,f1\na,0,0,1,2\nb,0,0,1\n".as_bytes()).unwrap_err();
    assert!(arity.to_string().contains("line 3"), "{arity}");
    let lat = read_geotokens_csv("id,lat_deg,lon_deg,f0\nfar_north,91,0,1\n".as_bytes()).unwrap_err();
    assert!(lat.to_string().contains("far_north"), "{lat}");
}

#[test]
fn geojson_points() {
    let empty = br#"{"type":"FeatureCollection","features":[]}"#;
    assert!(read_geojson_points(empty).unwrap().is_empty());
    let point = br#"{"type":"FeatureCollection","features":[
        {"type":"Feature","geometry":{"type":"Point","coordinates":[90,0]},"properties":{"features":[1,2,3]}}]}"#;
    let toks = read_geojson_points(point).unwrap();
    assert!((toks[0].position().lon() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    assert_eq!(toks[0].position().lat(), 0.0);
    assert_eq!(toks[0].features(), &[1.0, 2.0, 3.0]);
    let poly = br#"{"type":"FeatureCollection","features":[
        {"type":"Feature","geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]},"properties":{"features":[1]}}]}"#;
    assert!(read_geojson_points(poly).unwrap_err().to_string().contains("Point required"));
    let missing = br#"{"type":"FeatureCollection","features":[
        {"type":"Feature","geometry":{"type":"Point","coordinates":[0,0]},"properties":{"features":[1]}},
        {"type":"Feature","geometry":{"type":"Point","coordinates":[0,0]},"properties":{}}]}"#;
    assert!(read_geojson_points(missing).unwrap_err().to_string().contains('1'));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pts.geojson");
    std::fs::write(&p, point).unwrap();
    assert_eq!(load_geojson_points(&p).unwrap(), toks);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for encoder in [Encoder::None, Encoder::Sinusoidal, Encoder::rope(), Encoder::spherical_uniform()] {
        let model = Model::new(ModelConfig {
            dim: 6,
            heads: 2,
            layers: 2,
            ff_width: 7,
            seed: 99,
            encoder,
        })
        .unwrap();
        let p = dir.path().join(format!("{}.json", encoder.name()));
        save_checkpoint(&model, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.config(), model.config());
        for ((n1, a), (n2, b)) in model.tensors().into_iter().zip(back.tensors()) {
            assert_eq!(n1, n2);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b), "{n1}");
        }
    }
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"format_version\": 7}").unwrap();
    assert!(load_checkpoint(&bad).is_err());
}

#[test]
fn encode_is_deterministic_and_rotates() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_tokens(
        dir.path(),
        "in.csv",
        "id,lat_deg,lon_deg,f0,f1,f2,f3,f4,f5\nx,0,90,1,0,0,0,0,1\ny,-33.9,151.2,0.5,0.25,-1,2,0,0.125\n",
    );
    let (o1, o2) = (dir.path().join("o1.csv"), dir.path().join("o2.csv"));
    for o in [&o1, &o2] {
        let out = georope(&["encode", "--input", &input, "--output", path_str(o)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (b1, b2) = (std::fs::read(&o1).unwrap(), std::fs::read(&o2).unwrap());
    assert_eq!(b1, b2);
    let toks = load_geotokens_csv(&o1).unwrap();
    // 90°E rotates x̂ to ŷ in every block
    let f = toks[0].features();
    assert!(f[0].abs() < 1e-15 && (f[1] - 1.0).abs() < 1e-15);
    let stdout = georope(&["encode", "--input", &input]);
    assert_eq!(stdout.stdout, b1);
}

#[test]
fn encode_rejects_dim_four_without_pad() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_tokens(dir.path(), "d4.csv", "id,lat_deg,lon_deg,f0,f1,f2,f3\na,10,20,1,2,3,4\n");
    let out = georope(&["encode", "--input", &input, "--encoder", "spherical", "--dim", "4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple of 3"));
    let padded = georope(&["encode", "--input", &input, "--encoder", "spherical", "--pad"]);
    assert_eq!(padded.status.code(), Some(0));
    let wrong_dim = georope(&["encode", "--input", &input, "--dim", "6", "--pad"]);
    assert_eq!(wrong_dim.status.code(), Some(1));
}

#[test]
fn check_passes() {
    let out = georope(&["check", "--fidelity"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(!text.contains("[FAIL]"));
    assert!(text.contains("printed"));
}

#[test]
fn train_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tokens(
        dir.path(),
        "run.toml",
        "version = 1\n[task]\nn_tokens = 8\ntrain_instances = 100\neval_instances = 50\n[train]\nsteps = 20\nbatch_size = 8\n",
    );
    let ck = dir.path().join("model.json");
    let loss = dir.path().join("loss.csv");
    let out = georope(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--checkpoint",
        path_str(&ck),
        "--loss-csv",
        path_str(&loss),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&loss).unwrap().lines().count(), 21);
    let train_text = String::from_utf8_lossy(&out.stdout).to_string();
    let eval = georope(&["eval", "--config", &cfg, "--checkpoint", path_str(&ck), "--seed", "5"]);
    assert_eq!(eval.status.code(), Some(0));
    let acc = |s: &str| s.lines().find(|l| l.starts_with("accuracy")).unwrap().to_string();
    assert_eq!(acc(&train_text), acc(&String::from_utf8_lossy(&eval.stdout)));

    let bad = write_tokens(dir.path(), "bad.toml", "version = 1\n[model]\ndim = 5\n");
    assert_eq!(georope(&["train", "--config", &bad]).status.code(), Some(1));
    assert_eq!(georope(&["train", "--config", path_str(&dir.path().join("none.toml"))]).status.code(), Some(2));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = georope(&["bench", "--dims", "48,96", "--output", path_str(&csv)]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("log-log slope"));
    assert_eq!(georope(&["bench", "--reps", "3"]).status.code(), Some(1));
}
