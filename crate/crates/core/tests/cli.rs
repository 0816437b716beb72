use std::fs;
use std::path::Path;
use std::process::Command;

use robuda::experiment::{mean_sd, RunConfig};

const BIN: &str = env!("CARGO_BIN_EXE_robuda");

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    fs::write(
        &path,
        "dataset.n = 200\npretrain.epochs = 2\nselftrain.epochs = 2\nseeds = 0,1,2\nmeta.lr = 10\n",
    )
    .unwrap();
    path
}

fn robuda(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

#[test]
fn runs_are_byte_identical_and_summaries_aggregate_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = robuda(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--scheme",
            "srouda",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for seed in 0..3 {
        let name = format!("srouda/seed{seed}_metrics.csv");
        let (x, y) = (fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y);
    }
    let header = fs::read_to_string(a.join("srouda/seed0_metrics.csv")).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "epoch,scheme,clean_acc,robust_pgd20,robust_fgsm,robust_cwinf,pseudo_acc,at_loss,meta_loss,feature_distance"
    );
    assert_eq!(header.lines().count(), 1 + 3);

    let summary = fs::read_to_string(a.join("srouda/summary.csv")).unwrap();
    for column in [
        "clean_acc",
        "robust_pgd20",
        "robust_fgsm",
        "robust_cwinf",
        "pseudo_acc",
        "feature_distance",
    ] {
        let finals: Vec<f64> = (0..3)
            .map(|s| {
                csv_column(&a.join(format!("srouda/seed{s}_metrics.csv")), column)
                    .last()
                    .unwrap()
                    .parse()
                    .unwrap()
            })
            .collect();
        let (mean, sd) = mean_sd(&finals);
        let line = summary.lines().find(|l| l.starts_with(&format!("{column},"))).unwrap();
        let parts: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        // per-seed files carry 4 (accuracies) or 6 decimals
        assert!((parts[0] - mean).abs() < 1e-4, "{column}: {} vs {mean}", parts[0]);
        assert!((parts[1] - sd).abs() < 2e-4, "{column}: {} vs {sd}", parts[1]);
        assert_eq!(parts[2], 3.0);
    }
}

#[test]
fn metadata_reconstructs_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("o");
    let o = robuda(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--scheme",
        "uda",
        "--seed",
        "5",
        "--attack",
        "pgd20,fgsm",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let meta = fs::read_to_string(out.join("uda/metadata.txt")).unwrap();
    let back = RunConfig::from_text(&meta).unwrap();
    assert_eq!(back.seeds, vec![5]);
    assert_eq!(back.attacks.len(), 2);
    assert_eq!(back.meta_lr, 10.0);
    assert_eq!(back.alpha_ratio, 0.25);
    assert!(meta.contains("meta.mode = unrolled"));
    assert!(meta.contains("# seed 5: attack.epsilon_raw = "));
    // rerunning from the metadata alone reproduces the metrics
    let meta_path = dir.path().join("meta.cfg");
    fs::write(&meta_path, &meta).unwrap();
    let out2 = dir.path().join("o2");
    assert!(robuda(&[
        "run",
        "--config",
        meta_path.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap()
    ])
    .status
    .success());
    assert_eq!(
        fs::read(out.join("uda/seed5_metrics.csv")).unwrap(),
        fs::read(out2.join("uda/seed5_metrics.csv")).unwrap()
    );
}

#[test]
fn compare_writes_five_rows_with_one_column_per_attack() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("cmp");
    let o = robuda(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "0",
        "--attack",
        "fgsm,pgd20,cwinf",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "scheme,clean,fgsm,pgd20,cwinf");
    assert_eq!(lines.len(), 1 + 5);
    let schemes: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(schemes, ["uda", "source-at", "at-uda", "uda-at", "srouda"]);
    for l in &lines[1..] {
        let acc: Vec<f64> = l.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(acc.len(), 1 + 3);
        assert!(acc.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn exit_status_distinguishes_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = out.to_str().unwrap();
    assert_eq!(robuda(&["run", "--scheme", "mdd", "--out", o]).status.code(), Some(2));
    assert_eq!(robuda(&["run", "--attack", "pgd7", "--out", o]).status.code(), Some(2));
    assert_eq!(
        robuda(&["run", "--config", "/nonexistent/cfg", "--out", o])
            .status
            .code(),
        Some(2)
    );
    let diverging = robuda(&[
        "run",
        "--scheme",
        "uda",
        "--set",
        "dataset.n=100",
        "--set",
        "pretrain.lr=1e300",
        "--set",
        "pretrain.epochs=3",
        "--out",
        o,
    ]);
    assert_eq!(
        diverging.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&diverging.stderr)
    );
    assert!(String::from_utf8_lossy(&diverging.stderr).contains("epoch"));
}

#[test]
fn gen_data_round_trips_through_load() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("grid.csv");
    let o = robuda(&[
        "gen-data",
        "--set",
        "dataset.kind=grid",
        "--set",
        "dataset.n=40",
        "--seed",
        "3",
        "--file",
        file.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&file).unwrap();
    assert!(text.contains("# grid 8 8 1"));
    let loaded = robuda::data::load_dataset::<f64>(&file).unwrap();
    let generated =
        robuda::experiment::build_data(&RunConfig::from_text("dataset.kind = grid\ndataset.n = 40").unwrap(), 3)
            .unwrap();
    assert_eq!(loaded, generated);

    let out = dir.path().join("from_file");
    let o = robuda(&[
        "run",
        "--scheme",
        "uda",
        "--set",
        "dataset.kind=file",
        "--set",
        &format!("dataset.path={}", file.display()),
        "--set",
        "pretrain.epochs=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_configs_parse() {
    for name in ["two_moons.cfg", "grid.cfg"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        let cfg = RunConfig::from_text(&fs::read_to_string(&path).unwrap()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seeds.len(), 5);
    }
}
