use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k")
}

fn bagssl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bagssl")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// A small MNIST config written into `dir`.
fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.txt");
    let text = format!(
        "dataset.dir = {}\ndataset.train_limit = 200\ndataset.test_limit = 60\n\
         optim.epochs = 1\noptim.batch_size = 64\nfigures.images = 16\nfigures.neighbor_images = 4\n{extra}",
        data_dir().display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn run_in(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    let mut all = vec!["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    all.extend_from_slice(args);
    bagssl(&all)
}

#[test]
fn zero_epochs_saves_the_initialisation_and_an_empty_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "optim.epochs = 0\n");
    let out = tmp.path().join("run");
    assert_eq!(code(&run_in(&cfg, &out, &["pretrain"])), 0);
    assert!(out.join("checkpoint_final.bssl").exists());
    assert!(!out.join("checkpoint_epoch_001.bssl").exists());
    assert_eq!(std::fs::read_to_string(out.join("loss_curve.csv")).unwrap(), "epoch,loss,lr\n");
}

#[test]
fn empty_dataset_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("empty");
    std::fs::create_dir(&data).unwrap();
    let header = |magic: u32, dims: &[u32]| {
        let mut b = magic.to_be_bytes().to_vec();
        dims.iter().for_each(|d| b.extend(d.to_be_bytes()));
        b
    };
    std::fs::write(data.join("train-images-idx3-ubyte"), header(0x803, &[0, 28, 28])).unwrap();
    std::fs::write(data.join("train-labels-idx1-ubyte"), header(0x801, &[0])).unwrap();
    let cfg = tmp.path().join("cfg.txt");
    std::fs::write(&cfg, format!("dataset.dir = {}\n", data.display())).unwrap();
    let out = tmp.path().join("run");
    for cmd in ["pretrain", "cooc"] {
        let o = run_in(&cfg, &out, &[cmd]);
        assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists());
    }
}

#[test]
fn config_errors_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "optim.learning_rate = 0.1\n");
    let o = run_in(&cfg, &tmp.path().join("run"), &["pretrain"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("optim.learning_rate"));
    assert_eq!(code(&bagssl(&["verify", "prop1", "--k", "100"])), 1);
    assert_eq!(code(&bagssl(&["nonsense"])), 1);
}

#[test]
fn verify_reports_and_exit_codes() {
    let o = bagssl(&["verify", "prop1", "--k", "4", "--dim", "2", "--w", "2", "--trials", "10"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("lambda=1"));
    let o = bagssl(&["verify", "duality", "--matrices", "20"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("PASS").count(), 20);
    let o = bagssl(&["verify", "gradcheck", "--trials", "2", "--corrupt", "standardize_eval"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("standardize_eval"));
}

#[test]
fn planted_factorization_reports_the_lambda_link() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = bagssl(&["--out", out.to_str().unwrap(), "factorize", "--planted", "32", "--dim", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("factorize_report.txt")).unwrap();
    assert!(report.starts_with("# w = 2, matching spectral lambda = w/2 = 1\n"));
    let residual: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("residual = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(residual < 1e-3);
}

#[test]
fn checkpoint_commands_and_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("run");
    assert_eq!(code(&run_in(&cfg, &out, &["pretrain"])), 0);

    for p in ["bag(1)", "bag(16)"] {
        assert_eq!(code(&run_in(&cfg, &out, &["eval", "--protocol", p])), 0);
    }
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "protocol,classifier,accuracy,seed,note");
    assert!(rows[1].starts_with("bag(1),knn(20),") && rows[2].starts_with("bag(16),knn(20),"));
    assert_eq!(rows.len(), 3);

    let o = run_in(&cfg, &out, &["eval", "--protocol", "central"]);
    assert_eq!(code(&o), 0);
    assert!(std::fs::read_to_string(out.join("eval.csv")).unwrap().contains("fixed-scale"));
    assert_eq!(code(&run_in(&cfg, &out, &["eval", "--protocol", "bag(2)", "--classifier", "knn(201)"])), 1);

    assert_eq!(code(&run_in(&cfg, &out, &["figures", "heatmap", "--x", "9", "--y", "4"])), 0);
    let mut pgms: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("heatmap_") && n.ends_with(".pgm"))
        .collect();
    pgms.sort();
    assert_eq!(pgms, ["heatmap_img0_x9_y4_embedding.pgm", "heatmap_img0_x9_y4_projection.pgm"]);

    assert_eq!(code(&run_in(&cfg, &out, &["figures", "neighbors", "--k", "0"])), 1);
    assert_eq!(code(&run_in(&cfg, &out, &["figures", "neighbors", "--k", "5"])), 0);
    let manifest = std::fs::read_to_string(out.join("neighbors_img0_x10_y10_embedding.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 2 + 5);

    assert_eq!(code(&run_in(&cfg, &out, &["figures", "convergence"])), 0);
    let curve = std::fs::read_to_string(out.join("convergence_embedding.csv")).unwrap();
    let ns: Vec<&str> = curve.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ns, ["1", "2", "4", "8", "16", "all"]);
}

#[test]
fn effective_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "seed = 3\n");
    let first = tmp.path().join("first");
    assert_eq!(code(&run_in(&cfg, &first, &["pretrain"])), 0);
    let effective = first.join("config.txt");
    let second = tmp.path().join("second");
    assert_eq!(code(&run_in(&effective, &second, &["pretrain"])), 0);
    for f in ["checkpoint_final.bssl", "loss_curve.csv"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
}
