use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xfmr_tl::grid::{compute_norm_stats, load_dataset, save_dataset};
use xfmr_tl::nn::{save_checkpoint, Architecture, Layer, LayerStack, ModelCheckpoint, Provenance, SynthesisModel, TrainConfig};
use xfmr_tl::surrogate::Geometry;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn xfmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xfmr"))
        .args(args)
        .env_remove("XFMR_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a small grid config with a quick `[train]` table.
fn small_config(dir: &Path, hidden: usize) -> PathBuf {
    let body = fs::read_to_string(configs().join("grid_example.toml"))
        .unwrap()
        .replace("include = [\"technologies.toml\"]", &format!("include = [{:?}]", configs().join("technologies.toml")))
        .replace("epochs = 50", "epochs = 5")
        .replace("hidden = 64", &format!("hidden = {hidden}"));
    let path = dir.join(format!("grid_h{hidden}.toml"));
    fs::write(&path, body).unwrap();
    path
}

fn gen_data(dir: &Path) -> PathBuf {
    let data = dir.join("data.xgrd");
    let out = ok(&xfmr(&["gen-data", "--config", p(&small_config(dir, 16)), "--out", p(&data)]));
    assert!(out.contains("3600 points"), "{out}");
    data
}

#[test]
fn gen_data_reports_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.xgrd");
    let out = ok(&xfmr(&[
        "gen-data",
        "--config",
        p(&small_config(dir.path(), 16)),
        "--out",
        p(&data),
        "--export-csv",
    ]));
    assert!(out.contains("3600 points (36 geometries x 100 cap pairs)"), "{out}");
    assert!(out.contains("split 2160/720/720"), "{out}");
    assert!(out.contains("d_out: mean"), "{out}");
    let csv = fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3601);
    assert_eq!(load_dataset(&data).unwrap().len(), 3600);
}

#[test]
fn missing_technology_fails_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fs::read_to_string(small_config(dir.path(), 16))
        .unwrap()
        .replace("tech = \"tgt22_qalb_39g\"", "tech = \"tgt99_none\"");
    let path = dir.path().join("bad.toml");
    fs::write(&path, cfg).unwrap();
    let out = xfmr(&["gen-data", "--config", p(&path), "--out", p(&dir.path().join("x.xgrd"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("tgt99_none"));
}

#[test]
fn train_transfer_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = gen_data(d);
    let cfg = small_config(d, 16);
    let model = d.join("m.xckp");
    let out = ok(&xfmr(&["train", "--config", p(&cfg), "--dataset", p(&data), "--out", p(&model)]));
    assert!(out.contains("random init"), "{out}");
    let hist = fs::read_to_string(d.join("m.history.csv")).unwrap();
    let mut lines = hist.lines();
    assert_eq!(lines.next(), Some("epoch,lr,train_loss,val_r2"));
    assert_eq!(lines.count(), 5);

    let tuned = d.join("t.xckp");
    let out = ok(&xfmr(&[
        "transfer", "--config", p(&cfg), "--dataset", p(&data), "--out", p(&tuned), "--init-from", p(&model),
        "--density", "0.05", "--seed", "3",
    ]));
    assert!(out.contains("init from tgt22_qalb_39g_small"), "{out}");
    assert!(out.contains("on 108 points"), "{out}");

    let wide = small_config(d, 32);
    let out = xfmr(&["train", "--config", p(&wide), "--dataset", p(&data), "--out", p(&d.join("w.xckp")), "--init-from", p(&model)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("hidden: 16 vs 32"));
    let out = xfmr(&["transfer", "--config", p(&cfg), "--dataset", p(&data), "--out", p(&d.join("n.xckp"))]);
    assert!(!out.status.success());

    let a = ok(&xfmr(&["eval", "--checkpoint", p(&tuned), "--dataset", p(&data)]));
    let b = ok(&xfmr(&["eval", "--checkpoint", p(&tuned), "--dataset", p(&data)]));
    assert_eq!(a, b);
    assert!(a.starts_with("split: test\nn: 720\nr2_mean: "), "{a}");
    let v = ok(&xfmr(&["eval", "--checkpoint", p(&tuned), "--dataset", p(&data), "--split", "val"]));
    assert!(v.starts_with("split: val\nn: 720\n"), "{v}");
    let t = ok(&xfmr(&["eval", "--checkpoint", p(&tuned), "--dataset", p(&data), "--split", "train"]));
    assert!(t.starts_with("split: train\nn: 2160\n"), "{t}");
}

/// Hidden width 8 carries `[h; -h]` so ReLU passes every sign unchanged.
fn identity_stack(stack: &mut LayerStack<f32>, input: usize, output: usize) {
    let n = stack.linear_count();
    let mut li = 0;
    for layer in &mut stack.layers {
        match layer {
            Layer::Linear(l) => {
                let (rows, cols) = l.weight.dim();
                let mut w = Array2::zeros((rows, cols));
                if li == 0 {
                    for j in 0..input.min(4) {
                        w[[j, j]] = 1.0;
                        w[[j + 4, j]] = -1.0;
                    }
                } else if li + 1 == n {
                    for j in 0..output.min(4) {
                        w[[j, j]] = 1.0;
                        w[[j, j + 4]] = -1.0;
                    }
                } else {
                    for j in 0..rows {
                        w[[j, j]] = 1.0;
                    }
                }
                l.weight = w;
                l.bias = Array1::zeros(rows);
                li += 1;
            }
            Layer::BatchNorm(bn) => {
                bn.running_mean.fill(0.0);
                bn.running_var.fill(1.0 - bn.eps);
            }
            Layer::Relu => {}
        }
    }
}

#[test]
fn eval_of_oracle_checkpoint_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = gen_data(d);
    // Geometry columns replaced by copies of (c1, c2, zin_re): standardized
    // targets then equal standardized inputs.
    let mut ds = load_dataset(&data).unwrap();
    for pt in &mut ds.points {
        pt.v = Geometry {
            d_out: pt.x1.c1,
            w_p: pt.x1.c2,
            w_s: pt.x2.re,
        };
    }
    let ds = compute_norm_stats(ds).unwrap();
    let fixture = d.join("oracle.xgrd");
    save_dataset(&ds, &fixture).unwrap();

    let mut model: SynthesisModel<f32> = SynthesisModel::new(Architecture::with_hidden(8), &mut ChaCha8Rng::seed_from_u64(0));
    identity_stack(&mut model.circuit, 4, 5);
    identity_stack(&mut model.physical, 5, 3);
    model.norm_stats = ds.norm_stats.clone();
    let cfg = TrainConfig { hidden: 8, ..TrainConfig::default() };
    let ckpt = ModelCheckpoint {
        model,
        provenance: Provenance {
            config: cfg,
            seed: 0,
            grid: "oracle".into(),
            tech: ds.tech.name.clone(),
            density: 1.0,
            epochs: 0,
            init: None,
            init_fingerprint: None,
        },
    };
    let path = d.join("oracle.xckp");
    save_checkpoint(&ckpt, &path).unwrap();
    let out = ok(&xfmr(&["eval", "--checkpoint", p(&path), "--dataset", p(&fixture)]));
    let mean: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("r2_mean: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((mean - 1.0).abs() < 1e-9, "{out}");
}

fn tiny_plan(dir: &Path) -> PathBuf {
    let body = format!(
        r#"
include = [{techs:?}]
out = {out:?}
source_densities = [0.5, 1.0]
target_densities = [0.05, 1.0]
seeds = [0, 1]
matched_densities = [0.05]

[train]
epochs = 3
hidden = 8
batch_size = 64

[source]
name = "src"
tech = "src45_oaob_30g"
d_out = {{ min = 40.0, max = 200.0, steps = 3 }}
w_p = {{ min = 3.0, max = 8.0, steps = 2 }}
w_s = {{ min = 9.0, max = 16.0, steps = 2 }}
c1 = {{ min = 2.0, max = 30.0, steps = 5 }}
c2 = {{ min = 2.0, max = 30.0, steps = 5 }}

[[targets]]
name = "tgt"
tech = "tgt22_qalb_39g"
d_out = {{ min = 30.0, max = 120.0, steps = 3 }}
w_p = {{ min = 2.5, max = 7.0, steps = 2 }}
w_s = {{ min = 8.0, max = 14.0, steps = 2 }}
c1 = {{ min = 1.5, max = 25.0, steps = 6 }}
c2 = {{ min = 1.5, max = 25.0, steps = 6 }}
"#,
        techs = configs().join("technologies.toml"),
        out = dir.join("plan_out"),
    );
    let path = dir.join("plan.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn experiment_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let plan = tiny_plan(d);
    let out = ok(&xfmr(&["experiment", "--config", p(&plan), "--workers", "2"]));
    assert!(out.contains("0 failed"), "{out}");
    let results = d.join("plan_out/results.csv");
    let text = fs::read_to_string(&results).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("grid,target_density,source_density,seed,matched,r2_val,r2_test,ri_pct"));
    // (2 densities + 20%) x 2 seeds non-transfer, 2 x 2 sources x 2 seeds
    // transfer, 2 sources x 2 seeds matched at 5%.
    assert_eq!(lines.count(), 6 + 8 + 4);
    for f in ["records.jsonl", "histories.csv", "source.csv", "ri_table.csv", "best_ri.csv", "data_reduction.csv"] {
        assert!(d.join("plan_out").join(f).exists(), "{f}");
    }

    let seed_only = ok(&xfmr(&["experiment", "--config", p(&plan), "--seed", "1", "--out", p(&d.join("one"))]));
    assert!(seed_only.contains("9 runs"), "{seed_only}");

    let figs = d.join("figs");
    let listed = ok(&xfmr(&["report", "--results", p(&results), "--out", p(&figs)]));
    assert_eq!(listed.lines().count(), 8);
    let mut names: Vec<String> = fs::read_dir(&figs)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "best_ri_matched.csv", "best_ri_matched.svg", "r2_comparison.csv", "r2_comparison.svg",
            "ri_by_density.csv", "ri_by_density.svg", "training_dynamics_tgt.csv", "training_dynamics_tgt.svg"
        ]
    );
    let again = d.join("figs2");
    ok(&xfmr(&["report", "--config", p(&results), "--out", p(&again)]));
    for n in &names {
        assert_eq!(fs::read(figs.join(n)).unwrap(), fs::read(again.join(n)).unwrap(), "{n}");
    }
    let dyn_csv = fs::read_to_string(figs.join("training_dynamics_tgt.csv")).unwrap();
    assert!(dyn_csv.lines().count() > 1);

    let empty = d.join("empty.csv");
    fs::write(&empty, "grid,target_density,source_density,seed,matched,r2_val,r2_test,ri_pct\n").unwrap();
    let out = xfmr(&["report", "--results", p(&empty), "--out", p(&d.join("none"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no records"));
}
