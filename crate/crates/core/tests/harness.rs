mod common;

use std::path::Path;
use std::process::Command;

use catgraph::data::{GeneratorConfig, Split};
use catgraph::harness::*;
use catgraph::models::{load_checkpoint, EnergyHeadKind, ForceHeadKind, Model};
use catgraph::ElementTable;

fn tiny(n_train: usize, n_val: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.generator = Some(GeneratorConfig {
        n_train,
        n_val,
        ..Default::default()
    });
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.micro_batch = 2;
    cfg.rewire = catgraph::RewireStrategy::RemoveTag0;
    cfg
}

#[test]
fn training_is_bit_reproducible() {
    let table = ElementTable::bundled();
    let cfg = tiny(8, 3);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&cfg, &table, Some(a.path())).unwrap();
    train(&cfg, &table, Some(b.path())).unwrap();
    for f in ["best.ckpt", "last.ckpt", "metrics.json", "train_log.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let table = ElementTable::bundled();
    let cfg = tiny(8, 3);
    let data = prepare_data(&cfg, &load_records(&cfg, &table).unwrap()).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| train_on(&cfg, &table, &data, None).unwrap());
    let b = three.install(|| train_on(&cfg, &table, &data, None).unwrap());
    assert_eq!(a.report, b.report);
    assert_eq!(
        catgraph::models::checkpoint_bytes(&a.last, &serde_json::Value::Null),
        catgraph::models::checkpoint_bytes(&b.last, &serde_json::Value::Null)
    );
}

#[test]
fn is2re_trains_on_energy_only() {
    let table = ElementTable::bundled();
    let out = train(&tiny(6, 2), &table, None).unwrap();
    for h in &out.history {
        assert_eq!(h.train.force, 0.0);
        assert_eq!(h.train.ec, 0.0);
        assert_eq!(h.train.total, h.train.energy);
    }
}

#[test]
fn mean_predictor_error_is_the_label_spread() {
    let table = ElementTable::bundled();
    let cfg = tiny(20, 10);
    let data = prepare_data(&cfg, &load_records(&cfg, &table).unwrap()).unwrap();
    let mut model = Model::new(cfg.model_config(), &table, 0).unwrap();
    model.normalization = fit_normalization(&data.train, cfg.task);
    let train_mean = data.train.iter().map(|(s, _)| s.energy.unwrap()).sum::<f64>() / data.train.len() as f64;
    for (split, samples) in &data.val {
        let m = evaluate_samples(&model, samples, *split, 4).unwrap();
        let mad = samples
            .iter()
            .map(|(s, _)| (s.energy.unwrap() - train_mean).abs())
            .sum::<f64>()
            / samples.len() as f64;
        assert!(
            (m.e_mae_mev - 1000.0 * mad).abs() < 1e-9 * m.e_mae_mev.max(1.0),
            "{split}"
        );
    }
}

#[test]
fn report_against_itself_is_zero() {
    let table = ElementTable::bundled();
    let out = train(&tiny(6, 2), &table, None).unwrap();
    let mut r = out.report.clone();
    assert_eq!(r.compare_to(&out.report, "self").unwrap(), 0.0);
    assert_eq!(r.improvement_pct, Some(0.0));
}

#[test]
fn checkpoint_evaluation_reproduces_metrics() {
    let table = ElementTable::bundled();
    let cfg = tiny(8, 3);
    let dir = tempfile::tempdir().unwrap();
    let out = train(&cfg, &table, Some(dir.path())).unwrap();
    let (model, echo) = load_checkpoint(dir.path().join("best.ckpt"), &table).unwrap();
    let echo_cfg: ExperimentConfig = serde_json::from_value(echo).unwrap();
    assert_eq!(echo_cfg, cfg);
    let records = load_records(&echo_cfg, &table).unwrap();
    let report = evaluate_model(&model, &echo_cfg, &records, &Split::VALIDATION).unwrap();
    assert_eq!(report.splits, out.report.splits);
    assert_eq!(RunReport::read(&dir.path().join("metrics.json")).unwrap(), out.report);
}

#[test]
fn evaluation_rejects_head_mismatch() {
    let table = ElementTable::bundled();
    let cfg = tiny(4, 2);
    let records = load_records(&cfg, &table).unwrap();
    let mut other = cfg.model_config();
    other.heads.energy_head = EnergyHeadKind::WFinal;
    let model = Model::new(other, &table, 0).unwrap();
    let err = evaluate_model(&model, &cfg, &records, &[Split::ValId]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

/// Central differences of the batch loss against the summed gradients; FE
/// force training and exact EC go through the finite-difference HVP.
fn check_batch_gradients(cfg: &ExperimentConfig) {
    let table = ElementTable::bundled();
    let data = prepare_data(cfg, &load_records(cfg, &table).unwrap()).unwrap();
    let mut model = common::busy_model(cfg.model_config(), 3);
    model.normalization = fit_normalization(&data.train, cfg.task);
    let batch: Vec<&Sample> = data.train.iter().take(3).collect();
    let (_, grads) = batch_gradients(&model, cfg, &batch).unwrap();
    let mut checked = 0;
    for (id, g) in &grads {
        let base = (**model.store.value(*id)).clone();
        for k in [0, base.len() / 2] {
            let h = 1e-6;
            let mut p = base.clone();
            p.as_mut_slice()[k] += h;
            model.store.set_value(*id, p);
            let lp = batch_gradients(&model, cfg, &batch).unwrap().0.total;
            let mut m = base.clone();
            m.as_mut_slice()[k] -= h;
            model.store.set_value(*id, m);
            let lm = batch_gradients(&model, cfg, &batch).unwrap().0.total;
            model.store.set_value(*id, base.clone());
            let fd = (lp - lm) / (2.0 * h);
            let an = g.as_slice()[k];
            let name = &model.store.get(*id).name;
            assert!(
                (fd - an).abs() <= 2e-4 * fd.abs().max(an.abs()).max(1e-2),
                "{name}[{k}]: fd {fd} vs {an}"
            );
            checked += 1;
        }
    }
    assert!(checked > 10);
}

#[test]
fn force_training_gradients() {
    let mut cfg = tiny(3, 1);
    ForceVariant::Fe.apply(&mut cfg, 0.1);
    cfg.micro_batch = 2;
    check_batch_gradients(&cfg);
}

#[test]
fn exact_energy_conservation_gradients() {
    let mut cfg = tiny(3, 1);
    ForceVariant::Grad.apply(&mut cfg, 0.5);
    cfg.ec_mode = EcMode::Exact;
    check_batch_gradients(&cfg);
}

#[test]
fn stop_gradient_only_drops_the_energy_path() {
    let table = ElementTable::bundled();
    let mut cfg = tiny(3, 1);
    ForceVariant::Grad.apply(&mut cfg, 0.5);
    let data = prepare_data(&cfg, &load_records(&cfg, &table).unwrap()).unwrap();
    let mut model = common::busy_model(cfg.model_config(), 3);
    model.normalization = fit_normalization(&data.train, cfg.task);
    let batch: Vec<&Sample> = data.train.iter().take(3).collect();
    let (stop_loss, stop) = batch_gradients(&model, &cfg, &batch).unwrap();
    cfg.ec_mode = EcMode::Exact;
    let (exact_loss, exact) = batch_gradients(&model, &cfg, &batch).unwrap();
    assert_eq!(stop_loss, exact_loss);
    let mut differs = 0;
    for (id, g) in &stop {
        let diff = common::max_abs_diff(g.as_slice(), exact[id].as_slice());
        if model.store.get(*id).name.starts_with("force.") {
            assert!(diff < 1e-12, "{}", model.store.get(*id).name);
        } else if diff > 1e-9 {
            differs += 1;
        }
    }
    assert!(differs > 5);
}

#[test]
fn direct_head_bench_has_no_tape() {
    let table = ElementTable::bundled();
    let mut cfg = tiny(4, 4);
    ForceVariant::Direct.apply(&mut cfg, 0.0);
    let records = load_records(&cfg, &table).unwrap();
    let model = Model::new(cfg.model_config(), &table, 0).unwrap();
    assert_eq!(model.config.heads.force_head, ForceHeadKind::Direct);
    let opts = BenchOptions {
        split: Split::ValId,
        repeats: 3,
        batch_size: 2,
        rewire: cfg.rewire,
    };
    let r = bench_model(
        &model,
        &cfg,
        &BenchSource::Memory(records.split(Split::ValId).to_vec()),
        opts,
    )
    .unwrap();
    assert_eq!(r.peak_tape_nodes, 0);
    assert_eq!(r.n_samples, 4);
    assert_eq!(r.inference_times_s.len(), 3);
    assert!((r.throughput_sps * r.forward_time_s - 4.0).abs() < 0.4);
}

fn cli(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_catgraph"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("g.json"), r#"{ "n_train": 6, "n_val": 2 }"#).unwrap();
    let ok = |o: std::process::Output| {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        o
    };
    ok(cli(&["generate", "--config", "g.json", "--out", "data"], d));
    assert!(d.join("data/val_ood_both.jsonl").exists());
    ok(cli(
        &[
            "preprocess",
            "--strategy",
            "remove-tag0",
            "--in",
            "data",
            "--out",
            "data_rt0",
            "--stats",
            "stats.csv",
        ],
        d,
    ));
    let stats = std::fs::read_to_string(d.join("stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 1 + 6 + 4 * 2);

    std::fs::write(
        d.join("e.json"),
        r#"{ "rewire": "remove_tag0", "epochs": 1, "batch_size": 3, "data": { "dir": "data_rt0" } }"#,
    )
    .unwrap();
    ok(cli(&["train", "--config", "e.json", "--out", "run"], d));
    for f in ["best.ckpt", "last.ckpt", "metrics.json", "train_log.csv"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let o = ok(cli(
        &[
            "eval",
            "--ckpt",
            "run/best.ckpt",
            "--splits",
            "all",
            "--baseline",
            "run/metrics.json",
        ],
        d,
    ));
    let report: RunReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report.improvement_pct, Some(0.0));
    assert_eq!(report.splits.len(), 4);

    let o = ok(cli(
        &[
            "bench",
            "--ckpt",
            "run/best.ckpt",
            "--split",
            "val_id",
            "--repeats",
            "2",
        ],
        d,
    ));
    let bench: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(bench["n_samples"], 2);
    assert_eq!(bench["peak_tape_nodes"], 0);

    std::fs::write(
        d.join("grid.json"),
        r#"{ "base": { "epochs": 1, "batch_size": 3, "data": { "generator": { "n_train": 4, "n_val": 2 } } },
             "rewire": ["none", "remove_tag0"], "seeds": [0] }"#,
    )
    .unwrap();
    ok(cli(&["ablate", "--grid", "grid.json", "--out", "table.csv"], d));
    let table = std::fs::read_to_string(d.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(d.join("table.json").exists());
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), r#"{ "epochs": 1, "no_such_field": 3 }"#).unwrap();
    assert_eq!(
        cli(&["train", "--config", "bad.json", "--out", "run"], d).status.code(),
        Some(2)
    );
    std::fs::write(d.join("bad2.json"), r#"{ "loss": { "lambda_f": 1.0 } }"#).unwrap();
    assert_eq!(
        cli(&["train", "--config", "bad2.json", "--out", "run"], d)
            .status
            .code(),
        Some(2)
    );
    std::fs::write(
        d.join("diverge.json"),
        r#"{ "epochs": 3, "batch_size": 2, "rewire": "remove_tag0", "optimizer": { "lr": 1e300, "lr_min": 1e300 },
             "data": { "generator": { "n_train": 4, "n_val": 1 } } }"#,
    )
    .unwrap();
    assert_eq!(
        cli(&["train", "--config", "diverge.json", "--out", "run"], d)
            .status
            .code(),
        Some(3)
    );
    let o = Command::new(env!("CARGO_BIN_EXE_catgraph"))
        .args(["generate", "--out", "x"])
        .current_dir(d)
        .env("PHAST_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fifty_samples_can_be_memorized() {
    let table = ElementTable::bundled();
    let mut cfg = tiny(50, 10);
    cfg.backbone.kind = catgraph::models::BackboneKind::SchnetLite;
    cfg.heads.energy_head = EnergyHeadKind::GlobalSum;
    cfg.epochs = 200;
    cfg.batch_size = 5;
    cfg.micro_batch = 5;
    cfg.optimizer.lr = 3e-3;
    cfg.optimizer.lr_min = 1e-5;
    cfg.eval_every = cfg.epochs;
    let data = prepare_data(&cfg, &load_records(&cfg, &table).unwrap()).unwrap();
    let out = train_on(&cfg, &table, &data, None).unwrap();
    let m = evaluate_samples(&out.last, &data.train, Split::Train, 16).unwrap();
    assert!(m.e_mae_mev < 20.0, "train MAE {} meV", m.e_mae_mev);
}
