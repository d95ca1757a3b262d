use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lwinnn::synth::{generate, write_dataset, SyntheticSpec};
use lwinnn::{
    write_bundle, write_mask, DatasetManifest, EmbeddingBank, FeatureBundle, Label, ManifestEntry, Mask,
    PatchScoreMap, PixelAnomalyMap, Split, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lwinnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lwinnn")).args(args).env_remove("LWINN_THREADS").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = lwinnn(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    lwinnn(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synthetic(dir: &Path, spec: SyntheticSpec) -> (PathBuf, PathBuf) {
    let w = write_dataset(&generate(&spec).unwrap(), dir).unwrap();
    (w.train_manifest, w.test_manifest)
}

fn manifest(path: &Path, split: Split, entries: Vec<ManifestEntry>) {
    DatasetManifest { split, category: "unit".into(), entries }.write(path).unwrap();
}

fn one_layer(id: &str, label: Label, c: usize, h: usize, w: usize, data: Vec<f32>, stride: usize) -> FeatureBundle {
    FeatureBundle::new(id, h * stride, w * stride, label, vec![Tensor::new(vec![c, h, w], data).unwrap()]).unwrap()
}

#[test]
fn manifest_problems_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.manifest");
    fs::write(&empty, "# split: train\n").unwrap();
    assert_eq!(code(&["fit", "--train", s(&empty), "--bank", s(&dir.path().join("b"))]), 2);
    assert_eq!(code(&["fit", "--train", s(&dir.path().join("missing")), "--bank", s(&dir.path().join("b"))]), 2);

    let (_, test) = synthetic(&dir.path().join("d"), SyntheticSpec::default());
    let text = fs::read_to_string(&test).unwrap().replace("# split: test", "# split: train");
    let mixed = dir.path().join("d/mixed.manifest");
    fs::write(&mixed, text).unwrap();
    let out = lwinnn(&["fit", "--train", s(&mixed), "--bank", s(&dir.path().join("b"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("normal"));
    assert!(!dir.path().join("b").exists());
}

#[test]
fn overwrite_and_fingerprint_guards() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synthetic(dir.path(), SyntheticSpec::default());
    let bank = dir.path().join("bank.lwnk");
    ok(&["fit", "--train", s(&train), "--bank", s(&bank)]);
    let first = fs::read(&bank).unwrap();
    // same configuration: rerun replaces it byte for byte
    ok(&["fit", "--train", s(&train), "--bank", s(&bank)]);
    assert_eq!(fs::read(&bank).unwrap(), first);

    assert_eq!(code(&["fit", "--train", s(&train), "--bank", s(&bank), "--set", "pooling=off"]), 3);
    assert_eq!(fs::read(&bank).unwrap(), first);
    assert_eq!(code(&["score", "--test", s(&test), "--bank", s(&bank), "--out", s(&dir.path().join("o")), "--set", "interpolation=nearest"]), 4);

    ok(&["fit", "--train", s(&train), "--bank", s(&bank), "--set", "pooling=off", "--force"]);
    assert_eq!(EmbeddingBank::read_fingerprint(&bank).unwrap(), "pooling=0;pool_kernel=3;pool_stride=1;interpolation=bilinear;layers=0,1,2");
    assert_eq!(code(&["score", "--test", s(&test), "--bank", s(&bank), "--out", s(&dir.path().join("o"))]), 4);
}

#[test]
fn resnet_shaped_bundles_give_448_channel_bank() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut entries = Vec::new();
    for i in 0..10 {
        let layers = [(64, 64), (128, 32), (256, 16)]
            .iter()
            .map(|&(c, h)| Tensor::new(vec![c, h, h], (0..c * h * h).map(|_| rng.gen_range(0.0f32..1.0)).collect()).unwrap())
            .collect();
        let b = FeatureBundle::new(format!("img{i}"), 256, 256, Label::Normal, layers).unwrap();
        let p = dir.path().join(format!("img{i}.lwnb"));
        write_bundle(&b, &p).unwrap();
        entries.push(ManifestEntry { bundle_path: p, label: Label::Normal, mask_path: None });
    }
    let m = dir.path().join("train.manifest");
    manifest(&m, Split::Train, entries);
    let bank = dir.path().join("bank");
    let out = ok(&["fit", "--train", s(&m), "--bank", s(&bank)]);
    assert!(out.contains("n_train\t10"), "{out}");
    assert!(out.contains("dims\t448x62x62"), "{out}");
    let b = EmbeddingBank::read(&bank).unwrap();
    assert_eq!((b.len(), b.patch_dims()), (10, (448, 62, 62)));

    ok(&["fit", "--train", s(&m), "--bank", s(&dir.path().join("small")), "--max-train-samples", "3"]);
    assert_eq!(EmbeddingBank::read(dir.path().join("small")).unwrap().len(), 3);
}

#[test]
fn scoring_the_training_set_gives_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = synthetic(dir.path(), SyntheticSpec { noise: 0.05, ..SyntheticSpec::default() });
    let bank = dir.path().join("bank");
    ok(&["fit", "--train", s(&train), "--bank", s(&bank)]);
    let out = dir.path().join("self");
    ok(&["score", "--test", s(&train), "--bank", s(&bank), "--out", s(&out)]);
    let index = fs::read_to_string(out.join("scores.tsv")).unwrap();
    let rows: Vec<&str> = index.lines().filter(|l| l.starts_with("train_")).collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert_eq!(r.split('\t').nth(1), Some("0"), "{r}");
    }
}

#[test]
fn planted_patch_is_the_hot_spot() {
    let dir = tempfile::tempdir().unwrap();
    let (c, g, stride) = (4, 8, 4);
    let mut train = Vec::new();
    for i in 0..3 {
        let p = dir.path().join(format!("t{i}.lwnb"));
        write_bundle(&one_layer(&format!("t{i}"), Label::Normal, c, g, g, vec![0.5; c * g * g], stride), &p).unwrap();
        train.push(ManifestEntry { bundle_path: p, label: Label::Normal, mask_path: None });
    }
    let (py, px) = (2, 5);
    let mut data = vec![0.5; c * g * g];
    let planted = [3.0f32, -1.0, 0.5, 2.0];
    for (ch, v) in planted.iter().enumerate() {
        data[ch * g * g + py * g + px] = *v;
    }
    let tp = dir.path().join("probe.lwnb");
    write_bundle(&one_layer("probe", Label::Anomalous, c, g, g, data, stride), &tp).unwrap();
    let (train_m, test_m) = (dir.path().join("train.manifest"), dir.path().join("test.manifest"));
    manifest(&train_m, Split::Train, train);
    manifest(
        &test_m,
        Split::Test,
        vec![ManifestEntry { bundle_path: tp, label: Label::Anomalous, mask_path: None }],
    );
    let bank = dir.path().join("bank");
    let cfg = ["--set", "pooling=off", "--set", "layers=0", "--window-size", "3"];
    let mut args = vec!["fit", "--train", s(&train_m), "--bank", s(&bank)];
    args.extend(cfg);
    ok(&args);
    let out = dir.path().join("scores");
    let mut args = vec!["score", "--test", s(&test_m), "--bank", s(&bank), "--out", s(&out)];
    args.extend(cfg);
    ok(&args);

    // brute force: constant bank, so only the planted cell differs
    let expected: f32 = planted.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f32>().sqrt();
    let patch = PatchScoreMap::read(out.join("patch/00000_probe.lwnm")).unwrap();
    for y in 0..g {
        for x in 0..g {
            let want = if (y, x) == (py, px) { expected } else { 0.0 };
            assert!((patch.get(y, x) - want).abs() < 1e-6);
        }
    }
    let pixel = PixelAnomalyMap::read(out.join("pixel/00000_probe.lwnm")).unwrap();
    assert_eq!((pixel.height(), pixel.width()), (g * stride, g * stride));
    let (arg, _) = pixel.data().iter().enumerate().fold((0, f32::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    let (ay, ax) = (arg / pixel.width(), arg % pixel.width());
    assert!((py * stride..(py + 1) * stride).contains(&ay) && (px * stride..(px + 1) * stride).contains(&ax), "{ay},{ax}");
}

fn write_index(dir: &Path, rows: &[(String, f32, Label, Option<PathBuf>)]) -> PathBuf {
    let mut text = String::from("# category: hand\nimage_id\tscore\tlabel\tpixel_map_path\tmask_path\n");
    for (id, score, label, mask) in rows {
        let mask = mask.as_ref().map(|m| m.display().to_string()).unwrap_or_default();
        text.push_str(&format!("{id}\t{score}\t{label}\tpixel/{id}.lwnm\t{mask}\n"));
    }
    let p = dir.join("scores.tsv");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn perfect_scores_evaluate_to_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("pixel")).unwrap();
    let mut rows = Vec::new();
    for i in 0..6 {
        let anomalous = i % 2 == 1;
        let mut mask = Mask::empty(16, 16);
        if anomalous {
            for y in i..i + 3 {
                for x in 2..6 {
                    mask.set(y, x, true);
                }
            }
        }
        let id = format!("img{i}");
        let map = PixelAnomalyMap::new(id.clone(), 16, 16, mask.data().iter().map(|&b| f32::from(u8::from(b))).collect()).unwrap();
        map.write(dir.path().join(format!("pixel/{id}.lwnm"))).unwrap();
        let mask_path = anomalous.then(|| {
            let p = dir.path().join(format!("{id}.png"));
            write_mask(&mask, &p).unwrap();
            p
        });
        let label = if anomalous { Label::Anomalous } else { Label::Normal };
        rows.push((id, f32::from(u8::from(anomalous)), label, mask_path));
    }
    let index = write_index(dir.path(), &rows);
    let out = ok(&["eval", "--scores", s(&index)]);
    assert!(out.contains("auroc_image\t1.000000") && out.contains("aupro\t1.000000"), "{out}");
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("auroc_image = 1\n") && report.contains("aupro = 1\n"), "{report}");
    ok(&["eval", "--scores", s(&index)]);
    assert_eq!(fs::read_to_string(dir.path().join("report.txt")).unwrap(), report);
    assert!(fs::read_to_string(dir.path().join("curves.csv")).unwrap().starts_with("curve,fpr,value\n"));

    // drop one anomalous mask while others remain: aupro is undefined
    rows[1].3 = None;
    write_index(dir.path(), &rows);
    assert_eq!(code(&["eval", "--scores", s(&index)]), 5);
}

#[test]
fn random_labels_give_chance_auroc() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let rows: Vec<_> = (0..200)
        .map(|i| {
            let label = if rng.gen_bool(0.5) { Label::Anomalous } else { Label::Normal };
            (format!("r{i}"), rng.gen_range(-1.0f32..1.0).abs(), label, None)
        })
        .collect();
    let index = write_index(dir.path(), &rows);
    let out = ok(&["eval", "--scores", s(&index)]);
    let auroc: f64 = out.lines().find_map(|l| l.strip_prefix("auroc_image\t")).unwrap().parse().unwrap();
    assert!((auroc - 0.5).abs() < 0.1, "{auroc}");
    assert!(out.contains("aupro\tNA"));
}

#[test]
fn single_class_data_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = (0..4).map(|i| (format!("n{i}"), i as f32, Label::Normal, None)).collect();
    let index = write_index(dir.path(), &rows);
    let out = lwinnn(&["eval", "--scores", s(&index)]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("metric"));
}

fn column(table: &str, name: &str) -> Vec<String> {
    let mut lines = table.lines();
    let idx = lines.next().unwrap().split('\t').position(|h| h == name).unwrap();
    lines.map(|l| l.split('\t').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn window_sweep_absorbs_planted_translations() {
    for seed in [1, 2, 3] {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            layers: 1,
            exact_shift: true,
            max_shift: 2,
            train: 4,
            test_normal: 10,
            test_anomalous: 10,
            defect_strength: 1.2,
            seed,
            ..SyntheticSpec::default()
        };
        let (train, test) = synthetic(dir.path(), spec);
        let table_path = dir.path().join("ablation.tsv");
        let printed = ok(&[
            "ablate",
            "--train",
            s(&train),
            "--test",
            s(&test),
            "--sweep",
            "delta=1,3,5,7,9;mode=local_window,per_location",
            "--set",
            "pooling=off",
            "--set",
            "layers=0",
            "--out",
            s(&table_path),
        ]);
        let table = fs::read_to_string(&table_path).unwrap();
        assert_eq!(printed, table);
        let auroc: Vec<f64> = column(&table, "auroc_image").iter().map(|v| v.parse().unwrap()).collect();
        let aupro: Vec<f64> = column(&table, "aupro").iter().map(|v| v.parse().unwrap()).collect();
        // rows: δ = 1, 3, 5, 7, 9, then per_location
        assert!(aupro[0] <= aupro[1] && aupro[1] <= aupro[2], "seed {seed}: {aupro:?}");
        assert!(auroc[0] <= auroc[2], "seed {seed}: {auroc:?}");
        assert_eq!(&auroc[2..5], &[1.0, 1.0, 1.0], "seed {seed}");
        assert!(aupro[2..5].iter().all(|v| (v - aupro[2]).abs() < 1e-3), "seed {seed}: {aupro:?}");
        assert_eq!((auroc[0], aupro[0]), (auroc[5], aupro[5]));
    }
}

#[test]
fn heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let constant = dir.path().join("c.lwnm");
    PixelAnomalyMap::new("c", 12, 20, vec![3.0; 240]).unwrap().write(&constant).unwrap();
    let png = dir.path().join("c.png");
    ok(&["heatmap", s(&constant), "--out", s(&png)]);
    let img = image::open(&png).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (20, 12));
    assert!(img.pixels().all(|p| p == img.get_pixel(0, 0)));

    let impulse = dir.path().join("i.lwnm");
    let mut data = vec![0.0; 240];
    data[5 * 20 + 7] = 1.0;
    PixelAnomalyMap::new("i", 12, 20, data).unwrap().write(&impulse).unwrap();
    ok(&["heatmap", s(&impulse), "--out", s(&png)]);
    let img = image::open(&png).unwrap().to_rgb8();
    let hot = *img.get_pixel(7, 5);
    assert_eq!(img.pixels().filter(|&&p| p == hot).count(), 1);

    let bg = dir.path().join("bg.png");
    image::RgbImage::new(20, 12).save(&bg).unwrap();
    ok(&["heatmap", s(&impulse), "--out", s(&png), "--image", s(&bg), "--alpha", "0.3"]);
    let wrong = dir.path().join("wrong.png");
    image::RgbImage::new(19, 12).save(&wrong).unwrap();
    assert_eq!(code(&["heatmap", s(&impulse), "--out", s(&png), "--image", s(&wrong)]), 1);
}

#[test]
fn config_file_and_thread_env() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synthetic(&dir.path().join("data"), SyntheticSpec::default());
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        format!(
            "# demo run\nwindow_size = 5\naggregation = knn_image\nknn_k = 3\ntrain_manifest = {}\ntest_manifest = {}\nbank = out/bank\noutput_dir = out/scores\n",
            train.display(),
            test.display()
        ),
    )
    .unwrap();
    ok(&["--config", s(&conf), "fit"]);
    let out = Command::new(env!("CARGO_BIN_EXE_lwinnn"))
        .args(["--config", s(&conf), "score"])
        .env("LWINN_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let index = fs::read_to_string(dir.path().join("out/scores/scores.tsv")).unwrap();
    assert!(index.contains("# aggregation: knn_image"));
    assert_eq!(code(&["--config", s(&conf), "--set", "window_size=4", "fit"]), 1);
    assert_eq!(code(&["--config", s(&conf), "--set", "knn_k=50", "score"]), 1);
}
