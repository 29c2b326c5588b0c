use ndarray::Array3;
use pdeq::data_io::{read_amat, read_idx, synth_rotated_shapes, write_idx};
use pdeq::tensor_ops::{evaluate, train};
use pdeq::{Error, GroupSpec, LabeledDataset, Model, ModelConfig};

fn fixture() -> LabeledDataset {
    let images = Array3::from_shape_fn((5, 4, 3), |(i, r, c)| ((i * 12 + r * 3 + c) % 256) as f64 / 255.0);
    LabeledDataset::new(images, vec![0, 3, 1, 9, 2], 10, "fixture").unwrap()
}

#[test]
fn idx_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    let ds = fixture();
    write_idx(&ds, &img, &lab).unwrap();
    assert_eq!(std::fs::read(&img).unwrap()[..4], [0, 0, 8, 3]);
    assert_eq!(std::fs::read(&lab).unwrap()[..4], [0, 0, 8, 1]);
    let back = read_idx(&img, &lab).unwrap();
    assert_eq!(back.images, ds.images);
    assert_eq!(back.labels, ds.labels);
    assert_eq!(back.classes, 10);
}

#[test]
fn idx_count_mismatch_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    let ds = fixture();
    write_idx(&ds, &img, &lab).unwrap();
    let short = ds.subset(&[0, 1], "short");
    let lab2 = dir.path().join("lab2");
    write_idx(&short, &dir.path().join("img2"), &lab2).unwrap();
    assert!(read_idx(&img, &lab2).is_err());
    assert!(matches!(read_idx(&dir.path().join("nope"), &lab), Err(Error::Io(_))));
}

#[test]
fn amat_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rot.amat");
    let mut text = String::new();
    for label in [4, 7] {
        let row: Vec<String> = (0..784).map(|p| format!("{}", (p % 5) as f64 / 4.0)).collect();
        text.push_str(&format!("{} {label}\n", row.join(" ")));
    }
    std::fs::write(&path, text).unwrap();
    let ds = read_amat(&path).unwrap();
    assert_eq!(ds.images.dim(), (2, 28, 28));
    assert_eq!(ds.labels, vec![4, 7]);
    assert_eq!(ds.images[[1, 0, 3]], 0.75);
}

#[test]
fn checkpoint_file_preserves_predictions() {
    let data = synth_rotated_shapes(40, 3, 2).unwrap();
    let mut cfg = ModelConfig::desk_pdo(GroupSpec::new(4, false), 3, 5);
    cfg.widths = vec![3, 4];
    cfg.epochs = 1;
    let trained = train(&cfg, &data, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    trained.model.save(&path).unwrap();
    let loaded = Model::load(&path).unwrap();
    assert_eq!(loaded.predict(&data.images).unwrap(), trained.model.predict(&data.images).unwrap());
    assert_eq!(evaluate(&loaded, &data).unwrap(), evaluate(&trained.model, &data).unwrap());
}
