use std::path::PathBuf;

use ensdiv::datasets::{kfold_split, load_csv, train_test_indices, Dataset, LabelColumn};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn load(name: &str) -> Dataset {
    load_csv(&data(name), &LabelColumn::Name("class".into()), true).unwrap()
}

#[test]
fn iris_shape() {
    let ds = load("iris.csv");
    assert_eq!((ds.n_samples(), ds.n_classes, ds.n_features()), (150, 3, 4));
    assert_eq!(ds.class_counts(), vec![50, 50, 50]);
}

#[test]
fn segment_shape() {
    let ds = load("segment.csv");
    assert_eq!(
        (ds.n_samples(), ds.n_classes, ds.n_features()),
        (2310, 7, 19)
    );
    assert!(ds.class_counts().iter().all(|&c| c == 330));
}

#[test]
fn breast_w_drops_missing_rows() {
    let ds = load("breast-w.csv");
    assert_eq!((ds.n_samples(), ds.n_classes, ds.n_features()), (683, 2, 9));
    let mut counts = ds.class_counts();
    counts.sort_unstable();
    assert_eq!(counts, vec![239, 444]);
}

#[test]
fn loading_is_deterministic() {
    assert_eq!(load("breast-w.csv"), load("breast-w.csv"));
}

#[test]
fn ten_fold_rotation_uses_nine_folds_for_training() {
    let n = load("iris.csv").n_samples();
    let folds = kfold_split(n, 10, 0, None).unwrap();
    let mut tested = vec![0usize; n];
    for i in 0..10 {
        let (train, test) = train_test_indices(&folds, i);
        assert_eq!(train.len() + test.len(), n);
        assert_eq!(test.len(), 15);
        for t in test {
            tested[t] += 1;
        }
    }
    assert!(tested.iter().all(|&c| c == 1));
}
