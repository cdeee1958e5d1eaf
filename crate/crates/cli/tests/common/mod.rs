#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prcnn::data::{encode_idx_images, encode_idx_labels, write_bytes};
use prcnn::{Dims4, Rng, Tensor4};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prcnn"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn prcnn")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// 28x28 blob digits: class k is a bright spot at one of ten positions.
fn blobs(n: usize, seed: u64) -> (Tensor4<f32>, Vec<u8>) {
    let mut rng = Rng::new(seed);
    let mut data = vec![0f32; n * 784];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = rng.below(10);
        labels.push(k as u8);
        let (cy, cx) = (8.0 + 12.0 * (k / 5) as f64, 4.0 + 5.0 * (k % 5) as f64);
        for r in 0..28 {
            for c in 0..28 {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                data[i * 784 + r * 28 + c] = (-(d2 / 8.0)).exp() as f32;
            }
        }
    }
    (Tensor4::from_vec(Dims4::new(n, 1, 28, 28), data).unwrap(), labels)
}

/// Writes a small MNIST-format directory and returns its path.
pub fn fake_mnist(root: &Path, train: usize, test: usize) -> PathBuf {
    let dir = root.join("mnist");
    std::fs::create_dir_all(&dir).unwrap();
    for (split, n, seed) in [("train", train, 1), ("t10k", test, 2)] {
        let (images, labels) = blobs(n, seed);
        write_bytes(&dir.join(format!("{split}-images-idx3-ubyte")), &encode_idx_images(&images)).unwrap();
        write_bytes(&dir.join(format!("{split}-labels-idx1-ubyte")), &encode_idx_labels(&labels)).unwrap();
    }
    dir
}

/// Runs prepare-data on a fresh fake MNIST directory.
pub fn prepared(root: &Path, transform: &str) -> PathBuf {
    let mnist = fake_mnist(root, 120, 40);
    let out = root.join(format!("data-{transform}"));
    let o = run(&["prepare-data", "--mnist-dir", p(&mnist), "--transform", transform, "--seed", "3", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}
