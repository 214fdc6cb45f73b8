use gsgm::data::{
    encode_idx_images, encode_idx_labels, generate_synthetic, load_idx, partition_partial, sample_batch, Dataset,
};
use gsgm::model::{self, ModelSpec};
use gsgm::scheduler::LearnerId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn iid_split_label_counts_pass_chi_square() {
    let d = generate_synthetic(10, 1000, 4, 3.0, 3).unwrap();
    let shards = partition_partial(&d, 10, 0.0, 11).unwrap();
    // contingency table learner x label
    let table: Vec<Vec<usize>> = shards.iter().map(|s| d.label_histogram(s.indices.iter().copied())).collect();
    let n = d.len() as f64;
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let cols: Vec<f64> = (0..10).map(|c| table.iter().map(|r| r[c]).sum::<usize>() as f64).collect();
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let e = rows[i] * cols[j] / n;
            stat += (obs as f64 - e).powi(2) / e;
        }
    }
    let p = 1.0 - ChiSquared::new(81.0).unwrap().cdf(stat);
    assert!(p > 0.001, "chi-square {stat:.1}, p = {p:.2e}");
}

#[test]
fn well_separated_blobs_are_linearly_separable() {
    let d = generate_synthetic(5, 200, 10, 10.0, 4).unwrap();
    let spec = ModelSpec::softmax(10, 5);
    let mut w = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0));
    let shard = gsgm::data::Shard { owner: LearnerId::new(1), indices: (0..d.len()).collect() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let batch = sample_batch(&shard, &d, 50, &mut rng).unwrap();
        let g = model::gradient(&spec, &w, &batch).unwrap();
        w.axpy_assign(-0.1, &g).unwrap();
    }
    let acc = model::accuracy(&spec, &w, &d).unwrap();
    assert!(acc >= 0.99, "probe accuracy {acc}");
}

#[test]
fn idx_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<Vec<u8>> = (0..6u8).map(|i| (0..12u8).map(|p| p.wrapping_mul(17).wrapping_add(i * 40)).collect()).collect();
    let labels: Vec<u8> = vec![0, 1, 2, 0, 1, 2];
    fs_write(dir.path().join("x"), encode_idx_images(3, 4, &images));
    fs_write(dir.path().join("y"), encode_idx_labels(&labels));
    let d: Dataset = load_idx(dir.path().join("x"), dir.path().join("y")).unwrap();
    assert_eq!((d.len(), d.input_dim(), d.num_classes()), (6, 12, 3));
    for (i, img) in images.iter().enumerate() {
        let back: Vec<u8> = d.features(i).iter().map(|&f| (f * 255.0).round() as u8).collect();
        assert_eq!(&back, img);
    }
    assert_eq!(d.labels(), &[0, 1, 2, 0, 1, 2]);
}

fn fs_write(path: std::path::PathBuf, bytes: Vec<u8>) {
    std::fs::write(path, bytes).unwrap();
}
