use gsgm::data::{generate_synthetic, partition_noniid, sample_batch};
use gsgm::model::{self, ModelSpec};
use gsgm::scheduler::{full_gradient_snapshot, Averaging, SvrgLearner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn variance(samples: &[Vec<f64>]) -> f64 {
    let n = samples.len() as f64;
    let d = samples[0].len();
    let mean: Vec<f64> = (0..d).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n).collect();
    samples.iter().map(|s| s.iter().zip(&mean).map(|(a, m)| (a - m).powi(2)).sum::<f64>()).sum::<f64>() / n
}

#[test]
fn corrected_gradient_has_lower_variance_near_the_anchor() {
    let d = generate_synthetic(4, 100, 6, 2.0, 5).unwrap();
    let shards = partition_noniid(&d, 2, 0).unwrap();
    let spec = ModelSpec::mlp1(6, 8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let anchor = spec.init_params(&mut rng);
    let snap = full_gradient_snapshot(&spec, &d, &shards, &anchor, Averaging::Weighted).unwrap();
    let mut w = anchor.clone();
    for x in w.as_mut_slice() {
        *x += 1e-3;
    }
    let learner = SvrgLearner { spec: &spec, dataset: &d, batch_size: 10 };
    let shard = &shards[0];
    let (mut plain, mut corrected) = (Vec::new(), Vec::new());
    for _ in 0..1000 {
        let batch = sample_batch(shard, &d, 10, &mut rng).unwrap();
        plain.push(model::gradient(&spec, &w, &batch).unwrap().into_vec());
        corrected.push(learner.gradient(shard, &w, &snap, &mut rng).unwrap().into_vec());
    }
    let (vp, vc) = (variance(&plain), variance(&corrected));
    assert!(vc < 0.01 * vp, "plain {vp:.3e}, corrected {vc:.3e}");
}
