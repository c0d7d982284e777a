use loster::concrete::{
    assignment_probs, gumbel_softmax_sample, kmeans_loss, kmeanspp_init, nearest_centroid, straight_through,
    AssignmentMatrix,
};
use loster::{DenseMatrix, Tape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| DenseMatrix::new(rows, cols, v).unwrap())
}

#[test]
fn gumbel_argmax_frequencies_match_probabilities() {
    let p = [0.6, 0.3, 0.1];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        let q = gumbel_softmax_sample(&p, 0.1, &mut rng).unwrap();
        let hard = straight_through(&q);
        counts[hard.iter().position(|&v| v == 1.0).unwrap()] += 1;
    }
    let tv: f64 = 0.5
        * counts
            .iter()
            .zip(&p)
            .map(|(&c, &pj)| (c as f64 / draws as f64 - pj).abs())
            .sum::<f64>();
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn kmeans_loss_equals_lloyd_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let (n, d, k) = (rng.random_range(1..30), rng.random_range(1..6), rng.random_range(1..5));
        let z = DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-5.0..5.0));
        let m = DenseMatrix::from_fn(k, d, |_, _| rng.random_range(-5.0..5.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let oracle: f64 = (0..n)
            .map(|i| (0..d).map(|c| (z.get(i, c) - m.get(labels[i], c)).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        let q = AssignmentMatrix::from_labels(&labels, k).unwrap();
        let mut t = Tape::new();
        let (zv, qv, mv) = (
            t.constant(z).unwrap(),
            t.constant(q.matrix().clone()).unwrap(),
            t.constant(m).unwrap(),
        );
        let l = kmeans_loss(&mut t, zv, qv, mv).unwrap();
        assert!((t.scalar(l) - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }
}

#[test]
fn kmeanspp_finds_separated_blobs() {
    let centers = [[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]];
    let mut hits = 0;
    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (b, c) in centers.iter().enumerate() {
            for _ in 0..30 {
                // uniform on [-√3, √3] has unit standard deviation
                let s = 3f64.sqrt();
                rows.push([c[0] + rng.random_range(-s..s), c[1] + rng.random_range(-s..s)]);
                truth.push(b);
            }
        }
        let pts = DenseMatrix::from_rows(&rows).unwrap();
        let m = kmeanspp_init(&pts, 3, 0, &mut rng).unwrap();
        let blob_of = nearest_centroid(&m, &DenseMatrix::from_rows(&centers).unwrap());
        let mut seen = blob_of.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() == 3 {
            hits += 1;
        }
    }
    assert!(hits >= 950, "{hits} of 1000 trials");
}

proptest! {
    #[test]
    fn assignment_rows_are_stochastic_and_follow_nearest_centroid(
        z in matrix(5, 3),
        m in matrix(3, 3),
        sigma in 0.2f64..4.0,
    ) {
        let mut t = Tape::new();
        let (zv, mv) = (t.constant(z.clone()).unwrap(), t.constant(m.clone()).unwrap());
        let p = assignment_probs(&mut t, zv, mv, sigma).unwrap();
        let p = t.value(p).clone();
        for row in p.row_iter() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let nearest = nearest_centroid(&z, &m);
        for (i, &j) in nearest.iter().enumerate() {
            let row = p.row(i);
            let best = row.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert!(row[j] >= best * (1.0 - 1e-12));
        }
    }

    #[test]
    fn gumbel_rows_sum_to_one(
        raw in proptest::collection::vec(0.01f64..1.0, 1..8),
        tau in 0.01f64..10.0,
        seed in any::<u64>(),
    ) {
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = gumbel_softmax_sample(&p, tau, &mut rng).unwrap();
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(q.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
