use kgrec::graph::Vocab;
use kgrec::image::{train_embedder, Activation, EmbedderConfig, ImageEmbedder, LabeledFeature};
use kgrec::kg::EntityEmbedding;
use kgrec::linalg::norm;
use kgrec::pca::pca_project;
use proptest::prelude::*;
use rand::Rng;

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// eigenvalues and eigenvectors (as columns of `v`).
fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

#[test]
fn pca_matches_jacobi_oracle() {
    let mut rng = kgrec::seeded_rng(11);
    let (n, d) = (50, 5);
    // Distinct spreads per axis keep the eigenvalues well separated.
    let data: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) * (j + 1) as f64).collect())
        .collect();
    let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| data.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect();
    let (values, vectors) = jacobi(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let total: f64 = values.iter().sum();

    let p = pca_project(&data, d).unwrap();
    for (c, &k) in order.iter().enumerate() {
        assert!((p.explained[c] - values[k] / total).abs() < 1e-10);
        let oracle: Vec<f64> = (0..d).map(|i| vectors[i][k]).collect();
        let dot: f64 = oracle.iter().zip(&p.axes[c]).map(|(a, b)| a * b).sum();
        let sign = dot.signum();
        for (row, coords) in data.iter().zip(&p.coordinates) {
            let expected: f64 = row.iter().zip(&mean).zip(&oracle).map(|((x, m), o)| (x - m) * o).sum();
            assert!((coords[c] - sign * expected).abs() < 1e-8, "component {c}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pca_coordinates_are_centred_and_ordered(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 3..20),
        k in 1usize..=4,
    ) {
        let p = pca_project(&rows, k).unwrap();
        prop_assert_eq!(p.coordinates.len(), rows.len());
        for c in 0..k {
            let mean: f64 = p.coordinates.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
            prop_assert!(mean.abs() < 1e-8);
            prop_assert!((norm(&p.axes[c]) - 1.0).abs() < 1e-9);
        }
        for w in p.explained.windows(2) {
            prop_assert!(w[0] + 1e-12 >= w[1]);
        }
        prop_assert!(p.explained.iter().sum::<f64>() <= 1.0 + 1e-9);
    }

    #[test]
    fn embedder_output_is_unit_norm(
        seed in any::<u64>(),
        x in prop::collection::vec(-100.0f64..100.0, 6),
        elu in any::<bool>(),
    ) {
        let act = if elu { Activation::Elu } else { Activation::Tanh };
        let e = ImageEmbedder::new(&[6, 5, 3], act, 0.2, &mut kgrec::seeded_rng(seed)).unwrap();
        let y = e.embed(&x).unwrap();
        prop_assert!((norm(&y) - 1.0).abs() < 1e-12);
        prop_assert_eq!(y, e.embed(&x).unwrap());
    }
}

#[test]
fn linear_embedder_recovers_identity_targets() {
    let d = 4;
    let labels: Vec<String> = (0..d).map(|i| format!("c{i}")).collect();
    let vocab = Vocab::from_labels(&labels).unwrap();
    let rows: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| f64::from(i == j)).collect()).collect();
    let targets = EntityEmbedding::from_rows(&rows, d).unwrap();
    let data: Vec<LabeledFeature> = labels
        .iter()
        .zip(&rows)
        .map(|(l, r)| LabeledFeature {
            image_id: l.clone(),
            label: l.clone(),
            feature: r.clone(),
        })
        .collect();
    let config = EmbedderConfig {
        hidden: vec![],
        dropout: 0.0,
        epochs: 400,
        batch_size: 4,
        learning_rate: 0.01,
        ..EmbedderConfig::default()
    };
    let (_, report) = train_embedder(&data, &vocab, &targets, &config).unwrap();
    assert!(report.last() < 1e-3 * report.initial(), "{} vs {}", report.last(), report.initial());
}
