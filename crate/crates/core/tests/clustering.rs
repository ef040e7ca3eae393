use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use terrace_core::clustering::{
    cluster, distance, estimate_bandwidth, gmm_fit, kmeans_fit, mean_shift_fit, stack_channels, ClusterMethod,
    ClusterParams, FeatureMatrix, GmmParams, KMeansInit, KMeansParams, MeanShiftParams,
};
use terrace_core::image::{MultiChannelImage, Raster};

fn blobs(centers: &[Vec<f64>], per: usize, sigma: f64, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    let d = centers[0].len();
    let mut values = Vec::new();
    for c in centers {
        for _ in 0..per {
            values.extend(c.iter().map(|m| m + normal.sample(&mut rng)));
        }
    }
    FeatureMatrix::new(centers.len() * per, d, values).unwrap()
}

fn ms_params(bandwidth: f64) -> MeanShiftParams {
    MeanShiftParams {
        bandwidth,
        merge_radius: bandwidth,
        max_iter: 500,
        tol: 1e-6,
        max_seeds: usize::MAX,
        max_reference: usize::MAX,
    }
}

#[test]
fn stack_full_size_frame() {
    let channels = (0..6)
        .map(|i| (400 + i * 50, Raster::filled(480, 444, i).unwrap()))
        .collect();
    let fm = stack_channels(&MultiChannelImage::new(channels).unwrap()).unwrap();
    assert_eq!((fm.n_samples(), fm.n_dims()), (213_120, 6));
    assert_eq!(fm.row(1000), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn gmm_recovers_two_blobs() {
    let sigma = 2.0;
    let off = 20.0 * sigma / 6f64.sqrt();
    let gens = vec![vec![10.0; 6], vec![10.0 + off; 6]];
    let fm = blobs(&gens, 500, sigma, 1);
    for seed in 0..5 {
        let p = GmmParams {
            k: 2,
            max_iter: 200,
            tol: 1e-9,
            cov_reg: None,
        };
        let (model, labels) = gmm_fit(&fm, &p, seed).unwrap();
        for g in &gens {
            let j = (0..2)
                .min_by(|&a, &b| distance(&model.means[a], g).unwrap().total_cmp(&distance(&model.means[b], g).unwrap()))
                .unwrap();
            assert!(distance(&model.means[j], g).unwrap() <= 0.5 * sigma);
            assert!((model.weights[j] - 0.5).abs() <= 0.05);
        }
        // every sample of a blob shares a label
        assert!(labels[..500].iter().all(|&l| l == labels[0]));
        assert!(labels[500..].iter().all(|&l| l == labels[500]));
        assert_ne!(labels[0], labels[500]);
    }
}

#[test]
fn gmm_covariances_are_symmetric_and_regularized() {
    let fm = blobs(&[vec![0.0, 0.0, 0.0], vec![30.0, 0.0, 5.0]], 200, 1.5, 2);
    let p = GmmParams {
        k: 2,
        max_iter: 100,
        tol: 1e-8,
        cov_reg: Some(0.25),
    };
    let (model, _) = gmm_fit(&fm, &p, 0).unwrap();
    assert_eq!(model.cov_reg, 0.25);
    for cov in &model.covariances {
        for i in 0..3 {
            assert!(cov[i * 3 + i] >= 0.25);
            for j in 0..3 {
                assert_eq!(cov[i * 3 + j], cov[j * 3 + i]);
            }
        }
    }
    let (resp, _) = model.responsibilities(&fm).unwrap();
    for r in resp.chunks_exact(2) {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn kmeans_recovers_blob_centers() {
    let gens = vec![vec![0.0, 0.0], vec![50.0, 0.0], vec![0.0, 50.0]];
    let fm = blobs(&gens, 300, 1.0, 3);
    for init in [KMeansInit::Random, KMeansInit::DSquared] {
        let p = KMeansParams {
            k: 3,
            init,
            max_iter: 300,
            tol: 1e-9,
        };
        let (model, labels) = kmeans_fit(&fm, &p, 7).unwrap();
        // converged: every sample sits with its nearest centroid
        for (i, &l) in labels.iter().enumerate() {
            let d = distance(fm.row(i), &model.centroids[l]).unwrap();
            assert!(model.centroids.iter().all(|c| d <= distance(fm.row(i), c).unwrap() + 1e-12));
        }
        // a single random start may settle in a local optimum
        if init == KMeansInit::DSquared {
            for (b, g) in gens.iter().enumerate() {
                let l = labels[b * 300];
                assert!(labels[b * 300..(b + 1) * 300].iter().all(|&x| x == l));
                assert!(distance(&model.centroids[l], g).unwrap() < 0.3);
            }
        }
        // inertia equals the recomputed sum of squared distances
        let recomputed: f64 = (0..fm.n_samples())
            .map(|i| distance(fm.row(i), &model.centroids[labels[i]]).unwrap().powi(2))
            .sum();
        assert!((recomputed - model.inertia).abs() <= 1e-9 * recomputed);
    }
}

#[test]
fn dsquared_with_k_equal_n_selects_every_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.gen_range(-9.0..9.0)).collect()).collect();
    let fm = FeatureMatrix::from_rows(&rows).unwrap();
    let p = KMeansParams {
        k: 12,
        init: KMeansInit::DSquared,
        max_iter: 10,
        tol: 0.0,
    };
    let (model, _) = kmeans_fit(&fm, &p, 1).unwrap();
    assert_eq!(model.inertia, 0.0);
    let mut got = model.centroids.clone();
    let mut want = rows.clone();
    got.sort_by(|a, b| a.partial_cmp(b).unwrap());
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(got, want);
}

#[test]
fn mean_shift_single_blob_mode_near_mean() {
    let sigma = 1.0;
    let fm = blobs(&[vec![5.0, -3.0]], 400, sigma, 4);
    let model = mean_shift_fit(&fm, &ms_params(2.0 * sigma)).unwrap();
    assert_eq!(model.modes.len(), 1);
    let mean = fm.mean();
    assert!(distance(&model.modes[0], &mean).unwrap() <= 0.2 * sigma);
    assert!(model.labels.iter().all(|&l| l == 0));
}

#[test]
fn mean_shift_two_far_blobs() {
    let sigma = 1.0;
    let gens = vec![vec![0.0, 0.0, 0.0], vec![20.0 / 3f64.sqrt(); 3]];
    let fm = blobs(&gens, 150, sigma, 5);
    let model = mean_shift_fit(&fm, &ms_params(sigma)).unwrap();
    assert_eq!(model.modes.len(), 2);
    for g in &gens {
        assert!(model.modes.iter().any(|m| distance(m, g).unwrap() < 0.5));
    }
    assert!(model.labels[..150].iter().all(|&l| l == model.labels[0]));
    assert!(model.labels[150..].iter().all(|&l| l == model.labels[150]));
}

#[test]
fn mean_shift_subsampled_labels_every_sample() {
    let gens = vec![vec![0.0, 0.0], vec![40.0, 40.0]];
    let fm = blobs(&gens, 500, 1.0, 6);
    let p = MeanShiftParams {
        max_seeds: 50,
        max_reference: 200,
        ..ms_params(1.5)
    };
    let model = mean_shift_fit(&fm, &p).unwrap();
    assert_eq!(model.labels.len(), 1000);
    assert_eq!(model.modes.len(), 2);
    assert_ne!(model.labels[0], model.labels[999]);
}

#[test]
fn bandwidth_estimate_is_seeded() {
    let fm = blobs(&[vec![0.0; 4]], 3000, 1.0, 7);
    let a = estimate_bandwidth(&fm, 0.15, 2000, 1);
    assert_eq!(a, estimate_bandwidth(&fm, 0.15, 2000, 1));
    assert!(a > 0.0 && a < 4.0);
}

#[test]
fn labels_independent_of_thread_count() {
    let gens = vec![vec![0.0, 0.0, 0.0], vec![8.0, 1.0, 0.0], vec![3.0, 9.0, 2.0]];
    let fm = blobs(&gens, 400, 2.0, 8);
    let run = |threads: usize, method: ClusterMethod| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| cluster(&fm, method, 3, 42, &ClusterParams::default()).unwrap().labels)
    };
    for method in [ClusterMethod::Kmeans, ClusterMethod::Kmeanspp, ClusterMethod::Gmm, ClusterMethod::Meanshift] {
        assert_eq!(run(1, method), run(4, method), "{}", method.name());
    }
}

#[test]
fn cluster_rejects_k_above_samples() {
    let fm = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
    for method in [ClusterMethod::Kmeans, ClusterMethod::Gmm] {
        assert!(cluster(&fm, method, 3, 0, &ClusterParams::default()).is_err());
    }
}

#[test]
fn method_names_parse() {
    for m in [ClusterMethod::Kmeans, ClusterMethod::Kmeanspp, ClusterMethod::Meanshift, ClusterMethod::Gmm] {
        assert_eq!(m.name().parse::<ClusterMethod>().unwrap(), m);
    }
    assert!("dbscan".parse::<ClusterMethod>().is_err());
}
