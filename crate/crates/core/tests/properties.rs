use std::collections::HashSet;

use fer_core::evaluation::{mean_std, stratified_kfold, ConfusionMatrix};
use fer_core::image::PixelImage;
use fer_core::manifest::compose;
use fer_core::preprocess::{denormalize_symmetric, normalize, NormalizationScheme};
use fer_core::{augment, DatasetManifest, EmotionLabel, ImageRecord, Source};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = EmotionLabel> {
    (0..7usize).prop_map(|i| EmotionLabel::from_index(i).unwrap())
}

fn manifest(prefix: &'static str, max: usize) -> impl Strategy<Value = DatasetManifest> {
    prop::collection::vec(label(), 0..max).prop_map(move |labels| {
        let records = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| ImageRecord::new(format!("{prefix}{i}"), format!("/{prefix}{i}.png"), Source::CkPlus, l))
            .collect();
        DatasetManifest::new(prefix, records).unwrap()
    })
}

fn ids(m: &DatasetManifest) -> Vec<String> {
    m.records().iter().map(|r| r.id.clone()).collect()
}

proptest! {
    #[test]
    fn compose_sums_counts(a in manifest("a", 40), b in manifest("b", 40), c in manifest("c", 40)) {
        let all = compose("all", &[&a, &b, &c]).unwrap();
        prop_assert_eq!(all.len(), a.len() + b.len() + c.len());
        for l in EmotionLabel::ALL {
            prop_assert_eq!(all.count(l), a.count(l) + b.count(l) + c.count(l));
        }
        let total: usize = all.counts_by_label().values().sum();
        prop_assert_eq!(total, all.len());
    }

    #[test]
    fn compose_is_associative(a in manifest("a", 30), b in manifest("b", 30), c in manifest("c", 30)) {
        let left = compose("x", &[&compose("ab", &[&a, &b]).unwrap(), &c]).unwrap();
        let right = compose("x", &[&a, &compose("bc", &[&b, &c]).unwrap()]).unwrap();
        prop_assert_eq!(ids(&left), ids(&right));
    }

    #[test]
    fn compose_rejects_overlap(a in manifest("a", 30)) {
        prop_assume!(!a.is_empty());
        prop_assert!(compose("dup", &[&a, &a]).is_err());
    }

    #[test]
    fn metrics_match_brute_force(pairs in prop::collection::vec((label(), label()), 1..200)) {
        let m = ConfusionMatrix::from_pairs(pairs.iter().copied());
        let correct = pairs.iter().filter(|(t, p)| t == p).count();
        prop_assert_eq!(m.accuracy(), correct as f64 / pairs.len() as f64);
        let pc = m.per_class();
        for c in EmotionLabel::ALL {
            let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count();
            let predicted = pairs.iter().filter(|&&(_, p)| p == c).count();
            let actual = pairs.iter().filter(|&&(t, _)| t == c).count();
            let expect_p = (predicted > 0).then(|| tp as f64 / predicted as f64);
            let expect_r = (actual > 0).then(|| tp as f64 / actual as f64);
            prop_assert_eq!(pc[&c].precision, expect_p);
            prop_assert_eq!(pc[&c].recall, expect_r);
            for p in EmotionLabel::ALL {
                let n = pairs.iter().filter(|&&(tt, pp)| tt == c && pp == p).count() as u64;
                prop_assert_eq!(m.get(c, p), n);
            }
        }
    }

    #[test]
    fn mean_std_matches_welford(values in prop::collection::vec(0.0f64..100.0, 2..30)) {
        let (mean, std) = mean_std(&values);
        let (mut n, mut m, mut s) = (0f64, 0f64, 0f64);
        for &v in &values {
            n += 1.0;
            let d = v - m;
            m += d / n;
            s += d * (v - m);
        }
        let wstd = (s / (n - 1.0)).sqrt();
        prop_assert!((mean - m).abs() <= 1e-12 * m.abs().max(1.0));
        prop_assert!((std - wstd).abs() <= 1e-12 * wstd.max(1e-300) || (std - wstd).abs() < 1e-12);
    }

    #[test]
    fn kfold_is_disjoint_covering_stratified(
        labels in prop::collection::vec(label(), 35..300),
        k in 2usize..7,
        seed in any::<u64>(),
    ) {
        let min_count = EmotionLabel::ALL.iter().map(|&l| labels.iter().filter(|&&x| x == l).count()).filter(|&c| c > 0).min().unwrap();
        prop_assume!(min_count >= k);
        let folds = stratified_kfold(&labels, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = HashSet::new();
        for f in &folds {
            for &i in f {
                prop_assert!(seen.insert(i));
            }
        }
        prop_assert_eq!(seen.len(), labels.len());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for l in EmotionLabel::ALL {
            let per: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == l).count()).collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        prop_assert_eq!(stratified_kfold(&labels, k, seed).unwrap(), folds);
    }

    #[test]
    fn normalizations_match_closed_forms(pixels in prop::collection::vec(0u8..=255, 3..60)) {
        let n = pixels.len() / 3 * 3;
        let data: Vec<f32> = pixels[..n].iter().map(|&v| v as f32).collect();
        let img = PixelImage::new(n / 3, 1, data.clone()).unwrap();
        let unit = normalize(&img, NormalizationScheme::UnitInterval);
        let sym = normalize(&img, NormalizationScheme::SymmetricUnit);
        let bgr = normalize(&img, NormalizationScheme::BgrMeanCentered);
        for (i, &v) in data.iter().enumerate() {
            prop_assert_eq!(unit.data[i], v / 255.0);
            prop_assert_eq!(sym.data[i], v / 127.5 - 1.0);
        }
        for (px, out) in data.chunks(3).zip(bgr.data.chunks(3)) {
            prop_assert_eq!(out[0], px[2] - 103.939);
            prop_assert_eq!(out[1], px[1] - 116.779);
            prop_assert_eq!(out[2], px[0] - 123.68);
        }
        let back = denormalize_symmetric(&sym.data, n / 3, 1).unwrap();
        for (a, b) in back.data().iter().zip(&data) {
            prop_assert!((a - b).abs() / 255.0 <= 1.0 / 255.0);
        }
    }

    #[test]
    fn flip_is_involution(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = fer_core::seed::rng_from_seed(seed);
        let img = PixelImage::from_fn(w, h, |_, _| [rng.random_range(0.0..255.0); 3]);
        prop_assert_eq!(augment::flip_horizontal(&augment::flip_horizontal(&img)), img);
    }

    #[test]
    fn drawn_factors_stay_in_bounds(seed in any::<u64>(), rho in 0.0f32..0.5, g in 0.0f32..0.9) {
        let p = augment::AugmentParams { rho, gamma: g, ..Default::default() };
        let f = augment::draw_factors(&p, seed);
        prop_assert!(f.rotation_angle.abs() <= 2.0 * std::f32::consts::PI * rho);
        prop_assert!((f.contrast - 1.0).abs() <= g + 1e-6);
        prop_assert!((f.zoom - 1.0).abs() <= 0.1 + 1e-6);
    }
}
