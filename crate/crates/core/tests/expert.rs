use anomaly_seek::embedding::EmbeddingMatrix;
use anomaly_seek::expert::{
    assemble_prior, bilinear_upsample, image_score, localization_map, patch_values, prompt_similarity_matrix,
    Aggregator, PatchGrid,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(rng: &mut ChaCha8Rng, h: usize, w: usize, dim: usize) -> PatchGrid {
    let data = (0..h * w * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    PatchGrid::new(h, w, &EmbeddingMatrix::new(dim, data).unwrap()).unwrap()
}

fn vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn cos(a: &[f32], b: &[f32]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    d / (na * nb)
}

/// Half-pixel bilinear sample of `src` at output pixel `(y, x)`.
fn bilinear_oracle(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize, y: usize, x: usize) -> f64 {
    let sy = ((y as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let sx = ((x as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    let at = |r: usize, c: usize| src[r * w + c];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

#[test]
fn upsampling_matches_per_pixel_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let src: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
    let up = bilinear_upsample(&src, 4, 4, 16, 16);
    for y in 0..16 {
        for x in 0..16 {
            let want = bilinear_oracle(&src, 4, 4, 16, 16, y, x);
            assert!((up[y * 16 + x] - want).abs() < 1e-6, "pixel {y},{x}");
        }
    }
    assert_eq!(bilinear_upsample(&src, 4, 4, 4, 4), src);
}

#[test]
fn patch_values_match_shifted_cosine_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let g = grid(&mut rng, 3, 5, 12);
    let (pos, neg) = (vector(&mut rng, 12), vector(&mut rng, 12));
    let (vals, degenerate) = patch_values(&g, &pos, &neg).unwrap();
    assert_eq!(degenerate, 0);
    for (i, v) in vals.iter().enumerate() {
        let row = g.embeddings().row(i);
        let (cp, cn) = ((1.0 + cos(row, &pos)) / 2.0, (1.0 + cos(row, &neg)) / 2.0);
        assert!((v - cn / (cp + cn)).abs() < 1e-9);
    }
}

#[test]
fn symmetric_prompts_score_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let g = grid(&mut rng, 4, 4, 8);
    let p = vector(&mut rng, 8);
    let map = localization_map(&g, &p, &p, 8, 8, Aggregator::Max).unwrap();
    assert!(map.values.iter().all(|v| (v - 0.5).abs() < 1e-12));
    assert!((map.image_score - 0.5).abs() < 1e-12);
}

#[test]
fn value_rises_with_negative_similarity() {
    let pos = [1.0f32, 0.0, 0.0];
    let neg = [0.0f32, 1.0, 0.0];
    let a = 0.3f32;
    let mut last = f64::NEG_INFINITY;
    for step in 0..=20 {
        let b = -0.9 + 1.8 * step as f32 / 20.0;
        let c = (1.0 - a * a - b * b).max(0.0).sqrt();
        let g = PatchGrid::new(1, 1, &EmbeddingMatrix::from_rows(3, &[[a, b, c]]).unwrap()).unwrap();
        let (v, _) = patch_values(&g, &pos, &neg).unwrap();
        assert!(v[0] >= last);
        last = v[0];
    }
}

#[test]
fn similarity_matrix_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let g = grid(&mut rng, 2, 3, 6);
    let prompts = EmbeddingMatrix::from_rows(6, &[vector(&mut rng, 6), vector(&mut rng, 6), vector(&mut rng, 6)]).unwrap();
    let m = prompt_similarity_matrix(&g, &prompts).unwrap();
    assert_eq!(m.shape(), (6, 3));
    for i in 0..6 {
        for j in 0..3 {
            assert!((m[(i, j)] - cos(g.embeddings().row(i), prompts.row(j))).abs() < 1e-9);
        }
    }
}

#[test]
fn prior_splits_back_into_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let g = grid(&mut rng, 2, 2, 4);
    let (pos, neg) = (vector(&mut rng, 4), vector(&mut rng, 4));
    let map = localization_map(&g, &pos, &neg, 4, 6, Aggregator::default()).unwrap();
    let vis = [0.25, -3.0, 7.5];
    let prior = assemble_prior(&map, &vis).unwrap();
    assert_eq!((prior.loc_len(), prior.vis_len()), (24, 3));
    let (loc, v) = prior.split();
    assert_eq!(loc, map.values.as_slice());
    assert_eq!(v, vis);
    assert!(assemble_prior(&map, &[f64::NAN]).is_err());
}

#[test]
fn output_smaller_than_grid_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let g = grid(&mut rng, 4, 4, 3);
    let (p, n) = (vector(&mut rng, 3), vector(&mut rng, 3));
    assert!(localization_map(&g, &p, &n, 2, 8, Aggregator::Max).is_err());
    assert!(patch_values(&g, &p[..2], &n).is_err());
    assert!(patch_values(&g, &[0.0; 3], &n).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn maps_are_bounded_and_symmetric(seed in any::<u64>(), h in 1usize..6, w in 1usize..6, sy in 1usize..4, sx in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = grid(&mut rng, h, w, 5);
        let (pos, neg) = (vector(&mut rng, 5), vector(&mut rng, 5));
        let map = localization_map(&g, &pos, &neg, h * sy + sy / 2, w * sx, Aggregator::Max).unwrap();
        let lo = map.patch_values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = map.patch_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in &map.values {
            prop_assert!((0.0..=1.0).contains(v));
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
        let (swapped, _) = patch_values(&g, &neg, &pos).unwrap();
        for (a, b) in map.patch_values.iter().zip(&swapped) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn top_q_matches_sort_oracle(values in proptest::collection::vec(0.0f64..1.0, 1..200), q in 0.001f64..=1.0) {
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let n = ((q * values.len() as f64).ceil() as usize).max(1);
        let want = sorted[..n].iter().sum::<f64>() / n as f64;
        prop_assert!((image_score(&values, Aggregator::top_q(q).unwrap()) - want).abs() < 1e-12);
        prop_assert_eq!(image_score(&values, Aggregator::Max), sorted[0]);
    }
}
