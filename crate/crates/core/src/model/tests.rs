use super::*;
use crate::permute::{canonical_scan, random_permutation, ScanKind};
use crate::rng::seeded;

fn lively(cfg: &ModelConfig, seed: u64) -> ModelParams<f32> {
    ModelParams::init(cfg, &mut seeded(seed), InitScheme { std: 0.5, zero_head: false }).unwrap()
}

fn tokens(len: usize, vocab: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut rng = seeded(seed);
    (0..len).map(|_| rng.gen_range(0..vocab)).collect()
}

#[test]
fn logits_shape_is_one_row_per_input_plus_class() {
    let cfg = ModelConfig::micro(5, 8, 2);
    let p = lively(&cfg, 1);
    let (logits, labels) = forward_sequence(&p, &tokens(8, 5, 2), &Permutation::identity(8), Some(1)).unwrap();
    assert_eq!(logits.shape, vec![9, 5]);
    assert_eq!(labels.len(), 8);
}

#[test]
fn perturbing_a_later_row_leaves_earlier_logits_untouched() {
    let cfg = ModelConfig::micro(5, 8, 2);
    let p = lively(&cfg, 3);
    let x = tokens(8, 5, 4);
    let order = random_permutation(&mut seeded(5), 8);
    let embedded = embed_with_targets(&p, &x, &order).unwrap();
    let base = forward(&p, &embedded, Some(0)).unwrap();
    for u in 0..8 {
        let mut poked = embedded.clone();
        for v in poked.row_mut(u) {
            *v += 0.75;
        }
        let out = forward(&p, &poked, Some(0)).unwrap();
        // Embedded row u is input row u + 1, so logits rows 0..=u are fixed.
        for t in 0..=u {
            assert_eq!(out.row(t), base.row(t), "row {t} moved when row {u} changed");
        }
        assert_ne!(out.row(u + 1), base.row(u + 1));
    }
}

#[test]
fn cached_steps_reproduce_full_forward_bit_for_bit() {
    for qk_norm in [true, false] {
        let cfg = ModelConfig { qk_norm, ..ModelConfig::small(4, 9, 3) };
        let p = lively(&cfg, 6);
        let x = tokens(9, 4, 7);
        let order = canonical_scan(ScanKind::SpiralIn, 3, 3).unwrap();
        let embedded = embed_with_targets(&p, &x, &order).unwrap();
        let full = forward(&p, &embedded, Some(2)).unwrap();
        let mut cache = KvCache::new(&p);
        for t in 0..=9 {
            let prefix = Tensor::from_vec(&[t, cfg.width], embedded.data[..t * cfg.width].to_vec()).unwrap();
            let step = forward_cached(&p, &prefix, Some(2), &mut cache).unwrap();
            assert_eq!(step, full.row(t), "step {t}");
        }
        assert_eq!(cache.len(), 10);
        assert!(forward_step(&p, &mut cache, full.row(0)).is_err());
    }
}

#[test]
fn cache_rejects_inconsistent_prefixes() {
    let cfg = ModelConfig::micro(3, 4, 2);
    let p = lively(&cfg, 1);
    let embedded = embed_with_targets(&p, &[0, 1, 2, 0], &Permutation::identity(4)).unwrap();
    let two = Tensor::from_vec(&[2, 8], embedded.data[..16].to_vec()).unwrap();
    let mut cache = KvCache::new(&p);
    assert!(matches!(
        forward_cached(&p, &two, None, &mut cache),
        Err(Error::CacheMismatch { cached: 0, expected: 2 })
    ));
    let empty = Tensor::from_vec(&[0, 8], vec![]).unwrap();
    forward_cached(&p, &empty, Some(0), &mut cache).unwrap();
    let one = Tensor::from_vec(&[1, 8], embedded.data[..8].to_vec()).unwrap();
    assert!(forward_cached(&p, &one, Some(1), &mut cache).is_err());
}

#[test]
fn null_label_is_the_last_class_row() {
    let cfg = ModelConfig::micro(5, 8, 3);
    let p = lively(&cfg, 8);
    let x = tokens(8, 5, 9);
    let embedded = embed_with_targets(&p, &x, &Permutation::identity(8)).unwrap();
    assert_eq!(forward(&p, &embedded, None).unwrap(), forward(&p, &embedded, Some(3)).unwrap());
    assert_ne!(forward(&p, &embedded, None).unwrap(), forward(&p, &embedded, Some(0)).unwrap());
    assert!(forward(&p, &embedded, Some(4)).is_err());
}

#[test]
fn depth_zero_is_an_affine_readout() {
    let cfg = ModelConfig { depth: 0, ..ModelConfig::micro(5, 6, 2) };
    let p: ModelParams<f64> = ModelParams::init(&cfg, &mut seeded(2), InitScheme { std: 0.5, zero_head: false }).unwrap();
    let x = tokens(6, 5, 3);
    let order = random_permutation(&mut seeded(4), 6);
    let embedded = embed_with_targets(&p, &x, &order).unwrap();
    let logits = forward(&p, &embedded, Some(1)).unwrap();
    let input: Vec<&[f64]> = std::iter::once(p.cls_emb.row(1)).chain((0..6).map(|t| embedded.row(t))).collect();
    for (t, row) in input.iter().enumerate() {
        for v in 0..5 {
            let mut z = p.head_b.data[v];
            for (i, &e) in row.iter().enumerate() {
                z += e * p.head_w.data[i * 5 + v];
            }
            assert!((logits.row(t)[v] - z).abs() < 1e-12);
        }
    }
}

#[test]
fn identity_order_embedding_matches_the_shifted_sum() {
    let cfg = ModelConfig::micro(4, 3, 1);
    let p = lively(&cfg, 10);
    let x = [2, 0, 3];
    let e = embed_with_targets(&p, &x, &Permutation::identity(3)).unwrap();
    for t in 0..3 {
        for i in 0..8 {
            let ta = if t < 2 { p.ta_pos_emb.as_ref().unwrap().row(t + 1)[i] } else { 0.0 };
            let want = p.tok_emb.row(x[t])[i] + (p.pos_emb.row(t)[i] + ta);
            assert_eq!(e.row(t)[i], want);
        }
    }
    assert!(embed_with_targets(&p, &x[..2], &Permutation::identity(3)).is_err());
}

#[test]
fn zero_target_table_gives_plain_permuted_embeddings() {
    let cfg = ModelConfig::micro(4, 6, 1);
    let mut p = lively(&cfg, 11);
    p.ta_pos_emb.as_mut().unwrap().data.fill(0.0);
    let x = tokens(6, 4, 12);
    let order = random_permutation(&mut seeded(13), 6);
    let e = embed_with_targets(&p, &x, &order).unwrap();
    for (t, &pos) in order.order().iter().enumerate() {
        let want: Vec<f32> = (0..8).map(|i| p.tok_emb.row(x[pos])[i] + p.pos_emb.row(pos)[i]).collect();
        assert_eq!(e.row(t), &want[..]);
    }
}

#[test]
fn target_table_separates_orders_that_share_a_prefix() {
    let cfg = ModelConfig::micro(3, 6, 1);
    let p = lively(&cfg, 14);
    let x = tokens(6, 3, 15);
    let a = Permutation::new(vec![4, 1, 0, 5, 2, 3]).unwrap();
    let b = Permutation::new(vec![4, 1, 0, 5, 3, 2]).unwrap();
    let ea = embed_with_targets(&p, &x, &a).unwrap();
    let eb = embed_with_targets(&p, &x, &b).unwrap();
    assert_eq!(ea.data[..3 * 8], eb.data[..3 * 8]);
    assert_ne!(ea.row(3), eb.row(3));

    let mut plain = p.clone();
    plain.ta_pos_emb.as_mut().unwrap().data.fill(0.0);
    let ea = embed_with_targets(&plain, &x, &a).unwrap();
    let eb = embed_with_targets(&plain, &x, &b).unwrap();
    assert_eq!(ea.data[..4 * 8], eb.data[..4 * 8]);
}

#[test]
fn merged_tables_reproduce_raster_logits_exactly() {
    let cfg = ModelConfig::micro(5, 8, 2);
    let p = lively(&cfg, 16);
    let merged = merge_positional(&p);
    assert!(merged.is_merged());
    for seed in 0..10 {
        let x = tokens(8, 5, seed);
        let id = Permutation::identity(8);
        let a = forward_sequence(&p, &x, &id, Some(1)).unwrap();
        let b = forward_sequence(&merged, &x, &id, Some(1)).unwrap();
        assert_eq!(a, b);
    }
    let rev = Permutation::new((0..8).rev().collect()).unwrap();
    assert!(matches!(
        forward_sequence(&merged, &tokens(8, 5, 0), &rev, None),
        Err(Error::MergedNonRaster)
    ));
}

#[test]
fn decay_applies_to_projection_matrices_only() {
    let p = lively(&ModelConfig::micro(3, 4, 1), 0);
    let decayed: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).filter(|n| decays(n)).collect();
    assert_eq!(decayed.len(), 2 * 6 + 1);
    assert!(!decays("tok_emb") && !decays("layers.0.attn.bq") && !decays("final_norm.g"));
}
