use proptest::prelude::*;
use regionmask_core::cost::{
    block_reference_bytes, bytes_to_mb, eventful_block_bytes, eventful_product_bytes, flops_dense,
    flops_masked, macs_dense, macs_masked, memory_eventful, memory_region_mask, token_buffer_bytes,
};
use regionmask_core::{Backbone, GridSpec, ModelConfig};

fn within(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs()
}

/// Per-layer tally from the layer shapes, one matrix product at a time.
fn layer_tally(cfg: &ModelConfig, kept: Option<usize>) -> u64 {
    let n_all = cfg.num_tokens() as u64;
    let n = kept.map_or(n_all, |k| k as u64);
    let (l, f) = (cfg.embed_dim as u64, cfg.ffn_hidden as u64);
    let mut total = n * (cfg.grid.region_size as u64).pow(2) * 3 * l; // patch projection
    for b in 1..=cfg.num_blocks {
        let global = cfg.global_blocks.contains(&b);
        // rows entering the attention sublayer and the FFN
        let (att_rows, ffn_rows) = if global { (n, n) } else { (n_all, n) };
        let q = att_rows * l * l;
        let k = att_rows * l * l;
        let v = att_rows * l * l;
        let keys_per_query = if global {
            att_rows
        } else {
            (cfg.window_side * cfg.window_side) as u64
        };
        let scores = att_rows * keys_per_query * l;
        let mix = att_rows * keys_per_query * l;
        let proj = att_rows * l * l;
        let fc1 = ffn_rows * l * f;
        let fc2 = ffn_rows * f * l;
        total += q + k + v + scores + mix + proj + fc1 + fc2;
    }
    total
}

#[test]
fn dense_vit_b_matches_reported_gmacs() {
    let w = flops_dense(&ModelConfig::vit_b(Backbone::Windowed));
    let g = flops_dense(&ModelConfig::vit_b(Backbone::Global));
    assert!(within(w, 174.93, 0.02), "windowed {w}");
    assert!(within(g, 208.85, 0.02), "global {g}");
}

#[test]
fn masked_vit_b_brackets_reported_gmacs() {
    let cfg = ModelConfig::vit_b(Backbone::Windowed);
    for (kept, want) in [(1005, 110.75), (723, 85.08), (952, 106.18)] {
        let got = flops_masked(&cfg, kept).unwrap();
        assert!(within(got, want, 0.10), "{kept}: {got}");
    }
}

#[test]
fn vit_b_memory_arithmetic() {
    let cfg = ModelConfig::vit_b(Backbone::Windowed);
    assert_eq!(token_buffer_bytes(&cfg), 1764 * 768 * 4);
    assert!(within(bytes_to_mb(token_buffer_bytes(&cfg)), 5.4, 0.03));
    assert!(within(bytes_to_mb(block_reference_bytes(&cfg)), 43.2, 0.03));
    assert!(within(
        bytes_to_mb(eventful_product_bytes(&cfg)),
        155.0,
        0.03
    ));
    assert!(within(bytes_to_mb(eventful_block_bytes(&cfg)), 198.0, 0.03));
    assert!(within(bytes_to_mb(memory_eventful(&cfg)), 2376.0, 0.03));
    assert!(memory_eventful(&cfg) as f64 / memory_region_mask(&cfg) as f64 > 10.0);
}

#[test]
fn vit_b_tally_agrees_with_closed_form() {
    for backbone in [Backbone::Windowed, Backbone::Global] {
        let cfg = ModelConfig::vit_b(backbone);
        assert_eq!(macs_dense(&cfg), layer_tally(&cfg, None));
        for kept in [1, 723, 952, 1005, 1764] {
            assert_eq!(
                macs_masked(&cfg, kept).unwrap(),
                layer_tally(&cfg, Some(kept))
            );
        }
    }
}

fn config_strategy() -> impl Strategy<Value = ModelConfig> {
    (
        1usize..=4,
        1usize..=8,
        1usize..=3,
        1usize..=4,
        1usize..=4,
        1usize..=6,
        any::<bool>(),
        1usize..=4,
    )
        .prop_map(|(heads, hd, w, wr, wc, blocks, global, fm)| {
            let embed = heads * hd;
            ModelConfig::with_backbone(
                if global {
                    Backbone::Global
                } else {
                    Backbone::Windowed
                },
                embed,
                heads,
                blocks,
                w,
                fm * embed,
                GridSpec::from_regions(w * wr, w * wc, 4).unwrap(),
                0,
            )
        })
}

proptest! {
    #[test]
    fn masked_cost_is_increasing_and_meets_dense(cfg in config_strategy()) {
        let n = cfg.num_tokens();
        let mut prev = 0;
        for kept in 1..=n {
            let m = macs_masked(&cfg, kept).unwrap();
            prop_assert!(m > prev);
            prop_assert_eq!(m, layer_tally(&cfg, Some(kept)));
            prev = m;
        }
        prop_assert_eq!(prev, macs_dense(&cfg));
        prop_assert!(macs_masked(&cfg, 0).is_err());
        prop_assert!(macs_masked(&cfg, n + 1).is_err());
    }

    #[test]
    fn region_mask_memory_is_one_buffer_per_windowed_block_plus_output(cfg in config_strategy()) {
        let per = (cfg.num_tokens() * cfg.embed_dim * 4) as u64;
        prop_assert_eq!(memory_region_mask(&cfg), per * (cfg.windowed_block_count() as u64 + 1));
    }
}
