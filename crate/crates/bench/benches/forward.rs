use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use regionmask_core::harness::{generate, random_scene, SceneParams};
use regionmask_core::{Backbone, GridSpec, Model, ModelConfig, ReferenceState, RegionMask};

fn toy_model(backbone: Backbone) -> Model {
    let mut cfg = ModelConfig::toy(backbone, 0);
    cfg.grid = GridSpec::from_regions(12, 12, 16).unwrap();
    Model::new(cfg).unwrap()
}

/// First `count` regions in a fixed stride order, so kept regions spread
/// over all windows.
fn spread_mask(grid: GridSpec, count: usize) -> RegionMask {
    let n = grid.num_tokens();
    let mut locs: Vec<usize> = (0..n).map(|i| (i * 7) % n).take(count).collect();
    locs.sort_unstable();
    RegionMask::from_locations(grid, &locs).unwrap()
}

fn forward(c: &mut Criterion) {
    for backbone in [Backbone::Windowed, Backbone::Global] {
        let model = toy_model(backbone);
        let grid = model.config().grid;
        let params = SceneParams::lane_scene(grid.frame_height, grid.frame_width, 2);
        let video = generate(&random_scene(&params, 0).unwrap()).unwrap();
        let (first, next) = (&video.frames[0], &video.frames[1]);

        let mut group = c.benchmark_group(format!("forward_{backbone}"));
        group.bench_function("dense", |b| {
            let mut st = ReferenceState::new(model.config());
            b.iter(|| model.forward_dense(next, &mut st).unwrap())
        });
        for rate in [0.1, 0.3, 0.6] {
            let mask = spread_mask(grid, (rate * grid.num_tokens() as f64) as usize);
            group.bench_with_input(BenchmarkId::new("masked", rate), &mask, |b, mask| {
                let mut st = ReferenceState::new(model.config());
                model.forward_dense(first, &mut st).unwrap();
                b.iter(|| model.forward_masked(next, mask, &mut st).unwrap())
            });
        }
        group.finish();
    }
}

criterion_group!(benches, forward);
criterion_main!(benches);
