//! Acceptance checks, one PASS/FAIL line each. Exits nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionmask_cli::commands::{cost_table, CostGrid};
use regionmask_cli::RunConfig;
use regionmask_core::cost::{
    block_reference_bytes, bytes_to_mb, eventful_block_bytes, eventful_product_bytes, flops_masked,
    memory_eventful, token_buffer_bytes,
};
use regionmask_core::harness::{
    fit_head, generate, random_scene, run_sequence, run_study, RunOptions, SceneParams,
    StaticPrior, StudyConfig,
};
use regionmask_core::mask::accumulate_heatmap;
use regionmask_core::vit::{gather, scatter, wmsa_block, wmsa_block_masked};
use regionmask_core::{
    BBox, Backbone, Frame, FrameKind, GridSpec, MaskSchedule, Matrix, Model, ModelConfig, OpTrace,
    ReferenceState, RegionMask, TokenSet,
};

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want) / want
}

fn random_frame(grid: &GridSpec, rng: &mut ChaCha8Rng) -> Frame {
    let data = (0..grid.frame_height * grid.frame_width * 3)
        .map(|_| rng.gen())
        .collect();
    Frame::from_raw(grid.frame_height, grid.frame_width, data).unwrap()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect(),
    )
    .unwrap()
}

fn random_mask(grid: GridSpec, p: f64, rng: &mut ChaCha8Rng) -> RegionMask {
    RegionMask::from_cells(
        grid,
        (0..grid.num_tokens()).map(|_| rng.gen_bool(p)).collect(),
    )
    .unwrap()
}

fn vit_b_cost(backbone: Backbone) -> Result<f64, String> {
    let mut cfg = RunConfig::defaults(false);
    cfg.backbone = backbone;
    let rows = cost_table(&cfg, &CostGrid::Tokens(vec![])).map_err(|e| e.to_string())?;
    Ok(rows[0].gmacs)
}

fn flops_reproduction() -> Check {
    let m = ModelConfig::vit_b(Backbone::Windowed);
    ensure(
        m.num_tokens() == 1764
            && (
                m.embed_dim,
                m.num_heads,
                m.num_blocks,
                m.window_side,
                m.ffn_hidden,
            ) == (768, 12, 12, 14, 3072)
            && m.global_blocks.len() == 4
            && m.grid.region_size == 16,
        || format!("unexpected ViT-B geometry {m:?}"),
    )?;
    let w = vit_b_cost(Backbone::Windowed)?;
    let g = vit_b_cost(Backbone::Global)?;
    let (rw, rg) = (rel(w, 174.93), rel(g, 208.85));
    ensure(rw.abs() <= 0.02 && rg.abs() <= 0.02, || {
        format!("windowed {w:.2} ({rw:+.4}), global {g:.2} ({rg:+.4})")
    })?;
    Ok(format!(
        "windowed {w:.2} ({:+.2}%), global {g:.2} ({:+.2}%)",
        100.0 * rw,
        100.0 * rg
    ))
}

fn masked_flops() -> Check {
    let cfg = ModelConfig::vit_b(Backbone::Windowed);
    let mut parts = Vec::new();
    for (kept, want) in [(1005, 110.75), (723, 85.08), (952, 106.18)] {
        let got = flops_masked(&cfg, kept).map_err(|e| e.to_string())?;
        let r = rel(got, want);
        ensure(r.abs() <= 0.10, || {
            format!("{kept} tokens: {got:.2} vs {want} ({r:+.4})")
        })?;
        parts.push(format!("{kept}: {got:.2} ({:+.2}%)", 100.0 * r));
    }
    Ok(parts.join(", "))
}

fn memory_arithmetic() -> Check {
    let cfg = ModelConfig::vit_b(Backbone::Windowed);
    let checks = [
        ("token buffer", token_buffer_bytes(&cfg), 5.4),
        ("block references", block_reference_bytes(&cfg), 43.2),
        ("eventful products", eventful_product_bytes(&cfg), 155.0),
        ("eventful per block", eventful_block_bytes(&cfg), 198.0),
        ("eventful total", memory_eventful(&cfg), 2376.0),
    ];
    let mut parts = Vec::new();
    for (name, bytes, want) in checks {
        let mb = bytes_to_mb(bytes);
        ensure(rel(mb, want).abs() <= 0.03, || {
            format!("{name}: {mb:.2} MB vs {want}")
        })?;
        parts.push(format!("{mb:.1}"));
    }
    Ok(format!("MB: {}", parts.join(" / ")))
}

fn full_keep_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let backbone = if seed % 2 == 0 {
            Backbone::Windowed
        } else {
            Backbone::Global
        };
        let model =
            Model::new(ModelConfig::toy(backbone, 500 + seed)).map_err(|e| e.to_string())?;
        let grid = model.config().grid;
        ensure(
            grid.rows() == 8 && grid.cols() == 8 && model.config().embed_dim == 64,
            || "toy geometry".into(),
        )?;
        let (a, b) = (random_frame(&grid, &mut rng), random_frame(&grid, &mut rng));
        let mut st = ReferenceState::new(model.config());
        model
            .forward_dense(&a, &mut st)
            .map_err(|e| e.to_string())?;
        let masked = model
            .forward_masked(&b, &RegionMask::all(grid), &mut st)
            .map_err(|e| e.to_string())?;
        let dense = model
            .forward_dense(&b, &mut ReferenceState::new(model.config()))
            .map_err(|e| e.to_string())?;
        worst = worst.max(masked.features.max_abs_diff(&dense.features));
    }
    let took = start.elapsed();
    ensure(worst <= 1e-5, || format!("max abs diff {worst:e}"))?;
    ensure(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!(
        "max abs diff {worst:.1e} in {:.2}s",
        took.as_secs_f64()
    ))
}

fn heatmap_cases(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    for case in 0..100 {
        let s = rng.gen_range(1..=16);
        let (rows, cols) = (rng.gen_range(1..=128 / s), rng.gen_range(1..=128 / s));
        let grid = GridSpec::from_regions(rows, cols, s).unwrap();
        let (h, w) = (grid.frame_height, grid.frame_width);
        let frames: Vec<Vec<BBox>> = (0..rng.gen_range(0..=4))
            .map(|_| {
                (0..rng.gen_range(0..=50))
                    .map(|_| {
                        let (x1, y1) = (rng.gen_range(0..w), rng.gen_range(0..h));
                        BBox::new(x1, y1, rng.gen_range(x1 + 1..=w), rng.gen_range(y1 + 1..=h))
                            .unwrap()
                    })
                    .collect()
            })
            .collect();
        let heat = accumulate_heatmap(frames.iter().map(Vec::as_slice), &grid)
            .map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                let want = frames
                    .iter()
                    .flatten()
                    .filter(|b| b.x1 <= x && x < b.x2 && b.y1 <= y && y < b.y2)
                    .count() as u32;
                ensure(heat.get(y, x) == want, || {
                    format!("heatmap case {case} at ({y},{x})")
                })?;
            }
        }
    }
    Ok(())
}

fn masked_block_cases(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    for case in 0..50u64 {
        let cfg = ModelConfig::toy(Backbone::Windowed, 900 + case);
        let model = Model::new(cfg.clone()).unwrap();
        let (n, l) = (cfg.num_tokens(), cfg.embed_dim);
        let reference = random_matrix(n, l, rng);
        let locs = random_mask(cfg.grid, rng.gen_range(0.05..0.95), rng).locations();
        let tokens = TokenSet::new(locs.clone(), random_matrix(locs.len(), l, rng)).unwrap();
        let w = &model.blocks[0];
        let (out, _) = wmsa_block_masked(
            &tokens,
            &reference,
            w,
            &cfg,
            model.windows(),
            &mut OpTrace::default(),
        )
        .map_err(|e| e.to_string())?;
        let full = wmsa_block(
            &scatter(&tokens, &reference).unwrap(),
            w,
            &cfg,
            model.windows(),
            &mut OpTrace::default(),
        )
        .map_err(|e| e.to_string())?;
        let want = gather(&full, &locs).unwrap();
        ensure(out.embeddings().bitwise_eq(want.embeddings()), || {
            format!("masked block case {case}")
        })?;
    }
    Ok(())
}

fn round_trip_cases(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    for case in 0..1000 {
        let (rows, cols) = (rng.gen_range(1..40), rng.gen_range(1..8));
        let base = random_matrix(rows, cols, rng);
        let locs: Vec<usize> = (0..rows).filter(|_| rng.gen_bool(0.5)).collect();
        let identity = scatter(&gather(&base, &locs).unwrap(), &base)
            .unwrap()
            .bitwise_eq(&base);
        let fresh = TokenSet::new(locs.clone(), random_matrix(locs.len(), cols, rng)).unwrap();
        let back = gather(&scatter(&fresh, &base).unwrap(), &locs).unwrap();
        ensure(
            identity && back.embeddings().bitwise_eq(fresh.embeddings()),
            || format!("round trip case {case}"),
        )?;
    }
    Ok(())
}

fn oracle_suites() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    heatmap_cases(&mut rng)?;
    masked_block_cases(&mut rng)?;
    round_trip_cases(&mut rng)?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!(
        "100 heatmap, 50 masked-block, 1000 round-trip cases in {:.2}s",
        took.as_secs_f64()
    ))
}

fn untouched_rows() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut frames = 0;
    for seed in 0..10u64 {
        let backbone = if seed % 3 == 0 {
            Backbone::Global
        } else {
            Backbone::Windowed
        };
        let model = Model::new(ModelConfig::toy(backbone, seed)).unwrap();
        let grid = model.config().grid;
        let mut st = ReferenceState::new(model.config());
        model
            .forward_dense(&random_frame(&grid, &mut rng), &mut st)
            .map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let before = st.reference_output().clone();
            let mask = random_mask(grid, rng.gen_range(0.0..0.9), &mut rng);
            let out = model
                .forward_masked(&random_frame(&grid, &mut rng), &mask, &mut st)
                .map_err(|e| e.to_string())?;
            for (i, &keep) in mask.cells().iter().enumerate() {
                let same = out
                    .features
                    .row(i)
                    .iter()
                    .zip(before.row(i))
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                ensure(keep || same, || format!("seed {seed}: row {i} changed"))?;
            }
            frames += 1;
        }
    }
    Ok(format!("{frames} masked frames"))
}

fn scatter_gather_budget() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = Vec::new();
    for (backbone, blocks) in [
        (Backbone::Windowed, 4),
        (Backbone::Windowed, 12),
        (Backbone::Global, 4),
    ] {
        let mut cfg = ModelConfig::toy(backbone, 1);
        cfg = ModelConfig::with_backbone(
            backbone,
            cfg.embed_dim,
            cfg.num_heads,
            blocks,
            cfg.window_side,
            cfg.ffn_hidden,
            cfg.grid,
            1,
        );
        let model = Model::new(cfg.clone()).unwrap();
        let mut st = ReferenceState::new(&cfg);
        model
            .forward_dense(&random_frame(&cfg.grid, &mut rng), &mut st)
            .map_err(|e| e.to_string())?;
        let w = cfg.windowed_block_count() as u64;
        for p in [0.0, 0.25, 1.0] {
            let mask = random_mask(cfg.grid, p, &mut rng);
            let out = model
                .forward_masked(&random_frame(&cfg.grid, &mut rng), &mask, &mut st)
                .map_err(|e| e.to_string())?;
            let ops = out.trace.scatter_gather_ops();
            ensure(ops == 1 + 2 * w + 1, || {
                format!("{backbone} W={w}: {ops} ops")
            })?;
        }
        seen.push(format!("W={w}: {}", 2 + 2 * w));
    }
    Ok(seen.join(", "))
}

fn detection_proxy() -> Check {
    let start = Instant::now();
    let cfg = StudyConfig::toy_default(Backbone::Windowed, 7);
    let r = run_study(&cfg).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let gap = r.masked_gap();
    let detail = format!(
        "dense {:.3}, combined {:.3} (keep {:.3}), static-only {:.3} (keep {:.3}), dynamic-only {:.3} (keep {:.3}), {} sequences in {:.1}s",
        r.dense.f1,
        r.combined.f1,
        r.combined_keep_rate,
        r.static_only.f1,
        r.static_only_keep_rate,
        r.dynamic_only.f1,
        r.dynamic_only_keep_rate,
        r.sequences.len(),
        took.as_secs_f64()
    );
    ensure(
        r.sequences.len() == 10 && cfg.schedule.period == 8 && cfg.schedule.static_keep_rate == 0.3,
        || "setup".into(),
    )?;
    ensure(gap.abs() <= 0.05, || format!("gap {gap:+.3}: {detail}"))?;
    ensure(
        r.combined.f1 >= r.static_only.f1 && r.combined.f1 >= r.dynamic_only.f1,
        || format!("ordering: {detail}"),
    )?;
    ensure(r.static_only_keep_rate >= r.combined_keep_rate, || {
        format!("keep rates not matched: {detail}")
    })?;
    ensure(took < Duration::from_secs(120), || format!("took {took:?}"))?;
    Ok(detail)
}

fn schedule_correctness() -> Check {
    let model = Model::new(ModelConfig::toy(Backbone::Windowed, 4)).unwrap();
    let grid = model.config().grid;
    let params = SceneParams::lane_scene(grid.frame_height, grid.frame_width, 33);
    let video = generate(&random_scene(&params, 11).unwrap()).unwrap();
    let train = generate(&random_scene(&params, 1011).unwrap())
        .unwrap()
        .annotations;
    let prior = StaticPrior::from_annotations([&train], &grid).unwrap();
    let first = &video.annotations.frames[0];
    let head = fit_head(
        &model,
        &[(&video.frames[0], &first.boxes, &first.classes)],
        3,
        1.0,
    )
    .unwrap();
    let mut counts = Vec::new();
    for period in [1, 4, 8, 16] {
        let mut opts = RunOptions::new(MaskSchedule::new(period, 0.3, 0).unwrap());
        opts.oracle = true;
        let r = run_sequence(&video.frames, &video.boxes(), &prior, &model, &head, &opts)
            .map_err(|e| e.to_string())?;
        for f in &r.frames {
            ensure(
                (f.kind == FrameKind::FullFrame) == (f.index % period == 0),
                || format!("P={period} frame {}", f.index),
            )?;
        }
        if period == 1 {
            let zero = r.frames.iter().all(|f| {
                f.error
                    .is_some_and(|e| e.relative_frobenius == 0.0 && e.selected_max_abs == 0.0)
            });
            ensure(zero, || format!("P=1 error {:?}", r.max_relative_error()))?;
        }
        counts.push(
            r.frames
                .iter()
                .filter(|f| f.kind == FrameKind::FullFrame)
                .count(),
        );
    }
    Ok(format!(
        "full frames over 33 for P=1,4,8,16: {counts:?}; P=1 error 0"
    ))
}

fn regionmask(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_regionmask"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path().to_str().unwrap();
    regionmask(&["gen", "--toy", "--seed-scene", "4", "--out", d])?;
    let run = |name: &str| -> std::result::Result<std::path::PathBuf, String> {
        let out = Path::new(d).join(name);
        regionmask(&[
            "run",
            "--toy",
            "--data",
            d,
            "--oracle",
            "--period",
            "4",
            "--seed-model",
            "3",
            "--out",
            out.to_str().unwrap(),
        ])?;
        Ok(out)
    };
    let (a, b) = (run("a")?, run("b")?);
    let mut sizes = Vec::new();
    for name in ["run.json", "run.csv"] {
        let (x, y) = (
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
        );
        ensure(x == y, || format!("{name} differs"))?;
        sizes.push(format!("{name} {} B", x.len()));
    }
    Ok(format!("identical {}", sizes.join(", ")))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("FLOPs reproduction", flops_reproduction),
        ("masked FLOPs bracketing", masked_flops),
        ("memory arithmetic", memory_arithmetic),
        ("full-keep equivalence", full_keep_equivalence),
        ("oracle equivalence suites", oracle_suites),
        ("untouched-row exactness", untouched_rows),
        ("scatter/gather budget", scatter_gather_budget),
        ("detection-degradation proxy", detection_proxy),
        ("schedule correctness", schedule_correctness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
